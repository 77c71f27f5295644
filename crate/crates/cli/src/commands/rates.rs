use std::path::{Path, PathBuf};

use etbr_core::rates::{cumulative_bits, hypercube_volume, necessary_bits, rate_report, sufficient_bits_inst, write_rates_csv};
use etbr_core::simulator::{read_events_csv, EventRecord, SimStats};
use etbr_core::SimTrace;

use super::{create, csv_err};
use crate::config;
use crate::error::{CliError, Result};
use crate::manifest::RunManifest;

#[derive(Debug, Clone)]
pub struct RatesArgs {
    pub trace_dir: PathBuf,
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub grid: usize,
}

/// Rebuilds the event history of a trace directory.
pub fn load_trace(dir: &Path, manifest: &RunManifest, scenario: etbr_core::Scenario, n: usize) -> Result<SimTrace> {
    let path = dir.join(&manifest.outputs.events);
    let file = std::fs::File::open(&path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let rows = read_events_csv(file).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if rows.len() != manifest.events.len() {
        return Err(CliError::Config(format!(
            "{} lists {} events, the manifest {}",
            path.display(),
            rows.len(),
            manifest.events.len()
        )));
    }
    let events = rows
        .into_iter()
        .zip(&manifest.events)
        .map(|(r, s)| {
            if r.k != s.k {
                return Err(CliError::Config(format!("event index {} in {} does not match the manifest", r.k, path.display())));
            }
            Ok(EventRecord {
                k: r.k,
                t_send: r.tk,
                t_receive: r.rk,
                p: r.pk,
                p_min: s.p_min,
                bits: r.bits,
                cause: r.cause,
                b: s.b,
                eps: s.eps,
                cumulative_bits: r.cumulative_bits,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let stats = SimStats { transmissions: events.len(), ..SimStats::default() };
    Ok(SimTrace { scenario, n, samples: Vec::new(), events, stats })
}

pub fn run(args: &RatesArgs) -> Result<PathBuf> {
    let manifest = RunManifest::read(&args.trace_dir)?;
    let base = config::load(&args.config)?;
    let digest = config::digest(&base);
    if digest != manifest.config_digest {
        return Err(CliError::Config(format!(
            "config digest mismatch: trace was produced from {}, {} has {digest}",
            manifest.config_digest,
            args.config.display()
        )));
    }
    let mut cfg = base;
    manifest.overrides.apply(&mut cfg);
    let r = cfg.resolve()?;
    let consts = r.derive()?;
    let trace = load_trace(&args.trace_dir, &manifest, r.sim.scenario, consts.n)?;
    let de0 = r.sim.de0;
    let horizon = r.sim.horizon;
    let report = rate_report(&trace, &consts, de0, horizon, args.grid).map_err(|e| CliError::Config(e.to_string()))?;
    let out = args.out.clone().unwrap_or_else(|| args.trace_dir.join("rates.csv"));
    write_rates_csv(&report, &consts, trace.scenario, de0, create(&out)?).map_err(csv_err(&out))?;

    println!(
        "necessary asymptotic rate {:.4} bits/s, realized average rate {:.4} bits/s over [0, {horizon}]",
        report.necessary_asymptotic, report.realized_average_rate
    );
    if !report.flags.necessary_applies {
        println!("note: some eigenvalue of A + βI has negative real part; the necessary bound is conservative");
    }
    if trace.scenario.is_instantaneous() && report.flags.zero_disturbance && !trace.events.is_empty() {
        let realized = cumulative_bits(&trace);
        let vol = hypercube_volume(de0, consts.n);
        let outside = trace
            .events
            .iter()
            .filter(|e| {
                let t = e.t_send;
                let got = realized.interpolated_at(t);
                let nec = necessary_bits(t, 0.0, vol, &consts).unwrap_or(f64::NAN);
                let suf = sufficient_bits_inst(t, 0.0, de0, consts.vd0, &consts).unwrap_or(f64::NAN);
                !(nec <= got && got <= suf)
            })
            .count();
        println!(
            "realized bits between necessary and sufficient bounds at {} of {} events",
            trace.events.len() - outside,
            trace.events.len()
        );
    }
    println!("wrote {}", out.display());
    Ok(out)
}
