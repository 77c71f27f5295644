use std::path::{Path, PathBuf};

use etbr_core::simulator::{self, write_events_csv, write_samples_csv, SimError};
use etbr_core::{Scenario, SimTrace};
use serde::Deserialize;

use super::{create, csv_err, fmt_opt, write_json};
use crate::config::{self, Overrides};
use crate::error::{CliError, Result};
use crate::manifest::{
    constants_json, EventState, Outputs, RunManifest, Summary, EVENTS_FILE, FAILED_SUFFIX, MANIFEST_FILE, SAMPLES_FILE,
};

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub config: PathBuf,
    pub scenario: Option<Scenario>,
    pub pbar: Option<u32>,
    pub horizon: Option<f64>,
    pub step: Option<f64>,
    pub out: PathBuf,
    pub pk_override: Option<PathBuf>,
}

#[derive(Deserialize)]
struct OverrideRow {
    k: usize,
    pk: u32,
}

/// Reads a CSV with header `k,pk`.
pub fn read_pk_overrides(path: &Path) -> Result<Vec<(usize, u32)>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| CliError::Config(format!("cannot read p_k overrides {}: {e}", path.display())))?;
    r.deserialize::<OverrideRow>()
        .map(|row| {
            row.map(|r| (r.k, r.pk)).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        })
        .collect()
}

pub fn summary(trace: &SimTrace) -> Summary {
    let st = &trace.stats;
    Summary { transmissions: st.transmissions, mean_gap: st.mean_gap, min_gap: st.min_gap, total_bits: st.total_bits }
}

pub fn summary_line(s: &Summary) -> String {
    format!(
        "{} transmission{}, mean inter-transmission {}, min inter-transmission {}, {} bits total",
        s.transmissions,
        if s.transmissions == 1 { "" } else { "s" },
        fmt_opt(s.mean_gap),
        fmt_opt(s.min_gap),
        s.total_bits
    )
}

fn is_breach(e: &SimError) -> bool {
    !matches!(e, SimError::Config(_) | SimError::InitialCondition(_) | SimError::DelayBound { .. })
}

fn write_trace(dir: &Path, trace: &SimTrace, suffix: &str) -> Result<Outputs> {
    let samples = format!("{SAMPLES_FILE}{suffix}");
    let events = format!("{EVENTS_FILE}{suffix}");
    let sp = dir.join(&samples);
    write_samples_csv(trace, create(&sp)?).map_err(csv_err(&sp))?;
    let ep = dir.join(&events);
    write_events_csv(trace, create(&ep)?).map_err(csv_err(&ep))?;
    Ok(Outputs { samples, events })
}

fn remove_outputs(dir: &Path, suffix: &str) {
    for f in [SAMPLES_FILE, EVENTS_FILE, MANIFEST_FILE] {
        let _ = std::fs::remove_file(dir.join(format!("{f}{suffix}")));
    }
}

/// Runs one simulation and writes samples, events and manifest into `args.out`.
pub fn run(args: &SimulateArgs) -> Result<Summary> {
    let base = config::load(&args.config)?;
    let overrides = Overrides {
        scenario: args.scenario,
        pbar: args.pbar,
        horizon: args.horizon,
        step: args.step,
        pk_overrides: args.pk_override.as_deref().map(read_pk_overrides).transpose()?,
    };
    let mut cfg = base.clone();
    overrides.apply(&mut cfg);
    let r = cfg.resolve()?;
    let consts = r.derive()?;
    std::fs::create_dir_all(&args.out).map_err(CliError::io(format!("cannot create {}", args.out.display())))?;

    let (trace, failure) = match simulator::run(&r.sim, &r.plant, &consts) {
        Ok(t) => (t, None),
        Err(f) => match f.trace {
            Some(t) if is_breach(&f.error) => (t, Some(f.error)),
            _ => return Err(CliError::Config(f.error.to_string())),
        },
    };
    let suffix = if failure.is_some() { FAILED_SUFFIX } else { "" };
    remove_outputs(&args.out, if failure.is_some() { "" } else { FAILED_SUFFIX });
    let outputs = write_trace(&args.out, &trace, suffix)?;
    let summary = summary(&trace);
    let manifest = RunManifest {
        config_digest: config::digest(&base),
        library_version: etbr_core::VERSION.to_string(),
        config_path: args.config.display().to_string(),
        overrides,
        status: failure.as_ref().map_or_else(|| "complete".to_string(), |e| format!("failed: {e}")),
        constants: constants_json(&consts),
        outputs,
        summary: summary.clone(),
        events: trace.events.iter().map(|e| EventState { k: e.k, b: e.b, eps: e.eps, p_min: e.p_min }).collect(),
    };
    write_json(&args.out.join(format!("{MANIFEST_FILE}{suffix}")), &manifest)?;
    println!("{}", summary_line(&summary));
    match failure {
        None => Ok(summary),
        Some(e) => Err(CliError::Breach(format!(
            "invariant breach: {e}; partial trace kept in {} with suffix {FAILED_SUFFIX}",
            args.out.display()
        ))),
    }
}
