use std::path::{Path, PathBuf};

use clap::ValueEnum;
use etbr_core::rates::{cumulative_bits, hypercube_volume, necessary_bits, sufficient_bits_inst};
use etbr_core::{simulator, DesignConstants, SimTrace};

use super::{create, csv_err};
use crate::config::{self, Format, Resolved};
use crate::error::{CliError, Result};

/// The bundled configs, by name.
pub const BUNDLED: [(&str, &str); 5] = [
    ("inst_p12", include_str!("../../../../configs/inst_p12.toml")),
    ("inst_p20", include_str!("../../../../configs/inst_p20.toml")),
    ("noninst_dist_p20", include_str!("../../../../configs/noninst_dist_p20.toml")),
    ("sim1", include_str!("../../../../configs/sim1.toml")),
    ("sim2", include_str!("../../../../configs/sim2.toml")),
];

/// Points of the uniform grid used for cumulative-bit series.
const GRID: usize = 401;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    /// V and V_d, instantaneous channel, p̄ = 12.
    Fig1a,
    /// V and V_d, instantaneous channel, p̄ = 20.
    Fig1b,
    /// Bits per transmission, instantaneous channel, p̄ = 20.
    Fig2a,
    /// Cumulative bits for p̄ = 12 and 20 with necessary and sufficient bounds.
    Fig2b,
    /// V and V_d, delayed channel with disturbance.
    Fig3,
    /// Inter-transmission times, delayed channel with disturbance.
    Fig4,
    /// Bits per transmission and cumulative bits, delayed channel with disturbance.
    Fig5,
    /// Bits per transmission of Sim2, and the Sim1/Sim2 comparison.
    Fig6,
    /// Sim1/Sim2 cumulative-bit comparison.
    Fig6b,
}

impl Figure {
    pub fn id(self) -> String {
        self.to_possible_value().expect("no skipped variants").get_name().to_string()
    }
}

pub fn bundled_config(name: &str) -> Result<config::Config> {
    let text = BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| CliError::Usage(format!("no bundled config named {name}")))?;
    config::parse(text, Format::Toml)
}

struct Run {
    resolved: Resolved,
    consts: DesignConstants,
    trace: SimTrace,
}

fn simulate(name: &str, step: Option<f64>) -> Result<Run> {
    let mut cfg = bundled_config(name)?;
    if let Some(h) = step {
        cfg.scenario.step = h;
        cfg.scenario.record_every = None;
    }
    let resolved = cfg.resolve()?;
    let consts = resolved.derive()?;
    let trace = simulator::run(&resolved.sim, &resolved.plant, &consts)
        .map_err(|f| CliError::Breach(format!("{name}: {}", f.error)))?;
    Ok(Run { resolved, consts, trace })
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(&r).map_err(csv_err(path))?;
    }
    w.flush().map_err(CliError::io(format!("cannot write {}", path.display())))
}

fn lyapunov_series(path: &Path, run: &Run) -> Result<()> {
    let rows = run.trace.samples.iter().map(|s| vec![num(s.t), num(s.v), num(s.vd)]);
    write_rows(path, &["t", "V", "Vd"], rows)
}

fn bit_profile(path: &Path, run: &Run) -> Result<()> {
    let rows = run.trace.events.iter().map(|e| {
        vec![e.k.to_string(), num(e.t_send), e.p.to_string(), e.bits.to_string(), e.cumulative_bits.to_string()]
    });
    write_rows(path, &["k", "tk", "pk", "bits", "cumulative_bits"], rows)
}

fn grid(horizon: f64) -> impl Iterator<Item = f64> {
    (0..GRID).map(move |i| horizon * i as f64 / (GRID - 1) as f64)
}

fn instantaneous_rates(path: &Path, runs: &[&Run]) -> Result<()> {
    let first = runs[0];
    let de0 = first.resolved.sim.de0;
    let vol = hypercube_volume(de0, first.consts.n);
    let cumulative: Vec<_> = runs.iter().map(|r| cumulative_bits(&r.trace)).collect();
    let rows = grid(first.resolved.sim.horizon).map(|t| {
        let mut row = vec![num(t), num(necessary_bits(t, 0.0, vol, &first.consts).unwrap_or(f64::NAN))];
        row.extend(cumulative.iter().map(|c| num(c.interpolated_at(t))));
        for r in runs {
            let s = sufficient_bits_inst(t, 0.0, r.resolved.sim.de0, r.consts.vd0, &r.consts);
            row.push(s.map(num).unwrap_or_default());
        }
        row
    });
    write_rows(path, &["t", "necessary", "realized_p12", "realized_p20", "sufficient_p12", "sufficient_p20"], rows)
}

fn comparison(path: &Path, a: &Run, b: &Run) -> Result<()> {
    let (ca, cb) = (cumulative_bits(&a.trace), cumulative_bits(&b.trace));
    let rows = grid(a.resolved.sim.horizon).map(|t| {
        vec![
            num(t),
            num(ca.interpolated_at(t)),
            num(cb.interpolated_at(t)),
            ca.step_at(t).to_string(),
            cb.step_at(t).to_string(),
        ]
    });
    write_rows(path, &["t", "sim1_interp", "sim2_interp", "sim1_step", "sim2_step"], rows)
}

/// Writes the data behind `fig` into `out/<fig>/` and returns the files.
pub fn run(fig: Figure, out: &Path, step: Option<f64>) -> Result<Vec<PathBuf>> {
    let dir = out.join(fig.id());
    std::fs::create_dir_all(&dir).map_err(CliError::io(format!("cannot create {}", dir.display())))?;
    let file = |name: &str| dir.join(format!("{}_{name}.csv", fig.id()));
    let mut written = Vec::new();
    let mut emit = |path: PathBuf, res: Result<()>| -> Result<()> {
        res?;
        written.push(path);
        Ok(())
    };
    match fig {
        Figure::Fig1a => {
            let r = simulate("inst_p12", step)?;
            emit(file("v"), lyapunov_series(&file("v"), &r))?;
        }
        Figure::Fig1b => {
            let r = simulate("inst_p20", step)?;
            emit(file("v"), lyapunov_series(&file("v"), &r))?;
        }
        Figure::Fig2a => {
            let r = simulate("inst_p20", step)?;
            emit(file("bits"), bit_profile(&file("bits"), &r))?;
        }
        Figure::Fig2b => {
            let a = simulate("inst_p12", step)?;
            let b = simulate("inst_p20", step)?;
            emit(file("rates"), instantaneous_rates(&file("rates"), &[&a, &b]))?;
        }
        Figure::Fig3 => {
            let r = simulate("noninst_dist_p20", step)?;
            emit(file("v"), lyapunov_series(&file("v"), &r))?;
        }
        Figure::Fig4 => {
            let r = simulate("noninst_dist_p20", step)?;
            let rows = r.trace.events.windows(2).map(|w| {
                vec![w[1].k.to_string(), num(w[1].t_send), num(w[1].t_send - w[0].t_send)]
            });
            emit(file("gaps"), write_rows(&file("gaps"), &["k", "tk", "gap"], rows))?;
        }
        Figure::Fig5 => {
            let r = simulate("noninst_dist_p20", step)?;
            emit(file("bits"), bit_profile(&file("bits"), &r))?;
            let c = cumulative_bits(&r.trace);
            let rows = grid(r.resolved.sim.horizon).map(|t| vec![num(t), num(c.interpolated_at(t))]);
            emit(file("cumulative"), write_rows(&file("cumulative"), &["t", "realized_interp"], rows))?;
        }
        Figure::Fig6 | Figure::Fig6b => {
            let a = simulate("sim1", step)?;
            let b = simulate("sim2", step)?;
            if fig == Figure::Fig6 {
                emit(file("sim2_bits"), bit_profile(&file("sim2_bits"), &b))?;
            }
            emit(file("cumulative"), comparison(&file("cumulative"), &a, &b))?;
        }
    }
    for p in &written {
        println!("wrote {}", p.display());
    }
    Ok(written)
}
