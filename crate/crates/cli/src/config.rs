//! Declarative run configuration with `plant`, `performance` and `scenario`
//! sections, read from TOML or JSON.

use std::path::Path;

use etbr_core::design::{derive_constants, DesignOptions, LookAhead, PerformanceSpec, PlantSpec};
use etbr_core::linalg::{solve_lyapunov, sym_eig_extrema};
use etbr_core::simulator::{DelayModel, Disturbance, ScenarioConfig};
use etbr_core::{DesignConstants, Matrix, Scenario};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub name: Option<String>,
    pub plant: PlantSection,
    pub performance: PerformanceSection,
    pub scenario: ScenarioSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    /// Identity when omitted.
    #[serde(default)]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub nu: f64,
}

/// `beta` or `beta_factor` (times `λm(Q)/λM(P)`), and `vd0` or `vd0_factor`
/// (times `V(x0)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerformanceSection {
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub beta_factor: Option<f64>,
    #[serde(default)]
    pub vd0: Option<f64>,
    #[serde(default)]
    pub vd0_factor: Option<f64>,
    /// Smallest admissible value when omitted (zero without disturbance).
    #[serde(default)]
    pub v0: Option<f64>,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Absolute `T`; takes precedence over `look_ahead_fraction`.
    #[serde(default)]
    pub look_ahead: Option<f64>,
    #[serde(default = "default_fraction")]
    pub look_ahead_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum DisturbanceSection {
    Zero,
    Sincos {
        nu: f64,
        #[serde(default = "default_omega")]
        omega: f64,
    },
    /// Rows `[t, v1, …, vn]`.
    Table { knots: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub kind: Scenario,
    pub pbar: u32,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_step")]
    pub step: f64,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub xhat0: Option<Vec<f64>>,
    /// Absolute `d_e(0)`; otherwise `de0_factor·‖x0 − x̂0‖∞`.
    #[serde(default)]
    pub de0: Option<f64>,
    #[serde(default = "default_de0_factor")]
    pub de0_factor: f64,
    /// Design value `T_M`, required for delayed channels.
    #[serde(default)]
    pub max_delay: Option<f64>,
    /// Defaults to zero delay, or `Δ ≡ T_M` for delayed channels.
    #[serde(default)]
    pub channel: Option<DelayModel<f64>>,
    #[serde(default)]
    pub disturbance: Option<DisturbanceSection>,
    /// Defaults to one sample per 0.01 s.
    #[serde(default)]
    pub record_every: Option<usize>,
    /// `[k, p_k]` pairs, 1-based.
    #[serde(default)]
    pub pk_overrides: Vec<(usize, u32)>,
}

fn default_margin() -> f64 {
    1.2
}
fn default_sigma() -> f64 {
    0.9
}
fn default_fraction() -> f64 {
    0.5
}
fn default_omega() -> f64 {
    0.5
}
fn default_horizon() -> f64 {
    40.0
}
fn default_step() -> f64 {
    1e-4
}
fn default_de0_factor() -> f64 {
    2.0
}

/// Command-line replacements for scenario fields, recorded in manifests.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pbar: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pk_overrides: Option<Vec<(usize, u32)>>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut Config) {
        let s = &mut cfg.scenario;
        if let Some(v) = self.scenario {
            s.kind = v;
        }
        if let Some(v) = self.pbar {
            s.pbar = v;
        }
        if let Some(v) = self.horizon {
            s.horizon = v;
        }
        if let Some(v) = self.step {
            s.step = v;
        }
        if let Some(v) = &self.pk_overrides {
            s.pk_overrides = v.clone();
        }
    }
}

/// Everything a run needs, built from a [`Config`].
#[derive(Debug, Clone)]
pub struct Resolved {
    pub plant: PlantSpec<f64>,
    pub perf: PerformanceSpec<f64>,
    pub opts: DesignOptions<f64>,
    pub sim: ScenarioConfig<f64>,
}

impl Resolved {
    pub fn derive(&self) -> Result<DesignConstants> {
        derive_constants(&self.plant, &self.perf, &self.opts).map_err(|e| CliError::Config(e.to_string()))
    }
}

pub fn parse(text: &str, format: Format) -> Result<Config> {
    let res = match format {
        Format::Toml => toml::from_str(text).map_err(|e| e.to_string()),
        Format::Json => serde_json::from_str(text).map_err(|e| e.to_string()),
    };
    res.map_err(|e| CliError::Config(format!("config parse error: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Toml,
    Json,
}

impl Format {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Ok(Format::Toml),
            Some("json") => Ok(Format::Json),
            _ => Err(CliError::Config(format!("{}: config must end in .toml or .json", path.display()))),
        }
    }
}

pub fn load(path: &Path) -> Result<Config> {
    let format = Format::from_path(path)?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse(&text, format).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// SHA-256 of the canonical JSON form, so TOML and JSON spellings of the same
/// config share a digest.
pub fn digest(cfg: &Config) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<Matrix> {
    Matrix::from_rows(rows).map_err(|e| CliError::Config(format!("plant.{name}: {e}")))
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl Config {
    pub fn resolve(&self) -> Result<Resolved> {
        let pl = &self.plant;
        let a = matrix("a", &pl.a)?;
        let b = matrix("b", &pl.b)?;
        let k = matrix("k", &pl.k)?;
        let q = match &pl.q {
            Some(q) => matrix("q", q)?,
            None => Matrix::identity(a.rows()),
        };
        let plant = PlantSpec::new(a, b, k, q, pl.nu).map_err(|e| bad(format!("plant: {e}")))?;
        let n = plant.dim();
        let p = solve_lyapunov(plant.abar(), plant.q()).map_err(|e| bad(format!("plant: {e}")))?;

        let sc = &self.scenario;
        if sc.x0.len() != n {
            return Err(bad(format!("scenario.x0 has {} entries, plant dimension is {n}", sc.x0.len())));
        }
        let xhat0 = sc.xhat0.clone().unwrap_or_else(|| vec![0.0; n]);
        if xhat0.len() != n {
            return Err(bad(format!("scenario.xhat0 has {} entries, plant dimension is {n}", xhat0.len())));
        }

        let pf = &self.performance;
        let beta = match (pf.beta, pf.beta_factor) {
            (Some(b), None) => b,
            (None, Some(f)) => {
                let (_, lmax_p) = sym_eig_extrema(&p).map_err(|e| bad(e.to_string()))?;
                let (lmin_q, _) = sym_eig_extrema(plant.q()).map_err(|e| bad(e.to_string()))?;
                f * lmin_q / lmax_p
            }
            _ => return Err(bad("performance: give exactly one of `beta` and `beta_factor`")),
        };
        let vd0 = match (pf.vd0, pf.vd0_factor) {
            (Some(v), None) => v,
            (None, Some(f)) => f * p.quad_form(&sc.x0),
            _ => return Err(bad("performance: give exactly one of `vd0` and `vd0_factor`")),
        };
        let mut perf = PerformanceSpec::new(vd0, beta).with_margin(pf.margin).with_sigma(pf.sigma);
        match pf.v0 {
            Some(v) => perf = perf.with_v0(v),
            None if pl.nu == 0.0 => perf = perf.with_v0(0.0),
            None => {}
        }

        let look_ahead = match pf.look_ahead {
            Some(t) => LookAhead::Absolute(t),
            None => LookAhead::Gamma11Fraction(pf.look_ahead_fraction),
        };
        let mut opts = DesignOptions::new(sc.pbar).with_look_ahead(look_ahead);
        let delayed = sc.kind == Scenario::NonInstBounded;
        if let Some(tm) = sc.max_delay {
            if delayed {
                opts = opts.with_max_delay(tm);
            }
        } else if delayed {
            return Err(bad("scenario.max_delay is required for non_inst_bounded"));
        }

        let de0 = match sc.de0 {
            Some(d) => d,
            None => {
                let err = sc.x0.iter().zip(&xhat0).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                sc.de0_factor * err
            }
        };
        let mut sim = ScenarioConfig::new(sc.kind, sc.x0.clone(), de0).with_step(sc.step).with_horizon(sc.horizon);
        sim.xhat0 = xhat0;
        sim.channel = match (&sc.channel, delayed) {
            (Some(c), _) => *c,
            (None, true) => DelayModel::Constant { delay: sc.max_delay.unwrap_or_default() },
            (None, false) => DelayModel::Zero,
        };
        sim.disturbance = match &sc.disturbance {
            None | Some(DisturbanceSection::Zero) => Disturbance::Zero,
            Some(DisturbanceSection::Sincos { nu, omega }) => Disturbance::SinCos { nu: *nu, omega: *omega },
            Some(DisturbanceSection::Table { knots }) => {
                let knots = knots
                    .iter()
                    .map(|row| match row.split_first() {
                        Some((&t, v)) if v.len() == n => Ok((t, v.to_vec())),
                        _ => Err(bad(format!("scenario.disturbance.knots rows need 1 + {n} entries"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Disturbance::table(knots, pl.nu).map_err(|e| bad(format!("scenario.disturbance: {e}")))?
            }
        };
        sim.record_every = match sc.record_every {
            Some(r) => r,
            None => ((0.01 / sc.step).round() as usize).max(1),
        };
        sim.pk_overrides = sc.pk_overrides.iter().copied().collect();
        Ok(Resolved { plant, perf, opts, sim })
    }
}
