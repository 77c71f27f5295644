use std::path::Path;

use etbr_core::{DesignConstants, Matrix};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::Overrides;
use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SAMPLES_FILE: &str = "samples.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const FAILED_SUFFIX: &str = ".failed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outputs {
    pub samples: String,
    pub events: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub transmissions: usize,
    pub mean_gap: Option<f64>,
    pub min_gap: Option<f64>,
    pub total_bits: u64,
}

/// Trigger state at each transmission, which the events CSV does not carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventState {
    pub k: usize,
    pub b: f64,
    pub eps: f64,
    pub p_min: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub library_version: String,
    pub config_path: String,
    #[serde(default)]
    pub overrides: Overrides,
    /// `"complete"` or `"failed: <reason>"`.
    pub status: String,
    pub constants: Value,
    /// File names relative to the manifest's directory.
    pub outputs: Outputs,
    pub summary: Summary,
    pub events: Vec<EventState>,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

fn matrix_json(m: &Matrix) -> Value {
    json!(m.to_rows())
}

/// Every derived constant, keyed by name.
pub fn constants_json(c: &DesignConstants) -> Value {
    json!({
        "n": c.n,
        "A": matrix_json(&c.a),
        "P": matrix_json(&c.p),
        "lambda_min_P": c.lambda_min_p,
        "lambda_max_P": c.lambda_max_p,
        "lambda_min_Q": c.lambda_min_q,
        "norm_P": c.norm_p,
        "norm_A": c.norm_a,
        "norm_A_inf": c.norm_a_inf,
        "nu": c.nu,
        "beta": c.beta,
        "Vd0": c.vd0,
        "V0": c.v0,
        "W": c.decay_margin,
        "w": c.decay_excess,
        "theta": c.growth_rate,
        "theta_bar": c.growth_rate_inf,
        "c": c.eps_scale,
        "c1": c.dist_offset,
        "c2": c.dist_growth,
        "k2": c.dist_gain,
        "alpha_gain": c.alpha_gain,
        "c3": c.rho_slope,
        "T": c.look_ahead,
        "Gamma1_11": c.gamma11,
        "T_star": c.t_star,
        "T_M": c.max_delay,
        "delay_bound": c.delay_bound(),
        "pbar": c.pbar,
        "exp_A_TM_inf": c.exp_a_tm_inf,
    })
}
