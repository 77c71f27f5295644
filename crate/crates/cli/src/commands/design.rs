use std::path::Path;

use etbr_core::design::validate_assumptions;
use serde_json::json;

use crate::config;
use crate::error::{CliError, Result};
use crate::manifest::constants_json;

/// Prints the derived constants and the assumption table. Fails when any
/// assumption fails or derivation is impossible.
pub fn run(path: &Path, as_json: bool) -> Result<()> {
    let cfg = config::load(path)?;
    let r = cfg.resolve()?;
    let derived = r.derive();
    let consts = derived.as_ref().ok();
    let report = validate_assumptions(&r.plant, &r.perf, consts);

    if as_json {
        let value = json!({
            "config_digest": config::digest(&cfg),
            "constants": consts.map(constants_json),
            "derivation_error": derived.as_ref().err().map(|e| e.to_string()),
            "assumptions": &report,
            "passed": derived.is_ok() && report.all_passed(),
        });
        println!("{}", serde_json::to_string_pretty(&value).expect("json"));
    } else {
        if let Some(c) = consts {
            let rows = c.p.to_rows();
            println!("P =");
            for row in rows {
                println!("  [{}]", row.iter().map(|v| format!("{v:>10.6}")).collect::<Vec<_>>().join(" "));
            }
            let lines = [
                ("β", c.beta),
                ("V_d(0)", c.vd0),
                ("V0", c.v0),
                ("W", c.decay_margin),
                ("w", c.decay_excess),
                ("θ", c.growth_rate),
                ("θ̄", c.growth_rate_inf),
                ("c", c.eps_scale),
                ("c1", c.dist_offset),
                ("c2", c.dist_growth),
                ("c3", c.rho_slope),
                ("Γ1(1,1)", c.gamma11),
                ("T", c.look_ahead),
                ("T*", c.t_star),
                ("T_M", c.max_delay),
            ];
            for (name, v) in lines {
                println!("{name:<8} = {v:.6e}");
            }
            println!("Γ1(1,1) = {:.4}", c.gamma11);
            println!("p̄ = {}", c.pbar);
        }
        if let Err(e) = &derived {
            println!("derivation failed: {e}");
        }
        println!();
        print!("{report}");
    }

    if let Err(e) = derived {
        return Err(CliError::Config(e.to_string()));
    }
    let failed: Vec<String> = report
        .failures()
        .map(|c| if c.detail.is_empty() { c.condition.to_string() } else { format!("{} ({})", c.condition, c.detail) })
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Config(format!("assumption failed: {}", failed.join("; "))))
    }
}
