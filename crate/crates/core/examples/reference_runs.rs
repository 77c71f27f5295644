//! Runs the benchmark scenarios and prints their event statistics.
//!
//! `cargo run --release -p etbr-core --example reference_runs -- [step]`

use std::time::Instant;

use etbr_core::presets::{prepare, BenchRun};
use etbr_core::simulator::run;

fn main() {
    let step: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1e-4);
    for which in BenchRun::ALL {
        let prep = prepare(which, step).expect("benchmark design");
        let start = Instant::now();
        match run(&prep.config, &prep.plant, &prep.consts) {
            Ok(trace) => {
                let st = &trace.stats;
                let bits: Vec<u32> = trace.events.iter().map(|e| e.p).collect();
                println!(
                    "{:<17} n={:>3} mean={:.4} min={:.4} bits={} max V/Vd={:.9} max err/de={:.9} b/b~={:.6} h/h~={:.6} ({:.2?})",
                    which.name(),
                    st.transmissions,
                    st.mean_gap.unwrap_or(f64::NAN),
                    st.min_gap.unwrap_or(f64::NAN),
                    st.total_bits,
                    st.max_perf_ratio,
                    st.max_cert_ratio,
                    st.max_btilde_ratio,
                    st.max_hbar_ratio,
                    start.elapsed()
                );
                println!("    p_k: {bits:?}");
            }
            Err(f) => println!("{:<17} failed: {}", which.name(), f.error),
        }
    }
}
