//! Grid checks shared by the analytic tests and the acceptance harness.
#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord)]

use etbr_core::codec::{dequantize, quantize};
use etbr_core::linalg::{vec_inf_norm, vec_sub};
use etbr_core::trigger::{btilde, gamma1, gamma2_tilde, hbar_ch, phi_family, rho};
use etbr_core::DesignConstants;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Crossing times within this distance of the probe time are not judged.
pub const CROSSING_TOL: f64 = 1e-8;

#[derive(Debug, Default)]
pub struct GridResult {
    pub checked: usize,
    pub failures: usize,
    pub first_failure: Option<String>,
}

impl GridResult {
    fn record(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        self.checked += 1;
        if !ok {
            self.failures += 1;
            if self.first_failure.is_none() {
                self.first_failure = Some(detail());
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checked > 0
    }

    pub fn merge(mut self, other: GridResult) -> GridResult {
        self.checked += other.checked;
        self.failures += other.failures;
        self.first_failure = self.first_failure.or(other.first_failure);
        self
    }
}

fn horizon(c: &DesignConstants) -> f64 {
    c.gamma11.min(c.look_ahead)
}

/// `Γ₁(b0, ε0) > T°  ⟺  b̃(T°, b0, ε0) < 1` for `b0 ∈ [0, 1]`.
pub fn gamma1_sign_grid(c: &DesignConstants, points: usize, seed: u64) -> GridResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GridResult::default();
    let span = 4.0 * horizon(c);
    for _ in 0..points {
        let b0 = rng.gen_range(0.0..=1.0);
        let e0 = rng.gen_range(0.0..4.0);
        let t0 = rng.gen_range(1e-6..span);
        let g = gamma1(b0, e0, c);
        let bt = btilde(t0, b0, e0, c);
        let ok = (g - t0).abs() <= CROSSING_TOL || (g > t0) == (bt < 1.0);
        out.record(ok, || format!("b0={b0} e0={e0} T={t0}: Γ1={g} b̃={bt}"));
    }
    out
}

/// `Γ̃₂(b0, ε0, ψ0) > T°  ⟺  h̄_ch(T°, b0, ε0, ψ0) < 1`.
pub fn gamma2_sign_grid(c: &DesignConstants, points: usize, seed: u64) -> GridResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GridResult::default();
    let span = 2.0 * horizon(c);
    for _ in 0..points {
        let b0 = rng.gen_range(0.0..=1.0);
        let e0 = rng.gen_range(0.0..2.0) * rho(b0, c);
        // ψ0 spread over several decades so both signs occur
        let psi0 = e0 * 2f64.powf(-rng.gen_range(0.0..24.0));
        let t0 = rng.gen_range(1e-6..span);
        let g = gamma2_tilde(b0, e0, psi0, c);
        let h = hbar_ch(t0, b0, e0, psi0, c);
        let ok = (g - t0).abs() <= CROSSING_TOL || (g > t0) == (h < 1.0);
        out.record(ok, || format!("b0={b0} e0={e0} ψ0={psi0} T={t0}: Γ̃2={g} h̄={h}"));
    }
    out
}

/// `h̄_ch(τ, b0, ε0, ψ0) ≤ φ(τ, ψ0/ρ_T(b0))` for `ε0 ≤ ρ_T(b0)`,
/// `τ ≤ min{Γ11, T}`.
pub fn phi_upper_bound_grid(c: &DesignConstants, points: usize, seed: u64) -> GridResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GridResult::default();
    for _ in 0..points {
        let b0 = rng.gen_range(0.0..=1.0);
        let r = rho(b0, c);
        let e0 = rng.gen_range(0.0..=1.0) * r;
        let psi0 = rng.gen_range(0.0..=1.0) * e0;
        let tau = rng.gen_range(0.0..=1.0) * horizon(c);
        let h = hbar_ch(tau, b0, e0, psi0, c);
        let p = phi_family(tau, psi0 / r, c).phi;
        let ok = h <= p * (1.0 + 1e-12) + 1e-15;
        out.record(ok, || format!("b0={b0} e0={e0} ψ0={psi0} τ={tau}: h̄={h} φ={p}"));
    }
    out
}

/// `Γ₁(b0, ε0) ≥ Γ₁(b1, ε1)` whenever `b1 ≥ b0`, `ε1 ≥ ε0`.
pub fn gamma1_monotone_grid(c: &DesignConstants, points: usize, seed: u64) -> GridResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GridResult::default();
    for _ in 0..points {
        let b0 = rng.gen_range(0.0..=1.0);
        let b1 = rng.gen_range(b0..=1.0);
        let e0 = rng.gen_range(0.0..3.0);
        let e1 = e0 + rng.gen_range(0.0..3.0);
        let g0 = gamma1(b0, e0, c);
        let g1 = gamma1(b1, e1, c);
        let ok = g0 >= g1 - CROSSING_TOL;
        out.record(ok, || format!("({b0},{e0})→{g0} vs ({b1},{e1})→{g1}"));
    }
    out
}

/// `ε0 ≤ ρ_T(b0)` implies `Γ₁(b0, ε0) ≥ min{Γ₁(1,1), T}`.
pub fn rho_guarantee_grid(c: &DesignConstants, points: usize, seed: u64) -> GridResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GridResult::default();
    let floor = horizon(c);
    for _ in 0..points {
        let b0 = rng.gen_range(0.0..=1.0);
        let e0 = rng.gen_range(0.0..=1.0) * rho(b0, c);
        let g = gamma1(b0, e0, c);
        out.record(g >= floor - CROSSING_TOL, || format!("b0={b0} e0={e0}: Γ1={g} < {floor}"));
    }
    out
}

/// `ψ0 = ε0/2^{p̄}`, `ε0 ≤ ρ_T(b0)` implies `Γ̃₂ ≥ min{Γ11, T, T*}`.
pub fn gamma2_floor_grid(c: &DesignConstants, points: usize, seed: u64) -> GridResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GridResult::default();
    let floor = c.delay_bound();
    let scale = 2f64.powi(-(c.pbar as i32));
    for _ in 0..points {
        let b0 = rng.gen_range(0.0..=1.0);
        let e0 = rng.gen_range(0.0..=1.0) * rho(b0, c);
        let g = gamma2_tilde(b0, e0, e0 * scale, c);
        out.record(g >= floor - CROSSING_TOL, || format!("b0={b0} e0={e0}: Γ̃2={g} < {floor}"));
    }
    out
}

/// `b̃` nondecreasing in `b0` and `ε0` at fixed `τ`.
pub fn btilde_monotone_grid(c: &DesignConstants, points: usize, seed: u64) -> GridResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GridResult::default();
    for _ in 0..points {
        let tau = rng.gen_range(0.0..3.0) * c.gamma11;
        let b0 = rng.gen_range(0.0..=1.0);
        let b1 = rng.gen_range(b0..=1.0);
        let e0 = rng.gen_range(0.0..3.0);
        let e1 = e0 + rng.gen_range(0.0..3.0);
        let lo = btilde(tau, b0, e0, c);
        let hi = btilde(tau, b1, e1, c);
        out.record(lo <= hi * (1.0 + 1e-14) + 1e-300, || format!("τ={tau}: {lo} > {hi}"));
    }
    out
}

/// `‖x − dequantize(quantize(x))‖∞ ≤ d_e/2^p` for random cases.
pub fn codec_round_trip_grid(points: usize, seed: u64) -> GridResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GridResult::default();
    for _ in 0..points {
        let n = rng.gen_range(1..=4);
        let p = rng.gen_range(1..=8);
        let de = 10f64.powf(rng.gen_range(-3.0..3.0));
        let xhat: Vec<f64> = (0..n).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let x: Vec<f64> = xhat.iter().map(|&c| c + rng.gen_range(-1.0..=1.0) * de).collect();
        let idx = quantize(&x, &xhat, de, p).unwrap();
        let z = dequantize(idx, &xhat, de, p).unwrap();
        let err = vec_inf_norm(&vec_sub(&x, &z));
        let bound = de / 2f64.powi(p as i32);
        out.record(err <= bound * (1.0 + 1e-12), || format!("n={n} p={p} de={de}: {err} > {bound}"));
    }
    out
}

/// Largest relative gap between RK4 on the comparison ODE and the closed form
/// over `[0, 2Γ11]`.
pub fn btilde_ode_error(c: &DesignConstants, b0: f64, e0: f64, steps: usize) -> f64 {
    use etbr_core::trigger::btilde_rate;
    let end = 2.0 * c.gamma11;
    let h = end / steps as f64;
    let f = |t: f64, b: f64| btilde_rate(t, b, e0, c);
    let (mut b, mut t, mut worst) = (b0, 0.0, 0.0f64);
    for _ in 0..steps {
        let k1 = f(t, b);
        let k2 = f(t + h / 2.0, b + h / 2.0 * k1);
        let k3 = f(t + h / 2.0, b + h / 2.0 * k2);
        let k4 = f(t + h, b + h * k3);
        b += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        t += h;
        let exact = btilde(t, b0, e0, c);
        worst = worst.max((b - exact).abs() / exact.abs().max(1.0));
    }
    worst
}

/// Every trajectory-level invariant of a completed run; returns the violations.
pub fn trace_violations(trace: &etbr_core::SimTrace, c: &DesignConstants) -> Vec<String> {
    use etbr_core::simulator::PERF_TOL;
    use etbr_core::Scenario;
    let mut out = Vec::new();
    let st = &trace.stats;
    if st.max_perf_ratio > 1.0 + PERF_TOL {
        out.push(format!("V/V_d reached {}", st.max_perf_ratio));
    }
    if st.max_cert_ratio > 1.0 + etbr_core::codec::CERT_TOL {
        out.push(format!("‖x − x̂‖∞/d_e reached {}", st.max_cert_ratio));
    }
    if st.codec_mismatches > 0 || st.codec_comparisons == 0 {
        out.push(format!("{} of {} codec comparisons differ", st.codec_mismatches, st.codec_comparisons));
    }
    for s in &trace.samples {
        let v = c.p.quad_form(&s.x);
        if v > s.vd * (1.0 + PERF_TOL) {
            out.push(format!("sample t={}: V={v} > V_d={}", s.t, s.vd));
        }
        let err = vec_inf_norm(&vec_sub(&s.x, &s.xhat));
        if err > s.de * (1.0 + etbr_core::codec::CERT_TOL) {
            out.push(format!("sample t={}: ‖x_e‖∞={err} > d_e={}", s.t, s.de));
        }
    }
    for w in trace.events.windows(2) {
        if !(w[1].t_send > w[0].t_send) {
            out.push(format!("transmission gap {} ≤ 0 at k={}", w[1].t_send - w[0].t_send, w[1].k));
        }
        if !(w[1].t_receive > w[0].t_receive) {
            out.push(format!("reception gap ≤ 0 at k={}", w[1].k));
        }
        if trace.scenario == Scenario::NonInstBounded && w[0].t_receive > w[1].t_send {
            out.push(format!("event {} sent before reception of event {}", w[1].k, w[0].k));
        }
    }
    for e in &trace.events {
        if e.t_receive < e.t_send {
            out.push(format!("event {} received before it was sent", e.k));
        }
        if trace.scenario.is_bounded() && (e.p > c.pbar || e.p_min > c.pbar) {
            out.push(format!("event {} uses {} bits per axis, p̄ = {}", e.k, e.p, c.pbar));
        }
        if e.p < e.p_min {
            out.push(format!("event {} sent fewer than the minimum bits", e.k));
        }
    }
    out
}

/// `necessary ≤ realized ≤ sufficient` at each event of a zero-disturbance
/// instantaneous trace; returns (events checked, violations).
pub fn rate_ordering(trace: &etbr_core::SimTrace, c: &DesignConstants, de0: f64) -> (usize, Vec<String>) {
    use etbr_core::rates::{cumulative_bits, hypercube_volume, necessary_bits, sufficient_bits_inst};
    let realized = cumulative_bits(trace);
    let vol = hypercube_volume(de0, c.n);
    let mut bad = Vec::new();
    for e in &trace.events {
        let nec = necessary_bits(e.t_send, 0.0, vol, c).unwrap();
        let got = realized.interpolated_at(e.t_send);
        let suf = sufficient_bits_inst(e.t_send, 0.0, de0, c.vd0, c).unwrap();
        if !(nec <= got && got <= suf) {
            bad.push(format!("event {} at t={}: {nec} ≤ {got} ≤ {suf} fails", e.k, e.t_send));
        }
    }
    (trace.events.len(), bad)
}

/// Largest gap between forward differences of the necessary curve and the
/// asymptotic rate, over unit steps on `[0, 40]`.
pub fn necessary_slope_error(c: &DesignConstants, de0: f64) -> f64 {
    use etbr_core::rates::{hypercube_volume, necessary_asymptotic_rate, necessary_bits};
    let vol = hypercube_volume(de0, c.n);
    let rate = necessary_asymptotic_rate(&c.a, c.beta, c.n);
    (0..40)
        .map(|i| {
            let t = i as f64;
            let d = necessary_bits(t + 1.0, 0.0, vol, c).unwrap() - necessary_bits(t, 0.0, vol, c).unwrap();
            (d - rate).abs()
        })
        .fold(0.0, f64::max)
}
