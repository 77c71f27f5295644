//! Trigger functions, crossing times and per-event bit counts.
//!
//! All functions are pure in their arguments and the [`DesignConstants`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{expm1_div_guarded, DesignConstants, NORM_A_FLOOR};
use crate::scalar::{expm1_div, expm1_div2, Scalar};

/// Slack applied when rounding bit counts at a located event.
///
/// Events are located by bisection and processed on the far side of the
/// crossing, where `log₂` of the trigger level exceeds the integer boundary
/// by roughly the bisection tolerance.
pub const BITS_TOL: f64 = 1e-6;

/// Communication scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Instantaneous channel, unbounded packet size.
    InstFinite,
    /// Instantaneous channel, at most `p̄` bits per axis.
    InstBounded,
    /// Delayed channel (`Δ ≤ T_M`), at most `p̄` bits per axis.
    NonInstBounded,
}

impl Scenario {
    pub fn is_bounded(self) -> bool {
        !matches!(self, Scenario::InstFinite)
    }

    pub fn is_instantaneous(self) -> bool {
        !matches!(self, Scenario::NonInstBounded)
    }
}

/// Which clause of the trigger fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cause {
    Performance,
    Channel,
}

impl Cause {
    pub fn as_str(self) -> &'static str {
        match self {
            Cause::Performance => "performance",
            Cause::Channel => "channel",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TriggerError {
    #[error("no p ≤ {pbar} bits per axis satisfies the channel inequality (level {level:e} at p = {pbar})")]
    BitBudgetExceeded { pbar: u32, level: f64 },
}

/// Trigger-relevant state at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerSnapshot<S> {
    pub t: S,
    /// `b = V(x)/V_d(t)`.
    pub b: S,
    /// `ε = d_e/(c√V_d)`.
    pub eps: S,
    pub de: S,
    pub vd: S,
}

impl<S: Scalar> TriggerSnapshot<S> {
    pub fn new(t: S, x: &[S], de: S, consts: &DesignConstants<S>) -> Self {
        let vd = consts.vd(t);
        let b = consts.p.quad_form(x) / vd;
        let eps = de / (consts.eps_scale * vd.sqrt());
        Self { t, b, eps, de, vd }
    }
}

/// Bracketing parameters for the crossing searches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootOptions<S> {
    /// Absolute time tolerance of the bisection.
    pub tol: S,
    /// First bracket end; doubled until the crossing is enclosed.
    pub initial: S,
    /// Beyond this the crossing is reported as `+∞`.
    pub horizon: S,
}

impl<S: Scalar> RootOptions<S> {
    pub fn with_horizon(horizon: S) -> Self {
        Self { tol: S::lit(1e-9), initial: S::lit(1e-3), horizon }
    }

    pub fn for_constants(consts: &DesignConstants<S>) -> Self {
        Self::with_horizon(consts.root_horizon())
    }
}

/// First `τ ≥ 0` at which `above(τ)` holds, assuming `above` switches from
/// false to true at most once. Returns the upper end of the final bracket.
fn first_crossing<S: Scalar>(above: impl Fn(S) -> bool, opts: &RootOptions<S>) -> S {
    let mut lo = S::zero();
    let mut hi = opts.initial.min(opts.horizon);
    while !above(hi) {
        if hi >= opts.horizon {
            return S::infinity();
        }
        lo = hi;
        hi = (hi * S::lit(2.0)).min(opts.horizon);
    }
    let tol = opts.tol.max(S::epsilon() * hi);
    while hi - lo > tol {
        let mid = lo + (hi - lo) / S::lit(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        if above(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// `b = xᵀPx / V_d(t)`.
pub fn perf_ratio<S: Scalar>(x: &[S], t: S, consts: &DesignConstants<S>) -> S {
    consts.p.quad_form(x) / consts.vd(t)
}

/// Upper bound on the performance ratio `τ` seconds after an encoding.
///
/// Evaluated in the `e^{−wτ}f₁` form so that no intermediate overflows before
/// the result does; an unbounded result is `+∞`.
pub fn btilde<S: Scalar>(tau: S, b0: S, eps0: S, c: &DesignConstants<S>) -> S {
    let w = c.decay_excess;
    let em = (-w * tau).exp();
    let decay = -(-w * tau).exp_m1() / w; // (1 − e^{−wτ})/w
    let mut out = b0 * em;
    if eps0 != S::zero() {
        out = out + c.decay_margin * eps0 * ((c.growth_rate * tau).exp() - em) / (w + c.growth_rate);
    }
    if c.dist_offset != S::zero() {
        out = out + c.dist_offset * decay;
    }
    if c.dist_gain != S::zero() {
        let na = c.norm_a;
        let part = if na >= S::lit(NORM_A_FLOOR) {
            (((na * tau).exp() - em) / (w + na) - decay) / na
        } else {
            (tau - decay) / w
        };
        out = out + c.dist_gain * part;
    }
    if out.is_nan() {
        S::infinity()
    } else {
        out
    }
}

/// Right-hand side of the comparison ODE that [`btilde`] solves.
pub fn btilde_rate<S: Scalar>(tau: S, b: S, eps0: S, c: &DesignConstants<S>) -> S {
    let mut rate = -c.decay_excess * b + c.dist_offset;
    if eps0 != S::zero() {
        rate = rate + c.decay_margin * eps0 * (c.growth_rate * tau).exp();
    }
    if c.dist_gain != S::zero() {
        rate = rate + c.dist_gain * expm1_div_guarded(c.norm_a, tau);
    }
    rate
}

/// First upward crossing of 1 by `τ ↦ b̃(τ, b0, ε0)`, or `+∞`.
pub fn gamma1<S: Scalar>(b0: S, eps0: S, c: &DesignConstants<S>) -> S {
    gamma1_with(b0, eps0, c, &RootOptions::for_constants(c))
}

pub fn gamma1_with<S: Scalar>(b0: S, eps0: S, c: &DesignConstants<S>, opts: &RootOptions<S>) -> S {
    if b0 >= S::one() {
        // b0 > 1 is outside the intended domain and treated as already crossed
        if b0 > S::one() || btilde_rate(S::zero(), b0, eps0, c) >= S::zero() {
            return S::zero();
        }
    }
    first_crossing(|tau| tau > S::zero() && btilde(tau, b0, eps0, c) >= S::one(), opts)
}

/// `ρ_T(b) = c3(1 − b) + 1`.
pub fn rho<S: Scalar>(b: S, c: &DesignConstants<S>) -> S {
    c.rho_slope * (S::one() - b) + S::one()
}

/// `h_ch = ε/ρ_T(b)`; `+∞` once `ρ_T(b) ≤ 0`, which happens for `b` slightly
/// above 1 when `c3` is large.
pub fn h_ch<S: Scalar>(snap: &TriggerSnapshot<S>, c: &DesignConstants<S>) -> S {
    over_rho(snap.eps, rho(snap.b, c))
}

/// `α(τ) = ν(e^{‖A‖τ} − 1)/(c‖A‖√V0)`; identically zero without disturbance.
pub fn alpha<S: Scalar>(tau: S, c: &DesignConstants<S>) -> S {
    if c.alpha_gain == S::zero() {
        return S::zero();
    }
    c.alpha_gain * expm1_div_guarded(c.norm_a, tau)
}

fn over_rho<S: Scalar>(num: S, rho_val: S) -> S {
    if num == S::zero() {
        S::zero()
    } else if rho_val > S::zero() {
        num / rho_val
    } else {
        S::infinity()
    }
}

/// Predicted channel-trigger level `τ` seconds after an encoding with initial
/// quantizer bound `ψ0`. Returns `+∞` once `ρ_T(b̃)` is no longer positive.
pub fn hbar_ch<S: Scalar>(tau: S, b0: S, eps0: S, psi0: S, c: &DesignConstants<S>) -> S {
    let num = c.exp_a_inf(tau) * (c.beta * tau / S::lit(2.0)).exp() * psi0 + alpha(tau, c);
    over_rho(num, rho(btilde(tau, b0, eps0, c), c))
}

/// First crossing of 1 by `τ ↦ h̄_ch(τ, b0, ε0, ψ0)`, or `+∞`.
pub fn gamma2_tilde<S: Scalar>(b0: S, eps0: S, psi0: S, c: &DesignConstants<S>) -> S {
    gamma2_tilde_with(b0, eps0, psi0, c, &RootOptions::for_constants(c))
}

pub fn gamma2_tilde_with<S: Scalar>(b0: S, eps0: S, psi0: S, c: &DesignConstants<S>, opts: &RootOptions<S>) -> S {
    if hbar_ch(S::zero(), b0, eps0, psi0, c) >= S::one() {
        return S::zero();
    }
    first_crossing(|tau| hbar_ch(tau, b0, eps0, psi0, c) >= S::one(), opts)
}

/// `(φ, φ₁, φ₂)` at `τ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiValues<S> {
    pub phi: S,
    pub phi1: S,
    pub phi2: S,
}

pub fn phi_family<S: Scalar>(tau: S, phi0: S, c: &DesignConstants<S>) -> PhiValues<S> {
    let rho0 = c.rho0();
    let bracket = c.decay_margin * rho0 * expm1_div(c.growth_rate, tau)
        + c.dist_gain * expm1_div2_guarded(c.norm_a, tau)
        + c.dist_offset * tau;
    let phi1 = phi0 + phi0 * rho0 * c.rho_slope * bracket;
    let phi2 = over_rho(alpha(tau, c), rho(btilde(tau, S::one(), S::one(), c), c));
    let phi = c.exp_a_inf(tau) * (c.beta * tau / S::lit(2.0)).exp() * phi1 + phi2;
    PhiValues { phi, phi1, phi2 }
}

fn expm1_div2_guarded<S: Scalar>(a: S, tau: S) -> S {
    if a < S::lit(NORM_A_FLOOR) {
        tau * tau / S::lit(2.0)
    } else {
        expm1_div2(a, tau)
    }
}

/// First crossing of 1 by `τ ↦ φ(τ, 2^{−p̄})`.
pub fn t_star<S: Scalar>(pbar: u32, c: &DesignConstants<S>) -> S {
    t_star_with(pbar, c, &RootOptions::for_constants(c))
}

pub fn t_star_with<S: Scalar>(pbar: u32, c: &DesignConstants<S>, opts: &RootOptions<S>) -> S {
    let phi0 = pow2_neg(pbar);
    first_crossing(|tau| phi_family(tau, phi0, c).phi >= S::one(), opts)
}

/// `2^{−p}`.
pub fn pow2_neg<S: Scalar>(p: u32) -> S {
    S::lit(2.0).powi(-(p as i32))
}

fn ceil_bits<S: Scalar>(log2_level: S) -> u32 {
    let v = (log2_level - S::lit(BITS_TOL)).ceil();
    if v.is_nan() || v < S::one() {
        1
    } else {
        v.to_u32().unwrap_or(u32::MAX)
    }
}

/// Fewest bits per axis the scenario allows at the snapshot (at least 1).
pub fn min_bits<S: Scalar>(
    scenario: Scenario,
    snap: &TriggerSnapshot<S>,
    c: &DesignConstants<S>,
) -> Result<u32, TriggerError> {
    match scenario {
        Scenario::InstFinite => Ok(ceil_bits(snap.eps.log2())),
        Scenario::InstBounded => Ok(ceil_bits(h_ch(snap, c).log2())),
        Scenario::NonInstBounded => {
            let limit = S::one() + S::lit(BITS_TOL);
            let tm = c.max_delay;
            let mut level = S::infinity();
            for p in 1..=c.pbar.max(1) {
                level = hbar_ch(tm, snap.b, snap.eps, snap.eps * pow2_neg(p), c);
                if level <= limit {
                    return Ok(p);
                }
            }
            Err(TriggerError::BitBudgetExceeded { pbar: c.pbar, level: level.as_f64() })
        }
    }
}

/// Both trigger levels at a snapshot; a clause fires when its level is `≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerLevels<S> {
    pub performance: S,
    /// Zero for [`Scenario::InstFinite`].
    pub channel: S,
}

pub fn trigger_levels<S: Scalar>(scenario: Scenario, snap: &TriggerSnapshot<S>, c: &DesignConstants<S>) -> TriggerLevels<S> {
    match scenario {
        Scenario::InstFinite => TriggerLevels { performance: snap.b, channel: S::zero() },
        Scenario::InstBounded => {
            TriggerLevels { performance: snap.b, channel: h_ch(snap, c) * pow2_neg(c.pbar) }
        }
        Scenario::NonInstBounded => {
            let tm = c.max_delay;
            TriggerLevels {
                performance: btilde(tm, snap.b, snap.eps, c),
                channel: hbar_ch(tm, snap.b, snap.eps, snap.eps * pow2_neg(c.pbar), c),
            }
        }
    }
}

/// Evaluates the scenario's trigger. `prev_b` is the performance ratio at the
/// previous monitoring sample, used for the rising-edge condition of the
/// instantaneous triggers; `None` means no earlier sample.
pub fn trigger_check<S: Scalar>(
    scenario: Scenario,
    snap: &TriggerSnapshot<S>,
    prev_b: Option<S>,
    c: &DesignConstants<S>,
) -> Option<Cause> {
    let levels = trigger_levels(scenario, snap, c);
    let perf_fires = match scenario {
        Scenario::NonInstBounded => levels.performance >= S::one(),
        _ => levels.performance >= S::one() && prev_b.is_none_or(|p| snap.b >= p),
    };
    if perf_fires {
        Some(Cause::Performance)
    } else if levels.channel >= S::one() {
        Some(Cause::Channel)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn consts(nu: f64) -> DesignConstants<f64> {
        let tm = if nu > 0.0 { Some(1.1e-3) } else { None };
        presets::bench_constants(nu, 20, tm).unwrap()
    }

    #[test]
    fn btilde_at_zero_is_b0() {
        for nu in [0.0, 0.01] {
            let c = consts(nu);
            for &(b, e) in &[(0.0, 0.0), (0.3, 5.0), (1.0, 1.0)] {
                assert_eq!(btilde(0.0, b, e, &c), b);
            }
        }
    }

    #[test]
    fn btilde_solves_comparison_ode() {
        for nu in [0.0, 0.01] {
            let c = consts(nu);
            for &(b0, e0) in &[(1.0, 1.0), (0.2, 0.5), (0.9, 3.0)] {
                let end = 2.0 * c.gamma11;
                let steps = 20_000;
                let h = end / steps as f64;
                let f = |t: f64, b: f64| btilde_rate(t, b, e0, &c);
                let mut b = b0;
                let mut t = 0.0;
                for _ in 0..steps {
                    let k1 = f(t, b);
                    let k2 = f(t + h / 2.0, b + h / 2.0 * k1);
                    let k3 = f(t + h / 2.0, b + h / 2.0 * k2);
                    let k4 = f(t + h, b + h * k3);
                    b += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                    t += h;
                    let exact = btilde(t, b0, e0, &c);
                    assert!((b - exact).abs() <= 1e-8 * exact.abs().max(1.0), "t={t} {b} {exact}");
                }
            }
        }
    }

    #[test]
    fn btilde_overflow_is_infinite() {
        let c = consts(0.01);
        assert_eq!(btilde(1e6, 1.0, 1.0, &c), f64::INFINITY);
        assert!(btilde(1e6, 0.5, 0.0, &consts(0.0)).abs() < 1e-12);
    }

    #[test]
    fn gamma1_anchor_values() {
        assert!((consts(0.0).gamma11 - 0.5699).abs() < 1e-3);
        assert!((consts(0.01).gamma11 - 0.0347).abs() < 1e-3);
        let c = consts(0.0);
        assert_eq!(gamma1(1.0, 1e3, &c), 0.0);
        assert_eq!(gamma1(0.5, 0.0, &c), f64::INFINITY);
    }

    #[test]
    fn gamma1_sign_equivalence() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for nu in [0.0, 0.01] {
            let c = consts(nu);
            for _ in 0..300 {
                let b0 = rng.gen_range(0.0..1.0);
                let e0 = rng.gen_range(0.0..3.0);
                let t0 = rng.gen_range(0.0..3.0) * c.gamma11;
                let g = gamma1(b0, e0, &c);
                let bt = btilde(t0, b0, e0, &c);
                if (g - t0).abs() > 1e-8 {
                    assert_eq!(g > t0, bt < 1.0, "b0={b0} e0={e0} T={t0} g={g} bt={bt}");
                }
            }
        }
    }

    #[test]
    fn rho_identities() {
        let c = consts(0.0);
        assert_eq!(rho(1.0, &c), 1.0);
        assert!((rho(0.0, &c) - 1.0 - c.rho_slope).abs() < 1e-15);
        assert!(rho(0.4, &c) >= 1.0);
    }

    #[test]
    fn hbar_special_values() {
        for nu in [0.0, 0.01] {
            let c = consts(nu);
            let v = hbar_ch(0.0, 0.4, 0.7, 0.3, &c);
            assert!((v - 0.3 / rho(0.4, &c)).abs() < 1e-15);
            let r = rho(0.4, &c);
            assert_eq!(gamma2_tilde(0.4, 0.7, r, &c), 0.0);
        }
        let c = consts(0.0);
        for tau in [0.0, 0.1, 10.0] {
            assert_eq!(hbar_ch(tau, 0.5, 0.5, 0.0, &c), 0.0);
        }
    }

    #[test]
    fn phi_at_zero() {
        for nu in [0.0, 0.01] {
            let c = consts(nu);
            let v = phi_family(0.0, 0.37, &c);
            assert_eq!(v.phi1, 0.37);
            assert_eq!(v.phi2, 0.0);
            assert!((phi_family(0.0, 1.0, &c).phi - 1.0).abs() < 1e-15);
        }
        let c = consts(0.0);
        assert_eq!(phi_family(0.3, 0.5, &c).phi2, 0.0);
    }

    #[test]
    fn t_star_residual_and_monotone() {
        for nu in [0.0, 0.01] {
            let c = consts(nu);
            let mut last = 0.0;
            for p in [4, 8, 12, 16, 20, 24] {
                let ts = t_star(p, &c);
                let phi = |t: f64| phi_family(t, pow2_neg(p), &c).phi;
                assert!(phi(ts - 1e-9) < 1.0 && phi(ts) >= 1.0);
                assert!(ts >= last, "p={p}");
                last = ts;
            }
        }
        let c = consts(0.01);
        assert!((c.t_star - 1.3634e-3).abs() < 2e-6, "{}", c.t_star);
    }

    #[test]
    fn min_bits_edge_cases() {
        let c = consts(0.0);
        let vd = 4.0_f64;
        let de = c.eps_scale * vd.sqrt();
        let snap = TriggerSnapshot { t: 0.0, b: 1.0, eps: 1.0, de, vd };
        assert_eq!(min_bits(Scenario::InstFinite, &snap, &c).unwrap(), 1);
        let snap = TriggerSnapshot { eps: 1000.0, ..snap };
        assert_eq!(
            min_bits(Scenario::InstFinite, &snap, &c).unwrap(),
            min_bits(Scenario::InstBounded, &snap, &c).unwrap()
        );
        assert_eq!(min_bits(Scenario::InstFinite, &snap, &c).unwrap(), 10);
        // a level just past 2^12 from bisection rounds to 12
        let snap = TriggerSnapshot { eps: 4096.0 * (1.0 + 1e-9), ..snap };
        assert_eq!(min_bits(Scenario::InstFinite, &snap, &c).unwrap(), 12);
    }

    #[test]
    fn trigger_check_cases() {
        let c = consts(0.0);
        let snap = TriggerSnapshot { t: 0.0, b: 0.5, eps: 0.2 * 2f64.powi(20) * rho(0.5, &c), de: 1.0, vd: 1.0 };
        for s in [Scenario::InstFinite, Scenario::InstBounded] {
            assert_eq!(trigger_check(s, &snap, None, &c), None);
        }
        let hot = TriggerSnapshot { b: 1.0, eps: 0.2 * 2f64.powi(20), ..snap };
        assert_eq!(trigger_check(Scenario::InstBounded, &hot, Some(0.99), &c), Some(Cause::Performance));
        assert_eq!(trigger_check(Scenario::InstBounded, &hot, Some(1.01), &c), None);
        let chan = TriggerSnapshot { eps: 2f64.powi(20) * rho(0.5, &c), ..snap };
        assert_eq!(trigger_check(Scenario::InstBounded, &chan, None, &c), Some(Cause::Channel));
        assert_eq!(trigger_check(Scenario::InstFinite, &chan, None, &c), None);
    }

    #[test]
    fn zero_delay_collapses_noninst_trigger() {
        let c = consts(0.0);
        let snap = TriggerSnapshot { t: 0.0, b: 0.7, eps: 30.0, de: 1.0, vd: 1.0 };
        let inst = trigger_levels(Scenario::InstBounded, &snap, &c);
        let non = trigger_levels(Scenario::NonInstBounded, &snap, &c);
        assert_eq!(non.performance, inst.performance);
        assert!((non.channel - inst.channel).abs() < 1e-15 * inst.channel);
    }

    #[test]
    fn single_precision_design() {
        let c = presets::bench_constants_generic::<f32>(0.0, 12, None).unwrap();
        assert!((c.gamma11 - 0.5699).abs() < 2e-3, "{}", c.gamma11);
    }
}
