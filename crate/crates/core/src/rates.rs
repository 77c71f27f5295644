//! Necessary and sufficient bit counts and realized cumulative bits.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::design::DesignConstants;
use crate::linalg::{min_real_part, sym_eigenvalues, Matrix};
use crate::simulator::{EventRecord, SimTrace};
use crate::scalar::Scalar;
use crate::trigger::{alpha, btilde, rho, Scenario};

/// Largest dimension covered by the `Γ(n/2 + 1)` table.
pub const MAX_GAMMA_DIM: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RateError {
    #[error("the instantaneous sufficient bound only holds without disturbance (ν = {0}); use the history bound instead")]
    DisturbancePresent(f64),
    #[error("dimension {0} is outside the supported range 1..=16")]
    Dimension(usize),
    #[error("event {k} requested but the history has {len} events")]
    MissingHistory { k: usize, len: usize },
    #[error("P is not positive definite")]
    NotPositiveDefinite,
}

/// `Γ(n/2 + 1)` for `1 ≤ n ≤ 16`.
pub fn gamma_half_plus_one(n: usize) -> Result<f64, RateError> {
    if n == 0 || n > MAX_GAMMA_DIM {
        return Err(RateError::Dimension(n));
    }
    // Γ(1) = 1 and Γ(3/2) = √π/2, then Γ(x + 1) = xΓ(x)
    let (mut x, mut g) = if n.is_multiple_of(2) { (1.0, 1.0) } else { (1.5, std::f64::consts::PI.sqrt() / 2.0) };
    let target = n as f64 / 2.0 + 1.0;
    while x < target {
        g *= x;
        x += 1.0;
    }
    Ok(g)
}

/// `c_P` in `vol{x : xᵀPx ≤ V} = c_P·V^{n/2}`.
pub fn ellipsoid_constant<S: Scalar>(p: &Matrix<S>) -> Result<S, RateError> {
    let n = p.rows();
    let eig = sym_eigenvalues(p).map_err(|_| RateError::NotPositiveDefinite)?;
    if eig.iter().any(|&l| !(l > S::zero())) {
        return Err(RateError::NotPositiveDefinite);
    }
    let det = eig.iter().fold(S::one(), |acc, &l| acc * l);
    let g = S::lit(gamma_half_plus_one(n)?);
    let pi_half_n = S::PI().powf(S::from_usize_lossy(n) / S::lit(2.0));
    Ok(pi_half_n / (g * det.sqrt()))
}

/// `vol(E(t0))` of the codec hypercube `[x̂ − d_e, x̂ + d_e]ⁿ`.
pub fn hypercube_volume<S: Scalar>(de0: S, n: usize) -> S {
    (S::lit(2.0) * de0).powi(n as i32)
}

/// `(tr A + nβ/2)·log₂ e`.
pub fn necessary_asymptotic_rate<S: Scalar>(a: &Matrix<S>, beta: S, n: usize) -> S {
    (a.trace() + S::from_usize_lossy(n) * beta / S::lit(2.0)) * S::LOG2_E()
}

/// Whether `min Re σ(A + βI) ≥ 0`, the hypothesis of the necessary bound.
pub fn necessary_bound_applies<S: Scalar>(a: &Matrix<S>, beta: S) -> bool {
    min_real_part(a).map(|m| m + beta >= S::zero()).unwrap_or(false)
}

/// Lower bound on the bits sent over `[t0, t]`.
pub fn necessary_bits<S: Scalar>(t: S, t0: S, vol_e0: S, consts: &DesignConstants<S>) -> Result<S, RateError> {
    let cp = ellipsoid_constant(&consts.p)?;
    let n = consts.n;
    let half_n = S::from_usize_lossy(n) / S::lit(2.0);
    let offset = (vol_e0 / (cp * consts.vd0.powf(half_n))).log2();
    Ok(necessary_asymptotic_rate(&consts.a, consts.beta, n) * (t - t0) + offset)
}

/// Upper bound on `n(p_k + Σ_{i<k} p_i)` for instantaneous channels without
/// disturbance.
pub fn sufficient_bits_inst<S: Scalar>(t_k: S, t0: S, de0: S, vd0: S, consts: &DesignConstants<S>) -> Result<S, RateError> {
    if consts.nu != S::zero() {
        return Err(RateError::DisturbancePresent(consts.nu.as_f64()));
    }
    let n = S::from_usize_lossy(consts.n);
    Ok(n * consts.growth_rate_inf * S::LOG2_E() * (t_k - t0)
        + n * (de0 / (consts.eps_scale * vd0.sqrt())).log2()
        + n)
}

/// Upper bound on the fewest bits per axis at event `k` (1-based) from the
/// bits actually sent before it. Infinite when the bound degenerates.
pub fn sufficient_pk_bound_general<S: Scalar>(
    events: &[EventRecord<S>],
    k: usize,
    t0: S,
    eps0: S,
    consts: &DesignConstants<S>,
) -> Result<S, RateError> {
    if k == 0 || k > events.len() {
        return Err(RateError::MissingHistory { k, len: events.len() });
    }
    let ev = &events[k - 1];
    let tm = consts.max_delay;
    let tb = consts.growth_rate_inf;
    let denom = rho(btilde(tm, ev.b, ev.eps, consts), consts) - alpha(tm, consts);
    if !(denom > S::zero()) {
        return Ok(S::infinity());
    }
    let first = (tb * tm).exp() / denom;
    // times t_0, t_1, …, t_k and the bits p_1, …, p_{k−1}
    let times: Vec<S> = std::iter::once(t0).chain(events[..k].iter().map(|e| e.t_send)).collect();
    let gap = |j: usize| times[j + 1] - times[j];
    let bits_before: u32 = events[..k - 1].iter().map(|e| e.p).sum();
    let mut second = (tb * (ev.t_send - t0)).exp() * eps0 * S::lit(2.0).powi(-(bits_before as i32));
    for i in 0..k {
        let mut prod = alpha(gap(i), consts);
        if prod == S::zero() {
            continue;
        }
        for j in (i + 1)..k {
            prod = prod * (tb * gap(j)).exp() * S::lit(2.0).powi(-(events[j - 1].p as i32));
        }
        second = second + prod;
    }
    Ok(first.log2() + S::one() + second.log2())
}

/// Step series `Σ n·p_i` with linear interpolation between events.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CumulativeBits<S> {
    pub t0: S,
    /// `(t_k, Σ_{i≤k} n·p_i)`.
    pub steps: Vec<(S, u64)>,
}

impl<S: Scalar> CumulativeBits<S> {
    pub fn from_events(events: &[EventRecord<S>], t0: S) -> Self {
        let mut total = 0u64;
        let steps = events
            .iter()
            .map(|e| {
                total += e.bits as u64;
                (e.t_send, total)
            })
            .collect();
        Self { t0, steps }
    }

    /// Right-continuous step value.
    pub fn step_at(&self, t: S) -> u64 {
        let pos = self.steps.partition_point(|(tk, _)| *tk <= t);
        if pos == 0 {
            0
        } else {
            self.steps[pos - 1].1
        }
    }

    /// Piecewise-linear curve through `(t0, 0)` and every `(t_k, B_k)`, held
    /// after the last event.
    pub fn interpolated_at(&self, t: S) -> S {
        let pos = self.steps.partition_point(|(tk, _)| *tk <= t);
        if self.steps.is_empty() {
            return S::zero();
        }
        if pos == self.steps.len() {
            return S::lit(self.steps[pos - 1].1 as f64);
        }
        let (ta, ba) = if pos == 0 { (self.t0, 0) } else { self.steps[pos - 1] };
        let (tb, bb) = self.steps[pos];
        if t <= ta || tb <= ta {
            return S::lit(ba as f64);
        }
        let s = (t - ta) / (tb - ta);
        S::lit(ba as f64) + s * S::lit(bb as f64 - ba as f64)
    }
}

pub fn cumulative_bits<S: Scalar>(trace: &SimTrace<S>) -> CumulativeBits<S> {
    CumulativeBits::from_events(&trace.events, S::zero())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFlags {
    /// `min Re σ(A + βI) ≥ 0`.
    pub necessary_applies: bool,
    /// `ν = 0`, required by the closed-form sufficient bounds.
    pub zero_disturbance: bool,
    /// The initial uncertainty volume is `(2 d_e(t0))ⁿ`.
    pub volume_convention: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport<S> {
    pub necessary_curve: Vec<(S, S)>,
    pub necessary_asymptotic: S,
    /// Bound on `n(p_k + Σ_{i<k} p_i)` at each event; empty when no bound applies.
    pub sufficient_curve: Vec<(S, S)>,
    pub realized: CumulativeBits<S>,
    /// `B(t_end)/(t_end − t0)`.
    pub realized_average_rate: S,
    pub flags: RateFlags,
    pub grid: Vec<S>,
    pub horizon: S,
}

/// Rate report `[0, horizon]` on a uniform grid of `grid_points` points.
pub fn rate_report<S: Scalar>(
    trace: &SimTrace<S>,
    consts: &DesignConstants<S>,
    de0: S,
    horizon: S,
    grid_points: usize,
) -> Result<RateReport<S>, RateError> {
    let t0 = S::zero();
    let n = consts.n;
    let vol = hypercube_volume(de0, n);
    let m = grid_points.max(2);
    let grid: Vec<S> = (0..m).map(|i| horizon * S::from_usize_lossy(i) / S::from_usize_lossy(m - 1)).collect();
    let necessary_curve =
        grid.iter().map(|&t| necessary_bits(t, t0, vol, consts).map(|b| (t, b))).collect::<Result<Vec<_>, _>>()?;
    let realized = cumulative_bits(trace);
    let zero_dist = consts.nu == S::zero();
    let nn = S::from_usize_lossy(n);
    let sufficient_curve = match trace.scenario {
        Scenario::InstFinite | Scenario::InstBounded if zero_dist => trace
            .events
            .iter()
            .map(|e| sufficient_bits_inst(e.t_send, t0, de0, consts.vd0, consts).map(|b| (e.t_send, b)))
            .collect::<Result<Vec<_>, _>>()?,
        Scenario::NonInstBounded => {
            let eps0 = de0 / (consts.eps_scale * consts.vd0.sqrt());
            let mut out = Vec::with_capacity(trace.events.len());
            let mut before = 0u64;
            for (i, e) in trace.events.iter().enumerate() {
                let pk = sufficient_pk_bound_general(&trace.events, i + 1, t0, eps0, consts)?;
                out.push((e.t_send, nn * pk + S::lit(before as f64)));
                before += e.bits as u64;
            }
            out
        }
        _ => Vec::new(),
    };
    let total = realized.step_at(horizon);
    let realized_average_rate = if horizon > t0 { S::lit(total as f64) / (horizon - t0) } else { S::zero() };
    Ok(RateReport {
        necessary_curve,
        necessary_asymptotic: necessary_asymptotic_rate(&consts.a, consts.beta, n),
        sufficient_curve,
        realized,
        realized_average_rate,
        flags: RateFlags {
            necessary_applies: necessary_bound_applies(&consts.a, consts.beta),
            zero_disturbance: zero_dist,
            volume_convention: "(2 de0)^n",
        },
        grid,
        horizon,
    })
}

pub const RATES_HEADER: [&str; 4] = ["t", "necessary", "realized_interp", "sufficient"];

/// Writes `(t, necessary, realized_interp, sufficient)` on the report grid.
/// The sufficient column is the instantaneous closed form when it applies
/// and the trace has events, and empty otherwise.
pub fn write_rates_csv<S: Scalar, W: Write>(
    report: &RateReport<S>,
    consts: &DesignConstants<S>,
    scenario: Scenario,
    de0: S,
    out: W,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RATES_HEADER)?;
    let closed_form =
        scenario.is_instantaneous() && report.flags.zero_disturbance && !report.realized.steps.is_empty();
    for &(t, nec) in &report.necessary_curve {
        let suff = if closed_form {
            sufficient_bits_inst(t, S::zero(), de0, consts.vd0, consts)
                .map(|v| format!("{:e}", v.as_f64()))
                .unwrap_or_default()
        } else {
            String::new()
        };
        w.write_record([
            format!("{:e}", t.as_f64()),
            format!("{:e}", nec.as_f64()),
            format!("{:e}", report.realized.interpolated_at(t).as_f64()),
            suff,
        ])?;
    }
    w.flush()?;
    Ok(())
}
