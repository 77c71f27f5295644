//! Fixed-step hybrid simulation of the closed loop with event detection.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, CodecState, Packet, Side, CERT_TOL};
use crate::design::{DesignConstants, PlantSpec};
use crate::linalg::{mat_exp, vec_inf_norm, vec_norm2, Matrix};
use crate::scalar::Scalar;
use crate::trigger::{self, Cause, Scenario, TriggerError, TriggerSnapshot};

/// Relative slack on `V ≤ V_d` (crossings are located, not hit exactly).
pub const PERF_TOL: f64 = 1e-6;

/// Time tolerance of the event localization.
pub const EVENT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("initial condition rejected: {0}")]
    InitialCondition(String),
    #[error("delay model exceeds the design bound: Δ(p̄) = {delay:e} > TM = {tm:e}")]
    DelayBound { delay: f64, tm: f64 },
    #[error("performance breach at t = {t}: V/V_d = {ratio}")]
    Performance { t: f64, ratio: f64 },
    #[error("certification breach at t = {t}: ‖x − x̂‖∞/d_e = {ratio}")]
    Certification { t: f64, ratio: f64 },
    #[error("bit budget breach at t = {t}: p = {p} > p̄ = {pbar}")]
    BitBudget { t: f64, p: u32, pbar: u32 },
    #[error("encoder and decoder disagree at t = {0}")]
    CodecMismatch(f64),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Trigger(#[from] TriggerError),
}

/// Communication time `Δ(p)` as a function of the bits per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DelayModel<S> {
    Zero,
    Constant { delay: S },
    /// `Δ = min(per_bit·n·p, cap)`.
    Proportional { per_bit: S, cap: S },
}

impl<S: Scalar> DelayModel<S> {
    pub fn delay(&self, n: usize, p: u32) -> S {
        match *self {
            DelayModel::Zero => S::zero(),
            DelayModel::Constant { delay } => delay,
            DelayModel::Proportional { per_bit, cap } => (per_bit * S::from_usize_lossy(n * p as usize)).min(cap),
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        let ok = match *self {
            DelayModel::Zero => true,
            DelayModel::Constant { delay } => delay >= S::zero() && delay.is_finite(),
            DelayModel::Proportional { per_bit, cap } => {
                per_bit >= S::zero() && cap >= S::zero() && per_bit.is_finite() && cap.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(SimError::Config(format!("delay model has negative or non-finite parameters: {self:?}")))
        }
    }
}

/// Disturbance signal `v(t)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Disturbance<S> {
    Zero,
    /// `v = ν(sin ωt, cos ωt)` on a two-dimensional state.
    SinCos { nu: S, omega: S },
    /// Piecewise-linear interpolation of knots `(t, v)`, held constant outside.
    Table { knots: Vec<(S, Vec<S>)> },
}

impl<S: Scalar> Disturbance<S> {
    pub fn sincos(nu: S) -> Self {
        Disturbance::SinCos { nu, omega: S::lit(0.5) }
    }

    /// Validated table: knots strictly increasing in `t`, each `‖v‖₂ ≤ ν`.
    pub fn table(knots: Vec<(S, Vec<S>)>, nu: S) -> Result<Self, SimError> {
        if knots.is_empty() {
            return Err(SimError::Config("disturbance table is empty".into()));
        }
        let n = knots[0].1.len();
        for (i, (t, v)) in knots.iter().enumerate() {
            if v.len() != n {
                return Err(SimError::Config(format!("knot {i} has {} entries, expected {n}", v.len())));
            }
            if i > 0 && !(*t > knots[i - 1].0) {
                return Err(SimError::Config(format!("knot times must increase (knot {i})")));
            }
            let norm = vec_norm2(v);
            if !(norm <= nu * (S::one() + S::lit(1e-12))) {
                return Err(SimError::Config(format!("knot {i} has ‖v‖ = {norm} > ν = {nu}")));
            }
        }
        Ok(Disturbance::Table { knots })
    }

    /// Upper bound on `‖v(t)‖₂` over all `t`.
    pub fn bound(&self) -> S {
        match self {
            Disturbance::Zero => S::zero(),
            Disturbance::SinCos { nu, .. } => nu.abs(),
            Disturbance::Table { knots } => knots.iter().fold(S::zero(), |acc, (_, v)| acc.max(vec_norm2(v))),
        }
    }

    pub fn eval(&self, t: S, out: &mut [S]) {
        match self {
            Disturbance::Zero => out.iter_mut().for_each(|v| *v = S::zero()),
            Disturbance::SinCos { nu, omega } => {
                out[0] = *nu * (*omega * t).sin();
                out[1] = *nu * (*omega * t).cos();
            }
            Disturbance::Table { knots } => {
                let pos = knots.partition_point(|(tk, _)| *tk <= t);
                if pos == 0 {
                    out.copy_from_slice(&knots[0].1);
                } else if pos == knots.len() {
                    out.copy_from_slice(&knots[pos - 1].1);
                } else {
                    let (t0, v0) = &knots[pos - 1];
                    let (t1, v1) = &knots[pos];
                    let s = (t - *t0) / (*t1 - *t0);
                    for (o, (&a, &b)) in out.iter_mut().zip(v0.iter().zip(v1)) {
                        *o = a + (b - a) * s;
                    }
                }
            }
        }
    }

    fn dim(&self) -> Option<usize> {
        match self {
            Disturbance::Zero => None,
            Disturbance::SinCos { .. } => Some(2),
            Disturbance::Table { knots } => Some(knots[0].1.len()),
        }
    }
}

/// A single simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig<S> {
    pub scenario: Scenario,
    pub horizon: S,
    pub step: S,
    pub x0: Vec<S>,
    pub xhat0: Vec<S>,
    pub de0: S,
    pub channel: DelayModel<S>,
    pub disturbance: Disturbance<S>,
    /// A sample is recorded every this many grid steps.
    pub record_every: usize,
    /// Per-event bits-per-axis requests (1-based event index), clamped to
    /// `[min_bits, p̄]`.
    pub pk_overrides: BTreeMap<usize, u32>,
    /// Track the predicted-bound ratios `b/b̃` and `h_ch/h̄_ch`.
    pub track_bounds: bool,
}

impl<S: Scalar> ScenarioConfig<S> {
    pub fn new(scenario: Scenario, x0: Vec<S>, de0: S) -> Self {
        let n = x0.len();
        Self {
            scenario,
            horizon: S::lit(40.0),
            step: S::lit(1e-4),
            x0,
            xhat0: vec![S::zero(); n],
            de0,
            channel: DelayModel::Zero,
            disturbance: Disturbance::Zero,
            record_every: 100,
            pk_overrides: BTreeMap::new(),
            track_bounds: true,
        }
    }

    pub fn with_step(mut self, h: S) -> Self {
        self.step = h;
        self
    }

    pub fn with_horizon(mut self, horizon: S) -> Self {
        self.horizon = horizon;
        self
    }
}

/// One recorded sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample<S> {
    pub t: S,
    pub x: Vec<S>,
    pub xhat: Vec<S>,
    pub v: S,
    pub vd: S,
    pub b: S,
    pub de: S,
    pub eps: S,
}

/// One transmission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord<S> {
    /// 1-based.
    pub k: usize,
    pub t_send: S,
    pub t_receive: S,
    /// Bits per axis sent.
    pub p: u32,
    /// Fewest bits per axis the trigger allowed.
    pub p_min: u32,
    pub bits: u32,
    pub cause: Cause,
    /// `b(t_k)` and `ε(t_k⁻)`.
    pub b: S,
    pub eps: S,
    pub cumulative_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct SimStats {
    pub transmissions: usize,
    /// Mean of `t_{k+1} − t_k`.
    pub mean_gap: Option<f64>,
    /// Minimum of `t_{k+1} − t_k`.
    pub min_gap: Option<f64>,
    /// Minimum of `r_{k+1} − r_k`.
    pub min_reception_gap: Option<f64>,
    pub total_bits: u64,
    pub max_perf_ratio: f64,
    pub max_cert_ratio: f64,
    /// `max b/b̃` since the last reception.
    pub max_btilde_ratio: f64,
    /// `max h_ch/h̄_ch` since the last reception; NaN when not tracked.
    pub max_hbar_ratio: f64,
    pub codec_comparisons: usize,
    pub codec_mismatches: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace<S> {
    pub scenario: Scenario,
    pub n: usize,
    pub samples: Vec<Sample<S>>,
    pub events: Vec<EventRecord<S>>,
    pub stats: SimStats,
}

impl<S: Scalar> SimTrace<S> {
    /// `(t_k, Σ_{i≤k} n·p_i)` step series.
    pub fn cumulative_bits(&self) -> Vec<(S, u64)> {
        self.events.iter().map(|e| (e.t_send, e.cumulative_bits)).collect()
    }

    fn finish_stats(&mut self) {
        let st = &mut self.stats;
        st.transmissions = self.events.len();
        st.total_bits = self.events.last().map_or(0, |e| e.cumulative_bits);
        let gaps: Vec<f64> = self.events.windows(2).map(|w| (w[1].t_send - w[0].t_send).as_f64()).collect();
        if !gaps.is_empty() {
            st.mean_gap = Some(gaps.iter().sum::<f64>() / gaps.len() as f64);
            st.min_gap = gaps.iter().copied().reduce(f64::min);
            st.min_reception_gap = self
                .events
                .windows(2)
                .map(|w| (w[1].t_receive - w[0].t_receive).as_f64())
                .reduce(f64::min);
        }
    }
}

/// A run that stopped on an invariant breach, with everything recorded so far.
#[derive(Debug, Clone)]
pub struct SimFailure<S> {
    pub error: SimError,
    pub trace: Option<SimTrace<S>>,
}

impl<S> std::fmt::Display for SimFailure<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl<S: std::fmt::Debug> std::error::Error for SimFailure<S> {}

impl<S> From<SimError> for SimFailure<S> {
    fn from(error: SimError) -> Self {
        Self { error, trace: None }
    }
}

/// Propagators and scratch shared by all RK4 steps of a run.
struct Stepper<'a, S: Scalar> {
    plant: &'a PlantSpec<S>,
    dist: &'a Disturbance<S>,
    h: S,
    half_h: Matrix<S>,
    full_h: Matrix<S>,
}

impl<'a, S: Scalar> Stepper<'a, S> {
    fn new(plant: &'a PlantSpec<S>, dist: &'a Disturbance<S>, h: S) -> Self {
        let half_h = mat_exp(plant.abar(), h / S::lit(2.0)).expect("validated plant");
        let full_h = mat_exp(plant.abar(), h).expect("validated plant");
        Self { plant, dist, h, half_h, full_h }
    }

    fn propagators(&self, s: S) -> (Matrix<S>, Matrix<S>) {
        if s == self.h {
            (self.half_h.clone(), self.full_h.clone())
        } else {
            let abar = self.plant.abar();
            (mat_exp(abar, s / S::lit(2.0)).expect("validated plant"), mat_exp(abar, s).expect("validated plant"))
        }
    }

    /// RK4 for `x`, exact flow for `x̂`. Returns `(x⁺, x̂⁺, Φ_s)`.
    fn step(&self, t: S, x: &[S], xhat: &[S], s: S) -> (Vec<S>, Vec<S>, Matrix<S>) {
        let (half, full) = self.propagators(s);
        let xh_mid = half.mul_vec(xhat);
        let xh_end = full.mul_vec(xhat);
        let n = x.len();
        let mut v = vec![S::zero(); n];
        let a = self.plant.a();
        let bk = self.plant.bk();
        let mut f = |tt: S, xx: &[S], xh: &[S]| -> Vec<S> {
            self.dist.eval(tt, &mut v);
            let ax = a.mul_vec(xx);
            let bu = bk.mul_vec(xh);
            (0..n).map(|i| ax[i] + bu[i] + v[i]).collect()
        };
        let two = S::lit(2.0);
        let hs = s / two;
        let k1 = f(t, x, xhat);
        let x2: Vec<S> = (0..n).map(|i| x[i] + hs * k1[i]).collect();
        let k2 = f(t + hs, &x2, &xh_mid);
        let x3: Vec<S> = (0..n).map(|i| x[i] + hs * k2[i]).collect();
        let k3 = f(t + hs, &x3, &xh_mid);
        let x4: Vec<S> = (0..n).map(|i| x[i] + s * k3[i]).collect();
        let k4 = f(t + s, &x4, &xh_end);
        let sixth = s / S::lit(6.0);
        let out = (0..n).map(|i| x[i] + sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i])).collect();
        (out, xh_end, full)
    }
}

/// One integrator step of length `h` from `(x, x̂)` at time `t`.
pub fn integrate_step<S: Scalar>(
    x: &[S],
    xhat: &[S],
    t: S,
    h: S,
    disturbance: &Disturbance<S>,
    plant: &PlantSpec<S>,
) -> (Vec<S>, Vec<S>) {
    let st = Stepper::new(plant, disturbance, h);
    let (x1, xh1, _) = st.step(t, x, xhat, h);
    (x1, xh1)
}

fn validate<S: Scalar>(cfg: &ScenarioConfig<S>, plant: &PlantSpec<S>, consts: &DesignConstants<S>) -> Result<(), SimError> {
    let n = plant.dim();
    let bad = |m: String| Err(SimError::Config(m));
    if cfg.x0.len() != n || cfg.xhat0.len() != n {
        return bad(format!("x0 and x̂0 must have {n} entries"));
    }
    if !(cfg.step > S::zero()) || !cfg.step.is_finite() {
        return bad(format!("step must be > 0, got {}", cfg.step));
    }
    if !(cfg.horizon >= S::zero()) || !cfg.horizon.is_finite() {
        return bad(format!("horizon must be ≥ 0, got {}", cfg.horizon));
    }
    if cfg.record_every == 0 {
        return bad("record_every must be ≥ 1".into());
    }
    if consts.n != n {
        return bad("design constants belong to a different plant".into());
    }
    if let Some(d) = cfg.disturbance.dim() {
        if d != n {
            return bad(format!("disturbance has dimension {d}, plant has {n}"));
        }
    }
    let vb = cfg.disturbance.bound();
    if !(vb <= plant.nu() * (S::one() + S::lit(1e-12))) {
        return bad(format!("disturbance amplitude {vb} exceeds ν = {}", plant.nu()));
    }
    cfg.channel.validate()?;
    if cfg.scenario.is_bounded() && n as u64 * consts.pbar as u64 > 128 {
        return bad(format!("n·p̄ = {} exceeds 128 bits", n as u32 * consts.pbar));
    }
    match cfg.scenario {
        Scenario::InstFinite | Scenario::InstBounded => {
            if cfg.channel.delay(n, 1) != S::zero() || cfg.channel.delay(n, consts.pbar) != S::zero() {
                return bad("instantaneous scenarios need a zero-delay channel".into());
            }
        }
        Scenario::NonInstBounded => {
            let d = cfg.channel.delay(n, consts.pbar);
            if d > consts.max_delay {
                return Err(SimError::DelayBound { delay: d.as_f64(), tm: consts.max_delay.as_f64() });
            }
            if consts.max_delay >= consts.delay_bound() {
                return Err(SimError::DelayBound { delay: consts.max_delay.as_f64(), tm: consts.delay_bound().as_f64() });
            }
        }
    }
    let err0 = vec_inf_norm(&crate::linalg::vec_sub(&cfg.x0, &cfg.xhat0));
    if !(cfg.de0 >= err0) {
        return Err(SimError::InitialCondition(format!("d_e(t0) = {} < ‖x0 − x̂0‖∞ = {err0}", cfg.de0)));
    }
    let snap = TriggerSnapshot::new(S::zero(), &cfg.x0, cfg.de0, consts);
    if !(snap.b <= S::one()) {
        return Err(SimError::InitialCondition(format!("V(x0) > V_d(t0) (b = {})", snap.b)));
    }
    match cfg.scenario {
        Scenario::InstFinite => {}
        Scenario::InstBounded => {
            let h = trigger::h_ch(&snap, consts);
            if !(h <= S::lit(2.0).powi(consts.pbar as i32)) {
                return Err(SimError::InitialCondition(format!("h_ch(t0) = {h} > 2^p̄")));
            }
        }
        Scenario::NonInstBounded => {
            let lv = trigger::hbar_ch(consts.max_delay, snap.b, snap.eps, snap.eps * trigger::pow2_neg(consts.pbar), consts);
            if !(lv <= S::one()) {
                return Err(SimError::InitialCondition(format!("h̄_ch(TM, …) = {lv} > 1 at t0")));
            }
        }
    }
    Ok(())
}

/// Event loop state.
struct Runner<'a, S: Scalar> {
    cfg: &'a ScenarioConfig<S>,
    plant: &'a PlantSpec<S>,
    consts: &'a DesignConstants<S>,
    stepper: Stepper<'a, S>,
    t: S,
    x: Vec<S>,
    enc: CodecState<S>,
    dec: CodecState<S>,
    pending: Option<(Packet<S>, Packet<S>)>,
    prev_b: Option<S>,
    /// `(t, b, ε)` right after the latest reception (or t0).
    anchor: (S, S, S),
    trace: SimTrace<S>,
}

impl<'a, S: Scalar> Runner<'a, S> {
    fn snapshot_at(&self, t: S, x: &[S], de: S) -> TriggerSnapshot<S> {
        TriggerSnapshot::new(t, x, de, self.consts)
    }

    fn snapshot(&self) -> TriggerSnapshot<S> {
        self.snapshot_at(self.t, &self.x, self.enc.de_at(self.t, self.plant))
    }

    fn record_sample(&mut self) {
        let snap = self.snapshot();
        self.trace.samples.push(Sample {
            t: self.t,
            x: self.x.clone(),
            xhat: self.dec.xhat().to_vec(),
            v: snap.b * snap.vd,
            vd: snap.vd,
            b: snap.b,
            de: snap.de,
            eps: snap.eps,
        });
        self.compare_codecs();
    }

    fn compare_codecs(&mut self) {
        self.trace.stats.codec_comparisons += 1;
        if !self.enc.same_shared_state(&self.dec) {
            self.trace.stats.codec_mismatches += 1;
        }
    }

    /// Invariant checks at the current time.
    fn check(&mut self) -> Result<(), SimError> {
        let snap = self.snapshot();
        let st = &mut self.trace.stats;
        st.max_perf_ratio = st.max_perf_ratio.max(snap.b.as_f64());
        if snap.b > S::one() + S::lit(PERF_TOL) {
            return Err(SimError::Performance { t: self.t.as_f64(), ratio: snap.b.as_f64() });
        }
        let err = self.dec.error_inf(&self.x);
        let ratio = if snap.de > S::zero() { err / snap.de } else if err == S::zero() { S::zero() } else { S::infinity() };
        st.max_cert_ratio = st.max_cert_ratio.max(ratio.as_f64());
        if ratio > S::one() + S::lit(CERT_TOL) {
            return Err(SimError::Certification { t: self.t.as_f64(), ratio: ratio.as_f64() });
        }
        if self.cfg.track_bounds {
            let (ta, ba, ea) = self.anchor;
            let tau = self.t - ta;
            let bt = trigger::btilde(tau, ba, ea, self.consts);
            if bt > S::zero() {
                st.max_btilde_ratio = st.max_btilde_ratio.max((snap.b / bt).as_f64());
            }
            // the h̄_ch bound is stated from the bound's own reference time
            if self.enc.t_ref() == ta {
                let hb = trigger::hbar_ch(tau, ba, ea, ea, self.consts);
                if hb > S::zero() && hb.is_finite() {
                    let h = trigger::h_ch(&snap, self.consts);
                    st.max_hbar_ratio = st.max_hbar_ratio.max((h / hb).as_f64());
                }
            }
        }
        Ok(())
    }

    fn reset_anchor(&mut self) {
        let snap = self.snapshot();
        self.anchor = (self.t, snap.b, snap.eps);
    }

    /// Clause that fires at the given state, if any.
    fn fires(&self, snap: &TriggerSnapshot<S>) -> Option<Cause> {
        trigger::trigger_check(self.cfg.scenario, snap, self.prev_b, self.consts)
    }

    fn clause_level(&self, cause: Cause, snap: &TriggerSnapshot<S>) -> S {
        let lv = trigger::trigger_levels(self.cfg.scenario, snap, self.consts);
        match cause {
            Cause::Performance => lv.performance,
            Cause::Channel => lv.channel,
        }
    }

    /// State after a partial step of length `s` from the current state.
    fn probe(&self, s: S) -> (Vec<S>, Vec<S>, Matrix<S>, TriggerSnapshot<S>) {
        let (x1, xh1, prop) = self.stepper.step(self.t, &self.x, self.dec.xhat(), s);
        let t1 = self.t + s;
        let snap = self.snapshot_at(t1, &x1, self.enc.de_at(t1, self.plant));
        (x1, xh1, prop, snap)
    }

    /// Earliest crossing of 1 by the clause's level in `(0, s]`.
    fn localize(&self, cause: Cause, s: S) -> S {
        let mut lo = S::zero();
        let mut hi = s;
        let tol = S::lit(EVENT_TOL).max(S::epsilon() * (self.t.abs() + s));
        while hi - lo > tol {
            let mid = lo + (hi - lo) / S::lit(2.0);
            if mid <= lo || mid >= hi {
                break;
            }
            let (_, _, _, snap) = self.probe(mid);
            if self.clause_level(cause, &snap) >= S::one() {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    fn advance(&mut self, x1: Vec<S>, prop: &Matrix<S>, s: S) {
        self.x = x1;
        self.enc.flow_with(prop);
        self.dec.flow_with(prop);
        self.t = self.t + s;
        self.trace.stats.steps += 1;
    }

    fn transmit(&mut self, cause: Cause) -> Result<(), SimError> {
        let t = self.t;
        let snap = self.snapshot();
        let lower = trigger::min_bits(self.cfg.scenario, &snap, self.consts)?;
        let k = self.trace.events.len() + 1;
        let bounded = self.cfg.scenario.is_bounded();
        let pbar = self.consts.pbar;
        let p = match self.cfg.pk_overrides.get(&k) {
            Some(&req) if bounded => req.max(lower).min(pbar.max(lower)),
            Some(&req) => req.max(lower),
            None => lower,
        };
        if bounded && p > pbar {
            return Err(SimError::BitBudget { t: t.as_f64(), p, pbar });
        }
        let n = self.plant.dim();
        let delay = self.cfg.channel.delay(n, p);
        let packet = self.enc.encoder_transmit(&self.x, t, p, delay, self.plant)?;
        // the decoder only sees the wire bytes and the shared clock
        let wire = Packet::from_bytes(&packet.to_bytes(), n, packet.t_send, packet.t_receive)?;
        let cumulative = self.trace.events.last().map_or(0, |e| e.cumulative_bits) + packet.bits() as u64;
        self.trace.events.push(EventRecord {
            k,
            t_send: t,
            t_receive: packet.t_receive,
            p,
            p_min: lower,
            bits: packet.bits(),
            cause,
            b: snap.b,
            eps: snap.eps,
            cumulative_bits: cumulative,
        });
        self.pending = Some((packet, wire));
        if delay == S::zero() {
            self.receive()?;
        }
        Ok(())
    }

    fn receive(&mut self) -> Result<(), SimError> {
        let (packet, wire) = self.pending.take().expect("reception without a packet");
        self.enc.apply_reception(&packet, Side::Encoder, self.plant)?;
        self.dec.apply_reception(&wire, Side::Decoder, self.plant)?;
        self.compare_codecs();
        if !self.enc.same_shared_state(&self.dec) {
            return Err(SimError::CodecMismatch(self.t.as_f64()));
        }
        self.reset_anchor();
        Ok(())
    }

    /// Event at the current time if a clause fires there.
    fn maybe_fire_here(&mut self) -> Result<(), SimError> {
        let snap = self.snapshot();
        if let Some(cause) = self.fires(&snap) {
            self.transmit(cause)?;
            self.check()?;
        }
        self.prev_b = Some(self.snapshot().b);
        Ok(())
    }

    fn run(&mut self) -> Result<(), SimError> {
        let h = self.cfg.step;
        let t_end = self.cfg.horizon;
        let mut j: u64 = 0;
        let grid = |j: u64| (S::from_u64(j).expect("step count") * h).min(t_end);
        self.check()?;
        self.record_sample();
        if t_end > S::zero() {
            self.maybe_fire_here()?;
        }
        while self.t < t_end {
            let grid_next = grid(j + 1);
            let mut target = grid_next;
            let mut reception_due = false;
            if let Some((pk, _)) = &self.pending {
                if pk.t_receive <= target {
                    target = pk.t_receive.max(self.t);
                    reception_due = true;
                }
            }
            let s = target - self.t;
            if s > S::zero() {
                let (x1, _, prop, snap) = self.probe(s);
                let fired = if self.pending.is_none() { self.fires(&snap) } else { None };
                match fired {
                    None => self.advance(x1, &prop, s),
                    Some(first) => {
                        // localize every clause at or above 1 and keep the earliest
                        let mut best = (self.localize(first, s), first);
                        let other = match first {
                            Cause::Performance => Cause::Channel,
                            Cause::Channel => Cause::Performance,
                        };
                        let other_up = match other {
                            Cause::Channel => self.clause_level(other, &snap) >= S::one(),
                            // the rising condition has already been checked at the step end
                            Cause::Performance => false,
                        };
                        if other_up {
                            let so = self.localize(other, s);
                            if so < best.0 {
                                best = (so, other);
                            }
                        }
                        let (se, cause) = best;
                        let (xe, _, prop_e, _) = self.probe(se);
                        self.advance(xe, &prop_e, se);
                        self.transmit(cause)?;
                        self.check()?;
                        self.prev_b = Some(self.snapshot().b);
                        if self.t >= grid_next {
                            j += 1;
                            if j.is_multiple_of(self.cfg.record_every as u64) || self.t >= t_end {
                                self.record_sample();
                            }
                        }
                        continue;
                    }
                }
            }
            if self.t >= grid_next {
                j += 1;
            }
            let mut fired_here = false;
            if reception_due && self.pending.as_ref().is_some_and(|(pk, _)| pk.t_receive <= self.t) {
                self.receive()?;
                self.check()?;
                fired_here = true;
            } else {
                self.check()?;
            }
            if fired_here {
                // monitoring resumes at the reception instant
                self.maybe_fire_here()?;
            } else if self.pending.is_none() {
                self.prev_b = Some(self.snapshot().b);
            }
            if self.t >= grid_next && (j.is_multiple_of(self.cfg.record_every as u64) || self.t >= t_end) {
                self.record_sample();
            }
        }
        Ok(())
    }
}

/// Simulates one scenario. On an invariant breach the partial trace is
/// returned inside the error.
#[allow(clippy::result_large_err)]
pub fn run<S: Scalar>(
    cfg: &ScenarioConfig<S>,
    plant: &PlantSpec<S>,
    consts: &DesignConstants<S>,
) -> Result<SimTrace<S>, SimFailure<S>> {
    validate(cfg, plant, consts)?;
    let enc = CodecState::new(cfg.xhat0.clone(), cfg.de0, S::zero()).map_err(SimError::from)?;
    let dec = enc.clone();
    let stepper = Stepper::new(plant, &cfg.disturbance, cfg.step);
    let snap0 = TriggerSnapshot::new(S::zero(), &cfg.x0, cfg.de0, consts);
    let mut runner = Runner {
        cfg,
        plant,
        consts,
        stepper,
        t: S::zero(),
        x: cfg.x0.clone(),
        enc,
        dec,
        pending: None,
        prev_b: None,
        anchor: (S::zero(), snap0.b, snap0.eps),
        trace: SimTrace {
            scenario: cfg.scenario,
            n: plant.dim(),
            samples: Vec::new(),
            events: Vec::new(),
            stats: SimStats { max_hbar_ratio: if cfg.track_bounds { 0.0 } else { f64::NAN }, ..SimStats::default() },
        },
    };
    let outcome = runner.run();
    let mut trace = runner.trace;
    trace.finish_stats();
    match outcome {
        Ok(()) => Ok(trace),
        Err(error) => Err(SimFailure { error, trace: Some(trace) }),
    }
}

// ---------------------------------------------------------------------------
// CSV export

pub fn samples_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=n).map(|i| format!("x{i}")));
    h.extend((1..=n).map(|i| format!("xhat{i}")));
    h.extend(["V", "Vd", "b", "de", "eps"].iter().map(|s| s.to_string()));
    h
}

pub const EVENTS_HEADER: [&str; 7] = ["k", "tk", "rk", "pk", "bits", "cause", "cumulative_bits"];

fn num<S: Scalar>(v: S) -> String {
    format!("{:e}", v.as_f64())
}

pub fn write_samples_csv<S: Scalar, W: Write>(trace: &SimTrace<S>, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(samples_header(trace.n))?;
    for s in &trace.samples {
        let mut row = vec![num(s.t)];
        row.extend(s.x.iter().map(|&v| num(v)));
        row.extend(s.xhat.iter().map(|&v| num(v)));
        row.extend([num(s.v), num(s.vd), num(s.b), num(s.de), num(s.eps)]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_events_csv<S: Scalar, W: Write>(trace: &SimTrace<S>, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EVENTS_HEADER)?;
    for e in &trace.events {
        w.write_record([
            e.k.to_string(),
            num(e.t_send),
            num(e.t_receive),
            e.p.to_string(),
            e.bits.to_string(),
            e.cause.as_str().to_string(),
            e.cumulative_bits.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Event row as read back from an events CSV.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct EventRow {
    pub k: usize,
    pub tk: f64,
    pub rk: f64,
    pub pk: u32,
    pub bits: u32,
    pub cause: Cause,
    pub cumulative_bits: u64,
}

pub fn read_events_csv<R: Read>(input: R) -> csv::Result<Vec<EventRow>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().ne(EVENTS_HEADER.iter().copied()) {
        return Err(csv::Error::from(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("unexpected events header: {headers:?}"),
        )));
    }
    r.deserialize().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{self, BenchRun};

    #[test]
    fn zero_error_zero_disturbance_follows_closed_loop() {
        let (plant, _, _) = presets::bench_plant_inputs(0.0, None, 12);
        let x0 = [6.0, -4.0];
        let (x1, xh1) = integrate_step(&x0, &x0, 0.0, 1e-3, &Disturbance::Zero, &plant);
        let exact = mat_exp(plant.abar(), 1e-3).unwrap().mul_vec(&x0);
        assert!(vec_inf_norm(&crate::linalg::vec_sub(&x1, &exact)) < 1e-8);
        assert_eq!(xh1, exact);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let (plant, _, _) = presets::bench_plant_inputs(0.01, None, 12);
        let dist = Disturbance::sincos(0.01);
        let x0 = [6.0, -4.0];
        let xh0 = [5.0, -3.5];
        let end = 0.4;
        let run = |steps: usize| {
            let h = end / steps as f64;
            let mut x = x0.to_vec();
            let mut xh = xh0.to_vec();
            for i in 0..steps {
                let (a, b) = integrate_step(&x, &xh, i as f64 * h, h, &dist, &plant);
                x = a;
                xh = b;
            }
            (x, xh)
        };
        let (c, xh_c) = run(10);
        let (m, _) = run(20);
        let (f, xh_f) = run(40);
        let e1 = vec_inf_norm(&crate::linalg::vec_sub(&c, &m));
        let e2 = vec_inf_norm(&crate::linalg::vec_sub(&m, &f));
        let order = e1 / e2;
        assert!((order - 16.0).abs() < 1.5, "ratio {order}");
        // x̂ follows the exact flow regardless of the step
        assert!(vec_inf_norm(&crate::linalg::vec_sub(&xh_c, &xh_f)) < 1e-12);
    }

    #[test]
    fn disturbance_signals() {
        let mut v = [0.0; 2];
        Disturbance::Zero.eval(3.0, &mut v);
        assert_eq!(v, [0.0, 0.0]);
        let d = Disturbance::sincos(0.01);
        for t in [0.0, 0.7, 13.0] {
            d.eval(t, &mut v);
            assert!((vec_norm2(&v) - 0.01_f64).abs() < 1e-15);
        }
        let ramp = vec![(0.0, vec![0.0, 0.0]), (1.0, vec![0.02, 0.0])];
        assert!(Disturbance::table(ramp, 0.01).is_err());
        let ok = Disturbance::table(vec![(0.0, vec![0.0, 0.0]), (1.0, vec![0.01, 0.0])], 0.01).unwrap();
        ok.eval(0.5, &mut v);
        assert_eq!(v, [0.005, 0.0]);
        ok.eval(5.0, &mut v);
        assert_eq!(v, [0.01, 0.0]);
    }

    #[test]
    fn delay_models() {
        assert_eq!(DelayModel::<f64>::Zero.delay(2, 20), 0.0);
        assert_eq!(DelayModel::Constant { delay: 1e-3 }.delay(2, 5), 1e-3);
        let p = DelayModel::Proportional { per_bit: 1e-5, cap: 3e-4 };
        assert!((p.delay(2, 5) - 1e-4_f64).abs() < 1e-18);
        assert_eq!(p.delay(2, 20), 3e-4);
    }

    #[test]
    fn zero_horizon_gives_empty_trace() {
        let prep = presets::prepare(BenchRun::InstP12, 1e-3).unwrap();
        let cfg = prep.config.clone().with_horizon(0.0);
        let trace = run(&cfg, &prep.plant, &prep.consts).unwrap();
        assert!(trace.events.is_empty());
        assert_eq!(trace.samples.len(), 1);
    }

    #[test]
    fn short_runs_keep_invariants() {
        for which in [BenchRun::InstP12, BenchRun::NonInstDistP20] {
            let prep = presets::prepare(which, 1e-3).unwrap();
            let cfg = prep.config.clone().with_horizon(6.0);
            let trace = run(&cfg, &prep.plant, &prep.consts).unwrap();
            assert!(!trace.events.is_empty());
            assert_eq!(trace.stats.codec_mismatches, 0);
            assert!(trace.stats.max_perf_ratio <= 1.0 + PERF_TOL);
            assert!(trace.stats.max_cert_ratio <= 1.0 + CERT_TOL);
            assert!(trace.stats.max_btilde_ratio <= 1.0 + 1e-9, "{}", trace.stats.max_btilde_ratio);
        }
    }

    #[test]
    fn refuses_bad_initial_conditions() {
        let prep = presets::prepare(BenchRun::InstP12, 1e-3).unwrap();
        let mut cfg = prep.config.clone();
        cfg.de0 = 1.0;
        assert!(matches!(run(&cfg, &prep.plant, &prep.consts).unwrap_err().error, SimError::InitialCondition(_)));
        let mut cfg = prep.config.clone();
        cfg.x0 = vec![60.0, -40.0];
        cfg.de0 = 120.0;
        assert!(matches!(run(&cfg, &prep.plant, &prep.consts).unwrap_err().error, SimError::InitialCondition(_)));
        let mut cfg = prep.config.clone();
        cfg.channel = DelayModel::Constant { delay: 1e-3 };
        assert!(matches!(run(&cfg, &prep.plant, &prep.consts).unwrap_err().error, SimError::Config(_)));
    }

    #[test]
    fn csv_round_trip() {
        let prep = presets::prepare(BenchRun::InstP12, 1e-3).unwrap();
        let cfg = prep.config.clone().with_horizon(5.0);
        let trace = run(&cfg, &prep.plant, &prep.consts).unwrap();
        let mut buf = Vec::new();
        write_events_csv(&trace, &mut buf).unwrap();
        let rows = read_events_csv(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), trace.events.len());
        for (r, e) in rows.iter().zip(&trace.events) {
            assert_eq!((r.k, r.pk, r.bits, r.cause, r.cumulative_bits), (e.k, e.p, e.bits, e.cause, e.cumulative_bits));
            assert_eq!(r.tk, e.t_send);
        }
        let mut buf = Vec::new();
        write_samples_csv(&trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x1,x2,xhat1,xhat2,V,Vd,b,de,eps\n"));
    }
}
