//! Plant and performance inputs, and the constants the triggers consume.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, inf_norm, mat_exp, spectral_norm, sym_eig_extrema, LinalgError, Matrix};
use crate::scalar::Scalar;
use crate::trigger;

/// `‖A‖₂` below which `(e^{‖A‖τ} − 1)/‖A‖` is replaced by its limit.
pub const NORM_A_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DesignError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("convergence rate infeasible: W ≤ 0 (W = {0:e})")]
    ConvergenceRateInfeasible(f64),
    #[error("disturbance/V0 incompatible: V0 = {v0:e} is below the required {required:e}")]
    DisturbanceV0Incompatible { v0: f64, required: f64 },
    #[error("delay bound violated: TM = {tm:e} must be below min{{Γ11, T, T*}} = {bound:e}")]
    DelayBound { tm: f64, bound: f64 },
    #[error("Γ1(1,1) is not positive ({0:e})")]
    Gamma11NotPositive(f64),
}

pub type Result<T> = std::result::Result<T, DesignError>;

/// Plant `ẋ = Ax + Bu + v`, `u = Kx̂`, `‖v‖₂ ≤ ν`, with Lyapunov weight `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantSpec<S> {
    a: Matrix<S>,
    b: Matrix<S>,
    k: Matrix<S>,
    q: Matrix<S>,
    nu: S,
    abar: Matrix<S>,
    bk: Matrix<S>,
    norm_a: S,
    norm_a_inf: S,
}

impl<S: Scalar> PlantSpec<S> {
    pub fn new(a: Matrix<S>, b: Matrix<S>, k: Matrix<S>, q: Matrix<S>, nu: S) -> Result<Self> {
        let n = a.rows();
        if !a.is_square() {
            return Err(LinalgError::NotSquare { rows: a.rows(), cols: a.cols() }.into());
        }
        if b.rows() != n {
            return Err(DesignError::InvalidInput(format!("B has {} rows, expected {n}", b.rows())));
        }
        if k.rows() != b.cols() || k.cols() != n {
            return Err(DesignError::InvalidInput(format!(
                "K is {}x{}, expected {}x{n}",
                k.rows(),
                k.cols(),
                b.cols()
            )));
        }
        if q.rows() != n || q.cols() != n {
            return Err(DesignError::InvalidInput(format!("Q is {}x{}, expected {n}x{n}", q.rows(), q.cols())));
        }
        if !(nu >= S::zero()) || !nu.is_finite() {
            return Err(DesignError::InvalidInput(format!("ν must be finite and ≥ 0, got {nu}")));
        }
        linalg::require_positive_definite(&q)?;
        let bk = &b * &k;
        let abar = &a + &bk;
        let abscissa = linalg::spectral_abscissa(&abar)?;
        if abscissa >= S::zero() {
            return Err(LinalgError::NotHurwitz(abscissa.as_f64()).into());
        }
        let norm_a = spectral_norm(&a)?;
        let norm_a_inf = inf_norm(&a);
        Ok(Self { a, b, k, q, nu, abar, bk, norm_a, norm_a_inf })
    }

    pub fn dim(&self) -> usize {
        self.a.rows()
    }
    pub fn a(&self) -> &Matrix<S> {
        &self.a
    }
    pub fn b(&self) -> &Matrix<S> {
        &self.b
    }
    pub fn k(&self) -> &Matrix<S> {
        &self.k
    }
    pub fn q(&self) -> &Matrix<S> {
        &self.q
    }
    pub fn nu(&self) -> S {
        self.nu
    }
    /// `Ā = A + BK`.
    pub fn abar(&self) -> &Matrix<S> {
        &self.abar
    }
    pub fn bk(&self) -> &Matrix<S> {
        &self.bk
    }
    /// `‖A‖₂`.
    pub fn norm_a(&self) -> S {
        self.norm_a
    }
    /// `‖A‖∞`.
    pub fn norm_a_inf(&self) -> S {
        self.norm_a_inf
    }

    /// `‖e^{Aτ}‖∞ δ + (ν/‖A‖)(e^{‖A‖τ} − 1)`.
    pub fn de_flow(&self, delta: S, tau: S) -> S {
        let grow = inf_norm(&mat_exp(&self.a, tau).expect("validated plant matrix"));
        grow * delta + self.disturbance_spread(tau)
    }

    /// `(ν/‖A‖)(e^{‖A‖τ} − 1)`, or `ντ` when `‖A‖` vanishes.
    pub fn disturbance_spread(&self, tau: S) -> S {
        if self.nu == S::zero() {
            return S::zero();
        }
        self.nu * expm1_div_guarded(self.norm_a, tau)
    }
}

/// `(e^{aτ} − 1)/a` with the `a → 0` limit below [`NORM_A_FLOOR`].
pub(crate) fn expm1_div_guarded<S: Scalar>(a: S, tau: S) -> S {
    if a < S::lit(NORM_A_FLOOR) {
        tau
    } else {
        crate::scalar::expm1_div(a, tau)
    }
}

/// Desired envelope `V_d(t) = (V_d0 − V0)e^{−βt} + V0` and its margins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceSpec<S> {
    pub vd0: S,
    /// Steady-state level; `None` picks the smallest admissible value.
    pub v0: Option<S>,
    pub beta: S,
    /// Margin constant `a > 1`.
    pub margin: S,
    /// Disturbance margin `σ ∈ (0, 1)`.
    pub sigma: S,
}

impl<S: Scalar> PerformanceSpec<S> {
    pub fn new(vd0: S, beta: S) -> Self {
        Self { vd0, v0: None, beta, margin: S::lit(1.2), sigma: S::lit(0.9) }
    }

    pub fn with_v0(mut self, v0: S) -> Self {
        self.v0 = Some(v0);
        self
    }

    pub fn with_margin(mut self, a: S) -> Self {
        self.margin = a;
        self
    }

    pub fn with_sigma(mut self, sigma: S) -> Self {
        self.sigma = sigma;
        self
    }
}

/// How the look-ahead horizon `T` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LookAhead<S> {
    Absolute(S),
    /// `T = f·Γ₁(1,1)`.
    Gamma11Fraction(S),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignOptions<S> {
    pub look_ahead: LookAhead<S>,
    pub pbar: u32,
    /// Maximum communication time `T_M`; `None` for instantaneous channels.
    pub max_delay: Option<S>,
}

impl<S: Scalar> DesignOptions<S> {
    pub fn new(pbar: u32) -> Self {
        Self { look_ahead: LookAhead::Gamma11Fraction(S::lit(0.5)), pbar, max_delay: None }
    }

    pub fn with_max_delay(mut self, tm: S) -> Self {
        self.max_delay = Some(tm);
        self
    }

    pub fn with_look_ahead(mut self, la: LookAhead<S>) -> Self {
        self.look_ahead = la;
        self
    }
}

/// Every derived scalar used by the codec, triggers and rate bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignConstants<S> {
    pub n: usize,
    pub a: Matrix<S>,
    pub p: Matrix<S>,
    pub lambda_min_p: S,
    pub lambda_max_p: S,
    pub lambda_min_q: S,
    /// `‖P‖₂`.
    pub norm_p: S,
    /// `‖A‖₂`.
    pub norm_a: S,
    /// `‖A‖∞`.
    pub norm_a_inf: S,
    pub nu: S,
    pub beta: S,
    pub vd0: S,
    pub v0: S,
    /// `W = λm(Q)/λM(P) − aβ`.
    pub decay_margin: S,
    /// `w = λm(Q)/λM(P) − β`.
    pub decay_excess: S,
    /// `θ = ‖A‖₂ + β/2`.
    pub growth_rate: S,
    /// `θ̄ = ‖A‖∞ + β/2`.
    pub growth_rate_inf: S,
    /// `c = W√λm(P)/(2√n‖PBK‖₂)`.
    pub eps_scale: S,
    /// `c1 = 2‖P‖ν/(√λm(P)√V0)`.
    pub dist_offset: S,
    /// `c2 = Wν/(c‖A‖√V0)`; reported only, evaluations go through `dist_gain`.
    pub dist_growth: S,
    /// `k2 = c2‖A‖ = Wν/(c√V0)`.
    pub dist_gain: S,
    /// `ν/(c√V0)`, the scale of `α(τ)`.
    pub alpha_gain: S,
    /// `c3 = (w+θ)/(W(e^{(w+θ)T} − 1))`.
    pub rho_slope: S,
    /// Look-ahead horizon `T`.
    pub look_ahead: S,
    /// `Γ₁(1,1)`.
    pub gamma11: S,
    /// `T*` for `pbar`.
    pub t_star: S,
    /// `T_M` (zero for instantaneous channels).
    pub max_delay: S,
    pub pbar: u32,
    /// `‖e^{A T_M}‖∞`, cached for the non-instantaneous trigger.
    pub exp_a_tm_inf: S,
}

impl<S: Scalar> DesignConstants<S> {
    /// `V_d(t)` with `t0 = 0`.
    pub fn vd(&self, t: S) -> S {
        (self.vd0 - self.v0) * (-self.beta * t).exp() + self.v0
    }

    /// `ρ_T(0)`.
    pub fn rho0(&self) -> S {
        self.rho_slope + S::one()
    }

    /// Horizon for crossing searches: `10⁴·max{Γ11, T}`.
    pub fn root_horizon(&self) -> S {
        S::lit(1e4) * self.gamma11.max(self.look_ahead)
    }

    /// Lower bound on `min{Γ11, T, T*}`.
    pub fn delay_bound(&self) -> S {
        self.gamma11.min(self.look_ahead).min(self.t_star)
    }

    /// `‖e^{Aτ}‖∞`.
    pub fn exp_a_inf(&self, tau: S) -> S {
        if tau == self.max_delay {
            return self.exp_a_tm_inf;
        }
        inf_norm(&mat_exp(&self.a, tau).expect("validated plant matrix"))
    }
}

/// Smallest admissible `V0`: `(2‖P‖ν/(σ(a−1)β√λm(P)))²`.
pub fn v0_lower_bound<S: Scalar>(norm_p: S, lambda_min_p: S, nu: S, perf: &PerformanceSpec<S>) -> S {
    let root = S::lit(2.0) * norm_p * nu / (perf.sigma * (perf.margin - S::one()) * perf.beta * lambda_min_p.sqrt());
    root * root
}

fn check_perf<S: Scalar>(perf: &PerformanceSpec<S>) -> Result<()> {
    let bad = |msg: String| Err(DesignError::InvalidInput(msg));
    if !(perf.vd0 > S::zero()) || !perf.vd0.is_finite() {
        return bad(format!("Vd0 must be > 0, got {}", perf.vd0));
    }
    if !(perf.beta > S::zero()) || !perf.beta.is_finite() {
        return bad(format!("β must be > 0, got {}", perf.beta));
    }
    if !(perf.margin > S::one()) || !perf.margin.is_finite() {
        return bad(format!("a must be > 1, got {}", perf.margin));
    }
    if !(perf.sigma > S::zero() && perf.sigma < S::one()) {
        return bad(format!("σ must lie in (0, 1), got {}", perf.sigma));
    }
    if let Some(v0) = perf.v0 {
        if !(v0 >= S::zero()) || !(v0 < perf.vd0) {
            return bad(format!("need Vd0 > V0 ≥ 0, got V0 = {v0}, Vd0 = {}", perf.vd0));
        }
    }
    Ok(())
}

/// Derives every constant the triggers need.
///
/// `T_M` feasibility is checked here; the remaining standing assumptions are
/// reported by [`validate_assumptions`].
pub fn derive_constants<S: Scalar>(
    plant: &PlantSpec<S>,
    perf: &PerformanceSpec<S>,
    opts: &DesignOptions<S>,
) -> Result<DesignConstants<S>> {
    let consts = derive_unchecked(plant, perf, opts)?;
    if consts.max_delay > S::zero() && consts.max_delay >= consts.delay_bound() {
        return Err(DesignError::DelayBound { tm: consts.max_delay.as_f64(), bound: consts.delay_bound().as_f64() });
    }
    Ok(consts)
}

/// As [`derive_constants`] but without the `T_M` check, so that a report can
/// still be produced for an infeasible delay.
pub fn derive_unchecked<S: Scalar>(
    plant: &PlantSpec<S>,
    perf: &PerformanceSpec<S>,
    opts: &DesignOptions<S>,
) -> Result<DesignConstants<S>> {
    check_perf(perf)?;
    if opts.pbar == 0 {
        return Err(DesignError::InvalidInput("pbar must be ≥ 1".into()));
    }
    let n = plant.dim();
    let p = linalg::solve_lyapunov(plant.abar(), plant.q())?;
    let (lambda_min_p, lambda_max_p) = sym_eig_extrema(&p)?;
    let (lambda_min_q, _) = sym_eig_extrema(plant.q())?;
    let norm_p = lambda_max_p;
    let ratio = lambda_min_q / lambda_max_p;
    let decay_margin = ratio - perf.margin * perf.beta;
    if !(decay_margin > S::zero()) {
        return Err(DesignError::ConvergenceRateInfeasible(decay_margin.as_f64()));
    }
    let decay_excess = ratio - perf.beta;
    let norm_a = plant.norm_a();
    let growth_rate = norm_a + perf.beta / S::lit(2.0);
    let growth_rate_inf = plant.norm_a_inf() + perf.beta / S::lit(2.0);
    let pbk = spectral_norm(&(&p * plant.bk()))?;
    if !(pbk > S::zero()) {
        return Err(DesignError::InvalidInput("‖PBK‖ vanishes; the feedback gain is zero".into()));
    }
    let eps_scale = decay_margin * lambda_min_p.sqrt() / (S::lit(2.0) * S::from_usize_lossy(n).sqrt() * pbk);

    let nu = plant.nu();
    let v0 = if nu > S::zero() {
        let required = v0_lower_bound(norm_p, lambda_min_p, nu, perf);
        match perf.v0 {
            None => required,
            Some(v0) if v0 >= required * (S::one() - S::tol(1e-12)) => v0,
            Some(v0) => {
                return Err(DesignError::DisturbanceV0Incompatible { v0: v0.as_f64(), required: required.as_f64() })
            }
        }
    } else {
        perf.v0.unwrap_or(S::zero())
    };
    if !(v0 < perf.vd0) {
        return Err(DesignError::InvalidInput(format!("need Vd0 > V0, got V0 = {v0}, Vd0 = {}", perf.vd0)));
    }

    let (dist_offset, dist_gain, alpha_gain) = if nu > S::zero() {
        let sv0 = v0.sqrt();
        (
            S::lit(2.0) * norm_p * nu / (lambda_min_p.sqrt() * sv0),
            decay_margin * nu / (eps_scale * sv0),
            nu / (eps_scale * sv0),
        )
    } else {
        (S::zero(), S::zero(), S::zero())
    };
    let dist_growth = if dist_gain == S::zero() { S::zero() } else { dist_gain / norm_a };

    let mut consts = DesignConstants {
        n,
        a: plant.a().clone(),
        p,
        lambda_min_p,
        lambda_max_p,
        lambda_min_q,
        norm_p,
        norm_a,
        norm_a_inf: plant.norm_a_inf(),
        nu,
        beta: perf.beta,
        vd0: perf.vd0,
        v0,
        decay_margin,
        decay_excess,
        growth_rate,
        growth_rate_inf,
        eps_scale,
        dist_offset,
        dist_growth,
        dist_gain,
        alpha_gain,
        rho_slope: S::nan(),
        look_ahead: S::nan(),
        gamma11: S::nan(),
        t_star: S::nan(),
        max_delay: S::zero(),
        pbar: opts.pbar,
        exp_a_tm_inf: S::one(),
    };

    let search = trigger::RootOptions::with_horizon(S::lit(1e6));
    consts.gamma11 = trigger::gamma1_with(S::one(), S::one(), &consts, &search);
    if !(consts.gamma11 > S::zero()) || !consts.gamma11.is_finite() {
        return Err(DesignError::Gamma11NotPositive(consts.gamma11.as_f64()));
    }
    consts.look_ahead = match opts.look_ahead {
        LookAhead::Absolute(t) => t,
        LookAhead::Gamma11Fraction(f) => f * consts.gamma11,
    };
    if !(consts.look_ahead > S::zero()) || !consts.look_ahead.is_finite() {
        return Err(DesignError::InvalidInput(format!("look-ahead T must be > 0, got {}", consts.look_ahead)));
    }
    let wt = decay_excess + growth_rate;
    consts.rho_slope = wt / (decay_margin * (wt * consts.look_ahead).exp_m1());
    consts.t_star = trigger::t_star_with(opts.pbar, &consts, &trigger::RootOptions::for_constants(&consts));

    if let Some(tm) = opts.max_delay {
        if !(tm >= S::zero()) || !tm.is_finite() {
            return Err(DesignError::InvalidInput(format!("TM must be finite and ≥ 0, got {tm}")));
        }
        consts.max_delay = tm;
        consts.exp_a_tm_inf = inf_norm(&mat_exp(plant.a(), tm)?);
    }
    Ok(consts)
}

/// One line of an assumption report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub condition: &'static str,
    pub passed: bool,
    /// Value of the tested quantity, or NaN when it could not be computed.
    pub value: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub checks: Vec<Check>,
    /// Whether the necessary-rate formulas apply on the whole state space.
    pub necessary_rate_applies: bool,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl std::fmt::Display for AssumptionReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{:<6} {:<18} {:<34} {:>14.6e}  {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.condition,
                c.value,
                c.detail
            )?;
        }
        writeln!(f, "necessary-rate bound applies without restriction: {}", self.necessary_rate_applies)
    }
}

/// Checks the standing assumptions. Never fails; problems are reported.
///
/// `consts` may be `None` when derivation itself failed.
pub fn validate_assumptions<S: Scalar>(
    plant: &PlantSpec<S>,
    perf: &PerformanceSpec<S>,
    consts: Option<&DesignConstants<S>>,
) -> AssumptionReport {
    let mut checks = Vec::new();
    let abscissa = linalg::spectral_abscissa(plant.abar()).map(|v| v.as_f64()).unwrap_or(f64::NAN);
    checks.push(Check {
        name: "hurwitz",
        condition: "max Re σ(A+BK) < 0",
        passed: abscissa < 0.0,
        value: abscissa,
        detail: String::new(),
    });

    let lyap = linalg::solve_lyapunov(plant.abar(), plant.q());
    let extrema = lyap.as_ref().ok().and_then(|p| sym_eig_extrema(p).ok());
    let lmq = sym_eig_extrema(plant.q()).map(|e| e.0.as_f64()).unwrap_or(f64::NAN);
    let (lmp, lmaxp) = extrema.map(|(a, b)| (a.as_f64(), b.as_f64())).unwrap_or((f64::NAN, f64::NAN));
    let w_margin = lmq / lmaxp - perf.margin.as_f64() * perf.beta.as_f64();
    checks.push(Check {
        name: "convergence_rate",
        condition: "W = λm(Q)/λM(P) − aβ > 0",
        passed: w_margin > 0.0,
        value: w_margin,
        detail: if w_margin > 0.0 { String::new() } else { "W ≤ 0".into() },
    });

    if plant.nu() > S::zero() {
        let required = if lmp.is_finite() {
            v0_lower_bound(S::lit(lmaxp), S::lit(lmp), plant.nu(), perf).as_f64()
        } else {
            f64::NAN
        };
        let v0 = consts.map(|c| c.v0.as_f64()).or(perf.v0.map(|v| v.as_f64())).unwrap_or(required);
        let ok = v0 >= required * (1.0 - 1e-12);
        checks.push(Check {
            name: "steady_state_level",
            condition: "√V0 ≥ 2‖P‖ν/(σ(a−1)β√λm(P))",
            passed: ok,
            value: v0,
            detail: format!("required V0 ≥ {required:.6e}"),
        });
    }

    if let Some(c) = consts {
        let g = c.gamma11.as_f64();
        checks.push(Check {
            name: "gamma11",
            condition: "Γ1(1,1) > 0",
            passed: g > 0.0 && g.is_finite(),
            value: g,
            detail: String::new(),
        });
        let pbits = c.n as u64 * c.pbar as u64;
        checks.push(Check {
            name: "packet_width",
            condition: "n·p̄ ≤ 128",
            passed: pbits <= 128,
            value: pbits as f64,
            detail: String::new(),
        });
        if c.max_delay > S::zero() {
            let bound = c.delay_bound().as_f64();
            let tm = c.max_delay.as_f64();
            checks.push(Check {
                name: "delay_bound",
                condition: "TM < min{Γ11, T, T*}",
                passed: tm < bound,
                value: tm,
                detail: format!("min{{Γ11, T, T*}} = {bound:.6e}"),
            });
        }
    }

    // necessary-rate applicability: every eigenvalue of A + βI has Re ≥ 0
    let shifted = plant.a() + &Matrix::identity(plant.dim()).scale(perf.beta);
    let necessary_rate_applies = linalg::min_real_part(&shifted).map(|v| v >= S::zero()).unwrap_or(false);
    AssumptionReport { checks, necessary_rate_applies }
}
