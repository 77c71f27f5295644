//! The two-dimensional benchmark plant and its reference runs.

use crate::design::{derive_constants, DesignConstants, DesignError, DesignOptions, PerformanceSpec, PlantSpec};
use crate::linalg::{solve_lyapunov, sym_eig_extrema, Matrix};
use crate::scalar::Scalar;
use crate::simulator::{DelayModel, Disturbance, ScenarioConfig};
use crate::trigger::Scenario;

/// Maximum communication time of the non-instantaneous reference runs.
pub const BENCH_TM: f64 = 1.1e-3;

/// Disturbance bound of the disturbed reference run.
pub const BENCH_NU: f64 = 0.01;

pub const BENCH_X0: [f64; 2] = [6.0, -4.0];

pub const BENCH_HORIZON: f64 = 40.0;

/// `(A, B, K, Q)` of the benchmark plant.
pub fn bench_matrices<S: Scalar>() -> (Matrix<S>, Matrix<S>, Matrix<S>, Matrix<S>) {
    let l = S::lit;
    let a = Matrix::from_rows(&[vec![l(1.0), l(-2.0)], vec![l(1.0), l(4.0)]]).expect("2x2");
    let b = Matrix::from_rows(&[vec![l(0.0)], vec![l(1.0)]]).expect("2x1");
    let k = Matrix::from_rows(&[vec![l(2.0), l(-8.0)]]).expect("1x2");
    (a, b, k, Matrix::identity(2))
}

/// Plant, performance and design options of the benchmark:
/// `β = 0.8·λm(Q)/λM(P)`, `V_d0 = 1.1·V(x0)`, `a = 1.2`, `σ = 0.9`, `T = 0.5·Γ₁(1,1)`.
pub fn bench_inputs<S: Scalar>(nu: S, v0: Option<S>, pbar: u32) -> (PlantSpec<S>, PerformanceSpec<S>, DesignOptions<S>) {
    let (a, b, k, q) = bench_matrices::<S>();
    let plant = PlantSpec::new(a, b, k, q, nu).expect("benchmark plant is valid");
    let p = solve_lyapunov(plant.abar(), plant.q()).expect("Hurwitz");
    let (_, lmax_p) = sym_eig_extrema(&p).expect("symmetric");
    let (lmin_q, _) = sym_eig_extrema(plant.q()).expect("symmetric");
    let beta = S::lit(0.8) * lmin_q / lmax_p;
    let x0 = [S::lit(BENCH_X0[0]), S::lit(BENCH_X0[1])];
    let vd0 = S::lit(1.1) * p.quad_form(&x0);
    let mut perf = PerformanceSpec::new(vd0, beta);
    if let Some(v) = v0 {
        perf = perf.with_v0(v);
    } else if nu == S::zero() {
        perf = perf.with_v0(S::zero());
    }
    (plant, perf, DesignOptions::new(pbar))
}

/// f64 form used throughout the tests.
pub fn bench_plant_inputs(nu: f64, v0: Option<f64>, pbar: u32) -> (PlantSpec<f64>, PerformanceSpec<f64>, DesignOptions<f64>) {
    bench_inputs(nu, v0, pbar)
}

pub fn bench_constants_generic<S: Scalar>(nu: f64, pbar: u32, tm: Option<f64>) -> Result<DesignConstants<S>, DesignError> {
    let (plant, perf, mut opts) = bench_inputs::<S>(S::lit(nu), None, pbar);
    if let Some(tm) = tm {
        opts = opts.with_max_delay(S::lit(tm));
    }
    derive_constants(&plant, &perf, &opts)
}

pub fn bench_constants(nu: f64, pbar: u32, tm: Option<f64>) -> Result<DesignConstants<f64>, DesignError> {
    bench_constants_generic(nu, pbar, tm)
}

/// Reference runs on the benchmark plant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BenchRun {
    /// Instantaneous, `p̄ = 12`, no disturbance.
    InstP12,
    /// Instantaneous, `p̄ = 20`, no disturbance.
    InstP20,
    /// Delayed (`Δ_k = T_M`), `p̄ = 20`, `ν = 0.01`.
    NonInstDistP20,
    /// Delayed, `p̄ = 20`, no disturbance, minimum bits.
    Sim1,
    /// As `Sim1` with `p_k = p̄` for the first four events.
    Sim2,
}

impl BenchRun {
    pub const ALL: [BenchRun; 5] =
        [BenchRun::InstP12, BenchRun::InstP20, BenchRun::NonInstDistP20, BenchRun::Sim1, BenchRun::Sim2];

    pub fn name(self) -> &'static str {
        match self {
            BenchRun::InstP12 => "inst_p12",
            BenchRun::InstP20 => "inst_p20",
            BenchRun::NonInstDistP20 => "noninst_dist_p20",
            BenchRun::Sim1 => "sim1",
            BenchRun::Sim2 => "sim2",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name() == name)
    }

    pub fn scenario(self) -> Scenario {
        match self {
            BenchRun::InstP12 | BenchRun::InstP20 => Scenario::InstBounded,
            _ => Scenario::NonInstBounded,
        }
    }

    pub fn pbar(self) -> u32 {
        match self {
            BenchRun::InstP12 => 12,
            _ => 20,
        }
    }

    pub fn nu(self) -> f64 {
        match self {
            BenchRun::NonInstDistP20 => BENCH_NU,
            _ => 0.0,
        }
    }

    pub fn max_delay(self) -> Option<f64> {
        match self.scenario() {
            Scenario::NonInstBounded => Some(BENCH_TM),
            _ => None,
        }
    }
}

/// Everything needed to simulate one reference run.
#[derive(Debug, Clone)]
pub struct Prepared<S> {
    pub plant: PlantSpec<S>,
    pub perf: PerformanceSpec<S>,
    pub opts: DesignOptions<S>,
    pub consts: DesignConstants<S>,
    pub config: ScenarioConfig<S>,
}

pub fn prepare_generic<S: Scalar>(run: BenchRun, step: S) -> Result<Prepared<S>, DesignError> {
    let (plant, perf, mut opts) = bench_inputs::<S>(S::lit(run.nu()), None, run.pbar());
    if let Some(tm) = run.max_delay() {
        opts = opts.with_max_delay(S::lit(tm));
    }
    let consts = derive_constants(&plant, &perf, &opts)?;
    let x0: Vec<S> = BENCH_X0.iter().map(|&v| S::lit(v)).collect();
    let de0 = S::lit(2.0) * x0.iter().fold(S::zero(), |m, v| m.max(v.abs()));
    let mut config = ScenarioConfig::new(run.scenario(), x0, de0)
        .with_step(step)
        .with_horizon(S::lit(BENCH_HORIZON));
    if let Some(tm) = run.max_delay() {
        config.channel = DelayModel::Constant { delay: S::lit(tm) };
    }
    if run.nu() > 0.0 {
        config.disturbance = Disturbance::sincos(S::lit(run.nu()));
    }
    config.record_every = ((S::lit(1e-2) / step).round().as_f64() as usize).max(1);
    if run == BenchRun::Sim2 {
        config.pk_overrides = (1..=4).map(|k| (k, run.pbar())).collect();
    }
    Ok(Prepared { plant, perf, opts, consts, config })
}

pub fn prepare(run: BenchRun, step: f64) -> Result<Prepared<f64>, DesignError> {
    prepare_generic(run, step)
}
