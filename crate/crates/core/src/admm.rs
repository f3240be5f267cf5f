//! Two-block semi-proximal ADMM solvers.
//!
//! `run_spadmm` iterates
//!
//! ```text
//! x_{k+1} = argmin_x L(x, y_k, z_k)     + 1/2 |x - x_k|^2_S
//! y_{k+1} = argmin_y L(x_{k+1}, y, z_k) + 1/2 |y - y_k|^2_T
//! z_{k+1} = z_k - tau*lambda*(A x_{k+1} + B y_{k+1} - c)
//! ```
//!
//! with `L(x,y,z) = f(x) + g(y) - <z, Ax+By-c> + lambda/2 |Ax+By-c|^2`.
//! `run_aspadmm` adds the theta schedule, extrapolation of the second block
//! and a penalty growing as `lambda/theta_k`, with per-iteration proximal
//! metrics `S_k`, `T_k`.  Both fill an [`IterationTrace`] whose bound columns
//! certify the O(1/sqrt(K)) and O(1/K) non-ergodic rate inequalities against
//! a supplied KKT reference.

use crate::linop::{check_psd, extremal_eigenvalue, Extremal, LinearMap, LinopError, Metric};
use crate::prox::{ProxError, ProxFunction};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("problem shape error: {0}")]
    Shape(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("setup PSD check failed on the {side} block: min eigenvalue {min_eig:.3e} (need > {margin:.0e})")]
    SetupPsd {
        side: &'static str,
        min_eig: f64,
        margin: f64,
    },
    #[error("metric schedule condition violated at k = {k} on the {side} block: min eigenvalue of Sigma - (S_{{k+1}} - S_k) is {min_eig:.3e}; use a larger tau or a strongly convex block")]
    ScheduleCondition {
        side: &'static str,
        k: usize,
        min_eig: f64,
    },
    #[error("subproblem failed at iteration {iteration} on the {side} block: {detail}")]
    Subproblem {
        iteration: usize,
        side: &'static str,
        detail: String,
    },
    #[error("block metric is not positive definite")]
    MetricNotPd,
    #[error("metric not proximable: prox strategies need a scaled-identity metric")]
    MetricNotProximable,
    #[error("kkt residual unsupported for this block kind: {0}")]
    KktUnsupported(String),
    #[error("bound constants need a KKT reference triple")]
    MissingReference,
    #[error(transparent)]
    Linop(#[from] LinopError),
    #[error(transparent)]
    Prox(#[from] ProxError),
}

pub type Result<T> = std::result::Result<T, SolverError>;

// ---------------------------------------------------------------------------
// Problem description
// ---------------------------------------------------------------------------

/// Smooth quadratic `1/2 x'Px + q'x + constant`.
#[derive(Debug, Clone)]
pub struct QuadraticPart {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub constant: f64,
}

impl QuadraticPart {
    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x) + self.constant
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.p * x + &self.q
    }
}

/// How a block subproblem is solved.  Declared, not inferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubproblemStrategy {
    /// Dense factorization of the assembled quadratic; requires no prox part.
    LinearSolve,
    /// The assembled metric must already be a scaled identity.
    ProxDirect,
    /// Pair with [`MetricSchedule::LinearizedCurvature`], which cancels the
    /// operator curvature so the metric is a scaled identity by construction.
    ProxLinearized,
}

/// One side (f or g) of the two-block objective.
#[derive(Debug, Clone)]
pub struct BlockSpec {
    pub quadratic: Option<QuadraticPart>,
    pub prox: Option<ProxFunction>,
    /// Strong-convexity operator of the block objective (may be zero).
    pub sigma: Metric,
    pub strategy: SubproblemStrategy,
}

impl BlockSpec {
    pub fn quadratic_only(p: DMatrix<f64>, q: DVector<f64>, constant: f64, dim: usize) -> Self {
        BlockSpec {
            quadratic: Some(QuadraticPart { p, q, constant }),
            prox: None,
            sigma: Metric::zero(dim),
            strategy: SubproblemStrategy::LinearSolve,
        }
    }

    pub fn prox_only(prox: ProxFunction, dim: usize) -> Self {
        BlockSpec {
            quadratic: None,
            prox: Some(prox),
            sigma: Metric::zero(dim),
            strategy: SubproblemStrategy::ProxDirect,
        }
    }

    pub fn zero(dim: usize) -> Self {
        BlockSpec {
            quadratic: None,
            prox: None,
            sigma: Metric::zero(dim),
            strategy: SubproblemStrategy::ProxDirect,
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        let mut v = 0.0;
        if let Some(q) = &self.quadratic {
            v += q.eval(x);
        }
        if let Some(p) = &self.prox {
            v += p.eval(x);
        }
        v
    }

    /// `dist(u, df(x))` where `df = grad(quadratic) + d(prox)`.
    pub fn subgrad_dist(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
        let shifted = match &self.quadratic {
            Some(q) => u - q.gradient(x),
            None => u.clone(),
        };
        match &self.prox {
            Some(p) => Ok(p.subgrad_dist(x, &shifted)?),
            None => Ok(shifted.norm()),
        }
    }
}

/// `min f(x) + g(y)  s.t.  Ax + By = c`.
#[derive(Debug, Clone)]
pub struct TwoBlockProblem {
    pub a: LinearMap,
    pub b: LinearMap,
    pub c: DVector<f64>,
    pub f_block: BlockSpec,
    pub g_block: BlockSpec,
}

impl TwoBlockProblem {
    pub fn validate(&self) -> Result<()> {
        if self.a.codomain_dim() != self.c.len() || self.b.codomain_dim() != self.c.len() {
            return Err(SolverError::Shape(format!(
                "codomains of A ({}) and B ({}) must both match len(c) = {}",
                self.a.codomain_dim(),
                self.b.codomain_dim(),
                self.c.len()
            )));
        }
        if self.f_block.sigma.dim() != self.a.domain_dim() {
            return Err(SolverError::Shape("Sigma_f dimension mismatch".into()));
        }
        if self.g_block.sigma.dim() != self.b.domain_dim() {
            return Err(SolverError::Shape("Sigma_g dimension mismatch".into()));
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        self.f_block.eval(x) + self.g_block.eval(y)
    }

    pub fn feasibility(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        (self.a.apply(x).expect("dim") + self.b.apply(y).expect("dim") - &self.c).norm()
    }
}

// ---------------------------------------------------------------------------
// Configuration and state
// ---------------------------------------------------------------------------

/// Per-iteration rule for the proximal metrics.
#[derive(Clone)]
pub enum MetricSchedule {
    Fixed(Metric),
    /// `S_k = (lambda/theta_k) * T`; the natural scaling of the multi-block
    /// proximal augmented Lagrangian.
    PenaltyScaled(Metric),
    /// `S_k = eta_k I - lambda_k Op'Op` with
    /// `eta_k = lambda_k * lambda_max(Op'Op) * (1 + margin)`: cancels the
    /// operator curvature so nonsmooth blocks stay proximable.
    LinearizedCurvature { margin: f64 },
    /// Arbitrary rule; the Theorem-2 condition is checked numerically over
    /// the configured horizon at setup.
    Rule(Arc<dyn Fn(usize) -> Metric + Send + Sync>),
}

impl std::fmt::Debug for MetricSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MetricSchedule::Fixed(_) => write!(f, "Fixed"),
            MetricSchedule::PenaltyScaled(_) => write!(f, "PenaltyScaled"),
            MetricSchedule::LinearizedCurvature { margin } => {
                write!(f, "LinearizedCurvature(margin={margin})")
            }
            MetricSchedule::Rule(_) => write!(f, "Rule"),
        }
    }
}

impl MetricSchedule {
    pub fn linearized() -> Self {
        MetricSchedule::LinearizedCurvature { margin: 1e-9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMode {
    Spadmm,
    Aspadmm,
}

/// Which kind of point the bound certificates are measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceLabel {
    /// Constructed together with an exact KKT triple.
    Certified,
    /// Obtained from a 10x-tighter solver run; bounds are exact only for
    /// true KKT points, so violations within the solve tolerance may appear.
    TighterSolve,
}

#[derive(Debug, Clone)]
pub struct KktReference {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    pub label: ReferenceLabel,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub mode: SolverMode,
    pub lambda: f64,
    pub tau: f64,
    pub s_schedule: MetricSchedule,
    pub t_schedule: MetricSchedule,
    pub max_iter: usize,
    pub tol_kkt: f64,
    /// Fills the bound columns of the trace when present.
    pub reference: Option<KktReference>,
    /// Horizon for the numeric schedule-condition check of `Rule` schedules.
    pub schedule_check_horizon: usize,
    /// Keep the per-iterate residual vectors `c - Ax_k - By_k` (used by the
    /// summed-residual identity test).
    pub record_residuals: bool,
}

impl SolverConfig {
    pub fn spadmm(lambda: f64, tau: f64) -> Self {
        SolverConfig {
            mode: SolverMode::Spadmm,
            lambda,
            tau,
            s_schedule: MetricSchedule::Fixed(Metric::zero(0)),
            t_schedule: MetricSchedule::Fixed(Metric::zero(0)),
            max_iter: 10_000,
            tol_kkt: 1e-6,
            reference: None,
            schedule_check_horizon: 100,
            record_residuals: false,
        }
    }

    pub fn aspadmm(lambda: f64, tau: f64) -> Self {
        SolverConfig {
            mode: SolverMode::Aspadmm,
            ..SolverConfig::spadmm(lambda, tau)
        }
    }
}

/// `theta_k = 1 / (1 - tau + 1/theta_{k-1})`; with `theta_{-1} = 1/tau` the
/// closed form is `theta_k = 1/(k(1-tau)+1)`.
pub fn theta_next(theta_prev: f64, tau: f64) -> f64 {
    1.0 / (1.0 - tau + 1.0 / theta_prev)
}

/// `v = y + (theta*(1-theta_prev)/theta_prev) * (y - y_prev)`.
pub fn extrapolate(
    y: &DVector<f64>,
    y_prev: &DVector<f64>,
    theta: f64,
    theta_prev: f64,
) -> DVector<f64> {
    let coeff = theta * (1.0 - theta_prev) / theta_prev;
    y + (y - y_prev) * coeff
}

#[derive(Debug, Clone)]
pub struct SolverState {
    pub k: usize,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    pub x_prev: DVector<f64>,
    pub y_prev: DVector<f64>,
    pub z_prev: DVector<f64>,
    pub theta: f64,
    pub theta_prev: f64,
    pub v: DVector<f64>,
    pub converged: bool,
    pub trace: IterationTrace,
    /// `c - A x_k - B y_k` for k = 1.. when requested.
    pub residual_history: Vec<DVector<f64>>,
}

/// One appended-only row per iterate.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub k: usize,
    pub theta: f64,
    pub objective: f64,
    pub feasibility: f64,
    pub kkt_residual: f64,
    pub dandiao: Option<f64>,
    pub bound_feas: Option<f64>,
    pub bound_obj_lo: Option<f64>,
    pub bound_obj_hi: Option<f64>,
    pub time_ms: f64,
    /// `|z_k - z_{k-1}|`, kept for the dual-update identity test (not a CSV
    /// column).
    pub z_step_norm: f64,
}

#[derive(Debug, Clone, Default)]
pub struct IterationTrace {
    pub(crate) rows: Vec<TraceRow>,
}

impl IterationTrace {
    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub(crate) fn push(&mut self, row: TraceRow) {
        debug_assert!(self.rows.last().map_or(true, |r| row.k > r.k));
        self.rows.push(row);
    }

    /// CSV with the exact header
    /// `k,theta,objective,feasibility,kkt_residual,dandiao,bound_feas,bound_obj_lo,bound_obj_hi,time_ms`.
    /// Missing reference-dependent columns are empty fields.  Timing is
    /// wall-clock and breaks byte-identical reproducibility, so it is only
    /// written when `include_timing` is set.
    pub fn to_csv(&self, include_timing: bool) -> String {
        let mut s = String::from(
            "k,theta,objective,feasibility,kkt_residual,dandiao,bound_feas,bound_obj_lo,bound_obj_hi,time_ms\n",
        );
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        for r in &self.rows {
            let time = if include_timing {
                format!("{}", r.time_ms)
            } else {
                String::new()
            };
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.k,
                r.theta,
                r.objective,
                r.feasibility,
                r.kkt_residual,
                opt(r.dandiao),
                opt(r.bound_feas),
                opt(r.bound_obj_lo),
                opt(r.bound_obj_hi),
                time,
            ));
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Assembled per-iteration metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum SMetric {
    Zero(usize),
    Scalar { dim: usize, c: f64 },
    Dense(DMatrix<f64>),
}

impl SMetric {
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            SMetric::Zero(_) => DVector::zeros(x.len()),
            SMetric::Scalar { c, .. } => x * *c,
            SMetric::Dense(m) => m * x,
        }
    }

    fn norm_sq(&self, x: &DVector<f64>) -> f64 {
        x.dot(&self.apply(x)).max(0.0)
    }

    fn as_scalar(&self) -> Option<f64> {
        match self {
            SMetric::Zero(_) => Some(0.0),
            SMetric::Scalar { c, .. } => Some(*c),
            SMetric::Dense(_) => None,
        }
    }

    fn dense(&self, dim: usize) -> DMatrix<f64> {
        match self {
            SMetric::Zero(_) => DMatrix::zeros(dim, dim),
            SMetric::Scalar { c, .. } => DMatrix::identity(dim, dim) * *c,
            SMetric::Dense(m) => m.clone(),
        }
    }
}

/// Everything iteration-independent about one side of the splitting.
struct SideContext {
    op: LinearMap,
    gram: DMatrix<f64>,
    gram_scalar: Option<f64>,
    gram_lam_max: f64,
    block: BlockSpec,
    schedule: MetricSchedule,
    side: &'static str,
}

impl SideContext {
    fn new(
        op: &LinearMap,
        block: &BlockSpec,
        schedule: &MetricSchedule,
        side: &'static str,
    ) -> Result<Self> {
        let gram_map = op.gram();
        let gram = gram_map.materialize();
        let gram_scalar = gram_map.as_scaled_identity(1e-12);
        let gram_lam_max =
            extremal_eigenvalue(&LinearMap::dense(gram.clone()), Extremal::Largest)?;
        Ok(SideContext {
            op: op.clone(),
            gram,
            gram_scalar,
            gram_lam_max,
            block: block.clone(),
            schedule: schedule.clone(),
            side,
        })
    }

    fn dim(&self) -> usize {
        self.op.domain_dim()
    }

    /// Proximal metric at iteration `k`, where the augmented-Lagrangian
    /// penalty is `lam_tilde`.
    fn metric_at(&self, k: usize, lam_tilde: f64) -> SMetric {
        match &self.schedule {
            MetricSchedule::Fixed(m) => metric_to_smetric(m, self.dim()),
            MetricSchedule::PenaltyScaled(m) => match metric_to_smetric(m, self.dim()) {
                SMetric::Zero(d) => SMetric::Zero(d),
                SMetric::Scalar { dim, c } => SMetric::Scalar {
                    dim,
                    c: c * lam_tilde,
                },
                SMetric::Dense(d) => SMetric::Dense(d * lam_tilde),
            },
            MetricSchedule::LinearizedCurvature { margin } => {
                let eta = lam_tilde * self.gram_lam_max * (1.0 + margin);
                let dim = self.dim();
                let mut m = -&self.gram * lam_tilde;
                for i in 0..dim {
                    m[(i, i)] += eta;
                }
                SMetric::Dense(m)
            }
            MetricSchedule::Rule(f) => metric_to_smetric(&f(k), self.dim()),
        }
    }

    /// `S_{k+1} - S_k` when it does not depend on `k` (the supported
    /// schedules), given the base penalty and step length.
    fn schedule_difference(&self, lambda: f64, tau: f64) -> Option<SMetric> {
        match &self.schedule {
            MetricSchedule::Fixed(_) => Some(SMetric::Zero(self.dim())),
            // lam_tilde_{k+1} - lam_tilde_k = lambda (1 - tau)
            MetricSchedule::PenaltyScaled(m) => Some(match metric_to_smetric(m, self.dim()) {
                SMetric::Zero(d) => SMetric::Zero(d),
                SMetric::Scalar { dim, c } => SMetric::Scalar {
                    dim,
                    c: c * lambda * (1.0 - tau),
                },
                SMetric::Dense(d) => SMetric::Dense(d * (lambda * (1.0 - tau))),
            }),
            MetricSchedule::LinearizedCurvature { margin } => {
                let dim = self.dim();
                let mut m = -&self.gram * (lambda * (1.0 - tau));
                let eta = lambda * (1.0 - tau) * self.gram_lam_max * (1.0 + margin);
                for i in 0..dim {
                    m[(i, i)] += eta;
                }
                Some(SMetric::Dense(m))
            }
            MetricSchedule::Rule(_) => None,
        }
    }
}

fn metric_to_smetric(m: &Metric, dim: usize) -> SMetric {
    if let Some(c) = m.op().as_scaled_identity(1e-14) {
        if c == 0.0 {
            SMetric::Zero(dim)
        } else {
            SMetric::Scalar { dim, c }
        }
    } else {
        SMetric::Dense(m.op().materialize())
    }
}

// ---------------------------------------------------------------------------
// Block subproblem
// ---------------------------------------------------------------------------

/// Solves `argmin_x f(x) + 1/2 |x - r|^2_M` for the declared strategy.
///
/// `LinearSolve` factors `P + M` densely; the prox strategies require `M` to
/// be a scaled identity ("metric not proximable" otherwise).
pub fn solve_block_subproblem(
    block: &BlockSpec,
    metric: &Metric,
    anchor: &DVector<f64>,
) -> Result<DVector<f64>> {
    let rhs = metric.apply(anchor)?;
    let m = match metric.op().as_scaled_identity(1e-12) {
        Some(c) => SMetric::Scalar {
            dim: anchor.len(),
            c,
        },
        None => SMetric::Dense(metric.op().materialize()),
    };
    solve_block_rhs(block, &m, &rhs, 0, "standalone")
}

/// Internal form: `argmin_x f(x) + 1/2 x'Mx - rhs'x`.
fn solve_block_rhs(
    block: &BlockSpec,
    metric: &SMetric,
    rhs: &DVector<f64>,
    iteration: usize,
    side: &'static str,
) -> Result<DVector<f64>> {
    let fail = |detail: String| SolverError::Subproblem {
        iteration,
        side,
        detail,
    };
    match block.strategy {
        SubproblemStrategy::LinearSolve => {
            if block.prox.is_some() {
                return Err(fail("LinearSolve cannot handle a prox part".into()));
            }
            let n = rhs.len();
            let mut m = metric.dense(n);
            let mut r = rhs.clone();
            if let Some(q) = &block.quadratic {
                m += &q.p;
                r -= &q.q;
            }
            let chol = m
                .cholesky()
                .ok_or_else(|| fail("assembled metric is not positive definite".into()))?;
            Ok(chol.solve(&r))
        }
        SubproblemStrategy::ProxDirect | SubproblemStrategy::ProxLinearized => {
            let mut eta = metric.as_scalar().ok_or(SolverError::MetricNotProximable)?;
            let mut r = rhs.clone();
            // A scaled-identity quadratic part folds into the metric.
            if let Some(q) = &block.quadratic {
                let c = LinearMap::dense(q.p.clone())
                    .as_scaled_identity(1e-12)
                    .ok_or_else(|| {
                        fail("prox strategy with a non-scaled-identity quadratic part".into())
                    })?;
                eta += c;
                r -= &q.q;
            }
            if eta <= 0.0 {
                return Err(SolverError::MetricNotPd);
            }
            match &block.prox {
                Some(p) => Ok(p.prox(&(r / eta), 1.0 / eta)?),
                None => Ok(r / eta),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// KKT residual
// ---------------------------------------------------------------------------

/// `max` of the normalized primal feasibility and the two dual
/// subgradient-distance residuals.
pub fn kkt_residual(
    problem: &TwoBlockProblem,
    x: &DVector<f64>,
    y: &DVector<f64>,
    z: &DVector<f64>,
) -> Result<f64> {
    let primal = (problem.a.apply(x)? + problem.b.apply(y)? - &problem.c).norm()
        / (1.0 + problem.c.norm());
    let zn = 1.0 + z.norm();
    let dual_f = problem
        .f_block
        .subgrad_dist(x, &problem.a.apply_adjoint(z)?)
        .map_err(|e| SolverError::KktUnsupported(format!("f block: {e}")))?
        / zn;
    let dual_g = problem
        .g_block
        .subgrad_dist(y, &problem.b.apply_adjoint(z)?)
        .map_err(|e| SolverError::KktUnsupported(format!("g block: {e}")))?
        / zn;
    Ok(primal.max(dual_f).max(dual_g))
}

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

pub fn run_spadmm(
    problem: &TwoBlockProblem,
    config: &SolverConfig,
    init: Option<(DVector<f64>, DVector<f64>, DVector<f64>)>,
) -> Result<SolverState> {
    if config.mode != SolverMode::Spadmm {
        return Err(SolverError::Config("run_spadmm needs mode = Spadmm".into()));
    }
    run_two_block(problem, config, init)
}

pub fn run_aspadmm(
    problem: &TwoBlockProblem,
    config: &SolverConfig,
    init: Option<(DVector<f64>, DVector<f64>, DVector<f64>)>,
) -> Result<SolverState> {
    if config.mode != SolverMode::Aspadmm {
        return Err(SolverError::Config(
            "run_aspadmm needs mode = Aspadmm".into(),
        ));
    }
    run_two_block(problem, config, init)
}

fn run_two_block(
    problem: &TwoBlockProblem,
    config: &SolverConfig,
    init: Option<(DVector<f64>, DVector<f64>, DVector<f64>)>,
) -> Result<SolverState> {
    let start = std::time::Instant::now();
    problem.validate()?;
    validate_tau(config)?;

    let fx = SideContext::new(
        &problem.a,
        &problem.f_block,
        &normalize_schedule(&config.s_schedule, problem.a.domain_dim()),
        "f",
    )?;
    let gy = SideContext::new(
        &problem.b,
        &problem.g_block,
        &normalize_schedule(&config.t_schedule, problem.b.domain_dim()),
        "g",
    )?;

    setup_psd_check(&fx, config.lambda)?;
    setup_psd_check(&gy, config.lambda)?;
    if config.mode == SolverMode::Aspadmm {
        schedule_condition_check(&fx, config)?;
        schedule_condition_check(&gy, config)?;
    }

    let (mut x, mut y, mut z) = init.unwrap_or_else(|| {
        (
            DVector::zeros(problem.a.domain_dim()),
            DVector::zeros(problem.b.domain_dim()),
            DVector::zeros(problem.c.len()),
        )
    });
    let mut x_prev = x.clone();
    let mut y_prev = y.clone();
    let mut z_prev = z.clone();
    // theta_{-1} = 1/tau, so theta_0 = 1 after the first schedule step.
    let mut theta_prev = 1.0 / config.tau;
    let mut theta = 1.0;
    let mut v = y.clone();

    let constants = match &config.reference {
        Some(_) => Some(bound_constants_from_init(
            problem,
            config,
            (&x, &y, &z),
            &fx,
            &gy,
        )?),
        None => None,
    };

    let mut trace = IterationTrace::default();
    let mut residual_history = Vec::new();
    let mut converged = false;
    let mut k_final = 0;

    for k in 0..config.max_iter {
        let (lam_tilde, y_ref) = match config.mode {
            SolverMode::Spadmm => {
                theta = 1.0;
                (config.lambda, y.clone())
            }
            SolverMode::Aspadmm => {
                theta = theta_next(theta_prev, config.tau);
                v = extrapolate(&y, &y_prev, theta, theta_prev);
                (config.lambda / theta, v.clone())
            }
        };
        let s_k = fx.metric_at(k, lam_tilde);
        let t_k = gy.metric_at(k, lam_tilde);

        // x-update
        let by_ref = problem.b.apply(&y_ref)?;
        let rhs_x = problem.a.apply_adjoint(&z)?
            - problem.a.apply_adjoint(&(&by_ref - &problem.c))? * lam_tilde
            + s_k.apply(&x);
        let x_new = solve_side(&fx, &s_k, lam_tilde, &rhs_x, k)?;

        // y-update (anchored at y_k, coupled through x_{k+1})
        let ax_new = problem.a.apply(&x_new)?;
        let rhs_y = problem.b.apply_adjoint(&z)?
            - problem.b.apply_adjoint(&(&ax_new - &problem.c))? * lam_tilde
            + t_k.apply(&y);
        let y_new = solve_side(&gy, &t_k, lam_tilde, &rhs_y, k)?;

        // dual update with the base penalty
        let residual = &ax_new + problem.b.apply(&y_new)? - &problem.c;
        let z_new = &z - &residual * (config.tau * config.lambda);

        x_prev = std::mem::replace(&mut x, x_new);
        y_prev = std::mem::replace(&mut y, y_new);
        z_prev = std::mem::replace(&mut z, z_new);
        theta_prev = theta;
        k_final = k + 1;

        if config.record_residuals {
            residual_history.push(-residual.clone());
        }

        let feasibility = residual.norm();
        let kkt = kkt_residual(problem, &x, &y, &z)?;
        let dandiao = Some(dandiao_value(
            problem,
            config,
            (&x, &x_prev),
            (&y, &y_prev),
            (&z, &z_prev),
            &s_k,
            &t_k,
        ));
        let (bound_feas, bound_obj_lo, bound_obj_hi) = match &constants {
            Some(cs) => bound_columns(config, cs, k_final),
            None => (None, None, None),
        };
        trace.push(TraceRow {
            k: k_final,
            theta,
            objective: problem.objective(&x, &y),
            feasibility,
            kkt_residual: kkt,
            dandiao,
            bound_feas,
            bound_obj_lo,
            bound_obj_hi,
            time_ms: start.elapsed().as_secs_f64() * 1e3,
            z_step_norm: (&z - &z_prev).norm(),
        });

        if kkt <= config.tol_kkt {
            converged = true;
            break;
        }
    }

    Ok(SolverState {
        k: k_final,
        x,
        y,
        z,
        x_prev,
        y_prev,
        z_prev,
        theta,
        theta_prev,
        v,
        converged,
        trace,
        residual_history,
    })
}

/// Zero-dimension placeholder metrics in the default config resize to the
/// problem's dimensions.
fn normalize_schedule(schedule: &MetricSchedule, dim: usize) -> MetricSchedule {
    match schedule {
        MetricSchedule::Fixed(m) if m.dim() == 0 => MetricSchedule::Fixed(Metric::zero(dim)),
        MetricSchedule::PenaltyScaled(m) if m.dim() == 0 => {
            MetricSchedule::PenaltyScaled(Metric::zero(dim))
        }
        other => other.clone(),
    }
}

fn validate_tau(config: &SolverConfig) -> Result<()> {
    let golden = (1.0 + 5.0_f64.sqrt()) / 2.0;
    match config.mode {
        SolverMode::Spadmm => {
            if !(config.tau > 0.0 && config.tau < golden) {
                return Err(SolverError::Config(format!(
                    "spadmm needs tau in (0, (1+sqrt(5))/2), got {}",
                    config.tau
                )));
            }
        }
        SolverMode::Aspadmm => {
            if !(config.tau > 0.0 && config.tau < 1.0) {
                return Err(SolverError::Config(format!(
                    "aspadmm needs tau in (0, 1), got {}",
                    config.tau
                )));
            }
        }
    }
    if config.lambda <= 0.0 {
        return Err(SolverError::Config("lambda must be positive".into()));
    }
    Ok(())
}

/// `Sigma + S_0 + lambda Op'Op` must be positive definite (strict margin 1e-10).
fn setup_psd_check(side: &SideContext, lambda: f64) -> Result<()> {
    let dim = side.dim();
    let mut m = side.block.sigma.op().materialize();
    m += side.metric_at(0, lambda).dense(dim);
    m += &side.gram * lambda;
    let cert = check_psd(&LinearMap::dense(m), -1e-10)?;
    if !cert.ok {
        return Err(SolverError::SetupPsd {
            side: side.side,
            min_eig: cert.min_eig,
            margin: 1e-10,
        });
    }
    Ok(())
}

/// Theorem-2 hypothesis `Sigma >= S_{k+1} - S_k`, verified numerically.
fn schedule_condition_check(side: &SideContext, config: &SolverConfig) -> Result<()> {
    let dim = side.dim();
    let sigma = side.block.sigma.op().materialize();
    let check_diff = |diff: &DMatrix<f64>, k: usize| -> Result<()> {
        let m = &sigma - diff;
        let tol = 1e-9 * (1.0 + m.amax());
        let cert = check_psd(&LinearMap::dense(m), tol)?;
        if !cert.ok {
            return Err(SolverError::ScheduleCondition {
                side: side.side,
                k,
                min_eig: cert.min_eig,
            });
        }
        Ok(())
    };
    match side.schedule_difference(config.lambda, config.tau) {
        Some(diff) => check_diff(&diff.dense(dim), 0),
        None => {
            if let MetricSchedule::Rule(f) = &side.schedule {
                for k in 0..config.schedule_check_horizon {
                    let d = f(k + 1).op().materialize() - f(k).op().materialize();
                    check_diff(&d, k)?;
                }
            }
            Ok(())
        }
    }
}

fn solve_side(
    side: &SideContext,
    s_k: &SMetric,
    lam_tilde: f64,
    rhs: &DVector<f64>,
    iteration: usize,
) -> Result<DVector<f64>> {
    match side.block.strategy {
        SubproblemStrategy::LinearSolve => {
            let dim = side.dim();
            let mut m = &side.gram * lam_tilde;
            match s_k {
                SMetric::Zero(_) => {}
                SMetric::Scalar { c, .. } => {
                    for i in 0..dim {
                        m[(i, i)] += c;
                    }
                }
                SMetric::Dense(d) => m += d,
            }
            solve_block_rhs(&side.block, &SMetric::Dense(m), rhs, iteration, side.side)
        }
        SubproblemStrategy::ProxDirect => {
            let cg = side.gram_scalar.ok_or(SolverError::MetricNotProximable)?;
            let cs = s_k.as_scalar().ok_or(SolverError::MetricNotProximable)?;
            let metric = SMetric::Scalar {
                dim: side.dim(),
                c: lam_tilde * cg + cs,
            };
            solve_block_rhs(&side.block, &metric, rhs, iteration, side.side)
        }
        SubproblemStrategy::ProxLinearized => {
            // S_k = eta_k I - lam_tilde Op'Op, so the total metric is eta_k I.
            let margin = match side.schedule {
                MetricSchedule::LinearizedCurvature { margin } => margin,
                _ => {
                    return Err(SolverError::Config(
                        "ProxLinearized requires the LinearizedCurvature schedule".into(),
                    ))
                }
            };
            let eta = lam_tilde * side.gram_lam_max * (1.0 + margin);
            let metric = SMetric::Scalar {
                dim: side.dim(),
                c: eta,
            };
            solve_block_rhs(&side.block, &metric, rhs, iteration, side.side)
        }
    }
}

// ---------------------------------------------------------------------------
// Certificates
// ---------------------------------------------------------------------------

/// The closed-form constants of the rate bounds.
#[derive(Debug, Clone)]
pub struct BoundConstants {
    pub c1: f64,
    /// `None` when tau = 1 (the m-factor vanishes there).
    pub c2: Option<f64>,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
    pub t_factor: Option<f64>,
    pub m_factor: Option<f64>,
    /// `max(C1, C2)` (just `C1` when C2 is undefined).
    pub c_max: f64,
    pub reference_label: ReferenceLabel,
    pub z_star_norm: f64,
    pub reference_objective: f64,
}

/// `t = (tau - 1 - sqrt(tau^2 - tau + 1)) / (2 tau^2 lambda)` and
/// `m = 2 tau lambda t - (tau - 2)/tau`; `m` lies in (0,1) for tau in (0,1)
/// and vanishes at tau = 1.
pub fn m_factor(tau: f64, lambda: f64) -> (f64, f64) {
    let t = (tau - 1.0 - (tau * tau - tau + 1.0).sqrt()) / (2.0 * tau * tau * lambda);
    let m = 2.0 * tau * lambda * t - (tau - 2.0) / tau;
    (t, m)
}

/// Evaluates C1..C6 for the supplied initialization and the reference in
/// `config`.  C1/C2 use iterate 1, so one solver step runs internally.
pub fn bound_constants(
    problem: &TwoBlockProblem,
    config: &SolverConfig,
    init: Option<(DVector<f64>, DVector<f64>, DVector<f64>)>,
) -> Result<BoundConstants> {
    let fx = SideContext::new(
        &problem.a,
        &problem.f_block,
        &normalize_schedule(&config.s_schedule, problem.a.domain_dim()),
        "f",
    )?;
    let gy = SideContext::new(
        &problem.b,
        &problem.g_block,
        &normalize_schedule(&config.t_schedule, problem.b.domain_dim()),
        "g",
    )?;
    let (x0, y0, z0) = init.unwrap_or_else(|| {
        (
            DVector::zeros(problem.a.domain_dim()),
            DVector::zeros(problem.b.domain_dim()),
            DVector::zeros(problem.c.len()),
        )
    });
    bound_constants_from_init(problem, config, (&x0, &y0, &z0), &fx, &gy)
}

fn bound_constants_from_init(
    problem: &TwoBlockProblem,
    config: &SolverConfig,
    init: (&DVector<f64>, &DVector<f64>, &DVector<f64>),
    fx: &SideContext,
    gy: &SideContext,
) -> Result<BoundConstants> {
    let reference = config
        .reference
        .as_ref()
        .ok_or(SolverError::MissingReference)?;
    let (x0, y0, z0) = init;
    let lambda = config.lambda;
    let s0 = fx.metric_at(0, lambda);
    let t0 = gy.metric_at(0, lambda);

    // One solver step for the iterate-1 constants.
    let mut one_step = config.clone();
    one_step.max_iter = 1;
    one_step.tol_kkt = 0.0;
    one_step.reference = None;
    one_step.record_residuals = false;
    let s1 = run_two_block(
        problem,
        &one_step,
        Some((x0.clone(), y0.clone(), z0.clone())),
    )?;
    let (x1, y1, z1) = (&s1.x, &s1.y, &s1.z);

    let b_of = |v: &DVector<f64>| problem.b.apply(v).expect("dim");
    let dz1 = z1 - &reference.z;
    let dby1 = b_of(&(y1 - &reference.y)).norm_squared();
    let dx1_s = s0.norm_sq(&(x1 - &reference.x));
    let dy1_t = t0.norm_sq(&(y1 - &reference.y));
    let dy01_t = t0.norm_sq(&(y0 - y1));
    let c1 = dz1.norm_squared() / lambda + lambda * dby1 + dx1_s + dy1_t + dy01_t;

    let (t_factor, m, c2) = if config.tau < 1.0 {
        let (t, m) = m_factor(config.tau, lambda);
        let c2 =
            (dz1.norm_squared() / (config.tau * lambda) + lambda * dby1 + dx1_s + dy1_t) / m;
        (Some(t), Some(m), Some(c2))
    } else {
        (None, None, None)
    };

    let dz0 = (z0 - &reference.z).norm();
    let dby0 = b_of(&(y0 - &reference.y)).norm();
    let dx0_s = s0.norm_sq(&(x0 - &reference.x)).sqrt();
    let dy0_t = t0.norm_sq(&(y0 - &reference.y)).sqrt();
    let c3 = 2.0 / lambda * dz0 + dby0 + (dx0_s + dy0_t) / lambda.sqrt();
    let c4 = dz0 * dz0 / (2.0 * lambda)
        + lambda / 2.0 * dby0 * dby0
        + 0.5 * (dx0_s * dx0_s + dy0_t * dy0_t);

    Ok(BoundConstants {
        c1,
        c2,
        c3,
        c4,
        // with fixed metrics the corollary constants coincide with C3/C4
        c5: c3,
        c6: c4,
        t_factor,
        m_factor: m,
        c_max: c2.map_or(c1, |v| c1.max(v)),
        reference_label: reference.label,
        z_star_norm: reference.z.norm(),
        reference_objective: problem.objective(&reference.x, &reference.y),
    })
}

fn bound_columns(
    config: &SolverConfig,
    cs: &BoundConstants,
    row_k: usize,
) -> (Option<f64>, Option<f64>, Option<f64>) {
    let tau = config.tau;
    let lambda = config.lambda;
    let z_star = cs.z_star_norm;
    match config.mode {
        SolverMode::Aspadmm => {
            let kk = (row_k - 1) as f64;
            let denom = 1.0 + kk * (1.0 - tau);
            (
                Some(2.0 * cs.c3 / denom),
                Some(-2.0 * cs.c3 * z_star / denom),
                Some((2.0 * cs.c3 * z_star + cs.c4) / denom),
            )
        }
        SolverMode::Spadmm => {
            if row_k < 2 {
                return (None, None, None);
            }
            let kk = (row_k - 1) as f64;
            let root = (cs.c_max / (tau * lambda * kk)).sqrt();
            (
                Some(root),
                Some(-z_star * root),
                Some(z_star * root + 4.0 * cs.c_max / kk.sqrt() + cs.c_max / (kk * tau.sqrt())),
            )
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    Feasibility,
    ObjectiveUpper,
    ObjectiveLower,
}

#[derive(Debug, Clone)]
pub struct BoundViolation {
    pub k: usize,
    pub kind: BoundKind,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone)]
pub struct BoundReport {
    pub violations: Vec<BoundViolation>,
    pub rows_checked: usize,
    pub reference_label: ReferenceLabel,
}

impl BoundReport {
    pub fn certified(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WhichTheorem {
    Theorem1,
    Theorem2,
}

/// Checks every trace row against the claimed inequalities with slack
/// `1e-8 * (1 + bound)`; an empty violation list certifies the run.
pub fn verify_bounds(
    trace: &IterationTrace,
    constants: &BoundConstants,
    which: WhichTheorem,
    config: &SolverConfig,
) -> Result<BoundReport> {
    match which {
        WhichTheorem::Theorem1 => {
            if config.mode != SolverMode::Spadmm || config.tau > 1.0 {
                return Err(SolverError::Config(
                    "Theorem-1 certificates are claimed for spadmm with tau in (0, 1]".into(),
                ));
            }
        }
        WhichTheorem::Theorem2 => {
            if config.mode != SolverMode::Aspadmm {
                return Err(SolverError::Config(
                    "Theorem-2 certificates are claimed for aspadmm (tau in (0,1))".into(),
                ));
            }
        }
    }
    let mut violations = Vec::new();
    let mut rows_checked = 0;
    let slack = |b: f64| 1e-8 * (1.0 + b.abs());
    for row in trace.rows() {
        if which == WhichTheorem::Theorem1 && row.k < 2 {
            continue;
        }
        let gap = row.objective - constants.reference_objective;
        let (bf, blo, bhi) = match bound_columns(config, constants, row.k) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => continue,
        };
        rows_checked += 1;
        if row.feasibility > bf + slack(bf) {
            violations.push(BoundViolation {
                k: row.k,
                kind: BoundKind::Feasibility,
                value: row.feasibility,
                bound: bf,
            });
        }
        if gap > bhi + slack(bhi) {
            violations.push(BoundViolation {
                k: row.k,
                kind: BoundKind::ObjectiveUpper,
                value: gap,
                bound: bhi,
            });
        }
        if gap < blo - slack(blo) {
            violations.push(BoundViolation {
                k: row.k,
                kind: BoundKind::ObjectiveLower,
                value: gap,
                bound: blo,
            });
        }
    }
    Ok(BoundReport {
        violations,
        rows_checked,
        reference_label: constants.reference_label,
    })
}

/// The monotone quantity of the sPADMM difference lemma:
/// `(1/tau lambda)|z_k - z_{k-1}|^2 + lambda |B(y_k - y_{k-1})|^2
///  + |x_k - x_{k-1}|^2_S + |y_k - y_{k-1}|^2_T`.
pub fn dandiao_quantity(
    problem: &TwoBlockProblem,
    config: &SolverConfig,
    state: &SolverState,
) -> Result<f64> {
    if state.k < 1 {
        return Err(SolverError::Config("dandiao needs k >= 1".into()));
    }
    let fx = SideContext::new(
        &problem.a,
        &problem.f_block,
        &normalize_schedule(&config.s_schedule, problem.a.domain_dim()),
        "f",
    )?;
    let gy = SideContext::new(
        &problem.b,
        &problem.g_block,
        &normalize_schedule(&config.t_schedule, problem.b.domain_dim()),
        "g",
    )?;
    let lam_tilde = match config.mode {
        SolverMode::Spadmm => config.lambda,
        SolverMode::Aspadmm => config.lambda / state.theta,
    };
    Ok(dandiao_value(
        problem,
        config,
        (&state.x, &state.x_prev),
        (&state.y, &state.y_prev),
        (&state.z, &state.z_prev),
        &fx.metric_at(state.k - 1, lam_tilde),
        &gy.metric_at(state.k - 1, lam_tilde),
    ))
}

fn dandiao_value(
    problem: &TwoBlockProblem,
    config: &SolverConfig,
    (x, x_prev): (&DVector<f64>, &DVector<f64>),
    (y, y_prev): (&DVector<f64>, &DVector<f64>),
    (z, z_prev): (&DVector<f64>, &DVector<f64>),
    s_k: &SMetric,
    t_k: &SMetric,
) -> f64 {
    let dz = z - z_prev;
    let dy = y - y_prev;
    let dx = x - x_prev;
    let bdy = problem.b.apply(&dy).expect("dim");
    dz.norm_squared() / (config.tau * config.lambda)
        + config.lambda * bdy.norm_squared()
        + s_k.norm_sq(&dx)
        + t_k.norm_sq(&dy)
}

/// Offline check of the summed-residual identity on logged residual vectors
/// `nu_k = c - A x_k - B y_k` (k = 1..): the premise
/// `|(1/theta_K) nu_{K+1} + tau * sum nu_k| <= C3` holds for every K, and it
/// implies `|sum_{k=1..K} nu_k| <= C3 / tau`.
pub fn check_summed_residual_identity(
    residuals: &[DVector<f64>],
    c3: f64,
    tau: f64,
) -> (bool, bool) {
    if residuals.is_empty() {
        return (true, true);
    }
    let slack = 1e-8 * (1.0 + c3);
    let mut premise = true;
    let mut conclusion = true;
    let mut running = DVector::zeros(residuals[0].len());
    for kk in 0..residuals.len().saturating_sub(1) {
        // K = kk + 1 in 1-based counting over nu_1..nu_K
        running += &residuals[kk];
        let k = (kk + 1) as f64;
        let theta_k = 1.0 / (k * (1.0 - tau) + 1.0);
        let lhs = (&residuals[kk + 1] / theta_k + &running * tau).norm();
        if lhs > c3 + slack {
            premise = false;
        }
        if running.norm() > c3 / tau + slack {
            conclusion = false;
        }
    }
    (premise, conclusion)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    #[test]
    fn theta_recursion_examples() {
        // tau = 0.5: theta_0 = 1, theta_1 = 2/3, theta_2 = 1/2
        let tau = 0.5;
        let mut th = 1.0 / tau;
        let mut seq = Vec::new();
        for _ in 0..3 {
            th = theta_next(th, tau);
            seq.push(th);
        }
        assert!((seq[0] - 1.0).abs() <= 1e-15);
        assert!((seq[1] - 2.0 / 3.0).abs() <= 1e-15);
        assert!((seq[2] - 0.5).abs() <= 1e-15);

        // closed form 1/(k(1-tau)+1) for tau = 0.95, k = 20 gives 0.5
        let tau = 0.95;
        let mut th = 1.0 / tau;
        for _ in 0..=20 {
            th = theta_next(th, tau);
        }
        assert!((th - 0.5).abs() <= 1e-12);

        // near tau = 1 the schedule barely decays
        let tau = 1.0 - 1e-12;
        let mut th = 1.0 / tau;
        for _ in 0..5 {
            th = theta_next(th, tau);
            assert!((th - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn theta_closed_form_and_inverse_increment() {
        for tau in [0.5, 0.9, 0.95, 0.99] {
            let mut th = 1.0 / tau;
            for k in 0..=10_000usize {
                let prev_inv = 1.0 / th;
                th = theta_next(th, tau);
                let closed = 1.0 / (k as f64 * (1.0 - tau) + 1.0);
                assert!(
                    (th - closed).abs() <= 1e-12,
                    "tau={tau} k={k}: {th} vs {closed}"
                );
                assert!((1.0 / th - prev_inv - (1.0 - tau)).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn extrapolate_examples() {
        let y = vec2(1.0, -2.0);
        // y = y_prev gives v = y
        assert_eq!(extrapolate(&y, &y, 0.7, 0.9), y);
        // theta_prev = 1 zeroes the coefficient
        let y2 = vec2(3.0, 4.0);
        assert_eq!(extrapolate(&y, &y2, 0.7, 1.0), y);
        // k = 0 with theta_prev = 1/tau, tau = 0.5: coefficient = 1*(1-2)/2 = -0.5
        let v = extrapolate(&y, &y2, 1.0, 2.0);
        let expect = &y + (&y - &y2) * (-0.5);
        assert_eq!(v, expect);
    }

    #[test]
    fn solve_block_examples() {
        // f = 0 returns the anchor
        let block = BlockSpec::zero(2);
        let m = Metric::identity(2);
        let r = vec2(1.5, -0.5);
        assert_eq!(solve_block_subproblem(&block, &m, &r).unwrap(), r);

        // f = 1/2|x - d|^2 with M = I averages
        let d = vec2(1.0, 3.0);
        let block =
            BlockSpec::quadratic_only(DMatrix::identity(2, 2), -&d, 0.5 * d.norm_squared(), 2);
        let got = solve_block_subproblem(&block, &m, &r).unwrap();
        assert!((got - (&r + &d) * 0.5).amax() <= 1e-12);

        // f = |.|_1 with M = 2I soft-thresholds at 1/2
        let block = BlockSpec::prox_only(ProxFunction::L1 { weight: 1.0 }, 2);
        let m2 = Metric::scaled_identity(2, 2.0).unwrap();
        let r = vec2(3.0, -0.2);
        let got = solve_block_subproblem(&block, &m2, &r).unwrap();
        assert!((got - vec2(2.5, 0.0)).amax() <= 1e-12);

        // prox strategy with a dense, non-identity metric must refuse
        let dense = Metric::new(LinearMap::dense(DMatrix::from_row_slice(
            2,
            2,
            &[2.0, 0.3, 0.3, 1.0],
        )))
        .unwrap();
        assert!(matches!(
            solve_block_subproblem(&block, &dense, &r),
            Err(SolverError::MetricNotProximable)
        ));
    }

    /// Tiny quadratic instance with a known exact KKT triple.
    fn quadratic_kkt_instance() -> (TwoBlockProblem, KktReference) {
        let a = LinearMap::dense(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]));
        let b = LinearMap::dense(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -0.5, 1.0]));
        let x_star = vec2(0.7, -0.4);
        let y_star = vec2(-0.2, 0.9);
        let z_star = vec2(0.3, -0.6);
        let c = a.apply(&x_star).unwrap() + b.apply(&y_star).unwrap();
        // f = 1/2|x - d1|^2 with grad f(x*) = A'z*  =>  d1 = x* - A'z*
        let d1 = &x_star - a.apply_adjoint(&z_star).unwrap();
        let d2 = &y_star - b.apply_adjoint(&z_star).unwrap();
        let f =
            BlockSpec::quadratic_only(DMatrix::identity(2, 2), -&d1, 0.5 * d1.norm_squared(), 2);
        let g =
            BlockSpec::quadratic_only(DMatrix::identity(2, 2), -&d2, 0.5 * d2.norm_squared(), 2);
        let problem = TwoBlockProblem {
            a,
            b,
            c,
            f_block: f,
            g_block: g,
        };
        let reference = KktReference {
            x: x_star,
            y: y_star,
            z: z_star,
            label: ReferenceLabel::Certified,
        };
        (problem, reference)
    }

    #[test]
    fn kkt_residual_examples() {
        let (problem, r) = quadratic_kkt_instance();
        assert!(kkt_residual(&problem, &r.x, &r.y, &r.z).unwrap() <= 1e-12);

        // feasible primal, wrong dual: only the dual residuals are positive
        let bad_z = &r.z + vec2(1.0, 0.0);
        let res = kkt_residual(&problem, &r.x, &r.y, &bad_z).unwrap();
        assert!(res > 1e-3);
        assert!(problem.feasibility(&r.x, &r.y) <= 1e-14);

        // zero problem at the origin
        let zero = TwoBlockProblem {
            a: LinearMap::identity(2),
            b: LinearMap::identity(2),
            c: DVector::zeros(2),
            f_block: BlockSpec::zero(2),
            g_block: BlockSpec::zero(2),
        };
        let o = DVector::zeros(2);
        assert_eq!(kkt_residual(&zero, &o, &o, &o).unwrap(), 0.0);
    }

    #[test]
    fn spadmm_stationary_at_kkt_point() {
        let (problem, r) = quadratic_kkt_instance();
        let mut config = SolverConfig::spadmm(1.0, 1.0);
        config.max_iter = 3;
        config.tol_kkt = 0.0;
        let out = run_spadmm(
            &problem,
            &config,
            Some((r.x.clone(), r.y.clone(), r.z.clone())),
        )
        .unwrap();
        assert!((out.x - &r.x).amax() <= 1e-10);
        assert!((out.y - &r.y).amax() <= 1e-10);
        assert!((out.z - &r.z).amax() <= 1e-10);
        assert!(out.trace.rows().last().unwrap().feasibility <= 1e-10);
    }

    #[test]
    fn aspadmm_stationary_at_kkt_point() {
        let (problem, r) = quadratic_kkt_instance();
        let mut config = SolverConfig::aspadmm(1.0, 0.9);
        config.max_iter = 3;
        config.tol_kkt = 0.0;
        let out = run_aspadmm(
            &problem,
            &config,
            Some((r.x.clone(), r.y.clone(), r.z.clone())),
        )
        .unwrap();
        assert!((out.x - &r.x).amax() <= 1e-10);
        assert!((out.y - &r.y).amax() <= 1e-10);
    }

    #[test]
    fn single_spadmm_iteration_matches_hand_solve() {
        let (problem, _) = quadratic_kkt_instance();
        let lambda = 0.8;
        let tau = 1.0;
        let mut config = SolverConfig::spadmm(lambda, tau);
        config.max_iter = 1;
        config.tol_kkt = 0.0;
        let x0 = vec2(0.1, 0.2);
        let y0 = vec2(-0.3, 0.4);
        let z0 = vec2(0.5, -0.1);
        let out =
            run_spadmm(&problem, &config, Some((x0.clone(), y0.clone(), z0.clone()))).unwrap();

        // hand-rolled dense solve of both subproblems (S = T = 0)
        let a = problem.a.materialize();
        let b = problem.b.materialize();
        let qf = problem.f_block.quadratic.as_ref().unwrap();
        let qg = problem.g_block.quadratic.as_ref().unwrap();
        let mx = &qf.p + (&a.transpose() * &a) * lambda;
        let rx = a.transpose() * &z0 - a.transpose() * (&b * &y0 - &problem.c) * lambda - &qf.q;
        let x1 = mx.cholesky().unwrap().solve(&rx);
        let my = &qg.p + (&b.transpose() * &b) * lambda;
        let ry = b.transpose() * &z0 - b.transpose() * (&a * &x1 - &problem.c) * lambda - &qg.q;
        let y1 = my.cholesky().unwrap().solve(&ry);
        let z1 = &z0 - (&a * &x1 + &b * &y1 - &problem.c) * (tau * lambda);

        assert!((out.x - x1).amax() <= 1e-12);
        assert!((out.y - y1).amax() <= 1e-12);
        assert!((out.z - z1).amax() <= 1e-12);
    }

    #[test]
    fn dual_update_identity_holds_exactly() {
        let (problem, _) = quadratic_kkt_instance();
        let mut config = SolverConfig::spadmm(0.7, 0.9);
        config.max_iter = 25;
        config.tol_kkt = 0.0;
        let out = run_spadmm(&problem, &config, None).unwrap();
        for row in out.trace.rows() {
            let lhs = row.feasibility;
            let rhs = row.z_step_norm / (config.tau * config.lambda);
            assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs));
        }
    }

    #[test]
    fn bound_constants_examples() {
        let (problem, r) = quadratic_kkt_instance();
        let mut config = SolverConfig::aspadmm(1.0, 0.9);
        config.reference = Some(r.clone());

        // init at the reference: difference constants vanish
        let cs = bound_constants(
            &problem,
            &config,
            Some((r.x.clone(), r.y.clone(), r.z.clone())),
        )
        .unwrap();
        assert!(cs.c3.abs() <= 1e-12 && cs.c4.abs() <= 1e-12);
        assert!((cs.c5 - cs.c3).abs() <= 1e-15 && (cs.c6 - cs.c4).abs() <= 1e-15);

        // z0 - z* = (1, 0), everything else at the reference: C3 = 2, C4 = 0.5
        let z0 = &r.z + vec2(1.0, 0.0);
        let cs =
            bound_constants(&problem, &config, Some((r.x.clone(), r.y.clone(), z0))).unwrap();
        assert!((cs.c3 - 2.0).abs() <= 1e-12, "c3 = {}", cs.c3);
        assert!((cs.c4 - 0.5).abs() <= 1e-12, "c4 = {}", cs.c4);
    }

    #[test]
    fn m_factor_example() {
        // tau = 0.5, lambda = 1: t = (-0.5 - sqrt(0.75))/0.5, m = t + 3
        let (t, m) = m_factor(0.5, 1.0);
        assert!((t - (-0.5 - 0.75_f64.sqrt()) / 0.5).abs() <= 1e-15);
        assert!((m - (2.0 * 0.5 * t + 3.0)).abs() <= 1e-15);
        assert!(m > 0.0 && m < 1.0);
        // m vanishes at tau = 1
        let (_, m1) = m_factor(1.0, 1.0);
        assert!(m1.abs() <= 1e-15);
    }

    #[test]
    fn verify_bounds_detects_corruption() {
        let (problem, r) = quadratic_kkt_instance();
        let mut config = SolverConfig::aspadmm(1.0, 0.9);
        config.reference = Some(r);
        config.max_iter = 60;
        config.tol_kkt = 0.0;
        let out = run_aspadmm(&problem, &config, None).unwrap();
        let cs = bound_constants(&problem, &config, None).unwrap();
        let report = verify_bounds(&out.trace, &cs, WhichTheorem::Theorem2, &config).unwrap();
        assert!(report.certified(), "violations: {:?}", report.violations);

        // negative control: inflate every feasibility entry
        let mut corrupted = out.trace.clone();
        for row in &mut corrupted.rows {
            row.feasibility = row.feasibility * 2.0 + 1.0;
        }
        let report = verify_bounds(&corrupted, &cs, WhichTheorem::Theorem2, &config).unwrap();
        assert!(!report.certified());
    }

    #[test]
    fn dandiao_stationary_is_zero_and_positive_off_anchor() {
        let (problem, r) = quadratic_kkt_instance();
        let mut config = SolverConfig::spadmm(1.0, 1.0);
        config.max_iter = 2;
        config.tol_kkt = 0.0;
        let out = run_spadmm(
            &problem,
            &config,
            Some((r.x.clone(), r.y.clone(), r.z.clone())),
        )
        .unwrap();
        let d = dandiao_quantity(&problem, &config, &out).unwrap();
        assert!(d <= 1e-18);

        // one off-anchor step: recompute the terms independently (S = T = 0)
        let mut config = SolverConfig::spadmm(0.9, 0.8);
        config.max_iter = 1;
        config.tol_kkt = 0.0;
        let x0 = vec2(0.4, 0.1);
        let y0 = vec2(-0.2, 0.3);
        let z0 = vec2(0.0, 0.2);
        let out =
            run_spadmm(&problem, &config, Some((x0.clone(), y0.clone(), z0.clone()))).unwrap();
        let d = dandiao_quantity(&problem, &config, &out).unwrap();
        let bdy = problem.b.apply(&(&out.y - &y0)).unwrap();
        let hand = (&out.z - &z0).norm_squared() / (config.tau * config.lambda)
            + config.lambda * bdy.norm_squared();
        assert!((d - hand).abs() <= 1e-12 * (1.0 + hand));
        assert!(d > 0.0);
    }

    #[test]
    fn schedule_condition_rejects_growing_metrics_on_weak_blocks() {
        // l1-type g block has Sigma_g = 0; a growing T schedule must refuse.
        let (mut problem, _) = quadratic_kkt_instance();
        problem.g_block = BlockSpec::prox_only(ProxFunction::L1 { weight: 0.5 }, 2);
        let mut config = SolverConfig::aspadmm(1.0, 0.9);
        config.t_schedule = MetricSchedule::PenaltyScaled(Metric::identity(2));
        let err = run_aspadmm(&problem, &config, None).unwrap_err();
        assert!(matches!(err, SolverError::ScheduleCondition { .. }), "{err}");
    }

    #[test]
    fn parallel_runs_share_immutable_problem() {
        let (problem, _) = quadratic_kkt_instance();
        let mut config = SolverConfig::spadmm(1.0, 1.0);
        config.max_iter = 50;
        let problem = std::sync::Arc::new(problem);
        let config = std::sync::Arc::new(config);
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let p = problem.clone();
                let c = config.clone();
                std::thread::spawn(move || run_spadmm(&p, &c, None).unwrap().x)
            })
            .collect();
        let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        for w in results.windows(2) {
            assert_eq!(w[0], w[1]);
        }
    }
}
