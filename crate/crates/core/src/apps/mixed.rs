//! Mixed l0 / l2,0 sparse optimization.
//!
//! `min |Ax - b|^2 + lambda1 |x|_{2,0} + lambda2 |x|_0` is lifted through the
//! nonnegative split `z = (x+; x-)`, the per-group l1 aggregation `y`, and
//! the quadratic surrogate family whose conjugate turns the zero norms into
//! the difference-of-convex penalty
//!
//! ```text
//! |(A,-A)z - b|^2 + rho1 |y|_1 - lambda1 sum_i f0*((rho1/lambda1) y_i)
//!                 + rho2 |z|_1 - lambda2 sum_j f0*((rho2/lambda2) |z_j|),
//!     s.t. link z = y, z >= 0.
//! ```
//!
//! A proximal majorization-minimization outer loop linearizes the concave
//! parts and hands each convex subproblem (with the duplicated variable
//! `s = z`) to the multi-block solver: blocks x = (z, s), y-block = y, so the
//! inner order is: extrapolate y, s half-step, z step, s full step, y step,
//! two dual updates with step `tau * beta`.

use super::{diagnostics_gap, nnls_qp, AppError, Result};
use crate::linop::LinearMap;
use crate::prox::{grad_conj_separable, grad_conj_separable_abs, soft_threshold, PhiSurrogate, ProxFunction};
use crate::sgs::{self, BlockSolveOverride, MbBlock, MultiBlockProblem, SgsConfig, SgsMode, SgsStep};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use std::sync::Arc;

#[derive(Debug, Clone)]
pub struct MixedSparseInstance {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Index sets of the equisize groups (a partition of 0..n).
    pub groups: Vec<Vec<usize>>,
    /// Weight of the group zero norm.
    pub lambda1: f64,
    /// Weight of the entrywise zero norm.
    pub lambda2: f64,
    /// Penalty weights of the two variational constraints.
    pub rho1: f64,
    pub rho2: f64,
    /// Parameter `a >= 2` of the surrogate family.
    pub surrogate_a: f64,
    /// Proximal majorization weight.
    pub eta: f64,
    pub x_true: Option<DVector<f64>>,
    pub seed: u64,
}

impl MixedSparseInstance {
    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    pub fn surrogate(&self) -> PhiSurrogate {
        PhiSurrogate { a: self.surrogate_a }
    }

    /// Zero-norm objective `|Ax-b|^2 + lambda1 |x|_{2,0} + lambda2 |x|_0`.
    pub fn l0_objective(&self, x: &DVector<f64>) -> f64 {
        let ls = (&self.a * x - &self.b).norm_squared();
        let group_l0 = self
            .groups
            .iter()
            .filter(|g| g.iter().any(|&i| x[i] != 0.0))
            .count() as f64;
        let entry_l0 = x.iter().filter(|v| **v != 0.0).count() as f64;
        ls + self.lambda1 * group_l0 + self.lambda2 * entry_l0
    }
}

/// Equisize random instance: `S` active groups, each `r`-sparse Gaussian,
/// `b = A x* + 0.001 * gaussian`.
pub fn gen_mixed_instance(
    m: usize,
    n: usize,
    n_groups: usize,
    active_groups: usize,
    per_group_nonzeros: usize,
    seed: u64,
) -> Result<MixedSparseInstance> {
    if n_groups == 0 || n % n_groups != 0 {
        return Err(AppError::Parameter(format!(
            "group count {n_groups} must divide the dimension {n}"
        )));
    }
    let gsize = n / n_groups;
    if active_groups > n_groups {
        return Err(AppError::Parameter(format!(
            "active group count {active_groups} exceeds {n_groups}"
        )));
    }
    if per_group_nonzeros > gsize {
        return Err(AppError::Parameter(format!(
            "per-group sparsity {per_group_nonzeros} exceeds group size {gsize}"
        )));
    }
    let mut rng = crate::seeded_rng(seed);
    let scale = 1.0 / (m as f64).sqrt();
    let a = DMatrix::from_fn(m, n, |_, _| crate::normal(&mut rng) * scale);
    let groups: Vec<Vec<usize>> = (0..n_groups)
        .map(|g| (g * gsize..(g + 1) * gsize).collect())
        .collect();
    let mut group_order: Vec<usize> = (0..n_groups).collect();
    group_order.shuffle(&mut rng);
    let mut x_true = DVector::zeros(n);
    for &g in &group_order[..active_groups] {
        let mut coords = groups[g].clone();
        coords.shuffle(&mut rng);
        for &i in &coords[..per_group_nonzeros] {
            x_true[i] = crate::normal(&mut rng);
        }
    }
    let noise = DVector::from_fn(m, |_, _| crate::normal(&mut rng) * 1e-3);
    let b = &a * &x_true + noise;
    Ok(MixedSparseInstance {
        a,
        b,
        groups,
        lambda1: 1e-4,
        lambda2: 1e-6,
        rho1: 3.3e-5,
        rho2: 3e-6,
        surrogate_a: 2.0,
        eta: 0.05,
        x_true: Some(x_true),
        seed,
    })
}

/// Whether the y-link operator is the corrected `(B, B)` (so that the split
/// `z = (x+; x-)` satisfies `link z = B|x|`) or the literal `(B, -B)` kept
/// for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkMode {
    CorrectedBB,
    LiteralBMinusB,
}

/// Materialized operators of the lifted formulation.
#[derive(Debug, Clone)]
pub struct MixedReformulation {
    /// `(A, -A)`, m x 2n.
    pub stack: DMatrix<f64>,
    /// The y-link, N x 2n.
    pub link: DMatrix<f64>,
    /// Group aggregation `B` (one unit entry per column), N x n.
    pub group_map: DMatrix<f64>,
}

pub fn mixed_reformulate(inst: &MixedSparseInstance, mode: LinkMode) -> MixedReformulation {
    let (m, n) = (inst.a.nrows(), inst.a.ncols());
    let ng = inst.groups.len();
    let mut stack = DMatrix::zeros(m, 2 * n);
    stack.view_mut((0, 0), (m, n)).copy_from(&inst.a);
    stack.view_mut((0, n), (m, n)).copy_from(&(-&inst.a));
    let mut group_map = DMatrix::zeros(ng, n);
    for (g, idx) in inst.groups.iter().enumerate() {
        for &i in idx {
            group_map[(g, i)] = 1.0;
        }
    }
    let mut link = DMatrix::zeros(ng, 2 * n);
    link.view_mut((0, 0), (ng, n)).copy_from(&group_map);
    let second = match mode {
        LinkMode::CorrectedBB => group_map.clone(),
        LinkMode::LiteralBMinusB => -&group_map,
    };
    link.view_mut((0, n), (ng, n)).copy_from(&second);
    MixedReformulation {
        stack,
        link,
        group_map,
    }
}

/// Canonical nonnegative split `(x+, x-)`.
pub fn canonical_split(x: &DVector<f64>) -> DVector<f64> {
    let n = x.len();
    DVector::from_fn(2 * n, |i, _| {
        if i < n {
            x[i].max(0.0)
        } else {
            (-x[i - n]).max(0.0)
        }
    })
}

/// Penalized difference-of-convex objective of the lifted formulation with
/// `y` substituted through the link (valid on `z >= 0`).
pub fn penalized_objective(
    inst: &MixedSparseInstance,
    reform: &MixedReformulation,
    z: &DVector<f64>,
) -> f64 {
    let surr = inst.surrogate();
    let y = &reform.link * z;
    let ls = (&reform.stack * z - &inst.b).norm_squared();
    let y_pen: f64 = y
        .iter()
        .map(|&v| inst.rho1 * v.abs() - inst.lambda1 * surr.conj(inst.rho1 / inst.lambda1 * v))
        .sum();
    let z_pen: f64 = z
        .iter()
        .map(|&v| {
            inst.rho2 * v.abs() - inst.lambda2 * surr.conj(inst.rho2 / inst.lambda2 * v.abs())
        })
        .sum();
    ls + y_pen + z_pen
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixedArm {
    SgsAspadmm,
    SgsSpadmm,
}

/// How the duplicated-variable subproblem is solved: the literal
/// gradient-equals-zero linear solve, or the bound-constrained QP that keeps
/// `s >= 0` exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubproblemMode {
    UnconstrainedPaper,
    ProjectedNewton,
}

#[derive(Debug, Clone)]
pub struct MixedPmmConfig {
    pub arm: MixedArm,
    pub beta: f64,
    pub tau: f64,
    pub inner_tol: f64,
    pub inner_max: usize,
    pub outer_tol: f64,
    pub outer_max: usize,
    pub link_mode: LinkMode,
    pub s_mode: SubproblemMode,
}

impl Default for MixedPmmConfig {
    fn default() -> Self {
        MixedPmmConfig {
            arm: MixedArm::SgsAspadmm,
            beta: 0.05,
            tau: 0.99,
            inner_tol: 1e-6,
            inner_max: 200,
            outer_tol: 1e-4,
            outer_max: 30,
            link_mode: LinkMode::CorrectedBB,
            s_mode: SubproblemMode::UnconstrainedPaper,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MixedInnerRow {
    pub k: usize,
    pub eps_gap: f64,
    pub eps_p1: f64,
    pub eps_p2: f64,
    /// `max(eps_gap, eps_p1, eps_p2)`: stopping and plotting metric.
    pub error: f64,
    pub pobj: f64,
    /// A certified lower bound on the subproblem's dual value (weak duality
    /// holds against the optimal value by construction).
    pub dobj: f64,
    /// Worst negative entry of the duplicated variable (the paper-mode
    /// linear solve does not enforce `s >= 0`).
    pub s_min: f64,
}

#[derive(Debug, Clone)]
pub struct MixedPmmResult {
    pub z: DVector<f64>,
    pub y: DVector<f64>,
    pub s: DVector<f64>,
    /// Mapped-back primal point `x = z_+ - z_-`.
    pub x: DVector<f64>,
    pub outer_iterations: usize,
    pub inner_iterations: Vec<usize>,
    pub inner_traces: Vec<Vec<MixedInnerRow>>,
    pub outer_objectives: Vec<f64>,
    pub converged: bool,
}

struct NnlsOverride {
    enforce: bool,
}

impl BlockSolveOverride for NnlsOverride {
    fn solve(
        &self,
        metric: &DMatrix<f64>,
        rhs: &DVector<f64>,
    ) -> std::result::Result<DVector<f64>, String> {
        if !self.enforce {
            return Err("override disabled".into());
        }
        nnls_qp(metric, rhs).map_err(|e| e.to_string())
    }
}

/// Outer PMM loop around the accelerated inner splitting.
pub fn mixed_pmm_run(inst: &MixedSparseInstance, config: &MixedPmmConfig) -> Result<MixedPmmResult> {
    let n2 = 2 * inst.n();
    let ng = inst.groups.len();
    if inst.eta <= 0.0 || config.beta <= 0.0 {
        return Err(AppError::Parameter("eta and beta must be positive".into()));
    }
    let reform = mixed_reformulate(inst, config.link_mode);
    let surr = inst.surrogate();
    let eta = inst.eta;

    // theta-independent pieces
    let stack_gram = reform.stack.transpose() * &reform.stack;
    let stack_tb = reform.stack.transpose() * &inst.b * 2.0;
    let fista_lipschitz = 2.0
        * crate::linop::extremal_eigenvalue(
            &LinearMap::dense(stack_gram.clone()),
            crate::linop::Extremal::Largest,
        )
        .map_err(crate::admm::SolverError::from)?
        + eta;

    let mut z = DVector::zeros(n2);
    let mut y = DVector::zeros(ng);
    let mut s = DVector::zeros(n2);
    let mut dual = DVector::zeros(ng + n2);

    let mut inner_traces: Vec<Vec<MixedInnerRow>> = Vec::new();
    let mut inner_iterations = Vec::new();
    let mut outer_objectives = vec![penalized_objective(inst, &reform, &z)];
    let mut converged = false;
    let mut outer_done = 0;

    for outer in 0..config.outer_max {
        // gradients of the concave parts at the anchors
        let gh1 = grad_conj_separable(&y, &surr, inst.rho1 / inst.lambda1) * inst.lambda1;
        let gh2 = grad_conj_separable_abs(&z, &surr, inst.rho2 / inst.lambda2) * inst.lambda2;

        let problem = build_inner_problem(inst, &reform, &stack_gram, &stack_tb, &gh1, &gh2, &z, &y)?;
        let mut cfg = SgsConfig::new(
            match config.arm {
                MixedArm::SgsAspadmm => SgsMode::Aspadmm,
                MixedArm::SgsSpadmm => SgsMode::Spadmm,
            },
            config.beta,
            config.tau,
        );
        cfg.max_iter = config.inner_max;
        cfg.tol_kkt = 0.0;
        if config.s_mode == SubproblemMode::ProjectedNewton {
            cfg.x_overrides = vec![None, Some(Arc::new(NnlsOverride { enforce: true }))];
        }

        let mut rows: Vec<MixedInnerRow> = Vec::new();
        let inner_tol = config.inner_tol;
        let z_anchor = z.clone();
        let y_anchor = y.clone();
        let h1_t: f64 = y_anchor
            .iter()
            .map(|&v| surr.conj(inst.rho1 / inst.lambda1 * v))
            .sum::<f64>()
            * inst.lambda1;
        let h2_t: f64 = z_anchor
            .iter()
            .map(|&v| surr.conj(inst.rho2 / inst.lambda2 * v.abs()))
            .sum::<f64>()
            * inst.lambda2;
        let mut fista_warm = z_anchor.map(|v| v.max(0.0));

        let state = {
            let mut observer = |step: &SgsStep<'_>| -> bool {
                let zt = DVector::from(step.x.rows(0, n2).into_owned());
                let st = DVector::from(step.x.rows(n2, n2).into_owned());
                let yt = step.y.clone();
                let mu = DVector::from(step.z.rows(0, ng).into_owned());

                // primal value at the feasibility-repaired point (z := s,
                // y := link s), which is exactly feasible given s; raw
                // iterates violate the coupling constraints, where the value
                // may transiently undercut the dual bound
                let link_s = &reform.link * &st;
                let pobj = {
                    let y_lin: f64 = link_s.dot(&gh1) - y_anchor.dot(&gh1);
                    let z_lin: f64 = st.dot(&gh2) - z_anchor.dot(&gh2);
                    inst.rho1 * link_s.iter().map(|v| v.abs()).sum::<f64>() - h1_t - y_lin
                        + eta / 2.0 * (&link_s - &y_anchor).norm_squared()
                        + inst.rho2 * st.iter().map(|v| v.abs()).sum::<f64>()
                        - h2_t
                        - z_lin
                        + eta / 2.0 * (&st - &z_anchor).norm_squared()
                        + (&reform.stack * &st - &inst.b).norm_squared()
                };
                let dobj = partial_dual_lower_bound(
                    inst,
                    &reform,
                    &stack_gram,
                    &stack_tb,
                    &gh1,
                    &gh2,
                    (&z_anchor, &y_anchor, h1_t, h2_t),
                    &mu,
                    fista_lipschitz,
                    &mut fista_warm,
                    config.s_mode == SubproblemMode::ProjectedNewton,
                );
                let eps_p1 = (&zt - &st).norm() / (1.0 + zt.norm() + st.norm());
                let eps_p2 = (&link_s - &yt).norm() / (1.0 + link_s.norm() + yt.norm());
                let eps_gap = diagnostics_gap(pobj, dobj);
                let error = eps_gap.max(eps_p1).max(eps_p2);
                rows.push(MixedInnerRow {
                    k: step.k,
                    eps_gap,
                    eps_p1,
                    eps_p2,
                    error,
                    pobj,
                    dobj,
                    s_min: st.min(),
                });
                error > inner_tol
            };
            sgs::run_sgs_aspadmm(
                &problem,
                &cfg,
                Some((concat(&z, &s), y.clone(), dual.clone())),
                Some(&mut observer),
            )
            .map_err(|e| AppError::Inner { outer, source: e })?
        };

        let z_new = DVector::from(state.x.rows(0, n2).into_owned());
        let s_new = DVector::from(state.x.rows(n2, n2).into_owned());
        let y_new = state.y.clone();
        dual = state.z.clone();
        inner_iterations.push(state.k);
        inner_traces.push(rows);

        let delta = ((&z_new - &z).norm_squared() + (&y_new - &y).norm_squared()).sqrt();
        let scale = 1.0 + (z.norm_squared() + y.norm_squared()).sqrt();
        z = z_new;
        y = y_new;
        s = s_new;
        outer_objectives.push(penalized_objective(inst, &reform, &z.map(|v| v.max(0.0))));
        outer_done = outer + 1;
        if delta / scale <= config.outer_tol {
            converged = true;
            break;
        }
    }

    let n = inst.n();
    let x = DVector::from_fn(n, |i, _| z[i] - z[n + i]);
    Ok(MixedPmmResult {
        z,
        y,
        s,
        x,
        outer_iterations: outer_done,
        inner_iterations,
        inner_traces,
        outer_objectives,
        converged,
    })
}

fn concat(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.len() + b.len());
    out.rows_mut(0, a.len()).copy_from(a);
    out.rows_mut(a.len(), b.len()).copy_from(b);
    out
}

/// Convex subproblem as a multi-block problem: x = (z, s), y-block = y,
/// constraint rows `y - link s = 0` and `s - z = 0`, so the generic dual
/// `(mu, mu_hat)` satisfies `mu += tau beta (link s - y)` and
/// `mu_hat += tau beta (z - s)`.
#[allow(clippy::too_many_arguments)]
fn build_inner_problem(
    inst: &MixedSparseInstance,
    reform: &MixedReformulation,
    stack_gram: &DMatrix<f64>,
    stack_tb: &DVector<f64>,
    gh1: &DVector<f64>,
    gh2: &DVector<f64>,
    z_anchor: &DVector<f64>,
    y_anchor: &DVector<f64>,
) -> Result<MultiBlockProblem> {
    let n2 = 2 * inst.n();
    let ng = inst.groups.len();
    let eta = inst.eta;

    let a_z = LinearMap::vstack(vec![
        LinearMap::zero(ng, n2),
        LinearMap::scaled(-1.0, LinearMap::identity(n2)),
    ])
    .expect("shapes agree");
    let a_s = LinearMap::vstack(vec![
        LinearMap::scaled(-1.0, LinearMap::dense(reform.link.clone())),
        LinearMap::identity(n2),
    ])
    .expect("shapes agree");
    let b_y = LinearMap::vstack(vec![
        LinearMap::identity(ng),
        LinearMap::zero(n2, ng),
    ])
    .expect("shapes agree");

    let mut p = DMatrix::zeros(2 * n2, 2 * n2);
    for i in 0..n2 {
        p[(i, i)] = eta;
    }
    p.view_mut((n2, n2), (n2, n2))
        .copy_from(&(stack_gram * 2.0));
    let mut b_lin = DVector::zeros(2 * n2);
    for i in 0..n2 {
        b_lin[i] = eta * z_anchor[i] + gh2[i];
        b_lin[n2 + i] = stack_tb[i];
    }
    let d_lin = DVector::from_fn(ng, |i, _| eta * y_anchor[i] + gh1[i]);

    Ok(MultiBlockProblem {
        x_blocks: vec![
            MbBlock { dim: n2, op: a_z },
            MbBlock { dim: n2, op: a_s },
        ],
        y_blocks: vec![MbBlock { dim: ng, op: b_y }],
        c: DVector::zeros(ng + n2),
        p,
        b: b_lin,
        q: DMatrix::identity(ng, ng) * eta,
        d: d_lin,
        f1: Some(ProxFunction::L1 { weight: inst.rho2 }),
        g1: Some(ProxFunction::L1 { weight: inst.rho1 }),
        x_pinned: Vec::new(),
        y_pinned: Vec::new(),
    })
}

/// Certified lower bound on the partial dual
///
/// ```text
/// q(mu) = min_y [rho1|y|_1 - lambda1(H1 + <dH1, y - y_t>) + eta/2 |y - y_t|^2 - <mu, y>]
///       + min_u  [|Su - b|^2 + rho2|u|_1 - lambda2(H2 + <dH2, u - z_t>)
///                 + eta/2 |u - z_t|^2 + <link' mu, u>]
/// ```
///
/// where the u minimization runs over `u >= 0` in the bound-constrained mode
/// and over all of R^2n in the literal mode, matching the problem the inner
/// solver actually treats.  The y part is an exact prox; the u part is
/// eta-strongly convex, so an accelerated proximal-gradient polish plus the
/// subgradient-residual bound `min >= value - |g|^2/(2 eta)` yields a value
/// certified to lie below the true dual (hence below the subproblem optimum).
#[allow(clippy::too_many_arguments)]
fn partial_dual_lower_bound(
    inst: &MixedSparseInstance,
    reform: &MixedReformulation,
    stack_gram: &DMatrix<f64>,
    stack_tb: &DVector<f64>,
    gh1: &DVector<f64>,
    gh2: &DVector<f64>,
    anchors: (&DVector<f64>, &DVector<f64>, f64, f64),
    mu: &DVector<f64>,
    lipschitz: f64,
    warm: &mut DVector<f64>,
    nonneg: bool,
) -> f64 {
    let (z_t, y_t, h1_t, h2_t) = anchors;
    let eta = inst.eta;

    // exact y minimization
    let y_hat = DVector::from_fn(y_t.len(), |i, _| {
        soft_threshold(y_t[i] + (gh1[i] + mu[i]) / eta, inst.rho1 / eta)
    });
    let val_y = inst.rho1 * y_hat.iter().map(|v| v.abs()).sum::<f64>() - h1_t
        - gh1.dot(&(&y_hat - y_t))
        + eta / 2.0 * (&y_hat - y_t).norm_squared()
        - mu.dot(&y_hat);

    // u part: 1/2 u'Mu + w'u + rho2|u|_1 (+ indicator in nonneg mode),
    // M = 2 S'S + eta I; w carries everything smooth and linear
    let link_mu = reform.link.transpose() * mu;
    let w = DVector::from_fn(2 * inst.n(), |i, _| {
        -gh2[i] - eta * z_t[i] - stack_tb[i] + link_mu[i]
    });
    let grad_smooth = |u: &DVector<f64>| stack_gram * u * 2.0 + u * eta + &w;
    let prox_step = |v: DVector<f64>| -> DVector<f64> {
        if nonneg {
            // l1 on the orthant is linear; fold it into the gradient shift
            v.map(|x| (x - inst.rho2 / lipschitz).max(0.0))
        } else {
            v.map(|x| soft_threshold(x, inst.rho2 / lipschitz))
        }
    };
    let resid_of = |u: &DVector<f64>| -> f64 {
        let g = grad_smooth(u);
        let mut acc = 0.0;
        for i in 0..u.len() {
            let d = if nonneg {
                // subdifferential of rho2*u + indicator(u >= 0)
                if u[i] > 0.0 {
                    g[i] + inst.rho2
                } else {
                    (g[i] + inst.rho2).min(0.0)
                }
            } else if u[i] > 0.0 {
                g[i] + inst.rho2
            } else if u[i] < 0.0 {
                g[i] - inst.rho2
            } else {
                (g[i].abs() - inst.rho2).max(0.0)
            };
            acc += d * d;
        }
        acc.sqrt()
    };

    // warm-started accelerated proximal gradient
    let mut u = warm.clone();
    let mut u_prev = u.clone();
    let mut tk = 1.0_f64;
    let step = 1.0 / lipschitz;
    for it in 0..400 {
        let momentum = if it == 0 {
            u.clone()
        } else {
            let t_next = (1.0 + (1.0 + 4.0 * tk * tk).sqrt()) / 2.0;
            let coeff = (tk - 1.0) / t_next;
            tk = t_next;
            &u + (&u - &u_prev) * coeff
        };
        let g = grad_smooth(&momentum);
        let next = prox_step(&momentum - &g * step);
        u_prev = std::mem::replace(&mut u, next);
        if it % 25 == 24 && resid_of(&u) <= 1e-10 * (1.0 + w.amax()) {
            break;
        }
    }
    *warm = u.clone();

    let resid = resid_of(&u);
    let val_u = (&reform.stack * &u - &inst.b).norm_squared()
        + inst.rho2 * u.iter().map(|v| v.abs()).sum::<f64>()
        - h2_t
        - gh2.dot(&(&u - z_t))
        + eta / 2.0 * (&u - z_t).norm_squared()
        + link_mu.dot(&u);
    let lower_u = val_u - resid * resid / (2.0 * eta);

    val_y + lower_u
}

/// Dense oracle for the inner convex subproblem: with `y` substituted by the
/// link and `s = z`, the subproblem collapses to the nonnegative QP
/// `min_{u>=0} |Su-b|^2 + rho2 1'u + eta/2|u-z_t|^2 - <gh2, u>
///  + rho1 1'(link u) - <gh1, link u> + eta/2 |link u - y_t|^2 + consts`
/// (the l1 terms are linear on the nonnegative orthant), solved exactly by
/// the active-set QP.  Used by the splitting-equivalence test.
pub fn unsplit_oracle(
    inst: &MixedSparseInstance,
    reform: &MixedReformulation,
    z_anchor: &DVector<f64>,
    y_anchor: &DVector<f64>,
) -> Result<(DVector<f64>, f64)> {
    let surr = inst.surrogate();
    let n2 = 2 * inst.n();
    let eta = inst.eta;
    let gh1 = grad_conj_separable(y_anchor, &surr, inst.rho1 / inst.lambda1) * inst.lambda1;
    let gh2 = grad_conj_separable_abs(z_anchor, &surr, inst.rho2 / inst.lambda2) * inst.lambda2;
    let m = reform.stack.transpose() * &reform.stack * 2.0
        + DMatrix::identity(n2, n2) * eta
        + reform.link.transpose() * &reform.link * eta;
    let ones_link = reform.link.transpose() * DVector::from_element(reform.link.nrows(), 1.0);
    let r = reform.stack.transpose() * &inst.b * 2.0 + z_anchor * eta
        + &gh2
        + reform.link.transpose() * (y_anchor * eta)
        + reform.link.transpose() * &gh1
        - ones_link * inst.rho1
        - DVector::from_element(n2, inst.rho2);
    let u = nnls_qp(&m, &r)?;
    let value = subproblem_objective_at(inst, reform, z_anchor, y_anchor, &u, &(&reform.link * &u), &u);
    Ok((u, value))
}

/// Subproblem objective `F(z, y, s)` for given anchors (no indicators).
pub fn subproblem_objective_at(
    inst: &MixedSparseInstance,
    reform: &MixedReformulation,
    z_anchor: &DVector<f64>,
    y_anchor: &DVector<f64>,
    z: &DVector<f64>,
    y: &DVector<f64>,
    s: &DVector<f64>,
) -> f64 {
    let surr = inst.surrogate();
    let eta = inst.eta;
    let gh1 = grad_conj_separable(y_anchor, &surr, inst.rho1 / inst.lambda1) * inst.lambda1;
    let gh2 = grad_conj_separable_abs(z_anchor, &surr, inst.rho2 / inst.lambda2) * inst.lambda2;
    let h1_t: f64 = y_anchor
        .iter()
        .map(|&v| surr.conj(inst.rho1 / inst.lambda1 * v))
        .sum::<f64>()
        * inst.lambda1;
    let h2_t: f64 = z_anchor
        .iter()
        .map(|&v| surr.conj(inst.rho2 / inst.lambda2 * v.abs()))
        .sum::<f64>()
        * inst.lambda2;
    inst.rho1 * y.iter().map(|v| v.abs()).sum::<f64>() - h1_t - gh1.dot(&(y - y_anchor))
        + eta / 2.0 * (y - y_anchor).norm_squared()
        + inst.rho2 * z.iter().map(|v| v.abs()).sum::<f64>()
        - h2_t
        - gh2.dot(&(z - z_anchor))
        + eta / 2.0 * (z - z_anchor).norm_squared()
        + (&reform.stack * s - &inst.b).norm_squared()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_group_structure() {
        let inst = gen_mixed_instance(16, 32, 8, 3, 2, 5).unwrap();
        assert_eq!(inst.groups.len(), 8);
        let x = inst.x_true.as_ref().unwrap();
        // groups partition 0..n exactly
        let mut seen = vec![false; 32];
        for g in &inst.groups {
            assert_eq!(g.len(), 4);
            for &i in g {
                assert!(!seen[i]);
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&b| b));
        // group sparsity S/N and intra sparsity rN/n exactly
        let active = inst
            .groups
            .iter()
            .filter(|g| g.iter().any(|&i| x[i] != 0.0))
            .count();
        assert_eq!(active, 3);
        let nnz = x.iter().filter(|v| **v != 0.0).count();
        assert_eq!(nnz, 3 * 2);
        // parameter validation
        assert!(gen_mixed_instance(16, 33, 8, 3, 2, 5).is_err());
        assert!(gen_mixed_instance(16, 32, 8, 9, 2, 5).is_err());
        assert!(gen_mixed_instance(16, 32, 8, 3, 5, 5).is_err());
        // determinism
        let again = gen_mixed_instance(16, 32, 8, 3, 2, 5).unwrap();
        assert_eq!(inst.a, again.a);
        assert_eq!(inst.b, again.b);
    }

    #[test]
    fn reformulation_identities() {
        let inst = gen_mixed_instance(12, 24, 6, 2, 2, 9).unwrap();
        let reform = mixed_reformulate(&inst, LinkMode::CorrectedBB);
        let x = inst.x_true.as_ref().unwrap();
        let zc = canonical_split(x);
        // nonnegative split reproduces Ax
        assert!((&reform.stack * &zc - &inst.a * x).amax() <= 1e-12);
        // group link applied to the canonical split equals per-group l1
        let y = &reform.link * &zc;
        for (g, idx) in inst.groups.iter().enumerate() {
            let l1: f64 = idx.iter().map(|&i| x[i].abs()).sum();
            assert!((y[g] - l1).abs() <= 1e-12);
        }
        // group map has one unit entry per column
        for j in 0..24 {
            let col_sum: f64 = (0..6).map(|g| reform.group_map[(g, j)]).sum();
            assert_eq!(col_sum, 1.0);
        }
        // zero-norm objective equivalence at the canonical split
        let split_group_l0 = y.iter().filter(|v| **v != 0.0).count() as f64;
        let split_entry_l0 = zc.iter().filter(|v| **v != 0.0).count() as f64;
        let split_obj = (&reform.stack * &zc - &inst.b).norm_squared()
            + inst.lambda1 * split_group_l0
            + inst.lambda2 * split_entry_l0;
        assert!((split_obj - inst.l0_objective(x)).abs() <= 1e-10);

        // literal link maps the canonical split to Bx, not B|x|
        let literal = mixed_reformulate(&inst, LinkMode::LiteralBMinusB);
        let y_lit = &literal.link * &zc;
        let bx = &reform.group_map * x;
        assert!((&y_lit - &bx).amax() <= 1e-12);
    }

    #[test]
    fn zero_data_keeps_zero_fixed_point() {
        let mut inst = gen_mixed_instance(8, 16, 4, 1, 1, 3).unwrap();
        inst.b = DVector::zeros(8);
        let mut cfg = MixedPmmConfig::default();
        cfg.outer_max = 3;
        let out = mixed_pmm_run(&inst, &cfg).unwrap();
        assert!(out.x.amax() <= 1e-9, "drifted to {}", out.x.amax());
        assert!(out.converged);
    }

    #[test]
    fn inner_solve_reaches_tolerance_with_weak_duality() {
        let inst = gen_mixed_instance(16, 32, 8, 3, 2, 11).unwrap();
        let mut cfg = MixedPmmConfig::default();
        cfg.outer_max = 1;
        let out = mixed_pmm_run(&inst, &cfg).unwrap();
        let rows = &out.inner_traces[0];
        let last = rows.last().unwrap();
        assert!(last.error <= cfg.inner_tol, "stalled at {}", last.error);
        // the certified dual bound never exceeds any logged primal value
        for row in rows {
            assert!(
                row.dobj <= row.pobj + 1e-9,
                "weak duality violated at k = {}: {} > {}",
                row.k,
                row.dobj,
                row.pobj
            );
        }

        // the constrained mode closes its gap against the nonnegative-QP
        // oracle optimum
        let mut cfg = MixedPmmConfig::default();
        cfg.outer_max = 1;
        cfg.s_mode = SubproblemMode::ProjectedNewton;
        let out = mixed_pmm_run(&inst, &cfg).unwrap();
        let rows = &out.inner_traces[0];
        assert!(rows.last().unwrap().error <= cfg.inner_tol);
        let reform = mixed_reformulate(&inst, LinkMode::CorrectedBB);
        let (_, p_star) =
            unsplit_oracle(&inst, &reform, &DVector::zeros(64), &DVector::zeros(8)).unwrap();
        for row in rows {
            assert!(
                row.dobj <= p_star + 1e-9,
                "dual bound {} above the oracle optimum {p_star}",
                row.dobj
            );
        }
    }

    #[test]
    fn splitting_equivalence_against_unsplit_oracle() {
        // small instance, first subproblem solved tightly; mapping the split
        // solution back matches the unsplit nonnegative-QP oracle
        let inst = gen_mixed_instance(6, 8, 4, 2, 1, 17).unwrap();
        let reform = mixed_reformulate(&inst, LinkMode::CorrectedBB);
        let mut cfg = MixedPmmConfig::default();
        cfg.inner_tol = 1e-8;
        cfg.inner_max = 5000;
        cfg.outer_max = 1;
        cfg.s_mode = SubproblemMode::ProjectedNewton;
        let out = mixed_pmm_run(&inst, &cfg).unwrap();
        let (u_star, val_star) =
            unsplit_oracle(&inst, &reform, &DVector::zeros(16), &DVector::zeros(4)).unwrap();
        // evaluate the subproblem objective at the solver's (clamped) s
        let s = out.s.map(|v| v.max(0.0));
        let val_split = subproblem_objective_at(
            &inst,
            &reform,
            &DVector::zeros(16),
            &DVector::zeros(4),
            &s,
            &(&reform.link * &s),
            &s,
        );
        assert!(
            (val_split - val_star).abs() <= 1e-6 * (1.0 + val_star.abs()),
            "{val_split} vs {val_star}"
        );
        // mapped-back points agree
        let x_split = DVector::from_fn(8, |i, _| s[i] - s[8 + i]);
        let x_oracle = DVector::from_fn(8, |i, _| u_star[i] - u_star[8 + i]);
        assert!((x_split - x_oracle).amax() <= 1e-4);
    }

    #[test]
    fn paper_mode_tracks_s_constraint_violation() {
        let inst = gen_mixed_instance(12, 24, 6, 2, 2, 23).unwrap();
        let mut cfg = MixedPmmConfig::default();
        cfg.outer_max = 1;
        cfg.inner_max = 60;
        cfg.inner_tol = 0.0;
        let out = mixed_pmm_run(&inst, &cfg).unwrap();
        // the trace records the worst negative entry; it must exist as a
        // column and stay small once the run settles
        let last = out.inner_traces[0].last().unwrap();
        assert!(last.s_min <= 1e-3, "paper mode s_min {}", last.s_min);
    }

    #[test]
    fn outer_objective_non_increasing() {
        let inst = gen_mixed_instance(16, 32, 8, 3, 2, 29).unwrap();
        let mut cfg = MixedPmmConfig::default();
        cfg.outer_max = 6;
        cfg.inner_tol = 1e-8;
        cfg.inner_max = 2000;
        cfg.s_mode = SubproblemMode::ProjectedNewton;
        let out = mixed_pmm_run(&inst, &cfg).unwrap();
        // skip the infeasible all-zero start; compare successive majorization
        // minimizers
        for w in out.outer_objectives[1..].windows(2) {
            assert!(
                w[1] <= w[0] + 1e-6 * (1.0 + w[0].abs()),
                "outer objective increased: {} -> {}",
                w[0],
                w[1]
            );
        }
    }
}
