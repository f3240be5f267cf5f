//! Robust low-rank tensor completion.
//!
//! The nonconvex model splits each entry of the observed tensor into a
//! low-tubal-rank part `G` and a sparse impulse-noise part `M`, with caps on
//! the tensor spectral norm of `G` and the max norm of `M`.  A proximal
//! majorization-minimization outer loop linearizes the concave parts (the
//! spectral penalty through the t-SVD, the entrywise penalty directly) and
//! hands each convex three-block subproblem
//!
//! ```text
//! min  |G|_TNN - <dH1, G> + lambda(|M|_1 - <dH2, M>)
//!      + eta/2 (|G - G_n|^2 + |M - M_n|^2 + |Z - Z_n|^2)
//!      + caps  s.t.  G + M = Z,  Pi_Omega(Z) = Pi_Omega(X)
//! ```
//!
//! to the multi-block solver with x-blocks `(G, Z)` and y-block `M`, so the
//! inner iteration order is: extrapolate M, Z half-step, G step (capped TNN
//! prox), Z full step, M step (shrink-then-clamp), dual update.

use super::{diagnostics_gap, diagnostics_pfeas, AppError, Result};
use crate::linop::LinearMap;
use crate::prox::{project_pinned, soft_threshold, DcPenalty, ProxFunction};
use crate::sgs::{self, MbBlock, MultiBlockProblem, SgsConfig, SgsMode, SgsStep};
use crate::tensor::{self, Tensor3};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

#[derive(Debug, Clone)]
pub struct RtcInstance {
    pub x_true: Tensor3,
    /// Corrupted data on the sample set, zero elsewhere.
    pub observed: Tensor3,
    /// Sorted flat indices of the sample set.
    pub omega: Vec<usize>,
    pub sr: f64,
    pub alpha: f64,
    /// Tensor spectral-norm cap on G.
    pub j1: f64,
    /// Max-norm cap on M.
    pub j2: f64,
    /// Weight of the sparse-noise penalty.
    pub lambda: f64,
    /// Proximal majorization weight.
    pub eta: f64,
    pub penalty: DcPenalty,
    pub seed: u64,
}

impl RtcInstance {
    pub fn dims(&self) -> (usize, usize, usize) {
        self.x_true.dims()
    }

    pub fn observed_values(&self) -> DVector<f64> {
        DVector::from_fn(self.omega.len(), |k, _| self.observed.data()[self.omega[k]])
    }

    /// Nonconvex objective of the difference-of-convex reformulation at (G, M).
    pub fn outer_objective(&self, g: &Tensor3, m: &Tensor3) -> f64 {
        let h2: f64 = m.data().iter().map(|&v| self.penalty.eval(v)).sum();
        let l1: f64 = m.data().iter().map(|v| v.abs()).sum();
        tensor::tnn(g) - tensor::h_spectral(g, &self.penalty) + self.lambda * (l1 - h2)
    }
}

/// Low-tubal-rank synthetic instance: `X` is a t-product of Gaussian factors
/// (rank `r` tubal), rescaled to unit max-norm; `Omega` samples
/// `round(SR * total)` entries; salt-and-pepper corruption flips a ratio
/// `alpha` of the observed entries to the extreme values of `X`.
pub fn gen_rtc_instance(
    n1: usize,
    n2: usize,
    n3: usize,
    rank: usize,
    sr: f64,
    alpha: f64,
    seed: u64,
) -> Result<RtcInstance> {
    if !(0.0..=1.0).contains(&sr) || !(0.0..=1.0).contains(&alpha) {
        return Err(AppError::Parameter(format!(
            "sr = {sr} and alpha = {alpha} must lie in [0, 1]"
        )));
    }
    if rank == 0 || rank > n1.min(n2) {
        return Err(AppError::Parameter(format!(
            "tubal rank {rank} out of range for {n1}x{n2} slices"
        )));
    }
    let mut rng = crate::seeded_rng(seed);
    let total = n1 * n2 * n3;

    // t-product of Gaussian factors via the Fourier slices
    let mut u = Tensor3::zeros(n1, rank, n3);
    let mut v = Tensor3::zeros(rank, n2, n3);
    for val in u.data_mut() {
        *val = crate::normal(&mut rng);
    }
    for val in v.data_mut() {
        *val = crate::normal(&mut rng);
    }
    let uh = tensor::dft_mode3_real(&u);
    let vh = tensor::dft_mode3_real(&v);
    let mut xh = tensor::ComplexTensor3::zeros(n1, n2, n3);
    for s in 0..n3 {
        xh.set_slice(s, &(uh.slice(s) * vh.slice(s)));
    }
    let mut x_true = tensor::dft_mode3(&xh, tensor::FftDirection::Inverse)
        .try_to_real(1e-8 * (1.0 + xh.max_abs()))?;
    let peak = x_true.max_abs();
    if peak > 0.0 {
        for val in x_true.data_mut() {
            *val /= peak;
        }
    }

    // sample set
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut rng);
    let n_obs = (sr * total as f64).round() as usize;
    let mut omega: Vec<usize> = order[..n_obs].to_vec();
    omega.sort_unstable();

    // salt-and-pepper corruption on the observed entries only
    let lo = x_true.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x_true.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut observed = Tensor3::zeros(n1, n2, n3);
    for &idx in &omega {
        observed.data_mut()[idx] = x_true.data()[idx];
    }
    let mut corrupt_order = omega.clone();
    corrupt_order.shuffle(&mut rng);
    let n_corrupt = (alpha * n_obs as f64).round() as usize;
    for (pos, &idx) in corrupt_order[..n_corrupt].iter().enumerate() {
        observed.data_mut()[idx] = if pos % 2 == 0 { lo } else { hi };
    }

    let j1 = 1.5 * tensor::spectral_norm(&x_true);
    let j2 = 1.1 * (hi - lo).max(1e-6);
    Ok(RtcInstance {
        x_true,
        observed,
        omega,
        sr,
        alpha,
        j1,
        j2,
        lambda: 0.2,
        eta: 0.08,
        penalty: DcPenalty::Mcp { gamma: 0.5 },
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RtcArm {
    SgsAspadmm,
    SgsSpadmm,
    Admm3d,
}

impl RtcArm {
    fn mode(&self) -> SgsMode {
        match self {
            RtcArm::SgsAspadmm => SgsMode::Aspadmm,
            RtcArm::SgsSpadmm => SgsMode::Spadmm,
            RtcArm::Admm3d => SgsMode::Admm3d,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RtcPmmConfig {
    pub arm: RtcArm,
    /// Augmented-Lagrangian penalty.
    pub beta: f64,
    pub tau: f64,
    pub inner_tol: f64,
    pub inner_max: usize,
    pub outer_tol: f64,
    pub outer_max: usize,
}

impl Default for RtcPmmConfig {
    fn default() -> Self {
        RtcPmmConfig {
            arm: RtcArm::SgsAspadmm,
            beta: 0.1,
            tau: 0.95,
            inner_tol: 1e-4,
            inner_max: 200,
            outer_tol: 1e-4,
            outer_max: 30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RtcInnerRow {
    pub k: usize,
    pub eps_gap: f64,
    pub eps_p: f64,
    /// `max(eps_gap, eps_p)`: the stopping and plotting metric.
    pub error: f64,
    pub pobj: f64,
    pub dobj: f64,
    /// `|G - X_true|_F / |X_true|_F`.
    pub rel_error: f64,
    /// Raw constraint residual `|G + M - Z|_F` from the generic trace, kept
    /// for the cross-column consistency check.
    pub feasibility: f64,
    /// Whether the observed entries of Z are pinned exactly.
    pub omega_pinned: bool,
    pub m_max: f64,
    pub g_spectral: f64,
}

#[derive(Debug, Clone)]
pub struct RtcPmmResult {
    pub g: Tensor3,
    pub m: Tensor3,
    pub z: Tensor3,
    pub outer_iterations: usize,
    pub inner_iterations: Vec<usize>,
    pub inner_traces: Vec<Vec<RtcInnerRow>>,
    pub outer_objectives: Vec<f64>,
    pub converged: bool,
    pub rel_error: f64,
}

struct InnerDiag<'a> {
    inst: &'a RtcInstance,
    dh1: &'a Tensor3,
    dh2: &'a Tensor3,
    g_n: &'a Tensor3,
    m_n: &'a Tensor3,
    z_n: &'a Tensor3,
}

/// Convex subproblem objective at (G, M, Z) for the anchors (G_n, M_n, Z_n),
/// ignoring the indicator terms (callers check feasibility separately).
pub fn inner_subproblem_objective(
    inst: &RtcInstance,
    anchors: (&Tensor3, &Tensor3, &Tensor3),
    point: (&Tensor3, &Tensor3, &Tensor3),
) -> Result<f64> {
    let dh1 = tensor::grad_h_spectral(anchors.0, &inst.penalty)?.grad;
    let mut dh2 = anchors.1.clone();
    for v in dh2.data_mut() {
        *v = inst.penalty.grad(*v);
    }
    let diag = InnerDiag {
        inst,
        dh1: &dh1,
        dh2: &dh2,
        g_n: anchors.0,
        m_n: anchors.1,
        z_n: anchors.2,
    };
    Ok(diag.pobj(point.0, point.1, point.2))
}

impl InnerDiag<'_> {
    /// Convex subproblem objective at (G, M, Z); the cap and pin indicators
    /// hold by construction of the block updates.
    fn pobj(&self, g: &Tensor3, m: &Tensor3, z: &Tensor3) -> f64 {
        let inst = self.inst;
        let dot = |a: &Tensor3, b: &Tensor3| {
            a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum::<f64>()
        };
        let l1: f64 = m.data().iter().map(|v| v.abs()).sum();
        tensor::tnn(g) - dot(self.dh1, g) + inst.lambda * l1 - dot(self.dh2, m) * inst.lambda
            + inst.eta / 2.0
                * ((g - self.g_n).frobenius_norm().powi(2)
                    + (m - self.m_n).frobenius_norm().powi(2)
                    + (z - self.z_n).frobenius_norm().powi(2))
    }

    /// Lagrangian dual function at the multiplier `mu` (paper convention:
    /// `+<mu, Z-G-M>`), via the closed-form minimizations of the three
    /// separable blocks.
    fn dobj(&self, mu: &Tensor3) -> Result<f64> {
        let inst = self.inst;
        let eta = inst.eta;
        let dims = inst.dims();
        let dot = |a: &Tensor3, b: &Tensor3| {
            a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum::<f64>()
        };

        // G block: min |G|_TNN + cap - <dH1 + mu, G> + eta/2 |G - G_n|^2
        let lin_g = {
            let mut t = self.dh1.clone();
            for (a, b) in t.data_mut().iter_mut().zip(mu.data()) {
                *a += b;
            }
            t
        };
        let anchor_g = {
            let mut t = self.g_n.clone();
            for (a, b) in t.data_mut().iter_mut().zip(lin_g.data()) {
                *a += b / eta;
            }
            t
        };
        let g_min = tensor::prox_tnn_capped(&anchor_g, 1.0 / eta, inst.j1)?;
        let val_g = tensor::tnn(&g_min) - dot(&lin_g, &g_min)
            + eta / 2.0 * (&g_min - self.g_n).frobenius_norm().powi(2);

        // M block: min lambda|M|_1 + box - <lambda dH2 + mu, M> + eta/2 |M - M_n|^2
        let mut m_min = Tensor3::zeros(dims.0, dims.1, dims.2);
        let mut val_m = 0.0;
        for i in 0..m_min.len() {
            let lin = inst.lambda * self.dh2.data()[i] + mu.data()[i];
            let anchor = self.m_n.data()[i] + lin / eta;
            let v = soft_threshold(anchor, inst.lambda / eta).clamp(-inst.j2, inst.j2);
            m_min.data_mut()[i] = v;
            val_m += inst.lambda * v.abs() - lin * v
                + eta / 2.0 * (v - self.m_n.data()[i]).powi(2);
        }

        // Z block: min pin + <mu, Z> + eta/2 |Z - Z_n|^2
        let anchor_z = DVector::from_fn(mu.len(), |i, _| self.z_n.data()[i] - mu.data()[i] / eta);
        let z_min = project_pinned(&anchor_z, &inst.omega, &inst.observed_values())?;
        let mut val_z = 0.0;
        for i in 0..z_min.len() {
            val_z += mu.data()[i] * z_min[i]
                + eta / 2.0 * (z_min[i] - self.z_n.data()[i]).powi(2);
        }

        Ok(val_g + val_m + val_z)
    }
}

/// Outer PMM loop around the accelerated three-block inner solver.
pub fn rtc_pmm_run(inst: &RtcInstance, config: &RtcPmmConfig) -> Result<RtcPmmResult> {
    let (n1, n2, n3) = inst.dims();
    if inst.eta <= 0.0 || config.beta <= 0.0 {
        return Err(AppError::Parameter("eta and beta must be positive".into()));
    }
    // the accelerated arm's admissible step range
    if config.arm == RtcArm::SgsAspadmm {
        let lower = 2.0 - (1.0 + inst.eta / (2.0 * inst.lambda)).sqrt();
        if !(config.tau > lower && config.tau < 1.0) {
            return Err(AppError::Parameter(format!(
                "tau = {} outside the admissible range ({lower:.4}, 1) for eta/lambda = {}",
                config.tau,
                inst.eta / inst.lambda
            )));
        }
    }

    let mut g = Tensor3::zeros(n1, n2, n3);
    let mut m = Tensor3::zeros(n1, n2, n3);
    let mut z = {
        let mut t = Tensor3::zeros(n1, n2, n3);
        for &idx in &inst.omega {
            t.data_mut()[idx] = inst.observed.data()[idx];
        }
        t
    };
    let mut mu = Tensor3::zeros(n1, n2, n3);

    let mut inner_traces = Vec::new();
    let mut inner_iterations = Vec::new();
    let mut outer_objectives = vec![inst.outer_objective(&g, &m)];
    let mut converged = false;
    let mut outer_done = 0;

    for outer in 0..config.outer_max {
        let dh1 = tensor::grad_h_spectral(&g, &inst.penalty)?.grad;
        let dh2 = {
            let mut t = m.clone();
            for v in t.data_mut() {
                *v = inst.penalty.grad(*v);
            }
            t
        };
        let problem = build_inner_problem(inst, &dh1, &dh2, &g, &m, &z)?;
        let diag = InnerDiag {
            inst,
            dh1: &dh1,
            dh2: &dh2,
            g_n: &g,
            m_n: &m,
            z_n: &z,
        };

        let mut cfg = SgsConfig::new(config.arm.mode(), config.beta, config.tau);
        cfg.max_iter = config.inner_max;
        cfg.tol_kkt = 0.0; // stopping is the observer's job
        let mut rows: Vec<RtcInnerRow> = Vec::new();
        let inner_tol = config.inner_tol;
        let dims = inst.dims();
        let mut observer_err: Option<AppError> = None;
        let x0 = stack2(&g, &z);
        let y0 = m.as_dvector();
        let state = {
            let mut observer = |step: &SgsStep<'_>| -> bool {
                let (gt, zt) = unstack2(step.x, dims);
                let mt = Tensor3::from_dvector(dims, step.y);
                let mu_t = Tensor3::from_dvector(dims, step.z);
                let pobj = diag.pobj(&gt, &mt, &zt);
                let dobj = match diag.dobj(&mu_t) {
                    Ok(v) => v,
                    Err(e) => {
                        observer_err = Some(e);
                        return false;
                    }
                };
                let eps_gap = diagnostics_gap(pobj, dobj);
                let eps_p = diagnostics_pfeas(
                    step.feasibility,
                    &[zt.frobenius_norm(), gt.frobenius_norm(), mt.frobenius_norm()],
                );
                let error = eps_gap.max(eps_p);
                let rel_error = (&gt - &inst.x_true).frobenius_norm()
                    / inst.x_true.frobenius_norm().max(1e-300);
                let omega_pinned = inst
                    .omega
                    .iter()
                    .all(|&idx| zt.data()[idx] == inst.observed.data()[idx]);
                rows.push(RtcInnerRow {
                    k: step.k,
                    eps_gap,
                    eps_p,
                    error,
                    pobj,
                    dobj,
                    rel_error,
                    feasibility: step.feasibility,
                    omega_pinned,
                    m_max: mt.max_abs(),
                    g_spectral: tensor::spectral_norm(&gt),
                });
                error > inner_tol
            };
            sgs::run_sgs_aspadmm(
                &problem,
                &cfg,
                Some((x0, y0, mu.as_dvector())),
                Some(&mut observer),
            )
            .map_err(|e| AppError::Inner { outer, source: e })?
        };
        if let Some(e) = observer_err {
            return Err(e);
        }

        let (g_new, z_new) = unstack2(&state.x, dims);
        let m_new = Tensor3::from_dvector(dims, &state.y);
        mu = Tensor3::from_dvector(dims, &state.z);
        inner_iterations.push(state.k);
        inner_traces.push(rows);

        let delta = ((&g_new - &g).frobenius_norm().powi(2)
            + (&m_new - &m).frobenius_norm().powi(2)
            + (&z_new - &z).frobenius_norm().powi(2))
        .sqrt();
        let scale = 1.0
            + (g.frobenius_norm().powi(2)
                + m.frobenius_norm().powi(2)
                + z.frobenius_norm().powi(2))
            .sqrt();
        g = g_new;
        m = m_new;
        z = z_new;
        outer_objectives.push(inst.outer_objective(&g, &m));
        outer_done = outer + 1;
        if delta / scale <= config.outer_tol {
            converged = true;
            break;
        }
    }

    let rel_error =
        (&g - &inst.x_true).frobenius_norm() / inst.x_true.frobenius_norm().max(1e-300);
    Ok(RtcPmmResult {
        g,
        m,
        z,
        outer_iterations: outer_done,
        inner_iterations,
        inner_traces,
        outer_objectives,
        converged,
        rel_error,
    })
}

/// Convex subproblem as a multi-block problem: x = (G, Z), y = M, constraint
/// row `G + M - Z = 0` (so the generic dual equals the paper's multiplier).
fn build_inner_problem(
    inst: &RtcInstance,
    dh1: &Tensor3,
    dh2: &Tensor3,
    g_n: &Tensor3,
    m_n: &Tensor3,
    z_n: &Tensor3,
) -> Result<MultiBlockProblem> {
    let dim = g_n.len();
    let eta = inst.eta;
    let mut b_lin = DVector::zeros(2 * dim);
    for i in 0..dim {
        b_lin[i] = eta * g_n.data()[i] + dh1.data()[i];
        b_lin[dim + i] = eta * z_n.data()[i];
    }
    let d_lin = DVector::from_fn(dim, |i, _| {
        eta * m_n.data()[i] + inst.lambda * dh2.data()[i]
    });
    let problem = MultiBlockProblem {
        x_blocks: vec![
            MbBlock {
                dim,
                op: LinearMap::identity(dim),
            },
            MbBlock {
                dim,
                op: LinearMap::scaled(-1.0, LinearMap::identity(dim)),
            },
        ],
        y_blocks: vec![MbBlock {
            dim,
            op: LinearMap::identity(dim),
        }],
        c: DVector::zeros(dim),
        p: DMatrix::identity(2 * dim, 2 * dim) * eta,
        b: b_lin,
        q: DMatrix::identity(dim, dim) * eta,
        d: d_lin,
        f1: Some(ProxFunction::TnnBall {
            weight: 1.0,
            cap: inst.j1,
            dims: inst.dims(),
        }),
        g1: Some(ProxFunction::l1_box(inst.lambda, -inst.j2, inst.j2)),
        x_pinned: vec![(
            1,
            ProxFunction::Pinned {
                indices: inst.omega.clone(),
                values: inst.observed_values(),
            },
        )],
        y_pinned: Vec::new(),
    };
    Ok(problem)
}

fn stack2(a: &Tensor3, b: &Tensor3) -> DVector<f64> {
    let n = a.len();
    DVector::from_fn(2 * n, |i, _| {
        if i < n {
            a.data()[i]
        } else {
            b.data()[i - n]
        }
    })
}

fn unstack2(v: &DVector<f64>, dims: (usize, usize, usize)) -> (Tensor3, Tensor3) {
    let n = dims.0 * dims.1 * dims.2;
    let a = Tensor3::from_data(dims, v.rows(0, n).iter().copied().collect()).expect("dims");
    let b = Tensor3::from_data(dims, v.rows(n, n).iter().copied().collect()).expect("dims");
    (a, b)
}
