//! Lasso pipeline: certified instance generation and the fixed-penalty
//! accelerated solver with the Boyd-style absolute/relative stopping rule.

use super::{AppError, Result};
use crate::admm::{
    theta_next, BlockSpec, KktReference, ReferenceLabel, SubproblemStrategy, TwoBlockProblem,
};
use crate::linop::{extremal_eigenvalue, Extremal, LinearMap, Metric};
use crate::prox::{soft_threshold, ProxFunction};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

/// `min 1/2 |Ax - b|^2 + lambda |x|_1`, optionally carrying an exact KKT
/// certificate from the reverse-engineered construction.
#[derive(Debug, Clone)]
pub struct LassoInstance {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub lambda: f64,
    pub certificate: Option<LassoCertificate>,
    pub seed: u64,
}

/// Exact optimum and the dual of the two-block splitting, satisfying
/// `A'(Ax* - b) + lambda s = 0` with `s` in the l1 subdifferential at `x*`.
#[derive(Debug, Clone)]
pub struct LassoCertificate {
    pub x_star: DVector<f64>,
    /// Generic splitting dual: `z* = A'(Ax* - b)`; the fixed-penalty solver's
    /// multiplier converges to `-z*`.
    pub z_star: DVector<f64>,
}

impl LassoInstance {
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * (&self.a * x - &self.b).norm_squared()
            + self.lambda * x.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Two-block splitting `x - y = 0` with `f = 1/2|Ax-b|^2`, `g = lambda|y|_1`.
    pub fn to_two_block(&self) -> TwoBlockProblem {
        let n = self.a.ncols();
        let gram = self.a.transpose() * &self.a;
        let mut f = BlockSpec::quadratic_only(
            gram.clone(),
            -(self.a.transpose() * &self.b),
            0.5 * self.b.norm_squared(),
            n,
        );
        f.sigma = Metric::new(LinearMap::dense(gram)).expect("gram self-adjoint");
        f.strategy = SubproblemStrategy::LinearSolve;
        let g = BlockSpec::prox_only(
            ProxFunction::L1 {
                weight: self.lambda,
            },
            n,
        );
        TwoBlockProblem {
            a: LinearMap::identity(n),
            b: LinearMap::scaled(-1.0, LinearMap::identity(n)),
            c: DVector::zeros(n),
            f_block: f,
            g_block: g,
        }
    }

    pub fn reference(&self) -> Option<KktReference> {
        self.certificate.as_ref().map(|c| KktReference {
            x: c.x_star.clone(),
            y: c.x_star.clone(),
            z: c.z_star.clone(),
            label: ReferenceLabel::Certified,
        })
    }
}

/// Reverse-engineered certified instance: draw `A` and a dual seed `omega`,
/// rescale columns so `s = A'omega` carries exact unit entries on a chosen
/// support (strictly sub-unit off it), place `x*` on the support with
/// matching signs, and set `b = A x* + lambda omega` so the KKT system holds
/// by construction.
pub fn gen_lasso_certified(
    m: usize,
    n: usize,
    sparsity: usize,
    seed: u64,
) -> Result<LassoInstance> {
    gen_lasso_certified_with_lambda(m, n, sparsity, 0.1, seed)
}

pub fn gen_lasso_certified_with_lambda(
    m: usize,
    n: usize,
    sparsity: usize,
    lambda: f64,
    seed: u64,
) -> Result<LassoInstance> {
    if sparsity > n {
        return Err(AppError::Parameter(format!(
            "sparsity {sparsity} exceeds dimension {n}"
        )));
    }
    const MAX_RESEED: usize = 10;
    for attempt in 0..MAX_RESEED {
        let mut rng = crate::seeded_rng(seed.wrapping_add(attempt as u64 * 0x9e37_79b9));
        let scale = 1.0 / (m as f64).sqrt();
        let mut a = DMatrix::from_fn(m, n, |_, _| crate::normal(&mut rng) * scale);
        let omega = DVector::from_fn(m, |_, _| crate::normal(&mut rng));
        let v = a.transpose() * &omega;

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let support: Vec<usize> = order[..sparsity].to_vec();
        if support.iter().any(|&i| v[i].abs() < 1e-8) {
            continue; // degenerate draw: support column nearly orthogonal to omega
        }
        for &i in &support {
            let f = 1.0 / v[i].abs();
            for r in 0..m {
                a[(r, i)] *= f;
            }
        }
        for i in 0..n {
            if support.contains(&i) {
                continue;
            }
            if v[i].abs() >= 0.99 {
                let f = 0.99 / v[i].abs();
                for r in 0..m {
                    a[(r, i)] *= f;
                }
            }
        }
        let mut x_star = DVector::zeros(n);
        for &i in &support {
            x_star[i] = v[i].signum() * (0.5 + rng.gen::<f64>());
        }
        let b = &a * &x_star + &omega * lambda;
        let z_star = a.transpose() * (&a * &x_star - &b);
        let inst = LassoInstance {
            a,
            b,
            lambda,
            certificate: Some(LassoCertificate {
                x_star,
                z_star,
            }),
            seed,
        };
        if certificate_kkt_residual(&inst) <= 1e-10 {
            return Ok(inst);
        }
    }
    Err(AppError::DegenerateDraw(MAX_RESEED))
}

/// `max(stationarity, subgradient violation)` of the stored certificate.
pub fn certificate_kkt_residual(inst: &LassoInstance) -> f64 {
    let Some(cert) = &inst.certificate else {
        return f64::INFINITY;
    };
    let x = &cert.x_star;
    let grad = inst.a.transpose() * (&inst.a * x - &inst.b);
    // s = -grad/lambda must be an l1 subgradient at x*
    let s = -&grad / inst.lambda;
    let mut worst = 0.0_f64;
    for i in 0..x.len() {
        let d = if x[i] > 0.0 {
            (s[i] - 1.0).abs()
        } else if x[i] < 0.0 {
            (s[i] + 1.0).abs()
        } else {
            (s[i].abs() - 1.0).max(0.0)
        };
        worst = worst.max(d * inst.lambda);
    }
    // stationarity against the stored dual
    worst.max((grad - &cert.z_star).amax())
}

/// Random (non-certified) instance matching the experimental setup: sparse
/// ground truth, `b = A x* + 0.001 * gaussian`, `lambda = 0.1 |A'b|_inf`.
pub fn gen_lasso_noisy(m: usize, n: usize, sparsity: usize, seed: u64) -> LassoInstance {
    let mut rng = crate::seeded_rng(seed);
    let scale = 1.0 / (m as f64).sqrt();
    let a = DMatrix::from_fn(m, n, |_, _| crate::normal(&mut rng) * scale);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut x_star = DVector::zeros(n);
    for &i in &order[..sparsity] {
        x_star[i] = crate::normal(&mut rng);
    }
    let noise = DVector::from_fn(m, |_, _| crate::normal(&mut rng) * 1e-3);
    let b = &a * &x_star + noise;
    let lambda = 0.1 * (a.transpose() * &b).amax();
    LassoInstance {
        a,
        b,
        lambda,
        certificate: None,
        seed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LassoArm {
    Spadmm,
    Aspadmm,
}

/// Whether the augmented-Lagrangian penalty stays at `beta` (the pipeline's
/// literal behavior) or grows as `beta/theta_k` like the generic accelerated
/// scheme; both arms are available for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyMode {
    FixedBeta,
    Growing,
}

#[derive(Debug, Clone)]
pub struct LassoRunConfig {
    pub arm: LassoArm,
    pub beta: f64,
    pub tau: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    pub penalty_mode: PenaltyMode,
}

impl LassoRunConfig {
    pub fn aspadmm() -> Self {
        LassoRunConfig {
            arm: LassoArm::Aspadmm,
            beta: 1.0,
            tau: 0.95,
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            max_iter: 100_000,
            penalty_mode: PenaltyMode::FixedBeta,
        }
    }

    pub fn spadmm() -> Self {
        LassoRunConfig {
            arm: LassoArm::Spadmm,
            tau: 1.0,
            ..LassoRunConfig::aspadmm()
        }
    }
}

#[derive(Debug, Clone)]
pub struct LassoTraceRow {
    pub k: usize,
    pub r_norm: f64,
    pub s_norm: f64,
    pub objective: f64,
    /// `max(r_norm, s_norm)`, the plotted error metric.
    pub error: f64,
}

#[derive(Debug, Clone)]
pub struct LassoResult {
    pub x: DVector<f64>,
    pub z: DVector<f64>,
    pub mu: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub trace: Vec<LassoTraceRow>,
}

/// Fixed-penalty accelerated splitting for the Lasso:
///
/// ```text
/// x_{k+1} = (A'b + beta zhat_k + S x_k - mu_k) / (lambda_max + beta)
/// z_{k+1} = soft(x_{k+1} + mu_k/beta, lambda/beta)
/// mu_{k+1} = mu_k + tau beta (x_{k+1} - z_{k+1})
/// ```
///
/// with `S = lambda_max I - A'A` and `zhat` the extrapolated z block (plain
/// `z_k` for the spadmm arm).  Stops when `|r| <= eps_pri` and
/// `|s| <= eps_dual` with the sqrt(n)-scaled absolute/relative tolerances.
pub fn lasso_run(inst: &LassoInstance, config: &LassoRunConfig) -> Result<LassoResult> {
    let n = inst.a.ncols();
    if config.beta <= 0.0 {
        return Err(AppError::Parameter("beta must be positive".into()));
    }
    match config.arm {
        LassoArm::Aspadmm if !(config.tau > 0.0 && config.tau < 1.0) => {
            return Err(AppError::Parameter(format!(
                "aspadmm arm needs tau in (0,1), got {}",
                config.tau
            )));
        }
        LassoArm::Spadmm if !(config.tau > 0.0 && config.tau < (1.0 + 5f64.sqrt()) / 2.0) => {
            return Err(AppError::Parameter(format!(
                "spadmm arm needs tau in (0, (1+sqrt 5)/2), got {}",
                config.tau
            )));
        }
        _ => {}
    }

    let gram = inst.a.transpose() * &inst.a;
    let atb = inst.a.transpose() * &inst.b;
    let lam_max = extremal_eigenvalue(&LinearMap::dense(gram.clone()), Extremal::Largest)
        .map_err(crate::admm::SolverError::from)?;

    let mut x = DVector::zeros(n);
    let mut z = DVector::zeros(n);
    let mut z_prev = DVector::zeros(n);
    let mut mu = DVector::zeros(n);
    let mut theta_prev = 1.0 / config.tau;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = config.max_iter;
    let sqrt_n = (n as f64).sqrt();

    for k in 0..config.max_iter {
        let (beta_k, z_hat) = match config.arm {
            LassoArm::Spadmm => (config.beta, z.clone()),
            LassoArm::Aspadmm => {
                let theta = theta_next(theta_prev, config.tau);
                let coeff = theta * (1.0 - theta_prev) / theta_prev;
                let z_hat = &z + (&z - &z_prev) * coeff;
                theta_prev = theta;
                let beta_k = match config.penalty_mode {
                    PenaltyMode::FixedBeta => config.beta,
                    PenaltyMode::Growing => config.beta / theta,
                };
                (beta_k, z_hat)
            }
        };

        // x-update: S x = lambda_max x - A'A x
        let sx = &x * lam_max - &gram * &x;
        let x_new = (&atb + &z_hat * beta_k + sx - &mu) / (lam_max + beta_k);
        let z_new = (&x_new + &mu / beta_k).map(|v| soft_threshold(v, inst.lambda / beta_k));
        let mu_new = &mu + (&x_new - &z_new) * (config.tau * config.beta);

        z_prev = std::mem::replace(&mut z, z_new);
        x = x_new;
        mu = mu_new;

        let r = &z - &x;
        let s = inst.a.transpose() * (&inst.a * &x - &inst.b) + &mu;
        let r_norm = r.norm();
        let s_norm = s.norm();
        let objective =
            0.5 * (&inst.a * &x - &inst.b).norm_squared()
                + inst.lambda * z.iter().map(|v| v.abs()).sum::<f64>();
        trace.push(LassoTraceRow {
            k: k + 1,
            r_norm,
            s_norm,
            objective,
            error: r_norm.max(s_norm),
        });

        let eps_pri = sqrt_n * config.eps_abs + config.eps_rel * x.norm().max(z.norm());
        let eps_dual = sqrt_n * config.eps_abs + config.eps_rel * mu.norm();
        if r_norm <= eps_pri && s_norm <= eps_dual {
            converged = true;
            iterations = k + 1;
            break;
        }
    }

    let objective = trace.last().map(|t| t.objective).unwrap_or(f64::NAN);
    Ok(LassoResult {
        x,
        z,
        mu,
        iterations,
        converged,
        objective,
        trace,
    })
}
