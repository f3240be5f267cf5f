//! End-to-end pipelines: Lasso, mixed l0/l2,0 sparse optimization, and
//! robust low-rank tensor completion, each with certified or seeded instance
//! generators and the duality-gap / primal-infeasibility diagnostics used as
//! stopping rules.

pub mod lasso;
pub mod mixed;
pub mod rtc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("instance parameter error: {0}")]
    Parameter(String),
    #[error("degenerate random draw persisted after {0} reseeds")]
    DegenerateDraw(usize),
    #[error("inner solver failed at outer iteration {outer}: {source}")]
    Inner {
        outer: usize,
        source: crate::admm::SolverError,
    },
    #[error(transparent)]
    Solver(#[from] crate::admm::SolverError),
    #[error(transparent)]
    Prox(#[from] crate::prox::ProxError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, AppError>;

/// Relative duality gap `|pobj - dobj| / (1 + |pobj| + |dobj|)`.
pub fn diagnostics_gap(pobj: f64, dobj: f64) -> f64 {
    (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs())
}

/// Relative primal infeasibility `|residual| / (1 + sum of block norms)`.
pub fn diagnostics_pfeas(residual_norm: f64, block_norms: &[f64]) -> f64 {
    residual_norm / (1.0 + block_norms.iter().sum::<f64>())
}

/// Exact active-set solve of `min 1/2 x'Mx - r'x  s.t. x >= 0` with `M`
/// positive definite (Lawson-Hanson).  Used by the bound-constrained
/// subproblem mode and the dual-objective evaluations.
pub fn nnls_qp(m: &DMatrix<f64>, r: &DVector<f64>) -> Result<DVector<f64>> {
    let n = r.len();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-12 * (1.0 + r.amax());
    let max_outer = 3 * n + 10;
    for _ in 0..max_outer {
        // negative gradient
        let w = r - m * &x;
        let mut best = None;
        for i in 0..n {
            if !passive[i] && w[i] > tol {
                match best {
                    Some((_, bw)) if bw >= w[i] => {}
                    _ => best = Some((i, w[i])),
                }
            }
        }
        let Some((enter, _)) = best else {
            return Ok(x);
        };
        passive[enter] = true;
        loop {
            let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let mp = DMatrix::from_fn(idx.len(), idx.len(), |a, b| m[(idx[a], idx[b])]);
            let rp = DVector::from_fn(idx.len(), |a, _| r[idx[a]]);
            let sp = mp
                .cholesky()
                .ok_or_else(|| AppError::Parameter("nnls: passive block not PD".into()))?
                .solve(&rp);
            if sp.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (a, &i) in idx.iter().enumerate() {
                    x[i] = sp[a];
                }
                break;
            }
            // step toward sp until the first passive coordinate hits zero
            let mut alpha = f64::INFINITY;
            for (a, &i) in idx.iter().enumerate() {
                if sp[a] <= 0.0 {
                    let denom = x[i] - sp[a];
                    if denom > 0.0 {
                        alpha = alpha.min(x[i] / denom);
                    }
                }
            }
            if !alpha.is_finite() {
                return Err(AppError::Parameter("nnls: no finite step".into()));
            }
            for (a, &i) in idx.iter().enumerate() {
                x[i] += alpha * (sp[a] - x[i]);
                if x[i] <= tol {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
        }
    }
    Err(AppError::Parameter(
        "nnls: active-set iteration cap exceeded".into(),
    ))
}
