//! Proximal maps, projections, and the DC penalty family (MCP/SCAD and the
//! quadratic surrogate whose conjugate drives the mixed sparse pipeline).

use crate::linop::LinopError;
use crate::tensor::{self, Tensor3};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProxError {
    #[error("invalid parameter in {context}: {detail}")]
    Parameter { context: &'static str, detail: String },
    #[error("box bounds inverted: lo = {lo} > hi = {hi}")]
    BoxBounds { lo: f64, hi: f64 },
    #[error("pinned index {index} out of range for dimension {dim}")]
    PinnedIndex { index: usize, dim: usize },
    #[error("composite prox is only exact for l1+box / l1+nonneg; got {0}")]
    CompositeNotProximable(String),
    #[error("subgradient distance unsupported for {0}")]
    SubgradUnsupported(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dim { expected: usize, got: usize },
    #[error(transparent)]
    Linop(#[from] LinopError),
    #[error(transparent)]
    Tensor(#[from] tensor::TensorError),
}

pub type Result<T> = std::result::Result<T, ProxError>;

/// Componentwise soft threshold: `sign(r) * max(|r| - t*w, 0)`.
pub fn prox_l1(r: &DVector<f64>, t: f64, w: f64) -> DVector<f64> {
    let tw = t * w;
    r.map(|v| soft_threshold(v, tw))
}

pub fn soft_threshold(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

/// Componentwise clamp to `[lo, hi]`.
pub fn project_box(r: &DVector<f64>, lo: f64, hi: f64) -> Result<DVector<f64>> {
    if lo > hi {
        return Err(ProxError::BoxBounds { lo, hi });
    }
    Ok(r.map(|v| v.clamp(lo, hi)))
}

/// `Pi_Omega(values) + Pi_{Omega-complement}(r)`: pins the listed entries to
/// the observed values, keeps everything else from `r`.  Idempotent.
pub fn project_pinned(
    r: &DVector<f64>,
    indices: &[usize],
    values: &DVector<f64>,
) -> Result<DVector<f64>> {
    if indices.len() != values.len() {
        return Err(ProxError::Dim {
            expected: indices.len(),
            got: values.len(),
        });
    }
    let mut out = r.clone();
    for (slot, &idx) in indices.iter().enumerate() {
        if idx >= r.len() {
            return Err(ProxError::PinnedIndex {
                index: idx,
                dim: r.len(),
            });
        }
        out[idx] = values[slot];
    }
    Ok(out)
}

/// A convex function with an evaluable proximal map under a scaled-identity
/// metric: `prox(r, t) = argmin f(p) + (1/2t) |p - r|^2`.
#[derive(Debug, Clone)]
pub enum ProxFunction {
    /// f = 0.
    Zero,
    /// `weight * |x|_1`.
    L1 { weight: f64 },
    /// Indicator of the box `[lo, hi]^n`.
    Box { lo: f64, hi: f64 },
    /// Indicator of the nonnegative orthant.
    Nonneg,
    /// Indicator of `{x : x_i = values_i on the index set}`.
    Pinned {
        indices: Vec<usize>,
        values: DVector<f64>,
    },
    /// `1/2 x'Px + q'x` (P symmetric PSD).
    Quadratic { p: DMatrix<f64>, q: DVector<f64> },
    /// `weight * |.|_TNN + indicator(tensor spectral norm <= cap)` on a
    /// flattened third-order tensor.
    TnnBall {
        weight: f64,
        cap: f64,
        dims: (usize, usize, usize),
    },
    /// Sum of parts; the prox is exact only for the shrink-then-clamp
    /// combinations (l1+box, l1+nonneg).
    Composite(Vec<ProxFunction>),
}

impl ProxFunction {
    /// `weight*|.|_1 + indicator([lo,hi]^n)` as a composite.
    pub fn l1_box(weight: f64, lo: f64, hi: f64) -> ProxFunction {
        ProxFunction::Composite(vec![
            ProxFunction::L1 { weight },
            ProxFunction::Box { lo, hi },
        ])
    }

    /// Function value; `+inf` when an indicator is violated.
    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        const FEAS_TOL: f64 = 1e-9;
        match self {
            ProxFunction::Zero => 0.0,
            ProxFunction::L1 { weight } => weight * x.iter().map(|v| v.abs()).sum::<f64>(),
            ProxFunction::Box { lo, hi } => {
                if x.iter().all(|v| *v >= lo - FEAS_TOL && *v <= hi + FEAS_TOL) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            ProxFunction::Nonneg => {
                if x.iter().all(|v| *v >= -FEAS_TOL) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            ProxFunction::Pinned { indices, values } => {
                let scale = 1.0 + values.amax();
                for (slot, &idx) in indices.iter().enumerate() {
                    if (x[idx] - values[slot]).abs() > FEAS_TOL * scale {
                        return f64::INFINITY;
                    }
                }
                0.0
            }
            ProxFunction::Quadratic { p, q } => 0.5 * x.dot(&(p * x)) + q.dot(x),
            ProxFunction::TnnBall { weight, cap, dims } => {
                let t = Tensor3::from_dvector(*dims, x);
                let spec = tensor::spectral_norm(&t);
                if spec > cap * (1.0 + 1e-9) + 1e-12 {
                    f64::INFINITY
                } else {
                    weight * tensor::tnn(&t)
                }
            }
            ProxFunction::Composite(parts) => parts.iter().map(|p| p.eval(x)).sum(),
        }
    }

    /// Proximal map under the metric `(1/t) I`.
    pub fn prox(&self, r: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        if t <= 0.0 {
            return Err(ProxError::Parameter {
                context: "prox",
                detail: format!("step t must be positive, got {t}"),
            });
        }
        match self {
            ProxFunction::Zero => Ok(r.clone()),
            ProxFunction::L1 { weight } => Ok(prox_l1(r, t, *weight)),
            ProxFunction::Box { lo, hi } => project_box(r, *lo, *hi),
            ProxFunction::Nonneg => Ok(r.map(|v| v.max(0.0))),
            ProxFunction::Pinned { indices, values } => project_pinned(r, indices, values),
            ProxFunction::Quadratic { p, q } => {
                // (P + I/t) x = r/t - q
                let n = r.len();
                let mut m = p.clone();
                for i in 0..n {
                    m[(i, i)] += 1.0 / t;
                }
                let rhs = r / t - q;
                let chol = m.cholesky().ok_or_else(|| ProxError::Parameter {
                    context: "prox(quadratic)",
                    detail: "P + I/t is not positive definite".into(),
                })?;
                Ok(chol.solve(&rhs))
            }
            ProxFunction::TnnBall { weight, cap, dims } => {
                let y = Tensor3::from_dvector(*dims, r);
                let out = tensor::prox_tnn_capped(&y, t * weight, *cap)?;
                Ok(out.as_dvector())
            }
            ProxFunction::Composite(parts) => {
                match composite_kind(parts) {
                    Some(CompositeKind::L1Box { weight, lo, hi }) => {
                        project_box(&prox_l1(r, t, weight), lo, hi)
                    }
                    Some(CompositeKind::L1Nonneg { weight }) => {
                        Ok(r.map(|v| (v - t * weight).max(0.0)))
                    }
                    None => Err(ProxError::CompositeNotProximable(format!(
                        "{} parts",
                        parts.len()
                    ))),
                }
            }
        }
    }

    /// Euclidean distance from `u` to the subdifferential of `f` at `x`.
    ///
    /// Used by the KKT residual; errors on kinds where the distance has no
    /// cheap exact form (the tensor ball).
    pub fn subgrad_dist(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
        const ACTIVE_TOL: f64 = 1e-9;
        match self {
            ProxFunction::Zero => Ok(u.norm()),
            ProxFunction::L1 { weight } => {
                let mut acc = 0.0;
                for i in 0..x.len() {
                    let d = if x[i] > ACTIVE_TOL {
                        u[i] - weight
                    } else if x[i] < -ACTIVE_TOL {
                        u[i] + weight
                    } else {
                        (u[i].abs() - weight).max(0.0)
                    };
                    acc += d * d;
                }
                Ok(acc.sqrt())
            }
            ProxFunction::Box { lo, hi } => {
                let mut acc = 0.0;
                for i in 0..x.len() {
                    let at_lo = (x[i] - lo).abs() <= ACTIVE_TOL * (1.0 + lo.abs());
                    let at_hi = (x[i] - hi).abs() <= ACTIVE_TOL * (1.0 + hi.abs());
                    // Normal cone: <=0 at lo, >=0 at hi, {0} inside.
                    let d = if at_lo && at_hi {
                        0.0
                    } else if at_lo {
                        u[i].max(0.0)
                    } else if at_hi {
                        u[i].min(0.0)
                    } else {
                        u[i]
                    };
                    acc += d * d;
                }
                Ok(acc.sqrt())
            }
            ProxFunction::Nonneg => {
                let mut acc = 0.0;
                for i in 0..x.len() {
                    let d = if x[i] <= ACTIVE_TOL { u[i].max(0.0) } else { u[i] };
                    acc += d * d;
                }
                Ok(acc.sqrt())
            }
            ProxFunction::Pinned { indices, .. } => {
                // Normal cone is free on the pinned set, zero elsewhere.
                let mut pinned = vec![false; x.len()];
                for &i in indices {
                    pinned[i] = true;
                }
                let mut acc = 0.0;
                for i in 0..x.len() {
                    if !pinned[i] {
                        acc += u[i] * u[i];
                    }
                }
                Ok(acc.sqrt())
            }
            ProxFunction::Quadratic { p, q } => Ok((u - (p * x + q)).norm()),
            ProxFunction::TnnBall { .. } => Err(ProxError::SubgradUnsupported("TnnBall")),
            ProxFunction::Composite(parts) => match composite_kind(parts) {
                Some(CompositeKind::L1Box { weight, lo, hi }) => {
                    let mut acc = 0.0;
                    for i in 0..x.len() {
                        // 1-D subdifferential of w|x| + indicator[lo,hi] is an
                        // interval [a, b]; distance is to that interval.
                        let at_lo = (x[i] - lo).abs() <= ACTIVE_TOL * (1.0 + lo.abs());
                        let at_hi = (x[i] - hi).abs() <= ACTIVE_TOL * (1.0 + hi.abs());
                        let (mut a, mut b) = if x[i] > ACTIVE_TOL {
                            (weight, weight)
                        } else if x[i] < -ACTIVE_TOL {
                            (-weight, -weight)
                        } else {
                            (-weight, weight)
                        };
                        if at_lo {
                            a = f64::NEG_INFINITY;
                        }
                        if at_hi {
                            b = f64::INFINITY;
                        }
                        let d = if u[i] < a {
                            a - u[i]
                        } else if u[i] > b {
                            u[i] - b
                        } else {
                            0.0
                        };
                        acc += d * d;
                    }
                    Ok(acc.sqrt())
                }
                Some(CompositeKind::L1Nonneg { weight }) => {
                    let mut acc = 0.0;
                    for i in 0..x.len() {
                        let d = if x[i] > ACTIVE_TOL {
                            u[i] - weight
                        } else {
                            // interval (-inf, weight]
                            (u[i] - weight).max(0.0)
                        };
                        acc += d * d;
                    }
                    Ok(acc.sqrt())
                }
                None => Err(ProxError::SubgradUnsupported("Composite")),
            },
        }
    }
}

enum CompositeKind {
    L1Box { weight: f64, lo: f64, hi: f64 },
    L1Nonneg { weight: f64 },
}

fn composite_kind(parts: &[ProxFunction]) -> Option<CompositeKind> {
    match parts {
        [ProxFunction::L1 { weight }, ProxFunction::Box { lo, hi }]
        | [ProxFunction::Box { lo, hi }, ProxFunction::L1 { weight }] => {
            Some(CompositeKind::L1Box {
                weight: *weight,
                lo: *lo,
                hi: *hi,
            })
        }
        [ProxFunction::L1 { weight }, ProxFunction::Nonneg]
        | [ProxFunction::Nonneg, ProxFunction::L1 { weight }] => {
            Some(CompositeKind::L1Nonneg { weight: *weight })
        }
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// DC penalties: the convex pieces h of the MCP / SCAD decompositions.
// ---------------------------------------------------------------------------

/// Convex piece `h` of the MCP / SCAD difference-of-convex decomposition.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub enum DcPenalty {
    Mcp { gamma: f64 },
    Scad { gamma1: f64, gamma2: f64 },
}

impl DcPenalty {
    pub fn validate(&self) -> Result<()> {
        match self {
            DcPenalty::Mcp { gamma } if *gamma > 0.0 => Ok(()),
            DcPenalty::Scad { gamma1, gamma2 } if *gamma1 > 0.0 && gamma1 <= gamma2 => Ok(()),
            _ => Err(ProxError::Parameter {
                context: "DcPenalty",
                detail: format!("{self:?}"),
            }),
        }
    }

    /// h(x): piecewise per the MCP / SCAD displays.
    pub fn eval(&self, x: f64) -> f64 {
        let a = x.abs();
        match *self {
            DcPenalty::Mcp { gamma } => {
                if a <= gamma {
                    x * x / (2.0 * gamma)
                } else {
                    a - gamma / 2.0
                }
            }
            DcPenalty::Scad { gamma1, gamma2 } => {
                if a <= gamma1 {
                    0.0
                } else if a <= gamma2 {
                    (x * x - 2.0 * gamma1 * a + gamma1 * gamma1) / (2.0 * (gamma2 - gamma1))
                } else {
                    a - (gamma1 + gamma2) / 2.0
                }
            }
        }
    }

    /// h'(x), with the average of one-sided derivatives at breakpoints.
    /// The branches agree there (h is C1), so the convention only guards
    /// floating-point edge hits.
    pub fn grad(&self, x: f64) -> f64 {
        let a = x.abs();
        let s = if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        };
        match *self {
            DcPenalty::Mcp { gamma } => {
                if a < gamma {
                    x / gamma
                } else if a == gamma {
                    0.5 * (x / gamma + s)
                } else {
                    s
                }
            }
            DcPenalty::Scad { gamma1, gamma2 } => {
                if gamma1 == gamma2 {
                    // degenerate middle branch: h = max(|x| - gamma1, 0)
                    return if a < gamma1 {
                        0.0
                    } else if a == gamma1 {
                        0.5 * s
                    } else {
                        s
                    };
                }
                let mid = |x: f64| (x - gamma1 * s) / (gamma2 - gamma1);
                if a < gamma1 {
                    0.0
                } else if a == gamma1 {
                    0.5 * mid(x)
                } else if a < gamma2 {
                    mid(x)
                } else if a == gamma2 {
                    0.5 * (mid(x) + s)
                } else {
                    s
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// The Phi-family surrogate and its conjugate.
// ---------------------------------------------------------------------------

/// `f0(chi) = (a^2/4)chi^2 - (a^2/2)chi + a chi + (a-2)_+^2/4` on `[0,1]`,
/// `+inf` elsewhere, with `a >= 2`.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct PhiSurrogate {
    pub a: f64,
}

impl PhiSurrogate {
    pub fn new(a: f64) -> Result<Self> {
        if a < 2.0 {
            return Err(ProxError::Parameter {
                context: "PhiSurrogate",
                detail: format!("a must be >= 2, got {a}"),
            });
        }
        Ok(PhiSurrogate { a })
    }

    pub fn f0(&self, chi: f64) -> f64 {
        if !(0.0..=1.0).contains(&chi) {
            return f64::INFINITY;
        }
        let a = self.a;
        let plus = (a - 2.0).max(0.0);
        a * a / 4.0 * chi * chi - a * a / 2.0 * chi + a * chi + plus * plus / 4.0
    }

    /// Closed-form conjugate `f0*`; the last branch is `u - 1`, which is what
    /// continuity at `u = a` forces.
    pub fn conj(&self, u: f64) -> f64 {
        let a = self.a;
        let plus = (a - 2.0).max(0.0);
        let knee = (2.0 * a - a * a) / 2.0;
        if u <= knee {
            -plus * plus / 4.0
        } else if u < a {
            let inner = (a * a - 2.0 * a) / 2.0 + u;
            inner * inner / (a * a) - plus * plus / 4.0
        } else {
            u - 1.0
        }
    }

    /// Derivative of `f0*` (piecewise, continuous).
    pub fn conj_deriv(&self, u: f64) -> f64 {
        let a = self.a;
        let knee = (2.0 * a - a * a) / 2.0;
        if u <= knee {
            0.0
        } else if u < a {
            2.0 / (a * a) * ((a * a - 2.0 * a) / 2.0 + u)
        } else {
            1.0
        }
    }
}

/// Gradient of `H(y) = sum_i f0*(scale * y_i)`.
pub fn grad_conj_separable(y: &DVector<f64>, surrogate: &PhiSurrogate, scale: f64) -> DVector<f64> {
    y.map(|v| scale * surrogate.conj_deriv(scale * v))
}

/// Gradient of `H(z) = sum_j f0*(scale * |z_j|)`; odd in each coordinate.
pub fn grad_conj_separable_abs(
    z: &DVector<f64>,
    surrogate: &PhiSurrogate,
    scale: f64,
) -> DVector<f64> {
    z.map(|v| {
        let s = if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        };
        s * scale * surrogate.conj_deriv(scale * v.abs())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    /// 1-D grid + ternary refinement oracle for
    /// `argmin_{x in [lo,hi]} f(x) + (x-r)^2/(2t)`.
    fn grid_prox_1d(f: impl Fn(f64) -> f64, r: f64, t: f64, lo: f64, hi: f64) -> f64 {
        let obj = |x: f64| f(x) + (x - r) * (x - r) / (2.0 * t);
        let n = 4000;
        let mut best = lo;
        let mut best_v = obj(lo);
        for i in 0..=n {
            let x = lo + (hi - lo) * i as f64 / n as f64;
            let v = obj(x);
            if v < best_v {
                best_v = v;
                best = x;
            }
        }
        // ternary refinement on the bracketing cell (objective is convex)
        let h = (hi - lo) / n as f64;
        let (mut a, mut b) = ((best - h).max(lo), (best + h).min(hi));
        for _ in 0..200 {
            let m1 = a + (b - a) / 3.0;
            let m2 = b - (b - a) / 3.0;
            if obj(m1) < obj(m2) {
                b = m2;
            } else {
                a = m1;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn prox_l1_examples() {
        let r = DVector::from_vec(vec![3.0]);
        assert_eq!(prox_l1(&r, 1.0, 1.0)[0], 2.0);
        let r = DVector::from_vec(vec![-0.5]);
        assert_eq!(prox_l1(&r, 1.0, 1.0)[0], 0.0);

        // grid oracle: minimize w|x| + (1/2t)(x-r)^2 per coordinate
        let r = DVector::from_vec(vec![2.0, -3.0, 0.1]);
        let got = prox_l1(&r, 0.5, 2.0);
        let expect = DVector::from_vec(vec![1.0, -2.0, 0.0]);
        assert!((got.clone() - &expect).amax() <= 1e-12);
        for i in 0..3 {
            let oracle = grid_prox_1d(|x| 2.0 * x.abs(), r[i], 0.5, -5.0, 5.0);
            assert!((got[i] - oracle).abs() <= 1e-6, "coord {i}");
        }
    }

    #[test]
    fn project_box_examples() {
        let r = DVector::from_vec(vec![5.0, -5.0, 0.0]);
        let out = project_box(&r, -1.0, 1.0).unwrap();
        assert_eq!(out, DVector::from_vec(vec![1.0, -1.0, 0.0]));
        let inside = DVector::from_vec(vec![0.3, -0.7]);
        assert_eq!(project_box(&inside, -1.0, 1.0).unwrap(), inside);
        assert!(project_box(&r, 1.0, -1.0).is_err());
    }

    #[test]
    fn shrink_then_clamp_matches_grid_oracle() {
        let mut rg = rng(42);
        let f = ProxFunction::l1_box(0.7, -1.0, 2.0);
        for _ in 0..50 {
            let r = DVector::from_vec(vec![rg.gen::<f64>() * 8.0 - 4.0]);
            let t = rg.gen::<f64>() * 2.0 + 0.05;
            let got = f.prox(&r, t).unwrap()[0];
            let oracle = grid_prox_1d(|x| 0.7 * x.abs(), r[0], t, -1.0, 2.0);
            assert!((got - oracle).abs() <= 1e-6, "r={} t={t}", r[0]);
        }
    }

    #[test]
    fn project_pinned_examples() {
        let r = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let values = DVector::from_vec(vec![9.0, 8.0, 7.0]);
        // full mask returns observed data
        let all = project_pinned(&r, &[0, 1, 2], &values).unwrap();
        assert_eq!(all, values);
        // empty mask returns r
        let none = project_pinned(&r, &[], &DVector::zeros(0)).unwrap();
        assert_eq!(none, r);
        // idempotence
        let once = project_pinned(&r, &[1], &DVector::from_vec(vec![5.0])).unwrap();
        let twice = project_pinned(&once, &[1], &DVector::from_vec(vec![5.0])).unwrap();
        assert_eq!(once, twice);
        // out-of-range
        assert!(project_pinned(&r, &[7], &DVector::from_vec(vec![0.0])).is_err());
    }

    #[test]
    fn prox_firm_nonexpansiveness_100_draws() {
        let mut rg = rng(9);
        let funcs: Vec<ProxFunction> = vec![
            ProxFunction::L1 { weight: 0.8 },
            ProxFunction::Box { lo: -0.5, hi: 1.5 },
            ProxFunction::Nonneg,
            ProxFunction::l1_box(1.2, -2.0, 2.0),
            ProxFunction::Pinned {
                indices: vec![0, 2],
                values: DVector::from_vec(vec![0.3, -0.8]),
            },
        ];
        for _ in 0..100 {
            let f = &funcs[rg.gen_range(0..funcs.len())];
            let n = 4;
            let r1 = DVector::from_fn(n, |_, _| rg.gen::<f64>() * 4.0 - 2.0);
            let r2 = DVector::from_fn(n, |_, _| rg.gen::<f64>() * 4.0 - 2.0);
            let t = rg.gen::<f64>() + 0.1;
            let p1 = f.prox(&r1, t).unwrap();
            let p2 = f.prox(&r2, t).unwrap();
            let dp = &p1 - &p2;
            let dr = &r1 - &r2;
            assert!(
                dp.dot(&dr) >= dp.norm_squared() - 1e-10,
                "firm nonexpansiveness violated for {f:?}"
            );
        }
    }

    #[test]
    fn prox_optimality_subgradient_residual() {
        // p = prox(r, t) must satisfy 0 in df(p) + (p - r)/t.
        let mut rg = rng(33);
        let funcs: Vec<ProxFunction> = vec![
            ProxFunction::L1 { weight: 1.3 },
            ProxFunction::Box { lo: -1.0, hi: 1.0 },
            ProxFunction::Nonneg,
            ProxFunction::l1_box(0.6, -1.0, 1.0),
        ];
        for f in &funcs {
            for _ in 0..25 {
                let r = DVector::from_fn(3, |_, _| rg.gen::<f64>() * 4.0 - 2.0);
                let t = rg.gen::<f64>() + 0.1;
                let p = f.prox(&r, t).unwrap();
                let u = (&r - &p) / t; // must lie in df(p)
                assert!(f.subgrad_dist(&p, &u).unwrap() <= 1e-8);
            }
        }
    }

    #[test]
    fn quadratic_prox_solves_regularized_system() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let q = DVector::from_vec(vec![0.3, -0.7]);
        let f = ProxFunction::Quadratic {
            p: p.clone(),
            q: q.clone(),
        };
        let r = DVector::from_vec(vec![1.0, 2.0]);
        let t = 0.5;
        let x = f.prox(&r, t).unwrap();
        let resid = &p * &x + &q + (&x - &r) / t;
        assert!(resid.amax() <= 1e-12);
    }

    #[test]
    fn mcp_scad_examples_and_continuity() {
        let mcp = DcPenalty::Mcp { gamma: 1.0 };
        assert_eq!(mcp.eval(0.0), 0.0);
        // continuity at |x| = gamma: both branches give 0.5
        assert!((mcp.eval(1.0) - 0.5).abs() <= 1e-12);
        assert!((1.0_f64.powi(2) / 2.0 - (1.0 - 0.5)).abs() <= 1e-12);

        let scad = DcPenalty::Scad {
            gamma1: 1.0,
            gamma2: 3.0,
        };
        // third branch at x=4: 4 - (1+3)/2 = 2
        assert!((scad.eval(4.0) - 2.0).abs() <= 1e-12);
        // breakpoint continuity
        for (pen, bps) in [
            (mcp, vec![1.0]),
            (scad, vec![1.0, 3.0]),
        ] {
            for bp in bps {
                let lo = pen.eval(bp - 1e-9);
                let hi = pen.eval(bp + 1e-9);
                assert!((lo - hi).abs() <= 1e-7);
                assert!((pen.eval(bp) - lo).abs() <= 1e-7);
            }
        }
    }

    #[test]
    fn scad_value_matches_integral_of_derivative() {
        // cross-check the third branch by integrating h' from 0 to 4
        let scad = DcPenalty::Scad {
            gamma1: 1.0,
            gamma2: 3.0,
        };
        let n = 200_000;
        let h = 4.0 / n as f64;
        let mut integral = 0.0;
        for i in 0..n {
            let x = (i as f64 + 0.5) * h;
            integral += scad.grad(x) * h;
        }
        assert!((integral - scad.eval(4.0)).abs() <= 1e-4);
    }

    #[test]
    fn dc_grad_matches_finite_differences() {
        let pens = [
            DcPenalty::Mcp { gamma: 0.8 },
            DcPenalty::Scad {
                gamma1: 0.5,
                gamma2: 2.5,
            },
        ];
        let mut rg = rng(4);
        for pen in pens {
            for _ in 0..200 {
                let x = rg.gen::<f64>() * 6.0 - 3.0;
                // skip breakpoints
                let near_bp = match pen {
                    DcPenalty::Mcp { gamma } => (x.abs() - gamma).abs() < 1e-6,
                    DcPenalty::Scad { gamma1, gamma2 } => {
                        (x.abs() - gamma1).abs() < 1e-6 || (x.abs() - gamma2).abs() < 1e-6
                    }
                } || x.abs() < 1e-6;
                if near_bp {
                    continue;
                }
                let h = 1e-7;
                let fd = (pen.eval(x + h) - pen.eval(x - h)) / (2.0 * h);
                let g = pen.grad(x);
                assert!(
                    (fd - g).abs() <= 1e-5 * (1.0 + g.abs()),
                    "{pen:?} at {x}: fd {fd} vs {g}"
                );
            }
        }
    }

    /// Grid-maximization oracle for the conjugate.
    fn conj_oracle(surr: &PhiSurrogate, u: f64) -> f64 {
        let n = 2000;
        let mut best = f64::NEG_INFINITY;
        let mut best_chi = 0.0;
        for i in 0..=n {
            let chi = i as f64 / n as f64;
            let v = u * chi - surr.f0(chi);
            if v > best {
                best = v;
                best_chi = chi;
            }
        }
        // ternary refinement (concave in chi)
        let h = 1.0 / n as f64;
        let (mut a, mut b) = ((best_chi - h).max(0.0), (best_chi + h).min(1.0));
        for _ in 0..200 {
            let m1 = a + (b - a) / 3.0;
            let m2 = b - (b - a) / 3.0;
            if u * m1 - surr.f0(m1) > u * m2 - surr.f0(m2) {
                b = m2;
            } else {
                a = m1;
            }
        }
        let chi = 0.5 * (a + b);
        u * chi - surr.f0(chi)
    }

    #[test]
    fn conjugate_examples_via_grid_oracle() {
        let s = PhiSurrogate::new(2.0).unwrap();
        for (u, expect) in [(-1.0, 0.0), (1.0, 0.25), (2.0, 1.0)] {
            assert!((s.conj(u) - expect).abs() <= 1e-12, "u={u}");
            assert!((s.conj(u) - conj_oracle(&s, u)).abs() <= 1e-6, "u={u}");
        }
    }

    #[test]
    fn conjugate_closed_form_matches_oracle_various_a() {
        for a in [2.0, 2.5, 3.0, 4.0] {
            let s = PhiSurrogate::new(a).unwrap();
            for i in 0..60 {
                let u = -6.0 + i as f64 * 0.25;
                assert!(
                    (s.conj(u) - conj_oracle(&s, u)).abs() <= 1e-6,
                    "a={a} u={u}: {} vs {}",
                    s.conj(u),
                    conj_oracle(&s, u)
                );
            }
        }
    }

    #[test]
    fn fenchel_young_on_grid() {
        let s = PhiSurrogate::new(2.0).unwrap();
        let mut max_slack_at_argmax = 0.0_f64;
        for iu in 0..=40 {
            let u = -10.0 + iu as f64 * 0.5;
            let mut best = f64::NEG_INFINITY;
            for ichi in 0..=100 {
                let chi = ichi as f64 / 100.0;
                let fy = s.f0(chi) + s.conj(u) - chi * u;
                assert!(fy >= -1e-10, "Fenchel-Young violated at chi={chi} u={u}");
                best = best.max(-fy);
            }
            // equality within 1e-6 at the grid argmax (up to grid resolution)
            max_slack_at_argmax = max_slack_at_argmax.max(-best);
        }
        assert!(max_slack_at_argmax <= 1e-3);
        // with refinement, the argmax gap closes to 1e-6
        let u = 1.3;
        let oracle = conj_oracle(&s, u);
        assert!((s.conj(u) - oracle).abs() <= 1e-6);
    }

    #[test]
    fn conj_deriv_examples() {
        let s = PhiSurrogate::new(2.0).unwrap();
        // derivative at 0 for a=2 is 0
        assert_eq!(s.conj_deriv(0.0), 0.0);
        // large u: u - 1 branch has slope 1
        assert_eq!(s.conj_deriv(5.0), 1.0);
        // finite differences elsewhere
        for u in [-3.0, -0.4, 0.7, 1.9, 2.5] {
            let h = 1e-7;
            let fd = (s.conj(u + h) - s.conj(u - h)) / (2.0 * h);
            assert!((fd - s.conj_deriv(u)).abs() <= 1e-5);
        }
    }

    mod properties {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn soft_threshold_is_a_contraction(
                v in -1e6..1e6_f64,
                w in -1e6..1e6_f64,
                t in 1e-9..1e3_f64,
            ) {
                let d = (soft_threshold(v, t) - soft_threshold(w, t)).abs();
                prop_assert!(d <= (v - w).abs() + 1e-9);
            }

            #[test]
            fn shrink_then_clamp_is_stationary(
                r in -50.0..50.0_f64,
                t in 1e-3..10.0_f64,
                w in 1e-3..10.0_f64,
                hi in 0.1..20.0_f64,
            ) {
                // p minimizes w|x| + (x-r)^2/(2t) over [-hi, hi]:
                // the derivative at p points into the feasible set
                let p = soft_threshold(r, t * w).clamp(-hi, hi);
                let grad = |x: f64, s: f64| w * s + (x - r) / t;
                if p.abs() < hi {
                    if p > 0.0 {
                        prop_assert!(grad(p, 1.0).abs() <= 1e-9);
                    } else if p < 0.0 {
                        prop_assert!(grad(p, -1.0).abs() <= 1e-9);
                    } else {
                        prop_assert!(grad(0.0, -1.0) <= 1e-9 && grad(0.0, 1.0) >= -1e-9);
                    }
                } else if p >= hi {
                    prop_assert!(grad(p, 1.0) <= 1e-9);
                } else {
                    prop_assert!(grad(p, -1.0) >= -1e-9);
                }
            }

            #[test]
            fn conjugate_dominates_fenchel_young(
                a in 2.0..6.0_f64,
                chi in 0.0..1.0_f64,
                u in -20.0..20.0_f64,
            ) {
                let s = PhiSurrogate::new(a).unwrap();
                prop_assert!(s.f0(chi) + s.conj(u) >= chi * u - 1e-9);
            }
        }
    }

    #[test]
    fn grad_separable_forms() {
        let s = PhiSurrogate::new(2.0).unwrap();
        let z = DVector::from_vec(vec![0.0, 0.2, -0.2, 5.0, -5.0]);
        let scale = 1.5;
        let g = grad_conj_separable_abs(&z, &s, scale);
        // odd in each coordinate
        assert_eq!(g[1], -g[2]);
        assert_eq!(g[3], -g[4]);
        assert_eq!(g[0], 0.0);
        // scaled value >= a lands on the u-1 branch: derivative = scale
        assert!((g[3] - scale).abs() <= 1e-12);

        // H1 form: finite differences
        let y = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let gh = grad_conj_separable(&y, &s, scale);
        for i in 0..3 {
            let h = 1e-7;
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[i] += h;
            ym[i] -= h;
            let hp: f64 = yp.iter().map(|v| s.conj(scale * v)).sum();
            let hm: f64 = ym.iter().map(|v| s.conj(scale * v)).sum();
            let fd = (hp - hm) / (2.0 * h);
            assert!((fd - gh[i]).abs() <= 1e-5);
        }
    }
}
