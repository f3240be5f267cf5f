//! Linear-operator algebra, self-adjoint metrics and spectral queries.
//!
//! Everything here is dense-friendly desk scale: operators materialize to
//! `DMatrix<f64>` when a structural shortcut is not available, and spectral
//! queries fall back to an exact dense eigensolve below [`DENSE_EIG_LIMIT`].

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

/// Below this dimension spectral queries materialize the operator and use a
/// dense symmetric eigensolve; above it they use (shifted) power iteration.
/// Clustered extremal eigenvalues (common in the assembled solver operators)
/// stall power iteration, so the dense path covers the whole desk scale.
pub const DENSE_EIG_LIMIT: usize = 2048;

/// Hard cap on the dimension accepted by spectral queries.
pub const SPECTRAL_DIM_LIMIT: usize = 4096;

#[derive(Debug, Error)]
pub enum LinopError {
    #[error("dimension mismatch in {context}: operator expects {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("shape error building {context}: {detail}")]
    Shape { context: &'static str, detail: String },
    #[error("operator dimension {dim} exceeds spectral query limit {limit}")]
    TooLarge { dim: usize, limit: usize },
    #[error("operator must be square for this query, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error(
        "eigensolver did not converge after {iterations} iterations (best estimate {best:.6e})"
    )]
    EigNonConvergence { iterations: usize, best: f64 },
    #[error("metric not PSD: <x,Sx> = {value:.6e} is below the clamp tolerance")]
    MetricNotPsd { value: f64 },
    #[error("metric operator is not self-adjoint: relative asymmetry {asym:.3e}")]
    NotSelfAdjoint { asym: f64 },
    #[error("matrix text parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LinopError>;

/// A real linear operator with one of several structural realizations.
///
/// Immutable after construction; composition and stacking validate shapes
/// eagerly so that `apply`/`apply_adjoint` only ever fail on a caller-side
/// dimension mismatch.
#[derive(Debug, Clone)]
pub enum LinearMap {
    Dense(DMatrix<f64>),
    /// `scale * I` on `dim` coordinates.
    ScaledIdentity { dim: usize, scale: f64 },
    Zero { codomain: usize, domain: usize },
    /// `[A_1 A_2 ...]`: domain is the concatenation of the children's domains.
    HStack(Vec<LinearMap>),
    /// Vertical stack: codomain is the concatenation of the children's codomains.
    VStack(Vec<LinearMap>),
    /// `outer * inner` (apply `inner` first).
    Compose(Box<LinearMap>, Box<LinearMap>),
    Scaled(f64, Box<LinearMap>),
    Adjoint(Box<LinearMap>),
}

impl LinearMap {
    pub fn identity(dim: usize) -> Self {
        LinearMap::ScaledIdentity { dim, scale: 1.0 }
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        LinearMap::ScaledIdentity { dim, scale }
    }

    pub fn zero(codomain: usize, domain: usize) -> Self {
        LinearMap::Zero { codomain, domain }
    }

    pub fn dense(m: DMatrix<f64>) -> Self {
        LinearMap::Dense(m)
    }

    pub fn hstack(parts: Vec<LinearMap>) -> Result<Self> {
        if parts.is_empty() {
            return Err(LinopError::Shape {
                context: "hstack",
                detail: "empty part list".into(),
            });
        }
        let cod = parts[0].codomain_dim();
        for (i, p) in parts.iter().enumerate() {
            if p.codomain_dim() != cod {
                return Err(LinopError::Shape {
                    context: "hstack",
                    detail: format!(
                        "part {i} has codomain {} but part 0 has {cod}",
                        p.codomain_dim()
                    ),
                });
            }
        }
        Ok(LinearMap::HStack(parts))
    }

    pub fn vstack(parts: Vec<LinearMap>) -> Result<Self> {
        if parts.is_empty() {
            return Err(LinopError::Shape {
                context: "vstack",
                detail: "empty part list".into(),
            });
        }
        let dom = parts[0].domain_dim();
        for (i, p) in parts.iter().enumerate() {
            if p.domain_dim() != dom {
                return Err(LinopError::Shape {
                    context: "vstack",
                    detail: format!(
                        "part {i} has domain {} but part 0 has {dom}",
                        p.domain_dim()
                    ),
                });
            }
        }
        Ok(LinearMap::VStack(parts))
    }

    pub fn compose(outer: LinearMap, inner: LinearMap) -> Result<Self> {
        if outer.domain_dim() != inner.codomain_dim() {
            return Err(LinopError::Shape {
                context: "compose",
                detail: format!(
                    "outer domain {} != inner codomain {}",
                    outer.domain_dim(),
                    inner.codomain_dim()
                ),
            });
        }
        Ok(LinearMap::Compose(Box::new(outer), Box::new(inner)))
    }

    pub fn scaled(scale: f64, inner: LinearMap) -> Self {
        LinearMap::Scaled(scale, Box::new(inner))
    }

    pub fn adjoint(inner: LinearMap) -> Self {
        LinearMap::Adjoint(Box::new(inner))
    }

    pub fn domain_dim(&self) -> usize {
        match self {
            LinearMap::Dense(m) => m.ncols(),
            LinearMap::ScaledIdentity { dim, .. } => *dim,
            LinearMap::Zero { domain, .. } => *domain,
            LinearMap::HStack(parts) => parts.iter().map(|p| p.domain_dim()).sum(),
            LinearMap::VStack(parts) => parts[0].domain_dim(),
            LinearMap::Compose(_, inner) => inner.domain_dim(),
            LinearMap::Scaled(_, inner) => inner.domain_dim(),
            LinearMap::Adjoint(inner) => inner.codomain_dim(),
        }
    }

    pub fn codomain_dim(&self) -> usize {
        match self {
            LinearMap::Dense(m) => m.nrows(),
            LinearMap::ScaledIdentity { dim, .. } => *dim,
            LinearMap::Zero { codomain, .. } => *codomain,
            LinearMap::HStack(parts) => parts[0].codomain_dim(),
            LinearMap::VStack(parts) => parts.iter().map(|p| p.codomain_dim()).sum(),
            LinearMap::Compose(outer, _) => outer.codomain_dim(),
            LinearMap::Scaled(_, inner) => inner.codomain_dim(),
            LinearMap::Adjoint(inner) => inner.domain_dim(),
        }
    }

    /// `Map x`.
    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.domain_dim() {
            return Err(LinopError::DimensionMismatch {
                context: "apply_forward",
                expected: self.domain_dim(),
                got: x.len(),
            });
        }
        Ok(self.apply_unchecked(x))
    }

    fn apply_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            LinearMap::Dense(m) => m * x,
            LinearMap::ScaledIdentity { scale, .. } => x * *scale,
            LinearMap::Zero { codomain, .. } => DVector::zeros(*codomain),
            LinearMap::HStack(parts) => {
                let mut out = DVector::zeros(self.codomain_dim());
                let mut off = 0;
                for p in parts {
                    let d = p.domain_dim();
                    let xi = DVector::from(x.rows(off, d).into_owned());
                    out += p.apply_unchecked(&xi);
                    off += d;
                }
                out
            }
            LinearMap::VStack(parts) => {
                let mut out = DVector::zeros(self.codomain_dim());
                let mut off = 0;
                for p in parts {
                    let yi = p.apply_unchecked(x);
                    out.rows_mut(off, yi.len()).copy_from(&yi);
                    off += yi.len();
                }
                out
            }
            LinearMap::Compose(outer, inner) => {
                outer.apply_unchecked(&inner.apply_unchecked(x))
            }
            LinearMap::Scaled(s, inner) => inner.apply_unchecked(x) * *s,
            LinearMap::Adjoint(inner) => inner.apply_adjoint_unchecked(x),
        }
    }

    /// `Mapᵀ y`.
    pub fn apply_adjoint(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.codomain_dim() {
            return Err(LinopError::DimensionMismatch {
                context: "apply_adjoint",
                expected: self.codomain_dim(),
                got: y.len(),
            });
        }
        Ok(self.apply_adjoint_unchecked(y))
    }

    fn apply_adjoint_unchecked(&self, y: &DVector<f64>) -> DVector<f64> {
        match self {
            LinearMap::Dense(m) => m.transpose() * y,
            LinearMap::ScaledIdentity { scale, .. } => y * *scale,
            LinearMap::Zero { domain, .. } => DVector::zeros(*domain),
            // Adjoint of a horizontal stack is the vertical stack of adjoints.
            LinearMap::HStack(parts) => {
                let mut out = DVector::zeros(self.domain_dim());
                let mut off = 0;
                for p in parts {
                    let yi = p.apply_adjoint_unchecked(y);
                    out.rows_mut(off, yi.len()).copy_from(&yi);
                    off += yi.len();
                }
                out
            }
            LinearMap::VStack(parts) => {
                let mut out = DVector::zeros(self.domain_dim());
                let mut off = 0;
                for p in parts {
                    let d = p.codomain_dim();
                    let yi = DVector::from(y.rows(off, d).into_owned());
                    out += p.apply_adjoint_unchecked(&yi);
                    off += d;
                }
                out
            }
            LinearMap::Compose(outer, inner) => {
                inner.apply_adjoint_unchecked(&outer.apply_adjoint_unchecked(y))
            }
            LinearMap::Scaled(s, inner) => inner.apply_adjoint_unchecked(y) * *s,
            LinearMap::Adjoint(inner) => inner.apply_unchecked(y),
        }
    }

    /// Dense realization (column-by-column application).
    pub fn materialize(&self) -> DMatrix<f64> {
        match self {
            LinearMap::Dense(m) => m.clone(),
            _ => {
                let (rows, cols) = (self.codomain_dim(), self.domain_dim());
                let mut out = DMatrix::zeros(rows, cols);
                let mut e = DVector::zeros(cols);
                for j in 0..cols {
                    e[j] = 1.0;
                    out.set_column(j, &self.apply_unchecked(&e));
                    e[j] = 0.0;
                }
                out
            }
        }
    }

    /// `Some(c)` when this operator equals `c * I` up to `tol` (max-abs on the
    /// materialized matrix).  Structural cases avoid materialization.
    pub fn as_scaled_identity(&self, tol: f64) -> Option<f64> {
        match self {
            LinearMap::ScaledIdentity { scale, .. } => Some(*scale),
            LinearMap::Zero { codomain, domain } if codomain == domain => Some(0.0),
            LinearMap::Scaled(s, inner) => inner.as_scaled_identity(tol).map(|c| c * s),
            LinearMap::Adjoint(inner) => inner.as_scaled_identity(tol),
            LinearMap::Compose(a, b) => {
                let (ca, cb) = (a.as_scaled_identity(tol)?, b.as_scaled_identity(tol)?);
                Some(ca * cb)
            }
            _ => {
                if self.domain_dim() != self.codomain_dim() {
                    return None;
                }
                let m = self.materialize();
                let c = m.diagonal().mean();
                let n = m.nrows();
                for i in 0..n {
                    for j in 0..n {
                        let want = if i == j { c } else { 0.0 };
                        if (m[(i, j)] - want).abs() > tol {
                            return None;
                        }
                    }
                }
                Some(c)
            }
        }
    }

    /// `AᵀA` as a composition (self-adjoint PSD by construction).
    pub fn gram(&self) -> LinearMap {
        LinearMap::Compose(
            Box::new(LinearMap::Adjoint(Box::new(self.clone()))),
            Box::new(self.clone()),
        )
    }
}

/// Which end of the spectrum [`extremal_eigenvalue`] should return.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extremal {
    Largest,
    Smallest,
}

/// Extremal eigenvalue of a self-adjoint operator.
///
/// Dense exact path below [`DENSE_EIG_LIMIT`]; shifted power iteration above.
pub fn extremal_eigenvalue(op: &LinearMap, which: Extremal) -> Result<f64> {
    let dim = square_dim(op)?;
    if dim > SPECTRAL_DIM_LIMIT {
        return Err(LinopError::TooLarge {
            dim,
            limit: SPECTRAL_DIM_LIMIT,
        });
    }
    if dim < DENSE_EIG_LIMIT {
        let eigs = dense_eigenvalues(op);
        Ok(match which {
            Extremal::Largest => eigs.max(),
            Extremal::Smallest => eigs.min(),
        })
    } else {
        extremal_eigenvalue_power(op, which)
    }
}

/// Power-iteration path, exposed for cross-checking against the dense oracle.
pub fn extremal_eigenvalue_power(op: &LinearMap, which: Extremal) -> Result<f64> {
    let dim = square_dim(op)?;
    // Largest-magnitude eigenvalue first; it bounds the spectrum radius.
    let radius = power_iteration(
        |v| op.apply_unchecked(v),
        dim,
        |lam, _| lam.abs(),
    )?
    .abs();
    let shift = radius * (1.0 + 1e-6) + 1e-12;
    match which {
        Extremal::Largest => {
            // largest eig of (Op + shift I) is shift + lambda_max >= 0.
            let lam = power_iteration(
                |v| op.apply_unchecked(v) + v * shift,
                dim,
                |lam, _| lam,
            )?;
            Ok(lam - shift)
        }
        Extremal::Smallest => {
            // largest eig of (shift I - Op) is shift - lambda_min >= 0.
            let lam = power_iteration(
                |v| v * shift - op.apply_unchecked(v),
                dim,
                |lam, _| lam,
            )?;
            Ok(shift - lam)
        }
    }
}

fn power_iteration(
    apply: impl Fn(&DVector<f64>) -> DVector<f64>,
    dim: usize,
    score: impl Fn(f64, &DVector<f64>) -> f64,
) -> Result<f64> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v = DVector::from_fn(dim, |_, _| rng.gen::<f64>() - 0.5);
    v /= v.norm();
    let mut lam = 0.0;
    let max_iter = 50_000;
    for _ in 0..max_iter {
        let w = apply(&v);
        let n = w.norm();
        if n == 0.0 {
            return Ok(0.0);
        }
        let next = w / n;
        let wn = apply(&next);
        let rayleigh = next.dot(&wn);
        // for a self-adjoint operator the eigenvalue error is bounded by the
        // residual norm, so this certifies ~1e-9 relative accuracy even when
        // the leading eigenvalues are clustered
        let residual = (&wn - &next * rayleigh).norm();
        if residual <= 1e-9 * (1.0 + rayleigh.abs()) {
            return Ok(score(rayleigh, &next));
        }
        lam = rayleigh;
        v = next;
    }
    Err(LinopError::EigNonConvergence {
        iterations: max_iter,
        best: lam,
    })
}

fn dense_eigenvalues(op: &LinearMap) -> DVector<f64> {
    let m = op.materialize();
    let sym = (&m + m.transpose()) * 0.5;
    nalgebra::SymmetricEigen::new(sym).eigenvalues
}

fn square_dim(op: &LinearMap) -> Result<usize> {
    let (r, c) = (op.codomain_dim(), op.domain_dim());
    if r != c {
        return Err(LinopError::NotSquare { rows: r, cols: c });
    }
    Ok(r)
}

/// Result of a PSD verification.
#[derive(Debug, Clone, Copy)]
pub struct PsdCertificate {
    pub ok: bool,
    pub min_eig: f64,
}

/// `ok` iff the smallest eigenvalue of the (symmetrized) operator is `>= -tol`.
pub fn check_psd(op: &LinearMap, tol: f64) -> Result<PsdCertificate> {
    let min_eig = extremal_eigenvalue(op, Extremal::Smallest)?;
    Ok(PsdCertificate {
        ok: min_eig >= -tol,
        min_eig,
    })
}

/// A self-adjoint operator used as a (semi-)norm: `|x|_S^2 = <x, Sx>`.
#[derive(Debug, Clone)]
pub struct Metric {
    op: LinearMap,
    psd_certified: bool,
}

impl Metric {
    /// Wraps a square operator, verifying self-adjointness on random probes
    /// (relative error `<= 1e-10` over 8 seeded draws).
    pub fn new(op: LinearMap) -> Result<Self> {
        let dim = square_dim(&op)?;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xad701);
        for _ in 0..8 {
            let x = DVector::from_fn(dim, |_, _| rng.gen::<f64>() - 0.5);
            let y = DVector::from_fn(dim, |_, _| rng.gen::<f64>() - 0.5);
            let lhs = op.apply_unchecked(&x).dot(&y);
            let rhs = x.dot(&op.apply_unchecked(&y));
            let scale = 1.0 + lhs.abs().max(rhs.abs());
            let asym = (lhs - rhs).abs() / scale;
            if asym > 1e-10 {
                return Err(LinopError::NotSelfAdjoint { asym });
            }
        }
        Ok(Metric {
            op,
            psd_certified: false,
        })
    }

    pub fn zero(dim: usize) -> Self {
        Metric {
            op: LinearMap::zero(dim, dim),
            psd_certified: true,
        }
    }

    pub fn identity(dim: usize) -> Self {
        Metric {
            op: LinearMap::identity(dim),
            psd_certified: true,
        }
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Result<Self> {
        if scale < 0.0 {
            let mut m = Metric::new(LinearMap::scaled_identity(dim, scale))?;
            m.psd_certified = false;
            return Ok(m);
        }
        Ok(Metric {
            op: LinearMap::scaled_identity(dim, scale),
            psd_certified: true,
        })
    }

    pub fn op(&self) -> &LinearMap {
        &self.op
    }

    pub fn dim(&self) -> usize {
        self.op.domain_dim()
    }

    pub fn is_psd_certified(&self) -> bool {
        self.psd_certified
    }

    /// Runs [`check_psd`] with a tolerance relative to the spectral radius and
    /// retains the certificate on success.
    pub fn certify_psd(&mut self) -> Result<PsdCertificate> {
        let largest = extremal_eigenvalue(&self.op, Extremal::Largest)?;
        let tol = 1e-9 * largest.abs().max(1.0);
        let cert = check_psd(&self.op, tol)?;
        if cert.ok {
            self.psd_certified = true;
        }
        Ok(cert)
    }

    /// `<x, Sx>`, clamped to zero when within `-1e-12 * scale` of zero.
    pub fn norm_sq(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(LinopError::DimensionMismatch {
                context: "metric_norm_sq",
                expected: self.dim(),
                got: x.len(),
            });
        }
        let v = x.dot(&self.op.apply_unchecked(x));
        let clamp = 1e-12 * (1.0 + x.norm_squared());
        if v >= 0.0 {
            Ok(v)
        } else if v >= -clamp {
            Ok(0.0)
        } else {
            Err(LinopError::MetricNotPsd { value: v })
        }
    }

    /// `|x|_S = sqrt(<x, Sx>)`.
    pub fn norm(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.norm_sq(x)?.sqrt())
    }

    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.op.apply(x)
    }
}

// ---------------------------------------------------------------------------
// Whitespace-delimited matrix text format: first line "rows cols", then
// row-major entries. Values print with shortest round-trip formatting so the
// write-read cycle is bit identical.
// ---------------------------------------------------------------------------

pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut s = String::new();
    s.push_str(&format!("{} {}\n", m.nrows(), m.ncols()));
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut tokens = text.split_whitespace();
    let rows: usize = tokens
        .next()
        .ok_or_else(|| LinopError::Parse("missing row count".into()))?
        .parse()
        .map_err(|e| LinopError::Parse(format!("bad row count: {e}")))?;
    let cols: usize = tokens
        .next()
        .ok_or_else(|| LinopError::Parse("missing column count".into()))?
        .parse()
        .map_err(|e| LinopError::Parse(format!("bad column count: {e}")))?;
    let mut data = Vec::with_capacity(rows * cols);
    for (idx, tok) in tokens.enumerate() {
        if idx >= rows * cols {
            return Err(LinopError::Parse(format!(
                "too many entries: expected {}",
                rows * cols
            )));
        }
        data.push(
            tok.parse::<f64>()
                .map_err(|e| LinopError::Parse(format!("entry {idx}: {e}")))?,
        );
    }
    if data.len() != rows * cols {
        return Err(LinopError::Parse(format!(
            "expected {} entries, got {}",
            rows * cols,
            data.len()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

pub fn write_matrix_file(path: &std::path::Path, m: &DMatrix<f64>) -> Result<()> {
    std::fs::write(path, format_matrix(m))?;
    Ok(())
}

pub fn read_matrix_file(path: &std::path::Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)?;
    parse_matrix(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    fn randv(rng: &mut impl Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.gen::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn apply_identity_and_zero() {
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let id = LinearMap::identity(3);
        assert_eq!(id.apply(&x).unwrap(), x);
        let z = LinearMap::zero(4, 3);
        assert_eq!(z.apply(&x).unwrap(), DVector::zeros(4));
    }

    #[test]
    fn apply_dense_hand_product() {
        let a = LinearMap::dense(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let x = DVector::from_vec(vec![1.0, 1.0]);
        assert_eq!(a.apply(&x).unwrap(), DVector::from_vec(vec![3.0, 7.0]));
        let y = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(
            a.apply_adjoint(&y).unwrap(),
            DVector::from_vec(vec![1.0, 2.0])
        );
    }

    #[test]
    fn adjoint_of_hstack_is_vertical_stack() {
        // (A, -A) with A = I2: adjoint of (1,2) is (1,2,-1,-2).
        let stack = LinearMap::hstack(vec![
            LinearMap::identity(2),
            LinearMap::scaled(-1.0, LinearMap::identity(2)),
        ])
        .unwrap();
        let y = DVector::from_vec(vec![1.0, 2.0]);
        assert_eq!(
            stack.apply_adjoint(&y).unwrap(),
            DVector::from_vec(vec![1.0, 2.0, -1.0, -2.0])
        );
    }

    #[test]
    fn dimension_mismatch_reports_both_dims() {
        let a = LinearMap::dense(DMatrix::zeros(2, 3));
        let err = a.apply(&DVector::zeros(4)).unwrap_err();
        match err {
            LinopError::DimensionMismatch { expected, got, .. } => {
                assert_eq!((expected, got), (3, 4));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    /// Random structural operator for the adjoint-consistency property.
    fn random_map(rng: &mut impl Rng, depth: usize, rows: usize, cols: usize) -> LinearMap {
        if depth == 0 {
            return match rng.gen_range(0..3) {
                0 if rows == cols => LinearMap::scaled_identity(rows, rng.gen::<f64>() - 0.5),
                1 => LinearMap::zero(rows, cols),
                _ => LinearMap::Dense(DMatrix::from_fn(rows, cols, |_, _| {
                    rng.gen::<f64>() * 2.0 - 1.0
                })),
            };
        }
        match rng.gen_range(0..5) {
            // stacks split the requested dimension across their parts
            0 if cols >= 2 => {
                let split = rng.gen_range(1..cols);
                LinearMap::HStack(vec![
                    random_map(rng, depth - 1, rows, split),
                    random_map(rng, depth - 1, rows, cols - split),
                ])
            }
            1 if rows >= 2 => {
                let split = rng.gen_range(1..rows);
                LinearMap::VStack(vec![
                    random_map(rng, depth - 1, split, cols),
                    random_map(rng, depth - 1, rows - split, cols),
                ])
            }
            2 => {
                let mid = rng.gen_range(1..5);
                LinearMap::Compose(
                    Box::new(random_map(rng, depth - 1, rows, mid)),
                    Box::new(random_map(rng, depth - 1, mid, cols)),
                )
            }
            3 => LinearMap::Scaled(
                rng.gen::<f64>() * 2.0 - 1.0,
                Box::new(random_map(rng, depth - 1, rows, cols)),
            ),
            4 => LinearMap::Adjoint(Box::new(random_map(rng, depth - 1, cols, rows))),
            _ => {
                let mid = rng.gen_range(1..5);
                LinearMap::Compose(
                    Box::new(random_map(rng, depth - 1, rows, mid)),
                    Box::new(random_map(rng, depth - 1, mid, cols)),
                )
            }
        }
    }

    #[test]
    fn adjoint_consistency_100_draws() {
        let mut rng = rng(7);
        for _ in 0..100 {
            let rows = rng.gen_range(1..6);
            let cols = rng.gen_range(1..6);
            let depth = rng.gen_range(0..3);
            let map = random_map(&mut rng, depth, rows, cols);
            let u = randv(&mut rng, map.domain_dim());
            let v = randv(&mut rng, map.codomain_dim());
            let lhs = map.apply(&u).unwrap().dot(&v);
            let rhs = u.dot(&map.apply_adjoint(&v).unwrap());
            let scale = 1.0 + lhs.abs().max(rhs.abs());
            assert!(
                (lhs - rhs).abs() / scale <= 1e-10,
                "adjoint inconsistency: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn materialize_agrees_with_apply() {
        let mut rng = rng(11);
        for _ in 0..40 {
            let rows = rng.gen_range(1..5);
            let cols = rng.gen_range(1..5);
            let map = random_map(&mut rng, 2, rows, cols);
            let m = map.materialize();
            let x = randv(&mut rng, map.domain_dim());
            let direct = map.apply(&x).unwrap();
            let via = &m * &x;
            assert!((direct - via).amax() <= 1e-12);
        }
    }

    #[test]
    fn metric_norm_examples() {
        let x = DVector::from_vec(vec![3.0, 4.0]);
        assert_eq!(Metric::identity(2).norm_sq(&x).unwrap(), 25.0);
        assert_eq!(Metric::zero(2).norm_sq(&x).unwrap(), 0.0);

        let mut r = rng(3);
        let m = DMatrix::from_fn(4, 4, |_, _| r.gen::<f64>() - 0.5);
        let s = Metric::new(LinearMap::dense(m.transpose() * &m)).unwrap();
        let x = randv(&mut r, 4);
        let expect = (&m * &x).norm_squared();
        assert!((s.norm_sq(&x).unwrap() - expect).abs() <= 1e-12 * (1.0 + expect));
    }

    #[test]
    fn metric_rejects_non_self_adjoint() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(Metric::new(LinearMap::dense(m)).is_err());
    }

    #[test]
    fn extremal_eigenvalue_examples() {
        let id = LinearMap::identity(3);
        assert!((extremal_eigenvalue(&id, Extremal::Largest).unwrap() - 1.0).abs() <= 1e-12);

        let d = LinearMap::dense(DMatrix::from_diagonal(&DVector::from_vec(vec![
            1.0, 5.0, 2.0,
        ])));
        assert!((extremal_eigenvalue(&d, Extremal::Largest).unwrap() - 5.0).abs() <= 1e-10);
        assert!((extremal_eigenvalue(&d, Extremal::Smallest).unwrap() - 1.0).abs() <= 1e-10);
        assert!(
            extremal_eigenvalue(&d, Extremal::Largest).unwrap()
                >= extremal_eigenvalue(&d, Extremal::Smallest).unwrap()
        );
    }

    #[test]
    fn power_iteration_matches_dense_oracle() {
        let mut r = rng(21);
        let a = DMatrix::from_fn(20, 50, |_, _| r.gen::<f64>() - 0.5);
        let gram = LinearMap::dense(&a.transpose() * &a);
        let dense_ref = dense_eigenvalues(&gram);
        let largest = extremal_eigenvalue_power(&gram, Extremal::Largest).unwrap();
        assert!((largest - dense_ref.max()).abs() <= 1e-8 * dense_ref.max().abs().max(1.0));
        let small = extremal_eigenvalue_power(&gram, Extremal::Smallest).unwrap();
        // smallest eig of a rank-20 gram on 50 dims is 0
        assert!(small.abs() <= 1e-6);
    }

    #[test]
    fn check_psd_examples() {
        let id = LinearMap::identity(2);
        let c = check_psd(&id, 1e-9).unwrap();
        assert!(c.ok && (c.min_eig - 1.0).abs() <= 1e-10);

        let d = LinearMap::dense(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0])));
        let c = check_psd(&d, 1e-9).unwrap();
        assert!(!c.ok && (c.min_eig + 1.0).abs() <= 1e-10);

        // lambda_max I - AᵀA is PSD by construction.
        let mut r = rng(5);
        let a = DMatrix::from_fn(10, 30, |_, _| r.gen::<f64>() - 0.5);
        let g = &a.transpose() * &a;
        let lam = dense_eigenvalues(&LinearMap::dense(g.clone())).max();
        let s = DMatrix::identity(30, 30) * lam - g;
        let c = check_psd(&LinearMap::dense(s), 1e-9).unwrap();
        assert!(c.ok, "min_eig = {}", c.min_eig);
    }

    #[test]
    fn matrix_text_round_trip_is_bit_identical() {
        let mut r = rng(13);
        let m = DMatrix::from_fn(3, 4, |_, _| (r.gen::<f64>() - 0.5) * 1e3);
        let text = format_matrix(&m);
        let back = parse_matrix(&text).unwrap();
        assert_eq!(m, back);
        assert_eq!(format_matrix(&back), text);
    }

    #[test]
    fn parse_matrix_errors() {
        assert!(parse_matrix("").is_err());
        assert!(parse_matrix("2 2\n1 2 3").is_err());
        assert!(parse_matrix("2 2\n1 2 3 x").is_err());
        assert!(parse_matrix("2 2\n1 2 3 4 5").is_err());
    }
}
