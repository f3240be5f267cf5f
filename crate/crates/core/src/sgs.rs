//! Multi-block problems and the symmetric Gauss-Seidel solver family.
//!
//! The problem class is
//!
//! ```text
//! min  f(x_1) + h(x) + g(y_1) + r(y)   s.t.  A x + B y = c
//! ```
//!
//! with `h(x) = 1/2 <x, Px> - <b, x>`, `r(y) = 1/2 <y, Qy> - <d, y>`,
//! `A x = sum_i A_i x_i`, `B y = sum_j B_j y_j`.  One iteration of the solver
//! runs a backward-then-forward sweep over each side's blocks; by the block
//! sGS decomposition theorem that sweep pair equals a single semi-proximal
//! update with the proximal operator `sGS(M) = M_u M_d^{-1} M_u'`, which is
//! what the equivalence oracle in the tests checks.

use crate::admm::{self, IterationTrace, KktReference, SolverError, TraceRow};
use crate::linop::{check_psd, LinearMap};
use crate::prox::ProxFunction;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use std::sync::Arc;

pub type Result<T> = std::result::Result<T, SolverError>;

// ---------------------------------------------------------------------------
// Problem description
// ---------------------------------------------------------------------------

/// One block of a product space together with its constraint operator.
#[derive(Debug, Clone)]
pub struct MbBlock {
    pub dim: usize,
    /// `A_i : X_i -> Z`.
    pub op: LinearMap,
}

#[derive(Debug, Clone)]
pub struct MultiBlockProblem {
    pub x_blocks: Vec<MbBlock>,
    pub y_blocks: Vec<MbBlock>,
    pub c: DVector<f64>,
    /// Quadratic coupling of the x side: `h(x) = 1/2 <x,Px> - <b,x>`.
    pub p: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Quadratic coupling of the y side: `r(y) = 1/2 <y,Qy> - <d,y>`.
    pub q: DMatrix<f64>,
    pub d: DVector<f64>,
    /// Nonsmooth part on block x_1 (prox-friendly).
    pub f1: Option<ProxFunction>,
    /// Nonsmooth part on block y_1.
    pub g1: Option<ProxFunction>,
    /// Affine-subspace indicators on arbitrary blocks (block index, prox);
    /// only `ProxFunction::Pinned` is accepted outside block 1.
    pub x_pinned: Vec<(usize, ProxFunction)>,
    pub y_pinned: Vec<(usize, ProxFunction)>,
}

/// Offsets of a block partition inside the product space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub dims: Vec<usize>,
    pub offsets: Vec<usize>,
}

impl Partition {
    pub fn new(dims: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(dims.len());
        let mut off = 0;
        for &d in &dims {
            offsets.push(off);
            off += d;
        }
        Partition { dims, offsets }
    }

    pub fn total(&self) -> usize {
        self.dims.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn slice<'a>(&self, v: &'a DVector<f64>, i: usize) -> nalgebra::DVectorView<'a, f64> {
        v.rows(self.offsets[i], self.dims[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    X,
    Y,
}

impl MultiBlockProblem {
    pub fn x_partition(&self) -> Partition {
        Partition::new(self.x_blocks.iter().map(|b| b.dim).collect())
    }

    pub fn y_partition(&self) -> Partition {
        Partition::new(self.y_blocks.iter().map(|b| b.dim).collect())
    }

    /// Stacked operator `A = [A_1 ... A_p]` (or `B`).
    pub fn stacked_op(&self, side: Side) -> LinearMap {
        let blocks = match side {
            Side::X => &self.x_blocks,
            Side::Y => &self.y_blocks,
        };
        LinearMap::hstack(blocks.iter().map(|b| b.op.clone()).collect()).expect("validated")
    }

    pub fn validate(&self) -> Result<()> {
        let px = self.x_partition();
        let py = self.y_partition();
        for (i, b) in self.x_blocks.iter().enumerate() {
            if b.op.domain_dim() != b.dim || b.op.codomain_dim() != self.c.len() {
                return Err(SolverError::Shape(format!(
                    "x_blocks[{i}]: operator is {}x{}, expected {}x{}",
                    b.op.codomain_dim(),
                    b.op.domain_dim(),
                    self.c.len(),
                    b.dim
                )));
            }
        }
        for (j, b) in self.y_blocks.iter().enumerate() {
            if b.op.domain_dim() != b.dim || b.op.codomain_dim() != self.c.len() {
                return Err(SolverError::Shape(format!(
                    "y_blocks[{j}]: operator is {}x{}, expected {}x{}",
                    b.op.codomain_dim(),
                    b.op.domain_dim(),
                    self.c.len(),
                    b.dim
                )));
            }
        }
        if self.p.nrows() != px.total() || self.p.ncols() != px.total() {
            return Err(SolverError::Shape(format!(
                "P is {}x{}, expected square of dimension {} (the x product space)",
                self.p.nrows(),
                self.p.ncols(),
                px.total()
            )));
        }
        if self.q.nrows() != py.total() || self.q.ncols() != py.total() {
            return Err(SolverError::Shape("Q dimension mismatch".into()));
        }
        if self.b.len() != px.total() || self.d.len() != py.total() {
            return Err(SolverError::Shape("linear term dimension mismatch".into()));
        }
        for (i, _) in self.x_pinned.iter().chain(&self.y_pinned) {
            let n = self.x_blocks.len().max(self.y_blocks.len());
            if *i >= n {
                return Err(SolverError::Shape(format!("pinned block index {i} out of range")));
            }
        }
        Ok(())
    }

    /// `f(x_1) + h(x)` (indicators evaluate to 0/inf).
    pub fn x_objective(&self, x: &DVector<f64>) -> f64 {
        let px = self.x_partition();
        let mut v = 0.5 * x.dot(&(&self.p * x)) - self.b.dot(x);
        if let Some(f) = &self.f1 {
            v += f.eval(&px.slice(x, 0).into_owned());
        }
        for (i, f) in &self.x_pinned {
            v += f.eval(&px.slice(x, *i).into_owned());
        }
        v
    }

    pub fn y_objective(&self, y: &DVector<f64>) -> f64 {
        let py = self.y_partition();
        let mut v = 0.5 * y.dot(&(&self.q * y)) - self.d.dot(y);
        if let Some(g) = &self.g1 {
            v += g.eval(&py.slice(y, 0).into_owned());
        }
        for (j, g) in &self.y_pinned {
            v += g.eval(&py.slice(y, *j).into_owned());
        }
        v
    }

    pub fn objective(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        self.x_objective(x) + self.y_objective(y)
    }

    pub fn feasibility_vec(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        self.stacked_op(Side::X).apply(x).expect("dim")
            + self.stacked_op(Side::Y).apply(y).expect("dim")
            - &self.c
    }
}

// ---------------------------------------------------------------------------
// Block matrix views
// ---------------------------------------------------------------------------

/// A symmetric operator on a partitioned space, split as
/// `full = upper + diag + upper'` with `diag` the block-diagonal part and
/// `upper` the strictly upper block triangle.
#[derive(Debug, Clone)]
pub struct BlockMatrixView {
    pub full: DMatrix<f64>,
    pub partition: Partition,
}

impl BlockMatrixView {
    pub fn new(full: DMatrix<f64>, partition: Partition) -> Result<Self> {
        if full.nrows() != partition.total() || full.ncols() != partition.total() {
            return Err(SolverError::Shape(format!(
                "block view: matrix is {}x{} but partition totals {}",
                full.nrows(),
                full.ncols(),
                partition.total()
            )));
        }
        Ok(BlockMatrixView { full, partition })
    }

    pub fn block(&self, i: usize, j: usize) -> DMatrix<f64> {
        self.full
            .view(
                (self.partition.offsets[i], self.partition.offsets[j]),
                (self.partition.dims[i], self.partition.dims[j]),
            )
            .into_owned()
    }

    /// Block-diagonal part.
    pub fn diag_part(&self) -> DMatrix<f64> {
        let n = self.partition.total();
        let mut out = DMatrix::zeros(n, n);
        for i in 0..self.partition.len() {
            let (o, d) = (self.partition.offsets[i], self.partition.dims[i]);
            out.view_mut((o, o), (d, d)).copy_from(&self.full.view((o, o), (d, d)));
        }
        out
    }

    /// Strictly upper block triangle.
    pub fn upper_part(&self) -> DMatrix<f64> {
        let n = self.partition.total();
        let mut out = DMatrix::zeros(n, n);
        for i in 0..self.partition.len() {
            for j in (i + 1)..self.partition.len() {
                let (oi, di) = (self.partition.offsets[i], self.partition.dims[i]);
                let (oj, dj) = (self.partition.offsets[j], self.partition.dims[j]);
                out.view_mut((oi, oj), (di, dj))
                    .copy_from(&self.full.view((oi, oj), (di, dj)));
            }
        }
        out
    }
}

/// `M = P + lambda A'A + lambda T_f` and `N = Q + lambda B'B + lambda T_g`,
/// materialized with their block partitions.
pub fn assemble_m_n(
    problem: &MultiBlockProblem,
    lambda: f64,
    t_f: Option<&DMatrix<f64>>,
    t_g: Option<&DMatrix<f64>>,
) -> Result<(BlockMatrixView, BlockMatrixView)> {
    problem.validate()?;
    let a = problem.stacked_op(Side::X).materialize();
    let bmat = problem.stacked_op(Side::Y).materialize();
    let mut m = &problem.p + (a.transpose() * &a) * lambda;
    if let Some(t) = t_f {
        if t.nrows() != m.nrows() {
            return Err(SolverError::Shape("T_f dimension mismatch".into()));
        }
        m += t * lambda;
    }
    let mut n = &problem.q + (bmat.transpose() * &bmat) * lambda;
    if let Some(t) = t_g {
        if t.nrows() != n.nrows() {
            return Err(SolverError::Shape("T_g dimension mismatch".into()));
        }
        n += t * lambda;
    }
    Ok((
        BlockMatrixView::new(m, problem.x_partition())?,
        BlockMatrixView::new(n, problem.y_partition())?,
    ))
}

/// Per-block smallest eigenvalues of the diagonal blocks of M and N; every
/// block must clear the strict margin 1e-10 for the sweeps to be well posed.
#[derive(Debug, Clone)]
pub struct StepConditionReport {
    pub x_block_min_eigs: Vec<f64>,
    pub y_block_min_eigs: Vec<f64>,
    pub ok: bool,
}

impl StepConditionReport {
    pub fn failing_blocks(&self) -> (Vec<usize>, Vec<usize>) {
        let pick = |v: &[f64]| {
            v.iter()
                .enumerate()
                .filter(|(_, &e)| e < 1e-10)
                .map(|(i, _)| i)
                .collect()
        };
        (pick(&self.x_block_min_eigs), pick(&self.y_block_min_eigs))
    }
}

pub fn check_step_condition(
    problem: &MultiBlockProblem,
    lambda: f64,
    t_f: Option<&DMatrix<f64>>,
    t_g: Option<&DMatrix<f64>>,
) -> Result<StepConditionReport> {
    let (m, n) = assemble_m_n(problem, lambda, t_f, t_g)?;
    let min_eigs = |view: &BlockMatrixView| -> Result<Vec<f64>> {
        (0..view.partition.len())
            .map(|i| {
                let blk = view.block(i, i);
                Ok(check_psd(&LinearMap::dense(blk), 0.0)?.min_eig)
            })
            .collect()
    };
    let x = min_eigs(&m)?;
    let y = min_eigs(&n)?;
    let ok = x.iter().chain(&y).all(|&e| e >= 1e-10);
    Ok(StepConditionReport {
        x_block_min_eigs: x,
        y_block_min_eigs: y,
        ok,
    })
}

/// `sGS(M) = M_u M_d^{-1} M_u'`, PSD by construction (verified to 1e-9).
pub fn sgs_operator(view: &BlockMatrixView) -> Result<DMatrix<f64>> {
    let diag = view.diag_part();
    let upper = view.upper_part();
    let chol = diag.clone().cholesky().ok_or_else(|| {
        SolverError::Subproblem {
            iteration: 0,
            side: "sgs_operator",
            detail: "singular diagonal block".into(),
        }
    })?;
    let solved = chol.solve(&upper.transpose());
    let out = &upper * solved;
    let sym = (&out + out.transpose()) * 0.5;
    let cert = check_psd(&LinearMap::dense(sym.clone()), 1e-9 * (1.0 + sym.amax()))?;
    if !cert.ok {
        return Err(SolverError::Shape(format!(
            "sGS operator failed its PSD self-check: min eig {}",
            cert.min_eig
        )));
    }
    Ok(sym)
}

// ---------------------------------------------------------------------------
// Xi operators and the Proposition-1 check
// ---------------------------------------------------------------------------

/// The displayed majorants of `sGS(M_{lambda/theta_{k+1}}) - sGS(M_{lambda/theta_k})`:
///
/// ```text
/// Xi_f = 2(1-tau) lambda H_u (P + lambda H)_d^{-1} P_u'
///      + 2(1-tau)(3-tau) lambda H_u H_d^{-1} H_u',      H = A'A + T_f
/// ```
///
/// and the y-side analogue, whose first summand couples `(Q + T_g)_u'`
/// (taken literally; the asymmetry with the x side is as displayed).
/// The products need not be symmetric, so both are returned symmetrized.
pub fn xi_operators(
    problem: &MultiBlockProblem,
    lambda: f64,
    tau: f64,
    t_f: Option<&DMatrix<f64>>,
    t_g: Option<&DMatrix<f64>>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let px = problem.x_partition();
    let py = problem.y_partition();
    let a = problem.stacked_op(Side::X).materialize();
    let bmat = problem.stacked_op(Side::Y).materialize();

    let xi = |gram: DMatrix<f64>,
              quad: &DMatrix<f64>,
              t: Option<&DMatrix<f64>>,
              part: &Partition,
              second_coupling_quad: bool|
     -> Result<DMatrix<f64>> {
        let mut h = gram;
        if let Some(t) = t {
            h += t;
        }
        let hv = BlockMatrixView::new(h.clone(), part.clone())?;
        let h_d = hv.diag_part();
        let h_u = hv.upper_part();
        let cert = check_psd(&LinearMap::dense(h_d.clone()), 0.0)?;
        if cert.min_eig <= 0.0 {
            return Err(SolverError::Config(format!(
                "(Op'Op + T)_d must be positive definite, min eig {}",
                cert.min_eig
            )));
        }
        let m_full = quad + &h * lambda;
        let mv = BlockMatrixView::new(m_full, part.clone())?;
        let m_d = mv.diag_part();

        // first summand: 2(1-tau) lambda H_u (quad + lambda H)_d^{-1} C_u'
        // where C = P on the x side and C = Q + T_g on the y side.
        let coupling = if second_coupling_quad {
            let mut cpl = quad.clone();
            if let Some(t) = t {
                cpl += t;
            }
            cpl
        } else {
            quad.clone()
        };
        let c_u = BlockMatrixView::new(coupling, part.clone())?.upper_part();
        let md_chol = m_d
            .cholesky()
            .ok_or_else(|| SolverError::Config("M_d singular in Xi".into()))?;
        let first = &h_u * md_chol.solve(&c_u.transpose()) * (2.0 * (1.0 - tau) * lambda);

        let hd_chol = h_d
            .cholesky()
            .ok_or_else(|| SolverError::Config("H_d singular in Xi".into()))?;
        let second =
            &h_u * hd_chol.solve(&h_u.transpose()) * (2.0 * (1.0 - tau) * (3.0 - tau) * lambda);

        let xi = first + second;
        Ok((&xi + xi.transpose()) * 0.5)
    };

    let xi_f = xi(a.transpose() * &a, &problem.p, t_f, &px, false)?;
    let xi_g = xi(bmat.transpose() * &bmat, &problem.q, t_g, &py, true)?;
    Ok((xi_f, xi_g))
}

#[derive(Debug, Clone)]
pub struct Prop1Report {
    /// `min eig(sym(Xi) - [sGS(M_{L/theta_{k+1}}) - sGS(M_{L/theta_k})])` per k.
    pub x_min_eigs: Vec<f64>,
    pub y_min_eigs: Vec<f64>,
    pub pass: bool,
}

/// Numerically verifies the dominance of Xi over the sGS increments for
/// `k = 0..=horizon` (pass iff every minimum eigenvalue is `>= -1e-8`).
pub fn check_proposition1(
    problem: &MultiBlockProblem,
    lambda: f64,
    tau: f64,
    t_f: Option<&DMatrix<f64>>,
    t_g: Option<&DMatrix<f64>>,
    horizon: usize,
) -> Result<Prop1Report> {
    let (xi_f, xi_g) = xi_operators(problem, lambda, tau, t_f, t_g)?;
    let mut x_min = Vec::with_capacity(horizon + 1);
    let mut y_min = Vec::with_capacity(horizon + 1);
    let theta = |k: usize| 1.0 / (k as f64 * (1.0 - tau) + 1.0);
    for k in 0..=horizon {
        let (m_k, n_k) = assemble_m_n(problem, lambda / theta(k), t_f, t_g)?;
        let (m_k1, n_k1) = assemble_m_n(problem, lambda / theta(k + 1), t_f, t_g)?;
        let dx = sgs_operator(&m_k1)? - sgs_operator(&m_k)?;
        let dy = sgs_operator(&n_k1)? - sgs_operator(&n_k)?;
        let ex = check_psd(&LinearMap::dense(&xi_f - dx), f64::INFINITY)?.min_eig;
        let ey = check_psd(&LinearMap::dense(&xi_g - dy), f64::INFINITY)?.min_eig;
        x_min.push(ex);
        y_min.push(ey);
    }
    let pass = x_min.iter().chain(&y_min).all(|&e| e >= -1e-8);
    Ok(Prop1Report {
        x_min_eigs: x_min,
        y_min_eigs: y_min,
        pass,
    })
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

/// Per-block solve override (used by the bound-constrained subproblem mode of
/// the applications).
pub trait BlockSolveOverride: Send + Sync {
    fn solve(
        &self,
        metric: &DMatrix<f64>,
        rhs: &DVector<f64>,
    ) -> std::result::Result<DVector<f64>, String>;
}

#[derive(Clone)]
enum BlockKind {
    Plain,
    Prox(ProxFunction),
    Pinned(ProxFunction),
    Override(Arc<dyn BlockSolveOverride>),
}

impl std::fmt::Debug for BlockKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BlockKind::Plain => write!(f, "Plain"),
            BlockKind::Prox(p) => write!(f, "Prox({p:?})"),
            BlockKind::Pinned(_) => write!(f, "Pinned"),
            BlockKind::Override(_) => write!(f, "Override"),
        }
    }
}

/// Cached factorization of the pencil `M_ii(t) = D + t E` (E positive
/// definite): congruence-diagonalized once, then each solve is O(dim^2)
/// regardless of `t`.  Falls back to per-call Cholesky when E is singular.
enum BlockSolver {
    Pencil {
        chol_e: Cholesky<f64, Dyn>,
        eigvecs: DMatrix<f64>,
        eigvals: DVector<f64>,
    },
    Direct {
        d: DMatrix<f64>,
        e: DMatrix<f64>,
    },
    /// `M_ii(t) = (p + t e) I`.
    ScaledIdentity { p: f64, e: f64 },
}

impl BlockSolver {
    fn new(d: DMatrix<f64>, e: DMatrix<f64>) -> Self {
        let dim = d.nrows();
        let did = LinearMap::dense(d.clone()).as_scaled_identity(1e-13);
        let eid = LinearMap::dense(e.clone()).as_scaled_identity(1e-13);
        if let (Some(p), Some(ec)) = (did, eid) {
            return BlockSolver::ScaledIdentity { p, e: ec };
        }
        match e.clone().cholesky() {
            Some(chol_e) => {
                // W = L^{-1} D L^{-T}, symmetric
                let l = chol_e.l();
                let tmp = l.solve_lower_triangular(&d).expect("L invertible");
                let w = l
                    .solve_lower_triangular(&tmp.transpose())
                    .expect("L invertible");
                let w = (&w + w.transpose()) * 0.5;
                let eig = nalgebra::SymmetricEigen::new(w);
                let _ = dim;
                BlockSolver::Pencil {
                    chol_e,
                    eigvecs: eig.eigenvectors,
                    eigvals: eig.eigenvalues,
                }
            }
            None => BlockSolver::Direct { d, e },
        }
    }

    fn metric_scalar(&self, t: f64) -> Option<f64> {
        match self {
            BlockSolver::ScaledIdentity { p, e } => Some(p + t * e),
            _ => None,
        }
    }

    fn solve(&self, t: f64, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            BlockSolver::ScaledIdentity { p, e } => {
                let c = p + t * e;
                if c <= 0.0 {
                    return Err(SolverError::MetricNotPd);
                }
                Ok(rhs / c)
            }
            BlockSolver::Pencil {
                chol_e,
                eigvecs,
                eigvals,
            } => {
                let l = chol_e.l();
                let u = l.solve_lower_triangular(rhs).expect("L invertible");
                let mut w = eigvecs.transpose() * u;
                for i in 0..w.len() {
                    let denom = eigvals[i] + t;
                    if denom <= 0.0 {
                        return Err(SolverError::MetricNotPd);
                    }
                    w[i] /= denom;
                }
                let u = eigvecs * w;
                Ok(l.transpose()
                    .solve_upper_triangular(&u)
                    .expect("L' invertible"))
            }
            BlockSolver::Direct { d, e } => {
                let m = d + e * t;
                let chol = m.cholesky().ok_or(SolverError::MetricNotPd)?;
                Ok(chol.solve(rhs))
            }
        }
    }

    fn metric_dense(&self, t: f64, dim: usize) -> DMatrix<f64> {
        match self {
            BlockSolver::ScaledIdentity { p, e } => DMatrix::identity(dim, dim) * (p + t * e),
            BlockSolver::Pencil { .. } => unreachable!("dense metric from pencil unused"),
            BlockSolver::Direct { d, e } => d + e * t,
        }
    }
}

struct SideEngine {
    partition: Partition,
    op: LinearMap,
    /// theta-independent part of M: the quadratic coupling (P or Q).
    quad: DMatrix<f64>,
    /// theta-scaled part of M: Op'Op + T.
    scaled: DMatrix<f64>,
    t_metric: Option<DMatrix<f64>>,
    lin: DVector<f64>,
    kinds: Vec<BlockKind>,
    solvers: Vec<BlockSolver>,
    side: &'static str,
}

impl SideEngine {
    fn new(
        problem: &MultiBlockProblem,
        side: Side,
        t_metric: Option<DMatrix<f64>>,
        overrides: &[Option<Arc<dyn BlockSolveOverride>>],
    ) -> Result<Self> {
        let (partition, blocks, quad, lin, prox1, pinned) = match side {
            Side::X => (
                problem.x_partition(),
                &problem.x_blocks,
                problem.p.clone(),
                problem.b.clone(),
                &problem.f1,
                &problem.x_pinned,
            ),
            Side::Y => (
                problem.y_partition(),
                &problem.y_blocks,
                problem.q.clone(),
                problem.d.clone(),
                &problem.g1,
                &problem.y_pinned,
            ),
        };
        let op = problem.stacked_op(side);
        let a = op.materialize();
        let mut scaled = a.transpose() * &a;
        if let Some(t) = &t_metric {
            scaled += t;
        }
        let mut kinds = vec![BlockKind::Plain; blocks.len()];
        if let Some(p) = prox1 {
            kinds[0] = BlockKind::Prox(p.clone());
        }
        for (i, p) in pinned {
            if !matches!(p, ProxFunction::Pinned { .. }) {
                return Err(SolverError::Config(format!(
                    "only pinned-subspace indicators may sit on block {i} (got {p:?})"
                )));
            }
            kinds[*i] = BlockKind::Pinned(p.clone());
        }
        for (i, o) in overrides.iter().enumerate() {
            if let Some(o) = o {
                kinds[i] = BlockKind::Override(o.clone());
            }
        }
        let solvers = (0..partition.len())
            .map(|i| {
                let (o, ddim) = (partition.offsets[i], partition.dims[i]);
                BlockSolver::new(
                    quad.view((o, o), (ddim, ddim)).into_owned(),
                    scaled.view((o, o), (ddim, ddim)).into_owned(),
                )
            })
            .collect();
        Ok(SideEngine {
            partition,
            op,
            quad,
            scaled,
            t_metric,
            lin,
            kinds,
            solvers,
            side: match side {
                Side::X => "x",
                Side::Y => "y",
            },
        })
    }

    fn m_full(&self, lam_tilde: f64) -> DMatrix<f64> {
        &self.quad + &self.scaled * lam_tilde
    }

    /// Right-hand side `r = lin + Op'z - lam Op'(other_term - c) + lam T anchor`.
    fn rhs(
        &self,
        lam_tilde: f64,
        z: &DVector<f64>,
        other_minus_c: &DVector<f64>,
        anchor: &DVector<f64>,
    ) -> DVector<f64> {
        let mut r = &self.lin + self.op.apply_adjoint(z).expect("dim")
            - self.op.apply_adjoint(other_minus_c).expect("dim") * lam_tilde;
        if let Some(t) = &self.t_metric {
            r += (t * anchor) * lam_tilde;
        }
        r
    }

    fn solve_block(
        &self,
        i: usize,
        lam_tilde: f64,
        rhs_i: &DVector<f64>,
        iteration: usize,
    ) -> Result<DVector<f64>> {
        let fail = |detail: String| SolverError::Subproblem {
            iteration,
            side: if self.side == "x" { "x" } else { "y" },
            detail: format!("block {i} ({}): {detail}", self.side),
        };
        match &self.kinds[i] {
            BlockKind::Plain => self.solvers[i]
                .solve(lam_tilde, rhs_i)
                .map_err(|e| fail(e.to_string())),
            BlockKind::Prox(p) => {
                let c = self.solvers[i]
                    .metric_scalar(lam_tilde)
                    .ok_or(SolverError::MetricNotProximable)?;
                if c <= 0.0 {
                    return Err(fail("nonpositive prox metric".into()));
                }
                Ok(p.prox(&(rhs_i / c), 1.0 / c)?)
            }
            BlockKind::Pinned(p) => {
                let (indices, values) = match p {
                    ProxFunction::Pinned { indices, values } => (indices, values),
                    _ => unreachable!(),
                };
                match self.solvers[i].metric_scalar(lam_tilde) {
                    Some(c) if c > 0.0 => Ok(crate::prox::project_pinned(
                        &(rhs_i / c),
                        indices,
                        values,
                    )?),
                    _ => {
                        // free-subsystem solve on the unpinned coordinates
                        let dim = rhs_i.len();
                        let m = self.solvers[i].metric_dense(lam_tilde, dim);
                        let mut pinned = vec![false; dim];
                        let mut x = DVector::zeros(dim);
                        for (slot, &idx) in indices.iter().enumerate() {
                            pinned[idx] = true;
                            x[idx] = values[slot];
                        }
                        let free: Vec<usize> =
                            (0..dim).filter(|k| !pinned[*k]).collect();
                        if free.is_empty() {
                            return Ok(x);
                        }
                        let mf = DMatrix::from_fn(free.len(), free.len(), |r, c2| {
                            m[(free[r], free[c2])]
                        });
                        let mut rf = DVector::from_fn(free.len(), |r, _| rhs_i[free[r]]);
                        for r in 0..free.len() {
                            for (slot, &idx) in indices.iter().enumerate() {
                                rf[r] -= m[(free[r], idx)] * values[slot];
                            }
                        }
                        let sol = mf
                            .cholesky()
                            .ok_or_else(|| fail("pinned free block not PD".into()))?
                            .solve(&rf);
                        for (r, &idx) in free.iter().enumerate() {
                            x[idx] = sol[r];
                        }
                        Ok(x)
                    }
                }
            }
            BlockKind::Override(o) => {
                let dim = rhs_i.len();
                let m = match &self.solvers[i] {
                    BlockSolver::Pencil { .. } => self.m_block_dense(i, lam_tilde),
                    s => s.metric_dense(lam_tilde, dim),
                };
                o.solve(&m, rhs_i).map_err(fail)
            }
        }
    }

    fn m_block_dense(&self, i: usize, lam_tilde: f64) -> DMatrix<f64> {
        let (o, d) = (self.partition.offsets[i], self.partition.dims[i]);
        self.quad.view((o, o), (d, d)).into_owned()
            + self.scaled.view((o, o), (d, d)).into_owned() * lam_tilde
    }

    /// Backward (blocks p..2) then forward (1..p) sweep from `anchor`, with
    /// the off-diagonal couplings of `M(lam_tilde)`.
    fn sweep(
        &self,
        lam_tilde: f64,
        rhs: &DVector<f64>,
        anchor: &DVector<f64>,
        forward_only: bool,
        iteration: usize,
    ) -> Result<DVector<f64>> {
        let p = self.partition.len();
        let m = self.m_full(lam_tilde);
        let part = &self.partition;
        let block_of = |v: &DVector<f64>, i: usize| part.slice(v, i).into_owned();
        let coupled_rhs = |i: usize, current: &DVector<f64>| -> DVector<f64> {
            // r_i - sum_{j != i} M_ij current_j
            let (oi, di) = (part.offsets[i], part.dims[i]);
            let mut r = block_of(rhs, i);
            for j in 0..p {
                if j == i {
                    continue;
                }
                let (oj, dj) = (part.offsets[j], part.dims[j]);
                let mij = m.view((oi, oj), (di, dj));
                r -= mij * part.slice(current, j).into_owned();
            }
            r
        };

        let mut stage = anchor.clone();
        if !forward_only {
            // backward pass over blocks p..2 at the anchor's leading blocks
            for i in (1..p).rev() {
                let r = coupled_rhs(i, &stage);
                let xi = self.solve_block(i, lam_tilde, &r, iteration)?;
                stage.rows_mut(part.offsets[i], part.dims[i]).copy_from(&xi);
            }
        }
        // forward pass over blocks 1..p
        let mut out = stage.clone();
        for i in 0..p {
            let r = coupled_rhs(i, &out);
            let xi = self.solve_block(i, lam_tilde, &r, iteration)?;
            out.rows_mut(part.offsets[i], part.dims[i]).copy_from(&xi);
        }
        Ok(out)
    }
}

/// Inputs of one public sweep call.
pub struct SweepArgs<'a> {
    pub side: Side,
    /// Augmented-Lagrangian penalty `lambda/theta_k`.
    pub lam_tilde: f64,
    /// Sweep anchor and proximal anchor (`x_k` or `y_k`).
    pub anchor: &'a DVector<f64>,
    /// The other side's value in the coupling: the extrapolated `v_k` for the
    /// x sweep, `x_{k+1}` for the y sweep.
    pub other: &'a DVector<f64>,
    pub z: &'a DVector<f64>,
}

/// One backward+forward sweep; equals (within 1e-8) the one-shot
/// semi-proximal update with proximal operator `sGS(M_{lam_tilde})`.
pub fn sgs_sweep(
    problem: &MultiBlockProblem,
    t_f: Option<&DMatrix<f64>>,
    t_g: Option<&DMatrix<f64>>,
    args: SweepArgs<'_>,
) -> Result<DVector<f64>> {
    problem.validate()?;
    let (engine, other_op) = match args.side {
        Side::X => (
            SideEngine::new(problem, Side::X, t_f.cloned(), &[])?,
            problem.stacked_op(Side::Y),
        ),
        Side::Y => (
            SideEngine::new(problem, Side::Y, t_g.cloned(), &[])?,
            problem.stacked_op(Side::X),
        ),
    };
    let other_minus_c = other_op.apply(args.other)? - &problem.c;
    let rhs = engine.rhs(args.lam_tilde, args.z, &other_minus_c, args.anchor);
    engine.sweep(args.lam_tilde, &rhs, args.anchor, false, 0)
}

// ---------------------------------------------------------------------------
// The solver
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgsMode {
    /// theta schedule, extrapolation, backward+forward sweeps.
    Aspadmm,
    /// fixed penalty, no extrapolation, backward+forward sweeps.
    Spadmm,
    /// directly-extended multi-block ADMM: forward-only Gauss-Seidel pass,
    /// no extrapolation (baseline arm).
    Admm3d,
}

#[derive(Clone)]
pub struct SgsConfig {
    pub mode: SgsMode,
    pub lambda: f64,
    pub tau: f64,
    pub t_f: Option<DMatrix<f64>>,
    pub t_g: Option<DMatrix<f64>>,
    pub max_iter: usize,
    pub tol_kkt: f64,
    pub reference: Option<KktReference>,
    /// Explicit override for experimentation: skip the numeric Theorem-3
    /// dominance checks `Sigma >= Xi` at setup.
    pub skip_dominance_check: bool,
    pub x_overrides: Vec<Option<Arc<dyn BlockSolveOverride>>>,
    pub y_overrides: Vec<Option<Arc<dyn BlockSolveOverride>>>,
}

impl std::fmt::Debug for SgsConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SgsConfig")
            .field("mode", &self.mode)
            .field("lambda", &self.lambda)
            .field("tau", &self.tau)
            .field("max_iter", &self.max_iter)
            .field("tol_kkt", &self.tol_kkt)
            .field("skip_dominance_check", &self.skip_dominance_check)
            .finish()
    }
}

impl SgsConfig {
    pub fn new(mode: SgsMode, lambda: f64, tau: f64) -> Self {
        SgsConfig {
            mode,
            lambda,
            tau,
            t_f: None,
            t_g: None,
            max_iter: 10_000,
            tol_kkt: 1e-6,
            reference: None,
            skip_dominance_check: false,
            x_overrides: Vec::new(),
            y_overrides: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SgsState {
    pub k: usize,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    pub theta: f64,
    pub converged: bool,
    pub stopped_by_observer: bool,
    pub trace: IterationTrace,
}

/// Snapshot passed to the per-iteration observer; returning `false` stops
/// the run (used by the applications' own stopping rules).
pub struct SgsStep<'a> {
    pub k: usize,
    pub theta: f64,
    pub x: &'a DVector<f64>,
    pub y: &'a DVector<f64>,
    pub z: &'a DVector<f64>,
    pub feasibility: f64,
}

pub fn run_sgs_aspadmm(
    problem: &MultiBlockProblem,
    config: &SgsConfig,
    init: Option<(DVector<f64>, DVector<f64>, DVector<f64>)>,
    mut observer: Option<&mut dyn FnMut(&SgsStep<'_>) -> bool>,
) -> Result<SgsState> {
    let start = std::time::Instant::now();
    problem.validate()?;
    validate_sgs_tau(config)?;

    // step condition, with the default diagonal boost when a block is singular
    let mut t_f = config.t_f.clone();
    let mut t_g = config.t_g.clone();
    let report = check_step_condition(problem, config.lambda, t_f.as_ref(), t_g.as_ref())?;
    if !report.ok {
        let (fx, fy) = report.failing_blocks();
        let boosted = apply_default_boost(problem, config, &fx, &fy, &mut t_f, &mut t_g)?;
        if !boosted {
            return Err(SolverError::Config(format!(
                "step condition fails on x blocks {fx:?} / y blocks {fy:?} and a default boost was user-overridden"
            )));
        }
    }

    if config.mode == SgsMode::Aspadmm && !config.skip_dominance_check {
        dominance_check(problem, config, t_f.as_ref(), t_g.as_ref())?;
    }

    let ex = SideEngine::new(problem, Side::X, t_f.clone(), &config.x_overrides)?;
    let ey = SideEngine::new(problem, Side::Y, t_g.clone(), &config.y_overrides)?;
    let a_op = problem.stacked_op(Side::X);
    let b_op = problem.stacked_op(Side::Y);

    let (mut x, mut y, mut z) = init.unwrap_or_else(|| {
        (
            DVector::zeros(ex.partition.total()),
            DVector::zeros(ey.partition.total()),
            DVector::zeros(problem.c.len()),
        )
    });
    let mut y_prev = y.clone();
    let mut theta_prev = 1.0 / config.tau;
    let mut theta = 1.0;

    // Theorem-2 constants via the one-shot reduction: S_0 = sGS(M_lambda) + lambda T_f.
    let constants = match &config.reference {
        Some(r) => Some(reduction_constants(
            problem,
            config,
            t_f.as_ref(),
            t_g.as_ref(),
            (&x, &y, &z),
            r,
        )?),
        None => None,
    };

    let mut trace = IterationTrace::default();
    let mut converged = false;
    let mut stopped_by_observer = false;
    let mut k_final = 0;
    let accelerated = config.mode == SgsMode::Aspadmm;
    let forward_only = config.mode == SgsMode::Admm3d;

    let mut x_prev = x.clone();
    let mut z_prev = z.clone();

    for k in 0..config.max_iter {
        let (lam_tilde, y_ref) = if accelerated {
            theta = admm::theta_next(theta_prev, config.tau);
            let v = admm::extrapolate(&y, &y_prev, theta, theta_prev);
            (config.lambda / theta, v)
        } else {
            theta = 1.0;
            (config.lambda, y.clone())
        };

        // x sweeps at y = y_ref
        let by_ref = b_op.apply(&y_ref)? - &problem.c;
        let rhs_x = ex.rhs(lam_tilde, &z, &by_ref, &x);
        let x_new = ex.sweep(lam_tilde, &rhs_x, &x, forward_only, k)?;

        // y sweeps at x = x_{k+1}, anchored at y_k
        let ax_new = a_op.apply(&x_new)? - &problem.c;
        let rhs_y = ey.rhs(lam_tilde, &z, &ax_new, &y);
        let y_new = ey.sweep(lam_tilde, &rhs_y, &y, forward_only, k)?;

        let residual = a_op.apply(&x_new)? + b_op.apply(&y_new)? - &problem.c;
        let z_new = &z - &residual * (config.tau * config.lambda);

        x_prev = std::mem::replace(&mut x, x_new);
        y_prev = std::mem::replace(&mut y, y_new);
        z_prev = std::mem::replace(&mut z, z_new);
        theta_prev = theta;
        k_final = k + 1;

        let feasibility = residual.norm();
        let kkt = sgs_kkt_residual(problem, &ex, &ey, &x, &y, &z)?;
        let dandiao = {
            let dz = (&z - &z_prev).norm_squared() / (config.tau * config.lambda);
            let bdy = b_op.apply(&(&y - &y_prev))?.norm_squared() * config.lambda;
            let sgs_terms = {
                let dx = &x - &x_prev;
                let dy = &y - &y_prev;
                let mut acc = 0.0;
                if let Some(t) = &ex.t_metric {
                    acc += lam_tilde * dx.dot(&(t * &dx));
                }
                if let Some(t) = &ey.t_metric {
                    acc += lam_tilde * dy.dot(&(t * &dy));
                }
                acc
            };
            Some(dz + bdy + sgs_terms)
        };
        let (bound_feas, bound_obj_lo, bound_obj_hi) = match (&constants, accelerated) {
            (Some(cs), true) => theorem2_columns(config, cs, k_final),
            _ => (None, None, None),
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

        if let Some(obs) = observer.as_mut() {
            let go_on = obs(&SgsStep {
                k: k_final,
                theta,
                x: &x,
                y: &y,
                z: &z,
                feasibility,
            });
            if !go_on {
                stopped_by_observer = true;
                break;
            }
        }
        if kkt <= config.tol_kkt {
            converged = true;
            break;
        }
    }
    let _ = (x_prev, z_prev);

    Ok(SgsState {
        k: k_final,
        x,
        y,
        z,
        theta,
        converged,
        stopped_by_observer,
        trace,
    })
}

fn validate_sgs_tau(config: &SgsConfig) -> Result<()> {
    let golden = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let ok = match config.mode {
        SgsMode::Aspadmm => config.tau > 0.0 && config.tau < 1.0,
        SgsMode::Spadmm | SgsMode::Admm3d => config.tau > 0.0 && config.tau < golden,
    };
    if !ok {
        return Err(SolverError::Config(format!(
            "tau = {} out of range for {:?}",
            config.tau, config.mode
        )));
    }
    if config.lambda <= 0.0 {
        return Err(SolverError::Config("lambda must be positive".into()));
    }
    Ok(())
}

fn apply_default_boost(
    problem: &MultiBlockProblem,
    config: &SgsConfig,
    fx: &[usize],
    fy: &[usize],
    t_f: &mut Option<DMatrix<f64>>,
    t_g: &mut Option<DMatrix<f64>>,
) -> Result<bool> {
    // boost only when the user supplied no metric for the failing side
    let can_boost_x = fx.is_empty() || config.t_f.is_none();
    let can_boost_y = fy.is_empty() || config.t_g.is_none();
    if !(can_boost_x && can_boost_y) {
        return Ok(false);
    }
    let (m, n) = assemble_m_n(problem, config.lambda, t_f.as_ref(), t_g.as_ref())?;
    if !fx.is_empty() {
        let eps = 1e-8 * (1.0 + m.full.amax());
        *t_f = Some(DMatrix::identity(m.full.nrows(), m.full.nrows()) * (eps / config.lambda));
    }
    if !fy.is_empty() {
        let eps = 1e-8 * (1.0 + n.full.amax());
        *t_g = Some(DMatrix::identity(n.full.nrows(), n.full.nrows()) * (eps / config.lambda));
    }
    let report = check_step_condition(problem, config.lambda, t_f.as_ref(), t_g.as_ref())?;
    Ok(report.ok)
}

/// Theorem-3 hypotheses `Sigma_f >= Xi_f`, `Sigma_g >= Xi_g`, with the
/// quadratic couplings P, Q standing in for the strong-convexity operators.
fn dominance_check(
    problem: &MultiBlockProblem,
    config: &SgsConfig,
    t_f: Option<&DMatrix<f64>>,
    t_g: Option<&DMatrix<f64>>,
) -> Result<()> {
    let (xi_f, xi_g) = xi_operators(problem, config.lambda, config.tau, t_f, t_g)?;
    for (name, sigma, xi) in [("x", &problem.p, &xi_f), ("y", &problem.q, &xi_g)] {
        let m = sigma - xi;
        let tol = 1e-8 * (1.0 + m.amax());
        let cert = check_psd(&LinearMap::dense(m), tol)?;
        if !cert.ok {
            return Err(SolverError::Config(format!(
                "Theorem-3 dominance Sigma >= Xi fails on the {name} side (min eig {:.3e}); \
                 increase tau, strengthen the quadratic coupling, or set skip_dominance_check",
                cert.min_eig
            )));
        }
    }
    Ok(())
}

fn sgs_kkt_residual(
    problem: &MultiBlockProblem,
    ex: &SideEngine,
    ey: &SideEngine,
    x: &DVector<f64>,
    y: &DVector<f64>,
    z: &DVector<f64>,
) -> Result<f64> {
    let primal = problem.feasibility_vec(x, y).norm() / (1.0 + problem.c.norm());
    let zn = 1.0 + z.norm();
    let dual = |engine: &SideEngine, v: &DVector<f64>| -> Result<f64> {
        // u = Op'z - (quad v - lin) must lie in the subdifferential of the
        // nonsmooth parts (zero where there are none)
        let u = engine.op.apply_adjoint(z)? - (&engine.quad * v - &engine.lin);
        let mut acc = 0.0;
        for i in 0..engine.partition.len() {
            let ui = engine.partition.slice(&u, i).into_owned();
            let vi = engine.partition.slice(v, i).into_owned();
            let d = match &engine.kinds[i] {
                BlockKind::Plain => ui.norm(),
                BlockKind::Prox(p) | BlockKind::Pinned(p) => match p.subgrad_dist(&vi, &ui) {
                    Ok(d) => d,
                    // blocks without a cheap subdifferential distance (the
                    // tensor ball) degrade the KKT column to NaN; stopping is
                    // then the observer's responsibility
                    Err(crate::prox::ProxError::SubgradUnsupported(_)) => f64::NAN,
                    Err(e) => return Err(e.into()),
                },
                // override blocks carry a nonnegativity constraint
                BlockKind::Override(_) => ProxFunction::Nonneg.subgrad_dist(&vi, &ui)?,
            };
            acc += d * d;
        }
        Ok(acc.sqrt())
    };
    let dual_x = dual(ex, x)? / zn;
    let dual_y = dual(ey, y)? / zn;
    if dual_x.is_nan() || dual_y.is_nan() {
        return Ok(f64::NAN);
    }
    Ok(primal.max(dual_x).max(dual_y))
}

fn reduction_constants(
    problem: &MultiBlockProblem,
    config: &SgsConfig,
    t_f: Option<&DMatrix<f64>>,
    t_g: Option<&DMatrix<f64>>,
    init: (&DVector<f64>, &DVector<f64>, &DVector<f64>),
    reference: &KktReference,
) -> Result<ReductionConstants> {
    let (m, n) = assemble_m_n(problem, config.lambda, t_f, t_g)?;
    let mut s0 = sgs_operator(&m)?;
    if let Some(t) = t_f {
        s0 += t * config.lambda;
    }
    let mut t0 = sgs_operator(&n)?;
    if let Some(t) = t_g {
        t0 += t * config.lambda;
    }
    let (x0, y0, z0) = init;
    let lambda = config.lambda;
    let seminorm = |m: &DMatrix<f64>, v: &DVector<f64>| v.dot(&(m * v)).max(0.0).sqrt();
    let dz0 = (z0 - &reference.z).norm();
    let dby0 = problem
        .stacked_op(Side::Y)
        .apply(&(y0 - &reference.y))?
        .norm();
    let dx0 = seminorm(&s0, &(x0 - &reference.x));
    let dy0 = seminorm(&t0, &(y0 - &reference.y));
    let c3 = 2.0 / lambda * dz0 + dby0 + (dx0 + dy0) / lambda.sqrt();
    let c4 =
        dz0 * dz0 / (2.0 * lambda) + lambda / 2.0 * dby0 * dby0 + 0.5 * (dx0 * dx0 + dy0 * dy0);
    Ok(ReductionConstants {
        c3,
        c4,
        z_star_norm: reference.z.norm(),
        reference_objective: problem.objective(&reference.x, &reference.y),
    })
}

#[derive(Debug, Clone)]
pub struct ReductionConstants {
    pub c3: f64,
    pub c4: f64,
    pub z_star_norm: f64,
    pub reference_objective: f64,
}

fn theorem2_columns(
    config: &SgsConfig,
    cs: &ReductionConstants,
    row_k: usize,
) -> (Option<f64>, Option<f64>, Option<f64>) {
    let kk = (row_k - 1) as f64;
    let denom = 1.0 + kk * (1.0 - config.tau);
    (
        Some(2.0 * cs.c3 / denom),
        Some(-2.0 * cs.c3 * cs.z_star_norm / denom),
        Some((2.0 * cs.c3 * cs.z_star_norm + cs.c4) / denom),
    )
}

// ---------------------------------------------------------------------------
// Random instances (tests, the sgs-check subcommand, and the demo)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RandomInstanceSpec {
    pub x_dims: Vec<usize>,
    pub y_dims: Vec<usize>,
    pub z_dim: usize,
    pub seed: u64,
    /// Added to the diagonals of P and Q; larger values make the Theorem-3
    /// dominance checks pass for small tau.
    pub diag_boost: f64,
}

pub fn gen_random_instance(spec: &RandomInstanceSpec) -> MultiBlockProblem {
    let mut rng = crate::seeded_rng(spec.seed);
    let nx: usize = spec.x_dims.iter().sum();
    let ny: usize = spec.y_dims.iter().sum();
    let mut randm = |r: usize, c: usize, scale: f64| {
        DMatrix::from_fn(r, c, |_, _| crate::normal(&mut rng) * scale)
    };
    let pr = randm(nx, nx, 1.0 / (nx as f64).sqrt());
    let mut p = pr.transpose() * &pr;
    for i in 0..nx {
        p[(i, i)] += spec.diag_boost;
    }
    let qr = randm(ny, ny, 1.0 / (ny as f64).sqrt());
    let mut q = qr.transpose() * &qr;
    for j in 0..ny {
        q[(j, j)] += spec.diag_boost;
    }
    let scale_a = 1.0 / (spec.z_dim as f64).sqrt();
    let x_blocks = spec
        .x_dims
        .iter()
        .map(|&d| MbBlock {
            dim: d,
            op: LinearMap::dense(randm(spec.z_dim, d, scale_a)),
        })
        .collect();
    let y_blocks = spec
        .y_dims
        .iter()
        .map(|&d| MbBlock {
            dim: d,
            op: LinearMap::dense(randm(spec.z_dim, d, scale_a)),
        })
        .collect();
    let c = DVector::from_fn(spec.z_dim, |_, _| crate::normal(&mut rng));
    let b = DVector::from_fn(nx, |_, _| crate::normal(&mut rng));
    let d = DVector::from_fn(ny, |_, _| crate::normal(&mut rng));
    MultiBlockProblem {
        x_blocks,
        y_blocks,
        c,
        p,
        b,
        q,
        d,
        f1: None,
        g1: None,
        x_pinned: Vec::new(),
        y_pinned: Vec::new(),
    }
}

// ---------------------------------------------------------------------------
// JSON problem description
// ---------------------------------------------------------------------------

/// JSON schema (documented in the README):
///
/// ```json
/// {
///   "x_blocks": [{"dim": 2, "op_file": "a1.txt"}],
///   "y_blocks": [{"dim": 3, "op_file": "b1.txt"}],
///   "c": [0.0, 1.0],
///   "p_file": "p.txt",         // optional, default zero
///   "q_file": "q.txt",         // optional
///   "b": [..], "d": [..],      // optional linear terms, default zero
///   "f1": {"kind": "l1", "weight": 1.0},   // optional
///   "g1": {"kind": "l1_box", "weight": 1.0, "lo": -1.0, "hi": 1.0}
/// }
/// ```
#[derive(Debug, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemJson {
    x_blocks: Vec<BlockJson>,
    y_blocks: Vec<BlockJson>,
    c: Vec<f64>,
    p_file: Option<String>,
    q_file: Option<String>,
    b: Option<Vec<f64>>,
    d: Option<Vec<f64>>,
    f1: Option<ProxJson>,
    g1: Option<ProxJson>,
}

#[derive(Debug, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockJson {
    dim: usize,
    op_file: String,
}

#[derive(Debug, serde::Deserialize)]
#[serde(deny_unknown_fields, tag = "kind")]
enum ProxJson {
    #[serde(rename = "l1")]
    L1 { weight: f64 },
    #[serde(rename = "box")]
    Box { lo: f64, hi: f64 },
    #[serde(rename = "l1_box")]
    L1Box { weight: f64, lo: f64, hi: f64 },
    #[serde(rename = "nonneg")]
    Nonneg,
}

impl ProxJson {
    fn build(&self) -> ProxFunction {
        match self {
            ProxJson::L1 { weight } => ProxFunction::L1 { weight: *weight },
            ProxJson::Box { lo, hi } => ProxFunction::Box { lo: *lo, hi: *hi },
            ProxJson::L1Box { weight, lo, hi } => ProxFunction::l1_box(*weight, *lo, *hi),
            ProxJson::Nonneg => ProxFunction::Nonneg,
        }
    }
}

/// Loads a multi-block problem from its JSON document; operator matrices come
/// from the whitespace matrix text format, resolved relative to `base_dir`.
/// Validation errors name the offending JSON path.
pub fn load_problem_json(text: &str, base_dir: &std::path::Path) -> Result<MultiBlockProblem> {
    let doc: ProblemJson = serde_json::from_str(text)
        .map_err(|e| SolverError::Config(format!("problem json: {e}")))?;
    let load_blocks = |blocks: &[BlockJson], path: &str| -> Result<Vec<MbBlock>> {
        blocks
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let m = crate::linop::read_matrix_file(&base_dir.join(&b.op_file))
                    .map_err(|e| SolverError::Config(format!("{path}[{i}].op_file: {e}")))?;
                if m.ncols() != b.dim {
                    return Err(SolverError::Config(format!(
                        "{path}[{i}]: operator has {} columns but dim = {}",
                        m.ncols(),
                        b.dim
                    )));
                }
                Ok(MbBlock {
                    dim: b.dim,
                    op: LinearMap::dense(m),
                })
            })
            .collect()
    };
    let x_blocks = load_blocks(&doc.x_blocks, "x_blocks")?;
    let y_blocks = load_blocks(&doc.y_blocks, "y_blocks")?;
    let nx: usize = x_blocks.iter().map(|b| b.dim).sum();
    let ny: usize = y_blocks.iter().map(|b| b.dim).sum();
    let p = match &doc.p_file {
        Some(f) => crate::linop::read_matrix_file(&base_dir.join(f))
            .map_err(|e| SolverError::Config(format!("p_file: {e}")))?,
        None => DMatrix::zeros(nx, nx),
    };
    let q = match &doc.q_file {
        Some(f) => crate::linop::read_matrix_file(&base_dir.join(f))
            .map_err(|e| SolverError::Config(format!("q_file: {e}")))?,
        None => DMatrix::zeros(ny, ny),
    };
    let b = doc.b.map(DVector::from_vec).unwrap_or_else(|| DVector::zeros(nx));
    let d = doc.d.map(DVector::from_vec).unwrap_or_else(|| DVector::zeros(ny));
    if b.len() != nx {
        return Err(SolverError::Config(format!(
            "b: expected {nx} entries, got {}",
            b.len()
        )));
    }
    if d.len() != ny {
        return Err(SolverError::Config(format!(
            "d: expected {ny} entries, got {}",
            d.len()
        )));
    }
    let problem = MultiBlockProblem {
        x_blocks,
        y_blocks,
        c: DVector::from_vec(doc.c),
        p,
        b,
        q,
        d,
        f1: doc.f1.as_ref().map(ProxJson::build),
        g1: doc.g1.as_ref().map(ProxJson::build),
        x_pinned: Vec::new(),
        y_pinned: Vec::new(),
    };
    problem.validate()?;
    Ok(problem)
}
