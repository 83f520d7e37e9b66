//! A small modeling layer for linear matrix inequalities.
//!
//! Problems are built from scalar, rectangular, and symmetric matrix
//! variables, block-structured semidefinite constraints, and affine matrix
//! equalities, then lowered to a conic interior-point solver. Every solution
//! is re-certified after the solve by an independent eigenvalue check, so a
//! reported `Optimal` or `Feasible` status never rests on the solver alone.

mod bridge;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;

pub use crate::linalg::{max_eig, min_eig};

/// Handle to a declared variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VarKind {
    Scalar,
    /// Rectangular matrix, entries free.
    Mat { rows: usize, cols: usize },
    /// Symmetric matrix, parameterized by its upper triangle.
    Sym { dim: usize },
}

impl VarKind {
    fn shape(&self) -> (usize, usize) {
        match self {
            VarKind::Scalar => (1, 1),
            VarKind::Mat { rows, cols } => (*rows, *cols),
            VarKind::Sym { dim } => (*dim, *dim),
        }
    }

    fn num_params(&self) -> usize {
        match self {
            VarKind::Scalar => 1,
            VarKind::Mat { rows, cols } => rows * cols,
            VarKind::Sym { dim } => dim * (dim + 1) / 2,
        }
    }
}

#[derive(Debug, Clone)]
struct VarDecl {
    name: String,
    kind: VarKind,
}

/// Values for every variable of a problem, produced by the solver or built
/// by hand for testing.
#[derive(Debug, Clone)]
pub struct Assignment {
    values: Vec<DMatrix<f64>>,
}

impl Assignment {
    pub fn matrix(&self, v: VarId) -> &DMatrix<f64> {
        &self.values[v.0]
    }

    pub fn scalar(&self, v: VarId) -> f64 {
        let m = &self.values[v.0];
        assert_eq!((m.nrows(), m.ncols()), (1, 1), "variable is not a scalar");
        m[(0, 0)]
    }
}

#[derive(Debug, Clone)]
enum TermKind {
    /// `left * V * right`, transposed onto the mirror block; symmetrized in
    /// place on a diagonal block.
    Sandwich { left: DMatrix<f64>, right: DMatrix<f64> },
    /// `v * mat` for a scalar variable `v`; mirrored off the diagonal,
    /// placed once (and required symmetric) on the diagonal.
    Scaled { mat: DMatrix<f64> },
    /// `scale * V` for a symmetric variable, placed once on a diagonal block.
    SymPlace { scale: f64 },
}

#[derive(Debug, Clone)]
struct BlockTerm {
    var: VarId,
    bi: usize,
    bj: usize,
    kind: TermKind,
}

/// A symmetric block matrix expression constrained to satisfy
/// `expr <= -margin * I` in the semidefinite order.
#[derive(Debug, Clone)]
pub struct BlockExpr {
    label: String,
    block_dims: Vec<usize>,
    offsets: Vec<usize>,
    dim: usize,
    constant: DMatrix<f64>,
    terms: Vec<BlockTerm>,
    margin: f64,
}

fn require_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let dev = (m - m.transpose()).abs().max();
    if dev > 1e-12 * (1.0 + m.abs().max()) {
        return Err(Error::InvalidArgument(format!(
            "{what} must be symmetric (asymmetry {dev:.3e})"
        )));
    }
    Ok(())
}

impl BlockExpr {
    /// New zero expression with the given diagonal block sizes.
    pub fn new(label: impl Into<String>, block_dims: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(block_dims.len());
        let mut dim = 0;
        for &d in &block_dims {
            offsets.push(dim);
            dim += d;
        }
        Self {
            label: label.into(),
            block_dims,
            offsets,
            dim,
            constant: DMatrix::zeros(dim, dim),
            terms: Vec::new(),
            margin: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Requires `expr <= -margin * I` instead of plain `expr <= 0`.
    pub fn set_margin(&mut self, margin: f64) -> &mut Self {
        self.margin = margin;
        self
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    fn check_block(&self, bi: usize, bj: usize) -> Result<(usize, usize)> {
        if bi >= self.block_dims.len() || bj >= self.block_dims.len() {
            return Err(Error::InvalidArgument(format!(
                "block ({bi}, {bj}) out of range in `{}`",
                self.label
            )));
        }
        Ok((self.block_dims[bi], self.block_dims[bj]))
    }

    /// Adds a constant matrix at block `(bi, bj)`. Off-diagonal placements
    /// are mirrored with a transpose; diagonal placements must be symmetric.
    pub fn add_const(&mut self, bi: usize, bj: usize, m: &DMatrix<f64>) -> Result<&mut Self> {
        let (di, dj) = self.check_block(bi, bj)?;
        if m.nrows() != di || m.ncols() != dj {
            return Err(Error::DimensionMismatch(format!(
                "constant at block ({bi}, {bj}) of `{}` is {}x{}, expected {di}x{dj}",
                self.label,
                m.nrows(),
                m.ncols()
            )));
        }
        let (oi, oj) = (self.offsets[bi], self.offsets[bj]);
        if bi == bj {
            require_symmetric(m, &format!("diagonal constant in `{}`", self.label))?;
            let mut view = self.constant.view_mut((oi, oj), (di, dj));
            view += m;
        } else {
            let mut view = self.constant.view_mut((oi, oj), (di, dj));
            view += m;
            let mt = m.transpose();
            let mut mirror = self.constant.view_mut((oj, oi), (dj, di));
            mirror += &mt;
        }
        Ok(self)
    }

    /// Adds `left * V * right` at block `(bi, bj)` for a matrix or symmetric
    /// variable `V`. The transpose lands on the mirror block; on a diagonal
    /// block the term is symmetrized to `left V right + (left V right)^T`.
    pub fn add_sandwich(
        &mut self,
        bi: usize,
        bj: usize,
        left: DMatrix<f64>,
        var: VarId,
        right: DMatrix<f64>,
        problem: &LmiProblem,
    ) -> Result<&mut Self> {
        let (di, dj) = self.check_block(bi, bj)?;
        let (vr, vc) = problem.vars[var.0].kind.shape();
        if left.nrows() != di || left.ncols() != vr || right.nrows() != vc || right.ncols() != dj {
            return Err(Error::DimensionMismatch(format!(
                "sandwich at block ({bi}, {bj}) of `{}`: left {}x{}, var {vr}x{vc}, right {}x{}, \
                 block {di}x{dj}",
                self.label,
                left.nrows(),
                left.ncols(),
                right.nrows(),
                right.ncols()
            )));
        }
        self.terms.push(BlockTerm { var, bi, bj, kind: TermKind::Sandwich { left, right } });
        Ok(self)
    }

    /// Adds `v * m` at block `(bi, bj)` for a scalar variable `v`.
    pub fn add_scaled(
        &mut self,
        bi: usize,
        bj: usize,
        var: VarId,
        m: DMatrix<f64>,
        problem: &LmiProblem,
    ) -> Result<&mut Self> {
        let (di, dj) = self.check_block(bi, bj)?;
        if problem.vars[var.0].kind != VarKind::Scalar {
            return Err(Error::InvalidArgument(format!(
                "variable `{}` is not a scalar",
                problem.vars[var.0].name
            )));
        }
        if m.nrows() != di || m.ncols() != dj {
            return Err(Error::DimensionMismatch(format!(
                "scaled term at block ({bi}, {bj}) of `{}` is {}x{}, expected {di}x{dj}",
                self.label,
                m.nrows(),
                m.ncols()
            )));
        }
        if bi == bj {
            require_symmetric(&m, &format!("diagonal scaled term in `{}`", self.label))?;
        }
        self.terms.push(BlockTerm { var, bi, bj, kind: TermKind::Scaled { mat: m } });
        Ok(self)
    }

    /// Adds `scale * V` on diagonal block `bi` for a symmetric variable.
    pub fn add_sym(
        &mut self,
        bi: usize,
        var: VarId,
        scale: f64,
        problem: &LmiProblem,
    ) -> Result<&mut Self> {
        let (di, _) = self.check_block(bi, bi)?;
        match problem.vars[var.0].kind {
            VarKind::Sym { dim } if dim == di => {}
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "variable `{}` is not a symmetric {di}x{di} matrix",
                    problem.vars[var.0].name
                )))
            }
        }
        self.terms.push(BlockTerm { var, bi, bj: bi, kind: TermKind::SymPlace { scale } });
        Ok(self)
    }

    /// Evaluates the expression (without the margin shift) at an assignment.
    pub fn eval(&self, assign: &Assignment) -> DMatrix<f64> {
        let mut e = self.constant.clone();
        for term in &self.terms {
            let (di, dj) = (self.block_dims[term.bi], self.block_dims[term.bj]);
            let (oi, oj) = (self.offsets[term.bi], self.offsets[term.bj]);
            let v = &assign.values[term.var.0];
            match &term.kind {
                TermKind::Sandwich { left, right } => {
                    let local = left * v * right;
                    if term.bi == term.bj {
                        let sym = &local + local.transpose();
                        let mut view = e.view_mut((oi, oi), (di, di));
                        view += &sym;
                    } else {
                        let mut view = e.view_mut((oi, oj), (di, dj));
                        view += &local;
                        let lt = local.transpose();
                        let mut mirror = e.view_mut((oj, oi), (dj, di));
                        mirror += &lt;
                    }
                }
                TermKind::Scaled { mat } => {
                    let local = mat * v[(0, 0)];
                    if term.bi == term.bj {
                        let mut view = e.view_mut((oi, oi), (di, di));
                        view += &local;
                    } else {
                        let mut view = e.view_mut((oi, oj), (di, dj));
                        view += &local;
                        let lt = local.transpose();
                        let mut mirror = e.view_mut((oj, oi), (dj, di));
                        mirror += &lt;
                    }
                }
                TermKind::SymPlace { scale } => {
                    let mut view = e.view_mut((oi, oi), (di, di));
                    view += &(v * *scale);
                }
            }
        }
        e
    }
}

/// An affine matrix equality `sum_k scale_k * left_k * V_k * right_k = rhs`.
#[derive(Debug, Clone)]
pub struct MatEquality {
    label: String,
    rows: usize,
    cols: usize,
    terms: Vec<EqTerm>,
    rhs: DMatrix<f64>,
}

#[derive(Debug, Clone)]
struct EqTerm {
    var: VarId,
    left: DMatrix<f64>,
    right: DMatrix<f64>,
    scale: f64,
}

impl MatEquality {
    pub fn new(label: impl Into<String>, rhs: DMatrix<f64>) -> Self {
        Self {
            label: label.into(),
            rows: rhs.nrows(),
            cols: rhs.ncols(),
            terms: Vec::new(),
            rhs,
        }
    }

    pub fn add_term(
        &mut self,
        scale: f64,
        left: DMatrix<f64>,
        var: VarId,
        right: DMatrix<f64>,
        problem: &LmiProblem,
    ) -> Result<&mut Self> {
        let (vr, vc) = problem.vars[var.0].kind.shape();
        if left.nrows() != self.rows
            || left.ncols() != vr
            || right.nrows() != vc
            || right.ncols() != self.cols
        {
            return Err(Error::DimensionMismatch(format!(
                "equality `{}`: left {}x{}, var {vr}x{vc}, right {}x{}, target {}x{}",
                self.label,
                left.nrows(),
                left.ncols(),
                right.nrows(),
                right.ncols(),
                self.rows,
                self.cols
            )));
        }
        self.terms.push(EqTerm { var, left, right, scale });
        Ok(self)
    }

    /// Residual `lhs - rhs` at an assignment.
    pub fn residual(&self, assign: &Assignment) -> DMatrix<f64> {
        let mut r = -self.rhs.clone();
        for t in &self.terms {
            r += (&t.left * &assign.values[t.var.0] * &t.right) * t.scale;
        }
        r
    }
}

/// A semidefinite program in LMI form.
#[derive(Debug, Clone, Default)]
pub struct LmiProblem {
    vars: Vec<VarDecl>,
    constraints: Vec<BlockExpr>,
    equalities: Vec<MatEquality>,
    /// Minimized linear objective as `(variable, weight)` pairs contributing
    /// `trace(weight^T * V)` each. Empty means a pure feasibility problem.
    objective: Vec<(VarId, DMatrix<f64>)>,
}

impl LmiProblem {
    pub fn new() -> Self {
        Self::default()
    }

    fn add_var(&mut self, name: impl Into<String>, kind: VarKind) -> VarId {
        self.vars.push(VarDecl { name: name.into(), kind });
        VarId(self.vars.len() - 1)
    }

    pub fn scalar(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, VarKind::Scalar)
    }

    pub fn matrix(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> VarId {
        self.add_var(name, VarKind::Mat { rows, cols })
    }

    pub fn symmetric(&mut self, name: impl Into<String>, dim: usize) -> VarId {
        self.add_var(name, VarKind::Sym { dim })
    }

    pub fn var_shape(&self, v: VarId) -> (usize, usize) {
        self.vars[v.0].kind.shape()
    }

    /// Adds the semidefinite constraint `expr <= -margin * I`.
    pub fn add_psd_le_zero(&mut self, expr: BlockExpr) {
        self.constraints.push(expr);
    }

    /// Convenience: scalar bound `lo <= v` as a 1x1 constraint.
    pub fn add_scalar_lower_bound(&mut self, var: VarId, lo: f64) -> Result<()> {
        let mut c = BlockExpr::new("scalar lower bound", vec![1]);
        c.add_scaled(0, 0, var, DMatrix::from_element(1, 1, -1.0), self)?;
        c.add_const(0, 0, &DMatrix::from_element(1, 1, lo))?;
        self.add_psd_le_zero(c);
        Ok(())
    }

    /// Convenience: scalar bound `v <= hi` as a 1x1 constraint.
    pub fn add_scalar_upper_bound(&mut self, var: VarId, hi: f64) -> Result<()> {
        let mut c = BlockExpr::new("scalar upper bound", vec![1]);
        c.add_scaled(0, 0, var, DMatrix::from_element(1, 1, 1.0), self)?;
        c.add_const(0, 0, &DMatrix::from_element(1, 1, -hi))?;
        self.add_psd_le_zero(c);
        Ok(())
    }

    pub fn add_equality(&mut self, eq: MatEquality) {
        self.equalities.push(eq);
    }

    /// Adds `trace(weight^T * V)` to the minimized objective.
    pub fn add_objective_term(&mut self, var: VarId, weight: DMatrix<f64>) -> Result<()> {
        let (r, c) = self.vars[var.0].kind.shape();
        if weight.nrows() != r || weight.ncols() != c {
            return Err(Error::DimensionMismatch(format!(
                "objective weight for `{}` is {}x{}, expected {r}x{c}",
                self.vars[var.0].name,
                weight.nrows(),
                weight.ncols()
            )));
        }
        self.objective.push((var, weight));
        Ok(())
    }

    /// Minimizes a scalar variable.
    pub fn minimize_scalar(&mut self, var: VarId) -> Result<()> {
        self.add_objective_term(var, DMatrix::from_element(1, 1, 1.0))
    }

    /// Maximizes a scalar variable.
    pub fn maximize_scalar(&mut self, var: VarId) -> Result<()> {
        self.add_objective_term(var, DMatrix::from_element(1, 1, -1.0))
    }

    pub fn has_objective(&self) -> bool {
        !self.objective.is_empty()
    }

    fn num_params(&self) -> usize {
        self.vars.iter().map(|v| v.kind.num_params()).sum()
    }

    fn param_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.vars.len());
        let mut acc = 0;
        for v in &self.vars {
            offsets.push(acc);
            acc += v.kind.num_params();
        }
        offsets
    }

    fn unpack(&self, x: &[f64]) -> Assignment {
        let offsets = self.param_offsets();
        let mut values = Vec::with_capacity(self.vars.len());
        for (vi, decl) in self.vars.iter().enumerate() {
            let start = offsets[vi];
            let m = match decl.kind {
                VarKind::Scalar => DMatrix::from_element(1, 1, x[start]),
                VarKind::Mat { rows, cols } => {
                    DMatrix::from_fn(rows, cols, |r, c| x[start + c * rows + r])
                }
                VarKind::Sym { dim } => DMatrix::from_fn(dim, dim, |r, c| {
                    let (i, j) = if r <= c { (r, c) } else { (c, r) };
                    x[start + j * (j + 1) / 2 + i]
                }),
            };
            values.push(m);
        }
        Assignment { values }
    }

    /// Objective value at an assignment.
    pub fn objective_value(&self, assign: &Assignment) -> f64 {
        self.objective
            .iter()
            .map(|(v, w)| (w.transpose() * &assign.values[v.0]).trace())
            .sum()
    }

    /// Plain-text dump of the problem data for diagnostics.
    pub fn dump(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let _ = writeln!(out, "variables:");
        for v in &self.vars {
            let _ = writeln!(out, "  {} : {:?}", v.name, v.kind);
        }
        for c in &self.constraints {
            let _ = writeln!(
                out,
                "constraint `{}` (dim {}, margin {:.3e}, {} terms):",
                c.label,
                c.dim,
                c.margin,
                c.terms.len()
            );
            let _ = writeln!(out, "  constant = {:.6}", c.constant);
            for t in &c.terms {
                match &t.kind {
                    TermKind::Sandwich { left, right } => {
                        let _ = writeln!(
                            out,
                            "  ({}, {}) sandwich var `{}`: left = {:.6} right = {:.6}",
                            t.bi, t.bj, self.vars[t.var.0].name, left, right
                        );
                    }
                    TermKind::Scaled { mat } => {
                        let _ = writeln!(
                            out,
                            "  ({}, {}) scalar `{}` times {:.6}",
                            t.bi, t.bj, self.vars[t.var.0].name, mat
                        );
                    }
                    TermKind::SymPlace { scale } => {
                        let _ = writeln!(
                            out,
                            "  ({}, {}) {} * `{}`",
                            t.bi, t.bj, scale, self.vars[t.var.0].name
                        );
                    }
                }
            }
        }
        for e in &self.equalities {
            let _ = writeln!(
                out,
                "equality `{}` ({}x{}, {} terms), rhs = {:.6}",
                e.label, e.rows, e.cols, e.terms.len(), e.rhs
            );
        }
        out
    }
}

/// Outcome classification of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmiStatus {
    /// Objective problem solved and certified.
    Optimal,
    /// Feasibility problem solved and certified, or solved with reduced
    /// solver accuracy but passing certification.
    Feasible,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl LmiStatus {
    pub fn is_ok(self) -> bool {
        matches!(self, LmiStatus::Optimal | LmiStatus::Feasible)
    }
}

impl std::fmt::Display for LmiStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            LmiStatus::Optimal => "optimal",
            LmiStatus::Feasible => "feasible",
            LmiStatus::Infeasible => "infeasible",
            LmiStatus::Unbounded => "unbounded",
            LmiStatus::NumericalFailure => "numerical-failure",
        };
        f.write_str(s)
    }
}

/// Solver and certification settings.
#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub verbose: bool,
    pub max_iter: u32,
    /// Interior-point feasibility tolerance.
    pub tol_feas: f64,
    /// Interior-point duality-gap tolerance.
    pub tol_gap: f64,
    /// A-posteriori certification tolerance, scaled by each constraint's
    /// magnitude.
    pub tol_post: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            verbose: false,
            max_iter: 500,
            tol_feas: 1e-10,
            tol_gap: 1e-10,
            tol_post: 1e-7,
        }
    }
}

/// Result of a solve, including the independent certification outcome.
#[derive(Debug, Clone)]
pub struct LmiSolution {
    pub status: LmiStatus,
    pub assignment: Option<Assignment>,
    pub objective_value: Option<f64>,
    /// Max over constraints of `lambda_max(expr) + margin`; nonpositive
    /// means every constraint holds exactly.
    pub max_violation: f64,
    /// Max absolute entry over all equality residuals.
    pub max_eq_residual: f64,
    /// Raw status string from the interior-point solver.
    pub solver_status: String,
    pub iterations: u32,
}

/// Solves the problem and certifies the result. See [`LmiStatus`] for the
/// meaning of the outcome.
pub fn solve(problem: &LmiProblem, opts: &SolverOptions) -> Result<LmiSolution> {
    bridge::solve(problem, opts)
}

/// Certifies an assignment against the problem's constraints, returning
/// `(max_violation, max_eq_residual, certified)`.
pub fn certify(problem: &LmiProblem, assign: &Assignment, tol_post: f64) -> (f64, f64, bool) {
    let mut max_violation = f64::NEG_INFINITY;
    let mut certified = true;
    for c in &problem.constraints {
        let e = c.eval(assign);
        let lmax = linalg::max_eig(&e).unwrap_or(f64::INFINITY);
        let violation = lmax + c.margin;
        max_violation = max_violation.max(violation);
        let scale = 1.0f64.max(e.abs().max());
        if violation > tol_post * scale {
            certified = false;
        }
    }
    if problem.constraints.is_empty() {
        max_violation = 0.0;
    }
    let mut max_eq = 0.0f64;
    for eq in &problem.equalities {
        let r = eq.residual(assign).abs().max();
        let scale = 1.0f64.max(eq.rhs.abs().max());
        if r > tol_post * scale {
            certified = false;
        }
        max_eq = max_eq.max(r);
    }
    (max_violation, max_eq, certified)
}

/// Result of a feasibility bisection.
#[derive(Debug, Clone)]
pub struct BisectionResult {
    /// Largest parameter value found feasible.
    pub value: f64,
    /// Solution at `value`.
    pub solution: LmiSolution,
    pub evaluations: usize,
}

/// Finds the largest `t` in `[lo, hi]` for which `build(t)` is feasible,
/// assuming feasibility is monotone (feasible at small `t`, infeasible past
/// some threshold). Errors if `lo` itself is infeasible.
pub fn bisect_feasible(
    mut build: impl FnMut(f64) -> Result<LmiProblem>,
    lo: f64,
    hi: f64,
    tol: f64,
    opts: &SolverOptions,
) -> Result<BisectionResult> {
    if !(lo.is_finite() && hi.is_finite() && lo <= hi && tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "bad bisection interval [{lo}, {hi}] or tolerance {tol}"
        )));
    }
    let mut evaluations = 0;
    let mut probe = |t: f64, evaluations: &mut usize| -> Result<Option<LmiSolution>> {
        *evaluations += 1;
        let sol = solve(&build(t)?, opts)?;
        Ok(if sol.status.is_ok() { Some(sol) } else { None })
    };

    let mut best = match probe(lo, &mut evaluations)? {
        Some(sol) => sol,
        None => {
            return Err(Error::NoFeasiblePoint(format!(
                "bisection lower endpoint {lo} is already infeasible"
            )))
        }
    };
    let mut lo = lo;
    let mut hi = hi;
    if let Some(sol) = probe(hi, &mut evaluations)? {
        return Ok(BisectionResult { value: hi, solution: sol, evaluations });
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        match probe(mid, &mut evaluations)? {
            Some(sol) => {
                best = sol;
                lo = mid;
            }
            None => hi = mid,
        }
    }
    Ok(BisectionResult { value: lo, solution: best, evaluations })
}
