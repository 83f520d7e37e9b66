//! Lowering of LMI problems to the conic interior-point solver.
//!
//! Semidefinite constraints become scaled-triangle PSD cones: the upper
//! triangle is stored column-major and off-diagonal entries are scaled by
//! sqrt(2) so that inner products are preserved. Matrix equalities become
//! zero-cone rows.

use std::collections::BTreeMap;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::DMatrix;

use super::{
    certify, BlockExpr, LmiProblem, LmiSolution, LmiStatus, SolverOptions, TermKind, VarKind,
};
use crate::error::{Error, Result};

const SQRT2: f64 = std::f64::consts::SQRT_2;

fn svec_len(d: usize) -> usize {
    d * (d + 1) / 2
}

fn svec_index(i: usize, j: usize) -> usize {
    debug_assert!(i <= j);
    j * (j + 1) / 2 + i
}

/// How a local contribution lands in the full symmetric expression.
enum Placement {
    /// Added once to a diagonal block; caller guarantees symmetry.
    DiagOnce,
    /// `local + local^T` on a diagonal block.
    DiagSym,
    /// `local` at `(bi, bj)` and its transpose at `(bj, bi)`.
    OffDiag,
}

fn place(
    acc: &mut DMatrix<f64>,
    expr: &BlockExpr,
    bi: usize,
    bj: usize,
    local: &DMatrix<f64>,
    mode: Placement,
) {
    let (oi, oj) = (expr.offsets[bi], expr.offsets[bj]);
    let (di, dj) = (expr.block_dims[bi], expr.block_dims[bj]);
    match mode {
        Placement::DiagOnce => {
            let mut v = acc.view_mut((oi, oi), (di, di));
            v += local;
        }
        Placement::DiagSym => {
            let mut v = acc.view_mut((oi, oi), (di, di));
            v += local;
            let lt = local.transpose();
            let mut v = acc.view_mut((oi, oi), (di, di));
            v += &lt;
        }
        Placement::OffDiag => {
            let mut v = acc.view_mut((oi, oj), (di, dj));
            v += local;
            let lt = local.transpose();
            let mut v = acc.view_mut((oj, oi), (dj, di));
            v += &lt;
        }
    }
}

/// Coefficient matrices `dE/dparam` of a constraint, keyed by global
/// parameter index. Keys are ordered, which keeps the lowering
/// deterministic.
fn constraint_coefficients(
    problem: &LmiProblem,
    expr: &BlockExpr,
    param_offsets: &[usize],
) -> BTreeMap<usize, DMatrix<f64>> {
    let dim = expr.dim;
    let mut coeffs: BTreeMap<usize, DMatrix<f64>> = BTreeMap::new();
    let mut add =
        |param: usize, bi: usize, bj: usize, local: &DMatrix<f64>, mode: Placement| {
            let acc = coeffs.entry(param).or_insert_with(|| DMatrix::zeros(dim, dim));
            place(acc, expr, bi, bj, local, mode);
        };

    for term in &expr.terms {
        let start = param_offsets[term.var.0];
        let kind = &problem.vars[term.var.0].kind;
        match &term.kind {
            TermKind::Sandwich { left, right } => match kind {
                VarKind::Scalar => {
                    // 1x1 variable: L * v * R is v times (L R)
                    let local = left * right;
                    let mode = if term.bi == term.bj { Placement::DiagSym } else { Placement::OffDiag };
                    add(start, term.bi, term.bj, &local, mode);
                }
                VarKind::Mat { rows, cols } => {
                    for b in 0..*cols {
                        for a in 0..*rows {
                            let param = start + b * rows + a;
                            let local = left.column(a) * right.row(b);
                            let mode = if term.bi == term.bj {
                                Placement::DiagSym
                            } else {
                                Placement::OffDiag
                            };
                            add(param, term.bi, term.bj, &local, mode);
                        }
                    }
                }
                VarKind::Sym { dim: d } => {
                    for j in 0..*d {
                        for i in 0..=j {
                            let param = start + svec_index(i, j);
                            let mut local = left.column(i) * right.row(j);
                            if i != j {
                                local += left.column(j) * right.row(i);
                            }
                            let mode = if term.bi == term.bj {
                                Placement::DiagSym
                            } else {
                                Placement::OffDiag
                            };
                            add(param, term.bi, term.bj, &local, mode);
                        }
                    }
                }
            },
            TermKind::Scaled { mat } => {
                let mode = if term.bi == term.bj { Placement::DiagOnce } else { Placement::OffDiag };
                add(start, term.bi, term.bj, mat, mode);
            }
            TermKind::SymPlace { scale } => {
                let d = expr.block_dims[term.bi];
                for j in 0..d {
                    for i in 0..=j {
                        let param = start + svec_index(i, j);
                        let mut local = DMatrix::zeros(d, d);
                        local[(i, j)] = *scale;
                        if i != j {
                            local[(j, i)] = *scale;
                        }
                        add(param, term.bi, term.bi, &local, Placement::DiagOnce);
                    }
                }
            }
        }
    }
    coeffs
}

pub(super) fn solve(problem: &LmiProblem, opts: &SolverOptions) -> Result<LmiSolution> {
    let num_params = problem.num_params();
    if num_params == 0 {
        return Err(Error::InvalidArgument("problem declares no variables".into()));
    }
    if problem.constraints.is_empty() && problem.equalities.is_empty() {
        // trivially feasible at the origin
        let assign = problem.unpack(&vec![0.0; num_params]);
        let objective_value = problem.has_objective().then(|| problem.objective_value(&assign));
        return Ok(LmiSolution {
            status: if problem.has_objective() { LmiStatus::Unbounded } else { LmiStatus::Feasible },
            assignment: Some(assign),
            objective_value,
            max_violation: 0.0,
            max_eq_residual: 0.0,
            solver_status: "trivial".into(),
            iterations: 0,
        });
    }
    let param_offsets = problem.param_offsets();

    // rows of (A, b): equalities first, then one PSD cone per constraint
    let mut triplets: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut b = Vec::new();
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    let mut row = 0usize;

    let eq_rows: usize = problem.equalities.iter().map(|e| e.rows * e.cols).sum();
    if eq_rows > 0 {
        for eq in &problem.equalities {
            for t in &eq.terms {
                let kind = &problem.vars[t.var.0].kind;
                let start = param_offsets[t.var.0];
                match kind {
                    VarKind::Scalar => {
                        let local = (&t.left * &t.right) * t.scale;
                        for c in 0..eq.cols {
                            for r in 0..eq.rows {
                                let v = local[(r, c)];
                                if v != 0.0 {
                                    *triplets
                                        .entry((row + c * eq.rows + r, start))
                                        .or_insert(0.0) += v;
                                }
                            }
                        }
                    }
                    VarKind::Mat { rows, cols } => {
                        for bcol in 0..*cols {
                            for a in 0..*rows {
                                let param = start + bcol * rows + a;
                                for r in 0..eq.rows {
                                    let lv = t.left[(r, a)];
                                    if lv == 0.0 {
                                        continue;
                                    }
                                    for c in 0..eq.cols {
                                        let v = t.scale * lv * t.right[(bcol, c)];
                                        if v != 0.0 {
                                            *triplets
                                                .entry((row + c * eq.rows + r, param))
                                                .or_insert(0.0) += v;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    VarKind::Sym { dim } => {
                        for j in 0..*dim {
                            for i in 0..=j {
                                let param = start + svec_index(i, j);
                                for r in 0..eq.rows {
                                    for c in 0..eq.cols {
                                        let mut v =
                                            t.scale * t.left[(r, i)] * t.right[(j, c)];
                                        if i != j {
                                            v += t.scale * t.left[(r, j)] * t.right[(i, c)];
                                        }
                                        if v != 0.0 {
                                            *triplets
                                                .entry((row + c * eq.rows + r, param))
                                                .or_insert(0.0) += v;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            for c in 0..eq.cols {
                for r in 0..eq.rows {
                    debug_assert_eq!(b.len(), row + c * eq.rows + r);
                    b.push(eq.rhs[(r, c)]);
                }
            }
            row += eq.rows * eq.cols;
        }
        cones.push(SupportedConeT::ZeroConeT(eq_rows));
    }

    for expr in &problem.constraints {
        let d = expr.dim;
        let coeffs = constraint_coefficients(problem, expr, &param_offsets);
        for (&param, mat) in &coeffs {
            for j in 0..d {
                for i in 0..=j {
                    let v = mat[(i, j)];
                    if v != 0.0 {
                        let scaled = if i == j { v } else { SQRT2 * v };
                        *triplets.entry((row + svec_index(i, j), param)).or_insert(0.0) += scaled;
                    }
                }
            }
        }
        // b = svec(-(constant + margin I))
        for j in 0..d {
            for i in 0..=j {
                let mut v = -expr.constant[(i, j)];
                if i == j {
                    v -= expr.margin;
                } else {
                    v *= SQRT2;
                }
                debug_assert_eq!(b.len(), row + svec_index(i, j));
                b.push(v);
            }
        }
        row += svec_len(d);
        cones.push(SupportedConeT::PSDTriangleConeT(d));
    }

    let total_rows = row;
    let mut rows_idx = Vec::with_capacity(triplets.len());
    let mut cols_idx = Vec::with_capacity(triplets.len());
    let mut vals = Vec::with_capacity(triplets.len());
    for (&(r, c), &v) in &triplets {
        rows_idx.push(r);
        cols_idx.push(c);
        vals.push(v);
    }
    let a = CscMatrix::new_from_triplets(total_rows, num_params, rows_idx, cols_idx, vals);
    let p = CscMatrix::zeros((num_params, num_params));

    let mut q = vec![0.0; num_params];
    for (var, w) in &problem.objective {
        let start = param_offsets[var.0];
        match &problem.vars[var.0].kind {
            VarKind::Scalar => q[start] += w[(0, 0)],
            VarKind::Mat { rows, cols } => {
                for c in 0..*cols {
                    for r in 0..*rows {
                        q[start + c * rows + r] += w[(r, c)];
                    }
                }
            }
            VarKind::Sym { dim } => {
                for j in 0..*dim {
                    for i in 0..=j {
                        let idx = start + svec_index(i, j);
                        if i == j {
                            q[idx] += w[(i, i)];
                        } else {
                            q[idx] += w[(i, j)] + w[(j, i)];
                        }
                    }
                }
            }
        }
    }

    let settings = DefaultSettings {
        verbose: opts.verbose,
        max_iter: opts.max_iter,
        tol_gap_abs: opts.tol_gap,
        tol_gap_rel: opts.tol_gap,
        tol_feas: opts.tol_feas,
        max_threads: 1,
        ..DefaultSettings::default()
    };
    let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings)
        .map_err(|e| Error::NumericalFailure(format!("solver setup failed: {e:?}")))?;
    solver.solve();

    let raw = solver.solution.status;
    let solver_status = format!("{raw:?}");
    let iterations = solver.solution.iterations;

    match raw {
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            return Ok(LmiSolution {
                status: LmiStatus::Infeasible,
                assignment: None,
                objective_value: None,
                max_violation: f64::INFINITY,
                max_eq_residual: f64::INFINITY,
                solver_status,
                iterations,
            });
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            return Ok(LmiSolution {
                status: LmiStatus::Unbounded,
                assignment: None,
                objective_value: None,
                max_violation: f64::INFINITY,
                max_eq_residual: f64::INFINITY,
                solver_status,
                iterations,
            });
        }
        _ => {}
    }

    let assign = problem.unpack(&solver.solution.x);
    let (max_violation, max_eq_residual, certified) = certify(problem, &assign, opts.tol_post);
    let status = if certified {
        if problem.has_objective() && raw == SolverStatus::Solved {
            LmiStatus::Optimal
        } else {
            LmiStatus::Feasible
        }
    } else {
        LmiStatus::NumericalFailure
    };
    let objective_value = problem.has_objective().then(|| problem.objective_value(&assign));
    Ok(LmiSolution {
        status,
        assignment: Some(assign),
        objective_value,
        max_violation,
        max_eq_residual,
        solver_status,
        iterations,
    })
}
