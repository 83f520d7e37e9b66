//! Controller synthesis from data.
//!
//! Both designs solve a semidefinite program over the collected samples and
//! return a state feedback `u = K zeta(x)` together with the Lyapunov
//! quantities needed by the triggering and region-of-attraction analyses.
//! The linearization design stabilizes the origin locally; the contractive
//! design additionally enforces a Jacobian contraction condition over a
//! region, using a gradient bound on the nonlinear terms.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::experiment::check_richness;
use crate::linalg;
use crate::lmi::{self, BlockExpr, LmiProblem, MatEquality, SolverOptions};
use crate::model::{DataMatrices, FunctionLibrary, RegionBox};

/// Which synthesis program produced a controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Linearization,
    Contractive,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Linearization => f.write_str("linearization"),
            Method::Contractive => f.write_str("contractive"),
        }
    }
}

/// A synthesized state feedback with its stability certificate.
///
/// The feedback is `u = k * zeta(x)`. `g` maps the library to the closed
/// loop through the data (`x1 * g` is the closed-loop coefficient matrix)
/// and `l` isolates the input channel (`x1 * l` equals `B k` on exact
/// data). `s_metric` is the inverse of `p` and defines the Lyapunov
/// function `V(x) = x' s_metric x`, whose derivative along the closed loop
/// is bounded by `-x' theta x / ... ` terms assembled from `theta`, `phi`,
/// and `beta` by the downstream analyses.
#[derive(Debug, Clone)]
pub struct Controller {
    pub method: Method,
    /// Feedback gain, `m x s`.
    pub k: DMatrix<f64>,
    /// Closed-loop data map, `T x s`.
    pub g: DMatrix<f64>,
    /// Input-channel data map, `T x s`.
    pub l: DMatrix<f64>,
    /// Lyapunov shape, `n x n`, positive definite.
    pub p: DMatrix<f64>,
    /// Inverse of `p`.
    pub s_metric: DMatrix<f64>,
    /// Decay weight the design was run with.
    pub omega: DMatrix<f64>,
    /// Decay matrix of the Lyapunov derivative bound.
    pub theta: DMatrix<f64>,
    /// Cross term against the nonlinear part (zero for contractive designs).
    pub phi: DMatrix<f64>,
    /// Contraction margin (zero for linearization designs).
    pub beta: f64,
    /// Gradient bound factor used by the contractive design.
    pub rq: Option<DMatrix<f64>>,
    /// Region over which the contractive certificate holds.
    pub region: Option<RegionBox>,
}

impl Controller {
    pub fn state_dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn lib_dim(&self) -> usize {
        self.k.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.k.nrows()
    }

    /// Number of samples the design was computed from.
    pub fn num_samples(&self) -> usize {
        self.g.nrows()
    }

    /// First `n` columns of `g`, the part acting on the state block.
    pub fn g1(&self) -> DMatrix<f64> {
        self.g.columns(0, self.state_dim()).into_owned()
    }

    /// Remaining columns of `g`, acting on the nonlinear terms.
    pub fn g2(&self) -> DMatrix<f64> {
        let n = self.state_dim();
        self.g.columns(n, self.lib_dim() - n).into_owned()
    }
}

/// Options shared by both synthesis programs.
#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    /// Margin of the positive-definiteness constraint on `p`.
    pub eps_pd: f64,
    /// Relative singular-value tolerance of the richness check.
    pub richness_tol: f64,
    pub solver: SolverOptions,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            eps_pd: 1e-6,
            richness_tol: 1e-8,
            solver: SolverOptions::default(),
        }
    }
}

fn check_preconditions(data: &DataMatrices, omega: &DMatrix<f64>, opts: &SynthesisOptions) -> Result<()> {
    let n = data.state_dim();
    if omega.nrows() != n || omega.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "omega is {}x{}, expected {n}x{n}",
            omega.nrows(),
            omega.ncols()
        )));
    }
    if linalg::min_eig(omega)? <= 0.0 {
        return Err(Error::InvalidArgument(
            "the decay weight omega must be positive definite".into(),
        ));
    }
    let rep = check_richness(data, Some(opts.richness_tol));
    if !rep.full_row_rank {
        return Err(Error::RankDeficient { rank: rep.rank, required: rep.required });
    }
    Ok(())
}

struct Recovered {
    p: DMatrix<f64>,
    s_metric: DMatrix<f64>,
    g: DMatrix<f64>,
    k: DMatrix<f64>,
    l: DMatrix<f64>,
}

fn recover(
    data: &DataMatrices,
    p: DMatrix<f64>,
    y1: &DMatrix<f64>,
    g2: Option<&DMatrix<f64>>,
    opts: &SynthesisOptions,
) -> Result<Recovered> {
    let n = data.state_dim();
    let s = data.lib_dim();
    let s_metric = linalg::pd_inverse(&p)?;
    let mut g = DMatrix::zeros(data.num_samples(), s);
    g.columns_mut(0, n).copy_from(&(y1 * &s_metric));
    if let Some(g2) = g2 {
        g.columns_mut(n, s - n).copy_from(g2);
    }
    let k = &data.u0 * &g;
    let l = recover_l(data, &k, opts.richness_tol)?;
    Ok(Recovered { p, s_metric, g, k, l })
}

/// Least-norm solution `l` of `[u0; z0] l = [k; 0]`, so that `x1 * l`
/// reproduces the input channel `B k` on exact data.
pub fn recover_l(data: &DataMatrices, k: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    let m = data.input_dim();
    let s = data.lib_dim();
    if k.nrows() != m || k.ncols() != s {
        return Err(Error::DimensionMismatch(format!(
            "gain is {}x{}, expected {m}x{s}",
            k.nrows(),
            k.ncols()
        )));
    }
    let rep = check_richness(data, Some(tol));
    if !rep.full_row_rank {
        return Err(Error::RankDeficient { rank: rep.rank, required: rep.required });
    }
    let stacked = data.stacked_uz();
    let mut rhs = DMatrix::zeros(m + s, s);
    rhs.rows_mut(0, m).copy_from(k);
    Ok(linalg::pinv(&stacked, tol)? * rhs)
}

/// Designs a locally stabilizing feedback by semidefinite programming,
/// minimizing the gain of the closed loop on the nonlinear terms.
pub fn design_linearization(
    data: &DataMatrices,
    omega: &DMatrix<f64>,
    opts: &SynthesisOptions,
) -> Result<Controller> {
    check_preconditions(data, omega, opts)?;
    let n = data.state_dim();
    let s = data.lib_dim();
    let t = data.num_samples();
    let q_dim = s - n;
    let eye_n = DMatrix::identity(n, n);

    let mut prob = LmiProblem::new();
    let p_var = prob.symmetric("P", n);
    let y1 = prob.matrix("Y1", t, n);
    let g2_alpha = if q_dim > 0 {
        Some((prob.matrix("G2", t, q_dim), prob.scalar("alpha")))
    } else {
        None
    };

    let mut decay = BlockExpr::new("decay", vec![n]);
    decay.add_sandwich(0, 0, data.x1.clone(), y1, eye_n.clone(), &prob)?;
    decay.add_const(0, 0, omega)?;
    prob.add_psd_le_zero(decay);

    let mut pd = BlockExpr::new("p positive definite", vec![n]);
    pd.add_sym(0, p_var, -1.0, &prob)?;
    pd.set_margin(opts.eps_pd);
    prob.add_psd_le_zero(pd);

    // z0 Y1 = [P; 0]
    let mut lift = MatEquality::new("state lift", DMatrix::zeros(s, n));
    lift.add_term(1.0, data.z0.clone(), y1, eye_n.clone(), &prob)?;
    let mut top = DMatrix::zeros(s, n);
    top.view_mut((0, 0), (n, n)).copy_from(&eye_n);
    lift.add_term(-1.0, top, p_var, eye_n.clone(), &prob)?;
    prob.add_equality(lift);

    if let Some((g2, alpha)) = g2_alpha {
        // z0 G2 = [0; I]
        let mut complement = MatEquality::new("nonlinear complement", {
            let mut rhs = DMatrix::zeros(s, q_dim);
            rhs.view_mut((n, 0), (q_dim, q_dim))
                .copy_from(&DMatrix::identity(q_dim, q_dim));
            rhs
        });
        complement.add_term(
            1.0,
            data.z0.clone(),
            g2,
            DMatrix::identity(q_dim, q_dim),
            &prob,
        )?;
        prob.add_equality(complement);

        // || x1 G2 || <= alpha in the spectral norm, as an epigraph block
        let mut gain = BlockExpr::new("nonlinear gain epigraph", vec![n, q_dim]);
        gain.add_scaled(0, 0, alpha, -eye_n.clone(), &prob)?;
        gain.add_scaled(1, 1, alpha, -DMatrix::identity(q_dim, q_dim), &prob)?;
        gain.add_sandwich(0, 1, data.x1.clone(), g2, DMatrix::identity(q_dim, q_dim), &prob)?;
        prob.add_psd_le_zero(gain);
        prob.add_scalar_lower_bound(alpha, 0.0)?;
        prob.minimize_scalar(alpha)?;
    }

    let sol = lmi::solve(&prob, &opts.solver)?;
    if !sol.status.is_ok() {
        return Err(Error::SynthesisInfeasible { status: sol.status.to_string() });
    }
    let assign = sol.assignment.as_ref().expect("ok status carries an assignment");
    let rec = recover(
        data,
        assign.matrix(p_var).clone(),
        assign.matrix(y1),
        g2_alpha.map(|(g2, _)| assign.matrix(g2)),
        opts,
    )?;

    let theta = linalg::sym_part(&(&rec.s_metric * omega * &rec.s_metric));
    let phi = if q_dim > 0 {
        let g2_cols = rec.g.columns(n, q_dim).into_owned();
        &rec.s_metric * (&data.x1 * g2_cols)
    } else {
        DMatrix::zeros(n, 0)
    };

    Ok(Controller {
        method: Method::Linearization,
        k: rec.k,
        g: rec.g,
        l: rec.l,
        p: rec.p,
        s_metric: rec.s_metric,
        omega: omega.clone(),
        theta,
        phi,
        beta: 0.0,
        rq: None,
        region: None,
    })
}

/// Designs a feedback whose closed loop is contractive on `region`,
/// given a factor `rq` bounding the nonlinear-term gradients there
/// (`dQ/dx' dQ/dx <= rq rq'` on the region, see [`estimate_rq`]).
pub fn design_contractive(
    data: &DataMatrices,
    omega: &DMatrix<f64>,
    rq: &DMatrix<f64>,
    region: &RegionBox,
    opts: &SynthesisOptions,
) -> Result<Controller> {
    check_preconditions(data, omega, opts)?;
    let n = data.state_dim();
    let s = data.lib_dim();
    let t = data.num_samples();
    let q_dim = s - n;
    let r = rq.ncols();
    if rq.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "rq has {} rows, expected {n}",
            rq.nrows()
        )));
    }
    if q_dim > 0 && r == 0 {
        return Err(Error::InvalidArgument(
            "the library has nonlinear terms but rq is empty; provide a gradient bound".into(),
        ));
    }
    if region.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "region has dimension {}, expected {n}",
            region.dim()
        )));
    }
    let eye_n = DMatrix::identity(n, n);

    let mut prob = LmiProblem::new();
    let p_var = prob.symmetric("P", n);
    let y1 = prob.matrix("Y1", t, n);
    let g2_var = (q_dim > 0).then(|| prob.matrix("G2", t, q_dim));

    // block layout: state, then the nonlinear-gain slack, then the
    // gradient-bound slack (either may be absent)
    let mut dims = vec![n];
    let bg = g2_var.is_some().then(|| {
        dims.push(q_dim);
        dims.len() - 1
    });
    let br = (r > 0).then(|| {
        dims.push(r);
        dims.len() - 1
    });

    let mut core = BlockExpr::new("contraction", dims);
    core.add_sandwich(0, 0, data.x1.clone(), y1, eye_n.clone(), &prob)?;
    core.add_const(0, 0, omega)?;
    if let (Some(g2), Some(bg)) = (g2_var, bg) {
        core.add_sandwich(0, bg, data.x1.clone(), g2, DMatrix::identity(q_dim, q_dim), &prob)?;
        core.add_const(bg, bg, &(-DMatrix::identity(q_dim, q_dim)))?;
    }
    if let Some(br) = br {
        core.add_sandwich(0, br, eye_n.clone(), p_var, rq.clone(), &prob)?;
        core.add_const(br, br, &(-DMatrix::identity(r, r)))?;
    }
    prob.add_psd_le_zero(core);

    let mut pd = BlockExpr::new("p positive definite", vec![n]);
    pd.add_sym(0, p_var, -1.0, &prob)?;
    pd.set_margin(opts.eps_pd);
    prob.add_psd_le_zero(pd);

    let mut lift = MatEquality::new("state lift", DMatrix::zeros(s, n));
    lift.add_term(1.0, data.z0.clone(), y1, eye_n.clone(), &prob)?;
    let mut top = DMatrix::zeros(s, n);
    top.view_mut((0, 0), (n, n)).copy_from(&eye_n);
    lift.add_term(-1.0, top, p_var, eye_n.clone(), &prob)?;
    prob.add_equality(lift);

    if let Some(g2) = g2_var {
        let mut complement = MatEquality::new("nonlinear complement", {
            let mut rhs = DMatrix::zeros(s, q_dim);
            rhs.view_mut((n, 0), (q_dim, q_dim))
                .copy_from(&DMatrix::identity(q_dim, q_dim));
            rhs
        });
        complement.add_term(
            1.0,
            data.z0.clone(),
            g2,
            DMatrix::identity(q_dim, q_dim),
            &prob,
        )?;
        prob.add_equality(complement);
    }

    let sol = lmi::solve(&prob, &opts.solver)?;
    if !sol.status.is_ok() {
        return Err(Error::SynthesisInfeasible { status: sol.status.to_string() });
    }
    let assign = sol.assignment.as_ref().expect("ok status carries an assignment");
    let rec = recover(
        data,
        assign.matrix(p_var).clone(),
        assign.matrix(y1),
        g2_var.map(|g2| assign.matrix(g2)),
        opts,
    )?;

    // theta = beta * s with beta the contraction rate guaranteed by omega
    let sqrt_s = linalg::psd_sqrt(&rec.s_metric)?;
    let beta = linalg::min_eig(&(&sqrt_s * omega * &sqrt_s))?;
    let theta = &rec.s_metric * beta;

    Ok(Controller {
        method: Method::Contractive,
        k: rec.k,
        g: rec.g,
        l: rec.l,
        p: rec.p,
        s_metric: rec.s_metric,
        omega: omega.clone(),
        theta,
        phi: DMatrix::zeros(n, q_dim),
        beta,
        rq: Some(rq.clone()),
        region: Some(region.clone()),
    })
}

/// Estimates a diagonal factor `rq` with `dQ/dx' dQ/dx <= rq rq'`
/// everywhere on the region, by a Gershgorin bound maximized over the
/// region's grid and inflated by 5 percent. Columns that are identically
/// zero are dropped.
pub fn estimate_rq(library: &FunctionLibrary, region: &RegionBox) -> Result<DMatrix<f64>> {
    let n = library.state_dim();
    if region.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "region has dimension {}, library state has {n}",
            region.dim()
        )));
    }
    if library.q_dim() == 0 {
        return Ok(DMatrix::zeros(n, 0));
    }
    let mut row_bound = vec![0.0f64; n];
    let mut failed = false;
    region.for_each_grid_point(|x| {
        let jq = library.q_jacobian(x);
        let w = jq.transpose() * &jq;
        for i in 0..n {
            let d: f64 = (0..n).map(|j| w[(i, j)].abs()).sum();
            if !d.is_finite() {
                failed = true;
            }
            row_bound[i] = row_bound[i].max(d);
        }
    });
    if failed {
        return Err(Error::NumericalFailure(
            "nonlinear-term gradients are not finite on the region".into(),
        ));
    }
    let cols: Vec<usize> = (0..n).filter(|&i| row_bound[i] > 0.0).collect();
    let mut rq = DMatrix::zeros(n, cols.len());
    for (c, &i) in cols.iter().enumerate() {
        rq[(i, c)] = (1.05 * row_bound[i]).sqrt();
    }
    Ok(rq)
}

/// Residual of the contraction certificate in its eliminated form,
/// `s x1g1 + (x1g1)' s + s omega s + rq rq' + s x1g2 (x1g2)' s`.
/// Nonpositive (up to solver slack) confirms the two forms of the design
/// inequality agree.
pub fn contraction_certificate_residual(ctrl: &Controller, data: &DataMatrices) -> Result<f64> {
    if ctrl.method != Method::Contractive {
        return Err(Error::InvalidArgument(
            "certificate residual is defined for contractive designs".into(),
        ));
    }
    let s = &ctrl.s_metric;
    let x1g1 = &data.x1 * ctrl.g1();
    let x1g2 = &data.x1 * ctrl.g2();
    let mut m = s * &x1g1;
    m += m.transpose();
    m += s * &ctrl.omega * s;
    if let Some(rq) = &ctrl.rq {
        m += rq * rq.transpose();
    }
    m += s * &x1g2 * x1g2.transpose() * s;
    linalg::max_eig(&m)
}

/// A-posteriori checks of a synthesized controller against the data and
/// the library.
#[derive(Debug, Clone)]
pub struct ClosedLoopReport {
    /// Largest real part of the closed-loop linearization eigenvalues.
    pub max_real_part: f64,
    pub hurwitz: bool,
    /// Contractive designs: max over the region grid of the eigenvalue
    /// excess of `s J + J' s + beta s` for the closed-loop Jacobian `J`.
    pub contraction_residual: Option<f64>,
    /// Linearization designs: max of the Lyapunov derivative over shells
    /// near the origin (negative means decrease).
    pub vdot_max_near_origin: Option<f64>,
}

/// Verifies a controller after synthesis: closed-loop linearization
/// eigenvalues, plus a method-specific sweep.
pub fn verify_closed_loop(
    ctrl: &Controller,
    data: &DataMatrices,
    library: &FunctionLibrary,
    region: Option<&RegionBox>,
) -> Result<ClosedLoopReport> {
    let n = ctrl.state_dim();
    if library.state_dim() != n || library.dim() != ctrl.lib_dim() {
        return Err(Error::DimensionMismatch(
            "library does not match the controller dimensions".into(),
        ));
    }
    let x1g = &data.x1 * &ctrl.g;
    let origin = DVector::zeros(n);
    let a_cl = &x1g * library.jacobian(&origin);
    let max_real_part = linalg::max_real_eigenvalue(&a_cl)?;
    let hurwitz = max_real_part < 0.0;

    let mut contraction_residual = None;
    let mut vdot_max_near_origin = None;
    match ctrl.method {
        Method::Contractive => {
            let region = region
                .or(ctrl.region.as_ref())
                .ok_or_else(|| Error::InvalidArgument("no region to verify contraction on".into()))?;
            let s = &ctrl.s_metric;
            let mut worst = f64::NEG_INFINITY;
            let mut err = None;
            region.for_each_grid_point(|x| {
                let jf = &x1g * library.jacobian(x);
                let m = s * &jf + jf.transpose() * s + s * ctrl.beta;
                match linalg::max_eig(&m) {
                    Ok(v) => worst = worst.max(v),
                    Err(e) => err = Some(e),
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
            contraction_residual = Some(worst);
        }
        Method::Linearization => {
            // sample shells shrinking toward the origin; the derivative of
            // V must be negative on all of them
            let s = &ctrl.s_metric;
            let mut worst = f64::NEG_INFINITY;
            let dirs: Vec<DVector<f64>> = if n == 2 {
                (0..120)
                    .map(|i| {
                        let a = i as f64 / 120.0 * std::f64::consts::TAU;
                        DVector::from_vec(vec![a.cos(), a.sin()])
                    })
                    .collect()
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                (0..200)
                    .map(|_| {
                        let v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0f64));
                        let nm = v.norm();
                        if nm > 1e-9 { v / nm } else { DVector::from_element(n, 1.0 / (n as f64).sqrt()) }
                    })
                    .collect()
            };
            for radius in [0.1, 0.03, 0.01, 0.003, 0.001] {
                for d in &dirs {
                    let x = d * radius;
                    let zeta = library.eval(&x);
                    let vdot = 2.0 * (x.transpose() * s * &x1g * zeta)[(0, 0)];
                    worst = worst.max(vdot);
                }
            }
            vdot_max_near_origin = Some(worst);
        }
    }

    Ok(ClosedLoopReport { max_real_part, hurwitz, contraction_residual, vdot_max_near_origin })
}
