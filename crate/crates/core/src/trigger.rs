//! Event-trigger design.
//!
//! Given a synthesized controller, these routines pick the triggering
//! threshold by a small LMI in two scalars and certify a strictly positive
//! lower bound on the time between consecutive events. Two trigger shapes
//! are supported: one compares the library error against the state norm,
//! the other against the library norm (useful when the state itself is not
//! directly measured between events).

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::lmi::{self, BlockExpr, LmiProblem, SolverOptions, VarId};
use crate::model::{DataMatrices, FunctionLibrary, RegionBox};
use crate::synthesis::Controller;

/// Which quantity the error threshold is proportional to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerKind {
    /// Fire when `|e| >= sigma |x|`.
    ErrorState,
    /// Fire when `|e| >= sigma |zeta(x)|`.
    ErrorLibrary,
}

impl std::fmt::Display for TriggerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TriggerKind::ErrorState => f.write_str("error-state"),
            TriggerKind::ErrorLibrary => f.write_str("error-library"),
        }
    }
}

/// Growth constants entering the inter-event-time bound, computed over a
/// region the closed loop is expected to stay in.
#[derive(Debug, Clone)]
pub struct MietConstants {
    /// Bound on the library Jacobian norm, at least 1.
    pub ell1: f64,
    /// `ell1` times the larger of the closed-loop and input-channel gains.
    pub ell2: f64,
    /// Error growth rate of the state-normalized trigger.
    pub ell: f64,
    /// Error growth rate of the library-normalized trigger (`= ell2`).
    pub omega: f64,
}

/// How the region is sampled when bounding the growth constants.
#[derive(Debug, Clone)]
pub struct GridOptions {
    /// Overrides the region's own per-axis resolution.
    pub per_axis: Option<usize>,
    /// Extra uniformly sampled points.
    pub random: usize,
    pub seed: u64,
    /// Safety factor applied to grid maxima, compensating for the gap
    /// between a grid maximum and the true supremum.
    pub inflation: f64,
    /// Radius of the ball around the origin excluded from the
    /// `|zeta(x)|/|x|` sweep.
    pub origin_exclusion: f64,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            per_axis: None,
            random: 10_000,
            seed: 0,
            inflation: 1.02,
            origin_exclusion: 1e-6,
        }
    }
}

/// Options of the trigger design.
#[derive(Debug, Clone)]
pub struct TriggerOptions {
    /// Cap on the threshold slope; the design saturates here when the LMI
    /// puts no limit on it.
    pub sigma_cap: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    pub grid: GridOptions,
    pub solver: SolverOptions,
}

impl Default for TriggerOptions {
    fn default() -> Self {
        Self {
            sigma_cap: 10.0,
            mu_min: 1e-9,
            mu_max: 1e6,
            grid: GridOptions::default(),
            solver: SolverOptions::default(),
        }
    }
}

/// A complete event-trigger policy: threshold, multiplier, certified
/// inter-event bound, and the constants behind it.
#[derive(Debug, Clone)]
pub struct TriggerPolicy {
    pub kind: TriggerKind,
    /// Threshold slope of the trigger.
    pub sigma: f64,
    /// Multiplier certifying that threshold in the design LMI.
    pub mu: f64,
    /// Damping weight on the nonlinear block (library trigger only).
    pub eta: Option<f64>,
    /// Certified minimum inter-event time.
    pub tau: f64,
    pub constants: MietConstants,
    /// Region the constants were computed over.
    pub region: RegionBox,
}

/// Certified lower bound on the inter-event time for threshold slope
/// `sigma` and growth rate `c`.
pub fn miet(sigma: f64, c: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("threshold slope must be positive, got {sigma}")));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidArgument(format!("growth rate must be positive, got {c}")));
    }
    Ok(sigma / (c * (1.0 + sigma)))
}

/// Quadratic-form matrix of the state-normalized trigger condition, size
/// `(n + s) x (n + s)`.
pub fn build_m(ctrl: &Controller, data: &DataMatrices) -> DMatrix<f64> {
    let n = ctrl.state_dim();
    let s = ctrl.lib_dim();
    let sx1l = &ctrl.s_metric * (&data.x1 * &ctrl.l);
    let mut m = DMatrix::zeros(n + s, n + s);
    m.view_mut((0, 0), (n, n)).copy_from(&(-0.5 * &ctrl.theta));
    m.view_mut((0, n), (n, s)).copy_from(&sx1l);
    m.view_mut((n, 0), (s, n)).copy_from(&sx1l.transpose());
    m
}

/// Quadratic-form matrix of the library-normalized trigger condition, size
/// `2s x 2s`, with damping `eta` on the nonlinear block.
pub fn build_mbar(ctrl: &Controller, data: &DataMatrices, eta: f64) -> Result<DMatrix<f64>> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidArgument(format!("eta must be positive, got {eta}")));
    }
    let n = ctrl.state_dim();
    let s = ctrl.lib_dim();
    let q = s - n;
    let sx1l = &ctrl.s_metric * (&data.x1 * &ctrl.l);
    let mut m = DMatrix::zeros(2 * s, 2 * s);
    m.view_mut((0, 0), (n, n)).copy_from(&(-0.5 * &ctrl.theta));
    if q > 0 {
        let mut damp = m.view_mut((n, n), (q, q));
        damp.fill_diagonal(-eta);
    }
    m.view_mut((0, s), (n, s)).copy_from(&sx1l);
    m.view_mut((s, 0), (s, n)).copy_from(&sx1l.transpose());
    Ok(m)
}

fn check_trigger_preconditions(ctrl: &Controller, data: &DataMatrices) -> Result<()> {
    if data.state_dim() != ctrl.state_dim() || data.lib_dim() != ctrl.lib_dim() {
        return Err(Error::DimensionMismatch(
            "data dimensions do not match the controller".into(),
        ));
    }
    if linalg::min_eig(&ctrl.theta)? <= 0.0 {
        return Err(Error::InvalidArgument(
            "the controller's decay matrix is not positive definite".into(),
        ));
    }
    Ok(())
}

/// Shared LMI: maximize `q = sigma^2` subject to
/// `mu * M + diag(q * I_head, -I_tail) <= 0`, where `M` is split as
/// `[[m_head, m_cross], [m_cross', 0]]` with an extra damped middle block
/// already folded into `m_head`. Returns `(sigma, mu)`.
fn solve_threshold(
    m: &DMatrix<f64>,
    head: usize,
    opts: &TriggerOptions,
) -> Result<(f64, f64)> {
    let total = m.nrows();
    let tail = total - head;
    let m_head = m.view((0, 0), (head, head)).into_owned();
    let m_cross = m.view((0, head), (head, tail)).into_owned();

    let build = |q_fixed: Option<f64>| -> Result<(LmiProblem, VarId, Option<VarId>)> {
        let mut prob = LmiProblem::new();
        let mu = prob.scalar("mu");
        let mut c = BlockExpr::new("threshold", vec![head, tail]);
        c.add_scaled(0, 0, mu, m_head.clone(), &prob)?;
        c.add_scaled(0, 1, mu, m_cross.clone(), &prob)?;
        c.add_const(1, 1, &(-DMatrix::identity(tail, tail)))?;
        let q_var = match q_fixed {
            Some(qv) => {
                c.add_const(0, 0, &(DMatrix::identity(head, head) * qv))?;
                prob.add_psd_le_zero(c);
                None
            }
            None => {
                let q = prob.scalar("q");
                c.add_scaled(0, 0, q, DMatrix::identity(head, head), &prob)?;
                prob.add_psd_le_zero(c);
                prob.add_scalar_lower_bound(q, 0.0)?;
                prob.add_scalar_upper_bound(q, opts.sigma_cap * opts.sigma_cap)?;
                prob.maximize_scalar(q)?;
                Some(q)
            }
        };
        prob.add_scalar_lower_bound(mu, opts.mu_min)?;
        prob.add_scalar_upper_bound(mu, opts.mu_max)?;
        Ok((prob, mu, q_var))
    };

    // Feasibility in q is monotone (shrinking q relaxes the constraint), so if
    // the cap itself is feasible the capped maximum is exactly the cap. Probing
    // it first also keeps tiny caps away from the optimizer, whose optimum
    // would otherwise drown in solver tolerance.
    let cap_sq = opts.sigma_cap * opts.sigma_cap;
    let (prob_cap, mu_cap_var, _) = build(Some(cap_sq))?;
    let sol_cap = lmi::solve(&prob_cap, &opts.solver)?;
    if sol_cap.status.is_ok() {
        let mu_cap = sol_cap.assignment.as_ref().unwrap().scalar(mu_cap_var);
        return Ok((opts.sigma_cap, mu_cap));
    }

    let (prob, mu_var, q_var) = build(None)?;
    let sol = lmi::solve(&prob, &opts.solver)?;
    if !sol.status.is_ok() {
        return Err(Error::TriggerInfeasible {
            status: sol.status.to_string(),
            dump: prob.dump(),
        });
    }
    let assign = sol.assignment.as_ref().expect("ok status carries an assignment");
    let q_star = assign.scalar(q_var.expect("threshold slope is a variable here"));
    let mu_star = assign.scalar(mu_var);
    if q_star <= 1e-14 {
        return Err(Error::TriggerInfeasible {
            status: format!("degenerate threshold (sigma^2 = {q_star:.3e})"),
            dump: prob.dump(),
        });
    }
    Ok((q_star.sqrt(), mu_star))
}

/// Designs the state-normalized trigger `|e| >= sigma |x|` for a
/// controller, certifying the threshold and the inter-event bound over
/// `region`.
pub fn design_error_state(
    ctrl: &Controller,
    data: &DataMatrices,
    library: &FunctionLibrary,
    region: &RegionBox,
    opts: &TriggerOptions,
) -> Result<TriggerPolicy> {
    check_trigger_preconditions(ctrl, data)?;
    let n = ctrl.state_dim();
    let m = build_m(ctrl, data);
    let (sigma, mu) = solve_threshold(&m, n, opts)?;
    let constants = miet_constants(ctrl, data, library, region, &opts.grid)?;
    let tau = miet(sigma, constants.ell)?;
    Ok(TriggerPolicy {
        kind: TriggerKind::ErrorState,
        sigma,
        mu,
        eta: None,
        tau,
        constants,
        region: region.clone(),
    })
}

/// Designs the library-normalized trigger `|e| >= sigma |zeta(x)|`,
/// damping the nonlinear block by `eta`.
pub fn design_error_library(
    ctrl: &Controller,
    data: &DataMatrices,
    library: &FunctionLibrary,
    region: &RegionBox,
    eta: f64,
    opts: &TriggerOptions,
) -> Result<TriggerPolicy> {
    check_trigger_preconditions(ctrl, data)?;
    let s = ctrl.lib_dim();
    let m = build_mbar(ctrl, data, eta)?;
    let (sigma, mu) = solve_threshold(&m, s, opts)?;
    let constants = miet_constants(ctrl, data, library, region, &opts.grid)?;
    let tau = miet(sigma, constants.omega)?;
    Ok(TriggerPolicy {
        kind: TriggerKind::ErrorLibrary,
        sigma,
        mu,
        eta: Some(eta),
        tau,
        constants,
        region: region.clone(),
    })
}

/// Bounds the growth constants of the triggering error over a region, by a
/// grid plus random sampling sweep.
pub fn miet_constants(
    ctrl: &Controller,
    data: &DataMatrices,
    library: &FunctionLibrary,
    region: &RegionBox,
    grid: &GridOptions,
) -> Result<MietConstants> {
    let n = ctrl.state_dim();
    if library.state_dim() != n || library.dim() != ctrl.lib_dim() {
        return Err(Error::DimensionMismatch(
            "library does not match the controller dimensions".into(),
        ));
    }
    if region.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "region has dimension {}, expected {n}",
            region.dim()
        )));
    }
    if !(grid.inflation >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "grid inflation must be at least 1, got {}",
            grid.inflation
        )));
    }

    let sweep_region = match grid.per_axis {
        Some(r) => RegionBox::new(region.lower().to_vec(), region.upper().to_vec(), r)?,
        None => region.clone(),
    };

    let mut jac_max = 0.0f64;
    let mut ratio_max = 0.0f64;
    let mut failed = false;
    let mut visit = |x: &DVector<f64>| {
        let j = library.jacobian(x);
        let jn = linalg::spectral_norm(&j);
        if !jn.is_finite() {
            failed = true;
            return;
        }
        jac_max = jac_max.max(jn);
        let xn = x.norm();
        if xn > grid.origin_exclusion {
            let r = library.eval(x).norm() / xn;
            if !r.is_finite() {
                failed = true;
                return;
            }
            ratio_max = ratio_max.max(r);
        }
    };
    sweep_region.for_each_grid_point(&mut visit);
    let mut rng = ChaCha8Rng::seed_from_u64(grid.seed);
    for x in sweep_region.sample_uniform(&mut rng, grid.random) {
        visit(&x);
    }
    if failed {
        return Err(Error::NumericalFailure(
            "library values or gradients are not finite on the region".into(),
        ));
    }

    let ell1 = (jac_max * grid.inflation).max(1.0);
    let gain = linalg::spectral_norm(&(&data.x1 * &ctrl.g))
        .max(linalg::spectral_norm(&(&data.x1 * &ctrl.l)));
    if !(gain > 0.0) {
        return Err(Error::InvalidArgument(
            "closed-loop and input-channel gains are both zero".into(),
        ));
    }
    let ell2 = ell1 * gain;
    let ratio = (ratio_max * grid.inflation).max(1.0);
    let ell = ell2 * ratio;
    Ok(MietConstants { ell1, ell2, ell, omega: ell2 })
}
