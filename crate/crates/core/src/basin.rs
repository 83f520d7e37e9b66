//! Basin-of-attraction estimation.
//!
//! The synthesized metric gives ellipsoidal sublevel sets `x' S x <= gamma`.
//! Any such set contained in a region where the closed-loop decrease
//! condition holds is invariant and belongs to the basin of attraction.
//! This module builds those regions as predicates and searches for the
//! largest contained sublevel set by bisection with boundary sampling.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{DataMatrices, FunctionLibrary, RegionBox};
use crate::synthesis::Controller;

/// Membership test for the regions entering basin estimates.
///
/// The decrease-type sets are defined by strict inequalities and exclude
/// the origin; sublevel searches test against the set with the origin
/// adjoined, which is how the stability argument uses them.
#[derive(Debug, Clone)]
pub enum SetPredicate {
    /// `-1/2 x'Th x + 2 x'Ph Q(x) < 0`: where the decrease rate survives
    /// the higher-order remainder under the state-normalized trigger.
    StateTriggerDecrease {
        theta: DMatrix<f64>,
        phi: DMatrix<f64>,
        library: FunctionLibrary,
    },
    /// Same with the damping term `eta Q(x)'Q(x)` of the
    /// library-normalized trigger added.
    LibraryTriggerDecrease {
        theta: DMatrix<f64>,
        phi: DMatrix<f64>,
        eta: f64,
        library: FunctionLibrary,
    },
    /// `2 x'S (X1 G) zeta(x) <= -x'Th x`: where the continuous closed loop
    /// decays at the full design rate, leaving margin for sampling.
    ContinuousDecrease {
        s_metric: DMatrix<f64>,
        theta: DMatrix<f64>,
        x1g: DMatrix<f64>,
        library: FunctionLibrary,
    },
    /// Axis-aligned box, typically the remainder-bound design region.
    InsideBox { region: RegionBox },
    /// `x'Q x <= level`, mainly for composing checks and fixtures.
    QuadSublevel { q: DMatrix<f64>, level: f64 },
    /// All of the parts at once.
    Intersection(Vec<SetPredicate>),
}

impl SetPredicate {
    pub fn state_trigger_decrease(ctrl: &Controller, library: &FunctionLibrary) -> Result<Self> {
        check_ctrl_library(ctrl, library)?;
        Ok(SetPredicate::StateTriggerDecrease {
            theta: ctrl.theta.clone(),
            phi: ctrl.phi.clone(),
            library: library.clone(),
        })
    }

    pub fn library_trigger_decrease(
        ctrl: &Controller,
        library: &FunctionLibrary,
        eta: f64,
    ) -> Result<Self> {
        check_ctrl_library(ctrl, library)?;
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidArgument(format!("eta must be positive, got {eta}")));
        }
        Ok(SetPredicate::LibraryTriggerDecrease {
            theta: ctrl.theta.clone(),
            phi: ctrl.phi.clone(),
            eta,
            library: library.clone(),
        })
    }

    pub fn continuous_decrease(
        ctrl: &Controller,
        data: &DataMatrices,
        library: &FunctionLibrary,
    ) -> Result<Self> {
        check_ctrl_library(ctrl, library)?;
        if data.state_dim() != ctrl.state_dim() || data.lib_dim() != ctrl.lib_dim() {
            return Err(Error::DimensionMismatch(
                "data dimensions do not match the controller".into(),
            ));
        }
        Ok(SetPredicate::ContinuousDecrease {
            s_metric: ctrl.s_metric.clone(),
            theta: ctrl.theta.clone(),
            x1g: &data.x1 * &ctrl.g,
            library: library.clone(),
        })
    }

    pub fn inside_box(region: RegionBox) -> Self {
        SetPredicate::InsideBox { region }
    }

    pub fn quad_sublevel(q: DMatrix<f64>, level: f64) -> Result<Self> {
        if q.nrows() != q.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "sublevel matrix is {}x{}",
                q.nrows(),
                q.ncols()
            )));
        }
        if !(level >= 0.0) {
            return Err(Error::InvalidArgument(format!("level must be nonnegative, got {level}")));
        }
        Ok(SetPredicate::QuadSublevel { q, level })
    }

    pub fn intersection(parts: Vec<SetPredicate>) -> Self {
        SetPredicate::Intersection(parts)
    }

    /// Evaluates the defining inequality at `x`. Strict-inequality sets
    /// answer false at the origin.
    pub fn membership(&self, x: &DVector<f64>) -> bool {
        match self {
            SetPredicate::StateTriggerDecrease { theta, phi, library } => {
                let q = library.eval_q(x);
                let g = -0.5 * (theta * x).dot(x) + 2.0 * (phi * &q).dot(x);
                g < 0.0
            }
            SetPredicate::LibraryTriggerDecrease { theta, phi, eta, library } => {
                let q = library.eval_q(x);
                let g =
                    -0.5 * (theta * x).dot(x) + eta * q.dot(&q) + 2.0 * (phi * &q).dot(x);
                g < 0.0
            }
            SetPredicate::ContinuousDecrease { s_metric, theta, x1g, library } => {
                let zeta = library.eval(x);
                2.0 * (s_metric * (x1g * &zeta)).dot(x) + (theta * x).dot(x) <= 0.0
            }
            SetPredicate::InsideBox { region } => region.contains(x),
            SetPredicate::QuadSublevel { q, level } => (q * x).dot(x) <= *level,
            SetPredicate::Intersection(parts) => parts.iter().all(|p| p.membership(x)),
        }
    }

    /// Membership with the origin adjoined, the form used for sublevel
    /// containment.
    pub fn membership_with_origin(&self, x: &DVector<f64>) -> bool {
        x.norm() == 0.0 || self.membership(x)
    }
}

fn check_ctrl_library(ctrl: &Controller, library: &FunctionLibrary) -> Result<()> {
    if library.state_dim() != ctrl.state_dim() || library.dim() != ctrl.lib_dim() {
        return Err(Error::DimensionMismatch(
            "library does not match the controller dimensions".into(),
        ));
    }
    if ctrl.phi.ncols() != library.q_dim() {
        return Err(Error::DimensionMismatch(format!(
            "remainder weight has {} columns, library has {} nonlinear terms",
            ctrl.phi.ncols(),
            library.q_dim()
        )));
    }
    Ok(())
}

/// Settings of the sublevel search.
#[derive(Debug, Clone)]
pub struct SublevelOptions {
    /// Upper end of the bisection interval.
    pub gamma_hi: f64,
    /// Bisection resolution; 0 picks `1e-4 * gamma_hi`.
    pub tol: f64,
    /// Boundary directions per tested level; 0 picks 720 in the plane and
    /// 10_000 at random in higher dimension.
    pub boundary_samples: usize,
    pub seed: u64,
}

impl SublevelOptions {
    pub fn new(gamma_hi: f64) -> Self {
        Self { gamma_hi, tol: 0.0, boundary_samples: 0, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct SublevelResult {
    /// Largest level accepted by the sampling check.
    pub gamma: f64,
    /// Membership evaluations spent.
    pub evaluations: usize,
}

fn unit_directions(n: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    if n == 2 {
        return (0..count)
            .map(|k| {
                let th = 2.0 * std::f64::consts::PI * (k as f64) / (count as f64);
                DVector::from_vec(vec![th.cos(), th.sin()])
            })
            .collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dirs = Vec::with_capacity(count);
    while dirs.len() < count {
        // gaussian components via Box-Muller give rotation-invariant
        // directions after normalization
        let mut d = DVector::zeros(n);
        let mut i = 0;
        while i < n {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen();
            let r = (-2.0 * u1.ln()).sqrt();
            d[i] = r * (2.0 * std::f64::consts::PI * u2).cos();
            if i + 1 < n {
                d[i + 1] = r * (2.0 * std::f64::consts::PI * u2).sin();
            }
            i += 2;
        }
        let norm = d.norm();
        if norm > 1e-9 {
            dirs.push(d / norm);
        }
    }
    dirs
}

/// Finds the largest `gamma` in `(0, gamma_hi]` such that the sublevel set
/// `{x' S x <= gamma}` passes the membership check of `pred` (with the
/// origin adjoined) on sampled boundary points and interior shells at half
/// and nine tenths of the level.
pub fn largest_sublevel(
    s: &DMatrix<f64>,
    pred: &SetPredicate,
    opts: &SublevelOptions,
) -> Result<SublevelResult> {
    if !(opts.gamma_hi > 0.0 && opts.gamma_hi.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "search cap must be positive, got {}",
            opts.gamma_hi
        )));
    }
    let n = s.nrows();
    let s_inv_sqrt = linalg::pd_inv_sqrt(s)?;
    let tol = if opts.tol > 0.0 { opts.tol } else { 1e-4 * opts.gamma_hi };
    let count = if opts.boundary_samples > 0 {
        opts.boundary_samples
    } else if n == 2 {
        720
    } else {
        10_000
    };
    let dirs: Vec<DVector<f64>> =
        unit_directions(n, count, opts.seed).into_iter().map(|d| &s_inv_sqrt * d).collect();

    let mut evaluations = 0usize;
    let mut feasible = |gamma: f64| -> bool {
        for level in [gamma, 0.9 * gamma, 0.5 * gamma] {
            let scale = level.sqrt();
            for d in &dirs {
                evaluations += 1;
                if !pred.membership_with_origin(&(d * scale)) {
                    return false;
                }
            }
        }
        true
    };

    let mut lo = 0.0f64;
    let mut hi = opts.gamma_hi;
    if feasible(hi) {
        return Ok(SublevelResult { gamma: hi, evaluations });
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo < tol {
        return Err(Error::DegenerateRegion { tol });
    }
    Ok(SublevelResult { gamma: lo, evaluations })
}

/// Largest `gamma` whose sublevel ellipsoid of `S` fits inside the box,
/// the default search cap.
pub fn gamma_inside_box(s: &DMatrix<f64>, region: &RegionBox) -> Result<f64> {
    let n = s.nrows();
    if region.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "region has dimension {}, metric has {n}",
            region.dim()
        )));
    }
    let s_inv = linalg::pd_inverse(s)?;
    let mut gamma = f64::INFINITY;
    for i in 0..n {
        let bound = (-region.lower()[i]).min(region.upper()[i]);
        if !(bound > 0.0) {
            return Err(Error::InvalidArgument(
                "the origin is not interior to the region".into(),
            ));
        }
        // extent of the ellipsoid along axis i is sqrt(gamma * (S^-1)_ii)
        gamma = gamma.min(bound * bound / s_inv[(i, i)]);
    }
    Ok(gamma)
}

/// Outcome of a grid inclusion check.
#[derive(Debug, Clone)]
pub struct InclusionReport {
    pub holds: bool,
    /// First grid point inside `inner` but outside `outer`, when any.
    pub counterexample: Option<DVector<f64>>,
}

/// Grid-verifies `inner` as a subset of `outer` (with the origin adjoined
/// to the outer set) over the region.
pub fn set_inclusion_check(
    inner: &SetPredicate,
    outer: &SetPredicate,
    region: &RegionBox,
) -> InclusionReport {
    let mut counterexample = None;
    region.for_each_grid_point(|x| {
        if counterexample.is_none()
            && inner.membership_with_origin(x)
            && !outer.membership_with_origin(x)
        {
            counterexample = Some(x.clone());
        }
    });
    InclusionReport { holds: counterexample.is_none(), counterexample }
}

/// Closed polyline of the sublevel boundary `x' S x = gamma` in the plane.
pub fn ellipse_polyline(
    s: &DMatrix<f64>,
    gamma: f64,
    points: usize,
) -> Result<Vec<(f64, f64)>> {
    if s.nrows() != 2 {
        return Err(Error::InvalidArgument("boundary polylines need a planar metric".into()));
    }
    if !(gamma >= 0.0) || points < 3 {
        return Err(Error::InvalidArgument(
            "polyline needs a nonnegative level and at least 3 points".into(),
        ));
    }
    let s_inv_sqrt = linalg::pd_inv_sqrt(s)?;
    let scale = gamma.sqrt();
    let mut out = Vec::with_capacity(points + 1);
    for k in 0..=points {
        let th = 2.0 * std::f64::consts::PI * (k as f64) / (points as f64);
        let d = DVector::from_vec(vec![th.cos(), th.sin()]);
        let x = &s_inv_sqrt * d * scale;
        out.push((x[0], x[1]));
    }
    Ok(out)
}

/// Boundary of a star-shaped planar set by radial marching: for each
/// angle, the last radius before membership fails, capped at the box edge.
pub fn radial_boundary_polyline(
    pred: &SetPredicate,
    region: &RegionBox,
    angular: usize,
    radial_steps: usize,
) -> Result<Vec<(f64, f64)>> {
    if region.dim() != 2 {
        return Err(Error::InvalidArgument("boundary polylines need a planar region".into()));
    }
    if angular < 3 || radial_steps < 2 {
        return Err(Error::InvalidArgument(
            "polyline needs at least 3 angles and 2 radial steps".into(),
        ));
    }
    let mut out = Vec::with_capacity(angular + 1);
    for k in 0..=angular {
        let th = 2.0 * std::f64::consts::PI * (k as f64) / (angular as f64);
        let d = [th.cos(), th.sin()];
        let mut r_max = f64::INFINITY;
        for i in 0..2 {
            if d[i] > 1e-12 {
                r_max = r_max.min(region.upper()[i] / d[i]);
            } else if d[i] < -1e-12 {
                r_max = r_max.min(region.lower()[i] / d[i]);
            }
        }
        let dr = r_max / radial_steps as f64;
        let mut r_keep = 0.0;
        for j in 1..=radial_steps {
            let r = dr * j as f64;
            let x = DVector::from_vec(vec![r * d[0], r * d[1]]);
            if pred.membership(&x) {
                r_keep = r;
            } else {
                break;
            }
        }
        out.push((r_keep * d[0], r_keep * d[1]));
    }
    Ok(out)
}
