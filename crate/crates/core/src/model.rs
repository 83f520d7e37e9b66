//! System descriptions, function libraries, and experiment data containers.
//!
//! A function library is the vector of basis functions
//! `zeta(x) = (x, Q(x))` whose span contains the plant dynamics. The first
//! `n` entries are always the state itself; `Q` collects the nonlinear
//! terms. Every admissible term vanishes at the origin, so `zeta(0) = 0`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One basis term of the nonlinear part `Q` of a function library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QTerm {
    /// `x_1^{e_1} * ... * x_n^{e_n}` with total degree at least 2.
    Monomial { exponents: Vec<u32> },
    /// `sin(x_i)`.
    Sin { coordinate: usize },
    /// `cos(x_i) - 1`, shifted so the term vanishes at the origin.
    Cosm1 { coordinate: usize },
}

impl QTerm {
    fn validate(&self, n: usize) -> Result<()> {
        match self {
            QTerm::Monomial { exponents } => {
                if exponents.len() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "monomial exponent vector has length {}, state dimension is {n}",
                        exponents.len()
                    )));
                }
                let degree: u32 = exponents.iter().sum();
                if degree < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "monomial of total degree {degree} duplicates the state block; \
                         nonlinear terms must have degree >= 2"
                    )));
                }
                Ok(())
            }
            QTerm::Sin { coordinate } | QTerm::Cosm1 { coordinate } => {
                if *coordinate >= n {
                    return Err(Error::InvalidArgument(format!(
                        "term coordinate {coordinate} out of range for state dimension {n}"
                    )));
                }
                Ok(())
            }
        }
    }

    fn eval(&self, x: &DVector<f64>) -> f64 {
        match self {
            QTerm::Monomial { exponents } => exponents
                .iter()
                .enumerate()
                .map(|(i, &e)| x[i].powi(e as i32))
                .product(),
            QTerm::Sin { coordinate } => x[*coordinate].sin(),
            QTerm::Cosm1 { coordinate } => x[*coordinate].cos() - 1.0,
        }
    }

    fn grad_into(&self, x: &DVector<f64>, out: &mut [f64]) {
        out.fill(0.0);
        match self {
            QTerm::Monomial { exponents } => {
                for j in 0..x.len() {
                    let ej = exponents[j];
                    if ej == 0 {
                        continue;
                    }
                    let mut g = ej as f64 * x[j].powi(ej as i32 - 1);
                    for (k, &ek) in exponents.iter().enumerate() {
                        if k != j {
                            g *= x[k].powi(ek as i32);
                        }
                    }
                    out[j] = g;
                }
            }
            QTerm::Sin { coordinate } => out[*coordinate] = x[*coordinate].cos(),
            QTerm::Cosm1 { coordinate } => out[*coordinate] = -x[*coordinate].sin(),
        }
    }

    /// True when the term has zero gradient at the origin, i.e. it
    /// contributes nothing to the linearization of the dynamics.
    fn is_higher_order(&self) -> bool {
        match self {
            // degree >= 2 is enforced at construction
            QTerm::Monomial { .. } => true,
            QTerm::Sin { .. } => false,
            QTerm::Cosm1 { .. } => true,
        }
    }
}

/// The basis `zeta(x) = (x, Q(x))` used to express the dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionLibrary {
    n: usize,
    terms: Vec<QTerm>,
}

impl FunctionLibrary {
    /// Builds a library over an `n`-dimensional state. Rejects terms that do
    /// not vanish at the origin or that duplicate the linear block.
    pub fn new(n: usize, terms: Vec<QTerm>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("state dimension must be positive".into()));
        }
        for t in &terms {
            t.validate(n)?;
        }
        Ok(Self { n, terms })
    }

    /// Library with no nonlinear terms, `zeta(x) = x`.
    pub fn identity(n: usize) -> Self {
        Self { n, terms: Vec::new() }
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    /// Total number of basis functions, `s = n + (number of Q terms)`.
    pub fn dim(&self) -> usize {
        self.n + self.terms.len()
    }

    /// Number of nonlinear terms, `s - n`.
    pub fn q_dim(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[QTerm] {
        &self.terms
    }

    /// True when every nonlinear term has zero gradient at the origin, so the
    /// plant linearization is determined by the state block alone.
    pub fn q_is_higher_order(&self) -> bool {
        self.terms.iter().all(|t| t.is_higher_order())
    }

    /// Evaluates `zeta(x)` into `out` (length `s`).
    pub fn eval_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(out.len(), self.dim());
        for i in 0..self.n {
            out[i] = x[i];
        }
        for (k, t) in self.terms.iter().enumerate() {
            out[self.n + k] = t.eval(x);
        }
    }

    /// Evaluates `zeta(x)`.
    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.eval_into(x, &mut out);
        out
    }

    /// Evaluates the nonlinear part `Q(x)` (length `s - n`).
    pub fn eval_q(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.terms.len(), self.terms.iter().map(|t| t.eval(x)))
    }

    /// Jacobian of `zeta` at `x`, an `s x n` matrix whose top block is the
    /// identity.
    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let s = self.dim();
        let mut j = DMatrix::zeros(s, self.n);
        for i in 0..self.n {
            j[(i, i)] = 1.0;
        }
        let mut row = vec![0.0; self.n];
        for (k, t) in self.terms.iter().enumerate() {
            t.grad_into(x, &mut row);
            for c in 0..self.n {
                j[(self.n + k, c)] = row[c];
            }
        }
        j
    }

    /// Jacobian of the nonlinear part only, `(s - n) x n`.
    pub fn q_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.terms.len(), self.n);
        let mut row = vec![0.0; self.n];
        for (k, t) in self.terms.iter().enumerate() {
            t.grad_into(x, &mut row);
            for c in 0..self.n {
                j[(k, c)] = row[c];
            }
        }
        j
    }
}

/// Plant used to generate data and to simulate: `xdot = A zeta(x) + B u`.
///
/// The synthesis path never reads `a` or `b`; they exist so that tests and
/// examples can manufacture data from a known ground truth.
#[derive(Debug, Clone)]
pub struct GroundTruthSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub library: FunctionLibrary,
}

impl GroundTruthSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, library: FunctionLibrary) -> Result<Self> {
        let n = library.state_dim();
        let s = library.dim();
        if a.nrows() != n || a.ncols() != s {
            return Err(Error::DimensionMismatch(format!(
                "A is {}x{}, expected {}x{}",
                a.nrows(),
                a.ncols(),
                n,
                s
            )));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "B is {}x{}, expected {} rows and at least one input",
                b.nrows(),
                b.ncols(),
                n
            )));
        }
        Ok(Self { a, b, library })
    }

    pub fn state_dim(&self) -> usize {
        self.library.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn lib_dim(&self) -> usize {
        self.library.dim()
    }

    /// Right-hand side `A zeta(x) + B u`, written into `out`.
    pub fn rhs_into(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        zeta_buf: &mut DVector<f64>,
        out: &mut DVector<f64>,
    ) {
        self.library.eval_into(x, zeta_buf);
        out.gemv(1.0, &self.a, zeta_buf, 0.0);
        out.gemv(1.0, &self.b, u, 1.0);
    }

    pub fn rhs(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut zeta = DVector::zeros(self.lib_dim());
        let mut out = DVector::zeros(self.state_dim());
        self.rhs_into(x, u, &mut zeta, &mut out);
        out
    }
}

/// Sampled experiment data.
///
/// Columns are samples: `u0` is `m x T`, `x0` is `n x T`, `z0` is `s x T`
/// with `z0[:, j] = zeta(x0[:, j])`, and `x1` is `n x T` holding the state
/// derivative at each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrices {
    pub u0: DMatrix<f64>,
    pub x0: DMatrix<f64>,
    pub z0: DMatrix<f64>,
    pub x1: DMatrix<f64>,
}

impl DataMatrices {
    pub fn new(
        u0: DMatrix<f64>,
        x0: DMatrix<f64>,
        z0: DMatrix<f64>,
        x1: DMatrix<f64>,
    ) -> Result<Self> {
        let t = u0.ncols();
        if x0.ncols() != t || z0.ncols() != t || x1.ncols() != t {
            return Err(Error::DimensionMismatch(format!(
                "sample counts disagree: u0 has {t}, x0 has {}, z0 has {}, x1 has {}",
                x0.ncols(),
                z0.ncols(),
                x1.ncols()
            )));
        }
        let n = x0.nrows();
        if x1.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "x1 has {} rows, x0 has {n}",
                x1.nrows()
            )));
        }
        if z0.nrows() < n {
            return Err(Error::DimensionMismatch(format!(
                "z0 has {} rows, fewer than the state dimension {n}",
                z0.nrows()
            )));
        }
        Ok(Self { u0, x0, z0, x1 })
    }

    pub fn num_samples(&self) -> usize {
        self.u0.ncols()
    }

    pub fn state_dim(&self) -> usize {
        self.x0.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.u0.nrows()
    }

    pub fn lib_dim(&self) -> usize {
        self.z0.nrows()
    }

    /// Checks that `z0` is consistent with the library applied to `x0`.
    pub fn validate_against(&self, library: &FunctionLibrary) -> Result<()> {
        if library.state_dim() != self.state_dim() || library.dim() != self.lib_dim() {
            return Err(Error::DimensionMismatch(format!(
                "library is {}->{}, data are {}->{}",
                library.state_dim(),
                library.dim(),
                self.state_dim(),
                self.lib_dim()
            )));
        }
        let mut zeta = DVector::zeros(library.dim());
        for j in 0..self.num_samples() {
            let x = self.x0.column(j).into_owned();
            library.eval_into(&x, &mut zeta);
            for i in 0..library.dim() {
                let d = (zeta[i] - self.z0[(i, j)]).abs();
                if d > 1e-9 * (1.0 + zeta[i].abs()) {
                    return Err(Error::InvalidArgument(format!(
                        "z0 column {j} row {i} differs from zeta(x0 column {j}) by {d:.3e}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Vertical stack `[u0; z0]`, the matrix whose row rank decides data
    /// richness.
    pub fn stacked_uz(&self) -> DMatrix<f64> {
        let m = self.input_dim();
        let s = self.lib_dim();
        let t = self.num_samples();
        let mut st = DMatrix::zeros(m + s, t);
        st.rows_mut(0, m).copy_from(&self.u0);
        st.rows_mut(m, s).copy_from(&self.z0);
        st
    }

    /// Concatenates the samples of several experiments column-wise.
    pub fn concat(parts: &[DataMatrices]) -> Result<DataMatrices> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("no experiments to concatenate".into()))?;
        let (m, n, s) = (first.input_dim(), first.state_dim(), first.lib_dim());
        let t: usize = parts.iter().map(|p| p.num_samples()).sum();
        let mut u0 = DMatrix::zeros(m, t);
        let mut x0 = DMatrix::zeros(n, t);
        let mut z0 = DMatrix::zeros(s, t);
        let mut x1 = DMatrix::zeros(n, t);
        let mut col = 0;
        for p in parts {
            if p.input_dim() != m || p.state_dim() != n || p.lib_dim() != s {
                return Err(Error::DimensionMismatch(
                    "experiments have inconsistent dimensions".into(),
                ));
            }
            let w = p.num_samples();
            u0.columns_mut(col, w).copy_from(&p.u0);
            x0.columns_mut(col, w).copy_from(&p.x0);
            z0.columns_mut(col, w).copy_from(&p.z0);
            x1.columns_mut(col, w).copy_from(&p.x1);
            col += w;
        }
        Ok(DataMatrices { u0, x0, z0, x1 })
    }
}

/// Axis-aligned box containing the origin in its interior, with a per-axis
/// grid resolution used by verification sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
    #[serde(default = "default_resolution")]
    resolution: usize,
}

fn default_resolution() -> usize {
    201
}

impl RegionBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, resolution: usize) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "box bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if resolution < 2 {
            return Err(Error::InvalidArgument(
                "grid resolution must be at least 2 points per axis".into(),
            ));
        }
        for i in 0..lower.len() {
            if !(lower[i] < 0.0 && 0.0 < upper[i]) {
                return Err(Error::InvalidArgument(format!(
                    "box must contain the origin in its interior; axis {i} is [{}, {}]",
                    lower[i], upper[i]
                )));
            }
        }
        Ok(Self { lower, upper, resolution })
    }

    /// Symmetric box `[-half, half]^n`.
    pub fn symmetric(n: usize, half_width: f64, resolution: usize) -> Result<Self> {
        if !(half_width > 0.0) {
            return Err(Error::InvalidArgument("half width must be positive".into()));
        }
        Self::new(vec![-half_width; n], vec![half_width; n], resolution)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim()
            && (0..x.len()).all(|i| self.lower[i] <= x[i] && x[i] <= self.upper[i])
    }

    /// Calls `f` on every point of the tensor grid with `resolution` points
    /// per axis (endpoints included).
    pub fn for_each_grid_point(&self, mut f: impl FnMut(&DVector<f64>)) {
        let n = self.dim();
        let r = self.resolution;
        let mut x = DVector::zeros(n);
        let mut idx = vec![0usize; n];
        let total = r.pow(n as u32);
        for _ in 0..total {
            for i in 0..n {
                let t = idx[i] as f64 / (r - 1) as f64;
                x[i] = self.lower[i] + t * (self.upper[i] - self.lower[i]);
            }
            f(&x);
            for i in (0..n).rev() {
                idx[i] += 1;
                if idx[i] < r {
                    break;
                }
                idx[i] = 0;
            }
        }
    }

    pub fn grid_points(&self) -> Vec<DVector<f64>> {
        let mut pts = Vec::with_capacity(self.resolution.pow(self.dim() as u32));
        self.for_each_grid_point(|x| pts.push(x.clone()));
        pts
    }

    /// Draws `count` points uniformly from the box.
    pub fn sample_uniform<R: Rng>(&self, rng: &mut R, count: usize) -> Vec<DVector<f64>> {
        let n = self.dim();
        (0..count)
            .map(|_| {
                DVector::from_fn(n, |i, _| rng.gen_range(self.lower[i]..=self.upper[i]))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn poly_library() -> FunctionLibrary {
        // terms x1^2, x1^2 x2, x1 x2^2, x2^3 over a 2-state plant
        FunctionLibrary::new(
            2,
            vec![
                QTerm::Monomial { exponents: vec![2, 0] },
                QTerm::Monomial { exponents: vec![2, 1] },
                QTerm::Monomial { exponents: vec![1, 2] },
                QTerm::Monomial { exponents: vec![0, 3] },
            ],
        )
        .unwrap()
    }

    fn pendulum_library() -> FunctionLibrary {
        FunctionLibrary::new(2, vec![QTerm::Sin { coordinate: 0 }]).unwrap()
    }

    #[test]
    fn library_vanishes_at_origin() {
        for lib in [poly_library(), pendulum_library(), FunctionLibrary::identity(3)] {
            let z = lib.eval(&DVector::zeros(lib.state_dim()));
            assert_eq!(z.norm(), 0.0);
        }
    }

    #[test]
    fn poly_library_frozen_values() {
        let lib = poly_library();
        let x = DVector::from_vec(vec![0.5, -2.0]);
        let z = lib.eval(&x);
        // hand-computed: (0.5, -2, 0.25, -0.5, 2.0, -8.0)
        let expected = [0.5, -2.0, 0.25, -0.5, 2.0, -8.0];
        for (i, e) in expected.iter().enumerate() {
            assert_relative_eq!(z[i], *e, max_relative = 1e-15);
        }
        let j = lib.jacobian(&x);
        // rows: d/dx of x1, x2, x1^2, x1^2 x2, x1 x2^2, x2^3
        let expected_j = [
            [1.0, 0.0],
            [0.0, 1.0],
            [1.0, 0.0],
            [-2.0, 0.25],
            [4.0, -2.0],
            [0.0, 12.0],
        ];
        for r in 0..6 {
            for c in 0..2 {
                assert_relative_eq!(j[(r, c)], expected_j[r][c], max_relative = 1e-15);
            }
        }
    }

    #[test]
    fn pendulum_library_frozen_values() {
        let lib = pendulum_library();
        let x = DVector::from_vec(vec![1.2, 0.3]);
        let z = lib.eval(&x);
        assert_relative_eq!(z[2], 1.2f64.sin(), max_relative = 1e-15);
        let j = lib.jacobian(&x);
        assert_relative_eq!(j[(2, 0)], 1.2f64.cos(), max_relative = 1e-15);
        assert_eq!(j[(2, 1)], 0.0);
        assert!(!lib.q_is_higher_order());
        assert!(poly_library().q_is_higher_order());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let libs = vec![
            poly_library(),
            pendulum_library(),
            FunctionLibrary::new(
                3,
                vec![
                    QTerm::Monomial { exponents: vec![1, 1, 0] },
                    QTerm::Monomial { exponents: vec![0, 2, 1] },
                    QTerm::Cosm1 { coordinate: 2 },
                    QTerm::Sin { coordinate: 1 },
                ],
            )
            .unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for lib in libs {
            let n = lib.state_dim();
            for _ in 0..100 {
                let x = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
                let j = lib.jacobian(&x);
                let h = 1e-6;
                for c in 0..n {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[c] += h;
                    xm[c] -= h;
                    let fd = (lib.eval(&xp) - lib.eval(&xm)) / (2.0 * h);
                    for r in 0..lib.dim() {
                        let scale = 1.0 + j[(r, c)].abs();
                        assert!(
                            (fd[r] - j[(r, c)]).abs() <= 1e-5 * scale,
                            "row {r} col {c}: fd {} vs analytic {}",
                            fd[r],
                            j[(r, c)]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn q_ratio_shrinks_along_rays_for_higher_order_terms() {
        // for degree >= 2 terms, |Q(lam x)| / |lam x| -> 0 as lam -> 0
        let lib = poly_library();
        let x = DVector::from_vec(vec![0.7, -0.4]);
        let mut prev = f64::INFINITY;
        for k in 0..10 {
            let lam = 0.5f64.powi(k);
            let xs = &x * lam;
            let ratio = lib.eval_q(&xs).norm() / xs.norm();
            assert!(ratio < prev);
            prev = ratio;
        }
        assert!(prev < 1e-2);
    }

    #[test]
    fn construction_rejects_degenerate_terms() {
        // degree-1 monomial duplicates the state block
        assert!(FunctionLibrary::new(2, vec![QTerm::Monomial { exponents: vec![1, 0] }]).is_err());
        // degree-0 monomial does not vanish at the origin
        assert!(FunctionLibrary::new(2, vec![QTerm::Monomial { exponents: vec![0, 0] }]).is_err());
        // coordinate out of range
        assert!(FunctionLibrary::new(2, vec![QTerm::Sin { coordinate: 2 }]).is_err());
        // wrong exponent arity
        assert!(FunctionLibrary::new(2, vec![QTerm::Monomial { exponents: vec![2] }]).is_err());
    }

    #[test]
    fn ground_truth_rhs_poly() {
        // x1dot = -x1 + x1^2 x2, x2dot = u
        let lib = poly_library();
        let a = DMatrix::from_row_slice(
            2,
            6,
            &[
                -1.0, 0.0, 0.0, 1.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
            ],
        );
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let sys = GroundTruthSystem::new(a, b, lib).unwrap();
        let x = DVector::from_vec(vec![0.5, -2.0]);
        let u = DVector::from_vec(vec![3.0]);
        let dx = sys.rhs(&x, &u);
        assert_relative_eq!(dx[0], -0.5 + 0.25 * -2.0, max_relative = 1e-15);
        assert_relative_eq!(dx[1], 3.0, max_relative = 1e-15);
    }

    #[test]
    fn region_box_grid_and_containment() {
        let bx = RegionBox::new(vec![-1.0, -2.0], vec![1.0, 2.0], 3).unwrap();
        let pts = bx.grid_points();
        assert_eq!(pts.len(), 9);
        assert!(pts.iter().any(|p| p[0] == 0.0 && p[1] == 0.0));
        assert!(bx.contains(&DVector::from_vec(vec![1.0, -2.0])));
        assert!(!bx.contains(&DVector::from_vec(vec![1.1, 0.0])));
        assert!(RegionBox::new(vec![0.1, -1.0], vec![1.0, 1.0], 3).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for p in bx.sample_uniform(&mut rng, 50) {
            assert!(bx.contains(&p));
        }
    }

    #[test]
    fn data_matrices_validation() {
        let lib = pendulum_library();
        let x0 = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.3, 0.4]);
        let mut z0 = DMatrix::zeros(3, 2);
        for j in 0..2 {
            let z = lib.eval(&x0.column(j).into_owned());
            z0.column_mut(j).copy_from(&z);
        }
        let u0 = DMatrix::zeros(1, 2);
        let x1 = DMatrix::zeros(2, 2);
        let d = DataMatrices::new(u0, x0, z0, x1).unwrap();
        d.validate_against(&lib).unwrap();
        assert_eq!(d.stacked_uz().nrows(), 4);

        let mut bad = d.clone();
        bad.z0[(2, 0)] += 1.0;
        assert!(bad.validate_against(&lib).is_err());
    }

    #[test]
    fn concat_stacks_columns() {
        let lib = FunctionLibrary::identity(1);
        let mk = |v: f64| {
            DataMatrices::new(
                DMatrix::from_element(1, 2, v),
                DMatrix::from_element(1, 2, v),
                DMatrix::from_element(1, 2, v),
                DMatrix::from_element(1, 2, v),
            )
            .unwrap()
        };
        let d = DataMatrices::concat(&[mk(1.0), mk(2.0)]).unwrap();
        assert_eq!(d.num_samples(), 4);
        assert_eq!(d.u0[(0, 0)], 1.0);
        assert_eq!(d.u0[(0, 2)], 2.0);
        d.validate_against(&lib).unwrap();
    }
}
