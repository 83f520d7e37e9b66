//! Fixed-step fourth-order Runge-Kutta, shared by data collection and
//! closed-loop simulation.

use nalgebra::DVector;

/// Scratch buffers reused across steps to keep the hot loop allocation-free.
pub(crate) struct Rk4Workspace {
    k1: DVector<f64>,
    k2: DVector<f64>,
    k3: DVector<f64>,
    k4: DVector<f64>,
    xtmp: DVector<f64>,
}

impl Rk4Workspace {
    pub fn new(n: usize) -> Self {
        Self {
            k1: DVector::zeros(n),
            k2: DVector::zeros(n),
            k3: DVector::zeros(n),
            k4: DVector::zeros(n),
            xtmp: DVector::zeros(n),
        }
    }

    /// Advances `x` in place from `t` by `h` under `f(t, x, out)`.
    pub fn step(
        &mut self,
        mut f: impl FnMut(f64, &DVector<f64>, &mut DVector<f64>),
        t: f64,
        x: &mut DVector<f64>,
        h: f64,
    ) {
        f(t, x, &mut self.k1);

        self.xtmp.copy_from(x);
        self.xtmp.axpy(0.5 * h, &self.k1, 1.0);
        f(t + 0.5 * h, &self.xtmp, &mut self.k2);

        self.xtmp.copy_from(x);
        self.xtmp.axpy(0.5 * h, &self.k2, 1.0);
        f(t + 0.5 * h, &self.xtmp, &mut self.k3);

        self.xtmp.copy_from(x);
        self.xtmp.axpy(h, &self.k3, 1.0);
        f(t + h, &self.xtmp, &mut self.k4);

        x.axpy(h / 6.0, &self.k1, 1.0);
        x.axpy(h / 3.0, &self.k2, 1.0);
        x.axpy(h / 3.0, &self.k3, 1.0);
        x.axpy(h / 6.0, &self.k4, 1.0);
    }
}
