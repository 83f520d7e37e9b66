//! Open-loop experiments: excitation signals, data collection, and the
//! richness check on the collected samples.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::Rk4Workspace;
use crate::model::{DataMatrices, GroundTruthSystem};

/// Piecewise-linear input signal defined by breakpoints and values.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSignal {
    breakpoints: Vec<f64>,
    values: Vec<DVector<f64>>,
}

impl InputSignal {
    pub fn new(breakpoints: Vec<f64>, values: Vec<DVector<f64>>) -> Result<Self> {
        if breakpoints.is_empty() || breakpoints.len() != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} breakpoints but {} values",
                breakpoints.len(),
                values.len()
            )));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        let m = values[0].len();
        if values.iter().any(|v| v.len() != m) {
            return Err(Error::DimensionMismatch(
                "input values have inconsistent dimensions".into(),
            ));
        }
        Ok(Self { breakpoints, values })
    }

    pub fn input_dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    /// Evaluates the signal at `t`, clamping outside the breakpoint span.
    pub fn eval(&self, t: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.input_dim());
        self.eval_into(t, &mut out);
        out
    }

    pub fn eval_into(&self, t: f64, out: &mut DVector<f64>) {
        let bp = &self.breakpoints;
        if t <= bp[0] {
            out.copy_from(&self.values[0]);
            return;
        }
        if t >= bp[bp.len() - 1] {
            out.copy_from(&self.values[bp.len() - 1]);
            return;
        }
        let i = bp.partition_point(|&b| b <= t) - 1;
        let w = (t - bp[i]) / (bp[i + 1] - bp[i]);
        out.copy_from(&self.values[i]);
        *out *= 1.0 - w;
        out.axpy(w, &self.values[i + 1], 1.0);
    }
}

/// Configuration of one batch of open-loop experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Length of each experiment in time units.
    pub duration: f64,
    /// Spacing of both the input breakpoints and the recorded samples.
    pub sample_period: f64,
    /// Per-channel input range `[lo, hi]`; inputs are drawn uniformly.
    pub input_range: Vec<[f64; 2]>,
    /// Per-axis initial-condition range `[lo, hi]`.
    pub x0_range: Vec<[f64; 2]>,
    /// Seed for the excitation and initial-condition draws.
    pub rng_seed: u64,
    /// Integration step; defaults to `sample_period / 100`.
    #[serde(default)]
    pub integrator_step: Option<f64>,
    /// Trajectories whose norm exceeds this abort the experiment.
    #[serde(default = "default_blowup")]
    pub blowup_norm: f64,
    /// Number of independent experiments to concatenate.
    #[serde(default = "default_num_experiments")]
    pub num_experiments: usize,
}

fn default_blowup() -> f64 {
    1e6
}

fn default_num_experiments() -> usize {
    1
}

impl ExperimentConfig {
    pub fn input_dim(&self) -> usize {
        self.input_range.len()
    }

    pub fn state_dim(&self) -> usize {
        self.x0_range.len()
    }

    pub fn effective_step(&self) -> f64 {
        self.integrator_step.unwrap_or(self.sample_period / 100.0)
    }

    /// Number of samples recorded per experiment.
    pub fn samples_per_experiment(&self) -> usize {
        (self.duration / self.sample_period).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::InvalidArgument("duration must be positive".into()));
        }
        if !(self.sample_period > 0.0 && self.sample_period <= self.duration) {
            return Err(Error::InvalidArgument(
                "sample period must be positive and no longer than the duration".into(),
            ));
        }
        let h = self.effective_step();
        if !(h > 0.0 && h <= self.sample_period / 10.0) {
            return Err(Error::InvalidArgument(format!(
                "integrator step {h} must be positive and at most a tenth of the sample period"
            )));
        }
        if self.input_range.is_empty() || self.x0_range.is_empty() {
            return Err(Error::InvalidArgument(
                "input and initial-condition ranges must be nonempty".into(),
            ));
        }
        for (name, ranges) in [("input", &self.input_range), ("x0", &self.x0_range)] {
            for (i, r) in ranges.iter().enumerate() {
                if !(r[0] <= r[1]) || !r[0].is_finite() || !r[1].is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "{name} range {i} is empty or not finite: [{}, {}]",
                        r[0], r[1]
                    )));
                }
            }
        }
        if !(self.blowup_norm > 0.0) {
            return Err(Error::InvalidArgument("blow-up bound must be positive".into()));
        }
        if self.num_experiments == 0 {
            return Err(Error::InvalidArgument("need at least one experiment".into()));
        }
        Ok(())
    }
}

/// One RNG stream per (experiment, role) pair so that the excitation of
/// experiment `k` does not depend on how many draws earlier experiments made.
fn stream_rng(seed: u64, experiment: usize, role: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * experiment as u64 + role);
    rng
}

fn draw_uniform<R: Rng>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.gen_range(range[0]..=range[1])
    }
}

fn input_for_experiment(cfg: &ExperimentConfig, experiment: usize) -> InputSignal {
    let mut rng = stream_rng(cfg.rng_seed, experiment, 0);
    let count = (cfg.duration / cfg.sample_period).floor() as usize + 1;
    let m = cfg.input_dim();
    let mut breakpoints = Vec::with_capacity(count);
    let mut values = Vec::with_capacity(count);
    for j in 0..count {
        breakpoints.push(j as f64 * cfg.sample_period);
        values.push(DVector::from_fn(m, |i, _| draw_uniform(&mut rng, cfg.input_range[i])));
    }
    InputSignal::new(breakpoints, values).expect("breakpoints are increasing by construction")
}

/// Generates the excitation signal of the first experiment. The same signal
/// is used internally by [`collect_data`], so a fixed seed reproduces the
/// experiment exactly.
pub fn generate_input(cfg: &ExperimentConfig) -> Result<InputSignal> {
    cfg.validate()?;
    Ok(input_for_experiment(cfg, 0))
}

/// Runs the configured experiments on the plant and collects the data
/// matrices. Derivatives are evaluated analytically from the plant at each
/// sample instant.
pub fn collect_data(sys: &GroundTruthSystem, cfg: &ExperimentConfig) -> Result<DataMatrices> {
    cfg.validate()?;
    let n = sys.state_dim();
    let m = sys.input_dim();
    if cfg.state_dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "x0 range has dimension {}, plant state has {n}",
            cfg.state_dim()
        )));
    }
    if cfg.input_dim() != m {
        return Err(Error::DimensionMismatch(format!(
            "input range has dimension {}, plant input has {m}",
            cfg.input_dim()
        )));
    }
    let parts: Vec<DataMatrices> = (0..cfg.num_experiments)
        .map(|k| run_single_experiment(sys, cfg, k))
        .collect::<Result<_>>()?;
    DataMatrices::concat(&parts)
}

fn run_single_experiment(
    sys: &GroundTruthSystem,
    cfg: &ExperimentConfig,
    experiment: usize,
) -> Result<DataMatrices> {
    let n = sys.state_dim();
    let m = sys.input_dim();
    let s = sys.lib_dim();
    let samples = cfg.samples_per_experiment();

    let input = input_for_experiment(cfg, experiment);
    let mut x0_rng = stream_rng(cfg.rng_seed, experiment, 1);
    let mut x = DVector::from_fn(n, |i, _| draw_uniform(&mut x0_rng, cfg.x0_range[i]));

    let steps_per_sample = (cfg.sample_period / cfg.effective_step()).ceil() as usize;
    let h = cfg.sample_period / steps_per_sample as f64;

    let mut u0 = DMatrix::zeros(m, samples);
    let mut x0 = DMatrix::zeros(n, samples);
    let mut z0 = DMatrix::zeros(s, samples);
    let mut x1 = DMatrix::zeros(n, samples);

    let mut ws = Rk4Workspace::new(n);
    let mut zeta = DVector::zeros(s);
    let mut u_buf = DVector::zeros(m);
    let mut dx = DVector::zeros(n);

    for j in 0..samples {
        let tj = j as f64 * cfg.sample_period;
        input.eval_into(tj, &mut u_buf);
        sys.rhs_into(&x, &u_buf, &mut zeta, &mut dx);
        u0.column_mut(j).copy_from(&u_buf);
        x0.column_mut(j).copy_from(&x);
        z0.column_mut(j).copy_from(&zeta);
        x1.column_mut(j).copy_from(&dx);

        if j + 1 == samples {
            break;
        }
        for step in 0..steps_per_sample {
            let t = tj + step as f64 * h;
            ws.step(
                |t, x, out| {
                    input.eval_into(t, &mut u_buf);
                    sys.library.eval_into(x, &mut zeta);
                    out.gemv(1.0, &sys.a, &zeta, 0.0);
                    out.gemv(1.0, &sys.b, &u_buf, 1.0);
                },
                t,
                &mut x,
                h,
            );
            let norm = x.norm();
            if !norm.is_finite() || norm > cfg.blowup_norm {
                return Err(Error::ExperimentDiverged {
                    t: t + h,
                    norm,
                    bound: cfg.blowup_norm,
                });
            }
        }
    }

    DataMatrices::new(u0, x0, z0, x1)
}

/// Result of the richness check on `[u0; z0]`.
#[derive(Debug, Clone)]
pub struct RichnessReport {
    /// Whether the stacked matrix has full row rank `m + s`.
    pub full_row_rank: bool,
    pub rank: usize,
    pub required: usize,
    /// Singular values in descending order.
    pub singular_values: Vec<f64>,
}

/// Checks that the stacked matrix `[u0; z0]` has full row rank, the
/// excitation condition required by the synthesis programs. `tol` is the
/// relative singular-value cutoff (default `1e-8`).
pub fn check_richness(data: &DataMatrices, tol: Option<f64>) -> RichnessReport {
    let tol = tol.unwrap_or(1e-8);
    let stacked = data.stacked_uz();
    let required = stacked.nrows();
    let mut sv: Vec<f64> = stacked.svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let smax = sv.first().copied().unwrap_or(0.0);
    let rank = if smax == 0.0 {
        0
    } else {
        sv.iter().filter(|&&v| v > tol * smax).count()
    };
    RichnessReport {
        full_row_rank: rank == required,
        rank,
        required,
        singular_values: sv,
    }
}
