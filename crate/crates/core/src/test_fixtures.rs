//! Shared plants and data sets used across module tests.

use nalgebra::DMatrix;

use crate::experiment::{collect_data, ExperimentConfig};
use crate::model::{DataMatrices, FunctionLibrary, GroundTruthSystem, QTerm};

/// Two-state polynomial plant `x1dot = -x1 + x1^2 x2`, `x2dot = u` over the
/// library `(x1, x2, x1^2, x1^2 x2, x1 x2^2, x2^3)`.
pub fn poly_system() -> GroundTruthSystem {
    let lib = FunctionLibrary::new(
        2,
        vec![
            QTerm::Monomial { exponents: vec![2, 0] },
            QTerm::Monomial { exponents: vec![2, 1] },
            QTerm::Monomial { exponents: vec![1, 2] },
            QTerm::Monomial { exponents: vec![0, 3] },
        ],
    )
    .unwrap();
    let a = DMatrix::from_row_slice(
        2,
        6,
        &[
            -1.0, 0.0, 0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        ],
    );
    let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    GroundTruthSystem::new(a, b, lib).unwrap()
}

pub fn poly_experiment_config() -> ExperimentConfig {
    ExperimentConfig {
        duration: 1.0,
        sample_period: 0.1,
        input_range: vec![[-20.0, 20.0]],
        x0_range: vec![[-1.0, 1.0], [-1.0, 1.0]],
        rng_seed: 11,
        integrator_step: Some(1e-3),
        blowup_norm: 1e6,
        num_experiments: 1,
    }
}

pub fn poly_data(sys: &GroundTruthSystem) -> DataMatrices {
    collect_data(sys, &poly_experiment_config()).unwrap()
}

/// Inverted pendulum `x1dot = x2`, `x2dot = 9.8 sin x1 - 0.01 x2 + u` over
/// the library `(x1, x2, sin x1)`.
pub fn pendulum_system() -> GroundTruthSystem {
    let lib = FunctionLibrary::new(2, vec![QTerm::Sin { coordinate: 0 }]).unwrap();
    let a = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 0.0, 0.0, -0.01, 9.8]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    GroundTruthSystem::new(a, b, lib).unwrap()
}

pub fn pendulum_experiment_config() -> ExperimentConfig {
    ExperimentConfig {
        duration: 1.0,
        sample_period: 0.1,
        input_range: vec![[-1.0, 1.0]],
        x0_range: vec![[-1.0, 1.0], [-1.0, 1.0]],
        rng_seed: 17,
        integrator_step: Some(1e-3),
        blowup_norm: 1e6,
        num_experiments: 1,
    }
}

pub fn pendulum_data(sys: &GroundTruthSystem) -> DataMatrices {
    collect_data(sys, &pendulum_experiment_config()).unwrap()
}

/// Global gradient bound for the pendulum library: `|d(sin x1)/dx| <= 1`
/// on the first axis everywhere.
pub fn pendulum_rq() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 1, &[1.0, 0.0])
}
