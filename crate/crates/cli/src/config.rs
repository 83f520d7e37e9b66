//! Pipeline configuration: one JSON document drives every verb. Presets
//! bundle complete configurations for the two example plants together with
//! their published reference values.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use trigsyn::experiment::ExperimentConfig;
use trigsyn::model::{FunctionLibrary, GroundTruthSystem, QTerm, RegionBox};
use trigsyn::synthesis::Method;
use trigsyn::trigger::TriggerKind;

use crate::pipeline::{Stage, StageError};

pub const PRESET_POLY: &str = include_str!("../presets/poly_khalil.json");
pub const PRESET_PENDULUM: &str = include_str!("../presets/inverted_pendulum.json");

/// Returns the bundled preset configuration text for a name, accepting the
/// short and the file-stem spellings.
pub fn preset(name: &str) -> Option<&'static str> {
    match name {
        "poly" | "poly_khalil" => Some(PRESET_POLY),
        "pendulum" | "inverted_pendulum" => Some(PRESET_PENDULUM),
        _ => None,
    }
}

pub const PRESET_NAMES: &[&str] = &["poly", "pendulum"];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub name: String,
    pub system: SystemSection,
    pub experiment: ExperimentConfig,
    pub synthesis: SynthesisSection,
    pub trigger: TriggerSection,
    pub simulation: SimulationSection,
    pub boa: BoaSection,
    #[serde(default)]
    pub reference: Option<ReferenceValues>,
}

/// Ground-truth plant in the coefficient form `xdot = A zeta(x) + B u`.
/// Used for data generation and closed-loop simulation only; the design
/// stages never look at `a` or `b`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub terms: Vec<QTerm>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisSection {
    /// "linearization" or "contractive".
    pub method: String,
    /// Decay weight, `n x n` positive definite.
    pub omega: Vec<Vec<f64>>,
    /// Region the gradient remainder bound is taken over.
    pub design_region: RegionBox,
    /// Gradient bound factor; omitted means estimate it from the library
    /// over the design region.
    #[serde(default)]
    pub rq: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerSection {
    /// "state" or "library".
    pub kind: String,
    /// Damping weight of the library-normalized trigger.
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub sigma_cap: Option<f64>,
    /// Region the growth constants are bounded over.
    pub constants_region: RegionBox,
    #[serde(default)]
    pub grid_random: Option<usize>,
    #[serde(default)]
    pub grid_seed: Option<u64>,
    #[serde(default)]
    pub inflation: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub t_final: f64,
    pub initial_states: Vec<Vec<f64>>,
    #[serde(default)]
    pub integrator_step: Option<f64>,
    #[serde(default)]
    pub record_every: Option<usize>,
    /// Region a batch of extra random initial states is drawn from; used
    /// by the pipeline report as convergence evidence.
    #[serde(default)]
    pub batch_region: Option<RegionBox>,
    #[serde(default)]
    pub batch_count: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoaSection {
    /// Box the sublevel search and the boundary tracing run in.
    pub search_region: RegionBox,
    #[serde(default)]
    pub boundary_samples: Option<usize>,
    #[serde(default)]
    pub angular: Option<usize>,
    #[serde(default)]
    pub radial_steps: Option<usize>,
}

/// Published values the report compares against. Purely informational:
/// nothing in the pipeline consumes them.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceValues {
    #[serde(default)]
    pub note: Option<String>,
    #[serde(default)]
    pub k: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub s_metric: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub theta: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub state_trigger: Option<ReferenceTrigger>,
    #[serde(default)]
    pub library_trigger: Option<ReferenceTrigger>,
    /// Largest certified sublevel under the state trigger.
    #[serde(default)]
    pub gamma_state: Option<f64>,
    /// Largest certified sublevel under the library trigger.
    #[serde(default)]
    pub gamma_library: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceTrigger {
    pub sigma: f64,
    pub mu: f64,
    pub tau: f64,
    #[serde(default)]
    pub observed_min_gap: Option<f64>,
}

fn bad(msg: impl Into<String>) -> StageError {
    StageError::new(Stage::Config, msg.into())
}

pub fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, StageError> {
    if rows.is_empty() {
        return Err(bad(format!("{what} has no rows")));
    }
    let ncols = rows[0].len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(bad(format!("{what} rows have inconsistent lengths")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, StageError> {
        let cfg: PipelineConfig =
            serde_json::from_str(text).map_err(|e| bad(format!("configuration does not parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, StageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn library(&self) -> Result<FunctionLibrary, StageError> {
        let n = self.system.a.len();
        FunctionLibrary::new(n, self.system.terms.clone()).map_err(|e| bad(e.to_string()))
    }

    pub fn system(&self) -> Result<GroundTruthSystem, StageError> {
        let a = rows_to_matrix(&self.system.a, "system.a")?;
        let b = rows_to_matrix(&self.system.b, "system.b")?;
        let lib = self.library()?;
        GroundTruthSystem::new(a, b, lib).map_err(|e| bad(e.to_string()))
    }

    pub fn method(&self) -> Result<Method, StageError> {
        parse_method(&self.synthesis.method)
    }

    pub fn trigger_kind(&self) -> Result<TriggerKind, StageError> {
        parse_trigger_kind(&self.trigger.kind)
    }

    pub fn omega(&self) -> Result<DMatrix<f64>, StageError> {
        rows_to_matrix(&self.synthesis.omega, "synthesis.omega")
    }

    pub fn manual_rq(&self) -> Result<Option<DMatrix<f64>>, StageError> {
        match &self.synthesis.rq {
            Some(rows) => Ok(Some(rows_to_matrix(rows, "synthesis.rq")?)),
            None => Ok(None),
        }
    }

    pub fn validate(&self) -> Result<(), StageError> {
        let sys = self.system()?;
        let n = sys.state_dim();
        let m = sys.input_dim();
        self.method()?;
        self.trigger_kind()?;
        if self.experiment.state_dim() != n {
            return Err(bad(format!(
                "experiment.x0_range covers {} states, the plant has {n}",
                self.experiment.state_dim()
            )));
        }
        if self.experiment.input_dim() != m {
            return Err(bad(format!(
                "experiment.input_range covers {} inputs, the plant takes {m}",
                self.experiment.input_dim()
            )));
        }
        let omega = self.omega()?;
        if omega.nrows() != n || omega.ncols() != n {
            return Err(bad(format!(
                "synthesis.omega is {}x{}, expected {n}x{n}",
                omega.nrows(),
                omega.ncols()
            )));
        }
        if self.synthesis.design_region.dim() != n {
            return Err(bad("synthesis.design_region dimension does not match the plant"));
        }
        if let Some(rq) = self.manual_rq()? {
            if rq.nrows() != n {
                return Err(bad(format!("synthesis.rq has {} rows, expected {n}", rq.nrows())));
            }
        }
        if self.trigger.constants_region.dim() != n {
            return Err(bad("trigger.constants_region dimension does not match the plant"));
        }
        if let Some(eta) = self.trigger.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(bad(format!("trigger.eta must be positive, got {eta}")));
            }
        }
        if self.trigger_kind()? == TriggerKind::ErrorLibrary && self.trigger.eta.is_none() {
            return Err(bad("the library trigger needs trigger.eta"));
        }
        if !(self.simulation.t_final > 0.0) {
            return Err(bad("simulation.t_final must be positive"));
        }
        if self.simulation.initial_states.is_empty() {
            return Err(bad("simulation.initial_states is empty"));
        }
        for x0 in &self.simulation.initial_states {
            if x0.len() != n {
                return Err(bad(format!(
                    "an initial state has dimension {}, the plant has {n}",
                    x0.len()
                )));
            }
        }
        if let Some(region) = &self.simulation.batch_region {
            if region.dim() != n {
                return Err(bad("simulation.batch_region dimension does not match the plant"));
            }
        }
        if self.boa.search_region.dim() != n {
            return Err(bad("boa.search_region dimension does not match the plant"));
        }
        Ok(())
    }
}

pub fn parse_method(text: &str) -> Result<Method, StageError> {
    match text {
        "linearization" | "lin" => Ok(Method::Linearization),
        "contractive" | "contr" => Ok(Method::Contractive),
        other => Err(bad(format!(
            "unknown synthesis method {other:?}; expected \"linearization\" or \"contractive\""
        ))),
    }
}

pub fn parse_trigger_kind(text: &str) -> Result<TriggerKind, StageError> {
    match text {
        "state" | "error-state" => Ok(TriggerKind::ErrorState),
        "library" | "error-library" => Ok(TriggerKind::ErrorLibrary),
        other => Err(bad(format!(
            "unknown trigger kind {other:?}; expected \"state\" or \"library\""
        ))),
    }
}
