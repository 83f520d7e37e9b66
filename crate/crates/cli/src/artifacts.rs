//! On-disk artifact formats. Every writer is deterministic: floats are
//! printed in shortest round-trip form, map keys come from struct order,
//! and no timestamps or environment details are embedded.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use trigsyn::model::RegionBox;
use trigsyn::synthesis::Controller;
use trigsyn::trigger::{MietConstants, TriggerKind, TriggerPolicy};

use crate::config::{matrix_to_rows, rows_to_matrix, parse_method, parse_trigger_kind};
use crate::pipeline::{Stage, StageError};

fn io_err(stage: Stage, path: &Path, e: impl std::fmt::Display) -> StageError {
    StageError::new(stage, format!("{}: {e}", path.display()))
}

pub fn write_text(stage: Stage, path: &Path, text: &str) -> Result<(), StageError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(stage, dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_err(stage, path, e))
}

pub fn write_json<T: Serialize>(stage: Stage, path: &Path, value: &T) -> Result<(), StageError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(stage, path, e))?;
    text.push('\n');
    write_text(stage, path, &text)
}

pub fn read_json<T: DeserializeOwned>(stage: Stage, path: &Path) -> Result<T, StageError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(stage, path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(stage, path, e))
}

/// Headerless numeric CSV, one matrix row per line.
pub fn write_matrix_csv(stage: Stage, path: &Path, m: &DMatrix<f64>) -> Result<(), StageError> {
    let mut text = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                text.push(',');
            }
            let _ = write!(text, "{}", m[(i, j)]);
        }
        text.push('\n');
    }
    write_text(stage, path, &text)
}

pub fn read_matrix_csv(stage: Stage, path: &Path) -> Result<DMatrix<f64>, StageError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(stage, path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|e| {
            io_err(stage, path, format!("line {}: {e}", lineno + 1))
        })?);
    }
    rows_to_matrix(&rows, &path.display().to_string()).map_err(|e| StageError::new(stage, e.message))
}

/// Serialized controller. Matrices are row-major nested arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerDto {
    pub method: String,
    pub k: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
    pub l: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub s_metric: Vec<Vec<f64>>,
    pub omega: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
    pub phi: Vec<Vec<f64>>,
    pub beta: f64,
    pub rq: Option<Vec<Vec<f64>>>,
    pub region: Option<RegionBox>,
}

impl ControllerDto {
    pub fn from_controller(ctrl: &Controller) -> Self {
        Self {
            method: ctrl.method.to_string(),
            k: matrix_to_rows(&ctrl.k),
            g: matrix_to_rows(&ctrl.g),
            l: matrix_to_rows(&ctrl.l),
            p: matrix_to_rows(&ctrl.p),
            s_metric: matrix_to_rows(&ctrl.s_metric),
            omega: matrix_to_rows(&ctrl.omega),
            theta: matrix_to_rows(&ctrl.theta),
            phi: matrix_to_rows(&ctrl.phi),
            beta: ctrl.beta,
            rq: ctrl.rq.as_ref().map(matrix_to_rows),
            region: ctrl.region.clone(),
        }
    }

    pub fn into_controller(self) -> Result<Controller, StageError> {
        let method = parse_method(&self.method).map_err(|e| StageError::new(Stage::Synthesis, e.message))?;
        let to = |rows: &Vec<Vec<f64>>, what: &str| {
            rows_to_matrix(rows, what).map_err(|e| StageError::new(Stage::Synthesis, e.message))
        };
        let phi = to(&self.phi, "phi")?;
        Ok(Controller {
            method,
            k: to(&self.k, "k")?,
            g: to(&self.g, "g")?,
            l: to(&self.l, "l")?,
            p: to(&self.p, "p")?,
            s_metric: to(&self.s_metric, "s_metric")?,
            omega: to(&self.omega, "omega")?,
            theta: to(&self.theta, "theta")?,
            phi,
            beta: self.beta,
            rq: match &self.rq {
                Some(rows) => Some(to(rows, "rq")?),
                None => None,
            },
            region: self.region,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsDto {
    pub ell1: f64,
    pub ell2: f64,
    pub ell: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyDto {
    pub kind: String,
    pub sigma: f64,
    pub mu: f64,
    pub eta: Option<f64>,
    pub tau: f64,
    pub constants: ConstantsDto,
    pub region: RegionBox,
}

impl PolicyDto {
    pub fn from_policy(p: &TriggerPolicy) -> Self {
        Self {
            kind: p.kind.to_string(),
            sigma: p.sigma,
            mu: p.mu,
            eta: p.eta,
            tau: p.tau,
            constants: ConstantsDto {
                ell1: p.constants.ell1,
                ell2: p.constants.ell2,
                ell: p.constants.ell,
                omega: p.constants.omega,
            },
            region: p.region.clone(),
        }
    }

    pub fn into_policy(self) -> Result<TriggerPolicy, StageError> {
        let kind =
            parse_trigger_kind(&self.kind).map_err(|e| StageError::new(Stage::Trigger, e.message))?;
        Ok(TriggerPolicy {
            kind,
            sigma: self.sigma,
            mu: self.mu,
            eta: self.eta,
            tau: self.tau,
            constants: MietConstants {
                ell1: self.constants.ell1,
                ell2: self.constants.ell2,
                ell: self.constants.ell,
                omega: self.constants.omega,
            },
            region: self.region,
        })
    }
}

/// Short file tag of a trigger kind, used in artifact names.
pub fn kind_tag(kind: TriggerKind) -> &'static str {
    match kind {
        TriggerKind::ErrorState => "state",
        TriggerKind::ErrorLibrary => "library",
    }
}

/// Closed polyline to a two-column CSV.
pub fn write_polyline_csv(
    stage: Stage,
    path: &Path,
    points: &[(f64, f64)],
) -> Result<(), StageError> {
    let mut text = String::from("x1,x2\n");
    for (a, b) in points {
        let _ = writeln!(text, "{a},{b}");
    }
    write_text(stage, path, &text)
}
