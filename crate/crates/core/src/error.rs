use thiserror::Error;

/// Errors produced by the synthesis toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "experiment diverged at t = {t:.4}: |x| = {norm:.3e} exceeds {bound:.3e}; \
         reduce the input range, duration, or initial-condition box"
    )]
    ExperimentDiverged { t: f64, norm: f64, bound: f64 },

    #[error(
        "stacked input/library data matrix is rank deficient (numerical rank {rank} < {required}); \
         the data are not rich enough, collect more or better-excited samples"
    )]
    RankDeficient { rank: usize, required: usize },

    #[error("synthesis program is infeasible (solver status: {status})")]
    SynthesisInfeasible { status: String },

    #[error(
        "trigger design LMI reported `{status}`, contradicting its feasibility guarantee; \
         this indicates a numerical bug upstream. Problem dump:\n{dump}"
    )]
    TriggerInfeasible { status: String, dump: String },

    #[error("simulation diverged at t = {t:.4}: |x| = {norm:.3e} exceeds {bound:.3e}")]
    SimulationDiverged { t: f64, norm: f64, bound: f64 },

    #[error("event count exceeded {limit} before t = {t:.4}; inter-event times are collapsing")]
    RunawayEvents { t: f64, limit: usize },

    #[error("no feasible point: {0}")]
    NoFeasiblePoint(String),

    #[error("no sublevel set of size at least {tol:.3e} fits inside the target set")]
    DegenerateRegion { tol: f64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

pub type Result<T> = std::result::Result<T, Error>;
