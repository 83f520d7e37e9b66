//! Command-line pipeline over the `trigsyn` toolkit: data collection,
//! controller synthesis, trigger design, closed-loop simulation, and
//! basin estimation, driven by one JSON configuration per plant.

pub mod artifacts;
pub mod config;
pub mod pipeline;

pub use config::{preset, PipelineConfig, PRESET_NAMES};
pub use pipeline::{
    cmd_boa, cmd_collect, cmd_repro, cmd_simulate, cmd_synth, cmd_trigger, OutPaths, Stage,
    StageError,
};
