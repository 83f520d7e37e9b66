//! Data-driven synthesis of event-triggered controllers for control-affine
//! nonlinear systems.
//!
//! The toolkit takes sampled open-loop experiment data, designs a state
//! feedback over a user-chosen function library by semidefinite programming,
//! equips it with an event-triggered implementation whose threshold is again
//! designed via small LMIs, certifies a minimum inter-event time, and
//! estimates regions of attraction for the closed loop.

pub mod basin;
pub mod error;
pub mod experiment;
mod integrate;
pub mod linalg;
pub mod lmi;
pub mod model;
pub mod simulate;
pub mod synthesis;
pub mod trigger;

#[cfg(test)]
pub(crate) mod test_fixtures;

pub use error::{Error, Result};
