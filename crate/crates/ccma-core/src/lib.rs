//! Deterministic highway on-ramp merging simulator with a cascaded
//! cooperative decision stack.
//!
//! The crate is organised around three decision levels layered on top of a
//! discrete-time traffic world:
//!
//! - [`policy`] — per-vehicle tabular Q-learning served under a hazard mask;
//! - [`coord`] — regional coordination of merge conflicts through a scored
//!   action pipeline (deterministic rule oracle or a remote language-model
//!   backend via [`llm`]);
//! - [`optimizer`] — a global loop that tunes the reward weights across
//!   episodes and warm-starts from a persistent record store.
//!
//! [`sim`] holds the world model (geometry, kinematics, background traffic),
//! [`reward`] the reward mathematics, and [`harness`] the experiment driver
//! (episodes, metrics, matrices, dataset export).

pub mod coord;
pub mod error;
pub mod harness;
pub mod llm;
pub mod optimizer;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod sim;
pub mod testkit;
pub mod util;

pub use error::{Error, Result};
