//! Distributionally robust shortest paths with sensor-revealed information.
//!
//! The crate covers graph construction, ambiguity sets and their partition by
//! auxiliary-constraint responses, the static, max-min and multistage
//! formulations, synthetic instance generation, data-driven verification of
//! auxiliary constraints and the experiment harness.

pub mod ambiguity;
pub mod datagen;
pub mod experiments;
pub mod formulations;
pub mod graph;
pub mod instance;
pub mod nonanticipativity;
pub mod verification;

pub use drsp_solver as solver;
