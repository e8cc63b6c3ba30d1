//! Physics-informed neural fields for first-order Ambisonic room impulse
//! responses.
//!
//! The crate bundles an image-source simulator that produces ground-truth
//! FOA data, a sine-activated neural field with exact input derivatives,
//! momentum / continuity / wave residual losses, an Adam training loop, and
//! NMSE / Pearson-correlation evaluation.

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod field;
pub mod ism;
pub mod metrics;
pub mod optim;
pub mod physics;
pub mod plot;
pub mod siren;
pub mod trainer;

pub use error::{Error, Result};
