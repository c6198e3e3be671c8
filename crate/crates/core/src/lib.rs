//! Verification of ReLU image classifiers against rectangular occlusions.
//!
//! An occlusion of a fixed size is encoded as a small ReLU network (the
//! occlusion network) whose inputs are the occlusion position and coloring.
//! Prepending it to the classifier turns occlusion robustness into ordinary
//! robustness over an input box, which the built-in branch-and-bound verifier
//! decides.
//!
//! Module map:
//! - [`model`]: networks, evaluation, composition, the text network format.
//! - [`image`]: images and their file formats.
//! - [`occlusion`]: reference occlusion function (ground truth for tests).
//! - [`onn`]: the occlusion network builder.
//! - [`verifier`]: bound propagation and the complete robustness checker.
//! - [`naive`]: direct constraint encoding and SMT-LIB2 export.
//! - [`orchestrator`]: splitting, label ordering, worker pool and reports.

pub mod error;
pub mod image;
pub mod model;
pub mod naive;
pub mod occlusion;
pub mod onn;
pub mod orchestrator;
pub mod verifier;

pub use error::{Error, Result};
