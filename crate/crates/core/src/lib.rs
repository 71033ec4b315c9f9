//! Contrastive sentence-embedding training against a frozen multimodal teacher.
//!
//! The crate provides dropout-positive InfoNCE, multimodal contrast against
//! projected teacher features, teacher-similarity filtering of negatives and an
//! adaptive angular-margin contrastive loss, all with analytic gradients. A toy
//! embedding-table student, an interleaved text/multimodal trainer and STS-style
//! evaluation make the objectives runnable end to end.

pub mod cli;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod numerics;
pub mod objectives;
pub mod similarity;
pub mod teacher_store;
pub mod trainer;

pub use error::{Error, Result};
pub use objectives::{LossResult, ObjectiveConfig, Slot};
pub use teacher_store::{FeatureTable, Modality};
