//! Physics-informed neural network solver.
//!
//! Pipeline: a [`ir::PdeSystem`] is parsed from text, lowered against one
//! network per dependent variable into a [`lowering::LossProgram`], sampled or
//! integrated by a [`strategies::TrainingStrategy`], and minimized by the
//! optimizers in [`optim`] under the driver in [`trainer`].

pub mod ir;
pub mod mlp;
pub mod lowering;
pub mod parallel;
pub mod strategies;
pub mod reweight;
pub mod optim;
pub mod reference;
pub mod bench;
pub mod trainer;
pub mod report;
