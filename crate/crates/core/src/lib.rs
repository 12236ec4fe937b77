//! Dynamic fusion network for multiple-choice reading comprehension.
//!
//! A question is routed by a learned strategy gate to one of several
//! attention strategies over passage, question and answer candidates; a
//! recurrent answer scorer then rereads a passage memory for a learned
//! number of steps. Both discrete choices are trained with an exactly
//! enumerated policy gradient.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod fusion;
pub mod matching;
pub mod model;
pub mod policy;
pub mod reasoner;
pub mod seqnet;

pub use config::{Ablation, AdvantageForm, TrainConfig};
pub use corpus::Sample;
pub use error::{Error, Result};
pub use fusion::Strategy;
pub use model::Model;
