//! Coherent states built from dual pairs of probability distributions.

pub mod bayeslab;
pub mod cli;
pub mod cstates;
pub mod distfam;
pub mod error;
pub mod matrixcs;
pub mod par;
pub mod report;
pub mod roi;
pub mod seqcore;
pub mod special;

pub use error::{Error, Result};
