//! Stochastic answer network for extractive reading comprehension, with its
//! own reverse-mode autodiff engine, training loop and evaluation tools.

pub mod answer;
pub mod config;
pub mod data;
pub mod encoder;
pub mod engine;
pub mod error;
pub mod eval;
pub mod layers;
pub mod lexicon;
pub mod model;
pub mod seeds;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    pub mod autodiff {}
    #[doc = include_str!("../../../book/src/encoder.md")]
    pub mod encoder {}
    #[doc = include_str!("../../../book/src/answer-module.md")]
    pub mod answer_module {}
    #[doc = include_str!("../../../book/src/data.md")]
    pub mod data {}
    #[doc = include_str!("../../../book/src/training.md")]
    pub mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
