//! Classification heads over frozen per-layer `[CLS]` stacks.
//!
//! This crate is `no_std` (it needs `alloc`) and holds everything that is pure
//! computation: a small reverse-mode tensor engine, the five classification
//! heads, the optimizer and learning-rate schedule, the fold-level training
//! loop, cross-validation bookkeeping and the almost-stochastic-order test.
//! File formats, JSON and the command line live in the `clstx` crate.

#![no_std]

extern crate alloc;

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
