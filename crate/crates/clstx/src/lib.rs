//! File formats, parallel cross-validation and the command line around
//! `clstx-core`.
//!
//! - [`clsb`]: labeled `[CLS]` stacks on disk, with a [`manifest`] sidecar.
//! - [`checkpoint`]: trained parameters (CLSP).
//! - [`runner`]: fold workers.
//! - [`cli`]: the `clstx` executable.

pub mod checkpoint;
pub mod cli;
pub mod clsb;
pub mod config;
pub mod manifest;
pub mod runner;
