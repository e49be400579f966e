//! Split-attention in split-attention network (SISN) for face hallucination.
//!
//! The crate is organized around five subsystems:
//!
//! - [`tensor`]: a minimal differentiable tensor engine with a gradient tape,
//!   an Adam optimizer, and a finite-difference oracle.
//! - [`model`]: the ISA / ISAB / ESAG blocks and the full four-stage network.
//! - [`data`]: image I/O, bicubic degradation, augmentation, cropping, and
//!   dataset manifests.
//! - [`train`]: the training loop, learning-rate schedule, and binary
//!   checkpoints with deterministic resume.
//! - [`eval`]: PSNR / SSIM / MPS metrics, report generation, and the
//!   ESAG/ISAB ablation sweep.
//!
//! The `sisn` binary exposes the whole workflow as subcommands; the guide in
//! `book/` walks through each subsystem with runnable snippets.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod tensor;
pub mod train;

pub mod book;
pub use cli::cli_main;
pub mod cli;

pub use error::{Result, SisnError};
