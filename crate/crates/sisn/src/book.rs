//! The guide's chapters, attached as doc comments so every Rust snippet in
//! `book/` compiles and runs under `cargo test`. Each module carries one
//! chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/tensor-engine.md")]
pub mod tensor_engine {}

#[doc = include_str!("../../../book/src/architecture.md")]
pub mod architecture {}

#[doc = include_str!("../../../book/src/data-pipeline.md")]
pub mod data_pipeline {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli_guide {}
