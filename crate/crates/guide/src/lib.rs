//! Runs every code snippet in the book as a doc-test.
//!
//! mdBook cannot execute Rust snippets itself, so each chapter is included
//! here as module documentation and `cargo test --doc -p modebench-guide`
//! compiles and runs the fenced code blocks. A module per chapter keeps
//! test failures attributable to the chapter they came from. Editing a
//! chapter and forgetting to keep its snippets valid fails the workspace
//! test suite.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/modes.md")]
pub mod modes {}

#[doc = include_str!("../../../book/src/diversity.md")]
pub mod diversity {}

#[doc = include_str!("../../../book/src/significance.md")]
pub mod significance {}

#[doc = include_str!("../../../book/src/difficulty.md")]
pub mod difficulty {}

#[doc = include_str!("../../../book/src/running.md")]
pub mod running {}

#[doc = include_str!("../../../book/src/determinism.md")]
pub mod determinism {}
