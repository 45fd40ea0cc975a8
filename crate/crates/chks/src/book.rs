//! The user guide, compiled into the crate so every Rust snippet in the
//! book runs as a doc-test. If a chapter's example stops compiling or its
//! assertions stop holding, `cargo test` fails — the book cannot drift
//! from the library.
//!
//! The rendered guide lives in `book/` at the repository root (standard
//! mdbook layout); these modules only mirror its chapters.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}

#[doc = include_str!("../../../book/src/discretization.md")]
pub mod discretization {}

#[doc = include_str!("../../../book/src/invariants.md")]
pub mod invariants {}

#[doc = include_str!("../../../book/src/approximation.md")]
pub mod approximation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
