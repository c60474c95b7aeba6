//! The guide's chapters as modules, so `cargo test -p cml-book` runs every
//! Rust listing in `src/*.md` against the current crates.

#[doc = include_str!("src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("src/contrastive.md")]
pub mod contrastive {}
#[doc = include_str!("src/synapses.md")]
pub mod synapses {}
#[doc = include_str!("src/implicit.md")]
pub mod implicit {}
#[doc = include_str!("src/theory.md")]
pub mod theory {}
#[doc = include_str!("src/spiking.md")]
pub mod spiking {}
#[doc = include_str!("src/tasks.md")]
pub mod tasks {}
#[doc = include_str!("src/runner.md")]
pub mod runner {}

#[doc = include_str!("../README.md")]
pub mod readme {}
