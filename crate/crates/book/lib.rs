//! The guide in `book/src`, one module per chapter, so `cargo test` runs
//! every listing as a doctest against the current library.

#[doc = include_str!("../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../book/src/data.md")]
pub mod data {}
#[doc = include_str!("../../book/src/denoising.md")]
pub mod denoising {}
#[doc = include_str!("../../book/src/gating.md")]
pub mod gating {}
#[doc = include_str!("../../book/src/agent.md")]
pub mod agent {}
#[doc = include_str!("../../book/src/hub_edge.md")]
pub mod hub_edge {}
#[doc = include_str!("../../book/src/experiments.md")]
pub mod experiments {}
#[doc = include_str!("../../book/src/protocol_schema.md")]
pub mod protocol_schema {}
#[doc = include_str!("../../book/src/registry_schema.md")]
pub mod registry_schema {}
