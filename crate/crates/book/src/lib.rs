//! The chapters of the guide in `book/src`, one module each, so that
//! `cargo test` runs their snippets as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}
#[doc = include_str!("../../../book/src/quadtrees.md")]
pub mod quadtrees {}
#[doc = include_str!("../../../book/src/logic.md")]
pub mod logic {}
#[doc = include_str!("../../../book/src/learning.md")]
pub mod learning {}
#[doc = include_str!("../../../book/src/synthesis.md")]
pub mod synthesis {}
#[doc = include_str!("../../../book/src/sessions.md")]
pub mod sessions {}
#[doc = include_str!("../../../book/src/interfaces.md")]
pub mod interfaces {}
