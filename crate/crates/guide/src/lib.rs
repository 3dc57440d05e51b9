//! The book's chapters, compiled so their snippets run as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/sidetables.md")]
pub mod sidetables {}

#[doc = include_str!("../../../book/src/running.md")]
pub mod running {}

#[doc = include_str!("../../../book/src/host.md")]
pub mod host {}

#[doc = include_str!("../../../book/src/probes.md")]
pub mod probes {}

#[doc = include_str!("../../../book/src/testing.md")]
pub mod testing {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
