//! The guide's chapters, compiled so their snippets run as doctests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/images.md")]
pub mod chapter1 {}
#[doc = include_str!("../../../book/src/features.md")]
pub mod chapter2 {}
#[doc = include_str!("../../../book/src/detection.md")]
pub mod chapter3 {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod chapter4 {}
#[doc = include_str!("../../../book/src/emotion.md")]
pub mod chapter5 {}
#[doc = include_str!("../../../book/src/selection.md")]
pub mod chapter6 {}
#[doc = include_str!("../../../book/src/tracking.md")]
pub mod chapter7 {}
#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod chapter8 {}
#[doc = include_str!("../../../README.md")]
pub mod readme {}
