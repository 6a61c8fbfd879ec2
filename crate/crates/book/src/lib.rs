//! Compiles the guide's code listings as doc-tests, one module per chapter so
//! that a failure points at its chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/chsh-bound.md")]
pub mod chsh_bound {}

#[doc = include_str!("../../../book/src/time-slots.md")]
pub mod time_slots {}

#[doc = include_str!("../../../book/src/pearle-model.md")]
pub mod pearle_model {}

#[doc = include_str!("../../../book/src/socks.md")]
pub mod socks {}

#[doc = include_str!("../../../book/src/conspiracy.md")]
pub mod conspiracy {}

#[doc = include_str!("../../../book/src/protocol.md")]
pub mod protocol {}

#[doc = include_str!("../../../book/src/reproducibility.md")]
pub mod reproducibility {}
