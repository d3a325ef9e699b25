//! Compiles every code listing of the guide in `book/src` as a doctest.

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/tokens.md")]
pub mod tokens {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/watermark.md")]
pub mod watermark {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/covert-channel.md")]
pub mod covert_channel {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/signalling.md")]
pub mod signalling {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/gateway.md")]
pub mod gateway {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/simulator.md")]
pub mod simulator {}
