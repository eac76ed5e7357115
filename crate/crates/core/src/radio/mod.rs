//! Frame codec and the lossy medium.

mod crc;
mod frame;
mod link;

pub use crc::crc16;
pub use frame::*;
pub use link::*;
