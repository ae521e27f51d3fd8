pub mod bench;
pub mod bounds;
pub mod est2d;
pub mod est3d;
pub mod par;
pub mod error;
pub mod geometry;
pub mod scenario;
pub mod sdp;

pub use error::{Error, Result};
