//! Linear binary hashing by simultaneous compression and quantization.

pub mod cli;
pub mod codes;
pub mod dual;
pub mod error;
pub mod eval;
pub mod io;
pub mod itq;
pub mod linalg;
pub mod model;
pub mod oge;
pub mod one;
pub mod pipeline;
pub mod scale;
pub mod synth;
pub mod train;

pub use error::{Result, ScqError};
