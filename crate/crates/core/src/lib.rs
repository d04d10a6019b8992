pub mod channel;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod entropy;
pub mod error;
pub mod eval;
pub mod jscc;
pub mod layers;
pub mod mfcc;
pub mod model;
pub mod objective;
pub mod rangecoder;
pub mod rate;
pub mod side;
pub mod sweep;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod transform;

pub use error::{Error, Result};
