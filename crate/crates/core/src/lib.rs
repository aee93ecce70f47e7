pub mod dataset;
pub mod encoders;
pub mod error;
pub mod knowledge;
pub mod model;
pub mod numerics;
pub mod similarity;
pub mod synthetic;
pub mod training;

pub use dataset::{Dataset, Sample, Split};
pub use error::{Category, Error, Result};
pub use numerics::{Tape, Tensor, Var};
