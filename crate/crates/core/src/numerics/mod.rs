//! Dense `f64` linear algebra with reverse-mode gradients.

mod gradcheck;
mod linalg;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_many, GradCheckReport};
pub use linalg::{
    column_means, cosine_similarity, covariance, inverse_sqrt_psd, max_asymmetry, symmetric_eigen, SymmetricEigen,
};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
pub(crate) use tensor::{dot, norm};
