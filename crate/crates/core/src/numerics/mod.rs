//! Dense tensors, reverse-mode differentiation, optimisation.

mod conv;
pub mod gradcheck;
pub mod init;
pub mod optim;
pub mod tape;
mod tensor;

pub use conv::{conv3d, Conv3dGeometry};
pub use optim::{lr_cosine, lr_multistep, Sgd, SgdConfig, DEFAULT_MILESTONES};
pub use tape::{Gradients, ParamId, ParamStore, Parameter, Tape, Var};
pub use tensor::{Scalar, Tensor};
