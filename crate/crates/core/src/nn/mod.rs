//! Small convolutional regressor with hand-written backpropagation.

pub mod io;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod tensor;

pub use io::{decode_weights, encode_weights, load_weights, save_weights};
pub use loss::{weighted_l1_grad, weighted_l1_loss, DEFAULT_LOSS_BASE};
pub use model::{Architecture, Gradients, Regressor};
pub use optim::{train_step, Adam, AdamConfig};
pub use tensor::{Scalar, Tensor};
