//! Trainable reconstructors and the closed-form linear baseline.

pub mod adam;
pub mod autodiff;
pub mod checkpoint;
pub mod tensor;
pub mod unet;
pub mod wiener;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use autodiff::{ConvGeometry, Gradients, Graph, ParamId, ParamSet, Var};
pub use checkpoint::{decode_weights, encode_weights, load_weights, save_weights, LSWT_MAGIC, LSWT_VERSION};
pub use tensor::Tensor;
pub use unet::{MicroUNet, MicroUNetConfig, LEAKY_SLOPE};
pub use wiener::WienerLearner;
