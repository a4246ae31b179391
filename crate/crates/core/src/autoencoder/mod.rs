//! 1D convolutional autoencoder over MOTS features with hand-written
//! backpropagation and Adam.
//!
//! By default ReLU follows every layer except the code layer and the final
//! reconstruction layer; [`AeArchitecture::with_relu_everywhere`] puts it
//! after all ten.

mod adam;
mod arch;
mod kernels;
mod network;
mod persist;
mod train;

pub use adam::AdamState;
pub use arch::{default_conv_plan, AeArchitecture, LayerKind, LayerSpec, ENCODER_LAYERS, KERNEL};
pub use network::{loss, AeParameters, Embedding, Workspace, GRAD_CHUNK};
pub use persist::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC};
pub use train::{format_loss_curve, train, train_batches, train_from, TrainConfig, TrainReport};
