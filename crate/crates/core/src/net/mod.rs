//! 3D convolutional networks with hand-written gradients.

pub mod adam;
pub mod checkpoint;
pub mod conv;
pub mod discriminator;
pub mod generator;
pub mod params;
pub mod tensor;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use conv::{conv3d_backward, conv3d_forward, deconv3d_backward, deconv3d_forward, ConvGrads, ConvSpec};
pub use discriminator::{Discriminator, DiscriminatorConfig};
pub use generator::{FinalActivation, Generator, GeneratorConfig};
pub use params::{Param, Params};
pub use tensor::{Scalar, Tensor};
pub use train::{gan_train_step, GanConfig, GanModel, ReconLoss};
