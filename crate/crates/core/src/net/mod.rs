//! Denoising network: tensors, autograd tape, U-Net, training and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod tensor;
pub mod train;
pub mod unet;

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, Checkpoint};
pub use gradcheck::{grad_check, GradCheckReport, Probe};
pub use tensor::{Scalar, Tensor};
pub use train::{train, TrainHyper, TrainOutcome, Trainer};
pub use unet::{NetConfig, UNet};
