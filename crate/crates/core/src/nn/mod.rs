//! Learner networks: layers with exact reverse-mode gradients, the task loss,
//! and the encoder/decoder/classifier assembly.

pub mod layers;
pub mod learner;
pub mod loss;
pub mod network;

pub use layers::{sigmoid, ConvGeometry, Layer};
pub use learner::{
    classifier_accuracy, train_pragmatic_classifier, ClassifierTraining, EncoderRecord, LearnerState, PowerNorm,
    Topology,
};
pub use loss::{argmax, one_hot, pragmatic_loss, pragmatic_loss_grad, LossBreakdown, LossWeights};
pub use network::{Network, Trace};
pub(crate) use learner::sum_rows;
