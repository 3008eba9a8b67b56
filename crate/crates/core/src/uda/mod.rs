//! Domain-adaptation training: source task loss plus a transfer regularizer
//! (multi-kernel MMD or a domain discriminator behind gradient reversal),
//! pseudo-labeling, and accuracy.

mod losses;
mod model;
mod train;

pub use losses::{
    adversarial_reg, cross_entropy, median_bandwidths, mmd, mmd_biased, softmax, AdversarialOutput, MmdOutput,
};
pub use model::{RegularizerKind, UdaArch, UdaModel, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use train::{
    accuracy, pseudo_label, pseudo_label_view, train_source_only, train_uda, warmup_factor, UdaTrace, UdaTracePoint,
    UdaTrainConfig,
};
