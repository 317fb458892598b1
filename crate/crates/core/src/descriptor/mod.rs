//! Dense descriptors, subpixel sampling, the FastAP objective and the
//! descriptor training loop.

mod fastap;
mod field;
mod train;

pub use fastap::{
    fast_ap, fast_ap_with_gradient, AnchorAp, FastApConfig, FastApOutput, SampleSet, MAX_DISTANCE,
};
pub use field::{describe, describe_batch, sample_descriptors, DescriptorField};
pub(crate) use train::collect_samples;
pub use train::{
    train_descriptor, AnchorMode, DescriptorTrainConfig, DescriptorTraining, DESCRIPTOR_CHECKPOINT,
    DESCRIPTOR_LOG,
};
