//! Datasets for the split-learning testbed: IDX loading, synthetic
//! class-conditional image generation, client partitioning and
//! augmentation.

pub mod augment;
pub mod dataset;
pub mod error;
pub mod idx;
pub mod partition;

pub use augment::{augment_batch, AugmentConfig};
pub use dataset::{synthesize, uniform_noise_images, Dataset, SyntheticSpec};
pub use error::DataError;
pub use partition::{partition, sample_subset, PartitionPlan};
