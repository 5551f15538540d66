//! Datasets: loading, stratified splitting, augmentation and the synthetic
//! lesion generator.

mod augment;
mod dataset;
mod synth;
mod taxonomy;

pub use augment::{
    adjust_brightness, adjust_contrast, augment, augment_rng, rgb_shift, sample_bilinear_reflect, AugConfig,
};
pub use dataset::{chw_to_rgb, load_image_dataset, rgb_to_chw, stratified_split, train_count, Sample};
pub use synth::{synth_lesions, write_dataset};
pub use taxonomy::{ClassTaxonomy, LESION_CLASSES};
