//! Crops, label maps, augmentation, training-frame sampling and the
//! synthetic sequences that stand in for real video.

pub mod crop;
pub mod image;
pub mod io;
pub mod sampling;
pub mod synth;

pub use crop::{
    context_side, crop, crop_patch, make_label_map, AugmentParams, CropTransform, LabelMap,
    PATCH_SIZE,
};
pub use image::RgbImage;
pub use io::{load_sequence, save_sequence};
pub use sampling::sample_training_frames;
pub use synth::{synth_sequence, synth_suite, SequenceRecord, SuiteKind, SynthSpec};
