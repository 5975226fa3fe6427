//! Manifest ingestion, label vocabularies and image preprocessing.

mod batch;
mod image;
mod manifest;
mod raters;

pub use self::batch::{batch_iter, epoch_order, Batch, BatchIter, DiskImages, ImageSource, MemoryImages, Mode};
pub use self::image::{
    center_offsets, decode_image, preprocess_eval, preprocess_train, tta_views, AugmentPolicy, Pixels,
};
pub use self::manifest::{
    apply_label_threshold, decode_labels, encode_labels, load_manifest, parse_manifest, parse_labels, LabelVocabulary,
    Manifest, ManifestRecord, Split, ThresholdReport, VocabEntry,
};
pub use self::raters::{load_raters, parse_raters, RaterTable};
