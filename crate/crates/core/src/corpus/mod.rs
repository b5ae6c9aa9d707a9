//! Comment ingestion and dataset plumbing: retrieval, cleaning, phrase
//! windows, annotation files, splits, counterfactual augmentation, and the
//! synthetic corpora used for desk-scale experiments.

mod annotations;
mod cda;
mod clean;
mod fetch;
mod split;
mod synth;
mod window;

pub use annotations::{read_annotations, write_annotations, AnnotatedInstance, ANNOTATION_COLUMNS};
pub use cda::{cda_augment, CdaOutput};
pub use clean::{clean_comment, clean_comment_with, CleanOptions, LengthBasis, MAX_COMMENT_CHARS};
pub use fetch::{
    dedup_comments, fetch_all, fetch_comments, CommentSource, FetchOptions, FetchResult, RawComment, SECONDS_PER_YEAR,
};
pub use split::{split_instances, DataSplit, SplitFractions};
pub use synth::{
    synth_crg_data, synth_dst_data, synth_planted_corpus, synth_reference_utterances, CrgDataset, CrgExample,
    DstDataset, DstExample, PlantedCorpus, DST_SLOTS,
};
pub use window::{extract_window, WINDOW_RADIUS};

pub use crate::stats::AnnotationMatrix;

/// Whitespace tokens with surrounding punctuation stripped, used to match
/// target terms inside raw comment text.
pub(crate) fn bare_token(tok: &str) -> &str {
    tok.trim_matches(|c: char| !c.is_alphanumeric())
}
