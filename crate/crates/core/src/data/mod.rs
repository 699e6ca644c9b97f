//! Labels, streaming windows and the synthetic keyword corpus.

mod corpus;
mod labels;
mod synth;

pub use corpus::{
    read_manifest, write_manifest, Corpus, CorpusInfo, LabeledClip, ManifestRecord, Split, CORPUS_FILE,
    label_frames_at, LABEL_FRAMES, MANIFEST_FILE,
};
pub use labels::{assign_labels, label_frames, window_stream, StreamWindow};
pub use synth::{clip_seed, synthesize_clip, CorpusParams, Synthesized};
