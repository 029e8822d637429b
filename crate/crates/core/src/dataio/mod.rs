//! Feature files, corpus loading, synthetic generation and batching.

mod batch;
mod blob;
mod corpus;
mod split;
mod synth;

pub use batch::{BatchMode, BatchPlan};
pub use blob::{read_feature_blob, write_feature_blob, FeatureBlob, BLOB_MAGIC, BLOB_VERSION};
pub use corpus::{
    Corpus, FeatureRecord, LabelVocabulary, Template, VideoEmotionRecord, VocabClass,
    MANIFEST_FILE, VIDEOS_FILE, VOCABULARY_FILE,
};
pub use split::Split;
pub use synth::{default_templates, gen_synthetic, EmotionRule, SynthConfig};
