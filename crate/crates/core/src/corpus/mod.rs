//! Corpus ingestion, strategy-to-aspect mapping, offline annotation and the
//! on-disk stores.

mod annotate;
mod schema;
mod store;
mod strategy;

pub use annotate::{
    annotate_corpus, annotate_turn, read_annotations, AnnotatedTurn, AnnotationReport, TurnFailure,
};
pub use schema::{
    apply_split_manifest, hash_dialogues, load_corpus, parse_esconv, parse_native, parse_p4g_csv,
    save_corpus, Corpus, Dialogue, Split, Splits, Turn,
};
pub use store::{
    hash_hex, load_centroids, load_checkpoint, save_centroids, save_checkpoint, CentroidHeader,
    CheckpointMeta, DataDir, Manifest, FORMAT_VERSION,
};
pub use strategy::StrategyMap;
