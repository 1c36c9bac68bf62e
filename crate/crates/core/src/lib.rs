//! Word sense disambiguation by cosine k-nearest-neighbor voting over stored
//! contextual embeddings.
//!
//! The pipeline is: parse a SensEval lexical-sample corpus ([`corpus`]), load the
//! per-instance vectors written by an external extractor ([`embedstore`]), build a
//! per-lexelt exemplar index and classify test instances ([`classifier`]), then
//! score and sweep over k ([`eval`]). [`tsne`] and [`plot`] project one lexelt's
//! training vectors to 2D for inspection.

pub mod classifier;
pub mod corpus;
pub mod embedstore;
pub mod eval;
pub mod plot;
pub mod tsne;

pub use classifier::{classify, classify_all, cosine, ExemplarIndex, Prediction, PredictionSource, VoteTally};
pub use corpus::{
    corpus_stats, mfs_table, parse_lexical_sample, preprocess_instance, Corpus, Instance, Lexelt, Pos, SenseKey,
    Split, StatsReport,
};
pub use embedstore::{join, read_embeddings, write_embeddings, EmbeddingFileHeader, EmbeddingRecord, EmbeddingStore, LayerPolicy};
pub use eval::{pos_breakdown, report_render, score, sweep, EvalReport, MfsBaseline, PosBreakdown, SweepTable};
