//! Translation metrics and representation/length diagnostics.

mod analysis;
mod bleu;
mod report;

pub use analysis::{cosine, length_ratio_stats, pooled_similarity, segment_similarity, LengthRow, SimilarityReport};
pub use bleu::unit_bleu;
pub use report::{evaluate_s2st, score_predictions, EvalReport, EvalScores, SimilarityRow};
