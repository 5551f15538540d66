//! Evaluation: confusion-matrix metrics, the malignant/benign regrouping,
//! throughput benchmarking, embedding projection and figure exports.

mod bench;
mod export;
mod projection;
mod report;

pub use bench::{bench_throughput, BenchReport};
pub use export::{write_attention_png, write_projection_csv};
pub use projection::{pca, project_embeddings, tsne, Projection, TsneConfig};
pub use report::{
    binary_cancer_report, bma, confusion_matrix, weighted_prf, BinaryReport, ClassScores, ConfusionMatrix,
    MetricsReport, WeightedPrf,
};
