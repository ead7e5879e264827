//! Ranking metrics, expected direct cost, projections and report files.

mod cost;
mod mixing;
mod report;
mod roc;
mod tsne;
mod vehicle;

pub use cost::{expected_cost, min_expected_cost, CostOptimum, CostParams};
pub use mixing::mixing_score;
pub use report::{
    emit_report, emit_tsne, read_roc_csv, read_tsne_csv, roc_svg, scatter_svg, write_roc_csv, write_tsne_csv,
    ClassCounts, EvaluationReport, ScoredSnippet, TsneRow, COST_CONVENTION,
};
pub use roc::{auroc, roc_points, trapezoid_area, RocPoint};
pub use tsne::{conditional_affinities, joint_affinities, tsne, TsneConfig, TsneOutput, TSNE_MAX_POINTS};
pub use vehicle::{group_by_vehicle, vehicle_scores, Aggregator};
