//! Scoring: RMSE per model, channel and lead; the per-pixel oracle blend;
//! percent-difference tables; weight-map export.

mod export;
mod leads;
mod metrics;
mod oracle;
mod scores;

pub use export::{export_weight_maps, fuse_record, weight_statistics, write_field, WeightSummary};
pub use leads::{check_pairing, evaluate_leads};
pub use metrics::{channel_mse, mean_weight_entropy, pct_diff, rmse, Weighting};
pub use oracle::{fit_oracle, oracle_blend, score_oracle, OracleFit, DEFAULT_RIDGE};
pub use scores::{json_path, score_dataset, ScoreRow, ScoreTable, MEAN, MOWE, ORACLE};
