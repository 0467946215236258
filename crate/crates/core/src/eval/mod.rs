//! Answer-string metrics, K-best oracle and reports.

mod metrics;
mod oracle;
mod report;

pub use metrics::{exact_match, f1_score, normalize_answer};
pub use oracle::{kbest_oracle, oracle_csv, read_dump, write_dump};
pub use report::{evaluate, golds_of, MetricsReport, QTypeScore, Score};
