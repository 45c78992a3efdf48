//! Metrics and benchmarks: normalized edit distance, TEDS, reading-order
//! edit, per-page and corpus reports, and recognition throughput.

mod bench;
mod edit;
mod order;
mod report;
mod ted;

pub use bench::{bench_csv, throughput_bench, BenchMode, BenchRow};
pub use edit::{levenshtein, normalize_text, normalized_edit_distance, normalized_sequence_distance};
pub use order::{kendall_tau, order_edit};
pub use report::{end_to_end_report, match_blocks, MetricReport, PageMetrics, MATCH_IOA};
pub use ted::{rename_cost, teds, teds_trees, tree_edit_distance, TableNode, TableTree};
