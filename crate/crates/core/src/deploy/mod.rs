//! Throughput measurement and deployment cost arithmetic.

mod bench;
mod cost;
mod report;

pub use bench::{bench_throughput, BenchResult, BenchRow};
pub use cost::{cost_per_billion, format_usd, required_replicas, speedup, CostModel};
pub use report::{reference_rows, render_csv, render_table, CostRow};
