//! Metrics, paired significance tests and report tables.

pub mod metrics;
pub mod report;
pub mod significance;

pub use metrics::{
    evaluate, score_records, EvalOutcome, EvalReport, Metrics, PairedP, SampleResult, HIT_THRESHOLD,
};
pub use report::{compare_ablation, render_report, AblationDelta, Layout, Rendered};
pub use significance::{significance_paired, PermutationConfig};
