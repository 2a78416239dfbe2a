//! Cross-year, low-data and early-season experiment protocols.

mod config;
mod manifest;
mod protocol;
mod report;

pub use config::{
    cutoff_label, default_methods, BenchConfig, DatasetConfig, EvalConfig, MethodSpec, ModelShape,
    ProtocolConfig, TruncationGrid,
};
pub use manifest::{
    hash_inputs, sha256_file, sha256_hex, FileHash, RunManifest, RUN_MANIFEST_FILE,
};
pub use protocol::{
    cross_year_folds, cross_year_run, early_season_run, evaluation_set, fold_seed, generate_years,
    low_data_run, run_plan, run_plan_threaded, summarize, BenchDataset, BenchResult, FoldSpec,
    MethodSummary, MetricRow, RunPlan, SettingResult, TrainingTiming, YearData,
};
pub use report::{
    accuracy_vs_cutoff_svg, pooled_reliability, reliability_svg, render_report, results_csv,
    results_json, summary_csv, ReportFiles, RESULTS_CSV_HEADER, SUMMARY_CSV_HEADER,
};

#[cfg(test)]
mod tests;
