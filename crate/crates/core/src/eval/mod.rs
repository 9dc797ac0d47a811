//! Correlation analysis, ranking quality and training-budget curves.

mod budget;
mod ndcg;
mod report;
mod spearman;
mod truth;

pub use budget::{
    budget_curve, macro_curve, mean_curve, oracle_curve, random_baseline, savings_summary, BudgetCurve,
    BudgetPoint, Savings, MACRO_AVERAGE,
};
pub use ndcg::{average_ndcg, ndcg_at_k, random_ndcg, NdcgCurve, NdcgPoint};
pub use report::{
    build_report, render_summary, runtime_accounting, write_budget_csv, write_correlations_csv, write_ndcg_csv,
    BudgetSection, EvalConfig, EvaluationReport, ReportMetadata, RuntimeAccounting, RuntimeSection, TargetBudget,
    REPORT_SCHEMA_VERSION,
};
pub use spearman::{midranks, spearman_exact_p, spearman_rho, CorrelationResult, ALPHA, EXACT_MAX_N};
pub use truth::{TargetTruth, TruthTable};

use crate::error::Result;
use crate::features::{schema, PairFeatures};
use crate::ranker::{join, PerformanceRecord};

/// Spearman correlation of every feature with macro-F1, per setting, over
/// all (source, target) pairs. Undefined correlations are reported as such
/// without affecting other rows.
pub fn correlation_table(
    features: &[PairFeatures],
    performances: &[PerformanceRecord],
    n_s_settings: &[usize],
) -> Result<Vec<CorrelationResult>> {
    let joined = join(features, performances, n_s_settings)?;
    let mut settings = n_s_settings.to_vec();
    settings.sort_unstable();
    settings.dedup();
    let mut out = Vec::new();
    for n_s in settings {
        let rows: Vec<_> = joined.iter().filter(|(f, _)| f.n_s == n_s).collect();
        let y: Vec<f64> = rows.iter().map(|(_, y)| *y).collect();
        for (i, name) in schema().iter().enumerate() {
            let x: Vec<f64> = rows.iter().map(|(f, _)| f.values[i]).collect();
            out.push(CorrelationResult::compute(name.clone(), n_s, &x, &y));
        }
    }
    Ok(out)
}
