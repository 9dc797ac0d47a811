use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::budget::{
    budget_curve, macro_curve, mean_curve, oracle_curve, random_baseline, savings_summary, BudgetCurve, Savings,
};
use super::ndcg::{average_ndcg, random_ndcg, NdcgCurve};
use super::spearman::CorrelationResult;
use super::truth::TruthTable;
use super::correlation_table;
use crate::error::{Error, Result};
use crate::features::{fmt_f64, FeatureSet, PairFeatures, StageTimings};
use crate::ranker::{PerformanceRecord, RankedSources};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub k_grid: Vec<usize>,
    /// Random permutations per target for the NDCG baseline.
    pub random_permutations: usize,
    pub random_seed: u64,
    /// Seeds of the random budget-curve baseline.
    pub budget_seeds: Vec<u64>,
    /// Feature set whose rankings drive the budget curves.
    pub budget_feature_set: FeatureSet,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k_grid: vec![1, 3, 5, 10],
            random_permutations: 100,
            random_seed: 0,
            budget_seeds: vec![0, 1, 2, 3, 4],
            budget_feature_set: FeatureSet::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub ndcg_gain: String,
    pub ndcg_discount: String,
    pub ranking_tie_break: String,
    pub p_value: String,
    pub log_base: String,
    pub oracle_curve: String,
    pub config: EvalConfig,
}

impl ReportMetadata {
    fn new(config: &EvalConfig) -> Self {
        ReportMetadata {
            ndcg_gain: "linear in macro_f1".into(),
            ndcg_discount: "log2(rank + 1)".into(),
            ranking_tie_break: "source id ascending".into(),
            p_value: "two-sided Student-t approximation on midrank Spearman rho".into(),
            log_base: "e".into(),
            oracle_curve: "extension: truth-descending ordering, bounds attainable savings".into(),
            config: config.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetBudget {
    pub target: String,
    pub mean_k_star: f64,
    /// Mean over seeds of runtime@K* / exhaustive runtime.
    pub mean_runtime_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSection {
    pub n_s: usize,
    pub feature_set: FeatureSet,
    pub predicted: BudgetCurve,
    pub random: BudgetCurve,
    pub oracle: BudgetCurve,
    /// Training-time savings on the macro-averaged predicted curve.
    pub savings: Savings,
    pub mean_target_runtime_ratio: f64,
    pub per_target: Vec<TargetBudget>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub metadata: ReportMetadata,
    pub correlations: Vec<CorrelationResult>,
    pub ndcg: Vec<NdcgCurve>,
    pub budget: Vec<BudgetSection>,
}

impl EvaluationReport {
    pub fn ndcg_curve(&self, label: &str, n_s: usize) -> Option<&NdcgCurve> {
        self.ndcg.iter().find(|c| c.label == label && c.n_s == n_s)
    }

    pub fn correlation(&self, measure: &str, n_s: usize) -> Option<&CorrelationResult> {
        self.correlations
            .iter()
            .find(|c| c.measure == measure && c.n_s == n_s)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

fn budget_section(
    n_s: usize,
    fs: FeatureSet,
    rankings: &[RankedSources],
    truth: &TruthTable,
    cfg: &EvalConfig,
) -> Result<BudgetSection> {
    let mut predicted_by_target = Vec::new();
    let mut random_by_target = Vec::new();
    let mut oracle_by_target = Vec::new();
    let mut per_target = Vec::new();
    for target in truth.targets(n_s) {
        let t = truth.get(target, n_s).expect("listed target");
        let cells: Vec<&RankedSources> = rankings
            .iter()
            .filter(|r| r.n_s == n_s && r.feature_set == fs && r.target_id == target)
            .collect();
        if cells.is_empty() {
            return Err(Error::invalid(format!("no {fs} ranking for {target} at n_s={n_s}")));
        }
        let curves = cells
            .iter()
            .map(|r| budget_curve(target, &r.sources().collect::<Vec<_>>(), t))
            .collect::<Result<Vec<_>>>()?;
        let mut k_sum = 0.0;
        let mut ratio_sum = 0.0;
        for c in &curves {
            let s = savings_summary(c, 0.0)?;
            k_sum += s.k_star as f64;
            ratio_sum += s.runtime_at_k_star_hours / s.exhaustive_runtime_hours;
        }
        let n = curves.len() as f64;
        per_target.push(TargetBudget {
            target: target.to_owned(),
            mean_k_star: k_sum / n,
            mean_runtime_ratio: ratio_sum / n,
        });
        predicted_by_target.push(mean_curve(target, &curves)?);
        random_by_target.push(random_baseline(target, t, &cfg.budget_seeds)?);
        oracle_by_target.push(oracle_curve(target, t)?);
    }
    let predicted = macro_curve(&predicted_by_target)?;
    let savings = savings_summary(&predicted, 0.0)?;
    let mean_target_runtime_ratio =
        per_target.iter().map(|t| t.mean_runtime_ratio).sum::<f64>() / per_target.len() as f64;
    Ok(BudgetSection {
        n_s,
        feature_set: fs,
        predicted,
        random: macro_curve(&random_by_target)?,
        oracle: macro_curve(&oracle_by_target)?,
        savings,
        mean_target_runtime_ratio,
        per_target,
    })
}

/// Correlations, NDCG curves (with a random baseline) and budget curves for
/// one set of rankings. Contains no wall-clock data, so identical inputs
/// serialize identically.
pub fn build_report(
    features: &[PairFeatures],
    performances: &[PerformanceRecord],
    rankings: &[RankedSources],
    cfg: &EvalConfig,
) -> Result<EvaluationReport> {
    let truth = TruthTable::from_records(performances)?;
    let settings: Vec<usize> = truth.settings().into_iter().collect();
    let correlations = correlation_table(features, performances, &settings)?;

    let mut k_grid = cfg.k_grid.clone();
    k_grid.sort_unstable();
    k_grid.dedup();
    let min_candidates = truth.iter().map(|(_, _, t)| t.len()).min().unwrap_or(0);
    if k_grid.iter().any(|&k| k == 0 || k > min_candidates) {
        return Err(Error::KOutOfRange {
            k: *k_grid.last().unwrap_or(&0),
            n: min_candidates,
        });
    }
    let mut ndcg = average_ndcg(rankings, &truth, &k_grid)?;
    for &n_s in &settings {
        ndcg.push(random_ndcg(&truth, n_s, &k_grid, cfg.random_permutations, cfg.random_seed)?);
    }
    let budget = settings
        .iter()
        .map(|&n_s| budget_section(n_s, cfg.budget_feature_set, rankings, &truth, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvaluationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        metadata: ReportMetadata::new(cfg),
        correlations,
        ndcg,
        budget,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeSection {
    pub n_s: usize,
    pub savings: Savings,
}

/// Stage timings and end-to-end savings; kept apart from the report because
/// wall-clock values differ between runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeAccounting {
    pub timings: StageTimings,
    pub overhead_hours: f64,
    pub sections: Vec<RuntimeSection>,
}

pub fn runtime_accounting(report: &EvaluationReport, timings: StageTimings) -> Result<RuntimeAccounting> {
    let overhead_hours = timings.total_secs() / 3600.0;
    let sections = report
        .budget
        .iter()
        .map(|b| {
            Ok(RuntimeSection {
                n_s: b.n_s,
                savings: savings_summary(&b.predicted, overhead_hours)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RuntimeAccounting {
        timings,
        overhead_hours,
        sections,
    })
}

pub fn write_budget_csv(path: &Path, curve: &BudgetCurve) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["k", "best_f1", "cumulative_runtime_hours"])?;
    for p in &curve.points {
        w.write_record([p.k.to_string(), fmt_f64(p.best_f1), fmt_f64(p.cumulative_runtime_hours)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ndcg_csv(path: &Path, curve: &NdcgCurve) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["k", "mean_ndcg", "std_ndcg"])?;
    for p in &curve.points {
        w.write_record([p.k.to_string(), fmt_f64(p.mean), fmt_f64(p.std)])?;
    }
    w.flush()?;
    Ok(())
}

/// `measure,n_s,rho,p_value,significant,n` in report order.
pub fn write_correlations_csv(path: &Path, rows: &[CorrelationResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["measure", "n_s", "rho", "p_value", "significant", "n"])?;
    for r in rows {
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        w.write_record([
            r.measure.clone(),
            r.n_s.to_string(),
            opt(r.rho),
            opt(r.p_value),
            r.significant.to_string(),
            r.n.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text rendering of the report.
pub fn render_summary(report: &EvaluationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Spearman correlation with macro-F1");
    for c in &report.correlations {
        match c.rho {
            Some(rho) => {
                let _ = writeln!(
                    s,
                    "  {:<32} n_s={:<6} rho={:+.4}{} (p={:.3e}, n={})",
                    c.measure,
                    c.n_s,
                    rho,
                    if c.significant { "*" } else { " " },
                    c.p_value.unwrap_or(f64::NAN),
                    c.n
                );
            }
            None => {
                let _ = writeln!(s, "  {:<32} n_s={:<6} undefined", c.measure, c.n_s);
            }
        }
    }
    let _ = writeln!(s, "\nMean NDCG@K");
    for c in &report.ndcg {
        let pts: Vec<String> = c.points.iter().map(|p| format!("@{}={:.4}", p.k, p.mean)).collect();
        let _ = writeln!(s, "  {:<15} n_s={:<6} {}", c.label, c.n_s, pts.join(" "));
    }
    let _ = writeln!(s, "\nBudget (macro-average over targets)");
    for b in &report.budget {
        let sv = &b.savings;
        let _ = writeln!(
            s,
            "  n_s={} {}: best F1 {:.4} reached at K*={} after {:.2}h of {:.2}h ({:.1}% saved); mean per-target runtime ratio {:.3}",
            b.n_s,
            b.feature_set,
            sv.best_f1,
            sv.k_star,
            sv.runtime_at_k_star_hours,
            sv.exhaustive_runtime_hours,
            100.0 * sv.training_saving,
            b.mean_target_runtime_ratio
        );
    }
    s
}
