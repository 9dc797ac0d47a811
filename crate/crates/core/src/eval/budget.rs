//! Best-f1-so-far versus cumulative training cost when candidate sources
//! are tried in a given order, and the resulting savings.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::truth::TargetTruth;
use crate::corpus::domain_seed;
use crate::error::{Error, Result};

/// Label of curves aggregated over targets.
pub const MACRO_AVERAGE: &str = "macro-average";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetPoint {
    pub k: usize,
    pub best_f1: f64,
    pub cumulative_runtime_hours: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetCurve {
    pub target_id: String,
    pub points: Vec<BudgetPoint>,
}

impl BudgetCurve {
    /// Builds a curve from explicit `(best_f1, cumulative_runtime)` pairs at
    /// K = 1, 2, ...; used for externally digitized curves.
    pub fn from_points(target_id: impl Into<String>, pts: &[(f64, f64)]) -> Self {
        BudgetCurve {
            target_id: target_id.into(),
            points: pts
                .iter()
                .enumerate()
                .map(|(i, &(f, r))| BudgetPoint {
                    k: i + 1,
                    best_f1: f,
                    cumulative_runtime_hours: r,
                })
                .collect(),
        }
    }

    pub fn exhaustive_runtime(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.cumulative_runtime_hours)
    }

    pub fn max_f1(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.best_f1)
    }

    /// First point whose best f1 reaches the curve's final value.
    pub fn first_at_max(&self) -> Option<&BudgetPoint> {
        let target = self.max_f1();
        self.points.iter().find(|p| p.best_f1 >= target - 1e-12)
    }
}

/// Walks `order`: point K holds the best f1 among the first K candidates
/// and the summed runtime of those K candidates.
pub fn budget_curve(target_id: &str, order: &[&str], truth: &TargetTruth) -> Result<BudgetCurve> {
    truth.check_permutation(order)?;
    let mut best = f64::NEG_INFINITY;
    let mut cost = 0.0;
    let points = order
        .iter()
        .enumerate()
        .map(|(i, s)| {
            best = best.max(truth.f1[*s]);
            cost += truth.runtime_hours[*s];
            BudgetPoint {
                k: i + 1,
                best_f1: best,
                cumulative_runtime_hours: cost,
            }
        })
        .collect();
    Ok(BudgetCurve {
        target_id: target_id.to_owned(),
        points,
    })
}

/// Curve of the truth-descending ordering; the best attainable.
pub fn oracle_curve(target_id: &str, truth: &TargetTruth) -> Result<BudgetCurve> {
    budget_curve(target_id, &truth.ideal_order(), truth)
}

/// Pointwise mean of curves with equal length.
pub fn mean_curve(target_id: &str, curves: &[BudgetCurve]) -> Result<BudgetCurve> {
    combine(target_id, curves, false)
}

/// Pointwise mean of best f1 and pointwise sum of runtime across targets.
pub fn macro_curve(curves: &[BudgetCurve]) -> Result<BudgetCurve> {
    combine(MACRO_AVERAGE, curves, true)
}

fn combine(target_id: &str, curves: &[BudgetCurve], sum_runtime: bool) -> Result<BudgetCurve> {
    let first = curves.first().ok_or_else(|| Error::invalid("no curves to combine"))?;
    let len = first.points.len();
    if curves.iter().any(|c| c.points.len() != len) {
        return Err(Error::invalid("curves differ in length"));
    }
    let n = curves.len() as f64;
    let points = (0..len)
        .map(|i| {
            let f = curves.iter().map(|c| c.points[i].best_f1).sum::<f64>() / n;
            let r = curves.iter().map(|c| c.points[i].cumulative_runtime_hours).sum::<f64>();
            BudgetPoint {
                k: i + 1,
                best_f1: f,
                cumulative_runtime_hours: if sum_runtime { r } else { r / n },
            }
        })
        .collect();
    Ok(BudgetCurve {
        target_id: target_id.to_owned(),
        points,
    })
}

/// Mean curve of one uniformly random ordering per seed.
pub fn random_baseline(target_id: &str, truth: &TargetTruth, seeds: &[u64]) -> Result<BudgetCurve> {
    if seeds.is_empty() {
        return Err(Error::invalid("random baseline needs at least one seed"));
    }
    let curves = seeds
        .iter()
        .map(|&seed| {
            let mut order: Vec<&str> = truth.candidates().collect();
            let mut rng = ChaCha8Rng::seed_from_u64(domain_seed(seed, target_id));
            order.shuffle(&mut rng);
            budget_curve(target_id, &order, truth)
        })
        .collect::<Result<Vec<_>>>()?;
    mean_curve(target_id, &curves)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Savings {
    /// First K at which the curve reaches its maximum f1.
    pub k_star: usize,
    pub best_f1: f64,
    pub runtime_at_k_star_hours: f64,
    pub exhaustive_runtime_hours: f64,
    /// `1 − runtime@K* / exhaustive`.
    pub training_saving: f64,
    pub overhead_hours: f64,
    /// `1 − (runtime@K* + overhead) / exhaustive`.
    pub end_to_end_saving: f64,
}

/// Savings of stopping at K* instead of trying every candidate, with
/// `overhead_hours` of feature generation and regression charged to the
/// ranked search.
pub fn savings_summary(curve: &BudgetCurve, overhead_hours: f64) -> Result<Savings> {
    let at = curve
        .first_at_max()
        .ok_or_else(|| Error::invalid("empty budget curve"))?;
    let exhaustive = curve.exhaustive_runtime();
    if !(exhaustive > 0.0) {
        return Err(Error::invalid("exhaustive runtime must be positive"));
    }
    if !(overhead_hours >= 0.0) {
        return Err(Error::invalid("overhead must be non-negative"));
    }
    Ok(Savings {
        k_star: at.k,
        best_f1: at.best_f1,
        runtime_at_k_star_hours: at.cumulative_runtime_hours,
        exhaustive_runtime_hours: exhaustive,
        training_saving: 1.0 - at.cumulative_runtime_hours / exhaustive,
        overhead_hours,
        end_to_end_saving: 1.0 - (at.cumulative_runtime_hours + overhead_hours) / exhaustive,
    })
}
