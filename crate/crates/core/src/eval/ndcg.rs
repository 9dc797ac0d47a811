//! NDCG@K with linear gain and `log2(i + 1)` discount.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::truth::{TargetTruth, TruthTable};
use crate::corpus::domain_seed;
use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::ranker::RankedSources;

fn dcg<'a>(gains: impl Iterator<Item = f64> + 'a) -> f64 {
    gains
        .enumerate()
        .map(|(i, g)| g / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG of the first `k` entries of `order`, using each candidate's f1 as
/// its gain. Returns 1 when every gain is zero.
pub fn ndcg_at_k(order: &[&str], truth: &TargetTruth, k: usize) -> Result<f64> {
    if k == 0 || k > order.len() {
        return Err(Error::KOutOfRange { k, n: order.len() });
    }
    truth.check_permutation(order)?;
    let got = dcg(order[..k].iter().map(|s| truth.f1[*s]));
    let ideal = dcg(truth.ideal_order()[..k].iter().map(|s| truth.f1[*s]));
    if ideal <= 0.0 {
        return Ok(1.0);
    }
    Ok((got / ideal).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NdcgPoint {
    pub k: usize,
    pub mean: f64,
    pub std: f64,
}

/// Mean NDCG@K over targets (and seeds or permutations) for one setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NdcgCurve {
    /// Feature set name, or `RANDOM` for the permutation baseline.
    pub label: String,
    pub n_s: usize,
    pub n_cells: usize,
    pub points: Vec<NdcgPoint>,
}

impl NdcgCurve {
    pub fn at(&self, k: usize) -> Option<f64> {
        self.points.iter().find(|p| p.k == k).map(|p| p.mean)
    }
}

fn summarize(label: String, n_s: usize, k_grid: &[usize], cells: &[Vec<f64>]) -> NdcgCurve {
    let n = cells.len() as f64;
    let points = k_grid
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let mean = cells.iter().map(|c| c[j]).sum::<f64>() / n;
            let var = cells.iter().map(|c| (c[j] - mean).powi(2)).sum::<f64>() / n;
            NdcgPoint { k, mean, std: var.sqrt() }
        })
        .collect();
    NdcgCurve {
        label,
        n_s,
        n_cells: cells.len(),
        points,
    }
}

/// Averages NDCG@K across targets and seeds for every (feature set, n_s)
/// present in `rankings`. Every group must cover all targets of its setting
/// for every seed seen anywhere in `rankings`.
pub fn average_ndcg(rankings: &[RankedSources], truth: &TruthTable, k_grid: &[usize]) -> Result<Vec<NdcgCurve>> {
    if k_grid.is_empty() {
        return Err(Error::invalid("empty K grid"));
    }
    let seeds: BTreeSet<u64> = rankings.iter().map(|r| r.seed).collect();
    let mut groups: BTreeMap<(usize, FeatureSet), Vec<&RankedSources>> = BTreeMap::new();
    for r in rankings {
        groups.entry((r.n_s, r.feature_set)).or_default().push(r);
    }
    let mut out = Vec::new();
    for ((n_s, fs), rs) in groups {
        let have: BTreeSet<(&str, u64)> = rs.iter().map(|r| (r.target_id.as_str(), r.seed)).collect();
        let mut missing = Vec::new();
        for t in truth.targets(n_s) {
            for &s in &seeds {
                if !have.contains(&(t, s)) {
                    missing.push(format!("{t}/seed {s}"));
                }
            }
        }
        if !missing.is_empty() || have.len() != rs.len() {
            return Err(Error::invalid(format!(
                "incomplete rankings for {fs} at n_s={n_s}: missing {}",
                if missing.is_empty() { "nothing, but duplicates present".to_string() } else { missing.join(", ") }
            )));
        }
        let mut cells = Vec::with_capacity(rs.len());
        for r in rs {
            let t = truth
                .get(&r.target_id, n_s)
                .ok_or_else(|| Error::UnknownTarget(r.target_id.clone()))?;
            let order: Vec<&str> = r.sources().collect();
            cells.push(
                k_grid
                    .iter()
                    .map(|&k| ndcg_at_k(&order, t, k))
                    .collect::<Result<Vec<f64>>>()?,
            );
        }
        out.push(summarize(fs.name().to_owned(), n_s, k_grid, &cells));
    }
    Ok(out)
}

/// NDCG@K of uniformly random orderings, `n_permutations` per target.
pub fn random_ndcg(
    truth: &TruthTable,
    n_s: usize,
    k_grid: &[usize],
    n_permutations: usize,
    seed: u64,
) -> Result<NdcgCurve> {
    if n_permutations == 0 {
        return Err(Error::invalid("need at least one permutation"));
    }
    let mut cells = Vec::new();
    for target in truth.targets(n_s) {
        let t = truth.get(target, n_s).expect("listed target");
        let mut rng = ChaCha8Rng::seed_from_u64(domain_seed(seed, target));
        let mut order: Vec<&str> = t.candidates().collect();
        for _ in 0..n_permutations {
            order.shuffle(&mut rng);
            cells.push(
                k_grid
                    .iter()
                    .map(|&k| ndcg_at_k(&order, t, k))
                    .collect::<Result<Vec<f64>>>()?,
            );
        }
    }
    if cells.is_empty() {
        return Err(Error::invalid(format!("no targets for n_s={n_s}")));
    }
    Ok(summarize("RANDOM".into(), n_s, k_grid, &cells))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth(pairs: &[(&str, f64)]) -> TargetTruth {
        TargetTruth {
            f1: pairs.iter().map(|(s, f)| (s.to_string(), *f)).collect(),
            runtime_hours: pairs.iter().map(|(s, _)| (s.to_string(), 1.0)).collect(),
        }
    }

    #[test]
    fn perfect_order_is_one() {
        let t = truth(&[("a", 0.9), ("b", 0.6), ("c", 0.75)]);
        for k in 1..=3 {
            assert_eq!(ndcg_at_k(&["a", "c", "b"], &t, k).unwrap(), 1.0);
        }
    }

    #[test]
    fn swapped_pair() {
        let t = truth(&[("a", 0.9), ("b", 0.6)]);
        let v = ndcg_at_k(&["b", "a"], &t, 2).unwrap();
        let want = (0.6 + 0.9 / 3f64.log2()) / (0.9 + 0.6 / 3f64.log2());
        assert!((v - want).abs() < 1e-15);
        assert!((v - 0.913_401_592_471_554_4).abs() < 1e-12);
    }

    #[test]
    fn equal_truths_are_always_perfect() {
        let t = truth(&[("a", 0.7), ("b", 0.7), ("c", 0.7)]);
        assert_eq!(ndcg_at_k(&["c", "a", "b"], &t, 2).unwrap(), 1.0);
        let z = truth(&[("a", 0.0), ("b", 0.0)]);
        assert_eq!(ndcg_at_k(&["b", "a"], &z, 1).unwrap(), 1.0);
    }

    #[test]
    fn k_range_and_permutation_checks() {
        let t = truth(&[("a", 0.9), ("b", 0.6)]);
        assert!(matches!(ndcg_at_k(&["a", "b"], &t, 0), Err(Error::KOutOfRange { .. })));
        assert!(matches!(ndcg_at_k(&["a", "b"], &t, 3), Err(Error::KOutOfRange { .. })));
        assert!(ndcg_at_k(&["a", "a"], &t, 1).is_err());
    }
}
