use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::ranker::PerformanceRecord;

/// Observed outcomes of every candidate source for one target.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TargetTruth {
    pub f1: BTreeMap<String, f64>,
    pub runtime_hours: BTreeMap<String, f64>,
}

impl TargetTruth {
    pub fn candidates(&self) -> impl Iterator<Item = &str> {
        self.f1.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.f1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f1.is_empty()
    }

    /// Candidates ordered by f1 descending, ties by id.
    pub fn ideal_order(&self) -> Vec<&str> {
        let mut v: Vec<(&str, f64)> = self.f1.iter().map(|(s, f)| (s.as_str(), *f)).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        v.into_iter().map(|(s, _)| s).collect()
    }

    /// Checks that `order` lists every candidate exactly once.
    pub fn check_permutation(&self, order: &[&str]) -> Result<()> {
        let seen: BTreeSet<&str> = order.iter().copied().collect();
        if seen.len() != order.len() || order.len() != self.len() || !order.iter().all(|s| self.f1.contains_key(*s)) {
            return Err(Error::invalid("ordering is not a permutation of the candidates"));
        }
        Ok(())
    }
}

/// Ground truth keyed by `(target, n_s)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TruthTable {
    targets: BTreeMap<(String, usize), TargetTruth>,
}

impl TruthTable {
    pub fn from_records(records: &[PerformanceRecord]) -> Result<Self> {
        let mut targets: BTreeMap<(String, usize), TargetTruth> = BTreeMap::new();
        for r in records {
            r.validate()?;
            let t = targets.entry((r.target_id.clone(), r.n_s)).or_default();
            if t.f1.insert(r.source_id.clone(), r.macro_f1).is_some() {
                return Err(Error::invalid(format!(
                    "duplicate performance record ({}, {}, {})",
                    r.source_id, r.target_id, r.n_s
                )));
            }
            t.runtime_hours.insert(r.source_id.clone(), r.train_runtime_hours);
        }
        Ok(TruthTable { targets })
    }

    pub fn get(&self, target: &str, n_s: usize) -> Option<&TargetTruth> {
        self.targets.get(&(target.to_owned(), n_s))
    }

    pub fn settings(&self) -> BTreeSet<usize> {
        self.targets.keys().map(|k| k.1).collect()
    }

    /// Targets present for one setting, sorted.
    pub fn targets(&self, n_s: usize) -> Vec<&str> {
        self.targets
            .keys()
            .filter(|k| k.1 == n_s)
            .map(|k| k.0.as_str())
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize, &TargetTruth)> {
        self.targets.iter().map(|((t, n), v)| (t.as_str(), *n, v))
    }
}
