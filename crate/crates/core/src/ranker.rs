//! Gradient-boosted regression trees and the leave-one-target-out ranking
//! protocol.
//!
//! Boosting uses squared-error loss: every round fits one exact-greedy
//! regression tree to the current residuals and adds `learning_rate` times
//! its output to the prediction.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{schema, FeatureSet, PairFeatures};
use crate::hash::FieldHasher;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtParams {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub learning_rate: f64,
    /// Fraction of rows drawn (without replacement) per round.
    pub subsample: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            n_rounds: 100,
            max_depth: 3,
            min_leaf: 1,
            learning_rate: 0.1,
            subsample: 1.0,
        }
    }
}

impl GbtParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 || self.min_leaf == 0 {
            return Err(Error::invalid("max_depth and min_leaf must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::invalid("learning_rate must lie in (0, 1]"));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::invalid("subsample must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    /// Rows with `x[feature] < threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { value: f64 },
}

/// Regression tree stored as a node array rooted at index 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] < threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbtModel {
    pub trees: Vec<Tree>,
    pub learning_rate: f64,
    pub base_prediction: f64,
    pub feature_schema: Vec<String>,
    pub params: GbtParams,
    pub seed: u64,
}

impl GbtModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.feature_schema.len() {
            return Err(Error::SchemaMismatch {
                expected: self.feature_schema.len(),
                got: x.len(),
            });
        }
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        Ok(self.base_prediction + self.learning_rate * sum)
    }

    /// Predicts from `(name, value)` pairs, which must follow the model's
    /// schema exactly.
    pub fn predict_named(&self, x: &[(&str, f64)]) -> Result<f64> {
        if x.len() != self.feature_schema.len()
            || x.iter().zip(&self.feature_schema).any(|((n, _), s)| n != s)
        {
            return Err(Error::SchemaMismatch {
                expected: self.feature_schema.len(),
                got: x.len(),
            });
        }
        let v: Vec<f64> = x.iter().map(|p| p.1).collect();
        self.predict(&v)
    }

    pub fn schema_hash(&self) -> String {
        self.feature_schema
            .iter()
            .fold(FieldHasher::new(), |h, n| h.field(n))
            .finish()
    }

    /// Versioned flat text: `key=value` header lines, then one CSV line per
    /// node `tree,node,feature,threshold,left,right,leaf_value`.
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut s = String::from("#xferdiv-gbt v1\n");
        let _ = writeln!(s, "schema_hash={}", self.schema_hash());
        let _ = writeln!(s, "features={}", self.feature_schema.join(","));
        let _ = writeln!(
            s,
            "n_rounds={} max_depth={} min_leaf={} learning_rate={} subsample={} seed={}",
            p.n_rounds, p.max_depth, p.min_leaf, self.learning_rate, p.subsample, self.seed
        );
        let _ = writeln!(s, "base={}", self.base_prediction);
        s.push_str("tree,node,feature,threshold,left,right,leaf_value\n");
        for (t, tree) in self.trees.iter().enumerate() {
            for (i, node) in tree.nodes.iter().enumerate() {
                let _ = match node {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => writeln!(s, "{t},{i},{feature},{threshold},{left},{right},"),
                    Node::Leaf { value } => writeln!(s, "{t},{i},,,,,{value}"),
                };
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::parse("<model>", line, msg.to_string());
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, "#xferdiv-gbt v1")) => {}
            _ => return Err(bad(1, "unsupported model header")),
        }
        let mut kv: HashMap<String, String> = HashMap::new();
        for (n, line) in lines.by_ref() {
            if line.starts_with("tree,") {
                break;
            }
            let kvs: Vec<&str> = if line.starts_with("features=") {
                vec![line]
            } else {
                line.split_whitespace().collect()
            };
            for f in kvs {
                let (k, v) = f.split_once('=').ok_or_else(|| bad(n, "expected key=value"))?;
                kv.insert(k.to_owned(), v.to_owned());
            }
        }
        let get = |k: &str| kv.get(k).cloned().ok_or_else(|| bad(0, &format!("missing `{k}`")));
        let num = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| bad(0, &format!("bad `{k}`")))
        };
        let int = |k: &str| -> Result<u64> {
            get(k)?.parse().map_err(|_| bad(0, &format!("bad `{k}`")))
        };
        let features = get("features")?;
        let feature_schema: Vec<String> = if features.is_empty() {
            Vec::new()
        } else {
            features.split(',').map(str::to_owned).collect()
        };
        let learning_rate = num("learning_rate")?;
        let params = GbtParams {
            n_rounds: int("n_rounds")? as usize,
            max_depth: int("max_depth")? as usize,
            min_leaf: int("min_leaf")? as usize,
            learning_rate,
            subsample: num("subsample")?,
        };
        let model_hash = get("schema_hash")?;

        let mut trees: Vec<Tree> = Vec::new();
        for (n, line) in lines {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad(n, "expected 7 fields"));
            }
            let t: usize = f[0].parse().map_err(|_| bad(n, "bad tree index"))?;
            let i: usize = f[1].parse().map_err(|_| bad(n, "bad node index"))?;
            if t == trees.len() {
                trees.push(Tree { nodes: Vec::new() });
            }
            let tree = trees
                .get_mut(t)
                .filter(|tr| tr.nodes.len() == i)
                .ok_or_else(|| bad(n, "nodes out of order"))?;
            let node = if f[2].is_empty() {
                Node::Leaf {
                    value: f[6].parse().map_err(|_| bad(n, "bad leaf value"))?,
                }
            } else {
                let feature: usize = f[2].parse().map_err(|_| bad(n, "bad feature"))?;
                if feature >= feature_schema.len() {
                    return Err(bad(n, "feature index outside schema"));
                }
                Node::Split {
                    feature,
                    threshold: f[3].parse().map_err(|_| bad(n, "bad threshold"))?,
                    left: f[4].parse().map_err(|_| bad(n, "bad left"))?,
                    right: f[5].parse().map_err(|_| bad(n, "bad right"))?,
                }
            };
            tree.nodes.push(node);
        }
        let model = GbtModel {
            trees,
            learning_rate,
            base_prediction: num("base")?,
            feature_schema,
            params,
            seed: int("seed")?,
        };
        if model.schema_hash() != model_hash {
            return Err(Error::HashMismatch {
                what: "model feature schema",
                left: model.schema_hash(),
                right: model_hash,
            });
        }
        Ok(model)
    }
}

/// Row order used for training: lexicographic on features, then target.
fn normalized_order(x: &[Vec<f64>], y: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| {
        x[a].iter()
            .zip(&x[b])
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(y[a].total_cmp(&y[b]))
    });
    idx
}

#[derive(Clone, Copy, Default)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    ties: u32,
}

/// Running statistics of one node during a level scan.
#[derive(Clone, Copy, Default)]
struct Scan {
    n: usize,
    sum: f64,
    prev: f64,
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    sorted: &'a [Vec<usize>],
    params: &'a GbtParams,
}

impl Grower<'_> {
    /// Grows one tree on `residual` restricted to `active` rows.
    fn grow(&self, residual: &[f64], active: &[bool], rng: &mut ChaCha8Rng) -> Tree {
        let n_rows = self.x.len();
        let n_features = self.x.first().map_or(0, Vec::len);
        // node_of[row] = index into `open` of the node holding the row, or usize::MAX
        let mut node_of: Vec<usize> = (0..n_rows)
            .map(|r| if active[r] { 0 } else { usize::MAX })
            .collect();
        let mut nodes: Vec<Node> = vec![Node::Leaf { value: 0.0 }];
        // per open node: (tree node index, count, sum, sum of squares)
        let mut open: Vec<(usize, usize, f64, f64)> = vec![(0, 0, 0.0, 0.0)];
        for r in 0..n_rows {
            if active[r] {
                open[0].1 += 1;
                open[0].2 += residual[r];
                open[0].3 += residual[r] * residual[r];
            }
        }

        for _depth in 0..self.params.max_depth {
            let mut best = vec![Candidate::default(); open.len()];
            for f in 0..n_features {
                let mut scan = vec![Scan::default(); open.len()];
                for &r in &self.sorted[f] {
                    let k = node_of[r];
                    if k == usize::MAX {
                        continue;
                    }
                    let v = self.x[r][f];
                    let s = &mut scan[k];
                    let (_, n_tot, sum_tot, ss_tot) = open[k];
                    if s.n >= self.params.min_leaf && v > s.prev && n_tot - s.n >= self.params.min_leaf {
                        let (nl, nr) = (s.n as f64, (n_tot - s.n) as f64);
                        let sr = sum_tot - s.sum;
                        let gain = s.sum * s.sum / nl + sr * sr / nr - sum_tot * sum_tot / n_tot as f64;
                        let mut threshold = s.prev + (v - s.prev) / 2.0;
                        if threshold <= s.prev {
                            threshold = v;
                        }
                        offer(&mut best[k], gain, f, threshold, 1e-12 * ss_tot, rng);
                    }
                    s.n += 1;
                    s.sum += residual[r];
                    s.prev = v;
                }
            }

            let mut next: Vec<(usize, usize, f64, f64)> = Vec::new();
            let mut remap: Vec<Option<(usize, usize, f64, usize)>> = vec![None; open.len()];
            for (k, cand) in best.iter().enumerate() {
                if cand.ties == 0 {
                    continue;
                }
                let left = nodes.len();
                nodes.push(Node::Leaf { value: 0.0 });
                nodes.push(Node::Leaf { value: 0.0 });
                nodes[open[k].0] = Node::Split {
                    feature: cand.feature,
                    threshold: cand.threshold,
                    left,
                    right: left + 1,
                };
                let li = next.len();
                next.push((left, 0, 0.0, 0.0));
                next.push((left + 1, 0, 0.0, 0.0));
                remap[k] = Some((li, cand.feature, cand.threshold, li + 1));
            }
            if next.is_empty() {
                break;
            }
            for r in 0..n_rows {
                let k = node_of[r];
                if k == usize::MAX {
                    continue;
                }
                match remap[k] {
                    Some((li, f, thr, ri)) => {
                        let c = if self.x[r][f] < thr { li } else { ri };
                        node_of[r] = c;
                        next[c].1 += 1;
                        next[c].2 += residual[r];
                        next[c].3 += residual[r] * residual[r];
                    }
                    None => {
                        // Node stays a leaf; finalize its value now.
                        node_of[r] = usize::MAX;
                    }
                }
            }
            for (k, m) in remap.iter().enumerate() {
                if m.is_none() {
                    let (node, n, sum, _) = open[k];
                    nodes[node] = Node::Leaf {
                        value: if n > 0 { sum / n as f64 } else { 0.0 },
                    };
                }
            }
            open = next;
        }
        for &(node, n, sum, _) in &open {
            nodes[node] = Node::Leaf {
                value: if n > 0 { sum / n as f64 } else { 0.0 },
            };
        }
        Tree { nodes }
    }
}

/// Keeps the best split; among candidates within `tol` of the best gain one
/// is chosen uniformly at random (reservoir sampling with the model seed).
fn offer(best: &mut Candidate, gain: f64, feature: usize, threshold: f64, tol: f64, rng: &mut ChaCha8Rng) {
    if !(gain > tol) {
        return;
    }
    if best.ties == 0 || gain > best.gain + tol {
        *best = Candidate {
            gain,
            feature,
            threshold,
            ties: 1,
        };
    } else if (gain - best.gain).abs() <= tol {
        best.ties += 1;
        if rng.gen_range(0..best.ties) == 0 {
            best.feature = feature;
            best.threshold = threshold;
            best.gain = best.gain.max(gain);
        }
    }
}

/// Per-round training mean squared error, recorded by [`train_gbt_traced`].
pub type LossTrace = Vec<f64>;

/// Fits a boosted ensemble on feature rows `x` and targets `y`.
pub fn train_gbt(
    x: &[Vec<f64>],
    y: &[f64],
    feature_schema: Vec<String>,
    params: &GbtParams,
    seed: u64,
) -> Result<GbtModel> {
    train_gbt_traced(x, y, feature_schema, params, seed).map(|(m, _)| m)
}

/// Like [`train_gbt`], also returning the training MSE before the first
/// round and after each round.
pub fn train_gbt_traced(
    x: &[Vec<f64>],
    y: &[f64],
    feature_schema: Vec<String>,
    params: &GbtParams,
    seed: u64,
) -> Result<(GbtModel, LossTrace)> {
    params.validate()?;
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::invalid("at least two training rows are required"));
    }
    if let Some(row) = x.iter().find(|r| r.len() != feature_schema.len()) {
        return Err(Error::SchemaMismatch {
            expected: feature_schema.len(),
            got: row.len(),
        });
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training data".into()));
    }

    let order = normalized_order(x, y);
    let x: Vec<Vec<f64>> = order.iter().map(|&i| x[i].clone()).collect();
    let y: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let n = y.len();

    // Offsetting by the first target keeps the mean exact for constant y.
    let base = y[0] + y.iter().map(|v| v - y[0]).sum::<f64>() / n as f64;
    let mut model = GbtModel {
        trees: Vec::new(),
        learning_rate: params.learning_rate,
        base_prediction: base,
        feature_schema,
        params: *params,
        seed,
    };
    let mut pred = vec![base; n];
    let mse = |pred: &[f64]| y.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64;
    let mut trace = vec![mse(&pred)];
    if y.iter().all(|v| *v == y[0]) {
        return Ok((model, trace));
    }

    let n_features = model.feature_schema.len();
    let sorted: Vec<Vec<usize>> = (0..n_features)
        .map(|f| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
            idx
        })
        .collect();
    let grower = Grower {
        x: &x,
        sorted: &sorted,
        params,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_sample = ((params.subsample * n as f64).round() as usize).clamp(1, n);
    let mut residual = vec![0.0; n];
    for _ in 0..params.n_rounds {
        for i in 0..n {
            residual[i] = y[i] - pred[i];
        }
        let active = if n_sample < n {
            let mut a = vec![false; n];
            for i in rand::seq::index::sample(&mut rng, n, n_sample) {
                a[i] = true;
            }
            a
        } else {
            vec![true; n]
        };
        let tree = grower.grow(&residual, &active, &mut rng);
        for i in 0..n {
            pred[i] += params.learning_rate * tree.predict(&x[i]);
        }
        model.trees.push(tree);
        trace.push(mse(&pred));
    }
    Ok((model, trace))
}

/// Observed performance of one source-tuned model on one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceRecord {
    #[serde(rename = "source")]
    pub source_id: String,
    #[serde(rename = "target")]
    pub target_id: String,
    pub n_s: usize,
    pub macro_f1: f64,
    pub train_runtime_hours: f64,
}

impl PerformanceRecord {
    pub fn validate(&self) -> Result<()> {
        if self.source_id == self.target_id {
            return Err(Error::invalid(format!(
                "performance record pairs `{}` with itself",
                self.source_id
            )));
        }
        if !(0.0..=1.0).contains(&self.macro_f1) {
            return Err(Error::invalid(format!(
                "macro_f1 {} outside [0, 1] for ({}, {})",
                self.macro_f1, self.source_id, self.target_id
            )));
        }
        if !(self.train_runtime_hours >= 0.0 && self.train_runtime_hours.is_finite()) {
            return Err(Error::invalid("train_runtime_hours must be finite and non-negative"));
        }
        Ok(())
    }
}

pub fn read_performance_csv(path: &Path) -> Result<Vec<PerformanceRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (n, rec) in r.deserialize::<PerformanceRecord>().enumerate() {
        let rec = rec?;
        rec.validate()
            .map_err(|e| Error::parse(path, n + 2, e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_performance_csv(path: &Path, rows: &[PerformanceRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Anything that belongs to a (source, target) pair.
pub trait PairKey {
    fn source(&self) -> &str;
    fn target(&self) -> &str;
}

impl PairKey for PairFeatures {
    fn source(&self) -> &str {
        &self.source_id
    }
    fn target(&self) -> &str {
        &self.target_id
    }
}

impl PairKey for PerformanceRecord {
    fn source(&self) -> &str {
        &self.source_id
    }
    fn target(&self) -> &str {
        &self.target_id
    }
}

impl<T: PairKey> PairKey for &T {
    fn source(&self) -> &str {
        (*self).source()
    }
    fn target(&self) -> &str {
        (*self).target()
    }
}

/// Splits rows into (train, test) where test holds every row whose target is
/// `held_out`. Rows with `held_out` as their source stay in train.
pub fn loto_split<'a, T: PairKey>(rows: &'a [T], held_out: &str) -> Result<(Vec<&'a T>, Vec<&'a T>)> {
    let (test, train): (Vec<&T>, Vec<&T>) = rows.iter().partition(|r| r.target() == held_out);
    if test.is_empty() {
        return Err(Error::UnknownTarget(held_out.to_owned()));
    }
    Ok((train, test))
}

/// Candidate sources for one target, best predicted first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSources {
    pub target_id: String,
    pub n_s: usize,
    pub feature_set: FeatureSet,
    pub seed: u64,
    pub ordering: Vec<(String, f64)>,
}

impl RankedSources {
    /// Sorts by score descending, ties by source id ascending.
    pub fn new(
        target_id: impl Into<String>,
        n_s: usize,
        feature_set: FeatureSet,
        seed: u64,
        mut scored: Vec<(String, f64)>,
    ) -> Self {
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        RankedSources {
            target_id: target_id.into(),
            n_s,
            feature_set,
            seed,
            ordering: scored,
        }
    }

    pub fn sources(&self) -> impl Iterator<Item = &str> {
        self.ordering.iter().map(|(s, _)| s.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct ProtocolCell {
    pub model: GbtModel,
    pub ranking: RankedSources,
}

#[derive(Debug, Clone)]
pub struct ProtocolSpec<'a> {
    pub feature_sets: &'a [FeatureSet],
    pub n_s_settings: &'a [usize],
    pub seeds: &'a [u64],
    pub params: GbtParams,
}

/// Checks that every feature row has a performance record and vice versa
/// for the requested settings, and returns `(features, macro_f1)` pairs.
pub fn join<'a>(
    features: &'a [PairFeatures],
    performances: &[PerformanceRecord],
    n_s_settings: &[usize],
) -> Result<Vec<(&'a PairFeatures, f64)>> {
    let wanted: BTreeSet<usize> = n_s_settings.iter().copied().collect();
    let perf: HashMap<(&str, &str, usize), f64> = performances
        .iter()
        .filter(|p| wanted.contains(&p.n_s))
        .map(|p| ((p.source_id.as_str(), p.target_id.as_str(), p.n_s), p.macro_f1))
        .collect();
    let feats: BTreeSet<(&str, &str, usize)> = features
        .iter()
        .filter(|f| wanted.contains(&f.n_s))
        .map(|f| (f.source_id.as_str(), f.target_id.as_str(), f.n_s))
        .collect();
    let mut missing: Vec<String> = Vec::new();
    for k in &feats {
        if !perf.contains_key(k) {
            missing.push(format!("({}, {}, {}) lacks performance", k.0, k.1, k.2));
        }
    }
    let mut perf_keys: Vec<_> = perf.keys().filter(|k| !feats.contains(*k)).collect();
    perf_keys.sort();
    for k in perf_keys {
        missing.push(format!("({}, {}, {}) lacks features", k.0, k.1, k.2));
    }
    for n in &wanted {
        if !feats.iter().any(|k| k.2 == *n) {
            missing.push(format!("no rows for n_s={n}"));
        }
    }
    if !missing.is_empty() {
        let total = missing.len();
        missing.truncate(20);
        let mut msg = missing.join("; ");
        if total > 20 {
            msg.push_str(&format!("; … {} more", total - 20));
        }
        return Err(Error::JoinGap(msg));
    }
    Ok(features
        .iter()
        .filter(|f| wanted.contains(&f.n_s))
        .map(|f| (f, perf[&(f.source_id.as_str(), f.target_id.as_str(), f.n_s)]))
        .collect())
}

/// Trains one model per (n_s, target, feature set, seed) on every other
/// target's rows and ranks the held-out target's candidate sources.
///
/// Cells are returned ordered by `(n_s, target, feature set, seed)`.
pub fn run_protocol(
    features: &[PairFeatures],
    performances: &[PerformanceRecord],
    spec: &ProtocolSpec<'_>,
) -> Result<Vec<ProtocolCell>> {
    spec.params.validate()?;
    if spec.feature_sets.is_empty() || spec.seeds.is_empty() || spec.n_s_settings.is_empty() {
        return Err(Error::invalid("protocol needs feature sets, seeds and settings"));
    }
    let joined = join(features, performances, spec.n_s_settings)?;
    let mut by_setting: BTreeMap<usize, Vec<(&PairFeatures, f64)>> = BTreeMap::new();
    for (f, y) in joined {
        by_setting.entry(f.n_s).or_default().push((f, y));
    }

    let mut jobs = Vec::new();
    for (&n_s, rows) in &by_setting {
        let targets: BTreeSet<&str> = rows.iter().map(|(f, _)| f.target_id.as_str()).collect();
        for t in targets {
            for &fs in spec.feature_sets {
                for &seed in spec.seeds {
                    jobs.push((n_s, t, fs, seed));
                }
            }
        }
    }

    jobs.par_iter()
        .map(|&(n_s, target, fs, seed)| {
            let rows = &by_setting[&n_s];
            let idx = fs.indices();
            let project = |f: &PairFeatures| idx.iter().map(|&i| f.values[i]).collect::<Vec<f64>>();
            let (train, test): (Vec<_>, Vec<_>) = rows.iter().partition(|(f, _)| f.target_id != target);
            let x: Vec<Vec<f64>> = train.iter().map(|(f, _)| project(f)).collect();
            let y: Vec<f64> = train.iter().map(|(_, y)| *y).collect();
            let names = idx.iter().map(|&i| schema()[i].clone()).collect();
            let model = train_gbt(&x, &y, names, &spec.params, seed)?;
            let scored = test
                .iter()
                .map(|(f, _)| Ok((f.source_id.clone(), model.predict(&project(f))?)))
                .collect::<Result<Vec<_>>>()?;
            let ranking = RankedSources::new(target, n_s, fs, seed, scored);
            Ok(ProtocolCell { model, ranking })
        })
        .collect()
}

/// `target,n_s,feature_set,seed,rank,source,predicted_score`, rank 1-based.
pub fn write_rankings_csv(path: &Path, rankings: &[RankedSources]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["target", "n_s", "feature_set", "seed", "rank", "source", "predicted_score"])?;
    for r in rankings {
        for (i, (src, score)) in r.ordering.iter().enumerate() {
            w.write_record([
                r.target_id.clone(),
                r.n_s.to_string(),
                r.feature_set.name().to_string(),
                r.seed.to_string(),
                (i + 1).to_string(),
                src.clone(),
                crate::features::fmt_f64(*score),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_rankings_csv(path: &Path) -> Result<Vec<RankedSources>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out: Vec<RankedSources> = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = n + 2;
        let p = |i: usize, what: &str| -> Result<String> {
            rec.get(i)
                .map(str::to_owned)
                .ok_or_else(|| Error::parse(path, line, format!("missing {what}")))
        };
        let target = p(0, "target")?;
        let n_s: usize = p(1, "n_s")?.parse().map_err(|_| Error::parse(path, line, "bad n_s"))?;
        let fs: FeatureSet = p(2, "feature_set")?.parse()?;
        let seed: u64 = p(3, "seed")?.parse().map_err(|_| Error::parse(path, line, "bad seed"))?;
        let rank: usize = p(4, "rank")?.parse().map_err(|_| Error::parse(path, line, "bad rank"))?;
        let source = p(5, "source")?;
        let score: f64 = p(6, "predicted_score")?
            .parse()
            .map_err(|_| Error::parse(path, line, "bad score"))?;
        let same = out.last().is_some_and(|l| {
            l.target_id == target && l.n_s == n_s && l.feature_set == fs && l.seed == seed
        });
        if !same {
            if rank != 1 {
                return Err(Error::parse(path, line, "ranking does not start at rank 1"));
            }
            out.push(RankedSources {
                target_id: target,
                n_s,
                feature_set: fs,
                seed,
                ordering: Vec::new(),
            });
        }
        let cur = out.last_mut().expect("pushed above");
        if rank != cur.ordering.len() + 1 {
            return Err(Error::parse(path, line, "ranks out of sequence"));
        }
        cur.ordering.push((source, score));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("f{i}")).collect()
    }

    #[test]
    fn constant_target_gives_base_only() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y = vec![0.7; 10];
        let m = train_gbt(&x, &y, names(1), &GbtParams::default(), 0).unwrap();
        assert!(m.trees.iter().all(|t| t.nodes.iter().all(|n| match n {
            Node::Leaf { value } => *value == 0.0,
            Node::Split { .. } => true,
        })));
        for v in [-5.0, 0.0, 3.3, 100.0] {
            assert_eq!(m.predict(&[v]).unwrap(), 0.7);
        }
    }

    #[test]
    fn fits_identity_line() {
        let x: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64 / 99.0]).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0]).collect();
        let (m, trace) = train_gbt_traced(&x, &y, names(1), &GbtParams::default(), 1).unwrap();
        let rmse = (y
            .iter()
            .zip(&x)
            .map(|(t, r)| (t - m.predict(r).unwrap()).powi(2))
            .sum::<f64>()
            / 100.0)
            .sqrt();
        assert!(rmse < 0.01, "rmse {rmse}");
        assert!(trace.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        assert!(m.trees.iter().all(|t| t.depth() <= 3));
    }

    #[test]
    fn input_validation() {
        let p = GbtParams::default();
        assert!(train_gbt(&[vec![1.0]], &[1.0], names(1), &p, 0).is_err());
        assert!(matches!(
            train_gbt(&[vec![1.0], vec![f64::NAN]], &[1.0, 2.0], names(1), &p, 0),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            train_gbt(&[vec![1.0], vec![2.0]], &[1.0, f64::INFINITY], names(1), &p, 0),
            Err(Error::NonFinite(_))
        ));
        let m = train_gbt(&[vec![1.0], vec![2.0]], &[1.0, 2.0], names(1), &p, 0).unwrap();
        assert!(matches!(m.predict(&[1.0, 2.0]), Err(Error::SchemaMismatch { .. })));
        assert!(m.predict_named(&[("other", 1.0)]).is_err());
        assert!(m.predict_named(&[("f0", 1.0)]).is_ok());
    }

    #[test]
    fn empty_model_predicts_base() {
        let m = GbtModel {
            trees: vec![],
            learning_rate: 0.1,
            base_prediction: 0.42,
            feature_schema: names(2),
            params: GbtParams::default(),
            seed: 0,
        };
        assert_eq!(m.predict(&[1.0, 2.0]).unwrap(), 0.42);
    }

    #[test]
    fn row_order_does_not_matter() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![(i * 7 % 13) as f64, (i % 5) as f64]).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] * 0.3 - r[1]).collect();
        let m1 = train_gbt(&x, &y, names(2), &GbtParams::default(), 3).unwrap();
        let (xr, yr): (Vec<_>, Vec<_>) = x.iter().cloned().zip(y.iter().copied()).rev().unzip();
        let m2 = train_gbt(&xr, &yr, names(2), &GbtParams::default(), 3).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn text_round_trip() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, (i * i % 7) as f64]).collect();
        let y: Vec<f64> = x.iter().map(|r| (r[0] / 3.0).sin() + r[1]).collect();
        let m = train_gbt(&x, &y, names(2), &GbtParams::default(), 9).unwrap();
        let back = GbtModel::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
        let tampered = m.to_text().replace("features=f0,f1", "features=f0,g1");
        assert!(GbtModel::from_text(&tampered).is_err());
    }

    #[derive(Debug, PartialEq)]
    struct P(&'static str, &'static str);
    impl PairKey for P {
        fn source(&self) -> &str {
            self.0
        }
        fn target(&self) -> &str {
            self.1
        }
    }

    #[test]
    fn loto_three_domains() {
        let rows = [
            P("s2", "s1"),
            P("s3", "s1"),
            P("s1", "s2"),
            P("s3", "s2"),
            P("s1", "s3"),
            P("s2", "s3"),
        ];
        let (train, test) = loto_split(&rows, "s1").unwrap();
        assert_eq!(test, [&P("s2", "s1"), &P("s3", "s1")]);
        assert_eq!(
            train,
            [&P("s1", "s2"), &P("s3", "s2"), &P("s1", "s3"), &P("s2", "s3")]
        );
        assert!(matches!(loto_split(&rows, "s9"), Err(Error::UnknownTarget(_))));
    }

    #[test]
    fn ranking_tie_break() {
        let r = RankedSources::new(
            "t",
            1,
            FeatureSet::All,
            0,
            vec![("b".into(), 0.5), ("c".into(), 0.9), ("a".into(), 0.5)],
        );
        assert_eq!(r.sources().collect::<Vec<_>>(), ["c", "a", "b"]);
    }

    #[test]
    fn performance_validation() {
        let mut r = PerformanceRecord {
            source_id: "a".into(),
            target_id: "b".into(),
            n_s: 1,
            macro_f1: 0.5,
            train_runtime_hours: 1.0,
        };
        assert!(r.validate().is_ok());
        r.macro_f1 = 1.5;
        assert!(r.validate().is_err());
        r.macro_f1 = 0.5;
        r.target_id = "a".into();
        assert!(r.validate().is_err());
    }
}
