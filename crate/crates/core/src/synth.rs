//! Synthetic multi-domain benchmarks with a known divergence/performance law.
//!
//! Every domain draws its unigram distribution by perturbing a shared Zipf
//! base with multiplicative Gamma noise (a Dirichlet draw centred on the
//! base), then samples bag-of-token documents from it. The performance
//! matrix applies `f1 = clamp(c0 - c1 * JS(truth_s, truth_t) + noise, 0, 1)`
//! to the true distributions, so the ranker only ever sees noisy empirical
//! estimates of the driver.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, WeightedAliasIndex};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{domain_seed, Document, Label, TOKENIZER_ID};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::hash::FieldHasher;
use crate::measures::js_divergence;
use crate::ranker::PerformanceRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerformanceLaw {
    pub c0: f64,
    pub c1: f64,
    pub noise_sigma: f64,
}

/// Training hours per pair: `a * n_s + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuntimeLaw {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_domains: usize,
    pub vocab_size: usize,
    pub zipf_exponent: f64,
    /// Perturbation scale δ; each Gamma weight has coefficient of variation δ.
    pub divergence: f64,
    /// Domain `i` uses scale `δ·(1 + spread·u_i)` with `u_i` evenly spaced
    /// in [-1, 1] and assigned by a seeded shuffle. Zero gives every domain
    /// the same scale.
    pub scale_spread: f64,
    pub docs_per_domain: usize,
    pub doc_length: (usize, usize),
    pub law: PerformanceLaw,
    pub runtime_law: RuntimeLaw,
    pub n_s_settings: Vec<usize>,
    pub embedding_dim: usize,
    pub seed: u64,
}

impl Default for PerformanceLaw {
    fn default() -> Self {
        PerformanceLaw {
            c0: 0.95,
            c1: 4.0,
            noise_sigma: 0.02,
        }
    }
}

impl Default for RuntimeLaw {
    fn default() -> Self {
        RuntimeLaw { a: 1e-3, b: 0.1 }
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_domains: 20,
            vocab_size: 2_000,
            zipf_exponent: 1.0,
            divergence: 0.5,
            scale_spread: 0.75,
            docs_per_domain: 1_400,
            doc_length: (20, 60),
            law: PerformanceLaw::default(),
            runtime_law: RuntimeLaw::default(),
            n_s_settings: vec![200, 1_000],
            embedding_dim: 32,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.n_domains < 2 {
            return bad(format!("n_domains must be at least 2, got {}", self.n_domains));
        }
        if self.vocab_size == 0 || self.embedding_dim == 0 || self.docs_per_domain == 0 {
            return bad("vocab_size, embedding_dim and docs_per_domain must be positive".into());
        }
        if !(self.zipf_exponent > 0.0 && self.zipf_exponent.is_finite()) {
            return bad(format!("zipf_exponent must be positive, got {}", self.zipf_exponent));
        }
        if !(self.divergence >= 0.0 && self.divergence.is_finite()) {
            return bad(format!("divergence must be non-negative, got {}", self.divergence));
        }
        if !(0.0..1.0).contains(&self.scale_spread) {
            return bad(format!("scale_spread must lie in [0, 1), got {}", self.scale_spread));
        }
        let (lo, hi) = self.doc_length;
        if lo == 0 || lo > hi {
            return bad(format!("doc_length must satisfy 0 < min <= max, got ({lo}, {hi})"));
        }
        let l = self.law;
        if !(l.c0 > 0.0 && l.c0 <= 1.0) {
            return bad(format!("c0 must lie in (0, 1], got {}", l.c0));
        }
        if !(l.c1 >= 0.0 && l.c1.is_finite()) || !(l.noise_sigma >= 0.0 && l.noise_sigma.is_finite()) {
            return bad("c1 and noise_sigma must be non-negative".into());
        }
        let r = self.runtime_law;
        if !(r.a >= 0.0 && r.b >= 0.0 && r.a.is_finite() && r.b.is_finite()) {
            return bad("runtime law coefficients must be non-negative".into());
        }
        if self.n_s_settings.is_empty() || self.n_s_settings.contains(&0) {
            return bad("n_s_settings must be non-empty and positive".into());
        }
        for &n in &self.n_s_settings {
            if r.a * n as f64 + r.b <= 0.0 {
                return bad(format!("runtime law gives a non-positive runtime at n_s={n}"));
            }
        }
        Ok(())
    }

    pub fn domain_ids(&self) -> Vec<String> {
        let width = (self.n_domains - 1).to_string().len().max(2);
        (0..self.n_domains).map(|i| format!("d{i:0width$}")).collect()
    }

    pub fn hash(&self) -> String {
        FieldHasher::new()
            .field(serde_json::to_vec(self).expect("config serializes"))
            .finish()
    }
}

/// Token string of vocabulary index `i`; index 0 is the most probable term
/// of the base distribution.
pub fn token(i: usize) -> String {
    format!("w{i}")
}

/// Normalized Zipf weights `1 / rank^s` over `n` terms.
pub fn zipf_base(n: usize, s: f64) -> Vec<f64> {
    let w: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-s)).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDomain {
    pub id: String,
    /// Perturbation scale actually used for this domain.
    pub scale: f64,
    pub truth: Vec<f64>,
    pub documents: Vec<Document>,
}

fn stream(seed: u64, id: &str, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(domain_seed(seed, &format!("{id}/{tag}")))
}

fn perturbed(base: &[f64], scale: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    if scale == 0.0 {
        return Ok(base.to_vec());
    }
    let shape = 1.0 / (scale * scale);
    let gamma = Gamma::new(shape, 1.0 / shape).map_err(|e| Error::invalid(format!("gamma: {e}")))?;
    let w: Vec<f64> = base.iter().map(|&b| b * gamma.sample(rng)).collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / z).collect())
}

fn scales(cfg: &SynthConfig) -> Vec<f64> {
    use rand::seq::SliceRandom;
    let n = cfg.n_domains;
    let mut u: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect();
    u.shuffle(&mut stream(cfg.seed, "", "scales"));
    u.into_iter()
        .map(|u| cfg.divergence * (1.0 + cfg.scale_spread * u))
        .collect()
}

/// True distributions and sampled documents of every domain. Deterministic
/// per seed; each domain draws from its own seed stream.
pub fn generate_domains(cfg: &SynthConfig) -> Result<Vec<SynthDomain>> {
    cfg.validate()?;
    let base = zipf_base(cfg.vocab_size, cfg.zipf_exponent);
    let tokens: Vec<String> = (0..cfg.vocab_size).map(token).collect();
    let ids = cfg.domain_ids();
    let scales = scales(cfg);
    ids.par_iter()
        .zip(scales.par_iter())
        .map(|(id, &scale)| {
            let truth = perturbed(&base, scale, &mut stream(cfg.seed, id, "truth"))?;
            let sampler =
                WeightedAliasIndex::new(truth.clone()).map_err(|e| Error::invalid(format!("sampler: {e}")))?;
            let mut rng = stream(cfg.seed, id, "docs");
            let (lo, hi) = cfg.doc_length;
            let documents = (0..cfg.docs_per_domain)
                .map(|j| {
                    let len = rng.gen_range(lo..=hi);
                    let words: Vec<&str> = (0..len).map(|_| tokens[sampler.sample(&mut rng)].as_str()).collect();
                    let label = if rng.gen_bool(0.5) { Label::Positive } else { Label::Negative };
                    Document::new(format!("{id}-{j:05}"), words.join(" ")).with_label(label)
                })
                .collect();
            Ok(SynthDomain {
                id: id.clone(),
                scale,
                truth,
                documents,
            })
        })
        .collect()
}

/// One record per ordered pair `s ≠ t` and setting, ordered by
/// `(n_s, source, target)`.
pub fn generate_performance(cfg: &SynthConfig, domains: &[SynthDomain]) -> Result<Vec<PerformanceRecord>> {
    cfg.validate()?;
    let law = cfg.law;
    let normal = Normal::new(0.0, law.noise_sigma).map_err(|e| Error::invalid(format!("noise: {e}")))?;
    let mut settings = cfg.n_s_settings.clone();
    settings.sort_unstable();
    settings.dedup();
    let mut out = Vec::with_capacity(settings.len() * domains.len() * domains.len());
    for &n_s in &settings {
        let runtime = cfg.runtime_law.a * n_s as f64 + cfg.runtime_law.b;
        for s in domains {
            for t in domains {
                if s.id == t.id {
                    continue;
                }
                let js = js_divergence(&s.truth, &t.truth)?;
                let mut rng = stream(cfg.seed, &format!("{}>{}@{n_s}", s.id, t.id), "noise");
                let f1 = (law.c0 - law.c1 * js + normal.sample(&mut rng)).clamp(0.0, 1.0);
                out.push(PerformanceRecord {
                    source_id: s.id.clone(),
                    target_id: t.id.clone(),
                    n_s,
                    macro_f1: f1,
                    train_runtime_hours: runtime,
                });
            }
        }
    }
    Ok(out)
}

/// Stock embedding table over the synthetic vocabulary: one seeded Gaussian
/// vector per token, scaled to unit expected norm.
pub fn stock_embedding_table(cfg: &SynthConfig) -> Result<EmbeddingTable> {
    cfg.validate()?;
    let normal = Normal::new(0.0, 1.0 / (cfg.embedding_dim as f64).sqrt()).expect("valid normal");
    let mut rng = stream(cfg.seed, "", "embeddings");
    EmbeddingTable::from_rows((0..cfg.vocab_size).map(|i| {
        let v: Vec<f64> = (0..cfg.embedding_dim).map(|_| normal.sample(&mut rng)).collect();
        (token(i), v)
    }))
}

/// Replay record written next to a generated benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub config: SynthConfig,
    pub config_hash: String,
    pub tokenizer: String,
    pub domains: Vec<SynthDomainSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDomainSummary {
    pub id: String,
    pub scale: f64,
    pub n_documents: usize,
}

impl SynthManifest {
    pub fn new(cfg: &SynthConfig, domains: &[SynthDomain]) -> Self {
        SynthManifest {
            config: cfg.clone(),
            config_hash: cfg.hash(),
            tokenizer: TOKENIZER_ID.to_owned(),
            domains: domains
                .iter()
                .map(|d| SynthDomainSummary {
                    id: d.id.clone(),
                    scale: d.scale,
                    n_documents: d.documents.len(),
                })
                .collect(),
        }
    }
}

/// Documents of each domain keyed by id, the shape consumed by
/// [`crate::features::build_representations`].
pub fn pools(domains: &[SynthDomain]) -> BTreeMap<String, Vec<Document>> {
    domains
        .iter()
        .map(|d| (d.id.clone(), d.documents.clone()))
        .collect()
}

/// Mean JS divergence over all unordered pairs of true distributions.
pub fn mean_pairwise_js(domains: &[SynthDomain]) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, a) in domains.iter().enumerate() {
        for b in &domains[i + 1..] {
            sum += js_divergence(&a.truth, &b.truth)?;
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_domains: 4,
            vocab_size: 200,
            docs_per_domain: 50,
            embedding_dim: 8,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn zero_divergence_gives_identical_truths() {
        let cfg = SynthConfig {
            divergence: 0.0,
            ..small()
        };
        let d = generate_domains(&cfg).unwrap();
        assert_eq!(mean_pairwise_js(&d).unwrap(), 0.0);
    }

    #[test]
    fn mean_js_grows_with_divergence() {
        let js: Vec<f64> = [0.1, 0.5, 1.0]
            .iter()
            .map(|&delta| {
                let cfg = SynthConfig {
                    divergence: delta,
                    ..small()
                };
                mean_pairwise_js(&generate_domains(&cfg).unwrap()).unwrap()
            })
            .collect();
        assert!(js[0] < js[1] && js[1] < js[2], "{js:?}");
    }

    #[test]
    fn same_seed_same_corpora() {
        let a = generate_domains(&small()).unwrap();
        let b = generate_domains(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_domains(&SynthConfig { seed: 9, ..small() }).unwrap();
        assert_ne!(a[0].documents, c[0].documents);
    }

    #[test]
    fn record_count_and_noiseless_order() {
        let cfg = SynthConfig {
            n_domains: 20,
            vocab_size: 100,
            docs_per_domain: 1,
            law: PerformanceLaw {
                c0: 0.9,
                c1: 2.0,
                noise_sigma: 0.0,
            },
            ..SynthConfig::default()
        };
        let d = generate_domains(&cfg).unwrap();
        let perf = generate_performance(&cfg, &d).unwrap();
        assert_eq!(perf.len(), 20 * 19 * 2);
        let t = &d[3];
        let mut by_f1: Vec<&PerformanceRecord> =
            perf.iter().filter(|r| r.target_id == t.id && r.n_s == 200).collect();
        by_f1.sort_by(|a, b| b.macro_f1.total_cmp(&a.macro_f1));
        let js = |id: &str| {
            let s = d.iter().find(|x| x.id == id).unwrap();
            js_divergence(&s.truth, &t.truth).unwrap()
        };
        for w in by_f1.windows(2) {
            assert!(js(&w[0].source_id) <= js(&w[1].source_id));
        }
    }

    #[test]
    fn flat_law_gives_constant_f1() {
        let cfg = SynthConfig {
            law: PerformanceLaw {
                c0: 0.7,
                c1: 0.0,
                noise_sigma: 0.0,
            },
            ..small()
        };
        let perf = generate_performance(&cfg, &generate_domains(&cfg).unwrap()).unwrap();
        assert!(perf.iter().all(|r| r.macro_f1 == 0.7 && r.train_runtime_hours > 0.0));
    }

    #[test]
    fn validation() {
        assert!(SynthConfig { n_domains: 1, ..small() }.validate().is_err());
        assert!(SynthConfig { doc_length: (5, 4), ..small() }.validate().is_err());
        let mut c = small();
        c.law.c0 = 0.0;
        assert!(c.validate().is_err());
    }
}
