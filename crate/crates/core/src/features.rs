//! Per-(source, target) feature vectors, feature sets and the CSV cache.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_vocabulary, term_distribution, DomainCorpus, Split, TermDistribution};
use crate::embeddings::DomainEmbedding;
use crate::error::{Error, Result};
use crate::hash::FieldHasher;
use crate::measures::{self, MeasureConfig};

/// Bumped whenever the feature schema changes; invalidates caches.
pub const SCHEMA_VERSION: u32 = 1;

/// Between-domain measures on term distributions.
pub const TD_DIVERGENCES: [&str; 7] = [
    "td_cosine_distance",
    "td_l1_distance",
    "td_l2_distance",
    "td_renyi_divergence",
    "td_js_divergence",
    "td_wasserstein_distance",
    "td_bhattacharyya_coefficient",
];

/// Between-domain geometric measures on domain embeddings.
pub const BE_DIVERGENCES: [&str; 3] = ["be_cosine_distance", "be_l1_distance", "be_l2_distance"];

const WITHIN: [&str; 7] = [
    "entropy",
    "renyi_entropy",
    "simpson_index",
    "mean",
    "variance",
    "skewness",
    "kurtosis",
];

/// Full ordered feature schema.
pub fn schema() -> &'static [String] {
    static SCHEMA: std::sync::OnceLock<Vec<String>> = std::sync::OnceLock::new();
    SCHEMA.get_or_init(|| {
        let mut names: Vec<String> = TD_DIVERGENCES
            .iter()
            .chain(&BE_DIVERGENCES)
            .map(|s| s.to_string())
            .collect();
        for suffix in ["src", "tgt"] {
            names.extend(WITHIN.iter().map(|w| format!("{w}_{suffix}")));
        }
        names
    })
}

pub fn schema_index(name: &str) -> Option<usize> {
    schema().iter().position(|n| n == name)
}

/// Hash of the schema and its version.
pub fn schema_hash() -> String {
    let mut h = FieldHasher::new().field(SCHEMA_VERSION.to_le_bytes());
    for n in schema() {
        h = h.field(n);
    }
    h.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureSet {
    #[serde(rename = "ALL")]
    All,
    #[serde(rename = "DIV_TD_BE")]
    DivTdBe,
    #[serde(rename = "DIV_TD")]
    DivTd,
    #[serde(rename = "DIV_BE")]
    DivBe,
    #[serde(rename = "H_PLUS_MOMENTS")]
    HPlusMoments,
}

impl FeatureSet {
    pub const ALL_SETS: [FeatureSet; 5] = [
        FeatureSet::All,
        FeatureSet::DivTdBe,
        FeatureSet::DivTd,
        FeatureSet::DivBe,
        FeatureSet::HPlusMoments,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureSet::All => "ALL",
            FeatureSet::DivTdBe => "DIV_TD_BE",
            FeatureSet::DivTd => "DIV_TD",
            FeatureSet::DivBe => "DIV_BE",
            FeatureSet::HPlusMoments => "H_PLUS_MOMENTS",
        }
    }

    /// Schema indices of the members, in schema order.
    pub fn indices(self) -> Vec<usize> {
        let n_div = TD_DIVERGENCES.len() + BE_DIVERGENCES.len();
        match self {
            FeatureSet::All => (0..schema().len()).collect(),
            FeatureSet::DivTdBe => (0..n_div).collect(),
            FeatureSet::DivTd => (0..TD_DIVERGENCES.len()).collect(),
            FeatureSet::DivBe => (TD_DIVERGENCES.len()..n_div).collect(),
            FeatureSet::HPlusMoments => (n_div..schema().len()).collect(),
        }
    }

    pub fn members(self) -> Vec<&'static str> {
        self.indices().into_iter().map(|i| schema()[i].as_str()).collect()
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureSet::ALL_SETS
            .into_iter()
            .find(|fs| fs.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown feature set `{s}`")))
    }
}

/// Both representations of one split of one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainRepresentation {
    pub domain_id: String,
    pub split: Split,
    pub n_s: usize,
    pub td: TermDistribution,
    pub be: DomainEmbedding,
}

/// Where a feature row's values came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub vocab_hash: String,
    pub table_hash: String,
    pub config_hash: String,
    pub source_split: Split,
    pub target_split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairFeatures {
    pub source_id: String,
    pub target_id: String,
    pub n_s: usize,
    /// Values in schema order.
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

impl PairFeatures {
    pub fn get(&self, name: &str) -> Option<f64> {
        schema_index(name).map(|i| self.values[i])
    }

    pub fn named(&self) -> impl Iterator<Item = (&'static str, f64)> + '_ {
        schema().iter().map(String::as_str).zip(self.values.iter().copied())
    }
}

/// Hash of a measure configuration, recorded with every feature row.
pub fn config_hash(cfg: &MeasureConfig) -> String {
    FieldHasher::new()
        .field(cfg.renyi_alpha.to_bits().to_le_bytes())
        .field(cfg.epsilon_smoothing.to_bits().to_le_bytes())
        .field("ln")
        .finish()
}

/// Statistics of one term distribution on its own.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WithinDomain {
    pub values: [f64; 7],
}

pub fn within_domain(td: &TermDistribution, cfg: &MeasureConfig) -> Result<WithinDomain> {
    let m = measures::moments(&td.mass)?;
    Ok(WithinDomain {
        values: [
            measures::entropy(&td.mass)?,
            measures::renyi_entropy(&td.mass, cfg.renyi_alpha)?,
            measures::simpson_index(&td.mass)?,
            m.mean,
            m.variance,
            m.skewness,
            m.kurtosis,
        ],
    })
}

fn between_td(s: &TermDistribution, t: &TermDistribution, cfg: &MeasureConfig) -> Result<[f64; 7]> {
    let (p, q) = (&s.mass, &t.mass);
    Ok([
        measures::cosine_distance(p, q)?,
        measures::l1_distance(p, q)?,
        measures::l2_distance(p, q)?,
        measures::renyi_divergence(p, q, cfg.renyi_alpha, cfg.epsilon_smoothing)?,
        measures::js_divergence(p, q)?,
        measures::wasserstein_1d(p, q)?,
        measures::bhattacharyya_coefficient(p, q)?,
    ])
}

fn between_be(s: &DomainEmbedding, t: &DomainEmbedding) -> Result<[f64; 3]> {
    let (u, v) = (&s.vector, &t.vector);
    Ok([
        measures::cosine_distance(u, v)?,
        measures::l1_distance(u, v)?,
        measures::l2_distance(u, v)?,
    ])
}

fn check_compatible(source: &DomainRepresentation, target: &DomainRepresentation) -> Result<()> {
    if source.td.vocab_hash != target.td.vocab_hash {
        return Err(Error::HashMismatch {
            what: "vocabulary",
            left: source.td.vocab_hash.clone(),
            right: target.td.vocab_hash.clone(),
        });
    }
    if source.be.table_hash != target.be.table_hash {
        return Err(Error::HashMismatch {
            what: "embedding table",
            left: source.be.table_hash.clone(),
            right: target.be.table_hash.clone(),
        });
    }
    if source.be.smoothing_a != target.be.smoothing_a {
        return Err(Error::invalid("embeddings pooled with different smoothing factors"));
    }
    Ok(())
}

fn assemble(
    source: &DomainRepresentation,
    target: &DomainRepresentation,
    src_within: &WithinDomain,
    tgt_within: &WithinDomain,
    cfg: &MeasureConfig,
) -> Result<PairFeatures> {
    if source.domain_id == target.domain_id {
        return Err(Error::invalid(format!(
            "source and target are both `{}`",
            source.domain_id
        )));
    }
    check_compatible(source, target)?;
    let mut values = Vec::with_capacity(schema().len());
    values.extend(between_td(&source.td, &target.td, cfg)?);
    values.extend(between_be(&source.be, &target.be)?);
    values.extend(src_within.values);
    values.extend(tgt_within.values);
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "{} for ({}, {})",
            schema()[i],
            source.domain_id,
            target.domain_id
        )));
    }
    Ok(PairFeatures {
        source_id: source.domain_id.clone(),
        target_id: target.domain_id.clone(),
        n_s: source.n_s,
        values,
        provenance: Provenance {
            vocab_hash: source.td.vocab_hash.clone(),
            table_hash: source.be.table_hash.clone(),
            config_hash: config_hash(cfg),
            source_split: source.split,
            target_split: target.split,
        },
    })
}

/// All schema features for one ordered pair.
pub fn featurize_pair(
    source: &DomainRepresentation,
    target: &DomainRepresentation,
    cfg: &MeasureConfig,
) -> Result<PairFeatures> {
    check_compatible(source, target)?;
    let s = within_domain(&source.td, cfg)?;
    let t = within_domain(&target.td, cfg)?;
    assemble(source, target, &s, &t, cfg)
}

/// Projection of a row onto a feature set, in schema order.
pub fn select_features(pf: &PairFeatures, fs: FeatureSet) -> Vec<(&'static str, f64)> {
    fs.indices()
        .into_iter()
        .map(|i| (schema()[i].as_str(), pf.values[i]))
        .collect()
}

/// Projection onto an arbitrary list of feature names, in schema order.
pub fn select_named(pf: &PairFeatures, names: &[&str]) -> Result<Vec<(&'static str, f64)>> {
    let mut idx = Vec::with_capacity(names.len());
    for n in names {
        idx.push(schema_index(n).ok_or_else(|| Error::UnknownFeature(n.to_string()))?);
    }
    idx.sort_unstable();
    idx.dedup();
    Ok(idx
        .into_iter()
        .map(|i| (schema()[i].as_str(), pf.values[i]))
        .collect())
}

/// Representations keyed by `(domain, split, n_s)`.
#[derive(Debug, Default, Clone)]
pub struct RepresentationStore {
    reps: HashMap<(String, Split, usize), DomainRepresentation>,
}

impl RepresentationStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, rep: DomainRepresentation) {
        self.reps
            .insert((rep.domain_id.clone(), rep.split, rep.n_s), rep);
    }

    pub fn get(&self, domain: &str, split: Split, n_s: usize) -> Option<&DomainRepresentation> {
        self.reps.get(&(domain.to_owned(), split, n_s))
    }

    pub fn len(&self) -> usize {
        self.reps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reps.is_empty()
    }
}

/// Rows for every ordered pair `s ≠ t` of `domains` and every setting in
/// `n_s_settings`, ordered by `(source, target, n_s)`. Sources use their
/// train split, targets their test split.
pub fn feature_matrix(
    store: &RepresentationStore,
    domains: &[String],
    n_s_settings: &[usize],
    cfg: &MeasureConfig,
) -> Result<Vec<PairFeatures>> {
    cfg.validate()?;
    let mut missing = BTreeSet::new();
    for d in domains {
        for &n in n_s_settings {
            for split in [Split::Train, Split::Test] {
                if store.get(d, split, n).is_none() {
                    missing.insert(format!("{d} ({split}, n_s={n})"));
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingRepresentation(
            missing.into_iter().collect::<Vec<_>>().join(", "),
        ));
    }

    let mut domains: Vec<&String> = domains.iter().collect();
    domains.sort();
    domains.dedup();
    let mut settings = n_s_settings.to_vec();
    settings.sort_unstable();
    settings.dedup();

    let mut keys = Vec::new();
    for d in &domains {
        for &n in &settings {
            keys.push((d.as_str(), Split::Train, n));
            keys.push((d.as_str(), Split::Test, n));
        }
    }
    let within: Vec<WithinDomain> = keys
        .par_iter()
        .map(|(d, split, n)| within_domain(&store.get(d, *split, *n).expect("checked").td, cfg))
        .collect::<Result<_>>()?;
    let within: HashMap<(&str, Split, usize), WithinDomain> = keys.into_iter().zip(within).collect();

    let mut jobs = Vec::new();
    for s in &domains {
        for t in &domains {
            if s == t {
                continue;
            }
            for &n in &settings {
                jobs.push((s.as_str(), t.as_str(), n));
            }
        }
    }
    jobs.par_iter()
        .map(|&(s, t, n)| {
            let src = store.get(s, Split::Train, n).expect("checked");
            let tgt = store.get(t, Split::Test, n).expect("checked");
            assemble(
                src,
                tgt,
                &within[&(s, Split::Train, n)],
                &within[&(t, Split::Test, n)],
                cfg,
            )
        })
        .collect()
}

/// Term distributions of a source and a target over a vocabulary built from
/// the two corpora alone, for the per-pair vocabulary mode.
pub fn pair_local_term_distributions(
    source: &DomainCorpus,
    target: &DomainCorpus,
    size: usize,
) -> Result<(TermDistribution, TermDistribution)> {
    let vocab = build_vocabulary(&[source, target], size)?;
    Ok((
        term_distribution(source, &vocab)?,
        term_distribution(target, &vocab)?,
    ))
}

/// Wall-clock seconds spent in each pipeline stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub representations_secs: f64,
    pub measures_secs: f64,
    pub regression_secs: f64,
}

impl StageTimings {
    pub fn total_secs(&self) -> f64 {
        self.representations_secs + self.measures_secs + self.regression_secs
    }
}

/// Sidecar written next to each feature CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCacheMeta {
    pub schema_version: u32,
    pub schema_hash: String,
    pub feature_names: Vec<String>,
    pub n_s: usize,
    pub vocab_hash: String,
    pub table_hash: String,
    pub config_hash: String,
    pub measure_config: MeasureConfig,
    pub log_base: String,
    pub tokenizer: String,
    pub source_split: Split,
    pub target_split: Split,
}

impl FeatureCacheMeta {
    pub fn for_rows(rows: &[PairFeatures], n_s: usize, cfg: &MeasureConfig) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::invalid("no feature rows"))?;
        let p = &first.provenance;
        if rows.iter().any(|r| r.provenance != *p || r.n_s != n_s) {
            return Err(Error::invalid("feature rows disagree on provenance or n_s"));
        }
        Ok(FeatureCacheMeta {
            schema_version: SCHEMA_VERSION,
            schema_hash: schema_hash(),
            feature_names: schema().to_vec(),
            n_s,
            vocab_hash: p.vocab_hash.clone(),
            table_hash: p.table_hash.clone(),
            config_hash: p.config_hash.clone(),
            measure_config: *cfg,
            log_base: "e".into(),
            tokenizer: crate::corpus::TOKENIZER_ID.into(),
            source_split: p.source_split,
            target_split: p.target_split,
        })
    }
}

pub fn meta_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

/// Formats a float with 17 significant digits; parsing it back is exact.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `source,target,n_s,<features>` rows plus a metadata sidecar.
pub fn write_feature_csv(path: &Path, rows: &[PairFeatures], meta: &FeatureCacheMeta) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["source".to_string(), "target".into(), "n_s".into()];
    header.extend(schema().iter().cloned());
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.source_id.clone(), r.target_id.clone(), r.n_s.to_string()];
        rec.extend(r.values.iter().map(|v| fmt_f64(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    std::fs::write(meta_path(path), serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

pub fn read_feature_csv(path: &Path) -> Result<(Vec<PairFeatures>, FeatureCacheMeta)> {
    let meta: FeatureCacheMeta = serde_json::from_str(&std::fs::read_to_string(meta_path(path))?)?;
    if meta.schema_version != SCHEMA_VERSION || meta.schema_hash != schema_hash() {
        return Err(Error::invalid(format!(
            "{}: feature schema version {} does not match {}",
            path.display(),
            meta.schema_version,
            SCHEMA_VERSION
        )));
    }
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let expected: Vec<&str> = ["source", "target", "n_s"]
        .into_iter()
        .chain(schema().iter().map(String::as_str))
        .collect();
    if header != expected {
        return Err(Error::parse(path, 1, "feature header does not match the schema"));
    }
    let provenance = Provenance {
        vocab_hash: meta.vocab_hash.clone(),
        table_hash: meta.table_hash.clone(),
        config_hash: meta.config_hash.clone(),
        source_split: meta.source_split,
        target_split: meta.target_split,
    };
    let mut rows = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = n + 2;
        let n_s: usize = rec[2]
            .parse()
            .map_err(|_| Error::parse(path, line, "bad n_s"))?;
        let values = rec
            .iter()
            .skip(3)
            .map(|v| v.parse::<f64>().map_err(|_| Error::parse(path, line, "bad float")))
            .collect::<Result<Vec<_>>>()?;
        rows.push(PairFeatures {
            source_id: rec[0].to_owned(),
            target_id: rec[1].to_owned(),
            n_s,
            values,
            provenance: provenance.clone(),
        });
    }
    Ok((rows, meta))
}

/// Groups rows by sample-size setting.
pub fn by_setting(rows: &[PairFeatures]) -> BTreeMap<usize, Vec<&PairFeatures>> {
    let mut out: BTreeMap<usize, Vec<&PairFeatures>> = BTreeMap::new();
    for r in rows {
        out.entry(r.n_s).or_default().push(r);
    }
    out
}


/// Split sampling, vocabulary and representation settings shared by every
/// domain of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentationConfig {
    pub n_s_settings: Vec<usize>,
    pub n_holdout: usize,
    pub vocab_size: usize,
    pub smoothing_a: f64,
    pub seed: u64,
}

/// Samples the splits of every domain under every setting, then builds
/// their representations with [`representations_from_splits`].
pub fn build_representations(
    pools: &BTreeMap<String, Vec<crate::corpus::Document>>,
    table: &crate::embeddings::EmbeddingTable,
    cfg: &RepresentationConfig,
) -> Result<(RepresentationStore, BTreeMap<usize, crate::corpus::Vocabulary>)> {
    let splits = sample_all_splits(pools, cfg)?;
    representations_from_splits(&splits, table, cfg.vocab_size, cfg.smoothing_a)
}

/// Split triples of every domain, keyed by setting.
pub fn sample_all_splits(
    pools: &BTreeMap<String, Vec<crate::corpus::Document>>,
    cfg: &RepresentationConfig,
) -> Result<BTreeMap<usize, Vec<crate::corpus::SplitTriple>>> {
    if pools.len() < 2 {
        return Err(Error::invalid("at least two domains are required"));
    }
    let mut settings = cfg.n_s_settings.clone();
    settings.sort_unstable();
    settings.dedup();
    settings
        .into_iter()
        .map(|n_s| {
            let triples = pools
                .iter()
                .map(|(id, docs)| crate::corpus::sample_splits(id, docs, n_s, cfg.n_holdout, cfg.seed))
                .collect::<Result<Vec<_>>>()?;
            Ok((n_s, triples))
        })
        .collect()
}

/// Term distributions and embeddings for the train and test split of every
/// domain under every setting, plus the vocabulary of each setting. The
/// vocabulary of a setting is built from that setting's train corpora.
pub fn representations_from_splits(
    splits: &BTreeMap<usize, Vec<crate::corpus::SplitTriple>>,
    table: &crate::embeddings::EmbeddingTable,
    vocab_size: usize,
    smoothing_a: f64,
) -> Result<(RepresentationStore, BTreeMap<usize, crate::corpus::Vocabulary>)> {
    use crate::embeddings::{embed_domain, unigram_probabilities};

    let mut store = RepresentationStore::new();
    let mut vocabs = BTreeMap::new();
    for (&n_s, triples) in splits {
        let trains: Vec<&DomainCorpus> = triples.iter().map(|s| &s.train).collect();
        let vocab = build_vocabulary(&trains, vocab_size)?;
        let corpora: Vec<&DomainCorpus> = triples.iter().flat_map(|s| [&s.train, &s.test]).collect();
        let reps = corpora
            .par_iter()
            .map(|c| {
                let td = term_distribution(c, &vocab)?;
                let p = unigram_probabilities(c);
                let be = embed_domain(c, table, &p, smoothing_a)?;
                Ok(DomainRepresentation {
                    domain_id: c.domain_id.clone(),
                    split: c.split,
                    n_s,
                    td,
                    be,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        for r in reps {
            store.insert(r);
        }
        vocabs.insert(n_s, vocab);
    }
    Ok((store, vocabs))
}
