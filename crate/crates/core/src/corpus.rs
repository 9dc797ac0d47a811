//! Corpus ingestion: tokenization, rating merge, split sampling, the shared
//! vocabulary and term distributions.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::{sha256_hex, FieldHasher};

/// Default number of terms kept in the shared vocabulary.
pub const DEFAULT_VOCAB_SIZE: usize = 10_000;

/// Identifier written into metadata so that corpora tokenized differently
/// are never compared.
pub const TOKENIZER_ID: &str = "lowercase-whitespace-strip-punct-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Negative,
    Positive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    #[serde(default)]
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            text: text.into(),
            rating: None,
            label: None,
        }
    }

    pub fn with_rating(mut self, rating: i64) -> Self {
        self.rating = Some(rating);
        self
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

/// The documents of one split of one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainCorpus {
    pub domain_id: String,
    pub split: Split,
    pub documents: Vec<Document>,
    /// Source-task sample size setting this corpus belongs to.
    pub sample_size_setting: usize,
}

impl DomainCorpus {
    pub fn new(
        domain_id: impl Into<String>,
        split: Split,
        documents: Vec<Document>,
        sample_size_setting: usize,
    ) -> Self {
        DomainCorpus {
            domain_id: domain_id.into(),
            split,
            documents,
            sample_size_setting,
        }
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Tokenized documents, in order.
    pub fn tokenized(&self) -> Vec<Vec<String>> {
        self.documents.iter().map(|d| tokenize(&d.text)).collect()
    }
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c, '\u{00A1}' | '\u{00AB}' | '\u{00B7}' | '\u{00BB}' | '\u{00BF}')
        || ('\u{2010}'..='\u{2027}').contains(&c)
        || ('\u{2030}'..='\u{205E}').contains(&c)
        || ('\u{3001}'..='\u{3003}').contains(&c)
        || ('\u{3008}'..='\u{3011}').contains(&c)
}

/// Lowercase, split on Unicode whitespace, strip leading and trailing
/// punctuation from each token and drop empty tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(|t| t.trim_matches(is_punctuation))
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// How star ratings map onto the binary sentiment labels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatingScheme {
    /// 1–2 negative, 3–4 positive, 5 dropped.
    #[default]
    Literal,
    /// 1–2 negative, 4–5 positive, 3 dropped.
    Symmetric,
}

impl RatingScheme {
    pub fn label_for(self, rating: i64) -> Option<Label> {
        match (self, rating) {
            (_, 1 | 2) => Some(Label::Negative),
            (RatingScheme::Literal, 3 | 4) => Some(Label::Positive),
            (RatingScheme::Symmetric, 4 | 5) => Some(Label::Positive),
            _ => None,
        }
    }
}

/// Result of mapping one document's rating onto a label.
#[derive(Debug, Clone, PartialEq)]
pub enum MergeOutcome {
    Labeled(Document),
    /// Valid rating the scheme assigns to no class.
    Dropped,
    /// Rating missing or outside 1–5.
    Rejected,
}

pub fn merge_ratings(doc: Document, scheme: RatingScheme) -> MergeOutcome {
    match doc.rating {
        Some(r) if (1..=5).contains(&r) => match scheme.label_for(r) {
            Some(label) => MergeOutcome::Labeled(doc.with_label(label)),
            None => MergeOutcome::Dropped,
        },
        _ => MergeOutcome::Rejected,
    }
}

/// Counts produced by [`label_documents`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelStats {
    pub kept: usize,
    pub dropped: usize,
    pub rejected: usize,
    pub unlabeled: usize,
}

/// Assigns labels to a pool of documents. Documents carrying a rating go
/// through [`merge_ratings`]; documents with only a label keep it; documents
/// with neither are discarded.
pub fn label_documents(docs: Vec<Document>, scheme: RatingScheme) -> (Vec<Document>, LabelStats) {
    let mut stats = LabelStats::default();
    let mut out = Vec::with_capacity(docs.len());
    for doc in docs {
        if doc.rating.is_none() {
            if doc.label.is_some() {
                stats.kept += 1;
                out.push(doc);
            } else {
                stats.unlabeled += 1;
            }
            continue;
        }
        match merge_ratings(doc, scheme) {
            MergeOutcome::Labeled(d) => {
                stats.kept += 1;
                out.push(d);
            }
            MergeOutcome::Dropped => stats.dropped += 1,
            MergeOutcome::Rejected => stats.rejected += 1,
        }
    }
    if stats.rejected > 0 {
        log::warn!("{} record(s) with rating outside 1-5 rejected", stats.rejected);
    }
    (out, stats)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitTriple {
    pub train: DomainCorpus,
    pub validation: DomainCorpus,
    pub test: DomainCorpus,
}

/// Stable per-domain seed derived from the master seed.
pub fn domain_seed(seed: u64, domain_id: &str) -> u64 {
    let h = FieldHasher::new()
        .field(seed.to_le_bytes())
        .field(domain_id)
        .finish();
    u64::from_str_radix(&h[..16], 16).expect("hex digest")
}

/// Draws disjoint validation, test and train samples from `pool`.
///
/// The pool is shuffled once with a seed derived from `(seed, domain_id)`;
/// validation takes the first `n_holdout` positions, test the next
/// `n_holdout`, and train the following `n_train`. Holdouts are therefore
/// identical for every `n_train` under the same seed.
pub fn sample_splits(
    domain_id: &str,
    pool: &[Document],
    n_train: usize,
    n_holdout: usize,
    seed: u64,
) -> Result<SplitTriple> {
    let need = n_train + 2 * n_holdout;
    if pool.len() < need {
        return Err(Error::InsufficientPool {
            domain: domain_id.to_owned(),
            have: pool.len(),
            need,
        });
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(domain_seed(seed, domain_id));
    order.shuffle(&mut rng);

    let take = |range: std::ops::Range<usize>| -> Vec<Document> {
        order[range].iter().map(|&i| pool[i].clone()).collect()
    };
    let h = n_holdout;
    Ok(SplitTriple {
        validation: DomainCorpus::new(domain_id, Split::Validation, take(0..h), n_train),
        test: DomainCorpus::new(domain_id, Split::Test, take(h..2 * h), n_train),
        train: DomainCorpus::new(domain_id, Split::Train, take(2 * h..need), n_train),
    })
}

/// Frequency-ordered term list shared by all term distributions of a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
    requested: usize,
}

impl Vocabulary {
    /// Builds a vocabulary from an already ordered term list.
    pub fn from_terms(terms: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(terms.len());
        for (i, t) in terms.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary term `{t}`")));
            }
        }
        let requested = terms.len();
        Ok(Vocabulary {
            terms,
            index,
            requested,
        })
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn size(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    /// Number of terms requested but unavailable.
    pub fn shortfall(&self) -> usize {
        self.requested.saturating_sub(self.terms.len())
    }

    /// Content hash of the ordered term list.
    pub fn hash(&self) -> String {
        let mut h = FieldHasher::new().field(TOKENIZER_ID);
        for t in &self.terms {
            h = h.field(t);
        }
        h.finish()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for t in &self.terms {
            writeln!(w, "{t}")?;
        }
        w.flush()?;
        std::fs::write(hash_sidecar(path), format!("{}\n", self.hash()))?;
        Ok(())
    }

    /// Reads a vocabulary file and checks it against its hash sidecar.
    pub fn read(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut terms = Vec::new();
        for line in reader.lines() {
            terms.push(line?);
        }
        let vocab = Vocabulary::from_terms(terms)?;
        let sidecar = hash_sidecar(path);
        if sidecar.exists() {
            let expected = std::fs::read_to_string(&sidecar)?;
            let expected = expected.trim();
            let got = vocab.hash();
            if expected != got {
                return Err(Error::HashMismatch {
                    what: "vocabulary file vs sidecar",
                    left: got,
                    right: expected.to_owned(),
                });
            }
        }
        Ok(vocab)
    }
}

fn hash_sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".sha256");
    s.into()
}

fn count_terms(corpus: &DomainCorpus) -> HashMap<String, u64> {
    let mut counts = HashMap::new();
    for doc in &corpus.documents {
        for t in tokenize(&doc.text) {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    counts
}

/// Top-`size` terms by total frequency across `corpora`, ties broken
/// lexicographically. Per-corpus counts are computed in parallel.
pub fn build_vocabulary(corpora: &[&DomainCorpus], size: usize) -> Result<Vocabulary> {
    if size == 0 {
        return Err(Error::invalid("vocabulary size must be positive"));
    }
    if corpora.iter().all(|c| c.is_empty()) {
        return Err(Error::invalid("no non-empty corpus supplied to build_vocabulary"));
    }
    let partial: Vec<HashMap<String, u64>> = corpora.par_iter().map(|c| count_terms(c)).collect();
    let mut total: HashMap<String, u64> = HashMap::new();
    for counts in partial {
        for (t, n) in counts {
            *total.entry(t).or_insert(0) += n;
        }
    }
    if total.is_empty() {
        return Err(Error::invalid("supplied corpora contain no tokens"));
    }
    let mut ranked: Vec<(String, u64)> = total.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(size);
    if ranked.len() < size {
        log::warn!(
            "only {} distinct terms available for a vocabulary of {size}",
            ranked.len()
        );
    }
    let mut vocab = Vocabulary::from_terms(ranked.into_iter().map(|(t, _)| t).collect())?;
    vocab.requested = size;
    Ok(vocab)
}

/// Probability mass of each vocabulary term in one corpus.
///
/// The denominator counts every token, in vocabulary or not, so the mass
/// sums to `coverage` rather than to one.
#[derive(Debug, Clone, PartialEq)]
pub struct TermDistribution {
    pub vocab_hash: String,
    pub mass: Vec<f64>,
    pub coverage: f64,
    pub token_count: u64,
}

impl TermDistribution {
    pub fn from_tokens<'a, I>(tokens: I, vocab: &Vocabulary) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if vocab.is_empty() {
            return Err(Error::invalid("empty vocabulary"));
        }
        let mut counts = vec![0u64; vocab.size()];
        let mut total = 0u64;
        let mut inside = 0u64;
        for t in tokens {
            total += 1;
            if let Some(i) = vocab.index_of(t) {
                counts[i] += 1;
                inside += 1;
            }
        }
        if total == 0 {
            return Err(Error::EmptyCorpus(String::from("<tokens>")));
        }
        let denom = total as f64;
        Ok(TermDistribution {
            vocab_hash: vocab.hash(),
            mass: counts.iter().map(|&c| c as f64 / denom).collect(),
            coverage: inside as f64 / denom,
            token_count: total,
        })
    }

    pub fn dim(&self) -> usize {
        self.mass.len()
    }

    /// Mass rescaled to sum to one. `None` when coverage is zero.
    pub fn normalized(&self) -> Option<Vec<f64>> {
        let s: f64 = self.mass.iter().sum();
        (s > 0.0).then(|| self.mass.iter().map(|m| m / s).collect())
    }

    /// Sparse text form: a header line then `index<TAB>mass` for nonzero
    /// entries. Floats use the shortest round-trip representation.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(
            w,
            "#vocab_hash={} token_count={} coverage={} dim={}",
            self.vocab_hash,
            self.token_count,
            self.coverage,
            self.dim()
        )?;
        for (i, m) in self.mass.iter().enumerate() {
            if *m != 0.0 {
                writeln!(w, "{i}\t{m}")?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "missing header"))??;
        let header = header
            .strip_prefix('#')
            .ok_or_else(|| Error::parse(path, 1, "header must start with '#'"))?;
        let mut fields = HashMap::new();
        for kv in header.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::parse(path, 1, format!("bad header field `{kv}`")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::parse(path, 1, format!("header lacks `{k}`")))
        };
        let bad = |k: &str| Error::parse(path, 1, format!("unparsable `{k}`"));
        let vocab_hash = get("vocab_hash")?.to_owned();
        let token_count: u64 = get("token_count")?.parse().map_err(|_| bad("token_count"))?;
        let coverage: f64 = get("coverage")?.parse().map_err(|_| bad("coverage"))?;
        let dim: usize = get("dim")?.parse().map_err(|_| bad("dim"))?;
        let mut mass = vec![0.0; dim];
        for (n, line) in lines.enumerate() {
            let line = line?;
            let lineno = n + 2;
            let (i, m) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, lineno, "expected index<TAB>mass"))?;
            let i: usize = i
                .parse()
                .map_err(|_| Error::parse(path, lineno, "bad index"))?;
            let m: f64 = m
                .parse()
                .map_err(|_| Error::parse(path, lineno, "bad mass"))?;
            if i >= dim {
                return Err(Error::parse(path, lineno, format!("index {i} >= dim {dim}")));
            }
            mass[i] = m;
        }
        Ok(TermDistribution {
            vocab_hash,
            mass,
            coverage,
            token_count,
        })
    }
}

pub fn term_distribution(corpus: &DomainCorpus, vocab: &Vocabulary) -> Result<TermDistribution> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus(corpus.domain_id.clone()));
    }
    let tokens: Vec<String> = corpus
        .documents
        .iter()
        .flat_map(|d| tokenize(&d.text))
        .collect();
    TermDistribution::from_tokens(tokens.iter().map(String::as_str), vocab).map_err(|e| match e {
        Error::EmptyCorpus(_) => Error::EmptyCorpus(corpus.domain_id.clone()),
        e => e,
    })
}

/// Documents read from a line-delimited JSON corpus file.
#[derive(Debug, Clone, Default)]
pub struct CorpusFile {
    pub documents: Vec<Document>,
    /// Line numbers of records whose text was blank.
    pub skipped_blank: Vec<usize>,
}

/// Reads one JSON record per line. Missing ids default to the 1-based line
/// number; blank lines are ignored.
pub fn read_corpus(path: &Path) -> Result<CorpusFile> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = CorpusFile::default();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut doc: Document = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        if doc.text.trim().is_empty() {
            out.skipped_blank.push(lineno);
            continue;
        }
        if doc.id.is_empty() {
            doc.id = lineno.to_string();
        }
        out.documents.push(doc);
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, docs: &[Document]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for d in docs {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Hash of a corpus's documents in order; used for cache keys.
pub fn corpus_hash(docs: &[Document]) -> String {
    let mut buf = Vec::new();
    for d in docs {
        serde_json::to_writer(&mut buf, d).expect("document serializes");
        buf.push(b'\n');
    }
    sha256_hex(&buf)
}
