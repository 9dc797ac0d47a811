//! Static token embeddings and the probability-weighted domain embedding.
//!
//! A document vector is `(1/n) Σ v_w · sqrt(a / p(w))` over its `n` tokens
//! that have an embedding; a domain vector is the mean of its document
//! vectors.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, DomainCorpus};
use crate::error::{Error, Result};
use crate::hash::FieldHasher;

/// Default smoothing factor `a`.
pub const DEFAULT_SMOOTHING_A: f64 = 1e-3;

/// Immutable token → vector table.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
    hash: String,
}

impl EmbeddingTable {
    /// Builds a table from rows in order. Rows must share one dimension and
    /// tokens must be unique.
    pub fn from_rows<I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut builder = TableBuilder::default();
        for (n, (token, v)) in rows.into_iter().enumerate() {
            builder.push(token, v).map_err(|msg| Error::invalid(format!("row {}: {msg}", n + 1)))?;
        }
        builder.finish()
    }

    /// Reads a word2vec-style text table: an optional `<count> <dim>`
    /// header, then `token v1 ... vd` per line.
    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut builder = TableBuilder::default();
        let mut declared: Option<usize> = None;
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = n + 1;
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            let rest: Vec<&str> = fields.collect();
            if lineno == 1 && rest.len() == 1 {
                if let (Ok(count), Ok(dim)) = (token.parse::<usize>(), rest[0].parse::<usize>()) {
                    if dim == 0 {
                        return Err(Error::parse(path, lineno, "declared dimension is zero"));
                    }
                    builder.dim = Some(dim);
                    declared = Some(count);
                    continue;
                }
            }
            let mut v = Vec::with_capacity(rest.len());
            for f in rest {
                let x: f64 = f
                    .parse()
                    .map_err(|_| Error::parse(path, lineno, format!("bad float `{f}`")))?;
                if !x.is_finite() {
                    return Err(Error::parse(path, lineno, "non-finite component"));
                }
                v.push(x);
            }
            builder
                .push(token.to_owned(), v)
                .map_err(|msg| Error::parse(path, lineno, msg))?;
        }
        if let Some(count) = declared {
            if count != builder.tokens.len() {
                log::warn!(
                    "{}: header declares {count} rows, found {}",
                    path.display(),
                    builder.tokens.len()
                );
            }
        }
        builder.finish()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{} {}", self.len(), self.dim)?;
        for (i, t) in self.tokens.iter().enumerate() {
            write!(w, "{t}")?;
            for x in self.row(i) {
                write!(w, " {x}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.index.get(token).map(|&i| self.row(i))
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// Copy of the table with every vector multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let rows = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), self.row(i).iter().map(|x| x * c).collect()));
        EmbeddingTable::from_rows(rows).expect("scaling preserves table invariants")
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Default)]
struct TableBuilder {
    dim: Option<usize>,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

impl TableBuilder {
    fn push(&mut self, token: String, v: Vec<f64>) -> std::result::Result<(), String> {
        if v.is_empty() {
            return Err(format!("token `{token}` has no components"));
        }
        match self.dim {
            Some(d) if d != v.len() => {
                return Err(format!("dimension mismatch: expected {d}, found {}", v.len()))
            }
            None => self.dim = Some(v.len()),
            _ => {}
        }
        if self.index.contains_key(&token) {
            return Err(format!("duplicate token `{token}`"));
        }
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        self.data.extend(v);
        Ok(())
    }

    fn finish(self) -> Result<EmbeddingTable> {
        if self.tokens.is_empty() {
            return Err(Error::invalid("embedding table has no entries"));
        }
        let dim = self.dim.expect("dimension set by first row");
        let mut h = FieldHasher::new().field(dim.to_le_bytes());
        for (i, t) in self.tokens.iter().enumerate() {
            h = h.field(t);
            for x in &self.data[i * dim..(i + 1) * dim] {
                h = h.field(x.to_bits().to_le_bytes());
            }
        }
        Ok(EmbeddingTable {
            dim,
            tokens: self.tokens,
            index: self.index,
            data: self.data,
            hash: h.finish(),
        })
    }
}

/// Unigram probability of each token over a corpus's own tokens.
pub fn unigram_probabilities(corpus: &DomainCorpus) -> HashMap<String, f64> {
    let mut counts: HashMap<String, u64> = HashMap::new();
    let mut total = 0u64;
    for doc in &corpus.documents {
        for t in tokenize(&doc.text) {
            *counts.entry(t).or_insert(0) += 1;
            total += 1;
        }
    }
    let denom = total as f64;
    counts
        .into_iter()
        .map(|(t, c)| (t, c as f64 / denom))
        .collect()
}

fn check_a(a: f64) -> Result<()> {
    if a > 0.0 && a.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("smoothing factor a must be positive, got {a}")))
    }
}

/// Probability-weighted mean of the embeddings of `tokens`. Tokens absent
/// from the table are skipped and do not count toward the mean.
pub fn embed_document<S: AsRef<str>>(
    tokens: &[S],
    table: &EmbeddingTable,
    unigram_p: &HashMap<String, f64>,
    a: f64,
) -> Result<Vec<f64>> {
    check_a(a)?;
    embed_tokens(tokens, table, unigram_p, a).map(|(v, _)| v)
}

/// Returns the document vector and the number of embedded tokens.
fn embed_tokens<S: AsRef<str>>(
    tokens: &[S],
    table: &EmbeddingTable,
    unigram_p: &HashMap<String, f64>,
    a: f64,
) -> Result<(Vec<f64>, usize)> {
    let mut acc = vec![0.0; table.dim()];
    let mut n = 0usize;
    for t in tokens {
        let t = t.as_ref();
        let Some(v) = table.get(t) else { continue };
        let p = unigram_p.get(t).copied().unwrap_or(0.0);
        if !(p > 0.0) {
            return Err(Error::invalid(format!(
                "token `{t}` has no positive unigram probability"
            )));
        }
        let w = (a / p).sqrt();
        for (s, x) in acc.iter_mut().zip(v) {
            *s += w * x;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::UnembeddableDocument);
    }
    let inv = 1.0 / n as f64;
    acc.iter_mut().for_each(|s| *s *= inv);
    Ok((acc, n))
}

/// Mean document embedding of one domain corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainEmbedding {
    pub vector: Vec<f64>,
    pub n_pooled_documents: usize,
    pub n_skipped_documents: usize,
    pub smoothing_a: f64,
    /// Fraction of the corpus's tokens that have an embedding.
    pub coverage_fraction: f64,
    pub table_hash: String,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingMeta {
    smoothing_a: f64,
    coverage_fraction: f64,
    table_hash: String,
    n_pooled_documents: usize,
    n_skipped_documents: usize,
    unigram_scope: String,
}

impl DomainEmbedding {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    /// Writes `dim` then one float per line, plus a `.meta.json` sidecar.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{}", self.dim())?;
        for x in &self.vector {
            writeln!(w, "{x}")?;
        }
        w.flush()?;
        let meta = EmbeddingMeta {
            smoothing_a: self.smoothing_a,
            coverage_fraction: self.coverage_fraction,
            table_hash: self.table_hash.clone(),
            n_pooled_documents: self.n_pooled_documents,
            n_skipped_documents: self.n_skipped_documents,
            unigram_scope: "domain".into(),
        };
        std::fs::write(meta_path(path), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let dim: usize = lines
            .next()
            .and_then(|l| l.trim().parse().ok())
            .ok_or_else(|| Error::parse(path, 1, "expected dimension"))?;
        let mut vector = Vec::with_capacity(dim);
        for (n, l) in lines.enumerate() {
            vector.push(
                l.trim()
                    .parse()
                    .map_err(|_| Error::parse(path, n + 2, "bad float"))?,
            );
        }
        if vector.len() != dim {
            return Err(Error::parse(
                path,
                dim + 1,
                format!("expected {dim} components, found {}", vector.len()),
            ));
        }
        let meta: EmbeddingMeta = serde_json::from_str(&std::fs::read_to_string(meta_path(path))?)?;
        Ok(DomainEmbedding {
            vector,
            n_pooled_documents: meta.n_pooled_documents,
            n_skipped_documents: meta.n_skipped_documents,
            smoothing_a: meta.smoothing_a,
            coverage_fraction: meta.coverage_fraction,
            table_hash: meta.table_hash,
        })
    }
}

fn meta_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    s.into()
}

/// Mean of the document embeddings of `corpus`; unembeddable documents are
/// skipped and counted.
pub fn embed_domain(
    corpus: &DomainCorpus,
    table: &EmbeddingTable,
    unigram_p: &HashMap<String, f64>,
    a: f64,
) -> Result<DomainEmbedding> {
    check_a(a)?;
    // (embedding and count of embedded tokens, total tokens) per document
    type PerDoc = (Result<(Vec<f64>, usize)>, usize);
    let per_doc: Vec<PerDoc> = corpus
        .documents
        .par_iter()
        .map(|d| {
            let tokens = tokenize(&d.text);
            (embed_tokens(&tokens, table, unigram_p, a), tokens.len())
        })
        .collect();

    let mut sum = vec![0.0; table.dim()];
    let mut pooled = 0usize;
    let mut skipped = 0usize;
    let mut embedded_tokens = 0usize;
    let mut all_tokens = 0usize;
    for (r, n_tokens) in per_doc {
        all_tokens += n_tokens;
        match r {
            Ok((v, n)) => {
                for (s, x) in sum.iter_mut().zip(&v) {
                    *s += x;
                }
                pooled += 1;
                embedded_tokens += n;
            }
            Err(Error::UnembeddableDocument) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if pooled == 0 {
        return Err(Error::NoEmbeddableDocuments(corpus.domain_id.clone()));
    }
    let inv = 1.0 / pooled as f64;
    sum.iter_mut().for_each(|s| *s *= inv);
    if sum.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("embedding of `{}`", corpus.domain_id)));
    }
    Ok(DomainEmbedding {
        vector: sum,
        n_pooled_documents: pooled,
        n_skipped_documents: skipped,
        smoothing_a: a,
        coverage_fraction: embedded_tokens as f64 / all_tokens.max(1) as f64,
        table_hash: table.hash().to_owned(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, Split};

    fn table() -> EmbeddingTable {
        EmbeddingTable::from_rows([
            ("good".to_string(), vec![1.0, 0.0, 2.0]),
            ("bad".to_string(), vec![0.0, -1.0, 1.0]),
            ("same".to_string(), vec![1.0, 1.0, 1.0]),
            ("twin".to_string(), vec![1.0, 1.0, 1.0]),
        ])
        .unwrap()
    }

    fn probs(pairs: &[(&str, f64)]) -> HashMap<String, f64> {
        pairs.iter().map(|(t, p)| (t.to_string(), *p)).collect()
    }

    #[test]
    fn load_parses_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("emb.txt");
        std::fs::write(&p, "2 3\ngood 1 0 2\nbad 0 -1 1.5\n").unwrap();
        let t = EmbeddingTable::load(&p).unwrap();
        assert_eq!((t.len(), t.dim()), (2, 3));
        assert_eq!(t.get("bad"), Some(&[0.0, -1.0, 1.5][..]));

        std::fs::write(&p, "good 1 0 2\nbad 0 -1\n").unwrap();
        match EmbeddingTable::load(&p) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("dimension mismatch"));
            }
            other => panic!("unexpected {other:?}"),
        }

        std::fs::write(&p, "good 1 0\ngood 0 1\n").unwrap();
        assert!(matches!(EmbeddingTable::load(&p), Err(Error::Parse { line: 2, .. })));

        std::fs::write(&p, "").unwrap();
        let err = EmbeddingTable::load(&p).unwrap_err();
        assert!(err.to_string().contains("no entries"));
    }

    #[test]
    fn write_load_round_trip() {
        let t = table();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("emb.txt");
        t.write(&p).unwrap();
        let back = EmbeddingTable::load(&p).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn identity_weight() {
        let a = 0.01;
        let v = embed_document(&["good"], &table(), &probs(&[("good", a)]), a).unwrap();
        assert_eq!(v, vec![1.0, 0.0, 2.0]);
    }

    #[test]
    fn shared_vector_weights() {
        let a = 1e-3;
        let (p1, p2) = (0.2, 0.05);
        let v = embed_document(
            &["same", "twin"],
            &table(),
            &probs(&[("same", p1), ("twin", p2)]),
            a,
        )
        .unwrap();
        let expected = ((a / p1).sqrt() + (a / p2).sqrt()) / 2.0;
        for x in v {
            assert!((x - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn unembeddable_and_missing_probability() {
        let t = table();
        assert!(matches!(
            embed_document(&["zzz", "qqq"], &t, &probs(&[]), 1e-3),
            Err(Error::UnembeddableDocument)
        ));
        assert!(matches!(
            embed_document(&["good"], &t, &probs(&[]), 1e-3),
            Err(Error::Invalid(_))
        ));
        assert!(embed_document(&["good"], &t, &probs(&[("good", 0.5)]), 0.0).is_err());
    }

    #[test]
    fn domain_mean_and_skips() {
        let t = table();
        let docs = vec![
            Document::new("1", "good"),
            Document::new("2", "xyz abc"),
            Document::new("3", "bad"),
        ];
        let corpus = DomainCorpus::new("d", Split::Train, docs, 3);
        let p = unigram_probabilities(&corpus);
        assert_eq!(p["good"], 0.25);
        let a = 1e-3;
        let e = embed_domain(&corpus, &t, &p, a).unwrap();
        let u = embed_document(&["good"], &t, &p, a).unwrap();
        let w = embed_document(&["bad"], &t, &p, a).unwrap();
        for i in 0..3 {
            assert!((e.vector[i] - (u[i] + w[i]) / 2.0).abs() < 1e-15);
        }
        assert_eq!(e.n_pooled_documents, 2);
        assert_eq!(e.n_skipped_documents, 1);
        assert_eq!(e.coverage_fraction, 0.5);

        let none = DomainCorpus::new("n", Split::Train, vec![Document::new("1", "xyz")], 1);
        let p = unigram_probabilities(&none);
        assert!(matches!(
            embed_domain(&none, &t, &p, a),
            Err(Error::NoEmbeddableDocuments(_))
        ));
    }

    #[test]
    fn domain_embedding_file_round_trip() {
        let t = table();
        let corpus = DomainCorpus::new(
            "d",
            Split::Test,
            vec![Document::new("1", "good bad bad")],
            1,
        );
        let p = unigram_probabilities(&corpus);
        let e = embed_domain(&corpus, &t, &p, 1e-3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("be.txt");
        e.write(&path).unwrap();
        assert_eq!(DomainEmbedding::read(&path).unwrap(), e);
    }
}
