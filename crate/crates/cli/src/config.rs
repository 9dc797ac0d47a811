//! The declarative run configuration and its TOML loader.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xferdiv::corpus::{RatingScheme, DEFAULT_VOCAB_SIZE};
use xferdiv::embeddings::DEFAULT_SMOOTHING_A;
use xferdiv::eval::EvalConfig;
use xferdiv::features::{FeatureSet, RepresentationConfig};
use xferdiv::hash::FieldHasher;
use xferdiv::measures::MeasureConfig;
use xferdiv::ranker::GbtParams;
use xferdiv::synth::SynthConfig;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Master seed for split sampling and synthetic generation.
    pub seed: u64,
    /// Worker threads; does not affect results, so it is not hashed.
    #[serde(skip_serializing)]
    pub jobs: Option<usize>,
    #[serde(skip_serializing)]
    pub workspace: Option<PathBuf>,
    pub data: DataConfig,
    pub corpus: CorpusConfig,
    pub measures: MeasureConfig,
    pub ranker: RankerConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
}

/// External inputs read by `ingest`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding one `<domain>.jsonl` file per domain.
    pub corpora_dir: Option<PathBuf>,
    /// Whitespace-separated embedding table.
    pub embeddings: Option<PathBuf>,
    /// `source,target,n_s,macro_f1,train_runtime_hours` CSV.
    pub performance: Option<PathBuf>,
    pub rating_scheme: RatingScheme,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub n_s_settings: Vec<usize>,
    pub n_holdout: usize,
    pub vocab_size: usize,
    /// SIF smoothing constant of the embedding representation.
    pub smoothing_a: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_s_settings: vec![1_000, 25_000],
            n_holdout: 2_500,
            vocab_size: DEFAULT_VOCAB_SIZE,
            smoothing_a: DEFAULT_SMOOTHING_A,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankerConfig {
    pub params: GbtParams,
    pub feature_sets: Vec<FeatureSet>,
    pub seeds: Vec<u64>,
}

impl Default for RankerConfig {
    fn default() -> Self {
        RankerConfig {
            params: GbtParams::default(),
            feature_sets: FeatureSet::ALL_SETS.to_vec(),
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub workspace: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

impl Config {
    /// Reads `path` (or starts from defaults), applies `over`, and
    /// validates the result. Relative data paths resolve against the
    /// directory of the config file.
    pub fn load(path: Option<&Path>, over: &Overrides) -> CliResult<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                let mut cfg: Config =
                    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                let base = p.parent().unwrap_or(Path::new(""));
                cfg.resolve_paths(base);
                cfg
            }
            None => Config::default(),
        };
        if let Some(ws) = &over.workspace {
            cfg.workspace = Some(ws.clone());
        }
        if let Some(seed) = over.seed {
            cfg.seed = seed;
        }
        if over.jobs.is_some() {
            cfg.jobs = over.jobs;
        }
        // The synthetic benchmark follows the run's seed and settings.
        cfg.corpus.n_s_settings.sort_unstable();
        cfg.corpus.n_s_settings.dedup();
        cfg.synth.seed = cfg.seed;
        cfg.synth.n_s_settings = cfg.corpus.n_s_settings.clone();
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.workspace);
        fix(&mut self.data.corpora_dir);
        fix(&mut self.data.embeddings);
        fix(&mut self.data.performance);
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: &str| Err(CliError::Config(m.to_owned()));
        if self.jobs == Some(0) {
            return bad("jobs must be at least 1");
        }
        let c = &self.corpus;
        if c.n_s_settings.is_empty() || c.n_s_settings.contains(&0) {
            return bad("corpus.n_s_settings must be non-empty and positive");
        }
        if c.n_holdout == 0 || c.vocab_size == 0 {
            return bad("corpus.n_holdout and corpus.vocab_size must be positive");
        }
        if !(c.smoothing_a > 0.0 && c.smoothing_a.is_finite()) {
            return bad("corpus.smoothing_a must be positive");
        }
        let core = |e: xferdiv::Error| CliError::Config(e.to_string());
        self.measures.validate().map_err(core)?;
        self.ranker.params.validate().map_err(core)?;
        if self.ranker.feature_sets.is_empty() || self.ranker.seeds.is_empty() {
            return bad("ranker.feature_sets and ranker.seeds must be non-empty");
        }
        let e = &self.eval;
        if e.k_grid.is_empty() || e.k_grid.contains(&0) {
            return bad("eval.k_grid must be non-empty and positive");
        }
        if e.random_permutations == 0 || e.budget_seeds.is_empty() {
            return bad("eval.random_permutations and eval.budget_seeds must be non-empty");
        }
        self.synth.validate().map_err(core)?;
        Ok(())
    }

    pub fn hash(&self) -> String {
        FieldHasher::new()
            .field(serde_json::to_vec(self).expect("config serializes"))
            .finish()
    }

    pub fn representation(&self) -> RepresentationConfig {
        RepresentationConfig {
            n_s_settings: self.corpus.n_s_settings.clone(),
            n_holdout: self.corpus.n_holdout,
            vocab_size: self.corpus.vocab_size,
            smoothing_a: self.corpus.smoothing_a,
            seed: self.seed,
        }
    }
}
