//! The workspace directory and its manifest.
//!
//! Every stage records the hashes of the artifacts it read and wrote. A
//! stage is skipped when its parameters and inputs are unchanged and its
//! outputs are intact; an input whose hash no longer matches what its
//! producer recorded is refused with the producer's name.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use xferdiv::hash::sha256_hex;

use crate::config::Config;
use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Synth,
    Featurize,
    Correlate,
    TrainRank,
    Evaluate,
    Budget,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Synth,
        Stage::Featurize,
        Stage::Correlate,
        Stage::TrainRank,
        Stage::Evaluate,
        Stage::Budget,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Synth => "synth",
            Stage::Featurize => "featurize",
            Stage::Correlate => "correlate",
            Stage::TrainRank => "train-rank",
            Stage::Evaluate => "evaluate",
            Stage::Budget => "budget",
        }
    }

    fn from_name(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.name() == s)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Stage that normally produces `rel`, for messages about missing files.
fn expected_producer(rel: &str) -> &'static str {
    if rel.starts_with("features/") {
        "featurize"
    } else if rel.starts_with("models/") || rel == "rankings.csv" {
        "train-rank"
    } else if rel.starts_with("ndcg/") || rel.starts_with("report.") {
        "evaluate"
    } else if rel == "correlations.csv" {
        "correlate"
    } else {
        "ingest` or `xferdiv synth"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub params_hash: String,
    /// Workspace-relative path to content hash.
    pub inputs: BTreeMap<String, String>,
    /// Files read from outside the workspace.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub external_inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub timings: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub root: PathBuf,
    pub config_hash: String,
    /// Effective configuration of the most recent command.
    pub config: Config,
    pub stages: BTreeMap<String, StageRecord>,
}

/// What a stage read and wrote, ready to be hashed into its record.
#[derive(Debug, Clone, Default)]
pub struct Completed {
    pub params_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub external_inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub seconds: f64,
    pub timings: BTreeMap<String, f64>,
}

pub struct Workspace {
    root: PathBuf,
    manifest: Manifest,
}

impl Workspace {
    pub fn open(root: &Path, cfg: &Config) -> CliResult<Self> {
        std::fs::create_dir_all(root)?;
        let path = root.join(MANIFEST);
        let stages = if path.exists() {
            let m: Manifest = serde_json::from_str(&std::fs::read_to_string(&path)?)
                .map_err(|e| CliError::Input(format!("{}: unreadable manifest: {e}", path.display())))?;
            m.stages
        } else {
            BTreeMap::new()
        };
        for (name, rec) in &stages {
            if Stage::from_name(name).is_none() {
                return Err(CliError::Input(format!("manifest names unknown stage `{name}`")));
            }
            if rec.seconds < 0.0 || rec.timings.values().any(|t| *t < 0.0) {
                return Err(CliError::Input(format!("manifest holds negative timings for `{name}`")));
            }
        }
        Ok(Workspace {
            root: root.to_path_buf(),
            manifest: Manifest {
                tool_version: TOOL_VERSION.to_owned(),
                root: root.to_path_buf(),
                config_hash: cfg.hash(),
                config: cfg.clone(),
                stages,
            },
        })
    }

    /// Absolute path of a workspace-relative artifact. Refuses anything that
    /// would resolve outside the root.
    pub fn path(&self, rel: &str) -> CliResult<PathBuf> {
        let p = Path::new(rel);
        if p.components().any(|c| !matches!(c, Component::Normal(_))) {
            return Err(CliError::OutsideWorkspace(p.to_path_buf()));
        }
        Ok(self.root.join(p))
    }

    /// Creates the parent directory of `rel` and returns its absolute path.
    pub fn output(&self, rel: &str) -> CliResult<PathBuf> {
        let p = self.path(rel)?;
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir)?;
        }
        Ok(p)
    }

    fn hash_file(path: &Path) -> CliResult<Option<String>> {
        match std::fs::read(path) {
            Ok(bytes) => Ok(Some(sha256_hex(&bytes))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn record(&self, stage: Stage) -> Option<&StageRecord> {
        self.manifest.stages.get(stage.name())
    }

    /// Recorded outputs of any stage under `prefix`.
    pub fn artifacts(&self, prefix: &str) -> Vec<String> {
        let set: BTreeSet<&String> = self
            .manifest
            .stages
            .values()
            .flat_map(|r| r.outputs.keys())
            .filter(|p| p.starts_with(prefix))
            .collect();
        set.into_iter().cloned().collect()
    }

    fn producer(&self, rel: &str) -> Option<(Stage, &StageRecord)> {
        self.manifest
            .stages
            .iter()
            .find(|(_, r)| r.outputs.contains_key(rel))
            .and_then(|(n, r)| Stage::from_name(n).map(|s| (s, r)))
    }

    /// Checks every input and, transitively, the stages that produced them.
    /// `fresh` gives the parameter hash a stage would have under the current
    /// configuration, where that can be computed.
    pub fn verify_inputs(
        &self,
        inputs: &[String],
        fresh: &dyn Fn(Stage) -> Option<String>,
    ) -> CliResult<BTreeMap<String, String>> {
        let mut memo = HashMap::new();
        let mut checked = BTreeSet::new();
        inputs
            .iter()
            .map(|rel| Ok((rel.clone(), self.verify(rel, fresh, &mut memo, &mut checked)?)))
            .collect()
    }

    fn verify(
        &self,
        rel: &str,
        fresh: &dyn Fn(Stage) -> Option<String>,
        memo: &mut HashMap<String, String>,
        checked: &mut BTreeSet<Stage>,
    ) -> CliResult<String> {
        if let Some(h) = memo.get(rel) {
            return Ok(h.clone());
        }
        let Some((stage, rec)) = self.producer(rel) else {
            return Err(CliError::Missing {
                path: rel.to_owned(),
                stage: expected_producer(rel).to_owned(),
            });
        };
        let recorded = rec.outputs[rel].clone();
        match Self::hash_file(&self.path(rel)?)? {
            None => {
                return Err(CliError::Missing {
                    path: rel.to_owned(),
                    stage: stage.name().to_owned(),
                })
            }
            Some(h) if h != recorded => {
                return Err(CliError::Tampered {
                    path: rel.to_owned(),
                    stage: stage.name().to_owned(),
                })
            }
            Some(_) => {}
        }
        if checked.insert(stage) {
            let stale = |reason: String| CliError::Stale {
                stage: stage.name().to_owned(),
                reason,
            };
            if fresh(stage).is_some_and(|h| h != rec.params_hash) {
                return Err(stale("its configuration changed".into()));
            }
            for (p, h) in &rec.external_inputs {
                if Self::hash_file(Path::new(p))?.as_ref() != Some(h) {
                    return Err(stale(format!("input {p} changed")));
                }
            }
            for (p, h) in &rec.inputs {
                if self.verify(p, fresh, memo, checked)? != *h {
                    return Err(stale(format!("upstream `{p}` changed since it ran")));
                }
            }
        }
        memo.insert(rel.to_owned(), recorded.clone());
        Ok(recorded)
    }

    /// True when `stage` last ran with the same parameters and inputs and
    /// every output it wrote is still intact.
    pub fn is_cached(
        &self,
        stage: Stage,
        params_hash: &str,
        inputs: &BTreeMap<String, String>,
        external: &BTreeMap<String, String>,
    ) -> CliResult<bool> {
        let Some(rec) = self.record(stage) else {
            return Ok(false);
        };
        if rec.params_hash != params_hash || rec.inputs != *inputs || rec.external_inputs != *external {
            return Ok(false);
        }
        for (p, h) in &rec.outputs {
            if Self::hash_file(&self.path(p)?)?.as_ref() != Some(h) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Hashes the given outputs and stores the stage record. Records of other
    /// stages that claimed any of the same outputs are dropped, and files no
    /// longer claimed by anyone are removed.
    pub fn commit(&mut self, stage: Stage, run: Completed) -> CliResult<()> {
        let mut hashed = BTreeMap::new();
        for rel in &run.outputs {
            let h = Self::hash_file(&self.path(rel)?)?
                .ok_or_else(|| CliError::Input(format!("stage {stage} did not write {rel}")))?;
            hashed.insert(rel.clone(), h);
        }
        let displaced: Vec<String> = self
            .manifest
            .stages
            .iter()
            .filter(|(n, r)| n.as_str() == stage.name() || r.outputs.keys().any(|p| hashed.contains_key(p)))
            .map(|(n, _)| n.clone())
            .collect();
        for name in displaced {
            let old = self.manifest.stages.remove(&name).expect("listed");
            for p in old.outputs.keys().filter(|p| !hashed.contains_key(*p)) {
                let abs = self.path(p)?;
                if abs.exists() {
                    std::fs::remove_file(abs)?;
                }
            }
        }
        self.manifest.stages.insert(
            stage.name().to_owned(),
            StageRecord {
                params_hash: run.params_hash,
                inputs: run.inputs,
                external_inputs: run.external_inputs,
                outputs: hashed,
                seconds: run.seconds.max(0.0),
                timings: run.timings,
            },
        );
        self.save()
    }

    /// Rewrites the manifest through a temporary file in the root.
    pub fn save(&self) -> CliResult<()> {
        let tmp = self.root.join(format!("{MANIFEST}.tmp"));
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        std::fs::write(&tmp, text)?;
        std::fs::rename(&tmp, self.root.join(MANIFEST))?;
        Ok(())
    }

    pub fn hash_external(path: &Path) -> CliResult<String> {
        Self::hash_file(path)?.ok_or_else(|| CliError::Input(format!("{} does not exist", path.display())))
    }
}
