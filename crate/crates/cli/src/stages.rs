//! One function per command. Each declares its inputs and parameters, lets
//! the workspace decide whether the cached outputs are still valid, and
//! otherwise recomputes and records what it wrote.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use xferdiv::corpus::{label_documents, read_corpus, write_corpus, Document, DomainCorpus, Split, SplitTriple};
use xferdiv::embeddings::EmbeddingTable;
use xferdiv::eval::{
    build_report, correlation_table, render_summary, runtime_accounting, write_budget_csv, write_correlations_csv,
    write_ndcg_csv, EvaluationReport,
};
use xferdiv::features::{
    feature_matrix, meta_path, read_feature_csv, representations_from_splits, sample_all_splits, write_feature_csv,
    FeatureCacheMeta, PairFeatures, StageTimings,
};
use xferdiv::hash::FieldHasher;
use xferdiv::ranker::{
    read_performance_csv, read_rankings_csv, run_protocol, write_performance_csv, write_rankings_csv,
    PerformanceRecord, ProtocolSpec,
};
use xferdiv::synth;

use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::workspace::{Completed, Stage, Workspace, TOOL_VERSION};

const SPLITS: &str = "splits.json";
const EMBEDDINGS: &str = "embeddings.txt";
const PERFORMANCE: &str = "performance.csv";
const RANKINGS: &str = "rankings.csv";
const REPORT: &str = "report.json";

fn corpus_path(domain: &str) -> String {
    format!("corpora/{domain}.jsonl")
}

fn features_path(n_s: usize) -> String {
    format!("features/features_ns{n_s}.csv")
}

fn feature_files(cfg: &Config) -> Vec<String> {
    cfg.corpus
        .n_s_settings
        .iter()
        .flat_map(|&n| {
            let csv = features_path(n);
            let meta = meta_path(Path::new(&csv)).to_string_lossy().into_owned();
            [csv, meta]
        })
        .collect()
}

/// Document ids of every split, per setting and domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SplitsFile {
    seed: u64,
    n_holdout: usize,
    settings: BTreeMap<usize, BTreeMap<String, SplitIds>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SplitIds {
    train: Vec<String>,
    validation: Vec<String>,
    test: Vec<String>,
}

/// Parameters each stage is keyed on. `None` for stages whose key depends
/// on the manifest rather than the configuration alone.
fn stage_params(stage: Stage, cfg: &Config) -> Option<serde_json::Value> {
    let splits = json!({
        "seed": cfg.seed,
        "n_s_settings": cfg.corpus.n_s_settings,
        "n_holdout": cfg.corpus.n_holdout,
    });
    Some(match stage {
        Stage::Ingest => json!({ "data": cfg.data, "splits": splits }),
        Stage::Synth => json!({ "synth": cfg.synth, "splits": splits }),
        Stage::Featurize => json!({
            "n_s_settings": cfg.corpus.n_s_settings,
            "vocab_size": cfg.corpus.vocab_size,
            "smoothing_a": cfg.corpus.smoothing_a,
            "measures": cfg.measures,
        }),
        Stage::Correlate => json!({ "n_s_settings": cfg.corpus.n_s_settings }),
        Stage::TrainRank => json!({ "n_s_settings": cfg.corpus.n_s_settings, "ranker": cfg.ranker }),
        Stage::Evaluate => json!({ "n_s_settings": cfg.corpus.n_s_settings, "eval": cfg.eval }),
        Stage::Budget => return None,
    })
}

fn params_hash(stage: Stage, params: &serde_json::Value) -> String {
    FieldHasher::new()
        .field(TOOL_VERSION)
        .field(stage.name())
        .field(serde_json::to_vec(params).expect("params serialize"))
        .finish()
}

/// What a stage body produced.
#[derive(Default)]
struct Produced {
    outputs: Vec<String>,
    timings: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    CacheHit,
    Ran,
}

struct Plan {
    params: serde_json::Value,
    inputs: Vec<String>,
    external: Vec<PathBuf>,
}

fn execute(
    ws: &mut Workspace,
    cfg: &Config,
    stage: Stage,
    plan: Plan,
    body: impl FnOnce(&Workspace) -> CliResult<Produced>,
) -> CliResult<Status> {
    let fresh = |s: Stage| stage_params(s, cfg).map(|p| params_hash(s, &p));
    let inputs = ws.verify_inputs(&plan.inputs, &fresh)?;
    let external = plan
        .external
        .iter()
        .map(|p| Ok((p.to_string_lossy().into_owned(), Workspace::hash_external(p)?)))
        .collect::<CliResult<BTreeMap<_, _>>>()?;
    let params_hash = params_hash(stage, &plan.params);
    if ws.is_cached(stage, &params_hash, &inputs, &external)? {
        log::info!("{stage}: cache hit, nothing to recompute");
        return Ok(Status::CacheHit);
    }
    log::info!("{stage}: running");
    let start = Instant::now();
    let produced = body(ws)?;
    let seconds = start.elapsed().as_secs_f64();
    ws.commit(
        stage,
        Completed {
            params_hash,
            inputs,
            external_inputs: external,
            outputs: produced.outputs,
            seconds,
            timings: produced.timings,
        },
    )?;
    log::info!("{stage}: done in {seconds:.2}s");
    Ok(Status::Ran)
}

pub fn run(stage: Stage, ws: &mut Workspace, cfg: &Config) -> CliResult<Status> {
    match stage {
        Stage::Ingest => ingest(ws, cfg),
        Stage::Synth => synthesize(ws, cfg),
        Stage::Featurize => featurize(ws, cfg),
        Stage::Correlate => correlate(ws, cfg),
        Stage::TrainRank => train_rank(ws, cfg),
        Stage::Evaluate => evaluate(ws, cfg),
        Stage::Budget => budget(ws, cfg),
    }
}

/// Writes the labeled pools and their sampled splits.
fn write_corpora_and_splits(
    ws: &Workspace,
    pools: &BTreeMap<String, Vec<Document>>,
    cfg: &Config,
) -> CliResult<Vec<String>> {
    let mut outputs = Vec::new();
    for (id, docs) in pools {
        let rel = corpus_path(id);
        write_corpus(&ws.output(&rel)?, docs)?;
        outputs.push(rel);
    }
    let triples = sample_all_splits(pools, &cfg.representation())?;
    let ids = |c: &DomainCorpus| c.documents.iter().map(|d| d.id.clone()).collect();
    let settings = triples
        .iter()
        .map(|(&n_s, ts)| {
            let per_domain = ts
                .iter()
                .map(|t| {
                    let s = SplitIds {
                        train: ids(&t.train),
                        validation: ids(&t.validation),
                        test: ids(&t.test),
                    };
                    (t.train.domain_id.clone(), s)
                })
                .collect();
            (n_s, per_domain)
        })
        .collect();
    let file = SplitsFile {
        seed: cfg.seed,
        n_holdout: cfg.corpus.n_holdout,
        settings,
    };
    write_json(&ws.output(SPLITS)?, &file)?;
    outputs.push(SPLITS.into());
    Ok(outputs)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn ingest(ws: &mut Workspace, cfg: &Config) -> CliResult<Status> {
    let data = &cfg.data;
    let dir = data
        .corpora_dir
        .clone()
        .ok_or_else(|| CliError::Config("ingest needs data.corpora_dir".into()))?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    files.retain(|p| p.extension().is_some_and(|x| x == "jsonl"));
    files.sort();
    if files.len() < 2 {
        return Err(CliError::Input(format!(
            "{} holds {} domain file(s); at least two are required",
            dir.display(),
            files.len()
        )));
    }
    let mut external = files.clone();
    external.extend(data.embeddings.iter().cloned());
    external.extend(data.performance.iter().cloned());
    let embeddings = data
        .embeddings
        .clone()
        .ok_or_else(|| CliError::Config("ingest needs data.embeddings".into()))?;
    let plan = Plan {
        params: stage_params(Stage::Ingest, cfg).expect("keyed on config"),
        inputs: Vec::new(),
        external,
    };
    execute(ws, cfg, Stage::Ingest, plan, |ws| {
        let mut pools = BTreeMap::new();
        for f in &files {
            let id = f.file_stem().expect("has stem").to_string_lossy().into_owned();
            let read = read_corpus(f)?;
            if !read.skipped_blank.is_empty() {
                log::warn!("{id}: skipped {} blank record(s)", read.skipped_blank.len());
            }
            let (docs, stats) = label_documents(read.documents, data.rating_scheme);
            log::info!(
                "{id}: kept {}, dropped {}, rejected {}, unlabeled {}",
                stats.kept,
                stats.dropped,
                stats.rejected,
                stats.unlabeled
            );
            let mut seen = std::collections::HashSet::new();
            if let Some(d) = docs.iter().find(|d| !seen.insert(d.id.as_str())) {
                return Err(CliError::Input(format!("{}: duplicate document id `{}`", f.display(), d.id)));
            }
            pools.insert(id, docs);
        }
        let mut outputs = write_corpora_and_splits(ws, &pools, cfg)?;
        EmbeddingTable::load(&embeddings)?.write(&ws.output(EMBEDDINGS)?)?;
        outputs.push(EMBEDDINGS.into());
        if let Some(perf) = &data.performance {
            write_performance_csv(&ws.output(PERFORMANCE)?, &read_performance_csv(perf)?)?;
            outputs.push(PERFORMANCE.into());
        }
        Ok(Produced {
            outputs,
            ..Default::default()
        })
    })
}

fn synthesize(ws: &mut Workspace, cfg: &Config) -> CliResult<Status> {
    let plan = Plan {
        params: stage_params(Stage::Synth, cfg).expect("keyed on config"),
        inputs: Vec::new(),
        external: Vec::new(),
    };
    execute(ws, cfg, Stage::Synth, plan, |ws| {
        let sc = &cfg.synth;
        let domains = synth::generate_domains(sc)?;
        log::info!(
            "generated {} domains, mean pairwise JS {:.4}",
            domains.len(),
            synth::mean_pairwise_js(&domains)?
        );
        let mut outputs = write_corpora_and_splits(ws, &synth::pools(&domains), cfg)?;
        write_performance_csv(&ws.output(PERFORMANCE)?, &synth::generate_performance(sc, &domains)?)?;
        synth::stock_embedding_table(sc)?.write(&ws.output(EMBEDDINGS)?)?;
        write_json(&ws.output("synth_manifest.json")?, &synth::SynthManifest::new(sc, &domains))?;
        outputs.extend([PERFORMANCE.into(), EMBEDDINGS.into(), "synth_manifest.json".into()]);
        Ok(Produced {
            outputs,
            ..Default::default()
        })
    })
}

/// Rebuilds the split corpora recorded in `splits.json` for the configured
/// settings.
fn load_splits(ws: &Workspace, cfg: &Config) -> CliResult<BTreeMap<usize, Vec<SplitTriple>>> {
    let file: SplitsFile = read_json(&ws.path(SPLITS)?)?;
    let mut pools: HashMap<String, HashMap<String, Document>> = HashMap::new();
    let mut out = BTreeMap::new();
    for &n_s in &cfg.corpus.n_s_settings {
        let domains = file.settings.get(&n_s).ok_or_else(|| CliError::Stale {
            stage: "ingest` or `synth".into(),
            reason: format!("splits.json has no n_s={n_s}"),
        })?;
        let mut triples = Vec::new();
        for (id, split_ids) in domains {
            if !pools.contains_key(id) {
                let docs = read_corpus(&ws.path(&corpus_path(id))?)?.documents;
                pools.insert(id.clone(), docs.into_iter().map(|d| (d.id.clone(), d)).collect());
            }
            let pool = &pools[id];
            let take = |ids: &[String], split: Split| -> CliResult<DomainCorpus> {
                let docs = ids
                    .iter()
                    .map(|d| {
                        pool.get(d)
                            .cloned()
                            .ok_or_else(|| CliError::Input(format!("splits.json names unknown document {id}/{d}")))
                    })
                    .collect::<CliResult<Vec<_>>>()?;
                Ok(DomainCorpus::new(id.clone(), split, docs, n_s))
            };
            triples.push(SplitTriple {
                train: take(&split_ids.train, Split::Train)?,
                validation: take(&split_ids.validation, Split::Validation)?,
                test: take(&split_ids.test, Split::Test)?,
            });
        }
        out.insert(n_s, triples);
    }
    Ok(out)
}

fn featurize(ws: &mut Workspace, cfg: &Config) -> CliResult<Status> {
    let mut inputs = vec![SPLITS.to_string(), EMBEDDINGS.to_string()];
    inputs.extend(ws.artifacts("corpora/"));
    let plan = Plan {
        params: stage_params(Stage::Featurize, cfg).expect("keyed on config"),
        inputs,
        external: Vec::new(),
    };
    execute(ws, cfg, Stage::Featurize, plan, |ws| {
        let splits = load_splits(ws, cfg)?;
        let table = EmbeddingTable::load(&ws.path(EMBEDDINGS)?)?;
        let domains: Vec<String> = splits
            .values()
            .next()
            .map(|ts| ts.iter().map(|t| t.train.domain_id.clone()).collect())
            .unwrap_or_default();

        let t = Instant::now();
        let (store, vocabs) =
            representations_from_splits(&splits, &table, cfg.corpus.vocab_size, cfg.corpus.smoothing_a)?;
        let representations_secs = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let rows = feature_matrix(&store, &domains, &cfg.corpus.n_s_settings, &cfg.measures)?;
        let measures_secs = t.elapsed().as_secs_f64();

        let mut outputs = Vec::new();
        for &n_s in &cfg.corpus.n_s_settings {
            let subset: Vec<PairFeatures> = rows.iter().filter(|r| r.n_s == n_s).cloned().collect();
            let meta = FeatureCacheMeta::for_rows(&subset, n_s, &cfg.measures)?;
            let rel = features_path(n_s);
            write_feature_csv(&ws.output(&rel)?, &subset, &meta)?;
            let vocab_rel = format!("features/vocab_ns{n_s}.txt");
            vocabs[&n_s].write(&ws.output(&vocab_rel)?)?;
            outputs.push(meta_path(Path::new(&rel)).to_string_lossy().into_owned());
            outputs.push(rel);
            outputs.push(format!("{vocab_rel}.sha256"));
            outputs.push(vocab_rel);
        }
        log::info!("{} feature rows over {} domains", rows.len(), domains.len());
        let timings = BTreeMap::from([
            ("representations_secs".to_string(), representations_secs),
            ("measures_secs".to_string(), measures_secs),
        ]);
        Ok(Produced { outputs, timings })
    })
}

fn read_features(ws: &Workspace, cfg: &Config) -> CliResult<Vec<PairFeatures>> {
    let mut rows = Vec::new();
    for &n_s in &cfg.corpus.n_s_settings {
        let (mut r, meta) = read_feature_csv(&ws.path(&features_path(n_s))?)?;
        if meta.measure_config != cfg.measures {
            return Err(CliError::Stale {
                stage: "featurize".into(),
                reason: "feature cache was built with a different measure config".into(),
            });
        }
        rows.append(&mut r);
    }
    Ok(rows)
}

/// Performance records restricted to the configured settings.
fn read_performance(ws: &Workspace, cfg: &Config) -> CliResult<Vec<PerformanceRecord>> {
    let mut rows = read_performance_csv(&ws.path(PERFORMANCE)?)?;
    rows.retain(|r| cfg.corpus.n_s_settings.contains(&r.n_s));
    Ok(rows)
}

fn correlate(ws: &mut Workspace, cfg: &Config) -> CliResult<Status> {
    let mut inputs = feature_files(cfg);
    inputs.push(PERFORMANCE.into());
    let plan = Plan {
        params: stage_params(Stage::Correlate, cfg).expect("keyed on config"),
        inputs,
        external: Vec::new(),
    };
    execute(ws, cfg, Stage::Correlate, plan, |ws| {
        let table = correlation_table(
            &read_features(ws, cfg)?,
            &read_performance(ws, cfg)?,
            &cfg.corpus.n_s_settings,
        )?;
        write_correlations_csv(&ws.output("correlations.csv")?, &table)?;
        Ok(Produced {
            outputs: vec!["correlations.csv".into()],
            ..Default::default()
        })
    })
}

fn train_rank(ws: &mut Workspace, cfg: &Config) -> CliResult<Status> {
    let mut inputs = feature_files(cfg);
    inputs.push(PERFORMANCE.into());
    let plan = Plan {
        params: stage_params(Stage::TrainRank, cfg).expect("keyed on config"),
        inputs,
        external: Vec::new(),
    };
    execute(ws, cfg, Stage::TrainRank, plan, |ws| {
        let features = read_features(ws, cfg)?;
        let performances = read_performance(ws, cfg)?;
        let spec = ProtocolSpec {
            feature_sets: &cfg.ranker.feature_sets,
            n_s_settings: &cfg.corpus.n_s_settings,
            seeds: &cfg.ranker.seeds,
            params: cfg.ranker.params,
        };
        let t = Instant::now();
        let cells = run_protocol(&features, &performances, &spec)?;
        let regression_secs = t.elapsed().as_secs_f64();
        log::info!("trained {} models", cells.len());

        let mut outputs = Vec::with_capacity(cells.len() + 1);
        for c in &cells {
            let r = &c.ranking;
            let rel = format!("models/ns{}/{}__{}__seed{}.gbt", r.n_s, r.target_id, r.feature_set, r.seed);
            std::fs::write(ws.output(&rel)?, c.model.to_text())?;
            outputs.push(rel);
        }
        let rankings: Vec<_> = cells.into_iter().map(|c| c.ranking).collect();
        write_rankings_csv(&ws.output(RANKINGS)?, &rankings)?;
        outputs.push(RANKINGS.into());
        Ok(Produced {
            outputs,
            timings: BTreeMap::from([("regression_secs".to_string(), regression_secs)]),
        })
    })
}

fn evaluate(ws: &mut Workspace, cfg: &Config) -> CliResult<Status> {
    let mut inputs = feature_files(cfg);
    inputs.extend([PERFORMANCE.into(), RANKINGS.into()]);
    let plan = Plan {
        params: stage_params(Stage::Evaluate, cfg).expect("keyed on config"),
        inputs,
        external: Vec::new(),
    };
    execute(ws, cfg, Stage::Evaluate, plan, |ws| {
        let report = build_report(
            &read_features(ws, cfg)?,
            &read_performance(ws, cfg)?,
            &read_rankings_csv(&ws.path(RANKINGS)?)?,
            &cfg.eval,
        )?;
        std::fs::write(ws.output(REPORT)?, report.to_json()?)?;
        std::fs::write(ws.output("report.txt")?, render_summary(&report))?;
        let mut outputs = vec![REPORT.to_string(), "report.txt".to_string()];
        for c in &report.ndcg {
            let rel = format!("ndcg/ndcg_{}_ns{}.csv", c.label, c.n_s);
            write_ndcg_csv(&ws.output(&rel)?, c)?;
            outputs.push(rel);
        }
        Ok(Produced {
            outputs,
            ..Default::default()
        })
    })
}

/// Stage timings recorded by `featurize` and `train-rank`.
fn recorded_timings(ws: &Workspace) -> CliResult<StageTimings> {
    let get = |stage: Stage, key: &str| -> CliResult<f64> {
        ws.record(stage)
            .and_then(|r| r.timings.get(key).copied())
            .ok_or_else(|| CliError::Missing {
                path: format!("{key} timing"),
                stage: stage.name().into(),
            })
    };
    Ok(StageTimings {
        representations_secs: get(Stage::Featurize, "representations_secs")?,
        measures_secs: get(Stage::Featurize, "measures_secs")?,
        regression_secs: get(Stage::TrainRank, "regression_secs")?,
    })
}

fn budget(ws: &mut Workspace, cfg: &Config) -> CliResult<Status> {
    let inputs = vec![REPORT.to_string()];
    // Check the chain before reading timings from it.
    ws.verify_inputs(&inputs, &|s| stage_params(s, cfg).map(|p| params_hash(s, &p)))?;
    let timings = recorded_timings(ws)?;
    let plan = Plan {
        params: json!({ "timings": timings }),
        inputs,
        external: Vec::new(),
    };
    execute(ws, cfg, Stage::Budget, plan, |ws| {
        let report: EvaluationReport = read_json(&ws.path(REPORT)?)?;
        let accounting = runtime_accounting(&report, timings)?;
        write_json(&ws.output("savings.json")?, &accounting)?;
        let mut outputs = vec!["savings.json".to_string()];
        for b in &report.budget {
            for (name, curve) in [("predicted", &b.predicted), ("random", &b.random), ("oracle", &b.oracle)] {
                let rel = format!("budget/{name}_ns{}.csv", b.n_s);
                write_budget_csv(&ws.output(&rel)?, curve)?;
                outputs.push(rel);
            }
        }
        for s in &accounting.sections {
            let v = &s.savings;
            log::info!(
                "n_s={}: best F1 {:.4} at K*={}; training saving {:.1}%, end-to-end {:.1}% (overhead {:.4}h)",
                s.n_s,
                v.best_f1,
                v.k_star,
                100.0 * v.training_saving,
                100.0 * v.end_to_end_saving,
                v.overhead_hours
            );
        }
        Ok(Produced {
            outputs,
            ..Default::default()
        })
    })
}
