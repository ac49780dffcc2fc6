//! End-to-end pipeline drivers behind the CLI subcommands: marker selection,
//! annotation (prompt → gateway → cleanse), evaluation, reporting, and the
//! accessibility-translation path.
//!
//! Output layout per provider/strategy slice:
//! `{output_dir}/{model}/{strategy}/{transcripts,predictions,scores}.jsonl`
//! plus `summary.csv`; every file starts with a config-digest header for
//! provenance. Reruns skip samples already present in `predictions.jsonl`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{
    load_model, save_model, tfidf_select, train, AlignError, AlignmentModel, Dims, PairedCell,
    PeakSelection, TrainConfig,
};
use crate::config::{sanitize_component, ConfigError, RunConfig};
use crate::dataset::{
    load_bundle, prepare_lognorm, save_bundle, DatasetBundle, DatasetError, ExpressionMatrix,
    Layout, MatrixEntry,
};
use crate::deg::{rank_degs, rankings_tsv, DegError, SkippedType};
use crate::eval::{aggregate, score_sample, EvalError, GroupField, ScoreRow};
use crate::gateway::{ChatRequest, Gateway, GatewayError, ReplayMode, ReplayStore};
use crate::label::{normalize_label, normalized_references, process_response, reference_candidates};
use crate::prompt::{run_strategy, CellQuery, Strategy};
use crate::report::{render_leaderboard, render_summary_csv};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Deg(#[from] DegError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Malformed {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("aborted on first failure: sample '{sample_id}': {message}")]
    FailFast { sample_id: String, message: String },
    #[error("prediction references unknown sample '{0}'")]
    UnknownSample(String),
    #[error("no prediction rows found under {0}")]
    EmptyReport(PathBuf),
    #[error("{0}")]
    Invalid(String),
}

impl RunError {
    /// CLI exit code: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Gateway(GatewayError::Config(_)) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// First line of every output file.
#[derive(Debug, Serialize, Deserialize)]
struct FileHeader {
    config_digest: String,
}

/// One provider call as persisted in `transcripts.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub sample_id: String,
    pub round: u32,
    pub request: ChatRequest,
    pub response: String,
    pub provider: String,
    pub model: String,
    /// Wall-clock seconds; omitted in replay mode so reruns are
    /// byte-identical.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timestamp: Option<u64>,
}

/// One sample outcome as persisted in `predictions.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRow {
    pub sample_id: String,
    pub model: String,
    pub strategy: Strategy,
    pub tissue: String,
    pub dataset_id: String,
    /// Raw final response (absent when the sample failed).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub response: Option<String>,
    /// Cleansed prediction (empty on failure).
    pub prediction: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

fn append_jsonl<T: Serialize>(path: &Path, digest: &str, rows: &[T]) -> Result<(), RunError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let fresh = !path.exists();
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    if fresh {
        let header = serde_json::to_string(&FileHeader {
            config_digest: digest.to_string(),
        })
        .expect("header serializes");
        writeln!(f, "{header}").map_err(io_err(path))?;
    }
    for row in rows {
        let line = serde_json::to_string(row).expect("row serializes");
        writeln!(f, "{line}").map_err(io_err(path))?;
    }
    Ok(())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, RunError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 && serde_json::from_str::<FileHeader>(line).is_ok() {
            continue;
        }
        let row: T = serde_json::from_str(line).map_err(|e| RunError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

/// A benchmark sample: one cell type of the bundle with its marker list and
/// the dominant tissue/dataset context of its cells.
#[derive(Debug, Clone)]
pub struct Sample {
    pub query: CellQuery,
    pub tissue: String,
    pub dataset_id: String,
}

fn dominant<'a>(values: impl Iterator<Item = &'a str>) -> String {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by_key(|&(v, n)| (n, std::cmp::Reverse(v)))
        .map(|(v, _)| v.to_string())
        .unwrap_or_default()
}

/// Derive the per-cell-type samples from a lognorm bundle.
pub fn build_samples(
    bundle: &DatasetBundle,
    k_markers: usize,
) -> Result<(Vec<Sample>, Vec<SkippedType>), RunError> {
    let outcome = rank_degs(bundle, k_markers)?;
    let groups = bundle.cells_by_type();
    let mut samples = Vec::new();
    for (cell_type, markers) in &outcome.markers {
        if markers.genes.is_empty() {
            continue;
        }
        let idx = &groups[cell_type.as_str()];
        let tissue = dominant(idx.iter().map(|&i| bundle.cells[i].tissue.as_str()));
        let dataset_id = dominant(idx.iter().map(|&i| bundle.cells[i].dataset_id.as_str()));
        samples.push(Sample {
            query: CellQuery {
                sample_id: cell_type.clone(),
                markers: markers.genes.clone(),
                context: tissue.clone(),
                references: reference_candidates(cell_type, &bundle.labels),
            },
            tissue,
            dataset_id,
        });
    }
    Ok((samples, outcome.skipped))
}

/// Counts for one provider × strategy slice of an annotation run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SliceOutcome {
    pub provider: String,
    pub model: String,
    pub strategy: Strategy,
    pub samples_total: usize,
    pub samples_run: usize,
    pub samples_skipped: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnnotateOutcome {
    pub slices: Vec<SliceOutcome>,
    /// Gateway completions actually performed, per provider.
    pub gateway_calls: BTreeMap<String, u64>,
    pub skipped_types: usize,
}

struct SampleResult {
    transcripts: Vec<TranscriptRecord>,
    prediction: PredictionRow,
    failed: bool,
}

fn slice_dir(output_dir: &Path, model: &str, strategy: Strategy) -> PathBuf {
    output_dir
        .join(sanitize_component(model))
        .join(strategy.as_str())
}

fn now_epoch() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Run the annotation pipeline for every (sample × provider × strategy).
///
/// Failures become error rows and the run continues unless `fail_fast` is
/// set. Samples already present in a slice's `predictions.jsonl` are
/// skipped, so an interrupted run can resume without repeating gateway
/// calls.
pub fn cmd_annotate(
    cfg: &RunConfig,
    workdir: &Path,
    fail_fast: bool,
) -> Result<AnnotateOutcome, RunError> {
    let digest = cfg.digest();
    let bundle = load_bundle(&workdir.join(&cfg.bundle))?;
    let bundle = prepare_lognorm(bundle, cfg.min_reads)?;
    let (samples, skipped) = build_samples(&bundle, cfg.k_markers)?;
    let output_dir = workdir.join(&cfg.output_dir);

    let mut slices = Vec::new();
    let mut gateway_calls = BTreeMap::new();
    for provider_cfg in &cfg.providers {
        let store = match &cfg.replay.store {
            Some(rel) => Some(ReplayStore::open(&workdir.join(rel)).map_err(GatewayError::from)?),
            None => None,
        };
        let gateway = Gateway::http(provider_cfg.clone(), cfg.replay.mode, store)?;
        for &strategy in &cfg.strategies {
            let dir = slice_dir(&output_dir, &provider_cfg.model, strategy);
            let predictions_path = dir.join("predictions.jsonl");
            let transcripts_path = dir.join("transcripts.jsonl");
            let done: BTreeSet<String> = if predictions_path.exists() {
                read_jsonl::<PredictionRow>(&predictions_path)?
                    .into_iter()
                    .map(|r| r.sample_id)
                    .collect()
            } else {
                BTreeSet::new()
            };
            let jobs: Vec<&Sample> = samples
                .iter()
                .filter(|s| !done.contains(&s.query.sample_id))
                .collect();

            let results = run_sample_pool(
                cfg,
                &gateway,
                provider_cfg.in_flight_limit,
                strategy,
                &jobs,
                fail_fast,
            );

            let mut failures = 0;
            let mut first_failure: Option<(String, String)> = None;
            let mut transcripts = Vec::new();
            let mut predictions = Vec::new();
            let mut completed = 0;
            for result in results.into_iter().flatten() {
                if result.failed {
                    failures += 1;
                    if first_failure.is_none() {
                        first_failure = Some((
                            result.prediction.sample_id.clone(),
                            result.prediction.error.clone().unwrap_or_default(),
                        ));
                    }
                }
                completed += 1;
                transcripts.extend(result.transcripts);
                predictions.push(result.prediction);
            }
            append_jsonl(&transcripts_path, &digest, &transcripts)?;
            append_jsonl(&predictions_path, &digest, &predictions)?;
            if fail_fast {
                if let Some((sample_id, message)) = first_failure {
                    return Err(RunError::FailFast { sample_id, message });
                }
            }
            slices.push(SliceOutcome {
                provider: provider_cfg.name.clone(),
                model: provider_cfg.model.clone(),
                strategy,
                samples_total: samples.len(),
                samples_run: completed,
                samples_skipped: done.len(),
                failures,
            });
        }
        gateway_calls.insert(provider_cfg.name.clone(), gateway.calls());
    }
    Ok(AnnotateOutcome {
        slices,
        gateway_calls,
        skipped_types: skipped.len(),
    })
}

/// Process samples on a small worker pool bounded by the provider's
/// in-flight limit; results come back in deterministic sample order.
fn run_sample_pool(
    cfg: &RunConfig,
    gateway: &Gateway,
    in_flight_limit: usize,
    strategy: Strategy,
    jobs: &[&Sample],
    fail_fast: bool,
) -> Vec<Option<SampleResult>> {
    let n_workers = in_flight_limit.min(jobs.len()).max(1);
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let results: Vec<Mutex<Option<SampleResult>>> =
        jobs.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..n_workers {
            scope.spawn(|| loop {
                if fail_fast && stop.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let result = run_one_sample(cfg, gateway, strategy, jobs[i]);
                if result.failed && fail_fast {
                    stop.store(true, Ordering::SeqCst);
                }
                *results[i].lock().unwrap() = Some(result);
            });
        }
    });
    results.into_iter().map(|m| m.into_inner().unwrap()).collect()
}

fn run_one_sample(
    cfg: &RunConfig,
    gateway: &Gateway,
    strategy: Strategy,
    sample: &Sample,
) -> SampleResult {
    let timestamp = match cfg.replay.mode {
        ReplayMode::Replay => None,
        _ => Some(now_epoch()),
    };
    let outcome = run_strategy(strategy, &sample.query, gateway, &cfg.sampling, &cfg.prompts);
    let to_record = |round: &crate::prompt::ExchangeRound| TranscriptRecord {
        sample_id: sample.query.sample_id.clone(),
        round: round.round,
        request: ChatRequest::new(gateway.model(), &round.messages, &cfg.sampling),
        response: round.response.clone(),
        provider: gateway.provider_name().to_string(),
        model: gateway.model().to_string(),
        timestamp,
    };
    match outcome {
        Ok(transcript) => {
            let cleansed = process_response(&transcript.final_response);
            SampleResult {
                transcripts: transcript.rounds.iter().map(to_record).collect(),
                prediction: PredictionRow {
                    sample_id: sample.query.sample_id.clone(),
                    model: gateway.model().to_string(),
                    strategy,
                    tissue: sample.tissue.clone(),
                    dataset_id: sample.dataset_id.clone(),
                    response: Some(transcript.final_response),
                    prediction: cleansed.extracted,
                    error: None,
                },
                failed: false,
            }
        }
        Err(e) => SampleResult {
            transcripts: e.partial.iter().map(to_record).collect(),
            prediction: PredictionRow {
                sample_id: sample.query.sample_id.clone(),
                model: gateway.model().to_string(),
                strategy,
                tissue: sample.tissue.clone(),
                dataset_id: sample.dataset_id.clone(),
                response: None,
                prediction: String::new(),
                error: Some(e.to_string()),
            },
            failed: true,
        },
    }
}

/// Scored rows plus where they were written.
#[derive(Debug, Clone, Serialize)]
pub struct EvaluateOutcome {
    pub rows_scored: usize,
    pub slices: Vec<PathBuf>,
    pub summary_path: PathBuf,
}

/// Score every prediction under the configured output directory and write
/// per-slice `scores.jsonl` + `summary.csv`, plus a combined root summary.
pub fn cmd_evaluate(cfg: &RunConfig, workdir: &Path) -> Result<EvaluateOutcome, RunError> {
    let digest = cfg.digest();
    let bundle = load_bundle(&workdir.join(&cfg.bundle))?;
    let output_dir = workdir.join(&cfg.output_dir);
    let mut all_rows = Vec::new();
    let mut slices = Vec::new();
    for provider_cfg in &cfg.providers {
        for &strategy in &cfg.strategies {
            let dir = slice_dir(&output_dir, &provider_cfg.model, strategy);
            let predictions_path = dir.join("predictions.jsonl");
            if !predictions_path.exists() {
                continue;
            }
            let predictions: Vec<PredictionRow> = read_jsonl(&predictions_path)?;
            let mut rows = Vec::with_capacity(predictions.len());
            for p in &predictions {
                rows.push(score_prediction(&bundle, p)?);
            }
            rows.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
            let scores_path = dir.join("scores.jsonl");
            if scores_path.exists() {
                fs::remove_file(&scores_path).map_err(io_err(&scores_path))?;
            }
            append_jsonl(&scores_path, &digest, &rows)?;
            let report = aggregate(
                &rows,
                &[], // global for this slice
            )?;
            let mut groups = report.groups;
            for fields in [vec![GroupField::Tissue], vec![GroupField::Dataset]] {
                groups.extend(aggregate(&rows, &fields)?.groups);
            }
            let summary_path = dir.join("summary.csv");
            fs::write(&summary_path, render_summary_csv(&groups, &digest))
                .map_err(io_err(&summary_path))?;
            all_rows.extend(rows);
            slices.push(dir);
        }
    }
    if all_rows.is_empty() {
        return Err(RunError::EmptyReport(output_dir));
    }
    let mut groups = BTreeMap::new();
    for fields in [
        vec![],
        vec![GroupField::Model],
        vec![GroupField::Strategy],
        vec![GroupField::Tissue],
        vec![GroupField::Dataset],
        vec![GroupField::Model, GroupField::Strategy],
    ] {
        groups.extend(aggregate(&all_rows, &fields)?.groups);
    }
    let summary_path = output_dir.join("summary.csv");
    fs::write(&summary_path, render_summary_csv(&groups, &digest))
        .map_err(io_err(&summary_path))?;
    Ok(EvaluateOutcome {
        rows_scored: all_rows.len(),
        slices,
        summary_path,
    })
}

fn score_prediction(bundle: &DatasetBundle, p: &PredictionRow) -> Result<ScoreRow, RunError> {
    if !bundle.labels.contains_key(&p.sample_id) {
        return Err(RunError::UnknownSample(p.sample_id.clone()));
    }
    let refs = normalized_references(&reference_candidates(&p.sample_id, &bundle.labels));
    let normalized = normalize_label(&p.prediction);
    let (b, em, f1) = score_sample(&normalized, &refs)?;
    Ok(ScoreRow {
        sample_id: p.sample_id.clone(),
        model: p.model.clone(),
        strategy: p.strategy,
        tissue: p.tissue.clone(),
        dataset_id: p.dataset_id.clone(),
        prediction: normalized,
        bleu1: b.bleu1,
        bleu2: b.bleu2,
        bleu_avg: b.bleu_avg,
        em,
        f1,
    })
}

/// Marker rankings as TSV (the `deg` subcommand).
pub fn cmd_deg(bundle_path: &Path, k: usize, min_reads: u64) -> Result<String, RunError> {
    let bundle = load_bundle(bundle_path)?;
    let bundle = prepare_lognorm(bundle, min_reads)?;
    let outcome = rank_degs(&bundle, k)?;
    Ok(rankings_tsv(&outcome, k))
}

/// Render the leaderboard and root summary from every scores file under the
/// output directory (the `report` subcommand). Returns the leaderboard text.
pub fn cmd_report(output_dir: &Path, digest: &str) -> Result<String, RunError> {
    let mut rows: Vec<ScoreRow> = Vec::new();
    let mut stack = vec![output_dir.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = fs::read_dir(&dir).map_err(io_err(&dir))?;
        for entry in entries {
            let path = entry.map_err(io_err(&dir))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == "scores.jsonl") {
                rows.extend(read_jsonl::<ScoreRow>(&path)?);
            }
        }
    }
    if rows.is_empty() {
        return Err(RunError::EmptyReport(output_dir.to_path_buf()));
    }
    rows.sort_by(|a, b| {
        (&a.sample_id, &a.model, a.strategy.as_str()).cmp(&(
            &b.sample_id,
            &b.model,
            b.strategy.as_str(),
        ))
    });
    let mut groups = BTreeMap::new();
    for fields in [
        vec![],
        vec![GroupField::Model],
        vec![GroupField::Strategy],
        vec![GroupField::Tissue],
        vec![GroupField::Dataset],
        vec![GroupField::Model, GroupField::Strategy],
    ] {
        groups.extend(aggregate(&rows, &fields)?.groups);
    }
    fs::write(
        output_dir.join("summary.csv"),
        render_summary_csv(&groups, digest),
    )
    .map_err(io_err(output_dir))?;
    let leaderboard = render_leaderboard(&rows);
    fs::write(output_dir.join("leaderboard.txt"), &leaderboard).map_err(io_err(output_dir))?;
    Ok(leaderboard)
}

/// Inputs for `align train`.
#[derive(Debug, Clone)]
pub struct AlignTrainArgs {
    pub rna_bundle: PathBuf,
    pub atac_bundle: PathBuf,
    pub pairs: PathBuf,
    pub checkpoint_out: PathBuf,
    pub train: TrainConfig,
    pub d_latent: usize,
    pub d_embed: usize,
    pub tfidf_keep: Option<usize>,
}

/// Paired training data assembled from two bundles and a pairing file.
pub struct PairedDataset {
    pub cells: Vec<PairedCell>,
    pub class_names: Vec<String>,
    pub rna_genes: Vec<String>,
    pub d_atac: usize,
    pub peak_selection: Option<PeakSelection>,
}

/// Load `pairs.tsv` (`rna_cell_id  atac_cell_id  class`) against the two
/// bundles, optionally reducing accessibility columns by tf-idf first.
pub fn load_paired_dataset(
    rna_bundle: &DatasetBundle,
    atac_bundle: &DatasetBundle,
    pairs_path: &Path,
    tfidf_keep: Option<usize>,
) -> Result<PairedDataset, RunError> {
    if rna_bundle.matrix.layout != Layout::Lognorm {
        return Err(RunError::Invalid(format!(
            "expression bundle must be lognorm, found {}",
            rna_bundle.matrix.layout
        )));
    }
    if atac_bundle.matrix.layout != Layout::Binary {
        return Err(RunError::Invalid(format!(
            "accessibility bundle must be binary, found {}",
            atac_bundle.matrix.layout
        )));
    }
    let rna_index: HashMap<&str, usize> = rna_bundle
        .cells
        .iter()
        .enumerate()
        .map(|(i, c)| (c.cell_id.as_str(), i))
        .collect();
    let atac_index: HashMap<&str, usize> = atac_bundle
        .cells
        .iter()
        .enumerate()
        .map(|(i, c)| (c.cell_id.as_str(), i))
        .collect();

    let text = fs::read_to_string(pairs_path).map_err(io_err(pairs_path))?;
    let mut pairs = Vec::new();
    let mut class_set = BTreeSet::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            if line != "rna_cell_id\tatac_cell_id\tclass" {
                return Err(RunError::Malformed {
                    path: pairs_path.to_path_buf(),
                    line: 1,
                    msg: "bad header".to_string(),
                });
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(RunError::Malformed {
                path: pairs_path.to_path_buf(),
                line: lineno + 1,
                msg: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        let rna = *rna_index.get(fields[0]).ok_or_else(|| RunError::Malformed {
            path: pairs_path.to_path_buf(),
            line: lineno + 1,
            msg: format!("unknown expression cell '{}'", fields[0]),
        })?;
        let atac = *atac_index.get(fields[1]).ok_or_else(|| RunError::Malformed {
            path: pairs_path.to_path_buf(),
            line: lineno + 1,
            msg: format!("unknown accessibility cell '{}'", fields[1]),
        })?;
        class_set.insert(fields[2].to_string());
        pairs.push((rna, atac, fields[2].to_string()));
    }
    if pairs.is_empty() {
        return Err(RunError::Invalid("pairing file has no rows".to_string()));
    }
    let class_names: Vec<String> = class_set.into_iter().collect();
    let class_of: HashMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();

    let peak_selection = match tfidf_keep {
        Some(n) => Some(PeakSelection {
            input_dim: atac_bundle.matrix.n_genes,
            keep: tfidf_select(&atac_bundle.matrix, n)?,
        }),
        None => None,
    };
    let d_atac = peak_selection
        .as_ref()
        .map(|s| s.keep.len())
        .unwrap_or(atac_bundle.matrix.n_genes);

    let mut cells = Vec::with_capacity(pairs.len());
    for (rna_i, atac_i, class) in &pairs {
        let rna = rna_bundle.matrix.dense_row(*rna_i);
        let full = atac_bundle.matrix.dense_row(*atac_i);
        let atac = match &peak_selection {
            Some(sel) => sel.keep.iter().map(|&j| full[j]).collect(),
            None => full,
        };
        cells.push(PairedCell::new(atac, rna, class_of[class.as_str()])?);
    }
    Ok(PairedDataset {
        cells,
        class_names,
        rna_genes: rna_bundle.genes.names().to_vec(),
        d_atac,
        peak_selection,
    })
}

/// Train the translator and write its checkpoint (the `align train`
/// subcommand). Returns the final reconstruction loss.
pub fn cmd_align_train(args: &AlignTrainArgs) -> Result<f64, RunError> {
    let rna_bundle = load_bundle(&args.rna_bundle)?;
    let atac_bundle = load_bundle(&args.atac_bundle)?;
    let data = load_paired_dataset(&rna_bundle, &atac_bundle, &args.pairs, args.tfidf_keep)?;
    let dims = Dims {
        d_atac: data.d_atac,
        d_rna: rna_bundle.genes.len(),
        d_latent: args.d_latent,
        d_embed: args.d_embed,
        n_classes: data.class_names.len(),
    };
    let mut model = AlignmentModel::init(
        dims,
        args.train.gamma,
        data.class_names.clone(),
        args.train.seed,
    );
    model.atac_peaks = data.peak_selection.clone();
    model.rna_genes = data.rna_genes.clone();
    let history = train(&mut model, &data.cells, &args.train)?;
    save_model(&model, &args.checkpoint_out)?;
    Ok(history.last().map(|r| r.rec).unwrap_or(f64::NAN))
}

/// Translate an accessibility bundle into a pseudo-expression bundle (the
/// `align translate` subcommand). Negative predictions clamp to zero so the
/// output satisfies the expression-bundle invariants.
pub fn cmd_align_translate(
    model_path: &Path,
    atac_bundle_path: &Path,
    out_dir: &Path,
) -> Result<usize, RunError> {
    let model = load_model(model_path)?;
    if model.rna_genes.is_empty() {
        return Err(RunError::Invalid(
            "checkpoint carries no expression gene names; retrain with `align train`".to_string(),
        ));
    }
    let atac_bundle = load_bundle(atac_bundle_path)?;
    if atac_bundle.matrix.layout != Layout::Binary {
        return Err(RunError::Invalid(format!(
            "accessibility bundle must be binary, found {}",
            atac_bundle.matrix.layout
        )));
    }
    let n_cells = atac_bundle.matrix.n_cells;
    let d_rna = model.rna_genes.len();
    let mut entries = Vec::new();
    for cell in 0..n_cells {
        let profile = atac_bundle.matrix.dense_row(cell);
        let pseudo = model.translate(&profile)?;
        for (gene, &v) in pseudo.iter().enumerate() {
            if v > 0.0 {
                entries.push(MatrixEntry { cell, gene, value: v });
            }
        }
    }
    let matrix = ExpressionMatrix::new(n_cells, d_rna, Layout::Lognorm, entries)?;
    let genes = crate::dataset::GeneList::new(model.rna_genes.clone())?;
    let bundle = DatasetBundle::new(
        genes,
        matrix,
        atac_bundle.cells.clone(),
        atac_bundle.labels.clone(),
    )?;
    save_bundle(&bundle, out_dir)?;
    Ok(n_cells)
}
