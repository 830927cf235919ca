//! Reproducible experiments: corpus synthesis, training, evaluation and the
//! artifacts each run leaves under its output directory.
//!
//! A run writes `checkpoint/`, `history.csv`, `metrics.csv`, `roc.csv`,
//! `embeddings.csv` and `summary.json`. The summary echoes the resolved
//! config, so `ExperimentConfig::load` on it replays the run.

mod config;
mod export;

pub use config::{
    CorpusConfig, ExperimentConfig, FinetuneConfig, PatchConfig, Protocol, Seeds, SplitConfig, VerificationConfig,
};
pub use export::{export_embeddings, ExportReport};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channelsim::{generate_corpus, ChannelError, SynthSpec};
use crate::corpus::{split_corpus, CorpusError, Label, Manifest, ManifestRow, Patch, ResolutionGroup, Split};
use crate::metrics::{self, MetricRow, MetricsError, RocPoint};
use crate::model::{ForensicModel, ModelError};
use crate::seed;
use crate::trainer::{self, CheckpointError, TrainConfig, TrainError, TrainHistory};
use crate::triplets::{build_candidate_triplets, PatchStore, Triplet, TripletError};
use crate::verifier::{
    self, calibrate_threshold, score_images, support_scores, ImageScore, SupportEntry, SupportSet, ThresholdPolicy,
    VerificationRecord, VerifyError, VerifyMode,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("I/O error: {path}: {message}")]
    Io { path: String, message: String },
}

impl ExperimentError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    /// Process exit status for this error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Data(_) => 3,
            Self::Training(_) => 4,
            Self::Io { .. } => 5,
        }
    }
}

impl From<CorpusError> for ExperimentError {
    fn from(e: CorpusError) -> Self {
        match &e {
            CorpusError::Io { path, .. } | CorpusError::MissingManifest { path } => Self::Io {
                path: path.clone(),
                message: e.to_string(),
            },
            CorpusError::InvalidSplit(_) => Self::Config(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<ChannelError> for ExperimentError {
    fn from(e: ChannelError) -> Self {
        match e {
            ChannelError::Corpus(c) => c.into(),
            ChannelError::Io { ref path, .. } => Self::Io {
                path: path.clone(),
                message: e.to_string(),
            },
            other => Self::Config(other.to_string()),
        }
    }
}

impl From<TripletError> for ExperimentError {
    fn from(e: TripletError) -> Self {
        match &e {
            TripletError::Io { path, .. } => Self::Io {
                path: path.clone(),
                message: e.to_string(),
            },
            TripletError::InvalidConfig(_) => Self::Config(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for ExperimentError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Io { ref path, .. } => Self::Io {
                path: path.clone(),
                message: e.to_string(),
            },
            TrainError::InvalidConfig(_) => Self::Config(e.to_string()),
            TrainError::Triplet(t) => t.into(),
            other => Self::Training(other.to_string()),
        }
    }
}

impl From<CheckpointError> for ExperimentError {
    fn from(e: CheckpointError) -> Self {
        match &e {
            CheckpointError::Io { path, .. } => Self::Io {
                path: path.clone(),
                message: e.to_string(),
            },
            CheckpointError::Missing(path) => Self::Io {
                path: path.clone(),
                message: e.to_string(),
            },
            CheckpointError::Corrupt { .. } => Self::Data(e.to_string()),
            CheckpointError::ConfigMismatch(_) | CheckpointError::Model(_) => Self::Config(e.to_string()),
        }
    }
}

impl From<VerifyError> for ExperimentError {
    fn from(e: VerifyError) -> Self {
        match &e {
            VerifyError::Io { path, message } => Self::Io {
                path: path.clone(),
                message: message.clone(),
            },
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<MetricsError> for ExperimentError {
    fn from(e: MetricsError) -> Self {
        match &e {
            MetricsError::Io { path, message } => Self::Io {
                path: path.clone(),
                message: message.clone(),
            },
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for ExperimentError {
    fn from(e: ModelError) -> Self {
        Self::Config(e.to_string())
    }
}

/// Fixed artifact names under the output directory.
pub mod artifacts {
    pub const CHECKPOINT: &str = "checkpoint";
    pub const HISTORY: &str = "history.csv";
    pub const FINETUNE_HISTORY: &str = "finetune_history.csv";
    pub const METRICS: &str = "metrics.csv";
    pub const ROC: &str = "roc.csv";
    pub const SCORES: &str = "scores.csv";
    pub const EMBEDDINGS: &str = "embeddings.csv";
    pub const SUMMARY: &str = "summary.json";
    pub const VERIFICATION: &str = "verification.json";
    pub const DATA: &str = "data";
}

/// A generated corpus and the SynthSpec that produced it.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub spec: SynthSpec,
    pub manifest: Manifest,
}

/// Source corpus and, for the cross and transfer protocols, the target corpus.
#[derive(Debug, Clone)]
pub struct Corpora {
    pub source: Corpus,
    pub target: Option<Corpus>,
}

/// Generates the corpora of `config` under `out/data/`.
pub fn synthesize(config: &ExperimentConfig, out: &Path) -> Result<Corpora, ExperimentError> {
    config.validate()?;
    let gen = |spec: SynthSpec, name: &str| -> Result<Corpus, ExperimentError> {
        let dir = out.join(artifacts::DATA).join(name);
        let manifest = generate_corpus(&spec, &dir)?;
        Ok(Corpus { spec, manifest })
    };
    let source = gen(config.synth_spec(), "source")?;
    let target = config.target_synth_spec().map(|s| gen(s, "target")).transpose()?;
    Ok(Corpora { source, target })
}

/// Outcome of training on the source corpus.
#[derive(Debug, Clone)]
pub struct TrainedSource {
    pub model: ForensicModel,
    pub history: TrainHistory,
    pub candidate_count: usize,
    pub validation_count: usize,
}

/// Builds triplets from the source split and trains a fresh model.
pub fn train_source(config: &ExperimentConfig, split: &Split) -> Result<TrainedSource, ExperimentError> {
    let cfg = config.resolved();
    let mut store = PatchStore::new();
    for m in [&split.train, &split.val] {
        for row in &m.rows {
            store.insert_image(&m.load_image(row)?, cfg.patches.train_stride, &cfg.patches.filter);
        }
    }
    let candidates = build_candidate_triplets(&split.train, &store)?;
    let validation = match build_candidate_triplets(&split.val, &store) {
        Ok(v) => v,
        Err(TripletError::NoValidTriplet(_)) => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    let model = ForensicModel::new(&cfg.embedder, &cfg.simnet)?;
    let (model, history) = trainer::train(model, &candidates, &validation, &cfg.train)?;
    Ok(TrainedSource {
        model,
        history,
        candidate_count: candidates.len(),
        validation_count: validation.len(),
    })
}

/// Everything a finished run reports. Written as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub protocol: Protocol,
    /// Resolved config; loading this file as a config replays the run.
    pub config: ExperimentConfig,
    pub seeds: Seeds,
    pub best_epoch: usize,
    pub counts: BTreeMap<String, usize>,
    /// Images left out of scoring because no patch passed the filter.
    pub skipped: Vec<String>,
    pub metrics: Vec<MetricRow>,
}

impl RunSummary {
    /// Value of the first metric row matching `metric`, `operating_point` and
    /// (when given) `train_set`.
    pub fn metric(&self, metric: &str, operating_point: &str, train_set: Option<&str>) -> Option<f64> {
        self.metrics
            .iter()
            .find(|r| r.metric == metric && r.operating_point == operating_point && train_set.is_none_or(|t| r.train_set == t))
            .map(|r| r.value)
    }
}

/// Runs the configured protocol end to end and writes every artifact under `out`.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<RunSummary, ExperimentError> {
    let cfg = config.resolved();
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| ExperimentError::io(out, e))?;
    let corpora = synthesize(&cfg, out)?;
    let split = split_corpus(&corpora.source.manifest, &cfg.split_spec())?;
    let trained = train_source(&cfg, &split)?;
    trainer::save_checkpoint(
        &trained.model,
        cfg.seed,
        steps(&trained.history, cfg.train.batch_size),
        &out.join(artifacts::CHECKPOINT),
    )?;
    trained.history.write_csv(&out.join(artifacts::HISTORY))?;
    let mut evaluation = evaluate_model(&cfg, &corpora, &split, &trained.model, out)?;
    evaluation.counts.insert("train_candidates".into(), trained.candidate_count);
    evaluation.counts.insert("validation_triplets".into(), trained.validation_count);
    evaluation.best_epoch = trained.history.best_epoch;
    write_summary(&evaluation, out)?;
    Ok(evaluation)
}

/// Loads `out/checkpoint`, evaluates it under the configured protocol and
/// rewrites the evaluation artifacts.
pub fn evaluate_checkpoint(config: &ExperimentConfig, out: &Path) -> Result<RunSummary, ExperimentError> {
    let cfg = config.resolved();
    cfg.validate()?;
    let (model, meta) = trainer::load_checkpoint_expecting(&out.join(artifacts::CHECKPOINT), &cfg.embedder, &cfg.simnet)?;
    let corpora = synthesize(&cfg, out)?;
    let split = split_corpus(&corpora.source.manifest, &cfg.split_spec())?;
    let mut evaluation = evaluate_model(&cfg, &corpora, &split, &model, out)?;
    evaluation.counts.insert("checkpoint_steps".into(), meta.step as usize);
    write_summary(&evaluation, out)?;
    Ok(evaluation)
}

fn steps(history: &TrainHistory, batch: usize) -> u64 {
    history.records.iter().map(|r| r.triplet_count.div_ceil(batch) as u64).sum()
}

fn write_summary(summary: &RunSummary, out: &Path) -> Result<(), ExperimentError> {
    let path = out.join(artifacts::SUMMARY);
    let json = serde_json::to_string_pretty(summary).expect("summary serializes");
    std::fs::write(&path, json + "\n").map_err(|e| ExperimentError::io(&path, e))
}

/// Patch stores at evaluation stride for the source and target corpora.
struct EvalStores {
    source: PatchStore,
    target: Option<PatchStore>,
}

fn eval_stores(cfg: &ExperimentConfig, corpora: &Corpora) -> Result<EvalStores, ExperimentError> {
    let load = |m: &Manifest| PatchStore::from_manifest(m, cfg.patches.eval_stride, &cfg.patches.filter);
    Ok(EvalStores {
        source: load(&corpora.source.manifest)?,
        target: corpora.target.as_ref().map(|t| load(&t.manifest)).transpose()?,
    })
}

type SupportKey = (String, ResolutionGroup);

fn key(row: &ManifestRow) -> SupportKey {
    (row.template_id.clone(), row.resolution_group)
}

fn patches(store: &PatchStore, id: &str) -> Vec<Arc<Patch>> {
    store.patches_of(id).into_iter().cloned().collect()
}

/// Up to `k` genuine reference images per template and resolution group,
/// high-quality images first, in manifest order.
fn reference_sets(pool: &Manifest, store: &PatchStore, k: usize) -> Result<BTreeMap<SupportKey, SupportSet>, ExperimentError> {
    let mut chosen: BTreeMap<SupportKey, Vec<&ManifestRow>> = BTreeMap::new();
    let mut genuine: Vec<&ManifestRow> = pool.rows.iter().filter(|r| r.label == Label::Genuine).collect();
    genuine.sort_by_key(|r| r.resolution_group != ResolutionGroup::High && r.device_class != crate::corpus::DeviceClass::Scanner);
    for row in genuine {
        let slot = chosen.entry(key(row)).or_default();
        if slot.len() < k && !store.patches_of(&row.id).is_empty() {
            slot.push(row);
        }
    }
    let mut out = BTreeMap::new();
    for (key, rows) in chosen {
        if rows.is_empty() {
            continue;
        }
        let entries = rows.iter().map(|r| SupportEntry::reference_only(patches(store, &r.id))).collect();
        out.insert(key, SupportSet::new(entries)?);
    }
    Ok(out)
}

/// Scores of the images of `questioned` that have patches.
#[derive(Debug, Clone, Default)]
struct Scored {
    ids: Vec<String>,
    labels: Vec<Label>,
    scores: Vec<ImageScore>,
    skipped: Vec<String>,
}

impl Scored {
    fn by_label(&self, label: Label) -> Vec<f64> {
        self.labels
            .iter()
            .zip(&self.scores)
            .filter(|(l, _)| **l == label)
            .map(|(_, s)| s.score)
            .collect()
    }

    fn genuine(&self) -> Vec<f64> {
        self.by_label(Label::Genuine)
    }

    fn attack(&self) -> Vec<f64> {
        self.by_label(Label::Recaptured)
    }

    fn log(&self, run: &str, out: &mut String) {
        for ((id, label), s) in self.ids.iter().zip(&self.labels).zip(&self.scores) {
            out.push_str(&format!("{run},{id},{label},{}\n", s.score));
        }
    }
}

fn score_manifest(
    model: &ForensicModel,
    questioned: &[&ManifestRow],
    store: &PatchStore,
    supports: &BTreeMap<SupportKey, SupportSet>,
) -> Result<Scored, ExperimentError> {
    let mut out = Scored::default();
    let mut owned: Vec<(Vec<Arc<Patch>>, &SupportSet)> = Vec::new();
    for row in questioned {
        let q = patches(store, &row.id);
        if q.is_empty() {
            out.skipped.push(row.id.clone());
            continue;
        }
        let support = supports.get(&key(row)).ok_or_else(|| {
            ExperimentError::Data(format!(
                "no genuine reference for template {} / {:?} (questioned image {})",
                row.template_id, row.resolution_group, row.id
            ))
        })?;
        owned.push((q, support));
        out.ids.push(row.id.clone());
        out.labels.push(row.label);
    }
    let items: Vec<(&[Arc<Patch>], &SupportSet)> = owned.iter().map(|(q, s)| (q.as_slice(), *s)).collect();
    out.scores = if items.is_empty() { Vec::new() } else { score_images(model, &items)? };
    Ok(out)
}

fn fmt_rate(t: f64) -> String {
    format!("{t}")
}

/// Rows for AUC, EER and APCER at each BPCER target, plus the ROC points.
fn detection_rows(
    tag: &RowTag,
    genuine: &[f64],
    attack: &[f64],
    targets: &[f64],
) -> Result<(Vec<MetricRow>, Vec<RocPoint>), ExperimentError> {
    let s = metrics::samples(genuine, attack);
    let mut rows = vec![tag.row("auc", "all", metrics::auc(&s)?)];
    let (eer, eer_threshold) = metrics::eer(&s)?;
    rows.push(tag.row("eer", "eer", eer));
    rows.push(tag.row("threshold", "eer", eer_threshold));
    for &t in targets {
        let op = format!("bpcer_{}", fmt_rate(t));
        let (apcer, threshold) = metrics::apcer_at_bpcer(&s, t)?;
        rows.push(tag.row("apcer", &op, apcer));
        rows.push(tag.row("threshold", &op, threshold));
    }
    Ok((rows, metrics::roc_points(&s)?))
}

/// APCER and BPCER rows at a fixed threshold.
fn rate_rows(tag: &RowTag, op: &str, genuine: &[f64], attack: &[f64], threshold: f64) -> Result<Vec<MetricRow>, ExperimentError> {
    let (apcer, bpcer) = metrics::apcer_bpcer(&metrics::samples(genuine, attack), threshold)?;
    Ok(vec![
        tag.row("apcer", op, apcer),
        tag.row("bpcer", op, bpcer),
        tag.row("threshold", op, threshold),
    ])
}

struct RowTag {
    protocol: String,
    train_set: String,
    test_set: String,
}

impl RowTag {
    fn row(&self, metric: &str, op: &str, value: f64) -> MetricRow {
        MetricRow {
            protocol: self.protocol.clone(),
            train_set: self.train_set.clone(),
            test_set: self.test_set.clone(),
            metric: metric.into(),
            operating_point: op.into(),
            value,
        }
    }
}

/// `dataset:channel+channel` naming the recapture channels of `rows`.
fn set_name(dataset: &str, rows: &[&ManifestRow]) -> String {
    let mut channels: Vec<String> = rows
        .iter()
        .filter(|r| r.label == Label::Recaptured)
        .map(|r| r.channel.to_string())
        .collect();
    channels.sort();
    channels.dedup();
    format!("{dataset}:{}", channels.join("+"))
}

fn policy_name(p: ThresholdPolicy) -> String {
    match p {
        ThresholdPolicy::MaxAccuracy => "calibrated_max_accuracy".into(),
        ThresholdPolicy::BpcerTarget(t) => format!("calibrated_bpcer_{}", fmt_rate(t)),
    }
}

/// Seen-template threshold from source images outside the training split:
/// validation images, or test images when validation lacks a class.
fn seen_threshold(
    cfg: &ExperimentConfig,
    model: &ForensicModel,
    split: &Split,
    store: &PatchStore,
    refs: &BTreeMap<SupportKey, SupportSet>,
) -> Result<f64, ExperimentError> {
    let mut pool: Vec<&ManifestRow> = split.val.rows.iter().collect();
    let has = |p: &[&ManifestRow], l: Label| p.iter().any(|r| r.label == l);
    let needs_attack = cfg.verification.policy == ThresholdPolicy::MaxAccuracy;
    if !has(&pool, Label::Genuine) || (needs_attack && !has(&pool, Label::Recaptured)) {
        pool.extend(split.test.rows.iter());
    }
    let s = score_manifest(model, &pool, store, refs)?;
    Ok(calibrate_threshold(&s.genuine(), &s.attack(), cfg.verification.policy)?.threshold)
}

fn evaluate_model(
    cfg: &ExperimentConfig,
    corpora: &Corpora,
    split: &Split,
    model: &ForensicModel,
    out: &Path,
) -> Result<RunSummary, ExperimentError> {
    let stores = eval_stores(cfg, corpora)?;
    let refs = reference_sets(&split.train, &stores.source, cfg.verification.references)?;
    let protocol = cfg.protocol.to_string();
    let source_id = &corpora.source.spec.dataset_id;
    let train_rows: Vec<&ManifestRow> = split.train.rows.iter().collect();
    let train_set = set_name(source_id, &train_rows);
    let mut rows = Vec::new();
    let mut curves: Vec<(String, Vec<RocPoint>)> = Vec::new();
    let mut counts = BTreeMap::new();
    let mut skipped = Vec::new();
    let mut score_log = String::from("run,id,label,score\n");

    let export_manifest: Manifest;
    let export_store: &PatchStore;
    match cfg.protocol {
        Protocol::Intra | Protocol::Cross => {
            let (test_rows, test_store, test_set): (Vec<&ManifestRow>, &PatchStore, String) = match cfg.protocol {
                Protocol::Intra => {
                    let r: Vec<&ManifestRow> = split.test.rows.iter().collect();
                    let name = set_name(source_id, &r);
                    (r, &stores.source, name)
                }
                _ => {
                    let t = corpora.target.as_ref().expect("cross protocol has a target corpus");
                    let r: Vec<&ManifestRow> = t.manifest.rows.iter().collect();
                    let name = set_name(&t.spec.dataset_id, &r);
                    (r, stores.target.as_ref().expect("target store"), name)
                }
            };
            let tag = RowTag {
                protocol: protocol.clone(),
                train_set: train_set.clone(),
                test_set,
            };
            let scored = score_manifest(model, &test_rows, test_store, &refs)?;
            scored.log(&protocol, &mut score_log);
            skipped.extend(scored.skipped.iter().cloned());
            let (g, a) = (scored.genuine(), scored.attack());
            counts.insert("test_genuine".into(), g.len());
            counts.insert("test_attack".into(), a.len());
            let (r, roc) = detection_rows(&tag, &g, &a, &cfg.verification.bpcer_targets)?;
            rows.extend(r);
            curves.push((protocol.clone(), roc));
            let threshold = seen_threshold(cfg, model, split, &stores.source, &refs)?;
            rows.extend(rate_rows(&tag, &policy_name(cfg.verification.policy), &g, &a, threshold)?);
            if cfg.protocol == Protocol::Cross {
                let control = shuffled_auc(&g, &a, cfg.verification.control_permutations, cfg.seeds().control)?;
                rows.push(tag.row("auc_label_shuffled", "all", control));
            }
            export_manifest = match cfg.protocol {
                Protocol::Intra => split.test.clone(),
                _ => corpora.target.as_ref().unwrap().manifest.clone(),
            };
            export_store = test_store;
        }
        Protocol::FineTuneTransfer => {
            let target = corpora.target.as_ref().expect("transfer protocol has a target corpus");
            let target_store = stores.target.as_ref().expect("target store");
            let transfer = transfer(cfg, model, split, &stores.source, &refs, target, target_store, out)?;
            rows.extend(transfer.rows);
            score_log.push_str(&transfer.score_log);
            curves.extend(transfer.curves);
            counts.extend(transfer.counts);
            skipped.extend(transfer.skipped);
            export_manifest = transfer.test;
            export_store = target_store;
        }
    }

    metrics::write_metrics_csv(&rows, &out.join(artifacts::METRICS))?;
    metrics::write_roc_csv(&curves, &out.join(artifacts::ROC))?;
    let scores_path = out.join(artifacts::SCORES);
    std::fs::write(&scores_path, score_log).map_err(|e| ExperimentError::io(&scores_path, e))?;
    let report = export::export_from_store(model, &export_manifest, export_store, &out.join(artifacts::EMBEDDINGS))?;
    counts.insert("embedding_rows".into(), report.rows);
    skipped.sort();
    skipped.dedup();
    Ok(RunSummary {
        protocol: cfg.protocol,
        config: cfg.clone(),
        seeds: cfg.seeds(),
        best_epoch: 0,
        counts,
        skipped,
        metrics: rows,
    })
}

/// Mean AUC over `n` random relabelings that keep the class sizes.
pub fn shuffled_auc(genuine: &[f64], attack: &[f64], n: usize, seed: u64) -> Result<f64, ExperimentError> {
    let mut all: Vec<f64> = genuine.iter().chain(attack).copied().collect();
    let mut rng = seed::rng(seed);
    let mut total = 0.0;
    for _ in 0..n {
        all.shuffle(&mut rng);
        let (g, a) = all.split_at(genuine.len());
        total += metrics::auc(&metrics::samples(g, a))?;
    }
    Ok(total / n as f64)
}

struct Transfer {
    rows: Vec<MetricRow>,
    score_log: String,
    curves: Vec<(String, Vec<RocPoint>)>,
    counts: BTreeMap<String, usize>,
    skipped: Vec<String>,
    test: Manifest,
}

/// Support images per template and resolution group, drawn at random; the
/// rest of the target corpus is the test set.
pub fn split_support(target: &Manifest, ft: &FinetuneConfig, seed: u64) -> (Manifest, Manifest) {
    let mut groups: BTreeMap<(SupportKey, Label), Vec<&ManifestRow>> = BTreeMap::new();
    for row in &target.rows {
        groups.entry((key(row), row.label)).or_default().push(row);
    }
    let mut rng = seed::rng(seed);
    let mut support_ids = std::collections::HashSet::new();
    for ((_, label), mut rows) in groups {
        rows.shuffle(&mut rng);
        let n = match label {
            Label::Genuine => ft.support_genuine,
            Label::Recaptured => ft.support_recaptured,
        };
        support_ids.extend(rows.into_iter().take(n).map(|r| r.id.clone()));
    }
    (
        target.filter(|r| support_ids.contains(&r.id)),
        target.filter(|r| !support_ids.contains(&r.id)),
    )
}

/// Draws `support_high` triplets from the high resolution group and
/// `support_low` from the low group, alternating between templates.
pub fn select_support_triplets(candidates: &[Triplet], ft: &FinetuneConfig, seed: u64) -> Result<Vec<Triplet>, ExperimentError> {
    let mut rng = seed::rng(seed);
    let mut out = Vec::new();
    for (group, n) in [(ResolutionGroup::High, ft.support_high), (ResolutionGroup::Low, ft.support_low)] {
        if n == 0 {
            continue;
        }
        let mut by_template: BTreeMap<&str, Vec<&Triplet>> = BTreeMap::new();
        for t in candidates.iter().filter(|t| t.reference.provenance.resolution_group == group) {
            by_template.entry(t.reference.provenance.template_id.as_str()).or_default().push(t);
        }
        let mut lists: Vec<Vec<&Triplet>> = by_template.into_values().collect();
        for l in &mut lists {
            l.shuffle(&mut rng);
        }
        let available: usize = lists.iter().map(Vec::len).sum();
        if available < n {
            return Err(ExperimentError::Data(format!(
                "{n} support triplets requested from the {group:?} group, only {available} available"
            )));
        }
        let mut taken = 0;
        let mut round = 0;
        while taken < n {
            for l in &lists {
                if taken < n {
                    if let Some(t) = l.get(round) {
                        out.push((*t).clone());
                        taken += 1;
                    }
                }
            }
            round += 1;
        }
    }
    Ok(out)
}

/// Few-shot support sets per template and resolution group: each support
/// genuine image is a reference, paired with another support genuine image
/// as positive and a support recaptured image as negative.
fn few_shot_sets(
    support: &Manifest,
    store: &PatchStore,
    k: usize,
) -> Result<BTreeMap<SupportKey, SupportSet>, ExperimentError> {
    let mut groups: BTreeMap<SupportKey, (Vec<&ManifestRow>, Vec<&ManifestRow>)> = BTreeMap::new();
    for row in &support.rows {
        if store.patches_of(&row.id).is_empty() {
            continue;
        }
        let g = groups.entry(key(row)).or_default();
        match row.label {
            Label::Genuine => g.0.push(row),
            Label::Recaptured => g.1.push(row),
        }
    }
    let mut out = BTreeMap::new();
    for (key, (genuine, recaptured)) in groups {
        if genuine.is_empty() || recaptured.is_empty() {
            continue;
        }
        let entries = genuine
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, r)| SupportEntry {
                reference: patches(store, &r.id),
                positive: patches(store, &genuine[(i + 1) % genuine.len()].id),
                negative: patches(store, &recaptured[i % recaptured.len()].id),
            })
            .collect();
        out.insert(key, SupportSet::new(entries)?);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn transfer(
    cfg: &ExperimentConfig,
    base: &ForensicModel,
    split: &Split,
    source_store: &PatchStore,
    source_refs: &BTreeMap<SupportKey, SupportSet>,
    target: &Corpus,
    target_store: &PatchStore,
    out: &Path,
) -> Result<Transfer, ExperimentError> {
    let seeds = cfg.seeds();
    let ft = &cfg.finetune;
    let (support, test) = split_support(&target.manifest, ft, seed::mix(&[seeds.finetune, 1]));
    let mut train_store = PatchStore::new();
    for row in &support.rows {
        train_store.insert_image(&support.load_image(row)?, cfg.patches.train_stride, &cfg.patches.filter);
    }
    let candidates = build_candidate_triplets(&support, &train_store)?;
    let support_triplets = select_support_triplets(&candidates, ft, seed::mix(&[seeds.finetune, 2]))?;
    let ft_config = TrainConfig {
        epochs: ft.epochs,
        learning_rate: ft.learning_rate,
        seed: seeds.finetune,
        ..cfg.train.clone()
    };
    let (tuned, history) = trainer::finetune(base, &support_triplets, &ft_config)?;
    history.write_csv(&out.join(artifacts::FINETUNE_HISTORY))?;
    trainer::save_checkpoint(&tuned, cfg.seed, ft.epochs as u64, &out.join(artifacts::CHECKPOINT).join("finetuned"))?;

    let sets = few_shot_sets(&support, target_store, cfg.verification.references)?;
    let test_rows: Vec<&ManifestRow> = test.rows.iter().collect();
    let held_out: Vec<&ManifestRow> = split.val.rows.iter().chain(&split.test.rows).filter(|r| r.label == Label::Genuine).collect();
    let source_name = set_name(&split.train.rows[0].dataset_id, &split.train.rows.iter().collect::<Vec<_>>());
    let test_set = set_name(&target.spec.dataset_id, &test_rows);

    let mut rows = Vec::new();
    let mut curves = Vec::new();
    let mut skipped = Vec::new();
    let mut score_log = String::new();
    let mut counts = BTreeMap::new();
    counts.insert("support_triplets".into(), support_triplets.len());
    counts.insert("support_images".into(), support.len());
    let k = support_triplets.len();
    for (name, model) in [("base", base), ("finetuned", &tuned)] {
        let tag = RowTag {
            protocol: cfg.protocol.to_string(),
            train_set: if name == "base" { source_name.clone() } else { format!("{source_name}+support{k}") },
            test_set: test_set.clone(),
        };
        let run = format!("{}_{name}", cfg.protocol);
        let scored = score_manifest(model, &test_rows, target_store, &sets)?;
        scored.log(&run, &mut score_log);
        skipped.extend(scored.skipped.iter().cloned());
        let (g, a) = (scored.genuine(), scored.attack());
        counts.insert("test_genuine".into(), g.len());
        counts.insert("test_attack".into(), a.len());
        let (r, roc) = detection_rows(&tag, &g, &a, &cfg.verification.bpcer_targets)?;
        rows.extend(r);
        curves.push((run.clone(), roc));

        let calib = score_manifest(model, &held_out, source_store, source_refs)?;
        calib.log(&format!("{run}_calibration"), &mut score_log);
        let threshold = calibrate_threshold(&calib.genuine(), &[], ThresholdPolicy::BpcerTarget(ft.bpcer_target))?.threshold;
        rows.extend(rate_rows(&tag, &format!("bpcer_target_{}", fmt_rate(ft.bpcer_target)), &g, &a, threshold)?);

        let (mut fg, mut fa) = (Vec::new(), Vec::new());
        let mut mids: BTreeMap<&SupportKey, f64> = BTreeMap::new();
        for (key, set) in &sets {
            let (s_p, s_n) = support_scores(model, set)?;
            mids.insert(key, (s_p + s_n) / 2.0);
        }
        for (row, s) in scored.ids.iter().zip(&scored.scores) {
            let row = test.find(row).expect("scored ids come from the test manifest");
            let mid = mids[&key(row)];
            // Scores are shifted by their group's midpoint; threshold 0 is the few-shot rule.
            match row.label {
                Label::Genuine => fg.push(s.score - mid),
                Label::Recaptured => fa.push(s.score - mid),
            }
        }
        rows.extend(rate_rows(&tag, "few_shot_midpoint", &fg, &fa, 0.0)?);
    }
    Ok(Transfer {
        rows,
        score_log,
        curves,
        counts,
        skipped,
        test,
    })
}

/// Decisions for every scorable image of the evaluation set, written to
/// `out/verification.json`. Intra and cross runs use the calibrated
/// seen-template threshold; transfer runs use the few-shot rule.
pub fn verify_checkpoint(config: &ExperimentConfig, out: &Path) -> Result<Vec<VerificationRecord>, ExperimentError> {
    let cfg = config.resolved();
    cfg.validate()?;
    let (model, _) = trainer::load_checkpoint_expecting(&out.join(artifacts::CHECKPOINT), &cfg.embedder, &cfg.simnet)?;
    let corpora = synthesize(&cfg, out)?;
    let split = split_corpus(&corpora.source.manifest, &cfg.split_spec())?;
    let stores = eval_stores(&cfg, &corpora)?;
    let refs = reference_sets(&split.train, &stores.source, cfg.verification.references)?;
    let mut records = Vec::new();
    let mut decide_all = |rows: &Manifest,
                          store: &PatchStore,
                          sets: &BTreeMap<SupportKey, SupportSet>,
                          threshold: Option<f64>,
                          mode: VerifyMode|
     -> Result<(), ExperimentError> {
        for row in &rows.rows {
            let q = patches(store, &row.id);
            let Some(set) = sets.get(&key(row)) else { continue };
            if q.is_empty() {
                continue;
            }
            let d = verifier::verify(&model, &q, set, threshold, mode)?;
            records.push(VerificationRecord::new(row.id.clone(), &d));
        }
        Ok(())
    };
    match cfg.protocol {
        Protocol::Intra | Protocol::Cross => {
            let threshold = seen_threshold(&cfg, &model, &split, &stores.source, &refs)?;
            let (m, store) = match (&corpora.target, &stores.target) {
                (Some(t), Some(s)) => (&t.manifest, s),
                _ => (&split.test, &stores.source),
            };
            decide_all(m, store, &refs, Some(threshold), VerifyMode::SeenTemplate)?;
        }
        Protocol::FineTuneTransfer => {
            let target = corpora.target.as_ref().expect("transfer protocol has a target corpus");
            let store = stores.target.as_ref().expect("target store");
            let (support, test) = split_support(&target.manifest, &cfg.finetune, seed::mix(&[cfg.seeds().finetune, 1]));
            let sets = few_shot_sets(&support, store, cfg.verification.references)?;
            decide_all(&test, store, &sets, None, VerifyMode::FewShot)?;
        }
    }
    verifier::write_report(&records, &out.join(artifacts::VERIFICATION))?;
    Ok(records)
}

/// Output directory: the explicit override, else the config's `out_dir`, else `runs/<protocol>`.
pub fn output_dir(config: &ExperimentConfig, override_dir: Option<&Path>) -> PathBuf {
    override_dir
        .map(Path::to_path_buf)
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(config.protocol.to_string()))
}
