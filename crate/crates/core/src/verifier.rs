//! Image-level verification against genuine references.
//!
//! A questioned image's score is the mean similarity between each of its
//! patches and the matching patch of every support reference, always scored
//! as `S(reference, questioned)`. Scores are then either compared with a
//! calibrated threshold (seen template) or with the midpoint of the support
//! positive and negative scores (few shot).

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Label, Patch, PatchKey};
use crate::model::ForensicModel;
use crate::triplets::Triplet;

#[derive(Debug, Error, PartialEq)]
pub enum VerifyError {
    #[error("questioned image has no patches")]
    EmptyQuestioned,
    #[error("support set is empty")]
    EmptySupport,
    #[error("support mismatch: {0}")]
    SupportMismatch(String),
    #[error("few-shot verification needs positive and negative support samples")]
    MissingFewShotSamples,
    #[error("seen-template verification needs a threshold")]
    MissingThreshold,
    #[error("calibration needs {0} scores")]
    EmptyScores(&'static str),
    #[error("target rate {0} is outside [0, 1]")]
    InvalidTarget(f64),
    #[error("report {path}: {message}")]
    Io { path: String, message: String },
}

/// Patches of one support image.
pub type SupportSample = Vec<Arc<Patch>>;

/// One reference image with optional positive and negative companions.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportEntry {
    pub reference: SupportSample,
    pub positive: SupportSample,
    pub negative: SupportSample,
}

impl SupportEntry {
    pub fn from_triplet(t: &Triplet) -> Self {
        Self {
            reference: vec![Arc::clone(&t.reference)],
            positive: vec![Arc::clone(&t.positive)],
            negative: vec![Arc::clone(&t.negative)],
        }
    }

    pub fn reference_only(reference: SupportSample) -> Self {
        Self {
            reference,
            positive: Vec::new(),
            negative: Vec::new(),
        }
    }
}

/// `K` support entries from one template and resolution group.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSet {
    entries: Vec<SupportEntry>,
}

impl SupportSet {
    pub fn new(entries: Vec<SupportEntry>) -> Result<Self, VerifyError> {
        let first = entries
            .iter()
            .flat_map(|e| e.reference.first())
            .next()
            .ok_or(VerifyError::EmptySupport)?
            .provenance
            .clone();
        for e in &entries {
            if e.reference.is_empty() {
                return Err(VerifyError::EmptySupport);
            }
            for (p, want) in e
                .reference
                .iter()
                .map(|p| (p, Label::Genuine))
                .chain(e.positive.iter().map(|p| (p, Label::Genuine)))
                .chain(e.negative.iter().map(|p| (p, Label::Recaptured)))
            {
                let pv = &p.provenance;
                if pv.template_id != first.template_id || pv.resolution_group != first.resolution_group {
                    return Err(VerifyError::SupportMismatch(format!(
                        "{} is not from template {} / {:?}",
                        p.key(),
                        first.template_id,
                        first.resolution_group
                    )));
                }
                if pv.label != want {
                    return Err(VerifyError::SupportMismatch(format!("{} has the wrong label", p.key())));
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn k(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[SupportEntry] {
        &self.entries
    }

    pub fn template_id(&self) -> &str {
        &self.entries[0].reference[0].provenance.template_id
    }

    fn has_few_shot_samples(&self) -> bool {
        self.entries.iter().all(|e| !e.positive.is_empty() && !e.negative.is_empty())
    }
}

/// The patch of `sample` whose origin is closest to `origin` (exact match
/// first, then L1 distance, then sample order).
fn matching<'a>(sample: &'a [Arc<Patch>], origin: (usize, usize)) -> &'a Arc<Patch> {
    let dist = |p: &Arc<Patch>| p.origin.0.abs_diff(origin.0) + p.origin.1.abs_diff(origin.1);
    sample
        .iter()
        .min_by_key(|p| dist(p))
        .expect("support samples are non-empty")
}

/// Scoring outcome for one questioned image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub score: f64,
    /// Mean over questioned patches, one value per support reference.
    pub per_reference: Vec<f64>,
}

/// Scores many questioned images at once, embedding every distinct patch
/// only once.
pub fn score_images(model: &ForensicModel, items: &[(&[Arc<Patch>], &SupportSet)]) -> Result<Vec<ImageScore>, VerifyError> {
    let mut pairs: Vec<(PatchKey, PatchKey)> = Vec::new();
    let mut patches: Vec<&Patch> = Vec::new();
    for (questioned, support) in items {
        if questioned.is_empty() {
            return Err(VerifyError::EmptyQuestioned);
        }
        for q in questioned.iter() {
            if q.provenance.template_id != support.template_id() {
                return Err(VerifyError::SupportMismatch(format!(
                    "questioned patch {} belongs to template {}, support to {}",
                    q.key(),
                    q.provenance.template_id,
                    support.template_id()
                )));
            }
            patches.push(q);
            for e in support.entries() {
                let r = matching(&e.reference, q.origin);
                patches.push(r);
                pairs.push((r.key(), q.key()));
            }
        }
    }
    let embeddings = model.embed_unique(patches);
    let scores = model.score_pairs(&embeddings, &pairs);

    let mut out = Vec::with_capacity(items.len());
    let mut at = 0;
    for (questioned, support) in items {
        let k = support.k();
        let mut per_reference = vec![0.0; k];
        for _ in questioned.iter() {
            for (j, slot) in per_reference.iter_mut().enumerate() {
                *slot += scores[at + j];
            }
            at += k;
        }
        per_reference.iter_mut().for_each(|v| *v /= questioned.len() as f64);
        let score = per_reference.iter().sum::<f64>() / k as f64;
        out.push(ImageScore { score, per_reference });
    }
    Ok(out)
}

pub fn score_questioned(model: &ForensicModel, questioned: &[Arc<Patch>], support: &SupportSet) -> Result<ImageScore, VerifyError> {
    Ok(score_images(model, &[(questioned, support)])?.remove(0))
}

/// Mean `S(r_k, p_k)` and `S(r_k, n_k)` over the support entries; each entry
/// averages over its positive (negative) patches matched to reference origins.
pub fn support_scores(model: &ForensicModel, support: &SupportSet) -> Result<(f64, f64), VerifyError> {
    if !support.has_few_shot_samples() {
        return Err(VerifyError::MissingFewShotSamples);
    }
    let mut patches: Vec<&Patch> = Vec::new();
    let mut pairs = Vec::new();
    let mut spans = Vec::new();
    for e in support.entries() {
        for side in [&e.positive, &e.negative] {
            let start = pairs.len();
            for x in side.iter() {
                let r = matching(&e.reference, x.origin);
                patches.extend([&**r, &**x]);
                pairs.push((r.key(), x.key()));
            }
            spans.push(start..pairs.len());
        }
    }
    let embeddings = model.embed_unique(patches);
    let scores = model.score_pairs(&embeddings, &pairs);
    let mean = |r: &std::ops::Range<usize>| scores[r.clone()].iter().sum::<f64>() / r.len() as f64;
    let k = support.k() as f64;
    let s_p = spans.iter().step_by(2).map(mean).sum::<f64>() / k;
    let s_n = spans.iter().skip(1).step_by(2).map(mean).sum::<f64>() / k;
    Ok((s_p, s_n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Genuine,
    Recaptured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyMode {
    SeenTemplate,
    FewShot,
}

/// Seen-template rule; the boundary counts as genuine.
pub fn decide(score: f64, threshold: f64) -> Verdict {
    if score >= threshold {
        Verdict::Genuine
    } else {
        Verdict::Recaptured
    }
}

/// Few-shot rule: genuine iff `s_q >= (s_p + s_n) / 2`.
pub fn few_shot_rule(s_q: f64, s_p: f64, s_n: f64) -> (Verdict, f64) {
    let mid = (s_p + s_n) / 2.0;
    (decide(s_q, mid), mid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub score: f64,
    /// The calibrated threshold, or the few-shot midpoint.
    pub threshold: f64,
    pub verdict: Verdict,
    pub mode: VerifyMode,
    pub per_reference: Vec<f64>,
}

pub fn verify(
    model: &ForensicModel,
    questioned: &[Arc<Patch>],
    support: &SupportSet,
    threshold: Option<f64>,
    mode: VerifyMode,
) -> Result<Decision, VerifyError> {
    let threshold = match mode {
        VerifyMode::SeenTemplate => Some(threshold.ok_or(VerifyError::MissingThreshold)?),
        VerifyMode::FewShot if !support.has_few_shot_samples() => return Err(VerifyError::MissingFewShotSamples),
        VerifyMode::FewShot => None,
    };
    let ImageScore { score, per_reference } = score_questioned(model, questioned, support)?;
    let (verdict, threshold) = match threshold {
        Some(t) => (decide(score, t), t),
        None => {
            let (s_p, s_n) = support_scores(model, support)?;
            few_shot_rule(score, s_p, s_n)
        }
    };
    Ok(Decision {
        score,
        threshold,
        verdict,
        mode,
        per_reference,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy", content = "target")]
pub enum ThresholdPolicy {
    MaxAccuracy,
    BpcerTarget(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    /// Set when every calibration score is identical.
    pub degenerate: bool,
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Threshold at the `(k+1)`-th smallest genuine score with `k = floor(t n)`,
/// or `+inf` when `k = n`. At most a fraction `t` of genuine scores fall below it.
pub fn bpcer_threshold(genuine: &[f64], target: f64) -> Result<f64, VerifyError> {
    if genuine.is_empty() {
        return Err(VerifyError::EmptyScores("genuine"));
    }
    if !(0.0..=1.0).contains(&target) {
        return Err(VerifyError::InvalidTarget(target));
    }
    let g = sorted(genuine);
    let k = ((target * g.len() as f64) + 1e-9).floor() as usize;
    Ok(g.get(k).copied().unwrap_or(f64::INFINITY))
}

/// Candidate thresholds for a max-accuracy sweep: midpoints of adjacent
/// distinct scores with the gap they split, then `-inf` and `+inf`.
fn midpoint_candidates(all: &[f64]) -> Vec<(f64, f64)> {
    let mut s = sorted(all);
    s.dedup();
    let mut out: Vec<(f64, f64)> = s.windows(2).map(|w| ((w[0] + w[1]) / 2.0, w[1] - w[0])).collect();
    out.push((f64::NEG_INFINITY, -1.0));
    out.push((f64::INFINITY, -1.0));
    out
}

pub fn calibrate_threshold(genuine: &[f64], attack: &[f64], policy: ThresholdPolicy) -> Result<Calibration, VerifyError> {
    match policy {
        ThresholdPolicy::BpcerTarget(t) => {
            let threshold = bpcer_threshold(genuine, t)?;
            let degenerate = genuine.iter().chain(attack).all(|&v| v == genuine[0]);
            Ok(Calibration { threshold, degenerate })
        }
        ThresholdPolicy::MaxAccuracy => {
            if genuine.is_empty() {
                return Err(VerifyError::EmptyScores("genuine"));
            }
            if attack.is_empty() {
                return Err(VerifyError::EmptyScores("attack"));
            }
            let first = genuine[0];
            if genuine.iter().chain(attack).all(|&v| v == first) {
                return Ok(Calibration {
                    threshold: first,
                    degenerate: true,
                });
            }
            let all: Vec<f64> = genuine.iter().chain(attack).copied().collect();
            let correct = |t: f64| {
                genuine.iter().filter(|&&g| g >= t).count() + attack.iter().filter(|&&a| a < t).count()
            };
            let best = midpoint_candidates(&all)
                .into_iter()
                .map(|(t, width)| (correct(t), width, t))
                .max_by(|a, b| {
                    a.0.cmp(&b.0)
                        .then(a.1.total_cmp(&b.1))
                        .then(b.2.total_cmp(&a.2))
                })
                .expect("at least the infinite candidates");
            Ok(Calibration {
                threshold: best.2,
                degenerate: false,
            })
        }
    }
}

/// One verification outcome, as written to the JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationRecord {
    pub questioned_id: String,
    pub mode: VerifyMode,
    pub score: f64,
    pub threshold: f64,
    pub verdict: Verdict,
    pub per_reference_scores: Vec<f64>,
}

impl VerificationRecord {
    pub fn new(questioned_id: impl Into<String>, d: &Decision) -> Self {
        Self {
            questioned_id: questioned_id.into(),
            mode: d.mode,
            score: d.score,
            threshold: d.threshold,
            verdict: d.verdict,
            per_reference_scores: d.per_reference.clone(),
        }
    }
}

pub fn write_report(records: &[VerificationRecord], path: &Path) -> Result<(), VerifyError> {
    let json = serde_json::to_string_pretty(records).expect("report serializes");
    std::fs::write(path, json + "\n").map_err(|e| VerifyError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Groups patches by source image id.
pub fn group_by_source(patches: &[Arc<Patch>]) -> BTreeMap<String, Vec<Arc<Patch>>> {
    let mut out: BTreeMap<String, Vec<Arc<Patch>>> = BTreeMap::new();
    for p in patches {
        out.entry(p.source_id.clone()).or_default().push(Arc::clone(p));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn max_accuracy_worked_example() {
        let c = calibrate_threshold(&[0.9, 0.8], &[0.1, 0.2], ThresholdPolicy::MaxAccuracy).unwrap();
        assert!((c.threshold - 0.5).abs() < 1e-12);
        assert!(!c.degenerate);
    }

    #[test]
    fn bpcer_zero_worked_example() {
        let c = calibrate_threshold(&[0.6, 0.7, 0.8, 0.9], &[], ThresholdPolicy::BpcerTarget(0.0)).unwrap();
        assert_eq!(c.threshold, 0.6);
        assert_eq!(bpcer_threshold(&[0.6, 0.7], 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn degenerate_calibration() {
        let c = calibrate_threshold(&[0.5], &[0.5], ThresholdPolicy::MaxAccuracy).unwrap();
        assert_eq!(c, Calibration { threshold: 0.5, degenerate: true });
    }

    #[test]
    fn calibration_errors() {
        assert_eq!(
            calibrate_threshold(&[], &[0.1], ThresholdPolicy::MaxAccuracy),
            Err(VerifyError::EmptyScores("genuine"))
        );
        assert_eq!(
            calibrate_threshold(&[0.1], &[], ThresholdPolicy::MaxAccuracy),
            Err(VerifyError::EmptyScores("attack"))
        );
        assert_eq!(bpcer_threshold(&[0.1], 1.5), Err(VerifyError::InvalidTarget(1.5)));
    }

    #[test]
    fn few_shot_rule_examples() {
        assert_eq!(few_shot_rule(0.8, 0.85, 0.2).0, Verdict::Genuine);
        assert_eq!(few_shot_rule(0.3, 0.85, 0.2).0, Verdict::Recaptured);
        assert_eq!(few_shot_rule(0.5, 0.75, 0.25).0, Verdict::Genuine);
    }

    fn accuracy(g: &[f64], a: &[f64], t: f64) -> usize {
        g.iter().filter(|&&x| x >= t).count() + a.iter().filter(|&&x| x < t).count()
    }

    proptest! {
        #[test]
        fn max_accuracy_matches_exhaustive_scan(
            g in prop::collection::vec(0u8..20, 1..50),
            a in prop::collection::vec(0u8..20, 1..50),
        ) {
            let g: Vec<f64> = g.into_iter().map(|v| v as f64 / 20.0).collect();
            let a: Vec<f64> = a.into_iter().map(|v| v as f64 / 20.0).collect();
            let c = calibrate_threshold(&g, &a, ThresholdPolicy::MaxAccuracy).unwrap();
            let mut all: Vec<f64> = g.iter().chain(&a).copied().collect();
            all.sort_by(f64::total_cmp);
            let mut best = accuracy(&g, &a, f64::INFINITY).max(accuracy(&g, &a, f64::NEG_INFINITY));
            for w in all.windows(2) {
                best = best.max(accuracy(&g, &a, (w[0] + w[1]) / 2.0));
            }
            if !c.degenerate {
                prop_assert_eq!(accuracy(&g, &a, c.threshold), best);
            }
        }

        #[test]
        fn bpcer_target_is_tight(g in prop::collection::vec(0.0f64..1.0, 1..100), t in 0.0f64..=1.0) {
            let theta = bpcer_threshold(&g, t).unwrap();
            let n = g.len() as f64;
            let below = |th: f64| g.iter().filter(|&&x| x < th).count() as f64 / n;
            prop_assert!(below(theta) <= t + 1e-9);
            let mut s = g.clone();
            s.sort_by(f64::total_cmp);
            if let Some(&next) = s.iter().find(|&&x| x > theta) {
                prop_assert!(below(next) > t);
            }
        }

        #[test]
        fn raising_threshold_never_accepts_more(s in 0.0f64..1.0, t1 in 0.0f64..1.0, dt in 0.0f64..1.0) {
            if decide(s, t1) == Verdict::Recaptured {
                prop_assert_eq!(decide(s, t1 + dt), Verdict::Recaptured);
            }
        }
    }
}
