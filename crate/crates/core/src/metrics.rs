//! Presentation-attack detection metrics.
//!
//! Scores are oriented so that higher means more genuine. A sample is
//! accepted as bona fide when `score >= threshold`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::verifier::bpcer_threshold;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no {0} samples")]
    ClassAbsent(&'static str),
    #[error("non-finite score {0}")]
    NonFinite(f64),
    #[error("target rate {0} is outside [0, 1]")]
    InvalidTarget(f64),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleLabel {
    BonaFide,
    Attack,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub score: f64,
    pub label: SampleLabel,
}

impl ScoredSample {
    pub fn bona_fide(score: f64) -> Self {
        Self {
            score,
            label: SampleLabel::BonaFide,
        }
    }

    pub fn attack(score: f64) -> Self {
        Self {
            score,
            label: SampleLabel::Attack,
        }
    }
}

/// Builds samples from two score lists.
pub fn samples(bona_fide: &[f64], attack: &[f64]) -> Vec<ScoredSample> {
    bona_fide
        .iter()
        .map(|&s| ScoredSample::bona_fide(s))
        .chain(attack.iter().map(|&s| ScoredSample::attack(s)))
        .collect()
}

fn split(samples: &[ScoredSample]) -> Result<(Vec<f64>, Vec<f64>), MetricsError> {
    let mut bona = Vec::new();
    let mut attack = Vec::new();
    for s in samples {
        if !s.score.is_finite() {
            return Err(MetricsError::NonFinite(s.score));
        }
        match s.label {
            SampleLabel::BonaFide => bona.push(s.score),
            SampleLabel::Attack => attack.push(s.score),
        }
    }
    if bona.is_empty() {
        return Err(MetricsError::ClassAbsent("bona fide"));
    }
    if attack.is_empty() {
        return Err(MetricsError::ClassAbsent("attack"));
    }
    Ok((bona, attack))
}

fn rates(bona: &[f64], attack: &[f64], threshold: f64) -> (f64, f64) {
    let apcer = attack.iter().filter(|&&s| s >= threshold).count() as f64 / attack.len() as f64;
    let bpcer = bona.iter().filter(|&&s| s < threshold).count() as f64 / bona.len() as f64;
    (apcer, bpcer)
}

/// `(APCER, BPCER)` at `threshold`.
pub fn apcer_bpcer(samples: &[ScoredSample], threshold: f64) -> Result<(f64, f64), MetricsError> {
    let (bona, attack) = split(samples)?;
    Ok(rates(&bona, &attack, threshold))
}

/// Midpoints of adjacent distinct scores, bracketed by `-inf` and `+inf`,
/// in ascending order.
pub fn candidate_thresholds(scores: &[f64]) -> Vec<f64> {
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    s.dedup();
    let mut out = Vec::with_capacity(s.len() + 1);
    out.push(f64::NEG_INFINITY);
    out.extend(s.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    out.push(f64::INFINITY);
    out
}

/// Equal error rate and the threshold where it is attained.
///
/// The sweep picks the candidate minimising `|APCER - BPCER|` (lowest
/// threshold on ties) and reports the mean of the two rates there.
pub fn eer(samples: &[ScoredSample]) -> Result<(f64, f64), MetricsError> {
    let (bona, attack) = split(samples)?;
    let all: Vec<f64> = bona.iter().chain(&attack).copied().collect();
    let mut best: Option<(f64, f64, f64)> = None;
    for t in candidate_thresholds(&all) {
        let (a, b) = rates(&bona, &attack, t);
        let gap = (a - b).abs();
        if best.is_none_or(|(g, _, _)| gap < g) {
            best = Some((gap, (a + b) / 2.0, t));
        }
    }
    let (_, value, threshold) = best.expect("at least two candidates");
    Ok((value, threshold))
}

/// Area under the ROC curve by pair counting: the fraction of
/// (bona fide, attack) pairs ranked correctly, ties counting one half.
pub fn auc(samples: &[ScoredSample]) -> Result<f64, MetricsError> {
    let (mut bona, attack) = split(samples)?;
    bona.sort_by(f64::total_cmp);
    let mut total = 0.0;
    for &a in &attack {
        let below = bona.partition_point(|&b| b <= a);
        let strictly_below = bona.partition_point(|&b| b < a);
        let ties = below - strictly_below;
        total += (bona.len() - below) as f64 + 0.5 * ties as f64;
    }
    Ok(total / (bona.len() * attack.len()) as f64)
}

/// APCER at the threshold that keeps BPCER at or below `target_bpcer`.
pub fn apcer_at_bpcer(samples: &[ScoredSample], target_bpcer: f64) -> Result<(f64, f64), MetricsError> {
    if !(0.0..=1.0).contains(&target_bpcer) {
        return Err(MetricsError::InvalidTarget(target_bpcer));
    }
    let (bona, attack) = split(samples)?;
    let threshold = bpcer_threshold(&bona, target_bpcer).expect("bona fide scores present and target checked");
    Ok((rates(&bona, &attack, threshold).0, threshold))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub apcer: f64,
    pub bpcer: f64,
}

impl RocPoint {
    /// True acceptance rate of bona fide samples.
    pub fn tpr(&self) -> f64 {
        1.0 - self.bpcer
    }
}

/// ROC points at `+inf` and at every distinct score, descending, so the
/// curve runs from (0, 0) to (1, 1) in (APCER, 1 - BPCER) space.
pub fn roc_points(samples: &[ScoredSample]) -> Result<Vec<RocPoint>, MetricsError> {
    let (bona, attack) = split(samples)?;
    let mut thresholds: Vec<f64> = bona.iter().chain(&attack).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    thresholds.insert(0, f64::INFINITY);
    Ok(thresholds
        .into_iter()
        .map(|t| {
            let (apcer, bpcer) = rates(&bona, &attack, t);
            RocPoint {
                threshold: t,
                apcer,
                bpcer,
            }
        })
        .collect())
}

/// Trapezoidal area under [`roc_points`].
pub fn auc_trapezoid(samples: &[ScoredSample]) -> Result<f64, MetricsError> {
    let pts = roc_points(samples)?;
    Ok(pts
        .windows(2)
        .map(|w| (w[1].apcer - w[0].apcer) * (w[1].tpr() + w[0].tpr()) / 2.0)
        .sum())
}

/// One row of the metrics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub protocol: String,
    pub train_set: String,
    pub test_set: String,
    pub metric: String,
    pub operating_point: String,
    pub value: f64,
}

fn io_err(path: &Path, e: std::io::Error) -> MetricsError {
    MetricsError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn write_metrics_csv(rows: &[MetricRow], path: &Path) -> Result<(), MetricsError> {
    let mut s = String::from("protocol,train_set,test_set,metric,operating_point,value\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.protocol, r.train_set, r.test_set, r.metric, r.operating_point, r.value
        ));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(s.as_bytes()))
        .map_err(|e| io_err(path, e))
}

/// Writes ROC points tagged with the run they belong to.
pub fn write_roc_csv(curves: &[(String, Vec<RocPoint>)], path: &Path) -> Result<(), MetricsError> {
    let mut s = String::from("run,threshold,apcer,bpcer,tpr\n");
    for (run, pts) in curves {
        for p in pts {
            s.push_str(&format!("{run},{},{},{},{}\n", p.threshold, p.apcer, p.bpcer, p.tpr()));
        }
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(s.as_bytes()))
        .map_err(|e| io_err(path, e))
}
