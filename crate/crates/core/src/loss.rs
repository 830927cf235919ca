//! Forensic loss over similarity scores.
//!
//! For each triplet `i` with positive score `s_p = S(r, p)` and negative
//! score `s_n = S(r, n)`:
//!
//! * triplet similarity term `ts_i = max(0, e^{-s_p} - e^{-s_n} + γ/e)`
//! * normalized softmax term `ns_i = log(1 + e^{s_n - s_p})`
//!
//! and the combined loss is `L_fl = L_ts + α·L_ns`, where each `L` reduces
//! its per-triplet terms by sum (default) or mean.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("score lists differ in length: {positive} positive vs {negative} negative")]
    LengthMismatch { positive: usize, negative: usize },
    #[error("empty batch")]
    Empty,
    #[error("score {value} at index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("invalid loss config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Margin γ; the hinge uses γ/e.
    pub gamma: f64,
    /// Weight α of the normalized softmax term.
    pub alpha: f64,
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gamma: 0.2,
            alpha: 0.3,
            reduction: Reduction::Sum,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(LossError::InvalidConfig(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(LossError::InvalidConfig(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        Ok(())
    }

    /// The simplified margin γ' = γ/e.
    pub fn scaled_margin(&self) -> f64 {
        self.gamma / std::f64::consts::E
    }

    fn reduce(&self, terms: &[f64]) -> f64 {
        let sum: f64 = terms.iter().sum();
        match self.reduction {
            Reduction::Sum => sum,
            Reduction::Mean => sum / terms.len() as f64,
        }
    }

    fn reduce_scale(&self, n: usize) -> f64 {
        match self.reduction {
            Reduction::Sum => 1.0,
            Reduction::Mean => 1.0 / n as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_ts: f64,
    pub l_ns: f64,
    pub l_fl: f64,
    /// `(ts_i, ns_i)` per triplet.
    pub per_triplet: Vec<(f64, f64)>,
}

/// Gradients of `l_fl` w.r.t. each positive and negative score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGradients {
    pub d_positive: Vec<f64>,
    pub d_negative: Vec<f64>,
}

fn check(s_p: &[f64], s_n: &[f64]) -> Result<(), LossError> {
    if s_p.len() != s_n.len() {
        return Err(LossError::LengthMismatch {
            positive: s_p.len(),
            negative: s_n.len(),
        });
    }
    if s_p.is_empty() {
        return Err(LossError::Empty);
    }
    for (index, &value) in s_p.iter().chain(s_n).enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(LossError::OutOfRange {
                index: index % s_p.len(),
                value,
            });
        }
    }
    Ok(())
}

/// Hinge argument `e^{-s_p} - e^{-s_n} + γ/e`; the triplet term is its positive part.
#[inline]
pub fn hinge_argument(s_p: f64, s_n: f64, gamma: f64) -> f64 {
    (-s_p).exp() - (-s_n).exp() + gamma / std::f64::consts::E
}

#[inline]
fn softmax_term(s_p: f64, s_n: f64) -> f64 {
    (s_n - s_p).exp().ln_1p()
}

pub fn triplet_similarity_loss(s_p: &[f64], s_n: &[f64], config: &LossConfig) -> Result<(f64, Vec<f64>), LossError> {
    config.validate()?;
    check(s_p, s_n)?;
    let terms: Vec<f64> = s_p
        .iter()
        .zip(s_n)
        .map(|(&p, &n)| hinge_argument(p, n, config.gamma).max(0.0))
        .collect();
    Ok((config.reduce(&terms), terms))
}

pub fn normalized_softmax_loss(s_p: &[f64], s_n: &[f64], reduction: Reduction) -> Result<(f64, Vec<f64>), LossError> {
    check(s_p, s_n)?;
    let config = LossConfig {
        reduction,
        ..LossConfig::default()
    };
    let terms: Vec<f64> = s_p.iter().zip(s_n).map(|(&p, &n)| softmax_term(p, n)).collect();
    Ok((config.reduce(&terms), terms))
}

pub fn forensic_loss(s_p: &[f64], s_n: &[f64], config: &LossConfig) -> Result<LossBreakdown, LossError> {
    let (l_ts, ts) = triplet_similarity_loss(s_p, s_n, config)?;
    let (l_ns, ns) = normalized_softmax_loss(s_p, s_n, config.reduction)?;
    Ok(LossBreakdown {
        l_ts,
        l_ns,
        l_fl: l_ts + config.alpha * l_ns,
        per_triplet: ts.into_iter().zip(ns).collect(),
    })
}

/// Analytic gradient of `l_fl`. At the hinge kink (argument exactly 0) the
/// triplet term contributes nothing.
pub fn forensic_loss_gradients(s_p: &[f64], s_n: &[f64], config: &LossConfig) -> Result<ScoreGradients, LossError> {
    config.validate()?;
    check(s_p, s_n)?;
    let scale = config.reduce_scale(s_p.len());
    let mut d_positive = Vec::with_capacity(s_p.len());
    let mut d_negative = Vec::with_capacity(s_p.len());
    for (&p, &n) in s_p.iter().zip(s_n) {
        let active = hinge_argument(p, n, config.gamma) > 0.0;
        let (mut dp, mut dn) = if active { (-(-p).exp(), (-n).exp()) } else { (0.0, 0.0) };
        // d/ds_n log(1 + e^{s_n - s_p}) = sigmoid(s_n - s_p)
        let sig = crate::nn::sigmoid(n - p);
        dp -= config.alpha * sig;
        dn += config.alpha * sig;
        d_positive.push(scale * dp);
        d_negative.push(scale * dn);
    }
    Ok(ScoreGradients { d_positive, d_negative })
}

#[cfg(test)]
mod tests {
    use super::*;

    const G: LossConfig = LossConfig {
        gamma: 0.2,
        alpha: 0.3,
        reduction: Reduction::Sum,
    };

    #[test]
    fn equal_scores_give_scaled_margin() {
        for s in [0.0, 0.3, 1.0] {
            let (v, _) = triplet_similarity_loss(&[s], &[s], &G).unwrap();
            assert!((v - 0.2 / std::f64::consts::E).abs() < 1e-15);
            assert!((v - 0.0735759).abs() < 1e-7);
        }
    }

    #[test]
    fn symmetric_softmax_is_log_two() {
        let (v, _) = normalized_softmax_loss(&[0.4], &[0.4], Reduction::Sum).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn alpha_zero_is_triplet_term() {
        let cfg = LossConfig { alpha: 0.0, ..G };
        let b = forensic_loss(&[0.2, 0.9], &[0.8, 0.1], &cfg).unwrap();
        assert_eq!(b.l_fl, b.l_ts);
    }

    #[test]
    fn mean_reduction() {
        let cfg = LossConfig {
            reduction: Reduction::Mean,
            ..G
        };
        let sum = forensic_loss(&[0.2, 0.5], &[0.8, 0.5], &G).unwrap();
        let mean = forensic_loss(&[0.2, 0.5], &[0.8, 0.5], &cfg).unwrap();
        assert!((mean.l_fl - sum.l_fl / 2.0).abs() < 1e-15);
        let gs = forensic_loss_gradients(&[0.2, 0.5], &[0.8, 0.5], &G).unwrap();
        let gm = forensic_loss_gradients(&[0.2, 0.5], &[0.8, 0.5], &cfg).unwrap();
        assert!((gm.d_positive[0] - gs.d_positive[0] / 2.0).abs() < 1e-15);
    }

    #[test]
    fn input_errors() {
        assert_eq!(
            forensic_loss(&[0.1], &[0.1, 0.2], &G).unwrap_err(),
            LossError::LengthMismatch { positive: 1, negative: 2 }
        );
        assert_eq!(forensic_loss(&[], &[], &G).unwrap_err(), LossError::Empty);
        assert!(matches!(forensic_loss(&[1.2], &[0.1], &G), Err(LossError::OutOfRange { index: 0, .. })));
        assert!(matches!(forensic_loss(&[0.2], &[-0.1], &G), Err(LossError::OutOfRange { index: 0, .. })));
        let bad = LossConfig { gamma: 0.0, ..G };
        assert!(matches!(forensic_loss(&[0.2], &[0.1], &bad), Err(LossError::InvalidConfig(_))));
    }

    #[test]
    fn breakdown_is_consistent() {
        let b = forensic_loss(&[0.2, 0.9, 0.6], &[0.8, 0.1, 0.55], &G).unwrap();
        assert!((b.l_fl - (b.l_ts + 0.3 * b.l_ns)).abs() < 1e-12);
        let ts_sum: f64 = b.per_triplet.iter().map(|t| t.0).sum();
        assert!((b.l_ts - ts_sum).abs() < 1e-15);
    }

    proptest::proptest! {
        #[test]
        fn terms_are_bounded(sp in 0.0..=1.0f64, sn in 0.0..=1.0f64) {
            let b = forensic_loss(&[sp], &[sn], &G).unwrap();
            proptest::prop_assert!(b.l_ts >= 0.0);
            proptest::prop_assert!(b.l_ts <= 1.0 - (-1.0f64).exp() + 0.2 / std::f64::consts::E + 1e-12);
            proptest::prop_assert!(b.l_ns > 0.0 && b.l_ns <= (1.0 + std::f64::consts::E).ln() + 1e-12);
            proptest::prop_assert!(b.l_fl >= b.l_ts);
        }

        #[test]
        fn loss_falls_with_positive_and_rises_with_negative(
            sp in 0.0..=1.0f64, sn in 0.0..=1.0f64, d in 0.0..=1.0f64,
        ) {
            let at = |p: f64, n: f64| forensic_loss(&[p], &[n], &G).unwrap().l_fl;
            proptest::prop_assert!(at((sp + d).min(1.0), sn) <= at(sp, sn) + 1e-15);
            proptest::prop_assert!(at(sp, (sn + d).min(1.0)) >= at(sp, sn) - 1e-15);
            let g = forensic_loss_gradients(&[sp], &[sn], &G).unwrap();
            proptest::prop_assert!(g.d_positive[0] < 0.0 && g.d_negative[0] > 0.0);
        }
    }
}
