//! Forensic similarity subnet.
//!
//! Two embeddings `a` (reference) and `b` (other) are fused as
//! `[a ‖ b ‖ a⊙b]`, passed through a ReLU hidden layer and a single sigmoid
//! unit. The score is not symmetric: callers pass the reference first.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{self, Linear, Param};
use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum SimNetError {
    #[error("embedding lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("embedding length {got} does not match the network input {expected}")]
    InputMismatch { expected: usize, got: usize },
    #[error("invalid simnet config: {0}")]
    InvalidConfig(String),
}

/// A similarity in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimilarityScore(f64);

impl SimilarityScore {
    pub fn new(value: f64) -> Option<Self> {
        (0.0..=1.0).contains(&value).then_some(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimNetConfig {
    pub hidden_dim: usize,
    pub activation: Activation,
    pub init_seed: u64,
}

impl SimNetConfig {
    pub fn validate(&self) -> Result<(), SimNetError> {
        if self.hidden_dim == 0 {
            return Err(SimNetError::InvalidConfig("hidden_dim must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for SimNetConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 2048,
            activation: Activation::Relu,
            init_seed: 0,
        }
    }
}

pub fn pair_features(a: &[f64], b: &[f64]) -> Result<Vec<f64>, SimNetError> {
    if a.len() != b.len() {
        return Err(SimNetError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let mut out = Vec::with_capacity(3 * a.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out.extend(a.iter().zip(b).map(|(x, y)| x * y));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimNet {
    config: SimNetConfig,
    embed_dim: usize,
    fc1: Linear,
    fc2: Linear,
}

/// Intermediate values of a batched training forward pass.
pub struct SimPass {
    batch: usize,
    features: Vec<f64>,
    hidden: Vec<f64>,
    pub scores: Vec<f64>,
}

impl SimNet {
    pub fn new(config: &SimNetConfig, embed_dim: usize) -> Result<Self, SimNetError> {
        config.validate()?;
        if embed_dim == 0 {
            return Err(SimNetError::InvalidConfig("embedding dimension must be >= 1".into()));
        }
        let mut rng = seed::rng(seed::mix(&[config.init_seed, 0x5]));
        Ok(Self {
            config: config.clone(),
            embed_dim,
            fc1: Linear::new("simnet.fc1", 3 * embed_dim, config.hidden_dim, 2f64.sqrt(), &mut rng),
            fc2: Linear::new("simnet.fc2", config.hidden_dim, 1, 1.0, &mut rng),
        })
    }

    pub fn config(&self) -> &SimNetConfig {
        &self.config
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    fn check(&self, a: &[f64], b: &[f64]) -> Result<(), SimNetError> {
        if a.len() != b.len() {
            return Err(SimNetError::LengthMismatch {
                left: a.len(),
                right: b.len(),
            });
        }
        if a.len() != self.embed_dim {
            return Err(SimNetError::InputMismatch {
                expected: self.embed_dim,
                got: a.len(),
            });
        }
        Ok(())
    }

    pub fn similarity(&self, a: &[f64], b: &[f64]) -> Result<SimilarityScore, SimNetError> {
        self.check(a, b)?;
        Ok(SimilarityScore(self.forward_train(&[(a, b)]).scores[0]))
    }

    /// Scores every `(reference, other)` pair in one batched pass.
    pub fn score_pairs(&self, pairs: &[(&[f64], &[f64])]) -> Result<Vec<f64>, SimNetError> {
        for (a, b) in pairs {
            self.check(a, b)?;
        }
        Ok(self.forward_train(pairs).scores)
    }

    /// Batched forward keeping intermediates. Inputs must already be checked.
    pub fn forward_train(&self, pairs: &[(&[f64], &[f64])]) -> SimPass {
        let batch = pairs.len();
        let mut features = Vec::with_capacity(batch * 3 * self.embed_dim);
        for (a, b) in pairs {
            features.extend(pair_features(a, b).expect("lengths checked by caller"));
        }
        let mut hidden = self.fc1.forward(&features, batch);
        nn::relu_in_place(&mut hidden);
        let logits = self.fc2.forward(&hidden, batch);
        SimPass {
            batch,
            features,
            hidden,
            scores: logits.into_iter().map(nn::sigmoid).collect(),
        }
    }

    /// Backpropagates `dL/dscore` for each pair. Accumulates parameter
    /// gradients and returns `dL/da` and `dL/db` per pair.
    pub fn backward(&mut self, pass: SimPass, d_scores: &[f64]) -> Vec<(Vec<f64>, Vec<f64>)> {
        let d = self.embed_dim;
        let d_logits: Vec<f64> = pass.scores.iter().zip(d_scores).map(|(s, g)| g * s * (1.0 - s)).collect();
        let mut d_hidden = self.fc2.backward(&pass.hidden, &d_logits, pass.batch);
        nn::relu_backward(&pass.hidden, &mut d_hidden);
        let d_features = self.fc1.backward(&pass.features, &d_hidden, pass.batch);
        split_feature_grads(&pass.features, &d_features, d)
    }

    /// Score with its gradient w.r.t. both inputs; parameters are untouched.
    pub fn similarity_with_input_grad(&self, a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>), SimNetError> {
        self.check(a, b)?;
        let pass = self.forward_train(&[(a, b)]);
        let s = pass.scores[0];
        let d_logit = [s * (1.0 - s)];
        let mut d_hidden = self.fc2.input_grad(&d_logit, 1);
        nn::relu_backward(&pass.hidden, &mut d_hidden);
        let d_features = self.fc1.input_grad(&d_hidden, 1);
        let (da, db) = split_feature_grads(&pass.features, &d_features, self.embed_dim).remove(0);
        Ok((s, da, db))
    }

    pub fn params(&self) -> Vec<&Param> {
        self.fc1.params().into_iter().chain(self.fc2.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let [a, b] = self.fc1.params_mut();
        let [c, d] = self.fc2.params_mut();
        vec![a, b, c, d]
    }

    /// Zeroes the output layer. Every pair then scores exactly 0.5.
    pub fn zero_output_layer(&mut self) {
        self.fc2.weight.value.iter_mut().for_each(|v| *v = 0.0);
        self.fc2.bias.value.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Maps gradients on `[a ‖ b ‖ a⊙b]` back to `a` and `b`.
fn split_feature_grads(features: &[f64], d_features: &[f64], d: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    features
        .chunks_exact(3 * d)
        .zip(d_features.chunks_exact(3 * d))
        .map(|(f, g)| {
            let (a, b) = (&f[..d], &f[d..2 * d]);
            let da = (0..d).map(|i| g[i] + g[2 * d + i] * b[i]).collect();
            let db = (0..d).map(|i| g[d + i] + g[2 * d + i] * a[i]).collect();
            (da, db)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn net(dim: usize, seed: u64) -> SimNet {
        SimNet::new(
            &SimNetConfig {
                hidden_dim: 32,
                init_seed: seed,
                ..SimNetConfig::default()
            },
            dim,
        )
        .unwrap()
    }

    fn random_vec(rng: &mut impl Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn pair_feature_definitions() {
        assert_eq!(pair_features(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), vec![1.0, 2.0, 3.0, 4.0, 3.0, 8.0]);
        assert_eq!(pair_features(&[0.0; 3], &[0.0; 3]).unwrap(), vec![0.0; 9]);
        assert_eq!(pair_features(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(
            pair_features(&[1.0], &[1.0, 2.0]),
            Err(SimNetError::LengthMismatch { left: 1, right: 2 })
        );
    }

    #[test]
    fn scores_are_bounded() {
        let n = net(8, 1);
        let mut rng = seed::rng(2);
        for _ in 0..50 {
            let (a, b) = (random_vec(&mut rng, 8), random_vec(&mut rng, 8));
            let s = n.similarity(&a, &b).unwrap().value();
            assert!(s > 0.0 && s < 1.0);
        }
    }

    #[test]
    fn zero_output_layer_gives_half() {
        let mut n = net(8, 1);
        n.zero_output_layer();
        let mut rng = seed::rng(3);
        for _ in 0..10 {
            let (a, b) = (random_vec(&mut rng, 8), random_vec(&mut rng, 8));
            assert_eq!(n.similarity(&a, &b).unwrap().value(), 0.5);
        }
    }

    #[test]
    fn length_errors() {
        let n = net(8, 1);
        assert!(matches!(n.similarity(&[0.0; 8], &[0.0; 7]), Err(SimNetError::LengthMismatch { .. })));
        assert!(matches!(n.similarity(&[0.0; 4], &[0.0; 4]), Err(SimNetError::InputMismatch { .. })));
    }

    #[test]
    fn not_assumed_symmetric() {
        let n = net(8, 4);
        let mut rng = seed::rng(5);
        let (a, b) = (random_vec(&mut rng, 8), random_vec(&mut rng, 8));
        assert_ne!(n.similarity(&a, &b).unwrap(), n.similarity(&b, &a).unwrap());
    }

    #[test]
    fn batched_scores_match_single() {
        let n = net(8, 6);
        let mut rng = seed::rng(7);
        let vs: Vec<Vec<f64>> = (0..4).map(|_| random_vec(&mut rng, 8)).collect();
        let pairs: Vec<(&[f64], &[f64])> = vec![(&vs[0], &vs[1]), (&vs[2], &vs[3])];
        let batch = n.score_pairs(&pairs).unwrap();
        assert!((batch[1] - n.similarity(&vs[2], &vs[3]).unwrap().value()).abs() < 1e-12);
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let mut n = net(4, 8);
        let mut rng = seed::rng(9);
        let (a, b) = (random_vec(&mut rng, 4), random_vec(&mut rng, 4));
        let pass = n.forward_train(&[(&a, &b)]);
        n.backward(pass, &[1.0]);
        for i in [0usize, 7, 40] {
            let mut p = n.clone();
            let mut m = n.clone();
            p.fc1.weight.value[i] += 1e-6;
            m.fc1.weight.value[i] -= 1e-6;
            let fd = (p.similarity(&a, &b).unwrap().value() - m.similarity(&a, &b).unwrap().value()) / 2e-6;
            assert!((fd - n.fc1.weight.grad[i]).abs() < 1e-8, "{fd} vs {}", n.fc1.weight.grad[i]);
        }
    }
}
