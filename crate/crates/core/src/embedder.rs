//! Patch embedder: a convolutional backbone followed by a two-layer head.
//!
//! The same `Embedder` value embeds the reference, positive and negative
//! patches of a triplet, so the three branches share one set of weights.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Patch, PatchKey, PATCH_SIZE};
use crate::nn::{self, Conv2d, Linear, Param};
use crate::raster::Raster;
use crate::seed;

pub const TINY_CONV: &str = "tiny_conv";

#[derive(Debug, Error, PartialEq)]
pub enum EmbedderError {
    #[error("unknown backbone {0:?}; available: tiny_conv")]
    UnknownBackbone(String),
    #[error("invalid embedder config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderConfig {
    pub backbone: String,
    pub embed_dim: usize,
    /// Width of the first fully-connected head layer.
    pub hidden_dim: usize,
    /// Output channels of the four stride-2 convolution blocks.
    pub channels: [usize; 4],
    pub freeze_backbone: bool,
    pub init_seed: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            backbone: TINY_CONV.into(),
            embed_dim: 256,
            hidden_dim: 512,
            channels: [8, 16, 32, 64],
            freeze_backbone: false,
            init_seed: 0,
        }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<(), EmbedderError> {
        if self.backbone != TINY_CONV {
            return Err(EmbedderError::UnknownBackbone(self.backbone.clone()));
        }
        if self.embed_dim < 8 {
            return Err(EmbedderError::InvalidConfig(format!("embed_dim must be >= 8, got {}", self.embed_dim)));
        }
        if self.hidden_dim == 0 || self.channels.contains(&0) {
            return Err(EmbedderError::InvalidConfig("layer widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub values: Vec<f64>,
    pub source: PatchKey,
}

/// Network input: planar CHW floats scaled to roughly [-1, 1].
pub fn input_tensor(pixels: &Raster) -> Vec<f32> {
    let n = pixels.height() * pixels.width();
    let mut out = vec![0f32; 3 * n];
    for (i, px) in pixels.as_bytes().chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * n + i] = px[c] as f32 / 127.5 - 1.0;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedder {
    config: EmbedderConfig,
    convs: Vec<Conv2d>,
    fc1: Linear,
    fc2: Linear,
}

/// Activations kept from a training-mode forward pass.
pub struct ForwardPass {
    batch: usize,
    inputs: Vec<Vec<f32>>,
    /// Per sample, the activated output of every convolution block.
    activations: Vec<Vec<Vec<f32>>>,
    pooled: Vec<f64>,
    hidden: Vec<f64>,
    /// `batch x embed_dim`, row-major.
    pub embeddings: Vec<f64>,
}

impl ForwardPass {
    pub fn embedding(&self, i: usize, dim: usize) -> &[f64] {
        &self.embeddings[i * dim..(i + 1) * dim]
    }
}

pub fn init_embedder(config: &EmbedderConfig) -> Result<Embedder, EmbedderError> {
    config.validate()?;
    let mut rng = seed::rng(seed::mix(&[config.init_seed, 0xE]));
    let mut convs = Vec::with_capacity(4);
    let mut in_ch = 3;
    for (i, &out_ch) in config.channels.iter().enumerate() {
        let mut conv = Conv2d::new(&format!("backbone.conv{i}"), in_ch, out_ch, &mut rng);
        conv.weight.trainable = !config.freeze_backbone;
        conv.bias.trainable = !config.freeze_backbone;
        convs.push(conv);
        in_ch = out_ch;
    }
    let fc1 = Linear::new("head.fc1", in_ch, config.hidden_dim, 2f64.sqrt(), &mut rng);
    let fc2 = Linear::new("head.fc2", config.hidden_dim, config.embed_dim, 1.0, &mut rng);
    Ok(Embedder {
        config: config.clone(),
        convs,
        fc1,
        fc2,
    })
}

impl Embedder {
    pub fn config(&self) -> &EmbedderConfig {
        &self.config
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    fn backbone_forward(&self, input: &[f32], keep: bool) -> (Vec<f64>, Vec<Vec<f32>>) {
        let (mut h, mut w) = (PATCH_SIZE, PATCH_SIZE);
        let mut scratch = Vec::new();
        let mut acts: Vec<Vec<f32>> = Vec::with_capacity(self.convs.len());
        let mut current: Option<Vec<f32>> = None;
        for conv in &self.convs {
            let x = current.as_deref().unwrap_or(input);
            let y = conv.forward(x, h, w, &mut scratch);
            h = nn::conv::out_size(h);
            w = nn::conv::out_size(w);
            if let Some(prev) = current.replace(y) {
                if keep {
                    acts.push(prev);
                }
            }
        }
        let last = current.expect("at least one conv block");
        let area = (h * w) as f64;
        let pooled = last
            .chunks_exact(h * w)
            .map(|plane| plane.iter().map(|&v| v as f64).sum::<f64>() / area)
            .collect();
        if keep {
            acts.push(last);
        }
        (pooled, acts)
    }

    fn head_forward(&self, pooled: &[f64], batch: usize) -> (Vec<f64>, Vec<f64>) {
        let mut hidden = self.fc1.forward(pooled, batch);
        nn::relu_in_place(&mut hidden);
        let out = self.fc2.forward(&hidden, batch);
        (hidden, out)
    }

    /// Inference on raw 224x224 rasters; one row of `embed_dim` per input.
    pub fn embed_rasters(&self, rasters: &[&Raster]) -> Vec<Vec<f64>> {
        let mut pooled = Vec::with_capacity(rasters.len() * self.config.channels[3]);
        for r in rasters {
            assert_eq!((r.height(), r.width()), (PATCH_SIZE, PATCH_SIZE), "embedder input must be a patch");
            pooled.extend(self.backbone_forward(&input_tensor(r), false).0);
        }
        let (_, out) = self.head_forward(&pooled, rasters.len());
        out.chunks_exact(self.config.embed_dim).map(<[f64]>::to_vec).collect()
    }

    /// Order-preserving batch inference.
    pub fn embed(&self, patches: &[&Patch]) -> Vec<Embedding> {
        let rasters: Vec<&Raster> = patches.iter().map(|p| &p.pixels).collect();
        self.embed_rasters(&rasters)
            .into_iter()
            .zip(patches)
            .map(|(values, p)| Embedding { values, source: p.key() })
            .collect()
    }

    /// Training-mode forward pass that keeps what [`Embedder::backward`] needs.
    pub fn forward_train(&self, rasters: &[&Raster]) -> ForwardPass {
        let batch = rasters.len();
        let mut inputs = Vec::with_capacity(batch);
        let mut activations = Vec::with_capacity(batch);
        let mut pooled = Vec::with_capacity(batch * self.config.channels[3]);
        for r in rasters {
            let input = input_tensor(r);
            let (p, acts) = self.backbone_forward(&input, !self.config.freeze_backbone);
            pooled.extend(p);
            inputs.push(input);
            activations.push(acts);
        }
        let (hidden, embeddings) = self.head_forward(&pooled, batch);
        ForwardPass {
            batch,
            inputs,
            activations,
            pooled,
            hidden,
            embeddings,
        }
    }

    /// Accumulates gradients for `d_embeddings` (`batch x embed_dim`).
    pub fn backward(&mut self, pass: ForwardPass, d_embeddings: &[f64]) {
        let batch = pass.batch;
        let mut d_hidden = self.fc2.backward(&pass.hidden, d_embeddings, batch);
        nn::relu_backward(&pass.hidden, &mut d_hidden);
        let d_pooled = self.fc1.backward(&pass.pooled, &d_hidden, batch);
        if self.config.freeze_backbone {
            return;
        }
        let c_last = self.config.channels[3];
        let mut dims = vec![(PATCH_SIZE, PATCH_SIZE)];
        for _ in 0..self.convs.len() {
            let (h, w) = *dims.last().unwrap();
            dims.push((nn::conv::out_size(h), nn::conv::out_size(w)));
        }
        let mut scratch = Vec::new();
        for (i, (input, acts)) in pass.inputs.iter().zip(&pass.activations).enumerate() {
            let (h, w) = dims[self.convs.len()];
            let area = h * w;
            let mut grad: Vec<f32> = Vec::with_capacity(c_last * area);
            for c in 0..c_last {
                let g = (d_pooled[i * c_last + c] / area as f64) as f32;
                grad.extend(std::iter::repeat_n(g, area));
            }
            for layer in (0..self.convs.len()).rev() {
                let x = if layer == 0 { input.as_slice() } else { acts[layer - 1].as_slice() };
                let (h, w) = dims[layer];
                let dx = self.convs[layer].backward(x, h, w, &acts[layer], &mut grad, layer > 0, &mut scratch);
                match dx {
                    Some(dx) => grad = dx,
                    None => break,
                }
            }
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for c in &self.convs {
            out.extend(c.params());
        }
        out.extend(self.fc1.params());
        out.extend(self.fc2.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for c in &mut self.convs {
            out.extend(c.params_mut());
        }
        out.extend(self.fc1.params_mut());
        out.extend(self.fc2.params_mut());
        out
    }

    pub fn backbone_params(&self) -> Vec<&Param> {
        self.convs.iter().flat_map(|c| c.params()).collect()
    }

    pub fn head_params(&self) -> Vec<&Param> {
        self.fc1.params().into_iter().chain(self.fc2.params()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small_config() -> EmbedderConfig {
        EmbedderConfig {
            embed_dim: 16,
            hidden_dim: 8,
            channels: [2, 3, 3, 4],
            init_seed: 5,
            ..EmbedderConfig::default()
        }
    }

    fn noise_raster(seed: u64) -> Raster {
        let mut rng = seed::rng(seed);
        let mut r = Raster::new(PATCH_SIZE, PATCH_SIZE);
        r.as_bytes_mut().iter_mut().for_each(|b| *b = rng.random());
        r
    }

    #[test]
    fn unknown_backbone_rejected() {
        let cfg = EmbedderConfig {
            backbone: "resnet_like_50".into(),
            ..EmbedderConfig::default()
        };
        assert_eq!(init_embedder(&cfg).unwrap_err(), EmbedderError::UnknownBackbone("resnet_like_50".into()));
        let cfg = EmbedderConfig {
            embed_dim: 4,
            ..EmbedderConfig::default()
        };
        assert!(matches!(init_embedder(&cfg), Err(EmbedderError::InvalidConfig(_))));
    }

    #[test]
    fn default_embedding_has_256_entries() {
        let e = init_embedder(&EmbedderConfig::default()).unwrap();
        let out = e.embed_rasters(&[&noise_raster(1)]);
        assert_eq!(out[0].len(), 256);
        assert!(out[0].iter().all(|v| v.is_finite()));
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_embedder(&small_config()).unwrap();
        let b = init_embedder(&small_config()).unwrap();
        assert_eq!(a, b);
        let other = EmbedderConfig {
            init_seed: 6,
            ..small_config()
        };
        assert_ne!(a, init_embedder(&other).unwrap());
    }

    #[test]
    fn batch_order_and_independence() {
        let e = init_embedder(&small_config()).unwrap();
        let (x, y) = (noise_raster(1), noise_raster(2));
        let batch = e.embed_rasters(&[&x, &y, &x]);
        assert_eq!(batch.len(), 3);
        assert_eq!(batch[0], batch[2]);
        let alone = e.embed_rasters(&[&y]);
        for (a, b) in alone[0].iter().zip(&batch[1]) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1e-12));
        }
    }

    #[test]
    fn train_forward_matches_inference() {
        let e = init_embedder(&small_config()).unwrap();
        let x = noise_raster(3);
        let pass = e.forward_train(&[&x]);
        assert_eq!(pass.embedding(0, 16), e.embed_rasters(&[&x])[0].as_slice());
    }

    #[test]
    fn backward_matches_finite_differences_on_head_and_backbone() {
        let mut e = init_embedder(&small_config()).unwrap();
        let x = noise_raster(4);
        let c: Vec<f64> = (0..16).map(|i| ((i * 7 % 5) as f64 - 2.0) / 3.0).collect();
        let loss = |e: &Embedder| -> f64 { e.embed_rasters(&[&x])[0].iter().zip(&c).map(|(a, b)| a * b).sum() };
        let pass = e.forward_train(&[&x]);
        e.backward(pass, &c);
        // head weights are f64 end to end
        let idx = 3;
        let mut p = e.clone();
        let mut m = e.clone();
        p.fc1.weight.value[idx] += 1e-6;
        m.fc1.weight.value[idx] -= 1e-6;
        let fd = (loss(&p) - loss(&m)) / 2e-6;
        assert!((fd - e.fc1.weight.grad[idx]).abs() < 1e-6 * fd.abs().max(1.0));
        // backbone runs in f32, so use a loose check
        for idx in [0, 5, 11] {
            let mut p = e.clone();
            let mut m = e.clone();
            p.convs[0].weight.value[idx] += 1e-2;
            m.convs[0].weight.value[idx] -= 1e-2;
            let fd = (loss(&p) - loss(&m)) / 2e-2;
            let g = e.convs[0].weight.grad[idx];
            assert!((fd - g).abs() < 0.05 * g.abs().max(1e-2), "conv0[{idx}] fd {fd} vs {g}");
        }
    }

    #[test]
    fn frozen_backbone_gets_no_gradient() {
        let cfg = EmbedderConfig {
            freeze_backbone: true,
            ..small_config()
        };
        let mut e = init_embedder(&cfg).unwrap();
        assert!(e.backbone_params().iter().all(|p| !p.trainable));
        let x = noise_raster(4);
        let pass = e.forward_train(&[&x]);
        e.backward(pass, &[1.0; 16]);
        assert!(e.backbone_params().iter().all(|p| p.grad.iter().all(|g| *g == 0.0)));
        assert!(e.head_params().iter().any(|p| p.grad.iter().any(|g| *g != 0.0)));
    }
}
