//! The embedder and similarity subnet bundled as one trainable model.

use std::collections::HashMap;

use thiserror::Error;

use crate::corpus::{Patch, PatchKey};
use crate::embedder::{init_embedder, Embedder, EmbedderConfig, EmbedderError};
use crate::nn::Param;
use crate::simnet::{SimNet, SimNetConfig, SimNetError};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Embedder(#[from] EmbedderError),
    #[error(transparent)]
    SimNet(#[from] SimNetError),
}

/// Embedding inference is chunked so activations stay small.
const EMBED_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct ForensicModel {
    pub embedder: Embedder,
    pub simnet: SimNet,
}

impl ForensicModel {
    pub fn new(embedder: &EmbedderConfig, simnet: &SimNetConfig) -> Result<Self, ModelError> {
        let embedder = init_embedder(embedder)?;
        let simnet = SimNet::new(simnet, embedder.embed_dim())?;
        Ok(Self { embedder, simnet })
    }

    pub fn embed_dim(&self) -> usize {
        self.embedder.embed_dim()
    }

    /// Embeds each distinct patch once, keyed by its [`PatchKey`].
    pub fn embed_unique<'a>(&self, patches: impl IntoIterator<Item = &'a Patch>) -> HashMap<PatchKey, Vec<f64>> {
        let mut seen = HashMap::new();
        let mut todo: Vec<&Patch> = Vec::new();
        for p in patches {
            if seen.insert(p.key(), Vec::new()).is_none() {
                todo.push(p);
            }
        }
        for chunk in todo.chunks(EMBED_CHUNK) {
            for e in self.embedder.embed(chunk) {
                seen.insert(e.source, e.values);
            }
        }
        seen
    }

    /// `S(reference, other)` for every pair, in order.
    pub fn score_pairs(&self, embeddings: &HashMap<PatchKey, Vec<f64>>, pairs: &[(PatchKey, PatchKey)]) -> Vec<f64> {
        let refs: Vec<(&[f64], &[f64])> = pairs
            .iter()
            .map(|(r, o)| (embeddings[r].as_slice(), embeddings[o].as_slice()))
            .collect();
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in refs.chunks(256) {
            out.extend(self.simnet.forward_train(chunk).scores);
        }
        out
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = self.embedder.params();
        out.extend(self.simnet.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.embedder.params_mut();
        out.extend(self.simnet.params_mut());
        out
    }
}
