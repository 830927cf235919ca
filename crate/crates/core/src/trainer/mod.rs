//! Training and fine-tuning.
//!
//! Each epoch re-mines the candidate triplets with the current model, shuffles
//! the mined set and takes one Adam step per mini-batch. Within a batch every
//! distinct patch goes through the embedder once and its gradient collects the
//! contributions of every pair it appears in.

mod checkpoint;

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, CheckpointError, CheckpointMeta};

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Patch, PatchKey};
use crate::loss::{forensic_loss, forensic_loss_gradients, LossConfig, LossError};
use crate::model::ForensicModel;
use crate::nn::{Adam, AdamConfig};
use crate::raster::Raster;
use crate::seed;
use crate::triplets::{mine_semi_hard, triplet_scores, MiningConfig, Triplet, TripletError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("no training triplets")]
    NoTriplets,
    #[error("non-finite loss at epoch {epoch}, batch {batch}: l_ts={l_ts}, l_ns={l_ns}")]
    NonFinite { epoch: usize, batch: usize, l_ts: f64, l_ns: f64 },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Triplet(#[from] TripletError),
    #[error("history {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    pub mining: MiningConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 1e-4,
            batch_size: 128,
            optimizer: Optimizer::Adam,
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
            mining: MiningConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be a finite non-negative number, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        self.loss.validate()?;
        self.mining.validate()?;
        Ok(())
    }
}

/// One row of the training history. Loss columns are per-triplet means over
/// the epoch's mined triplets, evaluated with the weights at the end of the epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_ts: f64,
    pub l_ns: f64,
    pub l_fl: f64,
    pub triplet_count: usize,
    pub wall_time: f64,
    /// Mean validation `l_fl`, when validation triplets exist.
    pub val_l_fl: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Epoch (1-based) whose weights were returned.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,l_ts,l_ns,l_fl,triplet_count,wall_time,val_l_fl\n");
        for r in &self.records {
            let val = r.val_l_fl.map(|v| format!("{v:.9}")).unwrap_or_default();
            s.push_str(&format!(
                "{},{:.9},{:.9},{:.9},{},{:.3},{}\n",
                r.epoch, r.l_ts, r.l_ns, r.l_fl, r.triplet_count, r.wall_time, val
            ));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), TrainError> {
        let io = |source| TrainError::Io {
            path: path.display().to_string(),
            source,
        };
        std::fs::File::create(path).and_then(|mut f| f.write_all(self.to_csv().as_bytes())).map_err(io)
    }
}

/// Mean `(l_ts, l_ns, l_fl)` per triplet under the current weights.
pub fn evaluate_loss(model: &ForensicModel, triplets: &[Triplet], loss: &LossConfig) -> Result<(f64, f64, f64), TrainError> {
    if triplets.is_empty() {
        return Ok((0.0, 0.0, 0.0));
    }
    let (sp, sn): (Vec<f64>, Vec<f64>) = triplet_scores(triplets, model).into_iter().unzip();
    let b = forensic_loss(&sp, &sn, loss)?;
    let n = match loss.reduction {
        crate::loss::Reduction::Sum => triplets.len() as f64,
        crate::loss::Reduction::Mean => 1.0,
    };
    Ok((b.l_ts / n, b.l_ns / n, b.l_fl / n))
}

/// Turns a NaN or infinite similarity score into a NaN loss so the caller
/// reports it as a non-finite loss.
fn non_finite_as_nan(r: Result<(f64, f64, f64), TrainError>) -> Result<(f64, f64, f64), TrainError> {
    match r {
        Err(TrainError::Loss(LossError::OutOfRange { value, .. })) if !value.is_finite() => Ok((f64::NAN, f64::NAN, f64::NAN)),
        r => r,
    }
}

/// One optimizer step on `batch`. Returns the batch loss as reported by the
/// configured reduction.
pub fn train_step(
    model: &mut ForensicModel,
    optimizer: &mut Adam,
    batch: &[&Triplet],
    loss: &LossConfig,
) -> Result<(f64, f64, f64), TrainError> {
    let mut slots: HashMap<PatchKey, usize> = HashMap::new();
    let mut unique: Vec<&Patch> = Vec::new();
    let mut index = Vec::with_capacity(batch.len());
    for t in batch {
        let mut ix = [0usize; 3];
        for (k, p) in [&*t.reference, &*t.positive, &*t.negative].into_iter().enumerate() {
            ix[k] = *slots.entry(p.key()).or_insert_with(|| {
                unique.push(p);
                unique.len() - 1
            });
        }
        index.push((ix[0], ix[1], ix[2]));
    }

    let dim = model.embed_dim();
    let rasters: Vec<&Raster> = unique.iter().map(|p| &p.pixels).collect();
    let pass = model.embedder.forward_train(&rasters);
    let pairs: Vec<(&[f64], &[f64])> = index
        .iter()
        .flat_map(|&(r, p, n)| [(pass.embedding(r, dim), pass.embedding(p, dim)), (pass.embedding(r, dim), pass.embedding(n, dim))])
        .collect();
    let sim = model.simnet.forward_train(&pairs);
    let sp: Vec<f64> = sim.scores.iter().step_by(2).copied().collect();
    let sn: Vec<f64> = sim.scores.iter().skip(1).step_by(2).copied().collect();
    let breakdown = forensic_loss(&sp, &sn, loss)?;
    let grads = forensic_loss_gradients(&sp, &sn, loss)?;
    let d_scores: Vec<f64> = grads.d_positive.iter().zip(&grads.d_negative).flat_map(|(&a, &b)| [a, b]).collect();

    let pair_grads = model.simnet.backward(sim, &d_scores);
    let mut d_emb = vec![0.0; unique.len() * dim];
    for (&(r, p, n), chunk) in index.iter().zip(pair_grads.chunks_exact(2)) {
        let [(dr1, dp), (dr2, dn)] = chunk else { unreachable!() };
        for (slot, g) in [(r, dr1), (p, dp), (r, dr2), (n, dn)] {
            for (acc, v) in d_emb[slot * dim..(slot + 1) * dim].iter_mut().zip(g) {
                *acc += v;
            }
        }
    }
    model.embedder.backward(pass, &d_emb);
    optimizer.step(model.params_mut());
    Ok((breakdown.l_ts, breakdown.l_ns, breakdown.l_fl))
}

/// Runs `config.epochs` epochs of mining and optimisation.
///
/// `candidates` are re-mined every epoch; `validation` triplets are scored as
/// they are. The returned model carries the weights of the epoch with the
/// lowest validation loss, or of the last epoch when `validation` is empty.
pub fn train(
    model: ForensicModel,
    candidates: &[Triplet],
    validation: &[Triplet],
    config: &TrainConfig,
) -> Result<(ForensicModel, TrainHistory), TrainError> {
    run(model, candidates, validation, config, true)
}

/// Continues training on `support` alone, without mining or validation.
/// The input model is left untouched.
pub fn finetune(model: &ForensicModel, support: &[Triplet], config: &TrainConfig) -> Result<(ForensicModel, TrainHistory), TrainError> {
    run(model.clone(), support, &[], config, false)
}

fn run(
    mut model: ForensicModel,
    candidates: &[Triplet],
    validation: &[Triplet],
    config: &TrainConfig,
    mine: bool,
) -> Result<(ForensicModel, TrainHistory), TrainError> {
    config.validate()?;
    if candidates.is_empty() {
        return Err(TrainError::NoTriplets);
    }
    let mut optimizer = Adam::new(config.learning_rate, config.adam);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, ForensicModel)> = None;

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let mined: Vec<Triplet> = if mine {
            let mining = MiningConfig {
                seed: seed::mix(&[config.seed, seed::Stream::Train as u64, epoch as u64, 0x31]),
                ..config.mining
            };
            mine_semi_hard(candidates, &model, &mining)
        } else {
            candidates.to_vec()
        };

        let mut order: Vec<usize> = (0..mined.len()).collect();
        order.shuffle(&mut seed::rng(seed::mix(&[config.seed, seed::Stream::Train as u64, epoch as u64])));
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Triplet> = chunk.iter().map(|&i| &mined[i]).collect();
            let (l_ts, l_ns, l_fl) = non_finite_as_nan(train_step(&mut model, &mut optimizer, &batch, &config.loss))?;
            if !l_fl.is_finite() {
                return Err(TrainError::NonFinite { epoch, batch: b, l_ts, l_ns });
            }
        }

        let (l_ts, l_ns, l_fl) = evaluate_loss(&model, &mined, &config.loss)?;
        let val_l_fl = if validation.is_empty() {
            None
        } else {
            Some(evaluate_loss(&model, validation, &config.loss)?.2)
        };
        if let Some(v) = val_l_fl {
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, model.clone()));
                history.best_epoch = epoch;
            }
        }
        history.records.push(EpochRecord {
            epoch,
            l_ts,
            l_ns,
            l_fl,
            triplet_count: mined.len(),
            wall_time: start.elapsed().as_secs_f64(),
            val_l_fl,
        });
    }

    match best {
        Some((_, m)) => Ok((m, history)),
        None => {
            history.best_epoch = config.epochs;
            Ok((model, history))
        }
    }
}
