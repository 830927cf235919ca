//! Small corpora and models shared by the examples so each one runs in seconds.
#![allow(dead_code)]

use std::path::Path;

use recapture::channelsim::{generate_corpus, SynthSpec};
use recapture::corpus::Manifest;
use recapture::embedder::EmbedderConfig;
use recapture::model::ForensicModel;
use recapture::simnet::SimNetConfig;
use recapture::trainer::TrainConfig;
use recapture::triplets::{MiningConfig, MiningMode};

/// Three templates with three genuine and four recaptured images each.
pub fn small_corpus(dir: &Path, seed: u64) -> Manifest {
    let spec = SynthSpec {
        n_templates: 3,
        n_genuine_per_template: 3,
        n_recaptured_per_template: 4,
        image_size: [224, 224],
        master_seed: seed,
        ..SynthSpec::default()
    };
    generate_corpus(&spec, dir).expect("corpus generation")
}

pub fn small_model(seed: u64) -> ForensicModel {
    let embedder = EmbedderConfig {
        embed_dim: 32,
        hidden_dim: 64,
        channels: [4, 8, 8, 16],
        init_seed: seed,
        ..EmbedderConfig::default()
    };
    let simnet = SimNetConfig {
        hidden_dim: 128,
        init_seed: seed + 1,
        ..SimNetConfig::default()
    };
    ForensicModel::new(&embedder, &simnet).expect("valid model config")
}

pub fn small_train_config(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        learning_rate: 1e-3,
        batch_size: 32,
        seed,
        mining: MiningConfig {
            mode: MiningMode::All,
            seed,
            ..MiningConfig::default()
        },
        ..TrainConfig::default()
    }
}
