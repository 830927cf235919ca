use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use recapture::channelsim::{generate_corpus, SynthSpec};
use recapture::corpus::PatchFilterConfig;
use recapture::embedder::EmbedderConfig;
use recapture::model::ForensicModel;
use recapture::simnet::SimNetConfig;
use recapture::trainer::{train, TrainConfig};
use recapture::triplets::{build_candidate_triplets, MiningConfig, MiningMode, PatchStore};

fn model(seed: u64) -> ForensicModel {
    let embedder = EmbedderConfig {
        embed_dim: 32,
        hidden_dim: 64,
        channels: [4, 8, 8, 16],
        init_seed: seed,
        ..EmbedderConfig::default()
    };
    let simnet = SimNetConfig {
        hidden_dim: 128,
        init_seed: seed + 1000,
        ..SimNetConfig::default()
    };
    ForensicModel::new(&embedder, &simnet).unwrap()
}

#[test]
fn final_epoch_loss_drops_below_the_first_on_most_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        n_templates: 4,
        n_genuine_per_template: 5,
        n_recaptured_per_template: 4,
        image_size: [224, 224],
        master_seed: 17,
        ..SynthSpec::default()
    };
    let manifest = generate_corpus(&spec, dir.path()).unwrap();
    let store = PatchStore::from_manifest(&manifest, 112, &PatchFilterConfig::default()).unwrap();
    let all = build_candidate_triplets(&manifest, &store).unwrap();
    assert!(all.len() >= 200, "only {} candidates", all.len());

    let mut improved = Vec::new();
    for seed in 1..=10u64 {
        let mut triplets = all.clone();
        triplets.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        triplets.truncate(200);
        let config = TrainConfig {
            epochs: 10,
            learning_rate: 1e-3,
            batch_size: 32,
            seed,
            mining: MiningConfig {
                mode: MiningMode::All,
                seed,
                ..MiningConfig::default()
            },
            ..TrainConfig::default()
        };
        let (_, history) = train(model(seed), &triplets, &[], &config).unwrap();
        let first = history.records.first().unwrap().l_fl;
        let last = history.records.last().unwrap().l_fl;
        improved.push((seed, first, last));
    }
    let wins = improved.iter().filter(|(_, f, l)| l < f).count();
    assert!(wins >= 9, "loss fell on {wins}/10 seeds: {improved:?}");
}
