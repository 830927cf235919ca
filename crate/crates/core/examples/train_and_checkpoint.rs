//! Trains a small embedder and similarity network on a synthetic corpus,
//! saves a checkpoint and checks that the reloaded model scores identically.
//!
//! ```text
//! cargo run --release --example train_and_checkpoint -- [EPOCHS]
//! ```

mod common;

use recapture::corpus::{split_corpus, PatchFilterConfig, SplitSpec};
use recapture::trainer::{load_checkpoint, save_checkpoint, train};
use recapture::triplets::{build_candidate_triplets, triplet_scores, PatchStore};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(5);
    let dir = tempfile::tempdir()?;
    let manifest = common::small_corpus(&dir.path().join("data"), 5);
    let split = split_corpus(&manifest, &SplitSpec { seed: 5, ..SplitSpec::default() })?;
    let store = PatchStore::from_manifest(&manifest, 112, &PatchFilterConfig::default())?;
    let candidates = build_candidate_triplets(&split.train, &store)?;
    let validation = build_candidate_triplets(&split.val, &store).unwrap_or_default();
    println!("{} training candidates, {} validation triplets", candidates.len(), validation.len());

    let (model, history) = train(common::small_model(5), &candidates, &validation, &common::small_train_config(epochs, 5))?;
    print!("{}", history.to_csv());
    println!("best epoch {}", history.best_epoch);

    let ckpt = dir.path().join("checkpoint");
    save_checkpoint(&model, 5, epochs as u64, &ckpt)?;
    let (reloaded, meta) = load_checkpoint(&ckpt)?;
    let before = triplet_scores(&candidates, &model);
    let after = triplet_scores(&candidates, &reloaded);
    let drift = before
        .iter()
        .zip(&after)
        .map(|(a, b)| (a.0 - b.0).abs().max((a.1 - b.1).abs()))
        .fold(0.0, f64::max);
    println!("reloaded checkpoint (step {}), max score drift {drift:e}", meta.step);
    Ok(())
}
