//! Builds candidate (reference, positive, negative) patch triplets from a
//! small corpus and compares the three mining modes under an untrained model.
//!
//! ```text
//! cargo run --release --example mine_triplets
//! ```

mod common;

use recapture::corpus::PatchFilterConfig;
use recapture::triplets::{
    build_candidate_triplets, mine_with_scores, triplet_scores, write_triplets_jsonl, MiningConfig, MiningMode, PatchStore,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let manifest = common::small_corpus(dir.path(), 3);
    let store = PatchStore::from_manifest(&manifest, 112, &PatchFilterConfig::default())?;
    println!("{} images, {} patches, {} skipped", manifest.len(), store.len(), store.skipped().len());

    let candidates = build_candidate_triplets(&manifest, &store)?;
    println!("{} candidate triplets", candidates.len());
    for t in candidates.iter().take(3) {
        println!("  {}", t.id());
    }

    let model = common::small_model(3);
    let scores = triplet_scores(&candidates, &model);
    for mode in [MiningMode::SemiHard, MiningMode::Random, MiningMode::All] {
        let config = MiningConfig {
            mode,
            seed: 11,
            ..MiningConfig::default()
        };
        let picked = mine_with_scores(&candidates, &scores, &config);
        println!("{mode:?}: {} triplets", picked.len());
    }

    let path = dir.path().join("triplets.jsonl");
    write_triplets_jsonl(&candidates, &path)?;
    println!("candidates written to {}", path.display());
    Ok(())
}
