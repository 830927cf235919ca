//! Trains briefly, saves a checkpoint and exports one mean embedding per
//! image to CSV. Images without a discriminative patch go to the skip log.
//!
//! ```text
//! cargo run --release --example export_embeddings -- [OUT_DIR]
//! ```

mod common;

use std::path::PathBuf;

use recapture::corpus::PatchFilterConfig;
use recapture::experiment::export_embeddings;
use recapture::trainer::{save_checkpoint, train};
use recapture::triplets::{build_candidate_triplets, PatchStore};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/example_embeddings".into()));
    let manifest = common::small_corpus(&out.join("data"), 4);
    let filter = PatchFilterConfig::default();
    let store = PatchStore::from_manifest(&manifest, 112, &filter)?;
    let candidates = build_candidate_triplets(&manifest, &store)?;
    let (model, _) = train(common::small_model(4), &candidates, &[], &common::small_train_config(3, 4))?;
    save_checkpoint(&model, 4, 3, &out.join("checkpoint"))?;

    let csv = out.join("embeddings.csv");
    let report = export_embeddings(&out.join("checkpoint"), &out.join("data/manifest.jsonl"), 224, &filter, &csv)?;
    println!("{} rows of {} values written to {}", report.rows, model.embed_dim(), csv.display());
    println!("{} images skipped, listed in {}", report.skipped.len(), report.skip_log.display());
    let header = std::fs::read_to_string(&csv)?.lines().next().unwrap_or_default().split(',').count();
    println!("{header} columns per row");
    Ok(())
}
