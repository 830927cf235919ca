//! Adapts a trained model to an unseen template family with a handful of
//! support triplets, then compares scores before and after fine-tuning.
//!
//! ```text
//! cargo run --release --example few_shot_transfer
//! ```

mod common;

use recapture::channelsim::generate_corpus;
use recapture::corpus::{Label, PatchFilterConfig};
use recapture::experiment::{select_support_triplets, split_support, CorpusConfig, FinetuneConfig};
use recapture::trainer::{finetune, train, TrainConfig};
use recapture::triplets::{build_candidate_triplets, triplet_scores, PatchStore};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let filter = PatchFilterConfig::default();

    let source = common::small_corpus(&dir.path().join("source"), 21);
    let store = PatchStore::from_manifest(&source, 112, &filter)?;
    let candidates = build_candidate_triplets(&source, &store)?;
    let (base, _) = train(common::small_model(21), &candidates, &[], &common::small_train_config(5, 21))?;

    let target_spec = CorpusConfig {
        image_size: [224, 224],
        ..CorpusConfig::transfer_target()
    }
    .synth_spec(22, 22);
    let target = generate_corpus(&target_spec, &dir.path().join("target"))?;
    let ft = FinetuneConfig::default();
    let (support, test) = split_support(&target, &ft, 23);
    println!("target family: {} support images, {} test images", support.len(), test.len());

    let target_store = PatchStore::from_manifest(&target, 112, &filter)?;
    let support_candidates = build_candidate_triplets(&support, &target_store)?;
    let support_triplets = select_support_triplets(&support_candidates, &ft, 24)?;
    println!("{} support triplets", support_triplets.len());

    let config = TrainConfig {
        epochs: ft.epochs,
        learning_rate: ft.learning_rate,
        ..common::small_train_config(ft.epochs, 25)
    };
    let (tuned, history) = finetune(&base, &support_triplets, &config)?;
    println!("fine-tuning l_fl {:.4} -> {:.4}", history.records[0].l_fl, history.records.last().unwrap().l_fl);

    let held_out = build_candidate_triplets(&test, &target_store)?;
    for (name, model) in [("base", &base), ("fine-tuned", &tuned)] {
        let scores = triplet_scores(&held_out, model);
        let n = scores.len() as f64;
        let sp = scores.iter().map(|s| s.0).sum::<f64>() / n;
        let sn = scores.iter().map(|s| s.1).sum::<f64>() / n;
        let ordered = scores.iter().filter(|s| s.0 > s.1).count();
        println!("{name:<10} held-out mean S(r,p) {sp:.4}, mean S(r,n) {sn:.4}, {ordered}/{} ordered", scores.len());
    }
    let genuine = test.rows.iter().filter(|r| r.label == Label::Genuine).count();
    println!("{genuine} genuine and {} recaptured test images", test.len() - genuine);
    Ok(())
}
