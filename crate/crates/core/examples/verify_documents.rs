//! Verifies questioned documents against genuine references. Seen templates
//! use a calibrated threshold; a template with a few labelled support samples
//! uses the few-shot midpoint rule.
//!
//! ```text
//! cargo run --release --example verify_documents
//! ```

mod common;

use std::sync::Arc;

use recapture::corpus::{split_corpus, Label, ManifestRow, Patch, PatchFilterConfig, SplitSpec};
use recapture::trainer::train;
use recapture::triplets::{build_candidate_triplets, PatchStore};
use recapture::verifier::{calibrate_threshold, score_questioned, verify, SupportEntry, SupportSet, ThresholdPolicy, VerifyMode};

fn patches(store: &PatchStore, row: &ManifestRow) -> Vec<Arc<Patch>> {
    store.patches_of(&row.id).into_iter().cloned().collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let manifest = common::small_corpus(dir.path(), 9);
    let split = split_corpus(&manifest, &SplitSpec { seed: 9, ..SplitSpec::default() })?;
    let store = PatchStore::from_manifest(&manifest, 112, &PatchFilterConfig::default())?;
    let candidates = build_candidate_triplets(&split.train, &store)?;
    let (model, _) = train(common::small_model(9), &candidates, &[], &common::small_train_config(5, 9))?;

    let template = &manifest.template_ids()[0];
    let of = |label: Label| -> Vec<&ManifestRow> {
        manifest.rows.iter().filter(|r| &r.template_id == template && r.label == label).collect()
    };
    let (genuine, recaptured) = (of(Label::Genuine), of(Label::Recaptured));

    let references = SupportSet::new(vec![SupportEntry::reference_only(patches(&store, genuine[0]))])?;
    let mut calib_g = Vec::new();
    let mut calib_a = Vec::new();
    for row in genuine.iter().skip(1) {
        calib_g.push(score_questioned(&model, &patches(&store, row), &references)?.score);
    }
    for row in &recaptured {
        calib_a.push(score_questioned(&model, &patches(&store, row), &references)?.score);
    }
    let calibration = calibrate_threshold(&calib_g, &calib_a, ThresholdPolicy::MaxAccuracy)?;
    println!("template {template}: max-accuracy threshold {:.4}", calibration.threshold);
    for row in genuine.iter().skip(1).chain(&recaptured) {
        let d = verify(&model, &patches(&store, row), &references, Some(calibration.threshold), VerifyMode::SeenTemplate)?;
        println!("  {:<14} {:<10} score {:.4} -> {:?}", row.id, row.label.to_string(), d.score, d.verdict);
    }

    let few_shot = SupportSet::new(vec![SupportEntry {
        reference: patches(&store, genuine[0]),
        positive: patches(&store, genuine[1]),
        negative: patches(&store, recaptured[0]),
    }])?;
    println!("few-shot support: reference {}, positive {}, negative {}", genuine[0].id, genuine[1].id, recaptured[0].id);
    for row in genuine.iter().skip(2).chain(recaptured.iter().skip(1)) {
        let d = verify(&model, &patches(&store, row), &few_shot, None, VerifyMode::FewShot)?;
        println!("  {:<14} {:<10} score {:.4} midpoint {:.4} -> {:?}", row.id, row.label.to_string(), d.score, d.threshold, d.verdict);
    }
    Ok(())
}
