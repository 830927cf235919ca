//! Presentation-attack-detection metrics on a scored sample set: APCER and
//! BPCER at a threshold, EER, AUC, APCER at fixed BPCER and the ROC curve.
//!
//! ```text
//! cargo run --release --example detection_metrics -- [OUT_DIR]
//! ```

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recapture::metrics::{apcer_at_bpcer, apcer_bpcer, auc, eer, roc_points, samples, write_roc_csv};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/example_metrics".into()));
    std::fs::create_dir_all(&out)?;

    let worked = samples(&[0.8, 0.7, 0.9, 0.6], &[0.5, 0.65, 0.3, 0.2]);
    let (apcer, bpcer) = apcer_bpcer(&worked, 0.6)?;
    println!("threshold 0.6: APCER {apcer}, BPCER {bpcer}");

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let bona_fide: Vec<f64> = (0..200).map(|_| (rng.random::<f64>() * 0.6 + 0.4).min(1.0)).collect();
    let attack: Vec<f64> = (0..200).map(|_| rng.random::<f64>() * 0.6).collect();
    let set = samples(&bona_fide, &attack);
    let (value, threshold) = eer(&set)?;
    println!("EER {value:.4} at threshold {threshold:.4}");
    println!("AUC {:.4}", auc(&set)?);
    for target in [0.01, 0.05] {
        let (apcer, threshold) = apcer_at_bpcer(&set, target)?;
        println!("APCER {apcer:.4} at BPCER {target} (threshold {threshold:.4})");
    }
    let roc = roc_points(&set)?;
    let path = out.join("roc.csv");
    write_roc_csv(&[("example".into(), roc)], &path)?;
    println!("ROC points written to {}", path.display());
    Ok(())
}
