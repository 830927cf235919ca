//! Evaluates the forensic loss and its gradients on a few score pairs.
//!
//! ```text
//! cargo run --release --example forensic_loss
//! ```

use recapture::loss::{forensic_loss, forensic_loss_gradients, hinge_argument, LossConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = LossConfig::default();
    println!("gamma {}, alpha {}, scaled margin {:.7}", config.gamma, config.alpha, config.scaled_margin());
    println!("{:>6} {:>6} {:>10} {:>10} {:>10} {:>10} {:>10}", "s_p", "s_n", "ts", "ns", "fl", "d/ds_p", "d/ds_n");
    let pairs = [(1.0, 0.0), (0.9, 0.1), (0.6, 0.5), (0.5, 0.5), (0.2, 0.8), (0.0, 1.0)];
    for (sp, sn) in pairs {
        let b = forensic_loss(&[sp], &[sn], &config)?;
        let g = forensic_loss_gradients(&[sp], &[sn], &config)?;
        let (ts, ns) = b.per_triplet[0];
        println!(
            "{sp:>6.2} {sn:>6.2} {ts:>10.7} {ns:>10.7} {:>10.7} {:>10.5} {:>10.5}",
            b.l_fl, g.d_positive[0], g.d_negative[0]
        );
    }

    let sp: Vec<f64> = (0..5).map(|i| 0.5 + 0.1 * i as f64).collect();
    let sn: Vec<f64> = (0..5).map(|i| 0.45 - 0.1 * i as f64).collect();
    let batch = forensic_loss(&sp, &sn, &config)?;
    let active = sp.iter().zip(&sn).filter(|(p, n)| hinge_argument(**p, **n, config.gamma) > 0.0).count();
    println!("batch of {}: l_ts {:.6}, l_ns {:.6}, l_fl {:.6}, {active} active hinges", sp.len(), batch.l_ts, batch.l_ns, batch.l_fl);
    Ok(())
}
