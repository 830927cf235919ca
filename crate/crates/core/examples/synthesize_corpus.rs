//! Renders document templates and passes them through the capture,
//! print-and-scan and display-capture channel simulators.
//!
//! ```text
//! cargo run --release --example synthesize_corpus -- [OUT_DIR] [SEED]
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;

use recapture::channelsim::{generate_corpus, SynthSpec};
use recapture::corpus::{PatchFilterConfig, PatchStats};
use recapture::triplets::PatchStore;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "runs/example_corpus".into()));
    let seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(7);

    let spec = SynthSpec {
        master_seed: seed,
        low_resolution_fraction: 0.25,
        ..SynthSpec::default()
    };
    let manifest = generate_corpus(&spec, &out)?;
    println!("wrote {} images and manifest.jsonl to {}", manifest.len(), out.display());

    let mut per_channel: BTreeMap<String, usize> = BTreeMap::new();
    for row in &manifest.rows {
        *per_channel.entry(format!("{} / {:?}", row.channel, row.resolution_group)).or_default() += 1;
    }
    for (k, n) in per_channel {
        println!("  {k:<32} {n}");
    }

    let filter = PatchFilterConfig::default();
    let store = PatchStore::from_manifest(&manifest, 112, &filter)?;
    println!("{} discriminative patches at stride 112", store.len());

    let mut texture: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
    for patch in store.iter() {
        let stats = PatchStats::measure(&patch.pixels, filter.gradient_min);
        let t = texture.entry(patch.provenance.channel.to_string()).or_default();
        t.0 += stats.std;
        t.1 += stats.edge_fraction;
        t.2 += 1;
    }
    for (channel, (std, edges, n)) in texture {
        let n = n as f64;
        println!("  {channel:<16} mean std {:.1}, edge fraction {:.3}", std / n, edges / n);
    }
    Ok(())
}
