use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::ExperimentError;
use crate::corpus::{load_manifest, Manifest, PatchFilterConfig};
use crate::model::ForensicModel;
use crate::trainer::load_checkpoint;
use crate::triplets::PatchStore;

/// What an embedding export wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct ExportReport {
    pub rows: usize,
    /// Ids of images without a discriminative patch, also listed in the skip log.
    pub skipped: Vec<String>,
    pub skip_log: PathBuf,
}

/// Path of the skip log written next to `out`.
pub fn skip_log_path(out: &Path) -> PathBuf {
    out.with_extension("skipped.txt")
}

/// Writes one CSV row per image of `manifest`: id, template, label, channel
/// and the mean embedding of its discriminative patches. Images without such
/// patches are left out and listed in the skip log.
pub fn export_embeddings(
    checkpoint: &Path,
    manifest: &Path,
    stride: usize,
    filter: &PatchFilterConfig,
    out: &Path,
) -> Result<ExportReport, ExperimentError> {
    let (model, _) = load_checkpoint(checkpoint)?;
    let manifest = load_manifest(manifest)?;
    let store = PatchStore::from_manifest(&manifest, stride, filter)?;
    export_from_store(&model, &manifest, &store, out)
}

pub(super) fn export_from_store(
    model: &ForensicModel,
    manifest: &Manifest,
    store: &PatchStore,
    out: &Path,
) -> Result<ExportReport, ExperimentError> {
    let dim = model.embed_dim();
    let mut csv = String::from("id,template_id,label,channel");
    for i in 0..dim {
        write!(csv, ",e{i}").unwrap();
    }
    csv.push('\n');
    let mut skipped = Vec::new();
    let mut rows = 0;
    for row in &manifest.rows {
        let patches = store.patches_of(&row.id);
        if patches.is_empty() {
            skipped.push(row.id.clone());
            continue;
        }
        let embeddings = model.embed_unique(patches.iter().map(|p| &***p));
        let mut mean = vec![0.0; dim];
        for p in &patches {
            for (m, v) in mean.iter_mut().zip(&embeddings[&p.key()]) {
                *m += v;
            }
        }
        write!(csv, "{},{},{},{}", row.id, row.template_id, row.label, row.channel).unwrap();
        for m in mean {
            write!(csv, ",{}", m / patches.len() as f64).unwrap();
        }
        csv.push('\n');
        rows += 1;
    }
    std::fs::write(out, csv).map_err(|e| ExperimentError::io(out, e))?;
    let skip_log = skip_log_path(out);
    let log: String = skipped.iter().map(|id| format!("{id}\n")).collect();
    std::fs::write(&skip_log, log).map_err(|e| ExperimentError::io(&skip_log, e))?;
    Ok(ExportReport { rows, skipped, skip_log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channelsim::{generate_corpus, SynthSpec};
    use crate::embedder::EmbedderConfig;
    use crate::raster::Raster;
    use crate::simnet::SimNetConfig;
    use crate::trainer::save_checkpoint;

    #[test]
    fn blank_images_are_logged_and_left_out() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            n_templates: 1,
            n_genuine_per_template: 1,
            n_recaptured_per_template: 1,
            image_size: [224, 224],
            ..SynthSpec::default()
        };
        let data = dir.path().join("data");
        let mut manifest = generate_corpus(&spec, &data).unwrap();
        Raster::filled(224, 224, [200, 200, 200]).save_png(&data.join("blank.png")).unwrap();
        let mut blank = manifest.rows[0].clone();
        blank.id = "blank".into();
        blank.path = "blank.png".into();
        manifest.rows.push(blank);
        let manifest_path = data.join("with_blank.jsonl");
        manifest.write_jsonl(&manifest_path).unwrap();

        let embedder = EmbedderConfig {
            embed_dim: 8,
            hidden_dim: 8,
            channels: [2, 3, 3, 4],
            ..EmbedderConfig::default()
        };
        let model = ForensicModel::new(&embedder, &SimNetConfig { hidden_dim: 8, ..SimNetConfig::default() }).unwrap();
        let ckpt = dir.path().join("checkpoint");
        save_checkpoint(&model, 0, 0, &ckpt).unwrap();

        let out = dir.path().join("embeddings.csv");
        let report = export_embeddings(&ckpt, &manifest_path, 112, &PatchFilterConfig::default(), &out).unwrap();
        assert_eq!(report.rows, 2);
        assert_eq!(report.skipped, vec!["blank".to_string()]);
        assert_eq!(std::fs::read_to_string(&report.skip_log).unwrap(), "blank\n");
        let csv = std::fs::read_to_string(&out).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().all(|l| !l.starts_with("blank,")));
    }
}
