use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    make_template, simulate_capture, simulate_display_capture_recapture, simulate_print_scan_recapture,
    ChannelError, ChannelParams,
};
use crate::corpus::{Channel, DeviceClass, Label, Manifest, ManifestRow, ResolutionGroup};
use crate::seed;

/// Channel parameters used by the generator. Seeds inside are ignored and
/// replaced by per-image seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSet {
    pub capture: ChannelParams,
    pub print_scan: ChannelParams,
    pub display_capture: ChannelParams,
}

impl Default for ChannelSet {
    fn default() -> Self {
        Self {
            capture: ChannelParams::capture_default(),
            print_scan: ChannelParams::print_scan_default(),
            display_capture: ChannelParams::display_capture_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_templates: usize,
    pub n_genuine_per_template: usize,
    pub n_recaptured_per_template: usize,
    /// Proportions of (print_scan, display_capture) among recaptured images.
    pub channel_mix: [f64; 2],
    /// (height, width)
    pub image_size: [usize; 2],
    pub master_seed: u64,
    /// Seed for template layouts; defaults to `master_seed`. Two corpora that
    /// share it contain the same templates with independent captures.
    #[serde(default)]
    pub template_seed: Option<u64>,
    #[serde(default = "default_prefix")]
    pub template_prefix: String,
    #[serde(default = "default_dataset")]
    pub dataset_id: String,
    /// Fraction of each image group declared as low resolution.
    #[serde(default)]
    pub low_resolution_fraction: f64,
    #[serde(default)]
    pub channels: ChannelSet,
}

fn default_prefix() -> String {
    "T".into()
}

fn default_dataset() -> String {
    "D1".into()
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_templates: 6,
            n_genuine_per_template: 4,
            n_recaptured_per_template: 8,
            channel_mix: [0.5, 0.5],
            image_size: [256, 256],
            master_seed: 0,
            template_seed: None,
            template_prefix: default_prefix(),
            dataset_id: default_dataset(),
            low_resolution_fraction: 0.0,
            channels: ChannelSet::default(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let bad = |m: String| Err(ChannelError::InvalidSpec(m));
        if self.n_templates == 0 || self.n_genuine_per_template == 0 || self.n_recaptured_per_template == 0 {
            return bad("template and per-template image counts must be >= 1".into());
        }
        if self.channel_mix.iter().any(|p| !(*p >= 0.0)) || (self.channel_mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("channel_mix must be non-negative and sum to 1, got {:?}", self.channel_mix));
        }
        if !(0.0..=1.0).contains(&self.low_resolution_fraction) {
            return bad("low_resolution_fraction must be in [0, 1]".into());
        }
        if self.image_size.iter().any(|&s| s < crate::corpus::PATCH_SIZE) {
            return Err(ChannelError::TooSmall {
                height: self.image_size[0],
                width: self.image_size[1],
            });
        }
        self.channels.capture.validate(Channel::Capture)?;
        self.channels.print_scan.validate(Channel::PrintScan)?;
        self.channels.display_capture.validate(Channel::DisplayCapture)?;
        Ok(())
    }

    pub fn total_images(&self) -> usize {
        self.n_templates * (self.n_genuine_per_template + self.n_recaptured_per_template)
    }

    /// Number of print-and-scan images per template; the rest are display captures.
    pub fn print_scan_count(&self) -> usize {
        let q = self.n_recaptured_per_template as f64 * self.channel_mix[0];
        (q + 0.5 - 1e-9).floor() as usize
    }

    pub fn template_id(&self, index: usize) -> String {
        format!("{}{index}", self.template_prefix)
    }

    /// Seed of image `image` of template `template`.
    pub fn image_seed(&self, template: usize, image: usize) -> u64 {
        seed::mix(&[self.master_seed, template as u64, image as u64])
    }
}

/// The last `round(n * fraction)` members of a group are low resolution.
fn is_low(position: usize, group_size: usize, fraction: f64) -> bool {
    let low = (group_size as f64 * fraction + 0.5 - 1e-9).floor() as usize;
    position >= group_size - low.min(group_size)
}

/// Writes PNG images under `out_dir/images/` and `out_dir/manifest.jsonl`.
///
/// Genuine image `i` of a template is a capture of the rendered template.
/// Recaptured images are a capture that is then printed and scanned or shown
/// on a display and photographed.
pub fn generate_corpus(spec: &SynthSpec, out_dir: &Path) -> Result<Manifest, ChannelError> {
    spec.validate()?;
    let io = |p: &Path| {
        let path = p.display().to_string();
        move |source| ChannelError::Io { path, source }
    };
    let images_dir = out_dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(io(&images_dir))?;

    let size = (spec.image_size[0], spec.image_size[1]);
    let template_seed = spec.template_seed.unwrap_or(spec.master_seed);
    let n_gen = spec.n_genuine_per_template;
    let n_print = spec.print_scan_count();
    let n_display = spec.n_recaptured_per_template - n_print;
    let mut rows = Vec::with_capacity(spec.total_images());

    for t in 0..spec.n_templates {
        let template_id = spec.template_id(t);
        let rendered = make_template(&template_id, size, template_seed)?;
        for i in 0..n_gen + spec.n_recaptured_per_template {
            let s = spec.image_seed(t, i);
            let captured = simulate_capture(&rendered, &spec.channels.capture.clone().with_seed(seed::mix(&[s, 1])))?;
            let (mut image, channel, pos, group) = if i < n_gen {
                (captured, Channel::Capture, i, n_gen)
            } else if i < n_gen + n_print {
                let p = spec.channels.print_scan.clone().with_seed(seed::mix(&[s, 2]));
                (simulate_print_scan_recapture(&captured, &p)?, Channel::PrintScan, i - n_gen, n_print)
            } else {
                let p = spec.channels.display_capture.clone().with_seed(seed::mix(&[s, 3]));
                let pos = i - n_gen - n_print;
                (simulate_display_capture_recapture(&captured, &p)?, Channel::DisplayCapture, pos, n_display)
            };
            image.id = format!("{}-{template_id}-{i:03}", spec.dataset_id);
            let resolution_group = if is_low(pos, group, spec.low_resolution_fraction) {
                ResolutionGroup::Low
            } else {
                ResolutionGroup::High
            };
            let rel = format!("images/{}.png", image.id);
            let path = out_dir.join(&rel);
            image.pixels.save_png(&path).map_err(crate::corpus::CorpusError::from)?;
            rows.push(ManifestRow {
                path: rel,
                id: image.id,
                template_id: template_id.clone(),
                label: if channel == Channel::Capture { Label::Genuine } else { Label::Recaptured },
                channel,
                device_class: DeviceClass::Synthetic,
                resolution_group,
                dataset_id: spec.dataset_id.clone(),
            });
        }
    }

    let manifest = Manifest::new(rows, out_dir);
    let manifest_path = out_dir.join("manifest.jsonl");
    manifest.write_jsonl(&manifest_path)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            n_templates: 2,
            n_genuine_per_template: 3,
            n_recaptured_per_template: 6,
            image_size: [224, 224],
            master_seed: 42,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn counts_and_channel_mix() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_corpus(&small(), dir.path()).unwrap();
        assert_eq!(m.len(), 18);
        let reloaded = crate::corpus::load_manifest(&dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(reloaded.rows, m.rows);
        for t in ["T0", "T1"] {
            let count = |c: Channel| m.rows.iter().filter(|r| r.template_id == t && r.channel == c).count();
            assert_eq!(count(Channel::Capture), 3);
            assert_eq!(count(Channel::PrintScan), 3);
            assert_eq!(count(Channel::DisplayCapture), 3);
        }
    }

    #[test]
    fn byte_identical_reruns() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ma = generate_corpus(&small(), a.path()).unwrap();
        generate_corpus(&small(), b.path()).unwrap();
        for row in &ma.rows {
            let x = std::fs::read(a.path().join(&row.path)).unwrap();
            let y = std::fs::read(b.path().join(&row.path)).unwrap();
            assert_eq!(x, y, "{}", row.id);
        }
        assert_eq!(
            std::fs::read(a.path().join("manifest.jsonl")).unwrap(),
            std::fs::read(b.path().join("manifest.jsonl")).unwrap()
        );
    }

    #[test]
    fn low_resolution_assignment() {
        assert!(!is_low(0, 4, 0.5));
        assert!(!is_low(1, 4, 0.5));
        assert!(is_low(2, 4, 0.5));
        assert!(is_low(3, 4, 0.5));
        assert!(!is_low(3, 4, 0.0));
        assert!(is_low(0, 1, 1.0));
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = small();
        s.channel_mix = [0.7, 0.7];
        assert!(s.validate().is_err());
        let mut s = small();
        s.n_recaptured_per_template = 0;
        assert!(s.validate().is_err());
        let mut s = small();
        s.image_size = [200, 300];
        assert!(matches!(s.validate(), Err(ChannelError::TooSmall { .. })));
    }
}
