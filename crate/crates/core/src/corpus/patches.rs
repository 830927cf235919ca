use serde::{Deserialize, Serialize};

use super::{DocumentImage, Provenance, PATCH_SIZE};
use crate::raster::Raster;

/// Identifies a patch by its source image and top-left offset.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PatchKey {
    pub source_id: String,
    pub row: usize,
    pub col: usize,
}

impl std::fmt::Display for PatchKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}@{},{}", self.source_id, self.row, self.col)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub source_id: String,
    /// (row, col) of the top-left pixel in the source image.
    pub origin: (usize, usize),
    pub pixels: Raster,
    pub provenance: Provenance,
}

impl Patch {
    pub fn key(&self) -> PatchKey {
        PatchKey {
            source_id: self.source_id.clone(),
            row: self.origin.0,
            col: self.origin.1,
        }
    }
}

/// Window offsets along one axis: a regular grid whose last window is clamped
/// to the image edge.
fn axis_origins(extent: usize, stride: usize) -> Vec<usize> {
    let span = extent - PATCH_SIZE;
    let count = span.div_ceil(stride) + 1;
    (0..count).map(|k| (k * stride).min(span)).collect()
}

/// Top-left corners of the sliding windows over a `height x width` image,
/// row-major.
///
/// Panics if `stride` is zero or the image is smaller than a patch.
pub fn patch_origins(height: usize, width: usize, stride: usize) -> Vec<(usize, usize)> {
    assert!(stride > 0, "patch stride must be positive");
    assert!(height >= PATCH_SIZE && width >= PATCH_SIZE, "image smaller than a patch");
    let cols = axis_origins(width, stride);
    axis_origins(height, stride)
        .into_iter()
        .flat_map(|r| cols.iter().map(move |&c| (r, c)))
        .collect()
}

/// Sliding-window `PATCH_SIZE` patches in row-major order.
///
/// Panics if `stride` is zero.
pub fn extract_patches(image: &DocumentImage, stride: usize) -> Vec<Patch> {
    patch_origins(image.pixels.height(), image.pixels.width(), stride)
        .into_iter()
        .map(|(r, c)| Patch {
            source_id: image.id.clone(),
            origin: (r, c),
            pixels: image.pixels.crop(r, c, PATCH_SIZE, PATCH_SIZE),
            provenance: image.provenance.clone(),
        })
        .collect()
}

/// Thresholds that separate informative patches from flat background.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatchFilterConfig {
    /// Minimum grayscale standard deviation (0-255 scale).
    pub std_min: f64,
    /// Minimum fraction of pixels whose gradient magnitude exceeds `gradient_min`.
    pub edge_fraction_min: f64,
    pub gradient_min: f64,
}

impl Default for PatchFilterConfig {
    fn default() -> Self {
        Self {
            std_min: 8.0,
            edge_fraction_min: 0.02,
            gradient_min: 16.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchStats {
    pub std: f64,
    pub edge_fraction: f64,
}

impl PatchStats {
    /// Gradients are forward differences over the `(H-1)x(W-1)` interior.
    pub fn measure(pixels: &Raster, gradient_min: f64) -> PatchStats {
        let (h, w) = (pixels.height(), pixels.width());
        let gray = pixels.grayscale();
        let n = gray.len() as f64;
        let mean = gray.iter().sum::<f64>() / n;
        let var = gray.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / n;
        let mut edges = 0usize;
        let thresh = gradient_min * gradient_min;
        for r in 0..h - 1 {
            for c in 0..w - 1 {
                let g = gray[r * w + c];
                let dx = gray[r * w + c + 1] - g;
                let dy = gray[(r + 1) * w + c] - g;
                if dx * dx + dy * dy > thresh {
                    edges += 1;
                }
            }
        }
        PatchStats {
            std: var.sqrt(),
            edge_fraction: edges as f64 / ((h - 1) * (w - 1)) as f64,
        }
    }
}

pub fn is_discriminative(patch: &Patch, filter: &PatchFilterConfig) -> bool {
    let stats = PatchStats::measure(&patch.pixels, filter.gradient_min);
    stats.std >= filter.std_min && stats.edge_fraction >= filter.edge_fraction_min
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Channel, DeviceClass, Label, ResolutionGroup};
    use proptest::prelude::*;
    use rand::Rng;

    fn provenance() -> Provenance {
        Provenance {
            template_id: "T0".into(),
            label: Label::Genuine,
            channel: Channel::Capture,
            device_class: DeviceClass::Synthetic,
            resolution_group: ResolutionGroup::High,
            dataset_id: "D1".into(),
        }
    }

    fn image(h: usize, w: usize) -> DocumentImage {
        DocumentImage::new("img", Raster::filled(h, w, [1, 2, 3]), provenance()).unwrap()
    }

    fn patch(pixels: Raster) -> Patch {
        Patch {
            source_id: "p".into(),
            origin: (0, 0),
            pixels,
            provenance: provenance(),
        }
    }

    fn origins(h: usize, w: usize, stride: usize) -> Vec<(usize, usize)> {
        extract_patches(&image(h, w), stride).iter().map(|p| p.origin).collect()
    }

    #[test]
    fn single_window() {
        assert_eq!(origins(224, 224, 224), vec![(0, 0)]);
    }

    #[test]
    fn exact_grid() {
        assert_eq!(origins(448, 448, 224), vec![(0, 0), (0, 224), (224, 0), (224, 224)]);
    }

    #[test]
    fn clamped_grid() {
        assert_eq!(origins(300, 300, 224), vec![(0, 0), (0, 76), (76, 0), (76, 76)]);
    }

    #[test]
    fn patch_copies_pixels_and_provenance() {
        let mut raster = Raster::filled(300, 260, [0, 0, 0]);
        raster.put(76 + 5, 36 + 7, [9, 9, 9]);
        let img = DocumentImage::new("x", raster, provenance()).unwrap();
        let patches = extract_patches(&img, 224);
        let last = patches.last().unwrap();
        assert_eq!(last.origin, (76, 36));
        assert_eq!(last.pixels.get(5, 7), [9, 9, 9]);
        assert_eq!(last.provenance, img.provenance);
        assert_eq!(last.pixels.height(), PATCH_SIZE);
        assert_eq!(last.pixels.width(), PATCH_SIZE);
    }

    #[test]
    fn constant_patch_rejected() {
        let p = patch(Raster::filled(224, 224, [128, 128, 128]));
        assert!(!is_discriminative(&p, &PatchFilterConfig::default()));
    }

    #[test]
    fn checkerboard_accepted() {
        let mut r = Raster::new(224, 224);
        for i in 0..224 {
            for j in 0..224 {
                let v = if (i + j) % 2 == 0 { 0 } else { 255 };
                r.put(i, j, [v, v, v]);
            }
        }
        assert!(is_discriminative(&patch(r), &PatchFilterConfig::default()));
    }

    #[test]
    fn noise_eventually_flips_constant_patch() {
        let filter = PatchFilterConfig::default();
        let mut rng = crate::seed::rng(3);
        let mut flipped_at = None;
        for amp in [0u8, 2, 4, 8, 16, 32, 64] {
            let mut r = Raster::filled(224, 224, [128, 128, 128]);
            for b in r.as_bytes_mut().chunks_exact_mut(3) {
                let d = if amp == 0 { 0 } else { rng.random_range(0..=2 * amp as i32) - amp as i32 };
                let v = (128 + d) as u8;
                b.copy_from_slice(&[v, v, v]);
            }
            if is_discriminative(&patch(r), &filter) {
                flipped_at.get_or_insert(amp);
            } else {
                assert!(flipped_at.is_none(), "filter not monotone at amplitude {amp}");
            }
        }
        assert!(flipped_at.is_some());
    }

    proptest! {
        #[test]
        fn patch_count_matches_clamped_grid(h in 224usize..700, w in 224usize..700, stride in 1usize..300) {
            let expected = ((h - 224) as f64 / stride as f64 + 1.0).ceil() as usize
                * ((w - 224) as f64 / stride as f64 + 1.0).ceil() as usize;
            let got = patch_origins(h, w, stride);
            prop_assert_eq!(got.len(), expected);
            let mut sorted = got.clone();
            sorted.sort();
            prop_assert_eq!(&sorted, &got);
            for (r, c) in got {
                prop_assert!(r + 224 <= h && c + 224 <= w);
            }
        }

        #[test]
        fn gray_patch_filter_ignores_channel_order(seed in any::<u64>(), perm in 0usize..6) {
            let mut rng = crate::seed::rng(seed);
            let mut r = Raster::new(224, 224);
            for b in r.as_bytes_mut().chunks_exact_mut(3) {
                let v: u8 = rng.random();
                b.copy_from_slice(&[v, v, v]);
            }
            let orders = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let mut permuted = r.clone();
            for (dst, src) in permuted.as_bytes_mut().chunks_exact_mut(3).zip(r.as_bytes().chunks_exact(3)) {
                for k in 0..3 {
                    dst[k] = src[orders[perm][k]];
                }
            }
            let f = PatchFilterConfig::default();
            prop_assert_eq!(is_discriminative(&patch(r), &f), is_discriminative(&patch(permuted), &f));
        }
    }
}
