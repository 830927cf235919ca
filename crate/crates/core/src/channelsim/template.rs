//! Procedural ID-card-like document templates.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::ChannelError;
use crate::corpus::{Channel, DeviceClass, DocumentImage, Label, Provenance, ResolutionGroup, PATCH_SIZE};
use crate::raster::Raster;
use crate::seed;

const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;

struct Canvas {
    h: usize,
    w: usize,
    planes: [Vec<f32>; 3],
}

impl Canvas {
    fn new(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            planes: [vec![0.0; h * w], vec![0.0; h * w], vec![0.0; h * w]],
        }
    }

    fn set(&mut self, r: usize, c: usize, rgb: [f32; 3]) {
        if r < self.h && c < self.w {
            for k in 0..3 {
                self.planes[k][r * self.w + c] = rgb[k];
            }
        }
    }

    fn blend(&mut self, r: usize, c: usize, rgb: [f32; 3], a: f32) {
        if r < self.h && c < self.w {
            for k in 0..3 {
                let v = &mut self.planes[k][r * self.w + c];
                *v = *v * (1.0 - a) + rgb[k] * a;
            }
        }
    }
}

fn color(rng: &mut ChaCha8Rng, lo: f32, hi: f32) -> [f32; 3] {
    [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)]
}

fn glyph_set(rng: &mut ChaCha8Rng, n: usize) -> Vec<[bool; GLYPH_W * GLYPH_H]> {
    (0..n)
        .map(|_| {
            let mut g = [false; GLYPH_W * GLYPH_H];
            // a vertical stem plus random strokes reads as text at small scale
            let stem = rng.random_range(0..GLYPH_W);
            for r in 0..GLYPH_H {
                g[r * GLYPH_W + stem] = rng.random_bool(0.85);
                for c in 0..GLYPH_W {
                    if rng.random_bool(0.3) {
                        g[r * GLYPH_W + c] = true;
                    }
                }
            }
            g
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn text_line(
    canvas: &mut Canvas,
    rng: &mut ChaCha8Rng,
    glyphs: &[[bool; GLYPH_W * GLYPH_H]],
    top: usize,
    left: usize,
    right: usize,
    scale: usize,
    ink: [f32; 3],
) {
    let advance = (GLYPH_W + 1) * scale;
    let mut x = left;
    while x + advance <= right {
        let word = rng.random_range(2..8);
        for _ in 0..word {
            if x + advance > right {
                break;
            }
            let g = &glyphs[rng.random_range(0..glyphs.len())];
            for r in 0..GLYPH_H * scale {
                for c in 0..GLYPH_W * scale {
                    if g[(r / scale) * GLYPH_W + c / scale] {
                        canvas.set(top + r, x + c, ink);
                    }
                }
            }
            x += advance;
        }
        x += advance;
    }
}

/// Renders a deterministic document for `(template_id, size, seed)`.
///
/// The layout has a coloured header band with title text, a textured photo
/// area, several lines of pseudo-text, a barcode strip and a seal, over a
/// guilloche background. Colours and layout depend on the template id, so two
/// templates rendered with the same seed differ almost everywhere.
pub fn make_template(template_id: &str, size: (usize, usize), seed: u64) -> Result<DocumentImage, ChannelError> {
    let (h, w) = size;
    if h < PATCH_SIZE || w < PATCH_SIZE {
        return Err(ChannelError::TooSmall { height: h, width: w });
    }
    let mut rng = seed::rng(seed::mix(&[seed::hash_str(template_id), seed]));
    let mut canvas = Canvas::new(h, w);
    let (hf, wf) = (h as f32, w as f32);

    // background with two interfering wave patterns
    let bg = color(&mut rng, 150.0, 225.0);
    let wave_amp = rng.random_range(10.0..22.0f32);
    let (f1, f2) = (rng.random_range(0.08..0.2f32), rng.random_range(0.05..0.15f32));
    let (a1, a2) = (rng.random_range(0.0..3.14f32), rng.random_range(0.0..3.14f32));
    let tint = color(&mut rng, -1.0, 1.0);
    for r in 0..h {
        for c in 0..w {
            let (x, y) = (c as f32, r as f32);
            let wave = (f1 * (x * a1.cos() + y * a1.sin())).sin() + (f2 * (x * a2.cos() - y * a2.sin())).sin();
            let rgb = [0, 1, 2].map(|k| bg[k] + wave_amp * wave * (0.6 + 0.4 * tint[k]) - 12.0 * y / hf);
            canvas.set(r, c, rgb);
        }
    }

    let glyphs = glyph_set(&mut rng, 24);
    let scale = if h >= 448 { 2 } else { 1 };

    // header band
    let band_h = (0.17 * hf) as usize;
    let band = color(&mut rng, 30.0, 150.0);
    for r in 0..band_h {
        for c in 0..w {
            let shade = 1.0 + 0.25 * (c as f32 / wf - 0.5);
            canvas.set(r, c, band.map(|v| v * shade));
        }
    }
    let title_ink = color(&mut rng, 200.0, 255.0);
    let title_top = band_h / 2 - GLYPH_H * scale / 2;
    text_line(&mut canvas, &mut rng, &glyphs, title_top, (0.08 * wf) as usize, (0.92 * wf) as usize, scale, title_ink);

    // photo area: smooth blobs plus an ellipse face
    let (pt, pb) = ((0.26 * hf) as usize, (0.80 * hf) as usize);
    let (pl, pr) = ((0.05 * wf) as usize, (0.36 * wf) as usize);
    let photo_bg = color(&mut rng, 60.0, 200.0);
    let blobs: Vec<([f32; 3], f32, f32, f32)> = (0..5)
        .map(|_| {
            (
                color(&mut rng, 20.0, 240.0),
                rng.random_range(pt as f32..pb as f32),
                rng.random_range(pl as f32..pr as f32),
                rng.random_range(6.0..20.0f32),
            )
        })
        .collect();
    let skin = [rng.random_range(170.0..230.0f32), rng.random_range(120.0..180.0f32), rng.random_range(90.0..150.0f32)];
    let (fy, fx) = ((pt as f32 + pb as f32) * 0.45, (pl as f32 + pr as f32) * 0.5);
    let (ry, rx) = ((pb - pt) as f32 * 0.25, (pr - pl) as f32 * 0.28);
    for r in pt..pb {
        for c in pl..pr {
            let mut rgb = photo_bg;
            for (col, by, bx, rad) in &blobs {
                let d2 = ((r as f32 - by).powi(2) + (c as f32 - bx).powi(2)) / (2.0 * rad * rad);
                let a = (-d2).exp();
                for k in 0..3 {
                    rgb[k] = rgb[k] * (1.0 - a) + col[k] * a;
                }
            }
            let e = ((r as f32 - fy) / ry).powi(2) + ((c as f32 - fx) / rx).powi(2);
            if e < 1.0 {
                let a = (1.0 - e).sqrt().min(1.0);
                for k in 0..3 {
                    rgb[k] = rgb[k] * (1.0 - a) + skin[k] * a;
                }
            }
            canvas.set(r, c, rgb);
        }
    }

    // text block
    let ink = color(&mut rng, 5.0, 70.0);
    let line_h = (GLYPH_H + 5) * scale;
    let (tl, tr) = ((0.41 * wf) as usize, (0.96 * wf) as usize);
    let mut top = (0.26 * hf) as usize;
    while top + line_h < (0.84 * hf) as usize {
        text_line(&mut canvas, &mut rng, &glyphs, top, tl, tr, scale, ink);
        top += line_h;
    }

    // barcode strip
    let (bt, bb) = ((0.86 * hf) as usize, (0.95 * hf) as usize);
    let mut c = (0.05 * wf) as usize;
    while c < (0.62 * wf) as usize {
        let bar = rng.random_range(1..4) * scale;
        if rng.random_bool(0.55) {
            for r in bt..bb {
                for k in 0..bar {
                    canvas.set(r, c + k, ink);
                }
            }
        }
        c += bar;
    }

    // seal
    let seal = color(&mut rng, 90.0, 220.0);
    let (sy, sx, srad) = (0.88 * hf, 0.82 * wf, 0.08 * hf.min(wf));
    for r in 0..h {
        for c in 0..w {
            let d = ((r as f32 - sy).powi(2) + (c as f32 - sx).powi(2)).sqrt();
            if (d - srad).abs() < 1.5 * scale as f32 || (d < srad * 0.6 && (r + c) % 3 == 0) {
                canvas.blend(r, c, seal, 0.8);
            }
        }
    }

    let pixels = Raster::from_planes(h, w, &canvas.planes);
    Ok(DocumentImage {
        id: template_id.to_string(),
        pixels,
        provenance: Provenance {
            template_id: template_id.to_string(),
            label: Label::Genuine,
            channel: Channel::Capture,
            device_class: DeviceClass::Synthetic,
            resolution_group: ResolutionGroup::High,
            dataset_id: "SYN".into(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{extract_patches, is_discriminative, PatchFilterConfig};

    #[test]
    fn deterministic() {
        let a = make_template("A", (256, 300), 5).unwrap();
        let b = make_template("A", (256, 300), 5).unwrap();
        assert_eq!(a.pixels.as_bytes(), b.pixels.as_bytes());
    }

    #[test]
    fn distinct_templates_differ() {
        let a = make_template("A", (256, 256), 5).unwrap();
        let b = make_template("B", (256, 256), 5).unwrap();
        let differing = a
            .pixels
            .as_bytes()
            .chunks_exact(3)
            .zip(b.pixels.as_bytes().chunks_exact(3))
            .filter(|(x, y)| x != y)
            .count();
        assert!(differing as f64 > 0.1 * (256 * 256) as f64, "{differing}");
    }

    #[test]
    fn minimum_size_and_too_small() {
        let t = make_template("A", (224, 224), 1).unwrap();
        t.validate().unwrap();
        assert_eq!(extract_patches(&t, 224).len(), 1);
        assert!(matches!(make_template("A", (223, 400), 1), Err(ChannelError::TooSmall { .. })));
    }

    #[test]
    fn patches_carry_text() {
        let t = make_template("A", (256, 256), 1).unwrap();
        let filter = PatchFilterConfig::default();
        assert!(extract_patches(&t, 112).iter().all(|p| is_discriminative(p, &filter)));
    }
}
