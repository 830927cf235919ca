//! Synthetic document templates and simulated acquisition channels.
//!
//! Three channels are modelled. A genuine *capture* is a single imaging pass
//! (noise, optical blur, tone curve, colour mixing). *Print-and-scan*
//! recapture halftones the captured image before passing it through the
//! capture chain again, which leaves periodic screening texture. *Display
//! capture* modulates the image with the pixel grid of a screen and applies a
//! stronger colour distortion with less noise.

mod filters;
mod halftone;
mod synth;
mod template;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Channel, CorpusError, DocumentImage, Label};
use crate::raster::Raster;
use crate::seed;

pub use halftone::bayer;
pub use synth::{generate_corpus, ChannelSet, SynthSpec};
pub use template::make_template;

/// Minimum max-abs deviation from the identity matrix for a display channel.
pub const DISPLAY_COLOR_EPSILON: f64 = 0.02;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("invalid channel parameters: {0}")]
    InvalidParams(String),
    #[error("template size {height}x{width} is below 224x224")]
    TooSmall { height: usize, width: usize },
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("failed to write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Halftone {
    None,
    /// Bayer screening; `cell` is the matrix side (2, 4 or 8).
    OrderedDither { cell: usize },
    /// Floyd-Steinberg diffusion with square dots of `cell` pixels.
    ErrorDiffusion { cell: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    pub halftone: Halftone,
    /// Gaussian point-spread sigma in pixels.
    pub blur_sigma: f64,
    /// Additive Gaussian noise sigma on the 0-255 scale.
    pub noise_sigma: f64,
    /// Output channel `c` is `sum_k color_matrix[c][k] * input[k]`.
    pub color_matrix: [[f64; 3]; 3],
    pub gamma: [f64; 3],
    /// Pixel-grid period of a display, in image pixels.
    #[serde(default)]
    pub grid_period: Option<usize>,
    /// Luminance attenuation on grid lines, in [0, 1).
    #[serde(default = "default_grid_depth")]
    pub grid_depth: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_grid_depth() -> f64 {
    0.25
}

const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl ChannelParams {
    /// Parameters that leave an image unchanged.
    pub fn identity() -> Self {
        Self {
            halftone: Halftone::None,
            blur_sigma: 0.0,
            noise_sigma: 0.0,
            color_matrix: IDENTITY,
            gamma: [1.0; 3],
            grid_period: None,
            grid_depth: default_grid_depth(),
            seed: 0,
        }
    }

    pub fn capture_default() -> Self {
        Self {
            blur_sigma: 0.7,
            noise_sigma: 3.0,
            ..Self::identity()
        }
    }

    pub fn print_scan_default() -> Self {
        let mut m = [[0.05; 3]; 3];
        (0..3).for_each(|i| m[i][i] = 1.0);
        Self {
            halftone: Halftone::OrderedDither { cell: 4 },
            blur_sigma: 1.0,
            noise_sigma: 4.0,
            color_matrix: m,
            gamma: [1.1; 3],
            ..Self::identity()
        }
    }

    pub fn display_capture_default() -> Self {
        Self {
            blur_sigma: 0.6,
            noise_sigma: 1.5,
            color_matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.05, 0.05, 1.1]],
            grid_period: Some(3),
            ..Self::identity()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn color_deviation(&self) -> f64 {
        let mut dev = 0f64;
        for r in 0..3 {
            for c in 0..3 {
                dev = dev.max((self.color_matrix[r][c] - IDENTITY[r][c]).abs());
            }
        }
        dev
    }

    /// Checks the generic invariants plus the ones specific to `channel`.
    pub fn validate(&self, channel: Channel) -> Result<(), ChannelError> {
        let bad = |m: String| Err(ChannelError::InvalidParams(m));
        if !(self.blur_sigma >= 0.0 && self.blur_sigma.is_finite()) {
            return bad(format!("blur_sigma must be >= 0, got {}", self.blur_sigma));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        for (i, row) in self.color_matrix.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if !(0.5..=1.5).contains(&s) {
                return bad(format!("color_matrix row {i} sums to {s}, outside [0.5, 1.5]"));
            }
        }
        if self.gamma.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return bad(format!("gamma must be positive, got {:?}", self.gamma));
        }
        if !(0.0..1.0).contains(&self.grid_depth) {
            return bad(format!("grid_depth must be in [0, 1), got {}", self.grid_depth));
        }
        match self.halftone {
            Halftone::OrderedDither { cell } if !(cell >= 2 && cell <= 16 && cell.is_power_of_two()) => {
                return bad(format!("ordered dither cell must be a power of two in 2..=16, got {cell}"));
            }
            Halftone::ErrorDiffusion { cell: 0 } => return bad("error diffusion cell must be >= 1".into()),
            _ => {}
        }
        if self.halftone != Halftone::None && self.grid_period.is_some() {
            return bad("grid_period is only valid without halftoning".into());
        }
        if self.grid_period == Some(0) || self.grid_period == Some(1) {
            return bad("grid_period must be at least 2".into());
        }
        match channel {
            Channel::Capture => {
                if self.halftone != Halftone::None {
                    return bad("halftoning is not part of a capture channel".into());
                }
            }
            Channel::PrintScan => {
                if self.halftone == Halftone::None {
                    return bad("print-and-scan recapture needs a halftone".into());
                }
            }
            Channel::DisplayCapture => {
                if self.halftone != Halftone::None {
                    return bad("display capture cannot halftone".into());
                }
                if self.grid_period.is_none() {
                    return bad("display capture needs a grid_period".into());
                }
                if self.color_deviation() < DISPLAY_COLOR_EPSILON {
                    return bad(format!(
                        "display capture needs a colour distortion of at least {DISPLAY_COLOR_EPSILON}"
                    ));
                }
            }
        }
        Ok(())
    }
}

fn stage_rng(params: &ChannelParams, stage: u64) -> rand_chacha::ChaCha8Rng {
    seed::rng(seed::mix(&[params.seed, stage]))
}

/// noise -> blur -> gamma -> colour mixing, on planar floats.
fn capture_chain(planes: &mut [Vec<f32>; 3], h: usize, w: usize, params: &ChannelParams) {
    let mut rng = stage_rng(params, 1);
    for plane in planes.iter_mut() {
        filters::add_gaussian_noise(plane, params.noise_sigma, &mut rng);
    }
    for plane in planes.iter_mut() {
        filters::gaussian_blur(plane, h, w, params.blur_sigma);
    }
    for (plane, g) in planes.iter_mut().zip(params.gamma) {
        filters::apply_gamma(plane, g);
    }
    if params.color_matrix != IDENTITY {
        filters::mix_channels(planes, &params.color_matrix);
    }
}

fn relabel(image: &DocumentImage, pixels: Raster, label: Label, channel: Channel, suffix: &str) -> DocumentImage {
    let mut provenance = image.provenance.clone();
    provenance.label = label;
    provenance.channel = channel;
    DocumentImage {
        id: format!("{}{suffix}", image.id),
        pixels,
        provenance,
    }
}

/// First imaging of a document.
pub fn simulate_capture(image: &DocumentImage, params: &ChannelParams) -> Result<DocumentImage, ChannelError> {
    params.validate(Channel::Capture)?;
    let (h, w) = (image.pixels.height(), image.pixels.width());
    let mut planes = image.pixels.to_planes();
    capture_chain(&mut planes, h, w, params);
    Ok(relabel(
        image,
        Raster::from_planes(h, w, &planes),
        Label::Genuine,
        Channel::Capture,
        "",
    ))
}

/// Print the image with a halftone screen and re-acquire it.
///
/// Recapturing an already recaptured image is allowed; each pass appends
/// `~ps` to the id.
pub fn simulate_print_scan_recapture(
    image: &DocumentImage,
    params: &ChannelParams,
) -> Result<DocumentImage, ChannelError> {
    params.validate(Channel::PrintScan)?;
    let (h, w) = (image.pixels.height(), image.pixels.width());
    let mut planes = image.pixels.to_planes();
    for plane in planes.iter_mut() {
        match params.halftone {
            Halftone::OrderedDither { cell } => halftone::ordered_dither(plane, h, w, cell),
            Halftone::ErrorDiffusion { cell } => halftone::error_diffusion(plane, h, w, cell),
            Halftone::None => unreachable!("validated above"),
        }
    }
    capture_chain(&mut planes, h, w, params);
    Ok(relabel(
        image,
        Raster::from_planes(h, w, &planes),
        Label::Recaptured,
        Channel::PrintScan,
        "~ps",
    ))
}

/// Show the image on a screen and photograph it.
pub fn simulate_display_capture_recapture(
    image: &DocumentImage,
    params: &ChannelParams,
) -> Result<DocumentImage, ChannelError> {
    params.validate(Channel::DisplayCapture)?;
    let (h, w) = (image.pixels.height(), image.pixels.width());
    let period = params.grid_period.expect("validated above");
    let dim = 1.0 - params.grid_depth as f32;
    let mut planes = image.pixels.to_planes();
    for plane in planes.iter_mut() {
        for r in 0..h {
            let on_row = r % period == period - 1;
            for c in 0..w {
                if on_row || c % period == period - 1 {
                    plane[r * w + c] *= dim;
                }
            }
        }
    }
    capture_chain(&mut planes, h, w, params);
    Ok(relabel(
        image,
        Raster::from_planes(h, w, &planes),
        Label::Recaptured,
        Channel::DisplayCapture,
        "~dc",
    ))
}
