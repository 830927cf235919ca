//! Document-image collections: manifests, deterministic splits and patch extraction.

mod manifest;
mod patches;
mod split;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{Raster, RasterError};

pub use manifest::{load_manifest, Manifest, ManifestRow};
pub use patches::{extract_patches, is_discriminative, patch_origins, Patch, PatchFilterConfig, PatchKey, PatchStats};
pub use split::{split_corpus, Split, SplitSpec, StratumField};

/// Side length of the square patches fed to the network.
pub const PATCH_SIZE: usize = 224;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("manifest {path} not found")]
    MissingManifest { path: String },
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("duplicate id {id:?} at rows {first} and {second}")]
    DuplicateId { id: String, first: usize, second: usize },
    #[error("manifest row {row}: image path {path} does not exist")]
    UnresolvablePath { row: usize, path: String },
    #[error("manifest row {row}: {message}")]
    Invalid { row: usize, message: String },
    #[error("image {id}: {message}")]
    InvalidImage { id: String, message: String },
    #[error("cannot split an empty manifest")]
    EmptyManifest,
    #[error("invalid split spec: {0}")]
    InvalidSplit(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Genuine,
    Recaptured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Capture,
    PrintScan,
    DisplayCapture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceClass {
    Scanner,
    Phone,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolutionGroup {
    Low,
    High,
}

impl DeviceClass {
    /// Scanners and phones have a fixed group; synthetic devices declare theirs.
    pub fn implied_group(self) -> Option<ResolutionGroup> {
        match self {
            DeviceClass::Scanner => Some(ResolutionGroup::High),
            DeviceClass::Phone => Some(ResolutionGroup::Low),
            DeviceClass::Synthetic => None,
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::Genuine => "genuine",
            Label::Recaptured => "recaptured",
        })
    }
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Channel::Capture => "capture",
            Channel::PrintScan => "print_scan",
            Channel::DisplayCapture => "display_capture",
        })
    }
}

/// Provenance labels shared by images and the patches cut from them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub template_id: String,
    pub label: Label,
    pub channel: Channel,
    pub device_class: DeviceClass,
    pub resolution_group: ResolutionGroup,
    pub dataset_id: String,
}

impl Provenance {
    pub fn check(&self) -> Result<(), String> {
        if self.label == Label::Genuine && self.channel != Channel::Capture {
            return Err(format!(
                "genuine image must come from the capture channel, got {}",
                self.channel
            ));
        }
        if self.label == Label::Recaptured && self.channel == Channel::Capture {
            return Err("recaptured image cannot come from the capture channel".into());
        }
        if let Some(group) = self.device_class.implied_group() {
            if group != self.resolution_group {
                return Err(format!(
                    "device class {:?} implies resolution group {:?}, got {:?}",
                    self.device_class, group, self.resolution_group
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocumentImage {
    pub id: String,
    pub pixels: Raster,
    pub provenance: Provenance,
}

impl DocumentImage {
    pub fn new(id: impl Into<String>, pixels: Raster, provenance: Provenance) -> Result<Self, CorpusError> {
        let image = Self {
            id: id.into(),
            pixels,
            provenance,
        };
        image.validate()?;
        Ok(image)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |message: String| CorpusError::InvalidImage {
            id: self.id.clone(),
            message,
        };
        if self.pixels.height() < PATCH_SIZE || self.pixels.width() < PATCH_SIZE {
            return Err(invalid(format!(
                "size {}x{} is below the {PATCH_SIZE}x{PATCH_SIZE} minimum",
                self.pixels.height(),
                self.pixels.width()
            )));
        }
        self.provenance.check().map_err(invalid)
    }
}
