use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::channelsim::{ChannelParams, ChannelSet, Halftone, SynthSpec};
use crate::corpus::{PatchFilterConfig, SplitSpec, StratumField};
use crate::embedder::EmbedderConfig;
use crate::seed::{self, Stream};
use crate::simnet::SimNetConfig;
use crate::trainer::TrainConfig;
use crate::triplets::MiningMode;
use crate::verifier::ThresholdPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Train and test on an 8:1:1 split of one corpus.
    Intra,
    /// Train on the source corpus, test on a target corpus that shares its
    /// templates but not its recapture channels.
    Cross,
    /// Train on the source corpus, then fine-tune on a handful of support
    /// triplets from an unseen template family with shifted channels.
    FineTuneTransfer,
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Protocol::Intra => "intra",
            Protocol::Cross => "cross",
            Protocol::FineTuneTransfer => "fine_tune_transfer",
        })
    }
}

/// Corpus generation parameters without seeds; seeds come from the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub n_templates: usize,
    pub n_genuine_per_template: usize,
    pub n_recaptured_per_template: usize,
    /// Proportions of (print_scan, display_capture) among recaptured images.
    pub channel_mix: [f64; 2],
    /// (height, width)
    pub image_size: [usize; 2],
    pub low_resolution_fraction: f64,
    pub template_prefix: String,
    pub dataset_id: String,
    pub channels: ChannelSet,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        let s = SynthSpec::default();
        Self {
            n_templates: s.n_templates,
            n_genuine_per_template: s.n_genuine_per_template,
            n_recaptured_per_template: s.n_recaptured_per_template,
            channel_mix: s.channel_mix,
            image_size: s.image_size,
            low_resolution_fraction: s.low_resolution_fraction,
            template_prefix: s.template_prefix,
            dataset_id: s.dataset_id,
            channels: s.channels,
        }
    }
}

impl CorpusConfig {
    /// Display-capture recaptures of the source templates.
    pub fn cross_target() -> Self {
        Self {
            channel_mix: [0.0, 1.0],
            dataset_id: "D2".into(),
            ..Self::default()
        }
    }

    /// Two unseen templates, half of them low resolution, captured and
    /// recaptured with shifted channel parameters.
    pub fn transfer_target() -> Self {
        let mut print_scan = ChannelParams::print_scan_default();
        print_scan.halftone = Halftone::ErrorDiffusion { cell: 2 };
        print_scan.blur_sigma = 1.3;
        print_scan.noise_sigma = 5.0;
        let mut display_capture = ChannelParams::display_capture_default();
        display_capture.blur_sigma = 0.8;
        display_capture.grid_period = Some(4);
        display_capture.color_matrix = [[1.05, 0.0, 0.0], [0.0, 1.0, 0.05], [0.05, 0.05, 1.15]];
        let mut capture = ChannelParams::capture_default();
        capture.blur_sigma = 0.9;
        capture.noise_sigma = 3.5;
        capture.gamma = [0.95; 3];
        Self {
            n_templates: 2,
            n_genuine_per_template: 10,
            n_recaptured_per_template: 10,
            low_resolution_fraction: 0.5,
            template_prefix: "F".into(),
            dataset_id: "D3".into(),
            channels: ChannelSet {
                capture,
                print_scan,
                display_capture,
            },
            ..Self::default()
        }
    }

    pub fn synth_spec(&self, master_seed: u64, template_seed: u64) -> SynthSpec {
        SynthSpec {
            n_templates: self.n_templates,
            n_genuine_per_template: self.n_genuine_per_template,
            n_recaptured_per_template: self.n_recaptured_per_template,
            channel_mix: self.channel_mix,
            image_size: self.image_size,
            master_seed,
            template_seed: Some(template_seed),
            template_prefix: self.template_prefix.clone(),
            dataset_id: self.dataset_id.clone(),
            low_resolution_fraction: self.low_resolution_fraction,
            channels: self.channels.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    /// (train, val, test)
    pub ratios: [f64; 3],
    pub stratify_by: Vec<StratumField>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let s = SplitSpec::default();
        Self {
            ratios: s.ratios,
            stratify_by: s.stratify_by,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatchConfig {
    pub train_stride: usize,
    pub eval_stride: usize,
    pub filter: PatchFilterConfig,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            train_stride: 112,
            eval_stride: 224,
            filter: PatchFilterConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerificationConfig {
    /// Genuine reference images per questioned template and resolution group.
    pub references: usize,
    /// Threshold used for seen-template verdicts, calibrated on validation images.
    pub policy: ThresholdPolicy,
    /// BPCER operating points reported in the metrics file.
    pub bpcer_targets: Vec<f64>,
    /// Label permutations averaged by the cross-protocol control.
    pub control_permutations: usize,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        Self {
            references: 3,
            policy: ThresholdPolicy::MaxAccuracy,
            bpcer_targets: vec![0.01, 0.05],
            control_permutations: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    /// Support triplets drawn from the high resolution group.
    pub support_high: usize,
    /// Support triplets drawn from the low resolution group.
    pub support_low: usize,
    /// Genuine and recaptured images set aside per template and resolution
    /// group to supply the support triplets.
    pub support_genuine: usize,
    pub support_recaptured: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// BPCER target whose threshold is compared before and after fine-tuning.
    pub bpcer_target: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            support_high: 2,
            support_low: 4,
            support_genuine: 2,
            support_recaptured: 1,
            epochs: 10,
            learning_rate: 1e-4,
            bpcer_target: 0.05,
        }
    }
}

/// One experiment. Every seed is derived from `seed`; seed fields inside the
/// sections are overwritten when the config is resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub corpus: CorpusConfig,
    /// Test corpus for `cross`, unseen template family for `fine_tune_transfer`.
    pub target: Option<CorpusConfig>,
    pub split: SplitConfig,
    pub patches: PatchConfig,
    pub embedder: EmbedderConfig,
    pub simnet: SimNetConfig,
    pub train: TrainConfig,
    pub verification: VerificationConfig,
    pub finetune: FinetuneConfig,
}

/// Writes `top` over `base` key by key. Tagged variants (objects carrying a
/// `kind` or `policy` key) replace the base value whole.
fn overlay(base: &mut serde_json::Value, top: serde_json::Value) {
    use serde_json::Value;
    match (base, top) {
        (Value::Object(b), Value::Object(t)) if !t.contains_key("kind") && !t.contains_key("policy") => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => overlay(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, t) => *slot = t,
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut train = TrainConfig {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        train.mining.mode = MiningMode::All;
        Self {
            protocol: Protocol::Intra,
            seed: 0,
            out_dir: None,
            corpus: CorpusConfig::default(),
            target: None,
            split: SplitConfig::default(),
            patches: PatchConfig::default(),
            embedder: EmbedderConfig::default(),
            simnet: SimNetConfig::default(),
            train,
            verification: VerificationConfig::default(),
            finetune: FinetuneConfig::default(),
        }
    }
}

/// Seeds derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub synth: u64,
    pub target_synth: u64,
    pub target_templates: u64,
    pub split: u64,
    pub embedder: u64,
    pub simnet: u64,
    pub train: u64,
    pub finetune: u64,
    pub control: u64,
}

impl Seeds {
    pub fn derive(master: u64, protocol: Protocol) -> Self {
        let synth = seed::derive(master, Stream::Synth);
        let target_synth = seed::derive(master, Stream::Target);
        let target_templates = match protocol {
            Protocol::FineTuneTransfer => seed::mix(&[target_synth, 1]),
            _ => synth,
        };
        Self {
            master,
            synth,
            target_synth,
            target_templates,
            split: seed::derive(master, Stream::Split),
            embedder: seed::derive(master, Stream::Embedder),
            simnet: seed::derive(master, Stream::SimNet),
            train: seed::derive(master, Stream::Train),
            finetune: seed::derive(master, Stream::Finetune),
            control: seed::derive(master, Stream::Control),
        }
    }
}

impl ExperimentConfig {
    /// Reads a TOML config, or the `config` entry of a run summary (`.json`).
    ///
    /// Sections may be partial: missing keys keep their experiment defaults,
    /// and a partial `[target]` starts from the protocol's built-in target.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        let bad = |e: &dyn std::fmt::Display| ExperimentError::Config(format!("{}: {e}", path.display()));
        let is_json = path.extension().is_some_and(|e| e == "json");
        let value: serde_json::Value = if is_json {
            let mut summary: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(&e))?;
            summary
                .get_mut("config")
                .map(serde_json::Value::take)
                .ok_or_else(|| bad(&"no `config` entry"))?
        } else {
            toml::from_str(&text).map_err(|e| bad(&e))?
        };
        let cfg = Self::from_partial(value).map_err(|e| bad(&e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Builds a config from a possibly partial document layered over the defaults.
    pub fn from_partial(value: serde_json::Value) -> Result<Self, serde_json::Error> {
        let protocol: Protocol = match value.get("protocol") {
            Some(p) => serde_json::from_value(p.clone())?,
            None => Protocol::Intra,
        };
        let base = Self {
            protocol,
            ..Self::default()
        };
        let mut merged = serde_json::to_value(&base)?;
        if value.get("target").is_some_and(|t| !t.is_null()) {
            let target = base.target_corpus().unwrap_or_default();
            merged["target"] = serde_json::to_value(target)?;
        }
        overlay(&mut merged, value);
        serde_json::from_value(merged)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::derive(self.seed, self.protocol)
    }

    /// The target corpus in effect for this protocol.
    pub fn target_corpus(&self) -> Option<CorpusConfig> {
        match self.protocol {
            Protocol::Intra => None,
            Protocol::Cross => Some(self.target.clone().unwrap_or_else(CorpusConfig::cross_target)),
            Protocol::FineTuneTransfer => Some(self.target.clone().unwrap_or_else(CorpusConfig::transfer_target)),
        }
    }

    /// Copy with every seed field replaced by its derived value and the target
    /// corpus made explicit.
    pub fn resolved(&self) -> Self {
        let s = self.seeds();
        let mut c = self.clone();
        c.target = self.target_corpus();
        c.embedder.init_seed = s.embedder;
        c.simnet.init_seed = s.simnet;
        c.train.seed = s.train;
        c.train.mining.seed = s.train;
        c
    }

    pub fn synth_spec(&self) -> SynthSpec {
        let s = self.seeds();
        self.corpus.synth_spec(s.synth, s.synth)
    }

    pub fn target_synth_spec(&self) -> Option<SynthSpec> {
        let s = self.seeds();
        self.target_corpus().map(|t| t.synth_spec(s.target_synth, s.target_templates))
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            ratios: self.split.ratios,
            seed: self.seeds().split,
            stratify_by: self.split.stratify_by.clone(),
        }
    }

    /// Checks every section and names the offending field.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let field = |name: &str, e: &dyn std::fmt::Display| ExperimentError::Config(format!("{name}: {e}"));
        self.synth_spec().validate().map_err(|e| field("corpus", &e))?;
        if let Some(t) = self.target_synth_spec() {
            t.validate().map_err(|e| field("target", &e))?;
        }
        self.split_spec().validate().map_err(|e| field("split", &e))?;
        if self.patches.train_stride == 0 || self.patches.eval_stride == 0 {
            return Err(field("patches", &"strides must be >= 1"));
        }
        self.embedder.validate().map_err(|e| field("embedder", &e))?;
        self.simnet.validate().map_err(|e| field("simnet", &e))?;
        self.train.validate().map_err(|e| field("train", &e))?;
        if self.train.learning_rate <= 0.0 {
            return Err(field("train.learning_rate", &"must be > 0"));
        }
        let v = &self.verification;
        if v.references == 0 {
            return Err(field("verification.references", &"must be >= 1"));
        }
        if let ThresholdPolicy::BpcerTarget(t) = v.policy {
            if !(0.0..=1.0).contains(&t) {
                return Err(field("verification.policy", &format!("target {t} outside [0, 1]")));
            }
        }
        if let Some(t) = v.bpcer_targets.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(field("verification.bpcer_targets", &format!("{t} outside [0, 1]")));
        }
        if self.protocol == Protocol::Cross && v.control_permutations == 0 {
            return Err(field("verification.control_permutations", &"must be >= 1"));
        }
        let f = &self.finetune;
        if self.protocol == Protocol::FineTuneTransfer {
            if f.support_high + f.support_low == 0 {
                return Err(field("finetune", &"needs at least one support triplet"));
            }
            if f.support_genuine == 0 || f.support_recaptured == 0 {
                return Err(field("finetune", &"support images per group must be >= 1"));
            }
            if f.epochs == 0 {
                return Err(field("finetune.epochs", &"must be >= 1"));
            }
            if !(f.learning_rate >= 0.0 && f.learning_rate.is_finite()) {
                return Err(field("finetune.learning_rate", &"must be finite and >= 0"));
            }
            if !(0.0..=1.0).contains(&f.bpcer_target) {
                return Err(field("finetune.bpcer_target", &"must be in [0, 1]"));
            }
        }
        Ok(())
    }
}
