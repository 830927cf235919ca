use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Manifest, ManifestRow};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratumField {
    TemplateId,
    Label,
    Channel,
    DeviceClass,
    ResolutionGroup,
    DatasetId,
}

impl StratumField {
    fn value(self, row: &ManifestRow) -> String {
        match self {
            StratumField::TemplateId => row.template_id.clone(),
            StratumField::Label => row.label.to_string(),
            StratumField::Channel => row.channel.to_string(),
            StratumField::DeviceClass => format!("{:?}", row.device_class),
            StratumField::ResolutionGroup => format!("{:?}", row.resolution_group),
            StratumField::DatasetId => row.dataset_id.clone(),
        }
    }
}

fn default_stratify() -> Vec<StratumField> {
    vec![StratumField::TemplateId, StratumField::Label]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    /// (train, val, test)
    pub ratios: [f64; 3],
    pub seed: u64,
    #[serde(default = "default_stratify")]
    pub stratify_by: Vec<StratumField>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            ratios: [0.8, 0.1, 0.1],
            seed: 0,
            stratify_by: default_stratify(),
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(CorpusError::InvalidSplit(format!(
                "ratios must be non-negative, got {:?}",
                self.ratios
            )));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CorpusError::InvalidSplit(format!("ratios sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Manifest,
    pub val: Manifest,
    pub test: Manifest,
}

/// Per-stratum row counts by largest remainder.
///
/// Leftover rows go to the splits with the largest fractional quota. When
/// tied splits outnumber the leftover rows, a cursor shared across strata (in
/// stratum key order) picks the next split cyclically, so repeated ties rotate
/// instead of always favouring the same split.
fn allocate(n: usize, ratios: &[f64; 3], cursor: &mut usize) -> [usize; 3] {
    let quotas = ratios.map(|r| r * n as f64);
    let mut counts = quotas.map(|q| (q + 1e-9).floor() as usize);
    let remainders: Vec<f64> = quotas
        .iter()
        .zip(&counts)
        .map(|(q, c)| (q - *c as f64).max(0.0))
        .collect();
    let mut leftover = n - counts.iter().sum::<usize>();
    let mut open = [true; 3];
    while leftover > 0 {
        let best = (0..3)
            .filter(|&j| open[j])
            .map(|j| remainders[j])
            .fold(f64::NEG_INFINITY, f64::max);
        let tied: Vec<usize> = (0..3)
            .filter(|&j| open[j] && (remainders[j] - best).abs() < 1e-9)
            .collect();
        if tied.len() <= leftover {
            for &j in &tied {
                counts[j] += 1;
                open[j] = false;
            }
            leftover -= tied.len();
        } else {
            while leftover > 0 {
                let j = (0..3)
                    .map(|k| (*cursor + k) % 3)
                    .find(|j| tied.contains(j) && open[*j])
                    .expect("a tied split remains open");
                counts[j] += 1;
                open[j] = false;
                *cursor = (j + 1) % 3;
                leftover -= 1;
            }
        }
    }
    counts
}

pub fn split_corpus(manifest: &Manifest, spec: &SplitSpec) -> Result<Split, CorpusError> {
    spec.validate()?;
    if manifest.is_empty() {
        return Err(CorpusError::EmptyManifest);
    }
    let mut strata: BTreeMap<Vec<String>, Vec<usize>> = BTreeMap::new();
    for (i, row) in manifest.rows.iter().enumerate() {
        let key = spec.stratify_by.iter().map(|f| f.value(row)).collect();
        strata.entry(key).or_default().push(i);
    }

    let mut assignment = vec![0usize; manifest.len()];
    let mut cursor = 0;
    for (key, mut members) in strata {
        let mut rng = seed::rng(seed::mix(&[spec.seed, seed::hash_str(&key.join("\u{1f}"))]));
        members.shuffle(&mut rng);
        let [n_train, n_val, _] = allocate(members.len(), &spec.ratios, &mut cursor);
        for (pos, &i) in members.iter().enumerate() {
            assignment[i] = if pos < n_train {
                0
            } else if pos < n_train + n_val {
                1
            } else {
                2
            };
        }
    }

    let part = |which: usize| {
        Manifest::new(
            manifest
                .rows
                .iter()
                .zip(&assignment)
                .filter(|(_, &a)| a == which)
                .map(|(r, _)| r.clone())
                .collect(),
            manifest.base_dir.clone(),
        )
    };
    Ok(Split {
        train: part(0),
        val: part(1),
        test: part(2),
    })
}
