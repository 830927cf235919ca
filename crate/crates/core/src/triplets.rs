//! Candidate triplet construction and semi-hard mining.
//!
//! A triplet groups a reference patch from a high-quality genuine image, a
//! positive patch from another genuine image and a negative patch from a
//! recaptured image. All three come from the same template, the same
//! resolution group and the same window origin.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    extract_patches, is_discriminative, CorpusError, DeviceClass, DocumentImage, Label, Manifest, ManifestRow, Patch,
    PatchFilterConfig, PatchKey, ResolutionGroup,
};
use crate::loss::hinge_argument;
use crate::model::ForensicModel;
use crate::seed;

#[derive(Debug, Error)]
pub enum TripletError {
    #[error("no valid triplet: {0}")]
    NoValidTriplet(String),
    #[error("invalid triplet: {0}")]
    Invalid(String),
    #[error("invalid mining config: {0}")]
    InvalidConfig(String),
    #[error("unknown patch {0} in triplet list")]
    UnknownPatch(String),
    #[error("triplet list {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("triplet list line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Discriminative patches of a set of images, shared by reference count.
#[derive(Debug, Clone, Default)]
pub struct PatchStore {
    patches: Vec<Arc<Patch>>,
    by_key: HashMap<PatchKey, usize>,
    by_source: HashMap<String, Vec<usize>>,
    skipped: Vec<String>,
}

impl PatchStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Extracts and filters the patches of one image. Returns how many were kept;
    /// an image with none is recorded in [`PatchStore::skipped`].
    pub fn insert_image(&mut self, image: &DocumentImage, stride: usize, filter: &PatchFilterConfig) -> usize {
        let mut kept = Vec::new();
        for patch in extract_patches(image, stride) {
            if is_discriminative(&patch, filter) && !self.by_key.contains_key(&patch.key()) {
                self.by_key.insert(patch.key(), self.patches.len());
                kept.push(self.patches.len());
                self.patches.push(Arc::new(patch));
            }
        }
        if kept.is_empty() {
            self.skipped.push(image.id.clone());
        }
        let n = kept.len();
        self.by_source.entry(image.id.clone()).or_default().extend(kept);
        n
    }

    pub fn from_manifest(manifest: &Manifest, stride: usize, filter: &PatchFilterConfig) -> Result<Self, CorpusError> {
        let mut store = Self::new();
        for row in &manifest.rows {
            store.insert_image(&manifest.load_image(row)?, stride, filter);
        }
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<Patch>> {
        self.patches.iter()
    }

    pub fn get(&self, key: &PatchKey) -> Option<&Arc<Patch>> {
        self.by_key.get(key).map(|&i| &self.patches[i])
    }

    /// Discriminative patches of one image in row-major origin order.
    pub fn patches_of(&self, source_id: &str) -> Vec<&Arc<Patch>> {
        self.by_source
            .get(source_id)
            .map(|ix| ix.iter().map(|&i| &self.patches[i]).collect())
            .unwrap_or_default()
    }

    /// Ids of images that produced no discriminative patch.
    pub fn skipped(&self) -> &[String] {
        &self.skipped
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub reference: Arc<Patch>,
    pub positive: Arc<Patch>,
    pub negative: Arc<Patch>,
}

impl Triplet {
    /// Checks every structural constraint. `allow_same_source` permits the
    /// reference and positive to come from the same image.
    pub fn check(&self, allow_same_source: bool) -> Result<(), TripletError> {
        let (r, p, n) = (&self.reference.provenance, &self.positive.provenance, &self.negative.provenance);
        let bad = |m: &str| Err(TripletError::Invalid(format!("{}: {m}", self.id())));
        if r.template_id != p.template_id || r.template_id != n.template_id {
            return bad("patches come from different templates");
        }
        if r.resolution_group != p.resolution_group || r.resolution_group != n.resolution_group {
            return bad("patches mix resolution groups");
        }
        if r.label != Label::Genuine || p.label != Label::Genuine || n.label != Label::Recaptured {
            return bad("labels must be genuine, genuine, recaptured");
        }
        if !allow_same_source && self.reference.source_id == self.positive.source_id {
            return bad("reference and positive share a source image");
        }
        Ok(())
    }

    pub fn anchor(&self) -> (PatchKey, PatchKey) {
        (self.reference.key(), self.positive.key())
    }

    pub fn id(&self) -> String {
        format!("{}|{}|{}", self.reference.key(), self.positive.key(), self.negative.key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiningMode {
    SemiHard,
    Random,
    All,
}

/// Which triplets are compared when mining. Only whole-set mining is offered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiningScope {
    FullSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiningConfig {
    pub gamma: f64,
    pub mode: MiningMode,
    pub max_per_anchor: usize,
    pub scope: MiningScope,
    /// Seed for `random` mode.
    pub seed: u64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            gamma: 0.2,
            mode: MiningMode::SemiHard,
            max_per_anchor: 4,
            scope: MiningScope::FullSet,
            seed: 0,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<(), TripletError> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(TripletError::InvalidConfig(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if self.max_per_anchor == 0 {
            return Err(TripletError::InvalidConfig("max_per_anchor must be >= 1".into()));
        }
        Ok(())
    }
}

fn is_high_quality(row: &ManifestRow) -> bool {
    row.resolution_group == ResolutionGroup::High || row.device_class == DeviceClass::Scanner
}

/// Enumerates every admissible (reference, positive, negative) combination
/// among the images of `split` whose patches are in `store`.
///
/// Output order: template, resolution group, reference, positive, origin,
/// negative, following manifest order within each level.
pub fn build_candidate_triplets(split: &Manifest, store: &PatchStore) -> Result<Vec<Triplet>, TripletError> {
    let mut groups: BTreeMap<(&str, ResolutionGroup), (Vec<&ManifestRow>, Vec<&ManifestRow>)> = BTreeMap::new();
    for row in &split.rows {
        let entry = groups.entry((row.template_id.as_str(), row.resolution_group)).or_default();
        match row.label {
            Label::Genuine => entry.0.push(row),
            Label::Recaptured => entry.1.push(row),
        }
    }

    let by_origin = |row: &ManifestRow| -> BTreeMap<(usize, usize), Arc<Patch>> {
        store.patches_of(&row.id).into_iter().map(|p| (p.origin, Arc::clone(p))).collect()
    };

    let mut out = Vec::new();
    for (genuine, recaptured) in groups.values() {
        if genuine.is_empty() || recaptured.is_empty() {
            continue;
        }
        let mut references: Vec<&&ManifestRow> = genuine.iter().filter(|r| is_high_quality(r)).collect();
        if references.is_empty() {
            references = genuine.iter().collect();
        }
        let single = genuine.len() == 1;
        let negatives: Vec<_> = recaptured.iter().map(|r| by_origin(r)).collect();
        let genuine_patches: HashMap<&str, _> = genuine.iter().map(|r| (r.id.as_str(), by_origin(r))).collect();
        for r in references {
            let ref_patches = &genuine_patches[r.id.as_str()];
            for p in genuine.iter().filter(|p| single || p.id != r.id) {
                let pos_patches = &genuine_patches[p.id.as_str()];
                for (origin, rp) in ref_patches {
                    let Some(pp) = pos_patches.get(origin) else { continue };
                    for neg in &negatives {
                        if let Some(np) = neg.get(origin) {
                            out.push(Triplet {
                                reference: Arc::clone(rp),
                                positive: Arc::clone(pp),
                                negative: Arc::clone(np),
                            });
                        }
                    }
                }
            }
        }
    }
    if out.is_empty() {
        return Err(TripletError::NoValidTriplet(
            "no template has genuine and recaptured images with discriminative patches at a shared origin in one resolution group"
                .into(),
        ));
    }
    Ok(out)
}

/// Similarity pairs `(S(r, p), S(r, n))` for each triplet, embedding every
/// distinct patch once.
pub fn triplet_scores(triplets: &[Triplet], model: &ForensicModel) -> Vec<(f64, f64)> {
    let embeddings =
        model.embed_unique(triplets.iter().flat_map(|t| [&*t.reference, &*t.positive, &*t.negative]));
    let pairs: Vec<(PatchKey, PatchKey)> = triplets
        .iter()
        .flat_map(|t| [(t.reference.key(), t.positive.key()), (t.reference.key(), t.negative.key())])
        .collect();
    let s = model.score_pairs(&embeddings, &pairs);
    s.chunks_exact(2).map(|c| (c[0], c[1])).collect()
}

/// Indices of the mined triplets in ascending order.
///
/// `scores[i]` holds `(S(r, p), S(r, n))` for `candidates[i]`; it is only
/// read in semi-hard mode.
pub fn mine_with_scores(candidates: &[Triplet], scores: &[(f64, f64)], config: &MiningConfig) -> Vec<usize> {
    match config.mode {
        MiningMode::All => (0..candidates.len()).collect(),
        MiningMode::Random => {
            let anchors = candidates.iter().map(Triplet::anchor).collect::<std::collections::HashSet<_>>().len();
            let k = (anchors * config.max_per_anchor).min(candidates.len());
            let mut rng = seed::rng(config.seed);
            let mut picked = index::sample(&mut rng, candidates.len(), k).into_vec();
            picked.sort_unstable();
            picked
        }
        MiningMode::SemiHard => {
            assert_eq!(scores.len(), candidates.len(), "one score pair per candidate");
            let mut per_anchor: HashMap<(PatchKey, PatchKey), Vec<(f64, usize)>> = HashMap::new();
            for (i, (t, &(sp, sn))) in candidates.iter().zip(scores).enumerate() {
                let h = hinge_argument(sp, sn, config.gamma);
                if sn < sp && h > 0.0 {
                    per_anchor.entry(t.anchor()).or_default().push((h, i));
                }
            }
            let mut keep: Vec<usize> = per_anchor
                .into_values()
                .flat_map(|mut v| {
                    v.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                    v.truncate(config.max_per_anchor);
                    v.into_iter().map(|(_, i)| i)
                })
                .collect();
            keep.sort_unstable();
            keep
        }
    }
}

/// Mines `candidates` against the current model.
pub fn mine_semi_hard(candidates: &[Triplet], model: &ForensicModel, config: &MiningConfig) -> Vec<Triplet> {
    let scores = match config.mode {
        MiningMode::SemiHard => triplet_scores(candidates, model),
        _ => Vec::new(),
    };
    mine_with_scores(candidates, &scores, config)
        .into_iter()
        .map(|i| candidates[i].clone())
        .collect()
}

#[derive(Serialize, Deserialize)]
struct TripletRecord {
    reference: PatchKey,
    positive: PatchKey,
    negative: PatchKey,
}

pub fn write_triplets_jsonl(triplets: &[Triplet], path: &Path) -> Result<(), TripletError> {
    let io = |source| TripletError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for t in triplets {
        let rec = TripletRecord {
            reference: t.reference.key(),
            positive: t.positive.key(),
            negative: t.negative.key(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Rebuilds a triplet list written by [`write_triplets_jsonl`] from `store`.
pub fn read_triplets_jsonl(path: &Path, store: &PatchStore) -> Result<Vec<Triplet>, TripletError> {
    let io = |source| TripletError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TripletRecord = serde_json::from_str(&line).map_err(|e| TripletError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let get = |k: &PatchKey| store.get(k).cloned().ok_or_else(|| TripletError::UnknownPatch(k.to_string()));
        out.push(Triplet {
            reference: get(&rec.reference)?,
            positive: get(&rec.positive)?,
            negative: get(&rec.negative)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Channel, Provenance};
    use crate::raster::Raster;

    fn textured(seed: u64) -> Raster {
        let mut rng = seed::rng(seed);
        let mut r = Raster::new(224, 224);
        for b in r.as_bytes_mut() {
            *b = rand::Rng::random(&mut rng);
        }
        r
    }

    fn row(id: &str, template: &str, label: Label, group: ResolutionGroup) -> ManifestRow {
        ManifestRow {
            path: format!("{id}.png"),
            id: id.into(),
            template_id: template.into(),
            label,
            channel: if label == Label::Genuine { Channel::Capture } else { Channel::PrintScan },
            device_class: DeviceClass::Synthetic,
            resolution_group: group,
            dataset_id: "D".into(),
        }
    }

    fn fixture(rows: Vec<ManifestRow>) -> (Manifest, PatchStore) {
        let mut store = PatchStore::new();
        for (i, r) in rows.iter().enumerate() {
            let img = DocumentImage {
                id: r.id.clone(),
                pixels: textured(i as u64),
                provenance: r.provenance(),
            };
            store.insert_image(&img, 112, &PatchFilterConfig::default());
        }
        (Manifest::new(rows, "."), store)
    }

    use Label::{Genuine as G, Recaptured as R};
    use ResolutionGroup::{High, Low};

    #[test]
    fn only_templates_with_negatives() {
        let (m, s) = fixture(vec![
            row("a1", "A", G, High),
            row("a2", "A", G, High),
            row("a3", "A", R, High),
            row("a4", "A", R, High),
            row("a5", "A", R, High),
            row("b1", "B", G, High),
        ]);
        let t = build_candidate_triplets(&m, &s).unwrap();
        assert_eq!(t.len(), 6);
        assert!(t.iter().all(|t| t.reference.provenance.template_id == "A"));
        for x in &t {
            x.check(false).unwrap();
        }
    }

    #[test]
    fn groups_never_mix() {
        let (m, s) = fixture(vec![
            row("h1", "A", G, High),
            row("h2", "A", G, High),
            row("h3", "A", R, High),
            row("l1", "A", G, Low),
            row("l2", "A", G, Low),
            row("l3", "A", R, Low),
        ]);
        let t = build_candidate_triplets(&m, &s).unwrap();
        assert_eq!(t.len(), 4);
        for x in &t {
            let g = x.reference.provenance.resolution_group;
            assert_eq!(x.positive.provenance.resolution_group, g);
            assert_eq!(x.negative.provenance.resolution_group, g);
        }
    }

    #[test]
    fn single_genuine_may_pair_with_itself() {
        let (m, s) = fixture(vec![row("a1", "A", G, High), row("a2", "A", R, High)]);
        let t = build_candidate_triplets(&m, &s).unwrap();
        assert_eq!(t.len(), 1);
        t[0].check(true).unwrap();
        assert!(t[0].check(false).is_err());
    }

    #[test]
    fn no_valid_triplet_is_an_error() {
        let (m, s) = fixture(vec![row("a1", "A", G, High), row("b1", "B", R, High)]);
        assert!(matches!(build_candidate_triplets(&m, &s), Err(TripletError::NoValidTriplet(_))));
    }

    #[test]
    fn origins_match_across_branches() {
        let mut store = PatchStore::new();
        let rows = vec![row("a1", "A", G, High), row("a2", "A", G, High), row("a3", "A", R, High)];
        for (i, r) in rows.iter().enumerate() {
            let mut pixels = Raster::new(336, 336);
            let src = textured(i as u64 + 10);
            for y in 0..336 {
                for x in 0..336 {
                    pixels.put(y, x, src.get(y % 224, x % 224));
                }
            }
            store.insert_image(
                &DocumentImage {
                    id: r.id.clone(),
                    pixels,
                    provenance: r.provenance(),
                },
                112,
                &PatchFilterConfig::default(),
            );
        }
        let t = build_candidate_triplets(&Manifest::new(rows, "."), &store).unwrap();
        assert_eq!(t.len(), 2 * 4);
        for x in &t {
            assert_eq!(x.reference.origin, x.positive.origin);
            assert_eq!(x.reference.origin, x.negative.origin);
        }
    }

    #[test]
    fn flat_images_are_skipped() {
        let mut store = PatchStore::new();
        let prov = Provenance {
            template_id: "A".into(),
            label: G,
            channel: Channel::Capture,
            device_class: DeviceClass::Synthetic,
            resolution_group: High,
            dataset_id: "D".into(),
        };
        let img = DocumentImage {
            id: "flat".into(),
            pixels: Raster::filled(224, 224, [128, 128, 128]),
            provenance: prov,
        };
        assert_eq!(store.insert_image(&img, 112, &PatchFilterConfig::default()), 0);
        assert_eq!(store.skipped(), ["flat".to_string()]);
    }

    fn anchor_fixture() -> Vec<Triplet> {
        let (m, s) = fixture(vec![
            row("a1", "A", G, High),
            row("a2", "A", G, High),
            row("n1", "A", R, High),
            row("n2", "A", R, High),
            row("n3", "A", R, High),
        ]);
        build_candidate_triplets(&m, &s).unwrap()
    }

    #[test]
    fn worked_semi_hard_example() {
        let c = anchor_fixture();
        let cfg = MiningConfig::default();
        // first anchor (a1, a2) owns candidates 0..3
        let scores = [(0.8, 0.9), (0.8, 0.7), (0.8, 0.1), (0.5, 0.9), (0.5, 0.9), (0.5, 0.9)];
        assert_eq!(mine_with_scores(&c, &scores, &cfg), vec![1]);
    }

    #[test]
    fn cap_keeps_largest_hinge_with_index_ties() {
        let c = anchor_fixture();
        let cfg = MiningConfig {
            max_per_anchor: 2,
            ..MiningConfig::default()
        };
        let scores = [(0.8, 0.7), (0.8, 0.75), (0.8, 0.7), (0.6, 0.55), (0.6, 0.55), (0.6, 0.55)];
        assert_eq!(mine_with_scores(&c, &scores, &cfg), vec![0, 1, 3, 4]);
    }

    #[test]
    fn all_and_random_modes() {
        let c = anchor_fixture();
        let all = MiningConfig {
            mode: MiningMode::All,
            ..MiningConfig::default()
        };
        assert_eq!(mine_with_scores(&c, &[], &all), (0..6).collect::<Vec<_>>());
        let random = MiningConfig {
            mode: MiningMode::Random,
            max_per_anchor: 1,
            seed: 3,
            ..MiningConfig::default()
        };
        let a = mine_with_scores(&c, &[], &random);
        assert_eq!(a.len(), 2);
        assert_eq!(a, mine_with_scores(&c, &[], &random));
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn config_validation() {
        assert!(MiningConfig::default().validate().is_ok());
        let bad = MiningConfig {
            max_per_anchor: 0,
            ..MiningConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = MiningConfig {
            gamma: -1.0,
            ..MiningConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let (m, s) = fixture(vec![row("a1", "A", G, High), row("a2", "A", G, High), row("n1", "A", R, High)]);
        let t = build_candidate_triplets(&m, &s).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        write_triplets_jsonl(&t, &path).unwrap();
        assert_eq!(read_triplets_jsonl(&path, &s).unwrap(), t);
    }

    proptest::proptest! {
        #[test]
        fn semi_hard_keeps_only_admissible_triplets(
            raw in proptest::collection::vec((0.0..=1.0f64, 0.0..=1.0f64), 6),
            cap in 1usize..4,
        ) {
            let c = anchor_fixture();
            let cfg = MiningConfig { max_per_anchor: cap, ..MiningConfig::default() };
            let kept = mine_with_scores(&c, &raw, &cfg);
            proptest::prop_assert!(kept.windows(2).all(|w| w[0] < w[1]));
            let mut per_anchor: HashMap<(PatchKey, PatchKey), usize> = HashMap::new();
            for &i in &kept {
                let (sp, sn) = raw[i];
                proptest::prop_assert!(sn < sp && hinge_argument(sp, sn, cfg.gamma) > 0.0);
                *per_anchor.entry(c[i].anchor()).or_default() += 1;
            }
            proptest::prop_assert!(per_anchor.values().all(|&n| n <= cap));
            for a in c.iter().map(Triplet::anchor).collect::<std::collections::HashSet<_>>() {
                let eligible = (0..c.len())
                    .filter(|&i| c[i].anchor() == a && raw[i].1 < raw[i].0 && hinge_argument(raw[i].0, raw[i].1, cfg.gamma) > 0.0)
                    .count();
                proptest::prop_assert_eq!(per_anchor.get(&a).copied().unwrap_or(0), eligible.min(cap));
            }
        }
    }
}
