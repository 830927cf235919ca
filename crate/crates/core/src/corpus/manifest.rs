use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Channel, CorpusError, DeviceClass, DocumentImage, Label, Provenance, ResolutionGroup};
use crate::raster::Raster;

/// One JSON-lines record. Field names are part of the on-disk format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRow {
    pub path: String,
    pub id: String,
    pub template_id: String,
    pub label: Label,
    pub channel: Channel,
    pub device_class: DeviceClass,
    pub resolution_group: ResolutionGroup,
    pub dataset_id: String,
}

impl ManifestRow {
    pub fn provenance(&self) -> Provenance {
        Provenance {
            template_id: self.template_id.clone(),
            label: self.label,
            channel: self.channel,
            device_class: self.device_class,
            resolution_group: self.resolution_group,
            dataset_id: self.dataset_id.clone(),
        }
    }
}

/// Validated image list. Relative image paths resolve against `base_dir`.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    pub base_dir: PathBuf,
}

pub fn load_manifest(path: &Path) -> Result<Manifest, CorpusError> {
    if !path.is_file() {
        return Err(CorpusError::MissingManifest {
            path: path.display().to_string(),
        });
    }
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: ManifestRow = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
            row: i + 1,
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = Manifest { rows, base_dir };
    manifest.validate()?;
    Ok(manifest)
}

impl Manifest {
    pub fn new(rows: Vec<ManifestRow>, base_dir: impl Into<PathBuf>) -> Self {
        Self {
            rows,
            base_dir: base_dir.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        let p = Path::new(&row.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Checks every row invariant. Row numbers in errors are 1-based.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (i, row) in self.rows.iter().enumerate() {
            let n = i + 1;
            if let Some(&first) = seen.get(row.id.as_str()) {
                return Err(CorpusError::DuplicateId {
                    id: row.id.clone(),
                    first,
                    second: n,
                });
            }
            seen.insert(&row.id, n);
            row.provenance()
                .check()
                .map_err(|message| CorpusError::Invalid { row: n, message })?;
            if !self.resolve(row).is_file() {
                return Err(CorpusError::UnresolvablePath {
                    row: n,
                    path: row.path.clone(),
                });
            }
        }
        let with_genuine: BTreeSet<&str> = self
            .rows
            .iter()
            .filter(|r| r.label == Label::Genuine)
            .map(|r| r.template_id.as_str())
            .collect();
        if let Some((i, row)) = self
            .rows
            .iter()
            .enumerate()
            .find(|(_, r)| !with_genuine.contains(r.template_id.as_str()))
        {
            return Err(CorpusError::Invalid {
                row: i + 1,
                message: format!("template {:?} has no genuine reference row", row.template_id),
            });
        }
        Ok(())
    }

    pub fn load_image(&self, row: &ManifestRow) -> Result<DocumentImage, CorpusError> {
        let pixels = Raster::load(&self.resolve(row))?;
        DocumentImage::new(row.id.clone(), pixels, row.provenance())
    }

    pub fn filter(&self, keep: impl Fn(&ManifestRow) -> bool) -> Manifest {
        Manifest {
            rows: self.rows.iter().filter(|r| keep(r)).cloned().collect(),
            base_dir: self.base_dir.clone(),
        }
    }

    pub fn find(&self, id: &str) -> Option<&ManifestRow> {
        self.rows.iter().find(|r| r.id == id)
    }

    pub fn template_ids(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.rows.iter().map(|r| &r.template_id).collect();
        set.into_iter().cloned().collect()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let io = |source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        for row in &self.rows {
            let line = serde_json::to_string(row).expect("manifest rows always serialize");
            writeln!(out, "{line}").map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, path: &str, label: Label) -> ManifestRow {
        ManifestRow {
            path: path.into(),
            id: id.into(),
            template_id: "T0".into(),
            label,
            channel: if label == Label::Genuine {
                Channel::Capture
            } else {
                Channel::PrintScan
            },
            device_class: DeviceClass::Synthetic,
            resolution_group: ResolutionGroup::High,
            dataset_id: "D1".into(),
        }
    }

    fn write_fixture(dir: &Path, rows: &[ManifestRow]) -> PathBuf {
        let img = Raster::filled(224, 224, [50, 60, 70]);
        for r in rows {
            let p = dir.join(&r.path);
            if !p.exists() && !r.path.starts_with("missing") {
                img.save_png(&p).unwrap();
            }
        }
        let path = dir.join("manifest.jsonl");
        Manifest::new(rows.to_vec(), dir).write_jsonl(&path).unwrap();
        path
    }

    #[test]
    fn loads_well_formed_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<_> = (0..18)
            .map(|i| {
                let label = if i % 3 == 0 { Label::Genuine } else { Label::Recaptured };
                row(&format!("a{i}"), &format!("a{i}.png"), label)
            })
            .collect();
        let path = write_fixture(dir.path(), &rows);
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.len(), 18);
        assert_eq!(m.rows, rows);
    }

    #[test]
    fn duplicate_id_names_both_rows() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            row("a1", "x.png", Label::Genuine),
            row("b", "y.png", Label::Genuine),
            row("a1", "z.png", Label::Recaptured),
        ];
        let path = write_fixture(dir.path(), &rows);
        match load_manifest(&path) {
            Err(CorpusError::DuplicateId { id, first, second }) => {
                assert_eq!((id.as_str(), first, second), ("a1", 1, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_image_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            row("a", "a.png", Label::Genuine),
            row("b", "missing.png", Label::Recaptured),
        ];
        let path = write_fixture(dir.path(), &rows);
        match load_manifest(&path) {
            Err(CorpusError::UnresolvablePath { row, path }) => {
                assert_eq!(row, 2);
                assert_eq!(path, "missing.png");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_enum_value_reports_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_fixture(dir.path(), &[row("a", "a.png", Label::Genuine)]);
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str(&text.replace("\"a\"", "\"b\"").replace("capture", "fax"));
        std::fs::write(&path, text).unwrap();
        match load_manifest(&path) {
            Err(CorpusError::Parse { row, message }) => {
                assert_eq!(row, 2);
                assert!(message.contains("fax"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_manifest_file() {
        let err = load_manifest(Path::new("/nonexistent/manifest.jsonl")).unwrap_err();
        assert!(matches!(err, CorpusError::MissingManifest { .. }));
    }

    #[test]
    fn genuine_must_be_capture_channel() {
        let dir = tempfile::tempdir().unwrap();
        let mut bad = row("a", "a.png", Label::Genuine);
        bad.channel = Channel::PrintScan;
        let path = write_fixture(dir.path(), &[bad]);
        assert!(matches!(load_manifest(&path), Err(CorpusError::Invalid { row: 1, .. })));
    }
}
