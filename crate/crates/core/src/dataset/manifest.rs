use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::split::{parse_splits, serialize_splits};
use super::{DatasetError, SplitAssignment};
use crate::region::RegionId;

pub const FORMAT_VERSION: &str = "1.0";

const ENTRIES_FILE: &str = "manifest.jsonl";
const SPLITS_FILE: &str = "splits.csv";
const META_FILE: &str = "manifest.json";
const LOCK_FILE: &str = ".manifest.lock";

/// One study line of `manifest.jsonl`. Paths are relative to the manifest
/// directory unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub study_id: String,
    pub image: String,
    pub gaze: String,
    pub masks: BTreeMap<RegionId, String>,
    pub transcript: String,
    pub labels: String,
}

impl ManifestEntry {
    pub fn referenced_files(&self) -> impl Iterator<Item = &str> {
        [
            self.image.as_str(),
            self.gaze.as_str(),
            self.transcript.as_str(),
            self.labels.as_str(),
        ]
        .into_iter()
        .chain(self.masks.values().map(String::as_str))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub format_version: String,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
    pub splits: SplitAssignment,
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    format_version: String,
    seed: u64,
    studies: usize,
    sha256: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>, splits: SplitAssignment, seed: u64) -> Self {
        Manifest {
            format_version: FORMAT_VERSION.to_string(),
            seed,
            entries,
            splits,
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.study_id.as_str())
    }

    fn entries_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("manifest entries serialize"));
            out.push('\n');
        }
        out
    }

    fn check_partition(&self) -> Result<(), DatasetError> {
        let mut seen = BTreeSet::new();
        for id in self.ids() {
            if !seen.insert(id) {
                return Err(DatasetError::DuplicateId(id.to_string()));
            }
        }
        let missing: Vec<_> = seen
            .iter()
            .filter(|id| !self.splits.contains_key(**id))
            .collect();
        let extra: Vec<_> = self
            .splits
            .keys()
            .filter(|id| !seen.contains(id.as_str()))
            .collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(DatasetError::SplitMismatch(format!(
                "unassigned: {missing:?}; unknown: {extra:?}"
            )));
        }
        Ok(())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct DirLock(PathBuf);

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self, DatasetError> {
        let path = dir.join(LOCK_FILE);
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(DirLock(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(DatasetError::Locked(dir.to_path_buf()))
            }
            Err(e) => Err(DatasetError::io(path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| DatasetError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| DatasetError::io(path, e))
}

/// Writes `manifest.jsonl`, `splits.csv` and the `manifest.json` header
/// (format version, seed, content checksums) into `dir`.
pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<(), DatasetError> {
    manifest.check_partition()?;
    fs::create_dir_all(dir).map_err(|e| DatasetError::io(dir, e))?;
    let _lock = DirLock::acquire(dir)?;
    let entries = manifest.entries_text();
    let splits = serialize_splits(&manifest.splits);
    let meta = Meta {
        format_version: manifest.format_version.clone(),
        seed: manifest.seed,
        studies: manifest.entries.len(),
        sha256: BTreeMap::from([
            (ENTRIES_FILE.to_string(), sha256_hex(entries.as_bytes())),
            (SPLITS_FILE.to_string(), sha256_hex(splits.as_bytes())),
        ]),
    };
    let mut meta_text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    meta_text.push('\n');
    write_atomic(&dir.join(ENTRIES_FILE), entries.as_bytes())?;
    write_atomic(&dir.join(SPLITS_FILE), splits.as_bytes())?;
    write_atomic(&dir.join(META_FILE), meta_text.as_bytes())
}

fn read_text(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))
}

/// Reads and validates a manifest directory: version, checksums, id
/// uniqueness, split partition, and existence of every referenced file.
pub fn read_manifest(dir: &Path) -> Result<Manifest, DatasetError> {
    let meta_path = dir.join(META_FILE);
    let meta: Meta =
        serde_json::from_str(&read_text(&meta_path)?).map_err(|e| DatasetError::Parse {
            path: meta_path.clone(),
            line: e.line() as u64,
            reason: e.to_string(),
        })?;
    if meta.format_version != FORMAT_VERSION {
        return Err(DatasetError::UnsupportedVersion(meta.format_version));
    }
    let entries_path = dir.join(ENTRIES_FILE);
    let splits_path = dir.join(SPLITS_FILE);
    let entries_text = read_text(&entries_path)?;
    let splits_text = read_text(&splits_path)?;
    for (name, text, path) in [
        (ENTRIES_FILE, &entries_text, &entries_path),
        (SPLITS_FILE, &splits_text, &splits_path),
    ] {
        if meta.sha256.get(name).map(String::as_str) != Some(sha256_hex(text.as_bytes()).as_str()) {
            return Err(DatasetError::ChecksumFailure(path.clone()));
        }
    }
    let mut entries = Vec::new();
    for (i, line) in entries_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| DatasetError::Parse {
            path: entries_path.clone(),
            line: i as u64 + 1,
            reason: e.to_string(),
        })?;
        entries.push(entry);
    }
    if entries.len() != meta.studies {
        return Err(DatasetError::Parse {
            path: entries_path,
            line: 0,
            reason: format!(
                "header declares {} studies, found {}",
                meta.studies,
                entries.len()
            ),
        });
    }
    let splits = parse_splits(&splits_text).map_err(|reason| DatasetError::Parse {
        path: splits_path,
        line: 0,
        reason,
    })?;
    let manifest = Manifest {
        format_version: meta.format_version,
        seed: meta.seed,
        entries,
        splits,
    };
    manifest.check_partition()?;
    for e in &manifest.entries {
        for region in RegionId::ALL {
            if !e.masks.contains_key(&region) {
                return Err(DatasetError::MissingRegion(region).in_study(&e.study_id));
            }
        }
        for rel in e.referenced_files() {
            let p = dir.join(rel);
            if !p.is_file() {
                return Err(DatasetError::BrokenReference {
                    study_id: e.study_id.clone(),
                    path: p,
                });
            }
        }
    }
    Ok(manifest)
}
