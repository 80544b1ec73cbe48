//! Dataset manifests: one JSON object per line, one line per tracklet.
//!
//! A manifest names every tracklet of a split together with its identity,
//! camera, frame count, and the path of its frame archive. Paths are stored
//! relative to the manifest file so a dataset directory can be moved as a
//! unit.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Unique within one manifest.
    pub tracklet_id: usize,
    pub identity: usize,
    pub camera: usize,
    /// Frame archive location, relative to the manifest file.
    pub path: String,
    pub frames: usize,
}

#[derive(Clone, Debug)]
pub struct Manifest {
    entries: Vec<ManifestEntry>,
    /// Directory the entry paths resolve against.
    root: PathBuf,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>, root: impl Into<PathBuf>) -> Result<Manifest> {
        let m = Manifest { entries, root: root.into() };
        m.check()?;
        Ok(m)
    }

    fn check(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for e in &self.entries {
            if e.frames == 0 {
                return Err(Error::Dataset(format!("tracklet {} has zero frames", e.tracklet_id)));
            }
            if e.path.is_empty() {
                return Err(Error::Dataset(format!("tracklet {} has an empty path", e.tracklet_id)));
            }
            if Path::new(&e.path).is_absolute() {
                return Err(Error::Dataset(format!(
                    "tracklet {} path {:?} must be relative to the manifest",
                    e.tracklet_id, e.path
                )));
            }
            if !ids.insert(e.tracklet_id) {
                return Err(Error::Dataset(format!("tracklet_id {} repeated", e.tracklet_id)));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| {
                Error::Dataset(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
            entries.push(entry);
        }
        Manifest::new(entries, root)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for e in &self.entries {
            // entries are plain structs; serialization cannot fail
            out.push_str(&serde_json::to_string(e).expect("manifest entry serializes"));
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Absolute location of one entry's frame archive.
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    /// Distinct identities in first-appearance order.
    pub fn identities(&self) -> Vec<usize> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for e in &self.entries {
            if seen.insert(e.identity) {
                out.push(e.identity);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: usize, identity: usize, camera: usize) -> ManifestEntry {
        ManifestEntry {
            tracklet_id: id,
            identity,
            camera,
            path: format!("tracklets/{id}.fgrd"),
            frames: 8,
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        let m = Manifest::new(vec![entry(0, 3, 0), entry(1, 3, 1), entry(2, 5, 0)], dir.path())
            .unwrap();
        m.save(&path).unwrap();
        let back = Manifest::load(&path).unwrap();
        assert_eq!(back.entries(), m.entries());
        assert_eq!(back.root(), dir.path());
    }

    #[test]
    fn resolve_joins_against_the_manifest_directory() {
        let m = Manifest::new(vec![entry(7, 0, 0)], "/data/run1").unwrap();
        assert_eq!(m.resolve(&m.entries()[0]), Path::new("/data/run1/tracklets/7.fgrd"));
    }

    #[test]
    fn rejects_duplicate_tracklet_ids() {
        assert!(Manifest::new(vec![entry(1, 0, 0), entry(1, 2, 0)], ".").is_err());
    }

    #[test]
    fn rejects_zero_frames_and_bad_paths() {
        let mut e = entry(0, 0, 0);
        e.frames = 0;
        assert!(Manifest::new(vec![e], ".").is_err());

        let mut e = entry(0, 0, 0);
        e.path = String::new();
        assert!(Manifest::new(vec![e], ".").is_err());

        let mut e = entry(0, 0, 0);
        e.path = "/etc/passwd".to_string();
        assert!(Manifest::new(vec![e], ".").is_err());
    }

    #[test]
    fn load_rejects_malformed_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");

        std::fs::write(&path, "{\"tracklet_id\":0}\n").unwrap();
        assert!(Manifest::load(&path).is_err()); // missing fields

        std::fs::write(&path, "not json\n").unwrap();
        assert!(Manifest::load(&path).is_err());

        // negative identity must not silently wrap
        std::fs::write(
            &path,
            "{\"tracklet_id\":0,\"identity\":-1,\"camera\":0,\"path\":\"a.fgrd\",\"frames\":4}\n",
        )
        .unwrap();
        assert!(Manifest::load(&path).is_err());

        // unknown fields are typos, not extensions
        std::fs::write(
            &path,
            "{\"tracklet_id\":0,\"identity\":1,\"camera\":0,\"path\":\"a.fgrd\",\"frames\":4,\"camra\":2}\n",
        )
        .unwrap();
        assert!(Manifest::load(&path).is_err());
    }

    #[test]
    fn identities_in_first_appearance_order() {
        let m = Manifest::new(
            vec![entry(0, 9, 0), entry(1, 2, 0), entry(2, 9, 1), entry(3, 4, 0)],
            ".",
        )
        .unwrap();
        assert_eq!(m.identities(), vec![9, 2, 4]);
    }
}
