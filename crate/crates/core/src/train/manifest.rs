use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Result, TrainError};

pub const HIDDEN_REFERENCE: &str = "hidden_reference";
pub const ANCHOR_3K5: &str = "anchor_3.5k";
pub const ANCHOR_7K: &str = "anchor_7k";

/// One listener's score for one (excerpt, system) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListeningRecord {
    pub excerpt_id: String,
    pub system_id: String,
    pub listener_id: String,
    pub score: f64,
    pub audio_path: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub records: Vec<ListeningRecord>,
    /// Directory that relative audio paths resolve against.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(records: Vec<ListeningRecord>, root: impl Into<PathBuf>) -> Self {
        DatasetManifest {
            records,
            root: root.into(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr =
            csv::Reader::from_path(path).map_err(|e| TrainError::Manifest(format!("{}: {e}", path.display())))?;
        let headers = rdr.headers().map_err(|e| TrainError::Manifest(e.to_string()))?.clone();
        let want = ["excerpt_id", "system_id", "listener_id", "score", "audio_path"];
        if headers.iter().collect::<Vec<_>>() != want {
            return Err(TrainError::Manifest(format!(
                "{}: header must be {}",
                path.display(),
                want.join(",")
            )));
        }
        let mut records = Vec::new();
        for (i, row) in rdr.deserialize().enumerate() {
            let r: ListeningRecord =
                row.map_err(|e| TrainError::Manifest(format!("{} row {}: {e}", path.display(), i + 2)))?;
            records.push(r);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(DatasetManifest { records, root })
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r).expect("records serialize");
        }
        if self.records.is_empty() {
            w.write_record(["excerpt_id", "system_id", "listener_id", "score", "audio_path"])
                .expect("header writes");
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn resolve(&self, audio_path: &str) -> PathBuf {
        let p = Path::new(audio_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Checks record contents and, if `check_files`, that audio exists.
    pub fn validate(&self, check_files: bool) -> Result<()> {
        if self.records.is_empty() {
            return Err(TrainError::Manifest("manifest has no records".into()));
        }
        for (i, r) in self.records.iter().enumerate() {
            let row = i + 2;
            if r.excerpt_id.is_empty() || r.system_id.is_empty() || r.listener_id.is_empty() {
                return Err(TrainError::Manifest(format!("row {row}: empty id")));
            }
            if !(0.0..=100.0).contains(&r.score) {
                return Err(TrainError::Manifest(format!(
                    "row {row}: score {} outside [0, 100]",
                    r.score
                )));
            }
            if check_files && !self.resolve(&r.audio_path).is_file() {
                return Err(TrainError::Manifest(format!(
                    "row {row}: missing audio {}",
                    r.audio_path
                )));
            }
        }
        for ((e, s), paths) in self.items() {
            let first = &self.records[paths[0]].audio_path;
            if paths.iter().any(|&i| &self.records[i].audio_path != first) {
                return Err(TrainError::Manifest(format!("{e}/{s}: records disagree on audio_path")));
            }
        }
        Ok(())
    }

    /// Record indices grouped by (excerpt, system), in sorted key order.
    pub fn items(&self) -> BTreeMap<(String, String), Vec<usize>> {
        let mut m: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            m.entry((r.excerpt_id.clone(), r.system_id.clone()))
                .or_default()
                .push(i);
        }
        m
    }

    pub fn excerpts(&self) -> Vec<String> {
        let mut e: Vec<String> = self.records.iter().map(|r| r.excerpt_id.clone()).collect();
        e.sort();
        e.dedup();
        e
    }

    pub fn subset(&self, excerpts: &[String]) -> DatasetManifest {
        DatasetManifest {
            records: self
                .records
                .iter()
                .filter(|r| excerpts.contains(&r.excerpt_id))
                .cloned()
                .collect(),
            root: self.root.clone(),
        }
    }
}
