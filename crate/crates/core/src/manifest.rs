//! Manifest persistence.
//!
//! A manifest is JSONL. The first line is a header object with
//! `"kind": "header"`; every following line is one [`ManifestRecord`].
//! Paths inside records are relative to the manifest's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perturb::PerturbCounts;
use crate::segment::{Language, ProvenanceHistogram};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: missing header line")]
    MissingHeader { path: PathBuf },
    #[error("{path}: duplicate sample id `{id}`")]
    DuplicateId { path: PathBuf, id: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MixSummary {
    pub total_tokens: u64,
    pub provenance: ProvenanceHistogram,
    pub realized_real_fraction: f64,
    pub perturb_counts: PerturbCounts,
    /// Corpus fragments skipped at ingestion.
    pub rejected_fragments: usize,
    /// Units too large for any sample.
    pub oversized_units: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    /// Always `"header"`.
    pub kind: String,
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub sample_token_budget: usize,
    /// Last stage that rewrote the manifest.
    pub stage: String,
    /// Tool name to version string, `null` when not installed.
    pub tool_versions: BTreeMap<String, Option<String>>,
    pub mix: MixSummary,
}

impl ManifestHeader {
    pub fn new(config_hash: &str, seed: u64, budget: usize) -> Self {
        ManifestHeader {
            kind: "header".into(),
            format_version: FORMAT_VERSION,
            config_hash: config_hash.into(),
            seed,
            sample_token_budget: budget,
            stage: "synth".into(),
            tool_versions: BTreeMap::new(),
            mix: MixSummary::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub sample_id: String,
    pub tex_path: PathBuf,
    #[serde(default)]
    pub image_path: Option<PathBuf>,
    /// The document body: exactly what the image shows, perturbations
    /// included.
    pub ground_truth: String,
    pub token_count: usize,
    pub provenance_histogram: ProvenanceHistogram,
    pub languages: Vec<Language>,
    pub preamble_id: String,
    #[serde(default)]
    pub augment_seed: Option<u64>,
    #[serde(default)]
    pub augmented_image_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn to_jsonl(&self) -> String {
        let mut s = serde_json::to_string(&self.header).expect("header serializes");
        s.push('\n');
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("record serializes"));
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, ManifestError> {
        let err = |line: usize, message: String| ManifestError::Parse {
            path: path.to_owned(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (i, first) = lines.next().ok_or_else(|| ManifestError::MissingHeader {
            path: path.to_owned(),
        })?;
        let header: ManifestHeader =
            serde_json::from_str(first).map_err(|e| err(i + 1, e.to_string()))?;
        if header.kind != "header" {
            return Err(ManifestError::MissingHeader {
                path: path.to_owned(),
            });
        }
        let mut records = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, l) in lines {
            let r: ManifestRecord = serde_json::from_str(l).map_err(|e| err(i + 1, e.to_string()))?;
            if !seen.insert(r.sample_id.clone()) {
                return Err(ManifestError::DuplicateId {
                    path: path.to_owned(),
                    id: r.sample_id,
                });
            }
            records.push(r);
        }
        Ok(Manifest { header, records })
    }

    pub fn read(path: &Path) -> Result<Self, ManifestError> {
        let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::parse(&text, path)
    }

    /// Writes atomically via a sibling temporary file.
    pub fn write(&self, path: &Path) -> Result<(), ManifestError> {
        let io = |source| ManifestError::Io {
            path: path.to_owned(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io)?;
        }
        let tmp = path.with_extension("jsonl.tmp");
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }
}

/// Resolves a record path against the manifest's directory.
pub fn resolve(manifest_path: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        return p.to_owned();
    }
    manifest_path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .map_or_else(|| p.to_owned(), |d| d.join(p))
}

/// One prediction line: `{"sample_id": ..., "text": ...}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    pub text: String,
}

pub fn read_predictions(path: &Path) -> Result<BTreeMap<String, String>, ManifestError> {
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut out = BTreeMap::new();
    for (i, l) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let p: Prediction = serde_json::from_str(l).map_err(|e| ManifestError::Parse {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if out.insert(p.sample_id.clone(), p.text).is_some() {
            return Err(ManifestError::DuplicateId {
                path: path.to_owned(),
                id: p.sample_id,
            });
        }
    }
    Ok(out)
}
