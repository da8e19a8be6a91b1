//! Pipeline configuration loaded from TOML.
//!
//! Relative paths are resolved against the directory holding the config
//! file. The master seed has no default.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::assemble::{PageGeometry, PreambleRegistry, PreambleTemplate};
use crate::augment::{AugmentError, AugmentSpec};
use crate::bpe::DEFAULT_VOCAB_SIZE;
use crate::mixer::{MixError, MixPlan};
use crate::render::{RasterSpec, ToolPaths};
use crate::segment::Language;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("`seed` is required")]
    MissingSeed,
    #[error("corpus path for `{language}` does not exist: {path}")]
    MissingCorpusPath { language: Language, path: PathBuf },
    #[error("corpus root is not a directory: {0}")]
    MissingCorpusRoot(PathBuf),
    #[error("formula file does not exist: {0}")]
    MissingFormulas(PathBuf),
    #[error("no corpus configured: set [corpus] root or paths")]
    NoCorpus,
    #[error("watermark image does not exist: {0}")]
    MissingWatermark(PathBuf),
    #[error("raster size and dpi must be positive")]
    BadRaster,
    #[error("workers must be at least 1")]
    BadWorkers,
    #[error("preamble ids must be unique and non-empty")]
    BadPreambles,
    #[error(transparent)]
    Mix(#[from] MixError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Directory in the standard layout (`en/`, `zh/`, …, `formulas.txt`).
    pub root: Option<PathBuf>,
    /// Explicit file or directory per language; overrides `root` entries.
    pub paths: BTreeMap<Language, PathBuf>,
    pub formulas: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BpeConfig {
    pub vocab_size: usize,
}

impl Default for BpeConfig {
    fn default() -> Self {
        BpeConfig {
            vocab_size: DEFAULT_VOCAB_SIZE,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    #[serde(default = "default_output")]
    output_dir: PathBuf,
    #[serde(default = "default_workers")]
    workers: usize,
    #[serde(default)]
    corpus: CorpusConfig,
    #[serde(default)]
    mix: MixPlan,
    #[serde(default)]
    raster: RasterSpec,
    #[serde(default)]
    augment: AugmentSpec,
    #[serde(default)]
    tools: ToolPaths,
    #[serde(default)]
    bpe: BpeConfig,
    #[serde(default)]
    preambles: Vec<PreambleTemplate>,
}

fn default_output() -> PathBuf {
    "out".into()
}

fn default_workers() -> usize {
    4
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub workers: usize,
    pub corpus: CorpusConfig,
    /// Mixing plan; its `seed` is the master seed.
    pub mix: MixPlan,
    pub raster: RasterSpec,
    pub augment: AugmentSpec,
    pub tools: ToolPaths,
    pub bpe: BpeConfig,
    pub preambles: PreambleRegistry,
    /// SHA-256 of the config file bytes.
    pub hash: String,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_owned()
    } else {
        base.join(p)
    }
}

/// Resolves tool paths that name a file relative to the config; bare
/// program names are left for `PATH` lookup.
fn resolve_tool(base: &Path, p: &Path) -> PathBuf {
    if p.components().count() > 1 {
        resolve(base, p)
    } else {
        p.to_owned()
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let bytes = fs::read(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let text = String::from_utf8(bytes.clone()).map_err(|_| ConfigError::Parse {
            path: path.to_owned(),
            message: "not valid UTF-8".into(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let base = if base.as_os_str().is_empty() {
            Path::new(".")
        } else {
            base
        };
        let mut cfg = Self::from_toml(&text, base).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_owned(),
                message,
            },
            other => other,
        })?;
        cfg.hash = hex::encode(Sha256::digest(&bytes));
        Ok(cfg)
    }

    /// Parses and validates config text, resolving paths against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::new(),
            message: e.message().to_owned(),
        })?;
        let seed = raw.seed.ok_or(ConfigError::MissingSeed)?;
        let mut corpus = raw.corpus;
        corpus.root = corpus.root.map(|p| resolve(base, &p));
        corpus.paths = corpus
            .paths
            .into_iter()
            .map(|(l, p)| (l, resolve(base, &p)))
            .collect();
        corpus.formulas = corpus.formulas.map(|p| resolve(base, &p));
        let mut mix = raw.mix;
        mix.seed = seed;
        let mut augment = raw.augment;
        if let Some(w) = &mut augment.watermark {
            w.path = resolve(base, &w.path);
        }
        let mut tools = raw.tools;
        tools.xelatex = resolve_tool(base, &tools.xelatex);
        tools.rasterizer = resolve_tool(base, &tools.rasterizer);
        let preambles = if raw.preambles.is_empty() {
            PreambleRegistry::default()
        } else {
            PreambleRegistry {
                templates: raw.preambles,
            }
        };
        let cfg = PipelineConfig {
            seed,
            output_dir: resolve(base, &raw.output_dir),
            workers: raw.workers,
            corpus,
            mix,
            raster: raw.raster,
            augment,
            tools,
            bpe: raw.bpe,
            preambles,
            hash: hex::encode(Sha256::digest(text.as_bytes())),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let c = &self.corpus;
        if c.root.is_none() && c.paths.is_empty() {
            return Err(ConfigError::NoCorpus);
        }
        if let Some(root) = &c.root {
            if !root.is_dir() {
                return Err(ConfigError::MissingCorpusRoot(root.clone()));
            }
        }
        for (&language, path) in &c.paths {
            if !path.exists() {
                return Err(ConfigError::MissingCorpusPath {
                    language,
                    path: path.clone(),
                });
            }
        }
        if let Some(f) = &c.formulas {
            if !f.is_file() {
                return Err(ConfigError::MissingFormulas(f.clone()));
            }
        }
        if self.workers == 0 {
            return Err(ConfigError::BadWorkers);
        }
        let r = &self.raster;
        if r.width_px == 0 || r.height_px == 0 || r.dpi == 0 {
            return Err(ConfigError::BadRaster);
        }
        self.mix.validate()?;
        self.augment.validate()?;
        if let Some(w) = &self.augment.watermark {
            if !w.path.is_file() {
                return Err(ConfigError::MissingWatermark(w.path.clone()));
            }
        }
        let mut ids: Vec<&str> = self.preambles.templates.iter().map(|t| t.id.as_str()).collect();
        ids.sort_unstable();
        let n = ids.len();
        ids.dedup();
        if ids.len() != n || ids.iter().any(|i| i.is_empty()) {
            return Err(ConfigError::BadPreambles);
        }
        Ok(())
    }

    /// Per-language corpus paths after merging `root` with explicit entries.
    pub fn corpus_paths(&self) -> BTreeMap<Language, PathBuf> {
        let mut out = BTreeMap::new();
        if let Some(root) = &self.corpus.root {
            for l in Language::ALL {
                let p = root.join(l.code());
                if p.is_dir() {
                    out.insert(l, p);
                }
            }
        }
        out.extend(self.corpus.paths.clone());
        out
    }

    pub fn formulas_path(&self) -> Option<PathBuf> {
        self.corpus.formulas.clone().or_else(|| {
            let p = self.corpus.root.as_ref()?.join(crate::corpus::FORMULAS_FILE);
            p.is_file().then_some(p)
        })
    }

    pub fn page(&self) -> PageGeometry {
        PageGeometry::for_raster(self.raster.width_px, self.raster.height_px, self.raster.dpi)
    }
}
