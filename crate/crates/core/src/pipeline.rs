//! The pipeline commands behind the CLI.
//!
//! Output layout under the configured output directory:
//! `manifest.jsonl`, `tex/`, `images/`, `quarantine.jsonl`, `augmented/`,
//! `vocab.txt`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::assemble::{assemble_document, AssembleError};
use crate::augment::{AugmentError, Augmenter};
use crate::bpe::{self, BpeError, BpeVocab};
use crate::config::PipelineConfig;
use crate::corpus::{load_corpus_paths, CorpusError};
use crate::manifest::{self, Manifest, ManifestError, ManifestHeader, ManifestRecord, MixSummary};
use crate::metrics::{self, MetricsError, MetricsReport};
use crate::mixer::{chunk, mix, MixError};
use crate::render::{batch_render, tool_version, RenderError, RenderInput, RenderOutcome};
use crate::seed::{derive, stage};
use crate::segment::{Language, ProvenanceHistogram};

pub const TEX_DIR: &str = "tex";
pub const IMAGE_DIR: &str = "images";
pub const AUGMENTED_DIR: &str = "augmented";
pub const VOCAB_FILE: &str = "vocab.txt";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Mix(#[from] MixError),
    #[error(transparent)]
    Assemble(#[from] AssembleError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Bpe(#[from] BpeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::Io {
        path: path.to_owned(),
        message: e.to_string(),
    }
}

pub fn sample_id(index: usize) -> String {
    format!("s{index:06}")
}

fn tool_versions(cfg: &PipelineConfig) -> BTreeMap<String, Option<String>> {
    BTreeMap::from([
        ("xelatex".to_string(), tool_version(&cfg.tools.xelatex)),
        ("rasterizer".to_string(), tool_version(&cfg.tools.rasterizer)),
    ])
}

pub fn manifest_path(cfg: &PipelineConfig) -> PathBuf {
    cfg.output_dir.join(manifest::MANIFEST_FILE)
}

/// Mixes the corpus, packs samples, assembles documents and writes the
/// `.tex` files and the manifest.
pub fn synth(cfg: &PipelineConfig) -> Result<Manifest, PipelineError> {
    let formulas = cfg.formulas_path();
    let corpus = load_corpus_paths(&cfg.corpus_paths(), formulas.as_deref())?;
    let mixed = mix(corpus.segments.iter().cloned(), &corpus.lexicons, &cfg.mix)?;
    let chunks = chunk(mixed.segments.iter().cloned(), cfg.mix.sample_token_budget)?;
    for q in &chunks.quarantined {
        log::warn!("dropping oversized unit: {q}");
    }

    let out = &cfg.output_dir;
    let tex_dir = out.join(TEX_DIR);
    if tex_dir.exists() {
        fs::remove_dir_all(&tex_dir).map_err(io_err(&tex_dir))?;
    }
    fs::create_dir_all(&tex_dir).map_err(io_err(&tex_dir))?;

    let page = cfg.page();
    let mut records = Vec::with_capacity(chunks.samples.len());
    for (i, sample) in chunks.samples.iter().enumerate() {
        let id = sample_id(i);
        let languages = sample.languages();
        let preamble = cfg
            .preambles
            .choose(&languages, derive(cfg.seed, stage::ASSEMBLE, i as u64))?;
        let doc = assemble_document(sample, &cfg.preambles, &preamble.id, &page)?;
        let rel = PathBuf::from(TEX_DIR).join(format!("{id}.tex"));
        let abs = out.join(&rel);
        fs::write(&abs, &doc.source).map_err(io_err(&abs))?;
        records.push(ManifestRecord {
            sample_id: id,
            tex_path: rel,
            image_path: None,
            token_count: crate::lexer::count_tokens(&doc.body),
            ground_truth: doc.body,
            provenance_histogram: sample.histogram(),
            languages,
            preamble_id: doc.preamble_id,
            augment_seed: None,
            augmented_image_path: None,
        });
    }

    let mut header = ManifestHeader::new(&cfg.hash, cfg.seed, cfg.mix.sample_token_budget);
    header.tool_versions = tool_versions(cfg);
    header.mix = MixSummary {
        total_tokens: mixed.histogram.total(),
        provenance: mixed.histogram,
        realized_real_fraction: mixed.realized_real_fraction(),
        perturb_counts: mixed.perturb_counts,
        rejected_fragments: corpus.rejected.len(),
        oversized_units: chunks.quarantined.len(),
    };
    let m = Manifest { header, records };
    m.write(&manifest_path(cfg))?;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RenderSummary {
    pub samples: usize,
    pub images: usize,
    pub quarantined: usize,
}

/// Renders every record; images and `quarantine.jsonl` go next to the
/// manifest, which is rewritten with image paths.
pub fn render(
    cfg: &PipelineConfig,
    manifest_path: &Path,
    workers: Option<usize>,
) -> Result<RenderSummary, PipelineError> {
    let mut m = Manifest::read(manifest_path)?;
    let out_dir = manifest_path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let inputs: Vec<RenderInput> = m
        .records
        .iter()
        .map(|r| RenderInput {
            sample_id: r.sample_id.clone(),
            tex_path: manifest::resolve(manifest_path, &r.tex_path),
        })
        .collect();
    let outcomes = batch_render(
        &inputs,
        out_dir,
        workers.unwrap_or(cfg.workers),
        &cfg.raster,
        &cfg.tools,
    )?;
    let mut summary = RenderSummary {
        samples: outcomes.len(),
        images: 0,
        quarantined: 0,
    };
    for (r, o) in m.records.iter_mut().zip(&outcomes) {
        match o {
            RenderOutcome::Image(_) => {
                r.image_path = Some(PathBuf::from(IMAGE_DIR).join(format!("{}.png", r.sample_id)));
                summary.images += 1;
            }
            RenderOutcome::Quarantined(q) => {
                log::warn!("quarantined {} at {}", q.sample_id, q.stage);
                r.image_path = None;
                summary.quarantined += 1;
            }
        }
    }
    m.header.stage = "render".into();
    m.header.tool_versions = tool_versions(cfg);
    m.write(manifest_path)?;
    Ok(summary)
}

/// Writes an augmented copy of every rendered image and records its seed.
pub fn augment(cfg: &PipelineConfig, manifest_path: &Path) -> Result<usize, PipelineError> {
    let mut m = Manifest::read(manifest_path)?;
    let augmenter = Augmenter::new(cfg.augment.clone())?;
    let aug_dir = manifest::resolve(manifest_path, Path::new(AUGMENTED_DIR));
    fs::create_dir_all(&aug_dir).map_err(io_err(&aug_dir))?;
    let results: Vec<Option<(u64, PathBuf)>> = m
        .records
        .par_iter()
        .enumerate()
        .map(|(i, r)| -> Result<_, PipelineError> {
            let Some(img_rel) = &r.image_path else {
                return Ok(None);
            };
            let src = manifest::resolve(manifest_path, img_rel);
            let img = image::open(&src)
                .map_err(|e| PipelineError::Io {
                    path: src.clone(),
                    message: e.to_string(),
                })?
                .into_luma8();
            let seed = derive(cfg.seed, stage::AUGMENT, i as u64);
            let rel = PathBuf::from(AUGMENTED_DIR).join(format!("{}.png", r.sample_id));
            let dst = manifest::resolve(manifest_path, &rel);
            augmenter.apply(&img, seed).save(&dst).map_err(|e| PipelineError::Io {
                path: dst.clone(),
                message: e.to_string(),
            })?;
            Ok(Some((seed, rel)))
        })
        .collect::<Result<_, _>>()?;
    let mut n = 0;
    for (r, res) in m.records.iter_mut().zip(results) {
        if let Some((seed, rel)) = res {
            r.augment_seed = Some(seed);
            r.augmented_image_path = Some(rel);
            n += 1;
        }
    }
    m.header.stage = "augment".into();
    m.write(manifest_path)?;
    Ok(n)
}

/// Trains the BPE vocabulary on manifest ground truths and writes it to
/// `out` (default: `vocab.txt` beside the manifest). A corpus too small for
/// the requested size yields the partial vocabulary with a warning.
pub fn train_bpe(
    cfg: &PipelineConfig,
    manifest_path: &Path,
    out: Option<&Path>,
) -> Result<(BpeVocab, PathBuf), PipelineError> {
    let m = Manifest::read(manifest_path)?;
    let vocab = bpe::train_lenient(
        m.records.iter().map(|r| r.ground_truth.as_str()),
        cfg.bpe.vocab_size,
    )?;
    let path = out.map_or_else(
        || manifest::resolve(manifest_path, Path::new(VOCAB_FILE)),
        Path::to_owned,
    );
    fs::write(&path, vocab.to_text()).map_err(io_err(&path))?;
    Ok((vocab, path))
}

/// Scores predictions against the manifest. Only rendered records are
/// scored when any record has an image; otherwise every record is.
pub fn eval(predictions_path: &Path, manifest_path: &Path) -> Result<MetricsReport, PipelineError> {
    let m = Manifest::read(manifest_path)?;
    let preds = manifest::read_predictions(predictions_path)?;
    let rendered = m.records.iter().any(|r| r.image_path.is_some());
    let truths: Vec<(String, String)> = m
        .records
        .iter()
        .filter(|r| !rendered || r.image_path.is_some())
        .map(|r| (r.sample_id.clone(), r.ground_truth.clone()))
        .collect();
    Ok(metrics::evaluate(&preds, &truths)?)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TokenStats {
    pub total: u64,
    pub min: usize,
    pub max: usize,
    pub mean: f64,
    /// Sample counts per 32-token bucket, keyed by bucket start.
    pub histogram: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Stats {
    pub samples: usize,
    pub rendered: usize,
    pub augmented: usize,
    pub tokens: TokenStats,
    pub provenance: ProvenanceHistogram,
    pub real_fraction: f64,
    /// Samples containing each language.
    pub languages: BTreeMap<Language, usize>,
    pub preambles: BTreeMap<String, usize>,
}

pub const TOKEN_BUCKET: usize = 32;

pub fn stats(manifest: &Manifest) -> Stats {
    let mut s = Stats::default();
    let recs = &manifest.records;
    s.samples = recs.len();
    s.tokens.min = recs.iter().map(|r| r.token_count).min().unwrap_or(0);
    s.tokens.max = recs.iter().map(|r| r.token_count).max().unwrap_or(0);
    for r in recs {
        s.rendered += usize::from(r.image_path.is_some());
        s.augmented += usize::from(r.augmented_image_path.is_some());
        s.tokens.total += r.token_count as u64;
        *s.tokens
            .histogram
            .entry(r.token_count / TOKEN_BUCKET * TOKEN_BUCKET)
            .or_default() += 1;
        s.provenance.merge(&r.provenance_histogram);
        for &l in &r.languages {
            *s.languages.entry(l).or_default() += 1;
        }
        *s.preambles.entry(r.preamble_id.clone()).or_default() += 1;
    }
    if s.samples > 0 {
        s.tokens.mean = s.tokens.total as f64 / s.samples as f64;
    }
    s.real_fraction = s.provenance.real_fraction();
    s
}
