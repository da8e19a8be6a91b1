use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use mixforge::config::PipelineConfig;
use mixforge::manifest::Manifest;
use mixforge::pipeline;

/// Synthesize, render, augment and score LaTeX OCR datasets.
#[derive(Parser)]
#[command(name = "mixforge", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Mix the corpus into token-budgeted samples and write .tex files plus a manifest.
    Synth {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Compile and rasterize every sample in the manifest.
    Render {
        #[arg(short, long)]
        config: PathBuf,
        /// Defaults to the manifest in the configured output directory.
        #[arg(short, long)]
        manifest: Option<PathBuf>,
        #[arg(short, long)]
        workers: Option<usize>,
    },
    /// Write augmented copies of rendered images.
    Augment {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        manifest: Option<PathBuf>,
    },
    /// Train the BPE vocabulary on manifest ground truths.
    TrainBpe {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        manifest: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Score a predictions JSONL file against a manifest.
    Eval {
        #[arg(short, long)]
        predictions: PathBuf,
        #[arg(short, long)]
        manifest: PathBuf,
        /// Label for the table row.
        #[arg(long, default_value = "model")]
        label: String,
        #[arg(long)]
        json: bool,
    },
    /// Token, provenance and language histograms of a manifest.
    Stats {
        #[arg(short, long)]
        manifest: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

fn load_config(path: &Path) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(path).with_context(|| format!("config {}", path.display()))?;
    cfg.tools = cfg.tools.with_env_overrides();
    Ok(cfg)
}

fn manifest_or_default(cfg: &PipelineConfig, m: Option<PathBuf>) -> PathBuf {
    m.unwrap_or_else(|| pipeline::manifest_path(cfg))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Synth { config } => {
            let cfg = load_config(&config)?;
            let m = pipeline::synth(&cfg)?;
            let mix = &m.header.mix;
            println!(
                "{} samples, {} tokens, real fraction {:.4}, written to {}",
                m.records.len(),
                mix.total_tokens,
                mix.realized_real_fraction,
                pipeline::manifest_path(&cfg).display()
            );
        }
        Cmd::Render {
            config,
            manifest,
            workers,
        } => {
            let cfg = load_config(&config)?;
            let path = manifest_or_default(&cfg, manifest);
            let s = pipeline::render(&cfg, &path, workers)?;
            println!(
                "{} samples: {} images, {} quarantined",
                s.samples, s.images, s.quarantined
            );
        }
        Cmd::Augment { config, manifest } => {
            let cfg = load_config(&config)?;
            let path = manifest_or_default(&cfg, manifest);
            let n = pipeline::augment(&cfg, &path)?;
            println!("{n} images augmented");
        }
        Cmd::TrainBpe {
            config,
            manifest,
            out,
        } => {
            let cfg = load_config(&config)?;
            let path = manifest_or_default(&cfg, manifest);
            let (vocab, written) = pipeline::train_bpe(&cfg, &path, out.as_deref())?;
            println!(
                "vocabulary of {} ({} merges) written to {}",
                vocab.len(),
                vocab.merges().len(),
                written.display()
            );
        }
        Cmd::Eval {
            predictions,
            manifest,
            label,
            json,
        } => {
            let report = pipeline::eval(&predictions, &manifest)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", report.table(&label));
                println!("{}", report.row());
            }
        }
        Cmd::Stats { manifest, json } => {
            let m = Manifest::read(&manifest)?;
            let s = pipeline::stats(&m);
            if json {
                println!("{}", serde_json::to_string_pretty(&s)?);
            } else {
                println!("samples      {}", s.samples);
                println!("rendered     {}", s.rendered);
                println!("augmented    {}", s.augmented);
                println!(
                    "tokens       total {} min {} max {} mean {:.1}",
                    s.tokens.total, s.tokens.min, s.tokens.max, s.tokens.mean
                );
                let p = &s.provenance;
                println!(
                    "provenance   real {} pseudo {} perturbed {} (real fraction {:.4})",
                    p.real, p.pseudo, p.perturbed, s.real_fraction
                );
                for (l, n) in &s.languages {
                    println!("language     {l} {n}");
                }
                for (id, n) in &s.preambles {
                    println!("preamble     {id} {n}");
                }
                for (b, n) in &s.tokens.histogram {
                    println!("tokens {:>3}-{:<3} {n}", b, b + pipeline::TOKEN_BUCKET - 1);
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("mixforge: error: {msg}");
            ExitCode::FAILURE
        }
    }
}
