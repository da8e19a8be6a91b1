//! Compiling assembled documents with XeLaTeX and rasterizing them to
//! fixed-size grayscale images.
//!
//! Both tools run as subprocesses with a timeout. Per-sample failures are
//! quarantined; only a missing compiler aborts a batch.

use std::ffi::OsStr;
use std::fs::{self, File};
use std::io;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Duration;

use image::{GrayImage, Luma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

pub const XELATEX_ENV: &str = "MIXFORGE_XELATEX";
pub const RASTERIZER_ENV: &str = "MIXFORGE_RASTERIZER";
pub const QUARANTINE_FILE: &str = "quarantine.jsonl";
/// Pixels darker than this count as ink.
pub const INK_THRESHOLD: u8 = 250;
const EXCERPT_LINES: usize = 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RenderError {
    #[error("TeX compiler `{0}` not found")]
    CompilerMissing(String),
    #[error("rasterizer `{0}` not found")]
    RasterToolMissing(String),
    #[error("compilation failed:\n{0}")]
    CompileFailed(String),
    #[error("output has {0} pages, expected 1")]
    MultiPage(u32),
    #[error("{tool} timed out after {secs} s")]
    Timeout { tool: String, secs: u64 },
    #[error("rasterized page has no ink")]
    PageEmpty,
    #[error("rasterization failed: {0}")]
    RasterFailed(String),
    #[error("{0}")]
    Io(String),
}

impl From<io::Error> for RenderError {
    fn from(e: io::Error) -> Self {
        RenderError::Io(e.to_string())
    }
}

impl RenderError {
    /// Text for a quarantine record; never empty.
    pub fn log_excerpt(&self) -> String {
        match self {
            RenderError::CompileFailed(log) if !log.trim().is_empty() => log.clone(),
            other => other.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RasterSpec {
    pub width_px: u32,
    pub height_px: u32,
    pub dpi: u32,
    pub pad_color: u8,
    /// White border kept above and left of the first ink when cropping.
    pub anchor_margin_px: u32,
}

impl Default for RasterSpec {
    fn default() -> Self {
        RasterSpec {
            width_px: 500,
            height_px: 400,
            dpi: 100,
            pad_color: 255,
            anchor_margin_px: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolPaths {
    pub xelatex: PathBuf,
    pub rasterizer: PathBuf,
    pub timeout_secs: u64,
}

impl Default for ToolPaths {
    fn default() -> Self {
        ToolPaths {
            xelatex: "xelatex".into(),
            rasterizer: "pdftoppm".into(),
            timeout_secs: 30,
        }
    }
}

impl ToolPaths {
    /// Applies the `MIXFORGE_XELATEX` / `MIXFORGE_RASTERIZER` overrides.
    pub fn with_env_overrides(mut self) -> Self {
        if let Some(p) = std::env::var_os(XELATEX_ENV) {
            self.xelatex = p.into();
        }
        if let Some(p) = std::env::var_os(RASTERIZER_ENV) {
            self.rasterizer = p.into();
        }
        self
    }

    fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }
}

/// Resolves a program name against `PATH`, or checks an explicit path.
pub fn find_program(program: &Path) -> Option<PathBuf> {
    if program.components().count() > 1 {
        return program.is_file().then(|| program.to_owned());
    }
    let path = std::env::var_os("PATH")?;
    std::env::split_paths(&path)
        .map(|dir| dir.join(program))
        .find(|p| p.is_file())
}

/// First line of `program --version` (or `-v`), for the manifest header.
pub fn tool_version(program: &Path) -> Option<String> {
    let exe = find_program(program)?;
    for flag in ["--version", "-v"] {
        let Ok(out) = Command::new(&exe).arg(flag).stdin(Stdio::null()).output() else {
            continue;
        };
        let text = if out.stdout.is_empty() { out.stderr } else { out.stdout };
        if let Some(line) = String::from_utf8_lossy(&text).lines().find(|l| !l.trim().is_empty()) {
            return Some(line.trim().to_owned());
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Pending,
    Compiled,
    Rasterized,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderJob {
    pub sample_id: String,
    pub tex_path: PathBuf,
    status: JobStatus,
    log_excerpt: Option<String>,
}

impl RenderJob {
    pub fn new(sample_id: impl Into<String>, tex_path: impl Into<PathBuf>) -> Self {
        RenderJob {
            sample_id: sample_id.into(),
            tex_path: tex_path.into(),
            status: JobStatus::Pending,
            log_excerpt: None,
        }
    }

    pub fn status(&self) -> JobStatus {
        self.status
    }

    pub fn log_excerpt(&self) -> Option<&str> {
        self.log_excerpt.as_deref()
    }

    /// Moves forward one step; backward or repeated moves are refused.
    pub fn advance(&mut self, to: JobStatus) -> bool {
        let ok = matches!(
            (self.status, to),
            (JobStatus::Pending, JobStatus::Compiled) | (JobStatus::Compiled, JobStatus::Rasterized)
        );
        if ok {
            self.status = to;
        }
        ok
    }

    pub fn fail(&mut self, excerpt: &str) -> bool {
        if matches!(self.status, JobStatus::Rasterized | JobStatus::Failed) {
            return false;
        }
        self.status = JobStatus::Failed;
        self.log_excerpt = Some(if excerpt.trim().is_empty() {
            "unknown failure".into()
        } else {
            excerpt.to_owned()
        });
        true
    }
}

fn run_with_timeout(
    program: &Path,
    args: &[&OsStr],
    cwd: &Path,
    capture_stem: &str,
    timeout: Duration,
) -> Result<(std::process::ExitStatus, String), RenderError> {
    let stdout_path = cwd.join(format!("{capture_stem}.stdout"));
    let stderr_path = cwd.join(format!("{capture_stem}.stderr"));
    let mut child = Command::new(program)
        .args(args)
        .current_dir(cwd)
        .stdin(Stdio::null())
        .stdout(File::create(&stdout_path)?)
        .stderr(File::create(&stderr_path)?)
        .spawn()?;
    let status = match child.wait_timeout(timeout)? {
        Some(s) => s,
        None => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(RenderError::Timeout {
                tool: program.display().to_string(),
                secs: timeout.as_secs(),
            });
        }
    };
    let mut output = fs::read_to_string(&stdout_path).unwrap_or_default();
    output.push_str(&fs::read_to_string(&stderr_path).unwrap_or_default());
    Ok((status, output))
}

/// The first TeX error with a few lines of context, or the log tail.
pub fn excerpt(log: &str) -> String {
    let lines: Vec<&str> = log.lines().collect();
    let chunk = match lines.iter().position(|l| l.starts_with('!')) {
        Some(i) => &lines[i..(i + EXCERPT_LINES).min(lines.len())],
        None => &lines[lines.len().saturating_sub(EXCERPT_LINES)..],
    };
    chunk.join("\n")
}

/// Page count from the `Output written on x.pdf (N pages, ...)` log line.
pub fn pages_from_log(log: &str) -> Option<u32> {
    let rest = &log[log.find("Output written on")?..];
    let open = rest.find('(')?;
    let n: String = rest[open + 1..]
        .chars()
        .take_while(char::is_ascii_digit)
        .collect();
    n.parse().ok()
}

/// Compiles `tex_path` into `workdir`, returning the single-page PDF.
pub fn compile(tex_path: &Path, workdir: &Path, tools: &ToolPaths) -> Result<PathBuf, RenderError> {
    let exe = find_program(&tools.xelatex)
        .ok_or_else(|| RenderError::CompilerMissing(tools.xelatex.display().to_string()))?;
    let tex_path = fs::canonicalize(tex_path)?;
    fs::create_dir_all(workdir)?;
    // The compiler runs inside `workdir`, so a relative path would not resolve.
    let workdir = &fs::canonicalize(workdir)?;
    let stem = tex_path
        .file_stem()
        .and_then(OsStr::to_str)
        .ok_or_else(|| RenderError::Io(format!("bad file name {}", tex_path.display())))?
        .to_owned();
    let outdir = format!("-output-directory={}", workdir.display());
    let args: [&OsStr; 4] = [
        "-interaction=nonstopmode".as_ref(),
        "-halt-on-error".as_ref(),
        outdir.as_ref(),
        tex_path.as_os_str(),
    ];
    let (status, output) = match run_with_timeout(&exe, &args, workdir, "xelatex", tools.timeout()) {
        Err(RenderError::Io(e)) if !exe.exists() => return Err(RenderError::CompilerMissing(e)),
        r => r?,
    };
    let log = fs::read_to_string(workdir.join(format!("{stem}.log"))).unwrap_or(output);
    let pdf = workdir.join(format!("{stem}.pdf"));
    if !status.success() || !pdf.is_file() {
        let mut e = excerpt(&log);
        if e.trim().is_empty() {
            e = format!("compiler exited with {status}");
        }
        return Err(RenderError::CompileFailed(e));
    }
    match pages_from_log(&log) {
        Some(1) => Ok(pdf),
        Some(n) => Err(RenderError::MultiPage(n)),
        None => Err(RenderError::CompileFailed(format!(
            "no page count in log\n{}",
            excerpt(&log)
        ))),
    }
}

/// Bounding box `(x0, y0, x1, y1)` (exclusive ends) of pixels below
/// [`INK_THRESHOLD`].
pub fn ink_bbox(img: &GrayImage) -> Option<(u32, u32, u32, u32)> {
    let mut bbox: Option<(u32, u32, u32, u32)> = None;
    for (x, y, p) in img.enumerate_pixels() {
        if p.0[0] < INK_THRESHOLD {
            bbox = Some(match bbox {
                None => (x, y, x + 1, y + 1),
                Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x + 1), d.max(y + 1)),
            });
        }
    }
    bbox
}

/// Crops a window of exactly `width_px x height_px` whose top-left sits
/// `anchor_margin_px` above and left of the first ink, padding with
/// `pad_color` where the window leaves the page.
pub fn fit_to_raster(page: &GrayImage, spec: &RasterSpec) -> Result<GrayImage, RenderError> {
    let (x0, y0, _, _) = ink_bbox(page).ok_or(RenderError::PageEmpty)?;
    let ax = x0.saturating_sub(spec.anchor_margin_px);
    let ay = y0.saturating_sub(spec.anchor_margin_px);
    Ok(GrayImage::from_fn(spec.width_px, spec.height_px, |x, y| {
        let (sx, sy) = (ax + x, ay + y);
        if sx < page.width() && sy < page.height() {
            *page.get_pixel(sx, sy)
        } else {
            Luma([spec.pad_color])
        }
    }))
}

/// Rasterizes a single-page PDF at `spec.dpi` and fits it to the raster.
pub fn rasterize(
    pdf: &Path,
    workdir: &Path,
    spec: &RasterSpec,
    tools: &ToolPaths,
) -> Result<GrayImage, RenderError> {
    let exe = find_program(&tools.rasterizer)
        .ok_or_else(|| RenderError::RasterToolMissing(tools.rasterizer.display().to_string()))?;
    let workdir = &fs::canonicalize(workdir)?;
    let pdf = &fs::canonicalize(pdf)?;
    let prefix = workdir.join("page");
    let dpi = spec.dpi.to_string();
    let args: [&OsStr; 6] = [
        "-r".as_ref(),
        dpi.as_ref(),
        "-gray".as_ref(),
        "-singlefile".as_ref(),
        pdf.as_os_str(),
        prefix.as_os_str(),
    ];
    let (status, output) = run_with_timeout(&exe, &args, workdir, "raster", tools.timeout())?;
    let pgm = prefix.with_extension("pgm");
    if !status.success() || !pgm.is_file() {
        return Err(RenderError::RasterFailed(format!(
            "rasterizer exited with {status}: {}",
            excerpt(&output)
        )));
    }
    let page = image::open(&pgm)
        .map_err(|e| RenderError::RasterFailed(e.to_string()))?
        .into_luma8();
    fit_to_raster(&page, spec)
}

/// A sample to render.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderInput {
    pub sample_id: String,
    pub tex_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantineRecord {
    pub sample_id: String,
    pub stage: String,
    pub log_excerpt: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RenderOutcome {
    Image(PathBuf),
    Quarantined(QuarantineRecord),
}

fn render_one(
    input: &RenderInput,
    image_dir: &Path,
    work_root: &Path,
    spec: &RasterSpec,
    tools: &ToolPaths,
) -> Result<RenderOutcome, RenderError> {
    let mut job = RenderJob::new(&input.sample_id, &input.tex_path);
    let workdir = work_root.join(&input.sample_id);
    let quarantine = |job: &mut RenderJob, stage: &str, e: &RenderError| {
        job.fail(&e.log_excerpt());
        RenderOutcome::Quarantined(QuarantineRecord {
            sample_id: job.sample_id.clone(),
            stage: stage.into(),
            log_excerpt: job.log_excerpt().unwrap_or_default().to_owned(),
        })
    };
    let outcome = match compile(&input.tex_path, &workdir, tools) {
        Err(e @ RenderError::CompilerMissing(_)) => return Err(e),
        Err(e) => quarantine(&mut job, "compile", &e),
        Ok(pdf) => {
            job.advance(JobStatus::Compiled);
            match rasterize(&pdf, &workdir, spec, tools) {
                Err(e) => quarantine(&mut job, "rasterize", &e),
                Ok(img) => {
                    let path = image_dir.join(format!("{}.png", input.sample_id));
                    match img.save(&path) {
                        Ok(()) => {
                            job.advance(JobStatus::Rasterized);
                            RenderOutcome::Image(path)
                        }
                        Err(e) => quarantine(&mut job, "write", &RenderError::Io(e.to_string())),
                    }
                }
            }
        }
    };
    let _ = fs::remove_dir_all(&workdir);
    Ok(outcome)
}

/// Renders every input into `out_dir/images`, writing `out_dir/quarantine.jsonl`.
/// Outcomes are returned in input order whatever the worker count.
pub fn batch_render(
    inputs: &[RenderInput],
    out_dir: &Path,
    workers: usize,
    spec: &RasterSpec,
    tools: &ToolPaths,
) -> Result<Vec<RenderOutcome>, RenderError> {
    let image_dir = out_dir.join("images");
    let work_root = out_dir.join("work");
    fs::create_dir_all(&image_dir)?;
    if !inputs.is_empty() && find_program(&tools.xelatex).is_none() {
        return Err(RenderError::CompilerMissing(tools.xelatex.display().to_string()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| RenderError::Io(e.to_string()))?;
    let outcomes: Vec<RenderOutcome> = pool.install(|| {
        inputs
            .par_iter()
            .map(|i| render_one(i, &image_dir, &work_root, spec, tools))
            .collect::<Result<_, _>>()
    })?;
    let _ = fs::remove_dir_all(&work_root);
    let mut q = String::new();
    for o in &outcomes {
        if let RenderOutcome::Quarantined(r) = o {
            q.push_str(&serde_json::to_string(r).expect("serializable"));
            q.push('\n');
        }
    }
    fs::write(out_dir.join(QUARANTINE_FILE), q)?;
    Ok(outcomes)
}
