#![allow(dead_code)]

pub mod oracles;

use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use mixforge::render::ToolPaths;

pub fn fixture_corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/corpus")
}

fn install(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    fs::set_permissions(&path, fs::Permissions::from_mode(0o755)).unwrap();
    path
}

/// Python stand-ins for xelatex and pdftoppm, installed into `dir`.
pub fn stub_tools(dir: &Path) -> ToolPaths {
    fs::create_dir_all(dir).unwrap();
    ToolPaths {
        xelatex: install(dir, "xelatex", include_str!("stub_xelatex.py")),
        rasterizer: install(dir, "pdftoppm", include_str!("stub_pdftoppm.py")),
        timeout_secs: 30,
    }
}

/// Writes `mixforge.toml` in `dir` pointing at the fixture corpus.
pub fn write_config(dir: &Path, seed: u64, extra: &str) -> PathBuf {
    let path = dir.join("mixforge.toml");
    let text = format!(
        "seed = {seed}\noutput_dir = \"out\"\n\n[corpus]\nroot = {:?}\n\n{extra}",
        fixture_corpus().display().to_string()
    );
    fs::write(&path, text).unwrap();
    path
}

/// Whether a real TeX toolchain is on PATH.
pub fn real_tools_available() -> bool {
    let t = ToolPaths::default();
    mixforge::render::find_program(&t.xelatex).is_some()
        && mixforge::render::find_program(&t.rasterizer).is_some()
}
