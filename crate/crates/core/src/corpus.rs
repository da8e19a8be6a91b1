//! Real corpus ingestion.
//!
//! Layout: one directory per language code (`en/`, `zh/`, …) holding UTF-8
//! `.tex`/`.txt` files of LaTeX body fragments separated by blank lines, plus
//! an optional `formulas.txt` with one display formula per line.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::lexer::{check_balance, is_cjk, split_units, strip_comments, tokenize, TokenKind};
use crate::segment::{Language, Provenance, Segment, SegmentKind};

pub const FORMULAS_FILE: &str = "formulas.txt";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus root {0} is not a directory")]
    NotADirectory(PathBuf),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path} is not valid UTF-8")]
    InvalidUtf8 { path: PathBuf },
}

/// A fragment that was skipped during ingestion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejected {
    pub origin: String,
    pub reason: String,
}

/// Words available for insertion and pseudo-text, per language.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicons(pub BTreeMap<Language, Vec<String>>);

impl Lexicons {
    pub fn get(&self, lang: Language) -> &[String] {
        self.0.get(&lang).map_or(&[], Vec::as_slice)
    }

    pub fn languages(&self) -> Vec<Language> {
        self.0
            .iter()
            .filter(|(_, w)| !w.is_empty())
            .map(|(l, _)| *l)
            .collect()
    }

    /// Builds lexicons from text segments: words of two or more letters for
    /// spaced scripts, CJK character bigrams for Chinese and Japanese.
    pub fn from_segments<'a>(segments: impl IntoIterator<Item = &'a Segment>) -> Self {
        let mut sets: BTreeMap<Language, BTreeSet<String>> = BTreeMap::new();
        for seg in segments {
            let Some(lang) = seg.language else { continue };
            let set = sets.entry(lang).or_default();
            if lang.is_cjk() {
                let chars: Vec<char> = seg.content.chars().collect();
                for w in chars.windows(2) {
                    if w.iter().all(|&c| is_cjk(c)) {
                        set.insert(w.iter().collect());
                    }
                }
            } else {
                for unit in split_units(&seg.content) {
                    if !unit.is_plain() {
                        continue;
                    }
                    for tok in &unit.tokens {
                        if tok.kind == TokenKind::Word {
                            set.insert(tok.text.clone());
                        }
                    }
                }
            }
        }
        Lexicons(
            sets.into_iter()
                .map(|(l, s)| (l, s.into_iter().collect()))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    /// Real segments in ingestion order, display formulas interleaved evenly
    /// among text paragraphs.
    pub segments: Vec<Segment>,
    pub lexicons: Lexicons,
    pub rejected: Vec<Rejected>,
}

impl Corpus {
    pub fn token_count(&self) -> u64 {
        self.segments.iter().map(|s| s.token_count as u64).sum()
    }

    pub fn from_parts(paragraphs: Vec<(Language, String)>, formulas: Vec<String>) -> Self {
        let mut rejected = Vec::new();
        let mut text = Vec::new();
        for (i, (lang, p)) in paragraphs.into_iter().enumerate() {
            match clean_fragment(&p) {
                Ok(Some(c)) => text.push(Segment::text(c, lang, Provenance::Real)),
                Ok(None) => {}
                Err(reason) => rejected.push(Rejected {
                    origin: format!("{lang}#{i}"),
                    reason,
                }),
            }
        }
        let mut display = Vec::new();
        for (i, f) in formulas.into_iter().enumerate() {
            let f = f.trim();
            if f.is_empty() {
                continue;
            }
            match clean_fragment(&format!("\\[{f}\\]")) {
                Ok(Some(c)) => display.push(Segment::math(
                    c,
                    SegmentKind::DisplayMath,
                    Provenance::Real,
                )),
                Ok(None) => {}
                Err(reason) => rejected.push(Rejected {
                    origin: format!("{FORMULAS_FILE}:{}", i + 1),
                    reason,
                }),
            }
        }
        let lexicons = Lexicons::from_segments(&text);
        Corpus {
            segments: interleave(text, display),
            lexicons,
            rejected,
        }
    }
}

/// Strips comments and surrounding whitespace, and rejects fragments that are
/// unbalanced or end in a lone backslash.
fn clean_fragment(raw: &str) -> Result<Option<String>, String> {
    let cleaned = strip_comments(raw);
    let cleaned = cleaned.trim();
    if cleaned.is_empty() {
        return Ok(None);
    }
    let stream = tokenize(cleaned);
    check_balance(&stream).map_err(|e| e.to_string())?;
    if stream.tokens.last().is_some_and(|t| t.kind == TokenKind::Other) {
        return Err("fragment ends in an incomplete control sequence".into());
    }
    Ok(Some(cleaned.to_owned()))
}

/// Spreads `b` evenly through `a`, preserving the relative order of both.
fn interleave(a: Vec<Segment>, b: Vec<Segment>) -> Vec<Segment> {
    if a.is_empty() {
        return b;
    }
    let (na, nb) = (a.len(), b.len());
    let mut out = Vec::with_capacity(na + nb);
    let mut b = b.into_iter();
    let mut placed = 0;
    for (i, seg) in a.into_iter().enumerate() {
        out.push(seg);
        let due = (i + 1) * nb / na;
        while placed < due {
            out.extend(b.next());
            placed += 1;
        }
    }
    out.extend(b);
    out
}

fn read_utf8(path: &Path) -> Result<String, CorpusError> {
    let bytes = fs::read(path).map_err(|source| CorpusError::Io {
        path: path.to_owned(),
        source,
    })?;
    String::from_utf8(bytes).map_err(|_| CorpusError::InvalidUtf8 {
        path: path.to_owned(),
    })
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    let rd = fs::read_dir(dir).map_err(|source| CorpusError::Io {
        path: dir.to_owned(),
        source,
    })?;
    let mut out = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|source| CorpusError::Io {
            path: dir.to_owned(),
            source,
        })?;
        out.push(entry.path());
    }
    out.sort();
    Ok(out)
}

/// Splits a file into paragraphs at blank lines.
fn paragraphs(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.trim().is_empty() {
                out.push(std::mem::take(&mut current));
            }
            current.clear();
        } else {
            if !current.is_empty() {
                current.push('\n');
            }
            current.push_str(line);
        }
    }
    if !current.trim().is_empty() {
        out.push(current);
    }
    out
}

/// Loads the standard layout under `root`.
pub fn load_corpus(root: &Path) -> Result<Corpus, CorpusError> {
    if !root.is_dir() {
        return Err(CorpusError::NotADirectory(root.to_owned()));
    }
    let paths: BTreeMap<Language, PathBuf> = Language::ALL
        .iter()
        .map(|&l| (l, root.join(l.code())))
        .filter(|(_, p)| p.is_dir())
        .collect();
    let formulas = root.join(FORMULAS_FILE);
    load_corpus_paths(&paths, formulas.is_file().then_some(formulas.as_path()))
}

/// Loads text from one file or directory per language plus an optional
/// formula list. Directories contribute their `.tex`/`.txt` files in name
/// order.
pub fn load_corpus_paths(
    paths: &BTreeMap<Language, PathBuf>,
    formulas: Option<&Path>,
) -> Result<Corpus, CorpusError> {
    let mut text = Vec::new();
    for (&lang, path) in paths {
        let files = if path.is_dir() {
            sorted_entries(path)?
                .into_iter()
                .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("tex" | "txt")))
                .collect()
        } else {
            vec![path.clone()]
        };
        for file in files {
            for p in paragraphs(&read_utf8(&file)?) {
                text.push((lang, p));
            }
        }
    }
    let formulas = match formulas {
        Some(f) => read_utf8(f)?.lines().map(str::to_owned).collect(),
        None => Vec::new(),
    };
    let corpus = Corpus::from_parts(text, formulas);
    for r in &corpus.rejected {
        log::warn!("skipping corpus fragment {}: {}", r.origin, r.reason);
    }
    Ok(corpus)
}
