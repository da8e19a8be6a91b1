use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexer::count_tokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Zh,
    En,
    Fr,
    De,
    Ja,
    Ru,
    Es,
}

impl Language {
    pub const ALL: [Language; 7] = [
        Language::Zh,
        Language::En,
        Language::Fr,
        Language::De,
        Language::Ja,
        Language::Ru,
        Language::Es,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Language::Zh => "zh",
            Language::En => "en",
            Language::Fr => "fr",
            Language::De => "de",
            Language::Ja => "ja",
            Language::Ru => "ru",
            Language::Es => "es",
        }
    }

    /// Written without spaces between words.
    pub fn is_cjk(self) -> bool {
        matches!(self, Language::Zh | Language::Ja)
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown language code `{0}` (expected one of zh, en, fr, de, ja, ru, es)")]
pub struct UnknownLanguage(pub String);

impl FromStr for Language {
    type Err = UnknownLanguage;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Language::ALL
            .into_iter()
            .find(|l| l.code() == s)
            .ok_or_else(|| UnknownLanguage(s.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SegmentKind {
    Text,
    InlineMath,
    DisplayMath,
    Table,
}

impl SegmentKind {
    /// Display math and tables are never split across samples.
    pub fn is_block(self) -> bool {
        matches!(self, SegmentKind::DisplayMath | SegmentKind::Table)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Pseudo,
    Perturbed,
}

/// How a segment attaches to the one before it in a document body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Join {
    /// New paragraph.
    Paragraph,
    /// Same paragraph, separated by a space.
    Space,
    /// Same paragraph, no separator (CJK boundaries only).
    Tight,
}

impl Join {
    pub fn separator(self) -> &'static str {
        match self {
            Join::Paragraph => "\n\n",
            Join::Space => " ",
            Join::Tight => "",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub content: String,
    pub kind: SegmentKind,
    pub provenance: Provenance,
    /// Present iff `kind == Text`.
    pub language: Option<Language>,
    pub token_count: usize,
    pub join: Join,
}

impl Segment {
    pub fn new(
        content: impl Into<String>,
        kind: SegmentKind,
        provenance: Provenance,
        language: Option<Language>,
        join: Join,
    ) -> Self {
        let content = content.into();
        debug_assert_eq!(language.is_some(), kind == SegmentKind::Text);
        let token_count = count_tokens(&content);
        Segment {
            content,
            kind,
            provenance,
            language,
            token_count,
            join,
        }
    }

    pub fn text(content: impl Into<String>, language: Language, provenance: Provenance) -> Self {
        Segment::new(
            content,
            SegmentKind::Text,
            provenance,
            Some(language),
            Join::Paragraph,
        )
    }

    pub fn math(content: impl Into<String>, kind: SegmentKind, provenance: Provenance) -> Self {
        let join = if kind.is_block() {
            Join::Paragraph
        } else {
            Join::Space
        };
        Segment::new(content, kind, provenance, None, join)
    }

    pub fn with_join(mut self, join: Join) -> Self {
        self.join = join;
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceHistogram {
    pub real: u64,
    pub pseudo: u64,
    pub perturbed: u64,
}

impl ProvenanceHistogram {
    pub fn add(&mut self, provenance: Provenance, tokens: u64) {
        match provenance {
            Provenance::Real => self.real += tokens,
            Provenance::Pseudo => self.pseudo += tokens,
            Provenance::Perturbed => self.perturbed += tokens,
        }
    }

    pub fn add_segment(&mut self, seg: &Segment) {
        self.add(seg.provenance, seg.token_count as u64);
    }

    pub fn merge(&mut self, other: &ProvenanceHistogram) {
        self.real += other.real;
        self.pseudo += other.pseudo;
        self.perturbed += other.perturbed;
    }

    pub fn total(&self) -> u64 {
        self.real + self.pseudo + self.perturbed
    }

    pub fn real_fraction(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.real as f64 / t as f64,
        }
    }
}
