//! Turning a sample plan into a complete XeLaTeX document.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexer::can_touch;
use crate::mixer::SamplePlanItem;
use crate::seed::rng_for;
use crate::segment::{Join, Language, Segment};

pub const BODY_START: &str = "\\begin{document}\n";
pub const BODY_END: &str = "\n\\end{document}\n";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AssembleError {
    #[error("no preamble registered under id `{0}`")]
    UnknownPreamble(String),
    #[error("preamble `{preamble}` has no font coverage for language `{language}`")]
    MissingFontCoverage { preamble: String, language: Language },
    #[error("no registered preamble covers languages {0:?}")]
    NoCoveringPreamble(Vec<Language>),
    #[error("sample has no segments")]
    EmptySample,
}

/// Physical page size, chosen so one page rasterizes to the target image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PageGeometry {
    pub width_in: f64,
    pub height_in: f64,
    pub margin_in: f64,
    pub font_pt: u32,
}

impl PageGeometry {
    /// A page that renders to exactly `width_px x height_px` at `dpi`.
    pub fn for_raster(width_px: u32, height_px: u32, dpi: u32) -> Self {
        PageGeometry {
            width_in: f64::from(width_px) / f64::from(dpi),
            height_in: f64::from(height_px) / f64::from(dpi),
            margin_in: 0.15,
            font_pt: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreambleTemplate {
    pub id: String,
    pub languages: BTreeSet<Language>,
    /// `fontspec` main font; the engine default when absent.
    #[serde(default)]
    pub main_font: Option<String>,
    /// `xeCJK` main font; required for zh/ja coverage.
    #[serde(default)]
    pub cjk_font: Option<String>,
    /// Relative selection weight among preambles covering a sample.
    #[serde(default = "default_weight")]
    pub weight: f64,
}

fn default_weight() -> f64 {
    1.0
}

impl PreambleTemplate {
    pub fn render(&self, page: &PageGeometry) -> String {
        let mut s = String::new();
        s.push_str(&format!("\\documentclass[{}pt]{{article}}\n", page.font_pt));
        s.push_str(&format!(
            "\\usepackage[paperwidth={:.4}in,paperheight={:.4}in,margin={:.4}in]{{geometry}}\n",
            page.width_in, page.height_in, page.margin_in
        ));
        s.push_str("\\usepackage{amsmath,amssymb}\n");
        s.push_str("\\usepackage{fontspec}\n");
        if let Some(font) = &self.main_font {
            s.push_str(&format!("\\setmainfont{{{font}}}\n"));
        }
        if let Some(font) = &self.cjk_font {
            s.push_str("\\usepackage{xeCJK}\n");
            s.push_str(&format!("\\setCJKmainfont{{{font}}}\n"));
        }
        s.push_str("\\pagestyle{empty}\n");
        s.push_str("\\setlength{\\parindent}{0pt}\n");
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreambleRegistry {
    pub templates: Vec<PreambleTemplate>,
}

impl Default for PreambleRegistry {
    fn default() -> Self {
        use Language::*;
        let latin: BTreeSet<Language> = [En, Fr, De, Es].into();
        let cyrillic: BTreeSet<Language> = [En, Fr, De, Es, Ru].into();
        PreambleRegistry {
            templates: vec![
                PreambleTemplate {
                    id: "latin".into(),
                    languages: latin,
                    main_font: None,
                    cjk_font: None,
                    weight: 1.0,
                },
                PreambleTemplate {
                    id: "latin-cyrillic".into(),
                    languages: cyrillic,
                    main_font: Some("Noto Serif".into()),
                    cjk_font: None,
                    weight: 1.0,
                },
                PreambleTemplate {
                    id: "multilingual".into(),
                    languages: Language::ALL.into(),
                    main_font: Some("Noto Serif".into()),
                    cjk_font: Some("Noto Serif CJK SC".into()),
                    weight: 1.0,
                },
            ],
        }
    }
}

impl PreambleRegistry {
    pub fn get(&self, id: &str) -> Option<&PreambleTemplate> {
        self.templates.iter().find(|t| t.id == id)
    }

    /// Picks a preamble covering `languages`, weighted, by `seed`.
    pub fn choose(&self, languages: &[Language], seed: u64) -> Result<&PreambleTemplate, AssembleError> {
        let covering: Vec<&PreambleTemplate> = self
            .templates
            .iter()
            .filter(|t| t.weight > 0.0 && languages.iter().all(|l| t.languages.contains(l)))
            .collect();
        if covering.is_empty() {
            return Err(AssembleError::NoCoveringPreamble(languages.to_vec()));
        }
        let total: f64 = covering.iter().map(|t| t.weight).sum();
        let mut x = rng_for(seed).random::<f64>() * total;
        for t in &covering {
            if x < t.weight {
                return Ok(t);
            }
            x -= t.weight;
        }
        Ok(covering[covering.len() - 1])
    }
}

fn separator(prev: &Segment, cur: &Segment) -> &'static str {
    if prev.kind.is_block() || cur.kind.is_block() {
        return Join::Paragraph.separator();
    }
    match cur.join {
        Join::Tight if !can_touch(&prev.content, &cur.content) => Join::Space.separator(),
        j => j.separator(),
    }
}

/// The document body for a sample: segment contents joined by their
/// separators. This string is the sample's ground-truth label.
pub fn body_of(sample: &SamplePlanItem) -> String {
    let mut body = String::new();
    for (i, seg) in sample.segments.iter().enumerate() {
        if i > 0 {
            body.push_str(separator(&sample.segments[i - 1], seg));
        }
        body.push_str(&seg.content);
    }
    body
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub source: String,
    pub body: String,
    pub preamble_id: String,
}

pub fn assemble_document(
    sample: &SamplePlanItem,
    registry: &PreambleRegistry,
    preamble_id: &str,
    page: &PageGeometry,
) -> Result<Document, AssembleError> {
    if sample.segments.is_empty() {
        return Err(AssembleError::EmptySample);
    }
    let template = registry
        .get(preamble_id)
        .ok_or_else(|| AssembleError::UnknownPreamble(preamble_id.to_owned()))?;
    if let Some(&language) = sample
        .languages()
        .iter()
        .find(|l| !template.languages.contains(l))
    {
        return Err(AssembleError::MissingFontCoverage {
            preamble: template.id.clone(),
            language,
        });
    }
    let body = body_of(sample);
    let mut source = template.render(page);
    source.push_str(BODY_START);
    source.push_str(&body);
    source.push_str(BODY_END);
    Ok(Document {
        source,
        body,
        preamble_id: template.id.clone(),
    })
}

/// Recovers the body from an assembled document.
pub fn extract_body(source: &str) -> Option<&str> {
    let start = source.find(BODY_START)? + BODY_START.len();
    let end = source.rfind(BODY_END)?;
    (start <= end).then(|| &source[start..end])
}
