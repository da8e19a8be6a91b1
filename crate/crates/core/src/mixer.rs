//! Blending real segments with pseudo elements, and packing the blended
//! stream into token-budgeted samples.
//!
//! The blend is driven by a feedback controller rather than i.i.d. draws:
//! after every real segment, pseudo segments are emitted for as long as the
//! running Real-token fraction sits above the target. This keeps the realized
//! fraction within a few tokens of the target at every point of the stream.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Lexicons;
use crate::lexer::{join_units, split_units, Unit};
use crate::perturb::{perturb_text, PerturbCounts, PerturbError, PerturbRates, Piece};
use crate::pseudo::{
    gen_display_block, gen_formula, gen_table, random_table_spec, FormulaGrammar, GrammarError,
};
use crate::seed::{derive, rng_for, stage, PipelineRng};
use crate::segment::{Join, Language, Provenance, ProvenanceHistogram, Segment, SegmentKind};

/// Smallest sample budget accepted.
pub const MIN_BUDGET: usize = 8;
/// Per-sample token budget, matching the decoder's maximum output length.
pub const DEFAULT_BUDGET: usize = 296;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MixError {
    #[error("real corpus is empty but real_fraction is {0}")]
    EmptyCorpus(f64),
    #[error("real_fraction {0} outside [0, 1]")]
    BadRealFraction(f64),
    #[error("pseudo_math_share {0} outside [0, 1]")]
    BadMathShare(f64),
    #[error("sample token budget {0} is below the minimum of {MIN_BUDGET}")]
    BudgetTooSmall(usize),
    #[error("real_fraction 0 needs target_total_tokens to bound the output")]
    UnboundedPseudoRun,
    #[error("input segment {index} is not Real")]
    NotReal { index: usize },
    #[error("no lexicon and no math share: cannot produce pseudo content")]
    NoPseudoSource,
    #[error(transparent)]
    Perturb(#[from] PerturbError),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixPlan {
    pub real_fraction: f64,
    pub perturb: PerturbRates,
    pub pseudo_math_share: f64,
    pub grammar: FormulaGrammar,
    pub seed: u64,
    pub sample_token_budget: usize,
    /// Stop once this many tokens have been emitted. Required when
    /// `real_fraction` is 0; otherwise the real corpus bounds the run.
    pub target_total_tokens: Option<u64>,
}

impl Default for MixPlan {
    fn default() -> Self {
        MixPlan {
            real_fraction: 1.0 / 3.0,
            perturb: PerturbRates::default(),
            pseudo_math_share: 0.4,
            grammar: FormulaGrammar::default(),
            seed: 0,
            sample_token_budget: DEFAULT_BUDGET,
            target_total_tokens: None,
        }
    }
}

impl MixPlan {
    pub fn validate(&self) -> Result<(), MixError> {
        if !(0.0..=1.0).contains(&self.real_fraction) {
            return Err(MixError::BadRealFraction(self.real_fraction));
        }
        if !(0.0..=1.0).contains(&self.pseudo_math_share) {
            return Err(MixError::BadMathShare(self.pseudo_math_share));
        }
        if self.sample_token_budget < MIN_BUDGET {
            return Err(MixError::BudgetTooSmall(self.sample_token_budget));
        }
        if self.real_fraction == 0.0 && self.target_total_tokens.is_none() {
            return Err(MixError::UnboundedPseudoRun);
        }
        self.perturb.validate()?;
        self.grammar.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct MixOutput {
    pub segments: Vec<Segment>,
    pub histogram: ProvenanceHistogram,
    pub perturb_counts: PerturbCounts,
}

impl MixOutput {
    pub fn realized_real_fraction(&self) -> f64 {
        self.histogram.real_fraction()
    }
}

struct Mixer<'a> {
    plan: &'a MixPlan,
    lexicons: &'a Lexicons,
    languages: Vec<Language>,
    table_grammar: FormulaGrammar,
    out: MixOutput,
    pseudo_math_tokens: u64,
    pseudo_index: u64,
    language: Option<Language>,
    language_rng: PipelineRng,
    next_language_switch: u64,
}

impl<'a> Mixer<'a> {
    fn new(plan: &'a MixPlan, lexicons: &'a Lexicons) -> Self {
        let table_grammar = FormulaGrammar {
            max_depth: plan.grammar.max_depth.min(2),
            ..plan.grammar.clone()
        };
        Mixer {
            plan,
            lexicons,
            languages: lexicons.languages(),
            table_grammar,
            out: MixOutput::default(),
            pseudo_math_tokens: 0,
            pseudo_index: 0,
            language: None,
            language_rng: rng_for(derive(plan.seed, stage::MIX, u64::MAX)),
            next_language_switch: 0,
        }
    }

    fn total(&self) -> u64 {
        self.out.histogram.total()
    }

    fn done(&self) -> bool {
        self.plan
            .target_total_tokens
            .is_some_and(|t| self.total() >= t)
    }

    fn emit(&mut self, seg: Segment) {
        if seg.token_count == 0 {
            return;
        }
        if seg.provenance == Provenance::Pseudo && seg.kind != SegmentKind::Text {
            self.pseudo_math_tokens += seg.token_count as u64;
        }
        self.out.histogram.add_segment(&seg);
        self.out.segments.push(seg);
    }

    fn above_target(&self) -> bool {
        let total = self.total();
        total > 0 && (self.out.histogram.real as f64) > self.plan.real_fraction * total as f64
    }

    fn push_real(&mut self, seg: Segment, index: u64) -> Result<(), MixError> {
        if seg.kind == SegmentKind::Text {
            self.language = seg.language;
        }
        if seg.kind != SegmentKind::Text || self.plan.perturb.is_zero() {
            self.emit(seg);
            return Ok(());
        }
        let lang = seg.language.expect("text segments carry a language");
        let seed = derive(self.plan.seed, stage::PERTURB, index);
        let (pieces, counts) = perturb_text(
            &seg.content,
            &self.plan.perturb,
            self.lexicons.get(lang),
            &self.plan.grammar,
            seed,
        )?;
        if counts.total() == 0 {
            self.emit(seg);
            return Ok(());
        }
        self.out.perturb_counts.merge(&counts);
        for s in group_pieces(pieces, lang, seg.join) {
            self.emit(s);
        }
        Ok(())
    }

    fn current_language(&mut self) -> Option<Language> {
        if self.plan.real_fraction == 0.0 && self.total() >= self.next_language_switch {
            // Pseudo-only runs switch language roughly once per sample.
            self.language = self.languages.choose(&mut self.language_rng).copied();
            self.next_language_switch = self.total() + self.plan.sample_token_budget as u64;
        }
        self.language.or_else(|| self.languages.first().copied())
    }

    fn push_pseudo(&mut self) -> Result<(), MixError> {
        let seed = derive(self.plan.seed, stage::PSEUDO, self.pseudo_index);
        self.pseudo_index += 1;
        let mut rng = rng_for(seed);
        let pseudo_total = self.out.histogram.pseudo;
        let math_due = (self.pseudo_math_tokens as f64)
            < self.plan.pseudo_math_share * (pseudo_total as f64 + 1.0);
        let lang = self.current_language();
        let words = lang.map_or(&[][..], |l| self.lexicons.get(l));

        let seg = if (math_due && self.plan.pseudo_math_share > 0.0) || words.is_empty() {
            if self.plan.pseudo_math_share == 0.0 && words.is_empty() {
                return Err(MixError::NoPseudoSource);
            }
            self.pseudo_math(&mut rng, words)?
        } else {
            let lang = lang.expect("words imply a language");
            let n = rng.random_range(4..=16);
            let sep = if lang.is_cjk() { "" } else { " " };
            let text: Vec<&str> = (0..n)
                .map(|_| words.choose(&mut rng).expect("non-empty").as_str())
                .collect();
            Segment::text(text.join(sep), lang, Provenance::Pseudo)
        };
        self.emit(seg);
        Ok(())
    }

    fn pseudo_math(
        &self,
        rng: &mut PipelineRng,
        words: &[String],
    ) -> Result<Segment, MixError> {
        let budget = self.plan.sample_token_budget;
        let g = &self.plan.grammar;
        let roll: f64 = rng.random();
        let seed: u64 = rng.random();
        if roll < 0.15 {
            let spec = random_table_spec(seed, words);
            if let Ok(t) = gen_table(seed, &spec, &self.table_grammar) {
                let seg = Segment::math(t, SegmentKind::Table, Provenance::Pseudo);
                if seg.token_count <= budget {
                    return Ok(seg);
                }
            }
        } else if roll < 0.55 {
            let seg = Segment::math(
                gen_display_block(seed, g)?,
                SegmentKind::DisplayMath,
                Provenance::Pseudo,
            );
            if seg.token_count <= budget {
                return Ok(seg);
            }
        }
        let mut f = gen_formula(seed, g)?;
        if crate::lexer::count_tokens(&f) + 2 > budget {
            f = gen_formula(seed, &self.table_grammar)?;
        }
        Ok(Segment::math(
            format!("${f}$"),
            SegmentKind::InlineMath,
            Provenance::Pseudo,
        ))
    }
}

/// Turns perturbed pieces into segments: consecutive pieces of the same kind
/// and provenance share a segment, joined by their original separators.
fn group_pieces(pieces: Vec<Piece>, lang: Language, first_join: Join) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    let mut buf = String::new();
    let mut key: Option<(SegmentKind, Provenance)> = None;
    let mut join = first_join;
    let mut prev_trailing = String::new();

    let finish = |buf: &mut String, key: (SegmentKind, Provenance), join: Join, out: &mut Vec<Segment>| {
        let language = (key.0 == SegmentKind::Text).then_some(lang);
        out.push(Segment::new(std::mem::take(buf), key.0, key.1, language, join));
    };

    for p in pieces {
        let k = (p.kind, p.provenance);
        match key {
            Some(cur) if cur == k => {
                buf.push_str(&prev_trailing);
            }
            Some(cur) => {
                finish(&mut buf, cur, join, &mut out);
                join = if prev_trailing.is_empty() {
                    Join::Tight
                } else {
                    Join::Space
                };
            }
            None => {}
        }
        key = Some(k);
        buf.push_str(&p.text);
        prev_trailing = p.trailing;
    }
    if let Some(cur) = key {
        finish(&mut buf, cur, join, &mut out);
    }
    out
}

/// Blends the real segment stream with pseudo segments according to `plan`.
pub fn mix(
    real: impl IntoIterator<Item = Segment>,
    lexicons: &Lexicons,
    plan: &MixPlan,
) -> Result<MixOutput, MixError> {
    plan.validate()?;
    let mut mixer = Mixer::new(plan, lexicons);
    let mut seen_real = false;
    if plan.real_fraction > 0.0 {
        for (index, seg) in real.into_iter().enumerate() {
            if seg.provenance != Provenance::Real {
                return Err(MixError::NotReal { index });
            }
            seen_real = true;
            mixer.push_real(seg, index as u64)?;
            while mixer.above_target() && !mixer.done() {
                mixer.push_pseudo()?;
            }
            if mixer.done() {
                break;
            }
        }
        if !seen_real {
            return Err(MixError::EmptyCorpus(plan.real_fraction));
        }
    } else {
        while !mixer.done() {
            mixer.push_pseudo()?;
        }
    }
    Ok(mixer.out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplePlanItem {
    pub segments: Vec<Segment>,
    pub total_tokens: usize,
}

impl SamplePlanItem {
    pub fn histogram(&self) -> ProvenanceHistogram {
        let mut h = ProvenanceHistogram::default();
        for s in &self.segments {
            h.add_segment(s);
        }
        h
    }

    pub fn languages(&self) -> Vec<Language> {
        let mut langs: Vec<Language> = self.segments.iter().filter_map(|s| s.language).collect();
        langs.sort();
        langs.dedup();
        langs
    }
}

/// A segment (or text unit) that cannot fit any sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OversizedSegment {
    pub content: String,
    pub kind: SegmentKind,
    pub token_count: usize,
    pub budget: usize,
}

impl std::fmt::Display for OversizedSegment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:?} segment of {} tokens exceeds the {}-token budget",
            self.kind, self.token_count, self.budget
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct ChunkOutput {
    pub samples: Vec<SamplePlanItem>,
    pub quarantined: Vec<OversizedSegment>,
}

struct Packer {
    budget: usize,
    current: Vec<Segment>,
    used: usize,
    out: ChunkOutput,
}

impl Packer {
    fn flush(&mut self) {
        if !self.current.is_empty() {
            self.out.samples.push(SamplePlanItem {
                segments: std::mem::take(&mut self.current),
                total_tokens: self.used,
            });
        }
        self.used = 0;
    }

    fn place(&mut self, seg: Segment) {
        self.used += seg.token_count;
        self.current.push(seg);
    }

    fn quarantine(&mut self, content: String, kind: SegmentKind, token_count: usize) {
        self.out.quarantined.push(OversizedSegment {
            content,
            kind,
            token_count,
            budget: self.budget,
        });
    }

    fn push(&mut self, seg: Segment) {
        if seg.token_count == 0 {
            return;
        }
        if self.used + seg.token_count <= self.budget {
            self.place(seg);
        } else if seg.kind == SegmentKind::Text {
            self.push_split(seg);
        } else if seg.token_count > self.budget {
            self.quarantine(seg.content, seg.kind, seg.token_count);
        } else {
            self.flush();
            self.place(seg);
        }
    }

    /// Splits a text segment at unit boundaries, filling the current sample
    /// before opening new ones.
    fn push_split(&mut self, seg: Segment) {
        let units = split_units(&seg.content);
        let mut run: Vec<Unit> = Vec::new();
        let mut run_tokens = 0;
        let mut first = true;
        let emit_run = |packer: &mut Packer, run: &mut Vec<Unit>, run_tokens: &mut usize, first: &mut bool| {
            if run.is_empty() {
                return;
            }
            let join = if *first { seg.join } else { Join::Paragraph };
            *first = false;
            let piece = Segment::new(
                join_units(run),
                SegmentKind::Text,
                seg.provenance,
                seg.language,
                join,
            );
            debug_assert_eq!(piece.token_count, *run_tokens);
            packer.place(piece);
            run.clear();
            *run_tokens = 0;
        };
        for unit in units {
            let n = unit.token_count();
            if n > self.budget {
                emit_run(self, &mut run, &mut run_tokens, &mut first);
                self.quarantine(unit.text, SegmentKind::Text, n);
                continue;
            }
            if self.used + run_tokens + n > self.budget {
                emit_run(self, &mut run, &mut run_tokens, &mut first);
                self.flush();
            }
            run_tokens += n;
            run.push(unit);
        }
        emit_run(self, &mut run, &mut run_tokens, &mut first);
    }
}

/// Greedy packing into samples of at most `budget` tokens. Text segments may
/// split at unit boundaries; math and tables never split. Units that exceed
/// the budget on their own are quarantined.
pub fn chunk(
    segments: impl IntoIterator<Item = Segment>,
    budget: usize,
) -> Result<ChunkOutput, MixError> {
    if budget < MIN_BUDGET {
        return Err(MixError::BudgetTooSmall(budget));
    }
    let mut packer = Packer {
        budget,
        current: Vec::new(),
        used: 0,
        out: ChunkOutput::default(),
    };
    for seg in segments {
        packer.push(seg);
    }
    packer.flush();
    Ok(packer.out)
}
