//! Text corruption primitives: letter scrambling, random word insertion,
//! random inline-math insertion, and disruptive-character injection.
//!
//! The corrupted text is the recognition target. Nothing here records a
//! "clean" version; callers label samples with exactly what they render.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexer::{can_touch, is_active_char, split_units, tokenize, TokenKind, Unit};
use crate::pseudo::{gen_formula, FormulaGrammar, GrammarError};
use crate::seed::rng_for;
use crate::segment::{Provenance, SegmentKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerturbError {
    #[error("rate `{name}` = {value} outside [0, 1]")]
    RateOutOfRange { name: &'static str, value: f64 },
    #[error("disrupt_charset is empty but disrupt_rate > 0")]
    EmptyCharset,
    #[error("disrupt_charset contains LaTeX-active character `{0}`")]
    ActiveCharacter(char),
    #[error("word insertion needs a non-empty lexicon")]
    EmptyLexicon,
    #[error(transparent)]
    Grammar(#[from] GrammarError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbRates {
    pub scramble_rate: f64,
    pub word_insert_rate: f64,
    pub math_insert_rate: f64,
    pub disrupt_rate: f64,
    pub disrupt_charset: Vec<char>,
}

impl Default for PerturbRates {
    fn default() -> Self {
        let mut charset = vec![',', '.', ';', ':', '\'', '!', '?'];
        charset.extend('0'..='9');
        PerturbRates {
            scramble_rate: 0.03,
            word_insert_rate: 0.02,
            math_insert_rate: 0.03,
            disrupt_rate: 0.005,
            disrupt_charset: charset,
        }
    }
}

impl PerturbRates {
    pub fn zero() -> Self {
        PerturbRates {
            scramble_rate: 0.0,
            word_insert_rate: 0.0,
            math_insert_rate: 0.0,
            disrupt_rate: 0.0,
            ..PerturbRates::default()
        }
    }

    pub fn validate(&self) -> Result<(), PerturbError> {
        for (name, value) in [
            ("scramble_rate", self.scramble_rate),
            ("word_insert_rate", self.word_insert_rate),
            ("math_insert_rate", self.math_insert_rate),
            ("disrupt_rate", self.disrupt_rate),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(PerturbError::RateOutOfRange { name, value });
            }
        }
        if self.disrupt_rate > 0.0 && self.disrupt_charset.is_empty() {
            return Err(PerturbError::EmptyCharset);
        }
        if let Some(&c) = self
            .disrupt_charset
            .iter()
            .find(|&&c| is_active_char(c) || c.is_whitespace())
        {
            return Err(PerturbError::ActiveCharacter(c));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.scramble_rate == 0.0
            && self.word_insert_rate == 0.0
            && self.math_insert_rate == 0.0
            && self.disrupt_rate == 0.0
    }
}

/// Uniformly permutes the characters of `word`. Words of four or more
/// characters with at least two distinct characters never come back
/// unchanged.
pub fn scramble_word(word: &str, seed: u64) -> String {
    let mut chars: Vec<char> = word.chars().collect();
    if chars.len() < 2 {
        return word.to_owned();
    }
    let reject_identity = chars.len() >= 4 && chars.iter().any(|&c| c != chars[0]);
    let original = chars.clone();
    let mut rng = rng_for(seed);
    loop {
        chars.shuffle(&mut rng);
        if !reject_identity || chars != original {
            return chars.into_iter().collect();
        }
    }
}

/// A unit of text moving through the perturbation stages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Piece {
    pub text: String,
    pub kind: SegmentKind,
    pub provenance: Provenance,
    /// Separator that followed this piece; empty means the next piece touches
    /// it directly.
    pub trailing: String,
}

impl Piece {
    pub fn word(text: impl Into<String>) -> Self {
        Piece {
            text: text.into(),
            kind: SegmentKind::Text,
            provenance: Provenance::Real,
            trailing: " ".into(),
        }
    }
}

fn from_unit(u: Unit) -> Piece {
    Piece {
        text: u.text,
        kind: SegmentKind::Text,
        provenance: Provenance::Real,
        trailing: u.trailing,
    }
}

/// Fills gaps (before the first piece, between pieces, after the last) with
/// probability `rate`, using `make` to produce the inserted piece.
fn insert_into_gaps(
    pieces: Vec<Piece>,
    rate: f64,
    seed: u64,
    mut make: impl FnMut(&mut crate::seed::PipelineRng) -> Piece,
) -> (Vec<Piece>, usize) {
    if rate <= 0.0 {
        return (pieces, 0);
    }
    let mut rng = rng_for(seed);
    let mut out = Vec::with_capacity(pieces.len() + 4);
    let mut inserted = 0;
    let n = pieces.len();
    let mut iter = pieces.into_iter();
    for gap in 0..=n {
        if rng.random_bool(rate) {
            let mut new = make(&mut rng);
            inserted += 1;
            let next_text = iter.as_slice().first().map(|p| p.text.as_str());
            match out.last_mut() {
                Some(prev) => {
                    let prev: &mut Piece = prev;
                    let tight = prev.trailing.is_empty()
                        && can_touch(&prev.text, &new.text)
                        && next_text.is_none_or(|next| can_touch(&new.text, next));
                    if tight {
                        new.trailing = String::new();
                    } else {
                        if prev.trailing.is_empty() {
                            prev.trailing = " ".into();
                        }
                        new.trailing = " ".into();
                    }
                }
                None => {
                    let touches = next_text.is_some_and(|next| can_touch(&new.text, next));
                    new.trailing = if touches { String::new() } else { " ".into() };
                }
            }
            out.push(new);
        }
        if gap < n {
            out.push(iter.next().expect("gap < n"));
        }
    }
    if let Some(last) = out.last_mut() {
        last.trailing.clear();
    }
    (out, inserted)
}

/// Inserts lexicon words into the gaps of a word sequence. Inserted words
/// carry provenance `Perturbed`.
pub fn insert_words(
    words: Vec<Piece>,
    rates: &PerturbRates,
    lexicon: &[String],
    seed: u64,
) -> Result<(Vec<Piece>, usize), PerturbError> {
    if rates.word_insert_rate > 0.0 && lexicon.is_empty() {
        return Err(PerturbError::EmptyLexicon);
    }
    Ok(insert_into_gaps(words, rates.word_insert_rate, seed, |rng| {
        Piece {
            text: lexicon.choose(rng).expect("non-empty").clone(),
            kind: SegmentKind::Text,
            provenance: Provenance::Perturbed,
            trailing: " ".into(),
        }
    }))
}

/// Inserts `$…$` pseudo-formulas into the gaps of a word sequence. Inserted
/// formulas carry provenance `Perturbed`, like inserted words: they come from
/// the perturbation stage, not from the mixer's pseudo stream.
pub fn insert_inline_math(
    words: Vec<Piece>,
    rates: &PerturbRates,
    grammar: &FormulaGrammar,
    seed: u64,
) -> Result<(Vec<Piece>, usize), PerturbError> {
    if rates.math_insert_rate > 0.0 {
        grammar.validate()?;
    }
    Ok(insert_into_gaps(words, rates.math_insert_rate, seed, |rng| {
        let body = gen_formula(rng.random(), grammar).expect("validated");
        Piece {
            text: format!("${body}$"),
            kind: SegmentKind::InlineMath,
            provenance: Provenance::Perturbed,
            trailing: " ".into(),
        }
    }))
}

/// Follows each character with a random charset character with probability
/// `disrupt_rate`. Returns the new text and the number of injections.
pub fn inject_chars_counted(text: &str, rates: &PerturbRates, seed: u64) -> (String, usize) {
    if rates.disrupt_rate <= 0.0 || rates.disrupt_charset.is_empty() {
        return (text.to_owned(), 0);
    }
    let mut rng = rng_for(seed);
    let mut out = String::with_capacity(text.len() + text.len() / 32);
    let mut injected = 0;
    for c in text.chars() {
        out.push(c);
        if rng.random_bool(rates.disrupt_rate) {
            out.push(*rates.disrupt_charset.choose(&mut rng).expect("non-empty"));
            injected += 1;
        }
    }
    (out, injected)
}

pub fn inject_chars(text: &str, rates: &PerturbRates, seed: u64) -> String {
    inject_chars_counted(text, rates, seed).0
}

/// Realized perturbation counts for one piece of text.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbCounts {
    pub scrambled_words: u64,
    pub inserted_words: u64,
    pub inserted_math: u64,
    pub injected_chars: u64,
}

impl PerturbCounts {
    pub fn merge(&mut self, other: &PerturbCounts) {
        self.scrambled_words += other.scrambled_words;
        self.inserted_words += other.inserted_words;
        self.inserted_math += other.inserted_math;
        self.injected_chars += other.injected_chars;
    }

    pub fn total(&self) -> u64 {
        self.scrambled_words + self.inserted_words + self.inserted_math + self.injected_chars
    }
}

/// Scrambles the `Word` tokens of a plain unit, each with probability
/// `rate`.
fn scramble_unit(text: &str, rate: f64, rng: &mut impl Rng) -> (String, u64) {
    let mut out = String::with_capacity(text.len());
    let mut n = 0;
    for tok in tokenize(text).tokens {
        if tok.kind == TokenKind::Word && rng.random_bool(rate) {
            let scrambled = scramble_word(&tok.text, rng.random());
            if scrambled != tok.text {
                n += 1;
            }
            out.push_str(&scrambled);
        } else {
            out.push_str(&tok.text);
        }
    }
    (out, n)
}

const SCRAMBLE_TAG: u64 = 1;
const INJECT_TAG: u64 = 2;
const WORD_TAG: u64 = 3;
const MATH_TAG: u64 = 4;

/// Runs all four perturbations over a text fragment: scrambling and
/// character injection on plain units, then word and inline-math insertion
/// into the gaps between units.
pub fn perturb_text(
    text: &str,
    rates: &PerturbRates,
    lexicon: &[String],
    grammar: &FormulaGrammar,
    seed: u64,
) -> Result<(Vec<Piece>, PerturbCounts), PerturbError> {
    rates.validate()?;
    let mut counts = PerturbCounts::default();
    let units = split_units(text);
    let plain: Vec<bool> = units.iter().map(Unit::is_plain).collect();
    let mut pieces: Vec<Piece> = units.into_iter().map(from_unit).collect();

    if rates.scramble_rate > 0.0 || rates.disrupt_rate > 0.0 {
        let mut scramble_rng = rng_for(seed ^ SCRAMBLE_TAG);
        let mut inject_rng = rng_for(seed ^ INJECT_TAG);
        for (piece, _) in pieces.iter_mut().zip(&plain).filter(|(_, &p)| p) {
            if rates.scramble_rate > 0.0 {
                let (s, n) = scramble_unit(&piece.text, rates.scramble_rate, &mut scramble_rng);
                if n > 0 {
                    piece.text = s;
                    piece.provenance = Provenance::Perturbed;
                    counts.scrambled_words += n;
                }
            }
            if rates.disrupt_rate > 0.0 {
                let (s, n) = inject_chars_counted(&piece.text, rates, inject_rng.random());
                if n > 0 {
                    piece.text = s;
                    piece.provenance = Provenance::Perturbed;
                    counts.injected_chars += n as u64;
                }
            }
        }
    }

    let (pieces, n) = insert_words(pieces, rates, lexicon, seed ^ WORD_TAG)?;
    counts.inserted_words = n as u64;
    let (pieces, n) = insert_inline_math(pieces, rates, grammar, seed ^ MATH_TAG)?;
    counts.inserted_math = n as u64;
    Ok((pieces, counts))
}
