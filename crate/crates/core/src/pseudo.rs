//! Random grammar for meaningless but compilable formulas and tables.
//!
//! Output is a pure function of `(seed, grammar)`. Every production wraps its
//! children in at most one brace level, so the brace nesting of an output is
//! bounded by the grammar's `max_depth`.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexer::{tokenize, TokenKind};
use crate::seed::rng_for;

/// Commands the generator may emit. Anything outside this list is rejected at
/// grammar validation time.
pub const COMMAND_WHITELIST: &[&str] = &[
    "\\alpha", "\\beta", "\\gamma", "\\delta", "\\epsilon", "\\varepsilon", "\\zeta", "\\eta",
    "\\theta", "\\iota", "\\kappa", "\\lambda", "\\mu", "\\nu", "\\xi", "\\pi", "\\rho",
    "\\sigma", "\\tau", "\\upsilon", "\\phi", "\\varphi", "\\chi", "\\psi", "\\omega",
    "\\Gamma", "\\Delta", "\\Theta", "\\Lambda", "\\Xi", "\\Pi", "\\Sigma", "\\Phi", "\\Psi",
    "\\Omega", "\\infty", "\\partial", "\\nabla", "\\ell", "\\hbar",
    "\\hat", "\\dot", "\\ddot", "\\bar", "\\tilde", "\\vec", "\\sqrt", "\\overline",
    "\\mathrm", "\\mathbf",
    "\\frac", "\\dfrac", "\\binom", "\\cdot", "\\times", "\\pm", "\\mp", "\\div", "\\leq",
    "\\geq", "\\neq", "\\approx", "\\equiv", "\\sim", "\\to", "\\in", "\\cup", "\\cap",
    "\\sum", "\\int", "\\prod", "\\oint", "\\bigcup", "\\bigcap", "\\lim",
    "\\left", "\\right",
];

/// Binary operators rendered in prefix form with two braced arguments.
const PREFIX_BINARY: &[&str] = &["\\frac", "\\dfrac", "\\binom"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GrammarError {
    #[error("grammar has no atoms")]
    NoAtoms,
    #[error("production weight `{0}` must be finite and non-negative")]
    BadWeight(&'static str),
    #[error("left_right_prob {0} outside [0, 1]")]
    BadLeftRightProb(f64),
    #[error("`{0}` is not in the command whitelist")]
    NotWhitelisted(String),
    #[error("unary operator `{0}` must be `^`, `_`, or a one-argument command")]
    BadUnary(String),
    #[error("empty operator string")]
    EmptyOperator,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TableError {
    #[error("table needs at least one row and one column (got {rows}x{cols})")]
    Empty { rows: usize, cols: usize },
    #[error("column spec `{spec}` must have {cols} characters from l, c, r")]
    BadColSpec { spec: String, cols: usize },
    #[error("lexicon cell source has no usable words")]
    EmptyLexicon,
    #[error(transparent)]
    Grammar(#[from] GrammarError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StructureWeights {
    pub atom: f64,
    pub unary: f64,
    pub binary: f64,
    pub big_op: f64,
}

impl Default for StructureWeights {
    fn default() -> Self {
        StructureWeights {
            atom: 0.35,
            unary: 0.25,
            binary: 0.3,
            big_op: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FormulaGrammar {
    pub atoms: Vec<String>,
    pub unary_ops: Vec<String>,
    pub binary_ops: Vec<String>,
    pub big_ops: Vec<String>,
    pub weights: StructureWeights,
    pub max_depth: u32,
    pub left_right_prob: f64,
}

impl Default for FormulaGrammar {
    fn default() -> Self {
        let mut atoms: Vec<String> = ('a'..='z').chain('A'..='Z').map(String::from).collect();
        atoms.extend(
            [
                "\\alpha", "\\beta", "\\gamma", "\\delta", "\\epsilon", "\\theta", "\\lambda",
                "\\mu", "\\pi", "\\tau",
            ]
            .map(String::from),
        );
        atoms.extend(('0'..='9').map(String::from));
        FormulaGrammar {
            atoms,
            unary_ops: ["^", "_", "\\hat", "\\dot", "\\bar", "\\sqrt"].map(String::from).to_vec(),
            binary_ops: ["+", "-", "=", "\\cdot", "\\frac"].map(String::from).to_vec(),
            big_ops: ["\\sum", "\\int", "\\prod"].map(String::from).to_vec(),
            weights: StructureWeights::default(),
            max_depth: 4,
            left_right_prob: 0.15,
        }
    }
}

impl FormulaGrammar {
    /// A grammar that only ever produces `atom`.
    pub fn single_atom(atom: &str) -> Self {
        FormulaGrammar {
            atoms: vec![atom.to_owned()],
            unary_ops: Vec::new(),
            binary_ops: Vec::new(),
            big_ops: Vec::new(),
            weights: StructureWeights::default(),
            max_depth: 0,
            left_right_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), GrammarError> {
        if self.atoms.is_empty() {
            return Err(GrammarError::NoAtoms);
        }
        let w = &self.weights;
        for (name, v) in [
            ("atom", w.atom),
            ("unary", w.unary),
            ("binary", w.binary),
            ("big_op", w.big_op),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(GrammarError::BadWeight(name));
            }
        }
        if !(0.0..=1.0).contains(&self.left_right_prob) {
            return Err(GrammarError::BadLeftRightProb(self.left_right_prob));
        }
        for item in self
            .atoms
            .iter()
            .chain(&self.unary_ops)
            .chain(&self.binary_ops)
            .chain(&self.big_ops)
        {
            if item.is_empty() {
                return Err(GrammarError::EmptyOperator);
            }
            check_whitelisted(item)?;
        }
        for op in &self.unary_ops {
            let is_script = op == "^" || op == "_";
            let is_command = op.starts_with('\\') && tokenize(op).len() == 1;
            if !is_script && !is_command {
                return Err(GrammarError::BadUnary(op.clone()));
            }
        }
        Ok(())
    }

    /// Commands this grammar can emit, including `\left`/`\right`.
    pub fn commands(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .atoms
            .iter()
            .chain(&self.unary_ops)
            .chain(&self.binary_ops)
            .chain(&self.big_ops)
            .flat_map(|s| tokenize(s).tokens)
            .filter(|t| t.kind == TokenKind::Command)
            .map(|t| t.text)
            .collect();
        if self.left_right_prob > 0.0 {
            out.push("\\left".into());
            out.push("\\right".into());
        }
        out.sort();
        out.dedup();
        out
    }
}

fn check_whitelisted(item: &str) -> Result<(), GrammarError> {
    for tok in tokenize(item).tokens {
        match tok.kind {
            TokenKind::Command => {
                if !COMMAND_WHITELIST.contains(&tok.text.as_str()) {
                    return Err(GrammarError::NotWhitelisted(tok.text));
                }
            }
            TokenKind::Char | TokenKind::Word => {
                if tok.text.chars().any(|c| matches!(c, '&' | '#' | '%' | '~' | '$')) {
                    return Err(GrammarError::NotWhitelisted(tok.text));
                }
            }
            // Braces, comments, environments, and math shifts inside grammar
            // items would break the balance guarantees.
            _ => return Err(GrammarError::NotWhitelisted(tok.text)),
        }
    }
    Ok(())
}

/// Appends `piece`, inserting a space when a control word would otherwise
/// absorb the following letters (`\cdot` + `y`).
fn push_piece(out: &mut String, piece: &str) {
    let ends_in_control_word = {
        let trailing = out
            .bytes()
            .rev()
            .take_while(u8::is_ascii_alphabetic)
            .count();
        trailing > 0
            && out
                .len()
                .checked_sub(trailing + 1)
                .is_some_and(|i| out.as_bytes()[i] == b'\\')
    };
    if ends_in_control_word && piece.starts_with(|c: char| c.is_ascii_alphabetic()) {
        out.push(' ');
    }
    out.push_str(piece);
}

#[derive(Clone, Copy)]
enum Production {
    Atom,
    Unary,
    Binary,
    BigOp,
}

struct Generator<'g, R> {
    grammar: &'g FormulaGrammar,
    rng: R,
}

impl<R: Rng> Generator<'_, R> {
    fn pick<'a>(&mut self, items: &'a [String]) -> &'a str {
        items.choose(&mut self.rng).expect("non-empty")
    }

    fn production(&mut self, depth: u32) -> Production {
        let g = self.grammar;
        if depth >= g.max_depth {
            return Production::Atom;
        }
        let w = &g.weights;
        let options = [
            (Production::Atom, w.atom),
            (Production::Unary, if g.unary_ops.is_empty() { 0.0 } else { w.unary }),
            (Production::Binary, if g.binary_ops.is_empty() { 0.0 } else { w.binary }),
            (Production::BigOp, if g.big_ops.is_empty() { 0.0 } else { w.big_op }),
        ];
        let total: f64 = options.iter().map(|(_, w)| w).sum();
        if total <= 0.0 {
            return Production::Atom;
        }
        let mut x = self.rng.random::<f64>() * total;
        for (p, w) in options {
            if w > 0.0 && x < w {
                return p;
            }
            x -= w;
        }
        options
            .iter()
            .rev()
            .find(|(_, w)| *w > 0.0)
            .map_or(Production::Atom, |(p, _)| *p)
    }

    fn expr(&mut self, depth: u32, out: &mut String) {
        let g = self.grammar;
        let production = self.production(depth);
        let wrap = !matches!(production, Production::Atom)
            && g.left_right_prob > 0.0
            && self.rng.random::<f64>() < g.left_right_prob;
        if wrap {
            push_piece(out, "\\left(");
        }
        match production {
            Production::Atom => {
                let atom = self.pick(&g.atoms);
                push_piece(out, atom);
            }
            Production::Unary => {
                let op = self.pick(&g.unary_ops);
                if op == "^" || op == "_" {
                    // Scripts attach to a plain atom so double scripts cannot
                    // arise.
                    let base = self.pick(&g.atoms);
                    push_piece(out, base);
                    out.push_str(op);
                } else {
                    push_piece(out, op);
                }
                out.push('{');
                self.expr(depth + 1, out);
                out.push('}');
            }
            Production::Binary => {
                let op = self.pick(&g.binary_ops);
                if PREFIX_BINARY.contains(&op) {
                    push_piece(out, op);
                    out.push('{');
                    self.expr(depth + 1, out);
                    out.push_str("}{");
                    self.expr(depth + 1, out);
                    out.push('}');
                } else {
                    self.expr(depth + 1, out);
                    push_piece(out, op);
                    self.expr(depth + 1, out);
                }
            }
            Production::BigOp => {
                let op = self.pick(&g.big_ops);
                push_piece(out, op);
                if self.rng.random_bool(0.7) {
                    out.push_str("_{");
                    self.expr(depth + 1, out);
                    out.push('}');
                }
                if self.rng.random_bool(0.5) {
                    out.push_str("^{");
                    self.expr(depth + 1, out);
                    out.push('}');
                }
                self.expr(depth + 1, out);
            }
        }
        if wrap {
            push_piece(out, "\\right)");
        }
    }
}

const FORMULA_TAG: u64 = 0x666f_726d_756c_6100;
const DISPLAY_TAG: u64 = 0x6469_7370_6c61_7900;
const TABLE_TAG: u64 = 0x7461_626c_6500_0000;

/// Generates a math-mode formula body (no delimiters).
pub fn gen_formula(seed: u64, grammar: &FormulaGrammar) -> Result<String, GrammarError> {
    grammar.validate()?;
    Ok(formula_unchecked(seed ^ FORMULA_TAG, grammar))
}

fn formula_unchecked(seed: u64, grammar: &FormulaGrammar) -> String {
    let mut gen = Generator {
        grammar,
        rng: rng_for(seed),
    };
    let mut out = String::new();
    gen.expr(0, &mut out);
    out
}

/// Generates a display formula wrapped in `\[ \]` or an `equation` environment.
pub fn gen_display_block(seed: u64, grammar: &FormulaGrammar) -> Result<String, GrammarError> {
    grammar.validate()?;
    let body = formula_unchecked(seed ^ FORMULA_TAG, grammar);
    let mut rng = rng_for(seed ^ DISPLAY_TAG);
    Ok(if rng.random_bool(0.5) {
        format!("\\[{body}\\]")
    } else {
        format!("\\begin{{equation}}{body}\\end{{equation}}")
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellSource {
    /// Words drawn from the given lexicon.
    Lexicon(Vec<String>),
    /// `$…$`-wrapped pseudo-formulas (tabular cells are text mode).
    PseudoFormula,
    /// Runs of one to four digits.
    DigitRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    pub rows: usize,
    pub cols: usize,
    pub col_spec: String,
    pub cell_source: CellSource,
}

impl TableSpec {
    pub fn validate(&self) -> Result<(), TableError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(TableError::Empty {
                rows: self.rows,
                cols: self.cols,
            });
        }
        if self.col_spec.chars().count() != self.cols
            || !self.col_spec.chars().all(|c| matches!(c, 'l' | 'c' | 'r'))
        {
            return Err(TableError::BadColSpec {
                spec: self.col_spec.clone(),
                cols: self.cols,
            });
        }
        if let CellSource::Lexicon(words) = &self.cell_source {
            if !words.iter().any(|w| is_safe_cell_word(w)) {
                return Err(TableError::EmptyLexicon);
            }
        }
        Ok(())
    }
}

fn is_safe_cell_word(w: &str) -> bool {
    !w.is_empty()
        && w.chars()
            .all(|c| !c.is_whitespace() && !crate::lexer::is_active_char(c))
}

/// Generates a `tabular` with `rows x cols` cells, `&` between cells and `\\`
/// between rows.
pub fn gen_table(
    seed: u64,
    spec: &TableSpec,
    grammar: &FormulaGrammar,
) -> Result<String, TableError> {
    spec.validate()?;
    if spec.cell_source == CellSource::PseudoFormula {
        grammar.validate()?;
    }
    let words: Vec<&String> = match &spec.cell_source {
        CellSource::Lexicon(w) => w.iter().filter(|w| is_safe_cell_word(w)).collect(),
        _ => Vec::new(),
    };
    let mut rng = rng_for(seed ^ TABLE_TAG);
    let mut out = format!("\\begin{{tabular}}{{{}}}", spec.col_spec);
    for r in 0..spec.rows {
        if r > 0 {
            out.push_str("\\\\");
        }
        for c in 0..spec.cols {
            if c > 0 {
                out.push('&');
            }
            match &spec.cell_source {
                CellSource::Lexicon(_) => {
                    out.push_str(words.choose(&mut rng).expect("validated"));
                }
                CellSource::PseudoFormula => {
                    let cell_seed = rng.random::<u64>();
                    out.push('$');
                    out.push_str(&formula_unchecked(cell_seed, grammar));
                    out.push('$');
                }
                CellSource::DigitRun => {
                    let len = rng.random_range(1..=4);
                    for _ in 0..len {
                        out.push(char::from(b'0' + rng.random_range(0..10u8)));
                    }
                }
            }
        }
    }
    out.push_str("\\end{tabular}");
    Ok(out)
}

/// Draws a random small table spec: 2–4 rows, 2–4 columns.
pub fn random_table_spec(seed: u64, lexicon: &[String]) -> TableSpec {
    let mut rng = rng_for(seed ^ TABLE_TAG ^ 1);
    let rows = rng.random_range(2..=4);
    let cols = rng.random_range(2..=4);
    let col_spec: String = (0..cols)
        .map(|_| *b"lcr".choose(&mut rng).expect("non-empty") as char)
        .collect();
    let usable = lexicon.iter().any(|w| is_safe_cell_word(w));
    let cell_source = match rng.random_range(0..3) {
        0 if usable => CellSource::Lexicon(lexicon.to_vec()),
        1 => CellSource::DigitRun,
        _ => CellSource::PseudoFormula,
    };
    TableSpec {
        rows,
        cols,
        col_spec,
        cell_source,
    }
}
