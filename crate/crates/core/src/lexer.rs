//! Lossless flat lexer for LaTeX source.
//!
//! The lexer never fails on valid UTF-8: anything it does not recognise
//! becomes an [`TokenKind::Other`] token, and concatenating the token texts
//! always reproduces the input byte-for-byte. Token counts used throughout the
//! crate (corpus accounting, sample budgets) are counts of the tokens this
//! module produces, excluding whitespace and comments.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LexError {
    #[error("input is not valid UTF-8 (first bad byte at offset {offset})")]
    InvalidUtf8 { offset: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    Command,
    Word,
    Char,
    BraceOpen,
    BraceClose,
    MathShift,
    EnvBegin,
    EnvEnd,
    Whitespace,
    Comment,
    Other,
}

impl TokenKind {
    /// Whether tokens of this kind contribute to token counts.
    pub fn is_counted(self) -> bool {
        !matches!(self, TokenKind::Whitespace | TokenKind::Comment)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
}

impl Token {
    fn new(kind: TokenKind, text: &str) -> Self {
        debug_assert!(!text.is_empty());
        Token {
            kind,
            text: text.to_owned(),
        }
    }

    /// Environment name for `EnvBegin` / `EnvEnd` tokens.
    pub fn env_name(&self) -> Option<&str> {
        match self.kind {
            TokenKind::EnvBegin | TokenKind::EnvEnd => {
                let open = self.text.find('{')?;
                Some(&self.text[open + 1..self.text.len() - 1])
            }
            _ => None,
        }
    }

    pub fn is_command(&self, name: &str) -> bool {
        self.kind == TokenKind::Command && self.text == name
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenStream {
    pub tokens: Vec<Token>,
    pub source_len: usize,
}

impl TokenStream {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Token> {
        self.tokens.iter()
    }

    /// Tokens that count towards budgets, in order.
    pub fn counted(&self) -> impl Iterator<Item = &Token> {
        self.tokens.iter().filter(|t| t.kind.is_counted())
    }

    pub fn count(&self) -> usize {
        self.counted().count()
    }
}

impl<'a> IntoIterator for &'a TokenStream {
    type Item = &'a Token;
    type IntoIter = std::slice::Iter<'a, Token>;

    fn into_iter(self) -> Self::IntoIter {
        self.tokens.iter()
    }
}

/// Scripts written without inter-word spaces. Each character is its own token
/// so counts and split points stay meaningful for Chinese and Japanese text.
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF      // hiragana, katakana
        | 0x3400..=0x4DBF    // CJK ext A
        | 0x4E00..=0x9FFF    // CJK unified
        | 0xF900..=0xFAFF    // compatibility ideographs
        | 0xFF66..=0xFF9F    // half-width katakana
        | 0x20000..=0x2FA1F) // ext B..
}

fn is_word_char(c: char) -> bool {
    c.is_alphabetic() && !is_cjk(c)
}

/// Lexes raw bytes, rejecting invalid UTF-8.
pub fn tokenize_bytes(source: &[u8]) -> Result<TokenStream, LexError> {
    let text = std::str::from_utf8(source).map_err(|e| LexError::InvalidUtf8 {
        offset: e.valid_up_to(),
    })?;
    Ok(tokenize(text))
}

pub fn tokenize(source: &str) -> TokenStream {
    let mut tokens = Vec::new();
    let mut rest = source;
    while !rest.is_empty() {
        let (kind, len) = next_token(rest);
        tokens.push(Token::new(kind, &rest[..len]));
        rest = &rest[len..];
    }
    TokenStream {
        tokens,
        source_len: source.len(),
    }
}

fn next_token(s: &str) -> (TokenKind, usize) {
    let mut chars = s.chars();
    let c = chars.next().expect("non-empty");
    match c {
        '\\' => lex_backslash(s),
        '{' => (TokenKind::BraceOpen, 1),
        '}' => (TokenKind::BraceClose, 1),
        '$' => {
            if s.as_bytes().get(1) == Some(&b'$') {
                (TokenKind::MathShift, 2)
            } else {
                (TokenKind::MathShift, 1)
            }
        }
        '%' => (TokenKind::Comment, s.find('\n').unwrap_or(s.len())),
        c if c.is_whitespace() => (TokenKind::Whitespace, run_len(s, char::is_whitespace)),
        c if is_word_char(c) => {
            let len = run_len(s, is_word_char);
            if len == c.len_utf8() {
                (TokenKind::Char, len)
            } else {
                (TokenKind::Word, len)
            }
        }
        c if c.is_control() => (TokenKind::Other, c.len_utf8()),
        c => (TokenKind::Char, c.len_utf8()),
    }
}

fn run_len(s: &str, pred: impl Fn(char) -> bool) -> usize {
    s.char_indices()
        .find(|&(_, c)| !pred(c))
        .map_or(s.len(), |(i, _)| i)
}

fn lex_backslash(s: &str) -> (TokenKind, usize) {
    let after = &s[1..];
    let letters = run_len(after, |c| c.is_ascii_alphabetic());
    if letters > 0 {
        let name = &after[..letters];
        let len = 1 + letters;
        if name == "begin" || name == "end" {
            if let Some(env_len) = env_suffix_len(&s[len..]) {
                let kind = if name == "begin" {
                    TokenKind::EnvBegin
                } else {
                    TokenKind::EnvEnd
                };
                return (kind, len + env_len);
            }
        }
        return (TokenKind::Command, len);
    }
    match after.chars().next() {
        Some(c) => (TokenKind::Command, 1 + c.len_utf8()),
        None => (TokenKind::Other, 1),
    }
}

/// Length of a `{name}` suffix directly following `\begin` / `\end`.
fn env_suffix_len(s: &str) -> Option<usize> {
    let inner = s.strip_prefix('{')?;
    let close = inner.find('}')?;
    let name = &inner[..close];
    let valid = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '*' || c == '@');
    valid.then_some(close + 2)
}

pub fn detokenize(stream: &TokenStream) -> String {
    let mut out = String::with_capacity(stream.source_len);
    for t in &stream.tokens {
        out.push_str(&t.text);
    }
    out
}

/// Number of non-whitespace, non-comment tokens in `source`.
pub fn count_tokens(source: &str) -> usize {
    let mut rest = source;
    let mut n = 0;
    while !rest.is_empty() {
        let (kind, len) = next_token(rest);
        if kind.is_counted() {
            n += 1;
        }
        rest = &rest[len..];
    }
    n
}

pub fn count_tokens_bytes(source: &[u8]) -> Result<usize, LexError> {
    tokenize_bytes(source).map(|s| s.count())
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Imbalance {
    #[error("closing brace without an open group at token {index}")]
    NegativeBraceDepth { index: usize },
    #[error("{depth} brace group(s) left open")]
    UnclosedBraces { depth: usize },
    #[error("\\right without matching \\left at token {index}")]
    UnmatchedRight { index: usize },
    #[error("{count} \\left delimiter(s) left open")]
    UnclosedLeft { count: usize },
    #[error("\\end{{{found}}} closes \\begin{{{expected}}} at token {index}")]
    EnvMismatch {
        expected: String,
        found: String,
        index: usize,
    },
    #[error("\\end{{{found}}} without any open environment at token {index}")]
    UnopenedEnv { found: String, index: usize },
    #[error("environment `{name}` left open")]
    UnclosedEnv { name: String },
    #[error("math delimiter `{delim}` unbalanced at token {index}")]
    MathDelimiter { delim: String, index: usize },
    #[error("math mode left open by `{delim}`")]
    UnclosedMath { delim: String },
}

/// Structural summary of a balanced stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Balance {
    pub max_brace_depth: usize,
    pub left_right_pairs: usize,
    pub environments: usize,
}

/// Checks that braces, `\left`/`\right`, environments, and math delimiters
/// (`$`, `$$`, `\(`, `\)`, `\[`, `\]`) are properly nested.
pub fn check_balance(stream: &TokenStream) -> Result<Balance, Imbalance> {
    let mut depth = 0usize;
    let mut max_depth = 0usize;
    let mut open_left = 0usize;
    let mut pairs = 0usize;
    let mut envs: Vec<&str> = Vec::new();
    let mut env_count = 0usize;
    let mut math: Option<&str> = None;

    for (index, tok) in stream.tokens.iter().enumerate() {
        match tok.kind {
            TokenKind::BraceOpen => {
                depth += 1;
                max_depth = max_depth.max(depth);
            }
            TokenKind::BraceClose => {
                depth = depth
                    .checked_sub(1)
                    .ok_or(Imbalance::NegativeBraceDepth { index })?;
            }
            TokenKind::EnvBegin => {
                envs.push(tok.env_name().unwrap_or_default());
                env_count += 1;
            }
            TokenKind::EnvEnd => {
                let found = tok.env_name().unwrap_or_default();
                match envs.pop() {
                    Some(expected) if expected == found => {}
                    Some(expected) => {
                        return Err(Imbalance::EnvMismatch {
                            expected: expected.to_owned(),
                            found: found.to_owned(),
                            index,
                        })
                    }
                    None => {
                        return Err(Imbalance::UnopenedEnv {
                            found: found.to_owned(),
                            index,
                        })
                    }
                }
            }
            TokenKind::MathShift => {
                let delim = tok.text.as_str();
                math = match math {
                    None => Some(delim),
                    Some(open) if open == delim => None,
                    Some(_) => {
                        return Err(Imbalance::MathDelimiter {
                            delim: delim.to_owned(),
                            index,
                        })
                    }
                };
            }
            TokenKind::Command => match tok.text.as_str() {
                "\\left" => open_left += 1,
                "\\right" => {
                    open_left = open_left
                        .checked_sub(1)
                        .ok_or(Imbalance::UnmatchedRight { index })?;
                    pairs += 1;
                }
                "\\(" | "\\[" => {
                    if math.is_some() {
                        return Err(Imbalance::MathDelimiter {
                            delim: tok.text.clone(),
                            index,
                        });
                    }
                    math = Some(tok.text.as_str());
                }
                "\\)" | "\\]" => {
                    let opener = if tok.text == "\\)" { "\\(" } else { "\\[" };
                    if math != Some(opener) {
                        return Err(Imbalance::MathDelimiter {
                            delim: tok.text.clone(),
                            index,
                        });
                    }
                    math = None;
                }
                _ => {}
            },
            _ => {}
        }
    }

    if depth > 0 {
        return Err(Imbalance::UnclosedBraces { depth });
    }
    if open_left > 0 {
        return Err(Imbalance::UnclosedLeft { count: open_left });
    }
    if let Some(name) = envs.pop() {
        return Err(Imbalance::UnclosedEnv {
            name: name.to_owned(),
        });
    }
    if let Some(delim) = math {
        return Err(Imbalance::UnclosedMath {
            delim: delim.to_owned(),
        });
    }
    Ok(Balance {
        max_brace_depth: max_depth,
        left_right_pairs: pairs,
        environments: env_count,
    })
}

/// Where a split between two adjacent units happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gap {
    /// Units were separated by whitespace.
    Space,
    /// Units touched directly (a boundary next to a CJK character).
    Tight,
}

/// A maximal run of tokens that must stay together when text is split,
/// perturbed, or packed into samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unit {
    pub text: String,
    /// Whitespace that followed this unit in the source (empty for the last
    /// unit, or when the next unit touches it).
    pub trailing: String,
    pub tokens: Vec<Token>,
}

impl Unit {
    pub fn token_count(&self) -> usize {
        self.tokens.iter().filter(|t| t.kind.is_counted()).count()
    }

    pub fn gap_after(&self) -> Gap {
        if self.trailing.is_empty() {
            Gap::Tight
        } else {
            Gap::Space
        }
    }

    /// Plain units hold only words and inert characters, so their characters
    /// can be rearranged or decorated without changing LaTeX structure.
    pub fn is_plain(&self) -> bool {
        self.tokens.iter().all(|t| match t.kind {
            TokenKind::Word => true,
            TokenKind::Char => !t.text.chars().any(is_active_char),
            _ => false,
        })
    }
}

/// Characters with special meaning to TeX in text mode.
pub fn is_active_char(c: char) -> bool {
    matches!(c, '\\' | '{' | '}' | '$' | '%' | '&' | '#' | '^' | '_' | '~')
}

/// Splits text into units at top-level boundaries: whitespace outside any
/// brace group, environment, or math mode, and between adjacent CJK
/// characters. Leading and trailing whitespace of the whole input is dropped;
/// comments stay attached to the unit they follow.
pub fn split_units(source: &str) -> Vec<Unit> {
    let stream = tokenize(source);
    let mut units: Vec<Unit> = Vec::new();
    let mut current: Vec<Token> = Vec::new();
    let mut depth = 0usize;
    let mut envs = 0usize;
    let mut math: Option<String> = None;

    let flush = |current: &mut Vec<Token>, units: &mut Vec<Unit>, trailing: &str| {
        if current.is_empty() {
            return;
        }
        let text: String = current.iter().map(|t| t.text.as_str()).collect();
        units.push(Unit {
            text,
            trailing: trailing.to_owned(),
            tokens: std::mem::take(current),
        });
    };

    for tok in stream.tokens {
        let top = depth == 0 && envs == 0 && math.is_none();
        if top && tok.kind == TokenKind::Whitespace {
            flush(&mut current, &mut units, &tok.text);
            continue;
        }
        // Split between CJK characters (and at a CJK/non-CJK boundary) at
        // top level so space-free scripts still have split points.
        if top && !current.is_empty() {
            let prev_cjk = current.len() == 1 && current[0].text.chars().all(is_cjk);
            let next_cjk = tok.kind == TokenKind::Char && tok.text.chars().all(is_cjk);
            if prev_cjk || next_cjk {
                let prev_plain = current
                    .iter()
                    .all(|t| matches!(t.kind, TokenKind::Word | TokenKind::Char));
                if prev_plain && matches!(tok.kind, TokenKind::Word | TokenKind::Char) {
                    flush(&mut current, &mut units, "");
                }
            }
        }
        match tok.kind {
            TokenKind::BraceOpen => depth += 1,
            TokenKind::BraceClose => depth = depth.saturating_sub(1),
            TokenKind::EnvBegin => envs += 1,
            TokenKind::EnvEnd => envs = envs.saturating_sub(1),
            TokenKind::MathShift => {
                math = match &math {
                    None => Some(tok.text.clone()),
                    Some(open) if *open == tok.text => None,
                    Some(open) => Some(open.clone()),
                }
            }
            TokenKind::Command => match tok.text.as_str() {
                "\\(" | "\\[" if math.is_none() => math = Some(tok.text.clone()),
                "\\)" if math.as_deref() == Some("\\(") => math = None,
                "\\]" if math.as_deref() == Some("\\[") => math = None,
                _ => {}
            },
            _ => {}
        }
        current.push(tok);
    }
    flush(&mut current, &mut units, "");
    // Trailing whitespace of the final unit is not part of the content.
    if let Some(last) = units.last_mut() {
        last.trailing.clear();
    }
    units
}

/// Joins units back into source, keeping the original inter-unit whitespace.
pub fn join_units(units: &[Unit]) -> String {
    let mut out = String::new();
    for (i, u) in units.iter().enumerate() {
        out.push_str(&u.text);
        if i + 1 < units.len() {
            out.push_str(&u.trailing);
        }
    }
    out
}

/// Whether two units can be placed next to each other without whitespace and
/// still lex as two separate groups.
pub fn can_touch(left: &str, right: &str) -> bool {
    match (left.chars().last(), right.chars().next()) {
        (Some(a), Some(b)) => is_cjk(a) || is_cjk(b),
        _ => true,
    }
}

/// Removes comments (and nothing else) from LaTeX source.
pub fn strip_comments(source: &str) -> String {
    tokenize(source)
        .tokens
        .into_iter()
        .filter(|t| t.kind != TokenKind::Comment)
        .map(|t| t.text)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(s: &str) -> Vec<(TokenKind, String)> {
        tokenize(s)
            .tokens
            .into_iter()
            .map(|t| (t.kind, t.text))
            .collect()
    }

    fn k(kind: TokenKind, text: &str) -> (TokenKind, String) {
        (kind, text.to_owned())
    }

    #[test]
    fn empty_input() {
        let s = tokenize("");
        assert!(s.is_empty());
        assert_eq!(s.source_len, 0);
        assert_eq!(detokenize(&s), "");
        assert_eq!(count_tokens(""), 0);
    }

    #[test]
    fn frac_example() {
        use TokenKind::*;
        assert_eq!(
            kinds("\\frac{a}{b}"),
            vec![
                k(Command, "\\frac"),
                k(BraceOpen, "{"),
                k(Char, "a"),
                k(BraceClose, "}"),
                k(BraceOpen, "{"),
                k(Char, "b"),
                k(BraceClose, "}"),
            ]
        );
        assert_eq!(count_tokens("\\frac{a}{b}"), 7);
    }

    #[test]
    fn inline_math_example() {
        use TokenKind::*;
        assert_eq!(
            kinds("$x$ y"),
            vec![
                k(MathShift, "$"),
                k(Char, "x"),
                k(MathShift, "$"),
                k(Whitespace, " "),
                k(Char, "y"),
            ]
        );
    }

    #[test]
    fn whitespace_not_counted() {
        assert_eq!(count_tokens("x  y"), 2);
        assert_eq!(kinds("x  y")[1], k(TokenKind::Whitespace, "  "));
    }

    #[test]
    fn commands_are_greedy_over_letters() {
        use TokenKind::*;
        assert_eq!(kinds("\\frac2"), vec![k(Command, "\\frac"), k(Char, "2")]);
        assert_eq!(kinds("\\\\"), vec![k(Command, "\\\\")]);
        assert_eq!(kinds("\\{"), vec![k(Command, "\\{")]);
        assert_eq!(kinds("\\é"), vec![k(Command, "\\é")]);
        assert_eq!(kinds("a\\"), vec![k(Char, "a"), k(Other, "\\")]);
    }

    #[test]
    fn display_delimiters() {
        use TokenKind::*;
        assert_eq!(
            kinds("$$x$$"),
            vec![k(MathShift, "$$"), k(Char, "x"), k(MathShift, "$$")]
        );
        assert_eq!(
            kinds("\\[x\\]"),
            vec![k(Command, "\\["), k(Char, "x"), k(Command, "\\]")]
        );
    }

    #[test]
    fn environments_carry_names() {
        let s = tokenize("\\begin{tabular}{cc}a\\end{tabular}");
        assert_eq!(s.tokens[0].kind, TokenKind::EnvBegin);
        assert_eq!(s.tokens[0].env_name(), Some("tabular"));
        let last = s.tokens.last().unwrap();
        assert_eq!(last.kind, TokenKind::EnvEnd);
        assert_eq!(last.env_name(), Some("tabular"));
        assert_eq!(
            tokenize("\\begin{align*}").tokens[0].env_name(),
            Some("align*")
        );
        // A `\begin` not followed by a name is a plain command.
        assert_eq!(tokenize("\\begin x").tokens[0].kind, TokenKind::Command);
    }

    #[test]
    fn comments_run_to_end_of_line() {
        use TokenKind::*;
        assert_eq!(
            kinds("a % note\nb"),
            vec![
                k(Char, "a"),
                k(Whitespace, " "),
                k(Comment, "% note"),
                k(Whitespace, "\n"),
                k(Char, "b"),
            ]
        );
        assert_eq!(count_tokens("% only a comment"), 0);
        assert_eq!(strip_comments("a% x\nb"), "a\nb");
    }

    #[test]
    fn cjk_characters_are_single_tokens() {
        let s = tokenize("数学abc");
        let texts: Vec<_> = s.tokens.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, vec!["数", "学", "abc"]);
        assert_eq!(s.tokens[2].kind, TokenKind::Word);
        assert_eq!(count_tokens("ひらがな"), 4);
        assert_eq!(count_tokens("Привет мир"), 2);
    }

    #[test]
    fn invalid_utf8_rejected() {
        assert_eq!(
            tokenize_bytes(b"ab\xffcd"),
            Err(LexError::InvalidUtf8 { offset: 2 })
        );
        assert_eq!(count_tokens_bytes(b"\\frac{a}{b}"), Ok(7));
    }

    #[test]
    fn balance_accepts_nested_structures() {
        let b = check_balance(&tokenize(
            "\\begin{equation}\\left(\\frac{a}{b^{2}}\\right)\\end{equation} $x$ \\[y\\]",
        ))
        .unwrap();
        assert_eq!(b.max_brace_depth, 2);
        assert_eq!(b.left_right_pairs, 1);
        assert_eq!(b.environments, 1);
    }

    #[test]
    fn balance_rejects_defects() {
        let err = |s: &str| check_balance(&tokenize(s)).unwrap_err();
        assert!(matches!(err("}{"), Imbalance::NegativeBraceDepth { .. }));
        assert!(matches!(err("{a"), Imbalance::UnclosedBraces { depth: 1 }));
        assert!(matches!(err("\\right)"), Imbalance::UnmatchedRight { .. }));
        assert!(matches!(err("\\left("), Imbalance::UnclosedLeft { count: 1 }));
        assert!(matches!(
            err("\\begin{a}\\end{b}"),
            Imbalance::EnvMismatch { .. }
        ));
        assert!(matches!(err("\\end{a}"), Imbalance::UnopenedEnv { .. }));
        assert!(matches!(err("\\begin{a}"), Imbalance::UnclosedEnv { .. }));
        assert!(matches!(err("$x"), Imbalance::UnclosedMath { .. }));
        assert!(matches!(err("$x$$"), Imbalance::MathDelimiter { .. }));
        assert!(matches!(err("\\]"), Imbalance::MathDelimiter { .. }));
    }

    #[test]
    fn units_split_only_at_top_level() {
        let units = split_units("  one $a b$ {c d}\n\\begin{x} e f \\end{x} two  ");
        let texts: Vec<_> = units.iter().map(|u| u.text.as_str()).collect();
        assert_eq!(
            texts,
            vec!["one", "$a b$", "{c d}", "\\begin{x} e f \\end{x}", "two"]
        );
        assert_eq!(units[2].trailing, "\n");
        assert_eq!(units[4].trailing, "");
        assert_eq!(
            join_units(&units),
            "one $a b$ {c d}\n\\begin{x} e f \\end{x} two"
        );
    }

    #[test]
    fn units_split_between_cjk_characters() {
        let units = split_units("数学很好 ok");
        let texts: Vec<_> = units.iter().map(|u| u.text.as_str()).collect();
        assert_eq!(texts, vec!["数", "学", "很", "好", "ok"]);
        assert_eq!(units[0].gap_after(), Gap::Tight);
        assert_eq!(units[3].gap_after(), Gap::Space);
        assert_eq!(join_units(&units), "数学很好 ok");
    }

    #[test]
    fn plain_units() {
        let units = split_units("word, \\emph{x} a&b");
        assert!(units[0].is_plain());
        assert!(!units[1].is_plain());
        assert!(!units[2].is_plain());
    }

    #[test]
    fn touching_requires_cjk() {
        assert!(can_touch("数", "abc"));
        assert!(can_touch("abc", "学"));
        assert!(!can_touch("ab", "cd"));
    }
}
