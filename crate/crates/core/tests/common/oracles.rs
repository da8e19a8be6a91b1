//! Reference implementations written independently of the library code.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Levenshtein distance by memoized recursion on suffixes.
pub fn levenshtein_recursive(a: &[char], b: &[char]) -> usize {
    fn go(a: &[char], b: &[char], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = if a[i] == b[j] {
            go(a, b, i + 1, j + 1, memo)
        } else {
            1 + go(a, b, i + 1, j + 1, memo)
                .min(go(a, b, i + 1, j, memo))
                .min(go(a, b, i, j + 1, memo))
        };
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

/// Walks every alignment of `r` against `h` (match, substitute, delete,
/// insert) and returns the matches of the best one: lowest edit cost, then
/// most matches.
pub fn best_alignment_matches<T: PartialEq>(r: &[T], h: &[T]) -> usize {
    fn walk<T: PartialEq>(r: &[T], h: &[T], cost: usize, matches: usize, best: &mut (usize, usize)) {
        if r.is_empty() && h.is_empty() {
            // Compare (cost, -matches) lexicographically.
            if cost < best.0 || (cost == best.0 && matches > best.1) {
                *best = (cost, matches);
            }
            return;
        }
        if !r.is_empty() && !h.is_empty() {
            if r[0] == h[0] {
                walk(&r[1..], &h[1..], cost, matches + 1, best);
            } else {
                walk(&r[1..], &h[1..], cost + 1, matches, best);
            }
        }
        if !r.is_empty() {
            walk(&r[1..], h, cost + 1, matches, best);
        }
        if !h.is_empty() {
            walk(r, &h[1..], cost + 1, matches, best);
        }
    }
    let mut best = (usize::MAX, 0);
    walk(r, h, 0, 0, &mut best);
    best.1
}

const LATIN: &str = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ";
const ACCENTED: &str = "éèêàçùôîäöüßñáíóú¿¡";
const CYRILLIC: &str = "абвгдежзийклмнопрстуфхцчшщыэюяАБВГДЖ";
const HAN: &str = "数学公式函数积分微分方程矩阵向量";
const KANA: &str = "あいうえおかきくけこアイウエオカキ関数";
const LATEX: &str = "\\\\\\{}{}{}$$%&#^_~[]()";
const MISC: &str = "0123456789 \n\t  .,;:!?'\"+-=<>/|@*\u{0}\u{7}\u{feff}🙂";

/// A random string mixing Latin, accented Latin, Cyrillic, Han, kana,
/// LaTeX specials and odd characters.
pub fn fuzz_string(rng: &mut ChaCha8Rng, max_len: usize) -> String {
    let pools: Vec<Vec<char>> = [LATIN, ACCENTED, CYRILLIC, HAN, KANA, LATEX, MISC]
        .iter()
        .map(|s| s.chars().collect())
        .collect();
    let len = rng.random_range(0..=max_len);
    let mut s = String::with_capacity(len * 2);
    let mut pool = &pools[0];
    for _ in 0..len {
        if rng.random_bool(0.2) {
            pool = &pools[rng.random_range(0..pools.len())];
        }
        s.push(pool[rng.random_range(0..pool.len())]);
        if rng.random_bool(0.03) {
            let cmd = ["\\frac", "\\begin{x}", "\\end{x}", "\\left(", "\\right)", "\\[", "\\]", "\\alpha"];
            s.push_str(cmd[rng.random_range(0..cmd.len())]);
        }
    }
    s
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
