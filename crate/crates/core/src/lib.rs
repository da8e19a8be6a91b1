//! Synthesis and evaluation toolkit for low-bias LaTeX OCR datasets.
//!
//! Real LaTeX fragments are blended with grammar-generated pseudo-formulas,
//! pseudo-tables and pseudo-text, lightly corrupted (scrambled words, inserted
//! words and formulas, stray punctuation), packed into token-budgeted samples,
//! compiled with XeLaTeX and rasterized to fixed-size images. The corrupted
//! source is the label: a model trained on it has to read what is on the page
//! rather than what is likely.

pub mod assemble;
pub mod augment;
pub mod bpe;
pub mod config;
pub mod corpus;
pub mod lexer;
pub mod manifest;
pub mod metrics;
pub mod mixer;
pub mod perturb;
pub mod pipeline;
pub mod pseudo;
pub mod render;
pub mod seed;
pub mod segment;
