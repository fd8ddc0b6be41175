//! Parameter blocks of the tree decoder and their text checkpoint format.
//!
//! Checkpoint layout (UTF-8, line oriented, version 1):
//!
//! ```text
//! lbf-policy 1
//! width <d>
//! words <count>
//! <one word per line, id order>
//! blocks <count>
//! block <name> <rows> <cols>
//! <rows lines of cols space-separated f64 values>
//! ...
//! ```
//!
//! Values are written with Rust's shortest round-trip formatting, so a
//! save/load cycle reproduces the parameters bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use thiserror::Error;

use crate::expr::{Constant, Op};

pub const CHECKPOINT_MAGIC: &str = "lbf-policy";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Row-major dense matrix; vectors are `n x 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Self {
        Matrix {
            rows,
            cols,
            data: (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect(),
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out += self[:, offset..offset + x.len()] * x`
    pub fn mul_vec_into(&self, offset: usize, x: &[f64], out: &mut [f64]) {
        debug_assert!(offset + x.len() <= self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.data[r * self.cols + offset..r * self.cols + offset + x.len()];
            *o += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// `dx += self[:, offset..]^T dy`
    pub fn mul_vec_transpose_into(&self, offset: usize, dy: &[f64], dx: &mut [f64]) {
        for (r, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &self.data[r * self.cols + offset..r * self.cols + offset + dx.len()];
            for (d, w) in dx.iter_mut().zip(row) {
                *d += g * w;
            }
        }
    }

    /// `self[:, offset..] += dy x^T`
    pub fn add_outer(&mut self, offset: usize, dy: &[f64], x: &[f64]) {
        for (r, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &mut self.data[r * self.cols + offset..r * self.cols + offset + x.len()];
            for (w, v) in row.iter_mut().zip(x) {
                *w += g * v;
            }
        }
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

macro_rules! param_blocks {
    ($($variant:ident => $name:literal),* $(,)?) => {
        /// Named parameter block.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum Param { $($variant),* }

        impl Param {
            pub const ALL: &'static [Param] = &[$(Param::$variant),*];

            pub fn name(self) -> &'static str {
                match self { $(Param::$variant => $name),* }
            }

            pub fn from_name(name: &str) -> Option<Param> {
                match name { $($name => Some(Param::$variant),)* _ => None }
            }
        }
    };
}

param_blocks! {
    WordEmbedding => "word_embedding",
    FwdGateInput => "fwd_gate_input",
    FwdGateHidden => "fwd_gate_hidden",
    FwdGateBias => "fwd_gate_bias",
    FwdCandInput => "fwd_cand_input",
    FwdCandHidden => "fwd_cand_hidden",
    FwdCandBias => "fwd_cand_bias",
    BwdGateInput => "bwd_gate_input",
    BwdGateHidden => "bwd_gate_hidden",
    BwdGateBias => "bwd_gate_bias",
    BwdCandInput => "bwd_cand_input",
    BwdCandHidden => "bwd_cand_hidden",
    BwdCandBias => "bwd_cand_bias",
    AttnW => "attn_w",
    AttnV => "attn_v",
    ScoreW => "score_w",
    ScoreV => "score_v",
    OpEmbedding => "op_embedding",
    ConstEmbedding => "const_embedding",
    GoalLeft => "goal_left",
    GoalRight => "goal_right",
    Subtree => "subtree",
}

impl Param {
    pub fn index(self) -> usize {
        self as usize
    }

    fn shape(self, width: usize, words: usize) -> (usize, usize) {
        let d = width;
        match self {
            Param::WordEmbedding => (words, d),
            Param::FwdGateInput | Param::FwdGateHidden | Param::BwdGateInput | Param::BwdGateHidden => (2 * d, d),
            Param::FwdGateBias | Param::BwdGateBias => (2 * d, 1),
            Param::FwdCandInput | Param::FwdCandHidden | Param::BwdCandInput | Param::BwdCandHidden => (d, d),
            Param::FwdCandBias | Param::BwdCandBias => (d, 1),
            Param::AttnW => (d, 2 * d),
            Param::AttnV | Param::ScoreV => (d, 1),
            Param::ScoreW => (d, 3 * d),
            Param::OpEmbedding => (Op::ALL.len(), d),
            Param::ConstEmbedding => (Constant::ALL.len(), d),
            Param::GoalLeft => (d, 3 * d),
            Param::GoalRight => (d, 4 * d),
            Param::Subtree => (d, 3 * d),
        }
    }
}

/// Word-to-id table; id 0 is reserved for unknown words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordVocab {
    words: Vec<String>,
    ids: BTreeMap<String, usize>,
}

pub const UNKNOWN_WORD: &str = "<unk>";

impl WordVocab {
    pub fn build<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut vocab = WordVocab {
            words: vec![UNKNOWN_WORD.to_string()],
            ids: BTreeMap::new(),
        };
        vocab.ids.insert(UNKNOWN_WORD.to_string(), 0);
        let mut sorted: Vec<&str> = words.into_iter().collect();
        sorted.sort_unstable();
        sorted.dedup();
        for w in sorted {
            if !vocab.ids.contains_key(w) {
                vocab.ids.insert(w.to_string(), vocab.words.len());
                vocab.words.push(w.to_string());
            }
        }
        vocab
    }

    pub fn id(&self, word: &str) -> usize {
        self.ids.get(word).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

/// All trainable tensors, indexed by [`Param`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub width: usize,
    pub blocks: Vec<Matrix>,
}

impl PolicyParams {
    pub fn zeros(width: usize, words: usize) -> Self {
        PolicyParams {
            width,
            blocks: Param::ALL
                .iter()
                .map(|p| {
                    let (r, c) = p.shape(width, words);
                    Matrix::zeros(r, c)
                })
                .collect(),
        }
    }

    pub fn uniform<R: Rng + ?Sized>(width: usize, words: usize, scale: f64, rng: &mut R) -> Self {
        PolicyParams {
            width,
            blocks: Param::ALL
                .iter()
                .map(|p| {
                    let (r, c) = p.shape(width, words);
                    Matrix::uniform(r, c, scale, rng)
                })
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        PolicyParams {
            width: self.width,
            blocks: self.blocks.iter().map(|m| Matrix::zeros(m.rows, m.cols)).collect(),
        }
    }

    pub fn get(&self, p: Param) -> &Matrix {
        &self.blocks[p.index()]
    }

    pub fn get_mut(&mut self, p: Param) -> &mut Matrix {
        &mut self.blocks[p.index()]
    }

    pub fn norm(&self) -> f64 {
        self.blocks.iter().map(Matrix::sum_squares).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for m in &mut self.blocks {
            m.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// `self += factor * other`
    pub fn add_scaled(&mut self, other: &PolicyParams, factor: f64) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += factor * y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(|m| m.data.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
}

pub fn write_checkpoint(params: &PolicyParams, words: &WordVocab) -> String {
    let mut out = String::new();
    writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}").unwrap();
    writeln!(out, "width {}", params.width).unwrap();
    writeln!(out, "words {}", words.len()).unwrap();
    for w in words.words() {
        writeln!(out, "{w}").unwrap();
    }
    writeln!(out, "blocks {}", params.blocks.len()).unwrap();
    for (p, m) in Param::ALL.iter().zip(&params.blocks) {
        writeln!(out, "block {} {} {}", p.name(), m.rows, m.cols).unwrap();
        for r in 0..m.rows {
            let row: Vec<String> = m.row(r).iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
    }
    out
}

pub fn read_checkpoint(text: &str) -> Result<(PolicyParams, WordVocab), CheckpointError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| {
        lines.next().ok_or_else(|| CheckpointError::Format {
            line: 0,
            message: format!("unexpected end of file, expected {what}"),
        })
    };
    let bad = |line: usize, message: &str| CheckpointError::Format {
        line,
        message: message.to_string(),
    };
    let header_value = |(line, text): (usize, &str), key: &str| -> Result<usize, CheckpointError> {
        text.strip_prefix(key)
            .and_then(|rest| rest.trim().parse().ok())
            .ok_or_else(|| bad(line, &format!("expected `{key} <n>`")))
    };

    let (line, magic) = next("header")?;
    let version: u32 = magic
        .strip_prefix(CHECKPOINT_MAGIC)
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| bad(line, "not a policy checkpoint"))?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let width = header_value(next("width")?, "width")?;
    let word_count = header_value(next("words")?, "words")?;
    let mut word_list = Vec::with_capacity(word_count);
    for _ in 0..word_count {
        word_list.push(next("word")?.1.to_string());
    }
    if word_list.first().map(String::as_str) != Some(UNKNOWN_WORD) {
        return Err(bad(4, "first word must be the unknown-word marker"));
    }
    let words = WordVocab {
        ids: word_list.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect(),
        words: word_list,
    };
    let block_count = header_value(next("blocks")?, "blocks")?;
    let mut params = PolicyParams::zeros(width, words.len());
    if block_count != Param::ALL.len() {
        return Err(bad(0, "unexpected number of parameter blocks"));
    }
    for _ in 0..block_count {
        let (line, header) = next("block header")?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        let [tag, name, rows, cols] = parts[..] else {
            return Err(bad(line, "expected `block <name> <rows> <cols>`"));
        };
        let param = Param::from_name(name).filter(|_| tag == "block").ok_or_else(|| bad(line, "unknown block"))?;
        let (rows, cols): (usize, usize) = (
            rows.parse().map_err(|_| bad(line, "bad row count"))?,
            cols.parse().map_err(|_| bad(line, "bad column count"))?,
        );
        let m = params.get_mut(param);
        if (m.rows, m.cols) != (rows, cols) {
            return Err(bad(line, "block shape does not match width and word count"));
        }
        for r in 0..rows {
            let (line, text) = next("matrix row")?;
            let values: Vec<f64> = text
                .split_whitespace()
                .map(|v| v.parse().map_err(|_| bad(line, "bad number")))
                .collect::<Result<_, _>>()?;
            if values.len() != cols {
                return Err(bad(line, "wrong number of columns"));
            }
            m.row_mut(r).copy_from_slice(&values);
        }
    }
    Ok((params, words))
}
