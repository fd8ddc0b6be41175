//! Problems, corpora and the exhaustive solution oracle.
//!
//! Corpus files use one JSON object per problem with the fields `id`,
//! `segmented_text` (whitespace-separated words), `equation` (infix, optional
//! `x=` prefix) and `ans`. A file may hold a JSON array, JSON lines, or a plain
//! stream of concatenated objects. Synthetic corpora are written in the same
//! schema.

use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::expr::{answers_match, Constant, ExprTree, Op, Token};
use crate::tree_reg::{for_each_tree, TreeRegError};
use crate::vocab::Vocab;

/// Word substituted for every quantity occurrence when the text is encoded.
pub const NUMBER_WORD: &str = "NUM";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("corpus is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Enumeration(#[from] TreeRegError),
    #[error("oracle limited to sizes <= 9 and at most 6 numeric tokens")]
    NotEnumerable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub value: f64,
    /// Index of the word the value was read from.
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub id: String,
    pub words: Vec<String>,
    /// Ordered by position in the text.
    pub quantities: Vec<Quantity>,
    pub answer: f64,
    /// Reference expression, only consulted by the fully supervised mode and
    /// diagnostics.
    pub gold: Option<Vec<Token>>,
    /// Raw equation string as found in the source record.
    pub equation: Option<String>,
}

impl Problem {
    pub fn values(&self) -> Vec<f64> {
        self.quantities.iter().map(|q| q.value).collect()
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::full(self.quantities.len())
    }

    /// Words with each quantity replaced by [`NUMBER_WORD`].
    pub fn encoder_words(&self) -> Vec<String> {
        let mut words = self.words.clone();
        for q in &self.quantities {
            words[q.position] = NUMBER_WORD.to_string();
        }
        words
    }

    pub fn is_solved_by(&self, tokens: &[Token]) -> bool {
        crate::expr::evaluate_prefix(tokens, &self.values()).is_ok_and(|v| answers_match(v, self.answer))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Math23k,
    Synthetic,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Math23k => "math23k",
            Provenance::Synthetic => "synthetic",
        })
    }
}

/// Counts of records the loader had to drop or degrade.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadStats {
    pub records: usize,
    pub malformed: usize,
    pub unparsable_answer: usize,
    pub no_quantities: usize,
    /// Kept for weak supervision, but the equation could not be mapped onto
    /// the problem's quantities and constants.
    pub gold_unmapped: usize,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub problems: Vec<Problem>,
    pub provenance: Provenance,
    pub stats: LoadStats,
}

impl Corpus {
    /// Seeded shuffle, then the first `train_fraction` of problems for training.
    pub fn split(&self, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
        let mut order: Vec<usize> = (0..self.problems.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = (self.problems.len() as f64 * train_fraction).round() as usize;
        let test = order.split_off(cut.min(order.len()));
        (order, test)
    }

    /// `folds` disjoint test folds over a seeded shuffle.
    pub fn folds(&self, folds: usize, seed: u64) -> Vec<(Vec<usize>, Vec<usize>)> {
        let mut order: Vec<usize> = (0..self.problems.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        (0..folds)
            .map(|k| {
                let (test, train): (Vec<(usize, usize)>, Vec<(usize, usize)>) =
                    order.iter().copied().enumerate().partition(|(i, _)| i % folds == k);
                (
                    train.into_iter().map(|(_, p)| p).collect(),
                    test.into_iter().map(|(_, p)| p).collect(),
                )
            })
            .collect()
    }
}

/// One record of the corpus file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub segmented_text: String,
    pub equation: String,
    pub ans: String,
}

impl Record {
    fn from_value(value: &Value) -> Option<Record> {
        let obj = value.as_object()?;
        let text = |v: &Value| match v {
            Value::String(s) => Some(s.clone()),
            Value::Number(n) => Some(n.to_string()),
            _ => None,
        };
        Some(Record {
            id: obj.get("id").and_then(text)?,
            segmented_text: obj
                .get("segmented_text")
                .or_else(|| obj.get("original_text"))
                .and_then(text)?,
            equation: obj.get("equation").and_then(text).unwrap_or_default(),
            ans: obj.get("ans").and_then(text)?,
        })
    }
}

pub fn load_math23k(path: impl AsRef<Path>) -> Result<Corpus, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut corpus = parse_corpus(&text, Provenance::Math23k)?;
    if !corpus.problems.is_empty() && corpus.problems.iter().all(|p| p.id.starts_with("synthetic-")) {
        corpus.provenance = Provenance::Synthetic;
    }
    Ok(corpus)
}

/// Parses corpus text in any of the accepted layouts.
pub fn parse_corpus(text: &str, provenance: Provenance) -> Result<Corpus, DataError> {
    let values: Vec<Value> = if text.trim_start().starts_with('[') {
        serde_json::from_str(text)?
    } else {
        serde_json::Deserializer::from_str(text)
            .into_iter::<Value>()
            .collect::<Result<_, _>>()?
    };
    if values.is_empty() {
        log::warn!("corpus contains no records");
    }
    let mut stats = LoadStats::default();
    let mut problems = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for value in &values {
        stats.records += 1;
        let Some(record) = Record::from_value(value) else {
            stats.malformed += 1;
            continue;
        };
        if !seen.insert(record.id.clone()) {
            stats.malformed += 1;
            continue;
        }
        match problem_from_record(&record) {
            Ok(problem) => {
                if problem.gold.is_none() && !record.equation.is_empty() {
                    stats.gold_unmapped += 1;
                }
                problems.push(problem);
            }
            Err(RecordIssue::Answer) => stats.unparsable_answer += 1,
            Err(RecordIssue::NoQuantities) => stats.no_quantities += 1,
        }
    }
    if stats.malformed + stats.unparsable_answer + stats.no_quantities > 0 {
        log::warn!("skipped records: {stats:?}");
    }
    Ok(Corpus {
        problems,
        provenance,
        stats,
    })
}

enum RecordIssue {
    Answer,
    NoQuantities,
}

fn problem_from_record(record: &Record) -> Result<Problem, RecordIssue> {
    let answer = parse_number(record.ans.trim())
        .filter(|v| v.is_finite())
        .ok_or(RecordIssue::Answer)?;
    let words: Vec<String> = record.segmented_text.split_whitespace().map(str::to_string).collect();
    let quantities = extract_quantities(&words);
    if quantities.is_empty() {
        return Err(RecordIssue::NoQuantities);
    }
    let values: Vec<f64> = quantities.iter().map(|q| q.value).collect();
    let gold = (!record.equation.is_empty())
        .then(|| equation_to_prefix(&record.equation, &values))
        .flatten();
    Ok(Problem {
        id: record.id.clone(),
        words,
        quantities,
        answer,
        gold,
        equation: (!record.equation.is_empty()).then(|| record.equation.clone()),
    })
}

fn number_patterns() -> &'static [Regex; 4] {
    static PATTERNS: OnceLock<[Regex; 4]> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        [
            // plain integer or decimal, optional percent
            Regex::new(r"^(\d+(?:\.\d+)?)(%?)$").unwrap(),
            // fraction, optionally parenthesised
            Regex::new(r"^\(?(\d+(?:\.\d+)?)/(\d+(?:\.\d+)?)\)?$").unwrap(),
            // mixed number such as 3(1/2)
            Regex::new(r"^(\d+)\((\d+)/(\d+)\)$").unwrap(),
            // decimal percent written with a parenthesised fraction, e.g. (1/4)%
            Regex::new(r"^\((\d+)/(\d+)\)%$").unwrap(),
        ]
    })
}

/// Parses a single numeric word: `12`, `3.5`, `15%`, `(1/5)`, `1/5`, `3(1/2)`.
pub fn parse_number(word: &str) -> Option<f64> {
    let [plain, fraction, mixed, frac_percent] = number_patterns();
    let num = |s: &str| s.parse::<f64>().ok();
    if let Some(c) = plain.captures(word) {
        let v = num(&c[1])?;
        return Some(if c[2].is_empty() { v } else { v / 100.0 });
    }
    if let Some(c) = fraction.captures(word) {
        let d = num(&c[2])?;
        return (d != 0.0).then(|| num(&c[1]).map(|n| n / d)).flatten();
    }
    if let Some(c) = mixed.captures(word) {
        let d = num(&c[3])?;
        return (d != 0.0).then(|| Some(num(&c[1])? + num(&c[2])? / d)).flatten();
    }
    if let Some(c) = frac_percent.captures(word) {
        let d = num(&c[2])?;
        return (d != 0.0).then(|| num(&c[1]).map(|n| n / d / 100.0)).flatten();
    }
    None
}

/// Every numeric word in order; duplicates are separate entries.
pub fn extract_quantities(words: &[impl AsRef<str>]) -> Vec<Quantity> {
    words
        .iter()
        .enumerate()
        .filter_map(|(position, w)| parse_number(w.as_ref()).map(|value| Quantity { value, position }))
        .collect()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Converts an infix equation into a prefix expression over the problem's
/// quantities and the constants `1`, `2`, `pi`.
///
/// Numbers bind to the first quantity with the same value; numbers that are
/// neither a quantity nor a constant make the equation unmappable.
pub fn equation_to_prefix(equation: &str, quantities: &[f64]) -> Option<Vec<Token>> {
    let tokens = lex_equation(equation, quantities)?;
    let mut parser = InfixParser {
        tokens: &tokens,
        cursor: 0,
        quantities,
    };
    let tree = parser.expression(0)?;
    if parser.cursor != tokens.len() {
        return None;
    }
    Some(tree.to_prefix())
}

fn fraction_literal() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| Regex::new(r"^\(\d+(?:\.\d+)?/\d+(?:\.\d+)?\)%?").unwrap())
}

#[derive(Debug, Clone, PartialEq)]
enum Lexeme {
    Number(f64),
    Pi,
    Op(Op),
    Open,
    Close,
}

fn lex_equation(equation: &str, quantities: &[f64]) -> Option<Vec<Lexeme>> {
    let body = equation.trim();
    let body = body
        .strip_prefix("x=")
        .or_else(|| body.strip_prefix("X="))
        .unwrap_or(body);
    let chars: Vec<char> = body.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' => i += 1,
            '+' => {
                out.push(Lexeme::Op(Op::Add));
                i += 1;
            }
            '-' | '−' => {
                out.push(Lexeme::Op(Op::Sub));
                i += 1;
            }
            '*' | '×' => {
                if chars.get(i + 1) == Some(&'*') {
                    out.push(Lexeme::Op(Op::Pow));
                    i += 2;
                } else {
                    out.push(Lexeme::Op(Op::Mul));
                    i += 1;
                }
            }
            '/' | '÷' => {
                out.push(Lexeme::Op(Op::Div));
                i += 1;
            }
            '^' => {
                out.push(Lexeme::Op(Op::Pow));
                i += 1;
            }
            '(' | '[' | '{' => {
                // A parenthesised fraction that also appears in the text is one number.
                let rest: String = chars[i..].iter().collect();
                let literal = fraction_literal()
                    .find(&rest)
                    .map(|m| m.as_str().to_string())
                    .filter(|lit| parse_number(lit).is_some_and(|v| quantities.iter().any(|&q| close(q, v))));
                match literal {
                    Some(lit) => {
                        out.push(Lexeme::Number(parse_number(&lit)?));
                        i += lit.chars().count();
                    }
                    None => {
                        out.push(Lexeme::Open);
                        i += 1;
                    }
                }
            }
            ')' | ']' | '}' => {
                out.push(Lexeme::Close);
                i += 1;
            }
            'p' if chars.get(i + 1) == Some(&'i') => {
                out.push(Lexeme::Pi);
                i += 2;
            }
            'π' => {
                out.push(Lexeme::Pi);
                i += 1;
            }
            d if d.is_ascii_digit() || d == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                let mut text: String = chars[start..i].iter().collect();
                if chars.get(i) == Some(&'%') {
                    text.push('%');
                    i += 1;
                }
                out.push(Lexeme::Number(parse_number(&text)?));
            }
            _ => return None,
        }
    }
    Some(out)
}

struct InfixParser<'a> {
    tokens: &'a [Lexeme],
    cursor: usize,
    quantities: &'a [f64],
}

impl InfixParser<'_> {
    fn binding(op: Op) -> (u8, bool) {
        match op {
            Op::Add | Op::Sub => (1, false),
            Op::Mul | Op::Div => (2, false),
            Op::Pow => (3, true),
        }
    }

    fn expression(&mut self, min_binding: u8) -> Option<ExprTree> {
        let mut left = self.atom()?;
        while let Some(Lexeme::Op(op)) = self.tokens.get(self.cursor) {
            let (binding, right_assoc) = Self::binding(*op);
            if binding < min_binding {
                break;
            }
            let op = *op;
            self.cursor += 1;
            let next = if right_assoc { binding } else { binding + 1 };
            let right = self.expression(next)?;
            left = ExprTree::node(op, left, right);
        }
        Some(left)
    }

    fn atom(&mut self) -> Option<ExprTree> {
        let lexeme = self.tokens.get(self.cursor)?.clone();
        self.cursor += 1;
        match lexeme {
            Lexeme::Open => {
                let inner = self.expression(0)?;
                (self.tokens.get(self.cursor) == Some(&Lexeme::Close)).then_some(())?;
                self.cursor += 1;
                Some(inner)
            }
            Lexeme::Pi => Some(ExprTree::Leaf(Token::Const(Constant::Pi))),
            Lexeme::Number(v) => {
                if let Some(i) = self.quantities.iter().position(|&q| close(q, v)) {
                    Some(ExprTree::Leaf(Token::Quantity(i)))
                } else if close(v, 1.0) {
                    Some(ExprTree::Leaf(Token::Const(Constant::One)))
                } else if close(v, 2.0) {
                    Some(ExprTree::Leaf(Token::Const(Constant::Two)))
                } else if (v - std::f64::consts::PI).abs() < 0.01 {
                    Some(ExprTree::Leaf(Token::Const(Constant::Pi)))
                } else {
                    None
                }
            }
            Lexeme::Op(_) | Lexeme::Close => None,
        }
    }
}

/// How a synthetic slot value is drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SlotRange {
    /// Uniform integer in `[lo, hi]`.
    Int { lo: i64, hi: i64 },
    /// `k` times an earlier slot's value, `k` uniform in `[lo, hi]`.
    MultipleOf { slot: char, lo: i64, hi: i64 },
    /// Uniform decimal in `[lo, hi]` with one fractional digit.
    Tenths { lo: i64, hi: i64 },
}

/// A word-problem skeleton with `{a}`-style slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTemplate {
    pub name: String,
    /// Alternative phrasings; each mentions every slot at least once.
    pub texts: Vec<String>,
    /// Infix expression over slot letters, e.g. `(a/b)*(b+c)`.
    pub expression: String,
    /// Slots in draw order.
    pub slots: Vec<(char, SlotRange)>,
}

impl SyntheticTemplate {
    fn draw(&self, rng: &mut impl Rng) -> Vec<(char, f64)> {
        let mut values: Vec<(char, f64)> = Vec::new();
        for (name, range) in &self.slots {
            let v = match range {
                SlotRange::Int { lo, hi } => rng.gen_range(*lo..=*hi) as f64,
                SlotRange::Tenths { lo, hi } => rng.gen_range(*lo * 10..=*hi * 10) as f64 / 10.0,
                SlotRange::MultipleOf { slot, lo, hi } => {
                    let base = values.iter().find(|(n, _)| n == slot).map(|(_, v)| *v).unwrap_or(1.0);
                    base * rng.gen_range(*lo..=*hi) as f64
                }
            };
            values.push((*name, v));
        }
        values
    }

    fn substitute(pattern: &str, values: &[(char, f64)], braces: bool) -> String {
        let mut out = pattern.to_string();
        for (name, v) in values {
            let key = if braces { format!("{{{name}}}") } else { name.to_string() };
            out = out.replace(&key, &format_number(*v));
        }
        out
    }
}

fn format_number(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Templates of the shipped synthetic corpus.
pub fn default_templates() -> Vec<SyntheticTemplate> {
    use SlotRange::*;
    let t = |name: &str, texts: &[&str], expression: &str, slots: Vec<(char, SlotRange)>| SyntheticTemplate {
        name: name.to_string(),
        texts: texts.iter().map(|s| s.to_string()).collect(),
        expression: expression.to_string(),
        slots,
    };
    vec![
        t(
            "combine",
            &[
                "there are {a} apples in a basket and {b} more apples are put in . how many apples are in the basket now ?",
                "a shelf holds {a} books and then {b} more books are added . how many books are on the shelf ?",
            ],
            "a+b",
            vec![('a', Int { lo: 3, hi: 90 }), ('b', Int { lo: 3, hi: 90 })],
        ),
        t(
            "spend",
            &[
                "tom has {a} yuan and spends {b} yuan on lunch . how much money does he have left ?",
                "a tank holds {a} liters of water and {b} liters leak out . how many liters remain ?",
            ],
            "a-b",
            vec![('b', Int { lo: 3, hi: 40 }), ('a', Int { lo: 50, hi: 120 })],
        ),
        t(
            "boxes",
            &[
                "there are {a} boxes and each box holds {b} pens . how many pens are there in total ?",
                "a class has {a} rows of desks with {b} desks in each row . how many desks are there ?",
            ],
            "a*b",
            vec![('a', Int { lo: 3, hi: 30 }), ('b', Int { lo: 3, hi: 30 })],
        ),
        t(
            "share",
            &[
                "{a} candies are shared equally among {b} children . how many candies does each child get ?",
                "a rope of {a} meters is cut into {b} equal pieces . how long is each piece ?",
            ],
            "a/b",
            vec![('b', Int { lo: 3, hi: 12 }), ('a', MultipleOf { slot: 'b', lo: 3, hi: 15 })],
        ),
        t(
            "perimeter",
            &["a rectangle is {a} meters long and {b} meters wide . what is its perimeter in meters ?"],
            "2*(a+b)",
            vec![('a', Int { lo: 5, hi: 60 }), ('b', Int { lo: 3, hi: 40 })],
        ),
        t(
            "journey",
            &[
                "a truck travels {a} kilometers in {b} hours . at this speed it drives another {c} hours to finish the trip . how long is the whole trip ?",
            ],
            "(a/b)*(b+c)",
            vec![
                ('b', Int { lo: 2, hi: 6 }),
                ('a', MultipleOf { slot: 'b', lo: 20, hi: 60 }),
                ('c', Tenths { lo: 1, hi: 5 }),
            ],
        ),
        t(
            "furniture",
            &["a table costs {a} yuan and a chair costs {b} yuan . how much do {c} tables and {c} chairs cost together ?"],
            "(a+b)*c",
            vec![('a', Int { lo: 20, hi: 90 }), ('b', Int { lo: 5, hi: 40 }), ('c', Int { lo: 3, hi: 12 })],
        ),
        t(
            "flock",
            &["a farm had {a} sheep . it sold {b} sheep in spring and {c} sheep in autumn . how many sheep are left ?"],
            "a-(b+c)",
            vec![('b', Int { lo: 5, hi: 40 }), ('c', Int { lo: 5, hi: 40 }), ('a', Int { lo: 90, hi: 200 })],
        ),
    ]
}

/// Deterministic synthetic records; problems cycle through the templates.
pub fn gen_synthetic(n_problems: usize, templates: &[SyntheticTemplate], seed: u64) -> Vec<Record> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n_problems);
    for i in 0..n_problems {
        let template = &templates[i % templates.len()];
        let values = template.draw(&mut rng);
        let text = &template.texts[rng.gen_range(0..template.texts.len())];
        let equation = SyntheticTemplate::substitute(&template.expression, &values, false);
        let answer = evaluate_infix(&equation).expect("templates evaluate on their ranges");
        records.push(Record {
            id: format!("synthetic-{i:04}-{}", template.name),
            segmented_text: SyntheticTemplate::substitute(text, &values, true),
            equation: format!("x={equation}"),
            ans: format_answer(answer),
        });
    }
    records
}

fn format_answer(v: f64) -> String {
    let rounded = (v * 1e6).round() / 1e6;
    format_number(rounded)
}

/// Evaluates an infix equation over literal numbers.
pub fn evaluate_infix(equation: &str) -> Option<f64> {
    let lexemes = lex_equation(equation, &[])?;
    let literals: Vec<f64> = lexemes
        .iter()
        .filter_map(|l| match l {
            Lexeme::Number(v) => Some(*v),
            _ => None,
        })
        .collect();
    let prefix = equation_to_prefix(equation, &literals)?;
    crate::expr::evaluate_prefix(&prefix, &literals).ok()
}

pub fn write_records(records: &[Record]) -> String {
    serde_json::to_string_pretty(records).expect("records serialize") + "\n"
}

pub fn synthetic_corpus(n_problems: usize, seed: u64) -> Corpus {
    let records = gen_synthetic(n_problems, &default_templates(), seed);
    parse_corpus(&write_records(&records), Provenance::Synthetic).expect("synthetic records parse")
}

/// Every expression over `vocab` with a size in `sizes` that executes to the
/// problem's answer.
pub fn oracle_solutions(problem: &Problem, sizes: &[usize], vocab: &Vocab) -> Result<Vec<Vec<Token>>, DataError> {
    if sizes.iter().any(|&l| l > 9) || vocab.numeric_count() > 6 {
        return Err(DataError::NotEnumerable);
    }
    let values = problem.values();
    let mut out = Vec::new();
    for_each_tree(vocab, sizes, |tokens| {
        if crate::expr::evaluate_prefix_unchecked(tokens, &values).is_ok_and(|v| answers_match(v, problem.answer)) {
            out.push(tokens.to_vec());
        }
    })?;
    Ok(out)
}

/// How many mapped gold expressions have a token count inside the size
/// prior's range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Coverage {
    pub covered: usize,
    pub total: usize,
}

impl Coverage {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.covered as f64 / self.total as f64
        }
    }
}

pub fn size_prior_coverage(problems: &[Problem], prior: &crate::tree_reg::SizePrior) -> Coverage {
    let mut cov = Coverage { covered: 0, total: 0 };
    for p in problems {
        if let Some(gold) = &p.gold {
            let (lo, hi) = crate::tree_reg::size_bounds(p.quantities.len(), prior);
            cov.total += 1;
            cov.covered += (lo..=hi).contains(&gold.len()) as usize;
        }
    }
    cov
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_tokens;

    #[test]
    fn coverage_counts_gold_sizes() {
        let corpus = synthetic_corpus(40, 1);
        let cov = size_prior_coverage(&corpus.problems, &crate::tree_reg::SizePrior::default());
        assert_eq!(cov.total, 40);
        let expected = corpus
            .problems
            .iter()
            .filter(|p| {
                let (n, len) = (p.quantities.len(), p.gold.as_ref().unwrap().len());
                2 * n - 1 <= len && len <= 2 * n + 3
            })
            .count();
        assert_eq!(cov.covered, expected);
        let tight = crate::tree_reg::SizePrior::new(2, -1, 2, -1);
        let cov = size_prior_coverage(&corpus.problems, &tight);
        assert!(cov.covered < 40);
    }

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn extracts_in_text_order() {
        let w = words("a truck travels 100 kilometers in 2 hours and then 3.5 more hours");
        let q = extract_quantities(&w);
        assert_eq!(
            q,
            vec![
                Quantity { value: 100.0, position: 3 },
                Quantity { value: 2.0, position: 6 },
                Quantity { value: 3.5, position: 10 },
            ]
        );
    }

    #[test]
    fn number_normalisation() {
        assert_eq!(parse_number("(1/5)"), Some(0.2));
        assert_eq!(parse_number("1/4"), Some(0.25));
        assert_eq!(parse_number("15%"), Some(0.15));
        assert_eq!(parse_number("3(1/2)"), Some(3.5));
        assert_eq!(parse_number("(1/0)"), None);
        assert_eq!(parse_number("apples"), None);
        let q = extract_quantities(&words("5 apples and 5 pears"));
        assert_eq!(q.len(), 2);
        assert_eq!((q[0].position, q[1].position), (0, 3));
    }

    #[test]
    fn equation_binds_first_occurrence_and_constants() {
        let q = [100.0, 2.0, 3.5];
        assert_eq!(equation_to_prefix("x=100/2*(2+3.5)", &q), Some(parse_tokens("* / n0 n1 + n1 n2").unwrap()));
        assert_eq!(equation_to_prefix("x=2*(5+1)", &[5.0]), Some(parse_tokens("* 2 + n0 1").unwrap()));
        assert_eq!(equation_to_prefix("x=3.14*5", &[5.0]), Some(parse_tokens("* pi n0").unwrap()));
        assert_eq!(equation_to_prefix("x=5*7", &[5.0]), None);
        assert_eq!(equation_to_prefix("x=(1/5)*10", &[0.2, 10.0]), Some(parse_tokens("* n0 n1").unwrap()));
        assert_eq!(equation_to_prefix("x=2^3^2", &[3.0, 2.0]), Some(parse_tokens("^ n1 ^ n0 n1").unwrap()));
        assert_eq!(equation_to_prefix("x=(5+", &[5.0]), None);
    }

    #[test]
    fn loads_all_layouts() {
        let rec = r#"{"id": "1", "segmented_text": "a truck travels 100 km in 2 hours then 3.5 hours", "equation": "x=100/2*(2+3.5)", "ans": "275"}"#;
        let array = format!("[{rec}]");
        let lines = format!("{rec}\n{}", rec.replace("\"1\"", "\"2\""));
        let c = parse_corpus(&array, Provenance::Math23k).unwrap();
        assert_eq!(c.problems.len(), 1);
        let p = &c.problems[0];
        assert_eq!(p.values(), vec![100.0, 2.0, 3.5]);
        assert_eq!(p.answer, 275.0);
        assert_eq!(p.gold, Some(parse_tokens("* / n0 n1 + n1 n2").unwrap()));
        assert_eq!(p.encoder_words()[3], NUMBER_WORD);
        assert_eq!(parse_corpus(&lines, Provenance::Math23k).unwrap().problems.len(), 2);
        let percent = r#"{"id": 7, "segmented_text": "15% of 80 people", "equation": "x=15%*80", "ans": 12}"#;
        let c = parse_corpus(percent, Provenance::Math23k).unwrap();
        assert_eq!(c.problems[0].values(), vec![0.15, 80.0]);
        assert_eq!(c.problems[0].gold, Some(parse_tokens("* n0 n1").unwrap()));
    }

    #[test]
    fn loader_counts_bad_records() {
        let text = r#"
            {"id": "1", "segmented_text": "3 and 4", "equation": "x=3+4", "ans": "seven"}
            {"id": "2", "segmented_text": "no numbers here", "equation": "x=1", "ans": "1"}
            {"segmented_text": "missing id 3", "ans": "3"}
            {"id": "4", "segmented_text": "3 and 4", "equation": "x=3*9", "ans": "27"}
        "#;
        let c = parse_corpus(text, Provenance::Math23k).unwrap();
        assert_eq!(c.stats.unparsable_answer, 1);
        assert_eq!(c.stats.no_quantities, 1);
        assert_eq!(c.stats.malformed, 1);
        assert_eq!(c.stats.gold_unmapped, 1);
        assert_eq!(c.problems.len(), 1);
        let empty = parse_corpus("", Provenance::Math23k).unwrap();
        assert!(empty.problems.is_empty());
    }

    #[test]
    fn synthetic_is_deterministic_and_consistent() {
        let a = write_records(&gen_synthetic(40, &default_templates(), 5));
        let b = write_records(&gen_synthetic(40, &default_templates(), 5));
        assert_eq!(a, b);
        let corpus = parse_corpus(&a, Provenance::Synthetic).unwrap();
        assert_eq!(corpus.problems.len(), 40);
        for p in &corpus.problems {
            let gold = p.gold.as_ref().unwrap_or_else(|| panic!("{} {:?} {:?}", p.id, p.equation, p.words));
            assert!(p.is_solved_by(gold), "{} {:?}", p.id, p.equation);
        }
    }

    #[test]
    fn journey_template_matches_direct_arithmetic() {
        let records = gen_synthetic(80, &default_templates(), 1);
        for r in records.iter().filter(|r| r.id.ends_with("journey")) {
            let w = words(&r.segmented_text);
            let q: Vec<f64> = extract_quantities(&w).iter().map(|q| q.value).collect();
            let direct = q[0] / q[1] * (q[1] + q[2]);
            assert!(answers_match(r.ans.parse().unwrap(), direct));
        }
    }

    #[test]
    fn oracle_single_leaf() {
        let p = Problem {
            id: "x".into(),
            words: words("just 7"),
            quantities: vec![Quantity { value: 7.0, position: 1 }],
            answer: 7.0,
            gold: None,
            equation: None,
        };
        let sols = oracle_solutions(&p, &[1], &p.vocab()).unwrap();
        assert_eq!(sols, vec![vec![Token::Quantity(0)]]);
        assert!(matches!(oracle_solutions(&p, &[11], &p.vocab()), Err(DataError::NotEnumerable)));
    }

    #[test]
    fn folds_partition() {
        let corpus = synthetic_corpus(23, 0);
        let folds = corpus.folds(5, 3);
        let mut seen: Vec<usize> = folds.iter().flat_map(|(_, t)| t.clone()).collect();
        seen.sort();
        assert_eq!(seen, (0..23).collect::<Vec<_>>());
        let (train, test) = corpus.split(0.8, 1);
        assert_eq!((train.len(), test.len()), (18, 5));
    }
}
