//! Structured response grammar: serializer, strict parser, and format reward.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::BoxN;

/// System prompt shipped with the crate. The first line carries the version.
pub const SYSTEM_TEMPLATE: &str = include_str!("../fixtures/template_v1.txt");
pub const TEMPLATE_VERSION: u32 = 1;

const TAGS: [&str; 5] = ["think", "rule", "check", "bbox", "answer"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredResponse {
    pub think: String,
    pub rule: String,
    pub check: BoxN,
    pub bbox: BoxN,
    pub answer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParseError {
    MissingTag,
    DuplicateTag,
    BadOrder,
    BadBox,
    BadAnswer,
    TrailingGarbage,
}

impl ParseError {
    pub const ALL: [ParseError; 6] = [
        ParseError::MissingTag,
        ParseError::DuplicateTag,
        ParseError::BadOrder,
        ParseError::BadBox,
        ParseError::BadAnswer,
        ParseError::TrailingGarbage,
    ];
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

pub type ParseOutcome = Result<StructuredResponse, ParseError>;

/// True when `s` is a 1–3 word phrase in canonical single-space form.
pub fn valid_answer(s: &str) -> bool {
    let words: Vec<&str> = s.split_whitespace().collect();
    (1..=3).contains(&words.len()) && words.join(" ") == s && !s.contains(['<', '>'])
}

fn valid_free_text(s: &str) -> bool {
    !TAGS.iter().any(|t| s.contains(&format!("<{t}>")) || s.contains(&format!("</{t}>")))
}

impl StructuredResponse {
    pub fn is_valid(&self) -> bool {
        valid_answer(&self.answer) && valid_free_text(&self.think) && valid_free_text(&self.rule)
    }
}

fn fmt_box(b: &BoxN) -> String {
    let [x1, y1, x2, y2] = b.to_array();
    format!("[{x1:.4}, {y1:.4}, {x2:.4}, {y2:.4}]")
}

pub fn serialize(r: &StructuredResponse) -> String {
    format!(
        "<think>{}</think> <rule>{}</rule> <check>{}</check> <bbox>{}</bbox> <answer>{}</answer>",
        r.think,
        r.rule,
        fmt_box(&r.check),
        fmt_box(&r.bbox),
        r.answer
    )
}

fn parse_box(s: &str) -> Result<BoxN, ParseError> {
    let inner = s
        .trim()
        .strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .ok_or(ParseError::BadBox)?;
    let vals: Vec<f64> = inner
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| ParseError::BadBox))
        .collect::<Result<_, _>>()?;
    if vals.len() != 4 || vals.iter().any(|v| !v.is_finite()) {
        return Err(ParseError::BadBox);
    }
    BoxN::new(vals[0], vals[1], vals[2], vals[3]).map_err(|_| ParseError::BadBox)
}

/// Strict parser. Checks run from the coarsest structural fault to the most
/// local one: tag presence, tag multiplicity, tag order, stray text outside
/// tags, box syntax, answer shape.
pub fn parse(t: &str) -> ParseOutcome {
    // (position, slot) for all ten tag tokens, slot = 2·tag + {0 open, 1 close}
    let mut found: Vec<(usize, usize)> = Vec::with_capacity(10);
    for (i, tag) in TAGS.iter().enumerate() {
        for (j, tok) in [format!("<{tag}>"), format!("</{tag}>")].iter().enumerate() {
            let hits: Vec<usize> = t.match_indices(tok.as_str()).map(|(p, _)| p).collect();
            match hits.len() {
                0 => return Err(ParseError::MissingTag),
                1 => found.push((hits[0], 2 * i + j)),
                _ => return Err(ParseError::DuplicateTag),
            }
        }
    }
    found.sort_unstable();
    if found.iter().enumerate().any(|(k, &(_, slot))| k != slot) {
        return Err(ParseError::BadOrder);
    }

    let token_len = |slot: usize| TAGS[slot / 2].len() + 2 + slot % 2;
    let mut contents = Vec::with_capacity(5);
    let mut cursor = 0;
    for i in 0..5 {
        let (open, _) = found[2 * i];
        let (close, _) = found[2 * i + 1];
        if !t[cursor..open].trim().is_empty() {
            return Err(ParseError::TrailingGarbage);
        }
        contents.push(&t[open + token_len(2 * i)..close]);
        cursor = close + token_len(2 * i + 1);
    }
    if !t[cursor..].trim().is_empty() {
        return Err(ParseError::TrailingGarbage);
    }

    let check = parse_box(contents[2])?;
    let bbox = parse_box(contents[3])?;
    let answer = contents[4].split_whitespace().collect::<Vec<_>>().join(" ");
    if !valid_answer(&answer) {
        return Err(ParseError::BadAnswer);
    }
    Ok(StructuredResponse {
        think: contents[0].to_string(),
        rule: contents[1].to_string(),
        check,
        bbox,
        answer,
    })
}

pub fn format_reward(t: &str) -> f64 {
    if parse(t).is_ok() {
        1.0
    } else {
        0.0
    }
}

/// Fill the `{problem}` and `{reference_boxes}` slots of the system template.
pub fn render_prompt(problem: &str, reference_boxes: &[BoxN]) -> String {
    let boxes: Vec<String> = reference_boxes.iter().map(fmt_box).collect();
    let body = SYSTEM_TEMPLATE.split_once('\n').map_or(SYSTEM_TEMPLATE, |(_, rest)| rest);
    body.replace("{problem}", problem).replace("{reference_boxes}", &format!("[{}]", boxes.join(", ")))
}
