//! Reasoning-path domain model.
//!
//! A [`ReasoningPath`] is an ordered, 1-indexed list of steps parsed out of
//! generator output via `<Step>`/`</Step>` tags (numbered tags `<Step 3>` are
//! accepted and the number ignored). The final step carries the answer, which
//! is normalized into an [`AnswerKey`] so that `$8`, `8.0` and `8` compare
//! equal. [`splice`] is the revision primitive: keep a verified prefix
//! byte-identically, replace everything from step `k` on.

use std::collections::BTreeMap;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What shape of answer a question expects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerKind {
    /// A real number; compared with relative/absolute tolerance.
    Numeric,
    /// A single multiple-choice letter A-E.
    Option,
    /// Free text; compared after normalization.
    Text,
}

/// A normalized answer. `value` is the canonical comparison form;
/// `numeric_value` is populated exactly when `kind` is [`AnswerKind::Numeric`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerKey {
    pub kind: AnswerKind,
    pub value: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub numeric_value: Option<f64>,
}

/// One reasoning step. Indices are 1-based and contiguous within a path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    pub text: String,
}

/// An ordered list of steps plus the raw text they were parsed from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningPath {
    pub steps: Vec<Step>,
    pub raw: String,
}

/// A question as loaded from a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub gold_answer: AnswerKey,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

static STEP_TAG: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"(?s)<Step(?:\s+\d+)?>(.*?)</Step(?:\s+\d+)?>").unwrap());
static ANSWER_IS: Lazy<Regex> = Lazy::new(|| Regex::new(r"(?i)answer\s+is\b:?").unwrap());
static FRAC: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"\\d?frac\{([^{}]+)\}\{([^{}]+)\}").unwrap());
static NUMBER: Lazy<Regex> = Lazy::new(|| Regex::new(r"-?\d+(?:\.\d+)?").unwrap());
static PLAIN_FRACTION: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"^(-?\d+(?:\.\d+)?)\s*/\s*(-?\d+(?:\.\d+)?)$").unwrap());
static OPTION_LETTER: Lazy<Regex> = Lazy::new(|| Regex::new(r"\b([A-Ea-e])\b").unwrap());

impl ReasoningPath {
    /// Build a path from bare step texts, assigning indices 1..n.
    /// `raw` is set to the tagged rendering.
    pub fn from_texts<I, S>(texts: I) -> Result<ReasoningPath>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let steps: Vec<Step> = texts
            .into_iter()
            .enumerate()
            .map(|(i, t)| Step { index: i + 1, text: t.into() })
            .collect();
        if steps.is_empty() || steps.iter().any(|s| s.text.trim().is_empty()) {
            return Err(Error::ParseEmpty);
        }
        let raw = render_tagged_texts(steps.iter().map(|s| s.text.as_str()));
        Ok(ReasoningPath { steps, raw })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Render the path as numbered `<Step i>...</Step i>` blocks, one per line.
    /// Re-parsing the rendering yields the same step texts.
    pub fn render_tagged(&self) -> String {
        render_tagged_texts(self.steps.iter().map(|s| s.text.as_str()))
    }

    pub fn step_texts(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.text.as_str()).collect()
    }
}

pub(crate) fn render_tagged_texts<'a, I>(texts: I) -> String
where
    I: IntoIterator<Item = &'a str>,
{
    texts
        .into_iter()
        .enumerate()
        .map(|(i, t)| format!("<Step {n}>{t}</Step {n}>", n = i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parse generator output into steps.
///
/// Primary route: non-greedy `<Step>...</Step>` tag matching (numbered tags
/// accepted, numbers ignored, dot matches newline). If no tags match, every
/// non-empty line becomes a step, so untagged output still yields a usable
/// path. Empty or whitespace-only input is an error.
pub fn parse_reasoning_path(raw: &str) -> Result<ReasoningPath> {
    if raw.trim().is_empty() {
        return Err(Error::ParseEmpty);
    }
    let mut texts: Vec<String> = STEP_TAG
        .captures_iter(raw)
        .map(|c| c[1].trim().to_string())
        .filter(|t| !t.is_empty())
        .collect();
    let tagged = STEP_TAG.is_match(raw);
    if texts.is_empty() {
        if tagged {
            // Tags matched but every one was empty: nothing usable.
            return Err(Error::ParseEmpty);
        }
        texts = raw
            .lines()
            .map(|l| l.trim())
            .filter(|l| !l.is_empty())
            .map(|l| l.to_string())
            .collect();
    }
    if texts.is_empty() {
        return Err(Error::ParseEmpty);
    }
    let steps = texts
        .into_iter()
        .enumerate()
        .map(|(i, text)| Step { index: i + 1, text })
        .collect();
    Ok(ReasoningPath { steps, raw: raw.to_string() })
}

/// Read the final step of a path and normalize it into an answer of `kind`.
pub fn extract_final_answer(path: &ReasoningPath, kind: AnswerKind) -> Result<AnswerKey> {
    let last = path.steps.last().ok_or(Error::ParseEmpty)?;
    AnswerKey::parse(kind, &last.text)
}

/// Compare two answers of the same kind. Numeric answers use a relative
/// tolerance of 1e-6 with an absolute floor of 1e-9 near zero; option and
/// text answers compare their canonical strings.
pub fn answers_equal(a: &AnswerKey, b: &AnswerKey) -> Result<bool> {
    if a.kind != b.kind {
        return Err(Error::KindMismatch { left: a.kind, right: b.kind });
    }
    Ok(match a.kind {
        AnswerKind::Numeric => {
            let (x, y) = (
                a.numeric_value.unwrap_or(f64::NAN),
                b.numeric_value.unwrap_or(f64::NAN),
            );
            (x - y).abs() <= f64::max(1e-9, 1e-6 * f64::max(x.abs(), y.abs()))
        }
        AnswerKind::Option | AnswerKind::Text => a.value == b.value,
    })
}

/// Replace steps `k..` of `prev` with `suffix`, keeping steps `1..k-1`
/// byte-identical. The result is reindexed contiguously; its `raw` is the
/// tagged rendering (there is no single generator output for a spliced path).
pub fn splice(prev: &ReasoningPath, k: usize, suffix: &[String]) -> Result<ReasoningPath> {
    if k < 1 || k > prev.len() {
        return Err(Error::IndexOutOfRange { index: k, len: prev.len() });
    }
    if suffix.is_empty() {
        return Err(Error::EmptySuffix);
    }
    let mut texts: Vec<String> =
        prev.steps[..k - 1].iter().map(|s| s.text.clone()).collect();
    texts.extend(suffix.iter().cloned());
    let steps: Vec<Step> = texts
        .into_iter()
        .enumerate()
        .map(|(i, text)| Step { index: i + 1, text })
        .collect();
    let raw = render_tagged_texts(steps.iter().map(|s| s.text.as_str()));
    Ok(ReasoningPath { steps, raw })
}

impl AnswerKey {
    /// Normalize `raw` into an answer of `kind`.
    ///
    /// Shared preprocessing: if the text contains "answer is", only what
    /// follows the last occurrence is considered; `\pi` becomes `π` and
    /// `\frac{a}{b}` becomes `a/b`; `$`, `%` and thousands commas are
    /// stripped.
    pub fn parse(kind: AnswerKind, raw: &str) -> Result<AnswerKey> {
        match kind {
            AnswerKind::Numeric => {
                let v = extract_numeric(raw)
                    .ok_or_else(|| Error::AnswerUnparseable(raw.to_string()))?;
                Ok(AnswerKey {
                    kind,
                    value: format_numeric(v),
                    numeric_value: Some(v),
                })
            }
            AnswerKind::Option => {
                let c = extract_option(raw)
                    .ok_or_else(|| Error::AnswerUnparseable(raw.to_string()))?;
                Ok(AnswerKey { kind, value: c.to_string(), numeric_value: None })
            }
            AnswerKind::Text => {
                let value = normalize_text(raw);
                if value.is_empty() {
                    return Err(Error::AnswerUnparseable(raw.to_string()));
                }
                Ok(AnswerKey { kind, value, numeric_value: None })
            }
        }
    }

    pub fn numeric(v: f64) -> AnswerKey {
        AnswerKey {
            kind: AnswerKind::Numeric,
            value: format_numeric(v),
            numeric_value: Some(v),
        }
    }
}

fn after_answer_is(s: &str) -> &str {
    match ANSWER_IS.find_iter(s).last() {
        Some(m) => &s[m.end()..],
        None => s,
    }
}

/// Apply the TeX-token table and strip currency/percent/comma decorations.
fn canonicalize_surface(s: &str) -> String {
    let s = FRAC.replace_all(s, "$1/$2");
    let s = s.replace(r"\pi", "π");
    s.replace(['$', '%', ','], "")
}

fn extract_numeric(raw: &str) -> Option<f64> {
    let s = after_answer_is(raw);
    let s = canonicalize_surface(s);
    let s = s.trim().trim_end_matches(['.', '!', ';', ':']).trim();
    if let Ok(v) = s.parse::<f64>() {
        return Some(v);
    }
    if let Some(c) = PLAIN_FRACTION.captures(s) {
        let num: f64 = c[1].parse().ok()?;
        let den: f64 = c[2].parse().ok()?;
        if den != 0.0 {
            return Some(num / den);
        }
    }
    // Fall back to the last number embedded in the text ("they had 39 left").
    NUMBER
        .find_iter(s)
        .last()
        .and_then(|m| m.as_str().parse::<f64>().ok())
}

fn extract_option(raw: &str) -> Option<char> {
    let s = after_answer_is(raw);
    OPTION_LETTER
        .captures(s)
        .and_then(|c| c[1].chars().next())
        .map(|c| c.to_ascii_uppercase())
}

/// Canonical text form: TeX tokens mapped, lowercased, ASCII punctuation
/// removed, articles dropped, whitespace collapsed.
pub(crate) fn normalize_text(raw: &str) -> String {
    let s = after_answer_is(raw);
    let s = canonicalize_surface(s);
    let s = s.to_lowercase();
    let s: String = s.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    s.split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Render a numeric value canonically: integers without a trailing `.0`.
fn format_numeric(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // First Q/A block of the step-tagged demonstration asset; three steps,
    // the last being the bare answer.
    const TAGGED_DEMO: &str = "<Step 1>\nCalculate the total number of chocolates Leah and her sister had initially.\nLeah's chocolates: 32\nSister's chocolates: 42\nTotal chocolates: 32 + 42 = 74\n</Step 1>\n\n<Step 2>\nCalculate the number of chocolates they ate.\nChocolates eaten: 35\nCalculate the number of chocolates they have left in total.\nTotal chocolates left = Total chocolates initially - Chocolates eaten.\nTotal chocolates left = 74 - 35 = 39\n</Step 2>\n\n<Step 3>\n39\n</Step 3>";

    #[test]
    fn parses_plain_tags() {
        let p = parse_reasoning_path(
            "<Step>Add 2 and 2.</Step><Step>The answer is 4.</Step>",
        )
        .unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.steps[0].text, "Add 2 and 2.");
        assert_eq!(p.steps[1].text, "The answer is 4.");
        assert_eq!(p.steps[0].index, 1);
        assert_eq!(p.steps[1].index, 2);
    }

    #[test]
    fn parses_numbered_tags_from_demo() {
        let p = parse_reasoning_path(TAGGED_DEMO).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p.steps[2].text, "39");
        // The shipped asset must contain this exact block.
        let asset = include_str!("../assets/demonstration_plus.txt");
        assert!(asset.contains(TAGGED_DEMO));
    }

    #[test]
    fn falls_back_to_lines_without_tags() {
        let p = parse_reasoning_path("First add.\nThen subtract.\n\nThe answer is 7.")
            .unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p.steps[1].text, "Then subtract.");
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(parse_reasoning_path(""), Err(Error::ParseEmpty)));
        assert!(matches!(parse_reasoning_path("  \n \t"), Err(Error::ParseEmpty)));
        assert!(matches!(
            parse_reasoning_path("<Step></Step>"),
            Err(Error::ParseEmpty)
        ));
    }

    #[test]
    fn mixed_numbered_and_plain_tags() {
        let p = parse_reasoning_path("<Step 1>one</Step 1><Step>two</Step>").unwrap();
        assert_eq!(p.step_texts(), vec!["one", "two"]);
    }

    #[test]
    fn extracts_currency_numeric() {
        let p = ReasoningPath::from_texts(["work", "$8"]).unwrap();
        let a = extract_final_answer(&p, AnswerKind::Numeric).unwrap();
        assert_eq!(a.numeric_value, Some(8.0));
        assert_eq!(a.value, "8");
    }

    #[test]
    fn extracts_bare_and_embedded_numerics() {
        let a = AnswerKey::parse(AnswerKind::Numeric, "39").unwrap();
        assert_eq!(a.numeric_value, Some(39.0));
        let b = AnswerKey::parse(AnswerKind::Numeric, "so they had 39 left.").unwrap();
        assert_eq!(b.numeric_value, Some(39.0));
        let c = AnswerKey::parse(AnswerKind::Numeric, "The answer is 1,000.").unwrap();
        assert_eq!(c.value, "1000");
        let d = AnswerKey::parse(AnswerKind::Numeric, "52.5").unwrap();
        assert_eq!(d.value, "52.5");
    }

    #[test]
    fn evaluates_fractions_when_numeric() {
        let a = AnswerKey::parse(AnswerKind::Numeric, r"\frac{1}{2}").unwrap();
        assert_eq!(a.numeric_value, Some(0.5));
        let b = AnswerKey::parse(AnswerKind::Numeric, "1/2").unwrap();
        assert_eq!(b.numeric_value, Some(0.5));
        let c = AnswerKey::parse(AnswerKind::Numeric, "0.5").unwrap();
        assert!(answers_equal(&a, &c).unwrap());
        assert!(answers_equal(&b, &c).unwrap());
    }

    #[test]
    fn unparseable_numeric_is_an_error() {
        assert!(matches!(
            AnswerKey::parse(AnswerKind::Numeric, "no digits here"),
            Err(Error::AnswerUnparseable(_))
        ));
    }

    #[test]
    fn extracts_option_letters() {
        let p = ReasoningPath::from_texts(["compare", "(b) 12"]).unwrap();
        let a = extract_final_answer(&p, AnswerKind::Option).unwrap();
        assert_eq!(a.value, "B");
        let c = AnswerKey::parse(AnswerKind::Option, "The answer is (C).").unwrap();
        assert_eq!(c.value, "C");
        let d = AnswerKey::parse(AnswerKind::Option, "D").unwrap();
        assert_eq!(d.value, "D");
    }

    #[test]
    fn numeric_tolerance() {
        let a = AnswerKey::numeric(29.0);
        let b = AnswerKey::numeric(29.0000001);
        assert!(answers_equal(&a, &b).unwrap());
        let c = AnswerKey::numeric(29.1);
        assert!(!answers_equal(&a, &c).unwrap());
        // Near zero the absolute floor applies.
        let z1 = AnswerKey::numeric(0.0);
        let z2 = AnswerKey::numeric(5e-10);
        assert!(answers_equal(&z1, &z2).unwrap());
    }

    #[test]
    fn tex_pi_matches_unicode_pi() {
        let a = AnswerKey::parse(AnswerKind::Text, r"63\pi").unwrap();
        let b = AnswerKey::parse(AnswerKind::Text, "63π").unwrap();
        assert_eq!(a.value, b.value);
        assert!(answers_equal(&a, &b).unwrap());
    }

    #[test]
    fn text_normalization_is_squad_style() {
        let a = AnswerKey::parse(AnswerKind::Text, "The Eiffel Tower.").unwrap();
        let b = AnswerKey::parse(AnswerKind::Text, "eiffel tower").unwrap();
        assert_eq!(a.value, "eiffel tower");
        assert!(answers_equal(&a, &b).unwrap());
        let c = AnswerKey::parse(AnswerKind::Text, "  An  apple ").unwrap();
        assert_eq!(c.value, "apple");
    }

    #[test]
    fn kind_mismatch_is_an_error() {
        let a = AnswerKey::numeric(1.0);
        let b = AnswerKey::parse(AnswerKind::Text, "one").unwrap();
        assert!(matches!(
            answers_equal(&a, &b),
            Err(Error::KindMismatch { .. })
        ));
    }

    #[test]
    fn splice_replaces_suffix() {
        let prev = ReasoningPath::from_texts(["a", "b", "c"]).unwrap();
        let out = splice(&prev, 2, &["x".to_string(), "y".to_string()]).unwrap();
        assert_eq!(out.step_texts(), vec!["a", "x", "y"]);
        assert_eq!(
            out.steps.iter().map(|s| s.index).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
    }

    #[test]
    fn splice_at_one_replaces_everything() {
        let prev = ReasoningPath::from_texts(["a", "b"]).unwrap();
        let out = splice(&prev, 1, &["z".to_string()]).unwrap();
        assert_eq!(out.step_texts(), vec!["z"]);
    }

    #[test]
    fn splice_bounds_checked() {
        let prev = ReasoningPath::from_texts(["a", "b"]).unwrap();
        assert!(matches!(
            splice(&prev, 0, &["z".to_string()]),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            splice(&prev, 3, &["z".to_string()]),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(matches!(splice(&prev, 1, &[]), Err(Error::EmptySuffix)));
    }

    proptest! {
        // Step texts without tag literals or leading/trailing whitespace
        // survive a render -> parse round trip.
        #[test]
        fn render_parse_roundtrip(texts in proptest::collection::vec("[a-zA-Z0-9 +=.-]{1,30}", 1..8)) {
            let texts: Vec<String> = texts
                .into_iter()
                .map(|t| t.trim().to_string())
                .filter(|t| !t.is_empty())
                .collect();
            prop_assume!(!texts.is_empty());
            let p = ReasoningPath::from_texts(texts.clone()).unwrap();
            let back = parse_reasoning_path(&p.render_tagged()).unwrap();
            prop_assert_eq!(back.step_texts(), p.step_texts());
        }

        // Splicing never disturbs the kept prefix and always reindexes 1..n.
        #[test]
        fn splice_preserves_prefix(
            prev in proptest::collection::vec("[a-z]{1,10}", 1..8),
            suffix in proptest::collection::vec("[a-z]{1,10}", 1..8),
            k_raw in 1usize..8,
        ) {
            let prev_path = ReasoningPath::from_texts(prev.clone()).unwrap();
            let k = (k_raw % prev.len()) + 1;
            let out = splice(&prev_path, k, &suffix).unwrap();
            prop_assert_eq!(out.len(), k - 1 + suffix.len());
            for i in 0..k - 1 {
                prop_assert_eq!(&out.steps[i].text, &prev[i]);
            }
            for (j, s) in suffix.iter().enumerate() {
                prop_assert_eq!(&out.steps[k - 1 + j].text, s);
            }
            for (i, s) in out.steps.iter().enumerate() {
                prop_assert_eq!(s.index, i + 1);
            }
        }

        // Numeric equality is reflexive and symmetric, and grouping separators
        // never change the value.
        #[test]
        fn numeric_equality_properties(v in -1e9f64..1e9) {
            let a = AnswerKey::numeric(v);
            prop_assert!(answers_equal(&a, &a).unwrap());
            let b = AnswerKey::numeric(v);
            prop_assert_eq!(
                answers_equal(&a, &b).unwrap(),
                answers_equal(&b, &a).unwrap()
            );
        }

        #[test]
        fn thousands_separators_ignored(n in 1_000i64..999_999_999) {
            let mut with_commas = String::new();
            let digits = n.to_string();
            let bytes = digits.as_bytes();
            for (i, ch) in bytes.iter().enumerate() {
                if i > 0 && (bytes.len() - i) % 3 == 0 {
                    with_commas.push(',');
                }
                with_commas.push(*ch as char);
            }
            let a = AnswerKey::parse(AnswerKind::Numeric, &with_commas).unwrap();
            let b = AnswerKey::parse(AnswerKind::Numeric, &digits).unwrap();
            prop_assert!(answers_equal(&a, &b).unwrap());
        }
    }
}
