//! Extraction of typed values from model text.
//!
//! The deterministic pass understands the `Output:` convention the
//! parser prompts teach, plus the `Nothing` sentinel. When it finds
//! nothing, `*_with_fallback` pays the second LLM call the prompts were
//! designed for and re-runs the deterministic pass on that reply.
//! Absence is a value here, never an error: the retry loop upstream
//! decides what to do with it.

use crate::error::GatewayError;
use crate::gateway::{Gateway, PromptParams};
use crate::prompt::{ParserInputs, TemplateSet};
use crate::schema::{normalize_identifier, NumericDtype};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseMethod {
    Deterministic,
    LlmAssisted,
}

#[derive(Debug, Clone)]
pub struct ParseOutcome<V> {
    pub value: Option<V>,
    pub method: ParseMethod,
    pub raw: String,
}

impl<V> ParseOutcome<V> {
    fn deterministic(value: Option<V>, raw: &str) -> Self {
        ParseOutcome {
            value,
            method: ParseMethod::Deterministic,
            raw: raw.to_string(),
        }
    }
}

/// Remainder of the text after the last `Output:` token, if any.
fn after_last_output(text: &str) -> Option<&str> {
    text.rfind("Output:").map(|i| &text[i + "Output:".len()..])
}

/// The `Nothing` sentinel, allowing stray quotes and a trailing period.
fn is_nothing(text: &str) -> bool {
    text.trim()
        .trim_matches(|c: char| c == '\'' || c == '"' || c == '.' || c.is_whitespace())
        .eq_ignore_ascii_case("nothing")
}

#[derive(Debug, Clone, Copy)]
struct NumericToken {
    value: f64,
    percent: bool,
}

/// Scans for standalone decimal numbers: optional sign, digits, optional
/// fraction, not glued to a letter or another digit, no thousands
/// separators. Records whether a `%` follows.
fn numeric_tokens(text: &str) -> Vec<NumericToken> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let sign = c == b'+' || c == b'-';
        if !(c.is_ascii_digit() || (sign && i + 1 < bytes.len() && bytes[i + 1].is_ascii_digit())) {
            i += 1;
            continue;
        }
        // Reject numbers embedded in identifiers like "v15" or "3a".
        if i > 0
            && (bytes[i - 1].is_ascii_alphanumeric()
                || bytes[i - 1] == b'_'
                || bytes[i - 1] == b'.')
        {
            i += 1;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'.') {
                i += 1;
            }
            continue;
        }
        let start = i;
        if sign {
            i += 1;
        }
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
            i += 1;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
        }
        if i < bytes.len() && (bytes[i].is_ascii_alphabetic() || bytes[i] == b'_') {
            // Glued suffix like "140mg": not a standalone number.
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'.') {
                i += 1;
            }
            continue;
        }
        let raw = &text[start..i];
        if let Ok(value) = raw.parse::<f64>() {
            let mut j = i;
            while j < bytes.len() && bytes[j] == b' ' {
                j += 1;
            }
            let percent = j < bytes.len() && bytes[j] == b'%';
            tokens.push(NumericToken { value, percent });
        }
        i += 1;
    }
    tokens
}

fn first_token(text: &str) -> Option<NumericToken> {
    numeric_tokens(text).into_iter().next()
}

/// Deterministic numeric extraction. After the last `Output:` the first
/// standalone number wins; without the token, the full text is accepted
/// only when it contains exactly one numeric token. Integer features
/// reject fractional values.
pub fn extract_numeric(text: &str, dtype: NumericDtype) -> ParseOutcome<f64> {
    let token = match after_last_output(text) {
        Some(rest) => {
            if is_nothing(rest) {
                return ParseOutcome::deterministic(None, text);
            }
            first_token(rest)
        }
        None => {
            if is_nothing(text) {
                return ParseOutcome::deterministic(None, text);
            }
            let tokens = numeric_tokens(text);
            if tokens.len() == 1 {
                Some(tokens[0])
            } else {
                None
            }
        }
    };
    let value = token
        .map(|t| t.value)
        .filter(|v| v.is_finite() && (dtype == NumericDtype::Real || v.fract() == 0.0));
    ParseOutcome::deterministic(value, text)
}

/// Deterministic probability extraction: numeric extraction restricted to
/// [0, 1], with `80%` after `Output:` converted to 0.8.
pub fn extract_probability(text: &str) -> ParseOutcome<f64> {
    let token = match after_last_output(text) {
        Some(rest) => {
            if is_nothing(rest) {
                return ParseOutcome::deterministic(None, text);
            }
            first_token(rest).map(|t| if t.percent { t.value / 100.0 } else { t.value })
        }
        None => {
            if is_nothing(text) {
                return ParseOutcome::deterministic(None, text);
            }
            let tokens = numeric_tokens(text);
            if tokens.len() == 1 {
                Some(tokens[0].value)
            } else {
                None
            }
        }
    };
    let value = token.filter(|v| (0.0..=1.0).contains(v));
    ParseOutcome::deterministic(value, text)
}

/// Two disjoint category groups, left then right.
pub type Bipartition = (Vec<String>, Vec<String>);

/// Deterministic bipartition extraction for `<group1>;;<group2>`.
/// Tokens are normalized before the membership check; the result is
/// accepted only when the two groups exactly partition `allowed`.
pub fn extract_bipartition(text: &str, allowed: &[String]) -> ParseOutcome<Bipartition> {
    let rest = match after_last_output(text) {
        Some(rest) => rest,
        // Without the Output token, only an unambiguous bare grouping is
        // accepted.
        None if text.contains(";;") => text,
        None => return ParseOutcome::deterministic(None, text),
    };
    if is_nothing(rest) {
        return ParseOutcome::deterministic(None, text);
    }
    let parts: Vec<&str> = rest.split(";;").collect();
    if parts.len() != 2 {
        return ParseOutcome::deterministic(None, text);
    }
    let mut groups: Vec<Vec<String>> = Vec::with_capacity(2);
    for part in parts {
        let mut group = Vec::new();
        for token in part.split(',') {
            if token.trim().is_empty() {
                continue;
            }
            let Ok(name) = normalize_identifier(token) else {
                return ParseOutcome::deterministic(None, text);
            };
            if !group.contains(&name) {
                group.push(name);
            }
        }
        groups.push(group);
    }
    let (g1, g2) = (groups.remove(0), groups.remove(0));
    if !crate::gateway::is_exact_bipartition(&g1, &g2, allowed) {
        return ParseOutcome::deterministic(None, text);
    }
    // Deterministic order within each group: as declared.
    let order = |group: &[String]| -> Vec<String> {
        allowed
            .iter()
            .filter(|c| group.contains(c))
            .cloned()
            .collect()
    };
    ParseOutcome::deterministic(Some((order(&g1), order(&g2))), text)
}

fn llm_pass<V>(
    raw: String,
    extract: impl Fn(&str) -> ParseOutcome<V>,
    inputs: &ParserInputs<'_>,
    forge: &TemplateSet,
    gateway: &Gateway,
    params: &PromptParams,
) -> Result<ParseOutcome<V>, GatewayError> {
    let prompt = forge
        .build_parser_prompt(inputs, params)
        .map_err(|e| GatewayError::BadResponse(format!("parser prompt: {e}")))?;
    let completion = gateway.complete(&prompt)?;
    let mut outcome = extract(&completion.text);
    outcome.method = ParseMethod::LlmAssisted;
    outcome.raw = raw;
    Ok(outcome)
}

/// Numeric extraction with the two-call pattern as fallback: when the
/// deterministic pass finds nothing, a second completion runs the
/// extraction prompt over the original reply.
pub fn parse_numeric_with_fallback(
    text: &str,
    feature: &str,
    dtype: NumericDtype,
    forge: &TemplateSet,
    gateway: &Gateway,
    params: &PromptParams,
) -> Result<ParseOutcome<f64>, GatewayError> {
    let direct = extract_numeric(text, dtype);
    if direct.value.is_some() {
        return Ok(direct);
    }
    let inputs = ParserInputs::Numeric {
        feature,
        response_text: text,
    };
    llm_pass(
        text.to_string(),
        |t| extract_numeric(t, dtype),
        &inputs,
        forge,
        gateway,
        params,
    )
}

pub fn parse_bipartition_with_fallback(
    text: &str,
    feature: &str,
    allowed: &[String],
    forge: &TemplateSet,
    gateway: &Gateway,
    params: &PromptParams,
) -> Result<ParseOutcome<Bipartition>, GatewayError> {
    let direct = extract_bipartition(text, allowed);
    if direct.value.is_some() {
        return Ok(direct);
    }
    let inputs = ParserInputs::Categorical {
        feature,
        possible_values: allowed,
        response_text: text,
    };
    llm_pass(
        text.to_string(),
        |t| extract_bipartition(t, allowed),
        &inputs,
        forge,
        gateway,
        params,
    )
}

/// What the probability parser prompt needs to select one value out of
/// the estimator's combined reply.
#[derive(Debug, Clone, Copy)]
pub struct ProbabilityQuery<'a> {
    pub label: &'a str,
    pub new_information: &'a str,
    pub instance_type: &'a str,
    pub class_examples: (&'a str, &'a str),
}

pub fn parse_probability_with_fallback(
    text: &str,
    query: &ProbabilityQuery<'_>,
    forge: &TemplateSet,
    gateway: &Gateway,
    params: &PromptParams,
) -> Result<ParseOutcome<f64>, GatewayError> {
    let direct = extract_probability(text);
    if direct.value.is_some() {
        return Ok(direct);
    }
    let inputs = ParserInputs::Probability {
        label: query.label,
        new_information: query.new_information,
        instance_type: query.instance_type,
        class_1: query.class_examples.0,
        class_2: query.class_examples.1,
        response_text: text,
    };
    llm_pass(
        text.to_string(),
        extract_probability,
        &inputs,
        forge,
        gateway,
        params,
    )
}
