//! Event-summary generation.
//!
//! Summaries come either from an OpenAI-compatible multimodal chat endpoint
//! ([`client`]) or from [`fallback_extract`], a deterministic rule-based
//! extractor that needs no network.

pub mod client;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::event::{is_valid, mask_structure, validate_summary, EventSummary, MASK};

pub use client::{
    read_summary_ids, request_summary, summarize_batch, BatchReport, MllmClientConfig, Summarizer, SummaryInput,
    SummaryRecord,
};

const INPUT_SLOT: &str = "{input_text}";
const MODALITY_SLOT: &str = "{modality}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub template_text: String,
    pub version: String,
}

impl PromptTemplate {
    pub fn new(template_text: impl Into<String>, version: impl Into<String>) -> Result<Self> {
        let t = Self {
            template_text: template_text.into(),
            version: version.into(),
        };
        t.check()?;
        Ok(t)
    }

    /// The template shipped with the crate.
    pub fn builtin() -> Self {
        Self::new(include_str!("../../assets/prompt_v1.txt"), "v1").expect("builtin template is valid")
    }

    pub fn check(&self) -> Result<()> {
        for slot in [INPUT_SLOT, MODALITY_SLOT] {
            let n = self.template_text.matches(slot).count();
            if n != 1 {
                return Err(Error::Template(format!("placeholder {slot} appears {n} times, expected once")));
            }
        }
        Ok(())
    }
}

/// Substitutes both placeholders in a single pass, so placeholder-like text
/// inside `input_text` is left alone.
pub fn render_prompt(template: &PromptTemplate, input_text: &str, modality: &str) -> Result<String> {
    template.check()?;
    let t = &template.template_text;
    let i = t.find(INPUT_SLOT).expect("checked");
    let m = t.find(MODALITY_SLOT).expect("checked");
    let mut slots = [(i, INPUT_SLOT, input_text), (m, MODALITY_SLOT, modality)];
    slots.sort_by_key(|s| s.0);

    let mut out = String::with_capacity(t.len() + input_text.len() + modality.len());
    let mut cursor = 0;
    for (pos, slot, value) in slots {
        out.push_str(&t[cursor..pos]);
        out.push_str(value);
        cursor = pos + slot.len();
    }
    out.push_str(&t[cursor..]);
    Ok(out)
}

/// Parses a model reply, rebuilding `structure` from the spans when absent.
pub fn parse_response(raw: &str) -> Result<EventSummary> {
    parse_response_with(raw, false)
}

/// Like [`parse_response`]; with `require_structure` an object lacking the
/// `structure` key is rejected instead of repaired.
pub fn parse_response_with(raw: &str, require_structure: bool) -> Result<EventSummary> {
    let obj = first_json_object(raw).ok_or(Error::Parse)?;
    let get = |key: &str| {
        obj.iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(key))
            .map(|(_, v)| v)
    };

    let summary = match get("summary") {
        Some(Value::String(s)) => s.clone(),
        _ => return Err(Error::SummaryQuality("missing or non-string `summary`".into())),
    };
    let participants = string_list(get("participants"), "participants")?;
    let attributes = string_list(get("attributes"), "attributes")?;
    let structure = match get("structure") {
        Some(Value::String(s)) => s.clone(),
        None if !require_structure => mask_structure(&summary, &participants, &attributes),
        Some(_) => return Err(Error::SummaryQuality("non-string `structure`".into())),
        None => return Err(Error::SummaryQuality("missing `structure`".into())),
    };

    let out = EventSummary {
        summary,
        participants,
        attributes,
        structure,
    };
    let violations = validate_summary(&out);
    if violations.is_empty() {
        Ok(out)
    } else {
        let msg: Vec<String> = violations.iter().map(ToString::to_string).collect();
        Err(Error::SummaryQuality(msg.join("; ")))
    }
}

fn string_list(v: Option<&Value>, key: &str) -> Result<Vec<String>> {
    match v {
        Some(Value::Array(items)) => items
            .iter()
            .map(|x| match x {
                Value::String(s) => Ok(s.clone()),
                _ => Err(Error::SummaryQuality(format!("non-string entry in `{key}`"))),
            })
            .collect(),
        _ => Err(Error::SummaryQuality(format!("missing or non-array `{key}`"))),
    }
}

fn first_json_object(raw: &str) -> Option<serde_json::Map<String, Value>> {
    for (pos, _) in raw.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&raw[pos..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            return Some(map);
        }
    }
    None
}

const PREPOSITIONS: [&str; 6] = ["in", "on", "at", "of", "from", "to"];

struct Token<'a> {
    text: &'a str,
    start: usize,
    end: usize,
}

fn word_tokens(text: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_alphanumeric(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(Token { text: &text[s..i], start: s, end: i });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(Token { text: &text[s..], start: s, end: text.len() });
    }
    out
}

fn is_capitalized_word(t: &str) -> bool {
    let mut chars = t.chars();
    chars.next().is_some_and(char::is_uppercase) && t.chars().all(char::is_alphabetic)
}

fn normalize_masks(text: &str) -> String {
    let lower = text.to_ascii_lowercase();
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    for (pos, _) in lower.match_indices("[mask]") {
        out.push_str(&text[cursor..pos]);
        out.push_str(MASK);
        cursor = pos + MASK.len();
    }
    out.push_str(&text[cursor..]);
    out
}

/// Rule-based offline summary extraction.
///
/// Participants are maximal whitespace-separated runs of capitalized
/// alphabetic words. Attributes are numeric words plus the word right after
/// one of `in on at of from to`, excluding words inside a participant run.
pub fn fallback_extract(raw_text: &str) -> Result<EventSummary> {
    let summary = normalize_masks(raw_text.trim());
    if summary.is_empty() {
        return Err(Error::EmptyInput);
    }
    let tokens = word_tokens(&summary);

    let mut participants: Vec<String> = Vec::new();
    let mut in_run = vec![false; tokens.len()];
    let mut i = 0;
    while i < tokens.len() {
        if !is_capitalized_word(tokens[i].text) {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < tokens.len()
            && is_capitalized_word(tokens[j + 1].text)
            && summary[tokens[j].end..tokens[j + 1].start].chars().all(char::is_whitespace)
        {
            j += 1;
        }
        in_run[i..=j].iter_mut().for_each(|f| *f = true);
        let span = &summary[tokens[i].start..tokens[j].end];
        if !participants.iter().any(|p| p == span) {
            participants.push(span.to_string());
        }
        i = j + 1;
    }

    let mut attributes: Vec<String> = Vec::new();
    for (k, tok) in tokens.iter().enumerate() {
        let numeric = tok.text.chars().all(|c| c.is_ascii_digit());
        let after_prep = k > 0
            && PREPOSITIONS
                .iter()
                .any(|p| tokens[k - 1].text.eq_ignore_ascii_case(p));
        if (numeric || after_prep)
            && !in_run[k]
            && !participants.iter().any(|p| p == tok.text)
            && !attributes.iter().any(|a| a == tok.text)
        {
            attributes.push(tok.text.to_string());
        }
    }

    let out = EventSummary::from_parts(summary, participants, attributes);
    debug_assert!(is_valid(&out), "fallback produced invalid summary: {out:?}");
    Ok(out)
}
