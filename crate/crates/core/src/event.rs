//! Event-summary records and the text views derived from them.
//!
//! An [`EventSummary`] decomposes a claim or an evidence item into a natural
//! language summary, its participant and attribute spans, and a structure
//! string in which every participant and attribute span is replaced by the
//! [`MASK`] token. The three [`ViewKind`]s select which of those texts is fed
//! to the encoder.

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MASK: &str = "[Mask]";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSummary {
    pub summary: String,
    pub participants: Vec<String>,
    pub attributes: Vec<String>,
    pub structure: String,
}

impl EventSummary {
    /// Builds a summary whose structure is derived with [`mask_structure`].
    pub fn from_parts(summary: String, participants: Vec<String>, attributes: Vec<String>) -> Self {
        let structure = mask_structure(&summary, &participants, &attributes);
        Self {
            summary,
            participants,
            attributes,
            structure,
        }
    }

    pub fn view(&self, kind: ViewKind) -> Result<String> {
        view(self, kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewKind {
    Full,
    Sent,
    Struct,
}

impl ViewKind {
    pub const ALL: [ViewKind; 3] = [ViewKind::Full, ViewKind::Sent, ViewKind::Struct];
}

impl fmt::Display for ViewKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViewKind::Full => "full",
            ViewKind::Sent => "sent",
            ViewKind::Struct => "struct",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
    Table,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Text => "text",
            Modality::Image => "image",
            Modality::Table => "table",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub id: String,
    pub raw_text: String,
    pub summary: Option<EventSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceDoc {
    pub id: String,
    pub modality: Modality,
    pub raw_text: String,
    pub media_path: Option<PathBuf>,
    /// Source page grouping this evidence unit. Defaults to the evidence id.
    pub page: Option<String>,
    pub summary: Option<EventSummary>,
}

impl EvidenceDoc {
    pub fn text(id: impl Into<String>, raw_text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            modality: Modality::Text,
            raw_text: raw_text.into(),
            media_path: None,
            page: None,
            summary: None,
        }
    }

    pub fn page_id(&self) -> &str {
        self.page.as_deref().unwrap_or(&self.id)
    }

    /// Checks the modality/content invariant.
    pub fn check(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty evidence id".into());
        }
        match self.modality {
            Modality::Image if self.media_path.is_none() => {
                Err(format!("image evidence {} has no media path", self.id))
            }
            Modality::Text | Modality::Table if self.raw_text.trim().is_empty() => {
                Err(format!("{} evidence {} has empty text", self.modality, self.id))
            }
            _ => Ok(()),
        }
    }
}

/// Replaces every occurrence of each participant/attribute span with [`MASK`].
///
/// Candidate occurrences are accepted longest span first, then left to right,
/// skipping any that overlap an accepted one. Existing mask tokens in the
/// input are opaque, which makes the operation idempotent.
pub fn mask_structure(summary: &str, participants: &[String], attributes: &[String]) -> String {
    let mut spans: Vec<&str> = participants
        .iter()
        .chain(attributes)
        .map(String::as_str)
        .filter(|s| !s.is_empty())
        .collect();
    spans.sort_unstable();
    spans.dedup();

    let mut out = String::with_capacity(summary.len());
    for (i, segment) in summary.split(MASK).enumerate() {
        if i > 0 {
            out.push_str(MASK);
        }
        mask_segment(segment, &spans, &mut out);
    }
    out
}

fn mask_segment(segment: &str, spans: &[&str], out: &mut String) {
    // (start, end)
    let mut candidates: Vec<(usize, usize)> = Vec::new();
    for span in spans {
        // every occurrence, including ones overlapping each other
        let mut from = 0;
        while let Some(pos) = segment[from..].find(span) {
            let start = from + pos;
            candidates.push((start, start + span.len()));
            from = start + segment[start..].chars().next().map_or(1, char::len_utf8);
        }
    }
    candidates.sort_unstable_by(|a, b| (b.1 - b.0).cmp(&(a.1 - a.0)).then(a.0.cmp(&b.0)));
    candidates.dedup();

    let mut accepted: Vec<(usize, usize)> = Vec::new();
    for (start, end) in candidates {
        if accepted.iter().all(|&(s, e)| end <= s || start >= e) {
            accepted.push((start, end));
        }
    }
    accepted.sort_unstable();

    let mut cursor = 0;
    for (start, end) in accepted {
        out.push_str(&segment[cursor..start]);
        out.push_str(MASK);
        cursor = end;
    }
    out.push_str(&segment[cursor..]);
}

/// Projects a summary onto the text used for one loss view.
pub fn view(summary: &EventSummary, kind: ViewKind) -> Result<String> {
    match kind {
        ViewKind::Full => Ok(summary.summary.clone()),
        ViewKind::Struct => Ok(summary.structure.clone()),
        ViewKind::Sent => {
            if summary.participants.is_empty() && summary.attributes.is_empty() {
                return Err(Error::EmptyView);
            }
            let parts: Vec<&str> = summary
                .participants
                .iter()
                .chain(&summary.attributes)
                .map(String::as_str)
                .collect();
            Ok(parts.join(" "))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptySpan { field: &'static str },
    DuplicateSpan { field: &'static str, span: String },
    UnmaskedSpan { span: String },
    MalformedMask { found: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptySpan { field } => write!(f, "empty span in {field}"),
            Violation::DuplicateSpan { field, span } => write!(f, "duplicate span {span:?} in {field}"),
            Violation::UnmaskedSpan { span } => write!(f, "structure contains unmasked span {span:?}"),
            Violation::MalformedMask { found } => write!(f, "malformed mask token {found:?}"),
        }
    }
}

/// Returns every violated summary invariant; an empty list means the summary is valid.
pub fn validate_summary(s: &EventSummary) -> Vec<Violation> {
    let mut out = Vec::new();
    for (field, spans) in [("participants", &s.participants), ("attributes", &s.attributes)] {
        let mut seen = HashSet::new();
        for span in spans {
            if span.is_empty() {
                out.push(Violation::EmptySpan { field });
            } else if !seen.insert(span.as_str()) {
                out.push(Violation::DuplicateSpan {
                    field,
                    span: span.clone(),
                });
            }
        }
    }

    let segments: Vec<&str> = s.structure.split(MASK).collect();
    let mut reported = HashSet::new();
    for span in s.participants.iter().chain(&s.attributes) {
        if !span.is_empty()
            && segments.iter().any(|seg| seg.contains(span.as_str()))
            && reported.insert(span.as_str())
        {
            out.push(Violation::UnmaskedSpan { span: span.clone() });
        }
    }

    for seg in &segments {
        let lower = seg.to_ascii_lowercase();
        if let Some(pos) = lower.find("[mask]") {
            out.push(Violation::MalformedMask {
                found: seg[pos..pos + MASK.len()].to_string(),
            });
        }
    }
    out
}

pub fn is_valid(s: &EventSummary) -> bool {
    validate_summary(s).is_empty()
}
