//! The three-section instruction grammar.
//!
//! Model output is split on header lines (`Data Preprocessing:`,
//! `Model Architecture:`, `Model Training:` and any other title-like
//! `Header:` line). The serializer emits the same header strings, so
//! `parse(serialize(x))` reproduces the canonical sections.

use std::fmt;
use std::sync::OnceLock;

use indexmap::IndexMap;
use regex::Regex;

use crate::model::{InstructionSet, Provenance};

pub const PREPROCESSING_HEADER: &str = "Data Preprocessing";
pub const ARCHITECTURE_HEADER: &str = "Model Architecture";
pub const TRAINING_HEADER: &str = "Model Training";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct SectionParseError {
    pub found: Vec<String>,
    pub missing: Vec<&'static str>,
}

impl fmt::Display for SectionParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.missing.is_empty() {
            return f.write_str("instruction text is empty");
        }
        write!(
            f,
            "instruction is missing sections [{}]; found [{}]",
            self.missing.join(", "),
            self.found.join(", ")
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Canonical {
    Preprocessing,
    Architecture,
    Training,
}

impl Canonical {
    fn key(self) -> &'static str {
        match self {
            Canonical::Preprocessing => "preprocessing",
            Canonical::Architecture => "architecture",
            Canonical::Training => "training",
        }
    }
}

enum Header {
    Canonical(Canonical, String),
    Other(String),
}

fn canonical_header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)^\s*(data preprocessing|model architecture|model training)(\s+and\s+[^:]+?)?\s*:\s*(.*)$",
        )
            .unwrap()
    })
}

fn other_header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*([A-Za-z0-9][A-Za-z0-9 &/()'-]*?)\s*:\s*$").unwrap())
}

fn is_bullet(line: &str) -> bool {
    let t = line.trim_start();
    if t.starts_with(['-', '•', '*', '◦', '▪', '‣', '–']) {
        return true;
    }
    let digits = t.chars().take_while(char::is_ascii_digit).count();
    digits > 0 && t[digits..].starts_with(['.', ')'])
}

const CONNECTORS: &[&str] = &[
    "and", "or", "of", "for", "the", "to", "with", "a", "an", "in", "on", "&",
];

fn is_title_like(text: &str) -> bool {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.is_empty() || words.len() > 8 {
        return false;
    }
    let first_ok = words[0]
        .chars()
        .next()
        .is_some_and(|c| c.is_uppercase() || c.is_ascii_digit());
    first_ok
        && words.iter().all(|w| {
            CONNECTORS.contains(&w.to_lowercase().as_str())
                || w.chars()
                    .next()
                    .is_some_and(|c| c.is_uppercase() || c.is_ascii_digit() || c == '(')
        })
}

fn classify(line: &str) -> Option<Header> {
    if is_bullet(line) {
        return None;
    }
    // "Model Training and Hyperparameter Tuning:" still opens the training
    // section, but only as a standalone title line.
    if let Some(caps) = canonical_header_re().captures(line).filter(|c| {
        c.get(2)
            .is_none_or(|ext| c[3].is_empty() && is_title_like(ext.as_str().trim()[3..].trim()))
    }) {
        let which = match caps[1].to_lowercase().as_str() {
            "data preprocessing" => Canonical::Preprocessing,
            "model architecture" => Canonical::Architecture,
            _ => Canonical::Training,
        };
        return Some(Header::Canonical(which, caps[3].trim_end().to_string()));
    }
    let caps = other_header_re().captures(line)?;
    let text = caps[1].trim();
    is_title_like(text).then(|| Header::Other(text.to_string()))
}

#[derive(Default)]
struct Body(Vec<String>);

impl Body {
    fn push(&mut self, line: &str) {
        self.0.push(line.trim_end().to_string());
    }

    fn finish(&self) -> String {
        self.0.join("\n").trim().to_string()
    }
}

fn append_section(existing: &mut String, more: String) {
    match (existing.is_empty(), more.is_empty()) {
        (_, true) => {}
        (true, false) => *existing = more,
        (false, false) => {
            existing.push('\n');
            existing.push_str(&more);
        }
    }
}

/// Parses raw model output into an [`InstructionSet`] with provenance
/// `extracted` and no rank; callers adjust both.
pub fn parse_instruction_text(text: &str) -> Result<InstructionSet, SectionParseError> {
    if text.trim().is_empty() {
        return Err(SectionParseError {
            found: vec![],
            missing: vec![],
        });
    }

    enum Target {
        Preamble,
        Canonical(Canonical),
        Extra(String),
    }

    let mut canonical: [(Canonical, String); 3] = [
        (Canonical::Preprocessing, String::new()),
        (Canonical::Architecture, String::new()),
        (Canonical::Training, String::new()),
    ];
    let mut extras: IndexMap<String, String> = IndexMap::new();
    let mut found: Vec<String> = Vec::new();
    let mut target = Target::Preamble;
    let mut body = Body::default();

    let flush = |target: &Target,
                 body: &mut Body,
                 canonical: &mut [(Canonical, String); 3],
                 extras: &mut IndexMap<String, String>| {
        let text = body.finish();
        body.0.clear();
        match target {
            Target::Preamble => {}
            Target::Canonical(which) => {
                let slot = &mut canonical.iter_mut().find(|(c, _)| c == which).unwrap().1;
                append_section(slot, text);
            }
            Target::Extra(header) => {
                append_section(extras.entry(header.clone()).or_default(), text);
            }
        }
    };

    for line in text.lines() {
        match classify(line) {
            Some(Header::Canonical(which, inline)) => {
                flush(&target, &mut body, &mut canonical, &mut extras);
                found.push(line.trim().trim_end_matches(':').trim().to_string());
                target = Target::Canonical(which);
                if !inline.is_empty() {
                    body.push(&inline);
                }
            }
            Some(Header::Other(header)) => {
                flush(&target, &mut body, &mut canonical, &mut extras);
                found.push(header.clone());
                target = Target::Extra(header);
            }
            None => body.push(line),
        }
    }
    flush(&target, &mut body, &mut canonical, &mut extras);

    let missing: Vec<&'static str> = canonical
        .iter()
        .filter(|(_, text)| text.is_empty())
        .map(|(c, _)| c.key())
        .collect();
    if !missing.is_empty() {
        return Err(SectionParseError { found, missing });
    }
    extras.retain(|_, v| !v.is_empty());

    let [(_, preprocessing), (_, architecture), (_, training)] = canonical;
    Ok(InstructionSet {
        preprocessing,
        architecture,
        training,
        extra_sections: extras,
        rank: None,
        provenance: Provenance::Extracted,
    })
}

/// The three canonical sections with their headers, blank-line separated.
pub fn canonical_text(ins: &InstructionSet) -> String {
    format!(
        "{PREPROCESSING_HEADER}:\n{}\n\n{ARCHITECTURE_HEADER}:\n{}\n\n{TRAINING_HEADER}:\n{}\n",
        ins.preprocessing, ins.architecture, ins.training
    )
}

/// Canonical sections followed by every extra section in order.
pub fn full_text(ins: &InstructionSet) -> String {
    let mut out = canonical_text(ins);
    for (header, text) in &ins.extra_sections {
        out.push_str(&format!("\n{header}:\n{text}\n"));
    }
    out
}
