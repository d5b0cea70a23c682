//! `{slot}` prompt templates.
//!
//! A template file is a user message body, optionally preceded by a system
//! message and a line containing only `---`. Slots are `{identifier}` tokens
//! (`[a-z_][a-z0-9_]*`); any other brace text is literal. Substituted values
//! are never rescanned, so code containing braces passes through untouched.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::error::{Error, Result};
use crate::gateway::ChatMessage;
use crate::synth::Stage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateKind {
    Extract,
    FinetunePrompt,
    Infer,
    Critic,
    Decider,
    Stage(Stage),
    Integrate,
    Repair,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 11] = [
        TemplateKind::Extract,
        TemplateKind::FinetunePrompt,
        TemplateKind::Infer,
        TemplateKind::Critic,
        TemplateKind::Decider,
        TemplateKind::Stage(Stage::Preprocessing),
        TemplateKind::Stage(Stage::Architecture),
        TemplateKind::Stage(Stage::Training),
        TemplateKind::Stage(Stage::Submission),
        TemplateKind::Integrate,
        TemplateKind::Repair,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            TemplateKind::Extract => "extract.txt",
            TemplateKind::FinetunePrompt => "finetune_prompt.txt",
            TemplateKind::Infer => "infer.txt",
            TemplateKind::Critic => "critic.txt",
            TemplateKind::Decider => "decider.txt",
            TemplateKind::Stage(Stage::Preprocessing) => "stage_preprocessing.txt",
            TemplateKind::Stage(Stage::Architecture) => "stage_architecture.txt",
            TemplateKind::Stage(Stage::Training) => "stage_training.txt",
            TemplateKind::Stage(Stage::Submission) => "stage_submission.txt",
            TemplateKind::Integrate => "integrate.txt",
            TemplateKind::Repair => "repair.txt",
        }
    }

    /// The slot manifest: each must appear exactly once, and no others may.
    pub fn required_slots(self) -> &'static [&'static str] {
        match self {
            TemplateKind::Extract => &["code", "metric", "data_type", "description"],
            TemplateKind::FinetunePrompt | TemplateKind::Infer => {
                &["description", "metric", "data_type", "rank"]
            }
            TemplateKind::Critic => &["description", "metric", "candidates", "previous"],
            TemplateKind::Decider => &["description", "metric", "candidates", "critique"],
            TemplateKind::Stage(Stage::Submission) => {
                &["description", "metric", "submission_filename", "prior"]
            }
            TemplateKind::Stage(_) => &[
                "description",
                "metric",
                "data_type",
                "data_files",
                "instruction",
                "prior",
            ],
            TemplateKind::Integrate => &["preprocessing", "architecture", "training", "submission"],
            TemplateKind::Repair => &["program", "error"],
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            TemplateKind::Extract => include_str!("../templates/extract.txt"),
            TemplateKind::FinetunePrompt => include_str!("../templates/finetune_prompt.txt"),
            TemplateKind::Infer => include_str!("../templates/infer.txt"),
            TemplateKind::Critic => include_str!("../templates/critic.txt"),
            TemplateKind::Decider => include_str!("../templates/decider.txt"),
            TemplateKind::Stage(Stage::Preprocessing) => {
                include_str!("../templates/stage_preprocessing.txt")
            }
            TemplateKind::Stage(Stage::Architecture) => {
                include_str!("../templates/stage_architecture.txt")
            }
            TemplateKind::Stage(Stage::Training) => include_str!("../templates/stage_training.txt"),
            TemplateKind::Stage(Stage::Submission) => {
                include_str!("../templates/stage_submission.txt")
            }
            TemplateKind::Integrate => include_str!("../templates/integrate.txt"),
            TemplateKind::Repair => include_str!("../templates/repair.txt"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(String),
}

fn tokenize(body: &str) -> Vec<Piece> {
    let mut pieces = Vec::new();
    let mut text = String::new();
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let ident_len = after
            .char_indices()
            .take_while(|&(i, c)| {
                c == '_' || c.is_ascii_lowercase() || (i > 0 && c.is_ascii_digit())
            })
            .count();
        if ident_len > 0 && after[ident_len..].starts_with('}') {
            text.push_str(&rest[..open]);
            if !text.is_empty() {
                pieces.push(Piece::Text(std::mem::take(&mut text)));
            }
            pieces.push(Piece::Slot(after[..ident_len].to_string()));
            rest = &after[ident_len + 1..];
        } else {
            text.push_str(&rest[..=open]);
            rest = after;
        }
    }
    text.push_str(rest);
    if !text.is_empty() {
        pieces.push(Piece::Text(text));
    }
    pieces
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
    pub required_slots: BTreeSet<String>,
    system: Option<Vec<Piece>>,
    user: Vec<Piece>,
}

impl PromptTemplate {
    /// Parses and validates `body` against the slot manifest.
    pub fn new(name: impl Into<String>, body: &str, required: &[&str]) -> Result<Self> {
        let name = name.into();
        let err = |reason: String| Error::Template {
            template: name.clone(),
            reason,
        };
        let (system, user) = split_system(body);
        let system = system.map(tokenize);
        let user = tokenize(user);

        let mut counts: HashMap<&str, usize> = HashMap::new();
        for piece in system.iter().flatten().chain(user.iter()) {
            if let Piece::Slot(s) = piece {
                *counts.entry(s.as_str()).or_default() += 1;
            }
        }
        for slot in required {
            match counts.get(slot).copied().unwrap_or(0) {
                1 => {}
                0 => return Err(err(format!("required slot `{{{slot}}}` is missing"))),
                n => return Err(err(format!("slot `{{{slot}}}` appears {n} times"))),
            }
        }
        let mut unknown: Vec<&str> = counts
            .keys()
            .copied()
            .filter(|s| !required.contains(s))
            .collect();
        unknown.sort();
        if let Some(slot) = unknown.first() {
            return Err(err(format!("unknown slot `{{{slot}}}`")));
        }
        if user.is_empty() {
            return Err(err("user message body is empty".into()));
        }

        Ok(PromptTemplate {
            name,
            body: body.to_string(),
            required_slots: required.iter().map(|s| s.to_string()).collect(),
            system,
            user,
        })
    }

    /// Renders the template. Every slot in the body must be bound.
    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<Vec<ChatMessage>> {
        let fill = |pieces: &[Piece]| -> Result<String> {
            let mut out = String::new();
            for piece in pieces {
                match piece {
                    Piece::Text(t) => out.push_str(t),
                    Piece::Slot(s) => {
                        let value = bindings
                            .iter()
                            .find(|(k, _)| k == s)
                            .map(|(_, v)| *v)
                            .ok_or_else(|| Error::Template {
                                template: self.name.clone(),
                                reason: format!("slot `{{{s}}}` is unbound"),
                            })?;
                        out.push_str(value);
                    }
                }
            }
            Ok(out)
        };
        let mut messages = Vec::with_capacity(2);
        if let Some(system) = &self.system {
            let text = fill(system)?;
            if !text.trim().is_empty() {
                messages.push(ChatMessage::system(text.trim().to_string()));
            }
        }
        messages.push(ChatMessage::user(fill(&self.user)?.trim_end().to_string()));
        Ok(messages)
    }

    /// Renders and joins all parts into one string (system part first).
    pub fn render_text(&self, bindings: &[(&str, &str)]) -> Result<String> {
        Ok(self
            .render(bindings)?
            .into_iter()
            .map(|m| m.content)
            .collect::<Vec<_>>()
            .join("\n"))
    }
}

fn split_system(body: &str) -> (Option<&str>, &str) {
    let mut offset = 0;
    for line in body.split_inclusive('\n') {
        if line.trim_end_matches(['\n', '\r']) == "---" {
            return (Some(&body[..offset]), &body[offset + line.len()..]);
        }
        offset += line.len();
    }
    (None, body)
}

/// The full set of pipeline templates.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: HashMap<TemplateKind, PromptTemplate>,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let templates = TemplateKind::ALL
            .iter()
            .map(|&k| {
                let t = PromptTemplate::new(k.file_name(), k.builtin(), k.required_slots())
                    .expect("builtin templates are valid");
                (k, t)
            })
            .collect();
        TemplateSet { templates }
    }

    /// Loads `<dir>/<name>.txt` for every kind present; missing files fall
    /// back to the builtin copy.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut set = TemplateSet::builtin();
        for kind in TemplateKind::ALL {
            let path = dir.join(kind.file_name());
            if !path.exists() {
                continue;
            }
            let body = std::fs::read_to_string(&path)
                .map_err(|e| Error::io(format!("reading template {}", path.display()), e))?;
            set.set(kind, &body)?;
        }
        Ok(set)
    }

    pub fn set(&mut self, kind: TemplateKind, body: &str) -> Result<()> {
        let t = PromptTemplate::new(kind.file_name(), body, kind.required_slots())?;
        self.templates.insert(kind, t);
        Ok(())
    }

    pub fn get(&self, kind: TemplateKind) -> &PromptTemplate {
        &self.templates[&kind]
    }

    /// Writes every template into `dir`, for editing.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        for kind in TemplateKind::ALL {
            let path = dir.join(kind.file_name());
            std::fs::write(&path, &self.get(kind).body)
                .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        }
        Ok(())
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        TemplateSet::builtin()
    }
}
