//! Instruction-to-code synthesis.
//!
//! Code is generated per stage (preprocessing, architecture, training,
//! submission) with every earlier snippet as context, merged by one
//! integration call, then repaired from captured error output at most
//! [`REPAIR_LIMIT`] times.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::agent::Agent;
use crate::error::{Error, Result};
use crate::model::{InstructionSet, TaskSpec};
use crate::template::TemplateKind;

pub const REPAIR_LIMIT: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Preprocessing,
    Architecture,
    Training,
    Submission,
}

impl Stage {
    pub const ORDER: [Stage; 4] = [
        Stage::Preprocessing,
        Stage::Architecture,
        Stage::Training,
        Stage::Submission,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Preprocessing => "preprocessing",
            Stage::Architecture => "architecture",
            Stage::Training => "training",
            Stage::Submission => "submission",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Stage::Preprocessing => "Data Preprocessing",
            Stage::Architecture => "Model Architecture",
            Stage::Training => "Model Training",
            Stage::Submission => "Submission",
        }
    }

    pub fn position(self) -> usize {
        self as usize
    }

    pub fn predecessors(self) -> &'static [Stage] {
        &Stage::ORDER[..self.position()]
    }

    fn instruction_section(self, ins: &InstructionSet) -> Option<&str> {
        match self {
            Stage::Preprocessing => Some(&ins.preprocessing),
            Stage::Architecture => Some(&ins.architecture),
            Stage::Training => Some(&ins.training),
            Stage::Submission => None,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub label: String,
    pub digest: String,
    pub response_len: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagedProgram {
    pub snippets: BTreeMap<Stage, String>,
    pub integrated: String,
    pub fix_attempts: u32,
    pub exchanges: Vec<Exchange>,
}

/// Concatenates every triple-backtick block in order, joined by one blank
/// line. Without fences the whole response is returned. Either way the result
/// is trimmed.
pub fn extract_code(response: &str) -> String {
    let mut blocks: Vec<String> = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in response.lines() {
        let trimmed = line.trim();
        match current.as_mut() {
            None if trimmed.starts_with("```") => current = Some(Vec::new()),
            None => {}
            Some(_) if trimmed == "```" => blocks.push(current.take().unwrap().join("\n")),
            Some(lines) => lines.push(line),
        }
    }
    if let Some(open) = current {
        blocks.push(open.join("\n"));
    }
    if blocks.is_empty() {
        return response.trim().to_string();
    }
    blocks
        .iter()
        .map(|b| b.trim_matches('\n'))
        .filter(|b| !b.trim().is_empty())
        .collect::<Vec<_>>()
        .join("\n\n")
        .trim()
        .to_string()
}

fn render_prior(prior: &BTreeMap<Stage, String>, upto: Stage) -> String {
    let parts: Vec<String> = upto
        .predecessors()
        .iter()
        .filter_map(|s| {
            prior
                .get(s)
                .map(|code| format!("# {}\n```\n{}\n```", s.title(), code))
        })
        .collect();
    if parts.is_empty() {
        "(none)".into()
    } else {
        parts.join("\n\n")
    }
}

/// Staged generation, integration and repair through one agent.
#[derive(Debug, Clone, Copy)]
pub struct Synthesizer<'a> {
    pub agent: Agent<'a>,
    pub submission_filename: &'a str,
}

impl<'a> Synthesizer<'a> {
    pub fn new(agent: Agent<'a>, submission_filename: &'a str) -> Self {
        Synthesizer {
            agent,
            submission_filename,
        }
    }

    pub fn synth_stage(
        &self,
        stage: Stage,
        instruction: &InstructionSet,
        task: &TaskSpec,
        prior: &BTreeMap<Stage, String>,
    ) -> Result<(String, Exchange)> {
        if let Some(missing) = stage.predecessors().iter().find(|s| !prior.contains_key(s)) {
            return Err(Error::Precondition(format!(
                "stage `{stage}` needs the `{missing}` snippet first"
            )));
        }
        let prior_text = render_prior(prior, stage);
        let data_files = if task.data_files.is_empty() {
            "(none)".to_string()
        } else {
            task.data_files.join(", ")
        };
        let kind = TemplateKind::Stage(stage);
        let messages = match stage.instruction_section(instruction) {
            Some(section) => self.agent.render(
                kind,
                &[
                    ("description", &task.description),
                    ("metric", task.metric.name.as_str()),
                    ("data_type", task.modality.as_str()),
                    ("data_files", &data_files),
                    ("instruction", section),
                    ("prior", &prior_text),
                ],
            )?,
            None => self.agent.render(
                kind,
                &[
                    ("description", &task.description),
                    ("metric", task.metric.name.as_str()),
                    ("submission_filename", self.submission_filename),
                    ("prior", &prior_text),
                ],
            )?,
        };
        let reply = self.agent.ask(messages)?;
        let code = extract_code(&reply.text);
        if code.is_empty() {
            return Err(Error::EmptyStage {
                stage: stage.to_string(),
            });
        }
        let exchange = Exchange {
            label: format!("stage:{stage}"),
            digest: reply.digest,
            response_len: reply.text.len(),
        };
        Ok((code, exchange))
    }

    /// Generates all four stages in order into `program`.
    pub fn synth_all(
        &self,
        instruction: &InstructionSet,
        task: &TaskSpec,
        program: &mut StagedProgram,
    ) -> Result<()> {
        for stage in Stage::ORDER {
            let (code, exchange) = self.synth_stage(stage, instruction, task, &program.snippets)?;
            program.snippets.insert(stage, code);
            program.exchanges.push(exchange);
        }
        Ok(())
    }

    pub fn integrate(&self, snippets: &BTreeMap<Stage, String>) -> Result<(String, Exchange)> {
        let get = |s: Stage| {
            snippets
                .get(&s)
                .map(String::as_str)
                .ok_or_else(|| Error::Precondition(format!("integration needs the `{s}` snippet")))
        };
        let messages = self.agent.render(
            TemplateKind::Integrate,
            &[
                ("preprocessing", get(Stage::Preprocessing)?),
                ("architecture", get(Stage::Architecture)?),
                ("training", get(Stage::Training)?),
                ("submission", get(Stage::Submission)?),
            ],
        )?;
        let reply = self.agent.ask(messages)?;
        let code = extract_code(&reply.text);
        if code.is_empty() {
            return Err(Error::EmptyIntegration);
        }
        let exchange = Exchange {
            label: "integrate".into(),
            digest: reply.digest,
            response_len: reply.text.len(),
        };
        Ok((code, exchange))
    }

    /// Integrates `program.snippets` into `program.integrated`.
    pub fn integrate_into(&self, program: &mut StagedProgram) -> Result<()> {
        let (code, exchange) = self.integrate(&program.snippets)?;
        program.integrated = code;
        program.exchanges.push(exchange);
        Ok(())
    }

    /// The prompt is the program plus the error text, nothing else.
    pub fn repair(
        &self,
        program: &str,
        stderr_tail: &str,
        attempt: u32,
    ) -> Result<(String, Exchange)> {
        if !(1..=REPAIR_LIMIT).contains(&attempt) {
            return Err(Error::Contract(format!(
                "repair attempt {attempt} outside 1..={REPAIR_LIMIT}"
            )));
        }
        if stderr_tail.trim().is_empty() {
            return Err(Error::Precondition("repair needs error output".into()));
        }
        let messages = self.agent.render(
            TemplateKind::Repair,
            &[("program", program), ("error", stderr_tail)],
        )?;
        let reply = self.agent.ask(messages)?;
        let code = extract_code(&reply.text);
        if code.is_empty() {
            return Err(Error::EmptyRepair { attempt });
        }
        let exchange = Exchange {
            label: format!("repair:{attempt}"),
            digest: reply.digest,
            response_len: reply.text.len(),
        };
        Ok((code, exchange))
    }
}
