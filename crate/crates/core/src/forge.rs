//! Instruction extraction and fine-tune dataset export.
//!
//! Solutions are summarised into three-section instructions, then paired with
//! their task context and rank as `<prompt>[/INST]<completion>` records.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{reask, Agent, REASK_SECTIONS};
use crate::error::{Error, Result};
use crate::gateway::ChatMessage;
use crate::model::{
    FinetuneConfig, FinetunePair, InstructionSet, Provenance, SolutionRecord, TaskSpec,
    INST_SEPARATOR,
};
use crate::parallel::Execution;
use crate::sections::{canonical_text, parse_instruction_text};
use crate::template::{TemplateKind, TemplateSet};

pub fn render_extraction_prompt(
    templates: &TemplateSet,
    solution: &SolutionRecord,
    task: &TaskSpec,
) -> Result<Vec<ChatMessage>> {
    if solution.source.trim().is_empty() {
        return Err(Error::Precondition(format!(
            "solution `{}` has no source code",
            solution.id
        )));
    }
    if task.description.trim().is_empty() {
        return Err(Error::Precondition(format!(
            "task `{}` has an empty description",
            task.id
        )));
    }
    templates.get(TemplateKind::Extract).render(&[
        ("code", &solution.source),
        ("metric", task.metric.name.as_str()),
        ("data_type", task.modality.as_str()),
        ("description", &task.description),
    ])
}

/// Summarises one solution. An unparseable reply gets one re-ask.
pub fn extract_instruction(
    agent: &Agent<'_>,
    solution: &SolutionRecord,
    task: &TaskSpec,
) -> Result<InstructionSet> {
    let messages = render_extraction_prompt(agent.templates, solution, task)?;
    let first = agent.ask(messages.clone())?;
    let parsed = match parse_instruction_text(&first.text) {
        Ok(ins) => ins,
        Err(first_err) => {
            log::debug!(
                "extraction for {} did not parse ({first_err}); re-asking",
                solution.id
            );
            let second = agent.ask(reask(messages, &first.text, REASK_SECTIONS))?;
            parse_instruction_text(&second.text).map_err(|e| Error::Extraction {
                solution_id: solution.id.clone(),
                reason: e.to_string(),
                raw: second.text.clone(),
            })?
        }
    };
    Ok(parsed
        .with_provenance(Provenance::Extracted)
        .with_rank(solution.rank))
}

/// Extracted instruction for one (task, solution) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedRecord {
    pub task_id: String,
    pub solution_id: String,
    pub instruction: InstructionSet,
}

/// Extracts every pair; output order matches input order.
pub fn extract_batch(
    agent: &Agent<'_>,
    items: &[(&TaskSpec, &SolutionRecord)],
    execution: Execution,
) -> Vec<Result<ExtractedRecord>> {
    execution.map(items, |(task, solution)| {
        extract_instruction(agent, solution, task).map(|instruction| ExtractedRecord {
            task_id: task.id.clone(),
            solution_id: solution.id.clone(),
            instruction,
        })
    })
}

pub fn rank_token(rank: u32) -> String {
    format!("rank: {rank}")
}

pub fn build_finetune_pair(
    templates: &TemplateSet,
    task: &TaskSpec,
    ins: &InstructionSet,
) -> Result<FinetunePair> {
    let rank = ins.rank.ok_or_else(|| {
        Error::Validation(format!(
            "instruction for task `{}` has no rank; fine-tune pairs are rank-conditioned",
            task.id
        ))
    })?;
    let rank_str = rank.to_string();
    let prompt = templates.get(TemplateKind::FinetunePrompt).render_text(&[
        ("description", &task.description),
        ("metric", task.metric.name.as_str()),
        ("data_type", task.modality.as_str()),
        ("rank", &rank_str),
    ])?;
    let pair = FinetunePair {
        prompt: format!("{}\n", prompt.trim_end()),
        completion: canonical_text(ins),
    };
    if pair.prompt.contains(INST_SEPARATOR) || pair.completion.contains(INST_SEPARATOR) {
        return Err(Error::Validation(format!(
            "task `{}`: prompt and completion must not contain `{INST_SEPARATOR}`",
            task.id
        )));
    }
    let required = [
        task.description.as_str(),
        task.metric.name.as_str(),
        task.modality.as_str(),
        &rank_token(rank),
    ];
    if let Some(missing) = required.iter().find(|r| !pair.prompt.contains(**r)) {
        return Err(Error::Template {
            template: TemplateKind::FinetunePrompt.file_name().into(),
            reason: format!("rendered prompt lacks `{missing}`"),
        });
    }
    Ok(pair)
}

#[derive(Serialize, Deserialize)]
struct DatasetLine {
    text: String,
}

/// Writes one `{"text": ...}` object per line (UTF-8, LF).
pub fn export_dataset(pairs: &[FinetunePair], path: &Path) -> Result<usize> {
    if pairs.is_empty() {
        return Err(Error::Validation("no fine-tune pairs to export".into()));
    }
    let mut out = Vec::new();
    for pair in pairs {
        serde_json::to_writer(
            &mut out,
            &DatasetLine {
                text: pair.to_text(),
            },
        )?;
        out.push(b'\n');
    }
    let ctx = || format!("writing dataset {}", path.display());
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(ctx(), e))?;
    file.write_all(&out).map_err(|e| Error::io(ctx(), e))?;
    Ok(pairs.len())
}

pub fn read_dataset(path: &Path) -> Result<Vec<FinetunePair>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading dataset {}", path.display()), e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let line: DatasetLine = serde_json::from_str(l)?;
            FinetunePair::from_text(&line.text)
        })
        .collect()
}

pub fn export_finetune_config(path: &Path) -> Result<FinetuneConfig> {
    let config = FinetuneConfig::default();
    let mut body = serde_json::to_string_pretty(&config)?;
    body.push('\n');
    std::fs::write(path, body)
        .map_err(|e| Error::io(format!("writing config {}", path.display()), e))?;
    Ok(config)
}
