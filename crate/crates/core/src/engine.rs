//! Candidate inference, critic/decider refinement and manual selection.

use std::collections::VecDeque;
use std::io::{BufRead, Write};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::agent::{reask, Agent, REASK_SECTIONS};
use crate::error::{Error, Result};
use crate::gateway::ChatMessage;
use crate::model::{InstructionSet, Provenance, TaskSpec};
use crate::parallel::Execution;
use crate::sections::{full_text, parse_instruction_text};
use crate::template::TemplateKind;

pub const DEFAULT_REFINE_ROUNDS: u32 = 2;
pub const CANDIDATE_COUNT: usize = 3;

/// Three rank-conditioned candidates, index `i` holding rank `i + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub task_id: String,
    pub candidates: [InstructionSet; 3],
}

impl CandidateSet {
    pub fn new(task_id: impl Into<String>, candidates: [InstructionSet; 3]) -> Result<Self> {
        for (i, c) in candidates.iter().enumerate() {
            if c.rank != Some(i as u32 + 1) {
                return Err(Error::Validation(format!(
                    "candidate {} has rank {:?}, expected {}",
                    i + 1,
                    c.rank,
                    i + 1
                )));
            }
        }
        Ok(CandidateSet {
            task_id: task_id.into(),
            candidates,
        })
    }

    /// 1-based.
    pub fn get(&self, index: usize) -> Option<&InstructionSet> {
        index.checked_sub(1).and_then(|i| self.candidates.get(i))
    }

    /// `Candidate N:` blocks, as shown to the critic, decider and chooser.
    pub fn render(&self) -> String {
        self.candidates
            .iter()
            .enumerate()
            .map(|(i, c)| format!("Candidate {}:\n{}", i + 1, full_text(c).trim_end()))
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementOutcome {
    pub chosen_index: usize,
    pub improved: InstructionSet,
    pub critic_notes: String,
    pub transcript: Vec<ChatMessage>,
}

fn infer_one(agent: &Agent<'_>, task: &TaskSpec, rank: u32) -> Result<InstructionSet> {
    let rank_str = rank.to_string();
    let messages = agent.render(
        TemplateKind::Infer,
        &[
            ("description", &task.description),
            ("metric", task.metric.name.as_str()),
            ("data_type", task.modality.as_str()),
            ("rank", &rank_str),
        ],
    )?;
    let first = agent.ask(messages.clone())?;
    let parsed = match parse_instruction_text(&first.text) {
        Ok(ins) => ins,
        Err(_) => {
            let second = agent.ask(reask(messages, &first.text, REASK_SECTIONS))?;
            parse_instruction_text(&second.text).map_err(|e| Error::Inference {
                rank,
                reason: e.to_string(),
            })?
        }
    };
    Ok(parsed
        .with_provenance(Provenance::Inferred)
        .with_rank(Some(rank)))
}

/// One completion per rank 1..=3; the three calls are independent.
pub fn infer_candidates(
    agent: &Agent<'_>,
    task: &TaskSpec,
    execution: Execution,
) -> Result<CandidateSet> {
    let results = execution.map_range(1..CANDIDATE_COUNT + 1, |rank| {
        infer_one(agent, task, rank as u32)
    });
    let mut candidates = Vec::with_capacity(CANDIDATE_COUNT);
    for r in results {
        candidates.push(r?);
    }
    let candidates: [InstructionSet; 3] = candidates
        .try_into()
        .map_err(|_| Error::Contract("expected three candidates".into()))?;
    CandidateSet::new(task.id.clone(), candidates)
}

pub const REASK_DECISION: &str =
    "Your decision could not be parsed. Start with a line `CHOICE: <n>` \
where n is 1, 2 or 3, then write the improved instruction using the headers \
`Data Preprocessing:`, `Model Architecture:` and `Model Training:`.";

fn choice_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?im)^[ \t]*CHOICE:[ \t]*(\d+)[ \t]*$").unwrap())
}

/// Splits a decider reply into the chosen index and the instruction after it.
pub fn parse_decision(text: &str) -> std::result::Result<(usize, InstructionSet), String> {
    let caps = choice_re()
        .captures(text)
        .ok_or_else(|| "no `CHOICE: <n>` line".to_string())?;
    let index: usize = caps[1]
        .parse()
        .map_err(|_| format!("unparseable choice `{}`", &caps[1]))?;
    if !(1..=CANDIDATE_COUNT).contains(&index) {
        return Err(format!("choice {index} is out of range 1..=3"));
    }
    let rest = &text[caps.get(0).unwrap().end()..];
    let ins = parse_instruction_text(rest).map_err(|e| e.to_string())?;
    Ok((index, ins))
}

/// Critic/decider dialogue. Issues `2 * rounds` calls plus at most one re-ask.
pub fn refine(
    agent: &Agent<'_>,
    candidates: &CandidateSet,
    task: &TaskSpec,
    rounds: u32,
) -> Result<RefinementOutcome> {
    if rounds < 1 {
        return Err(Error::Precondition(
            "refinement needs at least one round".into(),
        ));
    }
    let rendered = candidates.render();
    let mut transcript = Vec::new();
    let mut previous = String::from("(none)");
    let mut critic_notes = String::new();
    let mut last: Option<(Vec<ChatMessage>, String)> = None;

    for _ in 0..rounds {
        let critic = agent.render(
            TemplateKind::Critic,
            &[
                ("description", &task.description),
                ("metric", task.metric.name.as_str()),
                ("candidates", &rendered),
                ("previous", &previous),
            ],
        )?;
        let notes = agent.ask(critic.clone())?.text;
        transcript.extend(critic);
        transcript.push(ChatMessage::assistant(notes.clone()));

        let decider = agent.render(
            TemplateKind::Decider,
            &[
                ("description", &task.description),
                ("metric", task.metric.name.as_str()),
                ("candidates", &rendered),
                ("critique", &notes),
            ],
        )?;
        let decision = agent.ask(decider.clone())?.text;
        transcript.extend(decider.iter().cloned());
        transcript.push(ChatMessage::assistant(decision.clone()));

        critic_notes = notes;
        previous = decision.clone();
        last = Some((decider, decision));
    }

    let (decider, decision) = last.expect("rounds >= 1");
    let (index, improved) = match parse_decision(&decision) {
        Ok(ok) => ok,
        Err(first_reason) => {
            log::debug!("decider reply rejected ({first_reason}); re-asking");
            let retry = reask(decider, &decision, REASK_DECISION);
            transcript.push(retry.last().unwrap().clone());
            let again = agent.ask(retry)?.text;
            transcript.push(ChatMessage::assistant(again.clone()));
            parse_decision(&again).map_err(|reason| Error::Refinement {
                reason,
                transcript: transcript.clone(),
            })?
        }
    };

    Ok(RefinementOutcome {
        chosen_index: index,
        improved: improved
            .with_provenance(Provenance::Refined)
            .with_rank(Some(index as u32)),
        critic_notes,
        transcript,
    })
}

/// Source of a human (or scripted) selection.
pub trait Chooser {
    /// Shows `prompt`, returns the raw answer. `Err` aborts selection.
    fn choose(&mut self, prompt: &str) -> Result<String>;
}

/// Replays canned answers; an exhausted script yields empty answers.
#[derive(Debug, Clone, Default)]
pub struct ScriptedChooser {
    answers: VecDeque<String>,
    pub prompts_seen: usize,
}

impl ScriptedChooser {
    pub fn new<I, S>(answers: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedChooser {
            answers: answers.into_iter().map(Into::into).collect(),
            prompts_seen: 0,
        }
    }
}

impl Chooser for ScriptedChooser {
    fn choose(&mut self, _prompt: &str) -> Result<String> {
        self.prompts_seen += 1;
        Ok(self.answers.pop_front().unwrap_or_default())
    }
}

/// Prompts on a writer and reads one line per answer.
pub struct TerminalChooser<R, W> {
    input: R,
    output: W,
}

impl<R: BufRead, W: Write> TerminalChooser<R, W> {
    pub fn new(input: R, output: W) -> Self {
        TerminalChooser { input, output }
    }
}

impl<R: BufRead, W: Write> Chooser for TerminalChooser<R, W> {
    fn choose(&mut self, prompt: &str) -> Result<String> {
        let io_err = |e| Error::io("interactive selection", e);
        write!(self.output, "{prompt}").map_err(io_err)?;
        self.output.flush().map_err(io_err)?;
        let mut line = String::new();
        let n = self.input.read_line(&mut line).map_err(io_err)?;
        if n == 0 {
            return Err(Error::SelectionAborted { attempts: 0 });
        }
        Ok(line)
    }
}

pub const MAX_SELECTION_ATTEMPTS: usize = 3;

pub fn selection_prompt(candidates: &CandidateSet) -> String {
    format!(
        "{}\n\nSelect the best instruction [1-3]: ",
        candidates.render()
    )
}

/// Asks the chooser for an index up to three times.
pub fn select_manual(
    candidates: &CandidateSet,
    chooser: &mut dyn Chooser,
) -> Result<InstructionSet> {
    let prompt = selection_prompt(candidates);
    for _ in 0..MAX_SELECTION_ATTEMPTS {
        let answer = chooser.choose(&prompt)?;
        if let Some(ins) = answer
            .trim()
            .parse::<usize>()
            .ok()
            .and_then(|i| candidates.get(i))
        {
            return Ok(ins.clone().with_provenance(Provenance::Manual));
        }
        log::warn!("invalid selection `{}`", answer.trim());
    }
    Err(Error::SelectionAborted {
        attempts: MAX_SELECTION_ATTEMPTS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, MockBackend};
    use crate::model::{DataModality, MetricName};
    use crate::template::TemplateSet;

    fn task() -> TaskSpec {
        TaskSpec {
            id: "k3".into(),
            title: "Paris housing".into(),
            description: "Regression with a tabular Paris housing price dataset".into(),
            metric: MetricName::Rmse.into(),
            modality: DataModality::Tabular,
            data_files: vec![],
            leaderboard: None,
        }
    }

    fn instr(tag: &str) -> String {
        format!("Data Preprocessing:\n- scale {tag}\nModel Architecture:\n- ridge {tag}\nModel Training:\n- fit {tag}\n")
    }

    fn candidates() -> CandidateSet {
        let make = |r: u32| {
            parse_instruction_text(&instr(&format!("c{r}")))
                .unwrap()
                .with_provenance(Provenance::Inferred)
                .with_rank(Some(r))
        };
        CandidateSet::new("k3", [make(1), make(2), make(3)]).unwrap()
    }

    #[test]
    fn infers_three_ranked_candidates() {
        let gw = Gateway::new(
            MockBackend::new()
                .with_rule("rank: 1", instr("one"))
                .with_rule("rank: 2", instr("two"))
                .with_rule("rank: 3", instr("three")),
        );
        let templates = TemplateSet::builtin();
        let agent = Agent::new(&gw, &templates, "llama");
        for mode in [Execution::Sequential, Execution::Parallel] {
            let set = infer_candidates(&agent, &task(), mode).unwrap();
            assert_eq!(set.candidates[1].preprocessing, "- scale two");
            for (i, c) in set.candidates.iter().enumerate() {
                assert_eq!(c.rank, Some(i as u32 + 1));
                assert_eq!(c.provenance, Provenance::Inferred);
            }
        }
    }

    #[test]
    fn identical_candidates_are_allowed() {
        let gw = Gateway::new(MockBackend::new().with_default(instr("same")));
        let templates = TemplateSet::builtin();
        let set = infer_candidates(
            &Agent::new(&gw, &templates, "llama"),
            &task(),
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!(set.candidates[0].training, set.candidates[2].training);
    }

    #[test]
    fn headerless_rank_two_fails_naming_rank() {
        let gw = Gateway::new(
            MockBackend::new()
                .with_rule("rank: 2", "no headers here")
                .with_default(instr("x")),
        );
        let templates = TemplateSet::builtin();
        let err = infer_candidates(
            &Agent::new(&gw, &templates, "llama"),
            &task(),
            Execution::Parallel,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Inference { rank: 2, .. }), "{err}");
    }

    #[test]
    fn refine_picks_decider_choice() {
        let decision = format!("After review:\nCHOICE: 2\n{}", instr("improved"));
        let gw = Gateway::new(
            MockBackend::new()
                .with_rule(
                    "identify any logical errors",
                    "Candidate 1 ignores scaling.",
                )
                .with_rule("Choose the best", decision),
        );
        let templates = TemplateSet::builtin();
        let out = refine(
            &Agent::new(&gw, &templates, "gpt"),
            &candidates(),
            &task(),
            2,
        )
        .unwrap();
        assert_eq!(out.chosen_index, 2);
        assert_eq!(out.improved.provenance, Provenance::Refined);
        assert_eq!(out.improved.training, "- fit improved");
        assert_eq!(out.critic_notes, "Candidate 1 ignores scaling.");
    }

    #[test]
    fn out_of_range_choice_fails_after_reask() {
        let gw = Gateway::new(
            MockBackend::new()
                .with_rule("identify any logical errors", "notes")
                .with_rule("Choose the best", format!("CHOICE: 5\n{}", instr("x"))),
        );
        let templates = TemplateSet::builtin();
        match refine(
            &Agent::new(&gw, &templates, "gpt"),
            &candidates(),
            &task(),
            1,
        )
        .unwrap_err()
        {
            Error::Refinement { reason, transcript } => {
                assert!(reason.contains("out of range"), "{reason}");
                assert!(!transcript.is_empty());
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn select_manual_paths() {
        let set = candidates();
        let mut c = ScriptedChooser::new(["3"]);
        let ins = select_manual(&set, &mut c).unwrap();
        assert_eq!(ins.rank, Some(3));
        assert_eq!(ins.provenance, Provenance::Manual);

        let mut c = ScriptedChooser::new(["0", "2"]);
        assert_eq!(select_manual(&set, &mut c).unwrap().rank, Some(2));
        assert_eq!(c.prompts_seen, 2);

        let mut c = ScriptedChooser::new(["x", "4", ""]);
        assert!(matches!(
            select_manual(&set, &mut c),
            Err(Error::SelectionAborted { attempts: 3 })
        ));
        assert_eq!(set, candidates());
    }

    #[test]
    fn terminal_chooser_reads_lines() {
        let input = std::io::Cursor::new(b"7\n1\n".to_vec());
        let mut out = Vec::new();
        let mut chooser = TerminalChooser::new(input, &mut out);
        assert_eq!(
            select_manual(&candidates(), &mut chooser).unwrap().rank,
            Some(1)
        );
        assert!(String::from_utf8(out).unwrap().contains("Candidate 3:"));
    }

    #[test]
    fn decision_parsing() {
        assert!(parse_decision("no choice").is_err());
        assert!(parse_decision("CHOICE: 1\nprose only").is_err());
        let (i, _) = parse_decision(&format!("choice: 3\n{}", instr("a"))).unwrap();
        assert_eq!(i, 3);
    }
}
