//! End-to-end run: candidates → selection → staged synthesis → integration
//! → execution with bounded repair → scoring.
//!
//! Every intermediate lands in a numbered file under
//! `<out>/<task_id>/<UTC timestamp>/`. Only `report.json` carries timings, so
//! two replayed runs differ in nothing else.

use std::path::{Path, PathBuf};
use std::time::Instant;

use indexmap::IndexMap;
use serde::Serialize;

use crate::agent::Agent;
use crate::config::PipelineConfig;
use crate::engine::{infer_candidates, refine, select_manual, Chooser};
use crate::error::{Error, Result};
use crate::eval::{build_report, score, PredictionTable, RunArtifacts, RunReport};
use crate::gateway::Gateway;
use crate::model::{InstructionSet, TaskSpec};
use crate::parallel::{with_workers, Execution};
use crate::sandbox::{execute, prepare_workspace, ExecutionOutcome};
use crate::sections::full_text;
use crate::synth::{StagedProgram, Synthesizer, REPAIR_LIMIT};
use crate::template::TemplateSet;

/// How the instruction that goes to synthesis is picked.
pub enum Selection<'c> {
    Refine,
    Manual(&'c mut dyn Chooser),
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Directory the task's `data_files` are copied from.
    pub data_root: PathBuf,
    /// Ground-truth CSV; without it the run is not scored.
    pub truth: Option<PathBuf>,
    /// Id column name for truth and submission; the first column when unset.
    pub id_column: Option<String>,
    pub execution: Execution,
}

#[derive(Debug)]
pub struct PipelineRun {
    pub run_dir: PathBuf,
    pub report: RunReport,
    pub program: StagedProgram,
    /// The error that stopped the run early, if any.
    pub error: Option<Error>,
}

impl PipelineRun {
    pub fn succeeded(&self) -> bool {
        self.report.succeeded
    }
}

/// Creates `<out>/<task_id>/<timestamp>/`, suffixing `-N` on collision.
pub fn create_run_dir(out_dir: &Path, task_id: &str) -> Result<PathBuf> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ").to_string();
    let parent = out_dir.join(task_id);
    std::fs::create_dir_all(&parent)
        .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    for n in 1.. {
        let name = if n == 1 {
            stamp.clone()
        } else {
            format!("{stamp}-{n}")
        };
        let dir = parent.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(format!("creating {}", dir.display()), e)),
        }
    }
    unreachable!()
}

struct RunDir {
    path: PathBuf,
    next: u32,
}

impl RunDir {
    /// Writes `NN_<name>` with the next sequence number.
    fn write_numbered(&mut self, name: &str, body: &str) -> Result<PathBuf> {
        self.next += 1;
        self.write(&format!("{:02}_{name}", self.next), body)
    }

    fn write(&self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.path.join(name);
        std::fs::write(&path, body)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        Ok(path)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let body = serde_json::to_string_pretty(value)? + "\n";
        self.write_numbered(name, &body)
    }
}

/// Execution record without the wall time, which lives in the report.
#[derive(Serialize)]
struct ExecRecord<'a> {
    status: &'a str,
    exit_code: Option<i32>,
    submission_written: bool,
}

struct Timer(IndexMap<String, f64>);

impl Timer {
    fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        *self.0.entry(phase.to_string()).or_insert(0.0) += start.elapsed().as_secs_f64();
        out
    }
}

/// Runs one task end to end. Errors that end the run early are reported in
/// [`PipelineRun::error`]; `Err` is returned only when the run directory
/// itself cannot be created.
pub fn run_pipeline(
    config: &PipelineConfig,
    gateway: &Gateway,
    templates: &TemplateSet,
    task: &TaskSpec,
    options: &RunOptions,
    selection: Selection<'_>,
) -> Result<PipelineRun> {
    let run_dir = create_run_dir(&options.out_dir, &task.id)?;
    let mut dir = RunDir {
        path: run_dir.clone(),
        next: 0,
    };
    let mut artifacts = RunArtifacts::default();
    let mut program = StagedProgram::default();
    let mut timer = Timer(IndexMap::new());
    let started = Instant::now();

    let result = run_phases(
        config,
        gateway,
        templates,
        task,
        options,
        selection,
        &mut dir,
        &mut artifacts,
        &mut program,
        &mut timer,
    );
    let error = result.err();
    if let Some(e) = &error {
        artifacts.error = Some(e.to_string());
    }
    timer
        .0
        .insert("total".into(), started.elapsed().as_secs_f64());
    artifacts.wall_times = timer.0;
    artifacts.fix_attempts = program.fix_attempts;

    let exchanges = serde_json::to_string_pretty(&program.exchanges)? + "\n";
    dir.write("exchanges.json", &exchanges)?;
    let report = build_report(task, &artifacts);
    dir.write("report.json", &report.to_json())?;
    Ok(PipelineRun {
        run_dir,
        report,
        program,
        error,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_phases(
    config: &PipelineConfig,
    gateway: &Gateway,
    templates: &TemplateSet,
    task: &TaskSpec,
    options: &RunOptions,
    selection: Selection<'_>,
    dir: &mut RunDir,
    artifacts: &mut RunArtifacts,
    program: &mut StagedProgram,
    timer: &mut Timer,
) -> Result<()> {
    task.validate()?;
    let ext = config
        .sandbox
        .solution_extension
        .trim_start_matches('.')
        .to_string();
    let instruction_agent = Agent::new(gateway, templates, &config.models.instruction);
    let refine_agent = Agent::new(gateway, templates, &config.models.extraction);
    let code_agent = Agent::new(gateway, templates, &config.models.code);

    let candidates = timer.time("inference", || {
        infer_candidates(&instruction_agent, task, options.execution)
    })?;
    dir.write_json("candidates.json", &candidates)?;

    let chosen: InstructionSet = match selection {
        Selection::Refine => {
            let outcome = timer.time("selection", || {
                refine(&refine_agent, &candidates, task, config.refine_rounds)
            })?;
            dir.write_json("refinement.json", &outcome)?;
            outcome.improved
        }
        Selection::Manual(chooser) => {
            let chosen = timer.time("selection", || select_manual(&candidates, chooser))?;
            dir.write_json("selection.json", &chosen)?;
            chosen
        }
    };
    artifacts.provenance = Some(chosen.provenance);
    dir.write_numbered("instruction.txt", &full_text(&chosen))?;

    let synth = Synthesizer::new(code_agent, &config.sandbox.submission_filename);
    timer.time("synthesis", || synth.synth_all(&chosen, task, program))?;
    for (stage, code) in &program.snippets {
        dir.write_numbered(&format!("stage_{stage}.{ext}"), &format!("{code}\n"))?;
    }
    timer.time("integration", || synth.integrate_into(program))?;
    dir.write_numbered(
        &format!("integrated.{ext}"),
        &format!("{}\n", program.integrated),
    )?;

    let workspaces = dir.path.join("workspaces");
    let mut current = program.integrated.clone();
    let mut outcome: ExecutionOutcome;
    loop {
        outcome = timer.time("execution", || -> Result<ExecutionOutcome> {
            let ws = prepare_workspace(task, &options.data_root, &workspaces)?;
            execute(&current, &ws, &config.sandbox)
        })?;
        let attempt = program.fix_attempts;
        dir.write_numbered(&format!("exec_{attempt}_stdout.txt"), &outcome.stdout_tail)?;
        dir.write_numbered(&format!("exec_{attempt}_stderr.txt"), &outcome.stderr_tail)?;
        dir.write_json(
            &format!("exec_{attempt}.json"),
            &ExecRecord {
                status: outcome.status.as_str(),
                exit_code: outcome.exit_code,
                submission_written: outcome.submission_path.is_some(),
            },
        )?;
        if outcome.is_success() && outcome.submission_path.is_some() {
            break;
        }
        if program.fix_attempts >= REPAIR_LIMIT.min(config.repair_limit) {
            break;
        }
        let next = program.fix_attempts + 1;
        let error_text = outcome.error_text(&config.sandbox.submission_filename);
        let (fixed, exchange) =
            timer.time("repair", || synth.repair(&current, &error_text, next))?;
        program.fix_attempts = next;
        program.exchanges.push(exchange);
        dir.write_numbered(&format!("repair_{next}.{ext}"), &format!("{fixed}\n"))?;
        current = fixed;
    }

    artifacts.status = Some(outcome.status);
    let succeeded = outcome.is_success();
    let Some(submission) = outcome.submission_path.filter(|_| succeeded) else {
        return Ok(());
    };
    artifacts.submission_written = true;
    let copied = dir.path.join(&config.sandbox.submission_filename);
    std::fs::copy(&submission, &copied).map_err(|e| Error::io("copying submission", e))?;

    if let Some(truth_path) = &options.truth {
        let id = options.id_column.as_deref();
        let value = timer.time("scoring", || -> Result<f64> {
            let truth = PredictionTable::read_csv(truth_path, id)?;
            let pred = PredictionTable::read_csv(&copied, id)?;
            Ok(score(task.metric, &truth, &pred)?)
        })?;
        artifacts.score = Some(value);
    }
    Ok(())
}

/// Runs independent tasks over `jobs` workers with refinement-based
/// selection. Results keep input order.
pub fn run_many(
    config: &PipelineConfig,
    gateway: &Gateway,
    templates: &TemplateSet,
    tasks: &[(TaskSpec, RunOptions)],
    jobs: usize,
) -> Vec<Result<PipelineRun>> {
    let execution = if jobs > 1 {
        Execution::Parallel
    } else {
        Execution::Sequential
    };
    with_workers(jobs, || {
        execution.map(tasks, |(task, options)| {
            run_pipeline(config, gateway, templates, task, options, Selection::Refine)
        })
    })
}
