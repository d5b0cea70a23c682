use std::io::IsTerminal;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use taskforge::config::{Overrides, PipelineConfig};
use taskforge::corpus::{
    filter_metric_categories, load_corpus, select_corpus, write_corpus, Corpus,
};
use taskforge::engine::{
    infer_candidates, refine, select_manual, CandidateSet, Chooser, ScriptedChooser,
    TerminalChooser,
};
use taskforge::eval::{percentile, score, PredictionTable};
use taskforge::forge::{
    build_finetune_pair, export_dataset, export_finetune_config, extract_batch, ExtractedRecord,
};
use taskforge::gateway::{CassetteStore, Gateway};
use taskforge::model::{InstructionSet, MetricSpec, TaskSpec};
use taskforge::pipeline::{run_many, run_pipeline, PipelineRun, RunOptions, Selection};
use taskforge::sandbox::{execute, prepare_workspace};
use taskforge::sections::parse_instruction_text;
use taskforge::synth::{StagedProgram, Synthesizer};
use taskforge::template::TemplateSet;
use taskforge::{agent::Agent, Error, Execution};

use crate::{Command, GlobalArgs, SelectionArgs, EXIT_BACKEND, EXIT_CONFIG, EXIT_FAILURE};

pub fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) => exit_code_for_core(e),
        None => EXIT_FAILURE,
    }
}

fn exit_code_for_core(err: &Error) -> u8 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        Error::Gateway(_) => EXIT_BACKEND,
        _ => EXIT_FAILURE,
    }
}

struct Ctx {
    config: PipelineConfig,
    templates: TemplateSet,
}

impl Ctx {
    fn new(global: &GlobalArgs) -> Result<Self> {
        let overrides = Overrides {
            backend: global.backend,
            cassette_dir: global.cassettes.clone(),
            mock_fixtures: global.mock_fixtures.clone(),
            template_dir: global.templates.clone(),
            interpreter_command: global.interpreter.clone(),
            timeout_seconds: global.timeout,
            ..Default::default()
        };
        let config = PipelineConfig::resolve(global.config.as_deref(), &overrides)?;
        let templates = config.templates()?;
        Ok(Ctx { config, templates })
    }

    fn gateway(&self) -> Result<Gateway> {
        let backend = self.config.build_backend()?;
        Ok(Gateway::from_arc(backend).with_temperature(self.config.temperature))
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_or_print(output: Option<&Path>, body: &str) -> Result<()> {
    match output {
        Some(path) => {
            std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn read_task(path: &Path) -> Result<TaskSpec> {
    let task: TaskSpec = read_json(path)?;
    task.validate()?;
    Ok(task)
}

fn read_instruction(path: &Path) -> Result<InstructionSet> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(ins) = serde_json::from_str::<InstructionSet>(&text) {
        return Ok(ins);
    }
    Ok(parse_instruction_text(&text).map_err(Error::from)?)
}

fn selected_corpus(path: &Path, top_k: Option<usize>, config: &PipelineConfig) -> Result<Corpus> {
    let corpus = filter_metric_categories(load_corpus(path)?);
    Ok(select_corpus(corpus, top_k.unwrap_or(config.top_k))?)
}

fn execution(jobs: usize) -> Execution {
    if jobs > 1 {
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}

/// `--interactive` reads from the terminal unless a scripted `--choice` is
/// given; a piped stdin without `--choice` is refused.
fn chooser(args: &SelectionArgs) -> Result<Box<dyn Chooser>> {
    if let Some(n) = args.choice {
        return Ok(Box::new(ScriptedChooser::new([n.to_string()])));
    }
    if !std::io::stdin().is_terminal() {
        return Err(Error::Config(
            "--interactive needs a terminal on stdin; pass --choice N to script it".into(),
        )
        .into());
    }
    Ok(Box::new(TerminalChooser::new(
        std::io::stdin().lock(),
        std::io::stderr(),
    )))
}

fn pipeline_exit(run: &PipelineRun) -> u8 {
    match &run.error {
        Some(e) => exit_code_for_core(e),
        None if run.succeeded() => 0,
        None => EXIT_FAILURE,
    }
}

pub fn run(global: &GlobalArgs, command: Command) -> Result<u8> {
    let ctx = Ctx::new(global)?;
    let config = &ctx.config;
    match command {
        Command::Ingest {
            corpus,
            top_k,
            output,
        } => {
            let loaded = load_corpus(&corpus)?;
            let (total, excluded) = (loaded.len(), loaded.excluded.len());
            let selected = select_corpus(
                filter_metric_categories(loaded),
                top_k.unwrap_or(config.top_k),
            )?;
            if let Some(path) = &output {
                write_corpus(&selected, path)?;
            }
            println!(
                "{total} competitions read, {excluded} excluded, {} kept with {} selected solutions",
                selected.competitions.len(),
                selected.solution_count()
            );
            Ok(0)
        }
        Command::Extract {
            corpus,
            top_k,
            output,
        } => {
            let selected = selected_corpus(&corpus, top_k, config)?;
            let gateway = ctx.gateway()?;
            let agent = Agent::new(&gateway, &ctx.templates, &config.models.extraction);
            let items: Vec<_> = selected
                .competitions
                .iter()
                .flat_map(|c| c.solutions.iter().map(move |s| (&c.task, s)))
                .collect();
            let results = taskforge::parallel::with_workers(global.jobs, || {
                extract_batch(&agent, &items, execution(global.jobs))
            });
            let mut body = String::new();
            let mut failures = Vec::new();
            for r in results {
                match r {
                    Ok(rec) => {
                        body.push_str(&serde_json::to_string(&rec)?);
                        body.push('\n');
                    }
                    Err(e) => failures.push(e),
                }
            }
            std::fs::write(&output, body)
                .with_context(|| format!("writing {}", output.display()))?;
            eprintln!(
                "{} extracted, {} failed",
                items.len() - failures.len(),
                failures.len()
            );
            for e in &failures {
                eprintln!("  {e}");
            }
            Ok(
                match failures
                    .iter()
                    .find(|e| matches!(e, Error::Gateway(_) | Error::Config(_)))
                {
                    Some(e) => exit_code_for_core(e),
                    None if failures.is_empty() => 0,
                    None => EXIT_FAILURE,
                },
            )
        }
        Command::ExportFinetune {
            corpus,
            instructions,
            dataset,
            finetune_config,
        } => {
            let corpus = load_corpus(&corpus)?;
            let text = std::fs::read_to_string(&instructions)
                .with_context(|| format!("reading {}", instructions.display()))?;
            let mut pairs = Vec::new();
            for (i, line) in text
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
            {
                let rec: ExtractedRecord = serde_json::from_str(line)
                    .with_context(|| format!("{}:{}", instructions.display(), i + 1))?;
                let Some(c) = corpus
                    .competitions
                    .iter()
                    .find(|c| c.task.id == rec.task_id)
                else {
                    bail!(
                        "{}:{}: unknown task `{}`",
                        instructions.display(),
                        i + 1,
                        rec.task_id
                    );
                };
                pairs.push(build_finetune_pair(
                    &ctx.templates,
                    &c.task,
                    &rec.instruction,
                )?);
            }
            let n = export_dataset(&pairs, &dataset)?;
            if let Some(path) = &finetune_config {
                export_finetune_config(path)?;
            }
            println!("{n} records written to {}", dataset.display());
            Ok(0)
        }
        Command::Infer { task, output } => {
            let task = read_task(&task)?;
            let gateway = ctx.gateway()?;
            let agent = Agent::new(&gateway, &ctx.templates, &config.models.instruction);
            let candidates = infer_candidates(&agent, &task, Execution::default())?;
            write_or_print(output.as_deref(), &to_json(&candidates)?)?;
            Ok(0)
        }
        Command::Refine {
            task,
            candidates,
            rounds,
            output,
        } => {
            let task = read_task(&task)?;
            let candidates: CandidateSet = read_json(&candidates)?;
            let gateway = ctx.gateway()?;
            let agent = Agent::new(&gateway, &ctx.templates, &config.models.extraction);
            let outcome = refine(
                &agent,
                &candidates,
                &task,
                rounds.unwrap_or(config.refine_rounds),
            )?;
            write_or_print(output.as_deref(), &to_json(&outcome)?)?;
            Ok(0)
        }
        Command::Select {
            candidates,
            selection,
            output,
        } => {
            if !selection.interactive {
                return Err(Error::Config("select needs --interactive".into()).into());
            }
            let candidates: CandidateSet = read_json(&candidates)?;
            let mut chooser = chooser(&selection)?;
            let chosen = select_manual(&candidates, chooser.as_mut())?;
            write_or_print(output.as_deref(), &to_json(&chosen)?)?;
            Ok(0)
        }
        Command::Synth {
            task,
            instruction,
            output,
        } => {
            let task = read_task(&task)?;
            let instruction = read_instruction(&instruction)?;
            let gateway = ctx.gateway()?;
            let synth = Synthesizer::new(
                Agent::new(&gateway, &ctx.templates, &config.models.code),
                &config.sandbox.submission_filename,
            );
            let mut program = StagedProgram::default();
            synth.synth_all(&instruction, &task, &mut program)?;
            synth.integrate_into(&mut program)?;
            std::fs::write(&output, format!("{}\n", program.integrated))
                .with_context(|| format!("writing {}", output.display()))?;
            println!("{}", output.display());
            Ok(0)
        }
        Command::Exec {
            program,
            task,
            data,
        } => {
            let task_path = task;
            let task = read_task(&task_path)?;
            let code = std::fs::read_to_string(&program)
                .with_context(|| format!("reading {}", program.display()))?;
            let data_root = data_root(data, &task_path);
            let workspace =
                prepare_workspace(&task, &data_root, &global.out.join(&task.id).join("exec"))?;
            let outcome = execute(&code, &workspace, &config.sandbox)?;
            print!("{}", to_json(&outcome)?);
            Ok(if outcome.is_success() {
                0
            } else {
                EXIT_FAILURE
            })
        }
        Command::Eval {
            metric,
            truth,
            pred,
            id_column,
            leaderboard,
        } => {
            let id = id_column.as_deref();
            let spec = MetricSpec::new(metric);
            let value = score(
                spec,
                &PredictionTable::read_csv(&truth, id)?,
                &PredictionTable::read_csv(&pred, id)?,
            )
            .map_err(Error::from)?;
            match leaderboard {
                Some(path) => {
                    let board: Vec<f64> = read_json(&path)?;
                    let p = percentile(value, &board, spec.direction).map_err(Error::from)?;
                    println!("{metric} {value:.10} percentile {p}");
                }
                None => println!("{metric} {value:.10}"),
            }
            Ok(0)
        }
        Command::ReplayList => {
            let dir = config
                .cassette_dir
                .clone()
                .ok_or_else(|| Error::Config("replay-list needs --cassettes".into()))?;
            for c in CassetteStore::new(dir).list().map_err(Error::from)? {
                println!(
                    "{}  {}  {} message(s)  {} byte response",
                    c.key,
                    c.request_snapshot.model_id,
                    c.request_snapshot.messages.len(),
                    c.response.len()
                );
            }
            Ok(0)
        }
        Command::Pipeline {
            tasks,
            data,
            truth,
            id_column,
            selection,
        } => {
            if tasks.len() > 1 && (truth.is_some() || selection.interactive) {
                return Err(Error::Config(
                    "--truth and --interactive apply to a single task".into(),
                )
                .into());
            }
            let gateway = ctx.gateway()?;
            let mut jobs = Vec::new();
            for path in &tasks {
                let task = read_task(path)?;
                let options = RunOptions {
                    out_dir: global.out.clone(),
                    data_root: data_root(data.clone(), path),
                    truth: truth.clone(),
                    id_column: id_column.clone(),
                    execution: Execution::default(),
                };
                jobs.push((task, options));
            }
            let runs = if selection.interactive {
                let mut chooser = chooser(&selection)?;
                let (task, options) = &jobs[0];
                vec![run_pipeline(
                    config,
                    &gateway,
                    &ctx.templates,
                    task,
                    options,
                    Selection::Manual(chooser.as_mut()),
                )]
            } else {
                run_many(config, &gateway, &ctx.templates, &jobs, global.jobs)
            };
            let mut code = 0;
            for run in runs {
                let run = run?;
                println!("{}", run.report.summary());
                eprintln!("artifacts: {}", run.run_dir.display());
                if let Some(e) = &run.error {
                    eprintln!("error: {e}");
                }
                code = code.max(pipeline_exit(&run));
            }
            Ok(code)
        }
    }
}

fn data_root(explicit: Option<PathBuf>, task_path: &Path) -> PathBuf {
    explicit.unwrap_or_else(|| match task_path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    })
}
