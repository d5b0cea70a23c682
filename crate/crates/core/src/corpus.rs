//! Competition corpus ingestion.
//!
//! The corpus is JSONL, one competition per line:
//!
//! ```json
//! {"id": "...", "title": "...", "description": "...", "metric": "roc-auc",
//!  "data_type": "tabular", "data_files": ["train.csv"], "leaderboard": [0.9],
//!  "solutions": [{"id": "...", "score": 0.91, "code": "..."}]}
//! ```
//!
//! Competitions scored by "points", "significance" or "custom loss" are
//! parsed but held apart in [`Corpus::excluded`] since they carry no usable
//! metric; [`filter_metric_categories`] drops them.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    normalize_label, rank_solutions, DataModality, MetricName, MetricSpec, SolutionRecord, TaskSpec,
};

pub const DEFAULT_TOP_K: usize = 75;

/// Metric categories without a comparable score.
pub const EXCLUDED_METRIC_LABELS: [&str; 3] = ["points", "significance", "custom loss"];

pub fn is_excluded_label(label: &str) -> bool {
    let norm = normalize_label(label);
    EXCLUDED_METRIC_LABELS.contains(&norm.as_str())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Competition {
    pub task: TaskSpec,
    pub solutions: Vec<SolutionRecord>,
}

/// A competition whose metric label is in the excluded categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedCompetition {
    pub id: String,
    pub title: String,
    pub metric_label: String,
    pub line: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub competitions: Vec<Competition>,
    pub excluded: Vec<ExcludedCompetition>,
    /// Task id to the metric label as written in the source file.
    pub raw_metric_names: BTreeMap<String, String>,
}

impl Corpus {
    /// Competitions of both kinds.
    pub fn len(&self) -> usize {
        self.competitions.len() + self.excluded.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn solution_count(&self) -> usize {
        self.competitions.iter().map(|c| c.solutions.len()).sum()
    }
}

/// Wire format of one corpus line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub id: String,
    pub title: String,
    pub description: String,
    pub metric: String,
    pub data_type: String,
    #[serde(default)]
    pub data_files: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leaderboard: Option<Vec<f64>>,
    pub solutions: Vec<SolutionLine>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionLine {
    pub id: String,
    pub score: f64,
    pub code: String,
}

impl CorpusRecord {
    /// Re-encodes a loaded competition using its original metric label.
    pub fn from_competition(c: &Competition, raw_metric: &str) -> Self {
        CorpusRecord {
            id: c.task.id.clone(),
            title: c.task.title.clone(),
            description: c.task.description.clone(),
            metric: raw_metric.to_string(),
            data_type: c.task.modality.as_str().to_string(),
            data_files: c.task.data_files.clone(),
            leaderboard: c.task.leaderboard.clone(),
            solutions: c
                .solutions
                .iter()
                .map(|s| SolutionLine {
                    id: s.id.clone(),
                    score: s.score,
                    code: s.source.clone(),
                })
                .collect(),
        }
    }
}

enum Parsed {
    Scored(Competition),
    Excluded(ExcludedCompetition),
}

fn parse_line(path: &Path, line_no: usize, line: &str) -> Result<(Parsed, String)> {
    let fail = |message: String| Error::Corpus {
        path: path.to_path_buf(),
        line: line_no,
        message,
    };
    let record: CorpusRecord =
        serde_json::from_str(line).map_err(|e| fail(format!("schema violation: {e}")))?;
    if record.description.trim().is_empty() {
        return Err(fail(format!(
            "competition `{}` has an empty description",
            record.id
        )));
    }
    let raw_metric = record.metric.clone();
    if is_excluded_label(&record.metric) {
        return Ok((
            Parsed::Excluded(ExcludedCompetition {
                id: record.id,
                title: record.title,
                metric_label: record.metric,
                line: line_no,
            }),
            raw_metric,
        ));
    }
    let metric = MetricName::from_label(&record.metric)
        .ok_or_else(|| fail(format!("unknown metric label `{}`", record.metric)))?;
    let modality = DataModality::from_label(&record.data_type)
        .ok_or_else(|| fail(format!("unknown data type label `{}`", record.data_type)))?;
    let mut seen = HashSet::new();
    for s in &record.solutions {
        if !seen.insert(s.id.as_str()) {
            return Err(fail(format!("duplicate solution id `{}`", s.id)));
        }
    }
    let task = TaskSpec {
        id: record.id,
        title: record.title,
        description: record.description,
        metric: MetricSpec::new(metric),
        modality,
        data_files: record.data_files,
        leaderboard: record.leaderboard,
    };
    let solutions = record
        .solutions
        .into_iter()
        .map(|s| SolutionRecord {
            id: s.id,
            source: s.code,
            score: s.score,
            rank: None,
        })
        .collect();
    Ok((Parsed::Scored(Competition { task, solutions }), raw_metric))
}

/// Reads a corpus JSONL file. Blank lines are skipped; line numbers are 1-based.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading corpus {}", path.display()), e))?;
    parse_corpus(path, &text)
}

pub fn parse_corpus(path: &Path, text: &str) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let (parsed, raw_metric) = parse_line(path, line_no, line)?;
        let id = match &parsed {
            Parsed::Scored(c) => c.task.id.clone(),
            Parsed::Excluded(e) => e.id.clone(),
        };
        if corpus.raw_metric_names.contains_key(&id) {
            return Err(Error::Corpus {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("duplicate competition id `{id}`"),
            });
        }
        corpus.raw_metric_names.insert(id, raw_metric);
        match parsed {
            Parsed::Scored(c) => corpus.competitions.push(c),
            Parsed::Excluded(e) => corpus.excluded.push(e),
        }
    }
    Ok(corpus)
}

/// Writes a corpus back out as JSONL using the original metric labels.
pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut out = String::new();
    for c in &corpus.competitions {
        let raw = corpus
            .raw_metric_names
            .get(&c.task.id)
            .map(String::as_str)
            .unwrap_or(c.task.metric.name.as_str());
        out.push_str(&serde_json::to_string(&CorpusRecord::from_competition(
            c, raw,
        ))?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Drops competitions whose original metric label is an excluded category.
pub fn filter_metric_categories(corpus: Corpus) -> Corpus {
    let Corpus {
        competitions,
        excluded,
        mut raw_metric_names,
    } = corpus;
    for e in &excluded {
        raw_metric_names.remove(&e.id);
    }
    let competitions: Vec<Competition> = competitions
        .into_iter()
        .filter(|c| {
            let keep = raw_metric_names
                .get(&c.task.id)
                .is_none_or(|label| !is_excluded_label(label));
            if !keep {
                raw_metric_names.remove(&c.task.id);
            }
            keep
        })
        .collect();
    Corpus {
        competitions,
        excluded: Vec::new(),
        raw_metric_names,
    }
}

/// The best `min(k, n)` solutions under the task's metric, ranked from 1.
pub fn select_top_solutions(
    task: &TaskSpec,
    solutions: Vec<SolutionRecord>,
    k: usize,
) -> Result<Vec<SolutionRecord>> {
    if k == 0 {
        return Err(Error::Precondition("top-k must be at least 1".into()));
    }
    let mut ranked = rank_solutions(solutions, task.metric)?;
    ranked.truncate(k);
    Ok(ranked)
}

/// Applies [`select_top_solutions`] to every competition.
pub fn select_corpus(corpus: Corpus, k: usize) -> Result<Corpus> {
    let mut competitions = Vec::with_capacity(corpus.competitions.len());
    for c in corpus.competitions {
        let solutions = select_top_solutions(&c.task, c.solutions, k)?;
        competitions.push(Competition {
            task: c.task,
            solutions,
        });
    }
    Ok(Corpus {
        competitions,
        ..corpus
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: &str, metric: &str, scores: &[f64]) -> String {
        let solutions: Vec<_> = scores
            .iter()
            .enumerate()
            .map(|(i, s)| serde_json::json!({"id": format!("{id}-s{i:03}"), "score": s, "code": "print(1)"}))
            .collect();
        serde_json::json!({
            "id": id, "title": id, "description": format!("task {id}"),
            "metric": metric, "data_type": "tabular", "data_files": ["train.csv"],
            "solutions": solutions,
        })
        .to_string()
    }

    fn parse(text: &str) -> Result<Corpus> {
        parse_corpus(Path::new("corpus.jsonl"), text)
    }

    #[test]
    fn two_line_fixture() {
        let c = parse(&format!("{}\n\n", line("t1", "rmse", &[0.3]))).unwrap();
        assert_eq!(c.competitions.len(), 1);
        assert_eq!(c.solution_count(), 1);
    }

    #[test]
    fn missing_description_names_line() {
        let err =
            parse(r#"{"id":"a","title":"a","metric":"rmse","data_type":"text","solutions":[]}"#)
                .unwrap_err();
        match &err {
            Error::Corpus { line, message, .. } => {
                assert_eq!(*line, 1);
                assert!(message.contains("description"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_labels_fail_with_line() {
        let text = format!("{}\n{}", line("a", "rmse", &[]), line("b", "bleu", &[]));
        let err = parse(&text).unwrap_err().to_string();
        assert!(err.contains(":2:") && err.contains("bleu"), "{err}");
        let bad_modality = line("c", "mae", &[]).replace("tabular", "audio");
        let err = parse(&bad_modality).unwrap_err().to_string();
        assert!(err.contains("audio"), "{err}");
    }

    #[test]
    fn roc_auc_label() {
        let c = parse(&line("a", "roc-auc", &[0.5])).unwrap();
        let m = c.competitions[0].task.metric;
        assert_eq!(m.name, MetricName::RocAuc);
        assert_eq!(m.direction, crate::model::Direction::HigherBetter);
    }

    #[test]
    fn excluded_categories_are_dropped() {
        let text = [
            line("keep", "rmse", &[1.0]),
            line("p", "points", &[1.0]),
            line("s", "Significance", &[1.0]),
            line("c", "Custom Loss", &[1.0]),
        ]
        .join("\n");
        let corpus = parse(&text).unwrap();
        assert_eq!(corpus.len(), 4);
        let filtered = filter_metric_categories(corpus);
        let ids: Vec<_> = filtered
            .competitions
            .iter()
            .map(|c| c.task.id.as_str())
            .collect();
        assert_eq!(ids, ["keep"]);
        assert_eq!(filtered.len(), 1);
        assert_eq!(filtered.raw_metric_names.len(), 1);
    }

    #[test]
    fn filter_is_identity_without_excluded_labels() {
        let corpus =
            parse(&[line("a", "rmse", &[1.0]), line("b", "f1", &[0.2])].join("\n")).unwrap();
        assert_eq!(filter_metric_categories(corpus.clone()), corpus);
    }

    #[test]
    fn top_k_selection() {
        let scores: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let corpus = parse(&line("t", "rmse", &scores)).unwrap();
        let c = &corpus.competitions[0];
        let top = select_top_solutions(&c.task, c.solutions.clone(), 75).unwrap();
        assert_eq!(top.len(), 75);
        assert_eq!(top[0].score, 0.0);
        assert_eq!(top.last().unwrap().rank, Some(75));

        let few = select_top_solutions(&c.task, c.solutions[..40].to_vec(), 75).unwrap();
        assert_eq!(few.len(), 40);

        let one = select_top_solutions(&c.task, c.solutions.clone(), 1).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].score, 0.0);

        assert!(select_top_solutions(&c.task, c.solutions.clone(), 0).is_err());
    }

    #[test]
    fn reserialization_is_lossless() {
        let text = [line("a", "roc-auc", &[0.7, 0.8]), line("b", "MAE", &[2.0])].join("\n");
        let corpus = parse(&text).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.jsonl");
        write_corpus(&corpus, &path).unwrap();
        assert_eq!(load_corpus(&path).unwrap(), corpus);
    }
}
