//! Domain types shared by every pipeline stage.
//!
//! All types are plain immutable values with canonical snake_case JSON
//! encodings. [`rank_solutions`] lives here because both corpus selection and
//! fine-tune dataset construction depend on the same ordering.

use std::cmp::Ordering;
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Rmse,
    Mae,
    Mcrmse,
    RocAuc,
    Accuracy,
    F1,
    CategorizationAccuracy,
    MeanCosineSimilarity,
}

impl MetricName {
    pub const ALL: [MetricName; 8] = [
        MetricName::Rmse,
        MetricName::Mae,
        MetricName::Mcrmse,
        MetricName::RocAuc,
        MetricName::Accuracy,
        MetricName::F1,
        MetricName::CategorizationAccuracy,
        MetricName::MeanCosineSimilarity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::Rmse => "rmse",
            MetricName::Mae => "mae",
            MetricName::Mcrmse => "mcrmse",
            MetricName::RocAuc => "roc_auc",
            MetricName::Accuracy => "accuracy",
            MetricName::F1 => "f1",
            MetricName::CategorizationAccuracy => "categorization_accuracy",
            MetricName::MeanCosineSimilarity => "mean_cosine_similarity",
        }
    }

    pub fn direction(self) -> Direction {
        match self {
            MetricName::Rmse | MetricName::Mae | MetricName::Mcrmse => Direction::LowerBetter,
            _ => Direction::HigherBetter,
        }
    }

    /// Multi-column metrics compare whole rows; the rest require a single target column.
    pub fn is_multi_column(self) -> bool {
        matches!(self, MetricName::Mcrmse | MetricName::MeanCosineSimilarity)
    }

    /// Maps a free-form metric label ("roc-auc", "F1 score", "Mean Cosine Similarity")
    /// onto the closed metric set. Unknown labels yield `None`.
    pub fn from_label(label: &str) -> Option<MetricName> {
        let name = match normalize_label(label).as_str() {
            "rmse" | "root mean squared error" | "root mean square error" => MetricName::Rmse,
            "mae" | "mean absolute error" => MetricName::Mae,
            "mcrmse" | "mean columnwise root mean squared error" => MetricName::Mcrmse,
            "roc auc" | "auc" | "auc roc" | "rocauc" => MetricName::RocAuc,
            "accuracy" => MetricName::Accuracy,
            "f1" | "f1 score" | "f score" => MetricName::F1,
            "categorization accuracy" => MetricName::CategorizationAccuracy,
            "mean cosine similarity" | "cosine similarity" => MetricName::MeanCosineSimilarity,
            _ => return None,
        };
        Some(name)
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Lowercases, maps `-`/`_` to spaces and collapses whitespace runs.
pub(crate) fn normalize_label(label: &str) -> String {
    label
        .to_lowercase()
        .replace(['-', '_'], " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LowerBetter,
    HigherBetter,
}

impl Direction {
    /// Ordering where `Less` means `a` is the better score.
    pub fn compare(self, a: f64, b: f64) -> Ordering {
        match self {
            Direction::LowerBetter => a.total_cmp(&b),
            Direction::HigherBetter => b.total_cmp(&a),
        }
    }

    pub fn is_strictly_better(self, a: f64, b: f64) -> bool {
        match self {
            Direction::LowerBetter => a < b,
            Direction::HigherBetter => a > b,
        }
    }

    pub fn reversed(self) -> Direction {
        match self {
            Direction::LowerBetter => Direction::HigherBetter,
            Direction::HigherBetter => Direction::LowerBetter,
        }
    }
}

/// A metric together with its optimisation direction.
///
/// The direction is a function of the name; the field exists so callers never
/// have to re-derive it. Decoding rejects an inconsistent pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct MetricSpec {
    pub name: MetricName,
    pub direction: Direction,
}

impl MetricSpec {
    pub fn new(name: MetricName) -> Self {
        MetricSpec {
            name,
            direction: name.direction(),
        }
    }
}

impl From<MetricName> for MetricSpec {
    fn from(name: MetricName) -> Self {
        MetricSpec::new(name)
    }
}

impl<'de> Deserialize<'de> for MetricSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            name: MetricName,
            direction: Option<Direction>,
        }
        let raw = Raw::deserialize(deserializer)?;
        let spec = MetricSpec::new(raw.name);
        match raw.direction {
            Some(d) if d != spec.direction => Err(serde::de::Error::custom(format!(
                "metric `{}` is {:?}, not {:?}",
                raw.name, spec.direction, d
            ))),
            _ => Ok(spec),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataModality {
    Tabular,
    TimeSeries,
    Text,
    Image,
}

impl DataModality {
    pub fn as_str(self) -> &'static str {
        match self {
            DataModality::Tabular => "tabular",
            DataModality::TimeSeries => "time_series",
            DataModality::Text => "text",
            DataModality::Image => "image",
        }
    }

    pub fn from_label(label: &str) -> Option<DataModality> {
        let modality = match normalize_label(label).as_str() {
            "tabular" | "table" | "numerical" => DataModality::Tabular,
            "time series" | "timeseries" => DataModality::TimeSeries,
            "text" | "nlp" => DataModality::Text,
            "image" | "images" => DataModality::Image,
            _ => return None,
        };
        Some(modality)
    }
}

impl fmt::Display for DataModality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub title: String,
    pub description: String,
    pub metric: MetricSpec,
    pub modality: DataModality,
    #[serde(default)]
    pub data_files: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leaderboard: Option<Vec<f64>>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.id.trim().is_empty() {
            return Err(Error::Validation("task id is empty".into()));
        }
        if self.description.trim().is_empty() {
            return Err(Error::Validation(format!(
                "task `{}` has an empty description",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub id: String,
    pub source: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Extracted,
    Inferred,
    Refined,
    Manual,
}

/// A three-section high-level solution plan.
///
/// Sections beyond the canonical three are kept in `extra_sections` in
/// document order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionSet {
    pub preprocessing: String,
    pub architecture: String,
    pub training: String,
    #[serde(default)]
    pub extra_sections: IndexMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<u32>,
    pub provenance: Provenance,
}

impl InstructionSet {
    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn with_rank(mut self, rank: Option<u32>) -> Self {
        self.rank = rank;
        self
    }
}

/// Separator between prompt and completion in a fine-tune record.
pub const INST_SEPARATOR: &str = "[/INST]";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetunePair {
    pub prompt: String,
    pub completion: String,
}

impl FinetunePair {
    /// `<prompt>[/INST]<completion>`
    pub fn to_text(&self) -> String {
        format!("{}{}{}", self.prompt, INST_SEPARATOR, self.completion)
    }

    /// Splits a serialized record at its only separator.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut parts = text.split(INST_SEPARATOR);
        match (parts.next(), parts.next(), parts.next()) {
            (Some(prompt), Some(completion), None) => Ok(FinetunePair {
                prompt: prompt.to_string(),
                completion: completion.to_string(),
            }),
            _ => Err(Error::Validation(format!(
                "fine-tune record must contain exactly one `{INST_SEPARATOR}`"
            ))),
        }
    }
}

/// LoRA + 4-bit quantisation + trainer arguments for the instruction model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub lora_dim: u32,
    pub lora_alpha: u32,
    pub lora_dropout: f64,
    pub load_4bit: bool,
    pub compute_dtype: String,
    pub quant_type: String,
    pub nested_quant: bool,
    pub epochs: u32,
    pub fp16: bool,
    pub bf16: bool,
    pub train_batch: u32,
    pub eval_batch: u32,
    pub grad_checkpointing: bool,
    pub max_grad_norm: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub optimizer: String,
    pub lr_schedule: String,
    pub max_steps: i64,
    pub warmup_ratio: f64,
    pub group_by_length: bool,
    pub save_steps: u32,
    pub log_steps: u32,
    pub max_seq_len: Option<u32>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            lora_dim: 64,
            lora_alpha: 16,
            lora_dropout: 0.1,
            load_4bit: true,
            compute_dtype: "float16".into(),
            quant_type: "nf4".into(),
            nested_quant: false,
            epochs: 1,
            fp16: false,
            bf16: false,
            train_batch: 4,
            eval_batch: 4,
            grad_checkpointing: true,
            max_grad_norm: 0.3,
            lr: 2e-4,
            weight_decay: 0.001,
            optimizer: "AdamW".into(),
            lr_schedule: "constant".into(),
            max_steps: -1,
            warmup_ratio: 0.03,
            group_by_length: true,
            save_steps: 500,
            log_steps: 25,
            max_seq_len: None,
        }
    }
}

/// Assigns ranks 1..n by score under `metric.direction`; ties go to the
/// lexicographically smaller id. Output is sorted by rank.
pub fn rank_solutions(
    solutions: Vec<SolutionRecord>,
    metric: MetricSpec,
) -> Result<Vec<SolutionRecord>> {
    if let Some(bad) = solutions.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::Validation(format!(
            "solution `{}` has a non-finite score ({})",
            bad.id, bad.score
        )));
    }
    let mut ranked = solutions;
    ranked.sort_by(|a, b| {
        metric
            .direction
            .compare(a.score, b.score)
            .then_with(|| a.id.cmp(&b.id))
    });
    for (i, s) in ranked.iter_mut().enumerate() {
        s.rank = Some(i as u32 + 1);
    }
    Ok(ranked)
}
