use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::percentile;
use crate::model::{MetricName, Provenance, TaskSpec};
use crate::sandbox::ExecStatus;

/// Everything a finished (or failed) run knows about itself.
#[derive(Debug, Clone, Default)]
pub struct RunArtifacts {
    pub provenance: Option<Provenance>,
    pub fix_attempts: u32,
    /// `None` when the run failed before anything was executed.
    pub status: Option<ExecStatus>,
    pub submission_written: bool,
    pub score: Option<f64>,
    pub wall_times: IndexMap<String, f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub task_id: String,
    pub provenance: Option<Provenance>,
    pub fix_attempts: u32,
    pub status: Option<ExecStatus>,
    pub succeeded: bool,
    pub metric: MetricName,
    pub score: Option<f64>,
    pub percentile: Option<u32>,
    /// Seconds per phase.
    pub wall_times: IndexMap<String, f64>,
    pub error: Option<String>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn summary(&self) -> String {
        let status = self.status.map_or("not_executed", ExecStatus::as_str);
        let mut line = format!(
            "{} {}: status={status} fix_attempts={} metric={}",
            self.task_id,
            if self.succeeded { "ok" } else { "FAILED" },
            self.fix_attempts,
            self.metric
        );
        if let Some(score) = self.score {
            line.push_str(&format!(" score={score:.6}"));
        }
        if let Some(p) = self.percentile {
            line.push_str(&format!(" percentile={p}"));
        }
        if let Some(err) = &self.error {
            line.push_str(&format!(
                " error={:?}",
                err.lines().next().unwrap_or_default()
            ));
        }
        line
    }
}

/// A score survives only on a successful execution; the percentile needs a
/// score and a leaderboard.
pub fn build_report(task: &TaskSpec, run: &RunArtifacts) -> RunReport {
    let succeeded =
        run.status == Some(ExecStatus::Success) && run.submission_written && run.error.is_none();
    let score = run
        .score
        .filter(|_| run.status == Some(ExecStatus::Success));
    let percentile = match (score, task.leaderboard.as_deref()) {
        (Some(s), Some(lb)) => percentile(s, lb, task.metric.direction).ok(),
        _ => None,
    };
    RunReport {
        task_id: task.id.clone(),
        provenance: run.provenance,
        fix_attempts: run.fix_attempts,
        status: run.status,
        succeeded,
        metric: task.metric.name,
        score,
        percentile,
        wall_times: run.wall_times.clone(),
        error: run.error.clone(),
    }
}
