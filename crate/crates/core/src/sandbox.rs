//! Child-process execution of generated programs.
//!
//! Isolation is process-level only: each run gets a fresh workspace directory
//! and its own process group, which is killed on timeout. There is no
//! filesystem or network jail; `env_whitelist` can at least keep credentials
//! out of the child's environment.

use std::io::Read;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TaskSpec;

/// Upper bound on time spent after the deadline (kill, reap, drain pipes).
pub const KILL_GRACE: Duration = Duration::from_secs(5);
const POLL_INTERVAL: Duration = Duration::from_millis(10);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxConfig {
    pub interpreter_command: Vec<String>,
    pub solution_extension: String,
    pub submission_filename: String,
    pub timeout: Duration,
    pub stream_tail_bytes: usize,
    /// When set, the child sees only these variables (plus `PATH`).
    pub env_whitelist: Option<Vec<String>>,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        SandboxConfig {
            interpreter_command: vec!["python3".into()],
            solution_extension: "py".into(),
            submission_filename: "submission.csv".into(),
            timeout: Duration::from_secs(600),
            stream_tail_bytes: 16384,
            env_whitelist: None,
        }
    }
}

impl SandboxConfig {
    pub fn solution_filename(&self) -> String {
        format!(
            "solution.{}",
            self.solution_extension.trim_start_matches('.')
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Success,
    NonzeroExit,
    Timeout,
    SpawnError,
}

impl ExecStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ExecStatus::Success => "success",
            ExecStatus::NonzeroExit => "nonzero_exit",
            ExecStatus::Timeout => "timeout",
            ExecStatus::SpawnError => "spawn_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub status: ExecStatus,
    pub exit_code: Option<i32>,
    /// Wall time in seconds.
    pub duration: f64,
    pub stdout_tail: String,
    pub stderr_tail: String,
    pub submission_path: Option<PathBuf>,
}

impl ExecutionOutcome {
    pub fn is_success(&self) -> bool {
        self.status == ExecStatus::Success
    }

    /// Text handed to the repair step: the stderr tail, or a synthesized
    /// description when the process failed silently.
    pub fn error_text(&self, submission_filename: &str) -> String {
        if !self.stderr_tail.trim().is_empty() {
            return self.stderr_tail.clone();
        }
        match self.status {
            ExecStatus::Timeout => {
                format!("Execution timed out after {:.0} seconds.", self.duration)
            }
            ExecStatus::Success if self.submission_path.is_none() => {
                format!("The program finished but did not write `{submission_filename}`.")
            }
            _ => match self.exit_code {
                Some(code) => format!("The program exited with status {code}."),
                None => "The program was terminated by a signal.".into(),
            },
        }
    }
}

/// Copies the task's data files from `data_root` into a new directory under
/// `base_dir`. Directories are named `workspace-NN` and never reused.
pub fn prepare_workspace(task: &TaskSpec, data_root: &Path, base_dir: &Path) -> Result<PathBuf> {
    let missing: Vec<PathBuf> = task
        .data_files
        .iter()
        .map(|f| data_root.join(f))
        .filter(|p| !p.is_file())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingDataFiles { missing });
    }
    std::fs::create_dir_all(base_dir)
        .map_err(|e| Error::io(format!("creating {}", base_dir.display()), e))?;
    let workspace = fresh_dir(base_dir)?;
    for file in &task.data_files {
        let dest = workspace.join(file);
        if let Some(parent) = dest.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
        }
        std::fs::copy(data_root.join(file), &dest)
            .map_err(|e| Error::io(format!("copying {file} into {}", workspace.display()), e))?;
    }
    Ok(workspace)
}

fn fresh_dir(base_dir: &Path) -> Result<PathBuf> {
    for n in 1.. {
        let candidate = base_dir.join(format!("workspace-{n:02}"));
        match std::fs::create_dir(&candidate) {
            Ok(()) => return Ok(candidate),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(format!("creating {}", candidate.display()), e)),
        }
    }
    unreachable!()
}

/// Rolling buffer holding the last `cap` bytes of a stream.
#[derive(Debug)]
struct Tail {
    cap: usize,
    buf: Vec<u8>,
}

impl Tail {
    fn push(&mut self, chunk: &[u8]) {
        if chunk.len() >= self.cap {
            self.buf.clear();
            self.buf.extend_from_slice(&chunk[chunk.len() - self.cap..]);
            return;
        }
        self.buf.extend_from_slice(chunk);
        if self.buf.len() > self.cap {
            let excess = self.buf.len() - self.cap;
            self.buf.drain(..excess);
        }
    }
}

fn spawn_reader<R: Read + Send + 'static>(mut stream: R, tail: Arc<Mutex<Tail>>) -> JoinHandle<()> {
    std::thread::spawn(move || {
        let mut chunk = [0u8; 8192];
        loop {
            match stream.read(&mut chunk) {
                Ok(0) | Err(_) => break,
                Ok(n) => tail
                    .lock()
                    .unwrap_or_else(|p| p.into_inner())
                    .push(&chunk[..n]),
            }
        }
    })
}

/// Drops a leading partial UTF-8 sequence so the tail decodes cleanly.
fn tail_to_string(bytes: &[u8]) -> String {
    let start = bytes
        .iter()
        .take(3)
        .take_while(|&&b| (b & 0b1100_0000) == 0b1000_0000)
        .count();
    String::from_utf8_lossy(&bytes[start..]).into_owned()
}

fn kill_group(child: &Child) {
    // The child leads its own process group, so this reaches grandchildren too.
    let pgid = child.id() as libc::pid_t;
    unsafe {
        libc::kill(-pgid, libc::SIGKILL);
    }
}

fn wait_until(child: &mut Child, deadline: Instant) -> std::io::Result<Option<ExitStatus>> {
    loop {
        if let Some(status) = child.try_wait()? {
            return Ok(Some(status));
        }
        if Instant::now() >= deadline {
            return Ok(None);
        }
        std::thread::sleep(POLL_INTERVAL);
    }
}

/// Writes `program` to `solution.<ext>` in `workspace` and runs it there.
pub fn execute(
    program: &str,
    workspace: &Path,
    config: &SandboxConfig,
) -> Result<ExecutionOutcome> {
    let Some((interpreter, interpreter_args)) = config.interpreter_command.split_first() else {
        return Err(Error::Precondition("interpreter_command is empty".into()));
    };
    if config.timeout.is_zero() {
        return Err(Error::Precondition("timeout must be positive".into()));
    }
    if config.stream_tail_bytes == 0 {
        return Err(Error::Precondition(
            "stream_tail_bytes must be positive".into(),
        ));
    }
    let solution = config.solution_filename();
    std::fs::write(workspace.join(&solution), program)
        .map_err(|e| Error::io(format!("writing {solution} in {}", workspace.display()), e))?;
    let submission = workspace.join(&config.submission_filename);
    // A stale submission must not count as this run's output.
    let _ = std::fs::remove_file(&submission);

    let mut cmd = Command::new(interpreter);
    cmd.args(interpreter_args)
        .arg(&solution)
        .current_dir(workspace)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    if let Some(whitelist) = &config.env_whitelist {
        cmd.env_clear();
        for key in whitelist.iter().map(String::as_str).chain(["PATH"]) {
            if let Some(value) = std::env::var_os(key) {
                cmd.env(key, value);
            }
        }
    }

    let started = Instant::now();
    let mut child = match cmd.spawn() {
        Ok(child) => child,
        Err(e) => {
            return Ok(ExecutionOutcome {
                status: ExecStatus::SpawnError,
                exit_code: None,
                duration: started.elapsed().as_secs_f64(),
                stdout_tail: String::new(),
                stderr_tail: format!("failed to spawn `{interpreter}`: {e}"),
                submission_path: None,
            });
        }
    };

    let new_tail = || {
        Arc::new(Mutex::new(Tail {
            cap: config.stream_tail_bytes,
            buf: Vec::new(),
        }))
    };
    let (out_tail, err_tail) = (new_tail(), new_tail());
    let readers = [
        spawn_reader(child.stdout.take().expect("piped stdout"), out_tail.clone()),
        spawn_reader(child.stderr.take().expect("piped stderr"), err_tail.clone()),
    ];

    let deadline = started + config.timeout;
    let waited = wait_until(&mut child, deadline).map_err(|e| Error::io("waiting for child", e))?;
    // Also clears any background processes the program left behind, which
    // would otherwise hold the pipes open.
    kill_group(&child);
    let (timed_out, exit) = match waited {
        Some(status) => (false, status),
        None => (
            true,
            child.wait().map_err(|e| Error::io("reaping child", e))?,
        ),
    };
    let duration = started.elapsed();

    let drain_deadline = Instant::now() + KILL_GRACE / 2;
    for reader in readers {
        while !reader.is_finished() && Instant::now() < drain_deadline {
            std::thread::sleep(POLL_INTERVAL);
        }
        if reader.is_finished() {
            let _ = reader.join();
        }
    }
    let snapshot =
        |t: &Arc<Mutex<Tail>>| tail_to_string(&t.lock().unwrap_or_else(|p| p.into_inner()).buf);

    let exit_code = exit.code();
    let status = if timed_out {
        ExecStatus::Timeout
    } else if exit_code == Some(0) {
        ExecStatus::Success
    } else {
        ExecStatus::NonzeroExit
    };
    Ok(ExecutionOutcome {
        status,
        exit_code: if timed_out { None } else { exit_code },
        duration: duration.as_secs_f64(),
        stdout_tail: snapshot(&out_tail),
        stderr_tail: snapshot(&err_tail),
        submission_path: submission.is_file().then_some(submission),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tail_keeps_suffix() {
        let mut t = Tail {
            cap: 4,
            buf: Vec::new(),
        };
        t.push(b"ab");
        t.push(b"cde");
        assert_eq!(t.buf, b"bcde");
        t.push(b"0123456789");
        assert_eq!(t.buf, b"6789");
    }

    #[test]
    fn tail_string_skips_split_codepoint() {
        let s = "é!".as_bytes();
        assert_eq!(tail_to_string(&s[1..]), "!");
        assert_eq!(tail_to_string(s), "é!");
    }

    #[test]
    fn solution_filename_uses_extension() {
        let mut c = SandboxConfig::default();
        assert_eq!(c.solution_filename(), "solution.py");
        c.solution_extension = ".sh".into();
        assert_eq!(c.solution_filename(), "solution.sh");
    }

    #[test]
    fn silent_failures_get_error_text() {
        let outcome = ExecutionOutcome {
            status: ExecStatus::Success,
            exit_code: Some(0),
            duration: 0.1,
            stdout_tail: String::new(),
            stderr_tail: String::new(),
            submission_path: None,
        };
        assert!(outcome
            .error_text("submission.csv")
            .contains("submission.csv"));
    }
}
