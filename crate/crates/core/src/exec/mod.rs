//! Execution of extracted candidate programs.
//!
//! In dynamic mode each request spawns one runner process that receives the
//! program on stdin and reports back through a line-oriented envelope at the
//! end of its stdout:
//!
//! ```text
//! ORR1_SOLVER_INVOKED 0|1
//! ORR1_OBJECTIVE <float> | ORR1_NO_SOLUTION | ORR1_ERROR <detail>
//! ```
//!
//! Static mode never spawns anything; it performs a parse-level plausibility
//! check in process and reports no objective value.

mod envelope;
mod process;
mod static_check;

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use envelope::{parse_envelope, Envelope, EnvelopeResult};
pub use process::{execute, execute_batch};
pub use static_check::{static_check, StaticReport, SOLVER_MODULE};

pub const DEFAULT_TIME_LIMIT: Duration = Duration::from_secs(30);
pub const DEFAULT_MEMORY_LIMIT: u64 = 1 << 30;

/// Bytes of stdout kept on an outcome for diagnostics.
pub const STDOUT_TAIL_BYTES: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    #[default]
    Dynamic,
    Static,
}

impl ExecMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExecMode::Dynamic => "dynamic",
            ExecMode::Static => "static",
        }
    }
}

impl std::str::FromStr for ExecMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "dynamic" => Ok(ExecMode::Dynamic),
            "static" => Ok(ExecMode::Static),
            other => Err(format!("unknown mode '{other}', expected dynamic|static")),
        }
    }
}

/// How to launch the sandbox runner: `program args... --time-limit-s T --memory-limit-mb M --mode m`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunnerCommand {
    pub program: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
    /// Environment variables passed through to the runner. Everything else is cleared.
    #[serde(default = "default_env_allow")]
    pub env_allow: Vec<String>,
}

fn default_env_allow() -> Vec<String> {
    ["PATH", "LANG", "LC_ALL", "PYTHONPATH", "COPT_HOME", "COPT_LICENSE_DIR"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

impl RunnerCommand {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        Self {
            program: program.into(),
            args: Vec::new(),
            env_allow: default_env_allow(),
        }
    }

    pub fn with_args<I, S>(mut self, args: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.args = args.into_iter().map(Into::into).collect();
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecRequest {
    pub problem_id: String,
    pub slot: usize,
    pub source: String,
    pub time_limit: Duration,
    pub memory_limit: u64,
    pub mode: ExecMode,
}

impl ExecRequest {
    pub fn new(problem_id: impl Into<String>, slot: usize, source: impl Into<String>) -> Self {
        Self {
            problem_id: problem_id.into(),
            slot,
            source: source.into(),
            time_limit: DEFAULT_TIME_LIMIT,
            memory_limit: DEFAULT_MEMORY_LIMIT,
            mode: ExecMode::Dynamic,
        }
    }

    pub fn with_limits(mut self, time_limit: Duration, memory_limit: u64) -> Self {
        self.time_limit = time_limit;
        self.memory_limit = memory_limit;
        self
    }

    pub fn with_mode(mut self, mode: ExecMode) -> Self {
        self.mode = mode;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OutcomeKind {
    Value(f64),
    NoSolution,
    Error(String),
    Timeout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecOutcome {
    pub kind: OutcomeKind,
    pub solver_invoked: bool,
    pub stdout_tail: String,
    pub duration: Duration,
}

impl ExecOutcome {
    pub fn new(kind: OutcomeKind, solver_invoked: bool) -> Self {
        Self {
            kind,
            solver_invoked,
            stdout_tail: String::new(),
            duration: Duration::ZERO,
        }
    }

    pub fn error(detail: impl Into<String>) -> Self {
        Self::new(OutcomeKind::Error(detail.into()), false)
    }

    /// The objective value, present only for a normal numeric result.
    pub fn value(&self) -> Option<f64> {
        match self.kind {
            OutcomeKind::Value(v) if v.is_finite() => Some(v),
            _ => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            OutcomeKind::Value(_) => "value",
            OutcomeKind::NoSolution => "no_solution",
            OutcomeKind::Error(_) => "error",
            OutcomeKind::Timeout => "timeout",
        }
    }
}

/// Serialized form of an [`ExecOutcome`] (diagnostic fields dropped).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub kind: String,
    pub value: Option<f64>,
    pub solver_invoked: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl From<&ExecOutcome> for OutcomeRecord {
    fn from(outcome: &ExecOutcome) -> Self {
        let detail = match &outcome.kind {
            OutcomeKind::Error(d) => Some(d.clone()),
            _ => None,
        };
        Self {
            kind: outcome.kind_name().to_string(),
            value: outcome.value(),
            solver_invoked: outcome.solver_invoked,
            detail,
        }
    }
}

impl OutcomeRecord {
    pub fn to_outcome(&self) -> std::result::Result<ExecOutcome, String> {
        let kind = match self.kind.as_str() {
            "value" => match self.value {
                Some(v) if v.is_finite() => OutcomeKind::Value(v),
                Some(v) => return Err(format!("field 'value': not finite ({v})")),
                None => return Err("field 'value': required when kind is \"value\"".into()),
            },
            "no_solution" => OutcomeKind::NoSolution,
            "error" => OutcomeKind::Error(self.detail.clone().unwrap_or_default()),
            "timeout" => OutcomeKind::Timeout,
            other => {
                return Err(format!(
                    "field 'kind': unknown value \"{other}\", expected value|no_solution|error|timeout"
                ))
            }
        };
        Ok(ExecOutcome::new(kind, self.solver_invoked))
    }
}

/// One line of an exec JSONL artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecRecord {
    pub problem_id: String,
    pub slot: usize,
    pub kind: String,
    pub value: Option<f64>,
    pub solver_invoked: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl ExecRecord {
    pub fn from_outcome(problem_id: impl Into<String>, slot: usize, outcome: &ExecOutcome) -> Self {
        let r = OutcomeRecord::from(outcome);
        Self {
            problem_id: problem_id.into(),
            slot,
            kind: r.kind,
            value: r.value,
            solver_invoked: r.solver_invoked,
            detail: r.detail,
        }
    }

    pub fn outcome_record(&self) -> OutcomeRecord {
        OutcomeRecord {
            kind: self.kind.clone(),
            value: self.value,
            solver_invoked: self.solver_invoked,
            detail: self.detail.clone(),
        }
    }

    pub fn to_outcome(&self) -> std::result::Result<ExecOutcome, String> {
        self.outcome_record().to_outcome()
    }
}
