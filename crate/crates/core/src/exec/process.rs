use std::io::{ErrorKind, Read, Write};
use std::os::unix::process::CommandExt;
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use super::envelope::{parse_envelope, EnvelopeResult};
use super::static_check::static_check;
use super::{ExecMode, ExecOutcome, ExecRequest, OutcomeKind, RunnerCommand, STDOUT_TAIL_BYTES};
use crate::error::{Error, Result};

const POLL_INTERVAL: Duration = Duration::from_millis(5);
/// Only the end of stdout matters for the envelope.
const STDOUT_KEEP_BYTES: usize = 64 * 1024;
const STDERR_KEEP_BYTES: usize = 4 * 1024;

/// Executes one candidate program.
///
/// Per-candidate failures (crash, bad envelope, timeout) come back as an
/// [`OutcomeKind`]; `Err` is reserved for problems that would affect every
/// candidate, like a missing runner.
pub fn execute(req: &ExecRequest, runner: Option<&RunnerCommand>) -> Result<ExecOutcome> {
    if req.time_limit.is_zero() {
        return Err(Error::invalid("time limit must be positive"));
    }
    if req.memory_limit == 0 {
        return Err(Error::invalid("memory limit must be positive"));
    }
    if req.source.trim().is_empty() {
        return Ok(ExecOutcome::error("empty source"));
    }
    match req.mode {
        ExecMode::Static => {
            let started = Instant::now();
            let report = static_check(&req.source);
            let mut outcome = ExecOutcome::new(OutcomeKind::NoSolution, report.solver_invoked);
            outcome.stdout_tail = report.reason.unwrap_or_default();
            outcome.duration = started.elapsed();
            Ok(outcome)
        }
        ExecMode::Dynamic => {
            let runner = runner.ok_or_else(|| {
                Error::Config("dynamic execution requires a runner command".into())
            })?;
            run_process(req, runner)
        }
    }
}

/// Runs `reqs` on a pool of `parallelism` workers; `out[i]` belongs to `reqs[i]`.
pub fn execute_batch(
    reqs: &[ExecRequest],
    parallelism: usize,
    runner: Option<&RunnerCommand>,
) -> Result<Vec<ExecOutcome>> {
    if parallelism == 0 {
        return Err(Error::invalid("parallelism must be at least 1"));
    }
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let results: Mutex<Vec<Option<Result<ExecOutcome>>>> =
        Mutex::new((0..reqs.len()).map(|_| None).collect());

    thread::scope(|scope| {
        for _ in 0..parallelism.min(reqs.len()) {
            scope.spawn(|| loop {
                if abort.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(req) = reqs.get(i) else { break };
                let result = execute(req, runner);
                if result.is_err() {
                    abort.store(true, Ordering::Relaxed);
                }
                results.lock().expect("results lock")[i] = Some(result);
            });
        }
    });

    let results = results.into_inner().expect("results lock");
    let mut outcomes = Vec::with_capacity(reqs.len());
    for slot in results {
        match slot {
            Some(Ok(outcome)) => outcomes.push(outcome),
            Some(Err(e)) => return Err(e),
            // skipped after an abort; the error is reported from its own slot
            None => {}
        }
    }
    if outcomes.len() != reqs.len() {
        return Err(Error::Config("batch aborted".into()));
    }
    Ok(outcomes)
}

fn resolve_program(runner: &RunnerCommand) -> Result<PathBuf> {
    let program = &runner.program;
    if program.components().count() > 1 || program.is_absolute() {
        program.canonicalize().map_err(|e| {
            Error::Config(format!("runner '{}' not usable: {e}", program.display()))
        })
    } else {
        Ok(program.clone())
    }
}

fn run_process(req: &ExecRequest, runner: &RunnerCommand) -> Result<ExecOutcome> {
    let program = resolve_program(runner)?;
    let workdir = tempfile::Builder::new().prefix("optreward-run-").tempdir()?;

    let mut cmd = Command::new(&program);
    cmd.args(&runner.args)
        .arg("--time-limit-s")
        .arg(format!("{}", req.time_limit.as_secs_f64()))
        .arg("--memory-limit-mb")
        .arg(req.memory_limit.div_ceil(1 << 20).to_string())
        .arg("--mode")
        .arg(req.mode.as_str())
        .current_dir(workdir.path())
        .env_clear()
        .env("HOME", workdir.path())
        .env("TMPDIR", workdir.path())
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    for key in &runner.env_allow {
        if let Some(value) = std::env::var_os(key) {
            cmd.env(key, value);
        }
    }

    let memory_limit = req.memory_limit;
    // SAFETY: only async-signal-safe libc calls between fork and exec.
    unsafe {
        cmd.pre_exec(move || {
            if libc::setpgid(0, 0) != 0 {
                return Err(std::io::Error::last_os_error());
            }
            let limit = libc::rlimit {
                rlim_cur: memory_limit as libc::rlim_t,
                rlim_max: memory_limit as libc::rlim_t,
            };
            libc::setrlimit(libc::RLIMIT_AS, &limit);
            let no_core = libc::rlimit {
                rlim_cur: 0,
                rlim_max: 0,
            };
            libc::setrlimit(libc::RLIMIT_CORE, &no_core);
            // best effort: a private network namespace has no interfaces up
            libc::unshare(libc::CLONE_NEWNET);
            Ok(())
        });
    }

    let started = Instant::now();
    let mut child = match cmd.spawn() {
        Ok(child) => child,
        Err(e) if matches!(e.kind(), ErrorKind::NotFound | ErrorKind::PermissionDenied) => {
            return Err(Error::Config(format!(
                "runner '{}' could not be started: {e}",
                runner.program.display()
            )))
        }
        Err(e) => return Err(e.into()),
    };
    let pgid = child.id() as libc::pid_t;

    let stdin = child.stdin.take().expect("piped stdin");
    let source = req.source.clone();
    let writer = thread::spawn(move || {
        let mut stdin = stdin;
        // the runner may exit without reading everything
        let _ = stdin.write_all(source.as_bytes());
    });
    let stdout = child.stdout.take().expect("piped stdout");
    let stderr = child.stderr.take().expect("piped stderr");
    let out_reader = thread::spawn(move || read_tail(stdout, STDOUT_KEEP_BYTES));
    let err_reader = thread::spawn(move || read_tail(stderr, STDERR_KEEP_BYTES));

    let timed_out = wait_with_deadline(&mut child, started + req.time_limit)?;
    // take down anything the script left running, which also closes the pipes
    kill_group(pgid);
    if timed_out {
        let _ = child.wait();
    }
    let duration = started.elapsed();

    let _ = writer.join();
    let stdout = out_reader.join().unwrap_or_default();
    let _stderr = err_reader.join().unwrap_or_default();
    let stdout = String::from_utf8_lossy(&stdout).into_owned();
    let stdout_tail = tail_str(&stdout, STDOUT_TAIL_BYTES).to_string();

    if timed_out {
        return Ok(ExecOutcome {
            kind: OutcomeKind::Timeout,
            solver_invoked: false,
            stdout_tail,
            duration,
        });
    }

    let (kind, solver_invoked) = match parse_envelope(&stdout) {
        Some(env) => {
            let kind = match env.result {
                EnvelopeResult::Objective(v) => OutcomeKind::Value(v),
                EnvelopeResult::NoSolution => OutcomeKind::NoSolution,
                EnvelopeResult::Error(d) => OutcomeKind::Error(d),
            };
            (kind, env.solver_invoked)
        }
        None => (OutcomeKind::Error("bad envelope".into()), false),
    };
    Ok(ExecOutcome {
        kind,
        solver_invoked,
        stdout_tail,
        duration,
    })
}

/// Returns `true` if the deadline passed before the child exited.
fn wait_with_deadline(child: &mut Child, deadline: Instant) -> Result<bool> {
    loop {
        if child.try_wait()?.is_some() {
            return Ok(false);
        }
        let now = Instant::now();
        if now >= deadline {
            return Ok(true);
        }
        thread::sleep(POLL_INTERVAL.min(deadline - now));
    }
}

fn kill_group(pgid: libc::pid_t) {
    // SAFETY: plain syscall; ESRCH when the group is already gone is fine.
    unsafe {
        libc::kill(-pgid, libc::SIGKILL);
    }
}

fn read_tail<R: Read>(mut reader: R, keep: usize) -> Vec<u8> {
    let mut kept: Vec<u8> = Vec::new();
    let mut buf = [0u8; 8192];
    loop {
        match reader.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => {
                kept.extend_from_slice(&buf[..n]);
                if kept.len() > 2 * keep {
                    kept.drain(..kept.len() - keep);
                }
            }
            Err(e) if e.kind() == ErrorKind::Interrupted => continue,
            Err(_) => break,
        }
    }
    if kept.len() > keep {
        kept.drain(..kept.len() - keep);
    }
    kept
}

fn tail_str(s: &str, max_bytes: usize) -> &str {
    if s.len() <= max_bytes {
        return s;
    }
    let mut start = s.len() - max_bytes;
    while !s.is_char_boundary(start) {
        start += 1;
    }
    &s[start..]
}
