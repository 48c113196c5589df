//! External harness: one spawned process per evaluation.
//!
//! The request document is written to the child's stdin as JSON and a single
//! JSON reply is read from its stdout.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{EvalContext, EvalError, EvaluationResult, Evaluator, TokenCount};
use crate::configuration::TeamAssignment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExternalSettings {
    /// Shell command line, run through `sh -c`.
    pub command: String,
    pub timeout_seconds: f64,
    /// Extra attempts after the first failure.
    pub retries: u32,
}

impl Default for ExternalSettings {
    fn default() -> Self {
        ExternalSettings {
            command: String::new(),
            timeout_seconds: 3600.0,
            retries: 0,
        }
    }
}

impl ExternalSettings {
    pub fn new(command: impl Into<String>) -> Self {
        ExternalSettings {
            command: command.into(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRequest {
    pub run_id: String,
    pub iteration: usize,
    pub assignment: IndexMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReply {
    pub accuracy: f64,
    pub cost_usd: f64,
    #[serde(default)]
    pub tokens: Option<BTreeMap<String, TokenCount>>,
}

#[derive(Debug, Clone)]
pub struct ExternalEvaluator {
    settings: ExternalSettings,
}

impl ExternalEvaluator {
    pub fn new(settings: ExternalSettings) -> Self {
        ExternalEvaluator { settings }
    }

    pub fn settings(&self) -> &ExternalSettings {
        &self.settings
    }

    pub fn call(&self, request: &EvaluationRequest) -> Result<EvaluationResult, EvalError> {
        let mut attempt = 0;
        loop {
            match self.call_once(request) {
                Ok(result) => return Ok(result),
                Err(e) if attempt >= self.settings.retries => return Err(e),
                Err(_) => attempt += 1,
            }
        }
    }

    fn call_once(&self, request: &EvaluationRequest) -> Result<EvaluationResult, EvalError> {
        let started = Instant::now();
        let mut command = Command::new("sh");
        command
            .arg("-c")
            .arg(&self.settings.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        #[cfg(unix)]
        std::os::unix::process::CommandExt::process_group(&mut command, 0);
        let mut child = command.spawn()?;

        let mut payload = serde_json::to_vec(request).expect("request serializes");
        payload.push(b'\n');
        if let Some(mut stdin) = child.stdin.take() {
            // A harness that ignores its input may close stdin early.
            let _ = stdin.write_all(&payload);
        }
        let stdout = drain(child.stdout.take());
        let stderr = drain(child.stderr.take());

        let timeout = Duration::from_secs_f64(self.settings.timeout_seconds.max(0.0));
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break status;
            }
            if started.elapsed() >= timeout {
                kill_tree(&mut child);
                return Err(EvalError::Timeout {
                    seconds: self.settings.timeout_seconds,
                });
            }
            thread::sleep(Duration::from_millis(5));
        };
        let stdout = stdout.join().unwrap_or_default();
        let stderr = stderr.join().unwrap_or_default();
        if !status.success() {
            return Err(EvalError::ExitStatus {
                status: status.to_string(),
                stderr: String::from_utf8_lossy(&stderr).trim().to_string(),
            });
        }
        let mut result = parse_reply(&String::from_utf8_lossy(&stdout))?;
        result.wall_seconds = Some(started.elapsed().as_secs_f64());
        Ok(result)
    }
}

fn drain<R: Read + Send + 'static>(pipe: Option<R>) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(mut p) = pipe {
            let _ = p.read_to_end(&mut buf);
        }
        buf
    })
}

fn kill_tree(child: &mut Child) {
    #[cfg(unix)]
    {
        let _ = Command::new("kill")
            .args(["-KILL", "--"])
            .arg(format!("-{}", child.id()))
            .stderr(Stdio::null())
            .status();
    }
    let _ = child.kill();
    let _ = child.wait();
}

/// Parses and validates a reply document.
pub fn parse_reply(payload: &str) -> Result<EvaluationResult, EvalError> {
    let reply: EvaluationReply =
        serde_json::from_str(payload.trim()).map_err(|e| EvalError::MalformedReply {
            reason: e.to_string(),
            payload: payload.to_string(),
        })?;
    let result = EvaluationResult {
        accuracy: reply.accuracy,
        cost_usd: reply.cost_usd,
        tokens: reply.tokens,
        wall_seconds: None,
    };
    result.validate().map_err(|e| EvalError::MalformedReply {
        reason: e.to_string(),
        payload: payload.to_string(),
    })?;
    Ok(result)
}

impl Evaluator for ExternalEvaluator {
    fn evaluate(
        &mut self,
        ctx: &EvalContext<'_>,
        _team: &TeamAssignment,
        _rng: &mut dyn RngCore,
    ) -> Result<EvaluationResult, EvalError> {
        self.call(&EvaluationRequest {
            run_id: ctx.run_id.to_string(),
            iteration: ctx.iteration,
            assignment: ctx.assignment.clone(),
        })
    }
}
