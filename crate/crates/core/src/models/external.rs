//! Out-of-process predictors spoken to over newline-delimited JSON on stdio.
//!
//! Requests, one JSON object per line on the child's stdin:
//!
//! ```text
//! {"cmd":"fit","x":[[..],..],"y":[..],"seed":7}     -> {"ok":true}
//! {"cmd":"predict","x":[[..],..]}                   -> {"ok":true,"yhat":[..]}
//! {"cmd":"shutdown"}                                -> (process exits)
//! ```
//!
//! Any request may instead be answered with `{"ok":false,"error":"..."}`.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{ExternalError, HrtError, Result};
use crate::rng::{Purpose, RngStream};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalConfig {
    /// Program and arguments.
    pub command: Vec<String>,
    /// Per-request response deadline.
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    60_000
}

impl ExternalConfig {
    pub fn new(command: Vec<String>) -> Self {
        ExternalConfig {
            command,
            timeout_ms: default_timeout_ms(),
        }
    }

    /// Splits a shell-like command string on whitespace.
    pub fn from_command_line(cmd: &str) -> Result<Self> {
        let parts: Vec<String> = cmd.split_whitespace().map(str::to_owned).collect();
        let cfg = ExternalConfig::new(parts);
        cfg.validate()?;
        Ok(cfg)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.command.is_empty() || self.command[0].is_empty() {
            return Err(HrtError::invalid("external predictor command is empty"));
        }
        if self.timeout_ms == 0 {
            return Err(HrtError::invalid("external predictor timeout must be positive"));
        }
        Ok(())
    }
}

#[derive(Serialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
enum Request<'a> {
    Fit {
        x: Vec<Vec<f64>>,
        y: &'a [f64],
        seed: u64,
    },
    Predict {
        x: Vec<Vec<f64>>,
    },
    Shutdown,
}

#[derive(Deserialize)]
struct Response {
    ok: bool,
    #[serde(default)]
    yhat: Option<Vec<f64>>,
    #[serde(default)]
    error: Option<String>,
}

struct Session {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
    broken: bool,
}

impl Session {
    fn spawn(cfg: &ExternalConfig) -> Result<Session> {
        let mut child = Command::new(&cfg.command[0])
            .args(&cfg.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| ExternalError::Spawn {
                command: cfg.command.join(" "),
                source,
            })?;
        let stdout = child.stdout.take().expect("piped stdout");
        let stdin = child.stdin.take();
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Ok(Session {
            child,
            stdin,
            lines: rx,
            timeout: Duration::from_millis(cfg.timeout_ms),
            broken: false,
        })
    }

    fn exit_error(&mut self) -> ExternalError {
        // The reader hit EOF; give the process a moment to be reaped.
        for _ in 0..50 {
            if let Ok(Some(status)) = self.child.try_wait() {
                return ExternalError::Exited {
                    status: status.to_string(),
                };
            }
            thread::sleep(Duration::from_millis(10));
        }
        ExternalError::Exited {
            status: "stdout closed".into(),
        }
    }

    fn request(&mut self, req: &Request<'_>) -> Result<Response> {
        if self.broken {
            return Err(ExternalError::Exited {
                status: "session unusable after an earlier failure".into(),
            }
            .into());
        }
        let result = self.exchange(req);
        if result.is_err() {
            self.broken = true;
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
        result
    }

    fn exchange(&mut self, req: &Request<'_>) -> Result<Response> {
        let mut frame = serde_json::to_string(req)?;
        frame.push('\n');
        let stdin = self.stdin.as_mut().expect("stdin open while session live");
        if let Err(e) = stdin.write_all(frame.as_bytes()).and_then(|_| stdin.flush()) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                return Err(self.exit_error().into());
            }
            return Err(ExternalError::Pipe(e).into());
        }
        let line = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(ExternalError::Pipe(e).into()),
            Err(RecvTimeoutError::Timeout) => return Err(ExternalError::Timeout(self.timeout).into()),
            Err(RecvTimeoutError::Disconnected) => return Err(self.exit_error().into()),
        };
        let resp: Response = serde_json::from_str(line.trim())
            .map_err(|e| ExternalError::Malformed(format!("{e}: {}", truncate(&line))))?;
        if !resp.ok {
            return Err(ExternalError::Remote(resp.error.unwrap_or_else(|| "unspecified".into())).into());
        }
        Ok(resp)
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        if !self.broken {
            if let Some(stdin) = self.stdin.as_mut() {
                if let Ok(mut frame) = serde_json::to_string(&Request::Shutdown) {
                    frame.push('\n');
                    let _ = stdin.write_all(frame.as_bytes());
                }
                let _ = stdin.flush();
            }
        }
        self.stdin = None;
        for _ in 0..100 {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(5));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn truncate(s: &str) -> String {
    const MAX: usize = 120;
    if s.len() <= MAX {
        s.to_owned()
    } else {
        let mut end = MAX;
        while !s.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}...", &s[..end])
    }
}

fn rows(x: ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    x.outer_iter().map(|r| r.to_vec()).collect()
}

/// A model trained and queried inside a child process. Requests are serialized.
pub struct ExternalModel {
    session: Mutex<Session>,
    command: String,
}

impl fmt::Debug for ExternalModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExternalModel").field("command", &self.command).finish()
    }
}

impl ExternalModel {
    pub(crate) fn fit(
        cfg: &ExternalConfig,
        x: ArrayView2<'_, f64>,
        y: ArrayView1<'_, f64>,
        rng: &RngStream,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut session = Session::spawn(cfg)?;
        let y = y.to_vec();
        let seed = rng.purpose(Purpose::Fit).derived_seed();
        session.request(&Request::Fit {
            x: rows(x),
            y: &y,
            seed,
        })?;
        Ok(ExternalModel {
            session: Mutex::new(session),
            command: cfg.command.join(" "),
        })
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let mut session = self.session.lock().unwrap_or_else(|p| p.into_inner());
        let resp = session.request(&Request::Predict { x: rows(x) })?;
        let yhat = resp
            .yhat
            .ok_or_else(|| ExternalError::Malformed("predict response lacks `yhat`".into()))?;
        if yhat.len() != x.nrows() {
            return Err(ExternalError::Malformed(format!(
                "expected {} predictions, got {}",
                x.nrows(),
                yhat.len()
            ))
            .into());
        }
        Ok(Array1::from(yhat))
    }
}
