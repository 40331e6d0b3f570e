use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, ExitStatus, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use super::{parse_response, Capabilities, Hello, ScoreRequest, ScoreResponse, Scorer, ScorerError};

#[derive(Debug, Clone)]
pub struct BridgeConfig {
    pub batch_timeout: Duration,
    pub handshake_timeout: Duration,
    /// Client-side cap on batch size, applied on top of the endpoint's `max_batch`.
    pub max_batch: Option<usize>,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        BridgeConfig {
            batch_timeout: Duration::from_secs(120),
            handshake_timeout: Duration::from_secs(120),
            max_batch: None,
        }
    }
}

enum Line {
    Text(String),
    Failed(String),
}

struct Session {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<Line>,
    broken: Option<String>,
}

/// A scorer endpoint running as a child process, spoken to over stdin/stdout.
///
/// Batches are exchanged one at a time under a lock, so several decoding
/// threads can share one endpoint.
pub struct ProcessScorer {
    caps: Capabilities,
    config: BridgeConfig,
    session: Mutex<Session>,
}

impl ProcessScorer {
    /// Launches `command` (split with shell quoting rules) and waits for the handshake.
    pub fn spawn(command: &str, config: BridgeConfig) -> Result<Self, ScorerError> {
        let argv = shlex::split(command)
            .filter(|a| !a.is_empty())
            .ok_or_else(|| ScorerError::Startup(format!("cannot parse scorer command {command:?}")))?;
        let mut cmd = Command::new(&argv[0]);
        cmd.args(&argv[1..]);
        Self::spawn_command(cmd, config)
    }

    pub fn spawn_command(mut cmd: Command, config: BridgeConfig) -> Result<Self, ScorerError> {
        let mut child = cmd
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ScorerError::Startup(format!("cannot launch {:?}: {e}", cmd.get_program())))?;
        let stdout = child.stdout.take().expect("piped stdout");
        let stdin = child.stdin.take();

        // A dedicated reader keeps the endpoint's output drained, so large
        // batches cannot deadlock on full pipes.
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let msg = match line {
                    Ok(l) => Line::Text(l),
                    Err(e) => Line::Failed(e.to_string()),
                };
                let failed = matches!(msg, Line::Failed(_));
                if tx.send(msg).is_err() || failed {
                    break;
                }
            }
        });

        let mut session = Session {
            child,
            stdin,
            lines: rx,
            broken: None,
        };
        let first = match session.lines.recv_timeout(config.handshake_timeout) {
            Ok(Line::Text(l)) => l,
            Ok(Line::Failed(e)) => return Err(startup_failure(&mut session, format!("reading handshake: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                return Err(startup_failure(
                    &mut session,
                    format!("no handshake within {:.1}s", config.handshake_timeout.as_secs_f64()),
                ))
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(startup_failure(&mut session, "endpoint exited before its handshake".into()))
            }
        };
        let mut caps = match serde_json::from_str::<Hello>(&first) {
            Ok(h) => h.hello,
            Err(e) => return Err(startup_failure(&mut session, format!("bad handshake line {first:?}: {e}"))),
        };
        if caps.max_batch == 0 {
            return Err(startup_failure(&mut session, "endpoint announced max_batch 0".into()));
        }
        if let Some(cap) = config.max_batch {
            caps.max_batch = caps.max_batch.min(cap.max(1));
        }
        Ok(ProcessScorer {
            caps,
            config,
            session: Mutex::new(session),
        })
    }

    /// Closes the endpoint's input and waits for it to exit.
    pub fn shutdown(mut self) -> Result<ExitStatus, ScorerError> {
        let session = self.session.get_mut().unwrap_or_else(|e| e.into_inner());
        close(session)
    }
}

fn startup_failure(session: &mut Session, message: String) -> ScorerError {
    let _ = session.child.kill();
    let _ = session.child.wait();
    ScorerError::Startup(message)
}

fn close(session: &mut Session) -> Result<ExitStatus, ScorerError> {
    drop(session.stdin.take());
    let deadline = Instant::now() + Duration::from_secs(5);
    loop {
        match session.child.try_wait() {
            Ok(Some(status)) => return Ok(status),
            Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(10)),
            Ok(None) => {
                let _ = session.child.kill();
                let _ = session.child.wait();
                return Err(ScorerError::Transport("endpoint did not exit after its input was closed".into()));
            }
            Err(e) => return Err(ScorerError::Transport(e.to_string())),
        }
    }
}

impl Drop for ProcessScorer {
    fn drop(&mut self) {
        if let Ok(session) = self.session.get_mut() {
            if session.stdin.is_some() {
                let _ = close(session);
            }
        }
    }
}

impl Scorer for ProcessScorer {
    fn capabilities(&self) -> &Capabilities {
        &self.caps
    }

    fn exchange(&self, batch_index: usize, batch: &[ScoreRequest]) -> Result<Vec<ScoreResponse>, ScorerError> {
        let mut session = self.session.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(reason) = &session.broken {
            return Err(ScorerError::Transport(format!("endpoint unusable after earlier failure: {reason}")));
        }
        let result = exchange_locked(&mut session, batch_index, batch, self.config.batch_timeout);
        if let Err(e) = &result {
            // The stream position is unknown after any failure.
            session.broken = Some(e.to_string());
            let _ = session.child.kill();
        }
        result
    }
}

fn exchange_locked(
    session: &mut Session,
    batch_index: usize,
    batch: &[ScoreRequest],
    timeout: Duration,
) -> Result<Vec<ScoreResponse>, ScorerError> {
    let stdin = session
        .stdin
        .as_mut()
        .ok_or_else(|| ScorerError::Transport("endpoint input already closed".into()))?;
    let mut payload = String::new();
    for r in batch {
        payload.push_str(&serde_json::to_string(r).expect("request serializes"));
        payload.push('\n');
    }
    stdin
        .write_all(payload.as_bytes())
        .and_then(|_| stdin.flush())
        .map_err(|e| ScorerError::Transport(format!("batch {batch_index}: writing requests: {e}")))?;

    let deadline = Instant::now() + timeout;
    let mut responses = Vec::with_capacity(batch.len());
    while responses.len() < batch.len() {
        let remaining = deadline.saturating_duration_since(Instant::now());
        match session.lines.recv_timeout(remaining) {
            Ok(Line::Text(line)) => {
                if line.trim().is_empty() {
                    continue;
                }
                responses.push(parse_response(&line)?);
            }
            Ok(Line::Failed(e)) => {
                return Err(ScorerError::Transport(format!("batch {batch_index}: reading responses: {e}")))
            }
            Err(RecvTimeoutError::Timeout) => {
                return Err(ScorerError::Timeout {
                    batch: batch_index,
                    seconds: timeout.as_secs_f64(),
                })
            }
            Err(RecvTimeoutError::Disconnected) => {
                let status = session
                    .child
                    .wait()
                    .map(|s| s.to_string())
                    .unwrap_or_else(|e| e.to_string());
                return Err(ScorerError::Transport(format!(
                    "batch {batch_index}: endpoint closed its output after {} of {} responses ({status})",
                    responses.len(),
                    batch.len()
                )));
            }
        }
    }
    Ok(responses)
}
