//! Executor wire protocol.
//!
//! Each record is a 4-byte big-endian length followed by that many bytes of
//! UTF-8 canonical-form text. A request is an [`ExecutionBundle`], a
//! response a [`TestRunReport`]. One request is in flight per harness
//! process; the harness exits nonzero only on a protocol violation.

use std::io::{self, Read, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use super::{ExecutionBundle, ExecutorError, ExecutorPort, TestRunReport};
use crate::value::to_canonical_string;

/// Upper bound on a single record, requests included.
pub const MAX_FRAME_BYTES: u32 = 64 << 20;

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("record of {0} bytes exceeds the frame limit")]
    TooLarge(u32),
    #[error("malformed record: {0}")]
    Malformed(String),
}

pub fn write_frame(w: &mut impl Write, payload: &str) -> Result<(), WireError> {
    let len = u32::try_from(payload.len()).map_err(|_| WireError::TooLarge(u32::MAX))?;
    if len > MAX_FRAME_BYTES {
        return Err(WireError::TooLarge(len));
    }
    w.write_all(&len.to_be_bytes())?;
    w.write_all(payload.as_bytes())?;
    w.flush()?;
    Ok(())
}

/// Reads one record. `Ok(None)` on a clean end of stream before any header
/// byte.
pub fn read_frame(r: &mut impl Read) -> Result<Option<String>, WireError> {
    let mut header = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match r.read(&mut header[filled..])? {
            0 if filled == 0 => return Ok(None),
            0 => return Err(WireError::Malformed("truncated length header".into())),
            n => filled += n,
        }
    }
    let len = u32::from_be_bytes(header);
    if len > MAX_FRAME_BYTES {
        return Err(WireError::TooLarge(len));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf).map_err(|e| WireError::Malformed(format!("truncated record: {e}")))?;
    String::from_utf8(buf).map(Some).map_err(|e| WireError::Malformed(e.to_string()))
}

/// Harness side of the protocol: answers bundles until end of input.
pub fn serve(input: &mut impl Read, output: &mut impl Write, executor: &dyn ExecutorPort) -> Result<(), WireError> {
    while let Some(text) = read_frame(input)? {
        let bundle: ExecutionBundle =
            serde_json::from_str(&text).map_err(|e| WireError::Malformed(e.to_string()))?;
        let report = match executor.execute(&bundle) {
            Ok(report) => report,
            Err(e) => TestRunReport {
                bundle_id: bundle.bundle_id.clone(),
                per_test: bundle
                    .tests
                    .iter()
                    .map(|t| super::TestResult::errored(t.id.clone(), e.to_string()))
                    .collect(),
                persistence_final_state: vec![],
            },
        };
        let text = to_canonical_string(&report).map_err(|e| WireError::Malformed(e.to_string()))?;
        write_frame(output, &text)?;
    }
    Ok(())
}

/// Runs each bundle in a fresh harness process and kills it if the bundle's
/// wall-time limit passes.
#[derive(Debug, Clone)]
pub struct SubprocessExecutor {
    program: String,
    args: Vec<String>,
    /// Added to the bundle limit to cover process start-up.
    grace: Duration,
}

impl SubprocessExecutor {
    pub fn new(program: impl Into<String>, args: impl IntoIterator<Item = impl Into<String>>) -> Self {
        SubprocessExecutor {
            program: program.into(),
            args: args.into_iter().map(Into::into).collect(),
            grace: Duration::from_millis(500),
        }
    }

    pub fn with_grace(mut self, grace: Duration) -> Self {
        self.grace = grace;
        self
    }

    fn spawn(&self) -> Result<Child, ExecutorError> {
        Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| ExecutorError::Unreachable(format!("{}: {e}", self.program)))
    }
}

impl ExecutorPort for SubprocessExecutor {
    fn execute(&self, bundle: &ExecutionBundle) -> Result<TestRunReport, ExecutorError> {
        let request = to_canonical_string(bundle).map_err(|e| ExecutorError::Protocol(e.to_string()))?;
        let mut child = self.spawn()?;
        let mut stdin = child.stdin.take().ok_or_else(|| ExecutorError::Unreachable("no stdin".into()))?;
        let mut stdout = child.stdout.take().ok_or_else(|| ExecutorError::Unreachable("no stdout".into()))?;
        let max_output = bundle.limits.max_output_bytes;

        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let result = (|| {
                write_frame(&mut stdin, &request)?;
                // Closing stdin tells the harness this is the only request.
                drop(stdin);
                read_frame(&mut stdout)
            })();
            let _ = tx.send(result);
        });

        let limit = Duration::from_millis(bundle.limits.wall_time_ms) + self.grace;
        let outcome = rx.recv_timeout(limit);
        let _ = child.kill();
        let _ = child.wait();
        let text = match outcome {
            Err(_) => return Err(ExecutorError::Timeout(bundle.limits.wall_time_ms)),
            Ok(Err(e)) => return Err(ExecutorError::Protocol(e.to_string())),
            Ok(Ok(None)) => return Err(ExecutorError::Protocol("harness closed without a response".into())),
            Ok(Ok(Some(text))) => text,
        };
        if text.len() as u64 > max_output {
            return Err(ExecutorError::Protocol(format!("response of {} bytes exceeds output limit", text.len())));
        }
        let report: TestRunReport =
            serde_json::from_str(&text).map_err(|e| ExecutorError::Protocol(e.to_string()))?;
        if report.bundle_id != bundle.bundle_id {
            return Err(ExecutorError::Protocol(format!(
                "response for bundle {} while {} was in flight",
                report.bundle_id, bundle.bundle_id
            )));
        }
        Ok(report)
    }
}
