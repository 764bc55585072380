//! Shared plumbing for out-of-process generator backends.
//!
//! Real text-to-text and text-to-image models run in a separate process and
//! talk newline-delimited JSON over stdio: one request object per line, one
//! response object per line. A response of the form `{"error": "..."}`
//! reports a backend-side failure.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BackendError {
    /// The backend could not be reached. Usually transient.
    #[error("backend `{backend}` unavailable: {detail} (check the backend command and retry)")]
    Unavailable { backend: String, detail: String },
    /// The backend answered with something that does not follow the wire format.
    #[error("backend `{backend}` protocol error: {detail}")]
    Protocol { backend: String, detail: String },
    /// The backend reported a failure for this request.
    #[error("backend `{backend}` failed: {detail}")]
    Failed { backend: String, detail: String },
}

impl BackendError {
    /// True for errors caused by the transport rather than the request.
    pub fn is_transport(&self) -> bool {
        matches!(self, BackendError::Unavailable { .. } | BackendError::Protocol { .. })
    }
}

/// A request/response channel over any line-oriented byte stream.
pub struct LineChannel<W, R> {
    writer: W,
    reader: R,
    backend: String,
}

impl<W: Write, R: BufRead> LineChannel<W, R> {
    pub fn new(backend: impl Into<String>, writer: W, reader: R) -> Self {
        Self {
            writer,
            reader,
            backend: backend.into(),
        }
    }

    /// Writes one record without waiting for an answer.
    pub fn send<T: Serialize>(&mut self, record: &T) -> Result<(), BackendError> {
        let mut line = serde_json::to_vec(record).map_err(|e| self.protocol(e))?;
        line.push(b'\n');
        self.writer
            .write_all(&line)
            .and_then(|_| self.writer.flush())
            .map_err(|e| BackendError::Unavailable {
                backend: self.backend.clone(),
                detail: format!("write failed: {e}"),
            })
    }

    /// Reads one response record.
    pub fn receive<T: DeserializeOwned>(&mut self) -> Result<T, BackendError> {
        let mut line = String::new();
        let n = self
            .reader
            .read_line(&mut line)
            .map_err(|e| BackendError::Unavailable {
                backend: self.backend.clone(),
                detail: format!("read failed: {e}"),
            })?;
        if n == 0 {
            return Err(BackendError::Unavailable {
                backend: self.backend.clone(),
                detail: "backend closed its output".into(),
            });
        }
        let value: serde_json::Value =
            serde_json::from_str(line.trim_end()).map_err(|e| self.protocol(e))?;
        if let Some(err) = value.get("error") {
            return Err(BackendError::Failed {
                backend: self.backend.clone(),
                detail: err.as_str().map(str::to_owned).unwrap_or_else(|| err.to_string()),
            });
        }
        serde_json::from_value(value).map_err(|e| self.protocol(e))
    }

    pub fn call<Q: Serialize, A: DeserializeOwned>(&mut self, request: &Q) -> Result<A, BackendError> {
        self.send(request)?;
        self.receive()
    }

    fn protocol(&self, e: impl std::fmt::Display) -> BackendError {
        BackendError::Protocol {
            backend: self.backend.clone(),
            detail: e.to_string(),
        }
    }
}

/// A backend subprocess speaking the line protocol on its stdin/stdout.
///
/// Calls are serialized through a mutex, so a process backend has a
/// parallelism of one.
pub struct ProcessChannel {
    child: Child,
    channel: Mutex<LineChannel<ChildStdin, BufReader<ChildStdout>>>,
}

impl ProcessChannel {
    pub fn spawn(backend: &str, command: &[String]) -> Result<Self, BackendError> {
        let (program, args) = command.split_first().ok_or_else(|| BackendError::Unavailable {
            backend: backend.to_owned(),
            detail: "empty backend command".into(),
        })?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BackendError::Unavailable {
                backend: backend.to_owned(),
                detail: format!("cannot start `{program}`: {e}"),
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Ok(Self {
            child,
            channel: Mutex::new(LineChannel::new(backend, stdin, BufReader::new(stdout))),
        })
    }

    pub fn with<T>(
        &self,
        f: impl FnOnce(&mut LineChannel<ChildStdin, BufReader<ChildStdout>>) -> Result<T, BackendError>,
    ) -> Result<T, BackendError> {
        let mut guard = self.channel.lock().unwrap_or_else(|p| p.into_inner());
        f(&mut guard)
    }
}

impl Drop for ProcessChannel {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
