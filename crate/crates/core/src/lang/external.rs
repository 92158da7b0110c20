//! Compilability via an external program: text on stdin, verdict in the exit status.

use std::io::Write;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use super::parser::{CompileResult, ErrorKind};
use super::vocab::{TokenSeq, Vocab};

#[derive(Debug, thiserror::Error)]
pub enum ExternalError {
    #[error("empty external command")]
    EmptyCommand,
    #[error("failed to spawn {program:?}: {source}")]
    SpawnFailure {
        program: String,
        #[source]
        source: std::io::Error,
    },
    #[error("external checker exceeded {0} ms")]
    Timeout(u64),
    #[error("waiting on external checker: {0}")]
    Wait(#[source] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalChecker {
    /// Program followed by its arguments.
    pub command: Vec<String>,
    pub timeout_ms: u64,
}

const POLL: Duration = Duration::from_millis(2);

impl ExternalChecker {
    pub fn new(command: Vec<String>, timeout_ms: u64) -> ExternalChecker {
        ExternalChecker {
            command,
            timeout_ms,
        }
    }

    /// Exit status 0 means compilable. Any other status is reported as an
    /// `UnexpectedToken` at position 0, since the location is unknown.
    pub fn check(&self, vocab: &Vocab, seq: &TokenSeq) -> Result<CompileResult, ExternalError> {
        let (program, args) = self
            .command
            .split_first()
            .ok_or(ExternalError::EmptyCommand)?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|source| ExternalError::SpawnFailure {
                program: program.clone(),
                source,
            })?;

        if let Some(mut stdin) = child.stdin.take() {
            let mut text = vocab.detokenize(seq);
            text.push('\n');
            // The checker may exit without reading; a broken pipe is not our failure.
            let _ = stdin.write_all(text.as_bytes());
        }

        let deadline = Instant::now() + Duration::from_millis(self.timeout_ms);
        loop {
            if let Some(status) = child.try_wait().map_err(ExternalError::Wait)? {
                return Ok(if status.success() {
                    CompileResult::OK
                } else {
                    CompileResult::failed(ErrorKind::UnexpectedToken, 0)
                });
            }
            if Instant::now() >= deadline {
                let _ = child.kill();
                let _ = child.wait();
                return Err(ExternalError::Timeout(self.timeout_ms));
            }
            std::thread::sleep(POLL);
        }
    }
}

pub fn external_check(
    checker: &ExternalChecker,
    vocab: &Vocab,
    seq: &TokenSeq,
) -> Result<CompileResult, ExternalError> {
    checker.check(vocab, seq)
}
