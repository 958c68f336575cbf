//! Supervision of one external executor child per task.
//!
//! The child receives one length-prefixed [`ExternalTask`] document on its
//! standard input and must write one length-prefixed result body to its
//! standard output, then exit with status 0.

use std::process::Stdio;
use std::time::Duration;

use tokio::io::AsyncWriteExt;
use tokio::process::Command;

use super::executor::{ExecutorError, ExternalTask};
use crate::protocol::{codec::HEADER_LEN, encode_document, ResultBody, MAX_FRAME_LEN};

const STDERR_TAIL: usize = 512;

fn tail(bytes: &[u8]) -> String {
    let text = String::from_utf8_lossy(bytes);
    let text = text.trim();
    let start = text.len().saturating_sub(STDERR_TAIL);
    let start = (start..text.len()).find(|i| text.is_char_boundary(*i)).unwrap_or(text.len());
    text[start..].to_owned()
}

/// Parses exactly one framed result body.
pub fn parse_child_output(stdout: &[u8]) -> Result<ResultBody, ExecutorError> {
    let bad = |m: String| ExecutorError::MalformedChildOutput(m);
    if stdout.len() < HEADER_LEN {
        return Err(bad(format!("{} bytes of output, expected a frame", stdout.len())));
    }
    let len = u32::from_be_bytes(stdout[..HEADER_LEN].try_into().expect("4 bytes")) as usize;
    if len > MAX_FRAME_LEN {
        return Err(bad(format!("frame of {len} bytes exceeds the cap")));
    }
    let body = &stdout[HEADER_LEN..];
    if body.len() != len {
        return Err(bad(format!("header announces {len} bytes, {} followed", body.len())));
    }
    serde_json::from_slice(body).map_err(|e| bad(e.to_string()))
}

/// Runs `sh -c command` for one task. The child is killed when `limit`
/// passes or when the calling task is aborted.
pub async fn run_external(
    command: &str,
    doc: &ExternalTask,
    limit: Option<Duration>,
) -> Result<ResultBody, ExecutorError> {
    let input = encode_document(doc).map_err(|e| ExecutorError::BadTask(e.to_string()))?;
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .kill_on_drop(true)
        .spawn()
        .map_err(|e| ExecutorError::Spawn(e.to_string()))?;
    let mut stdin = child.stdin.take().expect("piped stdin");
    let writer = tokio::spawn(async move {
        // a child that never reads its input shows up as a crash or bad output
        let _ = stdin.write_all(&input).await;
        let _ = stdin.shutdown().await;
    });

    let run = child.wait_with_output();
    let output = match limit {
        Some(l) => match tokio::time::timeout(l, run).await {
            Ok(r) => r,
            Err(_) => {
                writer.abort();
                return Err(ExecutorError::ChildTimeout(l.as_millis() as u64));
            }
        },
        None => run.await,
    }
    .map_err(|e| ExecutorError::ChildCrashed(e.to_string()))?;
    writer.abort();

    if !output.status.success() {
        return Err(ExecutorError::ChildCrashed(format!("{}: {}", output.status, tail(&output.stderr))));
    }
    let body = parse_child_output(&output.stdout)?;
    let expected = doc.task.computation.onboard.kind();
    if body.kind() != expected {
        return Err(ExecutorError::MalformedChildOutput(format!(
            "{} body for a {} task",
            body.kind().as_str(),
            expected.as_str()
        )));
    }
    Ok(body)
}
