//! Newline-delimited JSON protocol between the tuner and a training worker.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search_space::Configuration;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorkerRequest {
    Init {
        dataset_path: String,
        subsample_n: usize,
        seed: u64,
    },
    Step {
        config: Configuration,
        epoch: u32,
        run_id: String,
    },
    ZeroShot,
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum WorkerResponse {
    Ok {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        val_iou: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        wall_clock_s: Option<f64>,
    },
    Error {
        message: String,
    },
}

impl WorkerResponse {
    pub fn ok() -> Self {
        WorkerResponse::Ok {
            val_iou: None,
            wall_clock_s: None,
        }
    }

    pub fn measured(val_iou: f64, wall_clock_s: f64) -> Self {
        WorkerResponse::Ok {
            val_iou: Some(val_iou),
            wall_clock_s: Some(wall_clock_s),
        }
    }

    pub fn error(message: impl Into<String>) -> Self {
        WorkerResponse::Error {
            message: message.into(),
        }
    }
}

/// Anything that answers protocol requests, one at a time.
pub trait Worker {
    fn call(&mut self, req: &WorkerRequest) -> Result<WorkerResponse>;
}

/// Server side of the protocol: consumes one request line, produces one
/// response line (no trailing newline).
pub trait LineHandler {
    fn handle_line(&mut self, line: &str) -> String;
}

/// Wraps a [`LineHandler`] in-process, still going through the JSON wire
/// format in both directions.
pub struct InProcess<H>(pub H);

impl<H: LineHandler> Worker for InProcess<H> {
    fn call(&mut self, req: &WorkerRequest) -> Result<WorkerResponse> {
        let line = serde_json::to_string(req)?;
        let reply = self.0.handle_line(&line);
        Ok(serde_json::from_str(&reply)?)
    }
}

/// Serves a handler over any reader/writer pair until `shutdown` or EOF.
pub fn serve<H: LineHandler>(
    handler: &mut H,
    input: impl BufRead,
    mut output: impl Write,
) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = handler.handle_line(&line);
        output.write_all(reply.as_bytes())?;
        output.write_all(b"\n")?;
        output.flush()?;
        if matches!(
            serde_json::from_str::<WorkerRequest>(&line),
            Ok(WorkerRequest::Shutdown)
        ) {
            break;
        }
    }
    Ok(())
}

/// A worker process spoken to over its stdin/stdout.
pub struct SubprocessWorker {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl SubprocessWorker {
    /// `argv[0]` is the program.
    pub fn spawn(argv: &[String]) -> Result<Self> {
        let (prog, args) = argv
            .split_first()
            .ok_or_else(|| Error::Worker("empty worker command".into()))?;
        let mut child = Command::new(prog)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Worker(format!("spawning {prog}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self {
            child,
            stdin,
            stdout,
        })
    }
}

impl Worker for SubprocessWorker {
    fn call(&mut self, req: &WorkerRequest) -> Result<WorkerResponse> {
        let io = |e: std::io::Error| Error::Worker(e.to_string());
        let mut line = serde_json::to_string(req)?;
        line.push('\n');
        self.stdin.write_all(line.as_bytes()).map_err(io)?;
        self.stdin.flush().map_err(io)?;
        let mut reply = String::new();
        if self.stdout.read_line(&mut reply).map_err(io)? == 0 {
            return Err(Error::Worker("worker closed its output".into()));
        }
        serde_json::from_str(reply.trim_end())
            .map_err(|e| Error::Worker(format!("bad response {reply:?}: {e}")))
    }
}

impl Drop for SubprocessWorker {
    fn drop(&mut self) {
        if let Ok(None) = self.child.try_wait() {
            let _ = self.call(&WorkerRequest::Shutdown);
            let _ = self.child.wait();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_wire_format() {
        let r = WorkerRequest::Init {
            dataset_path: "data/polyp".into(),
            subsample_n: 100,
            seed: 3,
        };
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"cmd":"init","dataset_path":"data/polyp","subsample_n":100,"seed":3}"#
        );
        assert_eq!(
            serde_json::to_string(&WorkerRequest::ZeroShot).unwrap(),
            r#"{"cmd":"zero_shot"}"#
        );
        assert_eq!(
            serde_json::from_str::<WorkerRequest>(r#"{"cmd":"shutdown"}"#).unwrap(),
            WorkerRequest::Shutdown
        );
        assert!(serde_json::from_str::<WorkerRequest>(r#"{"cmd":"train"}"#).is_err());
    }

    #[test]
    fn response_wire_format() {
        assert_eq!(
            serde_json::to_string(&WorkerResponse::measured(0.5, 2.0)).unwrap(),
            r#"{"status":"ok","val_iou":0.5,"wall_clock_s":2.0}"#
        );
        assert_eq!(
            serde_json::to_string(&WorkerResponse::ok()).unwrap(),
            r#"{"status":"ok"}"#
        );
        assert_eq!(
            serde_json::from_str::<WorkerResponse>(r#"{"status":"error","message":"epoch order"}"#)
                .unwrap(),
            WorkerResponse::error("epoch order")
        );
    }
}
