//! External-process backends.
//!
//! A backend command is run through `sh -c`; it receives one JSON request
//! object on standard input and must reply with one JSON object on standard
//! output. Replies that are not valid JSON, or that arrive after the timeout,
//! count as rejected attempts.
//!
//! Topic request:     {"prompt": <string>, "input": <string>, "topics": [<string>...]}
//! Topic response:    {"label": <string>}
//! Generator request: {"prompt": <string>, "seed_text": <string>, "n_variants": <int>}
//! Generator response:{"variants": [<string>...]}

use std::io::Write;
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::backends::generate::GeneratorBackend;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ExternalProcess {
    command: String,
    timeout: Duration,
}

impl ExternalProcess {
    pub fn new(command: impl Into<String>, timeout: Duration) -> Self {
        ExternalProcess { command: command.into(), timeout }
    }

    /// Run the command once: write `request` to stdin, read stdout to EOF.
    pub fn run(&self, request: &str) -> Result<String> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| Error::Backend(format!("spawn '{}': {e}", self.command)))?;

        {
            let mut stdin = child.stdin.take().expect("piped stdin");
            stdin
                .write_all(request.as_bytes())
                .map_err(|e| Error::Backend(format!("write request: {e}")))?;
            stdin
                .write_all(b"\n")
                .map_err(|e| Error::Backend(format!("write request: {e}")))?;
            // Drop closes the pipe so the child sees EOF.
        }

        let (tx, rx) = mpsc::channel();
        let stdout = child.stdout.take().expect("piped stdout");
        std::thread::spawn(move || {
            use std::io::Read;
            let mut buf = String::new();
            let mut reader = stdout;
            let res = reader.read_to_string(&mut buf).map(|_| buf);
            let _ = tx.send(res);
        });

        match rx.recv_timeout(self.timeout) {
            Ok(Ok(out)) => {
                let _ = child.wait();
                Ok(out)
            }
            Ok(Err(e)) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(Error::Backend(format!("read response: {e}")))
            }
            Err(_) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(Error::Backend(format!("backend '{}' timed out", self.command)))
            }
        }
    }
}

#[derive(Serialize)]
struct TopicRequest<'a> {
    prompt: &'a str,
    input: &'a str,
    topics: &'a [String],
}

#[derive(Deserialize)]
struct TopicResponse {
    label: String,
}

/// External topic classifier speaking the JSON protocol above.
///
/// One call is one classification sample; validation, retries, and the
/// sampling-agreement confidence live in `memory::classify_topic`.
#[derive(Debug, Clone)]
pub struct ExternalTopicBackend {
    proc: ExternalProcess,
}

impl ExternalTopicBackend {
    pub fn new(command: impl Into<String>, timeout: Duration) -> Self {
        ExternalTopicBackend { proc: ExternalProcess::new(command, timeout) }
    }

    /// One raw classification attempt. The returned label is unvalidated.
    pub fn classify_raw(&self, prompt: &str, input: &str, topics: &[String]) -> Result<String> {
        let req = serde_json::to_string(&TopicRequest { prompt, input, topics })?;
        let out = self.proc.run(&req)?;
        let parsed: TopicResponse = serde_json::from_str(out.trim())
            .map_err(|e| Error::Backend(format!("non-JSON topic response: {e}")))?;
        Ok(parsed.label)
    }
}

#[derive(Serialize)]
struct GeneratorRequest<'a> {
    prompt: &'a str,
    seed_text: &'a str,
    n_variants: usize,
}

#[derive(Deserialize)]
struct GeneratorResponse {
    variants: Vec<String>,
}

/// External variant generator speaking the JSON protocol above.
#[derive(Debug, Clone)]
pub struct ExternalGeneratorBackend {
    proc: ExternalProcess,
}

impl ExternalGeneratorBackend {
    pub fn new(command: impl Into<String>, timeout: Duration) -> Self {
        ExternalGeneratorBackend { proc: ExternalProcess::new(command, timeout) }
    }
}

impl GeneratorBackend for ExternalGeneratorBackend {
    fn generate(&self, prompt: &str, seed_text: &str, n_variants: usize, _seed: u64) -> Result<Vec<String>> {
        let req = serde_json::to_string(&GeneratorRequest { prompt, seed_text, n_variants })?;
        let out = self.proc.run(&req)?;
        let parsed: GeneratorResponse = serde_json::from_str(out.trim())
            .map_err(|e| Error::Backend(format!("non-JSON generator response: {e}")))?;
        Ok(parsed.variants)
    }
}
