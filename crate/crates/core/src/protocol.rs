//! Newline-delimited JSON protocol spoken with external model processes over
//! standard input/output.
//!
//! Every request carries a connection-unique, strictly increasing `id`; the
//! handshake is always id 0. Tensors travel as base64 of little-endian `f32`
//! values in row-major `(row, column, channel)` order:
//!
//! ```text
//! -> {"id":0,"op":"hello"}
//! <- {"id":0,"class_count":2,"height":64,"width":64}
//! -> {"id":1,"op":"score","shape":[64,64,3],"data":"..."}
//! <- {"id":1,"scores":[0.2,0.8]}
//! <- {"id":n,"error":"message"}
//! ```

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, CHANNELS};

pub const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(10);
pub const REQUEST_TIMEOUT: Duration = Duration::from_secs(60);

pub fn encode_tensor(image: &ImageTensor) -> String {
    let mut bytes = Vec::with_capacity(image.data().len() * 4);
    for &v in image.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_tensor(shape: &[usize], data: &str) -> Result<ImageTensor> {
    let [h, w, ch] = shape else {
        return Err(Error::Protocol(format!(
            "tensor shape must have 3 entries, got {shape:?}"
        )));
    };
    if *ch != CHANNELS {
        return Err(Error::Protocol(format!("tensor must have 3 channels, got {ch}")));
    }
    let bytes = STANDARD
        .decode(data)
        .map_err(|e| Error::Protocol(format!("bad base64 tensor payload: {e}")))?;
    if bytes.len() != h * w * ch * 4 {
        return Err(Error::Protocol(format!(
            "tensor payload has {} bytes, shape {shape:?} needs {}",
            bytes.len(),
            h * w * ch * 4
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    ImageTensor::new(*h, *w, data).map_err(|e| Error::Protocol(format!("bad tensor: {e}")))
}

/// Shape and payload fields shared by the score and discriminate requests.
#[derive(Debug, Serialize)]
pub struct TensorPayload {
    pub shape: [usize; 3],
    pub data: String,
}

impl TensorPayload {
    pub fn new(image: &ImageTensor) -> Self {
        Self {
            shape: [image.height(), image.width(), CHANNELS],
            data: encode_tensor(image),
        }
    }
}

#[derive(Serialize)]
struct Request<'a, P: Serialize> {
    id: u64,
    op: &'a str,
    #[serde(flatten)]
    payload: &'a P,
}

#[derive(Serialize)]
struct Empty {}

/// A live child process answering one request at a time.
pub struct ProcessConnection {
    label: String,
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    lines_read: usize,
    timeout: Duration,
}

impl std::fmt::Debug for ProcessConnection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProcessConnection")
            .field("label", &self.label)
            .field("next_id", &self.next_id)
            .finish()
    }
}

impl ProcessConnection {
    pub fn spawn(command: &[String]) -> Result<Self> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| Error::Argument("empty backend command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Backend(format!("failed to spawn `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            label: command.join(" "),
            child,
            stdin,
            lines: rx,
            next_id: 0,
            lines_read: 0,
            timeout: REQUEST_TIMEOUT,
        })
    }

    pub fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Sends the `hello` request and returns the reply object.
    pub fn handshake(&mut self, timeout: Duration) -> Result<serde_json::Map<String, Value>> {
        if self.next_id != 0 {
            return Err(Error::Protocol("handshake must be the first request".into()));
        }
        let saved = std::mem::replace(&mut self.timeout, timeout);
        let reply = self.request("hello", &Empty {});
        self.timeout = saved;
        reply
    }

    /// Sends one request and waits for its reply. A reply carrying the wrong
    /// id triggers one retry with a fresh id before failing.
    pub fn request<P: Serialize>(&mut self, op: &str, payload: &P) -> Result<serde_json::Map<String, Value>> {
        let mut mismatch = None;
        for _attempt in 0..2 {
            let id = self.next_id;
            self.next_id += 1;
            self.send(id, op, payload)?;
            let (line_no, reply) = self.receive()?;
            let got = reply.get("id").and_then(Value::as_u64);
            if got != Some(id) {
                log::debug!("{}: reply id {got:?} on line {line_no}, expected {id}", self.label);
                mismatch = Some((id, got, line_no));
                continue;
            }
            if let Some(err) = reply.get("error") {
                let msg = err.as_str().map(str::to_owned).unwrap_or_else(|| err.to_string());
                return Err(Error::Backend(format!(
                    "{} replied with error to `{op}`: {msg}",
                    self.label
                )));
            }
            return Ok(reply);
        }
        let (id, got, line_no) = mismatch.expect("loop exits early unless ids mismatched");
        Err(Error::Protocol(format!(
            "{}: reply on line {line_no} has id {} but request id was {id} (after one retry)",
            self.label,
            got.map_or_else(|| "none".to_string(), |g| g.to_string())
        )))
    }

    fn send<P: Serialize>(&mut self, id: u64, op: &str, payload: &P) -> Result<()> {
        let mut line = serde_json::to_string(&Request { id, op, payload })
            .map_err(|e| Error::Protocol(format!("cannot encode request: {e}")))?;
        line.push('\n');
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.flush())
            .map_err(|e| Error::Backend(format!("{}: cannot write request: {e}", self.label)))
    }

    fn receive(&mut self) -> Result<(usize, serde_json::Map<String, Value>)> {
        let line = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(Error::Backend(format!("{}: read failed: {e}", self.label))),
            Err(RecvTimeoutError::Timeout) => {
                return Err(Error::Backend(format!(
                    "{}: no reply within {:?}",
                    self.label, self.timeout
                )))
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(Error::Backend(format!("{}: process closed its output", self.label)))
            }
        };
        self.lines_read += 1;
        let line_no = self.lines_read;
        let value: Value = serde_json::from_str(&line).map_err(|e| {
            Error::Protocol(format!(
                "{}: line {line_no} is not valid JSON ({e}): {}",
                self.label,
                truncate(&line, 120)
            ))
        })?;
        match value {
            Value::Object(map) => Ok((line_no, map)),
            _ => Err(Error::Protocol(format!(
                "{}: line {line_no} is not a JSON object",
                self.label
            ))),
        }
    }
}

impl Drop for ProcessConnection {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

pub(crate) fn field_usize(reply: &serde_json::Map<String, Value>, key: &str) -> Result<usize> {
    reply
        .get(key)
        .and_then(Value::as_u64)
        .map(|v| v as usize)
        .ok_or_else(|| Error::Protocol(format!("reply lacks integer field `{key}`")))
}

pub(crate) fn field_f64(reply: &serde_json::Map<String, Value>, key: &str) -> Result<f64> {
    reply
        .get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| Error::Protocol(format!("reply lacks numeric field `{key}`")))
}

pub(crate) fn field_tensor(reply: &serde_json::Map<String, Value>) -> Result<ImageTensor> {
    let shape: Vec<usize> = reply
        .get("shape")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Protocol("reply lacks `shape`".into()))?
        .iter()
        .map(|v| v.as_u64().map(|u| u as usize))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::Protocol("`shape` must hold integers".into()))?;
    let data = reply
        .get("data")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Protocol("reply lacks `data`".into()))?;
    decode_tensor(&shape, data)
}

/// Splits a command line on whitespace, honouring single and double quotes.
pub fn split_command(line: &str) -> Result<Vec<String>> {
    let mut words = Vec::new();
    let mut cur = String::new();
    let mut in_word = false;
    let mut quote: Option<char> = None;
    for ch in line.chars() {
        match (quote, ch) {
            (Some(q), c) if c == q => quote = None,
            (Some(_), c) => cur.push(c),
            (None, '"' | '\'') => {
                quote = Some(ch);
                in_word = true;
            }
            (None, c) if c.is_whitespace() => {
                if in_word {
                    words.push(std::mem::take(&mut cur));
                    in_word = false;
                }
            }
            (None, c) => {
                cur.push(c);
                in_word = true;
            }
        }
    }
    if quote.is_some() {
        return Err(Error::Argument(format!("unbalanced quote in command `{line}`")));
    }
    if in_word {
        words.push(cur);
    }
    if words.is_empty() {
        return Err(Error::Argument("empty command".into()));
    }
    Ok(words)
}
