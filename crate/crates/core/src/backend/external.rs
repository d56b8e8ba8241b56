use serde_json::Value;

use super::{check_input_dims, ClassScores, Classifier};
use crate::error::{Error, Result};
use crate::protocol::{field_usize, ProcessConnection, TensorPayload, HANDSHAKE_TIMEOUT};
use crate::tensor::ImageTensor;

/// Classifier living in a child process.
#[derive(Debug)]
pub struct ExternalClassifier {
    conn: ProcessConnection,
    class_count: usize,
    dims: (usize, usize),
}

/// Spawns `command` and performs the handshake. When `class_count` is given,
/// the backend must declare the same count.
pub fn spawn_external(command: &[String], class_count: Option<usize>) -> Result<ExternalClassifier> {
    let mut conn = ProcessConnection::spawn(command)?;
    let reply = conn.handshake(HANDSHAKE_TIMEOUT)?;
    let declared = field_usize(&reply, "class_count")?;
    let dims = (field_usize(&reply, "height")?, field_usize(&reply, "width")?);
    if declared == 0 || dims.0 == 0 || dims.1 == 0 {
        return Err(Error::Protocol(format!(
            "{}: handshake declares empty shape",
            conn.label()
        )));
    }
    if let Some(expected) = class_count {
        if expected != declared {
            return Err(Error::Protocol(format!(
                "{}: handshake declares {declared} classes, expected {expected}",
                conn.label()
            )));
        }
    }
    log::info!(
        "connected to `{}`: {declared} classes, {}x{}",
        conn.label(),
        dims.0,
        dims.1
    );
    Ok(ExternalClassifier {
        conn,
        class_count: declared,
        dims,
    })
}

impl ExternalClassifier {
    pub fn connection_mut(&mut self) -> &mut ProcessConnection {
        &mut self.conn
    }
}

impl Classifier for ExternalClassifier {
    fn class_count(&self) -> usize {
        self.class_count
    }

    fn input_dims(&self) -> Option<(usize, usize)> {
        Some(self.dims)
    }

    fn score(&mut self, image: &ImageTensor) -> Result<ClassScores> {
        check_input_dims(Some(self.dims), image)?;
        let reply = self.conn.request("score", &TensorPayload::new(image))?;
        let scores = reply
            .get("scores")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Protocol(format!("{}: reply lacks `scores`", self.conn.label())))?;
        let values: Vec<f64> = scores
            .iter()
            .map(Value::as_f64)
            .collect::<Option<_>>()
            .ok_or_else(|| Error::Protocol(format!("{}: non-numeric score", self.conn.label())))?;
        if values.len() != self.class_count {
            return Err(Error::Protocol(format!(
                "{}: got {} scores, declared {}",
                self.conn.label(),
                values.len(),
                self.class_count
            )));
        }
        ClassScores::new(values)
    }
}
