//! Classifier backends: the black box `f` mapping an image to per-class scores.
//!
//! The engine only ever sees inputs and outputs. Builtin backends are
//! deterministic synthetic classifiers; [`ExternalClassifier`] routes through a
//! child process speaking the stdio protocol in [`crate::protocol`].

mod external;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use external::{spawn_external, ExternalClassifier};

use crate::error::{Error, Result};
use crate::protocol::split_command;
use crate::tensor::{ImageTensor, Rect};

pub const DEFAULT_SHARPNESS: f64 = 10.0;

/// Per-class confidences for one image. Not required to sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassScores {
    values: Vec<f64>,
}

impl ClassScores {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Protocol("empty score vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Protocol("non-finite class score".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, class: usize) -> Result<f64> {
        self.values.get(class).copied().ok_or_else(|| {
            Error::Argument(format!(
                "target class {class} out of range for {} classes",
                self.values.len()
            ))
        })
    }

    /// Index of the largest score; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }
}

pub trait Classifier {
    fn class_count(&self) -> usize;

    /// Required input `(height, width)`, or `None` if any size is accepted.
    fn input_dims(&self) -> Option<(usize, usize)>;

    fn score(&mut self, image: &ImageTensor) -> Result<ClassScores>;

    fn score_batch(&mut self, images: &[ImageTensor]) -> Result<Vec<ClassScores>> {
        if images.is_empty() {
            return Err(Error::Argument("empty image batch".into()));
        }
        let dims = images[0].dims();
        if let Some(i) = images.iter().position(|im| im.dims() != dims) {
            return Err(Error::Dimension(format!("batch is not homogeneous at item {i}")));
        }
        images
            .iter()
            .enumerate()
            .map(|(i, im)| self.score(im).map_err(|e| e.at_index(i)))
            .collect()
    }
}

impl<C: Classifier + ?Sized> Classifier for Box<C> {
    fn class_count(&self) -> usize {
        (**self).class_count()
    }
    fn input_dims(&self) -> Option<(usize, usize)> {
        (**self).input_dims()
    }
    fn score(&mut self, image: &ImageTensor) -> Result<ClassScores> {
        (**self).score(image)
    }
    fn score_batch(&mut self, images: &[ImageTensor]) -> Result<Vec<ClassScores>> {
        (**self).score_batch(images)
    }
}

impl<C: Classifier + ?Sized> Classifier for &mut C {
    fn class_count(&self) -> usize {
        (**self).class_count()
    }
    fn input_dims(&self) -> Option<(usize, usize)> {
        (**self).input_dims()
    }
    fn score(&mut self, image: &ImageTensor) -> Result<ClassScores> {
        (**self).score(image)
    }
    fn score_batch(&mut self, images: &[ImageTensor]) -> Result<Vec<ClassScores>> {
        (**self).score_batch(images)
    }
}

pub(crate) fn check_input_dims(expected: Option<(usize, usize)>, image: &ImageTensor) -> Result<()> {
    match expected {
        Some(dims) if dims != image.dims() => Err(Error::Dimension(format!(
            "backend expects {}x{} input, got {}x{}",
            dims.0,
            dims.1,
            image.height(),
            image.width()
        ))),
        _ => Ok(()),
    }
}

/// Synthetic classifier whose salient region is known by construction.
///
/// Class 0 scores `logistic(sharpness * (mean_inside - mean_outside))` over
/// the mean channel intensity inside and outside `rect`; class 1 is the
/// complement.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedClassifier {
    rect: Rect,
    sharpness: f64,
    dims: Option<(usize, usize)>,
}

impl PlantedClassifier {
    pub fn new(rect: Rect, sharpness: f64) -> Result<Self> {
        if !(sharpness > 0.0 && sharpness.is_finite()) {
            return Err(Error::Argument(format!("sharpness must be positive, got {sharpness}")));
        }
        if rect.height == 0 || rect.width == 0 {
            return Err(Error::Argument("planted rectangle must be non-empty".into()));
        }
        Ok(Self {
            rect,
            sharpness,
            dims: None,
        })
    }

    /// Pins the accepted input size.
    pub fn with_dims(mut self, height: usize, width: usize) -> Result<Self> {
        self.rect.check_fits(height, width)?;
        self.dims = Some((height, width));
        Ok(self)
    }

    pub fn rect(&self) -> Rect {
        self.rect
    }

    pub fn sharpness(&self) -> f64 {
        self.sharpness
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Classifier for PlantedClassifier {
    fn class_count(&self) -> usize {
        2
    }

    fn input_dims(&self) -> Option<(usize, usize)> {
        self.dims
    }

    fn score(&mut self, image: &ImageTensor) -> Result<ClassScores> {
        check_input_dims(self.dims, image)?;
        self.rect.check_fits(image.height(), image.width())?;
        let rect = self.rect;
        // Means are taken relative to the first value so a uniform image gives
        // a difference of exactly zero.
        let reference = image.data()[0];
        let shifted = |inside: bool| {
            let (mut sum, mut n) = (0.0, 0usize);
            for r in 0..image.height() {
                for c in 0..image.width() {
                    if rect.contains(r, c) == inside {
                        sum += image
                            .pixel(r * image.width() + c)
                            .iter()
                            .map(|v| v - reference)
                            .sum::<f64>();
                        n += 1;
                    }
                }
            }
            if n == 0 {
                0.0
            } else {
                sum / (n * crate::tensor::CHANNELS) as f64
            }
        };
        let p = logistic(self.sharpness * (shifted(true) - shifted(false)));
        ClassScores::new(vec![p, 1.0 - p])
    }
}

/// Returns the same vector for every input.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantClassifier {
    scores: ClassScores,
}

impl ConstantClassifier {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Ok(Self {
            scores: ClassScores::new(values)?,
        })
    }
}

impl Classifier for ConstantClassifier {
    fn class_count(&self) -> usize {
        self.scores.len()
    }

    fn input_dims(&self) -> Option<(usize, usize)> {
        None
    }

    fn score(&mut self, _image: &ImageTensor) -> Result<ClassScores> {
        Ok(self.scores.clone())
    }
}

/// Wraps a classifier and counts every call that reaches it.
#[derive(Debug)]
pub struct CallCounter<C> {
    inner: C,
    score_calls: usize,
    batch_calls: usize,
}

impl<C> CallCounter<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            score_calls: 0,
            batch_calls: 0,
        }
    }

    /// Images scored, whether singly or in batches.
    pub fn score_calls(&self) -> usize {
        self.score_calls
    }

    pub fn batch_calls(&self) -> usize {
        self.batch_calls
    }

    pub fn into_inner(self) -> C {
        self.inner
    }
}

impl<C: Classifier> Classifier for CallCounter<C> {
    fn class_count(&self) -> usize {
        self.inner.class_count()
    }

    fn input_dims(&self) -> Option<(usize, usize)> {
        self.inner.input_dims()
    }

    fn score(&mut self, image: &ImageTensor) -> Result<ClassScores> {
        self.score_calls += 1;
        self.inner.score(image)
    }

    fn score_batch(&mut self, images: &[ImageTensor]) -> Result<Vec<ClassScores>> {
        self.batch_calls += 1;
        self.score_calls += images.len();
        self.inner.score_batch(images)
    }
}

/// Parsed backend selector, as written on the command line:
/// `builtin-planted:top,left,h,w[,sharpness]`, `builtin-constant:v1,v2,...`
/// or `exec:"cmd arg..."`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackendDescriptor {
    BuiltinPlanted { rect: Rect, sharpness: f64 },
    BuiltinConstant { values: Vec<f64> },
    ExternalExec { command: Vec<String> },
}

impl BackendDescriptor {
    /// Instantiates the backend for images of the given size.
    pub fn connect(&self, dims: (usize, usize)) -> Result<Box<dyn Classifier>> {
        Ok(match self {
            BackendDescriptor::BuiltinPlanted { rect, sharpness } => {
                Box::new(PlantedClassifier::new(*rect, *sharpness)?.with_dims(dims.0, dims.1)?)
            }
            BackendDescriptor::BuiltinConstant { values } => Box::new(ConstantClassifier::new(values.clone())?),
            BackendDescriptor::ExternalExec { command } => {
                let backend = spawn_external(command, None)?;
                check_input_dims(backend.input_dims(), &ImageTensor::filled(dims.0, dims.1, 0.0))?;
                Box::new(backend)
            }
        })
    }
}

fn parse_list<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::Argument(format!("bad {what} value `{t}`")))
        })
        .collect()
}

impl FromStr for BackendDescriptor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::Argument(format!("backend `{s}` lacks a `kind:` prefix")))?;
        match kind {
            "builtin-planted" => {
                let v: Vec<f64> = parse_list(rest, "planted")?;
                if !(v.len() == 4 || v.len() == 5) || v[..4].iter().any(|x| *x < 0.0 || x.fract() != 0.0) {
                    return Err(Error::Argument(format!(
                        "builtin-planted expects top,left,h,w[,sharpness], got `{rest}`"
                    )));
                }
                let rect = Rect::new(v[0] as usize, v[1] as usize, v[2] as usize, v[3] as usize);
                let sharpness = v.get(4).copied().unwrap_or(DEFAULT_SHARPNESS);
                PlantedClassifier::new(rect, sharpness)?;
                Ok(BackendDescriptor::BuiltinPlanted { rect, sharpness })
            }
            "builtin-constant" => {
                let values = parse_list(rest, "constant")?;
                ClassScores::new(values.clone()).map_err(|e| Error::Argument(e.to_string()))?;
                Ok(BackendDescriptor::BuiltinConstant { values })
            }
            "exec" => Ok(BackendDescriptor::ExternalExec {
                command: split_command(rest)?,
            }),
            other => Err(Error::Argument(format!("unknown backend kind `{other}`"))),
        }
    }
}

impl fmt::Display for BackendDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendDescriptor::BuiltinPlanted { rect, sharpness } => write!(
                f,
                "builtin-planted:{},{},{},{},{}",
                rect.top, rect.left, rect.height, rect.width, sharpness
            ),
            BackendDescriptor::BuiltinConstant { values } => {
                let v: Vec<String> = values.iter().map(f64::to_string).collect();
                write!(f, "builtin-constant:{}", v.join(","))
            }
            BackendDescriptor::ExternalExec { command } => write!(f, "exec:{}", command.join(" ")),
        }
    }
}
