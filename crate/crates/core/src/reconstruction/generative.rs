//! Generator/discriminator backends used by latent search.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::{
    field_f64, field_tensor, field_usize, split_command, ProcessConnection, TensorPayload, HANDSHAKE_TIMEOUT,
};
use crate::tensor::{ImageTensor, RandomSource, CHANNELS};

/// A generator `G: R^d -> image`, optionally with a discriminator `D`.
pub trait GenerativeBackend {
    fn latent_dim(&self) -> usize;

    /// `(height, width)` of every generated image.
    fn output_dims(&self) -> (usize, usize);

    fn generate(&mut self, z: &[f64]) -> Result<ImageTensor>;

    /// Confidence that `image` is real.
    fn discriminate(&mut self, _image: &ImageTensor) -> Result<f64> {
        Err(Error::Argument("generative backend has no discriminator".into()))
    }

    fn has_discriminator(&self) -> bool {
        false
    }
}

impl<B: GenerativeBackend + ?Sized> GenerativeBackend for Box<B> {
    fn latent_dim(&self) -> usize {
        (**self).latent_dim()
    }
    fn output_dims(&self) -> (usize, usize) {
        (**self).output_dims()
    }
    fn generate(&mut self, z: &[f64]) -> Result<ImageTensor> {
        (**self).generate(z)
    }
    fn discriminate(&mut self, image: &ImageTensor) -> Result<f64> {
        (**self).discriminate(image)
    }
    fn has_discriminator(&self) -> bool {
        (**self).has_discriminator()
    }
}

pub trait Discriminator {
    fn discriminate(&mut self, image: &ImageTensor) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantDiscriminator(pub f64);

impl Discriminator for ConstantDiscriminator {
    fn discriminate(&mut self, _image: &ImageTensor) -> Result<f64> {
        Ok(self.0)
    }
}

/// A generator combined with a separate discriminator.
#[derive(Debug, Clone)]
pub struct Paired<G, D> {
    pub generator: G,
    pub discriminator: D,
}

impl<G: GenerativeBackend, D: Discriminator> GenerativeBackend for Paired<G, D> {
    fn latent_dim(&self) -> usize {
        self.generator.latent_dim()
    }
    fn output_dims(&self) -> (usize, usize) {
        self.generator.output_dims()
    }
    fn generate(&mut self, z: &[f64]) -> Result<ImageTensor> {
        self.generator.generate(z)
    }
    fn discriminate(&mut self, image: &ImageTensor) -> Result<f64> {
        let d = self.discriminator.discriminate(image)?;
        if !d.is_finite() {
            return Err(Error::Backend("discriminator returned a non-finite score".into()));
        }
        Ok(d)
    }
    fn has_discriminator(&self) -> bool {
        true
    }
}

fn check_latent(z: &[f64], d: usize) -> Result<()> {
    if z.len() != d {
        return Err(Error::Dimension(format!(
            "latent has {} entries, generator expects {d}",
            z.len()
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("non-finite latent entry".into()));
    }
    Ok(())
}

/// `G(z) = A z + b` with `A` of shape `(h*w*3) x d`, stored row-major.
///
/// Outputs are not clamped, so the context loss stays an exact quadratic in `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGenerator {
    height: usize,
    width: usize,
    latent_dim: usize,
    basis: Vec<f64>,
    offset: Vec<f64>,
}

impl LinearGenerator {
    pub fn new(height: usize, width: usize, latent_dim: usize, basis: Vec<f64>, offset: Vec<f64>) -> Result<Self> {
        let rows = height * width * CHANNELS;
        if latent_dim == 0 || rows == 0 {
            return Err(Error::Argument(
                "linear generator needs d >= 1 and a non-empty image".into(),
            ));
        }
        if basis.len() != rows * latent_dim || offset.len() != rows {
            return Err(Error::Dimension("linear generator basis/offset size mismatch".into()));
        }
        if basis.iter().chain(&offset).any(|v| !v.is_finite()) {
            return Err(Error::Argument("linear generator has non-finite parameters".into()));
        }
        Ok(Self {
            height,
            width,
            latent_dim,
            basis,
            offset,
        })
    }

    /// Random basis with entries `N(0, (0.25 / sqrt(d))^2)` around a mid-gray
    /// offset, so `G(z)` for `z ~ N(0, I)` mostly stays inside `[0, 1]`.
    pub fn seeded(height: usize, width: usize, latent_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = RandomSource::new(seed);
        let rows = height * width * CHANNELS;
        let scale = 0.25 / (latent_dim.max(1) as f64).sqrt();
        let basis = (0..rows * latent_dim).map(|_| scale * rng.standard_normal()).collect();
        Self::new(height, width, latent_dim, basis, vec![0.5; rows])
    }

    pub fn basis(&self) -> &[f64] {
        &self.basis
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }
}

impl GenerativeBackend for LinearGenerator {
    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn output_dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn generate(&mut self, z: &[f64]) -> Result<ImageTensor> {
        check_latent(z, self.latent_dim)?;
        let data = self
            .basis
            .chunks_exact(self.latent_dim)
            .zip(&self.offset)
            .map(|(row, b)| b + row.iter().zip(z).map(|(a, zi)| a * zi).sum::<f64>())
            .collect();
        ImageTensor::new(self.height, self.width, data)
    }
}

/// Convex combination of stored exemplars weighted by `softmax(z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarGenerator {
    exemplars: Vec<ImageTensor>,
}

impl ExemplarGenerator {
    pub fn new(exemplars: Vec<ImageTensor>) -> Result<Self> {
        let first = exemplars
            .first()
            .ok_or_else(|| Error::Argument("exemplar generator needs at least one exemplar".into()))?;
        if exemplars.iter().any(|e| e.dims() != first.dims()) {
            return Err(Error::Dimension("exemplars must share one size".into()));
        }
        Ok(Self { exemplars })
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl GenerativeBackend for ExemplarGenerator {
    fn latent_dim(&self) -> usize {
        self.exemplars.len()
    }

    fn output_dims(&self) -> (usize, usize) {
        self.exemplars[0].dims()
    }

    fn generate(&mut self, z: &[f64]) -> Result<ImageTensor> {
        check_latent(z, self.exemplars.len())?;
        let weights = softmax(z);
        let (h, w) = self.output_dims();
        let mut data = vec![0.0; h * w * CHANNELS];
        for (e, wt) in self.exemplars.iter().zip(weights) {
            for (acc, v) in data.iter_mut().zip(e.data()) {
                *acc += wt * v;
            }
        }
        ImageTensor::new(h, w, data)
    }
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    z: &'a [f64],
}

/// Generator and discriminator served by a child process.
///
/// Handshake reply: `{"id":0,"latent_dim":d,"height":h,"width":w}`. Generate
/// replies carry `shape`/`data`; discriminate replies carry `score`.
#[derive(Debug)]
pub struct ExternalGenerative {
    conn: ProcessConnection,
    latent_dim: usize,
    dims: (usize, usize),
}

pub fn spawn_generative(command: &[String]) -> Result<ExternalGenerative> {
    let mut conn = ProcessConnection::spawn(command)?;
    let reply = conn.handshake(HANDSHAKE_TIMEOUT)?;
    let latent_dim = field_usize(&reply, "latent_dim")?;
    let dims = (field_usize(&reply, "height")?, field_usize(&reply, "width")?);
    if latent_dim == 0 || dims.0 == 0 || dims.1 == 0 {
        return Err(Error::Protocol(format!(
            "{}: handshake declares empty shape",
            conn.label()
        )));
    }
    Ok(ExternalGenerative { conn, latent_dim, dims })
}

impl GenerativeBackend for ExternalGenerative {
    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn output_dims(&self) -> (usize, usize) {
        self.dims
    }

    fn generate(&mut self, z: &[f64]) -> Result<ImageTensor> {
        check_latent(z, self.latent_dim)?;
        let reply = self.conn.request("generate", &GenerateRequest { z })?;
        let image = field_tensor(&reply)?;
        if image.dims() != self.dims {
            return Err(Error::Protocol(format!(
                "{}: generated {:?}, handshake declared {:?}",
                self.conn.label(),
                image.dims(),
                self.dims
            )));
        }
        Ok(image)
    }

    fn discriminate(&mut self, image: &ImageTensor) -> Result<f64> {
        let reply = self.conn.request("discriminate", &TensorPayload::new(image))?;
        let score = field_f64(&reply, "score")?;
        if !score.is_finite() {
            return Err(Error::Protocol("non-finite discriminator score".into()));
        }
        Ok(score)
    }

    fn has_discriminator(&self) -> bool {
        true
    }
}

/// Generative backend selector: `builtin-linear[:seed]`,
/// `builtin-exemplar:img1,img2,...` or `exec:"cmd arg..."`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GenerativeDescriptor {
    BuiltinLinear { seed: u64 },
    BuiltinExemplar { paths: Vec<String> },
    ExternalExec { command: Vec<String> },
}

/// Realness reported by the constant discriminator paired with builtin
/// generators.
pub const BUILTIN_REALNESS: f64 = 0.5;

pub const DEFAULT_GENERATOR_DIMS: (usize, usize) = (64, 64);

impl GenerativeDescriptor {
    /// Instantiates the backend. `latent_dim` sizes the builtin linear
    /// generator; exemplar and external backends declare their own.
    pub fn connect(&self, latent_dim: usize) -> Result<Box<dyn GenerativeBackend>> {
        Ok(match self {
            GenerativeDescriptor::BuiltinLinear { seed } => Box::new(Paired {
                generator: LinearGenerator::seeded(
                    DEFAULT_GENERATOR_DIMS.0,
                    DEFAULT_GENERATOR_DIMS.1,
                    latent_dim,
                    *seed,
                )?,
                discriminator: ConstantDiscriminator(BUILTIN_REALNESS),
            }),
            GenerativeDescriptor::BuiltinExemplar { paths } => {
                let exemplars = paths
                    .iter()
                    .map(|p| crate::io::load_image(std::path::Path::new(p)))
                    .collect::<Result<Vec<_>>>()?;
                Box::new(Paired {
                    generator: ExemplarGenerator::new(exemplars)?,
                    discriminator: ConstantDiscriminator(BUILTIN_REALNESS),
                })
            }
            GenerativeDescriptor::ExternalExec { command } => Box::new(spawn_generative(command)?),
        })
    }
}

impl FromStr for GenerativeDescriptor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = match s.split_once(':') {
            Some((k, r)) => (k, Some(r)),
            None => (s, None),
        };
        match (kind, rest) {
            ("builtin-linear", None) => Ok(GenerativeDescriptor::BuiltinLinear { seed: 0 }),
            ("builtin-linear", Some(r)) => Ok(GenerativeDescriptor::BuiltinLinear {
                seed: r
                    .trim()
                    .parse()
                    .map_err(|_| Error::Argument(format!("bad builtin-linear seed `{r}`")))?,
            }),
            ("builtin-exemplar", Some(r)) if !r.trim().is_empty() => Ok(GenerativeDescriptor::BuiltinExemplar {
                paths: r.split(',').map(|p| p.trim().to_string()).collect(),
            }),
            ("exec", Some(r)) => Ok(GenerativeDescriptor::ExternalExec {
                command: split_command(r)?,
            }),
            _ => Err(Error::Argument(format!("unknown generative backend `{s}`"))),
        }
    }
}
