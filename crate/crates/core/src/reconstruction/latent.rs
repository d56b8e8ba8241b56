//! Gradient-free latent search.
//!
//! Simultaneous-perturbation stochastic approximation: each iteration draws a
//! Rademacher direction `delta`, evaluates the loss at `theta +/- c_k delta`,
//! and steps along `-(y+ - y-) / (2 c_k) * delta`. Gains follow the usual
//! schedules `a_k = a / (k + 1 + A)^0.602` and `c_k = c / (k + 1)^0.101`, with
//! `a` calibrated from the first gradient estimate so the first move has
//! per-coordinate magnitude `step_size`.

use serde::{Deserialize, Serialize};

use super::generative::GenerativeBackend;
use super::{loss_terms, LossBreakdown};
use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, MaskGrid, RandomSource};

const GAIN_DECAY: f64 = 0.602;
const PERTURBATION_DECAY: f64 = 0.101;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentOptions {
    pub iterations: usize,
    pub lambda_dis: f64,
    /// Initial perturbation half-width `c`.
    pub perturbation: f64,
    /// Per-coordinate magnitude of the first update.
    pub step_size: f64,
    pub seed: u64,
}

impl Default for LatentOptions {
    fn default() -> Self {
        Self {
            iterations: 300,
            lambda_dis: 0.003,
            perturbation: 0.05,
            step_size: 0.1,
            seed: 0,
        }
    }
}

impl LatentOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_dis >= 0.0 && self.lambda_dis.is_finite()) {
            return Err(Error::Argument(format!("lambda_dis {} must be >= 0", self.lambda_dis)));
        }
        if !(self.perturbation > 0.0 && self.perturbation.is_finite()) {
            return Err(Error::Argument("perturbation must be positive".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Argument("step_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentResult {
    pub z: Vec<f64>,
    pub loss: LossBreakdown,
    /// Best loss seen so far: the starting loss, then one entry per iteration.
    pub trace: Vec<f64>,
}

/// A backend failure part-way through the search.
#[derive(Debug)]
pub struct LatentFailure {
    pub error: Error,
    pub partial_trace: Vec<f64>,
}

impl From<LatentFailure> for Error {
    fn from(f: LatentFailure) -> Self {
        f.error
    }
}

/// Standard-normal starting latent.
pub fn sample_latent(dim: usize, rng: &mut RandomSource) -> Vec<f64> {
    (0..dim).map(|_| rng.standard_normal()).collect()
}

/// Minimizes context plus weighted discriminative loss from a latent drawn
/// with `opt.seed`.
pub fn optimize_latent<B: GenerativeBackend + ?Sized>(
    image: &ImageTensor,
    weight: &MaskGrid,
    backend: &mut B,
    opt: &LatentOptions,
) -> Result<LatentResult, LatentFailure> {
    let mut rng = RandomSource::new(opt.seed);
    let z0 = sample_latent(backend.latent_dim(), &mut rng);
    optimize_latent_from(z0, image, weight, backend, opt, &mut rng)
}

/// Latent search from an explicit starting point; `rng` drives the
/// perturbation directions.
pub fn optimize_latent_from<B: GenerativeBackend + ?Sized>(
    z0: Vec<f64>,
    image: &ImageTensor,
    weight: &MaskGrid,
    backend: &mut B,
    opt: &LatentOptions,
    rng: &mut RandomSource,
) -> Result<LatentResult, LatentFailure> {
    let mut trace = Vec::with_capacity(opt.iterations + 1);
    macro_rules! attempt {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(error) => {
                    return Err(LatentFailure {
                        error,
                        partial_trace: trace,
                    })
                }
            }
        };
    }
    attempt!(opt.validate());
    if z0.len() != backend.latent_dim() {
        attempt!(Err(Error::Dimension(format!(
            "starting latent has {} entries, backend expects {}",
            z0.len(),
            backend.latent_dim()
        ))));
    }
    let mut eval = |z: &[f64]| loss_terms(z, image, weight, &mut *backend, opt.lambda_dis);

    let mut best = attempt!(eval(&z0));
    let mut best_z = z0.clone();
    trace.push(best.total);
    if opt.iterations == 0 {
        return Ok(LatentResult {
            z: best_z,
            loss: best,
            trace,
        });
    }

    let stability = 0.1 * opt.iterations as f64;
    let mut gain: Option<f64> = None;
    let mut theta = z0;
    let dim = theta.len();
    let mut plus = vec![0.0; dim];
    let mut minus = vec![0.0; dim];
    for k in 0..opt.iterations {
        let ck = opt.perturbation / ((k + 1) as f64).powf(PERTURBATION_DECAY);
        let delta: Vec<f64> = (0..dim).map(|_| rng.sign()).collect();
        for i in 0..dim {
            plus[i] = theta[i] + ck * delta[i];
            minus[i] = theta[i] - ck * delta[i];
        }
        let y_plus = attempt!(eval(&plus));
        let y_minus = attempt!(eval(&minus));
        for (y, z) in [(&y_plus, &plus), (&y_minus, &minus)] {
            if y.total < best.total {
                best = *y;
                best_z.clone_from(z);
            }
        }
        let slope = (y_plus.total - y_minus.total) / (2.0 * ck);
        if gain.is_none() && slope.abs() > f64::EPSILON {
            gain = Some(opt.step_size * (1.0 + stability).powf(GAIN_DECAY) / slope.abs());
        }
        if let Some(a) = gain {
            let ak = a / (k as f64 + 1.0 + stability).powf(GAIN_DECAY);
            for i in 0..dim {
                theta[i] -= ak * slope * delta[i];
            }
        }
        trace.push(best.total);
    }

    let last = attempt!(eval(&theta));
    if last.total < best.total {
        best = last;
        best_z = theta;
        if let Some(t) = trace.last_mut() {
            *t = best.total;
        }
    }
    Ok(LatentResult {
        z: best_z,
        loss: best,
        trace,
    })
}
