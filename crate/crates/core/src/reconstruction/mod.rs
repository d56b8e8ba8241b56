//! Alternate explanations: regenerate the salient box through a generator's
//! latent space while matching the context around it.
//!
//! The loss is evaluated at the generator's native resolution (image and
//! weight mask are bilinearly resized to it). The reassembled image keeps the
//! original pixels outside the box at their native resolution and takes the
//! generated content, resized to the image size, inside it.

pub mod generative;
pub mod latent;

use serde::{Deserialize, Serialize};

use crate::backend::Classifier;
use crate::error::{Error, Result};
use crate::tensor::{resample_grid, resize_image, ImageTensor, MaskGrid, RandomSource, Rect, CHANNELS};

pub use generative::{
    spawn_generative, ConstantDiscriminator, Discriminator, ExemplarGenerator, ExternalGenerative, GenerativeBackend,
    GenerativeDescriptor, LinearGenerator, Paired,
};
pub use latent::{optimize_latent, optimize_latent_from, sample_latent, LatentFailure, LatentOptions, LatentResult};

pub const DEFAULT_KERNEL: usize = 15;
pub const DEFAULT_SAMPLES: usize = 64;
pub const DEFAULT_LATENT_DIM: usize = 64;
pub const DEFAULT_LAMBDA_DIS: f64 = 0.003;
pub const DEFAULT_FACTORS: [f64; 6] = [1.0, 0.9, 0.8, 0.7, 0.6, 0.5];

/// Binary box grid `B` at some resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBoxGrid {
    pub height: usize,
    pub width: usize,
    pub rect: Rect,
}

impl BoundingBoxGrid {
    pub fn new(height: usize, width: usize, rect: Rect) -> Result<Self> {
        rect.check_fits(height, width)?;
        Ok(Self { height, width, rect })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// `B` as a 0/1 grid.
    pub fn grid(&self) -> MaskGrid {
        MaskGrid::indicator(self.height, self.width, &self.rect)
    }

    /// The same box in an `h x w` frame: edges are scaled proportionally and
    /// rounded outward, so the box never shrinks to nothing.
    pub fn resized_to(&self, height: usize, width: usize) -> BoundingBoxGrid {
        if (height, width) == self.dims() {
            return *self;
        }
        let sy = height as f64 / self.height as f64;
        let sx = width as f64 / self.width as f64;
        let top = ((self.rect.top as f64 * sy).floor() as usize).min(height - 1);
        let left = ((self.rect.left as f64 * sx).floor() as usize).min(width - 1);
        let bottom = ((self.rect.bottom() as f64 * sy).ceil() as usize).clamp(top + 1, height);
        let right = ((self.rect.right() as f64 * sx).ceil() as usize).clamp(left + 1, width);
        BoundingBoxGrid {
            height,
            width,
            rect: Rect::new(top, left, bottom - top, right - left),
        }
    }
}

/// Smallest box holding every pixel with saliency `>= threshold * max`.
pub fn bounding_box(saliency: &MaskGrid, threshold: f64) -> Result<BoundingBoxGrid> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Argument(format!("threshold {threshold} outside [0, 1]")));
    }
    let (max, min) = (saliency.max(), saliency.min());
    if max <= 0.0 || max == min {
        return Err(Error::Degenerate("saliency map is constant or empty".into()));
    }
    let cut = threshold * max;
    let (h, w) = saliency.dims();
    let (mut top, mut left, mut bottom, mut right) = (h, w, 0, 0);
    for r in 0..h {
        for c in 0..w {
            if saliency.get(r, c) >= cut {
                top = top.min(r);
                left = left.min(c);
                bottom = bottom.max(r + 1);
                right = right.max(c + 1);
            }
        }
    }
    BoundingBoxGrid::new(h, w, Rect::new(top, left, bottom - top, right - left))
}

/// Shrinks `rect` by `factor` about its center, keeping each side >= 1 and
/// the result inside an `h x w` frame.
pub fn scale_box(rect: &Rect, factor: f64, dims: (usize, usize)) -> Result<Rect> {
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(Error::Argument(format!("box factor {factor} outside (0, 1]")));
    }
    let scaled = |len: usize| (((len as f64 * factor) + 0.5).floor() as usize).clamp(1, len.max(1));
    let (height, width) = (scaled(rect.height), scaled(rect.width));
    let top = rect.top + (rect.height - height).div_ceil(2);
    let left = rect.left + (rect.width - width).div_ceil(2);
    let top = top.min(dims.0.saturating_sub(height));
    let left = left.min(dims.1.saturating_sub(width));
    let out = Rect::new(top, left, height, width);
    out.check_fits(dims.0, dims.1)?;
    Ok(out)
}

/// `W = (1 - B) * conv(B, K_s)` with the uniform `s x s` kernel and zero
/// padding: the fraction of each outside pixel's window that covers the box.
pub fn weight_mask(boxed: &BoundingBoxGrid, kernel: usize) -> Result<MaskGrid> {
    if kernel < 3 || kernel.is_multiple_of(2) {
        return Err(Error::Argument(format!("kernel size {kernel} must be odd and >= 3")));
    }
    let half = kernel / 2;
    let rect = boxed.rect;
    let overlap = |at: usize, lo: usize, hi: usize| {
        let start = at.saturating_sub(half).max(lo);
        let end = (at + half + 1).min(hi);
        end.saturating_sub(start)
    };
    let norm = (kernel * kernel) as f64;
    let rows: Vec<usize> = (0..boxed.height).map(|r| overlap(r, rect.top, rect.bottom())).collect();
    let cols: Vec<usize> = (0..boxed.width).map(|c| overlap(c, rect.left, rect.right())).collect();
    Ok(MaskGrid::from_fn(boxed.height, boxed.width, |r, c| {
        if rect.contains(r, c) {
            0.0
        } else {
            (rows[r] * cols[c]) as f64 / norm
        }
    }))
}

/// Weighted squared error `sum W (G - I)^2` over pixels and channels.
pub fn context_loss(generated: &ImageTensor, image: &ImageTensor, weight: &MaskGrid) -> Result<f64> {
    if generated.dims() != image.dims() || weight.dims() != image.dims() {
        return Err(Error::Dimension(format!(
            "context loss needs equal sizes, got generated {:?}, image {:?}, weight {:?}",
            generated.dims(),
            image.dims(),
            weight.dims()
        )));
    }
    Ok(generated
        .data()
        .chunks_exact(CHANNELS)
        .zip(image.data().chunks_exact(CHANNELS))
        .zip(weight.data())
        .filter(|(_, &w)| w != 0.0)
        .map(|((g, i), &w)| w * g.iter().zip(i).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum())
}

/// `-D(G(z))`.
pub fn discriminative_loss<B: GenerativeBackend + ?Sized>(backend: &mut B, generated: &ImageTensor) -> Result<f64> {
    Ok(-backend.discriminate(generated)?)
}

pub fn total_loss(context: f64, discriminative: f64, lambda_dis: f64) -> f64 {
    context + lambda_dis * discriminative
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub context: f64,
    /// `None` when the discriminator was not consulted (`lambda_dis = 0`).
    pub discriminative: Option<f64>,
    pub total: f64,
}

/// Generates `G(z)` and evaluates the combined loss. The discriminator is
/// skipped entirely when `lambda_dis` is zero.
pub fn loss_terms<B: GenerativeBackend + ?Sized>(
    z: &[f64],
    image: &ImageTensor,
    weight: &MaskGrid,
    backend: &mut B,
    lambda_dis: f64,
) -> Result<LossBreakdown> {
    let generated = backend.generate(z)?;
    let context = context_loss(&generated, image, weight)?;
    let discriminative = if lambda_dis > 0.0 {
        Some(discriminative_loss(backend, &generated)?)
    } else {
        None
    };
    Ok(LossBreakdown {
        context,
        discriminative,
        total: total_loss(context, discriminative.unwrap_or(0.0), lambda_dis),
    })
}

/// `I_rec = I * (1 - B) + B * G`.
pub fn reconstruct(image: &ImageTensor, boxed: &MaskGrid, generated: &ImageTensor) -> Result<ImageTensor> {
    if boxed.dims() != image.dims() || generated.dims() != image.dims() {
        return Err(Error::Dimension(format!(
            "reconstruct needs equal sizes, got image {:?}, box {:?}, generated {:?}",
            image.dims(),
            boxed.dims(),
            generated.dims()
        )));
    }
    let mut out = image.clone();
    for (p, &b) in boxed.data().iter().enumerate() {
        if b == 0.0 {
            continue;
        }
        let g = generated.pixel(p);
        for (o, gv) in out.pixel_mut(p).iter_mut().zip(g) {
            *o = *o * (1.0 - b) + b * gv;
        }
    }
    Ok(out)
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Welch two-sample t statistic `(mean_a - mean_b) / sqrt(s_a^2/n_a + s_b^2/n_b)`.
pub fn t_score(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Argument("t score needs at least two values per sample".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let se2 = va / a.len() as f64 + vb / b.len() as f64;
    if se2 <= 0.0 {
        return Err(Error::Degenerate("both samples have zero variance".into()));
    }
    Ok((ma - mb) / se2.sqrt())
}

/// Channel values of every pixel inside `rect`.
pub fn region_values(image: &ImageTensor, rect: &Rect) -> Vec<f64> {
    let mut out = Vec::with_capacity(rect.area() * CHANNELS);
    for r in rect.top..rect.bottom() {
        for c in rect.left..rect.right() {
            out.extend_from_slice(image.pixel(r * image.width() + c));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub seed: u64,
    pub z: Vec<f64>,
    pub context_loss: Option<f64>,
    pub discriminative_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub target_score: Option<f64>,
    pub predicted: Option<usize>,
    pub accepted: bool,
    /// Reconstructed versus original box pixels.
    pub t_score: Option<f64>,
    pub error: Option<String>,
    #[serde(skip)]
    pub image: Option<ImageTensor>,
}

impl SampleRecord {
    fn failed(index: usize, seed: u64, error: &Error) -> Self {
        Self {
            index,
            seed,
            z: Vec::new(),
            context_loss: None,
            discriminative_loss: None,
            final_loss: None,
            target_score: None,
            predicted: None,
            accepted: false,
            t_score: None,
            error: Some(error.to_string()),
            image: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub rect: Rect,
    pub samples: Vec<SampleRecord>,
    pub accepted_count: usize,
    pub failed_count: usize,
    /// Mean target score over accepted samples.
    pub mean_accuracy: Option<f64>,
    pub mean_final_loss: Option<f64>,
    pub mean_context_loss: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Runs `samples` independent latent searches and scores each reassembled
/// image with `classifier`. Per-sample failures are recorded and the batch
/// continues.
#[allow(clippy::too_many_arguments)]
pub fn batch_reconstruct<G, C>(
    image: &ImageTensor,
    boxed: &BoundingBoxGrid,
    weight: &MaskGrid,
    generator: &mut G,
    classifier: &mut C,
    target: usize,
    samples: usize,
    opt: &LatentOptions,
    rng: &mut RandomSource,
) -> Result<ReconstructionReport>
where
    G: GenerativeBackend + ?Sized,
    C: Classifier + ?Sized,
{
    if samples == 0 {
        return Err(Error::Argument("sample count must be >= 1".into()));
    }
    if target >= classifier.class_count() {
        return Err(Error::Argument(format!(
            "target {target} out of range for {} classes",
            classifier.class_count()
        )));
    }
    if boxed.dims() != image.dims() || weight.dims() != image.dims() {
        return Err(Error::Dimension("box and weight mask must match the image".into()));
    }
    opt.validate()?;
    let (gh, gw) = generator.output_dims();
    let small_image = resize_image(image, gh, gw);
    let small_weight = resample_grid(weight, gh, gw);
    let box_grid = boxed.grid();
    let original = region_values(image, &boxed.rect);

    let mut records = Vec::with_capacity(samples);
    for index in 0..samples {
        let seed = rng.next_u64();
        let sample_opt = LatentOptions { seed, ..*opt };
        let mut run = || -> Result<SampleRecord> {
            let found = optimize_latent(&small_image, &small_weight, generator, &sample_opt)?;
            let generated = generator.generate(&found.z)?;
            let full = resize_image(&generated, image.height(), image.width());
            let rebuilt = reconstruct(image, &box_grid, &full)?;
            let scored = match classifier.input_dims() {
                Some((h, w)) if (h, w) != rebuilt.dims() => resize_image(&rebuilt, h, w),
                _ => rebuilt.clone(),
            };
            let scores = classifier.score(&scored)?;
            let predicted = scores.argmax();
            Ok(SampleRecord {
                index,
                seed,
                context_loss: Some(found.loss.context),
                discriminative_loss: found.loss.discriminative,
                final_loss: Some(found.loss.total),
                target_score: Some(scores.get(target)?),
                predicted: Some(predicted),
                accepted: predicted == target,
                t_score: t_score(&region_values(&rebuilt, &boxed.rect), &original).ok(),
                error: None,
                z: found.z,
                image: Some(rebuilt),
            })
        };
        match run() {
            Ok(record) => records.push(record),
            Err(e) => {
                log::warn!("reconstruction sample {index} failed: {e}");
                records.push(SampleRecord::failed(index, seed, &e));
            }
        }
    }

    let accepted = || records.iter().filter(|r| r.accepted);
    Ok(ReconstructionReport {
        rect: boxed.rect,
        accepted_count: accepted().count(),
        failed_count: records.iter().filter(|r| r.error.is_some()).count(),
        mean_accuracy: mean(accepted().filter_map(|r| r.target_score)),
        mean_final_loss: mean(records.iter().filter_map(|r| r.final_loss)),
        mean_context_loss: mean(records.iter().filter_map(|r| r.context_loss)),
        samples: records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionConfig {
    pub samples: usize,
    pub kernel: usize,
    /// Relative threshold used to derive the box from a saliency map.
    pub threshold: f64,
    pub latent: LatentOptions,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            samples: DEFAULT_SAMPLES,
            kernel: DEFAULT_KERNEL,
            threshold: crate::metrics::DEFAULT_THRESHOLD,
            latent: LatentOptions::default(),
        }
    }
}

/// Box from saliency, weight mask, then a batch of reconstructions.
pub fn reconstruct_from_saliency<G, C>(
    image: &ImageTensor,
    saliency: &MaskGrid,
    generator: &mut G,
    classifier: &mut C,
    target: usize,
    config: &ReconstructionConfig,
    rng: &mut RandomSource,
) -> Result<ReconstructionReport>
where
    G: GenerativeBackend + ?Sized,
    C: Classifier + ?Sized,
{
    if saliency.dims() != image.dims() {
        return Err(Error::Dimension("saliency must match the image".into()));
    }
    let boxed = bounding_box(saliency, config.threshold)?;
    let weight = weight_mask(&boxed, config.kernel)?;
    batch_reconstruct(
        image,
        &boxed,
        &weight,
        generator,
        classifier,
        target,
        config.samples,
        &config.latent,
        rng,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub factor: f64,
    pub rect: Rect,
    pub sample_count: usize,
    pub accepted_count: usize,
    pub mean_accuracy: Option<f64>,
    pub mean_final_loss: Option<f64>,
    pub mean_context_loss: Option<f64>,
}

/// Shrinks the saliency box by each factor and reconstructs. Every factor
/// reuses a fresh `RandomSource(seed)`, so all sizes start from the same
/// latents.
#[allow(clippy::too_many_arguments)]
pub fn box_sweep<G, C>(
    image: &ImageTensor,
    saliency: &MaskGrid,
    generator: &mut G,
    classifier: &mut C,
    target: usize,
    factors: &[f64],
    config: &ReconstructionConfig,
    seed: u64,
) -> Result<Vec<SweepRecord>>
where
    G: GenerativeBackend + ?Sized,
    C: Classifier + ?Sized,
{
    if factors.is_empty() {
        return Err(Error::Argument("no box factors given".into()));
    }
    if saliency.dims() != image.dims() {
        return Err(Error::Dimension("saliency must match the image".into()));
    }
    let base = bounding_box(saliency, config.threshold)?;
    factors
        .iter()
        .enumerate()
        .map(|(i, &factor)| {
            let mut run = || -> Result<SweepRecord> {
                let rect = scale_box(&base.rect, factor, image.dims())?;
                let boxed = BoundingBoxGrid::new(image.height(), image.width(), rect)?;
                let weight = weight_mask(&boxed, config.kernel)?;
                let mut rng = RandomSource::new(seed);
                let report = batch_reconstruct(
                    image,
                    &boxed,
                    &weight,
                    generator,
                    classifier,
                    target,
                    config.samples,
                    &config.latent,
                    &mut rng,
                )?;
                log::info!(
                    "factor {factor}: {}/{} accepted",
                    report.accepted_count,
                    report.samples.len()
                );
                Ok(SweepRecord {
                    factor,
                    rect,
                    sample_count: report.samples.len(),
                    accepted_count: report.accepted_count,
                    mean_accuracy: report.mean_accuracy,
                    mean_final_loss: report.mean_final_loss,
                    mean_context_loss: report.mean_context_loss,
                })
            };
            run().map_err(|e| e.at_index(i))
        })
        .collect()
}
