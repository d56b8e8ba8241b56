//! Faithfulness and localization metrics for saliency maps.
//!
//! Deletion zeroes pixels in descending saliency order and records the target
//! score after each chunk; insertion starts from a baseline image and restores
//! original pixels in the same order. Both curves use `ceil(H*W / steps)`
//! pixels per step and issue exactly `steps + 1` backend calls. Ties in
//! saliency are broken by row-major index.

use serde::{Deserialize, Serialize};

use crate::backend::Classifier;
use crate::error::{Error, Result};
use crate::optimizer::{Explainer, OptimizerConfig};
use crate::tensor::{ImageTensor, MaskGrid, RandomSource, Rect};

pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_BLUR_SIGMA: f64 = 5.0;
pub const BLUR_KERNEL: usize = 11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCurve {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl MetricCurve {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(Error::Argument("curve needs matching xs/ys of length >= 2".into()));
        }
        if xs[0] != 0.0 || *xs.last().unwrap() != 1.0 || xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Argument("curve xs must increase strictly from 0 to 1".into()));
        }
        if ys.iter().any(|y| !y.is_finite()) {
            return Err(Error::Argument("curve ys must be finite".into()));
        }
        Ok(Self { xs, ys })
    }
}

/// Trapezoidal area under the curve.
pub fn auc(curve: &MetricCurve) -> f64 {
    curve
        .xs
        .windows(2)
        .zip(curve.ys.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) * 0.5)
        .sum()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Baseline {
    #[default]
    Zeros,
    Blur {
        sigma: f64,
    },
}

impl Baseline {
    pub fn name(&self) -> String {
        match self {
            Baseline::Zeros => "zeros".into(),
            Baseline::Blur { sigma } => format!("blur:{sigma}"),
        }
    }

    pub fn render(&self, image: &ImageTensor) -> ImageTensor {
        match self {
            Baseline::Zeros => ImageTensor::filled(image.height(), image.width(), 0.0),
            Baseline::Blur { sigma } => gaussian_blur(image, *sigma, BLUR_KERNEL),
        }
    }
}

impl std::str::FromStr for Baseline {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zeros" => Ok(Baseline::Zeros),
            "blur" => Ok(Baseline::Blur {
                sigma: DEFAULT_BLUR_SIGMA,
            }),
            other => {
                let sigma = other
                    .strip_prefix("blur:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|s| *s > 0.0)
                    .ok_or_else(|| Error::Argument(format!("unknown baseline `{other}`")))?;
                Ok(Baseline::Blur { sigma })
            }
        }
    }
}

/// Separable Gaussian blur with a `size x size` normalized kernel and
/// edge-replicating borders.
pub fn gaussian_blur(image: &ImageTensor, sigma: f64, size: usize) -> ImageTensor {
    let half = (size / 2) as isize;
    let mut kernel: Vec<f64> = (-half..=half)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let (h, w) = image.dims();
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let horiz = ImageTensor::from_fn(h, w, |r, c, ch| {
        kernel
            .iter()
            .enumerate()
            .map(|(k, wt)| wt * image.get(r, clampi(c as isize + k as isize - half, w), ch))
            .sum()
    });
    ImageTensor::from_fn(h, w, |r, c, ch| {
        kernel
            .iter()
            .enumerate()
            .map(|(k, wt)| wt * horiz.get(clampi(r as isize + k as isize - half, h), c, ch))
            .sum()
    })
}

/// Pixel indices by descending saliency, ties by ascending row-major index.
pub fn saliency_order(saliency: &MaskGrid) -> Vec<usize> {
    let data = saliency.data();
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| data[b].total_cmp(&data[a]).then(a.cmp(&b)));
    order
}

fn chunk_bounds(pixels: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 {
        return Err(Error::Argument("steps must be at least 1".into()));
    }
    let chunk = pixels.div_ceil(steps);
    if (steps - 1) * chunk >= pixels {
        return Err(Error::Argument(format!(
            "{steps} steps of {chunk} pixels overshoot a {pixels}-pixel image"
        )));
    }
    Ok((0..=steps).map(|i| (i * chunk).min(pixels)).collect())
}

fn check_order(order: &[usize], pixels: usize) -> Result<()> {
    if order.len() != pixels {
        return Err(Error::Dimension(format!(
            "ordering covers {} pixels, image has {pixels}",
            order.len()
        )));
    }
    let mut seen = vec![false; pixels];
    for &i in order {
        if i >= pixels || std::mem::replace(&mut seen[i], true) {
            return Err(Error::Argument("ordering is not a permutation".into()));
        }
    }
    Ok(())
}

// Starts from `start`, copies pixels from `fill` chunk by chunk in `order`,
// scoring before the first chunk and after each one.
fn progressive_curve<C: Classifier + ?Sized>(
    start: &ImageTensor,
    fill: &ImageTensor,
    order: &[usize],
    backend: &mut C,
    target: usize,
    steps: usize,
) -> Result<MetricCurve> {
    let pixels = start.pixel_count();
    check_order(order, pixels)?;
    let bounds = chunk_bounds(pixels, steps)?;
    let mut current = start.clone();
    let mut xs = Vec::with_capacity(steps + 1);
    let mut ys = Vec::with_capacity(steps + 1);
    for (i, &upto) in bounds.iter().enumerate() {
        if i > 0 {
            for &p in &order[bounds[i - 1]..upto] {
                current.pixel_mut(p).copy_from_slice(fill.pixel(p));
            }
        }
        xs.push(upto as f64 / pixels as f64);
        ys.push(backend.score(&current).map_err(|e| e.at_index(i))?.get(target)?);
    }
    MetricCurve::new(xs, ys)
}

fn check_saliency(image: &ImageTensor, saliency: &MaskGrid) -> Result<()> {
    image.check_same_dims(saliency.height(), saliency.width(), "saliency map")
}

/// Deletion curve with an explicit pixel ordering.
pub fn deletion_curve_ordered<C: Classifier + ?Sized>(
    image: &ImageTensor,
    order: &[usize],
    backend: &mut C,
    target: usize,
    steps: usize,
) -> Result<MetricCurve> {
    let zeros = ImageTensor::filled(image.height(), image.width(), 0.0);
    progressive_curve(image, &zeros, order, backend, target, steps)
}

pub fn deletion_curve<C: Classifier + ?Sized>(
    image: &ImageTensor,
    saliency: &MaskGrid,
    backend: &mut C,
    target: usize,
    steps: usize,
) -> Result<MetricCurve> {
    check_saliency(image, saliency)?;
    deletion_curve_ordered(image, &saliency_order(saliency), backend, target, steps)
}

/// Insertion curve with an explicit pixel ordering.
pub fn insertion_curve_ordered<C: Classifier + ?Sized>(
    image: &ImageTensor,
    order: &[usize],
    backend: &mut C,
    target: usize,
    steps: usize,
    baseline: Baseline,
) -> Result<MetricCurve> {
    progressive_curve(&baseline.render(image), image, order, backend, target, steps)
}

pub fn insertion_curve<C: Classifier + ?Sized>(
    image: &ImageTensor,
    saliency: &MaskGrid,
    backend: &mut C,
    target: usize,
    steps: usize,
    baseline: Baseline,
) -> Result<MetricCurve> {
    check_saliency(image, saliency)?;
    insertion_curve_ordered(image, &saliency_order(saliency), backend, target, steps, baseline)
}

/// Uniformly random pixel ordering, the control for saliency orderings.
pub fn random_order(pixels: usize, rng: &mut RandomSource) -> Vec<usize> {
    rng.permutation(pixels)
}

/// Annotated object box, JSON `{"x":..,"y":..,"width":..,"height":..}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationBox {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl AnnotationBox {
    pub fn rect(&self) -> Rect {
        Rect::new(self.y, self.x, self.height, self.width)
    }
}

impl From<Rect> for AnnotationBox {
    fn from(r: Rect) -> Self {
        Self {
            x: r.left,
            y: r.top,
            width: r.width,
            height: r.height,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IouScore {
    pub percent: f64,
    /// Set when the thresholded saliency region is empty.
    pub degenerate: bool,
}

/// Pixels with saliency at or above `threshold * max`. Empty when the map has
/// no positive value.
pub fn salient_region(saliency: &MaskGrid, threshold: f64) -> Vec<bool> {
    let max = saliency.max();
    if max <= 0.0 {
        return vec![false; saliency.len()];
    }
    let cut = threshold * max;
    saliency.data().iter().map(|&v| v >= cut).collect()
}

/// Intersection over union (in percent) of the thresholded saliency region
/// and the annotated box.
pub fn pointing_iou(saliency: &MaskGrid, annotation: &AnnotationBox, threshold: f64) -> Result<IouScore> {
    let rect = annotation.rect();
    if !rect.fits(saliency.height(), saliency.width()) {
        return Err(Error::Argument(format!(
            "annotation {annotation:?} outside {}x{} saliency map",
            saliency.height(),
            saliency.width()
        )));
    }
    let region = salient_region(saliency, threshold);
    let w = saliency.width();
    let (mut inter, mut union) = (0usize, 0usize);
    for (i, &s) in region.iter().enumerate() {
        let t = rect.contains(i / w, i % w);
        inter += (s && t) as usize;
        union += (s || t) as usize;
    }
    let degenerate = !region.iter().any(|&s| s);
    let percent = if union == 0 {
        0.0
    } else {
        100.0 * inter as f64 / union as f64
    };
    Ok(IouScore { percent, degenerate })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub steps: usize,
    pub baseline: Baseline,
    pub threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            baseline: Baseline::Zeros,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub iteration: usize,
    pub insertion_auc: f64,
    pub deletion_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub checkpoints: Vec<ConvergencePoint>,
}

/// Runs the optimizer and scores the saliency map snapshot at each requested
/// iteration with insertion and deletion AUC.
pub fn convergence_track<C: Classifier + ?Sized>(
    image: &ImageTensor,
    target: usize,
    backend: &mut C,
    config: &OptimizerConfig,
    checkpoints: &[usize],
    eval: &EvalConfig,
) -> Result<ConvergenceTrace> {
    if checkpoints.is_empty()
        || checkpoints[0] == 0
        || checkpoints.windows(2).any(|w| w[1] <= w[0])
        || *checkpoints.last().unwrap() > config.iterations
    {
        return Err(Error::Argument(format!(
            "checkpoints must increase strictly within [1, {}]",
            config.iterations
        )));
    }
    if target >= backend.class_count() {
        return Err(Error::Argument(format!("target class {target} out of range")));
    }
    crate::backend::check_input_dims(backend.input_dims(), image)?;
    let mut explainer = Explainer::new(image, target, config)?;
    let mut points = Vec::with_capacity(checkpoints.len());
    for &at in checkpoints {
        while explainer.iteration() < at {
            explainer.advance(backend)?;
        }
        let saliency = explainer.saliency();
        let ins = insertion_curve(image, &saliency, backend, target, eval.steps, eval.baseline)?;
        let del = deletion_curve(image, &saliency, backend, target, eval.steps)?;
        points.push(ConvergencePoint {
            iteration: at,
            insertion_auc: auc(&ins),
            deletion_auc: auc(&del),
        });
    }
    Ok(ConvergenceTrace { checkpoints: points })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

/// Metric report written by the `eval` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub insertion_auc: f64,
    pub deletion_auc: f64,
    pub insertion_auc_percent: f64,
    pub deletion_auc_percent: f64,
    pub iou_percent: Option<f64>,
    pub iou_degenerate: Option<bool>,
    pub steps: usize,
    pub threshold: f64,
    pub baseline: String,
    pub curve: MetricCurve,
    pub deletion_curve: MetricCurve,
}

/// Evaluates a saliency map with both curves and, when given, the IOU against
/// an annotation.
pub fn evaluate<C: Classifier + ?Sized>(
    image: &ImageTensor,
    saliency: &MaskGrid,
    backend: &mut C,
    target: usize,
    annotation: Option<&AnnotationBox>,
    eval: &EvalConfig,
) -> Result<MetricReport> {
    let ins = insertion_curve(image, saliency, backend, target, eval.steps, eval.baseline)?;
    let del = deletion_curve(image, saliency, backend, target, eval.steps)?;
    let iou = annotation
        .map(|a| pointing_iou(saliency, a, eval.threshold))
        .transpose()?;
    let (ia, da) = (auc(&ins), auc(&del));
    Ok(MetricReport {
        insertion_auc: ia,
        deletion_auc: da,
        insertion_auc_percent: 100.0 * ia,
        deletion_auc_percent: 100.0 * da,
        iou_percent: iou.map(|s| s.percent),
        iou_degenerate: iou.map(|s| s.degenerate),
        steps: eval.steps,
        threshold: eval.threshold,
        baseline: eval.baseline.name(),
        curve: ins,
        deletion_curve: del,
    })
}
