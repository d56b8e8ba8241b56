//! Empirical mask optimization.
//!
//! A low-resolution mask starts as a random binary grid. Every iteration
//! upsamples it, scores the masked image, and then resamples the on/off
//! partition from the clamped target score `p`: `round(n_on * p)` cells of the
//! on-set are kept (value multiplied by `p`) and `round(n_off * (1 - p))` cells
//! of the off-set are re-activated (value `p`). A uniform bump
//! `eta * dV * dp`, built from the change in total variation and in score,
//! is then added to the on-set and the grid clamped to `[0, 1]`.
//!
//! The per-step rule is exposed as [`step`]; [`explain`] runs the loop and
//! turns the visited masks into a saliency map (see [`Readout`]).

use serde::{Deserialize, Serialize};

use crate::backend::Classifier;
use crate::error::{Error, Result};
use crate::tensor::{
    apply_mask, bilinear_resize, round_count, sample_subset, total_variation, ImageTensor, MaskGrid, PixelIndexSet,
    RandomSource,
};

/// How the visited masks become the returned saliency map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Readout {
    /// Per-pixel score-weighted average of every scored mask,
    /// `sum_i p_i M_i(x) / sum_i M_i(x)`.
    #[default]
    ScoreWeighted,
    /// The mask left after the last iteration.
    FinalIterate,
}

impl std::str::FromStr for Readout {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "score-weighted" => Ok(Readout::ScoreWeighted),
            "final-iterate" => Ok(Readout::FinalIterate),
            other => Err(Error::Argument(format!(
                "unknown readout `{other}` (expected score-weighted or final-iterate)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub iterations: usize,
    pub grid: (usize, usize),
    pub initial_on_fraction: f64,
    pub learning_rate: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub readout: Readout,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            grid: (7, 7),
            initial_on_fraction: 0.5,
            learning_rate: 1.0,
            seed: 0,
            checkpoint_every: 100,
            readout: Readout::ScoreWeighted,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Argument("iterations must be at least 1".into()));
        }
        if self.grid.0 == 0 || self.grid.1 == 0 || self.grid.0 * self.grid.1 < 2 {
            return Err(Error::Argument(format!(
                "grid {:?} must have at least 2 cells",
                self.grid
            )));
        }
        if !(self.initial_on_fraction > 0.0 && self.initial_on_fraction <= 1.0) {
            return Err(Error::Argument(format!(
                "initial_on_fraction {} must be in (0, 1]",
                self.initial_on_fraction
            )));
        }
        if !self.learning_rate.is_finite() {
            return Err(Error::Argument("learning_rate must be finite".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Argument("checkpoint_every must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub mask: MaskGrid,
    pub on_set: PixelIndexSet,
    pub off_set: PixelIndexSet,
    /// Clamped score of the previous iteration; `None` before the first step.
    pub prev_score: Option<f64>,
    pub prev_variation: f64,
    pub iteration: usize,
}

/// Random binary starting mask with `round(fraction * h * w)` cells on.
pub fn init_mask(config: &OptimizerConfig, rng: &mut RandomSource) -> Result<OptimizerState> {
    config.validate()?;
    let (h, w) = config.grid;
    let n = h * w;
    let all = PixelIndexSet::all(n);
    let on_set = sample_subset(&all, round_count(config.initial_on_fraction * n as f64, n), rng)?;
    let off_set = on_set.complement(n);
    let mut mask = MaskGrid::constant(h, w, 0.0);
    for cell in on_set.iter() {
        mask.data_mut()[cell] = 1.0;
    }
    Ok(OptimizerState {
        prev_variation: total_variation(&mask),
        mask,
        on_set,
        off_set,
        prev_score: None,
        iteration: 0,
    })
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: OptimizerState,
    /// Target score as returned by the backend.
    pub raw_score: f64,
    /// Target score clamped to `[0, 1]`.
    pub score: f64,
    /// The upsampled mask that was scored this step.
    pub scored_mask: MaskGrid,
}

/// One optimizer iteration. `state` is left untouched; the successor is
/// returned in the outcome.
pub fn step<C: Classifier + ?Sized>(
    state: &OptimizerState,
    backend: &mut C,
    image: &ImageTensor,
    target: usize,
    config: &OptimizerConfig,
    rng: &mut RandomSource,
) -> Result<StepOutcome> {
    let upsampled = bilinear_resize(&state.mask, image.height(), image.width())?;
    let raw_score = backend.score(&apply_mask(image, &upsampled)?)?.get(target)?;
    let score = raw_score.clamp(0.0, 1.0);
    if score != raw_score {
        log::debug!("target score {raw_score} clamped to {score}");
    }

    let n = state.mask.len();
    let keep = round_count(state.on_set.len() as f64 * score, state.on_set.len());
    let revive = round_count(state.off_set.len() as f64 * (1.0 - score), state.off_set.len());
    let kept = sample_subset(&state.on_set, keep, rng)?;
    let revived = sample_subset(&state.off_set, revive, rng)?;

    let mut mask = MaskGrid::constant(state.mask.height(), state.mask.width(), 0.0);
    {
        let (old, new) = (state.mask.data(), mask.data_mut());
        for cell in kept.iter() {
            new[cell] = old[cell] * score;
        }
        for cell in revived.iter() {
            new[cell] = score;
        }
    }
    let on_set = kept.union(&revived);
    let off_set = on_set.complement(n);

    let variation = total_variation(&mask);
    let score_change = state.prev_score.map_or(0.0, |prev| score - prev);
    let bump = config.learning_rate * (variation - state.prev_variation) * score_change;
    if bump != 0.0 {
        let data = mask.data_mut();
        for cell in on_set.iter() {
            data[cell] = (data[cell] + bump).clamp(0.0, 1.0);
        }
    }

    Ok(StepOutcome {
        state: OptimizerState {
            mask,
            on_set,
            off_set,
            prev_score: Some(score),
            prev_variation: variation,
            iteration: state.iteration + 1,
        },
        raw_score,
        score,
        scored_mask: upsampled,
    })
}

/// Min-max rescale to `[0, 1]`; a constant grid maps to all zeros.
pub fn normalize_saliency(mask: &MaskGrid) -> MaskGrid {
    let (lo, hi) = (mask.min(), mask.max());
    if hi > lo {
        let span = hi - lo;
        mask.map(|v| (v - lo) / span)
    } else {
        mask.map(|_| 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: usize,
    pub score: f64,
    pub variation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyResult {
    /// Image-resolution map in `[0, 1]`.
    pub saliency: MaskGrid,
    /// Final low-resolution mask.
    pub raw_mask: MaskGrid,
    pub trace: Vec<Checkpoint>,
}

/// Incremental driver behind [`explain`], for callers that need to inspect
/// the saliency map part-way through.
#[derive(Debug)]
pub struct Explainer<'a> {
    image: &'a ImageTensor,
    target: usize,
    config: OptimizerConfig,
    rng: RandomSource,
    state: OptimizerState,
    weighted: Vec<f64>,
    exposure: Vec<f64>,
    trace: Vec<Checkpoint>,
}

impl<'a> Explainer<'a> {
    pub fn new(image: &'a ImageTensor, target: usize, config: &OptimizerConfig) -> Result<Self> {
        config.validate()?;
        if config.grid.0 > image.height() || config.grid.1 > image.width() {
            return Err(Error::Dimension(format!(
                "grid {:?} larger than image {:?}",
                config.grid,
                image.dims()
            )));
        }
        let mut rng = RandomSource::new(config.seed);
        let state = init_mask(config, &mut rng)?;
        let pixels = image.pixel_count();
        Ok(Self {
            image,
            target,
            config: config.clone(),
            rng,
            state,
            weighted: vec![0.0; pixels],
            exposure: vec![0.0; pixels],
            trace: Vec::new(),
        })
    }

    pub fn iteration(&self) -> usize {
        self.state.iteration
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn advance<C: Classifier + ?Sized>(&mut self, backend: &mut C) -> Result<()> {
        let iteration = self.state.iteration + 1;
        let outcome = step(
            &self.state,
            backend,
            self.image,
            self.target,
            &self.config,
            &mut self.rng,
        )
        .map_err(|e| e.at_iteration(iteration))?;
        for ((w, e), &m) in self
            .weighted
            .iter_mut()
            .zip(self.exposure.iter_mut())
            .zip(outcome.scored_mask.data())
        {
            *w += outcome.score * m;
            *e += m;
        }
        self.state = outcome.state;
        if iteration.is_multiple_of(self.config.checkpoint_every) {
            self.trace.push(Checkpoint {
                iteration,
                score: outcome.score,
                variation: self.state.prev_variation,
            });
        }
        Ok(())
    }

    /// Current saliency map at image resolution, normalized to `[0, 1]`.
    pub fn saliency(&self) -> MaskGrid {
        let (h, w) = self.image.dims();
        let map = match self.config.readout {
            Readout::ScoreWeighted => {
                let data = self
                    .weighted
                    .iter()
                    .zip(&self.exposure)
                    .map(|(&w, &e)| if e > 0.0 { w / e } else { 0.0 })
                    .collect();
                MaskGrid::new(h, w, data).expect("accumulators match image size")
            }
            Readout::FinalIterate => bilinear_resize(&self.state.mask, h, w).expect("grid checked against image"),
        };
        normalize_saliency(&map)
    }

    pub fn finish(self) -> SaliencyResult {
        SaliencyResult {
            saliency: self.saliency(),
            raw_mask: self.state.mask,
            trace: self.trace,
        }
    }
}

/// Runs the optimizer for `config.iterations` steps, issuing exactly one
/// backend score call per step.
pub fn explain<C: Classifier + ?Sized>(
    image: &ImageTensor,
    target: usize,
    backend: &mut C,
    config: &OptimizerConfig,
) -> Result<SaliencyResult> {
    if target >= backend.class_count() {
        return Err(Error::Argument(format!(
            "target class {target} out of range for {} classes",
            backend.class_count()
        )));
    }
    crate::backend::check_input_dims(backend.input_dims(), image)?;
    let mut explainer = Explainer::new(image, target, config)?;
    for _ in 0..config.iterations {
        explainer.advance(backend)?;
    }
    Ok(explainer.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ConstantClassifier, PlantedClassifier};
    use crate::tensor::Rect;

    fn config(grid: (usize, usize), fraction: f64) -> OptimizerConfig {
        OptimizerConfig {
            grid,
            initial_on_fraction: fraction,
            ..OptimizerConfig::default()
        }
    }

    #[test]
    fn init_full_and_half() {
        let s = init_mask(&config((4, 4), 1.0), &mut RandomSource::new(3)).unwrap();
        assert_eq!(s.on_set.len(), 16);
        assert!(s.mask.data().iter().all(|&v| v == 1.0));

        let s = init_mask(&config((8, 8), 0.5), &mut RandomSource::new(3)).unwrap();
        assert_eq!(s.on_set.len(), 32);
        assert_eq!(s.off_set.len(), 32);
        for cell in s.on_set.iter() {
            assert_eq!(s.mask.data()[cell], 1.0);
        }
        for cell in s.off_set.iter() {
            assert_eq!(s.mask.data()[cell], 0.0);
        }
        let again = init_mask(&config((8, 8), 0.5), &mut RandomSource::new(3)).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn config_validation() {
        assert!(config((1, 1), 0.5).validate().is_err());
        assert!(config((4, 4), 0.0).validate().is_err());
        assert!(config((4, 4), 1.5).validate().is_err());
        let mut c = config((4, 4), 0.5);
        c.iterations = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn score_one_keeps_partition() {
        let cfg = config((4, 4), 0.5);
        let mut rng = RandomSource::new(11);
        let s0 = init_mask(&cfg, &mut rng).unwrap();
        let img = ImageTensor::filled(8, 8, 0.5);
        let mut clf = ConstantClassifier::new(vec![1.0, 0.0]).unwrap();
        let out = step(&s0, &mut clf, &img, 0, &cfg, &mut rng).unwrap();
        assert_eq!(out.state.on_set, s0.on_set);
        assert_eq!(out.state.mask, s0.mask);
    }

    #[test]
    fn score_zero_flips_partition() {
        let cfg = config((4, 4), 0.5);
        let mut rng = RandomSource::new(12);
        let s0 = init_mask(&cfg, &mut rng).unwrap();
        let img = ImageTensor::filled(8, 8, 0.5);
        let mut clf = ConstantClassifier::new(vec![0.0, 1.0]).unwrap();
        let out = step(&s0, &mut clf, &img, 0, &cfg, &mut rng).unwrap();
        assert_eq!(out.state.on_set, s0.off_set);
        assert_eq!(out.state.off_set, s0.on_set);
        // re-activated cells take the value p = 0
        assert!(out.state.mask.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn out_of_range_scores_are_clamped() {
        let cfg = config((4, 4), 0.5);
        let mut rng = RandomSource::new(13);
        let s0 = init_mask(&cfg, &mut rng).unwrap();
        let img = ImageTensor::filled(8, 8, 0.5);
        let mut clf = ConstantClassifier::new(vec![7.5]).unwrap();
        let out = step(&s0, &mut clf, &img, 0, &cfg, &mut rng).unwrap();
        assert_eq!(out.raw_score, 7.5);
        assert_eq!(out.score, 1.0);
        assert_eq!(out.state.on_set, s0.on_set);
    }

    #[test]
    fn step_error_leaves_state() {
        let cfg = config((4, 4), 0.5);
        let mut rng = RandomSource::new(14);
        let s0 = init_mask(&cfg, &mut rng).unwrap();
        let before = s0.clone();
        let img = ImageTensor::filled(8, 8, 0.5);
        let mut clf = ConstantClassifier::new(vec![0.5]).unwrap();
        assert!(step(&s0, &mut clf, &img, 3, &cfg, &mut rng).is_err());
        assert_eq!(s0, before);
    }

    #[test]
    fn constant_certain_backend_never_moves() {
        let cfg = OptimizerConfig {
            iterations: 200,
            ..config((5, 5), 0.4)
        };
        let img = ImageTensor::filled(10, 10, 0.3);
        let mut clf = ConstantClassifier::new(vec![1.0, 0.0]).unwrap();
        let mut ex = Explainer::new(&img, 0, &cfg).unwrap();
        let initial = ex.state().clone();
        for _ in 0..cfg.iterations {
            ex.advance(&mut clf).unwrap();
            assert_eq!(ex.state().on_set, initial.on_set);
            assert_eq!(ex.state().mask, initial.mask);
        }
    }

    #[test]
    fn normalize_cases() {
        let m = MaskGrid::new(1, 2, vec![0.2, 0.6]).unwrap();
        let n = normalize_saliency(&m);
        assert!((n.data()[0] - 0.0).abs() < 1e-15 && (n.data()[1] - 1.0).abs() < 1e-15);
        assert!(normalize_saliency(&MaskGrid::constant(3, 3, 0.4))
            .data()
            .iter()
            .all(|&v| v == 0.0));
        let spanning = MaskGrid::new(1, 3, vec![0.0, 0.3, 1.0]).unwrap();
        assert_eq!(normalize_saliency(&spanning), spanning);
    }

    #[test]
    fn single_iteration_final_iterate() {
        let rect = Rect::new(4, 4, 8, 8);
        let img = ImageTensor::filled(16, 16, 0.5);
        let cfg = OptimizerConfig {
            iterations: 1,
            readout: Readout::FinalIterate,
            seed: 9,
            ..config((4, 4), 0.5)
        };
        let mut clf = PlantedClassifier::new(rect, 10.0).unwrap();
        let result = explain(&img, 0, &mut clf, &cfg).unwrap();

        let mut rng = RandomSource::new(9);
        let s0 = init_mask(&cfg, &mut rng).unwrap();
        let out = step(&s0, &mut clf, &img, 0, &cfg, &mut rng).unwrap();
        let expected = normalize_saliency(&bilinear_resize(&out.state.mask, 16, 16).unwrap());
        assert_eq!(result.saliency, expected);
        assert_eq!(result.raw_mask, out.state.mask);
    }

    #[test]
    fn explain_is_deterministic_and_checkpoints() {
        let rect = Rect::new(2, 2, 6, 6);
        let img = ImageTensor::filled(16, 16, 0.5);
        let cfg = OptimizerConfig {
            iterations: 50,
            checkpoint_every: 10,
            seed: 4,
            ..config((4, 4), 0.5)
        };
        let mut clf = PlantedClassifier::new(rect, 10.0).unwrap();
        let a = explain(&img, 0, &mut clf, &cfg).unwrap();
        let b = explain(&img, 0, &mut clf, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            a.trace.iter().map(|c| c.iteration).collect::<Vec<_>>(),
            vec![10, 20, 30, 40, 50]
        );
        assert!(a.saliency.min() >= 0.0 && a.saliency.max() <= 1.0);
    }

    #[test]
    fn explain_rejects_bad_target_and_grid() {
        let img = ImageTensor::filled(4, 4, 0.5);
        let mut clf = ConstantClassifier::new(vec![0.5, 0.5]).unwrap();
        assert!(explain(&img, 2, &mut clf, &config((2, 2), 0.5)).is_err());
        assert!(matches!(
            explain(&img, 0, &mut clf, &config((5, 5), 0.5)),
            Err(Error::Dimension(_))
        ));
    }
}
