//! Black-box saliency maps by empirical mask optimization.
//!
//! The engine only ever sees a classifier's inputs and outputs. It produces a
//! saliency map by repeatedly perturbing a low-resolution mask and reweighting
//! it with the target-class score, evaluates maps with insertion/deletion AUC
//! and a pointing-game IOU, and builds alternate explanations by regenerating
//! the salient box through a generator's latent space.
//!
//! ```
//! use maskcraft::{explain, ImageTensor, OptimizerConfig, PlantedClassifier, Rect};
//!
//! let image = ImageTensor::filled(32, 32, 0.5);
//! let mut clf = PlantedClassifier::new(Rect::new(8, 8, 10, 10), 10.0).unwrap();
//! let cfg = OptimizerConfig { iterations: 50, grid: (4, 4), ..OptimizerConfig::default() };
//! let result = explain(&image, 0, &mut clf, &cfg).unwrap();
//! assert_eq!(result.saliency.dims(), (32, 32));
//! ```

pub mod backend;
pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;
pub mod metrics;
pub mod optimizer;
pub mod protocol;
pub mod reconstruction;
pub mod tensor;

pub use backend::{
    logistic, spawn_external, BackendDescriptor, CallCounter, ClassScores, Classifier, ConstantClassifier,
    PlantedClassifier,
};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use metrics::{
    auc, deletion_curve, evaluate, insertion_curve, pointing_iou, AnnotationBox, Baseline, EvalConfig, MetricCurve,
};
pub use optimizer::{
    explain, init_mask, normalize_saliency, step, Explainer, OptimizerConfig, Readout, SaliencyResult,
};
pub use reconstruction::{
    batch_reconstruct, bounding_box, box_sweep, optimize_latent, reconstruct, scale_box, t_score, weight_mask,
    GenerativeBackend, GenerativeDescriptor, LatentOptions, LinearGenerator,
};
pub use tensor::{
    apply_mask, bilinear_resize, sample_subset, total_variation, ImageTensor, MaskGrid, PixelIndexSet, RandomSource,
    Rect,
};
