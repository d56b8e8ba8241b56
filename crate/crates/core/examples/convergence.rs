//! How insertion/deletion AUC evolve as the optimizer runs longer.

use maskcraft::metrics::{convergence_track, EvalConfig};
use maskcraft::{ImageTensor, OptimizerConfig, PlantedClassifier, Rect};

fn main() -> maskcraft::Result<()> {
    let rect = Rect::new(10, 6, 12, 10);
    let image = ImageTensor::from_fn(32, 32, |r, c, _| 0.5 + 0.02 * ((r + c) % 3) as f64);
    let mut clf = PlantedClassifier::new(rect, 10.0)?;
    let config = OptimizerConfig {
        iterations: 600,
        grid: (8, 8),
        seed: 3,
        ..OptimizerConfig::default()
    };
    let at: Vec<usize> = (1..=6).map(|k| k * 100).collect();
    let eval = EvalConfig {
        steps: 32,
        ..EvalConfig::default()
    };
    let trace = convergence_track(&image, 0, &mut clf, &config, &at, &eval)?;
    println!("iteration  insertion  deletion");
    for p in trace.checkpoints {
        println!("{:>9}  {:>9.3}  {:>8.3}", p.iteration, p.insertion_auc, p.deletion_auc);
    }
    Ok(())
}
