//! Alternate explanations: regenerate the salient box through a linear
//! generator and check whether the classifier still sees the target class.
//!
//! The random generator fills the box with generic texture, so the planted
//! feature is lost and most samples are rejected: the decision really rests
//! on the box.

use maskcraft::reconstruction::{reconstruct_from_saliency, ReconstructionConfig};
use maskcraft::{
    explain, Classifier, ImageTensor, LatentOptions, LinearGenerator, OptimizerConfig, PlantedClassifier, RandomSource,
    Rect,
};

fn main() -> maskcraft::Result<()> {
    let rect = Rect::new(8, 8, 10, 10);
    let image = ImageTensor::from_fn(32, 32, |r, c, ch| {
        0.5 + 0.01 * ((r * 5 + c * 3 + ch) % 7) as f64 / 6.0 + if rect.contains(r, c) { 0.05 } else { 0.0 }
    });
    let mut clf = PlantedClassifier::new(rect, 20.0)?;
    let saliency = explain(
        &image,
        0,
        &mut clf,
        &OptimizerConfig {
            iterations: 1000,
            grid: (8, 8),
            ..OptimizerConfig::default()
        },
    )?
    .saliency;

    let mut gen = LinearGenerator::seeded(16, 16, 8, 42)?;
    let config = ReconstructionConfig {
        samples: 8,
        kernel: 7,
        // Background cells pick up some weight too; a tighter cut isolates the box.
        threshold: 0.75,
        latent: LatentOptions {
            iterations: 200,
            lambda_dis: 0.0,
            ..LatentOptions::default()
        },
    };
    let mut rng = RandomSource::new(7);
    let report = reconstruct_from_saliency(&image, &saliency, &mut gen, &mut clf, 0, &config, &mut rng)?;
    println!("original target score {:.3}", clf.score(&image)?.values()[0]);
    println!("box {:?}", report.rect);
    for s in &report.samples {
        println!(
            "sample {} context {:.4} target score {:.3} t {:+.2} {}",
            s.index,
            s.context_loss.unwrap_or(f64::NAN),
            s.target_score.unwrap_or(f64::NAN),
            s.t_score.unwrap_or(f64::NAN),
            if s.accepted { "accepted" } else { "rejected" }
        );
    }
    println!("{}/{} accepted", report.accepted_count, report.samples.len());
    Ok(())
}
