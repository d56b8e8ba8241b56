//! Shrink the salient box step by step and watch the context loss fall.

use maskcraft::reconstruction::generative::{ConstantDiscriminator, Paired};
use maskcraft::reconstruction::{ReconstructionConfig, DEFAULT_FACTORS};
use maskcraft::{box_sweep, ImageTensor, LatentOptions, LinearGenerator, MaskGrid, PlantedClassifier, Rect};

fn main() -> maskcraft::Result<()> {
    let rect = Rect::new(6, 6, 20, 20);
    let image = ImageTensor::from_fn(32, 32, |r, c, ch| 0.3 + 0.4 * ((r * 3 + c + ch) % 5) as f64 / 4.0);
    let saliency = MaskGrid::indicator(32, 32, &rect);
    let mut clf = PlantedClassifier::new(rect, 10.0)?;
    // The discriminative term needs a discriminator; a constant one keeps it flat.
    let mut gen = Paired {
        generator: LinearGenerator::seeded(16, 16, 16, 1)?,
        discriminator: ConstantDiscriminator(0.5),
    };
    let config = ReconstructionConfig {
        samples: 4,
        kernel: 15,
        latent: LatentOptions {
            iterations: 150,
            ..LatentOptions::default()
        },
        ..ReconstructionConfig::default()
    };
    let records = box_sweep(&image, &saliency, &mut gen, &mut clf, 0, &DEFAULT_FACTORS, &config, 0)?;
    println!("factor  box        context   accepted");
    for r in records {
        println!(
            "{:>6.1}  {:>2}x{:<2}@{:>2},{:<2}  {:>8.3}  {}/{}",
            r.factor,
            r.rect.height,
            r.rect.width,
            r.rect.top,
            r.rect.left,
            r.mean_context_loss.unwrap_or(f64::NAN),
            r.accepted_count,
            r.sample_count
        );
    }
    Ok(())
}
