//! Insertion/deletion AUC and pointing IOU for a good map, a random map and
//! a blurred-baseline insertion curve.

use maskcraft::metrics::{evaluate, AnnotationBox, Baseline, EvalConfig};
use maskcraft::{ImageTensor, MaskGrid, PlantedClassifier, RandomSource, Rect};

fn main() -> maskcraft::Result<()> {
    let rect = Rect::new(8, 8, 12, 12);
    let image = ImageTensor::from_fn(32, 32, |r, c, _| if rect.contains(r, c) { 0.8 } else { 0.4 });
    let mut clf = PlantedClassifier::new(rect, 10.0)?;
    let truth = AnnotationBox::from(rect);

    let oracle = MaskGrid::from_fn(32, 32, |r, c| if rect.contains(r, c) { 1.0 } else { 0.1 });
    let mut rng = RandomSource::new(0);
    let noise = MaskGrid::from_fn(32, 32, |_, _| rng.uniform());

    for (name, map) in [("oracle", &oracle), ("random", &noise)] {
        for baseline in [Baseline::Zeros, Baseline::Blur { sigma: 5.0 }] {
            let cfg = EvalConfig {
                steps: 32,
                baseline,
                ..EvalConfig::default()
            };
            let r = evaluate(&image, map, &mut clf, 0, Some(&truth), &cfg)?;
            println!(
                "{name:>6} {:<8} insertion {:.3}  deletion {:.3}  iou {:5.1}%",
                r.baseline,
                r.insertion_auc,
                r.deletion_auc,
                r.iou_percent.unwrap_or(0.0)
            );
        }
    }
    Ok(())
}
