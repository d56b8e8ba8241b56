//! Saliency for a synthetic classifier that only looks at one rectangle.
//!
//! `cargo run --example explain_planted -- [out_dir]`

use maskcraft::io::save_heatmap_png;
use maskcraft::metrics::AnnotationBox;
use maskcraft::{explain, pointing_iou, ImageTensor, MaskGrid, OptimizerConfig, PlantedClassifier, Rect};

fn main() -> maskcraft::Result<()> {
    let rect = Rect::new(16, 24, 24, 17);
    let image = ImageTensor::from_fn(64, 64, |r, c, ch| {
        0.5 + 0.01 * (((r * 7 + c * 13 + ch * 5) % 11) as f64 / 5.0 - 1.0)
    });
    let mut clf = PlantedClassifier::new(rect, 10.0)?;
    let config = OptimizerConfig {
        iterations: 1000,
        grid: (8, 8),
        seed: 1,
        ..OptimizerConfig::default()
    };
    let result = explain(&image, 0, &mut clf, &config)?;

    let iou = pointing_iou(&result.saliency, &AnnotationBox::from(rect), 0.5)?;
    println!("iou with planted box: {:.1}%", iou.percent);
    shade(&result.saliency, 2);
    if let Some(dir) = std::env::args().nth(1) {
        std::fs::create_dir_all(&dir)?;
        let path = std::path::Path::new(&dir).join("saliency.png");
        save_heatmap_png(&result.saliency, &path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// One character per `step x step` block, darker for higher saliency.
fn shade(map: &MaskGrid, step: usize) {
    const RAMP: &[u8] = b" .:-=+*#%@";
    for r in (0..map.height()).step_by(step) {
        let line: String = (0..map.width())
            .step_by(step)
            .map(|c| RAMP[(map.get(r, c) * 9.0).round() as usize] as char)
            .collect();
        println!("|{line}|");
    }
}
