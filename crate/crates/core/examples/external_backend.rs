//! A classifier served over the stdio protocol.
//!
//! Run without arguments to spawn this same binary with `serve` as the
//! backend and explain through it. `serve` on its own speaks the protocol on
//! stdin/stdout and can be passed to the CLI as
//! `--backend "exec:target/debug/examples/external_backend serve"`.

use std::io::{BufRead, Write};

use maskcraft::protocol::decode_tensor;
use maskcraft::{explain, spawn_external, Classifier, ImageTensor, MaskGrid, OptimizerConfig, PlantedClassifier, Rect};
use serde_json::{json, Value};

const SIZE: usize = 24;

fn serve() -> Result<(), Box<dyn std::error::Error>> {
    let mut model = PlantedClassifier::new(Rect::new(4, 12, 8, 8), 10.0)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for line in std::io::stdin().lock().lines() {
        let req: Value = serde_json::from_str(&line?)?;
        let id = req["id"].clone();
        let reply = match req["op"].as_str() {
            Some("hello") => json!({"id": id, "class_count": 2, "height": SIZE, "width": SIZE}),
            Some("score") => {
                let shape: Vec<usize> = serde_json::from_value(req["shape"].clone())?;
                match decode_tensor(&shape, req["data"].as_str().unwrap_or_default()).and_then(|t| model.score(&t)) {
                    Ok(s) => json!({"id": id, "scores": s.values()}),
                    Err(e) => json!({"id": id, "error": e.to_string()}),
                }
            }
            other => json!({"id": id, "error": format!("unknown op {other:?}")}),
        };
        writeln!(out, "{reply}")?;
        out.flush()?;
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    if std::env::args().nth(1).as_deref() == Some("serve") {
        return serve();
    }
    let exe = std::env::current_exe()?.to_string_lossy().into_owned();
    let mut backend = spawn_external(&[exe, "serve".into()], Some(2))?;
    println!(
        "connected: {} classes, input {:?}",
        backend.class_count(),
        backend.input_dims()
    );
    let image = ImageTensor::from_fn(SIZE, SIZE, |r, c, _| 0.5 + 0.01 * ((r + c) % 3) as f64);
    let config = OptimizerConfig {
        iterations: 300,
        grid: (6, 6),
        ..OptimizerConfig::default()
    };
    let result = explain(&image, 0, &mut backend, &config)?;
    shade(&result.saliency, 1);
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
