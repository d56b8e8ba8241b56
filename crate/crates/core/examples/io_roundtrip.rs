//! File formats: PNG images, raw `.f32` maps with a JSON sidecar, and the
//! run manifest.

use maskcraft::io::{load_image, load_mask_f32, save_heatmap_png, save_image_png, save_mask_f32, sidecar_path};
use maskcraft::manifest::sha256_file;
use maskcraft::{ImageTensor, MaskGrid};

fn main() -> maskcraft::Result<()> {
    let dir = std::env::temp_dir().join("maskcraft-io-example");
    std::fs::create_dir_all(&dir)?;

    let image = ImageTensor::from_fn(8, 12, |r, c, ch| ((r * 12 + c) * 3 + ch) as f64 / 287.0);
    let png = dir.join("image.png");
    save_image_png(&image, &png)?;
    let back = load_image(&png)?;
    let worst = image
        .data()
        .iter()
        .zip(back.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("png round trip: {:?}, max error {worst:.4} (8-bit)", back.dims());

    let map = MaskGrid::from_fn(8, 12, |r, c| (r as f64 - 4.0).hypot(c as f64 - 6.0) / 7.5);
    let raw = dir.join("map.f32");
    save_mask_f32(&map, &raw)?;
    save_heatmap_png(&map, &dir.join("map.png"))?;
    let loaded = load_mask_f32(&raw)?;
    println!(
        "f32 map exact: {}",
        loaded
            .data()
            .iter()
            .zip(map.data())
            .all(|(a, b)| *a == (*b as f32) as f64)
    );
    println!(
        "sidecar {}: {}",
        sidecar_path(&raw).display(),
        std::fs::read_to_string(sidecar_path(&raw))?.trim()
    );
    println!("sha256 {}", sha256_file(&raw)?);
    Ok(())
}
