//! Image ingestion and saliency persistence.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, MaskGrid, CHANNELS};

/// Loads an 8-bit PNG or binary PPM as RGB in `[0, 1]`. Grayscale inputs are
/// replicated across the three channels; alpha is dropped.
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    let decoded = image::open(path).map_err(|e| Error::Codec(format!("{}: {e}", path.display())))?;
    let rgb = decoded.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
    ImageTensor::new(h as usize, w as usize, data)
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an RGB PNG, clamping values into `[0, 1]` first.
pub fn save_image_png(image: &ImageTensor, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = image.data().iter().map(|&v| to_byte(v)).collect();
    image::save_buffer(
        path,
        &bytes,
        image.width() as u32,
        image.height() as u32,
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| Error::Codec(format!("{}: {e}", path.display())))
}

/// Writes a min-max normalized 8-bit grayscale heatmap.
pub fn save_heatmap_png(mask: &MaskGrid, path: &Path) -> Result<()> {
    let (lo, hi) = (mask.min(), mask.max());
    let span = hi - lo;
    let bytes: Vec<u8> = mask
        .data()
        .iter()
        .map(|&v| if span > 0.0 { to_byte((v - lo) / span) } else { 0 })
        .collect();
    image::save_buffer(
        path,
        &bytes,
        mask.width() as u32,
        mask.height() as u32,
        image::ExtendedColorType::L8,
    )
    .map_err(|e| Error::Codec(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridShape {
    pub height: usize,
    pub width: usize,
}

/// Sidecar path for a raw `.f32` file: same stem, `.json` extension.
pub fn sidecar_path(raw: &Path) -> std::path::PathBuf {
    raw.with_extension("json")
}

/// Little-endian f32, row-major, plus a `{"height":h,"width":w}` sidecar.
pub fn save_mask_f32(mask: &MaskGrid, raw: &Path) -> Result<()> {
    let bytes: Vec<u8> = mask.data().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    fs::write(raw, bytes)?;
    let shape = GridShape {
        height: mask.height(),
        width: mask.width(),
    };
    fs::write(
        sidecar_path(raw),
        serde_json::to_string(&shape).expect("shape serializes"),
    )?;
    Ok(())
}

pub fn load_mask_f32(raw: &Path) -> Result<MaskGrid> {
    let side = sidecar_path(raw);
    let text = fs::read_to_string(&side)?;
    let shape: GridShape = serde_json::from_str(&text).map_err(|e| Error::Codec(format!("{}: {e}", side.display())))?;
    let bytes = fs::read(raw)?;
    if bytes.len() != shape.height * shape.width * 4 {
        return Err(Error::Codec(format!(
            "{}: {} bytes, sidecar declares {}x{}",
            raw.display(),
            bytes.len(),
            shape.height,
            shape.width
        )));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Codec(format!("{}: non-finite value", raw.display())));
    }
    // Saliency is stored as-is; clamp guards against float noise only.
    MaskGrid::new(
        shape.height,
        shape.width,
        data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
    )
}

/// Reads a JSON file into `T`, naming the file on failure.
pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Codec(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Raw little-endian f32 bytes of an image, HWC order.
pub fn image_f32_bytes(image: &ImageTensor) -> Vec<u8> {
    debug_assert_eq!(image.data().len(), image.pixel_count() * CHANNELS);
    image.data().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}
