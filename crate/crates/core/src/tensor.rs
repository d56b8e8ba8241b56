//! Image and mask grids, the arithmetic shared by every stage, and the seeded
//! random source.
//!
//! Images are stored as `f64` in row-major `(row, column, channel)` order with
//! three channels. Masks are single-channel grids. Resampling uses the
//! half-pixel-center bilinear convention:
//!
//! ```text
//! src = (dst + 0.5) * (src_len / dst_len) - 0.5, clamped to [0, src_len - 1]
//! ```

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// Axis-aligned pixel rectangle, origin top-left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn new(top: usize, left: usize, height: usize, width: usize) -> Self {
        Self {
            top,
            left,
            height,
            width,
        }
    }

    pub fn bottom(&self) -> usize {
        self.top + self.height
    }

    pub fn right(&self) -> usize {
        self.left + self.width
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.top && row < self.bottom() && col >= self.left && col < self.right()
    }

    /// True when the rectangle is non-empty and lies inside an `h x w` image.
    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.height >= 1 && self.width >= 1 && self.bottom() <= height && self.right() <= width
    }

    pub(crate) fn check_fits(&self, height: usize, width: usize) -> Result<()> {
        if self.fits(height, width) {
            Ok(())
        } else {
            Err(Error::Argument(format!(
                "rectangle {self:?} does not fit a {height}x{width} image"
            )))
        }
    }
}

/// H x W x 3 image with real-valued channels.
///
/// Ingested images are in `[0, 1]`; generator outputs may leave that range and
/// are only required to be finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimension("image must be non-empty".into()));
        }
        if data.len() != height * width * CHANNELS {
            return Err(Error::Dimension(format!(
                "image data length {} != {height}*{width}*3",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("non-finite image value at {bad}")));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width * CHANNELS],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..CHANNELS {
                    data.push(f(r, c, ch));
                }
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.width + col) * CHANNELS + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f64) {
        self.data[(row * self.width + col) * CHANNELS + ch] = value;
    }

    /// The three channel values of the pixel at flat row-major index `pixel`.
    pub fn pixel(&self, pixel: usize) -> &[f64] {
        &self.data[pixel * CHANNELS..(pixel + 1) * CHANNELS]
    }

    pub fn pixel_mut(&mut self, pixel: usize) -> &mut [f64] {
        &mut self.data[pixel * CHANNELS..(pixel + 1) * CHANNELS]
    }

    pub fn clamped01(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    /// Mean over all channels of the pixels selected by `inside`.
    pub fn region_mean(&self, mut inside: impl FnMut(usize, usize) -> bool) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for r in 0..self.height {
            for c in 0..self.width {
                if inside(r, c) {
                    let base = (r * self.width + c) * CHANNELS;
                    sum += self.data[base..base + CHANNELS].iter().sum::<f64>();
                    n += CHANNELS;
                }
            }
        }
        (n > 0).then(|| sum / n as f64)
    }

    pub(crate) fn check_same_dims(&self, other_h: usize, other_w: usize, what: &str) -> Result<()> {
        if self.dims() != (other_h, other_w) {
            return Err(Error::Dimension(format!(
                "{what}: image is {}x{}, other is {other_h}x{other_w}",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

/// Single-channel grid, used for low-resolution masks and image-resolution
/// saliency maps alike.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskGrid {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl MaskGrid {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimension("mask must be non-empty".into()));
        }
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "mask data length {} != {height}*{width}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("non-finite mask value at {bad}")));
        }
        Ok(Self { height, width, data })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self { height, width, data }
    }

    /// Binary indicator of `rect` on an `h x w` grid.
    pub fn indicator(height: usize, width: usize, rect: &Rect) -> Self {
        Self::from_fn(height, width, |r, c| if rect.contains(r, c) { 1.0 } else { 0.0 })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Ordered set of cells of a grid, stored as ascending row-major flat indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PixelIndexSet {
    cells: Vec<usize>,
}

impl PixelIndexSet {
    /// Builds a set from flat indices; rejects duplicates.
    pub fn new(mut cells: Vec<usize>) -> Result<Self> {
        cells.sort_unstable();
        if cells.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Argument("duplicate cell in index set".into()));
        }
        Ok(Self { cells })
    }

    pub fn all(len: usize) -> Self {
        Self {
            cells: (0..len).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, cell: usize) -> bool {
        self.cells.binary_search(&cell).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.cells.iter().copied()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.cells
    }

    /// `(row, column)` coordinates on a grid of the given width.
    pub fn coords(&self, width: usize) -> Vec<(usize, usize)> {
        self.cells.iter().map(|&i| (i / width, i % width)).collect()
    }

    pub fn union(&self, other: &PixelIndexSet) -> PixelIndexSet {
        let mut cells = Vec::with_capacity(self.len() + other.len());
        let (mut a, mut b) = (self.cells.iter().peekable(), other.cells.iter().peekable());
        loop {
            match (a.peek(), b.peek()) {
                (Some(&&x), Some(&&y)) => {
                    if x < y {
                        cells.push(x);
                        a.next();
                    } else if y < x {
                        cells.push(y);
                        b.next();
                    } else {
                        cells.push(x);
                        a.next();
                        b.next();
                    }
                }
                (Some(&&x), None) => {
                    cells.push(x);
                    a.next();
                }
                (None, Some(&&y)) => {
                    cells.push(y);
                    b.next();
                }
                (None, None) => break,
            }
        }
        PixelIndexSet { cells }
    }

    /// Cells of `0..len` not in this set.
    pub fn complement(&self, len: usize) -> PixelIndexSet {
        PixelIndexSet {
            cells: (0..len).filter(|&i| !self.contains(i)).collect(),
        }
    }
}

/// Seeded random source backed by ChaCha8.
///
/// Identical seeds yield identical draw sequences on every platform.
#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// `+1.0` or `-1.0` with equal probability.
    pub fn sign(&mut self) -> f64 {
        if self.rng.random::<bool>() {
            1.0
        } else {
            -1.0
        }
    }

    /// Independent child source seeded from this one.
    pub fn fork(&mut self) -> RandomSource {
        RandomSource::new(self.next_u64())
    }

    /// Uniformly random permutation of `0..len`.
    pub fn permutation(&mut self, len: usize) -> Vec<usize> {
        index::sample(&mut self.rng, len, len).into_vec()
    }

    fn sample_indices(&mut self, len: usize, count: usize) -> Vec<usize> {
        index::sample(&mut self.rng, len, count).into_vec()
    }
}

/// Rounds half-up and clamps to `[0, max]`.
pub fn round_count(value: f64, max: usize) -> usize {
    let rounded = (value + 0.5).floor();
    if rounded <= 0.0 {
        0
    } else {
        (rounded as usize).min(max)
    }
}

/// Uniformly random subset of `set` of exactly `count` cells, without
/// replacement.
pub fn sample_subset(set: &PixelIndexSet, count: usize, rng: &mut RandomSource) -> Result<PixelIndexSet> {
    if count > set.len() {
        return Err(Error::Argument(format!(
            "cannot sample {count} cells from a set of {}",
            set.len()
        )));
    }
    if count == set.len() {
        return Ok(set.clone());
    }
    if count == 0 {
        return Ok(PixelIndexSet::default());
    }
    let mut cells: Vec<usize> = rng
        .sample_indices(set.len(), count)
        .into_iter()
        .map(|i| set.cells[i])
        .collect();
    cells.sort_unstable();
    Ok(PixelIndexSet { cells })
}

// Source coordinate under the half-pixel-center convention, split into the
// two neighbouring indices and the weight of the upper one.
#[inline]
fn source_coord(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, s - i0 as f64)
}

fn resample_planes(src: &[f64], src_h: usize, src_w: usize, planes: usize, dst_h: usize, dst_w: usize) -> Vec<f64> {
    let cols: Vec<_> = (0..dst_w).map(|c| source_coord(c, src_w, dst_w)).collect();
    let mut out = Vec::with_capacity(dst_h * dst_w * planes);
    for r in 0..dst_h {
        let (r0, r1, fy) = source_coord(r, src_h, dst_h);
        for &(c0, c1, fx) in &cols {
            for p in 0..planes {
                let at = |rr: usize, cc: usize| src[(rr * src_w + cc) * planes + p];
                let top = at(r0, c0) * (1.0 - fx) + at(r0, c1) * fx;
                let bottom = at(r1, c0) * (1.0 - fx) + at(r1, c1) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    out
}

/// Bilinear upsampling of a mask to `target_h x target_w`.
pub fn bilinear_resize(mask: &MaskGrid, target_h: usize, target_w: usize) -> Result<MaskGrid> {
    if target_h < mask.height || target_w < mask.width {
        return Err(Error::Dimension(format!(
            "cannot upsample {}x{} mask to smaller {target_h}x{target_w}",
            mask.height, mask.width
        )));
    }
    Ok(resample_grid(mask, target_h, target_w))
}

/// Bilinear resampling of a mask in either direction (no antialiasing).
pub fn resample_grid(mask: &MaskGrid, target_h: usize, target_w: usize) -> MaskGrid {
    if mask.dims() == (target_h, target_w) {
        return mask.clone();
    }
    MaskGrid {
        height: target_h,
        width: target_w,
        data: resample_planes(&mask.data, mask.height, mask.width, 1, target_h, target_w),
    }
}

/// Bilinear resampling of an image in either direction (no antialiasing).
pub fn resize_image(image: &ImageTensor, target_h: usize, target_w: usize) -> ImageTensor {
    if image.dims() == (target_h, target_w) {
        return image.clone();
    }
    ImageTensor {
        height: target_h,
        width: target_w,
        data: resample_planes(&image.data, image.height, image.width, CHANNELS, target_h, target_w),
    }
}

/// Element-wise product of an image with a single-channel mask broadcast
/// over the color channels.
pub fn apply_mask(image: &ImageTensor, upsampled: &MaskGrid) -> Result<ImageTensor> {
    image.check_same_dims(upsampled.height, upsampled.width, "apply_mask")?;
    let data = image
        .data
        .chunks_exact(CHANNELS)
        .zip(&upsampled.data)
        .flat_map(|(px, &m)| px.iter().map(move |v| v * m))
        .collect();
    Ok(ImageTensor {
        height: image.height,
        width: image.width,
        data,
    })
}

/// Sum of squared horizontal and vertical neighbour differences.
pub fn total_variation(mask: &MaskGrid) -> f64 {
    let (h, w) = mask.dims();
    let mut v = 0.0;
    for r in 0..h {
        for c in 0..w {
            let here = mask.get(r, c);
            if c + 1 < w {
                let d = mask.get(r, c + 1) - here;
                v += d * d;
            }
            if r + 1 < h {
                let d = mask.get(r + 1, c) - here;
                v += d * d;
            }
        }
    }
    v
}
