//! Independent reference implementations used as test oracles, plus the
//! planted-feature fixture shared by the statistical tests.
#![allow(dead_code, clippy::needless_range_loop, clippy::manual_clamp)]

use maskcraft::tensor::CHANNELS;
use maskcraft::{sample_subset, Classifier, ImageTensor, MaskGrid, OptimizerConfig, PixelIndexSet, RandomSource, Rect};

/// Double loop over every cell, summing right and down neighbour jumps.
pub fn tv_oracle(values: &[Vec<f64>]) -> f64 {
    let h = values.len();
    let w = values[0].len();
    let mut horizontal = 0.0;
    let mut vertical = 0.0;
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w {
                horizontal += (values[y][x + 1] - values[y][x]).powi(2);
            }
            if y + 1 < h {
                vertical += (values[y + 1][x] - values[y][x]).powi(2);
            }
        }
    }
    horizontal + vertical
}

/// Half-pixel bilinear interpolation evaluated per output cell as an explicit
/// weighted sum over the whole input grid.
pub fn bilinear_oracle(values: &[Vec<f64>], out_h: usize, out_w: usize) -> Vec<Vec<f64>> {
    let h = values.len();
    let w = values[0].len();
    let coord = |dst: usize, src_len: usize, dst_len: usize| -> f64 {
        let raw = (dst as f64 + 0.5) * (src_len as f64 / dst_len as f64) - 0.5;
        raw.max(0.0).min((src_len - 1) as f64)
    };
    // Triangle weight of source index `i` at fractional position `s`.
    let tent = |i: usize, s: f64| (1.0 - (s - i as f64).abs()).max(0.0);
    (0..out_h)
        .map(|oy| {
            let sy = coord(oy, h, out_h);
            (0..out_w)
                .map(|ox| {
                    let sx = coord(ox, w, out_w);
                    let mut acc = 0.0;
                    for (iy, row) in values.iter().enumerate() {
                        for (ix, v) in row.iter().enumerate() {
                            acc += tent(iy, sy) * tent(ix, sx) * v;
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

/// Integral of the piecewise-linear interpolant by a dense midpoint sum.
pub fn auc_oracle(xs: &[f64], ys: &[f64], samples: usize) -> f64 {
    let interp = |x: f64| {
        let k = xs.windows(2).position(|w| x >= w[0] && x <= w[1]).unwrap();
        let t = (x - xs[k]) / (xs[k + 1] - xs[k]);
        ys[k] + t * (ys[k + 1] - ys[k])
    };
    let dx = 1.0 / samples as f64;
    (0..samples).map(|i| interp((i as f64 + 0.5) * dx) * dx).sum()
}

/// Set arithmetic over explicit coordinate lists.
pub fn iou_oracle(saliency: &[Vec<f64>], box_xywh: (usize, usize, usize, usize), threshold: f64) -> f64 {
    let max = saliency.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (x, y, bw, bh) = box_xywh;
    let mut a_s = std::collections::HashSet::new();
    let mut a_t = std::collections::HashSet::new();
    for (r, row) in saliency.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if max > 0.0 && v >= threshold * max {
                a_s.insert((r, c));
            }
            if r >= y && r < y + bh && c >= x && c < x + bw {
                a_t.insert((r, c));
            }
        }
    }
    let inter = a_s.intersection(&a_t).count();
    let union = a_s.union(&a_t).count();
    if union == 0 {
        0.0
    } else {
        100.0 * inter as f64 / union as f64
    }
}

/// Textbook Welch statistic with two-pass variances.
pub fn welch_oracle(a: &[f64], b: &[f64]) -> f64 {
    fn stats(v: &[f64]) -> (f64, f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let ss = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
        (m, ss / (n - 1.0), n)
    }
    let (ma, va, na) = stats(a);
    let (mb, vb, nb) = stats(b);
    (ma - mb) / (va / na + vb / nb).sqrt()
}

/// `(1 - B) * conv(B, ones(s, s) / s^2)` by summing each window explicitly.
pub fn weight_oracle(h: usize, w: usize, rect: Rect, s: usize) -> Vec<Vec<f64>> {
    let inside = |r: isize, c: isize| {
        r >= rect.top as isize && r < rect.bottom() as isize && c >= rect.left as isize && c < rect.right() as isize
    };
    let half = (s / 2) as isize;
    (0..h as isize)
        .map(|r| {
            (0..w as isize)
                .map(|c| {
                    if inside(r, c) {
                        return 0.0;
                    }
                    let mut total = 0.0;
                    for dr in -half..=half {
                        for dc in -half..=half {
                            let (rr, cc) = (r + dr, c + dc);
                            if rr >= 0 && cc >= 0 && rr < h as isize && cc < w as isize && inside(rr, cc) {
                                total += 1.0 / (s * s) as f64;
                            }
                        }
                    }
                    total
                })
                .collect()
        })
        .collect()
}

pub fn grid_rows(mask: &MaskGrid) -> Vec<Vec<f64>> {
    mask.data().chunks(mask.width()).map(|r| r.to_vec()).collect()
}

/// State of the straight-line reference transcription of one mask update.
#[derive(Debug, Clone)]
pub struct RefState {
    pub h: usize,
    pub w: usize,
    pub mask: Vec<f64>,
    pub on: Vec<usize>,
    pub off: Vec<usize>,
    pub prev_p: Option<f64>,
    pub prev_v: f64,
}

/// One update written out line by line: upsample, score, split the on/off
/// sets by the score, reweight, penalize the variation change.
///
/// Random subsets are drawn with the library's sampler in the same order as
/// the engine (on-set first, then off-set) so that both see identical draws.
pub fn reference_step<C: Classifier>(
    s: &RefState,
    clf: &mut C,
    image: &ImageTensor,
    target: usize,
    eta: f64,
    rng: &mut RandomSource,
) -> RefState {
    let (ih, iw) = image.dims();
    // 1. upsample
    let rows: Vec<Vec<f64>> = s.mask.chunks(s.w).map(|r| r.to_vec()).collect();
    let up = bilinear_oracle(&rows, ih, iw);
    // 2. I (.) M
    let mut masked = image.clone();
    for r in 0..ih {
        for c in 0..iw {
            for ch in 0..CHANNELS {
                masked.set(r, c, ch, image.get(r, c, ch) * up[r][c]);
            }
        }
    }
    // 3. p = f(I (.) M, c), clamped
    let raw = clf.score(&masked).unwrap().values()[target];
    let p = raw.max(0.0).min(1.0);
    // 4-5. |L1| = round(n1 p), |L2| = round(n2 (1 - p))
    let n1 = s.on.len();
    let n2 = s.off.len();
    let k1 = ((n1 as f64 * p + 0.5).floor() as usize).min(n1);
    let k2 = ((n2 as f64 * (1.0 - p) + 0.5).floor() as usize).min(n2);
    let l1 = sample_subset(&PixelIndexSet::new(s.on.clone()).unwrap(), k1, rng).unwrap();
    let l2 = sample_subset(&PixelIndexSet::new(s.off.clone()).unwrap(), k2, rng).unwrap();
    // 6-9. new sets and values
    let mut mask = vec![0.0; s.h * s.w];
    for &i in l1.as_slice() {
        mask[i] = s.mask[i] * p;
    }
    for &i in l2.as_slice() {
        mask[i] = p;
    }
    let mut on: Vec<usize> = l1.as_slice().iter().chain(l2.as_slice()).copied().collect();
    on.sort_unstable();
    let off: Vec<usize> = (0..s.h * s.w).filter(|i| !on.contains(i)).collect();
    // 10. V
    let grid: Vec<Vec<f64>> = mask.chunks(s.w).map(|r| r.to_vec()).collect();
    let v = tv_oracle(&grid);
    // 11. M += eta dV dp on the unmasked cells, clamped
    let dp = match s.prev_p {
        Some(prev) => p - prev,
        None => 0.0,
    };
    let delta = eta * (v - s.prev_v) * dp;
    for &i in &on {
        mask[i] = (mask[i] + delta).max(0.0).min(1.0);
    }
    RefState {
        h: s.h,
        w: s.w,
        mask,
        on,
        off,
        prev_p: Some(p),
        prev_v: v,
    }
}

/// 64x64 mid-gray image with faint texture, rectangle covering 408 of 4096
/// pixels (10%).
pub const PLANTED_SIZE: usize = 64;

pub fn planted_rect() -> Rect {
    Rect::new(16, 24, 24, 17)
}

pub fn planted_image() -> ImageTensor {
    ImageTensor::from_fn(PLANTED_SIZE, PLANTED_SIZE, |r, c, ch| {
        0.5 + 0.02 * (((r * 7 + c * 13 + ch * 5) % 11) as f64 / 10.0 - 0.5)
    })
}

pub fn planted_config(seed: u64) -> OptimizerConfig {
    OptimizerConfig {
        iterations: 1000,
        grid: (8, 8),
        seed,
        ..OptimizerConfig::default()
    }
}
