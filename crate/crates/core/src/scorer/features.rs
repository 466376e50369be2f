//! Fixed filter bank: raw color, box means at several radii, oriented
//! luminance gradients and their local energy. Borders replicate the edge
//! sample. Optional prior scores enter as clamped log-probabilities.

use crate::error::{HaznError, Result};
use crate::grid::{Grid2D, ScoreMap};

/// Largest window radius used by any base feature.
pub const RECEPTIVE_RADIUS: usize = 16;

pub const BOX_RADII: [usize; 4] = [2, 4, 8, 16];

/// Luminance is box-smoothed at this radius before differencing.
pub const GRAD_SMOOTH_RADIUS: usize = 1;

pub const GRAD_POOL_RADII: [usize; 2] = [4, 16];

/// Prior probabilities are floored here before taking the log.
pub const PRIOR_FLOOR: f64 = 1e-4;

const NUM_ORIENTATIONS: usize = 4;

pub const NUM_BASE_FEATURES: usize = 3 + 3 * BOX_RADII.len() + NUM_ORIENTATIONS * (1 + GRAD_POOL_RADII.len());

/// Offset and scale applied to every base channel, in channel order.
const BASE_MEAN: [f64; NUM_BASE_FEATURES] = [
    0.506, 0.448, 0.454, // rgb
    0.506, 0.448, 0.454, 0.506, 0.448, 0.454, 0.506, 0.448, 0.454, 0.506, 0.448, 0.454, // box means
    0.0067, 0.0074, 0.0092, 0.0092, // gradients
    0.0067, 0.0074, 0.0092, 0.0092, 0.0067, 0.0074, 0.0092, 0.0092, // pooled gradients
];

const BASE_STD: [f64; NUM_BASE_FEATURES] = [
    0.17, 0.144, 0.136, // rgb
    0.16, 0.135, 0.126, 0.156, 0.131, 0.123, 0.149, 0.126, 0.118, 0.138, 0.118, 0.111, // box means
    0.0119, 0.0137, 0.0167, 0.0165, // gradients
    0.0071, 0.0085, 0.0109, 0.0108, 0.0048, 0.0061, 0.0078, 0.0077, // pooled gradients
];

const PRIOR_MEAN: f64 = -4.0;
const PRIOR_STD: f64 = 3.0;

/// Short description of the bank, recorded in model files.
pub fn bank_description() -> String {
    let list = |r: &[usize]| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
    format!(
        "rgb;box:{};grad{}:s{};gradbox:{};logprior:{:e}",
        list(&BOX_RADII),
        NUM_ORIENTATIONS,
        GRAD_SMOOTH_RADIUS,
        list(&GRAD_POOL_RADII),
        PRIOR_FLOOR
    )
}

/// `(mean, std)` per channel for a stack with `prior_width` prior channels.
pub fn standardization(prior_width: usize) -> Vec<(f64, f64)> {
    BASE_MEAN
        .iter()
        .zip(BASE_STD)
        .map(|(&m, s)| (m, s))
        .chain(std::iter::repeat_n((PRIOR_MEAN, PRIOR_STD), prior_width))
        .collect()
}

/// Mean over the `(2r+1)²` window with replicated borders.
pub fn box_mean(plane: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    let norm = 1.0 / (2 * r + 1) as f64;
    let mut tmp = vec![0.0; w * h];
    let mut prefix = vec![0.0; w.max(h) + 2 * r + 1];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for i in 0..w + 2 * r {
            let x = (i as i64 - r as i64).clamp(0, w as i64 - 1) as usize;
            prefix[i + 1] = prefix[i] + row[x];
        }
        for x in 0..w {
            tmp[y * w + x] = (prefix[x + 2 * r + 1] - prefix[x]) * norm;
        }
    }
    let mut out = vec![0.0; w * h];
    for x in 0..w {
        for i in 0..h + 2 * r {
            let y = (i as i64 - r as i64).clamp(0, h as i64 - 1) as usize;
            prefix[i + 1] = prefix[i] + tmp[y * w + x];
        }
        for y in 0..h {
            out[y * w + x] = (prefix[y + 2 * r + 1] - prefix[y]) * norm;
        }
    }
    out
}

/// Absolute central differences along x, y and both diagonals.
fn oriented_gradients(s: &[f64], w: usize, h: usize) -> [Vec<f64>; NUM_ORIENTATIONS] {
    let at = |x: i64, y: i64| s[y.clamp(0, h as i64 - 1) as usize * w + x.clamp(0, w as i64 - 1) as usize];
    let mut out: [Vec<f64>; NUM_ORIENTATIONS] = std::array::from_fn(|_| vec![0.0; w * h]);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let i = y as usize * w + x as usize;
            out[0][i] = 0.5 * (at(x + 1, y) - at(x - 1, y)).abs();
            out[1][i] = 0.5 * (at(x, y + 1) - at(x, y - 1)).abs();
            out[2][i] = 0.5 * (at(x + 1, y + 1) - at(x - 1, y - 1)).abs();
            out[3][i] = 0.5 * (at(x + 1, y - 1) - at(x - 1, y + 1)).abs();
        }
    }
    out
}

/// Raw (unstandardized) base feature planes in channel order.
pub fn base_planes(img: &Grid2D) -> Result<Vec<Vec<f64>>> {
    if img.channels() != 3 {
        return Err(HaznError::invalid(format!(
            "feature extraction needs an RGB image, got {} channels",
            img.channels()
        )));
    }
    let (w, h) = (img.width(), img.height());
    let rgb: Vec<Vec<f64>> = (0..3)
        .map(|c| img.values().iter().skip(c).step_by(3).copied().collect())
        .collect();
    let mut planes = rgb.clone();
    for &r in &BOX_RADII {
        for p in &rgb {
            planes.push(box_mean(p, w, h, r));
        }
    }
    let lum: Vec<f64> = (0..w * h)
        .map(|i| 0.299 * rgb[0][i] + 0.587 * rgb[1][i] + 0.114 * rgb[2][i])
        .collect();
    let grads = oriented_gradients(&box_mean(&lum, w, h, GRAD_SMOOTH_RADIUS), w, h);
    for g in &grads {
        planes.push(g.clone());
    }
    for &r in &GRAD_POOL_RADII {
        for g in &grads {
            planes.push(box_mean(g, w, h, r));
        }
    }
    debug_assert_eq!(planes.len(), NUM_BASE_FEATURES);
    Ok(planes)
}

/// Standardized feature stack: base channels, then one clamped
/// log-probability channel per prior class.
pub fn extract_features(img: &Grid2D, prior: Option<&ScoreMap>) -> Result<Grid2D> {
    let (w, h) = (img.width(), img.height());
    if let Some(p) = prior {
        if p.width() != w || p.height() != h {
            return Err(HaznError::invalid(format!(
                "prior scores {}x{} do not match the {w}x{h} image",
                p.width(),
                p.height()
            )));
        }
    }
    let planes = base_planes(img)?;
    let pw = prior.map_or(0, |p| p.num_classes());
    let stdz = standardization(pw);
    let f = NUM_BASE_FEATURES + pw;
    let mut values = vec![0.0; w * h * f];
    for (c, plane) in planes.iter().enumerate() {
        let (m, s) = stdz[c];
        for (i, &v) in plane.iter().enumerate() {
            values[i * f + c] = (v - m) / s;
        }
    }
    if let Some(p) = prior {
        for (i, px) in p.grid().values().chunks_exact(pw).enumerate() {
            for (k, &v) in px.iter().enumerate() {
                let (m, s) = stdz[NUM_BASE_FEATURES + k];
                values[i * f + NUM_BASE_FEATURES + k] = (v.max(PRIOR_FLOOR).ln() - m) / s;
            }
        }
    }
    Grid2D::new(w, h, f, values)
}
