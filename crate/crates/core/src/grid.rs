//! Dense multi-channel grids, label maps and boxes.
//!
//! Every other module works on these types. Values are stored row-major with
//! channels interleaved, so pixel `(x, y)` occupies
//! `values[(y * width + x) * channels ..][..channels]`.
//!
//! Resampling uses the center-based convention: destination pixel `d` samples
//! source coordinate `(d + 0.5) * scale - 0.5`, clamped to the source
//! rectangle.

use crate::error::{HaznError, Result};

/// Tolerance on per-pixel channel sums of a normalized [`ScoreMap`].
pub const NORMALIZATION_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct Grid2D {
    width: usize,
    height: usize,
    channels: usize,
    values: Vec<f64>,
}

impl Grid2D {
    pub fn new(width: usize, height: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        check_dims(width, height, channels)?;
        if values.len() != width * height * channels {
            return Err(HaznError::invalid(format!(
                "grid {width}x{height}x{channels} needs {} values, got {}",
                width * height * channels,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(HaznError::invalid(format!("non-finite grid value at index {pos}")));
        }
        Ok(Grid2D {
            width,
            height,
            channels,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        check_dims(width, height, channels)?;
        if !value.is_finite() {
            return Err(HaznError::invalid("fill value must be finite"));
        }
        Ok(Grid2D {
            width,
            height,
            channels,
            values: vec![value; width * height * channels],
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Result<Self> {
        Self::filled(width, height, channels, 0.0)
    }

    /// Builds a grid by evaluating `f(x, y, c)` at every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        check_dims(width, height, channels)?;
        let mut values = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    values.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, values)
    }

    pub(crate) fn from_raw_unchecked(width: usize, height: usize, channels: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), width * height * channels);
        Grid2D {
            width,
            height,
            channels,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.values[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        debug_assert!(v.is_finite());
        self.values[(y * self.width + x) * self.channels + c] = v;
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let start = (y * self.width + x) * self.channels;
        &self.values[start..start + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let start = (y * self.width + x) * self.channels;
        &mut self.values[start..start + self.channels]
    }

    pub fn same_shape(&self, other: &Grid2D) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn same_size(&self, other: &Grid2D) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Extracts a single channel as a one-channel grid.
    pub fn channel(&self, c: usize) -> Grid2D {
        assert!(c < self.channels);
        let values = self.values.chunks_exact(self.channels).map(|px| px[c]).collect();
        Grid2D::from_raw_unchecked(self.width, self.height, 1, values)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn check_dims(width: usize, height: usize, channels: usize) -> Result<()> {
    if width == 0 || height == 0 || channels == 0 {
        return Err(HaznError::invalid(format!(
            "grid dimensions must be positive, got {width}x{height}x{channels}"
        )));
    }
    Ok(())
}

/// Per-pixel class scores; channel 0 is background.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap {
    grid: Grid2D,
    normalized: bool,
}

impl ScoreMap {
    /// Wraps probabilities, verifying that every pixel sums to one.
    pub fn normalized(grid: Grid2D) -> Result<Self> {
        for (i, px) in grid.values.chunks_exact(grid.channels).enumerate() {
            let sum: f64 = px.iter().sum();
            if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE
                || px
                    .iter()
                    .any(|&p| !(-NORMALIZATION_TOLERANCE..=1.0 + NORMALIZATION_TOLERANCE).contains(&p))
            {
                return Err(HaznError::invalid(format!(
                    "pixel {i} is not a probability vector (sum {sum})"
                )));
            }
        }
        Ok(ScoreMap { grid, normalized: true })
    }

    pub fn unnormalized(grid: Grid2D) -> Self {
        ScoreMap {
            grid,
            normalized: false,
        }
    }

    pub(crate) fn normalized_unchecked(grid: Grid2D) -> Self {
        ScoreMap { grid, normalized: true }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn into_grid(self) -> Grid2D {
        self.grid
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn num_classes(&self) -> usize {
        self.grid.channels
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    /// Uniform distribution over `classes` at every pixel.
    pub fn uniform(width: usize, height: usize, classes: usize) -> Result<Self> {
        let grid = Grid2D::filled(width, height, classes, 1.0 / classes as f64)?;
        Ok(ScoreMap::normalized_unchecked(grid))
    }

    /// Largest deviation of a per-pixel channel sum from one.
    pub fn max_normalization_error(&self) -> f64 {
        self.grid
            .values
            .chunks_exact(self.grid.channels)
            .map(|px| (px.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Per-pixel integer class ids.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelMap {
    width: usize,
    height: usize,
    num_classes: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, num_classes: usize, labels: Vec<u8>) -> Result<Self> {
        check_dims(width, height, 1)?;
        if num_classes == 0 || num_classes > 256 {
            return Err(HaznError::invalid(format!(
                "num_classes must be in 1..=256, got {num_classes}"
            )));
        }
        if labels.len() != width * height {
            return Err(HaznError::invalid(format!(
                "label map {width}x{height} needs {} labels, got {}",
                width * height,
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(HaznError::invalid(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(LabelMap {
            width,
            height,
            num_classes,
            labels,
        })
    }

    pub fn filled(width: usize, height: usize, num_classes: usize, label: u8) -> Result<Self> {
        Self::new(width, height, num_classes, vec![label; width * height])
    }

    pub(crate) fn from_raw_unchecked(width: usize, height: usize, num_classes: usize, labels: Vec<u8>) -> Self {
        debug_assert_eq!(labels.len(), width * height);
        LabelMap {
            width,
            height,
            num_classes,
            labels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<u8> {
        self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, label: u8) {
        debug_assert!((label as usize) < self.num_classes);
        self.labels[y * self.width + x] = label;
    }

    pub fn same_size(&self, other: &LabelMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Crops the pixel rectangle of `b`, clamping out-of-range reads to the edge.
    pub fn crop(&self, b: &AbsBox) -> Result<LabelMap> {
        let rect = PixelRect::covering(b);
        rect.check_overlap(self.width, self.height)?;
        let mut labels = Vec::with_capacity(rect.width() * rect.height());
        for y in rect.y0..rect.y1 {
            let sy = clamp_index(y, self.height);
            for x in rect.x0..rect.x1 {
                labels.push(self.get(clamp_index(x, self.width), sy));
            }
        }
        Ok(LabelMap::from_raw_unchecked(
            rect.width(),
            rect.height(),
            self.num_classes,
            labels,
        ))
    }

    /// Nearest-neighbour resize under the center-based sampling convention.
    pub fn resize_nearest(&self, out_w: usize, out_h: usize) -> Result<LabelMap> {
        if out_w == 0 || out_h == 0 {
            return Err(HaznError::invalid("resize target must be at least 1x1"));
        }
        let xs = nearest_table(self.width, out_w);
        let ys = nearest_table(self.height, out_h);
        let mut labels = Vec::with_capacity(out_w * out_h);
        for &sy in &ys {
            for &sx in &xs {
                labels.push(self.get(sx, sy));
            }
        }
        Ok(LabelMap::from_raw_unchecked(out_w, out_h, self.num_classes, labels))
    }
}

fn nearest_table(src: usize, dst: usize) -> Vec<usize> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).round();
            s.clamp(0.0, (src - 1) as f64) as usize
        })
        .collect()
}

/// Axis-aligned box in continuous pixel coordinates. Pixel `(x, y)` covers
/// `[x, x + 1) × [y, y + 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AbsBox {
    pub x_min: f64,
    pub y_min: f64,
    pub w: f64,
    pub h: f64,
}

impl AbsBox {
    pub fn new(x_min: f64, y_min: f64, w: f64, h: f64) -> Result<Self> {
        if ![x_min, y_min, w, h].iter().all(|v| v.is_finite()) {
            return Err(HaznError::invalid("box coordinates must be finite"));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(HaznError::invalid(format!("box size must be positive, got {w}x{h}")));
        }
        Ok(AbsBox { x_min, y_min, w, h })
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn x_max(&self) -> f64 {
        self.x_min + self.w
    }

    pub fn y_max(&self) -> f64 {
        self.y_min + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x_min + self.w / 2.0, self.y_min + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Square root of the box area, the size measure used for binning.
    pub fn size_measure(&self) -> f64 {
        self.area().sqrt()
    }

    pub fn intersection(&self, other: &AbsBox) -> Option<AbsBox> {
        let x0 = self.x_min.max(other.x_min);
        let y0 = self.y_min.max(other.y_min);
        let x1 = self.x_max().min(other.x_max());
        let y1 = self.y_max().min(other.y_max());
        (x1 > x0 && y1 > y0).then(|| AbsBox {
            x_min: x0,
            y_min: y0,
            w: x1 - x0,
            h: y1 - y0,
        })
    }

    pub fn iou(&self, other: &AbsBox) -> f64 {
        let inter = self.intersection(other).map_or(0.0, |b| b.area());
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Intersects the box with the `width × height` image rectangle.
    pub fn clamp_to(&self, width: usize, height: usize) -> Option<AbsBox> {
        let image = AbsBox {
            x_min: 0.0,
            y_min: 0.0,
            w: width as f64,
            h: height as f64,
        };
        self.intersection(&image)
    }
}

/// Integer pixel rectangle `[x0, x1) × [y0, y1)`; may extend past the image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl PixelRect {
    /// Rounds a box outward so no covered pixel is lost.
    pub fn covering(b: &AbsBox) -> PixelRect {
        let x0 = b.x_min.floor() as i64;
        let y0 = b.y_min.floor() as i64;
        let x1 = (b.x_max().ceil() as i64).max(x0 + 1);
        let y1 = (b.y_max().ceil() as i64).max(y0 + 1);
        PixelRect { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> usize {
        (self.x1 - self.x0) as usize
    }

    pub fn height(&self) -> usize {
        (self.y1 - self.y0) as usize
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn to_box(&self) -> AbsBox {
        AbsBox {
            x_min: self.x0 as f64,
            y_min: self.y0 as f64,
            w: (self.x1 - self.x0) as f64,
            h: (self.y1 - self.y0) as f64,
        }
    }

    pub fn overlaps(&self, width: usize, height: usize) -> bool {
        self.x1 > 0 && self.y1 > 0 && self.x0 < width as i64 && self.y0 < height as i64
    }

    pub fn inside(&self, width: usize, height: usize) -> bool {
        self.x0 >= 0 && self.y0 >= 0 && self.x1 <= width as i64 && self.y1 <= height as i64
    }

    fn check_overlap(&self, width: usize, height: usize) -> Result<()> {
        if self.overlaps(width, height) {
            Ok(())
        } else {
            Err(HaznError::invalid(format!(
                "box [{}, {}) x [{}, {}) lies outside the {width}x{height} grid",
                self.x0, self.x1, self.y0, self.y1
            )))
        }
    }
}

#[inline]
fn clamp_index(i: i64, len: usize) -> usize {
    i.clamp(0, len as i64 - 1) as usize
}

/// Precomputed interpolation taps along one axis.
struct Taps {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<f64>,
}

impl Taps {
    fn new(src: usize, dst: usize) -> Taps {
        let scale = src as f64 / dst as f64;
        let max = (src - 1) as f64;
        let mut taps = Taps {
            lo: Vec::with_capacity(dst),
            hi: Vec::with_capacity(dst),
            frac: Vec::with_capacity(dst),
        };
        for d in 0..dst {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
            let lo = s.floor() as usize;
            taps.lo.push(lo);
            taps.hi.push((lo + 1).min(src - 1));
            taps.frac.push(s - lo as f64);
        }
        taps
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    // a + t(b - a) keeps constants exact.
    a + t * (b - a)
}

/// Bilinear resampling to `out_w × out_h`.
pub fn bilinear_resize(g: &Grid2D, out_w: usize, out_h: usize) -> Result<Grid2D> {
    if out_w == 0 || out_h == 0 {
        return Err(HaznError::invalid(format!(
            "resize target must be at least 1x1, got {out_w}x{out_h}"
        )));
    }
    let xt = Taps::new(g.width, out_w);
    let yt = Taps::new(g.height, out_h);
    let ch = g.channels;
    let mut out = Vec::with_capacity(out_w * out_h * ch);
    for oy in 0..out_h {
        let (y0, y1, fy) = (yt.lo[oy], yt.hi[oy], yt.frac[oy]);
        for ox in 0..out_w {
            let (x0, x1, fx) = (xt.lo[ox], xt.hi[ox], xt.frac[ox]);
            let a = g.pixel(x0, y0);
            let b = g.pixel(x1, y0);
            let c = g.pixel(x0, y1);
            let d = g.pixel(x1, y1);
            for k in 0..ch {
                let top = lerp(a[k], b[k], fx);
                let bottom = lerp(c[k], d[k], fx);
                let v = lerp(top, bottom, fy);
                // Rounding in lerp can overshoot the taps by an ulp.
                let lo = a[k].min(b[k]).min(c[k]).min(d[k]);
                let hi = a[k].max(b[k]).max(c[k]).max(d[k]);
                out.push(v.clamp(lo, hi));
            }
        }
    }
    Ok(Grid2D::from_raw_unchecked(out_w, out_h, ch, out))
}

/// Copies the pixel rectangle covering `b`; reads outside the grid clamp to
/// the nearest edge sample.
pub fn crop(g: &Grid2D, b: &AbsBox) -> Result<Grid2D> {
    crop_rect(g, PixelRect::covering(b))
}

pub(crate) fn crop_rect(g: &Grid2D, rect: PixelRect) -> Result<Grid2D> {
    rect.check_overlap(g.width, g.height)?;
    let ch = g.channels;
    let mut out = Vec::with_capacity(rect.area() * ch);
    for y in rect.y0..rect.y1 {
        let sy = clamp_index(y, g.height);
        if rect.x0 >= 0 && rect.x1 <= g.width as i64 {
            let start = (sy * g.width + rect.x0 as usize) * ch;
            let end = (sy * g.width + rect.x1 as usize) * ch;
            out.extend_from_slice(&g.values[start..end]);
        } else {
            for x in rect.x0..rect.x1 {
                out.extend_from_slice(g.pixel(clamp_index(x, g.width), sy));
            }
        }
    }
    Ok(Grid2D::from_raw_unchecked(rect.width(), rect.height(), ch, out))
}

/// Per-pixel softmax across channels.
pub fn softmax_channels(logits: &Grid2D) -> Result<ScoreMap> {
    if logits.channels < 2 {
        return Err(HaznError::invalid("softmax needs at least two channels"));
    }
    let ch = logits.channels;
    let mut out = Vec::with_capacity(logits.values.len());
    for px in logits.values.chunks_exact(ch) {
        let m = px.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut sum = 0.0;
        for &z in px {
            let e = (z - m).exp();
            sum += e;
            out.push(e);
        }
        for p in &mut out[start..] {
            *p /= sum;
        }
    }
    Ok(ScoreMap::normalized_unchecked(Grid2D::from_raw_unchecked(
        logits.width,
        logits.height,
        ch,
        out,
    )))
}

/// Index of the largest channel per pixel; ties go to the lowest index.
pub fn argmax_labels(s: &ScoreMap) -> LabelMap {
    let g = &s.grid;
    let labels = g
        .values
        .chunks_exact(g.channels)
        .map(|px| {
            let mut best = 0;
            for (i, &v) in px.iter().enumerate().skip(1) {
                if v > px[best] {
                    best = i;
                }
            }
            best as u8
        })
        .collect();
    LabelMap::from_raw_unchecked(g.width, g.height, g.channels.min(256), labels)
}
