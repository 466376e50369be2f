//! Scale estimation: dense box-regression targets, the balanced loss,
//! proposal decoding and greedy non-maximum suppression.
//!
//! Pixel `j` sits at its integer index `(x, y)`. Its regression target is
//! `(cx - x, cy - y, w, h) / 400` for the tight box of the region it
//! belongs to, where `(cx, cy)` is the box center.

use std::fmt::Write as _;

use crate::error::{HaznError, Result};
use crate::grid::{AbsBox, Grid2D, LabelMap};

/// Regression outputs are divided by this constant.
pub const REG_SCALE: f64 = 400.0;

/// Smallest decoded box side, in pixels.
pub const MIN_BOX_SIDE: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Level {
    Object,
    Part,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SenLossConfig {
    /// Weight of the confidence term.
    pub lambda: f64,
    /// Side of the seed window around each region's representative pixel.
    pub seed_window: usize,
}

impl Default for SenLossConfig {
    fn default() -> Self {
        SenLossConfig {
            lambda: 1.0,
            seed_window: 7,
        }
    }
}

impl SenLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(HaznError::invalid("lambda must be finite and >= 0"));
        }
        if self.seed_window == 0 || self.seed_window % 2 == 0 {
            return Err(HaznError::invalid("seed_window must be odd and >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SenTargets {
    /// Four channels: dx, dy, w, h, all divided by [`REG_SCALE`].
    pub reg: Grid2D,
    /// One channel, 1.0 at confidence seeds and 0.0 elsewhere.
    pub seeds: Grid2D,
}

impl SenTargets {
    pub fn empty(width: usize, height: usize) -> Result<Self> {
        Ok(SenTargets {
            reg: Grid2D::zeros(width, height, 4)?,
            seeds: Grid2D::zeros(width, height, 1)?,
        })
    }

    pub fn width(&self) -> usize {
        self.seeds.width()
    }

    pub fn height(&self) -> usize {
        self.seeds.height()
    }

    pub fn num_seeds(&self) -> usize {
        self.seeds.values().iter().filter(|&&s| s > 0.5).count()
    }

    /// Box encoded at pixel `(x, y)`.
    pub fn decode_at(&self, x: usize, y: usize) -> Option<AbsBox> {
        decode_box(x, y, self.reg.pixel(x, y))
    }

    pub fn crop(&self, b: &AbsBox) -> Result<SenTargets> {
        Ok(SenTargets {
            reg: crate::grid::crop(&self.reg, b)?,
            seeds: crate::grid::crop(&self.seeds, b)?,
        })
    }
}

/// Connected pixel set with its tight box.
#[derive(Clone, Debug)]
pub struct Region {
    pub pixels: Vec<(usize, usize)>,
    pub bbox: AbsBox,
}

impl Region {
    fn from_pixels(pixels: Vec<(usize, usize)>) -> Option<Region> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for &(x, y) in &pixels {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        (!pixels.is_empty()).then(|| Region {
            bbox: AbsBox {
                x_min: x0 as f64,
                y_min: y0 as f64,
                w: (x1 - x0 + 1) as f64,
                h: (y1 - y0 + 1) as f64,
            },
            pixels,
        })
    }

    /// Region pixel closest to the region centroid; ties go to the first
    /// pixel in raster order.
    pub fn representative(&self) -> (usize, usize) {
        let n = self.pixels.len() as f64;
        let cx = self.pixels.iter().map(|p| p.0 as f64).sum::<f64>() / n;
        let cy = self.pixels.iter().map(|p| p.1 as f64).sum::<f64>() / n;
        let mut best = self.pixels[0];
        let mut best_d = f64::INFINITY;
        let mut sorted = self.pixels.clone();
        sorted.sort_by_key(|&(x, y)| (y, x));
        for p in sorted {
            let d = (p.0 as f64 - cx).powi(2) + (p.1 as f64 - cy).powi(2);
            if d < best_d {
                best_d = d;
                best = p;
            }
        }
        best
    }
}

/// 4-connected components of every non-background class, in raster order
/// of their first pixel.
pub fn part_regions(gt: &LabelMap) -> Vec<Region> {
    let (w, h) = (gt.width(), gt.height());
    let mut seen = vec![false; w * h];
    let mut regions = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        let class = gt.labels()[start];
        if class == 0 || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            pixels.push((x, y));
            let mut visit = |j: usize| {
                if !seen[j] && gt.labels()[j] == class {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        regions.extend(Region::from_pixels(pixels));
    }
    regions
}

fn mask_region(mask: &Grid2D) -> Option<Region> {
    let mut pixels = Vec::new();
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y, 0) > 0.5 {
                pixels.push((x, y));
            }
        }
    }
    Region::from_pixels(pixels)
}

/// Builds regression and seed maps. Object level uses the instance masks;
/// part level ignores them and uses the connected part segments of `gt`.
/// Where regions overlap, later regions overwrite earlier ones.
pub fn build_sen_targets(masks: &[Grid2D], level: Level, gt: &LabelMap, cfg: &SenLossConfig) -> Result<SenTargets> {
    cfg.validate()?;
    let (w, h) = (gt.width(), gt.height());
    let regions: Vec<Region> = match level {
        Level::Object => {
            if let Some(m) = masks
                .iter()
                .find(|m| m.width() != w || m.height() != h || m.channels() != 1)
            {
                return Err(HaznError::invalid(format!(
                    "instance mask {}x{}x{} does not match the {w}x{h} label map",
                    m.width(),
                    m.height(),
                    m.channels()
                )));
            }
            masks.iter().filter_map(mask_region).collect()
        }
        Level::Part => part_regions(gt),
    };
    let mut t = SenTargets::empty(w, h)?;
    let half = (cfg.seed_window / 2) as i64;
    for r in &regions {
        let (cx, cy) = r.bbox.center();
        let (bw, bh) = (r.bbox.w / REG_SCALE, r.bbox.h / REG_SCALE);
        let mut member = std::collections::HashSet::with_capacity(r.pixels.len());
        for &(x, y) in &r.pixels {
            let px = t.reg.pixel_mut(x, y);
            px[0] = (cx - x as f64) / REG_SCALE;
            px[1] = (cy - y as f64) / REG_SCALE;
            px[2] = bw;
            px[3] = bh;
            t.seeds.set(x, y, 0, 0.0);
            member.insert((x, y));
        }
        let (rx, ry) = r.representative();
        for dy in -half..=half {
            for dx in -half..=half {
                let (x, y) = (rx as i64 + dx, ry as i64 + dy);
                if x < 0 || y < 0 {
                    continue;
                }
                let p = (x as usize, y as usize);
                if member.contains(&p) {
                    t.seeds.set(p.0, p.1, 0, 1.0);
                }
            }
        }
    }
    Ok(t)
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Clone, Debug)]
pub struct SenLoss {
    /// `l_b + lambda * l_c`.
    pub loss: f64,
    pub l_b: f64,
    pub l_c: f64,
    /// Fraction of non-seed pixels.
    pub beta: f64,
    pub grad_conf: Grid2D,
    pub grad_reg: Grid2D,
}

/// Balanced cross-entropy on the seed map plus squared error of the box
/// regression at seed pixels. With no seeds the regression term is 0.
pub fn sen_loss(pred_conf_logit: &Grid2D, pred_reg: &Grid2D, tgt: &SenTargets, cfg: &SenLossConfig) -> Result<SenLoss> {
    let (w, h) = (tgt.width(), tgt.height());
    if pred_conf_logit.width() != w
        || pred_conf_logit.height() != h
        || pred_conf_logit.channels() != 1
        || !pred_reg.same_shape(&tgt.reg)
    {
        return Err(HaznError::invalid("SEN prediction and target shapes differ"));
    }
    let n = (w * h) as f64;
    let seeds = tgt.seeds.values();
    let num_seeds = tgt.num_seeds();
    let beta = 1.0 - num_seeds as f64 / n;

    let mut l_c = 0.0;
    let mut grad_conf = vec![0.0; w * h];
    for (i, (&z, &s)) in pred_conf_logit.values().iter().zip(seeds).enumerate() {
        let p = sigmoid(z);
        if s > 0.5 {
            // -log sigma(z) = softplus(-z)
            l_c += beta * softplus(-z);
            grad_conf[i] = cfg.lambda * beta * (p - 1.0);
        } else {
            // -log(1 - sigma(z)) = softplus(z)
            l_c += (1.0 - beta) * softplus(z);
            grad_conf[i] = cfg.lambda * (1.0 - beta) * p;
        }
    }

    let mut l_b = 0.0;
    let mut grad_reg = vec![0.0; w * h * 4];
    if num_seeds > 0 {
        let inv = 1.0 / num_seeds as f64;
        for (i, &s) in seeds.iter().enumerate() {
            if s <= 0.5 {
                continue;
            }
            for c in 0..4 {
                let d = pred_reg.values()[i * 4 + c] - tgt.reg.values()[i * 4 + c];
                l_b += d * d * inv;
                grad_reg[i * 4 + c] = 2.0 * d * inv;
            }
        }
    }

    Ok(SenLoss {
        loss: l_b + cfg.lambda * l_c,
        l_b,
        l_c,
        beta,
        grad_conf: Grid2D::from_raw_unchecked(w, h, 1, grad_conf),
        grad_reg: Grid2D::from_raw_unchecked(w, h, 4, grad_reg),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoiProposal {
    pub bbox: AbsBox,
    pub confidence: f64,
}

impl RoiProposal {
    /// `confidence x_min y_min w h`, six decimals each.
    pub fn to_line(&self) -> String {
        format!(
            "{:.6} {:.6} {:.6} {:.6} {:.6}",
            self.confidence, self.bbox.x_min, self.bbox.y_min, self.bbox.w, self.bbox.h
        )
    }

    pub fn parse_line(line: &str) -> Result<RoiProposal> {
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| HaznError::format("proposal", format!("{line:?}: {e}")))?;
        if vals.len() != 5 {
            return Err(HaznError::format(
                "proposal",
                format!("expected 5 fields, got {}", vals.len()),
            ));
        }
        Ok(RoiProposal {
            confidence: vals[0],
            bbox: AbsBox::new(vals[1], vals[2], vals[3], vals[4])?,
        })
    }
}

pub fn format_proposals(props: &[RoiProposal]) -> String {
    let mut s = String::new();
    for p in props {
        let _ = writeln!(s, "{}", p.to_line());
    }
    s
}

pub fn parse_proposals(text: &str) -> Result<Vec<RoiProposal>> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(RoiProposal::parse_line)
        .collect()
}

fn decode_box(x: usize, y: usize, reg: &[f64]) -> Option<AbsBox> {
    let cx = x as f64 + REG_SCALE * reg[0];
    let cy = y as f64 + REG_SCALE * reg[1];
    let bw = (REG_SCALE * reg[2]).max(MIN_BOX_SIDE);
    let bh = (REG_SCALE * reg[3]).max(MIN_BOX_SIDE);
    AbsBox::from_center(cx, cy, bw, bh).ok()
}

/// One proposal per pixel whose confidence exceeds `threshold`, scanning
/// every `stride`-th row and column.
pub fn decode_proposals(
    pred_conf_logit: &Grid2D,
    pred_reg: &Grid2D,
    threshold: f64,
    stride: usize,
) -> Result<Vec<RoiProposal>> {
    if !pred_conf_logit.same_size(pred_reg) || pred_conf_logit.channels() != 1 || pred_reg.channels() != 4 {
        return Err(HaznError::invalid("confidence and regression maps differ in shape"));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(HaznError::invalid("decode threshold must lie in (0, 1)"));
    }
    if stride == 0 {
        return Err(HaznError::invalid("stride must be >= 1"));
    }
    let mut out = Vec::new();
    for y in (0..pred_conf_logit.height()).step_by(stride) {
        for x in (0..pred_conf_logit.width()).step_by(stride) {
            let p = sigmoid(pred_conf_logit.get(x, y, 0));
            if p > threshold {
                if let Some(bbox) = decode_box(x, y, pred_reg.pixel(x, y)) {
                    out.push(RoiProposal { bbox, confidence: p });
                }
            }
        }
    }
    Ok(out)
}

/// Greedy suppression: highest confidence first (ties: larger area, then
/// input order); a proposal survives if its IOU with every kept one is at
/// most `iou_threshold`.
pub fn nms(props: &[RoiProposal], iou_threshold: f64) -> Vec<RoiProposal> {
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&props[a], &props[b]);
        pb.confidence
            .total_cmp(&pa.confidence)
            .then(pb.bbox.area().total_cmp(&pa.bbox.area()))
            .then(a.cmp(&b))
    });
    let mut kept: Vec<RoiProposal> = Vec::new();
    for i in order {
        let cand = props[i];
        if kept.iter().all(|k| k.bbox.iou(&cand.bbox) <= iou_threshold) {
            kept.push(cand);
        }
    }
    kept
}
