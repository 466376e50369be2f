//! Zoom ratios and region zooming.
//!
//! A region is the integer pixel rectangle `(x0, y0, sw, sh)` covering a
//! proposal, clamped to the image, resampled to `(zw, zh)`. Zoomed pixel
//! `u` samples source coordinate `x0 + (u + 0.5) * sw / zw - 0.5`, the
//! same center mapping [`bilinear_resize`] uses.

use crate::error::{HaznError, Result};
use crate::grid::{bilinear_resize, crop_rect, AbsBox, Grid2D, LabelMap, PixelRect, ScoreMap};
use crate::sen::{Level, RoiProposal};

#[derive(Clone, Debug, PartialEq)]
pub struct ZoomConfig {
    /// Target size when the whole object is visible, and at part level.
    pub s_t_full: f64,
    /// Target size for objects judged truncated.
    pub s_t_truncated: f64,
    pub ratio_min: f64,
    pub ratio_max: f64,
    /// Minimum fraction of box pixels labeled with a leg class for an
    /// object to count as complete.
    pub leg_pixel_fraction: f64,
    /// Leg class ids. Empty disables the truncation rule.
    pub leg_classes: Vec<u8>,
}

impl Default for ZoomConfig {
    fn default() -> Self {
        ZoomConfig {
            s_t_full: 255.0,
            s_t_truncated: 140.0,
            ratio_min: 0.4,
            ratio_max: 2.5,
            leg_pixel_fraction: 0.001,
            leg_classes: vec![5, 6],
        }
    }
}

impl ZoomConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio_min > 0.0 && self.ratio_min <= self.ratio_max && self.ratio_max.is_finite()) {
            return Err(HaznError::invalid("zoom ratios need 0 < ratio_min <= ratio_max"));
        }
        if !(self.s_t_full > 0.0
            && self.s_t_truncated > 0.0
            && self.s_t_full.is_finite()
            && self.s_t_truncated.is_finite())
        {
            return Err(HaznError::invalid("zoom target sizes must be positive"));
        }
        if !(0.0..=1.0).contains(&self.leg_pixel_fraction) {
            return Err(HaznError::invalid("leg_pixel_fraction must lie in [0, 1]"));
        }
        Ok(())
    }

    fn clamp(&self, r: f64) -> f64 {
        r.clamp(self.ratio_min, self.ratio_max)
    }
}

/// Fraction of pixels carrying one of `classes`.
pub fn class_fraction(labels: &LabelMap, classes: &[u8]) -> f64 {
    let n = labels.labels().len();
    let hits = labels.labels().iter().filter(|l| classes.contains(l)).count();
    hits as f64 / n as f64
}

/// `parts_in_box` holds the predicted labels inside `b`.
pub fn zoom_ratio(b: &AbsBox, parts_in_box: &LabelMap, level: Level, cfg: &ZoomConfig) -> Result<f64> {
    if !(b.w > 0.0 && b.h > 0.0 && b.w.is_finite() && b.h.is_finite()) {
        return Err(HaznError::invalid(format!("degenerate box {}x{}", b.w, b.h)));
    }
    let side = b.w.max(b.h);
    let target = match level {
        Level::Part => cfg.s_t_full,
        Level::Object => {
            if cfg.leg_classes.is_empty() || class_fraction(parts_in_box, &cfg.leg_classes) >= cfg.leg_pixel_fraction {
                cfg.s_t_full
            } else {
                cfg.s_t_truncated
            }
        }
    };
    Ok(cfg.clamp(target / side))
}

/// Clamps `b` to the image, then computes its ratio from the labels inside.
pub fn ratio_in_image(b: &AbsBox, labels: &LabelMap, level: Level, cfg: &ZoomConfig) -> Result<(AbsBox, f64)> {
    let clamped = b
        .clamp_to(labels.width(), labels.height())
        .ok_or_else(|| HaznError::invalid("box lies outside the image"))?;
    let inside = labels.crop(&clamped)?;
    let r = zoom_ratio(&clamped, &inside, level, cfg)?;
    Ok((clamped, r))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ZoomedRegion {
    /// The proposal box this region was built from.
    pub source_box: AbsBox,
    /// Integer source rectangle inside the image.
    pub x0: usize,
    pub y0: usize,
    pub sw: usize,
    pub sh: usize,
    pub zw: usize,
    pub zh: usize,
    pub ratio: f64,
    pub zoomed_img: Grid2D,
    pub zoomed_prior: Option<ScoreMap>,
    pub confidence: f64,
}

impl ZoomedRegion {
    pub fn rect_box(&self) -> AbsBox {
        AbsBox {
            x_min: self.x0 as f64,
            y_min: self.y0 as f64,
            w: self.sw as f64,
            h: self.sh as f64,
        }
    }

    /// Source coordinates sampled by zoomed pixel `(u, v)`.
    pub fn to_source(&self, u: f64, v: f64) -> (f64, f64) {
        (
            self.x0 as f64 + (u + 0.5) * self.sw as f64 / self.zw as f64 - 0.5,
            self.y0 as f64 + (v + 0.5) * self.sh as f64 / self.zh as f64 - 0.5,
        )
    }

    /// Inverse of [`to_source`](Self::to_source).
    pub fn to_zoomed(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.x0 as f64 + 0.5) * self.zw as f64 / self.sw as f64 - 0.5,
            (y - self.y0 as f64 + 0.5) * self.zh as f64 / self.sh as f64 - 0.5,
        )
    }

    /// Maps a box in zoomed coordinates to image coordinates.
    pub fn box_to_source(&self, b: &AbsBox) -> AbsBox {
        let sx = self.sw as f64 / self.zw as f64;
        let sy = self.sh as f64 / self.zh as f64;
        AbsBox {
            x_min: self.x0 as f64 + b.x_min * sx,
            y_min: self.y0 as f64 + b.y_min * sy,
            w: b.w * sx,
            h: b.h * sy,
        }
    }

    /// Maps an image-coordinate box into zoomed coordinates.
    pub fn box_to_zoomed(&self, b: &AbsBox) -> AbsBox {
        let sx = self.zw as f64 / self.sw as f64;
        let sy = self.zh as f64 / self.sh as f64;
        AbsBox {
            x_min: (b.x_min - self.x0 as f64) * sx,
            y_min: (b.y_min - self.y0 as f64) * sy,
            w: b.w * sx,
            h: b.h * sy,
        }
    }

    /// Manifest line: `x_min y_min w h ratio confidence` of the source rect.
    pub fn manifest_line(&self) -> String {
        format!(
            "{} {} {} {} {:.6} {:.6}",
            self.x0, self.y0, self.sw, self.sh, self.ratio, self.confidence
        )
    }
}

/// Integer rectangle covering `b` intersected with a `w × h` image.
pub fn clamped_rect(b: &AbsBox, w: usize, h: usize) -> Result<PixelRect> {
    let r = PixelRect::covering(b);
    let c = PixelRect {
        x0: r.x0.max(0),
        y0: r.y0.max(0),
        x1: r.x1.min(w as i64),
        y1: r.y1.min(h as i64),
    };
    if c.x1 <= c.x0 || c.y1 <= c.y0 {
        return Err(HaznError::invalid(format!(
            "box ({}, {}, {}, {}) lies outside the {w}x{h} image",
            b.x_min, b.y_min, b.w, b.h
        )));
    }
    Ok(c)
}

/// Crops the proposal's pixel rectangle from `img` (and `prior`) and
/// resizes it by `ratio`.
pub fn zoom_region(img: &Grid2D, prior: Option<&ScoreMap>, prop: &RoiProposal, ratio: f64) -> Result<ZoomedRegion> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(HaznError::invalid(format!("zoom ratio must be positive, got {ratio}")));
    }
    if let Some(p) = prior {
        if p.width() != img.width() || p.height() != img.height() {
            return Err(HaznError::invalid("prior scores and image differ in size"));
        }
    }
    let rect = clamped_rect(&prop.bbox, img.width(), img.height())?;
    let (sw, sh) = (rect.width(), rect.height());
    let zw = ((sw as f64 * ratio).round() as usize).max(1);
    let zh = ((sh as f64 * ratio).round() as usize).max(1);
    let zoomed_img = bilinear_resize(&crop_rect(img, rect)?, zw, zh)?;
    let zoomed_prior = match prior {
        Some(p) => {
            let g = bilinear_resize(&crop_rect(p.grid(), rect)?, zw, zh)?;
            Some(if p.is_normalized() {
                ScoreMap::normalized_unchecked(g)
            } else {
                ScoreMap::unnormalized(g)
            })
        }
        None => None,
    };
    Ok(ZoomedRegion {
        source_box: prop.bbox,
        x0: rect.x0 as usize,
        y0: rect.y0 as usize,
        sw,
        sh,
        zw,
        zh,
        ratio,
        zoomed_img,
        zoomed_prior,
        confidence: prop.confidence,
    })
}

/// ROI scores resampled back to the `sw × sh` source rectangle.
pub fn unzoom_local(z: &ZoomedRegion, roi_scores: &ScoreMap) -> Result<ScoreMap> {
    if roi_scores.width() != z.zw || roi_scores.height() != z.zh {
        return Err(HaznError::invalid(format!(
            "ROI scores are {}x{}, region is {}x{}",
            roi_scores.width(),
            roi_scores.height(),
            z.zw,
            z.zh
        )));
    }
    let g = bilinear_resize(roi_scores.grid(), z.sw, z.sh)?;
    Ok(if roi_scores.is_normalized() {
        ScoreMap::normalized_unchecked(g)
    } else {
        ScoreMap::unnormalized(g)
    })
}

/// Unzoomed scores pasted into an all-zero canvas, with the mask of
/// pasted pixels.
pub fn unzoom_scores(
    z: &ZoomedRegion,
    roi_scores: &ScoreMap,
    canvas_w: usize,
    canvas_h: usize,
) -> Result<(ScoreMap, Grid2D)> {
    if z.x0 + z.sw > canvas_w || z.y0 + z.sh > canvas_h {
        return Err(HaznError::invalid(format!(
            "region at ({}, {}) size {}x{} does not fit a {canvas_w}x{canvas_h} canvas",
            z.x0, z.y0, z.sw, z.sh
        )));
    }
    let local = unzoom_local(z, roi_scores)?;
    let c = local.num_classes();
    let mut canvas = vec![0.0; canvas_w * canvas_h * c];
    let mut mask = vec![0.0; canvas_w * canvas_h];
    for y in 0..z.sh {
        let row = (z.y0 + y) * canvas_w + z.x0;
        canvas[row * c..(row + z.sw) * c].copy_from_slice(&local.grid().values()[y * z.sw * c..(y + 1) * z.sw * c]);
        mask[row..row + z.sw].fill(1.0);
    }
    let g = Grid2D::from_raw_unchecked(canvas_w, canvas_h, c, canvas);
    // Uncovered pixels are all zero, so only the pasted area is normalized.
    Ok((
        ScoreMap::unnormalized(g),
        Grid2D::from_raw_unchecked(canvas_w, canvas_h, 1, mask),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(w: usize, h: usize, fill: u8) -> LabelMap {
        LabelMap::filled(w, h, 7, fill).unwrap()
    }

    fn prop(x: f64, y: f64, w: f64, h: f64) -> RoiProposal {
        RoiProposal {
            bbox: AbsBox::new(x, y, w, h).unwrap(),
            confidence: 0.8,
        }
    }

    #[test]
    fn example_ratios() {
        let cfg = ZoomConfig::default();
        let b = AbsBox::new(0.0, 0.0, 100.0, 200.0).unwrap();
        assert_eq!(
            zoom_ratio(&b, &labels(100, 200, 0), Level::Part, &cfg).unwrap(),
            255.0 / 200.0
        );
        let b = AbsBox::new(0.0, 0.0, 300.0, 400.0).unwrap();
        assert_eq!(zoom_ratio(&b, &labels(300, 400, 2), Level::Object, &cfg).unwrap(), 0.4);
        let b = AbsBox::new(0.0, 0.0, 50.0, 60.0).unwrap();
        assert_eq!(zoom_ratio(&b, &labels(50, 60, 0), Level::Part, &cfg).unwrap(), 2.5);
    }

    #[test]
    fn leg_fraction_threshold() {
        let cfg = ZoomConfig::default();
        let b = AbsBox::new(0.0, 0.0, 100.0, 100.0).unwrap();
        let mut l = labels(100, 100, 1);
        assert_eq!(zoom_ratio(&b, &l, Level::Object, &cfg).unwrap(), 1.4);
        // 10 of 10000 pixels = 0.1%.
        for x in 0..10 {
            l.set(x, 0, 6);
        }
        assert_eq!(zoom_ratio(&b, &l, Level::Object, &cfg).unwrap(), 2.55f64.min(2.5));
        let generic = ZoomConfig {
            leg_classes: vec![],
            ..ZoomConfig::default()
        };
        assert_eq!(
            zoom_ratio(&b, &labels(100, 100, 0), Level::Object, &generic).unwrap(),
            2.5
        );
    }

    #[test]
    fn degenerate_box_is_rejected() {
        let b = AbsBox {
            x_min: 0.0,
            y_min: 0.0,
            w: 0.0,
            h: 3.0,
        };
        assert!(zoom_ratio(&b, &labels(1, 3, 0), Level::Part, &ZoomConfig::default()).is_err());
    }

    #[test]
    fn identity_zoom_of_whole_image() {
        let img = Grid2D::from_fn(9, 7, 3, |x, y, c| (x * 3 + y * 5 + c) as f64 / 40.0).unwrap();
        let z = zoom_region(&img, None, &prop(0.0, 0.0, 9.0, 7.0), 1.0).unwrap();
        assert_eq!(z.zoomed_img, img);
    }

    #[test]
    fn doubling_a_constant_crop() {
        let img = Grid2D::filled(20, 20, 3, 0.25).unwrap();
        let z = zoom_region(&img, None, &prop(2.0, 3.0, 6.0, 5.0), 2.0).unwrap();
        assert_eq!((z.zw, z.zh), (12, 10));
        assert!(z.zoomed_img.values().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn box_outside_image_is_rejected() {
        let img = Grid2D::zeros(10, 10, 3).unwrap();
        assert!(zoom_region(&img, None, &prop(20.0, 0.0, 5.0, 5.0), 1.0).is_err());
    }

    #[test]
    fn half_zoom_maps_back_near_origin() {
        let img = Grid2D::zeros(100, 100, 3).unwrap();
        let z = zoom_region(&img, None, &prop(10.0, 20.0, 40.0, 30.0), 0.5).unwrap();
        for v in 0..z.zh {
            for u in 0..z.zw {
                let (x, y) = z.to_source(u as f64, v as f64);
                // The sampled point lies inside the block of source pixels
                // that shrank into (u, v).
                let bx = 10.0 + u as f64 * 2.0;
                let by = 20.0 + v as f64 * 2.0;
                assert!((x - (bx + 0.5)).abs() <= 1.0 && (y - (by + 0.5)).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn unit_ratio_unzoom_is_a_paste() {
        let img = Grid2D::zeros(12, 10, 3).unwrap();
        let z = zoom_region(&img, None, &prop(3.0, 2.0, 5.0, 4.0), 1.0).unwrap();
        let roi = ScoreMap::normalized(
            Grid2D::from_fn(
                5,
                4,
                2,
                |x, _, c| if c == 0 { x as f64 / 4.0 } else { 1.0 - x as f64 / 4.0 },
            )
            .unwrap(),
        )
        .unwrap();
        let (canvas, mask) = unzoom_scores(&z, &roi, 12, 10).unwrap();
        assert_eq!(mask.values().iter().filter(|&&m| m == 1.0).count(), 20);
        for y in 0..10 {
            for x in 0..12 {
                let inside = (3..8).contains(&x) && (2..6).contains(&y);
                let want = if inside { roi.grid().get(x - 3, y - 2, 0) } else { 0.0 };
                assert_eq!(canvas.grid().get(x, y, 0), want);
            }
        }
        assert!(unzoom_scores(&z, &roi, 6, 10).is_err());
    }

    #[test]
    fn zoom_then_unzoom_smooth_map() {
        let (w, h) = (60, 50);
        let smooth = Grid2D::from_fn(w, h, 2, |x, y, c| {
            let v = 0.5 + 0.4 * ((x as f64 / 9.0).sin() * (y as f64 / 11.0).cos());
            if c == 0 {
                v
            } else {
                1.0 - v
            }
        })
        .unwrap();
        let s = ScoreMap::normalized(smooth.clone()).unwrap();
        let img = Grid2D::zeros(w, h, 3).unwrap();
        let z = zoom_region(&img, Some(&s), &prop(5.0, 4.0, 40.0, 30.0), 2.0).unwrap();
        let (back, _) = unzoom_scores(&z, z.zoomed_prior.as_ref().unwrap(), w, h).unwrap();
        let mut dev = 0.0;
        for y in 4..34 {
            for x in 5..45 {
                dev += (back.grid().get(x, y, 0) - smooth.get(x, y, 0)).abs();
            }
        }
        assert!(dev / 1200.0 < 0.02);
    }

    proptest! {
        #[test]
        fn ratio_is_clamped_and_monotone(w in 1.0f64..2000.0, h in 1.0f64..2000.0, d in 1.0f64..500.0) {
            let cfg = ZoomConfig::default();
            let b = AbsBox::new(0.0, 0.0, w, h).unwrap();
            let l = labels(1, 1, 0);
            let r = zoom_ratio(&b, &l, Level::Part, &cfg).unwrap();
            prop_assert!((cfg.ratio_min..=cfg.ratio_max).contains(&r));
            let bigger = AbsBox::new(0.0, 0.0, w + d, h + d).unwrap();
            let r2 = zoom_ratio(&bigger, &l, Level::Part, &cfg).unwrap();
            prop_assert!(r2 <= r);
            if r2 > cfg.ratio_min && r < cfg.ratio_max {
                prop_assert!(r2 < r);
            }
        }

        #[test]
        fn coordinate_maps_compose_to_identity(
            x in 0.0f64..60.0, y in 0.0f64..60.0, w in 1.0f64..60.0, h in 1.0f64..60.0, ratio in 0.4f64..2.5,
            fu in 0.0f64..1.0, fv in 0.0f64..1.0,
        ) {
            let img = Grid2D::zeros(128, 128, 1).unwrap();
            let z = zoom_region(&img, None, &prop(x, y, w, h), ratio).unwrap();
            let (sx, sy) = (z.x0 as f64 + fu * (z.sw - 1) as f64, z.y0 as f64 + fv * (z.sh - 1) as f64);
            let (u, v) = z.to_zoomed(sx, sy);
            let (bx, by) = z.to_source(u, v);
            prop_assert!((bx - sx).abs() < 0.5 && (by - sy).abs() < 0.5);
            let b = AbsBox::new(sx, sy, 3.0, 2.0).unwrap();
            let rt = z.box_to_source(&z.box_to_zoomed(&b));
            prop_assert!((rt.x_min - b.x_min).abs() < 1e-9 && (rt.w - b.w).abs() < 1e-9);
        }

        #[test]
        fn unzoom_preserves_normalization(seed in 0u64..300, ratio in 0.4f64..2.5) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let img = Grid2D::zeros(30, 30, 3).unwrap();
            let z = zoom_region(&img, None, &prop(3.0, 4.0, 17.0, 11.0), ratio).unwrap();
            let raw = Grid2D::from_fn(z.zw, z.zh, 4, |_, _, _| rng.random_range(-3.0..3.0)).unwrap();
            let roi = crate::grid::softmax_channels(&raw).unwrap();
            let (canvas, mask) = unzoom_scores(&z, &roi, 30, 30).unwrap();
            for yy in 0..30 {
                for xx in 0..30 {
                    if mask.get(xx, yy, 0) == 1.0 {
                        let s: f64 = canvas.grid().pixel(xx, yy).iter().sum();
                        prop_assert!((s - 1.0).abs() < 1e-5);
                    }
                }
            }
        }
    }
}
