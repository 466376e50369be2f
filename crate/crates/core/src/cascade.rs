//! The three-stage hierarchy: whole image, zoomed objects, zoomed parts.
//!
//! Each later stage re-scores zoomed regions and merges the results into
//! the previous score map: at a covered pixel the merged score is the
//! confidence-weighted mean of the covering regions' unzoomed scores,
//! elsewhere the previous score is kept.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{HaznError, Result};
use crate::grid::{argmax_labels, bilinear_resize, softmax_channels, AbsBox, Grid2D, LabelMap, ScoreMap};
use crate::scorer::{extract_features, ScorerParams, Stage};
use crate::sen::{decode_proposals, nms, Level, RoiProposal};
use crate::zoom::{ratio_in_image, unzoom_local, zoom_region, ZoomConfig, ZoomedRegion};

pub const MSA_SCALES: [f64; 3] = [0.5, 1.0, 1.5];

#[derive(Clone, Debug, PartialEq)]
pub struct CascadeConfig {
    pub enable_object_stage: bool,
    pub enable_part_stage: bool,
    pub zoom: ZoomConfig,
    pub object_nms: f64,
    pub part_nms: f64,
    pub decode_threshold: f64,
    /// Pixel stride when decoding proposals; 1 decodes every pixel.
    pub decode_stride: usize,
    /// Most confident regions kept per stage after suppression.
    pub max_object_rois: usize,
    pub max_part_rois: usize,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            enable_object_stage: true,
            enable_part_stage: true,
            zoom: ZoomConfig::default(),
            object_nms: 0.45,
            part_nms: 0.45,
            decode_threshold: 0.5,
            decode_stride: 1,
            max_object_rois: 20,
            max_part_rois: 30,
        }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<()> {
        self.zoom.validate()?;
        for (name, v) in [("object_nms", self.object_nms), ("part_nms", self.part_nms)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(HaznError::invalid(format!("{name} must lie in (0, 1)")));
            }
        }
        if !(self.decode_threshold > 0.0 && self.decode_threshold < 1.0) {
            return Err(HaznError::invalid("decode_threshold must lie in (0, 1)"));
        }
        if self.decode_stride == 0 {
            return Err(HaznError::invalid("decode_stride must be >= 1"));
        }
        Ok(())
    }
}

/// Models for the three stages; later stages are optional when the
/// configuration skips them.
#[derive(Clone, Debug)]
pub struct StageModels {
    pub image: ScorerParams,
    pub object: Option<ScorerParams>,
    pub part: Option<ScorerParams>,
}

impl StageModels {
    pub fn new(image: ScorerParams, object: Option<ScorerParams>, part: Option<ScorerParams>) -> Result<Self> {
        let check = |p: &ScorerParams, want: Stage| {
            if p.stage == want {
                Ok(())
            } else {
                Err(HaznError::invalid(format!(
                    "expected a {} model, got a {} model",
                    want.name(),
                    p.stage.name()
                )))
            }
        };
        check(&image, Stage::Image)?;
        if let Some(o) = &object {
            check(o, Stage::Object)?;
        }
        if let Some(p) = &part {
            check(p, Stage::Part)?;
        }
        let c = image.num_classes();
        if object.iter().chain(&part).any(|m| m.num_classes() != c) {
            return Err(HaznError::invalid("stage models disagree on the number of classes"));
        }
        Ok(StageModels { image, object, part })
    }

    fn object(&self) -> Result<&ScorerParams> {
        self.object
            .as_ref()
            .ok_or_else(|| HaznError::invalid("the object stage needs an object model"))
    }

    fn part(&self) -> Result<&ScorerParams> {
        self.part
            .as_ref()
            .ok_or_else(|| HaznError::invalid("the part stage needs a part model"))
    }
}

/// Scores and raw SEN outputs of one model on one input.
#[derive(Clone, Debug)]
pub struct StageRun {
    pub scores: ScoreMap,
    pub conf_logit: Grid2D,
    pub reg: Grid2D,
}

pub fn run_stage(model: &ScorerParams, img: &Grid2D, prior: Option<&ScoreMap>) -> Result<StageRun> {
    let pw = prior.map_or(0, |p| p.num_classes());
    if pw != model.prior_width() {
        return Err(HaznError::invalid(format!(
            "{} model takes {} prior channels, got {pw}",
            model.stage.name(),
            model.prior_width()
        )));
    }
    let feats = extract_features(img, prior)?;
    let out = model.forward(&feats)?;
    Ok(StageRun {
        scores: softmax_channels(&out.part_logits)?,
        conf_logit: out.conf_logit,
        reg: out.reg,
    })
}

/// Unzoomed ROI scores on the source rectangle, ready for merging.
#[derive(Clone, Debug)]
pub struct Contribution {
    pub x0: usize,
    pub y0: usize,
    pub confidence: f64,
    /// `sw × sh` scores in image scale.
    pub scores: ScoreMap,
}

impl Contribution {
    pub fn from_region(z: &ZoomedRegion, roi_scores: &ScoreMap) -> Result<Self> {
        Ok(Contribution {
            x0: z.x0,
            y0: z.y0,
            confidence: z.confidence,
            scores: unzoom_local(z, roi_scores)?,
        })
    }

    fn canonical_cmp(&self, other: &Contribution) -> Ordering {
        (self.y0, self.x0, self.scores.height(), self.scores.width())
            .cmp(&(other.y0, other.x0, other.scores.height(), other.scores.width()))
            .then(self.confidence.total_cmp(&other.confidence))
            .then_with(|| {
                let (a, b) = (self.scores.grid().values(), other.scores.grid().values());
                a.iter()
                    .zip(b)
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(Ordering::Equal)
            })
    }
}

#[derive(Clone, Debug)]
pub struct MergeDetail {
    pub scores: ScoreMap,
    /// 1 where at least one region covers the pixel.
    pub coverage: Grid2D,
    /// Sum of the normalized merge weights at each pixel; 1 when covered.
    pub weight_sum: Grid2D,
}

/// Confidence-weighted merge with per-pixel fallback to `base`.
/// Contributions are accumulated in a canonical order, so the result does
/// not depend on the order they are given in.
pub fn merge_detailed(base: &ScoreMap, contributions: &[Contribution]) -> Result<MergeDetail> {
    let (w, h, c) = (base.width(), base.height(), base.num_classes());
    for k in contributions {
        if k.scores.num_classes() != c {
            return Err(HaznError::invalid("region scores and base differ in class count"));
        }
        if k.x0 + k.scores.width() > w || k.y0 + k.scores.height() > h {
            return Err(HaznError::invalid("region extends past the canvas"));
        }
        if !(k.confidence >= 0.0 && k.confidence.is_finite()) {
            return Err(HaznError::invalid("region confidence must be finite and >= 0"));
        }
    }
    let mut order: Vec<&Contribution> = contributions.iter().collect();
    order.sort_by(|a, b| a.canonical_cmp(b));

    let mut num = vec![0.0; w * h * c];
    let mut den = vec![0.0; w * h];
    for k in &order {
        let (sw, sh) = (k.scores.width(), k.scores.height());
        let vals = k.scores.grid().values();
        for y in 0..sh {
            for x in 0..sw {
                let j = (k.y0 + y) * w + k.x0 + x;
                den[j] += k.confidence;
                let src = &vals[(y * sw + x) * c..(y * sw + x + 1) * c];
                for (n, &s) in num[j * c..(j + 1) * c].iter_mut().zip(src) {
                    *n += k.confidence * s;
                }
            }
        }
    }
    let mut out = base.grid().values().to_vec();
    let mut coverage = vec![0.0; w * h];
    for j in 0..w * h {
        if den[j] > 0.0 {
            coverage[j] = 1.0;
            for (o, &n) in out[j * c..(j + 1) * c].iter_mut().zip(&num[j * c..(j + 1) * c]) {
                *o = n / den[j];
            }
        }
    }
    let mut weight_sum = vec![0.0; w * h];
    for k in &order {
        let (sw, sh) = (k.scores.width(), k.scores.height());
        for y in 0..sh {
            for x in 0..sw {
                let j = (k.y0 + y) * w + k.x0 + x;
                if den[j] > 0.0 {
                    weight_sum[j] += k.confidence / den[j];
                }
            }
        }
    }
    let all_normalized = base.is_normalized() && contributions.iter().all(|k| k.scores.is_normalized());
    let g = Grid2D::from_raw_unchecked(w, h, c, out);
    Ok(MergeDetail {
        scores: if all_normalized {
            ScoreMap::normalized_unchecked(g)
        } else {
            ScoreMap::unnormalized(g)
        },
        coverage: Grid2D::from_raw_unchecked(w, h, 1, coverage),
        weight_sum: Grid2D::from_raw_unchecked(w, h, 1, weight_sum),
    })
}

pub fn merge_contributions(base: &ScoreMap, contributions: &[Contribution]) -> Result<ScoreMap> {
    Ok(merge_detailed(base, contributions)?.scores)
}

/// Merges zoomed-region scores into `base`.
pub fn merge_scores(base: &ScoreMap, contributions: &[(ZoomedRegion, ScoreMap)]) -> Result<ScoreMap> {
    let local: Vec<Contribution> = contributions
        .iter()
        .map(|(z, s)| Contribution::from_region(z, s))
        .collect::<Result<_>>()?;
    merge_contributions(base, &local)
}

/// Region bookkeeping kept after the zoomed pixels are dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionRecord {
    pub source_box: AbsBox,
    pub x0: usize,
    pub y0: usize,
    pub sw: usize,
    pub sh: usize,
    pub zw: usize,
    pub zh: usize,
    pub ratio: f64,
    pub confidence: f64,
}

impl RegionRecord {
    fn of(z: &ZoomedRegion) -> Self {
        RegionRecord {
            source_box: z.source_box,
            x0: z.x0,
            y0: z.y0,
            sw: z.sw,
            sh: z.sh,
            zw: z.zw,
            zh: z.zh,
            ratio: z.ratio,
            confidence: z.confidence,
        }
    }
}

#[derive(Clone, Debug)]
pub struct StageOutput {
    pub stage: Stage,
    /// Scores in image coordinates after this stage.
    pub scores: ScoreMap,
    /// Proposals for the next level, after suppression. The object stage
    /// reports part proposals even when the part stage is disabled.
    pub proposals: Vec<RoiProposal>,
    /// Regions this stage scored; empty for the image stage.
    pub regions: Vec<RegionRecord>,
}

#[derive(Clone, Debug)]
pub struct HaznResult {
    pub labels: LabelMap,
    pub stages: Vec<StageOutput>,
}

impl HaznResult {
    pub fn final_scores(&self) -> &ScoreMap {
        &self.stages.last().expect("at least the image stage runs").scores
    }

    pub fn stage(&self, s: Stage) -> Option<&StageOutput> {
        self.stages.iter().find(|o| o.stage == s)
    }

    /// One block per executed stage: header, then one line per region
    /// (`x0 y0 sw sh ratio confidence`).
    pub fn trace(&self) -> String {
        let mut s = String::new();
        for o in &self.stages {
            let _ = writeln!(
                s,
                "stage {} regions {} proposals_out {}",
                o.stage.name(),
                o.regions.len(),
                o.proposals.len()
            );
            for r in &o.regions {
                let _ = writeln!(
                    s,
                    "  roi {} {} {} {} {:.6} {:.6}",
                    r.x0, r.y0, r.sw, r.sh, r.ratio, r.confidence
                );
            }
        }
        s
    }
}

fn clamp_proposals(props: Vec<RoiProposal>, w: usize, h: usize, cap: usize) -> Vec<RoiProposal> {
    props
        .into_iter()
        .filter_map(|p| {
            p.bbox.clamp_to(w, h).map(|bbox| RoiProposal {
                bbox,
                confidence: p.confidence,
            })
        })
        .take(cap)
        .collect()
}

struct RoiScored {
    record: RegionRecord,
    contribution: Contribution,
    run: StageRun,
    region: ZoomedRegion,
}

/// Zooms and scores each proposal. `prior` is also zoomed and fed to the
/// model when present.
fn score_regions(
    model: &ScorerParams,
    img: &Grid2D,
    prior: Option<&ScoreMap>,
    ratio_labels: &LabelMap,
    props: &[RoiProposal],
    level: Level,
    zoom: &ZoomConfig,
    keep_sen: bool,
) -> Result<Vec<RoiScored>> {
    props
        .par_iter()
        .map(|p| {
            let (bbox, ratio) = ratio_in_image(&p.bbox, ratio_labels, level, zoom)?;
            let z = zoom_region(
                img,
                prior,
                &RoiProposal {
                    bbox,
                    confidence: p.confidence,
                },
                ratio,
            )?;
            let mut run = run_stage(model, &z.zoomed_img, z.zoomed_prior.as_ref())?;
            let contribution = Contribution::from_region(&z, &run.scores)?;
            if !keep_sen {
                run.conf_logit = Grid2D::zeros(1, 1, 1)?;
                run.reg = Grid2D::zeros(1, 1, 4)?;
            }
            let mut region = z;
            region.zoomed_img = Grid2D::zeros(1, 1, 1)?;
            region.zoomed_prior = None;
            Ok(RoiScored {
                record: RegionRecord::of(&region),
                contribution,
                run,
                region,
            })
        })
        .collect()
}

fn suppress(props: Vec<RoiProposal>, thr: f64, w: usize, h: usize, cap: usize) -> Vec<RoiProposal> {
    clamp_proposals(nms(&props, thr), w, h, cap)
}

/// Runs the cascade. With both later stages disabled the result is the
/// argmax of the image-level scores. With only the part stage enabled,
/// part proposals come from the object model applied to the whole image
/// and the part stage uses the image-level scores as prior.
pub fn run_hazn(img: &Grid2D, models: &StageModels, cfg: &CascadeConfig) -> Result<HaznResult> {
    cfg.validate()?;
    let (w, h) = (img.width(), img.height());
    let s1 = run_stage(&models.image, img, None)?;
    let p1 = s1.scores;
    let mut stages = Vec::with_capacity(3);

    let object_props = if cfg.enable_object_stage {
        let raw = decode_proposals(&s1.conf_logit, &s1.reg, cfg.decode_threshold, cfg.decode_stride)?;
        suppress(raw, cfg.object_nms, w, h, cfg.max_object_rois)
    } else {
        Vec::new()
    };
    stages.push(StageOutput {
        stage: Stage::Image,
        scores: p1,
        proposals: object_props.clone(),
        regions: Vec::new(),
    });

    let mut part_props = Vec::new();
    if cfg.enable_object_stage {
        let model = models.object()?;
        let base = &stages[0].scores;
        let l1 = argmax_labels(base);
        let scored = score_regions(model, img, None, &l1, &object_props, Level::Object, &cfg.zoom, true)?;
        let contributions: Vec<Contribution> = scored.iter().map(|r| r.contribution.clone()).collect();
        let p2 = merge_contributions(base, &contributions)?;
        let mut mapped = Vec::new();
        for r in &scored {
            for p in decode_proposals(&r.run.conf_logit, &r.run.reg, cfg.decode_threshold, cfg.decode_stride)? {
                mapped.push(RoiProposal {
                    bbox: r.region.box_to_source(&p.bbox),
                    confidence: p.confidence,
                });
            }
        }
        part_props = suppress(mapped, cfg.part_nms, w, h, cfg.max_part_rois);
        stages.push(StageOutput {
            stage: Stage::Object,
            scores: p2,
            proposals: part_props.clone(),
            regions: scored.into_iter().map(|r| r.record).collect(),
        });
    } else if cfg.enable_part_stage {
        let s = run_stage(models.object()?, img, None)?;
        let raw = decode_proposals(&s.conf_logit, &s.reg, cfg.decode_threshold, cfg.decode_stride)?;
        part_props = suppress(raw, cfg.part_nms, w, h, cfg.max_part_rois);
    }

    if cfg.enable_part_stage {
        let model = models.part()?;
        let prior = &stages.last().expect("image stage present").scores;
        let lp = argmax_labels(prior);
        let scored = score_regions(model, img, Some(prior), &lp, &part_props, Level::Part, &cfg.zoom, false)?;
        let contributions: Vec<Contribution> = scored.iter().map(|r| r.contribution.clone()).collect();
        let p3 = merge_contributions(prior, &contributions)?;
        stages.push(StageOutput {
            stage: Stage::Part,
            scores: p3,
            proposals: Vec::new(),
            regions: scored.into_iter().map(|r| r.record).collect(),
        });
    }

    let labels = argmax_labels(&stages.last().expect("image stage present").scores);
    Ok(HaznResult { labels, stages })
}

/// Runs `model` on rescaled copies of `img`, resizes the scores back,
/// averages and renormalizes.
pub fn multi_scale_average(img: &Grid2D, model: &ScorerParams, scales: &[f64]) -> Result<ScoreMap> {
    if scales.is_empty() {
        return Err(HaznError::invalid("multi-scale averaging needs at least one scale"));
    }
    let (w, h) = (img.width(), img.height());
    let mut acc: Option<Vec<f64>> = None;
    for &s in scales {
        if !(s > 0.0 && s.is_finite()) {
            return Err(HaznError::invalid(format!("scale must be positive, got {s}")));
        }
        let sw = ((w as f64 * s).round() as usize).max(1);
        let sh = ((h as f64 * s).round() as usize).max(1);
        let scaled = if (sw, sh) == (w, h) {
            img.clone()
        } else {
            bilinear_resize(img, sw, sh)?
        };
        let run = run_stage(model, &scaled, None)?;
        let back = if (sw, sh) == (w, h) {
            run.scores.into_grid()
        } else {
            bilinear_resize(run.scores.grid(), w, h)?
        };
        match &mut acc {
            None => acc = Some(back.into_values()),
            Some(a) => a.iter_mut().zip(back.values()).for_each(|(x, &v)| *x += v),
        }
    }
    let c = model.num_classes();
    let mut values = acc.expect("scales is non-empty");
    if scales.len() > 1 {
        for px in values.chunks_exact_mut(c) {
            let sum: f64 = px.iter().sum();
            px.iter_mut().for_each(|v| *v /= sum);
        }
    }
    Ok(ScoreMap::normalized_unchecked(Grid2D::new(w, h, c, values)?))
}
