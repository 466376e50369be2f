//! End-to-end workflows: datasets on disk, training crops for each stage,
//! staged training, and evaluation of the segmentation methods.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cascade::{multi_scale_average, run_hazn, run_stage, CascadeConfig, HaznResult, StageModels, MSA_SCALES};
use crate::config::RunConfig;
use crate::error::{HaznError, Result};
use crate::grid::{argmax_labels, crop_rect, AbsBox, Grid2D, LabelMap, PixelRect, ScoreMap};
use crate::io;
use crate::metrics::{EvalReport, Evaluator};
use crate::scorer::train::CurvePoint;
use crate::scorer::{extract_features, sgd_train, ScorerParams, Stage, TrainOutcome, TrainSample};
use crate::sen::{
    build_sen_targets, decode_proposals, nms, part_regions, Level, RoiProposal, SenLossConfig, SenTargets,
};
use crate::synth::{generate_scene, sub_seed, PartClass, SceneConfig, SceneSample, NUM_CLASSES};
use crate::zoom::{ratio_in_image, zoom_ratio, zoom_region};

pub const MANIFEST_NAME: &str = "manifest.txt";

/// Index mixed into the run seed to derive the test-set seed.
const TEST_SEED_INDEX: u64 = 1 << 40;

pub fn test_seed(seed: u64) -> u64 {
    sub_seed(seed, TEST_SEED_INDEX)
}

fn stage_seed(seed: u64, stage: Stage) -> u64 {
    sub_seed(seed, (1 << 41) + stage as u64)
}

pub fn class_names() -> Vec<&'static str> {
    PartClass::ALL.iter().map(|c| c.name()).collect()
}

// ---------------------------------------------------------------------------
// Datasets

pub fn image_path(dir: &Path, id: usize) -> PathBuf {
    dir.join(format!("img_{id:05}.png"))
}

pub fn gt_path(dir: &Path, id: usize) -> PathBuf {
    dir.join(format!("gt_{id:05}.png"))
}

pub fn instance_path(dir: &Path, id: usize, k: usize) -> PathBuf {
    dir.join(format!("inst_{id:05}_{k:02}.png"))
}

/// Writes one scene's image, labels and instance masks.
pub fn write_scene(dir: &Path, id: usize, s: &SceneSample) -> Result<()> {
    io::write_image(&image_path(dir, id), &s.image)?;
    io::write_labels(&gt_path(dir, id), &s.gt_parts)?;
    for k in 0..s.num_instances() {
        io::write_mask(&instance_path(dir, id, k), &s.instance_mask(k))?;
    }
    Ok(())
}

/// `id x_min y_min w h` per instance, after a comment header.
pub fn manifest_text(header: &str, scenes: &[(usize, Vec<AbsBox>)]) -> String {
    let mut s = String::new();
    for l in header.lines() {
        let _ = writeln!(s, "# {l}");
    }
    for (id, boxes) in scenes {
        if boxes.is_empty() {
            let _ = writeln!(s, "{id}");
        }
        for b in boxes {
            let _ = writeln!(s, "{id} {} {} {} {}", b.x_min, b.y_min, b.w, b.h);
        }
    }
    s
}

/// Generates `n` scenes into `dir` with a manifest.
pub fn write_dataset(dir: &Path, seed: u64, cfg: &SceneConfig, n: usize, header: &str) -> Result<()> {
    if n == 0 {
        return Err(HaznError::invalid("dataset size must be at least 1"));
    }
    cfg.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| HaznError::io(dir, e))?;
    let boxes: Vec<(usize, Vec<AbsBox>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let s = generate_scene(sub_seed(seed, i as u64), cfg)?;
            write_scene(dir, i, &s)?;
            Ok((i, s.instance_boxes))
        })
        .collect::<Result<_>>()?;
    io::write_atomic(&dir.join(MANIFEST_NAME), manifest_text(header, &boxes).as_bytes())
}

/// A dataset directory written by [`write_dataset`].
#[derive(Clone, Debug)]
pub struct DatasetDir {
    pub dir: PathBuf,
    /// Scene ids with their instance boxes, in manifest order.
    pub scenes: Vec<(usize, Vec<AbsBox>)>,
}

impl DatasetDir {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_NAME);
        let text = std::fs::read_to_string(&path).map_err(|e| HaznError::io(&path, e))?;
        let mut scenes: Vec<(usize, Vec<AbsBox>)> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |d: String| HaznError::format("dataset manifest", format!("line {}: {d}", n + 1));
            let f: Vec<&str> = line.split_whitespace().collect();
            let id: usize = f[0].parse().map_err(|e| bad(format!("{e}")))?;
            if scenes.last().is_none_or(|(last, _)| *last != id) {
                if scenes.iter().any(|(i, _)| *i == id) {
                    return Err(bad(format!("scene {id} is not contiguous")));
                }
                scenes.push((id, Vec::new()));
            }
            match f.len() {
                1 => {}
                5 => {
                    let v: Vec<f64> = f[1..]
                        .iter()
                        .map(|t| t.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| bad(format!("{e}")))?;
                    let b = AbsBox::new(v[0], v[1], v[2], v[3])?;
                    scenes.last_mut().expect("pushed above").1.push(b);
                }
                k => return Err(bad(format!("expected 1 or 5 fields, got {k}"))),
            }
        }
        if scenes.is_empty() {
            return Err(HaznError::format(
                "dataset manifest",
                format!("{} lists no scenes", path.display()),
            ));
        }
        Ok(DatasetDir {
            dir: dir.to_path_buf(),
            scenes,
        })
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn load(&self, index: usize) -> Result<SceneSample> {
        let (id, boxes) = &self.scenes[index];
        let image = io::ensure_rgb(io::read_image(&image_path(&self.dir, *id))?)?;
        let gt_parts = io::read_labels(&gt_path(&self.dir, *id), NUM_CLASSES)?;
        if gt_parts.width() != image.width() || gt_parts.height() != image.height() {
            return Err(HaznError::invalid(format!(
                "scene {id}: labels and image differ in size"
            )));
        }
        let mut ids = vec![0u8; image.width() * image.height()];
        for k in 0..boxes.len() {
            let m = io::read_mask(&instance_path(&self.dir, *id, k))?;
            if m.width() != image.width() || m.height() != image.height() {
                return Err(HaznError::invalid(format!("scene {id}: mask {k} has the wrong size")));
            }
            for (o, &v) in ids.iter_mut().zip(m.values()) {
                if v > 0.5 {
                    *o = k as u8 + 1;
                }
            }
        }
        Ok(SceneSample {
            instance_ids: LabelMap::new(image.width(), image.height(), boxes.len() + 1, ids)?,
            image,
            gt_parts,
            instance_boxes: boxes.clone(),
            instance_figures: Vec::new(),
            figures: Vec::new(),
        })
    }
}

/// Scenes generated on demand or read from disk.
#[derive(Clone, Debug)]
pub enum SceneSource {
    Synthetic { seed: u64, cfg: SceneConfig, n: usize },
    Directory(DatasetDir),
}

impl SceneSource {
    pub fn len(&self) -> usize {
        match self {
            SceneSource::Synthetic { n, .. } => *n,
            SceneSource::Directory(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> Result<SceneSample> {
        match self {
            SceneSource::Synthetic { seed, cfg, .. } => generate_scene(sub_seed(*seed, i as u64), cfg),
            SceneSource::Directory(d) => d.load(i),
        }
    }

    /// Scene id used in output file names.
    pub fn id(&self, i: usize) -> usize {
        match self {
            SceneSource::Synthetic { .. } => i,
            SceneSource::Directory(d) => d.scenes[i].0,
        }
    }
}

// ---------------------------------------------------------------------------
// Training crops

/// A region ready for crop sampling: image, optional prior, labels and SEN
/// targets all on the same grid.
struct View {
    feats: Grid2D,
    labels: LabelMap,
    targets: SenTargets,
}

/// Cuts `n` crops: one third centered near seed pixels, one third on
/// foreground, the rest uniform. Seed and foreground picks fall back to
/// uniform when the view has none.
fn sample_crops(view: &View, n: usize, size: usize, rng: &mut ChaCha8Rng) -> Result<Vec<TrainSample>> {
    let (w, h) = (view.labels.width(), view.labels.height());
    let (cw, ch) = (size.min(w), size.min(h));
    let seeds: Vec<usize> = (0..w * h).filter(|&i| view.targets.seeds.values()[i] > 0.5).collect();
    let fg: Vec<usize> = (0..w * h).filter(|&i| view.labels.labels()[i] != 0).collect();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let pool = match k % 3 {
            0 if !seeds.is_empty() => Some(&seeds),
            0 | 1 if !fg.is_empty() => Some(&fg),
            _ => None,
        };
        let (cx, cy) = match pool {
            Some(p) => {
                let i = p[rng.random_range(0..p.len())];
                let j = (size / 4) as i64;
                (
                    (i % w) as i64 + rng.random_range(-j..=j),
                    (i / w) as i64 + rng.random_range(-j..=j),
                )
            }
            None => (rng.random_range(0..w) as i64, rng.random_range(0..h) as i64),
        };
        let x0 = (cx - cw as i64 / 2).clamp(0, (w - cw) as i64);
        let y0 = (cy - ch as i64 / 2).clamp(0, (h - ch) as i64);
        let rect = PixelRect {
            x0,
            y0,
            x1: x0 + cw as i64,
            y1: y0 + ch as i64,
        };
        let b = rect.to_box();
        out.push(TrainSample::new(
            &crop_rect(&view.feats, rect)?,
            view.labels.crop(&b)?,
            view.targets.crop(&b)?,
        )?);
    }
    Ok(out)
}

fn jitter_box(b: &AbsBox, j: f64, rng: &mut ChaCha8Rng) -> AbsBox {
    if j == 0.0 {
        return *b;
    }
    let (cx, cy) = b.center();
    let dx = rng.random_range(-j..=j) * b.w;
    let dy = rng.random_range(-j..=j) * b.h;
    let s = rng.random_range(-j..=j).exp();
    AbsBox {
        x_min: cx + dx - 0.5 * b.w * s,
        y_min: cy + dy - 0.5 * b.h * s,
        w: b.w * s,
        h: b.h * s,
    }
}

/// Zooms `prop` out of `scene` and builds the matching labels and targets.
fn zoomed_view(
    scene: &SceneSample,
    prior: Option<&ScoreMap>,
    prop: &RoiProposal,
    ratio: f64,
    level: Option<Level>,
    sen: &SenLossConfig,
) -> Result<View> {
    let z = zoom_region(&scene.image, prior, prop, ratio)?;
    let rect_box = z.rect_box();
    let labels = scene.gt_parts.crop(&rect_box)?.resize_nearest(z.zw, z.zh)?;
    let targets = match level {
        Some(l) => build_sen_targets(&[], l, &labels, sen)?,
        None => SenTargets::empty(z.zw, z.zh)?,
    };
    Ok(View {
        feats: extract_features(&z.zoomed_img, z.zoomed_prior.as_ref())?,
        labels,
        targets,
    })
}

fn for_scenes<F>(source: &SceneSource, f: F) -> Result<Vec<TrainSample>>
where
    F: Fn(usize, &SceneSample) -> Result<Vec<TrainSample>> + Sync,
{
    let per: Vec<Vec<TrainSample>> = (0..source.len())
        .into_par_iter()
        .map(|i| f(i, &source.get(i)?))
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

/// Image-stage crops with object-level SEN targets.
pub fn image_stage_samples(source: &SceneSource, cfg: &RunConfig) -> Result<Vec<TrainSample>> {
    let seed = stage_seed(cfg.seed, Stage::Image);
    for_scenes(source, |i, s| {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, i as u64));
        let view = View {
            feats: extract_features(&s.image, None)?,
            labels: s.gt_parts.clone(),
            targets: build_sen_targets(&s.instance_masks(), Level::Object, &s.gt_parts, &cfg.sen)?,
        };
        sample_crops(&view, cfg.data.image_crops, cfg.data.crop_size, &mut rng)
    })
}

fn object_proposals(
    img: &Grid2D,
    image_model: &ScorerParams,
    cc: &CascadeConfig,
) -> Result<(Vec<RoiProposal>, LabelMap)> {
    let run = run_stage(image_model, img, None)?;
    let raw = decode_proposals(&run.conf_logit, &run.reg, cc.decode_threshold, cc.decode_stride)?;
    let props = nms(&raw, cc.object_nms)
        .into_iter()
        .filter_map(|p| {
            p.bbox
                .clamp_to(img.width(), img.height())
                .map(|bbox| RoiProposal { bbox, ..p })
        })
        .take(cc.max_object_rois)
        .collect();
    Ok((props, argmax_labels(&run.scores)))
}

/// Up to `max` regions: with both sources, half from each, the shortfall of
/// one filled from the other.
fn pick_regions<T>(mut gt: Vec<T>, mut pred: Vec<T>, max: usize) -> Vec<T> {
    let half = max.div_ceil(2);
    let from_gt = if pred.is_empty() {
        max
    } else {
        half.max(max.saturating_sub(pred.len()))
    };
    gt.truncate(from_gt);
    pred.truncate(max - gt.len());
    gt.extend(pred);
    gt
}

/// Object-stage crops: zoomed object regions with part-level SEN targets.
pub fn object_stage_samples(
    source: &SceneSource,
    cfg: &RunConfig,
    image_model: Option<&ScorerParams>,
) -> Result<Vec<TrainSample>> {
    let regions = cfg.data.regions;
    if regions.uses_predicted() && image_model.is_none() {
        return Err(HaznError::invalid("predicted object regions need an image-stage model"));
    }
    let seed = stage_seed(cfg.seed, Stage::Object);
    let zc = &cfg.cascade.zoom;
    for_scenes(source, |i, s| {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, i as u64));
        let (w, h) = (s.image.width(), s.image.height());
        let mut gt = Vec::new();
        if regions.uses_gt() {
            for b in &s.instance_boxes {
                let Some(jb) = jitter_box(b, cfg.data.box_jitter, &mut rng).clamp_to(w, h) else {
                    continue;
                };
                let ratio = zoom_ratio(&jb, &s.gt_parts.crop(&jb)?, Level::Object, zc)?;
                gt.push((
                    RoiProposal {
                        bbox: jb,
                        confidence: 1.0,
                    },
                    ratio,
                ));
            }
            gt.shuffle(&mut rng);
        }
        let mut pred = Vec::new();
        if regions.uses_predicted() {
            let model = image_model.expect("checked above");
            let (props, labels) = object_proposals(&s.image, model, &cfg.cascade)?;
            for p in props {
                let (bbox, ratio) = ratio_in_image(&p.bbox, &labels, Level::Object, zc)?;
                pred.push((RoiProposal { bbox, ..p }, ratio));
            }
        }
        let mut out = Vec::new();
        for (p, ratio) in pick_regions(gt, pred, cfg.data.max_object_regions) {
            let view = zoomed_view(s, None, &p, ratio, Some(Level::Part), &cfg.sen)?;
            out.extend(sample_crops(
                &view,
                cfg.data.region_crops,
                cfg.data.crop_size,
                &mut rng,
            )?);
        }
        Ok(out)
    })
}

/// Probability given to the ground-truth class in [`gt_prior`].
pub const GT_PRIOR_CONFIDENCE: f64 = 0.7;

/// Stand-in for object-stage scores built from ground truth: the true class
/// gets [`GT_PRIOR_CONFIDENCE`] and the rest is spread evenly.
pub fn gt_prior(gt: &LabelMap) -> Result<ScoreMap> {
    let c = gt.num_classes();
    let rest = (1.0 - GT_PRIOR_CONFIDENCE) / (c - 1) as f64;
    let mut v = Vec::with_capacity(gt.labels().len() * c);
    for &l in gt.labels() {
        v.extend((0..c).map(|k| if k == l as usize { GT_PRIOR_CONFIDENCE } else { rest }));
    }
    ScoreMap::normalized(Grid2D::new(gt.width(), gt.height(), c, v)?)
}

/// Part-stage crops: zoomed part regions with object-level scores as prior.
/// Without the earlier models the prior comes from [`gt_prior`] and only
/// ground-truth regions are available.
pub fn part_stage_samples(
    source: &SceneSource,
    cfg: &RunConfig,
    earlier: Option<(&ScorerParams, &ScorerParams)>,
) -> Result<Vec<TrainSample>> {
    if cfg.data.regions.uses_predicted() && earlier.is_none() {
        return Err(HaznError::invalid(
            "predicted part regions need image- and object-stage models",
        ));
    }
    let models = match earlier {
        Some((i, o)) => Some(StageModels::new(i.clone(), Some(o.clone()), None)?),
        None => None,
    };
    let cc = CascadeConfig {
        enable_object_stage: true,
        enable_part_stage: false,
        ..cfg.cascade.clone()
    };
    let regions = cfg.data.regions;
    let seed = stage_seed(cfg.seed, Stage::Part);
    let zc = &cfg.cascade.zoom;
    for_scenes(source, |i, s| {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, i as u64));
        let (w, h) = (s.image.width(), s.image.height());
        let (prior, proposals) = match &models {
            Some(m) => {
                let mut r = run_hazn(&s.image, m, &cc)?;
                let obj = r.stages.pop().expect("object stage enabled");
                (obj.scores, obj.proposals)
            }
            None => (gt_prior(&s.gt_parts)?, Vec::new()),
        };
        let prior = &prior;
        let mut gt: Vec<AbsBox> = Vec::new();
        if regions.uses_gt() {
            gt = part_regions(&s.gt_parts)
                .iter()
                .filter_map(|reg| jitter_box(&reg.bbox, cfg.data.box_jitter, &mut rng).clamp_to(w, h))
                .collect();
            gt.shuffle(&mut rng);
        }
        let pred: Vec<AbsBox> = if regions.uses_predicted() {
            proposals.iter().map(|p| p.bbox).collect()
        } else {
            Vec::new()
        };
        let labels = argmax_labels(prior);
        let mut out = Vec::new();
        for b in pick_regions(gt, pred, cfg.data.max_part_regions) {
            let (bbox, ratio) = ratio_in_image(&b, &labels, Level::Part, zc)?;
            let p = RoiProposal { bbox, confidence: 1.0 };
            let view = zoomed_view(s, Some(prior), &p, ratio, None, &cfg.sen)?;
            out.extend(sample_crops(
                &view,
                cfg.data.region_crops,
                cfg.data.crop_size,
                &mut rng,
            )?);
        }
        Ok(out)
    })
}

/// Trains one stage from zero-initialized parameters.
pub fn train_stage(stage: Stage, samples: &[TrainSample], cfg: &RunConfig) -> Result<TrainOutcome> {
    let init = ScorerParams::zeros(stage, NUM_CLASSES)?;
    sgd_train(
        init,
        samples,
        cfg.train_for(stage),
        &cfg.sen,
        stage_seed(cfg.seed, stage) ^ 0x5eed,
    )
}

/// Iterations averaged at each end of the curve in [`training_summary`].
const SUMMARY_WINDOW: usize = 50;

/// Summary of a training run for logs.
pub fn training_summary(stage: Stage, samples: &[TrainSample], out: &TrainOutcome) -> String {
    let fg = samples.iter().filter(|s| s.has_foreground()).count();
    let seeds: usize = samples.iter().map(|s| s.num_seeds()).sum();
    let k = SUMMARY_WINDOW.min(out.curve.len());
    let head = &out.curve[..k];
    let tail = &out.curve[out.curve.len() - k..];
    let mean = |c: &[CurvePoint], f: fn(&CurvePoint) -> f64| c.iter().map(f).sum::<f64>() / c.len().max(1) as f64;
    format!(
        "stage {}: {} crops ({} with foreground, {} seed pixels); loss {:.4} -> {:.4} (part {:.4} -> {:.4}, l_b {:.5}, l_c {:.4}, beta {:.4})",
        stage.name(),
        samples.len(),
        fg,
        seeds,
        mean(head, |p| p.loss),
        mean(tail, |p| p.loss),
        mean(head, |p| p.part),
        mean(tail, |p| p.part),
        mean(tail, |p| p.l_b),
        mean(tail, |p| p.l_c),
        mean(tail, |p| p.beta),
    )
}

/// Per-pass means of the loss terms, one line per pass over the data.
pub fn epoch_summary(out: &TrainOutcome, num_samples: usize, batch: usize, lambda: f64) -> Vec<String> {
    let per_epoch = num_samples.div_ceil(batch).max(1);
    out.curve
        .chunks(per_epoch)
        .enumerate()
        .map(|(e, c)| {
            let n = c.len() as f64;
            let mean = |f: fn(&CurvePoint) -> f64| c.iter().map(f).sum::<f64>() / n;
            format!(
                "epoch {e}: iters {}-{} loss {:.4} part {:.4} l_b {:.5} l_c {:.4} lambda {lambda} beta {:.4} lr {:e}",
                c[0].iteration,
                c[c.len() - 1].iteration,
                mean(|p| p.loss),
                mean(|p| p.part),
                mean(|p| p.l_b),
                mean(|p| p.l_c),
                mean(|p| p.beta),
                c[c.len() - 1].lr,
            )
        })
        .collect()
}

/// Trains one stage and reports its per-pass statistics to `log`.
pub fn train_stage_logged(
    stage: Stage,
    samples: &[TrainSample],
    cfg: &RunConfig,
    log: &mut impl FnMut(&str),
) -> Result<TrainOutcome> {
    let out = train_stage(stage, samples, cfg)?;
    for line in epoch_summary(&out, samples.len(), cfg.train_for(stage).batch, cfg.sen.lambda) {
        log(&format!("{} {line}", stage.name()));
    }
    log(&training_summary(stage, samples, &out));
    Ok(out)
}

/// Trained models with their loss curves.
pub struct TrainedStages {
    pub models: StageModels,
    pub outcomes: Vec<(Stage, TrainOutcome)>,
}

/// Trains all three stages in order. The part stage takes its prior from
/// the two trained earlier stages.
pub fn train_all(source: &SceneSource, cfg: &RunConfig, mut log: impl FnMut(&str)) -> Result<TrainedStages> {
    cfg.validate()?;
    let mut outcomes = Vec::new();

    let samples = image_stage_samples(source, cfg)?;
    let image = train_stage_logged(Stage::Image, &samples, cfg, &mut log)?;
    drop(samples);

    let samples = object_stage_samples(source, cfg, Some(&image.params))?;
    let object = train_stage_logged(Stage::Object, &samples, cfg, &mut log)?;
    drop(samples);

    let samples = part_stage_samples(source, cfg, Some((&image.params, &object.params)))?;
    let part = train_stage_logged(Stage::Part, &samples, cfg, &mut log)?;
    drop(samples);

    let models = StageModels::new(
        image.params.clone(),
        Some(object.params.clone()),
        Some(part.params.clone()),
    )?;
    outcomes.push((Stage::Image, image));
    outcomes.push((Stage::Object, object));
    outcomes.push((Stage::Part, part));
    Ok(TrainedStages { models, outcomes })
}

// ---------------------------------------------------------------------------
// Methods and comparison

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    /// Image-level scorer alone.
    Baseline,
    /// Image-level scorer averaged over three input scales.
    MultiScale,
    /// Part stage on image-level proposals and scores, no object zoom.
    NoObjectScale,
    /// Object zoom only.
    NoPartScale,
    /// Object zoom followed by part zoom.
    Full,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Baseline,
        Method::MultiScale,
        Method::NoObjectScale,
        Method::NoPartScale,
        Method::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::MultiScale => "multi_scale_avg",
            Method::NoObjectScale => "hazn_no_object_scale",
            Method::NoPartScale => "hazn_no_part_scale",
            Method::Full => "hazn",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| HaznError::invalid(format!("unknown method {s:?}")))
    }

    /// Stage switches that realize this method, if it is a cascade variant.
    pub fn cascade_flags(self) -> Option<(bool, bool)> {
        match self {
            Method::Baseline => Some((false, false)),
            Method::MultiScale => None,
            Method::NoObjectScale => Some((false, true)),
            Method::NoPartScale => Some((true, false)),
            Method::Full => Some((true, true)),
        }
    }
}

/// Labels of every requested method for one image. Baseline, no-part-scale
/// and full share a single cascade run, since each is a prefix of it.
pub fn predict_methods(
    img: &Grid2D,
    models: &StageModels,
    cc: &CascadeConfig,
    methods: &[Method],
) -> Result<Vec<(Method, LabelMap, Option<HaznResult>)>> {
    let wants = |m: Method| methods.contains(&m);
    let mut out = Vec::new();
    let full = if wants(Method::Full) || wants(Method::NoPartScale) || wants(Method::Baseline) {
        let cfg = CascadeConfig {
            enable_object_stage: wants(Method::Full) || wants(Method::NoPartScale),
            enable_part_stage: wants(Method::Full),
            ..cc.clone()
        };
        Some(run_hazn(img, models, &cfg)?)
    } else {
        None
    };
    for &m in methods {
        let (labels, trace) = match m {
            Method::Baseline => (argmax_labels(&full.as_ref().expect("run above").stages[0].scores), None),
            Method::NoPartScale => {
                let r = full.as_ref().expect("run above");
                let s = r.stage(Stage::Object).expect("object stage enabled");
                (argmax_labels(&s.scores), None)
            }
            Method::Full => {
                let r = full.as_ref().expect("run above");
                (r.labels.clone(), Some(r.clone()))
            }
            Method::NoObjectScale => {
                let cfg = CascadeConfig {
                    enable_object_stage: false,
                    enable_part_stage: true,
                    ..cc.clone()
                };
                let r = run_hazn(img, models, &cfg)?;
                (r.labels.clone(), Some(r))
            }
            Method::MultiScale => (
                argmax_labels(&multi_scale_average(img, &models.image, &MSA_SCALES)?),
                None,
            ),
        };
        out.push((m, labels, trace));
    }
    Ok(out)
}

/// One method's output on one image; `trace` is set for cascade runs that
/// go past the image stage.
pub struct Prediction {
    pub method: Method,
    pub labels: LabelMap,
    pub trace: Option<HaznResult>,
}

/// Evaluates `methods` over `source`. `on_image` receives each scene's id
/// and predictions, in scene order.
pub fn compare(
    source: &SceneSource,
    models: &StageModels,
    cc: &CascadeConfig,
    methods: &[Method],
    mut on_image: impl FnMut(usize, &[Prediction]) -> Result<()>,
) -> Result<Vec<EvalReport>> {
    let mut evals: Vec<Evaluator> = methods.iter().map(|_| Evaluator::new(NUM_CLASSES)).collect();
    for i in 0..source.len() {
        let s = source.get(i)?;
        let preds: Vec<Prediction> = predict_methods(&s.image, models, cc, methods)?
            .into_iter()
            .map(|(method, labels, trace)| Prediction { method, labels, trace })
            .collect();
        let masks = s.instance_masks();
        for (p, e) in preds.iter().zip(&mut evals) {
            e.add_image(&p.labels, &s.gt_parts, &masks, &s.instance_boxes)?;
        }
        on_image(source.id(i), &preds)?;
    }
    Ok(methods.iter().zip(&evals).map(|(m, e)| e.report(m.name())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RegionSource;

    fn tiny_scene_cfg() -> SceneConfig {
        SceneConfig {
            width: 96,
            height: 72,
            min_scale: 30.0,
            max_scale: 90.0,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_scene_cfg();
        write_dataset(dir.path(), 5, &cfg, 3, "seed 5").unwrap();
        let d = DatasetDir::open(dir.path()).unwrap();
        assert_eq!(d.len(), 3);
        for i in 0..3 {
            let want = generate_scene(sub_seed(5, i as u64), &cfg).unwrap();
            let got = d.load(i).unwrap();
            assert_eq!(got.image, want.image);
            assert_eq!(got.gt_parts, want.gt_parts);
            assert_eq!(got.instance_boxes, want.instance_boxes);
            assert_eq!(got.instance_masks(), want.instance_masks());
        }
    }

    #[test]
    fn manifest_lists_every_scene() {
        let b = AbsBox::new(1.0, 2.0, 3.0, 4.0).unwrap();
        let t = manifest_text("a\nb", &[(0, vec![b, b]), (1, vec![])]);
        assert_eq!(t, "# a\n# b\n0 1 2 3 4\n0 1 2 3 4\n1\n");
    }

    #[test]
    fn crops_are_balanced_toward_figures() {
        let cfg = RunConfig {
            scene: tiny_scene_cfg(),
            ..RunConfig::default()
        };
        let source = SceneSource::Synthetic {
            seed: 3,
            cfg: cfg.scene.clone(),
            n: 6,
        };
        let samples = image_stage_samples(&source, &cfg).unwrap();
        assert_eq!(samples.len(), 6 * cfg.data.image_crops);
        let fg = samples.iter().filter(|s| s.has_foreground()).count();
        assert!(2 * fg >= samples.len(), "{fg} of {}", samples.len());
    }

    #[test]
    fn ground_truth_regions_need_no_model() {
        let mut cfg = RunConfig {
            scene: tiny_scene_cfg(),
            ..RunConfig::default()
        };
        cfg.data.regions = RegionSource::GroundTruth;
        let source = SceneSource::Synthetic {
            seed: 4,
            cfg: cfg.scene.clone(),
            n: 2,
        };
        let s = object_stage_samples(&source, &cfg, None).unwrap();
        assert!(!s.is_empty());
        cfg.data.regions = RegionSource::Both;
        assert!(object_stage_samples(&source, &cfg, None).is_err());
    }

    #[test]
    fn region_picks_share_the_budget() {
        assert_eq!(pick_regions(vec![1, 2, 3, 4], vec![9, 8, 7], 4), vec![1, 2, 9, 8]);
        assert_eq!(pick_regions(vec![1, 2, 3, 4], vec![9], 4), vec![1, 2, 3, 9]);
        assert_eq!(pick_regions(vec![1], vec![9, 8, 7], 4), vec![1, 9, 8, 7]);
        assert_eq!(pick_regions(vec![1, 2], Vec::new(), 1), vec![1]);
        assert_eq!(pick_regions(Vec::<i32>::new(), vec![9, 8], 1), vec![9]);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
        }
    }
}
