//! Plain-text `key = value` run configuration.
//!
//! Lines starting with `#` are comments. Unknown or repeated keys are
//! errors. `train.<key>` sets a value for every stage and
//! `train.<stage>.<key>` overrides it for one stage, whatever their order
//! in the file.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::cascade::CascadeConfig;
use crate::error::{HaznError, Result};
use crate::scorer::{Stage, TrainConfig};
use crate::sen::SenLossConfig;
use crate::synth::SceneConfig;

/// Where training regions for the object and part stages come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegionSource {
    /// Jittered ground-truth boxes.
    GroundTruth,
    /// Proposals of the earlier trained stages.
    Predicted,
    /// Both of the above.
    Both,
}

impl RegionSource {
    pub fn name(self) -> &'static str {
        match self {
            RegionSource::GroundTruth => "gt",
            RegionSource::Predicted => "predicted",
            RegionSource::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gt" => Ok(RegionSource::GroundTruth),
            "predicted" => Ok(RegionSource::Predicted),
            "both" => Ok(RegionSource::Both),
            _ => Err(HaznError::invalid(format!(
                "regions must be gt, predicted or both, not {s:?}"
            ))),
        }
    }

    pub fn uses_gt(self) -> bool {
        self != RegionSource::Predicted
    }

    pub fn uses_predicted(self) -> bool {
        self != RegionSource::GroundTruth
    }
}

/// How training crops are cut from scenes and regions.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    /// Side of the square training crops.
    pub crop_size: usize,
    /// Crops per training scene for the image stage.
    pub image_crops: usize,
    /// Crops per zoomed region for the object and part stages.
    pub region_crops: usize,
    /// Relative jitter applied to ground-truth boxes before zooming.
    pub box_jitter: f64,
    /// Most object regions used per training scene.
    pub max_object_regions: usize,
    /// Most part regions used per training scene.
    pub max_part_regions: usize,
    pub regions: RegionSource,
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            crop_size: 32,
            image_crops: 8,
            region_crops: 4,
            box_jitter: 0.1,
            max_object_regions: 6,
            max_part_regions: 8,
            regions: RegionSource::Both,
            n_train: 300,
            n_test: 100,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.crop_size < 4 {
            return Err(HaznError::invalid("crop_size must be >= 4"));
        }
        if self.image_crops == 0 || self.region_crops == 0 || self.max_object_regions == 0 || self.max_part_regions == 0
        {
            return Err(HaznError::invalid("crop and region counts must be >= 1"));
        }
        if !(0.0..0.5).contains(&self.box_jitter) {
            return Err(HaznError::invalid("box_jitter must lie in [0, 0.5)"));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(HaznError::invalid("n_train and n_test must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub scene: SceneConfig,
    /// Indexed by stage: image, object, part.
    pub train: [TrainConfig; 3],
    pub sen: SenLossConfig,
    pub cascade: CascadeConfig,
    pub data: DataConfig,
}

/// Default learning rate of the part stage.
pub const PART_LR: f64 = 1e-2;

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            scene: SceneConfig::default(),
            train: std::array::from_fn(|i| TrainConfig {
                // The part loss has no summed confidence term, so its
                // gradients are far smaller than those of the other stages.
                lr: if i == Stage::Part as usize {
                    PART_LR
                } else {
                    TrainConfig::default().lr
                },
                ..TrainConfig::default()
            }),
            sen: SenLossConfig::default(),
            cascade: CascadeConfig::default(),
            data: DataConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| HaznError::invalid(format!("{key}: cannot parse {v:?}: {e}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<u8>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse::<u8>(key, s))
        .collect()
}

const TRAIN_KEYS: [&str; 8] = [
    "lr",
    "classifier_lr_multiplier",
    "momentum",
    "weight_decay",
    "batch",
    "iterations",
    "lr_decay_every",
    "lr_decay_factor",
];

fn set_train(t: &mut TrainConfig, key: &str, full: &str, v: &str) -> Result<()> {
    match key {
        "lr" => t.lr = parse(full, v)?,
        "classifier_lr_multiplier" => t.classifier_lr_multiplier = parse(full, v)?,
        "momentum" => t.momentum = parse(full, v)?,
        "weight_decay" => t.weight_decay = parse(full, v)?,
        "batch" => t.batch = parse(full, v)?,
        "iterations" => t.iterations = parse(full, v)?,
        "lr_decay_every" => t.lr_decay_every = parse(full, v)?,
        "lr_decay_factor" => t.lr_decay_factor = parse(full, v)?,
        _ => return Err(HaznError::invalid(format!("unknown config key {full:?}"))),
    }
    Ok(())
}

fn train_value(t: &TrainConfig, key: &str) -> String {
    match key {
        "lr" => t.lr.to_string(),
        "classifier_lr_multiplier" => t.classifier_lr_multiplier.to_string(),
        "momentum" => t.momentum.to_string(),
        "weight_decay" => t.weight_decay.to_string(),
        "batch" => t.batch.to_string(),
        "iterations" => t.iterations.to_string(),
        "lr_decay_every" => t.lr_decay_every.to_string(),
        "lr_decay_factor" => t.lr_decay_factor.to_string(),
        _ => unreachable!("train keys are fixed"),
    }
}

impl RunConfig {
    pub fn train_for(&self, stage: Stage) -> &TrainConfig {
        &self.train[stage as usize]
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        for t in &self.train {
            t.validate()?;
        }
        self.sen.validate()?;
        self.cascade.validate()?;
        self.data.validate()
    }

    /// Sets one non-train key.
    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let s = &mut self.scene;
        let c = &mut self.cascade;
        let d = &mut self.data;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "scene.width" => s.width = parse(key, v)?,
            "scene.height" => s.height = parse(key, v)?,
            "scene.min_instances" => s.min_instances = parse(key, v)?,
            "scene.max_instances" => s.max_instances = parse(key, v)?,
            "scene.min_scale" => s.min_scale = parse(key, v)?,
            "scene.max_scale" => s.max_scale = parse(key, v)?,
            "scene.truncation_prob" => s.truncation_prob = parse(key, v)?,
            "scene.clutter" => s.clutter = parse(key, v)?,
            "scene.noise_sigma" => s.noise_sigma = parse(key, v)?,
            "scene.supersample" => s.supersample = parse(key, v)?,
            "sen.lambda" => self.sen.lambda = parse(key, v)?,
            "sen.seed_window" => self.sen.seed_window = parse(key, v)?,
            "zoom.s_t_full" => c.zoom.s_t_full = parse(key, v)?,
            "zoom.s_t_truncated" => c.zoom.s_t_truncated = parse(key, v)?,
            "zoom.ratio_min" => c.zoom.ratio_min = parse(key, v)?,
            "zoom.ratio_max" => c.zoom.ratio_max = parse(key, v)?,
            "zoom.leg_pixel_fraction" => c.zoom.leg_pixel_fraction = parse(key, v)?,
            "zoom.leg_classes" => c.zoom.leg_classes = parse_list(key, v)?,
            "cascade.enable_object_stage" => c.enable_object_stage = parse(key, v)?,
            "cascade.enable_part_stage" => c.enable_part_stage = parse(key, v)?,
            "cascade.object_nms" => c.object_nms = parse(key, v)?,
            "cascade.part_nms" => c.part_nms = parse(key, v)?,
            "cascade.decode_threshold" => c.decode_threshold = parse(key, v)?,
            "cascade.decode_stride" => c.decode_stride = parse(key, v)?,
            "cascade.max_object_rois" => c.max_object_rois = parse(key, v)?,
            "cascade.max_part_rois" => c.max_part_rois = parse(key, v)?,
            "data.crop_size" => d.crop_size = parse(key, v)?,
            "data.image_crops" => d.image_crops = parse(key, v)?,
            "data.region_crops" => d.region_crops = parse(key, v)?,
            "data.box_jitter" => d.box_jitter = parse(key, v)?,
            "data.max_object_regions" => d.max_object_regions = parse(key, v)?,
            "data.max_part_regions" => d.max_part_regions = parse(key, v)?,
            "data.regions" => d.regions = RegionSource::parse(v)?,
            "data.n_train" => d.n_train = parse(key, v)?,
            "data.n_test" => d.n_test = parse(key, v)?,
            _ => return Err(HaznError::invalid(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let s = &self.scene;
        let c = &self.cascade;
        let d = &self.data;
        let mut e: Vec<(String, String)> = vec![
            ("seed".into(), self.seed.to_string()),
            ("scene.width".into(), s.width.to_string()),
            ("scene.height".into(), s.height.to_string()),
            ("scene.min_instances".into(), s.min_instances.to_string()),
            ("scene.max_instances".into(), s.max_instances.to_string()),
            ("scene.min_scale".into(), s.min_scale.to_string()),
            ("scene.max_scale".into(), s.max_scale.to_string()),
            ("scene.truncation_prob".into(), s.truncation_prob.to_string()),
            ("scene.clutter".into(), s.clutter.to_string()),
            ("scene.noise_sigma".into(), s.noise_sigma.to_string()),
            ("scene.supersample".into(), s.supersample.to_string()),
        ];
        for stage in Stage::ALL {
            for k in TRAIN_KEYS {
                e.push((
                    format!("train.{}.{k}", stage.name()),
                    train_value(self.train_for(stage), k),
                ));
            }
        }
        let legs = c
            .zoom
            .leg_classes
            .iter()
            .map(|l| l.to_string())
            .collect::<Vec<_>>()
            .join(",");
        e.extend([
            ("sen.lambda".into(), self.sen.lambda.to_string()),
            ("sen.seed_window".into(), self.sen.seed_window.to_string()),
            ("zoom.s_t_full".into(), c.zoom.s_t_full.to_string()),
            ("zoom.s_t_truncated".into(), c.zoom.s_t_truncated.to_string()),
            ("zoom.ratio_min".into(), c.zoom.ratio_min.to_string()),
            ("zoom.ratio_max".into(), c.zoom.ratio_max.to_string()),
            ("zoom.leg_pixel_fraction".into(), c.zoom.leg_pixel_fraction.to_string()),
            ("zoom.leg_classes".into(), legs),
            ("cascade.enable_object_stage".into(), c.enable_object_stage.to_string()),
            ("cascade.enable_part_stage".into(), c.enable_part_stage.to_string()),
            ("cascade.object_nms".into(), c.object_nms.to_string()),
            ("cascade.part_nms".into(), c.part_nms.to_string()),
            ("cascade.decode_threshold".into(), c.decode_threshold.to_string()),
            ("cascade.decode_stride".into(), c.decode_stride.to_string()),
            ("cascade.max_object_rois".into(), c.max_object_rois.to_string()),
            ("cascade.max_part_rois".into(), c.max_part_rois.to_string()),
            ("data.crop_size".into(), d.crop_size.to_string()),
            ("data.image_crops".into(), d.image_crops.to_string()),
            ("data.region_crops".into(), d.region_crops.to_string()),
            ("data.box_jitter".into(), d.box_jitter.to_string()),
            ("data.max_object_regions".into(), d.max_object_regions.to_string()),
            ("data.max_part_regions".into(), d.max_part_regions.to_string()),
            ("data.regions".into(), d.regions.name().into()),
            ("data.n_train".into(), d.n_train.to_string()),
            ("data.n_test".into(), d.n_test.to_string()),
        ]);
        e
    }

    /// Fully resolved configuration; parses back to an equal value.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Applies `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        let mut general = Vec::new();
        let mut specific = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HaznError::invalid(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(HaznError::invalid(format!("line {}: key {k:?} given twice", n + 1)));
            }
            match k.strip_prefix("train.") {
                Some(rest) => match rest.split_once('.') {
                    Some((stage, key)) => {
                        specific.push((Stage::parse(stage)?, key.to_string(), k.to_string(), v.to_string()))
                    }
                    None => general.push((rest.to_string(), k.to_string(), v.to_string())),
                },
                None => self.set(k, v)?,
            }
        }
        for (key, full, v) in general {
            for t in &mut self.train {
                set_train(t, &key, &full, &v)?;
            }
        }
        for (stage, key, full, v) in specific {
            set_train(&mut self.train[stage as usize], &key, &full, &v)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        assert_eq!(c.train_for(Stage::Part).lr, PART_LR);
        assert_eq!(c.train_for(Stage::Image).lr, TrainConfig::default().lr);
    }

    #[test]
    fn stage_keys_override_general_keys() {
        let c = RunConfig::parse("train.object.lr = 0.5\ntrain.lr = 0.01\n# note\n\nseed = 7\n").unwrap();
        assert_eq!(c.train_for(Stage::Image).lr, 0.01);
        assert_eq!(c.train_for(Stage::Object).lr, 0.5);
        assert_eq!(c.train_for(Stage::Part).lr, 0.01);
        assert_eq!(c.seed, 7);
    }

    #[test]
    fn bad_input_is_rejected() {
        assert!(RunConfig::parse("nonsense = 1").is_err());
        assert!(RunConfig::parse("train.color = 1").is_err());
        assert!(RunConfig::parse("train.head.lr = 1").is_err());
        assert!(RunConfig::parse("seed = 1\nseed = 2").is_err());
        assert!(RunConfig::parse("seed").is_err());
        assert!(RunConfig::parse("seed = x").is_err());
        assert!(RunConfig::parse("train.momentum = 1.5").is_err());
    }

    #[test]
    fn leg_class_list() {
        let c = RunConfig::parse("zoom.leg_classes = 2, 3").unwrap();
        assert_eq!(c.cascade.zoom.leg_classes, vec![2, 3]);
        let c = RunConfig::parse("zoom.leg_classes =").unwrap();
        assert!(c.cascade.zoom.leg_classes.is_empty());
    }
}
