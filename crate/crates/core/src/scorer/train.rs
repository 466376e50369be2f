//! Minibatch SGD with classic momentum and weight decay.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{HaznError, Result};
use crate::grid::{Grid2D, LabelMap};
use crate::sen::{SenLossConfig, SenTargets};

use super::loss::azn_loss;
use super::model::ScorerParams;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// Learning-rate factor for the output biases.
    pub classifier_lr_multiplier: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Crops per minibatch.
    pub batch: usize,
    pub iterations: usize,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            classifier_lr_multiplier: 10.0,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch: 30,
            iterations: 2000,
            lr_decay_every: 2000,
            lr_decay_factor: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.lr) {
            return Err(HaznError::invalid("lr must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(HaznError::invalid("momentum must lie in [0, 1)"));
        }
        if !finite_nonneg(self.weight_decay) || !finite_nonneg(self.classifier_lr_multiplier) {
            return Err(HaznError::invalid(
                "weight_decay and classifier_lr_multiplier must be finite and >= 0",
            ));
        }
        if self.batch == 0 || self.lr_decay_every == 0 {
            return Err(HaznError::invalid("batch and lr_decay_every must be >= 1"));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(HaznError::invalid("lr_decay_factor must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Base learning rate in effect at `iteration`.
    pub fn lr_at(&self, iteration: usize) -> f64 {
        self.lr * self.lr_decay_factor.powi((iteration / self.lr_decay_every) as i32)
    }
}

/// One training crop with precomputed features stored in single precision.
#[derive(Clone, Debug)]
pub struct TrainSample {
    width: usize,
    height: usize,
    num_features: usize,
    features: Vec<f32>,
    pub labels: LabelMap,
    /// Regression targets then seed flags, per pixel; empty when the crop
    /// has no seeds.
    targets: Vec<f32>,
    num_seeds: usize,
}

impl TrainSample {
    pub fn new(features: &Grid2D, labels: LabelMap, targets: SenTargets) -> Result<Self> {
        let (w, h) = (features.width(), features.height());
        if labels.width() != w || labels.height() != h || targets.width() != w || targets.height() != h {
            return Err(HaznError::invalid("training sample parts differ in size"));
        }
        let num_seeds = targets.num_seeds();
        let packed = if num_seeds == 0 {
            Vec::new()
        } else {
            let mut v = Vec::with_capacity(5 * w * h);
            for (r, &s) in targets.reg.values().chunks_exact(4).zip(targets.seeds.values()) {
                v.extend(r.iter().map(|&x| x as f32));
                v.push(s as f32);
            }
            v
        };
        Ok(TrainSample {
            width: w,
            height: h,
            num_features: features.channels(),
            features: features.values().iter().map(|&v| v as f32).collect(),
            labels,
            targets: packed,
            num_seeds,
        })
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_seeds(&self) -> usize {
        self.num_seeds
    }

    pub fn features(&self) -> Grid2D {
        Grid2D::from_raw_unchecked(
            self.width,
            self.height,
            self.num_features,
            self.features.iter().map(|&v| v as f64).collect(),
        )
    }

    pub fn targets(&self) -> SenTargets {
        if self.targets.is_empty() {
            return SenTargets::empty(self.width, self.height).expect("sample is at least 1x1");
        }
        let n = self.width * self.height;
        let mut reg = Vec::with_capacity(4 * n);
        let mut seeds = Vec::with_capacity(n);
        for px in self.targets.chunks_exact(5) {
            reg.extend(px[..4].iter().map(|&v| v as f64));
            seeds.push(px[4] as f64);
        }
        SenTargets {
            reg: Grid2D::from_raw_unchecked(self.width, self.height, 4, reg),
            seeds: Grid2D::from_raw_unchecked(self.width, self.height, 1, seeds),
        }
    }

    pub fn has_foreground(&self) -> bool {
        self.labels.labels().iter().any(|&l| l != 0)
    }
}

/// Momentum state. The update is `v = m v - lr g; p += v` with
/// `g = data gradient + weight_decay * p`.
#[derive(Clone, Debug)]
pub struct Sgd {
    cfg: TrainConfig,
    velocity: Vec<f64>,
    iteration: usize,
}

impl Sgd {
    pub fn new(cfg: TrainConfig, num_params: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(Sgd {
            cfg,
            velocity: vec![0.0; num_params],
            iteration: 0,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Applies one update; parameters at or after `bias_offset` use the
    /// multiplied learning rate.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], bias_offset: usize) {
        let lr = self.cfg.lr_at(self.iteration);
        let bias_lr = lr * self.cfg.classifier_lr_multiplier;
        for (i, ((p, v), &g)) in params.iter_mut().zip(&mut self.velocity).zip(grad).enumerate() {
            let rate = if i >= bias_offset { bias_lr } else { lr };
            *v = self.cfg.momentum * *v - rate * (g + self.cfg.weight_decay * *p);
            *p += *v;
        }
        self.iteration += 1;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub iteration: usize,
    pub loss: f64,
    pub lr: f64,
    pub part: f64,
    pub l_b: f64,
    pub l_c: f64,
    pub beta: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ScorerParams,
    pub curve: Vec<CurvePoint>,
}

impl TrainOutcome {
    /// One row per iteration: total, part and SEN loss terms with the rate.
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("iter,loss,lr,part,l_b,l_c,beta\n");
        for p in &self.curve {
            let _ = writeln!(
                s,
                "{},{:.9},{:e},{:.9},{:.9},{:.9},{:.6}",
                p.iteration, p.loss, p.lr, p.part, p.l_b, p.l_c, p.beta
            );
        }
        s
    }
}

/// Trains from `init`. Minibatches walk a seeded permutation of `data`
/// that is reshuffled after every pass. Per-sample gradients may be
/// computed concurrently; they are summed in batch order.
pub fn sgd_train(
    init: ScorerParams,
    data: &[TrainSample],
    cfg: &TrainConfig,
    sen_cfg: &SenLossConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(HaznError::invalid("training data is empty"));
    }
    sen_cfg.validate()?;
    if let Some(s) = data.iter().find(|s| s.num_features != init.num_features()) {
        return Err(HaznError::invalid(format!(
            "sample has {} feature channels, model expects {}",
            s.num_features,
            init.num_features()
        )));
    }
    let mut params = init;
    let mut sgd = Sgd::new(cfg.clone(), params.values().len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut curve = Vec::with_capacity(cfg.iterations);
    let bias_offset = params.bias_offset();
    for it in 0..cfg.iterations {
        let mut batch = Vec::with_capacity(cfg.batch);
        while batch.len() < cfg.batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let results: Vec<_> = batch
            .par_iter()
            .map(|&i| {
                let s = &data[i];
                azn_loss(&params, &s.features(), &s.labels, &s.targets(), sen_cfg)
            })
            .collect::<Result<_>>()?;
        let inv = 1.0 / cfg.batch as f64;
        let mut grad = vec![0.0; params.values().len()];
        let mut pt = CurvePoint {
            iteration: it,
            loss: 0.0,
            lr: cfg.lr_at(it),
            part: 0.0,
            l_b: 0.0,
            l_c: 0.0,
            beta: 0.0,
        };
        for r in &results {
            pt.loss += r.loss * inv;
            pt.part += r.part * inv;
            pt.l_b += r.sen.l_b * inv;
            pt.l_c += r.sen.l_c * inv;
            pt.beta += r.sen.beta * inv;
            for (g, &v) in grad.iter_mut().zip(&r.grad) {
                *g += v * inv;
            }
        }
        if !pt.loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(HaznError::Diverged {
                iteration: it,
                loss: pt.loss,
            });
        }
        curve.push(pt);
        sgd.step(params.values_mut(), &grad, bias_offset);
        if params.values().iter().any(|v| !v.is_finite()) {
            return Err(HaznError::Diverged {
                iteration: it,
                loss: f64::NAN,
            });
        }
    }
    Ok(TrainOutcome { params, curve })
}
