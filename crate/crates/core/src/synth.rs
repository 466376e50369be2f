//! Procedural articulated-figure scenes with pixel-accurate part labels.
//!
//! A figure is a chain of capsules (head, torso, two-segment arms and legs)
//! posed with random joint angles. Part appearance is grouped the way
//! clothing groups real bodies: head and lower arms share a skin tone, torso
//! and upper arms a shirt, both leg segments the trousers. Within a group the
//! parts differ only in shape, context and a body-relative stripe texture, so
//! telling them apart requires seeing the figure at a reasonable scale.
//!
//! Ground truth is computed from the same geometry as the image: the label of
//! a pixel is the class of the topmost capsule covering the pixel center.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{HaznError, Result};
use crate::grid::{AbsBox, Grid2D, LabelMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum PartClass {
    Background = 0,
    Head = 1,
    Torso = 2,
    UpperArms = 3,
    LowerArms = 4,
    UpperLegs = 5,
    LowerLegs = 6,
}

pub const NUM_CLASSES: usize = 7;

impl PartClass {
    pub const ALL: [PartClass; NUM_CLASSES] = [
        PartClass::Background,
        PartClass::Head,
        PartClass::Torso,
        PartClass::UpperArms,
        PartClass::LowerArms,
        PartClass::UpperLegs,
        PartClass::LowerLegs,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<PartClass> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            PartClass::Background => "bg",
            PartClass::Head => "head",
            PartClass::Torso => "torso",
            PartClass::UpperArms => "u_arms",
            PartClass::LowerArms => "l_arms",
            PartClass::UpperLegs => "u_legs",
            PartClass::LowerLegs => "l_legs",
        }
    }
}

/// Parameters of the scene generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub min_instances: usize,
    pub max_instances: usize,
    /// Full-figure height range in pixels, sampled log-uniformly.
    pub min_scale: f64,
    pub max_scale: f64,
    pub truncation_prob: f64,
    /// 0..=1; controls distractor count and background texture strength.
    pub clutter: f64,
    pub noise_sigma: f64,
    /// Anti-aliasing samples per pixel along each axis.
    pub supersample: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 480,
            height: 360,
            min_instances: 1,
            max_instances: 3,
            min_scale: 60.0,
            max_scale: 640.0,
            truncation_prob: 0.25,
            clutter: 0.5,
            noise_sigma: 0.04,
            supersample: 2,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 16 || self.height < 16 {
            return Err(HaznError::invalid("scene must be at least 16x16"));
        }
        if self.min_instances > self.max_instances {
            return Err(HaznError::invalid("min_instances exceeds max_instances"));
        }
        if self.max_instances > 250 {
            return Err(HaznError::invalid("at most 250 instances per scene"));
        }
        if !(self.min_scale > 0.0 && self.min_scale <= self.max_scale) {
            return Err(HaznError::invalid(format!(
                "scale range [{}, {}] is empty or non-positive",
                self.min_scale, self.max_scale
            )));
        }
        if self.min_scale > self.height as f64 {
            return Err(HaznError::invalid(format!(
                "min_scale {} exceeds image height {}",
                self.min_scale, self.height
            )));
        }
        if !(0.0..=1.0).contains(&self.truncation_prob) || !(0.0..=1.0).contains(&self.clutter) {
            return Err(HaznError::invalid("truncation_prob and clutter must lie in [0, 1]"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(HaznError::invalid("noise_sigma must be finite and >= 0"));
        }
        if !(1..=4).contains(&self.supersample) {
            return Err(HaznError::invalid("supersample must be in 1..=4"));
        }
        Ok(())
    }
}

/// Ratio between a standing figure's `sqrt(box area)` and its height, at the
/// middle of the pose range. Realized ratios stay within 25% of it.
pub const FIGURE_AREA_FACTOR: f64 = 0.78;

/// Placement and pose of one figure.
#[derive(Clone, Debug, PartialEq)]
pub struct FigureSpec {
    /// Pelvis position in pixels.
    pub anchor: (f64, f64),
    /// Full-figure height in pixels.
    pub scale: f64,
    pub lean: f64,
    /// Outward angles from straight down: [left, right] for each segment.
    pub upper_arm: [f64; 2],
    pub lower_arm: [f64; 2],
    pub upper_leg: [f64; 2],
    pub lower_leg: [f64; 2],
    pub truncated: bool,
}

/// One generated scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub image: Grid2D,
    pub gt_parts: LabelMap,
    /// 0 where no instance is visible, `k + 1` inside instance `k`.
    pub instance_ids: LabelMap,
    pub instance_boxes: Vec<AbsBox>,
    /// Index into `figures` for every instance.
    pub instance_figures: Vec<usize>,
    pub figures: Vec<FigureSpec>,
}

impl SceneSample {
    pub fn num_instances(&self) -> usize {
        self.instance_boxes.len()
    }

    /// Binary mask of instance `k`.
    pub fn instance_mask(&self, k: usize) -> Grid2D {
        let id = (k + 1) as u8;
        let values = self
            .instance_ids
            .labels()
            .iter()
            .map(|&v| if v == id { 1.0 } else { 0.0 })
            .collect();
        Grid2D::from_raw_unchecked(self.image.width(), self.image.height(), 1, values)
    }

    pub fn instance_masks(&self) -> Vec<Grid2D> {
        (0..self.num_instances()).map(|k| self.instance_mask(k)).collect()
    }
}

/// Seed of the `index`-th sample of a dataset (splitmix64 mixing).
pub fn sub_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn generate_dataset(seed: u64, cfg: &SceneConfig, n: usize) -> Result<Vec<SceneSample>> {
    if n == 0 {
        return Err(HaznError::invalid("dataset size must be at least 1"));
    }
    cfg.validate()?;
    use rayon::prelude::*;
    (0..n)
        .into_par_iter()
        .map(|i| generate_scene(sub_seed(seed, i as u64), cfg))
        .collect()
}

#[derive(Clone, Copy, Debug)]
enum Owner {
    Distractor,
    Part { figure: u8, class: PartClass },
}

#[derive(Clone, Copy, Debug)]
enum Texture {
    Plain,
    /// Stripes across the capsule axis with the given period (px).
    Bands {
        period: f64,
        amplitude: f64,
    },
    /// Darker cap over the upper part of the head.
    Hair {
        color: [f64; 3],
    },
    Checker {
        period: f64,
        amplitude: f64,
    },
}

#[derive(Clone, Copy, Debug)]
struct Capsule {
    a: (f64, f64),
    b: (f64, f64),
    radius: f64,
    owner: Owner,
    color: [f64; 3],
    texture: Texture,
}

impl Capsule {
    /// Position along the axis and squared distance to it.
    #[inline]
    fn project(&self, px: f64, py: f64) -> (f64, f64) {
        let (dx, dy) = (self.b.0 - self.a.0, self.b.1 - self.a.1);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 {
            (((px - self.a.0) * dx + (py - self.a.1) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (cx, cy) = (self.a.0 + t * dx, self.a.1 + t * dy);
        (t * len2.sqrt(), (px - cx).powi(2) + (py - cy).powi(2))
    }

    #[inline]
    fn contains(&self, px: f64, py: f64) -> bool {
        self.project(px, py).1 <= self.radius * self.radius
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        (
            self.a.0.min(self.b.0) - self.radius,
            self.a.1.min(self.b.1) - self.radius,
            self.a.0.max(self.b.0) + self.radius,
            self.a.1.max(self.b.1) + self.radius,
        )
    }

    fn shade(&self, px: f64, py: f64) -> [f64; 3] {
        match self.texture {
            Texture::Plain => self.color,
            Texture::Bands { period, amplitude } => {
                let (t, _) = self.project(px, py);
                let s = if (t / period).rem_euclid(1.0) < 0.5 {
                    amplitude
                } else {
                    -amplitude
                };
                self.color.map(|c| c + s)
            }
            Texture::Hair { color } => {
                // Head capsules are degenerate: `a` is the center.
                if py < self.a.1 - 0.25 * self.radius {
                    color
                } else {
                    self.color
                }
            }
            Texture::Checker { period, amplitude } => {
                let cx = (px / period).floor() as i64;
                let cy = (py / period).floor() as i64;
                let s = if (cx + cy).rem_euclid(2) == 0 {
                    amplitude
                } else {
                    -amplitude
                };
                self.color.map(|c| c + s)
            }
        }
    }
}

// Skeleton proportions in units of figure height, pelvis at the origin.
const HEAD_CENTER_Y: f64 = -0.455;
const HEAD_RADIUS: f64 = 0.065;
const SHOULDER: (f64, f64) = (0.085, -0.36);
const TORSO_TOP_Y: f64 = -0.355;
const TORSO_BOTTOM_Y: f64 = -0.035;
const TORSO_RADIUS: f64 = 0.085;
const HIP: (f64, f64) = (0.05, -0.01);
const UPPER_ARM: (f64, f64) = (0.16, 0.03);
const LOWER_ARM: (f64, f64) = (0.15, 0.026);
const UPPER_LEG: (f64, f64) = (0.235, 0.045);
const LOWER_LEG: (f64, f64) = (0.235, 0.037);

const SKIN: [f64; 3] = [0.88, 0.70, 0.56];
const SHIRT: [f64; 3] = [0.78, 0.26, 0.22];
const TROUSERS: [f64; 3] = [0.22, 0.27, 0.52];
const HAIR: [f64; 3] = [0.18, 0.12, 0.08];

fn sample_pose(rng: &mut ChaCha8Rng, scale: f64) -> FigureSpec {
    let mut pair = |lo: f64, hi: f64| [rng.random_range(lo..hi), rng.random_range(lo..hi)];
    let upper_arm = pair(0.1, 1.1);
    let lower_arm = pair(-0.3, 0.9);
    let upper_leg = pair(0.02, 0.32);
    let lower_leg = pair(-0.2, 0.12);
    FigureSpec {
        anchor: (0.0, 0.0),
        scale,
        lean: rng.random_range(-0.12..0.12),
        upper_arm,
        lower_arm,
        upper_leg,
        lower_leg,
        truncated: false,
    }
}

/// Capsules of a figure in back-to-front order.
fn figure_capsules(f: &FigureSpec, figure: u8, rng: &mut ChaCha8Rng) -> Vec<Capsule> {
    let h = f.scale;
    let (sin_l, cos_l) = f.lean.sin_cos();
    let place = |p: (f64, f64)| {
        let (x, y) = (p.0 * h, p.1 * h);
        (f.anchor.0 + x * cos_l - y * sin_l, f.anchor.1 + x * sin_l + y * cos_l)
    };
    let limb = |start: (f64, f64), side: f64, angle: f64, len: f64| {
        (start.0 + side * angle.sin() * len, start.1 + angle.cos() * len)
    };
    let mut jitter = |base: [f64; 3], amount: f64| base.map(|c| c + rng.random_range(-amount..amount));
    let skin = jitter(SKIN, 0.05);
    let shirt = jitter(SHIRT, 0.07);
    let trousers = jitter(TROUSERS, 0.06);
    let part = |class| Owner::Part { figure, class };
    let band = |period: f64, amplitude| Texture::Bands {
        period: period * h,
        amplitude,
    };

    let mut out = Vec::with_capacity(10);
    let mut legs = Vec::new();
    let mut arms = Vec::new();
    for (i, side) in [-1.0, 1.0].into_iter().enumerate() {
        let hip = (side * HIP.0, HIP.1);
        let knee = limb(hip, side, f.upper_leg[i], UPPER_LEG.0);
        let ankle = limb(knee, side, f.upper_leg[i] + f.lower_leg[i], LOWER_LEG.0);
        legs.push((hip, knee, ankle));
        let shoulder = (side * SHOULDER.0, SHOULDER.1);
        let elbow = limb(shoulder, side, f.upper_arm[i], UPPER_ARM.0);
        let wrist = limb(elbow, side, f.upper_arm[i] + f.lower_arm[i], LOWER_ARM.0);
        arms.push((shoulder, elbow, wrist));
    }
    for &(_, knee, ankle) in &legs {
        out.push(Capsule {
            a: place(knee),
            b: place(ankle),
            radius: LOWER_LEG.1 * h,
            owner: part(PartClass::LowerLegs),
            color: trousers.map(|c| c * 0.85),
            texture: band(0.03, 0.1),
        });
    }
    for &(hip, knee, _) in &legs {
        out.push(Capsule {
            a: place(hip),
            b: place(knee),
            radius: UPPER_LEG.1 * h,
            owner: part(PartClass::UpperLegs),
            color: trousers,
            texture: Texture::Plain,
        });
    }
    out.push(Capsule {
        a: place((0.0, TORSO_TOP_Y)),
        b: place((0.0, TORSO_BOTTOM_Y)),
        radius: TORSO_RADIUS * h,
        owner: part(PartClass::Torso),
        color: shirt,
        texture: band(0.05, 0.1),
    });
    for &(shoulder, elbow, _) in &arms {
        out.push(Capsule {
            a: place(shoulder),
            b: place(elbow),
            radius: UPPER_ARM.1 * h,
            owner: part(PartClass::UpperArms),
            color: shirt.map(|c| c * 0.88),
            texture: Texture::Plain,
        });
    }
    for &(_, elbow, wrist) in &arms {
        out.push(Capsule {
            a: place(elbow),
            b: place(wrist),
            radius: LOWER_ARM.1 * h,
            owner: part(PartClass::LowerArms),
            color: skin.map(|c| c * 0.95),
            texture: Texture::Plain,
        });
    }
    let head = place((0.0, HEAD_CENTER_Y));
    out.push(Capsule {
        a: head,
        b: head,
        radius: HEAD_RADIUS * h,
        owner: part(PartClass::Head),
        color: skin,
        texture: Texture::Hair { color: HAIR },
    });
    out
}

fn capsule_bounds(caps: &[Capsule]) -> (f64, f64, f64, f64) {
    caps.iter().fold(
        (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        |acc, c| {
            let b = c.bounds();
            (acc.0.min(b.0), acc.1.min(b.1), acc.2.max(b.2), acc.3.max(b.3))
        },
    )
}

fn lowest_lower_leg_top(caps: &[Capsule]) -> f64 {
    caps.iter()
        .filter(|c| {
            matches!(
                c.owner,
                Owner::Part {
                    class: PartClass::LowerLegs,
                    ..
                }
            )
        })
        .map(|c| c.bounds().1)
        .fold(f64::INFINITY, f64::min)
}

fn place_figure(rng: &mut ChaCha8Rng, cfg: &SceneConfig, figure: u8) -> (FigureSpec, Vec<Capsule>) {
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let scale = (rng.random_range(0.0..=1.0) * (cfg.max_scale.ln() - cfg.min_scale.ln()) + cfg.min_scale.ln()).exp();
    let mut spec = sample_pose(rng, scale);
    let truncated = scale > 0.95 * h || rng.random_bool(cfg.truncation_prob);
    spec.truncated = truncated;

    // Pose around the origin first; the fork keeps color jitter independent
    // of the placement draw.
    let mut color_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let local = figure_capsules(&spec, figure, &mut color_rng.clone());
    let (x0, y0, x1, y1) = capsule_bounds(&local);

    let pick = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| {
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            (lo + hi) / 2.0
        }
    };
    let ax = pick(rng, -x0, w - x1);
    let ay = if truncated {
        // Lower legs entirely below the bottom border.
        let min_y = h - lowest_lower_leg_top(&local);
        min_y + rng.random_range(0.0..0.12) * scale
    } else {
        pick(rng, -y0, h - y1)
    };
    spec.anchor = (ax, ay);
    let caps = figure_capsules(&spec, figure, &mut color_rng);
    (spec, caps)
}

fn distractors(rng: &mut ChaCha8Rng, cfg: &SceneConfig) -> Vec<Capsule> {
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let n = (cfg.clutter * 8.0).round() as usize;
    (0..n)
        .map(|_| {
            let a = (rng.random_range(0.0..w), rng.random_range(0.0..h));
            let len = rng.random_range(0.05..0.3) * h;
            let ang: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            Capsule {
                a,
                b: (a.0 + len * ang.cos(), a.1 + len * ang.sin()),
                radius: rng.random_range(0.01..0.06) * h,
                owner: Owner::Distractor,
                color: [
                    rng.random_range(0.1..0.9),
                    rng.random_range(0.1..0.9),
                    rng.random_range(0.1..0.9),
                ],
                texture: Texture::Checker {
                    period: rng.random_range(3.0..10.0),
                    amplitude: 0.12,
                },
            }
        })
        .collect()
}

/// Low-frequency colored background.
struct Backdrop {
    base: [f64; 3],
    waves: Vec<(usize, f64, f64, f64, f64)>,
}

impl Backdrop {
    fn new(rng: &mut ChaCha8Rng, cfg: &SceneConfig) -> Backdrop {
        let grey = rng.random_range(0.35..0.65);
        let base = [0, 1, 2].map(|_| grey + rng.random_range(-0.08..0.08));
        let amp = 0.04 + 0.12 * cfg.clutter;
        let waves = (0..6)
            .map(|i| {
                let wavelength = rng.random_range(60.0..220.0);
                let ang: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let k = std::f64::consts::TAU / wavelength;
                (
                    i % 3,
                    k * ang.cos(),
                    k * ang.sin(),
                    rng.random_range(0.0..std::f64::consts::TAU),
                    amp / 2.0,
                )
            })
            .collect();
        Backdrop { base, waves }
    }

    fn shade(&self, x: f64, y: f64) -> [f64; 3] {
        let mut c = self.base;
        for &(ch, kx, ky, phase, amp) in &self.waves {
            c[ch] += amp * (kx * x + ky * y + phase).sin();
        }
        c
    }
}

const NO_SHAPE: u16 = u16::MAX;

/// Paints shape indices back to front into a sample buffer.
fn rasterize(caps: &[Capsule], w: usize, h: usize, ss: usize, offset: f64) -> Vec<u16> {
    let (sw, sh) = (w * ss, h * ss);
    let mut top = vec![NO_SHAPE; sw * sh];
    let inv = 1.0 / ss as f64;
    for (idx, c) in caps.iter().enumerate() {
        let (bx0, by0, bx1, by1) = c.bounds();
        let sx0 = (((bx0 * ss as f64) - offset).floor().max(0.0)) as usize;
        let sy0 = (((by0 * ss as f64) - offset).floor().max(0.0)) as usize;
        let sx1 = (((bx1 * ss as f64) - offset).ceil().max(0.0) as usize + 1).min(sw);
        let sy1 = (((by1 * ss as f64) - offset).ceil().max(0.0) as usize + 1).min(sh);
        for sy in sy0..sy1 {
            let py = (sy as f64 + offset) * inv;
            for sx in sx0..sx1 {
                let px = (sx as f64 + offset) * inv;
                if c.contains(px, py) {
                    top[sy * sw + sx] = idx as u16;
                }
            }
        }
    }
    top
}

/// Deterministic scene synthesis.
pub fn generate_scene(seed: u64, cfg: &SceneConfig) -> Result<SceneSample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (cfg.width, cfg.height);
    let backdrop = Backdrop::new(&mut rng, cfg);
    let mut caps = distractors(&mut rng, cfg);
    let n_fig = rng.random_range(cfg.min_instances..=cfg.max_instances);
    let mut figures = Vec::with_capacity(n_fig);
    for k in 0..n_fig {
        let (spec, fc) = place_figure(&mut rng, cfg, k as u8);
        figures.push(spec);
        caps.extend(fc);
    }

    // Ground truth from pixel centers.
    let centers = rasterize(&caps, w, h, 1, 0.5);
    let mut parts = vec![0u8; w * h];
    let mut owner_fig = vec![u8::MAX; w * h];
    for (i, &s) in centers.iter().enumerate() {
        if s == NO_SHAPE {
            continue;
        }
        if let Owner::Part { figure, class } = caps[s as usize].owner {
            parts[i] = class.id();
            owner_fig[i] = figure;
        }
    }

    // Visible instances, in figure order; fully hidden figures are dropped.
    let mut boxes = Vec::new();
    let mut instance_figures = Vec::new();
    let mut fig_to_inst = vec![0u8; n_fig];
    for f in 0..n_fig {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..h {
            for x in 0..w {
                if owner_fig[y * w + x] == f as u8 {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        if x0 == usize::MAX {
            continue;
        }
        instance_figures.push(f);
        fig_to_inst[f] = boxes.len() as u8 + 1;
        boxes.push(AbsBox {
            x_min: x0 as f64,
            y_min: y0 as f64,
            w: (x1 - x0 + 1) as f64,
            h: (y1 - y0 + 1) as f64,
        });
    }
    let ids: Vec<u8> = owner_fig
        .iter()
        .map(|&f| if f == u8::MAX { 0 } else { fig_to_inst[f as usize] })
        .collect();

    // Anti-aliased image.
    let ss = cfg.supersample;
    let samples = rasterize(&caps, w, h, ss, 0.5);
    let noise = Normal::new(0.0, cfg.noise_sigma.max(1e-12)).expect("valid sigma");
    let norm = 1.0 / (ss * ss) as f64;
    let mut values = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for sy in 0..ss {
                for sx in 0..ss {
                    let (gx, gy) = (x * ss + sx, y * ss + sy);
                    let px = (gx as f64 + 0.5) / ss as f64;
                    let py = (gy as f64 + 0.5) / ss as f64;
                    let s = samples[gy * w * ss + gx];
                    let c = if s == NO_SHAPE {
                        backdrop.shade(px, py)
                    } else {
                        caps[s as usize].shade(px, py)
                    };
                    for k in 0..3 {
                        acc[k] += c[k];
                    }
                }
            }
            for a in acc {
                let n = if cfg.noise_sigma > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                // Quantized to 8 bits so a PNG round trip is lossless.
                values.push(((a * norm + n).clamp(0.0, 1.0) * 255.0).round() / 255.0);
            }
        }
    }

    let n_inst = boxes.len();
    Ok(SceneSample {
        image: Grid2D::from_raw_unchecked(w, h, 3, values),
        gt_parts: LabelMap::from_raw_unchecked(w, h, NUM_CLASSES, parts),
        instance_ids: LabelMap::from_raw_unchecked(w, h, n_inst + 1, ids),
        instance_boxes: boxes,
        instance_figures,
        figures,
    })
}

/// Occupancy counts of the four evaluation size bins (plus overflow) over
/// the instance boxes of a dataset.
pub fn size_histogram(samples: &[SceneSample]) -> [usize; 5] {
    let mut hist = [0; 5];
    for s in samples {
        for b in &s.instance_boxes {
            hist[crate::metrics::SizeBin::classify(b.size_measure()).map_or(4, |b| b as usize)] += 1;
        }
    }
    hist
}
