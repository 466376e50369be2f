//! Linear heads over the feature stack and the model file format.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{HaznError, Result};
use crate::grid::Grid2D;
use crate::sen::Level;

use super::features::{bank_description, standardization, NUM_BASE_FEATURES};

pub const MODEL_MAGIC: &str = "hazn-model";
pub const MODEL_VERSION: u32 = 1;

/// Outputs per pixel beyond the class logits: confidence plus four box
/// regression values.
pub const SEN_OUTPUTS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    Image,
    Object,
    Part,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Image, Stage::Object, Stage::Part];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Image => "image",
            Stage::Object => "object",
            Stage::Part => "part",
        }
    }

    pub fn parse(s: &str) -> Result<Stage> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| HaznError::invalid(format!("unknown stage {s:?} (expected image, object or part)")))
    }

    /// Level of the boxes this stage's SEN head regresses, if any.
    pub fn proposal_level(self) -> Option<Level> {
        match self {
            Stage::Image => Some(Level::Object),
            Stage::Object => Some(Level::Part),
            Stage::Part => None,
        }
    }

    pub fn takes_prior(self) -> bool {
        self == Stage::Part
    }
}

/// One `F × (C + 5)` weight matrix followed by `C + 5` biases, stored flat.
/// Output columns: class logits `0..C`, confidence `C`, regression
/// `C+1..C+5`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScorerParams {
    pub stage: Stage,
    num_features: usize,
    num_classes: usize,
    prior_width: usize,
    values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutputs {
    pub part_logits: Grid2D,
    pub conf_logit: Grid2D,
    pub reg: Grid2D,
}

impl ScorerParams {
    /// Zero-initialized parameters for `stage`.
    pub fn zeros(stage: Stage, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(HaznError::invalid("a scorer needs at least two classes"));
        }
        let prior_width = if stage.takes_prior() { num_classes } else { 0 };
        let num_features = NUM_BASE_FEATURES + prior_width;
        let k = num_classes + SEN_OUTPUTS;
        Ok(ScorerParams {
            stage,
            num_features,
            num_classes,
            prior_width,
            values: vec![0.0; (num_features + 1) * k],
        })
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn prior_width(&self) -> usize {
        self.prior_width
    }

    pub fn num_outputs(&self) -> usize {
        self.num_classes + SEN_OUTPUTS
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Index of the first bias in [`values`](Self::values).
    pub fn bias_offset(&self) -> usize {
        self.num_features * self.num_outputs()
    }

    pub fn weight(&self, f: usize, k: usize) -> f64 {
        self.values[f * self.num_outputs() + k]
    }

    pub fn set_weight(&mut self, f: usize, k: usize, v: f64) {
        let k_out = self.num_outputs();
        self.values[f * k_out + k] = v;
    }

    pub fn bias(&self, k: usize) -> f64 {
        self.values[self.bias_offset() + k]
    }

    pub fn set_bias(&mut self, k: usize, v: f64) {
        let off = self.bias_offset();
        self.values[off + k] = v;
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn check_features(&self, feats: &Grid2D) -> Result<()> {
        if feats.channels() != self.num_features {
            return Err(HaznError::invalid(format!(
                "{} model expects {} feature channels, got {}",
                self.stage.name(),
                self.num_features,
                feats.channels()
            )));
        }
        Ok(())
    }

    /// Per-pixel affine map from features to all outputs.
    pub fn forward(&self, feats: &Grid2D) -> Result<HeadOutputs> {
        self.check_features(feats)?;
        let (w, h) = (feats.width(), feats.height());
        let (c, k_out) = (self.num_classes, self.num_outputs());
        let bias = &self.values[self.bias_offset()..];
        let mut parts = Vec::with_capacity(w * h * c);
        let mut conf = Vec::with_capacity(w * h);
        let mut reg = Vec::with_capacity(w * h * 4);
        let mut out = vec![0.0; k_out];
        for px in feats.values().chunks_exact(self.num_features) {
            out.copy_from_slice(bias);
            for (f, &v) in px.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                let row = &self.values[f * k_out..(f + 1) * k_out];
                for (o, &wt) in out.iter_mut().zip(row) {
                    *o += v * wt;
                }
            }
            parts.extend_from_slice(&out[..c]);
            conf.push(out[c]);
            reg.extend_from_slice(&out[c + 1..]);
        }
        Ok(HeadOutputs {
            part_logits: Grid2D::new(w, h, c, parts)?,
            conf_logit: Grid2D::new(w, h, 1, conf)?,
            reg: Grid2D::new(w, h, 4, reg)?,
        })
    }

    /// Parameter gradient given per-pixel gradients of every output.
    pub fn backward(&self, feats: &Grid2D, d_parts: &Grid2D, d_conf: &Grid2D, d_reg: &Grid2D) -> Result<Vec<f64>> {
        self.check_features(feats)?;
        let (c, k_out, f_n) = (self.num_classes, self.num_outputs(), self.num_features);
        let mut grad = vec![0.0; self.values.len()];
        let mut g = vec![0.0; k_out];
        let off = self.bias_offset();
        for (i, px) in feats.values().chunks_exact(f_n).enumerate() {
            g[..c].copy_from_slice(&d_parts.values()[i * c..(i + 1) * c]);
            g[c] = d_conf.values()[i];
            g[c + 1..].copy_from_slice(&d_reg.values()[i * 4..(i + 1) * 4]);
            for (f, &v) in px.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                for (gw, &gk) in grad[f * k_out..(f + 1) * k_out].iter_mut().zip(&g) {
                    *gw += v * gk;
                }
            }
            for (gb, &gk) in grad[off..].iter_mut().zip(&g) {
                *gb += gk;
            }
        }
        Ok(grad)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MODEL_MAGIC} {MODEL_VERSION}");
        let _ = writeln!(s, "stage {}", self.stage.name());
        let _ = writeln!(s, "features {}", self.num_features);
        let _ = writeln!(s, "classes {}", self.num_classes);
        let _ = writeln!(s, "prior {}", self.prior_width);
        let _ = writeln!(s, "bank {}", bank_description());
        for (i, (m, sd)) in standardization(self.prior_width).into_iter().enumerate() {
            let _ = writeln!(s, "standardize {i} {m:e} {sd:e}");
        }
        let _ = writeln!(s, "params {}", self.values.len());
        for v in &self.values {
            let _ = writeln!(s, "{:016x}", v.to_bits());
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |d: String| HaznError::format("model file", d);
        let mut lines = text.lines();
        let mut next = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(format!("missing {key:?} line")))?;
            let rest = line
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .ok_or_else(|| bad(format!("expected {key:?}, found {line:?}")))?;
            Ok(rest.to_string())
        };
        let version = next(MODEL_MAGIC)?;
        if version != MODEL_VERSION.to_string() {
            return Err(bad(format!("unsupported version {version}")));
        }
        let num = |s: String, what: &str| s.parse::<usize>().map_err(|e| bad(format!("{what}: {e}")));
        let stage = Stage::parse(&next("stage")?)?;
        let num_features = num(next("features")?, "features")?;
        let num_classes = num(next("classes")?, "classes")?;
        let prior_width = num(next("prior")?, "prior")?;
        let mut p = ScorerParams::zeros(stage, num_classes)?;
        if p.num_features != num_features || p.prior_width != prior_width {
            return Err(bad(format!(
                "{} stage with {num_classes} classes needs {} features and prior width {}, file has {num_features} and {prior_width}",
                stage.name(),
                p.num_features,
                p.prior_width
            )));
        }
        let bank = next("bank")?;
        if bank != bank_description() {
            return Err(bad(format!(
                "feature bank {bank:?} differs from {:?}",
                bank_description()
            )));
        }
        for (i, (m, sd)) in standardization(prior_width).into_iter().enumerate() {
            let line = next("standardize")?;
            let f: Vec<&str> = line.split_whitespace().collect();
            let parsed = (f.len() == 3).then(|| {
                (
                    f[0].parse::<usize>().ok(),
                    f[1].parse::<f64>().ok(),
                    f[2].parse::<f64>().ok(),
                )
            });
            if parsed != Some((Some(i), Some(m), Some(sd))) {
                return Err(bad(format!(
                    "standardization for channel {i} is {line:?}, expected {m:e} {sd:e}"
                )));
            }
        }
        let n = num(next("params")?, "params")?;
        if n != p.values.len() {
            return Err(bad(format!("expected {} parameters, header says {n}", p.values.len())));
        }
        for (i, v) in p.values.iter_mut().enumerate() {
            let line = lines
                .next()
                .ok_or_else(|| bad(format!("truncated after {i} parameters")))?;
            let bits = u64::from_str_radix(line.trim(), 16).map_err(|e| bad(format!("parameter {i}: {e}")))?;
            *v = f64::from_bits(bits);
            if !v.is_finite() {
                return Err(bad(format!("parameter {i} is not finite")));
            }
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(bad("trailing data after the parameter block".into()));
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HaznError::io(path, e))?;
        Self::from_text(&text)
    }
}
