//! Per-pixel multinomial loss and the joint loss with the SEN terms.

use crate::error::{HaznError, Result};
use crate::grid::{Grid2D, LabelMap};
use crate::sen::{sen_loss, SenLoss, SenLossConfig, SenTargets};

use super::model::ScorerParams;

/// Mean over pixels of `-log softmax(logits)[gt]`, with its gradient.
pub fn part_loss(part_logits: &Grid2D, gt: &LabelMap) -> Result<(f64, Grid2D)> {
    let (w, h, c) = (part_logits.width(), part_logits.height(), part_logits.channels());
    if gt.width() != w || gt.height() != h {
        return Err(HaznError::invalid("logits and labels differ in size"));
    }
    if gt.num_classes() > c {
        return Err(HaznError::invalid(format!(
            "labels use {} classes but logits have {c} channels",
            gt.num_classes()
        )));
    }
    let inv_n = 1.0 / (w * h) as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(w * h * c);
    for (px, &label) in part_logits.values().chunks_exact(c).zip(gt.labels()) {
        let m = px.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + px.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
        loss += (lse - px[label as usize]) * inv_n;
        for (k, &z) in px.iter().enumerate() {
            let p = (z - lse).exp();
            let t = if k == label as usize { 1.0 } else { 0.0 };
            grad.push((p - t) * inv_n);
        }
    }
    Ok((loss, Grid2D::new(w, h, c, grad)?))
}

#[derive(Clone, Debug)]
pub struct AznLoss {
    /// `part + sen.loss`.
    pub loss: f64,
    pub part: f64,
    pub sen: SenLoss,
    /// Gradient in parameter space.
    pub grad: Vec<f64>,
}

/// Joint loss of the class head and the SEN heads for one sample.
pub fn azn_loss(
    p: &ScorerParams,
    feats: &Grid2D,
    gt: &LabelMap,
    tgt: &SenTargets,
    cfg: &SenLossConfig,
) -> Result<AznLoss> {
    let out = p.forward(feats)?;
    let (part, d_parts) = part_loss(&out.part_logits, gt)?;
    let sen = sen_loss(&out.conf_logit, &out.reg, tgt, cfg)?;
    let grad = p.backward(feats, &d_parts, &sen.grad_conf, &sen.grad_reg)?;
    Ok(AznLoss {
        loss: part + sen.loss,
        part,
        sen,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::model::Stage;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_give_log_c() {
        let logits = Grid2D::zeros(4, 3, 7).unwrap();
        let gt = LabelMap::new(4, 3, 7, (0..12).map(|i| (i % 7) as u8).collect()).unwrap();
        let (l, _) = part_loss(&logits, &gt).unwrap();
        assert!((l - 7f64.ln()).abs() < 1e-12);
        assert!((l - 1.9459).abs() < 1e-4);
    }

    #[test]
    fn confident_correct_logits_give_tiny_loss() {
        let gt = LabelMap::new(3, 1, 3, vec![0, 2, 1]).unwrap();
        let logits = Grid2D::from_fn(3, 1, 3, |x, _, c| if gt.get(x, 0) as usize == c { 40.0 } else { 0.0 }).unwrap();
        assert!(part_loss(&logits, &gt).unwrap().0 < 1e-6);
    }

    #[test]
    fn joint_loss_is_sum_of_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut p = ScorerParams::zeros(Stage::Image, 7).unwrap();
        for v in p.values_mut() {
            *v = rng.random_range(-0.3..0.3);
        }
        let feats = Grid2D::from_fn(8, 8, p.num_features(), |_, _, _| rng.random_range(-1.0..1.0)).unwrap();
        let gt = LabelMap::new(8, 8, 7, (0..64).map(|_| rng.random_range(0..7)).collect()).unwrap();
        let tgt = SenTargets {
            reg: Grid2D::from_fn(8, 8, 4, |_, _, _| rng.random_range(-0.5..0.5)).unwrap(),
            seeds: Grid2D::from_fn(8, 8, 1, |_, _, _| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).unwrap(),
        };
        let out = p.forward(&feats).unwrap();
        for lambda in [0.0, 1.0] {
            let cfg = SenLossConfig { lambda, seed_window: 7 };
            let l = azn_loss(&p, &feats, &gt, &tgt, &cfg).unwrap();
            let want = part_loss(&out.part_logits, &gt).unwrap().0
                + sen_loss(&out.conf_logit, &out.reg, &tgt, &cfg).unwrap().loss;
            assert!((l.loss - want).abs() < 1e-12);
            if lambda == 0.0 {
                assert_eq!(l.loss, l.part + l.sen.l_b);
            }
        }
    }
}
