//! Segmentation metrics: per-class IOU, mIOU restricted to instance boxes
//! of a given size, and instance-wise part AP.
//!
//! All tallies are integer pixel counts, so dataset-level numbers are exact
//! sums over images and independent of evaluation order.

use std::fmt::Write as _;

use crate::error::{HaznError, Result};
use crate::grid::{AbsBox, Grid2D, LabelMap, PixelRect};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SizeBin {
    XS = 0,
    S = 1,
    M = 2,
    L = 3,
}

impl SizeBin {
    pub const ALL: [SizeBin; 4] = [SizeBin::XS, SizeBin::S, SizeBin::M, SizeBin::L];

    /// Upper edge of the largest bin; sizes at or above it overflow.
    pub const MAX_SIZE: f64 = 520.0;

    /// Half-open `[lo, hi)` range of `sqrt(w * h)`.
    pub fn bounds(self) -> (f64, f64) {
        match self {
            SizeBin::XS => (0.0, 80.0),
            SizeBin::S => (80.0, 140.0),
            SizeBin::M => (140.0, 220.0),
            SizeBin::L => (220.0, Self::MAX_SIZE),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SizeBin::XS => "XS",
            SizeBin::S => "S",
            SizeBin::M => "M",
            SizeBin::L => "L",
        }
    }

    /// `None` means overflow.
    pub fn classify(size: f64) -> Option<SizeBin> {
        SizeBin::ALL.into_iter().find(|b| {
            let (lo, hi) = b.bounds();
            size >= lo && size < hi
        })
    }

    pub fn of_box(b: &AbsBox) -> Option<SizeBin> {
        Self::classify(b.size_measure())
    }
}

/// Per-class intersection and marginal counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassTally {
    inter: Vec<u64>,
    pred: Vec<u64>,
    gt: Vec<u64>,
}

impl ClassTally {
    pub fn new(num_classes: usize) -> Self {
        ClassTally {
            inter: vec![0; num_classes],
            pred: vec![0; num_classes],
            gt: vec![0; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.inter.len()
    }

    #[inline]
    fn add(&mut self, p: u8, g: u8) {
        self.pred[p as usize] += 1;
        self.gt[g as usize] += 1;
        if p == g {
            self.inter[p as usize] += 1;
        }
    }

    fn check(&self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if !pred.same_size(gt) {
            return Err(HaznError::invalid(format!(
                "prediction {}x{} and ground truth {}x{} differ in size",
                pred.width(),
                pred.height(),
                gt.width(),
                gt.height()
            )));
        }
        let c = self.num_classes();
        if pred.num_classes() > c || gt.num_classes() > c {
            return Err(HaznError::invalid("label map has more classes than the tally"));
        }
        Ok(())
    }

    pub fn add_maps(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        self.check(pred, gt)?;
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            self.add(p, g);
        }
        Ok(())
    }

    /// Counts only pixels where `mask` is set.
    pub fn add_maps_masked(&mut self, pred: &LabelMap, gt: &LabelMap, mask: &[bool]) -> Result<()> {
        self.check(pred, gt)?;
        if mask.len() != pred.labels().len() {
            return Err(HaznError::invalid("mask length does not match the label maps"));
        }
        for ((&p, &g), &m) in pred.labels().iter().zip(gt.labels()).zip(mask) {
            if m {
                self.add(p, g);
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ClassTally) {
        for c in 0..self.num_classes().min(other.num_classes()) {
            self.inter[c] += other.inter[c];
            self.pred[c] += other.pred[c];
            self.gt[c] += other.gt[c];
        }
    }

    /// `None` when the class appears in neither prediction nor ground truth.
    pub fn iou(&self, c: usize) -> Option<f64> {
        let union = self.pred[c] + self.gt[c] - self.inter[c];
        (union > 0).then(|| self.inter[c] as f64 / union as f64)
    }

    pub fn per_class(&self) -> Vec<Option<f64>> {
        (0..self.num_classes()).map(|c| self.iou(c)).collect()
    }

    /// Mean over classes present in prediction or ground truth.
    pub fn mean(&self) -> Option<f64> {
        let present: Vec<f64> = self.per_class().into_iter().flatten().collect();
        (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
    }

    pub fn is_empty(&self) -> bool {
        self.gt.iter().all(|&n| n == 0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IouResult {
    pub per_class: Vec<Option<f64>>,
    pub mean: Option<f64>,
}

pub fn miou(pred: &LabelMap, gt: &LabelMap, num_classes: usize) -> Result<IouResult> {
    let mut t = ClassTally::new(num_classes);
    t.add_maps(pred, gt)?;
    Ok(IouResult {
        per_class: t.per_class(),
        mean: t.mean(),
    })
}

/// Tallies per size bin, each over the union of its member instances' box
/// rectangles, plus an overflow tally for oversized instances.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinnedTally {
    pub bins: [ClassTally; 4],
    pub overflow: ClassTally,
    /// Instances per bin; index 4 is overflow.
    pub counts: [usize; 5],
}

impl BinnedTally {
    pub fn new(num_classes: usize) -> Self {
        BinnedTally {
            bins: std::array::from_fn(|_| ClassTally::new(num_classes)),
            overflow: ClassTally::new(num_classes),
            counts: [0; 5],
        }
    }

    pub fn add_image(&mut self, pred: &LabelMap, gt: &LabelMap, boxes: &[AbsBox]) -> Result<()> {
        let (w, h) = (gt.width(), gt.height());
        let mut masks = vec![None::<Vec<bool>>; 5];
        for b in boxes {
            let slot = SizeBin::of_box(b).map_or(4, |s| s as usize);
            self.counts[slot] += 1;
            let mask = masks[slot].get_or_insert_with(|| vec![false; w * h]);
            let r = PixelRect::covering(b);
            let (x0, y0) = (r.x0.clamp(0, w as i64) as usize, r.y0.clamp(0, h as i64) as usize);
            let (x1, y1) = (r.x1.clamp(0, w as i64) as usize, r.y1.clamp(0, h as i64) as usize);
            for y in y0..y1 {
                mask[y * w + x0..y * w + x1].fill(true);
            }
        }
        for (slot, mask) in masks.iter().enumerate() {
            if let Some(mask) = mask {
                let t = if slot == 4 {
                    &mut self.overflow
                } else {
                    &mut self.bins[slot]
                };
                t.add_maps_masked(pred, gt, mask)?;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &BinnedTally) {
        for (a, b) in self.bins.iter_mut().zip(&other.bins) {
            a.merge(b);
        }
        self.overflow.merge(&other.overflow);
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
    }

    pub fn bin_miou(&self, bin: SizeBin) -> Option<f64> {
        self.bins[bin as usize].mean()
    }
}

pub fn size_binned_miou(pred: &LabelMap, gt: &LabelMap, boxes: &[AbsBox]) -> Result<BinnedTally> {
    let mut t = BinnedTally::new(pred.num_classes().max(gt.num_classes()));
    t.add_image(pred, gt, boxes)?;
    Ok(t)
}

/// Instance part map: 0 outside the instance, the part label inside.
pub type InstanceParts = LabelMap;

fn support_iou(a: &InstanceParts, b: &InstanceParts) -> f64 {
    let (mut inter, mut union) = (0u64, 0u64);
    for (&p, &g) in a.labels().iter().zip(b.labels()) {
        if p != 0 || g != 0 {
            union += 1;
            if p == g {
                inter += 1;
            }
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Scored detections and ground-truth count pooled over images.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ApAccumulator {
    detections: Vec<(f64, bool)>,
    num_gt: usize,
}

impl ApAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Greedy matching by descending score (ties: input order). Each
    /// prediction takes the unmatched ground truth of highest IOU, if that
    /// IOU reaches `iou_threshold`.
    pub fn add_image(
        &mut self,
        preds: &[(InstanceParts, f64)],
        gts: &[InstanceParts],
        iou_threshold: f64,
    ) -> Result<()> {
        for (p, _) in preds {
            if let Some(g) = gts.iter().find(|g| !g.same_size(p)) {
                return Err(HaznError::invalid(format!(
                    "instance maps differ in size: {}x{} vs {}x{}",
                    p.width(),
                    p.height(),
                    g.width(),
                    g.height()
                )));
            }
        }
        let mut order: Vec<usize> = (0..preds.len()).collect();
        order.sort_by(|&a, &b| preds[b].1.total_cmp(&preds[a].1).then(a.cmp(&b)));
        let mut taken = vec![false; gts.len()];
        for i in order {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts.iter().enumerate() {
                if taken[j] {
                    continue;
                }
                let iou = support_iou(&preds[i].0, g);
                if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            }
            if let Some((j, _)) = best {
                taken[j] = true;
            }
            self.detections.push((preds[i].1, best.is_some()));
        }
        self.num_gt += gts.len();
        Ok(())
    }

    pub fn merge(&mut self, other: &ApAccumulator) {
        self.detections.extend_from_slice(&other.detections);
        self.num_gt += other.num_gt;
    }

    pub fn num_gt(&self) -> usize {
        self.num_gt
    }

    /// Area under the all-points interpolated precision/recall curve.
    pub fn average_precision(&self) -> f64 {
        if self.num_gt == 0 {
            return if self.detections.is_empty() { 1.0 } else { 0.0 };
        }
        let mut d: Vec<(usize, &(f64, bool))> = self.detections.iter().enumerate().collect();
        d.sort_by(|a, b| b.1 .0.total_cmp(&a.1 .0).then(a.0.cmp(&b.0)));
        let mut tp = 0usize;
        let mut points = Vec::with_capacity(d.len());
        for (rank, (_, &(_, hit))) in d.iter().enumerate() {
            tp += hit as usize;
            points.push((tp as f64 / self.num_gt as f64, tp as f64 / (rank + 1) as f64));
        }
        for i in (0..points.len().saturating_sub(1)).rev() {
            points[i].1 = points[i].1.max(points[i + 1].1);
        }
        let mut ap = 0.0;
        let mut prev_recall = 0.0;
        for (r, p) in points {
            ap += (r - prev_recall) * p;
            prev_recall = r;
        }
        ap
    }
}

pub fn ap_r_part(preds: &[(InstanceParts, f64)], gts: &[InstanceParts], iou_threshold: f64) -> Result<f64> {
    let mut acc = ApAccumulator::new();
    acc.add_image(preds, gts, iou_threshold)?;
    Ok(acc.average_precision())
}

/// Part maps of each instance, restricted to its mask. Pixels claimed by
/// several masks go to the most confident instance (ties: lower index).
pub fn build_pred_instances(final_labels: &LabelMap, instances: &[(Grid2D, f64)]) -> Result<Vec<(InstanceParts, f64)>> {
    let (w, h) = (final_labels.width(), final_labels.height());
    for (m, _) in instances {
        if m.width() != w || m.height() != h || m.channels() != 1 {
            return Err(HaznError::invalid("instance mask does not match the label map"));
        }
    }
    let mut owner = vec![usize::MAX; w * h];
    for (i, px) in owner.iter_mut().enumerate() {
        for (k, (m, conf)) in instances.iter().enumerate() {
            if m.values()[i] > 0.5 && (*px == usize::MAX || *conf > instances[*px].1) {
                *px = k;
            }
        }
    }
    Ok(instances
        .iter()
        .enumerate()
        .map(|(k, (_, conf))| {
            let labels = final_labels
                .labels()
                .iter()
                .zip(&owner)
                .map(|(&l, &o)| if o == k { l } else { 0 })
                .collect();
            (
                LabelMap::from_raw_unchecked(w, h, final_labels.num_classes(), labels),
                *conf,
            )
        })
        .collect())
}

/// Ground-truth part maps of each instance.
pub fn gt_instances(gt: &LabelMap, masks: &[Grid2D]) -> Result<Vec<InstanceParts>> {
    masks
        .iter()
        .map(|m| {
            if m.width() != gt.width() || m.height() != gt.height() {
                return Err(HaznError::invalid("instance mask does not match the label map"));
            }
            let labels = gt
                .labels()
                .iter()
                .zip(m.values())
                .map(|(&l, &v)| if v > 0.5 { l } else { 0 })
                .collect();
            Ok(LabelMap::from_raw_unchecked(
                gt.width(),
                gt.height(),
                gt.num_classes(),
                labels,
            ))
        })
        .collect()
}

/// Score of an instance when ground-truth masks replace detections: the
/// fraction of its mask predicted as any foreground part.
pub fn foreground_fraction(final_labels: &LabelMap, mask: &Grid2D) -> f64 {
    let (mut inside, mut fg) = (0usize, 0usize);
    for (&l, &m) in final_labels.labels().iter().zip(mask.values()) {
        if m > 0.5 {
            inside += 1;
            fg += (l != 0) as usize;
        }
    }
    if inside == 0 {
        0.0
    } else {
        fg as f64 / inside as f64
    }
}

pub const DEFAULT_AP_IOU: f64 = 0.5;

/// Dataset-level evaluation state.
#[derive(Clone, Debug)]
pub struct Evaluator {
    pub tally: ClassTally,
    pub binned: BinnedTally,
    pub ap: ApAccumulator,
    pub images: usize,
}

impl Evaluator {
    pub fn new(num_classes: usize) -> Self {
        Evaluator {
            tally: ClassTally::new(num_classes),
            binned: BinnedTally::new(num_classes),
            ap: ApAccumulator::new(),
            images: 0,
        }
    }

    /// `masks[k]` and `boxes[k]` describe ground-truth instance `k`.
    pub fn add_image(&mut self, pred: &LabelMap, gt: &LabelMap, masks: &[Grid2D], boxes: &[AbsBox]) -> Result<()> {
        if masks.len() != boxes.len() {
            return Err(HaznError::invalid("instance masks and boxes differ in count"));
        }
        self.tally.add_maps(pred, gt)?;
        self.binned.add_image(pred, gt, boxes)?;
        let scored: Vec<(Grid2D, f64)> = masks
            .iter()
            .map(|m| (m.clone(), foreground_fraction(pred, m)))
            .collect();
        let preds = build_pred_instances(pred, &scored)?;
        let gts = gt_instances(gt, masks)?;
        self.ap.add_image(&preds, &gts, DEFAULT_AP_IOU)?;
        self.images += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &Evaluator) {
        self.tally.merge(&other.tally);
        self.binned.merge(&other.binned);
        self.ap.merge(&other.ap);
        self.images += other.images;
    }

    pub fn report(&self, method: &str) -> EvalReport {
        EvalReport {
            method: method.to_string(),
            per_class: self.tally.per_class(),
            mean: self.tally.mean(),
            bins: SizeBin::ALL.map(|b| self.binned.bin_miou(b)),
            overflow: self.binned.overflow.mean(),
            bin_counts: self.binned.counts,
            ap_r: self.ap.average_precision(),
            images: self.images,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub per_class: Vec<Option<f64>>,
    pub mean: Option<f64>,
    pub bins: [Option<f64>; 4],
    pub overflow: Option<f64>,
    pub bin_counts: [usize; 5],
    pub ap_r: f64,
    pub images: usize,
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{:.2}", 100.0 * v))
}

impl EvalReport {
    /// Header row: foreground classes, background, average, size bins, AP.
    pub fn csv_header(class_names: &[&str]) -> String {
        let mut cols = vec!["method".to_string()];
        cols.extend(class_names.iter().skip(1).map(|s| s.to_string()));
        cols.push(class_names.first().copied().unwrap_or("bg").to_string());
        cols.push("Avg".into());
        cols.extend(SizeBin::ALL.iter().map(|b| b.name().to_string()));
        cols.push("APr_part".into());
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![self.method.clone()];
        cols.extend(self.per_class.iter().skip(1).map(|&v| pct(v)));
        cols.push(pct(self.per_class.first().copied().flatten()));
        cols.push(pct(self.mean));
        cols.extend(self.bins.iter().map(|&v| pct(v)));
        cols.push(pct(Some(self.ap_r)));
        cols.join(",")
    }

    pub fn to_csv(reports: &[EvalReport], class_names: &[&str]) -> String {
        let mut s = EvalReport::csv_header(class_names);
        s.push('\n');
        for r in reports {
            let _ = writeln!(s, "{}", r.csv_row());
        }
        s
    }

    /// Instance counts per bin and the overflow tally, for logs.
    pub fn bin_summary(&self) -> String {
        let mut s = String::new();
        for b in SizeBin::ALL {
            let _ = write!(s, "{}={} ", b.name(), self.bin_counts[b as usize]);
        }
        let _ = write!(s, "overflow={} ({})", self.bin_counts[4], pct(self.overflow));
        s
    }
}
