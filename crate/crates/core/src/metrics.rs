//! Segmentation quality metrics and inference throughput.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::mask::LabelMask;

#[derive(Debug, Clone, PartialEq)]
pub struct SegReport {
    /// IoU of every label present in the ground truth or the prediction.
    pub per_label_iou: BTreeMap<u8, f64>,
    pub wiou: f64,
    /// Mean IoU over the foreground labels present in either mask; 1.0 when
    /// none is.
    pub fg_iou: f64,
    pub pixel_accuracy: f64,
}

impl SegReport {
    /// Unweighted mean over [`per_label_iou`](Self::per_label_iou).
    pub fn mean_iou(&self) -> f64 {
        if self.per_label_iou.is_empty() {
            return 0.0;
        }
        self.per_label_iou.values().sum::<f64>() / self.per_label_iou.len() as f64
    }

    /// `label,iou` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,iou\n");
        for (l, v) in &self.per_label_iou {
            s.push_str(&format!("{l},{v}\n"));
        }
        s
    }
}

fn check_pair(pred: &LabelMask, gt: &LabelMask) -> Result<()> {
    if pred.label_table() != gt.label_table() {
        return Err(Error::contract(
            "prediction and ground truth use different label tables",
        ));
    }
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::shape(format!(
            "prediction {}×{} vs ground truth {}×{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    Ok(())
}

/// Intersection and union counts per label id.
fn overlap_counts(pred: &LabelMask, gt: &LabelMask) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let k = pred.class_count();
    let mut inter = vec![0; k];
    let mut p_area = vec![0; k];
    let mut g_area = vec![0; k];
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        p_area[p as usize] += 1;
        g_area[g as usize] += 1;
        if p == g {
            inter[p as usize] += 1;
        }
    }
    (inter, p_area, g_area)
}

/// Area-weighted IoU over ground-truth-present labels, plus foreground IoU.
pub fn weighted_iou(pred: &LabelMask, gt: &LabelMask, fg_labels: &[u8]) -> Result<SegReport> {
    check_pair(pred, gt)?;
    let (inter, p_area, g_area) = overlap_counts(pred, gt);
    let total = gt.labels().len() as f64;
    let mut per_label = BTreeMap::new();
    for l in 0..inter.len() {
        let union = p_area[l] + g_area[l] - inter[l];
        if union > 0 {
            per_label.insert(l as u8, inter[l] as f64 / union as f64);
        }
    }
    // GT-present areas already cover the image, so the weights sum to one
    let gt_present: f64 = g_area.iter().map(|&a| a as f64).sum();
    let wiou = (0..inter.len())
        .filter(|&l| g_area[l] > 0)
        .map(|l| g_area[l] as f64 / gt_present * per_label[&(l as u8)])
        .sum();
    let fg: Vec<f64> = fg_labels
        .iter()
        .filter_map(|l| per_label.get(l).copied())
        .collect();
    let fg_iou = if fg.is_empty() {
        1.0
    } else {
        fg.iter().sum::<f64>() / fg.len() as f64
    };
    let correct: usize = inter.iter().sum();
    Ok(SegReport {
        per_label_iou: per_label,
        wiou,
        fg_iou,
        pixel_accuracy: correct as f64 / total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionReport {
    pub precision: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    /// No image predicted the label; `precision` is then reported as 1.0.
    pub zero_positive: bool,
}

/// IoU of a single label; `None` when absent from both masks.
pub fn label_iou(pred: &LabelMask, gt: &LabelMask, label: u8) -> Option<f64> {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        let (a, b) = (p == label, g == label);
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    (union > 0).then(|| inter as f64 / union as f64)
}

/// Image-level precision for `label`: an image predicting the label is a true
/// positive when its IoU reaches `threshold`, a false positive otherwise.
pub fn precision_at_iou(
    preds: &[LabelMask],
    gts: &[LabelMask],
    label: u8,
    threshold: f64,
) -> Result<PrecisionReport> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::param(format!(
            "IoU threshold {threshold} outside (0, 1)"
        )));
    }
    if preds.len() != gts.len() {
        return Err(Error::shape(format!(
            "{} predictions vs {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    let (mut tp, mut fp) = (0, 0);
    for (p, g) in preds.iter().zip(gts) {
        check_pair(p, g)?;
        if label as usize >= g.class_count() {
            return Err(Error::param(format!("unknown label {label}")));
        }
        if !p.contains(label) {
            continue;
        }
        match label_iou(p, g, label) {
            Some(iou) if iou >= threshold => tp += 1,
            _ => fp += 1,
        }
    }
    let positives = tp + fp;
    Ok(PrecisionReport {
        precision: if positives == 0 {
            1.0
        } else {
            tp as f64 / positives as f64
        },
        true_positives: tp,
        false_positives: fp,
        zero_positive: positives == 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub iou_threshold: f64,
    pub pd: f64,
}

/// Fraction of reports whose mean IoU exceeds each threshold, thresholds in
/// ascending order.
pub fn iou_pd_curve(reports: &[SegReport], thresholds: &[f64]) -> Result<Vec<CurvePoint>> {
    if reports.is_empty() {
        return Err(Error::contract("pd curve needs at least one report"));
    }
    let mut ts = thresholds.to_vec();
    ts.sort_by(f64::total_cmp);
    let means: Vec<f64> = reports.iter().map(SegReport::mean_iou).collect();
    let n = means.len() as f64;
    let curve: Vec<CurvePoint> = ts
        .iter()
        .map(|&t| CurvePoint {
            iou_threshold: t,
            pd: means.iter().filter(|&&m| m > t).count() as f64 / n,
        })
        .collect();
    if curve.windows(2).any(|w| w[1].pd > w[0].pd) {
        return Err(Error::contract("pd curve is not monotone"));
    }
    Ok(curve)
}

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from("threshold,pd\n");
    for p in curve {
        s.push_str(&format!("{},{}\n", p.iou_threshold, p.pd));
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct Throughput {
    /// Images per second of each run.
    pub runs: Vec<f64>,
    pub median: f64,
}

/// Times `runs` passes of `n_images` calls to `infer(i)` and reports the
/// median images-per-second.
pub fn measure_throughput(
    n_images: usize,
    runs: usize,
    mut infer: impl FnMut(usize) -> Result<()>,
) -> Result<Throughput> {
    if n_images == 0 || runs == 0 {
        return Err(Error::param(
            "throughput needs at least one image and one run",
        ));
    }
    let mut fps = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        for i in 0..n_images {
            infer(i)?;
        }
        let secs = start.elapsed().as_secs_f64().max(1e-9);
        fps.push(n_images as f64 / secs);
    }
    let mut sorted = fps.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if runs % 2 == 1 {
        sorted[runs / 2]
    } else {
        0.5 * (sorted[runs / 2 - 1] + sorted[runs / 2])
    };
    Ok(Throughput { runs: fps, median })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(h: usize, w: usize, labels: &[u8], k: usize) -> LabelMask {
        LabelMask::new(h, w, labels.to_vec(), LabelMask::default_table(k)).unwrap()
    }

    #[test]
    fn identical_masks_score_one() {
        let m = mask(2, 3, &[0, 1, 2, 2, 1, 0], 3);
        let r = weighted_iou(&m, &m, &[1, 2]).unwrap();
        assert_eq!(r.wiou, 1.0);
        assert_eq!(r.fg_iou, 1.0);
        assert!(r.per_label_iou.values().all(|&v| v == 1.0));
    }

    #[test]
    fn two_by_two_hand_case() {
        let gt = mask(2, 2, &[0, 0, 0, 1], 2);
        let pred = mask(2, 2, &[0, 0, 1, 1], 2);
        let r = weighted_iou(&pred, &gt, &[1]).unwrap();
        assert_eq!(r.per_label_iou[&0], 2.0 / 3.0);
        assert_eq!(r.per_label_iou[&1], 0.5);
        assert_eq!(r.wiou, 0.625);
        assert_eq!(r.fg_iou, 0.5);
        assert_eq!(r.pixel_accuracy, 0.75);
    }

    #[test]
    fn disjoint_prediction_scores_zero() {
        let gt = mask(1, 4, &[0, 0, 1, 1], 3);
        let pred = mask(1, 4, &[2, 2, 2, 2], 3);
        assert_eq!(weighted_iou(&pred, &gt, &[]).unwrap().wiou, 0.0);
    }

    #[test]
    fn iou_is_symmetric_and_tables_must_match() {
        let a = mask(2, 2, &[0, 1, 1, 2], 3);
        let b = mask(2, 2, &[1, 1, 0, 2], 3);
        assert_eq!(
            weighted_iou(&a, &b, &[]).unwrap().per_label_iou,
            weighted_iou(&b, &a, &[]).unwrap().per_label_iou
        );
        let other = mask(2, 2, &[0, 1, 1, 2], 4);
        assert!(matches!(
            weighted_iou(&a, &other, &[]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn precision_two_thirds() {
        let l = 1;
        let gts = [
            mask(1, 4, &[1, 1, 0, 0], 2),
            mask(1, 4, &[1, 1, 1, 0], 2),
            mask(1, 4, &[0, 0, 0, 0], 2),
            mask(1, 4, &[0, 0, 0, 0], 2),
        ];
        let preds = [
            mask(1, 4, &[1, 1, 0, 0], 2),
            mask(1, 4, &[1, 1, 0, 0], 2),
            mask(1, 4, &[0, 1, 0, 0], 2),
            mask(1, 4, &[0, 0, 0, 0], 2),
        ];
        let r = precision_at_iou(&preds, &gts, l, 0.5).unwrap();
        assert_eq!((r.true_positives, r.false_positives), (2, 1));
        assert_eq!(r.precision, 2.0 / 3.0);
        assert!(!r.zero_positive);
        let perfect = precision_at_iou(&gts, &gts, l, 0.5).unwrap();
        assert_eq!(perfect.precision, 1.0);
    }

    #[test]
    fn precision_conventions() {
        let gts = [mask(1, 2, &[1, 0], 2)];
        let never = [mask(1, 2, &[0, 0], 2)];
        let r = precision_at_iou(&never, &gts, 1, 0.5).unwrap();
        assert_eq!(r.precision, 1.0);
        assert!(r.zero_positive);
        assert!(matches!(
            precision_at_iou(&never, &gts, 5, 0.5),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            precision_at_iou(&never, &gts, 1, 1.0),
            Err(Error::Parameter(_))
        ));
    }

    fn report_with_miou(m: f64) -> SegReport {
        SegReport {
            per_label_iou: BTreeMap::from([(0, m)]),
            wiou: m,
            fg_iou: m,
            pixel_accuracy: m,
        }
    }

    #[test]
    fn pd_curve_single_report() {
        let c = iou_pd_curve(&[report_with_miou(0.7)], &[0.0, 0.5, 0.69, 0.7, 0.9, 1.0]).unwrap();
        let pd: Vec<f64> = c.iter().map(|p| p.pd).collect();
        assert_eq!(pd, vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        assert!(iou_pd_curve(&[], &[0.5]).is_err());
    }

    #[test]
    fn pd_curve_matches_direct_count() {
        let mious = [0.05, 0.1, 0.2, 0.35, 0.4, 0.5, 0.5, 0.65, 0.8, 0.95];
        let reports: Vec<SegReport> = mious.iter().map(|&m| report_with_miou(m)).collect();
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
        let curve = iou_pd_curve(&reports, &grid).unwrap();
        for p in &curve {
            let direct = mious.iter().filter(|&&m| m > p.iou_threshold).count() as f64 / 10.0;
            assert_eq!(p.pd, direct);
        }
        assert!(curve.windows(2).all(|w| w[1].pd <= w[0].pd));
        assert_eq!(curve.last().unwrap().pd, 0.0);
    }

    #[test]
    fn throughput_rejects_zero_images() {
        assert!(measure_throughput(0, 3, |_| Ok(())).is_err());
        let t = measure_throughput(5, 3, |_| Ok(())).unwrap();
        assert_eq!(t.runs.len(), 3);
        assert!(t.median > 0.0);
    }
}
