//! Detection evaluation: greedy matching, precision/recall, all-point AP and
//! the log-average miss rate over false positives per image.
//!
//! Curves are built by sweeping the score threshold over the distinct
//! detection scores, highest first. Equal scores enter the curve together,
//! so results only depend on the score ranking.

use std::collections::HashSet;
use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{GroundTruthEntry, GroundTruthId};
use crate::geometry::{iou, BoxSelector};
use crate::suppression::{Detection, DetectionId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("detection id {id} appears more than once in one image")]
    DuplicateDetectionId { id: DetectionId },
    #[error("no ground truth left to evaluate against")]
    NoGroundTruth,
    #[error("ground truth {id} has a degenerate full box")]
    DegenerateFullBox { id: GroundTruthId },
    #[error("invalid evaluation configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub match_iou: f64,
    pub box_selector: BoxSelector,
    pub fppi_points: usize,
    pub fppi_range: (f64, f64),
    /// Ground truths whose full box is shorter than this are ignored.
    pub min_height: f64,
    /// Keep only ground truths with visibility in `[lo, hi)`; others are ignored.
    pub visibility_band: Option<(f64, f64)>,
    /// Floor applied to miss rates before taking logs.
    pub miss_rate_floor: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            match_iou: 0.5,
            box_selector: BoxSelector::Full,
            fppi_points: 9,
            fppi_range: (1e-2, 1.0),
            min_height: 0.0,
            visibility_band: None,
            miss_rate_floor: 1e-10,
        }
    }
}

impl EvalConfig {
    /// Reasonable subset: visibility in `[0.65, inf)`.
    pub const REASONABLE: (f64, f64) = (0.65, f64::INFINITY);
    /// Heavy occlusion subset: visibility in `[0.2, 0.65)`.
    pub const HEAVY_OCCLUSION: (f64, f64) = (0.2, 0.65);

    pub fn validate(&self) -> Result<(), MetricsError> {
        let (lo, hi) = self.fppi_range;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(MetricsError::InvalidConfig(format!(
                "fppi range must satisfy 0 < lo < hi, got [{lo}, {hi}]"
            )));
        }
        if self.fppi_points < 2 {
            return Err(MetricsError::InvalidConfig("need at least 2 fppi points".into()));
        }
        if !(0.0..=1.0).contains(&self.match_iou) {
            return Err(MetricsError::InvalidConfig(format!(
                "match_iou {} outside [0, 1]",
                self.match_iou
            )));
        }
        if self.miss_rate_floor.is_nan() || self.miss_rate_floor <= 0.0 {
            return Err(MetricsError::InvalidConfig("miss_rate_floor must be positive".into()));
        }
        Ok(())
    }

    /// Log-spaced reference FPPI values, endpoints included.
    pub fn reference_fppi(&self) -> Vec<f64> {
        let (lo, hi) = (self.fppi_range.0.ln(), self.fppi_range.1.ln());
        let n = self.fppi_points;
        (0..n)
            .map(|k| (lo + (hi - lo) * k as f64 / (n - 1) as f64).exp())
            .collect()
    }
}

/// `area(visible) / area(full)`, clamped to `[0, 1]`.
pub fn visibility(gt: &GroundTruthEntry) -> Result<f64, MetricsError> {
    let full = gt.pair.full.area();
    if full <= 0.0 {
        return Err(MetricsError::DegenerateFullBox { id: gt.id });
    }
    Ok((gt.pair.visible.area() / full).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchLabel {
    TruePositive(GroundTruthId),
    FalsePositive,
    /// Matched an ignored ground truth; counts neither way.
    Ignored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageMatch {
    /// `(detection id, score, label)` in descending score order.
    pub labels: Vec<(DetectionId, f64, MatchLabel)>,
    /// Ground truths that count towards recall after filtering.
    pub num_gt: usize,
}

fn gt_ignored(gt: &GroundTruthEntry, cfg: &EvalConfig) -> bool {
    if gt.ignore || gt.pair.full.height() < cfg.min_height {
        return true;
    }
    if cfg.box_selector == BoxSelector::Visible && gt.visible_missing {
        return true;
    }
    match cfg.visibility_band {
        None => false,
        Some((lo, hi)) => match visibility(gt) {
            Ok(v) => !(lo <= v && v < hi),
            Err(_) => true,
        },
    }
}

/// Matches one image's detections to its ground truths.
///
/// Detections are visited by descending score (ties by id). Each takes the
/// unmatched, non-ignored ground truth with the highest IoU at or above
/// `match_iou`; failing that it is ignored if some ignored ground truth
/// reaches `match_iou`, otherwise it is a false positive.
pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruthEntry],
    cfg: &EvalConfig,
) -> Result<ImageMatch, MetricsError> {
    let mut seen = HashSet::with_capacity(dets.len());
    for d in dets {
        if !seen.insert(d.id) {
            return Err(MetricsError::DuplicateDetectionId { id: d.id });
        }
    }
    let ignored: Vec<bool> = gts.iter().map(|g| gt_ignored(g, cfg)).collect();
    let num_gt = ignored.iter().filter(|&&i| !i).count();
    let mut taken = vec![false; gts.len()];

    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));

    let sel = cfg.box_selector;
    let mut labels = Vec::with_capacity(order.len());
    for d in order {
        let dbox = d.pair.select(sel);
        let mut best: Option<(usize, f64)> = None;
        let mut hits_ignored = false;
        for (k, g) in gts.iter().enumerate() {
            let overlap = iou(dbox, g.pair.select(sel));
            if overlap < cfg.match_iou {
                continue;
            }
            if ignored[k] {
                hits_ignored = true;
            } else if !taken[k] && best.is_none_or(|(_, b)| overlap > b) {
                best = Some((k, overlap));
            }
        }
        let label = match best {
            Some((k, _)) => {
                taken[k] = true;
                MatchLabel::TruePositive(gts[k].id)
            }
            None if hits_ignored => MatchLabel::Ignored,
            None => MatchLabel::FalsePositive,
        };
        labels.push((d.id, d.score, label));
    }
    Ok(ImageMatch { labels, num_gt })
}

/// One image's inputs.
#[derive(Debug, Clone, Copy)]
pub struct ImageSample<'a> {
    pub dets: &'a [Detection],
    pub gts: &'a [GroundTruthEntry],
}

/// One step of the threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub score: f64,
    pub tp: usize,
    pub fp: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalCounts {
    pub num_images: usize,
    pub num_gt: usize,
    /// Detections counted as TP or FP (ignored matches excluded).
    pub num_det: usize,
    pub num_tp: usize,
    pub num_fp: usize,
}

/// Matched detections across images, ready for curve building.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedSet {
    pub sweep: Vec<SweepPoint>,
    pub counts: EvalCounts,
}

/// Matches every image (in parallel) and builds the cumulative sweep.
pub fn match_all(images: &[ImageSample<'_>], cfg: &EvalConfig) -> Result<MatchedSet, MetricsError> {
    cfg.validate()?;
    let matches: Vec<ImageMatch> = images
        .par_iter()
        .map(|img| match_detections(img.dets, img.gts, cfg))
        .collect::<Result<_, _>>()?;

    let num_gt: usize = matches.iter().map(|m| m.num_gt).sum();
    let mut scored: Vec<(f64, bool)> = matches
        .iter()
        .flat_map(|m| m.labels.iter())
        .filter_map(|&(_, score, label)| match label {
            MatchLabel::TruePositive(_) => Some((score, true)),
            MatchLabel::FalsePositive => Some((score, false)),
            MatchLabel::Ignored => None,
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut sweep: Vec<SweepPoint> = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (k, &(score, is_tp)) in scored.iter().enumerate() {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        let group_ends = scored.get(k + 1).is_none_or(|next| next.0 != score);
        if group_ends {
            sweep.push(SweepPoint { score, tp, fp });
        }
    }
    Ok(MatchedSet {
        sweep,
        counts: EvalCounts {
            num_images: images.len(),
            num_gt,
            num_det: scored.len(),
            num_tp: tp,
            num_fp: fp,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissRateSummary {
    /// Geometric mean of the sampled miss rates; zero when any sample is zero.
    pub mr: f64,
    /// Same with every sample floored at `miss_rate_floor`.
    pub mr_clamped: f64,
    /// `(fppi, miss rate)` per sweep step.
    pub fppi_curve: Vec<(f64, f64)>,
    /// Miss rate sampled at each reference FPPI.
    pub samples: Vec<(f64, f64)>,
}

fn miss_rate_from(set: &MatchedSet, cfg: &EvalConfig) -> Result<MissRateSummary, MetricsError> {
    let c = set.counts;
    if c.num_gt == 0 {
        return Err(MetricsError::NoGroundTruth);
    }
    let images = c.num_images.max(1) as f64;
    let mut curve: Vec<(f64, f64)> = set
        .sweep
        .iter()
        .map(|p| (p.fp as f64 / images, 1.0 - p.tp as f64 / c.num_gt as f64))
        .collect();
    if curve.is_empty() {
        curve.push((0.0, 1.0));
    }

    let samples: Vec<(f64, f64)> = cfg
        .reference_fppi()
        .into_iter()
        .map(|reference| {
            // sweep order: fppi non-decreasing, miss rate non-increasing
            let miss = curve
                .iter()
                .rev()
                .find(|&&(f, _)| f <= reference)
                .unwrap_or(&curve[0])
                .1;
            (reference, miss)
        })
        .collect();

    let n = samples.len() as f64;
    let mean_log = |floor: f64| samples.iter().map(|&(_, m)| m.max(floor).ln()).sum::<f64>() / n;
    let mr = if samples.iter().any(|&(_, m)| m <= 0.0) {
        0.0
    } else {
        mean_log(0.0).exp()
    };
    Ok(MissRateSummary {
        mr,
        mr_clamped: mean_log(cfg.miss_rate_floor).exp(),
        fppi_curve: curve,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionSummary {
    pub ap: f64,
    /// `(recall, precision)` per sweep step.
    pub pr_curve: Vec<(f64, f64)>,
    /// Recall with every detection counted.
    pub recall: f64,
}

fn precision_from(set: &MatchedSet) -> Result<PrecisionSummary, MetricsError> {
    let num_gt = set.counts.num_gt;
    if num_gt == 0 {
        return Err(MetricsError::NoGroundTruth);
    }
    let pr_curve: Vec<(f64, f64)> = set
        .sweep
        .iter()
        .map(|p| (p.tp as f64 / num_gt as f64, p.tp as f64 / (p.tp + p.fp) as f64))
        .collect();
    // envelope: best precision at any recall >= r
    let mut envelope: Vec<f64> = pr_curve.iter().map(|&(_, p)| p).collect();
    for k in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (&(r, _), &p) in pr_curve.iter().zip(&envelope) {
        ap += (r - prev_recall) * p;
        prev_recall = r;
    }
    let recall = pr_curve.last().map_or(0.0, |&(r, _)| r);
    Ok(PrecisionSummary {
        ap: ap.clamp(0.0, 1.0),
        pr_curve,
        recall,
    })
}

/// Log-average miss rate over the configured FPPI range.
pub fn log_average_miss_rate(
    images: &[ImageSample<'_>],
    cfg: &EvalConfig,
) -> Result<MissRateSummary, MetricsError> {
    miss_rate_from(&match_all(images, cfg)?, cfg)
}

/// All-point interpolated AP.
pub fn average_precision(
    images: &[ImageSample<'_>],
    cfg: &EvalConfig,
) -> Result<PrecisionSummary, MetricsError> {
    precision_from(&match_all(images, cfg)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mr: f64,
    pub mr_clamped: f64,
    pub ap: f64,
    pub recall: f64,
    pub pr_curve: Vec<(f64, f64)>,
    pub fppi_curve: Vec<(f64, f64)>,
    pub counts: EvalCounts,
}

/// Miss rate, AP and recall from a single matching pass.
pub fn evaluate(images: &[ImageSample<'_>], cfg: &EvalConfig) -> Result<EvalReport, MetricsError> {
    let set = match_all(images, cfg)?;
    let mr = miss_rate_from(&set, cfg)?;
    let pr = precision_from(&set)?;
    Ok(EvalReport {
        mr: mr.mr,
        mr_clamped: mr.mr_clamped,
        ap: pr.ap,
        recall: pr.recall,
        pr_curve: pr.pr_curve,
        fppi_curve: mr.fppi_curve,
        counts: set.counts,
    })
}

/// Writes a curve as one `x y` pair per line.
pub fn write_curve<W: Write>(mut out: W, curve: &[(f64, f64)]) -> io::Result<()> {
    for &(x, y) in curve {
        writeln!(out, "{x} {y}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BBox, PairedBox};

    fn person(x: f64) -> PairedBox {
        let full = BBox::new(x, 0.0, x + 40.0, 100.0).unwrap();
        let vis = BBox::new(x, 0.0, x + 40.0, 50.0).unwrap();
        PairedBox::new(full, vis)
    }

    fn gt(id: u64, x: f64) -> GroundTruthEntry {
        GroundTruthEntry::new(id, person(x))
    }

    fn det(id: u64, x: f64, score: f64) -> Detection {
        Detection::new(id, person(x), score)
    }

    #[test]
    fn perfect_detections_are_all_tp() {
        let gts = [gt(0, 0.0), gt(1, 100.0)];
        let dets = [det(0, 0.0, 1.0), det(1, 100.0, 1.0)];
        let m = match_detections(&dets, &gts, &EvalConfig::default()).unwrap();
        assert!(m.labels.iter().all(|l| matches!(l.2, MatchLabel::TruePositive(_))));
        assert_eq!(m.num_gt, 2);
        let r = evaluate(&[ImageSample { dets: &dets, gts: &gts }], &EvalConfig::default()).unwrap();
        assert_eq!((r.recall, r.ap, r.mr), (1.0, 1.0, 0.0));
        assert!((r.mr_clamped - 1e-10).abs() < 1e-22);
    }

    #[test]
    fn no_detections() {
        let gts = [gt(0, 0.0)];
        let m = match_detections(&[], &gts, &EvalConfig::default()).unwrap();
        assert!(m.labels.is_empty());
        let r = evaluate(&[ImageSample { dets: &[], gts: &gts }], &EvalConfig::default()).unwrap();
        assert_eq!((r.mr, r.ap, r.recall), (1.0, 0.0, 0.0));
        assert_eq!(r.counts.num_tp + r.counts.num_fp, 0);
    }

    #[test]
    fn double_detection_counts_once() {
        let gts = [gt(0, 0.0)];
        let dets = [det(0, 0.0, 0.8), det(1, 2.0, 0.9)];
        let m = match_detections(&dets, &gts, &EvalConfig::default()).unwrap();
        assert_eq!(
            m.labels,
            vec![(1, 0.9, MatchLabel::TruePositive(0)), (0, 0.8, MatchLabel::FalsePositive)]
        );
    }

    #[test]
    fn prefers_highest_iou_gt() {
        let gts = [gt(0, 0.0), gt(1, 10.0)];
        let dets = [det(0, 9.0, 0.9)];
        let m = match_detections(&dets, &gts, &EvalConfig::default()).unwrap();
        assert_eq!(m.labels[0].2, MatchLabel::TruePositive(1));
    }

    #[test]
    fn ignored_and_filtered_ground_truth() {
        let gts = [gt(0, 0.0).ignored(), gt(1, 200.0)];
        let dets = [det(0, 1.0, 0.9), det(1, 500.0, 0.8)];
        let m = match_detections(&dets, &gts, &EvalConfig::default()).unwrap();
        assert_eq!(m.labels[0].2, MatchLabel::Ignored);
        assert_eq!(m.labels[1].2, MatchLabel::FalsePositive);
        assert_eq!(m.num_gt, 1);

        let tall = EvalConfig {
            min_height: 150.0,
            ..EvalConfig::default()
        };
        assert_eq!(match_detections(&dets, &gts, &tall).unwrap().num_gt, 0);

        // visibility of these people is 0.5
        let reasonable = EvalConfig {
            visibility_band: Some(EvalConfig::REASONABLE),
            ..EvalConfig::default()
        };
        assert_eq!(match_detections(&dets, &gts, &reasonable).unwrap().num_gt, 0);
        let heavy = EvalConfig {
            visibility_band: Some(EvalConfig::HEAVY_OCCLUSION),
            ..EvalConfig::default()
        };
        assert_eq!(match_detections(&dets, &gts, &heavy).unwrap().num_gt, 1);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dets = [det(4, 0.0, 0.9), det(4, 1.0, 0.8)];
        assert_eq!(
            match_detections(&dets, &[], &EvalConfig::default()),
            Err(MetricsError::DuplicateDetectionId { id: 4 })
        );
    }

    #[test]
    fn visibility_examples() {
        let full = BBox::new(0.0, 0.0, 40.0, 100.0).unwrap();
        assert_eq!(visibility(&GroundTruthEntry::new(0, PairedBox::unoccluded(full))).unwrap(), 1.0);
        let empty = BBox::new(10.0, 10.0, 10.0, 10.0).unwrap();
        assert_eq!(visibility(&GroundTruthEntry::new(0, PairedBox::new(full, empty))).unwrap(), 0.0);
        assert_eq!(visibility(&gt(0, 0.0)).unwrap(), 0.5);
        let flat = BBox::new(0.0, 0.0, 40.0, 0.0).unwrap();
        assert!(visibility(&GroundTruthEntry::new(3, PairedBox::unoccluded(flat))).is_err());
    }

    #[test]
    fn staircase_miss_rate() {
        let gts = [gt(0, 0.0), gt(1, 100.0)];
        let dets = [det(0, 0.0, 0.9), det(1, 300.0, 0.8)];
        let s = log_average_miss_rate(&[ImageSample { dets: &dets, gts: &gts }], &EvalConfig::default())
            .unwrap();
        assert_eq!(s.fppi_curve, vec![(0.0, 0.5), (1.0, 0.5)]);
        assert!((s.mr - 0.5).abs() < 1e-12);
        assert_eq!(s.samples.len(), 9);
    }

    #[test]
    fn reference_points_are_log_spaced() {
        let refs = EvalConfig::default().reference_fppi();
        assert!((refs[0] - 0.01).abs() < 1e-15);
        assert!((refs[4] - 0.1).abs() < 1e-12);
        assert!((refs[8] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn curve_extension_before_first_sample() {
        // 1 image; the top detection is a FP, so the first fppi is 1 > every reference below 1
        let gts = [gt(0, 0.0)];
        let dets = [det(0, 500.0, 0.9), det(1, 0.0, 0.8)];
        let s = log_average_miss_rate(&[ImageSample { dets: &dets, gts: &gts }], &EvalConfig::default())
            .unwrap();
        assert_eq!(s.fppi_curve, vec![(1.0, 1.0), (1.0, 0.0)]);
        let misses: Vec<f64> = s.samples.iter().map(|p| p.1).collect();
        assert_eq!(&misses[..8], &[1.0; 8]);
        assert_eq!(misses[8], 0.0);
        assert_eq!(s.mr, 0.0);
        let expected = (8.0 * 0.0 + (1e-10f64).ln()) / 9.0;
        assert!((s.mr_clamped - expected.exp()).abs() < 1e-15);
    }

    #[test]
    fn ap_fixtures() {
        let gts = [gt(0, 0.0)];
        let good = [det(0, 0.0, 0.9), det(1, 300.0, 0.8)];
        let p = average_precision(&[ImageSample { dets: &good, gts: &gts }], &EvalConfig::default())
            .unwrap();
        assert_eq!((p.ap, p.recall), (1.0, 1.0));
        let swapped = [det(0, 0.0, 0.8), det(1, 300.0, 0.9)];
        let p = average_precision(&[ImageSample { dets: &swapped, gts: &gts }], &EvalConfig::default())
            .unwrap();
        assert_eq!((p.ap, p.recall), (0.5, 1.0));
        assert_eq!(p.pr_curve, vec![(0.0, 0.0), (1.0, 0.5)]);
        let all_fp = [det(0, 300.0, 0.9)];
        let p = average_precision(&[ImageSample { dets: &all_fp, gts: &gts }], &EvalConfig::default())
            .unwrap();
        assert_eq!(p.ap, 0.0);
    }

    #[test]
    fn zero_ground_truth_is_an_error() {
        let dets = [det(0, 0.0, 0.9)];
        let images = [ImageSample { dets: &dets, gts: &[] }];
        assert_eq!(
            log_average_miss_rate(&images, &EvalConfig::default()),
            Err(MetricsError::NoGroundTruth)
        );
        assert_eq!(
            average_precision(&images, &EvalConfig::default()),
            Err(MetricsError::NoGroundTruth)
        );
    }

    #[test]
    fn visible_selector_matches_visible_boxes() {
        let full = BBox::new(0.0, 0.0, 40.0, 100.0).unwrap();
        let g = [GroundTruthEntry::new(0, PairedBox::new(full, BBox::new(0.0, 0.0, 40.0, 30.0).unwrap()))];
        // same full box, visible box far off
        let d = [Detection::new(0, PairedBox::new(full, BBox::new(0.0, 60.0, 40.0, 100.0).unwrap()), 0.9)];
        let vis = EvalConfig {
            box_selector: BoxSelector::Visible,
            ..EvalConfig::default()
        };
        assert_eq!(match_detections(&d, &g, &EvalConfig::default()).unwrap().labels[0].2, MatchLabel::TruePositive(0));
        assert_eq!(match_detections(&d, &g, &vis).unwrap().labels[0].2, MatchLabel::FalsePositive);
    }

    #[test]
    fn curve_text_format() {
        let mut buf = Vec::new();
        write_curve(&mut buf, &[(0.0, 0.5), (1.0, 0.25)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "0 0.5\n1 0.25\n");
    }
}
