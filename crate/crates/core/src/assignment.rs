//! Paired ground-truth assignment for anchors and proposals, and the dense
//! anchor grid shared by the full and visible branches.
//!
//! An anchor `A` is positive for a ground-truth pair `(F, V)` when
//! `iou(A, F) >= alpha1` and `iof(A, V) >= beta1`. A proposal pair
//! `(Pf, Pv)` is positive when `iou(Pf, F) >= alpha2` and
//! `iou(Pv, V) >= beta2`. Among qualifying ground truths the one with the
//! highest full-box IoU wins, ties going to the smaller id. Candidates
//! whose best full-box IoU is below `negative_iou_max` are negative, the
//! rest are ignored.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iof, iou, BBox, PairedBox};

pub type GroundTruthId = u64;

/// An annotated pedestrian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthEntry {
    pub pair: PairedBox,
    pub ignore: bool,
    pub id: GroundTruthId,
    /// The annotation had no visible box; `pair.visible` then mirrors `pair.full`.
    #[serde(default)]
    pub visible_missing: bool,
}

impl GroundTruthEntry {
    pub fn new(id: GroundTruthId, pair: PairedBox) -> Self {
        Self {
            pair,
            ignore: false,
            id,
            visible_missing: false,
        }
    }

    pub fn ignored(mut self) -> Self {
        self.ignore = true;
        self
    }

    /// Annotation sanity: visible box inside the full box and not larger than it.
    pub fn looks_consistent(&self) -> bool {
        self.visible_missing
            || (self.pair.visible_inside_full() && self.pair.visible.area() <= self.pair.full.area())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssignmentError {
    #[error("invalid assignment configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid anchor grid: {0}")]
    InvalidGrid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssignmentConfig {
    pub alpha1: f64,
    pub beta1: f64,
    pub alpha2: f64,
    pub beta2: f64,
    pub negative_iou_max: f64,
    /// Give every non-ignored ground truth its best anchor as a positive,
    /// even when the thresholds are not met. Anchor rule only.
    pub best_match_fallback: bool,
}

impl Default for AssignmentConfig {
    fn default() -> Self {
        Self {
            alpha1: 0.7,
            beta1: 0.7,
            alpha2: 0.5,
            beta2: 0.5,
            negative_iou_max: 0.3,
            best_match_fallback: true,
        }
    }
}

impl AssignmentConfig {
    pub fn validate(&self) -> Result<(), AssignmentError> {
        let fields = [
            ("alpha1", self.alpha1),
            ("beta1", self.beta1),
            ("alpha2", self.alpha2),
            ("beta2", self.beta2),
            ("negative_iou_max", self.negative_iou_max),
        ];
        for (name, v) in fields {
            if !(0.0..=1.0).contains(&v) {
                return Err(AssignmentError::InvalidConfig(format!(
                    "{name} = {v} outside [0, 1]"
                )));
            }
        }
        if self.negative_iou_max >= self.alpha1 {
            return Err(AssignmentError::InvalidConfig(format!(
                "negative_iou_max {} must be below alpha1 {}",
                self.negative_iou_max, self.alpha1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive(GroundTruthId),
    Negative,
    Ignore,
}

impl Label {
    pub fn is_positive(self) -> bool {
        matches!(self, Label::Positive(_))
    }
}

/// One label per candidate, in candidate order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AssignmentResult {
    pub labels: Vec<Label>,
}

impl AssignmentResult {
    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|l| l.is_positive()).count()
    }

    pub fn negatives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == Label::Negative).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorGridSpec {
    pub strides: Vec<f64>,
    /// Anchor side lengths in pixels (anchor area is `scale^2`).
    pub scales: Vec<f64>,
    /// Width / height.
    pub aspect_ratios: Vec<f64>,
    /// `(width, height)` in pixels.
    pub image_size: (f64, f64),
}

impl AnchorGridSpec {
    pub const DEFAULT_RATIOS: [f64; 3] = [0.5, 1.0, 2.0];

    pub fn new(strides: Vec<f64>, scales: Vec<f64>, image_size: (f64, f64)) -> Self {
        Self {
            strides,
            scales,
            aspect_ratios: Self::DEFAULT_RATIOS.to_vec(),
            image_size,
        }
    }
}

/// Anchors centred on the stride lattice `((i + 0.5) * stride, (j + 0.5) * stride)`.
///
/// Ordering is stride-major; within one stride positions run row-major, and
/// at each position the aspect ratio varies slowest, then the scale. An
/// anchor of scale `s` and ratio `r` has width `s * sqrt(r)` and height
/// `s / sqrt(r)`.
pub fn generate_anchors(spec: &AnchorGridSpec) -> Result<Vec<BBox>, AssignmentError> {
    if spec.strides.is_empty() || spec.scales.is_empty() || spec.aspect_ratios.is_empty() {
        return Err(AssignmentError::InvalidGrid(
            "strides, scales and aspect ratios must be non-empty".into(),
        ));
    }
    let positive = |v: &f64| *v > 0.0 && v.is_finite();
    if !spec.strides.iter().all(positive)
        || !spec.scales.iter().all(positive)
        || !spec.aspect_ratios.iter().all(positive)
    {
        return Err(AssignmentError::InvalidGrid("all grid entries must be positive".into()));
    }
    let (width, height) = spec.image_size;
    if !(width > 0.0 && height > 0.0) {
        return Err(AssignmentError::InvalidGrid(format!(
            "image size must be positive, got {width}x{height}"
        )));
    }

    let mut anchors = Vec::new();
    for &stride in &spec.strides {
        let cols = (width / stride).ceil() as usize;
        let rows = (height / stride).ceil() as usize;
        for row in 0..rows {
            let cy = (row as f64 + 0.5) * stride;
            for col in 0..cols {
                let cx = (col as f64 + 0.5) * stride;
                for &ratio in &spec.aspect_ratios {
                    let root = ratio.sqrt();
                    for &scale in &spec.scales {
                        let anchor = BBox::from_center(cx, cy, scale * root, scale / root)
                            .expect("positive finite anchor extents");
                        anchors.push(anchor);
                    }
                }
            }
        }
    }
    Ok(anchors)
}

struct BestMatch {
    /// Best full-box IoU over all ground truths and its owner.
    max_iou: f64,
    max_owner: Option<usize>,
    /// Best qualifying ground truth.
    qualified: Option<usize>,
}

fn best_match<Q>(full: &BBox, gts: &[GroundTruthEntry], qualifies: Q) -> BestMatch
where
    Q: Fn(&GroundTruthEntry, f64) -> bool,
{
    let mut best = BestMatch {
        max_iou: 0.0,
        max_owner: None,
        qualified: None,
    };
    let mut qualified_iou = f64::NEG_INFINITY;
    let better = |v: f64, cur: f64, id: u64, cur_id: Option<u64>| {
        v > cur || (v == cur && cur_id.is_some_and(|c| id < c))
    };
    for (k, gt) in gts.iter().enumerate() {
        let overlap = iou(full, &gt.pair.full);
        if best.max_owner.is_none() || better(overlap, best.max_iou, gt.id, best.max_owner.map(|o| gts[o].id)) {
            best.max_iou = overlap;
            best.max_owner = Some(k);
        }
        if qualifies(gt, overlap)
            && (best.qualified.is_none()
                || better(overlap, qualified_iou, gt.id, best.qualified.map(|o| gts[o].id)))
        {
            qualified_iou = overlap;
            best.qualified = Some(k);
        }
    }
    best
}

fn label_from(best: &BestMatch, gts: &[GroundTruthEntry], negative_iou_max: f64) -> Label {
    if let Some(k) = best.qualified {
        return if gts[k].ignore {
            Label::Ignore
        } else {
            Label::Positive(gts[k].id)
        };
    }
    if best.max_iou < negative_iou_max {
        Label::Negative
    } else {
        Label::Ignore
    }
}

/// Labels anchors with the paired IoU/IoF rule.
pub fn assign_anchors(
    anchors: &[BBox],
    gts: &[GroundTruthEntry],
    cfg: &AssignmentConfig,
) -> Result<AssignmentResult, AssignmentError> {
    cfg.validate()?;
    let mut labels: Vec<Label> = anchors
        .iter()
        .map(|a| {
            let best = best_match(a, gts, |gt, full_iou| {
                full_iou >= cfg.alpha1 && iof(a, &gt.pair.visible) >= cfg.beta1
            });
            label_from(&best, gts, cfg.negative_iou_max)
        })
        .collect();

    if cfg.best_match_fallback {
        for gt in gts.iter().filter(|g| !g.ignore) {
            if labels.contains(&Label::Positive(gt.id)) {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for (k, a) in anchors.iter().enumerate() {
                let overlap = iou(a, &gt.pair.full);
                if overlap > 0.0 && best.is_none_or(|(_, b)| overlap > b) {
                    best = Some((k, overlap));
                }
            }
            if let Some((k, _)) = best {
                if !labels[k].is_positive() {
                    labels[k] = Label::Positive(gt.id);
                }
            }
        }
    }
    Ok(AssignmentResult { labels })
}

/// Labels proposal pairs with the paired IoU/IoU rule.
pub fn assign_proposals(
    proposals: &[PairedBox],
    gts: &[GroundTruthEntry],
    cfg: &AssignmentConfig,
) -> Result<AssignmentResult, AssignmentError> {
    cfg.validate()?;
    let labels = proposals
        .iter()
        .map(|p| {
            let best = best_match(&p.full, gts, |gt, full_iou| {
                full_iou >= cfg.alpha2 && iou(&p.visible, &gt.pair.visible) >= cfg.beta2
            });
            label_from(&best, gts, cfg.negative_iou_max)
        })
        .collect();
    Ok(AssignmentResult { labels })
}
