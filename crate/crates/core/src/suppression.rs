//! The NMS family over paired detections.
//!
//! Every greedy variant shares one scan: detections are ranked by score
//! (descending, ties by ascending id unless a seeded shuffle is requested),
//! then each surviving detection suppresses every lower-ranked one whose
//! overlap is strictly greater than the threshold. The variants differ only
//! in which box the overlap is measured on and where the threshold comes from:
//!
//! * greedy full-box NMS: IoU of full boxes against `threshold`;
//! * visible-region NMS ([`r2_nms`]): IoU of visible boxes against `threshold`,
//!   while the kept detections still carry both boxes;
//! * adaptive NMS: full-box IoU against `max(threshold, density)` of the
//!   suppressing detection.
//!
//! Soft-NMS rescales scores instead of removing detections, see [`soft_nms`].

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, BoxSelector, PairedBox};

pub type DetectionId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub pair: PairedBox,
    pub score: f64,
    pub id: DetectionId,
}

impl Detection {
    pub fn new(id: DetectionId, pair: PairedBox, score: f64) -> Self {
        Self { pair, score, id }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SuppressionError {
    #[error("detection {id} has a non-finite score")]
    NonFiniteScore { id: DetectionId },
    #[error("detection {id} has score {score} outside [0, 1]")]
    ScoreOutOfRange { id: DetectionId, score: f64 },
    #[error("detection id {id} appears more than once")]
    DuplicateId { id: DetectionId },
    #[error("no density supplied for detection {id}")]
    MissingDensity { id: DetectionId },
    #[error("density {density} for detection {id} is outside [0, 1]")]
    DensityOutOfRange { id: DetectionId, density: f64 },
    #[error("invalid NMS configuration: {0}")]
    InvalidConfig(String),
    #[error("method {0} cannot be run through this entry point")]
    WrongMethod(NmsMethod),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NmsMethod {
    GreedyFull,
    /// Greedy suppression on visible boxes.
    GreedyVisible,
    SoftLinear,
    SoftGaussian,
    Adaptive,
}

impl NmsMethod {
    pub const ALL: [NmsMethod; 5] = [
        NmsMethod::GreedyFull,
        NmsMethod::GreedyVisible,
        NmsMethod::SoftLinear,
        NmsMethod::SoftGaussian,
        NmsMethod::Adaptive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NmsMethod::GreedyFull => "greedy-full",
            NmsMethod::GreedyVisible => "r2",
            NmsMethod::SoftLinear => "soft-linear",
            NmsMethod::SoftGaussian => "soft-gaussian",
            NmsMethod::Adaptive => "adaptive",
        }
    }

    pub fn is_greedy(self) -> bool {
        !matches!(self, NmsMethod::SoftLinear | NmsMethod::SoftGaussian)
    }
}

impl fmt::Display for NmsMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown NMS method {0:?} (expected greedy-full, r2, soft-linear, soft-gaussian or adaptive)")]
pub struct UnknownMethod(pub String);

impl FromStr for NmsMethod {
    type Err = UnknownMethod;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy-full" | "greedy" | "nms" => Ok(NmsMethod::GreedyFull),
            "r2" | "r2nms" | "greedy-visible" => Ok(NmsMethod::GreedyVisible),
            "soft-linear" => Ok(NmsMethod::SoftLinear),
            "soft-gaussian" => Ok(NmsMethod::SoftGaussian),
            "adaptive" => Ok(NmsMethod::Adaptive),
            other => Err(UnknownMethod(other.to_string())),
        }
    }
}

/// How equal scores are ordered before the scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    /// Ascending id.
    #[default]
    ById,
    /// Seeded random order among equal scores.
    Shuffle(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmsConfig {
    pub threshold: f64,
    pub method: NmsMethod,
    /// Gaussian soft-NMS spread; the decay is `exp(-iou^2 / sigma)`.
    pub soft_sigma: f64,
    /// Soft-NMS drops detections whose rescored value falls below this.
    pub score_floor: f64,
    pub tie_break: TieBreak,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            method: NmsMethod::GreedyVisible,
            soft_sigma: 0.5,
            score_floor: 0.001,
            tie_break: TieBreak::ById,
        }
    }
}

impl NmsConfig {
    pub fn new(method: NmsMethod, threshold: f64) -> Self {
        Self {
            threshold,
            method,
            ..Self::default()
        }
    }

    pub fn with_tie_break(mut self, tie_break: TieBreak) -> Self {
        self.tie_break = tie_break;
        self
    }

    pub fn validate(&self) -> Result<(), SuppressionError> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(SuppressionError::InvalidConfig(format!(
                "threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        if !(self.soft_sigma > 0.0 && self.soft_sigma.is_finite()) {
            return Err(SuppressionError::InvalidConfig(format!(
                "soft_sigma must be positive, got {}",
                self.soft_sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.score_floor) {
            return Err(SuppressionError::InvalidConfig(format!(
                "score_floor {} outside [0, 1]",
                self.score_floor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suppression {
    pub id: DetectionId,
    pub by: DetectionId,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SuppressionResult {
    /// Survivors in rank order.
    pub kept: Vec<Detection>,
    /// Removed detections in rank order, each with the first survivor that removed it.
    pub suppressed: Vec<Suppression>,
}

impl SuppressionResult {
    pub fn kept_ids(&self) -> Vec<DetectionId> {
        self.kept.iter().map(|d| d.id).collect()
    }
}

fn validate_detections(dets: &[Detection]) -> Result<(), SuppressionError> {
    let mut seen = HashSet::with_capacity(dets.len());
    for d in dets {
        if !d.score.is_finite() {
            return Err(SuppressionError::NonFiniteScore { id: d.id });
        }
        if !(0.0..=1.0).contains(&d.score) {
            return Err(SuppressionError::ScoreOutOfRange {
                id: d.id,
                score: d.score,
            });
        }
        if !seen.insert(d.id) {
            return Err(SuppressionError::DuplicateId { id: d.id });
        }
    }
    Ok(())
}

/// Indices of `dets` in descending score order.
pub fn rank_order(dets: &[Detection], tie_break: TieBreak) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    match tie_break {
        TieBreak::ById => order.sort_by(|&a, &b| {
            dets[b]
                .score
                .total_cmp(&dets[a].score)
                .then(dets[a].id.cmp(&dets[b].id))
        }),
        TieBreak::Shuffle(seed) => {
            // id sort first so the shuffle does not depend on input order
            order.sort_by_key(|&i| dets[i].id);
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
        }
    }
    order
}

fn greedy_scan<O, T>(
    dets: &[Detection],
    tie_break: TieBreak,
    overlap: O,
    threshold_of: T,
) -> SuppressionResult
where
    O: Fn(&Detection, &Detection) -> f64,
    T: Fn(&Detection) -> f64,
{
    let order = rank_order(dets, tie_break);
    let n = order.len();
    let mut suppressor: Vec<Option<DetectionId>> = vec![None; n];
    for i in 0..n {
        if suppressor[i].is_some() {
            continue;
        }
        let top = &dets[order[i]];
        let limit = threshold_of(top);
        for j in i + 1..n {
            if suppressor[j].is_some() {
                continue;
            }
            let other = &dets[order[j]];
            if overlap(top, other) > limit {
                suppressor[j] = Some(top.id);
            }
        }
    }
    let mut result = SuppressionResult::default();
    for (rank, by) in suppressor.into_iter().enumerate() {
        let d = dets[order[rank]];
        match by {
            None => result.kept.push(d),
            Some(by) => result.suppressed.push(Suppression { id: d.id, by }),
        }
    }
    result
}

/// Classical greedy NMS on the selected box of each pair.
pub fn greedy_nms(
    dets: &[Detection],
    cfg: &NmsConfig,
    selector: BoxSelector,
) -> Result<SuppressionResult, SuppressionError> {
    cfg.validate()?;
    validate_detections(dets)?;
    Ok(greedy_scan(
        dets,
        cfg.tie_break,
        |a, b| iou(a.pair.select(selector), b.pair.select(selector)),
        |_| cfg.threshold,
    ))
}

/// Visible-region NMS: overlap is the IoU of the visible boxes, survivors
/// are reported as full pairs. `cfg.method` is not consulted.
pub fn r2_nms(
    dets: &[Detection],
    cfg: &NmsConfig,
) -> Result<SuppressionResult, SuppressionError> {
    greedy_nms(dets, cfg, BoxSelector::Visible)
}

/// Greedy full-box NMS where detection `i`, when suppressing, uses the
/// threshold `max(cfg.threshold, density_i)`.
pub fn adaptive_nms(
    dets: &[Detection],
    densities: &HashMap<DetectionId, f64>,
    cfg: &NmsConfig,
) -> Result<SuppressionResult, SuppressionError> {
    cfg.validate()?;
    validate_detections(dets)?;
    for d in dets {
        match densities.get(&d.id) {
            None => return Err(SuppressionError::MissingDensity { id: d.id }),
            Some(&density) if !(0.0..=1.0).contains(&density) => {
                return Err(SuppressionError::DensityOutOfRange { id: d.id, density })
            }
            Some(_) => {}
        }
    }
    Ok(greedy_scan(
        dets,
        cfg.tie_break,
        |a, b| iou(&a.pair.full, &b.pair.full),
        |top| cfg.threshold.max(densities[&top.id]),
    ))
}

/// Soft-NMS on full boxes. Repeatedly takes the highest current score and
/// decays the rest by their overlap with it: linear `s * (1 - iou)` when
/// `iou > threshold`, gaussian `s * exp(-iou^2 / sigma)`. Detections whose
/// rescored value drops below `score_floor` are discarded. Output is in
/// selection order, i.e. non-increasing rescored value.
pub fn soft_nms(
    dets: &[Detection],
    cfg: &NmsConfig,
) -> Result<Vec<(Detection, f64)>, SuppressionError> {
    let gaussian = match cfg.method {
        NmsMethod::SoftLinear => false,
        NmsMethod::SoftGaussian => true,
        other => return Err(SuppressionError::WrongMethod(other)),
    };
    cfg.validate()?;
    validate_detections(dets)?;

    let order = rank_order(dets, cfg.tie_break);
    // (detection index, current score), kept in rank order so ties stay stable
    let mut pool: Vec<(usize, f64)> = order.iter().map(|&i| (i, dets[i].score)).collect();
    pool.retain(|&(_, s)| s >= cfg.score_floor);
    let mut out = Vec::with_capacity(pool.len());
    while !pool.is_empty() {
        let mut best = 0;
        for k in 1..pool.len() {
            if pool[k].1 > pool[best].1 {
                best = k;
            }
        }
        let (top_idx, top_score) = pool.remove(best);
        let top = dets[top_idx];
        for entry in pool.iter_mut() {
            let overlap = iou(&top.pair.full, &dets[entry.0].pair.full);
            if gaussian {
                entry.1 *= (-(overlap * overlap) / cfg.soft_sigma).exp();
            } else if overlap > cfg.threshold {
                entry.1 *= 1.0 - overlap;
            }
        }
        pool.retain(|&(_, s)| s >= cfg.score_floor);
        out.push((top, top_score));
    }
    Ok(out)
}

/// Outcome of [`suppress`]: greedy methods report removals, soft methods rescored survivors.
#[derive(Debug, Clone, PartialEq)]
pub enum SuppressOutcome {
    Greedy(SuppressionResult),
    Soft(Vec<(Detection, f64)>),
}

impl SuppressOutcome {
    /// Surviving detections; soft survivors carry their rescored value as score.
    pub fn survivors(&self) -> Vec<Detection> {
        match self {
            SuppressOutcome::Greedy(r) => r.kept.clone(),
            SuppressOutcome::Soft(v) => v
                .iter()
                .map(|(d, s)| Detection { score: *s, ..*d })
                .collect(),
        }
    }

    pub fn kept_count(&self) -> usize {
        match self {
            SuppressOutcome::Greedy(r) => r.kept.len(),
            SuppressOutcome::Soft(v) => v.len(),
        }
    }
}

/// Dispatches on `cfg.method`. `densities` is required for adaptive NMS only.
pub fn suppress(
    dets: &[Detection],
    cfg: &NmsConfig,
    densities: Option<&HashMap<DetectionId, f64>>,
) -> Result<SuppressOutcome, SuppressionError> {
    match cfg.method {
        NmsMethod::GreedyFull => greedy_nms(dets, cfg, BoxSelector::Full).map(SuppressOutcome::Greedy),
        NmsMethod::GreedyVisible => r2_nms(dets, cfg).map(SuppressOutcome::Greedy),
        NmsMethod::SoftLinear | NmsMethod::SoftGaussian => soft_nms(dets, cfg).map(SuppressOutcome::Soft),
        NmsMethod::Adaptive => {
            let empty = HashMap::new();
            adaptive_nms(dets, densities.unwrap_or(&empty), cfg).map(SuppressOutcome::Greedy)
        }
    }
}

/// Per-box crowd density in the adaptive-NMS sense: the largest full-box
/// IoU with any other box of the same image.
pub fn max_overlap_densities(pairs: &[(DetectionId, PairedBox)]) -> HashMap<DetectionId, f64> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, (id, p))| {
            let density = pairs
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, (_, q))| iou(&p.full, &q.full))
                .fold(0.0, f64::max);
            (*id, density)
        })
        .collect()
}
