//! Synthetic crowd scenes with depth occlusion, a paired-detector noise
//! model, and the perfect-detector suppression experiment.
//!
//! People are integer-aligned rectangles. A person's visible region is its
//! full box minus the union of the full boxes of everyone in front of it,
//! computed on the 1-pixel raster of the full box; the visible box is the
//! tight bounding box of what remains.
//!
//! Scenes are pure functions of their spec. Scene `k` of a batch uses seed
//! `spec.seed + k`.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::GroundTruthEntry;
use crate::geometry::{iou, BBox, PairedBox};
use crate::suppression::{
    max_overlap_densities, suppress, Detection, NmsConfig, NmsMethod, SuppressionError, TieBreak,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("person of {w}x{h} px does not fit in a {iw}x{ih} image")]
    PersonTooLarge { w: u32, h: u32, iw: u32, ih: u32 },
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
    #[error(transparent)]
    Suppression(#[from] SuppressionError),
}

/// How people are spread over the image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    /// Gaussian scatter around `clusters` random centres; `spread` is the
    /// standard deviation in pixels of horizontal offsets (a third of it vertically).
    Clustered { clusters: usize, spread: f64 },
    /// `rows` horizontal lines of people standing on a shared foot line,
    /// each row in its own horizontal band. Consecutive people are offset by
    /// a gap drawn uniformly from `gap` (fractions of the person width).
    Queue { rows: usize, gap: (f64, f64) },
    /// One person per lattice cell, no overlaps.
    Grid,
}

/// Front-to-back ordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepthOrder {
    Random,
    /// Lower foot line (larger `y2`) is closer; on equal foot lines the
    /// person further right is closer.
    Footline,
    /// Explicit permutation of person indices, front first.
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrowdSceneSpec {
    /// `(width, height)` in pixels.
    pub image_size: (u32, u32),
    pub num_people: usize,
    /// `(mean, jitter)` of person height in pixels; heights are uniform in
    /// `mean +- jitter`, shared by the members of a queue row.
    pub person_height: (f64, f64),
    /// Width over height.
    pub aspect_ratio: f64,
    pub layout: Layout,
    pub depth_order: DepthOrder,
    /// Keep fully occluded people as ignored entries instead of dropping them.
    pub keep_fully_occluded: bool,
    pub seed: u64,
}

impl Default for CrowdSceneSpec {
    fn default() -> Self {
        Self {
            image_size: (800, 600),
            num_people: 20,
            person_height: (120.0, 30.0),
            aspect_ratio: 0.41,
            layout: Layout::Clustered {
                clusters: 4,
                spread: 40.0,
            },
            depth_order: DepthOrder::Footline,
            keep_fully_occluded: false,
            seed: 0,
        }
    }
}

impl CrowdSceneSpec {
    /// Three queues of eight people; neighbours overlap heavily in full
    /// boxes while their visible boxes stay apart.
    pub fn crowded(seed: u64) -> Self {
        Self {
            num_people: 24,
            person_height: (120.0, 20.0),
            layout: Layout::Queue {
                rows: 3,
                gap: (0.18, 0.38),
            },
            seed,
            ..Self::default()
        }
    }

    /// People on a lattice, no two boxes overlap.
    pub fn sparse(seed: u64) -> Self {
        Self {
            num_people: 12,
            person_height: (100.0, 20.0),
            layout: Layout::Grid,
            seed,
            ..Self::default()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<(), SceneError> {
        let (iw, ih) = self.image_size;
        if iw == 0 || ih == 0 {
            return Err(SceneError::InvalidSpec("image size must be positive".into()));
        }
        let (mean, jitter) = self.person_height;
        if !(mean > 0.0 && jitter >= 0.0 && jitter < mean && mean.is_finite() && jitter.is_finite()) {
            return Err(SceneError::InvalidSpec(format!(
                "person height needs 0 <= jitter < mean, got ({mean}, {jitter})"
            )));
        }
        if !(self.aspect_ratio > 0.0 && self.aspect_ratio.is_finite()) {
            return Err(SceneError::InvalidSpec("aspect ratio must be positive".into()));
        }
        let tallest = (mean + jitter).round() as u32;
        let widest = ((mean + jitter) * self.aspect_ratio).round().max(1.0) as u32;
        if !matches!(self.layout, Layout::Grid) && (tallest > ih || widest > iw) {
            return Err(SceneError::PersonTooLarge {
                w: widest,
                h: tallest,
                iw,
                ih,
            });
        }
        match &self.layout {
            Layout::Clustered { clusters, spread } => {
                if *clusters == 0 || spread.is_nan() || *spread < 0.0 {
                    return Err(SceneError::InvalidSpec(
                        "clustered layout needs clusters >= 1 and spread >= 0".into(),
                    ));
                }
            }
            Layout::Queue { rows, gap } => {
                if *rows == 0 || !(gap.0 >= 0.0 && gap.0 <= gap.1 && gap.1.is_finite()) {
                    return Err(SceneError::InvalidSpec(
                        "queue layout needs rows >= 1 and 0 <= gap.0 <= gap.1".into(),
                    ));
                }
                let band = ih / *rows as u32;
                if tallest > band {
                    return Err(SceneError::PersonTooLarge {
                        w: widest,
                        h: tallest,
                        iw,
                        ih: band,
                    });
                }
            }
            Layout::Grid => {}
        }
        if let DepthOrder::Explicit(order) = &self.depth_order {
            let mut sorted = order.clone();
            sorted.sort_unstable();
            if sorted != (0..self.num_people).collect::<Vec<_>>() {
                return Err(SceneError::InvalidSpec(
                    "explicit depth order must be a permutation of person indices".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Integer rectangle, half-open on the raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Rect {
    x1: i64,
    y1: i64,
    x2: i64,
    y2: i64,
}

impl Rect {
    fn to_bbox(self) -> BBox {
        BBox::new(self.x1 as f64, self.y1 as f64, self.x2 as f64, self.y2 as f64)
            .expect("ordered integer rectangle")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrowdScene {
    /// Surviving people in placement order; `id` is the placement index.
    pub gts: Vec<GroundTruthEntry>,
    pub spec: CrowdSceneSpec,
    /// People with no unoccluded pixel.
    pub fully_occluded: usize,
}

fn place_box(w: i64, h: i64, cx: f64, foot: f64, iw: i64, ih: i64) -> Rect {
    let x1 = ((cx - w as f64 / 2.0).round() as i64).clamp(0, (iw - w).max(0));
    let y2 = (foot.round() as i64).clamp(h.min(ih), ih);
    Rect {
        x1,
        y1: y2 - h,
        x2: x1 + w,
        y2,
    }
}

fn place_people(spec: &CrowdSceneSpec, rng: &mut ChaCha8Rng) -> Vec<Rect> {
    let (iw, ih) = (spec.image_size.0 as i64, spec.image_size.1 as i64);
    let (mean, jitter) = spec.person_height;
    let draw_height = |rng: &mut ChaCha8Rng| -> f64 {
        if jitter > 0.0 {
            rng.random_range(mean - jitter..=mean + jitter)
        } else {
            mean
        }
    };
    let size_of = |height: f64| -> (i64, i64) {
        let h = (height.round() as i64).max(1);
        let w = ((height * spec.aspect_ratio).round() as i64).max(1);
        (w, h)
    };
    let n = spec.num_people;
    let mut people = Vec::with_capacity(n);
    match &spec.layout {
        Layout::Clustered { clusters, spread } => {
            let centres: Vec<(f64, f64)> = (0..*clusters)
                .map(|_| (rng.random_range(0.0..iw as f64), rng.random_range(0.0..=ih as f64)))
                .collect();
            let dx = Normal::new(0.0, *spread).expect("finite spread");
            let dy = Normal::new(0.0, *spread / 3.0).expect("finite spread");
            for i in 0..n {
                let (w, h) = size_of(draw_height(rng));
                let (ccx, ccy) = centres[i % clusters];
                let cx = ccx + dx.sample(rng);
                let foot = ccy + dy.sample(rng);
                people.push(place_box(w, h, cx, foot, iw, ih));
            }
        }
        Layout::Queue { rows, gap } => {
            let band = ih / *rows as i64;
            for r in 0..*rows {
                let members = n / rows + usize::from(r < n % rows);
                if members == 0 {
                    continue;
                }
                let (w, h) = size_of(draw_height(rng));
                let gaps: Vec<i64> = (1..members)
                    .map(|_| (rng.random_range(gap.0..=gap.1) * w as f64).round() as i64)
                    .collect();
                let length = w + gaps.iter().sum::<i64>();
                let start = if length >= iw { 0 } else { rng.random_range(0..=iw - length) };
                let top = r as i64 * band + rng.random_range(0..=(band - h));
                let mut x = start;
                for k in 0..members {
                    if k > 0 {
                        x += gaps[k - 1];
                    }
                    let x1 = x.clamp(0, (iw - w).max(0));
                    people.push(Rect {
                        x1,
                        y1: top,
                        x2: x1 + w,
                        y2: top + h,
                    });
                }
            }
        }
        Layout::Grid => {
            let cols = (n as f64).sqrt().ceil().max(1.0) as i64;
            let grid_rows = (n as i64 + cols - 1) / cols.max(1);
            let cell_w = iw / cols.max(1);
            let cell_h = ih / grid_rows.max(1);
            for i in 0..n as i64 {
                let (w, h) = size_of(draw_height(rng));
                let (w, h) = (w.min(cell_w).max(1), h.min(cell_h).max(1));
                let (col, row) = (i % cols, i / cols);
                let x1 = col * cell_w + (cell_w - w) / 2;
                let y1 = row * cell_h + (cell_h - h) / 2;
                people.push(Rect {
                    x1,
                    y1,
                    x2: x1 + w,
                    y2: y1 + h,
                });
            }
        }
    }
    people
}

fn depth_permutation(spec: &CrowdSceneSpec, people: &[Rect], rng: &mut ChaCha8Rng) -> Vec<usize> {
    match &spec.depth_order {
        DepthOrder::Explicit(order) => order.clone(),
        DepthOrder::Random => {
            let mut order: Vec<usize> = (0..people.len()).collect();
            order.shuffle(rng);
            order
        }
        DepthOrder::Footline => {
            let mut order: Vec<usize> = (0..people.len()).collect();
            order.sort_by(|&a, &b| {
                people[b]
                    .y2
                    .cmp(&people[a].y2)
                    .then(people[b].x1.cmp(&people[a].x1))
                    .then(a.cmp(&b))
            });
            order
        }
    }
}

/// Tight box of the pixels of `target` not covered by any of `occluders`,
/// or `None` when nothing is left.
fn visible_remainder(target: Rect, occluders: &[Rect]) -> Option<Rect> {
    let w = (target.x2 - target.x1) as usize;
    let h = (target.y2 - target.y1) as usize;
    let mut covered = vec![false; w * h];
    for o in occluders {
        let x1 = o.x1.max(target.x1);
        let x2 = o.x2.min(target.x2);
        let y1 = o.y1.max(target.y1);
        let y2 = o.y2.min(target.y2);
        if x1 >= x2 || y1 >= y2 {
            continue;
        }
        for y in y1..y2 {
            let row = (y - target.y1) as usize * w;
            for x in x1..x2 {
                covered[row + (x - target.x1) as usize] = true;
            }
        }
    }
    let (mut min_c, mut min_r, mut max_c, mut max_r) = (usize::MAX, usize::MAX, 0, 0);
    for r in 0..h {
        for c in 0..w {
            if !covered[r * w + c] {
                min_c = min_c.min(c);
                max_c = max_c.max(c);
                min_r = min_r.min(r);
                max_r = max_r.max(r);
            }
        }
    }
    if min_c == usize::MAX {
        return None;
    }
    Some(Rect {
        x1: target.x1 + min_c as i64,
        y1: target.y1 + min_r as i64,
        x2: target.x1 + max_c as i64 + 1,
        y2: target.y1 + max_r as i64 + 1,
    })
}

fn scene_from_rects(spec: &CrowdSceneSpec, people: &[Rect], front_to_back: &[usize]) -> CrowdScene {
    let mut visible: Vec<Option<Rect>> = vec![None; people.len()];
    for (depth, &p) in front_to_back.iter().enumerate() {
        let occluders: Vec<Rect> = front_to_back[..depth].iter().map(|&q| people[q]).collect();
        visible[p] = visible_remainder(people[p], &occluders);
    }
    let mut gts = Vec::with_capacity(people.len());
    let mut fully_occluded = 0;
    for (i, rect) in people.iter().enumerate() {
        let full = rect.to_bbox();
        match visible[i] {
            Some(v) => gts.push(GroundTruthEntry::new(i as u64, PairedBox::new(full, v.to_bbox()))),
            None => {
                fully_occluded += 1;
                if spec.keep_fully_occluded {
                    let corner = BBox::new(full.x1(), full.y1(), full.x1(), full.y1()).expect("point box");
                    gts.push(GroundTruthEntry::new(i as u64, PairedBox::new(full, corner)).ignored());
                }
            }
        }
    }
    CrowdScene {
        gts,
        spec: spec.clone(),
        fully_occluded,
    }
}

/// Builds one scene.
pub fn generate_scene(spec: &CrowdSceneSpec) -> Result<CrowdScene, SceneError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let people = place_people(spec, &mut rng);
    let order = depth_permutation(spec, &people, &mut rng);
    Ok(scene_from_rects(spec, &people, &order))
}

/// Scenes `0..count`, scene `k` seeded with `spec.seed + k`.
pub fn generate_scenes(spec: &CrowdSceneSpec, count: usize) -> Result<Vec<CrowdScene>, SceneError> {
    (0..count as u64)
        .into_par_iter()
        .map(|k| generate_scene(&spec.with_seed(spec.seed.wrapping_add(k))))
        .collect()
}

/// Scene from explicit integer boxes `(x1, y1, x2, y2)` and front-to-back order.
pub fn scene_from_boxes(
    image_size: (u32, u32),
    boxes: &[[i64; 4]],
    front_to_back: &[usize],
) -> Result<CrowdScene, SceneError> {
    let people: Vec<Rect> = boxes
        .iter()
        .map(|&[x1, y1, x2, y2]| Rect { x1, y1, x2, y2 })
        .collect();
    if people.iter().any(|r| r.x1 >= r.x2 || r.y1 >= r.y2) {
        return Err(SceneError::InvalidSpec("boxes must have positive size".into()));
    }
    let spec = CrowdSceneSpec {
        image_size,
        num_people: boxes.len(),
        depth_order: DepthOrder::Explicit(front_to_back.to_vec()),
        ..CrowdSceneSpec::default()
    };
    if let DepthOrder::Explicit(order) = &spec.depth_order {
        let mut sorted = order.clone();
        sorted.sort_unstable();
        if sorted != (0..boxes.len()).collect::<Vec<_>>() {
            return Err(SceneError::InvalidSpec(
                "depth order must be a permutation of box indices".into(),
            ));
        }
    }
    Ok(scene_from_rects(&spec, &people, front_to_back))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Std of centre offsets as a fraction of each box's size.
    pub center_jitter: f64,
    /// Std of log-size changes.
    pub size_jitter: f64,
    /// Extra detections per person; the fractional part is a Bernoulli draw.
    pub duplicates_per_gt: f64,
    /// Background detections per image, same rounding rule.
    pub fp_per_image: f64,
    /// Uniform score band for detections of real people.
    pub tp_score: (f64, f64),
    /// Uniform score band for background detections.
    pub fp_score: (f64, f64),
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            center_jitter: 0.05,
            size_jitter: 0.05,
            duplicates_per_gt: 2.0,
            fp_per_image: 2.0,
            tp_score: (0.6, 1.0),
            fp_score: (0.05, 0.7),
            seed: 0,
        }
    }
}

impl NoiseModel {
    /// Exact copies of the ground truth, one per person.
    pub fn exact(seed: u64) -> Self {
        Self {
            center_jitter: 0.0,
            size_jitter: 0.0,
            duplicates_per_gt: 0.0,
            fp_per_image: 0.0,
            seed,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<(), SceneError> {
        let nonneg = |v: f64| v >= 0.0 && v.is_finite();
        if !(nonneg(self.center_jitter)
            && nonneg(self.size_jitter)
            && nonneg(self.duplicates_per_gt)
            && nonneg(self.fp_per_image))
        {
            return Err(SceneError::InvalidNoise("jitters and counts must be >= 0".into()));
        }
        for (name, (lo, hi)) in [("tp_score", self.tp_score), ("fp_score", self.fp_score)] {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return Err(SceneError::InvalidNoise(format!("{name} band must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

fn rounded_count(mean: f64, rng: &mut ChaCha8Rng) -> usize {
    let base = mean.floor();
    let frac = mean - base;
    base as usize + usize::from(frac > 0.0 && rng.random_bool(frac))
}

fn draw_score(band: (f64, f64), rng: &mut ChaCha8Rng) -> f64 {
    if band.0 == band.1 {
        band.0
    } else {
        rng.random_range(band.0..=band.1)
    }
}

/// Same relative offset and scale for any box.
#[derive(Debug, Clone, Copy)]
struct Jitter {
    dx: f64,
    dy: f64,
    dw: f64,
    dh: f64,
}

impl Jitter {
    fn apply(&self, b: &BBox, iw: f64, ih: f64) -> BBox {
        let (w, h) = (b.width(), b.height());
        let grow_w = w * (self.dw.exp() - 1.0) / 2.0;
        let grow_h = h * (self.dh.exp() - 1.0) / 2.0;
        let (sx, sy) = (self.dx * w, self.dy * h);
        let moved = BBox::new(
            b.x1() + sx - grow_w,
            b.y1() + sy - grow_h,
            b.x2() + sx + grow_w,
            b.y2() + sy + grow_h,
        )
        .expect("jittered box keeps its orientation");
        moved.clip(iw, ih)
    }
}

/// Emits paired detections for a scene: `1 + duplicates` jittered copies per
/// non-ignored person plus background boxes. Full and visible boxes of one
/// detection share the same relative offsets.
pub fn simulate_detector(scene: &CrowdScene, noise: &NoiseModel) -> Result<Vec<Detection>, SceneError> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let (iw, ih) = (scene.spec.image_size.0 as f64, scene.spec.image_size.1 as f64);
    let centre = Normal::new(0.0, noise.center_jitter).expect("finite jitter");
    let size = Normal::new(0.0, noise.size_jitter).expect("finite jitter");
    let mut dets = Vec::new();
    let mut next_id = 0u64;
    for gt in scene.gts.iter().filter(|g| !g.ignore) {
        let copies = 1 + rounded_count(noise.duplicates_per_gt, &mut rng);
        for _ in 0..copies {
            let j = Jitter {
                dx: centre.sample(&mut rng),
                dy: centre.sample(&mut rng),
                dw: size.sample(&mut rng),
                dh: size.sample(&mut rng),
            };
            let pair = PairedBox::new(j.apply(&gt.pair.full, iw, ih), j.apply(&gt.pair.visible, iw, ih));
            dets.push(Detection::new(next_id, pair, draw_score(noise.tp_score, &mut rng)));
            next_id += 1;
        }
    }
    let (mean_h, jitter_h) = scene.spec.person_height;
    for _ in 0..rounded_count(noise.fp_per_image, &mut rng) {
        let h = if jitter_h > 0.0 {
            rng.random_range(mean_h - jitter_h..=mean_h + jitter_h)
        } else {
            mean_h
        }
        .min(ih);
        let w = (h * scene.spec.aspect_ratio).min(iw);
        let x1 = rng.random_range(0.0..=iw - w);
        let y1 = rng.random_range(0.0..=ih - h);
        let full = BBox::new(x1, y1, x1 + w, y1 + h).expect("background box");
        let shown = rng.random_range(0.3..=1.0);
        let visible = BBox::new(x1, y1, x1 + w, y1 + h * shown).expect("background box");
        dets.push(Detection::new(
            next_id,
            PairedBox::new(full, visible),
            draw_score(noise.fp_score, &mut rng),
        ));
        next_id += 1;
    }
    Ok(dets)
}

/// Perfect-detector survival for one method and threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleSurvival {
    pub method: NmsMethod,
    pub threshold: f64,
    pub seed: u64,
    /// Ground truths turned into detections.
    pub total: usize,
    pub kept: usize,
}

impl OracleSurvival {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.kept as f64 / self.total as f64
        }
    }

    pub fn missed(&self) -> usize {
        self.total - self.kept
    }
}

/// Turns every usable ground truth into a score-1.0 detection with its exact
/// boxes, runs the suppression with a seeded random order among the tied
/// scores, and counts survivors.
///
/// Ignored entries are left out; entries without a visible box are left out
/// of visible-box suppression. Adaptive NMS uses each box's largest IoU with
/// another ground truth of the same image as its density.
pub fn oracle_nms_recall(
    images: &[Vec<GroundTruthEntry>],
    cfg: &NmsConfig,
    seed: u64,
) -> Result<OracleSurvival, SceneError> {
    cfg.validate()?;
    let mut seeder = ChaCha8Rng::seed_from_u64(seed);
    let image_seeds: Vec<u64> = images.iter().map(|_| seeder.random()).collect();
    let counts: Vec<(usize, usize)> = images
        .par_iter()
        .zip(image_seeds.par_iter())
        .map(|(gts, &image_seed)| {
            let dets: Vec<Detection> = gts
                .iter()
                .filter(|g| !g.ignore)
                .filter(|g| cfg.method != NmsMethod::GreedyVisible || !g.visible_missing)
                .enumerate()
                .map(|(k, g)| Detection::new(k as u64, g.pair, 1.0))
                .collect();
            let run_cfg = cfg.with_tie_break(TieBreak::Shuffle(image_seed));
            let densities = (cfg.method == NmsMethod::Adaptive).then(|| {
                let pairs: Vec<_> = dets.iter().map(|d| (d.id, d.pair)).collect();
                max_overlap_densities(&pairs)
            });
            let kept = suppress(&dets, &run_cfg, densities.as_ref())?.kept_count();
            Ok((dets.len(), kept))
        })
        .collect::<Result<_, SuppressionError>>()?;
    let (total, kept) = counts
        .iter()
        .fold((0, 0), |(t, k), &(ti, ki)| (t + ti, k + ki));
    Ok(OracleSurvival {
        method: cfg.method,
        threshold: cfg.threshold,
        seed,
        total,
        kept,
    })
}

/// [`oracle_nms_recall`] over every `(method, threshold)` combination.
pub fn oracle_sweep(
    images: &[Vec<GroundTruthEntry>],
    methods: &[NmsMethod],
    thresholds: &[f64],
    base: &NmsConfig,
    seed: u64,
) -> Result<Vec<OracleSurvival>, SceneError> {
    let mut rows = Vec::with_capacity(methods.len() * thresholds.len());
    for &method in methods {
        for &threshold in thresholds {
            let cfg = NmsConfig {
                method,
                threshold,
                ..*base
            };
            rows.push(oracle_nms_recall(images, &cfg, seed)?);
        }
    }
    Ok(rows)
}

/// A person and its most-overlapping neighbour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborPair {
    pub a: u64,
    pub b: u64,
    pub full_iou: f64,
    pub visible_iou: f64,
}

/// For each non-ignored ground truth, its partner with the highest full-box
/// IoU (when that IoU is positive). Unordered pairs are reported once.
pub fn neighbor_pairs(gts: &[GroundTruthEntry]) -> Vec<NeighborPair> {
    let live: Vec<&GroundTruthEntry> = gts.iter().filter(|g| !g.ignore).collect();
    let mut seen: HashMap<(u64, u64), ()> = HashMap::new();
    let mut pairs = Vec::new();
    for (i, g) in live.iter().enumerate() {
        let best = live
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, h)| (h, iou(&g.pair.full, &h.pair.full)))
            .filter(|&(_, v)| v > 0.0)
            .max_by(|x, y| x.1.total_cmp(&y.1).then(y.0.id.cmp(&x.0.id)));
        if let Some((h, full_iou)) = best {
            let key = (g.id.min(h.id), g.id.max(h.id));
            if seen.insert(key, ()).is_none() {
                pairs.push(NeighborPair {
                    a: key.0,
                    b: key.1,
                    full_iou,
                    visible_iou: iou(&g.pair.visible, &h.pair.visible),
                });
            }
        }
    }
    pairs
}
