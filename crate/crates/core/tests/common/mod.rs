#![allow(dead_code)]

use std::collections::HashSet;

use crowdnms::assignment::GroundTruthEntry;
use crowdnms::geometry::{BBox, PairedBox};
use crowdnms::ingest::ImageRecord;
use crowdnms::metrics::ImageSample;
use crowdnms::suppression::Detection;
use proptest::prelude::*;
use serde_json::{json, Map};

pub fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
    BBox::new(x1, y1, x2, y2).unwrap()
}

/// Full box on a coarse grid (so overlaps are common) and a visible
/// sub-box given by fractions of it.
pub fn paired_box() -> impl Strategy<Value = PairedBox> {
    (0u32..40, 0u32..40, 1u32..30, 1u32..40, 0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64).prop_map(
        |(x, y, w, h, a, b, c, d)| {
            let (x, y, w, h) = (x as f64, y as f64, w as f64, h as f64);
            let (l, r) = if a <= b { (a, b) } else { (b, a) };
            let (t, u) = if c <= d { (c, d) } else { (d, c) };
            let full = bx(x, y, x + w, y + h);
            let visible = bx(x + l * w, y + t * h, x + r * w, y + u * h);
            PairedBox::new(full, visible)
        },
    )
}

/// Scores from a small set so ties are frequent.
pub fn score() -> impl Strategy<Value = f64> {
    prop_oneof![
        (0u32..8).prop_map(|k| 0.3 + 0.1 * k as f64),
        0.0..=1.0f64,
    ]
}

/// Detections with unique ids in scrambled order.
pub fn detections(max: usize) -> impl Strategy<Value = Vec<Detection>> {
    prop::collection::vec((paired_box(), score()), 0..max).prop_flat_map(|items| {
        let n = items.len();
        Just((0..n as u64).collect::<Vec<_>>())
            .prop_shuffle()
            .prop_map(move |ids| {
                items
                    .iter()
                    .zip(ids)
                    .map(|(&(pair, score), id)| Detection::new(id * 7 + 3, pair, score))
                    .collect()
            })
    })
}

/// Area by counting unit-free sample points: exact for integer-aligned
/// boxes when the grid step divides 1.
pub fn raster_intersection(a: &BBox, b: &BBox, step: f64) -> f64 {
    let x1 = a.x1().max(b.x1());
    let x2 = a.x2().min(b.x2());
    let y1 = a.y1().max(b.y1());
    let y2 = a.y2().min(b.y2());
    if x2 <= x1 || y2 <= y1 {
        return 0.0;
    }
    let mut count = 0u64;
    let mut y = y1.floor() + step / 2.0;
    while y < y2.ceil() {
        let mut x = x1.floor() + step / 2.0;
        while x < x2.ceil() {
            if x > x1 && x < x2 && y > y1 && y < y2 {
                count += 1;
            }
            x += step;
        }
        y += step;
    }
    count as f64 * step * step
}

/// The textbook loop: take the best remaining box, drop everything that
/// overlaps it by more than `threshold`, repeat.
pub fn naive_nms(dets: &[Detection], threshold: f64, overlap: impl Fn(&Detection, &Detection) -> f64) -> Vec<u64> {
    naive_nms_with(dets, |_| threshold, overlap)
}

/// As [`naive_nms`] with the threshold chosen by the box doing the suppressing.
pub fn naive_nms_with(
    dets: &[Detection],
    threshold: impl Fn(&Detection) -> f64,
    overlap: impl Fn(&Detection, &Detection) -> f64,
) -> Vec<u64> {
    let mut remaining: Vec<&Detection> = dets.iter().collect();
    let mut kept = Vec::new();
    while !remaining.is_empty() {
        let mut best = 0;
        for k in 1..remaining.len() {
            let (c, b) = (remaining[k], remaining[best]);
            if c.score > b.score || (c.score == b.score && c.id < b.id) {
                best = k;
            }
        }
        let top = remaining.swap_remove(best);
        kept.push(top.id);
        let limit = threshold(top);
        remaining.retain(|d| overlap(top, d) <= limit);
    }
    kept
}

/// One image's detections already labelled as (score, is_tp).
pub struct Labelled {
    pub scored: Vec<(f64, bool)>,
    pub num_gt: usize,
}

/// Miss rate and AP by trying every score cut-off directly.
pub fn brute_force_mr_ap(images: &[Labelled], fppi_refs: &[f64]) -> (f64, f64) {
    let num_gt: usize = images.iter().map(|i| i.num_gt).sum();
    let all: Vec<(f64, bool)> = images.iter().flat_map(|i| i.scored.iter().copied()).collect();
    let mut cuts: Vec<f64> = all.iter().map(|s| s.0).collect();
    cuts.sort_by(|a, b| b.total_cmp(a));
    cuts.dedup();
    let at = |cut: f64| {
        let tp = all.iter().filter(|s| s.0 >= cut && s.1).count();
        let fp = all.iter().filter(|s| s.0 >= cut && !s.1).count();
        (tp, fp)
    };
    let points: Vec<(f64, f64, usize, usize)> = cuts
        .iter()
        .map(|&c| {
            let (tp, fp) = at(c);
            (fp as f64 / images.len() as f64, 1.0 - tp as f64 / num_gt as f64, tp, fp)
        })
        .collect();

    let mut log_sum = 0.0;
    let mut any_zero = false;
    for &r in fppi_refs {
        // loosest cut whose fppi stays within r; the strictest cut if none does
        let miss = points
            .iter()
            .filter(|p| p.0 <= r)
            .map(|p| p.1)
            .fold(None, |acc: Option<f64>, m| Some(acc.map_or(m, |a| a.min(m))))
            .unwrap_or_else(|| points.first().map_or(1.0, |p| p.1));
        if miss == 0.0 {
            any_zero = true;
        } else {
            log_sum += miss.ln();
        }
    }
    let mr = if any_zero { 0.0 } else { (log_sum / fppi_refs.len() as f64).exp() };

    // AP: sum over recall increments of the best precision at that recall or beyond
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (k, p) in points.iter().enumerate() {
        let recall = p.2 as f64 / num_gt as f64;
        let best_prec = points[k..]
            .iter()
            .map(|q| q.2 as f64 / (q.2 + q.3) as f64)
            .fold(0.0, f64::max);
        ap += (recall - prev_recall) * best_prec;
        prev_recall = recall;
    }
    (mr, ap)
}

pub fn ids(dets: &[Detection]) -> HashSet<u64> {
    dets.iter().map(|d| d.id).collect()
}

/// People 100 px apart so a detection either copies one exactly or hits nothing.
pub struct Image {
    pub gts: Vec<GroundTruthEntry>,
    pub dets: Vec<Detection>,
}

pub fn person(k: usize) -> PairedBox {
    let x = 100.0 * k as f64;
    PairedBox::new(bx(x, 0.0, x + 40.0, 100.0), bx(x, 0.0, x + 40.0, 60.0))
}

pub fn background(k: usize) -> PairedBox {
    let x = 100.0 * k as f64;
    PairedBox::unoccluded(bx(x, 500.0, x + 40.0, 600.0))
}

/// Per image: gt count and a list of (target gt or background, score in hundredths).
pub type ImageSpec = (usize, Vec<(Option<usize>, u32)>);

pub fn image_spec() -> impl Strategy<Value = ImageSpec> {
    (1usize..5).prop_flat_map(|n| {
        let det = (prop::option::weighted(0.7, 0..n), 0u32..=100);
        (Just(n), prop::collection::vec(det, 0..8))
    })
}

pub fn build(specs: &[ImageSpec], score: impl Fn(u32) -> f64) -> Vec<Image> {
    specs
        .iter()
        .map(|(n, dets)| Image {
            gts: (0..*n).map(|k| GroundTruthEntry::new(k as u64, person(k))).collect(),
            dets: dets
                .iter()
                .enumerate()
                .map(|(id, &(target, s))| {
                    let pair = target.map_or_else(|| background(id), person);
                    Detection::new(id as u64, pair, score(s))
                })
                .collect(),
        })
        .collect()
}

/// Labels worked out from the construction, not from the matcher: the
/// best-ranked copy of each person is the hit, every other box a miss.
pub fn labelled(images: &[Image]) -> Vec<Labelled> {
    images
        .iter()
        .map(|img| {
            let mut order: Vec<&Detection> = img.dets.iter().collect();
            order.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
            let mut claimed = vec![false; img.gts.len()];
            let scored = order
                .into_iter()
                .map(|d| {
                    let hit = img.gts.iter().position(|g| g.pair == d.pair);
                    let tp = match hit {
                        Some(k) if !claimed[k] => {
                            claimed[k] = true;
                            true
                        }
                        _ => false,
                    };
                    (d.score, tp)
                })
                .collect();
            Labelled { scored, num_gt: img.gts.len() }
        })
        .collect()
}

pub fn samples(images: &[Image]) -> Vec<ImageSample<'_>> {
    images.iter().map(|i| ImageSample { dets: &i.dets, gts: &i.gts }).collect()
}

pub fn hundredths(s: u32) -> f64 {
    s as f64 / 100.0
}

pub fn real_box() -> impl Strategy<Value = BBox> {
    (-1e4..1e4f64, -1e4..1e4f64, 1e-3..2e3f64, 1e-3..2e3f64).prop_map(|(x, y, w, h)| bx(x, y, x + w, y + h))
}

pub fn pair() -> impl Strategy<Value = PairedBox> {
    (real_box(), real_box()).prop_map(|(f, v)| PairedBox::new(f, v))
}

// files store x, y, w, h; corners are derived and inherit cancellation error
pub fn close(a: &BBox, b: &BBox) -> bool {
    a.to_xywh()
        .iter()
        .zip(b.to_xywh())
        .all(|(x, y)| (x - y).abs() <= 1e-7 * x.abs())
}

pub fn gt_records() -> impl Strategy<Value = Vec<ImageRecord>> {
    let entry = (pair(), any::<bool>(), any::<bool>());
    prop::collection::vec(prop::collection::vec(entry, 0..5), 0..4).prop_map(|images| {
        images
            .into_iter()
            .enumerate()
            .map(|(i, boxes)| {
                let gts = boxes
                    .into_iter()
                    .enumerate()
                    .map(|(k, (mut p, ignore, missing))| {
                        if missing {
                            p.visible = p.full;
                        }
                        GroundTruthEntry {
                            ignore,
                            visible_missing: missing,
                            ..GroundTruthEntry::new(k as u64, p)
                        }
                    })
                    .collect();
                let mut r = ImageRecord::new(format!("img,{i}\"x")).with_gts(gts);
                r.extra.insert("height".into(), json!(600 + i));
                r
            })
            .collect()
    })
}

pub fn det_records() -> impl Strategy<Value = Vec<ImageRecord>> {
    let det = (pair(), 0.0..=1.0f64, prop::option::of(0.0..1.0f64));
    prop::collection::vec(prop::collection::vec(det, 0..6), 0..4).prop_map(|images| {
        images
            .into_iter()
            .enumerate()
            .map(|(i, boxes)| {
                let mut r = ImageRecord::new(format!("p{i}"));
                for (k, (p, s, density)) in boxes.into_iter().enumerate() {
                    r.dets.push(Detection::new(k as u64, p, s));
                    let mut extra = Map::new();
                    if let Some(d) = density {
                        extra.insert("density".into(), json!(d));
                    }
                    r.det_extra.push(extra);
                }
                r
            })
            .collect()
    })
}
