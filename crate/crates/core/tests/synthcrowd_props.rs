use crowdnms::assignment::GroundTruthEntry;
use crowdnms::geometry::BBox;
use crowdnms::suppression::{NmsConfig, NmsMethod};
use crowdnms::synthcrowd::{
    generate_scene, generate_scenes, oracle_nms_recall, oracle_sweep, scene_from_boxes, simulate_detector,
    CrowdSceneSpec, NoiseModel,
};
use proptest::prelude::*;

const SIDE: i64 = 48;

fn people() -> impl Strategy<Value = (Vec<[i64; 4]>, Vec<usize>)> {
    prop::collection::vec((0..SIDE - 2, 0..SIDE - 2, 1i64..20, 1i64..30), 1..8).prop_flat_map(|v| {
        let boxes: Vec<[i64; 4]> = v
            .into_iter()
            .map(|(x, y, w, h)| [x, y, (x + w).min(SIDE), (y + h).min(SIDE)])
            .collect();
        let n = boxes.len();
        (Just(boxes), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
    })
}

/// Unoccluded pixels of each person, counted one by one.
fn raster_visible(boxes: &[[i64; 4]], front_to_back: &[usize]) -> Vec<Option<[i64; 4]>> {
    let mut owner = vec![None; (SIDE * SIDE) as usize];
    for &p in front_to_back {
        let [x1, y1, x2, y2] = boxes[p];
        for y in y1..y2 {
            for x in x1..x2 {
                let cell = &mut owner[(y * SIDE + x) as usize];
                if cell.is_none() {
                    *cell = Some(p);
                }
            }
        }
    }
    (0..boxes.len())
        .map(|p| {
            let mut tight: Option<[i64; 4]> = None;
            for y in 0..SIDE {
                for x in 0..SIDE {
                    if owner[(y * SIDE + x) as usize] == Some(p) {
                        tight = Some(match tight {
                            None => [x, y, x + 1, y + 1],
                            Some([a, b, c, d]) => [a.min(x), b.min(y), c.max(x + 1), d.max(y + 1)],
                        });
                    }
                }
            }
            tight
        })
        .collect()
}

fn as_box(r: [i64; 4]) -> BBox {
    BBox::new(r[0] as f64, r[1] as f64, r[2] as f64, r[3] as f64).unwrap()
}

fn overlap(a: &BBox, b: &BBox) -> bool {
    a.intersection_area(b) > 0.0
}

/// At least one fully visible member per group of mutually overlapping people.
fn every_cluster_has_a_front(gts: &[GroundTruthEntry]) -> bool {
    let n = gts.len();
    let mut group: Vec<usize> = (0..n).collect();
    fn root(g: &mut [usize], mut i: usize) -> usize {
        while g[i] != i {
            g[i] = g[g[i]];
            i = g[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if overlap(&gts[i].pair.full, &gts[j].pair.full) {
                let (a, b) = (root(&mut group, i), root(&mut group, j));
                group[a] = b;
            }
        }
    }
    (0..n).all(|i| {
        let r = root(&mut group, i);
        (0..n).any(|j| root(&mut group, j) == r && gts[j].pair.visible == gts[j].pair.full)
    })
}

proptest! {
    #[test]
    fn visible_boxes_match_raster((boxes, order) in people()) {
        let scene = scene_from_boxes((SIDE as u32, SIDE as u32), &boxes, &order).unwrap();
        let expected = raster_visible(&boxes, &order);
        let hidden = expected.iter().filter(|v| v.is_none()).count();
        prop_assert_eq!(scene.fully_occluded, hidden);
        prop_assert_eq!(scene.gts.len(), boxes.len() - hidden);
        for g in &scene.gts {
            let k = g.id as usize;
            prop_assert_eq!(g.pair.full, as_box(boxes[k]));
            prop_assert_eq!(Some(g.pair.visible), expected[k].map(as_box));
        }
        let front = order[0];
        let g = scene.gts.iter().find(|g| g.id as usize == front).unwrap();
        prop_assert_eq!(g.pair.visible, g.pair.full);
    }

    #[test]
    fn generated_scenes_have_unoccluded_fronts(seed in any::<u64>(), preset in 0u8..3) {
        let spec = match preset {
            0 => CrowdSceneSpec::crowded(seed),
            1 => CrowdSceneSpec::sparse(seed),
            _ => CrowdSceneSpec { seed, ..CrowdSceneSpec::default() },
        };
        let spec = CrowdSceneSpec { keep_fully_occluded: true, ..spec };
        let scene = generate_scene(&spec).unwrap();
        prop_assert!(every_cluster_has_a_front(&scene.gts));
        for g in scene.gts.iter().filter(|g| !g.ignore) {
            prop_assert!(g.looks_consistent());
        }
    }

    #[test]
    fn same_seed_same_scene_and_detections(seed in any::<u64>(), noise_seed in any::<u64>()) {
        let spec = CrowdSceneSpec::crowded(seed);
        let a = generate_scene(&spec).unwrap();
        let b = generate_scene(&spec).unwrap();
        prop_assert_eq!(&a, &b);
        let noise = NoiseModel { seed: noise_seed, ..NoiseModel::default() };
        prop_assert_eq!(simulate_detector(&a, &noise).unwrap(), simulate_detector(&b, &noise).unwrap());
    }

    #[test]
    fn exact_copies_collapse_to_one_per_person(seed in any::<u64>(), t in 0.0..0.99f64) {
        let scene = generate_scene(&CrowdSceneSpec::crowded(seed)).unwrap();
        let noise = NoiseModel { duplicates_per_gt: 2.0, ..NoiseModel::exact(seed) };
        let dets = simulate_detector(&scene, &noise).unwrap();
        prop_assert_eq!(dets.len(), 3 * scene.gts.len());
        let kept = crowdnms::suppression::r2_nms(&dets, &NmsConfig::new(NmsMethod::GreedyVisible, t)).unwrap().kept;
        prop_assert!(kept.len() <= scene.gts.len());
        // copies of one person are identical, so at most one of them remains
        for g in &scene.gts {
            prop_assert!(kept.iter().filter(|d| d.pair == g.pair).count() <= 1);
        }
    }
}

// Survival can in principle drop when the threshold rises (a freed box may
// suppress a neighbour); on these fixed datasets it does not.
#[test]
fn oracle_survival_rises_with_threshold_on_fixed_datasets() {
    let thresholds: Vec<f64> = (0..=10).map(|k| 0.3 + 0.06 * k as f64).collect();
    for spec in [CrowdSceneSpec::crowded(11), CrowdSceneSpec::sparse(12), CrowdSceneSpec::default()] {
        let images: Vec<Vec<GroundTruthEntry>> = generate_scenes(&spec, 40).unwrap().into_iter().map(|s| s.gts).collect();
        for method in [NmsMethod::GreedyFull, NmsMethod::GreedyVisible] {
            let rows = oracle_sweep(&images, &[method], &thresholds, &NmsConfig::default(), 5).unwrap();
            for w in rows.windows(2) {
                assert!(w[0].fraction() <= w[1].fraction(), "{method} {:?} -> {:?}", w[0], w[1]);
            }
        }
    }
}

#[test]
fn visible_nms_keeps_more_people_in_crowds() {
    let images: Vec<Vec<GroundTruthEntry>> = generate_scenes(&CrowdSceneSpec::crowded(21), 50)
        .unwrap()
        .into_iter()
        .map(|s| s.gts)
        .collect();
    let full = oracle_nms_recall(&images, &NmsConfig::new(NmsMethod::GreedyFull, 0.5), 0).unwrap();
    let visible = oracle_nms_recall(&images, &NmsConfig::new(NmsMethod::GreedyVisible, 0.5), 0).unwrap();
    assert!(visible.kept > full.kept, "{visible:?} vs {full:?}");
}
