mod support;

use proptest::prelude::*;
use vishash::hashtag::{
    accumulate_heatmap, connected_components, proposals_from_map, Connectivity, ExtractConfig, GateRefiner,
    ThresholdPolicy,
};
use vishash::seed;
use vishash::vision::sample_crop_boxes;

use support::{brute_heatmap, flood_fill, random_crops, random_mask};

proptest! {
    #[test]
    fn heatmap_matches_pixel_loop(s in any::<u64>(), w in 1u32..20, h in 1u32..20, n in 0usize..30) {
        let mut rng = seed::rng(s);
        let crops = random_crops(&mut rng, w, h, n);
        let map = accumulate_heatmap(w, h, &crops);
        prop_assert_eq!(map.values(), brute_heatmap(w, h, &crops));
    }

    #[test]
    fn components_match_flood_fill(s in any::<u64>(), w in 1u32..24, h in 1u32..24, density in 0.0f64..1.0, eight: bool) {
        let mut rng = seed::rng(s);
        let mask = random_mask(&mut rng, w, h, density);
        let conn = if eight { Connectivity::Eight } else { Connectivity::Four };
        let comps = connected_components(&mask, conn);
        let got: std::collections::BTreeSet<_> = comps.iter().map(|c| c.pixels.iter().copied().collect()).collect();
        prop_assert_eq!(got.len(), comps.len());
        prop_assert_eq!(got, flood_fill(&mask, eight));
        for c in &comps {
            prop_assert!(c.pixels.windows(2).all(|p| p[0] < p[1]));
            let xs = c.pixels.iter().map(|&i| i as u32 % w);
            let ys = c.pixels.iter().map(|&i| i as u32 / w);
            prop_assert_eq!(c.bbox.x, xs.clone().min().unwrap());
            prop_assert_eq!(c.bbox.right(), xs.max().unwrap() + 1);
            prop_assert_eq!(c.bbox.y, ys.clone().min().unwrap());
            prop_assert_eq!(c.bbox.bottom(), ys.max().unwrap() + 1);
        }
    }

    #[test]
    fn proposal_confidence_is_mean_heat_in_box(s in any::<u64>(), n in 1usize..40, k in -1.0f64..2.0, fallback: bool) {
        let (w, h) = (24, 18);
        let mut rng = seed::rng(s);
        let crops = random_crops(&mut rng, w, h, n);
        let map = accumulate_heatmap(w, h, &crops);
        let config = ExtractConfig { threshold: ThresholdPolicy::from_k(k), ..Default::default() };
        let refiner = GateRefiner { min_area_fraction: 0.0, fill_ratio_min: 0.0 };
        let (props, _) = proposals_from_map("img", "tag", &map, &crops, &config, &refiner, fallback);
        let values = brute_heatmap(w, h, &crops);
        for p in &props {
            let b = p.bbox;
            let mut acc = 0.0;
            for y in b.y..b.bottom() {
                for x in b.x..b.right() {
                    acc += values[(y * w + x) as usize];
                }
            }
            prop_assert!((p.confidence - acc / b.area() as f64).abs() < 1e-9);
        }
        prop_assert!(props.windows(2).all(|p| p[0].confidence >= p[1].confidence));
    }

    #[test]
    fn fallback_always_yields_a_proposal(s in any::<u64>(), n in 1usize..20, k in 0.0f64..5.0) {
        let (w, h) = (20, 20);
        let mut rng = seed::rng(s);
        let crops = random_crops(&mut rng, w, h, n);
        let map = accumulate_heatmap(w, h, &crops);
        let config = ExtractConfig { threshold: ThresholdPolicy::from_k(k), ..Default::default() };
        // A refiner that rejects everything.
        let refiner = GateRefiner { min_area_fraction: 2.0, fill_ratio_min: 1.0 };
        let (none, used) = proposals_from_map("img", "tag", &map, &crops, &config, &refiner, false);
        prop_assert!(none.is_empty() && !used);
        let (some, used) = proposals_from_map("img", "tag", &map, &crops, &config, &refiner, true);
        prop_assert_eq!(some.len(), 1);
        prop_assert!(used);
    }
}

#[test]
fn dense_crops_cover_nearly_every_pixel() {
    for (i, (w, h)) in [(96u32, 128u32), (200, 150), (320, 480), (1000, 2000)].into_iter().enumerate() {
        let boxes = sample_crop_boxes(w, h, 3500, (0.1, 0.4), i as u64).unwrap();
        let crops: Vec<_> = boxes
            .into_iter()
            .map(|bbox| vishash::hashtag::ScoredCrop { bbox, confidence: 1.0 })
            .collect();
        let map = accumulate_heatmap(w, h, &crops);
        assert!(map.covered_fraction() > 0.99, "{w}x{h}: {}", map.covered_fraction());
    }
}
