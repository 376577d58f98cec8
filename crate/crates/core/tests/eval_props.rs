mod support;

use std::collections::{BTreeSet, HashMap};

use proptest::prelude::*;
use vishash::eval::{hashtag_metrics, iou, mean_tag_pr, topk_accuracy, GroundTruthBoxSet};
use vishash::{seed, PixelBox};

use support::{random_box, raster_iou};

fn pixel_box(max: u32) -> impl Strategy<Value = PixelBox> {
    (1..=max / 2, 1..=max / 2).prop_flat_map(move |(w, h)| {
        (0..=max - w, 0..=max - h).prop_map(move |(x, y)| PixelBox::new(x, y, w, h))
    })
}

fn label_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("t{i}")).collect()
}

proptest! {
    #[test]
    fn iou_matches_raster_and_is_symmetric(a in pixel_box(40), b in pixel_box(40)) {
        let v = iou(&a, &b).unwrap();
        prop_assert_eq!(v, iou(&b, &a).unwrap());
        prop_assert!((v - raster_iou(&a, &b)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn iou_falls_as_a_box_slides_away(a in pixel_box(40), steps in 1u32..10) {
        let mut last = 1.0;
        for dx in 0..=steps {
            let moved = PixelBox::new(a.x + dx, a.y, a.w, a.h);
            let v = iou(&a, &moved).unwrap();
            prop_assert!(v <= last);
            last = v;
        }
    }

    #[test]
    fn precision_bounds_accuracy(s in any::<u64>(), n_pairs in 1usize..30, keep in 0.0f64..1.0, threshold in 0.0f64..0.9) {
        let mut rng = seed::rng(s);
        let mut gts = Vec::new();
        let mut proposals = HashMap::new();
        let mut all = HashMap::new();
        for i in 0..n_pairs {
            let key = (format!("img{i}"), "tag".to_string());
            gts.push(GroundTruthBoxSet {
                image_id: key.0.clone(),
                tag: key.1.clone(),
                boxes: vec![random_box(&mut rng, 40)],
                no_visual: false,
                annotator: "a".into(),
            });
            let p = random_box(&mut rng, 40);
            all.insert(key.clone(), p);
            if rand::Rng::random_bool(&mut rng, keep) {
                proposals.insert(key, p);
            }
        }
        let m = hashtag_metrics(&proposals, &gts, threshold).unwrap();
        prop_assert!(m.precision >= m.accuracy);
        prop_assert!((m.accuracy - m.precision * m.success_rate).abs() < 1e-12);
        let full = hashtag_metrics(&all, &gts, threshold).unwrap();
        prop_assert_eq!(full.precision, full.accuracy);
    }

    #[test]
    fn ranking_metrics_grow_with_k(s in any::<u64>(), n_images in 1usize..20, n_labels in 2usize..8) {
        let mut rng = seed::rng(s);
        let names = label_names(n_labels);
        let mut rankings = HashMap::new();
        let mut cats = Vec::new();
        let mut tags = Vec::new();
        for i in 0..n_images {
            let id = format!("img{i}");
            let mut order = names.clone();
            rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
            rankings.insert(id.clone(), order);
            cats.push((id.clone(), names[rand::Rng::random_range(&mut rng, 0..n_labels)].clone()));
            let truth: BTreeSet<String> = names.iter().filter(|_| rand::Rng::random_bool(&mut rng, 0.4)).cloned().collect();
            let truth = if truth.is_empty() { BTreeSet::from([names[0].clone()]) } else { truth };
            tags.push((id, truth));
        }
        let ks: Vec<usize> = (1..=n_labels).collect();
        let acc = topk_accuracy(&rankings, &cats, &ks).unwrap();
        prop_assert!(acc.windows(2).all(|w| w[0].1 <= w[1].1));
        prop_assert_eq!(acc.last().unwrap().1, 1.0);

        let mut last = (0.0, 0.0);
        for k in ks {
            let (p, r) = mean_tag_pr(&rankings, &tags, k).unwrap();
            prop_assert!(r >= last.1 - 1e-12);
            // Hits at k never shrink, so precision times k cannot fall.
            prop_assert!(p * k as f64 >= last.0 - 1e-12);
            last = (p * k as f64, r);
        }
        prop_assert!((last.1 - 1.0).abs() < 1e-12);
    }
}
