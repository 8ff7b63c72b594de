mod common;

use cafcn::geometry::{
    rasterize_labels, shrink_box, CharBox, LabelMap, ATTENTION_SHRINK, PREDICTION_SHRINK,
};
use cafcn::train::{foreground_weight, pixel_weights};
use common::dyadic_box;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn shrink_is_exact_on_ten_thousand_boxes() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..10_000 {
        let b = dyadic_box(&mut rng);
        let pred = shrink_box(&b, PREDICTION_SHRINK).unwrap();
        let attn = shrink_box(&b, ATTENTION_SHRINK).unwrap();
        for (s, r) in [(pred, PREDICTION_SHRINK), (attn, ATTENTION_SHRINK)] {
            assert_eq!(s.x_min + s.x_max, b.x_min + b.x_max, "box {i}");
            assert_eq!(s.y_min + s.y_max, b.y_min + b.y_max, "box {i}");
            assert_eq!(s.area(), b.area() * r * r, "box {i}");
            assert_eq!(s.class_id, b.class_id);
        }
        assert!(b.contains(&attn) && attn.contains(&pred), "box {i}");
    }
}

#[test]
fn prediction_area_is_one_sixteenth_of_attention_area() {
    let b = CharBox::new(0.0, 0.0, 40.0, 80.0, 11).unwrap();
    let pred = shrink_box(&b, PREDICTION_SHRINK).unwrap();
    let attn = shrink_box(&b, ATTENTION_SHRINK).unwrap();
    assert_eq!(pred.area(), 200.0);
    assert_eq!(attn.area(), 800.0);
}

proptest! {
    #[test]
    fn shrink_properties_on_arbitrary_boxes(
        x0 in -1e3f64..1e3, y0 in -1e3f64..1e3, w in 1e-3f64..1e3, h in 1e-3f64..1e3, r in 0.01f64..1.0
    ) {
        let b = CharBox::new(x0, y0, x0 + w, y0 + h, 5).unwrap();
        let s = shrink_box(&b, r).unwrap();
        let tol = 1e-9 * (1.0 + x0.abs() + y0.abs() + w + h);
        let (cx, cy) = b.center();
        let (sx, sy) = s.center();
        prop_assert!((cx - sx).abs() <= tol && (cy - sy).abs() <= tol);
        prop_assert!((s.area() / b.area() - r * r).abs() <= 1e-9);
        prop_assert!(s.x_min >= b.x_min && s.x_max <= b.x_max);
        prop_assert!(s.y_min >= b.y_min && s.y_max <= b.y_max);
    }

    #[test]
    fn shrink_nests_for_smaller_ratios(r1 in 0.01f64..1.0, r2 in 0.01f64..1.0, k in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(k);
        let b = dyadic_box(&mut rng);
        let (lo, hi) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
        let small = shrink_box(&b, lo).unwrap();
        let big = shrink_box(&b, hi).unwrap();
        prop_assert!(big.contains(&small));
    }

    #[test]
    fn prediction_labels_lie_inside_attention_labels(seed in 0u64..5000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (32, 128);
        let boxes: Vec<CharBox> = (0..rng.gen_range(1..6))
            .map(|_| {
                let x0 = rng.gen_range(0.0..110.0);
                let y0 = rng.gen_range(0.0..12.0);
                CharBox::new(x0, y0, x0 + rng.gen_range(4.0..18.0), y0 + rng.gen_range(6.0..20.0), rng.gen_range(1..38)).unwrap()
            })
            .collect();
        let labels = rasterize_labels(&boxes, (h, w), &[(h / 2, w / 2)]).unwrap();
        prop_assert_eq!((labels.pred_gt.height, labels.pred_gt.width), (16, 64));
        let attn = &labels.attn_gt[0];
        for (p, a) in labels.pred_gt.data.iter().zip(&attn.data) {
            if *p != 0 {
                prop_assert_eq!(*a, 1);
            }
        }
    }

    #[test]
    fn foreground_weight_balances_exactly(n in 2usize..400, seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = LabelMap::zeros(1, n);
        let fg = rng.gen_range(1..n);
        for v in m.data.iter_mut().take(fg) {
            *v = rng.gen_range(1..38);
        }
        let neg = n - fg;
        let (num, den) = foreground_weight(&m);
        // summed foreground weight fg * num / den equals N_neg
        prop_assert_eq!(fg * num, neg * den);
        let w = pixel_weights(&m);
        let total: f64 = w.iter().zip(&m.data).filter(|(_, &y)| y != 0).map(|(w, _)| w).sum();
        prop_assert!((total - neg as f64).abs() <= 1e-9 * neg as f64);
        prop_assert!(w.iter().zip(&m.data).all(|(w, &y)| y != 0 || *w == 1.0));
    }
}

#[test]
fn degenerate_maps_are_unweighted() {
    let empty = LabelMap::zeros(3, 4);
    assert_eq!(foreground_weight(&empty), (1, 1));
    let mut full = LabelMap::zeros(2, 2);
    full.data.fill(12);
    assert_eq!(foreground_weight(&full), (1, 1));
    assert!(pixel_weights(&full).iter().all(|&w| w == 1.0));
}
