use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gpcl::geometry::{iou, normalized_offset, BoundingBox, BoxSize, SceneDims};

fn dims() -> impl Strategy<Value = SceneDims> {
    (50.0..4000.0f64, 50.0..4000.0f64).prop_map(|(w, h)| SceneDims::new(w, h).unwrap())
}

fn bbox() -> impl Strategy<Value = BoundingBox> {
    (-0.2..1.2f64, -0.2..1.2f64, -6.0..0.0f64, -1.5..1.5f64)
        .prop_map(|(x, y, a, r)| BoundingBox::new([x, y], BoxSize::new(a, r)).unwrap())
}

/// Overlap of two intervals given by center and length.
fn overlap(ca: f64, la: f64, cb: f64, lb: f64) -> f64 {
    (0.5 * (la + lb) - (ca - cb).abs()).clamp(0.0, la.min(lb))
}

fn iou_from_parameters(a: &BoundingBox, b: &BoundingBox, d: SceneDims) -> f64 {
    let (wa, ha) = a.extent(d);
    let (wb, hb) = b.extent(d);
    let (ca, cb) = (a.center(), b.center());
    let ix = overlap(ca[0] * d.width(), wa, cb[0] * d.width(), wb);
    let iy = overlap(ca[1] * d.height(), ha, cb[1] * d.height(), hb);
    let inter = ix * iy;
    inter / (wa * ha + wb * hb - inter)
}

#[test]
fn parameter_and_corner_iou_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(10_000);
    let d = SceneDims::new(1280.0, 720.0).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let a = BoundingBox::new(
            [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
            BoxSize::new(rng.random_range(-5.0..-0.5), rng.random_range(-1.0..1.0)),
        )
        .unwrap();
        // Half the pairs are near each other so that overlaps are common.
        let b = if rng.random_bool(0.5) {
            a.with_center([
                a.center()[0] + rng.random_range(-0.1..0.1),
                a.center()[1] + rng.random_range(-0.1..0.1),
            ])
            .unwrap()
            .with_size(BoxSize::new(
                a.size().log_area_ratio + rng.random_range(-0.5..0.5),
                a.size().log_aspect_ratio + rng.random_range(-0.3..0.3),
            ))
            .unwrap()
        } else {
            BoundingBox::new(
                [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
                BoxSize::new(rng.random_range(-5.0..-0.5), rng.random_range(-1.0..1.0)),
            )
            .unwrap()
        };
        worst = worst.max((iou(&a, &b, d) - iou_from_parameters(&a, &b, d)).abs());
    }
    assert!(worst <= 1e-10, "max disagreement {worst:e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(), b in bbox(), d in dims()) {
        let v = iou(&a, &b, d);
        prop_assert_eq!(v, iou(&b, &a, d));
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(iou(&a, &a, d), 1.0);
    }

    #[test]
    fn offset_triangle_inequality(a in bbox(), b in bbox(), c in bbox(), d in dims()) {
        let ab = normalized_offset(&a, &b, d);
        let bc = normalized_offset(&b, &c, d);
        let ac = normalized_offset(&a, &c, d);
        prop_assert!(ac <= ab + bc + 1e-12);
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(normalized_offset(&a, &a, d), 0.0);
    }

    #[test]
    fn offset_ignores_uniform_rescaling(a in bbox(), b in bbox(), d in dims(), k in 0.1..10.0f64) {
        let scaled = d.scaled(k).unwrap();
        let diff = normalized_offset(&a, &b, d) - normalized_offset(&a, &b, scaled);
        prop_assert!(diff.abs() <= 1e-12);
    }

    #[test]
    fn corner_form_round_trip(a in bbox(), d in dims()) {
        let back = BoundingBox::from_corner_form(a.to_corner_form(d), d).unwrap();
        for (x, y) in a.center().iter().zip(back.center()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        for (x, y) in a.size().as_array().iter().zip(back.size().as_array()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }
}
