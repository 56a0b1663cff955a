use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use set2box::boxes::{bor, intersect, Region};
use set2box::{Hyperbox, Volume};

const DIM: usize = 3;

fn arb_box() -> impl Strategy<Value = Hyperbox> {
    (
        prop::collection::vec(-1.0f64..1.0, DIM),
        prop::collection::vec(0.0f64..0.8, DIM),
    )
        .prop_map(|(c, f)| Hyperbox::new(c, f).unwrap())
}

fn region(b: &Hyperbox) -> Region {
    Region::Box(b.clone())
}

/// Fraction of points drawn around both regions on which membership agrees.
fn agreement(lhs: &Region, rhs: &Region, points: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = match (lhs.bounding_box(), rhs.bounding_box()) {
        (None, None) => return 1.0,
        (Some(b), None) | (None, Some(b)) => b,
        (Some((alo, ahi)), Some((blo, bhi))) => (
            alo.iter().zip(&blo).map(|(a, b)| a.min(*b)).collect(),
            ahi.iter().zip(&bhi).map(|(a, b)| a.max(*b)).collect(),
        ),
    };
    let mut same = 0;
    let mut p = vec![0.0; lo.len()];
    for _ in 0..points {
        for (i, x) in p.iter_mut().enumerate() {
            // pad so boundaries and outside points are both exercised
            let pad = 0.1 * (hi[i] - lo[i]) + 1e-3;
            *x = rng.gen_range(lo[i] - pad..=hi[i] + pad);
        }
        if lhs.contains(&p) == rhs.contains(&p) {
            same += 1;
        }
    }
    same as f64 / points as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn transitivity(x in arb_box(), s1 in prop::collection::vec(0.0f64..1.0, DIM), s2 in prop::collection::vec(0.0f64..1.0, DIM)) {
        // grow x into y ⊇ x, then y into z ⊇ y
        let grow = |b: &Hyperbox, s: &[f64]| {
            let f: Vec<f64> = b.offset().iter().zip(s).map(|(f, g)| f + g).collect();
            Hyperbox::new(b.center().to_vec(), f).unwrap()
        };
        let y = grow(&x, &s1);
        let z = grow(&y, &s2);
        prop_assert!(y.contains(&x) && z.contains(&y));
        prop_assert!(z.contains(&x));
    }

    #[test]
    fn intersection_laws_are_exact(x in arb_box(), y in arb_box(), z in arb_box()) {
        // intersections of boxes are boxes, so corners compare exactly
        let corners = |r: Region| r.bounding_box();
        let (rx, ry, rz) = (region(&x), region(&y), region(&z));
        prop_assert_eq!(corners(rx.clone().and(rx.clone())), Some((x.min_corner(), x.max_corner())));
        prop_assert_eq!(corners(rx.clone().and(ry.clone())), corners(ry.clone().and(rx.clone())));
        prop_assert_eq!(
            corners(rx.clone().and(ry.clone().and(rz.clone()))),
            corners(rx.clone().and(ry.clone()).and(rz.clone()))
        );
        let i = intersect(&x, &y).unwrap();
        prop_assert_eq!(corners(rx.and(ry)), (!i.is_empty()).then(|| (i.lo.clone(), i.hi.clone())));
    }

    #[test]
    fn union_laws_by_membership(x in arb_box(), y in arb_box(), z in arb_box(), seed in any::<u64>()) {
        let (rx, ry, rz) = (region(&x), region(&y), region(&z));
        let laws = [
            (rx.clone().or(rx.clone()), rx.clone()),
            (rx.clone().or(ry.clone()), ry.clone().or(rx.clone())),
            (rx.clone().or(ry.clone().or(rz.clone())), rx.clone().or(ry.clone()).or(rz.clone())),
            (rx.clone().or(rx.clone().and(ry.clone())), rx.clone()),
            (rx.clone().and(rx.clone().or(ry.clone())), rx.clone()),
            (
                rx.clone().and(ry.clone().or(rz.clone())),
                rx.clone().and(ry.clone()).or(rx.clone().and(rz.clone())),
            ),
            (
                rx.clone().or(ry.clone().and(rz.clone())),
                rx.clone().or(ry.clone()).and(rx.clone().or(rz.clone())),
            ),
        ];
        for (i, (l, r)) in laws.iter().enumerate() {
            prop_assert_eq!(agreement(l, r, 500, seed ^ i as u64), 1.0, "law {}", i);
        }
    }

    #[test]
    fn bor_is_symmetric_and_bounded(x in arb_box(), y in arb_box(), beta in 0.5f64..8.0) {
        let vol = Volume::Smooth { beta };
        let a = bor(&x, &y, vol).unwrap();
        prop_assert_eq!(a, bor(&y, &x, vol).unwrap());
        prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
        prop_assert!((bor(&x, &x, Volume::Hard).unwrap() - 1.0).abs() < 1e-12 || x.offset().iter().any(|&f| f == 0.0));
    }

    #[test]
    fn smooth_volume_is_monotone_in_offsets(x in arb_box(), grow in 0.0f64..0.5, beta in 0.5f64..8.0) {
        let bigger = Hyperbox::new(x.center().to_vec(), x.offset().iter().map(|f| f + grow).collect()).unwrap();
        let vol = Volume::Smooth { beta };
        prop_assert!(vol.of_box(&bigger) >= vol.of_box(&x));
        prop_assert!(Volume::Hard.of_box(&x) <= vol.of_box(&x));
    }
}
