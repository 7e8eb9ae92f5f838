use eamri::edge::{canny_edges, sobel_edges, sobel_magnitude, Msrb};
use eamri::harness::dataset::CANNY_THRESHOLDS;
use eamri::harness::gradcheck::{param_checks, randomize_parameters, weighted_sum};
use eamri::harness::{generate_phantom, PhantomSpec};
use eamri::tensor::{ParamStore, RealTensor, Trace};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

mod common;
use common::sobel_oracle;

#[test]
fn sobel_magnitude_matches_loop_oracle() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    for (h, w) in [(8, 8), (5, 9), (1, 4)] {
        let img = RealTensor::uniform(vec![h, w], -1.0, 1.0, &mut r);
        let got = sobel_magnitude(&img).unwrap();
        assert!(got.max_abs_diff(&sobel_oracle(&img)) < 1e-12);
    }
}

fn padded(inner: &RealTensor, pad: usize, dy: usize, dx: usize) -> RealTensor {
    let (h, w) = (inner.shape()[0], inner.shape()[1]);
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = RealTensor::zeros(vec![ph, pw]);
    for y in 0..h {
        for x in 0..w {
            out.data_mut()[(y + pad + dy) * pw + x + pad + dx] = inner.at(&[y, x]);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sobel_commutes_with_translation(seed in 0u64..10_000, dy in 0usize..3, dx in 0usize..3) {
        let inner = RealTensor::uniform(vec![6, 6], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
        let a = sobel_magnitude(&padded(&inner, 4, 0, 0)).unwrap();
        let b = sobel_magnitude(&padded(&inner, 4, dy, dx)).unwrap();
        let w = 14;
        for y in 0..14 - dy {
            for x in 0..14 - dx {
                prop_assert!((a.data()[y * w + x] - b.data()[(y + dy) * w + x + dx]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn edge_maps_lie_in_unit_interval(seed in 0u64..10_000) {
        let img = RealTensor::uniform(vec![10, 10], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
        for e in [sobel_edges(&img).unwrap(), canny_edges(&img, 0.1, 0.3).unwrap()] {
            prop_assert!(e.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn canny_marks_no_more_pixels_than_thresholded_sobel() {
    let (low, high) = CANNY_THRESHOLDS;
    for seed in 0..10 {
        let img = generate_phantom(&PhantomSpec {
            seed,
            ..PhantomSpec::default()
        })
        .unwrap()
        .abs();
        let canny = canny_edges(&img, low, high).unwrap().data().iter().filter(|v| **v > 0.0).count();
        let sobel = sobel_edges(&img).unwrap().data().iter().filter(|v| **v >= low).count();
        assert!(canny > 0 && canny <= sobel, "seed {seed}: canny {canny}, sobel {sobel}");
    }
}

#[test]
fn msrb_gradients_match_finite_differences() {
    let mut store = ParamStore::new();
    let block = Msrb::new(&mut store, "msrb", 4, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    randomize_parameters(&mut store, 3).unwrap();
    let x = RealTensor::uniform(vec![1, 4, 6, 6], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(4));
    let results = param_checks(
        "",
        &store,
        |s, t: &mut Trace| {
            let xv = t.constant(x.clone());
            let out = block.forward(t, s, xv)?;
            weighted_sum(t, out, 5)
        },
        1e-5,
        1e-5,
        6,
    )
    .unwrap();
    for r in results {
        assert!(r.passed(), "{r:?}");
    }
}

#[test]
fn msrb_preserves_shape() {
    let mut store = ParamStore::new();
    let block = Msrb::new(&mut store, "msrb", 3, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    for (h, w) in [(1, 1), (5, 7), (9, 4)] {
        let mut t = Trace::new();
        let x = t.constant(RealTensor::zeros(vec![2, 3, h, w]));
        let out = block.forward(&mut t, &store, x).unwrap();
        assert_eq!(t.shape(out), &[2, 3, h, w]);
    }
}
