mod common;

use common::{brute_ssim, random_gray, rng, smooth_gray};
use depthcur::ssim::{mean_ssim, ssim_map, threshold_map, SsimParams};
use depthcur::{BinaryMask, GrayImage};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn matches_double_loop_on_random_images() {
    let mut r = rng(7);
    let params = SsimParams::default();
    for _ in 0..50 {
        let w = r.random_range(1..=32);
        let h = r.random_range(1..=32);
        let a = smooth_gray(w, h, &mut r);
        let b = smooth_gray(w, h, &mut r);
        let map = ssim_map(&a, &b, &params, None).unwrap();
        let (want, _) = brute_ssim(&a, &b, None);
        for (got, want) in map.values().iter().zip(&want) {
            assert!((got - want).abs() < 1e-6, "{w}x{h}: {got} vs {want}");
        }
    }
}

#[test]
fn coverage_matches_double_loop() {
    let mut r = rng(8);
    let params = SsimParams::default();
    for _ in 0..20 {
        let (w, h) = (r.random_range(12..=32), r.random_range(12..=32));
        let a = smooth_gray(w, h, &mut r);
        let b = smooth_gray(w, h, &mut r);
        // A covered rectangle with ragged holes.
        let (x0, y0) = (r.random_range(0..w / 3), r.random_range(0..h / 3));
        let mask = BinaryMask::from_fn(w, h, |x, y| {
            x >= x0 && y >= y0 && (x * 7 + y * 3) % 53 != 0
        })
        .unwrap();
        let map = ssim_map(&a, &b, &params, Some(&mask)).unwrap();
        let (want, cover) = brute_ssim(&a, &b, Some(&mask));
        assert_eq!(map.coverage(), &cover[..]);
        for (got, want) in map.values().iter().zip(&want) {
            assert!((got - want).abs() < 1e-6);
        }
    }
}

#[test]
fn self_similarity_is_one() {
    let mut r = rng(9);
    for _ in 0..10 {
        let a = random_gray(r.random_range(1..40), r.random_range(1..40), &mut r);
        let map = ssim_map(&a, &a, &SsimParams::default(), None).unwrap();
        assert!(map.values().iter().all(|v| (v - 1.0).abs() < 1e-9));
    }
}

#[test]
fn constant_images() {
    let a = GrayImage::filled(16, 16, 100.0).unwrap();
    let b = GrayImage::filled(16, 16, 200.0).unwrap();
    let map = ssim_map(&a, &b, &SsimParams::default(), None).unwrap();
    // Only the luminance term differs: (2·100·200 + c1) / (100² + 200² + c1).
    let c1 = (0.01f64 * 255.0).powi(2);
    let want = (2.0 * 100.0 * 200.0 + c1) / (100.0f64.powi(2) + 200.0f64.powi(2) + c1);
    assert!(map.values().iter().all(|v| (v - want).abs() < 1e-12));
}

#[test]
fn thresholding_is_strict_and_respects_coverage() {
    let params = SsimParams::default();
    let a = GrayImage::filled(12, 12, 50.0).unwrap();
    let mask = BinaryMask::from_fn(12, 12, |x, _| x < 11).unwrap();
    let map = ssim_map(&a, &a, &params, Some(&mask)).unwrap();
    let bits = threshold_map(&map, 0.85);
    // Windows of radius 5 reaching column 11 are uncovered.
    for y in 0..12 {
        for x in 0..12 {
            assert_eq!(bits.get(x, y), x < 6, "({x}, {y})");
        }
    }
    assert_eq!(mean_ssim(&map).unwrap(), 1.0);
    assert!(threshold_map(&map, 1.0).count_ones() == 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn symmetric_and_bounded(
        w in 1usize..20,
        h in 1usize..20,
        seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let a = random_gray(w, h, &mut r);
        let b = random_gray(w, h, &mut r);
        let params = SsimParams::default();
        let ab = ssim_map(&a, &b, &params, None).unwrap();
        let ba = ssim_map(&b, &a, &params, None).unwrap();
        prop_assert_eq!(ab.values(), ba.values());
        prop_assert!(ab.values().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn threshold_monotone(seed in any::<u64>(), lo in 0.0f64..1.0, gap in 0.0f64..0.5) {
        let mut r = rng(seed);
        let a = smooth_gray(16, 16, &mut r);
        let b = smooth_gray(16, 16, &mut r);
        let map = ssim_map(&a, &b, &SsimParams::default(), None).unwrap();
        let loose = threshold_map(&map, lo);
        let tight = threshold_map(&map, (lo + gap).min(1.0));
        prop_assert!(tight.is_subset_of(&loose));
    }
}
