use contrastdiff::metrics::{
    clip_score_from_embeddings, frechet_distance, ssim, FeatureStats, SSIM_C1, SSIM_C2,
};
use contrastdiff::Tensor;
use proptest::prelude::*;

fn image(seed: u64) -> Tensor {
    Tensor::from_fn(&[3, 12, 12], |i| {
        (((i as u64 * 2654435761 + seed * 97) % 1000) as f32) / 1000.0
    })
}

fn gaussian_1d(mean: f64, var: f64) -> FeatureStats {
    FeatureStats {
        mean: vec![mean],
        cov: vec![var],
        count: 2,
    }
}

#[test]
fn constant_images_follow_the_closed_form() {
    let a = Tensor::full(&[3, 8, 8], 0.2f32);
    let b = Tensor::full(&[3, 8, 8], 0.8f32);
    // Float32 pixels: compare against the same representable values.
    let (u, v) = (0.2f32 as f64, 0.8f32 as f64);
    let want = (2.0 * u * v + SSIM_C1) / (u * u + v * v + SSIM_C1) * (SSIM_C2 / SSIM_C2);
    let got = ssim(&a, &b).unwrap();
    assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    assert!((got - 0.3201 / 0.6801).abs() < 1e-6);
}

#[test]
fn frechet_one_dimensional_closed_form() {
    let cases: [((f64, f64), (f64, f64)); 3] = [
        ((0.0, 1.0), (1.0, 1.0)),
        ((0.0, 4.0), (0.0, 1.0)),
        ((2.5, 0.25), (-1.0, 9.0)),
    ];
    for ((m1, v1), (m2, v2)) in cases {
        let want: f64 = (m1 - m2) * (m1 - m2) + (v1.sqrt() - v2.sqrt()).powi(2);
        let got = frechet_distance(&gaussian_1d(m1, v1), &gaussian_1d(m2, v2)).unwrap();
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
    }
}

#[test]
fn frechet_diagonal_matches_per_axis_sum() {
    let p = FeatureStats {
        mean: vec![0.0, 1.0, -2.0],
        cov: vec![1.0, 0.0, 0.0, 0.0, 4.0, 0.0, 0.0, 0.0, 0.5],
        count: 10,
    };
    let q = FeatureStats {
        mean: vec![1.0, 1.0, 0.0],
        cov: vec![2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.5],
        count: 10,
    };
    let want: f64 = [
        (0.0, 1.0, 1.0, 2.0),
        (1.0, 1.0, 4.0, 1.0),
        (-2.0, 0.0, 0.5, 0.5),
    ]
    .iter()
    .map(|&(a, b, va, vb): &(f64, f64, f64, f64)| (a - b).powi(2) + (va.sqrt() - vb.sqrt()).powi(2))
    .sum();
    assert!((frechet_distance(&p, &q).unwrap() - want).abs() < 1e-8);
    assert!(frechet_distance(&p, &p).unwrap().abs() < 1e-8);
}

#[test]
fn feature_stats_midpoint_and_order() {
    let a = vec![1.0, -2.0, 0.5];
    let b = vec![3.0, 4.0, 0.5];
    let s = FeatureStats::from_features(&[a.clone(), b.clone()]).unwrap();
    assert_eq!(s.mean, vec![2.0, 1.0, 0.5]);
    let r = FeatureStats::from_features(&[b, a]).unwrap();
    assert_eq!(s, r);
    assert!(FeatureStats::from_features(&[vec![1.0]]).is_err());
}

#[test]
fn clip_score_edge_cases() {
    let e = vec![vec![0.3f32, -0.1, 0.7], vec![1.0, 1.0, 0.0]];
    assert!((clip_score_from_embeddings(&e, &e).unwrap() - 1.0).abs() < 1e-6);
    assert!(clip_score_from_embeddings(&[], &[]).is_err());
    assert!(clip_score_from_embeddings(&e, &e[..1]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ssim_is_reflexive_symmetric_and_bounded(s1 in 0u64..10_000, s2 in 0u64..10_000) {
        let (a, b) = (image(s1), image(s2));
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-10);
        let ab = ssim(&a, &b).unwrap();
        prop_assert!((ab - ssim(&b, &a).unwrap()).abs() < 1e-10);
        prop_assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn clip_score_ignores_scale(
        v in prop::collection::vec(prop::collection::vec(0.1f32..1.0, 5), 1..6),
        k in 0.1f32..10.0,
    ) {
        let t: Vec<Vec<f32>> = v.iter().map(|x| x.iter().rev().cloned().collect()).collect();
        let scaled: Vec<Vec<f32>> = v.iter().map(|x| x.iter().map(|y| y * k).collect()).collect();
        let a = clip_score_from_embeddings(&v, &t).unwrap();
        let b = clip_score_from_embeddings(&scaled, &t).unwrap();
        prop_assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn frechet_is_symmetric_and_nonnegative(
        rows in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 4..10),
        shift in -1.0f64..1.0,
    ) {
        let other: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x * 0.5 + shift).collect()).collect();
        let p = FeatureStats::from_features(&rows).unwrap();
        let q = FeatureStats::from_features(&other).unwrap();
        let pq = frechet_distance(&p, &q).unwrap();
        let qp = frechet_distance(&q, &p).unwrap();
        prop_assert!(pq >= 0.0);
        prop_assert!((pq - qp).abs() < 1e-6 * pq.max(1.0));
    }
}
