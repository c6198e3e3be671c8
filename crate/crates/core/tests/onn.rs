mod common;

use occlusion_core::image::Image;
use occlusion_core::occlusion::{
    enumerate_integer_placements, occlude, Coloring, OcclusionSpec, Placement, PositionMode,
};
use occlusion_core::onn::{build_onn, PositionRegion};
use proptest::prelude::*;
use rand::Rng;

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

prop_compose! {
    fn picture()(m in 1usize..7, n in 1usize..7, rgb in any::<bool>(), seed in 0u64..100_000)
        (w in 1..=n, h in 1..=m, m in Just(m), n in Just(n), c in Just(if rgb { 3 } else { 1 }), seed in Just(seed))
        -> (Image, usize, usize, u64) {
        let mut r = common::rng(seed);
        (common::random_image(&mut r, m, n, c), w, h, seed)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn uniform_integer_positions_match_the_oracle((x, w, h, seed) in picture()) {
        let mut r = common::rng(seed ^ 0x5eed);
        let mu: Vec<f64> = (0..x.channels()).map(|_| r.gen_range(0.0..=1.0)).collect();
        let spec = OcclusionSpec { w, h, coloring: Coloring::Uniform { mu }, positions: PositionMode::Integer };
        let bundle = build_onn(&x, &spec).unwrap();
        for p in enumerate_integer_placements(x.height(), x.width()) {
            let got = bundle.onn.forward(&bundle.theta(&p).unwrap()).unwrap();
            let want = occlude(&x, &spec, &p).unwrap();
            prop_assert!(max_gap(&got, want.as_slice()) <= 1e-9);
        }
    }

    #[test]
    fn uniform_real_positions_match_the_oracle((x, w, h, seed) in picture(), mu in 0.0f64..=1.0) {
        let mut r = common::rng(seed);
        let spec = OcclusionSpec::uniform(w, h, mu, PositionMode::Real);
        let bundle = build_onn(&x, &spec).unwrap();
        for _ in 0..50 {
            let p = Placement::at(r.gen_range(1.0..=x.width() as f64), r.gen_range(1.0..=x.height() as f64));
            let got = bundle.onn.forward(&bundle.theta(&p).unwrap()).unwrap();
            let want = occlude(&x, &spec, &p).unwrap();
            prop_assert!(max_gap(&got, want.as_slice()) <= 1e-9);
        }
    }

    #[test]
    fn multiform_integer_positions_match_the_oracle((x, w, h, seed) in picture(), eps in 0.01f64..=1.0) {
        let mut r = common::rng(seed);
        let spec = OcclusionSpec::multiform(w, h, eps, PositionMode::Integer);
        let bundle = build_onn(&x, &spec).unwrap();
        for p in enumerate_integer_placements(x.height(), x.width()) {
            let deltas: Vec<f64> = (0..x.len()).map(|_| r.gen_range(-eps..=eps)).collect();
            let p = Placement::with_deltas(p.a, p.b, deltas);
            let got = bundle.onn.forward(&bundle.theta(&p).unwrap()).unwrap();
            let want = occlude(&x, &spec, &p).unwrap();
            prop_assert!(max_gap(&got, want.as_slice()) <= 1e-9);
        }
    }

    #[test]
    fn multiform_real_positions_undershoot_toward_the_oracle((x, w, h, seed) in picture(), eps in 0.01f64..=1.0) {
        let mut r = common::rng(seed);
        let spec = OcclusionSpec::multiform(w, h, eps, PositionMode::Real);
        let bundle = build_onn(&x, &spec).unwrap();
        for _ in 0..20 {
            let deltas: Vec<f64> = (0..x.len()).map(|_| r.gen_range(-eps..=eps)).collect();
            let p = Placement::with_deltas(r.gen_range(1.0..=x.width() as f64), r.gen_range(1.0..=x.height() as f64), deltas);
            let got = bundle.onn.forward(&bundle.theta(&p).unwrap()).unwrap();
            let want = occlude(&x, &spec, &p).unwrap();
            for ((g, o), v) in got.iter().zip(want.as_slice()).zip(x.as_slice()) {
                // Same direction as the oracle's shift, never further.
                prop_assert!((g - v) * (o - v) >= -1e-12);
                prop_assert!((g - v).abs() <= (o - v).abs() + 1e-9);
            }
        }
    }

    #[test]
    fn every_placement_lies_in_the_full_box((x, w, h, _seed) in picture(), eps in 0.01f64..=1.0) {
        let spec = OcclusionSpec::multiform(w, h, eps, PositionMode::Integer);
        let bundle = build_onn(&x, &spec).unwrap();
        let full = bundle.input_box(&PositionRegion::full(x.height(), x.width())).unwrap();
        for p in enumerate_integer_placements(x.height(), x.width()) {
            let deltas = vec![eps; x.len()];
            let theta = bundle.theta(&Placement::with_deltas(p.a, p.b, deltas)).unwrap();
            prop_assert!(full.contains(&theta, 0.0));
            let neg = bundle.theta(&Placement::with_deltas(p.a, p.b, vec![-eps; x.len()])).unwrap();
            prop_assert!(full.contains(&neg, 0.0));
        }
    }

    #[test]
    fn composed_network_is_two_stage((x, w, h, seed) in picture(), mu in 0.0f64..=1.0) {
        let mut r = common::rng(seed);
        let spec = OcclusionSpec::uniform(w, h, mu, PositionMode::Real);
        let bundle = build_onn(&x, &spec).unwrap();
        let f = common::random_network(&mut r, &[x.len(), 6, 3]);
        let composed = bundle.compose(&f).unwrap();
        for _ in 0..20 {
            let p = Placement::at(r.gen_range(1.0..=x.width() as f64), r.gen_range(1.0..=x.height() as f64));
            let theta = bundle.theta(&p).unwrap();
            let staged = f.forward(&bundle.onn.forward(&theta).unwrap()).unwrap();
            prop_assert!(max_gap(&composed.forward(&theta).unwrap(), &staged) <= 1e-12);
        }
    }
}

#[test]
fn gating_never_exceeds_the_product() {
    // relu(s + z - 1) <= s * z on the unit square, with equality on its edges.
    for i in 0..=100 {
        for k in 0..=100 {
            let (s, z) = (i as f64 / 100.0, k as f64 / 100.0);
            let gate = (s + z - 1.0).max(0.0);
            assert!(gate <= s * z + 1e-15, "s={s} z={z}");
            if s == 0.0 || s == 1.0 || z == 0.0 || z == 1.0 {
                assert!((gate - s * z).abs() <= 1e-15);
            }
        }
    }
}

#[test]
fn sample2x2_through_a_random_classifier() {
    let x = common::sample2x2();
    let spec = OcclusionSpec::uniform(1, 1, 0.0, PositionMode::Real);
    let bundle = build_onn(&x, &spec).unwrap();
    let mut r = common::rng(11);
    for _ in 0..20 {
        let f = common::random_network(&mut r, &[4, 5, 3]);
        let composed = bundle.compose(&f).unwrap();
        let theta = bundle.theta(&Placement::at(1.5, 2.0)).unwrap();
        let occluded = [0.4, 0.3, 0.55, 0.36];
        let want = f.forward(&occluded).unwrap();
        assert!(max_gap(&composed.forward(&theta).unwrap(), &want) <= 1e-9);
    }
}

#[test]
fn theta_needs_matching_deltas() {
    let x = common::sample2x2();
    let spec = OcclusionSpec::multiform(1, 1, 0.1, PositionMode::Integer);
    let bundle = build_onn(&x, &spec).unwrap();
    assert!(bundle.theta(&Placement::at(1.0, 1.0)).is_err());
    assert!(bundle.theta(&Placement::with_deltas(1.0, 1.0, vec![0.0; 3])).is_err());
}

#[test]
fn regions_outside_the_image_are_rejected() {
    let x = common::sample2x2();
    let spec = OcclusionSpec::uniform(1, 1, 0.0, PositionMode::Integer);
    let bundle = build_onn(&x, &spec).unwrap();
    assert!(bundle.input_box(&PositionRegion::new(0.0, 2.0, 1.0, 2.0)).is_err());
    assert!(bundle.input_box(&PositionRegion::new(1.0, 3.0, 1.0, 2.0)).is_err());
    assert!(bundle.input_box(&PositionRegion::new(2.0, 1.0, 1.0, 2.0)).is_err());
}

#[test]
fn manifest_names_every_input() {
    let x = common::sample2x2();
    let spec = OcclusionSpec::multiform(1, 1, 0.1, PositionMode::Integer);
    let bundle = build_onn(&x, &spec).unwrap();
    let manifest = bundle.manifest(&PositionRegion::full(2, 2)).unwrap();
    assert_eq!(manifest.inputs.len(), bundle.input_dim());
    let names: Vec<&str> = manifest.inputs.iter().map(|i| i.name.as_str()).collect();
    assert_eq!(&names[..4], &["a", "w", "b", "h"]);
    assert!(manifest.inputs.iter().filter(|i| i.integer).count() == 2);
    assert!(manifest
        .inputs
        .iter()
        .filter(|i| i.fixed)
        .all(|i| i.name == "w" || i.name == "h"));
}
