//! Shared generators and brute-force oracles for the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use occlusion_core::image::Image;
use occlusion_core::model::{Label, Network};
use occlusion_core::occlusion::{enumerate_integer_placements, occlude, OcclusionSpec, Placement};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

pub fn sample2x2() -> Image {
    Image::new(2, 2, 1, vec![0.4, 0.6, 0.55, 0.72]).unwrap()
}

pub fn random_layers(rng: &mut ChaCha8Rng, widths: &[usize]) -> Vec<(Vec<Vec<f64>>, Vec<f64>)> {
    widths
        .windows(2)
        .map(|w| {
            let s = 2.0 / (w[0] as f64).sqrt();
            let rows = (0..w[1])
                .map(|_| (0..w[0]).map(|_| rng.gen_range(-s..s)).collect())
                .collect();
            let bias = (0..w[1]).map(|_| rng.gen_range(-0.5..0.5)).collect();
            (rows, bias)
        })
        .collect()
}

/// Dense ReLU network with weights uniform in `[-2, 2] / sqrt(fan_in)`.
pub fn random_network(rng: &mut ChaCha8Rng, widths: &[usize]) -> Network {
    Network::from_dense(random_layers(rng, widths)).unwrap()
}

pub fn random_image(rng: &mut ChaCha8Rng, m: usize, n: usize, c: usize) -> Image {
    let data = (0..m * n * c).map(|_| rng.gen_range(0.0..=1.0)).collect();
    Image::new(m, n, c, data).unwrap()
}

/// Per-neuron evaluation straight from the dense weights, written without
/// any of the library's matrix code.
pub fn reference_forward(layers: &[(Vec<Vec<f64>>, Vec<f64>)], input: &[f64]) -> Vec<f64> {
    let mut cur = input.to_vec();
    for (li, (w, b)) in layers.iter().enumerate() {
        let mut next = Vec::with_capacity(b.len());
        for (row, bias) in w.iter().zip(b) {
            let mut z = *bias;
            for (wk, xk) in row.iter().zip(&cur) {
                z += wk * xk;
            }
            next.push(if li + 1 < layers.len() { z.max(0.0) } else { z });
        }
        cur = next;
    }
    cur
}

/// Lowest index among the maxima.
pub fn scan_argmax(y: &[f64]) -> usize {
    let mut best = 0;
    for k in 1..y.len() {
        if y[k] > y[best] {
            best = k;
        }
    }
    best
}

/// First integer placement whose occluded image is classified differently.
pub fn enumerate_flip(f: &Network, x: &Image, spec: &OcclusionSpec) -> Option<Placement> {
    let q = f.classify(x.as_slice()).unwrap();
    enumerate_integer_placements(x.height(), x.width())
        .into_iter()
        .find(|p| {
            let occluded = occlude(x, spec, p).unwrap();
            f.classify(occluded.as_slice()).unwrap() != q
        })
}

/// Is there an integer placement where `l` scores at least as high as `q`
/// and the prediction is no longer `q`?
pub fn enumerate_label(f: &Network, x: &Image, spec: &OcclusionSpec, q: Label, l: Label) -> bool {
    enumerate_integer_placements(x.height(), x.width())
        .into_iter()
        .any(|p| {
            let y = f.forward(occlude(x, spec, &p).unwrap().as_slice()).unwrap();
            y[l.0] >= y[q.0] && scan_argmax(&y) != q.0
        })
}

/// A random instance for the completeness suites: a small classifier and a
/// small image with a uniform integer-position occlusion.
pub struct Instance {
    pub f: Network,
    pub x: Image,
    pub spec: OcclusionSpec,
}

pub fn tiny_instance(seed: u64) -> Instance {
    use occlusion_core::occlusion::PositionMode;
    let mut r = rng(seed);
    let m = r.gen_range(2..=6);
    let n = r.gen_range(2..=6);
    let hidden1 = r.gen_range(3..=10);
    let hidden2 = r.gen_range(2..=(20 - hidden1).min(10));
    let classes = r.gen_range(2..=4);
    let mut layers = random_layers(&mut r, &[m * n, hidden1, hidden2, classes]);
    let x = random_image(&mut r, m, n, 1);
    // Pull the runner-up toward the winner so that occlusions matter: the
    // top-two margin shrinks to a random fraction of its original size.
    let y = reference_forward(&layers, x.as_slice());
    let q = scan_argmax(&y);
    let runner_up = (0..classes)
        .filter(|&k| k != q)
        .max_by(|&a, &b| y[a].total_cmp(&y[b]).then(b.cmp(&a)))
        .unwrap();
    let keep = r.gen_range(0.05..0.6);
    layers.last_mut().unwrap().1[runner_up] += (1.0 - keep) * (y[q] - y[runner_up]);
    let f = Network::from_dense(layers).unwrap();
    let w = r.gen_range(1..=n.min(3));
    let h = r.gen_range(1..=m.min(3));
    let mu = [0.0, 0.5, 1.0][r.gen_range(0..3)];
    let spec = OcclusionSpec::uniform(w, h, mu, PositionMode::Integer);
    Instance { f, x, spec }
}

/// Sequential pipeline settings for the small suites.
pub fn sequential_config() -> occlusion_core::orchestrator::VerificationConfig {
    occlusion_core::orchestrator::VerificationConfig {
        workers: 1,
        timeout_per_query: Some(60.0),
        ..Default::default()
    }
}

/// Largest `max_{l != q} F_l - F_q` seen on `samples` uniform points of the
/// box, integer dimensions rounded.
pub fn sampled_margin(
    composed: &Network,
    input_box: &occlusion_core::verifier::InputBox,
    q: Label,
    samples: usize,
    seed: u64,
) -> f64 {
    let mut r = rng(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..samples {
        let theta: Vec<f64> = (0..input_box.dim())
            .map(|k| {
                let (lo, hi) = (input_box.lo[k], input_box.hi[k]);
                if lo == hi {
                    lo
                } else if input_box.integer[k] {
                    r.gen_range(lo.ceil() as i64..=hi.floor() as i64) as f64
                } else {
                    r.gen_range(lo..=hi)
                }
            })
            .collect();
        let y = composed.forward(&theta).unwrap();
        let best_other = (0..y.len())
            .filter(|&k| k != q.0)
            .map(|k| y[k])
            .fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max(best_other - y[q.0]);
    }
    worst
}
