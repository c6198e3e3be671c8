//! Regenerates the files in `fixtures/`.
//!
//! ```text
//! cargo run --release -p occlusion-core --example gen_fixtures -- fixtures
//! ```
//!
//! Everything is derived from fixed seeds, so reruns reproduce the same bytes.
//!
//! - `sample2x2.img`: the 2x2 grayscale image `[0.4, 0.6, 0.55, 0.72]`.
//! - `constant2x2.fnn`: a classifier on 2x2 images that always prefers class 0.
//! - `tiny2x2.fnn`: 10 ReLUs; a 1x1 black occlusion on `sample2x2.img` flips it.
//! - `tiny4x4.fnn` + `img4x4.pgm`, `tiny6x6.fnn` + `img6x6.pgm`: random
//!   classifiers with 20 and 26 ReLUs.
//! - `desk12.fnn`: a 144-200-100-10 classifier (300 ReLUs) trained on
//!   synthetic 12x12 images of ten noisy prototypes; `digit{0..9}.pgm` are
//!   held-out samples it classifies correctly.

use std::path::{Path, PathBuf};

use occlusion_core::image::Image;
use occlusion_core::model::{network_to_string, Network};
use occlusion_core::occlusion::{enumerate_integer_placements, occlude, OcclusionSpec, PositionMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Dense = Vec<(Vec<Vec<f64>>, Vec<f64>)>;

fn random_layers(rng: &mut ChaCha8Rng, widths: &[usize]) -> Dense {
    widths
        .windows(2)
        .map(|w| {
            let scale = 2.0 / (w[0] as f64).sqrt();
            let rows = (0..w[1])
                .map(|_| (0..w[0]).map(|_| rng.gen_range(-scale..scale)).collect())
                .collect();
            let bias = (0..w[1]).map(|_| rng.gen_range(-0.5..0.5)).collect();
            (rows, bias)
        })
        .collect()
}

fn random_image(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Image {
    let raster: Vec<f64> = (0..m * n)
        .map(|_| f64::from(rng.gen_range(0u8..=255)) / 255.0)
        .collect();
    Image::from_raster(m, n, 1, &raster).expect("valid image")
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).expect("write fixture");
    println!("wrote {name}");
}

/// Smooth random prototype: a few Gaussian bumps, rescaled to [0, 1].
fn prototype(rng: &mut ChaCha8Rng, side: usize) -> Vec<f64> {
    let bumps: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.gen_range(1.0..side as f64 - 1.0),
                rng.gen_range(1.0..side as f64 - 1.0),
                rng.gen_range(1.0..3.0),
                rng.gen_range(0.5..1.0),
            )
        })
        .collect();
    let mut p: Vec<f64> = (0..side * side)
        .map(|k| {
            let (r, c) = ((k / side) as f64, (k % side) as f64);
            bumps
                .iter()
                .map(|(br, bc, s, amp)| amp * (-((r - br).powi(2) + (c - bc).powi(2)) / (2.0 * s * s)).exp())
                .sum()
        })
        .collect();
    let max = p.iter().cloned().fold(0.0, f64::max);
    p.iter_mut().for_each(|v| *v /= max);
    p
}

/// Raster sample: the prototype shifted by up to one pixel, plus noise,
/// quantized to 8 bits.
fn sample(rng: &mut ChaCha8Rng, proto: &[f64], side: usize) -> Vec<f64> {
    let (dr, dc) = (rng.gen_range(-1i64..=1), rng.gen_range(-1i64..=1));
    (0..side * side)
        .map(|k| {
            let (r, c) = ((k / side) as i64 - dr, (k % side) as i64 - dc);
            let base = if (0..side as i64).contains(&r) && (0..side as i64).contains(&c) {
                proto[r as usize * side + c as usize]
            } else {
                0.0
            };
            let v = (base + rng.gen_range(-0.15..0.15)).clamp(0.0, 1.0);
            (v * 255.0).round() / 255.0
        })
        .collect()
}

/// Minibatch SGD with momentum on softmax cross-entropy.
fn train(rng: &mut ChaCha8Rng, layers: &mut Dense, data: &[(Vec<f64>, usize)], epochs: usize) {
    let lr = 0.02;
    let momentum = 0.9;
    let mut vel: Dense = layers
        .iter()
        .map(|(w, b)| (vec![vec![0.0; w[0].len()]; w.len()], vec![0.0; b.len()]))
        .collect();
    let batch = 32;
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..epochs {
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let mut loss = 0.0;
        for chunk in order.chunks(batch) {
            let mut grads: Dense = layers
                .iter()
                .map(|(w, b)| (vec![vec![0.0; w[0].len()]; w.len()], vec![0.0; b.len()]))
                .collect();
            for &idx in chunk {
                let (x, y) = &data[idx];
                let mut acts = vec![x.clone()];
                for (li, (w, b)) in layers.iter().enumerate() {
                    let prev = acts.last().expect("input present");
                    let mut z: Vec<f64> = w
                        .iter()
                        .zip(b)
                        .map(|(row, bi)| row.iter().zip(prev).map(|(a, v)| a * v).sum::<f64>() + bi)
                        .collect();
                    if li + 1 < layers.len() {
                        z.iter_mut().for_each(|v| *v = v.max(0.0));
                    }
                    acts.push(z);
                }
                let logits = acts.last().expect("output present");
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                loss += -(exps[*y] / total).ln();
                let mut delta: Vec<f64> = exps.iter().map(|e| e / total).collect();
                delta[*y] -= 1.0;
                for li in (0..layers.len()).rev() {
                    let prev = &acts[li];
                    let (gw, gb) = &mut grads[li];
                    for (r, d) in delta.iter().enumerate() {
                        gb[r] += d;
                        for (c, p) in prev.iter().enumerate() {
                            gw[r][c] += d * p;
                        }
                    }
                    if li > 0 {
                        let w = &layers[li].0;
                        delta = (0..prev.len())
                            .map(|c| {
                                if prev[c] <= 0.0 {
                                    0.0
                                } else {
                                    delta.iter().enumerate().map(|(r, d)| d * w[r][c]).sum()
                                }
                            })
                            .collect();
                    }
                }
            }
            let scale = lr / chunk.len() as f64;
            for ((w, b), ((gw, gb), (vw, vb))) in layers.iter_mut().zip(grads.iter().zip(vel.iter_mut())) {
                for r in 0..w.len() {
                    for c in 0..w[r].len() {
                        vw[r][c] = momentum * vw[r][c] - scale * gw[r][c];
                        w[r][c] += vw[r][c];
                    }
                    vb[r] = momentum * vb[r] - scale * gb[r];
                    b[r] += vb[r];
                }
            }
        }
        println!("epoch {epoch}: loss {:.4}", loss / data.len() as f64);
    }
}

fn flips(f: &Network, x: &Image, spec: &OcclusionSpec) -> bool {
    let q = f.classify(x.as_slice()).expect("input fits");
    enumerate_integer_placements(x.height(), x.width()).iter().any(|p| {
        let y = f
            .forward(occlude(x, spec, p).expect("valid placement").as_slice())
            .expect("input fits");
        (0..y.len()).any(|l| l != q.0 && y[l] >= y[q.0])
    })
}

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    std::fs::create_dir_all(&dir).expect("create fixture directory");

    let sample2x2 = Image::new(2, 2, 1, vec![0.4, 0.6, 0.55, 0.72]).expect("valid image");
    write(&dir, "sample2x2.img", &sample2x2.to_img_text());

    let constant = Network::from_dense(vec![(vec![vec![0.0; 4]; 2], vec![1.0, 0.0])]).expect("valid net");
    write(&dir, "constant2x2.fnn", &network_to_string(&constant));

    // first seed whose net is flipped by a black 1x1 occlusion on sample2x2
    let black = OcclusionSpec::uniform(1, 1, 0.0, PositionMode::Integer);
    let tiny = (0u64..)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Network::from_dense(random_layers(&mut rng, &[4, 6, 4, 2])).expect("valid net")
        })
        .find(|f| flips(f, &sample2x2, &black))
        .expect("some seed flips");
    write(&dir, "tiny2x2.fnn", &network_to_string(&tiny));

    for (side, widths, seed) in [(4usize, vec![16, 12, 8, 3], 41u64), (6, vec![36, 16, 10, 4], 61)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = Network::from_dense(random_layers(&mut rng, &widths)).expect("valid net");
        let x = random_image(&mut rng, side, side);
        write(&dir, &format!("tiny{side}x{side}.fnn"), &network_to_string(&f));
        x.save(&dir.join(format!("img{side}x{side}.pgm"))).expect("write image");
        println!("wrote img{side}x{side}.pgm");
    }

    let side = 12;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let protos: Vec<Vec<f64>> = (0..10).map(|_| prototype(&mut rng, side)).collect();
    let train_set: Vec<(Vec<f64>, usize)> = (0..3000)
        .map(|k| {
            let class = k % 10;
            let raster = sample(&mut rng, &protos[class], side);
            let img = Image::from_raster(side, side, 1, &raster).expect("valid image");
            (img.into_vec(), class)
        })
        .collect();
    let mut layers = random_layers(&mut rng, &[144, 200, 100, 10]);
    for (_, b) in layers.iter_mut() {
        b.iter_mut().for_each(|v| *v = 0.0);
    }
    train(&mut rng, &mut layers, &train_set, 12);
    let desk = Network::from_dense(layers).expect("valid net");
    write(&dir, "desk12.fnn", &network_to_string(&desk));

    let mut correct = 0;
    let mut tested = 0;
    for class in 0..10 {
        loop {
            let raster = sample(&mut rng, &protos[class], side);
            let img = Image::from_raster(side, side, 1, &raster).expect("valid image");
            tested += 1;
            if desk.classify(img.as_slice()).expect("input fits").0 == class {
                correct += 1;
                img.save(&dir.join(format!("digit{class}.pgm"))).expect("write image");
                println!("wrote digit{class}.pgm");
                break;
            }
        }
    }
    println!("held-out accuracy while picking fixtures: {correct}/{tested}");
}
