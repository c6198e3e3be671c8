//! Cheap attempts to find a concrete violating input inside a node.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::model::Network;

/// Value of the single output of `net` at `x` and its gradient.
pub(crate) fn value_and_gradient(net: &Network, x: &[f64]) -> (f64, Vec<f64>) {
    let mut pre = Vec::with_capacity(net.layers().len());
    let mut cur = x.to_vec();
    for layer in net.layers() {
        let z = layer.pre_activation(&cur);
        cur = if layer.relu {
            z.iter().map(|v| v.max(0.0)).collect()
        } else {
            z.clone()
        };
        pre.push(z);
    }
    let value = cur[0];
    let mut grad = vec![1.0];
    for (li, layer) in net.layers().iter().enumerate().rev() {
        let mut g = layer.weights.tr_mul_vec(&grad);
        if li > 0 {
            for (gk, zk) in g.iter_mut().zip(&pre[li - 1]) {
                if *zk <= 0.0 {
                    *gk = 0.0;
                }
            }
        }
        grad = g;
    }
    (value, grad)
}

/// Clamps into the box and rounds integer-marked inputs.
pub(crate) fn project(x: &mut [f64], lo: &[f64], hi: &[f64], integer: &[bool]) {
    for k in 0..x.len() {
        let mut v = x[k].clamp(lo[k], hi[k]);
        if integer[k] {
            v = v.round().clamp(lo[k].ceil(), hi[k].floor());
        }
        x[k] = v;
    }
}

pub(crate) fn random_point(rng: &mut ChaCha8Rng, lo: &[f64], hi: &[f64], integer: &[bool]) -> Vec<f64> {
    let mut x: Vec<f64> = lo
        .iter()
        .zip(hi)
        .enumerate()
        .map(|(k, (&l, &h))| {
            if l == h {
                l
            } else if integer[k] {
                rng.gen_range(l.ceil() as i64..=h.floor() as i64) as f64
            } else {
                rng.gen_range(l..=h)
            }
        })
        .collect();
    project(&mut x, lo, hi, integer);
    x
}

/// Signed-gradient ascent on the objective, integer inputs held fixed.
/// Returns the best point visited and its value.
pub(crate) fn ascend(
    net: &Network,
    start: Vec<f64>,
    lo: &[f64],
    hi: &[f64],
    integer: &[bool],
    steps: usize,
    evaluations: &mut u64,
) -> (Vec<f64>, f64) {
    let mut x = start;
    let (mut value, mut grad) = value_and_gradient(net, &x);
    *evaluations += 1;
    let mut best = (x.clone(), value);
    // The step sizes add up to more than the box width, so a start at one
    // corner can still reach the opposite one.
    let mut scale = 0.5;
    for _ in 0..steps {
        if value >= 0.0 {
            break;
        }
        let mut moved = false;
        for k in 0..x.len() {
            if integer[k] || lo[k] == hi[k] || grad[k] == 0.0 {
                continue;
            }
            x[k] = (x[k] + scale * (hi[k] - lo[k]) * grad[k].signum()).clamp(lo[k], hi[k]);
            moved = true;
        }
        if !moved {
            break;
        }
        let next = value_and_gradient(net, &x);
        *evaluations += 1;
        value = next.0;
        grad = next.1;
        if value > best.1 {
            best = (x.clone(), value);
        }
        scale *= 0.7;
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn gradient_matches_finite_differences() {
        let net = Network::from_dense(vec![
            (
                vec![vec![1.0, -2.0], vec![0.5, 1.0], vec![-1.0, 0.3]],
                vec![0.1, -0.2, 0.4],
            ),
            (vec![vec![1.0, -1.0, 2.0]], vec![0.0]),
        ])
        .unwrap();
        let x = [0.3, 0.6];
        let (v, g) = value_and_gradient(&net, &x);
        assert!((v - net.forward(&x).unwrap()[0]).abs() < 1e-12);
        for k in 0..2 {
            let mut xp = x;
            xp[k] += 1e-6;
            let fd = (net.forward(&xp).unwrap()[0] - v) / 1e-6;
            assert!((fd - g[k]).abs() < 1e-4);
        }
    }

    #[test]
    fn random_points_respect_integrality() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = random_point(&mut rng, &[1.0, 0.0], &[4.0, 1.0], &[true, false]);
            assert_eq!(x[0].fract(), 0.0);
            assert!((1.0..=4.0).contains(&x[0]) && (0.0..=1.0).contains(&x[1]));
        }
    }
}
