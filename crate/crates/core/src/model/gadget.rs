//! ReLU max gadgets.
//!
//! `max(a, b) = relu(a - b) + relu(b)` holds whenever `b >= 0`, so the layer
//! below only computes the right answer on non-negative inputs. Raw logits must
//! be shifted first (see [`Network::with_output_shift`]); arg-max does not
//! change under a common shift.

use super::matrix::Matrix;
use super::network::{AffineLayer, Label, Network};
use crate::error::{Error, Result};

/// Builds `M: R^r -> R^2` with `M(y) = (y_d, max_{k != d} y_k)` for `y >= 0`.
///
/// The maximum over the other entries is folded left to right, one gadget per
/// hidden layer; `y_d` and the not-yet-consumed entries are carried through
/// the hidden layers unchanged (ReLU is the identity on them).
pub fn max_gadget_layer(r: usize, d: Label) -> Result<Network> {
    if r < 2 {
        return Err(Error::InvalidNetwork(format!(
            "max gadget needs at least 2 classes, got {r}"
        )));
    }
    if d.0 >= r {
        return Err(Error::InvalidLabel { index: d.0, classes: r });
    }
    let others: Vec<usize> = (0..r).filter(|&k| k != d.0).collect();

    if others.len() == 1 {
        let mut w = Matrix::zeros(2, r);
        w.set(0, d.0, 1.0);
        w.set(1, others[0], 1.0);
        return Network::new(vec![AffineLayer::new(w, vec![0.0; 2], false)?]);
    }

    let mut layers = Vec::new();

    // First hidden layer reads the raw input:
    // [y_d, relu(o0 - o1), relu(o1), o2, o3, ...]
    let width = 3 + (others.len() - 2);
    let mut w = Matrix::zeros(width, r);
    w.set(0, d.0, 1.0);
    w.set(1, others[0], 1.0);
    w.set(1, others[1], -1.0);
    w.set(2, others[1], 1.0);
    for (k, &o) in others[2..].iter().enumerate() {
        w.set(3 + k, o, 1.0);
    }
    layers.push(AffineLayer::new(w, vec![0.0; width], true)?);

    // Hidden layout from here on: [y_d, A, B, rest...] with running max A + B.
    let mut rest = others.len() - 2;
    while rest > 0 {
        let in_width = 3 + rest;
        let out_width = 3 + rest - 1;
        let mut w = Matrix::zeros(out_width, in_width);
        w.set(0, 0, 1.0);
        // relu(A + B - next)
        w.set(1, 1, 1.0);
        w.set(1, 2, 1.0);
        w.set(1, 3, -1.0);
        // relu(next)
        w.set(2, 3, 1.0);
        for k in 0..rest - 1 {
            w.set(3 + k, 4 + k, 1.0);
        }
        layers.push(AffineLayer::new(w, vec![0.0; out_width], true)?);
        rest -= 1;
    }

    let mut out = Matrix::zeros(2, 3);
    out.set(0, 0, 1.0);
    out.set(1, 1, 1.0);
    out.set(1, 2, 1.0);
    layers.push(AffineLayer::new(out, vec![0.0; 2], false)?);
    Network::new(layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_classes() {
        let m = max_gadget_layer(3, Label(1)).unwrap();
        let out = m.forward(&[0.2, 0.7, 0.5]).unwrap();
        assert!((out[0] - 0.7).abs() < 1e-15);
        assert!((out[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn two_classes_passes_through() {
        let m = max_gadget_layer(2, Label(0)).unwrap();
        assert_eq!(m.forward(&[0.3, 0.9]).unwrap(), vec![0.3, 0.9]);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(max_gadget_layer(1, Label(0)).is_err());
        assert!(max_gadget_layer(3, Label(3)).is_err());
    }
}
