//! Concrete re-checking of witnesses, and the max-gadget property network.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::Image;
use crate::model::{concatenate, max_gadget_layer, Label, Network};
use crate::occlusion::{axis_coverage, occlude, Placement};
use crate::onn::{OnnBundle, A, B};

use super::{propagate_bounds, InputBox, Query};

/// Agreement required between the occlusion network and the reference
/// occlusion function.
const ORACLE_TOL: f64 = 1e-9;

/// A validated occluded image that the classifier gets wrong.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub placement: Placement,
    /// Raw network input the search produced.
    pub theta: Vec<f64>,
    #[serde(skip)]
    pub image: Option<Image>,
    pub original: Label,
    pub predicted: Label,
    /// `F_l - F_q` on the occluded image.
    pub margin: f64,
}

/// Re-derives the occluded image behind `witness` and checks it concretely.
///
/// The witness must lie in the query box; the occlusion network's output must
/// match the reference occlusion function at the recovered placement; and the
/// classifier `f` must score the adversarial label at least as high as the
/// correct one while no longer predicting the correct label. Anything else
/// returns `None`.
pub fn validate_counterexample(
    bundle: &OnnBundle,
    f: &Network,
    query: &Query,
    witness: &[f64],
) -> Option<Counterexample> {
    if !query.input_box.contains(witness, 1e-9) || witness.len() != bundle.input_dim() {
        return None;
    }
    let x = bundle.image();
    let spec = bundle.spec();
    let mut theta = witness.to_vec();
    // snap tiny excursions back into the box
    for (k, v) in theta.iter_mut().enumerate() {
        *v = v.clamp(query.input_box.lo[k], query.input_box.hi[k]);
    }
    let onn_image = bundle.onn.forward(&theta).ok()?;

    let (a, b) = (theta[A], theta[B]);
    let deltas = spec.eps().map(|eps| {
        let c = x.channels();
        let m = x.height();
        (0..x.len())
            .map(|k| {
                let pixel = k / c;
                let (i, j) = (pixel / m + 1, pixel % m + 1);
                let s = (axis_coverage(i as f64, a, spec.w) + axis_coverage(j as f64, b, spec.h) - 1.0).max(0.0);
                if s > 0.0 {
                    ((onn_image[k] - x.as_slice()[k]) / s).clamp(-eps, eps)
                } else {
                    0.0
                }
            })
            .collect::<Vec<_>>()
    });
    let placement = Placement { a, b, deltas };
    let oracle = occlude(x, spec, &placement).ok()?;
    let gap = oracle
        .as_slice()
        .iter()
        .zip(&onn_image)
        .map(|(u, v)| (u - v).abs())
        .fold(0.0, f64::max);
    if gap > ORACLE_TOL {
        tracing::warn!(gap, "occlusion network disagrees with the reference function");
        return None;
    }
    let y = f.forward(oracle.as_slice()).ok()?;
    let (q, l) = (query.correct, query.adversarial);
    let margin = y[l.0] - y[q.0];
    let predicted = crate::model::argmax(&y);
    if margin < 0.0 || predicted == q {
        return None;
    }
    Some(Counterexample {
        placement,
        theta,
        image: Some(oracle),
        original: q,
        predicted,
        margin,
    })
}

/// `M o (F + C)` for a composed network: output 0 is the score of `q`,
/// output 1 the best other score, both shifted by a constant `C` taken from
/// bound propagation so the gadget only sees non-negative values.
///
/// The property "no label beats `q` anywhere in the box" becomes a query with
/// correct label 0 and adversarial label 1.
pub fn omnn(composed: &Network, input_box: &InputBox, q: Label) -> Result<Network> {
    composed.check_label(q)?;
    let bounds = propagate_bounds(composed, input_box)?;
    let min = bounds.output().iter().map(|iv| iv.lo).fold(f64::INFINITY, f64::min);
    let shift = (-min).max(0.0);
    let gadget = max_gadget_layer(composed.output_dim(), q)?;
    concatenate(&composed.with_output_shift(shift), &gadget)
}
