//! Symbolic linear bound propagation.
//!
//! Every neuron gets a lower and an upper affine form over the free inputs
//! (inputs whose interval is not a single point). Unstable ReLUs use the
//! usual triangle-style relaxation: the upper line through `(l, 0)` and
//! `(u, u)`, and a lower line of slope 0 or 1, whichever keeps the smaller
//! area. Concrete bounds are the intersection of the forms' range with plain
//! interval arithmetic.
//!
//! ReLUs fixed by the search are replaced by the identity (active) or zero
//! (inactive). Each fixed phase also yields a linear necessary condition on
//! the inputs, `U_z(x) >= 0` or `L_z(x) <= 0`, which the search hands to the
//! LP and uses to shrink the box.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Network;

use super::InputBox;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        v >= self.lo - tol && v <= self.hi + tol
    }
}

/// Pre-activation bounds of every neuron, layer by layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronBounds {
    pub layers: Vec<Vec<Interval>>,
}

impl NeuronBounds {
    /// Bounds of the network outputs.
    pub fn output(&self) -> &[Interval] {
        self.layers.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// `Some(true)` if the ReLU is always active, `Some(false)` if always
    /// inactive, `None` if unstable.
    pub fn phase(&self, layer: usize, neuron: usize) -> Option<bool> {
        let b = self.layers[layer][neuron];
        if b.lo >= 0.0 {
            Some(true)
        } else if b.hi <= 0.0 {
            Some(false)
        } else {
            None
        }
    }

    /// Number of unstable neurons over the hidden (ReLU) layers.
    pub fn unstable_count(&self) -> usize {
        let hidden = self.layers.len().saturating_sub(1);
        (0..hidden)
            .map(|l| {
                (0..self.layers[l].len())
                    .filter(|&k| self.phase(l, k).is_none())
                    .count()
            })
            .sum()
    }
}

/// Sound bounds of every pre-activation value over the box.
pub fn propagate_bounds(net: &Network, input_box: &InputBox) -> Result<NeuronBounds> {
    if input_box.dim() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "bound propagation box",
            expected: net.input_dim(),
            found: input_box.dim(),
        });
    }
    let phases = PhaseMap::new(net);
    let analysis = analyze(net, &input_box.lo, &input_box.hi, &phases);
    Ok(NeuronBounds { layers: analysis.pre })
}

/// ReLU phases fixed by branching: 0 free, 1 active, -1 inactive.
#[derive(Debug, Clone)]
pub(crate) struct PhaseMap {
    pub layers: Vec<Vec<i8>>,
}

impl PhaseMap {
    pub fn new(net: &Network) -> Self {
        PhaseMap {
            layers: net
                .layers()
                .iter()
                .filter(|l| l.relu)
                .map(|l| vec![0; l.output_dim()])
                .collect(),
        }
    }

    pub fn get(&self, layer: usize, neuron: usize) -> i8 {
        self.layers.get(layer).map_or(0, |l| l[neuron])
    }
}

/// `coeffs . x[free] + constant >= 0`.
#[derive(Debug, Clone)]
pub(crate) struct LinearConstraint {
    pub coeffs: Vec<f64>,
    pub constant: f64,
}

/// Affine forms over `d` free inputs, one row of `d + 1` values per neuron
/// (the constant last).
#[derive(Debug, Clone)]
struct Forms {
    d: usize,
    data: Vec<f64>,
}

impl Forms {
    fn zeros(rows: usize, d: usize) -> Self {
        Forms {
            d,
            data: vec![0.0; rows * (d + 1)],
        }
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.data[r * (self.d + 1)..(r + 1) * (self.d + 1)]
    }

    fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let d = self.d;
        &mut self.data[r * (d + 1)..(r + 1) * (d + 1)]
    }
}

/// Range of an affine form over the free part of a box.
pub(crate) fn form_range(form: &[f64], free: &[usize], lo: &[f64], hi: &[f64]) -> (f64, f64) {
    let d = free.len();
    let mut min = form[d];
    let mut max = form[d];
    for (f, &k) in free.iter().enumerate() {
        let c = form[f];
        if c > 0.0 {
            min += c * lo[k];
            max += c * hi[k];
        } else if c < 0.0 {
            min += c * hi[k];
            max += c * lo[k];
        }
    }
    (min, max)
}

/// Everything the search needs from one propagation pass.
#[derive(Debug, Clone)]
pub(crate) struct Analysis {
    /// Pre-activation bounds, tightened by the fixed phases.
    pub pre: Vec<Vec<Interval>>,
    pub free: Vec<usize>,
    /// Lower/upper forms of every output neuron, `d + 1` values each.
    pub out_lower: Vec<Vec<f64>>,
    pub out_upper: Vec<Vec<f64>>,
    /// Necessary conditions implied by the fixed phases.
    pub constraints: Vec<LinearConstraint>,
    /// Some fixed phase contradicts the bounds: the node is empty.
    pub infeasible: bool,
}

pub(crate) fn analyze(net: &Network, lo: &[f64], hi: &[f64], phases: &PhaseMap) -> Analysis {
    let free: Vec<usize> = (0..lo.len()).filter(|&k| lo[k] < hi[k]).collect();
    let d = free.len();

    // Input forms and intervals.
    let mut lower = Forms::zeros(lo.len(), d);
    for k in 0..lo.len() {
        let row = lower.row_mut(k);
        match free.iter().position(|&f| f == k) {
            Some(f) => row[f] = 1.0,
            None => row[d] = lo[k],
        }
    }
    let mut upper = lower.clone();
    let mut post: Vec<Interval> = lo.iter().zip(hi).map(|(&l, &h)| Interval { lo: l, hi: h }).collect();
    let mut zero_rows = vec![false; lo.len()];

    let mut pre_all = Vec::with_capacity(net.layers().len());
    let mut constraints = Vec::new();
    let mut infeasible = false;

    for (li, layer) in net.layers().iter().enumerate() {
        let rows = layer.output_dim();
        let mut lz = Forms::zeros(rows, d);
        let mut uz = Forms::zeros(rows, d);
        let mut pre = Vec::with_capacity(rows);
        for r in 0..rows {
            let b = layer.biases[r];
            let (mut ibp_lo, mut ibp_hi) = (b, b);
            {
                let lrow = lz.row_mut(r);
                lrow[d] = b;
            }
            uz.row_mut(r)[d] = b;
            for (c, w) in layer.weights.row(r) {
                if w == 0.0 {
                    continue;
                }
                let p = post[c];
                if w > 0.0 {
                    ibp_lo += w * p.lo;
                    ibp_hi += w * p.hi;
                } else {
                    ibp_lo += w * p.hi;
                    ibp_hi += w * p.lo;
                }
                if zero_rows[c] {
                    continue;
                }
                let (src_l, src_u) = if w > 0.0 {
                    (lower.row(c), upper.row(c))
                } else {
                    (upper.row(c), lower.row(c))
                };
                let lrow = &mut lz.data[r * (d + 1)..(r + 1) * (d + 1)];
                for (t, s) in lrow.iter_mut().zip(src_l) {
                    *t += w * s;
                }
                let urow = &mut uz.data[r * (d + 1)..(r + 1) * (d + 1)];
                for (t, s) in urow.iter_mut().zip(src_u) {
                    *t += w * s;
                }
            }
            let (sym_lo, _) = form_range(lz.row(r), &free, lo, hi);
            let (_, sym_hi) = form_range(uz.row(r), &free, lo, hi);
            pre.push(Interval {
                lo: sym_lo.max(ibp_lo),
                hi: sym_hi.min(ibp_hi),
            });
        }

        if !layer.relu {
            pre_all.push(pre);
            lower = lz;
            upper = uz;
            break;
        }

        // ReLU relaxation.
        let mut next_post = Vec::with_capacity(rows);
        let mut next_zero = vec![false; rows];
        let mut ly = Forms::zeros(rows, d);
        let mut uy = Forms::zeros(rows, d);
        for r in 0..rows {
            let mut iv = pre[r];
            match phases.get(li, r) {
                1 => {
                    constraints.push(LinearConstraint {
                        coeffs: uz.row(r)[..d].to_vec(),
                        constant: uz.row(r)[d],
                    });
                    iv.lo = iv.lo.max(0.0);
                    if iv.hi < 0.0 {
                        infeasible = true;
                    }
                    ly.row_mut(r).copy_from_slice(lz.row(r));
                    uy.row_mut(r).copy_from_slice(uz.row(r));
                    next_post.push(Interval {
                        lo: iv.lo,
                        hi: iv.hi.max(0.0),
                    });
                }
                -1 => {
                    // -L_z(x) >= 0
                    constraints.push(LinearConstraint {
                        coeffs: lz.row(r)[..d].iter().map(|v| -v).collect(),
                        constant: -lz.row(r)[d],
                    });
                    iv.hi = iv.hi.min(0.0);
                    if iv.lo > 0.0 {
                        infeasible = true;
                    }
                    next_zero[r] = true;
                    next_post.push(Interval { lo: 0.0, hi: 0.0 });
                }
                _ => {
                    if iv.lo >= 0.0 {
                        ly.row_mut(r).copy_from_slice(lz.row(r));
                        uy.row_mut(r).copy_from_slice(uz.row(r));
                        next_post.push(iv);
                    } else if iv.hi <= 0.0 {
                        next_zero[r] = true;
                        next_post.push(Interval { lo: 0.0, hi: 0.0 });
                    } else {
                        let (l, u) = (iv.lo, iv.hi);
                        let slope = u / (u - l);
                        let urow = uy.row_mut(r);
                        for (t, s) in urow.iter_mut().zip(uz.row(r)) {
                            *t = slope * s;
                        }
                        urow[d] -= slope * l;
                        if u > -l {
                            ly.row_mut(r).copy_from_slice(lz.row(r));
                        }
                        next_post.push(Interval { lo: 0.0, hi: u });
                    }
                }
            }
            pre[r] = iv;
        }
        pre_all.push(pre);
        lower = ly;
        upper = uy;
        post = next_post;
        zero_rows = next_zero;
    }

    let outputs = net.output_dim();
    Analysis {
        pre: pre_all,
        free,
        out_lower: (0..outputs).map(|r| lower.row(r).to_vec()).collect(),
        out_upper: (0..outputs).map(|r| upper.row(r).to_vec()).collect(),
        constraints,
        infeasible,
    }
}

/// Upper form of output `out` over the free inputs, from one backward pass
/// through the ReLU relaxations of `a.pre`. Forward forms lose the
/// correlation between the lower and upper chains at every layer; going
/// backwards from a single output keeps one chain, which is usually tighter.
pub(crate) fn backward_upper(net: &Network, a: &Analysis, phases: &PhaseMap, lo: &[f64], out: usize) -> Vec<f64> {
    let top = a.pre.len() - 1;
    let mut lam = vec![0.0; net.layers()[top].output_dim()];
    lam[out] = 1.0;
    let (coeffs, mut constant) = backward(net, &a.pre, phases, top, lam);
    let d = a.free.len();
    let mut form = vec![0.0; d + 1];
    let mut f = 0;
    for (k, &l) in coeffs.iter().enumerate() {
        if f < d && a.free[f] == k {
            form[f] = l;
            f += 1;
        } else {
            constant += l * lo[k];
        }
    }
    form[d] = constant;
    form
}

/// Pushes `lam`, a row over the pre-activations of layer `top`, back to the
/// network inputs using the upper relaxation of `lam . z`. Returns the input
/// coefficients and the constant.
fn backward(net: &Network, pre: &[Vec<Interval>], phases: &PhaseMap, top: usize, mut lam: Vec<f64>) -> (Vec<f64>, f64) {
    let mut constant = 0.0;
    for li in (0..=top).rev() {
        let layer = &net.layers()[li];
        if li < top {
            // `lam` is over the ReLU outputs of this layer; move it to the inputs.
            for (r, l) in lam.iter_mut().enumerate() {
                if *l == 0.0 {
                    continue;
                }
                let iv = pre[li][r];
                match phases.get(li, r) {
                    1 => {}
                    -1 => *l = 0.0,
                    _ if iv.lo >= 0.0 => {}
                    _ if iv.hi <= 0.0 => *l = 0.0,
                    _ => {
                        if *l > 0.0 {
                            let slope = iv.hi / (iv.hi - iv.lo);
                            constant -= *l * slope * iv.lo;
                            *l *= slope;
                        } else if iv.hi <= -iv.lo {
                            *l = 0.0;
                        }
                    }
                }
            }
        }
        let mut prev = vec![0.0; layer.input_dim()];
        for (r, &l) in lam.iter().enumerate() {
            if l == 0.0 {
                continue;
            }
            constant += l * layer.biases[r];
            for (c, w) in layer.weights.row(r) {
                prev[c] += l * w;
            }
        }
        lam = prev;
    }
    (lam, constant)
}
