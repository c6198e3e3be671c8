//! The occlusion network: a ReLU network whose input is the occlusion
//! position (and, for multiform occlusions, the per-pixel color shifts) and
//! whose output is the occluded image.
//!
//! Input layout: `a`, `w`, `b`, `h`, then for multiform occlusions one
//! non-negative upward shift `p_k` per image entry followed by one downward
//! shift `q_k` per image entry (flat image order).
//!
//! Hidden stages, for an `m x n x c` image:
//! 1. `2(n + m)` neurons: `relu(a - k)` and `relu(k + 1 - a - w)` for every
//!    column `k`, then `relu(b - j)` and `relu(j + 1 - b - h)` for every row.
//! 2. `n + m` neurons: per-column and per-row coverage `relu(1 - left - right)`.
//! 3. `n m` neurons: pixel mask `relu(cov_i + cov_j - 1)`.
//! 4. multiform only, `2 n m c` neurons: gated shifts `relu(mask + p - 1)` and
//!    `relu(mask + q - 1)`.
//!
//! The output layer adds `mask * (mu - x)` (uniform) or `g+ - g-` (multiform)
//! to the flattened image. Multiform shift inputs ride along through the
//! earlier stages as `relu(p) = p`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{concatenate, AffineLayer, Matrix, Network};
use crate::occlusion::{OcclusionSpec, Placement, PositionMode};
use crate::verifier::InputBox;

pub const A: usize = 0;
pub const W: usize = 1;
pub const B: usize = 2;
pub const H: usize = 3;

/// Closed bounds on the occlusion position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionRegion {
    pub a_lo: f64,
    pub a_hi: f64,
    pub b_lo: f64,
    pub b_hi: f64,
}

impl PositionRegion {
    pub fn new(a_lo: f64, a_hi: f64, b_lo: f64, b_hi: f64) -> Self {
        PositionRegion { a_lo, a_hi, b_lo, b_hi }
    }

    /// The whole position domain `[1, n] x [1, m]`.
    pub fn full(m: usize, n: usize) -> Self {
        PositionRegion::new(1.0, n as f64, 1.0, m as f64)
    }

    pub fn point(a: f64, b: f64) -> Self {
        PositionRegion::new(a, a, b, b)
    }

    pub fn contains(&self, a: f64, b: f64) -> bool {
        (self.a_lo..=self.a_hi).contains(&a) && (self.b_lo..=self.b_hi).contains(&b)
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.a_lo + self.a_hi), 0.5 * (self.b_lo + self.b_hi))
    }

    pub fn check(&self, m: usize, n: usize) -> Result<()> {
        let ok = 1.0 <= self.a_lo
            && self.a_lo <= self.a_hi
            && self.a_hi <= n as f64
            && 1.0 <= self.b_lo
            && self.b_lo <= self.b_hi
            && self.b_hi <= m as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidOcclusion(format!(
                "region a in [{}, {}], b in [{}, {}] is not inside [1, {n}] x [1, {m}]",
                self.a_lo, self.a_hi, self.b_lo, self.b_hi
            )))
        }
    }
}

/// Where each kind of input lives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputLayout {
    pub a: usize,
    pub w: usize,
    pub b: usize,
    pub h: usize,
    /// First index of the upward shifts `p_k`, if multiform.
    pub up_start: Option<usize>,
    /// First index of the downward shifts `q_k`, if multiform.
    pub down_start: Option<usize>,
    /// Number of shifts in each half.
    pub shift_count: usize,
}

/// An occlusion network plus what a verifier needs to know about its inputs.
#[derive(Debug, Clone)]
pub struct OnnBundle {
    pub onn: Network,
    pub layout: InputLayout,
    /// Inputs pinned to constants (`w` and `h`).
    pub fixed_inputs: Vec<(usize, f64)>,
    /// Default intervals of the free inputs over the whole position domain.
    pub free_inputs: Vec<(usize, f64, f64)>,
    image: Image,
    spec: OcclusionSpec,
}

/// Builds the occlusion network for `x` under `spec`.
pub fn build_onn(x: &Image, spec: &OcclusionSpec) -> Result<OnnBundle> {
    spec.validate(x)?;
    let (m, n, c) = (x.height(), x.width(), x.channels());
    let pixels = n * m;
    let entries = pixels * c;
    let eps = spec.eps();
    let shifts = if eps.is_some() { entries } else { 0 };
    let input_dim = 4 + 2 * shifts;
    let up = 4;
    let down = 4 + shifts;
    let mut layers = Vec::with_capacity(5);

    // Stage 1: distance of every column/row index to the occlusion edges.
    let s1 = 2 * (n + m);
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(s1 + 2 * shifts);
    let mut bias = Vec::with_capacity(s1 + 2 * shifts);
    for k in 1..=n {
        rows.push(vec![(A, 1.0)]);
        bias.push(-(k as f64));
    }
    for k in 1..=n {
        rows.push(vec![(A, -1.0), (W, -1.0)]);
        bias.push(k as f64 + 1.0);
    }
    for j in 1..=m {
        rows.push(vec![(B, 1.0)]);
        bias.push(-(j as f64));
    }
    for j in 1..=m {
        rows.push(vec![(B, -1.0), (H, -1.0)]);
        bias.push(j as f64 + 1.0);
    }
    for k in 0..2 * shifts {
        rows.push(vec![(up + k, 1.0)]);
        bias.push(0.0);
    }
    layers.push(sparse_layer(input_dim, rows, bias, true)?);

    // Stage 2: per-axis coverage.
    let s2 = n + m;
    let mut rows = Vec::with_capacity(s2 + 2 * shifts);
    let mut bias = Vec::with_capacity(s2 + 2 * shifts);
    for k in 0..n {
        rows.push(vec![(k, -1.0), (n + k, -1.0)]);
        bias.push(1.0);
    }
    for j in 0..m {
        rows.push(vec![(2 * n + j, -1.0), (2 * n + m + j, -1.0)]);
        bias.push(1.0);
    }
    for k in 0..2 * shifts {
        rows.push(vec![(s1 + k, 1.0)]);
        bias.push(0.0);
    }
    layers.push(sparse_layer(s1 + 2 * shifts, rows, bias, true)?);

    // Stage 3: pixel mask, pixel (i, j) at flat position (i - 1) * m + (j - 1).
    let mut rows = Vec::with_capacity(pixels + 2 * shifts);
    let mut bias = Vec::with_capacity(pixels + 2 * shifts);
    for i in 0..n {
        for j in 0..m {
            rows.push(vec![(i, 1.0), (n + j, 1.0)]);
            bias.push(-1.0);
        }
    }
    for k in 0..2 * shifts {
        rows.push(vec![(s2 + k, 1.0)]);
        bias.push(0.0);
    }
    layers.push(sparse_layer(s2 + 2 * shifts, rows, bias, true)?);

    let pixel_of = |k: usize| k / c;
    if eps.is_some() {
        // Stage 4: gate every shift by its pixel's mask.
        let mut rows = Vec::with_capacity(2 * shifts);
        for half in 0..2 {
            for k in 0..entries {
                rows.push(vec![(pixel_of(k), 1.0), (pixels + half * entries + k, 1.0)]);
            }
        }
        layers.push(sparse_layer(pixels + 2 * shifts, rows, vec![-1.0; 2 * shifts], true)?);

        let rows = (0..entries).map(|k| vec![(k, 1.0), (entries + k, -1.0)]).collect();
        layers.push(sparse_layer(2 * entries, rows, x.as_slice().to_vec(), false)?);
    } else {
        let rows = (0..entries)
            .map(|k| {
                let mu = spec.mu(k % c).unwrap_or(0.0);
                vec![(pixel_of(k), mu - x.as_slice()[k])]
            })
            .collect();
        layers.push(sparse_layer(pixels, rows, x.as_slice().to_vec(), false)?);
    }

    let onn = Network::new(layers)?;
    let layout = InputLayout {
        a: A,
        w: W,
        b: B,
        h: H,
        up_start: eps.map(|_| up),
        down_start: eps.map(|_| down),
        shift_count: shifts,
    };
    let mut free_inputs = vec![(A, 1.0, n as f64), (B, 1.0, m as f64)];
    if let Some(eps) = eps {
        for (k, &v) in x.as_slice().iter().enumerate() {
            free_inputs.push((up + k, 0.0, eps.min(1.0 - v)));
        }
        for (k, &v) in x.as_slice().iter().enumerate() {
            free_inputs.push((down + k, 0.0, eps.min(v)));
        }
    }
    Ok(OnnBundle {
        onn,
        layout,
        fixed_inputs: vec![(W, spec.w as f64), (H, spec.h as f64)],
        free_inputs,
        image: x.clone(),
        spec: spec.clone(),
    })
}

fn sparse_layer(cols: usize, rows: Vec<Vec<(usize, f64)>>, bias: Vec<f64>, relu: bool) -> Result<AffineLayer> {
    let weights = Matrix::sparse_from_rows(rows.len(), cols, rows);
    AffineLayer::new(weights, bias, relu)
}

impl OnnBundle {
    pub fn image(&self) -> &Image {
        &self.image
    }

    pub fn spec(&self) -> &OcclusionSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.onn.input_dim()
    }

    /// Network input for a concrete placement.
    ///
    /// Multiform deltas are split into their positive and negative parts and
    /// each part is clipped so the shifted pixel stays in `[0, 1]`.
    pub fn theta(&self, placement: &Placement) -> Result<Vec<f64>> {
        let mut t = vec![0.0; self.input_dim()];
        t[A] = placement.a;
        t[B] = placement.b;
        for &(k, v) in &self.fixed_inputs {
            t[k] = v;
        }
        if let (Some(up), Some(down)) = (self.layout.up_start, self.layout.down_start) {
            let deltas = placement
                .deltas
                .as_ref()
                .ok_or_else(|| Error::InvalidOcclusion("multiform occlusion needs deltas".into()))?;
            if deltas.len() != self.layout.shift_count {
                return Err(Error::DimensionMismatch {
                    context: "placement deltas",
                    expected: self.layout.shift_count,
                    found: deltas.len(),
                });
            }
            for (k, (&d, &v)) in deltas.iter().zip(self.image.as_slice()).enumerate() {
                t[up + k] = d.max(0.0).min(1.0 - v);
                t[down + k] = (-d).max(0.0).min(v);
            }
        }
        Ok(t)
    }

    /// Interval box over the inputs for one position region.
    pub fn input_box(&self, region: &PositionRegion) -> Result<InputBox> {
        region.check(self.image.height(), self.image.width())?;
        let dim = self.input_dim();
        let mut lo = vec![0.0; dim];
        let mut hi = vec![0.0; dim];
        for &(k, v) in &self.fixed_inputs {
            lo[k] = v;
            hi[k] = v;
        }
        for &(k, l, h) in &self.free_inputs {
            lo[k] = l;
            hi[k] = h;
        }
        lo[A] = region.a_lo;
        hi[A] = region.a_hi;
        lo[B] = region.b_lo;
        hi[B] = region.b_hi;
        let mut integer = vec![false; dim];
        if self.spec.positions == PositionMode::Integer {
            integer[A] = true;
            integer[B] = true;
        }
        InputBox::with_integers(lo, hi, integer)
    }

    /// `F o O`.
    pub fn compose(&self, f: &Network) -> Result<Network> {
        concatenate(&self.onn, f)
    }

    /// Description of the inputs for external tools.
    pub fn manifest(&self, region: &PositionRegion) -> Result<OnnManifest> {
        let b = self.input_box(region)?;
        let mut names = vec![
            ("a".to_string(), A),
            ("w".to_string(), W),
            ("b".to_string(), B),
            ("h".to_string(), H),
        ];
        if let (Some(up), Some(down)) = (self.layout.up_start, self.layout.down_start) {
            for k in 0..self.layout.shift_count {
                names.push((format!("up_{k}"), up + k));
            }
            for k in 0..self.layout.shift_count {
                names.push((format!("down_{k}"), down + k));
            }
        }
        let inputs = names
            .into_iter()
            .map(|(name, index)| ManifestInput {
                name,
                index,
                lower: b.lo[index],
                upper: b.hi[index],
                fixed: b.lo[index] == b.hi[index],
                integer: b.integer[index],
            })
            .collect();
        Ok(OnnManifest {
            image_height: self.image.height(),
            image_width: self.image.width(),
            channels: self.image.channels(),
            spec: self.spec.clone(),
            inputs,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestInput {
    pub name: String,
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
    pub fixed: bool,
    pub integer: bool,
}

/// Sidecar written next to an exported network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnnManifest {
    pub image_height: usize,
    pub image_width: usize,
    pub channels: usize,
    pub spec: OcclusionSpec,
    pub inputs: Vec<ManifestInput>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::occlusion::occlude;

    fn sample2x2() -> Image {
        Image::new(2, 2, 1, vec![0.4, 0.6, 0.55, 0.72]).unwrap()
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-9)
    }

    #[test]
    fn sample2x2_stages() {
        let spec = OcclusionSpec::uniform(1, 1, 0.0, PositionMode::Real);
        let bundle = build_onn(&sample2x2(), &spec).unwrap();
        let t = bundle
            .onn
            .forward_trace(&bundle.theta(&Placement::at(1.0, 2.0)).unwrap())
            .unwrap();
        assert_eq!(&t.post[0][..4], &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(&t.post[0][4..], &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(t.post[2], vec![0.0, 1.0, 0.0, 0.0]);
        assert!(close(t.output(), &[0.4, 0.0, 0.55, 0.72]));

        let t = bundle
            .onn
            .forward_trace(&bundle.theta(&Placement::at(1.5, 2.0)).unwrap())
            .unwrap();
        assert!(close(&t.post[2], &[0.0, 0.5, 0.0, 0.5]));
        assert!(close(t.output(), &[0.4, 0.3, 0.55, 0.36]));
    }

    #[test]
    fn sample2x2_multiform() {
        let spec = OcclusionSpec::multiform(1, 1, 0.1, PositionMode::Integer);
        let bundle = build_onn(&sample2x2(), &spec).unwrap();
        assert_eq!(bundle.input_dim(), 4 + 2 * 4);
        let up = Placement::with_deltas(1.0, 2.0, vec![0.0, 0.1, 0.0, 0.0]);
        let out = bundle.onn.forward(&bundle.theta(&up).unwrap()).unwrap();
        assert!(close(&out, &[0.4, 0.7, 0.55, 0.72]));
        let down = Placement::with_deltas(1.0, 2.0, vec![0.0, -0.1, 0.0, 0.0]);
        let out = bundle.onn.forward(&bundle.theta(&down).unwrap()).unwrap();
        assert!(close(&out, &[0.4, 0.5, 0.55, 0.72]));
    }

    #[test]
    fn rgb_mask_is_shared_across_channels() {
        let data: Vec<f64> = (0..12).map(|k| k as f64 / 12.0).collect();
        let img = Image::new(2, 2, 3, data).unwrap();
        let spec = OcclusionSpec {
            w: 1,
            h: 2,
            coloring: crate::occlusion::Coloring::Uniform {
                mu: vec![1.0, 0.0, 0.5],
            },
            positions: PositionMode::Real,
        };
        let bundle = build_onn(&img, &spec).unwrap();
        for (a, b) in [(1.0, 1.0), (2.0, 1.0), (1.25, 1.5), (1.7, 2.0)] {
            let p = Placement::at(a, b);
            let out = bundle.onn.forward(&bundle.theta(&p).unwrap()).unwrap();
            let want = occlude(&img, &spec, &p).unwrap();
            assert!(close(&out, want.as_slice()), "at ({a}, {b})");
        }
    }

    #[test]
    fn input_box_pins_size_and_marks_integers() {
        let spec = OcclusionSpec::uniform(1, 1, 0.0, PositionMode::Integer);
        let bundle = build_onn(&sample2x2(), &spec).unwrap();
        let b = bundle.input_box(&PositionRegion::full(2, 2)).unwrap();
        assert_eq!(b.lo, vec![1.0, 1.0, 1.0, 1.0]);
        assert_eq!(b.hi, vec![2.0, 1.0, 2.0, 1.0]);
        assert_eq!(b.integer, vec![true, false, true, false]);
        assert!(bundle.input_box(&PositionRegion::new(1.0, 3.0, 1.0, 2.0)).is_err());
    }

    #[test]
    fn multiform_shift_bounds_keep_pixels_in_range() {
        let img = Image::new(1, 2, 1, vec![0.95, 0.02]).unwrap();
        let spec = OcclusionSpec::multiform(1, 1, 0.1, PositionMode::Integer);
        let bundle = build_onn(&img, &spec).unwrap();
        let b = bundle.input_box(&PositionRegion::full(1, 2)).unwrap();
        assert!(close(&b.hi[4..6], &[0.05, 0.1]));
        assert!(close(&b.hi[6..8], &[0.1, 0.02]));
    }

    #[test]
    fn rejects_large_epsilon() {
        let spec = OcclusionSpec::multiform(1, 1, 1.5, PositionMode::Integer);
        assert!(build_onn(&sample2x2(), &spec).is_err());
    }

    #[test]
    fn neuron_count_depends_only_on_image_shape() {
        let spec = OcclusionSpec::uniform(2, 2, 0.0, PositionMode::Integer);
        let img = Image::new(4, 5, 1, vec![0.5; 20]).unwrap();
        let bundle = build_onn(&img, &spec).unwrap();
        assert_eq!(bundle.onn.relu_count(), 2 * (5 + 4) + (5 + 4) + 20);
        let multi = OcclusionSpec::multiform(2, 2, 0.2, PositionMode::Integer);
        let bundle = build_onn(&img, &multi).unwrap();
        assert_eq!(bundle.onn.relu_count(), 2 * (5 + 4) + (5 + 4) + 20 + 3 * 40 + 40);
    }
}
