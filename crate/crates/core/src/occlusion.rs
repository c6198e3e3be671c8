//! Reference implementation of the occlusion function.
//!
//! A `w x h` occlusion placed at `(a, b)` is a grid of occlusion pixels at
//! columns `a, a+1, .., a+w-1` and rows `b, .., b+h-1`. Positions may be
//! fractional; an image pixel is affected by an occlusion pixel when both
//! coordinate distances are below 1. The per-pixel occlusion factor is
//! `s = max(0, cov_i + cov_j - 1)`, where `cov_i` sums `1 - |i - i'|` over the
//! occlusion columns `i'` within distance 1 (capped at 1), and likewise for
//! rows. The occluded value is `x - s (x - zeta)`, clamped to `[0, 1]`.
//!
//! Occlusion pixels that fall outside the image simply affect nothing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// How occluded pixels are colored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Coloring {
    /// One color per channel for the whole rectangle.
    Uniform { mu: Vec<f64> },
    /// Every occluded pixel may shift by its own delta in `[-eps, eps]`.
    Multiform { eps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionMode {
    Integer,
    Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionSpec {
    pub w: usize,
    pub h: usize,
    pub coloring: Coloring,
    pub positions: PositionMode,
}

impl OcclusionSpec {
    pub fn uniform(w: usize, h: usize, mu: f64, positions: PositionMode) -> Self {
        OcclusionSpec {
            w,
            h,
            coloring: Coloring::Uniform { mu: vec![mu] },
            positions,
        }
    }

    pub fn multiform(w: usize, h: usize, eps: f64, positions: PositionMode) -> Self {
        OcclusionSpec {
            w,
            h,
            coloring: Coloring::Multiform { eps },
            positions,
        }
    }

    pub fn is_multiform(&self) -> bool {
        matches!(self.coloring, Coloring::Multiform { .. })
    }

    /// Multiform bound, or `None` for uniform occlusions.
    pub fn eps(&self) -> Option<f64> {
        match self.coloring {
            Coloring::Multiform { eps } => Some(eps),
            Coloring::Uniform { .. } => None,
        }
    }

    /// Uniform color for channel `ch`. A single value applies to all channels.
    pub fn mu(&self, ch: usize) -> Option<f64> {
        match &self.coloring {
            Coloring::Uniform { mu } if mu.len() == 1 => Some(mu[0]),
            Coloring::Uniform { mu } => mu.get(ch).copied(),
            Coloring::Multiform { .. } => None,
        }
    }

    /// Checks the spec against an image of the given shape.
    pub fn validate(&self, image: &Image) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidOcclusion(msg));
        if self.w == 0 || self.w > image.width() {
            return bad(format!("width {} outside 1..={}", self.w, image.width()));
        }
        if self.h == 0 || self.h > image.height() {
            return bad(format!("height {} outside 1..={}", self.h, image.height()));
        }
        match &self.coloring {
            Coloring::Uniform { mu } => {
                if mu.len() != 1 && mu.len() != image.channels() {
                    return bad(format!("expected 1 or {} colors, got {}", image.channels(), mu.len()));
                }
                if let Some(v) = mu.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return bad(format!("color {v} outside [0, 1]"));
                }
            }
            Coloring::Multiform { eps } => {
                if !(*eps > 0.0 && *eps <= 1.0) {
                    return bad(format!("epsilon {eps} outside (0, 1]"));
                }
            }
        }
        Ok(())
    }
}

/// Where the occlusion sits, plus the multiform deltas.
///
/// `deltas`, when present, holds one value per image entry in flat order; only
/// entries under the occlusion footprint have any effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub a: f64,
    pub b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deltas: Option<Vec<f64>>,
}

impl Placement {
    pub fn at(a: f64, b: f64) -> Self {
        Placement { a, b, deltas: None }
    }

    pub fn with_deltas(a: f64, b: f64, deltas: Vec<f64>) -> Self {
        Placement {
            a,
            b,
            deltas: Some(deltas),
        }
    }

    fn check(&self, image: &Image, spec: &OcclusionSpec) -> Result<()> {
        let n = image.width() as f64;
        let m = image.height() as f64;
        if !(1.0..=n).contains(&self.a) || !(1.0..=m).contains(&self.b) {
            return Err(Error::InvalidOcclusion(format!(
                "position ({}, {}) outside [1, {n}] x [1, {m}]",
                self.a, self.b
            )));
        }
        if spec.positions == PositionMode::Integer && (self.a.fract() != 0.0 || self.b.fract() != 0.0) {
            return Err(Error::InvalidOcclusion(format!(
                "position ({}, {}) is not integral",
                self.a, self.b
            )));
        }
        match (spec.eps(), &self.deltas) {
            (None, Some(_)) => Err(Error::InvalidOcclusion("deltas given for a uniform occlusion".into())),
            (Some(_), None) => Err(Error::InvalidOcclusion("multiform occlusion needs deltas".into())),
            (Some(eps), Some(d)) => {
                if d.len() != image.len() {
                    return Err(Error::DimensionMismatch {
                        context: "placement deltas",
                        expected: image.len(),
                        found: d.len(),
                    });
                }
                if let Some(v) = d.iter().find(|v| v.abs() > eps + 1e-12) {
                    return Err(Error::InvalidOcclusion(format!("delta {v} outside [-{eps}, {eps}]")));
                }
                Ok(())
            }
            (None, None) => Ok(()),
        }
    }
}

/// Coverage of image coordinate `k` by `len` unit-spaced occlusion coordinates
/// starting at `start`.
pub fn axis_coverage(k: f64, start: f64, len: usize) -> f64 {
    let mut total = 0.0;
    for t in 0..len {
        let d = (k - (start + t as f64)).abs();
        if d < 1.0 {
            total += 1.0 - d;
        }
    }
    total.min(1.0)
}

/// Occlusion factor of pixel `(i, j)` (column, row; 1-based).
pub fn occlusion_factor(i: usize, j: usize, placement: &Placement, spec: &OcclusionSpec, image: &Image) -> Result<f64> {
    if i == 0 || i > image.width() || j == 0 || j > image.height() {
        return Err(Error::InvalidOcclusion(format!(
            "pixel ({i}, {j}) outside {}x{} image",
            image.width(),
            image.height()
        )));
    }
    Ok(factor(i, j, placement, spec))
}

fn factor(i: usize, j: usize, placement: &Placement, spec: &OcclusionSpec) -> f64 {
    let ci = axis_coverage(i as f64, placement.a, spec.w);
    let cj = axis_coverage(j as f64, placement.b, spec.h);
    (ci + cj - 1.0).max(0.0)
}

/// Color assigned to channel `ch` of pixel `(i, j)`; the pixel must be occluded.
pub fn coloring_value(
    x: &Image,
    i: usize,
    j: usize,
    ch: usize,
    spec: &OcclusionSpec,
    placement: &Placement,
) -> Result<f64> {
    if occlusion_factor(i, j, placement, spec, x)? <= 0.0 {
        return Err(Error::NotOccluded { i, j });
    }
    Ok(color(x, i, j, ch, spec, placement))
}

fn color(x: &Image, i: usize, j: usize, ch: usize, spec: &OcclusionSpec, p: &Placement) -> f64 {
    match &spec.coloring {
        Coloring::Uniform { .. } => spec.mu(ch).unwrap_or(0.0),
        Coloring::Multiform { .. } => {
            let delta = p.deltas.as_ref().map_or(0.0, |d| d[x.index(i, j, ch)]);
            x.get(i, j, ch) + delta
        }
    }
}

/// Applies the occlusion to every pixel.
pub fn occlude(x: &Image, spec: &OcclusionSpec, placement: &Placement) -> Result<Image> {
    spec.validate(x)?;
    placement.check(x, spec)?;
    let mut data = x.as_slice().to_vec();
    for i in 1..=x.width() {
        for j in 1..=x.height() {
            let s = factor(i, j, placement, spec);
            if s <= 0.0 {
                continue;
            }
            for ch in 0..x.channels() {
                let k = x.index(i, j, ch);
                let v = data[k];
                let z = color(x, i, j, ch, spec, placement);
                data[k] = (v - s * (v - z)).clamp(0.0, 1.0);
            }
        }
    }
    Image::new(x.height(), x.width(), x.channels(), data)
}

/// All integer positions `1 <= a <= n`, `1 <= b <= m`, row by row (`b` outer).
pub fn enumerate_integer_placements(m: usize, n: usize) -> Vec<Placement> {
    let mut out = Vec::with_capacity(m * n);
    for b in 1..=m {
        for a in 1..=n {
            out.push(Placement::at(a as f64, b as f64));
        }
    }
    out
}

/// General interpolated color of image pixel `(i, j)` from occlusion pixels
/// `(i', j', color)`.
///
/// Each surrounding occlusion pixel (both coordinate distances below 1) is
/// weighted by its Euclidean distance to the image pixel. When all weights
/// vanish (an occlusion pixel sits exactly on the image pixel) the plain mean
/// of the surrounding colors is used.
pub fn interpolated_color(i: f64, j: f64, occluders: &[(f64, f64, f64)]) -> Option<f64> {
    let around: Vec<(f64, f64)> = occluders
        .iter()
        .filter(|(oi, oj, _)| (i - oi).abs() < 1.0 && (j - oj).abs() < 1.0)
        .map(|&(oi, oj, c)| (((i - oi).powi(2) + (j - oj).powi(2)).sqrt(), c))
        .collect();
    if around.is_empty() {
        return None;
    }
    let total: f64 = around.iter().map(|(d, _)| d).sum();
    if total == 0.0 {
        return Some(around.iter().map(|(_, c)| c).sum::<f64>() / around.len() as f64);
    }
    Some(around.iter().map(|(d, c)| d * c).sum::<f64>() / total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample2x2() -> Image {
        Image::new(2, 2, 1, vec![0.4, 0.6, 0.55, 0.72]).unwrap()
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-9)
    }

    #[test]
    fn fully_covered_pixel_has_unit_factor() {
        let img = Image::new(3, 3, 1, vec![0.5; 9]).unwrap();
        let spec = OcclusionSpec::uniform(1, 1, 0.0, PositionMode::Integer);
        let p = Placement::at(2.0, 3.0);
        assert_eq!(occlusion_factor(2, 3, &p, &spec, &img).unwrap(), 1.0);
        assert_eq!(occlusion_factor(1, 3, &p, &spec, &img).unwrap(), 0.0);
    }

    #[test]
    fn distant_occlusion_pixel_has_no_effect() {
        // occlusion pixel offset by (0.9, 0.9) from pixel (1, 1)
        let img = Image::new(2, 2, 1, vec![0.5; 4]).unwrap();
        let spec = OcclusionSpec::uniform(1, 1, 0.0, PositionMode::Real);
        let p = Placement::at(1.9, 1.9);
        assert_eq!(occlusion_factor(1, 1, &p, &spec, &img).unwrap(), 0.0);
    }

    #[test]
    fn half_offset_splits_between_columns() {
        let spec = OcclusionSpec::uniform(1, 1, 0.0, PositionMode::Real);
        let p = Placement::at(1.5, 2.0);
        let img = sample2x2();
        let s: Vec<f64> = [(1, 1), (1, 2), (2, 1), (2, 2)]
            .iter()
            .map(|&(i, j)| occlusion_factor(i, j, &p, &spec, &img).unwrap())
            .collect();
        assert_eq!(s, vec![0.0, 0.5, 0.0, 0.5]);
    }

    #[test]
    fn factor_rejects_out_of_range_pixel() {
        let spec = OcclusionSpec::uniform(1, 1, 0.0, PositionMode::Integer);
        assert!(occlusion_factor(3, 1, &Placement::at(1.0, 1.0), &spec, &sample2x2()).is_err());
    }

    #[test]
    fn coloring_values() {
        let img = sample2x2();
        let spec = OcclusionSpec::uniform(1, 1, 0.0, PositionMode::Integer);
        let p = Placement::at(1.0, 2.0);
        assert_eq!(coloring_value(&img, 1, 2, 0, &spec, &p).unwrap(), 0.0);
        assert!(matches!(
            coloring_value(&img, 2, 2, 0, &spec, &p),
            Err(Error::NotOccluded { i: 2, j: 2 })
        ));

        let spec = OcclusionSpec::multiform(1, 1, 0.1, PositionMode::Integer);
        let up = Placement::with_deltas(1.0, 2.0, vec![0.0, 0.1, 0.0, 0.0]);
        let down = Placement::with_deltas(1.0, 2.0, vec![0.0, -0.1, 0.0, 0.0]);
        assert!((coloring_value(&img, 1, 2, 0, &spec, &up).unwrap() - 0.7).abs() < 1e-12);
        assert!((coloring_value(&img, 1, 2, 0, &spec, &down).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn occlude_sample2x2() {
        let img = sample2x2();
        let spec = OcclusionSpec::uniform(1, 1, 0.0, PositionMode::Real);
        let out = occlude(&img, &spec, &Placement::at(1.0, 2.0)).unwrap();
        assert!(close(out.as_slice(), &[0.4, 0.0, 0.55, 0.72]));
        let out = occlude(&img, &spec, &Placement::at(1.5, 2.0)).unwrap();
        assert!(close(out.as_slice(), &[0.4, 0.3, 0.55, 0.36]));
    }

    #[test]
    fn own_colors_are_a_fixed_point() {
        let img = Image::new(1, 1, 3, vec![0.2, 0.4, 0.9]).unwrap();
        let spec = OcclusionSpec {
            w: 1,
            h: 1,
            coloring: Coloring::Uniform {
                mu: vec![0.2, 0.4, 0.9],
            },
            positions: PositionMode::Integer,
        };
        let out = occlude(&img, &spec, &Placement::at(1.0, 1.0)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn occlude_checks_placement() {
        let img = sample2x2();
        let spec = OcclusionSpec::uniform(1, 1, 0.0, PositionMode::Integer);
        assert!(occlude(&img, &spec, &Placement::at(1.5, 1.0)).is_err());
        assert!(occlude(&img, &spec, &Placement::at(3.0, 1.0)).is_err());
        let multi = OcclusionSpec::multiform(1, 1, 0.1, PositionMode::Integer);
        assert!(occlude(&img, &multi, &Placement::at(1.0, 1.0)).is_err());
        let too_big = Placement::with_deltas(1.0, 1.0, vec![0.2, 0.0, 0.0, 0.0]);
        assert!(occlude(&img, &multi, &too_big).is_err());
    }

    #[test]
    fn enumeration_order_and_count() {
        assert_eq!(enumerate_integer_placements(2, 2).len(), 4);
        let p = enumerate_integer_placements(3, 2);
        let ab: Vec<(f64, f64)> = p.iter().map(|p| (p.a, p.b)).collect();
        assert_eq!(
            ab,
            vec![(1.0, 1.0), (2.0, 1.0), (1.0, 2.0), (2.0, 2.0), (1.0, 3.0), (2.0, 3.0)]
        );
    }

    #[test]
    fn interpolation_weights_by_distance() {
        // two occluders at distances 0.25 and 0.75 along the row
        let c = interpolated_color(2.0, 1.0, &[(1.75, 1.0, 0.0), (2.75, 1.0, 1.0)]).unwrap();
        assert!((c - 0.75).abs() < 1e-12);
        assert_eq!(interpolated_color(2.0, 1.0, &[(2.0, 1.0, 0.3)]), Some(0.3));
        assert_eq!(interpolated_color(2.0, 1.0, &[(3.0, 1.0, 0.3)]), None);
    }
}
