//! Direct constraint encoding of the occlusion robustness problem.
//!
//! The encoding is satisfiable exactly when some integer occlusion position in
//! the region yields an image that the classifier no longer assigns to the
//! correct label with a strict lead. It is kept as a small formula tree so the
//! same object can be evaluated internally and printed as SMT-LIB2.

mod smtlib;
mod solver;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{Label, Network};
use crate::occlusion::{OcclusionSpec, PositionMode};
use crate::onn::PositionRegion;

pub use smtlib::{emit_smtlib, format_rational};
pub use solver::{solve_external, solver_from_env, SolverAnswer, SOLVER_ENV};

/// Absolute tolerance on equalities in [`eval_constraints`].
pub const EVAL_TOL: f64 = 1e-9;

/// Index into [`NaiveEncoding::variables`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Var(pub usize);

/// `sum(coeff * var) + constant`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinExpr {
    pub terms: Vec<(Var, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn var(v: Var) -> Self {
        LinExpr {
            terms: vec![(v, 1.0)],
            constant: 0.0,
        }
    }

    /// `coeff * v + constant`.
    pub fn affine(v: Var, coeff: f64, constant: f64) -> Self {
        LinExpr {
            terms: vec![(v, coeff)],
            constant,
        }
    }

    fn eval(&self, values: &[f64]) -> f64 {
        self.terms
            .iter()
            .fold(self.constant, |acc, (v, c)| acc + c * values[v.0])
    }
}

/// Comparison of an expression against zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rel {
    Lt,
    Le,
    Eq,
    Ge,
    Gt,
}

impl Rel {
    pub fn symbol(self) -> &'static str {
        match self {
            Rel::Lt => "<",
            Rel::Le => "<=",
            Rel::Eq => "=",
            Rel::Ge => ">=",
            Rel::Gt => ">",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Formula {
    /// `expr REL 0`.
    Atom(LinExpr, Rel),
    /// `out = max(input, 0)`.
    Relu {
        out: Var,
        input: LinExpr,
    },
    And(Vec<Formula>),
    Or(Vec<Formula>),
}

impl Formula {
    fn atom(expr: LinExpr, rel: Rel) -> Formula {
        Formula::Atom(expr, rel)
    }

    fn holds(&self, values: &[f64]) -> bool {
        match self {
            Formula::Atom(e, rel) => {
                let v = e.eval(values);
                match rel {
                    Rel::Lt => v < 0.0,
                    Rel::Le => v <= 0.0,
                    Rel::Eq => v.abs() <= EVAL_TOL,
                    Rel::Ge => v >= 0.0,
                    Rel::Gt => v > 0.0,
                }
            }
            Formula::Relu { out, input } => (values[out.0] - input.eval(values).max(0.0)).abs() <= EVAL_TOL,
            Formula::And(fs) => fs.iter().all(|f| f.holds(values)),
            Formula::Or(fs) => fs.iter().any(|f| f.holds(values)),
        }
    }
}

/// Values keyed by variable name.
pub type Assignment = BTreeMap<String, f64>;

/// Constraint object for one image, region and correct label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveEncoding {
    variables: Vec<String>,
    /// Bounds and integrality of `a` and `b`.
    pub position: Vec<Formula>,
    /// One disjunction per image pixel: inside the occlusion band and colored,
    /// or outside and unchanged.
    pub pixels: Vec<Formula>,
    /// One definition per neuron.
    pub network: Vec<Formula>,
    /// Some other label scores at least as high as the correct one.
    pub label: Formula,
    pub a: Var,
    pub b: Var,
    /// Occluded image variables in flat image order.
    pub pixel_vars: Vec<Var>,
    /// Variables of every layer's outputs (the last entry is the logits).
    pub layer_vars: Vec<Vec<Var>>,
    pub correct: Label,
}

impl NaiveEncoding {
    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn name(&self, v: Var) -> &str {
        &self.variables[v.0]
    }

    pub fn lookup(&self, name: &str) -> Option<Var> {
        self.variables.iter().position(|n| n == name).map(Var)
    }

    pub fn pixel_disjunctions(&self) -> usize {
        self.pixels.len()
    }

    pub fn label_disjuncts(&self) -> usize {
        match &self.label {
            Formula::Or(fs) => fs.len(),
            _ => 1,
        }
    }

    /// Every constraint, in emission order.
    pub fn constraints(&self) -> impl Iterator<Item = &Formula> {
        self.position
            .iter()
            .chain(&self.pixels)
            .chain(&self.network)
            .chain(std::iter::once(&self.label))
    }

    /// Full assignment for the occluded image `occluded` at position `(a, b)`,
    /// with network variables filled by a forward pass of `f`.
    pub fn assignment(&self, f: &Network, occluded: &Image, a: f64, b: f64) -> Result<Assignment> {
        if occluded.len() != self.pixel_vars.len() {
            return Err(Error::DimensionMismatch {
                context: "occluded image vs encoding",
                expected: self.pixel_vars.len(),
                found: occluded.len(),
            });
        }
        let trace = f.forward_trace(occluded.as_slice())?;
        if trace.post.len() != self.layer_vars.len() {
            return Err(Error::DimensionMismatch {
                context: "network depth vs encoding",
                expected: self.layer_vars.len(),
                found: trace.post.len(),
            });
        }
        let mut out = Assignment::new();
        out.insert(self.name(self.a).to_string(), a);
        out.insert(self.name(self.b).to_string(), b);
        for (v, x) in self.pixel_vars.iter().zip(occluded.as_slice()) {
            out.insert(self.name(*v).to_string(), *x);
        }
        for (vars, values) in self.layer_vars.iter().zip(&trace.post) {
            for (v, x) in vars.iter().zip(values) {
                out.insert(self.name(*v).to_string(), *x);
            }
        }
        Ok(out)
    }
}

struct Builder {
    names: Vec<String>,
}

impl Builder {
    fn var(&mut self, name: String) -> Var {
        self.names.push(name);
        Var(self.names.len() - 1)
    }
}

/// Integer range of one axis inside a region.
fn integer_range(lo: f64, hi: f64, axis: &str) -> Result<(usize, usize)> {
    let (lo, hi) = (lo.ceil(), hi.floor());
    if lo > hi || lo < 1.0 {
        return Err(Error::InvalidOcclusion(format!(
            "region holds no integer {axis} position"
        )));
    }
    Ok((lo as usize, hi as usize))
}

/// Builds the constraint object for uniform occlusions at integer positions
/// inside `region`.
pub fn build_naive(
    x: &Image,
    f: &Network,
    spec: &OcclusionSpec,
    region: &PositionRegion,
    q: Label,
) -> Result<NaiveEncoding> {
    if spec.is_multiform() {
        return Err(Error::Unsupported(
            "the direct encoding handles uniform occlusions only".into(),
        ));
    }
    if spec.positions == PositionMode::Real {
        return Err(Error::Unsupported(
            "the direct encoding handles integer positions only".into(),
        ));
    }
    spec.validate(x)?;
    region.check(x.height(), x.width())?;
    if f.input_dim() != x.len() {
        return Err(Error::DimensionMismatch {
            context: "classifier input vs image size",
            expected: f.input_dim(),
            found: x.len(),
        });
    }
    f.check_label(q)?;
    if f.output_dim() < 2 {
        return Err(Error::Config("classifier needs at least two classes".into()));
    }

    let (m, n, c) = (x.height(), x.width(), x.channels());
    let (w, h) = (spec.w as f64, spec.h as f64);
    let mut bld = Builder { names: Vec::new() };
    let a = bld.var("a".into());
    let b = bld.var("b".into());

    let mut position = Vec::new();
    for (v, lo, hi, axis) in [(a, region.a_lo, region.a_hi, "a"), (b, region.b_lo, region.b_hi, "b")] {
        let (lo_i, hi_i) = integer_range(lo, hi, axis)?;
        position.push(Formula::atom(LinExpr::affine(v, -1.0, lo_i as f64), Rel::Le));
        position.push(Formula::atom(LinExpr::affine(v, 1.0, -(hi_i as f64)), Rel::Le));
        position.push(Formula::Or(
            (lo_i..=hi_i)
                .map(|k| Formula::atom(LinExpr::affine(v, 1.0, -(k as f64)), Rel::Eq))
                .collect(),
        ));
    }

    let mut pixel_vars = vec![Var(0); x.len()];
    for i in 1..=n {
        for j in 1..=m {
            for ch in 0..c {
                pixel_vars[x.index(i, j, ch)] = bld.var(format!("xp_{i}_{j}_{ch}"));
            }
        }
    }
    let mut pixels = Vec::with_capacity(m * n);
    for i in 1..=n {
        for j in 1..=m {
            let (fi, fj) = (i as f64, j as f64);
            // a - 1 < i < a + w and b - 1 < j < b + h
            let mut inside = vec![
                Formula::atom(LinExpr::affine(a, 1.0, -1.0 - fi), Rel::Lt),
                Formula::atom(LinExpr::affine(a, -1.0, fi - w), Rel::Lt),
                Formula::atom(LinExpr::affine(b, 1.0, -1.0 - fj), Rel::Lt),
                Formula::atom(LinExpr::affine(b, -1.0, fj - h), Rel::Lt),
            ];
            let mut outside = vec![Formula::Or(vec![
                Formula::atom(LinExpr::affine(a, -1.0, fi - w), Rel::Ge),
                Formula::atom(LinExpr::affine(a, 1.0, -1.0 - fi), Rel::Ge),
                Formula::atom(LinExpr::affine(b, -1.0, fj - h), Rel::Ge),
                Formula::atom(LinExpr::affine(b, 1.0, -1.0 - fj), Rel::Ge),
            ])];
            for ch in 0..c {
                let v = pixel_vars[x.index(i, j, ch)];
                let mu = spec.mu(ch).unwrap_or(0.0);
                inside.push(Formula::atom(LinExpr::affine(v, 1.0, -mu), Rel::Eq));
                outside.push(Formula::atom(LinExpr::affine(v, 1.0, -x.get(i, j, ch)), Rel::Eq));
            }
            pixels.push(Formula::Or(vec![Formula::And(inside), Formula::And(outside)]));
        }
    }

    let mut network = Vec::new();
    let mut layer_vars: Vec<Vec<Var>> = Vec::with_capacity(f.layers().len());
    let depth = f.layers().len();
    for (li, layer) in f.layers().iter().enumerate() {
        let prev: &[Var] = if li == 0 { &pixel_vars } else { &layer_vars[li - 1] };
        let mut vars = Vec::with_capacity(layer.output_dim());
        let mut defs = Vec::with_capacity(layer.output_dim());
        for k in 0..layer.output_dim() {
            let name = if li + 1 == depth {
                format!("y_{k}")
            } else {
                format!("h_{}_{k}", li + 1)
            };
            let out = bld.var(name);
            let input = LinExpr {
                terms: layer
                    .weights
                    .row(k)
                    .filter(|(_, wgt)| *wgt != 0.0)
                    .map(|(col, wgt)| (prev[col], wgt))
                    .collect(),
                constant: layer.biases[k],
            };
            defs.push(if layer.relu {
                Formula::Relu { out, input }
            } else {
                let mut e = input;
                e.terms.push((out, -1.0));
                Formula::atom(e, Rel::Eq)
            });
            vars.push(out);
        }
        network.extend(defs);
        layer_vars.push(vars);
    }

    let outputs = layer_vars.last().cloned().unwrap_or_default();
    let label = Formula::Or(
        (0..outputs.len())
            .filter(|&l| l != q.0)
            .map(|l| {
                Formula::atom(
                    LinExpr {
                        terms: vec![(outputs[l], 1.0), (outputs[q.0], -1.0)],
                        constant: 0.0,
                    },
                    Rel::Ge,
                )
            })
            .collect(),
    );

    Ok(NaiveEncoding {
        variables: bld.names,
        position,
        pixels,
        network,
        label,
        a,
        b,
        pixel_vars,
        layer_vars,
        correct: q,
    })
}

/// True iff every constraint holds under `assignment`; equalities and ReLU
/// definitions are checked to within [`EVAL_TOL`].
pub fn eval_constraints(enc: &NaiveEncoding, assignment: &Assignment) -> Result<bool> {
    let values = enc
        .variables
        .iter()
        .map(|name| {
            assignment
                .get(name)
                .copied()
                .ok_or_else(|| Error::IncompleteAssignment(name.clone()))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(enc.constraints().all(|c| c.holds(&values)))
}
