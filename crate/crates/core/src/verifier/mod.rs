//! Complete robustness checking for ReLU networks over input boxes.
//!
//! A query asks whether some input in a box makes the network score an
//! adversarial label at least as high as the correct one. The search is a
//! best-first branch and bound: every node carries a sub-box plus a set of
//! fixed ReLU phases, symbolic linear bounds give an upper bound on the
//! objective `F_l - F_q`, cheap falsification tries concrete points, and
//! nodes are split on integer inputs first and then on the widest unstable
//! ReLU. Once every ReLU on a node is fixed the network is affine there and a
//! small LP decides the node exactly.

mod bounds;
mod falsify;
mod lp;
mod search;
mod validate;

use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Label, Network};

pub use bounds::{propagate_bounds, Interval, NeuronBounds};
pub use search::{attack_query_with, check_query_with};
pub use validate::{omnn, validate_counterexample, Counterexample};

/// Margins above `-TAU` cannot be certified robust by bounds alone.
pub const TAU: f64 = 1e-6;

/// Default per-query budget.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

/// Per-input intervals, with optional integrality marks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub integer: Vec<bool>,
}

impl InputBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let integer = vec![false; lo.len()];
        InputBox::with_integers(lo, hi, integer)
    }

    pub fn with_integers(lo: Vec<f64>, hi: Vec<f64>, integer: Vec<bool>) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() != integer.len() {
            return Err(Error::DimensionMismatch {
                context: "input box",
                expected: lo.len(),
                found: if hi.len() != lo.len() { hi.len() } else { integer.len() },
            });
        }
        for (k, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !(l.is_finite() && h.is_finite() && l <= h) {
                return Err(Error::Config(format!(
                    "input {k}: interval [{l}, {h}] is empty or unbounded"
                )));
            }
        }
        Ok(InputBox { lo, hi, integer })
    }

    /// The unit box `[0, 1]^dim`.
    pub fn unit(dim: usize) -> Self {
        InputBox {
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
            integer: vec![false; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Membership with slack `tol` on continuous inputs; integer-marked inputs
    /// must be integral.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim()
            && x.iter()
                .enumerate()
                .all(|(k, &v)| v >= self.lo[k] - tol && v <= self.hi[k] + tol && (!self.integer[k] || v.fract() == 0.0))
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }
}

/// One robustness sub-problem: is `F_l >= F_q` reachable inside the box?
#[derive(Debug, Clone)]
pub struct Query {
    pub network: Arc<Network>,
    pub input_box: InputBox,
    pub correct: Label,
    pub adversarial: Label,
    pub timeout: Option<Duration>,
    pub seed: u64,
}

impl Query {
    pub fn new(network: Arc<Network>, input_box: InputBox, correct: Label, adversarial: Label) -> Self {
        Query {
            network,
            input_box,
            correct,
            adversarial,
            timeout: Some(DEFAULT_TIMEOUT),
            seed: 0,
        }
    }

    pub fn with_timeout(mut self, timeout: Option<Duration>) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.network.check_label(self.correct)?;
        self.network.check_label(self.adversarial)?;
        if self.correct == self.adversarial {
            return Err(Error::Config(
                "adversarial label must differ from the correct label".into(),
            ));
        }
        if self.input_box.dim() != self.network.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "query box",
                expected: self.network.input_dim(),
                found: self.input_box.dim(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    /// No input in the box reaches `F_l >= F_q`. `warning` is set when the
    /// best margin found lies within `TAU` of zero.
    Robust {
        warning: Option<String>,
    },
    /// `witness` is a concrete input with `F_l - F_q = margin >= 0`.
    NonRobust {
        witness: Vec<f64>,
        margin: f64,
        predicted: Label,
    },
    Timeout,
    Cancelled,
    /// The search ended without a decision (numerical trouble).
    Unknown {
        reason: String,
    },
}

impl Outcome {
    pub fn is_robust(&self) -> bool {
        matches!(self, Outcome::Robust { .. })
    }

    pub fn is_non_robust(&self) -> bool {
        matches!(self, Outcome::NonRobust { .. })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    /// Nodes taken off the queue.
    pub branches: u64,
    pub bound_passes: u64,
    pub lp_solves: u64,
    pub evaluations: u64,
    pub max_depth: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub outcome: Outcome,
    pub stats: SearchStats,
}

/// Hooks a caller can attach to a running search.
#[derive(Default, Clone, Copy)]
pub struct Control<'a> {
    /// Checked at every node; once set the search stops with `Cancelled`.
    pub cancel: Option<&'a AtomicBool>,
    /// Extra acceptance test for witnesses; rejected witnesses do not end the
    /// search.
    pub accept: Option<&'a (dyn Fn(&[f64]) -> bool + Sync)>,
}

/// Decides a query with the built-in branch and bound.
pub fn check_query(query: &Query) -> Result<Verdict> {
    check_query_with(query, &Control::default())
}

/// Anything that can decide queries.
pub trait Backend: Send + Sync {
    fn check(&self, query: &Query, control: &Control<'_>) -> Result<Verdict>;

    /// A quick falsification attempt that never proves anything. Returns a
    /// `NonRobust` verdict or `None`; backends without one return `None`.
    fn attack(&self, _query: &Query, _control: &Control<'_>) -> Result<Option<Verdict>> {
        Ok(None)
    }
}

/// The built-in engine.
#[derive(Debug, Clone, Copy, Default)]
pub struct BranchAndBound;

impl Backend for BranchAndBound {
    fn check(&self, query: &Query, control: &Control<'_>) -> Result<Verdict> {
        check_query_with(query, control)
    }

    fn attack(&self, query: &Query, control: &Control<'_>) -> Result<Option<Verdict>> {
        attack_query_with(query, control)
    }
}
