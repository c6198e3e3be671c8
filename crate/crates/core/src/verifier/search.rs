//! Best-first branch and bound over input splits and ReLU phases.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::atomic::Ordering as AtomicOrdering;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{argmax, AffineLayer, Label, Matrix, Network};

use super::bounds::{analyze, backward_upper, form_range, Analysis, LinearConstraint, PhaseMap};
use super::falsify::{ascend, project, random_point};
use super::lp::{maximize, LpResult};
use super::{Control, Outcome, Query, SearchStats, Verdict, TAU};

/// Random samples drawn at the root node.
const ROOT_SAMPLES: usize = 32;
/// Gradient steps from the best root candidate.
const ROOT_ASCENT_STEPS: usize = 12;
const NODE_ASCENT_STEPS: usize = 3;
/// Rounds of box tightening from the phase constraints per node.
const TIGHTEN_ROUNDS: usize = 3;
/// Nodes with more free inputs than this only get the LP once they are leaves.
const LP_MAX_FREE: usize = 64;
/// Random interior points and random box vertices tried by `attack`.
const ATTACK_SAMPLES: usize = 24;
/// Best attack candidates refined by gradient ascent, and their step count.
const ATTACK_STARTS: usize = 3;
const ATTACK_STEPS: usize = 10;

/// `F_l - F_q` as a one-output network.
fn objective_network(net: &Network, q: Label, l: Label) -> Result<Network> {
    let layers = net.layers();
    let last = &layers[layers.len() - 1];
    let mut row = vec![0.0; last.input_dim()];
    for (c, w) in last.weights.row(l.0) {
        row[c] += w;
    }
    for (c, w) in last.weights.row(q.0) {
        row[c] -= w;
    }
    let objective = AffineLayer::new(
        Matrix::from_row_major(1, row.len(), row),
        vec![last.biases[l.0] - last.biases[q.0]],
        false,
    )?;
    let mut all: Vec<AffineLayer> = layers[..layers.len() - 1].to_vec();
    all.push(objective);
    Network::new(all)
}

#[derive(Debug, Clone, Copy)]
enum BranchChoice {
    /// Integer input `k`: children `[lo, cut]` and `[cut + 1, hi]`.
    Input {
        k: usize,
        cut: f64,
    },
    Neuron {
        layer: usize,
        index: usize,
    },
}

#[derive(Debug, Clone)]
struct OpenNode {
    lo: Vec<f64>,
    hi: Vec<f64>,
    splits: Vec<(usize, usize, bool)>,
    ub: f64,
    depth: usize,
    branch: BranchChoice,
    seq: u64,
}

impl PartialEq for OpenNode {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for OpenNode {}

impl PartialOrd for OpenNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OpenNode {
    /// Highest upper bound first; earlier nodes first among equals.
    fn cmp(&self, other: &Self) -> Ordering {
        self.ub.total_cmp(&other.ub).then_with(|| other.seq.cmp(&self.seq))
    }
}

enum Eval {
    Closed,
    Witness(Vec<f64>, f64),
    Open(OpenNode),
}

struct Search<'a> {
    query: &'a Query,
    objective: Network,
    control: &'a Control<'a>,
    rng: ChaCha8Rng,
    stats: SearchStats,
    integer: Vec<bool>,
    best_margin: f64,
    unresolved: Option<String>,
    seq: u64,
}

/// Decides a query, honoring the cancellation flag and witness filter in
/// `control`.
pub fn check_query_with(query: &Query, control: &Control<'_>) -> Result<Verdict> {
    query.validate()?;
    let start = Instant::now();
    let deadline = query.timeout.map(|t| start + t);
    let mut search = Search {
        query,
        objective: objective_network(&query.network, query.correct, query.adversarial)?,
        control,
        rng: ChaCha8Rng::seed_from_u64(query.seed),
        stats: SearchStats::default(),
        integer: query.input_box.integer.clone(),
        best_margin: f64::NEG_INFINITY,
        unresolved: None,
        seq: 0,
    };

    let outcome = search.run(deadline);
    search.stats.seconds = start.elapsed().as_secs_f64();
    tracing::debug!(
        branches = search.stats.branches,
        seconds = search.stats.seconds,
        "query finished"
    );
    Ok(Verdict {
        outcome,
        stats: search.stats,
    })
}

/// Falsification only, without any bounding: random points, random box
/// vertices and a short gradient ascent from the best of them. Returns a
/// `NonRobust` verdict for an accepted witness and `None` otherwise.
pub fn attack_query_with(query: &Query, control: &Control<'_>) -> Result<Option<Verdict>> {
    query.validate()?;
    let start = Instant::now();
    let mut search = Search {
        query,
        objective: objective_network(&query.network, query.correct, query.adversarial)?,
        control,
        rng: ChaCha8Rng::seed_from_u64(query.seed),
        stats: SearchStats::default(),
        integer: query.input_box.integer.clone(),
        best_margin: f64::NEG_INFINITY,
        unresolved: None,
        seq: 0,
    };
    let outcome = search.attack();
    search.stats.seconds = start.elapsed().as_secs_f64();
    Ok(outcome.map(|outcome| Verdict {
        outcome,
        stats: search.stats,
    }))
}

impl Search<'_> {
    fn attack(&mut self) -> Option<Outcome> {
        let b = &self.query.input_box;
        let (mut lo, mut hi) = (b.lo.clone(), b.hi.clone());
        for k in 0..lo.len() {
            if self.integer[k] {
                lo[k] = lo[k].ceil();
                hi[k] = hi[k].floor();
                if lo[k] > hi[k] {
                    return None;
                }
            }
        }
        let center: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)).collect();
        let mut candidates = vec![center.clone()];
        for _ in 0..ATTACK_SAMPLES {
            candidates.push(random_point(&mut self.rng, &lo, &hi, &self.integer));
            let mut corner = random_point(&mut self.rng, &lo, &hi, &self.integer);
            for k in 0..corner.len() {
                if !self.integer[k] {
                    corner[k] = if self.rng.gen_bool(0.5) { lo[k] } else { hi[k] };
                }
            }
            candidates.push(corner);
        }
        let mut scored = Vec::with_capacity(candidates.len());
        for mut x in candidates {
            project(&mut x, &lo, &hi, &self.integer);
            if let Some(cancel) = self.control.cancel {
                if cancel.load(AtomicOrdering::Relaxed) {
                    return None;
                }
            }
            self.stats.evaluations += 1;
            let v = self.objective.eval(&x)[0];
            if let Some(m) = self.note(&x, v) {
                return Some(self.witness(x, m));
            }
            scored.push((v, x));
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut starts: Vec<Vec<f64>> = scored.into_iter().take(ATTACK_STARTS).map(|(_, x)| x).collect();
        let mut center = center;
        project(&mut center, &lo, &hi, &self.integer);
        starts.push(center);
        for x in starts {
            let mut evals = 0;
            let (mut y, _) = ascend(&self.objective, x, &lo, &hi, &self.integer, ATTACK_STEPS, &mut evals);
            self.stats.evaluations += evals;
            project(&mut y, &lo, &hi, &self.integer);
            if let Some(m) = self.try_point(&y) {
                return Some(self.witness(y, m));
            }
        }
        None
    }

    fn interrupted(&self, deadline: Option<Instant>) -> Option<Outcome> {
        if let Some(flag) = self.control.cancel {
            if flag.load(AtomicOrdering::Relaxed) {
                return Some(Outcome::Cancelled);
            }
        }
        match deadline {
            Some(d) if Instant::now() >= d => Some(Outcome::Timeout),
            _ => None,
        }
    }

    fn run(&mut self, deadline: Option<Instant>) -> Outcome {
        if let Some(stop) = self.interrupted(deadline) {
            return stop;
        }
        let b = &self.query.input_box;
        let (mut lo, mut hi) = (b.lo.clone(), b.hi.clone());
        for k in 0..lo.len() {
            if self.integer[k] {
                lo[k] = lo[k].ceil();
                hi[k] = hi[k].floor();
                if lo[k] > hi[k] {
                    return self.finish();
                }
            }
        }
        let mut heap = BinaryHeap::new();
        match self.evaluate(lo, hi, Vec::new(), f64::INFINITY, 0) {
            Eval::Witness(x, m) => return self.witness(x, m),
            Eval::Open(node) => heap.push(node),
            Eval::Closed => {}
        }
        while let Some(node) = heap.pop() {
            for (lo, hi, splits) in children(&node) {
                if let Some(stop) = self.interrupted(deadline) {
                    return stop;
                }
                match self.evaluate(lo, hi, splits, node.ub, node.depth + 1) {
                    Eval::Witness(x, m) => return self.witness(x, m),
                    Eval::Open(child) => heap.push(child),
                    Eval::Closed => {}
                }
            }
        }
        self.finish()
    }

    fn witness(&self, x: Vec<f64>, margin: f64) -> Outcome {
        let predicted = argmax(&self.query.network.eval(&x));
        Outcome::NonRobust {
            witness: x,
            margin,
            predicted,
        }
    }

    fn finish(&self) -> Outcome {
        if let Some(reason) = &self.unresolved {
            return Outcome::Unknown { reason: reason.clone() };
        }
        let warning = (self.best_margin > -TAU).then(|| {
            format!(
                "best margin {:.3e} lies within the certification tolerance",
                self.best_margin
            )
        });
        Outcome::Robust { warning }
    }

    fn accepts(&self, x: &[f64]) -> bool {
        self.control.accept.is_none_or(|f| f(x))
    }

    /// Tries a point; returns it if it is an accepted witness.
    fn try_point(&mut self, x: &[f64]) -> Option<f64> {
        self.stats.evaluations += 1;
        let v = self.objective.eval(x)[0];
        self.note(x, v)
    }

    fn note(&mut self, x: &[f64], v: f64) -> Option<f64> {
        if v >= 0.0 && self.accepts(x) {
            return Some(v);
        }
        if v < 0.0 {
            self.best_margin = self.best_margin.max(v);
        }
        None
    }

    fn evaluate(
        &mut self,
        mut lo: Vec<f64>,
        mut hi: Vec<f64>,
        splits: Vec<(usize, usize, bool)>,
        parent_ub: f64,
        depth: usize,
    ) -> Eval {
        self.stats.branches += 1;
        self.stats.max_depth = self.stats.max_depth.max(depth);
        let mut phases = PhaseMap::new(&self.objective);
        for &(l, i, active) in &splits {
            phases.layers[l][i] = if active { 1 } else { -1 };
        }

        let mut analysis: Analysis;
        let mut round = 0;
        loop {
            analysis = analyze(&self.objective, &lo, &hi, &phases);
            self.stats.bound_passes += 1;
            if analysis.infeasible {
                return Eval::Closed;
            }
            round += 1;
            if analysis.constraints.is_empty() || round >= TIGHTEN_ROUNDS {
                break;
            }
            match tighten(&analysis.constraints, &analysis.free, &mut lo, &mut hi, &self.integer) {
                None => return Eval::Closed,
                Some(false) => break,
                Some(true) => {}
            }
        }

        // Inputs that can no longer reach the output are pinned, which keeps
        // the symbolic forms and the LP small.
        let dead = dead_inputs(&self.objective, &analysis, &phases);
        let mut pinned = false;
        for k in 0..lo.len() {
            if dead[k] && hi[k] > lo[k] {
                hi[k] = lo[k];
                pinned = true;
            }
        }
        if pinned {
            analysis = analyze(&self.objective, &lo, &hi, &phases);
            self.stats.bound_passes += 1;
            if analysis.infeasible {
                return Eval::Closed;
            }
        }

        let free = analysis.free.clone();
        let backward = backward_upper(&self.objective, &analysis, &phases, &lo, 0);
        let forward_max = form_range(&analysis.out_upper[0], &free, &lo, &hi).1;
        let backward_max = form_range(&backward, &free, &lo, &hi).1;
        let upper_form = if backward_max < forward_max {
            &backward
        } else {
            &analysis.out_upper[0]
        };
        let lower_form = &analysis.out_lower[0];
        let out_bound = analysis.pre.last().map_or(f64::INFINITY, |o| o[0].hi);
        let mut ub = parent_ub.min(forward_max).min(backward_max).min(out_bound);
        if ub < -TAU {
            return Eval::Closed;
        }

        let branch = self.choose_branch(&analysis, &phases, &lo, &hi);
        let leaf = branch.is_none();

        let mut lp_point = None;
        let mut lp_failed = false;
        if !analysis.constraints.is_empty() && (leaf || free.len() <= LP_MAX_FREE) {
            self.stats.lp_solves += 1;
            match maximize(upper_form, &free, &lo, &hi, &analysis.constraints) {
                LpResult::Infeasible => return Eval::Closed,
                LpResult::Optimal { value, point } => {
                    ub = ub.min(value);
                    lp_point = Some(point);
                }
                LpResult::Failed => lp_failed = true,
            }
            if ub < -TAU {
                return Eval::Closed;
            }
        }

        // Falsification.
        let root = depth == 0;
        let mut candidates = vec![
            vertex(upper_form, &free, &lo, &hi),
            vertex(lower_form, &free, &lo, &hi),
            lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)).collect(),
        ];
        if let Some(p) = &lp_point {
            candidates.push(p.clone());
        }
        for _ in 0..if root { ROOT_SAMPLES } else { 1 } {
            candidates.push(random_point(&mut self.rng, &lo, &hi, &self.integer));
        }
        // Grid-snapped copies: inputs spanning at least a unit are often
        // coordinates whose most damaging values sit on the integer grid.
        let snapped: Vec<Vec<f64>> = candidates.iter().filter_map(|x| snap_to_grid(x, &lo, &hi)).collect();
        candidates.extend(snapped);
        let mut best: Option<(Vec<f64>, f64)> = None;
        let mut leaf_max: Option<f64> = None;
        for (k, mut x) in candidates.into_iter().enumerate() {
            project(&mut x, &lo, &hi, &self.integer);
            self.stats.evaluations += 1;
            let v = self.objective.eval(&x)[0];
            if k == 3 && lp_point.is_some() {
                leaf_max = Some(v);
            }
            if let Some(m) = self.note(&x, v) {
                return Eval::Witness(x, m);
            }
            if best.as_ref().is_none_or(|(_, b)| v > *b) {
                best = Some((x, v));
            }
        }
        if let Some((start, _)) = best {
            let steps = if root { ROOT_ASCENT_STEPS } else { NODE_ASCENT_STEPS };
            let mut evals = 0;
            let (mut x, _) = ascend(&self.objective, start, &lo, &hi, &self.integer, steps, &mut evals);
            self.stats.evaluations += evals;
            project(&mut x, &lo, &hi, &self.integer);
            if let Some(m) = self.try_point(&x) {
                return Eval::Witness(x, m);
            }
        }

        match branch {
            Some(branch) => {
                self.seq += 1;
                Eval::Open(OpenNode {
                    lo,
                    hi,
                    splits,
                    ub,
                    depth,
                    branch,
                    seq: self.seq,
                })
            }
            None => {
                // Every ReLU is fixed: the objective is affine on this node and
                // `ub` is its exact maximum (up to LP round-off).
                if ub < TAU {
                    // At most a tie; never a certified violation.
                    self.best_margin = self.best_margin.max(ub.min(0.0).max(-TAU));
                    return Eval::Closed;
                }
                let exact = analysis.constraints.is_empty() || (!lp_failed && lp_point.is_some());
                let reason = if !exact {
                    "leaf LP failed".to_string()
                } else {
                    match leaf_max {
                        Some(v) if v >= 0.0 => "violating point rejected by the witness filter".to_string(),
                        Some(v) => format!("leaf bound {ub:.3e} disagrees with evaluation {v:.3e}"),
                        None => "violating vertex rejected by the witness filter".to_string(),
                    }
                };
                if self.unresolved.is_none() {
                    tracing::warn!(%reason, "unresolved leaf");
                    self.unresolved = Some(reason);
                }
                Eval::Closed
            }
        }
    }

    /// Integer inputs first (widest), then the earliest layer that still has
    /// an unstable ReLU, taking its widest pre-activation interval. `None`
    /// means the node is a leaf.
    ///
    /// Earlier layers go first because the relaxation error of every later
    /// neuron is inherited from them; in an occlusion network the first
    /// stages are exactly the case split over the occlusion position.
    fn choose_branch(&self, analysis: &Analysis, phases: &PhaseMap, lo: &[f64], hi: &[f64]) -> Option<BranchChoice> {
        let mut best_input: Option<(usize, f64)> = None;
        for k in 0..lo.len() {
            if self.integer[k] && hi[k] > lo[k] {
                let w = hi[k] - lo[k];
                if best_input.is_none_or(|(_, bw)| w > bw) {
                    best_input = Some((k, w));
                }
            }
        }
        if let Some((k, _)) = best_input {
            let cut = (0.5 * (lo[k] + hi[k])).floor();
            return Some(BranchChoice::Input { k, cut });
        }
        let mut best: Option<(usize, usize, f64)> = None;
        let hidden = analysis.pre.len().saturating_sub(1);
        for layer in 0..hidden {
            for (index, iv) in analysis.pre[layer].iter().enumerate() {
                if phases.get(layer, index) != 0 || iv.lo >= 0.0 || iv.hi <= 0.0 {
                    continue;
                }
                let w = iv.hi - iv.lo;
                if best.is_none_or(|(_, _, bw)| w > bw) {
                    best = Some((layer, index, w));
                }
            }
            if best.is_some() {
                break;
            }
        }
        best.map(|(layer, index, _)| BranchChoice::Neuron { layer, index })
    }
}

/// Marks inputs the objective cannot depend on inside a node: every path from
/// them to the output runs through a ReLU that is off on the whole node.
///
/// Neurons with a fixed phase count as live, because their phase constraint
/// restricts the inputs that feed them.
fn dead_inputs(net: &Network, analysis: &Analysis, phases: &PhaseMap) -> Vec<bool> {
    let layers = net.layers();
    let mut live = vec![true; net.output_dim()];
    for (l, layer) in layers.iter().enumerate().rev() {
        if layer.relu {
            for (i, on) in live.iter_mut().enumerate() {
                if phases.get(l, i) != 0 {
                    *on = true;
                } else if analysis.pre[l][i].hi <= 0.0 {
                    *on = false;
                }
            }
        }
        let mut below = vec![false; layer.input_dim()];
        for (i, _) in live.iter().enumerate().filter(|(_, on)| **on) {
            for (c, w) in layer.weights.row(i) {
                if w != 0.0 {
                    below[c] = true;
                }
            }
        }
        live = below;
    }
    live.iter().map(|on| !on).collect()
}

type Child = (Vec<f64>, Vec<f64>, Vec<(usize, usize, bool)>);

fn children(node: &OpenNode) -> Vec<Child> {
    match node.branch {
        BranchChoice::Input { k, cut } => {
            let mut left_hi = node.hi.clone();
            left_hi[k] = cut;
            let mut right_lo = node.lo.clone();
            right_lo[k] = cut + 1.0;
            vec![
                (node.lo.clone(), left_hi, node.splits.clone()),
                (right_lo, node.hi.clone(), node.splits.clone()),
            ]
        }
        BranchChoice::Neuron { layer, index } => [true, false]
            .iter()
            .map(|&active| {
                let mut s = node.splits.clone();
                s.push((layer, index, active));
                (node.lo.clone(), node.hi.clone(), s)
            })
            .collect(),
    }
}

/// Rounds every input whose interval spans at least one unit and contains an
/// integer; `None` if nothing moved.
fn snap_to_grid(x: &[f64], lo: &[f64], hi: &[f64]) -> Option<Vec<f64>> {
    let mut y = x.to_vec();
    let mut moved = false;
    for k in 0..x.len() {
        if hi[k] - lo[k] >= 1.0 {
            let r = x[k].round().clamp(lo[k].ceil(), hi[k].floor());
            if r != x[k] {
                y[k] = r;
                moved = true;
            }
        }
    }
    moved.then_some(y)
}

/// Box vertex maximizing an affine form.
fn vertex(form: &[f64], free: &[usize], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    let mut x = lo.to_vec();
    for (f, &k) in free.iter().enumerate() {
        x[k] = if form[f] > 0.0 { hi[k] } else { lo[k] };
    }
    x
}

/// Shrinks the box with the phase constraints. `None` if the box empties,
/// otherwise whether anything changed noticeably.
fn tighten(
    constraints: &[LinearConstraint],
    free: &[usize],
    lo: &mut [f64],
    hi: &mut [f64],
    integer: &[bool],
) -> Option<bool> {
    let mut changed = false;
    for c in constraints {
        // max of coeffs . x + constant over the current box
        let (_, total_max) = form_range(
            &c.coeffs.iter().copied().chain([c.constant]).collect::<Vec<_>>(),
            free,
            lo,
            hi,
        );
        if total_max < -1e-9 {
            return None;
        }
        for (f, &k) in free.iter().enumerate() {
            let a = c.coeffs[f];
            if a == 0.0 || lo[k] == hi[k] {
                continue;
            }
            let own_max = if a > 0.0 { a * hi[k] } else { a * lo[k] };
            let rest = total_max - own_max;
            // a * x_k >= -rest
            let bound = (-rest - 1e-9 * (1.0 + rest.abs())) / a;
            let width = hi[k] - lo[k];
            if a > 0.0 {
                let mut nb = bound;
                if integer[k] {
                    nb = (nb - 1e-9).ceil();
                }
                if nb > lo[k] {
                    changed |= nb - lo[k] > 1e-7 * width.max(1e-12);
                    lo[k] = nb;
                }
            } else {
                let mut nb = bound;
                if integer[k] {
                    nb = (nb + 1e-9).floor();
                }
                if nb < hi[k] {
                    changed |= hi[k] - nb > 1e-7 * width.max(1e-12);
                    hi[k] = nb;
                }
            }
            if lo[k] > hi[k] {
                if !integer[k] && lo[k] - hi[k] < 1e-9 {
                    let mid = 0.5 * (lo[k] + hi[k]);
                    lo[k] = mid;
                    hi[k] = mid;
                } else {
                    return None;
                }
            }
        }
    }
    Some(changed)
}
