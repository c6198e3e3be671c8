//! End-to-end verification of one image: build the occlusion network, split
//! the position domain, order the adversarial labels, run the queries on a
//! worker pool and stop at the first validated counterexample.

mod report;

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{Label, Network};
use crate::occlusion::{OcclusionSpec, PositionMode};
use crate::onn::{build_onn, PositionRegion};
use crate::verifier::{validate_counterexample, Backend, BranchAndBound, Control, Counterexample, Outcome, Query};

pub use report::{aggregate, format_seconds, summarize, Overall, QueryRecord, QueryStatus, Report, Summary, Totals};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationConfig {
    /// Splits of the row (`b`) axis.
    pub k_m: usize,
    /// Splits of the column (`a`) axis.
    pub k_n: usize,
    /// Per-query budget in seconds; `None` means unlimited.
    pub timeout_per_query: Option<f64>,
    /// Optional wall-clock budget for the whole image, in seconds.
    pub global_budget: Option<f64>,
    pub workers: usize,
    pub label_sorting: bool,
    pub splitting: bool,
    /// Sweep every planned query with a cheap attack before any complete
    /// search starts.
    #[serde(default = "default_true")]
    pub falsify_first: bool,
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

impl Default for VerificationConfig {
    fn default() -> Self {
        VerificationConfig {
            k_m: 1,
            k_n: 1,
            timeout_per_query: Some(60.0),
            global_budget: None,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            label_sorting: true,
            splitting: true,
            falsify_first: true,
            seed: 0,
        }
    }
}

impl VerificationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_m == 0 || self.k_n == 0 {
            return Err(Error::Config("split counts must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("need at least one worker".into()));
        }
        for (name, v) in [
            ("timeout", self.timeout_per_query),
            ("global budget", self.global_budget),
        ] {
            if let Some(v) = v {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!("{name} must be a non-negative number")));
                }
            }
        }
        Ok(())
    }

    /// Effective split counts (`1 x 1` when splitting is off).
    pub fn splits(&self) -> (usize, usize) {
        if self.splitting {
            (self.k_m, self.k_n)
        } else {
            (1, 1)
        }
    }
}

/// Splits the position domain `[1, n] x [1, m]` into `k_m x k_n` regions,
/// `b` (rows) in the outer loop.
///
/// Real positions get near-equal closed intervals sharing their endpoints.
/// Integer positions get disjoint integer ranges of near-equal size.
pub fn split_region(
    m: usize,
    n: usize,
    k_m: usize,
    k_n: usize,
    positions: PositionMode,
) -> Result<Vec<PositionRegion>> {
    if m == 0 || n == 0 {
        return Err(Error::Config("empty position domain".into()));
    }
    if k_m == 0 || k_n == 0 || k_m > m || k_n > n {
        return Err(Error::Config(format!(
            "cannot split a {m} x {n} position domain {k_m} x {k_n} ways"
        )));
    }
    let b_parts = axis_parts(m, k_m, positions);
    let a_parts = axis_parts(n, k_n, positions);
    let mut out = Vec::with_capacity(k_m * k_n);
    for &(b_lo, b_hi) in &b_parts {
        for &(a_lo, a_hi) in &a_parts {
            out.push(PositionRegion::new(a_lo, a_hi, b_lo, b_hi));
        }
    }
    Ok(out)
}

fn axis_parts(len: usize, k: usize, positions: PositionMode) -> Vec<(f64, f64)> {
    match positions {
        PositionMode::Real => {
            let span = (len - 1) as f64;
            (0..k)
                .map(|t| {
                    let lo = 1.0 + span * t as f64 / k as f64;
                    let hi = if t + 1 == k {
                        len as f64
                    } else {
                        1.0 + span * (t + 1) as f64 / k as f64
                    };
                    (lo, hi)
                })
                .collect()
        }
        PositionMode::Integer => {
            // `len` integer points into `k` runs; the first `len % k` runs get
            // one extra point.
            let (base, extra) = (len / k, len % k);
            let mut start = 1;
            (0..k)
                .map(|t| {
                    let size = base + usize::from(t < extra);
                    let run = (start as f64, (start + size - 1) as f64);
                    start += size;
                    run
                })
                .collect()
        }
    }
}

/// Labels other than `q`, highest score on `x` first; ties by index.
pub fn sort_labels(f: &Network, x: &Image, q: Label) -> Result<Vec<Label>> {
    let y = f.forward(x.as_slice())?;
    f.check_label(q)?;
    let mut labels: Vec<Label> = (0..y.len()).filter(|&k| k != q.0).map(Label).collect();
    labels.sort_by(|a, b| y[b.0].total_cmp(&y[a.0]).then(a.0.cmp(&b.0)));
    Ok(labels)
}

/// Regions ordered by distance of their center to the domain center
/// (closest first, ties by original index).
fn center_out(regions: &[PositionRegion], m: usize, n: usize) -> Vec<usize> {
    let (ca, cb) = (0.5 * (1.0 + n as f64), 0.5 * (1.0 + m as f64));
    let mut order: Vec<usize> = (0..regions.len()).collect();
    let dist = |r: &PositionRegion| {
        let (a, b) = r.center();
        (a - ca).powi(2) + (b - cb).powi(2)
    };
    order.sort_by(|&i, &j| dist(&regions[i]).total_cmp(&dist(&regions[j])).then(i.cmp(&j)));
    order
}

/// One planned query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannedQuery {
    pub index: usize,
    pub region: PositionRegion,
    pub label: Label,
}

/// Query order: labels outermost, regions center-outward within a label.
pub fn plan_queries(
    f: &Network,
    x: &Image,
    spec: &OcclusionSpec,
    cfg: &VerificationConfig,
) -> Result<Vec<PlannedQuery>> {
    let q = f.classify(x.as_slice())?;
    let labels = if cfg.label_sorting {
        sort_labels(f, x, q)?
    } else {
        (0..f.output_dim()).filter(|&k| k != q.0).map(Label).collect()
    };
    let (k_m, k_n) = cfg.splits();
    let regions = split_region(x.height(), x.width(), k_m, k_n, spec.positions)?;
    let order = center_out(&regions, x.height(), x.width());
    let mut plan = Vec::with_capacity(labels.len() * regions.len());
    for &label in &labels {
        for &r in &order {
            plan.push(PlannedQuery {
                index: plan.len(),
                region: regions[r],
                label,
            });
        }
    }
    Ok(plan)
}

/// Full pipeline with the built-in verifier.
pub fn verify_occlusion_robustness(
    f: &Network,
    x: &Image,
    spec: &OcclusionSpec,
    cfg: &VerificationConfig,
) -> Result<Report> {
    verify_with_backend(f, x, spec, cfg, &BranchAndBound)
}

/// Full pipeline with any query backend.
pub fn verify_with_backend(
    f: &Network,
    x: &Image,
    spec: &OcclusionSpec,
    cfg: &VerificationConfig,
    backend: &dyn Backend,
) -> Result<Report> {
    cfg.validate()?;
    spec.validate(x)?;
    if f.input_dim() != x.len() {
        return Err(Error::DimensionMismatch {
            context: "classifier input vs image size",
            expected: f.input_dim(),
            found: x.len(),
        });
    }
    if f.output_dim() < 2 {
        return Err(Error::Config("classifier needs at least two classes".into()));
    }
    let q = f.classify(x.as_slice())?;
    let plan = plan_queries(f, x, spec, cfg)?;

    let build_start = Instant::now();
    let bundle = build_onn(x, spec)?;
    let composed = Arc::new(bundle.compose(f)?);
    let t_build = build_start.elapsed().as_secs_f64();

    let verify_start = Instant::now();
    let budget_end = cfg.global_budget.map(|s| verify_start + Duration::from_secs_f64(s));
    let per_query = cfg.timeout_per_query.map(Duration::from_secs_f64);
    let cancel = AtomicBool::new(false);
    let mut records = Vec::with_capacity(plan.len());

    // The attack sweep runs in plan order; it only ever ends the image early.
    if cfg.falsify_first {
        for planned in &plan {
            if budget_end.is_some_and(|end| Instant::now() >= end) {
                break;
            }
            if let Some(record) = run_one(
                planned, &bundle, f, &composed, q, per_query, budget_end, cfg.seed, &cancel, backend, true,
            ) {
                tracing::debug!(
                    index = planned.index,
                    label = planned.label.0,
                    "attack sweep found a counterexample"
                );
                records.push(record);
                break;
            }
        }
    }
    if records.is_empty() {
        run_pool(
            &plan,
            &bundle,
            f,
            &composed,
            q,
            per_query,
            budget_end,
            cfg,
            &cancel,
            backend,
            &mut records,
        );
    }

    let t_verify = verify_start.elapsed().as_secs_f64();
    let mut report = aggregate(records, plan.len())?;
    report.correct_label = q;
    report.totals.t_build = t_build;
    report.totals.t_verify = t_verify;
    report.config = Some(cfg.clone());
    report.spec = Some(spec.clone());
    Ok(report)
}

/// Runs the plan on `cfg.workers` threads until it is exhausted or some
/// query finds a validated counterexample.
#[allow(clippy::too_many_arguments)]
fn run_pool(
    plan: &[PlannedQuery],
    bundle: &crate::onn::OnnBundle,
    f: &Network,
    composed: &Arc<Network>,
    q: Label,
    per_query: Option<Duration>,
    budget_end: Option<Instant>,
    cfg: &VerificationConfig,
    cancel: &AtomicBool,
    backend: &dyn Backend,
    records: &mut Vec<QueryRecord>,
) {
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<QueryRecord>();
    std::thread::scope(|scope| {
        for _ in 0..cfg.workers.min(plan.len().max(1)) {
            let tx = tx.clone();
            let next = &next;
            scope.spawn(move || loop {
                if cancel.load(Ordering::Relaxed) {
                    break;
                }
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(planned) = plan.get(k) else { break };
                let Some(record) = run_one(
                    planned, bundle, f, composed, q, per_query, budget_end, cfg.seed, cancel, backend, false,
                ) else {
                    continue;
                };
                if matches!(record.status, QueryStatus::NonRobust) {
                    cancel.store(true, Ordering::Relaxed);
                }
                if tx.send(record).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for record in rx {
            records.push(record);
        }
    });
}

#[allow(clippy::too_many_arguments)]
fn run_one(
    planned: &PlannedQuery,
    bundle: &crate::onn::OnnBundle,
    f: &Network,
    composed: &Arc<Network>,
    q: Label,
    per_query: Option<Duration>,
    budget_end: Option<Instant>,
    seed: u64,
    cancel: &AtomicBool,
    backend: &dyn Backend,
    attack_only: bool,
) -> Option<QueryRecord> {
    let mut record = QueryRecord {
        index: planned.index,
        region: planned.region,
        label: planned.label,
        status: QueryStatus::Timeout,
        seconds: 0.0,
        branches: 0,
        warning: None,
        counterexample: None,
    };
    let mut timeout = per_query;
    if let Some(end) = budget_end {
        let left = end.saturating_duration_since(Instant::now());
        if left.is_zero() {
            return (!attack_only).then_some(record);
        }
        timeout = Some(timeout.map_or(left, |t| t.min(left)));
    }
    let input_box = match bundle.input_box(&planned.region) {
        Ok(b) => b,
        Err(e) => {
            record.status = QueryStatus::Unknown;
            record.warning = Some(e.to_string());
            return (!attack_only).then_some(record);
        }
    };
    let query = Query::new(composed.clone(), input_box, q, planned.label)
        .with_timeout(timeout)
        .with_seed(seed.wrapping_add((planned.index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)));

    let found: std::sync::Mutex<Option<Counterexample>> = std::sync::Mutex::new(None);
    let accept = |w: &[f64]| match validate_counterexample(bundle, f, &query, w) {
        Some(cx) => {
            *found.lock().unwrap_or_else(|p| p.into_inner()) = Some(cx);
            true
        }
        None => false,
    };
    let control = Control {
        cancel: Some(cancel),
        accept: Some(&accept),
    };
    let start = Instant::now();
    let verdict = if attack_only {
        match backend.attack(&query, &control) {
            Ok(Some(v)) if v.outcome.is_non_robust() => Ok(v),
            _ => return None,
        }
    } else {
        backend.check(&query, &control)
    };
    record.seconds = start.elapsed().as_secs_f64();
    match verdict {
        Ok(v) => {
            record.branches = v.stats.branches;
            match v.outcome {
                Outcome::Robust { warning } => {
                    record.status = QueryStatus::Robust;
                    record.warning = warning;
                }
                Outcome::NonRobust { witness, .. } => {
                    // The filter stored the validated counterexample; an
                    // external backend may bypass the filter, so re-check.
                    let cx = found
                        .into_inner()
                        .unwrap_or_else(|p| p.into_inner())
                        .filter(|cx| cx.theta.len() == witness.len())
                        .or_else(|| validate_counterexample(bundle, f, &query, &witness));
                    match cx {
                        Some(cx) => {
                            record.status = QueryStatus::NonRobust;
                            record.counterexample = Some(cx);
                        }
                        None => {
                            record.status = QueryStatus::Unknown;
                            record.warning = Some("backend witness failed validation".into());
                        }
                    }
                }
                Outcome::Timeout => record.status = QueryStatus::Timeout,
                Outcome::Cancelled => record.status = QueryStatus::Cancelled,
                Outcome::Unknown { reason } => {
                    record.status = QueryStatus::Unknown;
                    record.warning = Some(reason);
                }
            }
        }
        Err(e) => {
            record.status = QueryStatus::Unknown;
            record.warning = Some(e.to_string());
        }
    }
    if attack_only && record.status != QueryStatus::NonRobust {
        return None;
    }
    Some(record)
}
