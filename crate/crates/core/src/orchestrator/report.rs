//! Per-query records, per-image reports and multi-image summaries.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Label;
use crate::occlusion::OcclusionSpec;
use crate::onn::PositionRegion;
use crate::verifier::Counterexample;

use super::VerificationConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryStatus {
    Robust,
    NonRobust,
    Timeout,
    Cancelled,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    /// Position in the dispatch plan.
    pub index: usize,
    pub region: PositionRegion,
    pub label: Label,
    pub status: QueryStatus,
    pub seconds: f64,
    pub branches: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<Counterexample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Overall {
    Robust,
    NonRobust,
    /// Some query timed out, was skipped or ended undecided.
    Inconclusive,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub planned: usize,
    pub robust: usize,
    pub non_robust: usize,
    pub timeouts: usize,
    pub cancelled: usize,
    pub unknown: usize,
    /// Seconds spent building and composing the occlusion network.
    pub t_build: f64,
    /// Wall-clock seconds of the query phase.
    pub t_verify: f64,
    /// Mean seconds of robust queries, if any.
    pub t_plus: Option<f64>,
    /// Mean seconds of non-robust queries, if any.
    pub t_minus: Option<f64>,
    /// Timed-out queries as a percentage of planned queries.
    pub timeout_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub overall: Overall,
    pub correct_label: Label,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<Counterexample>,
    pub totals: Totals,
    pub records: Vec<QueryRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<VerificationConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spec: Option<OcclusionSpec>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Folds query records (in completion order) into a report.
///
/// Any non-robust record makes the image non-robust, and the first one
/// supplies the counterexample. The image is robust only if every planned
/// query came back robust. The build and query-phase timings, and the correct
/// label when no counterexample carries it, are left for the caller.
pub fn aggregate(records: Vec<QueryRecord>, planned: usize) -> Result<Report> {
    if planned == 0 {
        return Err(Error::Config("no queries to aggregate".into()));
    }
    if records.len() > planned {
        return Err(Error::Config(format!(
            "{} records for {planned} planned queries",
            records.len()
        )));
    }
    let count = |s: QueryStatus| records.iter().filter(|r| r.status == s).count();
    let robust = count(QueryStatus::Robust);
    let non_robust = count(QueryStatus::NonRobust);
    let timeouts = count(QueryStatus::Timeout);
    let totals = Totals {
        planned,
        robust,
        non_robust,
        timeouts,
        cancelled: count(QueryStatus::Cancelled),
        unknown: count(QueryStatus::Unknown),
        t_build: 0.0,
        t_verify: 0.0,
        t_plus: mean(
            records
                .iter()
                .filter(|r| r.status == QueryStatus::Robust)
                .map(|r| r.seconds),
        ),
        t_minus: mean(
            records
                .iter()
                .filter(|r| r.status == QueryStatus::NonRobust)
                .map(|r| r.seconds),
        ),
        timeout_percent: 100.0 * timeouts as f64 / planned as f64,
    };
    let counterexample = records
        .iter()
        .find(|r| r.status == QueryStatus::NonRobust)
        .and_then(|r| r.counterexample.clone());
    let overall = if non_robust > 0 {
        Overall::NonRobust
    } else if robust == planned {
        Overall::Robust
    } else {
        Overall::Inconclusive
    };
    Ok(Report {
        overall,
        correct_label: counterexample.as_ref().map_or(Label(0), |cx| cx.original),
        counterexample,
        totals,
        records,
        config: None,
        spec: None,
    })
}

/// Seconds with three decimals, or `/` when undefined.
pub fn format_seconds(v: Option<f64>) -> String {
    v.map_or_else(|| "/".to_string(), |s| format!("{s:.3}"))
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Human-readable summary with one line per query.
    pub fn to_text(&self) -> String {
        let t = &self.totals;
        let mut out = String::new();
        let verdict = match self.overall {
            Overall::Robust => "robust",
            Overall::NonRobust => "NOT robust",
            Overall::Inconclusive => "inconclusive",
        };
        let _ = writeln!(out, "verdict: {verdict} (label {})", self.correct_label);
        if let Some(cx) = &self.counterexample {
            let _ = writeln!(
                out,
                "counterexample: a={:.4} b={:.4} predicted {} margin {:.6}",
                cx.placement.a, cx.placement.b, cx.predicted, cx.margin
            );
        }
        let _ = writeln!(
            out,
            "queries: {} planned, {} robust, {} non-robust, {} timeout, {} cancelled, {} unknown",
            t.planned, t.robust, t.non_robust, t.timeouts, t.cancelled, t.unknown
        );
        let _ = writeln!(
            out,
            "T_build {}  T_verify {}  T+ {}  T- {}  TO% {:.2}",
            format_seconds(Some(t.t_build)),
            format_seconds(Some(t.t_verify)),
            format_seconds(t.t_plus),
            format_seconds(t.t_minus),
            t.timeout_percent
        );
        let _ = writeln!(
            out,
            "{:>5} {:>5} {:>23} {:>10} {:>9} {:>8}",
            "query", "label", "region (a x b)", "status", "seconds", "branches"
        );
        for r in &self.records {
            let region = format!(
                "[{:.1},{:.1}]x[{:.1},{:.1}]",
                r.region.a_lo, r.region.a_hi, r.region.b_lo, r.region.b_hi
            );
            let status = serde_json::to_value(r.status)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{:>5} {:>5} {:>23} {:>10} {:>9.3} {:>8}",
                r.index, r.label, region, status, r.seconds, r.branches
            );
        }
        out
    }
}

/// One row of a benchmark table: results over several images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub images: usize,
    pub robust: usize,
    pub non_robust: usize,
    pub inconclusive: usize,
    /// Mean query-phase seconds over robust images.
    pub t_plus: Option<f64>,
    /// Mean query-phase seconds over non-robust images.
    pub t_minus: Option<f64>,
    pub t_build: f64,
    /// Timed-out queries over all planned queries, in percent.
    pub timeout_percent: f64,
}

pub fn summarize(reports: &[Report]) -> Result<Summary> {
    if reports.is_empty() {
        return Err(Error::Config("no reports to summarize".into()));
    }
    let by = |o: Overall| reports.iter().filter(move |r| r.overall == o);
    let planned: usize = reports.iter().map(|r| r.totals.planned).sum();
    let timeouts: usize = reports.iter().map(|r| r.totals.timeouts).sum();
    Ok(Summary {
        images: reports.len(),
        robust: by(Overall::Robust).count(),
        non_robust: by(Overall::NonRobust).count(),
        inconclusive: by(Overall::Inconclusive).count(),
        t_plus: mean(by(Overall::Robust).map(|r| r.totals.t_verify)),
        t_minus: mean(by(Overall::NonRobust).map(|r| r.totals.t_verify)),
        t_build: mean(reports.iter().map(|r| r.totals.t_build)).unwrap_or(0.0),
        timeout_percent: if planned == 0 {
            0.0
        } else {
            100.0 * timeouts as f64 / planned as f64
        },
    })
}
