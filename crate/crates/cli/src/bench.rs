//! Benchmark sweeps over networks, images, occlusion sizes, colorings and
//! verifier configurations.
//!
//! ```toml
//! seed = 0
//! timeout = 60.0
//! workers = 1
//! images = ["img0.pgm", "img1.pgm"]
//! sizes = ["2x2", "5x5"]
//! colors = ["multiform:0.05", "multiform:0.10"]
//! positions = ["int"]
//!
//! [[networks]]
//! name = "small"
//! path = "small.fnn"
//!
//! [[configs]]
//! name = "split"
//! split = "4x4"
//! sort_labels = true
//! falsify_first = true
//! ```
//!
//! Relative paths are resolved against the manifest's directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use occlusion_core::image::Image;
use occlusion_core::model::Network;
use occlusion_core::occlusion::OcclusionSpec;
use occlusion_core::orchestrator::{
    format_seconds, split_region, summarize, verify_occlusion_robustness, Overall, Report, Summary, VerificationConfig,
};
use serde::{Deserialize, Serialize};

use crate::args::{BenchArgs, ColorArg, Dims, Positions};
use crate::commands::{check_inputs, failure, load_image, load_net, usage, Outcome};

fn default_timeout() -> f64 {
    60.0
}

fn default_positions() -> Vec<String> {
    vec!["int".into()]
}

fn default_split() -> String {
    "1x1".into()
}

fn default_on() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_timeout")]
    pub timeout: f64,
    pub global_budget: Option<f64>,
    pub workers: Option<usize>,
    pub networks: Vec<NetworkEntry>,
    pub images: Vec<PathBuf>,
    pub sizes: Vec<String>,
    pub colors: Vec<String>,
    #[serde(default = "default_positions")]
    pub positions: Vec<String>,
    #[serde(default)]
    pub configs: Vec<ConfigEntry>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkEntry {
    pub name: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigEntry {
    pub name: String,
    #[serde(default = "default_split")]
    pub split: String,
    #[serde(default = "default_on")]
    pub sort_labels: bool,
    #[serde(default = "default_on")]
    pub falsify_first: bool,
}

/// One image's outcome inside a row.
#[derive(Debug, Clone, Serialize)]
pub struct ImageResult {
    pub image: String,
    pub overall: Overall,
    pub t_build: f64,
    pub t_verify: f64,
    pub queries: usize,
    pub timeouts: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Row {
    pub network: String,
    pub size: String,
    pub coloring: String,
    pub positions: String,
    pub config: String,
    pub summary: Summary,
    pub images: Vec<ImageResult>,
}

/// Median query-phase time on non-robust images for each configuration of
/// one grid cell, with the speedup of each over the first configuration.
#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub network: String,
    pub size: String,
    pub coloring: String,
    pub positions: String,
    pub configs: Vec<String>,
    pub median_non_robust: Vec<Option<f64>>,
    pub speedup: Vec<Option<f64>>,
    pub verdicts_agree: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchResult {
    pub seed: u64,
    pub rows: Vec<Row>,
    pub comparisons: Vec<Comparison>,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

struct Plan {
    networks: Vec<(String, Network)>,
    images: Vec<(String, Image)>,
    specs: Vec<(String, String, String, OcclusionSpec)>,
    configs: Vec<(String, VerificationConfig)>,
}

fn parse_manifest(text: &str) -> anyhow::Result<Manifest> {
    let manifest: Manifest = toml::from_str(text)?;
    if manifest.networks.is_empty() || manifest.images.is_empty() {
        anyhow::bail!("manifest needs at least one network and one image");
    }
    if manifest.sizes.is_empty() || manifest.colors.is_empty() {
        anyhow::bail!("manifest needs at least one size and one coloring");
    }
    Ok(manifest)
}

fn plan(manifest: &Manifest, base: &Path, workers: Option<usize>) -> anyhow::Result<Plan> {
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    let networks = manifest
        .networks
        .iter()
        .map(|n| Ok((n.name.clone(), load_net(&resolve(&n.path))?)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let images = manifest
        .images
        .iter()
        .map(|p| Ok((p.display().to_string(), load_image(&resolve(p))?)))
        .collect::<anyhow::Result<Vec<_>>>()?;

    let mut specs = Vec::new();
    for size in &manifest.sizes {
        let Dims(w, h) = size.parse().map_err(|e: String| anyhow::anyhow!("sizes: {e}"))?;
        for color in &manifest.colors {
            let ColorArg(coloring) = color.parse().map_err(|e: String| anyhow::anyhow!("colors: {e}"))?;
            for pos in &manifest.positions {
                let mode = match pos.as_str() {
                    "int" => Positions::Int,
                    "real" => Positions::Real,
                    other => anyhow::bail!("positions: unknown mode `{other}`"),
                };
                let spec = OcclusionSpec {
                    w,
                    h,
                    coloring: coloring.clone(),
                    positions: mode.into(),
                };
                specs.push((size.clone(), color.clone(), pos.clone(), spec));
            }
        }
    }

    if !(manifest.timeout >= 0.0 && manifest.timeout.is_finite()) {
        anyhow::bail!("timeout must be a non-negative number");
    }
    let base_cfg = {
        let mut cfg = VerificationConfig {
            timeout_per_query: Some(manifest.timeout),
            global_budget: manifest.global_budget,
            seed: manifest.seed,
            ..VerificationConfig::default()
        };
        if let Some(w) = workers.or(manifest.workers) {
            cfg.workers = w;
        }
        cfg
    };
    let entries = if manifest.configs.is_empty() {
        vec![ConfigEntry {
            name: "default".into(),
            split: default_split(),
            sort_labels: true,
            falsify_first: true,
        }]
    } else {
        manifest.configs.clone()
    };
    let mut configs = Vec::new();
    for c in entries {
        let Dims(k_m, k_n) = c
            .split
            .parse()
            .map_err(|e: String| anyhow::anyhow!("configs.{}.split: {e}", c.name))?;
        let cfg = VerificationConfig {
            k_m,
            k_n,
            label_sorting: c.sort_labels,
            falsify_first: c.falsify_first,
            ..base_cfg.clone()
        };
        cfg.validate()?;
        configs.push((c.name, cfg));
    }

    for (_, f) in &networks {
        for (name, x) in &images {
            for (.., spec) in &specs {
                check_inputs(f, x, spec).with_context(|| format!("image {name}"))?;
                for (cfg_name, cfg) in &configs {
                    split_region(x.height(), x.width(), cfg.k_m, cfg.k_n, spec.positions)
                        .with_context(|| format!("configs.{cfg_name}.split on image {name}"))?;
                }
            }
        }
    }
    Ok(Plan {
        networks,
        images,
        specs,
        configs,
    })
}

/// Runs every cell of the grid.
fn run(plan: &Plan, seed: u64) -> anyhow::Result<BenchResult> {
    let mut rows = Vec::new();
    let mut comparisons = Vec::new();
    for (net_name, f) in &plan.networks {
        for (size, color, pos, spec) in &plan.specs {
            let mut cell: Vec<Row> = Vec::new();
            for (cfg_name, cfg) in &plan.configs {
                let mut reports: Vec<Report> = Vec::new();
                let mut images = Vec::new();
                for (img_name, x) in &plan.images {
                    let report = verify_occlusion_robustness(f, x, spec, cfg)?;
                    tracing::info!(net = %net_name, size = %size, color = %color, config = %cfg_name, image = %img_name, verdict = ?report.overall, "verified");
                    images.push(ImageResult {
                        image: img_name.clone(),
                        overall: report.overall,
                        t_build: report.totals.t_build,
                        t_verify: report.totals.t_verify,
                        queries: report.totals.planned,
                        timeouts: report.totals.timeouts,
                    });
                    reports.push(report);
                }
                cell.push(Row {
                    network: net_name.clone(),
                    size: size.clone(),
                    coloring: color.clone(),
                    positions: pos.clone(),
                    config: cfg_name.clone(),
                    summary: summarize(&reports)?,
                    images,
                });
            }
            if cell.len() > 1 {
                comparisons.push(compare(&cell));
            }
            rows.extend(cell);
        }
    }
    Ok(BenchResult {
        seed,
        rows,
        comparisons,
    })
}

fn compare(cell: &[Row]) -> Comparison {
    let first = &cell[0];
    let decided = |o: Overall| o != Overall::Inconclusive;
    let verdicts_agree = cell.iter().all(|row| {
        row.images
            .iter()
            .zip(&first.images)
            .all(|(u, v)| !(decided(u.overall) && decided(v.overall)) || u.overall == v.overall)
    });
    let medians: Vec<Option<f64>> = cell
        .iter()
        .map(|row| {
            let mut t: Vec<f64> = row
                .images
                .iter()
                .filter(|r| r.overall == Overall::NonRobust)
                .map(|r| r.t_verify)
                .collect();
            median(&mut t)
        })
        .collect();
    let speedup = medians
        .iter()
        .map(|m| match (medians[0], m) {
            (Some(base), Some(m)) if *m > 0.0 => Some(base / m),
            _ => None,
        })
        .collect();
    Comparison {
        network: first.network.clone(),
        size: first.size.clone(),
        coloring: first.coloring.clone(),
        positions: first.positions.clone(),
        configs: cell.iter().map(|r| r.config.clone()).collect(),
        median_non_robust: medians,
        speedup,
        verdicts_agree,
    }
}

pub fn render(result: &BenchResult) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:>5} {:<16} {:<4} {:<12} {:>9} {:>4} {:>8} {:>8} {:>8} {:>6}",
        "network", "size", "coloring", "pos", "config", "NR / R", "inc", "T+", "T-", "T_build", "TO%"
    );
    for row in &result.rows {
        let s = &row.summary;
        let _ = writeln!(
            out,
            "{:<12} {:>5} {:<16} {:<4} {:<12} {:>9} {:>4} {:>8} {:>8} {:>8} {:>6.2}",
            row.network,
            row.size,
            row.coloring,
            row.positions,
            row.config,
            format!("{} / {}", s.non_robust, s.robust),
            s.inconclusive,
            format_seconds(s.t_plus),
            format_seconds(s.t_minus),
            format_seconds(Some(s.t_build)),
            s.timeout_percent
        );
    }
    if !result.comparisons.is_empty() {
        let _ = writeln!(
            out,
            "\nmedian query-phase seconds on non-robust images (speedup over first config)"
        );
        for c in &result.comparisons {
            let cells: Vec<String> = c
                .configs
                .iter()
                .zip(&c.median_non_robust)
                .zip(&c.speedup)
                .map(|((name, m), s)| {
                    let speed = s.map_or_else(|| "/".to_string(), |v| format!("{v:.2}x"));
                    format!("{name}: {} ({speed})", format_seconds(*m))
                })
                .collect();
            let _ = writeln!(
                out,
                "{} {} {} {}: {}{}",
                c.network,
                c.size,
                c.coloring,
                c.positions,
                cells.join(", "),
                if c.verdicts_agree { "" } else { "  VERDICTS DIFFER" }
            );
        }
    }
    out
}

pub fn bench(args: &BenchArgs) -> Outcome {
    let text = fs::read_to_string(&args.manifest)
        .with_context(|| format!("cannot read {}", args.manifest.display()))
        .map_err(usage)?;
    let manifest = parse_manifest(&text)
        .with_context(|| format!("invalid manifest {}", args.manifest.display()))
        .map_err(usage)?;
    let base = args.manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let plan = plan(&manifest, &base, args.workers).map_err(usage)?;
    let result = run(&plan, manifest.seed).map_err(failure)?;

    let table = render(&result);
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("cannot create {}", args.out_dir.display()))
        .map_err(failure)?;
    fs::write(args.out_dir.join("bench.txt"), &table).map_err(failure)?;
    fs::write(
        args.out_dir.join("bench.json"),
        serde_json::to_string_pretty(&result).map_err(failure)?,
    )
    .map_err(failure)?;
    print!("{table}");
    Ok(0)
}
