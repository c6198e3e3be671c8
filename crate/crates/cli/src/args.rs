//! Command-line flags and the small value grammars they accept.

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use occlusion_core::occlusion::{Coloring, OcclusionSpec, PositionMode};
use occlusion_core::onn::PositionRegion;

#[derive(Debug, Parser)]
#[command(
    name = "occverify",
    version,
    about = "Occlusion robustness verification for ReLU image classifiers"
)]
pub struct Cli {
    /// Log progress to standard error (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Verify a classifier on one image against an occlusion.
    Verify(VerifyArgs),
    /// Apply one occlusion to an image and save the result.
    Occlude(OccludeArgs),
    /// Export the occlusion network (optionally composed with a classifier).
    BuildOnn(BuildOnnArgs),
    /// Emit the direct constraint encoding as SMT-LIB2.
    EmitSmt(EmitSmtArgs),
    /// Run a sweep described by a TOML manifest.
    Bench(BenchArgs),
}

/// `WxH`, e.g. `5x5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims(pub usize, pub usize);

impl FromStr for Dims {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected AxB, got `{s}`"))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<usize>()
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| format!("`{t}` is not a positive integer"))
        };
        Ok(Dims(parse(a)?, parse(b)?))
    }
}

/// `uniform:MU`, `uniform:R,G,B` or `multiform:EPS`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorArg(pub Coloring);

impl FromStr for ColorArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| format!("expected uniform:MU or multiform:EPS, got `{s}`"))?;
        let number = |t: &str| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("`{t}` is not a number"))
        };
        match kind {
            "uniform" => {
                let mu = value.split(',').map(number).collect::<Result<Vec<_>, _>>()?;
                if let Some(v) = mu.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return Err(format!("color {v} outside [0, 1]"));
                }
                Ok(ColorArg(Coloring::Uniform { mu }))
            }
            "multiform" => {
                let eps = number(value)?;
                if !(eps > 0.0 && eps <= 1.0) {
                    return Err(format!("epsilon {eps} outside (0, 1]"));
                }
                Ok(ColorArg(Coloring::Multiform { eps }))
            }
            other => Err(format!("unknown coloring `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Positions {
    Int,
    Real,
}

impl From<Positions> for PositionMode {
    fn from(p: Positions) -> Self {
        match p {
            Positions::Int => PositionMode::Integer,
            Positions::Real => PositionMode::Real,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

/// `A_LO:A_HI,B_LO:B_HI`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionArg(pub PositionRegion);

impl FromStr for RegionArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let range = |t: &str| -> Result<(f64, f64), String> {
            let (lo, hi) = t.split_once(':').ok_or_else(|| format!("expected LO:HI, got `{t}`"))?;
            let p = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("`{v}` is not a number"));
            Ok((p(lo)?, p(hi)?))
        };
        let (a, b) = s
            .split_once(',')
            .ok_or_else(|| format!("expected A_LO:A_HI,B_LO:B_HI, got `{s}`"))?;
        let (a, b) = (range(a)?, range(b)?);
        Ok(RegionArg(PositionRegion::new(a.0, a.1, b.0, b.1)))
    }
}

/// `A,B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointArg(pub f64, pub f64);

impl FromStr for PointArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s.split_once(',').ok_or_else(|| format!("expected A,B, got `{s}`"))?;
        let p = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("`{v}` is not a number"));
        Ok(PointArg(p(a)?, p(b)?))
    }
}

#[derive(Debug, Clone, Args)]
pub struct OcclusionArgs {
    /// Occlusion size as WxH (columns x rows).
    #[arg(long = "occ-size", value_name = "WxH")]
    pub occ_size: Dims,

    /// Occlusion coloring: uniform:MU, uniform:R,G,B or multiform:EPS.
    #[arg(long, value_name = "COLORING")]
    pub color: ColorArg,

    /// Occlusion positions: integer grid or any real position.
    #[arg(long, value_enum, default_value = "int")]
    pub positions: Positions,
}

impl OcclusionArgs {
    pub fn spec(&self) -> OcclusionSpec {
        OcclusionSpec {
            w: self.occ_size.0,
            h: self.occ_size.1,
            coloring: self.color.0.clone(),
            positions: self.positions.into(),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// Classifier in the FNN text format.
    #[arg(long)]
    pub net: PathBuf,

    /// Input image (PGM/PPM or IMG text).
    #[arg(long)]
    pub image: PathBuf,

    #[command(flatten)]
    pub occlusion: OcclusionArgs,

    /// Split the position domain into KMxKN regions (rows x columns).
    #[arg(long, value_name = "KMxKN", default_value = "1x1")]
    pub split: Dims,

    /// Per-query timeout in seconds.
    #[arg(long, value_name = "SECS", default_value_t = 60.0)]
    pub timeout: f64,

    /// Optional wall-clock budget for the whole image, in seconds.
    #[arg(long, value_name = "SECS")]
    pub global_budget: Option<f64>,

    /// Worker threads (default: logical cores).
    #[arg(long)]
    pub workers: Option<usize>,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Dispatch adversarial labels by descending score.
    #[arg(long = "sort-labels", value_enum, default_value = "on")]
    pub sort_labels: Switch,

    /// Attack every planned query before any complete search starts.
    #[arg(long = "falsify-first", value_enum, default_value = "on")]
    pub falsify_first: Switch,

    /// Directory for the report and counterexample files.
    #[arg(long, default_value = "occverify-out")]
    pub out_dir: PathBuf,

    /// Print the JSON report instead of the text table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct OccludeArgs {
    #[arg(long)]
    pub image: PathBuf,

    #[command(flatten)]
    pub occlusion: OcclusionArgs,

    /// Occlusion position as A,B (column, row; 1-based).
    #[arg(long, value_name = "A,B", allow_hyphen_values = true)]
    pub at: PointArg,

    /// Multiform: one delta for every occluded entry.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "deltas")]
    pub delta: Option<f64>,

    /// Multiform: JSON array of per-entry deltas in flat image order.
    #[arg(long)]
    pub deltas: Option<PathBuf>,

    /// Output path; `.pgm`/`.ppm` writes netpbm, anything else IMG text.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BuildOnnArgs {
    #[arg(long)]
    pub image: PathBuf,

    #[command(flatten)]
    pub occlusion: OcclusionArgs,

    /// Classifier to append after the occlusion network.
    #[arg(long)]
    pub net: Option<PathBuf>,

    /// Position region A_LO:A_HI,B_LO:B_HI for the input bounds (default: all).
    #[arg(long, value_name = "REGION")]
    pub region: Option<RegionArg>,

    /// Network output path (FNN text format).
    #[arg(long)]
    pub out: PathBuf,

    /// Input description (JSON); defaults to the output path with `.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EmitSmtArgs {
    #[arg(long)]
    pub net: PathBuf,

    #[arg(long)]
    pub image: PathBuf,

    #[command(flatten)]
    pub occlusion: OcclusionArgs,

    /// Correct label (default: the classifier's prediction on the image).
    #[arg(long)]
    pub label: Option<usize>,

    /// Position region A_LO:A_HI,B_LO:B_HI (default: all).
    #[arg(long, value_name = "REGION")]
    pub region: Option<RegionArg>,

    /// Output path (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Also run the solver named by OCC_SMT_SOLVER and report its answer.
    #[arg(long)]
    pub solve: bool,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// TOML manifest describing the sweep.
    #[arg(long)]
    pub manifest: PathBuf,

    /// Directory for bench.txt and bench.json.
    #[arg(long, default_value = "occverify-bench")]
    pub out_dir: PathBuf,

    /// Override the worker count from the manifest.
    #[arg(long)]
    pub workers: Option<usize>,
}
