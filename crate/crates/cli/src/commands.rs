//! The single-shot subcommands: verify, occlude, build-onn, emit-smt.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use occlusion_core::image::Image;
use occlusion_core::model::{load_network, network_to_string, Label, Network};
use occlusion_core::naive::{build_naive, emit_smtlib, solve_external, solver_from_env, SolverAnswer, SOLVER_ENV};
use occlusion_core::occlusion::{occlude, OcclusionSpec, Placement};
use occlusion_core::onn::{build_onn, PositionRegion};
use occlusion_core::orchestrator::{split_region, verify_occlusion_robustness, Overall, Report, VerificationConfig};
use serde::Serialize;

use crate::args::{BuildOnnArgs, EmitSmtArgs, OccludeArgs, Switch, VerifyArgs};

pub const EXIT_ROBUST: i32 = 0;
pub const EXIT_NON_ROBUST: i32 = 1;
pub const EXIT_INCONCLUSIVE: i32 = 2;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_FAILURE: i32 = 70;

/// An error together with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

/// Bad flags, unreadable or inconsistent inputs.
pub fn usage(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        error: error.into(),
    }
}

/// Anything that goes wrong after the inputs were accepted.
pub fn failure(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_FAILURE,
        error: error.into(),
    }
}

pub type Outcome = Result<i32, Failure>;

pub fn load_net(path: &Path) -> anyhow::Result<Network> {
    let file = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    load_network(BufReader::new(file)).with_context(|| format!("cannot parse {}", path.display()))
}

pub fn load_image(path: &Path) -> anyhow::Result<Image> {
    Image::load(path).with_context(|| format!("cannot load image {}", path.display()))
}

/// Checks everything the pipeline needs before any work starts.
pub fn check_inputs(f: &Network, x: &Image, spec: &OcclusionSpec) -> anyhow::Result<()> {
    spec.validate(x)?;
    if f.input_dim() != x.len() {
        bail!(
            "network expects {} inputs but the image has {} values ({}x{}x{})",
            f.input_dim(),
            x.len(),
            x.height(),
            x.width(),
            x.channels()
        );
    }
    if f.output_dim() < 2 {
        bail!("network must have at least two outputs");
    }
    Ok(())
}

pub fn exit_code(overall: Overall) -> i32 {
    match overall {
        Overall::Robust => EXIT_ROBUST,
        Overall::NonRobust => EXIT_NON_ROBUST,
        Overall::Inconclusive => EXIT_INCONCLUSIVE,
    }
}

/// Metadata written next to an exported counterexample image.
#[derive(Debug, Serialize)]
struct CounterexampleSidecar {
    a: f64,
    b: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    deltas: Option<Vec<f64>>,
    original_label: Label,
    adversarial_label: Label,
    margin: f64,
    /// 8-bit preview (PGM or PPM).
    image: String,
    /// Full-precision copy in the IMG text format.
    exact_image: String,
}

/// Writes `report.json`, `report.txt` and, for a counterexample, the
/// occluded image and its sidecar. Returns the written paths.
pub fn write_report(report: &Report, out_dir: &Path, stem: &str) -> anyhow::Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    let mut written = Vec::new();
    let json = out_dir.join(format!("{stem}.json"));
    fs::write(&json, report.to_json())?;
    written.push(json);
    let txt = out_dir.join(format!("{stem}.txt"));
    fs::write(&txt, report.to_text())?;
    written.push(txt);

    if let Some(cx) = &report.counterexample {
        let image = cx.image.as_ref().context("counterexample carries no image")?;
        let ext = if image.channels() == 1 { "pgm" } else { "ppm" };
        let preview = format!("counterexample.{ext}");
        let exact = "counterexample.img".to_string();
        image.save(&out_dir.join(&preview))?;
        image.save(&out_dir.join(&exact))?;
        let sidecar = CounterexampleSidecar {
            a: cx.placement.a,
            b: cx.placement.b,
            deltas: cx.placement.deltas.clone(),
            original_label: cx.original,
            adversarial_label: cx.predicted,
            margin: cx.margin,
            image: preview.clone(),
            exact_image: exact.clone(),
        };
        let meta = out_dir.join("counterexample.json");
        fs::write(&meta, serde_json::to_string_pretty(&sidecar)?)?;
        written.extend([out_dir.join(preview), out_dir.join(exact), meta]);
    }
    Ok(written)
}

pub fn verify(args: &VerifyArgs) -> Outcome {
    let f = load_net(&args.net).map_err(usage)?;
    let x = load_image(&args.image).map_err(usage)?;
    let spec = args.occlusion.spec();
    check_inputs(&f, &x, &spec).map_err(usage)?;
    if !(args.timeout >= 0.0 && args.timeout.is_finite()) {
        return Err(usage(anyhow::anyhow!("timeout must be a non-negative number")));
    }
    let mut cfg = VerificationConfig {
        k_m: args.split.0,
        k_n: args.split.1,
        timeout_per_query: Some(args.timeout),
        global_budget: args.global_budget,
        label_sorting: args.sort_labels == Switch::On,
        splitting: true,
        falsify_first: args.falsify_first == Switch::On,
        seed: args.seed,
        ..VerificationConfig::default()
    };
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    cfg.validate().map_err(usage)?;
    split_region(x.height(), x.width(), cfg.k_m, cfg.k_n, spec.positions).map_err(usage)?;

    let report = verify_occlusion_robustness(&f, &x, &spec, &cfg).map_err(failure)?;
    write_report(&report, &args.out_dir, "report").map_err(failure)?;
    if args.json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_text());
    }
    Ok(exit_code(report.overall))
}

pub fn occlude_cmd(args: &OccludeArgs) -> Outcome {
    let x = load_image(&args.image).map_err(usage)?;
    let spec = args.occlusion.spec();
    spec.validate(&x).map_err(usage)?;
    let (a, b) = (args.at.0, args.at.1);
    let mut placement = Placement::at(a, b);
    if spec.is_multiform() {
        let deltas = match (&args.delta, &args.deltas) {
            (Some(d), None) => vec![*d; x.len()],
            (None, Some(path)) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("cannot read {}", path.display()))
                    .map_err(usage)?;
                serde_json::from_str::<Vec<f64>>(&text)
                    .with_context(|| format!("{} is not a JSON array of numbers", path.display()))
                    .map_err(usage)?
            }
            _ => vec![0.0; x.len()],
        };
        placement = Placement::with_deltas(a, b, deltas);
    } else if args.delta.is_some() || args.deltas.is_some() {
        return Err(usage(anyhow::anyhow!("deltas only apply to multiform occlusions")));
    }
    let out = occlude(&x, &spec, &placement).map_err(usage)?;
    out.save(&args.out)
        .with_context(|| format!("cannot write {}", args.out.display()))
        .map_err(failure)?;
    Ok(0)
}

pub fn build_onn_cmd(args: &BuildOnnArgs) -> Outcome {
    let x = load_image(&args.image).map_err(usage)?;
    let spec = args.occlusion.spec();
    spec.validate(&x).map_err(usage)?;
    let f = match &args.net {
        Some(p) => {
            let f = load_net(p).map_err(usage)?;
            check_inputs(&f, &x, &spec).map_err(usage)?;
            Some(f)
        }
        None => None,
    };
    let region = args.region.map_or(PositionRegion::full(x.height(), x.width()), |r| r.0);
    region.check(x.height(), x.width()).map_err(usage)?;

    let bundle = build_onn(&x, &spec).map_err(failure)?;
    let net = match &f {
        Some(f) => bundle.compose(f).map_err(failure)?,
        None => bundle.onn.clone(),
    };
    fs::write(&args.out, network_to_string(&net))
        .with_context(|| format!("cannot write {}", args.out.display()))
        .map_err(failure)?;
    let manifest_path = args.manifest.clone().unwrap_or_else(|| args.out.with_extension("json"));
    let manifest = bundle.manifest(&region).map_err(failure)?;
    fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).map_err(failure)?,
    )
    .with_context(|| format!("cannot write {}", manifest_path.display()))
    .map_err(failure)?;
    eprintln!(
        "wrote {} ({} inputs, {} ReLUs) and {}",
        args.out.display(),
        net.input_dim(),
        net.relu_count(),
        manifest_path.display()
    );
    Ok(0)
}

pub fn emit_smt_cmd(args: &EmitSmtArgs) -> Outcome {
    let f = load_net(&args.net).map_err(usage)?;
    let x = load_image(&args.image).map_err(usage)?;
    let spec = args.occlusion.spec();
    check_inputs(&f, &x, &spec).map_err(usage)?;
    let q = match args.label {
        Some(l) => Label(l),
        None => f.classify(x.as_slice()).map_err(usage)?,
    };
    let region = args.region.map_or(PositionRegion::full(x.height(), x.width()), |r| r.0);
    let solver = if args.solve {
        Some(solver_from_env().ok_or_else(|| usage(anyhow::anyhow!("--solve needs {SOLVER_ENV} to name a solver")))?)
    } else {
        None
    };
    let enc = build_naive(&x, &f, &spec, &region, q).map_err(usage)?;
    let text = emit_smtlib(&enc);
    match &args.out {
        Some(p) => fs::write(p, &text)
            .with_context(|| format!("cannot write {}", p.display()))
            .map_err(failure)?,
        None => print!("{text}"),
    }
    if let Some(solver) = solver {
        let answer = solve_external(&enc, &solver, None).map_err(failure)?;
        match answer {
            SolverAnswer::Sat { model } => {
                let a = model.get("a").copied().unwrap_or(f64::NAN);
                let b = model.get("b").copied().unwrap_or(f64::NAN);
                eprintln!("sat: a={a} b={b}");
                return Ok(EXIT_NON_ROBUST);
            }
            SolverAnswer::Unsat => {
                eprintln!("unsat");
                return Ok(EXIT_ROBUST);
            }
            SolverAnswer::Unknown(why) => eprintln!("unknown: {why}"),
            SolverAnswer::Timeout => eprintln!("timeout"),
        }
        return Ok(EXIT_INCONCLUSIVE);
    }
    Ok(0)
}
