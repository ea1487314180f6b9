//! Command-line front end: one subcommand per workflow.
//!
//! Reports go to stdout (plain text, or one JSON object with `--json`),
//! arrays go to the files named by the flags. Every JSON report carries the
//! model constants the run actually used.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{contract, Error, Result};
use crate::fields::{rgbxy_guidance, spatial_gradient, DisparityMap, FeatureMap, GradientField, DEFAULT_XY_SCALE};
use crate::gradcheck::{run_gradcheck, GradcheckConfig, Operator};
use crate::imageio::{read_image, read_pfm, write_mask, write_pfm, write_pfm_values, write_rgb};
use crate::loss::LossWeights;
use crate::metrics::{evaluate, DEFAULT_BAD_THRESHOLD};
use crate::occlusion::{hard_occlusion_oracle, soft_occlusion, OcclusionConfig};
use crate::optimize::{history_csv, refine_disparity, sparsify_ground_truth, synth_scene, RefineConfig, SceneSpec};
use crate::pac::{gradsmooth_apply, GradSmoothParams, GRADSMOOTH_DILATIONS};

#[derive(Debug, Parser)]
#[command(
    name = "stereo-priors",
    version,
    about = "Gradient-domain smoothness and occlusion priors for disparity maps"
)]
pub struct Cli {
    /// Seed for every random choice (sparsification, synthetic noise, gradient checks).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for the parallel operators (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Print a single JSON object instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Soft occlusion map of a disparity PFM, optionally with the exact map.
    Occlude(OccludeArgs),
    /// Filter disparity gradients with GradSmooth under image guidance.
    Smooth(SmoothArgs),
    /// Refine a disparity map by gradient descent on the composite loss.
    Refine(RefineArgs),
    /// Bad-pixel percentage and MAE against ground truth.
    Eval(EvalArgs),
    /// Finite-difference check of every analytic gradient.
    Gradcheck(GradcheckArgs),
    /// Render a piecewise-planar scene from a JSON description.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct OcclusionFlags {
    #[arg(long, default_value_t = 3.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    pub d0: f64,
    /// Candidate window in pixels (default: ceil(max disparity) + 2).
    #[arg(long)]
    pub max_scan: Option<usize>,
}

impl OcclusionFlags {
    fn config(&self) -> Result<OcclusionConfig> {
        let cfg = OcclusionConfig {
            alpha: self.alpha,
            d0: self.d0,
            max_scan: self.max_scan,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SmoothingFlags {
    /// Weight of the pixel coordinates in the guidance features.
    #[arg(long, default_value_t = DEFAULT_XY_SCALE)]
    pub xy_scale: f64,
    /// Delta kernels instead of the default 3x3 box filters.
    #[arg(long)]
    pub identity: bool,
    /// Normalize affinities over each stencil.
    #[arg(long)]
    pub normalized: bool,
}

impl SmoothingFlags {
    fn params(&self) -> GradSmoothParams {
        let base = if self.identity {
            GradSmoothParams::identity()
        } else {
            GradSmoothParams::default()
        };
        base.normalized(self.normalized)
    }
}

#[derive(Debug, Args)]
pub struct OccludeArgs {
    pub disparity: PathBuf,
    /// Soft map as an 8-bit PNG (255 = occluded).
    #[arg(long, short)]
    pub out: PathBuf,
    /// Also write the exact geometric map here.
    #[arg(long)]
    pub hard: Option<PathBuf>,
    /// Threshold of the exact test, in pixels.
    #[arg(long, default_value_t = 0.0)]
    pub threshold: f64,
    #[command(flatten)]
    pub occlusion: OcclusionFlags,
}

#[derive(Debug, Args)]
pub struct SmoothArgs {
    pub disparity: PathBuf,
    pub guidance: PathBuf,
    /// Refined horizontal gradient (PFM).
    #[arg(long)]
    pub out_dx: PathBuf,
    /// Refined vertical gradient (PFM).
    #[arg(long)]
    pub out_dy: PathBuf,
    /// Disparity reintegrated from the refined gradients (PFM).
    #[arg(long)]
    pub preview: Option<PathBuf>,
    /// Ground-truth disparity; adds gradient MAE before and after filtering to the report.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[command(flatten)]
    pub smoothing: SmoothingFlags,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    pub init: PathBuf,
    pub gt: PathBuf,
    pub guidance: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Per-iteration loss history as CSV.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda2: f64,
    #[arg(long, default_value_t = 500)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0.05)]
    pub step_size: f64,
    /// Keep this random fraction of the ground truth as supervision.
    #[arg(long, default_value_t = 1.0)]
    pub gt_fraction: f64,
    /// Update the GradSmooth filters along with the disparities.
    #[arg(long)]
    pub optimize_filters: bool,
    #[command(flatten)]
    pub occlusion: OcclusionFlags,
    #[command(flatten)]
    pub smoothing: SmoothingFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub pred: PathBuf,
    pub gt: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BAD_THRESHOLD)]
    pub tau: f64,
    /// Ignore ground truth above this disparity.
    #[arg(long)]
    pub max_disparity: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CorruptTarget {
    Pac,
    SoftOcclusion,
    SmoothL1,
    TotalLoss,
}

impl From<CorruptTarget> for Operator {
    fn from(t: CorruptTarget) -> Self {
        match t {
            CorruptTarget::Pac => Operator::Pac,
            CorruptTarget::SoftOcclusion => Operator::SoftOcclusion,
            CorruptTarget::SmoothL1 => Operator::SmoothL1,
            CorruptTarget::TotalLoss => Operator::TotalLoss,
        }
    }
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Deliberately perturb one operator's analytic gradient.
    #[arg(long, hide = true)]
    pub corrupt: Option<CorruptTarget>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene description (JSON); `--two-plane` replaces it with the built-in fixture.
    #[arg(required_unless_present = "two_plane")]
    pub spec: Option<PathBuf>,
    /// Built-in two-plane fixture of this size.
    #[arg(long, conflicts_with = "spec")]
    pub two_plane: Option<usize>,
    /// Colour image (PNG).
    #[arg(long)]
    pub image: PathBuf,
    /// Ground-truth disparity (PFM).
    #[arg(long)]
    pub gt: PathBuf,
    /// Exact occlusion map of the ground truth (PNG).
    #[arg(long)]
    pub occlusion: Option<PathBuf>,
}

/// Parses `args` (including the program name), runs the command and maps
/// the outcome to an exit code.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(&cli) {
        Ok(Outcome { report, text, ok }) => {
            if cli.json {
                println!("{report}");
            } else {
                println!("{text}");
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Diverged { history, .. } = &e {
                eprint!("{}", history_csv(history));
            }
            ExitCode::FAILURE
        }
    }
}

/// What a command prints, and whether it counts as success.
pub struct Outcome {
    pub report: Value,
    pub text: String,
    pub ok: bool,
}

pub fn execute(cli: &Cli) -> Result<Outcome> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(contract("--threads must be at least 1"));
        }
        // Only the first pool request in a process takes effect.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Occlude(a) => occlude(a),
        Command::Smooth(a) => smooth(a),
        Command::Refine(a) => refine(a, seed),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a, seed),
        Command::Synth(a) => synth(a, cli.seed),
    }
}

#[derive(Serialize)]
struct Constants {
    alpha: f64,
    d0: f64,
    lambda1: f64,
    lambda2: f64,
    dilations: [usize; 2],
    xy_scale: f64,
}

impl Default for Constants {
    fn default() -> Self {
        let occ = OcclusionConfig::default();
        let w = LossWeights::default();
        Self {
            alpha: occ.alpha,
            d0: occ.d0,
            lambda1: w.lambda1,
            lambda2: w.lambda2,
            dilations: GRADSMOOTH_DILATIONS,
            xy_scale: DEFAULT_XY_SCALE,
        }
    }
}

fn with_constants(mut report: Value, constants: Constants) -> Value {
    report["constants"] = serde_json::to_value(constants).expect("constants serialize");
    report
}

fn read_disparity(path: &Path) -> Result<DisparityMap> {
    read_pfm(&read_file(path)?)
}

fn read_guidance(path: &Path, xy_scale: f64) -> Result<FeatureMap> {
    rgbxy_guidance(&read_image(&read_file(path)?)?, xy_scale)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn same_size(a: &DisparityMap, w: usize, h: usize, what: &str) -> Result<()> {
    if a.width() != w || a.height() != h {
        return Err(contract(format!(
            "{what} is {}x{}, expected {w}x{h}",
            a.width(),
            a.height()
        )));
    }
    Ok(())
}

fn occlude(a: &OccludeArgs) -> Result<Outcome> {
    let d = read_disparity(&a.disparity)?;
    let cfg = a.occlusion.config()?;
    let (soft, _) = soft_occlusion(&d, &cfg)?;
    write_file(&a.out, &write_mask(&soft)?)?;
    let valid = soft.valid.iter().filter(|v| **v).count();
    let mean = soft
        .values
        .iter()
        .zip(&soft.valid)
        .filter(|(_, ok)| **ok)
        .map(|(v, _)| v)
        .sum::<f64>()
        / valid as f64;
    let above_half = soft.thresholded(0.5).occluded_count();
    let mut report = json!({
        "command": "occlude",
        "width": d.width(),
        "height": d.height(),
        "valid_pixels": valid,
        "scan_window": cfg.scan_window(&d),
        "mean_soft": mean,
        "soft_above_half": above_half,
    });
    let mut text = format!(
        "{}x{}: mean soft occlusion {mean:.4}, {above_half} of {valid} pixels above 0.5",
        d.width(),
        d.height()
    );
    if let Some(path) = &a.hard {
        let hard = hard_occlusion_oracle(&d, a.threshold);
        write_file(path, &write_mask(&hard)?)?;
        report["hard_occluded"] = json!(hard.occluded_count());
        report["hard_threshold"] = json!(a.threshold);
        text.push_str(&format!("; exact map marks {} pixels", hard.occluded_count()));
    }
    let constants = Constants {
        alpha: cfg.alpha,
        d0: cfg.d0,
        ..Default::default()
    };
    Ok(Outcome {
        report: with_constants(report, constants),
        text,
        ok: true,
    })
}

/// Mean over jointly valid samples of the absolute gradient difference,
/// both components pooled.
fn gradient_mae(a: &GradientField, b: &GradientField) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..a.len() {
        if a.valid[i] && b.valid[i] {
            sum += (a.dx[i] - b.dx[i]).abs() + (a.dy[i] - b.dy[i]).abs();
            n += 2;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Least-squares surface whose gradients follow `g`, softly anchored to `anchor`.
fn reintegrate(g: &GradientField, anchor: &DisparityMap) -> DisparityMap {
    const ANCHOR_WEIGHT: f64 = 0.1;
    const SWEEPS: usize = 200;
    let (w, h) = (g.width, g.height);
    let ok = anchor.valid();
    let mut p: Vec<f64> = anchor
        .values()
        .iter()
        .zip(ok)
        .map(|(v, o)| if *o { *v } else { 0.0 })
        .collect();
    let usable = |i: usize| g.valid[i] && ok[i];
    for _ in 0..SWEEPS {
        let prev = p.clone();
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if !ok[i] {
                    continue;
                }
                let mut num = ANCHOR_WEIGHT * anchor.values()[i];
                let mut den = ANCHOR_WEIGHT;
                // forward-difference links to the right and below, each
                // carrying the average refined gradient of its two ends
                let mut link = |j: usize, slope: f64, sign: f64| {
                    num += prev[j] - sign * slope;
                    den += 1.0;
                };
                if x + 1 < w && usable(i) && usable(i + 1) {
                    link(i + 1, 0.5 * (g.dx[i] + g.dx[i + 1]), 1.0);
                }
                if x > 0 && usable(i) && usable(i - 1) {
                    link(i - 1, 0.5 * (g.dx[i] + g.dx[i - 1]), -1.0);
                }
                if y + 1 < h && usable(i) && usable(i + w) {
                    link(i + w, 0.5 * (g.dy[i] + g.dy[i + w]), 1.0);
                }
                if y > 0 && usable(i) && usable(i - w) {
                    link(i - w, 0.5 * (g.dy[i] + g.dy[i - w]), -1.0);
                }
                p[i] = num / den;
            }
        }
    }
    anchor.with_values(p).expect("same size as the anchor")
}

fn smooth(a: &SmoothArgs) -> Result<Outcome> {
    let d = read_disparity(&a.disparity)?;
    let guidance = read_guidance(&a.guidance, a.smoothing.xy_scale)?;
    if !guidance.same_size(d.width(), d.height()) {
        return Err(contract(format!(
            "guidance is {}x{}, disparity is {}x{}",
            guidance.width(),
            guidance.height(),
            d.width(),
            d.height()
        )));
    }
    let params = a.smoothing.params();
    let raw = spatial_gradient(&d)?;
    let (refined, _) = gradsmooth_apply(&raw, &guidance, &params)?;
    let (w, h) = (d.width(), d.height());
    write_file(&a.out_dx, &write_pfm_values(w, h, &refined.dx, &refined.valid)?)?;
    write_file(&a.out_dy, &write_pfm_values(w, h, &refined.dy, &refined.valid)?)?;
    if let Some(path) = &a.preview {
        write_file(path, &write_pfm(&reintegrate(&refined, &d)))?;
    }
    let valid_samples = refined.valid.iter().filter(|v| **v).count();
    let mut report = json!({
        "command": "smooth",
        "width": w,
        "height": h,
        "valid_gradient_samples": valid_samples,
        "identity_filters": a.smoothing.identity,
        "normalized": a.smoothing.normalized,
    });
    let mut text = format!("{w}x{h}: filtered {valid_samples} gradient samples");
    if let Some(gt_path) = &a.gt {
        let gt = read_disparity(gt_path)?;
        same_size(&gt, w, h, "ground truth")?;
        let g_gt = spatial_gradient(&gt)?;
        let before = gradient_mae(&raw, &g_gt);
        let after = gradient_mae(&refined, &g_gt);
        report["gradient_mae_raw"] = json!(before);
        report["gradient_mae_refined"] = json!(after);
        if let (Some(b), Some(r)) = (before, after) {
            text.push_str(&format!("; gradient MAE {b:.4} -> {r:.4}"));
        }
    }
    let constants = Constants {
        xy_scale: a.smoothing.xy_scale,
        ..Default::default()
    };
    Ok(Outcome {
        report: with_constants(report, constants),
        text,
        ok: true,
    })
}

fn refine(a: &RefineArgs, seed: u64) -> Result<Outcome> {
    let init = read_disparity(&a.init)?;
    let gt = read_disparity(&a.gt)?;
    let (w, h) = (init.width(), init.height());
    same_size(&gt, w, h, "ground truth")?;
    let guidance = read_guidance(&a.guidance, a.smoothing.xy_scale)?;
    if !guidance.same_size(w, h) {
        return Err(contract("guidance and disparity differ in size"));
    }
    let weights = LossWeights {
        lambda1: a.lambda1,
        lambda2: a.lambda2,
    };
    let cfg = RefineConfig {
        step_size: a.step_size,
        iterations: a.iterations,
        optimize_filters: a.optimize_filters,
        gt_fraction: a.gt_fraction,
        rng_seed: seed,
        smoothing: a.smoothing.params(),
        occlusion: a.occlusion.config()?,
        ..Default::default()
    };
    cfg.validate()?;
    let supervision = if a.gt_fraction < 1.0 {
        sparsify_ground_truth(&gt, a.gt_fraction, seed)?
    } else {
        gt.clone()
    };
    let result = refine_disparity(&init, &supervision, &guidance, &weights, &cfg);
    if let (Err(Error::Diverged { history, .. }), Some(path)) = (&result, &a.loss_csv) {
        write_file(path, history_csv(history).as_bytes())?;
    }
    let out = result?;
    write_file(&a.out, &write_pfm(&out.disparity))?;
    if let Some(path) = &a.loss_csv {
        write_file(path, history_csv(&out.history).as_bytes())?;
    }
    let before = evaluate(&init, &gt, DEFAULT_BAD_THRESHOLD, None)?;
    let after = evaluate(&out.disparity, &gt, DEFAULT_BAD_THRESHOLD, None)?;
    let first = out.history[0];
    let last = *out.history.last().expect("history holds the initial loss");
    let report = json!({
        "command": "refine",
        "width": w,
        "height": h,
        "iterations": a.iterations,
        "supervised_pixels": supervision.valid_count(),
        "initial_loss": first,
        "final_loss": last,
        "halvings": out.halvings,
        "final_step": out.final_step,
        "mae_before": before.mae,
        "mae_after": after.mae,
        "bad_before": before.bad_pct,
        "bad_after": after.bad_pct,
    });
    let text = format!(
        "loss {:.6} -> {:.6} ({} halvings); MAE {:.4} -> {:.4}; bad-{:.1} {:.2}% -> {:.2}%",
        first.total,
        last.total,
        out.halvings,
        before.mae,
        after.mae,
        DEFAULT_BAD_THRESHOLD,
        before.bad_pct,
        after.bad_pct
    );
    let constants = Constants {
        alpha: a.occlusion.alpha,
        d0: a.occlusion.d0,
        lambda1: a.lambda1,
        lambda2: a.lambda2,
        xy_scale: a.smoothing.xy_scale,
        ..Default::default()
    };
    Ok(Outcome {
        report: with_constants(report, constants),
        text,
        ok: true,
    })
}

fn eval(a: &EvalArgs) -> Result<Outcome> {
    let pred = read_disparity(&a.pred)?;
    let gt = read_disparity(&a.gt)?;
    let r = evaluate(&pred, &gt, a.tau, a.max_disparity)?;
    let mut report = serde_json::to_value(r)?;
    report["command"] = json!("eval");
    report["max_disparity"] = json!(a.max_disparity);
    Ok(Outcome {
        report: with_constants(report, Constants::default()),
        text: r.to_string(),
        ok: true,
    })
}

fn gradcheck(a: &GradcheckArgs, seed: u64) -> Result<Outcome> {
    let cfg = GradcheckConfig {
        seed,
        instances: a.instances,
        step: a.step,
        tolerance: a.tolerance,
        corrupt: a.corrupt.map(Operator::from),
        ..Default::default()
    };
    let r = run_gradcheck(&cfg)?;
    let mut report = serde_json::to_value(&r)?;
    report["command"] = json!("gradcheck");
    Ok(Outcome {
        report: with_constants(report, Constants::default()),
        text: r.to_string(),
        ok: r.passed,
    })
}

fn synth(a: &SynthArgs, seed: Option<u64>) -> Result<Outcome> {
    let mut spec: SceneSpec = match (&a.spec, a.two_plane) {
        (_, Some(size)) => SceneSpec::two_plane(size),
        (Some(path), None) => serde_json::from_slice(&read_file(path)?)?,
        (None, None) => return Err(contract("synth needs a scene file or --two-plane")),
    };
    if let Some(s) = seed {
        spec.rng_seed = s;
    }
    let (image, gt) = synth_scene(&spec)?;
    write_file(&a.image, &write_rgb(&image)?)?;
    write_file(&a.gt, &write_pfm(&gt))?;
    let hard = hard_occlusion_oracle(&gt, 0.0);
    if let Some(path) = &a.occlusion {
        write_file(path, &write_mask(&hard)?)?;
    }
    let report = json!({
        "command": "synth",
        "width": spec.width,
        "height": spec.height,
        "planes": spec.planes.len(),
        "valid_pixels": gt.valid_count(),
        "occluded_pixels": hard.occluded_count(),
        "rng_seed": spec.rng_seed,
    });
    let text = format!(
        "{}x{} scene with {} planes; {} occluded pixels",
        spec.width,
        spec.height,
        spec.planes.len(),
        hard.occluded_count()
    );
    Ok(Outcome {
        report: with_constants(report, Constants::default()),
        text,
        ok: true,
    })
}
