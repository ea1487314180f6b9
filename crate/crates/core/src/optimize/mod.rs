//! Field-level refinement: gradient descent on the composite loss with the
//! disparity map (and optionally the GradSmooth filters) as free variables.

mod scene;

pub use scene::{synth_scene, Plane, Rect, SceneSpec};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{contract, Error, Result};
use crate::fields::{DisparityMap, FeatureMap};
use crate::loss::{total_loss, LossBreakdown, LossRecord, LossWeights};
use crate::occlusion::OcclusionConfig;
use crate::pac::GradSmoothParams;

/// Step halvings allowed over a whole run before it is declared divergent.
pub const MAX_HALVINGS: u32 = 10;

#[derive(Debug, Clone)]
pub struct RefineConfig {
    /// Per-pixel step: the disparity update is `step_size * pixel_count * dL/dD`,
    /// which makes the step independent of image size under mean-reduced losses.
    pub step_size: f64,
    pub iterations: usize,
    pub optimize_filters: bool,
    /// Fraction of ground-truth pixels kept by [`sparsify_ground_truth`].
    pub gt_fraction: f64,
    pub rng_seed: u64,
    /// Leading iterations run with both prior weights forced to 0.
    pub warm_iterations: usize,
    pub smoothing: GradSmoothParams,
    pub occlusion: OcclusionConfig,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            step_size: 0.05,
            iterations: 500,
            optimize_filters: false,
            gt_fraction: 1.0,
            rng_seed: 0,
            warm_iterations: 0,
            smoothing: GradSmoothParams::default(),
            occlusion: OcclusionConfig::default(),
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(contract(format!("step_size must be positive, got {}", self.step_size)));
        }
        if self.iterations == 0 {
            return Err(contract("iterations must be at least 1"));
        }
        if !(self.gt_fraction > 0.0 && self.gt_fraction <= 1.0) {
            return Err(contract(format!(
                "gt_fraction must lie in (0, 1], got {}",
                self.gt_fraction
            )));
        }
        self.occlusion.validate()
    }
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub disparity: DisparityMap,
    pub smoothing: GradSmoothParams,
    /// Loss at the start (entry 0) and after every accepted step.
    pub history: Vec<LossRecord>,
    pub halvings: u32,
    pub final_step: f64,
}

/// Keeps a uniformly random `fraction` of the valid pixels (rounded to the
/// nearest count, at least one).
pub fn sparsify_ground_truth(gt: &DisparityMap, fraction: f64, seed: u64) -> Result<DisparityMap> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(contract(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    let valid: Vec<usize> = (0..gt.len()).filter(|i| gt.valid()[*i]).collect();
    let keep = ((valid.len() as f64 * fraction).round() as usize).clamp(1.min(valid.len()), valid.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = vec![false; gt.len()];
    for k in sample(&mut rng, valid.len(), keep).into_iter() {
        mask[valid[k]] = true;
    }
    gt.masked(&mask)
}

/// Adds seeded Gaussian noise to every valid pixel, clamping at 0.
pub fn add_disparity_noise(d: &DisparityMap, sigma: f64, seed: u64) -> Result<DisparityMap> {
    let normal = Normal::new(0.0, sigma).map_err(|e| contract(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = d
        .values()
        .iter()
        .zip(d.valid())
        .map(|(v, ok)| {
            let noise = normal.sample(&mut rng);
            if *ok {
                (v + noise).max(0.0)
            } else {
                *v
            }
        })
        .collect();
    d.with_values(values)
}

/// Descends the composite loss from `d_init` against sparse ground truth.
///
/// A step that raises the total loss is rejected and the step size halved;
/// the returned history is therefore non-increasing. Iterates are clamped to
/// non-negative disparities.
pub fn refine_disparity(
    d_init: &DisparityMap,
    d_gt_sparse: &DisparityMap,
    guidance: &FeatureMap,
    weights: &LossWeights,
    cfg: &RefineConfig,
) -> Result<RefineOutcome> {
    cfg.validate()?;
    weights.validate()?;
    let n = d_init.len();
    if d_gt_sparse.width() != d_init.width() || d_gt_sparse.height() != d_init.height() {
        return Err(contract("initial and ground-truth maps differ in size"));
    }
    let allowed = (cfg.gt_fraction * n as f64).ceil() as usize;
    if d_gt_sparse.valid_count() > allowed {
        return Err(contract(format!(
            "ground truth has {} valid pixels, more than gt_fraction {} allows",
            d_gt_sparse.valid_count(),
            cfg.gt_fraction
        )));
    }
    // Pinned once so the occlusion window does not drift with the iterate.
    let occlusion = cfg.occlusion.pinned_for(&[d_init, d_gt_sparse]);
    let warm = LossWeights {
        lambda1: 0.0,
        lambda2: 0.0,
    };
    let weights_at = |iter: usize| if iter < cfg.warm_iterations { warm } else { *weights };
    let eval = |d: &DisparityMap, p: &GradSmoothParams, w: &LossWeights| -> Result<LossBreakdown> {
        total_loss(d, d_gt_sparse, guidance, p, &occlusion, w)
    };

    let mut d = d_init.clone();
    let mut params = cfg.smoothing.clone();
    let mut step = cfg.step_size;
    let mut halvings = 0;
    let mut current = eval(&d, &params, &weights_at(0))?;
    let mut history = vec![current.record()];
    let pixel_scale = n as f64;

    for iter in 0..cfg.iterations {
        let w = weights_at(iter);
        if iter == cfg.warm_iterations && iter > 0 {
            // weights changed: re-evaluate so acceptance compares like with like
            current = eval(&d, &params, &w)?;
        }
        loop {
            let values: Vec<f64> = d
                .values()
                .iter()
                .zip(d.valid())
                .zip(&current.grad_wrt_disparity)
                .map(|((v, ok), g)| if *ok { (v - step * pixel_scale * g).max(0.0) } else { *v })
                .collect();
            let candidate = d.with_values(values)?;
            let mut cand_params = params.clone();
            if cfg.optimize_filters {
                cand_params
                    .layer1
                    .filters
                    .add_scaled(&current.grad_wrt_filters[0], -step)?;
                cand_params
                    .layer2
                    .filters
                    .add_scaled(&current.grad_wrt_filters[1], -step)?;
            }
            let next = eval(&candidate, &cand_params, &w)?;
            let tolerance = 1e-12 * current.total.abs().max(1.0);
            if next.total.is_finite() && next.total <= current.total + tolerance {
                d = candidate;
                params = cand_params;
                current = next;
                break;
            }
            halvings += 1;
            step *= 0.5;
            if halvings > MAX_HALVINGS {
                return Err(Error::Diverged {
                    halvings,
                    step_size: step,
                    history,
                });
            }
        }
        history.push(current.record());
    }

    Ok(RefineOutcome {
        disparity: d,
        smoothing: params,
        history,
        halvings,
        final_step: step,
    })
}

/// `iteration,l_d,l_g,l_o,total` with one row per history entry.
pub fn history_csv(history: &[LossRecord]) -> String {
    let mut out = String::from("iteration,l_d,l_g,l_o,total\n");
    for (i, r) in history.iter().enumerate() {
        out.push_str(&format!("{i},{},{},{},{}\n", r.l_d, r.l_g, r.l_o, r.total));
    }
    out
}
