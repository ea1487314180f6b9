//! Refining a noisy disparity map against sparse ground truth, with and
//! without the priors.

use stereo_priors::fields::rgbxy_guidance;
use stereo_priors::loss::LossWeights;
use stereo_priors::metrics::mae;
use stereo_priors::optimize::{
    add_disparity_noise, refine_disparity, sparsify_ground_truth, synth_scene, RefineConfig, SceneSpec,
};

fn main() -> stereo_priors::Result<()> {
    let (image, gt) = synth_scene(&SceneSpec::two_plane(48))?;
    let guidance = rgbxy_guidance(&image, 0.5)?;
    let init = add_disparity_noise(&gt, 1.0, 11)?;
    println!("initial MAE {:.4}", mae(&init, &gt)?);

    for fraction in [1.0, 0.1] {
        let supervision = sparsify_ground_truth(&gt, fraction, 7)?;
        let cfg = RefineConfig {
            iterations: 200,
            gt_fraction: fraction,
            ..Default::default()
        };
        for (l1, l2) in [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)] {
            let w = LossWeights {
                lambda1: l1,
                lambda2: l2,
            };
            let out = refine_disparity(&init, &supervision, &guidance, &w, &cfg)?;
            let last = out.history.last().unwrap();
            println!(
                "gt {:>3.0}%  lambda1 {l1} lambda2 {l2}: MAE {:.4}, loss {:.5} -> {:.5}, {} halvings",
                fraction * 100.0,
                mae(&out.disparity, &gt)?,
                out.history[0].total,
                last.total,
                out.halvings
            );
        }
    }
    Ok(())
}
