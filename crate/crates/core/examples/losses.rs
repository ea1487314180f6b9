//! The composite loss and its parts for a noisy prediction.

use stereo_priors::fields::rgbxy_guidance;
use stereo_priors::loss::{total_loss, LossWeights};
use stereo_priors::occlusion::OcclusionConfig;
use stereo_priors::optimize::{add_disparity_noise, synth_scene, SceneSpec};
use stereo_priors::pac::GradSmoothParams;

fn main() -> stereo_priors::Result<()> {
    let (image, gt) = synth_scene(&SceneSpec::two_plane(32))?;
    let guidance = rgbxy_guidance(&image, 0.5)?;
    let occ = OcclusionConfig::default();

    for sigma in [0.0f64, 0.5, 2.0] {
        let pred = add_disparity_noise(&gt, sigma, 3)?;
        let b = total_loss(
            &pred,
            &gt,
            &guidance,
            &GradSmoothParams::identity(),
            &occ,
            &LossWeights::default(),
        )?;
        let grad_norm = b.grad_wrt_disparity.iter().map(|g| g * g).sum::<f64>().sqrt();
        println!("noise {sigma:<4} {}  |dL/dD| = {grad_norm:.3e}", b.to_json());
    }

    // with box filters even the ground truth pays a gradient-term cost near edges and borders
    let b = total_loss(
        &gt,
        &gt,
        &guidance,
        &GradSmoothParams::default(),
        &occ,
        &LossWeights::default(),
    )?;
    println!("ground truth, box filters: {}", b.to_json());
    Ok(())
}
