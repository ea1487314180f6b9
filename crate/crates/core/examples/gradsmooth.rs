//! Filtering noisy disparity gradients with GradSmooth on a synthetic scene.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use stereo_priors::fields::{rgbxy_guidance, spatial_gradient, GradientField};
use stereo_priors::optimize::{synth_scene, SceneSpec};
use stereo_priors::pac::{gradsmooth_apply, GradSmoothParams};

fn deviation(a: &GradientField, b: &GradientField) -> f64 {
    let n = a.valid.iter().filter(|v| **v).count() as f64;
    (0..a.len())
        .filter(|i| a.valid[*i])
        .map(|i| (a.dx[i] - b.dx[i]).abs() + (a.dy[i] - b.dy[i]).abs())
        .sum::<f64>()
        / (2.0 * n)
}

fn main() -> stereo_priors::Result<()> {
    let (image, gt) = synth_scene(&SceneSpec::two_plane(64))?;
    let guidance = rgbxy_guidance(&image, 0.5)?;
    let clean = spatial_gradient(&gt)?;

    let normal = Normal::new(0.0, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut noisy = clean.clone();
    for i in 0..noisy.len() {
        noisy.dx[i] += normal.sample(&mut rng);
        noisy.dy[i] += normal.sample(&mut rng);
    }

    for (name, params) in [
        ("box filters", GradSmoothParams::default()),
        ("box filters, normalized", GradSmoothParams::default().normalized(true)),
        ("identity", GradSmoothParams::identity()),
    ] {
        let (refined, _) = gradsmooth_apply(&noisy, &guidance, &params)?;
        println!(
            "{name:<24} mean abs gradient error {:.4} -> {:.4}",
            deviation(&noisy, &clean),
            deviation(&refined, &clean)
        );
    }
    Ok(())
}
