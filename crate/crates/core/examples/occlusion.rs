//! Soft and exact occlusion maps of a single disparity row.

use stereo_priors::fields::make_disparity_map;
use stereo_priors::occlusion::{hard_occlusion_oracle, soft_occlusion, OcclusionConfig};

fn main() -> stereo_priors::Result<()> {
    // a background at disparity 2 with a foreground at 8 starting at x = 12
    let row: Vec<f64> = (0..20).map(|x| if x < 12 { 2.0 } else { 8.0 }).collect();
    let d = make_disparity_map(std::slice::from_ref(&row), None)?;
    let hard = hard_occlusion_oracle(&d, 0.0);

    print!("{:<8}", "x");
    (0..20).for_each(|x| print!("{x:>6}"));
    println!();
    print!("{:<8}", "D");
    row.iter().for_each(|v| print!("{v:>6.0}"));
    println!();
    for alpha in [3.0, 10.0, 50.0] {
        let cfg = OcclusionConfig {
            alpha,
            ..Default::default()
        };
        let (soft, _) = soft_occlusion(&d, &cfg)?;
        print!("{:<8}", format!("a={alpha}"));
        soft.values.iter().for_each(|v| print!("{v:>6.2}"));
        println!();
    }
    print!("{:<8}", "exact");
    hard.values.iter().for_each(|v| print!("{v:>6.0}"));
    println!();
    println!("exactly occluded: {} pixels for a jump of 6", hard.occluded_count());
    Ok(())
}
