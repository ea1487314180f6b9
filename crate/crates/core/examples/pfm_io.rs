//! Writing and reading disparity maps and occlusion masks.

use std::fs;

use stereo_priors::imageio::{read_pfm, read_pfm_header, write_mask, write_pfm};
use stereo_priors::occlusion::{soft_occlusion, OcclusionConfig};
use stereo_priors::optimize::{synth_scene, SceneSpec};

fn main() -> stereo_priors::Result<()> {
    let dir = std::env::temp_dir().join("stereo-priors-pfm-example");
    fs::create_dir_all(&dir)?;
    let (_, gt) = synth_scene(&SceneSpec::two_plane(32))?;

    let path = dir.join("gt.pfm");
    fs::write(&path, write_pfm(&gt))?;
    let bytes = fs::read(&path)?;
    let (header, offset) = read_pfm_header(&bytes)?;
    println!("{}: {header:?}, payload at byte {offset}", path.display());

    let back = read_pfm(&bytes)?;
    let identical = back
        .values()
        .iter()
        .zip(gt.values())
        .all(|(a, b)| *a == *b as f32 as f64);
    println!(
        "read back {}x{}, values identical after f32 rounding: {identical}",
        back.width(),
        back.height()
    );

    let (soft, _) = soft_occlusion(&gt, &OcclusionConfig::default())?;
    let mask = dir.join("occlusion.png");
    fs::write(&mask, write_mask(&soft)?)?;
    println!("occlusion mask written to {}", mask.display());
    Ok(())
}
