//! Bad-pixel rate and MAE, with invalid ground truth and an optional disparity cap.

use stereo_priors::fields::make_disparity_map;
use stereo_priors::metrics::evaluate;

fn main() -> stereo_priors::Result<()> {
    let gt = make_disparity_map(&[vec![10.0, 10.0, 10.0, 10.0, f64::INFINITY, 250.0]], None)?;
    let pred = make_disparity_map(&[vec![10.0, 11.0, 13.0, 15.0, 3.0, 240.0]], None)?;

    let all = evaluate(&pred, &gt, 2.0, None)?;
    let capped = evaluate(&pred, &gt, 2.0, Some(192.0))?;
    println!("all pixels:   {all}");
    println!("capped at 192: {capped}");
    println!("{}", capped.to_json());
    for tau in [0.5, 1.0, 2.0, 3.0, 5.0] {
        println!("bad-{tau}: {:.1}%", evaluate(&pred, &gt, tau, Some(192.0))?.bad_pct);
    }
    Ok(())
}
