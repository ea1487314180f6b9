//! Pixel-adaptive vs. standard convolution across a colour edge.
//!
//! A box filter smears a step signal across the edge; the same filter with
//! affinities from a guidance image that changes colour at the edge keeps
//! most of the step. The normalized variant also restores the weight lost to
//! the suppressed taps.

use stereo_priors::fields::FeatureMap;
use stereo_priors::pac::{conv_forward, pac_forward, pac_forward_layer, FilterBank, PacLayer, PacLayerConfig};

fn main() -> stereo_priors::Result<()> {
    let (w, h) = (12, 3);
    let signal = FeatureMap::from_fn(1, w, h, |_, x, _| if x < 6 { 0.0 } else { 1.0 })?;
    // two flat colour regions, far apart in feature space
    let guidance = FeatureMap::from_fn(3, w, h, |c, x, _| if x < 6 { 0.0 } else { 2.0 + c as f64 })?;
    let box3 = FilterBank::uniform(3)?;

    let plain = conv_forward(&signal, &box3, 1)?;
    let (adaptive, cache) = pac_forward(&signal, &guidance, &box3, 1)?;
    let config = PacLayerConfig {
        normalized: true,
        ..PacLayerConfig::single_channel(3, 1)
    };
    let (normalized, _) = pac_forward_layer(&signal, &guidance, &PacLayer::new(config, box3.clone())?)?;

    println!("x    input   conv    pac     pac (normalized)");
    for x in 0..w {
        println!(
            "{x:<4} {:.3}   {:.3}   {:.3}   {:.3}",
            signal.get(0, x, 1),
            plain.get(0, x, 1),
            adaptive.get(0, x, 1),
            normalized.get(0, x, 1)
        );
    }
    let cross = cache.affinities()[(w + 5) * 9 + 3];
    println!("affinity across the edge: {cross:.2e}");
    Ok(())
}
