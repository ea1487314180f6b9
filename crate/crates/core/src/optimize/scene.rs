//! Seeded piecewise-planar test scenes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::fields::{DisparityMap, FeatureMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// A flat-coloured rectangle whose disparity is `a * x + b * y + c` in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub rect: Rect,
    pub coeffs: [f64; 3],
    pub color: [f64; 3],
}

impl Plane {
    pub fn disparity_at(&self, x: usize, y: usize) -> f64 {
        let [a, b, c] = self.coeffs;
        a * x as f64 + b * y as f64 + c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Painted in order; later planes overwrite earlier ones.
    pub planes: Vec<Plane>,
    /// Standard deviation of Gaussian noise added to the rendered colours.
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

impl SceneSpec {
    /// 64x64 fixture: a gently slanted background and a raised, slanted
    /// foreground rectangle in a clearly different colour.
    pub fn two_plane(size: usize) -> Self {
        let fg = size / 4;
        Self {
            width: size,
            height: size,
            planes: vec![
                Plane {
                    rect: Rect {
                        x: 0,
                        y: 0,
                        width: size,
                        height: size,
                    },
                    coeffs: [0.05, 0.02, 6.0],
                    color: [0.2, 0.3, 0.8],
                },
                Plane {
                    rect: Rect {
                        x: fg + fg / 2,
                        y: fg,
                        width: 2 * fg,
                        height: 2 * fg,
                    },
                    coeffs: [-0.04, 0.03, 16.0],
                    color: [0.9, 0.6, 0.1],
                },
            ],
            noise_sigma: 0.0,
            rng_seed: 0,
        }
    }
}

/// Renders the colour image and ground-truth disparity of `spec`.
/// Pixels covered by no plane are black and invalid.
pub fn synth_scene(spec: &SceneSpec) -> Result<(FeatureMap, DisparityMap)> {
    let (w, h) = (spec.width, spec.height);
    if w == 0 || h == 0 {
        return Err(contract("scene must be at least 1x1"));
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(contract("noise_sigma must be finite and non-negative"));
    }
    let n = w * h;
    let mut disparity = vec![f64::INFINITY; n];
    let mut covered = vec![false; n];
    let mut rgb = vec![0.0; 3 * n];
    for (k, plane) in spec.planes.iter().enumerate() {
        let r = plane.rect;
        if r.width == 0 || r.height == 0 || r.x + r.width > w || r.y + r.height > h {
            return Err(contract(format!(
                "plane {k} rectangle {r:?} is empty or outside the {w}x{h} image"
            )));
        }
        if plane.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(contract(format!("plane {k} colour must lie in [0, 1]")));
        }
        for y in r.y..r.y + r.height {
            for x in r.x..r.x + r.width {
                let i = y * w + x;
                let v = plane.disparity_at(x, y);
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(contract(format!("plane {k} has disparity {v} at ({x}, {y})")));
                }
                if covered[i] && v <= disparity[i] {
                    return Err(contract(format!(
                        "plane {k} is painted over a nearer surface at ({x}, {y}): {v} <= {}",
                        disparity[i]
                    )));
                }
                disparity[i] = v;
                covered[i] = true;
                for c in 0..3 {
                    rgb[c * n + i] = plane.color[c];
                }
            }
        }
    }
    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
        let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| contract(e.to_string()))?;
        for v in rgb.iter_mut() {
            *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    Ok((
        FeatureMap::new(3, w, h, rgb)?,
        DisparityMap::new(w, h, disparity, covered)?,
    ))
}
