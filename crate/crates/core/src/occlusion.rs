//! Occlusion reasoning from a single (left-reference) disparity map.
//!
//! A pixel is occluded in the other view when some pixel to its right has a
//! disparity larger than its own by at least their horizontal distance. The
//! soft map relaxes that test with a steep sigmoid and takes the row-wise max
//! over candidates; the hard oracle applies it exactly over the whole row.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, degenerate, Result};
use crate::fields::{DisparityMap, OcclusionMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionConfig {
    /// Sigmoid slope.
    pub alpha: f64,
    /// Offset subtracted from `Δd - Δx`, in pixels.
    pub d0: f64,
    /// Candidate window to the right of each pixel. `None` picks
    /// `ceil(max valid disparity) + 2` from the map being scanned.
    pub max_scan: Option<usize>,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self {
            alpha: 3.0,
            d0: 0.5,
            max_scan: None,
        }
    }
}

impl OcclusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(contract(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !self.d0.is_finite() {
            return Err(contract("d0 must be finite"));
        }
        if self.max_scan == Some(0) {
            return Err(contract("max_scan must be at least 1"));
        }
        Ok(())
    }

    /// Window length used for `d`.
    pub fn scan_window(&self, d: &DisparityMap) -> usize {
        self.max_scan
            .unwrap_or_else(|| auto_window(d.max_valid().unwrap_or(0.0)))
    }

    /// Copy with the window pinned to what `maps` jointly need, so several
    /// maps can be scanned with one window.
    pub fn pinned_for(&self, maps: &[&DisparityMap]) -> Self {
        let window = self.max_scan.unwrap_or_else(|| {
            let d_max = maps.iter().filter_map(|m| m.max_valid()).fold(0.0, f64::max);
            auto_window(d_max)
        });
        Self {
            max_scan: Some(window),
            ..*self
        }
    }

    /// Occlusion value of a pixel with no valid candidate: what a flat
    /// continuation one pixel to the right would give.
    pub fn floor_value(&self) -> f64 {
        sigmoid(-self.alpha * (1.0 + self.d0))
    }
}

fn auto_window(d_max: f64) -> usize {
    (d_max.ceil().max(0.0) as usize) + 2
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Winning candidate of every pixel from a [`soft_occlusion`] call.
#[derive(Debug, Clone, PartialEq)]
pub struct ArgmaxCache {
    width: usize,
    height: usize,
    alpha: f64,
    /// Column of the winning candidate, `None` for invalid pixels and pixels
    /// without a valid candidate.
    argmax: Vec<Option<usize>>,
    values: Vec<f64>,
}

impl ArgmaxCache {
    pub fn argmax(&self) -> &[Option<usize>] {
        &self.argmax
    }
}

/// Soft occlusion map: per pixel, the max over `x' ∈ (x, x + max_scan]` of
/// `sigmoid(alpha * (Δd - Δx - d0))`. Ties go to the nearest candidate.
pub fn soft_occlusion(d: &DisparityMap, cfg: &OcclusionConfig) -> Result<(OcclusionMap, ArgmaxCache)> {
    cfg.validate()?;
    if d.valid_count() == 0 {
        return Err(degenerate("soft occlusion needs at least one valid disparity"));
    }
    let (w, h) = (d.width(), d.height());
    let window = cfg.scan_window(d);
    let floor = cfg.floor_value();
    let rows: Vec<(Vec<f64>, Vec<Option<usize>>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let vals = &d.values()[y * w..(y + 1) * w];
            let ok = &d.valid()[y * w..(y + 1) * w];
            let mut out = vec![0.0; w];
            let mut arg = vec![None; w];
            for x in 0..w {
                if !ok[x] {
                    continue;
                }
                let mut best: Option<(f64, usize)> = None;
                for xp in (x + 1)..w.min(x + window + 1) {
                    if !ok[xp] {
                        continue;
                    }
                    let z = cfg.alpha * (vals[xp] - vals[x] - (xp - x) as f64 - cfg.d0);
                    if best.is_none_or(|(bz, _)| z > bz) {
                        best = Some((z, xp));
                    }
                }
                match best {
                    Some((z, xp)) => {
                        out[x] = sigmoid(z);
                        arg[x] = Some(xp);
                    }
                    None => out[x] = floor,
                }
            }
            (out, arg)
        })
        .collect();
    let mut values = Vec::with_capacity(w * h);
    let mut argmax = Vec::with_capacity(w * h);
    for (v, a) in rows {
        values.extend(v);
        argmax.extend(a);
    }
    let map = OcclusionMap::new(w, h, values.clone(), d.valid().to_vec(), false)?;
    Ok((
        map,
        ArgmaxCache {
            width: w,
            height: h,
            alpha: cfg.alpha,
            argmax,
            values,
        },
    ))
}

/// Subgradient of [`soft_occlusion`] through the cached argmax.
pub fn soft_occlusion_backward(upstream: &[f64], d: &DisparityMap, cache: &ArgmaxCache) -> Result<Vec<f64>> {
    let (w, h) = (d.width(), d.height());
    if cache.width != w || cache.height != h || upstream.len() != w * h {
        return Err(contract("upstream, disparity map and argmax cache disagree in shape"));
    }
    let mut grad = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let Some(xp) = cache.argmax[i] else { continue };
            let o = cache.values[i];
            let g = upstream[i] * cache.alpha * o * (1.0 - o);
            grad[y * w + xp] += g;
            grad[i] -= g;
        }
    }
    Ok(grad)
}

/// Exact occlusion test over the full row: pixel `x` is occluded iff some
/// valid `x' > x` satisfies `(D(x') - D(x)) - (x' - x) >= threshold`.
pub fn hard_occlusion_oracle(d: &DisparityMap, threshold: f64) -> OcclusionMap {
    let (w, h) = (d.width(), d.height());
    let mut values = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !d.valid()[i] {
                continue;
            }
            let hit = ((x + 1)..w).any(|xp| {
                let j = y * w + xp;
                d.valid()[j] && (d.values()[j] - d.values()[i]) - (xp - x) as f64 >= threshold
            });
            if hit {
                values[i] = 1.0;
            }
        }
    }
    OcclusionMap {
        width: w,
        height: h,
        values,
        valid: d.valid().to_vec(),
        hard: true,
    }
}

/// Soft occlusion of the ground truth, the supervision target for the
/// occlusion loss. A perfect prediction scanned with the same config
/// reproduces it exactly.
pub fn occlusion_target(d_gt: &DisparityMap, cfg: &OcclusionConfig) -> Result<OcclusionMap> {
    soft_occlusion(d_gt, cfg).map(|(map, _)| map)
}

/// Soft occlusion for a right-reference map: candidates lie to the left and
/// occlude when `D(x') - D(x) - (x - x') - d0 > 0`.
pub fn soft_occlusion_right(d: &DisparityMap, cfg: &OcclusionConfig) -> Result<OcclusionMap> {
    cfg.validate()?;
    if d.valid_count() == 0 {
        return Err(degenerate("soft occlusion needs at least one valid disparity"));
    }
    let (w, h) = (d.width(), d.height());
    let window = cfg.scan_window(d);
    let mut values = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !d.valid()[i] {
                continue;
            }
            let lo = x.saturating_sub(window);
            let best = (lo..x)
                .rev()
                .filter(|xp| d.valid()[y * w + xp])
                .map(|xp| cfg.alpha * (d.values()[y * w + xp] - d.values()[i] - (x - xp) as f64 - cfg.d0))
                .reduce(f64::max);
            values[i] = best.map_or(cfg.floor_value(), sigmoid);
        }
    }
    OcclusionMap::new(w, h, values, d.valid().to_vec(), false)
}
