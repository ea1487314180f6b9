//! Dense 2D fields: disparity maps, multi-channel feature maps, gradient
//! fields and occlusion maps, plus the finite-difference stencils and RGBXY
//! guidance built on top of them.
//!
//! Every field is stored row-major (`index = y * width + x`). Feature maps are
//! channel-major, so channel `c` occupies one contiguous `width * height` plane.

use crate::error::{contract, degenerate, Result};

/// Default scale applied to the normalized XY coordinates of RGBXY guidance.
pub const DEFAULT_XY_SCALE: f64 = 0.5;

/// Single-channel disparity field with a validity mask.
///
/// Valid pixels always hold finite, non-negative values. Invalid pixels keep
/// whatever raw value they were built from (often `+inf`) and must never be
/// read as data.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DisparityMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        let n = width * height;
        if values.len() != n || valid.len() != n {
            return Err(contract(format!(
                "disparity map {width}x{height} needs {n} values and mask entries, got {} and {}",
                values.len(),
                valid.len()
            )));
        }
        if let Some(i) = (0..n).find(|&i| valid[i] && !(values[i].is_finite() && values[i] >= 0.0)) {
            return Err(contract(format!(
                "pixel ({}, {}) is marked valid but holds {}",
                i % width.max(1),
                i / width.max(1),
                values[i]
            )));
        }
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    /// Builds a map whose mask is derived from the values: non-finite and
    /// negative entries are invalid.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let valid = values.iter().map(|v| v.is_finite() && *v >= 0.0).collect();
        Self::new(width, height, values, valid)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::from_values(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let values = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::from_values(width, height, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Largest valid disparity, or `None` when no pixel is valid.
    pub fn max_valid(&self) -> Option<f64> {
        self.values
            .iter()
            .zip(&self.valid)
            .filter(|(_, ok)| **ok)
            .map(|(v, _)| *v)
            .reduce(f64::max)
    }

    /// Same mask, new values. Fails if a valid pixel would become negative or non-finite.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.width, self.height, values, self.valid.clone())
    }

    /// Restricts the mask to `keep`; pixels already invalid stay invalid.
    pub fn masked(&self, keep: &[bool]) -> Result<Self> {
        if keep.len() != self.len() {
            return Err(contract("mask size does not match disparity map"));
        }
        let valid = self.valid.iter().zip(keep).map(|(a, b)| *a && *b).collect();
        Self::new(self.width, self.height, self.values.clone(), valid)
    }

    /// Left-right mirror image.
    pub fn mirrored(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            values: mirror_rows(&self.values, self.width),
            valid: mirror_rows(&self.valid, self.width),
        }
    }
}

pub(crate) fn mirror_rows<T: Clone>(data: &[T], width: usize) -> Vec<T> {
    data.chunks(width.max(1))
        .flat_map(|row| row.iter().rev().cloned())
        .collect()
}

/// Multi-channel real-valued feature map, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(contract("feature map needs at least one channel"));
        }
        if data.len() != channels * width * height {
            return Err(contract(format!(
                "feature map {channels}x{width}x{height} needs {} values, got {}",
                channels * width * height,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(contract("feature map entries must be finite"));
        }
        Ok(Self {
            channels,
            width,
            height,
            data,
        })
    }

    pub fn zeros(channels: usize, width: usize, height: usize) -> Result<Self> {
        Self::new(channels, width, height, vec![0.0; channels * width * height])
    }

    /// Wraps one plane as a single-channel map.
    pub fn from_plane(width: usize, height: usize, plane: Vec<f64>) -> Result<Self> {
        Self::new(1, width, height, plane)
    }

    pub fn from_fn(
        channels: usize,
        width: usize,
        height: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * width * height);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, x, y));
                }
            }
        }
        Self::new(channels, width, height, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn same_size(&self, width: usize, height: usize) -> bool {
        self.width == width && self.height == height
    }
}

/// Horizontal and vertical disparity derivatives sharing one validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
    pub valid: Vec<bool>,
}

impl GradientField {
    pub fn new(width: usize, height: usize, dx: Vec<f64>, dy: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        let n = width * height;
        if dx.len() != n || dy.len() != n || valid.len() != n {
            return Err(contract("gradient field components disagree in size"));
        }
        if (0..n).any(|i| valid[i] && !(dx[i].is_finite() && dy[i].is_finite())) {
            return Err(contract("gradient field has non-finite entries on valid pixels"));
        }
        Ok(Self {
            width,
            height,
            dx,
            dy,
            valid,
        })
    }

    pub fn len(&self) -> usize {
        self.dx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dx.is_empty()
    }
}

/// Per-pixel occlusion likelihood in `[0, 1]`.
///
/// `valid` is false where the occlusion state is undefined (the source
/// disparity was invalid there); such pixels hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
    pub hard: bool,
}

impl OcclusionMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>, valid: Vec<bool>, hard: bool) -> Result<Self> {
        let n = width * height;
        if values.len() != n || valid.len() != n {
            return Err(contract("occlusion map components disagree in size"));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(contract("occlusion values must lie in [0, 1]"));
        }
        if hard && values.iter().any(|v| *v != 0.0 && *v != 1.0) {
            return Err(contract("hard occlusion map holds a value outside {0, 1}"));
        }
        Ok(Self {
            width,
            height,
            values,
            valid,
            hard,
        })
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Binarizes a soft map: values strictly above `cut` become 1.
    pub fn thresholded(&self, cut: f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|v| if *v > cut { 1.0 } else { 0.0 }).collect(),
            valid: self.valid.clone(),
            hard: true,
        }
    }

    pub fn mirrored(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            values: mirror_rows(&self.values, self.width),
            valid: mirror_rows(&self.valid, self.width),
            hard: self.hard,
        }
    }

    pub fn occluded_count(&self) -> usize {
        self.values
            .iter()
            .zip(&self.valid)
            .filter(|(v, ok)| **ok && **v >= 0.5)
            .count()
    }
}

/// Builds a disparity map from rows. Entries equal to `invalid_marker`,
/// non-finite entries and negative entries are marked invalid.
pub fn make_disparity_map(rows: &[Vec<f64>], invalid_marker: Option<f64>) -> Result<DisparityMap> {
    let height = rows.len();
    let width = rows.first().map_or(0, Vec::len);
    if let Some(y) = rows.iter().position(|r| r.len() != width) {
        return Err(contract(format!(
            "ragged array: row {y} has {} entries, expected {width}",
            rows[y].len()
        )));
    }
    let values: Vec<f64> = rows.iter().flatten().copied().collect();
    let valid = values
        .iter()
        .map(|v| v.is_finite() && *v >= 0.0 && Some(*v) != invalid_marker)
        .collect();
    DisparityMap::new(width, height, values, valid)
}

// One axis of the stencil: (minus, plus, divisor) sample positions for coordinate `i` of `n`.
fn stencil(i: usize, n: usize) -> (usize, usize, f64) {
    if i == 0 {
        (0, 1, 1.0)
    } else if i == n - 1 {
        (n - 2, n - 1, 1.0)
    } else {
        (i - 1, i + 1, 2.0)
    }
}

/// Central differences in the interior, one-sided differences on the border.
///
/// A gradient sample is valid only when the centre pixel and every pixel
/// touched by either stencil are valid; invalid samples are stored as 0.
pub fn spatial_gradient(d: &DisparityMap) -> Result<GradientField> {
    let (w, h) = (d.width, d.height);
    if w < 2 || h < 2 {
        return Err(degenerate(format!(
            "spatial gradient needs at least 2x2 pixels, got {w}x{h}"
        )));
    }
    let n = w * h;
    let mut dx = vec![0.0; n];
    let mut dy = vec![0.0; n];
    let mut valid = vec![false; n];
    for y in 0..h {
        let (ym, yp, ydiv) = stencil(y, h);
        for x in 0..w {
            let (xm, xp, xdiv) = stencil(x, w);
            let i = y * w + x;
            let ok =
                d.valid[i] && d.valid[y * w + xm] && d.valid[y * w + xp] && d.valid[ym * w + x] && d.valid[yp * w + x];
            if ok {
                dx[i] = (d.values[y * w + xp] - d.values[y * w + xm]) / xdiv;
                dy[i] = (d.values[yp * w + x] - d.values[ym * w + x]) / ydiv;
                valid[i] = true;
            }
        }
    }
    GradientField::new(w, h, dx, dy, valid)
}

/// Adjoint of [`spatial_gradient`]: maps upstream derivatives w.r.t. (dx, dy)
/// to derivatives w.r.t. the disparity values. Upstream entries on invalid
/// gradient samples are ignored.
pub fn spatial_gradient_backward(upstream: &GradientField) -> Vec<f64> {
    let (w, h) = (upstream.width, upstream.height);
    let mut grad = vec![0.0; w * h];
    if w < 2 || h < 2 {
        return grad;
    }
    for y in 0..h {
        let (ym, yp, ydiv) = stencil(y, h);
        for x in 0..w {
            let i = y * w + x;
            if !upstream.valid[i] {
                continue;
            }
            let (xm, xp, xdiv) = stencil(x, w);
            let gx = upstream.dx[i] / xdiv;
            grad[y * w + xp] += gx;
            grad[y * w + xm] -= gx;
            let gy = upstream.dy[i] / ydiv;
            grad[yp * w + x] += gy;
            grad[ym * w + x] -= gy;
        }
    }
    grad
}

/// Five-channel guidance: the three colour channels followed by normalized
/// pixel coordinates scaled by `xy_scale`.
pub fn rgbxy_guidance(image: &FeatureMap, xy_scale: f64) -> Result<FeatureMap> {
    if image.channels != 3 {
        return Err(contract(format!(
            "RGBXY guidance needs a 3-channel image, got {} channels",
            image.channels
        )));
    }
    if !(xy_scale > 0.0 && xy_scale.is_finite()) {
        return Err(contract(format!("xy_scale must be positive, got {xy_scale}")));
    }
    let (w, h) = (image.width, image.height);
    let norm = |i: usize, n: usize| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
    let mut data = image.data.clone();
    data.reserve(2 * w * h);
    for _ in 0..h {
        for x in 0..w {
            data.push(norm(x, w) * xy_scale);
        }
    }
    for y in 0..h {
        for _ in 0..w {
            data.push(norm(y, h) * xy_scale);
        }
    }
    FeatureMap::new(5, w, h, data)
}
