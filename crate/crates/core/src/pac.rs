//! Standard and pixel-adaptive convolution with analytic backward passes, and
//! the two-layer GradSmooth stack that filters disparity gradients.
//!
//! Taps are indexed by the offset `p_i - p_j` between the output pixel and
//! the contributing neighbour, scaled by the dilation: tap `(ky, kx)` of a
//! kernel with radius `r` reads the neighbour at
//! `(x - dilation * (kx - r), y - dilation * (ky - r))`. Neighbours outside the
//! image contribute nothing (zero padding, affinity 0), so outputs keep the
//! input's spatial size.

use rayon::prelude::*;

use crate::error::{contract, Error, Result};
use crate::fields::{FeatureMap, GradientField};

const BANK_MAGIC: &[u8; 5] = b"GPFB1";

/// Default dilations of the two GradSmooth layers.
pub const GRADSMOOTH_DILATIONS: [usize; 2] = [4, 8];

/// Convolution weights `W[c_out][c_in][ky][kx]` plus one bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    out_channels: usize,
    in_channels: usize,
    size: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl FilterBank {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        size: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if size.is_multiple_of(2) {
            return Err(contract(format!("kernel size must be odd, got {size}")));
        }
        if out_channels == 0 || in_channels == 0 {
            return Err(contract("filter bank needs at least one input and output channel"));
        }
        if weights.len() != out_channels * in_channels * size * size || bias.len() != out_channels {
            return Err(contract(format!(
                "filter bank {out_channels}x{in_channels}x{size}x{size} got {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(contract("filter bank entries must be finite"));
        }
        Ok(Self {
            out_channels,
            in_channels,
            size,
            weights,
            bias,
        })
    }

    /// Single-channel box filter, every tap `1 / size²`, zero bias.
    pub fn uniform(size: usize) -> Result<Self> {
        let taps = size * size;
        Self::new(1, 1, size, vec![1.0 / taps as f64; taps], vec![0.0])
    }

    /// Single-channel delta at the centre tap, zero bias.
    pub fn identity(size: usize) -> Result<Self> {
        let mut weights = vec![0.0; size * size];
        weights[size * size / 2] = 1.0;
        Self::new(1, 1, size, weights, vec![0.0])
    }

    pub fn zeros_like(other: &FilterBank) -> Self {
        Self {
            weights: vec![0.0; other.weights.len()],
            bias: vec![0.0; other.bias.len()],
            ..other.clone()
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    #[inline]
    pub fn weight(&self, co: usize, ci: usize, ky: usize, kx: usize) -> f64 {
        self.weights[((co * self.in_channels + ci) * self.size + ky) * self.size + kx]
    }

    /// `self += scale * other`, for gradient steps.
    pub fn add_scaled(&mut self, other: &FilterBank, scale: f64) -> Result<()> {
        if !self.same_shape(other) {
            return Err(contract("filter banks differ in shape"));
        }
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += scale * b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &FilterBank) -> bool {
        self.out_channels == other.out_channels && self.in_channels == other.in_channels && self.size == other.size
    }

    /// `GPFB1` magic, then `c_out`, `c_in`, `size` as little-endian `u32`,
    /// then the weights (row-major) and biases as little-endian `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(17 + 8 * (self.weights.len() + self.bias.len()));
        out.extend_from_slice(BANK_MAGIC);
        for dim in [self.out_channels, self.in_channels, self.size] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for v in self.weights.iter().chain(&self.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 17 || &bytes[..5] != BANK_MAGIC {
            return Err(Error::Parse {
                offset: 0,
                message: "missing GPFB1 magic".into(),
            });
        }
        let dim = |k: usize| u32::from_le_bytes(bytes[5 + 4 * k..9 + 4 * k].try_into().unwrap()) as usize;
        let (co, ci, s) = (dim(0), dim(1), dim(2));
        let n_weights = co
            .checked_mul(ci)
            .and_then(|v| v.checked_mul(s))
            .and_then(|v| v.checked_mul(s))
            .ok_or_else(|| contract("filter bank dimensions overflow"))?;
        let expected = 17 + 8 * (n_weights + co);
        if bytes.len() != expected {
            return Err(Error::Parse {
                offset: bytes.len().min(expected),
                message: format!("filter bank payload should be {expected} bytes, got {}", bytes.len()),
            });
        }
        let floats: Vec<f64> = bytes[17..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (weights, bias) = floats.split_at(n_weights);
        Self::new(co, ci, s, weights.to_vec(), bias.to_vec())
    }
}

/// Geometry of one PAC layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacLayerConfig {
    pub kernel_size: usize,
    pub dilation: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Rescale affinities so they average to 1 over the in-image taps.
    /// Off by default: affinities enter the sum unnormalized.
    pub normalized: bool,
}

impl PacLayerConfig {
    pub fn single_channel(kernel_size: usize, dilation: usize) -> Self {
        Self {
            kernel_size,
            dilation,
            in_channels: 1,
            out_channels: 1,
            normalized: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size.is_multiple_of(2) {
            return Err(contract(format!("kernel size must be odd, got {}", self.kernel_size)));
        }
        if self.dilation == 0 {
            return Err(contract("dilation must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PacLayer {
    pub config: PacLayerConfig,
    pub filters: FilterBank,
}

impl PacLayer {
    pub fn new(config: PacLayerConfig, filters: FilterBank) -> Result<Self> {
        config.validate()?;
        if filters.size != config.kernel_size
            || filters.in_channels != config.in_channels
            || filters.out_channels != config.out_channels
        {
            return Err(contract("filter bank shape does not match layer configuration"));
        }
        Ok(Self { config, filters })
    }
}

/// Parameters of the GradSmooth module: two PAC layers applied in sequence,
/// no nonlinearity in between.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSmoothParams {
    pub layer1: PacLayer,
    pub layer2: PacLayer,
    pub learnable: bool,
}

impl Default for GradSmoothParams {
    /// 3x3 box filters at dilations 4 and 8.
    fn default() -> Self {
        Self::with_filters(FilterBank::uniform(3).unwrap(), FilterBank::uniform(3).unwrap()).unwrap()
    }
}

impl GradSmoothParams {
    pub fn with_filters(first: FilterBank, second: FilterBank) -> Result<Self> {
        let [d1, d2] = GRADSMOOTH_DILATIONS;
        let layer = |bank: FilterBank, dilation| {
            let config = PacLayerConfig {
                kernel_size: bank.size,
                dilation,
                in_channels: bank.in_channels,
                out_channels: bank.out_channels,
                normalized: false,
            };
            PacLayer::new(config, bank)
        };
        Self::new(layer(first, d1)?, layer(second, d2)?, false)
    }

    pub fn new(layer1: PacLayer, layer2: PacLayer, learnable: bool) -> Result<Self> {
        if layer1.config.in_channels != 1 || layer2.config.out_channels != 1 {
            return Err(contract("GradSmooth maps one gradient channel to one gradient channel"));
        }
        if layer1.config.out_channels != layer2.config.in_channels {
            return Err(contract("layer1 output channels must equal layer2 input channels"));
        }
        Ok(Self {
            layer1,
            layer2,
            learnable,
        })
    }

    /// Delta kernels: GradSmooth passes gradients through untouched.
    pub fn identity() -> Self {
        Self::with_filters(FilterBank::identity(3).unwrap(), FilterBank::identity(3).unwrap()).unwrap()
    }

    pub fn normalized(mut self, on: bool) -> Self {
        self.layer1.config.normalized = on;
        self.layer2.config.normalized = on;
        self
    }
}

/// `exp(-|fi - fj|² / 2)`.
pub fn gaussian_affinity(fi: &[f64], fj: &[f64]) -> Result<f64> {
    if fi.len() != fj.len() {
        return Err(contract(format!(
            "feature vectors differ in length ({} vs {})",
            fi.len(),
            fj.len()
        )));
    }
    let d2: f64 = fi.iter().zip(fj).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((-0.5 * d2).exp())
}

#[inline]
fn neighbour(x: usize, y: usize, kx: usize, ky: usize, r: usize, dil: usize, w: usize, h: usize) -> Option<usize> {
    let jx = x as isize - (dil * kx) as isize + (dil * r) as isize;
    let jy = y as isize - (dil * ky) as isize + (dil * r) as isize;
    if jx < 0 || jy < 0 || jx >= w as isize || jy >= h as isize {
        None
    } else {
        Some(jy as usize * w + jx as usize)
    }
}

fn check_conv_inputs(v: &FeatureMap, filt: &FilterBank, dilation: usize) -> Result<()> {
    if v.channels() != filt.in_channels {
        return Err(contract(format!(
            "input has {} channels, filter expects {}",
            v.channels(),
            filt.in_channels
        )));
    }
    if dilation == 0 {
        return Err(contract("dilation must be at least 1"));
    }
    Ok(())
}

/// Standard dilated convolution with zero padding; output keeps the input size.
pub fn conv_forward(v: &FeatureMap, filt: &FilterBank, dilation: usize) -> Result<FeatureMap> {
    check_conv_inputs(v, filt, dilation)?;
    let (w, h) = (v.width(), v.height());
    let (s, r) = (filt.size, filt.size / 2);
    let n = w * h;
    let mut out = vec![0.0; filt.out_channels * n];
    for co in 0..filt.out_channels {
        for y in 0..h {
            for x in 0..w {
                let mut acc = filt.bias[co];
                for ky in 0..s {
                    for kx in 0..s {
                        if let Some(j) = neighbour(x, y, kx, ky, r, dilation, w, h) {
                            for ci in 0..filt.in_channels {
                                acc += filt.weight(co, ci, ky, kx) * v.plane(ci)[j];
                            }
                        }
                    }
                }
                out[co * n + y * w + x] = acc;
            }
        }
    }
    FeatureMap::new(filt.out_channels, w, h, out)
}

/// Everything [`pac_backward`] needs from the paired forward call.
#[derive(Debug, Clone)]
pub struct PacCache {
    input: FeatureMap,
    guidance: FeatureMap,
    filters: FilterBank,
    dilation: usize,
    normalized: bool,
    /// `K(f_i, f_j)` per output pixel and tap, 0 for out-of-image taps.
    affinity: Vec<f64>,
    /// Mean affinity over the full stencil, per pixel; only used when normalized.
    mean_affinity: Vec<f64>,
}

impl PacCache {
    /// Affinities laid out as `[pixel][ky][kx]`.
    pub fn affinities(&self) -> &[f64] {
        &self.affinity
    }

    pub fn filters(&self) -> &FilterBank {
        &self.filters
    }

    fn effective_affinity(&self, i: usize, t: usize) -> f64 {
        let k = self.affinity[i * self.filters.size * self.filters.size + t];
        if self.normalized {
            k / self.mean_affinity[i]
        } else {
            k
        }
    }
}

#[derive(Debug, Clone)]
pub struct PacGrads {
    pub input: FeatureMap,
    pub guidance: FeatureMap,
    pub filters: FilterBank,
}

/// Pixel-adaptive convolution with a Gaussian affinity kernel on the guidance features.
pub fn pac_forward(
    v: &FeatureMap,
    f: &FeatureMap,
    filt: &FilterBank,
    dilation: usize,
) -> Result<(FeatureMap, PacCache)> {
    pac_forward_impl(v, f, filt, dilation, false)
}

/// [`pac_forward`] driven by a layer configuration (honours `normalized`).
pub fn pac_forward_layer(v: &FeatureMap, f: &FeatureMap, layer: &PacLayer) -> Result<(FeatureMap, PacCache)> {
    pac_forward_impl(v, f, &layer.filters, layer.config.dilation, layer.config.normalized)
}

fn pac_forward_impl(
    v: &FeatureMap,
    f: &FeatureMap,
    filt: &FilterBank,
    dilation: usize,
    normalized: bool,
) -> Result<(FeatureMap, PacCache)> {
    check_conv_inputs(v, filt, dilation)?;
    let (w, h) = (v.width(), v.height());
    if !f.same_size(w, h) {
        return Err(contract(format!(
            "guidance is {}x{}, input is {w}x{h}",
            f.width(),
            f.height()
        )));
    }
    let (s, r) = (filt.size, filt.size / 2);
    let taps = s * s;
    let n = w * h;
    let fc = f.channels();

    let mut affinity = vec![0.0; n * taps];
    affinity.par_chunks_mut(w * taps).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let i = y * w + x;
            for ky in 0..s {
                for kx in 0..s {
                    if let Some(j) = neighbour(x, y, kx, ky, r, dilation, w, h) {
                        let mut d2 = 0.0;
                        for c in 0..fc {
                            let p = f.plane(c);
                            let diff = p[i] - p[j];
                            d2 += diff * diff;
                        }
                        row[x * taps + ky * s + kx] = (-0.5 * d2).exp();
                    }
                }
            }
        }
    });
    let mean_affinity: Vec<f64> = if normalized {
        affinity
            .chunks(taps)
            .map(|k| k.iter().sum::<f64>() / taps as f64)
            .collect()
    } else {
        Vec::new()
    };

    let mut out = vec![0.0; filt.out_channels * n];
    out.par_chunks_mut(w).enumerate().for_each(|(row_idx, row)| {
        let co = row_idx / h;
        let y = row_idx % h;
        for (x, o) in row.iter_mut().enumerate() {
            let i = y * w + x;
            let scale = if normalized { 1.0 / mean_affinity[i] } else { 1.0 };
            let mut acc = 0.0;
            for ky in 0..s {
                for kx in 0..s {
                    if let Some(j) = neighbour(x, y, kx, ky, r, dilation, w, h) {
                        let k = affinity[i * taps + ky * s + kx];
                        let mut wv = 0.0;
                        for ci in 0..filt.in_channels {
                            wv += filt.weight(co, ci, ky, kx) * v.plane(ci)[j];
                        }
                        acc += k * wv;
                    }
                }
            }
            *o = acc * scale + filt.bias[co];
        }
    });

    let cache = PacCache {
        input: v.clone(),
        guidance: f.clone(),
        filters: filt.clone(),
        dilation,
        normalized,
        affinity,
        mean_affinity,
    };
    Ok((FeatureMap::new(filt.out_channels, w, h, out)?, cache))
}

/// Exact partial derivatives of a PAC layer output w.r.t. its input, its
/// guidance features, its weights and its biases.
pub fn pac_backward(upstream: &FeatureMap, cache: &PacCache) -> Result<PacGrads> {
    let filt = &cache.filters;
    let (w, h) = (cache.input.width(), cache.input.height());
    if upstream.channels() != filt.out_channels || !upstream.same_size(w, h) {
        return Err(contract("upstream gradient does not match the cached forward output"));
    }
    let (s, r) = (filt.size, filt.size / 2);
    let taps = s * s;
    let n = w * h;
    let (ci_n, co_n) = (filt.in_channels, filt.out_channels);
    let fc = cache.guidance.channels();
    let v = cache.input.data();
    let f = cache.guidance.data();
    let up = upstream.data();

    let mut g_v = vec![0.0; ci_n * n];
    let mut g_f = vec![0.0; fc * n];
    let mut g_w = vec![0.0; filt.weights.len()];
    let mut g_b = vec![0.0; co_n];
    // dL/dK for each tap of the current pixel
    let mut g_k = vec![0.0; taps];
    let mut nbr = vec![None; taps];

    for co in 0..co_n {
        g_b[co] = up[co * n..(co + 1) * n].iter().sum();
    }

    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            for ky in 0..s {
                for kx in 0..s {
                    nbr[ky * s + kx] = neighbour(x, y, kx, ky, r, cache.dilation, w, h);
                }
            }
            g_k.iter_mut().for_each(|g| *g = 0.0);
            for t in 0..taps {
                let Some(j) = nbr[t] else { continue };
                let k = cache.effective_affinity(i, t);
                for co in 0..co_n {
                    let u = up[co * n + i];
                    for ci in 0..ci_n {
                        let wi = (co * ci_n + ci) * taps + t;
                        let vj = v[ci * n + j];
                        g_w[wi] += u * k * vj;
                        g_v[ci * n + j] += u * k * filt.weights[wi];
                        g_k[t] += u * filt.weights[wi] * vj;
                    }
                }
            }
            if cache.normalized {
                let z = cache.mean_affinity[i];
                let mixed: f64 = (0..taps)
                    .filter(|t| nbr[*t].is_some())
                    .map(|t| cache.effective_affinity(i, t) * g_k[t])
                    .sum::<f64>()
                    / taps as f64;
                for g in g_k.iter_mut() {
                    *g = (*g - mixed) / z;
                }
            }
            for t in 0..taps {
                let Some(j) = nbr[t] else { continue };
                if j == i {
                    continue;
                }
                let k = cache.affinity[i * taps + t];
                let coef = g_k[t] * k;
                for c in 0..fc {
                    let diff = f[c * n + i] - f[c * n + j];
                    g_f[c * n + i] -= coef * diff;
                    g_f[c * n + j] += coef * diff;
                }
            }
        }
    }

    Ok(PacGrads {
        input: FeatureMap::new(ci_n, w, h, g_v)?,
        guidance: FeatureMap::new(fc, w, h, g_f)?,
        filters: FilterBank::new(co_n, ci_n, s, g_w, g_b)?,
    })
}

/// Caches of the four PAC passes run by [`gradsmooth_apply`].
#[derive(Debug, Clone)]
pub struct GradSmoothCache {
    valid: Vec<bool>,
    dx: [PacCache; 2],
    dy: [PacCache; 2],
}

#[derive(Debug, Clone)]
pub struct GradSmoothGrads {
    /// Derivatives w.r.t. the raw gradient field (zero on invalid samples).
    pub field: GradientField,
    pub guidance: FeatureMap,
    pub layer1: FilterBank,
    pub layer2: FilterBank,
}

/// Runs dx and dy through layer1 then layer2 with shared parameters.
///
/// Invalid gradient samples are fed in as zero. The refined field carries the
/// input's validity mask.
pub fn gradsmooth_apply(
    g: &GradientField,
    f: &FeatureMap,
    params: &GradSmoothParams,
) -> Result<(GradientField, GradSmoothCache)> {
    let (w, h) = (g.width, g.height);
    if !f.same_size(w, h) {
        return Err(contract(format!(
            "guidance is {}x{}, gradient field is {w}x{h}",
            f.width(),
            f.height()
        )));
    }
    let run = |component: &[f64]| -> Result<(Vec<f64>, [PacCache; 2])> {
        let masked = component
            .iter()
            .zip(&g.valid)
            .map(|(v, ok)| if *ok { *v } else { 0.0 })
            .collect();
        let input = FeatureMap::from_plane(w, h, masked)?;
        let (mid, c1) = pac_forward_layer(&input, f, &params.layer1)?;
        let (out, c2) = pac_forward_layer(&mid, f, &params.layer2)?;
        Ok((out.into_data(), [c1, c2]))
    };
    let (dx, cx) = run(&g.dx)?;
    let (dy, cy) = run(&g.dy)?;
    let refined = GradientField::new(w, h, dx, dy, g.valid.clone())?;
    Ok((
        refined,
        GradSmoothCache {
            valid: g.valid.clone(),
            dx: cx,
            dy: cy,
        },
    ))
}

/// Backpropagates through [`gradsmooth_apply`]. Upstream entries are used as
/// given, regardless of the upstream field's own mask.
pub fn gradsmooth_backward(upstream: &GradientField, cache: &GradSmoothCache) -> Result<GradSmoothGrads> {
    let (w, h) = (cache.dx[0].input.width(), cache.dx[0].input.height());
    if upstream.width != w || upstream.height != h {
        return Err(contract("upstream gradient does not match the GradSmooth cache"));
    }
    let back = |component: &[f64], caches: &[PacCache; 2]| -> Result<(Vec<f64>, PacGrads, PacGrads)> {
        let up = FeatureMap::from_plane(w, h, component.to_vec())?;
        let g2 = pac_backward(&up, &caches[1])?;
        let g1 = pac_backward(&g2.input, &caches[0])?;
        let masked = g1
            .input
            .data()
            .iter()
            .zip(&cache.valid)
            .map(|(v, ok)| if *ok { *v } else { 0.0 })
            .collect();
        Ok((masked, g1, g2))
    };
    let (gdx, x1, x2) = back(&upstream.dx, &cache.dx)?;
    let (gdy, y1, y2) = back(&upstream.dy, &cache.dy)?;

    let sum_maps = |maps: [&FeatureMap; 4]| -> Result<FeatureMap> {
        let mut data = maps[0].data().to_vec();
        for m in &maps[1..] {
            for (a, b) in data.iter_mut().zip(m.data()) {
                *a += b;
            }
        }
        FeatureMap::new(maps[0].channels(), w, h, data)
    };
    let guidance = sum_maps([&x1.guidance, &x2.guidance, &y1.guidance, &y2.guidance])?;
    let mut layer1 = x1.filters.clone();
    layer1.add_scaled(&y1.filters, 1.0)?;
    let mut layer2 = x2.filters.clone();
    layer2.add_scaled(&y2.filters, 1.0)?;
    Ok(GradSmoothGrads {
        field: GradientField::new(w, h, gdx, gdy, cache.valid.clone())?,
        guidance,
        layer1,
        layer2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> FeatureMap {
        FeatureMap::from_fn(1, w, h, |_, x, y| ((x * 31 + y * 17) % 11) as f64 / 11.0 - 0.4).unwrap()
    }

    #[test]
    fn affinity_values() {
        assert_eq!(gaussian_affinity(&[0.3, -2.0], &[0.3, -2.0]).unwrap(), 1.0);
        let k = gaussian_affinity(&[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert!((k - (-1.0f64).exp()).abs() < 1e-15);
        assert!((k - 0.367879).abs() < 1e-6);
        let far = gaussian_affinity(&[30.0], &[0.0]).unwrap();
        assert!(far > 0.0 && far < 1e-150);
        assert!(gaussian_affinity(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn identity_kernel_is_identity() {
        let v = ramp(5, 4);
        let out = conv_forward(&v, &FilterBank::identity(1).unwrap(), 1).unwrap();
        assert_eq!(out, v);
        let f = FeatureMap::from_fn(2, 5, 4, |c, x, y| (c + x * y) as f64).unwrap();
        let (out, _) = pac_forward(&v, &f, &FilterBank::identity(1).unwrap(), 3).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn box_filter_preserves_constants_in_interior() {
        let v = FeatureMap::from_fn(1, 5, 5, |_, _, _| 2.5).unwrap();
        let out = conv_forward(&v, &FilterBank::uniform(3).unwrap(), 1).unwrap();
        assert!((out.get(0, 2, 2) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn impulse_spreads_over_stencil() {
        let mut data = vec![0.0; 25];
        data[12] = 9.0;
        let v = FeatureMap::from_plane(5, 5, data).unwrap();
        let out = conv_forward(&v, &FilterBank::uniform(3).unwrap(), 1).unwrap();
        for y in 0..5 {
            for x in 0..5 {
                let expected = if (1..=3).contains(&x) && (1..=3).contains(&y) {
                    1.0
                } else {
                    0.0
                };
                assert!((out.get(0, x, y) - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn pac_on_one_by_three_row() {
        // off-centre guidance differs by one unit: affinity exp(-1/2)
        let v = FeatureMap::from_plane(3, 1, vec![0.0, 9.0, 0.0]).unwrap();
        let f = FeatureMap::from_plane(3, 1, vec![1.0, 0.0, 1.0]).unwrap();
        let (out, cache) = pac_forward(&v, &f, &FilterBank::uniform(3).unwrap(), 1).unwrap();
        assert!((out.get(0, 1, 0) - 1.0).abs() < 1e-15);
        let centre = &cache.affinities()[9..18];
        assert_eq!(centre[4], 1.0);
        assert!((centre[3] - (-0.5f64).exp()).abs() < 1e-15);
        assert_eq!(centre[0], 0.0);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let v = ramp(6, 6);
        let f = FeatureMap::from_fn(2, 6, 6, |c, x, y| (c * x + y) as f64 * 0.1).unwrap();
        let (_, cache) = pac_forward(&v, &f, &FilterBank::uniform(3).unwrap(), 2).unwrap();
        let g = pac_backward(&FeatureMap::zeros(1, 6, 6).unwrap(), &cache).unwrap();
        assert!(g.input.data().iter().all(|v| *v == 0.0));
        assert!(g.guidance.data().iter().all(|v| *v == 0.0));
        assert!(g.filters.weights().iter().chain(g.filters.bias()).all(|v| *v == 0.0));
    }

    #[test]
    fn constant_guidance_input_gradient_is_flipped_correlation() {
        let w = 7;
        let weights: Vec<f64> = (0..9).map(|k| k as f64 * 0.1 - 0.3).collect();
        let bank = FilterBank::new(1, 1, 3, weights.clone(), vec![0.2]).unwrap();
        let v = ramp(w, w);
        let f = FeatureMap::from_fn(3, w, w, |_, _, _| 0.7).unwrap();
        let (_, cache) = pac_forward(&v, &f, &bank, 2).unwrap();
        let up = FeatureMap::from_fn(1, w, w, |_, x, y| ((x + 2 * y) % 5) as f64 - 2.0).unwrap();
        let g = pac_backward(&up, &cache).unwrap();
        // grad_v = conv(up, flipped kernel)
        let flipped = FilterBank::new(1, 1, 3, weights.iter().rev().copied().collect(), vec![0.0]).unwrap();
        let expected = conv_forward(&up, &flipped, 2).unwrap();
        for (a, b) in g.input.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(g.guidance.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn normalized_layer_preserves_constants_at_borders() {
        let v = FeatureMap::from_fn(1, 9, 9, |_, _, _| 1.5).unwrap();
        let f = FeatureMap::from_fn(1, 9, 9, |_, x, _| if x < 4 { 0.0 } else { 3.0 }).unwrap();
        let mut layer = PacLayer::new(PacLayerConfig::single_channel(3, 4), FilterBank::uniform(3).unwrap()).unwrap();
        layer.config.normalized = true;
        let (out, _) = pac_forward_layer(&v, &f, &layer).unwrap();
        assert!(out.data().iter().all(|o| (o - 1.5).abs() < 1e-12));
        let flat = FeatureMap::zeros(1, 9, 9).unwrap();
        let (out, _) = pac_forward_layer(&v, &flat, &layer).unwrap();
        assert!(out.data().iter().all(|o| (o - 1.5).abs() < 1e-12));
    }

    #[test]
    fn gradsmooth_identity_passes_through() {
        let g = GradientField::new(
            6,
            5,
            (0..30).map(|i| i as f64 * 0.1).collect(),
            (0..30).map(|i| 1.0 - i as f64 * 0.05).collect(),
            vec![true; 30],
        )
        .unwrap();
        let f = FeatureMap::from_fn(5, 6, 5, |c, x, y| (c + x + y) as f64 * 0.2).unwrap();
        let (out, _) = gradsmooth_apply(&g, &f, &GradSmoothParams::identity()).unwrap();
        assert_eq!(out, g);
    }

    #[test]
    fn gradsmooth_box_preserves_interior_constant() {
        let n = 41 * 41;
        let g = GradientField::new(41, 41, vec![0.75; n], vec![-0.25; n], vec![true; n]).unwrap();
        let f = FeatureMap::zeros(5, 41, 41).unwrap();
        let (out, _) = gradsmooth_apply(&g, &f, &GradSmoothParams::default()).unwrap();
        let i = 20 * 41 + 20;
        assert!((out.dx[i] - 0.75).abs() < 1e-12);
        assert!((out.dy[i] + 0.25).abs() < 1e-12);
    }

    #[test]
    fn spatial_mismatch_rejected() {
        let v = ramp(4, 4);
        let f = FeatureMap::zeros(1, 5, 4).unwrap();
        assert!(pac_forward(&v, &f, &FilterBank::uniform(3).unwrap(), 1).is_err());
        let two = FeatureMap::zeros(2, 4, 4).unwrap();
        assert!(conv_forward(&two, &FilterBank::uniform(3).unwrap(), 1).is_err());
    }

    #[test]
    fn filter_bank_binary_layout() {
        let bank = FilterBank::new(2, 1, 1, vec![1.5, -2.0], vec![0.25, 0.0]).unwrap();
        let bytes = bank.to_bytes();
        assert_eq!(&bytes[..5], b"GPFB1");
        assert_eq!(&bytes[5..17], &[2, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&bytes[17..25], &1.5f64.to_le_bytes());
        assert_eq!(bytes.len(), 17 + 8 * 4);
        assert_eq!(FilterBank::from_bytes(&bytes).unwrap(), bank);
        assert!(FilterBank::from_bytes(&bytes[..20]).is_err());
        assert!(FilterBank::from_bytes(b"GPFB2xxxxxxxxxxxxxxx").is_err());
        assert!(FilterBank::new(1, 1, 2, vec![0.0; 4], vec![0.0]).is_err());
    }
}
