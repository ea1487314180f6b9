//! Smooth-L1 losses on disparity, refined gradients and occlusion, and their
//! weighted composite with analytic gradients.

use serde::{Deserialize, Serialize};

use crate::error::{contract, degenerate, Result};
use crate::fields::{spatial_gradient, spatial_gradient_backward, DisparityMap, FeatureMap, GradientField};
use crate::occlusion::{occlusion_target, soft_occlusion, soft_occlusion_backward, OcclusionConfig};
use crate::pac::{gradsmooth_apply, gradsmooth_backward, FilterBank, GradSmoothParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight of the gradient-domain term.
    pub lambda1: f64,
    /// Weight of the occlusion term.
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0 && self.lambda1.is_finite() && self.lambda2.is_finite()) {
            return Err(contract(format!(
                "loss weights must be finite and non-negative, got ({}, {})",
                self.lambda1, self.lambda2
            )));
        }
        Ok(())
    }
}

/// Scalar loss components, the shape logged per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub l_d: f64,
    pub l_g: f64,
    pub l_o: f64,
    pub total: f64,
}

impl LossRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain floats always serialize")
    }
}

#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub l_d: f64,
    pub l_g: f64,
    pub l_o: f64,
    pub total: f64,
    pub weights: LossWeights,
    /// d total / d D.
    pub grad_wrt_disparity: Vec<f64>,
    /// d total / d (layer1, layer2) of GradSmooth; only the gradient term contributes.
    pub grad_wrt_filters: [FilterBank; 2],
    /// Unweighted per-component derivatives w.r.t. D, in the order (L_D, L_G, L_O).
    pub component_grads: [Vec<f64>; 3],
}

impl LossBreakdown {
    pub fn record(&self) -> LossRecord {
        LossRecord {
            l_d: self.l_d,
            l_g: self.l_g,
            l_o: self.l_o,
            total: self.total,
        }
    }

    /// Single-line `{l_d, l_g, l_o, total}` record.
    pub fn to_json(&self) -> String {
        self.record().to_json()
    }
}

/// Mean smooth-L1 (transition at 1) over masked pixels, with its gradient.
pub fn smooth_l1(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        return Err(contract(format!(
            "smooth L1 inputs differ in length ({}, {}, {})",
            pred.len(),
            target.len(),
            mask.len()
        )));
    }
    let count = mask.iter().filter(|m| **m).count();
    if count == 0 {
        return Err(degenerate("smooth L1 mask selects no pixels"));
    }
    let scale = 1.0 / count as f64;
    let mut sum = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for i in 0..pred.len() {
        if !mask[i] {
            continue;
        }
        let e = pred[i] - target[i];
        if e.abs() < 1.0 {
            sum += 0.5 * e * e;
            grad[i] = e * scale;
        } else {
            sum += e.abs() - 0.5;
            grad[i] = e.signum() * scale;
        }
    }
    Ok((sum * scale, grad))
}

fn and_masks(a: &[bool], b: &[bool]) -> Vec<bool> {
    a.iter().zip(b).map(|(x, y)| *x && *y).collect()
}

/// `L = L_D + λ1 L_G + λ2 L_O` with the gradient w.r.t. the predicted
/// disparities and the GradSmooth filters.
///
/// The occlusion window is pinned jointly for prediction and ground truth so
/// both maps are scanned identically. A gradient term with no jointly valid
/// gradient samples contributes 0.
pub fn total_loss(
    d: &DisparityMap,
    d_gt: &DisparityMap,
    guidance: &FeatureMap,
    params: &GradSmoothParams,
    occ_cfg: &OcclusionConfig,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    weights.validate()?;
    let (w, h) = (d.width(), d.height());
    if d_gt.width() != w || d_gt.height() != h || !guidance.same_size(w, h) {
        return Err(contract("prediction, ground truth and guidance must share dimensions"));
    }
    let n = w * h;

    let mask_d = and_masks(d.valid(), d_gt.valid());
    if !mask_d.iter().any(|m| *m) {
        return Err(degenerate("prediction and ground truth share no valid pixel"));
    }
    let (l_d, grad_d) = smooth_l1(d.values(), d_gt.values(), &mask_d)?;

    let g_pred = spatial_gradient(d)?;
    let g_gt = spatial_gradient(d_gt)?;
    let (refined, cache) = gradsmooth_apply(&g_pred, guidance, params)?;
    let mask_g = and_masks(&g_pred.valid, &g_gt.valid);
    let (l_g, grad_g, filter_grads) = if mask_g.iter().any(|m| *m) {
        let (lx, gx) = smooth_l1(&refined.dx, &g_gt.dx, &mask_g)?;
        let (ly, gy) = smooth_l1(&refined.dy, &g_gt.dy, &mask_g)?;
        let upstream = GradientField::new(w, h, gx, gy, vec![true; n])?;
        let back = gradsmooth_backward(&upstream, &cache)?;
        let grad = spatial_gradient_backward(&back.field);
        (lx + ly, grad, [back.layer1, back.layer2])
    } else {
        (
            0.0,
            vec![0.0; n],
            [
                FilterBank::zeros_like(&params.layer1.filters),
                FilterBank::zeros_like(&params.layer2.filters),
            ],
        )
    };

    let occ = occ_cfg.pinned_for(&[d, d_gt]);
    let (o_pred, argmax) = soft_occlusion(d, &occ)?;
    let o_gt = occlusion_target(d_gt, &occ)?;
    let mask_o = and_masks(&o_pred.valid, &o_gt.valid);
    let (l_o, grad_o_map) = smooth_l1(&o_pred.values, &o_gt.values, &mask_o)?;
    let grad_o = soft_occlusion_backward(&grad_o_map, d, &argmax)?;

    let total = l_d + weights.lambda1 * l_g + weights.lambda2 * l_o;
    let grad_wrt_disparity = (0..n)
        .map(|i| grad_d[i] + weights.lambda1 * grad_g[i] + weights.lambda2 * grad_o[i])
        .collect();
    let [mut f1, mut f2] = filter_grads;
    for bank in [&mut f1, &mut f2] {
        bank.weights_mut().iter_mut().for_each(|v| *v *= weights.lambda1);
        bank.bias_mut().iter_mut().for_each(|v| *v *= weights.lambda1);
    }

    Ok(LossBreakdown {
        l_d,
        l_g,
        l_o,
        total,
        weights: *weights,
        grad_wrt_disparity,
        grad_wrt_filters: [f1, f2],
        component_grads: [grad_d, grad_g, grad_o],
    })
}
