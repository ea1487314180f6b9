//! Bad-τ percentage and mean absolute error over pixels with ground truth.

use std::fmt;

use serde::Serialize;

use crate::error::{contract, degenerate, Result};
use crate::fields::DisparityMap;

/// Threshold of the standard bad-pixel metric.
pub const DEFAULT_BAD_THRESHOLD: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalReport {
    pub bad_pct: f64,
    pub mae: f64,
    pub n_valid: usize,
    pub threshold: f64,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain numbers always serialize")
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "bad-{:.1}: {:.4}%  MAE: {:.6}  ({} pixels)",
            self.threshold, self.bad_pct, self.mae, self.n_valid
        )
    }
}

/// Pixels scored: valid in both maps and, if `max_disparity` is set, with
/// ground truth at or below it.
fn scored_errors<'a>(
    pred: &'a DisparityMap,
    gt: &'a DisparityMap,
    max_disparity: Option<f64>,
) -> Result<impl Iterator<Item = f64> + 'a> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(contract(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    Ok((0..gt.len()).filter_map(move |i| {
        let keep = gt.valid()[i] && pred.valid()[i] && max_disparity.is_none_or(|m| gt.values()[i] <= m);
        keep.then(|| (pred.values()[i] - gt.values()[i]).abs())
    }))
}

/// Percentage of scored pixels whose absolute error is strictly above `tau`.
pub fn bad_threshold(pred: &DisparityMap, gt: &DisparityMap, tau: f64) -> Result<f64> {
    evaluate(pred, gt, tau, None).map(|r| r.bad_pct)
}

pub fn mae(pred: &DisparityMap, gt: &DisparityMap) -> Result<f64> {
    evaluate(pred, gt, DEFAULT_BAD_THRESHOLD, None).map(|r| r.mae)
}

/// Both metrics in one pass. `max_disparity` drops ground-truth pixels
/// above the cap (off when `None`).
pub fn evaluate(pred: &DisparityMap, gt: &DisparityMap, tau: f64, max_disparity: Option<f64>) -> Result<EvalReport> {
    let mut n = 0usize;
    let mut bad = 0usize;
    let mut sum = 0.0;
    for e in scored_errors(pred, gt, max_disparity)? {
        n += 1;
        sum += e;
        if e > tau {
            bad += 1;
        }
    }
    if n == 0 {
        return Err(degenerate("no pixel is valid in both prediction and ground truth"));
    }
    Ok(EvalReport {
        bad_pct: 100.0 * bad as f64 / n as f64,
        mae: sum / n as f64,
        n_valid: n,
        threshold: tau,
    })
}
