//! Central finite-difference checks of every analytic backward pass.
//!
//! Each check draws seeded random instances, contracts the operator output
//! with a random upstream so it becomes a scalar, and compares sampled
//! partials against `(J(x + h) - J(x - h)) / 2h`. Differences of the output
//! are taken elementwise before summation to keep cancellation error small.

use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{contract, Result};
use crate::fields::{DisparityMap, FeatureMap};
use crate::loss::{smooth_l1, total_loss, LossWeights};
use crate::occlusion::{soft_occlusion, soft_occlusion_backward, OcclusionConfig};
use crate::pac::{
    pac_backward, pac_forward_layer, FilterBank, GradSmoothParams, PacLayer, PacLayerConfig, GRADSMOOTH_DILATIONS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    Pac,
    SoftOcclusion,
    SmoothL1,
    TotalLoss,
}

impl Operator {
    pub const ALL: [Operator; 4] = [
        Operator::Pac,
        Operator::SoftOcclusion,
        Operator::SmoothL1,
        Operator::TotalLoss,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Operator::Pac => "pac_backward",
            Operator::SoftOcclusion => "soft_occlusion_backward",
            Operator::SmoothL1 => "smooth_l1",
            Operator::TotalLoss => "total_loss",
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckConfig {
    pub seed: u64,
    /// Random instances per operator (per dilation and variant for PAC).
    pub instances: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Partials sampled from each input tensor; smaller tensors are checked in full.
    pub partials_per_tensor: usize,
    /// Test hook: scales this operator's analytic gradient by 1.01 so the check must fail.
    pub corrupt: Option<Operator>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: 20,
            step: 1e-5,
            tolerance: 1e-4,
            partials_per_tensor: 64,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OperatorReport {
    pub operator: Operator,
    pub instances: usize,
    pub partials: usize,
    /// Partials left out because the occlusion argmax moves within `±step`.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    pub operators: Vec<OperatorReport>,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report fields always serialize")
    }

    pub fn operator(&self, op: Operator) -> Option<&OperatorReport> {
        self.operators.iter().find(|r| r.operator == op)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.operators {
            writeln!(
                f,
                "{:<24} {}  max rel error {:.3e}  ({} partials, {} skipped, {} instances)",
                r.operator.name(),
                if r.passed { "PASS" } else { "FAIL" },
                r.max_rel_error,
                r.partials,
                r.skipped,
                r.instances
            )?;
        }
        write!(f, "overall: {}", if self.passed { "PASS" } else { "FAIL" })
    }
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    if !(cfg.step > 0.0 && cfg.tolerance > 0.0) || cfg.instances == 0 || cfg.partials_per_tensor == 0 {
        return Err(contract(
            "gradcheck needs positive step, tolerance, instance and partial counts",
        ));
    }
    let mut operators = Vec::new();
    for (k, op) in Operator::ALL.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(k as u64 * 0x9E37_79B9));
        let mut tally = Tally::new(cfg, op);
        for _ in 0..cfg.instances {
            match op {
                Operator::Pac => {
                    for dilation in [1, GRADSMOOTH_DILATIONS[0], GRADSMOOTH_DILATIONS[1]] {
                        for normalized in [false, true] {
                            check_pac(&mut rng, &mut tally, dilation, normalized)?;
                        }
                    }
                }
                Operator::SoftOcclusion => check_soft_occlusion(&mut rng, &mut tally)?,
                Operator::SmoothL1 => check_smooth_l1(&mut rng, &mut tally)?,
                Operator::TotalLoss => check_total_loss(&mut rng, &mut tally)?,
            }
        }
        operators.push(tally.finish(cfg.instances));
    }
    let passed = operators.iter().all(|r| r.passed);
    Ok(GradcheckReport {
        seed: cfg.seed,
        step: cfg.step,
        tolerance: cfg.tolerance,
        operators,
        passed,
    })
}

struct Tally {
    op: Operator,
    step: f64,
    tolerance: f64,
    per_tensor: usize,
    scale: f64,
    partials: usize,
    skipped: usize,
    max_rel: f64,
}

impl Tally {
    fn new(cfg: &GradcheckConfig, op: Operator) -> Self {
        Self {
            op,
            step: cfg.step,
            tolerance: cfg.tolerance,
            per_tensor: cfg.partials_per_tensor,
            scale: if cfg.corrupt == Some(op) { 1.01 } else { 1.0 },
            partials: 0,
            skipped: 0,
            max_rel: 0.0,
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        self.partials += 1;
        self.max_rel = self.max_rel.max(relative_error(analytic * self.scale, numeric));
    }

    fn finish(self, instances: usize) -> OperatorReport {
        OperatorReport {
            operator: self.op,
            instances,
            partials: self.partials,
            skipped: self.skipped,
            max_rel_error: self.max_rel,
            passed: self.partials > 0 && self.max_rel <= self.tolerance,
        }
    }

    /// Indices to check out of a tensor of length `len`.
    fn pick(&self, rng: &mut ChaCha8Rng, len: usize) -> Vec<usize> {
        if len <= self.per_tensor {
            (0..len).collect()
        } else {
            let mut idx = sample(rng, len, self.per_tensor).into_vec();
            idx.sort_unstable();
            idx
        }
    }

    /// Central difference of `dot(upstream, out(x))` in one coordinate, where
    /// `eval(delta)` returns the output with that coordinate shifted by `delta`.
    fn central(&self, upstream: &[f64], eval: impl Fn(f64) -> Result<Vec<f64>>) -> Result<f64> {
        let plus = eval(self.step)?;
        let minus = eval(-self.step)?;
        let diff: f64 = upstream
            .iter()
            .zip(plus.iter().zip(&minus))
            .map(|(u, (p, m))| u * (p - m))
            .sum();
        Ok(diff / (2.0 * self.step))
    }
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn shifted(data: &[f64], i: usize, delta: f64) -> Vec<f64> {
    let mut out = data.to_vec();
    out[i] += delta;
    out
}

fn random_size(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(9..=16), rng.random_range(9..=16))
}

fn check_pac(rng: &mut ChaCha8Rng, tally: &mut Tally, dilation: usize, normalized: bool) -> Result<()> {
    let (w, h) = random_size(rng);
    let cin = rng.random_range(1..=2);
    let cout = rng.random_range(1..=2);
    let fch = 3;
    let size = 3;
    let v = FeatureMap::new(cin, w, h, uniform_vec(rng, cin * w * h, -1.0, 1.0))?;
    let f = FeatureMap::new(fch, w, h, uniform_vec(rng, fch * w * h, 0.0, 1.5))?;
    let bank = FilterBank::new(
        cout,
        cin,
        size,
        uniform_vec(rng, cout * cin * size * size, -1.0, 1.0),
        uniform_vec(rng, cout, -1.0, 1.0),
    )?;
    let config = PacLayerConfig {
        kernel_size: size,
        dilation,
        in_channels: cin,
        out_channels: cout,
        normalized,
    };
    let layer = PacLayer::new(config, bank.clone())?;
    let upstream = uniform_vec(rng, cout * w * h, -1.0, 1.0);

    let (_, cache) = pac_forward_layer(&v, &f, &layer)?;
    let grads = pac_backward(&FeatureMap::new(cout, w, h, upstream.clone())?, &cache)?;
    let run = |v: &FeatureMap, f: &FeatureMap, bank: FilterBank| -> Result<Vec<f64>> {
        let layer = PacLayer::new(config, bank)?;
        Ok(pac_forward_layer(v, f, &layer)?.0.into_data())
    };

    for i in tally.pick(rng, v.data().len()) {
        let numeric = tally.central(&upstream, |delta| {
            run(
                &FeatureMap::new(cin, w, h, shifted(v.data(), i, delta))?,
                &f,
                bank.clone(),
            )
        })?;
        tally.record(grads.input.data()[i], numeric);
    }
    for i in tally.pick(rng, f.data().len()) {
        let numeric = tally.central(&upstream, |delta| {
            run(
                &v,
                &FeatureMap::new(fch, w, h, shifted(f.data(), i, delta))?,
                bank.clone(),
            )
        })?;
        tally.record(grads.guidance.data()[i], numeric);
    }
    for i in tally.pick(rng, bank.weights().len()) {
        let numeric = tally.central(&upstream, |delta| {
            let b = FilterBank::new(cout, cin, size, shifted(bank.weights(), i, delta), bank.bias().to_vec())?;
            run(&v, &f, b)
        })?;
        tally.record(grads.filters.weights()[i], numeric);
    }
    for i in 0..cout {
        let numeric = tally.central(&upstream, |delta| {
            let b = FilterBank::new(cout, cin, size, bank.weights().to_vec(), shifted(bank.bias(), i, delta))?;
            run(&v, &f, b)
        })?;
        tally.record(grads.filters.bias()[i], numeric);
    }
    Ok(())
}

/// Disparity map with real values in `[0, max)` and roughly 10% invalid pixels.
fn random_disparity(rng: &mut ChaCha8Rng, w: usize, h: usize, max: f64) -> Result<DisparityMap> {
    let values = uniform_vec(rng, w * h, 0.0, max);
    let valid = (0..w * h).map(|_| rng.random_bool(0.9)).collect();
    DisparityMap::new(w, h, values, valid)
}

/// Whether shifting pixel `i` by `±step` leaves every occlusion argmax in place.
fn argmax_stable(d: &DisparityMap, i: usize, step: f64, cfg: &OcclusionConfig) -> Result<bool> {
    let base = soft_occlusion(d, cfg)?.1;
    for delta in [step, -step] {
        let moved = d.with_values(shifted(d.values(), i, delta))?;
        if soft_occlusion(&moved, cfg)?.1.argmax() != base.argmax() {
            return Ok(false);
        }
    }
    Ok(true)
}

fn check_soft_occlusion(rng: &mut ChaCha8Rng, tally: &mut Tally) -> Result<()> {
    let (w, h) = random_size(rng);
    let d = random_disparity(rng, w, h, 8.0)?;
    let cfg = OcclusionConfig::default().pinned_for(&[&d]);
    let upstream = uniform_vec(rng, w * h, -1.0, 1.0);
    let (_, cache) = soft_occlusion(&d, &cfg)?;
    let analytic = soft_occlusion_backward(&upstream, &d, &cache)?;
    for i in tally.pick(rng, w * h) {
        if !argmax_stable(&d, i, tally.step, &cfg)? {
            tally.skipped += 1;
            continue;
        }
        let numeric = tally.central(&upstream, |delta| {
            Ok(soft_occlusion(&d.with_values(shifted(d.values(), i, delta))?, &cfg)?
                .0
                .values)
        })?;
        tally.record(analytic[i], numeric);
    }
    Ok(())
}

fn check_smooth_l1(rng: &mut ChaCha8Rng, tally: &mut Tally) -> Result<()> {
    let (w, h) = random_size(rng);
    let n = w * h;
    let target = uniform_vec(rng, n, -2.0, 2.0);
    let pred: Vec<f64> = target.iter().map(|t| t + rng.random_range(-3.0..3.0)).collect();
    let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.8)).collect();
    mask[0] = true;
    let (_, analytic) = smooth_l1(&pred, &target, &mask)?;
    for i in tally.pick(rng, n) {
        let numeric = tally.central(&[1.0], |delta| {
            Ok(vec![smooth_l1(&shifted(&pred, i, delta), &target, &mask)?.0])
        })?;
        tally.record(analytic[i], numeric);
    }
    Ok(())
}

fn check_total_loss(rng: &mut ChaCha8Rng, tally: &mut Tally) -> Result<()> {
    let (w, h) = random_size(rng);
    let gt = DisparityMap::from_values(w, h, uniform_vec(rng, w * h, 0.0, 8.0))?;
    let noisy: Vec<f64> = gt.values().iter().map(|v| v + rng.random_range(-1.5..1.5)).collect();
    let d = DisparityMap::from_values(w, h, noisy)?;
    let guidance = FeatureMap::new(3, w, h, uniform_vec(rng, 3 * w * h, 0.0, 1.5))?;
    let bank =
        |rng: &mut ChaCha8Rng| FilterBank::new(1, 1, 3, uniform_vec(rng, 9, -0.5, 0.5), uniform_vec(rng, 1, -0.2, 0.2));
    let params = GradSmoothParams::with_filters(bank(rng)?, bank(rng)?)?;
    let weights = LossWeights {
        lambda1: rng.random_range(0.2..2.0),
        lambda2: rng.random_range(0.2..2.0),
    };
    let occ = OcclusionConfig::default().pinned_for(&[&d, &gt]);
    let loss = |d: &DisparityMap, p: &GradSmoothParams| -> Result<Vec<f64>> {
        Ok(vec![total_loss(d, &gt, &guidance, p, &occ, &weights)?.total])
    };
    let base = total_loss(&d, &gt, &guidance, &params, &occ, &weights)?;

    for i in tally.pick(rng, w * h) {
        if !argmax_stable(&d, i, tally.step, &occ)? {
            tally.skipped += 1;
            continue;
        }
        let numeric = tally.central(&[1.0], |delta| {
            loss(&d.with_values(shifted(d.values(), i, delta))?, &params)
        })?;
        tally.record(base.grad_wrt_disparity[i], numeric);
    }
    for layer in 0..2 {
        let analytic = &base.grad_wrt_filters[layer];
        let current = if layer == 0 {
            &params.layer1.filters
        } else {
            &params.layer2.filters
        };
        let with_bank = |b: FilterBank| -> Result<GradSmoothParams> {
            let mut p = params.clone();
            if layer == 0 {
                p.layer1.filters = b;
            } else {
                p.layer2.filters = b;
            }
            Ok(p)
        };
        for i in 0..current.weights().len() {
            let numeric = tally.central(&[1.0], |delta| {
                let b = FilterBank::new(1, 1, 3, shifted(current.weights(), i, delta), current.bias().to_vec())?;
                loss(&d, &with_bank(b)?)
            })?;
            tally.record(analytic.weights()[i], numeric);
        }
        let numeric = tally.central(&[1.0], |delta| {
            let b = FilterBank::new(1, 1, 3, current.weights().to_vec(), shifted(current.bias(), 0, delta))?;
            loss(&d, &with_bank(b)?)
        })?;
        tally.record(analytic.bias()[0], numeric);
    }
    Ok(())
}
