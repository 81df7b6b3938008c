//! Toy-scale sparsification-aware training.
//!
//! Networks are trained in float64 with plain full-batch gradient descent on
//! `L = L_proxy + lambda_s * L_s`. `L_proxy` is the squared flow error on
//! event pixels of a synthetic translating-dots task. `L_s` sums, per hidden
//! layer `i`, `lambda_i` times the frame-averaged `sum ReLU(u_i)` of the
//! membranes plus `sum_j 1/T_ij^2`. Thresholding is exact in the forward
//! pass; the backward pass differentiates it through an arctan surrogate.
//! Parameters are rounded to BFloat16 only on export.

mod data;
mod model;

pub use data::{translating_task, Sample, TaskConfig};
pub use model::{Mode, ParamClass, Surrogate, TrainLayer, TrainNet};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netspec::NetworkSpec;
use model::{run_chunk, FrameRef, Objective, SeqState};

/// Floor for thresholds, and the value of channels that never activated.
pub const MIN_THRESHOLD: f64 = 1e-6;
pub const LEAK_RANGE: (f64, f64) = (0.01, 0.99);
pub const MAX_TRAIN_SIZE: usize = 32;
pub const MAX_TRAIN_CHANNELS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda_s: f64,
    /// One weight per hidden layer; empty means all ones.
    pub lambda_i: Vec<f64>,
    /// Peak of the one-cycle learning-rate schedule.
    pub lr_max: f64,
    pub epochs: usize,
    pub surrogate_width: f64,
    /// Frames per truncated backpropagation window.
    pub bptt: usize,
    /// Elementwise gradient clip.
    pub grad_clip: f64,
    /// Set thresholds to the per-channel median of positive membranes
    /// before the first epoch.
    pub init_thresholds: bool,
    /// Softplus sharpness standing in for ReLU in the relaxed loss.
    pub softplus_beta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_s: 0.0,
            lambda_i: Vec::new(),
            lr_max: 0.02,
            epochs: 40,
            surrogate_width: 1.0,
            bptt: 5,
            grad_clip: 1.0,
            init_thresholds: true,
            softplus_beta: 20.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, hidden: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.lambda_s >= 0.0 && self.lambda_s.is_finite()) {
            return bad(format!("lambda_s must be >= 0, got {}", self.lambda_s));
        }
        if !self.lambda_i.is_empty() && self.lambda_i.len() != hidden {
            return bad(format!(
                "{} lambda_i values for {hidden} hidden layers",
                self.lambda_i.len()
            ));
        }
        if let Some(l) = self.lambda_i.iter().find(|&&l| !(l > 0.0)) {
            return bad(format!("lambda_i must be > 0, got {l}"));
        }
        if !(self.lr_max > 0.0) || !(self.surrogate_width > 0.0) || !(self.grad_clip > 0.0) {
            return bad("lr_max, surrogate_width and grad_clip must be > 0".into());
        }
        if self.bptt == 0 {
            return bad("bptt must be at least 1".into());
        }
        Ok(())
    }

    fn lambdas(&self, hidden: usize) -> Vec<f64> {
        if self.lambda_i.is_empty() {
            vec![1.0; hidden]
        } else {
            self.lambda_i.clone()
        }
    }

    /// One-cycle schedule: linear warm-up over the first 30% of epochs from
    /// `lr_max / 25`, then cosine decay to `lr_max / 1e4`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let n = self.epochs.max(1) as f64;
        let p = epoch as f64 / (n - 1.0).max(1.0);
        let (start, end) = (self.lr_max / 25.0, self.lr_max / 1e4);
        if p < 0.3 {
            start + (self.lr_max - start) * p / 0.3
        } else {
            let q = (p - 0.3) / 0.7;
            end + (self.lr_max - end) * 0.5 * (1.0 + (std::f64::consts::PI * q).cos())
        }
    }
}

/// FATReLU backward with an arctan surrogate for the step. Returns
/// `(dL/dx, dL/dT)`.
pub fn fatrelu_surrogate_backward(x: f64, threshold: f64, upstream: f64, width: f64) -> (f64, f64) {
    let sg = Surrogate { width }.grad(x - threshold);
    let s = (x > threshold) as u8 as f64;
    (upstream * (s + x * sg), -upstream * x * sg)
}

/// `sum_i lambda_i (sum ReLU(m_i) + sum_j 1/T_ij^2)`.
pub fn sparsification_loss(membranes: &[Vec<f64>], thresholds: &[Vec<f64>], lambda_i: &[f64]) -> Result<f64> {
    if membranes.len() != thresholds.len() || membranes.len() != lambda_i.len() {
        return Err(Error::Shape("membranes, thresholds and lambdas differ in layer count".into()));
    }
    let mut total = 0.0;
    for ((m, t), l) in membranes.iter().zip(thresholds).zip(lambda_i) {
        if let Some(bad) = t.iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::InvalidParameter(format!("threshold {bad} is not positive")));
        }
        let relu: f64 = m.iter().map(|v| v.max(0.0)).sum();
        let inv: f64 = t.iter().map(|v| 1.0 / (v * v)).sum();
        total += l * (relu + inv);
    }
    Ok(total)
}

/// Median of a sample; the mean of the middle pair for even counts.
fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Per-layer, per-channel medians of logged activations.
pub fn init_thresholds_from_activations(logged: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    logged
        .iter()
        .map(|layer| {
            layer
                .iter()
                .map(|ch| median(&mut ch.clone()).unwrap_or(MIN_THRESHOLD))
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub proxy: f64,
    pub ls: f64,
    pub mean_neuron_density: f64,
    pub mean_pixel_density: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: TrainNet,
    /// BFloat16 export of `params`.
    pub net: NetworkSpec,
    /// One row per epoch, measured before that epoch's update.
    pub log: Vec<EpochLog>,
    /// Measured after the last update.
    pub final_eval: EpochLog,
}

fn check_shapes(net: &TrainNet, data: &[Sample]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidParameter("no training samples".into()));
    }
    for s in data {
        if (s.height, s.width) != (net.height, net.width) {
            return Err(Error::Shape(format!(
                "sample {}x{} does not match network {}x{}",
                s.height, s.width, net.height, net.width
            )));
        }
    }
    Ok(())
}

fn objective(net: &TrainNet, data: &[Sample], cfg: &TrainConfig) -> Objective {
    let proxy_pixels = data
        .iter()
        .flat_map(|s| s.masks.iter())
        .map(|m| m.iter().filter(|&&b| b).count())
        .sum::<usize>()
        .max(1) as f64;
    let frames = data.iter().map(|s| s.inputs.len()).sum::<usize>().max(1) as f64;
    Objective {
        lambda_s: cfg.lambda_s,
        lambda_i: cfg.lambdas(net.hidden_layers()),
        surrogate: Surrogate {
            width: cfg.surrogate_width,
        },
        softplus_beta: cfg.softplus_beta,
        capture: false,
        proxy_pixels,
        frames,
    }
}

/// Loss over the batch, adding its gradient to `grad` when given.
fn batch_loss(
    net: &TrainNet,
    data: &[Sample],
    cfg: &TrainConfig,
    mode: Mode,
    mut grad: Option<&mut TrainNet>,
) -> EpochLog {
    let obj = objective(net, data, cfg);
    let mut proxy = 0.0;
    let mut membrane = 0.0;
    let (mut nz, mut neurons, mut act, mut pixels) = (0usize, 0usize, 0usize, 0usize);
    for s in data {
        let target = s.target();
        let mut state = SeqState::new(net.layers.len());
        let frames: Vec<FrameRef<'_>> = s
            .inputs
            .iter()
            .zip(&s.masks)
            .map(|(x, m)| FrameRef {
                input: x,
                target: &target,
                mask: m,
            })
            .collect();
        for chunk in frames.chunks(cfg.bptt) {
            let st = run_chunk(net, chunk, &mut state, &obj, mode, grad.as_deref_mut());
            proxy += st.proxy;
            membrane += st.membrane_term;
            nz += st.nonzero;
            neurons += st.neurons;
            act += st.active_pixels;
            pixels += st.pixels;
        }
    }
    let mut inv = 0.0;
    let mut hi = 0;
    for (li, l) in net.layers.iter().enumerate() {
        if !l.spec.kind.is_sparse() {
            continue;
        }
        let lam = obj.lambda_i[hi];
        hi += 1;
        for (c, &t) in l.t.iter().enumerate() {
            inv += lam / (t * t);
            if let Some(g) = grad.as_deref_mut() {
                g.layers[li].t[c] += -2.0 * cfg.lambda_s * lam / (t * t * t);
            }
        }
    }
    let ls = membrane + inv;
    EpochLog {
        epoch: 0,
        loss: proxy + cfg.lambda_s * ls,
        proxy,
        ls,
        mean_neuron_density: nz as f64 / neurons.max(1) as f64,
        mean_pixel_density: act as f64 / pixels.max(1) as f64,
    }
}

/// Loss terms and densities with exact thresholding.
pub fn evaluate(net: &TrainNet, data: &[Sample], cfg: &TrainConfig) -> Result<EpochLog> {
    check_shapes(net, data)?;
    cfg.validate(net.hidden_layers())?;
    Ok(batch_loss(net, data, cfg, Mode::Exact, None))
}

/// Total loss and its gradient.
pub fn loss_and_grad(net: &TrainNet, data: &[Sample], cfg: &TrainConfig, mode: Mode) -> Result<(f64, TrainNet)> {
    check_shapes(net, data)?;
    cfg.validate(net.hidden_layers())?;
    let mut g = net.zeros_like();
    let log = batch_loss(net, data, cfg, mode, Some(&mut g));
    Ok((log.loss, g))
}

/// Positive pre-threshold membranes per hidden layer and channel, with
/// thresholds at the floor.
fn log_membranes(net: &TrainNet, data: &[Sample], cfg: &TrainConfig) -> Vec<Vec<Vec<f64>>> {
    let mut probe = net.clone();
    for l in &mut probe.layers {
        l.t.iter_mut().for_each(|t| *t = MIN_THRESHOLD);
    }
    let channels: Vec<usize> = probe
        .layers
        .iter()
        .filter(|l| l.spec.kind.is_sparse())
        .map(|l| l.spec.out_channels)
        .collect();
    let mut out: Vec<Vec<Vec<f64>>> = channels.iter().map(|&c| vec![Vec::new(); c]).collect();
    let mut obj = objective(&probe, data, cfg);
    obj.capture = true;
    for s in data {
        let target = s.target();
        let mut state = SeqState::new(probe.layers.len());
        for (x, m) in s.inputs.iter().zip(&s.masks) {
            let fr = [FrameRef { input: x, target: &target, mask: m }];
            let st = run_chunk(&probe, &fr, &mut state, &obj, Mode::Exact, None);
            for (hi, u) in st.captured {
                let c = channels[hi];
                for (i, &v) in u.iter().enumerate() {
                    if v > 0.0 {
                        out[hi][i % c].push(v);
                    }
                }
            }
        }
    }
    out
}

fn clamp_params(net: &mut TrainNet) {
    for l in &mut net.layers {
        l.t.iter_mut().for_each(|t| *t = t.max(MIN_THRESHOLD));
        l.leak
            .iter_mut()
            .for_each(|v| *v = v.clamp(LEAK_RANGE.0, LEAK_RANGE.1));
    }
}

pub fn train(net: &NetworkSpec, data: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut params = TrainNet::from_spec(net)?;
    check_shapes(&params, data)?;
    cfg.validate(params.hidden_layers())?;
    if params.height.max(params.width) > MAX_TRAIN_SIZE
        || params.layers.iter().any(|l| l.spec.out_channels > MAX_TRAIN_CHANNELS)
    {
        return Err(Error::InvalidParameter(format!(
            "training is limited to {MAX_TRAIN_SIZE}x{MAX_TRAIN_SIZE} and {MAX_TRAIN_CHANNELS} channels"
        )));
    }
    if cfg.init_thresholds {
        let init = init_thresholds_from_activations(&log_membranes(&params, data, cfg));
        let mut it = init.into_iter();
        for l in params.layers.iter_mut().filter(|l| l.spec.kind.is_sparse()) {
            l.t = it.next().unwrap_or_default();
        }
        clamp_params(&mut params);
    }
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut g = params.zeros_like();
        let mut row = batch_loss(&params, data, cfg, Mode::Exact, Some(&mut g));
        row.epoch = epoch;
        if !row.loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                message: format!("loss is {} (proxy {}, ls {})", row.loss, row.proxy, row.ls),
            });
        }
        let lr = cfg.learning_rate(epoch);
        for (pl, gl) in params.layers.iter_mut().zip(&g.layers) {
            for ((_, p), (_, gv)) in pl.params_mut().into_iter().zip(gl.params()) {
                for (a, &d) in p.iter_mut().zip(gv.iter()) {
                    if !d.is_finite() {
                        return Err(Error::Divergence {
                            epoch,
                            message: "non-finite gradient".into(),
                        });
                    }
                    *a -= lr * d.clamp(-cfg.grad_clip, cfg.grad_clip);
                }
            }
        }
        clamp_params(&mut params);
        log.push(row);
    }
    let mut final_eval = batch_loss(&params, data, cfg, Mode::Exact, None);
    final_eval.epoch = cfg.epochs;
    Ok(TrainOutcome {
        net: params.to_spec()?,
        params,
        log,
        final_eval,
    })
}

pub fn train_log_csv(log: &[EpochLog], header: Option<&str>) -> String {
    let mut s = header.map(|h| format!("{h}\n")).unwrap_or_default();
    s.push_str("epoch,loss,proxy,ls,mean_neuron_density,mean_pixel_density\n");
    for r in log {
        let _ = writeln!(
            s,
            "{},{:.9e},{:.9e},{:.9e},{:.6},{:.6}",
            r.epoch, r.loss, r.proxy, r.ls, r.mean_neuron_density, r.mean_pixel_density
        );
    }
    s
}

pub fn write_train_log(log: &[EpochLog], header: Option<&str>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, train_log_csv(log, header))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    /// Largest relative error per parameter class that was probed.
    pub max_rel_error: BTreeMap<String, f64>,
    pub probes: usize,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_error.values().copied().fold(0.0, f64::max)
    }
}

/// Compare analytic gradients of the relaxed loss with central differences
/// on up to `per_class` random entries of each parameter class.
pub fn grad_check(
    net: &TrainNet,
    data: &[Sample],
    cfg: &TrainConfig,
    per_class: usize,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let (_, g) = loss_and_grad(net, data, cfg, Mode::Relaxed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_error: BTreeMap::new(),
        probes: 0,
    };
    let loss_at = |n: &TrainNet| batch_loss(n, data, cfg, Mode::Relaxed, None).loss;
    for class in ParamClass::ALL {
        let slots: Vec<(usize, usize)> = net
            .layers
            .iter()
            .enumerate()
            .flat_map(|(li, l)| {
                (0..l.param(class).len()).map(move |i| (li, i))
            })
            .collect();
        if slots.is_empty() {
            continue;
        }
        let mut worst = 0.0f64;
        for _ in 0..per_class.min(slots.len()) {
            let (li, i) = slots[rng.gen_range(0..slots.len())];
            let base = net.layers[li].param(class)[i];
            let mut probe = net.clone();
            probe.layers[li].param_mut(class)[i] = base + eps;
            let up = loss_at(&probe);
            probe.layers[li].param_mut(class)[i] = base - eps;
            let down = loss_at(&probe);
            let numeric = (up - down) / (2.0 * eps);
            let analytic = g.layers[li].param(class)[i];
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
            report.probes += 1;
        }
        report.max_rel_error.insert(class.name().to_string(), worst);
    }
    Ok(report)
}
