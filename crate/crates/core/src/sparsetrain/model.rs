//! Float64 parameters, forward pass and backpropagation through time.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::netspec::{LayerKind, LayerParams, LayerSpec, NetworkSpec};
use crate::tensorcore::{Bf16, Kernel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamClass {
    Weight,
    RecWeight,
    Bias,
    Threshold,
    Leak,
}

impl ParamClass {
    pub const ALL: [ParamClass; 5] = [
        ParamClass::Weight,
        ParamClass::RecWeight,
        ParamClass::Bias,
        ParamClass::Threshold,
        ParamClass::Leak,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamClass::Weight => "weight",
            ParamClass::RecWeight => "rec_weight",
            ParamClass::Bias => "bias",
            ParamClass::Threshold => "threshold",
            ParamClass::Leak => "leak",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainLayer {
    pub spec: LayerSpec,
    /// `k x k x cin x cout`, same order as [`Kernel`].
    pub w: Vec<f64>,
    /// Recurrent kernel; empty when the layer is not recurrent.
    pub r: Vec<f64>,
    pub b: Vec<f64>,
    pub t: Vec<f64>,
    pub leak: Vec<f64>,
}

impl TrainLayer {
    pub fn params_mut(&mut self) -> [(ParamClass, &mut Vec<f64>); 5] {
        [
            (ParamClass::Weight, &mut self.w),
            (ParamClass::RecWeight, &mut self.r),
            (ParamClass::Bias, &mut self.b),
            (ParamClass::Threshold, &mut self.t),
            (ParamClass::Leak, &mut self.leak),
        ]
    }

    pub fn param(&self, class: ParamClass) -> &Vec<f64> {
        match class {
            ParamClass::Weight => &self.w,
            ParamClass::RecWeight => &self.r,
            ParamClass::Bias => &self.b,
            ParamClass::Threshold => &self.t,
            ParamClass::Leak => &self.leak,
        }
    }

    pub fn param_mut(&mut self, class: ParamClass) -> &mut Vec<f64> {
        match class {
            ParamClass::Weight => &mut self.w,
            ParamClass::RecWeight => &mut self.r,
            ParamClass::Bias => &mut self.b,
            ParamClass::Threshold => &mut self.t,
            ParamClass::Leak => &mut self.leak,
        }
    }

    pub fn params(&self) -> [(ParamClass, &Vec<f64>); 5] {
        [
            (ParamClass::Weight, &self.w),
            (ParamClass::RecWeight, &self.r),
            (ParamClass::Bias, &self.b),
            (ParamClass::Threshold, &self.t),
            (ParamClass::Leak, &self.leak),
        ]
    }
}

/// Trainable copy of a network.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainNet {
    pub height: usize,
    pub width: usize,
    pub layers: Vec<TrainLayer>,
}

fn widen(v: &[Bf16]) -> Vec<f64> {
    v.iter().map(|x| x.to_f32() as f64).collect()
}

fn narrow(v: &[f64]) -> Vec<Bf16> {
    v.iter().map(|&x| Bf16::from_f32(x as f32)).collect()
}

impl TrainNet {
    pub fn from_spec(net: &NetworkSpec) -> Result<Self> {
        net.validate()?;
        let mut layers = Vec::with_capacity(net.layers.len());
        for (i, l) in net.layers.iter().enumerate() {
            if l.spec.fused_maxpool {
                return Err(Error::InvalidParameter(format!(
                    "layer {i}: the trainer does not support fused max-pooling"
                )));
            }
            layers.push(TrainLayer {
                spec: l.spec,
                w: widen(l.kernel.data()),
                r: l.rec_kernel.as_ref().map_or(Vec::new(), |k| widen(k.data())),
                b: widen(&l.bias),
                t: widen(&l.thresholds),
                leak: widen(&l.leaks),
            });
        }
        Ok(TrainNet {
            height: net.input_height,
            width: net.input_width,
            layers,
        })
    }

    /// Round to BFloat16 and check the result.
    pub fn to_spec(&self) -> Result<NetworkSpec> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let s = l.spec;
            let rec_kernel = if s.recurrent {
                Some(Kernel::from_bf16(s.kernel, s.out_channels, s.out_channels, narrow(&l.r))?)
            } else {
                None
            };
            layers.push(LayerParams {
                spec: s,
                kernel: Kernel::from_bf16(s.kernel, s.in_channels, s.out_channels, narrow(&l.w))?,
                rec_kernel,
                bias: narrow(&l.b),
                thresholds: narrow(&l.t),
                leaks: narrow(&l.leak),
            });
        }
        let net = NetworkSpec {
            input_height: self.height,
            input_width: self.width,
            layers,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for l in &mut z.layers {
            for (_, v) in l.params_mut() {
                v.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        z
    }

    /// Layers with thresholds, i.e. all but the flow head.
    pub fn hidden_layers(&self) -> usize {
        self.layers.iter().filter(|l| l.spec.kind.is_sparse()).count()
    }
}

/// Shape of the smooth step used for surrogate gradients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Surrogate {
    pub width: f64,
}

impl Surrogate {
    /// `1 / (pi (1 + (pi d / w)^2))`.
    #[inline]
    pub fn grad(&self, d: f64) -> f64 {
        let a = PI * d / self.width;
        1.0 / (PI * (1.0 + a * a))
    }

    /// Antiderivative of [`Self::grad`], centred on one half.
    #[inline]
    pub fn relaxed_step(&self, d: f64) -> f64 {
        0.5 + self.width / (PI * PI) * (PI * d / self.width).atan()
    }
}

/// Exact thresholding forward with surrogate backward, or a smooth forward
/// whose true gradient is what the backward pass computes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Exact,
    Relaxed,
}

/// Loss weights and normalisers shared by every chunk of a batch.
#[derive(Clone, Debug)]
pub(crate) struct Objective {
    pub lambda_s: f64,
    /// One weight per hidden layer.
    pub lambda_i: Vec<f64>,
    pub surrogate: Surrogate,
    /// Sharpness of the softplus replacing ReLU in relaxed mode.
    pub softplus_beta: f64,
    /// Keep each hidden layer's membranes in [`ChunkStats::captured`].
    pub capture: bool,
    /// Masked pixels over the whole batch.
    pub proxy_pixels: f64,
    /// Frames over the whole batch.
    pub frames: f64,
}

/// Carried layer state between frames.
#[derive(Clone, Debug, Default)]
pub(crate) struct SeqState {
    pub membrane: Vec<Option<Vec<f64>>>,
    pub hidden: Vec<Option<Vec<f64>>>,
}

impl SeqState {
    pub fn new(layers: usize) -> Self {
        SeqState {
            membrane: vec![None; layers],
            hidden: vec![None; layers],
        }
    }
}

/// Sums produced by one chunk; the loss parts are already normalised.
#[derive(Clone, Debug, Default)]
pub(crate) struct ChunkStats {
    pub proxy: f64,
    /// `sum_i lambda_i * mean-over-frames sum ReLU(u_i)`, without `lambda_s`.
    pub membrane_term: f64,
    pub nonzero: usize,
    pub neurons: usize,
    pub active_pixels: usize,
    pub pixels: usize,
    /// `(hidden layer, membranes)` per frame when capturing.
    pub captured: Vec<(usize, Vec<f64>)>,
}

/// One frame of supervision.
pub(crate) struct FrameRef<'a> {
    pub input: &'a [f64],
    pub target: &'a [f64],
    pub mask: &'a [bool],
}

/// `acc += conv(x, k)` with zero padding, HWC layout.
fn conv_fwd(acc: &mut [f64], x: &[f64], h: usize, w: usize, cin: usize, cout: usize, kern: &[f64], k: usize) {
    let r = (k / 2) as isize;
    for oy in 0..h {
        for ox in 0..w {
            let o = (oy * w + ox) * cout;
            for ky in 0..k {
                let iy = oy as isize + ky as isize - r;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = ox as isize + kx as isize - r;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let i = (iy as usize * w + ix as usize) * cin;
                    for ci in 0..cin {
                        let a = x[i + ci];
                        if a == 0.0 {
                            continue;
                        }
                        let kt = ((ky * k + kx) * cin + ci) * cout;
                        for co in 0..cout {
                            acc[o + co] += a * kern[kt + co];
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of `conv(x, k)` given the output gradient `g`.
#[allow(clippy::too_many_arguments)]
fn conv_bwd(
    g: &[f64],
    x: &[f64],
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    kern: &[f64],
    k: usize,
    gk: &mut [f64],
    mut gx: Option<&mut [f64]>,
) {
    let r = (k / 2) as isize;
    for oy in 0..h {
        for ox in 0..w {
            let o = (oy * w + ox) * cout;
            let go = &g[o..o + cout];
            if go.iter().all(|&v| v == 0.0) {
                continue;
            }
            for ky in 0..k {
                let iy = oy as isize + ky as isize - r;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = ox as isize + kx as isize - r;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let i = (iy as usize * w + ix as usize) * cin;
                    for ci in 0..cin {
                        let kt = ((ky * k + kx) * cin + ci) * cout;
                        let a = x[i + ci];
                        let mut s = 0.0;
                        for co in 0..cout {
                            gk[kt + co] += a * go[co];
                            s += kern[kt + co] * go[co];
                        }
                        if let Some(gx) = gx.as_deref_mut() {
                            gx[i + ci] += s;
                        }
                    }
                }
            }
        }
    }
}

#[derive(Default)]
struct Cache {
    x: Vec<f64>,
    hprev: Vec<f64>,
    u: Vec<f64>,
    s: Vec<f64>,
}

fn softplus(x: f64, beta: f64) -> f64 {
    let z = beta * x;
    (if z > 30.0 { z } else { z.exp().ln_1p() }) / beta
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Forward a chunk of frames, updating `state`, and optionally accumulate
/// gradients into `grad`. Gradients do not flow into frames before the chunk.
pub(crate) fn run_chunk(
    net: &TrainNet,
    frames: &[FrameRef<'_>],
    state: &mut SeqState,
    obj: &Objective,
    mode: Mode,
    mut grad: Option<&mut TrainNet>,
) -> ChunkStats {
    let (h, w) = (net.height, net.width);
    let hw = h * w;
    let nl = net.layers.len();
    let sur = obj.surrogate;
    let mut stats = ChunkStats::default();
    let mut caches: Vec<Vec<Cache>> = Vec::with_capacity(frames.len());
    let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(frames.len());

    for fr in frames {
        let mut x = fr.input.to_vec();
        let mut fc = Vec::with_capacity(nl);
        let mut hidden_idx = 0;
        for (li, l) in net.layers.iter().enumerate() {
            let s = l.spec;
            let (cin, cout) = (s.in_channels, s.out_channels);
            let mut c = Cache::default();
            let mut u = vec![0.0; hw * cout];
            if s.kind == LayerKind::ConvLif {
                if let Some(m) = &state.membrane[li] {
                    u.copy_from_slice(m);
                }
            }
            if s.recurrent {
                c.hprev = state.hidden[li].clone().unwrap_or_else(|| vec![0.0; hw * cout]);
                conv_fwd(&mut u, &c.hprev, h, w, cout, cout, &l.r, s.kernel);
            }
            conv_fwd(&mut u, &x, h, w, cin, cout, &l.w, s.kernel);
            if !l.b.is_empty() {
                for px in u.chunks_mut(cout) {
                    for (v, b) in px.iter_mut().zip(&l.b) {
                        *v += b;
                    }
                }
            }
            let y: Vec<f64> = match s.kind {
                LayerKind::FlowHead => u.iter().map(|&z| z / (1.0 + z.abs())).collect(),
                kind => {
                    let mut sv = vec![0.0; u.len()];
                    let mut y = vec![0.0; u.len()];
                    let mut v_next = vec![0.0; u.len()];
                    let lam_i = obj.lambda_i[hidden_idx];
                    let mut relu = 0.0;
                    for (i, &ui) in u.iter().enumerate() {
                        let ch = i % cout;
                        let d = ui - l.t[ch];
                        let st = match mode {
                            Mode::Exact => (d > 0.0) as u8 as f64,
                            Mode::Relaxed => sur.relaxed_step(d),
                        };
                        sv[i] = st;
                        relu += match mode {
                            Mode::Exact => ui.max(0.0),
                            Mode::Relaxed => softplus(ui, obj.softplus_beta),
                        };
                        if kind == LayerKind::ConvLif {
                            y[i] = st;
                            v_next[i] = l.leak[ch] * ui * (1.0 - st);
                        } else {
                            y[i] = ui * st;
                        }
                    }
                    stats.membrane_term += lam_i * relu / obj.frames;
                    if kind == LayerKind::ConvLif {
                        state.membrane[li] = Some(v_next);
                    }
                    stats.nonzero += y.iter().filter(|&&v| v != 0.0).count();
                    stats.neurons += y.len();
                    stats.active_pixels +=
                        y.chunks(cout).filter(|px| px.iter().any(|&v| v != 0.0)).count();
                    stats.pixels += hw;
                    if obj.capture {
                        stats.captured.push((hidden_idx, u.clone()));
                    }
                    hidden_idx += 1;
                    c.s = sv;
                    y
                }
            };
            if s.recurrent {
                state.hidden[li] = Some(y.clone());
            }
            c.x = std::mem::replace(&mut x, y);
            c.u = u;
            fc.push(c);
        }
        for i in 0..hw {
            if fr.mask[i] {
                for k in 0..2 {
                    let e = x[2 * i + k] - fr.target[2 * i + k];
                    stats.proxy += e * e / obj.proxy_pixels;
                }
            }
        }
        outputs.push(x);
        caches.push(fc);
    }

    let Some(grad) = grad.as_deref_mut() else {
        return stats;
    };
    let mut g_hidden: Vec<Option<Vec<f64>>> = vec![None; nl];
    let mut g_mem: Vec<Option<Vec<f64>>> = vec![None; nl];
    let hidden_index: Vec<usize> = {
        let mut n = 0;
        net.layers
            .iter()
            .map(|l| {
                let i = n;
                if l.spec.kind.is_sparse() {
                    n += 1;
                }
                i
            })
            .collect()
    };
    for f in (0..frames.len()).rev() {
        let fr = &frames[f];
        let mut g = vec![0.0; hw * 2];
        for i in 0..hw {
            if fr.mask[i] {
                for k in 0..2 {
                    g[2 * i + k] = 2.0 * (outputs[f][2 * i + k] - fr.target[2 * i + k]) / obj.proxy_pixels;
                }
            }
        }
        for li in (0..nl).rev() {
            let l = &net.layers[li];
            let gl = &mut grad.layers[li];
            let s = l.spec;
            let (cin, cout) = (s.in_channels, s.out_channels);
            let c = &caches[f][li];
            let mut gu = vec![0.0; hw * cout];
            match s.kind {
                LayerKind::FlowHead => {
                    for (i, &z) in c.u.iter().enumerate() {
                        let d = 1.0 + z.abs();
                        gu[i] = g[i] / (d * d);
                    }
                }
                kind => {
                    let coef = obj.lambda_s * obj.lambda_i[hidden_index[li]] / obj.frames;
                    let gh = g_hidden[li].take();
                    let gm = g_mem[li].take();
                    for i in 0..gu.len() {
                        let ch = i % cout;
                        let ui = c.u[i];
                        let st = c.s[i];
                        let sg = sur.grad(ui - l.t[ch]);
                        let gy = g[i] + gh.as_ref().map_or(0.0, |v| v[i]);
                        let relu_grad = match mode {
                            Mode::Exact => (ui > 0.0) as u8 as f64,
                            Mode::Relaxed => sigmoid(obj.softplus_beta * ui),
                        };
                        let mut gui = coef * relu_grad;
                        if kind == LayerKind::ConvLif {
                            let gv = gm.as_ref().map_or(0.0, |v| v[i]);
                            let lam = l.leak[ch];
                            let gs = gy - gv * lam * ui;
                            gui += gv * lam * (1.0 - st) + gs * sg;
                            gl.t[ch] -= gs * sg;
                            gl.leak[ch] += gv * ui * (1.0 - st);
                        } else {
                            gui += gy * (st + ui * sg);
                            gl.t[ch] -= gy * ui * sg;
                        }
                        gu[i] = gui;
                    }
                    if kind == LayerKind::ConvLif {
                        g_mem[li] = Some(gu.clone());
                    }
                }
            }
            if !gl.b.is_empty() {
                for px in gu.chunks(cout) {
                    for (b, v) in gl.b.iter_mut().zip(px) {
                        *b += v;
                    }
                }
            }
            if s.recurrent {
                let mut gprev = vec![0.0; hw * cout];
                conv_bwd(&gu, &c.hprev, h, w, cout, cout, &l.r, s.kernel, &mut gl.r, Some(&mut gprev));
                g_hidden[li] = Some(gprev);
            }
            let mut gx = if li > 0 { vec![0.0; hw * cin] } else { Vec::new() };
            conv_bwd(
                &gu,
                &c.x,
                h,
                w,
                cin,
                cout,
                &l.w,
                s.kernel,
                &mut gl.w,
                (li > 0).then_some(gx.as_mut_slice()),
            );
            g = gx;
        }
    }
    stats
}
