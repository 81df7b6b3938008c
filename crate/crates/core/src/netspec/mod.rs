//! Network description: layer descriptors, neuron models and FireNet.
//!
//! A network is a cascade of weighted stages, one per simulated core. Hidden
//! stages are either FATReLU convolutions (ANN) or LIF convolutions (SNN);
//! a stage flagged `recurrent` is a two-convolution recurrent block whose
//! recurrent kernel reads the block's own previous output. The final stage
//! is a dense 1x1 flow head with Softsign.

mod io;
mod layers;

pub use io::{from_bytes, load_network, save_network, to_bytes, FORMAT_VERSION, MAGIC};
pub use layers::{conv_layer_forward, lif_fire, lif_step, rnn_block_forward, LayerState};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensorcore::{check_thresholds, Bf16, Kernel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    ConvFatrelu,
    ConvLif,
    FlowHead,
}

impl LayerKind {
    pub fn code(self) -> u8 {
        match self {
            LayerKind::ConvFatrelu => 0,
            LayerKind::ConvLif => 1,
            LayerKind::FlowHead => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(LayerKind::ConvFatrelu),
            1 => Some(LayerKind::ConvLif),
            2 => Some(LayerKind::FlowHead),
            _ => None,
        }
    }

    /// Whether the layer's output is thresholded (and so counts toward sparsity).
    pub fn is_sparse(self) -> bool {
        !matches!(self, LayerKind::FlowHead)
    }
}

/// Which family a network belongs to, decided by its hidden layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkKind {
    Ann,
    Snn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub has_bias: bool,
    pub recurrent: bool,
    pub fused_maxpool: bool,
}

/// One stage with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub spec: LayerSpec,
    pub kernel: Kernel,
    /// `k x k x cout x cout`, present iff `spec.recurrent`.
    pub rec_kernel: Option<Kernel>,
    /// Empty when the layer has no bias.
    pub bias: Vec<Bf16>,
    /// FATReLU thresholds or LIF firing thresholds; empty for the flow head.
    pub thresholds: Vec<Bf16>,
    /// Per-channel multiplicative leak in (0, 1); LIF layers only.
    pub leaks: Vec<Bf16>,
}

impl LayerParams {
    pub fn parameter_count(&self) -> usize {
        self.kernel.data().len()
            + self.rec_kernel.as_ref().map_or(0, |k| k.data().len())
            + self.bias.len()
            + self.thresholds.len()
            + self.leaks.len()
    }

    /// Bias value for channel `c`, zero when the layer has none.
    #[inline]
    pub fn bias_at(&self, c: usize) -> Bf16 {
        self.bias.get(c).copied().unwrap_or(Bf16::ZERO)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    /// Declared input resolution. Networks are fully convolutional, so
    /// other resolutions are accepted at run time.
    pub input_height: usize,
    pub input_width: usize,
    pub layers: Vec<LayerParams>,
}

/// Number of input channels: one per camera polarity.
pub const INPUT_CHANNELS: usize = 2;

/// Number of flow components produced by the head.
pub const FLOW_CHANNELS: usize = 2;

impl NetworkSpec {
    pub fn kind(&self) -> NetworkKind {
        if self
            .layers
            .iter()
            .any(|l| l.spec.kind == LayerKind::ConvLif)
        {
            NetworkKind::Snn
        } else {
            NetworkKind::Ann
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(LayerParams::parameter_count).sum()
    }

    /// Spatial size of each stage's output for a given input size.
    pub fn output_sizes(&self, height: usize, width: usize) -> Result<Vec<(usize, usize)>> {
        let (mut h, mut w) = (height, width);
        let mut sizes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.spec.fused_maxpool {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::Shape(format!(
                        "layer {i} max-pools a {h}x{w} map; size must be even"
                    )));
                }
                h /= 2;
                w /= 2;
            }
            sizes.push((h, w));
        }
        Ok(sizes)
    }

    /// Check every structural and parameter invariant.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Invariant("network has no layers".into()));
        }
        let last = self.layers.len() - 1;
        let mut hidden_kind: Option<LayerKind> = None;
        let mut channels = INPUT_CHANNELS;
        for (i, layer) in self.layers.iter().enumerate() {
            validate_layer(i, layer)?;
            let s = &layer.spec;
            if s.in_channels != channels {
                return Err(Error::Invariant(format!(
                    "layer {i} expects {} input channels but receives {channels}",
                    s.in_channels
                )));
            }
            channels = s.out_channels;
            match s.kind {
                LayerKind::FlowHead => {
                    if i != last {
                        return Err(Error::Invariant(format!(
                            "flow head at layer {i} must be the last stage"
                        )));
                    }
                }
                kind => {
                    if i == last {
                        return Err(Error::Invariant("last stage must be the flow head".into()));
                    }
                    match hidden_kind {
                        None => hidden_kind = Some(kind),
                        Some(k) if k != kind => {
                            return Err(Error::Invariant(format!(
                                "layer {i} mixes {kind:?} into a {k:?} network"
                            )))
                        }
                        _ => {}
                    }
                }
            }
        }
        self.output_sizes(self.input_height, self.input_width)?;
        Ok(())
    }

    /// True when the topology is the 8-stage FireNet cascade.
    pub fn is_firenet(&self) -> bool {
        let rec: Vec<bool> = self.layers.iter().map(|l| l.spec.recurrent).collect();
        self.layers.len() == 8
            && rec == [false, true, false, false, true, false, false, false]
            && self.layers[..7]
                .iter()
                .all(|l| l.spec.kernel == 3 && l.spec.kind.is_sparse())
            && self.layers[7].spec.kind == LayerKind::FlowHead
    }
}

fn validate_layer(i: usize, layer: &LayerParams) -> Result<()> {
    let s = &layer.spec;
    let bad = |m: String| Err(Error::Invariant(format!("layer {i}: {m}")));
    if s.kernel % 2 == 0 || s.kernel == 0 {
        return bad(format!("kernel size {} must be odd", s.kernel));
    }
    if s.in_channels == 0 || s.out_channels == 0 {
        return bad("channel counts must be positive".into());
    }
    if layer.kernel.size() != s.kernel
        || layer.kernel.cin() != s.in_channels
        || layer.kernel.cout() != s.out_channels
    {
        return bad("kernel shape does not match descriptor".into());
    }
    match (&layer.rec_kernel, s.recurrent) {
        (Some(k), true) => {
            if k.size() != s.kernel || k.cin() != s.out_channels || k.cout() != s.out_channels {
                return bad("recurrent kernel must be k x k x cout x cout".into());
            }
        }
        (None, false) => {}
        _ => return bad("recurrent kernel presence does not match the recurrent flag".into()),
    }
    if s.recurrent && s.fused_maxpool {
        return bad("a recurrent block cannot fuse max-pooling".into());
    }
    let want_bias = if s.has_bias { s.out_channels } else { 0 };
    if layer.bias.len() != want_bias {
        return bad(format!("expected {want_bias} bias values, got {}", layer.bias.len()));
    }
    match s.kind {
        LayerKind::FlowHead => {
            if s.kernel != 1 || s.out_channels != FLOW_CHANNELS {
                return bad("flow head must be 1x1 with 2 outputs".into());
            }
            if s.recurrent || s.fused_maxpool {
                return bad("flow head cannot be recurrent or pooled".into());
            }
            if !layer.thresholds.is_empty() || !layer.leaks.is_empty() {
                return bad("flow head is dense and carries no thresholds or leaks".into());
            }
        }
        LayerKind::ConvFatrelu | LayerKind::ConvLif => {
            if layer.thresholds.len() != s.out_channels {
                return bad("one threshold per output channel required".into());
            }
            check_thresholds(&layer.thresholds)
                .map_err(|e| Error::Invariant(format!("layer {i}: {e}")))?;
            if s.kind == LayerKind::ConvLif {
                if s.has_bias {
                    return bad("LIF layers have zero biases".into());
                }
                if layer.leaks.len() != s.out_channels {
                    return bad("one leak per output channel required".into());
                }
                for (c, l) in layer.leaks.iter().enumerate() {
                    let v = l.to_f32();
                    if !(v > 0.0 && v < 1.0) {
                        return bad(format!("leak for channel {c} must lie in (0, 1), got {v}"));
                    }
                }
            } else if !layer.leaks.is_empty() {
                return bad("FATReLU layers carry no leaks".into());
            }
        }
    }
    Ok(())
}

/// Shape parameters for building a FireNet-style cascade.
#[derive(Clone, Copy, Debug)]
pub struct FireNetShape {
    pub kind: NetworkKind,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl FireNetShape {
    pub fn full(kind: NetworkKind) -> Self {
        FireNetShape {
            kind,
            channels: 32,
            height: 56,
            width: 56,
        }
    }
}

/// Stage descriptors of FireNet: input conv, recurrent block, two convs,
/// recurrent block, two convs, flow head.
pub fn firenet_layout(kind: NetworkKind, channels: usize) -> Vec<LayerSpec> {
    let hidden = match kind {
        NetworkKind::Ann => LayerKind::ConvFatrelu,
        NetworkKind::Snn => LayerKind::ConvLif,
    };
    let has_bias = kind == NetworkKind::Ann;
    let mut layers = Vec::with_capacity(8);
    for (i, recurrent) in [false, true, false, false, true, false, false]
        .into_iter()
        .enumerate()
    {
        layers.push(LayerSpec {
            kind: hidden,
            kernel: 3,
            in_channels: if i == 0 { INPUT_CHANNELS } else { channels },
            out_channels: channels,
            has_bias,
            recurrent,
            fused_maxpool: false,
        });
    }
    layers.push(LayerSpec {
        kind: LayerKind::FlowHead,
        kernel: 1,
        in_channels: channels,
        out_channels: FLOW_CHANNELS,
        has_bias: true,
        recurrent: false,
        fused_maxpool: false,
    });
    layers
}

/// Parameter initialisation ranges for [`random_network`].
#[derive(Clone, Copy, Debug)]
pub struct InitRanges {
    /// Weights are uniform in `±gain / sqrt(k * k * cin)`.
    pub weight_gain: f32,
    pub bias: (f32, f32),
    pub threshold: (f32, f32),
    pub leak: (f32, f32),
}

impl Default for InitRanges {
    fn default() -> Self {
        InitRanges {
            weight_gain: 1.5,
            bias: (-0.1, 0.1),
            threshold: (0.05, 0.3),
            leak: (0.3, 0.9),
        }
    }
}

/// Random parameters for the given descriptors; deterministic per seed.
pub fn random_network(
    layout: &[LayerSpec],
    height: usize,
    width: usize,
    init: InitRanges,
    seed: u64,
) -> Result<NetworkSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(layout.len());
    for s in layout {
        let scale = init.weight_gain / ((s.kernel * s.kernel * s.in_channels) as f32).sqrt();
        let mut draw_kernel = |cin: usize| {
            let n = s.kernel * s.kernel * cin * s.out_channels;
            let vals: Vec<f32> = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
            Kernel::from_f32(s.kernel, cin, s.out_channels, &vals)
        };
        let kernel = draw_kernel(s.in_channels)?;
        let rec_kernel = if s.recurrent {
            Some(draw_kernel(s.out_channels)?)
        } else {
            None
        };
        let uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f32, f32), n: usize| -> Vec<Bf16> {
            (0..n).map(|_| Bf16::from_f32(rng.gen_range(lo..hi))).collect()
        };
        let bias = if s.has_bias {
            uniform(&mut rng, init.bias, s.out_channels)
        } else {
            Vec::new()
        };
        let thresholds = if s.kind.is_sparse() {
            uniform(&mut rng, init.threshold, s.out_channels)
        } else {
            Vec::new()
        };
        let leaks = if s.kind == LayerKind::ConvLif {
            uniform(&mut rng, init.leak, s.out_channels)
        } else {
            Vec::new()
        };
        layers.push(LayerParams {
            spec: *s,
            kernel,
            rec_kernel,
            bias,
            thresholds,
            leaks,
        });
    }
    let net = NetworkSpec {
        input_height: height,
        input_width: width,
        layers,
    };
    net.validate()?;
    Ok(net)
}

/// Randomly initialised FireNet.
pub fn firenet(shape: FireNetShape, seed: u64) -> Result<NetworkSpec> {
    random_network(
        &firenet_layout(shape.kind, shape.channels),
        shape.height,
        shape.width,
        InitRanges::default(),
        seed,
    )
}
