//! Dense per-layer semantics, frame by frame.
//!
//! These are the model definitions the engine must reproduce. They are
//! written with whole-tensor operators from `tensorcore` and keep no notion
//! of event order beyond the fixed accumulation order of `conv_accumulate`.

use super::{LayerKind, LayerParams};
use crate::error::{Error, Result};
use crate::tensorcore::{
    add_bias, conv_accumulate, dense_conv2d, fatrelu, max_pool2x2, softsign, Bf16, Tensor,
};

/// Event generation for one LIF neuron given its integrated membrane `u`.
///
/// Fires and resets to zero when `u > threshold`; otherwise leaks once.
#[inline]
pub fn lif_fire(u: Bf16, leak: Bf16, threshold: Bf16) -> (Bf16, bool) {
    if u.gt(threshold) {
        (Bf16::ZERO, true)
    } else {
        (leak.mul(u), false)
    }
}

/// One LIF update: integrate `current` into `v`, then fire or leak.
pub fn lif_step(v: Bf16, current: Bf16, leak: Bf16, threshold: Bf16) -> Result<(Bf16, bool)> {
    let l = leak.to_f32();
    if !(l > 0.0 && l < 1.0) {
        return Err(Error::InvalidParameter(format!("leak must lie in (0, 1), got {l}")));
    }
    if !(threshold.to_f32() > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold must be > 0, got {threshold}"
        )));
    }
    Ok(lif_fire(v.add(current), leak, threshold))
}

/// State a layer carries from one frame to the next.
#[derive(Clone, Debug, Default)]
pub struct LayerState {
    /// LIF membranes, `H x W x C` at the layer's pre-pooling resolution.
    pub membrane: Option<Tensor>,
    /// Previous output of a recurrent block.
    pub hidden: Option<Tensor>,
}

impl LayerState {
    pub fn reset(&mut self) {
        self.membrane = None;
        self.hidden = None;
    }
}

/// Run one layer on one frame, updating its persistent state.
pub fn conv_layer_forward(
    layer: &LayerParams,
    x: &Tensor,
    state: &mut LayerState,
) -> Result<Tensor> {
    let s = &layer.spec;
    if x.channels() != s.in_channels {
        return Err(Error::Shape(format!(
            "layer expects {} channels, input has {}",
            s.in_channels,
            x.channels()
        )));
    }
    let (h, w) = (x.height(), x.width());
    match s.kind {
        LayerKind::FlowHead => {
            let z = dense_conv2d(x, &layer.kernel, &layer.bias)?;
            Ok(softsign(&z))
        }
        LayerKind::ConvFatrelu => {
            let mut acc = Tensor::zeros(h, w, s.out_channels);
            if let Some(rec) = &layer.rec_kernel {
                let hidden = state
                    .hidden
                    .get_or_insert_with(|| Tensor::zeros(h, w, s.out_channels));
                conv_accumulate(&mut acc, hidden, rec)?;
            }
            conv_accumulate(&mut acc, x, &layer.kernel)?;
            if s.has_bias {
                add_bias(&mut acc, &layer.bias)?;
            }
            let act = fatrelu(&acc, &layer.thresholds)?;
            if s.recurrent {
                state.hidden = Some(act.clone());
            }
            if s.fused_maxpool {
                max_pool2x2(&act)
            } else {
                Ok(act)
            }
        }
        LayerKind::ConvLif => {
            let mut acc = match state.membrane.take() {
                Some(m) if m.shape() == (h, w, s.out_channels) => m,
                Some(m) => {
                    return Err(Error::Shape(format!(
                        "membrane {:?} does not match input {h}x{w}",
                        m.shape()
                    )))
                }
                None => Tensor::zeros(h, w, s.out_channels),
            };
            if let Some(rec) = &layer.rec_kernel {
                let hidden = state
                    .hidden
                    .get_or_insert_with(|| Tensor::zeros(h, w, s.out_channels));
                conv_accumulate(&mut acc, hidden, rec)?;
            }
            conv_accumulate(&mut acc, x, &layer.kernel)?;
            let mut spikes = Tensor::zeros(h, w, s.out_channels);
            for y in 0..h {
                for xx in 0..w {
                    for c in 0..s.out_channels {
                        let (v, fired) =
                            lif_fire(acc.get(y, xx, c), layer.leaks[c], layer.thresholds[c]);
                        acc.set(y, xx, c, v);
                        if fired {
                            spikes.set(y, xx, c, Bf16::ONE);
                        }
                    }
                }
            }
            state.membrane = Some(acc);
            if s.recurrent {
                state.hidden = Some(spikes.clone());
            }
            if s.fused_maxpool {
                max_pool2x2(&spikes)
            } else {
                Ok(spikes)
            }
        }
    }
}

/// Recurrent block: `out = act(conv_fwd(x) + conv_rec(h_prev))`, `h_new = out`.
///
/// For a LIF block `membrane` holds the persistent voltages and is updated in
/// place; the recurrent contribution is integrated before the forward one.
pub fn rnn_block_forward(
    layer: &LayerParams,
    x: &Tensor,
    h_prev: &Tensor,
    membrane: Option<&mut Tensor>,
) -> Result<(Tensor, Tensor)> {
    if !layer.spec.recurrent {
        return Err(Error::InvalidParameter("layer is not a recurrent block".into()));
    }
    if (h_prev.height(), h_prev.width()) != (x.height(), x.width())
        || h_prev.channels() != layer.spec.out_channels
    {
        return Err(Error::Shape(format!(
            "hidden state {:?} is not congruent with input {:?}",
            h_prev.shape(),
            x.shape()
        )));
    }
    let mut state = LayerState {
        membrane: membrane.as_ref().map(|m| (**m).clone()),
        hidden: Some(h_prev.clone()),
    };
    let out = conv_layer_forward(layer, x, &mut state)?;
    if let (Some(dst), Some(m)) = (membrane, state.membrane) {
        *dst = m;
    }
    let h_new = state.hidden.expect("recurrent block keeps its hidden state");
    Ok((out, h_new))
}
