//! Dense layer-by-layer composition of a network over a frame sequence.
//!
//! This is the oracle for the engine: same operators, same accumulation
//! order, no event ordering.

use crate::error::Result;
use crate::netspec::{conv_layer_forward, LayerState};
use crate::netspec::NetworkSpec;
use crate::tensorcore::Tensor;

/// Outputs of every layer for every frame, indexed `[frame][layer]`.
/// Layer states start at zero and persist across the sequence.
pub fn reference_run(inputs: &[Tensor], net: &NetworkSpec) -> Result<Vec<Vec<Tensor>>> {
    net.validate()?;
    let mut states = vec![LayerState::default(); net.layers.len()];
    let mut out = Vec::with_capacity(inputs.len());
    for x in inputs {
        let mut acts = Vec::with_capacity(net.layers.len());
        let mut cur = x.clone();
        for (layer, state) in net.layers.iter().zip(states.iter_mut()) {
            cur = conv_layer_forward(layer, &cur, state)?;
            acts.push(cur.clone());
        }
        out.push(acts);
    }
    Ok(out)
}

/// Flow output per frame.
pub fn reference_flow(inputs: &[Tensor], net: &NetworkSpec) -> Result<Vec<Tensor>> {
    Ok(reference_run(inputs, net)?
        .into_iter()
        .map(|mut layers| layers.pop().expect("network has layers"))
        .collect())
}
