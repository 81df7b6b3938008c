//! Cost events recorded by each core while it processes a frame.
//!
//! A trace is the ordered list of what one core did; `costsim` turns it into
//! time and energy. Stream items are numbered per core and per frame in
//! emission order, so `Receive { item }` on core `i` refers to the `item`-th
//! `Emit` of core `i - 1` (or of the camera for core 0).

use serde::{Deserialize, Serialize};

use super::codec::Scheme;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Forward,
    Recurrent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CostOp {
    /// Wait for an upstream item.
    Receive { item: usize },
    /// Unpack a pixel packet: `words` payload words, `entries` ac./sp.
    Decode { scheme: Scheme, words: usize, entries: usize },
    /// One grouped read-modify-write round over `blocks` target pixels.
    StateAccess { blocks: usize },
    /// 8-wide NPE vector instructions.
    Vector { ops: usize },
    /// Threshold evaluation of `pixels` output pixels.
    Fire { pixels: usize, ops: usize },
    /// Send one stream item of `words` words.
    Emit { words: usize, sync: bool },
    Phase(Phase),
}

/// Per-frame traces, indexed `[core]`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameTrace {
    /// Items sent by the camera into core 0.
    pub camera_items: usize,
    pub cores: Vec<Vec<CostOp>>,
}

/// Append a fire record, merging with a directly preceding one.
pub(crate) fn push_fire(ops: &mut Vec<CostOp>, pixels: usize, vec_ops: usize) {
    if let Some(CostOp::Fire { pixels: p, ops: o }) = ops.last_mut() {
        *p += pixels;
        *o += vec_ops;
    } else {
        ops.push(CostOp::Fire { pixels, ops: vec_ops });
    }
}
