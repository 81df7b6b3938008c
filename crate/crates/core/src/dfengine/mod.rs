//! Event-driven depth-first convolution on a cascade of simulated cores.
//!
//! Each layer of the network runs on its own core. A core consumes the
//! row-major sorted pixel stream of its upstream neighbour, integrates each
//! pixel into the neuron states it fans out to, and fires an output pixel as
//! soon as no later input can reach it. ANN layers without recurrence keep
//! only `K + 1` rows of partial sums; LIF and recurrent layers keep the whole
//! `H x W x C` state. After the end-of-frame sync has been forwarded, a
//! recurrent core convolves its fresh output into the next frame's state.

pub mod codec;
pub mod core;
pub mod trace;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::mpsc;

pub use self::codec::{PixelPacket, Scheme, StreamItem};
pub use self::core::{ActRecord, Core, CoreOptions, RowBuffer, GROUP_SIZE, NPE_LANES};
pub use self::trace::{CostOp, FrameTrace, Phase};

use crate::error::{Error, Result};
use crate::evio::EventFrame;
use crate::netspec::{LayerKind, LayerParams, NetworkSpec};
use crate::tensorcore::{Bf16, Tensor};

/// Data memory per core in the small configuration.
pub const DEFAULT_MEMORY_BUDGET: usize = 256 * 1024;
/// Data memory per core in the large configuration.
pub const LARGE_MEMORY_BUDGET: usize = 2 * 1024 * 1024;

#[derive(Clone, Debug)]
pub struct EngineConfig {
    /// Encoding of spike links. ANN links and the flow output always use AER.
    pub scheme: Scheme,
    /// Run each core on its own thread.
    pub threaded: bool,
    /// Keep every layer's output tensor, not just the flow.
    pub capture_layers: bool,
    pub log_activations: bool,
    /// Bytes of data memory per core.
    pub memory_budget: usize,
    /// Prescribed outputs, indexed `[frame][core]`. See [`Core::prescribe`].
    pub prescribed: Option<Vec<Vec<Option<Tensor>>>>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            scheme: Scheme::Bitmask,
            threaded: false,
            capture_layers: false,
            log_activations: false,
            memory_budget: DEFAULT_MEMORY_BUDGET,
            prescribed: None,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    /// Flow head output per frame.
    pub flow: Vec<Tensor>,
    /// `[frame][layer]`, filled when `capture_layers` is set.
    pub layers: Vec<Vec<Tensor>>,
    pub traces: Vec<FrameTrace>,
    pub activations: Vec<ActRecord>,
    /// Modeled bytes of data memory per core.
    pub memory: Vec<usize>,
    /// Peak resident rows per core, `None` for full-state cores.
    pub max_resident_rows: Vec<Option<usize>>,
}

/// Bytes of data memory a layer needs at input resolution `h x w`.
///
/// Weights, biases, thresholds and leaks at two bytes each, plus state:
/// `K + 1` rows for feed-forward ANN layers, the full map for LIF and
/// recurrent layers. A recurrent ANN block also keeps a `K`-row line buffer
/// of its hidden activations, enough to run the recurrent convolution in
/// place over the released state; a recurrent LIF block keeps its hidden
/// spikes as bitmask words. Fused pooling adds one pooled row.
pub fn layer_memory_bytes(layer: &LayerParams, h: usize, w: usize) -> usize {
    let s = &layer.spec;
    let c = s.out_channels;
    let params = layer.parameter_count();
    let full = s.kind == LayerKind::ConvLif || s.recurrent;
    let states = if full { h * w * c } else { (s.kernel + 1) * w * c };
    let hidden_bytes = match (s.recurrent, s.kind) {
        (false, _) => 0,
        (true, LayerKind::ConvLif) => h * w * c.div_ceil(32) * 4,
        (true, _) => s.kernel * w * c * 2,
    };
    let pool = if s.fused_maxpool { (w / 2) * c } else { 0 };
    2 * (params + states + pool) + hidden_bytes
}

/// Camera input as a sorted pixel stream: per pixel, one AER word per
/// nonzero channel, then the sync.
pub fn input_stream(frame: &Tensor) -> Result<Vec<StreamItem>> {
    let mut items = Vec::new();
    for y in 0..frame.height() {
        for x in 0..frame.width() {
            let acts: Vec<(u16, Bf16)> = frame
                .pixel(y, x)
                .iter()
                .enumerate()
                .filter(|(_, v)| !v.is_zero())
                .map(|(c, &v)| (c as u16, v))
                .collect();
            if !acts.is_empty() {
                items.push(StreamItem::Pixel(PixelPacket {
                    y: y as u16,
                    x: x as u16,
                    words: codec::encode_events(&acts, Scheme::Aer, frame.channels())?,
                }));
            }
        }
    }
    items.push(StreamItem::Sync);
    Ok(items)
}

pub fn frames_to_tensors(frames: &[EventFrame]) -> Vec<Tensor> {
    frames.iter().map(EventFrame::to_tensor).collect()
}

fn build_cores(inputs: &[Tensor], net: &NetworkSpec, cfg: &EngineConfig) -> Result<Vec<Core>> {
    net.validate()?;
    let Some(first) = inputs.first() else {
        return Ok(Vec::new());
    };
    let (h, w) = (first.height(), first.width());
    for t in inputs {
        if (t.height(), t.width(), t.channels()) != (h, w, net.layers[0].spec.in_channels) {
            return Err(Error::Shape(format!(
                "frame {:?} differs from the first frame {h}x{w} or the input layer",
                t.shape()
            )));
        }
    }
    let sizes = net.output_sizes(h, w)?;
    let mut cores = Vec::with_capacity(net.layers.len());
    let mut in_size = (h, w);
    let mut in_scheme = Scheme::Aer;
    let mut binary_input = false;
    for (i, layer) in net.layers.iter().enumerate() {
        let need = layer_memory_bytes(layer, in_size.0, in_size.1);
        if need > cfg.memory_budget {
            return Err(Error::MemoryBudget {
                core: i,
                needed: need,
                budget: cfg.memory_budget,
            });
        }
        let spiking = layer.spec.kind == LayerKind::ConvLif;
        let out_scheme = if spiking { cfg.scheme } else { Scheme::Aer };
        cores.push(Core::new(
            i,
            layer.clone(),
            in_size.0,
            in_size.1,
            CoreOptions {
                in_scheme,
                out_scheme,
                binary_input,
                log_activations: cfg.log_activations,
            },
        ));
        in_size = sizes[i];
        in_scheme = out_scheme;
        binary_input = spiking;
    }
    Ok(cores)
}

/// Per-core results of one frame.
type FrameResult = (Tensor, Vec<CostOp>, Vec<ActRecord>);

fn apply_prescribed(core: &mut Core, cfg: &EngineConfig, frame: usize) -> Result<()> {
    let p = cfg
        .prescribed
        .as_ref()
        .and_then(|p| p.get(frame))
        .and_then(|f| f.get(core.index()))
        .cloned()
        .flatten();
    core.prescribe(p)
}

/// Run a single core over every frame's input stream.
fn drive_core(
    core: &mut Core,
    cfg: &EngineConfig,
    frames: impl Iterator<Item = Result<StreamItem>>,
    mut sink: impl FnMut(StreamItem) -> Result<()>,
) -> Result<Vec<FrameResult>> {
    let mut results = Vec::new();
    let mut out = Vec::new();
    apply_prescribed(core, cfg, 0)?;
    for item in frames {
        let item = item?;
        let sync = item == StreamItem::Sync;
        core.receive(&item, &mut out)?;
        for o in out.drain(..) {
            sink(o)?;
        }
        if sync {
            results.push(core.take_frame());
            apply_prescribed(core, cfg, results.len())?;
        }
    }
    Ok(results)
}

/// Simulate the network over a sequence of input frames.
///
/// Numeric results do not depend on `threaded`; neither do traces.
pub fn run_network(inputs: &[Tensor], net: &NetworkSpec, cfg: &EngineConfig) -> Result<RunOutput> {
    let mut cores = build_cores(inputs, net, cfg)?;
    if cores.is_empty() {
        return Ok(RunOutput::default());
    }
    let (h, w) = (inputs[0].height(), inputs[0].width());
    let memory: Vec<usize> = {
        let sizes = net.output_sizes(h, w)?;
        let mut in_size = (h, w);
        net.layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let m = layer_memory_bytes(l, in_size.0, in_size.1);
                in_size = sizes[i];
                m
            })
            .collect()
    };
    let mut camera = Vec::with_capacity(inputs.len());
    let mut streams = Vec::new();
    for t in inputs {
        let s = input_stream(t)?;
        camera.push(s.len());
        streams.extend(s);
    }

    let per_core: Vec<Vec<FrameResult>> = if cfg.threaded {
        run_threaded(&mut cores, cfg, streams)?
    } else {
        let mut current = streams;
        let mut all = Vec::with_capacity(cores.len());
        for core in cores.iter_mut() {
            let mut next = Vec::new();
            let res = drive_core(core, cfg, current.into_iter().map(Ok), |o| {
                next.push(o);
                Ok(())
            })?;
            all.push(res);
            current = next;
        }
        all
    };

    let mut out = RunOutput {
        memory,
        max_resident_rows: cores.iter().map(Core::max_resident_rows).collect(),
        ..RunOutput::default()
    };
    let nframes = inputs.len();
    let mut per_core: Vec<std::vec::IntoIter<FrameResult>> =
        per_core.into_iter().map(Vec::into_iter).collect();
    for (f, &camera_items) in camera.iter().enumerate().take(nframes) {
        let mut layers = Vec::with_capacity(per_core.len());
        let mut trace = FrameTrace {
            camera_items,
            cores: Vec::with_capacity(per_core.len()),
        };
        for it in per_core.iter_mut() {
            let (t, ops, log) = it.next().ok_or_else(|| {
                Error::Invariant(format!("a core produced no result for frame {f}"))
            })?;
            layers.push(t);
            trace.cores.push(ops);
            out.activations.extend(log);
        }
        out.flow.push(layers.last().cloned().expect("network has layers"));
        if cfg.capture_layers {
            out.layers.push(layers);
        }
        out.traces.push(trace);
    }
    Ok(out)
}

fn run_threaded(
    cores: &mut [Core],
    cfg: &EngineConfig,
    input: Vec<StreamItem>,
) -> Result<Vec<Vec<FrameResult>>> {
    std::thread::scope(|scope| {
        let (first_tx, mut rx) = mpsc::channel::<StreamItem>();
        let mut handles = Vec::with_capacity(cores.len());
        for core in cores.iter_mut() {
            let (tx, next_rx) = mpsc::channel::<StreamItem>();
            let upstream = std::mem::replace(&mut rx, next_rx);
            handles.push(scope.spawn(move || {
                drive_core(core, cfg, upstream.into_iter().map(Ok), |o| {
                    // The receiver only disappears if a downstream core failed;
                    // its own error is reported instead.
                    let _ = tx.send(o);
                    Ok(())
                })
            }));
        }
        for item in input {
            first_tx.send(item).expect("first core alive while input is sent");
        }
        drop(first_tx);
        // Drain the head's output so the channel never blocks.
        let drain = scope.spawn(move || rx.into_iter().count());
        let mut results = Vec::with_capacity(handles.len());
        let mut first_err = None;
        for h in handles {
            match h.join().expect("core thread panicked") {
                Ok(r) => results.push(r),
                Err(e) => {
                    first_err.get_or_insert(e);
                    results.push(Vec::new());
                }
            }
        }
        drain.join().expect("drain thread panicked");
        match first_err {
            Some(e) => Err(e),
            None => Ok(results),
        }
    })
}

/// Write logged activations as `frame,layer,y,x,channel,value`.
pub fn write_activation_log(
    records: &[ActRecord],
    header: Option<&str>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    if let Some(h) = header {
        writeln!(f, "{h}")?;
    }
    writeln!(f, "frame,layer,y,x,channel,value")?;
    for r in records {
        writeln!(f, "{},{},{},{},{},{}", r.frame, r.layer, r.y, r.x, r.channel, r.value)?;
    }
    f.flush()?;
    Ok(())
}
