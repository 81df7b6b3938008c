//! One simulated core: a single layer processed event by event.

use super::codec::{decode_events, encode_events, PixelPacket, Scheme, StreamItem};
use super::trace::{push_fire, CostOp, Phase};
use crate::error::{Error, Result};
use crate::netspec::lif_fire;
use crate::netspec::{LayerKind, LayerParams};
use crate::tensorcore::{fatrelu_value, softsign_value, Bf16, Kernel, Tensor};

/// Same-pixel entries integrated with one state load and store.
pub const GROUP_SIZE: usize = 4;
/// Lanes of the vector unit.
pub const NPE_LANES: usize = 8;

/// Rolling window of `K + 1` rows of partial sums.
#[derive(Clone, Debug)]
pub struct RowBuffer {
    slots: usize,
    width: usize,
    channels: usize,
    data: Vec<Bf16>,
    /// Oldest row still resident.
    base: usize,
    /// One past the newest admitted row.
    top: usize,
    max_resident: usize,
}

impl RowBuffer {
    pub fn new(k: usize, width: usize, channels: usize) -> Self {
        RowBuffer {
            slots: k + 1,
            width,
            channels,
            data: vec![Bf16::ZERO; (k + 1) * width * channels],
            base: 0,
            top: 0,
            max_resident: 0,
        }
    }

    /// Make rows up to and including `row` resident, zeroing fresh ones.
    pub fn admit_through(&mut self, row: usize) -> Result<()> {
        while self.top <= row {
            if self.top - self.base >= self.slots {
                return Err(Error::Invariant(format!(
                    "row buffer overflow: rows {}..={row} do not fit in {} slots",
                    self.base, self.slots
                )));
            }
            let start = (self.top % self.slots) * self.width * self.channels;
            self.data[start..start + self.width * self.channels].fill(Bf16::ZERO);
            self.top += 1;
        }
        self.max_resident = self.max_resident.max(self.top - self.base);
        Ok(())
    }

    pub fn slot_mut(&mut self, y: usize, x: usize) -> &mut [Bf16] {
        debug_assert!(y >= self.base && y < self.top, "row {y} is not resident");
        let start = ((y % self.slots) * self.width + x) * self.channels;
        &mut self.data[start..start + self.channels]
    }

    /// Free row `y` (and anything older).
    pub fn release(&mut self, y: usize) {
        self.base = self.base.max(y + 1);
        self.top = self.top.max(self.base);
    }

    pub fn reset(&mut self) {
        self.base = 0;
        self.top = 0;
    }

    pub fn resident_rows(&self) -> usize {
        self.top - self.base
    }

    pub fn max_resident_rows(&self) -> usize {
        self.max_resident
    }
}

#[derive(Clone, Debug)]
enum Store {
    Rows(RowBuffer),
    Full(Tensor),
}

impl Store {
    fn slot_mut(&mut self, y: usize, x: usize) -> &mut [Bf16] {
        match self {
            Store::Rows(r) => r.slot_mut(y, x),
            Store::Full(t) => t.pixel_mut(y, x),
        }
    }
}

/// Scatter one input pixel's entries into every clipped target pixel,
/// `GROUP_SIZE` entries per state load/store.
#[allow(clippy::too_many_arguments)]
fn integrate_groups(
    store: &mut Store,
    trace: &mut Vec<CostOp>,
    height: usize,
    width: usize,
    (iy, ix): (usize, usize),
    entries: &[(u16, Bf16)],
    kernel: &Kernel,
    binary: bool,
) -> Result<()> {
    if entries.is_empty() {
        return Ok(());
    }
    let r = kernel.radius();
    let (y0, y1) = (iy.saturating_sub(r), (iy + r).min(height - 1));
    let (x0, x1) = (ix.saturating_sub(r), (ix + r).min(width - 1));
    if let Store::Rows(rows) = store {
        rows.admit_through(y1)?;
    }
    let touched = (y1 - y0 + 1) * (x1 - x0 + 1);
    let lanes = kernel.cout().div_ceil(NPE_LANES);
    let per_entry = if binary { 1 } else { 2 };
    for group in entries.chunks(GROUP_SIZE) {
        for oy in y0..=y1 {
            for ox in x0..=x1 {
                let (ky, kx) = (iy + r - oy, ix + r - ox);
                let slot = store.slot_mut(oy, ox);
                for &(ci, a) in group {
                    let taps = kernel.taps(ky, kx, ci as usize);
                    for (o, &w) in slot.iter_mut().zip(taps) {
                        *o = Bf16::mac(*o, a, w);
                    }
                }
            }
        }
        trace.push(CostOp::StateAccess { blocks: touched });
        // Short groups are padded with dummy zeros and cost a full group.
        trace.push(CostOp::Vector {
            ops: touched * lanes * GROUP_SIZE * per_entry,
        });
    }
    Ok(())
}

/// One nonzero output element, for the optional activation log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActRecord {
    pub frame: usize,
    pub layer: usize,
    pub y: usize,
    pub x: usize,
    pub channel: usize,
    pub value: f32,
}

#[derive(Clone, Copy, Debug)]
pub struct CoreOptions {
    pub in_scheme: Scheme,
    pub out_scheme: Scheme,
    /// Upstream sends binary spikes, so integration needs no multiply.
    pub binary_input: bool,
    pub log_activations: bool,
}

/// A layer mapped onto one core.
pub struct Core {
    index: usize,
    layer: LayerParams,
    opts: CoreOptions,
    height: usize,
    width: usize,
    store: Store,
    hidden: Option<Tensor>,
    pool: Vec<Bf16>,
    fired: usize,
    last_in: Option<(usize, usize)>,
    frame: usize,
    received: usize,
    prescribed: Option<Tensor>,
    output: Tensor,
    trace: Vec<CostOp>,
    log: Vec<ActRecord>,
}

impl Core {
    /// `height x width` is the layer's input resolution.
    pub fn new(
        index: usize,
        layer: LayerParams,
        height: usize,
        width: usize,
        opts: CoreOptions,
    ) -> Self {
        let s = &layer.spec;
        let c = s.out_channels;
        let full = s.kind == LayerKind::ConvLif || s.recurrent;
        let store = if full {
            Store::Full(Tensor::zeros(height, width, c))
        } else {
            Store::Rows(RowBuffer::new(s.kernel, width, c))
        };
        let hidden = s.recurrent.then(|| Tensor::zeros(height, width, c));
        let (oh, ow) = if s.fused_maxpool {
            (height / 2, width / 2)
        } else {
            (height, width)
        };
        let pool = if s.fused_maxpool {
            vec![Bf16::ZERO; (width / 2) * c]
        } else {
            Vec::new()
        };
        Core {
            index,
            opts,
            height,
            width,
            store,
            hidden,
            pool,
            fired: 0,
            last_in: None,
            frame: 0,
            received: 0,
            prescribed: None,
            output: Tensor::zeros(oh, ow, c),
            trace: vec![CostOp::Phase(Phase::Forward)],
            log: Vec::new(),
            layer,
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn output_shape(&self) -> (usize, usize, usize) {
        self.output.shape()
    }

    /// Replace this core's emitted values for the current frame.
    pub fn prescribe(&mut self, out: Option<Tensor>) -> Result<()> {
        if let Some(t) = &out {
            if t.shape() != self.output.shape() {
                return Err(Error::Shape(format!(
                    "prescribed output {:?} for core {} whose output is {:?}",
                    t.shape(),
                    self.index,
                    self.output.shape()
                )));
            }
        }
        self.prescribed = out;
        Ok(())
    }

    /// Largest number of simultaneously resident state rows so far, for
    /// row-buffered layers.
    pub fn max_resident_rows(&self) -> Option<usize> {
        match &self.store {
            Store::Rows(r) => Some(r.max_resident_rows()),
            Store::Full(_) => None,
        }
    }

    /// Process one incoming item, appending emitted items to `out`. A `Sync`
    /// completes the frame; collect its results with [`Core::take_frame`].
    pub fn receive(&mut self, item: &StreamItem, out: &mut Vec<StreamItem>) -> Result<()> {
        self.trace.push(CostOp::Receive { item: self.received });
        self.received += 1;
        match item {
            StreamItem::Pixel(p) => self.receive_pixel(p, out),
            StreamItem::Sync => self.end_frame(out),
        }
    }

    fn receive_pixel(&mut self, p: &PixelPacket, out: &mut Vec<StreamItem>) -> Result<()> {
        let (y, x) = (p.y as usize, p.x as usize);
        if y >= self.height || x >= self.width {
            return Err(Error::Codec(format!(
                "core {}: pixel ({x}, {y}) outside {}x{}",
                self.index, self.width, self.height
            )));
        }
        if let Some((py, px)) = self.last_in {
            if (y, x) <= (py, px) {
                return Err(Error::OutOfOrder {
                    x,
                    y,
                    prev_x: px,
                    prev_y: py,
                });
            }
        }
        self.last_in = Some((y, x));
        let entries = decode_events(&p.words, self.opts.in_scheme);
        self.trace.push(CostOp::Decode {
            scheme: self.opts.in_scheme,
            words: p.words.len(),
            entries: entries.len(),
        });
        if let Some(&(c, _)) = entries
            .iter()
            .find(|(c, _)| *c as usize >= self.layer.spec.in_channels)
        {
            return Err(Error::Codec(format!(
                "core {}: channel {c} beyond {} input channels",
                self.index, self.layer.spec.in_channels
            )));
        }
        self.fire_until(Some((y, x)), out)?;
        integrate_groups(
            &mut self.store,
            &mut self.trace,
            self.height,
            self.width,
            (y, x),
            &entries,
            &self.layer.kernel,
            self.opts.binary_input,
        )
    }

    /// Fire the row-major prefix of pixels that can receive no more input
    /// before `limit`; `None` fires everything left in the frame.
    fn fire_until(&mut self, limit: Option<(usize, usize)>, out: &mut Vec<StreamItem>) -> Result<()> {
        let r = self.layer.spec.kernel / 2;
        let total = self.height * self.width;
        while self.fired < total {
            let (oy, ox) = (self.fired / self.width, self.fired % self.width);
            if let Some(lim) = limit {
                let last = ((oy + r).min(self.height - 1), (ox + r).min(self.width - 1));
                if last >= lim {
                    break;
                }
            }
            self.fire_pixel(oy, ox, out)?;
            self.fired += 1;
        }
        Ok(())
    }

    fn fire_pixel(&mut self, oy: usize, ox: usize, out: &mut Vec<StreamItem>) -> Result<()> {
        let s = self.layer.spec;
        let c = s.out_channels;
        if let Store::Rows(rows) = &mut self.store {
            // A row never touched by input is still all zeros.
            rows.admit_through(oy)?;
        }
        let mut values = vec![Bf16::ZERO; c];
        let slot = self.store.slot_mut(oy, ox);
        match s.kind {
            LayerKind::FlowHead => {
                for (ch, v) in values.iter_mut().enumerate() {
                    *v = softsign_value(slot[ch].add(self.layer.bias_at(ch)));
                    slot[ch] = Bf16::ZERO;
                }
            }
            LayerKind::ConvFatrelu => {
                for (ch, v) in values.iter_mut().enumerate() {
                    let z = if s.has_bias {
                        slot[ch].add(self.layer.bias_at(ch))
                    } else {
                        slot[ch]
                    };
                    *v = fatrelu_value(z, self.layer.thresholds[ch]);
                    slot[ch] = Bf16::ZERO;
                }
            }
            LayerKind::ConvLif => {
                for (ch, v) in values.iter_mut().enumerate() {
                    let (m, spike) =
                        lif_fire(slot[ch], self.layer.leaks[ch], self.layer.thresholds[ch]);
                    slot[ch] = m;
                    if spike {
                        *v = Bf16::ONE;
                    }
                }
            }
        }
        push_fire(&mut self.trace, 1, c.div_ceil(NPE_LANES) * 2);
        if let (Some(p), false) = (&self.prescribed, s.fused_maxpool) {
            // Recurrence sees what was sent.
            values.copy_from_slice(p.pixel(oy, ox));
        }
        if let Some(h) = &mut self.hidden {
            h.pixel_mut(oy, ox).copy_from_slice(&values);
        }
        if s.fused_maxpool {
            let cell = &mut self.pool[(ox / 2) * c..(ox / 2 + 1) * c];
            if oy % 2 == 0 && ox % 2 == 0 {
                cell.copy_from_slice(&values);
            } else {
                for (m, v) in cell.iter_mut().zip(&values) {
                    *m = m.max(*v);
                }
            }
            if oy % 2 == 1 && ox % 2 == 1 {
                let pooled = cell.to_vec();
                self.emit(oy / 2, ox / 2, pooled, out)?;
            }
        } else {
            self.emit(oy, ox, values, out)?;
        }
        if ox + 1 == self.width {
            if let Store::Rows(rows) = &mut self.store {
                rows.release(oy);
            }
        }
        Ok(())
    }

    fn emit(
        &mut self,
        y: usize,
        x: usize,
        mut values: Vec<Bf16>,
        out: &mut Vec<StreamItem>,
    ) -> Result<()> {
        if let Some(p) = &self.prescribed {
            values.copy_from_slice(p.pixel(y, x));
        }
        self.output.pixel_mut(y, x).copy_from_slice(&values);
        let dense = self.layer.spec.kind == LayerKind::FlowHead;
        let acts: Vec<(u16, Bf16)> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| dense || !v.is_zero())
            .map(|(c, &v)| (c as u16, v))
            .collect();
        if acts.is_empty() {
            return Ok(());
        }
        if self.opts.log_activations {
            for &(c, v) in acts.iter().filter(|(_, v)| !v.is_zero()) {
                self.log.push(ActRecord {
                    frame: self.frame,
                    layer: self.index,
                    y,
                    x,
                    channel: c as usize,
                    value: v.to_f32(),
                });
            }
        }
        let words = encode_events(&acts, self.opts.out_scheme, values.len())?;
        let item = StreamItem::Pixel(PixelPacket {
            y: y as u16,
            x: x as u16,
            words,
        });
        self.trace.push(CostOp::Emit {
            words: item.word_count(),
            sync: false,
        });
        out.push(item);
        Ok(())
    }

    fn end_frame(&mut self, out: &mut Vec<StreamItem>) -> Result<()> {
        self.fire_until(None, out)?;
        self.trace.push(CostOp::Emit { words: 1, sync: true });
        out.push(StreamItem::Sync);
        if let (Some(hidden), Some(rec)) = (&self.hidden, &self.layer.rec_kernel) {
            // Recurrent convolution for the next frame, after the sync has left.
            self.trace.push(CostOp::Phase(Phase::Recurrent));
            let binary = self.layer.spec.kind == LayerKind::ConvLif;
            for y in 0..self.height {
                for x in 0..self.width {
                    let entries: Vec<(u16, Bf16)> = hidden
                        .pixel(y, x)
                        .iter()
                        .enumerate()
                        .filter(|(_, v)| !v.is_zero())
                        .map(|(c, &v)| (c as u16, v))
                        .collect();
                    integrate_groups(
                        &mut self.store,
                        &mut self.trace,
                        self.height,
                        self.width,
                        (y, x),
                        &entries,
                        rec,
                        binary,
                    )?;
                }
            }
        }
        if let Store::Rows(rows) = &mut self.store {
            rows.reset();
        }
        self.fired = 0;
        self.last_in = None;
        self.received = 0;
        Ok(())
    }

    /// Results of the frame just closed by a `Sync`: the emitted output
    /// tensor, the cost trace and any logged activations.
    pub fn take_frame(&mut self) -> (Tensor, Vec<CostOp>, Vec<ActRecord>) {
        let shape = self.output.shape();
        let output = std::mem::replace(&mut self.output, Tensor::zeros(shape.0, shape.1, shape.2));
        let trace = std::mem::replace(&mut self.trace, vec![CostOp::Phase(Phase::Forward)]);
        let log = std::mem::take(&mut self.log);
        self.prescribed = None;
        self.frame += 1;
        (output, trace, log)
    }
}
