//! Camera spike ingestion and event frames.
//!
//! Spike files are UTF-8 text, one spike per line: `t_us x y p`. Blank lines
//! and lines starting with `#` are ignored. Ground-truth flow files are
//! binary: `"SFGT"`, `u32 H`, `u32 W`, `f32 flow[H][W][2]`, `u8 mask[H][W]`,
//! little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensorcore::{Bf16, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CameraSpike {
    /// Timestamp in microseconds.
    pub t: u64,
    pub x: u16,
    pub y: u16,
    /// Polarity, 0 or 1.
    pub p: u8,
}

/// Per-pixel, per-polarity spike counts over one partition of the stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventFrame {
    pub height: usize,
    pub width: usize,
    /// `H x W x 2`, row-major.
    pub counts: Vec<u32>,
    pub t_start: u64,
    pub t_end: u64,
}

impl EventFrame {
    pub fn empty(height: usize, width: usize, t_start: u64, t_end: u64) -> Self {
        EventFrame {
            height,
            width,
            counts: vec![0; height * width * 2],
            t_start,
            t_end,
        }
    }

    pub fn from_spikes(
        height: usize,
        width: usize,
        spikes: &[CameraSpike],
        t_start: u64,
        t_end: u64,
    ) -> Result<Self> {
        let mut f = Self::empty(height, width, t_start, t_end);
        for s in spikes {
            f.add(s)?;
        }
        Ok(f)
    }

    fn add(&mut self, s: &CameraSpike) -> Result<()> {
        check_spike(s, self.width, self.height)?;
        let i = ((s.y as usize * self.width) + s.x as usize) * 2 + s.p as usize;
        self.counts[i] += 1;
        Ok(())
    }

    #[inline]
    pub fn count(&self, y: usize, x: usize, p: usize) -> u32 {
        self.counts[(y * self.width + x) * 2 + p]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// Network input: counts as BFloat16 values, channel = polarity.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.counts.iter().map(|&c| Bf16::from_f32(c as f32)).collect();
        Tensor::from_bf16(self.height, self.width, 2, data).expect("frame shape is consistent")
    }

    /// Pixels with at least one spike.
    pub fn active_mask(&self) -> Vec<bool> {
        self.counts.chunks(2).map(|c| c[0] + c[1] > 0).collect()
    }
}

fn check_spike(s: &CameraSpike, width: usize, height: usize) -> Result<()> {
    if s.x as usize >= width || s.y as usize >= height || s.p > 1 {
        return Err(Error::InvalidParameter(format!(
            "spike ({}, {}, p={}) outside a {width}x{height} sensor",
            s.x, s.y, s.p
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameMode {
    /// A fixed number of spikes per frame.
    Count(usize),
    /// Fixed time windows `[k*dt, (k+1)*dt)` in microseconds.
    Window(u64),
}

/// Split a time-sorted stream into consecutive, non-overlapping frames.
///
/// Count mode keeps a trailing partial frame so no spike is dropped. Window
/// mode starts at the window containing the first spike and emits empty
/// frames for silent windows.
pub fn build_frames(
    stream: &[CameraSpike],
    height: usize,
    width: usize,
    mode: FrameMode,
) -> Result<Vec<EventFrame>> {
    if let Some(i) = stream.windows(2).position(|w| w[1].t < w[0].t) {
        return Err(Error::Unsorted { index: i + 1 });
    }
    if stream.is_empty() {
        return Ok(Vec::new());
    }
    let mut frames = Vec::new();
    match mode {
        FrameMode::Count(n) => {
            if n == 0 {
                return Err(Error::InvalidParameter("frame spike count must be > 0".into()));
            }
            for (i, chunk) in stream.chunks(n).enumerate() {
                let t_start = chunk[0].t;
                let t_end = stream
                    .get((i + 1) * n)
                    .map_or(chunk[chunk.len() - 1].t + 1, |s| s.t);
                frames.push(EventFrame::from_spikes(height, width, chunk, t_start, t_end)?);
            }
        }
        FrameMode::Window(dt) => {
            if dt == 0 {
                return Err(Error::InvalidParameter("window length must be > 0".into()));
            }
            let first = stream[0].t / dt;
            let last = stream[stream.len() - 1].t / dt;
            let mut rest = stream;
            for k in first..=last {
                let end = (k + 1) * dt;
                let split = rest.partition_point(|s| s.t < end);
                let (now, later) = rest.split_at(split);
                frames.push(EventFrame::from_spikes(height, width, now, k * dt, end)?);
                rest = later;
            }
        }
    }
    Ok(frames)
}

/// Stable row-major sort: top rows first, left to right within a row.
/// Spikes at the same pixel keep their arrival order.
pub fn sort_spatial(spikes: &[CameraSpike]) -> Vec<CameraSpike> {
    let mut out = spikes.to_vec();
    out.sort_by_key(|s| (s.y, s.x));
    out
}

/// Crop the central `crop_h x crop_w` patch, then sum `factor x factor`
/// blocks per polarity.
pub fn downsample(
    frame: &EventFrame,
    crop_h: usize,
    crop_w: usize,
    factor: usize,
) -> Result<EventFrame> {
    if factor == 0 || crop_h % factor != 0 || crop_w % factor != 0 {
        return Err(Error::InvalidParameter(format!(
            "factor {factor} does not divide crop {crop_h}x{crop_w}"
        )));
    }
    if crop_h > frame.height || crop_w > frame.width {
        return Err(Error::InvalidParameter(format!(
            "crop {crop_h}x{crop_w} exceeds frame {}x{}",
            frame.height, frame.width
        )));
    }
    let (oy, ox) = ((frame.height - crop_h) / 2, (frame.width - crop_w) / 2);
    let (h, w) = (crop_h / factor, crop_w / factor);
    let mut out = EventFrame::empty(h, w, frame.t_start, frame.t_end);
    for y in 0..crop_h {
        for x in 0..crop_w {
            for p in 0..2 {
                out.counts[((y / factor) * w + x / factor) * 2 + p] +=
                    frame.count(oy + y, ox + x, p);
            }
        }
    }
    Ok(out)
}

/// Parse the text spike format.
pub fn parse_spikes(text: &str) -> Result<Vec<CameraSpike>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let body = line.trim();
        if !body.is_empty() && !body.starts_with('#') {
            let bad = |m: &str| Error::Parse {
                offset,
                message: format!("{m} in spike line {body:?}"),
            };
            let f: Vec<&str> = body.split_whitespace().collect();
            if f.len() != 4 {
                return Err(bad("expected 4 fields"));
            }
            let spike = CameraSpike {
                t: f[0].parse().map_err(|_| bad("bad timestamp"))?,
                x: f[1].parse().map_err(|_| bad("bad x"))?,
                y: f[2].parse().map_err(|_| bad("bad y"))?,
                p: f[3].parse().map_err(|_| bad("bad polarity"))?,
            };
            if spike.p > 1 {
                return Err(bad("polarity must be 0 or 1"));
            }
            out.push(spike);
        }
        offset += line.len();
    }
    Ok(out)
}

pub fn read_spikes(path: impl AsRef<Path>) -> Result<Vec<CameraSpike>> {
    parse_spikes(&fs::read_to_string(path)?)
}

pub fn write_spikes(path: impl AsRef<Path>, spikes: &[CameraSpike]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for s in spikes {
        writeln!(out, "{} {} {} {}", s.t, s.x, s.y, s.p)?;
    }
    out.flush()?;
    Ok(())
}

/// Dense flow map with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowGroundTruth {
    pub height: usize,
    pub width: usize,
    /// `H x W x 2` in pixels per frame.
    pub flow: Vec<f32>,
    pub valid: Vec<bool>,
}

impl FlowGroundTruth {
    pub fn new(height: usize, width: usize, flow: Vec<f32>, valid: Vec<bool>) -> Result<Self> {
        if flow.len() != height * width * 2 || valid.len() != height * width {
            return Err(Error::Shape("flow ground truth arrays do not match H x W".into()));
        }
        Ok(FlowGroundTruth {
            height,
            width,
            flow,
            valid,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.flow.len() * 4 + self.valid.len());
        out.extend_from_slice(b"SFGT");
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        for v in &self.flow {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend(self.valid.iter().map(|&m| m as u8));
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let need = |offset: usize, n: usize| -> Result<()> {
            if buf.len() < offset + n {
                return Err(Error::Parse {
                    offset: buf.len().min(offset),
                    message: format!("truncated flow file: need {n} bytes at {offset}"),
                });
            }
            Ok(())
        };
        need(0, 12)?;
        if &buf[..4] != b"SFGT" {
            return Err(Error::Parse {
                offset: 0,
                message: "bad magic, expected \"SFGT\"".into(),
            });
        }
        let h = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
        let w = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        let nflow = h * w * 2 * 4;
        need(12, nflow + h * w)?;
        let flow = buf[12..12 + nflow]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let valid = buf[12 + nflow..12 + nflow + h * w]
            .iter()
            .map(|&b| b != 0)
            .collect();
        Self::new(h, w, flow, valid)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}
