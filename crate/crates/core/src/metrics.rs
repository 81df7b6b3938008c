//! Densities, endpoint error and density-map images.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evio::FlowGroundTruth;
use crate::netspec::{LayerKind, NetworkSpec};
use crate::tensorcore::Tensor;

/// Endpoint error above which a pixel counts as an outlier.
pub const DEFAULT_OUTLIER_PX: f64 = 3.0;
/// Channel count rendered as full white in density maps.
pub const DENSITY_MAP_SATURATION: usize = 8;

/// Fraction of nonzero elements.
pub fn neuron_density(t: &Tensor) -> f64 {
    let n = t.data().len();
    if n == 0 {
        return 0.0;
    }
    t.count_nonzero() as f64 / n as f64
}

/// Nonzero channels at each pixel, row-major.
pub fn active_channels(t: &Tensor) -> Vec<usize> {
    let (h, w, _) = t.shape();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            out.push(t.pixel(y, x).iter().filter(|v| !v.is_zero()).count());
        }
    }
    out
}

/// Fraction of pixels with at least one nonzero channel.
pub fn pixel_density(t: &Tensor) -> f64 {
    let counts = active_channels(t);
    if counts.is_empty() {
        return 0.0;
    }
    counts.iter().filter(|&&n| n > 0).count() as f64 / counts.len() as f64
}

/// `hist[n]` is the number of pixels with exactly `n` nonzero channels.
pub fn channel_histogram(t: &Tensor) -> Vec<u64> {
    let mut hist = vec![0u64; t.channels() + 1];
    for n in active_channels(t) {
        hist[n] += 1;
    }
    hist
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowError {
    /// Mean endpoint error in pixels.
    pub aee: f64,
    /// Percent of evaluated pixels with error above the outlier limit.
    pub outlier_pct: f64,
    pub pixels: usize,
}

/// Endpoint error over pixels that are valid in the ground truth and active
/// in `event_mask`.
pub fn aee(
    pred: &Tensor,
    gt: &FlowGroundTruth,
    event_mask: &[bool],
    outlier_px: f64,
) -> Result<FlowError> {
    let (h, w) = (gt.height, gt.width);
    if pred.shape() != (h, w, 2) || event_mask.len() != h * w {
        return Err(Error::Shape(format!(
            "prediction {:?} and mask of {} do not match ground truth {h}x{w}",
            pred.shape(),
            event_mask.len()
        )));
    }
    let mut sum = 0.0;
    let mut outliers = 0usize;
    let mut n = 0usize;
    for i in 0..h * w {
        if !(gt.valid[i] && event_mask[i]) {
            continue;
        }
        let (y, x) = (i / w, i % w);
        let du = pred.get(y, x, 0).to_f32() as f64 - gt.flow[2 * i] as f64;
        let dv = pred.get(y, x, 1).to_f32() as f64 - gt.flow[2 * i + 1] as f64;
        let e = du.hypot(dv);
        sum += e;
        if e > outlier_px {
            outliers += 1;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::NoValidPixels);
    }
    Ok(FlowError {
        aee: sum / n as f64,
        outlier_pct: 100.0 * outliers as f64 / n as f64,
        pixels: n,
    })
}

/// Mean over frames that had valid pixels; `None` if there were none.
pub fn sequence_aee(frames: &[Result<FlowError>]) -> Option<FlowError> {
    let ok: Vec<&FlowError> = frames.iter().filter_map(|r| r.as_ref().ok()).collect();
    if ok.is_empty() {
        return None;
    }
    let n = ok.len() as f64;
    Some(FlowError {
        aee: ok.iter().map(|e| e.aee).sum::<f64>() / n,
        outlier_pct: ok.iter().map(|e| e.outlier_pct).sum::<f64>() / n,
        pixels: ok.iter().map(|e| e.pixels).sum(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerDensity {
    /// `None` for the camera input.
    pub layer: Option<usize>,
    /// Dense layers are reported but left out of averages.
    pub dense: bool,
    /// Mean over frames.
    pub neuron_density: f64,
    pub pixel_density: f64,
    /// Summed over frames.
    pub histogram: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub frames: usize,
    pub input: LayerDensity,
    pub layers: Vec<LayerDensity>,
    /// Over sparse hidden layers only.
    pub mean_neuron_density: f64,
    pub mean_pixel_density: f64,
}

fn layer_density(layer: Option<usize>, dense: bool, frames: &[&Tensor]) -> LayerDensity {
    let n = frames.len().max(1) as f64;
    let mut histogram = Vec::new();
    for t in frames {
        let h = channel_histogram(t);
        if histogram.len() < h.len() {
            histogram.resize(h.len(), 0);
        }
        for (a, b) in histogram.iter_mut().zip(h) {
            *a += b;
        }
    }
    LayerDensity {
        layer,
        dense,
        neuron_density: frames.iter().map(|t| neuron_density(t)).sum::<f64>() / n,
        pixel_density: frames.iter().map(|t| pixel_density(t)).sum::<f64>() / n,
        histogram,
    }
}

/// Densities from input frames and per-frame layer outputs (`[frame][layer]`).
pub fn density_report(
    net: &NetworkSpec,
    inputs: &[Tensor],
    layers: &[Vec<Tensor>],
) -> Result<DensityReport> {
    if inputs.len() != layers.len() {
        return Err(Error::Shape(format!(
            "{} input frames but {} frames of layer outputs",
            inputs.len(),
            layers.len()
        )));
    }
    if let Some(f) = layers.iter().find(|f| f.len() != net.layers.len()) {
        return Err(Error::Shape(format!(
            "{} layer outputs for a {}-layer network",
            f.len(),
            net.layers.len()
        )));
    }
    let input = layer_density(None, false, &inputs.iter().collect::<Vec<_>>());
    let per_layer: Vec<LayerDensity> = net
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let frames: Vec<&Tensor> = layers.iter().map(|f| &f[i]).collect();
            layer_density(Some(i), l.spec.kind == LayerKind::FlowHead, &frames)
        })
        .collect();
    let sparse: Vec<&LayerDensity> = per_layer.iter().filter(|l| !l.dense).collect();
    let m = sparse.len().max(1) as f64;
    Ok(DensityReport {
        frames: inputs.len(),
        mean_neuron_density: sparse.iter().map(|l| l.neuron_density).sum::<f64>() / m,
        mean_pixel_density: sparse.iter().map(|l| l.pixel_density).sum::<f64>() / m,
        input,
        layers: per_layer,
    })
}

pub fn density_csv(report: &DensityReport, header: Option<&str>) -> String {
    let mut s = header.map(|h| format!("{h}\n")).unwrap_or_default();
    s.push_str("layer,dense,neuron_density,pixel_density\n");
    for l in std::iter::once(&report.input).chain(&report.layers) {
        let name = l.layer.map_or("input".to_string(), |i| i.to_string());
        let _ = writeln!(
            s,
            "{name},{},{:.6},{:.6}",
            l.dense, l.neuron_density, l.pixel_density
        );
    }
    let _ = writeln!(
        s,
        "mean,false,{:.6},{:.6}",
        report.mean_neuron_density, report.mean_pixel_density
    );
    s
}

/// Grey level for a pixel with `n` nonzero channels.
pub fn density_level(n: usize) -> u8 {
    let n = n.min(DENSITY_MAP_SATURATION);
    ((n * 255 + DENSITY_MAP_SATURATION / 2) / DENSITY_MAP_SATURATION) as u8
}

/// Binary PGM of nonzero channels per pixel, saturating at eight.
pub fn density_map_pgm(t: &Tensor) -> Vec<u8> {
    let (h, w, _) = t.shape();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(active_channels(t).into_iter().map(density_level));
    out
}

pub fn write_density_map(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, density_map_pgm(t))?;
    Ok(())
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = (h.rem_euclid(360.0)) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|u| ((u + m) * 255.0).round().clamp(0.0, 255.0) as u8)
}

/// Binary PPM of a flow map: hue is direction, brightness is magnitude
/// relative to the largest vector.
pub fn flow_color_ppm(flow: &Tensor) -> Result<Vec<u8>> {
    let (h, w, c) = flow.shape();
    if c != 2 {
        return Err(Error::Shape(format!("flow image needs 2 channels, got {c}")));
    }
    let vec_at = |y, x| (flow.get(y, x, 0).to_f32() as f64, flow.get(y, x, 1).to_f32() as f64);
    let mut max = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            let (u, v) = vec_at(y, x);
            max = max.max(u.hypot(v));
        }
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            let (u, v) = vec_at(y, x);
            let mag = if max > 0.0 { u.hypot(v) / max } else { 0.0 };
            out.extend(hsv_to_rgb(v.atan2(u).to_degrees(), 1.0, mag));
        }
    }
    Ok(out)
}
