//! Single-layer sweep over the number of active input pixels and the number
//! of ac./sp. per pixel.
//!
//! The layer is 16x16 with 32 input and 32 output channels and 3x3 kernels.
//! Its thresholds are set out of reach so the measured time is integration
//! plus the unavoidable per-pixel threshold checks, without output traffic.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::costsim::{simulate_frame, CostParams};
use crate::dfengine::codec::encode_events;
use crate::dfengine::{Core, CoreOptions, FrameTrace, PixelPacket, Scheme, StreamItem};
use crate::error::Result;
use crate::netspec::{LayerKind, LayerParams, LayerSpec, NetworkKind};
use crate::tensorcore::{Bf16, Kernel};

pub const SWEEP_SIZE: usize = 16;
pub const SWEEP_CHANNELS: usize = 32;
pub const SWEEP_PIXELS: [usize; 5] = [0, 50, 102, 151, 204];
pub const SWEEP_PER_PIXEL: [usize; 4] = [1, 4, 6, 10];
/// Active pixels for the per-pixel count sweep.
pub const SWEEP_FIXED_PIXELS: usize = 151;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub kind: NetworkKind,
    pub pixels: usize,
    pub per_pixel: usize,
    pub total: usize,
    pub time_us: f64,
    pub energy_uj: f64,
    pub state_rounds: u64,
    pub state_blocks_rw: u64,
}

fn sweep_layer(kind: NetworkKind, seed: u64) -> LayerParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = SWEEP_CHANNELS;
    let w: Vec<f32> = (0..9 * c * c).map(|_| rng.gen_range(-0.1..0.1)).collect();
    let unreachable = Bf16::from_f32(1e30);
    let (lk, bias, leaks) = match kind {
        NetworkKind::Ann => (LayerKind::ConvFatrelu, vec![Bf16::ZERO; c], Vec::new()),
        NetworkKind::Snn => (LayerKind::ConvLif, Vec::new(), vec![Bf16::from_f32(0.5); c]),
    };
    LayerParams {
        spec: LayerSpec {
            kind: lk,
            kernel: 3,
            in_channels: c,
            out_channels: c,
            has_bias: kind == NetworkKind::Ann,
            recurrent: false,
            fused_maxpool: false,
        },
        kernel: Kernel::from_f32(3, c, c, &w).expect("kernel shape"),
        rec_kernel: None,
        bias,
        thresholds: vec![unreachable; c],
        leaks,
    }
}

/// Choose `p` pixels of an `n x n` map with corners, edges and interior
/// represented in proportion, so the mean fan-out per pixel barely moves
/// with `p`. Returned in row-major order.
pub fn stratified_pixels(n: usize, p: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut corners = Vec::new();
    let mut edges = Vec::new();
    let mut interior = Vec::new();
    for y in 0..n {
        for x in 0..n {
            let border = (y == 0 || y == n - 1) as u8 + (x == 0 || x == n - 1) as u8;
            match border {
                2 => corners.push((y, x)),
                1 => edges.push((y, x)),
                _ => interior.push((y, x)),
            }
        }
    }
    let total = (n * n) as f64;
    let take_c = ((corners.len() as f64 * p as f64 / total).round() as usize).min(corners.len());
    let take_e = ((edges.len() as f64 * p as f64 / total).round() as usize).min(edges.len());
    let take_i = p.saturating_sub(take_c + take_e).min(interior.len());
    let mut chosen = Vec::with_capacity(p);
    for (pool, k) in [(corners, take_c), (edges, take_e), (interior, take_i)] {
        chosen.extend(pool.choose_multiple(rng, k).copied());
    }
    chosen.sort_unstable();
    chosen
}

/// One sweep point: `pixels` active pixels with `per_pixel` ac./sp. each.
pub fn sweep_point(
    kind: NetworkKind,
    pixels: usize,
    per_pixel: usize,
    params: &CostParams,
    seed: u64,
) -> Result<SweepPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (pixels as u64) << 8 ^ per_pixel as u64);
    let c = SWEEP_CHANNELS;
    let scheme = match kind {
        NetworkKind::Ann => Scheme::Aer,
        NetworkKind::Snn => Scheme::Bitmask,
    };
    let mut core = Core::new(
        0,
        sweep_layer(kind, seed),
        SWEEP_SIZE,
        SWEEP_SIZE,
        CoreOptions {
            in_scheme: scheme,
            out_scheme: scheme,
            binary_input: kind == NetworkKind::Snn,
            log_activations: false,
        },
    );
    let all: Vec<u16> = (0..c as u16).collect();
    let mut items = Vec::new();
    for (y, x) in stratified_pixels(SWEEP_SIZE, pixels, &mut rng) {
        let mut chans: Vec<u16> = all.choose_multiple(&mut rng, per_pixel).copied().collect();
        chans.sort_unstable();
        let acts: Vec<(u16, Bf16)> = chans
            .into_iter()
            .map(|ch| match kind {
                NetworkKind::Ann => (ch, Bf16::from_f32(rng.gen_range(0.1..2.0))),
                NetworkKind::Snn => (ch, Bf16::ONE),
            })
            .collect();
        items.push(StreamItem::Pixel(PixelPacket {
            y: y as u16,
            x: x as u16,
            words: encode_events(&acts, scheme, c)?,
        }));
    }
    items.push(StreamItem::Sync);
    let mut out = Vec::new();
    for item in &items {
        core.receive(item, &mut out)?;
    }
    let (_, ops, _) = core.take_frame();
    let trace = FrameTrace {
        camera_items: items.len(),
        cores: vec![ops],
    };
    let ledger = simulate_frame(0, &trace, params)?;
    let cl = &ledger.cores[0];
    Ok(SweepPoint {
        kind,
        pixels,
        per_pixel,
        total: pixels * per_pixel,
        time_us: cl.completion_us,
        energy_uj: cl.energy_uj,
        state_rounds: cl.counters.state_rounds,
        state_blocks_rw: cl.counters.state_blocks_rw,
    })
}

/// Both sweeps for one network kind: pixel count at one ac./sp. per pixel,
/// then ac./sp. per pixel at a fixed pixel count.
pub fn controlled_sweep(kind: NetworkKind, params: &CostParams, seed: u64) -> Result<Vec<SweepPoint>> {
    let mut points = Vec::new();
    for &p in &SWEEP_PIXELS {
        points.push(sweep_point(kind, p, 1, params, seed)?);
    }
    for &n in &SWEEP_PER_PIXEL {
        points.push(sweep_point(kind, SWEEP_FIXED_PIXELS, n, params, seed)?);
    }
    Ok(points)
}

/// Least-squares line through `(x, y)` and the largest absolute residual
/// as a fraction of the `y` range.
pub fn affine_fit_residual(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let base = my - slope * mx;
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p.1), h.max(p.1)));
    let worst = points
        .iter()
        .map(|p| (p.1 - (base + slope * p.0)).abs())
        .fold(0.0, f64::max);
    let range = hi - lo;
    (base, slope, if range > 0.0 { worst / range } else { 0.0 })
}

pub fn sweep_csv(points: &[SweepPoint], header: Option<&str>) -> String {
    let mut s = header.map(|h| format!("{h}\n")).unwrap_or_default();
    s.push_str("kind,pixels,per_pixel,total,time_us,energy_uj,state_rounds,state_blocks_rw\n");
    for p in points {
        let kind = match p.kind {
            NetworkKind::Ann => "ann",
            NetworkKind::Snn => "snn",
        };
        s.push_str(&format!(
            "{kind},{},{},{},{:.6},{:.6},{},{}\n",
            p.pixels, p.per_pixel, p.total, p.time_us, p.energy_uj, p.state_rounds, p.state_blocks_rw
        ));
    }
    s
}
