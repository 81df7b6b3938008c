//! Full-resolution FireNet runs whose per-layer activity follows fixed
//! pixel-density profiles.
//!
//! The camera frame is drawn with the first density of the profile. Each
//! hidden layer's output is prescribed with the next one, so the cost model
//! sees the measured sparsity regardless of the random weights.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::costsim::{simulate_timeline, CostLedger, CostParams};
use crate::dfengine::{run_network, EngineConfig, Scheme};
use crate::error::{Error, Result};
use crate::netspec::{firenet, FireNetShape, NetworkKind, NetworkSpec, INPUT_CHANNELS};
use crate::tensorcore::{Bf16, Tensor};

/// Percent of active pixels: camera input, then the seven hidden layers.
pub const SNN_PIXEL_PROFILE: [f64; 8] = [9.3, 25.2, 45.3, 30.8, 31.5, 55.4, 56.9, 59.2];
pub const ANN_PIXEL_PROFILE: [f64; 8] = [8.8, 28.6, 82.5, 37.4, 22.8, 96.2, 98.3, 99.6];
/// Target fraction of nonzero outputs in hidden layers.
pub const FIXTURE_NEURON_DENSITY: f64 = 0.05;
pub const FIXTURE_FRAMES: usize = 3;

pub fn pixel_profile(kind: NetworkKind) -> [f64; 8] {
    match kind {
        NetworkKind::Ann => ANN_PIXEL_PROFILE,
        NetworkKind::Snn => SNN_PIXEL_PROFILE,
    }
}

#[derive(Clone, Debug)]
pub struct DensityFixture {
    pub kind: NetworkKind,
    pub net: NetworkSpec,
    pub inputs: Vec<Tensor>,
    /// `[frame][core]`; the flow head is left computed.
    pub prescribed: Vec<Vec<Option<Tensor>>>,
}

/// `round(pd * H * W)` active pixels holding `round(nd * H * W * C)`
/// nonzeros in total, at least one each.
pub fn sparse_tensor(
    h: usize,
    w: usize,
    c: usize,
    pixel_density: f64,
    neuron_density: f64,
    binary: bool,
    rng: &mut ChaCha8Rng,
) -> Tensor {
    let mut t = Tensor::zeros(h, w, c);
    let pixels = ((pixel_density * (h * w) as f64).round() as usize).min(h * w);
    if pixels == 0 {
        return t;
    }
    let nz = ((neuron_density * (h * w * c) as f64).round() as usize).clamp(pixels, pixels * c);
    let mut positions: Vec<usize> = (0..h * w).collect();
    positions.shuffle(rng);
    positions.truncate(pixels);
    let mut per = vec![1usize; pixels];
    let mut extra = nz - pixels;
    while extra > 0 {
        let i = rng.gen_range(0..pixels);
        if per[i] < c {
            per[i] += 1;
            extra -= 1;
        }
    }
    let chans: Vec<usize> = (0..c).collect();
    for (&pos, &n) in positions.iter().zip(&per) {
        let (y, x) = (pos / w, pos % w);
        for &ch in chans.choose_multiple(rng, n) {
            let v = if binary { 1.0 } else { rng.gen_range(0.1f32..1.0) };
            t.set(y, x, ch, Bf16::from_f32(v));
        }
    }
    t
}

/// Camera frame of polarity counts with the given pixel density.
pub fn camera_frame(h: usize, w: usize, pixel_density: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::zeros(h, w, INPUT_CHANNELS);
    let pixels = ((pixel_density * (h * w) as f64).round() as usize).min(h * w);
    let mut positions: Vec<usize> = (0..h * w).collect();
    positions.shuffle(rng);
    for &pos in &positions[..pixels] {
        let (y, x) = (pos / w, pos % w);
        let first = rng.gen_range(0..INPUT_CHANNELS);
        t.set(y, x, first, Bf16::from_f32(rng.gen_range(1..4) as f32));
        if rng.gen_bool(0.3) {
            t.set(y, x, 1 - first, Bf16::from_f32(rng.gen_range(1..3) as f32));
        }
    }
    t
}

pub fn density_fixture(kind: NetworkKind, seed: u64) -> Result<DensityFixture> {
    let shape = FireNetShape::full(kind);
    let net = firenet(shape, seed)?;
    let profile = pixel_profile(kind);
    let (h, w, c) = (shape.height, shape.width, shape.channels);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed));
    let mut inputs = Vec::with_capacity(FIXTURE_FRAMES);
    let mut prescribed = Vec::with_capacity(FIXTURE_FRAMES);
    for _ in 0..FIXTURE_FRAMES {
        inputs.push(camera_frame(h, w, profile[0] / 100.0, &mut rng));
        let mut cores: Vec<Option<Tensor>> = profile[1..]
            .iter()
            .map(|&pd| {
                let pd = pd / 100.0;
                let nd = FIXTURE_NEURON_DENSITY.max(pd / c as f64);
                Some(sparse_tensor(h, w, c, pd, nd, kind == NetworkKind::Snn, &mut rng))
            })
            .collect();
        cores.push(None);
        if cores.len() != net.layers.len() {
            return Err(Error::Invariant("fixture profile does not match FireNet depth".into()));
        }
        prescribed.push(cores);
    }
    Ok(DensityFixture {
        kind,
        net,
        inputs,
        prescribed,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FixtureCost {
    pub kind: NetworkKind,
    pub mean_latency_us: f64,
    pub mean_total_time_us: f64,
    pub mean_energy_uj: f64,
}

/// Engine run plus cost simulation of a fixture.
pub fn fixture_ledger(
    fx: &DensityFixture,
    scheme: Scheme,
    params: &CostParams,
    threaded: bool,
) -> Result<CostLedger> {
    let cfg = EngineConfig {
        scheme,
        threaded,
        prescribed: Some(fx.prescribed.clone()),
        ..EngineConfig::default()
    };
    let out = run_network(&fx.inputs, &fx.net, &cfg)?;
    simulate_timeline(&out.traces, params)
}

pub fn fixture_cost(kind: NetworkKind, params: &CostParams, seed: u64) -> Result<FixtureCost> {
    let fx = density_fixture(kind, seed)?;
    let ledger = fixture_ledger(&fx, Scheme::Bitmask, params, false)?;
    Ok(FixtureCost {
        kind,
        mean_latency_us: ledger.mean_latency_us,
        mean_total_time_us: ledger.mean_total_time_us,
        mean_energy_uj: ledger.mean_energy_uj,
    })
}
