//! Random small networks and inputs for engine-versus-oracle checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dfengine::{run_network, EngineConfig, Scheme};
use crate::error::Result;
use crate::netspec::{
    random_network, InitRanges, LayerKind, LayerSpec, NetworkKind, NetworkSpec, FLOW_CHANNELS,
    INPUT_CHANNELS,
};
use crate::reference::reference_run;
use crate::tensorcore::{Bf16, Tensor};

/// A random network with a short input sequence.
#[derive(Clone, Debug)]
pub struct OracleCase {
    pub seed: u64,
    pub net: NetworkSpec,
    pub inputs: Vec<Tensor>,
}

impl OracleCase {
    pub fn has_recurrence(&self) -> bool {
        self.net.layers.iter().any(|l| l.spec.recurrent)
    }

    pub fn has_maxpool(&self) -> bool {
        self.net.layers.iter().any(|l| l.spec.fused_maxpool)
    }
}

/// Build a case with at most 16x16 pixels and 8 channels. `kind`,
/// `recurrent` and `maxpool` force the respective feature when given.
pub fn random_case(
    seed: u64,
    kind: Option<NetworkKind>,
    recurrent: Option<bool>,
    maxpool: Option<bool>,
) -> Result<OracleCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = kind.unwrap_or(if rng.gen_bool(0.5) {
        NetworkKind::Ann
    } else {
        NetworkKind::Snn
    });
    let want_pool = maxpool.unwrap_or_else(|| rng.gen_bool(0.3));
    let want_rec = recurrent.unwrap_or_else(|| rng.gen_bool(0.5));
    let hidden_kind = match kind {
        NetworkKind::Ann => LayerKind::ConvFatrelu,
        NetworkKind::Snn => LayerKind::ConvLif,
    };
    let dim = |rng: &mut ChaCha8Rng| {
        let d = rng.gen_range(2..=16usize);
        if want_pool {
            d + d % 2
        } else {
            d
        }
    };
    let (height, width) = (dim(&mut rng), dim(&mut rng));
    let n_hidden = rng.gen_range(1..=3usize);
    let rec_at = rng.gen_range(0..n_hidden);
    let pool_at = if want_rec && n_hidden > 1 {
        (rec_at + 1) % n_hidden
    } else {
        rng.gen_range(0..n_hidden)
    };
    let mut layout = Vec::new();
    let mut cin = INPUT_CHANNELS;
    let (mut h, mut w) = (height, width);
    for i in 0..n_hidden {
        let cout = rng.gen_range(1..=8usize);
        let kernel = [1, 3, 3, 3, 5][rng.gen_range(0..5)];
        let recurrent = want_rec && i == rec_at && !(want_pool && i == pool_at);
        let fused_maxpool = want_pool && i == pool_at && !recurrent && h % 2 == 0 && w % 2 == 0;
        layout.push(LayerSpec {
            kind: hidden_kind,
            kernel,
            in_channels: cin,
            out_channels: cout,
            has_bias: kind == NetworkKind::Ann,
            recurrent,
            fused_maxpool,
        });
        if fused_maxpool {
            h /= 2;
            w /= 2;
        }
        cin = cout;
    }
    layout.push(LayerSpec {
        kind: LayerKind::FlowHead,
        kernel: 1,
        in_channels: cin,
        out_channels: FLOW_CHANNELS,
        has_bias: true,
        recurrent: false,
        fused_maxpool: false,
    });
    let net = random_network(&layout, height, width, InitRanges::default(), rng.gen())?;
    let frames = rng.gen_range(1..=3usize);
    let density = rng.gen_range(0.05..0.6);
    let inputs = (0..frames)
        .map(|_| {
            let data: Vec<Bf16> = (0..height * width * INPUT_CHANNELS)
                .map(|_| {
                    if !rng.gen_bool(density) {
                        Bf16::ZERO
                    } else if kind == NetworkKind::Snn || rng.gen_bool(0.5) {
                        Bf16::from_f32(rng.gen_range(1..=4u32) as f32)
                    } else {
                        Bf16::from_f32(rng.gen_range(-2.0f32..2.0))
                    }
                })
                .collect();
            Tensor::from_bf16(height, width, INPUT_CHANNELS, data).expect("shape is consistent")
        })
        .collect();
    Ok(OracleCase { seed, net, inputs })
}

/// First disagreement between engine and oracle.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mismatch {
    pub frame: usize,
    pub layer: usize,
    pub y: usize,
    pub x: usize,
    pub channel: usize,
    pub engine_bits: u16,
    pub oracle_bits: u16,
}

/// Run the engine and the dense oracle and compare every layer of every
/// frame bit for bit.
pub fn compare_with_oracle(
    case: &OracleCase,
    scheme: Scheme,
    threaded: bool,
) -> Result<Option<Mismatch>> {
    let cfg = EngineConfig {
        scheme,
        threaded,
        capture_layers: true,
        ..EngineConfig::default()
    };
    let engine = run_network(&case.inputs, &case.net, &cfg)?;
    let oracle = reference_run(&case.inputs, &case.net)?;
    for (f, (e_frame, o_frame)) in engine.layers.iter().zip(&oracle).enumerate() {
        for (l, (e, o)) in e_frame.iter().zip(o_frame).enumerate() {
            if e.bit_eq(o) {
                continue;
            }
            for y in 0..o.height() {
                for x in 0..o.width() {
                    for c in 0..o.channels() {
                        let (a, b) = (e.get(y, x, c), o.get(y, x, c));
                        if a.to_bits() != b.to_bits() {
                            return Ok(Some(Mismatch {
                                frame: f,
                                layer: l,
                                y,
                                x,
                                channel: c,
                                engine_bits: a.to_bits(),
                                oracle_bits: b.to_bits(),
                            }));
                        }
                    }
                }
            }
            // Shapes differ.
            return Ok(Some(Mismatch {
                frame: f,
                layer: l,
                y: 0,
                x: 0,
                channel: 0,
                engine_bits: 0,
                oracle_bits: 0,
            }));
        }
    }
    Ok(None)
}
