//! Invariant suite run by the `self-test` subcommand.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::costsim::{simulate_timeline, CostParams, PAPER_DECODE_ANCHORS};
use crate::dfengine::codec::{decode_events, encode_events};
use crate::dfengine::{run_network, EngineConfig, Scheme};
use crate::error::Result;
use crate::experiments::controlled::{affine_fit_residual, controlled_sweep, sweep_csv, sweep_point};
use crate::experiments::fixtures::fixture_cost;
use crate::experiments::oracle::{compare_with_oracle, random_case};
use crate::metrics::{neuron_density, pixel_density};
use crate::netspec::{firenet, firenet_layout, random_network, FireNetShape, InitRanges, NetworkKind};
use crate::sparsetrain::{grad_check, train, translating_task, TaskConfig, TrainConfig, TrainNet};
use crate::tensorcore::{Bf16, Tensor};

#[derive(Clone, Debug)]
pub struct SelfTestOptions {
    pub oracle_instances: usize,
    pub codec_payloads: usize,
    pub seed: u64,
}

impl Default for SelfTestOptions {
    fn default() -> Self {
        SelfTestOptions {
            oracle_instances: 200,
            codec_payloads: 100_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(id: usize, name: &'static str, r: Result<(bool, String)>) -> Check {
    let (passed, detail) = r.unwrap_or_else(|e| (false, format!("error: {e}")));
    Check {
        id,
        name,
        passed,
        detail,
    }
}

fn oracle(opts: &SelfTestOptions) -> Result<(bool, String)> {
    for i in 0..opts.oracle_instances as u64 {
        let case = random_case(opts.seed.wrapping_add(i), None, None, None)?;
        let scheme = if i % 2 == 0 { Scheme::Aer } else { Scheme::Bitmask };
        if let Some(m) = compare_with_oracle(&case, scheme, i % 3 == 0)? {
            return Ok((false, format!("seed {}: {m:?}", case.seed)));
        }
    }
    Ok((true, format!("{} instances bit-identical", opts.oracle_instances)))
}

fn grouping(opts: &SelfTestOptions) -> Result<(bool, String)> {
    let p = CostParams::default_profile();
    let mut got = Vec::new();
    for n in [1, 4, 6, 10] {
        let pt = sweep_point(NetworkKind::Ann, 1, n, &p, opts.seed)?;
        got.push(pt.state_rounds);
    }
    Ok((got == [1, 1, 2, 3], format!("rounds {got:?}")))
}

fn decode_anchors() -> Result<(bool, String)> {
    let fit = CostParams::default_profile().decode_fit();
    let mut worst = 0.0f64;
    for a in PAPER_DECODE_ANCHORS {
        let f = match a.kind {
            NetworkKind::Ann => fit.ann,
            NetworkKind::Snn => fit.snn,
        };
        worst = worst.max((f.eval(a.n) - a.t_us).abs());
    }
    let cross = crate::costsim::crossover(&fit, 64);
    Ok((worst <= 1e-6 && cross == Some(28), format!("max anchor error {worst:.2e} us, crossover {cross:?}")))
}

fn sweep(opts: &SelfTestOptions) -> Result<(bool, String)> {
    let p = CostParams::default_profile();
    let mut ok = true;
    let mut detail = Vec::new();
    for kind in [NetworkKind::Ann, NetworkKind::Snn] {
        let pts = controlled_sweep(kind, &p, opts.seed)?;
        let xy: Vec<(f64, f64)> = pts[..5].iter().map(|q| (q.pixels as f64, q.time_us)).collect();
        let (_, _, resid) = affine_fit_residual(&xy);
        let t = |px, n| pts.iter().find(|q| q.pixels == px && q.per_pixel == n).map_or(f64::NAN, |q| q.time_us);
        let pass = resid < 0.01 && t(151, 4) < t(204, 1);
        ok &= pass;
        detail.push(format!(
            "{kind:?}: residual {:.4}%, 604/151 {:.1} us vs 204/204 {:.1} us",
            resid * 100.0,
            t(151, 4),
            t(204, 1)
        ));
    }
    Ok((ok, detail.join("; ")))
}

fn densities() -> Result<(bool, String)> {
    let mut a = Tensor::zeros(5, 5, 8);
    for c in 0..8 {
        a.set(0, 0, c, Bf16::ONE);
        a.set(4, 4, c, Bf16::ONE);
    }
    let mut b = Tensor::zeros(5, 5, 8);
    for i in 0..16 {
        b.set(i / 5, i % 5, 0, Bf16::ONE);
    }
    let got = (neuron_density(&a), pixel_density(&a), pixel_density(&b));
    Ok((got == (0.08, 0.08, 0.64), format!("{got:?}")))
}

fn codec(opts: &SelfTestOptions) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xc0dec);
    let all: Vec<u16> = (0..256).collect();
    for i in 0..opts.codec_payloads {
        let scheme = if i % 2 == 0 { Scheme::Aer } else { Scheme::Bitmask };
        let channels = rng.gen_range(1..=256usize);
        let n = rng.gen_range(0..=channels.min(64));
        let mut chans: Vec<u16> = all[..channels].choose_multiple(&mut rng, n).copied().collect();
        chans.sort_unstable();
        let acts: Vec<(u16, Bf16)> = chans
            .into_iter()
            .map(|c| {
                let v = match scheme {
                    Scheme::Aer => loop {
                        let v = Bf16::from_bits(rng.gen());
                        if !v.is_zero() && !v.is_nan() {
                            break v;
                        }
                    },
                    Scheme::Bitmask => Bf16::ONE,
                };
                (c, v)
            })
            .collect();
        let words = encode_events(&acts, scheme, channels)?;
        let back = decode_events(&words, scheme);
        if back.len() != acts.len()
            || back.iter().zip(&acts).any(|(a, b)| a.0 != b.0 || a.1.to_bits() != b.1.to_bits())
        {
            return Ok((false, format!("payload {i} ({scheme}) did not round-trip")));
        }
    }
    Ok((true, format!("{} payloads", opts.codec_payloads)))
}

fn gradients(opts: &SelfTestOptions) -> Result<(bool, String)> {
    let data = translating_task(&TaskConfig {
        height: 8,
        width: 8,
        frames: 3,
        samples: 2,
        seed: opts.seed,
        ..TaskConfig::default()
    })?;
    let mut worst = 0.0f64;
    for (i, kind) in [NetworkKind::Ann, NetworkKind::Snn].into_iter().enumerate() {
        let layout = firenet_layout(kind, 4);
        let mut hidden = layout[1];
        hidden.in_channels = 2;
        let net = random_network(&[hidden, layout[7]], 8, 8, InitRanges::default(), opts.seed + i as u64)?;
        let cfg = TrainConfig {
            lambda_s: 0.01,
            ..TrainConfig::default()
        };
        let r = grad_check(&TrainNet::from_spec(&net)?, &data, &cfg, 20, 1e-5, opts.seed)?;
        worst = worst.max(r.worst());
    }
    Ok((worst < 1e-4, format!("max relative error {worst:.2e}")))
}

fn sparsification(opts: &SelfTestOptions) -> Result<(bool, String)> {
    let data = translating_task(&TaskConfig {
        height: 12,
        width: 12,
        frames: 4,
        samples: 3,
        seed: opts.seed,
        ..TaskConfig::default()
    })?;
    let net = firenet(
        FireNetShape {
            kind: NetworkKind::Snn,
            channels: 4,
            height: 12,
            width: 12,
        },
        opts.seed,
    )?;
    let run = |lambda_s| {
        train(
            &net,
            &data,
            &TrainConfig {
                lambda_s,
                epochs: 10,
                ..TrainConfig::default()
            },
        )
    };
    let dense = run(0.0)?.final_eval.mean_neuron_density;
    let sparse = run(1e-3)?.final_eval.mean_neuron_density;
    Ok((sparse < dense, format!("density {sparse:.4} with vs {dense:.4} without")))
}

fn ordering(opts: &SelfTestOptions) -> Result<(bool, String)> {
    let p = CostParams::default_profile();
    let ann = fixture_cost(NetworkKind::Ann, &p, opts.seed)?;
    let snn = fixture_cost(NetworkKind::Snn, &p, opts.seed)?;
    Ok((
        snn.mean_latency_us < ann.mean_latency_us && snn.mean_energy_uj < ann.mean_energy_uj,
        format!(
            "SNN {:.1} us / {:.2} uJ, ANN {:.1} us / {:.2} uJ",
            snn.mean_latency_us, snn.mean_energy_uj, ann.mean_latency_us, ann.mean_energy_uj
        ),
    ))
}

fn determinism(opts: &SelfTestOptions) -> Result<(bool, String)> {
    let p = CostParams::default_profile();
    let a = sweep_csv(&controlled_sweep(NetworkKind::Snn, &p, opts.seed)?, None);
    let b = sweep_csv(&controlled_sweep(NetworkKind::Snn, &p, opts.seed)?, None);
    let case = random_case(opts.seed, Some(NetworkKind::Snn), Some(true), None)?;
    let run = |threaded| {
        run_network(
            &case.inputs,
            &case.net,
            &EngineConfig {
                threaded,
                ..EngineConfig::default()
            },
        )
    };
    let (s, t) = (run(false)?, run(true)?);
    let same_flow = s.flow.iter().zip(&t.flow).all(|(x, y)| x.bit_eq(y));
    let ls = simulate_timeline(&s.traces, &p)?;
    let lt = simulate_timeline(&t.traces, &p)?;
    let ok = a == b && same_flow && crate::costsim::cost_csv(&ls, None) == crate::costsim::cost_csv(&lt, None);
    Ok((ok, "repeated and threaded runs identical".into()))
}

/// Run every check; slow ones scale with the options.
pub fn self_test(opts: &SelfTestOptions) -> Vec<Check> {
    vec![
        check(1, "oracle equivalence", oracle(opts)),
        check(2, "grouping rounds", grouping(opts)),
        check(3, "decode calibration", decode_anchors()),
        check(4, "controlled sweep shape", sweep(opts)),
        check(5, "density formulas", densities()),
        check(6, "codec round trip", codec(opts)),
        check(7, "surrogate gradient check", gradients(opts)),
        check(8, "sparsification effect", sparsification(opts)),
        check(9, "SNN cheaper than ANN on density fixtures", ordering(opts)),
        check(10, "determinism", determinism(opts)),
    ]
}
