//! Time and energy accounting over engine cost traces.
//!
//! Every core is a single sequential server. It works through its trace in
//! order; a `Receive` stalls it until the upstream core has emitted the item.
//! Camera input is all available at time zero. Frames are simulated
//! independently, each starting from idle cores at time zero.

mod profile;
mod report;

pub use profile::{
    calibrate_decode_params, crossover, DecodeAnchor, DecodeFit, EnergyUnits, LinearFit,
    CostParams, PAPER_DECODE_ANCHORS,
};
pub use report::{cost_csv, timeline_csv, write_cost_csv, write_cost_json, write_timeline_csv};

use serde::{Deserialize, Serialize};

use crate::dfengine::{CostOp, FrameTrace, Phase, Scheme};
use crate::error::{Error, Result};

/// Additive per-core activity counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub events_received: u64,
    pub words_decoded: u64,
    pub entries_decoded: u64,
    pub state_rounds: u64,
    pub state_blocks_rw: u64,
    pub vector_ops: u64,
    pub pixels_fired: u64,
    pub events_emitted: u64,
    pub words_emitted: u64,
}

impl Counters {
    pub const NAMES: [&'static str; 9] = [
        "events_received",
        "words_decoded",
        "entries_decoded",
        "state_rounds",
        "state_blocks_rw",
        "vector_ops",
        "pixels_fired",
        "events_emitted",
        "words_emitted",
    ];

    pub fn values(&self) -> [u64; 9] {
        [
            self.events_received,
            self.words_decoded,
            self.entries_decoded,
            self.state_rounds,
            self.state_blocks_rw,
            self.vector_ops,
            self.pixels_fired,
            self.events_emitted,
            self.words_emitted,
        ]
    }

    pub fn add(&mut self, o: &Counters) {
        self.events_received += o.events_received;
        self.words_decoded += o.words_decoded;
        self.entries_decoded += o.entries_decoded;
        self.state_rounds += o.state_rounds;
        self.state_blocks_rw += o.state_blocks_rw;
        self.vector_ops += o.vector_ops;
        self.pixels_fired += o.pixels_fired;
        self.events_emitted += o.events_emitted;
        self.words_emitted += o.words_emitted;
    }

    /// Energy in microjoules.
    pub fn energy_uj(&self, e: &EnergyUnits) -> f64 {
        self.values()
            .iter()
            .zip(e.values())
            .map(|(&c, u)| c as f64 * u)
            .sum::<f64>()
            / 1000.0
    }
}

/// A stretch of uninterrupted work on one core.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start_us: f64,
    pub end_us: f64,
    pub phase: Phase,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoreLedger {
    pub core: usize,
    pub counters: Counters,
    pub busy: Vec<Interval>,
    pub busy_us: f64,
    /// End of the forward pass, when the sync leaves.
    pub sync_us: f64,
    /// End of all work, recurrent pass included.
    pub completion_us: f64,
    pub energy_uj: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameLedger {
    pub frame: usize,
    /// First camera spike to the last flow output.
    pub latency_us: f64,
    /// First camera spike to the end of all work on every core.
    pub total_time_us: f64,
    pub energy_uj: f64,
    pub cores: Vec<CoreLedger>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub profile: String,
    pub frames: Vec<FrameLedger>,
    pub totals: Counters,
    pub mean_latency_us: f64,
    pub mean_total_time_us: f64,
    pub mean_energy_uj: f64,
    pub total_energy_uj: f64,
}

fn op_time(op: &CostOp, p: &CostParams) -> f64 {
    match *op {
        CostOp::Receive { .. } | CostOp::Phase(_) => 0.0,
        CostOp::Decode {
            scheme,
            words,
            entries,
        } => match scheme {
            Scheme::Aer => p.t_decode_aer_base + p.t_decode_aer_per_word * words as f64,
            Scheme::Bitmask => {
                p.t_decode_bitmask_base + p.t_decode_bitmask_per_spike * entries as f64
            }
        },
        CostOp::StateAccess { blocks } => p.t_state_rw_block * blocks as f64,
        CostOp::Vector { ops } => p.t_npe_op * ops as f64,
        CostOp::Fire { pixels, ops } => p.t_fire_pixel * pixels as f64 + p.t_npe_op * ops as f64,
        CostOp::Emit { words, sync } => {
            if sync {
                p.t_sync
            } else {
                p.t_emit_header + p.t_emit_word * (words.saturating_sub(1)) as f64
            }
        }
    }
}

fn count(op: &CostOp, c: &mut Counters) {
    match *op {
        CostOp::Receive { .. } => c.events_received += 1,
        CostOp::Decode { words, entries, .. } => {
            c.words_decoded += words as u64;
            c.entries_decoded += entries as u64;
        }
        CostOp::StateAccess { blocks } => {
            c.state_rounds += 1;
            c.state_blocks_rw += blocks as u64;
        }
        CostOp::Vector { ops } => c.vector_ops += ops as u64,
        CostOp::Fire { pixels, ops } => {
            c.pixels_fired += pixels as u64;
            c.vector_ops += ops as u64;
        }
        CostOp::Emit { words, .. } => {
            c.events_emitted += 1;
            c.words_emitted += words as u64;
        }
        CostOp::Phase(_) => {}
    }
}

/// Counters of a trace, without timing.
pub fn count_ops(ops: &[CostOp]) -> Counters {
    let mut c = Counters::default();
    for op in ops {
        count(op, &mut c);
    }
    c
}

/// Time one frame of the cascade.
pub fn simulate_frame(frame: usize, trace: &FrameTrace, p: &CostParams) -> Result<FrameLedger> {
    // Emission times of the previous core's items; the camera emits at 0.
    let mut upstream: Vec<f64> = vec![0.0; trace.camera_items];
    let mut cores = Vec::with_capacity(trace.cores.len());
    for (ci, ops) in trace.cores.iter().enumerate() {
        let mut t = 0.0f64;
        let mut emitted = Vec::new();
        let mut counters = Counters::default();
        let mut busy: Vec<Interval> = Vec::new();
        let mut phase = Phase::Forward;
        let mut open: Option<f64> = None;
        let mut sync_us = 0.0;
        for op in ops {
            count(op, &mut counters);
            match *op {
                CostOp::Receive { item } => {
                    let ready = *upstream.get(item).ok_or_else(|| Error::Causality {
                        core: ci,
                        message: format!(
                            "item {item} consumed but upstream emitted only {}",
                            upstream.len()
                        ),
                    })?;
                    if ready > t {
                        if let Some(s) = open.take() {
                            if t > s {
                                busy.push(Interval { start_us: s, end_us: t, phase });
                            }
                        }
                        t = ready;
                    }
                }
                CostOp::Phase(ph) => {
                    if let Some(s) = open.take() {
                        if t > s {
                            busy.push(Interval { start_us: s, end_us: t, phase });
                        }
                    }
                    phase = ph;
                }
                _ => {
                    if open.is_none() {
                        open = Some(t);
                    }
                    t += op_time(op, p);
                    if let CostOp::Emit { sync, .. } = *op {
                        emitted.push(t);
                        if sync {
                            sync_us = t;
                        }
                    }
                }
            }
        }
        if let Some(s) = open.take() {
            if t > s {
                busy.push(Interval { start_us: s, end_us: t, phase });
            }
        }
        let busy_us = busy.iter().map(|i| i.end_us - i.start_us).sum();
        cores.push(CoreLedger {
            core: ci,
            energy_uj: counters.energy_uj(&p.energy),
            counters,
            busy,
            busy_us,
            sync_us,
            completion_us: t,
        });
        upstream = emitted;
    }
    let latency_us = cores.last().map_or(0.0, |c| c.sync_us);
    let total_time_us = cores.iter().map(|c| c.completion_us).fold(latency_us, f64::max);
    let energy_uj = cores.iter().map(|c| c.energy_uj).sum();
    Ok(FrameLedger {
        frame,
        latency_us,
        total_time_us,
        energy_uj,
        cores,
    })
}

/// Time and energy of a whole run.
pub fn simulate_timeline(traces: &[FrameTrace], p: &CostParams) -> Result<CostLedger> {
    p.validate()?;
    let frames = traces
        .iter()
        .enumerate()
        .map(|(i, t)| simulate_frame(i, t, p))
        .collect::<Result<Vec<_>>>()?;
    let mut totals = Counters::default();
    for f in &frames {
        for c in &f.cores {
            totals.add(&c.counters);
        }
    }
    let n = frames.len().max(1) as f64;
    let total_energy_uj: f64 = frames.iter().map(|f| f.energy_uj).sum();
    Ok(CostLedger {
        profile: p.name.clone(),
        mean_latency_us: frames.iter().map(|f| f.latency_us).sum::<f64>() / n,
        mean_total_time_us: frames.iter().map(|f| f.total_time_us).sum::<f64>() / n,
        mean_energy_uj: total_energy_uj / n,
        total_energy_uj,
        totals,
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> CostParams {
        CostParams::default_profile()
    }

    #[test]
    fn sequential_server_with_stall() {
        let p = params();
        let trace = FrameTrace {
            camera_items: 1,
            cores: vec![
                vec![
                    CostOp::Receive { item: 0 },
                    CostOp::Vector { ops: 100 },
                    CostOp::Emit { words: 1, sync: true },
                ],
                vec![
                    CostOp::Vector { ops: 10 },
                    CostOp::Receive { item: 0 },
                    CostOp::Vector { ops: 10 },
                    CostOp::Emit { words: 1, sync: true },
                ],
            ],
        };
        let f = simulate_frame(0, &trace, &p).unwrap();
        let t0 = 100.0 * p.t_npe_op + p.t_sync;
        assert!((f.cores[0].completion_us - t0).abs() < 1e-9);
        assert!((f.cores[1].completion_us - (t0 + 10.0 * p.t_npe_op + p.t_sync)).abs() < 1e-9);
        assert_eq!(f.cores[1].busy.len(), 2);
        assert!(f.latency_us <= f.total_time_us);
    }

    #[test]
    fn causality_violation() {
        let trace = FrameTrace {
            camera_items: 1,
            cores: vec![vec![CostOp::Receive { item: 3 }]],
        };
        assert!(matches!(
            simulate_frame(0, &trace, &params()),
            Err(Error::Causality { core: 0, .. })
        ));
    }

    #[test]
    fn energy_is_linear_in_counters() {
        let e = params().energy;
        let mut a = Counters {
            vector_ops: 10,
            state_blocks_rw: 3,
            ..Counters::default()
        };
        let b = a;
        let single = a.energy_uj(&e);
        a.add(&b);
        assert!((a.energy_uj(&e) - 2.0 * single).abs() < 1e-12);
    }
}
