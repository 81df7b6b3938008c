//! Cost parameters, named profiles and decode calibration.
//!
//! Profile files are JSON objects mapping a profile name to its parameters:
//!
//! ```json
//! { "default": { "t_decode_aer_base": 2.3119, "...": 0.0, "energy": { ... } } }
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netspec::NetworkKind;

/// Per-pixel decode time measured for `n` ac./sp. in one pixel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeAnchor {
    pub kind: NetworkKind,
    pub n: usize,
    pub t_us: f64,
}

/// ANN activations travel as AER words, SNN spikes as bitmask words.
pub const PAPER_DECODE_ANCHORS: [DecodeAnchor; 4] = [
    DecodeAnchor { kind: NetworkKind::Ann, n: 1, t_us: 2.52 },
    DecodeAnchor { kind: NetworkKind::Ann, n: 28, t_us: 8.14 },
    DecodeAnchor { kind: NetworkKind::Snn, n: 1, t_us: 5.14 },
    DecodeAnchor { kind: NetworkKind::Snn, n: 28, t_us: 8.04 },
];

/// `t(n) = base + slope * n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub base: f64,
    pub slope: f64,
}

impl LinearFit {
    pub fn eval(&self, n: usize) -> f64 {
        self.base + self.slope * n as f64
    }

    /// Least squares through the points; exact for two.
    pub fn fit(points: &[(f64, f64)]) -> Result<Self> {
        let n = points.len() as f64;
        let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
        let my = points.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
        if points.len() < 2 || sxx == 0.0 {
            return Err(Error::InvalidParameter(
                "decode anchors need at least two distinct counts per scheme".into(),
            ));
        }
        let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let slope = sxy / sxx;
        Ok(LinearFit {
            base: my - slope * mx,
            slope,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeFit {
    pub ann: LinearFit,
    pub snn: LinearFit,
}

pub fn calibrate_decode_params(anchors: &[DecodeAnchor]) -> Result<DecodeFit> {
    let pts = |k: NetworkKind| -> Vec<(f64, f64)> {
        anchors
            .iter()
            .filter(|a| a.kind == k)
            .map(|a| (a.n as f64, a.t_us))
            .collect()
    };
    Ok(DecodeFit {
        ann: LinearFit::fit(&pts(NetworkKind::Ann))?,
        snn: LinearFit::fit(&pts(NetworkKind::Snn))?,
    })
}

/// Smallest `n` in `1..=max_n` at which SNN decoding is faster.
pub fn crossover(fit: &DecodeFit, max_n: usize) -> Option<usize> {
    (1..=max_n).find(|&n| fit.snn.eval(n) < fit.ann.eval(n))
}

/// Energy per unit of each counter, in nanojoules.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyUnits {
    pub events_received: f64,
    pub words_decoded: f64,
    pub entries_decoded: f64,
    pub state_rounds: f64,
    pub state_blocks_rw: f64,
    pub vector_ops: f64,
    pub pixels_fired: f64,
    pub events_emitted: f64,
    pub words_emitted: f64,
}

impl EnergyUnits {
    /// In the order of [`super::Counters::NAMES`].
    pub fn values(&self) -> [f64; 9] {
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
}

/// Unit times in microseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    #[serde(default)]
    pub name: String,
    /// Free text describing the clock and memory assumptions.
    #[serde(default)]
    pub notes: String,
    pub t_decode_aer_base: f64,
    pub t_decode_aer_per_word: f64,
    pub t_decode_bitmask_base: f64,
    pub t_decode_bitmask_per_spike: f64,
    /// One grouped read and write of a pixel's neuron states.
    pub t_state_rw_block: f64,
    /// One 8-wide vector instruction.
    pub t_npe_op: f64,
    pub t_fire_pixel: f64,
    pub t_emit_header: f64,
    pub t_emit_word: f64,
    pub t_sync: f64,
    pub energy: EnergyUnits,
}

impl CostParams {
    /// Decode terms fitted to the measured anchors; the remaining unit costs
    /// are relative choices, memory traffic dominating arithmetic.
    pub fn default_profile() -> Self {
        let fit = calibrate_decode_params(&PAPER_DECODE_ANCHORS)
            .expect("built-in anchors are well formed");
        CostParams {
            name: "default".into(),
            notes: "decode fitted to per-pixel anchors; other units relative, \
                    state read+write of a 32-channel block ~100 vector ops"
                .into(),
            t_decode_aer_base: fit.ann.base,
            t_decode_aer_per_word: fit.ann.slope,
            t_decode_bitmask_base: fit.snn.base,
            t_decode_bitmask_per_spike: fit.snn.slope,
            t_state_rw_block: 1.5,
            t_npe_op: 0.015,
            t_fire_pixel: 0.2,
            t_emit_header: 0.3,
            t_emit_word: 0.05,
            t_sync: 0.5,
            energy: EnergyUnits {
                events_received: 0.02,
                words_decoded: 0.05,
                entries_decoded: 0.02,
                state_rounds: 0.0,
                state_blocks_rw: 1.2,
                vector_ops: 0.03,
                pixels_fired: 0.1,
                events_emitted: 0.05,
                words_emitted: 0.02,
            },
        }
    }

    pub fn decode_fit(&self) -> DecodeFit {
        DecodeFit {
            ann: LinearFit {
                base: self.t_decode_aer_base,
                slope: self.t_decode_aer_per_word,
            },
            snn: LinearFit {
                base: self.t_decode_bitmask_base,
                slope: self.t_decode_bitmask_per_spike,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let times = [
            ("t_decode_aer_base", self.t_decode_aer_base),
            ("t_decode_aer_per_word", self.t_decode_aer_per_word),
            ("t_decode_bitmask_base", self.t_decode_bitmask_base),
            ("t_decode_bitmask_per_spike", self.t_decode_bitmask_per_spike),
            ("t_state_rw_block", self.t_state_rw_block),
            ("t_npe_op", self.t_npe_op),
            ("t_fire_pixel", self.t_fire_pixel),
            ("t_emit_header", self.t_emit_header),
            ("t_emit_word", self.t_emit_word),
            ("t_sync", self.t_sync),
        ];
        for (name, v) in times {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        if let Some(v) = self.energy.values().iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter(format!("energy units must be >= 0, got {v}")));
        }
        Ok(())
    }

    /// Load a named profile from a profile file.
    pub fn load(path: impl AsRef<Path>, name: &str) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut all: BTreeMap<String, CostParams> = serde_json::from_str(&text)?;
        let mut p = all.remove(name).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "profile {name:?} not found; available: {:?}",
                all.keys().collect::<Vec<_>>()
            ))
        })?;
        p.name = name.to_string();
        p.validate()?;
        Ok(p)
    }

    pub fn save_profiles(profiles: &[CostParams], path: impl AsRef<Path>) -> Result<()> {
        let map: BTreeMap<&str, &CostParams> =
            profiles.iter().map(|p| (p.name.as_str(), p)).collect();
        fs::write(path, serde_json::to_string_pretty(&map)? + "\n")?;
        Ok(())
    }
}

impl Default for CostParams {
    fn default() -> Self {
        Self::default_profile()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_from_anchors() {
        let fit = calibrate_decode_params(&PAPER_DECODE_ANCHORS).unwrap();
        // a + b = 2.52, a + 28b = 8.14
        assert!((fit.ann.slope - 5.62 / 27.0).abs() < 1e-12);
        assert!((fit.ann.base - 2.3119).abs() < 1e-4);
        assert!((fit.snn.slope - 2.90 / 27.0).abs() < 1e-12);
        assert!((fit.snn.base - 5.0326).abs() < 1e-4);
        assert_eq!(crossover(&fit, 32), Some(28));
    }

    #[test]
    fn degenerate_anchors() {
        let a = [
            DecodeAnchor { kind: NetworkKind::Ann, n: 4, t_us: 1.0 },
            DecodeAnchor { kind: NetworkKind::Ann, n: 4, t_us: 2.0 },
            PAPER_DECODE_ANCHORS[2],
            PAPER_DECODE_ANCHORS[3],
        ];
        assert!(calibrate_decode_params(&a).is_err());
    }

    #[test]
    fn profile_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("profiles.json");
        let mut fast = CostParams::default_profile();
        fast.name = "fast".into();
        fast.t_state_rw_block = 0.5;
        CostParams::save_profiles(&[CostParams::default_profile(), fast.clone()], &path).unwrap();
        assert_eq!(CostParams::load(&path, "fast").unwrap(), fast);
        assert!(CostParams::load(&path, "missing").is_err());
    }

    #[test]
    fn negative_parameter_rejected() {
        let mut p = CostParams::default_profile();
        p.t_npe_op = -1.0;
        assert!(p.validate().is_err());
    }
}
