//! Synthetic supervised flow task: sparse dots translating at a constant
//! sub-pixel velocity on a torus.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evio::{CameraSpike, FlowGroundTruth};
use crate::netspec::INPUT_CHANNELS;
use crate::tensorcore::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub samples: usize,
    /// Fraction of pixels carrying a dot.
    pub dot_fraction: f64,
    /// Largest velocity component in pixels per frame; must stay below one
    /// so the flow head's softsign can reach it.
    pub max_speed: f64,
    pub seed: u64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            height: 16,
            width: 16,
            frames: 6,
            samples: 4,
            dot_fraction: 0.08,
            max_speed: 0.8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub height: usize,
    pub width: usize,
    /// Per frame, `H x W x 2` counts; channel = polarity.
    pub inputs: Vec<Vec<f64>>,
    /// Per frame, pixels with at least one event.
    pub masks: Vec<Vec<bool>>,
    /// `(u, v)` in pixels per frame, uniform over the image.
    pub flow: (f64, f64),
}

fn occupancy(dots: &[(f64, f64)], v: (f64, f64), f: f64, h: usize, w: usize) -> BTreeSet<(usize, usize)> {
    dots.iter()
        .map(|&(y, x)| {
            let yy = (y + v.1 * f).round().rem_euclid(h as f64) as usize % h;
            let xx = (x + v.0 * f).round().rem_euclid(w as f64) as usize % w;
            (yy, xx)
        })
        .collect()
}

pub fn translating_task(cfg: &TaskConfig) -> Result<Vec<Sample>> {
    if cfg.height == 0 || cfg.width == 0 || cfg.frames == 0 {
        return Err(Error::InvalidParameter("task needs a non-empty image and frames".into()));
    }
    if !(cfg.max_speed > 0.0 && cfg.max_speed < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "max_speed must lie in (0, 1), got {}",
            cfg.max_speed
        )));
    }
    let (h, w) = (cfg.height, cfg.width);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_dots = ((cfg.dot_fraction * (h * w) as f64).round() as usize).max(1);
    let mut out = Vec::with_capacity(cfg.samples);
    for _ in 0..cfg.samples {
        let dots: Vec<(f64, f64)> = (0..n_dots)
            .map(|_| (rng.gen_range(0.0..h as f64), rng.gen_range(0.0..w as f64)))
            .collect();
        let v = (
            rng.gen_range(-cfg.max_speed..cfg.max_speed),
            rng.gen_range(-cfg.max_speed..cfg.max_speed),
        );
        let mut inputs = Vec::with_capacity(cfg.frames);
        let mut masks = Vec::with_capacity(cfg.frames);
        // The pattern appears at frame 0, so the first frame is all ON events.
        let mut prev = BTreeSet::new();
        for f in 0..cfg.frames {
            let cur = occupancy(&dots, v, f as f64, h, w);
            let mut x = vec![0.0; h * w * INPUT_CHANNELS];
            let mut m = vec![false; h * w];
            for &(y, xx) in cur.difference(&prev) {
                x[(y * w + xx) * INPUT_CHANNELS + 1] += 1.0;
                m[y * w + xx] = true;
            }
            for &(y, xx) in prev.difference(&cur) {
                x[(y * w + xx) * INPUT_CHANNELS] += 1.0;
                m[y * w + xx] = true;
            }
            inputs.push(x);
            masks.push(m);
            prev = cur;
        }
        out.push(Sample {
            height: h,
            width: w,
            inputs,
            masks,
            flow: v,
        });
    }
    Ok(out)
}

impl Sample {
    /// Per-pixel target for one frame, `H x W x 2`.
    pub fn target(&self) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.height * self.width * 2);
        for _ in 0..self.height * self.width {
            t.push(self.flow.0);
            t.push(self.flow.1);
        }
        t
    }

    pub fn input_tensors(&self) -> Result<Vec<Tensor>> {
        self.inputs
            .iter()
            .map(|x| {
                let v: Vec<f32> = x.iter().map(|&a| a as f32).collect();
                Tensor::from_f32(self.height, self.width, INPUT_CHANNELS, &v)
            })
            .collect()
    }

    pub fn ground_truth(&self) -> Result<FlowGroundTruth> {
        let flow = self.target().into_iter().map(|v| v as f32).collect();
        FlowGroundTruth::new(self.height, self.width, flow, vec![true; self.height * self.width])
    }

    /// Camera spikes reproducing the input frames: frame `f` occupies
    /// `[f * window_us, (f + 1) * window_us)`, spikes in row-major order.
    pub fn spikes(&self, window_us: u64) -> Vec<CameraSpike> {
        let mut out = Vec::new();
        for (f, x) in self.inputs.iter().enumerate() {
            let base = f as u64 * window_us;
            let mut k = 0u64;
            for y in 0..self.height {
                for xx in 0..self.width {
                    for p in 0..INPUT_CHANNELS {
                        for _ in 0..x[(y * self.width + xx) * INPUT_CHANNELS + p] as usize {
                            out.push(CameraSpike {
                                t: base + k.min(window_us.saturating_sub(1)),
                                x: xx as u16,
                                y: y as u16,
                                p: p as u8,
                            });
                            k += 1;
                        }
                    }
                }
            }
        }
        out
    }
}
