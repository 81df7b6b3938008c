//! BFloat16 tensors and the dense reference operators.
//!
//! The dense convolution here is the oracle the event-driven engine is
//! checked against. Both sides accumulate in the same order: for an output
//! neuron, kernel taps in row-major order (which is the order in which the
//! source pixels arrive on a spatially sorted stream), and within each tap the
//! input channels ascending.

mod bf16;

pub use bf16::Bf16;

use crate::error::{Error, Result};

/// Dense `height x width x channels` array stored row-major in `(y, x, c)` order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<Bf16>,
}

impl Tensor {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Tensor {
            height,
            width,
            channels,
            data: vec![Bf16::ZERO; height * width * channels],
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: Bf16) -> Self {
        Tensor {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_bf16(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<Bf16>,
    ) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "tensor data has {} values, expected {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        Ok(Tensor {
            height,
            width,
            channels,
            data,
        })
    }

    /// Build from `f32` values, rounding each one.
    pub fn from_f32(height: usize, width: usize, channels: usize, data: &[f32]) -> Result<Self> {
        Self::from_bf16(
            height,
            width,
            channels,
            data.iter().map(|&v| Bf16::from_f32(v)).collect(),
        )
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn data(&self) -> &[Bf16] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [Bf16] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> Bf16 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: Bf16) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    /// All channels of one pixel.
    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[Bf16] {
        let i = self.index(y, x, 0);
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [Bf16] {
        let i = self.index(y, x, 0);
        let c = self.channels;
        &mut self.data[i..i + c]
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        self.data.iter().map(|v| v.to_f32()).collect()
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|v| !v.is_zero()).count()
    }

    /// Bitwise equality, distinguishing signed zeros.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape() == other.shape()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    fn check_same_shape(&self, other: &Tensor, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }
}

/// Convolution kernel, `k x k x cin x cout`, row-major in `(ky, kx, ci, co)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Kernel {
    k: usize,
    cin: usize,
    cout: usize,
    data: Vec<Bf16>,
}

impl Kernel {
    pub fn zeros(k: usize, cin: usize, cout: usize) -> Self {
        Kernel {
            k,
            cin,
            cout,
            data: vec![Bf16::ZERO; k * k * cin * cout],
        }
    }

    pub fn from_bf16(k: usize, cin: usize, cout: usize, data: Vec<Bf16>) -> Result<Self> {
        if k % 2 == 0 {
            return Err(Error::Shape(format!("kernel size {k} must be odd")));
        }
        if data.len() != k * k * cin * cout {
            return Err(Error::Shape(format!(
                "kernel data has {} values, expected {k}x{k}x{cin}x{cout}",
                data.len()
            )));
        }
        Ok(Kernel { k, cin, cout, data })
    }

    pub fn from_f32(k: usize, cin: usize, cout: usize, data: &[f32]) -> Result<Self> {
        Self::from_bf16(k, cin, cout, data.iter().map(|&v| Bf16::from_f32(v)).collect())
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn radius(&self) -> usize {
        self.k / 2
    }

    #[inline]
    pub fn cin(&self) -> usize {
        self.cin
    }

    #[inline]
    pub fn cout(&self) -> usize {
        self.cout
    }

    #[inline]
    pub fn data(&self) -> &[Bf16] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [Bf16] {
        &mut self.data
    }

    /// Output-channel weight vector for one tap and input channel.
    #[inline]
    pub fn taps(&self, ky: usize, kx: usize, ci: usize) -> &[Bf16] {
        let i = ((ky * self.k + kx) * self.cin + ci) * self.cout;
        &self.data[i..i + self.cout]
    }

    #[inline]
    pub fn get(&self, ky: usize, kx: usize, ci: usize, co: usize) -> Bf16 {
        self.data[((ky * self.k + kx) * self.cin + ci) * self.cout + co]
    }
}

/// Accumulate `conv(input, kernel)` into `acc`, stride 1, same-zero padding.
///
/// Per output neuron the multiply-accumulates run taps row-major, then
/// input channels ascending, each step rounded to BFloat16.
pub fn conv_accumulate(acc: &mut Tensor, input: &Tensor, kernel: &Kernel) -> Result<()> {
    if input.channels != kernel.cin {
        return Err(Error::Shape(format!(
            "input has {} channels, kernel expects {}",
            input.channels, kernel.cin
        )));
    }
    if acc.shape() != (input.height, input.width, kernel.cout) {
        return Err(Error::Shape(format!(
            "accumulator {:?} does not match output {:?}",
            acc.shape(),
            (input.height, input.width, kernel.cout)
        )));
    }
    let r = kernel.radius() as isize;
    let (h, w) = (input.height as isize, input.width as isize);
    for oy in 0..h {
        for ox in 0..w {
            for ky in 0..kernel.k {
                let iy = oy + ky as isize - r;
                if iy < 0 || iy >= h {
                    continue;
                }
                for kx in 0..kernel.k {
                    let ix = ox + kx as isize - r;
                    if ix < 0 || ix >= w {
                        continue;
                    }
                    for ci in 0..kernel.cin {
                        let a = input.get(iy as usize, ix as usize, ci);
                        let taps = kernel.taps(ky, kx, ci);
                        let out = acc.pixel_mut(oy as usize, ox as usize);
                        for (o, &wt) in out.iter_mut().zip(taps) {
                            *o = Bf16::mac(*o, a, wt);
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

/// Add a per-channel bias, rounding each sum.
pub fn add_bias(t: &mut Tensor, bias: &[Bf16]) -> Result<()> {
    if bias.len() != t.channels {
        return Err(Error::Shape(format!(
            "bias has {} values for {} channels",
            bias.len(),
            t.channels
        )));
    }
    for px in t.data.chunks_mut(t.channels) {
        for (v, &b) in px.iter_mut().zip(bias) {
            *v = v.add(b);
        }
    }
    Ok(())
}

/// Standard stride-1 same-padded convolution plus bias.
///
/// The bias is added after the last multiply-accumulate, which is when the
/// engine adds it (at firing time).
pub fn dense_conv2d(input: &Tensor, kernel: &Kernel, bias: &[Bf16]) -> Result<Tensor> {
    if bias.len() != kernel.cout && !bias.is_empty() {
        return Err(Error::Shape(format!(
            "bias has {} values, kernel has {} outputs",
            bias.len(),
            kernel.cout
        )));
    }
    let mut out = Tensor::zeros(input.height, input.width, kernel.cout);
    conv_accumulate(&mut out, input, kernel)?;
    if !bias.is_empty() {
        add_bias(&mut out, bias)?;
    }
    Ok(out)
}

/// Check that every threshold is strictly positive.
pub fn check_thresholds(thresholds: &[Bf16]) -> Result<()> {
    for (c, t) in thresholds.iter().enumerate() {
        if !(t.to_f32() > 0.0) || t.is_nan() {
            return Err(Error::InvalidParameter(format!(
                "threshold for channel {c} must be > 0, got {t}"
            )));
        }
    }
    Ok(())
}

/// Forced-activation-threshold ReLU applied to one value.
#[inline]
pub fn fatrelu_value(x: Bf16, threshold: Bf16) -> Bf16 {
    if x.gt(threshold) {
        x
    } else {
        Bf16::ZERO
    }
}

/// `out = x if x > T[c] else 0`, per channel.
pub fn fatrelu(x: &Tensor, thresholds: &[Bf16]) -> Result<Tensor> {
    if thresholds.len() != x.channels {
        return Err(Error::Shape(format!(
            "{} thresholds for {} channels",
            thresholds.len(),
            x.channels
        )));
    }
    check_thresholds(thresholds)?;
    let mut out = x.clone();
    for px in out.data.chunks_mut(x.channels) {
        for (v, &t) in px.iter_mut().zip(thresholds) {
            *v = fatrelu_value(*v, t);
        }
    }
    Ok(out)
}

/// Largest BFloat16 strictly below one.
const BELOW_ONE: Bf16 = Bf16::from_bits(0x3F7F);

/// `x / (1 + |x|)` with each step rounded.
///
/// For `|x|` large enough that `1 + |x|` rounds to `|x|` the quotient would
/// round to exactly one; the output saturates one ulp below instead, keeping
/// the range open.
#[inline]
pub fn softsign_value(x: Bf16) -> Bf16 {
    let denom = Bf16::ONE.add(x.abs());
    let y = Bf16::from_f32(x.to_f32() / denom.to_f32());
    if y.abs().to_f32() >= 1.0 {
        Bf16::from_bits(BELOW_ONE.to_bits() | (x.to_bits() & 0x8000))
    } else {
        y
    }
}

pub fn softsign(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in out.data.iter_mut() {
        *v = softsign_value(*v);
    }
    out
}

/// 2x2, stride-2 max pooling. Height and width must be even.
pub fn max_pool2x2(x: &Tensor) -> Result<Tensor> {
    if x.height % 2 != 0 || x.width % 2 != 0 {
        return Err(Error::Shape(format!(
            "max-pool needs even spatial size, got {}x{}",
            x.height, x.width
        )));
    }
    let mut out = Tensor::zeros(x.height / 2, x.width / 2, x.channels);
    for py in 0..out.height {
        for px in 0..out.width {
            for c in 0..x.channels {
                let m = x
                    .get(2 * py, 2 * px, c)
                    .max(x.get(2 * py, 2 * px + 1, c))
                    .max(x.get(2 * py + 1, 2 * px, c))
                    .max(x.get(2 * py + 1, 2 * px + 1, c));
                out.set(py, px, c, m);
            }
        }
    }
    Ok(out)
}

/// Elementwise rounded sum of two tensors.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.check_same_shape(b, "add")?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x.add(*y)).collect();
    Ok(Tensor { data, ..a.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Naive convolution in f64 with no intermediate rounding.
    fn conv_f64(input: &Tensor, kernel: &Kernel, bias: &[Bf16]) -> Vec<f64> {
        let (h, w) = (input.height() as isize, input.width() as isize);
        let r = kernel.radius() as isize;
        let mut out = vec![0.0f64; input.height() * input.width() * kernel.cout()];
        for oy in 0..h {
            for ox in 0..w {
                for co in 0..kernel.cout() {
                    let mut s = bias[co].to_f64();
                    for ky in -r..=r {
                        for kx in -r..=r {
                            let (iy, ix) = (oy + ky, ox + kx);
                            if iy < 0 || ix < 0 || iy >= h || ix >= w {
                                continue;
                            }
                            for ci in 0..kernel.cin() {
                                s += input.get(iy as usize, ix as usize, ci).to_f64()
                                    * kernel
                                        .get((ky + r) as usize, (kx + r) as usize, ci, co)
                                        .to_f64();
                            }
                        }
                    }
                    out[((oy * w + ox) as usize) * kernel.cout() + co] = s;
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_1x1() {
        let input = Tensor::from_f32(1, 1, 1, &[0.75]).unwrap();
        let k = Kernel::from_f32(1, 1, 1, &[1.0]).unwrap();
        let out = dense_conv2d(&input, &k, &[Bf16::ZERO]).unwrap();
        assert!(out.bit_eq(&input));
    }

    #[test]
    fn zero_input_gives_bias() {
        let input = Tensor::zeros(4, 5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vals: Vec<f32> = (0..3 * 3 * 2 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let k = Kernel::from_f32(3, 2, 3, &vals).unwrap();
        let bias: Vec<Bf16> = [0.5f32, -1.25, 2.0].iter().map(|&b| b.into()).collect();
        let out = dense_conv2d(&input, &k, &bias).unwrap();
        for y in 0..4 {
            for x in 0..5 {
                assert_eq!(out.pixel(y, x), &bias[..]);
            }
        }
    }

    #[test]
    fn zero_kernel_gives_zero_tensor() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let vals: Vec<f32> = (0..6 * 6 * 3).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let input = Tensor::from_f32(6, 6, 3, &vals).unwrap();
        let out = dense_conv2d(&input, &Kernel::zeros(3, 3, 4), &[Bf16::ZERO; 4]).unwrap();
        assert!(out.bit_eq(&Tensor::zeros(6, 6, 4)));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let input = Tensor::zeros(4, 4, 2);
        let k = Kernel::zeros(3, 3, 4);
        assert!(matches!(
            dense_conv2d(&input, &k, &[Bf16::ZERO; 4]),
            Err(Error::Shape(_))
        ));
        assert!(Kernel::from_f32(2, 1, 1, &[0.0; 4]).is_err());
    }

    #[test]
    fn dyadic_instance_matches_f64_oracle_exactly() {
        // Inputs in steps of 1/2 within [-2, 2], weights in steps of 1/4 within
        // [-3/4, 3/4]: every partial sum is a multiple of 1/8 below 32 in
        // magnitude and so representable, making rounding a no-op.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let xs: Vec<f32> = (0..8 * 8 * 2)
                .map(|_| rng.gen_range(-4i32..=4) as f32 * 0.5)
                .collect();
            let ws: Vec<f32> = (0..3 * 3 * 2 * 4)
                .map(|_| rng.gen_range(-3i32..=3) as f32 * 0.25)
                .collect();
            let bias: Vec<Bf16> = (0..4)
                .map(|_| Bf16::from_f32(rng.gen_range(-8i32..=8) as f32 * 0.125))
                .collect();
            let input = Tensor::from_f32(8, 8, 2, &xs).unwrap();
            let k = Kernel::from_f32(3, 2, 4, &ws).unwrap();
            let out = dense_conv2d(&input, &k, &bias).unwrap();
            let oracle = conv_f64(&input, &k, &bias);
            for (got, want) in out.data().iter().zip(&oracle) {
                assert!(got.ulp_distance(Bf16::from_f64(*want)) <= 1, "{got:?} vs {want}");
            }
        }
    }

    #[test]
    fn random_instance_within_accumulated_rounding_bound() {
        // General values: the per-step rounded result stays within the classic
        // recursive-summation bound of the exact f64 result.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xs: Vec<f32> = (0..8 * 8 * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ws: Vec<f32> = (0..3 * 3 * 2 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let input = Tensor::from_f32(8, 8, 2, &xs).unwrap();
        let k = Kernel::from_f32(3, 2, 4, &ws).unwrap();
        let zero = vec![Bf16::ZERO; 4];
        let out = dense_conv2d(&input, &k, &zero).unwrap();
        let oracle = conv_f64(&input, &k, &zero);
        let u = 2f64.powi(-8);
        let n = 3.0 * 3.0 * 2.0;
        // Sum of |x*w| bounds the error growth; reuse the oracle on |x|, |w|.
        let abs_in = Tensor::from_bf16(8, 8, 2, input.data().iter().map(|v| v.abs()).collect())
            .unwrap();
        let abs_k =
            Kernel::from_bf16(3, 2, 4, k.data().iter().map(|v| v.abs()).collect()).unwrap();
        let mag = conv_f64(&abs_in, &abs_k, &zero);
        for ((got, want), m) in out.data().iter().zip(&oracle).zip(&mag) {
            let bound = 1.01 * (n + 1.0) * u * m + u * want.abs() + 1e-30;
            assert!((got.to_f64() - want).abs() <= bound, "{got:?} vs {want}");
        }
    }

    #[test]
    fn fatrelu_boundaries() {
        let x = Tensor::from_f32(1, 1, 3, &[0.5, 5.0, -0.3]).unwrap();
        let t: Vec<Bf16> = [0.5f32, 1e-6, 0.1].iter().map(|&v| v.into()).collect();
        let y = fatrelu(&x, &t).unwrap();
        assert_eq!(y.to_f32_vec(), vec![0.0, 5.0, 0.0]);
        assert!(fatrelu(&x, &[Bf16::ONE, Bf16::ZERO, Bf16::ONE]).is_err());
        assert!(fatrelu(&x, &[Bf16::ONE, Bf16::from_f32(-1.0), Bf16::ONE]).is_err());
    }

    #[test]
    fn softsign_values() {
        let x = Tensor::from_f32(1, 1, 3, &[0.0, 1.0, -3.0]).unwrap();
        assert_eq!(softsign(&x).to_f32_vec(), vec![0.0, 0.5, -0.75]);
    }

    #[test]
    fn max_pool_picks_maximum() {
        let x = Tensor::from_f32(2, 2, 1, &[0.0, 3.0, 1.0, 2.0]).unwrap();
        assert_eq!(max_pool2x2(&x).unwrap().to_f32_vec(), vec![3.0]);
        assert!(max_pool2x2(&Tensor::zeros(3, 2, 1)).is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn bf16_round_is_idempotent(x in any::<f32>()) {
                let once = Bf16::from_f32(x);
                let twice = Bf16::from_f32(once.to_f32());
                prop_assert_eq!(once.to_bits(), twice.to_bits());
            }

            #[test]
            fn bf16_round_is_nearest(x in -1e30f32..1e30f32) {
                let r = Bf16::from_f32(x);
                let up = Bf16::from_bits(r.to_bits().wrapping_add(1));
                let down = Bf16::from_bits(r.to_bits().wrapping_sub(1));
                let d = (r.to_f64() - x as f64).abs();
                if !up.is_nan() && up.to_f32().is_finite() {
                    prop_assert!(d <= (up.to_f64() - x as f64).abs());
                }
                if !down.is_nan() && down.to_f32().is_finite() {
                    prop_assert!(d <= (down.to_f64() - x as f64).abs());
                }
            }

            #[test]
            fn fatrelu_output_zero_or_above_threshold(
                xs in proptest::collection::vec(-10.0f32..10.0, 12),
                ts in proptest::collection::vec(1e-3f32..5.0, 3),
            ) {
                let x = Tensor::from_f32(2, 2, 3, &xs).unwrap();
                let t: Vec<Bf16> = ts.iter().map(|&v| v.into()).collect();
                let y = fatrelu(&x, &t).unwrap();
                for (i, v) in y.data().iter().enumerate() {
                    prop_assert!(v.is_zero() || v.gt(t[i % 3]));
                }
            }

            #[test]
            fn softsign_magnitude_below_one(x in -1e30f32..1e30f32) {
                let y = softsign_value(Bf16::from_f32(x));
                prop_assert!(y.to_f32().abs() < 1.0);
            }
        }
    }
}
