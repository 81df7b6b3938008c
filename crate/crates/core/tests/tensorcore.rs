use half::bf16;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparseflow::tensorcore::{dense_conv2d, fatrelu_value, max_pool2x2, softsign_value, Bf16, Kernel, Tensor};

fn oracle_round(x: f32) -> u16 {
    bf16::from_f32(x).to_bits()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20_000))]

    #[test]
    fn rounding_matches_half(bits in any::<u32>()) {
        let x = f32::from_bits(bits);
        prop_assume!(!x.is_nan());
        prop_assert_eq!(Bf16::from_f32(x).to_bits(), oracle_round(x));
    }

    #[test]
    fn mul_and_add_match_half(a in any::<u16>(), b in any::<u16>()) {
        let (x, y) = (Bf16::from_bits(a), Bf16::from_bits(b));
        prop_assume!(!x.is_nan() && !y.is_nan());
        let (fx, fy) = (bf16::from_bits(a).to_f32(), bf16::from_bits(b).to_f32());
        let p = fx * fy;
        let s = fx + fy;
        if !p.is_nan() {
            prop_assert_eq!(x.mul(y).to_bits(), oracle_round(p));
        }
        if !s.is_nan() {
            prop_assert_eq!(x.add(y).to_bits(), oracle_round(s));
        }
    }
}

#[test]
fn ties_round_to_even_on_the_boundary() {
    // 1 + 2^-8 sits halfway between 1 and the next bf16; even is 1.
    assert_eq!(Bf16::from_f32(1.0 + 2f32.powi(-8)).to_bits(), 0x3F80);
    // 1 + 3*2^-8 is halfway between odd 0x3F81 and even 0x3F82.
    assert_eq!(Bf16::from_f32(1.0 + 3.0 * 2f32.powi(-8)).to_bits(), 0x3F82);
}

/// Naive convolution with its own loop nest and `half` rounding.
fn naive_conv(input: &[f32], h: usize, w: usize, cin: usize, k: usize, cout: usize, wts: &[f32], bias: &[f32]) -> Vec<u16> {
    let r = (k / 2) as isize;
    let mut out = vec![0u16; h * w * cout];
    for oy in 0..h as isize {
        for ox in 0..w as isize {
            for co in 0..cout {
                let mut acc = bf16::ZERO;
                for ky in 0..k as isize {
                    for kx in 0..k as isize {
                        let (iy, ix) = (oy + ky - r, ox + kx - r);
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        for ci in 0..cin {
                            let a = bf16::from_f32(input[(iy as usize * w + ix as usize) * cin + ci]);
                            let wt = bf16::from_f32(wts[(((ky as usize) * k + kx as usize) * cin + ci) * cout + co]);
                            let prod = bf16::from_f32(a.to_f32() * wt.to_f32());
                            acc = bf16::from_f32(acc.to_f32() + prod.to_f32());
                        }
                    }
                }
                acc = bf16::from_f32(acc.to_f32() + bf16::from_f32(bias[co]).to_f32());
                out[(oy as usize * w + ox as usize) * cout + co] = acc.to_bits();
            }
        }
    }
    out
}

#[test]
fn dense_conv_matches_naive_oracle_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..40 {
        let (h, w) = (rng.gen_range(1..9), rng.gen_range(1..9));
        let cin = rng.gen_range(1..5);
        let cout = rng.gen_range(1..5);
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let input: Vec<f32> = (0..h * w * cin)
            .map(|_| if rng.gen_bool(0.4) { 0.0 } else { rng.gen_range(-2.0..2.0) })
            .collect();
        let wts: Vec<f32> = (0..k * k * cin * cout).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bias: Vec<f32> = (0..cout).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let t = Tensor::from_f32(h, w, cin, &input).unwrap();
        let kern = Kernel::from_f32(k, cin, cout, &wts).unwrap();
        let b: Vec<Bf16> = bias.iter().map(|&v| Bf16::from_f32(v)).collect();
        let got: Vec<u16> = dense_conv2d(&t, &kern, &b).unwrap().data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(got, naive_conv(&input, h, w, cin, k, cout, &wts, &bias));
    }
}

#[test]
fn activations_and_pooling() {
    let t = Bf16::from_f32(0.5);
    assert_eq!(fatrelu_value(Bf16::from_f32(0.5), t), Bf16::ZERO);
    assert_eq!(fatrelu_value(Bf16::from_f32(0.75), t).to_f32(), 0.75);
    assert_eq!(fatrelu_value(Bf16::from_f32(-3.0), t), Bf16::ZERO);
    assert_eq!(softsign_value(Bf16::from_f32(1.0)).to_f32(), 0.5);
    assert_eq!(softsign_value(Bf16::from_f32(-3.0)).to_f32(), -0.75);
    for x in [1e3f32, 1e30, -1e30] {
        assert!(softsign_value(Bf16::from_f32(x)).to_f32().abs() < 1.0);
    }
    let x = Tensor::from_f32(2, 4, 1, &[1.0, -1.0, 0.0, 3.0, 2.0, 0.5, -4.0, -2.0]).unwrap();
    let p = max_pool2x2(&x).unwrap();
    assert_eq!(p.to_f32_vec(), vec![2.0, 3.0]);
}
