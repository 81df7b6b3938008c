//! Software BFloat16.
//!
//! The processor datapath is 16 bits wide; every product and every partial
//! sum is rounded back to BFloat16 before it is stored. All arithmetic here
//! goes through `f32` and rounds with round-to-nearest-even.

use std::fmt;

/// A BFloat16 value: 1 sign bit, 8 exponent bits, 7 mantissa bits.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Bf16(u16);

impl Bf16 {
    pub const ZERO: Bf16 = Bf16(0x0000);
    pub const ONE: Bf16 = Bf16(0x3F80);
    pub const NAN: Bf16 = Bf16(0x7FC0);
    pub const INFINITY: Bf16 = Bf16(0x7F80);

    #[inline]
    pub const fn from_bits(bits: u16) -> Self {
        Bf16(bits)
    }

    #[inline]
    pub const fn to_bits(self) -> u16 {
        self.0
    }

    /// Round an `f32` to the nearest BFloat16, ties to even.
    ///
    /// Every NaN maps to the canonical quiet NaN `0x7FC0`.
    #[inline]
    pub fn from_f32(x: f32) -> Self {
        let bits = x.to_bits();
        if x.is_nan() {
            return Self::NAN;
        }
        let lsb = (bits >> 16) & 1;
        let rounded = bits.wrapping_add(0x7FFF + lsb);
        Bf16((rounded >> 16) as u16)
    }

    #[inline]
    pub fn from_f64(x: f64) -> Self {
        Self::from_f32(x as f32)
    }

    #[inline]
    pub fn to_f32(self) -> f32 {
        f32::from_bits((self.0 as u32) << 16)
    }

    #[inline]
    pub fn to_f64(self) -> f64 {
        self.to_f32() as f64
    }

    /// True for both signed zeros.
    #[inline]
    pub fn is_zero(self) -> bool {
        self.0 & 0x7FFF == 0
    }

    #[inline]
    pub fn is_nan(self) -> bool {
        self.0 & 0x7FFF > 0x7F80
    }

    #[inline]
    pub fn abs(self) -> Self {
        Bf16(self.0 & 0x7FFF)
    }

    /// Rounded product.
    #[inline]
    pub fn mul(self, rhs: Bf16) -> Bf16 {
        Bf16::from_f32(self.to_f32() * rhs.to_f32())
    }

    /// Rounded sum.
    #[inline]
    pub fn add(self, rhs: Bf16) -> Bf16 {
        Bf16::from_f32(self.to_f32() + rhs.to_f32())
    }

    /// One NPE multiply-accumulate step: `round(acc + round(a * w))`.
    #[inline]
    pub fn mac(acc: Bf16, a: Bf16, w: Bf16) -> Bf16 {
        acc.add(a.mul(w))
    }

    /// Strict comparison on the represented values.
    #[inline]
    pub fn gt(self, rhs: Bf16) -> bool {
        self.to_f32() > rhs.to_f32()
    }

    /// Larger of two values; NaN-free inputs assumed.
    #[inline]
    pub fn max(self, rhs: Bf16) -> Bf16 {
        if rhs.gt(self) {
            rhs
        } else {
            self
        }
    }

    /// Distance in units in the last place, for finite values of either sign.
    pub fn ulp_distance(self, other: Bf16) -> u32 {
        fn ordered(b: Bf16) -> i32 {
            let v = b.0 as i32;
            if v & 0x8000 != 0 {
                -(v & 0x7FFF)
            } else {
                v
            }
        }
        (ordered(self) - ordered(other)).unsigned_abs()
    }
}

impl From<f32> for Bf16 {
    fn from(x: f32) -> Self {
        Bf16::from_f32(x)
    }
}

impl From<Bf16> for f32 {
    fn from(x: Bf16) -> Self {
        x.to_f32()
    }
}

impl fmt::Debug for Bf16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(0x{:04X})", self.to_f32(), self.0)
    }
}

impl fmt::Display for Bf16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.to_f32(), f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_values() {
        assert_eq!(Bf16::from_f32(1.0).to_bits(), 0x3F80);
        assert_eq!(Bf16::from_f32(0.0).to_bits(), 0x0000);
        assert_eq!(Bf16::from_f32(-0.0).to_bits(), 0x8000);
        assert_eq!(Bf16::from_f32(-2.0).to_bits(), 0xC000);
    }

    #[test]
    fn ties_go_to_even() {
        // 1 + 2^-8 sits halfway between 0x3F80 and 0x3F81; 0x3F80 is even.
        assert_eq!(Bf16::from_f32(1.003_906_25).to_bits(), 0x3F80);
        // 1 + 3 * 2^-8 sits halfway between 0x3F81 and 0x3F82; rounds up to even.
        assert_eq!(Bf16::from_f32(1.011_718_75).to_bits(), 0x3F82);
        // Just above the tie rounds up.
        let above = f32::from_bits(0x3F80_8001);
        assert_eq!(Bf16::from_f32(above).to_bits(), 0x3F81);
    }

    #[test]
    fn specials() {
        assert_eq!(Bf16::from_f32(f32::NAN).to_bits(), 0x7FC0);
        assert_eq!(Bf16::from_f32(-f32::NAN).to_bits(), 0x7FC0);
        assert_eq!(Bf16::from_f32(f32::INFINITY).to_bits(), 0x7F80);
        assert_eq!(Bf16::from_f32(f32::NEG_INFINITY).to_bits(), 0xFF80);
        // Largest finite f32 overflows to infinity under RNE.
        assert_eq!(Bf16::from_f32(f32::MAX).to_bits(), 0x7F80);
    }

    #[test]
    fn mac_rounds_each_step() {
        let acc = Bf16::from_f32(256.0);
        let one = Bf16::ONE;
        // 256 + 1 is a tie between 256 and 258 at this exponent; ties to 256.
        assert_eq!(Bf16::mac(acc, one, one).to_f32(), 256.0);
    }

    #[test]
    fn ulp_distance_crosses_zero() {
        let a = Bf16::from_bits(0x0001);
        let b = Bf16::from_bits(0x8001);
        assert_eq!(a.ulp_distance(b), 2);
        assert_eq!(Bf16::ONE.ulp_distance(Bf16::from_bits(0x3F81)), 1);
    }
}
