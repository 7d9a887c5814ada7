//! Fixed-point scales and ring encode/decode helpers.
//!
//! All MPC arithmetic happens on an integer ring of size `2^N`. Floats are
//! mapped onto the ring by multiplying with a power-of-two scaling factor
//! and rounding to the nearest integer. The scale propagates through the
//! lowered program: multiplication adds scale exponents, truncation removes
//! them.

use serde::{Deserialize, Serialize};

/// A power-of-two fixed-point scaling factor, stored as its base-2 exponent.
///
/// `Scale(0)` is scale 1 (raw integers, also the scale of comparison
/// outputs), `Scale(16)` is the default `2^16` used for encoded floats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Scale(pub u32);

impl Scale {
    pub const ONE: Scale = Scale(0);

    pub fn value(self) -> f64 {
        (self.0 as f64).exp2()
    }

    pub fn exp(self) -> u32 {
        self.0
    }

    pub fn max(self, other: Scale) -> Scale {
        Scale(self.0.max(other.0))
    }

    pub fn min(self, other: Scale) -> Scale {
        Scale(self.0.min(other.0))
    }
}

impl std::fmt::Display for Scale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "2^{}", self.0)
    }
}

/// Two's-complement ring arithmetic on `N`-bit values packed in `u64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ring {
    pub width: u32,
}

impl Ring {
    pub fn new(width: u32) -> Ring {
        assert!((2..=64).contains(&width), "ring width must be in [2, 64]");
        Ring { width }
    }

    pub fn mask(self) -> u64 {
        if self.width == 64 {
            u64::MAX
        } else {
            (1u64 << self.width) - 1
        }
    }

    pub fn reduce(self, v: u64) -> u64 {
        v & self.mask()
    }

    pub fn add(self, a: u64, b: u64) -> u64 {
        self.reduce(a.wrapping_add(b))
    }

    pub fn sub(self, a: u64, b: u64) -> u64 {
        self.reduce(a.wrapping_sub(b))
    }

    pub fn mul(self, a: u64, b: u64) -> u64 {
        self.reduce(a.wrapping_mul(b))
    }

    pub fn neg(self, a: u64) -> u64 {
        self.reduce(0u64.wrapping_sub(a))
    }

    /// Signed interpretation of a ring element (sign bit is bit `width-1`).
    pub fn to_signed(self, v: u64) -> i64 {
        let shift = 64 - self.width;
        ((v << shift) as i64) >> shift
    }

    pub fn from_signed(self, v: i64) -> u64 {
        self.reduce(v as u64)
    }

    /// Round-to-nearest encoding of a float at the given scale.
    pub fn encode_f64(self, x: f64, scale: Scale) -> u64 {
        self.from_signed((x * scale.value()).round() as i64)
    }

    /// Decode a ring element back to a float at the given scale.
    pub fn decode_f64(self, v: u64, scale: Scale) -> f64 {
        self.to_signed(v) as f64 / scale.value()
    }

    /// Arithmetic shift right on the signed interpretation; the local
    /// truncation primitive applied share-wise.
    pub fn shift_down(self, v: u64, exp: u32) -> u64 {
        self.from_signed(self.to_signed(v) >> exp)
    }

    /// Exact rescale by `2^exp` (used when growing a scale).
    pub fn shift_up(self, v: u64, exp: u32) -> u64 {
        self.reduce(v.wrapping_shl(exp))
    }

    /// Number of bytes one ring element occupies on the wire.
    pub fn elem_bytes(self) -> usize {
        self.width.div_ceil(8) as usize
    }
}
