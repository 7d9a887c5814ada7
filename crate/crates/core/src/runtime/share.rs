//! Additive secret shares and local (communication-free) share algebra.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixedpoint::{Ring, Scale};
use crate::frontend::PartyId;

/// One party's additive share of a tensor of ring elements.
///
/// `share0 + share1 (mod 2^N)` decodes to the plaintext fixed-point value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareTensor {
    pub shape: Vec<usize>,
    pub data: Vec<u64>,
    pub scale: Scale,
    pub party: PartyId,
}

impl ShareTensor {
    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Split a vector of ring elements into two additive shares:
/// `share0 = x - r`, `share1 = r` with `r` uniform.
pub fn share(x: &[u64], ring: Ring, rng: &mut impl RngCore) -> (Vec<u64>, Vec<u64>) {
    let mut s0 = Vec::with_capacity(x.len());
    let mut s1 = Vec::with_capacity(x.len());
    for &v in x {
        let r = ring.reduce(rng.next_u64());
        s0.push(ring.sub(v, r));
        s1.push(r);
    }
    (s0, s1)
}

pub fn reconstruct(a: &[u64], b: &[u64], ring: Ring) -> Vec<u64> {
    a.iter().zip(b).map(|(&x, &y)| ring.add(x, y)).collect()
}

/// Addition/subtraction of shares is local at each party.
pub fn add_shares(a: &ShareTensor, b: &ShareTensor, ring: Ring, sub: bool) -> Result<ShareTensor> {
    if a.scale != b.scale {
        return Err(Error::Eval(format!("share scale mismatch {} vs {}", a.scale, b.scale)));
    }
    let (shape, data) = zip_bc(&a.shape, &a.data, &b.shape, &b.data, |x, y| {
        if sub {
            ring.sub(x, y)
        } else {
            ring.add(x, y)
        }
    })?;
    Ok(ShareTensor { shape, data, scale: a.scale, party: a.party })
}

/// Public addend folded in by one party only (party 0 by convention).
pub fn add_public(x: &ShareTensor, c: &[u64], c_shape: &[usize], ring: Ring, at_party: bool) -> Result<ShareTensor> {
    if !at_party {
        return Ok(x.clone());
    }
    let (shape, data) = zip_bc(&x.shape, &x.data, c_shape, c, |a, b| ring.add(a, b))?;
    Ok(ShareTensor { shape, data, scale: x.scale, party: x.party })
}

/// Public factor multiplies each share locally.
pub fn mul_public(x: &ShareTensor, c: &[u64], c_shape: &[usize], ring: Ring) -> Result<ShareTensor> {
    let (shape, data) = zip_bc(&x.shape, &x.data, c_shape, c, |a, b| ring.mul(a, b))?;
    Ok(ShareTensor { shape, data, scale: x.scale, party: x.party })
}

/// Local truncation: arithmetic shift right of the signed share. Decodes to
/// `floor(x / 2^exp)` up to one unit, with a large wrap error of probability
/// about `|x| / 2^N`.
pub fn trunc_local(x: &ShareTensor, exp: u32, ring: Ring) -> ShareTensor {
    ShareTensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| ring.shift_down(v, exp)).collect(),
        scale: Scale(x.scale.exp().saturating_sub(exp)),
        party: x.party,
    }
}

/// Elementwise combine with scalar broadcast over raw ring vectors.
pub fn zip_bc(
    a_shape: &[usize],
    a: &[u64],
    b_shape: &[usize],
    b: &[u64],
    f: impl Fn(u64, u64) -> u64,
) -> Result<(Vec<usize>, Vec<u64>)> {
    if a_shape == b_shape {
        Ok((a_shape.to_vec(), a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()))
    } else if b.len() == 1 {
        Ok((a_shape.to_vec(), a.iter().map(|&x| f(x, b[0])).collect()))
    } else if a.len() == 1 {
        Ok((b_shape.to_vec(), b.iter().map(|&y| f(a[0], y)).collect()))
    } else {
        Err(Error::Eval(format!("ring shape mismatch {a_shape:?} vs {b_shape:?}")))
    }
}

/// Row-major axis reduction keeping the input shape (values replicated along
/// the reduced axis), mirroring the plaintext runtime semantics.
pub fn reduce_axis_keep(
    shape: &[usize],
    data: &[u64],
    axis: Option<usize>,
    init: u64,
    f: impl Fn(u64, u64) -> u64,
) -> Result<(Vec<usize>, Vec<u64>)> {
    match axis {
        None => {
            let acc = data.iter().fold(init, |a, &b| f(a, b));
            Ok((vec![1], vec![acc]))
        }
        Some(a) => {
            if a >= shape.len() {
                return Err(Error::Eval(format!("axis {a} out of range for {shape:?}")));
            }
            let k = shape[a];
            let inner: usize = shape[a + 1..].iter().product();
            let outer: usize = shape[..a].iter().product();
            let mut out = vec![0u64; data.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let mut acc = init;
                    for j in 0..k {
                        acc = f(acc, data[(o * k + j) * inner + i]);
                    }
                    for j in 0..k {
                        out[(o * k + j) * inner + i] = acc;
                    }
                }
            }
            Ok((shape.to_vec(), out))
        }
    }
}

pub fn pool_sum(shape: &[usize], data: &[u64], kh: usize, kw: usize, ring: Ring) -> Result<(Vec<usize>, Vec<u64>)> {
    let [n, c, h, w] = match shape {
        [n, c, h, w] => [*n, *c, *h, *w],
        _ => return Err(Error::Eval("pool expects 4-d".into())),
    };
    let (oh, ow) = (h / kh, w / kw);
    let mut out = vec![0u64; n * c * oh * ow];
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0u64;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            acc = ring.add(acc, data[((b * c + ch) * h + oy * kh + ky) * w + ox * kw + kx]);
                        }
                    }
                    out[((b * c + ch) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Ok((vec![n, c, oh, ow], out))
}

/// Wrapping matrix product of raw ring vectors.
pub fn ring_matmul(
    a_shape: &[usize],
    a: &[u64],
    b_shape: &[usize],
    b: &[u64],
    ring: Ring,
) -> Result<(Vec<usize>, Vec<u64>)> {
    let ([m, k], [k2, n]) = match (a_shape, b_shape) {
        ([m, k], [k2, n]) => ([*m, *k], [*k2, *n]),
        _ => return Err(Error::Eval("ring matmul expects 2-d".into())),
    };
    if k != k2 {
        return Err(Error::Eval(format!("ring matmul inner dims {k} != {k2}")));
    }
    let mut out = vec![0u64; m * n];
    for i in 0..m {
        for kk in 0..k {
            let x = a[i * k + kk];
            for j in 0..n {
                out[i * n + j] = ring.add(out[i * n + j], ring.mul(x, b[kk * n + j]));
            }
        }
    }
    Ok((vec![m, n], out))
}

pub fn ring_conv2d(
    a_shape: &[usize],
    a: &[u64],
    w_shape: &[usize],
    wt: &[u64],
    ring: Ring,
) -> Result<(Vec<usize>, Vec<u64>)> {
    let ((n, cin, h, w), (cout, _cin2, kh, kw)) = match (a_shape, w_shape) {
        ([n, cin, h, w], [cout, cin2, kh, kw]) => ((*n, *cin, *h, *w), (*cout, *cin2, *kh, *kw)),
        _ => return Err(Error::Eval("ring conv expects 4-d".into())),
    };
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let mut out = vec![0u64; n * cout * oh * ow];
    for b in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0u64;
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let xv = a[((b * cin + ci) * h + oy + ky) * w + ox + kx];
                                let wv = wt[((co * cin + ci) * kh + ky) * kw + kx];
                                acc = ring.add(acc, ring.mul(xv, wv));
                            }
                        }
                    }
                    out[((b * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Ok((vec![n, cout, oh, ow], out))
}

pub fn transpose2(shape: &[usize], data: &[u64]) -> Result<(Vec<usize>, Vec<u64>)> {
    let [a, b] = match shape {
        [a, b] => [*a, *b],
        _ => return Err(Error::Eval("transpose expects 2-d".into())),
    };
    let mut out = vec![0u64; a * b];
    for i in 0..a {
        for j in 0..b {
            out[j * a + i] = data[i * b + j];
        }
    }
    Ok((vec![b, a], out))
}

pub fn permute(shape: &[usize], data: &[u64], perm: &[usize]) -> Result<(Vec<usize>, Vec<u64>)> {
    let strides = |s: &[usize]| {
        let mut st = vec![1usize; s.len()];
        for i in (0..s.len().saturating_sub(1)).rev() {
            st[i] = st[i + 1] * s[i + 1];
        }
        st
    };
    let old = strides(shape);
    let new_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let new = strides(&new_shape);
    let mut out = vec![0u64; data.len()];
    let mut idx = vec![0usize; shape.len()];
    for (flat, &v) in data.iter().enumerate() {
        let mut rem = flat;
        for (d, s) in old.iter().enumerate() {
            idx[d] = rem / s;
            rem %= s;
        }
        let mut dst = 0;
        for (d, &p) in perm.iter().enumerate() {
            dst += idx[p] * new[d];
        }
        out[dst] = v;
    }
    Ok((new_shape, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn share_reconstruct_exact() {
        let ring = Ring::new(64);
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let x = vec![0u64, 98304, u64::MAX, 1 << 63];
        let (s0, s1) = share(&x, ring, &mut rng);
        assert_eq!(reconstruct(&s0, &s1, ring), x);
    }

    #[test]
    fn public_ops_match_modular_oracle() {
        let ring = Ring::new(64);
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let x = vec![3u64, ring.from_signed(-5)];
        let (s0, s1) = share(&x, ring, &mut rng);
        let t0 = ShareTensor { shape: vec![2], data: s0, scale: Scale::ONE, party: 0 };
        let t1 = ShareTensor { shape: vec![2], data: s1, scale: Scale::ONE, party: 1 };

        // add_public at party 0 only.
        let c = vec![10u64, 10];
        let a0 = add_public(&t0, &c, &[2], ring, true).unwrap();
        let a1 = add_public(&t1, &c, &[2], ring, false).unwrap();
        assert_eq!(reconstruct(&a0.data, &a1.data, ring), vec![13, ring.from_signed(5)]);

        // mul_public by -1 negates.
        let neg = vec![ring.from_signed(-1); 2];
        let m0 = mul_public(&t0, &neg, &[2], ring).unwrap();
        let m1 = mul_public(&t1, &neg, &[2], ring).unwrap();
        assert_eq!(reconstruct(&m0.data, &m1.data, ring), vec![ring.from_signed(-3), 5]);
    }
}
