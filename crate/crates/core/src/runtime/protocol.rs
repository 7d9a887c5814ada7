//! The interactive protocols: Beaver multiplication, GMW windowed
//! comparison, and the tree-reduction max kernel.
//!
//! Each function is one party's side; both parties call it with aligned
//! arguments and the message flow keeps them in lockstep. Message sizes are
//! exactly those of the static cost model.

use super::channel::{decode_elems, encode_elems, pack_bits, unpack_bits, PartyIo};
use super::dealer::{BeaverTripleShare, BoolTripleShare, DaBitShare, DealerHandle};
use super::share::ShareTensor;
use crate::backend::cost::{ltz_and_gates, max_levels};
use crate::backend::{MaxDims, MulKind};
use crate::error::{Error, Result};
use crate::fixedpoint::{Ring, Scale};

/// Record of one comparison for the (test-only) audit mode: this party's
/// shares of the comparison input and output.
#[derive(Debug, Clone)]
pub struct CmpAudit {
    pub input: Vec<u64>,
    pub output: Vec<u64>,
}

fn err(io: &PartyIo, msg: impl Into<String>) -> Error {
    Error::Protocol { index: io.current_instr, msg: msg.into() }
}

/// Expansion of a mul-like operation into elementwise products plus the
/// local contraction that follows.
enum MulPlan {
    Elem { shape: Vec<usize> },
    MatMul { m: usize, k: usize, n: usize },
    Conv { n: usize, cin: usize, h: usize, w: usize, cout: usize, kh: usize, kw: usize },
}

fn expand(
    kind: MulKind,
    x_shape: &[usize],
    x: &[u64],
    y_shape: &[usize],
    y: &[u64],
) -> Result<(Vec<u64>, Vec<u64>, MulPlan)> {
    match kind {
        MulKind::Elem => {
            if x_shape == y_shape {
                Ok((x.to_vec(), y.to_vec(), MulPlan::Elem { shape: x_shape.to_vec() }))
            } else if y.len() == 1 {
                Ok((x.to_vec(), vec![y[0]; x.len()], MulPlan::Elem { shape: x_shape.to_vec() }))
            } else if x.len() == 1 {
                Ok((vec![x[0]; y.len()], y.to_vec(), MulPlan::Elem { shape: y_shape.to_vec() }))
            } else {
                Err(Error::Eval(format!("beaver elem shape mismatch {x_shape:?} vs {y_shape:?}")))
            }
        }
        MulKind::MatMul => {
            let (m, k, n) = match (x_shape, y_shape) {
                ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
                _ => return Err(Error::Eval("beaver matmul shape mismatch".into())),
            };
            let mut xe = Vec::with_capacity(m * k * n);
            let mut ye = Vec::with_capacity(m * k * n);
            for i in 0..m {
                for kk in 0..k {
                    for j in 0..n {
                        xe.push(x[i * k + kk]);
                        ye.push(y[kk * n + j]);
                    }
                }
            }
            Ok((xe, ye, MulPlan::MatMul { m, k, n }))
        }
        MulKind::Conv2d => {
            let ((n, cin, h, w), (cout, kh, kw)) = match (x_shape, y_shape) {
                ([n, cin, h, w], [cout, cin2, kh, kw]) if cin == cin2 => {
                    ((*n, *cin, *h, *w), (*cout, *kh, *kw))
                }
                _ => return Err(Error::Eval("beaver conv shape mismatch".into())),
            };
            let (oh, ow) = (h - kh + 1, w - kw + 1);
            let mut xe = Vec::new();
            let mut ye = Vec::new();
            for b in 0..n {
                for co in 0..cout {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            for ci in 0..cin {
                                for ky in 0..kh {
                                    for kx in 0..kw {
                                        xe.push(x[((b * cin + ci) * h + oy + ky) * w + ox + kx]);
                                        ye.push(y[((co * cin + ci) * kh + ky) * kw + kx]);
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Ok((xe, ye, MulPlan::Conv { n, cin, h, w, cout, kh, kw }))
        }
    }
}

fn contract(plan: &MulPlan, prod: Vec<u64>, ring: Ring) -> (Vec<usize>, Vec<u64>) {
    match plan {
        MulPlan::Elem { shape } => (shape.clone(), prod),
        MulPlan::MatMul { m, k, n } => {
            let mut out = vec![0u64; m * n];
            for i in 0..*m {
                for kk in 0..*k {
                    for j in 0..*n {
                        out[i * n + j] = ring.add(out[i * n + j], prod[(i * k + kk) * n + j]);
                    }
                }
            }
            (vec![*m, *n], out)
        }
        MulPlan::Conv { n, cin, h, w, cout, kh, kw } => {
            let red = cin * kh * kw;
            let mut out = vec![0u64; prod.len() / red];
            for (o, chunk) in prod.chunks_exact(red).enumerate() {
                out[o] = chunk.iter().fold(0u64, |a, &b| ring.add(a, b));
            }
            (vec![*n, *cout, h - kh + 1, w - kw + 1], out)
        }
    }
}

/// Beaver multiplication: each party sends its shares of the masked
/// operands `(x - a, y - b)`, both open them and form the product shares.
pub fn beaver_mul(
    ring: Ring,
    io: &mut PartyIo,
    x: &ShareTensor,
    y: &ShareTensor,
    kind: MulKind,
    triple: &mut BeaverTripleShare,
) -> Result<ShareTensor> {
    let (xe, ye, plan) = expand(kind, &x.shape, &x.data, &y.shape, &y.data)?;
    let products = xe.len();
    if triple.len() != products {
        return Err(err(io, format!("triple of {} elements for {} products", triple.len(), products)));
    }
    triple.consume().map_err(|e| err(io, e.to_string()))?;

    let d_share: Vec<u64> = xe.iter().zip(&triple.a).map(|(&v, &a)| ring.sub(v, a)).collect();
    let e_share: Vec<u64> = ye.iter().zip(&triple.b).map(|(&v, &b)| ring.sub(v, b)).collect();
    let mut payload = encode_elems(&d_share, ring);
    payload.extend_from_slice(&encode_elems(&e_share, ring));
    let reply = io.exchange(payload)?;
    let peer = decode_elems(&reply, ring);
    if peer.len() != 2 * products {
        return Err(err(io, "beaver reply size mismatch"));
    }
    let d: Vec<u64> = d_share.iter().zip(&peer[..products]).map(|(&a, &b)| ring.add(a, b)).collect();
    let e: Vec<u64> = e_share.iter().zip(&peer[products..]).map(|(&a, &b)| ring.add(a, b)).collect();

    let mut prod = Vec::with_capacity(products);
    for i in 0..products {
        let mut z = triple.c[i];
        z = ring.add(z, ring.mul(d[i], triple.b[i]));
        z = ring.add(z, ring.mul(e[i], triple.a[i]));
        if io.party == 0 {
            z = ring.add(z, ring.mul(d[i], e[i]));
        }
        prod.push(z);
    }
    let (shape, data) = contract(&plan, prod, ring);
    Ok(ShareTensor {
        shape,
        data,
        scale: Scale(x.scale.exp() + y.scale.exp()),
        party: io.party,
    })
}

/// One batched GMW AND layer: 2 masked bits per gate each way.
fn gmw_and(
    io: &mut PartyIo,
    xs: &[u8],
    ys: &[u8],
    ta: &[u8],
    tb: &[u8],
    tc: &[u8],
) -> Result<Vec<u8>> {
    let n = xs.len();
    let d_share: Vec<u8> = xs.iter().zip(ta).map(|(&x, &a)| x ^ a).collect();
    let e_share: Vec<u8> = ys.iter().zip(tb).map(|(&y, &b)| y ^ b).collect();
    let mut bits = d_share.clone();
    bits.extend_from_slice(&e_share);
    let reply = io.exchange(pack_bits(&bits))?;
    let peer = unpack_bits(&reply, 2 * n);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let d = d_share[i] ^ peer[i];
        let e = e_share[i] ^ peer[n + i];
        let mut z = tc[i] ^ (d & tb[i]) ^ (e & ta[i]);
        if io.party == 0 {
            z ^= d & e;
        }
        out.push(z);
    }
    Ok(out)
}

/// Windowed less-than-zero: evaluate a Kogge-Stone adder over the low
/// `window` bits of the two shares and extract the sign bit, then convert it
/// back to arithmetic shares with a daBit.
///
/// Correct whenever the true value lies in `[-2^(window-1), 2^(window-1))`;
/// outside the window the result may be wrong.
pub fn ltz_protocol(
    ring: Ring,
    io: &mut PartyIo,
    x: &ShareTensor,
    window: u32,
    bits: &mut BoolTripleShare,
    dabits: &mut DaBitShare,
    audit: Option<&mut Vec<CmpAudit>>,
) -> Result<ShareTensor> {
    if window < 1 || window > ring.width {
        return Err(err(io, format!("comparison window {window} outside [1, {}]", ring.width)));
    }
    let n = x.numel();
    let gates = n * ltz_and_gates(window);
    if bits.a.len() != gates || dabits.xor.len() != n {
        return Err(err(io, "correlated randomness size mismatch for ltz"));
    }
    bits.consume().map_err(|e| err(io, e.to_string()))?;
    dabits.consume().map_err(|e| err(io, e.to_string()))?;

    let bit_of = |v: u64, j: u32| ((v >> j) & 1) as u8;
    let m = (window - 1) as usize;
    let mut offset = 0usize;
    let mut take = |cnt: usize| {
        let r = offset..offset + cnt;
        offset += cnt;
        r
    };

    // XOR sharing of addend A (= party 0's share) and addend B (= party 1's
    // share): each party's share of either addend's bit j is its own share's
    // bit when it owns the addend, zero otherwise. Hence the propagate share
    // p[j] is just this party's own bit, and the generate g[j] comes from an
    // AND between the two addends' sharings.
    let own_bits: Vec<Vec<u8>> =
        (0..window).map(|j| x.data.iter().map(|&v| bit_of(v, j)).collect()).collect();
    let zero = vec![0u8; n];

    let mut sign_share: Vec<u8> = own_bits[m].clone();
    if m > 0 {
        let mut p: Vec<Vec<u8>> = own_bits[..m].to_vec();
        // Initial generate layer: m gates per element.
        let mut g: Vec<Vec<u8>> = {
            let mut xs = Vec::with_capacity(m * n);
            let mut ys = Vec::with_capacity(m * n);
            for bits in own_bits.iter().take(m) {
                let (a_side, b_side) = if io.party == 0 { (bits, &zero) } else { (&zero, bits) };
                xs.extend_from_slice(a_side);
                ys.extend_from_slice(b_side);
            }
            let r = take(m * n);
            let z = gmw_and(io, &xs, &ys, &bits.a[r.clone()], &bits.b[r.clone()], &bits.c[r])?;
            z.chunks_exact(n).map(<[u8]>::to_vec).collect()
        };
        // Kogge-Stone doubling levels; generate and propagate combines are
        // batched into one message per level.
        let mut k = 1usize;
        while k < m {
            let cnt = m - k;
            let mut xs = Vec::with_capacity(2 * cnt * n);
            let mut ys = Vec::with_capacity(2 * cnt * n);
            for j in k..m {
                xs.extend_from_slice(&p[j]);
                ys.extend_from_slice(&g[j - k]);
            }
            for j in k..m {
                xs.extend_from_slice(&p[j]);
                ys.extend_from_slice(&p[j - k]);
            }
            let r = take(2 * cnt * n);
            let z = gmw_and(io, &xs, &ys, &bits.a[r.clone()], &bits.b[r.clone()], &bits.c[r])?;
            let layers: Vec<&[u8]> = z.chunks_exact(n).collect();
            for (li, j) in (k..m).enumerate() {
                for e in 0..n {
                    g[j][e] ^= layers[li][e];
                }
            }
            for (li, j) in (k..m).enumerate() {
                p[j] = layers[cnt + li].to_vec();
            }
            k *= 2;
        }
        for e in 0..n {
            sign_share[e] ^= g[m - 1][e];
        }
    }

    // Bit-to-arithmetic conversion: open sign ^ r, then share the sign
    // arithmetically from the daBit's ring shares.
    let mask: Vec<u8> = sign_share.iter().zip(&dabits.xor).map(|(&s, &r)| s ^ r).collect();
    let reply = io.exchange(pack_bits(&mask))?;
    let peer = unpack_bits(&reply, n);
    let mut out = Vec::with_capacity(n);
    for e in 0..n {
        let opened = mask[e] ^ peer[e];
        let r = dabits.arith[e];
        let z = if opened == 1 {
            ring.sub(if io.party == 0 { 1 } else { 0 }, r)
        } else {
            r
        };
        out.push(z);
    }
    let result = ShareTensor { shape: x.shape.clone(), data: out, scale: Scale::ONE, party: io.party };
    if let Some(log) = audit {
        log.push(CmpAudit { input: x.data.clone(), output: result.data.clone() });
    }
    Ok(result)
}

/// Flat element indices of each comparison group.
pub fn max_groups(dims: &MaxDims, shape: &[usize]) -> Vec<Vec<usize>> {
    let numel: usize = shape.iter().product();
    match dims {
        MaxDims::Axis { axis: None } => vec![(0..numel).collect()],
        MaxDims::Axis { axis: Some(a) } => {
            let k = shape[*a];
            let inner: usize = shape[*a + 1..].iter().product();
            let outer: usize = shape[..*a].iter().product();
            let mut groups = Vec::with_capacity(outer * inner);
            for o in 0..outer {
                for i in 0..inner {
                    groups.push((0..k).map(|j| (o * k + j) * inner + i).collect());
                }
            }
            groups
        }
        MaxDims::Pool { kh, kw } => {
            let [n, c, h, w] = match shape {
                [n, c, h, w] => [*n, *c, *h, *w],
                _ => return vec![],
            };
            let (oh, ow) = (h / kh, w / kw);
            let mut groups = Vec::with_capacity(n * c * oh * ow);
            for b in 0..n {
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut g = Vec::with_capacity(kh * kw);
                            for ky in 0..*kh {
                                for kx in 0..*kw {
                                    g.push(((b * c + ch) * h + oy * kh + ky) * w + ox * kw + kx);
                                }
                            }
                            groups.push(g);
                        }
                    }
                }
            }
            groups
        }
    }
}

/// Tree-reduction max over secret shares: pairwise `c = 1 - ltz(x - y)`,
/// `max = y + c * (x - y)`, over `ceil(log2 m)` levels.
pub fn max_kernel(
    ring: Ring,
    io: &mut PartyIo,
    x: &ShareTensor,
    dims: &MaxDims,
    window: u32,
    deal: &DealerHandle,
    mut audit: Option<&mut Vec<CmpAudit>>,
) -> Result<ShareTensor> {
    let groups = max_groups(dims, &x.shape);
    let m = groups.first().map_or(0, Vec::len);
    let mut cur: Vec<Vec<u64>> = groups.iter().map(|g| g.iter().map(|&i| x.data[i]).collect()).collect();

    for pairs in max_levels(m) {
        let cnt = cur.len() * pairs;
        let mut xv = Vec::with_capacity(cnt);
        let mut yv = Vec::with_capacity(cnt);
        for row in &cur {
            for k in 0..pairs {
                xv.push(row[2 * k]);
                yv.push(row[2 * k + 1]);
            }
        }
        let diff = ShareTensor {
            shape: vec![cnt],
            data: xv.iter().zip(&yv).map(|(&a, &b)| ring.sub(a, b)).collect(),
            scale: x.scale,
            party: io.party,
        };
        let mut bt = deal.bool_triples(cnt * ltz_and_gates(window));
        let mut db = deal.dabits(cnt);
        let lt = ltz_protocol(ring, io, &diff, window, &mut bt, &mut db, audit.as_deref_mut())?;
        // c = 1 - ltz(x - y), the public one folded in at party 0.
        let c = ShareTensor {
            shape: vec![cnt],
            data: lt
                .data
                .iter()
                .map(|&v| ring.sub(if io.party == 0 { 1 } else { 0 }, v))
                .collect(),
            scale: Scale::ONE,
            party: io.party,
        };
        let mut triple = deal.arith(cnt);
        let prod = beaver_mul(ring, io, &c, &diff, MulKind::Elem, &mut triple)?;
        // Survivors: y + c*(x-y), then any odd leftover element.
        let mut next = Vec::with_capacity(cur.len());
        for (gi, row) in cur.iter().enumerate() {
            let mut nrow = Vec::with_capacity(row.len() - pairs);
            for k in 0..pairs {
                nrow.push(ring.add(yv[gi * pairs + k], prod.data[gi * pairs + k]));
            }
            nrow.extend_from_slice(&row[2 * pairs..]);
            next.push(nrow);
        }
        cur = next;
    }

    // Scatter group maxima back into the output layout.
    let (shape, data) = match dims {
        MaxDims::Axis { axis: None } => (vec![1], vec![cur[0][0]]),
        MaxDims::Axis { axis: Some(_) } => {
            let mut out = vec![0u64; x.data.len()];
            for (g, idxs) in groups.iter().enumerate() {
                for &i in idxs {
                    out[i] = cur[g][0];
                }
            }
            (x.shape.clone(), out)
        }
        MaxDims::Pool { kh, kw } => {
            let [n, c, h, w] = match x.shape.as_slice() {
                [n, c, h, w] => [*n, *c, *h, *w],
                _ => unreachable!(),
            };
            (vec![n, c, h / kh, w / kw], cur.iter().map(|row| row[0]).collect())
        }
    };
    Ok(ShareTensor { shape, data, scale: x.scale, party: io.party })
}
