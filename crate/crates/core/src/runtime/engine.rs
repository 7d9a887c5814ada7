//! Party engine and the two-thread lockstep executor.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::channel::{decode_elems, encode_elems, PartyIo, TranscriptEntry};
use super::dealer::{Dealer, DealerHandle};
use super::protocol::{beaver_mul, ltz_protocol, max_kernel, CmpAudit};
use super::share::{self, ShareTensor};
use crate::backend::cost::{
    ltz_and_gates, mul_products, static_cost, CatCost, Category, CostReport, TripleDemand,
};
use crate::backend::{typecheck_lowered, Base, InstrOp, MaxDims, MulKind, PartyProgram, Slot};
use crate::error::{Error, Result};
use crate::fixedpoint::{Ring, Scale};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub dealer: u64,
    pub sharing: [u64; 2],
}

impl Default for Seeds {
    fn default() -> Seeds {
        Seeds { dealer: 0x5eed_dea1, sharing: [0x5eed_0000, 0x5eed_0001] }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExecOptions {
    /// Reconstruct every comparison (simulator privilege) and count
    /// disagreements with the plaintext sign oracle.
    pub audit_comparisons: bool,
}

#[derive(Debug, Clone)]
pub struct ExecOutput {
    pub outputs: Vec<Tensor>,
    pub cost: CostReport,
    pub transcript: Vec<TranscriptEntry>,
    /// Populated in audit mode.
    pub comparison_mismatches: Option<u64>,
}

/// Public ring-integer tensor (both parties hold the same plaintext).
#[derive(Debug, Clone, PartialEq)]
pub struct RingTensor {
    pub shape: Vec<usize>,
    pub data: Vec<u64>,
    pub scale: Scale,
}

#[derive(Debug, Clone)]
enum RtValue {
    PubF(Tensor),
    PubI(RingTensor),
    Share(ShareTensor),
    Empty,
}

struct Engine<'a> {
    program: &'a PartyProgram,
    ring: Ring,
    io: PartyIo,
    deal: DealerHandle,
    inputs: &'a BTreeMap<String, Tensor>,
    rng: ChaCha20Rng,
    slots: Vec<RtValue>,
    bytes_by_cat: BTreeMap<Category, CatCost>,
    audit: Option<Vec<CmpAudit>>,
}

struct EngineResult {
    outputs: Vec<Option<Tensor>>,
    bytes_sent: u64,
    rounds: u64,
    by_cat: BTreeMap<Category, CatCost>,
    transcript: Vec<TranscriptEntry>,
    audit: Option<Vec<CmpAudit>>,
}

pub fn execute(
    p0: &PartyProgram,
    p1: &PartyProgram,
    inputs: &BTreeMap<String, Tensor>,
    seeds: Seeds,
    opts: ExecOptions,
) -> Result<ExecOutput> {
    let violations = typecheck_lowered(p0, p1);
    if let Some(first) = violations.first() {
        return Err(Error::Protocol {
            index: first.node.map(|n| n.0 as usize).unwrap_or(0),
            msg: format!("programs do not typecheck: {first}"),
        });
    }
    let ring = p0.ring;
    let dealer = Arc::new(Mutex::new(Dealer::new(seeds.dealer, ring)));
    let (io0, io1) = PartyIo::pair();

    let run = |program: &PartyProgram, io: PartyIo| -> Result<EngineResult> {
        let party = program.party;
        Engine {
            program,
            ring,
            io,
            deal: DealerHandle { inner: dealer.clone(), party },
            inputs,
            rng: ChaCha20Rng::seed_from_u64(seeds.sharing[party as usize]),
            slots: Vec::with_capacity(program.instrs.len()),
            bytes_by_cat: BTreeMap::new(),
            audit: opts.audit_comparisons.then(Vec::new),
        }
        .run()
    };

    let (r0, r1) = std::thread::scope(|s| {
        let h1 = s.spawn(|| run(p1, io1));
        let r0 = run(p0, io0);
        let r1 = h1.join().expect("party 1 thread panicked");
        (r0, r1)
    });
    let (mut r0, mut r1) = (r0?, r1?);

    if r0.rounds != r1.rounds {
        return Err(Error::Protocol { index: 0, msg: "parties disagree on round count".into() });
    }
    let stats = dealer.lock().unwrap().stats();
    if stats.arithmetic[0] != stats.arithmetic[1]
        || stats.boolean[0] != stats.boolean[1]
        || stats.dabits[0] != stats.dabits[1]
    {
        return Err(Error::Protocol { index: 0, msg: "parties consumed unequal randomness".into() });
    }

    let mut by_category: BTreeMap<Category, CatCost> = BTreeMap::new();
    for cat in Category::all() {
        by_category.insert(cat, CatCost::default());
    }
    for (cat, c) in r0.by_cat.iter().chain(r1.by_cat.iter()) {
        let e = by_category.entry(*cat).or_default();
        e.bytes += c.bytes;
    }
    for (cat, c) in &r0.by_cat {
        by_category.entry(*cat).or_default().rounds += c.rounds;
    }

    let cost = CostReport {
        bytes: [r0.bytes_sent, r1.bytes_sent],
        rounds: r0.rounds,
        by_category,
        triples: TripleDemand {
            arithmetic: stats.arithmetic[0],
            boolean: stats.boolean[0],
            dabits: stats.dabits[0],
        },
    };

    let mut transcript: Vec<TranscriptEntry> = r0.transcript.iter().chain(&r1.transcript).copied().collect();
    transcript.sort_by_key(|e| (e.round, e.from, e.instr));

    let comparison_mismatches = match (r0.audit.take(), r1.audit.take()) {
        (Some(a0), Some(a1)) => {
            let mut bad = 0u64;
            for (e0, e1) in a0.iter().zip(&a1) {
                for (i, (&x0, &x1)) in e0.input.iter().zip(&e1.input).enumerate() {
                    let x = ring.to_signed(ring.add(x0, x1));
                    let got = ring.add(e0.output[i], e1.output[i]);
                    let want = u64::from(x < 0);
                    if got != want {
                        bad += 1;
                    }
                }
            }
            Some(bad)
        }
        _ => None,
    };

    let reveal_engine = if p0.reveal_to == 0 { &r0 } else { &r1 };
    let outputs: Vec<Tensor> = reveal_engine
        .outputs
        .iter()
        .map(|o| o.clone().ok_or_else(|| Error::Protocol { index: 0, msg: "missing revealed output".into() }))
        .collect::<Result<_>>()?;

    Ok(ExecOutput { outputs, cost, transcript, comparison_mismatches })
}

/// Execute and cross-check the measured counters against the static model.
pub fn execute_checked(
    p0: &PartyProgram,
    p1: &PartyProgram,
    inputs: &BTreeMap<String, Tensor>,
    seeds: Seeds,
    opts: ExecOptions,
) -> Result<ExecOutput> {
    let out = execute(p0, p1, inputs, seeds, opts)?;
    let predicted = static_cost(p0, p1);
    if predicted != out.cost {
        return Err(Error::Protocol {
            index: 0,
            msg: format!("measured cost diverges from static model: {:?} vs {:?}", out.cost, predicted),
        });
    }
    Ok(out)
}

impl Engine<'_> {
    fn run(mut self) -> Result<EngineResult> {
        for idx in 0..self.program.instrs.len() {
            self.io.current_instr = idx;
            let bytes_before = self.io.bytes_len();
            let rounds_before = self.io.rounds;
            let value = self.eval(idx)?;
            self.slots.push(value);
            let cat = category(&self.program.instrs[idx].op);
            let delta = CatCost {
                bytes: self.io.bytes_len() - bytes_before,
                rounds: self.io.rounds - rounds_before,
            };
            if delta.bytes > 0 || delta.rounds > 0 {
                let e = self.bytes_by_cat.entry(cat).or_default();
                e.bytes += delta.bytes;
                e.rounds += delta.rounds;
            }
        }
        let outputs = self
            .program
            .outputs
            .iter()
            .map(|&s| match &self.slots[s] {
                RtValue::PubF(t) => Some(t.clone()),
                RtValue::PubI(r) => Some(Tensor::new(
                    r.shape.clone(),
                    r.data.iter().map(|&v| self.ring.decode_f64(v, r.scale)).collect(),
                )),
                _ => None,
            })
            .collect();
        Ok(EngineResult {
            outputs,
            bytes_sent: self.io.bytes_sent,
            rounds: self.io.rounds,
            by_cat: self.bytes_by_cat,
            transcript: std::mem::take(&mut self.io.transcript),
            audit: self.audit,
        })
    }

    fn share_at(&self, s: Slot) -> Result<&ShareTensor> {
        match &self.slots[s] {
            RtValue::Share(t) => Ok(t),
            _ => Err(self.perr("expected secret shares")),
        }
    }

    fn pubf_at(&self, s: Slot) -> Result<&Tensor> {
        match &self.slots[s] {
            RtValue::PubF(t) => Ok(t),
            _ => Err(self.perr("expected public float")),
        }
    }

    fn pubi_at(&self, s: Slot) -> Result<&RingTensor> {
        match &self.slots[s] {
            RtValue::PubI(t) => Ok(t),
            _ => Err(self.perr("expected public integer")),
        }
    }

    fn perr(&self, msg: impl Into<String>) -> Error {
        Error::Protocol { index: self.io.current_instr, msg: msg.into() }
    }

    fn eval(&mut self, idx: usize) -> Result<RtValue> {
        let instr = &self.program.instrs[idx];
        let ring = self.ring;
        let party = self.program.party;
        let ty = instr.ty;
        let out = match &instr.op {
            InstrOp::InputPub { name } => {
                let t = self
                    .inputs
                    .get(name)
                    .ok_or_else(|| self.perr(format!("missing public input \"{name}\"")))?;
                if ty.base == Base::Float {
                    RtValue::PubF(t.clone())
                } else {
                    RtValue::PubI(RingTensor {
                        shape: t.shape.clone(),
                        data: t.data.iter().map(|&v| ring.from_signed(v.round() as i64)).collect(),
                        scale: ty.scale,
                    })
                }
            }
            InstrOp::InputShare { name, owner } => {
                if *owner == party {
                    let t = self
                        .inputs
                        .get(name)
                        .ok_or_else(|| self.perr(format!("missing secret input \"{name}\" at owner")))?;
                    if t.shape != instr.shape {
                        return Err(self.perr(format!(
                            "input \"{name}\" shape {:?} != declared {:?}",
                            t.shape, instr.shape
                        )));
                    }
                    let enc: Vec<u64> = t.data.iter().map(|&v| ring.encode_f64(v, ty.scale)).collect();
                    let (own, peer) = share::share(&enc, ring, &mut self.rng);
                    self.io.begin_round();
                    self.io.send(encode_elems(&peer, ring))?;
                    RtValue::Share(ShareTensor { shape: t.shape.clone(), data: own, scale: ty.scale, party })
                } else {
                    self.io.begin_round();
                    let data = decode_elems(&self.io.recv()?, ring);
                    RtValue::Share(ShareTensor { shape: instr.shape.clone(), data, scale: ty.scale, party })
                }
            }
            InstrOp::ConstF { data } => RtValue::PubF(Tensor::new(instr.shape.clone(), data.clone())),
            InstrOp::ConstI { data } => RtValue::PubI(RingTensor {
                shape: instr.shape.clone(),
                data: data.iter().map(|&v| ring.from_signed(v)).collect(),
                scale: ty.scale,
            }),
            InstrOp::EncodeFloat { src } => {
                let t = self.pubf_at(*src)?;
                RtValue::PubI(RingTensor {
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|&v| ring.encode_f64(v, ty.scale)).collect(),
                    scale: ty.scale,
                })
            }
            InstrOp::Rescale { src } => match &self.slots[*src] {
                RtValue::Share(t) => {
                    let data = rescale_data(&t.data, t.scale, ty.scale, ring);
                    RtValue::Share(ShareTensor { shape: t.shape.clone(), data, scale: ty.scale, party })
                }
                RtValue::PubI(t) => {
                    let data = rescale_data(&t.data, t.scale, ty.scale, ring);
                    RtValue::PubI(RingTensor { shape: t.shape.clone(), data, scale: ty.scale })
                }
                _ => return Err(self.perr("rescale on non-integer value")),
            },
            InstrOp::Trunc { src, by } => match &self.slots[*src] {
                RtValue::Share(t) => RtValue::Share(share::trunc_local(t, by.exp(), ring)),
                RtValue::PubI(t) => RtValue::PubI(RingTensor {
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|&v| ring.shift_down(v, by.exp())).collect(),
                    scale: Scale(t.scale.exp().saturating_sub(by.exp())),
                }),
                _ => return Err(self.perr("trunc on non-integer value")),
            },
            InstrOp::IntToFloat { src } => {
                let t = self.pubi_at(*src)?;
                RtValue::PubF(Tensor::new(
                    t.shape.clone(),
                    t.data.iter().map(|&v| ring.decode_f64(v, t.scale)).collect(),
                ))
            }
            InstrOp::Add { a, b } | InstrOp::Sub { a, b } => {
                let sub = matches!(instr.op, InstrOp::Sub { .. });
                self.addsub(*a, *b, sub)?
            }
            InstrOp::Neg { src } => match &self.slots[*src] {
                RtValue::Share(t) => RtValue::Share(ShareTensor {
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|&v| ring.neg(v)).collect(),
                    scale: t.scale,
                    party,
                }),
                RtValue::PubI(t) => RtValue::PubI(RingTensor {
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|&v| ring.neg(v)).collect(),
                    scale: t.scale,
                }),
                RtValue::PubF(t) => RtValue::PubF(t.map(|v| -v)),
                RtValue::Empty => return Err(self.perr("neg of empty slot")),
            },
            InstrOp::MulLocal { a, b, kind } => self.mul_local(*a, *b, *kind)?,
            InstrOp::MulMpc { a, b, kind } => {
                let x = self.share_at(*a)?.clone();
                let y = self.share_at(*b)?.clone();
                let products = mul_products(*kind, &x.shape, &y.shape);
                let mut triple = self.deal.arith(products);
                RtValue::Share(beaver_mul(ring, &mut self.io, &x, &y, *kind, &mut triple)?)
            }
            InstrOp::SumAxis { src, axis } => match &self.slots[*src] {
                RtValue::Share(t) => {
                    let (shape, data) =
                        share::reduce_axis_keep(&t.shape, &t.data, *axis, 0, |a, b| ring.add(a, b))?;
                    RtValue::Share(ShareTensor { shape, data, scale: t.scale, party })
                }
                RtValue::PubI(t) => {
                    let (shape, data) =
                        share::reduce_axis_keep(&t.shape, &t.data, *axis, 0, |a, b| ring.add(a, b))?;
                    RtValue::PubI(RingTensor { shape, data, scale: t.scale })
                }
                RtValue::PubF(t) => RtValue::PubF(match axis {
                    Some(a) => t.reduce_axis_keep(*a, 0.0, |x, y| x + y)?,
                    None => t.reduce_all(0.0, |x, y| x + y),
                }),
                RtValue::Empty => return Err(self.perr("sum of empty slot")),
            },
            InstrOp::PoolSum { src, kh, kw } => match &self.slots[*src] {
                RtValue::Share(t) => {
                    let (shape, data) = share::pool_sum(&t.shape, &t.data, *kh, *kw, ring)?;
                    RtValue::Share(ShareTensor { shape, data, scale: t.scale, party })
                }
                RtValue::PubI(t) => {
                    let (shape, data) = share::pool_sum(&t.shape, &t.data, *kh, *kw, ring)?;
                    RtValue::PubI(RingTensor { shape, data, scale: t.scale })
                }
                RtValue::PubF(t) => RtValue::PubF(t.pool2d(*kh, *kw, 0.0, |a, b| a + b)?),
                RtValue::Empty => return Err(self.perr("pool of empty slot")),
            },
            InstrOp::Reshape { src } | InstrOp::Flatten { src } => {
                self.reshaped(*src, instr.shape.clone())?
            }
            InstrOp::Transpose { src } => match &self.slots[*src] {
                RtValue::Share(t) => {
                    let (shape, data) = share::transpose2(&t.shape, &t.data)?;
                    RtValue::Share(ShareTensor { shape, data, scale: t.scale, party })
                }
                RtValue::PubI(t) => {
                    let (shape, data) = share::transpose2(&t.shape, &t.data)?;
                    RtValue::PubI(RingTensor { shape, data, scale: t.scale })
                }
                RtValue::PubF(t) => RtValue::PubF(t.transpose2()?),
                RtValue::Empty => return Err(self.perr("transpose of empty slot")),
            },
            InstrOp::Permute { src, perm } => match &self.slots[*src] {
                RtValue::Share(t) => {
                    let (shape, data) = share::permute(&t.shape, &t.data, perm)?;
                    RtValue::Share(ShareTensor { shape, data, scale: t.scale, party })
                }
                RtValue::PubI(t) => {
                    let (shape, data) = share::permute(&t.shape, &t.data, perm)?;
                    RtValue::PubI(RingTensor { shape, data, scale: t.scale })
                }
                RtValue::PubF(t) => RtValue::PubF(t.permute(perm)?),
                RtValue::Empty => return Err(self.perr("permute of empty slot")),
            },
            InstrOp::StackOp { srcs } => {
                if srcs.iter().all(|&s| matches!(self.slots[s], RtValue::Share(_))) {
                    let parts: Vec<&ShareTensor> =
                        srcs.iter().map(|&s| self.share_at(s)).collect::<Result<_>>()?;
                    let mut data = Vec::new();
                    for p in &parts {
                        data.extend_from_slice(&p.data);
                    }
                    RtValue::Share(ShareTensor {
                        shape: instr.shape.clone(),
                        data,
                        scale: parts[0].scale,
                        party,
                    })
                } else if srcs.iter().all(|&s| matches!(self.slots[s], RtValue::PubF(_))) {
                    let parts: Vec<&Tensor> = srcs.iter().map(|&s| self.pubf_at(s)).collect::<Result<_>>()?;
                    RtValue::PubF(Tensor::stack(&parts)?)
                } else {
                    let mut data = Vec::new();
                    let mut scale = Scale::ONE;
                    for &s in srcs {
                        let t = self.pubi_at(s)?;
                        scale = t.scale;
                        data.extend_from_slice(&t.data);
                    }
                    RtValue::PubI(RingTensor { shape: instr.shape.clone(), data, scale })
                }
            }
            InstrOp::LtzLocal { src } => match &self.slots[*src] {
                RtValue::PubF(t) => RtValue::PubI(RingTensor {
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|&v| u64::from(v < 0.0)).collect(),
                    scale: Scale::ONE,
                }),
                RtValue::PubI(t) => RtValue::PubI(RingTensor {
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|&v| u64::from(ring.to_signed(v) < 0)).collect(),
                    scale: Scale::ONE,
                }),
                _ => return Err(self.perr("local ltz on secret value")),
            },
            InstrOp::LtzMpc { src, window } => {
                let x = self.share_at(*src)?.clone();
                let n = x.numel();
                let mut bt = self.deal.bool_triples(n * ltz_and_gates(*window));
                let mut db = self.deal.dabits(n);
                RtValue::Share(ltz_protocol(
                    ring,
                    &mut self.io,
                    &x,
                    *window,
                    &mut bt,
                    &mut db,
                    self.audit.as_mut(),
                )?)
            }
            InstrOp::MaxLocal { src, dims } => self.max_local(*src, dims)?,
            InstrOp::MaxKernel { src, dims, window } => {
                let x = self.share_at(*src)?.clone();
                let deal = self.deal.clone();
                RtValue::Share(max_kernel(
                    ring,
                    &mut self.io,
                    &x,
                    dims,
                    *window,
                    &deal,
                    self.audit.as_mut(),
                )?)
            }
            // Copy broadcasts a scalar share to the destination shape; a
            // public addend folded in at party 0 can widen the value there
            // while party 1 only replicates its scalar share.
            InstrOp::Copy { src } => {
                let mut v = self.slots[*src].clone();
                if let RtValue::Share(t) = &mut v {
                    let want: usize = instr.shape.iter().product();
                    if t.data.len() == 1 && want > 1 {
                        t.data = vec![t.data[0]; want];
                    }
                    t.shape = instr.shape.clone();
                }
                v
            }
            InstrOp::Nop => RtValue::Empty,
            InstrOp::Reveal { src, to } => {
                let x = self.share_at(*src)?.clone();
                self.io.begin_round();
                if party == *to {
                    let peer = decode_elems(&self.io.recv()?, ring);
                    if peer.len() != x.numel() {
                        return Err(self.perr("reveal share size mismatch"));
                    }
                    let data: Vec<f64> = x
                        .data
                        .iter()
                        .zip(&peer)
                        .map(|(&a, &b)| ring.decode_f64(ring.add(a, b), x.scale))
                        .collect();
                    RtValue::PubF(Tensor::new(x.shape.clone(), data))
                } else {
                    self.io.send(encode_elems(&x.data, ring))?;
                    RtValue::Empty
                }
            }
        };
        Ok(out)
    }

    fn reshaped(&self, src: Slot, shape: Vec<usize>) -> Result<RtValue> {
        Ok(match &self.slots[src] {
            RtValue::Share(t) => RtValue::Share(ShareTensor {
                shape,
                data: t.data.clone(),
                scale: t.scale,
                party: t.party,
            }),
            RtValue::PubI(t) => RtValue::PubI(RingTensor { shape, data: t.data.clone(), scale: t.scale }),
            RtValue::PubF(t) => RtValue::PubF(Tensor::new(shape, t.data.clone())),
            RtValue::Empty => return Err(self.perr("reshape of empty slot")),
        })
    }

    fn addsub(&mut self, a: Slot, b: Slot, sub: bool) -> Result<RtValue> {
        let ring = self.ring;
        let party = self.program.party;
        Ok(match (&self.slots[a], &self.slots[b]) {
            (RtValue::Share(x), RtValue::Share(y)) => {
                RtValue::Share(share::add_shares(x, y, ring, sub)?)
            }
            (RtValue::Share(x), RtValue::PubI(c)) => {
                // Mixed additions only appear in party 0's program.
                let out = if sub {
                    let negc: Vec<u64> = c.data.iter().map(|&v| ring.neg(v)).collect();
                    share::add_public(x, &negc, &c.shape, ring, party == 0)?
                } else {
                    share::add_public(x, &c.data, &c.shape, ring, party == 0)?
                };
                RtValue::Share(out)
            }
            (RtValue::PubI(c), RtValue::Share(y)) => {
                let base = if sub {
                    ShareTensor {
                        shape: y.shape.clone(),
                        data: y.data.iter().map(|&v| ring.neg(v)).collect(),
                        scale: y.scale,
                        party,
                    }
                } else {
                    y.clone()
                };
                RtValue::Share(share::add_public(&base, &c.data, &c.shape, ring, party == 0)?)
            }
            (RtValue::PubI(x), RtValue::PubI(y)) => {
                let (shape, data) = share::zip_bc(&x.shape, &x.data, &y.shape, &y.data, |p, q| {
                    if sub {
                        ring.sub(p, q)
                    } else {
                        ring.add(p, q)
                    }
                })?;
                RtValue::PubI(RingTensor { shape, data, scale: x.scale })
            }
            (RtValue::PubF(x), RtValue::PubF(y)) => {
                RtValue::PubF(x.zip(y, |p, q| if sub { p - q } else { p + q })?)
            }
            _ => return Err(self.perr("mismatched add/sub operand kinds")),
        })
    }

    fn mul_local(&mut self, a: Slot, b: Slot, kind: MulKind) -> Result<RtValue> {
        let ring = self.ring;
        let party = self.program.party;
        let as_ring = |v: &RtValue| -> Option<(Vec<usize>, Vec<u64>, bool, Scale)> {
            match v {
                RtValue::Share(t) => Some((t.shape.clone(), t.data.clone(), true, t.scale)),
                RtValue::PubI(t) => Some((t.shape.clone(), t.data.clone(), false, t.scale)),
                _ => None,
            }
        };
        match (as_ring(&self.slots[a]), as_ring(&self.slots[b])) {
            (Some((sa, da, seca, sca)), Some((sb, db, secb, scb))) => {
                if seca && secb {
                    return Err(self.perr("plain mul on two secrets"));
                }
                let (shape, data) = match kind {
                    MulKind::Elem => share::zip_bc(&sa, &da, &sb, &db, |x, y| ring.mul(x, y))?,
                    MulKind::MatMul => share::ring_matmul(&sa, &da, &sb, &db, ring)?,
                    MulKind::Conv2d => share::ring_conv2d(&sa, &da, &sb, &db, ring)?,
                };
                let scale = Scale(sca.exp() + scb.exp());
                if seca || secb {
                    Ok(RtValue::Share(ShareTensor { shape, data, scale, party }))
                } else {
                    Ok(RtValue::PubI(RingTensor { shape, data, scale }))
                }
            }
            _ => {
                let x = self.pubf_at(a)?;
                let y = self.pubf_at(b)?;
                let out = match kind {
                    MulKind::Elem => x.zip(y, |p, q| p * q)?,
                    MulKind::MatMul => x.matmul(y)?,
                    MulKind::Conv2d => x.conv2d(y)?,
                };
                Ok(RtValue::PubF(out))
            }
        }
    }

    fn max_local(&self, src: Slot, dims: &MaxDims) -> Result<RtValue> {
        let ring = self.ring;
        match &self.slots[src] {
            RtValue::PubF(t) => {
                let out = match dims {
                    MaxDims::Axis { axis: Some(a) } => {
                        t.reduce_axis_keep(*a, f64::NEG_INFINITY, f64::max)?
                    }
                    MaxDims::Axis { axis: None } => t.reduce_all(f64::NEG_INFINITY, f64::max),
                    MaxDims::Pool { kh, kw } => t.pool2d(*kh, *kw, f64::NEG_INFINITY, f64::max)?,
                };
                Ok(RtValue::PubF(out))
            }
            RtValue::PubI(t) => {
                let smax = |a: u64, b: u64| if ring.to_signed(a) >= ring.to_signed(b) { a } else { b };
                let min_elem = ring.from_signed(ring.to_signed(1u64 << (ring.width - 1)));
                let (shape, data) = match dims {
                    MaxDims::Axis { axis } => {
                        share::reduce_axis_keep(&t.shape, &t.data, *axis, min_elem, smax)?
                    }
                    MaxDims::Pool { kh, kw } => {
                        let groups = super::protocol::max_groups(dims, &t.shape);
                        let [n, c, h, w] = match t.shape.as_slice() {
                            [n, c, h, w] => [*n, *c, *h, *w],
                            _ => return Err(self.perr("pool expects 4-d")),
                        };
                        let data = groups
                            .iter()
                            .map(|g| g.iter().map(|&i| t.data[i]).fold(min_elem, smax))
                            .collect();
                        (vec![n, c, h / kh, w / kw], data)
                    }
                };
                Ok(RtValue::PubI(RingTensor { shape, data, scale: t.scale }))
            }
            _ => Err(self.perr("local max on secret value")),
        }
    }
}

fn rescale_data(data: &[u64], from: Scale, to: Scale, ring: Ring) -> Vec<u64> {
    if to.exp() >= from.exp() {
        let k = to.exp() - from.exp();
        data.iter().map(|&v| ring.shift_up(v, k)).collect()
    } else {
        let k = from.exp() - to.exp();
        data.iter().map(|&v| ring.shift_down(v, k)).collect()
    }
}

fn category(op: &InstrOp) -> Category {
    match op {
        InstrOp::MulMpc { kind: MulKind::Elem, .. } => Category::Mul,
        InstrOp::MulMpc { .. } => Category::Linear,
        InstrOp::LtzMpc { .. } => Category::Comparison,
        InstrOp::MaxKernel { .. } => Category::Max,
        _ => Category::Other,
    }
}

impl PartyIo {
    fn bytes_len(&self) -> u64 {
        self.bytes_sent
    }
}
