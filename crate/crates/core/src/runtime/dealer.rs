//! Trusted dealer: provisions correlated randomness (Beaver triples, boolean
//! AND triples, daBits) ahead of the online phase.
//!
//! The dealer is an in-process oracle shared by both party engines. Each
//! kind of randomness is generated from its own seeded stream in index
//! order, so the values are independent of which party asks first.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::fixedpoint::Ring;

/// One party's half of a batch of arithmetic Beaver triples
/// (`c = a * b mod 2^N`, elementwise).
#[derive(Debug, Clone)]
pub struct BeaverTripleShare {
    pub a: Vec<u64>,
    pub b: Vec<u64>,
    pub c: Vec<u64>,
    used: bool,
}

impl BeaverTripleShare {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// Mark the triple consumed; a second use is refused.
    pub fn consume(&mut self) -> Result<()> {
        if self.used {
            return Err(Error::Dealer("Beaver triple already consumed".into()));
        }
        self.used = true;
        Ok(())
    }
}

/// One party's XOR shares of boolean AND triples (`c = a & b`), bit-packed
/// one bit per `u8`.
#[derive(Debug, Clone)]
pub struct BoolTripleShare {
    pub a: Vec<u8>,
    pub b: Vec<u8>,
    pub c: Vec<u8>,
    used: bool,
}

impl BoolTripleShare {
    pub fn consume(&mut self) -> Result<()> {
        if self.used {
            return Err(Error::Dealer("boolean triple batch already consumed".into()));
        }
        self.used = true;
        Ok(())
    }
}

/// One party's share of daBits: a random bit shared both XOR-wise and
/// arithmetically, used to convert comparison outputs back to ring shares.
#[derive(Debug, Clone)]
pub struct DaBitShare {
    pub xor: Vec<u8>,
    pub arith: Vec<u64>,
    used: bool,
}

impl DaBitShare {
    pub fn consume(&mut self) -> Result<()> {
        if self.used {
            return Err(Error::Dealer("daBit batch already consumed".into()));
        }
        self.used = true;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DealerStats {
    pub arithmetic: [u64; 2],
    pub boolean: [u64; 2],
    pub dabits: [u64; 2],
}

struct Stream<T> {
    rng: ChaCha20Rng,
    generated: Vec<T>,
    served: [usize; 2],
}

impl<T> Stream<T> {
    fn new(seed: u64, domain: u64) -> Stream<T> {
        Stream { rng: ChaCha20Rng::seed_from_u64(seed ^ domain), generated: Vec::new(), served: [0, 0] }
    }

    fn take(&mut self, party: usize, n: usize, gen: impl Fn(&mut ChaCha20Rng) -> T) -> &[T] {
        while self.generated.len() < self.served[party] + n {
            let v = gen(&mut self.rng);
            self.generated.push(v);
        }
        let start = self.served[party];
        self.served[party] += n;
        &self.generated[start..start + n]
    }
}

/// Arithmetic triple pair: ((a0,b0,c0), (a1,b1,c1)) per element.
type ArithElem = [u64; 6];
/// Boolean triple pair bits: (a0,b0,c0,a1,b1,c1).
type BoolElem = [u8; 6];
/// daBit pair: (x0,x1 xor bits, r0,r1 ring shares).
type DaBitElem = (u8, u8, u64, u64);

pub struct Dealer {
    ring: Ring,
    arith: Stream<ArithElem>,
    boolean: Stream<BoolElem>,
    dabit: Stream<DaBitElem>,
}

impl Dealer {
    pub fn new(seed: u64, ring: Ring) -> Dealer {
        Dealer {
            ring,
            arith: Stream::new(seed, 0x61),
            boolean: Stream::new(seed, 0x62),
            dabit: Stream::new(seed, 0x63),
        }
    }

    pub fn arith_triples(&mut self, party: u8, n: usize) -> BeaverTripleShare {
        let ring = self.ring;
        let elems = self.arith.take(party as usize, n, |rng| {
            let a = ring.reduce(rng.next_u64());
            let b = ring.reduce(rng.next_u64());
            let c = ring.mul(a, b);
            let a0 = ring.reduce(rng.next_u64());
            let b0 = ring.reduce(rng.next_u64());
            let c0 = ring.reduce(rng.next_u64());
            [a0, b0, c0, ring.sub(a, a0), ring.sub(b, b0), ring.sub(c, c0)]
        });
        let off = if party == 0 { 0 } else { 3 };
        BeaverTripleShare {
            a: elems.iter().map(|e| e[off]).collect(),
            b: elems.iter().map(|e| e[off + 1]).collect(),
            c: elems.iter().map(|e| e[off + 2]).collect(),
            used: false,
        }
    }

    pub fn bool_triples(&mut self, party: u8, n: usize) -> BoolTripleShare {
        let elems = self.boolean.take(party as usize, n, |rng| {
            let bits = rng.next_u64();
            let a = (bits & 1) as u8;
            let b = ((bits >> 1) & 1) as u8;
            let c = a & b;
            let a0 = ((bits >> 2) & 1) as u8;
            let b0 = ((bits >> 3) & 1) as u8;
            let c0 = ((bits >> 4) & 1) as u8;
            [a0, b0, c0, a ^ a0, b ^ b0, c ^ c0]
        });
        let off = if party == 0 { 0 } else { 3 };
        BoolTripleShare {
            a: elems.iter().map(|e| e[off]).collect(),
            b: elems.iter().map(|e| e[off + 1]).collect(),
            c: elems.iter().map(|e| e[off + 2]).collect(),
            used: false,
        }
    }

    pub fn dabits(&mut self, party: u8, n: usize) -> DaBitShare {
        let ring = self.ring;
        let elems = self.dabit.take(party as usize, n, |rng| {
            let bits = rng.next_u64();
            let b = (bits & 1) as u8;
            let x0 = ((bits >> 1) & 1) as u8;
            let r0 = ring.reduce(rng.next_u64());
            (x0, b ^ x0, r0, ring.sub(b as u64, r0))
        });
        if party == 0 {
            DaBitShare {
                xor: elems.iter().map(|e| e.0).collect(),
                arith: elems.iter().map(|e| e.2).collect(),
                used: false,
            }
        } else {
            DaBitShare {
                xor: elems.iter().map(|e| e.1).collect(),
                arith: elems.iter().map(|e| e.3).collect(),
                used: false,
            }
        }
    }

    /// Randomness served so far, per kind and party.
    pub fn stats(&self) -> DealerStats {
        DealerStats {
            arithmetic: [self.arith.served[0] as u64, self.arith.served[1] as u64],
            boolean: [self.boolean.served[0] as u64, self.boolean.served[1] as u64],
            dabits: [self.dabit.served[0] as u64, self.dabit.served[1] as u64],
        }
    }
}

/// One party's view of the shared dealer.
#[derive(Clone)]
pub struct DealerHandle {
    pub inner: std::sync::Arc<std::sync::Mutex<Dealer>>,
    pub party: u8,
}

impl DealerHandle {
    pub fn new(dealer: Dealer, party: u8) -> DealerHandle {
        DealerHandle { inner: std::sync::Arc::new(std::sync::Mutex::new(dealer)), party }
    }

    pub fn for_party(&self, party: u8) -> DealerHandle {
        DealerHandle { inner: self.inner.clone(), party }
    }

    pub fn arith(&self, n: usize) -> BeaverTripleShare {
        self.inner.lock().unwrap().arith_triples(self.party, n)
    }

    pub fn bool_triples(&self, n: usize) -> BoolTripleShare {
        self.inner.lock().unwrap().bool_triples(self.party, n)
    }

    pub fn dabits(&self, n: usize) -> DaBitShare {
        self.inner.lock().unwrap().dabits(self.party, n)
    }

    pub fn stats(&self) -> DealerStats {
        self.inner.lock().unwrap().stats()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::share::reconstruct;

    #[test]
    fn triples_reconstruct() {
        let ring = Ring::new(64);
        let mut d = Dealer::new(42, ring);
        let t0 = d.arith_triples(0, 8);
        let t1 = d.arith_triples(1, 8);
        let a = reconstruct(&t0.a, &t1.a, ring);
        let b = reconstruct(&t0.b, &t1.b, ring);
        let c = reconstruct(&t0.c, &t1.c, ring);
        for i in 0..8 {
            assert_eq!(c[i], ring.mul(a[i], b[i]));
        }
    }

    #[test]
    fn bool_triples_and_dabits_reconstruct() {
        let ring = Ring::new(16);
        let mut d = Dealer::new(1, ring);
        let t0 = d.bool_triples(0, 64);
        let t1 = d.bool_triples(1, 64);
        for i in 0..64 {
            let a = t0.a[i] ^ t1.a[i];
            let b = t0.b[i] ^ t1.b[i];
            let c = t0.c[i] ^ t1.c[i];
            assert_eq!(c, a & b);
        }
        let d0 = d.dabits(0, 64);
        let d1 = d.dabits(1, 64);
        for i in 0..64 {
            let b = (d0.xor[i] ^ d1.xor[i]) as u64;
            assert_eq!(ring.add(d0.arith[i], d1.arith[i]), b);
        }
    }

    #[test]
    fn order_independent_generation() {
        let ring = Ring::new(64);
        let mut d1 = Dealer::new(9, ring);
        let a = d1.arith_triples(0, 4);
        let b = d1.arith_triples(1, 4);
        let mut d2 = Dealer::new(9, ring);
        let b2 = d2.arith_triples(1, 4);
        let a2 = d2.arith_triples(0, 4);
        assert_eq!(a.a, a2.a);
        assert_eq!(b.c, b2.c);
    }

    #[test]
    fn triple_reuse_refused() {
        let ring = Ring::new(64);
        let mut d = Dealer::new(3, ring);
        let mut t = d.arith_triples(0, 1);
        t.consume().unwrap();
        assert!(t.consume().is_err());
    }
}
