//! In-process duplex message channels with exact byte accounting.

use std::sync::mpsc::{Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixedpoint::Ring;

const RECV_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    /// Round index at which the message was sent.
    pub round: u64,
    pub from: u8,
    /// Instruction index the message belongs to.
    pub instr: usize,
    pub bytes: usize,
}

/// One party's endpoint: FIFO queues to and from the peer, plus counters.
pub struct PartyIo {
    pub party: u8,
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    pub bytes_sent: u64,
    pub rounds: u64,
    pub current_instr: usize,
    pub transcript: Vec<TranscriptEntry>,
}

impl PartyIo {
    pub fn pair() -> (PartyIo, PartyIo) {
        let (tx0, rx1) = std::sync::mpsc::channel();
        let (tx1, rx0) = std::sync::mpsc::channel();
        let mk = |party, tx, rx| PartyIo {
            party,
            tx,
            rx,
            bytes_sent: 0,
            rounds: 0,
            current_instr: 0,
            transcript: Vec::new(),
        };
        (mk(0, tx0, rx0), mk(1, tx1, rx1))
    }

    /// A round is a batch of messages whose senders do not depend on each
    /// other; both directions of one exchange share the round index.
    pub fn begin_round(&mut self) {
        self.rounds += 1;
    }

    pub fn send(&mut self, payload: Vec<u8>) -> Result<()> {
        self.bytes_sent += payload.len() as u64;
        self.transcript.push(TranscriptEntry {
            round: self.rounds,
            from: self.party,
            instr: self.current_instr,
            bytes: payload.len(),
        });
        self.tx.send(payload).map_err(|_| Error::Protocol {
            index: self.current_instr,
            msg: "peer hung up (send without matching recv)".into(),
        })
    }

    pub fn recv(&mut self) -> Result<Vec<u8>> {
        match self.rx.recv_timeout(RECV_TIMEOUT) {
            Ok(m) => Ok(m),
            Err(RecvTimeoutError::Timeout) => Err(Error::Protocol {
                index: self.current_instr,
                msg: "timed out waiting for peer message (desynchronized programs)".into(),
            }),
            Err(RecvTimeoutError::Disconnected) => Err(Error::Protocol {
                index: self.current_instr,
                msg: "peer disconnected".into(),
            }),
        }
    }

    /// Simultaneous exchange: both parties send, then receive, within one
    /// round.
    pub fn exchange(&mut self, payload: Vec<u8>) -> Result<Vec<u8>> {
        self.begin_round();
        self.send(payload)?;
        self.recv()
    }
}

/// Little-endian wire form of ring elements, `ceil(N/8)` bytes each.
pub fn encode_elems(v: &[u64], ring: Ring) -> Vec<u8> {
    let k = ring.elem_bytes();
    let mut out = Vec::with_capacity(v.len() * k);
    for &x in v {
        out.extend_from_slice(&x.to_le_bytes()[..k]);
    }
    out
}

pub fn decode_elems(bytes: &[u8], ring: Ring) -> Vec<u64> {
    let k = ring.elem_bytes();
    bytes
        .chunks_exact(k)
        .map(|c| {
            let mut b = [0u8; 8];
            b[..k].copy_from_slice(c);
            ring.reduce(u64::from_le_bytes(b))
        })
        .collect()
}

/// LSB-first bit packing.
pub fn pack_bits(bits: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        out[i / 8] |= (b & 1) << (i % 8);
    }
    out
}

pub fn unpack_bits(bytes: &[u8], n: usize) -> Vec<u8> {
    (0..n).map(|i| (bytes[i / 8] >> (i % 8)) & 1).collect()
}
