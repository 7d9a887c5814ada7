//! Lowering of owner-annotated supported-set graphs into two per-party
//! programs, plus the static communication cost model.
//!
//! Lowering assigns every value a type ⟨label, base type, scale⟩ and picks
//! local vs MPC operator variants:
//!
//! * public values stay plaintext at both parties;
//! * single-owner inputs are encoded at the default scale and split into
//!   additive shares (the owner sends one share across);
//! * add-like operators align operand scales (rescaling to the larger one)
//!   and run locally; a public addend is folded in at party 0 only;
//! * mul-like operators between two secrets run the Beaver protocol and are
//!   always followed by truncation with the smaller operand scale;
//! * comparisons lower to the GMW bit protocol and produce scale-1 secrets;
//! * max reductions lower to the dedicated tree kernel.

pub mod cost;
mod lower;
mod typecheck;

pub use lower::{lower, lower_pair, LowerConfig};
pub use typecheck::typecheck_lowered;

use serde::{Deserialize, Serialize};

use crate::fixedpoint::{Ring, Scale};
use crate::frontend::PartyId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Pub,
    Secret,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Base {
    Int,
    Float,
}

/// The type of a lowered value: security label, base type, ring width and
/// fixed-point scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackType {
    pub label: Label,
    pub base: Base,
    pub width: u32,
    pub scale: Scale,
}

impl BackType {
    pub fn secret(width: u32, scale: Scale) -> BackType {
        BackType { label: Label::Secret, base: Base::Int, width, scale }
    }

    pub fn pub_float() -> BackType {
        BackType { label: Label::Pub, base: Base::Float, width: 64, scale: Scale::ONE }
    }

    pub fn pub_int(scale: Scale) -> BackType {
        BackType { label: Label::Pub, base: Base::Int, width: 64, scale }
    }

    pub fn is_secret(&self) -> bool {
        self.label == Label::Secret
    }
}

/// Value slot: instruction index within a program (SSA, one value per
/// instruction, identical numbering at both parties).
pub type Slot = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MulKind {
    Elem,
    MatMul,
    Conv2d,
}

/// Grouping of a max reduction: along an axis (or all elements) or over
/// pooling windows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxDims {
    Axis { axis: Option<usize> },
    Pool { kh: usize, kw: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum InstrOp {
    /// Public input: both parties receive the plaintext.
    InputPub { name: String },
    /// Secret input: the owner encodes at the default scale, splits into
    /// additive shares and sends one share to the peer.
    InputShare { name: String, owner: PartyId },
    ConstF { data: Vec<f64> },
    ConstI { data: Vec<i64> },
    /// Public float tensor -> ring integers at the destination scale
    /// (round to nearest).
    EncodeFloat { src: Slot },
    /// Integer rescale to the destination scale: exact shift up when the
    /// scale grows, floor shift down when it shrinks (share-wise on secrets).
    Rescale { src: Slot },
    /// Truncation by `by`: arithmetic shift right, share-wise on secrets.
    Trunc { src: Slot, by: Scale },
    IntToFloat { src: Slot },
    Add { a: Slot, b: Slot },
    Sub { a: Slot, b: Slot },
    Neg { src: Slot },
    /// Multiplication with at most one secret operand; runs locally.
    MulLocal { a: Slot, b: Slot, kind: MulKind },
    /// Beaver multiplication between two secrets.
    MulMpc { a: Slot, b: Slot, kind: MulKind },
    SumAxis { src: Slot, axis: Option<usize> },
    PoolSum { src: Slot, kh: usize, kw: usize },
    Reshape { src: Slot },
    Transpose { src: Slot },
    Permute { src: Slot, perm: Vec<usize> },
    Flatten { src: Slot },
    StackOp { srcs: Vec<Slot> },
    LtzLocal { src: Slot },
    /// GMW less-than-zero over the low `window` bits of the share sum.
    LtzMpc { src: Slot, window: u32 },
    MaxLocal { src: Slot, dims: MaxDims },
    /// Tree-reduction max over secret shares; internally performs
    /// pairwise ltz and mux multiplications at the given window.
    MaxKernel { src: Slot, dims: MaxDims, window: u32 },
    Copy { src: Slot },
    /// Placeholder keeping slot numbering aligned when only the other party
    /// materializes a value (e.g. the public addend of a mixed addition).
    Nop,
    /// Exchange shares so that `to` reconstructs and decodes the value.
    Reveal { src: Slot, to: PartyId },
}

impl InstrOp {
    /// Communication-bearing instructions must align across parties.
    pub fn is_comm(&self) -> bool {
        matches!(
            self,
            InstrOp::InputShare { .. }
                | InstrOp::MulMpc { .. }
                | InstrOp::LtzMpc { .. }
                | InstrOp::MaxKernel { .. }
                | InstrOp::Reveal { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instr {
    pub op: InstrOp,
    pub ty: BackType,
    pub shape: Vec<usize>,
    /// Site id of the graph node this instruction came from.
    pub site: String,
}

impl Instr {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartyProgram {
    pub party: PartyId,
    pub ring: Ring,
    pub default_scale: Scale,
    pub reveal_to: PartyId,
    pub instrs: Vec<Instr>,
    /// Slots holding revealed outputs, in graph output order.
    pub outputs: Vec<Slot>,
}

impl PartyProgram {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("program serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> crate::Result<PartyProgram> {
        serde_json::from_str(text).map_err(|e| crate::Error::parse(&e))
    }
}
