//! Two-party MPC execution over additive secret shares with a trusted
//! dealer, in-process channels and exact communication accounting.

pub mod channel;
pub mod dealer;
mod engine;
pub mod protocol;
pub mod share;

pub use channel::{PartyIo, TranscriptEntry};
pub use dealer::{BeaverTripleShare, BoolTripleShare, DaBitShare, Dealer, DealerHandle};
pub use engine::{execute, execute_checked, ExecOptions, ExecOutput, RingTensor, Seeds};
pub use protocol::{beaver_mul, ltz_protocol, max_kernel, CmpAudit};
pub use share::{add_public, add_shares, mul_public, reconstruct, share, trunc_local, ShareTensor};
