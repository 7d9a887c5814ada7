//! Compiler and two-party MPC simulator for private tensor-graph inference.
//!
//! The pipeline has four stages, each a pure function over the graph IR:
//!
//! 1. [`frontend`] attaches ownership annotations to graph inputs and
//!    propagates owner sets forward.
//! 2. [`approx`] rewrites operators that MPC cannot run natively (exp, GELU,
//!    softmax, ...) into the supported set of add-like, mul-like and
//!    less-than-zero operators, parameterized by tunable knobs. [`tuner`]
//!    searches per-site knob values under a quality budget.
//! 3. [`backend`] lowers the supported-set graph into two per-party
//!    instruction programs over fixed-point ring values, inserting encode and
//!    truncation steps, and prices each program with a static cost model.
//! 4. [`runtime`] executes the program pair over additive secret shares with
//!    a trusted dealer, in-process channels and exact communication counters.
//!
//! [`hummingbird`] is an optional pass between (2) and (3) that records
//! per-comparison value ranges on calibration data and shrinks comparison
//! windows accordingly.

pub mod approx;
pub mod backend;
pub mod error;
pub mod fixedpoint;
pub mod fixtures;
pub mod frontend;
pub mod graph;
pub mod hummingbird;
pub mod interp;
pub mod pipeline;
pub mod runtime;
pub mod tensor;
pub mod tuner;

pub use error::{Error, Result};
pub use fixedpoint::Scale;
pub use graph::{Graph, Node, NodeId, OpKind};
pub use tensor::Tensor;
