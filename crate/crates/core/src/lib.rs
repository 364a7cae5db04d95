//! Deterministic simulator of an islanded microgrid whose protection layer is
//! supervised by a sensorimotor-gating controller stack.
//!
//! The crate is organised along the control hierarchy:
//!
//! - [`plant`]: single-bus swing dynamics, droop primary control and the
//!   actuation gateways.
//! - [`telemetry`]: PMU-style sampling and windowed feature extraction.
//! - [`reflex`]: fast protection drive and hard safety limits.
//! - [`supervisor`]: harmless/harmful classification, decisions and the
//!   tabular learning rule.
//! - [`gate`]: the gating factor, gated response and secondary commands.
//! - [`baselines`]: BEL and PI secondary controllers for comparison.
//! - [`scenario`]: disturbance scripting, suite generators and the
//!   closed-loop orchestrator.
//! - [`report`]: KPIs, comparison tables and CSV/JSON/SVG emission.

pub mod baselines;
pub mod error;
pub mod gate;
pub mod plant;
pub mod reflex;
pub mod report;
pub mod scenario;
pub mod supervisor;
pub mod telemetry;

pub use error::{NmgError, Result};
