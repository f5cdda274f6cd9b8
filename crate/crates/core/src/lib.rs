//! Credible autocoding for observer-based fault detectors.
//!
//! The crate turns a declarative plant/controller/observer model into
//! ellipsoid invariants, emits C code annotated with contracts that carry
//! those invariants, and re-checks every generated proof obligation with an
//! independent checker. A closed-loop simulator provides empirical evidence
//! for the invariants and the residual alarm.

// `!(x > 0.0)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autocoder;
pub mod checker;
pub mod ellipsoid;
pub mod model;
pub mod numerics;
pub mod sidecar;
pub mod simulator;
pub mod synthesis;
