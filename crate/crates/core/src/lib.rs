//! Expectable Motion Unit toolkit.
//!
//! Turns coded human-reaction trials into velocity/distance risk matrices for
//! involuntary motion occurrence (IMO), derives linear expectation curves from
//! them, and composes the resulting limit with a reflected-mass based Safe
//! Motion Unit into a velocity governor.
//!
//! Pipeline, leaf to root:
//!
//! * [`trial_data`]: CSV ingestion, Cohen's kappa, cue statistics.
//! * [`risk_model`]: risk matrix, threshold crossings, expectation curves.
//! * [`manipulator_dynamics`]: DH kinematics, mass matrix, reflected mass.
//! * [`smu`]: safety curves mapping reflected mass to a safe speed.
//! * [`governor`]: `min(v_d, v_SMU, v_EMU)` composition and slew limiting.
//! * [`simulator`]: 1-D approach scenario driven by the governor.
//! * [`config`] and [`service`]: configuration bundles and the
//!   newline-delimited telemetry/limit protocol.

// Range checks are written `!(x > lo)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod governor;
pub mod manipulator_dynamics;
pub mod risk_model;
pub mod service;
pub mod simulator;
pub mod smu;
pub mod trial_data;

pub use governor::{ActiveLimit, Decision, GovernorInput, SlewLimiter};
pub use manipulator_dynamics::{ArmModel, ReflectedMass};
pub use risk_model::{EmuLimit, ExpectationCurve, RiskMatrix};
pub use smu::{CurveSet, SafetyCurve};
pub use trial_data::{CueCode, TrialRecord};
