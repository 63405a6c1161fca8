//! Discrete-time approach scenario: the contact point travels along a line
//! toward the human while the governor shapes its speed.
//!
//! The nominal profile cruises at `v_nominal` and brakes at `nominal_decel`
//! so that it would come to rest exactly at `stop_distance`:
//! `v_d(d) = min(v_nominal, sqrt(2·decel·(d − stop)))`. Each step the
//! governor limits `v_d`, the slew limiter bounds the increase, and the
//! distance is advanced with forward Euler.

use std::fmt::Write as _;
use std::io::Write as _;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigBundle, ConfigError};
use crate::governor::{self, ActiveLimit, GovernorError, GovernorInput, SlewLimiter};
use crate::manipulator_dynamics::{reflected_mass, ArmModel, DynamicsError, ReflectedMass};

pub const TRACE_HEADER: &str = "t,d_h,v_cmd,active_limit";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("no progress after {steps} steps (d_h = {d_h} m); the safe velocity is zero before the stop distance")]
    Stall { steps: usize, d_h: f64 },
    #[error(transparent)]
    Governor(#[from] GovernorError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("trace line {line}: {message}")]
    TraceParse { line: usize, message: String },
}

/// Where the reflected mass for each step comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MassSource {
    Fixed(f64),
    /// Sample the bundle's arm model along a straight joint-space path,
    /// parameterised by approach progress.
    Arm {
        q_start: Vec<f64>,
        q_end: Vec<f64>,
        #[serde(default)]
        direction: Option<[f64; 3]>,
    },
}

fn default_start() -> f64 {
    0.44
}
fn default_dt() -> f64 {
    0.001
}
fn default_decel() -> f64 {
    2.0
}
fn default_max_steps() -> usize {
    1_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApproachScenario {
    #[serde(default = "default_start")]
    pub start_distance: f64,
    pub stop_distance: f64,
    pub v_nominal: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_decel")]
    pub nominal_decel: f64,
    pub mass: MassSource,
    pub body_part: String,
    pub curvature: String,
    #[serde(default)]
    pub condition: Option<String>,
    /// Overrides the bundle's `max_accel`.
    #[serde(default)]
    pub max_accel: Option<f64>,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

impl ApproachScenario {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        serde_json::from_str(text).map_err(|e| SimError::InvalidScenario(e.to_string()))
    }

    pub fn default_scenario() -> Self {
        Self::from_json(crate::config::DEFAULT_SCENARIO).expect("embedded scenario is valid")
    }

    fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidScenario(m.to_string()));
        if !(self.stop_distance.is_finite() && self.stop_distance >= 0.0) {
            return bad("stop_distance must be >= 0");
        }
        if !(self.start_distance.is_finite() && self.start_distance > self.stop_distance) {
            return bad("start_distance must exceed stop_distance");
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad("dt must be > 0");
        }
        if !(self.v_nominal.is_finite() && self.v_nominal >= 0.0) {
            return bad("v_nominal must be >= 0");
        }
        if !(self.nominal_decel.is_finite() && self.nominal_decel > 0.0) {
            return bad("nominal_decel must be > 0");
        }
        if let MassSource::Fixed(m) = self.mass {
            if !(m.is_finite() && m > 0.0) {
                return bad("fixed mass must be > 0");
            }
        }
        Ok(())
    }

    /// Nominal speed at distance `d`.
    pub fn nominal_velocity(&self, d: f64) -> f64 {
        let braking = (2.0 * self.nominal_decel * (d - self.stop_distance).max(0.0)).sqrt();
        self.v_nominal.min(braking)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub d_h: f64,
    pub v_cmd: f64,
    pub active: ActiveLimit,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimTrace {
    pub samples: Vec<Sample>,
}

enum MassModel<'a> {
    Fixed(ReflectedMass),
    Arm {
        arm: &'a ArmModel,
        q_start: &'a [f64],
        q_end: &'a [f64],
        direction: Vector3<f64>,
        q: Vec<f64>,
    },
}

impl MassModel<'_> {
    fn at(&mut self, progress: f64) -> Result<ReflectedMass, DynamicsError> {
        match self {
            MassModel::Fixed(m) => Ok(*m),
            MassModel::Arm {
                arm,
                q_start,
                q_end,
                direction,
                q,
            } => {
                for (qi, (a, b)) in q.iter_mut().zip(q_start.iter().zip(q_end.iter())) {
                    *qi = a + (b - a) * progress;
                }
                reflected_mass(arm, q, direction)
            }
        }
    }
}

/// Run the approach to completion: the trace ends with the sample where the
/// contact point rests at `stop_distance`.
pub fn run_approach(
    scenario: &ApproachScenario,
    bundle: &ConfigBundle,
) -> Result<SimTrace, SimError> {
    scenario.validate()?;
    let mut mass = match &scenario.mass {
        MassSource::Fixed(m) => MassModel::Fixed(ReflectedMass::Finite(*m)),
        MassSource::Arm {
            q_start,
            q_end,
            direction,
        } => {
            let arm = bundle.arm.as_ref().ok_or_else(|| {
                SimError::InvalidScenario("scenario samples an arm but the bundle has none".into())
            })?;
            if q_start.len() != arm.dof() || q_end.len() != arm.dof() {
                return Err(SimError::InvalidScenario(format!(
                    "joint path must have {} entries per configuration",
                    arm.dof()
                )));
            }
            MassModel::Arm {
                arm,
                q_start,
                q_end,
                direction: direction
                    .map(Vector3::from)
                    .unwrap_or(bundle.contact_direction),
                q: vec![0.0; arm.dof()],
            }
        }
    };
    let max_accel = scenario.max_accel.unwrap_or(bundle.max_accel);
    let mut limiter = SlewLimiter::new(max_accel, 0.0, 0.0)?;
    let span = scenario.start_distance - scenario.stop_distance;
    let stop = scenario.stop_distance;

    let mut decide = |d_h: f64| -> Result<governor::Decision, SimError> {
        let m = mass.at((scenario.start_distance - d_h) / span)?;
        let input = GovernorInput {
            v_d: scenario.nominal_velocity(d_h),
            mass: m,
            d_h,
            body_part: &scenario.body_part,
            curvature: &scenario.curvature,
            condition: scenario.condition.as_deref(),
        };
        Ok(governor::v_safe(&input, &bundle.curves, &bundle.policy)?)
    };

    let mut samples = Vec::new();
    let mut d = scenario.start_distance;
    let first = decide(d)?;
    samples.push(Sample {
        t: 0.0,
        d_h: d,
        v_cmd: 0.0,
        active: first.active,
    });
    let mut v = 0.0;
    for k in 1..=scenario.max_steps {
        let t = k as f64 * scenario.dt;
        d = (d - v * scenario.dt).max(stop);
        let decision = decide(d)?;
        v = limiter.apply(decision.v_safe, t)?;
        samples.push(Sample {
            t,
            d_h: d,
            v_cmd: v,
            active: decision.active,
        });
        if d == stop && v == 0.0 {
            return Ok(SimTrace { samples });
        }
    }
    Err(SimError::Stall {
        steps: scenario.max_steps,
        d_h: d,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    Csv,
    Document,
}

#[derive(Serialize, Deserialize)]
struct SampleDoc {
    t: f64,
    d_h: f64,
    v_cmd: f64,
    active_limit: ActiveLimit,
}

#[derive(Serialize, Deserialize)]
struct TraceDoc {
    samples: Vec<SampleDoc>,
}

pub fn export_trace(trace: &SimTrace, format: TraceFormat) -> Vec<u8> {
    match format {
        TraceFormat::Csv => {
            let mut out = String::with_capacity(32 * (trace.samples.len() + 1));
            out.push_str(TRACE_HEADER);
            out.push('\n');
            for s in &trace.samples {
                let _ = writeln!(out, "{},{},{},{}", s.t, s.d_h, s.v_cmd, s.active);
            }
            out.into_bytes()
        }
        TraceFormat::Document => {
            let doc = TraceDoc {
                samples: trace
                    .samples
                    .iter()
                    .map(|s| SampleDoc {
                        t: s.t,
                        d_h: s.d_h,
                        v_cmd: s.v_cmd,
                        active_limit: s.active,
                    })
                    .collect(),
            };
            let mut out = serde_json::to_vec(&doc).expect("trace serializes");
            out.push(b'\n');
            out
        }
    }
}

/// `d_h,v_cmd` pairs for plotting speed over distance.
pub fn export_plot_data(trace: &SimTrace) -> Vec<u8> {
    let mut out = Vec::new();
    let _ = writeln!(out, "d_h,v_cmd");
    for s in &trace.samples {
        let _ = writeln!(out, "{},{}", s.d_h, s.v_cmd);
    }
    out
}

pub fn parse_trace(bytes: &[u8], format: TraceFormat) -> Result<SimTrace, SimError> {
    let err = |line: usize, message: String| SimError::TraceParse { line, message };
    match format {
        TraceFormat::Document => {
            let doc: TraceDoc =
                serde_json::from_slice(bytes).map_err(|e| err(e.line(), e.to_string()))?;
            Ok(SimTrace {
                samples: doc
                    .samples
                    .into_iter()
                    .map(|s| Sample {
                        t: s.t,
                        d_h: s.d_h,
                        v_cmd: s.v_cmd,
                        active: s.active_limit,
                    })
                    .collect(),
            })
        }
        TraceFormat::Csv => {
            let text = std::str::from_utf8(bytes).map_err(|e| err(0, e.to_string()))?;
            let mut lines = text.lines().enumerate();
            match lines.next() {
                Some((_, h)) if h == TRACE_HEADER => {}
                other => {
                    return Err(err(
                        1,
                        format!(
                            "expected header {TRACE_HEADER:?}, found {:?}",
                            other.map(|l| l.1)
                        ),
                    ))
                }
            }
            let mut samples = Vec::new();
            for (i, line) in lines {
                let n = i + 1;
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() != 4 {
                    return Err(err(n, format!("expected 4 fields, found {}", fields.len())));
                }
                let num = |s: &str| s.parse::<f64>().map_err(|e| err(n, format!("{s:?}: {e}")));
                samples.push(Sample {
                    t: num(fields[0])?,
                    d_h: num(fields[1])?,
                    v_cmd: num(fields[2])?,
                    active: fields[3].parse().map_err(|e: String| err(n, e))?,
                });
            }
            Ok(SimTrace { samples })
        }
    }
}
