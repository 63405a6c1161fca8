//! Velocity governor: composes the nominal velocity with the SMU and EMU
//! limits and rate-limits increases of the commanded velocity.
//!
//! ```text
//! v_safe = min(v_d, v_SMU, v_EMU)   if d_h <= d_max
//!          min(v_d, v_SMU)          otherwise
//! ```
//!
//! Evaluation does not allocate on the success path and does a bounded
//! amount of work (a linear scan over the configured curves).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manipulator_dynamics::ReflectedMass;
use crate::risk_model::ExpectationCurve;
use crate::smu::{CurveSet, SmuError};

pub const DEFAULT_CONDITION: &str = "attentive";
pub const DEFAULT_MAX_ACCEL: f64 = 2.0;

#[derive(Debug, Error)]
pub enum GovernorError {
    #[error("{name} must be finite and >= 0, got {value}")]
    InvalidInput { name: &'static str, value: f64 },
    #[error("unknown condition {0:?}")]
    UnknownCondition(String),
    #[error("invalid condition policy: {0}")]
    InvalidPolicy(String),
    #[error(transparent)]
    Smu(#[from] SmuError),
    #[error("max_accel must be positive and finite, got {0}")]
    InvalidAccel(f64),
    #[error("timestamp {t} is not after the previous sample at {last}")]
    Clock { t: f64, last: f64 },
}

/// Which term of the composition produced `v_safe`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActiveLimit {
    Nominal,
    Smu,
    Emu,
}

impl ActiveLimit {
    pub fn as_str(self) -> &'static str {
        match self {
            ActiveLimit::Nominal => "nominal",
            ActiveLimit::Smu => "smu",
            ActiveLimit::Emu => "emu",
        }
    }
}

impl fmt::Display for ActiveLimit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ActiveLimit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nominal" => Ok(ActiveLimit::Nominal),
            "smu" => Ok(ActiveLimit::Smu),
            "emu" => Ok(ActiveLimit::Emu),
            other => Err(format!("unknown active limit {other:?}")),
        }
    }
}

/// The min-composition over already evaluated limits.
///
/// On ties the label goes to the more specific limit: emu, then smu, then
/// nominal.
#[inline]
pub fn compose(v_d: f64, v_smu: f64, v_emu: f64, d_h: f64, d_max: f64) -> (f64, ActiveLimit) {
    let mut v = v_d;
    let mut active = ActiveLimit::Nominal;
    if v_smu <= v {
        v = v_smu;
        active = ActiveLimit::Smu;
    }
    if d_h <= d_max && v_emu <= v {
        v = v_emu;
        active = ActiveLimit::Emu;
    }
    (v, active)
}

/// Maps a human-condition token to the expectation curve in force.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionPolicy {
    entries: Vec<(String, ExpectationCurve)>,
    default: usize,
}

impl ConditionPolicy {
    pub fn new(
        entries: Vec<(String, ExpectationCurve)>,
        default: &str,
    ) -> Result<Self, GovernorError> {
        for (i, (token, _)) in entries.iter().enumerate() {
            if entries[..i].iter().any(|(t, _)| t == token) {
                return Err(GovernorError::InvalidPolicy(format!(
                    "duplicate condition {token:?}"
                )));
            }
        }
        let default = entries
            .iter()
            .position(|(t, _)| t == default)
            .ok_or_else(|| {
                GovernorError::InvalidPolicy(format!("default condition {default:?} has no curve"))
            })?;
        Ok(ConditionPolicy { entries, default })
    }

    /// One curve under the `attentive` token.
    pub fn single(curve: ExpectationCurve) -> Self {
        ConditionPolicy {
            entries: vec![(DEFAULT_CONDITION.to_string(), curve)],
            default: 0,
        }
    }

    pub fn entries(&self) -> &[(String, ExpectationCurve)] {
        &self.entries
    }

    pub fn default_condition(&self) -> &str {
        &self.entries[self.default].0
    }

    /// Make the condition whose curve has threshold `q_r` the default.
    pub fn with_default_q_r(mut self, q_r: f64) -> Result<Self, GovernorError> {
        self.default = self
            .entries
            .iter()
            .position(|(_, c)| (c.q_r() - q_r).abs() < 1e-12)
            .ok_or_else(|| {
                GovernorError::InvalidPolicy(format!("no expectation curve with q_r = {q_r}"))
            })?;
        Ok(self)
    }

    #[inline]
    pub fn resolve(&self, condition: Option<&str>) -> Result<&ExpectationCurve, GovernorError> {
        match condition {
            None => Ok(&self.entries[self.default].1),
            Some(token) => self
                .entries
                .iter()
                .find(|(t, _)| t == token)
                .map(|(_, c)| c)
                .ok_or_else(|| GovernorError::UnknownCondition(token.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GovernorInput<'a> {
    /// Nominal desired speed, m/s.
    pub v_d: f64,
    pub mass: ReflectedMass,
    /// Human-robot distance, m.
    pub d_h: f64,
    pub body_part: &'a str,
    pub curvature: &'a str,
    /// `None` selects the policy default.
    pub condition: Option<&'a str>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub v_safe: f64,
    pub active: ActiveLimit,
    pub v_smu: f64,
    /// EMU limit, or `None` beyond `d_max`.
    pub v_emu: Option<f64>,
}

#[inline]
fn non_negative(name: &'static str, value: f64) -> Result<(), GovernorError> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(GovernorError::InvalidInput { name, value })
    }
}

/// Evaluate the safe velocity for one control cycle.
pub fn v_safe(
    input: &GovernorInput<'_>,
    curves: &CurveSet,
    policy: &ConditionPolicy,
) -> Result<Decision, GovernorError> {
    non_negative("v_d", input.v_d)?;
    non_negative("d_h", input.d_h)?;
    let curve = policy.resolve(input.condition)?;
    let v_smu = curves.v_smu(input.body_part, input.curvature, input.mass)?;
    let v_emu = curve.line(input.d_h);
    let (v, active) = compose(input.v_d, v_smu, v_emu, input.d_h, curve.d_max());
    Ok(Decision {
        v_safe: v,
        active,
        v_smu,
        v_emu: (input.d_h <= curve.d_max()).then_some(v_emu),
    })
}

/// Rate limiter for the commanded velocity. Increases are bounded by
/// `max_accel·dt`; decreases pass through unchanged so a tighter limit binds
/// in the same cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlewLimiter {
    max_accel: f64,
    last_v: f64,
    last_t: f64,
}

impl SlewLimiter {
    pub fn new(max_accel: f64, v0: f64, t0: f64) -> Result<Self, GovernorError> {
        if !(max_accel.is_finite() && max_accel > 0.0) {
            return Err(GovernorError::InvalidAccel(max_accel));
        }
        non_negative("v0", v0)?;
        Ok(SlewLimiter {
            max_accel,
            last_v: v0,
            last_t: t0,
        })
    }

    pub fn last_v(&self) -> f64 {
        self.last_v
    }

    pub fn last_t(&self) -> f64 {
        self.last_t
    }

    pub fn max_accel(&self) -> f64 {
        self.max_accel
    }

    #[inline]
    pub fn apply(&mut self, v_target: f64, t: f64) -> Result<f64, GovernorError> {
        if !(t > self.last_t) {
            return Err(GovernorError::Clock {
                t,
                last: self.last_t,
            });
        }
        let v = if v_target <= self.last_v {
            v_target
        } else {
            v_target.min(self.last_v + self.max_accel * (t - self.last_t))
        };
        self.last_v = v;
        self.last_t = t;
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smu::SafetyCurve;

    fn setup() -> (CurveSet, ConditionPolicy) {
        let curves = CurveSet::new(vec![SafetyCurve {
            body_part: "chest".into(),
            curvature: "flat".into(),
            points: vec![(1.0, 0.8)],
        }])
        .unwrap();
        let curve = ExpectationCurve::new(0.15, 1.5, 0.03, 0.30).unwrap();
        (curves, ConditionPolicy::single(curve))
    }

    fn input(v_d: f64, d_h: f64) -> GovernorInput<'static> {
        GovernorInput {
            v_d,
            mass: ReflectedMass::Finite(2.0),
            d_h,
            body_part: "chest",
            curvature: "flat",
            condition: None,
        }
    }

    #[test]
    fn emu_binds_close_to_human() {
        let (c, p) = setup();
        let d = v_safe(&input(1.0, 0.20), &c, &p).unwrap();
        assert!((d.v_safe - 0.33).abs() < 1e-12);
        assert_eq!(d.active, ActiveLimit::Emu);
        assert_eq!(d.v_smu, 0.8);
    }

    #[test]
    fn smu_binds_beyond_d_max() {
        let (c, p) = setup();
        let d = v_safe(&input(1.0, 0.44), &c, &p).unwrap();
        assert_eq!(d.v_safe, 0.8);
        assert_eq!(d.active, ActiveLimit::Smu);
        assert_eq!(d.v_emu, None);
    }

    #[test]
    fn nominal_binds_when_slow() {
        let (c, p) = setup();
        let d = v_safe(&input(0.05, 0.20), &c, &p).unwrap();
        assert_eq!(d.v_safe, 0.05);
        assert_eq!(d.active, ActiveLimit::Nominal);
    }

    #[test]
    fn d_max_is_inside_emu_branch() {
        let (v, a) = compose(1.0, 0.8, 0.48, 0.30, 0.30);
        assert_eq!((v, a), (0.48, ActiveLimit::Emu));
    }

    #[test]
    fn tie_labels() {
        assert_eq!(compose(0.5, 0.5, 0.5, 0.1, 0.3).1, ActiveLimit::Emu);
        assert_eq!(compose(0.5, 0.5, 0.9, 0.1, 0.3).1, ActiveLimit::Smu);
        assert_eq!(compose(0.5, 0.7, 0.9, 0.1, 0.3).1, ActiveLimit::Nominal);
    }

    #[test]
    fn input_errors() {
        let (c, p) = setup();
        assert!(v_safe(&input(-1.0, 0.1), &c, &p).is_err());
        assert!(v_safe(&input(1.0, -0.1), &c, &p).is_err());
        assert!(v_safe(&input(f64::NAN, 0.1), &c, &p).is_err());
        let mut i = input(1.0, 0.1);
        i.condition = Some("sleepy");
        assert!(matches!(
            v_safe(&i, &c, &p),
            Err(GovernorError::UnknownCondition(_))
        ));
        i.condition = None;
        i.body_part = "head";
        assert!(matches!(v_safe(&i, &c, &p), Err(GovernorError::Smu(_))));
    }

    #[test]
    fn policy_resolution() {
        let low = ExpectationCurve::new(0.05, 0.5, 0.01, 0.30).unwrap();
        let high = ExpectationCurve::new(0.15, 1.5, 0.03, 0.30).unwrap();
        let p = ConditionPolicy::new(
            vec![("sleepy".into(), low), ("attentive".into(), high)],
            "attentive",
        )
        .unwrap();
        assert_eq!(p.resolve(None).unwrap(), &high);
        assert_eq!(p.resolve(Some("sleepy")).unwrap(), &low);
        let p = p.with_default_q_r(0.05).unwrap();
        assert_eq!(p.default_condition(), "sleepy");
        assert!(p.clone().with_default_q_r(0.3).is_err());
        assert!(ConditionPolicy::new(vec![("a".into(), low)], "b").is_err());
        assert!(ConditionPolicy::new(vec![("a".into(), low), ("a".into(), high)], "a").is_err());
    }

    #[test]
    fn slew_examples() {
        let mut s = SlewLimiter::new(2.0, 0.0, 0.0).unwrap();
        assert!((s.apply(1.0, 0.1).unwrap() - 0.2).abs() < 1e-15);

        let mut s = SlewLimiter::new(2.0, 1.0, 0.0).unwrap();
        assert_eq!(s.apply(0.03, 0.001).unwrap(), 0.03);

        let mut s = SlewLimiter::new(2.0, 0.5, 0.0).unwrap();
        assert_eq!(s.apply(0.5, 0.001).unwrap(), 0.5);
        assert_eq!(s.last_v(), 0.5);

        assert!(matches!(
            s.apply(0.5, 0.001),
            Err(GovernorError::Clock { .. })
        ));
        assert!(matches!(
            s.apply(0.5, 0.0),
            Err(GovernorError::Clock { .. })
        ));
        assert!(SlewLimiter::new(0.0, 0.0, 0.0).is_err());
    }
}
