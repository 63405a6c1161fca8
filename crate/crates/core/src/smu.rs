//! Safe Motion Unit: safety curves mapping reflected mass to a
//! biomechanically safe velocity, keyed by body part and contact-surface
//! curvature class.
//!
//! Curves are always configuration data. The demo set shipped in
//! `configs/demo_safety_curves.json` is synthetic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manipulator_dynamics::ReflectedMass;

#[derive(Debug, Error)]
pub enum SmuError {
    #[error("no safety curve for body part {body_part:?} with curvature {curvature:?}")]
    MissingCurve {
        body_part: String,
        curvature: String,
    },
    #[error("safety curve {body_part}/{curvature}: {reason}")]
    InvalidCurve {
        body_part: String,
        curvature: String,
        reason: String,
    },
    #[error("duplicate safety curve {body_part}/{curvature}")]
    DuplicateCurve {
        body_part: String,
        curvature: String,
    },
    #[error("reflected mass must be positive, got {0}")]
    InvalidMass(f64),
    #[error("safety curve document: {0}")]
    Document(String),
}

/// Piecewise-linear `mass → v_safe` curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyCurve {
    pub body_part: String,
    pub curvature: String,
    /// `(mass kg, v_safe m/s)`, masses strictly increasing.
    pub points: Vec<(f64, f64)>,
}

impl SafetyCurve {
    pub fn validate(&self) -> Result<(), SmuError> {
        let fail = |reason: &str| {
            Err(SmuError::InvalidCurve {
                body_part: self.body_part.clone(),
                curvature: self.curvature.clone(),
                reason: reason.to_string(),
            })
        };
        if self.points.is_empty() {
            return fail("no breakpoints");
        }
        if self
            .points
            .iter()
            .any(|&(m, v)| !(m.is_finite() && m > 0.0 && v.is_finite() && v >= 0.0))
        {
            return fail("breakpoints need mass > 0 and v >= 0");
        }
        for w in self.points.windows(2) {
            if w[1].0 <= w[0].0 {
                return fail("breakpoint masses must be strictly increasing");
            }
            if w[1].1 > w[0].1 {
                return fail("safe velocity must not increase with mass");
            }
        }
        Ok(())
    }

    /// Safe velocity for a reflected mass. Saturates at the end values
    /// outside the breakpoint range; an unbounded mass takes the last value.
    #[inline]
    pub fn velocity(&self, mass: ReflectedMass) -> f64 {
        let pts = &self.points;
        let m = match mass {
            ReflectedMass::Finite(m) => m,
            ReflectedMass::Infinite => return pts[pts.len() - 1].1,
        };
        if m <= pts[0].0 {
            return pts[0].1;
        }
        let hi = pts.partition_point(|p| p.0 < m);
        if hi == pts.len() {
            return pts[hi - 1].1;
        }
        let (m0, v0) = pts[hi - 1];
        let (m1, v1) = pts[hi];
        v0 + (v1 - v0) * (m - m0) / (m1 - m0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CurveSetDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    note: Option<String>,
    curves: Vec<SafetyCurve>,
}

/// Immutable collection of safety curves.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "CurveSetDoc", into = "CurveSetDoc")]
pub struct CurveSet {
    note: Option<String>,
    curves: Vec<SafetyCurve>,
}

impl TryFrom<CurveSetDoc> for CurveSet {
    type Error = SmuError;

    fn try_from(doc: CurveSetDoc) -> Result<Self, Self::Error> {
        let mut set = CurveSet::new(doc.curves)?;
        set.note = doc.note;
        Ok(set)
    }
}

impl From<CurveSet> for CurveSetDoc {
    fn from(s: CurveSet) -> Self {
        CurveSetDoc {
            note: s.note,
            curves: s.curves,
        }
    }
}

impl CurveSet {
    pub fn new(curves: Vec<SafetyCurve>) -> Result<Self, SmuError> {
        for (i, c) in curves.iter().enumerate() {
            c.validate()?;
            if curves[..i]
                .iter()
                .any(|o| o.body_part == c.body_part && o.curvature == c.curvature)
            {
                return Err(SmuError::DuplicateCurve {
                    body_part: c.body_part.clone(),
                    curvature: c.curvature.clone(),
                });
            }
        }
        Ok(CurveSet { note: None, curves })
    }

    pub fn from_json(text: &str) -> Result<Self, SmuError> {
        serde_json::from_str(text).map_err(|e| SmuError::Document(e.to_string()))
    }

    pub fn curves(&self) -> &[SafetyCurve] {
        &self.curves
    }

    pub fn get(&self, body_part: &str, curvature: &str) -> Option<&SafetyCurve> {
        self.curves
            .iter()
            .find(|c| c.body_part == body_part && c.curvature == curvature)
    }

    pub fn v_smu(
        &self,
        body_part: &str,
        curvature: &str,
        mass: ReflectedMass,
    ) -> Result<f64, SmuError> {
        if let ReflectedMass::Finite(m) = mass {
            if !(m > 0.0) {
                return Err(SmuError::InvalidMass(m));
            }
        }
        let curve = self
            .get(body_part, curvature)
            .ok_or_else(|| SmuError::MissingCurve {
                body_part: body_part.to_string(),
                curvature: curvature.to_string(),
            })?;
        Ok(curve.velocity(mass))
    }
}
