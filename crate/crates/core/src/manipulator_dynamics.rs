//! Serial-manipulator kinematics and the directional reflected mass.
//!
//! Frames follow the standard Denavit–Hartenberg convention. Frame `i` is
//! reached from frame `i-1` by
//!
//! ```text
//! T_i = Rot_z(theta_i) · Trans_z(d_i) · Trans_x(a_i) · Rot_x(alpha_i)
//! ```
//!
//! where `theta_i = theta0_i + q_i` for a revolute joint and
//! `d_i = d0_i + q_i` for a prismatic one. Joint `i` moves about/along the
//! z axis of frame `i-1`, and link `i` (with its mass, center of mass and
//! inertia) is rigidly attached to frame `i`.
//!
//! Worked example, a planar two-link arm with unit links:
//!
//! ```text
//! joint 1: revolute, a = 1, alpha = 0, d = 0, theta0 = 0
//! joint 2: revolute, a = 1, alpha = 0, d = 0, theta0 = 0
//! ```
//!
//! At `q = (0, 0)` frame 1 sits at `(1, 0, 0)` and frame 2 (the end
//! effector) at `(2, 0, 0)`; both z axes point out of the plane, so a point
//! mass at each link tip has `com = (0, 0, 0)` in its link frame.

use nalgebra::{DMatrix, Isometry3, Matrix3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("joint configuration has {found} entries, model has {expected} joints")]
    ConfigLength { expected: usize, found: usize },
    #[error("invalid arm model: {0}")]
    InvalidModel(String),
    #[error("joint-space mass matrix is not positive definite")]
    SingularMassMatrix,
    #[error("direction must be a unit vector, |u| = {0}")]
    NonUnitDirection(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointType {
    Revolute,
    Prismatic,
}

/// DH parameters of one joint; lengths in meters, angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhJoint {
    #[serde(rename = "type")]
    pub kind: JointType,
    pub a: f64,
    pub alpha: f64,
    pub d: f64,
    #[serde(default)]
    pub theta0: f64,
}

/// Rigid-body parameters of one link, expressed in its DH frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    /// kg
    pub mass: f64,
    /// m
    #[serde(default)]
    pub com: [f64; 3],
    /// kg·m², about the center of mass
    #[serde(default)]
    pub inertia: [[f64; 3]; 3],
}

impl Link {
    fn inertia_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.inertia[r][c])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArmDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    description: Option<String>,
    joints: Vec<DhJoint>,
    links: Vec<Link>,
    #[serde(default)]
    contact_offset: [f64; 3],
}

/// Validated serial-arm description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ArmDoc", into = "ArmDoc")]
pub struct ArmModel {
    description: Option<String>,
    joints: Vec<DhJoint>,
    links: Vec<Link>,
    /// Contact point in the end-effector frame.
    contact_offset: Vector3<f64>,
}

impl From<ArmModel> for ArmDoc {
    fn from(m: ArmModel) -> Self {
        ArmDoc {
            description: m.description,
            joints: m.joints,
            links: m.links,
            contact_offset: m.contact_offset.into(),
        }
    }
}

impl TryFrom<ArmDoc> for ArmModel {
    type Error = DynamicsError;

    fn try_from(doc: ArmDoc) -> Result<Self, Self::Error> {
        let mut model = ArmModel::new(doc.joints, doc.links)?;
        model.description = doc.description;
        model.with_contact_offset(Vector3::from(doc.contact_offset))
    }
}

/// Mass felt at the contact point along a direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReflectedMass {
    Finite(f64),
    /// The arm cannot move the contact point along the direction at all.
    Infinite,
}

impl ReflectedMass {
    pub fn kilograms(self) -> Option<f64> {
        match self {
            ReflectedMass::Finite(m) => Some(m),
            ReflectedMass::Infinite => None,
        }
    }
}

const SYMMETRY_TOL: f64 = 1e-9;
const SINGULAR_DIRECTION_TOL: f64 = 1e-10;
const UNIT_TOL: f64 = 1e-9;

fn invalid(msg: impl Into<String>) -> DynamicsError {
    DynamicsError::InvalidModel(msg.into())
}

impl ArmModel {
    pub fn new(joints: Vec<DhJoint>, links: Vec<Link>) -> Result<Self, DynamicsError> {
        if joints.is_empty() {
            return Err(invalid("model has no joints"));
        }
        if joints.len() != links.len() {
            return Err(invalid(format!(
                "{} joints but {} links",
                joints.len(),
                links.len()
            )));
        }
        for (i, j) in joints.iter().enumerate() {
            if ![j.a, j.alpha, j.d, j.theta0].iter().all(|x| x.is_finite()) {
                return Err(invalid(format!("joint {i}: non-finite DH parameter")));
            }
        }
        for (i, l) in links.iter().enumerate() {
            if !(l.mass.is_finite() && l.mass > 0.0) {
                return Err(invalid(format!("link {i}: mass must be > 0")));
            }
            if !l.com.iter().all(|x| x.is_finite()) {
                return Err(invalid(format!("link {i}: non-finite center of mass")));
            }
            let inertia = l.inertia_matrix();
            if !inertia.iter().all(|x| x.is_finite()) {
                return Err(invalid(format!("link {i}: non-finite inertia")));
            }
            let scale = inertia.amax().max(1.0);
            if (inertia - inertia.transpose()).amax() > SYMMETRY_TOL * scale {
                return Err(invalid(format!(
                    "link {i}: inertia tensor is not symmetric"
                )));
            }
            if inertia.symmetric_eigenvalues().min() < -SYMMETRY_TOL * scale {
                return Err(invalid(format!(
                    "link {i}: inertia tensor is not positive semi-definite"
                )));
            }
        }
        Ok(ArmModel {
            description: None,
            joints,
            links,
            contact_offset: Vector3::zeros(),
        })
    }

    pub fn with_contact_offset(mut self, offset: Vector3<f64>) -> Result<Self, DynamicsError> {
        if !offset.iter().all(|x| x.is_finite()) {
            return Err(invalid("non-finite contact offset"));
        }
        self.contact_offset = offset;
        Ok(self)
    }

    pub fn from_json(text: &str) -> Result<Self, DynamicsError> {
        serde_json::from_str(text).map_err(|e| invalid(e.to_string()))
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[DhJoint] {
        &self.joints
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn contact_offset(&self) -> Vector3<f64> {
        self.contact_offset
    }

    pub fn description(&self) -> Option<&str> {
        self.description.as_deref()
    }

    fn check_config(&self, q: &[f64]) -> Result<(), DynamicsError> {
        if q.len() != self.dof() {
            return Err(DynamicsError::ConfigLength {
                expected: self.dof(),
                found: q.len(),
            });
        }
        Ok(())
    }

    /// Base frame followed by frames `1..=n`, all in base coordinates.
    pub fn frames(&self, q: &[f64]) -> Result<Vec<Isometry3<f64>>, DynamicsError> {
        self.check_config(q)?;
        let mut frames = Vec::with_capacity(self.dof() + 1);
        let mut pose = Isometry3::identity();
        frames.push(pose);
        for (j, &qi) in self.joints.iter().zip(q) {
            let (theta, d) = match j.kind {
                JointType::Revolute => (j.theta0 + qi, j.d),
                JointType::Prismatic => (j.theta0, j.d + qi),
            };
            let screw_z = Isometry3::from_parts(
                Translation3::new(0.0, 0.0, d),
                UnitQuaternion::from_axis_angle(&Vector3::z_axis(), theta),
            );
            let screw_x = Isometry3::from_parts(
                Translation3::new(j.a, 0.0, 0.0),
                UnitQuaternion::from_axis_angle(&Vector3::x_axis(), j.alpha),
            );
            pose = pose * screw_z * screw_x;
            frames.push(pose);
        }
        Ok(frames)
    }

    /// World position of a point given in the end-effector frame.
    pub fn point_position(
        &self,
        q: &[f64],
        point: &Vector3<f64>,
    ) -> Result<Vector3<f64>, DynamicsError> {
        let frames = self.frames(q)?;
        Ok(frames[self.dof()].transform_point(&(*point).into()).coords)
    }

    /// Contact point in world coordinates.
    pub fn contact_position(&self, q: &[f64]) -> Result<Vector3<f64>, DynamicsError> {
        self.point_position(q, &self.contact_offset)
    }
}

/// 6×n geometric Jacobian (linear rows first) of a world point rigidly
/// attached to the body driven by the first `upto` joints.
fn point_jacobian(
    model: &ArmModel,
    frames: &[Isometry3<f64>],
    upto: usize,
    p: &Vector3<f64>,
) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(6, model.dof());
    for (j, joint) in model.joints.iter().enumerate().take(upto) {
        let axis = frames[j].rotation * Vector3::z();
        let origin = frames[j].translation.vector;
        let (lin, ang) = match joint.kind {
            JointType::Revolute => (axis.cross(&(p - origin)), axis),
            JointType::Prismatic => (axis, Vector3::zeros()),
        };
        jac.fixed_view_mut::<3, 1>(0, j).copy_from(&lin);
        jac.fixed_view_mut::<3, 1>(3, j).copy_from(&ang);
    }
    jac
}

/// Geometric Jacobian of a point given in the end-effector frame.
pub fn jacobian(
    model: &ArmModel,
    q: &[f64],
    point: &Vector3<f64>,
) -> Result<DMatrix<f64>, DynamicsError> {
    let frames = model.frames(q)?;
    let n = model.dof();
    let p = frames[n].transform_point(&(*point).into()).coords;
    Ok(point_jacobian(model, &frames, n, &p))
}

/// Joint-space inertia matrix
/// `M(q) = Σ_i J_vi^T m_i J_vi + J_ωi^T R_i I_i R_i^T J_ωi`.
pub fn mass_matrix(model: &ArmModel, q: &[f64]) -> Result<DMatrix<f64>, DynamicsError> {
    let frames = model.frames(q)?;
    let n = model.dof();
    let mut m = DMatrix::zeros(n, n);
    for (i, link) in model.links.iter().enumerate() {
        let frame = &frames[i + 1];
        let com = frame
            .transform_point(&Vector3::from(link.com).into())
            .coords;
        let jac = point_jacobian(model, &frames, i + 1, &com);
        let jv = jac.rows(0, 3);
        let jw = jac.rows(3, 3);
        let rot = frame.rotation.to_rotation_matrix();
        let inertia_world = rot.matrix() * link.inertia_matrix() * rot.matrix().transpose();
        m += jv.transpose() * jv * link.mass + jw.transpose() * inertia_world * jw;
    }
    // symmetrize away round-off from the two products
    let sym = (&m + m.transpose()) * 0.5;
    Ok(sym)
}

/// `Λ_v^{-1} = J_v M^{-1} J_v^T` at the contact point.
pub fn inverse_operational_mass(
    model: &ArmModel,
    q: &[f64],
) -> Result<Matrix3<f64>, DynamicsError> {
    let m = mass_matrix(model, q)?;
    if m.clone().cholesky().is_none() {
        return Err(DynamicsError::SingularMassMatrix);
    }
    let jac = jacobian(model, q, &model.contact_offset)?;
    let jv = jac.rows(0, 3).into_owned();
    let minv_jvt = m
        .lu()
        .solve(&jv.transpose())
        .ok_or(DynamicsError::SingularMassMatrix)?;
    let lambda_inv = &jv * minv_jvt;
    let sym = (&lambda_inv + lambda_inv.transpose()) * 0.5;
    Ok(Matrix3::from_fn(|r, c| sym[(r, c)]))
}

/// Reflected mass `(u^T Λ_v^{-1} u)^{-1}` at the contact point along the
/// unit direction `u`.
pub fn reflected_mass(
    model: &ArmModel,
    q: &[f64],
    u: &Vector3<f64>,
) -> Result<ReflectedMass, DynamicsError> {
    let norm = u.norm();
    if !((norm - 1.0).abs() <= UNIT_TOL) {
        return Err(DynamicsError::NonUnitDirection(norm));
    }
    let lambda_inv = inverse_operational_mass(model, q)?;
    let s = u.dot(&(lambda_inv * u));
    let scale = lambda_inv.trace();
    if scale <= 0.0 || s <= SINGULAR_DIRECTION_TOL * scale {
        return Ok(ReflectedMass::Infinite);
    }
    if model.dof() == 1 {
        // Scalar chain: m_u = M / (J_v^T u)^2, free of the double reciprocal.
        let m = mass_matrix(model, q)?[(0, 0)];
        let jv = jacobian(model, q, &model.contact_offset)?;
        let w = jv.fixed_view::<3, 1>(0, 0).dot(u);
        return Ok(ReflectedMass::Finite(m / (w * w)));
    }
    Ok(ReflectedMass::Finite(1.0 / s))
}
