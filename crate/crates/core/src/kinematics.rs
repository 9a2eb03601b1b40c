//! Geometry of the six-joint anthropomorphic arm.
//!
//! The chain is
//!
//! ```text
//! R1(q1) · T(d1, 0, d2) · R2(q2) · T(0, 0, d3) · R3(q3) · T(d5, 0, d4)
//!        · R4(q4) · R5(q5) · R6(q6) · T(d6, 0, 0) · T_tool
//! ```
//!
//! where each `Rn` is a rotation about the configured (signed) joint axis,
//! expressed in the frame of the preceding link. Lengths are in millimetres,
//! angles in radians.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const JOINT_COUNT: usize = 6;

const ORTHONORMAL_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Signed rotation axis of a revolute joint in its predecessor frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct JointAxis {
    pub axis: Axis,
    pub negated: bool,
}

impl JointAxis {
    pub const fn new(axis: Axis, negated: bool) -> Self {
        Self { axis, negated }
    }

    pub fn sign(&self) -> f64 {
        if self.negated {
            -1.0
        } else {
            1.0
        }
    }

    pub fn unit(&self) -> Vector3<f64> {
        let s = self.sign();
        match self.axis {
            Axis::X => Vector3::new(s, 0.0, 0.0),
            Axis::Y => Vector3::new(0.0, s, 0.0),
            Axis::Z => Vector3::new(0.0, 0.0, s),
        }
    }

    /// Rotation by `angle` about this axis.
    pub fn rotation(&self, angle: f64) -> Matrix3<f64> {
        elementary_rotation(self.axis, self.sign() * angle)
    }
}

impl FromStr for JointAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        let (negated, rest) = match t.as_bytes().first() {
            Some(b'-') => (true, &t[1..]),
            Some(b'+') => (false, &t[1..]),
            _ => (false, &t[..]),
        };
        let axis = match rest {
            "x" => Axis::X,
            "y" => Axis::Y,
            "z" => Axis::Z,
            _ => {
                return Err(Error::InvalidModel(format!(
                    "joint axis tag '{s}' is not one of x, y, z with optional sign"
                )))
            }
        };
        Ok(Self { axis, negated })
    }
}

impl fmt::Display for JointAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self.axis {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        };
        if self.negated {
            write!(f, "-{c}")
        } else {
            f.write_str(c)
        }
    }
}

pub fn elementary_rotation(axis: Axis, angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    match axis {
        Axis::X => Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c),
        Axis::Y => Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
        Axis::Z => Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
    }
}

/// Rigid transform; translation in millimetres.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl PoseTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform, rejecting rotations that are not proper orthonormal.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = Self {
            rotation,
            translation,
        };
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidModel("non-finite translation".into()));
        }
        if !pose.is_proper_rotation(ORTHONORMAL_TOL) {
            return Err(Error::InvalidModel(
                "rotation is not orthonormal with det = +1".into(),
            ));
        }
        Ok(pose)
    }

    pub fn from_row_major(rotation: [f64; 9], translation: [f64; 3]) -> Result<Self> {
        Self::new(
            Matrix3::from_row_slice(&rotation),
            Vector3::from(translation),
        )
    }

    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
        ]
    }

    pub fn is_proper_rotation(&self, tol: f64) -> bool {
        let r = &self.rotation;
        (r.transpose() * r - Matrix3::identity()).amax() <= tol && (r.determinant() - 1.0).abs() <= tol
    }

    pub fn compose(&self, other: &PoseTransform) -> PoseTransform {
        PoseTransform {
            rotation: self.rotation * other.rotation,
            translation: self.translation + self.rotation * other.translation,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

impl Default for PoseTransform {
    fn default() -> Self {
        Self::identity()
    }
}

/// Joint angles in radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointConfiguration(pub Vector6<f64>);

impl JointConfiguration {
    pub fn zeros() -> Self {
        Self(Vector6::zeros())
    }

    pub fn from_radians(q: [f64; 6]) -> Self {
        Self(Vector6::from(q))
    }

    pub fn from_degrees(q: [f64; 6]) -> Self {
        Self(Vector6::from(q.map(f64::to_radians)))
    }

    pub fn to_degrees(&self) -> [f64; 6] {
        let mut out = [0.0; 6];
        for (o, q) in out.iter_mut().zip(self.0.iter()) {
            *o = q.to_degrees();
        }
        out
    }

    pub fn as_array(&self) -> [f64; 6] {
        self.0.into()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<usize> for JointConfiguration {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for JointConfiguration {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointLimit {
    pub min: f64,
    pub max: f64,
}

impl JointLimit {
    pub fn contains(&self, q: f64) -> bool {
        q >= self.min && q <= self.max
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.min + self.max)
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }
}

/// Joint axis points and directions plus the flange and tool poses, all in the base frame.
#[derive(Clone, Debug)]
pub struct ChainFrames {
    pub joint_origins: [Vector3<f64>; JOINT_COUNT],
    pub joint_axes: [Vector3<f64>; JOINT_COUNT],
    pub flange: PoseTransform,
    pub tool: PoseTransform,
}

/// Position height, horizontal reach and tool tilt used by the workspace constraints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceMetrics {
    /// Tool-tip height above the base plane, mm.
    pub pz: f64,
    /// Horizontal distance of the tool tip from the base axis, mm.
    pub r: f64,
    /// Angle between the tool z-axis and the downward vertical, rad.
    pub phi: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobotModel {
    links_mm: [f64; JOINT_COUNT],
    joint_axes: [JointAxis; JOINT_COUNT],
    joint_limits: [JointLimit; JOINT_COUNT],
    tool: PoseTransform,
    offsets: [Vector3<f64>; JOINT_COUNT],
    flange_offset: Vector3<f64>,
}

impl RobotModel {
    /// `links_mm` holds d1..d6 of the chain documented at module level.
    pub fn new(
        links_mm: [f64; JOINT_COUNT],
        joint_axes: [JointAxis; JOINT_COUNT],
        joint_limits: [JointLimit; JOINT_COUNT],
        tool: PoseTransform,
    ) -> Result<Self> {
        if !links_mm.iter().all(|d| d.is_finite()) {
            return Err(Error::InvalidModel("link lengths must be finite".into()));
        }
        for (i, lim) in joint_limits.iter().enumerate() {
            if !(lim.min.is_finite() && lim.max.is_finite() && lim.min < lim.max) {
                return Err(Error::InvalidModel(format!(
                    "joint {} limits must satisfy min < max (got [{}, {}])",
                    i + 1,
                    lim.min,
                    lim.max
                )));
            }
        }
        if !tool.is_proper_rotation(ORTHONORMAL_TOL) {
            return Err(Error::InvalidModel("tool rotation is not proper".into()));
        }
        let [d1, d2, d3, d4, d5, d6] = links_mm;
        let offsets = [
            Vector3::zeros(),
            Vector3::new(d1, 0.0, d2),
            Vector3::new(0.0, 0.0, d3),
            Vector3::new(d5, 0.0, d4),
            Vector3::zeros(),
            Vector3::zeros(),
        ];
        Ok(Self {
            links_mm,
            joint_axes,
            joint_limits,
            tool,
            offsets,
            flange_offset: Vector3::new(d6, 0.0, 0.0),
        })
    }

    pub fn links_mm(&self) -> &[f64; JOINT_COUNT] {
        &self.links_mm
    }

    pub fn joint_axes(&self) -> &[JointAxis; JOINT_COUNT] {
        &self.joint_axes
    }

    pub fn joint_limits(&self) -> &[JointLimit; JOINT_COUNT] {
        &self.joint_limits
    }

    pub fn tool(&self) -> &PoseTransform {
        &self.tool
    }

    pub fn with_tool(&self, tool: PoseTransform) -> Self {
        let mut m = self.clone();
        m.tool = tool;
        m
    }

    pub fn with_joint_limits(&self, joint_limits: [JointLimit; JOINT_COUNT]) -> Result<Self> {
        Self::new(self.links_mm, self.joint_axes, joint_limits, self.tool)
    }

    pub fn within_limits(&self, q: &JointConfiguration) -> bool {
        self.joint_limits
            .iter()
            .zip(q.0.iter())
            .all(|(lim, &v)| lim.contains(v))
    }

    pub fn frames(&self, q: &JointConfiguration) -> ChainFrames {
        let mut rot = Matrix3::identity();
        let mut pos = Vector3::zeros();
        let mut joint_origins = [Vector3::zeros(); JOINT_COUNT];
        let mut joint_axes = [Vector3::zeros(); JOINT_COUNT];
        for n in 0..JOINT_COUNT {
            pos += rot * self.offsets[n];
            joint_origins[n] = pos;
            joint_axes[n] = rot * self.joint_axes[n].unit();
            rot *= self.joint_axes[n].rotation(q[n]);
        }
        pos += rot * self.flange_offset;
        let flange = PoseTransform {
            rotation: rot,
            translation: pos,
        };
        let tool = flange.compose(&self.tool);
        ChainFrames {
            joint_origins,
            joint_axes,
            flange,
            tool,
        }
    }

    /// Base to tool-tip transform.
    pub fn forward_kinematics(&self, q: &JointConfiguration) -> PoseTransform {
        self.frames(q).tool
    }

    /// Geometric Jacobian at the tool tip in the base frame. Rows 0..3 are
    /// linear velocity (mm/rad), rows 3..6 angular velocity.
    pub fn jacobian(&self, q: &JointConfiguration) -> Matrix6<f64> {
        jacobian_from_frames(&self.frames(q))
    }

    pub fn workspace_metrics(&self, q: &JointConfiguration) -> WorkspaceMetrics {
        metrics_from_pose(&self.forward_kinematics(q))
    }
}

pub(crate) fn jacobian_from_frames(frames: &ChainFrames) -> Matrix6<f64> {
    let p = frames.tool.translation;
    let mut jac = Matrix6::zeros();
    for n in 0..JOINT_COUNT {
        let z = frames.joint_axes[n];
        let lin = z.cross(&(p - frames.joint_origins[n]));
        jac.fixed_view_mut::<3, 1>(0, n).copy_from(&lin);
        jac.fixed_view_mut::<3, 1>(3, n).copy_from(&z);
    }
    jac
}

pub fn metrics_from_pose(pose: &PoseTransform) -> WorkspaceMetrics {
    let p = pose.translation;
    let cos_phi = (-pose.rotation[(2, 2)]).clamp(-1.0, 1.0);
    WorkspaceMetrics {
        pz: p.z,
        r: p.x.hypot(p.y),
        phi: cos_phi.acos(),
    }
}

/// Converts the linear rows of a millimetre Jacobian to metres, giving a
/// Jacobian consistent with forces in N and torques in N·m.
pub fn jacobian_si(jac_mm: &Matrix6<f64>) -> Matrix6<f64> {
    let mut j = *jac_mm;
    j.fixed_view_mut::<3, 6>(0, 0).scale_mut(1e-3);
    j
}
