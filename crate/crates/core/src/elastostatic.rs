//! Linear elastostatic model: joint compliances to end-effector deflection.
//!
//! Unit regime: positions in mm, forces in N, torques in N·m, compliances in
//! rad/(N·m). Joint torques are computed with lever arms in metres, so an
//! observation column maps a compliance to a deflection in mm (positional
//! rows) or rad (rotational rows).

use std::fmt;
use std::ops::{Add, Mul};

use nalgebra::{DVector, Dyn, Matrix3xX, Matrix6, OMatrix, Vector3, Vector6, U6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{jacobian_from_frames, jacobian_si, ChainFrames, JointConfiguration, RobotModel, JOINT_COUNT};

/// Jacobian condition number above which a configuration is treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wrench {
    /// N
    pub force: Vector3<f64>,
    /// N·m
    pub torque: Vector3<f64>,
}

impl Wrench {
    pub fn zero() -> Self {
        Self {
            force: Vector3::zeros(),
            torque: Vector3::zeros(),
        }
    }

    pub fn force(fx: f64, fy: f64, fz: f64) -> Self {
        Self {
            force: Vector3::new(fx, fy, fz),
            torque: Vector3::zeros(),
        }
    }

    pub fn from_array(w: [f64; 6]) -> Self {
        Self {
            force: Vector3::new(w[0], w[1], w[2]),
            torque: Vector3::new(w[3], w[4], w[5]),
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.force.x,
            self.force.y,
            self.force.z,
            self.torque.x,
            self.torque.y,
            self.torque.z,
        ]
    }

    pub fn as_vector(&self) -> Vector6<f64> {
        Vector6::from(self.to_array())
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

impl Add for Wrench {
    type Output = Wrench;
    fn add(self, rhs: Wrench) -> Wrench {
        Wrench {
            force: self.force + rhs.force,
            torque: self.torque + rhs.torque,
        }
    }
}

impl Mul<f64> for Wrench {
    type Output = Wrench;
    fn mul(self, s: f64) -> Wrench {
        Wrench {
            force: self.force * s,
            torque: self.torque * s,
        }
    }
}

/// Ordered subset of the joints. Stored 0-based, presented 1-based.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct JointSet(Vec<usize>);

impl JointSet {
    /// From 1-based joint numbers; duplicates and ordering are normalised.
    pub fn new(one_based: &[usize]) -> Result<Self> {
        if one_based.is_empty() {
            return Err(Error::InvalidInput("joint set must not be empty".into()));
        }
        let mut idx = Vec::with_capacity(one_based.len());
        for &j in one_based {
            if !(1..=JOINT_COUNT).contains(&j) {
                return Err(Error::InvalidInput(format!("joint {j} outside 1..={JOINT_COUNT}")));
            }
            idx.push(j - 1);
        }
        idx.sort_unstable();
        idx.dedup();
        Ok(Self(idx))
    }

    pub fn all() -> Self {
        Self((0..JOINT_COUNT).collect())
    }

    /// Joints 2..6, identified under vertical loading.
    pub fn arm_and_wrist() -> Self {
        Self((1..JOINT_COUNT).collect())
    }

    /// Joint 1 alone.
    pub fn base() -> Self {
        Self(vec![0])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// 0-based joint indices in ascending order.
    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.0.iter().map(|j| j + 1).collect()
    }

    pub fn contains(&self, joint0: usize) -> bool {
        self.0.binary_search(&joint0).is_ok()
    }

    /// Column position of a 0-based joint within this set.
    pub fn position(&self, joint0: usize) -> Option<usize> {
        self.0.binary_search(&joint0).ok()
    }
}

impl TryFrom<Vec<usize>> for JointSet {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        JointSet::new(&v)
    }
}

impl From<JointSet> for Vec<usize> {
    fn from(s: JointSet) -> Vec<usize> {
        s.one_based()
    }
}

impl fmt::Display for JointSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.one_based().iter().map(|j| j.to_string()).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

/// Joint compliances, rad/(N·m), for a subset of joints.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplianceVector {
    pub values: DVector<f64>,
    pub joints: JointSet,
}

impl ComplianceVector {
    pub fn new(values: DVector<f64>, joints: JointSet) -> Result<Self> {
        if values.len() != joints.len() {
            return Err(Error::DimensionMismatch {
                expected: joints.len(),
                found: values.len(),
            });
        }
        Ok(Self { values, joints })
    }

    pub fn uniform(value: f64, joints: JointSet) -> Self {
        Self {
            values: DVector::from_element(joints.len(), value),
            joints,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// All entries strictly positive, as for a real robot.
    pub fn is_physical(&self) -> bool {
        self.values.iter().all(|&k| k > 0.0 && k.is_finite())
    }

    /// Compliance of a 0-based joint, zero when the joint is not in the set.
    pub fn get(&self, joint0: usize) -> f64 {
        self.joints.position(joint0).map_or(0.0, |i| self.values[i])
    }

    /// Six-joint diagonal, joints outside the set contribute zero.
    pub fn full_diagonal(&self) -> Vector6<f64> {
        Vector6::from_fn(|j, _| self.get(j))
    }
}

/// Deflection of the end effector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Deflection {
    /// mm
    pub dp: Vector3<f64>,
    /// rad
    pub dphi: Vector3<f64>,
}

/// 6×n map from compliances to deflection; rows 0..3 positional, 3..6 rotational.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationMatrix {
    pub full: OMatrix<f64, U6, Dyn>,
    pub joints: JointSet,
}

impl ObservationMatrix {
    pub fn positional(&self) -> Matrix3xX<f64> {
        self.full.fixed_rows::<3>(0).into_owned()
    }

    pub fn rotational(&self) -> Matrix3xX<f64> {
        self.full.fixed_rows::<3>(3).into_owned()
    }

    pub fn ncols(&self) -> usize {
        self.full.ncols()
    }
}

/// Joint torques τ = Jᵀ W, N·m, from a millimetre Jacobian.
pub fn joint_torques(jac_mm: &Matrix6<f64>, w: &Wrench) -> Vector6<f64> {
    jacobian_si(jac_mm).transpose() * w.as_vector()
}

pub fn observation_matrix(
    model: &RobotModel,
    q: &JointConfiguration,
    w: &Wrench,
    joints: &JointSet,
) -> ObservationMatrix {
    observation_from_frames(&model.frames(q), w, joints)
}

pub(crate) fn observation_from_frames(frames: &ChainFrames, w: &Wrench, joints: &JointSet) -> ObservationMatrix {
    let jac = jacobian_from_frames(frames);
    let tau = joint_torques(&jac, w);
    let mut full = OMatrix::<f64, U6, Dyn>::zeros(joints.len());
    for (c, &n) in joints.indices().iter().enumerate() {
        full.set_column(c, &(jac.column(n) * tau[n]));
    }
    ObservationMatrix {
        full,
        joints: joints.clone(),
    }
}

/// Δt = A·k.
pub fn predict_deflection(a: &ObservationMatrix, k: &ComplianceVector) -> Result<Deflection> {
    if a.ncols() != k.len() {
        return Err(Error::DimensionMismatch {
            expected: a.ncols(),
            found: k.len(),
        });
    }
    let dt = &a.full * &k.values;
    Ok(Deflection {
        dp: Vector3::new(dt[0], dt[1], dt[2]),
        dphi: Vector3::new(dt[3], dt[4], dt[5]),
    })
}

fn condition_number(m: &Matrix6<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub(crate) fn require_full_compliance(k: &ComplianceVector) -> Result<()> {
    if k.joints != JointSet::all() {
        return Err(Error::InvalidInput(format!(
            "all six joint compliances are required, got joints {}",
            k.joints
        )));
    }
    Ok(())
}

/// SI Jacobian at `q`, rejecting numerically singular configurations.
pub(crate) fn nonsingular_jacobian_si(model: &RobotModel, q: &JointConfiguration) -> Result<Matrix6<f64>> {
    let j = jacobian_si(&model.jacobian(q));
    let condition = condition_number(&j);
    if !(condition < SINGULAR_CONDITION) {
        return Err(Error::SingularConfiguration { condition });
    }
    Ok(j)
}

/// Cartesian stiffness `J⁻ᵀ K_θ J⁻¹` in SI units: maps (Δp [m], Δφ [rad]) to
/// (F [N], T [N·m]).
pub fn cartesian_stiffness(model: &RobotModel, q: &JointConfiguration, k: &ComplianceVector) -> Result<Matrix6<f64>> {
    require_full_compliance(k)?;
    if !k.is_physical() {
        return Err(Error::InvalidInput("compliances must be strictly positive".into()));
    }
    let j = nonsingular_jacobian_si(model, q)?;
    let j_inv = j
        .try_inverse()
        .ok_or(Error::SingularConfiguration { condition: f64::INFINITY })?;
    let k_theta = Matrix6::from_diagonal(&k.full_diagonal().map(|c| 1.0 / c));
    let kc = j_inv.transpose() * k_theta * j_inv;
    Ok((kc + kc.transpose()) * 0.5)
}
