//! Plan quality measures: the test-pose criterion and the classical
//! optimality / observability criteria.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix3xX};
use serde::{Deserialize, Serialize};

use crate::elastostatic::{observation_matrix, JointSet, Wrench};
use crate::error::{Error, Result};
use crate::identification::{stacked_observation, ExperimentPlan, NoiseModel, PlanFactorization};
use crate::kinematics::{JointConfiguration, RobotModel};

/// The pose and load at which compensation accuracy matters.
#[derive(Clone, Debug, PartialEq)]
pub struct TestPose {
    pub q0: JointConfiguration,
    pub w0: Wrench,
    /// Positional observation block at (q0, w0), 3×n.
    pub a0p: Matrix3xX<f64>,
    pub joints: JointSet,
}

impl TestPose {
    /// `model` should carry the machining tool.
    pub fn new(model: &RobotModel, q0: JointConfiguration, w0: Wrench, joints: JointSet) -> Self {
        let a0p = observation_matrix(model, &q0, &w0, &joints).positional();
        Self { q0, w0, a0p, joints }
    }

    /// Same pose restricted to another joint set.
    pub fn for_joints(&self, model: &RobotModel, joints: JointSet) -> Self {
        Self::new(model, self.q0, self.w0, joints)
    }

    /// Largest absolute difference between the cached block and a recomputation.
    pub fn cache_drift(&self, model: &RobotModel) -> f64 {
        let fresh = observation_matrix(model, &self.q0, &self.w0, &self.joints).positional();
        (fresh - &self.a0p).amax()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestPoseScore {
    /// mm²
    pub rho0_sq: f64,
    /// mm
    pub rho0: f64,
}

fn check_joints(plan: &ExperimentPlan, tp: &TestPose) -> Result<()> {
    if plan.joints != tp.joints {
        return Err(Error::InvalidInput(format!(
            "plan joints {} differ from test-pose joints {}",
            plan.joints, tp.joints
        )));
    }
    Ok(())
}

/// trace(A₀ (Σ AᵢᵀAᵢ)⁻¹ A₀ᵀ) from a factorised plan.
pub fn weighted_trace(fact: &PlanFactorization, a0p: &Matrix3xX<f64>) -> f64 {
    (a0p * fact.inverse_root()).norm_squared()
}

/// ρ₀² = σ²·trace(A₀ (Σ AᵢᵀAᵢ)⁻¹ A₀ᵀ).
pub fn test_pose_criterion(
    plan: &ExperimentPlan,
    tp: &TestPose,
    model: &RobotModel,
    noise: &NoiseModel,
) -> Result<TestPoseScore> {
    check_joints(plan, tp)?;
    let fact = crate::identification::factorize_plan(plan, model)?;
    let rho0_sq = noise.sigma * noise.sigma * weighted_trace(&fact, &tp.a0p);
    Ok(TestPoseScore {
        rho0_sq,
        rho0: rho0_sq.sqrt(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CriterionKind {
    #[serde(rename = "A_opt")]
    AOpt,
    #[serde(rename = "D_opt")]
    DOpt,
    #[serde(rename = "E_opt")]
    EOpt,
    #[serde(rename = "G_opt")]
    GOpt,
    #[serde(rename = "O1_product")]
    O1Product,
    #[serde(rename = "O2_condition")]
    O2Condition,
    #[serde(rename = "O3_min_singular")]
    O3MinSingular,
    #[serde(rename = "O4_noise_amp")]
    O4NoiseAmp,
    #[serde(rename = "O5_inv_sum")]
    O5InvSum,
    #[serde(rename = "TestPose")]
    TestPose,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Min,
    Max,
}

impl CriterionKind {
    pub const ALL: [CriterionKind; 10] = [
        CriterionKind::AOpt,
        CriterionKind::DOpt,
        CriterionKind::EOpt,
        CriterionKind::GOpt,
        CriterionKind::O1Product,
        CriterionKind::O2Condition,
        CriterionKind::O3MinSingular,
        CriterionKind::O4NoiseAmp,
        CriterionKind::O5InvSum,
        CriterionKind::TestPose,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            CriterionKind::AOpt => "A_opt",
            CriterionKind::DOpt => "D_opt",
            CriterionKind::EOpt => "E_opt",
            CriterionKind::GOpt => "G_opt",
            CriterionKind::O1Product => "O1_product",
            CriterionKind::O2Condition => "O2_condition",
            CriterionKind::O3MinSingular => "O3_min_singular",
            CriterionKind::O4NoiseAmp => "O4_noise_amp",
            CriterionKind::O5InvSum => "O5_inv_sum",
            CriterionKind::TestPose => "TestPose",
        }
    }

    /// Optimisation direction. O3 is maximised: a small minimum singular
    /// value means a poorly observable parameter.
    pub fn sense(&self) -> Sense {
        match self {
            CriterionKind::AOpt
            | CriterionKind::GOpt
            | CriterionKind::O2Condition
            | CriterionKind::O5InvSum
            | CriterionKind::TestPose => Sense::Min,
            CriterionKind::DOpt
            | CriterionKind::EOpt
            | CriterionKind::O1Product
            | CriterionKind::O3MinSingular
            | CriterionKind::O4NoiseAmp => Sense::Max,
        }
    }
}

impl FromStr for CriterionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        CriterionKind::ALL
            .into_iter()
            .find(|k| k.tag().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                let tags: Vec<&str> = CriterionKind::ALL.iter().map(|k| k.tag()).collect();
                Error::InvalidInput(format!("unknown criterion '{s}'; expected one of {}", tags.join(", ")))
            })
    }
}

impl fmt::Display for CriterionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionValue {
    pub kind: CriterionKind,
    pub value: f64,
    pub sense: Sense,
}

/// Singular values of a stacked observation matrix, padded with zeros up to
/// the parameter count and sorted in decreasing order.
pub fn stacked_singular_values(stacked: &DMatrix<f64>) -> DVector<f64> {
    let n = stacked.ncols();
    let mut sv: Vec<f64> = stacked.singular_values().iter().copied().collect();
    sv.resize(n, 0.0);
    sv.sort_by(|a, b| b.total_cmp(a));
    DVector::from_vec(sv)
}

/// Evaluates a non-test-pose criterion on a stacked 3m×n observation matrix.
pub fn criterion_from_stacked(stacked: &DMatrix<f64>, kind: CriterionKind, sigma: f64) -> Result<CriterionValue> {
    let s = stacked_singular_values(stacked);
    let n = s.len();
    let s_max = s[0];
    let s_min = s[n - 1];
    let sigma_sq = sigma * sigma;
    let value = match kind {
        CriterionKind::AOpt => {
            let fact = PlanFactorization::new(stacked)?;
            fact.inverse_information().trace() * sigma_sq
        }
        CriterionKind::GOpt => {
            let fact = PlanFactorization::new(stacked)?;
            fact.inverse_information().diagonal().max() * sigma_sq
        }
        CriterionKind::DOpt => s.iter().map(|v| v * v).product(),
        CriterionKind::EOpt => s_min * s_min,
        CriterionKind::O1Product => s.iter().product::<f64>().powf(1.0 / n as f64),
        CriterionKind::O2Condition => {
            if s_min > 0.0 {
                s_max / s_min
            } else {
                f64::INFINITY
            }
        }
        CriterionKind::O3MinSingular => s_min,
        CriterionKind::O4NoiseAmp => {
            if s_max > 0.0 {
                s_min * s_min / s_max
            } else {
                0.0
            }
        }
        CriterionKind::O5InvSum => s.iter().map(|v| if *v > 0.0 { 1.0 / v } else { f64::INFINITY }).sum(),
        CriterionKind::TestPose => {
            return Err(Error::InvalidInput("the TestPose criterion needs a test pose".into()));
        }
    };
    Ok(CriterionValue {
        kind,
        value,
        sense: kind.sense(),
    })
}

pub fn classical_criterion(
    plan: &ExperimentPlan,
    model: &RobotModel,
    kind: CriterionKind,
    noise: &NoiseModel,
) -> Result<CriterionValue> {
    criterion_from_stacked(&stacked_observation(plan, model), kind, noise.sigma)
        .map_err(|e| crate::identification::relabel(e, &plan.joints))
}

/// Any criterion; `TestPose` uses ρ₀² as its value.
pub fn evaluate_criterion(
    plan: &ExperimentPlan,
    model: &RobotModel,
    kind: CriterionKind,
    noise: &NoiseModel,
    tp: &TestPose,
) -> Result<CriterionValue> {
    if kind == CriterionKind::TestPose {
        let score = test_pose_criterion(plan, tp, model, noise)?;
        return Ok(CriterionValue {
            kind,
            value: score.rho0_sq,
            sense: Sense::Min,
        });
    }
    classical_criterion(plan, model, kind, noise)
}

/// All ten criteria, in catalogue order.
pub fn evaluate_all(
    plan: &ExperimentPlan,
    model: &RobotModel,
    tp: &TestPose,
    noise: &NoiseModel,
) -> Result<Vec<CriterionValue>> {
    CriterionKind::ALL
        .iter()
        .map(|&k| evaluate_criterion(plan, model, k, noise, tp))
        .collect()
}
