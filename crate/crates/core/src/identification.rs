//! Least-squares identification of joint compliances from measured
//! tool-tip deflections, and the covariance of the estimate.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::elastostatic::{observation_from_frames, ComplianceVector, JointSet, Wrench};
use crate::error::{Error, Result};
use crate::kinematics::{JointConfiguration, RobotModel};

/// Smallest admissible ratio between the extreme eigenvalues of the information matrix.
pub const INFORMATION_RATIO_MIN: f64 = 1e-12;

/// Null-space component magnitude above which a joint is reported as unobservable.
const NULL_COMPONENT_REPORT: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Experiment {
    pub q: JointConfiguration,
    pub wrench: Wrench,
}

/// Ordered set of (configuration, wrench) pairs and the joints being calibrated.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentPlan {
    pub entries: Vec<Experiment>,
    pub joints: JointSet,
}

impl ExperimentPlan {
    pub fn new(entries: Vec<Experiment>, joints: JointSet) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidInput("a plan needs at least one experiment".into()));
        }
        if let Some(i) = entries.iter().position(|e| !e.wrench.is_finite() || !e.q.is_finite()) {
            return Err(Error::InvalidInput(format!("experiment {} has non-finite values", i + 1)));
        }
        Ok(Self { entries, joints })
    }

    pub fn with_shared_wrench(configs: &[JointConfiguration], wrench: Wrench, joints: JointSet) -> Result<Self> {
        Self::new(configs.iter().map(|&q| Experiment { q, wrench }).collect(), joints)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn configurations(&self) -> Vec<JointConfiguration> {
        self.entries.iter().map(|e| e.q).collect()
    }

    /// The wrench common to every experiment, if there is one.
    pub fn shared_wrench(&self) -> Option<Wrench> {
        let w = self.entries.first()?.wrench;
        self.entries.iter().all(|e| e.wrench == w).then_some(w)
    }

    /// The plan carried out `r` times in a row.
    pub fn repeated(&self, r: usize) -> Self {
        let mut entries = Vec::with_capacity(self.len() * r);
        for _ in 0..r {
            entries.extend_from_slice(&self.entries);
        }
        Self {
            entries,
            joints: self.joints.clone(),
        }
    }
}

/// Measured position deflections, one per experiment, mm.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementSet {
    pub dp: Vec<Vector3<f64>>,
}

impl MeasurementSet {
    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(self.dp.len() * 3, self.dp.iter().flat_map(|v| v.iter().copied()))
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        Self {
            dp: v.as_slice().chunks_exact(3).map(Vector3::from_column_slice).collect(),
        }
    }

    /// α·self + β·other, element-wise.
    pub fn combine(&self, alpha: f64, other: &MeasurementSet, beta: f64) -> Self {
        Self {
            dp: self.dp.iter().zip(&other.dp).map(|(a, b)| a * alpha + b * beta).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseDistribution {
    #[default]
    Gaussian,
    /// Zero-mean uniform with the same standard deviation.
    Uniform,
}

/// I.i.d. per-axis measurement noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Standard deviation per measured axis, mm.
    pub sigma: f64,
    pub seed: u64,
    #[serde(default)]
    pub distribution: NoiseDistribution,
}

impl NoiseModel {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidInput(format!("sigma must be finite and >= 0, got {sigma}")));
        }
        Ok(Self {
            sigma,
            seed,
            distribution: NoiseDistribution::Gaussian,
        })
    }

    pub fn with_distribution(mut self, distribution: NoiseDistribution) -> Self {
        self.distribution = distribution;
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    /// One noise sample.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.sigma == 0.0 {
            return 0.0;
        }
        match self.distribution {
            NoiseDistribution::Gaussian => Normal::new(0.0, self.sigma).expect("sigma validated").sample(rng),
            NoiseDistribution::Uniform => {
                let half = self.sigma * 3f64.sqrt();
                Uniform::new_inclusive(-half, half).expect("sigma validated").sample(rng)
            }
        }
    }
}

/// Independent random stream `stream` derived from a master seed.
pub fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdentificationResult {
    pub k_hat: ComplianceVector,
    /// σ²·information⁻¹, present when a noise model was supplied.
    pub covariance: Option<DMatrix<f64>>,
    pub information: DMatrix<f64>,
    /// √Σ‖Aᵢ k̂ − Δpᵢ‖², mm.
    pub residual_norm: f64,
}

impl IdentificationResult {
    /// Estimates may leave the physical (positive) region under heavy noise.
    pub fn is_physical(&self) -> bool {
        self.k_hat.is_physical()
    }

    pub fn standard_errors(&self) -> Option<DVector<f64>> {
        self.covariance
            .as_ref()
            .map(|c| DVector::from_iterator(c.nrows(), (0..c.nrows()).map(|i| c[(i, i)].max(0.0).sqrt())))
    }
}

/// Positional observation blocks of every experiment stacked into a 3m×n matrix.
pub fn stacked_observation(plan: &ExperimentPlan, model: &RobotModel) -> DMatrix<f64> {
    let n = plan.joints.len();
    let mut stacked = DMatrix::zeros(3 * plan.len(), n);
    for (i, e) in plan.entries.iter().enumerate() {
        let a = observation_from_frames(&model.frames(&e.q), &e.wrench, &plan.joints);
        stacked.view_mut((3 * i, 0), (3, n)).copy_from(&a.full.fixed_rows::<3>(0));
    }
    stacked
}

/// Σᵢ Aᵢ⁽ᵖ⁾ᵀ Aᵢ⁽ᵖ⁾.
pub fn stack_information(plan: &ExperimentPlan, model: &RobotModel) -> DMatrix<f64> {
    let n = plan.joints.len();
    let mut info = DMatrix::zeros(n, n);
    for e in &plan.entries {
        let a = observation_from_frames(&model.frames(&e.q), &e.wrench, &plan.joints);
        let ap = a.full.fixed_rows::<3>(0);
        info += ap.transpose() * ap;
    }
    info
}

/// Orthogonal factorisation of the stacked observation matrix, used for the
/// estimate and the covariance alike.
#[derive(Clone, Debug)]
pub struct PlanFactorization {
    u_t: DMatrix<f64>,
    singular_values: DVector<f64>,
    v: DMatrix<f64>,
}

impl PlanFactorization {
    pub fn new(stacked: &DMatrix<f64>) -> Result<Self> {
        let n = stacked.ncols();
        if stacked.nrows() < n {
            return Err(singular_error(&(stacked.transpose() * stacked)));
        }
        let svd = stacked.clone().svd(true, true);
        let s = svd.singular_values.clone();
        let max = s.max();
        let min = s.min();
        if !(max > 0.0) || !(min * min > INFORMATION_RATIO_MIN * max * max) {
            return Err(singular_error(&(stacked.transpose() * stacked)));
        }
        Ok(Self {
            u_t: svd.u.expect("requested").transpose(),
            singular_values: s,
            v: svd.v_t.expect("requested").transpose(),
        })
    }

    pub fn from_plan(plan: &ExperimentPlan, model: &RobotModel) -> Result<Self> {
        Self::new(&stacked_observation(plan, model))
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.singular_values
    }

    /// Least-squares solution for a stacked measurement vector.
    pub fn solve(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut c = &self.u_t * y;
        c.component_div_assign(&self.singular_values);
        &self.v * c
    }

    /// V Σ⁻¹, so that information⁻¹ = W Wᵀ.
    pub fn inverse_root(&self) -> DMatrix<f64> {
        let mut w = self.v.clone();
        for (j, s) in self.singular_values.iter().enumerate() {
            w.column_mut(j).scale_mut(1.0 / s);
        }
        w
    }

    pub fn inverse_information(&self) -> DMatrix<f64> {
        let w = self.inverse_root();
        &w * w.transpose()
    }
}

fn singular_error(info: &DMatrix<f64>) -> Error {
    let eig = info.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, |a, b| a.max(b.abs()));
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, |a, b| a.min(b.abs()));
    let threshold = INFORMATION_RATIO_MIN * max;
    let mut directions = Vec::new();
    let mut joints = Vec::new();
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() <= threshold || max == 0.0 {
            let v = eig.eigenvectors.column(i);
            let argmax = v.iamax();
            for (j, c) in v.iter().enumerate() {
                if (j == argmax || c.abs() >= NULL_COMPONENT_REPORT) && !joints.contains(&j) {
                    joints.push(j);
                }
            }
            directions.push(v.iter().copied().collect());
        }
    }
    joints.sort_unstable();
    Error::SingularInformation {
        unobservable_joints: joints.into_iter().map(|j| j + 1).collect(),
        directions,
        ratio: if max > 0.0 { min / max } else { 0.0 },
    }
}

/// Maps positions within the plan's joint set to 1-based joint numbers in a singular-information error.
pub(crate) fn relabel(err: Error, joints: &JointSet) -> Error {
    match err {
        Error::SingularInformation {
            unobservable_joints,
            directions,
            ratio,
        } => Error::SingularInformation {
            unobservable_joints: unobservable_joints.iter().map(|&p| joints.indices()[p - 1] + 1).collect(),
            directions,
            ratio,
        },
        other => other,
    }
}

pub(crate) fn factorize_plan(plan: &ExperimentPlan, model: &RobotModel) -> Result<PlanFactorization> {
    PlanFactorization::from_plan(plan, model).map_err(|e| relabel(e, &plan.joints))
}

/// k̂ = (Σ Aᵢᵀ Aᵢ)⁻¹ Σ Aᵢᵀ Δpᵢ over the positional blocks.
pub fn estimate_compliance(
    plan: &ExperimentPlan,
    meas: &MeasurementSet,
    model: &RobotModel,
    noise: Option<&NoiseModel>,
) -> Result<IdentificationResult> {
    if meas.dp.len() != plan.len() {
        return Err(Error::DimensionMismatch {
            expected: plan.len(),
            found: meas.dp.len(),
        });
    }
    let stacked = stacked_observation(plan, model);
    let fact = PlanFactorization::new(&stacked).map_err(|e| relabel(e, &plan.joints))?;
    let y = meas.to_vector();
    let k = fact.solve(&y);
    let residual_norm = (&stacked * &k - &y).norm();
    let information = stacked.transpose() * &stacked;
    let covariance = noise.map(|nm| fact.inverse_information() * (nm.sigma * nm.sigma));
    Ok(IdentificationResult {
        k_hat: ComplianceVector::new(k, plan.joints.clone())?,
        covariance,
        information,
        residual_norm,
    })
}

/// cov(k̂) = σ²·information⁻¹.
pub fn covariance(plan: &ExperimentPlan, model: &RobotModel, noise: &NoiseModel) -> Result<DMatrix<f64>> {
    let fact = factorize_plan(plan, model)?;
    Ok(fact.inverse_information() * (noise.sigma * noise.sigma))
}
