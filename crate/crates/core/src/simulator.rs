//! Synthetic measurements, deflection compensation and Monte Carlo
//! validation of the predicted compensation accuracy.

use std::io::Write;

use nalgebra::{DMatrix, DVector, Vector3};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::criteria::{weighted_trace, TestPose};
use crate::elastostatic::{
    cartesian_stiffness, nonsingular_jacobian_si, require_full_compliance, ComplianceVector, JointSet, Wrench,
};
use crate::error::{Error, Result};
use crate::identification::{
    factorize_plan, seeded_stream, stacked_observation, ExperimentPlan, MeasurementSet, NoiseModel,
};
use crate::kinematics::{JointConfiguration, RobotModel};

/// Largest tolerated fraction of failed Monte Carlo trials.
pub const MAX_FAILED_FRACTION: f64 = 1e-3;

fn noisy(y_true: &DVector<f64>, noise: &NoiseModel, rng: &mut ChaCha8Rng) -> DVector<f64> {
    y_true.map(|v| v + noise.sample(rng))
}

/// Noise-free stacked deflections produced by `k_true` over its own joint set.
fn true_deflections(plan: &ExperimentPlan, k_true: &ComplianceVector, model: &RobotModel) -> DVector<f64> {
    let truth = ExperimentPlan {
        entries: plan.entries.clone(),
        joints: k_true.joints.clone(),
    };
    stacked_observation(&truth, model) * &k_true.values
}

/// Δpᵢ = Aᵢk_true + εᵢ. The deflections are generated with every joint in
/// `k_true`, which may be a superset of the plan's joints. The noise stream
/// is stream 0 of `noise.seed`.
pub fn simulate_measurements(
    plan: &ExperimentPlan,
    k_true: &ComplianceVector,
    noise: &NoiseModel,
    model: &RobotModel,
) -> MeasurementSet {
    let y = true_deflections(plan, k_true, model);
    MeasurementSet::from_vector(&noisy(&y, noise, &mut seeded_stream(noise.seed, 0)))
}

/// Joint targets that cancel the elastic deflection under `w`:
/// q = q₀ − diag(k)·Jᵀ·W (SI Jacobian).
pub fn compensate(
    model: &RobotModel,
    q0: &JointConfiguration,
    w: &Wrench,
    k_hat: &ComplianceVector,
) -> Result<JointConfiguration> {
    require_full_compliance(k_hat)?;
    let j = nonsingular_jacobian_si(model, q0)?;
    let tau = j.transpose() * w.as_vector();
    Ok(JointConfiguration(q0.0 - k_hat.full_diagonal().component_mul(&tau)))
}

/// The same correction computed as q₀ − J⁻¹·K_C⁻¹·W.
pub fn compensate_via_stiffness(
    model: &RobotModel,
    q0: &JointConfiguration,
    w: &Wrench,
    k_hat: &ComplianceVector,
) -> Result<JointConfiguration> {
    let kc = cartesian_stiffness(model, q0, k_hat)?;
    let j = nonsingular_jacobian_si(model, q0)?;
    let singular = || Error::SingularConfiguration { condition: f64::INFINITY };
    let dt = kc.lu().solve(&w.as_vector()).ok_or_else(singular)?;
    let dq = j.lu().solve(&dt).ok_or_else(singular)?;
    Ok(JointConfiguration(q0.0 - dq))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonteCarloReport {
    pub n_trials: usize,
    pub n_failed: usize,
    pub sigma: f64,
    pub seed: u64,
    pub joints: JointSet,
    /// ‖δp‖ per successful trial in trial order, mm.
    pub rho_samples: Vec<f64>,
    /// Mean of ‖δp‖, mm.
    pub rho_mean: f64,
    /// √mean(‖δp‖²), mm.
    pub rho_rms: f64,
    /// Closed-form prediction √ρ₀², mm.
    pub rho0_predicted: f64,
    pub k_hat_mean: Vec<f64>,
    pub k_hat_sample_cov: Vec<Vec<f64>>,
    /// Mean compensation error vector, mm.
    pub mean_dp: [f64; 3],
}

impl MonteCarloReport {
    /// rho_rms / rho0_predicted − 1.
    pub fn relative_gap(&self) -> f64 {
        self.rho_rms / self.rho0_predicted - 1.0
    }

    pub fn mean_dp_norm(&self) -> f64 {
        Vector3::from(self.mean_dp).norm()
    }

    /// One row per sample: `trial,rho_mm`.
    pub fn write_samples_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["trial", "rho_mm"])?;
        for (i, r) in self.rho_samples.iter().enumerate() {
            w.write_record([(i + 1).to_string(), r.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<sample writer>", e))?;
        Ok(())
    }
}

struct Trial {
    k_hat: DVector<f64>,
    dp: Vector3<f64>,
}

/// Repeats simulate → identify → predict the test-pose error `n_trials`
/// times. Trial `t` draws its noise from stream `t + 1` of `noise.seed`.
pub fn monte_carlo_rho(
    plan: &ExperimentPlan,
    tp: &TestPose,
    k_true: &ComplianceVector,
    noise: &NoiseModel,
    n_trials: usize,
    model: &RobotModel,
) -> Result<MonteCarloReport> {
    if n_trials == 0 {
        return Err(Error::InvalidInput("at least one Monte Carlo trial is required".into()));
    }
    if plan.joints != tp.joints {
        return Err(Error::InvalidInput(format!(
            "plan joints {} differ from test-pose joints {}",
            plan.joints, tp.joints
        )));
    }
    let k_ref = DVector::from_iterator(
        plan.joints.len(),
        plan.joints.indices().iter().map(|&j| {
            if k_true.joints.contains(j) {
                Ok(k_true.get(j))
            } else {
                Err(Error::InvalidInput(format!(
                    "true compliance for joint {} is missing (given joints {})",
                    j + 1,
                    k_true.joints
                )))
            }
        }).collect::<Result<Vec<f64>>>()?,
    );
    let fact = factorize_plan(plan, model)?;
    let y_true = true_deflections(plan, k_true, model);
    let rho0_predicted = noise.sigma * weighted_trace(&fact, &tp.a0p).sqrt();

    let trials: Vec<Option<Trial>> = (0..n_trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = seeded_stream(noise.seed, t as u64 + 1);
            let k_hat = fact.solve(&noisy(&y_true, noise, &mut rng));
            if !k_hat.iter().all(|v| v.is_finite()) {
                return None;
            }
            let dp = &tp.a0p * (&k_hat - &k_ref);
            Some(Trial {
                k_hat,
                dp: Vector3::new(dp[0], dp[1], dp[2]),
            })
        })
        .collect();

    let ok: Vec<&Trial> = trials.iter().flatten().collect();
    let n_failed = n_trials - ok.len();
    if n_failed as f64 > MAX_FAILED_FRACTION * n_trials as f64 || ok.is_empty() {
        return Err(Error::TooManyFailedTrials {
            failed: n_failed,
            trials: n_trials,
        });
    }
    let count = ok.len() as f64;
    let rho_samples: Vec<f64> = ok.iter().map(|t| t.dp.norm()).collect();
    let rho_mean = rho_samples.iter().sum::<f64>() / count;
    let rho_rms = (rho_samples.iter().map(|r| r * r).sum::<f64>() / count).sqrt();
    let mean_dp = ok.iter().fold(Vector3::zeros(), |acc, t| acc + t.dp) / count;

    let n = plan.joints.len();
    let k_mean = ok.iter().fold(DVector::zeros(n), |acc, t| acc + &t.k_hat) / count;
    let mut cov = DMatrix::<f64>::zeros(n, n);
    for t in &ok {
        let d = &t.k_hat - &k_mean;
        cov += &d * d.transpose();
    }
    if ok.len() > 1 {
        cov /= count - 1.0;
    }

    Ok(MonteCarloReport {
        n_trials,
        n_failed,
        sigma: noise.sigma,
        seed: noise.seed,
        joints: plan.joints.clone(),
        rho_samples,
        rho_mean,
        rho_rms,
        rho0_predicted,
        k_hat_mean: k_mean.iter().copied().collect(),
        k_hat_sample_cov: cov.row_iter().map(|r| r.iter().copied().collect()).collect(),
        mean_dp: [mean_dp.x, mean_dp.y, mean_dp.z],
    })
}
