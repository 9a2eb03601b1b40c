//! Constrained design of calibration plans that minimise the test-pose
//! criterion, plus random reference plans and the repetition advisor.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::{test_pose_criterion, TestPose};
use crate::elastostatic::{observation_from_frames, JointSet, Wrench};
use crate::error::{Error, Result};
use crate::identification::{seeded_stream, Experiment, ExperimentPlan, NoiseModel, INFORMATION_RATIO_MIN};
use crate::kinematics::{metrics_from_pose, JointConfiguration, RobotModel, WorkspaceMetrics};
use crate::optimize::{nelder_mead, NelderMeadOptions};
use crate::plan_io::PlanFile;

/// Bounds on the calibration load and on the tool-tip placement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignConstraints {
    /// Upper bound on the applied force norm, N.
    pub f_max: f64,
    /// Lower bound on tool-tip height, mm.
    pub pz_min: f64,
    /// Lower bound on horizontal reach, mm.
    pub r_min: f64,
    /// Upper bound on tool tilt from the downward vertical, rad.
    pub phi_max: f64,
}

impl DesignConstraints {
    pub const PZ_MIN_MM: f64 = 800.0;
    pub const R_MIN_MM: f64 = 600.0;
    pub const PHI_MAX_RAD: f64 = PI / 6.0;

    /// Default workspace bounds with the given force limit.
    pub fn reference(f_max: f64) -> Self {
        Self {
            f_max,
            pz_min: Self::PZ_MIN_MM,
            r_min: Self::R_MIN_MM,
            phi_max: Self::PHI_MAX_RAD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("f_max", self.f_max), ("pz_min", self.pz_min), ("r_min", self.r_min), ("phi_max", self.phi_max)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("constraint {name} must be positive and finite, got {v}")));
            }
        }
        if self.phi_max > PI {
            return Err(Error::InvalidInput(format!("constraint phi_max must not exceed pi, got {}", self.phi_max)));
        }
        Ok(())
    }
}

/// A failed constraint and its signed margin (≤ 0 when violated).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub constraint: String,
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Feasibility {
    pub feasible: bool,
    pub violations: Vec<Violation>,
}

fn force_norm(w: &Wrench) -> f64 {
    w.force.norm()
}

fn collect_violations(
    model: &RobotModel,
    q: &JointConfiguration,
    metrics: &WorkspaceMetrics,
    w: &Wrench,
    c: &DesignConstraints,
) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, lim) in model.joint_limits().iter().enumerate() {
        if !lim.contains(q[i]) {
            out.push(Violation {
                constraint: format!("joint_limit[{}]", i + 1),
                margin: (q[i] - lim.min).min(lim.max - q[i]),
            });
        }
    }
    let strict = [
        ("force", c.f_max - force_norm(w)),
        ("pz", metrics.pz - c.pz_min),
        ("r", metrics.r - c.r_min),
        ("phi", c.phi_max - metrics.phi),
    ];
    for (name, margin) in strict {
        if !(margin > 0.0) {
            out.push(Violation {
                constraint: name.into(),
                margin,
            });
        }
    }
    out
}

/// Joint limits are inclusive; the force and workspace bounds are strict.
pub fn check_feasibility(model: &RobotModel, q: &JointConfiguration, w: &Wrench, c: &DesignConstraints) -> Feasibility {
    let metrics = model.workspace_metrics(q);
    let violations = collect_violations(model, q, &metrics, w, c);
    Feasibility {
        feasible: violations.is_empty(),
        violations,
    }
}

fn is_feasible(model: &RobotModel, q: &JointConfiguration, w: &Wrench, c: &DesignConstraints) -> bool {
    check_feasibility(model, q, w, c).feasible
}

fn sample_uniform(model: &RobotModel, rng: &mut ChaCha8Rng) -> JointConfiguration {
    let mut q = JointConfiguration::zeros();
    for (i, lim) in model.joint_limits().iter().enumerate() {
        q[i] = rng.random_range(lim.min..=lim.max);
    }
    q
}

/// Rejection-samples one feasible configuration. When `base` is given only
/// the `free` joints are drawn and the rest are copied from it.
fn sample_feasible(
    model: &RobotModel,
    c: &DesignConstraints,
    w: &Wrench,
    base: Option<&JointConfiguration>,
    free: &[usize],
    attempts: usize,
    rng: &mut ChaCha8Rng,
) -> Option<JointConfiguration> {
    for _ in 0..attempts {
        let drawn = sample_uniform(model, rng);
        let q = match base {
            Some(b) => {
                let mut q = *b;
                for &j in free {
                    q[j] = drawn[j];
                }
                q
            }
            None => drawn,
        };
        if is_feasible(model, &q, w, c) {
            return Some(q);
        }
    }
    None
}

pub const DEFAULT_SAMPLE_ATTEMPTS: usize = 100_000;

/// `m` configurations drawn uniformly over the joint limits, each accepted
/// only if feasible under the shared wrench `w`.
pub fn random_plan(
    model: &RobotModel,
    c: &DesignConstraints,
    m: usize,
    w: Wrench,
    joints: JointSet,
    seed: u64,
    attempts: usize,
) -> Result<ExperimentPlan> {
    c.validate()?;
    if m == 0 {
        return Err(Error::InvalidInput("a plan needs at least one experiment".into()));
    }
    if !(force_norm(&w) < c.f_max) {
        return Err(Error::InfeasibleConstraints { attempts: 0 });
    }
    let mut rng = seeded_stream(seed, 0);
    let mut configs = Vec::with_capacity(m);
    for _ in 0..m {
        let q = sample_feasible(model, c, &w, None, &[], attempts, &mut rng)
            .ok_or(Error::SamplingExhausted { attempts })?;
        configs.push(q);
    }
    ExperimentPlan::with_shared_wrench(&configs, w, joints)
}

#[derive(Clone, Debug)]
pub struct DesignOptions {
    /// Number of random starts; `None` picks 200 for m ≤ 4 and 500 otherwise.
    pub starts: Option<usize>,
    pub seed: u64,
    /// Calibration load shared by every experiment (or the initial load when
    /// forces are optimised too).
    pub wrench: Wrench,
    /// Optimise a separate force per experiment in addition to the postures.
    pub optimize_forces: bool,
    /// Measurement noise, mm; scales the reported ρ₀ only.
    pub sigma: f64,
    /// Simplex evaluation budget per penalty round; `None` scales with dimension.
    pub max_evaluations: Option<usize>,
    pub penalty_rounds: usize,
    pub sample_attempts: usize,
    /// Postures for the non-calibrated joints, one per experiment.
    pub fixed_postures: Option<Vec<JointConfiguration>>,
    /// Configurations seeding one extra start, padded with random feasible
    /// ones when shorter than m.
    pub warm_start: Option<Vec<JointConfiguration>>,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            starts: None,
            seed: 0,
            wrench: Wrench::force(0.0, 0.0, -2500.0),
            optimize_forces: false,
            sigma: 0.03,
            max_evaluations: None,
            penalty_rounds: 5,
            sample_attempts: DEFAULT_SAMPLE_ATTEMPTS,
            fixed_postures: None,
            warm_start: None,
        }
    }
}

pub fn default_starts(m: usize) -> usize {
    if m <= 4 {
        200
    } else {
        500
    }
}

/// Outcome of one start: best strictly feasible ρ₀ after each penalty round.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StartSummary {
    pub index: usize,
    pub rho0: Option<f64>,
    pub convergence: Vec<Option<f64>>,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct DesignResult {
    #[serde(skip)]
    pub plan: ExperimentPlan,
    #[serde(rename = "plan")]
    pub plan_file: PlanFile,
    /// mm
    pub rho0: f64,
    pub rho0_sq: f64,
    pub sigma: f64,
    pub starts_tried: usize,
    pub best_start_index: usize,
    pub starts: Vec<StartSummary>,
}

const PENALTY_MU0: f64 = 1.0;
const PENALTY_GROWTH: f64 = 10.0;
const VIOLATION_TOL: f64 = 1e-6;
const ANGLE_STEP: f64 = 0.2;
const FORCE_STEP_KN: f64 = 0.25;
/// Bounds are tightened by these amounts so that the optimum stays strictly
/// feasible after a round trip through degrees.
const LIMIT_SHRINK_RAD: f64 = 1e-9;
const LENGTH_SHRINK_MM: f64 = 1e-6;
const ANGLE_SHRINK_RAD: f64 = 1e-9;
const FORCE_SHRINK_N: f64 = 1e-6;

/// Everything one start needs, shared read-only across workers.
struct Problem<'a> {
    model: &'a RobotModel,
    tp: &'a TestPose,
    c: DesignConstraints,
    m: usize,
    free: Vec<usize>,
    joints: JointSet,
    wrench: Wrench,
    optimize_forces: bool,
    nm: NelderMeadOptions,
    rounds: usize,
    attempts: usize,
    fixed: Option<Vec<JointConfiguration>>,
}

#[derive(Clone)]
struct Candidate {
    trace: f64,
    configs: Vec<JointConfiguration>,
    wrenches: Vec<Wrench>,
}

struct Evaluation {
    trace: f64,
    violation: f64,
}

impl Problem<'_> {
    fn dims(&self) -> usize {
        self.m * self.free.len() + if self.optimize_forces { 3 * self.m } else { 0 }
    }

    fn unpack(&self, x: &[f64], base: &[JointConfiguration]) -> (Vec<JointConfiguration>, Vec<Wrench>) {
        let nf = self.free.len();
        let mut configs = base.to_vec();
        for (i, q) in configs.iter_mut().enumerate() {
            for (k, &j) in self.free.iter().enumerate() {
                q[j] = x[i * nf + k];
            }
        }
        let wrenches = if self.optimize_forces {
            let off = self.m * nf;
            (0..self.m)
                .map(|i| {
                    let f = &x[off + 3 * i..off + 3 * i + 3];
                    Wrench {
                        force: Vector3::new(f[0], f[1], f[2]) * 1e3,
                        torque: self.wrench.torque,
                    }
                })
                .collect()
        } else {
            vec![self.wrench; self.m]
        };
        (configs, wrenches)
    }

    fn pack(&self, configs: &[JointConfiguration], wrenches: &[Wrench]) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dims());
        for q in configs {
            x.extend(self.free.iter().map(|&j| q[j]));
        }
        if self.optimize_forces {
            for w in wrenches {
                x.extend(w.force.iter().map(|f| f * 1e-3));
            }
        }
        x
    }

    /// Weighted trace and squared violation of the tightened bounds
    /// (lengths in m, forces in kN, angles in rad).
    fn evaluate(&self, configs: &[JointConfiguration], wrenches: &[Wrench]) -> Evaluation {
        let n = self.joints.len();
        let mut info = DMatrix::<f64>::zeros(n, n);
        let mut violation = 0.0;
        let limits = self.model.joint_limits();
        for (q, w) in configs.iter().zip(wrenches) {
            for &j in &self.free {
                let lo = limits[j].min + LIMIT_SHRINK_RAD;
                let hi = limits[j].max - LIMIT_SHRINK_RAD;
                violation += (lo - q[j]).max(0.0).powi(2) + (q[j] - hi).max(0.0).powi(2);
            }
            let frames = self.model.frames(q);
            let mt = metrics_from_pose(&frames.tool);
            violation += ((self.c.pz_min + LENGTH_SHRINK_MM - mt.pz).max(0.0) * 1e-3).powi(2);
            violation += ((self.c.r_min + LENGTH_SHRINK_MM - mt.r).max(0.0) * 1e-3).powi(2);
            violation += (mt.phi - (self.c.phi_max - ANGLE_SHRINK_RAD)).max(0.0).powi(2);
            violation += ((force_norm(w) - (self.c.f_max - FORCE_SHRINK_N)).max(0.0) * 1e-3).powi(2);
            let ap = observation_from_frames(&frames, w, &self.joints).positional();
            info += ap.transpose() * ap;
        }
        Evaluation {
            trace: weighted_trace_of_information(info, &self.tp.a0p),
            violation,
        }
    }

    fn initial_point(&self, rng: &mut ChaCha8Rng, seed_configs: Option<&[JointConfiguration]>) -> Option<Vec<JointConfiguration>> {
        let mut configs = Vec::with_capacity(self.m);
        for i in 0..self.m {
            if let Some(q) = seed_configs.and_then(|s| s.get(i)) {
                configs.push(*q);
                continue;
            }
            let base = self.fixed.as_ref().map(|f| &f[i]);
            configs.push(sample_feasible(self.model, &self.c, &self.wrench, base, &self.free, self.attempts, rng)?);
        }
        Some(configs)
    }

    fn run_start(&self, index: usize, rng: &mut ChaCha8Rng, seed_configs: Option<&[JointConfiguration]>) -> (StartSummary, Option<Candidate>) {
        let mut summary = StartSummary {
            index,
            rho0: None,
            convergence: Vec::new(),
            evaluations: 0,
            converged: false,
        };
        let Some(base) = self.initial_point(rng, seed_configs) else {
            return (summary, None);
        };
        let wrenches0 = vec![self.wrench; self.m];
        let mut x = self.pack(&base, &wrenches0);
        let mut steps = vec![ANGLE_STEP; self.m * self.free.len()];
        if self.optimize_forces {
            steps.extend(std::iter::repeat_n(FORCE_STEP_KN, 3 * self.m));
        }

        let mut best: Option<Candidate> = None;
        let mut mu = PENALTY_MU0;
        for _ in 0..self.rounds.max(1) {
            let mut objective = |x: &[f64]| {
                let (configs, wrenches) = self.unpack(x, &base);
                let e = self.evaluate(&configs, &wrenches);
                if e.violation == 0.0 && e.trace.is_finite() && best.as_ref().is_none_or(|b| e.trace < b.trace) {
                    best = Some(Candidate {
                        trace: e.trace,
                        configs,
                        wrenches,
                    });
                }
                e.trace.ln() + mu * e.violation
            };
            let out = nelder_mead(&mut objective, &x, &steps, &self.nm);
            summary.evaluations += out.evaluations;
            summary.converged = out.converged;
            x = out.x;
            summary.convergence.push(best.as_ref().map(|b| b.trace.sqrt()));
            let (configs, wrenches) = self.unpack(&x, &base);
            if self.evaluate(&configs, &wrenches).violation < VIOLATION_TOL * VIOLATION_TOL {
                break;
            }
            mu *= PENALTY_GROWTH;
        }
        (summary, best)
    }
}

/// trace(A₀ M⁻¹ A₀ᵀ) for information M, or ∞ when M is not safely invertible.
fn weighted_trace_of_information(info: DMatrix<f64>, a0p: &nalgebra::Matrix3xX<f64>) -> f64 {
    let eig = info.symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    if !(max > 0.0) || !(min > 10.0 * INFORMATION_RATIO_MIN * max) {
        return f64::INFINITY;
    }
    match info.cholesky() {
        Some(ch) => {
            let z = ch.l().solve_lower_triangular(&a0p.transpose()).expect("positive diagonal");
            z.norm_squared()
        }
        None => f64::INFINITY,
    }
}

/// Minimises the test-pose criterion over the plan postures (and optionally
/// the forces) subject to `c`, from many random starts.
pub fn design_plan(
    model: &RobotModel,
    tp: &TestPose,
    m: usize,
    c: &DesignConstraints,
    options: &DesignOptions,
) -> Result<DesignResult> {
    c.validate()?;
    let noise = NoiseModel::new(options.sigma, options.seed)?;
    let joints = tp.joints.clone();
    let n = joints.len();
    if m == 0 || 3 * m < n {
        return Err(Error::RankDeficient {
            rows: 3 * m,
            parameters: n,
        });
    }
    if let Some(f) = &options.fixed_postures {
        if f.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: f.len(),
            });
        }
    }
    if !(force_norm(&options.wrench) < c.f_max) {
        return Err(Error::InfeasibleConstraints { attempts: 0 });
    }
    let free: Vec<usize> = joints.indices().to_vec();

    let mut probe = seeded_stream(options.seed, u64::MAX);
    let probe_base = options.fixed_postures.as_ref().map(|f| &f[0]);
    if sample_feasible(model, c, &options.wrench, probe_base, &free, options.sample_attempts, &mut probe).is_none() {
        return Err(Error::InfeasibleConstraints {
            attempts: options.sample_attempts,
        });
    }

    let dims = m * free.len() + if options.optimize_forces { 3 * m } else { 0 };
    let problem = Problem {
        model,
        tp,
        c: *c,
        m,
        free,
        joints: joints.clone(),
        wrench: options.wrench,
        optimize_forces: options.optimize_forces,
        nm: NelderMeadOptions {
            max_evaluations: options.max_evaluations.unwrap_or(2000 + 300 * dims),
            ..Default::default()
        },
        rounds: options.penalty_rounds,
        attempts: options.sample_attempts,
        fixed: options.fixed_postures.clone(),
    };

    let starts = options.starts.unwrap_or_else(|| default_starts(m));
    let mut outcomes: Vec<(StartSummary, Option<Candidate>)> = (0..starts)
        .into_par_iter()
        .map(|i| problem.run_start(i, &mut seeded_stream(options.seed, i as u64), None))
        .collect();
    if let Some(warm) = &options.warm_start {
        let seed_configs: Vec<JointConfiguration> = warm.iter().take(m).copied().collect();
        outcomes.push(problem.run_start(starts, &mut seeded_stream(options.seed, starts as u64), Some(&seed_configs)));
    }

    let mut best: Option<(usize, &Candidate)> = None;
    for (i, (_, cand)) in outcomes.iter().enumerate() {
        if let Some(cand) = cand {
            if best.is_none_or(|(_, b)| cand.trace < b.trace) {
                best = Some((i, cand));
            }
        }
    }
    let Some((best_index, cand)) = best else {
        if outcomes.iter().all(|(s, _)| s.convergence.is_empty()) {
            return Err(Error::SamplingExhausted {
                attempts: options.sample_attempts,
            });
        }
        return Err(Error::RankDeficient {
            rows: 3 * m,
            parameters: n,
        });
    };

    let entries = cand
        .configs
        .iter()
        .zip(&cand.wrenches)
        .map(|(&q, &wrench)| Experiment { q, wrench })
        .collect();
    let plan_file = PlanFile::from_plan(&ExperimentPlan::new(entries, joints)?);
    let plan = plan_file.to_plan()?;
    let score = test_pose_criterion(&plan, tp, model, &noise)?;

    let sigma = options.sigma;
    let mut summaries: Vec<StartSummary> = outcomes.into_iter().map(|(s, _)| s).collect();
    for s in &mut summaries {
        s.rho0 = s.convergence.iter().rev().flatten().next().map(|r| r * sigma);
        for v in s.convergence.iter_mut().flatten() {
            *v *= sigma;
        }
    }
    Ok(DesignResult {
        plan,
        plan_file,
        rho0: score.rho0,
        rho0_sq: score.rho0_sq,
        sigma,
        starts_tried: summaries.len(),
        best_start_index: best_index,
        starts: summaries,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TwoStepDesign {
    /// Joints 2..6 under the vertical load.
    pub step1: DesignResult,
    /// Joint 1 under a horizontal load of the same magnitude.
    pub step2: DesignResult,
}

/// Horizontal step-2 load: the step-1 force magnitude along the base y axis.
pub fn horizontal_load(vertical: &Wrench) -> Wrench {
    Wrench::force(0.0, force_norm(vertical), 0.0)
}

/// Two independent designs: joints 2..6 under `options.wrench`, then joint 1
/// alone with q1 as the only free variable per experiment and the remaining
/// joints held at the step-1 postures. `machining` is the model the test pose
/// was built with.
pub fn two_step_design(
    model: &RobotModel,
    machining: &RobotModel,
    tp: &TestPose,
    m: usize,
    c: &DesignConstraints,
    options: &DesignOptions,
) -> Result<TwoStepDesign> {
    let tp1 = tp.for_joints(machining, JointSet::arm_and_wrist());
    let step1 = design_plan(model, &tp1, m, c, options)?;
    let tp2 = tp.for_joints(machining, JointSet::base());
    let opts2 = DesignOptions {
        wrench: horizontal_load(&options.wrench),
        optimize_forces: false,
        fixed_postures: Some(step1.plan.configurations()),
        warm_start: None,
        ..options.clone()
    };
    let step2 = design_plan(model, &tp2, m, c, &opts2)?;
    Ok(TwoStepDesign { step1, step2 })
}

/// ρ₀ of a plan carried out `r` times.
pub fn repetition_rho(rho_base: f64, r: usize) -> f64 {
    rho_base / (r as f64).sqrt()
}

/// Relative accuracy loss of `rho` with respect to `rho_reference`.
pub fn relative_loss(rho: f64, rho_reference: f64) -> f64 {
    rho / rho_reference - 1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RepetitionOption {
    pub distinct: usize,
    pub repeats: usize,
    pub rho0: f64,
    /// Relative to the plan with `total` distinct configurations, when known.
    pub relative_loss: Option<f64>,
}

/// All ways of reaching `total` experiments by repeating one of the
/// `designed` (distinct count, ρ₀) plans, ordered by distinct count.
pub fn repetition_schedule(total: usize, designed: &[(usize, f64)]) -> Vec<RepetitionOption> {
    let full = designed.iter().find(|(m, _)| *m == total).map(|&(_, r)| r);
    let mut out: Vec<RepetitionOption> = designed
        .iter()
        .filter(|(m, _)| *m > 0 && total % m == 0)
        .map(|&(m, rho)| {
            let rho0 = repetition_rho(rho, total / m);
            RepetitionOption {
                distinct: m,
                repeats: total / m,
                rho0,
                relative_loss: full.map(|f| relative_loss(rho0, f)),
            }
        })
        .collect();
    out.sort_by_key(|o| o.distinct);
    out
}

/// The schedule with the fewest distinct configurations whose loss stays
/// within `tolerance`.
pub fn recommend_repetition(schedule: &[RepetitionOption], tolerance: f64) -> Option<RepetitionOption> {
    schedule
        .iter()
        .filter(|o| o.relative_loss.is_some_and(|l| l <= tolerance))
        .min_by_key(|o| o.distinct)
        .copied()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::JOINT_COUNT;
    use crate::robot_file::RobotDescription;

    fn models() -> (RobotModel, RobotModel) {
        let d = RobotDescription::kr270();
        (d.calibration_model().unwrap(), d.machining_model().unwrap())
    }

    fn test_pose(machining: &RobotModel, joints: JointSet) -> TestPose {
        TestPose::new(
            machining,
            JointConfiguration::from_degrees([75.0, -56.9, 89.3, 45.1, 76.0, 57.2]),
            Wrench::from_array([0.0, 280.0, -180.0, 0.0, 0.0, 0.0]),
            joints,
        )
    }

    fn quick(seed: u64, starts: usize) -> DesignOptions {
        DesignOptions {
            starts: Some(starts),
            seed,
            max_evaluations: Some(1500),
            penalty_rounds: 3,
            ..Default::default()
        }
    }

    #[test]
    fn reports_height_violation_margin() {
        let (model, _) = models();
        let q = JointConfiguration::from_degrees([0.0, -90.0, 90.0, 0.0, 60.0, 0.0]);
        let pz = model.workspace_metrics(&q).pz;
        // Place the bound 100 mm above the tool tip.
        let c = DesignConstraints {
            pz_min: pz + 100.0,
            ..DesignConstraints::reference(2600.0)
        };
        let f = check_feasibility(&model, &q, &Wrench::force(0.0, 0.0, -2500.0), &c);
        assert!(!f.feasible);
        let v = f.violations.iter().find(|v| v.constraint == "pz").expect("pz violation");
        assert!((v.margin + 100.0).abs() < 1e-9, "{}", v.margin);
    }

    #[test]
    fn force_below_limit_is_accepted_and_boundaries_are_strict() {
        let (model, _) = models();
        let c = DesignConstraints::reference(2600.0);
        let q = JointConfiguration::from_degrees([0.0, -90.0, 90.0, 0.0, 60.0, 0.0]);
        let f = check_feasibility(&model, &q, &Wrench::force(0.0, 0.0, -2500.0), &c);
        assert!(f.violations.iter().all(|v| v.constraint != "force"));

        let mt = model.workspace_metrics(&q);
        let at_bounds = DesignConstraints {
            f_max: 2500.0,
            pz_min: mt.pz,
            r_min: mt.r,
            phi_max: mt.phi,
        };
        let f = check_feasibility(&model, &q, &Wrench::force(0.0, 0.0, -2500.0), &at_bounds);
        let mut names: Vec<&str> = f.violations.iter().map(|v| v.constraint.as_str()).collect();
        names.sort();
        assert_eq!(names, ["force", "phi", "pz", "r"]);
        assert!(f.violations.iter().all(|v| v.margin == 0.0));
    }

    #[test]
    fn joint_limits_are_inclusive() {
        let (model, _) = models();
        let mut q = JointConfiguration::from_degrees([0.0, -90.0, 90.0, 0.0, 60.0, 0.0]);
        q[0] = model.joint_limits()[0].max;
        let f = check_feasibility(&model, &q, &Wrench::zero(), &DesignConstraints::reference(1.0));
        assert!(f.violations.iter().all(|v| !v.constraint.starts_with("joint_limit")));
        q[0] += 1e-9;
        let f = check_feasibility(&model, &q, &Wrench::zero(), &DesignConstraints::reference(1.0));
        assert!(f.violations.iter().any(|v| v.constraint == "joint_limit[1]" && v.margin < 0.0));
    }

    #[test]
    fn constraint_validation() {
        assert!(DesignConstraints::reference(2600.0).validate().is_ok());
        assert!(DesignConstraints::reference(0.0).validate().is_err());
        assert!(DesignConstraints { phi_max: 4.0, ..DesignConstraints::reference(1.0) }.validate().is_err());
    }

    #[test]
    fn random_plans_are_feasible_and_reproducible() {
        let (model, _) = models();
        let c = DesignConstraints::reference(2600.0);
        let w = Wrench::force(0.0, 0.0, -2500.0);
        let p1 = random_plan(&model, &c, 8, w, JointSet::arm_and_wrist(), 11, DEFAULT_SAMPLE_ATTEMPTS).unwrap();
        let p2 = random_plan(&model, &c, 8, w, JointSet::arm_and_wrist(), 11, DEFAULT_SAMPLE_ATTEMPTS).unwrap();
        assert_eq!(p1, p2);
        for e in &p1.entries {
            assert!(check_feasibility(&model, &e.q, &e.wrench, &c).feasible);
        }
        let p3 = random_plan(&model, &c, 8, w, JointSet::arm_and_wrist(), 12, DEFAULT_SAMPLE_ATTEMPTS).unwrap();
        assert_ne!(p1, p3);
    }

    #[test]
    fn impossible_constraints_are_reported() {
        let (model, _) = models();
        let (_, machining) = models();
        let tp = test_pose(&machining, JointSet::arm_and_wrist());
        let c = DesignConstraints {
            pz_min: 1e6,
            ..DesignConstraints::reference(2600.0)
        };
        let opts = DesignOptions {
            sample_attempts: 500,
            ..quick(0, 2)
        };
        assert!(matches!(design_plan(&model, &tp, 2, &c, &opts), Err(Error::InfeasibleConstraints { .. })));
        let c = DesignConstraints::reference(2000.0);
        assert!(matches!(design_plan(&model, &tp, 2, &c, &opts), Err(Error::InfeasibleConstraints { .. })));
        assert!(matches!(
            random_plan(&model, &DesignConstraints { pz_min: 1e6, ..DesignConstraints::reference(2600.0) }, 1, Wrench::zero(), JointSet::all(), 0, 100),
            Err(Error::SamplingExhausted { attempts: 100 })
        ));
    }

    #[test]
    fn single_experiment_cannot_identify_five_joints() {
        let (model, machining) = models();
        let tp = test_pose(&machining, JointSet::arm_and_wrist());
        let r = design_plan(&model, &tp, 1, &DesignConstraints::reference(2600.0), &quick(0, 2));
        assert!(matches!(r, Err(Error::RankDeficient { rows: 3, parameters: 5 })));
    }

    #[test]
    fn designed_plan_is_feasible_consistent_and_beats_its_starts() {
        let (model, machining) = models();
        let tp = test_pose(&machining, JointSet::arm_and_wrist());
        let c = DesignConstraints::reference(2600.0);
        let res = design_plan(&model, &tp, 2, &c, &quick(5, 6)).unwrap();
        for e in &res.plan.entries {
            assert!(check_feasibility(&model, &e.q, &e.wrench, &c).feasible);
        }
        let noise = NoiseModel::new(0.03, 0).unwrap();
        let again = test_pose_criterion(&res.plan, &tp, &model, &noise).unwrap();
        assert!((again.rho0 - res.rho0).abs() <= 1e-10 * res.rho0);
        let best = res.starts[res.best_start_index].rho0.unwrap();
        assert!((best - res.rho0).abs() <= 1e-9 * res.rho0);
        assert!(res.starts.iter().flat_map(|s| s.rho0).all(|r| r >= res.rho0 * (1.0 - 1e-9)));
        for s in &res.starts {
            let trace: Vec<f64> = s.convergence.iter().flatten().copied().collect();
            assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn same_seed_gives_identical_plan() {
        let (model, machining) = models();
        let tp = test_pose(&machining, JointSet::arm_and_wrist());
        let c = DesignConstraints::reference(2600.0);
        let a = design_plan(&model, &tp, 2, &c, &quick(9, 3)).unwrap();
        let b = design_plan(&model, &tp, 2, &c, &quick(9, 3)).unwrap();
        assert_eq!(a.plan_file.to_json().unwrap(), b.plan_file.to_json().unwrap());
        assert_eq!(a.rho0.to_bits(), b.rho0.to_bits());
    }

    #[test]
    fn more_starts_never_hurt() {
        let (model, machining) = models();
        let tp = test_pose(&machining, JointSet::arm_and_wrist());
        let c = DesignConstraints::reference(2600.0);
        let few = design_plan(&model, &tp, 2, &c, &quick(4, 2)).unwrap();
        let more = design_plan(&model, &tp, 2, &c, &quick(4, 5)).unwrap();
        assert!(more.rho0 <= few.rho0);
    }

    #[test]
    fn warm_start_from_smaller_plan_never_hurts() {
        let (model, machining) = models();
        let tp = test_pose(&machining, JointSet::arm_and_wrist());
        let c = DesignConstraints::reference(2600.0);
        let two = design_plan(&model, &tp, 2, &c, &quick(2, 3)).unwrap();
        let opts = DesignOptions {
            warm_start: Some(two.plan.configurations()),
            ..quick(2, 1)
        };
        let three = design_plan(&model, &tp, 3, &c, &opts).unwrap();
        assert!(three.rho0 <= two.rho0);
    }

    #[test]
    fn per_experiment_forces_respect_the_limit() {
        let (model, machining) = models();
        let tp = test_pose(&machining, JointSet::arm_and_wrist());
        let c = DesignConstraints::reference(2600.0);
        let opts = DesignOptions {
            optimize_forces: true,
            ..quick(1, 2)
        };
        let res = design_plan(&model, &tp, 2, &c, &opts).unwrap();
        for e in &res.plan.entries {
            assert!(e.wrench.force.norm() < 2600.0);
            assert!(check_feasibility(&model, &e.q, &e.wrench, &c).feasible);
        }
    }

    #[test]
    fn two_step_design_separates_base_joint() {
        let (model, machining) = models();
        let tp = test_pose(&machining, JointSet::all());
        let c = DesignConstraints::reference(2600.0);
        let res = two_step_design(&model, &machining, &tp, 2, &c, &quick(3, 2)).unwrap();
        assert_eq!(res.step1.plan.joints, JointSet::arm_and_wrist());
        assert_eq!(res.step2.plan.joints, JointSet::base());
        assert_eq!(res.step2.plan.shared_wrench(), Some(Wrench::force(0.0, 2500.0, 0.0)));
        for (a, b) in res.step1.plan.entries.iter().zip(&res.step2.plan.entries) {
            for j in 1..JOINT_COUNT {
                assert_eq!(a.q[j].to_bits(), b.q[j].to_bits());
            }
        }
        // Single-parameter variance σ²/Σ‖a₁ᵢ‖².
        let s: f64 = res
            .step2
            .plan
            .entries
            .iter()
            .map(|e| crate::elastostatic::observation_matrix(&model, &e.q, &e.wrench, &JointSet::base()).positional().norm_squared())
            .sum();
        let cov = crate::identification::covariance(&res.step2.plan, &model, &NoiseModel::new(0.03, 0).unwrap()).unwrap();
        assert!((cov[(0, 0)] - 0.03 * 0.03 / s).abs() <= 1e-12 * cov[(0, 0)]);
    }

    #[test]
    fn repetition_schedule_matches_scaling_law() {
        let designed = [(2, 5.989), (3, 4.676), (4, 4.044), (6, 3.228), (12, 2.282)];
        let s = repetition_schedule(12, &designed);
        assert_eq!(s.iter().map(|o| o.distinct).collect::<Vec<_>>(), [2, 3, 4, 6, 12]);
        assert!((s[0].rho0 - 5.989 / 6f64.sqrt()).abs() < 1e-12);
        assert_eq!(s[4].relative_loss, Some(0.0));
        let rec = recommend_repetition(&s, 0.03).unwrap();
        assert_eq!((rec.distinct, rec.repeats), (3, 4));
        assert!(recommend_repetition(&repetition_schedule(5, &designed), 0.1).is_none());
    }
}
