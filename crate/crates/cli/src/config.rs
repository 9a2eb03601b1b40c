//! Run configuration: a flat JSON object whose missing fields fall back to
//! the reference milling setup.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use elastocal::criteria::TestPose;
use elastocal::designer::DesignConstraints;
use elastocal::elastostatic::{ComplianceVector, JointSet, Wrench};
use elastocal::identification::NoiseModel;
use elastocal::kinematics::{JointConfiguration, RobotModel};
use elastocal::robot_file::RobotDescription;

use crate::error::CliError;

pub const DEFAULT_TEST_POSE_DEG: [f64; 6] = [75.0, -56.9, 89.3, 45.1, 76.0, 57.2];
pub const DEFAULT_TEST_WRENCH: [f64; 6] = [0.0, 280.0, -180.0, 0.0, 0.0, 0.0];
pub const DEFAULT_CALIBRATION_WRENCH: [f64; 6] = [0.0, 0.0, -2500.0, 0.0, 0.0, 0.0];
pub const DEFAULT_SIGMA_MM: f64 = 0.03;
pub const DEFAULT_F_MAX_N: f64 = 2600.0;
/// Assumed compliances of a heavy six-axis arm, rad/(N·m).
pub const DEFAULT_K_TRUE: [f64; 6] = [0.5e-6, 0.35e-6, 0.45e-6, 2.2e-6, 1.9e-6, 3.1e-6];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Robot description file; the bundled model when absent.
    pub robot: Option<PathBuf>,
    pub test_pose_deg: [f64; 6],
    pub test_wrench: [f64; 6],
    pub calibration_wrench: [f64; 6],
    pub sigma_mm: f64,
    pub f_max_n: f64,
    pub pz_min_mm: f64,
    pub r_min_mm: f64,
    pub phi_max_deg: f64,
    pub joints: Vec<usize>,
    pub m: usize,
    pub seed: u64,
    /// Design starts; chosen from m when absent.
    pub starts: Option<usize>,
    pub trials: usize,
    pub random_plans: usize,
    pub k_true: Vec<f64>,
    pub optimize_forces: bool,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            robot: None,
            test_pose_deg: DEFAULT_TEST_POSE_DEG,
            test_wrench: DEFAULT_TEST_WRENCH,
            calibration_wrench: DEFAULT_CALIBRATION_WRENCH,
            sigma_mm: DEFAULT_SIGMA_MM,
            f_max_n: DEFAULT_F_MAX_N,
            pz_min_mm: DesignConstraints::PZ_MIN_MM,
            r_min_mm: DesignConstraints::R_MIN_MM,
            phi_max_deg: DesignConstraints::PHI_MAX_RAD.to_degrees(),
            joints: vec![2, 3, 4, 5, 6],
            m: 2,
            seed: 0,
            starts: None,
            trials: 20_000,
            random_plans: 100,
            k_true: DEFAULT_K_TRUE.to_vec(),
            optimize_forces: false,
            output_dir: PathBuf::from("."),
        }
    }
}

/// Where each default comes from, reported when a field is left out.
const PROVENANCE: &[(&str, &str)] = &[
    ("robot", "bundled KR-270 model"),
    ("test_pose_deg", "reference milling posture"),
    ("test_wrench", "reference milling load"),
    ("calibration_wrench", "reference calibration load"),
    ("sigma_mm", "laser-tracker accuracy"),
    ("f_max_n", "assumed force limit just above the calibration load"),
    ("pz_min_mm", "reference workspace bound"),
    ("r_min_mm", "reference workspace bound"),
    ("phi_max_deg", "reference workspace bound"),
    ("joints", "arm and wrist joints"),
    ("m", "smallest reference plan"),
    ("seed", "fixed master seed"),
    ("starts", "200 for m <= 4, else 500"),
    ("trials", "Monte Carlo default"),
    ("random_plans", "reference comparison size"),
    ("k_true", "assumed compliances for synthetic data"),
    ("optimize_forces", "shared calibration load"),
    ("output_dir", "current directory"),
];

pub fn accepted_keys() -> Vec<&'static str> {
    PROVENANCE.iter().map(|(k, _)| *k).collect()
}

impl RunConfig {
    /// Parses and validates a configuration document, warning about unknown
    /// keys and logging every default that was filled in.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let value: Value = serde_json::from_str(text).map_err(|e| CliError::Config(format!("config is not valid JSON: {e}")))?;
        let Value::Object(map) = value else {
            return Err(CliError::Config("config must be a JSON object".into()));
        };
        let accepted = accepted_keys();
        let mut known = Map::new();
        for (k, v) in map {
            if accepted.contains(&k.as_str()) {
                known.insert(k, v);
            } else {
                log::warn!("ignoring unknown config key `{k}`; accepted keys: {}", accepted.join(", "));
            }
        }
        for (key, source) in PROVENANCE {
            if !known.contains_key(*key) {
                log::info!("config `{key}` not set, using default ({source})");
            }
        }
        let cfg: RunConfig = serde_json::from_value(Value::Object(known)).map_err(|e| CliError::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, why: String| Err(CliError::Config(format!("`{field}`: {why}")));
        if !(self.sigma_mm >= 0.0 && self.sigma_mm.is_finite()) {
            return bad("sigma_mm", format!("must be finite and >= 0, got {}", self.sigma_mm));
        }
        if self.m < 1 {
            return bad("m", "must be at least 1".into());
        }
        if self.trials < 1 {
            return bad("trials", "must be at least 1".into());
        }
        if self.starts == Some(0) {
            return bad("starts", "must be at least 1".into());
        }
        if let Some(robot) = &self.robot {
            if !robot.is_file() {
                return bad("robot", format!("file {} does not exist", robot.display()));
            }
        }
        if let Err(e) = JointSet::new(&self.joints) {
            return bad("joints", e.to_string());
        }
        if self.k_true.len() != 6 || !self.k_true.iter().all(|k| *k >= 0.0 && k.is_finite()) {
            return bad("k_true", "must hold six finite non-negative compliances".into());
        }
        for (field, w) in [("test_wrench", &self.test_wrench), ("calibration_wrench", &self.calibration_wrench)] {
            if !w.iter().all(|v| v.is_finite()) {
                return bad(field, "must be finite".into());
            }
        }
        if !self.test_pose_deg.iter().all(|v| v.is_finite()) {
            return bad("test_pose_deg", "must be finite".into());
        }
        if let Err(e) = self.constraints().validate() {
            return bad("constraints", e.to_string());
        }
        Ok(())
    }

    pub fn description(&self) -> Result<RobotDescription, CliError> {
        match &self.robot {
            Some(p) => Ok(RobotDescription::load(p)?),
            None => Ok(RobotDescription::kr270()),
        }
    }

    /// Calibration-tool and machining-tool models.
    pub fn models(&self) -> Result<(RobotModel, RobotModel), CliError> {
        let d = self.description()?;
        Ok((d.calibration_model()?, d.machining_model()?))
    }

    pub fn joint_set(&self) -> JointSet {
        JointSet::new(&self.joints).expect("validated")
    }

    pub fn constraints(&self) -> DesignConstraints {
        DesignConstraints {
            f_max: self.f_max_n,
            pz_min: self.pz_min_mm,
            r_min: self.r_min_mm,
            phi_max: self.phi_max_deg.to_radians(),
        }
    }

    pub fn noise(&self) -> NoiseModel {
        NoiseModel::new(self.sigma_mm, self.seed).expect("validated")
    }

    pub fn test_pose(&self, machining: &RobotModel, joints: JointSet) -> TestPose {
        TestPose::new(
            machining,
            JointConfiguration::from_degrees(self.test_pose_deg),
            Wrench::from_array(self.test_wrench),
            joints,
        )
    }

    pub fn k_true(&self) -> ComplianceVector {
        ComplianceVector::new(nalgebra::DVector::from_column_slice(&self.k_true), JointSet::all()).expect("validated")
    }
}
