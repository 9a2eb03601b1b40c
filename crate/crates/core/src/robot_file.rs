//! JSON robot description: geometry, joint axes, limits and the two tool transforms.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{JointAxis, JointLimit, PoseTransform, RobotModel, JOINT_COUNT};

const KR270_JSON: &str = include_str!("../data/kr270.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolDescription {
    /// 3×3 rotation, row-major.
    pub rotation: [f64; 9],
    pub translation_mm: [f64; 3],
}

impl Default for ToolDescription {
    fn default() -> Self {
        Self {
            rotation: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            translation_mm: [0.0; 3],
        }
    }
}

impl ToolDescription {
    pub fn to_pose(&self) -> Result<PoseTransform> {
        PoseTransform::from_row_major(self.rotation, self.translation_mm)
    }

    pub fn from_pose(pose: &PoseTransform) -> Self {
        Self {
            rotation: pose.rotation_row_major(),
            translation_mm: pose.translation.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotDescription {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub links_mm: [f64; JOINT_COUNT],
    pub joint_axes: [String; JOINT_COUNT],
    pub joint_limits_deg: [[f64; 2]; JOINT_COUNT],
    #[serde(default)]
    pub tool_calibration: ToolDescription,
    #[serde(default)]
    pub tool_machining: ToolDescription,
}

impl RobotDescription {
    /// The bundled KR-270 model.
    pub fn kr270() -> Self {
        serde_json::from_str(KR270_JSON).expect("bundled kr270.json is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let d: Self = serde_json::from_str(text)?;
        d.model_with(&ToolDescription::default())?;
        Ok(d)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    /// Model carrying the calibration tool (used for the measurement plan).
    pub fn calibration_model(&self) -> Result<RobotModel> {
        self.model_with(&self.tool_calibration)
    }

    /// Model carrying the machining tool (used for the test pose).
    pub fn machining_model(&self) -> Result<RobotModel> {
        self.model_with(&self.tool_machining)
    }

    fn model_with(&self, tool: &ToolDescription) -> Result<RobotModel> {
        let mut axes = [JointAxis::new(crate::kinematics::Axis::Z, false); JOINT_COUNT];
        for (a, tag) in axes.iter_mut().zip(&self.joint_axes) {
            *a = tag.parse()?;
        }
        let limits = self.joint_limits_deg.map(|[lo, hi]| JointLimit {
            min: lo.to_radians(),
            max: hi.to_radians(),
        });
        RobotModel::new(self.links_mm, axes, limits, tool.to_pose()?)
    }
}
