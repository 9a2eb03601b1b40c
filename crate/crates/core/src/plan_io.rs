//! On-disk formats for plans (JSON, text table) and measurement logs (CSV).

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::elastostatic::{JointSet, Wrench};
use crate::error::{Error, Result};
use crate::identification::{Experiment, ExperimentPlan, MeasurementSet};
use crate::kinematics::JointConfiguration;

/// Plan as stored on disk. Angles in degrees; `wrenches` is present only
/// when the experiments do not share one load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub joints: JointSet,
    pub wrench: [f64; 6],
    pub configs_deg: Vec<[f64; 6]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wrenches: Option<Vec<[f64; 6]>>,
}

impl PlanFile {
    pub fn from_plan(plan: &ExperimentPlan) -> Self {
        let configs_deg = plan.entries.iter().map(|e| e.q.to_degrees()).collect();
        match plan.shared_wrench() {
            Some(w) => Self {
                joints: plan.joints.clone(),
                wrench: w.to_array(),
                configs_deg,
                wrenches: None,
            },
            None => Self {
                joints: plan.joints.clone(),
                wrench: plan.entries[0].wrench.to_array(),
                configs_deg,
                wrenches: Some(plan.entries.iter().map(|e| e.wrench.to_array()).collect()),
            },
        }
    }

    pub fn to_plan(&self) -> Result<ExperimentPlan> {
        let wrenches: Vec<Wrench> = match &self.wrenches {
            Some(ws) => {
                if ws.len() != self.configs_deg.len() {
                    return Err(Error::DimensionMismatch {
                        expected: self.configs_deg.len(),
                        found: ws.len(),
                    });
                }
                ws.iter().map(|w| Wrench::from_array(*w)).collect()
            }
            None => vec![Wrench::from_array(self.wrench); self.configs_deg.len()],
        };
        let entries = self
            .configs_deg
            .iter()
            .zip(wrenches)
            .map(|(q, wrench)| Experiment {
                q: JointConfiguration::from_degrees(*q),
                wrench,
            })
            .collect();
        ExperimentPlan::new(entries, self.joints.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: Self = serde_json::from_str(text)?;
        file.to_plan()?;
        Ok(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

/// Measurement configurations as a fixed-width table, one row per
/// experiment, angles in degrees with one decimal.
pub fn configurations_table(plan: &PlanFile) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Measurement configurations for the elastostatic calibration");
    let _ = writeln!(out, "{} calibration experiments, calibrated joints {}", plan.configs_deg.len(), plan.joints);
    let w = plan.wrench;
    let _ = writeln!(
        out,
        "load: F = ({}, {}, {}) N, T = ({}, {}, {}) N·m",
        w[0], w[1], w[2], w[3], w[4], w[5]
    );
    let _ = writeln!(
        out,
        "{:<6}{:>9}{:>9}{:>9}{:>9}{:>9}{:>9}",
        "", "q1", "q2", "q3", "q4", "q5", "q6"
    );
    for (i, q) in plan.configs_deg.iter().enumerate() {
        let _ = write!(out, "{:<6}", format!("q_{}", i + 1));
        for v in q {
            let _ = write!(out, "{:>9.1}", v);
        }
        out.push('\n');
    }
    out
}

pub const MEASUREMENT_COLUMNS: [&str; 16] = [
    "exp_id", "q1_deg", "q2_deg", "q3_deg", "q4_deg", "q5_deg", "q6_deg", "fx", "fy", "fz", "tx", "ty", "tz",
    "dpx_mm", "dpy_mm", "dpz_mm",
];

#[derive(Debug, Serialize, Deserialize)]
struct MeasurementRow {
    exp_id: usize,
    q1_deg: f64,
    q2_deg: f64,
    q3_deg: f64,
    q4_deg: f64,
    q5_deg: f64,
    q6_deg: f64,
    fx: f64,
    fy: f64,
    fz: f64,
    tx: f64,
    ty: f64,
    tz: f64,
    dpx_mm: f64,
    dpy_mm: f64,
    dpz_mm: f64,
}

pub fn write_measurements<W: Write>(writer: W, plan: &ExperimentPlan, meas: &MeasurementSet) -> Result<()> {
    if meas.dp.len() != plan.len() {
        return Err(Error::DimensionMismatch {
            expected: plan.len(),
            found: meas.dp.len(),
        });
    }
    let mut w = csv::Writer::from_writer(writer);
    for (i, (e, dp)) in plan.entries.iter().zip(&meas.dp).enumerate() {
        let q = e.q.to_degrees();
        let f = e.wrench.to_array();
        w.serialize(MeasurementRow {
            exp_id: i + 1,
            q1_deg: q[0],
            q2_deg: q[1],
            q3_deg: q[2],
            q4_deg: q[3],
            q5_deg: q[4],
            q6_deg: q[5],
            fx: f[0],
            fy: f[1],
            fz: f[2],
            tx: f[3],
            ty: f[4],
            tz: f[5],
            dpx_mm: dp.x,
            dpy_mm: dp.y,
            dpz_mm: dp.z,
        })?;
    }
    w.flush().map_err(|e| Error::io("<measurement writer>", e))?;
    Ok(())
}

/// Reads a measurement log; rows are taken in file order.
pub fn read_measurements<R: Read>(reader: R, joints: JointSet) -> Result<(ExperimentPlan, MeasurementSet)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let got: Vec<&str> = headers.iter().collect();
    if got != MEASUREMENT_COLUMNS {
        return Err(Error::InvalidInput(format!(
            "measurement CSV columns must be {}, got {}",
            MEASUREMENT_COLUMNS.join(","),
            got.join(",")
        )));
    }
    let mut entries = Vec::new();
    let mut dp = Vec::new();
    for row in rdr.deserialize() {
        let r: MeasurementRow = row?;
        entries.push(Experiment {
            q: JointConfiguration::from_degrees([r.q1_deg, r.q2_deg, r.q3_deg, r.q4_deg, r.q5_deg, r.q6_deg]),
            wrench: Wrench::from_array([r.fx, r.fy, r.fz, r.tx, r.ty, r.tz]),
        });
        dp.push(Vector3::new(r.dpx_mm, r.dpy_mm, r.dpz_mm));
    }
    Ok((ExperimentPlan::new(entries, joints)?, MeasurementSet { dp }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_plan() -> ExperimentPlan {
        let configs = [[0.0, -99.9, 114.3, -48.5, 28.1, -180.0], [0.0, -67.8, -94.0, 137.5, -111.9, 76.9]]
            .map(JointConfiguration::from_degrees);
        ExperimentPlan::with_shared_wrench(&configs, Wrench::force(0.0, 0.0, -2500.0), JointSet::arm_and_wrist())
            .unwrap()
    }

    proptest! {
        #[test]
        fn plan_json_round_trip_is_bit_exact(
            configs in prop::collection::vec(prop::array::uniform6(-360.0f64..360.0), 1..8),
            w in prop::array::uniform6(-5000.0f64..5000.0),
        ) {
            let file = PlanFile { joints: JointSet::all(), wrench: w, configs_deg: configs, wrenches: None };
            let back = PlanFile::from_json(&file.to_json().unwrap()).unwrap();
            for (a, b) in back.configs_deg.iter().flatten().zip(file.configs_deg.iter().flatten()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            prop_assert_eq!(back.to_plan().unwrap(), file.to_plan().unwrap());
        }
    }

    #[test]
    fn per_experiment_wrenches_survive() {
        let mut plan = sample_plan();
        plan.entries[1].wrench = Wrench::force(0.0, 1000.0, -2000.0);
        let file = PlanFile::from_plan(&plan);
        assert!(file.wrenches.is_some());
        let back = PlanFile::from_json(&file.to_json().unwrap()).unwrap().to_plan().unwrap();
        assert_eq!(back.entries[1].wrench, plan.entries[1].wrench);
    }

    #[test]
    fn plan_schema_keys() {
        let v: serde_json::Value = serde_json::from_str(&PlanFile::from_plan(&sample_plan()).to_json().unwrap()).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(|s| s.as_str()).collect();
        keys.sort();
        assert_eq!(keys, ["configs_deg", "joints", "wrench"]);
        assert_eq!(v["joints"], serde_json::json!([2, 3, 4, 5, 6]));
    }

    #[test]
    fn table_lists_every_configuration() {
        let t = configurations_table(&PlanFile::from_plan(&sample_plan()));
        assert!(t.contains("q_1"));
        assert!(t.contains("-99.9"));
        assert!(t.contains("-111.9"));
    }

    #[test]
    fn measurement_csv_round_trip() {
        let plan = sample_plan();
        let meas = MeasurementSet {
            dp: vec![Vector3::new(0.1, -0.25, 1.5), Vector3::new(-0.3, 0.0, 2.0)],
        };
        let mut buf = Vec::new();
        write_measurements(&mut buf, &plan, &meas).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("exp_id,q1_deg,q2_deg,q3_deg,q4_deg,q5_deg,q6_deg,fx,fy,fz,tx,ty,tz,dpx_mm,dpy_mm,dpz_mm\n"));
        let (p2, m2) = read_measurements(buf.as_slice(), plan.joints.clone()).unwrap();
        assert_eq!(m2, meas);
        assert_eq!(p2.len(), 2);
        assert!(read_measurements("a,b\n1,2\n".as_bytes(), JointSet::all()).is_err());
    }
}
