use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use elastocal::criteria::{evaluate_criterion, test_pose_criterion, CriterionKind, Sense};
use elastocal::designer::{design_plan, random_plan, DesignOptions, DesignResult, DEFAULT_SAMPLE_ATTEMPTS};
use elastocal::elastostatic::{ComplianceVector, JointSet, Wrench};
use elastocal::identification::{estimate_compliance, ExperimentPlan};
use elastocal::kinematics::JointConfiguration;
use elastocal::plan_io::{configurations_table, read_measurements, write_measurements, PlanFile};
use elastocal::simulator::{compensate, monte_carlo_rho, simulate_measurements, MonteCarloReport};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::report::{csv_line, emit, joined, micro_mm, nano_compliance, table_row, write_file, Format, Report};

/// Inputs shared by every command after flags have been merged into the config.
pub struct Context {
    pub config: RunConfig,
    pub format: Format,
    pub criterion: Option<CriterionKind>,
    pub plan: Option<PathBuf>,
    pub measurements: Option<PathBuf>,
    pub compliance: Option<PathBuf>,
}

impl Context {
    fn out_dir(&self) -> &Path {
        &self.config.output_dir
    }

    fn load_plan(&self) -> Result<ExperimentPlan, CliError> {
        let path = self
            .plan
            .as_ref()
            .ok_or_else(|| CliError::Config("this command needs --plan <file>".into()))?;
        Ok(PlanFile::load(path)?.to_plan()?)
    }

    fn design_options(&self) -> DesignOptions {
        DesignOptions {
            starts: self.config.starts,
            seed: self.config.seed,
            wrench: Wrench::from_array(self.config.calibration_wrench),
            optimize_forces: self.config.optimize_forces,
            sigma: self.config.sigma_mm,
            ..Default::default()
        }
    }

    fn run_design(&self) -> Result<DesignResult, CliError> {
        let (cal, mach) = self.config.models()?;
        let tp = self.config.test_pose(&mach, self.config.joint_set());
        Ok(design_plan(&cal, &tp, self.config.m, &self.config.constraints(), &self.design_options())?)
    }
}

fn report_line(path: &Path) {
    println!("wrote {}", path.display());
}

#[derive(Serialize)]
struct DesignReport<'a> {
    #[serde(flatten)]
    result: &'a DesignResult,
}

impl Report for DesignReport<'_> {
    fn csv(&self) -> String {
        let mut out = csv_line(&["experiment", "q1_deg", "q2_deg", "q3_deg", "q4_deg", "q5_deg", "q6_deg"].map(String::from));
        for (i, q) in self.result.plan_file.configs_deg.iter().enumerate() {
            let mut row = vec![(i + 1).to_string()];
            row.extend(q.iter().map(|v| v.to_string()));
            out += &csv_line(&row);
        }
        out
    }

    fn text(&self) -> String {
        let mut out = configurations_table(&self.result.plan_file);
        let _ = writeln!(out, "rho0 [mm x 10^-3]: {}", micro_mm(self.result.rho0));
        let _ = writeln!(
            out,
            "starts: {}, best start: {}",
            self.result.starts_tried, self.result.best_start_index
        );
        out
    }
}

pub fn design(ctx: &Context) -> Result<(), CliError> {
    let result = ctx.run_design()?;
    let plan_path = ctx.out_dir().join("plan.json");
    write_file(&plan_path, result.plan_file.to_json()?.as_bytes())?;
    report_line(&plan_path);
    report_line(&emit(&DesignReport { result: &result }, ctx.format, ctx.out_dir(), "design")?);
    log::info!("designed rho0 = {} x 10^-3 mm", micro_mm(result.rho0));
    Ok(())
}

#[derive(Serialize)]
struct CriterionEntry {
    criterion: CriterionKind,
    value: Option<f64>,
    sense: Sense,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct EvaluateReport {
    experiments: usize,
    joints: JointSet,
    sigma_mm: f64,
    /// None when the plan cannot identify its joints.
    rho0_mm: Option<f64>,
    criteria: Vec<CriterionEntry>,
}

fn value_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6e}")).unwrap_or_else(|| "n/a".into())
}

impl Report for EvaluateReport {
    fn csv(&self) -> String {
        let mut out = csv_line(&["criterion", "value", "sense"].map(String::from));
        for c in &self.criteria {
            let v = c.value.map(|x| x.to_string()).unwrap_or_default();
            out += &csv_line(&[c.criterion.tag().to_string(), v, format!("{:?}", c.sense).to_lowercase()]);
        }
        out
    }

    fn text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Plan quality: {} experiments, calibrated joints {}, sigma = {} mm",
            self.experiments, self.joints, self.sigma_mm
        );
        for c in &self.criteria {
            let _ = writeln!(
                out,
                "{:<18}{:>16}  {}",
                c.criterion.tag(),
                value_cell(c.value),
                format!("{:?}", c.sense).to_lowercase()
            );
        }
        let rho = self.rho0_mm.map(micro_mm).unwrap_or_else(|| "n/a".into());
        let _ = writeln!(out, "rho0 [mm x 10^-3]: {rho}");
        out
    }
}

pub fn evaluate(ctx: &Context) -> Result<(), CliError> {
    let plan = ctx.load_plan()?;
    let (cal, mach) = ctx.config.models()?;
    let tp = ctx.config.test_pose(&mach, plan.joints.clone());
    let noise = ctx.config.noise();
    let kinds: Vec<CriterionKind> = match ctx.criterion {
        Some(k) => vec![k],
        None => CriterionKind::ALL.to_vec(),
    };
    let criteria = kinds
        .into_iter()
        .map(|kind| match evaluate_criterion(&plan, &cal, kind, &noise, &tp) {
            Ok(v) => CriterionEntry {
                criterion: kind,
                value: Some(v.value),
                sense: v.sense,
                error: None,
            },
            Err(e) => CriterionEntry {
                criterion: kind,
                value: None,
                sense: kind.sense(),
                error: Some(e.to_string()),
            },
        })
        .collect();
    let rho0_mm = test_pose_criterion(&plan, &tp, &cal, &noise).ok().map(|s| s.rho0);
    let report = EvaluateReport {
        experiments: plan.len(),
        joints: plan.joints.clone(),
        sigma_mm: noise.sigma,
        rho0_mm,
        criteria,
    };
    report_line(&emit(&report, ctx.format, ctx.out_dir(), "evaluate")?);
    Ok(())
}

#[derive(Serialize)]
struct SimulateReport<'a> {
    #[serde(flatten)]
    mc: &'a MonteCarloReport,
    relative_gap: f64,
    mean_dp_norm: f64,
}

impl Report for SimulateReport<'_> {
    fn csv(&self) -> String {
        let mc = self.mc;
        let mut out = csv_line(&["quantity", "value"].map(String::from));
        for (k, v) in [
            ("n_trials", mc.n_trials as f64),
            ("n_failed", mc.n_failed as f64),
            ("sigma_mm", mc.sigma),
            ("rho_rms_mm", mc.rho_rms),
            ("rho_mean_mm", mc.rho_mean),
            ("rho0_predicted_mm", mc.rho0_predicted),
            ("relative_gap", self.relative_gap),
            ("mean_dp_norm_mm", self.mean_dp_norm),
        ] {
            out += &csv_line(&[k.to_string(), v.to_string()]);
        }
        out
    }

    fn text(&self) -> String {
        let mc = self.mc;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Monte Carlo validation: {} trials ({} failed), sigma = {} mm, joints {}",
            mc.n_trials, mc.n_failed, mc.sigma, mc.joints
        );
        let _ = writeln!(out, "rho_rms [mm x 10^-3]:        {}", micro_mm(mc.rho_rms));
        let _ = writeln!(out, "rho_mean [mm x 10^-3]:       {}", micro_mm(mc.rho_mean));
        let _ = writeln!(out, "rho0 predicted [mm x 10^-3]: {}", micro_mm(mc.rho0_predicted));
        let _ = writeln!(out, "relative gap:                {:+.2}%", 100.0 * self.relative_gap);
        let _ = writeln!(out, "|mean dp| [mm x 10^-3]:      {}", micro_mm(self.mean_dp_norm));
        let labels: Vec<String> = mc.joints.one_based().iter().map(|j| format!("k{j}")).collect();
        let sd: Vec<String> = (0..mc.k_hat_mean.len())
            .map(|i| nano_compliance(mc.k_hat_sample_cov[i][i].sqrt()))
            .collect();
        table_row(&mut out, "[rad/(N m) x 10^-9]", &labels);
        table_row(&mut out, "mean estimate", &mc.k_hat_mean.iter().map(|&v| nano_compliance(v)).collect::<Vec<_>>());
        table_row(&mut out, "std. deviation", &sd);
        out
    }
}

pub fn simulate(ctx: &Context) -> Result<(), CliError> {
    let plan = ctx.load_plan()?;
    let (cal, mach) = ctx.config.models()?;
    let tp = ctx.config.test_pose(&mach, plan.joints.clone());
    let noise = ctx.config.noise();
    let k_true = match &ctx.compliance {
        Some(p) => ComplianceFile::load(p)?.to_vector()?,
        None => ctx.config.k_true(),
    };
    let mc = monte_carlo_rho(&plan, &tp, &k_true, &noise, ctx.config.trials, &cal)?;
    let report = SimulateReport {
        mc: &mc,
        relative_gap: mc.relative_gap(),
        mean_dp_norm: mc.mean_dp_norm(),
    };
    report_line(&emit(&report, ctx.format, ctx.out_dir(), "simulate")?);

    let mut samples = Vec::new();
    mc.write_samples_csv(&mut samples)?;
    let samples_path = ctx.out_dir().join("rho_samples.csv");
    write_file(&samples_path, &samples)?;
    report_line(&samples_path);

    let meas = simulate_measurements(&plan, &k_true, &noise, &cal);
    let mut csv = Vec::new();
    write_measurements(&mut csv, &plan, &meas)?;
    let meas_path = ctx.out_dir().join("measurements.csv");
    write_file(&meas_path, &csv)?;
    report_line(&meas_path);
    Ok(())
}

/// Compliances as exchanged between commands.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComplianceFile {
    pub joints: JointSet,
    pub k_hat: Vec<f64>,
}

impl ComplianceFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_vector(&self) -> Result<ComplianceVector, CliError> {
        Ok(ComplianceVector::new(
            nalgebra::DVector::from_column_slice(&self.k_hat),
            self.joints.clone(),
        )?)
    }

    /// All six compliances, uncalibrated joints taken as rigid.
    pub fn to_full_vector(&self) -> Result<ComplianceVector, CliError> {
        let v = self.to_vector()?;
        let mut full = nalgebra::DVector::zeros(6);
        for (i, j) in self.joints.one_based().iter().enumerate() {
            full[j - 1] = v.values[i];
        }
        if self.joints.len() < 6 {
            log::warn!("joints outside {} are treated as rigid", self.joints);
        }
        Ok(ComplianceVector::new(full, JointSet::all())?)
    }
}

#[derive(Serialize)]
struct IdentifyReport {
    experiments: usize,
    sigma_mm: f64,
    joints: JointSet,
    k_hat: Vec<f64>,
    standard_errors: Option<Vec<f64>>,
    residual_norm_mm: f64,
}

impl Report for IdentifyReport {
    fn csv(&self) -> String {
        let mut out = csv_line(&["joint", "k_hat", "standard_error"].map(String::from));
        for (i, j) in self.joints.one_based().iter().enumerate() {
            let se = self.standard_errors.as_ref().map(|s| s[i].to_string()).unwrap_or_default();
            out += &csv_line(&[j.to_string(), self.k_hat[i].to_string(), se]);
        }
        out
    }

    fn text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Elastostatic parameter estimates from {} experiments, sigma = {} mm",
            self.experiments, self.sigma_mm
        );
        let labels: Vec<String> = self.joints.one_based().iter().map(|j| format!("k{j}")).collect();
        table_row(&mut out, "[rad/(N m) x 10^-9]", &labels);
        table_row(&mut out, "estimate", &self.k_hat.iter().map(|&v| nano_compliance(v)).collect::<Vec<_>>());
        if let Some(se) = &self.standard_errors {
            table_row(&mut out, "estimation error", &se.iter().map(|&v| nano_compliance(v)).collect::<Vec<_>>());
        }
        let _ = writeln!(out, "residual norm [mm]: {:.6e}", self.residual_norm_mm);
        out
    }
}

pub fn identify(ctx: &Context) -> Result<(), CliError> {
    let path = ctx
        .measurements
        .as_ref()
        .ok_or_else(|| CliError::Config("identify needs --measurements <file.csv>".into()))?;
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let (plan, meas) = read_measurements(file, ctx.config.joint_set())?;
    let (cal, _) = ctx.config.models()?;
    let noise = ctx.config.noise();
    let r = estimate_compliance(&plan, &meas, &cal, Some(&noise))?;
    let report = IdentifyReport {
        experiments: plan.len(),
        sigma_mm: noise.sigma,
        joints: plan.joints.clone(),
        k_hat: r.k_hat.values.iter().copied().collect(),
        standard_errors: r.standard_errors().map(|s| s.iter().copied().collect()),
        residual_norm_mm: r.residual_norm,
    };
    report_line(&emit(&report, ctx.format, ctx.out_dir(), "identify")?);
    Ok(())
}

#[derive(Serialize)]
struct CompensateReport {
    q0_deg: [f64; 6],
    wrench: [f64; 6],
    k_hat: Vec<f64>,
    q_deg: [f64; 6],
    delta_deg: [f64; 6],
}

impl Report for CompensateReport {
    fn csv(&self) -> String {
        let mut out = csv_line(&["joint", "q0_deg", "q_deg", "delta_deg"].map(String::from));
        for j in 0..6 {
            out += &csv_line(&[
                (j + 1).to_string(),
                self.q0_deg[j].to_string(),
                self.q_deg[j].to_string(),
                self.delta_deg[j].to_string(),
            ]);
        }
        out
    }

    fn text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Compliance error compensation");
        let labels: Vec<String> = (1..=6).map(|j| format!("q{j}")).collect();
        table_row(&mut out, "[deg]", &labels);
        let fmt = |v: &[f64; 6], p: usize| v.iter().map(|x| format!("{x:.p$}")).collect::<Vec<_>>();
        table_row(&mut out, "nominal", &fmt(&self.q0_deg, 4));
        table_row(&mut out, "compensated", &fmt(&self.q_deg, 4));
        table_row(&mut out, "correction", &fmt(&self.delta_deg, 6));
        out
    }
}

pub fn compensate_cmd(ctx: &Context) -> Result<(), CliError> {
    let (_, mach) = ctx.config.models()?;
    let k = match &ctx.compliance {
        Some(p) => ComplianceFile::load(p)?.to_full_vector()?,
        None => ctx.config.k_true(),
    };
    let q0 = JointConfiguration::from_degrees(ctx.config.test_pose_deg);
    let w = Wrench::from_array(ctx.config.test_wrench);
    let q = compensate(&mach, &q0, &w, &k)?;
    let q_deg = q.to_degrees();
    let mut delta_deg = [0.0; 6];
    for j in 0..6 {
        delta_deg[j] = (q.0[j] - q0.0[j]).to_degrees();
    }
    let report = CompensateReport {
        q0_deg: ctx.config.test_pose_deg,
        wrench: ctx.config.test_wrench,
        k_hat: k.values.iter().copied().collect(),
        q_deg,
        delta_deg,
    };
    report_line(&emit(&report, ctx.format, ctx.out_dir(), "compensate")?);
    Ok(())
}

#[derive(Serialize)]
struct CompareReport {
    m: usize,
    sigma_mm: f64,
    designed_rho0_mm: f64,
    designed_plan: PlanFile,
    random_rho0_mm: Vec<f64>,
    random_mean_mm: f64,
    random_median_mm: f64,
    /// Random plans skipped because they could not identify every joint.
    singular_random_plans: usize,
    /// 1 − designed / random mean.
    reduction: f64,
}

impl Report for CompareReport {
    fn csv(&self) -> String {
        let mut out = csv_line(&["plan", "rho0_mm"].map(String::from));
        out += &csv_line(&["designed".into(), self.designed_rho0_mm.to_string()]);
        for (i, r) in self.random_rho0_mm.iter().enumerate() {
            out += &csv_line(&[format!("random_{}", i + 1), r.to_string()]);
        }
        out
    }

    fn text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Designed versus random plans, m = {}, sigma = {} mm ({} random plans, {} singular skipped)",
            self.m,
            self.sigma_mm,
            self.random_rho0_mm.len(),
            self.singular_random_plans
        );
        let _ = writeln!(out, "rho0 [mm x 10^-3]");
        let _ = writeln!(out, "  designed      {}", micro_mm(self.designed_rho0_mm));
        let _ = writeln!(out, "  random mean   {}", micro_mm(self.random_mean_mm));
        let _ = writeln!(out, "  random median {}", micro_mm(self.random_median_mm));
        let _ = writeln!(out, "reduction: {:.1}%", 100.0 * self.reduction);
        let _ = writeln!(out, "random rho0 values: {}", joined(&self.random_rho0_mm, micro_mm));
        out
    }
}

pub fn compare(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let (cal, mach) = cfg.models()?;
    let joints = cfg.joint_set();
    let tp = cfg.test_pose(&mach, joints.clone());
    let noise = cfg.noise();
    let designed = ctx.run_design()?;

    let wrench = Wrench::from_array(cfg.calibration_wrench);
    let mut random = Vec::with_capacity(cfg.random_plans);
    let mut singular = 0;
    let mut seed = cfg.seed;
    // Bounded so that a model on which random plans are never identifiable still terminates.
    let budget = 100 * cfg.random_plans.max(1);
    while random.len() < cfg.random_plans && singular < budget {
        seed = seed.wrapping_add(1);
        let plan = random_plan(&cal, &cfg.constraints(), cfg.m, wrench, joints.clone(), seed, DEFAULT_SAMPLE_ATTEMPTS)?;
        match test_pose_criterion(&plan, &tp, &cal, &noise) {
            Ok(s) => random.push(s.rho0),
            Err(e) if e.is_numerical() => singular += 1,
            Err(e) => return Err(e.into()),
        }
    }
    if random.is_empty() {
        return Err(elastocal::Error::SamplingExhausted { attempts: singular }.into());
    }
    let mean = random.iter().sum::<f64>() / random.len() as f64;
    let mut sorted = random.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 0 {
        0.5 * (sorted[mid - 1] + sorted[mid])
    } else {
        sorted[mid]
    };
    let report = CompareReport {
        m: cfg.m,
        sigma_mm: noise.sigma,
        designed_rho0_mm: designed.rho0,
        designed_plan: designed.plan_file.clone(),
        random_rho0_mm: random,
        random_mean_mm: mean,
        random_median_mm: median,
        singular_random_plans: singular,
        reduction: 1.0 - designed.rho0 / mean,
    };
    report_line(&emit(&report, ctx.format, ctx.out_dir(), "compare")?);
    Ok(())
}
