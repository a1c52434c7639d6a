//! Experiment plumbing shared by the command-line tool and the acceptance
//! suite: graph construction from a dataset, single trials, seeded batch
//! evaluation, CSV and summary tables, and top-down SVG plots.

use std::fmt::Write as _;

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{
    odometry_covariance, BBoxFactor, FactorGraph, NoiseModel, OdometryFactor, PriorFactor, QuadricUpdate, RelPosFactor,
    Values,
};
use crate::geometry::{DualQuadric, RobotPose};
use crate::init::{init_poses, init_quadric, InitStrategy};
use crate::metrics::{rmse_lm_with, rmse_pos_with, rmse_volume, ErrorNorm, Mode, TrialResult};
use crate::simulator::{generate_dataset, Dataset, SensorConfig, WorldConfig};
use crate::solver::{solve, solve_with, FreeVariables, SolveReport, SolverConfig};

/// Standard deviations assumed by the factors. Odometry and relative
/// position default to the dataset's own sensor noise, floored at
/// `sigma_floor` so that noise-free data still gives finite weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorNoiseConfig {
    pub prior_sigma: f64,
    pub odo_sigma_v: Option<f64>,
    pub odo_sigma_omega: Option<f64>,
    pub odo_turn_sigma_omega: Option<f64>,
    /// Isotropic planar term added to the odometry covariance, as a
    /// fraction of the forward standard deviation.
    pub odo_lateral_fraction: f64,
    pub sigma_floor: f64,
    /// Per-line standard deviation of the tangency residual. One pixel of
    /// line offset moves the residual by roughly `2·Z·ρ·f`, a few thousand
    /// units at the simulated ranges.
    pub bbox_sigma: f64,
    pub relpos_sigma: Option<f64>,
    pub quadric_update: QuadricUpdate,
}

impl Default for FactorNoiseConfig {
    fn default() -> Self {
        Self {
            prior_sigma: 1e-6,
            odo_sigma_v: None,
            odo_sigma_omega: None,
            odo_turn_sigma_omega: None,
            odo_lateral_fraction: 0.05,
            sigma_floor: 1e-6,
            bbox_sigma: 1e4,
            relpos_sigma: None,
            quadric_update: QuadricUpdate::Centered,
        }
    }
}

/// [`FactorNoiseConfig`] with the sensor defaults filled in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedNoise {
    pub prior_sigma: f64,
    pub odo_sigma_v: f64,
    pub odo_sigma_omega: f64,
    pub odo_turn_sigma_omega: f64,
    pub odo_sigma_lateral: f64,
    pub bbox_sigma: f64,
    pub relpos_sigma: f64,
}

impl FactorNoiseConfig {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("prior-sigma", Some(self.prior_sigma)),
            ("factor-odo-sigma-v", self.odo_sigma_v),
            ("factor-odo-sigma-omega", self.odo_sigma_omega),
            ("factor-odo-turn-sigma-omega", self.odo_turn_sigma_omega),
            ("factor-odo-lateral-fraction", Some(self.odo_lateral_fraction)),
            ("factor-sigma-floor", Some(self.sigma_floor)),
            ("factor-bbox-sigma", Some(self.bbox_sigma)),
            ("factor-relpos-sigma", self.relpos_sigma),
        ];
        for (name, v) in named {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::invalid(name, format!("must be positive, got {v}")));
                }
            }
        }
        Ok(())
    }

    pub fn resolve(&self, sensor: &SensorConfig) -> ResolvedNoise {
        let floor = |v: f64| v.max(self.sigma_floor);
        let odo_sigma_v = floor(self.odo_sigma_v.unwrap_or(sensor.odo_sigma));
        ResolvedNoise {
            prior_sigma: self.prior_sigma,
            odo_sigma_v,
            odo_sigma_omega: floor(self.odo_sigma_omega.unwrap_or(sensor.odo_sigma)),
            odo_turn_sigma_omega: floor(self.odo_turn_sigma_omega.unwrap_or(sensor.odo_turn_omega_sigma)),
            odo_sigma_lateral: self.odo_lateral_fraction * odo_sigma_v,
            bbox_sigma: self.bbox_sigma,
            relpos_sigma: floor(self.relpos_sigma.unwrap_or(sensor.relpos_sigma_m)),
        }
    }
}

/// Order of the solves in a trial.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// One solve over all variables.
    Joint,
    /// Quadrics alone with the poses held at their initial values, then
    /// all variables.
    #[default]
    LandmarksFirst,
}

/// Everything a trial needs besides the seed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialConfig {
    pub world: WorldConfig,
    pub sensor: SensorConfig,
    pub factors: FactorNoiseConfig,
    pub init: InitStrategy,
    pub solver: SolverConfig,
    pub schedule: Schedule,
    pub error_norm: ErrorNorm,
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.sensor.validate()?;
        self.factors.validate()?;
        self.init.validate()?;
        self.solver.validate()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { world: WorldConfig { seed, ..self.world }, ..*self }
    }
}

/// A graph ready to solve, with the initial guess it holds.
#[derive(Clone, Debug)]
pub struct BuiltGraph {
    pub graph: FactorGraph,
    /// Landmarks whose quadric started from the identity fallback.
    pub fallback: Vec<bool>,
}

/// Builds the factor graph of `dataset` for `mode`. Poses start from
/// chained odometry anchored at the first ground-truth pose; quadrics start
/// per `init`.
pub fn build_graph(
    dataset: &Dataset,
    mode: Mode,
    noise: &FactorNoiseConfig,
    init: &InitStrategy,
) -> Result<BuiltGraph> {
    noise.validate()?;
    init.validate()?;
    let sigma = noise.resolve(&dataset.sensor_config);
    let anchor = dataset.ground_truth[0];
    let poses = init_poses(&dataset.odometry_measurements(), anchor);
    let k = dataset.intrinsics();
    let mount = dataset.mount();
    let detections = dataset.bbox_detections()?;

    let mut quadrics = Vec::with_capacity(dataset.landmarks.len());
    let mut fallback = Vec::with_capacity(dataset.landmarks.len());
    for lm in &dataset.landmarks {
        let mine: Vec<_> = detections.iter().filter(|d| d.landmark_id == lm.id).copied().collect();
        let (q, fb) = init_quadric(init, &mine, &poses, &k, &mount)?;
        quadrics.push(q);
        fallback.push(fb);
    }

    let mut graph = FactorGraph::new(Values { poses, quadrics }, k, mount);
    graph.set_quadric_update(noise.quadric_update);
    graph.add_prior(PriorFactor { pose_index: 0, anchor, noise: NoiseModel::isotropic(3, sigma.prior_sigma)? })?;
    for (i, step) in dataset.odometry.iter().enumerate() {
        let sigma_omega = if step.turn { sigma.odo_turn_sigma_omega } else { sigma.odo_sigma_omega };
        let cov = odometry_covariance(&step.measurement, sigma.odo_sigma_v, sigma_omega, sigma.odo_sigma_lateral);
        graph.add_odometry(OdometryFactor { pose_index: i, measurement: step.measurement, noise: NoiseModel::new(cov)? })?;
    }
    let bbox_noise = NoiseModel::isotropic(4, sigma.bbox_sigma)?;
    for d in detections {
        graph.add_bbox(BBoxFactor { detection: d, noise: bbox_noise.clone() })?;
    }
    if mode == Mode::WithRelpos {
        let relpos_noise = NoiseModel::isotropic(3, sigma.relpos_sigma)?;
        for m in &dataset.relpos {
            graph.add_relpos(RelPosFactor { measurement: *m, noise: relpos_noise.clone() })?;
        }
    }
    Ok(BuiltGraph { graph, fallback })
}

/// Graph of `dataset` with every variable set to its ground truth
/// (inscribed-sphere quadrics).
pub fn ground_truth_graph(dataset: &Dataset, mode: Mode, noise: &FactorNoiseConfig) -> Result<FactorGraph> {
    let mut g = build_graph(dataset, mode, noise, &InitStrategy::default())?.graph;
    g.set_values(ground_truth_values(dataset))?;
    Ok(g)
}

pub fn ground_truth_values(dataset: &Dataset) -> Values {
    Values {
        poses: dataset.ground_truth.clone(),
        quadrics: dataset.landmarks.iter().map(|lm| lm.inscribed_quadric()).collect(),
    }
}

/// Full outcome of one solve.
#[derive(Clone, Debug)]
pub struct TrialOutcome {
    pub result: TrialResult,
    pub initial: Values,
    pub estimate: Values,
    /// Report of the last solve, with `iterations` and `initial_cost`
    /// covering the whole schedule.
    pub report: SolveReport,
    pub stages: Vec<SolveReport>,
    pub fallback: Vec<bool>,
}

/// Builds, solves and scores one dataset in one mode.
pub fn run_trial(dataset: &Dataset, mode: Mode, cfg: &TrialConfig) -> Result<TrialOutcome> {
    let built = build_graph(dataset, mode, &cfg.factors, &cfg.init)?;
    let initial = built.graph.values().clone();
    let mut graph = built.graph;
    let mut stages = Vec::new();
    if cfg.schedule == Schedule::LandmarksFirst && !graph.values().quadrics.is_empty() {
        let (v, r) = solve_with(&graph, &cfg.solver, FreeVariables::QuadricsOnly)?;
        graph.set_values(v)?;
        stages.push(r);
    }
    let (estimate, last) = solve(&graph, &cfg.solver)?;
    stages.push(last);
    let report = SolveReport {
        iterations: stages.iter().map(|r| r.iterations).sum(),
        initial_cost: stages[0].initial_cost,
        ..last
    };
    let norm = cfg.error_norm;
    let volume = match rmse_volume(&estimate.quadrics, &dataset.landmarks) {
        Ok(v) => Some(v),
        Err(Error::NoValidVolumes) => None,
        Err(e) => return Err(e),
    };
    let result = TrialResult {
        seed: dataset.seed,
        mode,
        rmse_pos_init: rmse_pos_with(&initial.poses, &dataset.ground_truth, norm)?,
        rmse_pos_slam: rmse_pos_with(&estimate.poses, &dataset.ground_truth, norm)?,
        rmse_lm: rmse_lm_with(&estimate.quadrics, &dataset.landmarks, norm)?,
        rmse_volume: volume.as_ref().map(|v| v.mean),
        volume_invalid: volume.map(|v| v.invalid).unwrap_or_else(|| vec![true; dataset.landmarks.len()]),
        iterations: report.iterations,
        final_cost: report.final_cost,
        converged: report.converged,
    };
    Ok(TrialOutcome { result, initial, estimate, report, stages, fallback: built.fallback })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub seed: u64,
    /// `None` when the dataset itself could not be generated.
    pub mode: Option<Mode>,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Evaluation {
    /// Ordered by seed, then mode.
    pub results: Vec<TrialResult>,
    pub failures: Vec<TrialFailure>,
}

/// Seed of trial `i`.
pub fn trial_seed(base_seed: u64, i: usize) -> u64 {
    base_seed.wrapping_add(i as u64)
}

/// Runs `n_trials` seeds through simulation, solving and scoring in every
/// requested mode on a pool of `jobs` workers (0 = available parallelism).
/// Both modes share one dataset per seed. Output order and content do not
/// depend on the pool width.
pub fn evaluate(cfg: &TrialConfig, n_trials: usize, base_seed: u64, modes: &[Mode], jobs: usize) -> Result<Evaluation> {
    cfg.validate()?;
    if n_trials == 0 {
        return Err(Error::invalid("n-trials", "must be positive"));
    }
    if modes.is_empty() {
        return Err(Error::invalid("modes", "at least one mode is required"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid("jobs", e.to_string()))?;
    let per_seed: Vec<Vec<std::result::Result<TrialResult, TrialFailure>>> = pool.install(|| {
        (0..n_trials)
            .into_par_iter()
            .map(|i| {
                let seed = trial_seed(base_seed, i);
                let c = cfg.with_seed(seed);
                let dataset = match generate_dataset(&c.world, &c.sensor) {
                    Ok(d) => d,
                    Err(e) => return vec![Err(TrialFailure { seed, mode: None, message: e.to_string() })],
                };
                modes
                    .iter()
                    .map(|&mode| {
                        run_trial(&dataset, mode, &c)
                            .map(|o| o.result)
                            .map_err(|e| TrialFailure { seed, mode: Some(mode), message: e.to_string() })
                    })
                    .collect()
            })
            .collect()
    });
    let mut out = Evaluation::default();
    for r in per_seed.into_iter().flatten() {
        match r {
            Ok(t) => out.results.push(t),
            Err(f) => out.failures.push(f),
        }
    }
    Ok(out)
}

/// Column order of the per-trial CSV.
pub const CSV_HEADER: &str =
    "seed,mode,rmse_pos_init,rmse_pos_slam,rmse_lm,rmse_volume,volume_invalid_count,iterations,final_cost";

/// Fixed-point decimal with at least nine significant digits.
pub fn format_decimal(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if v == 0.0 {
        return format!("{:.9}", 0.0);
    }
    let magnitude = v.abs().log10().floor() as i64;
    let decimals = (8 - magnitude).clamp(0, 400) as usize;
    format!("{v:.decimals$}")
}

pub fn results_csv(results: &[TrialResult]) -> String {
    let mut s = String::new();
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in results {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.seed,
            r.mode,
            format_decimal(r.rmse_pos_init),
            format_decimal(r.rmse_pos_slam),
            format_decimal(r.rmse_lm),
            r.rmse_volume.map(format_decimal).unwrap_or_default(),
            r.volume_invalid_count(),
            r.iterations,
            format_decimal(r.final_cost),
        );
    }
    s
}

/// Text table with the initial and SLAM columns per mode.
pub fn summary_table(summaries: &[crate::metrics::ModeSummary]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<12} {:>6} | {:>10} {:>10} | {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} | {:>8}",
        "mode", "trials", "init avg", "init med", "pos avg", "pos med", "lm avg", "lm med", "vol avg", "vol med", "vol inv"
    );
    for m in summaries {
        let (va, vm) = m
            .rmse_volume
            .map(|v| (format!("{:.4}", v.avg), format!("{:.4}", v.med)))
            .unwrap_or_else(|| ("-".into(), "-".into()));
        let _ = writeln!(
            s,
            "{:<12} {:>6} | {:>10.4} {:>10.4} | {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10} {:>10} | {:>8}",
            m.mode.as_str(),
            m.trials,
            m.rmse_pos_init.avg,
            m.rmse_pos_init.med,
            m.rmse_pos_slam.avg,
            m.rmse_pos_slam.med,
            m.rmse_lm.avg,
            m.rmse_lm.med,
            va,
            vm,
            m.volume_invalid_count,
        );
    }
    s
}

/// Top-down plot of the initial (blue), ground-truth (green) and optimized
/// (red) trajectories, with one marker per landmark in each set.
pub fn trajectory_svg(
    ground_truth: &[RobotPose],
    gt_landmarks: &[nalgebra::Vector3<f64>],
    initial: &Values,
    estimate: &Values,
) -> String {
    let sets: [(&str, Vec<Vector2<f64>>, Vec<Vector2<f64>>); 3] = [
        ("initial", initial.poses.iter().map(RobotPose::position).collect(), centroids(&initial.quadrics)),
        (
            "ground-truth",
            ground_truth.iter().map(RobotPose::position).collect(),
            gt_landmarks.iter().map(|c| c.xy()).collect(),
        ),
        ("slam", estimate.poses.iter().map(RobotPose::position).collect(), centroids(&estimate.quadrics)),
    ];
    let colors = ["blue", "green", "red"];

    let finite: Vec<&Vector2<f64>> = sets
        .iter()
        .flat_map(|(_, t, l)| t.iter().chain(l.iter()))
        .filter(|p| p.x.is_finite() && p.y.is_finite())
        .collect();
    let (mut lo, mut hi) = (Vector2::repeat(f64::INFINITY), Vector2::repeat(f64::NEG_INFINITY));
    for p in &finite {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    if finite.is_empty() {
        lo = Vector2::zeros();
        hi = Vector2::repeat(1.0);
    }
    let margin = 1.0;
    lo -= Vector2::repeat(margin);
    hi += Vector2::repeat(margin);
    let size = 800.0;
    let scale = size / (hi.x - lo.x).max(hi.y - lo.y);
    let map = |p: &Vector2<f64>| {
        let x = if p.x.is_finite() { p.x } else { lo.x };
        let y = if p.y.is_finite() { p.y } else { lo.y };
        ((x - lo.x) * scale, size - (y - lo.y) * scale)
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for ((name, traj, _), color) in sets.iter().zip(colors) {
        let pts: Vec<String> = traj
            .iter()
            .map(|p| {
                let (x, y) = map(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="{name}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
    }
    for ((name, _, lms), color) in sets.iter().zip(colors) {
        for c in lms {
            let (x, y) = map(c);
            let _ = writeln!(s, r#"<circle class="landmark {name}" cx="{x:.2}" cy="{y:.2}" r="4" fill="{color}"/>"#);
        }
    }
    s.push_str("</svg>\n");
    s
}

fn centroids(q: &[DualQuadric]) -> Vec<Vector2<f64>> {
    q.iter().map(|q| q.centroid().xy()).collect()
}

/// Record of one command invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: TrialConfig,
    pub seeds: Vec<u64>,
    /// Modes evaluated, when the command runs more than one trial.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub modes: Vec<Mode>,
    pub artifacts: Vec<Artifact>,
    pub timings: Vec<Timing>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub kind: String,
    pub path: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub label: String,
    pub seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str, config: TrialConfig) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            seeds: Vec::new(),
            modes: Vec::new(),
            artifacts: Vec::new(),
            timings: Vec::new(),
        }
    }

    pub fn artifact(&mut self, kind: &str, path: impl Into<String>) {
        self.artifacts.push(Artifact { kind: kind.to_string(), path: path.into() });
    }

    pub fn timing(&mut self, label: &str, seconds: f64) {
        self.timings.push(Timing { label: label.to_string(), seconds });
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_formatting() {
        assert_eq!(format_decimal(0.0), "0.000000000");
        assert_eq!(format_decimal(1.5), "1.50000000");
        assert_eq!(format_decimal(1234.5), "1234.50000");
        assert_eq!(format_decimal(1e-5), "0.0000100000000");
        assert_eq!(format_decimal(123456789012.0), "123456789012");
        assert!(!format_decimal(3.2e-7).contains('e'));
    }

    #[test]
    fn noise_config_names_flag() {
        let bad = FactorNoiseConfig { bbox_sigma: 0.0, ..Default::default() };
        assert!(matches!(bad.validate(), Err(Error::InvalidParameter { name: "factor-bbox-sigma", .. })));
    }

    #[test]
    fn csv_has_fixed_header() {
        let csv = results_csv(&[]);
        assert_eq!(csv, format!("{CSV_HEADER}\n"));
    }
}
