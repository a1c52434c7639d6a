use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use quadslam::harness::{Schedule, TrialConfig};
use quadslam::factors::QuadricUpdate;
use quadslam::init::InitMode;
use quadslam::metrics::{ErrorNorm, Mode};
use quadslam::simulator::LandmarkShape;

#[derive(Parser, Debug)]
#[command(name = "quadslam", version, about = "Simulate, solve and evaluate planar SLAM with dual-quadric landmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate one simulated dataset.
    Simulate(SimulateArgs),
    /// Solve one dataset in one mode.
    Solve(SolveArgs),
    /// Run a seeded batch of trials in both modes.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
pub struct SimulateArgs {
    /// Dataset file to write.
    #[arg(short, long)]
    pub output: PathBuf,
    /// World seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run manifest to write [default: <output>.manifest.json]
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Trial configuration or run manifest (JSON) used as the base; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub world: WorldArgs,
    #[command(flatten)]
    pub sensor: SensorArgs,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
pub struct SolveArgs {
    /// Dataset file to read.
    #[arg(short, long)]
    pub dataset: PathBuf,
    /// Results file (JSON) to write.
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Monocular)]
    pub mode: ModeArg,
    /// Top-down trajectory plot to write.
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Run manifest to write [default: <output>.manifest.json]
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Trial configuration or run manifest (JSON) used as the base; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub estimation: EstimationArgs,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
pub struct EvaluateArgs {
    /// Directory for the CSV, summaries and manifest.
    #[arg(short, long)]
    pub output_dir: PathBuf,
    /// Number of seeds, taken from --config when it is a run manifest [default: 50]
    #[arg(long)]
    pub n_trials: Option<usize>,
    /// Seed of the first trial; trial i uses base-seed + i [default: 0]
    #[arg(long)]
    pub base_seed: Option<u64>,
    /// Modes to run [default: both]
    #[arg(long, value_enum)]
    pub modes: Option<ModesArg>,
    /// Worker threads, 0 for all available cores.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Trial configuration or run manifest (JSON) used as the base; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub world: WorldArgs,
    #[command(flatten)]
    pub sensor: SensorArgs,
    #[command(flatten)]
    pub estimation: EstimationArgs,
}

/// World layout. Defaults reproduce the reference simulation setup.
#[derive(Args, Debug, Default)]
#[command(next_help_heading = "World")]
pub struct WorldArgs {
    /// Number of cube landmarks [default: 10]
    #[arg(long)]
    pub n_landmarks: Option<usize>,
    /// Std. dev. of landmark height about the camera plane, m [default: 0.3]
    #[arg(long)]
    pub landmark_z_sigma: Option<f64>,
    /// Mean cube side, m [default: 0.5]
    #[arg(long)]
    pub cube_side_mean: Option<f64>,
    /// Std. dev. of the cube side, m [default: 0.3]
    #[arg(long)]
    pub cube_side_sigma: Option<f64>,
    /// Smallest cube side, m [default: 0.2]
    #[arg(long)]
    pub cube_side_floor: Option<f64>,
    /// Total path length, m [default: 130]
    #[arg(long)]
    pub trajectory_length: Option<f64>,
    /// Loops around the route [default: 2]
    #[arg(long)]
    pub n_loops: Option<usize>,
    /// Distance per odometry step, m [default: 0.5]
    #[arg(long)]
    pub step_length: Option<f64>,
    /// Steps per 90 degree corner [default: 4]
    #[arg(long)]
    pub turn_steps: Option<usize>,
    /// Closest allowed landmark distance from the route, m [default: 1]
    #[arg(long)]
    pub lateral_offset_min: Option<f64>,
    /// Farthest landmark distance from the route, m [default: 6]
    #[arg(long)]
    pub lateral_offset_max: Option<f64>,
    /// Detections each landmark needs to be kept [default: 3]
    #[arg(long)]
    pub min_observations: Option<usize>,
    /// Landmark body used for rendering boxes [default: cube]
    #[arg(long, value_enum)]
    pub landmark_shape: Option<ShapeArg>,
}

/// Camera and measurement noise. Defaults reproduce the reference simulation setup.
#[derive(Args, Debug, Default)]
#[command(next_help_heading = "Sensor")]
pub struct SensorArgs {
    /// Focal length, mm [default: 15]
    #[arg(long)]
    pub focal_mm: Option<f64>,
    /// Pixel pitch, m [default: 10e-6]
    #[arg(long)]
    pub pixel_size_m: Option<f64>,
    /// Image width, px [default: 1280]
    #[arg(long)]
    pub image_width: Option<u32>,
    /// Image height, px [default: 1024]
    #[arg(long)]
    pub image_height: Option<u32>,
    /// Minimum box width and height for a detection, px [default: 100]
    #[arg(long)]
    pub detection_min_px: Option<f64>,
    /// Std. dev. of each box corner coordinate, px [default: 1]
    #[arg(long, visible_alias = "bbox-corner-sigma-px")]
    pub bbox_sigma: Option<f64>,
    /// Std. dev. of odometry v, and of omega on straight steps [default: 0.02]
    #[arg(long)]
    pub odo_sigma: Option<f64>,
    /// Std. dev. of omega during turns, rad [default: 0.1, or 0 when --odo-sigma is 0]
    #[arg(long)]
    pub odo_turn_omega_sigma: Option<f64>,
    /// Std. dev. of each relative-position axis, m [default: 0.1]
    #[arg(long, visible_alias = "relpos-sigma-m")]
    pub relpos_sigma: Option<f64>,
}

#[derive(Args, Debug, Default)]
#[command(next_help_heading = "Estimation")]
pub struct EstimationArgs {
    /// Quadric initialization [default: identity]
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    /// SVD fits need sigma_min / sigma_second below this [default: 0.1]
    #[arg(long)]
    pub condition_threshold: Option<f64>,
    /// Solve order [default: landmarks-first]
    #[arg(long, value_enum)]
    pub schedule: Option<ScheduleArg>,
    /// Per-solve iteration limit [default: 100]
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Starting damping [default: 1e-4]
    #[arg(long)]
    pub initial_lambda: Option<f64>,
    /// Damping factor after a rejected step [default: 10]
    #[arg(long)]
    pub lambda_up: Option<f64>,
    /// Damping factor after an accepted step [default: 0.1]
    #[arg(long)]
    pub lambda_down: Option<f64>,
    /// Relative cost decrease that counts as converged [default: 1e-8]
    #[arg(long)]
    pub rel_cost_tol: Option<f64>,
    /// Gradient max-norm that counts as converged [default: 1e-10]
    #[arg(long)]
    pub grad_tol: Option<f64>,
    /// Std. dev. of the anchor prior on the first pose [default: 1e-6]
    #[arg(long)]
    pub prior_sigma: Option<f64>,
    /// Odometry factor std. dev. of v [default: the dataset's odo-sigma]
    #[arg(long)]
    pub factor_odo_sigma_v: Option<f64>,
    /// Odometry factor std. dev. of omega on straight steps [default: the dataset's odo-sigma]
    #[arg(long)]
    pub factor_odo_sigma_omega: Option<f64>,
    /// Odometry factor std. dev. of omega in turns [default: the dataset's odo-turn-omega-sigma]
    #[arg(long)]
    pub factor_odo_turn_sigma_omega: Option<f64>,
    /// Lateral odometry std. dev. as a fraction of the v std. dev. [default: 0.05]
    #[arg(long)]
    pub factor_odo_lateral_fraction: Option<f64>,
    /// Lower bound for std. devs. taken from the dataset [default: 1e-6]
    #[arg(long)]
    pub factor_sigma_floor: Option<f64>,
    /// Std. dev. of each tangency residual [default: 1e4]
    #[arg(long)]
    pub factor_bbox_sigma: Option<f64>,
    /// Relative-position factor std. dev., m [default: the dataset's relpos-sigma]
    #[arg(long)]
    pub factor_relpos_sigma: Option<f64>,
    /// Quadric step rule [default: centered]
    #[arg(long, value_enum)]
    pub quadric_update: Option<QuadricUpdateArg>,
    /// Error norm of the RMSE metrics [default: mean-distance]
    #[arg(long, value_enum)]
    pub error_norm: Option<ErrorNormArg>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Monocular,
    WithRelpos,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Monocular => Mode::Monocular,
            ModeArg::WithRelpos => Mode::WithRelpos,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModesArg {
    Both,
    Monocular,
    WithRelpos,
}

impl ModesArg {
    pub fn modes(self) -> Vec<Mode> {
        match self {
            ModesArg::Both => Mode::ALL.to_vec(),
            ModesArg::Monocular => vec![Mode::Monocular],
            ModesArg::WithRelpos => vec![Mode::WithRelpos],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ShapeArg {
    Cube,
    Sphere,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Identity,
    Svd,
    SvdWithFallback,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScheduleArg {
    Joint,
    LandmarksFirst,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum QuadricUpdateArg {
    Additive,
    Centered,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ErrorNormArg {
    MeanDistance,
    Rms,
}

fn set<T>(dst: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *dst = v;
    }
}

impl WorldArgs {
    pub fn apply(&self, cfg: &mut TrialConfig) {
        let w = &mut cfg.world;
        set(&mut w.n_landmarks, self.n_landmarks);
        set(&mut w.landmark_z_sigma, self.landmark_z_sigma);
        set(&mut w.cube_side_mean, self.cube_side_mean);
        set(&mut w.cube_side_sigma, self.cube_side_sigma);
        set(&mut w.cube_side_floor, self.cube_side_floor);
        set(&mut w.trajectory_length, self.trajectory_length);
        set(&mut w.n_loops, self.n_loops);
        set(&mut w.step_length, self.step_length);
        set(&mut w.turn_steps, self.turn_steps);
        set(&mut w.lateral_offset_min, self.lateral_offset_min);
        set(&mut w.lateral_offset_max, self.lateral_offset_max);
        set(&mut w.min_observations, self.min_observations);
        set(
            &mut w.landmark_shape,
            self.landmark_shape.map(|s| match s {
                ShapeArg::Cube => LandmarkShape::Cube,
                ShapeArg::Sphere => LandmarkShape::Sphere,
            }),
        );
    }
}

impl SensorArgs {
    pub fn apply(&self, cfg: &mut TrialConfig) {
        let s = &mut cfg.sensor;
        set(&mut s.focal_mm, self.focal_mm);
        set(&mut s.pixel_size_m, self.pixel_size_m);
        set(&mut s.image_width, self.image_width);
        set(&mut s.image_height, self.image_height);
        set(&mut s.detection_min_px, self.detection_min_px);
        set(&mut s.bbox_corner_sigma_px, self.bbox_sigma);
        set(&mut s.odo_sigma, self.odo_sigma);
        set(&mut s.odo_turn_omega_sigma, self.odo_turn_omega_sigma);
        // Switching odometry noise off also silences the turns unless they
        // are given explicitly.
        if self.odo_sigma == Some(0.0) && self.odo_turn_omega_sigma.is_none() {
            s.odo_turn_omega_sigma = 0.0;
        }
        set(&mut s.relpos_sigma_m, self.relpos_sigma);
    }
}

impl EstimationArgs {
    pub fn apply(&self, cfg: &mut TrialConfig) {
        set(
            &mut cfg.init.mode,
            self.init.map(|m| match m {
                InitArg::Identity => InitMode::Identity,
                InitArg::Svd => InitMode::Svd,
                InitArg::SvdWithFallback => InitMode::SvdWithFallback,
            }),
        );
        set(&mut cfg.init.condition_threshold, self.condition_threshold);
        set(
            &mut cfg.schedule,
            self.schedule.map(|s| match s {
                ScheduleArg::Joint => Schedule::Joint,
                ScheduleArg::LandmarksFirst => Schedule::LandmarksFirst,
            }),
        );
        let s = &mut cfg.solver;
        set(&mut s.max_iterations, self.max_iterations);
        set(&mut s.initial_lambda, self.initial_lambda);
        set(&mut s.lambda_up, self.lambda_up);
        set(&mut s.lambda_down, self.lambda_down);
        set(&mut s.rel_cost_tol, self.rel_cost_tol);
        set(&mut s.grad_tol, self.grad_tol);
        let f = &mut cfg.factors;
        set(&mut f.prior_sigma, self.prior_sigma);
        if self.factor_odo_sigma_v.is_some() {
            f.odo_sigma_v = self.factor_odo_sigma_v;
        }
        if self.factor_odo_sigma_omega.is_some() {
            f.odo_sigma_omega = self.factor_odo_sigma_omega;
        }
        if self.factor_odo_turn_sigma_omega.is_some() {
            f.odo_turn_sigma_omega = self.factor_odo_turn_sigma_omega;
        }
        set(&mut f.odo_lateral_fraction, self.factor_odo_lateral_fraction);
        set(&mut f.sigma_floor, self.factor_sigma_floor);
        set(&mut f.bbox_sigma, self.factor_bbox_sigma);
        if self.factor_relpos_sigma.is_some() {
            f.relpos_sigma = self.factor_relpos_sigma;
        }
        set(
            &mut f.quadric_update,
            self.quadric_update.map(|u| match u {
                QuadricUpdateArg::Additive => QuadricUpdate::Additive,
                QuadricUpdateArg::Centered => QuadricUpdate::Centered,
            }),
        );
        set(
            &mut cfg.error_norm,
            self.error_norm.map(|n| match n {
                ErrorNormArg::MeanDistance => ErrorNorm::MeanDistance,
                ErrorNormArg::Rms => ErrorNorm::Rms,
            }),
        );
    }
}
