mod args;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use quadslam::harness::{
    evaluate, results_csv, run_trial, summary_table, trajectory_svg, RunManifest, TrialConfig, TrialOutcome,
};
use quadslam::metrics::{aggregate, Mode};
use quadslam::simulator::{generate_dataset, Dataset};
use serde_json::json;

use args::{Cli, Command, EvaluateArgs, SimulateArgs, SolveArgs};

/// Exit status for bad input, as opposed to a run that completed with failures.
const EXIT_USAGE: u8 = 2;

type CliResult<T> = Result<T, String>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command_line = std::env::args().collect::<Vec<_>>().join(" ");
    let outcome = match &cli.command {
        Command::Simulate(a) => simulate(a, &command_line),
        Command::Solve(a) => solve(a, &command_line),
        Command::Evaluate(a) => run_evaluate(a, &command_line),
    };
    match outcome {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn load_config(path: Option<&PathBuf>) -> CliResult<TrialConfig> {
    load_base(path).map(|(cfg, _)| cfg)
}

/// Configuration from a trial configuration or run manifest file, plus the
/// manifest itself in the latter case.
fn load_base(path: Option<&PathBuf>) -> CliResult<(TrialConfig, Option<RunManifest>)> {
    let Some(path) = path else {
        return Ok((TrialConfig::default(), None));
    };
    let text = read(path)?;
    if let Ok(cfg) = serde_json::from_str::<TrialConfig>(&text) {
        return Ok((cfg, None));
    }
    RunManifest::from_json(&text)
        .map(|m| (m.config, Some(m)))
        .map_err(|e| format!("{}: neither a trial configuration nor a run manifest ({e})", path.display()))
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

fn write(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    }
    fs::write(path, contents).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn manifest_path(explicit: Option<&PathBuf>, output: &Path) -> PathBuf {
    explicit.cloned().unwrap_or_else(|| output.with_extension("manifest.json"))
}

fn write_manifest(manifest: &RunManifest, path: &Path) -> CliResult<()> {
    write(path, &manifest.to_json().map_err(|e| e.to_string())?)
}

fn simulate(a: &SimulateArgs, command_line: &str) -> CliResult<ExitCode> {
    let mut cfg = load_config(a.config.as_ref())?;
    a.world.apply(&mut cfg);
    a.sensor.apply(&mut cfg);
    if let Some(seed) = a.seed {
        cfg.world.seed = seed;
    }
    cfg.world.validate().map_err(|e| e.to_string())?;
    cfg.sensor.validate().map_err(|e| e.to_string())?;

    let start = Instant::now();
    let dataset = generate_dataset(&cfg.world, &cfg.sensor).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    write(&a.output, &dataset.to_json().map_err(|e| e.to_string())?)?;

    println!("seed: {}", dataset.seed);
    println!("poses: {}", dataset.ground_truth.len());
    println!("landmarks: {}", dataset.landmarks.len());
    println!("detections: {}", dataset.detections.len());
    for (id, n) in dataset.detections_per_landmark().iter().enumerate() {
        println!("  landmark {id}: {n} detections");
    }

    let mut manifest = RunManifest::new(command_line, cfg);
    manifest.seeds.push(dataset.seed);
    manifest.artifact("dataset", a.output.display().to_string());
    manifest.timing("simulate", elapsed);
    let mpath = manifest_path(a.manifest.as_ref(), &a.output);
    manifest.artifact("manifest", mpath.display().to_string());
    write_manifest(&manifest, &mpath)?;
    Ok(ExitCode::SUCCESS)
}

fn outcome_json(dataset_path: &Path, mode: Mode, cfg: &TrialConfig, o: &TrialOutcome) -> serde_json::Value {
    let poses: Vec<_> = o
        .estimate
        .poses
        .iter()
        .enumerate()
        .map(|(i, p)| json!({ "index": i, "x_m": p.x, "y_m": p.y, "theta_rad": p.theta }))
        .collect();
    let quadrics: Vec<_> = o
        .estimate
        .quadrics
        .iter()
        .enumerate()
        .map(|(id, q)| {
            let c = q.centroid();
            json!({
                "id": id,
                "q": q.vector().as_slice(),
                "centroid_m": [c.x, c.y, c.z],
                "init_fallback": o.fallback[id],
            })
        })
        .collect();
    json!({
        "dataset": dataset_path.display().to_string(),
        "mode": mode,
        "config": cfg,
        "report": o.report,
        "stages": o.stages,
        "result": o.result,
        "poses": poses,
        "quadrics": quadrics,
    })
}

fn solve(a: &SolveArgs, command_line: &str) -> CliResult<ExitCode> {
    let dataset = Dataset::from_json(&read(&a.dataset)?).map_err(|e| format!("{}: {e}", a.dataset.display()))?;
    let mut cfg = load_config(a.config.as_ref())?;
    cfg.world = dataset.world_config;
    cfg.sensor = dataset.sensor_config;
    a.estimation.apply(&mut cfg);
    cfg.validate().map_err(|e| e.to_string())?;
    let mode = Mode::from(a.mode);

    let mut manifest = RunManifest::new(command_line, cfg);
    manifest.seeds.push(dataset.seed);
    let start = Instant::now();
    let run = run_trial(&dataset, mode, &cfg);
    manifest.timing("solve", start.elapsed().as_secs_f64());

    let code = match &run {
        Ok(o) => {
            let mut text = serde_json::to_string_pretty(&outcome_json(&a.dataset, mode, &cfg, o))
                .map_err(|e| e.to_string())?;
            text.push('\n');
            write(&a.output, &text)?;
            let r = &o.result;
            println!("mode: {mode}");
            println!("iterations: {}", o.report.iterations);
            println!("termination: {}", o.report.termination_reason.as_str());
            println!("final cost: {:e}", o.report.final_cost);
            println!("rmse_pos init: {:.6} m, slam: {:.6} m", r.rmse_pos_init, r.rmse_pos_slam);
            println!("rmse_lm: {:.6} m", r.rmse_lm);
            if !o.report.converged {
                eprintln!("warning: solver stopped without converging ({})", o.report.termination_reason.as_str());
            }
            if let Some(svg) = &a.svg {
                let centers: Vec<_> = dataset.landmarks.iter().map(|l| l.center).collect();
                write(svg, &trajectory_svg(&dataset.ground_truth, &centers, &o.initial, &o.estimate))?;
                manifest.artifact("svg", svg.display().to_string());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let failure = json!({
                "dataset": a.dataset.display().to_string(),
                "mode": mode,
                "config": cfg,
                "error": e.to_string(),
            });
            let mut text = serde_json::to_string_pretty(&failure).map_err(|e| e.to_string())?;
            text.push('\n');
            write(&a.output, &text)?;
            eprintln!("error: solve failed: {e}");
            ExitCode::FAILURE
        }
    };
    manifest.artifact("results", a.output.display().to_string());
    let mpath = manifest_path(a.manifest.as_ref(), &a.output);
    manifest.artifact("manifest", mpath.display().to_string());
    write_manifest(&manifest, &mpath)?;
    Ok(code)
}

fn run_evaluate(a: &EvaluateArgs, command_line: &str) -> CliResult<ExitCode> {
    let (mut cfg, previous) = load_base(a.config.as_ref())?;
    a.world.apply(&mut cfg);
    a.sensor.apply(&mut cfg);
    a.estimation.apply(&mut cfg);
    let previous = previous.filter(|m| !m.modes.is_empty());
    let n_trials = a.n_trials.or(previous.as_ref().map(|m| m.seeds.len())).unwrap_or(50);
    let base_seed = a.base_seed.or(previous.as_ref().and_then(|m| m.seeds.first().copied())).unwrap_or(0);
    let modes = match (a.modes, &previous) {
        (Some(m), _) => m.modes(),
        (None, Some(m)) => m.modes.clone(),
        (None, None) => Mode::ALL.to_vec(),
    };

    let start = Instant::now();
    let eval = evaluate(&cfg, n_trials, base_seed, &modes, a.jobs).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();

    let dir = &a.output_dir;
    let csv_path = dir.join("results.csv");
    let table_path = dir.join("summary.txt");
    let summary_path = dir.join("summary.json");
    let manifest_path = dir.join("manifest.json");

    write(&csv_path, &results_csv(&eval.results))?;
    let summaries = if eval.results.is_empty() { Vec::new() } else { aggregate(&eval.results).map_err(|e| e.to_string())? };
    let mut table = summary_table(&summaries);
    table.push_str(&format!("failures: {}\n", eval.failures.len()));
    write(&table_path, &table)?;
    let mut summary = serde_json::to_string_pretty(&json!({
        "n_trials": n_trials,
        "base_seed": base_seed,
        "modes": modes,
        "summaries": summaries,
        "failures": eval.failures,
    }))
    .map_err(|e| e.to_string())?;
    summary.push('\n');
    write(&summary_path, &summary)?;

    print!("{table}");
    for f in &eval.failures {
        let mode = f.mode.map(|m| m.to_string()).unwrap_or_else(|| "simulate".into());
        eprintln!("trial {} ({mode}) failed: {}", f.seed, f.message);
    }

    let mut manifest = RunManifest::new(command_line, cfg);
    manifest.seeds = (0..n_trials).map(|i| quadslam::harness::trial_seed(base_seed, i)).collect();
    manifest.modes = modes.clone();
    manifest.artifact("csv", csv_path.display().to_string());
    manifest.artifact("summary-table", table_path.display().to_string());
    manifest.artifact("summary", summary_path.display().to_string());
    manifest.artifact("manifest", manifest_path.display().to_string());
    manifest.timing("evaluate", elapsed);
    write_manifest(&manifest, &manifest_path)?;

    Ok(if eval.failures.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
