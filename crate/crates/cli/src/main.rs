//! `slam`: generate synthetic sequences, run the pipeline, evaluate
//! trajectories and export pose graphs.
//!
//! Exit codes: 0 success, 2 input error, 3 pipeline error.

mod config;
mod svg;

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use slam_core::eval::{associate, evaluate, IcpConfig};
use slam_core::frontend::decisions_to_jsonl;
use slam_core::geometry::{PointCloud, Trajectory};
use slam_core::pipeline::{evaluate_run, run, RunOutput};
use slam_core::posegraph::{optimize, read_g2o, write_g2o, LmConfig};
use slam_core::predictor::{read_snapshot, ToyPredictor};
use slam_core::synth::{generate, OraclePredictor, SceneSpec};

use config::{Builtin, PredictorKind, RunConfig};

#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn input(e: impl Display) -> Self {
        Self { code: 2, message: e.to_string() }
    }

    pub fn pipeline(e: impl Display) -> Self {
        Self { code: 3, message: e.to_string() }
    }
}

#[derive(Parser)]
#[command(name = "slam", version, about = "Submap-based pointmap SLAM on synthetic scenes")]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene spec into a sequence directory.
    Generate {
        /// Scene spec JSON. Omit to use --builtin.
        spec: Option<PathBuf>,
        #[arg(long)]
        builtin: Option<Builtin>,
        #[arg(long, default_value_t = 500)]
        frames: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline and write all artifacts to --out.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        predictor: Option<PredictorKind>,
    },
    /// Compare an estimated TUM trajectory against ground truth.
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Optional reconstruction and reference clouds (PLY).
        #[arg(long, requires = "gt_map")]
        est_map: Option<PathBuf>,
        #[arg(long, requires = "est_map")]
        gt_map: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rewrite a g2o pose graph, optionally after optimizing it.
    ExportG2o {
        /// A g2o file, or a run directory containing posegraph.g2o.
        input: PathBuf,
        #[arg(long)]
        optimize: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::pipeline(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("value serializes") + "\n"
}

fn cmd_generate(
    spec: Option<PathBuf>,
    builtin: Option<Builtin>,
    frames: usize,
    seed: Option<u64>,
    out: &Path,
) -> Result<(), CliError> {
    let mut spec: SceneSpec = match (spec, builtin) {
        (Some(path), None) => serde_json::from_str(&read(&path)?).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?,
        (None, Some(b)) => b.spec(seed.unwrap_or(0), frames),
        _ => return Err(CliError::input("pass exactly one of a spec path or --builtin")),
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let seq = generate(&spec).map_err(CliError::input)?;
    create_dir(out)?;
    seq.write_to(out).map_err(CliError::pipeline)?;
    eprintln!("wrote {} frames to {}", seq.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct SubmapsFile<'a> {
    submaps: Vec<slam_core::frontend::Submap>,
    loops: &'a [slam_core::posegraph::LoopCandidate],
}

fn write_run(out: &RunOutput, dir: &Path) -> Result<(), CliError> {
    write(&dir.join("est_traj.tum"), out.trajectory.to_tum())?;
    write(&dir.join("open_loop_traj.tum"), out.open_loop_trajectory.to_tum())?;
    write(&dir.join("map.ply"), out.map.to_ply())?;
    write(&dir.join("posegraph.g2o"), write_g2o(&out.graph))?;
    write(&dir.join("decisions.jsonl"), decisions_to_jsonl(&out.decisions))?;
    let submaps = out
        .submaps
        .iter()
        .map(|s| {
            let mut s = s.clone();
            if let Some(pose) = out.graph.nodes.get(&s.id) {
                s.pose = *pose;
            }
            s
        })
        .collect();
    write(&dir.join("submaps.json"), json(&SubmapsFile { submaps, loops: &out.loops }))
}

fn cmd_run(config: Option<PathBuf>, out: &Path, seed: Option<u64>, predictor: Option<PredictorKind>) -> Result<(), CliError> {
    let mut cfg = match &config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(p) = predictor {
        cfg.predictor = p;
    }
    cfg.validate()?;
    let seq = cfg.sequence(seed)?;
    create_dir(out)?;
    write(&out.join("config.json"), json(&cfg))?;

    let result = match cfg.predictor {
        PredictorKind::Oracle => {
            let oracle = OraclePredictor::new(&seq, cfg.noise).map_err(CliError::input)?;
            run(&oracle, &seq, &cfg.pipeline)
        }
        PredictorKind::Toy => {
            let mut model_cfg = cfg.model;
            model_cfg.width = seq.spec.width;
            model_cfg.height = seq.spec.height;
            let mut model = ToyPredictor::new(model_cfg).map_err(CliError::input)?;
            if let Some(path) = &cfg.weights {
                let bytes = std::fs::read(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
                read_snapshot(&bytes).and_then(|w| w.load_into(&mut model)).map_err(CliError::input)?;
            }
            run(&model, &seq, &cfg.pipeline)
        }
    };
    let result = result.map_err(CliError::pipeline)?;
    write_run(&result, out)?;
    let metrics = evaluate_run(&result, &seq.trajectory(), Some(&seq.ground_truth_cloud()), &cfg.pipeline.eval)
        .map_err(CliError::pipeline)?;
    write(&out.join("metrics.json"), json(&metrics))?;
    eprintln!(
        "{} frames, {} submaps, {} loops: ATE {:.3} cm (open loop {:.3} cm)",
        seq.len(),
        metrics.submaps,
        metrics.loops,
        metrics.report.ate_rmse,
        metrics.open_loop_ate
    );
    Ok(())
}

fn load_trajectory(path: &Path) -> Result<Trajectory, CliError> {
    Trajectory::from_tum(&read(path)?).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn load_cloud(path: &Path) -> Result<PointCloud, CliError> {
    PointCloud::from_ply(&read(path)?).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn cmd_eval(est: &Path, gt: &Path, maps: Option<(PathBuf, PathBuf)>, out: &Path) -> Result<(), CliError> {
    let est = load_trajectory(est)?;
    let gt = load_trajectory(gt)?;
    let clouds = match &maps {
        Some((e, g)) => Some((load_cloud(e)?, load_cloud(g)?)),
        None => None,
    };
    let report = evaluate(&est, &gt, clouds.as_ref().map(|(a, b)| (a, b)), &IcpConfig::default()).map_err(CliError::input)?;
    let pairs = associate(&est, &gt).map_err(CliError::input)?;
    let xy = |p: &slam_core::geometry::SE3Pose| [p.translation.x, p.translation.y];
    let ref_xy: Vec<_> = pairs.iter().map(|(_, g)| xy(g)).collect();
    let est_xy: Vec<_> = pairs
        .iter()
        .map(|(e, _)| {
            let p = report.alignment.transform_point(&e.translation);
            [p.x, p.y]
        })
        .collect();
    create_dir(out)?;
    write(&out.join("metrics.json"), report.to_json() + "\n")?;
    write(&out.join("trajectory.svg"), svg::trajectory_plot(&ref_xy, &est_xy, report.ate_rmse))?;
    eprintln!("ATE {:.4} cm over {} poses", report.ate_rmse, pairs.len());
    Ok(())
}

fn cmd_export_g2o(input: &Path, optimize_graph: bool, out: &Path) -> Result<(), CliError> {
    let path = if input.is_dir() { input.join("posegraph.g2o") } else { input.to_path_buf() };
    let mut graph = read_g2o(&read(&path)?).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    if optimize_graph {
        let report = optimize(&mut graph, &LmConfig::default()).map_err(CliError::pipeline)?;
        eprintln!("cost {:.6e} -> {:.6e} in {} iterations", report.initial_cost, report.final_cost, report.iterations);
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write(out, write_g2o(&graph))
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    code: u8,
    kind: &'a str,
    message: &'a str,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("warning: {e}");
        }
    }
    let run_dir = match &cli.command {
        Command::Run { out, .. } => Some(out.clone()),
        _ => None,
    };
    let result = match cli.command {
        Command::Generate { spec, builtin, frames, seed, out } => cmd_generate(spec, builtin, frames, seed, &out),
        Command::Run { config, out, seed, predictor } => cmd_run(config, &out, seed, predictor),
        Command::Eval { est, gt, est_map, gt_map, out } => cmd_eval(&est, &gt, est_map.zip(gt_map), &out),
        Command::ExportG2o { input, optimize, out } => cmd_export_g2o(&input, optimize, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.code == 3 => {
            let report = json(&ErrorReport { code: e.code, kind: "pipeline", message: &e.message });
            if let Some(dir) = run_dir.filter(|d| d.is_dir()) {
                let _ = std::fs::write(dir.join("error.json"), &report);
            }
            eprint!("{report}");
            ExitCode::from(e.code)
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

