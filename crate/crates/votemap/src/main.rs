//! Command-line front end: solve a corpus, generate synthetic scenes,
//! evaluate against ground truth, and run the passes experiment.
//!
//! Exit codes: 0 success, 2 input error (bad files, bad flag values),
//! 3 internal error.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use votemap::clustering::ClusterConfig;
use votemap::eval;
use votemap::pipeline::{self, IngestError, PipelineError};
use votemap::synth::{self, DetectorSpec, SceneSpec};
use votemap::voting::SolveConfig;

#[derive(Parser)]
#[command(name = "votemap", version, about = "Voting-based triangulation of static objects from posed imagery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Recover 3D objects from a views file and a detections file.
    Solve(SolveCmd),
    /// Generate a synthetic scene: views, detections and ground truth.
    Synth(SynthCmd),
    /// Score an objects file against a ground-truth file.
    Eval(EvalCmd),
    /// Multi-run experiments.
    #[command(subcommand)]
    Experiment(ExperimentCmd),
}

#[derive(Args)]
struct SolverFlags {
    /// Maximum reprojection error / inlier radius, pixels.
    #[arg(long, default_value_t = 10.0)]
    d_max: f64,
    /// Minimum ratio of a hypothesis's votes to the pool noise level.
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    /// Minimum viewpoint angle, degrees.
    #[arg(long, default_value_t = 5.0)]
    theta_min_deg: f64,
    /// Maximum object-to-camera distance, meters.
    #[arg(long, default_value_t = 50.0)]
    r_max: f64,
    /// Valid depth range, meters.
    #[arg(long, default_value_t = 2.0)]
    depth_min: f64,
    #[arg(long, default_value_t = 80.0)]
    depth_max: f64,
}

impl SolverFlags {
    fn to_config(&self) -> Result<SolveConfig, PipelineError> {
        let cfg = SolveConfig {
            d_max: self.d_max,
            alpha: self.alpha,
            theta_min: self.theta_min_deg.to_radians(),
            r_max: self.r_max,
            depth_min: self.depth_min,
            depth_max: self.depth_max,
            ..SolveConfig::default()
        };
        if cfg.is_valid() {
            Ok(cfg)
        } else {
            Err(PipelineError::InvalidConfig("solver thresholds out of range".into()))
        }
    }
}

#[derive(Args)]
struct ClusterFlags {
    /// Cluster ball radius, meters.
    #[arg(long, default_value_t = 50.0)]
    n_max: f64,
    /// Seed consumption radius, meters (default n_max / 2).
    #[arg(long)]
    assign_radius: Option<f64>,
    /// Duplicate-merge distance, meters.
    #[arg(long, default_value_t = 1.0)]
    merge_dist: f64,
}

impl ClusterFlags {
    fn to_config(&self) -> Result<ClusterConfig, PipelineError> {
        let cfg = ClusterConfig {
            n_max: self.n_max,
            assign_radius: self.assign_radius.unwrap_or(self.n_max / 2.0),
            merge_dist: self.merge_dist,
        };
        if cfg.is_valid() {
            Ok(cfg)
        } else {
            Err(PipelineError::InvalidConfig("cluster radii out of range".into()))
        }
    }
}

#[derive(Args)]
struct SceneFlags {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    objects: usize,
    #[arg(long, default_value_t = 5)]
    passes: usize,
    #[arg(long, default_value_t = 300.0)]
    area_x: f64,
    #[arg(long, default_value_t = 40.0)]
    area_y: f64,
    #[arg(long, default_value_t = 60)]
    images_per_pass: usize,
    /// Meters between consecutive frames.
    #[arg(long, default_value_t = 5.0)]
    frame_spacing: f64,
    #[arg(long, default_value_t = 3.0)]
    height_min: f64,
    #[arg(long, default_value_t = 6.0)]
    height_max: f64,
    /// Lane offset from the area midline, meters.
    #[arg(long, default_value_t = 1.75)]
    lane_offset: f64,
    #[arg(long, default_value_t = 2.0)]
    camera_height: f64,
}

impl SceneFlags {
    fn to_spec(&self) -> SceneSpec {
        SceneSpec {
            n_objects: self.objects,
            area: (self.area_x, self.area_y),
            object_height_range: (self.height_min, self.height_max),
            n_passes: self.passes,
            images_per_pass: self.images_per_pass,
            frame_spacing: self.frame_spacing,
            lane_offset: self.lane_offset,
            camera_height: self.camera_height,
            rng_seed: self.seed,
            ..SceneSpec::default()
        }
    }
}

#[derive(Args)]
struct DetectorFlags {
    /// Probability a visible object yields a detection.
    #[arg(long, default_value_t = 0.85)]
    recall: f64,
    /// Detection center noise, pixels.
    #[arg(long, default_value_t = 1.5)]
    pixel_sigma: f64,
    /// Expected false positives per image (Poisson).
    #[arg(long, default_value_t = 0.3)]
    fp_per_image: f64,
    /// Probability a false positive comes from a persistent phantom point.
    #[arg(long, default_value_t = 0.1)]
    fp_cluster_prob: f64,
}

impl DetectorFlags {
    fn to_spec(&self) -> Result<DetectorSpec, PipelineError> {
        let spec = DetectorSpec {
            recall: self.recall,
            pixel_sigma: self.pixel_sigma,
            fp_per_image: self.fp_per_image,
            fp_cluster_prob: self.fp_cluster_prob,
        };
        if spec.is_valid() {
            Ok(spec)
        } else {
            Err(PipelineError::InvalidConfig("detector parameters out of range".into()))
        }
    }
}

#[derive(Args)]
struct SolveCmd {
    #[arg(long)]
    views: PathBuf,
    #[arg(long)]
    detections: PathBuf,
    /// Output objects file (JSON Lines).
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    solver: SolverFlags,
    #[command(flatten)]
    cluster: ClusterFlags,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Optional run report (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SynthCmd {
    #[command(flatten)]
    scene: SceneFlags,
    #[command(flatten)]
    detector: DetectorFlags,
    #[command(flatten)]
    solver: SolverFlags,
    #[arg(long)]
    out_views: PathBuf,
    #[arg(long)]
    out_detections: PathBuf,
    #[arg(long)]
    out_gt: PathBuf,
}

#[derive(Args)]
struct EvalCmd {
    /// Objects file produced by `solve`.
    #[arg(long)]
    objects: PathBuf,
    /// Ground-truth file produced by `synth`.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = eval::DEFAULT_MATCH_DIST)]
    match_dist: f64,
    /// Output CSV path; a JSON mirror is written alongside.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum ExperimentCmd {
    /// Recall and leave-one-out reprojection error versus pass count.
    Passes(PassesCmd),
}

#[derive(Args)]
struct PassesCmd {
    #[arg(long, default_value_t = 20)]
    seed_count: usize,
    /// First seed; runs use seed_base..seed_base+seed_count.
    #[arg(long, default_value_t = 1)]
    seed_base: u64,
    #[arg(long, default_value_t = 5)]
    max_passes: usize,
    #[command(flatten)]
    scene: SceneFlags,
    #[command(flatten)]
    detector: DetectorFlags,
    #[command(flatten)]
    solver: SolverFlags,
    #[command(flatten)]
    cluster: ClusterFlags,
    /// Output CSV path; a JSON mirror is written alongside.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// 2 for input problems, 3 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<IngestError>() {
            return 2;
        }
        if let Some(p) = cause.downcast_ref::<PipelineError>() {
            return match p {
                PipelineError::Ingest(_)
                | PipelineError::Cluster(_)
                | PipelineError::InvalidConfig(_) => 2,
                PipelineError::Internal(_) => 3,
            };
        }
    }
    3
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Solve(cmd) => {
            let solve_cfg = cmd.solver.to_config()?;
            let cluster_cfg = cmd.cluster.to_config()?;
            let corpus = pipeline::ingest(&cmd.views, &cmd.detections)?;
            let report = pipeline::run(&corpus, &solve_cfg, &cluster_cfg, cmd.threads.max(1))?;
            pipeline::write_objects(&report.objects, &cmd.out)
                .with_context(|| format!("writing {}", cmd.out.display()))?;
            if let Some(path) = &cmd.report {
                pipeline::write_report(&report, path)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            eprintln!(
                "solved {} images / {} detections: {} clusters, {} objects ({} before merge) in {:.1} ms",
                report.totals.images,
                report.totals.detections,
                report.totals.clusters,
                report.totals.objects,
                report.totals.objects_before_merge,
                report.total_wall_ms,
            );
            Ok(())
        }
        Command::Synth(cmd) => {
            let solve_cfg = cmd.solver.to_config()?;
            let detector = cmd.detector.to_spec()?;
            let scene = cmd.scene.to_spec();
            let (corpus, gt) = synth::generate(&scene, &detector, &solve_cfg);
            pipeline::write_corpus(&corpus, &cmd.out_views, &cmd.out_detections)
                .context("writing corpus")?;
            synth::write_ground_truth(&gt, &cmd.out_gt).context("writing ground truth")?;
            eprintln!(
                "generated {} views, {} detections, {} objects ({} recoverable)",
                corpus.views.len(),
                corpus.detections.len(),
                gt.objects.len(),
                gt.objects.iter().filter(|o| o.recoverable).count(),
            );
            Ok(())
        }
        Command::Eval(cmd) => {
            if cmd.match_dist <= 0.0 {
                return Err(PipelineError::InvalidConfig("match-dist must be positive".into()).into());
            }
            let objects = pipeline::read_objects(&cmd.objects)?;
            let gt = synth::read_ground_truth(&cmd.gt)?;
            let result = eval::match_objects(&objects, &gt, cmd.match_dist);
            eval::emit_match_report(&result, &cmd.out)
                .with_context(|| format!("writing {}", cmd.out.display()))?;
            eprintln!(
                "tp {} fp {} fn {} duplicates {} recall {:.3}",
                result.true_positives,
                result.false_positives,
                result.false_negatives,
                result.duplicates,
                eval::recall(&result),
            );
            Ok(())
        }
        Command::Experiment(ExperimentCmd::Passes(cmd)) => {
            let solve_cfg = cmd.solver.to_config()?;
            let cluster_cfg = cmd.cluster.to_config()?;
            let detector = cmd.detector.to_spec()?;
            if cmd.seed_count == 0 || cmd.max_passes < 2 {
                return Err(PipelineError::InvalidConfig(
                    "need at least one seed and max-passes >= 2".into(),
                )
                .into());
            }
            let scene = cmd.scene.to_spec();
            let seeds: Vec<u64> = (0..cmd.seed_count).map(|i| cmd.seed_base + i as u64).collect();
            let curve = eval::passes_experiment(
                &scene,
                &detector,
                &solve_cfg,
                &cluster_cfg,
                cmd.max_passes,
                &seeds,
            )?;
            eval::emit_passes_report(&curve, &cmd.out)
                .with_context(|| format!("writing {}", cmd.out.display()))?;
            for p in &curve.points {
                eprintln!(
                    "passes {}: recall {:.3}, fp {:.2}, loo mean {}",
                    p.passes,
                    p.mean_recall,
                    p.mean_false_positives,
                    p.loo.as_ref().map_or("-".into(), |l| format!("{:.2} px", l.mean_px)),
                );
            }
            Ok(())
        }
    }
}
