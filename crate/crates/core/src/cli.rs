//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::evaluation::{associate, depth_metrics_with, evaluate_poses, AteStatistic, DepthAlignment, EvalError, PoseEvalConfig};
use crate::flow::{euler_sample, fm_loss, fm_loss_gradient, train_toy, LatentSample, LinearGaussianToy, LinearVelocityModel};
use crate::io::{
    read_depth, read_intrinsics, read_pointmap, read_trajectory, write_depth, write_intrinsics, write_pointmap,
    write_trajectory, CameraInfo, FormatError,
};
use crate::losses::{vae_loss, DEFAULT_BETA, DEFAULT_LAMBDA_KL};
use crate::pointmap::{build_pointmap, normalize_pointmap, rebase_to_first_frame, DepthSequence, PointmapError};
use crate::recovery::{recover_all, RansacConfig, RecoveryConfig, RecoveryError};
use crate::synth::{generate, CameraPath, SceneSpec, SynthError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "pointmap4d", version, about = "Build, recover and evaluate temporal pointmaps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dynamic scene with exact ground truth.
    Synth(SynthArgs),
    /// Build a world-frame pointmap from depth, trajectory and intrinsics.
    Build(BuildArgs),
    /// Recover intrinsics, poses and depth from a pointmap.
    Recover(RecoverArgs),
    /// Compare a trajectory with ground truth (ATE, RPE).
    EvalPose(EvalPoseArgs),
    /// Compare a depth sequence with ground truth (Abs Rel, δ<1.25).
    EvalDepth(EvalDepthArgs),
    /// Train and sample a linear rectified-flow model on toy data.
    RfDemo(RfDemoArgs),
    /// Reconstruction and KL loss between two pointmaps.
    Loss(LossArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PathArg {
    Orbit,
    Line,
    Spline,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 17)]
    pub frames: usize,
    #[arg(long, default_value_t = 512)]
    pub width: usize,
    #[arg(long, default_value_t = 384)]
    pub height: usize,
    #[arg(long, default_value_t = 500.0)]
    pub focal: f64,
    /// Number of static rectangles (the first four form the room).
    #[arg(long, default_value_t = 4)]
    pub planes: usize,
    #[arg(long, default_value_t = 2)]
    pub spheres: usize,
    #[arg(long, value_enum, default_value = "orbit")]
    pub path: PathArg,
    /// Multiplier on sphere motion; 0 gives a static scene.
    #[arg(long, default_value_t = 1.0)]
    pub motion_scale: f64,
    /// Fraction of valid points replaced by far outliers in pointmap.p4d.
    #[arg(long, default_value_t = 0.0)]
    pub outlier_fraction: f64,
    /// Gaussian point noise in pointmap.p4d, relative to the scene scale.
    #[arg(long, default_value_t = 0.0)]
    pub noise_sigma: f64,
    /// Write a key=value report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub depth: PathBuf,
    #[arg(long)]
    pub trajectory: PathBuf,
    #[arg(long)]
    pub intrinsics: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Divide by the mean valid-point distance.
    #[arg(long)]
    pub normalize: bool,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RecoverArgs {
    #[arg(long)]
    pub pointmap: PathBuf,
    /// Receives trajectory.txt, intrinsics.txt, depth.d4d and failures.txt.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// RANSAC hypotheses per frame.
    #[arg(long, default_value_t = 512)]
    pub iterations: usize,
    /// Reprojection inlier threshold in pixels at 512×384.
    #[arg(long, default_value_t = 2.0)]
    pub threshold: f64,
    #[arg(long, default_value_t = 6)]
    pub min_sample: usize,
    #[arg(long, default_value_t = 5000)]
    pub max_scoring_points: usize,
    /// Skip Gauss-Newton refinement on the inliers.
    #[arg(long)]
    pub no_refine: bool,
    #[arg(long, default_value_t = 200)]
    pub focal_iters: usize,
    /// Timestamp spacing of the written trajectory.
    #[arg(long, default_value_t = 1.0)]
    pub frame_interval: f64,
    /// Multiply translations and depth by the pointmap's norm scale.
    #[arg(long)]
    pub restore_scale: bool,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AteArg {
    Rmse,
    Mean,
}

#[derive(Debug, Args)]
pub struct EvalPoseArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Frame offset for RPE.
    #[arg(long, default_value_t = 1)]
    pub delta: usize,
    #[arg(long, value_enum, default_value = "rmse")]
    pub ate: AteArg,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AlignArg {
    Sequence,
    Frame,
    None,
}

#[derive(Debug, Args)]
pub struct EvalDepthArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, value_enum, default_value = "sequence")]
    pub alignment: AlignArg,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RfDemoArgs {
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 8)]
    pub cond_dim: usize,
    /// Gradient steps.
    #[arg(long, default_value_t = 3000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.02)]
    pub lr: f64,
    /// Training examples.
    #[arg(long, default_value_t = 16384)]
    pub samples: usize,
    /// Euler steps of the sampler.
    #[arg(long, default_value_t = 100)]
    pub sampling_steps: usize,
    /// Held-out conditions used for the sampler statistics.
    #[arg(long, default_value_t = 64)]
    pub eval_conditions: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Compare the analytic gradient with central differences.
    #[arg(long)]
    pub grad_check: bool,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LossArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Huber knee.
    #[arg(long, default_value_t = DEFAULT_BETA)]
    pub beta: f64,
    #[arg(long, default_value_t = DEFAULT_LAMBDA_KL)]
    pub lambda_kl: f64,
    /// Latent mean, comma separated; empty means no KL term.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub latent_mean: Vec<f64>,
    /// Latent log-variance, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub latent_log_var: Vec<f64>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

/// A failed command: exit code and message for stderr.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(m: impl ToString) -> Self {
        Self { code: EXIT_USAGE, message: m.to_string() }
    }
    fn data(m: impl ToString) -> Self {
        Self { code: EXIT_DATA, message: m.to_string() }
    }
    fn numerical(m: impl ToString) -> Self {
        Self { code: EXIT_NUMERICAL, message: m.to_string() }
    }
}

impl From<FormatError> for Failure {
    fn from(e: FormatError) -> Self {
        Failure::data(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::data(e)
    }
}

impl From<PointmapError> for Failure {
    fn from(e: PointmapError) -> Self {
        Failure::data(e)
    }
}

fn from_recovery(e: RecoveryError) -> Failure {
    match e {
        RecoveryError::InvalidConfig(_) => Failure::usage(e),
        RecoveryError::EmptySequence => Failure::data(e),
        _ => Failure::numerical(e),
    }
}

fn from_eval(e: EvalError) -> Failure {
    match e {
        EvalError::LengthMismatch { .. } | EvalError::DimensionMismatch | EvalError::TooFewPoses { .. } => Failure::data(e),
        _ => Failure::numerical(e),
    }
}

type CmdResult = Result<i32, Failure>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    let mut text = String::new();
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a, &mut text),
        Command::Build(a) => cmd_build(a, &mut text),
        Command::Recover(a) => cmd_recover(a, &mut text),
        Command::EvalPose(a) => cmd_eval_pose(a, &mut text),
        Command::EvalDepth(a) => cmd_eval_depth(a, &mut text),
        Command::RfDemo(a) => cmd_rf_demo(a, &mut text),
        Command::Loss(a) => cmd_loss(a, &mut text),
    };
    let _ = out.write_all(text.as_bytes());
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn write_report(path: Option<&Path>, kv: &str) -> Result<(), Failure> {
    if let Some(p) = path {
        fs::write(p, kv)?;
    }
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs, text: &mut String) -> CmdResult {
    let spec = SceneSpec {
        seed: a.seed,
        n_frames: a.frames,
        width: a.width,
        height: a.height,
        focal: a.focal,
        n_static_planes: a.planes,
        n_dynamic_spheres: a.spheres,
        camera_path: match a.path {
            PathArg::Orbit => CameraPath::Orbit,
            PathArg::Line => CameraPath::Line,
            PathArg::Spline => CameraPath::Spline,
        },
        motion_scale: a.motion_scale,
        outlier_fraction: a.outlier_fraction,
        depth_noise_sigma: a.noise_sigma,
    };
    let scene = generate(&spec).map_err(|e| match e {
        SynthError::InvalidSpec(_) => Failure::usage(e),
        _ => Failure::data(e),
    })?;
    fs::create_dir_all(&a.out_dir)?;
    let dir = &a.out_dir;
    write_depth(dir.join("depth.d4d"), &scene.depth)?;
    write_trajectory(dir.join("trajectory.txt"), &scene.trajectory)?;
    write_intrinsics(
        dir.join("intrinsics.txt"),
        &CameraInfo {
            intrinsics: scene.intrinsics,
            width: spec.width,
            height: spec.height,
        },
    )?;
    write_pointmap(dir.join("pointmap.p4d"), &scene.observed)?;
    // the dynamic mask travels as a depth file whose valid pixels are the dynamic ones
    let n = scene.dynamic_mask.len();
    let mask = DepthSequence::new(spec.n_frames, spec.height, spec.width, vec![1.0; n], scene.dynamic_mask.clone())?;
    write_depth(dir.join("dynamic_mask.d4d"), &mask)?;

    let valid = scene.depth.valid_count();
    let dynamic = scene.dynamic_mask.iter().filter(|d| **d).count();
    let mut kv = String::new();
    writeln!(kv, "frames={}\nwidth={}\nheight={}\nfocal={}", spec.n_frames, spec.width, spec.height, spec.focal).unwrap();
    writeln!(kv, "seed={}\nvalid_fraction={}\ndynamic_fraction={}", spec.seed, valid as f64 / n as f64, dynamic as f64 / n as f64).unwrap();
    writeln!(text, "wrote scene {}x{}x{} to {}", spec.n_frames, spec.height, spec.width, dir.display()).unwrap();
    text.push_str(&kv);
    write_report(a.report.as_deref(), &kv)?;
    Ok(EXIT_OK)
}

pub fn cmd_build(a: &BuildArgs, text: &mut String) -> CmdResult {
    let depth = read_depth(&a.depth)?;
    let traj = read_trajectory(&a.trajectory)?;
    let cam = read_intrinsics(&a.intrinsics)?;
    if (cam.width, cam.height) != (depth.width(), depth.height()) {
        return Err(Failure::data(format!(
            "intrinsics are for {}x{} but depth is {}x{}",
            cam.width,
            cam.height,
            depth.width(),
            depth.height()
        )));
    }
    if traj.len() != depth.frames() {
        return Err(Failure::data(format!("trajectory has {} poses for {} depth frames", traj.len(), depth.frames())));
    }
    let traj = match traj.poses().first() {
        Some(p) if *p == crate::geometry::RigidPose::identity() => traj,
        _ => rebase_to_first_frame(&traj)?,
    };
    let mut p = build_pointmap(&depth, &traj, &cam.intrinsics)?;
    if a.normalize {
        p = normalize_pointmap(&p)?;
    }
    write_pointmap(&a.out, &p)?;
    let mut kv = String::new();
    writeln!(kv, "valid_count={}\nnormalized={}\nnorm_scale={}", p.valid_count(), p.is_normalized(), p.norm_scale()).unwrap();
    writeln!(kv, "mean_distance={}", p.mean_distance().unwrap_or(0.0)).unwrap();
    writeln!(text, "wrote pointmap {}x{}x{} to {}", p.frames(), p.height(), p.width(), a.out.display()).unwrap();
    text.push_str(&kv);
    write_report(a.report.as_deref(), &kv)?;
    Ok(EXIT_OK)
}

pub fn cmd_recover(a: &RecoverArgs, text: &mut String) -> CmdResult {
    if !(a.frame_interval.is_finite() && a.frame_interval > 0.0) {
        return Err(Failure::usage("frame interval must be positive"));
    }
    let p = read_pointmap(&a.pointmap)?;
    let cfg = RecoveryConfig {
        ransac: RansacConfig {
            iterations: a.iterations,
            inlier_threshold: a.threshold,
            min_sample: a.min_sample,
            seed: a.seed,
            refine: !a.no_refine,
            max_scoring_points: a.max_scoring_points,
            ..RansacConfig::default()
        },
        focal: crate::recovery::FocalConfig {
            max_iters: a.focal_iters,
            ..Default::default()
        },
    };
    let r = recover_all(&p, &cfg).map_err(from_recovery)?;
    let mut traj = r.solved_trajectory(a.frame_interval);
    let mut depth = r.depth.clone();
    if a.restore_scale {
        let s = p.norm_scale();
        traj = traj.map_poses(|pose| pose.scale_translation(s));
        let values = depth.values().iter().map(|d| d * s).collect();
        depth = DepthSequence::new(depth.frames(), depth.height(), depth.width(), values, depth.valid().to_vec())?;
    }
    fs::create_dir_all(&a.out_dir)?;
    let dir = &a.out_dir;
    write_trajectory(dir.join("trajectory.txt"), &traj)?;
    write_intrinsics(
        dir.join("intrinsics.txt"),
        &CameraInfo {
            intrinsics: r.intrinsics,
            width: p.width(),
            height: p.height(),
        },
    )?;
    write_depth(dir.join("depth.d4d"), &depth)?;
    let mut manifest = String::from("# frame error\n");
    for f in &r.failures {
        writeln!(manifest, "{} {}", f.frame, f.error).unwrap();
    }
    fs::write(dir.join("failures.txt"), &manifest)?;

    let ratios = &r.per_frame_inlier_ratio;
    let mut kv = String::new();
    writeln!(kv, "focal={}\nfocal_iterations={}", r.intrinsics.focal, r.focal.iterations).unwrap();
    writeln!(kv, "frames={}\nsolved_frames={}\nfailed_frames={}", p.frames(), traj.len(), r.failures.len()).unwrap();
    writeln!(kv, "mean_inlier_ratio={}", ratios.iter().sum::<f64>() / ratios.len() as f64).unwrap();
    writeln!(kv, "min_inlier_ratio={}", ratios.iter().copied().fold(f64::INFINITY, f64::min)).unwrap();
    writeln!(kv, "norm_scale={}\nrestored_scale={}", p.norm_scale(), a.restore_scale).unwrap();
    writeln!(text, "recovered {} of {} frames into {}", traj.len(), p.frames(), dir.display()).unwrap();
    text.push_str(&kv);
    write_report(a.report.as_deref(), &kv)?;
    if r.failures.is_empty() {
        Ok(EXIT_OK)
    } else {
        for f in &r.failures {
            writeln!(text, "frame {} failed: {}", f.frame, f.error).unwrap();
        }
        Ok(EXIT_NUMERICAL)
    }
}

pub fn cmd_eval_pose(a: &EvalPoseArgs, text: &mut String) -> CmdResult {
    let pred = read_trajectory(&a.pred)?;
    let gt = read_trajectory(&a.gt)?;
    let (pred, gt) = associate(&pred, &gt);
    let cfg = PoseEvalConfig {
        delta: a.delta,
        ate_statistic: match a.ate {
            AteArg::Rmse => AteStatistic::Rmse,
            AteArg::Mean => AteStatistic::Mean,
        },
    };
    let m = evaluate_poses(&pred, &gt, &cfg).map_err(from_eval)?;
    writeln!(text, "{m}").unwrap();
    writeln!(text, "matched_poses={}", pred.len()).unwrap();
    write_report(a.report.as_deref(), &m.key_values())?;
    Ok(EXIT_OK)
}

pub fn cmd_eval_depth(a: &EvalDepthArgs, text: &mut String) -> CmdResult {
    let pred = read_depth(&a.pred)?;
    let gt = read_depth(&a.gt)?;
    let alignment = match a.alignment {
        AlignArg::Sequence => DepthAlignment::PerSequence,
        AlignArg::Frame => DepthAlignment::PerFrame,
        AlignArg::None => DepthAlignment::None,
    };
    let m = depth_metrics_with(&pred, &gt, alignment).map_err(from_eval)?;
    writeln!(text, "{m}").unwrap();
    writeln!(text, "valid_pixels={}", m.valid_count).unwrap();
    write_report(a.report.as_deref(), &m.key_values())?;
    Ok(EXIT_OK)
}

/// Largest relative error between the analytic gradient and central
/// differences over `instances` random models and inputs.
pub fn gradient_check(dim: usize, cond_dim: usize, instances: usize, seed: u64) -> f64 {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let n_w = dim * (dim + cond_dim + 1);
        let weights: Vec<f64> = (0..n_w).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.5).collect();
        let bias: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let model = LinearVelocityModel::from_parameters(dim, cond_dim, weights.clone(), bias.clone()).expect("sizes match");
        let h = LatentSample::gaussian(dim, &mut rng);
        let eps = LatentSample::gaussian(dim, &mut rng);
        let cond = crate::flow::ConditionSample((0..cond_dim).map(|_| rng.sample(StandardNormal)).collect());
        let t: f64 = rng.random_range(0.0..1.0);
        let g = fm_loss_gradient(&model, &h, &cond, &eps, t).expect("sizes match");
        let analytic: Vec<f64> = g.weights.iter().chain(&g.bias).copied().collect();
        let params: Vec<f64> = weights.iter().chain(&bias).copied().collect();
        let loss_at = |p: &[f64]| {
            let m = LinearVelocityModel::from_parameters(dim, cond_dim, p[..n_w].to_vec(), p[n_w..].to_vec()).unwrap();
            fm_loss(&m, &h, &cond, &eps, t).unwrap()
        };
        let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
        for (k, an) in analytic.iter().enumerate() {
            let step = 1e-5 * params[k].abs().max(1.0);
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus[k] += step;
            minus[k] -= step;
            let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * step);
            worst = worst.max((an - numeric).abs() / an.abs().max(scale * 1e-3));
        }
    }
    worst
}

/// Mean and max ℓ2 distance between the sampler's conditional mean and the
/// closed form. The sampler is affine in its starting noise for a linear
/// field, so its conditional mean is the sample started from zero noise.
pub fn conditional_mean_error(
    model: &LinearVelocityModel,
    toy: &LinearGaussianToy,
    conditions: usize,
    steps: usize,
    seed: u64,
) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zero = LatentSample(vec![0.0; toy.dim]);
    let errs: Vec<f64> = (0..conditions)
        .map(|_| {
            let c = toy.sample_condition(&mut rng);
            let s = euler_sample(model, &c, &zero, steps);
            let m = toy.conditional_mean(&c);
            s.0.iter().zip(&m.0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
        })
        .collect();
    let mean = errs.iter().sum::<f64>() / errs.len().max(1) as f64;
    (mean, errs.iter().copied().fold(0.0, f64::max))
}

pub fn cmd_rf_demo(a: &RfDemoArgs, text: &mut String) -> CmdResult {
    if a.dim == 0 || a.samples == 0 || a.eval_conditions == 0 {
        return Err(Failure::usage("dim, samples and eval-conditions must be positive"));
    }
    if !(a.lr > 0.0) {
        return Err(Failure::usage("learning rate must be positive"));
    }
    let toy = LinearGaussianToy::standard(a.dim, a.cond_dim, a.seed);
    let data = toy.dataset(a.samples, a.seed.wrapping_add(1));
    let init = LinearVelocityModel::zeros(a.dim, a.cond_dim);
    let out = train_toy(&init, &data, a.steps, a.lr, a.seed.wrapping_add(2)).map_err(Failure::usage)?;
    let (losses, model, step) = (out.losses, out.model, out.step);
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Failure::numerical("training diverged; lower --lr"));
    }
    let initial = losses[0];
    let last = *losses.last().unwrap();
    writeln!(text, "step loss").unwrap();
    let stride = (a.steps / 10).max(1);
    for (i, l) in losses.iter().enumerate() {
        if i % stride == 0 || i == a.steps {
            writeln!(text, "{i} {l}").unwrap();
        }
    }
    let (mean_err, max_err) = conditional_mean_error(&model, &toy, a.eval_conditions, a.sampling_steps, a.seed.wrapping_add(3));
    let mut kv = String::new();
    writeln!(kv, "initial_loss={initial}\nfinal_loss={last}\nloss_reduction={}", initial / last).unwrap();
    writeln!(kv, "steps={}\nstep_size={step}\nsampling_steps={}", a.steps, a.sampling_steps).unwrap();
    writeln!(kv, "cond_mean_error_mean={mean_err}\ncond_mean_error_max={max_err}").unwrap();
    if a.grad_check {
        let rel = gradient_check(a.dim, a.cond_dim, 100, a.seed.wrapping_add(4));
        writeln!(kv, "grad_check_max_rel_error={rel}").unwrap();
    }
    text.push_str(&kv);
    write_report(a.report.as_deref(), &kv)?;
    Ok(EXIT_OK)
}

pub fn cmd_loss(a: &LossArgs, text: &mut String) -> CmdResult {
    if a.latent_mean.len() != a.latent_log_var.len() {
        return Err(Failure::usage("latent mean and log-variance lengths differ"));
    }
    if !(a.beta > 0.0) {
        return Err(Failure::usage("beta must be positive"));
    }
    let pred = read_pointmap(&a.pred)?;
    let gt = read_pointmap(&a.gt)?;
    let l = vae_loss(&pred, &gt, &a.latent_mean, &a.latent_log_var, a.beta, a.lambda_kl).map_err(Failure::data)?;
    let mut kv = String::new();
    writeln!(kv, "reconstruction={}\nkl={}\nlambda_kl={}\ntotal={}\nvalid_count={}", l.reconstruction, l.kl, l.lambda_kl, l.total, l.valid_count).unwrap();
    text.push_str(&kv);
    write_report(a.report.as_deref(), &kv)?;
    Ok(EXIT_OK)
}
