//! Trajectory and depth evaluation.
//!
//! Pose metrics follow the usual monocular protocol: the predicted trajectory
//! is aligned to ground truth with a similarity transform before ATE, and the
//! alignment scale is applied before RPE. Depth is aligned with a least-squares
//! scale and shift before Abs Rel and δ < 1.25.

use std::fmt;

use nalgebra::SVD;
use thiserror::Error;

use crate::geometry::{rotation_angle, Mat3, RigidPose, SimTransform, Vec3};
use crate::numeric::{mean, pairwise_sum, rms};
use crate::pointmap::{DepthSequence, Trajectory};

pub const DELTA_THRESHOLD: f64 = 1.25;

/// Relative singular value below which a trajectory counts as collinear.
const COLLINEAR_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("need at least {required} poses, got {found}")]
    TooFewPoses { found: usize, required: usize },
    #[error("trajectory positions are degenerate (coincident or collinear)")]
    DegenerateTrajectory,
    #[error("length mismatch: {pred} predicted vs {gt} ground truth")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("depth sequences have different dimensions")]
    DimensionMismatch,
    #[error("need at least 2 jointly valid pixels, found {0}")]
    TooFewValidPixels(usize),
    #[error("predicted depth is constant over the valid pixels")]
    DegenerateConstantPred,
    #[error("no jointly valid pixels")]
    NoValidPixels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AteStatistic {
    #[default]
    Rmse,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseEvalConfig {
    pub delta: usize,
    pub ate_statistic: AteStatistic,
}

impl Default for PoseEvalConfig {
    fn default() -> Self {
        Self {
            delta: 1,
            ate_statistic: AteStatistic::Rmse,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseMetrics {
    pub ate_rmse: f64,
    pub rpe_trans: f64,
    /// Degrees.
    pub rpe_rot: f64,
}

impl PoseMetrics {
    /// Flat `key=value` lines.
    pub fn key_values(&self) -> String {
        format!("ate={}\nrpe_trans={}\nrpe_rot={}\n", self.ate_rmse, self.rpe_trans, self.rpe_rot)
    }
}

impl fmt::Display for PoseMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>12} {:>12} {:>12}", "ATE", "RPE trans", "RPE rot")?;
        write!(f, "{:>12.6} {:>12.6} {:>12.6}", self.ate_rmse, self.rpe_trans, self.rpe_rot)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub delta_125: f64,
    pub scale: f64,
    pub shift: f64,
    pub valid_count: usize,
}

impl DepthMetrics {
    pub fn key_values(&self) -> String {
        format!(
            "abs_rel={}\ndelta_125={}\nscale={}\nshift={}\n",
            self.abs_rel, self.delta_125, self.scale, self.shift
        )
    }
}

impl fmt::Display for DepthMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>12} {:>12}", "Abs Rel", "δ<1.25")?;
        write!(f, "{:>12.6} {:>12.6}", self.abs_rel, self.delta_125)
    }
}

fn check_lengths(pred: &Trajectory, gt: &Trajectory) -> Result<(), EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    Ok(())
}

fn positions(t: &Trajectory) -> Vec<Vec3> {
    t.poses().iter().map(|p| *p.translation()).collect()
}

/// Least-squares similarity taking predicted camera positions onto ground truth.
pub fn umeyama_align(pred: &Trajectory, gt: &Trajectory) -> Result<SimTransform, EvalError> {
    check_lengths(pred, gt)?;
    if pred.len() < 3 {
        return Err(EvalError::TooFewPoses {
            found: pred.len(),
            required: 3,
        });
    }
    let src = positions(pred);
    let dst = positions(gt);
    let n = src.len() as f64;
    let mu_s = src.iter().sum::<Vec3>() / n;
    let mu_d = dst.iter().sum::<Vec3>() / n;
    let var_s = src.iter().map(|p| (p - mu_s).norm_squared()).sum::<f64>() / n;
    let mut cov = Mat3::zeros();
    let mut spread = Mat3::zeros();
    for (s, d) in src.iter().zip(&dst) {
        cov += (d - mu_d) * (s - mu_s).transpose();
        spread += (s - mu_s) * (s - mu_s).transpose();
    }
    cov /= n;

    let mut spread_sv: Vec<f64> = spread.singular_values().iter().copied().collect();
    spread_sv.sort_by(|a, b| b.total_cmp(a));
    if !(var_s > 0.0) || spread_sv[1] <= COLLINEAR_TOL * spread_sv[0] {
        return Err(EvalError::DegenerateTrajectory);
    }

    let svd = SVD::new(cov, true, true);
    let (u, v_t) = (svd.u.expect("U"), svd.v_t.expect("Vᵀ"));
    let mut s_diag = Mat3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        s_diag[(2, 2)] = -1.0;
    }
    let rotation = u * s_diag * v_t;
    let trace_ds = (0..3).map(|i| svd.singular_values[i] * s_diag[(i, i)]).sum::<f64>();
    let scale = trace_ds / var_s;
    if !(scale > 0.0) {
        return Err(EvalError::DegenerateTrajectory);
    }
    let translation = mu_d - rotation * mu_s * scale;
    SimTransform::new(scale, rotation, translation).map_err(|_| EvalError::DegenerateTrajectory)
}

/// Absolute trajectory error after similarity alignment.
pub fn ate(pred: &Trajectory, gt: &Trajectory) -> Result<f64, EvalError> {
    ate_with(pred, gt, AteStatistic::Rmse)
}

pub fn ate_with(pred: &Trajectory, gt: &Trajectory, stat: AteStatistic) -> Result<f64, EvalError> {
    let sim = umeyama_align(pred, gt)?;
    let errors: Vec<f64> = pred
        .poses()
        .iter()
        .zip(gt.poses())
        .map(|(p, g)| (sim.apply(p.translation()) - g.translation()).norm())
        .collect();
    Ok(match stat {
        AteStatistic::Rmse => rms(&errors),
        AteStatistic::Mean => mean(&errors),
    }
    .unwrap_or(0.0))
}

/// Relative pose error over frame pairs `(i, i + delta)`: translation RMSE
/// (prediction rescaled by the alignment scale) and rotation RMSE in degrees.
pub fn rpe(pred: &Trajectory, gt: &Trajectory, delta: usize) -> Result<(f64, f64), EvalError> {
    check_lengths(pred, gt)?;
    let delta = delta.max(1);
    if pred.len() < delta + 1 {
        return Err(EvalError::TooFewPoses {
            found: pred.len(),
            required: delta + 1,
        });
    }
    let scale = umeyama_align(pred, gt)?.scale();
    let (mut trans, mut rot) = (Vec::new(), Vec::new());
    for i in 0..pred.len() - delta {
        let rel = |t: &Trajectory| t.poses()[i].inverse().compose(&t.poses()[i + delta]);
        let gt_rel = rel(gt);
        let pred_rel = rel(pred).scale_translation(scale);
        let err = gt_rel.inverse().compose(&pred_rel);
        trans.push(err.translation().norm());
        rot.push(rotation_angle(err.rotation()).to_degrees());
    }
    Ok((rms(&trans).unwrap_or(0.0), rms(&rot).unwrap_or(0.0)))
}

pub fn evaluate_poses(pred: &Trajectory, gt: &Trajectory, cfg: &PoseEvalConfig) -> Result<PoseMetrics, EvalError> {
    let ate_rmse = ate_with(pred, gt, cfg.ate_statistic)?;
    let (rpe_trans, rpe_rot) = rpe(pred, gt, cfg.delta)?;
    Ok(PoseMetrics {
        ate_rmse,
        rpe_trans,
        rpe_rot,
    })
}

/// Keeps the poses whose timestamps appear in both trajectories.
pub fn associate(pred: &Trajectory, gt: &Trajectory) -> (Trajectory, Trajectory) {
    let mut p = Vec::new();
    let mut g = Vec::new();
    let mut stamps = Vec::new();
    let mut j = 0;
    for (i, t) in pred.timestamps().iter().enumerate() {
        while j < gt.len() && gt.timestamps()[j] < *t {
            j += 1;
        }
        if j < gt.len() && gt.timestamps()[j] == *t {
            p.push(pred.poses()[i]);
            g.push(gt.poses()[j]);
            stamps.push(*t);
        }
    }
    (
        Trajectory::new(p, stamps.clone()).expect("subset of increasing stamps"),
        Trajectory::new(g, stamps).expect("subset of increasing stamps"),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DepthAlignment {
    None,
    #[default]
    PerSequence,
    PerFrame,
}

fn joint_pairs(pred: &DepthSequence, gt: &DepthSequence, frame: Option<usize>) -> Vec<(f64, f64)> {
    let range = match frame {
        Some(i) => i * pred.pixels_per_frame()..(i + 1) * pred.pixels_per_frame(),
        None => 0..pred.values().len(),
    };
    range
        .filter(|&i| pred.valid()[i] && gt.valid()[i])
        .map(|i| (pred.values()[i], gt.values()[i]))
        .collect()
}

fn fit_scale_shift(pairs: &[(f64, f64)]) -> Result<(f64, f64), EvalError> {
    if pairs.len() < 2 {
        return Err(EvalError::TooFewValidPixels(pairs.len()));
    }
    let n = pairs.len() as f64;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mx = pairwise_sum(&xs) / n;
    let my = pairwise_sum(&ys) / n;
    let sxx: Vec<f64> = xs.iter().map(|x| (x - mx) * (x - mx)).collect();
    let sxy: Vec<f64> = pairs.iter().map(|(x, y)| (x - mx) * (y - my)).collect();
    let var = pairwise_sum(&sxx);
    let max_abs = xs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if !(var > (1e-12 * max_abs).powi(2) * n) {
        return Err(EvalError::DegenerateConstantPred);
    }
    let scale = pairwise_sum(&sxy) / var;
    Ok((scale, my - scale * mx))
}

/// One least-squares `(scale, shift)` over the whole sequence so that
/// `scale·pred + shift ≈ gt`.
pub fn depth_align_scale_shift(pred: &DepthSequence, gt: &DepthSequence) -> Result<(f64, f64), EvalError> {
    if !pred.same_shape(gt) {
        return Err(EvalError::DimensionMismatch);
    }
    fit_scale_shift(&joint_pairs(pred, gt, None))
}

fn accumulate(pairs: &[(f64, f64)], scale: f64, shift: f64, rel: &mut Vec<f64>, inliers: &mut usize) {
    for (p, g) in pairs {
        if *g <= 0.0 {
            continue;
        }
        let a = scale * p + shift;
        rel.push((a - g).abs() / g);
        if a > 0.0 && (a / g).max(g / a) < DELTA_THRESHOLD {
            *inliers += 1;
        }
    }
}

pub fn depth_metrics(pred: &DepthSequence, gt: &DepthSequence) -> Result<DepthMetrics, EvalError> {
    depth_metrics_with(pred, gt, DepthAlignment::PerSequence)
}

pub fn depth_metrics_with(pred: &DepthSequence, gt: &DepthSequence, alignment: DepthAlignment) -> Result<DepthMetrics, EvalError> {
    if !pred.same_shape(gt) {
        return Err(EvalError::DimensionMismatch);
    }
    let mut rel = Vec::new();
    let mut inliers = 0usize;
    let (scale, shift) = match alignment {
        DepthAlignment::None => {
            accumulate(&joint_pairs(pred, gt, None), 1.0, 0.0, &mut rel, &mut inliers);
            (1.0, 0.0)
        }
        DepthAlignment::PerSequence => {
            let pairs = joint_pairs(pred, gt, None);
            if pairs.is_empty() {
                return Err(EvalError::NoValidPixels);
            }
            let (s, b) = fit_scale_shift(&pairs)?;
            accumulate(&pairs, s, b, &mut rel, &mut inliers);
            (s, b)
        }
        DepthAlignment::PerFrame => {
            let mut fits = Vec::new();
            for i in 0..pred.frames() {
                let pairs = joint_pairs(pred, gt, Some(i));
                if pairs.is_empty() {
                    continue;
                }
                let (s, b) = fit_scale_shift(&pairs)?;
                accumulate(&pairs, s, b, &mut rel, &mut inliers);
                fits.push((s, b));
            }
            let n = fits.len().max(1) as f64;
            (
                fits.iter().map(|f| f.0).sum::<f64>() / n,
                fits.iter().map(|f| f.1).sum::<f64>() / n,
            )
        }
    };
    if rel.is_empty() {
        return Err(EvalError::NoValidPixels);
    }
    Ok(DepthMetrics {
        abs_rel: pairwise_sum(&rel) / rel.len() as f64,
        delta_125: inliers as f64 / rel.len() as f64,
        scale,
        shift,
        valid_count: rel.len(),
    })
}

/// Applies a similarity to every pose of a trajectory.
pub fn transform_trajectory(t: &Trajectory, sim: &SimTransform) -> Trajectory {
    t.map_poses(|p| sim.apply_to_pose(p))
}

/// Left-multiplies every pose by a rigid transform.
pub fn rigidly_move(t: &Trajectory, g: &RigidPose) -> Trajectory {
    t.map_poses(|p| g.compose(p))
}
