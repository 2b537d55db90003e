//! Recovery of intrinsics, camera poses and depth from a pointmap sequence.
//!
//! Frame 0 is the world frame, so its pointmap is already in camera
//! coordinates and fixes the focal length. Every later frame is registered to
//! its own world points with RANSAC PnP, and depth is read off as the camera
//! z coordinate of each point.

use nalgebra::{DMatrix, Matrix3x4, Matrix6, Vector6};
use rand::seq::index::sample as sample_indices;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{exp_so3, nearest_rotation, skew, Intrinsics, Mat3, Pixel, RigidPose, Vec3, MIN_DEPTH};
use crate::pointmap::{DepthSequence, PointmapFrame, PointmapSequence, Trajectory, INVALID_DEPTH};

/// Resolution at which [`RansacConfig::inlier_threshold`] is expressed.
pub const REFERENCE_WIDTH: usize = 512;
pub const REFERENCE_HEIGHT: usize = 384;

/// Minimum number of correspondences for the linear pose solver.
pub const DLT_MIN_POINTS: usize = 6;

const MIN_FOCAL_POINTS: usize = 10;
const WEISZFELD_FLOOR: f64 = 1e-9;
const MIN_CONSENSUS: f64 = 0.1;
const DLT_RANK_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecoveryError {
    #[error("pointmap has no frames")]
    EmptySequence,
    #[error("found {found} usable points, need at least {required}")]
    TooFewValidPoints { found: usize, required: usize },
    #[error("all points lie on the optical axis")]
    AllPointsDegenerate,
    #[error("focal estimate is not positive ({0})")]
    NonPositiveFocal(f64),
    #[error("every minimal sample was degenerate")]
    DegenerateConfiguration,
    #[error("best inlier ratio {ratio:.3} is below the consensus floor")]
    NoConsensus { ratio: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Pixels at 512×384; scaled with the image diagonal.
    pub inlier_threshold: f64,
    pub min_sample: usize,
    pub seed: u64,
    pub refine: bool,
    /// Upper bound on correspondences scored per hypothesis.
    pub max_scoring_points: usize,
    pub refine_iterations: usize,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 512,
            inlier_threshold: 2.0,
            min_sample: DLT_MIN_POINTS,
            seed: 0,
            refine: true,
            max_scoring_points: 5000,
            refine_iterations: 20,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), RecoveryError> {
        if self.iterations == 0 {
            return Err(RecoveryError::InvalidConfig("iterations must be at least 1"));
        }
        if !(self.inlier_threshold > 0.0) {
            return Err(RecoveryError::InvalidConfig("inlier threshold must be positive"));
        }
        if self.min_sample < DLT_MIN_POINTS {
            return Err(RecoveryError::InvalidConfig("minimal sample must hold at least 6 points"));
        }
        if self.max_scoring_points < self.min_sample {
            return Err(RecoveryError::InvalidConfig("scoring subset smaller than minimal sample"));
        }
        Ok(())
    }

    pub fn effective_threshold(&self, width: usize, height: usize) -> f64 {
        let diag = ((width * width + height * height) as f64).sqrt();
        let reference = ((REFERENCE_WIDTH * REFERENCE_WIDTH + REFERENCE_HEIGHT * REFERENCE_HEIGHT) as f64).sqrt();
        self.inlier_threshold * diag / reference
    }

    /// Same settings with the seed for frame `frame`, independent of
    /// processing order.
    pub fn for_frame(&self, frame: usize) -> RansacConfig {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(frame as u64);
        RansacConfig {
            seed: rng.next_u64(),
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalConfig {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RecoveryConfig {
    pub ransac: RansacConfig,
    pub focal: FocalConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FocalEstimate {
    pub focal: f64,
    pub iterations: usize,
    /// Objective at the initial estimate and after every update.
    pub objective: Vec<f64>,
}

/// Minimizes `Σ‖a − f·b‖` over the scalar `f` by iteratively reweighted least
/// squares, starting from the least-squares solution.
pub fn weiszfeld_focal(a: &[[f64; 2]], b: &[[f64; 2]], max_iters: usize, tol: f64) -> Result<FocalEstimate, RecoveryError> {
    assert_eq!(a.len(), b.len());
    let dot = |x: &[f64; 2], y: &[f64; 2]| x[0] * y[0] + x[1] * y[1];
    let bb: f64 = b.iter().map(|v| dot(v, v)).sum();
    if bb <= f64::MIN_POSITIVE {
        return Err(RecoveryError::AllPointsDegenerate);
    }
    let objective = |f: f64| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| ((x[0] - f * y[0]).powi(2) + (x[1] - f * y[1]).powi(2)).sqrt())
            .sum()
    };
    let mut f = a.iter().zip(b).map(|(x, y)| dot(x, y)).sum::<f64>() / bb;
    let mut history = vec![objective(f)];
    let mut iterations = 0;
    while iterations < max_iters {
        let (mut num, mut den) = (0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            let r = ((x[0] - f * y[0]).powi(2) + (x[1] - f * y[1]).powi(2)).sqrt();
            let w = 1.0 / r.max(WEISZFELD_FLOOR);
            num += w * dot(x, y);
            den += w * dot(y, y);
        }
        let next = num / den;
        iterations += 1;
        let delta = (next - f).abs();
        f = next;
        history.push(objective(f));
        if delta <= tol * f.abs() {
            break;
        }
    }
    if !(f > 0.0) {
        return Err(RecoveryError::NonPositiveFocal(f));
    }
    Ok(FocalEstimate {
        focal: f,
        iterations,
        objective: history,
    })
}

/// Focal length from the frame-0 pointmap, principal point at the image center.
pub fn estimate_focal(frame: &PointmapFrame<'_>, max_iters: usize, tol: f64) -> Result<FocalEstimate, RecoveryError> {
    let (cx, cy) = (frame.width as f64 / 2.0, frame.height as f64 / 2.0);
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (col, row, p) in frame.valid_pixels() {
        if p.z > MIN_DEPTH {
            let px = Pixel::center(col, row);
            a.push([px.u - cx, px.v - cy]);
            b.push([p.x / p.z, p.y / p.z]);
        }
    }
    if a.len() < MIN_FOCAL_POINTS {
        return Err(RecoveryError::TooFewValidPoints {
            found: a.len(),
            required: MIN_FOCAL_POINTS,
        });
    }
    weiszfeld_focal(&a, &b, max_iters, tol)
}

/// A world point and where it was observed, in normalized image coordinates.
#[derive(Debug, Clone, Copy)]
struct Correspondence {
    world: Vec3,
    image: [f64; 2],
}

/// World-to-camera transform used internally while solving.
#[derive(Debug, Clone, Copy)]
struct CameraFromWorld {
    rotation: Mat3,
    translation: Vec3,
}

impl CameraFromWorld {
    fn to_cam(self, x: &Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }

    /// Reprojection error in normalized units, `None` behind the camera.
    fn residual(&self, c: &Correspondence) -> Option<[f64; 2]> {
        let p = self.to_cam(&c.world);
        (p.z > MIN_DEPTH).then(|| [p.x / p.z - c.image[0], p.y / p.z - c.image[1]])
    }

    fn is_inlier(&self, c: &Correspondence, threshold: f64) -> bool {
        self.residual(c)
            .is_some_and(|r| r[0] * r[0] + r[1] * r[1] < threshold * threshold)
    }

    fn camera_to_world(&self) -> RigidPose {
        let rt = self.rotation.transpose();
        RigidPose::from_approx(&rt, -(rt * self.translation))
    }
}

/// Linear pose from ≥ 6 correspondences, projected onto SO(3).
fn solve_dlt(sample: &[Correspondence]) -> Option<CameraFromWorld> {
    let n = sample.len() as f64;
    let centroid = sample.iter().fold(Vec3::zeros(), |acc, c| acc + c.world) / n;
    let spread = sample.iter().map(|c| (c.world - centroid).norm()).sum::<f64>() / n;
    if !(spread > 0.0) {
        return None;
    }
    let scale = spread / 3f64.sqrt();
    let mut a = DMatrix::<f64>::zeros(2 * sample.len(), 12);
    for (i, c) in sample.iter().enumerate() {
        let x = (c.world - centroid) / scale;
        let xh = [x.x, x.y, x.z, 1.0];
        let [u, v] = c.image;
        for j in 0..4 {
            a[(2 * i, j)] = xh[j];
            a[(2 * i, 8 + j)] = -u * xh[j];
            a[(2 * i + 1, 4 + j)] = xh[j];
            a[(2 * i + 1, 8 + j)] = -v * xh[j];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    if order.len() < 12 {
        return None;
    }
    let largest = svd.singular_values[order[0]];
    if !(svd.singular_values[order[10]] > DLT_RANK_TOL * largest) {
        return None;
    }
    let null = v_t.row(order[11]);
    let mut m = Matrix3x4::from_fn(|r, c| null[4 * r + c]);
    let mut left = m.fixed_view::<3, 3>(0, 0).into_owned();
    if left.determinant() < 0.0 {
        m = -m;
        left = -left;
    }
    let sv = left.svd(true, true);
    let rotation = sv.u? * sv.v_t?;
    let sigma = sv.singular_values.mean();
    if !(sigma > 0.0) || rotation.determinant() <= 0.0 {
        return None;
    }
    // m = λ[s·R | R·c + t] with λ·s = sigma
    let offset = m.column(3).into_owned() * (scale / sigma);
    let translation = offset - rotation * centroid;
    let pose = CameraFromWorld {
        rotation: nearest_rotation(&rotation),
        translation,
    };
    sample
        .iter()
        .all(|c| pose.to_cam(&c.world).z > MIN_DEPTH)
        .then_some(pose)
}

/// Gauss-Newton on the summed squared reprojection error (left perturbation).
fn refine_pose(pose: CameraFromWorld, points: &[Correspondence], iterations: usize) -> CameraFromWorld {
    let cost = |p: &CameraFromWorld| -> f64 {
        points
            .iter()
            .map(|c| p.residual(c).map_or(0.0, |r| r[0] * r[0] + r[1] * r[1]))
            .sum()
    };
    let mut current = pose;
    let mut current_cost = cost(&current);
    for _ in 0..iterations {
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for c in points {
            let p = current.to_cam(&c.world);
            if p.z <= MIN_DEPTH {
                continue;
            }
            let iz = 1.0 / p.z;
            let r = [p.x * iz - c.image[0], p.y * iz - c.image[1]];
            // d(proj)/dp, then dp/d(rho, phi) = [I | -[p]x]
            let dproj = nalgebra::Matrix2x3::new(iz, 0.0, -p.x * iz * iz, 0.0, iz, -p.y * iz * iz);
            let mut dp = nalgebra::Matrix3x6::<f64>::zeros();
            dp.fixed_view_mut::<3, 3>(0, 0).copy_from(&Mat3::identity());
            dp.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-skew(&p)));
            let j = dproj * dp;
            let rv = nalgebra::Vector2::new(r[0], r[1]);
            h += j.transpose() * j;
            g += j.transpose() * rv;
        }
        let Some(chol) = h.cholesky() else { break };
        let delta = -chol.solve(&g);
        let rho = Vec3::new(delta[0], delta[1], delta[2]);
        let phi = Vec3::new(delta[3], delta[4], delta[5]);
        let dr = exp_so3(&phi);
        let candidate = CameraFromWorld {
            rotation: nearest_rotation(&(dr * current.rotation)),
            translation: dr * current.translation + rho,
        };
        let candidate_cost = cost(&candidate);
        if !(candidate_cost < current_cost) {
            break;
        }
        let converged = delta.norm() < 1e-14;
        current = candidate;
        current_cost = candidate_cost;
        if converged {
            break;
        }
    }
    current
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseEstimate {
    /// Camera-to-world.
    pub pose: RigidPose,
    /// Inliers over all valid pixels of the frame.
    pub inlier_ratio: f64,
    pub inliers: usize,
    pub valid: usize,
}

/// RANSAC PnP for one frame: the camera-to-world pose that best explains the
/// frame's pixel grid given its world points.
pub fn estimate_pose_pnp(frame: &PointmapFrame<'_>, k: &Intrinsics, cfg: &RansacConfig) -> Result<PoseEstimate, RecoveryError> {
    cfg.validate()?;
    let correspondences: Vec<Correspondence> = frame
        .valid_pixels()
        .map(|(col, row, p)| {
            let px = Pixel::center(col, row);
            Correspondence {
                world: *p,
                image: [(px.u - k.cx) / k.focal, (px.v - k.cy) / k.focal],
            }
        })
        .collect();
    let total = correspondences.len();
    if total < cfg.min_sample {
        return Err(RecoveryError::TooFewValidPoints {
            found: total,
            required: cfg.min_sample,
        });
    }
    let threshold = cfg.effective_threshold(frame.width, frame.height) / k.focal;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let scoring: Vec<Correspondence> = if total > cfg.max_scoring_points {
        let mut idx = sample_indices(&mut rng, total, cfg.max_scoring_points).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| correspondences[i]).collect()
    } else {
        correspondences.clone()
    };

    let mut best: Option<(usize, CameraFromWorld)> = None;
    let mut sample = Vec::with_capacity(cfg.min_sample);
    for _ in 0..cfg.iterations {
        sample.clear();
        sample.extend(
            sample_indices(&mut rng, scoring.len(), cfg.min_sample)
                .into_iter()
                .map(|i| scoring[i]),
        );
        let Some(hypothesis) = solve_dlt(&sample) else { continue };
        let count = scoring.iter().filter(|c| hypothesis.is_inlier(c, threshold)).count();
        if best.as_ref().is_none_or(|(n, _)| count > *n) {
            best = Some((count, hypothesis));
        }
    }
    let (best_count, mut pose) = best.ok_or(RecoveryError::DegenerateConfiguration)?;
    let ratio = best_count as f64 / scoring.len() as f64;
    if ratio < MIN_CONSENSUS {
        return Err(RecoveryError::NoConsensus { ratio });
    }

    if cfg.refine {
        for _ in 0..2 {
            let inliers: Vec<Correspondence> = correspondences
                .iter()
                .copied()
                .filter(|c| pose.is_inlier(c, threshold))
                .collect();
            if inliers.len() < cfg.min_sample {
                break;
            }
            pose = refine_pose(pose, &inliers, cfg.refine_iterations);
        }
    }
    let inliers = correspondences.iter().filter(|c| pose.is_inlier(c, threshold)).count();
    Ok(PoseEstimate {
        pose: pose.camera_to_world(),
        inlier_ratio: inliers as f64 / total as f64,
        inliers,
        valid: total,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameFailure {
    pub frame: usize,
    pub error: RecoveryError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryResult {
    pub intrinsics: Intrinsics,
    pub focal: FocalEstimate,
    /// Camera-to-world per frame; `None` where the frame could not be solved.
    pub poses: Vec<Option<RigidPose>>,
    pub depth: DepthSequence,
    pub per_frame_inlier_ratio: Vec<f64>,
    pub failures: Vec<FrameFailure>,
}

impl RecoveryResult {
    /// Solved frames only, stamped `frame_index × frame_interval`.
    pub fn solved_trajectory(&self, frame_interval: f64) -> Trajectory {
        let (poses, stamps): (Vec<_>, Vec<_>) = self
            .poses
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.map(|p| (p, i as f64 * frame_interval)))
            .unzip();
        Trajectory::new(poses, stamps).expect("frame stamps increase")
    }

    pub fn failed_frames(&self) -> Vec<usize> {
        self.failures.iter().map(|f| f.frame).collect()
    }
}

/// Focal from frame 0, PnP for every later frame, then per-pixel depth.
///
/// Frames that fail PnP are reported in `failures`; their depth is invalid.
pub fn recover_all(p: &PointmapSequence, cfg: &RecoveryConfig) -> Result<RecoveryResult, RecoveryError> {
    if p.frames() == 0 {
        return Err(RecoveryError::EmptySequence);
    }
    cfg.ransac.validate()?;
    let focal = estimate_focal(&p.frame(0), cfg.focal.max_iters, cfg.focal.tol)?;
    let k = Intrinsics::centered(focal.focal, p.width(), p.height()).map_err(|_| RecoveryError::NonPositiveFocal(focal.focal))?;

    let solved: Vec<Result<PoseEstimate, RecoveryError>> = (0..p.frames())
        .into_par_iter()
        .map(|i| {
            if i == 0 {
                let valid = p.frame(0).valid.iter().filter(|v| **v).count();
                Ok(PoseEstimate {
                    pose: RigidPose::identity(),
                    inlier_ratio: 1.0,
                    inliers: valid,
                    valid,
                })
            } else {
                estimate_pose_pnp(&p.frame(i), &k, &cfg.ransac.for_frame(i))
            }
        })
        .collect();

    let mut poses = Vec::with_capacity(p.frames());
    let mut ratios = Vec::with_capacity(p.frames());
    let mut failures = Vec::new();
    for (frame, result) in solved.into_iter().enumerate() {
        match result {
            Ok(est) => {
                poses.push(Some(est.pose));
                ratios.push(est.inlier_ratio);
            }
            Err(error) => {
                poses.push(None);
                ratios.push(0.0);
                failures.push(FrameFailure { frame, error });
            }
        }
    }

    let per_frame = p.pixels_per_frame();
    let mut values = vec![INVALID_DEPTH; p.points().len()];
    let mut valid = vec![false; p.points().len()];
    values
        .par_chunks_mut(per_frame.max(1))
        .zip(valid.par_chunks_mut(per_frame.max(1)))
        .enumerate()
        .for_each(|(i, (vals, oks))| {
            let Some(pose) = poses[i] else { return };
            let to_cam = pose.inverse();
            let frame = p.frame(i);
            for j in 0..per_frame {
                if frame.valid[j] {
                    let z = to_cam.transform_point(&frame.points[j]).z;
                    if z > 0.0 {
                        vals[j] = z;
                        oks[j] = true;
                    }
                }
            }
        });
    let depth = DepthSequence::new(p.frames(), p.height(), p.width(), values, valid).expect("recovered depth is positive");

    Ok(RecoveryResult {
        intrinsics: k,
        focal,
        poses,
        depth,
        per_frame_inlier_ratio: ratios,
        failures,
    })
}
