//! Seeded synthetic dynamic scenes with exact ground truth.
//!
//! The scene is an open-topped room of axis-aligned rectangular panels plus
//! spheres that translate and spin over time. Each pixel ray is intersected
//! in closed form, so depth, poses and pointmaps are exact. Rays that escape
//! through the open top are invalid pixels.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{axis_angle, exp_so3, Intrinsics, Mat3, Pixel, RigidPose, Vec3};
use crate::io::{format_trajectory, parse_trajectory};
use crate::pointmap::{build_pointmap, rebase_to_first_frame, DepthSequence, PointmapError, PointmapSequence, Trajectory};

/// Median frame-0 depth after rescaling.
pub const TARGET_MEDIAN_DEPTH: f64 = 5.0;

const HIT_EPS: f64 = 1e-9;
const NOISE_STREAM_SALT: u64 = 0x5EED_0FC0_FFEE;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("frame {0} sees no geometry")]
    NoGeometryVisible(usize),
    #[error(transparent)]
    Pointmap(#[from] PointmapError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CameraPath {
    #[default]
    Orbit,
    Line,
    Spline,
}

impl std::str::FromStr for CameraPath {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "orbit" => Ok(Self::Orbit),
            "line" => Ok(Self::Line),
            "spline" => Ok(Self::Spline),
            other => Err(format!("unknown camera path '{other}' (orbit, line, spline)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub n_frames: usize,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub n_static_planes: usize,
    pub n_dynamic_spheres: usize,
    pub camera_path: CameraPath,
    /// Multiplies sphere velocities and spin rates; 0 freezes them.
    pub motion_scale: f64,
    /// Fraction of valid points replaced by far outliers in `observed`.
    pub outlier_fraction: f64,
    /// Gaussian noise on `observed`, as a fraction of the scene scale.
    pub depth_noise_sigma: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_frames: 17,
            width: 512,
            height: 384,
            focal: 500.0,
            n_static_planes: 4,
            n_dynamic_spheres: 2,
            camera_path: CameraPath::Orbit,
            motion_scale: 1.0,
            outlier_fraction: 0.0,
            depth_noise_sigma: 0.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        if self.n_frames < 1 {
            return bad("n_frames must be at least 1");
        }
        if self.width < 16 || self.height < 16 {
            return bad("width and height must be at least 16");
        }
        if !(self.focal.is_finite() && self.focal > 0.0) {
            return bad("focal must be positive");
        }
        if !(self.motion_scale.is_finite() && self.motion_scale >= 0.0) {
            return bad("motion_scale must be non-negative");
        }
        if !(0.0..0.5).contains(&self.outlier_fraction) {
            return bad("outlier_fraction must be in [0, 0.5)");
        }
        if !(self.depth_noise_sigma.is_finite() && self.depth_noise_sigma >= 0.0) {
            return bad("depth_noise_sigma must be non-negative");
        }
        Ok(())
    }
}

/// Axis-aligned rectangle `x[axis] = offset`, bounded on the other two axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Panel {
    pub axis: usize,
    pub offset: f64,
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Panel {
    fn other_axes(&self) -> [usize; 2] {
        match self.axis {
            0 => [1, 2],
            1 => [0, 2],
            _ => [0, 1],
        }
    }

    fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let d = dir[self.axis];
        if d.abs() < 1e-15 {
            return None;
        }
        let lambda = (self.offset - origin[self.axis]) / d;
        if lambda <= HIT_EPS {
            return None;
        }
        let [a, b] = self.other_axes();
        let pa = origin[a] + lambda * dir[a];
        let pb = origin[b] + lambda * dir[b];
        (pa >= self.min[0] && pa <= self.max[0] && pb >= self.min[1] && pb <= self.max[1]).then_some(lambda)
    }

    fn scaled(&self, s: f64) -> Panel {
        Panel {
            axis: self.axis,
            offset: self.offset * s,
            min: [self.min[0] * s, self.min[1] * s],
            max: [self.max[0] * s, self.max[1] * s],
        }
    }
}

/// Sphere with constant linear velocity and spin, per frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MovingSphere {
    pub center: Vec3,
    pub radius: f64,
    pub velocity: Vec3,
    /// Rotation vector applied per frame.
    pub spin: Vec3,
}

impl MovingSphere {
    pub fn center_at(&self, frame: usize) -> Vec3 {
        self.center + self.velocity * frame as f64
    }

    pub fn rotation_at(&self, frame: usize) -> Mat3 {
        exp_so3(&(self.spin * frame as f64))
    }

    pub fn is_moving(&self) -> bool {
        self.velocity != Vec3::zeros() || self.spin != Vec3::zeros()
    }

    fn intersect(&self, frame: usize, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let oc = origin - self.center_at(frame);
        let a = dir.norm_squared();
        let b = oc.dot(dir);
        let c = oc.norm_squared() - self.radius * self.radius;
        let disc = b * b - a * c;
        if disc < 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        [(-b - sq) / a, (-b + sq) / a].into_iter().find(|l| *l > HIT_EPS)
    }
}

/// What a pixel ray hit first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surface {
    Panel(usize),
    Sphere(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub depth: DepthSequence,
    pub trajectory: Trajectory,
    pub intrinsics: Intrinsics,
    pub gt_pointmap: PointmapSequence,
    /// `gt_pointmap` after the spec's outlier and noise corruption.
    pub observed: PointmapSequence,
    pub dynamic_mask: Vec<bool>,
    pub panels: Vec<Panel>,
    pub spheres: Vec<MovingSphere>,
    pub hits: Vec<Option<Surface>>,
}

impl SyntheticScene {
    /// World position at `other_frame` of the surface point seen at
    /// (`frame`, `row`, `col`).
    pub fn track_point(&self, frame: usize, row: usize, col: usize, other_frame: usize) -> Option<Vec3> {
        let i = self.gt_pointmap.index(frame, row, col);
        let p = *self.gt_pointmap.get(frame, row, col)?;
        match self.hits[i]? {
            Surface::Panel(_) => Some(p),
            Surface::Sphere(k) => {
                let s = &self.spheres[k];
                let body = s.rotation_at(frame).transpose() * (p - s.center_at(frame));
                Some(s.rotation_at(other_frame) * body + s.center_at(other_frame))
            }
        }
    }

    /// Scene scale used for corruption: mean valid-point distance to the origin.
    pub fn scale(&self) -> f64 {
        self.gt_pointmap.mean_distance().unwrap_or(1.0)
    }
}

fn room_panels(count: usize, rng: &mut impl Rng) -> Vec<Panel> {
    let fixed = [
        // back wall, floor (y points down), left and right walls
        Panel { axis: 2, offset: 9.0, min: [-5.0, -3.0], max: [5.0, 2.0] },
        Panel { axis: 1, offset: 2.0, min: [-5.0, -3.0], max: [5.0, 9.0] },
        Panel { axis: 0, offset: -5.0, min: [-3.0, -3.0], max: [2.0, 9.0] },
        Panel { axis: 0, offset: 5.0, min: [-3.0, -3.0], max: [2.0, 9.0] },
    ];
    let mut panels: Vec<Panel> = fixed.into_iter().take(count).collect();
    while panels.len() < count {
        let (hx, hy) = (rng.random_range(0.4..1.2), rng.random_range(0.4..1.2));
        let (cx, cy) = (rng.random_range(-3.0..3.0), rng.random_range(-1.5..1.0));
        panels.push(if rng.random_bool(0.5) {
            Panel { axis: 2, offset: rng.random_range(4.0..7.5), min: [cx - hx, cy - hy], max: [cx + hx, cy + hy] }
        } else {
            let cz = rng.random_range(4.0..7.0);
            Panel { axis: 0, offset: cx, min: [cy - hy, cz - hx], max: [cy + hy, cz + hx] }
        });
    }
    panels
}

fn random_spheres(count: usize, motion_scale: f64, rng: &mut impl Rng) -> Vec<MovingSphere> {
    (0..count)
        .map(|_| {
            let center = Vec3::new(rng.random_range(-2.5..2.5), rng.random_range(-1.5..1.0), rng.random_range(4.0..7.5));
            let radius = rng.random_range(0.5..1.0);
            let dir = unit_vector(rng);
            let axis = unit_vector(rng);
            MovingSphere {
                center,
                radius,
                velocity: dir * (0.06 * motion_scale),
                spin: axis * (4f64.to_radians() * motion_scale),
            }
        })
        .collect()
}

fn unit_vector(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

/// Camera-to-world rotation looking along `forward`, with image y pointing
/// down (world −y is up).
fn look_rotation(forward: &Vec3) -> Mat3 {
    let f = forward.normalize();
    let up = Vec3::new(0.0, -1.0, 0.0);
    let right = f.cross(&up).normalize();
    let down = f.cross(&right);
    Mat3::from_columns(&[right, down, f])
}

fn catmull_rom(p: &[Vec3; 4], t: f64) -> Vec3 {
    let t2 = t * t;
    let t3 = t2 * t;
    (p[1] * 2.0 + (p[2] - p[0]) * t + (p[0] * 2.0 - p[1] * 5.0 + p[2] * 4.0 - p[3]) * t2 + (p[1] * 3.0 - p[0] - p[2] * 3.0 + p[3]) * t3) * 0.5
}

/// Per-frame orbit step of the orbit path, radians.
pub const ORBIT_STEP: f64 = std::f64::consts::PI / 180.0;
const ORBIT_RADIUS: f64 = 6.0;

fn camera_poses(path: CameraPath, n: usize, rng: &mut impl Rng) -> Vec<RigidPose> {
    match path {
        CameraPath::Orbit => (0..n)
            .map(|i| {
                let r = axis_angle(&Vec3::y(), ORBIT_STEP * i as f64);
                let pivot = Vec3::new(0.0, 0.0, ORBIT_RADIUS);
                RigidPose::new(r, pivot + r * Vec3::new(0.0, 0.0, -ORBIT_RADIUS)).expect("orbit rotation")
            })
            .collect(),
        CameraPath::Line => (0..n)
            .map(|i| RigidPose::from_translation(Vec3::new(0.08, 0.0, 0.04) * i as f64))
            .collect(),
        CameraPath::Spline => {
            let mut jitter = || Vec3::new(rng.random_range(-0.6..0.6), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.6));
            let ctrl = [Vec3::zeros() - Vec3::new(0.3, 0.0, 0.0), Vec3::zeros(), jitter(), jitter()];
            let targets = [Vec3::new(0.0, 0.0, 6.0), Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5), 6.0)];
            (0..n)
                .map(|i| {
                    let s = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
                    let c = catmull_rom(&ctrl, s);
                    let target = targets[0] * (1.0 - s) + targets[1] * s;
                    RigidPose::from_approx(&look_rotation(&(target - c)), c)
                })
                .collect()
        }
    }
}

fn cast(panels: &[Panel], spheres: &[MovingSphere], frame: usize, origin: &Vec3, dir: &Vec3) -> Option<(f64, Surface)> {
    let mut best: Option<(f64, Surface)> = None;
    let mut consider = |hit: Option<f64>, s: Surface| {
        if let Some(l) = hit {
            if best.is_none_or(|(b, _)| l < b) {
                best = Some((l, s));
            }
        }
    };
    for (i, p) in panels.iter().enumerate() {
        consider(p.intersect(origin, dir), Surface::Panel(i));
    }
    for (i, s) in spheres.iter().enumerate() {
        consider(s.intersect(frame, origin, dir), Surface::Sphere(i));
    }
    best
}

/// Renders z-depth for one frame on every `stride`-th pixel.
fn render_frame(
    panels: &[Panel],
    spheres: &[MovingSphere],
    pose: &RigidPose,
    k: &Intrinsics,
    frame: usize,
    (w, h): (usize, usize),
    stride: usize,
) -> Vec<Option<(f64, Surface)>> {
    let origin = *pose.translation();
    (0..h)
        .step_by(stride)
        .flat_map(|row| (0..w).step_by(stride).map(move |col| (row, col)))
        .map(|(row, col)| {
            let px = Pixel::center(col, row);
            // unit z component, so the ray parameter is the camera z-depth
            let dir_cam = Vec3::new((px.u - k.cx) / k.focal, (px.v - k.cy) / k.focal, 1.0);
            cast(panels, spheres, frame, &origin, &(pose.rotation() * dir_cam))
        })
        .collect()
}

pub fn generate(spec: &SceneSpec) -> Result<SyntheticScene, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let panels = room_panels(spec.n_static_planes, &mut rng);
    let spheres = random_spheres(spec.n_dynamic_spheres, spec.motion_scale, &mut rng);
    let raw = Trajectory::from_poses(camera_poses(spec.camera_path, spec.n_frames, &mut rng));
    let trajectory = rebase_to_first_frame(&raw)?;
    let k = Intrinsics::centered(spec.focal, spec.width, spec.height).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    let dims = (spec.width, spec.height);

    // rescale so that the median frame-0 depth lands on the target
    let preview = render_frame(&panels, &spheres, &trajectory.poses()[0], &k, 0, dims, 4);
    let mut depths: Vec<f64> = preview.iter().flatten().map(|(d, _)| *d).collect();
    if depths.is_empty() {
        return Err(SynthError::NoGeometryVisible(0));
    }
    depths.sort_by(f64::total_cmp);
    let s = TARGET_MEDIAN_DEPTH / depths[depths.len() / 2];
    let panels: Vec<Panel> = panels.iter().map(|p| p.scaled(s)).collect();
    let spheres: Vec<MovingSphere> = spheres
        .iter()
        .map(|m| MovingSphere {
            center: m.center * s,
            radius: m.radius * s,
            velocity: m.velocity * s,
            spin: m.spin,
        })
        .collect();
    let trajectory = trajectory.map_poses(|p| p.scale_translation(s));

    let frames: Vec<Vec<Option<(f64, Surface)>>> = (0..spec.n_frames)
        .into_par_iter()
        .map(|i| render_frame(&panels, &spheres, &trajectory.poses()[i], &k, i, dims, 1))
        .collect();
    if let Some(i) = frames.iter().position(|f| f.iter().all(Option::is_none)) {
        return Err(SynthError::NoGeometryVisible(i));
    }
    let hits: Vec<Option<Surface>> = frames.iter().flatten().map(|h| h.map(|(_, s)| s)).collect();
    // f32-representable depth and a text-stable trajectory, so the scene
    // survives a trip through files bit for bit
    let values = frames.iter().flatten().map(|h| h.map_or(-1.0, |(d, _)| d as f32 as f64)).collect();
    let trajectory = canonical_trajectory(&trajectory);
    let valid = hits.iter().map(Option::is_some).collect();
    let depth = DepthSequence::new(spec.n_frames, spec.height, spec.width, values, valid)?;
    let gt_pointmap = build_pointmap(&depth, &trajectory, &k)?;
    let dynamic_mask = hits
        .iter()
        .map(|h| matches!(h, Some(Surface::Sphere(i)) if spheres[*i].is_moving()))
        .collect();
    let observed = corrupt_pointmap(&gt_pointmap, spec.outlier_fraction, spec.depth_noise_sigma, spec.seed);

    Ok(SyntheticScene {
        spec: spec.clone(),
        depth,
        trajectory,
        intrinsics: k,
        gt_pointmap,
        observed,
        dynamic_mask,
        panels,
        spheres,
        hits,
    })
}

/// Re-expresses poses through the trajectory text format until the text
/// round trip is the identity on them.
pub fn canonical_trajectory(t: &Trajectory) -> Trajectory {
    let mut current = t.clone();
    for _ in 0..32 {
        let next = parse_trajectory(&format_trajectory(&current)).expect("finite trajectory");
        if next == current {
            break;
        }
        current = next;
    }
    current
}

/// Indices of valid points replaced by [`corrupt_pointmap`], in replacement order.
///
/// The order depends only on the mask and seed, so a larger fraction always
/// displaces a superset of the points displaced by a smaller one.
pub fn outlier_indices(p: &PointmapSequence, outlier_fraction: f64, seed: u64) -> Vec<usize> {
    let mut candidates: Vec<usize> = (0..p.valid().len()).filter(|&i| p.valid()[i]).collect();
    let count = (outlier_fraction.clamp(0.0, 1.0) * candidates.len() as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.shuffle(&mut rng);
    candidates.truncate(count);
    candidates
}

fn pixel_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ NOISE_STREAM_SALT);
    rng.set_stream(index as u64);
    rng
}

/// Adds isotropic noise to every valid point and replaces a seeded fraction of
/// them with far-away outliers (10-100× the scene scale, along the viewing
/// direction of another valid point). The mask is unchanged.
///
/// Random draws are keyed by `(seed, flat pixel index)`.
pub fn corrupt_pointmap(p: &PointmapSequence, outlier_fraction: f64, noise_sigma: f64, seed: u64) -> PointmapSequence {
    let Some(scale) = p.mean_distance() else {
        return p.clone();
    };
    if outlier_fraction <= 0.0 && noise_sigma <= 0.0 {
        return p.clone();
    }
    let valid_idx: Vec<usize> = (0..p.valid().len()).filter(|&i| p.valid()[i]).collect();
    let mut points = p.points().to_vec();
    if noise_sigma > 0.0 {
        let sigma = noise_sigma * scale;
        for &i in &valid_idx {
            let mut rng = pixel_rng(seed, i);
            let n = Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
            points[i] += n * sigma;
        }
    }
    for i in outlier_indices(p, outlier_fraction, seed) {
        let mut rng = pixel_rng(seed.wrapping_add(1), i);
        let donor = p.points()[valid_idx[rng.random_range(0..valid_idx.len())]];
        let dir = if donor.norm() > 0.0 { donor.normalize() } else { unit_vector(&mut rng) };
        points[i] = dir * (rng.random_range(10.0..100.0) * scale);
    }
    p.map_points(points)
}
