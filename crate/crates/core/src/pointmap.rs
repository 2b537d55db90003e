//! Depth sequences, trajectories and temporal pointmaps.
//!
//! All per-pixel buffers are frame-major then row-major: the element for
//! frame `i`, row `v`, column `u` lives at `(i * height + v) * width + u`.
//! Integer pixel `(u, v)` is unprojected from its center `(u + 0.5, v + 0.5)`.

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{unproject, GeometryError, Intrinsics, Pixel, RigidPose, Vec3};
use crate::numeric::pairwise_sum;

/// Stored in place of invalid depth values. Consumers must read the mask.
pub const INVALID_DEPTH: f64 = -1.0;

/// Tolerance for accepting a first pose as the identity.
const FIRST_FRAME_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PointmapError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("first trajectory pose is not the identity")]
    FirstFrameNotIdentity,
    #[error("no valid points")]
    NoValidPoints,
    #[error("scale must be positive and finite, got {0}")]
    NonPositiveScale(f64),
    #[error("invalid depth value {value} at index {index}")]
    InvalidDepthValue { index: usize, value: f64 },
    #[error("non-finite valid point at index {0}")]
    NonFinitePoint(usize),
    #[error("timestamps must be finite and strictly increasing (index {0})")]
    NonIncreasingTimestamps(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn check_len(what: &str, got: usize, expected: usize) -> Result<(), PointmapError> {
    if got != expected {
        return Err(PointmapError::DimensionMismatch(format!(
            "{what} has {got} elements, expected {expected}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthSequence {
    frames: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthSequence {
    /// Invalid entries are overwritten with [`INVALID_DEPTH`].
    pub fn new(
        frames: usize,
        height: usize,
        width: usize,
        mut values: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self, PointmapError> {
        let n = frames * height * width;
        check_len("depth values", values.len(), n)?;
        check_len("depth mask", valid.len(), n)?;
        for (index, (value, ok)) in values.iter_mut().zip(&valid).enumerate() {
            if *ok {
                if !(value.is_finite() && *value > 0.0) {
                    return Err(PointmapError::InvalidDepthValue {
                        index,
                        value: *value,
                    });
                }
            } else {
                *value = INVALID_DEPTH;
            }
        }
        Ok(Self {
            frames,
            height,
            width,
            values,
            valid,
        })
    }

    /// Builds from raw values, treating non-finite and non-positive entries as invalid.
    pub fn from_values(frames: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self, PointmapError> {
        let valid = values.iter().map(|v| v.is_finite() && *v > 0.0).collect();
        Self::new(frames, height, width, values, valid)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn pixels_per_frame(&self) -> usize {
        self.height * self.width
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn index(&self, frame: usize, row: usize, col: usize) -> usize {
        (frame * self.height + row) * self.width + col
    }

    pub fn get(&self, frame: usize, row: usize, col: usize) -> Option<f64> {
        let i = self.index(frame, row, col);
        self.valid[i].then_some(self.values[i])
    }

    pub fn frame_values(&self, frame: usize) -> &[f64] {
        let n = self.pixels_per_frame();
        &self.values[frame * n..(frame + 1) * n]
    }

    pub fn frame_valid(&self, frame: usize) -> &[bool] {
        let n = self.pixels_per_frame();
        &self.valid[frame * n..(frame + 1) * n]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn same_shape(&self, other: &DepthSequence) -> bool {
        (self.frames, self.height, self.width) == (other.frames, other.height, other.width)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointmapSequence {
    frames: usize,
    height: usize,
    width: usize,
    points: Vec<Vec3>,
    valid: Vec<bool>,
    norm_scale: f64,
    normalized: bool,
}

/// Borrowed view of one frame of a [`PointmapSequence`].
#[derive(Debug, Clone, Copy)]
pub struct PointmapFrame<'a> {
    pub height: usize,
    pub width: usize,
    pub points: &'a [Vec3],
    pub valid: &'a [bool],
}

impl PointmapFrame<'_> {
    /// `(column, row, point)` for every valid pixel, row-major.
    pub fn valid_pixels(&self) -> impl Iterator<Item = (usize, usize, &Vec3)> + '_ {
        let w = self.width;
        self.points
            .iter()
            .zip(self.valid)
            .enumerate()
            .filter(|(_, (_, ok))| **ok)
            .map(move |(i, (p, _))| (i % w, i / w, p))
    }
}

impl PointmapSequence {
    /// Invalid points are zeroed. `norm_scale` starts at 1 (unnormalized).
    pub fn new(
        frames: usize,
        height: usize,
        width: usize,
        mut points: Vec<Vec3>,
        valid: Vec<bool>,
    ) -> Result<Self, PointmapError> {
        let n = frames * height * width;
        check_len("points", points.len(), n)?;
        check_len("point mask", valid.len(), n)?;
        for (index, (p, ok)) in points.iter_mut().zip(&valid).enumerate() {
            if *ok {
                if !p.iter().all(|x| x.is_finite()) {
                    return Err(PointmapError::NonFinitePoint(index));
                }
            } else {
                *p = Vec3::zeros();
            }
        }
        Ok(Self {
            frames,
            height,
            width,
            points,
            valid,
            norm_scale: 1.0,
            normalized: false,
        })
    }

    /// Restores normalization metadata, e.g. when reading from disk.
    pub fn with_normalization(mut self, norm_scale: f64, normalized: bool) -> Result<Self, PointmapError> {
        if !(norm_scale.is_finite() && norm_scale > 0.0) {
            return Err(PointmapError::NonPositiveScale(norm_scale));
        }
        self.norm_scale = norm_scale;
        self.normalized = normalized;
        Ok(self)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn points(&self) -> &[Vec3] {
        &self.points
    }
    pub fn valid(&self) -> &[bool] {
        &self.valid
    }
    pub fn norm_scale(&self) -> f64 {
        self.norm_scale
    }
    pub fn is_normalized(&self) -> bool {
        self.normalized
    }
    pub fn pixels_per_frame(&self) -> usize {
        self.height * self.width
    }

    pub fn index(&self, frame: usize, row: usize, col: usize) -> usize {
        (frame * self.height + row) * self.width + col
    }

    pub fn get(&self, frame: usize, row: usize, col: usize) -> Option<&Vec3> {
        let i = self.index(frame, row, col);
        self.valid[i].then(|| &self.points[i])
    }

    pub fn frame(&self, frame: usize) -> PointmapFrame<'_> {
        let n = self.pixels_per_frame();
        PointmapFrame {
            height: self.height,
            width: self.width,
            points: &self.points[frame * n..(frame + 1) * n],
            valid: &self.valid[frame * n..(frame + 1) * n],
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn same_shape(&self, other: &PointmapSequence) -> bool {
        (self.frames, self.height, self.width) == (other.frames, other.height, other.width)
    }

    /// Mean distance of valid points to the origin.
    pub fn mean_distance(&self) -> Option<f64> {
        let norms: Vec<f64> = self
            .points
            .iter()
            .zip(&self.valid)
            .filter(|(_, ok)| **ok)
            .map(|(p, _)| p.norm())
            .collect();
        if norms.is_empty() {
            None
        } else {
            Some(pairwise_sum(&norms) / norms.len() as f64)
        }
    }

    /// Same mask and metadata, new points.
    pub(crate) fn map_points(&self, points: Vec<Vec3>) -> Self {
        debug_assert_eq!(points.len(), self.points.len());
        Self {
            points,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    poses: Vec<RigidPose>,
    timestamps: Vec<f64>,
}

impl Trajectory {
    pub fn new(poses: Vec<RigidPose>, timestamps: Vec<f64>) -> Result<Self, PointmapError> {
        check_len("timestamps", timestamps.len(), poses.len())?;
        for (i, pair) in timestamps.windows(2).enumerate() {
            if !(pair[1] > pair[0]) {
                return Err(PointmapError::NonIncreasingTimestamps(i + 1));
            }
        }
        if let Some(i) = timestamps.iter().position(|t| !t.is_finite()) {
            return Err(PointmapError::NonIncreasingTimestamps(i));
        }
        Ok(Self { poses, timestamps })
    }

    /// Timestamps are the frame indices.
    pub fn from_poses(poses: Vec<RigidPose>) -> Self {
        let timestamps = (0..poses.len()).map(|i| i as f64).collect();
        Self { poses, timestamps }
    }

    pub fn poses(&self) -> &[RigidPose] {
        &self.poses
    }
    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }
    pub fn len(&self) -> usize {
        self.poses.len()
    }
    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn map_poses(&self, f: impl Fn(&RigidPose) -> RigidPose) -> Trajectory {
        Trajectory {
            poses: self.poses.iter().map(f).collect(),
            timestamps: self.timestamps.clone(),
        }
    }
}

/// Re-expresses every pose relative to the first, so that frame 0 becomes
/// the world frame.
pub fn rebase_to_first_frame(traj: &Trajectory) -> Result<Trajectory, PointmapError> {
    let first = traj.poses.first().ok_or(PointmapError::EmptyTrajectory)?;
    let first_inv = first.inverse();
    let poses = traj
        .poses
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if i == 0 {
                RigidPose::identity()
            } else {
                first_inv.compose(p)
            }
        })
        .collect();
    Ok(Trajectory {
        poses,
        timestamps: traj.timestamps.clone(),
    })
}

/// Lifts every valid depth pixel into the shared world frame.
pub fn build_pointmap(
    depth: &DepthSequence,
    traj: &Trajectory,
    k: &Intrinsics,
) -> Result<PointmapSequence, PointmapError> {
    if traj.len() != depth.frames {
        return Err(PointmapError::DimensionMismatch(format!(
            "trajectory has {} poses, depth has {} frames",
            traj.len(),
            depth.frames
        )));
    }
    match traj.poses.first() {
        None => return Err(PointmapError::EmptyTrajectory),
        Some(p) if !p.is_identity(FIRST_FRAME_TOL) => return Err(PointmapError::FirstFrameNotIdentity),
        _ => {}
    }
    let (h, w) = (depth.height, depth.width);
    let per_frame = h * w;
    let mut points = vec![Vec3::zeros(); depth.values.len()];
    points
        .par_chunks_mut(per_frame.max(1))
        .enumerate()
        .for_each(|(frame, out)| {
            let pose = &traj.poses[frame];
            let values = depth.frame_values(frame);
            let valid = depth.frame_valid(frame);
            for (i, slot) in out.iter_mut().enumerate() {
                if valid[i] {
                    let px = Pixel::center(i % w, i / w);
                    let cam = unproject(&px, values[i], k).expect("valid depth is positive");
                    *slot = pose.transform_point(&cam);
                }
            }
        });
    PointmapSequence::new(depth.frames, h, w, points, depth.valid.clone())
}

/// Divides every valid point by the mean valid-point distance to the origin.
pub fn normalize_pointmap(p: &PointmapSequence) -> Result<PointmapSequence, PointmapError> {
    let s = p.mean_distance().ok_or(PointmapError::NoValidPoints)?;
    if !(s > 0.0) {
        return Err(PointmapError::NoValidPoints);
    }
    let points = p
        .points
        .iter()
        .zip(&p.valid)
        .map(|(x, ok)| if *ok { x / s } else { *x })
        .collect();
    Ok(PointmapSequence {
        points,
        norm_scale: p.norm_scale * s,
        normalized: true,
        ..p.clone()
    })
}

/// Divides translations and depths by `s`, the counterpart of
/// [`normalize_pointmap`] on the camera side.
pub fn apply_scale_to_camera(
    traj: &Trajectory,
    depth: &DepthSequence,
    s: f64,
) -> Result<(Trajectory, DepthSequence), PointmapError> {
    if !(s.is_finite() && s > 0.0) {
        return Err(PointmapError::NonPositiveScale(s));
    }
    let traj = traj.map_poses(|p| RigidPose::new(*p.rotation(), p.translation() / s).expect("scaled pose stays rigid"));
    let values = depth
        .values
        .iter()
        .zip(&depth.valid)
        .map(|(d, ok)| if *ok { d / s } else { INVALID_DEPTH })
        .collect();
    Ok((
        traj,
        DepthSequence {
            values,
            ..depth.clone()
        },
    ))
}
