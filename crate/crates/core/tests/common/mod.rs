//! Helpers and independent reference implementations shared by the
//! integration tests.

#![allow(dead_code)]

use nalgebra::{Matrix2, Matrix4, SymmetricEigen, Vector2, Vector3};
use pointmap4d::geometry::{Mat3, Vec3};
use pointmap4d::io::{decode_depth, decode_pointmap, encode_depth, encode_pointmap, format_trajectory, parse_trajectory};
use pointmap4d::recovery::{recover_all, RecoveryConfig, RecoveryResult};
use pointmap4d::synth::{generate, SceneSpec, SyntheticScene};
use pointmap4d::{DepthSequence, PointmapSequence, Trajectory};

pub fn single_thread<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    pool(1).install(f)
}

pub fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

pub fn rotation_error_deg(a: &Mat3, b: &Mat3) -> f64 {
    geodesic_rad(a, b).to_degrees()
}

/// Geodesic angle in radians, stable for tiny angles.
pub fn geodesic_rad(a: &Mat3, b: &Mat3) -> f64 {
    let r = a.transpose() * b;
    let sin = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm() / 2.0;
    sin.atan2((r.trace() - 1.0) / 2.0)
}

/// Horn's closed-form similarity (unit quaternion rotation) followed by the
/// least-squares scale and translation; returns the RMSE after alignment.
pub fn horn_ate(pred: &[Vec3], gt: &[Vec3]) -> f64 {
    let n = pred.len() as f64;
    let mp = pred.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mg = gt.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mut s = Matrix3x3::zeros();
    for (p, g) in pred.iter().zip(gt) {
        s += (p - mp) * (g - mg).transpose();
    }
    let (sxx, sxy, sxz) = (s[(0, 0)], s[(0, 1)], s[(0, 2)]);
    let (syx, syy, syz) = (s[(1, 0)], s[(1, 1)], s[(1, 2)]);
    let (szx, szy, szz) = (s[(2, 0)], s[(2, 1)], s[(2, 2)]);
    let nmat = Matrix4::new(
        sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,
        syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,
        szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,
        sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz,
    );
    let eig = SymmetricEigen::new(nmat);
    let k = eig.eigenvalues.imax();
    let q = eig.eigenvectors.column(k);
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let r = Mat3::new(
        w * w + x * x - y * y - z * z, 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
        2.0 * (x * y + w * z), w * w - x * x + y * y - z * z, 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), w * w - x * x - y * y + z * z,
    );
    let num: f64 = pred.iter().zip(gt).map(|(p, g)| (g - mg).dot(&(r * (p - mp)))).sum();
    let den: f64 = pred.iter().map(|p| (p - mp).norm_squared()).sum();
    let scale = num / den;
    let t = mg - r * mp * scale;
    let sq: f64 = pred.iter().zip(gt).map(|(p, g)| (r * p * scale + t - g).norm_squared()).sum();
    (sq / n).sqrt()
}

type Matrix3x3 = nalgebra::Matrix3<f64>;

/// Scale and shift from the 2×2 normal equations of `s·x + b ≈ y`.
pub fn normal_equation_fit(pairs: &[(f64, f64)]) -> (f64, f64) {
    let (mut sxx, mut sx, mut sxy, mut sy) = (0.0, 0.0, 0.0, 0.0);
    for (x, y) in pairs {
        sxx += x * x;
        sx += x;
        sxy += x * y;
        sy += y;
    }
    let a = Matrix2::new(sxx, sx, sx, pairs.len() as f64);
    let sol = a.lu().solve(&Vector2::new(sxy, sy)).unwrap();
    (sol[0], sol[1])
}

pub fn positions(t: &Trajectory) -> Vec<Vec3> {
    t.poses().iter().map(|p| *p.translation()).collect()
}

/// Pointmap and depth as they come back from disk.
pub fn through_disk(p: &PointmapSequence) -> PointmapSequence {
    decode_pointmap(&encode_pointmap(p).unwrap()).unwrap()
}

pub fn depth_through_disk(d: &DepthSequence) -> DepthSequence {
    decode_depth(&encode_depth(d).unwrap()).unwrap()
}

pub fn trajectory_through_disk(t: &Trajectory) -> Trajectory {
    parse_trajectory(&format_trajectory(t)).unwrap()
}

pub fn scene(spec: SceneSpec) -> SyntheticScene {
    generate(&spec).expect("scene generation")
}

pub fn recover(p: &PointmapSequence) -> RecoveryResult {
    recover_all(p, &RecoveryConfig::default()).expect("recovery")
}

/// Largest per-frame rotation error in degrees over solved frames.
pub fn max_rotation_error(r: &RecoveryResult, gt: &Trajectory) -> f64 {
    r.poses
        .iter()
        .zip(gt.poses())
        .filter_map(|(p, g)| p.map(|p| rotation_error_deg(p.rotation(), g.rotation())))
        .fold(0.0, f64::max)
}

pub fn mean_rotation_error(r: &RecoveryResult, gt: &Trajectory) -> f64 {
    let errs: Vec<f64> = r
        .poses
        .iter()
        .zip(gt.poses())
        .filter_map(|(p, g)| p.map(|p| rotation_error_deg(p.rotation(), g.rotation())))
        .collect();
    errs.iter().sum::<f64>() / errs.len() as f64
}
