//! Masked reconstruction loss and the latent KL term.

use thiserror::Error;

use crate::numeric::pairwise_sum;
use crate::pointmap::PointmapSequence;

pub const DEFAULT_BETA: f64 = 1.0;
pub const DEFAULT_LAMBDA_KL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("pointmap dimensions differ")]
    DimensionMismatch,
    #[error("validity masks differ at index {0}")]
    MaskMismatch(usize),
    #[error("no valid points to reduce over")]
    NoValidPoints,
    #[error("mean has {mean} entries but log-variance has {log_var}")]
    LengthMismatch { mean: usize, log_var: usize },
    #[error("beta must be positive, got {0}")]
    NonPositiveBeta(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub kl: f64,
    pub lambda_kl: f64,
    pub total: f64,
    pub valid_count: usize,
}

/// Huber penalty on a residual norm `r`: `0.5·r²` below `beta`, `r − 0.5·beta` above.
///
/// The two branches meet continuously only for `beta = 1`.
pub fn huber_elementwise(residual_norm: f64, beta: f64) -> f64 {
    if residual_norm < beta {
        0.5 * residual_norm * residual_norm
    } else {
        residual_norm - 0.5 * beta
    }
}

/// Mean Huber penalty of the per-pixel residual norm over valid pixels.
///
/// Returns the loss and the number of pixels it was averaged over.
pub fn pointmap_reconstruction_loss(
    pred: &PointmapSequence,
    gt: &PointmapSequence,
    beta: f64,
) -> Result<(f64, usize), LossError> {
    if !(beta > 0.0) {
        return Err(LossError::NonPositiveBeta(beta));
    }
    if !pred.same_shape(gt) {
        return Err(LossError::DimensionMismatch);
    }
    if let Some(i) = pred.valid().iter().zip(gt.valid()).position(|(a, b)| a != b) {
        return Err(LossError::MaskMismatch(i));
    }
    let terms: Vec<f64> = pred
        .points()
        .iter()
        .zip(gt.points())
        .zip(gt.valid())
        .filter(|(_, ok)| **ok)
        .map(|((p, g), _)| huber_elementwise((p - g).norm(), beta))
        .collect();
    if terms.is_empty() {
        return Err(LossError::NoValidPoints);
    }
    Ok((pairwise_sum(&terms) / terms.len() as f64, terms.len()))
}

/// KL divergence of a diagonal Gaussian from the standard normal.
pub fn gaussian_kl(mean: &[f64], log_var: &[f64]) -> Result<f64, LossError> {
    if mean.len() != log_var.len() {
        return Err(LossError::LengthMismatch {
            mean: mean.len(),
            log_var: log_var.len(),
        });
    }
    let terms: Vec<f64> = mean
        .iter()
        .zip(log_var)
        .map(|(m, lv)| lv.exp() + m * m - 1.0 - lv)
        .collect();
    Ok(0.5 * pairwise_sum(&terms))
}

pub fn total_vae_loss(rec: f64, kl: f64, lambda_kl: f64) -> LossBreakdown {
    LossBreakdown {
        reconstruction: rec,
        kl,
        lambda_kl,
        total: rec + lambda_kl * kl,
        valid_count: 0,
    }
}

/// Reconstruction plus weighted KL, with the valid count filled in.
pub fn vae_loss(
    pred: &PointmapSequence,
    gt: &PointmapSequence,
    mean: &[f64],
    log_var: &[f64],
    beta: f64,
    lambda_kl: f64,
) -> Result<LossBreakdown, LossError> {
    let (rec, valid_count) = pointmap_reconstruction_loss(pred, gt, beta)?;
    let kl = gaussian_kl(mean, log_var)?;
    Ok(LossBreakdown {
        valid_count,
        ..total_vae_loss(rec, kl, lambda_kl)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pair(seed: u64, h: usize, w: usize) -> (PointmapSequence, PointmapSequence) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 2 * h * w;
        let valid: Vec<bool> = (0..n).map(|_| rng.random_bool(0.75)).collect();
        let mut pts = || -> Vec<Vec3> {
            (0..n)
                .map(|_| Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
                .collect()
        };
        let a = pts();
        let b = pts();
        (
            PointmapSequence::new(2, h, w, a, valid.clone()).unwrap(),
            PointmapSequence::new(2, h, w, b, valid).unwrap(),
        )
    }

    #[test]
    fn huber_closed_forms() {
        assert_eq!(huber_elementwise(0.0, 1.0), 0.0);
        assert_eq!(huber_elementwise(0.5, 1.0), 0.125);
        assert_eq!(huber_elementwise(1.0, 1.0), 0.5);
        assert_eq!(huber_elementwise(2.0, 1.0), 1.5);
    }

    #[test]
    fn huber_continuous_at_unit_knee() {
        let beta: f64 = 1.0;
        assert!(((beta - 0.5 * beta) - 0.5 * beta * beta).abs() < 1e-12);
        let below = huber_elementwise(beta - 1e-9, beta);
        let at = huber_elementwise(beta, beta);
        assert!((below - at).abs() < 1e-8);
    }

    #[test]
    fn reconstruction_loss_examples() {
        let (a, _) = random_pair(1, 4, 5);
        assert_eq!(pointmap_reconstruction_loss(&a, &a, 1.0).unwrap().0, 0.0);

        let gt = PointmapSequence::new(1, 2, 2, vec![Vec3::zeros(); 4], vec![true, true, false, true]).unwrap();
        let dirs = vec![Vec3::new(0.5, 0.0, 0.0), Vec3::new(0.0, 0.3, 0.4), Vec3::zeros(), Vec3::new(0.0, 0.0, -0.5)];
        let pred = PointmapSequence::new(1, 2, 2, dirs, vec![true, true, false, true]).unwrap();
        let (value, count) = pointmap_reconstruction_loss(&pred, &gt, 1.0).unwrap();
        assert_eq!(count, 3);
        assert!((value - 0.125).abs() < 1e-15);
    }

    #[test]
    fn reconstruction_loss_matches_scalar_loop() {
        for seed in 0..10 {
            let (a, b) = random_pair(seed, 6, 7);
            let (value, count) = pointmap_reconstruction_loss(&a, &b, 1.0).unwrap();
            let (mut sum, mut n) = (0.0, 0usize);
            for i in 0..a.points().len() {
                if a.valid()[i] {
                    let d = a.points()[i] - b.points()[i];
                    let r = (d.x * d.x + d.y * d.y + d.z * d.z).sqrt();
                    sum += if r < 1.0 { 0.5 * r * r } else { r - 0.5 };
                    n += 1;
                }
            }
            assert_eq!(count, n);
            assert!((value - sum / n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn reconstruction_loss_errors() {
        let (a, _) = random_pair(2, 3, 3);
        let (c, _) = random_pair(2, 3, 4);
        assert_eq!(pointmap_reconstruction_loss(&a, &c, 1.0), Err(LossError::DimensionMismatch));
        let (_, other_mask) = random_pair(3, 3, 3);
        assert!(matches!(
            pointmap_reconstruction_loss(&a, &other_mask, 1.0),
            Err(LossError::MaskMismatch(_))
        ));
        let empty = PointmapSequence::new(1, 1, 1, vec![Vec3::zeros()], vec![false]).unwrap();
        assert_eq!(pointmap_reconstruction_loss(&empty, &empty, 1.0), Err(LossError::NoValidPoints));
        assert!(matches!(pointmap_reconstruction_loss(&a, &a, 0.0), Err(LossError::NonPositiveBeta(_))));
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(gaussian_kl(&[0.0; 4], &[0.0; 4]).unwrap(), 0.0);
        assert!((gaussian_kl(&[1.0], &[0.0]).unwrap() - 0.5).abs() < 1e-12);
        let expected = 0.5 * (4.0 - 1.0 - 4f64.ln());
        assert!((gaussian_kl(&[0.0], &[4f64.ln()]).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.8068528).abs() < 1e-7);
        assert!(matches!(gaussian_kl(&[0.0], &[]), Err(LossError::LengthMismatch { .. })));
    }

    #[test]
    fn total_loss_arithmetic() {
        assert_eq!(total_vae_loss(1.0, 2.0, 0.0).total, 1.0);
        assert_eq!(total_vae_loss(0.0, 0.0, 1e-6).total, 0.0);
        assert!((total_vae_loss(0.3, 10.0, 1e-6).total - 0.30001).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn huber_bounds(r in 0.0f64..100.0, beta in 1.0f64..10.0) {
            let h = huber_elementwise(r, beta);
            prop_assert!(h >= 0.0);
            prop_assert!(h <= 0.5 * r * r + 1e-12);
            if r >= beta {
                prop_assert!(h <= r);
            }
        }

        #[test]
        fn loss_symmetric_and_blind_to_invalid(seed in any::<u64>(), junk in -1e6f64..1e6) {
            let (a, b) = random_pair(seed, 4, 4);
            let ab = pointmap_reconstruction_loss(&a, &b, 1.0);
            let ba = pointmap_reconstruction_loss(&b, &a, 1.0);
            prop_assert_eq!(ab.clone(), ba);
            if let Some(i) = a.valid().iter().position(|v| !v) {
                let mut pts = a.points().to_vec();
                pts[i] = Vec3::new(junk, -junk, junk);
                let perturbed = a.map_points(pts);
                let again = pointmap_reconstruction_loss(&perturbed, &b, 1.0);
                prop_assert_eq!(again.map(|(v, n)| (v.to_bits(), n)), ab.map(|(v, n)| (v.to_bits(), n)));
            }
        }

        #[test]
        fn kl_nonnegative(m in prop::collection::vec(-3.0f64..3.0, 1..16), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let lv: Vec<f64> = m.iter().map(|_| rng.random_range(-3.0..3.0)).collect();
            prop_assert!(gaussian_kl(&m, &lv).unwrap() >= 0.0);
        }
    }
}
