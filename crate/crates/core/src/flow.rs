//! Straight-path flow matching at toy scale.
//!
//! A [`LinearVelocityModel`] maps `(state, condition, t)` to a velocity and is
//! trained with the squared error against `h − ε`. [`euler_sample`] integrates
//! any [`VelocityField`] from noise at `t = 0` to data at `t = 1`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::numeric::pairwise_sum;

pub const DEFAULT_LATENT_DIM: usize = 8;
pub const DEFAULT_COND_DIM: usize = 8;
pub const DEFAULT_SAMPLING_STEPS: usize = 100;

/// Noise/time draws held per training sample.
pub const DRAWS_PER_SAMPLE: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("t = {0} is outside [0, 1]")]
    TOutOfRange(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("learning rate must be positive, got {0}")]
    NonPositiveLearningRate(f64),
}

fn check_dim(expected: usize, got: usize) -> Result<(), FlowError> {
    if expected != got {
        return Err(FlowError::DimMismatch { expected, got });
    }
    Ok(())
}

fn check_t(t: f64) -> Result<(), FlowError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(FlowError::TOutOfRange(t));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSample(pub Vec<f64>);

impl LatentSample {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn gaussian(dim: usize, rng: &mut impl Rng) -> Self {
        Self((0..dim).map(|_| rng.sample(StandardNormal)).collect())
    }
}

impl ConditionSample {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// `t·h + (1 − t)·ε`.
pub fn noise_interpolate(h: &LatentSample, eps: &LatentSample, t: f64) -> Result<LatentSample, FlowError> {
    check_t(t)?;
    check_dim(h.dim(), eps.dim())?;
    Ok(LatentSample(
        h.0.iter().zip(&eps.0).map(|(a, e)| t * a + (1.0 - t) * e).collect(),
    ))
}

/// `h − ε`, the constant velocity along the straight path.
pub fn velocity_target(h: &LatentSample, eps: &LatentSample) -> Result<LatentSample, FlowError> {
    check_dim(h.dim(), eps.dim())?;
    Ok(LatentSample(h.0.iter().zip(&eps.0).map(|(a, e)| a - e).collect()))
}

pub trait VelocityField {
    fn velocity(&self, state: &[f64], cond: &[f64], t: f64) -> Vec<f64>;
}

impl<F> VelocityField for F
where
    F: Fn(&[f64], &[f64], f64) -> Vec<f64>,
{
    fn velocity(&self, state: &[f64], cond: &[f64], t: f64) -> Vec<f64> {
        self(state, cond, t)
    }
}

/// `v = W·[state; cond; t] + b`, with `W` stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearVelocityModel {
    dim: usize,
    cond_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// Gradient of the flow-matching loss, laid out like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearVelocityModel {
    pub fn zeros(dim: usize, cond_dim: usize) -> Self {
        Self {
            dim,
            cond_dim,
            weights: vec![0.0; dim * (dim + cond_dim + 1)],
            bias: vec![0.0; dim],
        }
    }

    pub fn from_parameters(dim: usize, cond_dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self, FlowError> {
        check_dim(dim * (dim + cond_dim + 1), weights.len())?;
        check_dim(dim, bias.len())?;
        Ok(Self {
            dim,
            cond_dim,
            weights,
            bias,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }
    pub fn input_dim(&self) -> usize {
        self.dim + self.cond_dim + 1
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn features(&self, state: &[f64], cond: &[f64], t: f64) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.input_dim());
        x.extend_from_slice(state);
        x.extend_from_slice(cond);
        x.push(t);
        x
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.input_dim();
        self.weights
            .chunks_exact(n)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b)
            .collect()
    }

    fn check_inputs(&self, h: &LatentSample, cond: &ConditionSample, eps: &LatentSample, t: f64) -> Result<(), FlowError> {
        check_t(t)?;
        check_dim(self.dim, h.dim())?;
        check_dim(self.dim, eps.dim())?;
        check_dim(self.cond_dim, cond.dim())
    }

    /// Model output minus the target velocity, and the model input.
    fn residual(&self, h: &LatentSample, cond: &ConditionSample, eps: &LatentSample, t: f64) -> Result<(Vec<f64>, Vec<f64>), FlowError> {
        self.check_inputs(h, cond, eps, t)?;
        let state = noise_interpolate(h, eps, t)?;
        let x = self.features(&state.0, &cond.0, t);
        let target = velocity_target(h, eps)?;
        let r = self.apply(&x).iter().zip(&target.0).map(|(p, v)| p - v).collect();
        Ok((r, x))
    }
}

impl VelocityField for LinearVelocityModel {
    fn velocity(&self, state: &[f64], cond: &[f64], t: f64) -> Vec<f64> {
        self.apply(&self.features(state, cond, t))
    }
}

/// `‖model(H^t, cond, t) − (h − ε)‖²`.
pub fn fm_loss(
    model: &LinearVelocityModel,
    h: &LatentSample,
    cond: &ConditionSample,
    eps: &LatentSample,
    t: f64,
) -> Result<f64, FlowError> {
    let (r, _) = model.residual(h, cond, eps, t)?;
    Ok(r.iter().map(|x| x * x).sum())
}

/// Exact gradient of [`fm_loss`] with respect to weights and bias.
pub fn fm_loss_gradient(
    model: &LinearVelocityModel,
    h: &LatentSample,
    cond: &ConditionSample,
    eps: &LatentSample,
    t: f64,
) -> Result<ModelGradient, FlowError> {
    let (r, x) = model.residual(h, cond, eps, t)?;
    let mut weights = Vec::with_capacity(model.weights.len());
    for ri in &r {
        weights.extend(x.iter().map(|xj| 2.0 * ri * xj));
    }
    let bias = r.iter().map(|ri| 2.0 * ri).collect();
    Ok(ModelGradient { weights, bias })
}

/// One training example paired with the condition it was drawn under.
pub type TrainingPair = (LatentSample, ConditionSample);

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: LinearVelocityModel,
    /// Objective before each step, with the final value appended.
    pub losses: Vec<f64>,
    /// Step size actually used.
    pub step: f64,
}

/// Second moments of the training objective over a fixed bank of draws.
///
/// With `θ = [W b]` and `x̃ = [x; 1]` the objective is
/// `tr(θ·M·θᵀ) − 2·tr(θ·Cᵀ) + y²`, where `M = E[x̃x̃ᵀ]`, `C = E[y·x̃ᵀ]` and
/// `y² = E[‖y‖²]` for the velocity target `y`.
struct Moments {
    m: DMatrix<f64>,
    c: DMatrix<f64>,
    yy: f64,
}

impl Moments {
    fn accumulate(model: &LinearVelocityModel, dataset: &[TrainingPair], seed: u64) -> Moments {
        let n = model.input_dim() + 1;
        let mut m = DMatrix::<f64>::zeros(n, n);
        let mut c = DMatrix::<f64>::zeros(model.dim, n);
        let mut yy = Vec::with_capacity(dataset.len() * DRAWS_PER_SAMPLE);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (h, cond) in dataset {
            for _ in 0..DRAWS_PER_SAMPLE {
                let eps = LatentSample::gaussian(model.dim, &mut rng);
                let t = rng.random_range(0.0..=1.0);
                let state = noise_interpolate(h, &eps, t).expect("dataset validated");
                let mut x = model.features(&state.0, &cond.0, t);
                x.push(1.0);
                let x = DVector::from_vec(x);
                let y = DVector::from_vec(velocity_target(h, &eps).expect("dataset validated").0);
                m += &x * x.transpose();
                c += &y * x.transpose();
                yy.push(y.norm_squared());
            }
        }
        let k = yy.len() as f64;
        Moments {
            m: m / k,
            c: c / k,
            yy: pairwise_sum(&yy) / k,
        }
    }

    fn loss(&self, theta: &DMatrix<f64>) -> f64 {
        (theta * &self.m).component_mul(theta).sum() - 2.0 * theta.component_mul(&self.c).sum() + self.yy
    }

    fn gradient(&self, theta: &DMatrix<f64>) -> DMatrix<f64> {
        (theta * &self.m - &self.c) * 2.0
    }

    /// Largest Hessian eigenvalue of the objective.
    fn curvature(&self) -> f64 {
        2.0 * SymmetricEigen::new(self.m.clone()).eigenvalues.max()
    }
}

/// Full-batch gradient descent on the flow-matching objective.
///
/// The `(ε, t)` draws are fixed up front from `seed` ([`DRAWS_PER_SAMPLE`] per
/// example, `t ~ U[0, 1]`), so the objective is a fixed quadratic and the run
/// is bit-reproducible. The step is `min(lr, 1/L)` with `L` the curvature of
/// that quadratic, so the recorded losses do not increase.
pub fn train_toy(
    model: &LinearVelocityModel,
    dataset: &[TrainingPair],
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<TrainOutcome, FlowError> {
    if dataset.is_empty() {
        return Err(FlowError::EmptyDataset);
    }
    if !(lr > 0.0) {
        return Err(FlowError::NonPositiveLearningRate(lr));
    }
    for (h, c) in dataset {
        check_dim(model.dim, h.dim())?;
        check_dim(model.cond_dim, c.dim())?;
    }
    let moments = Moments::accumulate(model, dataset, seed);
    let step = lr.min(1.0 / moments.curvature());
    let n = model.input_dim();
    let mut theta = DMatrix::from_fn(model.dim, n + 1, |i, j| if j < n { model.weights[i * n + j] } else { model.bias[i] });
    let mut losses = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        losses.push(moments.loss(&theta));
        theta -= moments.gradient(&theta) * step;
    }
    losses.push(moments.loss(&theta));
    let mut trained = model.clone();
    for i in 0..model.dim {
        for j in 0..n {
            trained.weights[i * n + j] = theta[(i, j)];
        }
        trained.bias[i] = theta[(i, n)];
    }
    Ok(TrainOutcome {
        model: trained,
        losses,
        step,
    })
}

/// Integrates `dH/dt = v(H, cond, t)` from `H(0) = ε` to `t = 1` with
/// `steps` uniform forward-Euler steps.
pub fn euler_sample(field: &impl VelocityField, cond: &ConditionSample, eps: &LatentSample, steps: usize) -> LatentSample {
    let steps = steps.max(1);
    let dt = 1.0 / steps as f64;
    let mut state = eps.0.clone();
    for k in 0..steps {
        let t = k as f64 * dt;
        let v = field.velocity(&state, &cond.0, t);
        for (s, vi) in state.iter_mut().zip(&v) {
            *s += dt * vi;
        }
    }
    LatentSample(state)
}

/// Conditionally Gaussian toy data: `h = A·c + b + σ·n` with `c, n ~ N(0, I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianToy {
    pub dim: usize,
    pub cond_dim: usize,
    /// Row-major `dim × cond_dim`.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub sigma: f64,
}

impl LinearGaussianToy {
    /// Random coupling with entries of size `coupling / sqrt(cond_dim)` and
    /// offsets of size `offset`.
    pub fn random(dim: usize, cond_dim: usize, coupling: f64, offset: f64, sigma: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = coupling / (cond_dim.max(1) as f64).sqrt();
        let a = (0..dim * cond_dim)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let b = (0..dim).map(|_| offset * rng.sample::<f64, _>(StandardNormal)).collect();
        Self {
            dim,
            cond_dim,
            a,
            b,
            sigma,
        }
    }

    /// Default toy used by the demo: weak coupling, offsets of size 3, σ = 0.05.
    pub fn standard(dim: usize, cond_dim: usize, seed: u64) -> Self {
        Self::random(dim, cond_dim, 0.1, 3.0, 0.05, seed)
    }

    pub fn conditional_mean(&self, cond: &ConditionSample) -> LatentSample {
        LatentSample(
            self.b
                .iter()
                .enumerate()
                .map(|(i, bi)| {
                    bi + self.a[i * self.cond_dim..(i + 1) * self.cond_dim]
                        .iter()
                        .zip(&cond.0)
                        .map(|(a, c)| a * c)
                        .sum::<f64>()
                })
                .collect(),
        )
    }

    pub fn sample_condition(&self, rng: &mut impl Rng) -> ConditionSample {
        ConditionSample((0..self.cond_dim).map(|_| rng.sample(StandardNormal)).collect())
    }

    pub fn dataset(&self, n: usize, seed: u64) -> Vec<TrainingPair> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let c = self.sample_condition(&mut rng);
                let mean = self.conditional_mean(&c);
                let h = mean
                    .0
                    .iter()
                    .map(|m| m + self.sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                (LatentSample(h), c)
            })
            .collect()
    }
}
