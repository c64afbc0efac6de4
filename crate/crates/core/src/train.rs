//! Adam minimization of the penalized score-matching objective.

use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::energy::{build_basis, Energy, EnergyModel, DEFAULT_ALPHA, DEFAULT_BANDWIDTH_SCALE, DEFAULT_MAX_CENTERS};
use crate::error::{Error, Result};
use crate::gpm::{compute_gpm, extract_graph, squared_pair_means, Convention, GpmMatrix, StatLayout, ThresholdPolicy};
use crate::graphs::UndirectedGraph;
use crate::penalty::{
    adaptive_weights_from_pilot, penalty_value_and_gradient, penalty_value_and_gradient_cached, PenaltyConfig, PenaltyKind,
};
use crate::scorematch::{loss_and_gradient_cached, mixed_loss, LossReport};
use crate::types::{standardize, Dataset, Standardization};

pub const CONVERGENCE_WINDOW: usize = 20;
pub const DEFAULT_SMOOTHING: f64 = 0.01;
const SMOOTHING_WINDOW: usize = 50;
const BURN_IN: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisConfig {
    /// Number of centers; `None` means `min(n, DEFAULT_MAX_CENTERS)`.
    pub k: Option<usize>,
    pub alpha: f64,
    /// Multiplier on the median-heuristic bandwidth.
    pub bandwidth_scale: f64,
    pub standardize: bool,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self { k: None, alpha: DEFAULT_ALPHA, bandwidth_scale: DEFAULT_BANDWIDTH_SCALE, standardize: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub max_iters: usize,
    /// Relative change of the 20-iteration loss mean that counts as converged.
    pub tol: f64,
    /// Minibatch size; `None` is full batch.
    pub batch: Option<usize>,
    pub seed: u64,
    pub threshold: ThresholdPolicy,
    /// Uniform mass mixed into each discrete conditional (see [`crate::scorematch`]).
    pub smoothing: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            max_iters: 2000,
            tol: 1e-6,
            batch: None,
            seed: 0,
            threshold: ThresholdPolicy::Gap,
            smoothing: DEFAULT_SMOOTHING,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::pre("lr must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::pre("beta1 and beta2 must lie in [0, 1)"));
        }
        if !(self.eps_adam > 0.0) {
            return Err(Error::pre("eps_adam must be positive"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::pre("tol must be nonnegative"));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::pre("smoothing must lie in [0, 1)"));
        }
        if self.batch == Some(0) {
            return Err(Error::pre("batch must be at least 1"));
        }
        Ok(())
    }
}

/// Standard Adam state.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, cfg: &TrainConfig) -> Self {
        Self { lr: cfg.lr, beta1: cfg.beta1, beta2: cfg.beta2, eps: cfg.eps_adam, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((th, g), (m, v)) in theta.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *th -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Model over standardized inputs (see `standardization`).
    pub model: EnergyModel,
    pub standardization: Standardization,
    pub history: Vec<LossReport>,
    /// Squared convention.
    pub gpm: GpmMatrix,
    pub graph: UndirectedGraph,
    pub wall_time: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the smoothed objective rose after burn-in.
    pub nonmonotone: bool,
}

/// Called after every iteration with its 1-based index, report, and the
/// updated model. Returning an error aborts the fit.
pub type Observer<'a> = dyn FnMut(usize, &LossReport, &EnergyModel) -> Result<()> + 'a;

pub fn fit(ds: &Dataset, basis: &BasisConfig, penalty: &PenaltyConfig, train: &TrainConfig) -> Result<FitResult> {
    fit_with(ds, basis, penalty, train, &mut |_, _, _| Ok(()))
}

pub fn fit_with(
    ds: &Dataset,
    basis_cfg: &BasisConfig,
    penalty: &PenaltyConfig,
    train: &TrainConfig,
    observer: &mut Observer<'_>,
) -> Result<FitResult> {
    train.validate()?;
    penalty.validate()?;
    let start = Instant::now();
    let (data, standardization) = if basis_cfg.standardize { standardize(ds) } else { (ds.clone(), Standardization::identity(ds.d())) };
    let k = basis_cfg.k.unwrap_or(DEFAULT_MAX_CENTERS).min(data.n());
    let basis = build_basis(&data, k, basis_cfg.alpha, basis_cfg.bandwidth_scale, train.seed)?;
    let mut model = EnergyModel::zeros(data.schema().clone(), basis)?;

    let mut penalty = penalty.clone();
    if penalty.kind == PenaltyKind::AdaptiveL1 && penalty.adaptive_weights.is_none() && penalty.lambda > 0.0 {
        let pilot_cfg = BasisConfig { standardize: false, ..basis_cfg.clone() };
        let pilot = fit(&data, &pilot_cfg, &PenaltyConfig::none(), train)?;
        penalty.adaptive_weights = Some(adaptive_weights_from_pilot(&pilot.gpm, penalty.epsilon));
    }

    let mut adam = Adam::new(model.n_params(), train);
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed ^ 0x5eed_ba7c);
    let all_rows: Vec<usize> = (0..data.n()).collect();
    let mut history = Vec::with_capacity(train.max_iters);
    let mut objective = Vec::with_capacity(train.max_iters);
    let mut converged = false;
    let mut theta = model.theta().to_vec();
    let cache = model.feature_cache(&data)?;
    for iter in 1..=train.max_iters {
        let rows = match train.batch {
            Some(b) if b < data.n() => {
                let mut r = sample(&mut rng, data.n(), b).into_vec();
                r.sort_unstable();
                r
            }
            _ => all_rows.clone(),
        };
        let (mut report, mut grad) = loss_and_gradient_cached(&model, &cache, &rows, train.smoothing)
            .map_err(|e| Error::NonFinite(format!("iteration {iter}: {e}")))?;
        let (pen, pgrad) = penalty_value_and_gradient_cached(&penalty, &model, &cache, &rows)?;
        if !pen.is_finite() || !report.total.is_finite() {
            return Err(Error::NonFinite(format!("iteration {iter}: objective is not finite")));
        }
        report.penalty = pen;
        grad.iter_mut().zip(&pgrad).for_each(|(g, p)| *g += p);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("iteration {iter}: gradient is not finite")));
        }
        adam.step(&mut theta, &grad);
        model.set_theta(&theta)?;
        objective.push(report.total + report.penalty);
        observer(iter, &report, &model)?;
        history.push(report);
        if window_converged(&objective, train.tol) {
            converged = true;
            break;
        }
    }
    let gpm = compute_gpm(&model, &data, Convention::Squared)?;
    let graph = extract_graph(&gpm, train.threshold);
    Ok(FitResult {
        iterations: history.len(),
        nonmonotone: !smoothed_descent(&objective),
        model,
        standardization,
        history,
        gpm,
        graph,
        wall_time: start.elapsed().as_secs_f64(),
        converged,
    })
}

/// True when the mean of the last 20 values differs from the mean of the 20
/// before by less than `tol` relative.
pub fn window_converged(objective: &[f64], tol: f64) -> bool {
    let w = CONVERGENCE_WINDOW;
    if objective.len() < 2 * w {
        return false;
    }
    let n = objective.len();
    let cur: f64 = objective[n - w..].iter().sum::<f64>() / w as f64;
    let prev: f64 = objective[n - 2 * w..n - w].iter().sum::<f64>() / w as f64;
    (cur - prev).abs() <= tol * prev.abs().max(f64::MIN_POSITIVE)
}

/// Whether the 50-iteration moving average never rises after burn-in.
pub fn smoothed_descent(objective: &[f64]) -> bool {
    let w = SMOOTHING_WINDOW;
    if objective.len() < BURN_IN + w + 1 {
        return true;
    }
    let mut prev: Option<f64> = None;
    for end in BURN_IN + w..=objective.len() {
        let m = objective[end - w..end].iter().sum::<f64>() / w as f64;
        if let Some(p) = prev {
            if m > p + 1e-9 * p.abs().max(1.0) {
                return false;
            }
        }
        prev = Some(m);
    }
    true
}

/// Penalized objective at the model's current θ.
pub fn objective_value(model: &EnergyModel, ds: &Dataset, penalty: &PenaltyConfig) -> Result<f64> {
    let loss = mixed_loss(model, ds)?.total;
    if penalty.lambda == 0.0 {
        return Ok(loss);
    }
    let layout = StatLayout::new(model.schema());
    let omega = squared_pair_means(model, ds, &layout)?;
    let weights = penalty.pair_weights(ds.d())?;
    Ok(loss + omega.iter().zip(&weights).map(|(t, w)| w * penalty.rho(*t)).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfCheckReport {
    pub max_rel_error: f64,
    pub per_draw: Vec<f64>,
    /// Coordinates left out because a finite-difference step crossed a kink.
    pub skipped: usize,
}

pub const SELFCHECK_DRAWS: usize = 5;
const FD_STEP: f64 = 1e-5;

pub fn gradient_selfcheck(model: &EnergyModel, ds: &Dataset, penalty: &PenaltyConfig) -> Result<SelfCheckReport> {
    gradient_selfcheck_seeded(model, ds, penalty, 0)
}

/// Compares the analytic objective gradient with central differences at
/// random θ draws. The error of a draw is `‖a − f‖∞ / ‖f‖∞`.
pub fn gradient_selfcheck_seeded(model: &EnergyModel, ds: &Dataset, penalty: &PenaltyConfig, seed: u64) -> Result<SelfCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.5).unwrap();
    let layout = StatLayout::new(model.schema());
    let region = |m: &EnergyModel| -> Result<Vec<usize>> {
        if penalty.lambda == 0.0 {
            return Ok(Vec::new());
        }
        let om = squared_pair_means(m, ds, &layout)?;
        let kinks = penalty.kinks();
        Ok(om.iter().map(|t| kinks.iter().filter(|&&k| *t > k).count()).collect())
    };
    let mut per_draw = Vec::with_capacity(SELFCHECK_DRAWS);
    let mut skipped = 0;
    for _ in 0..SELFCHECK_DRAWS {
        let theta: Vec<f64> = (0..model.n_params()).map(|_| normal.sample(&mut rng)).collect();
        let m = model.with_theta(&theta)?;
        let (_, mut analytic) = crate::scorematch::loss_and_gradient(&m, ds)?;
        let (_, pg) = penalty_value_and_gradient(penalty, &m, ds, Convention::Squared)?;
        analytic.iter_mut().zip(&pg).for_each(|(a, p)| *a += p);
        let base_region = region(&m)?;
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        let mut probe = m.clone();
        let mut t = theta.clone();
        for c in 0..theta.len() {
            t[c] = theta[c] + FD_STEP;
            probe.set_theta(&t)?;
            let plus = objective_value(&probe, ds, penalty)?;
            let r_plus = region(&probe)?;
            t[c] = theta[c] - FD_STEP;
            probe.set_theta(&t)?;
            let minus = objective_value(&probe, ds, penalty)?;
            let r_minus = region(&probe)?;
            t[c] = theta[c];
            if r_plus != base_region || r_minus != base_region {
                skipped += 1;
                continue;
            }
            let fd = (plus - minus) / (2.0 * FD_STEP);
            num = num.max((analytic[c] - fd).abs());
            den = den.max(fd.abs());
        }
        per_draw.push(num / den.max(1e-12));
    }
    let max_rel_error = per_draw.iter().copied().fold(0.0, f64::max);
    Ok(SelfCheckReport { max_rel_error, per_draw, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_is_lr_sized() {
        let cfg = TrainConfig::default();
        let mut adam = Adam::new(2, &cfg);
        let mut th = vec![0.0, 0.0];
        adam.step(&mut th, &[3.0, -0.5]);
        assert!((th[0] + 0.01).abs() < 1e-9);
        assert!((th[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn window_rule() {
        let flat = vec![1.0; 40];
        assert!(window_converged(&flat, 1e-6));
        assert!(!window_converged(&flat[..39], 1e-6));
        let falling: Vec<f64> = (0..40).map(|i| 10.0 - i as f64).collect();
        assert!(!window_converged(&falling, 1e-6));
    }

    #[test]
    fn smoothed_descent_flags_rise() {
        let mut v: Vec<f64> = (0..300).map(|i| -(i as f64)).collect();
        assert!(smoothed_descent(&v));
        v[250] = 1e6;
        assert!(!smoothed_descent(&v));
    }
}
