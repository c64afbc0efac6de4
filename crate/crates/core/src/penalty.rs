//! Sparsity penalties on squared-convention GPM entries.

use serde::{Deserialize, Serialize};

use crate::energy::{EnergyModel, FeatureCache, Primitive, Tape};
use crate::error::{Error, Result};
use crate::gpm::{Convention, GpmMatrix, PairEntry, StatLayout};
use crate::types::Dataset;

pub const DEFAULT_LAMBDA: f64 = 0.1;
pub const DEFAULT_SCAD_A: f64 = 3.7;
pub const DEFAULT_MCP_GAMMA: f64 = 3.0;
pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    L1,
    #[serde(rename = "adaptive-l1")]
    AdaptiveL1,
    Scad,
    Mcp,
}

impl std::str::FromStr for PenaltyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(PenaltyKind::L1),
            "adaptive-l1" | "adaptive_l1" | "adaptivel1" => Ok(PenaltyKind::AdaptiveL1),
            "scad" => Ok(PenaltyKind::Scad),
            "mcp" => Ok(PenaltyKind::Mcp),
            other => Err(Error::pre(format!("unknown penalty kind '{other}' (l1, adaptive-l1, scad, mcp)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub kind: PenaltyKind,
    pub lambda: f64,
    pub scad_a: f64,
    pub mcp_gamma: f64,
    pub epsilon: f64,
    /// `d × d` row-major weights; required for adaptive ℓ1 once the pilot fit ran.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adaptive_weights: Option<Vec<f64>>,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            kind: PenaltyKind::Scad,
            lambda: DEFAULT_LAMBDA,
            scad_a: DEFAULT_SCAD_A,
            mcp_gamma: DEFAULT_MCP_GAMMA,
            epsilon: DEFAULT_EPSILON,
            adaptive_weights: None,
        }
    }
}

impl PenaltyConfig {
    pub fn new(kind: PenaltyKind, lambda: f64) -> Self {
        Self { kind, lambda, ..Self::default() }
    }

    pub fn none() -> Self {
        Self::new(PenaltyKind::L1, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::pre(format!("lambda = {} must lie in [0, 1]", self.lambda)));
        }
        if !(self.scad_a > 2.0) {
            return Err(Error::pre("scad_a must exceed 2"));
        }
        if !(self.mcp_gamma > 1.0) {
            return Err(Error::pre("mcp_gamma must exceed 1"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::pre("epsilon must be positive"));
        }
        if self.adaptive_weights.is_some() && self.kind != PenaltyKind::AdaptiveL1 {
            return Err(Error::pre("adaptive weights given for a non-adaptive penalty"));
        }
        if let Some(w) = &self.adaptive_weights {
            if w.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::pre("adaptive weights must be nonnegative"));
            }
        }
        Ok(())
    }

    /// ρ_λ(t) for t ≥ 0, before any adaptive weight.
    pub fn rho(&self, t: f64) -> f64 {
        let lam = self.lambda;
        match self.kind {
            PenaltyKind::L1 | PenaltyKind::AdaptiveL1 => lam * t,
            PenaltyKind::Scad => {
                let a = self.scad_a;
                if t <= lam {
                    lam * t
                } else if t <= a * lam {
                    (2.0 * a * lam * t - t * t - lam * lam) / (2.0 * (a - 1.0))
                } else {
                    (a + 1.0) * lam * lam / 2.0
                }
            }
            PenaltyKind::Mcp => {
                let g = self.mcp_gamma;
                if t <= g * lam {
                    lam * t - t * t / (2.0 * g)
                } else {
                    g * lam * lam / 2.0
                }
            }
        }
    }

    /// Left derivative of ρ_λ.
    pub fn rho_prime(&self, t: f64) -> f64 {
        let lam = self.lambda;
        match self.kind {
            PenaltyKind::L1 | PenaltyKind::AdaptiveL1 => lam,
            PenaltyKind::Scad => {
                let a = self.scad_a;
                if t <= lam {
                    lam
                } else if t <= a * lam {
                    (a * lam - t) / (a - 1.0)
                } else {
                    0.0
                }
            }
            PenaltyKind::Mcp => {
                let g = self.mcp_gamma;
                if t <= g * lam {
                    lam - t / g
                } else {
                    0.0
                }
            }
        }
    }

    /// Points where ρ is not differentiable.
    pub fn kinks(&self) -> Vec<f64> {
        match self.kind {
            PenaltyKind::L1 | PenaltyKind::AdaptiveL1 => vec![0.0],
            PenaltyKind::Scad => vec![0.0, self.lambda, self.scad_a * self.lambda],
            PenaltyKind::Mcp => vec![0.0, self.mcp_gamma * self.lambda],
        }
    }

    fn weight(&self, d: usize, i: usize, j: usize) -> Result<f64> {
        match (self.kind, &self.adaptive_weights) {
            (PenaltyKind::AdaptiveL1, Some(w)) => {
                if w.len() != d * d {
                    return Err(Error::DimensionMismatch { expected: d * d, got: w.len() });
                }
                Ok(w[i * d + j])
            }
            (PenaltyKind::AdaptiveL1, None) => Err(Error::pre("adaptive l1 needs pilot weights")),
            _ => Ok(1.0),
        }
    }

    /// Per-pair weights in packed upper-triangle order.
    pub fn pair_weights(&self, d: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(crate::energy::pair_count(d));
        for i in 0..d {
            for j in i + 1..d {
                out.push(self.weight(d, i, j)?);
            }
        }
        Ok(out)
    }
}

/// `Σ_{i<j} w_ij ρ_λ(Ω_ij)` on a squared-convention matrix.
pub fn penalty_value(cfg: &PenaltyConfig, gpm: &GpmMatrix) -> Result<f64> {
    if gpm.convention() != Convention::Squared {
        return Err(Error::pre("penalty is defined on the squared convention"));
    }
    let weights = cfg.pair_weights(gpm.d())?;
    let mut total = 0.0;
    for (t, w) in gpm.pair_values().into_iter().zip(weights) {
        if t < 0.0 {
            return Err(Error::pre("negative omega entry"));
        }
        total += w * cfg.rho(t);
    }
    Ok(total)
}

/// Penalty value and θ-gradient through the GPM of `model` on `ds`.
pub fn penalty_value_and_gradient(
    cfg: &PenaltyConfig,
    model: &EnergyModel,
    ds: &Dataset,
    convention: Convention,
) -> Result<(f64, Vec<f64>)> {
    if convention != Convention::Squared {
        return Err(Error::pre("penalty gradient requires the squared convention"));
    }
    let cache = model.feature_cache(ds)?;
    let rows: Vec<usize> = (0..ds.n()).collect();
    penalty_value_and_gradient_cached(cfg, model, &cache, &rows)
}

/// Squared-convention Ω over the listed cached rows, in packed pair order.
pub fn cached_pair_means(model: &EnergyModel, cache: &FeatureCache, rows: &[usize], layout: &StatLayout) -> Result<Vec<f64>> {
    let mut stats = vec![0.0; layout.total()];
    let mut sums = vec![0.0; layout.entries().len()];
    for &r in rows {
        model.cached_pair_statistics(cache, r, layout, &mut stats)?;
        for (p, s) in sums.iter_mut().enumerate() {
            *s += stats[layout.offset(p)..layout.offset(p + 1)].iter().map(|f| f * f).sum::<f64>();
        }
    }
    let n = rows.len() as f64;
    for s in &mut sums {
        *s /= n;
        if !s.is_finite() {
            return Err(Error::NonFinite("omega entry".into()));
        }
    }
    Ok(sums)
}

/// Ω is computed first; then each row's pair statistics are recorded on a
/// tape with adjoint `w ρ′(Ω) · 2f / n`. dd statistics do not depend on the
/// row for this model, so they are recorded once.
pub fn penalty_value_and_gradient_cached(
    cfg: &PenaltyConfig,
    model: &EnergyModel,
    cache: &FeatureCache,
    rows: &[usize],
) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    let mut grad = vec![0.0; model.n_params()];
    if cfg.lambda == 0.0 || rows.is_empty() {
        return Ok((0.0, grad));
    }
    let schema = crate::energy::Energy::schema(model);
    let layout = StatLayout::new(schema);
    let omega = cached_pair_means(model, cache, rows, &layout)?;
    let weights = cfg.pair_weights(schema.len())?;
    let mut value = 0.0;
    let mut scale = Vec::with_capacity(omega.len());
    for (t, w) in omega.iter().zip(&weights) {
        value += w * cfg.rho(*t);
        scale.push(w * cfg.rho_prime(*t));
    }
    let active: Vec<usize> = (0..omega.len()).filter(|&p| scale[p] != 0.0).collect();
    if active.is_empty() {
        return Ok((value, grad));
    }
    let inv_n = 1.0 / rows.len() as f64;
    let mut tape = Tape::new(model);
    let mut adj = Vec::new();
    for (pos, &r) in rows.iter().enumerate() {
        tape.reset(model);
        let id = tape.push_cached(model, cache, r)?;
        adj.clear();
        for &p in &active {
            let s = scale[p];
            match layout.entries()[p] {
                PairEntry::Cc { i, j } => {
                    let f = tape.record(model, id, Primitive::Cross(i, j))?;
                    adj.push(s * 2.0 * f * inv_n);
                }
                PairEntry::Cd { c, dvar, m } => {
                    for cat in 1..m {
                        let f = tape.record(model, id, Primitive::GradDiff { c, dvar, cat })?;
                        adj.push(s * 2.0 * f * inv_n);
                    }
                }
                PairEntry::Dd { i, j, mi, mj } if pos == 0 => {
                    for k in 1..mi {
                        for l in 1..mj {
                            let f = tape.record(model, id, Primitive::DoubleDiff { i, j, k, l })?;
                            adj.push(s * 2.0 * f);
                        }
                    }
                }
                PairEntry::Dd { .. } => {}
            }
        }
        if !adj.is_empty() {
            tape.backward_into(model, &adj, &mut grad)?;
        }
    }
    Ok((value, grad))
}

pub fn penalty_theta_gradient(cfg: &PenaltyConfig, model: &EnergyModel, ds: &Dataset, convention: Convention) -> Result<Vec<f64>> {
    Ok(penalty_value_and_gradient(cfg, model, ds, convention)?.1)
}

/// `w_ij = 1 / (Ω_pilot_ij + ε)`, full `d × d` row-major (diagonal included).
pub fn adaptive_weights_from_pilot(pilot: &GpmMatrix, epsilon: f64) -> Vec<f64> {
    pilot.matrix().iter().map(|t| 1.0 / (t + epsilon)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Schema;

    fn single(t: f64) -> GpmMatrix {
        GpmMatrix::from_pair_values(&Schema::continuous(2), &[t], Convention::Squared).unwrap()
    }

    #[test]
    fn stated_values() {
        assert_eq!(penalty_value(&PenaltyConfig::new(PenaltyKind::L1, 0.5), &single(0.8)).unwrap(), 0.4);
        let scad = penalty_value(&PenaltyConfig::new(PenaltyKind::Scad, 0.5), &single(3.0)).unwrap();
        assert!((scad - 0.5875).abs() < 1e-15);
        for kind in [PenaltyKind::L1, PenaltyKind::Scad, PenaltyKind::Mcp] {
            assert_eq!(penalty_value(&PenaltyConfig::new(kind, 0.3), &single(0.0)).unwrap(), 0.0);
        }
    }

    #[test]
    fn scad_is_continuous_at_kinks() {
        let c = PenaltyConfig::new(PenaltyKind::Scad, 0.2);
        for k in [0.2, 0.2 * 3.7] {
            assert!((c.rho(k - 1e-12) - c.rho(k + 1e-12)).abs() < 1e-10);
        }
        let m = PenaltyConfig::new(PenaltyKind::Mcp, 0.2);
        assert!((m.rho(0.6 - 1e-12) - m.rho(0.6 + 1e-12)).abs() < 1e-10);
    }

    #[test]
    fn left_derivative_at_kinks() {
        let c = PenaltyConfig::new(PenaltyKind::Scad, 0.2);
        assert_eq!(c.rho_prime(0.2), 0.2);
        assert_eq!(c.rho_prime(0.2 * 3.7), 0.0);
    }

    #[test]
    fn pilot_weights() {
        let w = adaptive_weights_from_pilot(&single(0.0), DEFAULT_EPSILON);
        assert!((w[1] - 1e6).abs() < 1e-6);
        let w = adaptive_weights_from_pilot(&single(1.0 - DEFAULT_EPSILON), DEFAULT_EPSILON);
        assert!((w[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adaptive_requires_weights() {
        let c = PenaltyConfig::new(PenaltyKind::AdaptiveL1, 0.1);
        assert!(penalty_value(&c, &single(0.5)).is_err());
    }
}
