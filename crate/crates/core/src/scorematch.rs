//! Score-matching losses for continuous, discrete, and mixed data.
//!
//! Per-variable terms at a row `x`:
//! - continuous `i`: `½ (∂_i log π̃)² + ∂²_i log π̃`
//! - discrete `i`: `½ r(x)² − Σ_v r(x[i→v])` with `r(x) = Σ_v exp(L_v − L_{x_i})`
//!   and `L_v` the log-density at `x[i→v]`.
//!
//! Since substituting `i` in `x[i→v]` gives the same `L` vector as in `x`,
//! `Σ_v r(x[i→v]) = Σ_u Σ_v exp(L_u − L_v)`; the whole discrete term is a
//! function of the one vector `L`.

use serde::{Deserialize, Serialize};

use crate::energy::{check_continuous, check_discrete, Energy, EnergyModel, FeatureCache, Primitive, Tape, Want};
use crate::error::{Error, Result};
use crate::types::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub per_variable: Vec<f64>,
    pub penalty: f64,
}

pub fn continuous_term<E: Energy + ?Sized>(model: &E, x: &[f64], i: usize) -> Result<f64> {
    check_continuous(model.schema(), i)?;
    let db = model.derivatives(x, Want::SCORE)?;
    let g = db.grad_of(i)?;
    Ok(0.5 * g * g + db.hess_of(i)?)
}

pub fn discrete_term<E: Energy + ?Sized>(model: &E, x: &[f64], i: usize) -> Result<f64> {
    check_discrete(model.schema(), i)?;
    let l = model.substitute_discrete(x, i)?;
    Ok(discrete_term_from_logs(&l, x[i] as usize, None))
}

/// Discrete term from the substitution vector `l` at observed category `xi`.
/// When `dl` is given it receives the partial derivatives w.r.t. each `l[v]`.
pub fn discrete_term_from_logs(l: &[f64], xi: usize, dl: Option<&mut [f64]>) -> f64 {
    smoothed_discrete_term(l, xi, 0.0, dl)
}

/// Discrete term under the conditional `(1 − ε) δ_{x_i} + ε / M` along
/// coordinate `i`: `½ Σ_v c_v r_v² − Σ_v r_v` with `r_v = Σ_u exp(L_u − L_v)`,
/// `c_v = (1 − ε) [v = x_i] + ε / M`. With `ε = 0` this is the plain term.
///
/// Mixing each conditional with the uniform keeps conditional independence
/// intact and keeps the objective bounded below when some substituted rows
/// never occur in the data.
pub fn smoothed_discrete_term(l: &[f64], xi: usize, eps: f64, dl: Option<&mut [f64]>) -> f64 {
    let m = l.len();
    let top = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // shifted by the max so no single exponential overflows
    let s_top: f64 = l.iter().map(|v| (v - top).exp()).sum();
    let r: Vec<f64> = l.iter().map(|v| (top - v).exp() * s_top).collect();
    let c = |v: usize| -> f64 {
        let base = eps / m as f64;
        if v == xi {
            base + 1.0 - eps
        } else {
            base
        }
    };
    let mut value = 0.0;
    for (v, rv) in r.iter().enumerate() {
        let cv = c(v);
        if cv != 0.0 {
            value += 0.5 * cv * rv * rv;
        }
        value -= rv;
    }
    if let Some(dl) = dl {
        for (w, out) in dl.iter_mut().enumerate() {
            // ∂r_v/∂L_w = exp(L_w − L_v) − [v = w] r_v
            let mut d = 0.0;
            for (v, rv) in r.iter().enumerate() {
                let e = (l[w] - l[v]).exp();
                let drv = if v == w { e - rv } else { e };
                d += (c(v) * rv - 1.0) * drv;
            }
            *out = d;
        }
    }
    value
}

/// Unpenalized mixed objective: mean over rows of each variable's term.
pub fn mixed_loss<E: Energy + ?Sized>(model: &E, ds: &Dataset) -> Result<LossReport> {
    if ds.schema() != model.schema() {
        return Err(Error::Schema("dataset schema differs from model schema".into()));
    }
    let schema = model.schema();
    let d = schema.len();
    let mut per_variable = vec![0.0; d];
    for x in ds.rows() {
        let db = if schema.continuous_indices().is_empty() { None } else { Some(model.derivatives(x, Want::SCORE)?) };
        for (i, acc) in per_variable.iter_mut().enumerate() {
            *acc += if schema.is_discrete(i) {
                let l = model.substitute_discrete(x, i)?;
                discrete_term_from_logs(&l, x[i] as usize, None)
            } else {
                let db = db.as_ref().unwrap();
                let g = db.grad_of(i)?;
                0.5 * g * g + db.hess_of(i)?
            };
        }
    }
    let n = ds.n() as f64;
    per_variable.iter_mut().for_each(|s| *s /= n);
    let total = per_variable.iter().sum();
    Ok(LossReport { total, per_variable, penalty: 0.0 })
}

/// Mixed loss and its exact θ-gradient, one row per tape pass.
pub fn loss_and_gradient(model: &EnergyModel, ds: &Dataset) -> Result<(LossReport, Vec<f64>)> {
    let cache = model.feature_cache(ds)?;
    let rows: Vec<usize> = (0..ds.n()).collect();
    loss_and_gradient_cached(model, &cache, &rows, 0.0)
}

/// As [`loss_and_gradient`] over the listed rows of a feature cache (all
/// rows, or a minibatch), with discrete conditionals smoothed by `smoothing`.
pub fn loss_and_gradient_cached(
    model: &EnergyModel,
    cache: &FeatureCache,
    rows: &[usize],
    smoothing: f64,
) -> Result<(LossReport, Vec<f64>)> {
    if rows.is_empty() {
        return Err(Error::pre("loss needs at least one row"));
    }
    let schema = model.schema();
    let d = schema.len();
    let inv_n = 1.0 / rows.len() as f64;
    let mut grad = vec![0.0; model.n_params()];
    let mut per_variable = vec![0.0; d];
    let mut tape = Tape::new(model);
    let mut adj = Vec::new();
    let mut l = Vec::new();
    let mut dl = Vec::new();
    for &r in rows {
        let x = cache.row(r);
        tape.reset(model);
        let id = tape.push_cached(model, cache, r)?;
        adj.clear();
        for i in 0..d {
            let term = if schema.is_discrete(i) {
                let m = schema.cardinality(i);
                l.clear();
                for cat in 0..m {
                    l.push(tape.record(model, id, Primitive::Substitute { var: i, cat })?);
                }
                dl.resize(m, 0.0);
                let t = smoothed_discrete_term(&l, x[i] as usize, smoothing, Some(&mut dl));
                adj.extend(dl.iter().map(|v| v * inv_n));
                t
            } else {
                let g = tape.record(model, id, Primitive::Grad(i))?;
                let h = tape.record(model, id, Primitive::HessDiag(i))?;
                adj.push(g * inv_n);
                adj.push(inv_n);
                0.5 * g * g + h
            };
            if !term.is_finite() {
                return Err(Error::NonFinite(format!("loss term of variable {i} at row {}", r + 1)));
            }
            per_variable[i] += term * inv_n;
        }
        tape.backward_into(model, &adj, &mut grad)?;
    }
    let total = per_variable.iter().sum();
    Ok((LossReport { total, per_variable, penalty: 0.0 }, grad))
}

pub fn loss_theta_gradient(model: &EnergyModel, ds: &Dataset) -> Result<Vec<f64>> {
    Ok(loss_and_gradient(model, ds)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_discrete_terms() {
        assert_eq!(discrete_term_from_logs(&[0.0; 3], 1, None), -4.5);
        assert_eq!(discrete_term_from_logs(&[0.0; 2], 0, None), -2.0);
    }

    #[test]
    fn discrete_partials_match_differences() {
        let l = [0.3, -1.2, 0.7, 2.0];
        let mut dl = [0.0; 4];
        discrete_term_from_logs(&l, 2, Some(&mut dl));
        for w in 0..4 {
            let h = 1e-6;
            let mut a = l;
            let mut b = l;
            a[w] += h;
            b[w] -= h;
            let fd = (discrete_term_from_logs(&a, 2, None) - discrete_term_from_logs(&b, 2, None)) / (2.0 * h);
            assert!((fd - dl[w]).abs() < 1e-6 * (1.0 + fd.abs()), "{w}: {fd} vs {}", dl[w]);
        }
    }
}
