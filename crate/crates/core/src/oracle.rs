//! Exact enumeration and quadrature checks, independent of the fitted model.
//!
//! A [`TabularDistribution`] holds a full joint table over a few discrete
//! variables, optionally with one continuous variable discretized on a
//! uniform grid (trapezoidal weights). From it the oracle computes exact
//! conditional independence, exact GPM entries, and both forms of the
//! discrete and continuous score-matching objectives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::energy::{check_discrete, DerivBundle, Energy, EnergyModel, FeatureBasis, Want};
use crate::error::{Error, Result};
use crate::gpm::{cc_stat, dd_stat};
use crate::types::{Schema, VariableSpec};

/// Tolerance on probabilities for exact CI.
pub const CI_TOL: f64 = 1e-12;
/// Omega below this counts as zero for all-discrete pairs.
pub const DD_ZERO: f64 = 1e-9;
/// Omega below this counts as zero for mixed pairs.
pub const MD_ZERO: f64 = 1e-8;
pub const MIN_GRID_NODES: usize = 9;
pub const MAX_STATES: usize = 10_000;

/// Continuous variable discretized on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridAxis {
    pub var: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Uniform grid on `[lo, hi]` with trapezoidal weights.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n < 2 || !(hi > lo) {
        return Err(Error::pre("grid needs at least 2 nodes and hi > lo"));
    }
    let h = (hi - lo) / (n - 1) as f64;
    let nodes = (0..n).map(|t| lo + h * t as f64).collect();
    let mut weights = vec![h; n];
    weights[0] = h / 2.0;
    weights[n - 1] = h / 2.0;
    Ok((nodes, weights))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularDistribution {
    schema: Schema,
    disc: Vec<usize>,
    cards: Vec<usize>,
    axis: Option<GridAxis>,
    /// `prob[config * nodes + t]`; probability mass, or density at node `t`.
    prob: Vec<f64>,
    /// Closed-form `∂ log p / ∂x_c` per cell, if known.
    score: Option<Vec<f64>>,
}

fn n_configs(cards: &[usize]) -> usize {
    cards.iter().product()
}

fn config_index(cards: &[usize], cfg: &[usize]) -> usize {
    cfg.iter().zip(cards).fold(0, |acc, (v, m)| acc * m + v)
}

fn config_at(cards: &[usize], mut idx: usize, out: &mut [usize]) {
    for (slot, m) in out.iter_mut().zip(cards).rev() {
        *slot = idx % m;
        idx /= m;
    }
}

impl TabularDistribution {
    /// All-discrete table, row-major with the last variable fastest. The
    /// table is normalized; zero cells are allowed, but operations that need
    /// positivity reject them.
    pub fn discrete(cards: &[usize], prob: Vec<f64>) -> Result<Self> {
        let schema = Schema::discrete(cards)?;
        let states = n_configs(cards);
        if states > MAX_STATES {
            return Err(Error::pre(format!("{states} states exceed the enumeration limit {MAX_STATES}")));
        }
        if prob.len() != states {
            return Err(Error::DimensionMismatch { expected: states, got: prob.len() });
        }
        let prob = normalized(prob, None)?;
        Ok(Self { disc: (0..cards.len()).collect(), cards: cards.to_vec(), schema, axis: None, prob, score: None })
    }

    pub fn discrete_from_fn(cards: &[usize], f: impl Fn(&[usize]) -> f64) -> Result<Self> {
        let mut cfg = vec![0; cards.len()];
        let prob = (0..n_configs(cards))
            .map(|s| {
                config_at(cards, s, &mut cfg);
                f(&cfg)
            })
            .collect();
        Self::discrete(cards, prob)
    }

    /// Discrete variables with cardinalities `cards` plus one continuous
    /// variable at position `axis_var`, tabulated on `nodes` with quadrature
    /// `weights`. `density(cfg, x)` is the unnormalized joint density; the
    /// optional `score(cfg, x)` is its closed-form `∂/∂x log` density.
    pub fn mixed(
        cards: &[usize],
        axis_var: usize,
        nodes: Vec<f64>,
        weights: Vec<f64>,
        density: impl Fn(&[usize], f64) -> f64,
        score: Option<&dyn Fn(&[usize], f64) -> f64>,
    ) -> Result<Self> {
        let d = cards.len() + 1;
        if axis_var >= d {
            return Err(Error::pre("axis position out of range"));
        }
        if nodes.len() != weights.len() || nodes.len() < 2 {
            return Err(Error::pre("grid needs matching nodes and weights, at least 2"));
        }
        let states = n_configs(cards) * nodes.len();
        if states > MAX_STATES * 100 {
            return Err(Error::pre("table too large"));
        }
        let mut vars = Vec::with_capacity(d);
        let mut disc = Vec::with_capacity(cards.len());
        let mut it = cards.iter();
        for v in 0..d {
            if v == axis_var {
                vars.push(VariableSpec::continuous(format!("X{}", v + 1)));
            } else {
                vars.push(VariableSpec::discrete_indexed(format!("X{}", v + 1), *it.next().unwrap()));
                disc.push(v);
            }
        }
        let schema = Schema::new(vars)?;
        let mut cfg = vec![0; cards.len()];
        let mut prob = Vec::with_capacity(states);
        let mut sc = score.map(|_| Vec::with_capacity(states));
        for s in 0..n_configs(cards) {
            config_at(cards, s, &mut cfg);
            for &x in &nodes {
                prob.push(density(&cfg, x));
                if let (Some(out), Some(f)) = (sc.as_mut(), score) {
                    out.push(f(&cfg, x));
                }
            }
        }
        let prob = normalized(prob, Some(&weights))?;
        Ok(Self { schema, disc, cards: cards.to_vec(), axis: Some(GridAxis { var: axis_var, nodes, weights }), prob, score: sc })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn axis(&self) -> Option<&GridAxis> {
        self.axis.as_ref()
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cards
    }

    /// Probability of a discrete configuration (all-discrete tables only).
    pub fn prob(&self, cfg: &[usize]) -> f64 {
        self.prob[config_index(&self.cards, cfg)]
    }

    fn require_discrete(&self) -> Result<()> {
        if self.axis.is_some() {
            Err(Error::pre("operation needs an all-discrete table"))
        } else {
            Ok(())
        }
    }

    fn require_positive(&self) -> Result<()> {
        match self.prob.iter().position(|&p| p <= 0.0) {
            Some(s) => Err(Error::Positivity(format!("cell {s} has zero probability"))),
            None => Ok(()),
        }
    }

    /// Position of schema variable `v` among the discrete variables.
    fn disc_slot(&self, v: usize) -> Result<usize> {
        check_discrete(&self.schema, v)?;
        Ok(self.disc.iter().position(|&u| u == v).unwrap())
    }
}

fn normalized(mut prob: Vec<f64>, weights: Option<&[f64]>) -> Result<Vec<f64>> {
    if prob.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::pre("table entries must be finite and nonnegative"));
    }
    let total: f64 = match weights {
        None => prob.iter().sum(),
        Some(w) => prob.chunks(w.len()).map(|row| row.iter().zip(w).map(|(p, w)| p * w).sum::<f64>()).sum(),
    };
    if !(total > 0.0) {
        return Err(Error::pre("table has zero total mass"));
    }
    prob.iter_mut().for_each(|p| *p /= total);
    Ok(prob)
}

/// Pairwise Markov property of an all-discrete table: `X_i ⊥ X_j | rest`.
pub fn exact_ci(td: &TabularDistribution, i: usize, j: usize) -> Result<bool> {
    td.require_discrete()?;
    check_pair(td, i, j)?;
    let (si, sj) = (td.disc_slot(i)?, td.disc_slot(j)?);
    let (mi, mj) = (td.cards[si], td.cards[sj]);
    let mut cfg = vec![0; td.cards.len()];
    let mut t = vec![0.0; mi * mj];
    for s in 0..td.prob.len() {
        config_at(&td.cards, s, &mut cfg);
        if cfg[si] != 0 || cfg[sj] != 0 {
            continue;
        }
        for a in 0..mi {
            for b in 0..mj {
                cfg[si] = a;
                cfg[sj] = b;
                t[a * mj + b] = td.prob(&cfg);
            }
        }
        let mz: f64 = t.iter().sum();
        if mz == 0.0 {
            continue;
        }
        for a in 0..mi {
            let pa: f64 = (0..mj).map(|b| t[a * mj + b]).sum::<f64>() / mz;
            for b in 0..mj {
                let pb: f64 = (0..mi).map(|u| t[u * mj + b]).sum::<f64>() / mz;
                if (t[a * mj + b] / mz - pa * pb).abs() > CI_TOL {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// `X_c ⊥ X_dvar | rest` for a mixed table: the conditional of the
/// continuous axis must not depend on `X_dvar` for any setting of the rest.
pub fn exact_ci_mixed(td: &TabularDistribution, c: usize, dvar: usize) -> Result<bool> {
    let axis = td.axis.as_ref().ok_or_else(|| Error::pre("table has no continuous axis"))?;
    if axis.var != c {
        return Err(Error::NotContinuous(c));
    }
    let sd = td.disc_slot(dvar)?;
    let nn = axis.nodes.len();
    let mut cfg = vec![0; td.cards.len()];
    for s in 0..n_configs(&td.cards) {
        config_at(&td.cards, s, &mut cfg);
        if cfg[sd] != 0 {
            continue;
        }
        let cond = |cfg: &[usize]| -> Option<Vec<f64>> {
            let row = &td.prob[config_index(&td.cards, cfg) * nn..][..nn];
            let mass: f64 = row.iter().zip(&axis.weights).map(|(p, w)| p * w).sum();
            (mass > 0.0).then(|| row.iter().zip(&axis.weights).map(|(p, w)| p * w / mass).collect())
        };
        let base = cond(&cfg);
        for v in 1..td.cards[sd] {
            cfg[sd] = v;
            let other = cond(&cfg);
            if let (Some(a), Some(b)) = (&base, &other) {
                if a.iter().zip(b).any(|(x, y)| (x - y).abs() > CI_TOL) {
                    return Ok(false);
                }
            }
        }
        cfg[sd] = 0;
    }
    Ok(true)
}

fn check_pair(td: &TabularDistribution, i: usize, j: usize) -> Result<()> {
    if i == j || i >= td.schema.len() || j >= td.schema.len() {
        return Err(Error::pre(format!("invalid variable pair ({i}, {j})")));
    }
    Ok(())
}

/// Exact dd entry of Ω: `Σ_x m(x) Σ_{k,l ≥ 1} f_kl(x)²`, where `f_kl` is the
/// double log-difference against reference category 0.
pub fn exact_dd_omega(td: &TabularDistribution, i: usize, j: usize) -> Result<f64> {
    td.require_discrete()?;
    check_pair(td, i, j)?;
    td.require_positive()?;
    let (si, sj) = (td.disc_slot(i)?, td.disc_slot(j)?);
    let (mi, mj) = (td.cards[si], td.cards[sj]);
    let mut cfg = vec![0; td.cards.len()];
    let mut z = vec![0; td.cards.len()];
    let mut omega = 0.0;
    for s in 0..td.prob.len() {
        config_at(&td.cards, s, &mut cfg);
        z.copy_from_slice(&cfg);
        let mut lp = |a: usize, b: usize| {
            z[si] = a;
            z[sj] = b;
            td.prob(&z).ln()
        };
        let l00 = lp(0, 0);
        let mut sum = 0.0;
        for k in 1..mi {
            let lk0 = lp(k, 0);
            for l in 1..mj {
                let f = l00 - lk0 - lp(0, l) + lp(k, l);
                sum += f * f;
            }
        }
        omega += td.prob[s] * sum;
    }
    Ok(omega)
}

/// Exact cd entry of Ω by quadrature: `E[Σ_{k ≥ 1} (∂_c log p(x[d→0]) −
/// ∂_c log p(x[d→k]))²]`. Uses the closed-form score when the table has one,
/// otherwise fourth-order finite differences on the grid.
pub fn exact_md_omega(td: &TabularDistribution, c: usize, dvar: usize) -> Result<f64> {
    let axis = td.axis.as_ref().ok_or_else(|| Error::pre("table has no continuous axis"))?;
    if axis.var != c {
        return Err(Error::NotContinuous(c));
    }
    let nn = axis.nodes.len();
    if nn < MIN_GRID_NODES {
        return Err(Error::pre(format!("grid has {nn} nodes, needs at least {MIN_GRID_NODES}")));
    }
    let sd = td.disc_slot(dvar)?;
    td.require_positive()?;
    let score = match &td.score {
        Some(s) => s.clone(),
        None => grid_scores(td, axis)?,
    };
    let mut cfg = vec![0; td.cards.len()];
    let mut omega = 0.0;
    for s in 0..n_configs(&td.cards) {
        config_at(&td.cards, s, &mut cfg);
        let v = cfg[sd];
        let mut refs = Vec::with_capacity(td.cards[sd]);
        for k in 0..td.cards[sd] {
            cfg[sd] = k;
            refs.push(config_index(&td.cards, &cfg) * nn);
        }
        cfg[sd] = v;
        for t in 0..nn {
            let s0 = score[refs[0] + t];
            let sum: f64 = refs[1..].iter().map(|&r| (s0 - score[r + t]).powi(2)).sum();
            omega += axis.weights[t] * td.prob[s * nn + t] * sum;
        }
    }
    Ok(omega)
}

fn grid_scores(td: &TabularDistribution, axis: &GridAxis) -> Result<Vec<f64>> {
    let nn = axis.nodes.len();
    let h = axis.nodes[1] - axis.nodes[0];
    let uniform = axis.nodes.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.abs());
    if !uniform || h <= 0.0 {
        return Err(Error::pre("finite differences need an ascending uniform grid"));
    }
    let mut out = Vec::with_capacity(td.prob.len());
    for row in td.prob.chunks(nn) {
        let lp: Vec<f64> = row.iter().map(|p| p.ln()).collect();
        for t in 0..nn {
            out.push(fd4(&lp, t, h));
        }
    }
    Ok(out)
}

/// Fourth-order first derivative at node `t`; one-sided stencils at the ends.
fn fd4(f: &[f64], t: usize, h: f64) -> f64 {
    let n = f.len();
    let g = |o: isize| f[(t as isize + o) as usize];
    if t >= 2 && t + 2 < n {
        (-g(2) + 8.0 * g(1) - 8.0 * g(-1) + g(-2)) / (12.0 * h)
    } else if t < 2 {
        let b = -(t as isize);
        let w: [f64; 5] = if t == 0 { [-25.0, 48.0, -36.0, 16.0, -3.0] } else { [-3.0, -10.0, 18.0, -6.0, 1.0] };
        (0..5).map(|q| w[q] * g(b + q as isize)).sum::<f64>() / (12.0 * h)
    } else {
        let back = n - 1 - t;
        let w: [f64; 5] = if back == 0 { [-25.0, 48.0, -36.0, 16.0, -3.0] } else { [-3.0, -10.0, 18.0, -6.0, 1.0] };
        let b = back as isize;
        -(0..5).map(|q| w[q] * g(b - q as isize)).sum::<f64>() / (12.0 * h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectivePair {
    /// Form that needs the data score (or data PMF ratios).
    pub explicit: f64,
    /// Form that needs only the model.
    pub implicit: f64,
    pub constant: f64,
}

/// Both discrete objectives by enumeration for the model log-density
/// `log_model` (unnormalized, indexed by configuration):
/// - `explicit = Σ_x m(x) Σ_i (r_i^θ(x) − r_i^X(x))²`
/// - `implicit = Σ_x m(x) Σ_i [½ r_i^θ(x)² − Σ_v r_i^θ(x[i→v])]`
/// - `constant = explicit − 2 · implicit = Σ_x m(x) ‖r^X(x)‖²`
///
/// with `r_i(x) = Σ_v p(x[i→v]) / p(x)`.
pub fn exact_discrete_objective_constant(td: &TabularDistribution, log_model: &dyn Fn(&[usize]) -> Result<f64>) -> Result<ObjectivePair> {
    td.require_discrete()?;
    td.require_positive()?;
    let cards = &td.cards;
    let d = cards.len();
    let mut cfg = vec![0; d];
    let logs: Vec<f64> = (0..td.prob.len())
        .map(|s| {
            config_at(cards, s, &mut cfg);
            log_model(&cfg)
        })
        .collect::<Result<_>>()?;
    if logs.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("model log-density".into()));
    }
    let mut explicit = 0.0;
    let mut implicit = 0.0;
    let mut z = vec![0; d];
    for s in 0..td.prob.len() {
        config_at(cards, s, &mut cfg);
        for i in 0..d {
            z.copy_from_slice(&cfg);
            let mut lm = Vec::with_capacity(cards[i]);
            let mut pd = Vec::with_capacity(cards[i]);
            for v in 0..cards[i] {
                z[i] = v;
                let idx = config_index(cards, &z);
                lm.push(logs[idx]);
                pd.push(td.prob[idx]);
            }
            let ratio = |l: &[f64], at: usize| l.iter().map(|u| (u - l[at]).exp()).sum::<f64>();
            let r_model = ratio(&lm, cfg[i]);
            let r_data = pd.iter().sum::<f64>() / td.prob[s];
            let m_r: f64 = (0..cards[i]).map(|v| ratio(&lm, v)).sum();
            explicit += td.prob[s] * (r_model - r_data).powi(2);
            implicit += td.prob[s] * (0.5 * r_model * r_model - m_r);
        }
    }
    Ok(ObjectivePair { explicit, implicit, constant: explicit - 2.0 * implicit })
}

/// Both continuous objectives for a one-variable model by quadrature on
/// `nodes`/`weights`, against a data density `p` with score `psi`:
/// - `explicit = ½ ∫ p (ψ_θ − ψ)²`
/// - `implicit = ∫ p (½ ψ_θ² + ψ_θ′)`
///
/// `constant = explicit − implicit = ½ ∫ p ψ²` whenever `p ψ_θ` vanishes at
/// the ends of the grid.
pub fn exact_continuous_objective_constant<E: Energy + ?Sized>(
    model: &E,
    nodes: &[f64],
    weights: &[f64],
    p: &dyn Fn(f64) -> f64,
    psi: &dyn Fn(f64) -> f64,
) -> Result<ObjectivePair> {
    if model.schema().len() != 1 || model.schema().is_discrete(0) {
        return Err(Error::pre("quadrature objective needs a one-variable continuous model"));
    }
    if nodes.len() != weights.len() {
        return Err(Error::DimensionMismatch { expected: nodes.len(), got: weights.len() });
    }
    let mut explicit = 0.0;
    let mut implicit = 0.0;
    for (&x, &w) in nodes.iter().zip(weights) {
        let db = model.derivatives(&[x], Want::SCORE)?;
        let (g, h) = (db.grad[0], db.hess_diag[0]);
        let px = p(x);
        explicit += w * px * 0.5 * (g - psi(x)).powi(2);
        implicit += w * px * (0.5 * g * g + h);
    }
    Ok(ObjectivePair { explicit, implicit, constant: explicit - implicit })
}

/// An all-discrete table viewed as an energy: `log π̃(x) = log m(x)`.
#[derive(Debug, Clone)]
pub struct LookupModel {
    td: TabularDistribution,
}

impl LookupModel {
    pub fn new(td: TabularDistribution) -> Result<Self> {
        td.require_discrete()?;
        td.require_positive()?;
        Ok(Self { td })
    }
}

impl Energy for LookupModel {
    fn schema(&self) -> &Schema {
        &self.td.schema
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.td.schema.check_row(x)?;
        let cfg: Vec<usize> = x.iter().map(|v| *v as usize).collect();
        Ok(self.td.prob(&cfg).ln())
    }

    fn derivatives(&self, x: &[f64], _want: Want) -> Result<DerivBundle> {
        Ok(DerivBundle { value: self.log_density(x)?, cont: Vec::new(), grad: Vec::new(), hess_diag: Vec::new(), cross: Vec::new() })
    }
}

/// Zero-mean Gaussian energy `−½ xᵀ Λ x` with precision `Λ`.
#[derive(Debug, Clone)]
pub struct GaussianEnergy {
    schema: Schema,
    precision: Vec<f64>,
}

impl GaussianEnergy {
    pub fn new(precision: Vec<f64>, d: usize) -> Result<Self> {
        if precision.len() != d * d {
            return Err(Error::DimensionMismatch { expected: d * d, got: precision.len() });
        }
        Ok(Self { schema: Schema::continuous(d), precision })
    }
}

impl Energy for GaussianEnergy {
    fn schema(&self) -> &Schema {
        &self.schema
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.schema.check_row(x)?;
        let d = x.len();
        let mut q = 0.0;
        for i in 0..d {
            for j in 0..d {
                q += x[i] * self.precision[i * d + j] * x[j];
            }
        }
        Ok(-0.5 * q)
    }

    fn derivatives(&self, x: &[f64], want: Want) -> Result<DerivBundle> {
        let d = x.len();
        let value = self.log_density(x)?;
        let lam = &self.precision;
        let grad = if want.grad { (0..d).map(|i| -(0..d).map(|j| lam[i * d + j] * x[j]).sum::<f64>()).collect() } else { Vec::new() };
        let hess_diag = if want.hess_diag || want.cross { (0..d).map(|i| -lam[i * d + i]).collect() } else { Vec::new() };
        let cross = if want.cross { lam.iter().map(|v| -v).collect() } else { Vec::new() };
        Ok(DerivBundle { value, cont: (0..d).collect(), grad, hess_diag, cross })
    }
}

/// Random strictly positive table with `X_i ⊥ X_j | rest` by construction:
/// `m(z) m(x_i | z) m(x_j | z)`.
pub fn random_ci_table(cards: &[usize], i: usize, j: usize, rng: &mut impl Rng) -> Result<TabularDistribution> {
    if i == j || i >= cards.len() || j >= cards.len() {
        return Err(Error::pre("invalid CI pair"));
    }
    let d = cards.len();
    let rest: Vec<usize> = (0..d).filter(|&v| v != i && v != j).collect();
    let rest_cards: Vec<usize> = rest.iter().map(|&v| cards[v]).collect();
    let nz = n_configs(&rest_cards);
    let mz: Vec<f64> = (0..nz).map(|_| positive(rng)).collect();
    let ci: Vec<Vec<f64>> = (0..nz).map(|_| simplex(cards[i], rng)).collect();
    let cj: Vec<Vec<f64>> = (0..nz).map(|_| simplex(cards[j], rng)).collect();
    TabularDistribution::discrete_from_fn(cards, |cfg| {
        let zc: Vec<usize> = rest.iter().map(|&v| cfg[v]).collect();
        let z = config_index(&rest_cards, &zc);
        mz[z] * ci[z][cfg[i]] * cj[z][cfg[j]]
    })
}

/// Random strictly positive table with independent cell weights.
pub fn random_generic_table(cards: &[usize], rng: &mut impl Rng) -> Result<TabularDistribution> {
    let prob = (0..n_configs(cards)).map(|_| positive(rng)).collect();
    TabularDistribution::discrete(cards, prob)
}

fn positive(rng: &mut impl Rng) -> f64 {
    let e: f64 = Exp1.sample(rng);
    e + 0.05
}

fn simplex(m: usize, rng: &mut impl Rng) -> Vec<f64> {
    let w: Vec<f64> = (0..m).map(|_| positive(rng)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Mixed construction over `(X_c, X_d, Z)`: `X_c` continuous, `X_d` with
/// `md` categories, `Z` with `mz`. Given `(X_d, Z)`, `X_c` is a two-component
/// Gaussian mixture; when `ci` the mixture depends on `Z` only. The score is
/// carried in closed form.
pub fn random_mixed_construction(
    md: usize,
    mz: usize,
    ci: bool,
    grid: (f64, f64, usize),
    rng: &mut impl Rng,
) -> Result<TabularDistribution> {
    #[derive(Clone, Copy)]
    struct Comp {
        w: f64,
        mu: f64,
        sd: f64,
    }
    let draw = |rng: &mut ChaCha8Rng| -> [Comp; 2] {
        let w = rng.random_range(0.2..0.8);
        let mut comp = |w: f64| {
            let z: f64 = StandardNormal.sample(rng);
            Comp { w, mu: 1.5 * z, sd: rng.random_range(0.6..1.4) }
        };
        [comp(w), comp(1.0 - w)]
    };
    let mut inner = ChaCha8Rng::seed_from_u64(rng.random());
    let joint = simplex(md * mz, &mut inner);
    let mut mixtures = Vec::with_capacity(md * mz);
    let per_z: Vec<[Comp; 2]> = (0..mz).map(|_| draw(&mut inner)).collect();
    for _ in 0..md {
        for z in 0..mz {
            mixtures.push(if ci { per_z[z] } else { draw(&mut inner) });
        }
    }
    let normal = |c: &Comp, x: f64| {
        let u = (x - c.mu) / c.sd;
        c.w * (-0.5 * u * u).exp() / (c.sd * (2.0 * std::f64::consts::PI).sqrt())
    };
    let dens = |cfg: &[usize], x: f64| {
        let m = &mixtures[cfg[0] * mz + cfg[1]];
        joint[cfg[0] * mz + cfg[1]] * (normal(&m[0], x) + normal(&m[1], x))
    };
    let score = |cfg: &[usize], x: f64| {
        let m = &mixtures[cfg[0] * mz + cfg[1]];
        let (a, b) = (normal(&m[0], x), normal(&m[1], x));
        (-a * (x - m[0].mu) / (m[0].sd * m[0].sd) - b * (x - m[1].mu) / (m[1].sd * m[1].sd)) / (a + b)
    };
    let (nodes, weights) = uniform_grid(grid.0, grid.1, grid.2)?;
    TabularDistribution::mixed(&[md, mz], 0, nodes, weights, dens, Some(&score))
}

/// Signature of a dd statistic, so the battery can run against a substitute.
pub type DdStatFn = fn(&dyn Energy, &[f64], usize, usize, usize, usize) -> Result<f64>;

pub fn library_dd_stat(model: &dyn Energy, x: &[f64], i: usize, j: usize, k: usize, l: usize) -> Result<f64> {
    dd_stat(model, x, i, j, k, l)
}

/// Ω_ij of a lookup model computed through a dd statistic, by enumeration.
pub fn lookup_dd_omega(td: &TabularDistribution, i: usize, j: usize, stat: DdStatFn) -> Result<f64> {
    let model = LookupModel::new(td.clone())?;
    let (si, sj) = (td.disc_slot(i)?, td.disc_slot(j)?);
    let mut cfg = vec![0; td.cards.len()];
    let mut omega = 0.0;
    for s in 0..td.prob.len() {
        config_at(&td.cards, s, &mut cfg);
        let x: Vec<f64> = cfg.iter().map(|&v| v as f64).collect();
        let mut sum = 0.0;
        for k in 1..td.cards[si] {
            for l in 1..td.cards[sj] {
                sum += stat(&model, &x, i, j, k, l)?.powi(2);
            }
        }
        omega += td.prob[s] * sum;
    }
    Ok(omega)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn failing(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    /// Random tables for the discrete iff check; half as many mixed ones.
    pub trials: usize,
    pub seed: u64,
    pub dd_stat: DdStatFn,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { trials: 200, seed: 0, dd_stat: library_dd_stat }
    }
}

/// Outcome of the discrete iff check over random 3-variable tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IffTally {
    pub trials: usize,
    pub agree: usize,
}

/// Random 3-variable tables (cardinalities 2 or 3), alternating CI and
/// generic. A trial agrees when the exact Ω, the Ω computed through `stat`
/// on a lookup model, and exact CI all say the same thing.
pub fn thm1_iff(trials: usize, seed: u64, stat: DdStatFn) -> Result<IffTally> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agree = 0;
    for t in 0..trials {
        let cards: Vec<usize> = (0..3).map(|_| rng.random_range(2..=3)).collect();
        let (i, j) = [(0, 1), (0, 2), (1, 2)][rng.random_range(0..3)];
        let td = if t % 2 == 0 { random_ci_table(&cards, i, j, &mut rng)? } else { random_generic_table(&cards, &mut rng)? };
        let ci = exact_ci(&td, i, j)?;
        let exact = exact_dd_omega(&td, i, j)?;
        let via = lookup_dd_omega(&td, i, j, stat)?;
        if (exact <= DD_ZERO) == ci && (via <= DD_ZERO) == ci && (via - exact).abs() <= 1e-9 * (1.0 + exact) {
            agree += 1;
        }
    }
    Ok(IffTally { trials, agree })
}

/// Random mixed constructions, alternating CI and not.
pub fn thm2_iff(trials: usize, seed: u64) -> Result<IffTally> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agree = 0;
    for t in 0..trials {
        let md = rng.random_range(2..=3);
        let mz = rng.random_range(2..=3);
        let td = random_mixed_construction(md, mz, t % 2 == 0, (-12.0, 12.0, 481), &mut rng)?;
        let ci = exact_ci_mixed(&td, 0, 1)?;
        if (exact_md_omega(&td, 0, 1)? <= MD_ZERO) == ci {
            agree += 1;
        }
    }
    Ok(IffTally { trials, agree })
}

/// Spread (max − min) of the discrete-objective constant across `draws`
/// random θ of a pairwise RBF model on the given table.
pub fn lemma2_spread(td: &TabularDistribution, draws: usize, seed: u64) -> Result<(f64, Vec<f64>)> {
    let schema = td.schema().clone();
    let d = schema.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = 3;
    let codebooks: Vec<Vec<f64>> = (0..d).map(|i| crate::energy::default_codebook(schema.cardinality(i))).collect();
    let centers: Vec<f64> = (0..k * d).map(|_| rng.random_range(0.0..1.0)).collect();
    let basis = FeatureBasis { k, d, centers, bandwidths: vec![0.7; d], codebooks, alpha: 0.0 };
    let mut constants = Vec::with_capacity(draws);
    for _ in 0..draws {
        let n = k * (d + crate::energy::pair_count(d));
        let theta: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let model = EnergyModel::new(schema.clone(), basis.clone(), theta)?;
        let log_model = |cfg: &[usize]| {
            let x: Vec<f64> = cfg.iter().map(|&v| v as f64).collect();
            model.log_density(&x)
        };
        constants.push(exact_discrete_objective_constant(td, &log_model)?.constant);
    }
    Ok((spread(&constants), constants))
}

/// Relative spread of the continuous-objective constant across `draws`
/// random θ, with data `N(mu, sd²)` on a 2001-node grid over `[−10, 10]`.
pub fn lemma1_relative_spread(draws: usize, seed: u64, mu: f64, sd: f64) -> Result<(f64, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nodes, weights) = uniform_grid(-10.0, 10.0, 2001)?;
    let k = 5;
    let centers: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
    let basis = FeatureBasis { k, d: 1, centers, bandwidths: vec![1.0], codebooks: vec![Vec::new()], alpha: 0.05 };
    let norm = 1.0 / (sd * (2.0 * std::f64::consts::PI).sqrt());
    let p = move |x: f64| norm * (-0.5 * ((x - mu) / sd).powi(2)).exp();
    let psi = move |x: f64| -(x - mu) / (sd * sd);
    let mut constants = Vec::with_capacity(draws);
    for _ in 0..draws {
        let theta: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let model = EnergyModel::new(Schema::continuous(1), basis.clone(), theta)?;
        constants.push(exact_continuous_objective_constant(&model, &nodes, &weights, &p, &psi)?.constant);
    }
    let scale = constants.iter().map(|c| c.abs()).fold(0.0, f64::max);
    Ok((spread(&constants) / scale.max(f64::MIN_POSITIVE), constants))
}

fn spread(v: &[f64]) -> f64 {
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    hi - lo
}

/// The three fixed spaces used by the discrete-objective check.
pub fn lemma2_tables() -> Result<Vec<TabularDistribution>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1e44a2);
    [vec![2, 2], vec![3, 2], vec![2, 3, 2]].iter().map(|c| random_generic_table(c, &mut rng)).collect()
}

fn check(name: &str, run: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    match run() {
        Ok((passed, detail)) => CheckResult { name: name.into(), passed, detail },
        Err(e) => CheckResult { name: name.into(), passed: false, detail: format!("error: {e}") },
    }
}

/// Runs every exact check. The report passes iff all checks pass.
pub fn verify(opts: &VerifyOptions) -> VerifyReport {
    let mut checks = Vec::new();
    checks.push(check("thm1-iff", || {
        let t = thm1_iff(opts.trials, opts.seed, opts.dd_stat)?;
        Ok((t.agree == t.trials, format!("{}/{} tables agree", t.agree, t.trials)))
    }));
    checks.push(check("thm2-iff", || {
        let t = thm2_iff((opts.trials / 2).max(1), opts.seed ^ 0x7102)?;
        Ok((t.agree == t.trials, format!("{}/{} constructions agree", t.agree, t.trials)))
    }));
    checks.push(check("dd-closed-form", || {
        let td = TabularDistribution::discrete(&[2, 2], vec![0.4, 0.1, 0.1, 0.4])?;
        let want = (2.0 * 4f64.ln()).powi(2);
        let got = exact_dd_omega(&td, 0, 1)?;
        let via = lookup_dd_omega(&td, 0, 1, opts.dd_stat)?;
        Ok(((got - want).abs() < 1e-12 && (via - want).abs() < 1e-9, format!("omega {got}, via statistic {via}, expected {want}")))
    }));
    checks.push(check("md-closed-form", || {
        let (nodes, weights) = uniform_grid(-6.0, 7.0, 131)?;
        let mut worst: f64 = 0.0;
        for (shift, want) in [(0.0, 0.0), (1.0, 1.0), (2.0, 4.0)] {
            let dens = move |cfg: &[usize], x: f64| {
                let u = x - shift * cfg[0] as f64;
                (-0.5 * u * u).exp()
            };
            let td = TabularDistribution::mixed(&[2], 0, nodes.clone(), weights.clone(), dens, None)?;
            worst = worst.max((exact_md_omega(&td, 0, 1)? - want).abs());
        }
        Ok((worst < 1e-6, format!("max error {worst:e}")))
    }));
    checks.push(check("lemma1-equivalence", || {
        let (rel, _) = lemma1_relative_spread(10, opts.seed, 0.3, 1.2)?;
        Ok((rel <= 1e-4, format!("relative spread {rel:e}")))
    }));
    checks.push(check("lemma2-equivalence", || {
        let mut worst: f64 = 0.0;
        for (s, td) in lemma2_tables()?.iter().enumerate() {
            worst = worst.max(lemma2_spread(td, 10, opts.seed.wrapping_add(s as u64))?.0);
        }
        let uniform = TabularDistribution::discrete(&[2, 2], vec![0.25; 4])?;
        let c = exact_discrete_objective_constant(&uniform, &|_| Ok(0.0))?.constant;
        Ok((worst <= 1e-10 && (c - 8.0).abs() < 1e-12, format!("max spread {worst:e}, uniform constant {c}")))
    }));
    checks.push(check("gaussian-crosscheck", || {
        let lam = vec![2.0, 0.6, 0.0, 0.6, 2.0, -0.5, 0.0, -0.5, 2.0];
        let g = GaussianEnergy::new(lam.clone(), 3)?;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            worst = worst.max(cc_stat(&g, &x, 0, 2)?.abs());
            worst = worst.max((cc_stat(&g, &x, 0, 1)? + lam[1]).abs());
        }
        Ok((worst < 1e-12, format!("max deviation {worst:e}")))
    }));
    VerifyReport { passed: checks.iter().all(|c| c.passed), checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_table_is_ci_everywhere() {
        let td =
            TabularDistribution::discrete_from_fn(&[2, 3, 2], |c| [0.3, 0.7][c[0]] * [0.2, 0.5, 0.3][c[1]] * [0.6, 0.4][c[2]]).unwrap();
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            assert!(exact_ci(&td, i, j).unwrap());
            assert!(exact_dd_omega(&td, i, j).unwrap() < 1e-12);
        }
    }

    #[test]
    fn coupled_pair_closed_form() {
        let td = TabularDistribution::discrete(&[2, 2], vec![0.4, 0.1, 0.1, 0.4]).unwrap();
        assert!(!exact_ci(&td, 0, 1).unwrap());
        assert!((exact_dd_omega(&td, 0, 1).unwrap() - 7.687_248_222_691_222).abs() < 1e-9);
    }

    #[test]
    fn zero_cell_rejected_by_omega() {
        let td = TabularDistribution::discrete(&[2, 2], vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        assert!(matches!(exact_dd_omega(&td, 0, 1), Err(Error::Positivity(_))));
    }

    #[test]
    fn coarse_grid_rejected() {
        let (n, w) = uniform_grid(-1.0, 1.0, 8).unwrap();
        let td = TabularDistribution::mixed(&[2], 0, n, w, |_, x| (-x * x).exp(), None).unwrap();
        assert!(exact_md_omega(&td, 0, 1).is_err());
    }

    #[test]
    fn fd4_is_exact_on_quartics() {
        let h = 0.1;
        let f: Vec<f64> = (0..9).map(|t| (t as f64 * h).powi(4)).collect();
        for t in 0..9 {
            let x = t as f64 * h;
            assert!((fd4(&f, t, h) - 4.0 * x.powi(3)).abs() < 1e-10, "node {t}");
        }
    }

    #[test]
    fn uniform_discrete_constant_is_eight() {
        let td = TabularDistribution::discrete(&[2, 2], vec![0.25; 4]).unwrap();
        let r = exact_discrete_objective_constant(&td, &|_| Ok(0.0)).unwrap();
        assert_eq!(r.explicit, 0.0);
        assert!((r.constant - 8.0).abs() < 1e-12);
    }

    #[test]
    fn matching_lookup_model_has_zero_explicit_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let td = random_generic_table(&[3, 2], &mut rng).unwrap();
        let r = exact_discrete_objective_constant(&td, &|c| Ok(td.prob(c).ln() + 1.7)).unwrap();
        assert!(r.explicit.abs() < 1e-20);
    }

    #[test]
    fn default_battery_passes() {
        let report = verify(&VerifyOptions { trials: 20, seed: 1, ..Default::default() });
        assert!(report.passed, "{:?}", report.checks);
    }
}
