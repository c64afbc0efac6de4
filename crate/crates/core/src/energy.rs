//! Feature-linear unnormalized energy model.
//!
//! Rows are embedded coordinate-wise: continuous values pass through and
//! discrete categories map to fixed real codes `v / (M - 1)`. For each of `K`
//! centers (training rows) and each coordinate `i` there is a 1-D Gaussian
//! bump `b_ki(u_i) = exp(-(u_i - c_ki)^2 / (2 w_i^2))`. The log-density is
//!
//! ```text
//! log π̃(x; θ) = Σ_k Σ_i θ^U_ki b_ki + Σ_k Σ_{i<j} θ^P_kij b_ki b_kj − α Σ_{i cont} x_i²
//! ```
//!
//! so every pair of variables interacts only through its own block
//! `θ^P_{·ij}`. All derivatives, substitutions, and pair statistics are
//! linear in θ, which is what makes the [`Tape`] exact.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpm::{PairEntry, StatLayout};
use crate::types::{Dataset, Schema, Standardization};

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_MAX_CENTERS: usize = 30;
pub const DEFAULT_BANDWIDTH_SCALE: f64 = 2.0;
pub const BANDWIDTH_FLOOR: f64 = 1e-3;
const BANDWIDTH_SUBSAMPLE: usize = 500;

/// Index of the unordered pair `{i, j}` (`i != j`) in the packed upper triangle.
#[inline]
pub fn pair_index(i: usize, j: usize, d: usize) -> usize {
    let (i, j) = if i < j { (i, j) } else { (j, i) };
    i * d - i * (i + 1) / 2 + (j - i - 1)
}

pub fn pair_count(d: usize) -> usize {
    d * d.saturating_sub(1) / 2
}

/// Which derivative blocks [`Energy::derivatives`] should fill.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Want {
    pub grad: bool,
    pub hess_diag: bool,
    pub cross: bool,
}

impl Want {
    pub const ALL: Want = Want { grad: true, hess_diag: true, cross: true };
    pub const SCORE: Want = Want { grad: true, hess_diag: true, cross: false };
}

/// Derivatives of the log-density with respect to the continuous coordinates.
///
/// Vectors are indexed by position in `cont` (the schema's continuous
/// indices, ascending); `cross` is the full symmetric `c × c` Hessian whose
/// diagonal equals `hess_diag`. Blocks that were not requested are empty.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivBundle {
    pub value: f64,
    pub cont: Vec<usize>,
    pub grad: Vec<f64>,
    pub hess_diag: Vec<f64>,
    pub cross: Vec<f64>,
}

impl DerivBundle {
    fn position(&self, i: usize) -> Result<usize> {
        self.cont.iter().position(|&c| c == i).ok_or(Error::NotContinuous(i))
    }

    pub fn grad_of(&self, i: usize) -> Result<f64> {
        Ok(self.grad[self.position(i)?])
    }

    pub fn hess_of(&self, i: usize) -> Result<f64> {
        Ok(self.hess_diag[self.position(i)?])
    }

    pub fn cross_of(&self, i: usize, j: usize) -> Result<f64> {
        let c = self.cont.len();
        Ok(self.cross[self.position(i)? * c + self.position(j)?])
    }
}

/// Anything that supplies an unnormalized log-density over a schema.
///
/// The fitted [`EnergyModel`] implements every method in closed form; test
/// fixtures (lookup tables, analytic densities) only need the first three.
pub trait Energy {
    fn schema(&self) -> &Schema;

    fn log_density(&self, x: &[f64]) -> Result<f64>;

    fn derivatives(&self, x: &[f64], want: Want) -> Result<DerivBundle>;

    /// Log-density with discrete coordinate `i` set to each of its categories.
    fn substitute_discrete(&self, x: &[f64], i: usize) -> Result<Vec<f64>> {
        check_discrete(self.schema(), i)?;
        let mut z = x.to_vec();
        (0..self.schema().cardinality(i))
            .map(|v| {
                z[i] = v as f64;
                self.log_density(&z)
            })
            .collect()
    }

    /// `∂ log π̃ / ∂x_c` with discrete coordinate `dvar` set to each category.
    fn grad_under_substitution(&self, x: &[f64], c: usize, dvar: usize) -> Result<Vec<f64>> {
        check_continuous(self.schema(), c)?;
        check_discrete(self.schema(), dvar)?;
        let want = Want { grad: true, ..Want::default() };
        let mut z = x.to_vec();
        (0..self.schema().cardinality(dvar))
            .map(|v| {
                z[dvar] = v as f64;
                self.derivatives(&z, want)?.grad_of(c)
            })
            .collect()
    }

    /// Log-density table over all category pairs of discrete `i` and `j`,
    /// row-major in `i`'s category.
    fn pair_log_table(&self, x: &[f64], i: usize, j: usize) -> Result<Vec<f64>> {
        check_discrete(self.schema(), i)?;
        check_discrete(self.schema(), j)?;
        let (mi, mj) = (self.schema().cardinality(i), self.schema().cardinality(j));
        let mut z = x.to_vec();
        let mut out = Vec::with_capacity(mi * mj);
        for a in 0..mi {
            for b in 0..mj {
                z[i] = a as f64;
                z[j] = b as f64;
                out.push(self.log_density(&z)?);
            }
        }
        Ok(out)
    }

    /// Raw GPM statistics for every pair at row `x` (see [`StatLayout`]).
    fn pair_statistics(&self, x: &[f64], layout: &StatLayout, out: &mut [f64]) -> Result<()> {
        crate::gpm::generic_pair_statistics(self, x, layout, out)
    }
}

pub(crate) fn check_discrete(schema: &Schema, i: usize) -> Result<()> {
    if i >= schema.len() {
        return Err(Error::pre(format!("variable index {i} out of range")));
    }
    if schema.is_discrete(i) {
        Ok(())
    } else {
        Err(Error::NotDiscrete(i))
    }
}

pub(crate) fn check_continuous(schema: &Schema, i: usize) -> Result<()> {
    if i >= schema.len() {
        return Err(Error::pre(format!("variable index {i} out of range")));
    }
    if schema.is_discrete(i) {
        Err(Error::NotContinuous(i))
    } else {
        Ok(())
    }
}

/// Centers, bandwidths, discrete codebooks, and the quadratic anchor weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBasis {
    pub k: usize,
    pub d: usize,
    /// `k × d` embedded center coordinates, row-major by center.
    pub centers: Vec<f64>,
    pub bandwidths: Vec<f64>,
    /// Per variable real codes (empty for continuous variables).
    pub codebooks: Vec<Vec<f64>>,
    pub alpha: f64,
}

impl FeatureBasis {
    pub fn validate(&self, schema: &Schema) -> Result<()> {
        if self.k == 0 {
            return Err(Error::pre("basis needs at least one center"));
        }
        if self.d != schema.len() || self.bandwidths.len() != self.d || self.codebooks.len() != self.d {
            return Err(Error::DimensionMismatch { expected: schema.len(), got: self.d });
        }
        if self.centers.len() != self.k * self.d {
            return Err(Error::DimensionMismatch { expected: self.k * self.d, got: self.centers.len() });
        }
        if self.bandwidths.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::pre("bandwidths must be positive and finite"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::pre("alpha must be nonnegative"));
        }
        for (i, cb) in self.codebooks.iter().enumerate() {
            let expect = if schema.is_discrete(i) { schema.cardinality(i) } else { 0 };
            if cb.len() != expect {
                return Err(Error::pre(format!("codebook {i} has {} codes, expected {expect}", cb.len())));
            }
            for a in 0..cb.len() {
                for b in a + 1..cb.len() {
                    if cb[a] == cb[b] {
                        return Err(Error::pre(format!("codebook {i} has repeated codes")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn embed_value(&self, i: usize, x: f64) -> f64 {
        if self.codebooks[i].is_empty() {
            x
        } else {
            self.codebooks[i][x as usize]
        }
    }

    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(i, &v)| self.embed_value(i, v)).collect()
    }
}

/// Evenly spaced codes on `[0, 1]`.
pub fn default_codebook(m: usize) -> Vec<f64> {
    (0..m).map(|v| v as f64 / (m - 1) as f64).collect()
}

/// Samples `k` distinct rows as centers and sets per-coordinate bandwidths
/// to `scale` times the median pairwise distance on a subsample of at most
/// 500 rows.
pub fn build_basis(ds: &Dataset, k: usize, alpha: f64, scale: f64, seed: u64) -> Result<FeatureBasis> {
    let n = ds.n();
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::pre("bandwidth scale must be positive"));
    }
    if k == 0 || k > n {
        return Err(Error::pre(format!("K = {k} must lie in [1, n = {n}]")));
    }
    let schema = ds.schema();
    let d = ds.d();
    let codebooks: Vec<Vec<f64>> =
        (0..d).map(|i| if schema.is_discrete(i) { default_codebook(schema.cardinality(i)) } else { Vec::new() }).collect();
    let proto = FeatureBasis { k, d, centers: Vec::new(), bandwidths: vec![1.0; d], codebooks, alpha };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = Vec::with_capacity(k * d);
    for r in sample(&mut rng, n, k).into_vec() {
        centers.extend(proto.embed(ds.row(r)));
    }
    let sub: Vec<usize> = sample(&mut rng, n, n.min(BANDWIDTH_SUBSAMPLE)).into_vec();
    let mut diffs = Vec::with_capacity(sub.len() * sub.len() / 2);
    let mut bandwidths = Vec::with_capacity(d);
    for i in 0..d {
        let col: Vec<f64> = sub.iter().map(|&r| proto.embed_value(i, ds.row(r)[i])).collect();
        diffs.clear();
        for a in 0..col.len() {
            for b in a + 1..col.len() {
                diffs.push((col[a] - col[b]).abs());
            }
        }
        let med = if diffs.is_empty() {
            0.0
        } else {
            let mid = diffs.len() / 2;
            *diffs.select_nth_unstable_by(mid, f64::total_cmp).1
        };
        bandwidths.push((scale * med).max(BANDWIDTH_FLOOR));
    }
    let basis = FeatureBasis { centers, bandwidths, ..proto };
    basis.validate(schema)?;
    Ok(basis)
}

static NEXT_STAMP: AtomicU64 = AtomicU64::new(1);

fn fresh_stamp() -> u64 {
    NEXT_STAMP.fetch_add(1, Ordering::Relaxed)
}

static NEXT_BASIS_ID: AtomicU64 = AtomicU64::new(1);

/// Pairwise RBF energy with parameter vector θ.
///
/// θ layout: `K × d` unary weights (center-major) followed by `K × P` pair
/// weights, `P = d(d-1)/2` in [`pair_index`] order.
#[derive(Debug, Clone)]
pub struct EnergyModel {
    schema: Schema,
    basis: FeatureBasis,
    basis_id: u64,
    theta: Vec<f64>,
    stamp: u64,
    /// `code_bumps[i][v * K + k]`: bump of center `k` at category `v` of variable `i`.
    code_bumps: Vec<Vec<f64>>,
    inv_w2: Vec<f64>,
    cont: Vec<usize>,
}

impl PartialEq for EnergyModel {
    fn eq(&self, other: &Self) -> bool {
        self.schema == other.schema && self.basis == other.basis && self.theta == other.theta
    }
}

impl EnergyModel {
    pub fn new(schema: Schema, basis: FeatureBasis, theta: Vec<f64>) -> Result<Self> {
        schema.validate()?;
        basis.validate(&schema)?;
        let len = basis.k * (basis.d + pair_count(basis.d));
        if theta.len() != len {
            return Err(Error::DimensionMismatch { expected: len, got: theta.len() });
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("theta".into()));
        }
        let inv_w2 = basis.bandwidths.iter().map(|w| 1.0 / (w * w)).collect();
        let code_bumps = (0..basis.d)
            .map(|i| {
                let mut out = Vec::with_capacity(basis.codebooks[i].len() * basis.k);
                for &code in &basis.codebooks[i] {
                    for k in 0..basis.k {
                        let z = (code - basis.centers[k * basis.d + i]) / basis.bandwidths[i];
                        out.push((-0.5 * z * z).exp());
                    }
                }
                out
            })
            .collect();
        let cont = schema.continuous_indices();
        Ok(Self {
            schema,
            basis,
            basis_id: NEXT_BASIS_ID.fetch_add(1, Ordering::Relaxed),
            theta,
            stamp: fresh_stamp(),
            code_bumps,
            inv_w2,
            cont,
        })
    }

    pub fn zeros(schema: Schema, basis: FeatureBasis) -> Result<Self> {
        let len = basis.k * (basis.d + pair_count(basis.d));
        Self::new(schema, basis, vec![0.0; len])
    }

    pub fn basis(&self) -> &FeatureBasis {
        &self.basis
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    /// Identifies the current θ; changes on every mutation.
    pub fn stamp(&self) -> u64 {
        self.stamp
    }

    pub fn set_theta(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.theta.len() {
            return Err(Error::DimensionMismatch { expected: self.theta.len(), got: theta.len() });
        }
        self.theta.copy_from_slice(theta);
        self.stamp = fresh_stamp();
        Ok(())
    }

    /// Applies `f` to θ in place and refreshes the stamp.
    pub fn update_theta(&mut self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.theta);
        self.stamp = fresh_stamp();
    }

    pub fn with_theta(&self, theta: &[f64]) -> Result<Self> {
        let mut m = self.clone();
        m.set_theta(theta)?;
        Ok(m)
    }

    fn k(&self) -> usize {
        self.basis.k
    }

    fn d(&self) -> usize {
        self.basis.d
    }

    fn n_pairs(&self) -> usize {
        pair_count(self.d())
    }

    pub fn unary_index(&self, k: usize, i: usize) -> usize {
        k * self.d() + i
    }

    pub fn pair_param_index(&self, k: usize, p: usize) -> usize {
        self.k() * self.d() + k * self.n_pairs() + p
    }

    fn code_bump(&self, i: usize, v: usize, k: usize) -> f64 {
        self.code_bumps[i][v * self.k() + k]
    }

    fn check_row(&self, x: &[f64]) -> Result<()> {
        self.schema.check_row(x)
    }

    /// Bumps `b` and log-slopes `a` (zero for discrete coordinates) at `x`,
    /// layout `[k * d + i]`.
    fn bumps_into(&self, x: &[f64], b: &mut [f64], a: &mut [f64]) {
        let (k, d) = (self.k(), self.d());
        for kk in 0..k {
            let c = &self.basis.centers[kk * d..(kk + 1) * d];
            for i in 0..d {
                let idx = kk * d + i;
                if self.code_bumps[i].is_empty() {
                    let diff = x[i] - c[i];
                    b[idx] = (-0.5 * diff * diff * self.inv_w2[i]).exp();
                    a[idx] = -diff * self.inv_w2[i];
                } else {
                    b[idx] = self.code_bump(i, x[i] as usize, kk);
                    a[idx] = 0.0;
                }
            }
        }
    }

    fn bumps(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.k() * self.d();
        let (mut b, mut a) = (vec![0.0; n], vec![0.0; n]);
        self.bumps_into(x, &mut b, &mut a);
        (b, a)
    }

    /// `t_ki = θ^U_ki + Σ_{j≠i} θ^P_kij b_kj`, the coefficient multiplying
    /// `b_ki` in every quantity that varies with coordinate `i`; returns the
    /// log-density.
    fn coefficients(&self, x: &[f64], b: &[f64], t: &mut Vec<f64>) -> f64 {
        let (k, d, np) = (self.k(), self.d(), self.n_pairs());
        t.clear();
        t.extend_from_slice(&self.theta[..k * d]);
        let pair_theta = &self.theta[k * d..];
        for kk in 0..k {
            let bk = &b[kk * d..(kk + 1) * d];
            let tp = &pair_theta[kk * np..(kk + 1) * np];
            let tk = &mut t[kk * d..(kk + 1) * d];
            let mut p = 0;
            for i in 0..d {
                let bi = bk[i];
                let mut acc = 0.0;
                for j in i + 1..d {
                    let w = tp[p];
                    acc += w * bk[j];
                    tk[j] += w * bi;
                    p += 1;
                }
                tk[i] += acc;
            }
        }
        let anchor: f64 = self.cont.iter().map(|&i| x[i] * x[i]).sum::<f64>() * self.basis.alpha;
        let mut value = -anchor;
        for idx in 0..k * d {
            // unary part plus half of each pair, since t counts every pair from both ends
            value += b[idx] * 0.5 * (self.theta[idx] + t[idx]);
        }
        value
    }

    fn eval_grad(&self, b: &[f64], a: &[f64], t: &[f64], x: &[f64], i: usize) -> f64 {
        let d = self.d();
        let mut g = -2.0 * self.basis.alpha * x[i];
        for kk in 0..self.k() {
            let q = kk * d + i;
            g += b[q] * a[q] * t[q];
        }
        g
    }

    fn eval_hess(&self, b: &[f64], a: &[f64], t: &[f64], i: usize) -> f64 {
        let d = self.d();
        let mut h = -2.0 * self.basis.alpha;
        for kk in 0..self.k() {
            let q = kk * d + i;
            h += b[q] * (a[q] * a[q] - self.inv_w2[i]) * t[q];
        }
        h
    }

    fn eval_cross(&self, b: &[f64], a: &[f64], i: usize, j: usize) -> f64 {
        let (d, np) = (self.d(), self.n_pairs());
        let base = self.k() * d + pair_index(i, j, d);
        let mut h = 0.0;
        for kk in 0..self.k() {
            let (qi, qj) = (kk * d + i, kk * d + j);
            h += self.theta[base + kk * np] * b[qi] * a[qi] * b[qj] * a[qj];
        }
        h
    }

    fn eval_substitute(&self, b: &[f64], t: &[f64], value: f64, i: usize, v: usize) -> f64 {
        let d = self.d();
        let mut out = value;
        for kk in 0..self.k() {
            let q = kk * d + i;
            out += (self.code_bump(i, v, kk) - b[q]) * t[q];
        }
        out
    }

    fn eval_double_diff(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let (d, np) = (self.d(), self.n_pairs());
        let base = self.k() * d + pair_index(i, j, d);
        let mut out = 0.0;
        for kk in 0..self.k() {
            let di = self.code_bump(i, 0, kk) - self.code_bump(i, k, kk);
            let dj = self.code_bump(j, 0, kk) - self.code_bump(j, l, kk);
            out += self.theta[base + kk * np] * di * dj;
        }
        out
    }

    fn eval_grad_diff(&self, b: &[f64], a: &[f64], c: usize, dvar: usize, cat: usize) -> f64 {
        let (d, np) = (self.d(), self.n_pairs());
        let base = self.k() * d + pair_index(c, dvar, d);
        let mut out = 0.0;
        for kk in 0..self.k() {
            let q = kk * d + c;
            let dd = self.code_bump(dvar, 0, kk) - self.code_bump(dvar, cat, kk);
            out += self.theta[base + kk * np] * b[q] * a[q] * dd;
        }
        out
    }

    fn stats_from_bumps(&self, b: &[f64], a: &[f64], layout: &StatLayout, out: &mut [f64]) -> Result<()> {
        if out.len() != layout.total() {
            return Err(Error::DimensionMismatch { expected: layout.total(), got: out.len() });
        }
        for (p, entry) in layout.entries().iter().enumerate() {
            let slot = &mut out[layout.offset(p)..layout.offset(p + 1)];
            match *entry {
                PairEntry::Cc { i, j } => slot[0] = self.eval_cross(b, a, i, j),
                PairEntry::Dd { i, j, mi, mj } => {
                    let mut s = 0;
                    for k in 1..mi {
                        for l in 1..mj {
                            slot[s] = self.eval_double_diff(i, j, k, l);
                            s += 1;
                        }
                    }
                }
                PairEntry::Cd { c, dvar, m } => {
                    for k in 1..m {
                        slot[k - 1] = self.eval_grad_diff(b, a, c, dvar, k);
                    }
                }
            }
        }
        Ok(())
    }

    /// Precomputes the θ-independent features of every row of `ds`.
    pub fn feature_cache(&self, ds: &Dataset) -> Result<FeatureCache> {
        if ds.schema() != &self.schema {
            return Err(Error::Schema("dataset schema differs from model schema".into()));
        }
        let w = self.k() * self.d();
        let mut b = vec![0.0; ds.n() * w];
        let mut a = vec![0.0; ds.n() * w];
        for (r, x) in ds.rows().enumerate() {
            self.bumps_into(x, &mut b[r * w..(r + 1) * w], &mut a[r * w..(r + 1) * w]);
        }
        Ok(FeatureCache { basis_id: self.basis_id, width: w, rows: ds.values().to_vec(), d: self.d(), b, a })
    }

    /// Pair statistics of cached row `r` (see [`StatLayout`]).
    pub fn cached_pair_statistics(&self, cache: &FeatureCache, r: usize, layout: &StatLayout, out: &mut [f64]) -> Result<()> {
        cache.check(self)?;
        let (b, a) = cache.features(r);
        self.stats_from_bumps(b, a, layout, out)
    }

    pub fn checkpoint(&self, standardization: Option<&Standardization>) -> ModelCheckpoint {
        ModelCheckpoint {
            schema: self.schema.clone(),
            basis: self.basis.clone(),
            theta: self.theta.clone(),
            standardization: standardization.cloned(),
        }
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self> {
        Self::new(ck.schema.clone(), ck.basis.clone(), ck.theta.clone())
    }
}

/// θ-independent features (bumps and log-slopes) of the rows of a dataset,
/// valid for every model sharing the basis it was built from.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    basis_id: u64,
    width: usize,
    d: usize,
    rows: Vec<f64>,
    b: Vec<f64>,
    a: Vec<f64>,
}

impl FeatureCache {
    pub fn n(&self) -> usize {
        self.rows.len() / self.d.max(1)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.rows[r * self.d..(r + 1) * self.d]
    }

    fn features(&self, r: usize) -> (&[f64], &[f64]) {
        let s = r * self.width..(r + 1) * self.width;
        (&self.b[s.clone()], &self.a[s])
    }

    fn check(&self, model: &EnergyModel) -> Result<()> {
        if self.basis_id != model.basis_id {
            return Err(Error::pre("feature cache was built for a different basis"));
        }
        Ok(())
    }
}

impl Energy for EnergyModel {
    fn schema(&self) -> &Schema {
        &self.schema
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_row(x)?;
        let (b, _) = self.bumps(x);
        Ok(self.coefficients(x, &b, &mut Vec::new()))
    }

    fn derivatives(&self, x: &[f64], want: Want) -> Result<DerivBundle> {
        self.check_row(x)?;
        let (b, a) = self.bumps(x);
        let mut t = Vec::new();
        let value = self.coefficients(x, &b, &mut t);
        let cont = self.cont.clone();
        let c = cont.len();
        let grad = if want.grad { cont.iter().map(|&i| self.eval_grad(&b, &a, &t, x, i)).collect() } else { Vec::new() };
        let hess: Vec<f64> =
            if want.hess_diag || want.cross { cont.iter().map(|&i| self.eval_hess(&b, &a, &t, i)).collect() } else { Vec::new() };
        let mut cross = Vec::new();
        if want.cross {
            cross = vec![0.0; c * c];
            for p in 0..c {
                cross[p * c + p] = hess[p];
                for q in p + 1..c {
                    let h = self.eval_cross(&b, &a, cont[p], cont[q]);
                    cross[p * c + q] = h;
                    cross[q * c + p] = h;
                }
            }
        }
        Ok(DerivBundle { value, cont, grad, hess_diag: if want.hess_diag { hess } else { Vec::new() }, cross })
    }

    fn substitute_discrete(&self, x: &[f64], i: usize) -> Result<Vec<f64>> {
        check_discrete(&self.schema, i)?;
        self.check_row(x)?;
        let (b, _) = self.bumps(x);
        let mut t = Vec::new();
        let value = self.coefficients(x, &b, &mut t);
        Ok((0..self.schema.cardinality(i)).map(|v| self.eval_substitute(&b, &t, value, i, v)).collect())
    }

    fn grad_under_substitution(&self, x: &[f64], c: usize, dvar: usize) -> Result<Vec<f64>> {
        check_continuous(&self.schema, c)?;
        check_discrete(&self.schema, dvar)?;
        self.check_row(x)?;
        let mut z = x.to_vec();
        let mut t = Vec::new();
        (0..self.schema.cardinality(dvar))
            .map(|v| {
                z[dvar] = v as f64;
                let (b, a) = self.bumps(&z);
                self.coefficients(&z, &b, &mut t);
                Ok(self.eval_grad(&b, &a, &t, &z, c))
            })
            .collect()
    }

    fn pair_statistics(&self, x: &[f64], layout: &StatLayout, out: &mut [f64]) -> Result<()> {
        self.check_row(x)?;
        let (b, a) = self.bumps(x);
        self.stats_from_bumps(&b, &a, layout, out)
    }
}

/// Serialized model: schema, basis, θ, and (when fitted through the
/// training pipeline) the standardization the model expects its inputs in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub schema: Schema,
    pub basis: FeatureBasis,
    pub theta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardization: Option<Standardization>,
}

/// A recorded primitive evaluation. Each is an affine function of θ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    LogDensity,
    Grad(usize),
    HessDiag(usize),
    /// Cross derivative of two distinct continuous coordinates.
    Cross(usize, usize),
    /// Log-density with discrete `var` set to category `cat`.
    Substitute {
        var: usize,
        cat: usize,
    },
    /// `(L(0,0) − L(k,0)) − (L(0,l) − L(k,l))` for discrete `i`, `j`.
    DoubleDiff {
        i: usize,
        j: usize,
        k: usize,
        l: usize,
    },
    /// `∂_c log π̃` at `dvar = 0` minus at `dvar = cat`.
    GradDiff {
        c: usize,
        dvar: usize,
        cat: usize,
    },
}

/// Records primitive evaluations against one model state so that the exact
/// θ-gradient of any scalar function of the recorded values can be formed by
/// the chain rule: `∇θ F = Σ_p (∂F/∂v_p) ∇θ v_p`.
///
/// Rows are stored once (with their features) and referenced by id.
/// Recording is cheapest when all primitives of a row are recorded
/// consecutively.
#[derive(Default)]
pub struct Tape {
    stamp: u64,
    d: usize,
    width: usize,
    rows: Vec<f64>,
    b: Vec<f64>,
    a: Vec<f64>,
    entries: Vec<(u32, Primitive)>,
    values: Vec<f64>,
    /// Row id, coefficients `t`, and log-density of the last row that needed them.
    current: Option<(usize, Vec<f64>, f64)>,
}

impl Tape {
    pub fn new(model: &EnergyModel) -> Self {
        let mut t = Self::default();
        t.reset(model);
        t
    }

    /// Drops all rows and entries and re-binds the tape to `model`'s state.
    pub fn reset(&mut self, model: &EnergyModel) {
        self.stamp = model.stamp();
        self.d = model.d();
        self.width = model.k() * model.d();
        self.rows.clear();
        self.b.clear();
        self.a.clear();
        self.entries.clear();
        self.values.clear();
        self.current = None;
    }

    pub fn push_row(&mut self, model: &EnergyModel, x: &[f64]) -> Result<usize> {
        model.check_row(x)?;
        self.rows.extend_from_slice(x);
        let start = self.b.len();
        self.b.resize(start + self.width, 0.0);
        self.a.resize(start + self.width, 0.0);
        model.bumps_into(x, &mut self.b[start..], &mut self.a[start..]);
        Ok(self.rows.len() / self.d - 1)
    }

    /// Pushes row `r` of a feature cache without recomputing its features.
    pub fn push_cached(&mut self, model: &EnergyModel, cache: &FeatureCache, r: usize) -> Result<usize> {
        cache.check(model)?;
        self.rows.extend_from_slice(cache.row(r));
        let (b, a) = cache.features(r);
        self.b.extend_from_slice(b);
        self.a.extend_from_slice(a);
        Ok(self.rows.len() / self.d - 1)
    }

    fn row(&self, id: usize) -> &[f64] {
        &self.rows[id * self.d..(id + 1) * self.d]
    }

    fn features(&self, id: usize) -> (&[f64], &[f64]) {
        let s = id * self.width..(id + 1) * self.width;
        (&self.b[s.clone()], &self.a[s])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, Primitive)> + '_ {
        self.entries.iter().map(|&(r, p)| (r as usize, p))
    }

    fn validate(&self, model: &EnergyModel, prim: Primitive) -> Result<()> {
        let s = &model.schema;
        let cat_ok = |var: usize, cat: usize, allow_zero: bool| -> Result<()> {
            let m = s.cardinality(var);
            if cat >= m || (!allow_zero && cat == 0) {
                return Err(Error::pre(format!("category {cat} invalid for variable {var} (M = {m})")));
            }
            Ok(())
        };
        match prim {
            Primitive::LogDensity => Ok(()),
            Primitive::Grad(i) | Primitive::HessDiag(i) => check_continuous(s, i),
            Primitive::Cross(i, j) => {
                check_continuous(s, i)?;
                check_continuous(s, j)?;
                if i == j {
                    return Err(Error::pre("cross derivative needs two distinct coordinates"));
                }
                Ok(())
            }
            Primitive::Substitute { var, cat } => {
                check_discrete(s, var)?;
                cat_ok(var, cat, true)
            }
            Primitive::DoubleDiff { i, j, k, l } => {
                check_discrete(s, i)?;
                check_discrete(s, j)?;
                if i == j {
                    return Err(Error::pre("double difference needs two distinct variables"));
                }
                cat_ok(i, k, false)?;
                cat_ok(j, l, false)
            }
            Primitive::GradDiff { c, dvar, cat } => {
                check_continuous(s, c)?;
                check_discrete(s, dvar)?;
                cat_ok(dvar, cat, false)
            }
        }
    }

    /// Evaluates `prim` at stored row `row`, records it, and returns its value.
    pub fn record(&mut self, model: &EnergyModel, row: usize, prim: Primitive) -> Result<f64> {
        if model.stamp() != self.stamp {
            return Err(Error::StaleTape);
        }
        if row >= self.rows.len() / self.d.max(1) {
            return Err(Error::pre(format!("row id {row} was never pushed")));
        }
        self.validate(model, prim)?;
        let needs_t = matches!(prim, Primitive::LogDensity | Primitive::Grad(_) | Primitive::HessDiag(_) | Primitive::Substitute { .. });
        if needs_t && self.current.as_ref().is_none_or(|(r, _, _)| *r != row) {
            let mut t = self.current.take().map(|c| c.1).unwrap_or_default();
            let (b, _) = self.features(row);
            let value = model.coefficients(self.row(row), b, &mut t);
            self.current = Some((row, t, value));
        }
        let x = self.row(row);
        let (b, a) = self.features(row);
        let value = match prim {
            Primitive::Cross(i, j) => model.eval_cross(b, a, i, j),
            Primitive::DoubleDiff { i, j, k, l } => model.eval_double_diff(i, j, k, l),
            Primitive::GradDiff { c, dvar, cat } => model.eval_grad_diff(b, a, c, dvar, cat),
            _ => {
                let (_, t, value) = self.current.as_ref().unwrap();
                match prim {
                    Primitive::LogDensity => *value,
                    Primitive::Grad(i) => model.eval_grad(b, a, t, x, i),
                    Primitive::HessDiag(i) => model.eval_hess(b, a, t, i),
                    Primitive::Substitute { var, cat } => model.eval_substitute(b, t, *value, var, cat),
                    _ => unreachable!(),
                }
            }
        };
        self.entries.push((row as u32, prim));
        self.values.push(value);
        Ok(value)
    }

    /// Exact θ-gradient of `F` given `adjoints[p] = ∂F/∂values[p]`.
    pub fn backward(&self, model: &EnergyModel, adjoints: &[f64]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; model.n_params()];
        self.backward_into(model, adjoints, &mut grad)?;
        Ok(grad)
    }

    /// Like [`Tape::backward`] but accumulates into `grad`.
    pub fn backward_into(&self, model: &EnergyModel, adjoints: &[f64], grad: &mut [f64]) -> Result<()> {
        if model.stamp() != self.stamp {
            return Err(Error::StaleTape);
        }
        if adjoints.len() != self.entries.len() {
            return Err(Error::DimensionMismatch { expected: self.entries.len(), got: adjoints.len() });
        }
        if grad.len() != model.n_params() {
            return Err(Error::DimensionMismatch { expected: model.n_params(), got: grad.len() });
        }
        let (k, d, np) = (model.k(), model.d(), model.n_pairs());
        let mut start = 0;
        let mut coef = vec![0.0; k * d];
        while start < self.entries.len() {
            let row = self.entries[start].0;
            let mut end = start;
            while end < self.entries.len() && self.entries[end].0 == row {
                end += 1;
            }
            let (b, a) = self.features(row as usize);
            // Dense primitives fold into `level` (multiplies every feature)
            // and `coef` (multiplies features through one coordinate's bump).
            let mut level = 0.0;
            let mut dense = false;
            coef.iter_mut().for_each(|c| *c = 0.0);
            for idx in start..end {
                let w = adjoints[idx];
                if w == 0.0 {
                    continue;
                }
                match self.entries[idx].1 {
                    Primitive::LogDensity => {
                        level += w;
                        dense = true;
                    }
                    Primitive::Grad(i) => {
                        for kk in 0..k {
                            let q = kk * d + i;
                            coef[q] += w * b[q] * a[q];
                        }
                        dense = true;
                    }
                    Primitive::HessDiag(i) => {
                        for kk in 0..k {
                            let q = kk * d + i;
                            coef[q] += w * b[q] * (a[q] * a[q] - model.inv_w2[i]);
                        }
                        dense = true;
                    }
                    Primitive::Substitute { var, cat } => {
                        level += w;
                        for kk in 0..k {
                            let q = kk * d + var;
                            coef[q] += w * (model.code_bump(var, cat, kk) - b[q]);
                        }
                        dense = true;
                    }
                    Primitive::Cross(i, j) => {
                        let base = k * d + pair_index(i, j, d);
                        for kk in 0..k {
                            let (qi, qj) = (kk * d + i, kk * d + j);
                            grad[base + kk * np] += w * b[qi] * a[qi] * b[qj] * a[qj];
                        }
                    }
                    Primitive::DoubleDiff { i, j, k: ck, l } => {
                        let base = k * d + pair_index(i, j, d);
                        for kk in 0..k {
                            let di = model.code_bump(i, 0, kk) - model.code_bump(i, ck, kk);
                            let dj = model.code_bump(j, 0, kk) - model.code_bump(j, l, kk);
                            grad[base + kk * np] += w * di * dj;
                        }
                    }
                    Primitive::GradDiff { c, dvar, cat } => {
                        let base = k * d + pair_index(c, dvar, d);
                        for kk in 0..k {
                            let q = kk * d + c;
                            let dd = model.code_bump(dvar, 0, kk) - model.code_bump(dvar, cat, kk);
                            grad[base + kk * np] += w * b[q] * a[q] * dd;
                        }
                    }
                }
            }
            if dense {
                // Unary feature b_ki: level·b_ki + coef_ki.
                // Pair feature b_ki b_kj: level·b_ki b_kj + coef_ki b_kj + coef_kj b_ki.
                for kk in 0..k {
                    let bk = &b[kk * d..(kk + 1) * d];
                    let ck = &coef[kk * d..(kk + 1) * d];
                    for i in 0..d {
                        grad[kk * d + i] += level * bk[i] + ck[i];
                    }
                    let gp = &mut grad[k * d + kk * np..k * d + (kk + 1) * np];
                    let mut p = 0;
                    for i in 0..d {
                        let (bi, ci) = (bk[i], ck[i]);
                        let li = level * bi + ci;
                        for j in i + 1..d {
                            gp[p] += li * bk[j] + ck[j] * bi;
                            p += 1;
                        }
                    }
                }
            }
            start = end;
        }
        Ok(())
    }
}

/// θ-gradient of a functional recorded on `tape`; `adjoints[p]` is the
/// partial derivative of the functional with respect to the p-th recorded
/// value.
pub fn theta_gradient(model: &EnergyModel, tape: &Tape, adjoints: &[f64]) -> Result<Vec<f64>> {
    tape.backward(model, adjoints)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::VariableSpec;

    fn one_d_basis(center: f64, alpha: f64) -> FeatureBasis {
        FeatureBasis { k: 1, d: 1, centers: vec![center], bandwidths: vec![1.0], codebooks: vec![vec![]], alpha }
    }

    #[test]
    fn pair_index_is_dense() {
        let d = 5;
        let mut seen = vec![false; pair_count(d)];
        for i in 0..d {
            for j in i + 1..d {
                let p = pair_index(i, j, d);
                assert!(!seen[p]);
                seen[p] = true;
                assert_eq!(p, pair_index(j, i, d));
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn zero_model_is_flat() {
        let m = EnergyModel::zeros(Schema::continuous(1), one_d_basis(0.3, 0.0)).unwrap();
        assert_eq!(m.log_density(&[1.7]).unwrap(), 0.0);
    }

    #[test]
    fn anchor_only() {
        let m = EnergyModel::zeros(Schema::continuous(1), one_d_basis(0.3, 1.0)).unwrap();
        assert_eq!(m.log_density(&[2.0]).unwrap(), -4.0);
        let db = m.derivatives(&[2.0], Want::ALL).unwrap();
        assert_eq!(db.grad, vec![-4.0]);
        assert_eq!(db.hess_diag, vec![-2.0]);
    }

    #[test]
    fn kernel_is_one_at_its_center() {
        let m = EnergyModel::new(Schema::continuous(1), one_d_basis(0.7, 0.0), vec![3.0]).unwrap();
        assert_eq!(m.log_density(&[0.7]).unwrap(), 3.0);
    }

    #[test]
    fn discrete_derivative_is_rejected() {
        let schema = Schema::new(vec![VariableSpec::continuous("c"), VariableSpec::discrete_indexed("d", 2)]).unwrap();
        let basis = FeatureBasis {
            k: 1,
            d: 2,
            centers: vec![0.0, 1.0],
            bandwidths: vec![1.0, 1.0],
            codebooks: vec![vec![], vec![0.0, 1.0]],
            alpha: 0.1,
        };
        let m = EnergyModel::zeros(schema, basis).unwrap();
        let db = m.derivatives(&[0.5, 1.0], Want::ALL).unwrap();
        assert!(matches!(db.grad_of(1), Err(Error::NotContinuous(1))));
        let mut tape = Tape::new(&m);
        let r = tape.push_row(&m, &[0.5, 1.0]).unwrap();
        assert!(matches!(tape.record(&m, r, Primitive::Grad(1)), Err(Error::NotContinuous(1))));
        assert!(matches!(m.substitute_discrete(&[0.5, 1.0], 0), Err(Error::NotDiscrete(0))));
    }

    #[test]
    fn stale_tape_is_rejected() {
        let mut m = EnergyModel::zeros(Schema::continuous(1), one_d_basis(0.0, 0.1)).unwrap();
        let mut tape = Tape::new(&m);
        let r = tape.push_row(&m, &[0.2]).unwrap();
        tape.record(&m, r, Primitive::LogDensity).unwrap();
        m.set_theta(&[1.0]).unwrap();
        assert!(matches!(tape.backward(&m, &[1.0]), Err(Error::StaleTape)));
        assert!(matches!(tape.record(&m, r, Primitive::LogDensity), Err(Error::StaleTape)));
    }

    #[test]
    fn build_basis_rules() {
        let schema = Schema::new(vec![VariableSpec::continuous("c"), VariableSpec::discrete_indexed("b", 2)]).unwrap();
        let ds = Dataset::new(schema, vec![1.0, 0.0, 1.0, 1.0, 1.0, 0.0]).unwrap();
        let basis = build_basis(&ds, 2, DEFAULT_ALPHA, 1.0, 9).unwrap();
        assert_eq!(basis.codebooks[1], vec![0.0, 1.0]);
        assert_eq!(basis.bandwidths[0], BANDWIDTH_FLOOR);
        assert_eq!(basis, build_basis(&ds, 2, DEFAULT_ALPHA, 1.0, 9).unwrap());
        assert!(build_basis(&ds, 4, DEFAULT_ALPHA, 1.0, 9).is_err());
    }
}
