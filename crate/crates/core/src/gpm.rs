//! Generalized Precision Matrix: per-pair statistics, Ω, and graph extraction.
//!
//! Pair statistics at a row `x` (category 0 is the reference):
//! - cc: `∂² log π̃ / ∂x_i ∂x_j`
//! - dd: `(L(0,0) − L(k,0)) − (L(0,l) − L(k,l))` for `k, l ≥ 1`
//! - cd: `∂_c log π̃` at `dvar = 0` minus at `dvar = k`, for `k ≥ 1`
//!
//! Ω is the empirical mean of the summed squares of each pair's statistics.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::energy::{check_continuous, check_discrete, pair_count, Energy, Want};
use crate::error::{Error, Result};
use crate::graphs::UndirectedGraph;
use crate::types::{Dataset, Schema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Cc,
    Dd,
    Cd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convention {
    /// Every entry is a mean of squares.
    Squared,
    /// cc entries are square-rooted; dd and cd entries stay as means.
    Rooted,
}

/// One variable pair and the shape of its statistic block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairEntry {
    Cc { i: usize, j: usize },
    Dd { i: usize, j: usize, mi: usize, mj: usize },
    Cd { c: usize, dvar: usize, m: usize },
}

impl PairEntry {
    pub fn kind(&self) -> EntryKind {
        match self {
            PairEntry::Cc { .. } => EntryKind::Cc,
            PairEntry::Dd { .. } => EntryKind::Dd,
            PairEntry::Cd { .. } => EntryKind::Cd,
        }
    }

    pub fn width(&self) -> usize {
        match *self {
            PairEntry::Cc { .. } => 1,
            PairEntry::Dd { mi, mj, .. } => (mi - 1) * (mj - 1),
            PairEntry::Cd { m, .. } => m - 1,
        }
    }
}

/// Flat layout of all pair statistics of a schema: pair `p` (in packed
/// upper-triangle order) owns `out[offset(p)..offset(p + 1)]`. dd blocks are
/// ordered by `k` then `l`; cd blocks by `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatLayout {
    d: usize,
    entries: Vec<PairEntry>,
    offsets: Vec<usize>,
}

impl StatLayout {
    pub fn new(schema: &Schema) -> Self {
        let d = schema.len();
        let mut entries = Vec::with_capacity(pair_count(d));
        let mut offsets = vec![0];
        for i in 0..d {
            for j in i + 1..d {
                let e = match (schema.is_discrete(i), schema.is_discrete(j)) {
                    (false, false) => PairEntry::Cc { i, j },
                    (true, true) => PairEntry::Dd { i, j, mi: schema.cardinality(i), mj: schema.cardinality(j) },
                    (false, true) => PairEntry::Cd { c: i, dvar: j, m: schema.cardinality(j) },
                    (true, false) => PairEntry::Cd { c: j, dvar: i, m: schema.cardinality(i) },
                };
                offsets.push(offsets.last().unwrap() + e.width());
                entries.push(e);
            }
        }
        Self { d, entries, offsets }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn entries(&self) -> &[PairEntry] {
        &self.entries
    }

    pub fn offset(&self, p: usize) -> usize {
        self.offsets[p]
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }
}

pub fn cc_stat<E: Energy + ?Sized>(model: &E, x: &[f64], i: usize, j: usize) -> Result<f64> {
    check_continuous(model.schema(), i)?;
    check_continuous(model.schema(), j)?;
    if i == j {
        return Err(Error::pre("cc statistic needs i != j"));
    }
    model.derivatives(x, Want { cross: true, ..Want::default() })?.cross_of(i, j)
}

pub fn dd_stat<E: Energy + ?Sized>(model: &E, x: &[f64], i: usize, j: usize, k: usize, l: usize) -> Result<f64> {
    check_discrete(model.schema(), i)?;
    check_discrete(model.schema(), j)?;
    if i == j {
        return Err(Error::pre("dd statistic needs i != j"));
    }
    let (mi, mj) = (model.schema().cardinality(i), model.schema().cardinality(j));
    if k == 0 || k >= mi || l == 0 || l >= mj {
        return Err(Error::pre(format!("categories (k, l) = ({k}, {l}) must lie in [1, {mi}) x [1, {mj})")));
    }
    let t = model.pair_log_table(x, i, j)?;
    Ok(double_difference(&t, mj, k, l))
}

fn double_difference(t: &[f64], mj: usize, k: usize, l: usize) -> f64 {
    (t[0] - t[k * mj]) - (t[l] - t[k * mj + l])
}

pub fn cd_stat<E: Energy + ?Sized>(model: &E, x: &[f64], c: usize, dvar: usize, k: usize) -> Result<f64> {
    check_continuous(model.schema(), c)?;
    check_discrete(model.schema(), dvar)?;
    let m = model.schema().cardinality(dvar);
    if k == 0 || k >= m {
        return Err(Error::pre(format!("category {k} must lie in [1, {m})")));
    }
    let g = model.grad_under_substitution(x, c, dvar)?;
    Ok(g[0] - g[k])
}

/// Pair statistics from the generic [`Energy`] methods.
pub fn generic_pair_statistics<E: Energy + ?Sized>(model: &E, x: &[f64], layout: &StatLayout, out: &mut [f64]) -> Result<()> {
    if out.len() != layout.total() {
        return Err(Error::DimensionMismatch { expected: layout.total(), got: out.len() });
    }
    let needs_cross = layout.entries.iter().any(|e| matches!(e, PairEntry::Cc { .. }));
    let bundle = if needs_cross { Some(model.derivatives(x, Want { cross: true, ..Want::default() })?) } else { None };
    for (p, entry) in layout.entries.iter().enumerate() {
        let slot = &mut out[layout.offsets[p]..layout.offsets[p + 1]];
        match *entry {
            PairEntry::Cc { i, j } => slot[0] = bundle.as_ref().unwrap().cross_of(i, j)?,
            PairEntry::Dd { i, j, mi, mj } => {
                let t = model.pair_log_table(x, i, j)?;
                let mut s = 0;
                for k in 1..mi {
                    for l in 1..mj {
                        slot[s] = double_difference(&t, mj, k, l);
                        s += 1;
                    }
                }
            }
            PairEntry::Cd { c, dvar, m } => {
                let g = model.grad_under_substitution(x, c, dvar)?;
                for k in 1..m {
                    slot[k - 1] = g[0] - g[k];
                }
            }
        }
    }
    Ok(())
}

/// Symmetric, nonnegative `d × d` matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct GpmMatrix {
    d: usize,
    omega: Vec<f64>,
    kinds: Vec<EntryKind>,
    convention: Convention,
}

impl GpmMatrix {
    /// Builds a matrix from packed upper-triangle squared-convention entries.
    pub fn from_pair_values(schema: &Schema, values: &[f64], convention: Convention) -> Result<Self> {
        let layout = StatLayout::new(schema);
        let d = schema.len();
        if values.len() != layout.entries.len() {
            return Err(Error::DimensionMismatch { expected: layout.entries.len(), got: values.len() });
        }
        let mut omega = vec![0.0; d * d];
        let mut kinds = Vec::with_capacity(values.len());
        let mut p = 0;
        for i in 0..d {
            for j in i + 1..d {
                let kind = layout.entries[p].kind();
                let v = values[p];
                if !(v >= 0.0) {
                    return Err(Error::pre(format!("omega entry ({i}, {j}) = {v} is negative or NaN")));
                }
                let v = if convention == Convention::Rooted && kind == EntryKind::Cc { v.sqrt() } else { v };
                omega[i * d + j] = v;
                omega[j * d + i] = v;
                kinds.push(kind);
                p += 1;
            }
        }
        Ok(Self { d, omega, kinds, convention })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.omega[i * self.d + j]
    }

    pub fn matrix(&self) -> &[f64] {
        &self.omega
    }

    pub fn convention(&self) -> Convention {
        self.convention
    }

    pub fn kind(&self, i: usize, j: usize) -> Option<EntryKind> {
        if i == j {
            return None;
        }
        Some(self.kinds[crate::energy::pair_index(i, j, self.d)])
    }

    /// Upper-triangle entries in packed pair order.
    pub fn pair_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(pair_count(self.d));
        for i in 0..self.d {
            for j in i + 1..self.d {
                out.push(self.get(i, j));
            }
        }
        out
    }

    /// Same matrix under the other convention.
    pub fn with_convention(&self, convention: Convention) -> Self {
        if convention == self.convention {
            return self.clone();
        }
        let mut out = self.clone();
        out.convention = convention;
        for i in 0..self.d {
            for j in 0..self.d {
                if i != j && self.kind(i, j) == Some(EntryKind::Cc) {
                    let v = self.get(i, j);
                    out.omega[i * self.d + j] = if convention == Convention::Rooted { v.sqrt() } else { v * v };
                }
            }
        }
        out
    }

    /// Full matrix, one row per line, 17 significant digits.
    pub fn to_csv_string(&self) -> String {
        let mut s = String::new();
        for i in 0..self.d {
            for j in 0..self.d {
                if j > 0 {
                    s.push(',');
                }
                write!(s, "{:.16e}", self.get(i, j)).unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

/// Empirical Ω over the rows of `ds`.
pub fn compute_gpm<E: Energy + ?Sized>(model: &E, ds: &Dataset, convention: Convention) -> Result<GpmMatrix> {
    if ds.schema() != model.schema() {
        return Err(Error::Schema("dataset schema differs from model schema".into()));
    }
    let layout = StatLayout::new(model.schema());
    let sums = squared_pair_means(model, ds, &layout)?;
    GpmMatrix::from_pair_values(model.schema(), &sums, convention)
}

/// Mean over rows of each pair's summed squared statistics.
pub fn squared_pair_means<E: Energy + ?Sized>(model: &E, ds: &Dataset, layout: &StatLayout) -> Result<Vec<f64>> {
    let mut stats = vec![0.0; layout.total()];
    let mut sums = vec![0.0; layout.entries.len()];
    for x in ds.rows() {
        model.pair_statistics(x, layout, &mut stats)?;
        for p in 0..layout.entries.len() {
            sums[p] += stats[layout.offsets[p]..layout.offsets[p + 1]].iter().map(|f| f * f).sum::<f64>();
        }
    }
    let n = ds.n() as f64;
    for s in &mut sums {
        *s /= n;
        if !s.is_finite() {
            return Err(Error::NonFinite("omega entry".into()));
        }
    }
    Ok(sums)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", content = "tau", rename_all = "lowercase")]
pub enum ThresholdPolicy {
    Absolute(f64),
    Gap,
}

/// Threshold chosen by `policy` for the off-diagonal entries of `gpm`.
pub fn threshold(gpm: &GpmMatrix, policy: ThresholdPolicy) -> f64 {
    match policy {
        ThresholdPolicy::Absolute(t) => t,
        ThresholdPolicy::Gap => gap_threshold(&gpm.pair_values()),
    }
}

/// Splits the sorted positive entries at their largest log-gap and returns
/// the entry just below it; returns 0 when the spread is under one decade.
pub fn gap_threshold(values: &[f64]) -> f64 {
    let mut pos: Vec<f64> = values.iter().copied().filter(|&v| v > 0.0).collect();
    pos.sort_by(f64::total_cmp);
    if pos.len() < 2 || pos[pos.len() - 1] / pos[0] < 10.0 {
        return 0.0;
    }
    let mut best = (f64::NEG_INFINITY, 0.0);
    for w in pos.windows(2) {
        let g = w[1].ln() - w[0].ln();
        if g > best.0 {
            best = (g, w[0]);
        }
    }
    best.1
}

pub fn extract_graph(gpm: &GpmMatrix, policy: ThresholdPolicy) -> UndirectedGraph {
    let tau = threshold(gpm, policy);
    let mut g = UndirectedGraph::empty(gpm.d);
    for i in 0..gpm.d {
        for j in i + 1..gpm.d {
            if gpm.get(i, j) > tau {
                g.add_edge(i, j);
            }
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(d: usize, vals: &[f64]) -> GpmMatrix {
        GpmMatrix::from_pair_values(&Schema::continuous(d), vals, Convention::Squared).unwrap()
    }

    #[test]
    fn gap_policy_splits_decades() {
        let g = extract_graph(&matrix(3, &[1e-12, 0.8, 0.9]), ThresholdPolicy::Gap);
        assert_eq!(g.edges(), vec![(0, 2), (1, 2)]);
        let vals = [1e-12, 1e-12, 0.8, 0.9];
        assert_eq!(gap_threshold(&vals), 1e-12);
    }

    #[test]
    fn narrow_spread_keeps_all_positive() {
        let g = extract_graph(&matrix(3, &[0.5, 0.0, 0.9]), ThresholdPolicy::Gap);
        assert_eq!(g.edges(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn absolute_threshold() {
        let g = extract_graph(&matrix(3, &[1e-7, 2e-7, 5e-7]), ThresholdPolicy::Absolute(1e-6));
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn rejects_negative() {
        assert!(GpmMatrix::from_pair_values(&Schema::continuous(2), &[-1.0], Convention::Squared).is_err());
    }

    #[test]
    fn conventions_round_trip() {
        let m = matrix(2, &[4.0 / 9.0]);
        let r = m.with_convention(Convention::Rooted);
        assert!((r.get(0, 1) - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.with_convention(Convention::Squared).get(1, 0) - 4.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn csv_has_17_digits() {
        let s = matrix(2, &[1.0 / 3.0]).to_csv_string();
        let first = s.lines().next().unwrap();
        assert_eq!(first, "0.0000000000000000e0,3.3333333333333331e-1");
    }

    #[test]
    fn layout_widths() {
        let schema = Schema::new(vec![
            crate::types::VariableSpec::continuous("a"),
            crate::types::VariableSpec::discrete_indexed("b", 3),
            crate::types::VariableSpec::discrete_indexed("c", 2),
        ])
        .unwrap();
        let l = StatLayout::new(&schema);
        assert_eq!(l.entries()[0], PairEntry::Cd { c: 0, dvar: 1, m: 3 });
        assert_eq!(l.entries()[2], PairEntry::Dd { i: 1, j: 2, mi: 3, mj: 2 });
        assert_eq!(l.total(), 2 + 1 + 2);
    }
}
