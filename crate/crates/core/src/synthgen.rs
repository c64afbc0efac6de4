//! Synthetic benchmark data with known Markov networks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::{moralize, random_decomposable_dag, UndirectedGraph};
use crate::types::{Dataset, Schema, VariableSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    ButterflyContinuous,
    ButterflyDiscrete,
    ButterflyMixed,
    RandomGraphContinuous,
    RandomGraphDiscrete,
    RandomGraphMixed,
}

impl Family {
    pub fn is_butterfly(self) -> bool {
        matches!(self, Family::ButterflyContinuous | Family::ButterflyDiscrete | Family::ButterflyMixed)
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::ButterflyContinuous => "butterfly-c",
            Family::ButterflyDiscrete => "butterfly-d",
            Family::ButterflyMixed => "butterfly-m",
            Family::RandomGraphContinuous => "random-c",
            Family::RandomGraphDiscrete => "random-d",
            Family::RandomGraphMixed => "random-m",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "butterfly-c" | "butterfly-continuous" => Ok(Family::ButterflyContinuous),
            "butterfly-d" | "butterfly-discrete" => Ok(Family::ButterflyDiscrete),
            "butterfly-m" | "butterfly-mixed" => Ok(Family::ButterflyMixed),
            "random-c" | "random-continuous" => Ok(Family::RandomGraphContinuous),
            "random-d" | "random-discrete" => Ok(Family::RandomGraphDiscrete),
            "random-m" | "random-mixed" => Ok(Family::RandomGraphMixed),
            other => Err(Error::pre(format!("unknown family '{other}'"))),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub family: Family,
    pub d: usize,
    pub n: usize,
    pub seed: u64,
    #[serde(default = "default_density")]
    pub edge_density: f64,
    #[serde(default = "default_width")]
    pub mlp_width: usize,
    /// Inclusive cardinality range for discrete variables.
    #[serde(default = "default_card")]
    pub cardinality: (usize, usize),
}

fn default_density() -> f64 {
    0.3
}

fn default_width() -> usize {
    16
}

fn default_card() -> (usize, usize) {
    (2, 4)
}

impl GenSpec {
    pub fn new(family: Family, d: usize, n: usize, seed: u64) -> Self {
        let cardinality = if family.is_butterfly() { (2, 2) } else { default_card() };
        Self { family, d, n, seed, edge_density: default_density(), mlp_width: default_width(), cardinality }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::pre("n must be at least 1"));
        }
        if self.family.is_butterfly() {
            if self.d == 0 || self.d % 2 != 0 {
                return Err(Error::pre(format!("butterfly families need an even d >= 2, got {}", self.d)));
            }
        } else if self.d < 2 {
            return Err(Error::pre("random-graph families need d >= 2"));
        }
        if !(self.edge_density > 0.0 && self.edge_density <= 1.0) {
            return Err(Error::pre("edge density must lie in (0, 1]"));
        }
        let (lo, hi) = self.cardinality;
        if lo < 2 || hi < lo {
            return Err(Error::pre("cardinality range must satisfy 2 <= lo <= hi"));
        }
        if self.mlp_width == 0 {
            return Err(Error::pre("mlp width must be positive"));
        }
        Ok(())
    }
}

pub fn generate(spec: &GenSpec) -> Result<(Dataset, UndirectedGraph)> {
    spec.validate()?;
    let r = spec.d / 2;
    match spec.family {
        Family::ButterflyContinuous => gen_butterfly_continuous(r, spec.n, spec.seed),
        Family::ButterflyDiscrete => gen_butterfly_discrete(r, spec.n, spec.seed, spec.cardinality.0),
        Family::ButterflyMixed => gen_butterfly_mixed_with(r, spec.n, spec.seed, spec.cardinality.0),
        _ => gen_random_graph(spec),
    }
}

fn pair_truth(r: usize) -> UndirectedGraph {
    let edges: Vec<(usize, usize)> = (0..r).map(|i| (2 * i, 2 * i + 1)).collect();
    UndirectedGraph::from_edges(2 * r, &edges).expect("valid pairing")
}

fn check_pairs(r: usize, n: usize) -> Result<()> {
    if r == 0 || n == 0 {
        return Err(Error::pre("need r >= 1 and n >= 1"));
    }
    Ok(())
}

/// Columns `(P1, Q1, …, Pr, Qr)` with `Q = W·P`, `P, W ~ N(0, 1)`.
pub fn gen_butterfly_continuous(r: usize, n: usize, seed: u64) -> Result<(Dataset, UndirectedGraph)> {
    gen_butterfly_pairs(r, n, seed, 2, |_| false)
}

/// `P ~ U{0..M}`, `Q = (W·P) mod M` with independent `W ~ U{0..M}`.
pub fn gen_butterfly_discrete(r: usize, n: usize, seed: u64, m: usize) -> Result<(Dataset, UndirectedGraph)> {
    gen_butterfly_pairs(r, n, seed, m, |_| true)
}

pub fn gen_butterfly_mixed(r: usize, n: usize, seed: u64) -> Result<(Dataset, UndirectedGraph)> {
    gen_butterfly_mixed_with(r, n, seed, 2)
}

/// Each pair is discrete with a probability drawn once from `U[0, 1]`.
pub fn gen_butterfly_mixed_with(r: usize, n: usize, seed: u64, m: usize) -> Result<(Dataset, UndirectedGraph)> {
    check_pairs(r, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d_6978_6564);
    let prob: f64 = rng.random();
    let kinds: Vec<bool> = (0..r).map(|_| rng.random::<f64>() < prob).collect();
    gen_butterfly_pairs(r, n, seed, m, |i| kinds[i])
}

fn gen_butterfly_pairs(r: usize, n: usize, seed: u64, m: usize, discrete: impl Fn(usize) -> bool) -> Result<(Dataset, UndirectedGraph)> {
    check_pairs(r, n)?;
    if m < 2 {
        return Err(Error::pre("cardinality must be at least 2"));
    }
    let mut vars = Vec::with_capacity(2 * r);
    for i in 0..r {
        if discrete(i) {
            vars.push(VariableSpec::discrete_indexed(format!("P{}", i + 1), m));
            vars.push(VariableSpec::discrete_indexed(format!("Q{}", i + 1), m));
        } else {
            vars.push(VariableSpec::continuous(format!("P{}", i + 1)));
            vars.push(VariableSpec::continuous(format!("Q{}", i + 1)));
        }
    }
    let schema = Schema::new(vars)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * 2 * r);
    for _ in 0..n {
        for i in 0..r {
            if discrete(i) {
                let p = rng.random_range(0..m);
                let w = rng.random_range(0..m);
                data.push(p as f64);
                data.push(((w * p) % m) as f64);
            } else {
                let p: f64 = StandardNormal.sample(&mut rng);
                let w: f64 = StandardNormal.sample(&mut rng);
                data.push(p);
                data.push(w * p);
            }
        }
    }
    Ok((Dataset::new(schema, data)?, pair_truth(r)))
}

/// Probability vector from `Dirichlet(1, …, 1)`.
pub fn dirichlet_ones(m: usize, rng: &mut impl Rng) -> Vec<f64> {
    let g: Vec<f64> = (0..m).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

fn categorical(p: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, pk) in p.iter().enumerate() {
        acc += pk;
        if u < acc {
            return k;
        }
    }
    p.len() - 1
}

/// Equal-frequency bin labels for `values` with `bins` bins.
pub fn equal_frequency_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = (rank * bins / n).min(bins - 1);
    }
    out
}

/// Random single-hidden-layer tanh network.
struct Mlp {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    inputs: usize,
}

impl Mlp {
    fn new(inputs: usize, width: usize, rng: &mut impl Rng) -> Self {
        let mut normal = || -> f64 { StandardNormal.sample(rng) };
        let w1 = (0..inputs * width).map(|_| normal()).collect();
        let b1 = (0..width).map(|_| normal()).collect();
        let w2 = (0..width).map(|_| normal()).collect();
        Self { w1, b1, w2, inputs }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let mut out = 0.0;
        for (h, (b, w)) in self.b1.iter().zip(&self.w2).enumerate() {
            let mut a = *b;
            for (q, xq) in x.iter().enumerate() {
                a += self.w1[h * self.inputs + q] * xq;
            }
            out += w * a.tanh();
        }
        out
    }
}

/// Random decomposable DAG, per-family conditionals, moralized ground truth.
pub fn gen_random_graph(spec: &GenSpec) -> Result<(Dataset, UndirectedGraph)> {
    spec.validate()?;
    if spec.family.is_butterfly() {
        return Err(Error::pre("use the butterfly generators for butterfly families"));
    }
    let dag = random_decomposable_dag(spec.d, spec.edge_density, spec.seed)?;
    let truth = moralize(&dag)?;
    let order = dag.topological_order()?;
    let (d, n) = (spec.d, spec.n);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let (lo, hi) = spec.cardinality;
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); d];

    let vars: Vec<VariableSpec> = match spec.family {
        Family::RandomGraphContinuous => {
            for &v in &order {
                let ps = dag.parents(v);
                let mlp = Mlp::new(ps.len(), spec.mlp_width, &mut rng);
                let mut col = Vec::with_capacity(n);
                let mut input = vec![0.0; ps.len()];
                for r in 0..n {
                    for (q, &p) in ps.iter().enumerate() {
                        input[q] = cols[p][r];
                    }
                    let noise: f64 = Exp1.sample(&mut rng);
                    let signal = if ps.is_empty() { 0.0 } else { mlp.eval(&input) };
                    col.push(signal + noise - 1.0);
                }
                cols[v] = col;
            }
            (0..d).map(|i| VariableSpec::continuous(format!("X{}", i + 1))).collect()
        }
        Family::RandomGraphDiscrete => {
            let cards: Vec<usize> = (0..d).map(|_| rng.random_range(lo..=hi)).collect();
            for &v in &order {
                let ps = dag.parents(v);
                let configs: usize = ps.iter().map(|&p| cards[p]).product();
                let cpd: Vec<Vec<f64>> = (0..configs).map(|_| dirichlet_ones(cards[v], &mut rng)).collect();
                let mut col = Vec::with_capacity(n);
                for r in 0..n {
                    let mut cfg = 0;
                    for &p in ps {
                        cfg = cfg * cards[p] + cols[p][r] as usize;
                    }
                    col.push(categorical(&cpd[cfg], &mut rng) as f64);
                }
                cols[v] = col;
            }
            (0..d).map(|i| VariableSpec::discrete_indexed(format!("X{}", i + 1), cards[i])).collect()
        }
        _ => mixed_columns(&dag, &order, spec, &mut rng, &mut cols),
    };
    let schema = Schema::new(vars)?;
    let mut data = Vec::with_capacity(n * d);
    for r in 0..n {
        for col in &cols {
            data.push(col[r]);
        }
    }
    Ok((Dataset::new(schema, data)?, truth))
}

/// Mixed-type conditionals: each variable is continuous or discrete with
/// equal probability. Continuous variables get a temporary equal-frequency
/// discretization (2 to 5 bins) used only when they parent a discrete child.
/// Continuous children follow a per-partition linear regression, where the
/// partition is the configuration of their discrete parents.
fn mixed_columns(
    dag: &crate::graphs::Dag,
    order: &[usize],
    spec: &GenSpec,
    rng: &mut ChaCha8Rng,
    cols: &mut [Vec<f64>],
) -> Vec<VariableSpec> {
    let (d, n) = (spec.d, spec.n);
    let (lo, hi) = spec.cardinality;
    let discrete: Vec<bool> = (0..d).map(|_| rng.random::<bool>()).collect();
    let cards: Vec<usize> = (0..d).map(|i| if discrete[i] { rng.random_range(lo..=hi) } else { 0 }).collect();
    let bins: Vec<usize> = (0..d).map(|i| if discrete[i] { 0 } else { rng.random_range(2..=5usize) }).collect();
    let mut temp: Vec<Vec<usize>> = vec![Vec::new(); d];
    for &v in order {
        let ps = dag.parents(v);
        let disc_ps: Vec<usize> = ps.iter().copied().filter(|&p| discrete[p]).collect();
        let cont_ps: Vec<usize> = ps.iter().copied().filter(|&p| !discrete[p]).collect();
        let mut col = Vec::with_capacity(n);
        if discrete[v] {
            // every parent counts through its discrete or temporary discretized value
            let levels: Vec<usize> = ps.iter().map(|&p| if discrete[p] { cards[p] } else { bins[p] }).collect();
            let configs: usize = levels.iter().product();
            let cpd: Vec<Vec<f64>> = (0..configs).map(|_| dirichlet_ones(cards[v], rng)).collect();
            for r in 0..n {
                let mut cfg = 0;
                for (q, &p) in ps.iter().enumerate() {
                    let level = if discrete[p] { cols[p][r] as usize } else { temp[p][r] };
                    cfg = cfg * levels[q] + level;
                }
                col.push(categorical(&cpd[cfg], rng) as f64);
            }
        } else {
            let configs: usize = disc_ps.iter().map(|&p| cards[p]).product();
            let coefs: Vec<Vec<f64>> =
                (0..configs).map(|_| (0..=cont_ps.len()).map(|_| StandardNormal.sample(&mut *rng)).collect()).collect();
            for r in 0..n {
                let mut cfg = 0;
                for &p in &disc_ps {
                    cfg = cfg * cards[p] + cols[p][r] as usize;
                }
                let c = &coefs[cfg];
                let mut y = if ps.is_empty() { 0.0 } else { c[0] };
                for (q, &p) in cont_ps.iter().enumerate() {
                    y += c[q + 1] * cols[p][r];
                }
                let noise: f64 = StandardNormal.sample(&mut *rng);
                col.push(y + noise);
            }
            temp[v] = equal_frequency_bins(&col, bins[v]);
        }
        cols[v] = col;
    }
    (0..d)
        .map(|i| {
            if discrete[i] {
                VariableSpec::discrete_indexed(format!("X{}", i + 1), cards[i])
            } else {
                VariableSpec::continuous(format!("X{}", i + 1))
            }
        })
        .collect()
}

/// Zero-mean Gaussian rows with precision matrix `precision` (row-major
/// `d × d`, symmetric positive definite). The returned graph is the support
/// of the off-diagonal entries.
pub fn gen_gaussian(precision: &[f64], d: usize, n: usize, seed: u64) -> Result<(Dataset, UndirectedGraph)> {
    if d == 0 || precision.len() != d * d {
        return Err(Error::DimensionMismatch { expected: d * d, got: precision.len() });
    }
    if n == 0 {
        return Err(Error::pre("n must be at least 1"));
    }
    let mut graph = UndirectedGraph::empty(d);
    for i in 0..d {
        for j in 0..d {
            if (precision[i * d + j] - precision[j * d + i]).abs() > 1e-12 * (1.0 + precision[i * d + j].abs()) {
                return Err(Error::pre("precision matrix must be symmetric"));
            }
            if i < j && precision[i * d + j] != 0.0 {
                graph.add_edge(i, j);
            }
        }
    }
    // precision = L Lᵀ; x = L⁻ᵀ z has covariance precision⁻¹
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let s: f64 = precision[i * d + j] - (0..j).map(|k| l[i * d + k] * l[j * d + k]).sum::<f64>();
            if i == j {
                if s <= 0.0 {
                    return Err(Error::pre("precision matrix must be positive definite"));
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * d);
    let mut x = vec![0.0; d];
    for _ in 0..n {
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        for i in (0..d).rev() {
            let s: f64 = ((i + 1)..d).map(|k| l[k * d + i] * x[k]).sum();
            x[i] = (z[i] - s) / l[i * d + i];
        }
        data.extend_from_slice(&x);
    }
    Ok((Dataset::new(Schema::continuous(d), data)?, graph))
}

/// Shuffled row order of a dataset; used by row-order invariance checks.
pub fn shuffled(ds: &Dataset, seed: u64) -> Result<Dataset> {
    let mut idx: Vec<usize> = (0..ds.n()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    ds.select_rows(&idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_sample_covariance() {
        // precision [[2, -1], [-1, 2]] has covariance [[2, 1], [1, 2]] / 3
        let (ds, g) = gen_gaussian(&[2.0, -1.0, -1.0, 2.0], 2, 40_000, 3).unwrap();
        assert_eq!(g.edges(), vec![(0, 1)]);
        let n = ds.n() as f64;
        let mut c = [0.0; 3];
        for r in ds.rows() {
            c[0] += r[0] * r[0] / n;
            c[1] += r[0] * r[1] / n;
            c[2] += r[1] * r[1] / n;
        }
        assert!((c[0] - 2.0 / 3.0).abs() < 0.03 && (c[2] - 2.0 / 3.0).abs() < 0.03);
        assert!((c[1] - 1.0 / 3.0).abs() < 0.03);
    }

    #[test]
    fn butterfly_truth_is_pairing() {
        let (ds, g) = gen_butterfly_continuous(2, 10, 1).unwrap();
        assert_eq!(ds.d(), 4);
        assert_eq!(g.edges(), vec![(0, 1), (2, 3)]);
    }

    #[test]
    fn odd_d_rejected() {
        assert!(generate(&GenSpec::new(Family::ButterflyContinuous, 5, 10, 0)).is_err());
    }

    #[test]
    fn bins_are_balanced() {
        let v: Vec<f64> = (0..100).map(|i| ((i * 37) % 100) as f64).collect();
        let b = equal_frequency_bins(&v, 4);
        for k in 0..4 {
            assert_eq!(b.iter().filter(|&&x| x == k).count(), 25);
        }
    }

    #[test]
    fn mixed_random_graph_has_d_columns() {
        let spec = GenSpec::new(Family::RandomGraphMixed, 7, 50, 3);
        let (ds, g) = generate(&spec).unwrap();
        assert_eq!(ds.d(), 7);
        assert!(g.is_chordal());
    }
}
