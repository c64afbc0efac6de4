//! Undirected graphs, DAGs, moralization, and graph distances.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Simple undirected graph on vertices `0..d`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UndirectedGraph {
    d: usize,
    adj: Vec<bool>,
}

/// On-disk graph format: `{"d": int, "edges": [[i, j], …]}` with `i < j`,
/// sorted lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphJson {
    pub d: usize,
    pub edges: Vec<[usize; 2]>,
}

impl UndirectedGraph {
    pub fn empty(d: usize) -> Self {
        Self { d, adj: vec![false; d * d] }
    }

    pub fn complete(d: usize) -> Self {
        let mut g = Self::empty(d);
        for i in 0..d {
            for j in i + 1..d {
                g.add_edge(i, j);
            }
        }
        g
    }

    pub fn from_edges(d: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::empty(d);
        for &(i, j) in edges {
            if i >= d || j >= d || i == j {
                return Err(Error::pre(format!("invalid edge ({i}, {j}) for d = {d}")));
            }
            g.add_edge(i, j);
        }
        Ok(g)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i * self.d + j]
    }

    pub fn add_edge(&mut self, i: usize, j: usize) {
        assert!(i != j, "self loops are not allowed");
        self.adj[i * self.d + j] = true;
        self.adj[j * self.d + i] = true;
    }

    pub fn remove_edge(&mut self, i: usize, j: usize) {
        self.adj[i * self.d + j] = false;
        self.adj[j * self.d + i] = false;
    }

    /// Edges as `(i, j)` with `i < j` in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.d {
            for j in i + 1..self.d {
                if self.has_edge(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.edges().len()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.d).filter(move |&j| self.has_edge(i, j))
    }

    pub fn to_json(&self) -> GraphJson {
        GraphJson { d: self.d, edges: self.edges().into_iter().map(|(i, j)| [i, j]).collect() }
    }

    pub fn from_json(g: &GraphJson) -> Result<Self> {
        let edges: Vec<(usize, usize)> = g.edges.iter().map(|e| (e[0], e[1])).collect();
        Self::from_edges(g.d, &edges)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_json())?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&serde_json::from_str(&text)?)
    }

    /// Chordality via maximum cardinality search: the reverse visit order
    /// must be a perfect elimination ordering.
    pub fn is_chordal(&self) -> bool {
        let d = self.d;
        let mut weight = vec![0usize; d];
        let mut visited = vec![false; d];
        let mut order = Vec::with_capacity(d);
        for _ in 0..d {
            let v = (0..d).filter(|&v| !visited[v]).max_by_key(|&v| (weight[v], std::cmp::Reverse(v))).unwrap();
            visited[v] = true;
            order.push(v);
            for u in self.neighbors(v) {
                if !visited[u] {
                    weight[u] += 1;
                }
            }
        }
        let mut pos = vec![0; d];
        for (p, &v) in order.iter().enumerate() {
            pos[v] = p;
        }
        // Each vertex's earlier-visited neighbors must form a clique.
        for &v in &order {
            let earlier: Vec<usize> = self.neighbors(v).filter(|&u| pos[u] < pos[v]).collect();
            if let Some(&parent) = earlier.iter().max_by_key(|&&u| pos[u]) {
                for &u in &earlier {
                    if u != parent && !self.has_edge(u, parent) {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// Count of unordered vertex pairs whose edge status differs.
pub fn hamming(a: &UndirectedGraph, b: &UndirectedGraph) -> Result<usize> {
    Ok(hamming_breakdown(a, b)?.total())
}

/// Hamming distance split into edges only in `estimate` (extra) and edges
/// only in `truth` (missing).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HammingBreakdown {
    pub extra: usize,
    pub missing: usize,
}

impl HammingBreakdown {
    pub fn total(&self) -> usize {
        self.extra + self.missing
    }
}

pub fn hamming_breakdown(estimate: &UndirectedGraph, truth: &UndirectedGraph) -> Result<HammingBreakdown> {
    if estimate.d != truth.d {
        return Err(Error::DimensionMismatch { expected: truth.d, got: estimate.d });
    }
    let mut out = HammingBreakdown { extra: 0, missing: 0 };
    for i in 0..truth.d {
        for j in i + 1..truth.d {
            match (estimate.has_edge(i, j), truth.has_edge(i, j)) {
                (true, false) => out.extra += 1,
                (false, true) => out.missing += 1,
                _ => {}
            }
        }
    }
    Ok(out)
}

/// Directed acyclic graph stored as sorted parent lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dag {
    d: usize,
    parents: Vec<Vec<usize>>,
}

impl Dag {
    pub fn empty(d: usize) -> Self {
        Self { d, parents: vec![Vec::new(); d] }
    }

    /// Builds a DAG from `(from, to)` edges, rejecting cycles.
    pub fn from_edges(d: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut parents = vec![Vec::new(); d];
        for &(from, to) in edges {
            if from >= d || to >= d || from == to {
                return Err(Error::pre(format!("invalid edge {from} -> {to} for d = {d}")));
            }
            parents[to].push(from);
        }
        Self::from_parents(parents)
    }

    pub fn from_parents(mut parents: Vec<Vec<usize>>) -> Result<Self> {
        for p in &mut parents {
            p.sort_unstable();
            p.dedup();
        }
        let dag = Self { d: parents.len(), parents };
        dag.topological_order()?;
        Ok(dag)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn parents(&self, v: usize) -> &[usize] {
        &self.parents[v]
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = (0..self.d).flat_map(|v| self.parents[v].iter().map(move |&p| (p, v))).collect();
        out.sort_unstable();
        out
    }

    /// Kahn's algorithm; smallest ready vertex first so the order is unique.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let mut indeg: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut children = vec![Vec::new(); self.d];
        for (v, ps) in self.parents.iter().enumerate() {
            for &p in ps {
                children[p].push(v);
            }
        }
        let mut ready: VecDeque<usize> = (0..self.d).filter(|&v| indeg[v] == 0).collect();
        let mut order = Vec::with_capacity(self.d);
        while let Some(v) = ready.pop_front() {
            order.push(v);
            for &c in &children[v] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    ready.push_back(c);
                }
            }
        }
        if order.len() == self.d {
            Ok(order)
        } else {
            Err(Error::Cycle)
        }
    }

    pub fn skeleton(&self) -> UndirectedGraph {
        let mut g = UndirectedGraph::empty(self.d);
        for (p, c) in self.edges() {
            g.add_edge(p, c);
        }
        g
    }
}

/// Moral graph: the skeleton plus an edge between every pair of parents
/// that share a child.
pub fn moralize(g: &Dag) -> Result<UndirectedGraph> {
    g.topological_order()?;
    let mut out = g.skeleton();
    for ps in &g.parents {
        for (a, &p) in ps.iter().enumerate() {
            for &q in &ps[a + 1..] {
                out.add_edge(p, q);
            }
        }
    }
    Ok(out)
}

/// Random DAG whose moral graph is chordal.
///
/// Vertices are placed in a random order. Each new vertex picks a random
/// earlier vertex `u` and attaches to a random subset of the clique formed by
/// `u` and `u`'s own earlier neighbors, with the expected subset size chosen
/// so the overall edge count tracks `density · C(d, 2)`. Edges point from
/// earlier to later vertices, so every parent set is a clique and the moral
/// graph equals the (chordal) skeleton.
pub fn random_decomposable_dag(d: usize, density: f64, seed: u64) -> Result<Dag> {
    if d < 2 {
        return Err(Error::pre("random_decomposable_dag needs d >= 2"));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::pre(format!("edge density {density} outside (0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..d).collect();
    order.shuffle(&mut rng);

    // earlier[t] = positions (in `order`) of the parents of order[t]
    let mut earlier: Vec<Vec<usize>> = vec![Vec::new(); d];
    for t in 1..d {
        let u = rng.random_range(0..t);
        let mut clique = earlier[u].clone();
        clique.push(u);
        let want = density * t as f64;
        let p = (want / clique.len() as f64).min(1.0);
        let mut chosen: Vec<usize> = clique.into_iter().filter(|_| rng.random::<f64>() < p).collect();
        if chosen.is_empty() && rng.random::<f64>() < want.min(1.0) {
            chosen.push(u);
        }
        chosen.sort_unstable();
        earlier[t] = chosen;
    }
    let parents = (0..d)
        .map(|v| {
            let t = order.iter().position(|&x| x == v).unwrap();
            earlier[t].iter().map(|&s| order[s]).collect()
        })
        .collect();
    Dag::from_parents(parents)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moralize_collider_marries_parents() {
        let dag = Dag::from_edges(3, &[(0, 2), (1, 2)]).unwrap();
        assert_eq!(moralize(&dag).unwrap().edges(), vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn moralize_chain_and_empty() {
        let chain = Dag::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(moralize(&chain).unwrap().edges(), vec![(0, 1), (1, 2)]);
        assert_eq!(moralize(&Dag::empty(4)).unwrap(), UndirectedGraph::empty(4));
    }

    #[test]
    fn cycle_is_rejected() {
        assert!(matches!(Dag::from_edges(3, &[(0, 1), (1, 2), (2, 0)]), Err(Error::Cycle)));
    }

    #[test]
    fn hamming_examples() {
        let e = UndirectedGraph::empty(4);
        let g = UndirectedGraph::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        assert_eq!(hamming(&g, &g).unwrap(), 0);
        assert_eq!(hamming(&e, &g).unwrap(), 2);
        assert_eq!(hamming(&UndirectedGraph::complete(4), &e).unwrap(), 6);
        assert!(hamming(&e, &UndirectedGraph::empty(3)).is_err());
    }

    #[test]
    fn two_vertex_dag_has_one_edge() {
        for seed in 0..10 {
            let dag = random_decomposable_dag(2, 1.0, seed).unwrap();
            assert_eq!(dag.edges().len(), 1);
        }
    }

    #[test]
    fn chordality_check() {
        let c4 = UndirectedGraph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        assert!(!c4.is_chordal());
        let mut chorded = c4.clone();
        chorded.add_edge(0, 2);
        assert!(chorded.is_chordal());
        assert!(UndirectedGraph::complete(5).is_chordal());
    }

    #[test]
    fn json_is_sorted() {
        let g = UndirectedGraph::from_edges(4, &[(3, 2), (1, 0)]).unwrap();
        assert_eq!(serde_json::to_string(&g.to_json()).unwrap(), r#"{"d":4,"edges":[[0,1],[2,3]]}"#);
    }
}
