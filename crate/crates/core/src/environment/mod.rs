//! Finite rooted environments: a sparse Markov kernel on an indexed vertex
//! table, optional edge weights (reversible case) and optional lattice
//! coordinates.

mod format;
mod generators;
mod unionfind;

use std::collections::{HashMap, VecDeque};

use thiserror::Error;

pub use format::{deserialize, env_hash, read_from_path, serialize, write_to_path, FormatError};
pub use generators::{
    gen_balanced, gen_kesten_tree, gen_kesten_tree_with_spine, gen_lattice, gen_percolation,
    gen_random_conductance, gen_sierpinski, gen_torus, KestenTree, ModelSpec,
};
pub use unionfind::UnionFind;

pub type VertexId = u32;

/// Tolerance used when validating row sums and reversibility.
pub const KERNEL_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("row {vertex} sums to {sum}, expected 1")]
    RowSum { vertex: VertexId, sum: f64 },
    #[error("arc {from}->{to} has probability {prob} outside [0,1]")]
    BadProbability { from: VertexId, to: VertexId, prob: f64 },
    #[error("weights not symmetric on edge {a}-{b}")]
    AsymmetricWeight { a: VertexId, b: VertexId },
    #[error("kernel at {from}->{to} disagrees with weights: {prob} vs {expected}")]
    WeightMismatch { from: VertexId, to: VertexId, prob: f64, expected: f64 },
    #[error("environment is not connected ({reached} of {total} vertices reachable)")]
    Disconnected { reached: usize, total: usize },
    #[error("duplicate coordinates {coords:?} at vertices {first} and {second}")]
    DuplicateCoordinates { coords: Vec<i64>, first: VertexId, second: VertexId },
    #[error("vertex {0} out of range")]
    VertexOutOfRange(VertexId),
    #[error("duplicate arc {from}->{to}")]
    DuplicateArc { from: VertexId, to: VertexId },
    #[error("negative or non-finite weight {weight} on edge {a}-{b}")]
    BadWeight { a: VertexId, b: VertexId, weight: f64 },
    #[error("environment has no vertices")]
    Empty,
}

/// Header data carried by every environment.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvMeta {
    pub model: String,
    /// Embedding dimension; 0 when the environment has no coordinates.
    pub dim: usize,
    /// Box radius, gasket side or tree depth depending on the model.
    pub radius: usize,
    pub seed: u64,
    pub params: Vec<(String, String)>,
}

impl EnvMeta {
    pub fn new(model: &str, dim: usize, radius: usize, seed: u64) -> Self {
        EnvMeta { model: model.to_string(), dim, radius, seed, params: Vec::new() }
    }

    pub fn with_param(mut self, key: &str, value: impl ToString) -> Self {
        self.params.push((key.to_string(), value.to_string()));
        self
    }

    pub fn param(&self, key: &str) -> Option<&str> {
        self.params.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn is_periodic(&self) -> bool {
        self.param("torus") == Some("true")
    }
}

/// A finite rooted Markov chain.
#[derive(Clone, Debug)]
pub struct RootedEnvironment {
    meta: EnvMeta,
    coords: Option<Vec<i64>>,
    offsets: Vec<usize>,
    targets: Vec<VertexId>,
    probs: Vec<f64>,
    /// Arc weights ν(x,y), aligned with `targets`.
    weights: Option<Vec<f64>>,
    /// Vertex weights ν(x) = Σ_y ν(x,y).
    vertex_weights: Option<Vec<f64>>,
    root: VertexId,
    coord_index: HashMap<Vec<i64>, VertexId>,
}

impl PartialEq for RootedEnvironment {
    fn eq(&self, other: &Self) -> bool {
        self.meta == other.meta
            && self.coords == other.coords
            && self.offsets == other.offsets
            && self.targets == other.targets
            && self.probs.iter().map(|p| p.to_bits()).eq(other.probs.iter().map(|p| p.to_bits()))
            && self.weights == other.weights
            && self.root == other.root
    }
}

impl RootedEnvironment {
    pub fn meta(&self) -> &EnvMeta {
        &self.meta
    }

    pub fn root(&self) -> VertexId {
        self.root
    }

    pub fn with_root(mut self, root: VertexId) -> Self {
        assert!((root as usize) < self.len(), "root out of range");
        self.root = root;
        self
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.meta.dim
    }

    pub fn is_reversible(&self) -> bool {
        self.weights.is_some()
    }

    /// Out-arcs of `x` with their transition probabilities.
    pub fn arcs(&self, x: VertexId) -> impl Iterator<Item = (VertexId, f64)> + '_ {
        let r = self.offsets[x as usize]..self.offsets[x as usize + 1];
        self.targets[r.clone()].iter().copied().zip(self.probs[r].iter().copied())
    }

    pub fn neighbors(&self, x: VertexId) -> &[VertexId] {
        &self.targets[self.offsets[x as usize]..self.offsets[x as usize + 1]]
    }

    pub fn out_degree(&self, x: VertexId) -> usize {
        self.offsets[x as usize + 1] - self.offsets[x as usize]
    }

    pub fn max_degree(&self) -> usize {
        (0..self.len() as VertexId).map(|x| self.out_degree(x)).max().unwrap_or(0)
    }

    /// Weighted arcs `(y, ν(x,y))`; empty for non-reversible environments.
    pub fn weighted_arcs(&self, x: VertexId) -> impl Iterator<Item = (VertexId, f64)> + '_ {
        let r = self.offsets[x as usize]..self.offsets[x as usize + 1];
        let w: &[f64] = match &self.weights {
            Some(w) => &w[r.clone()],
            None => &[],
        };
        self.targets[r].iter().copied().zip(w.iter().copied())
    }

    pub fn transition(&self, x: VertexId, y: VertexId) -> f64 {
        self.arcs(x).find(|&(t, _)| t == y).map_or(0.0, |(_, p)| p)
    }

    pub fn edge_weight(&self, x: VertexId, y: VertexId) -> f64 {
        self.weighted_arcs(x).find(|&(t, _)| t == y).map_or(0.0, |(_, w)| w)
    }

    /// ν(x); for non-reversible chains every vertex has weight 1.
    pub fn vertex_weight(&self, x: VertexId) -> f64 {
        self.vertex_weights.as_ref().map_or(1.0, |w| w[x as usize])
    }

    pub fn coords(&self, x: VertexId) -> Option<&[i64]> {
        let d = self.meta.dim;
        self.coords.as_ref().map(|c| &c[x as usize * d..(x as usize + 1) * d])
    }

    pub fn has_coords(&self) -> bool {
        self.coords.is_some()
    }

    pub fn vertex_at(&self, coords: &[i64]) -> Option<VertexId> {
        self.coord_index.get(coords).copied()
    }

    /// Largest horizon for which walks from the root stay clear of the
    /// finite-volume boundary: `(L/4)^2` for box-like models, unbounded
    /// for periodic and hand-built chains.
    pub fn horizon_budget(&self) -> Option<usize> {
        if self.meta.is_periodic() || self.meta.model == "custom" {
            return None;
        }
        let quarter = self.meta.radius as f64 / 4.0;
        Some((quarter * quarter).floor() as usize)
    }

    /// Undirected edges `(a, b, ν(a,b))` with `a < b`.
    pub fn edges(&self) -> impl Iterator<Item = (VertexId, VertexId, f64)> + '_ {
        (0..self.len() as VertexId).flat_map(move |a| {
            self.weighted_arcs(a).filter(move |&(b, _)| a < b).map(move |(b, w)| (a, b, w))
        })
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let n = self.len();
        if n == 0 {
            return Err(EnvError::Empty);
        }
        if self.root as usize >= n {
            return Err(EnvError::VertexOutOfRange(self.root));
        }
        for x in 0..n as VertexId {
            let mut sum = 0.0;
            for (y, p) in self.arcs(x) {
                if y as usize >= n {
                    return Err(EnvError::VertexOutOfRange(y));
                }
                if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                    return Err(EnvError::BadProbability { from: x, to: y, prob: p });
                }
                sum += p;
            }
            if (sum - 1.0).abs() > KERNEL_TOL {
                return Err(EnvError::RowSum { vertex: x, sum });
            }
        }
        if self.weights.is_some() {
            for x in 0..n as VertexId {
                let nu_x = self.vertex_weight(x);
                for ((y, w), (_, p)) in self.weighted_arcs(x).zip(self.arcs(x)) {
                    if !(w >= 0.0 && w.is_finite()) {
                        return Err(EnvError::BadWeight { a: x, b: y, weight: w });
                    }
                    if self.edge_weight(y, x) != w {
                        return Err(EnvError::AsymmetricWeight { a: x, b: y });
                    }
                    let expected = w / nu_x;
                    if (p - expected).abs() > KERNEL_TOL {
                        return Err(EnvError::WeightMismatch { from: x, to: y, prob: p, expected });
                    }
                }
            }
        }
        // weak connectivity
        let mut undirected: Vec<Vec<VertexId>> = vec![Vec::new(); n];
        for x in 0..n as VertexId {
            for (y, p) in self.arcs(x) {
                if p > 0.0 {
                    undirected[x as usize].push(y);
                    undirected[y as usize].push(x);
                }
            }
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([self.root]);
        seen[self.root as usize] = true;
        let mut reached = 1;
        while let Some(x) = queue.pop_front() {
            for &y in &undirected[x as usize] {
                if !seen[y as usize] {
                    seen[y as usize] = true;
                    reached += 1;
                    queue.push_back(y);
                }
            }
        }
        if reached != n {
            return Err(EnvError::Disconnected { reached, total: n });
        }
        if let Some(coords) = &self.coords {
            let d = self.meta.dim;
            let mut seen: HashMap<&[i64], VertexId> = HashMap::with_capacity(n);
            for x in 0..n {
                let c = &coords[x * d..(x + 1) * d];
                if let Some(&first) = seen.get(c) {
                    return Err(EnvError::DuplicateCoordinates {
                        coords: c.to_vec(),
                        first,
                        second: x as VertexId,
                    });
                }
                seen.insert(c, x as VertexId);
            }
        }
        Ok(())
    }
}

/// Assembles an environment from an edge list (reversible) or an arc list
/// (general). Neighbour lists are sorted by vertex id so that two builds from
/// the same data are bit-identical.
#[derive(Debug)]
pub struct EnvironmentBuilder {
    meta: EnvMeta,
    n: usize,
    coords: Option<Vec<i64>>,
    entries: Vec<(VertexId, VertexId, f64)>,
    reversible: bool,
    root: VertexId,
}

impl EnvironmentBuilder {
    pub fn reversible(meta: EnvMeta, n: usize) -> Self {
        EnvironmentBuilder { meta, n, coords: None, entries: Vec::new(), reversible: true, root: 0 }
    }

    pub fn general(meta: EnvMeta, n: usize) -> Self {
        EnvironmentBuilder { meta, n, coords: None, entries: Vec::new(), reversible: false, root: 0 }
    }

    /// Flattened coordinates, `meta.dim` integers per vertex.
    pub fn coords(mut self, coords: Vec<i64>) -> Self {
        assert_eq!(coords.len(), self.n * self.meta.dim, "coordinate table size");
        self.coords = Some(coords);
        self
    }

    pub fn root(mut self, root: VertexId) -> Self {
        self.root = root;
        self
    }

    /// Undirected edge with weight ν(a,b); stored in both directions.
    pub fn edge(&mut self, a: VertexId, b: VertexId, weight: f64) -> &mut Self {
        debug_assert!(self.reversible);
        self.entries.push((a, b, weight));
        if a != b {
            self.entries.push((b, a, weight));
        }
        self
    }

    pub fn arc(&mut self, from: VertexId, to: VertexId, prob: f64) -> &mut Self {
        debug_assert!(!self.reversible);
        self.entries.push((from, to, prob));
        self
    }

    pub fn build(mut self) -> Result<RootedEnvironment, EnvError> {
        let n = self.n;
        for &(a, b, _) in &self.entries {
            if a as usize >= n {
                return Err(EnvError::VertexOutOfRange(a));
            }
            if b as usize >= n {
                return Err(EnvError::VertexOutOfRange(b));
            }
        }
        self.entries.sort_by(|l, r| (l.0, l.1).cmp(&(r.0, r.1)));
        for w in self.entries.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(EnvError::DuplicateArc { from: w[0].0, to: w[0].1 });
            }
        }
        let mut offsets = vec![0usize; n + 1];
        for &(a, _, _) in &self.entries {
            offsets[a as usize + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let targets: Vec<VertexId> = self.entries.iter().map(|e| e.1).collect();
        let values: Vec<f64> = self.entries.iter().map(|e| e.2).collect();
        let (probs, weights, vertex_weights) = if self.reversible {
            let mut nu = vec![0.0; n];
            let mut probs = vec![0.0; values.len()];
            for x in 0..n {
                let r = offsets[x]..offsets[x + 1];
                nu[x] = values[r.clone()].iter().sum();
                for i in r {
                    probs[i] = values[i] / nu[x];
                }
            }
            (probs, Some(values), Some(nu))
        } else {
            (values, None, None)
        };
        let mut coord_index = HashMap::new();
        if let Some(c) = &self.coords {
            let d = self.meta.dim;
            coord_index.reserve(n);
            for x in 0..n {
                coord_index.insert(c[x * d..(x + 1) * d].to_vec(), x as VertexId);
            }
        }
        Ok(RootedEnvironment {
            meta: self.meta,
            coords: self.coords,
            offsets,
            targets,
            probs,
            weights,
            vertex_weights,
            root: self.root,
            coord_index,
        })
    }
}

/// BFS metric ball. Distances follow positive-probability arcs, which is the
/// graph distance for reversible chains and the directed hitting distance
/// `min{n : P^n(x,y) > 0}` otherwise.
#[derive(Clone, Debug)]
pub struct BallView {
    pub center: VertexId,
    pub radius: usize,
    /// Members in BFS order (center first).
    pub members: Vec<VertexId>,
    pub distances: Vec<u32>,
    /// Vertices at exact distance `radius`.
    pub boundary: Vec<VertexId>,
    /// Members at distance `< radius`.
    pub inner: Vec<VertexId>,
    local: Vec<u32>,
}

const OUTSIDE: u32 = u32::MAX;

impl BallView {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, v: VertexId) -> bool {
        self.local[v as usize] != OUTSIDE
    }

    /// Position of `v` in `members`.
    pub fn local_index(&self, v: VertexId) -> Option<usize> {
        match self.local[v as usize] {
            OUTSIDE => None,
            i => Some(i as usize),
        }
    }

    pub fn distance(&self, v: VertexId) -> Option<u32> {
        self.local_index(v).map(|i| self.distances[i])
    }

    pub fn env_len(&self) -> usize {
        self.local.len()
    }
}

/// B_x(r).
pub fn ball(env: &RootedEnvironment, x: VertexId, r: usize) -> BallView {
    let n = env.len();
    let mut local = vec![OUTSIDE; n];
    let mut members = vec![x];
    let mut distances = vec![0u32];
    local[x as usize] = 0;
    let mut head = 0;
    while head < members.len() {
        let v = members[head];
        let dv = distances[head];
        head += 1;
        if dv as usize >= r {
            continue;
        }
        for (w, p) in env.arcs(v) {
            if p > 0.0 && local[w as usize] == OUTSIDE {
                local[w as usize] = members.len() as u32;
                members.push(w);
                distances.push(dv + 1);
            }
        }
    }
    let boundary = members
        .iter()
        .zip(&distances)
        .filter(|&(_, &d)| d as usize == r)
        .map(|(&v, _)| v)
        .collect();
    let inner = members
        .iter()
        .zip(&distances)
        .filter(|&(_, &d)| (d as usize) < r)
        .map(|(&v, _)| v)
        .collect();
    BallView { center: x, radius: r, members, distances, boundary, inner, local }
}

/// Full BFS distance table from `x`; unreachable vertices get `u32::MAX`.
pub fn distances_from(env: &RootedEnvironment, x: VertexId) -> Vec<u32> {
    let mut dist = vec![OUTSIDE; env.len()];
    let mut queue = VecDeque::from([x]);
    dist[x as usize] = 0;
    while let Some(v) = queue.pop_front() {
        let dv = dist[v as usize];
        for (w, p) in env.arcs(v) {
            if p > 0.0 && dist[w as usize] == OUTSIDE {
                dist[w as usize] = dv + 1;
                queue.push_back(w);
            }
        }
    }
    dist
}

#[cfg(test)]
mod tests {
    use super::*;

    fn directed_cycle(n: usize) -> RootedEnvironment {
        let mut b = EnvironmentBuilder::general(EnvMeta::new("custom", 0, 0, 0), n);
        for i in 0..n as VertexId {
            b.arc(i, (i + 1) % n as VertexId, 1.0);
        }
        b.build().unwrap()
    }

    #[test]
    fn ball_radius_zero_is_center() {
        let env = gen_lattice(2, 4, false).unwrap();
        let b = ball(&env, env.root(), 0);
        assert_eq!(b.members, vec![env.root()]);
        assert_eq!(b.boundary, vec![env.root()]);
        assert!(b.inner.is_empty());
    }

    #[test]
    fn lattice_ball_counts_l1_diamond() {
        let env = gen_lattice(2, 6, false).unwrap();
        // |{z in Z^2 : |z|_1 <= r}| = 2r^2 + 2r + 1
        for r in 0..=4 {
            assert_eq!(ball(&env, env.root(), r).len(), 2 * r * r + 2 * r + 1);
        }
    }

    #[test]
    fn balls_are_monotone() {
        let env = gen_percolation(2, 10, 0.6, 3).unwrap();
        for r in 0..8 {
            let small = ball(&env, env.root(), r);
            let big = ball(&env, env.root(), r + 1);
            assert!(small.members.iter().all(|&v| big.contains(v)));
        }
    }

    #[test]
    fn directed_distance_is_not_symmetric() {
        let env = directed_cycle(5);
        let b = ball(&env, 0, 1);
        assert!(b.contains(1));
        assert!(!b.contains(4));
        assert_eq!(distances_from(&env, 0)[4], 4);
    }

    #[test]
    fn validation_rejects_bad_rows() {
        let mut b = EnvironmentBuilder::general(EnvMeta::new("custom", 0, 0, 0), 2);
        b.arc(0, 1, 0.9).arc(1, 0, 1.0);
        let env = b.build().unwrap();
        assert!(matches!(env.validate(), Err(EnvError::RowSum { vertex: 0, .. })));
    }

    #[test]
    fn validation_rejects_disconnected() {
        let mut b = EnvironmentBuilder::reversible(EnvMeta::new("custom", 0, 0, 0), 4);
        b.edge(0, 1, 1.0).edge(2, 3, 1.0);
        let env = b.build().unwrap();
        assert!(matches!(env.validate(), Err(EnvError::Disconnected { reached: 2, total: 4 })));
    }

    #[test]
    fn validation_rejects_duplicate_coordinates() {
        let mut b = EnvironmentBuilder::reversible(EnvMeta::new("custom", 1, 0, 0), 2)
            .coords(vec![3, 3]);
        b.edge(0, 1, 1.0);
        let env = b.build().unwrap();
        assert!(matches!(env.validate(), Err(EnvError::DuplicateCoordinates { .. })));
    }
}
