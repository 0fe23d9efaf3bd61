//! Exact propagation of walk laws, path sampling and displacement moments.

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::environment::{distances_from, env_hash, EnvError, ModelSpec, RootedEnvironment, VertexId};
use crate::rng::{derive_seed, stream};
use crate::stats::{weighted_mean, Estimate};

/// Masses below this are discarded (and accounted for) after every step.
pub const DROP_THRESHOLD: f64 = 1e-300;

/// Largest environment handled by exact propagation in ensemble averages.
pub const EXACT_LIMIT: usize = 5_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WalkError {
    #[error("horizon {n} exceeds the boundary budget {budget}")]
    HorizonExceeded { n: usize, budget: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
}

pub fn check_horizon(env: &RootedEnvironment, n: usize) -> Result<(), WalkError> {
    match env.horizon_budget() {
        Some(budget) if n > budget => Err(WalkError::HorizonExceeded { n, budget }),
        _ => Ok(()),
    }
}

/// Sparse law on the vertices, sorted by vertex id.
#[derive(Clone, Debug, PartialEq)]
pub struct DistributionVector {
    entries: Vec<(VertexId, f64)>,
}

impl DistributionVector {
    pub fn point(x: VertexId) -> Self {
        DistributionVector { entries: vec![(x, 1.0)] }
    }

    /// Builds from arbitrary pairs; repeated ids are summed, zeros dropped.
    pub fn from_pairs(mut pairs: Vec<(VertexId, f64)>) -> Self {
        pairs.sort_by_key(|e| e.0);
        let mut entries: Vec<(VertexId, f64)> = Vec::with_capacity(pairs.len());
        for (v, m) in pairs {
            match entries.last_mut() {
                Some(last) if last.0 == v => last.1 += m,
                _ => entries.push((v, m)),
            }
        }
        entries.retain(|e| e.1 != 0.0);
        DistributionVector { entries }
    }

    pub fn from_dense(masses: &[f64]) -> Self {
        DistributionVector {
            entries: masses
                .iter()
                .enumerate()
                .filter(|(_, &m)| m != 0.0)
                .map(|(i, &m)| (i as VertexId, m))
                .collect(),
        }
    }

    pub fn get(&self, v: VertexId) -> f64 {
        self.entries.binary_search_by_key(&v, |e| e.0).map_or(0.0, |i| self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (VertexId, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn masses(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.1)
    }

    pub fn is_valid(&self, env_len: usize) -> bool {
        self.entries.iter().all(|&(v, m)| (v as usize) < env_len && m >= 0.0 && m.is_finite())
            && (self.total_mass() - 1.0).abs() <= 1e-10
    }
}

/// Dense propagation state with an explicit active list. Used wherever a law
/// has to be advanced many steps and inspected along the way.
#[derive(Clone, Debug)]
pub struct Walker<'a> {
    env: &'a RootedEnvironment,
    mass: Vec<f64>,
    next: Vec<f64>,
    active: Vec<VertexId>,
    next_active: Vec<VertexId>,
    dropped: f64,
    time: usize,
}

impl<'a> Walker<'a> {
    pub fn new(env: &'a RootedEnvironment, start: VertexId) -> Self {
        Self::from_distribution(env, &DistributionVector::point(start))
    }

    pub fn from_distribution(env: &'a RootedEnvironment, mu: &DistributionVector) -> Self {
        let mut mass = vec![0.0; env.len()];
        let mut active = Vec::with_capacity(mu.len());
        for (v, m) in mu.iter() {
            mass[v as usize] = m;
            active.push(v);
        }
        Walker {
            env,
            mass,
            next: vec![0.0; env.len()],
            active,
            next_active: Vec::new(),
            dropped: 0.0,
            time: 0,
        }
    }

    /// Back to a point mass at `start`, reusing the buffers.
    pub fn restart(&mut self, start: VertexId) {
        for &v in &self.active {
            self.mass[v as usize] = 0.0;
        }
        self.active.clear();
        self.mass[start as usize] = 1.0;
        self.active.push(start);
        self.dropped = 0.0;
        self.time = 0;
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn dropped_mass(&self) -> f64 {
        self.dropped
    }

    pub fn active(&self) -> &[VertexId] {
        &self.active
    }

    pub fn mass(&self, v: VertexId) -> f64 {
        self.mass[v as usize]
    }

    pub fn dense(&self) -> &[f64] {
        &self.mass
    }

    pub fn step(&mut self) {
        for &x in &self.active {
            let m = self.mass[x as usize];
            self.mass[x as usize] = 0.0;
            for (y, p) in self.env.arcs(x) {
                if p > 0.0 {
                    let slot = &mut self.next[y as usize];
                    if *slot == 0.0 {
                        self.next_active.push(y);
                    }
                    *slot += m * p;
                }
            }
        }
        let next = &mut self.next;
        let dropped = &mut self.dropped;
        self.next_active.retain(|&y| {
            let m = next[y as usize];
            if m < DROP_THRESHOLD {
                *dropped += m;
                next[y as usize] = 0.0;
                false
            } else {
                true
            }
        });
        std::mem::swap(&mut self.mass, &mut self.next);
        std::mem::swap(&mut self.active, &mut self.next_active);
        self.next_active.clear();
        self.time += 1;
    }

    pub fn advance(&mut self, steps: usize) {
        for _ in 0..steps {
            self.step();
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.active.iter().map(|&v| self.mass[v as usize]).sum()
    }

    pub fn entropy(&self) -> f64 {
        self.active
            .iter()
            .map(|&v| {
                let m = self.mass[v as usize];
                -m * m.ln()
            })
            .sum()
    }

    /// Δ between the current laws of two walkers on the same environment.
    pub fn delta_to(&self, other: &Walker<'_>) -> f64 {
        self.delta_sq_to(other).sqrt()
    }

    pub fn delta_sq_to(&self, other: &Walker<'_>) -> f64 {
        let mut s = 0.0;
        for &v in &self.active {
            let (a, b) = (self.mass[v as usize], other.mass[v as usize]);
            let t = a + b;
            if t > 0.0 {
                s += (a - b) * (a - b) / t;
            }
        }
        for &v in &other.active {
            if self.mass[v as usize] == 0.0 {
                s += other.mass[v as usize];
            }
        }
        s
    }

    /// Σ_v p(v)·f(v) over the current law.
    pub fn expect(&self, f: impl Fn(VertexId) -> f64) -> f64 {
        self.active.iter().map(|&v| self.mass[v as usize] * f(v)).sum()
    }

    pub fn distribution(&self) -> DistributionVector {
        DistributionVector::from_pairs(self.active.iter().map(|&v| (v, self.mass[v as usize])).collect())
    }
}

/// μ·Pⁿ. Mass is not renormalized.
pub fn propagate(
    env: &RootedEnvironment,
    mu: &DistributionVector,
    n: usize,
) -> Result<DistributionVector, WalkError> {
    check_horizon(env, n)?;
    Ok(propagate_unchecked(env, mu, n))
}

/// As `propagate`, without the boundary budget (callers that stay on balls
/// far from the box edge).
pub fn propagate_unchecked(env: &RootedEnvironment, mu: &DistributionVector, n: usize) -> DistributionVector {
    if n == 0 {
        return mu.clone();
    }
    let mut w = Walker::from_distribution(env, mu);
    w.advance(n);
    w.distribution()
}

/// p_n(x,y).
pub fn heat_kernel(env: &RootedEnvironment, x: VertexId, y: VertexId, n: usize) -> Result<f64, WalkError> {
    check_horizon(env, n)?;
    let mut w = Walker::new(env, x);
    w.advance(n);
    Ok(w.mass(y))
}

#[derive(Clone, Debug, PartialEq)]
pub struct WalkSample {
    pub path: Vec<VertexId>,
    pub seed: u64,
}

impl WalkSample {
    pub fn is_valid(&self, env: &RootedEnvironment) -> bool {
        self.path.windows(2).all(|w| env.transition(w[0], w[1]) > 0.0)
    }
}

/// One transition by inverse CDF over the row in stored (id) order.
pub fn step_from(env: &RootedEnvironment, x: VertexId, rng: &mut impl Rng) -> VertexId {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = x;
    for (y, p) in env.arcs(x) {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = y;
        if u < acc {
            return y;
        }
    }
    last
}

pub fn sample_path_with(env: &RootedEnvironment, start: VertexId, n: usize, rng: &mut impl Rng) -> Vec<VertexId> {
    let mut path = Vec::with_capacity(n + 1);
    path.push(start);
    let mut x = start;
    for _ in 0..n {
        x = step_from(env, x, rng);
        path.push(x);
    }
    path
}

/// Path of length n from `start` driven by the stream with id `seed`.
pub fn sample_path(env: &RootedEnvironment, start: VertexId, n: usize, seed: u64) -> WalkSample {
    let mut rng = stream(seed, "path", 0);
    WalkSample { path: sample_path_with(env, start, n, &mut rng), seed }
}

/// Empirical law of X_n over `paths` independent walks.
pub fn empirical_law(env: &RootedEnvironment, start: VertexId, n: usize, paths: usize, seed: u64) -> DistributionVector {
    let mut rng = stream(seed, "empirical", 0);
    let mut counts = vec![0u64; env.len()];
    for _ in 0..paths {
        let mut x = start;
        for _ in 0..n {
            x = step_from(env, x, &mut rng);
        }
        counts[x as usize] += 1;
    }
    let dense: Vec<f64> = counts.iter().map(|&c| c as f64 / paths as f64).collect();
    DistributionVector::from_dense(&dense)
}

/// Text dump: `dist env_hash=<h> n=<n>` then `p <id> <prob>` lines.
pub fn dump_distribution(env: &RootedEnvironment, mu: &DistributionVector, n: usize) -> String {
    let mut out = format!("dist env_hash={} n={}\n", env_hash(env), n);
    for (v, m) in mu.iter() {
        out.push_str(&format!("p {v} {m:.16e}\n"));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    /// Graph (or directed hitting) distance.
    Graph,
    /// Euclidean distance between embedding coordinates.
    Euclidean,
}

fn squared_distances(env: &RootedEnvironment, metric: Metric) -> Vec<f64> {
    let root = env.root();
    match metric {
        Metric::Graph => distances_from(env, root)
            .into_iter()
            .map(|d| if d == u32::MAX { f64::NAN } else { (d as f64) * (d as f64) })
            .collect(),
        Metric::Euclidean => {
            let r = env.coords(root).expect("euclidean metric needs coordinates").to_vec();
            (0..env.len() as VertexId)
                .map(|v| {
                    env.coords(v).unwrap().iter().zip(&r).map(|(a, b)| ((a - b) * (a - b)) as f64).sum()
                })
                .collect()
        }
    }
}

/// E_ρ[d(ρ,X_n)²] for n = 0..=n_max in one environment.
pub fn quenched_displacement(env: &RootedEnvironment, n_max: usize, metric: Metric) -> Result<Vec<f64>, WalkError> {
    check_horizon(env, n_max)?;
    let d2 = squared_distances(env, metric);
    let mut w = Walker::new(env, env.root());
    let mut out = Vec::with_capacity(n_max + 1);
    out.push(0.0);
    for _ in 0..n_max {
        w.step();
        out.push(w.expect(|v| d2[v as usize]));
    }
    Ok(out)
}

fn sampled_displacement(env: &RootedEnvironment, n_max: usize, metric: Metric, paths: usize, seed: u64) -> Vec<f64> {
    let d2 = squared_distances(env, metric);
    let mut rng = stream(seed, "displacement", 0);
    let mut acc = vec![0.0; n_max + 1];
    for _ in 0..paths {
        let path = sample_path_with(env, env.root(), n_max, &mut rng);
        for (t, &v) in path.iter().enumerate() {
            acc[t] += d2[v as usize];
        }
    }
    acc.iter().map(|s| s / paths as f64).collect()
}

#[derive(Clone, Debug)]
pub struct DisplacementProfile {
    /// Index t holds the estimate at n = t.
    pub mean: Vec<Estimate>,
    pub replicas: usize,
}

/// Runs `f` on every replica of a model and returns the results in replica
/// order, each paired with the stationarity weight ν(ρ).
pub fn map_replicas<T, F>(spec: &ModelSpec, master_seed: u64, replicas: usize, f: F) -> Result<Vec<(T, f64)>, WalkError>
where
    T: Send,
    F: Fn(&RootedEnvironment) -> Result<T, WalkError> + Sync,
{
    (0..replicas as u64)
        .into_par_iter()
        .map(|i| {
            let env = spec.generate(derive_seed(master_seed, spec.name(), i))?;
            let w = env.vertex_weight(env.root());
            Ok((f(&env)?, w))
        })
        .collect()
}

/// Annealed E[d(ρ,X_n)²] for n ≤ n_max with stationarity weights.
pub fn displacement_profile(
    spec: &ModelSpec,
    n_max: usize,
    replicas: usize,
    master_seed: u64,
    metric: Metric,
) -> Result<DisplacementProfile, WalkError> {
    assert!(replicas >= 1, "need at least one replica");
    let per_env = map_replicas(spec, master_seed, replicas, |env| {
        if env.len() <= EXACT_LIMIT {
            quenched_displacement(env, n_max, metric)
        } else {
            check_horizon(env, n_max)?;
            Ok(sampled_displacement(env, n_max, metric, 10_000, env.meta().seed))
        }
    })?;
    let weights: Vec<f64> = per_env.iter().map(|e| e.1).collect();
    let mean = (0..=n_max)
        .map(|t| {
            let vals: Vec<f64> = per_env.iter().map(|e| e.0[t]).collect();
            weighted_mean(&vals, &weights)
        })
        .collect();
    Ok(DisplacementProfile { mean, replicas })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{gen_lattice, gen_percolation, EnvMeta, EnvironmentBuilder};

    fn z1(l: usize) -> RootedEnvironment {
        gen_lattice(1, l, false).unwrap()
    }

    #[test]
    fn two_steps_on_z() {
        let env = z1(16);
        let at = |c: i64| env.vertex_at(&[c]).unwrap();
        let mu = propagate(&env, &DistributionVector::point(at(0)), 2).unwrap();
        assert_eq!(mu.len(), 3);
        assert_eq!(mu.get(at(-2)), 0.25);
        assert_eq!(mu.get(at(0)), 0.5);
        assert_eq!(mu.get(at(2)), 0.25);
        let same = propagate(&env, &mu, 0).unwrap();
        assert_eq!(same, mu);
        assert_eq!(heat_kernel(&env, at(0), at(1), 3).unwrap(), 0.375);
        assert_eq!(heat_kernel(&env, at(3), at(3), 0).unwrap(), 1.0);
    }

    #[test]
    fn budget_is_enforced() {
        let env = z1(16);
        assert!(propagate(&env, &DistributionVector::point(env.root()), 16).is_ok());
        assert_eq!(
            propagate(&env, &DistributionVector::point(env.root()), 17),
            Err(WalkError::HorizonExceeded { n: 17, budget: 16 })
        );
    }

    #[test]
    fn forced_orbit_on_directed_cycle() {
        let mut b = EnvironmentBuilder::general(EnvMeta::new("custom", 0, 0, 0), 5);
        for i in 0..5 {
            b.arc(i, (i + 1) % 5, 1.0);
        }
        let env = b.build().unwrap();
        let s = sample_path(&env, 2, 7, 11);
        assert_eq!(s.path, vec![2, 3, 4, 0, 1, 2, 3, 4]);
    }

    #[test]
    fn mass_is_conserved_on_percolation() {
        let env = gen_percolation(2, 32, 0.7, 4).unwrap();
        let mu = propagate(&env, &DistributionVector::point(env.root()), 50).unwrap();
        assert!((mu.total_mass() - 1.0).abs() < 1e-10);
        assert!(mu.is_valid(env.len()));
    }

    #[test]
    fn exact_second_moment_on_lattices() {
        for d in [1, 2] {
            let env = gen_lattice(d, 32, false).unwrap();
            let m = quenched_displacement(&env, 30, Metric::Euclidean).unwrap();
            for (n, v) in m.iter().enumerate() {
                assert!((v - n as f64).abs() < 1e-10, "d={d} n={n} {v}");
            }
        }
    }

    #[test]
    fn distribution_dump_format() {
        let env = z1(4);
        let mu = propagate(&env, &DistributionVector::point(env.root()), 1).unwrap();
        let text = dump_distribution(&env, &mu, 1);
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("dist env_hash="));
        assert_eq!(lines.count(), 2);
    }
}
