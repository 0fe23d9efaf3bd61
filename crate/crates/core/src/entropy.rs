//! Shannon entropy (nats), the Δ distance and the entropy inequalities for
//! walks.

use std::fmt::Write as _;

use thiserror::Error;

use crate::check::{Slack, Violation};
use crate::environment::{ModelSpec, RootedEnvironment, VertexId};
use crate::stats::{weighted_mean, Estimate};
use crate::walk::{check_horizon, map_replicas, DistributionVector, WalkError, Walker};

fn phi(t: f64) -> f64 {
    if t > 0.0 {
        -t * t.ln()
    } else {
        0.0
    }
}

pub fn entropy_of(masses: impl IntoIterator<Item = f64>) -> f64 {
    masses.into_iter().map(phi).sum()
}

pub fn entropy(mu: &DistributionVector) -> f64 {
    entropy_of(mu.masses())
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TableError {
    #[error("table has {got} entries, expected {rows}x{cols}")]
    Shape { rows: usize, cols: usize, got: usize },
    #[error("entry {0} is negative or not finite")]
    BadEntry(f64),
    #[error("entries sum to {0}")]
    NotNormalized(f64),
}

/// Joint law q(x, y) of two discrete variables, row x / column y.
#[derive(Clone, Debug, PartialEq)]
pub struct JointTable {
    rows: usize,
    cols: usize,
    q: Vec<f64>,
}

impl JointTable {
    pub fn new(rows: usize, cols: usize, q: Vec<f64>) -> Result<Self, TableError> {
        if q.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(TableError::Shape { rows, cols, got: q.len() });
        }
        if let Some(&bad) = q.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(TableError::BadEntry(bad));
        }
        let total: f64 = q.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(TableError::NotNormalized(total));
        }
        Ok(JointTable { rows, cols, q })
    }

    /// Product of two marginals.
    pub fn independent(px: &[f64], py: &[f64]) -> Result<Self, TableError> {
        let q = px.iter().flat_map(|a| py.iter().map(move |b| a * b)).collect();
        Self::new(px.len(), py.len(), q)
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.q[x * self.cols + y]
    }

    pub fn marginal_x(&self) -> Vec<f64> {
        (0..self.rows).map(|x| (0..self.cols).map(|y| self.get(x, y)).sum()).collect()
    }

    pub fn marginal_y(&self) -> Vec<f64> {
        (0..self.cols).map(|y| (0..self.rows).map(|x| self.get(x, y)).sum()).collect()
    }

    pub fn entropy(&self) -> f64 {
        entropy_of(self.q.iter().copied())
    }
}

fn delta_sq_iter(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    pairs
        .map(|(a, b)| {
            let s = a + b;
            if s > 0.0 {
                (a - b) * (a - b) / s
            } else {
                0.0
            }
        })
        .sum()
}

/// Merge-walk over the union support of two sorted sparse laws.
fn union_pairs<'a>(mu: &'a DistributionVector, nu: &'a DistributionVector) -> Vec<(VertexId, f64, f64)> {
    let (a, b): (Vec<_>, Vec<_>) = (mu.iter().collect(), nu.iter().collect());
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::with_capacity(a.len() + b.len());
    while i < a.len() || j < b.len() {
        if j == b.len() || (i < a.len() && a[i].0 < b[j].0) {
            out.push((a[i].0, a[i].1, 0.0));
            i += 1;
        } else if i == a.len() || b[j].0 < a[i].0 {
            out.push((b[j].0, 0.0, b[j].1));
            j += 1;
        } else {
            out.push((a[i].0, a[i].1, b[j].1));
            i += 1;
            j += 1;
        }
    }
    out
}

pub fn delta(mu: &DistributionVector, nu: &DistributionVector) -> f64 {
    delta_sq_iter(union_pairs(mu, nu).into_iter().map(|(_, a, b)| (a, b))).sqrt()
}

/// Δ between two dense laws of equal length.
pub fn delta_dense(mu: &[f64], nu: &[f64]) -> f64 {
    assert_eq!(mu.len(), nu.len());
    delta_sq_iter(mu.iter().copied().zip(nu.iter().copied())).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TvDelta {
    /// Σ|μ − ν| (not halved).
    pub tv: f64,
    pub delta: f64,
    /// √2·Δ − TV.
    pub slack: f64,
}

pub const TV_DELTA_TOL: f64 = 1e-12;
pub const MEAN_INEQUALITY_TOL: f64 = 1e-10;
pub const LEMMA_XY_TOL: f64 = 1e-10;

pub fn check_tv_delta(mu: &DistributionVector, nu: &DistributionVector) -> Result<TvDelta, Violation> {
    let pairs = union_pairs(mu, nu);
    let tv: f64 = pairs.iter().map(|(_, a, b)| (a - b).abs()).sum();
    let delta = delta_sq_iter(pairs.iter().map(|&(_, a, b)| (a, b))).sqrt();
    let s = Slack::new(tv, std::f64::consts::SQRT_2 * delta).require("tv-delta", TV_DELTA_TOL)?;
    Ok(TvDelta { tv, delta, slack: s.slack })
}

/// |μ(f) − ν(f)| ≤ Δ(μ,ν)·(μ(f²) + ν(f²))^{1/2}.
pub fn check_mean_inequality(
    mu: &DistributionVector,
    nu: &DistributionVector,
    f: impl Fn(VertexId) -> f64,
) -> Result<Slack, Violation> {
    let pairs = union_pairs(mu, nu);
    let (mut mf, mut nf, mut mf2, mut nf2) = (0.0, 0.0, 0.0, 0.0);
    for &(v, a, b) in &pairs {
        let fv = f(v);
        mf += a * fv;
        nf += b * fv;
        mf2 += a * fv * fv;
        nf2 += b * fv * fv;
    }
    let d = delta_sq_iter(pairs.iter().map(|&(_, a, b)| (a, b))).sqrt();
    Slack::new((mf - nf).abs(), d * (mf2 + nf2).sqrt()).require("mean inequality", MEAN_INEQUALITY_TOL)
}

/// Σ_y p(y) Δ²(law X, law X | Y=y) ≤ 2(H(X) + H(Y) − H(X,Y)).
pub fn check_lemma_xy(q: &JointTable) -> Result<Slack, Violation> {
    let px = q.marginal_x();
    let py = q.marginal_y();
    let mut lhs = 0.0;
    for (y, &p) in py.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let d2 = delta_sq_iter((0..q.rows).map(|x| (px[x], q.get(x, y) / p)));
        lhs += p * d2;
    }
    let rhs = 2.0 * (entropy_of(px) + entropy_of(py.iter().copied()) - q.entropy());
    Slack::new(lhs, rhs).require("lemma XY", LEMMA_XY_TOL)
}

/// Δ(law(X_n | X_0 = x), law(X_{n−1} | X_0 = y)), n ≥ 1.
pub fn delta_n(env: &RootedEnvironment, x: VertexId, y: VertexId, n: usize) -> Result<f64, WalkError> {
    assert!(n >= 1, "delta_n needs n >= 1");
    check_horizon(env, n)?;
    let mut a = Walker::new(env, x);
    a.advance(n);
    let mut b = Walker::new(env, y);
    b.advance(n - 1);
    Ok(a.delta_to(&b))
}

/// Single-environment entropy data, indexed by n = 0..=n_max.
#[derive(Clone, Debug, PartialEq)]
pub struct QuenchedEntropy {
    /// H(X_n) from the root.
    pub h: Vec<f64>,
    /// Joint entropy H(X_1, X_n); entry 0 is unused (0).
    pub h1n: Vec<f64>,
    /// Σ_x P(ρ,x) Δ_n(ρ,x)²; entry 0 is unused (0).
    pub delta_sq: Vec<f64>,
    /// Mass dropped by sparsification over the whole run.
    pub dropped: f64,
}

impl QuenchedEntropy {
    pub fn n_max(&self) -> usize {
        self.h.len() - 1
    }

    /// H_n − H_{n−1}.
    pub fn increment(&self, n: usize) -> f64 {
        self.h[n] - self.h[n - 1]
    }

    /// 2(H_1 + H_n − H_1^n): exact per-environment bound on delta_sq[n].
    pub fn mutual_information_bound(&self, n: usize) -> f64 {
        2.0 * (self.h[1] + self.h[n] - self.h1n[n])
    }
}

/// One lockstep pass: the root walker at time n and, for each neighbour x of
/// the root, a walker from x at time n − 1.
pub fn quenched_entropy(env: &RootedEnvironment, n_max: usize) -> Result<QuenchedEntropy, WalkError> {
    check_horizon(env, n_max)?;
    let root = env.root();
    let mut walker = Walker::new(env, root);
    let first: Vec<(VertexId, f64)> = env.arcs(root).filter(|a| a.1 > 0.0).collect();
    let h1 = entropy_of(first.iter().map(|a| a.1));
    let mut lagged: Vec<Walker<'_>> = first.iter().map(|&(x, _)| Walker::new(env, x)).collect();
    let mut h = vec![0.0; n_max + 1];
    let mut h1n = vec![0.0; n_max + 1];
    let mut delta_sq = vec![0.0; n_max + 1];
    for n in 1..=n_max {
        walker.step();
        h[n] = walker.entropy();
        let mut cond = 0.0;
        let mut d2 = 0.0;
        for (lag, &(_, p)) in lagged.iter_mut().zip(&first) {
            cond += p * lag.entropy();
            d2 += p * walker.delta_sq_to(lag);
            if n < n_max {
                lag.step();
            }
        }
        h1n[n] = h1 + cond;
        delta_sq[n] = d2;
    }
    let dropped = walker.dropped_mass() + lagged.iter().map(|w| w.dropped_mass()).sum::<f64>();
    Ok(QuenchedEntropy { h, h1n, delta_sq, dropped })
}

/// Annealed entropy profile with stationarity weights ν(ρ).
#[derive(Clone, Debug)]
pub struct EntropyProfile {
    pub n_max: usize,
    pub h: Vec<Estimate>,
    pub h1n: Vec<Estimate>,
    pub increments: Vec<Estimate>,
    /// Annealed E[Δ_n(ρ,X_1)²].
    pub delta_sq: Vec<Estimate>,
    /// 2(H_n − H_{n−1}) − E[Δ_n²], with the stderr of the per-replica difference.
    pub slack: Vec<Estimate>,
    pub per_env: Vec<QuenchedEntropy>,
    pub weights: Vec<f64>,
}

impl EntropyProfile {
    pub fn from_quenched(per_env: Vec<QuenchedEntropy>, weights: Vec<f64>) -> Self {
        let n_max = per_env.iter().map(|q| q.n_max()).min().expect("at least one replica");
        let at = |f: &dyn Fn(&QuenchedEntropy) -> f64| -> Estimate {
            let vals: Vec<f64> = per_env.iter().map(f).collect();
            weighted_mean(&vals, &weights)
        };
        let zero = Estimate { mean: 0.0, stderr: 0.0 };
        let mut h = Vec::with_capacity(n_max + 1);
        let mut h1n = vec![zero];
        let mut increments = vec![zero];
        let mut delta_sq = vec![zero];
        let mut slack = vec![zero];
        h.push(at(&|q| q.h[0]));
        for n in 1..=n_max {
            h.push(at(&|q| q.h[n]));
            h1n.push(at(&|q| q.h1n[n]));
            increments.push(at(&|q| q.increment(n)));
            delta_sq.push(at(&|q| q.delta_sq[n]));
            slack.push(at(&|q| 2.0 * q.increment(n) - q.delta_sq[n]));
        }
        EntropyProfile { n_max, h, h1n, increments, delta_sq, slack, per_env, weights }
    }

    /// The entropy inequality at horizon n: E[Δ_n²] ≤ 2(H_n − H_{n−1}).
    pub fn bound_check(&self, n: usize) -> EntropyCheck {
        EntropyCheck {
            n,
            lhs: self.delta_sq[n].mean,
            rhs: 2.0 * self.increments[n].mean,
            slack: self.slack[n].mean,
            stderr: self.slack[n].stderr,
        }
    }

    /// CSV: n, H_n, H1n, increment, lhs, rhs, slack, stderr, replicas.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,H_n,H1n,increment,lhs,rhs,slack,stderr,replicas\n");
        let r = self.per_env.len();
        writeln!(out, "0,{:.12e},,,,,,,{r}", self.h[0].mean).unwrap();
        for n in 1..=self.n_max {
            let c = self.bound_check(n);
            writeln!(
                out,
                "{n},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{r}",
                self.h[n].mean, self.h1n[n].mean, self.increments[n].mean, c.lhs, c.rhs, c.slack, c.stderr
            )
            .unwrap();
        }
        out
    }
}

/// Annealed entropy inequality at one horizon, reported with its error bar.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntropyCheck {
    pub n: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub stderr: f64,
}

pub fn entropy_profile(
    spec: &ModelSpec,
    n_max: usize,
    replicas: usize,
    master_seed: u64,
) -> Result<EntropyProfile, WalkError> {
    let runs = map_replicas(spec, master_seed, replicas, |env| quenched_entropy(env, n_max))?;
    let (per_env, weights) = runs.into_iter().unzip();
    Ok(EntropyProfile::from_quenched(per_env, weights))
}

pub fn check_theorem_entropy(
    spec: &ModelSpec,
    n: usize,
    replicas: usize,
    master_seed: u64,
) -> Result<EntropyCheck, WalkError> {
    Ok(entropy_profile(spec, n, replicas, master_seed)?.bound_check(n))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LiouvilleRow {
    pub n: usize,
    /// E_ρ|h(ρ) − h(X_1)|.
    pub lhs: f64,
    /// E_ρ[Δ_n(ρ,X_1)²].
    pub delta_sq: f64,
    /// E_ρ[(h(X_n) − h(ρ))²].
    pub second_moment: f64,
    /// √(2·E_ρ[Δ_n²]·second_moment): the gradient ceiling at this n.
    pub rhs: f64,
}

/// Compares the one-step gradient of `h` at the root with the entropy bound
/// for each horizon. The bound is exact when `h` is harmonic on B_ρ(n − 1).
/// The field is centred at h(ρ) first, so constants give 0 on both sides.
pub fn sublinear_liouville_probe(
    env: &RootedEnvironment,
    h: impl Fn(VertexId) -> f64,
    ns: &[usize],
) -> Result<Vec<LiouvilleRow>, WalkError> {
    let n_max = ns.iter().copied().max().unwrap_or(0);
    check_horizon(env, n_max)?;
    let root = env.root();
    let first: Vec<(VertexId, f64)> = env.arcs(root).filter(|a| a.1 > 0.0).collect();
    let lhs: f64 = first.iter().map(|&(x, p)| p * (h(root) - h(x)).abs()).sum();
    let mut walker = Walker::new(env, root);
    let mut lagged: Vec<Walker<'_>> = first.iter().map(|&(x, _)| Walker::new(env, x)).collect();
    let mut rows = Vec::new();
    for n in 1..=n_max {
        walker.step();
        if ns.contains(&n) {
            let delta_sq: f64 = lagged.iter().zip(&first).map(|(w, &(_, p))| p * walker.delta_sq_to(w)).sum();
            let h0 = h(root);
            let second_moment = walker.expect(|v| (h(v) - h0) * (h(v) - h0));
            rows.push(LiouvilleRow { n, lhs, delta_sq, second_moment, rhs: (2.0 * delta_sq * second_moment).sqrt() });
        }
        for w in lagged.iter_mut() {
            w.step();
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{gen_lattice, gen_torus, EnvMeta, EnvironmentBuilder};

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&DistributionVector::point(3)), 0.0);
        let u = DistributionVector::from_dense(&[0.2; 5]);
        assert!((entropy(&u) - 5f64.ln()).abs() < 1e-15);
        let z2 = DistributionVector::from_dense(&[0.25, 0.5, 0.25]);
        assert!((entropy(&z2) - 1.5 * 2f64.ln()).abs() < 1e-15);
        assert!((entropy(&z2) - 1.039721).abs() < 1e-6);
    }

    #[test]
    fn delta_examples() {
        let mu = DistributionVector::from_dense(&[1.0, 0.0]);
        let nu = DistributionVector::from_dense(&[0.5, 0.5]);
        assert_eq!(delta(&mu, &mu), 0.0);
        assert!((delta(&mu, &nu) - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let a = DistributionVector::point(0);
        let b = DistributionVector::point(1);
        assert!((delta(&a, &b) - 2f64.sqrt()).abs() < 1e-15);
        let c = check_tv_delta(&a, &b).unwrap();
        assert_eq!(c.tv, 2.0);
        assert!(c.slack.abs() < 1e-15);
        let same = check_tv_delta(&mu, &mu).unwrap();
        assert_eq!((same.tv, same.delta, same.slack), (0.0, 0.0, 0.0));
    }

    #[test]
    fn mean_inequality_examples() {
        let a = DistributionVector::point(0);
        let b = DistributionVector::point(1);
        let s = check_mean_inequality(&a, &b, |v| v as f64).unwrap();
        assert_eq!(s.lhs, 1.0);
        assert!((s.slack - (2f64.sqrt() - 1.0)).abs() < 1e-15);
        let mu = DistributionVector::from_dense(&[0.3, 0.7]);
        let c = check_mean_inequality(&mu, &b, |_| -2.0).unwrap();
        assert_eq!(c.lhs, 0.0);
        assert!((c.slack - delta(&mu, &b) * 2.0 * 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn lemma_xy_examples() {
        let indep = JointTable::independent(&[0.3, 0.7], &[0.1, 0.5, 0.4]).unwrap();
        let s = check_lemma_xy(&indep).unwrap();
        assert!(s.lhs.abs() + s.rhs.abs() <= 1e-12);
        let copy = JointTable::new(2, 2, vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        let s = check_lemma_xy(&copy).unwrap();
        assert!((s.lhs - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.rhs - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert!(s.slack > 0.0);
    }

    fn dense_power(p: &[Vec<f64>], start: usize, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; p.len()];
        v[start] = 1.0;
        for _ in 0..n {
            let mut w = vec![0.0; p.len()];
            for (i, row) in p.iter().enumerate() {
                for (j, &q) in row.iter().enumerate() {
                    w[j] += v[i] * q;
                }
            }
            v = w;
        }
        v
    }

    #[test]
    fn delta_n_on_six_cycle_matches_dense_oracle() {
        let env = gen_torus(1, 6).unwrap();
        let mut p = vec![vec![0.0; 6]; 6];
        for i in 0..6 {
            p[i][(i + 1) % 6] = 0.5;
            p[i][(i + 5) % 6] = 0.5;
        }
        let oracle = delta_dense(&dense_power(&p, 0, 3), &dense_power(&p, 1, 2));
        assert!((delta_n(&env, 0, 1, 3).unwrap() - oracle).abs() < 1e-15);
        // p_3(0,·) = (0, 3/8, 0, 1/4, 0, 3/8), p_2(1,·) = (0, 1/2, 0, 1/4, 0, 1/4)
        assert!((oracle - (3.0f64 / 70.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn delta_n_is_not_symmetric() {
        let mut b = EnvironmentBuilder::general(EnvMeta::new("custom", 0, 0, 0), 3);
        b.arc(0, 1, 1.0).arc(1, 2, 1.0).arc(2, 0, 1.0);
        let env = b.build().unwrap();
        assert_eq!(delta_n(&env, 0, 1, 1).unwrap(), 0.0);
        assert!((delta_n(&env, 1, 0, 1).unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn cycle_identities_are_exact() {
        let env = gen_torus(1, 12).unwrap();
        let q = quenched_entropy(&env, 20).unwrap();
        for n in 1..=20 {
            assert!((q.h1n[n] - q.h[n - 1] - q.h[1]).abs() < 1e-10);
            assert!(q.delta_sq[n] <= 2.0 * q.increment(n) + 1e-10);
        }
        for n in 2..=20 {
            assert!(q.increment(n) <= q.increment(n - 1) + 1e-12);
        }
    }

    #[test]
    fn liouville_probe_on_z() {
        let env = gen_lattice(1, 40, false).unwrap();
        let x = |v: VertexId| env.coords(v).unwrap()[0] as f64;
        let rows = sublinear_liouville_probe(&env, x, &[1, 5, 20, 100]).unwrap();
        for r in &rows {
            assert_eq!(r.lhs, 1.0);
            assert!(r.rhs >= 1.0 - 1e-12, "{r:?}");
        }
        let flat = sublinear_liouville_probe(&env, |_| 3.0, &[4]).unwrap();
        assert_eq!(flat[0].lhs, 0.0);
        assert_eq!(flat[0].rhs, 0.0);
    }
}
