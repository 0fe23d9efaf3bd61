//! The deterministic invariant suite. Every instance draws from its own RNG
//! stream and reductions run in instance order, so results do not depend on
//! the thread count.

use std::fmt::Write as _;

use anyhow::{anyhow, Result};
use rand::Rng;
use rayon::prelude::*;
use rwlab::check::{Slack, Violation};
use rwlab::entropy::{check_lemma_xy, check_mean_inequality, check_tv_delta, quenched_entropy, JointTable};
use rwlab::environment::{ball, gen_torus, ModelSpec, RootedEnvironment, VertexId};
use rwlab::harmonic::{
    check_lemma_b, check_reverse_poincare, dirichlet_solve, proper_cover, zero_mean_subspace, HarmonicError,
    HarmonicField,
};
use rwlab::heatkernel::{check_gradient_lemma_with, gradient_constant, HeatKernelError, KernelMaxima};
use rwlab::rng::{derive_seed, stream, StreamRng};
use rwlab::walk::DistributionVector;

use crate::config::{Tolerances, VerifyConfig};
use crate::manifest::CheckResult;

fn sides(r: Result<Slack, Violation>) -> Slack {
    match r {
        Ok(s) => s,
        Err(v) => Slack { lhs: v.lhs, rhs: v.rhs, slack: v.slack },
    }
}

fn worst(values: impl IntoIterator<Item = f64>, init: f64, pick: fn(f64, f64) -> f64) -> f64 {
    values.into_iter().fold(init, pick)
}

fn min_of(values: impl IntoIterator<Item = f64>) -> f64 {
    // NaN poisons the minimum on purpose
    worst(values, f64::INFINITY, |a, b| if a.is_nan() || b.is_nan() { f64::NAN } else { a.min(b) })
}

fn max_of(values: impl IntoIterator<Item = f64>) -> f64 {
    worst(values, f64::NEG_INFINITY, |a, b| if a.is_nan() || b.is_nan() { f64::NAN } else { a.max(b) })
}

/// Weights where about 30% of the entries are exact zeros and 20% are tiny.
fn sparse_weights(rng: &mut StreamRng, len: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..len)
        .map(|_| match rng.random_range(0..10) {
            0..=2 => 0.0,
            3..=4 => rng.random::<f64>() * 1e-6,
            _ => rng.random::<f64>(),
        })
        .collect();
    if w.iter().all(|&v| v == 0.0) {
        let i = rng.random_range(0..len);
        w[i] = 1.0;
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Every eighth table is a product of its marginals.
fn random_table(seed: u64, i: usize) -> (JointTable, bool) {
    let mut rng = stream(seed, "verify.tables", i as u64);
    let rows = rng.random_range(1..=8);
    let cols = rng.random_range(1..=8);
    if i % 8 == 0 {
        let px = sparse_weights(&mut rng, rows);
        let py = sparse_weights(&mut rng, cols);
        (JointTable::independent(&px, &py).expect("valid marginals"), true)
    } else {
        (JointTable::new(rows, cols, sparse_weights(&mut rng, rows * cols)).expect("valid table"), false)
    }
}

/// The mutual-information bound on random joint tables, plus |lhs| + |rhs|
/// on the independent ones.
pub fn lemma_xy_suite(seed: u64, tables: usize, tol: f64, independent_tol: f64) -> Vec<CheckResult> {
    let runs: Vec<(Slack, bool)> = (0..tables)
        .into_par_iter()
        .map(|i| {
            let (t, indep) = random_table(seed, i);
            (sides(check_lemma_xy(&t)), indep)
        })
        .collect();
    let slack = min_of(runs.iter().map(|r| r.0.slack));
    let indep: Vec<f64> = runs.iter().filter(|r| r.1).map(|r| r.0.lhs.abs() + r.0.rhs.abs()).collect();
    vec![
        CheckResult::slack("lemma_xy", slack, tol, runs.len(), "min of rhs - lhs over random tables up to 8x8"),
        CheckResult::error(
            "lemma_xy_independent",
            max_of(indep.iter().copied()),
            independent_tol,
            indep.len(),
            "max of |lhs| + |rhs| over product tables",
        ),
    ]
}

fn random_pair(seed: u64, i: usize) -> (DistributionVector, DistributionVector, Vec<f64>) {
    let mut rng = stream(seed, "verify.triples", i as u64);
    let len = rng.random_range(1..=64);
    let mut a = sparse_weights(&mut rng, len);
    let mut b = sparse_weights(&mut rng, len);
    if i % 10 == 0 && len >= 2 {
        // disjoint supports: the extremal case of both inequalities
        let cut = len / 2;
        a[cut..].iter_mut().for_each(|v| *v = 0.0);
        b[..cut].iter_mut().for_each(|v| *v = 0.0);
        if a.iter().all(|&v| v == 0.0) {
            a[0] = 1.0;
        }
        if b.iter().all(|&v| v == 0.0) {
            b[len - 1] = 1.0;
        }
        for w in [&mut a, &mut b] {
            let t: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= t);
        }
    }
    let f: Vec<f64> = (0..len).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    (DistributionVector::from_dense(&a), DistributionVector::from_dense(&b), f)
}

/// TV ≤ √2·Δ and |μ(f) − ν(f)| ≤ Δ·(μ(f²) + ν(f²))^{1/2} on random laws
/// with at most 64 atoms and f with values in [−1, 1].
pub fn tv_delta_suite(seed: u64, triples: usize, tv_tol: f64, mean_tol: f64) -> Vec<CheckResult> {
    let runs: Vec<(f64, f64)> = (0..triples)
        .into_par_iter()
        .map(|i| {
            let (mu, nu, f) = random_pair(seed, i);
            let tv = match check_tv_delta(&mu, &nu) {
                Ok(t) => t.slack,
                Err(v) => v.slack,
            };
            let mean = sides(check_mean_inequality(&mu, &nu, |v| f[v as usize])).slack;
            (tv, mean)
        })
        .collect();
    vec![
        CheckResult::slack("tv_delta", min_of(runs.iter().map(|r| r.0)), tv_tol, runs.len(), "min of sqrt(2)*delta - tv"),
        CheckResult::slack(
            "mean_inequality",
            min_of(runs.iter().map(|r| r.1)),
            mean_tol,
            runs.len(),
            "min of delta*sqrt(mu(f^2)+nu(f^2)) - |mu(f)-nu(f)|",
        ),
    ]
}

/// Entropy identities on the cycle of length `side` and the side×side torus:
/// H(X_1,X_n) = H_1 + H_{n−1}, nonincreasing increments, and
/// E[Δ_n²] ≤ 2(H_n − H_{n−1}), all for n ≤ n_max.
pub fn torus_identities(side: usize, n_max: usize, tol: f64) -> Result<Vec<CheckResult>> {
    let mut identity = Vec::new();
    let mut monotone = Vec::new();
    let mut bound = Vec::new();
    for d in [1, 2] {
        let env = gen_torus(d, side)?;
        let q = quenched_entropy(&env, n_max)?;
        for n in 2..=n_max {
            identity.push(q.h1n[n] - q.h[n - 1] - q.h[1]);
        }
        for n in 2..=n_max {
            monotone.push(q.increment(n - 1) - q.increment(n));
        }
        for n in 1..=n_max {
            bound.push(2.0 * q.increment(n) - q.delta_sq[n]);
        }
    }
    let detail = format!("cycle and torus of side {side}, n <= {n_max}");
    Ok(vec![
        CheckResult::error(
            "torus_joint_entropy",
            max_of(identity.iter().map(|v| v.abs())),
            tol,
            identity.len(),
            format!("max |H(X_1,X_n) - H_(n-1) - H_1|, {detail}"),
        ),
        CheckResult::slack(
            "torus_increments_nonincreasing",
            min_of(monotone.iter().copied()),
            tol,
            monotone.len(),
            format!("min of (H_(n-1) - H_(n-2)) - (H_n - H_(n-1)), {detail}"),
        ),
        CheckResult::slack(
            "torus_entropy_bound",
            min_of(bound.iter().copied()),
            tol,
            bound.len(),
            format!("min of 2(H_n - H_(n-1)) - E[delta_n^2], {detail}"),
        ),
    ])
}

/// The three reversible test models on boxes of radius `l`.
pub fn test_models(l: usize) -> [ModelSpec; 3] {
    [
        ModelSpec::Lattice { d: 2, l, torus: false },
        ModelSpec::Percolation { d: 2, l, p: 0.7 },
        ModelSpec::Conductance { d: 2, l, alpha: 0.5 },
    ]
}

fn random_vertex(rng: &mut StreamRng, env: &RootedEnvironment, radius: usize) -> VertexId {
    let b = ball(env, env.root(), radius);
    b.members[rng.random_range(0..b.members.len())]
}

/// Lattice, percolation and conductance environments in rotation, one per
/// instance.
fn instance_env(l: usize, seed: u64, label: &str, i: usize) -> Result<RootedEnvironment> {
    let models = test_models(l);
    let spec = &models[i % 3];
    Ok(spec.generate(derive_seed(seed, label, i as u64))?)
}

fn harmonic_ratio(r: Result<Slack, HarmonicError>) -> Result<f64> {
    match r {
        Ok(s) => Ok(s.ratio()),
        Err(HarmonicError::Violation(v)) => Ok(if v.lhs == 0.0 { 0.0 } else { v.lhs / v.rhs }),
        Err(e) => Err(e.into()),
    }
}

/// Largest lhs/rhs of the reverse Poincaré inequality over `fields`
/// Dirichlet solutions with random boundary data on B_x(2n), x random within
/// l/4 of the root and 1 ≤ n ≤ l/4.
pub fn reverse_poincare_suite(seed: u64, fields: usize, l: usize, solver_tol: f64, tol: f64) -> Result<CheckResult> {
    let ratios: Vec<f64> = (0..fields)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let env = instance_env(l, seed, "verify.poincare", i)?;
            let mut rng = stream(seed, "verify.poincare.field", i as u64);
            let x = random_vertex(&mut rng, &env, l / 4);
            let n = rng.random_range(1..=(l / 4).max(1));
            let domain = ball(&env, x, 2 * n);
            let data: Vec<f64> = (0..domain.len()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let h = dirichlet_solve(&env, &domain, |v| data[domain.local_index(v).unwrap()], solver_tol)?;
            harmonic_ratio(check_reverse_poincare(&env, &h, x, n))
        })
        .collect::<Result<_>>()?;
    Ok(CheckResult::ratio(
        "reverse_poincare",
        max_of(ratios.iter().copied()),
        tol,
        ratios.len(),
        format!("max lhs/rhs over Z^2, percolation p=0.7 and conductance alpha=0.5 boxes of radius {l}"),
    ))
}

/// Slacks of the gradient lemma: for each model, groups sharing (x, n)
/// with n ≤ n_max, each group holding up to `per_group` (x′, y) draws.
pub fn gradient_lemma_suite(
    seed: u64,
    triples_per_model: usize,
    per_group: usize,
    n_max: usize,
    l: usize,
    tol: f64,
) -> Result<CheckResult> {
    let groups = triples_per_model.div_ceil(per_group);
    let jobs: Vec<(usize, usize)> = (0..3).flat_map(|m| (0..groups).map(move |g| (m, g))).collect();
    let slacks: Vec<Vec<f64>> = jobs
        .into_par_iter()
        .map(|(m, g)| -> Result<Vec<f64>> {
            let spec = &test_models(l)[m];
            let env = spec.generate(derive_seed(seed, "verify.gradient", m as u64))?;
            let d_max = gradient_constant(&env);
            let mut rng = stream(seed, &format!("verify.gradient.{m}"), g as u64);
            let x = random_vertex(&mut rng, &env, l / 4);
            let n = rng.random_range(1..=n_max);
            let maxima = KernelMaxima::compute(&env, x, n)?;
            let reach = ball(&env, x, 2 * n);
            let arcs: Vec<VertexId> = env.arcs(x).filter(|a| a.1 > 0.0).map(|a| a.0).collect();
            let count = per_group.min(triples_per_model - g * per_group);
            (0..count)
                .map(|_| {
                    let xp = arcs[rng.random_range(0..arcs.len())];
                    let y = reach.members[rng.random_range(0..reach.len())];
                    match check_gradient_lemma_with(&env, &maxima, d_max, xp, y) {
                        Ok(r) => Ok(r.slack.slack),
                        Err(HeatKernelError::Violation(v)) => Ok(v.slack),
                        Err(e) => Err(e.into()),
                    }
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let all: Vec<f64> = slacks.into_iter().flatten().collect();
    Ok(CheckResult::slack(
        "gradient_lemma",
        min_of(all.iter().copied()),
        tol,
        all.len(),
        format!("min of rhs - lhs, n <= {n_max}, three models on boxes of radius {l}"),
    ))
}

/// Harmonic fields on B_ρ(4n) with mean 0 on every ball of a cover of B_ρ(n)
/// by balls of radius n/2, built as combinations of more random Dirichlet
/// solutions than there are balls. Reports the largest lhs/rhs.
pub fn lemma_b_suite(seed: u64, n: usize, l: usize, solver_tol: f64, tol: f64) -> Result<CheckResult> {
    let models = [ModelSpec::Lattice { d: 2, l, torus: false }, ModelSpec::Conductance { d: 2, l, alpha: 0.5 }];
    let ratios: Vec<Vec<f64>> = models
        .par_iter()
        .enumerate()
        .map(|(m, spec)| -> Result<Vec<f64>> {
            let env = spec.generate(derive_seed(seed, "verify.lemma_b", m as u64))?;
            let cover = proper_cover(&env, env.root(), n, (n / 2).max(1));
            let domain = ball(&env, env.root(), 4 * n);
            let mut rng = stream(seed, "verify.lemma_b.fields", m as u64);
            let fields: Vec<HarmonicField> = (0..cover.count() + 3)
                .map(|_| {
                    let data: Vec<f64> = (0..domain.len()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                    dirichlet_solve(&env, &domain, |v| data[domain.local_index(v).unwrap()], solver_tol)
                })
                .collect::<Result<_, _>>()?;
            let sub = zero_mean_subspace(&env, &fields, &cover)?;
            sub.fields(&env, &fields)?
                .iter()
                .map(|h| harmonic_ratio(check_lemma_b(&env, h, &cover, n).map(|r| r.slack)))
                .collect()
        })
        .collect::<Result<_>>()?;
    let all: Vec<f64> = ratios.into_iter().flatten().collect();
    if all.is_empty() {
        return Err(anyhow!("lemma b suite produced no zero-mean fields"));
    }
    Ok(CheckResult::ratio(
        "lemma_b",
        max_of(all.iter().copied()),
        tol,
        all.len(),
        format!("max lhs/rhs on Z^2 and conductance, n = {n}, cover radius {}", (n / 2).max(1)),
    ))
}

/// Per-environment E[Δ_n(ρ,X_1)²] ≤ 2(H_1 + H_n − H(X_1,X_n)) on
/// percolation replicas.
pub fn entropy_bound_suite(seed: u64, replicas: usize, l: usize, n_max: usize, tol: f64) -> Result<CheckResult> {
    let spec = ModelSpec::Percolation { d: 2, l, p: 0.7 };
    let slacks: Vec<Vec<f64>> = (0..replicas)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let env = spec.generate(derive_seed(seed, "verify.entropy", i as u64))?;
            let q = quenched_entropy(&env, n_max)?;
            Ok((1..=n_max).map(|n| q.mutual_information_bound(n) - q.delta_sq[n]).collect())
        })
        .collect::<Result<_>>()?;
    let all: Vec<f64> = slacks.into_iter().flatten().collect();
    Ok(CheckResult::slack(
        "entropy_information_bound",
        min_of(all.iter().copied()),
        tol,
        all.len(),
        format!("min of 2I(X_1;X_n) - E[delta_n^2], percolation p=0.7, n <= {n_max}"),
    ))
}

pub fn run_verify(seed: u64, cfg: &VerifyConfig, tol: &Tolerances) -> Result<Vec<CheckResult>> {
    let mut out = lemma_xy_suite(seed, cfg.tables, tol.lemma_xy, 1e-12);
    out.extend(tv_delta_suite(seed, cfg.triples, tol.tv_delta, tol.mean_inequality));
    out.extend(torus_identities(12, cfg.torus_n, tol.entropy)?);
    out.push(reverse_poincare_suite(seed, cfg.harmonic_fields, cfg.box_radius, tol.solver, tol.reverse_poincare)?);
    out.push(gradient_lemma_suite(seed, cfg.gradient_triples, 10, cfg.gradient_n_max, cfg.box_radius, tol.gradient_lemma)?);
    out.push(lemma_b_suite(seed, 4, cfg.box_radius, tol.solver, tol.lemma_b)?);
    let n = cfg.torus_n.min((cfg.box_radius / 4).pow(2));
    out.push(entropy_bound_suite(seed, cfg.replicas, cfg.box_radius, n, tol.entropy)?);
    Ok(out)
}

pub fn results_csv(results: &[CheckResult]) -> String {
    let mut out = String::from("check,instances,worst,tolerance,pass\n");
    for r in results {
        let v = r.value.map_or("nan".into(), |v| format!("{v:.12e}"));
        let t = r.tolerance.map_or(String::new(), |t| format!("{t:.3e}"));
        writeln!(out, "{},{},{v},{t},{}", r.name, r.instances, r.pass).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suites_pass() {
        for r in lemma_xy_suite(4, 200, 1e-10, 1e-12) {
            assert!(r.pass, "{r:?}");
        }
        for r in tv_delta_suite(4, 200, 1e-12, 1e-12) {
            assert!(r.pass, "{r:?}");
        }
        for r in torus_identities(12, 8, 1e-10).unwrap() {
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn independent_tables_appear() {
        let r = lemma_xy_suite(1, 64, 1e-10, 1e-12);
        assert_eq!(r[1].instances, 8);
    }

    #[test]
    fn disjoint_pairs_have_disjoint_supports() {
        let (a, b, _) = random_pair(9, 20);
        assert!(a.iter().all(|(v, _)| b.get(v) == 0.0));
        assert!((a.total_mass() - 1.0).abs() < 1e-12 && (b.total_mass() - 1.0).abs() < 1e-12);
    }
}
