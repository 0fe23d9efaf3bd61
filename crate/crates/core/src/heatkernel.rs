//! Heat-kernel scaling: on-diagonal and Gaussian-profile fits, and the
//! discrete space gradient of p_n.

use std::fmt::Write as _;

use thiserror::Error;

use crate::check::{Slack, Violation};
use crate::environment::{ball, ModelSpec, RootedEnvironment, VertexId};
use crate::rng::stream;
use crate::stats::{fit_line, least_squares, mean, Estimate, LineFit};
use crate::walk::{check_horizon, map_replicas, WalkError, Walker};

pub const GRADIENT_LEMMA_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HeatKernelError {
    #[error("{x} and {x_prime} are not neighbours")]
    NotAdjacent { x: VertexId, x_prime: VertexId },
    #[error("time {0} must be even and positive")]
    BadTime(usize),
    #[error("the gradient bound needs a reversible chain")]
    NotReversible,
    #[error("model has no coordinates")]
    NoCoordinates,
    #[error("need at least {need} distinct times in [n_min, n_max], got {got}")]
    InsufficientRange { need: usize, got: usize },
    #[error(transparent)]
    Walk(#[from] WalkError),
    #[error(transparent)]
    Violation(#[from] Violation),
}

fn check_adjacent(env: &RootedEnvironment, x: VertexId, x_prime: VertexId) -> Result<(), HeatKernelError> {
    if env.transition(x, x_prime) > 0.0 {
        Ok(())
    } else {
        Err(HeatKernelError::NotAdjacent { x, x_prime })
    }
}

/// (p_{2n}(x,y) − p_{2n−1}(x′,y))².
pub fn gradient_squared(
    env: &RootedEnvironment,
    x: VertexId,
    x_prime: VertexId,
    y: VertexId,
    two_n: usize,
) -> Result<f64, HeatKernelError> {
    if two_n == 0 || two_n % 2 == 1 {
        return Err(HeatKernelError::BadTime(two_n));
    }
    check_adjacent(env, x, x_prime)?;
    check_horizon(env, two_n)?;
    let mut a = Walker::new(env, x);
    a.advance(two_n);
    let mut b = Walker::new(env, x_prime);
    b.advance(two_n - 1);
    Ok((a.mass(y) - b.mass(y)).powi(2))
}

/// Degree-type constant D of the gradient bound: the larger of
/// max 1/P(x,x′) over arcs and max ν / min ν. For simple random walk both
/// equal the maximal degree (up to the ratio of degrees).
pub fn gradient_constant(env: &RootedEnvironment) -> f64 {
    let mut inv_p = 0.0f64;
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for x in 0..env.len() as VertexId {
        for (_, p) in env.arcs(x) {
            if p > 0.0 {
                inv_p = inv_p.max(1.0 / p);
            }
        }
        let w = env.vertex_weight(x);
        lo = lo.min(w);
        hi = hi.max(w);
    }
    inv_p.max(hi / lo)
}

/// max p_n(a,b) over a, b ∈ B_x(2n), overall and restricted to d(a,b) ≥ k.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMaxima {
    pub center: VertexId,
    pub n: usize,
    pub global: f64,
    /// far[k] = max over pairs at distance ≥ k, for k = 0..=n.
    far: Vec<f64>,
    /// Largest mass dropped below the propagation threshold by any start.
    pub dropped: f64,
}

impl KernelMaxima {
    /// Exhaustive scan: one exact propagation from every vertex of B_x(2n).
    /// Distances come for free since p_t(a,b) > 0 first at t = d(a,b).
    pub fn compute(env: &RootedEnvironment, x: VertexId, n: usize) -> Result<Self, HeatKernelError> {
        assert!(n >= 1);
        check_horizon(env, 2 * n)?;
        let region = ball(env, x, 2 * n);
        let mut far = vec![0.0f64; n + 1];
        let mut global = 0.0f64;
        let mut dropped = 0.0f64;
        let mut first = vec![u32::MAX; env.len()];
        let mut touched = Vec::new();
        let mut w = Walker::new(env, x);
        for &a in &region.members {
            w.restart(a);
            first[a as usize] = 0;
            touched.push(a);
            for t in 1..=n {
                w.step();
                for &v in w.active() {
                    if first[v as usize] == u32::MAX {
                        first[v as usize] = t as u32;
                        touched.push(v);
                    }
                }
            }
            for &b in w.active() {
                if region.contains(b) {
                    let p = w.mass(b);
                    let d = first[b as usize] as usize;
                    global = global.max(p);
                    far[d] = far[d].max(p);
                }
            }
            dropped = dropped.max(w.dropped_mass());
            for v in touched.drain(..) {
                first[v as usize] = u32::MAX;
            }
        }
        for k in (0..n).rev() {
            far[k] = far[k].max(far[k + 1]);
        }
        Ok(KernelMaxima { center: x, n, global, far, dropped })
    }

    pub fn far(&self, k: usize) -> f64 {
        self.far.get(k).copied().unwrap_or(0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientLemma {
    pub slack: Slack,
    pub d_max: f64,
    /// Δ_n(x,x′)².
    pub delta_sq: f64,
    pub far_max: f64,
    pub global_max: f64,
}

/// (p_{2n}(x,y) − p_{2n−1}(x′,y))² ≤ 4D(D+1)·Δ_n(x,x′)²·far·global, where
/// far is the largest p_n between points of B_x(2n) at distance ≥ d(x,y)/2
/// and global the largest p_n on B_x(2n).
pub fn check_gradient_lemma(
    env: &RootedEnvironment,
    x: VertexId,
    x_prime: VertexId,
    y: VertexId,
    n: usize,
) -> Result<GradientLemma, HeatKernelError> {
    let maxima = KernelMaxima::compute(env, x, n)?;
    check_gradient_lemma_with(env, &maxima, gradient_constant(env), x_prime, y)
}

/// As `check_gradient_lemma` with the maxima and D computed once.
pub fn check_gradient_lemma_with(
    env: &RootedEnvironment,
    maxima: &KernelMaxima,
    d_max: f64,
    x_prime: VertexId,
    y: VertexId,
) -> Result<GradientLemma, HeatKernelError> {
    if !env.is_reversible() {
        return Err(HeatKernelError::NotReversible);
    }
    let (x, n) = (maxima.center, maxima.n);
    check_adjacent(env, x, x_prime)?;
    let mut a = Walker::new(env, x);
    a.advance(n);
    let mut b = Walker::new(env, x_prime);
    b.advance(n - 1);
    let delta_sq = a.delta_sq_to(&b);
    a.advance(n);
    b.advance(n);
    let lhs = (a.mass(y) - b.mass(y)).powi(2);
    let dist = ball(env, x, 2 * n).distance(y).map_or(usize::MAX, |d| d as usize);
    let far_max = if dist == usize::MAX { 0.0 } else { maxima.far(dist.div_ceil(2)) };
    let rhs = 4.0 * d_max * (d_max + 1.0) * delta_sq * far_max * maxima.global;
    let slack = Slack::new(lhs, rhs).require("gradient lemma", GRADIENT_LEMMA_TOL)?;
    Ok(GradientLemma { slack, d_max, delta_sq, far_max, global_max: maxima.global })
}

/// Geometric grid of distinct integers in [n_min, n_max] with both ends.
pub fn log_grid(n_min: usize, n_max: usize, points: usize) -> Vec<usize> {
    assert!(n_min >= 1 && n_max >= n_min && points >= 2);
    let ratio = (n_max as f64 / n_min as f64).ln() / (points - 1) as f64;
    let mut out: Vec<usize> = (0..points).map(|i| (n_min as f64 * (ratio * i as f64).exp()).round() as usize).collect();
    out[points - 1] = n_max;
    out.dedup();
    out
}

const MIN_FIT_TIMES: usize = 4;
/// Residual (in log units) within which a start is on its fitted envelope.
pub const ONSET_BAND: f64 = std::f64::consts::LN_2;

#[derive(Clone, Debug, PartialEq)]
pub struct StartRecord {
    pub replica: usize,
    pub start: VertexId,
    /// p_n(x,x) + p_{n+1}(x,x) on the time grid.
    pub diagonal: Vec<f64>,
    pub fit: LineFit,
    /// First grid time from which every later time stays within the band of
    /// this start's own fit; None if even the last time does not.
    pub onset: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct GaussianFitReport {
    pub ns: Vec<usize>,
    /// Mean of p_n(x,x) + p_{n+1}(x,x) over all starts.
    pub diagonal: Vec<f64>,
    pub diagonal_fit: LineFit,
    /// C and c in C·n^{−d/2}·exp(−c|x−y|²/n).
    pub profile_constant: f64,
    pub profile_rate: f64,
    pub profile_r2: f64,
    pub profile_points: usize,
    pub starts: Vec<StartRecord>,
}

impl GaussianFitReport {
    /// Starts whose onset never arrives within the grid.
    pub fn flagged(&self) -> usize {
        self.starts.iter().filter(|s| s.onset.is_none()).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,diagonal,fitted\n");
        for (n, q) in self.ns.iter().zip(&self.diagonal) {
            let fitted = (self.diagonal_fit.intercept + self.diagonal_fit.slope * (*n as f64).ln()).exp();
            writeln!(out, "{n},{q:.12e},{fitted:.12e}").unwrap();
        }
        out
    }
}

struct StartData {
    start: VertexId,
    diagonal: Vec<f64>,
    /// (|x−y|²/n, log(q·n^{d/2})).
    profile: Vec<(f64, f64)>,
}

fn axis_offsets(env: &RootedEnvironment, x: VertexId, n: usize) -> Vec<(i64, VertexId)> {
    let c = env.coords(x).unwrap().to_vec();
    let reach = (3.0 * (n as f64).sqrt()).floor() as i64;
    (0..=reach)
        .filter_map(|k| {
            let mut t = c.clone();
            t[0] += k;
            env.vertex_at(&t).map(|y| (k, y))
        })
        .collect()
}

fn kernel_data(env: &RootedEnvironment, start: VertexId, ns: &[usize]) -> StartData {
    let d = env.dim() as f64;
    let n_max = *ns.last().unwrap();
    let mut w = Walker::new(env, start);
    let mut prev: Vec<f64> = Vec::new();
    let mut diagonal = Vec::with_capacity(ns.len());
    let mut profile = Vec::new();
    let mut pending = ns.iter().peekable();
    let mut current: Option<(usize, Vec<(i64, VertexId)>)> = None;
    for t in 0..=n_max + 1 {
        if t > 0 {
            w.step();
        }
        if let Some((n, targets)) = current.take() {
            // time t = n + 1: finish the parity sum
            let q0 = w.mass(start) + prev[0];
            diagonal.push(q0);
            for (i, &(k, y)) in targets.iter().enumerate() {
                let q = w.mass(y) + prev[i + 1];
                if q > 0.0 {
                    profile.push(((k * k) as f64 / n as f64, (q * (n as f64).powf(d / 2.0)).ln()));
                }
            }
        }
        if pending.peek() == Some(&&t) {
            pending.next();
            let targets = if env.has_coords() { axis_offsets(env, start, t) } else { Vec::new() };
            prev = std::iter::once(w.mass(start)).chain(targets.iter().map(|&(_, y)| w.mass(y))).collect();
            current = Some((t, targets));
        }
    }
    StartData { start, diagonal, profile }
}

fn onset(ns: &[usize], values: &[f64], fit: &LineFit) -> Option<usize> {
    let mut onset = None;
    for (i, (&n, &q)) in ns.iter().zip(values).enumerate().rev() {
        let resid = q.ln() - fit.intercept - fit.slope * (n as f64).ln();
        if resid.abs() > ONSET_BAND || !resid.is_finite() {
            break;
        }
        onset = Some(ns[i]);
    }
    onset
}

/// Start vertices: the root, then `starts − 1` vertices drawn from B_ρ(r)
/// with r = √budget / 4 (or 4 without a budget).
fn pick_starts(env: &RootedEnvironment, starts: usize) -> Vec<VertexId> {
    let r = env.horizon_budget().map_or(4, |b| ((b as f64).sqrt() / 4.0).max(1.0) as usize);
    let region = ball(env, env.root(), r);
    let mut rng = stream(env.meta().seed, "starts", 0);
    let mut out = vec![env.root()];
    use rand::Rng;
    while out.len() < starts.min(region.len()) {
        let v = region.members[rng.random_range(0..region.len())];
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

/// Diagonal log-log fit of p_n(x,x) + p_{n+1}(x,x) over `ns` and a Gaussian
/// profile fit along the first axis for |x−y| ≤ 3√n, on `replicas`
/// environments with `starts` start vertices each.
pub fn fit_gaussian(
    spec: &ModelSpec,
    ns: &[usize],
    starts: usize,
    replicas: usize,
    master_seed: u64,
) -> Result<GaussianFitReport, HeatKernelError> {
    let mut ns = ns.to_vec();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() < MIN_FIT_TIMES || ns[0] == 0 {
        return Err(HeatKernelError::InsufficientRange { need: MIN_FIT_TIMES, got: ns.len() });
    }
    let n_max = *ns.last().unwrap();
    let per_env = map_replicas(spec, master_seed, replicas, |env| {
        check_horizon(env, n_max + 1)?;
        Ok(pick_starts(env, starts.max(1)).into_iter().map(|s| kernel_data(env, s, &ns)).collect::<Vec<_>>())
    })?;
    let log_n: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let mut records = Vec::new();
    let mut sums = vec![0.0; ns.len()];
    let mut profile = Vec::new();
    for (replica, (data, _)) in per_env.into_iter().enumerate() {
        for s in data {
            for (acc, q) in sums.iter_mut().zip(&s.diagonal) {
                *acc += q;
            }
            let logs: Vec<f64> = s.diagonal.iter().map(|q| q.ln()).collect();
            let fit = fit_line(&log_n, &logs);
            let onset = onset(&ns, &s.diagonal, &fit);
            records.push(StartRecord { replica, start: s.start, diagonal: s.diagonal, fit, onset });
            profile.extend(s.profile);
        }
    }
    let count = records.len() as f64;
    let diagonal: Vec<f64> = sums.iter().map(|s| s / count).collect();
    let diagonal_fit = fit_line(&log_n, &diagonal.iter().map(|q| q.ln()).collect::<Vec<_>>());
    let (profile_constant, profile_rate, profile_r2) = if profile.len() >= 2 {
        let design: Vec<Vec<f64>> = profile.iter().map(|&(s, _)| vec![1.0, s]).collect();
        let ys: Vec<f64> = profile.iter().map(|p| p.1).collect();
        let (beta, r2) = least_squares(&design, &ys);
        (beta[0].exp(), -beta[1], r2)
    } else {
        (f64::NAN, f64::NAN, f64::NAN)
    };
    Ok(GaussianFitReport {
        ns,
        diagonal,
        diagonal_fit,
        profile_constant,
        profile_rate,
        profile_r2,
        profile_points: profile.len(),
        starts: records,
    })
}

fn spec_dim(spec: &ModelSpec) -> usize {
    match spec {
        ModelSpec::Lattice { d, .. }
        | ModelSpec::Torus { d, .. }
        | ModelSpec::Percolation { d, .. }
        | ModelSpec::Conductance { d, .. }
        | ModelSpec::Balanced { d, .. } => *d,
        ModelSpec::Sierpinski { .. } => 2,
        ModelSpec::Kesten { .. } => 1,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientRow {
    pub n: usize,
    pub kappa: f64,
    /// |x − y| along the first axis.
    pub displacement: i64,
    pub estimate: Estimate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KappaFit {
    pub kappa: f64,
    /// Log-log slope of the estimate in n; NaN when it vanishes identically.
    pub exponent: f64,
    pub fit: Option<LineFit>,
}

#[derive(Clone, Debug)]
pub struct AnnealedGradient {
    pub dim: usize,
    pub rows: Vec<GradientRow>,
    pub fits: Vec<KappaFit>,
    /// C3, C4 in C3·n^{−(d+1)}·exp(−C4|x−y|²/n); C4 is NaN with one κ.
    pub c3: f64,
    pub c4: f64,
    /// Replicas where x ∼ x′ failed (they contribute zeros).
    pub missing: usize,
}

impl AnnealedGradient {
    pub fn exponent(&self, kappa: f64) -> Option<f64> {
        self.fits.iter().find(|f| f.kappa == kappa).map(|f| f.exponent)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,displacement,estimate,stderr,c3,c4,exponent\n");
        for r in &self.rows {
            let exp = self.exponent(r.kappa).unwrap_or(f64::NAN);
            writeln!(
                out,
                "{},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.6}",
                r.n, r.displacement, r.estimate.mean, r.estimate.stderr, self.c3, self.c4, exp
            )
            .unwrap();
        }
        out
    }
}

/// k ≈ κ√n with the parity of n (so that p_n(x, x + k·e₁) can be positive).
pub fn parity_displacement(kappa: f64, n: usize) -> i64 {
    let target = kappa * (n as f64).sqrt();
    let mut k = target.round() as i64;
    if (k - n as i64).rem_euclid(2) == 1 {
        k += if target >= k as f64 || k == 0 { 1 } else { -1 };
    }
    k
}

/// E[(p_n(x,y) − p_{n−1}(x′,y))²·1{x, x′, y ∈ ω}] with x the root, x′ = x + e₁
/// and y = x + k·e₁, k ≈ κ√n. Environments where x′ or y is absent count as 0.
pub fn annealed_gradient_estimate(
    spec: &ModelSpec,
    ns: &[usize],
    kappas: &[f64],
    replicas: usize,
    master_seed: u64,
) -> Result<AnnealedGradient, HeatKernelError> {
    let mut ns = ns.to_vec();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() < 2 || ns[0] < 2 {
        return Err(HeatKernelError::InsufficientRange { need: 2, got: ns.len() });
    }
    let n_max = *ns.last().unwrap();
    let per_env = map_replicas(spec, master_seed, replicas, |env| {
        check_horizon(env, n_max)?;
        Ok(gradient_samples(env, &ns, kappas))
    })?;
    if per_env.iter().any(|(s, _)| s.is_none()) && !per_env.iter().any(|(s, _)| s.as_ref().is_some_and(|v| v.0)) {
        // never even the root had coordinates
        return Err(HeatKernelError::NoCoordinates);
    }
    let missing = per_env.iter().filter(|(s, _)| s.as_ref().is_none_or(|v| !v.0)).count();
    let mut rows = Vec::new();
    for (ki, &kappa) in kappas.iter().enumerate() {
        for (ni, &n) in ns.iter().enumerate() {
            let vals: Vec<f64> =
                per_env.iter().map(|(s, _)| s.as_ref().map_or(0.0, |v| v.1[ki * ns.len() + ni])).collect();
            rows.push(GradientRow { n, kappa, displacement: parity_displacement(kappa, n), estimate: mean(&vals) });
        }
    }
    let dim = spec_dim(spec);
    let fits = kappas
        .iter()
        .map(|&kappa| {
            let pts: Vec<&GradientRow> = rows.iter().filter(|r| r.kappa == kappa && r.estimate.mean > 0.0).collect();
            if pts.len() < 2 {
                return KappaFit { kappa, exponent: f64::NAN, fit: None };
            }
            let xs: Vec<f64> = pts.iter().map(|r| (r.n as f64).ln()).collect();
            let ys: Vec<f64> = pts.iter().map(|r| r.estimate.mean.ln()).collect();
            let fit = fit_line(&xs, &ys);
            KappaFit { kappa, exponent: fit.slope, fit: Some(fit) }
        })
        .collect();
    let positive: Vec<&GradientRow> = rows.iter().filter(|r| r.estimate.mean > 0.0).collect();
    let ys: Vec<f64> =
        positive.iter().map(|r| (r.estimate.mean * (r.n as f64).powi(dim as i32 + 1)).ln()).collect();
    let distinct = {
        let mut k: Vec<f64> = positive.iter().map(|r| r.kappa).collect();
        k.dedup();
        k.len()
    };
    let (c3, c4) = if distinct >= 2 {
        let design: Vec<Vec<f64>> =
            positive.iter().map(|r| vec![1.0, (r.displacement * r.displacement) as f64 / r.n as f64]).collect();
        let (beta, _) = least_squares(&design, &ys);
        (beta[0].exp(), -beta[1])
    } else if !ys.is_empty() {
        ((ys.iter().sum::<f64>() / ys.len() as f64).exp(), f64::NAN)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(AnnealedGradient { dim, rows, fits, c3, c4, missing })
}

/// Per environment: (indicator for x ∼ x′, squared gradients indexed by
/// κ-major then n). None without coordinates.
fn gradient_samples(env: &RootedEnvironment, ns: &[usize], kappas: &[f64]) -> Option<(bool, Vec<f64>)> {
    let x = env.root();
    let c = env.coords(x)?.to_vec();
    let shifted = |k: i64| {
        let mut t = c.clone();
        t[0] += k;
        env.vertex_at(&t)
    };
    let mut out = vec![0.0; kappas.len() * ns.len()];
    let Some(xp) = shifted(1).filter(|&xp| env.transition(x, xp) > 0.0) else {
        return Some((false, out));
    };
    let n_max = *ns.last().unwrap();
    let mut a = Walker::new(env, x);
    let mut b = Walker::new(env, xp);
    // b runs one step behind a
    for t in 1..=n_max {
        a.step();
        if t >= 2 {
            b.step();
        }
        if let Ok(ni) = ns.binary_search(&t) {
            for (ki, &kappa) in kappas.iter().enumerate() {
                if let Some(y) = shifted(parity_displacement(kappa, t)) {
                    out[ki * ns.len() + ni] = (a.mass(y) - b.mass(y)).powi(2);
                }
            }
        }
    }
    Some((true, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{gen_lattice, gen_percolation, gen_random_conductance};

    fn z1() -> RootedEnvironment {
        gen_lattice(1, 40, false).unwrap()
    }

    #[test]
    fn binomial_gradients_on_z() {
        let env = z1();
        let at = |c: i64| env.vertex_at(&[c]).unwrap();
        assert_eq!(gradient_squared(&env, at(0), at(1), at(0), 4).unwrap(), 0.0);
        let g = gradient_squared(&env, at(0), at(1), at(2), 4).unwrap();
        assert!((g - 1.0 / 64.0).abs() < 1e-15);
        assert!(matches!(gradient_squared(&env, at(0), at(2), at(0), 4), Err(HeatKernelError::NotAdjacent { .. })));
        assert!(matches!(gradient_squared(&env, at(0), at(1), at(0), 3), Err(HeatKernelError::BadTime(3))));
    }

    #[test]
    fn lemma_on_z_against_direct_evaluation() {
        let env = z1();
        let at = |c: i64| env.vertex_at(&[c]).unwrap();
        let r = check_gradient_lemma(&env, at(0), at(1), at(0), 4).unwrap();
        // p_4(0,0) = 6/16 and p_3(1,0) = 3/8 cancel
        assert_eq!(r.slack.lhs, 0.0);
        // (1,4,6,4,1)/16 on -4..4 against (2,6,6,2)/16 on -2..4:
        // Δ² = 1/16 + 1/24 + 0 + 1/40 + 1/48
        assert!((r.delta_sq - 0.15).abs() < 1e-15);
        assert_eq!(r.global_max, 6.0 / 16.0);
        assert_eq!(r.far_max, 6.0 / 16.0);
        assert_eq!(r.d_max, 2.0);
        assert!((r.slack.rhs - 4.0 * 2.0 * 3.0 * 0.15 * 0.375 * 0.375).abs() < 1e-12);
    }

    #[test]
    fn deterministic_cycle_has_zero_gradient() {
        use crate::environment::{EnvMeta, EnvironmentBuilder};
        let mut b = EnvironmentBuilder::general(EnvMeta::new("custom", 1, 0, 0), 6);
        for i in 0..6u32 {
            b.arc(i, (i + 1) % 6, 1.0);
        }
        let env = b.build().unwrap();
        // x′ = x + 1 is one step ahead, so p_{2n}(x,·) = p_{2n−1}(x′,·)
        for y in 0..6 {
            assert_eq!(gradient_squared(&env, 0, 1, y, 4).unwrap(), 0.0);
        }
    }

    /// Brute-force maxima from dense transition powers.
    fn dense_maxima(env: &RootedEnvironment, x: VertexId, n: usize) -> (f64, Vec<f64>) {
        let region = ball(env, x, 2 * n);
        let m = env.len();
        let mut pm = vec![vec![0.0; m]; m];
        for (a, row) in pm.iter_mut().enumerate() {
            row[a] = 1.0;
        }
        for _ in 0..n {
            pm = pm
                .iter()
                .map(|row| {
                    let mut next = vec![0.0; m];
                    for (v, &p) in row.iter().enumerate() {
                        for (w, q) in env.arcs(v as VertexId) {
                            next[w as usize] += p * q;
                        }
                    }
                    next
                })
                .collect();
        }
        let mut far = vec![0.0f64; n + 1];
        let mut global = 0.0f64;
        for &a in &region.members {
            let dist = crate::environment::distances_from(env, a);
            for &b in &region.members {
                let p = pm[a as usize][b as usize];
                global = global.max(p);
                let d = dist[b as usize] as usize;
                for f in far.iter_mut().take(d.min(n) + 1) {
                    *f = f.max(p);
                }
            }
        }
        (global, far)
    }

    #[test]
    fn maxima_match_dense_powers() {
        let env = gen_random_conductance(2, 12, 0.5, 11).unwrap();
        for n in [1, 2, 3] {
            let fast = KernelMaxima::compute(&env, env.root(), n).unwrap();
            let (global, far) = dense_maxima(&env, env.root(), n);
            assert!((fast.global - global).abs() < 1e-15);
            for (k, f) in far.iter().enumerate() {
                assert!((fast.far(k) - f).abs() < 1e-15, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn lemma_holds_on_percolation_triples() {
        let env = gen_percolation(2, 16, 0.7, 5).unwrap();
        let d_max = gradient_constant(&env);
        let mut rng = stream(3, "triples", 0);
        use rand::Rng;
        for _ in 0..4 {
            let n = rng.random_range(1..=6usize);
            let region = ball(&env, env.root(), 6);
            let x = region.members[rng.random_range(0..region.len())];
            let maxima = KernelMaxima::compute(&env, x, n).unwrap();
            let around = ball(&env, x, 2 * n + 2);
            for _ in 0..10 {
                let nb: Vec<VertexId> = env.neighbors(x).to_vec();
                let xp = nb[rng.random_range(0..nb.len())];
                let y = around.members[rng.random_range(0..around.len())];
                let r = check_gradient_lemma_with(&env, &maxima, d_max, xp, y).unwrap();
                assert!(r.slack.slack >= -GRADIENT_LEMMA_TOL);
            }
        }
    }

    #[test]
    fn gradient_is_bounded_by_kernel_squares() {
        let env = gen_lattice(2, 12, false).unwrap();
        let at = |a: i64, b: i64| env.vertex_at(&[a, b]).unwrap();
        let g = gradient_squared(&env, at(0, 0), at(1, 0), at(2, 0), 6).unwrap();
        let p = crate::walk::heat_kernel(&env, at(0, 0), at(2, 0), 6).unwrap();
        let q = crate::walk::heat_kernel(&env, at(1, 0), at(2, 0), 5).unwrap();
        assert!(g <= 2.0 * (p * p + q * q));
        assert!(g > 0.0);
    }

    #[test]
    fn grid_and_parity() {
        assert_eq!(log_grid(64, 1024, 5), vec![64, 128, 256, 512, 1024]);
        assert_eq!(parity_displacement(1.0, 64), 8);
        assert_eq!(parity_displacement(1.0, 65), 9);
        assert_eq!(parity_displacement(0.0, 7), 1);
        assert_eq!(parity_displacement(0.0, 8), 0);
    }

    #[test]
    fn one_dimensional_diagonal_slope() {
        let spec = ModelSpec::Lattice { d: 1, l: 200, torus: false };
        let r = fit_gaussian(&spec, &log_grid(16, 256, 5), 1, 1, 0).unwrap();
        assert!((r.diagonal_fit.slope + 0.5).abs() < 0.01, "{}", r.diagonal_fit.slope);
        // q_n(0,k) ≈ 2/√(2πn)·exp(−k²/2n)
        assert!((r.profile_rate - 0.5).abs() < 0.05, "{}", r.profile_rate);
        assert!(r.profile_r2 > 0.95);
        assert_eq!(r.flagged(), 0);
        assert!(fit_gaussian(&spec, &[16, 32, 64], 1, 1, 0).is_err());
    }

    #[test]
    fn annealed_gradient_on_z() {
        // on Z the exact gradient along κ√n decays like n^{-2}
        let spec = ModelSpec::Lattice { d: 1, l: 200, torus: false };
        let r = annealed_gradient_estimate(&spec, &log_grid(64, 1024, 5), &[0.0, 1.0], 1, 0).unwrap();
        assert_eq!(r.missing, 0);
        let e = r.exponent(1.0).unwrap();
        assert!((e + 2.0).abs() < 0.1, "{e}");
        assert!(r.to_csv().lines().count() == 11);
    }
}
