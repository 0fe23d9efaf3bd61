//! Harmonic fields on balls and the functional inequalities built on them.

mod corrector;
mod cover;
mod gram;
mod poincare;
pub mod solver;

use std::collections::VecDeque;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::check::{Slack, Violation};
use crate::environment::{ball, BallView, RootedEnvironment, VertexId};
use solver::{InteriorSystem, Method};

pub use corrector::{estimate_corrector, CorrectorEstimate};
pub use cover::{check_lemma_b, proper_cover, zero_mean_subspace, BallCover, LemmaB, ZeroMeanSubspace, LEMMA_B_TOL};
pub use gram::{default_eps, gram_dimension_probe, GramProbeReport, Verdict};
pub use poincare::{poincare_constant, PoincareEstimate};

/// Default relative tolerance on the mean-value residual.
pub const DEFAULT_TOL: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 1_000_000;
pub const REVERSE_POINCARE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarmonicError {
    #[error("ball around {center} of radius {radius} has no boundary")]
    EmptyBoundary { center: VertexId, radius: usize },
    #[error("interior vertex {0} cannot reach the boundary")]
    Unanchored(VertexId),
    #[error("solver stopped after {iterations} iterations with residual {residual:e}")]
    NotConverged { residual: f64, iterations: usize },
    #[error("operation needs a weighted (reversible) environment")]
    NotReversible,
    #[error("field is not harmonic on the required region around {center} (radius {radius})")]
    OutsideDomain { center: VertexId, radius: usize },
    #[error("fields are defined on different balls")]
    MismatchedDomains,
    #[error(transparent)]
    Violation(#[from] Violation),
}

/// Real values on a ball, with the harmonicity residual certified on the
/// ball's inner vertices.
#[derive(Clone, Debug)]
pub struct HarmonicField {
    ball: BallView,
    values: Vec<f64>,
    residual: f64,
    iterations: usize,
    method: Option<Method>,
}

impl HarmonicField {
    /// Wraps given values (aligned with `ball.members`) and measures their
    /// residual.
    pub fn from_values(env: &RootedEnvironment, ball: BallView, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), ball.len());
        let residual = mean_value_residual(env, &ball, &values);
        HarmonicField { ball, values, residual, iterations: 0, method: None }
    }

    pub fn from_fn(env: &RootedEnvironment, ball: BallView, f: impl Fn(VertexId) -> f64) -> Self {
        let values = ball.members.iter().map(|&v| f(v)).collect();
        Self::from_values(env, ball, values)
    }

    pub fn ball(&self) -> &BallView {
        &self.ball
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Vertices where the mean-value property is enforced.
    pub fn interior(&self) -> &[VertexId] {
        &self.ball.inner
    }

    /// max over the interior of |h(x) − Σ_y P(x,y)h(y)|.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn method(&self) -> Option<Method> {
        self.method
    }

    pub fn value(&self, v: VertexId) -> Option<f64> {
        self.ball.local_index(v).map(|i| self.values[i])
    }

    /// Value at `v`, 0 outside the domain.
    pub fn get(&self, v: VertexId) -> f64 {
        self.value(v).unwrap_or(0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// True when the mean-value property holds at every vertex of B_x(r).
    pub fn is_harmonic_on(&self, x: VertexId, r: usize) -> bool {
        let Some(dx) = self.ball.distance(x) else { return false };
        // B_x(r) ⊆ B_c(d(c,x) + r) for the reversible metric
        (dx as usize) + r < self.ball.radius
    }

    /// Σ c_i f_i over fields sharing one ball.
    pub fn combine(env: &RootedEnvironment, fields: &[&HarmonicField], coeffs: &[f64]) -> Result<Self, HarmonicError> {
        assert_eq!(fields.len(), coeffs.len());
        let first = fields.first().expect("at least one field");
        if fields.iter().any(|f| f.ball.center != first.ball.center || f.ball.radius != first.ball.radius) {
            return Err(HarmonicError::MismatchedDomains);
        }
        let mut values = vec![0.0; first.values.len()];
        for (f, c) in fields.iter().zip(coeffs) {
            for (acc, v) in values.iter_mut().zip(&f.values) {
                *acc += c * v;
            }
        }
        Ok(Self::from_values(env, first.ball.clone(), values))
    }

    /// `field center=.. radius=.. residual=.. boundary=<hash>` then `h <id> <value>`.
    pub fn dump(&self) -> String {
        let mut hasher = Sha256::new();
        for &b in &self.ball.boundary {
            hasher.update(b.to_le_bytes());
            hasher.update(self.get(b).to_le_bytes());
        }
        let digest = hasher.finalize();
        let hash: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        let mut out = format!(
            "field center={} radius={} residual={:e} boundary={}\n",
            self.ball.center, self.ball.radius, self.residual, hash
        );
        let mut order: Vec<usize> = (0..self.values.len()).collect();
        order.sort_by_key(|&i| self.ball.members[i]);
        for i in order {
            writeln!(out, "h {} {:.16e}", self.ball.members[i], self.values[i]).unwrap();
        }
        out
    }
}

fn mean_value_residual(env: &RootedEnvironment, ball: &BallView, values: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for &x in &ball.inner {
        let hx = values[ball.local_index(x).unwrap()];
        let mut avg = 0.0;
        for (y, p) in env.arcs(x) {
            avg += p * values[ball.local_index(y).expect("inner vertex with neighbour outside ball")];
        }
        worst = worst.max((hx - avg).abs());
    }
    worst
}

fn check_anchored(env: &RootedEnvironment, ball: &BallView) -> Result<(), HarmonicError> {
    // reverse search from the boundary along positive arcs inside the ball
    let mut preds: Vec<Vec<u32>> = vec![Vec::new(); ball.len()];
    for (i, &x) in ball.members.iter().enumerate() {
        if ball.distance(x).unwrap() as usize >= ball.radius {
            continue;
        }
        for (y, p) in env.arcs(x) {
            if p > 0.0 {
                preds[ball.local_index(y).unwrap()].push(i as u32);
            }
        }
    }
    let mut seen = vec![false; ball.len()];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for &b in &ball.boundary {
        let i = ball.local_index(b).unwrap();
        seen[i] = true;
        queue.push_back(i);
    }
    while let Some(i) = queue.pop_front() {
        for &j in &preds[i] {
            if !seen[j as usize] {
                seen[j as usize] = true;
                queue.push_back(j as usize);
            }
        }
    }
    match seen.iter().position(|s| !s) {
        Some(i) => Err(HarmonicError::Unanchored(ball.members[i])),
        None => Ok(()),
    }
}

/// Solves h = g on the boundary of `ball`, h(x) = Σ_y P(x,y)h(y) on its inner
/// vertices. `tol` is relative to max|g|.
pub fn dirichlet_solve(
    env: &RootedEnvironment,
    ball: &BallView,
    g: impl Fn(VertexId) -> f64,
    tol: f64,
) -> Result<HarmonicField, HarmonicError> {
    if ball.boundary.is_empty() {
        return Err(HarmonicError::EmptyBoundary { center: ball.center, radius: ball.radius });
    }
    check_anchored(env, ball)?;
    let mut values = vec![0.0; ball.len()];
    let mut scale = 0.0f64;
    for &b in &ball.boundary {
        let v = g(b);
        values[ball.local_index(b).unwrap()] = v;
        scale = scale.max(v.abs());
    }
    if scale == 0.0 || ball.inner.is_empty() {
        return Ok(HarmonicField::from_values(env, ball.clone(), values));
    }
    // interior numbering follows ball.inner
    let mut pos = vec![u32::MAX; ball.len()];
    for (k, &x) in ball.inner.iter().enumerate() {
        pos[ball.local_index(x).unwrap()] = k as u32;
    }
    let reversible = env.is_reversible();
    let m = ball.inner.len();
    let mut sys = InteriorSystem {
        offsets: Vec::with_capacity(m + 1),
        cols: Vec::new(),
        coupling: Vec::new(),
        diag: vec![0.0; m],
        rhs: vec![0.0; m],
        scale: vec![1.0; m],
        symmetric: reversible,
    };
    sys.offsets.push(0);
    for (k, &x) in ball.inner.iter().enumerate() {
        let row: Vec<(VertexId, f64)> =
            if reversible { env.weighted_arcs(x).collect() } else { env.arcs(x).collect() };
        let total: f64 = if reversible { env.vertex_weight(x) } else { 1.0 };
        let mut diag = total;
        for (y, c) in row {
            if y == x {
                diag -= c;
                continue;
            }
            let local = ball.local_index(y).unwrap();
            match pos[local] {
                u32::MAX => sys.rhs[k] += c * values[local],
                j => {
                    sys.cols.push(j);
                    sys.coupling.push(c);
                }
            }
        }
        sys.diag[k] = diag;
        sys.scale[k] = total;
        sys.offsets.push(sys.cols.len());
    }
    let boundary_mean = ball.boundary.iter().map(|&b| values[ball.local_index(b).unwrap()]).sum::<f64>()
        / ball.boundary.len() as f64;
    let target = tol * scale;
    let outcome = sys.solve(vec![boundary_mean; m], target, MAX_ITERATIONS);
    if !outcome.converged {
        return Err(HarmonicError::NotConverged { residual: outcome.residual, iterations: outcome.iterations });
    }
    for (k, &x) in ball.inner.iter().enumerate() {
        values[ball.local_index(x).unwrap()] = outcome.solution[k];
    }
    let mut field = HarmonicField::from_values(env, ball.clone(), values);
    field.iterations = outcome.iterations;
    field.method = Some(outcome.method);
    if field.residual > target {
        return Err(HarmonicError::NotConverged { residual: field.residual, iterations: outcome.iterations });
    }
    Ok(field)
}

/// Σ_{E(B_x(n))} (h(z) − h(y))² ν(y,z) ≤ (4/n²) Σ_{B_x(2n)} h(y)² ν(y), for h
/// harmonic on B_x(2n − 1).
pub fn check_reverse_poincare(
    env: &RootedEnvironment,
    h: &HarmonicField,
    x: VertexId,
    n: usize,
) -> Result<Slack, HarmonicError> {
    assert!(n >= 1, "radius must be positive");
    if !env.is_reversible() {
        return Err(HarmonicError::NotReversible);
    }
    if !h.is_harmonic_on(x, 2 * n - 1) {
        return Err(HarmonicError::OutsideDomain { center: x, radius: 2 * n - 1 });
    }
    let outer = ball(env, x, 2 * n);
    let mut lhs = 0.0;
    let mut mass = 0.0;
    for (&y, &dy) in outer.members.iter().zip(&outer.distances) {
        let hy = h.value(y).expect("ball inside field domain");
        mass += hy * hy * env.vertex_weight(y);
        if dy as usize > n {
            continue;
        }
        for (z, w) in env.weighted_arcs(y) {
            if y < z && outer.distance(z).is_some_and(|dz| dz as usize <= n) {
                let d = h.get(z) - hy;
                lhs += d * d * w;
            }
        }
    }
    let rhs = 4.0 / (n * n) as f64 * mass;
    Ok(Slack::new(lhs, rhs).require_ratio("reverse Poincaré", REVERSE_POINCARE_TOL)?)
}

/// ν(B_x(r)).
pub fn ball_mass(env: &RootedEnvironment, x: VertexId, r: usize) -> f64 {
    ball(env, x, r).members.iter().map(|&v| env.vertex_weight(v)).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct VolumeDoubling {
    pub ratios: Vec<f64>,
    pub max: f64,
}

/// ν(B_x(2n)) / ν(B_x(n)) for each center.
pub fn volume_doubling(env: &RootedEnvironment, centers: &[VertexId], n: usize) -> VolumeDoubling {
    let ratios: Vec<f64> = centers.iter().map(|&c| ball_mass(env, c, 2 * n) / ball_mass(env, c, n)).collect();
    let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    VolumeDoubling { ratios, max }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{gen_lattice, gen_percolation, gen_balanced, EnvMeta, EnvironmentBuilder};

    #[test]
    fn constant_boundary_gives_constant() {
        let env = gen_percolation(2, 16, 0.7, 2).unwrap();
        let b = ball(&env, env.root(), 10);
        let h = dirichlet_solve(&env, &b, |_| 2.5, DEFAULT_TOL).unwrap();
        assert!(h.values().iter().all(|v| (v - 2.5).abs() < 1e-9));
    }

    #[test]
    fn linear_on_segment() {
        let env = gen_lattice(1, 20, false).unwrap();
        let x = |v: VertexId| env.coords(v).unwrap()[0] as f64;
        let b = ball(&env, env.root(), 15);
        let h = dirichlet_solve(&env, &b, x, 1e-12).unwrap();
        for &v in &b.members {
            assert!((h.get(v) - x(v)).abs() < 1e-9);
        }
    }

    #[test]
    fn coordinates_on_square_box() {
        let env = gen_lattice(2, 12, false).unwrap();
        let b = ball(&env, env.root(), 10);
        let g = |v: VertexId| {
            let c = env.coords(v).unwrap();
            0.3 * c[0] as f64 - 1.7 * c[1] as f64
        };
        let h = dirichlet_solve(&env, &b, g, 1e-12).unwrap();
        for &v in &b.members {
            assert!((h.get(v) - g(v)).abs() < 1e-9);
        }
    }

    #[test]
    fn non_reversible_solve_uses_bicgstab() {
        let env = gen_balanced(2, 10, 3).unwrap();
        let b = ball(&env, env.root(), 8);
        let g = |v: VertexId| env.coords(v).unwrap()[0] as f64;
        let h = dirichlet_solve(&env, &b, g, 1e-10).unwrap();
        assert!(h.residual() <= 1e-10 * 8.0);
        // coordinates are martingales for balanced walks
        for &v in &b.members {
            assert!((h.get(v) - g(v)).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_boundary_is_an_error() {
        let env = gen_lattice(1, 3, false).unwrap();
        let b = ball(&env, env.root(), 10);
        assert!(matches!(dirichlet_solve(&env, &b, |_| 1.0, 1e-10), Err(HarmonicError::EmptyBoundary { .. })));
    }

    #[test]
    fn unanchored_interior_is_an_error() {
        // {1, 2} is a trap; the boundary {5} is only reached through 3 and 4
        let mut b = EnvironmentBuilder::general(EnvMeta::new("custom", 0, 0, 0), 6);
        b.arc(0, 1, 0.5).arc(0, 3, 0.5).arc(1, 2, 1.0).arc(2, 1, 1.0);
        b.arc(3, 4, 1.0).arc(4, 5, 1.0).arc(5, 0, 1.0);
        let env = b.build().unwrap();
        let bv = ball(&env, 0, 3);
        assert_eq!(bv.boundary, vec![5]);
        assert!(matches!(dirichlet_solve(&env, &bv, |_| 1.0, 1e-10), Err(HarmonicError::Unanchored(_))));
    }

    #[test]
    fn reverse_poincare_linear_on_z() {
        let env = gen_lattice(1, 40, false).unwrap();
        let x = |v: VertexId| env.coords(v).unwrap()[0] as f64;
        for n in [1usize, 2, 5, 10] {
            let field = HarmonicField::from_fn(&env, ball(&env, env.root(), 2 * n), x);
            let s = check_reverse_poincare(&env, &field, env.root(), n).unwrap();
            assert_eq!(s.lhs, 2.0 * n as f64);
            let nf = n as f64;
            // (4/n²)·2·Σ_{k≤2n} k²·2
            let rhs = 16.0 / (nf * nf) * (2.0 * nf) * (2.0 * nf + 1.0) * (4.0 * nf + 1.0) / 6.0;
            assert!((s.rhs - rhs).abs() < 1e-9 * rhs);
        }
        // the ratio tends to 3/64
        let field = HarmonicField::from_fn(&env, ball(&env, env.root(), 20), x);
        let s = check_reverse_poincare(&env, &field, env.root(), 10).unwrap();
        assert!(s.ratio() < 3.0 / 64.0 && s.ratio() > 0.9 * 3.0 / 64.0);
    }

    #[test]
    fn volume_doubling_on_z2() {
        let env = gen_lattice(2, 80, false).unwrap();
        let vd = volume_doubling(&env, &[env.root()], 32);
        assert!((vd.max - 4.0).abs() < 0.1);
        assert!(vd.max <= 4.0 * 1.1);
    }
}
