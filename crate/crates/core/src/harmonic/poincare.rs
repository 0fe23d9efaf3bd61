use rand::Rng;

use super::solver::cg_operator;
use super::HarmonicError;
use crate::environment::{ball, RootedEnvironment, UnionFind, VertexId};
use crate::rng::stream;

#[derive(Clone, Debug, PartialEq)]
pub struct PoincareEstimate {
    /// Largest Rayleigh quotient divided by n²; infinite when E(B_x(2n)) is
    /// disconnected.
    pub constant: f64,
    /// Undivided generalized eigenvalue.
    pub eigenvalue: f64,
    pub iterations: usize,
    /// Relative change of the Rayleigh quotient at the last iteration.
    pub last_change: f64,
    /// Maximizing function, aligned with the members of B_x(2n).
    pub eigenvector: Vec<f64>,
    pub members: Vec<VertexId>,
}

const REL_TOL: f64 = 1e-11;
const MAX_POWER_ITERATIONS: usize = 5000;

/// The Poincaré pencil on B_x(2n): numerator Σ_{B_x(n)} (f − f̄)² ν with the
/// ν-mean f̄ on B_x(n), denominator Σ_{E(B_x(2n))} (f(y) − f(z))² ν(y,z).
pub(crate) struct Pencil {
    pub members: Vec<VertexId>,
    /// ν(y) on B_x(n), 0 on the annulus.
    pub inner_weight: Vec<f64>,
    pub inner_mass: f64,
    pub edges: Vec<(u32, u32, f64)>,
    pub degree: Vec<f64>,
}

impl Pencil {
    pub fn new(env: &RootedEnvironment, x: VertexId, n: usize) -> Result<Self, HarmonicError> {
        if !env.is_reversible() {
            return Err(HarmonicError::NotReversible);
        }
        let outer = ball(env, x, 2 * n);
        let inner_weight: Vec<f64> = outer
            .members
            .iter()
            .zip(&outer.distances)
            .map(|(&v, &d)| if d as usize <= n { env.vertex_weight(v) } else { 0.0 })
            .collect();
        let mut edges = Vec::new();
        let mut degree = vec![0.0; outer.len()];
        for (i, &y) in outer.members.iter().enumerate() {
            for (z, w) in env.weighted_arcs(y) {
                if y < z && w > 0.0 {
                    if let Some(j) = outer.local_index(z) {
                        edges.push((i as u32, j as u32, w));
                        degree[i] += w;
                        degree[j] += w;
                    }
                }
            }
        }
        let inner_mass = inner_weight.iter().sum();
        Ok(Pencil { members: outer.members, inner_weight, inner_mass, edges, degree })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn connected(&self) -> bool {
        let mut uf = UnionFind::new(self.len());
        for &(a, b, _) in &self.edges {
            uf.union(a, b);
        }
        uf.component_size(0) == self.len()
    }

    fn mean(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.inner_weight).map(|(f, w)| f * w).sum::<f64>() / self.inner_mass
    }

    /// A f.
    pub fn mass_apply(&self, f: &[f64], out: &mut [f64]) {
        let m = self.mean(f);
        for i in 0..f.len() {
            out[i] = self.inner_weight[i] * (f[i] - m);
        }
    }

    /// B f (edge Laplacian).
    pub fn energy_apply(&self, f: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for &(a, b, w) in &self.edges {
            let d = w * (f[a as usize] - f[b as usize]);
            out[a as usize] += d;
            out[b as usize] -= d;
        }
    }

    pub fn mass(&self, f: &[f64]) -> f64 {
        let m = self.mean(f);
        f.iter().zip(&self.inner_weight).map(|(f, w)| w * (f - m) * (f - m)).sum()
    }

    pub fn energy(&self, f: &[f64]) -> f64 {
        self.edges.iter().map(|&(a, b, w)| w * (f[a as usize] - f[b as usize]).powi(2)).sum()
    }
}

fn center(f: &mut [f64]) {
    let m = f.iter().sum::<f64>() / f.len() as f64;
    f.iter_mut().for_each(|v| *v -= m);
}

/// Smallest C with Σ_{B_x(n)} (f − f̄)²ν ≤ C n² Σ_{E(B_x(2n))} |∇f|²ν for all
/// f, by power iteration on B⁺A. The returned value is a Rayleigh quotient,
/// hence never above the true constant.
pub fn poincare_constant(env: &RootedEnvironment, x: VertexId, n: usize) -> Result<PoincareEstimate, HarmonicError> {
    assert!(n >= 1, "radius must be positive");
    let pencil = Pencil::new(env, x, n)?;
    let members = pencil.members.clone();
    let len = pencil.len();
    if !pencil.connected() {
        return Ok(PoincareEstimate {
            constant: f64::INFINITY,
            eigenvalue: f64::INFINITY,
            iterations: 0,
            last_change: 0.0,
            eigenvector: vec![0.0; len],
            members,
        });
    }
    let precond: Vec<f64> = pencil.degree.iter().map(|&d| if d > 0.0 { d } else { 1.0 }).collect();
    let mut rng = stream(x as u64, "poincare", n as u64);
    let mut f: Vec<f64> = (0..len).map(|_| rng.random::<f64>() - 0.5).collect();
    center(&mut f);
    let mut af = vec![0.0; len];
    let mut u = vec![0.0; len];
    let mut lambda = 0.0;
    let mut change = f64::INFINITY;
    let mut iterations = 0;
    let cg_cap = 20 * len + 100;
    while iterations < MAX_POWER_ITERATIONS {
        iterations += 1;
        pencil.mass_apply(&f, &mut af);
        cg_operator(|v, out| pencil.energy_apply(v, out), &precond, &af, &mut u, 1e-13, cg_cap);
        center(&mut u);
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        f.iter_mut().zip(&u).for_each(|(f, u)| *f = u / norm);
        u.iter_mut().for_each(|v| *v /= norm);
        let next = pencil.mass(&f) / pencil.energy(&f);
        change = ((next - lambda) / next).abs();
        lambda = next;
        if change < REL_TOL {
            break;
        }
    }
    let nn = (n * n) as f64;
    Ok(PoincareEstimate { constant: lambda / nn, eigenvalue: lambda, iterations, last_change: change, eigenvector: f, members })
}
