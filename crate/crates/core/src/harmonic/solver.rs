//! Sparse solves for the interior Dirichlet system.
//!
//! Reversible chains give the symmetric system ν(x)u(x) − Σ_y ν(x,y)u(y) = b
//! (preconditioned CG); general chains give (I − P)u = b (BiCGSTAB). Both are
//! preceded by a short run of damped fixed-point sweeps u ← Pu.

/// Rows restricted to the interior; boundary couplings are folded into `rhs`.
#[derive(Clone, Debug)]
pub struct InteriorSystem {
    pub offsets: Vec<usize>,
    pub cols: Vec<u32>,
    /// Off-diagonal entries (already negated: row x reads diag·u_x − Σ c·u_y).
    pub coupling: Vec<f64>,
    pub diag: Vec<f64>,
    pub rhs: Vec<f64>,
    /// Divisor turning a row residual into a mean-value residual (ν(x) or 1).
    pub scale: Vec<f64>,
    pub symmetric: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    FixedPoint,
    ConjugateGradient,
    BiCgStab,
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub solution: Vec<f64>,
    /// max_x |row residual| / scale(x), recomputed from the solution.
    pub residual: f64,
    pub iterations: usize,
    pub method: Method,
    pub converged: bool,
}

pub const FIXED_POINT_SWEEPS: usize = 64;
const DAMPING: f64 = 0.9;

impl InteriorSystem {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// y = A u.
    fn apply(&self, u: &[f64], out: &mut [f64]) {
        for i in 0..self.len() {
            let mut s = self.diag[i] * u[i];
            for k in self.offsets[i]..self.offsets[i + 1] {
                s -= self.coupling[k] * u[self.cols[k] as usize];
            }
            out[i] = s;
        }
    }

    fn residual_vec(&self, u: &[f64], out: &mut [f64]) {
        self.apply(u, out);
        for i in 0..self.len() {
            out[i] = self.rhs[i] - out[i];
        }
    }

    fn mean_value_residual(&self, r: &[f64]) -> f64 {
        r.iter().zip(&self.scale).map(|(r, s)| (r / s).abs()).fold(0.0, f64::max)
    }

    pub fn true_residual(&self, u: &[f64]) -> f64 {
        let mut r = vec![0.0; self.len()];
        self.residual_vec(u, &mut r);
        self.mean_value_residual(&r)
    }

    /// Damped Jacobi sweeps; returns (iterations, converged).
    fn fixed_point(&self, u: &mut [f64], target: f64, sweeps: usize) -> (usize, bool) {
        let mut next = vec![0.0; self.len()];
        let mut r = vec![0.0; self.len()];
        for it in 0..sweeps {
            self.residual_vec(u, &mut r);
            if self.mean_value_residual(&r) <= target {
                return (it, true);
            }
            for i in 0..self.len() {
                next[i] = u[i] + DAMPING * r[i] / self.diag[i];
            }
            u.copy_from_slice(&next);
        }
        (sweeps, self.true_residual(u) <= target)
    }

    fn cg(&self, u: &mut [f64], target: f64, max_iter: usize) -> usize {
        let n = self.len();
        let mut r = vec![0.0; n];
        self.residual_vec(u, &mut r);
        let mut z: Vec<f64> = r.iter().zip(&self.diag).map(|(r, d)| r / d).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let mut rz: f64 = dot(&r, &z);
        for it in 0..max_iter {
            if self.mean_value_residual(&r) <= target || rz == 0.0 {
                return it;
            }
            self.apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                return it;
            }
            let alpha = rz / pap;
            for i in 0..n {
                u[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            for i in 0..n {
                z[i] = r[i] / self.diag[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        max_iter
    }

    fn bicgstab(&self, u: &mut [f64], target: f64, max_iter: usize) -> usize {
        let n = self.len();
        let mut r = vec![0.0; n];
        self.residual_vec(u, &mut r);
        let r0 = r.clone();
        let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
        let mut v = vec![0.0; n];
        let mut p = vec![0.0; n];
        let mut ph = vec![0.0; n];
        let mut s = vec![0.0; n];
        let mut sh = vec![0.0; n];
        let mut t = vec![0.0; n];
        for it in 0..max_iter {
            if self.mean_value_residual(&r) <= target {
                return it;
            }
            let rho_new = dot(&r0, &r);
            if rho_new == 0.0 || omega == 0.0 {
                return it;
            }
            let beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
                ph[i] = p[i] / self.diag[i];
            }
            self.apply(&ph, &mut v);
            let r0v = dot(&r0, &v);
            if r0v == 0.0 {
                return it;
            }
            alpha = rho / r0v;
            for i in 0..n {
                s[i] = r[i] - alpha * v[i];
            }
            if self.mean_value_residual(&s) <= target {
                for i in 0..n {
                    u[i] += alpha * ph[i];
                }
                r.copy_from_slice(&s);
                return it + 1;
            }
            for i in 0..n {
                sh[i] = s[i] / self.diag[i];
            }
            self.apply(&sh, &mut t);
            let tt = dot(&t, &t);
            omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
            for i in 0..n {
                u[i] += alpha * ph[i] + omega * sh[i];
                r[i] = s[i] - omega * t[i];
            }
        }
        max_iter
    }

    /// Fixed-point sweeps first, then Krylov restarts until the recomputed
    /// residual meets `target` or `max_iter` total iterations are spent.
    pub fn solve(&self, mut u: Vec<f64>, target: f64, max_iter: usize) -> SolveOutcome {
        let sweeps = FIXED_POINT_SWEEPS.min(max_iter);
        let (mut used, ok) = self.fixed_point(&mut u, target, sweeps);
        if ok {
            let residual = self.true_residual(&u);
            return SolveOutcome { solution: u, residual, iterations: used, method: Method::FixedPoint, converged: true };
        }
        let method = if self.symmetric { Method::ConjugateGradient } else { Method::BiCgStab };
        let mut residual = self.true_residual(&u);
        let mut stalled = 0;
        while used < max_iter && residual > target {
            let budget = max_iter - used;
            let spent = match method {
                Method::ConjugateGradient => self.cg(&mut u, target, budget),
                _ => self.bicgstab(&mut u, target, budget),
            };
            used += spent.max(1);
            let fresh = self.true_residual(&u);
            // a restart that makes no progress means rounding has won
            if fresh >= residual * 0.5 {
                stalled += 1;
                if stalled >= 3 {
                    residual = fresh;
                    break;
                }
            }
            residual = fresh;
        }
        SolveOutcome { converged: residual <= target, solution: u, residual, iterations: used, method }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Plain CG for a symmetric positive semidefinite operator given as a closure,
/// used by the Poincaré pencil. Stops on ‖r‖₂ ≤ rel_tol·‖b‖₂.
pub fn cg_operator(
    apply: impl Fn(&[f64], &mut [f64]),
    precond: &[f64],
    b: &[f64],
    u: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
) -> usize {
    let n = b.len();
    let mut r = vec![0.0; n];
    apply(u, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        u.iter_mut().for_each(|v| *v = 0.0);
        return 0;
    }
    let mut z: Vec<f64> = r.iter().zip(precond).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for it in 0..max_iter {
        if dot(&r, &r).sqrt() <= rel_tol * bnorm {
            return it;
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return it;
        }
        let alpha = rz / pap;
        for i in 0..n {
            u[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
            z[i] = r[i] / precond[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    max_iter
}
