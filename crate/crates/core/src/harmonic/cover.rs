use std::collections::VecDeque;

use nalgebra::DMatrix;

use super::{poincare_constant, HarmonicError, HarmonicField};
use crate::check::Slack;
use crate::environment::{ball, RootedEnvironment, VertexId};

/// Balls B_{y_i}(radius) covering B_center(target_radius).
#[derive(Clone, Debug, PartialEq)]
pub struct BallCover {
    pub center: VertexId,
    pub target_radius: usize,
    pub radius: usize,
    pub centers: Vec<VertexId>,
    /// Largest number of balls B_{y_i}(2·radius) sharing a vertex.
    pub overlap: usize,
}

impl BallCover {
    pub fn count(&self) -> usize {
        self.centers.len()
    }
}

/// Marks every vertex within `r` of `from` (bounded BFS) using a scratch
/// distance table that is reset afterwards.
fn bounded_bfs(env: &RootedEnvironment, from: VertexId, r: usize, scratch: &mut [u32], mut visit: impl FnMut(VertexId)) {
    let mut touched = vec![from];
    scratch[from as usize] = 0;
    let mut queue = VecDeque::from([from]);
    while let Some(v) = queue.pop_front() {
        visit(v);
        let dv = scratch[v as usize];
        if dv as usize >= r {
            continue;
        }
        for (w, p) in env.arcs(v) {
            if p > 0.0 && scratch[w as usize] == u32::MAX {
                scratch[w as usize] = dv + 1;
                touched.push(w);
                queue.push_back(w);
            }
        }
    }
    for t in touched {
        scratch[t as usize] = u32::MAX;
    }
}

/// Greedy maximal family of disjoint balls of radius ⌊r/2⌋ centred in
/// B_center(R), scanned in BFS order; the r-balls around the chosen centres
/// cover B_center(R). The overlap of the 2r-balls is counted exactly.
pub fn proper_cover(env: &RootedEnvironment, center: VertexId, big_r: usize, r: usize) -> BallCover {
    assert!(r >= 1, "cover radius must be positive");
    let target = ball(env, center, big_r);
    let half = r / 2;
    let mut scratch = vec![u32::MAX; env.len()];
    let mut blocked = vec![false; env.len()];
    let mut centers = Vec::new();
    for &y in &target.members {
        if blocked[y as usize] {
            continue;
        }
        centers.push(y);
        // disjointness of ⌊r/2⌋-balls means distance > 2⌊r/2⌋
        bounded_bfs(env, y, 2 * half, &mut scratch, |v| blocked[v as usize] = true);
    }
    let mut covered = vec![false; env.len()];
    let mut counts = vec![0u32; env.len()];
    for &c in &centers {
        bounded_bfs(env, c, r, &mut scratch, |v| covered[v as usize] = true);
        bounded_bfs(env, c, 2 * r, &mut scratch, |v| counts[v as usize] += 1);
    }
    assert!(target.members.iter().all(|&v| covered[v as usize]), "greedy family failed to cover");
    let overlap = counts.iter().copied().max().unwrap_or(0) as usize;
    BallCover { center, target_radius: big_r, radius: r, centers, overlap }
}

/// Coefficient vectors spanning the combinations of `fields` with ν-mean 0 on
/// every ball of the cover.
#[derive(Clone, Debug)]
pub struct ZeroMeanSubspace {
    /// Row i holds the ν-means of each field on B_{y_i}(radius).
    pub means: DMatrix<f64>,
    /// Orthonormal coefficient vectors (length = number of fields).
    pub basis: Vec<Vec<f64>>,
}

impl ZeroMeanSubspace {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn fields(&self, env: &RootedEnvironment, fields: &[HarmonicField]) -> Result<Vec<HarmonicField>, HarmonicError> {
        let refs: Vec<&HarmonicField> = fields.iter().collect();
        self.basis.iter().map(|c| HarmonicField::combine(env, &refs, c)).collect()
    }
}

fn nu_mean(env: &RootedEnvironment, f: &HarmonicField, c: VertexId, r: usize) -> Result<f64, HarmonicError> {
    let b = ball(env, c, r);
    let (mut s, mut m) = (0.0, 0.0);
    for &v in &b.members {
        let w = env.vertex_weight(v);
        s += w * f.value(v).ok_or(HarmonicError::OutsideDomain { center: c, radius: r })?;
        m += w;
    }
    Ok(s / m)
}

/// Nullspace of the (balls × fields) matrix of ν-means via a column-pivoted
/// QR factorization of its transpose.
pub fn zero_mean_subspace(
    env: &RootedEnvironment,
    fields: &[HarmonicField],
    cover: &BallCover,
) -> Result<ZeroMeanSubspace, HarmonicError> {
    let d = fields.len();
    let m = cover.count();
    let mut means = DMatrix::zeros(m, d);
    for (i, &c) in cover.centers.iter().enumerate() {
        for (j, f) in fields.iter().enumerate() {
            means[(i, j)] = nu_mean(env, f, c, cover.radius)?;
        }
    }
    // pad with zero columns so that Q is square
    let cols = m.max(d);
    let mut t = DMatrix::zeros(d, cols);
    t.view_mut((0, 0), (d, m)).copy_from(&means.transpose());
    let qr = t.col_piv_qr();
    let r = qr.r();
    let diag_max = (0..d.min(cols)).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let rank = (0..d.min(cols)).filter(|&i| r[(i, i)].abs() > 1e-12 * diag_max.max(f64::MIN_POSITIVE)).count();
    let q = qr.q();
    let basis = (rank..d).map(|k| q.column(k).iter().copied().collect()).collect();
    Ok(ZeroMeanSubspace { means, basis })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LemmaB {
    pub slack: Slack,
    /// 4·overlap·C_P.
    pub constant: f64,
    /// Effective eps = cover radius / n.
    pub eps: f64,
    pub poincare: f64,
    pub overlap: usize,
}

pub const LEMMA_B_TOL: f64 = 1e-6;

/// Σ_{B_ρ(n)} h²ν ≤ c·eps²·Σ_{B_ρ(4n)} h²ν for `h` harmonic on B_ρ(4n − 1)
/// with ν-mean 0 on each ball of `cover` (radius eps·n, covering B_ρ(n)).
/// C_P is the largest Poincaré constant over the cover centres.
pub fn check_lemma_b(
    env: &RootedEnvironment,
    h: &HarmonicField,
    cover: &BallCover,
    n: usize,
) -> Result<LemmaB, HarmonicError> {
    let root = cover.center;
    if cover.target_radius != n {
        return Err(HarmonicError::OutsideDomain { center: root, radius: n });
    }
    if !h.is_harmonic_on(root, 4 * n - 1) {
        return Err(HarmonicError::OutsideDomain { center: root, radius: 4 * n - 1 });
    }
    let mut cp = 0.0f64;
    for &c in &cover.centers {
        cp = cp.max(poincare_constant(env, c, cover.radius)?.constant);
    }
    let eps = cover.radius as f64 / n as f64;
    let constant = 4.0 * cover.overlap as f64 * cp;
    let mass = |r: usize| -> f64 {
        ball(env, root, r).members.iter().map(|&v| h.get(v).powi(2) * env.vertex_weight(v)).sum()
    };
    let slack = Slack::new(mass(n), constant * eps * eps * mass(4 * n)).require_ratio("lemma b", LEMMA_B_TOL)?;
    Ok(LemmaB { slack, constant, eps, poincare: cp, overlap: cover.overlap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::gen_lattice;

    #[test]
    fn huge_radius_gives_one_ball() {
        let env = gen_lattice(2, 20, false).unwrap();
        let c = proper_cover(&env, env.root(), 6, 12);
        assert_eq!(c.centers, vec![env.root()]);
        assert_eq!(c.overlap, 1);
    }

    #[test]
    fn cover_is_exhaustive() {
        let env = gen_lattice(2, 40, false).unwrap();
        let c = proper_cover(&env, env.root(), 32, 8);
        let target = ball(&env, env.root(), 32);
        for &v in &target.members {
            let d = crate::environment::distances_from(&env, v);
            assert!(c.centers.iter().any(|&y| d[y as usize] <= 8));
        }
        for (i, &a) in c.centers.iter().enumerate() {
            let d = crate::environment::distances_from(&env, a);
            assert!(c.centers[i + 1..].iter().all(|&b| d[b as usize] > 8));
        }
    }

    #[test]
    fn one_ball_removes_constants() {
        let env = gen_lattice(2, 12, false).unwrap();
        let b = ball(&env, env.root(), 10);
        let e = &env;
        let coord = |i: usize| move |v: VertexId| e.coords(v).unwrap()[i] as f64;
        let fields = vec![
            HarmonicField::from_fn(&env, b.clone(), |_| 1.0),
            HarmonicField::from_fn(&env, b.clone(), coord(0)),
            HarmonicField::from_fn(&env, b.clone(), coord(1)),
        ];
        let cover = proper_cover(&env, env.root(), 2, 4);
        assert_eq!(cover.count(), 1);
        let sub = zero_mean_subspace(&env, &fields, &cover).unwrap();
        assert_eq!(sub.dim(), 2);
        for f in sub.fields(&env, &fields).unwrap() {
            assert!(nu_mean(&env, &f, env.root(), 4).unwrap().abs() < 1e-10);
        }
        // already centred fields keep the whole space
        let sub = zero_mean_subspace(&env, &fields[1..], &cover).unwrap();
        assert_eq!(sub.dim(), 2);
    }
}
