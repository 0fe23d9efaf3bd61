use nalgebra::{DMatrix, SymmetricEigen};

use super::{proper_cover, HarmonicError, HarmonicField};
use crate::environment::{ball, RootedEnvironment};

/// Eigenvalues below this fraction of the largest are treated as zero.
pub const RANK_THRESHOLD: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    /// Numerical rank on B_ρ(n) is below the number of candidates.
    Dependent,
    /// Full rank and the determinant ratio respects the bound.
    Independent,
    /// Full rank but det(n)/det(4n) exceeds (c·eps)^{max(d−M,0)}.
    BoundExceeded,
}

#[derive(Clone, Debug)]
pub struct GramProbeReport {
    pub candidates: usize,
    pub cover_size: usize,
    pub cover_radius: usize,
    pub eps: f64,
    pub n: usize,
    pub log_det_n: f64,
    pub log_det_4n: f64,
    /// log(det G_n / det G_4n).
    pub log_ratio: f64,
    /// det G / Π G_ii at each scale (Hadamard-normalized, in [0, 1]).
    pub normalized_det_n: f64,
    pub normalized_det_4n: f64,
    pub rank_n: usize,
    pub rank_4n: usize,
    /// Eigenvalues of the diagonally normalized Gram matrices, descending.
    pub spectrum_n: Vec<f64>,
    pub spectrum_4n: Vec<f64>,
    /// log of (c·eps)^{max(d−M,0)}.
    pub log_bound: f64,
    pub verdict: Verdict,
}

/// ⟨f, g⟩_m = Σ_{B_ρ(m)} f g ν.
pub fn gram_matrix(env: &RootedEnvironment, fields: &[&HarmonicField], m: usize) -> Result<DMatrix<f64>, HarmonicError> {
    let root = env.root();
    let b = ball(env, root, m);
    let d = fields.len();
    let mut g = DMatrix::zeros(d, d);
    for &v in &b.members {
        let w = env.vertex_weight(v);
        let vals: Vec<f64> = fields
            .iter()
            .map(|f| f.value(v).ok_or(HarmonicError::OutsideDomain { center: root, radius: m }))
            .collect::<Result<_, _>>()?;
        for i in 0..d {
            for j in i..d {
                g[(i, j)] += vals[i] * vals[j] * w;
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            g[(i, j)] = g[(j, i)];
        }
    }
    Ok(g)
}

struct GramSummary {
    log_det: f64,
    normalized_det: f64,
    rank: usize,
    spectrum: Vec<f64>,
}

fn summarize(g: &DMatrix<f64>) -> GramSummary {
    let d = g.nrows();
    let diag: Vec<f64> = (0..d).map(|i| g[(i, i)]).collect();
    if diag.iter().any(|&v| v <= 0.0) {
        return GramSummary { log_det: f64::NEG_INFINITY, normalized_det: 0.0, rank: 0, spectrum: vec![0.0; d] };
    }
    let corr = DMatrix::from_fn(d, d, |i, j| g[(i, j)] / (diag[i] * diag[j]).sqrt());
    let mut spectrum: Vec<f64> = SymmetricEigen::new(corr).eigenvalues.iter().copied().collect();
    spectrum.sort_by(|a, b| b.total_cmp(a));
    let top = spectrum[0];
    let rank = spectrum.iter().filter(|&&l| l > RANK_THRESHOLD * top).count();
    let normalized_det: f64 = spectrum.iter().map(|&l| l.max(0.0)).product();
    let log_det = normalized_det.ln() + diag.iter().map(|v| v.ln()).sum::<f64>();
    GramSummary { log_det, normalized_det, rank, spectrum }
}

/// eps = 4^{−2k}/c for growth degree k.
pub fn default_eps(growth_degree: u32, c: f64) -> f64 {
    4f64.powi(-2 * growth_degree as i32) / c
}

/// Gram determinants of the candidates on B_ρ(n) and B_ρ(4n) against the
/// bound (c·eps)^{max(d−M,0)}, where M is the size of a proper cover of
/// B_ρ(n) by balls of radius max(1, round(eps·n)).
pub fn gram_dimension_probe(
    env: &RootedEnvironment,
    candidates: &[HarmonicField],
    n: usize,
    eps: f64,
    c: f64,
) -> Result<GramProbeReport, HarmonicError> {
    let refs: Vec<&HarmonicField> = candidates.iter().collect();
    let d = candidates.len();
    let small = summarize(&gram_matrix(env, &refs, n)?);
    let large = summarize(&gram_matrix(env, &refs, 4 * n)?);
    let radius = ((eps * n as f64).round() as usize).max(1);
    let cover = proper_cover(env, env.root(), n, radius);
    let m = cover.count();
    let eff_eps = radius as f64 / n as f64;
    let log_bound = d.saturating_sub(m) as f64 * (c * eff_eps).ln();
    let log_ratio = small.log_det - large.log_det;
    let verdict = if small.rank < d {
        Verdict::Dependent
    } else if log_ratio <= log_bound + 1e-9 {
        Verdict::Independent
    } else {
        Verdict::BoundExceeded
    };
    Ok(GramProbeReport {
        candidates: d,
        cover_size: m,
        cover_radius: radius,
        eps: eff_eps,
        n,
        log_det_n: small.log_det,
        log_det_4n: large.log_det,
        log_ratio,
        normalized_det_n: small.normalized_det,
        normalized_det_4n: large.normalized_det,
        rank_n: small.rank,
        rank_4n: large.rank,
        spectrum_n: small.spectrum,
        spectrum_4n: large.spectrum,
        log_bound,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{gen_lattice, VertexId};

    #[test]
    fn exact_dependence_on_z() {
        let env = gen_lattice(1, 80, false).unwrap();
        let b = ball(&env, env.root(), 64);
        let x = |v: VertexId| env.coords(v).unwrap()[0] as f64;
        let fields = vec![
            HarmonicField::from_fn(&env, b.clone(), |_| 1.0),
            HarmonicField::from_fn(&env, b.clone(), x),
            HarmonicField::from_fn(&env, b.clone(), |v| 2.0 * x(v) + 3.0),
        ];
        let r = gram_dimension_probe(&env, &fields, 16, 0.25, 1.0).unwrap();
        assert_eq!(r.rank_n, 2);
        assert_eq!(r.rank_4n, 2);
        assert!(r.normalized_det_n < 1e-12 && r.normalized_det_4n < 1e-12);
        assert_eq!(r.verdict, Verdict::Dependent);
    }

    #[test]
    fn ratio_is_basis_invariant() {
        let env = gen_lattice(2, 40, false).unwrap();
        let b = ball(&env, env.root(), 36);
        let e = &env;
        let c = |i: usize| move |v: VertexId| e.coords(v).unwrap()[i] as f64;
        let base = vec![
            HarmonicField::from_fn(&env, b.clone(), |_| 1.0),
            HarmonicField::from_fn(&env, b.clone(), c(0)),
            HarmonicField::from_fn(&env, b.clone(), c(1)),
        ];
        let mixed: Vec<HarmonicField> = [[1.0, 2.0, 0.5], [0.0, -1.0, 3.0], [4.0, 0.0, 1.0]]
            .iter()
            .map(|row| HarmonicField::combine(&env, &base.iter().collect::<Vec<_>>(), row).unwrap())
            .collect();
        let a = gram_dimension_probe(&env, &base, 8, 0.25, 1.0).unwrap();
        let m = gram_dimension_probe(&env, &mixed, 8, 0.25, 1.0).unwrap();
        assert!((a.log_ratio - m.log_ratio).abs() < 1e-8);
        assert_eq!(a.rank_n, 3);
    }
}
