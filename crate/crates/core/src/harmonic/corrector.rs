use super::{dirichlet_solve, HarmonicError, HarmonicField};
use crate::environment::{ball, RootedEnvironment};

#[derive(Clone, Debug)]
pub struct CorrectorEstimate {
    /// χ(x) = h(x) − ⟨v, x − x_ρ⟩ on B_ρ(R).
    pub chi: HarmonicField,
    /// The harmonic solve itself.
    pub harmonic: HarmonicField,
    /// (r, sup_{B_ρ(r)} |χ| / r) for r = R/2, R/4, … ≥ 1, ascending in r.
    pub profile: Vec<(usize, f64)>,
}

/// Finite-volume corrector in direction `v`: the harmonic extension of
/// x ↦ ⟨v, x − x_ρ⟩ from the boundary of B_ρ(R), minus the linear part.
pub fn estimate_corrector(
    env: &RootedEnvironment,
    v: &[f64],
    big_r: usize,
    tol: f64,
) -> Result<CorrectorEstimate, HarmonicError> {
    let root = env.root();
    let origin = env.coords(root).expect("corrector needs coordinates").to_vec();
    assert_eq!(v.len(), origin.len(), "direction has the wrong dimension");
    let linear = |x: u32| -> f64 {
        env.coords(x).unwrap().iter().zip(&origin).zip(v).map(|((c, o), vi)| vi * (c - o) as f64).sum()
    };
    let domain = ball(env, root, big_r);
    let harmonic = dirichlet_solve(env, &domain, linear, tol)?;
    let chi_values: Vec<f64> =
        domain.members.iter().zip(harmonic.values()).map(|(&x, h)| h - linear(x)).collect();
    let chi = HarmonicField::from_values(env, domain.clone(), chi_values);
    let mut radii = Vec::new();
    let mut r = big_r / 2;
    while r >= 1 {
        radii.push(r);
        r /= 2;
    }
    radii.reverse();
    let profile = radii
        .into_iter()
        .map(|r| {
            let sup = domain
                .members
                .iter()
                .zip(&domain.distances)
                .filter(|(_, &d)| d as usize <= r)
                .map(|(&x, _)| chi.get(x).abs())
                .fold(0.0, f64::max);
            (r, sup / r as f64)
        })
        .collect();
    Ok(CorrectorEstimate { chi, harmonic, profile })
}
