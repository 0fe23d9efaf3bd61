//! One driver per subcommand. Each returns its checks and the files to write;
//! nothing here touches the filesystem.

use std::fmt::Write as _;

use anyhow::{anyhow, Result};
use rayon::prelude::*;
use rwlab::entropy::entropy_profile;
use rwlab::environment::{ball, env_hash, serialize, ModelSpec, RootedEnvironment, VertexId};
use rwlab::harmonic::{dirichlet_solve, estimate_corrector, gram_dimension_probe, proper_cover, HarmonicField};
use rwlab::heatkernel::{annealed_gradient_estimate, fit_gaussian, log_grid};
use rwlab::rng::derive_seed;
use rwlab::stats::{loglog_fit, median};
use rwlab::walk::{displacement_profile, Metric};

use crate::config::{spec_dim, ExperimentConfig};
use crate::manifest::{CheckKind, CheckResult};
use crate::verify;

pub struct Outcome {
    pub results: Vec<CheckResult>,
    /// (file name, contents), written in this order.
    pub files: Vec<(String, String)>,
}

fn e12(v: f64) -> String {
    format!("{v:.12e}")
}

/// Replica i of a model, seeded exactly as the library's replica maps.
fn replica(spec: &ModelSpec, seed: u64, i: usize) -> Result<(u64, RootedEnvironment)> {
    let s = derive_seed(seed, spec.name(), i as u64);
    Ok((s, spec.generate(s)?))
}

fn is_periodic(spec: &ModelSpec) -> bool {
    matches!(spec, ModelSpec::Torus { .. } | ModelSpec::Lattice { torus: true, .. })
}

fn origin(env: &RootedEnvironment) -> Result<Vec<i64>> {
    env.coords(env.root()).map(|c| c.to_vec()).ok_or_else(|| anyhow!("model has no coordinates"))
}

pub fn generate(cfg: &ExperimentConfig) -> Result<Outcome> {
    let spec = cfg.generate.model.to_spec("generate.model")?;
    let envs: Vec<(u64, RootedEnvironment)> =
        (0..cfg.generate.replicas).into_par_iter().map(|i| replica(&spec, cfg.seed, i)).collect::<Result<_>>()?;
    let mut table = String::from("replica,seed,vertices,edges,root,max_degree,hash\n");
    let mut files = Vec::new();
    let mut invalid = Vec::new();
    for (i, (s, env)) in envs.iter().enumerate() {
        writeln!(
            table,
            "{i},{s},{},{},{},{},{}",
            env.len(),
            env.edges().count(),
            env.root(),
            env.max_degree(),
            env_hash(env)
        )
        .unwrap();
        if let Err(e) = env.validate() {
            invalid.push(format!("replica {i}: {e}"));
        }
        files.push((format!("env_{i:03}.txt"), serialize(env)));
    }
    files.push(("environments.csv".into(), table));
    let detail = if invalid.is_empty() { "all kernels validate".into() } else { invalid.join("; ") };
    let results = vec![CheckResult::error("environments_valid", invalid.len() as f64, 0.0, envs.len(), detail)];
    Ok(Outcome { results, files })
}

pub fn entropy(cfg: &ExperimentConfig) -> Result<Outcome> {
    let e = &cfg.entropy;
    let tol = cfg.tolerances.entropy;
    let spec = e.model.to_spec("entropy.model")?;
    let profile = entropy_profile(&spec, e.n_max, e.replicas, cfg.seed)?;
    let n_max = profile.n_max;
    let mut results = Vec::new();

    let info: Vec<f64> = profile
        .per_env
        .iter()
        .flat_map(|q| (1..=n_max).map(move |n| q.mutual_information_bound(n) - q.delta_sq[n]))
        .collect();
    results.push(CheckResult::slack(
        "entropy_information_bound",
        info.iter().copied().fold(f64::INFINITY, f64::min),
        tol,
        info.len(),
        "per environment: min of 2I(X_1;X_n) - E[delta_n^2]",
    ));

    let annealed = (1..=n_max).map(|n| profile.bound_check(n));
    if is_periodic(&spec) {
        let q = &profile.per_env[0];
        let worst = annealed.map(|c| c.slack).fold(f64::INFINITY, f64::min);
        results.push(CheckResult::slack("entropy_bound", worst, tol, n_max, "min of 2(H_n - H_(n-1)) - E[delta_n^2]"));
        let joint = (2..=n_max).map(|n| (q.h1n[n] - q.h[n - 1] - q.h[1]).abs()).fold(0.0, f64::max);
        results.push(CheckResult::error(
            "joint_entropy_identity",
            joint,
            tol,
            n_max.saturating_sub(1),
            "max |H(X_1,X_n) - H_(n-1) - H_1|",
        ));
        let mono = (2..=n_max).map(|n| q.increment(n - 1) - q.increment(n)).fold(f64::INFINITY, f64::min);
        results.push(CheckResult::slack(
            "increments_nonincreasing",
            mono,
            tol,
            n_max.saturating_sub(1),
            "min of consecutive increment drops",
        ));
    } else {
        // three standard errors below zero is still consistent with the bound
        let worst = annealed.map(|c| c.slack + 3.0 * c.stderr).fold(f64::INFINITY, f64::min);
        results.push(CheckResult::banded(
            "entropy_bound",
            CheckKind::Estimate,
            worst,
            [0.0, f64::MAX],
            profile.per_env.len(),
            "min over n of annealed slack + 3 stderr",
        ));
    }

    let half_d = spec_dim(&spec).unwrap_or(1) as f64 / 2.0;
    let window: Vec<f64> =
        (e.window_from..=n_max).map(|n| profile.h[n].mean - half_d * (n as f64).ln()).collect();
    let (lo, hi) = window.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    results.push(CheckResult::banded(
        "entropy_window",
        CheckKind::Estimate,
        hi - lo,
        [0.0, e.window_width],
        profile.per_env.len(),
        format!("spread of H_n - (d/2) log n over n in [{}, {n_max}], range [{lo:.4}, {hi:.4}]", e.window_from),
    ));
    let scaled: Vec<f64> = (e.window_from..=n_max).map(|n| n as f64 * profile.delta_sq[n].mean).collect();
    let (slo, shi) = scaled.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    results.push(CheckResult::banded(
        "scaled_delta_ratio",
        CheckKind::Estimate,
        shi / slo,
        [1.0, 4.0],
        profile.per_env.len(),
        format!("max/min of n E[delta_n^2] over n in [{}, {n_max}]", e.window_from),
    ));
    Ok(Outcome { results, files: vec![("entropy.csv".into(), profile.to_csv())] })
}

pub fn sdb(cfg: &ExperimentConfig) -> Result<Outcome> {
    let s = &cfg.sdb;
    let spec = s.model.to_spec("sdb.model")?;
    let metric = if s.metric == "euclidean" { Metric::Euclidean } else { Metric::Graph };
    let prof = displacement_profile(&spec, s.n_max, s.replicas, cfg.seed, metric)?;
    let mut csv = String::from("n,mean,stderr,ratio\n");
    for n in 1..=s.n_max {
        let m = prof.mean[n];
        writeln!(csv, "{n},{},{},{}", e12(m.mean), e12(m.stderr), e12(m.mean / n as f64)).unwrap();
    }
    let ns: Vec<f64> = (s.n_min..=s.n_max).map(|n| n as f64).collect();
    let ys: Vec<f64> = (s.n_min..=s.n_max).map(|n| prof.mean[n].mean).collect();
    let fit = loglog_fit(&ns, &ys);
    let ratios: Vec<f64> = ns.iter().zip(&ys).map(|(n, y)| y / n).collect();
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let mut results = vec![CheckResult::banded(
        "sdb_slope",
        CheckKind::Fit,
        fit.slope,
        s.slope_band,
        prof.replicas,
        format!("log-log slope over n in [{}, {}], r2 {:.4}, E d^2/n in [{lo:.4}, {hi:.4}]", s.n_min, s.n_max, fit.r2),
    )];
    if matches!(spec, ModelSpec::Lattice { torus: false, .. }) && metric == Metric::Euclidean {
        let err = (1..=s.n_max).map(|n| (prof.mean[n].mean - n as f64).abs()).fold(0.0, f64::max);
        results.push(CheckResult::error(
            "lattice_second_moment",
            err,
            cfg.tolerances.displacement,
            s.n_max,
            "max |E|X_n|^2 - n|",
        ));
    }
    Ok(Outcome { results, files: vec![("sdb.csv".into(), csv)] })
}

pub fn heatkernel(cfg: &ExperimentConfig) -> Result<Outcome> {
    let h = &cfg.heatkernel;
    let spec = h.model.to_spec("heatkernel.model")?;
    let ns = log_grid(h.n_min, h.n_max, h.points);
    let fit = fit_gaussian(&spec, &ns, h.starts, h.replicas, cfg.seed)?;
    let grad = annealed_gradient_estimate(&spec, &ns, &h.kappas, h.replicas, cfg.seed)?;
    let mut onsets = String::from("replica,start,slope,onset\n");
    for s in &fit.starts {
        let onset = s.onset.map_or(String::new(), |n| n.to_string());
        writeln!(onsets, "{},{},{},{onset}", s.replica, s.start, e12(s.fit.slope)).unwrap();
    }
    let exponent = grad.exponent(h.kappa_fit).unwrap_or(f64::NAN);
    let results = vec![
        CheckResult::banded(
            "diagonal_slope",
            CheckKind::Fit,
            fit.diagonal_fit.slope,
            h.diagonal_band,
            fit.starts.len(),
            format!(
                "log (p_n + p_(n+1))(x,x) against log n, r2 {:.4}; profile rate {:.4}, {} starts flagged",
                fit.diagonal_fit.r2,
                fit.profile_rate,
                fit.flagged()
            ),
        ),
        CheckResult::banded(
            "gradient_exponent",
            CheckKind::Fit,
            exponent,
            h.gradient_band,
            h.replicas,
            format!("kappa {}, c3 {:.4e}, c4 {:.4}, {} replicas missing x+e1", h.kappa_fit, grad.c3, grad.c4, grad.missing),
        ),
    ];
    let files = vec![
        ("heatkernel_diagonal.csv".into(), fit.to_csv()),
        ("heatkernel_onsets.csv".into(), onsets),
        ("heatkernel_gradient.csv".into(), grad.to_csv()),
    ];
    Ok(Outcome { results, files })
}

pub fn corrector(cfg: &ExperimentConfig) -> Result<Outcome> {
    let c = &cfg.corrector;
    let spec = c.model.to_spec("corrector.model")?;
    let runs: Vec<(Vec<(usize, f64)>, f64)> = (0..c.replicas)
        .into_par_iter()
        .map(|i| {
            let (_, env) = replica(&spec, cfg.seed, i)?;
            let est = estimate_corrector(&env, &c.direction, c.radius, cfg.tolerances.solver)?;
            Ok((est.profile, est.chi.max_abs()))
        })
        .collect::<Result<_>>()?;
    let mut csv = String::from("replica,r,ratio\n");
    for (i, (profile, _)) in runs.iter().enumerate() {
        for (r, v) in profile {
            writeln!(csv, "{i},{r},{}", e12(*v)).unwrap();
        }
    }
    let radii: Vec<usize> = runs[0].0.iter().map(|p| p.0).collect();
    let mut medians = String::from("r,median\n");
    let mut checked = Vec::new();
    for (k, &r) in radii.iter().enumerate() {
        let m = median(&runs.iter().map(|run| run.0[k].1).collect::<Vec<_>>());
        writeln!(medians, "{r},{}", e12(m)).unwrap();
        if r >= c.min_radius {
            checked.push((r, m));
        }
    }
    let worst = checked.windows(2).map(|w| w[1].1 / w[0].1).fold(0.0, f64::max);
    let listing: Vec<String> = checked.iter().map(|(r, m)| format!("{r}:{m:.4}")).collect();
    let mut results = vec![CheckResult::banded(
        "corrector_medians_decreasing",
        CheckKind::Estimate,
        worst,
        [0.0, 1.0 - f64::EPSILON],
        runs.len(),
        format!("largest ratio of consecutive medians of sup|chi|/r; medians {}", listing.join(" ")),
    )];
    if matches!(spec, ModelSpec::Lattice { .. } | ModelSpec::Torus { .. }) {
        let sup = runs.iter().map(|r| r.1).fold(0.0, f64::max);
        results.push(CheckResult::error("lattice_corrector_zero", sup, cfg.tolerances.corrector_zero, runs.len(), "sup |chi|"));
    }
    Ok(Outcome { results, files: vec![("corrector.csv".into(), csv), ("corrector_medians.csv".into(), medians)] })
}

/// Dirichlet solutions on B_ρ(4n) with boundary data 1 and the coordinates
/// relative to the root, followed by the dependent datum 2x₁ + 3.
pub fn coordinate_fields(env: &RootedEnvironment, n: usize, tol: f64) -> Result<Vec<HarmonicField>> {
    let o = origin(env)?;
    let domain = ball(env, env.root(), 4 * n);
    let coord = |v: VertexId, i: usize| (env.coords(v).unwrap()[i] - o[i]) as f64;
    let mut fields = vec![dirichlet_solve(env, &domain, |_| 1.0, tol)?];
    for i in 0..o.len() {
        fields.push(dirichlet_solve(env, &domain, |v| coord(v, i), tol)?);
    }
    fields.push(dirichlet_solve(env, &domain, |v| 2.0 * coord(v, 0) + 3.0, tol)?);
    Ok(fields)
}

pub fn dimension(cfg: &ExperimentConfig) -> Result<Outcome> {
    let dc = &cfg.dimension;
    let spec = dc.model.to_spec("dimension.model")?;
    let d = spec_dim(&spec).expect("validated");
    let runs: Vec<_> = (0..dc.replicas)
        .into_par_iter()
        .map(|i| {
            let (_, env) = replica(&spec, cfg.seed, i)?;
            let fields = coordinate_fields(&env, dc.n, cfg.tolerances.solver)?;
            let base = gram_dimension_probe(&env, &fields[..d + 1], dc.n, dc.eps, dc.c)?;
            let extra = gram_dimension_probe(&env, &fields, dc.n, dc.eps, dc.c)?;
            Ok((base, extra))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut csv = String::from(
        "replica,rank_n,rank_4n,normalized_det_n,normalized_det_4n,log_ratio,log_bound,cover_size,verdict,rank_with_dependent,normalized_det_with_dependent\n",
    );
    for (i, (b, x)) in runs.iter().enumerate() {
        writeln!(
            csv,
            "{i},{},{},{},{},{},{},{},{:?},{},{}",
            b.rank_n,
            b.rank_4n,
            e12(b.normalized_det_n),
            e12(b.normalized_det_4n),
            e12(b.log_ratio),
            e12(b.log_bound),
            b.cover_size,
            b.verdict,
            x.rank_n,
            e12(x.normalized_det_n)
        )
        .unwrap();
    }
    let full = runs.iter().filter(|(b, _)| b.rank_n == d + 1).count();
    let fraction = full as f64 / runs.len() as f64;
    let mut rank = CheckResult::banded(
        "rank_recovery",
        CheckKind::Estimate,
        fraction,
        dc.rank_band,
        runs.len(),
        format!("{full}/{} replicas reach rank {} on B(n), n = {}", runs.len(), d + 1, dc.n),
    );
    if !spec.is_random() {
        rank = CheckResult { band: Some([1.0, 1.0]), pass: full == runs.len(), ..rank }.hard();
    }
    let kept = runs.iter().all(|(b, x)| x.rank_n == b.rank_n);
    let det = runs.iter().map(|(_, x)| x.normalized_det_n).fold(0.0, f64::max);
    let mut dependent = CheckResult::error(
        "dependent_candidate",
        det,
        cfg.tolerances.dependent_det,
        runs.len(),
        format!("max normalized det with 2x+3 added; rank unchanged in every replica: {kept}"),
    );
    dependent.pass &= kept;
    Ok(Outcome { results: vec![rank, dependent], files: vec![("dimension.csv".into(), csv)] })
}

pub fn cover(cfg: &ExperimentConfig) -> Result<Outcome> {
    let cc = &cfg.cover;
    let spec = cc.model.to_spec("cover.model")?;
    let (_, env) = replica(&spec, cfg.seed, 0)?;
    let cover = proper_cover(&env, env.root(), cc.big_radius, cc.radius);
    let target = ball(&env, env.root(), cc.big_radius);
    let mut covered = vec![false; env.len()];
    let mut close_pairs = 0usize;
    let sep = 2 * (cc.radius / 2);
    for &c in &cover.centers {
        let b = ball(&env, c, cc.radius.max(sep));
        for (&v, &dv) in b.members.iter().zip(&b.distances) {
            if dv as usize <= cc.radius {
                covered[v as usize] = true;
            }
            if v != c && dv as usize <= sep && cover.centers.contains(&v) {
                close_pairs += 1;
            }
        }
    }
    let missed = target.members.iter().filter(|&&v| !covered[v as usize]).count();
    let mut csv = String::from("index,vertex,coords\n");
    for (i, &c) in cover.centers.iter().enumerate() {
        let coords = env.coords(c).map_or(String::new(), |x| x.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "));
        writeln!(csv, "{i},{c},{coords}").unwrap();
    }
    let results = vec![
        CheckResult::error(
            "cover_complete",
            missed as f64,
            0.0,
            target.len(),
            format!("{} balls of radius {} over B(root, {})", cover.count(), cc.radius, cc.big_radius),
        ),
        CheckResult::error("cover_separated", close_pairs as f64, 0.0, cover.count(), format!("center pairs within {sep}")),
        CheckResult::banded(
            "cover_overlap",
            CheckKind::Estimate,
            cover.overlap as f64,
            [1.0, f64::MAX],
            1,
            "largest number of doubled balls sharing a vertex",
        ),
    ];
    Ok(Outcome { results, files: vec![("cover.csv".into(), csv)] })
}

pub fn verify(cfg: &ExperimentConfig) -> Result<Outcome> {
    let results = verify::run_verify(cfg.seed, &cfg.verify, &cfg.tolerances)?;
    let csv = verify::results_csv(&results);
    Ok(Outcome { results, files: vec![("verify.csv".into(), csv)] })
}
