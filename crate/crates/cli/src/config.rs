//! Experiment configuration: a TOML file with one table per subcommand.

use std::path::{Path, PathBuf};

use rwlab::environment::{EnvError, ModelSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), reason: reason.into() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub torus: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pmf: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
}

impl ModelConfig {
    pub fn percolation(l: usize, p: f64) -> Self {
        ModelConfig { name: "percolation".into(), d: Some(2), l: Some(l), p: Some(p), ..Self::named("") }
    }

    pub fn lattice(d: usize, l: usize) -> Self {
        ModelConfig { name: "lattice".into(), d: Some(d), l: Some(l), ..Self::named("") }
    }

    fn named(name: &str) -> Self {
        ModelConfig {
            name: name.into(),
            d: None,
            l: None,
            p: None,
            alpha: None,
            torus: None,
            side: None,
            level: None,
            pmf: None,
            depth: None,
        }
    }

    /// `path` is the table holding this model, e.g. "entropy.model".
    pub fn to_spec(&self, path: &str) -> Result<ModelSpec, ConfigError> {
        let need = |v: Option<usize>, key: &str| v.ok_or_else(|| invalid(format!("{path}.{key}"), "missing"));
        let needf = |v: Option<f64>, key: &str| v.ok_or_else(|| invalid(format!("{path}.{key}"), "missing"));
        let spec = match self.name.as_str() {
            "lattice" => ModelSpec::Lattice { d: need(self.d, "d")?, l: need(self.l, "L")?, torus: self.torus.unwrap_or(false) },
            "torus" => ModelSpec::Torus { d: need(self.d, "d")?, side: need(self.side, "side")? },
            "percolation" => ModelSpec::Percolation { d: need(self.d, "d")?, l: need(self.l, "L")?, p: needf(self.p, "p")? },
            "conductance" => {
                ModelSpec::Conductance { d: need(self.d, "d")?, l: need(self.l, "L")?, alpha: needf(self.alpha, "alpha")? }
            }
            "balanced" => ModelSpec::Balanced { d: need(self.d, "d")?, l: need(self.l, "L")? },
            "sierpinski" => ModelSpec::Sierpinski { level: need(self.level, "level")? },
            "kesten" => ModelSpec::Kesten {
                pmf: self.pmf.clone().ok_or_else(|| invalid(format!("{path}.pmf"), "missing"))?,
                depth: need(self.depth, "depth")?,
            },
            other => return Err(invalid(format!("{path}.name"), format!("unknown model '{other}'"))),
        };
        spec.validate().map_err(|e| match e {
            EnvError::InvalidParameter { name, reason } => invalid(format!("{path}.{name}"), reason),
            other => invalid(path, other.to_string()),
        })?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub lemma_xy: f64,
    pub tv_delta: f64,
    pub mean_inequality: f64,
    pub entropy: f64,
    pub reverse_poincare: f64,
    pub gradient_lemma: f64,
    pub lemma_b: f64,
    pub solver: f64,
    /// |E|X_n|² − n| on the plain lattice.
    pub displacement: f64,
    /// sup|χ| on the plain lattice.
    pub corrector_zero: f64,
    /// det G / Π G_ii for a dependent candidate family.
    pub dependent_det: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            lemma_xy: rwlab::entropy::LEMMA_XY_TOL,
            tv_delta: rwlab::entropy::TV_DELTA_TOL,
            mean_inequality: rwlab::entropy::MEAN_INEQUALITY_TOL,
            entropy: 1e-10,
            reverse_poincare: rwlab::harmonic::REVERSE_POINCARE_TOL,
            gradient_lemma: rwlab::heatkernel::GRADIENT_LEMMA_TOL,
            lemma_b: rwlab::harmonic::LEMMA_B_TOL,
            solver: 1e-12,
            displacement: 1e-10,
            corrector_zero: 1e-9,
            dependent_det: 1e-8,
        }
    }
}

impl Tolerances {
    /// (name, value) for every entry that differs from the default.
    pub fn overrides(&self) -> Vec<(String, f64)> {
        let d = Tolerances::default();
        let pairs = [
            ("lemma_xy", self.lemma_xy, d.lemma_xy),
            ("tv_delta", self.tv_delta, d.tv_delta),
            ("mean_inequality", self.mean_inequality, d.mean_inequality),
            ("entropy", self.entropy, d.entropy),
            ("reverse_poincare", self.reverse_poincare, d.reverse_poincare),
            ("gradient_lemma", self.gradient_lemma, d.gradient_lemma),
            ("lemma_b", self.lemma_b, d.lemma_b),
            ("solver", self.solver, d.solver),
            ("displacement", self.displacement, d.displacement),
            ("corrector_zero", self.corrector_zero, d.corrector_zero),
            ("dependent_det", self.dependent_det, d.dependent_det),
        ];
        pairs.iter().filter(|p| p.1 != p.2).map(|p| (p.0.to_string(), p.1)).collect()
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let all = [
            ("lemma_xy", self.lemma_xy),
            ("tv_delta", self.tv_delta),
            ("mean_inequality", self.mean_inequality),
            ("entropy", self.entropy),
            ("reverse_poincare", self.reverse_poincare),
            ("gradient_lemma", self.gradient_lemma),
            ("lemma_b", self.lemma_b),
            ("solver", self.solver),
            ("displacement", self.displacement),
            ("corrector_zero", self.corrector_zero),
            ("dependent_det", self.dependent_det),
        ];
        for (k, v) in all {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("tolerances.{k}"), format!("{v} is not a nonnegative number")));
            }
        }
        if self.solver == 0.0 {
            return Err(invalid("tolerances.solver", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub model: ModelConfig,
    pub replicas: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig { model: ModelConfig::percolation(32, 0.7), replicas: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EntropyConfig {
    pub model: ModelConfig,
    pub n_max: usize,
    pub replicas: usize,
    /// H_n − (d/2)·log n must vary by at most `window_width` over
    /// [window_from, n_max].
    pub window_from: usize,
    pub window_width: f64,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        EntropyConfig {
            model: ModelConfig::percolation(32, 0.7),
            n_max: 64,
            replicas: 4,
            window_from: 16,
            window_width: 1.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SdbConfig {
    pub model: ModelConfig,
    pub n_min: usize,
    pub n_max: usize,
    pub replicas: usize,
    /// "graph" or "euclidean".
    pub metric: String,
    pub slope_band: [f64; 2],
}

impl Default for SdbConfig {
    fn default() -> Self {
        SdbConfig {
            model: ModelConfig::percolation(32, 0.7),
            n_min: 8,
            n_max: 64,
            replicas: 4,
            metric: "graph".into(),
            slope_band: [0.8, 1.05],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeatKernelConfig {
    pub model: ModelConfig,
    pub n_min: usize,
    pub n_max: usize,
    pub points: usize,
    pub starts: usize,
    pub replicas: usize,
    /// Displacements |x − y| ≈ κ√n for the gradient estimate.
    pub kappas: Vec<f64>,
    /// κ whose exponent is compared with `gradient_band`.
    pub kappa_fit: f64,
    pub diagonal_band: [f64; 2],
    pub gradient_band: [f64; 2],
}

impl Default for HeatKernelConfig {
    fn default() -> Self {
        HeatKernelConfig {
            model: ModelConfig::percolation(40, 0.7),
            n_min: 16,
            n_max: 96,
            points: 6,
            starts: 2,
            replicas: 4,
            kappas: vec![1.0, 2.0],
            kappa_fit: 1.0,
            diagonal_band: [-1.15, -0.85],
            gradient_band: [-3.3, -2.7],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrectorConfig {
    pub model: ModelConfig,
    pub radius: usize,
    /// Smallest r whose median sup|χ|/r enters the monotonicity check.
    pub min_radius: usize,
    pub direction: Vec<f64>,
    pub replicas: usize,
}

impl Default for CorrectorConfig {
    fn default() -> Self {
        CorrectorConfig {
            model: ModelConfig::percolation(64, 0.7),
            radius: 64,
            min_radius: 8,
            direction: vec![1.0, 0.0], replicas: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DimensionConfig {
    pub model: ModelConfig,
    /// Inner scale; fields are solved on B_ρ(4n).
    pub n: usize,
    pub eps: f64,
    pub c: f64,
    pub replicas: usize,
    /// Required fraction of replicas recovering rank d + 1.
    pub rank_band: [f64; 2],
}

impl Default for DimensionConfig {
    fn default() -> Self {
        DimensionConfig {
            model: ModelConfig::percolation(40, 0.7),
            n: 8,
            eps: 0.25,
            c: 1.0,
            replicas: 4,
            rank_band: [0.9, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoverConfig {
    pub model: ModelConfig,
    pub big_radius: usize,
    pub radius: usize,
}

impl Default for CoverConfig {
    fn default() -> Self {
        CoverConfig { model: ModelConfig::percolation(32, 0.7), big_radius: 16, radius: 4 }
    }
}

/// Sizes of the deterministic invariant suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub tables: usize,
    pub triples: usize,
    pub torus_n: usize,
    pub harmonic_fields: usize,
    pub gradient_triples: usize,
    pub gradient_n_max: usize,
    pub box_radius: usize,
    pub replicas: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            tables: 10_000,
            triples: 10_000,
            torus_n: 20,
            harmonic_fields: 30,
            gradient_triples: 60,
            gradient_n_max: 8,
            box_radius: 32,
            replicas: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Worker threads; never affects outputs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub tolerances: Tolerances,
    pub generate: GenerateConfig,
    pub entropy: EntropyConfig,
    pub sdb: SdbConfig,
    pub heatkernel: HeatKernelConfig,
    pub corrector: CorrectorConfig,
    pub dimension: DimensionConfig,
    pub cover: CoverConfig,
    pub verify: VerifyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            threads: None,
            out: None,
            tolerances: Tolerances::default(),
            generate: GenerateConfig::default(),
            entropy: EntropyConfig::default(),
            sdb: SdbConfig::default(),
            heatkernel: HeatKernelConfig::default(),
            corrector: CorrectorConfig::default(),
            dimension: DimensionConfig::default(),
            cover: CoverConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

fn positive(field: &str, v: usize) -> Result<(), ConfigError> {
    if v == 0 {
        return Err(invalid(field, "must be positive"));
    }
    Ok(())
}

/// (L/4)² for box models, mirroring the environment's own horizon budget.
pub fn horizon_budget(spec: &ModelSpec) -> Option<usize> {
    match spec {
        ModelSpec::Lattice { l, torus: false, .. }
        | ModelSpec::Percolation { l, .. }
        | ModelSpec::Conductance { l, .. } => Some((*l as f64 / 4.0).powi(2).floor() as usize),
        _ => None,
    }
}

fn within_budget(field: &str, spec: &ModelSpec, n: usize) -> Result<(), ConfigError> {
    match horizon_budget(spec) {
        Some(b) if n > b => Err(invalid(field, format!("horizon {n} exceeds the box budget {b}"))),
        _ => Ok(()),
    }
}

fn band(field: &str, b: [f64; 2]) -> Result<(), ConfigError> {
    if !(b[0] <= b[1]) {
        return Err(invalid(field, format!("[{}, {}] is not an interval", b[0], b[1])));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::from_toml(&text)
    }

    /// Checks every section, so a bad field fails whichever subcommand runs.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.tolerances.validate()?;
        if self.threads == Some(0) {
            return Err(invalid("threads", "must be positive"));
        }
        self.generate.model.to_spec("generate.model")?;
        positive("generate.replicas", self.generate.replicas)?;

        let spec = self.entropy.model.to_spec("entropy.model")?;
        positive("entropy.n_max", self.entropy.n_max)?;
        within_budget("entropy.n_max", &spec, self.entropy.n_max)?;
        positive("entropy.replicas", self.entropy.replicas)?;
        if self.entropy.window_from == 0 || self.entropy.window_from > self.entropy.n_max {
            return Err(invalid("entropy.window_from", "must lie in 1..=n_max"));
        }
        if !(self.entropy.window_width >= 0.0) {
            return Err(invalid("entropy.window_width", "must be nonnegative"));
        }

        let spec = self.sdb.model.to_spec("sdb.model")?;
        positive("sdb.n_min", self.sdb.n_min)?;
        within_budget("sdb.n_max", &spec, self.sdb.n_max)?;
        if self.sdb.metric == "euclidean" && spec_dim(&spec).is_none() {
            return Err(invalid("sdb.metric", "euclidean distance needs a model with coordinates"));
        }
        positive("sdb.replicas", self.sdb.replicas)?;
        if self.sdb.n_max <= self.sdb.n_min {
            return Err(invalid("sdb.n_max", "must exceed n_min"));
        }
        if !matches!(self.sdb.metric.as_str(), "graph" | "euclidean") {
            return Err(invalid("sdb.metric", format!("'{}' is neither graph nor euclidean", self.sdb.metric)));
        }
        band("sdb.slope_band", self.sdb.slope_band)?;

        let hk = &self.heatkernel;
        let spec = hk.model.to_spec("heatkernel.model")?;
        if spec_dim(&spec).is_none() {
            return Err(invalid("heatkernel.model.name", "heat-kernel fits need a model with coordinates"));
        }
        // the diagonal fit also uses time n_max + 1
        within_budget("heatkernel.n_max", &spec, hk.n_max + 1)?;
        positive("heatkernel.n_min", hk.n_min)?;
        positive("heatkernel.starts", hk.starts)?;
        positive("heatkernel.replicas", hk.replicas)?;
        if hk.n_max <= hk.n_min {
            return Err(invalid("heatkernel.n_max", "must exceed n_min"));
        }
        if hk.points < 4 {
            return Err(invalid("heatkernel.points", "need at least 4 times to fit"));
        }
        if hk.kappas.is_empty() || hk.kappas.iter().any(|k| !(*k >= 0.0)) {
            return Err(invalid("heatkernel.kappas", "need nonnegative displacements"));
        }
        if !hk.kappas.contains(&hk.kappa_fit) {
            return Err(invalid("heatkernel.kappa_fit", "must be one of kappas"));
        }
        band("heatkernel.diagonal_band", hk.diagonal_band)?;
        band("heatkernel.gradient_band", hk.gradient_band)?;

        let spec = self.corrector.model.to_spec("corrector.model")?;
        if spec_dim(&spec) != Some(self.corrector.direction.len()) {
            return Err(invalid("corrector.direction", "length must equal the model dimension"));
        }
        if self.corrector.radius < 4 {
            return Err(invalid("corrector.radius", "must be at least 4"));
        }
        if self.corrector.min_radius == 0 || 2 * self.corrector.min_radius > self.corrector.radius {
            return Err(invalid("corrector.min_radius", "must lie in 1..=radius/2"));
        }
        if self.corrector.direction.iter().all(|v| *v == 0.0) {
            return Err(invalid("corrector.direction", "must be nonzero"));
        }
        positive("corrector.replicas", self.corrector.replicas)?;

        let spec = self.dimension.model.to_spec("dimension.model")?;
        if spec_dim(&spec).is_none() {
            return Err(invalid("dimension.model.name", "coordinate candidates need a model with coordinates"));
        }
        positive("dimension.n", self.dimension.n)?;
        positive("dimension.replicas", self.dimension.replicas)?;
        if !(self.dimension.eps > 0.0 && self.dimension.eps <= 1.0) {
            return Err(invalid("dimension.eps", "must lie in (0, 1]"));
        }
        if !(self.dimension.c > 0.0) {
            return Err(invalid("dimension.c", "must be positive"));
        }
        band("dimension.rank_band", self.dimension.rank_band)?;

        self.cover.model.to_spec("cover.model")?;
        positive("cover.radius", self.cover.radius)?;

        let v = &self.verify;
        positive("verify.box_radius", v.box_radius)?;
        if v.box_radius < 4 {
            return Err(invalid("verify.box_radius", "must be at least 4"));
        }
        positive("verify.gradient_n_max", v.gradient_n_max)?;
        positive("verify.replicas", v.replicas)?;
        if v.torus_n < 2 {
            return Err(invalid("verify.torus_n", "must be at least 2"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, without threads and output path.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.threads = None;
        canonical.out = None;
        let text = serde_json::to_string(&canonical).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn spec_dim(spec: &ModelSpec) -> Option<usize> {
    match spec {
        ModelSpec::Lattice { d, .. }
        | ModelSpec::Torus { d, .. }
        | ModelSpec::Percolation { d, .. }
        | ModelSpec::Conductance { d, .. }
        | ModelSpec::Balanced { d, .. } => Some(*d),
        ModelSpec::Sierpinski { .. } => Some(2),
        ModelSpec::Kesten { .. } => None,
    }
}
