//! Experiment configuration: TOML in, validated structs out.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rankflow::keyed::StreamKey;
use rankflow::tower::{CuttingSpec, ExpStage, LastOffset, OmegaNorm, Rational, SpacerFamily};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    /// Seconds since the epoch written into every record.
    #[serde(default)]
    pub timestamp: Option<u64>,
    #[serde(default, rename = "experiment")]
    pub experiments: Vec<Experiment>,
}

// Flattened enums cannot deny unknown fields; typos inside an experiment
// surface as missing required fields instead.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Experiment {
    pub id: String,
    #[serde(flatten)]
    pub task: Task,
    #[serde(default)]
    pub quad: QuadOverrides,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadOverrides {
    pub tol: Option<f64>,
    pub sigma: Option<f64>,
    pub max_sigma: Option<f64>,
    pub max_panels: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Task {
    Tower {
        tower: TowerConfig,
    },
    Spectrum {
        tower: TowerConfig,
        /// For each `n`, the product `Π_{k≤n}|P_k|²` (or `|P_n|²` alone
        /// against the triangle).
        stages: Vec<usize>,
        s: f64,
        t: TPoints,
        #[serde(default)]
        reference: Reference,
        #[serde(default = "default_spectrum_tol")]
        max_abs_diff: f64,
    },
    Criteria {
        tower: Option<TowerConfig>,
        #[serde(default = "default_s")]
        s: f64,
        checks: Vec<Check>,
    },
    Clt {
        #[serde(flatten)]
        model: CltModel,
        max_ks: Option<f64>,
        min_ks: Option<f64>,
        /// Target for the sample variance, or the second moment for the
        /// exponential model.
        moment_target: Option<f64>,
        moment_tol: Option<f64>,
        #[serde(default = "default_bins")]
        bins: usize,
    },
    Flatness {
        ladder: LadderConfig,
        max_ratio: Option<f64>,
        min_deficit: Option<f64>,
    },
    KkVerify {
        ladder: LadderConfig,
    },
}

fn default_spectrum_tol() -> f64 {
    1e-6
}

fn default_s() -> f64 {
    0.5
}

fn default_bins() -> usize {
    40
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reference {
    /// Word sums over the whole prefix.
    #[default]
    Words,
    /// `(1 − |t|/s)₊` for the single stage `n`.
    Triangle,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "points", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TPoints {
    List { values: Vec<f64> },
    Grid { from: f64, to: f64, count: usize },
    /// Uniform keyed draws in `[−h, h]`, `h` the height after the stage.
    Random { count: usize },
    /// `inner` points with `|t| < min(h − s, s + 1)` and `outer` in `(s, h − s)`.
    Triangle { inner: usize, outer: usize },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TowerConfig {
    pub p: Vec<usize>,
    pub depth: Option<usize>,
    pub base_height: Option<f64>,
    #[serde(flatten)]
    pub family: FamilyConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum FamilyConfig {
    Zero,
    Explicit {
        spacers: Vec<Vec<f64>>,
    },
    /// Explicit spacers drawn uniformly from `[lo, hi]`.
    Random {
        lo: f64,
        hi: f64,
    },
    Ornstein {
        t: Vec<f64>,
        /// `x_{k,p_k} = last_scale·t_k`.
        #[serde(default = "one")]
        last_scale: f64,
    },
    Linear {
        alpha: f64,
    },
    Exponential {
        stages: Vec<ExpStageConfig>,
        #[serde(default)]
        plain_norm: bool,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpStageConfig {
    pub m: f64,
    /// `[numerator, denominator]`.
    pub eps: [u64; 2],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Check {
    /// `∫ Π_{k∈F}|P_k|² dλ_s = 1` on every subset of the chain.
    Normalization { indices: Vec<usize> },
    Peyriere { indices: Vec<usize> },
    Dirichlet { l_max: u64, points: usize },
    Totient { x: u64 },
    Bumps { p: u32, alpha: f64, grid: usize },
    Subsets { indices: Vec<usize> },
    Limsup { indices: Vec<usize>, m: usize },
    /// Identical chains on the tower's stages, and the gap sequence of a
    /// dissociated product of `copies` doubling factors against `Q ≡ 1`.
    Ratio { indices: Vec<usize>, copies: usize, max_l: usize },
    Guenais { k_max: usize },
    KlemesReinhold,
    KlemesRatio,
    Mahler { indices: Vec<usize> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum CltModel {
    Ornstein {
        k: usize,
        p: usize,
        t: f64,
        h: f64,
        theta: f64,
        draws: usize,
    },
    Exponential {
        m: f64,
        eps: [u64; 2],
        p: usize,
        a: f64,
        b: f64,
        s: f64,
        samples: usize,
        h: Option<f64>,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderConfig {
    pub q: Vec<u64>,
    pub beta: f64,
    pub m: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub grid: usize,
}

impl Config {
    pub fn load(path: &str) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_string(),
            source,
        })?;
        Config::parse(&text, path)
    }

    pub fn parse(text: &str, origin: &str) -> Result<Config, ConfigError> {
        let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            path: e.path().to_string(),
            message: e.inner().message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut seen = std::collections::BTreeSet::new();
        for (i, e) in self.experiments.iter().enumerate() {
            let path = format!("experiment[{i}]");
            if e.id.trim().is_empty() {
                return Err(invalid(format!("{path}.id"), "id must be nonempty"));
            }
            if e.id.contains(['/', '\\']) || e.id.starts_with('.') {
                return Err(invalid(format!("{path}.id"), "id must be a plain directory name"));
            }
            if !seen.insert(e.id.clone()) {
                return Err(invalid(format!("{path}.id"), format!("duplicate id {:?}", e.id)));
            }
            e.validate(&path)?;
        }
        Ok(())
    }
}

fn positive(path: &str, x: f64) -> Result<(), ConfigError> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(invalid(path, format!("{x} must be positive")))
    }
}

fn within_depth(path: &str, indices: &[usize], depth: usize) -> Result<(), ConfigError> {
    match indices.iter().position(|&n| n >= depth) {
        Some(i) => Err(invalid(format!("{path}[{i}]"), format!("stage {} beyond depth {depth}", indices[i]))),
        None if indices.is_empty() => Err(invalid(path, "empty stage list")),
        None => Ok(()),
    }
}

impl Experiment {
    fn validate(&self, path: &str) -> Result<(), ConfigError> {
        if let Some(tol) = self.quad.tol {
            positive(&format!("{path}.quad.tol"), tol)?;
        }
        match &self.task {
            Task::Tower { tower } => {
                tower.validate(&format!("{path}.tower"))?;
            }
            Task::Spectrum { tower, stages, s, t, .. } => {
                let depth = tower.validate(&format!("{path}.tower"))?;
                within_depth(&format!("{path}.stages"), stages, depth)?;
                positive(&format!("{path}.s"), *s)?;
                let n = match t {
                    TPoints::List { values } => values.len(),
                    TPoints::Grid { count, .. } | TPoints::Random { count } => *count,
                    TPoints::Triangle { inner, outer } => inner + outer,
                };
                if n == 0 {
                    return Err(invalid(format!("{path}.t"), "no evaluation points"));
                }
            }
            Task::Criteria { tower, s, checks } => {
                positive(&format!("{path}.s"), *s)?;
                let depth = match tower {
                    Some(t) => Some(t.validate(&format!("{path}.tower"))?),
                    None => None,
                };
                let mut names = std::collections::BTreeSet::new();
                for (j, c) in checks.iter().enumerate() {
                    c.validate(&format!("{path}.checks[{j}]"), depth)?;
                    if !names.insert(c.name()) {
                        return Err(invalid(format!("{path}.checks[{j}]"), format!("second {} check", c.name())));
                    }
                }
            }
            Task::Clt { model, bins, .. } => {
                if *bins == 0 {
                    return Err(invalid(format!("{path}.bins"), "need at least one bin"));
                }
                if let CltModel::Exponential { eps, .. } = model {
                    if eps[1] == 0 || eps[0] == 0 || eps[0] >= eps[1] {
                        return Err(invalid(format!("{path}.eps"), "need 0 < ε < 1"));
                    }
                }
            }
            Task::Flatness { ladder, .. } | Task::KkVerify { ladder } => {
                let p = format!("{path}.ladder");
                if ladder.q.is_empty() {
                    return Err(invalid(format!("{p}.q"), "empty q ladder"));
                }
                if let Some(i) = ladder.q.iter().position(|&q| q < 2) {
                    return Err(invalid(format!("{p}.q[{i}]"), "q must be at least 2"));
                }
                positive(&format!("{p}.beta"), ladder.beta)?;
                positive(&format!("{p}.m"), ladder.m)?;
                positive(&format!("{p}.tau1"), ladder.tau1)?;
                if !(ladder.tau2 > ladder.tau1) {
                    return Err(invalid(format!("{p}.tau2"), "need tau2 > tau1"));
                }
                if ladder.grid < 2 {
                    return Err(invalid(format!("{p}.grid"), "need at least 2 points"));
                }
            }
        }
        Ok(())
    }
}

impl Check {
    pub fn name(&self) -> &'static str {
        match self {
            Check::Normalization { .. } => "normalization",
            Check::Peyriere { .. } => "peyriere",
            Check::Dirichlet { .. } => "dirichlet",
            Check::Totient { .. } => "totient",
            Check::Bumps { .. } => "bumps",
            Check::Subsets { .. } => "subsets",
            Check::Limsup { .. } => "limsup",
            Check::Ratio { .. } => "ratio",
            Check::Guenais { .. } => "guenais",
            Check::KlemesReinhold => "klemes-reinhold",
            Check::KlemesRatio => "klemes-ratio",
            Check::Mahler { .. } => "mahler",
        }
    }

    fn validate(&self, path: &str, depth: Option<usize>) -> Result<(), ConfigError> {
        let need = || depth.ok_or_else(|| invalid(path, "this check needs a tower"));
        match self {
            Check::Normalization { indices } | Check::Subsets { indices } | Check::Mahler { indices } => {
                within_depth(&format!("{path}.indices"), indices, need()?)?;
            }
            Check::Peyriere { indices } => {
                within_depth(&format!("{path}.indices"), indices, need()?)?;
            }
            Check::Limsup { indices, m } => {
                let d = need()?;
                within_depth(&format!("{path}.indices"), indices, d)?;
                within_depth(&format!("{path}.m"), &[*m], d)?;
            }
            Check::Ratio { indices, copies, max_l } => {
                within_depth(&format!("{path}.indices"), indices, need()?)?;
                if *max_l == 0 || max_l + 1 > *copies {
                    return Err(invalid(format!("{path}.max_l"), "need 1 ≤ max_l < copies"));
                }
            }
            Check::Guenais { k_max } => {
                if *k_max == 0 || *k_max > need()? {
                    return Err(invalid(format!("{path}.k_max"), "k_max outside 1..=depth"));
                }
            }
            Check::KlemesReinhold | Check::KlemesRatio => {
                need()?;
            }
            Check::Dirichlet { l_max, points } => {
                if *l_max == 0 || *points == 0 {
                    return Err(invalid(path, "l_max and points must be positive"));
                }
            }
            Check::Totient { x } => {
                if *x == 0 {
                    return Err(invalid(format!("{path}.x"), "x must be positive"));
                }
            }
            Check::Bumps { alpha, grid, .. } => {
                positive(&format!("{path}.alpha"), *alpha)?;
                if *grid == 0 {
                    return Err(invalid(format!("{path}.grid"), "grid must be positive"));
                }
            }
        }
        Ok(())
    }
}

impl TowerConfig {
    pub fn depth(&self) -> usize {
        self.depth.unwrap_or(self.p.len())
    }

    /// Checks shapes and returns the depth.
    fn validate(&self, path: &str) -> Result<usize, ConfigError> {
        if self.p.is_empty() {
            return Err(invalid(format!("{path}.p"), "no stages"));
        }
        if let Some(i) = self.p.iter().position(|&p| p < 1) {
            return Err(invalid(format!("{path}.p[{i}]"), "cutting parameters must be at least 1"));
        }
        let depth = self.depth();
        if depth == 0 || depth > self.p.len() {
            return Err(invalid(format!("{path}.depth"), format!("depth {depth} outside 1..={}", self.p.len())));
        }
        if let Some(h) = self.base_height {
            positive(&format!("{path}.base_height"), h)?;
        }
        match &self.family {
            FamilyConfig::Explicit { spacers } => {
                if spacers.len() < depth {
                    return Err(invalid(
                        format!("{path}.spacers"),
                        format!("{} rows for depth {depth}", spacers.len()),
                    ));
                }
                for (k, row) in spacers.iter().enumerate().take(self.p.len()) {
                    if row.len() != self.p[k] {
                        return Err(invalid(
                            format!("{path}.spacers[{k}]"),
                            format!("row has {} entries, p[{k}] = {}", row.len(), self.p[k]),
                        ));
                    }
                    if let Some(j) = row.iter().position(|x| !(x.is_finite() && *x >= 0.0)) {
                        return Err(invalid(format!("{path}.spacers[{k}][{j}]"), "spacers must be finite and nonnegative"));
                    }
                }
            }
            FamilyConfig::Random { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && *lo >= 0.0 && hi >= lo) {
                    return Err(invalid(format!("{path}.hi"), "need 0 ≤ lo ≤ hi"));
                }
            }
            FamilyConfig::Ornstein { t, last_scale } => {
                if t.len() < depth {
                    return Err(invalid(format!("{path}.t"), format!("{} values for depth {depth}", t.len())));
                }
                if let Some(i) = t.iter().position(|x| !(x.is_finite() && *x > 0.0)) {
                    return Err(invalid(format!("{path}.t[{i}]"), "t_k must be positive"));
                }
                positive(&format!("{path}.last_scale"), *last_scale)?;
            }
            FamilyConfig::Linear { alpha } => positive(&format!("{path}.alpha"), *alpha)?,
            FamilyConfig::Exponential { stages, .. } => {
                if stages.len() < depth {
                    return Err(invalid(format!("{path}.stages"), format!("{} stages for depth {depth}", stages.len())));
                }
                for (k, st) in stages.iter().enumerate() {
                    positive(&format!("{path}.stages[{k}].m"), st.m)?;
                    if st.eps[1] == 0 || st.eps[0] == 0 || st.eps[0] >= st.eps[1] {
                        return Err(invalid(format!("{path}.stages[{k}].eps"), "need 0 < ε < 1"));
                    }
                }
            }
            FamilyConfig::Zero => {}
        }
        Ok(depth)
    }

    pub fn cutting_spec(&self, key: &StreamKey) -> CuttingSpec {
        let family = match &self.family {
            FamilyConfig::Zero => SpacerFamily::Explicit {
                spacers: self.p.iter().map(|&p| vec![0.0; p]).collect(),
            },
            FamilyConfig::Explicit { spacers } => SpacerFamily::Explicit { spacers: spacers.clone() },
            FamilyConfig::Random { lo, hi } => SpacerFamily::Explicit {
                spacers: rankflow::stochastic::uniform_spacers(&self.p, *lo, *hi, key),
            },
            FamilyConfig::Ornstein { t, last_scale } => SpacerFamily::Ornstein {
                t: t.clone(),
                key: key.clone(),
                last: if *last_scale == 1.0 { LastOffset::EqualsT } else { LastOffset::ScaledT(*last_scale) },
            },
            FamilyConfig::Linear { alpha } => SpacerFamily::LinearStaircase { alpha: *alpha },
            FamilyConfig::Exponential { stages, plain_norm } => SpacerFamily::ExponentialStaircase {
                stages: stages
                    .iter()
                    .map(|s| ExpStage {
                        m: s.m,
                        eps: Rational::new(s.eps[0], s.eps[1]),
                    })
                    .collect(),
                norm: if *plain_norm { OmegaNorm::Plain } else { OmegaNorm::MinusOne },
            },
        };
        let spec = CuttingSpec::new(self.p.clone(), family);
        match self.base_height {
            Some(h) => spec.with_base_height(h),
            None => spec,
        }
    }
}
