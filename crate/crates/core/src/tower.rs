//! Cutting-and-stacking towers of rank-one flows.
//!
//! Stage `k` cuts the tower of height `h_k` into `p_k` columns, puts
//! `s_{k+1,j}` spacers on column `j` and stacks. The return times of the base
//! to itself inside the new tower are the frequencies
//! `a_{k,j} = j·h_k + s̄_k(j)`, `j = 0..p_k−1`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keyed::StreamKey;
use crate::stochastic::{ornstein_draw, OrnsteinDraw};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TowerError {
    #[error("depth must be at least 1")]
    ZeroDepth,
    #[error("depth {depth} exceeds the {available} stages described by the cutting spec")]
    DepthTooLarge { depth: usize, available: usize },
    #[error("cutting number p[{k}] = {p} is below 2")]
    BadCut { k: usize, p: usize },
    #[error("negative spacer s[{}][{j}] = {value} at stage {k}", k + 1)]
    NegativeSpacer { k: usize, j: usize, value: f64 },
    #[error("spacer row {k} has {found} entries, expected p[{k}] = {expected}")]
    SpacerRowLength { k: usize, found: usize, expected: usize },
    #[error("non-finite parameter: {0}")]
    NonFinite(String),
    #[error("height overflow at stage {k}")]
    HeightOverflow { k: usize },
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

/// Exact rational, used for the exponential-staircase ε_n.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rational {
    pub num: u64,
    pub den: u64,
}

impl Rational {
    pub fn new(num: u64, den: u64) -> Self {
        Rational { num, den }
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// Rule for the deterministic last Ornstein offset `x_{k,p_k}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LastOffset {
    /// `x_{k,p_k} = t_k`.
    EqualsT,
    /// `x_{k,p_k} = c·t_k`.
    ScaledT(f64),
    /// A fixed positive value.
    Fixed(f64),
}

impl LastOffset {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            LastOffset::EqualsT => t,
            LastOffset::ScaledT(c) => c * t,
            LastOffset::Fixed(x) => x,
        }
    }
}

/// Which ω_n is stored. Spacers only depend on differences and coincide.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum OmegaNorm {
    /// `ω_n(p) = (m/ε²)·p_n·(exp(εp/p_n) − 1)`, so `ω_n(0) = 0`.
    #[default]
    MinusOne,
    /// `ω_n(p) = (m/ε²)·p_n·exp(εp/p_n)`.
    Plain,
}

/// Parameters of one exponential-staircase stage; `q_n` is the stage's `p_n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpStage {
    pub m: f64,
    pub eps: Rational,
}

/// ω_n(p) for one exponential stage.
pub fn omega(m: f64, eps: f64, q: f64, p: f64, norm: OmegaNorm) -> f64 {
    let scale = m / (eps * eps) * q;
    match norm {
        OmegaNorm::MinusOne => scale * (eps * p / q).exp_m1(),
        OmegaNorm::Plain => scale * (eps * p / q).exp(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SpacerFamily {
    /// `spacers[k][j-1] = s_{k+1,j}`, one row of length `p_k` per stage.
    Explicit { spacers: Vec<Vec<f64>> },
    /// Ornstein's randomised spacers with per-stage `t_k`.
    Ornstein {
        t: Vec<f64>,
        key: StreamKey,
        last: LastOffset,
    },
    /// Spacers `s_{k+1,j} = j·α` for `j < p_k`, last spacer 0.
    LinearStaircase { alpha: f64 },
    /// Spacers from differences of ω_n.
    ExponentialStaircase {
        stages: Vec<ExpStage>,
        norm: OmegaNorm,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CuttingSpec {
    pub p: Vec<usize>,
    pub family: SpacerFamily,
    /// Height of the base rectangle, 1 unless a construction asks otherwise.
    pub base_height: f64,
}

impl CuttingSpec {
    pub fn new(p: Vec<usize>, family: SpacerFamily) -> Self {
        CuttingSpec {
            p,
            family,
            base_height: 1.0,
        }
    }

    pub fn with_base_height(mut self, h0: f64) -> Self {
        self.base_height = h0;
        self
    }

    pub fn zero_spacers(p: Vec<usize>) -> Self {
        let spacers = p.iter().map(|&pk| vec![0.0; pk]).collect();
        CuttingSpec::new(p, SpacerFamily::Explicit { spacers })
    }

    /// Number of stages this spec can build.
    pub fn max_depth(&self) -> usize {
        let fam = match &self.family {
            SpacerFamily::Explicit { spacers } => spacers.len(),
            SpacerFamily::Ornstein { t, .. } => t.len(),
            SpacerFamily::LinearStaircase { .. } => usize::MAX,
            SpacerFamily::ExponentialStaircase { stages, .. } => stages.len(),
        };
        fam.min(self.p.len())
    }
}

/// Per-stage data specific to the construction family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum StageOrigin {
    Explicit,
    Ornstein { t: f64, draw: OrnsteinDraw },
    Linear { alpha: f64 },
    Exponential { m: f64, eps: Rational, conditions: ExpConditions },
}

/// Truth values of the exponential-staircase growth conditions at one stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpConditions {
    /// (1): `m_n ≥ ε_n·h_n`.
    pub m_dominates_height: bool,
    /// True in the regime `p_n ≥ m_n/ε_n` of condition (2).
    pub large_p_regime: bool,
    /// `log(p_n)/m_n`, required to tend to 0 in both regimes.
    pub log_p_over_m: f64,
    /// (3) second clause: `log(p_n)/p_n ≤ ε_n`; only binding when `p_n < m_n/ε_n`.
    pub log_p_over_p_below_eps: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TowerLevel {
    pub k: usize,
    pub p: usize,
    pub h: f64,
    /// `s_{k+1,j}` for `j = 1..=p`.
    pub spacers: Vec<f64>,
    /// `s̄_k(j)` for `j = 0..p`, with `s̄_k(0) = 0`.
    pub sbar: Vec<f64>,
    /// `a_{k,j} = j·h_k + s̄_k(j)`.
    pub freq: Vec<f64>,
    pub origin: StageOrigin,
}

impl TowerLevel {
    pub fn frequencies(&self) -> &[f64] {
        &self.freq
    }

    /// Height of the next tower, `p·h + Σ_j s_{k+1,j}`.
    pub fn next_height(&self) -> f64 {
        self.p as f64 * self.h + self.spacers.iter().sum::<f64>()
    }

    /// Largest return time `a_{k,p−1}`.
    pub fn max_frequency(&self) -> f64 {
        *self.freq.last().unwrap()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tower {
    pub levels: Vec<TowerLevel>,
    /// `h_0..=h_depth`.
    pub heights: Vec<f64>,
}

impl Tower {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, k: usize) -> &TowerLevel {
        &self.levels[k]
    }

    pub fn height(&self, k: usize) -> f64 {
        self.heights[k]
    }

    /// One CSV row per `(k, j)`: `k,h_k,j,sbar,freq`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,h_k,j,sbar,freq\n");
        for lvl in &self.levels {
            for j in 0..lvl.p {
                out.push_str(&format!(
                    "{},{:e},{},{:e},{:e}\n",
                    lvl.k, lvl.h, j, lvl.sbar[j], lvl.freq[j]
                ));
            }
        }
        out
    }
}

fn check_finite(x: f64, what: &str) -> Result<(), TowerError> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(TowerError::NonFinite(what.to_string()))
    }
}

/// Spacers within this relative distance below zero are rounding, not errors.
const SPACER_ROUNDING: f64 = 1e-12;

pub fn build_tower(spec: &CuttingSpec, depth: usize) -> Result<Tower, TowerError> {
    if depth == 0 {
        return Err(TowerError::ZeroDepth);
    }
    if depth > spec.max_depth() {
        return Err(TowerError::DepthTooLarge {
            depth,
            available: spec.max_depth(),
        });
    }
    check_finite(spec.base_height, "base_height")?;
    if spec.base_height <= 0.0 {
        return Err(TowerError::Invalid("base_height must be positive".into()));
    }
    let mut heights = vec![spec.base_height];
    let mut levels = Vec::with_capacity(depth);
    for k in 0..depth {
        let p = spec.p[k];
        if p < 2 {
            return Err(TowerError::BadCut { k, p });
        }
        let h = heights[k];
        let (spacers, freq_override, origin) = stage_spacers(spec, k, p, h)?;
        for (j0, &s) in spacers.iter().enumerate() {
            check_finite(s, &format!("spacer s[{}][{}]", k + 1, j0 + 1))?;
            if s < 0.0 {
                return Err(TowerError::NegativeSpacer {
                    k,
                    j: j0 + 1,
                    value: s,
                });
            }
        }
        let mut sbar = Vec::with_capacity(p);
        let mut acc = 0.0;
        sbar.push(0.0);
        for &s in &spacers[..p - 1] {
            acc += s;
            sbar.push(acc);
        }
        let freq = match freq_override {
            Some(f) => {
                // Keep s̄ consistent with the directly evaluated frequencies.
                for j in 0..p {
                    sbar[j] = f[j] - j as f64 * h;
                }
                f
            }
            None => (0..p).map(|j| j as f64 * h + sbar[j]).collect(),
        };
        let next = match &origin {
            StageOrigin::Exponential { .. } => freq[p - 1] + h + spacers[p - 1],
            _ => p as f64 * h + spacers.iter().sum::<f64>(),
        };
        if !next.is_finite() {
            return Err(TowerError::HeightOverflow { k });
        }
        heights.push(next);
        levels.push(TowerLevel {
            k,
            p,
            h,
            spacers,
            sbar,
            freq,
            origin,
        });
    }
    Ok(Tower { levels, heights })
}

type StageData = (Vec<f64>, Option<Vec<f64>>, StageOrigin);

fn stage_spacers(spec: &CuttingSpec, k: usize, p: usize, h: f64) -> Result<StageData, TowerError> {
    match &spec.family {
        SpacerFamily::Explicit { spacers } => {
            let row = &spacers[k];
            if row.len() != p {
                return Err(TowerError::SpacerRowLength {
                    k,
                    found: row.len(),
                    expected: p,
                });
            }
            Ok((row.clone(), None, StageOrigin::Explicit))
        }
        SpacerFamily::Ornstein { t, key, last } => {
            let tk = t[k];
            check_finite(tk, "t_k")?;
            if tk <= 0.0 {
                return Err(TowerError::Invalid(format!("t[{k}] must be positive")));
            }
            let xp = last.value(tk);
            check_finite(xp, "last offset")?;
            if xp <= 0.0 {
                return Err(TowerError::Invalid(format!("last offset at stage {k} must be positive")));
            }
            let draw = ornstein_draw(k, p, tk, xp, key, 0);
            let spacers = draw.spacers();
            Ok((spacers, None, StageOrigin::Ornstein { t: tk, draw }))
        }
        SpacerFamily::LinearStaircase { alpha } => {
            check_finite(*alpha, "alpha")?;
            if *alpha <= 0.0 {
                return Err(TowerError::Invalid("alpha must be positive".into()));
            }
            let mut spacers: Vec<f64> = (1..p).map(|j| j as f64 * alpha).collect();
            spacers.push(0.0);
            Ok((spacers, None, StageOrigin::Linear { alpha: *alpha }))
        }
        SpacerFamily::ExponentialStaircase { stages, .. } => {
            let st = stages[k];
            check_finite(st.m, "m_n")?;
            if st.m <= 0.0 {
                return Err(TowerError::Invalid(format!("m[{k}] must be positive")));
            }
            if st.eps.den == 0 || st.eps.num == 0 || st.eps.num >= st.eps.den {
                return Err(TowerError::Invalid(format!("eps[{k}] must lie in (0,1)")));
            }
            let eps = st.eps.value();
            let q = p as f64;
            let scale = st.m / (eps * eps) * q;
            let step = (eps / q).exp_m1();
            let mut spacers = Vec::with_capacity(p);
            for j in 1..=p {
                let diff = scale * (eps * (j - 1) as f64 / q).exp() * step;
                let mut s = diff - h;
                if s < 0.0 && -s <= SPACER_ROUNDING * h {
                    s = 0.0;
                }
                if s < 0.0 {
                    return Err(TowerError::NegativeSpacer { k, j, value: s });
                }
                spacers.push(s);
            }
            let freq: Vec<f64> = (0..p)
                .map(|j| omega(st.m, eps, q, j as f64, OmegaNorm::MinusOne))
                .collect();
            let ln_p = q.ln();
            let conditions = ExpConditions {
                m_dominates_height: st.m >= eps * h,
                large_p_regime: q >= st.m / eps,
                log_p_over_m: ln_p / st.m,
                log_p_over_p_below_eps: ln_p / q <= eps,
            };
            Ok((
                spacers,
                Some(freq),
                StageOrigin::Exponential {
                    m: st.m,
                    eps: st.eps,
                    conditions,
                },
            ))
        }
    }
}

/// Verdict of the fixed divergence heuristic: partial sums at `N` and `2N`
/// differing by more than 10% count as diverging.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Trend {
    Bounded,
    Diverging,
}

/// Applies the doubling rule to a sequence of nondecreasing partial sums.
pub fn doubling_trend(partial: &[f64]) -> Trend {
    let n = partial.len();
    if n < 2 {
        return Trend::Bounded;
    }
    let half = partial[n / 2 - 1];
    let full = partial[n - 1];
    if full > 1.1 * half && full - half > 1e-300 {
        Trend::Diverging
    } else {
        Trend::Bounded
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteMeasureReport {
    pub terms: Vec<f64>,
    pub partial_sums: Vec<f64>,
    pub trend: Trend,
}

/// Partial sums of `Σ_k (Σ_j s_{k+1,j})/(p_k·h_k)`, finite iff the flow's
/// invariant measure is finite.
pub fn finite_measure_partial_sums(spec: &CuttingSpec, depth: usize) -> Result<FiniteMeasureReport, TowerError> {
    let tower = build_tower(spec, depth)?;
    let terms: Vec<f64> = tower
        .levels
        .iter()
        .map(|l| l.spacers.iter().sum::<f64>() / (l.p as f64 * l.h))
        .collect();
    let mut acc = 0.0;
    let partial_sums: Vec<f64> = terms
        .iter()
        .map(|t| {
            acc += t;
            acc
        })
        .collect();
    let trend = doubling_trend(&partial_sums);
    Ok(FiniteMeasureReport {
        terms,
        partial_sums,
        trend,
    })
}

pub fn frequencies(level: &TowerLevel) -> Vec<f64> {
    level.freq.clone()
}
