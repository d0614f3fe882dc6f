//! Singularity and absolute-continuity diagnostics on finite towers.
//!
//! Everything here instantiates a hypothesis or a quantity from a criterion at
//! finite scale. Verdicts are diagnostics, never proofs.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fejerquad::{integrate_many, kernel, mahler, weighted_ft_many, Adaptivity, QuadConfig, QuadError};
use crate::riesz::{ProductChain, RieszError};
use crate::tower::{doubling_trend, StageOrigin, Tower, TowerLevel, Trend};
use crate::trigpoly::{dirichlet, stage_poly, TrigPoly};

#[derive(Debug, Error, Clone)]
pub enum CriteriaError {
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Riesz(#[from] RieszError),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("‖P_{k}‖₁ = {norm} exceeds 1; quadrature fault")]
    QuadratureFault { k: usize, norm: f64 },
    #[error("{what} = {value} exceeds the guard {guard}")]
    Guard { what: String, value: f64, guard: f64 },
}

/// Uniform record for the CLI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub criterion: String,
    pub tower_id: String,
    pub parameters: BTreeMap<String, f64>,
    pub series: BTreeMap<String, Vec<f64>>,
    pub verdict: String,
}

// ---------------------------------------------------------------------------
// Bourgain products

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BourgainSeries {
    /// `β_0 = 1, β_1, …, β_L`.
    pub beta: Vec<f64>,
    pub error_estimates: Vec<f64>,
}

/// `β_ℓ = ∫ Π_{j≤ℓ} |P_{n_j}| dλ_s` for every prefix of the chain.
pub fn bourgain_sequence(chain: &ProductChain, s: f64, cfg: &QuadConfig) -> Result<BourgainSeries, CriteriaError> {
    let l = chain.len();
    if l == 0 {
        return Ok(BourgainSeries {
            beta: vec![1.0],
            error_estimates: vec![0.0],
        });
    }
    let polys = chain.polys();
    let eval = |th: f64, out: &mut [Complex64]| {
        let mut r = 1.0;
        for (j, p) in polys.iter().enumerate() {
            r *= p.eval(th).norm();
            out[j] = Complex64::new(r, 0.0);
        }
        r
    };
    let res = integrate_many(&eval, l, chain.bandwidth(), &[0.0], s, cfg, Adaptivity::Off)?;
    let mut beta = vec![1.0];
    let mut err = vec![0.0];
    for r in res {
        beta.push(r.value.re);
        err.push(r.abs_error_estimate);
    }
    Ok(BourgainSeries { beta, error_estimates: err })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetCheck {
    /// Bit `i` selects chain position `i`.
    pub mask: u64,
    pub beta_subset: f64,
    /// `β_𝒩 − β_full²`; nonnegative when the inequality holds.
    pub slack: f64,
}

/// `(∫ Π_all |P|)² ≤ ∫ Π_{k∈𝒩} |P|` for every nonempty subset 𝒩.
pub fn cs_subset_check(chain: &ProductChain, s: f64, cfg: &QuadConfig) -> Result<Vec<SubsetCheck>, CriteriaError> {
    let l = chain.len();
    if l == 0 || l > 16 {
        return Err(CriteriaError::Invalid(format!("subset check needs 1..=16 stages, got {l}")));
    }
    let masks = (1u64 << l) - 1;
    let polys = chain.polys();
    let eval = |th: f64, out: &mut [Complex64]| {
        let mods: Vec<f64> = polys.iter().map(|p| p.eval(th).norm()).collect();
        for m in 1..=masks {
            let mut r = 1.0;
            for (i, v) in mods.iter().enumerate() {
                if m >> i & 1 == 1 {
                    r *= v;
                }
            }
            out[(m - 1) as usize] = Complex64::new(r, 0.0);
        }
        0.0
    };
    let res = integrate_many(&eval, masks as usize, chain.bandwidth(), &[0.0], s, cfg, Adaptivity::Off)?;
    let full = res[(masks - 1) as usize].value.re;
    Ok((1..=masks)
        .map(|m| {
            let b = res[(m - 1) as usize].value.re;
            SubsetCheck {
                mask: m,
                beta_subset: b,
                slack: b - full * full,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimsupCheck {
    pub int_q: f64,
    pub int_q_p: f64,
    pub int_q_p2: f64,
    pub int_q_dev: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs − lhs`.
    pub slack: f64,
}

/// `∫Q|P_m| ≤ ½(∫Q + ∫Q|P_m|²) − ⅛(∫Q·||P_m|² − 1|)²` with `Q = Π_j |P_{n_j}|`.
pub fn limsup_inequality_check(tower: &Tower, indices: &[usize], m: usize, s: f64, cfg: &QuadConfig) -> Result<LimsupCheck, CriteriaError> {
    if indices.iter().any(|&i| i >= m) {
        return Err(CriteriaError::Invalid(format!("stage {m} must exceed every chain index {indices:?}")));
    }
    if m >= tower.depth() {
        return Err(CriteriaError::Invalid(format!("stage {m} beyond depth {}", tower.depth())));
    }
    let q = ProductChain::from_tower(tower, indices)?;
    let pm = stage_poly(tower.level(m));
    limsup_with(&q, &pm, s, cfg)
}

/// The same inequality for an arbitrary chain `Q` and polynomial `P`.
pub fn limsup_with(q: &ProductChain, pm: &TrigPoly, s: f64, cfg: &QuadConfig) -> Result<LimsupCheck, CriteriaError> {
    let eval = |th: f64, out: &mut [Complex64]| {
        let qv = q.modulus(th);
        let a = pm.eval(th).norm();
        out[0] = Complex64::new(qv, 0.0);
        out[1] = Complex64::new(qv * a, 0.0);
        out[2] = Complex64::new(qv * a * a, 0.0);
        out[3] = Complex64::new(qv * (a * a - 1.0).abs(), 0.0);
        0.0
    };
    let band = q.bandwidth() + pm.frequencies().last().copied().unwrap_or(0.0) * 2.0;
    let r = integrate_many(&eval, 4, band, &[0.0], s, cfg, Adaptivity::Off)?;
    let v: Vec<f64> = r.iter().map(|x| x.value.re).collect();
    let lhs = v[1];
    let rhs = 0.5 * (v[0] + v[2]) - 0.125 * v[3] * v[3];
    Ok(LimsupCheck {
        int_q: v[0],
        int_q_p: v[1],
        int_q_p2: v[2],
        int_q_dev: v[3],
        lhs,
        rhs,
        slack: rhs - lhs,
    })
}

// ---------------------------------------------------------------------------
// Series criteria

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuenaisReport {
    pub l1_norms: Vec<f64>,
    pub terms: Vec<f64>,
    pub partial_sums: Vec<f64>,
    pub trend: Trend,
}

/// Tolerance on `‖P_k‖₁ ≤ 1` before the quadrature is blamed.
pub const L1_FAULT: f64 = 1e-6;

/// Partial sums of `Σ_k √(1 − ‖P_k‖₁²)`, norms in `L¹(λ_s)`.
pub fn guenais_sum(tower: &Tower, k_max: usize, s: f64, cfg: &QuadConfig) -> Result<GuenaisReport, CriteriaError> {
    if k_max == 0 || k_max > tower.depth() {
        return Err(CriteriaError::Invalid(format!("need 1 ≤ K ≤ {}", tower.depth())));
    }
    let polys: Vec<TrigPoly> = (0..k_max).map(|k| stage_poly(tower.level(k))).collect();
    let eval = |th: f64, out: &mut [Complex64]| {
        for (k, p) in polys.iter().enumerate() {
            out[k] = Complex64::new(p.eval(th).norm(), 0.0);
        }
        0.0
    };
    let band = polys.iter().map(|p| p.frequencies().last().copied().unwrap_or(0.0)).fold(0.0, f64::max);
    let res = integrate_many(&eval, k_max, band, &[0.0], s, cfg, Adaptivity::Off)?;
    let mut norms = Vec::with_capacity(k_max);
    let mut terms = Vec::with_capacity(k_max);
    let mut partial = Vec::with_capacity(k_max);
    let mut acc = 0.0;
    for (k, r) in res.iter().enumerate() {
        let n = r.value.re;
        if n > 1.0 + L1_FAULT {
            return Err(CriteriaError::QuadratureFault { k, norm: n });
        }
        let term = (1.0 - n.min(1.0).powi(2)).sqrt();
        acc += term;
        norms.push(n);
        terms.push(term);
        partial.push(acc);
    }
    let trend = doubling_trend(&partial);
    Ok(GuenaisReport {
        l1_norms: norms,
        terms,
        partial_sums: partial,
        trend,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesVerdict {
    pub partial_sums: Vec<f64>,
    pub trend: Trend,
    pub verdict: String,
}

/// Partial sums of `Σ 1/p_n²`. Divergence is the criterion's hypothesis.
pub fn klemes_reinhold_check(p: &[usize]) -> SeriesVerdict {
    let mut acc = 0.0;
    let partial_sums: Vec<f64> = p
        .iter()
        .map(|&pn| {
            acc += 1.0 / (pn as f64).powi(2);
            acc
        })
        .collect();
    let trend = doubling_trend(&partial_sums);
    let verdict = match trend {
        Trend::Diverging => "singular (diagnostic): Σ 1/p_n² diverges",
        Trend::Bounded => "criterion inconclusive: Σ 1/p_n² converges",
    }
    .to_string();
    SeriesVerdict { partial_sums, trend, verdict }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioVerdict {
    pub ratios: Vec<f64>,
    pub tends_to_zero: bool,
    pub verdict: String,
}

/// `p_n³/h_n` per stage. A sequence falling below 1% of its peak and still
/// decreasing over its second half counts as tending to zero.
pub fn klemes_ratio(tower: &Tower) -> RatioVerdict {
    let ratios: Vec<f64> = tower.levels.iter().map(|l| (l.p as f64).powi(3) / l.h).collect();
    let peak = ratios.iter().copied().fold(0.0, f64::max);
    let half = ratios.len() / 2;
    let decreasing = ratios[half..].windows(2).all(|w| w[1] <= w[0]);
    let tends_to_zero = ratios.len() >= 2 && decreasing && *ratios.last().unwrap() <= 0.01 * peak;
    let verdict = if tends_to_zero {
        "singular (diagnostic): p_n³/h_n → 0"
    } else {
        "criterion inconclusive"
    }
    .to_string();
    RatioVerdict {
        ratios,
        tends_to_zero,
        verdict,
    }
}

// ---------------------------------------------------------------------------
// Peyrière test points

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeyrierePoint {
    pub label: String,
    pub t: f64,
    pub value: f64,
    pub expected: f64,
    pub abs_error_estimate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeyriereReport {
    /// `t_k = d_{n_k}`, the largest frequency difference of stage `n_k`.
    pub test_points: Vec<f64>,
    pub points: Vec<PeyrierePoint>,
    /// `|ν̂_full(t) − ν̂_prefix(t)|` at points inside the prefix's spectrum radius.
    pub stability: Vec<(f64, f64)>,
    pub max_deviation: f64,
    pub max_stability_change: f64,
}

/// `ν̂` of `Π_j |P_{n_j}|²` at `0`, `±t_k` and `t_k ± t_j`, with the expected
/// values `1`, `1/p_{n_k}` and products.
pub fn peyriere_points(tower: &Tower, indices: &[usize], s: f64, cfg: &QuadConfig) -> Result<PeyriereReport, CriteriaError> {
    if indices.len() < 2 {
        return Err(CriteriaError::Invalid("need at least two test stages".into()));
    }
    if indices.windows(2).any(|w| w[1] < w[0] + 3) {
        return Err(CriteriaError::Invalid(format!("indices {indices:?} need gaps of at least 3")));
    }
    let chain = ProductChain::from_tower(tower, indices)?;
    let d: Vec<f64> = indices
        .iter()
        .map(|&n| {
            let f = &tower.level(n).freq;
            f[f.len() - 1] - f[0]
        })
        .collect();
    let inv_p: Vec<f64> = indices.iter().map(|&n| 1.0 / tower.level(n).p as f64).collect();
    for i in 0..d.len() {
        for j in 0..i {
            if (d[i] - d[j]).abs() <= s {
                return Err(CriteriaError::Invalid(format!("|t_{i} − t_{j}| ≤ s")));
            }
        }
    }
    let mut pts: Vec<(String, f64, f64)> = vec![("0".into(), 0.0, 1.0)];
    for (k, &t) in d.iter().enumerate() {
        pts.push((format!("t{k}"), t, inv_p[k]));
        pts.push((format!("-t{k}"), -t, inv_p[k]));
    }
    for k in 0..d.len() {
        for j in 0..k {
            pts.push((format!("t{j}+t{k}"), d[j] + d[k], inv_p[j] * inv_p[k]));
            pts.push((format!("t{k}-t{j}"), d[k] - d[j], inv_p[j] * inv_p[k]));
        }
    }
    let ts: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let full = weighted_ft_many(&chain.squared(), &ts, s, cfg)?;
    let points: Vec<PeyrierePoint> = pts
        .iter()
        .zip(&full)
        .map(|((label, t, e), r)| PeyrierePoint {
            label: label.clone(),
            t: *t,
            value: r.value.re,
            expected: *e,
            abs_error_estimate: r.abs_error_estimate,
        })
        .collect();
    // Truncating the last stage must not move ν̂ on |t| < q of the prefix.
    let prefix = chain.prefix(chain.len() - 1);
    let q: f64 = d[..d.len() - 1].iter().sum();
    let inner: Vec<usize> = (0..ts.len()).filter(|&i| ts[i].abs() < q).collect();
    let inner_ts: Vec<f64> = inner.iter().map(|&i| ts[i]).collect();
    let short = weighted_ft_many(&prefix.squared(), &inner_ts, s, cfg)?;
    let stability: Vec<(f64, f64)> = inner.iter().zip(&short).map(|(&i, r)| (ts[i], (full[i].value.re - r.value.re).abs())).collect();
    let max_deviation = points.iter().map(|p| (p.value - p.expected).abs()).fold(0.0, f64::max);
    let max_stability_change = stability.iter().map(|x| x.1).fold(0.0, f64::max);
    Ok(PeyriereReport {
        test_points: d,
        points,
        stability,
        max_deviation,
        max_stability_change,
    })
}

// ---------------------------------------------------------------------------
// Dirichlet lower bound

/// Grid points `x` with `|x| ≤ 1/(8ℓ)` where `Re D_ℓ(2πx) < ℓ/√2`, over
/// `ℓ = 1..=l_max` with `points` equally spaced values each.
pub fn dirichlet_bound_violations(l_max: u64, points: usize) -> Vec<(u64, f64)> {
    let mut bad = Vec::new();
    for l in 1..=l_max {
        let r = 1.0 / (8.0 * l as f64);
        for i in 0..points {
            let x = if points == 1 { 0.0 } else { -r + 2.0 * r * i as f64 / (points - 1) as f64 };
            let d = dirichlet(l, 2.0 * PI * x).expect("ℓ ≥ 1");
            if d.re < l as f64 / 2f64.sqrt() {
                bad.push((l, x));
            }
        }
    }
    bad
}

// ---------------------------------------------------------------------------
// Klemes–Parreau bumps

/// Largest `p_n` accepted by `bump_family`.
pub const BUMP_GUARD: u32 = 20_000;

/// Bumps of half-width `1/(2p²)` in `x = αθ/2π` around the Farey centers
/// `j/k`, `gcd(j, k) = 1`, `1 ≤ j < k`, `p/4 ≤ k ≤ 3p/4`.
#[derive(Clone, Debug, PartialEq)]
pub struct BumpFamily {
    pub p: u32,
    pub alpha: f64,
    /// `(j, k)` sorted by `j/k`.
    centers: Vec<(u32, u32)>,
    k_lo: u32,
    k_hi: u32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BumpHit {
    /// Number of bumps containing the point; at most one when disjoint.
    pub count: u32,
    /// The containing center, if any.
    pub center: Option<(u32, u32)>,
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

pub fn bump_family(p: u32, alpha: f64) -> Result<BumpFamily, CriteriaError> {
    if p < 8 {
        return Err(CriteriaError::Invalid(format!("p_n = {p} below 8")));
    }
    if p > BUMP_GUARD {
        return Err(CriteriaError::Guard {
            what: "p_n".into(),
            value: p as f64,
            guard: BUMP_GUARD as f64,
        });
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(CriteriaError::Invalid("α must be positive".into()));
    }
    let k_lo = p.div_ceil(4);
    let k_hi = 3 * p / 4;
    let mut centers = Vec::new();
    for k in k_lo..=k_hi {
        for j in 1..k {
            if gcd(j, k) == 1 {
                centers.push((j, k));
            }
        }
    }
    centers.sort_unstable_by(|a, b| (a.0 as f64 / a.1 as f64).total_cmp(&(b.0 as f64 / b.1 as f64)));
    Ok(BumpFamily {
        p,
        alpha,
        centers,
        k_lo,
        k_hi,
    })
}

impl BumpFamily {
    pub fn centers(&self) -> &[(u32, u32)] {
        &self.centers
    }

    pub fn k_range(&self) -> (u32, u32) {
        (self.k_lo, self.k_hi)
    }

    pub fn half_width(&self) -> f64 {
        0.5 / (self.p as f64).powi(2)
    }

    /// Exact check that neighbouring closed bumps are disjoint:
    /// `(j'k − jk')·p² > k·k'` for consecutive centers, plus ordering.
    pub fn disjoint(&self) -> bool {
        let p2 = (self.p as u128).pow(2);
        self.centers.windows(2).all(|w| {
            let (j, k) = (w[0].0 as u128, w[0].1 as u128);
            let (j2, k2) = (w[1].0 as u128, w[1].1 as u128);
            j2 * k > j * k2 && (j2 * k - j * k2) * p2 > k * k2
        })
    }

    /// `∫_0^{2π/α} Σ_k f_{n,k} dθ_α = Σ_k φ(k)/p²` (exact for disjoint bumps).
    pub fn integral(&self) -> f64 {
        self.centers.len() as f64 / (self.p as f64).powi(2)
    }

    pub fn locate(&self, theta: f64) -> BumpHit {
        let x = (self.alpha * theta / (2.0 * PI)).rem_euclid(1.0);
        let hw = self.half_width();
        let i = self.centers.partition_point(|c| (c.0 as f64 / c.1 as f64) < x);
        let mut hit = BumpHit { count: 0, center: None };
        for idx in [i.wrapping_sub(1), i] {
            if let Some(&(j, k)) = self.centers.get(idx) {
                if (x - j as f64 / k as f64).abs() <= hw {
                    hit.count += 1;
                    hit.center = Some((j, k));
                }
            }
        }
        hit
    }

    /// `Σ_k f_{n,k}(θ)`.
    pub fn sum(&self, theta: f64) -> f64 {
        self.locate(theta).count as f64
    }

    /// `F_n(θ) = Σ_k e^{i a_{n,k} θ} f_{n,k}(θ)` with frequencies from `level`.
    pub fn f_n(&self, level: &TowerLevel, theta: f64) -> Result<Complex64, CriteriaError> {
        if (level.p as u32) <= self.k_hi {
            return Err(CriteriaError::Invalid(format!("level has p = {} but bumps reach k = {}", level.p, self.k_hi)));
        }
        let hit = self.locate(theta);
        Ok(match hit.center {
            Some((_, k)) => Complex64::from_polar(hit.count as f64, level.freq[k as usize] * theta),
            None => Complex64::new(0.0, 0.0),
        })
    }
}

/// Euler's totient for `0..=n` by a linear sieve.
pub fn totients(n: usize) -> Vec<u32> {
    let mut phi = vec![0u32; n + 1];
    let mut primes = Vec::new();
    if n >= 1 {
        phi[1] = 1;
    }
    for i in 2..=n {
        if phi[i] == 0 {
            phi[i] = (i - 1) as u32;
            primes.push(i);
        }
        for &q in &primes {
            let m = i * q;
            if m > n {
                break;
            }
            if i % q == 0 {
                phi[m] = phi[i] * q as u32;
                break;
            }
            phi[m] = phi[i] * (q as u32 - 1);
        }
    }
    phi
}

pub const TOTIENT_GUARD: u64 = 100_000_000;

/// `Σ_{k≤x} φ(k)`.
pub fn totient_sum(x: u64) -> Result<u64, CriteriaError> {
    if x > TOTIENT_GUARD {
        return Err(CriteriaError::Guard {
            what: "x".into(),
            value: x as f64,
            guard: TOTIENT_GUARD as f64,
        });
    }
    Ok(totients(x as usize).iter().map(|&v| v as u64).sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KpIntegrals {
    pub re_i: f64,
    pub abs_ii: f64,
    /// `3/(4√2π²)`, shown alongside.
    pub constant: f64,
    /// Bound on the part of `λ_s` beyond the integration radius times the
    /// integrand's sup.
    pub truncation_bound: f64,
}

/// `I_n` (the `k = k'` terms of `∫ (g + ḡ)·F̄_n dλ_s`) and `II_n` (the rest)
/// for a linear staircase stage, integrated over the bump supports inside
/// `[−radius, radius]`.
pub fn kp_integrals(level: &TowerLevel, family: &BumpFamily, s: f64, radius: f64) -> Result<KpIntegrals, CriteriaError> {
    let alpha = match level.origin {
        StageOrigin::Linear { alpha } => alpha,
        _ => return Err(CriteriaError::Invalid("kp_integrals needs a linear staircase stage".into())),
    };
    if (alpha - family.alpha).abs() > 1e-15 * alpha {
        return Err(CriteriaError::Invalid("bump family α differs from the staircase α".into()));
    }
    if (level.p as u32) <= family.k_hi {
        return Err(CriteriaError::Invalid("stage too short for the bump family".into()));
    }
    let p = level.p;
    let (gx, gw) = crate::fejerquad::gauss_legendre(crate::fejerquad::GL_ORDER);
    let period = 2.0 * PI / alpha;
    let hw = family.half_width() * period;
    let m_max = (radius / period).ceil() as i64;
    let mut i_acc = crate::sum::CompensatedC::default();
    let mut all_acc = crate::sum::CompensatedC::default();
    for m in -m_max..=m_max {
        for &(j, k) in family.centers() {
            let c = period * (m as f64 + j as f64 / k as f64);
            if c.abs() > radius {
                continue;
            }
            for (x, w) in gx.iter().zip(&gw) {
                let th = c + hw * x;
                let wt = hw * w * kernel(s, th);
                let d = dirichlet((p - k as usize) as u64, k as f64 * alpha * th).expect("p > k");
                i_acc.add(d * (wt / p as f64));
                // (g + ḡ)(θ)·conj(e^{i a_k θ}) over all ℓ.
                let mut g = Complex64::new(0.0, 0.0);
                for l in 1..p {
                    g += Complex64::from_polar(1.0, level.freq[l] * th) * dirichlet((p - l) as u64, l as f64 * alpha * th).expect("p > l");
                }
                g /= p as f64;
                let total = (g + g.conj()) * Complex64::from_polar(1.0, -level.freq[k as usize] * th);
                all_acc.add(total * wt);
            }
        }
    }
    let i_n = i_acc.value();
    let ii_n = all_acc.value() - i_n;
    let tail = 4.0 / (PI * s * radius);
    Ok(KpIntegrals {
        re_i: i_n.re,
        abs_ii: ii_n.norm(),
        constant: 3.0 / (4.0 * 2f64.sqrt() * PI * PI),
        truncation_bound: tail * p as f64,
    })
}

// ---------------------------------------------------------------------------
// Mahler measures of partial products

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MahlerSequence {
    pub values: Vec<f64>,
    pub flagged: Vec<bool>,
}

/// `M_s(Π_{j≤ℓ}|P_{n_j}|²)` for `ℓ = 1..=L`.
pub fn mahler_sequence(chain: &ProductChain, s: f64, cfg: &QuadConfig) -> Result<MahlerSequence, CriteriaError> {
    let mut values = Vec::with_capacity(chain.len());
    let mut flagged = Vec::with_capacity(chain.len());
    for l in 1..=chain.len() {
        let pre = chain.prefix(l);
        let r = mahler(&pre.squared(), s, cfg)?;
        values.push(r.value);
        flagged.push(r.flagged);
    }
    Ok(MahlerSequence { values, flagged })
}
