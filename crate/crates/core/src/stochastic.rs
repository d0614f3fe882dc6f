//! Ornstein random spacers, centered polynomials and CLT experiments.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::fejerquad::{kernel, sinc};
use crate::keyed::{Domain, KeyedStream, StreamKey};
use crate::tower::{omega, OmegaNorm, Rational};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StochasticError {
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("no sample landed in [{a}, {b}] after {attempts} attempts; λ_s mass too small")]
    MassUnderflow { a: f64, b: f64, attempts: u64 },
}

/// One draw of the random offsets `x_{k,1..p_k−1}`, uniform on `[−t/2, t/2]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrnsteinDraw {
    pub k: usize,
    pub p: usize,
    pub t: f64,
    /// Deterministic `x_{k,p_k}`.
    pub last: f64,
    /// `x_{k,j}` for `j = 1..p_k−1`; `x_{k,0} = 0`.
    pub offsets: Vec<f64>,
    pub key: StreamKey,
    pub draw: u64,
}

impl OrnsteinDraw {
    /// `x_{k,j}` for `j = 0..=p_k`.
    pub fn x(&self, j: usize) -> f64 {
        if j == 0 {
            0.0
        } else if j == self.p {
            self.last
        } else {
            self.offsets[j - 1]
        }
    }

    /// `s_{k+1,j} = t_k + x_{k,j} − x_{k,j−1}` for `j = 1..=p_k`.
    pub fn spacers(&self) -> Vec<f64> {
        (1..=self.p).map(|j| (self.t + self.x(j) - self.x(j - 1)).max(0.0)).collect()
    }
}

fn offset_stream(key: &StreamKey, k: usize, draw: u64) -> KeyedStream {
    key.stream(Domain::Ornstein, k as u64, draw)
}

/// Draw `draw` of stage `k`. The offset `x_{k,j}` is value `j−1` of the
/// stream keyed by `(k, draw)`, so any single offset can be regenerated alone.
pub fn ornstein_draw(k: usize, p: usize, t: f64, last: f64, key: &StreamKey, draw: u64) -> OrnsteinDraw {
    let mut st = offset_stream(key, k, draw);
    let offsets = (1..p).map(|_| st.uniform_in(-0.5 * t, 0.5 * t)).collect();
    OrnsteinDraw {
        k,
        p,
        t,
        last,
        offsets,
        key: key.clone(),
        draw,
    }
}

/// Regenerates the single offset `x_{k,j}` of a draw, `1 ≤ j < p`.
pub fn ornstein_offset(k: usize, j: usize, t: f64, key: &StreamKey, draw: u64) -> f64 {
    let mut st = offset_stream(key, k, draw);
    st.seek(j as u64 - 1);
    st.uniform_in(-0.5 * t, 0.5 * t)
}

/// Explicit spacer rows `s_{k+1,j}` drawn uniformly from `[lo, hi)`; row `k`
/// comes from the stream keyed by `k`.
pub fn uniform_spacers(p: &[usize], lo: f64, hi: f64, key: &StreamKey) -> Vec<Vec<f64>> {
    p.iter()
        .enumerate()
        .map(|(k, &pk)| {
            let mut st = key.stream(Domain::ExplicitSpacers, k as u64, 0);
            (0..pk).map(|_| st.uniform_in(lo, hi)).collect()
        })
        .collect()
}

/// `P_k(θ) = (1/√p)·Σ_{j<p} e^{iθ(j(h+t) + x_j)}` for one draw.
pub fn ornstein_poly(draw: &OrnsteinDraw, h: f64, theta: f64) -> Complex64 {
    let c = h + draw.t;
    let sum: Complex64 = (0..draw.p).map(|j| Complex64::from_polar(1.0, theta * (j as f64 * c + draw.x(j)))).sum();
    sum / (draw.p as f64).sqrt()
}

/// `E P_k(θ)` over fresh draws. The `j = 0` term is deterministic.
pub fn expected_poly(p: usize, h: f64, t: f64, theta: f64) -> Complex64 {
    let c = h + t;
    let damp = sinc(0.5 * t * theta);
    let rest: Complex64 = (1..p).map(|j| Complex64::from_polar(damp, theta * j as f64 * c)).sum();
    (Complex64::new(1.0, 0.0) + rest) / (p as f64).sqrt()
}

/// `P′_k(θ) = P_k(θ) − E P_k(θ)`.
pub fn centered_poly(draw: &OrnsteinDraw, h: f64, theta: f64) -> Complex64 {
    ornstein_poly(draw, h, theta) - expected_poly(draw.p, h, draw.t, theta)
}

/// `Var(Re P′_k(θ))` summed term by term:
/// `(1/p)·Σ_{j≥1} [½(1 + cos(2θjc)·sinc(tθ)) − (cos(θjc)·sinc(tθ/2))²]`.
pub fn predicted_variance(p: usize, h: f64, t: f64, theta: f64) -> f64 {
    let c = h + t;
    let s1 = sinc(t * theta);
    let s2 = sinc(0.5 * t * theta);
    let total: f64 = (1..p)
        .map(|j| {
            let a = theta * j as f64 * c;
            0.5 * (1.0 + (2.0 * a).cos() * s1) - (a.cos() * s2).powi(2)
        })
        .sum();
    total / p as f64
}

// ---------------------------------------------------------------------------
// Empirical distributions

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TargetCdf {
    Normal { mean: f64, sd: f64 },
    /// `λ_s` conditioned on `[a, b]`.
    FejerConditional { s: f64, a: f64, b: f64 },
}

impl TargetCdf {
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            TargetCdf::Normal { mean, sd } => Normal::new(mean, sd).map(|n| n.cdf(x)).unwrap_or(f64::NAN),
            TargetCdf::FejerConditional { s, a, b } => {
                if x <= a {
                    0.0
                } else if x >= b {
                    1.0
                } else {
                    fejer_mass(s, a, x) / fejer_mass(s, a, b)
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDistribution {
    sorted: Vec<f64>,
    pub target: TargetCdf,
}

impl EmpiricalDistribution {
    pub fn new(mut samples: Vec<f64>, target: TargetCdf) -> Self {
        samples.sort_by(f64::total_cmp);
        EmpiricalDistribution { sorted: samples, target }
    }

    pub fn samples(&self) -> &[f64] {
        &self.sorted
    }

    pub fn count(&self) -> usize {
        self.sorted.len()
    }

    pub fn ks(&self) -> f64 {
        ks_sorted(&self.sorted, |x| self.target.cdf(x))
    }

    pub fn mean(&self) -> f64 {
        crate::sum::sum(self.sorted.iter().copied()) / self.count() as f64
    }

    pub fn second_moment(&self) -> f64 {
        crate::sum::sum(self.sorted.iter().map(|x| x * x)) / self.count() as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        let n = self.count() as f64;
        let m = self.mean();
        crate::sum::sum(self.sorted.iter().map(|x| (x - m).powi(2))) / (n - 1.0)
    }

    /// `bins` equal-width bins over the sample range: `(lo, hi, count)`.
    pub fn histogram(&self, bins: usize) -> Vec<(f64, f64, usize)> {
        if self.sorted.is_empty() || bins == 0 {
            return Vec::new();
        }
        let lo = self.sorted[0];
        let hi = *self.sorted.last().unwrap();
        let w = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let mut counts = vec![0usize; bins];
        for &x in &self.sorted {
            let i = (((x - lo) / w) as usize).min(bins - 1);
            counts[i] += 1;
        }
        counts.into_iter().enumerate().map(|(i, c)| (lo + i as f64 * w, lo + (i + 1) as f64 * w, c)).collect()
    }
}

fn ks_sorted(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d.clamp(0.0, 1.0)
}

/// Kolmogorov–Smirnov distance between the samples and a continuous CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    if samples.is_empty() {
        return 1.0;
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    ks_sorted(&v, cdf)
}

// ---------------------------------------------------------------------------
// Sampling λ_s

/// `λ_s([a, b])` for a bounded interval, by Gauss–Legendre panels.
pub fn fejer_mass(s: f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let (gx, gw) = crate::fejerquad::gauss_legendre(crate::fejerquad::GL_ORDER);
    let n = ((b - a) / (PI / (4.0 * s))).ceil().max(1.0) as usize;
    let h = (b - a) / n as f64;
    let mut acc = crate::sum::Compensated::default();
    for i in 0..n {
        let x0 = a + i as f64 * h;
        for (x, w) in gx.iter().zip(&gw) {
            acc.add(0.5 * h * w * kernel(s, x0 + 0.5 * h * (x + 1.0)));
        }
    }
    acc.value()
}

/// One draw from `λ_s`. The envelope `min(s/2π, 2/(πsθ²))` splits into a flat
/// core on `|θ| ≤ 2/s` and two `θ^{-2}` tails; both parts have mass `2/π`.
pub fn sample_fejer(s: f64, st: &mut KeyedStream) -> f64 {
    let c = 2.0 / s;
    loop {
        let (theta, env) = if st.uniform() < 0.5 {
            let th = st.uniform_in(-c, c);
            (th, s / (2.0 * PI))
        } else {
            let u = 1.0 - st.uniform();
            let sign = if st.uniform() < 0.5 { -1.0 } else { 1.0 };
            let th = sign * c / u;
            (th, 2.0 / (PI * s * th * th))
        };
        if st.uniform() * env <= kernel(s, theta) {
            return theta;
        }
    }
}

/// One draw from `λ_s` conditioned on `[a, b]`: uniform proposals on the
/// interval against the envelope's maximum there.
pub fn sample_fejer_in(s: f64, a: f64, b: f64, st: &mut KeyedStream, max_attempts: u64) -> Result<f64, StochasticError> {
    if !(b > a) || !a.is_finite() || !b.is_finite() {
        return Err(StochasticError::Invalid(format!("conditioning interval [{a}, {b}] must be bounded and nonempty")));
    }
    let d = if a <= 0.0 && b >= 0.0 { 0.0 } else { a.abs().min(b.abs()) };
    let bound = if d > 0.0 { (s / (2.0 * PI)).min(2.0 / (PI * s * d * d)) } else { s / (2.0 * PI) };
    for _ in 0..max_attempts {
        let th = st.uniform_in(a, b);
        if st.uniform() * bound <= kernel(s, th) {
            return Ok(th);
        }
    }
    Err(StochasticError::MassUnderflow { a, b, attempts: max_attempts })
}

// ---------------------------------------------------------------------------
// CLT experiments

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub distribution: EmpiricalDistribution,
    pub ks: f64,
    pub mean: f64,
    pub variance: f64,
    pub second_moment: f64,
    /// Closed-form variance the samples should show, when there is one.
    pub predicted_variance: Option<f64>,
    pub flags: Vec<String>,
}

impl CltReport {
    fn new(distribution: EmpiricalDistribution, predicted_variance: Option<f64>, flags: Vec<String>) -> Self {
        CltReport {
            ks: distribution.ks(),
            mean: distribution.mean(),
            variance: distribution.variance(),
            second_moment: distribution.second_moment(),
            distribution,
            predicted_variance,
            flags,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrnsteinClt {
    pub k: usize,
    pub p: usize,
    pub t: f64,
    pub h: f64,
    pub theta: f64,
    pub draws: usize,
}

/// Below this predicted variance the sum is considered degenerate.
pub const DEGENERATE_VARIANCE: f64 = 0.05;

/// Samples `Re P′_k(θ)` over independent draws; target `N(0, ½)`.
pub fn clt_ornstein(params: &OrnsteinClt, key: &StreamKey) -> Result<CltReport, StochasticError> {
    let OrnsteinClt { k, p, t, h, theta, draws } = *params;
    if theta == 0.0 || !theta.is_finite() {
        return Err(StochasticError::Invalid("θ must be finite and nonzero".into()));
    }
    if p < 2 || draws < 2 || !(t > 0.0) || !(h >= 0.0) {
        return Err(StochasticError::Invalid("need p ≥ 2, draws ≥ 2, t > 0, h ≥ 0".into()));
    }
    let c = h + t;
    let damp = sinc(0.5 * t * theta);
    let norm = 1.0 / (p as f64).sqrt();
    let samples: Vec<f64> = (0..draws as u64)
        .into_par_iter()
        .map(|d| {
            let mut st = offset_stream(key, k, d);
            let mut acc = crate::sum::Compensated::default();
            for j in 1..p {
                let base = theta * j as f64 * c;
                let x = st.uniform_in(-0.5 * t, 0.5 * t);
                acc.add((base + theta * x).cos() - base.cos() * damp);
            }
            acc.value() * norm
        })
        .collect();
    let pv = predicted_variance(p, h, t, theta);
    let mut flags = Vec::new();
    if pv < DEGENERATE_VARIANCE {
        flags.push(format!("degenerate: predicted variance {pv:.3e}, t·θ = {:.3e}", t * theta));
    }
    let dist = EmpiricalDistribution::new(samples, TargetCdf::Normal { mean: 0.0, sd: 0.5f64.sqrt() });
    Ok(CltReport::new(dist, Some(pv), flags))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpClt {
    pub m: f64,
    pub eps: Rational,
    pub p: usize,
    pub a: f64,
    pub b: f64,
    pub s: f64,
    pub samples: usize,
    /// Height `h_n`, when known, for the `m_n ≥ ε_n h_n` flag.
    pub h: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpCltReport {
    pub clt: CltReport,
    /// Mean and maximum over samples of `Σ_j X_j²` with `X_j = √(2/p)·cos(ω(j)t)`.
    pub sum_sq_mean: f64,
    pub sum_sq_max: f64,
    /// `exp(max Σ X_j²)`, the bound on `|Π(1 + iX_j)|²`.
    pub product_bound: f64,
    pub lambda_mass: f64,
}

pub const MAX_REJECTIONS: u64 = 10_000_000;

/// Samples `(√2/√p)·Σ_{j<p} cos(ω(j)·t)` with `t ~ λ_s | [a, b]`; target N(0,1).
pub fn clt_expstaircase(params: &ExpClt, key: &StreamKey) -> Result<ExpCltReport, StochasticError> {
    let ExpClt { m, eps, p, a, b, s, samples, h } = *params;
    if p == 0 || samples < 2 || !(m > 0.0) || eps.den == 0 || eps.num == 0 || eps.num >= eps.den {
        return Err(StochasticError::Invalid("need p ≥ 1, samples ≥ 2, m > 0, 0 < ε < 1".into()));
    }
    if !(s > 0.0 && s <= 1.0) {
        return Err(StochasticError::Invalid(format!("s = {s} outside (0, 1]")));
    }
    let mass = fejer_mass(s, a.min(b), b.max(a));
    let e = eps.value();
    let freqs: Vec<f64> = (0..p).map(|j| omega(m, e, p as f64, j as f64, OmegaNorm::MinusOne)).collect();
    let scale = (2.0 / p as f64).sqrt();
    let rows: Vec<Result<(f64, f64), StochasticError>> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut st = key.stream(Domain::FejerSample, 0, i);
            let t = sample_fejer_in(s, a, b, &mut st, MAX_REJECTIONS)?;
            let mut acc = crate::sum::Compensated::default();
            let mut sq = crate::sum::Compensated::default();
            for &w in &freqs {
                let x = scale * (w * t).cos();
                acc.add(x);
                sq.add(x * x);
            }
            Ok((acc.value(), sq.value()))
        })
        .collect();
    let rows: Vec<(f64, f64)> = rows.into_iter().collect::<Result<_, _>>()?;
    let sum_sq_mean = crate::sum::sum(rows.iter().map(|r| r.1)) / samples as f64;
    let sum_sq_max = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let mut flags = Vec::new();
    if let Some(h) = h {
        flags.push(format!("m_dominates_height={}", m >= e * h));
    }
    let q = p as f64;
    flags.push(format!("large_p_regime={}", q >= m / e));
    flags.push(format!("log_p_over_m={:.4e}", q.ln() / m));
    flags.push(format!("log_p_over_p_below_eps={}", q.ln() / q <= e));
    let dist = EmpiricalDistribution::new(rows.iter().map(|r| r.0).collect(), TargetCdf::Normal { mean: 0.0, sd: 1.0 });
    Ok(ExpCltReport {
        clt: CltReport::new(dist, Some(1.0), flags),
        sum_sq_mean,
        sum_sq_max,
        product_bound: sum_sq_max.exp(),
        lambda_mass: mass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draw_regenerates_and_offsets_seek() {
        let key = StreamKey::new("orn", 3);
        let a = ornstein_draw(2, 50, 4.0, 4.0, &key, 7);
        let b = ornstein_draw(2, 50, 4.0, 4.0, &key, 7);
        assert_eq!(a, b);
        for j in [1usize, 2, 17, 49] {
            assert_eq!(a.x(j), ornstein_offset(2, j, 4.0, &key, 7));
        }
        assert_ne!(a, ornstein_draw(2, 50, 4.0, 4.0, &key, 8));
    }

    #[test]
    fn spacers_and_height() {
        let key = StreamKey::new("orn", 1);
        let (p, t, h) = (40usize, 3.0, 11.0);
        let d = ornstein_draw(0, p, t, t, &key, 0);
        let sp = d.spacers();
        assert_eq!(sp.len(), p);
        for s in &sp[..p - 1] {
            assert!((0.0..=2.0 * t).contains(s));
        }
        let next = p as f64 * h + sp.iter().sum::<f64>();
        assert!((next - (p as f64 * (h + t) + d.last)).abs() < 1e-9);
    }

    #[test]
    fn centered_poly_vanishes_at_zero() {
        let d = ornstein_draw(0, 64, 2.0, 2.0, &StreamKey::new("c", 0), 0);
        assert_eq!(centered_poly(&d, 5.0, 0.0), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn ks_hand_enumeration() {
        // Uniform target, samples {0.1, 0.5, 0.6}:
        // i/n − F: 1/3−0.1, 2/3−0.5, 1−0.6 ; F − (i−1)/n: 0.1, 0.5−1/3, 0.6−2/3.
        let d = ks_statistic(&[0.6, 0.1, 0.5], |x| x.clamp(0.0, 1.0));
        assert!((d - 0.4).abs() < 1e-15);
        assert!(ks_statistic(&[0.0; 10], |x| TargetCdf::Normal { mean: 0.0, sd: 1.0 }.cdf(x)) >= 0.5);
    }

    #[test]
    fn fejer_mass_closed_form() {
        // ∫_{-∞}^{∞} K_s = 1 and the mass of [−x, x] from the antiderivative.
        let s = 0.5;
        let m = fejer_mass(s, -4000.0, 4000.0);
        assert!((m - 1.0).abs() < 2.0 * 2.0 / (PI * s * 4000.0));
        let half = fejer_mass(s, 0.0, 1.0);
        assert!((fejer_mass(s, -1.0, 1.0) - 2.0 * half).abs() < 1e-15);
    }

    #[test]
    fn conditional_sampler_rejects_bad_interval() {
        let mut st = StreamKey::new("x", 0).stream(Domain::FejerSample, 0, 0);
        assert!(sample_fejer_in(0.5, 2.0, 1.0, &mut st, 10).is_err());
        // Tiny mass far out with a tiny attempt budget.
        assert!(matches!(
            sample_fejer_in(0.5, 4.0 * PI - 1e-9, 4.0 * PI + 1e-9, &mut st, 3),
            Err(StochasticError::MassUnderflow { .. })
        ));
    }

    #[test]
    fn histogram_counts_everything() {
        let d = EmpiricalDistribution::new(vec![0.0, 0.1, 0.5, 0.9, 1.0], TargetCdf::Normal { mean: 0.0, sd: 1.0 });
        let h = d.histogram(4);
        assert_eq!(h.iter().map(|b| b.2).sum::<usize>(), 5);
        assert_eq!(h[3].2, 2);
    }
}
