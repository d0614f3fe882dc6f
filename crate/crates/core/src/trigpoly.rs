//! Trigonometric polynomials with real frequencies, `Σ c_j e^{iω_jθ}`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fejerquad::Density;
use crate::sum::CompensatedC;
use crate::tower::{StageOrigin, TowerLevel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrigPolyError {
    #[error("frequency {0} at index {1} is negative or not finite")]
    BadFrequency(f64, usize),
    #[error("frequencies not strictly increasing at index {0}")]
    NotIncreasing(usize),
    #[error("Dirichlet length must be at least 1")]
    ZeroLength,
    #[error("level {0} is not a linear staircase stage")]
    NotStaircase(usize),
    #[error("malformed CSV line {0}: {1}")]
    Csv(usize, String),
}

/// Sums with at least this many terms are accumulated with compensation.
pub const COMPENSATED_FROM: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigPoly {
    freqs: Vec<f64>,
    coeffs: Vec<Complex64>,
}

impl TrigPoly {
    pub fn new(terms: Vec<(f64, Complex64)>) -> Result<Self, TrigPolyError> {
        let (freqs, coeffs): (Vec<f64>, Vec<Complex64>) = terms.into_iter().unzip();
        for (i, &w) in freqs.iter().enumerate() {
            if !(w.is_finite() && w >= 0.0) {
                return Err(TrigPolyError::BadFrequency(w, i));
            }
            if i > 0 && w <= freqs[i - 1] {
                return Err(TrigPolyError::NotIncreasing(i));
            }
        }
        Ok(TrigPoly { freqs, coeffs })
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.freqs
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn terms(&self) -> impl Iterator<Item = (f64, Complex64)> + '_ {
        self.freqs.iter().copied().zip(self.coeffs.iter().copied())
    }

    pub fn eval(&self, theta: f64) -> Complex64 {
        if self.len() >= COMPENSATED_FROM {
            let mut acc = CompensatedC::default();
            for (w, c) in self.terms() {
                acc.add(c * Complex64::from_polar(1.0, w * theta));
            }
            acc.value()
        } else {
            self.terms().map(|(w, c)| c * Complex64::from_polar(1.0, w * theta)).sum()
        }
    }

    /// `Σ |c_j|²`.
    pub fn energy(&self) -> f64 {
        crate::sum::sum(self.coeffs.iter().map(|c| c.norm_sqr()))
    }

    /// Smallest gap between consecutive frequencies.
    pub fn min_gap(&self) -> Option<f64> {
        self.freqs.windows(2).map(|w| w[1] - w[0]).reduce(f64::min)
    }

    /// Full expansion of the product. Coincident frequencies (equal as
    /// floats) are merged.
    pub fn product(&self, other: &TrigPoly) -> TrigPoly {
        let mut terms: Vec<(f64, Complex64)> = Vec::with_capacity(self.len() * other.len());
        for (a, c) in self.terms() {
            for (b, d) in other.terms() {
                terms.push((a + b, c * d));
            }
        }
        terms.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut merged: Vec<(f64, Complex64)> = Vec::with_capacity(terms.len());
        for (w, c) in terms {
            match merged.last_mut() {
                Some(last) if last.0 == w => last.1 += c,
                _ => merged.push((w, c)),
            }
        }
        let (freqs, coeffs) = merged.into_iter().unzip();
        TrigPoly { freqs, coeffs }
    }

    /// Terms with frequency in `[lo, hi]`.
    pub fn terms_in(&self, lo: f64, hi: f64) -> Vec<(f64, Complex64)> {
        let start = self.freqs.partition_point(|&w| w < lo);
        let end = self.freqs.partition_point(|&w| w <= hi);
        (start..end.max(start)).map(|i| (self.freqs[i], self.coeffs[i])).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("frequency,re,im\n");
        for (w, c) in self.terms() {
            out.push_str(&format!("{w:?},{:?},{:?}\n", c.re, c.im));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, TrigPolyError> {
        let mut terms = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(TrigPolyError::Csv(i + 1, line.to_string()));
            }
            let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| TrigPolyError::Csv(i + 1, e.to_string()));
            terms.push((parse(fields[0])?, Complex64::new(parse(fields[1])?, parse(fields[2])?)));
        }
        TrigPoly::new(terms)
    }
}

impl Density for TrigPoly {
    fn eval(&self, theta: f64) -> Complex64 {
        TrigPoly::eval(self, theta)
    }

    fn bandwidth(&self) -> f64 {
        self.freqs.last().copied().unwrap_or(0.0)
    }

    fn components(&self, lo: f64, hi: f64) -> Option<Result<Vec<(f64, Complex64)>, String>> {
        Some(Ok(self.terms_in(lo, hi)))
    }
}

/// `P_k(θ) = (1/√p_k)·Σ_j e^{i a_{k,j} θ}`.
pub fn stage_poly(level: &TowerLevel) -> TrigPoly {
    let c = Complex64::new(1.0 / (level.p as f64).sqrt(), 0.0);
    TrigPoly {
        freqs: level.freq.clone(),
        coeffs: vec![c; level.p],
    }
}

/// `D_ℓ(θ) = Σ_{j<ℓ} e^{ijθ}`.
pub fn dirichlet(len: u64, theta: f64) -> Result<Complex64, TrigPolyError> {
    if len == 0 {
        return Err(TrigPolyError::ZeroLength);
    }
    let l = len as f64;
    // D_ℓ is 2π-periodic; reduce to r ∈ [−π, π).
    let r = (theta + PI).rem_euclid(2.0 * PI) - PI;
    let half = 0.5 * r;
    let ratio = if half.sin().abs() > 1e-8 {
        (l * half).sin() / half.sin()
    } else {
        l * (1.0 - (l * l - 1.0) * r * r / 24.0)
    };
    Ok(Complex64::from_polar(1.0, 0.5 * (l - 1.0) * r) * ratio)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaircaseCheck {
    pub g: Complex64,
    /// `g + ḡ`.
    pub two_re_g: f64,
    /// `|P_n(θ)|² − 1` by direct evaluation.
    pub direct: f64,
}

/// `g_n(θ) = (1/p)·Σ_{k=1}^{p−1} e^{i a_{n,k} θ} D_{p−k}(kαθ)`, together with
/// the directly evaluated `|P_n(θ)|² − 1` it should reproduce via `g + ḡ`.
pub fn staircase_decomposition(level: &TowerLevel, theta: f64) -> Result<StaircaseCheck, TrigPolyError> {
    let alpha = match level.origin {
        StageOrigin::Linear { alpha } => alpha,
        _ => return Err(TrigPolyError::NotStaircase(level.k)),
    };
    let p = level.p;
    let mut acc = CompensatedC::default();
    for k in 1..p {
        let d = dirichlet((p - k) as u64, k as f64 * alpha * theta)?;
        acc.add(Complex64::from_polar(1.0, level.freq[k] * theta) * d);
    }
    let g = acc.value() / p as f64;
    let direct = stage_poly(level).eval(theta).norm_sqr() - 1.0;
    Ok(StaircaseCheck { g, two_re_g: 2.0 * g.re, direct })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tower::{build_tower, CuttingSpec};

    #[test]
    fn doubling_stage() {
        let tower = build_tower(&CuttingSpec::zero_spacers(vec![2]), 1).unwrap();
        let p0 = stage_poly(tower.level(0));
        assert_eq!(p0.frequencies(), &[0.0, 1.0]);
        assert!((p0.eval(0.0).re - 2f64.sqrt()).abs() < 1e-15);
        assert!(p0.eval(PI).norm() < 1e-15);
        for th in [0.3, 1.1, -2.0] {
            assert!((p0.eval(th).norm() - 2f64.sqrt() * (0.5 * th).cos().abs()).abs() < 1e-14);
        }
        assert!((p0.energy() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_terms() {
        let one = Complex64::new(1.0, 0.0);
        assert!(TrigPoly::new(vec![(1.0, one), (1.0, one)]).is_err());
        assert!(TrigPoly::new(vec![(-1.0, one)]).is_err());
        assert!(TrigPoly::new(vec![(f64::NAN, one)]).is_err());
        assert!(dirichlet(0, 1.0).is_err());
    }

    #[test]
    fn dirichlet_matches_direct() {
        for &(l, th) in &[(1u64, 0.7), (5, 0.3), (17, 2.0 * PI + 1e-10), (200, -3.0), (33, 4.0 * PI), (9, 1e-9)] {
            let direct: Complex64 = (0..l).map(|j| Complex64::from_polar(1.0, j as f64 * th)).sum();
            assert!((dirichlet(l, th).unwrap() - direct).norm() < 1e-11 * l as f64, "l={l} th={th}");
        }
        assert_eq!(dirichlet(12, 0.0).unwrap(), Complex64::new(12.0, 0.0));
    }

    #[test]
    fn product_and_csv_roundtrip() {
        let one = Complex64::new(1.0, 0.0);
        let a = TrigPoly::new(vec![(0.0, one), (1.0, one)]).unwrap();
        let sq = a.product(&a);
        assert_eq!(sq.frequencies(), &[0.0, 1.0, 2.0]);
        assert_eq!(sq.coefficients()[1], Complex64::new(2.0, 0.0));
        let back = TrigPoly::from_csv(&sq.to_csv()).unwrap();
        assert_eq!(back, sq);
        assert_eq!(sq.terms_in(0.5, 2.0).len(), 2);
        assert!(sq.terms_in(3.0, 2.0).is_empty());
    }
}
