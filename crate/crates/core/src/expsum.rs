//! Exponential-staircase sums `Q_n(t) = q^{-1/2}·Σ_{j<q} e^{2πi ψ(j) t}` and
//! their Karatsuba–Korolev stationary-phase approximation.

use std::f64::consts::{E, PI};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dd::Dd;
use crate::sum::CompensatedC;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExpSumError {
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("j = {j} outside the stationary range [{lo}, {hi}]")]
    OutOfRange { j: f64, lo: f64, hi: f64 },
    #[error("phase invariant `{what}` fails at x = {x}: {value} vs bound {bound}")]
    Invariant { what: &'static str, x: f64, value: f64, bound: f64 },
}

/// `ψ(x) = (q/β²)·e^{βx/q}` together with the staircase height parameter `m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpParams {
    pub q: u64,
    pub beta: f64,
    pub m: f64,
}

/// Truth values of the stage conditions. `alpha_sup` is the supremum of the
/// admissible `α ∈ (0, 1/4)`; the conditions hold for some α iff it is positive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpConditionReport {
    pub inv_beta_integer: bool,
    pub h: f64,
    pub h_integer: bool,
    pub m_integer: bool,
    pub alpha_sup: f64,
    pub alpha_exists: bool,
    /// `m < qβ`.
    pub m_below_q_beta: bool,
    /// `√(mβ) < 1`.
    pub sqrt_m_beta_below_one: bool,
}

fn is_integer(x: f64) -> bool {
    x.is_finite() && x == x.round()
}

impl ExpParams {
    pub fn new(q: u64, beta: f64, m: f64) -> Result<Self, ExpSumError> {
        if q < 2 {
            return Err(ExpSumError::Invalid(format!("q = {q} must be at least 2")));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(ExpSumError::Invalid(format!("beta = {beta} must be positive")));
        }
        if !(m.is_finite() && m > 0.0) {
            return Err(ExpSumError::Invalid(format!("m = {m} must be positive")));
        }
        Ok(ExpParams { q, beta, m })
    }

    fn qf(&self) -> f64 {
        self.q as f64
    }

    pub fn conditions(&self) -> ExpConditionReport {
        let h = self.m / self.beta;
        let lh = h.ln();
        let alpha_sup = if lh > 0.0 {
            0.25f64.min(self.qf().ln() / lh - 0.5).min(0.5 - self.m.ln() / lh)
        } else {
            f64::NEG_INFINITY
        };
        ExpConditionReport {
            inv_beta_integer: is_integer(1.0 / self.beta),
            h,
            h_integer: is_integer(h),
            m_integer: is_integer(self.m),
            alpha_sup,
            alpha_exists: alpha_sup > 0.0,
            m_below_q_beta: self.m < self.qf() * self.beta,
            sqrt_m_beta_below_one: (self.m * self.beta).sqrt() < 1.0,
        }
    }

    fn scale_dd(&self) -> Dd {
        Dd::new(self.qf()) / (Dd::new(self.beta) * Dd::new(self.beta))
    }

    fn psi_dd(&self, x: f64) -> Dd {
        let arg = Dd::new(self.beta) * Dd::new(x) / Dd::new(self.qf());
        self.scale_dd() * arg.exp()
    }
}

pub fn psi(params: &ExpParams, x: f64) -> f64 {
    psi_derivative(params, x, 0)
}

/// `ψ^{(k)}(x) = (q/β²)(β/q)^k·e^{βx/q}`.
pub fn psi_derivative(params: &ExpParams, x: f64, order: u32) -> f64 {
    let (q, b) = (params.qf(), params.beta);
    q / (b * b) * (b / q).powi(order as i32) * (b * x / q).exp()
}

/// Phases `ψ(j)` for `j = 0..=q` in double-double.
#[derive(Clone, Debug)]
pub struct QTable {
    params: ExpParams,
    psi: Vec<Dd>,
}

impl QTable {
    pub fn new(params: ExpParams) -> Self {
        let psi = (0..=params.q).into_par_iter().map(|j| params.psi_dd(j as f64)).collect();
        QTable { params, psi }
    }

    pub fn params(&self) -> &ExpParams {
        &self.params
    }

    fn term(&self, j: usize, t: f64) -> Complex64 {
        let phase = (self.psi[j] * Dd::new(t)).frac();
        Complex64::from_polar(1.0, 2.0 * PI * phase)
    }

    /// `Σ_{j∈[lo, hi)} e^{2πi ψ(j) t}`.
    pub fn partial_sum(&self, lo: usize, hi: usize, t: f64) -> Complex64 {
        let mut acc = CompensatedC::default();
        for j in lo..hi.min(self.psi.len()) {
            acc.add(self.term(j, t));
        }
        acc.value()
    }

    /// `Q_n(t)`.
    pub fn q_value(&self, t: f64) -> Complex64 {
        let q = self.params.q as usize;
        self.partial_sum(0, q, t) / self.params.qf().sqrt()
    }

    /// `Σ_{0<x≤q} e^{2πi f(x)}`, the index range of the lemma.
    pub fn lemma_sum(&self, t: f64) -> Complex64 {
        let q = self.params.q as usize;
        self.partial_sum(1, q + 1, t)
    }
}

pub fn direct_q(params: &ExpParams, t: f64) -> Complex64 {
    QTable::new(*params).q_value(t)
}

/// `‖x‖`, distance to the nearest integer.
pub fn nearest_int(x: f64) -> f64 {
    let f = x - x.floor();
    f.min(1.0 - f)
}

/// `T_{f,x,ρ}` from the value `f′(x)`.
pub fn t_bound(fprime: f64, rho: f64) -> f64 {
    let d = nearest_int(fprime);
    if d == 0.0 {
        0.0
    } else {
        rho.sqrt().min(1.0 / d)
    }
}

/// Stationary range `[f′(0), f′(q)] = [t/β, (t/β)e^β]` for `f = tψ`.
pub fn stationary_range(params: &ExpParams, t: f64) -> (f64, f64) {
    let lo = t / params.beta;
    (lo, lo * params.beta.exp())
}

/// `x_j = (q/β)·ln(βj/t)`, the solution of `f′(x_j) = j`.
pub fn stationary_points(params: &ExpParams, t: f64, j: f64) -> Result<f64, ExpSumError> {
    let (lo, hi) = stationary_range(params, t);
    let slack = 1e-12 * hi.abs();
    if !(j >= lo - slack && j <= hi + slack) {
        return Err(ExpSumError::OutOfRange { j, lo, hi });
    }
    Ok(params.qf() / params.beta * (params.beta * j / t).ln())
}

/// Phase data of `f(x) = t·ψ(x)` on `[a, b]` with the lemma's parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub params: ExpParams,
    pub t: f64,
    pub a: f64,
    pub b: f64,
    pub u: f64,
    pub big_a: f64,
    pub lambda: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

/// Grid points used by [`PhaseSpec::verify`].
pub const INVARIANT_GRID: usize = 1025;

impl PhaseSpec {
    /// `a = 0, b = q, A = U = q, λ = 1, c_1 = τ1, c_2 = c_3 = c_4 = e·τ2`.
    pub fn standard(params: ExpParams, t: f64, tau1: f64, tau2: f64) -> Self {
        let q = params.qf();
        PhaseSpec {
            params,
            t,
            a: 0.0,
            b: q,
            u: q,
            big_a: q,
            lambda: 1.0,
            c1: tau1,
            c2: E * tau2,
            c3: E * tau2,
            c4: E * tau2,
        }
    }

    pub fn derivative(&self, x: f64, order: u32) -> f64 {
        self.t * psi_derivative(&self.params, x, order)
    }

    /// Checks the lemma's hypotheses, derivative bounds on a uniform grid.
    pub fn verify(&self) -> Result<(), ExpSumError> {
        let fail = |what, x, value, bound| Err(ExpSumError::Invariant { what, x, value, bound });
        if self.u < 1.0 {
            return fail("U >= 1", self.a, self.u, 1.0);
        }
        let len = self.b - self.a;
        if !(len > 0.0 && len <= self.lambda * self.u) {
            return fail("0 < b-a <= lambda U", self.a, len, self.lambda * self.u);
        }
        if !(self.c1 > 0.0 && self.c2 >= self.c1 && self.c3 >= 0.0 && self.c4 >= 0.0) {
            return fail("0 < c1 <= c2, c3, c4 >= 0", self.a, self.c1, self.c2);
        }
        let rel = 1.0 + 1e-12;
        let (au, au2) = (self.big_a * self.u, self.big_a * self.u * self.u);
        for i in 0..INVARIANT_GRID {
            let x = self.a + len * i as f64 / (INVARIANT_GRID - 1) as f64;
            let f2 = self.derivative(x, 2);
            if f2 * rel < self.c1 / self.big_a {
                return fail("f'' >= c1/A", x, f2, self.c1 / self.big_a);
            }
            if f2 > rel * self.c2 / self.big_a {
                return fail("f'' <= c2/A", x, f2, self.c2 / self.big_a);
            }
            let f3 = self.derivative(x, 3).abs();
            if f3 > rel * self.c3 / au {
                return fail("|f'''| <= c3/(AU)", x, f3, self.c3 / au);
            }
            let f4 = self.derivative(x, 4).abs();
            if f4 > rel * self.c4 / au2 {
                return fail("|f''''| <= c4/(AU^2)", x, f4, self.c4 / au2);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KkConstants {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub big_k: f64,
    pub k: f64,
}

impl KkConstants {
    pub fn from_parts(c1: f64, c2: f64, c3: f64, c4: f64, lambda: f64, a: f64, u: f64, len: f64) -> Self {
        let k = (c1 / (4.0 * c2)).min((c1 / (2.0 * c2)).sqrt());
        let inner = (9.0 / 8.0 * c4 + (13.0f64 / 6.0).powi(2) / c1 * (c3 + 0.5 * k * c4).powi(2)).max(2.0 * c2 / (k * k));
        let big_k = 5.0 * c3 + 0.5 * inner;
        let k1 = (6.5 + 2.0 * c1 / c2) / PI;
        let k3 = 2.0 * (2.0 + 1.0 / PI) + (4.0 + 2.8 * c1.sqrt() + c2 + 2.0 * c2 / c1) / (PI * c1);
        let k2 = ((lambda * c2 + 2.0 * a / u) * big_k + 2.0 * c2 * (c1 + a / len)) / (PI * c1 * c1) + 22.5 + 9.0 * c2 / a;
        KkConstants { k1, k2, k3, big_k, k }
    }

    pub fn new(spec: &PhaseSpec) -> Self {
        Self::from_parts(spec.c1, spec.c2, spec.c3, spec.c4, spec.lambda, spec.big_a, spec.u, spec.b - spec.a)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KkApprox {
    /// `Σ c(j)·Z(j)`.
    pub main: Complex64,
    /// Bound on `|E|`.
    pub error_bound: f64,
    pub constants: KkConstants,
    /// `(f′(a), f′(b))`.
    pub fprime_range: (f64, f64),
    /// Integers `j` with their weight `c(j)`.
    pub stationary: Vec<(u64, f64)>,
    pub t_a: f64,
    pub t_b: f64,
}

/// Main term and error bound of the lemma for `f = tψ` on `[0, q]`.
pub fn kk_approx(spec: &PhaseSpec) -> Result<KkApprox, ExpSumError> {
    spec.verify()?;
    let p = &spec.params;
    let (t, beta, q) = (spec.t, p.beta, p.qf());
    if spec.a != 0.0 || spec.b != q {
        return Err(ExpSumError::Invalid("the main term is implemented for [a, b] = [0, q]".into()));
    }
    let fa = Dd::new(t) / Dd::new(beta);
    let fb = fa * Dd::new(beta).exp();
    let (lo, hi) = (fa.hi.ceil() as u64, fb.to_f64().floor() as u64);
    let exact = |d: Dd, j: u64| d.hi == j as f64 && d.lo == 0.0;

    let mut acc = CompensatedC::default();
    let mut stationary = Vec::new();
    let rot = Complex64::new(1.0, 1.0) / 2f64.sqrt();
    for j in lo..=hi.max(lo.saturating_sub(1)) {
        if j > hi {
            break;
        }
        let c = if exact(fa, j) || exact(fb, j) { 0.5 } else { 1.0 };
        // f(x_j) − j·x_j = N·(1 − ln(βj/t)) with N = qj/β.
        let jd = Dd::new(j as f64);
        let n = jd * Dd::new(q) / Dd::new(beta);
        let l = (Dd::new(beta) * jd / Dd::new(t)).ln();
        let phase = (n - n * l).frac();
        let f2 = beta * j as f64 / q;
        acc.add(rot * Complex64::from_polar(c / f2.sqrt(), 2.0 * PI * phase));
        stationary.push((j, c));
    }

    let constants = KkConstants::new(spec);
    let (fa, fb) = (fa.to_f64(), fb.to_f64());
    let t_a = t_bound(fa, spec.big_a);
    let t_b = t_bound(fb, spec.big_a);
    let error_bound = constants.k1 * (fb - fa + 2.0).ln() + constants.k2 + constants.k3 * (t_a + t_b);
    Ok(KkApprox { main: acc.value(), error_bound, constants, fprime_range: (fa, fb), stationary, t_a, t_b })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KkCheck {
    pub t: f64,
    /// `Σ_{0<x≤q} e^{2πi f(x)}`.
    pub direct: Complex64,
    pub main: Complex64,
    pub difference: f64,
    pub error_bound: f64,
    pub within: bool,
}

/// Compares the direct sum with the lemma's main term at every `t`.
pub fn kk_verify(table: &QTable, ts: &[f64], tau1: f64, tau2: f64) -> Result<Vec<KkCheck>, ExpSumError> {
    ts.par_iter()
        .map(|&t| {
            let approx = kk_approx(&PhaseSpec::standard(*table.params(), t, tau1, tau2))?;
            let direct = table.lemma_sum(t);
            let difference = (direct - approx.main).norm();
            Ok(KkCheck {
                t,
                direct,
                main: approx.main,
                difference,
                error_bound: approx.error_bound,
                within: difference <= approx.error_bound,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatnessProfile {
    pub tau1: f64,
    pub tau2: f64,
    pub ts: Vec<f64>,
    pub modulus: Vec<f64>,
    /// `|Q(t)|/√t`.
    pub ratio: Vec<f64>,
    pub max_ratio: f64,
    /// Trapezoid estimate of `∫ ||Q(t)| − 1| dt` over the grid.
    pub l1_deficit: f64,
    /// `(τ2 − τ1) − (2/3)(τ2^{3/2} − τ1^{3/2})`.
    pub rolle_gap: f64,
    /// Whether `[τ1, τ2] ⊂ (1/2, 1)`.
    pub rolle_applicable: bool,
}

/// Uniform grid of `n` points on `[τ1, τ2]`.
pub fn t_grid(tau1: f64, tau2: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| tau1 + (tau2 - tau1) * i as f64 / (n - 1) as f64).collect()
}

/// Profile of an arbitrary modulus function.
pub fn profile_from<F>(modulus: F, tau1: f64, tau2: f64, n: usize) -> Result<FlatnessProfile, ExpSumError>
where
    F: Fn(f64) -> f64 + Sync,
{
    if !(tau1 > 0.0 && tau2 > tau1 && tau2.is_finite()) {
        return Err(ExpSumError::Invalid(format!("need 0 < tau1 < tau2, got [{tau1}, {tau2}]")));
    }
    if n < 2 {
        return Err(ExpSumError::Invalid("grid needs at least 2 points".into()));
    }
    let ts = t_grid(tau1, tau2, n);
    let modulus: Vec<f64> = ts.par_iter().map(|&t| modulus(t)).collect();
    let ratio: Vec<f64> = ts.iter().zip(&modulus).map(|(t, m)| m / t.sqrt()).collect();
    let max_ratio = ratio.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let h = (tau2 - tau1) / (n - 1) as f64;
    let dev: Vec<f64> = modulus.iter().map(|m| (m - 1.0).abs()).collect();
    let l1_deficit = h * (crate::sum::sum(dev.iter().copied()) - 0.5 * (dev[0] + dev[n - 1]));
    Ok(FlatnessProfile {
        tau1,
        tau2,
        ts,
        modulus,
        ratio,
        max_ratio,
        l1_deficit,
        rolle_gap: (tau2 - tau1) - 2.0 / 3.0 * (tau2.powf(1.5) - tau1.powf(1.5)),
        rolle_applicable: tau1 > 0.5 && tau2 < 1.0,
    })
}

pub fn flatness_profile(table: &QTable, tau1: f64, tau2: f64, n: usize) -> Result<FlatnessProfile, ExpSumError> {
    profile_from(|t| table.q_value(t).norm(), tau1, tau2, n)
}

impl FlatnessProfile {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,modulus,ratio\n");
        for i in 0..self.ts.len() {
            out.push_str(&format!("{:?},{:?},{:?}\n", self.ts[i], self.modulus[i], self.ratio[i]));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(q: u64) -> ExpParams {
        ExpParams::new(q, 1.0 / 64.0, 4.0).unwrap()
    }

    #[test]
    fn psi_endpoints_and_log_derivative() {
        let p = params(1000);
        assert_eq!(psi(&p, 0.0), 1000.0 * 4096.0);
        assert!((psi(&p, 1000.0) / psi(&p, 0.0) - p.beta.exp()).abs() < 1e-15);
        for x in [0.0, 137.5, 999.0] {
            let h = 1.0;
            let d1 = (psi(&p, x + h) - psi(&p, x - h)) / (2.0 * h);
            let d2 = (psi_derivative(&p, x + h, 1) - psi_derivative(&p, x - h, 1)) / (2.0 * h);
            let r = p.beta / p.qf();
            assert!((d1 / psi(&p, x) / r - 1.0).abs() < 1e-6);
            assert!((d2 / d1 / r - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn q_at_zero_and_triangle_bound() {
        let table = QTable::new(params(500));
        assert!((table.q_value(0.0).re - 500f64.sqrt()).abs() < 1e-12);
        for t in [0.1, 0.61, 0.77, 3.3, -2.0] {
            assert!(table.q_value(t).norm() <= 500f64.sqrt() + 1e-12);
        }
        assert!((direct_q(&params(500), 0.77) - table.q_value(0.77)).norm() < 1e-15);
    }

    #[test]
    fn lemma_sum_shifts_the_index_range() {
        let table = QTable::new(params(300));
        let t = 0.7;
        let expect = table.q_value(t) * 300f64.sqrt() - table.term(0, t) + table.term(300, t);
        let got = table.lemma_sum(t);
        assert!((got - expect).norm() < 1e-11, "{got} vs {expect}");
    }

    #[test]
    fn stationary_points_solve_the_derivative_equation() {
        let p = params(10_000);
        let t = 0.75;
        let (lo, hi) = stationary_range(&p, t);
        assert_eq!(stationary_points(&p, t, lo).unwrap(), 0.0);
        assert!((stationary_points(&p, t, hi).unwrap() - 10_000.0).abs() < 1e-8);
        let mid = 0.5 * (lo + hi);
        let x = stationary_points(&p, t, mid).unwrap();
        let spec = PhaseSpec::standard(p, t, 0.6, 0.9);
        assert!((spec.derivative(x, 1) - mid).abs() < 1e-8 * mid);
        assert!(((p.beta * x / p.qf()).exp() - p.beta * mid / t).abs() < 1e-14);
        assert!(matches!(stationary_points(&p, t, hi + 1.0), Err(ExpSumError::OutOfRange { .. })));
    }

    #[test]
    fn nearest_int_and_t_bound() {
        assert_eq!(nearest_int(0.5), 0.5);
        assert_eq!(nearest_int(3.0), 0.0);
        assert!((nearest_int(-0.25) - 0.25).abs() < 1e-15);
        assert_eq!(t_bound(7.0, 100.0), 0.0);
        assert_eq!(t_bound(7.5, 100.0), 2.0);
        assert_eq!(t_bound(7.01, 100.0), 10.0);
        assert!((t_bound(7.2, 100.0) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn constants_from_closed_formulas() {
        let c = KkConstants::from_parts(1.0, 2.0, 2.0, 2.0, 1.0, 10.0, 10.0, 10.0);
        assert_eq!(c.k, 0.125);
        assert!((c.k1 - 7.5 / PI).abs() < 1e-15);
        // K = 5·2 + ½·max{9/4 + (13/6)²·(2.125)², 256}.
        assert!((c.big_k - 138.0).abs() < 1e-12);
        let k2 = ((2.0 + 2.0) * 138.0 + 4.0 * 2.0) / PI + 22.5 + 1.8;
        assert!((c.k2 - k2).abs() < 1e-12);
        let k3 = 2.0 * (2.0 + 1.0 / PI) + (4.0 + 2.8 + 2.0 + 4.0) / PI;
        assert!((c.k3 - k3).abs() < 1e-12);
    }

    #[test]
    fn invariants_follow_the_parameter_choice() {
        let p = params(1000);
        assert!(PhaseSpec::standard(p, 0.75, 0.6, 0.9).verify().is_ok());
        let low = PhaseSpec::standard(p, 0.5, 0.6, 0.9).verify();
        assert!(matches!(low, Err(ExpSumError::Invariant { what: "f'' >= c1/A", .. })));
        let mut short = PhaseSpec::standard(p, 0.75, 0.6, 0.9);
        short.lambda = 0.5;
        assert!(short.verify().is_err());
    }

    #[test]
    fn main_term_is_within_the_bound() {
        let table = QTable::new(params(2000));
        let checks = kk_verify(&table, &t_grid(0.6, 0.9, 25), 0.6, 0.9).unwrap();
        for c in &checks {
            assert!(c.within, "{c:?}");
        }
        let approx = kk_approx(&PhaseSpec::standard(params(2000), 0.7, 0.6, 0.9)).unwrap();
        // One integer in [44.8, 45.5].
        assert_eq!(approx.stationary, vec![(45, 1.0)]);
        assert!((approx.main.norm() - (64.0 * 2000.0 / 45.0f64).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn constant_modulus_profile() {
        let prof = profile_from(|_| 1.0, 0.6, 0.9, 31).unwrap();
        assert_eq!(prof.l1_deficit, 0.0);
        for (t, r) in prof.ts.iter().zip(&prof.ratio) {
            assert!((r - 1.0 / t.sqrt()).abs() < 1e-15);
        }
        assert!(prof.rolle_applicable && prof.rolle_gap > 0.0);
        assert!(profile_from(|_| 1.0, 0.9, 0.6, 10).is_err());
    }

    #[test]
    fn growth_conditions() {
        let c = params(1000).conditions();
        assert!(c.inv_beta_integer && c.h_integer && c.m_integer);
        assert_eq!(c.h, 256.0);
        assert!((c.alpha_sup - 0.25).abs() < 1e-12 && c.alpha_exists);
        assert!(c.m_below_q_beta);
    }
}
