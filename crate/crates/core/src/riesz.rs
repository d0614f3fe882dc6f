//! Partial generalized Riesz products and their combinatorial transforms.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fejerquad::{integrate_many, kernel_ft, Adaptivity, Density, QuadConfig, QuadError, ZERO_NUDGE};
use crate::tower::Tower;
use crate::trigpoly::{stage_poly, TrigPoly};

#[derive(Debug, Error, Clone)]
pub enum RieszError {
    #[error("stage indices must be strictly increasing and below depth {depth}: {indices:?}")]
    BadIndices { indices: Vec<usize>, depth: usize },
    #[error("word enumeration needs Π p_k = {product}, above the guard {guard}")]
    Guard { product: f64, guard: f64 },
    #[error("spectrum query would return more than {0} components")]
    TooManyComponents(usize),
    #[error("polynomial {index} is not of the form Σ c·e^{{it_jθ}} with t_0 = 0 and equal positive c: {reason}")]
    Malformed { index: usize, reason: String },
    #[error("chains have different lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Quad(#[from] QuadError),
}

/// Largest `Π p_k` the word enumeration accepts.
pub const WORD_GUARD: f64 = 1e6;
/// Chains longer than this are multiplied in log space.
pub const LOG_SPACE_FROM: usize = 30;
const MAX_COMPONENTS: usize = 20_000_000;

/// Stage polynomials `P_{n_1}, …, P_{n_L}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductChain {
    pub indices: Vec<usize>,
    polys: Vec<TrigPoly>,
    /// Per stage: frequency differences `a_j − a_l` and their weights
    /// `#{(j,l)}·|c|²`, sorted, exactly equal values merged.
    diffs: Vec<Vec<(f64, f64)>>,
}

impl ProductChain {
    pub fn from_tower(tower: &Tower, indices: &[usize]) -> Result<Self, RieszError> {
        let ok = indices.windows(2).all(|w| w[0] < w[1]) && indices.iter().all(|&i| i < tower.depth());
        if !ok {
            return Err(RieszError::BadIndices {
                indices: indices.to_vec(),
                depth: tower.depth(),
            });
        }
        let polys = indices.iter().map(|&i| stage_poly(tower.level(i))).collect();
        Ok(Self::build(indices.to_vec(), polys))
    }

    /// A chain of arbitrary polynomials, indexed `0..L`.
    pub fn from_polys(polys: Vec<TrigPoly>) -> Self {
        Self::build((0..polys.len()).collect(), polys)
    }

    fn build(indices: Vec<usize>, polys: Vec<TrigPoly>) -> Self {
        let diffs = polys.iter().map(difference_weights).collect();
        ProductChain { indices, polys, diffs }
    }

    pub fn len(&self) -> usize {
        self.polys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.polys.is_empty()
    }

    pub fn polys(&self) -> &[TrigPoly] {
        &self.polys
    }

    /// The first `l` stages.
    pub fn prefix(&self, l: usize) -> ProductChain {
        ProductChain {
            indices: self.indices[..l].to_vec(),
            polys: self.polys[..l].to_vec(),
            diffs: self.diffs[..l].to_vec(),
        }
    }

    /// Stages at the given positions of this chain.
    pub fn select(&self, positions: &[usize]) -> ProductChain {
        ProductChain {
            indices: positions.iter().map(|&i| self.indices[i]).collect(),
            polys: positions.iter().map(|&i| self.polys[i].clone()).collect(),
            diffs: positions.iter().map(|&i| self.diffs[i].clone()).collect(),
        }
    }

    /// `Π |P_{n_ℓ}(θ)|²`.
    pub fn density(&self, theta: f64) -> f64 {
        if self.len() > LOG_SPACE_FROM {
            let log: f64 = self.polys.iter().map(|p| p.eval(theta).norm_sqr().ln()).sum();
            log.exp()
        } else {
            self.polys.iter().map(|p| p.eval(theta).norm_sqr()).product()
        }
    }

    /// `Π |P_{n_ℓ}(θ)|`.
    pub fn modulus(&self, theta: f64) -> f64 {
        self.density(theta).sqrt()
    }

    /// Largest frequency of the expanded `Π |P|²`.
    pub fn bandwidth(&self) -> f64 {
        self.diffs.iter().map(|d| d.last().map_or(0.0, |x| x.0)).sum()
    }

    /// `Π |P|²` as a density with an exact spectrum.
    pub fn squared(&self) -> SquaredChain<'_> {
        SquaredChain(self)
    }

    /// Frequencies of the expanded `Π|P|²` in `[lo, hi]` with coefficients.
    pub fn components(&self, lo: f64, hi: f64) -> Result<Vec<(f64, Complex64)>, RieszError> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.max_diff(b).total_cmp(&self.max_diff(a)).then(a.cmp(&b)));
        let mut rest = vec![0.0; order.len() + 1];
        for i in (0..order.len()).rev() {
            rest[i] = rest[i + 1] + self.max_diff(order[i]);
        }
        let mut out = Vec::new();
        let mut stack = vec![(0usize, 0.0f64, 1.0f64)];
        while let Some((level, partial, weight)) = stack.pop() {
            if level == order.len() {
                if partial >= lo && partial <= hi {
                    out.push((partial, Complex64::new(weight, 0.0)));
                    if out.len() > MAX_COMPONENTS {
                        return Err(RieszError::TooManyComponents(MAX_COMPONENTS));
                    }
                }
                continue;
            }
            let d = &self.diffs[order[level]];
            let r = rest[level + 1];
            let from = d.partition_point(|x| x.0 < lo - partial - r);
            let to = d.partition_point(|x| x.0 <= hi - partial + r);
            for &(w, c) in d[from..to.max(from)].iter().rev() {
                stack.push((level + 1, partial + w, weight * c));
            }
        }
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(out)
    }

    fn max_diff(&self, i: usize) -> f64 {
        self.diffs[i].last().map_or(0.0, |x| x.0)
    }
}

fn difference_weights(p: &TrigPoly) -> Vec<(f64, f64)> {
    let mut v: Vec<(f64, f64)> = Vec::with_capacity(p.len() * p.len());
    for (a, c) in p.terms() {
        for (b, d) in p.terms() {
            // Real only when all coefficients share a phase, as for stage
            // polynomials; the imaginary part of c·conj(d) is dropped.
            v.push((a - b, (c * d.conj()).re));
        }
    }
    v.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(v.len());
    for (w, c) in v {
        match merged.last_mut() {
            Some(last) if last.0 == w => last.1 += c,
            _ => merged.push((w, c)),
        }
    }
    merged
}

pub struct SquaredChain<'a>(&'a ProductChain);

impl Density for SquaredChain<'_> {
    fn eval(&self, theta: f64) -> Complex64 {
        Complex64::new(self.0.density(theta), 0.0)
    }

    fn bandwidth(&self) -> f64 {
        self.0.bandwidth()
    }

    fn components(&self, lo: f64, hi: f64) -> Option<Result<Vec<(f64, Complex64)>, String>> {
        Some(self.0.components(lo, hi).map_err(|e| e.to_string()))
    }
}

/// `|Π P|` as a density; no spectrum.
pub struct ModulusChain<'a>(pub &'a ProductChain);

impl Density for ModulusChain<'_> {
    fn eval(&self, theta: f64) -> Complex64 {
        Complex64::new(self.0.modulus(theta), 0.0)
    }

    fn bandwidth(&self) -> f64 {
        self.0.bandwidth()
    }
}

// ---------------------------------------------------------------------------
// Words

/// All sums `Σ_k (a_{k,b_k} − a_{k,a_k})` over the stages `0..=n`, with
/// multiplicities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordMultiset {
    pub n: usize,
    /// `(value, multiplicity)`, sorted by value.
    pub entries: Vec<(f64, u64)>,
    /// `Π p_k`.
    pub stage_product: u64,
}

impl WordMultiset {
    pub fn cardinality(&self) -> u64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn multiplicity(&self, value: f64) -> u64 {
        let i = self.entries.partition_point(|e| e.0 < value);
        match self.entries.get(i) {
            Some(e) if e.0 == value => e.1,
            _ => 0,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("value,multiplicity\n");
        for (v, m) in &self.entries {
            out.push_str(&format!("{v:?},{m}\n"));
        }
        out
    }

    /// `(1/Π p_k)·Σ_{m∈M_n} K̂_s(t − m)`.
    pub fn ft(&self, t: f64, s: f64) -> f64 {
        let from = self.entries.partition_point(|e| e.0 <= t - s);
        let to = self.entries.partition_point(|e| e.0 < t + s);
        let total = crate::sum::sum(self.entries[from..to.max(from)].iter().map(|&(m, c)| c as f64 * kernel_ft(s, t - m)));
        total / self.stage_product as f64
    }
}

pub fn word_multiset(tower: &Tower, n: usize) -> Result<WordMultiset, RieszError> {
    if n >= tower.depth() {
        return Err(RieszError::BadIndices {
            indices: vec![n],
            depth: tower.depth(),
        });
    }
    let product: f64 = (0..=n).map(|k| tower.level(k).p as f64).product();
    if product > WORD_GUARD {
        return Err(RieszError::Guard { product, guard: WORD_GUARD });
    }
    let mut acc: Vec<(f64, u64)> = vec![(0.0, 1)];
    for k in 0..=n {
        let f = &tower.level(k).freq;
        let mut next = Vec::with_capacity(acc.len() * f.len() * f.len());
        for &(v, m) in &acc {
            for &b in f {
                for &a in f {
                    next.push((v + (b - a), m));
                }
            }
        }
        next.sort_by(|x, y| x.0.total_cmp(&y.0));
        acc.clear();
        for (v, m) in next {
            match acc.last_mut() {
                Some(last) if last.0 == v => last.1 += m,
                _ => acc.push((v, m)),
            }
        }
    }
    Ok(WordMultiset {
        n,
        entries: acc,
        stage_product: product as u64,
    })
}

/// `ν̂` of `Π_{k≤n}|P_k|²` against `λ_s` from the word multiset.
pub fn ft_combinatorial(tower: &Tower, n: usize, t: f64, s: f64) -> Result<f64, RieszError> {
    Ok(word_multiset(tower, n)?.ft(t, s))
}

// ---------------------------------------------------------------------------
// Radon–Nikodym partial ratios

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioValue {
    pub value: f64,
    /// The point was moved off an exact zero of a denominator.
    pub perturbed: bool,
}

/// `R_L(θ) = Π_{j<L} |P_j(θ)|/|Q_j(θ)|`.
pub fn radon_ratio(p: &ProductChain, q: &ProductChain, theta: f64, l: usize) -> Result<RatioValue, RieszError> {
    if p.len() != q.len() {
        return Err(RieszError::LengthMismatch(p.len(), q.len()));
    }
    let l = l.min(p.len());
    let zero = |th: f64| q.polys[..l].iter().any(|qj| qj.eval(th).norm() == 0.0);
    let (th, perturbed) = if zero(theta) { (theta + ZERO_NUDGE, true) } else { (theta, false) };
    let mut r = 1.0;
    for j in 0..l {
        r *= p.polys[j].eval(th).norm() / q.polys[j].eval(th).norm();
    }
    Ok(RatioValue { value: r, perturbed })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioGaps {
    /// `gaps[i] ≈ ∫ |R_{i+2} − R_{i+1}| dλ_s`, i.e. `L = 1, 2, …`.
    pub gaps: Vec<f64>,
    pub error_estimates: Vec<f64>,
    pub strictly_decreasing: bool,
    /// Relative change of the last gap, `gaps[L]/gaps[L−1]`.
    pub cauchy_ratio: Option<f64>,
}

/// `∫ |R_{L+1} − R_L| dλ_s` for `L = 1..=max_l`, in one pass over the nodes.
pub fn l1_ratio_gap(p: &ProductChain, q: &ProductChain, max_l: usize, s: f64, cfg: &QuadConfig) -> Result<RatioGaps, RieszError> {
    if p.len() != q.len() {
        return Err(RieszError::LengthMismatch(p.len(), q.len()));
    }
    if max_l + 1 > p.len() || max_l == 0 {
        return Err(RieszError::BadIndices {
            indices: vec![max_l + 1],
            depth: p.len(),
        });
    }
    let eval = |th: f64, out: &mut [Complex64]| {
        let mut th = th;
        if q.polys[..=max_l].iter().any(|qj| qj.eval(th).norm() == 0.0) {
            th += ZERO_NUDGE;
        }
        let mut r = 1.0;
        for j in 0..=max_l {
            let next = r * p.polys[j].eval(th).norm() / q.polys[j].eval(th).norm();
            if j >= 1 {
                out[j - 1] = Complex64::new((next - r).abs(), 0.0);
            }
            r = next;
        }
        r
    };
    let band = p.polys[..=max_l].iter().chain(&q.polys[..=max_l]).map(|x| x.frequencies().last().copied().unwrap_or(0.0)).sum::<f64>();
    let res = integrate_many(&eval, max_l, band, &[0.0], s, cfg, Adaptivity::Off)?;
    let gaps: Vec<f64> = res.iter().map(|r| r.value.re).collect();
    let strictly_decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
    let cauchy_ratio = if gaps.len() >= 2 { Some(gaps[gaps.len() - 1] / gaps[gaps.len() - 2]) } else { None };
    Ok(RatioGaps {
        error_estimates: res.iter().map(|r| r.abs_error_estimate).collect(),
        gaps,
        strictly_decreasing,
        cauchy_ratio,
    })
}

// ---------------------------------------------------------------------------
// Scaling to dissociation

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dissociated {
    pub rho: Vec<f64>,
    /// `H_j`: height after the first `j+1` scaled polynomials.
    pub heights: Vec<f64>,
    pub polys: Vec<TrigPoly>,
}

impl Dissociated {
    /// Violations of `r_{1,k} ≥ H_{k−1}` and `r_{i+1,k} − r_{i,k} ≥ H_{k−1}`
    /// for `k ≥ 1`, as `(k, i)` with `i = 0` for the first condition.
    pub fn gap_violations(&self) -> Vec<(usize, usize)> {
        let mut bad = Vec::new();
        for k in 1..self.polys.len() {
            let h = self.heights[k - 1];
            let f = self.polys[k].frequencies();
            if f.len() > 1 && f[1] < h {
                bad.push((k, 0));
            }
            for i in 1..f.len().saturating_sub(1) {
                if f[i + 1] - f[i] < h {
                    bad.push((k, i));
                }
            }
        }
        bad
    }
}

/// Rescales `P_j(θ) ↦ P_j(ϱ_jθ)` so that the product becomes dissociated and
/// of dynamical origin: `ϱ_1 = 1`, `H_0 = 1`, `H_j = H_{j−1} + ϱ_j·t_max(j)`,
/// and `ϱ_{j+1}` is the least value with `ϱ_{j+1} ≥ 2H_j` whose scaled gaps
/// and first frequency all reach `H_j`.
pub fn scale_dissociate(polys: &[TrigPoly]) -> Result<Dissociated, RieszError> {
    for (index, p) in polys.iter().enumerate() {
        let f = p.frequencies();
        let c = p.coefficients();
        let malformed = |reason: &str| RieszError::Malformed {
            index,
            reason: reason.to_string(),
        };
        if f.is_empty() || f[0] != 0.0 {
            return Err(malformed("base frequency must be 0"));
        }
        if !(c[0].re > 0.0 && c[0].im == 0.0) || c.iter().any(|x| *x != c[0]) {
            return Err(malformed("coefficients must be equal and positive"));
        }
    }
    let mut rho = Vec::with_capacity(polys.len());
    let mut heights = Vec::with_capacity(polys.len());
    let mut scaled = Vec::with_capacity(polys.len());
    let mut h: f64 = 1.0;
    for (j, p) in polys.iter().enumerate() {
        let f = p.frequencies();
        let r = if j == 0 {
            1.0
        } else {
            let mut r = 2.0 * h;
            if f.len() > 1 {
                r = r.max(h / f[1]);
                for w in f.windows(2).skip(1) {
                    r = r.max(h / (w[1] - w[0]));
                }
            }
            r
        };
        let terms = p.terms().map(|(w, c)| (r * w, c)).collect();
        let sp = TrigPoly::new(terms).expect("scaling preserves order");
        h += r * f.last().copied().unwrap_or(0.0);
        rho.push(r);
        heights.push(h);
        scaled.push(sp);
    }
    Ok(Dissociated { rho, heights, polys: scaled })
}
