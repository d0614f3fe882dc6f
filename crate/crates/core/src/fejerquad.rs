//! Quadrature on ℝ against the Fejér weight `λ_s = K_s(θ)dθ`.
//!
//! `K_s` only decays like `θ^{-2}`, so plain truncation would need radii in
//! the millions. Instead the weight is split smoothly as
//! `K_s = K_s·χ + K_s·(1−χ)` with a Gaussian-smoothed cutoff `χ` at radius
//! `T`. The first part is integrated with panelled Gauss–Legendre; the second
//! is evaluated from the spectrum of `f` near the relevant frequencies, either
//! supplied exactly by the density or estimated by a smooth local mean.
//!
//! Panels are processed in fixed blocks and reduced in index order with
//! compensated sums, so results do not depend on the rayon pool size.

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sum::{CompensatedC, Compensated};

#[derive(Debug, Error, Clone)]
pub enum QuadError {
    #[error("invalid quadrature parameter: {0}")]
    Invalid(String),
    #[error("{needed} panels needed but the budget is {budget}; best estimate {best:?}")]
    PanelBudget {
        needed: usize,
        budget: usize,
        best: Box<QuadResult>,
    },
    #[error("error estimate {estimate:e} exceeds tolerance {tol:e}; best estimate {best:?}")]
    Tolerance {
        tol: f64,
        estimate: f64,
        best: Box<QuadResult>,
    },
    #[error("spectrum query failed: {0}")]
    Spectrum(String),
}

impl QuadError {
    /// The best available estimate, when the failure produced one.
    pub fn best(&self) -> Option<&QuadResult> {
        match self {
            QuadError::PanelBudget { best, .. } | QuadError::Tolerance { best, .. } => Some(best),
            _ => None,
        }
    }
}

/// `K_s(θ) = (s/2π)·(sin(sθ/2)/(sθ/2))²`.
pub fn kernel(s: f64, theta: f64) -> f64 {
    let x = 0.5 * s * theta;
    s / (2.0 * PI) * sinc(x).powi(2)
}

/// `K̂_s(t) = (1 − |t|/s)₊`.
pub fn kernel_ft(s: f64, t: f64) -> f64 {
    (1.0 - t.abs() / s).max(0.0)
}

pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Something integrable against `λ_s`.
pub trait Density: Sync {
    fn eval(&self, theta: f64) -> Complex64;

    /// Largest |frequency| present in the density, used for panel sizing.
    fn bandwidth(&self) -> f64;

    /// Frequencies and coefficients of the components with frequency in
    /// `[lo, hi]`, when the density is a known trigonometric sum.
    fn components(&self, _lo: f64, _hi: f64) -> Option<Result<Vec<(f64, Complex64)>, String>> {
        None
    }
}

/// The constant density.
pub struct Constant(pub Complex64);

impl Density for Constant {
    fn eval(&self, _theta: f64) -> Complex64 {
        self.0
    }
    fn bandwidth(&self) -> f64 {
        0.0
    }
    fn components(&self, lo: f64, hi: f64) -> Option<Result<Vec<(f64, Complex64)>, String>> {
        let v = if lo <= 0.0 && 0.0 <= hi { vec![(0.0, self.0)] } else { vec![] };
        Some(Ok(v))
    }
}

/// A closure with a declared bandwidth and no spectral information.
pub struct FnDensity<F> {
    pub f: F,
    pub bandwidth: f64,
}

impl<F: Fn(f64) -> Complex64 + Sync> Density for FnDensity<F> {
    fn eval(&self, theta: f64) -> Complex64 {
        (self.f)(theta)
    }
    fn bandwidth(&self) -> f64 {
        self.bandwidth
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TailMode {
    /// Tail from the density's exact spectral components.
    Spectral,
    /// Tail from a smooth local mean of the density (components at small
    /// nonzero frequencies are not resolved).
    LocalMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadResult {
    pub value: Complex64,
    pub abs_error_estimate: f64,
    pub truncation_radius: f64,
    pub panels: usize,
    /// Contribution of `K_s·(1−χ)`, already included in `value`.
    pub tail: Complex64,
    pub tail_mode: TailMode,
    /// Set when adaptive refinement hit its depth cap somewhere.
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadConfig {
    pub tol: f64,
    pub max_panels: usize,
    /// Panel width divisor on top of the `π/(4(Ω+s))` rule.
    pub refine: u32,
    /// Smoothing scale of the cutoff ramp; the ramp is `16σ` long.
    pub sigma: f64,
    /// Radius `T` where the ramp starts; defaults to `max(32σ, 64/s)`.
    pub core_radius: Option<f64>,
    /// Without a spectrum the tail is a local mean; σ is doubled up to this
    /// value until the estimate meets `tol`.
    pub max_sigma: f64,
    /// Depth cap for adaptive bisection.
    pub max_depth: u32,
}

impl Default for QuadConfig {
    fn default() -> Self {
        QuadConfig {
            tol: 1e-8,
            max_panels: 100_000_000,
            refine: 1,
            sigma: 24.0,
            core_radius: None,
            max_sigma: 384.0,
            max_depth: 40,
        }
    }
}

impl QuadConfig {
    pub fn with_tol(tol: f64) -> Self {
        QuadConfig {
            tol,
            ..Default::default()
        }
    }
}

// ---------------------------------------------------------------------------
// Gauss–Legendre rule

pub const GL_ORDER: usize = 12;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [−1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn gl12() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(GL_ORDER))
}

/// Gauss–Legendre error constant `(n!)^4 / ((2n+1)((2n)!)^3)` for `n = 12`.
fn gl12_error_constant() -> f64 {
    let mut fact = [1.0f64; 25];
    for i in 1..25 {
        fact[i] = fact[i - 1] * i as f64;
    }
    fact[12].powi(4) / (25.0 * fact[24].powi(3))
}

// ---------------------------------------------------------------------------
// Geometry of the smooth cutoff

#[derive(Clone, Debug)]
struct Layout {
    s: f64,
    sigma: f64,
    t_core: f64,
    ramp: f64,
    radius: f64,
    width: f64,
    panels: usize,
    needed: usize,
}

const RAMP_SIGMAS: f64 = 16.0;
const BLOCK: usize = 256;

impl Layout {
    fn new(s: f64, bandwidth: f64, cfg: &QuadConfig) -> Result<Layout, QuadError> {
        if !(s > 0.0 && s <= 1.0) {
            return Err(QuadError::Invalid(format!("s = {s} outside (0, 1]")));
        }
        if !(bandwidth >= 0.0 && bandwidth.is_finite()) {
            return Err(QuadError::Invalid(format!("bandwidth {bandwidth}")));
        }
        if !(cfg.tol > 0.0) || cfg.refine == 0 || !(cfg.sigma > 0.0) {
            return Err(QuadError::Invalid("tol, refine and sigma must be positive".into()));
        }
        let sigma = cfg.sigma;
        let ramp = RAMP_SIGMAS * sigma;
        let t_core = cfg.core_radius.unwrap_or((2.0 * ramp).max(64.0 / s));
        if t_core < 2.0 * ramp {
            return Err(QuadError::Invalid(format!("core radius {t_core} below twice the ramp {ramp}")));
        }
        let radius = t_core + ramp;
        let max_width = PI / (4.0 * (bandwidth + s)) / cfg.refine as f64;
        let needed = (2.0 * radius / max_width).ceil() as usize;
        let panels = needed.min(cfg.max_panels.max(1));
        Ok(Layout {
            s,
            sigma,
            t_core,
            ramp,
            radius,
            width: 2.0 * radius / panels as f64,
            panels,
            needed,
        })
    }

    fn ramp_center(&self) -> f64 {
        self.t_core + 0.5 * self.ramp
    }

    /// Smooth cutoff: 1 on `[−T, T]`, Gaussian-CDF ramp, 0 beyond `T + 16σ`.
    fn chi(&self, theta: f64) -> f64 {
        let a = theta.abs();
        if a <= self.t_core {
            1.0
        } else {
            let z = (a - self.ramp_center()) / self.sigma;
            0.5 * statrs::function::erf::erfc(z / std::f64::consts::SQRT_2)
        }
    }

    fn gauss(&self, theta: f64, center: f64) -> f64 {
        let z = (theta.abs() - center) / self.sigma;
        if z.abs() > 0.5 * RAMP_SIGMAS {
            0.0
        } else {
            0.5 * (-0.5 * z * z).exp() / (self.sigma * (2.0 * PI).sqrt())
        }
    }

    /// Mean-estimation window around the ramp.
    fn window_a(&self, theta: f64) -> f64 {
        self.gauss(theta, self.ramp_center())
    }

    /// A second window inside the core, for the error estimate.
    fn window_b(&self, theta: f64) -> f64 {
        self.gauss(theta, 0.5 * self.t_core)
    }

    fn panel(&self, i: usize) -> (f64, f64) {
        let a = -self.radius + i as f64 * self.width;
        let b = if i + 1 == self.panels { self.radius } else { a + self.width };
        (a, b)
    }
}

/// `Kt(ξ) = ∫ e^{iξθ} K_s(θ)(1 − χ(θ)) dθ` on a frequency range.
struct TailTable {
    nodes: Vec<(f64, f64)>,
    s: f64,
}

impl TailTable {
    fn new(layout: &Layout, xi_max: f64) -> TailTable {
        let (gx, gw) = gl12();
        let width = PI / (4.0 * (xi_max + layout.s));
        let n = (layout.radius / width).ceil() as usize;
        let h = layout.radius / n as f64;
        let mut nodes = Vec::with_capacity(n * GL_ORDER);
        for i in 0..n {
            let a = i as f64 * h;
            for (x, w) in gx.iter().zip(gw) {
                let th = a + 0.5 * h * (x + 1.0);
                nodes.push((th, 0.5 * h * w * kernel(layout.s, th) * layout.chi(th)));
            }
        }
        TailTable { nodes, s: layout.s }
    }

    fn eval(&self, xi: f64) -> f64 {
        let mut acc = Compensated::default();
        for &(th, w) in &self.nodes {
            acc.add(w * (xi * th).cos());
        }
        kernel_ft(self.s, xi) - 2.0 * acc.value()
    }
}

// ---------------------------------------------------------------------------
// Engine

/// Writes `dim` values at θ into the buffer and returns a monitor value used
/// by the adaptive guard (typically `|f(θ)|`).
pub type Evaluator<'a> = dyn Fn(f64, &mut [Complex64]) -> f64 + Sync + 'a;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Adaptivity {
    Off,
    /// Bisect panels until whole-vs-halves estimates agree, refining anything
    /// whose monitor drops below `guard`.
    Bisect { guard: f64 },
}

struct Job<'a> {
    eval: &'a Evaluator<'a>,
    dim: usize,
    ts: &'a [f64],
    layout: Layout,
    adaptivity: Adaptivity,
    tol: f64,
    max_depth: u32,
}

#[derive(Clone)]
struct Acc {
    core: Vec<CompensatedC>,
    mean_a: Vec<CompensatedC>,
    mean_b: Vec<CompensatedC>,
    mod_a: Vec<CompensatedC>,
    mod_b: Vec<CompensatedC>,
    abs_sum: f64,
    max_abs: f64,
    flagged: bool,
    evals: usize,
}

impl Acc {
    fn new(dim: usize, nt: usize) -> Acc {
        Acc {
            core: vec![CompensatedC::default(); dim * nt],
            mean_a: vec![CompensatedC::default(); dim],
            mean_b: vec![CompensatedC::default(); dim],
            mod_a: vec![CompensatedC::default(); dim * nt],
            mod_b: vec![CompensatedC::default(); dim * nt],
            abs_sum: 0.0,
            max_abs: 0.0,
            flagged: false,
            evals: 0,
        }
    }

    fn merge(&mut self, o: &Acc) {
        for (a, b) in self.core.iter_mut().zip(&o.core) {
            a.add_acc(b);
        }
        for (a, b) in self.mean_a.iter_mut().zip(&o.mean_a) {
            a.add_acc(b);
        }
        for (a, b) in self.mean_b.iter_mut().zip(&o.mean_b) {
            a.add_acc(b);
        }
        for (a, b) in self.mod_a.iter_mut().zip(&o.mod_a) {
            a.add_acc(b);
        }
        for (a, b) in self.mod_b.iter_mut().zip(&o.mod_b) {
            a.add_acc(b);
        }
        self.abs_sum += o.abs_sum;
        self.max_abs = self.max_abs.max(o.max_abs);
        self.flagged |= o.flagged;
        self.evals += o.evals;
    }
}

impl Job<'_> {
    /// Accumulates one interval; returns the min and max monitor.
    fn accumulate(&self, a: f64, b: f64, acc: &mut Acc, buf: &mut [Complex64], phases: &mut [Complex64]) -> (f64, f64) {
        let (gx, gw) = gl12();
        let nt = self.ts.len();
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut mon_min = f64::INFINITY;
        let mut mon_max = 0.0f64;
        let layout = &self.layout;
        let in_a = (a.abs().max(b.abs()) >= layout.ramp_center() - 0.5 * layout.ramp)
            || (a <= -layout.t_core || b >= layout.t_core);
        let wb_lo = 0.5 * layout.t_core - 0.5 * layout.ramp;
        let wb_hi = 0.5 * layout.t_core + 0.5 * layout.ramp;
        let lo_abs = if a <= 0.0 && b >= 0.0 { 0.0 } else { a.abs().min(b.abs()) };
        let hi_abs = a.abs().max(b.abs());
        let in_b = hi_abs >= wb_lo && lo_abs <= wb_hi;
        for (x, w) in gx.iter().zip(gw) {
            let th = mid + half * x;
            let mon = (self.eval)(th, buf);
            mon_min = mon_min.min(mon);
            mon_max = mon_max.max(mon);
            let wq = half * w;
            let wk = wq * kernel(layout.s, th) * layout.chi(th);
            for (i, &t) in self.ts.iter().enumerate() {
                phases[i] = if t == 0.0 { Complex64::new(1.0, 0.0) } else { Complex64::from_polar(1.0, -t * th) };
            }
            for d in 0..self.dim {
                let v = buf[d];
                let av = v.norm();
                acc.abs_sum += wk * av;
                acc.max_abs = acc.max_abs.max(av);
                for i in 0..nt {
                    acc.core[d * nt + i].add(v * phases[i] * wk);
                }
            }
            if in_a {
                let wa = wq * layout.window_a(th);
                if wa != 0.0 {
                    for d in 0..self.dim {
                        acc.mean_a[d].add(buf[d] * wa);
                        for i in 0..nt {
                            acc.mod_a[d * nt + i].add(buf[d] * phases[i] * wa);
                        }
                    }
                }
            }
            if in_b {
                let wbv = wq * layout.window_b(th);
                if wbv != 0.0 {
                    for d in 0..self.dim {
                        acc.mean_b[d].add(buf[d] * wbv);
                        for i in 0..nt {
                            acc.mod_b[d * nt + i].add(buf[d] * phases[i] * wbv);
                        }
                    }
                }
            }
        }
        acc.evals += GL_ORDER;
        (mon_min, mon_max)
    }

    fn core_only(&self, a: f64, b: f64, buf: &mut [Complex64], phases: &mut [Complex64]) -> (Vec<Complex64>, f64, f64) {
        let mut acc = Acc::new(self.dim, self.ts.len());
        let (lo, hi) = self.accumulate(a, b, &mut acc, buf, phases);
        (acc.core.iter().map(|c| c.value()).collect(), lo, hi)
    }

    /// Collects leaf intervals of the adaptive bisection of `[a, b]`.
    fn bisect(&self, a: f64, b: f64, guard: f64, leaves: &mut Vec<(f64, f64)>, flagged: &mut bool, buf: &mut [Complex64], phases: &mut [Complex64]) {
        // (interval, depth, parent core sums, parent min monitor)
        let (whole, lo, _) = self.core_only(a, b, buf, phases);
        let mut stack = vec![(a, b, 0u32, whole, lo)];
        let span = 2.0 * self.layout.radius;
        while let Some((x0, x1, depth, parent, mon_lo)) = stack.pop() {
            let m = 0.5 * (x0 + x1);
            let (left, llo, _) = self.core_only(x0, m, buf, phases);
            let (right, rlo, _) = self.core_only(m, x1, buf, phases);
            let diff = parent
                .iter()
                .zip(left.iter().zip(&right))
                .map(|(p, (l, r))| (p - l - r).norm())
                .fold(0.0, f64::max);
            let scale = parent.iter().map(|p| p.norm()).fold(0.0, f64::max);
            let local = (self.tol * (x1 - x0) / span).max(1e-15 * scale);
            let guarded = mon_lo < guard;
            let settled = diff <= local && (!guarded || diff <= 1e-3 * local || depth >= 8);
            if settled {
                leaves.push((x0, m));
                leaves.push((m, x1));
            } else if depth + 1 >= self.max_depth {
                *flagged = true;
                leaves.push((x0, m));
                leaves.push((m, x1));
            } else {
                stack.push((m, x1, depth + 1, right, rlo));
                stack.push((x0, m, depth + 1, left, llo));
            }
        }
        leaves.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    }

    fn block(&self, start: usize, end: usize) -> Acc {
        let nt = self.ts.len();
        let mut acc = Acc::new(self.dim, nt);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.dim];
        let mut phases = vec![Complex64::new(0.0, 0.0); nt];
        for i in start..end {
            let (a, b) = self.layout.panel(i);
            match self.adaptivity {
                Adaptivity::Off => {
                    self.accumulate(a, b, &mut acc, &mut buf, &mut phases);
                }
                Adaptivity::Bisect { guard } => {
                    let mut leaves = Vec::new();
                    let mut flagged = false;
                    self.bisect(a, b, guard, &mut leaves, &mut flagged, &mut buf, &mut phases);
                    acc.flagged |= flagged;
                    for (x0, x1) in leaves {
                        self.accumulate(x0, x1, &mut acc, &mut buf, &mut phases);
                    }
                }
            }
        }
        acc
    }

    fn run(&self) -> Acc {
        let n = self.layout.panels;
        let blocks: Vec<(usize, usize)> = (0..n.div_ceil(BLOCK)).map(|b| (b * BLOCK, ((b + 1) * BLOCK).min(n))).collect();
        let parts: Vec<Acc> = blocks.par_iter().map(|&(s, e)| self.block(s, e)).collect();
        let mut total = Acc::new(self.dim, self.ts.len());
        for p in &parts {
            total.merge(p);
        }
        total
    }
}

/// Spectral information for the tail, per output dimension.
type SpectralTail<'a> = Option<&'a dyn Density>;

fn finish(job: &Job, acc: &Acc, spectral: SpectralTail, cfg: &QuadConfig) -> Result<Vec<QuadResult>, QuadError> {
    let layout = &job.layout;
    let nt = job.ts.len();
    let margin = 10.0 / layout.sigma;
    let t_max = job.ts.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    let table = TailTable::new(layout, layout.s + margin + if spectral.is_some() { 0.0 } else { t_max });
    let gl_err = {
        let band = PI / (4.0 * layout.width) * 1.0;
        gl12_error_constant() * layout.width.powi(25) * band.powi(24) * acc.max_abs * kernel(layout.s, 0.0) * layout.panels as f64
    };
    let roundoff = 16.0 * f64::EPSILON * acc.abs_sum.max(1e-300);
    let mut out = Vec::with_capacity(job.dim * nt);
    for d in 0..job.dim {
        for (i, &t) in job.ts.iter().enumerate() {
            let core = acc.core[d * nt + i].value();
            let (tail, tail_err, mode) = match spectral {
                Some(dens) => {
                    let lo = t - layout.s - margin;
                    let hi = t + layout.s + margin;
                    let comps = match dens.components(lo, hi) {
                        Some(Ok(c)) => c,
                        Some(Err(e)) => return Err(QuadError::Spectrum(e)),
                        None => return Err(QuadError::Spectrum("density has no spectrum".into())),
                    };
                    let mut tail = CompensatedC::default();
                    let mut mag = 0.0;
                    for (w, c) in comps {
                        let k = table.eval(w - t);
                        tail.add(c * k);
                        mag += c.norm() * k.abs();
                    }
                    (tail.value(), 16.0 * f64::EPSILON * mag, TailMode::Spectral)
                }
                None => {
                    let c0a = acc.mean_a[d].value();
                    let c0b = acc.mean_b[d].value();
                    let k0 = table.eval(t);
                    let mut tail = c0a * k0;
                    let mut err = (c0a - c0b).norm() * k0.abs();
                    if t.abs() >= 8.0 / layout.sigma {
                        let cta = acc.mod_a[d * nt + i].value();
                        let ctb = acc.mod_b[d * nt + i].value();
                        let kz = table.eval(0.0);
                        tail += cta * kz;
                        err += (cta - ctb).norm() * kz.abs();
                    }
                    (tail, err, TailMode::LocalMean)
                }
            };
            let cut_mass = 2.0 * kernel(layout.s, layout.radius).max(2.0 / (PI * layout.s * layout.radius.powi(2))) * layout.radius;
            let beyond = acc.max_abs * cut_mass * 0.5 * statrs::function::erf::erfc(0.5 * RAMP_SIGMAS / std::f64::consts::SQRT_2);
            let est = gl_err + roundoff + tail_err + beyond;
            out.push(QuadResult {
                value: core + tail,
                abs_error_estimate: est,
                truncation_radius: layout.radius,
                panels: layout.panels,
                tail,
                tail_mode: mode,
                flagged: acc.flagged,
            });
        }
    }
    if layout.needed > layout.panels {
        return Err(QuadError::PanelBudget {
            needed: layout.needed,
            budget: layout.panels,
            best: Box::new(out.swap_remove(0)),
        });
    }
    if let Some(bad) = out.iter().find(|r| r.abs_error_estimate > cfg.tol) {
        return Err(QuadError::Tolerance {
            tol: cfg.tol,
            estimate: bad.abs_error_estimate,
            best: Box::new(bad.clone()),
        });
    }
    Ok(out)
}

/// Integrates `dim` outputs of `eval` against `e^{−itθ}·λ_s` for every `t`
/// in `ts`. Results are ordered output-major: index `d·len(ts) + i`.
pub fn integrate_many(
    eval: &Evaluator,
    dim: usize,
    bandwidth: f64,
    ts: &[f64],
    s: f64,
    cfg: &QuadConfig,
    adaptivity: Adaptivity,
) -> Result<Vec<QuadResult>, QuadError> {
    run_job(eval, dim, bandwidth, ts, s, cfg, adaptivity, None)
}

#[allow(clippy::too_many_arguments)]
fn run_job(
    eval: &Evaluator,
    dim: usize,
    bandwidth: f64,
    ts: &[f64],
    s: f64,
    cfg: &QuadConfig,
    adaptivity: Adaptivity,
    spectral: SpectralTail,
) -> Result<Vec<QuadResult>, QuadError> {
    if dim == 0 || ts.is_empty() {
        return Err(QuadError::Invalid("empty output set".into()));
    }
    if ts.iter().any(|t| !t.is_finite()) {
        return Err(QuadError::Invalid("non-finite frequency".into()));
    }
    let t_max = ts.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    let mut cfg = cfg.clone();
    loop {
        let layout = Layout::new(s, bandwidth + t_max, &cfg)?;
        let job = Job {
            eval,
            dim,
            ts,
            layout,
            adaptivity,
            tol: cfg.tol,
            max_depth: cfg.max_depth,
        };
        let acc = job.run();
        match finish(&job, &acc, spectral, &cfg) {
            // A local-mean tail that misses the tolerance gets a wider window.
            Err(QuadError::Tolerance { .. }) if spectral.is_none() && cfg.core_radius.is_none() && 2.0 * cfg.sigma <= cfg.max_sigma => {
                cfg.sigma *= 2.0;
            }
            other => return other,
        }
    }
}

fn density_job<'a>(f: &'a dyn Density) -> impl Fn(f64, &mut [Complex64]) -> f64 + Sync + 'a {
    move |th, out| {
        let v = f.eval(th);
        out[0] = v;
        v.norm()
    }
}

fn spectral_probe(f: &dyn Density) -> SpectralTail<'_> {
    if f.components(0.0, 0.0).is_some() {
        Some(f)
    } else {
        None
    }
}

/// `∫ f dλ_s`.
pub fn integrate(f: &dyn Density, s: f64, cfg: &QuadConfig) -> Result<QuadResult, QuadError> {
    weighted_ft(f, 0.0, s, cfg)
}

/// `∫ e^{−itθ} f(θ) dλ_s(θ)`.
pub fn weighted_ft(f: &dyn Density, t: f64, s: f64, cfg: &QuadConfig) -> Result<QuadResult, QuadError> {
    Ok(weighted_ft_many(f, &[t], s, cfg)?.remove(0))
}

/// `weighted_ft` at many frequencies, evaluating the density once per node.
pub fn weighted_ft_many(f: &dyn Density, ts: &[f64], s: f64, cfg: &QuadConfig) -> Result<Vec<QuadResult>, QuadError> {
    let ev = density_job(f);
    run_job(&ev, 1, f.bandwidth(), ts, s, cfg, Adaptivity::Off, spectral_probe(f))
}

/// `(∫|f|^p dλ_s)^{1/p}`.
pub fn lp_norm(f: &dyn Density, p: f64, s: f64, cfg: &QuadConfig) -> Result<f64, QuadError> {
    if !(p > 0.0) {
        return Err(QuadError::Invalid(format!("exponent {p} must be positive")));
    }
    let ev = move |th: f64, out: &mut [Complex64]| {
        let a = f.eval(th).norm();
        out[0] = Complex64::new(a.powf(p), 0.0);
        a
    };
    let r = run_job(&ev, 1, f.bandwidth(), &[0.0], s, cfg, Adaptivity::Off, None)?;
    Ok(r[0].value.re.powf(1.0 / p))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MahlerResult {
    pub value: f64,
    pub log_integral: f64,
    pub flagged: bool,
    pub quad: QuadResult,
}

/// Offset applied to nodes landing exactly on a zero of `f`.
pub const ZERO_NUDGE: f64 = 1e-9;

/// `exp ∫ log|f| dλ_s`, with adaptive bisection around near-zeros.
pub fn mahler(f: &dyn Density, s: f64, cfg: &QuadConfig) -> Result<MahlerResult, QuadError> {
    let ev = move |th: f64, out: &mut [Complex64]| {
        let mut a = f.eval(th).norm();
        if a == 0.0 {
            a = f.eval(th + ZERO_NUDGE).norm();
        }
        out[0] = Complex64::new(a.ln(), 0.0);
        a
    };
    let r = run_job(&ev, 1, f.bandwidth(), &[0.0], s, cfg, Adaptivity::Bisect { guard: 1e-3 }, None)?.remove(0);
    if !r.value.re.is_finite() {
        return Err(QuadError::Invalid("log-integral diverged; f vanishes on a set of positive measure".into()));
    }
    Ok(MahlerResult {
        value: r.value.re.exp(),
        log_integral: r.value.re,
        flagged: r.flagged,
        quad: r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn kernel_basics() {
        assert!((kernel(0.7, 0.0) - 0.7 / (2.0 * PI)).abs() < 1e-16);
        assert_eq!(kernel_ft(0.5, 0.25), 0.5);
        assert_eq!(kernel_ft(0.5, 0.0), 1.0);
        assert_eq!(kernel_ft(0.5, 0.5), 0.0);
        assert_eq!(kernel_ft(0.5, -0.75), 0.0);
        for &th in &[0.1, 1.0, 7.3, 100.0] {
            assert_eq!(kernel(0.5, th), kernel(0.5, -th));
            let direct = (1.0 - (0.5 * th as f64).cos()) / (PI * 0.5 * th * th);
            assert!((kernel(0.5, th) - direct).abs() < 1e-12);
            assert!(kernel(0.5, th) <= 2.0 / (PI * 0.5 * th * th) + 1e-15);
        }
    }

    #[test]
    fn gauss_legendre_exactness() {
        let (x, w) = gauss_legendre(12);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        for k in 0..24 {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(k)).sum();
            let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
            assert!((q - exact).abs() < 1e-14, "degree {k}");
        }
        let (x1, w1) = gauss_legendre(1);
        assert_eq!((x1[0], w1[0]), (0.0, 2.0));
    }

    #[test]
    fn unit_mass() {
        let r = integrate(&Constant(c(1.0)), 0.5, &QuadConfig::default()).unwrap();
        assert!((r.value.re - 1.0).abs() < 1e-10, "{:?}", r);
        assert!(r.value.im.abs() < 1e-14);
        for s in [0.05, 0.3, 1.0] {
            let r = integrate(&Constant(c(1.0)), s, &QuadConfig::default()).unwrap();
            assert!((r.value.re - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn unit_mass_without_spectrum() {
        let f = FnDensity { f: |_| c(1.0), bandwidth: 0.0 };
        let r = integrate(&f, 0.5, &QuadConfig::default()).unwrap();
        assert_eq!(r.tail_mode, TailMode::LocalMean);
        assert!((r.value.re - 1.0).abs() < 1e-10);
    }

    #[test]
    fn pure_exponential_matches_kernel_ft() {
        // ∫ e^{iωθ} dλ_s = K̂_s(ω).
        for &w in &[0.0, 0.1, 0.3, 0.49, 0.7, 2.5] {
            let f = crate::trigpoly::TrigPoly::new(vec![(w, c(1.0))]).unwrap();
            let r = integrate(&f, 0.5, &QuadConfig::default()).unwrap();
            assert_eq!(r.tail_mode, TailMode::Spectral);
            assert!((r.value - c(kernel_ft(0.5, w))).norm() < 1e-10, "w={w}: {:?}", r.value);
        }
        // Without a spectrum only frequencies 0 and those clear of the window
        // bandwidth are resolved; 0.1 needs the window widened.
        for &w in &[0.0, 0.1, 0.7, 2.5] {
            let f = FnDensity { f: move |th: f64| Complex64::from_polar(1.0, w * th), bandwidth: w };
            let r = integrate(&f, 0.5, &QuadConfig::default()).unwrap();
            assert!((r.value - c(kernel_ft(0.5, w))).norm() < 1e-8, "w={w}: {:?}", r.value);
        }
        let f = FnDensity { f: |th: f64| Complex64::from_polar(1.0, 0.002 * th), bandwidth: 0.002 };
        assert!(matches!(integrate(&f, 0.5, &QuadConfig::default()), Err(QuadError::Tolerance { .. })));
        let fixed = QuadConfig { max_sigma: 24.0, ..Default::default() };
        let f = FnDensity { f: |th: f64| Complex64::from_polar(1.0, 0.1 * th), bandwidth: 0.1 };
        assert!(matches!(integrate(&f, 0.5, &fixed), Err(QuadError::Tolerance { .. })));
    }

    #[test]
    fn ft_of_constant() {
        for &t in &[0.0, 0.2, -0.37, 0.5, 1.3] {
            let r = weighted_ft(&Constant(c(1.0)), t, 0.5, &QuadConfig::default()).unwrap();
            assert!((r.value - c(kernel_ft(0.5, t))).norm() < 1e-10, "t={t}");
            let f = FnDensity { f: |_| c(1.0), bandwidth: 0.0 };
            let r = weighted_ft(&f, t, 0.5, &QuadConfig::default()).unwrap();
            assert!((r.value - c(kernel_ft(0.5, t))).norm() < 1e-9, "closure t={t}");
        }
    }

    #[test]
    fn conjugate_symmetry_for_real_density() {
        let f = FnDensity { f: |th: f64| c(1.0 + 0.5 * (1.3 * th).cos() + 0.25 * (3.1 * th).sin()), bandwidth: 3.1 };
        let cfg = QuadConfig::default();
        for &t in &[0.1, 0.4, 1.0, 2.9] {
            let a = weighted_ft(&f, t, 0.5, &cfg).unwrap().value;
            let b = weighted_ft(&f, -t, 0.5, &cfg).unwrap().value;
            assert!((a - b.conj()).norm() < 1e-12);
        }
    }

    #[test]
    fn refinement_within_estimate() {
        let f = FnDensity { f: |th: f64| c((2.0 + (1.7 * th).cos()) * (1.0 + 0.3 * (4.2 * th).sin())), bandwidth: 5.9 };
        let a = integrate(&f, 0.5, &QuadConfig::default()).unwrap();
        let cfg2 = QuadConfig { refine: 2, ..Default::default() };
        let b = integrate(&f, 0.5, &cfg2).unwrap();
        assert!((a.value - b.value).norm() <= a.abs_error_estimate, "{} vs {}", (a.value - b.value).norm(), a.abs_error_estimate);
        assert!(b.panels >= 2 * a.panels - 1);
    }

    #[test]
    fn deterministic_across_pools() {
        let f = FnDensity { f: |th: f64| c(1.0 + (0.9 * th).cos() * (2.3 * th).cos()), bandwidth: 3.2 };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| integrate(&f, 0.5, &QuadConfig::default()).unwrap().value)
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.re.to_bits(), b.re.to_bits());
        assert_eq!(a.im.to_bits(), b.im.to_bits());
    }

    #[test]
    fn panel_budget_failure_carries_estimate() {
        let cfg = QuadConfig { max_panels: 100, ..Default::default() };
        match integrate(&Constant(c(1.0)), 0.5, &cfg) {
            Err(QuadError::PanelBudget { best, needed, budget }) => {
                assert!(needed > budget);
                assert!(best.value.re.is_finite());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_inputs() {
        assert!(integrate(&Constant(c(1.0)), 0.0, &QuadConfig::default()).is_err());
        assert!(integrate(&Constant(c(1.0)), 1.5, &QuadConfig::default()).is_err());
        let f = FnDensity { f: |_| c(1.0), bandwidth: 0.0 };
        assert!(lp_norm(&f, 0.0, 0.5, &QuadConfig::default()).is_err());
    }

    #[test]
    fn lp_of_one() {
        let f = FnDensity { f: |_| c(1.0), bandwidth: 0.0 };
        for p in [0.3, 1.0, 2.0, 4.0] {
            assert!((lp_norm(&f, p, 0.5, &QuadConfig::default()).unwrap() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn mahler_of_one_and_of_cosine_factor() {
        let one = FnDensity { f: |_| c(1.0), bandwidth: 0.0 };
        let m = mahler(&one, 0.5, &QuadConfig::default()).unwrap();
        assert!((m.value - 1.0).abs() < 1e-10);
        // |1 + e^{iθ}| = 2|cos(θ/2)| has log-singularities at odd multiples of π.
        // Its log-integral against λ_s: log 2 + ∫ log|cos(θ/2)| dλ_s, and
        // log|cos(x)| = −log 2 − Σ_k (−1)^k cos(2kx)/k, so with x = θ/2 only
        // k with k ≤ s survive; for s = 0.5 nothing but the constant.
        let f = FnDensity { f: |th: f64| Complex64::new(1.0, 0.0) + Complex64::from_polar(1.0, th), bandwidth: 1.0 };
        let m = mahler(&f, 0.5, &QuadConfig::with_tol(1e-8)).unwrap();
        assert!(m.log_integral.abs() < 1e-6, "{:?}", m);
    }
}
