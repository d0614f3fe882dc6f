//! Dispatch of experiments to the library and persistence of their results.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use rankflow::criteria::{self, CriteriaError};
use rankflow::expsum::{self, ExpParams, ExpSumError, QTable};
use rankflow::fejerquad::{integrate, kernel_ft, weighted_ft_many, QuadConfig, QuadError};
use rankflow::keyed::{Domain, StreamKey};
use rankflow::riesz::{self, ProductChain, RieszError};
use rankflow::stochastic::{self, CltReport, StochasticError};
use rankflow::tower::{build_tower, Rational, Tower, TowerError};
use rankflow::trigpoly::{stage_poly, TrigPoly, TrigPolyError};

use crate::config::{LadderConfig, Check, CltModel, Config, Experiment, Reference, TPoints, Task, TowerConfig};

/// Bumped whenever a CSV column or JSON field changes meaning.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Failure of one experiment or one check; recorded, never fatal.
#[derive(Debug, Error)]
enum TaskError {
    #[error(transparent)]
    Tower(#[from] TowerError),
    #[error(transparent)]
    Poly(#[from] TrigPolyError),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Riesz(#[from] RieszError),
    #[error(transparent)]
    Criteria(#[from] CriteriaError),
    #[error(transparent)]
    Stochastic(#[from] StochasticError),
    #[error(transparent)]
    ExpSum(#[from] ExpSumError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Other(String),
}

#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub tol: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResultRecord {
    pub schema: u32,
    pub id: String,
    pub kind: String,
    pub module: String,
    pub operation: String,
    pub timestamp: u64,
    pub seed: u64,
    pub inputs_digest: String,
    pub parameters: serde_json::Value,
    pub tolerances: BTreeMap<String, f64>,
    pub metrics: BTreeMap<String, f64>,
    /// Pass/fail of each individual check; `pass` is their conjunction.
    pub checks: BTreeMap<String, bool>,
    /// Informational truth values that do not gate `pass`.
    pub flags: BTreeMap<String, bool>,
    pub notes: Vec<String>,
    pub errors: Vec<String>,
    pub files: Vec<String>,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SummaryEntry {
    pub id: String,
    pub kind: String,
    pub inputs_digest: String,
    pub pass: bool,
    pub failed_checks: Vec<String>,
    pub errors: Vec<String>,
    /// Wall time; reported on the console only, so files stay reproducible.
    #[serde(skip)]
    pub elapsed_s: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub schema: u32,
    pub timestamp: u64,
    pub seed: u64,
    pub experiments: Vec<SummaryEntry>,
    pub pass: bool,
}

/// Collects what one experiment produces.
#[derive(Default)]
struct Output {
    module: &'static str,
    operation: Vec<&'static str>,
    tolerances: BTreeMap<String, f64>,
    metrics: BTreeMap<String, f64>,
    checks: BTreeMap<String, bool>,
    flags: BTreeMap<String, bool>,
    notes: Vec<String>,
    errors: Vec<String>,
    files: Vec<(String, String)>,
}

impl Output {
    fn new(module: &'static str) -> Self {
        Output {
            module,
            ..Default::default()
        }
    }

    fn metric(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.insert(name.into(), value);
    }

    fn check(&mut self, name: impl Into<String>, ok: bool) {
        self.checks.insert(name.into(), ok);
    }

    /// `value ≤ bound`, recording the bound as a tolerance.
    fn at_most(&mut self, name: &str, value: f64, bound: f64) {
        self.metric(name, value);
        self.tolerances.insert(format!("{name}.max"), bound);
        self.check(format!("{name}<={bound:e}"), value <= bound);
    }

    fn at_least(&mut self, name: &str, value: f64, bound: f64) {
        self.metric(name, value);
        self.tolerances.insert(format!("{name}.min"), bound);
        self.check(format!("{name}>={bound:e}"), value >= bound);
    }

    fn file(&mut self, name: impl Into<String>, contents: String) {
        self.files.push((name.into(), contents));
    }

    /// Key=bool strings become flags, anything else a note.
    fn library_flags(&mut self, prefix: &str, flags: &[String]) {
        for f in flags {
            match f.split_once('=').map(|(k, v)| (k, v.parse::<bool>())) {
                Some((k, Ok(b))) => {
                    self.flags.insert(format!("{prefix}{k}"), b);
                }
                _ => self.notes.push(format!("{prefix}{f}")),
            }
        }
    }

    fn fail(&mut self, context: &str, e: TaskError) {
        self.errors.push(format!("{context}: {e}"));
    }
}

/// Seconds since the epoch stamped into records; never the wall clock, so
/// reruns are byte-identical.
pub fn timestamp(cfg: &Config) -> u64 {
    cfg.timestamp
        .or_else(|| std::env::var("SOURCE_DATE_EPOCH").ok()?.trim().parse().ok())
        .unwrap_or(0)
}

fn digest(exp: &Experiment, seed: u64, ov: &Overrides) -> String {
    let mut v = serde_json::to_value(exp).expect("config serializes");
    if let Some(m) = v.as_object_mut() {
        m.remove("id");
    }
    let canon = serde_json::json!({ "experiment": v, "seed": seed, "tol_override": ov.tol });
    let mut h = Sha256::new();
    h.update(canon.to_string().as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn kind_name(task: &Task) -> &'static str {
    match task {
        Task::Tower { .. } => "tower",
        Task::Spectrum { .. } => "spectrum",
        Task::Criteria { .. } => "criteria",
        Task::Clt { .. } => "clt",
        Task::Flatness { .. } => "flatness",
        Task::KkVerify { .. } => "kk-verify",
    }
}

fn write(path: &Path, contents: &[u8]) -> Result<(), RunError> {
    std::fs::write(path, contents).map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("records serialize");
    s.push(b'\n');
    s
}

/// Runs every experiment whose kind is in `kinds` (all when `None`) and
/// writes `<out>/<id>/…` plus `<out>/summary.json`.
pub fn run(cfg: &Config, out: &Path, kinds: Option<&[&str]>, ov: &Overrides) -> Result<Summary, RunError> {
    let seed = ov.seed.unwrap_or(cfg.seed);
    let stamp = timestamp(cfg);
    let selected: Vec<&Experiment> = cfg
        .experiments
        .iter()
        .filter(|e| kinds.is_none_or(|k| k.contains(&kind_name(&e.task))))
        .collect();
    std::fs::create_dir_all(out).map_err(|source| RunError::Io {
        path: out.to_path_buf(),
        source,
    })?;

    let records: Vec<Result<(ResultRecord, f64), RunError>> = selected
        .par_iter()
        .map(|exp| {
            let start = std::time::Instant::now();
            let (record, files) = execute(exp, seed, stamp, ov);
            persist(out, &record, &files)?;
            Ok((record, start.elapsed().as_secs_f64()))
        })
        .collect();
    let mut records: Vec<(ResultRecord, f64)> = records.into_iter().collect::<Result<_, _>>()?;
    records.sort_by(|a, b| a.0.id.cmp(&b.0.id));

    let experiments: Vec<SummaryEntry> = records
        .iter()
        .map(|(r, elapsed_s)| SummaryEntry {
            id: r.id.clone(),
            kind: r.kind.clone(),
            inputs_digest: r.inputs_digest.clone(),
            pass: r.pass,
            failed_checks: r.checks.iter().filter(|c| !c.1).map(|c| c.0.clone()).collect(),
            errors: r.errors.clone(),
            elapsed_s: *elapsed_s,
        })
        .collect();
    let summary = Summary {
        schema: SCHEMA_VERSION,
        timestamp: stamp,
        seed,
        pass: experiments.iter().all(|e| e.pass),
        experiments,
    };
    write(&out.join("summary.json"), &to_json(&summary))?;
    Ok(summary)
}

fn persist(out: &Path, record: &ResultRecord, files: &[(String, String)]) -> Result<(), RunError> {
    let dir = out.join(&record.id);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|source| RunError::Io { path: dir.clone(), source })?;
    }
    std::fs::create_dir_all(&dir).map_err(|source| RunError::Io { path: dir.clone(), source })?;
    for (name, contents) in files {
        write(&dir.join(name), contents.as_bytes())?;
    }
    write(&dir.join("result.json"), &to_json(record))
}

fn execute(exp: &Experiment, seed: u64, stamp: u64, ov: &Overrides) -> (ResultRecord, Vec<(String, String)>) {
    let key = StreamKey::new(&exp.id, seed);
    let mut quad = QuadConfig::with_tol(ov.tol.or(exp.quad.tol).unwrap_or(1e-8));
    if let Some(sigma) = exp.quad.sigma {
        quad.sigma = sigma;
    }
    if let Some(m) = exp.quad.max_sigma {
        quad.max_sigma = m;
    }
    if let Some(m) = exp.quad.max_panels {
        quad.max_panels = m;
    }

    let mut o = match &exp.task {
        Task::Tower { tower } => run_tower(tower, &key),
        Task::Spectrum {
            tower,
            stages,
            s,
            t,
            reference,
            max_abs_diff,
        } => run_spectrum(tower, stages, *s, t, *reference, *max_abs_diff, &key, &quad),
        Task::Criteria { tower, s, checks } => run_criteria(tower.as_ref(), *s, checks, &key, &quad),
        Task::Clt {
            model,
            max_ks,
            min_ks,
            moment_target,
            moment_tol,
            bins,
        } => run_clt(model, *max_ks, *min_ks, *moment_target, *moment_tol, *bins, &key),
        Task::Flatness {
            ladder,
            max_ratio,
            min_deficit,
        } => run_flatness(ladder, *max_ratio, *min_deficit),
        Task::KkVerify { ladder } => run_kk(ladder),
    };
    if matches!(exp.task, Task::Spectrum { .. } | Task::Criteria { .. }) {
        o.tolerances.insert("quad.tol".into(), quad.tol);
    }

    let pass = o.errors.is_empty() && o.checks.values().all(|&c| c);
    let mut parameters = serde_json::to_value(exp).expect("config serializes");
    if let Some(m) = parameters.as_object_mut() {
        m.remove("id");
    }
    let record = ResultRecord {
        schema: SCHEMA_VERSION,
        id: exp.id.clone(),
        kind: kind_name(&exp.task).to_string(),
        module: o.module.to_string(),
        operation: o.operation.join("+"),
        timestamp: stamp,
        seed,
        inputs_digest: digest(exp, seed, ov),
        parameters,
        tolerances: o.tolerances,
        metrics: o.metrics,
        checks: o.checks,
        flags: o.flags,
        notes: o.notes,
        errors: o.errors,
        files: o.files.iter().map(|f| f.0.clone()).collect(),
        pass,
    };
    (record, o.files)
}

fn csv_string<R: Serialize>(header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<String, TaskError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| TaskError::Other(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| TaskError::Other(e.to_string()))
}

fn build(cfg: &TowerConfig, key: &StreamKey) -> Result<Tower, TaskError> {
    Ok(build_tower(&cfg.cutting_spec(key), cfg.depth())?)
}

// ---------------------------------------------------------------------------
// tower

fn run_tower(cfg: &TowerConfig, key: &StreamKey) -> Output {
    let mut o = Output::new("tower");
    o.operation.push("build_tower");
    match build(cfg, key) {
        Ok(t) => {
            o.metric("depth", t.depth() as f64);
            o.metric("final_height", *t.heights.last().unwrap());
            o.metric("max_frequency", t.levels.iter().map(|l| l.max_frequency()).fold(0.0, f64::max));
            o.file("tower.csv", t.to_csv());
            match rankflow::tower::finite_measure_partial_sums(&cfg.cutting_spec(key), cfg.depth()) {
                Ok(r) => {
                    o.metric("finite_measure_partial_sum", *r.partial_sums.last().unwrap_or(&0.0));
                    o.flags.insert("finite_measure_diverging".into(), r.trend == rankflow::tower::Trend::Diverging);
                }
                Err(e) => o.fail("finite_measure_partial_sums", e.into()),
            }
        }
        Err(e) => o.fail("build_tower", e),
    }
    o
}

// ---------------------------------------------------------------------------
// spectrum

fn spectrum_points(t: &TPoints, tower: &Tower, n: usize, s: f64, key: &StreamKey) -> Result<Vec<f64>, TaskError> {
    Ok(match t {
        TPoints::List { values } => values.clone(),
        TPoints::Grid { from, to, count } => {
            if *count == 1 {
                vec![*from]
            } else {
                (0..*count).map(|i| from + (to - from) * i as f64 / (*count - 1) as f64).collect()
            }
        }
        TPoints::Random { count } => {
            let h = tower.height(n + 1);
            let mut st = key.stream(Domain::Misc, n as u64, 0);
            (0..*count).map(|_| st.uniform_in(-h, h)).collect()
        }
        TPoints::Triangle { inner, outer } => {
            let h = tower.height(n);
            if h <= s {
                return Err(TaskError::Other(format!("h = {h} is not above s = {s}")));
            }
            let near = (h - s).min(s + 1.0);
            let mut ts: Vec<f64> = (0..*inner)
                .map(|i| -near + 2.0 * near * (i as f64 + 0.5) / *inner as f64)
                .collect();
            // (s, h − s) is empty when h ≤ 2s.
            if h > 2.0 * s {
                ts.extend((0..*outer).map(|i| s + (h - 2.0 * s) * (i as f64 + 0.5) / *outer as f64));
            }
            ts
        }
    })
}

#[allow(clippy::too_many_arguments)]
fn run_spectrum(
    cfg: &TowerConfig,
    stages: &[usize],
    s: f64,
    t: &TPoints,
    reference: Reference,
    max_abs_diff: f64,
    key: &StreamKey,
    quad: &QuadConfig,
) -> Output {
    let mut o = Output::new("riesz");
    o.operation.push("weighted_ft");
    o.operation.push(match reference {
        Reference::Words => "ft_combinatorial",
        Reference::Triangle => "kernel_ft",
    });
    let tower = match build(cfg, key) {
        Ok(t) => t,
        Err(e) => {
            o.fail("build_tower", e);
            return o;
        }
    };
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    let mut worst_err = 0.0f64;
    for &n in stages {
        let res = (|| -> Result<(), TaskError> {
            let ts = spectrum_points(t, &tower, n, s, key)?;
            let (chain, reference_at): (ProductChain, Box<dyn Fn(f64) -> f64>) = match reference {
                Reference::Words => {
                    let words = riesz::word_multiset(&tower, n)?;
                    let chain = ProductChain::from_tower(&tower, &(0..=n).collect::<Vec<_>>())?;
                    (chain, Box::new(move |t| words.ft(t, s)))
                }
                Reference::Triangle => (
                    ProductChain::from_polys(vec![stage_poly(tower.level(n))]),
                    Box::new(move |t| kernel_ft(s, t)),
                ),
            };
            let res = weighted_ft_many(&chain.squared(), &ts, s, quad)?;
            for (t, r) in ts.iter().zip(&res) {
                let want = reference_at(*t);
                let diff = (r.value - Complex64::new(want, 0.0)).norm();
                worst = worst.max(diff);
                worst_err = worst_err.max(r.abs_error_estimate);
                rows.push((n, *t, r.value.re, r.value.im, want, diff, r.abs_error_estimate));
            }
            Ok(())
        })();
        if let Err(e) = res {
            o.fail(&format!("stage {n}"), e);
        }
    }
    o.metric("points", rows.len() as f64);
    o.metric("max_error_estimate", worst_err);
    o.at_most("max_abs_diff", worst, max_abs_diff);
    match csv_string(&["n", "t", "quad_re", "quad_im", "reference", "abs_diff", "error_estimate"], rows) {
        Ok(c) => o.file("spectrum.csv", c),
        Err(e) => o.fail("spectrum.csv", e),
    }
    o
}

// ---------------------------------------------------------------------------
// criteria

const NORMALIZATION_TOL: f64 = 1e-6;
const PEYRIERE_TOL: f64 = 1e-4;
const STABILITY_TOL: f64 = 1e-6;
const SLACK_FLOOR: f64 = -1e-7;
const BUMP_INTEGRAL_REL: f64 = 0.05;
const TOTIENT_REL: f64 = 1e-3;
/// Points in `[−10, 10]` where identical chains are compared.
const RATIO_POINTS: usize = 257;

fn run_criteria(tower_cfg: Option<&TowerConfig>, s: f64, checks: &[Check], key: &StreamKey, quad: &QuadConfig) -> Output {
    let mut o = Output::new("criteria");
    let tower = match tower_cfg.map(|c| build(c, key)).transpose() {
        Ok(t) => t,
        Err(e) => {
            o.fail("build_tower", e);
            return o;
        }
    };
    for c in checks {
        let name = c.name();
        o.operation.push(name);
        if let Err(e) = run_check(&mut o, c, tower.as_ref(), tower_cfg, s, quad) {
            o.fail(name, e);
            o.check(format!("{name}.completed"), false);
        }
    }
    o
}

fn run_check(
    o: &mut Output,
    check: &Check,
    tower: Option<&Tower>,
    tower_cfg: Option<&TowerConfig>,
    s: f64,
    quad: &QuadConfig,
) -> Result<(), TaskError> {
    // Validation guarantees a tower for the checks that need one.
    let tower = || tower.ok_or_else(|| TaskError::Other("no tower".into()));
    match check {
        Check::Normalization { indices } => {
            let chain = ProductChain::from_tower(tower()?, indices)?;
            let mut rows = Vec::new();
            let mut worst = 0.0f64;
            for mask in 0u64..1 << chain.len() {
                let pos: Vec<usize> = (0..chain.len()).filter(|i| mask >> i & 1 == 1).collect();
                let r = integrate(&chain.select(&pos).squared(), s, quad)?;
                let dev = (r.value - Complex64::new(1.0, 0.0)).norm();
                worst = worst.max(dev);
                rows.push((mask, r.value.re, r.value.im, r.abs_error_estimate));
            }
            o.metric("normalization.subsets", rows.len() as f64);
            o.at_most("normalization.max_abs_dev", worst, NORMALIZATION_TOL);
            o.file("normalization.csv", csv_string(&["mask", "integral_re", "integral_im", "error_estimate"], rows)?);
        }
        Check::Peyriere { indices } => {
            let r = criteria::peyriere_points(tower()?, indices, s, quad)?;
            o.at_most("peyriere.max_deviation", r.max_deviation, PEYRIERE_TOL);
            o.at_most("peyriere.max_stability_change", r.max_stability_change, STABILITY_TOL);
            o.check("peyriere.stability_tested", !r.stability.is_empty());
            let rows = r.points.iter().map(|p| (p.label.clone(), p.t, p.value, p.expected, p.abs_error_estimate));
            o.file("peyriere.csv", csv_string(&["label", "t", "value", "expected", "error_estimate"], rows)?);
            let rows = r.stability.iter().copied();
            o.file("peyriere_stability.csv", csv_string(&["t", "abs_change"], rows)?);
        }
        Check::Dirichlet { l_max, points } => {
            let v = criteria::dirichlet_bound_violations(*l_max, *points);
            o.metric("dirichlet.grid_points", (*l_max as f64) * *points as f64);
            o.at_most("dirichlet.violations", v.len() as f64, 0.0);
            o.file("dirichlet_violations.csv", csv_string(&["l", "x"], v)?);
        }
        Check::Totient { x } => {
            let sum = criteria::totient_sum(*x)?;
            let rel = sum as f64 / (3.0 / (PI * PI) * (*x as f64).powi(2)) - 1.0;
            o.metric("totient.sum", sum as f64);
            o.at_most("totient.abs_rel_error", rel.abs(), TOTIENT_REL);
        }
        Check::Bumps { p, alpha, grid } => {
            let fam = criteria::bump_family(*p, *alpha)?;
            let target = 3.0 / (2.0 * PI * PI);
            let integral = fam.integral();
            o.metric("bumps.count", fam.centers().len() as f64);
            o.metric("bumps.integral", integral);
            o.metric("bumps.target", target);
            o.at_most("bumps.integral_rel_error", (integral / target - 1.0).abs(), BUMP_INTEGRAL_REL);
            o.check("bumps.disjoint", fam.disjoint());
            // F_n is taken on the single-stage linear staircase with p_n + 1 columns.
            let spec = rankflow::tower::CuttingSpec::new(
                vec![*p as usize + 1],
                rankflow::tower::SpacerFamily::LinearStaircase { alpha: *alpha },
            );
            let t = build_tower(&spec, 1)?;
            let period = 2.0 * PI / alpha;
            let vals: Vec<Result<(f64, f64), CriteriaError>> = (0..*grid)
                .into_par_iter()
                .map(|i| {
                    let th = period * i as f64 / *grid as f64;
                    Ok((fam.sum(th), fam.f_n(t.level(0), th)?.norm()))
                })
                .collect();
            let vals: Vec<(f64, f64)> = vals.into_iter().collect::<Result<_, _>>()?;
            let max_sum = vals.iter().map(|v| v.0).fold(0.0, f64::max);
            let max_f = vals.iter().map(|v| v.1).fold(0.0, f64::max);
            o.at_most("bumps.max_sum", max_sum, 1.0);
            o.at_most("bumps.max_abs_f_n", max_f, 1.0 + 1e-12);
        }
        Check::Subsets { indices } => {
            let chain = ProductChain::from_tower(tower()?, indices)?;
            let r = criteria::cs_subset_check(&chain, s, quad)?;
            let min = r.iter().map(|c| c.slack).fold(f64::INFINITY, f64::min);
            o.metric("subsets.count", r.len() as f64);
            o.at_least("subsets.min_slack", min, SLACK_FLOOR);
            let rows = r.iter().map(|c| (c.mask, c.beta_subset, c.slack));
            o.file("subsets.csv", csv_string(&["mask", "beta_subset", "slack"], rows)?);
        }
        Check::Limsup { indices, m } => {
            let r = criteria::limsup_inequality_check(tower()?, indices, *m, s, quad)?;
            o.metric("limsup.lhs", r.lhs);
            o.metric("limsup.rhs", r.rhs);
            o.metric("limsup.int_q", r.int_q);
            o.metric("limsup.int_q_p", r.int_q_p);
            o.metric("limsup.int_q_p2", r.int_q_p2);
            o.metric("limsup.int_q_dev", r.int_q_dev);
            o.at_least("limsup.slack", r.slack, SLACK_FLOOR);
        }
        Check::Ratio { indices, copies, max_l } => {
            let chain = ProductChain::from_tower(tower()?, indices)?;
            let mut worst = 0.0f64;
            for i in 0..RATIO_POINTS {
                let th = -10.0 + 20.0 * i as f64 / (RATIO_POINTS - 1) as f64;
                for l in 1..=chain.len() {
                    worst = worst.max((riesz::radon_ratio(&chain, &chain, th, l)?.value - 1.0).abs());
                }
            }
            o.at_most("ratio.identical_max_abs_dev", worst, 0.0);

            let c = Complex64::new(0.5f64.sqrt(), 0.0);
            let base = TrigPoly::new(vec![(0.0, c), (1.0, c)])?;
            let d = riesz::scale_dissociate(&vec![base; *copies])?;
            o.check("ratio.dissociated", d.gap_violations().is_empty());
            let p = ProductChain::from_polys(d.polys);
            let one = TrigPoly::new(vec![(0.0, Complex64::new(1.0, 0.0))])?;
            let q = ProductChain::from_polys(vec![one; *copies]);
            let g = riesz::l1_ratio_gap(&p, &q, *max_l, s, quad)?;
            o.check("ratio.gaps_strictly_decreasing", g.strictly_decreasing);
            if let Some(r) = g.cauchy_ratio {
                o.metric("ratio.cauchy_ratio", r);
            }
            let rows = g.gaps.iter().zip(&g.error_estimates).enumerate().map(|(i, (g, e))| (i + 1, *g, *e));
            o.file("ratio_gaps.csv", csv_string(&["L", "gap", "error_estimate"], rows)?);
        }
        Check::Guenais { k_max } => {
            let r = criteria::guenais_sum(tower()?, *k_max, s, quad)?;
            o.metric("guenais.partial_sum", *r.partial_sums.last().unwrap_or(&0.0));
            o.flags.insert("guenais.diverging".into(), r.trend == rankflow::tower::Trend::Diverging);
            let rows = (0..r.terms.len()).map(|k| (k, r.l1_norms[k], r.terms[k], r.partial_sums[k]));
            o.file("guenais.csv", csv_string(&["k", "l1_norm", "term", "partial_sum"], rows)?);
        }
        Check::KlemesReinhold => {
            let p = &tower_cfg.ok_or_else(|| TaskError::Other("no tower".into()))?.p;
            let r = criteria::klemes_reinhold_check(p);
            o.metric("klemes_reinhold.partial_sum", *r.partial_sums.last().unwrap_or(&0.0));
            o.flags.insert("klemes_reinhold.diverging".into(), r.trend == rankflow::tower::Trend::Diverging);
            o.notes.push(format!("klemes-reinhold: {}", r.verdict));
        }
        Check::KlemesRatio => {
            let r = criteria::klemes_ratio(tower()?);
            o.flags.insert("klemes_ratio.tends_to_zero".into(), r.tends_to_zero);
            o.notes.push(format!("klemes-ratio: {}", r.verdict));
            let rows = r.ratios.iter().enumerate().map(|(k, v)| (k, *v));
            o.file("klemes_ratio.csv", csv_string(&["k", "p3_over_h"], rows)?);
        }
        Check::Mahler { indices } => {
            let chain = ProductChain::from_tower(tower()?, indices)?;
            let r = criteria::mahler_sequence(&chain, s, quad)?;
            o.flags.insert("mahler.flagged".into(), r.flagged.iter().any(|&f| f));
            if let Some(v) = r.values.last() {
                o.metric("mahler.last", *v);
            }
            let rows = r.values.iter().zip(&r.flagged).enumerate().map(|(l, (v, f))| (l + 1, *v, *f));
            o.file("mahler.csv", csv_string(&["L", "mahler", "flagged"], rows)?);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// clt

fn run_clt(
    model: &CltModel,
    max_ks: Option<f64>,
    min_ks: Option<f64>,
    moment_target: Option<f64>,
    moment_tol: Option<f64>,
    bins: usize,
    key: &StreamKey,
) -> Output {
    let mut o = Output::new("stochastic");
    let report: Result<(CltReport, &str), StochasticError> = match *model {
        CltModel::Ornstein { k, p, t, h, theta, draws } => {
            o.operation.push("clt_ornstein");
            stochastic::clt_ornstein(&stochastic::OrnsteinClt { k, p, t, h, theta, draws }, key).map(|r| (r, "variance"))
        }
        CltModel::Exponential {
            m,
            eps,
            p,
            a,
            b,
            s,
            samples,
            h,
        } => {
            o.operation.push("clt_expstaircase");
            let params = stochastic::ExpClt {
                m,
                eps: Rational::new(eps[0], eps[1]),
                p,
                a,
                b,
                s,
                samples,
                h,
            };
            stochastic::clt_expstaircase(&params, key).map(|r| {
                o.metric("sum_sq_mean", r.sum_sq_mean);
                o.metric("sum_sq_max", r.sum_sq_max);
                o.metric("product_bound", r.product_bound);
                o.metric("lambda_mass", r.lambda_mass);
                (r.clt, "second_moment")
            })
        }
    };
    let (r, moment_name) = match report {
        Ok(r) => r,
        Err(e) => {
            o.fail("sampler", e.into());
            return o;
        }
    };
    o.metric("samples", r.distribution.count() as f64);
    o.metric("mean", r.mean);
    o.metric("variance", r.variance);
    o.metric("second_moment", r.second_moment);
    if let Some(v) = r.predicted_variance {
        o.metric("predicted_variance", v);
    }
    o.library_flags("", &r.flags);
    match max_ks {
        Some(b) => o.at_most("ks", r.ks, b),
        None => o.metric("ks", r.ks),
    }
    if let Some(b) = min_ks {
        o.at_least("ks", r.ks, b);
    }
    if let (Some(target), Some(tol)) = (moment_target, moment_tol) {
        let m = if moment_name == "variance" { r.variance } else { r.second_moment };
        o.at_most(&format!("{moment_name}_abs_error"), (m - target).abs(), tol);
    }
    match csv_string(&["lo", "hi", "count"], r.distribution.histogram(bins)) {
        Ok(c) => o.file("histogram.csv", c),
        Err(e) => o.fail("histogram.csv", e),
    }
    o
}

// ---------------------------------------------------------------------------
// flatness and kk-verify

fn tables(a: &LadderConfig, o: &mut Output) -> Vec<(u64, QTable)> {
    let mut out = Vec::new();
    for &q in &a.q {
        match ExpParams::new(q, a.beta, a.m) {
            Ok(p) => {
                let c = p.conditions();
                let pre = format!("q{q}.");
                o.flags.insert(format!("{pre}inv_beta_integer"), c.inv_beta_integer);
                o.flags.insert(format!("{pre}h_integer"), c.h_integer);
                o.flags.insert(format!("{pre}m_integer"), c.m_integer);
                o.flags.insert(format!("{pre}alpha_exists"), c.alpha_exists);
                o.flags.insert(format!("{pre}m_below_q_beta"), c.m_below_q_beta);
                o.flags.insert(format!("{pre}sqrt_m_beta_below_one"), c.sqrt_m_beta_below_one);
                o.metric(format!("{pre}h"), c.h);
                o.metric(format!("{pre}alpha_sup"), c.alpha_sup);
                out.push((q, QTable::new(p)));
            }
            Err(e) => o.fail(&format!("q = {q}"), e.into()),
        }
    }
    out
}

fn run_flatness(a: &LadderConfig, max_ratio: Option<f64>, min_deficit: Option<f64>) -> Output {
    let mut o = Output::new("expsum");
    o.operation.push("flatness_profile");
    let mut ratios = Vec::new();
    for (q, table) in tables(a, &mut o) {
        let pre = format!("q{q}.");
        match expsum::flatness_profile(&table, a.tau1, a.tau2, a.grid) {
            Ok(p) => {
                match max_ratio {
                    Some(b) => o.at_most(&format!("{pre}max_ratio"), p.max_ratio, b),
                    None => o.metric(format!("{pre}max_ratio"), p.max_ratio),
                }
                match min_deficit {
                    Some(b) => o.at_least(&format!("{pre}l1_deficit"), p.l1_deficit, b),
                    None => o.metric(format!("{pre}l1_deficit"), p.l1_deficit),
                }
                o.metric("rolle_gap", p.rolle_gap);
                o.flags.insert("rolle_applicable".into(), p.rolle_applicable);
                ratios.push(p.max_ratio);
                o.file(format!("profile_q{q}.csv"), p.to_csv());
            }
            Err(e) => o.fail(&format!("q = {q}"), e.into()),
        }
    }
    if max_ratio.is_some() {
        o.check("max_ratio_nonincreasing_in_q", ratios.windows(2).all(|w| w[1] <= w[0]));
    }
    o
}

fn run_kk(a: &LadderConfig) -> Output {
    let mut o = Output::new("expsum");
    o.operation.push("kk_verify");
    let ts = expsum::t_grid(a.tau1, a.tau2, a.grid);
    for (q, table) in tables(a, &mut o) {
        let pre = format!("q{q}.");
        match expsum::kk_verify(&table, &ts, a.tau1, a.tau2) {
            Ok(checks) => {
                let diff = checks.iter().map(|c| c.difference).fold(0.0, f64::max);
                let bound = checks.iter().map(|c| c.error_bound).fold(f64::INFINITY, f64::min);
                let margin = checks.iter().map(|c| c.error_bound - c.difference).fold(f64::INFINITY, f64::min);
                o.metric(format!("{pre}max_difference"), diff);
                o.metric(format!("{pre}min_error_bound"), bound);
                o.metric(format!("{pre}min_margin"), margin);
                o.check(format!("{pre}all_within_bound"), checks.iter().all(|c| c.within));
                let rows = checks.iter().map(|c| {
                    (c.t, c.direct.re, c.direct.im, c.main.re, c.main.im, c.difference, c.error_bound, c.within)
                });
                let header = ["t", "direct_re", "direct_im", "main_re", "main_im", "difference", "error_bound", "within"];
                match csv_string(&header, rows) {
                    Ok(c) => o.file(format!("kk_q{q}.csv"), c),
                    Err(e) => o.fail("csv", e),
                }
            }
            Err(e) => o.fail(&format!("q = {q}"), e.into()),
        }
    }
    o
}
