//! Monte Carlo experiments: noise certification, deviation inequalities and
//! the risk bound of the selected estimator.

use std::collections::BTreeMap;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bounds::{bernstein_threshold, chi2_threshold, chi_inf_tail, projected_sup_threshold};
use crate::error::{Error, Result};
use crate::linspace::{self, Subspace};
use crate::models::{CollectionDoc, Family, ModelCollection, Partition, Shape};
use crate::noise::{trial_rng, NoiseDoc, NoiseSpec, DEFAULT_GRID_POINTS, MARGIN_TOL};
use crate::select::{oracle_rhs, Penalty, PenaltyDoc, PenaltySpec, SelectionResult, Selector};
use crate::KAPPA;

/// Environment variable overriding the worker count.
pub const THREADS_ENV: &str = "PENSELECT_THREADS";

/// Trials per work unit; fixed so results do not depend on the thread count.
const CHUNK: usize = 256;

/// Largest collection a deviation experiment iterates over.
const MAX_DEVIATION_MODELS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    VerifyNoise,
    DeviationChi,
    DeviationSup,
    Oracle,
    SelectOnce,
}

impl Kind {
    pub fn name(&self) -> &'static str {
        match self {
            Kind::VerifyNoise => "verify_noise",
            Kind::DeviationChi => "deviation_chi",
            Kind::DeviationSup => "deviation_sup",
            Kind::Oracle => "oracle",
            Kind::SelectOnce => "select_once",
        }
    }
}

/// Target signal `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SignalConfig {
    /// Piecewise constant; `jumps` are the positions `i` (1-based) with
    /// `f_i ≠ f_{i+1}`. Defaults: one jump at `n/2`, levels `[0, 1]`.
    Step {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        jumps: Option<Vec<usize>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        levels: Option<Vec<f64>>,
    },
    /// `f_i = amplitude · sin(2π · frequency · i/n)`.
    Sine {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "one")]
        frequency: f64,
    },
    Custom {
        values: Vec<f64>,
    },
    Zero,
}

fn one() -> f64 {
    1.0
}

impl SignalConfig {
    pub fn build(&self, n: usize) -> Result<Vec<f64>> {
        match self {
            SignalConfig::Step { jumps, levels } => {
                let jumps = jumps.clone().unwrap_or_else(|| vec![n / 2]);
                let levels = levels.clone().unwrap_or_else(|| vec![0.0, 1.0]);
                if levels.len() != jumps.len() + 1 {
                    return Err(Error::Config(format!(
                        "step signal with {} jumps needs {} levels, got {}",
                        jumps.len(),
                        jumps.len() + 1,
                        levels.len()
                    )));
                }
                if jumps.windows(2).any(|w| w[0] >= w[1]) || jumps.iter().any(|&j| j == 0 || j >= n) {
                    return Err(Error::Config(format!(
                        "step jumps must be increasing in 1..{n}, got {jumps:?}"
                    )));
                }
                Ok((1..=n)
                    .map(|i| levels[jumps.iter().filter(|&&j| j < i).count()])
                    .collect())
            }
            SignalConfig::Sine {
                amplitude,
                frequency,
            } => Ok((1..=n)
                .map(|i| amplitude * (2.0 * std::f64::consts::PI * frequency * i as f64 / n as f64).sin())
                .collect()),
            SignalConfig::Custom { values } => {
                if values.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got: values.len(),
                    });
                }
                Ok(values.clone())
            }
            SignalConfig::Zero => Ok(vec![0.0; n]),
        }
    }

    /// Jump positions of a step signal.
    pub fn jumps(&self, n: usize) -> Option<Vec<usize>> {
        match self {
            SignalConfig::Step { jumps, .. } => Some(jumps.clone().unwrap_or_else(|| vec![n / 2])),
            _ => None,
        }
    }
}

/// Collection generators accepted in place of an explicit model list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum Generator {
    /// All dyadic partitions with blocks of at least `min_block` points.
    Dyadic { min_block: usize },
    /// One regular partition per entry of `blocks`.
    Regular { blocks: Vec<usize> },
    /// Nested trigonometric models.
    Nested,
    /// Every subset of trigonometric frequencies.
    AllSubsets,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorDoc {
    #[serde(flatten)]
    pub family: Family,
    #[serde(flatten)]
    pub generator: Generator,
}

/// Builds a collection from either an explicit document (with `"models"`)
/// or a generator description.
pub fn build_collection(n: usize, value: &Value) -> Result<ModelCollection> {
    let cfg_err = |e: serde_json::Error| Error::Config(format!("collection: {e}"));
    if value.get("models").is_some() {
        let doc: CollectionDoc = serde_json::from_value(value.clone()).map_err(cfg_err)?;
        if doc.n != n {
            return Err(Error::Config(format!("collection n = {} but config n = {n}", doc.n)));
        }
        return ModelCollection::from_doc(&doc);
    }
    let doc: GeneratorDoc = serde_json::from_value(value.clone()).map_err(cfg_err)?;
    match (doc.generator, doc.family) {
        (Generator::Dyadic { min_block }, family) => ModelCollection::dyadic(n, family, min_block),
        (Generator::Regular { blocks }, family @ (Family::Histogram | Family::PiecewisePoly { .. })) => {
            let parts = blocks
                .iter()
                .map(|&k| Partition::regular(n, k))
                .collect::<Result<Vec<_>>>()?;
            ModelCollection::from_partitions(n, family, parts)
        }
        (Generator::Nested, Family::Trig { dbar }) => ModelCollection::trig_nested(n, dbar),
        (Generator::AllSubsets, Family::Trig { dbar }) => ModelCollection::trig_all_subsets(n, dbar),
        (g, f) => Err(Error::Config(format!(
            "generator {g:?} does not apply to family {}",
            f.name()
        ))),
    }
}

/// One experiment, as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub kind: Kind,
    pub n: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    pub noise: NoiseDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collection: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty: Option<PenaltyDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal: Option<SignalConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_grid: Option<Vec<f64>>,
    /// Absolute `u` values; when absent the grid is `q(σ+c)Λ₂(S)log n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_grid: Option<Vec<f64>>,
    /// Draws for the empirical Laplace transform check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mgf_samples: Option<usize>,
}

fn default_trials() -> usize {
    10_000
}

pub const DEFAULT_X_GRID: [f64; 4] = [0.5, 1.0, 2.0, 4.0];
pub const DEFAULT_U_MULTIPLES: [f64; 3] = [2.0, 4.0, 8.0];
pub const DEFAULT_BERNSTEIN_U: [f64; 2] = [1.0, 2.0];
pub const DEFAULT_MGF_SAMPLES: usize = 1_000_000;

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.kind.name().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("n must be at least 2, got {}", self.n)));
        }
        let needs_trials = matches!(self.kind, Kind::DeviationChi | Kind::DeviationSup | Kind::Oracle);
        if needs_trials && self.trials < 2 {
            return Err(Error::Config("trials must be at least 2".into()));
        }
        for x in self.x_grid.iter().flatten() {
            if !(*x >= 0.0 && x.is_finite()) {
                return Err(Error::Config(format!("x grid value {x} must be finite and ≥ 0")));
            }
        }
        for u in self.u_grid.iter().flatten() {
            if !(*u > 0.0 && u.is_finite()) {
                return Err(Error::Config(format!("u grid value {u} must be finite and > 0")));
            }
        }
        Ok(())
    }

    pub fn noise_spec(&self) -> Result<NoiseSpec> {
        NoiseSpec::from_doc(&self.noise).map_err(|e| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(format!("noise: {other}")),
        })
    }

    pub fn collection(&self) -> Result<ModelCollection> {
        let value = self
            .collection
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} needs a \"collection\"", self.kind.name())))?;
        build_collection(self.n, value)
    }

    pub fn penalty_spec(&self) -> Result<PenaltySpec> {
        let doc = self
            .penalty
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} needs a \"penalty\"", self.kind.name())))?;
        PenaltySpec::from_doc(doc)
    }

    pub fn signal(&self) -> Result<Vec<f64>> {
        self.signal.clone().unwrap_or(SignalConfig::Zero).build(self.n)
    }

    fn x_grid(&self) -> Vec<f64> {
        self.x_grid.clone().unwrap_or_else(|| DEFAULT_X_GRID.to_vec())
    }
}

/// One bound comparison; `pass = empirical ≤ bound + 3·stderr`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub experiment: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub x: Option<f64>,
    pub u: Option<f64>,
    pub empirical: f64,
    pub bound: f64,
    pub stderr: f64,
    pub pass: bool,
}

impl Record {
    pub fn new(experiment: &str, model: Option<&str>, x: Option<f64>, u: Option<f64>, empirical: f64, bound: f64, stderr: f64) -> Self {
        Self {
            experiment: experiment.to_string(),
            model: model.map(str::to_string),
            x,
            u,
            empirical,
            bound,
            stderr,
            pass: empirical <= bound + 3.0 * stderr,
        }
    }

    /// Frequency `count/trials` against a probability bound, with the
    /// binomial standard error at the (capped) bound.
    pub fn proportion(experiment: &str, model: Option<&str>, x: Option<f64>, u: Option<f64>, count: u64, trials: usize, bound: f64) -> Self {
        let p = bound.clamp(0.0, 1.0);
        let stderr = (p * (1.0 - p) / trials as f64).sqrt();
        Self::new(experiment, model, x, u, count as f64 / trials as f64, bound, stderr)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub name: String,
    pub kind: Kind,
    pub version: String,
    pub config: ExperimentConfig,
    pub records: Vec<Record>,
    pub all_pass: bool,
    pub details: Value,
    /// Wall-clock fields; excluded from determinism comparisons.
    pub runtime_s: f64,
    pub timestamp: u64,
}

pub const CSV_HEADER: &str = "experiment,x,u,empirical,bound,stderr,pass";

fn csv_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl Report {
    fn new(cfg: &ExperimentConfig, records: Vec<Record>, details: Value, started: Instant) -> Self {
        let all_pass = records.iter().all(|r| r.pass);
        Self {
            name: cfg.name(),
            kind: cfg.kind,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: cfg.clone(),
            records,
            all_pass,
            details,
            runtime_s: started.elapsed().as_secs_f64(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    /// Copy with the wall-clock fields zeroed.
    pub fn without_timing(&self) -> Self {
        Self {
            runtime_s: 0.0,
            timestamp: 0,
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// CSV rows without header; `experiment` is `name/check[/model]`.
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let mut label = format!("{}/{}", self.name, r.experiment);
            if let Some(m) = &r.model {
                label.push('/');
                label.push_str(m);
            }
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                label,
                csv_opt(r.x),
                csv_opt(r.u),
                r.empirical,
                r.bound,
                r.stderr,
                r.pass
            ));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        format!("{CSV_HEADER}\n{}", self.csv_rows())
    }
}

/// CSV of several reports under one header.
pub fn suite_csv(reports: &[Report]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in reports {
        out.push_str(&r.csv_rows());
    }
    out
}

/// Worker count: explicit value, else `PENSELECT_THREADS`, else rayon's default.
pub fn resolve_threads(threads: Option<usize>) -> Option<usize> {
    threads.or_else(|| {
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|s| s.trim().parse::<usize>().ok())
            .filter(|&t| t > 0)
    })
}

fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = resolve_threads(threads) {
        builder = builder.num_threads(t);
    }
    builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

/// Runs `body(trial, acc)` for every trial, one accumulator per chunk of
/// [`CHUNK`] trials, and returns the chunk accumulators in trial order.
fn run_chunks<T, I, F>(pool: &rayon::ThreadPool, trials: usize, init: I, body: F) -> Vec<T>
where
    T: Send,
    I: Fn() -> T + Sync,
    F: Fn(u64, &mut T) + Sync,
{
    let chunks = trials.div_ceil(CHUNK);
    pool.install(|| {
        (0..chunks)
            .into_par_iter()
            .map(|ch| {
                let mut acc = init();
                for t in ch * CHUNK..((ch + 1) * CHUNK).min(trials) {
                    body(t as u64, &mut acc);
                }
                acc
            })
            .collect()
    })
}

/// Counters and sums reduced in trial order.
#[derive(Debug, Clone, PartialEq)]
struct Tally {
    counts: Vec<u64>,
    sums: Vec<f64>,
}

impl Tally {
    fn new(counts: usize, sums: usize) -> Self {
        Self {
            counts: vec![0; counts],
            sums: vec![0.0; sums],
        }
    }

    fn merge(parts: Vec<Tally>, counts: usize, sums: usize) -> Tally {
        let mut total = Tally::new(counts, sums);
        for p in parts {
            total.counts.iter_mut().zip(&p.counts).for_each(|(a, b)| *a += b);
            total.sums.iter_mut().zip(&p.sums).for_each(|(a, b)| *a += b);
        }
        total
    }
}

fn mean_and_stderr(sum: f64, sum_sq: f64, trials: usize) -> (f64, f64) {
    let nf = trials as f64;
    let mean = sum / nf;
    let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    (mean, (var / nf).sqrt())
}

/// Dispatches on `cfg.kind`, using `threads` workers (see [`resolve_threads`]).
pub fn run_experiment_with_threads(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<Report> {
    cfg.validate()?;
    let pool = thread_pool(threads)?;
    match cfg.kind {
        Kind::VerifyNoise => run_verify_noise(cfg, &pool),
        Kind::DeviationChi => run_deviation_chi(cfg, &pool),
        Kind::DeviationSup => run_deviation_sup(cfg, &pool),
        Kind::Oracle => run_oracle(cfg, &pool),
        Kind::SelectOnce => {
            let started = Instant::now();
            let result = select_once(cfg)?;
            let details = json!({
                "chosen_id": result.chosen_id,
                "crit": result.crit,
                "ties": result.ties,
            });
            Ok(Report::new(cfg, Vec::new(), details, started))
        }
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    run_experiment_with_threads(cfg, None)
}

/// Grid certificate, empirical Laplace transform and Bernstein sums.
pub fn run_verify_noise(cfg: &ExperimentConfig, pool: &rayon::ThreadPool) -> Result<Report> {
    let started = Instant::now();
    let noise = cfg.noise_spec()?;
    let mut records = Vec::new();

    let cert = noise.verify_subgamma(DEFAULT_GRID_POINTS);
    records.push(Record::new("subgamma_grid", None, None, None, cert.worst_margin, MARGIN_TOL, 0.0));

    let lambda = noise.mgf_check_lambda();
    let samples = cfg.mgf_samples.unwrap_or(DEFAULT_MGF_SAMPLES);
    let (emp, se) = noise.empirical_log_mgf(lambda, samples, cfg.seed);
    let exact = noise.log_laplace(lambda)?;
    records.push(Record::new("log_mgf", None, None, None, (emp - exact).abs(), 0.0, se));

    let us = cfg.u_grid.clone().unwrap_or_else(|| DEFAULT_BERNSTEIN_U.to_vec());
    let n = cfg.n;
    let v2 = n as f64 * noise.sigma() * noise.sigma();
    let thresholds: Vec<f64> = us.iter().map(|&u| bernstein_threshold(v2, noise.c(), u)).collect();
    let bern_seed = cfg.seed.wrapping_add(1);
    let tallies = run_chunks(
        pool,
        cfg.trials,
        || Tally::new(us.len(), 0),
        |t, acc| {
            let mut rng = trial_rng(bern_seed, t);
            let mut sum = 0.0;
            for _ in 0..n {
                sum += noise.draw(&mut rng);
            }
            for (k, thr) in thresholds.iter().enumerate() {
                if sum >= *thr {
                    acc.counts[k] += 1;
                }
            }
        },
    );
    let tally = Tally::merge(tallies, us.len(), 0);
    for (k, &u) in us.iter().enumerate() {
        records.push(Record::proportion(
            "bernstein",
            None,
            None,
            Some(u),
            tally.counts[k],
            cfg.trials,
            (-u).exp(),
        ));
    }

    let details = json!({
        "family": noise.family().name(),
        "sigma": noise.sigma(),
        "c": noise.c(),
        "variance": noise.variance(),
        "worst_margin_lambda": cert.worst_lambda,
        "mgf_lambda": lambda,
        "mgf_empirical": emp,
        "mgf_exact": exact,
        "mgf_samples": samples,
        "bernstein_thresholds": thresholds,
    });
    Ok(Report::new(cfg, records, details, started))
}

struct DeviationModel {
    id: String,
    space: Subspace,
    dim: f64,
    lambda2: f64,
    us: Vec<f64>,
}

fn deviation_models(cfg: &ExperimentConfig, noise: &NoiseSpec) -> Result<Vec<DeviationModel>> {
    let coll = cfg.collection()?;
    if coll.len() > MAX_DEVIATION_MODELS {
        return Err(Error::Config(format!(
            "deviation experiments take at most {MAX_DEVIATION_MODELS} models, got {}",
            coll.len()
        )));
    }
    let log_n = (cfg.n as f64).ln();
    let mut out = Vec::new();
    for idx in 0..coll.len() {
        let Some(space) = coll.space(idx)? else {
            continue;
        };
        let lambda2 = space.lambda2();
        let us = cfg.u_grid.clone().unwrap_or_else(|| {
            DEFAULT_U_MULTIPLES
                .iter()
                .map(|q| q * (noise.sigma() + noise.c()) * lambda2 * log_n)
                .collect()
        });
        out.push(DeviationModel {
            id: coll.models()[idx].id.clone(),
            dim: space.dim() as f64,
            lambda2,
            space,
            us,
        });
    }
    if out.is_empty() {
        return Err(Error::Config("collection has no nonzero space".into()));
    }
    Ok(out)
}

/// `|Π_S ξ|₂²` and `|Π_S ξ|_∞`.
fn projection_norms(space: &Subspace, xi: &[f64]) -> (f64, f64) {
    let p = space.project(xi).expect("dimension checked");
    (linspace::norm2_sq(&p), linspace::norm_inf(&p))
}

/// Joint event `{|Π_S ξ|₂² ≥ κ²(σ² + 2cu/κ)(D+x), |Π_S ξ|_∞ ≤ u}` against
/// `e^{−x}`, `{|Π_S ξ|_∞ ≥ u}` against its tail bound, and the mean of
/// `|Π_S ξ|₂²` against `var·D`.
pub fn run_deviation_chi(cfg: &ExperimentConfig, pool: &rayon::ThreadPool) -> Result<Report> {
    let started = Instant::now();
    let noise = cfg.noise_spec()?;
    let models = deviation_models(cfg, &noise)?;
    let xs = cfg.x_grid();
    let (sigma, c) = (noise.sigma(), noise.c());

    // counter layout per model: c1 (u, x) pairs, then c2 per u
    let layout: Vec<usize> = models.iter().map(|m| m.us.len() * xs.len() + m.us.len()).collect();
    let offsets: Vec<usize> = layout
        .iter()
        .scan(0, |s, &l| {
            let o = *s;
            *s += l;
            Some(o)
        })
        .collect();
    let n_counts: usize = layout.iter().sum();
    let n_sums = 2 * models.len();
    let thresholds: Vec<Vec<f64>> = models
        .iter()
        .map(|m| {
            m.us
                .iter()
                .flat_map(|&u| xs.iter().map(move |&x| (u, x)))
                .map(|(u, x)| chi2_threshold(sigma, c, u, m.dim, x))
                .collect()
        })
        .collect();

    let tallies = run_chunks(
        pool,
        cfg.trials,
        || Tally::new(n_counts, n_sums),
        |t, acc| {
            let mut rng = trial_rng(cfg.seed, t);
            let mut xi = vec![0.0; cfg.n];
            noise.fill(&mut rng, &mut xi);
            for (k, m) in models.iter().enumerate() {
                let (chi2, sup) = projection_norms(&m.space, &xi);
                acc.sums[2 * k] += chi2;
                acc.sums[2 * k + 1] += chi2 * chi2;
                let base = offsets[k];
                for (a, &u) in m.us.iter().enumerate() {
                    if sup <= u {
                        for b in 0..xs.len() {
                            if chi2 >= thresholds[k][a * xs.len() + b] {
                                acc.counts[base + a * xs.len() + b] += 1;
                            }
                        }
                    }
                    if sup >= u {
                        acc.counts[base + m.us.len() * xs.len() + a] += 1;
                    }
                }
            }
        },
    );
    let tally = Tally::merge(tallies, n_counts, n_sums);

    let mut records = Vec::new();
    let mut model_details = Vec::new();
    for (k, m) in models.iter().enumerate() {
        let base = offsets[k];
        for (a, &u) in m.us.iter().enumerate() {
            for (b, &x) in xs.iter().enumerate() {
                records.push(Record::proportion(
                    "chi2_joint",
                    Some(&m.id),
                    Some(x),
                    Some(u),
                    tally.counts[base + a * xs.len() + b],
                    cfg.trials,
                    (-x).exp(),
                ));
            }
        }
        for (a, &u) in m.us.iter().enumerate() {
            records.push(Record::proportion(
                "sup_norm_tail",
                Some(&m.id),
                None,
                Some(u),
                tally.counts[base + m.us.len() * xs.len() + a],
                cfg.trials,
                chi_inf_tail(sigma, c, m.lambda2, u, cfg.n),
            ));
        }
        let (mean, se) = mean_and_stderr(tally.sums[2 * k], tally.sums[2 * k + 1], cfg.trials);
        let expected = noise.variance() * m.dim;
        records.push(Record::new("chi2_mean", Some(&m.id), None, None, (mean - expected).abs(), 0.0, se));
        model_details.push(json!({
            "id": m.id, "dim": m.dim, "lambda2": m.lambda2, "u_grid": m.us,
            "chi2_mean": mean, "chi2_expected": expected,
        }));
    }
    let details = json!({ "models": model_details, "x_grid": xs });
    Ok(Report::new(cfg, records, details, started))
}

/// Supremum of `⟨ξ, t⟩` over the unit ball of `S`, which equals
/// `|Π_S ξ|₂`, against the chaining threshold; plus the sum `|Σ ξ_i|`
/// against its chaining and Bernstein thresholds.
pub fn run_deviation_sup(cfg: &ExperimentConfig, pool: &rayon::ThreadPool) -> Result<Report> {
    let started = Instant::now();
    let noise = cfg.noise_spec()?;
    let models = deviation_models(cfg, &noise)?;
    let xs = cfg.x_grid();
    let (sigma, c) = (noise.sigma(), noise.c());
    let nf = cfg.n as f64;

    let per_model: Vec<usize> = models.iter().map(|m| m.us.len() * xs.len()).collect();
    let offsets: Vec<usize> = per_model
        .iter()
        .scan(0, |s, &l| {
            let o = *s;
            *s += l;
            Some(o)
        })
        .collect();
    let mean_base: usize = per_model.iter().sum();
    let n_counts = mean_base + 2 * xs.len();
    let thresholds: Vec<Vec<f64>> = models
        .iter()
        .map(|m| {
            m.us
                .iter()
                .flat_map(|&u| xs.iter().map(move |&x| projected_sup_threshold(sigma, c, u, m.dim, x)))
                .collect()
        })
        .collect();
    let sum_chain: Vec<f64> = xs
        .iter()
        .map(|&x| KAPPA * ((nf * (1.0 + x) * sigma * sigma).sqrt() + c * (1.0 + x)))
        .collect();
    let sum_bern: Vec<f64> = xs
        .iter()
        .map(|&x| {
            // two-sided: each tail gets e^{−x}/2
            bernstein_threshold(nf * sigma * sigma, c, std::f64::consts::LN_2 + x)
        })
        .collect();

    let tallies = run_chunks(
        pool,
        cfg.trials,
        || Tally::new(n_counts, 0),
        |t, acc| {
            let mut rng = trial_rng(cfg.seed, t);
            let mut xi = vec![0.0; cfg.n];
            noise.fill(&mut rng, &mut xi);
            for (k, m) in models.iter().enumerate() {
                let (chi2, sup) = projection_norms(&m.space, &xi);
                let chi = chi2.sqrt();
                for (a, &u) in m.us.iter().enumerate() {
                    if sup <= u {
                        for b in 0..xs.len() {
                            if chi >= thresholds[k][a * xs.len() + b] {
                                acc.counts[offsets[k] + a * xs.len() + b] += 1;
                            }
                        }
                    }
                }
            }
            let z = xi.iter().sum::<f64>().abs();
            for b in 0..xs.len() {
                if z >= sum_chain[b] {
                    acc.counts[mean_base + b] += 1;
                }
                if z >= sum_bern[b] {
                    acc.counts[mean_base + xs.len() + b] += 1;
                }
            }
        },
    );
    let tally = Tally::merge(tallies, n_counts, 0);

    let mut records = Vec::new();
    for (k, m) in models.iter().enumerate() {
        for (a, &u) in m.us.iter().enumerate() {
            for (b, &x) in xs.iter().enumerate() {
                records.push(Record::proportion(
                    "sup_ball",
                    Some(&m.id),
                    Some(x),
                    Some(u),
                    tally.counts[offsets[k] + a * xs.len() + b],
                    cfg.trials,
                    (-x).exp(),
                ));
            }
        }
    }
    for (b, &x) in xs.iter().enumerate() {
        records.push(Record::proportion(
            "sum_chaining",
            None,
            Some(x),
            None,
            tally.counts[mean_base + b],
            cfg.trials,
            (-x).exp(),
        ));
        records.push(Record::proportion(
            "sum_bernstein",
            None,
            Some(x),
            None,
            tally.counts[mean_base + xs.len() + b],
            cfg.trials,
            (-x).exp(),
        ));
    }
    let details = json!({
        "models": models.iter().map(|m| json!({"id": m.id, "dim": m.dim, "u_grid": m.us})).collect::<Vec<_>>(),
        "x_grid": xs,
        "sum_chaining_thresholds": sum_chain,
        "sum_bernstein_thresholds": sum_bern,
    });
    Ok(Report::new(cfg, records, details, started))
}

/// Whether the partition of model `idx` cuts at every jump.
fn refines_jumps(coll: &ModelCollection, idx: usize, jumps: &[usize]) -> Option<bool> {
    match &coll.models()[idx].shape {
        Shape::Partition(p) => Some(jumps.iter().all(|&j| p.has_cut_after(j))),
        Shape::Subset(_) => None,
    }
}

/// Monte Carlo risk of the selected estimator against the risk bound.
pub fn run_oracle(cfg: &ExperimentConfig, pool: &rayon::ThreadPool) -> Result<Report> {
    let started = Instant::now();
    let noise = cfg.noise_spec()?;
    let coll = cfg.collection()?;
    let spec = cfg.penalty_spec()?;
    let f = cfg.signal()?;
    let penalty = Penalty::calibrate(&spec, &noise, &coll)?;
    let selector = Selector::with_penalty(&coll, penalty);
    let bias = coll.residuals(&f)?;
    let rhs = oracle_rhs(&coll, &penalty, &f, &noise)?;

    struct Acc {
        loss: f64,
        loss_sq: f64,
        chosen: Vec<usize>,
        error: Option<Error>,
    }
    let parts = run_chunks(
        pool,
        cfg.trials,
        || Acc {
            loss: 0.0,
            loss_sq: 0.0,
            chosen: Vec::new(),
            error: None,
        },
        |t, acc| {
            if acc.error.is_some() {
                return;
            }
            let mut rng = trial_rng(cfg.seed, t);
            let mut xi = vec![0.0; cfg.n];
            noise.fill(&mut rng, &mut xi);
            let y: Vec<f64> = f.iter().zip(&xi).map(|(a, b)| a + b).collect();
            let step = selector.select_index(&y).and_then(|m| {
                // |f − Π y|² = |f − Π f|² + |Π ξ|²
                let proj = linspace::norm2_sq(&xi) - coll.residual(m, &xi)?;
                Ok((m, bias[m] + proj.max(0.0)))
            });
            match step {
                Ok((m, loss)) => {
                    acc.loss += loss;
                    acc.loss_sq += loss * loss;
                    acc.chosen.push(m);
                }
                Err(e) => acc.error = Some(e),
            }
        },
    );
    let (mut loss, mut loss_sq, mut chosen) = (0.0, 0.0, Vec::with_capacity(cfg.trials));
    for p in parts {
        if let Some(e) = p.error {
            return Err(e);
        }
        loss += p.loss;
        loss_sq += p.loss_sq;
        chosen.extend(p.chosen);
    }
    let (mean, se) = mean_and_stderr(loss, loss_sq, cfg.trials);

    let mut records = vec![Record::new("risk_bracketed", None, None, None, mean, rhs.bracketed, se)];
    if let Some(cor) = rhs.corollary {
        records.push(Record::new("risk_corollary", None, None, None, mean, cor, se));
    }

    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for &m in &chosen {
        *counts.entry(coll.models()[m].id.clone()).or_insert(0) += 1;
    }
    let jumps = cfg.signal.as_ref().and_then(|s| s.jumps(cfg.n));
    let mut refine_fraction = Value::Null;
    if let Some(jumps) = &jumps {
        let hits: Option<Vec<bool>> = chosen.iter().map(|&m| refines_jumps(&coll, m, jumps)).collect();
        if let Some(hits) = hits {
            let frac = hits.iter().filter(|h| **h).count() as f64 / cfg.trials as f64;
            refine_fraction = json!(frac);
        }
    }

    let consts = coll.constants();
    let details = json!({
        "risk_mean": mean,
        "risk_stderr": se,
        "rhs": rhs,
        "ratio_to_tightest_rhs": mean / rhs.tightest(),
        "inf_model_exact_risk": bias[rhs.inf_index] + noise.variance() * coll.dim(rhs.inf_index) as f64,
        "penalty": penalty,
        "constants": consts,
        "collection_size": coll.len(),
        "selection_counts": counts,
        "refines_jumps_fraction": refine_fraction,
    });
    Ok(Report::new(cfg, records, details, started))
}

/// Selection on `f + ξ` for one noise draw seeded by `cfg.seed`.
pub fn select_once(cfg: &ExperimentConfig) -> Result<SelectionResult> {
    let noise = cfg.noise_spec()?;
    let coll = cfg.collection()?;
    let spec = cfg.penalty_spec()?;
    let f = cfg.signal()?;
    let xi = noise.sample(cfg.n, cfg.seed);
    let y: Vec<f64> = f.iter().zip(&xi).map(|(a, b)| a + b).collect();
    Selector::new(&coll, &spec, &noise)?.select(&y)
}

fn noise_doc(family: &str, params: Value) -> NoiseDoc {
    NoiseDoc {
        family: family.into(),
        params: params.as_object().cloned().unwrap_or_default(),
        sigma: None,
        c: None,
    }
}

/// The shipped default experiments.
pub fn default_suite() -> Vec<ExperimentConfig> {
    let base = |name: &str, kind: Kind, n: usize, trials: usize, noise: NoiseDoc| ExperimentConfig {
        name: Some(name.into()),
        kind,
        n,
        trials,
        seed: 20240601,
        noise,
        collection: None,
        penalty: None,
        signal: None,
        x_grid: None,
        u_grid: None,
        mgf_samples: None,
    };
    let families = [
        ("gaussian", json!({"sd": 1.0})),
        ("centered_poisson", json!({"mu": 3.0})),
        ("centered_exponential", json!({"rate": 1.0})),
        ("centered_gamma", json!({"shape": 2.0, "rate": 1.5})),
        ("scaled_rademacher", json!({"a": 2.0})),
    ];
    let mut suite = Vec::new();
    for (fam, params) in &families {
        let mut cfg = base(&format!("noise_{fam}"), Kind::VerifyNoise, 100, 20_000, noise_doc(fam, params.clone()));
        cfg.mgf_samples = Some(200_000);
        suite.push(cfg);
    }
    let regular = json!({"family": "histogram", "generator": "regular", "blocks": [1, 4, 16]});
    for (fam, params) in &families[..2] {
        let mut cfg = base(&format!("chi_{fam}"), Kind::DeviationChi, 256, 20_000, noise_doc(fam, params.clone()));
        cfg.collection = Some(regular.clone());
        suite.push(cfg);
        let mut cfg = base(&format!("sup_{fam}"), Kind::DeviationSup, 256, 20_000, noise_doc(fam, params.clone()));
        cfg.collection = Some(regular.clone());
        suite.push(cfg);
    }
    let mut cfg = base("oracle_step", Kind::Oracle, 256, 200, noise_doc("gaussian", json!({"sd": 0.1})));
    cfg.collection = Some(json!({"family": "histogram", "generator": "dyadic", "min_block": 8}));
    cfg.penalty = Some(PenaltyDoc {
        mode: "general".into(),
        k: 2.0,
        ..Default::default()
    });
    cfg.signal = Some(SignalConfig::Step {
        jumps: None,
        levels: None,
    });
    suite.push(cfg);
    let mut cfg = base("oracle_trig", Kind::Oracle, 256, 200, noise_doc("centered_poisson", json!({"mu": 1.0})));
    cfg.collection = Some(json!({"family": "trig", "dbar": 2, "generator": "all_subsets"}));
    cfg.penalty = Some(PenaltyDoc {
        mode: "general".into(),
        k: 2.0,
        ..Default::default()
    });
    cfg.signal = Some(SignalConfig::Sine {
        amplitude: 2.0,
        frequency: 1.0,
    });
    suite.push(cfg);
    suite
}

/// Runs every configuration in order.
pub fn run_suite(configs: &[ExperimentConfig], threads: Option<usize>) -> Result<Vec<Report>> {
    configs.iter().map(|c| run_experiment_with_threads(c, threads)).collect()
}
