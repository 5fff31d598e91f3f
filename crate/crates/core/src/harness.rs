//! Experiment configuration, dispatch, CSV and summary emission, and report bundles.
//!
//! Each run writes `<name>.csv` (rows only, byte-stable for a fixed config and seed) and
//! `<name>.summary.json` (verdicts and provenance, including timestamps).

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use plotters::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::cluster::{cluster_scan, fit_exponent, theoretical_exponent};
use crate::error::{Error, Result};
use crate::group::{classify, random_unit, validate, GroupSpec};
use crate::heat::{eigen_expansion, heat_kernel, ComplexTime};
use crate::lattice::{diagonal_weight, enumerate_lattice, eigenvalue, BlockParams};
use crate::restriction::{log2_slope, restriction_scan, MultiplierPair, QuadConfig, SampledFunction};
use crate::symplectic::{decompose, DEFAULT_CLUSTER_TOL};

pub const DEFAULT_SEED: u64 = 42;
pub const THREADS_ENV: &str = "TOOL_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Validate,
    Decompose,
    Spectrum,
    ClusterScan,
    HeatCheck,
    RestrictionScan,
    Report,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::Validate,
        Experiment::Decompose,
        Experiment::Spectrum,
        Experiment::ClusterScan,
        Experiment::HeatCheck,
        Experiment::RestrictionScan,
        Experiment::Report,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Validate => "validate",
            Experiment::Decompose => "decompose",
            Experiment::Spectrum => "spectrum",
            Experiment::ClusterScan => "cluster-scan",
            Experiment::HeatCheck => "heat-check",
            Experiment::RestrictionScan => "restriction-scan",
            Experiment::Report => "report",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown experiment '{name}'")))
    }
}

/// A preset name such as `"heisenberg:1"` or an inline structure description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroupRef {
    Preset(String),
    Inline(GroupSpec),
}

impl GroupRef {
    pub fn resolve(&self) -> Result<GroupSpec> {
        match self {
            GroupRef::Preset(name) => GroupSpec::preset(name),
            GroupRef::Inline(spec) => Ok(spec.clone()),
        }
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub group: GroupRef,
    pub experiment: Experiment,
    #[serde(default)]
    pub parameters: Map<String, Value>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        Self::from_json_with(text, None)
    }

    /// Parses a config, filling `experiment` from the command line when the file omits it.
    pub fn from_json_with(text: &str, experiment: Option<&str>) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("malformed JSON: {e}")))?;
        let obj = value.as_object_mut().ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
        if let Some(name) = experiment {
            Experiment::parse(name)?;
            match obj.get("experiment").and_then(Value::as_str) {
                Some(existing) if existing != name => {
                    return Err(Error::Config(format!("config names experiment '{existing}' but '{name}' was requested")))
                }
                _ => {
                    obj.insert("experiment".into(), Value::String(name.into()));
                }
            }
        }
        if let Some(name) = obj.get("experiment").and_then(Value::as_str) {
            Experiment::parse(name)?;
        }
        let config: Self = serde_json::from_value(value).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        config.check()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>, experiment: Option<&str>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.as_ref().display())))?;
        Self::from_json_with(&text, experiment)
    }

    fn check(&self) -> Result<()> {
        self.group.resolve().map_err(|e| Error::Config(format!("group: {e}")))?;
        for (key, v) in &self.parameters {
            if key.contains("tol") || key.contains("slack") {
                match v.as_f64() {
                    Some(x) if x > 0.0 => {}
                    _ => return Err(Error::Config(format!("parameter '{key}' must be a positive number"))),
                }
            }
        }
        Ok(())
    }

    /// File stem for outputs: the `name` parameter if given, else the experiment name.
    pub fn name(&self) -> String {
        self.parameters
            .get("name")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .unwrap_or_else(|| self.experiment.name().to_owned())
    }

    /// SHA-256 of the canonical JSON form; object keys are sorted, so input key order is irrelevant.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_value(self).expect("config serializes").to_string();
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub criterion: String,
    pub passed: bool,
    pub observed: f64,
    pub expected: String,
}

impl Verdict {
    fn within(criterion: &str, observed: f64, target: f64, tol: f64) -> Self {
        Self {
            criterion: criterion.into(),
            passed: (observed - target).abs() <= tol,
            observed,
            expected: format!("{target} +- {tol}"),
        }
    }

    fn at_most(criterion: &str, observed: f64, bound: f64) -> Self {
        Self { criterion: criterion.into(), passed: observed <= bound, observed, expected: format!("<= {bound:e}") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub tool_version: String,
    pub seed: u64,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub experiment: Experiment,
    pub group: String,
    pub csv: String,
    pub header: Vec<String>,
    #[serde(skip)]
    pub rows: Vec<Vec<String>>,
    pub verdicts: Vec<Verdict>,
    pub provenance: Provenance,
}

impl ExperimentReport {
    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }
}

/// Exit-code contract: 0 pass, 1 criterion failure, 2 configuration error, 3 numerical abort.
pub fn exit_code(outcome: &Result<ExperimentReport>) -> i32 {
    match outcome {
        Ok(r) if r.all_pass() => 0,
        Ok(_) => 1,
        Err(e) if e.is_numerical_abort() => 3,
        Err(_) => 2,
    }
}

/// Reads [`THREADS_ENV`] and sizes the global rayon pool. Returns the thread count in effect.
pub fn configure_threads() -> Result<usize> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().map_err(|_| Error::Config(format!("{THREADS_ENV}={v} is not a thread count")))?;
        if n == 0 {
            return Err(Error::Config(format!("{THREADS_ENV} must be at least 1")));
        }
        // A second initialization (e.g. in tests) keeps the existing pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Typed access to the `parameters` map with defaults.
struct Params<'a>(&'a Map<String, Value>);

impl Params<'_> {
    fn f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.0.get(key) {
            None => Ok(default),
            Some(v) => v.as_f64().ok_or_else(|| Error::Config(format!("parameter '{key}' must be a number"))),
        }
    }

    fn u64(&self, key: &str, default: u64) -> Result<u64> {
        match self.0.get(key) {
            None => Ok(default),
            Some(v) => v.as_u64().ok_or_else(|| Error::Config(format!("parameter '{key}' must be a nonnegative integer"))),
        }
    }

    fn i64(&self, key: &str, default: i64) -> Result<i64> {
        match self.0.get(key) {
            None => Ok(default),
            Some(v) => v.as_i64().ok_or_else(|| Error::Config(format!("parameter '{key}' must be an integer"))),
        }
    }

    fn bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.0.get(key) {
            None => Ok(default),
            Some(v) => v.as_bool().ok_or_else(|| Error::Config(format!("parameter '{key}' must be a boolean"))),
        }
    }

    fn vec(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| v.as_f64().ok_or_else(|| Error::Config(format!("parameter '{key}' must hold numbers"))))
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(_) => Err(Error::Config(format!("parameter '{key}' must be an array"))),
        }
    }

    fn interval(&self, key: &str, default: [f64; 2]) -> Result<[f64; 2]> {
        match self.vec(key)? {
            None => Ok(default),
            Some(v) if v.len() == 2 && v[0] < v[1] => Ok([v[0], v[1]]),
            Some(_) => Err(Error::Config(format!("parameter '{key}' must be an interval [a, b] with a < b"))),
        }
    }

    fn str(&self, key: &str) -> Result<Option<&str>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v.as_str().map(Some).ok_or_else(|| Error::Config(format!("parameter '{key}' must be a string"))),
        }
    }
}

/// CSV writer that flushes after every row so partial results survive an abort.
struct RowSink {
    writer: csv::Writer<File>,
    rows: Vec<Vec<String>>,
}

impl RowSink {
    fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(header)?;
        writer.flush()?;
        Ok(Self { writer, rows: Vec::new() })
    }

    fn push(&mut self, row: Vec<String>) -> Result<()> {
        self.writer.write_record(&row)?;
        self.writer.flush()?;
        self.rows.push(row);
        Ok(())
    }
}

fn header_of(experiment: Experiment) -> &'static [&'static str] {
    match experiment {
        Experiment::Validate => &["check", "value", "passed"],
        Experiment::Decompose => &["index", "mu", "b", "r", "r0", "max_residual"],
        Experiment::Spectrum => &["k", "lambda", "weight"],
        Experiment::ClusterScan => &["K", "members", "norm_exact_1to2", "norm_lower_p", "p", "slope_so_far"],
        Experiment::HeatCheck => &["t", "point", "kernel", "eigen_expansion", "abs_diff"],
        Experiment::RestrictionScan => &["ell", "kernel_l2_norm", "predicted_scale", "ratio"],
        Experiment::Report => &["name", "criterion", "passed", "observed", "expected"],
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(";")
}

/// Block parameters at the covector given by `mu` (default `e_1`), or directly from `b`.
fn block_params(spec: &GroupSpec, params: &Params) -> Result<BlockParams> {
    if let Some(b) = params.vec("b")? {
        let r = vec![1; b.len()];
        return BlockParams::new(b, r, params.u64("r0", 0)? as usize);
    }
    let mu = match params.vec("mu")? {
        Some(mu) => mu,
        None => {
            let mut e = vec![0.0; spec.d2];
            e[0] = 1.0;
            e
        }
    };
    Ok(decompose(spec, &mu, params.f64("cluster_tol", DEFAULT_CLUSTER_TOL)?)?.block_params())
}

/// Runs one experiment, writing `<output>/<name>.csv` and `<output>/<name>.summary.json`.
pub fn run(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let started = now_ms();
    let spec = config.group.resolve()?;
    std::fs::create_dir_all(&config.output)?;
    let name = config.name();
    let csv_name = format!("{name}.csv");
    let mut sink = RowSink::create(&config.output.join(&csv_name), header_of(config.experiment))?;
    let params = Params(&config.parameters);
    let verdicts = match config.experiment {
        Experiment::Validate => run_validate(&spec, config.seed, &mut sink)?,
        Experiment::Decompose => run_decompose(&spec, &params, config.seed, &mut sink)?,
        Experiment::Spectrum => run_spectrum(&spec, &params, &mut sink)?,
        Experiment::ClusterScan => run_cluster_scan(&spec, &params, config.seed, &mut sink)?,
        Experiment::HeatCheck => run_heat_check(&spec, &params, config.seed, &mut sink)?,
        Experiment::RestrictionScan => run_restriction_scan(&spec, &params, &mut sink)?,
        Experiment::Report => run_report(&params, &config.output, &mut sink)?,
    };
    let report = ExperimentReport {
        name: name.clone(),
        experiment: config.experiment,
        group: spec.label.clone(),
        csv: csv_name,
        header: header_of(config.experiment).iter().map(|s| s.to_string()).collect(),
        rows: sink.rows,
        verdicts,
        provenance: Provenance {
            config_hash: config.hash(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed: config.seed,
            started_unix_ms: started,
            finished_unix_ms: now_ms(),
        },
    };
    let summary = config.output.join(format!("{name}.summary.json"));
    std::fs::write(summary, serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

fn run_validate(spec: &GroupSpec, seed: u64, sink: &mut RowSink) -> Result<Vec<Verdict>> {
    let v = validate(spec);
    let class = classify(spec, 64, seed);
    sink.push(vec!["max_skew_residual".into(), fmt_f64(v.max_skew_residual), (v.max_skew_residual <= 1e-12).to_string()])?;
    sink.push(vec!["stacking_rank".into(), v.stacking_rank.to_string(), (v.stacking_rank == spec.d2).to_string()])?;
    sink.push(vec!["kind".into(), format!("{:?}", class.kind), "true".into()])?;
    sink.push(vec!["min_singular_value".into(), fmt_f64(class.min_singular_value), "true".into()])?;
    Ok(vec![Verdict {
        criterion: "group-valid".into(),
        passed: v.passes,
        observed: v.failures.len() as f64,
        expected: "0 failures".into(),
    }])
}

fn run_decompose(spec: &GroupSpec, params: &Params, seed: u64, sink: &mut RowSink) -> Result<Vec<Verdict>> {
    let samples = params.u64("samples", 100)? as usize;
    let tol = params.f64("tol", 1e-8)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut signatures = Vec::new();
    for i in 0..samples {
        let mu = random_unit(&mut rng, spec.d2);
        let d = decompose(spec, &mu, DEFAULT_CLUSTER_TOL).map_err(|e| e.context(format!("row {i}, mu = {mu:?}")))?;
        let res = d.residuals.max();
        worst = worst.max(res);
        let r: Vec<String> = d.r.iter().map(|x| x.to_string()).collect();
        sink.push(vec![i.to_string(), join(&mu), join(&d.b), r.join(";"), d.r0.to_string(), fmt_f64(res)])?;
        signatures.push((d.r.clone(), d.r0));
    }
    signatures.dedup();
    Ok(vec![
        Verdict::at_most("decomposition-residuals", worst, tol),
        Verdict {
            criterion: "constant-signature".into(),
            passed: signatures.len() <= 1,
            observed: signatures.len() as f64,
            expected: "1 signature".into(),
        },
    ])
}

fn run_spectrum(spec: &GroupSpec, params: &Params, sink: &mut RowSink) -> Result<Vec<Verdict>> {
    let p = block_params(spec, params)?;
    let lambda_max = params.f64("lambda_max", 20.0)?;
    let mut pts: Vec<(f64, Vec<u64>, f64)> = enumerate_lattice(&p, 0.0, lambda_max)?
        .into_iter()
        .map(|k| (eigenvalue(&k, &p).expect("dims match"), k.k.clone(), diagonal_weight(&k, &p)))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    for (lam, k, w) in &pts {
        let k: Vec<String> = k.iter().map(|x| x.to_string()).collect();
        sink.push(vec![k.join(";"), fmt_f64(*lam), fmt_f64(*w)])?;
    }
    let bottom: f64 = p.b.iter().zip(&p.r).map(|(b, &r)| b * r as f64).sum();
    let lowest = pts.first().map(|x| x.0).unwrap_or(f64::NAN);
    Ok(vec![Verdict {
        criterion: "spectrum-bottom".into(),
        passed: pts.is_empty() && bottom >= lambda_max || (lowest - bottom).abs() <= 1e-12 * bottom.max(1.0),
        observed: lowest,
        expected: format!("{bottom}"),
    }])
}

fn run_cluster_scan(spec: &GroupSpec, params: &Params, seed: u64, sink: &mut RowSink) -> Result<Vec<Verdict>> {
    let p = block_params(spec, params)?;
    let exponent_p = params.f64("p", 1.0)?;
    let k_min = params.u64("K_min", 1)?;
    let k_max = params.u64("K_max", 401)?;
    let odd_only = params.bool("odd_only", false)?;
    let ks: Vec<u64> = (k_min..=k_max).filter(|k| !odd_only || k % 2 == 1).collect();
    let lower = if exponent_p == 1.0 && !params.bool("power_method", false)? {
        None
    } else {
        Some((params.u64("restarts", 4)? as usize, seed))
    };
    let rows = cluster_scan(&p, &ks, exponent_p, lower)?;
    for r in &rows {
        sink.push(vec![
            r.k.to_string(),
            r.members.to_string(),
            fmt_f64(r.norm_exact_1to2),
            fmt_opt(r.norm_lower_p),
            fmt_f64(r.p),
            fmt_opt(r.slope_so_far),
        ])?;
    }
    let theory = theoretical_exponent(p.d1(), exponent_p);
    let mut verdicts = Vec::new();
    if exponent_p == 1.0 {
        let series: Vec<(u64, f64)> = rows.iter().map(|r| (r.k, r.norm_exact_1to2)).collect();
        let fit_min = params.u64("fit_K_min", 0)?;
        let fit_max = params.u64("fit_K_max", u64::MAX)?;
        let window: Vec<(u64, f64)> = series.into_iter().filter(|&(k, _)| k <= fit_max).collect();
        let fit = fit_exponent(&window, fit_min)?;
        verdicts.push(Verdict::within("cluster-exponent-p1", fit.slope, theory, params.f64("slope_tol", 0.05)?));
    } else {
        let k_fit = params.u64("K_fit", 11)?;
        let slack = params.f64("slack", 0.05)?;
        let anchor = rows
            .iter()
            .find(|r| r.k == k_fit)
            .and_then(|r| r.norm_lower_p)
            .filter(|v| *v > 0.0)
            .ok_or_else(|| Error::Config(format!("K_fit = {k_fit} is not a nonempty scanned cluster")))?;
        let c = anchor / ((k_fit + 1) as f64).powf(theory);
        let worst = rows
            .iter()
            .filter_map(|r| r.norm_lower_p.map(|v| v / (c * ((r.k + 1) as f64).powf(theory))))
            .fold(0.0, f64::max);
        verdicts.push(Verdict::at_most("cluster-envelope", worst, 1.0 + slack));
    }
    Ok(verdicts)
}

fn run_heat_check(spec: &GroupSpec, params: &Params, seed: u64, sink: &mut RowSink) -> Result<Vec<Verdict>> {
    let p = block_params(spec, params)?;
    let t = params.f64("t", 0.5)?;
    let lambda_max = params.f64("lambda_max", 40.0)?;
    let n = params.u64("points", 64)? as usize;
    let radius = params.f64("radius", 3.0)?;
    let tol = params.f64("tol", 1e-8)?;
    let time = ComplexTime::real(t)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let x: Vec<f64> = if i == 0 {
            vec![0.0; p.d1()]
        } else {
            random_unit(&mut rng, p.d1()).iter().map(|c| c * radius * (i as f64 / n as f64)).collect()
        };
        let kernel = heat_kernel(&time, &p, &x).map_err(|e| e.context(format!("point {i}")))?;
        let eigen = eigen_expansion(t, &p, &x, lambda_max)?;
        let diff = (kernel - eigen).norm();
        worst = worst.max(diff);
        sink.push(vec![fmt_f64(t), i.to_string(), fmt_f64(kernel.re), fmt_f64(eigen), fmt_f64(diff)])?;
    }
    Ok(vec![Verdict::at_most("mehler-vs-eigen", worst, tol)])
}

fn multiplier(params: &Params) -> Result<MultiplierPair> {
    if let Some(path) = params.str("multiplier")? {
        return MultiplierPair::load(path).map_err(|e| Error::Config(format!("multiplier {path}: {e}")));
    }
    let a = params.interval("A", [1.0, 4.0])?;
    let chi = params.interval("chi_support", [0.5, 2.0])?;
    let f = SampledFunction::indicator(a[0], a[1], params.u64("F_samples", 3001)? as usize)?;
    let chi = SampledFunction::smooth_bump(chi[0], chi[1], params.u64("chi_samples", 2001)? as usize)?;
    MultiplierPair::new(f, chi, 0)
}

fn run_restriction_scan(spec: &GroupSpec, params: &Params, sink: &mut RowSink) -> Result<Vec<Verdict>> {
    let mp = multiplier(params)?;
    let ell_min = params.i64("ell_min", 2)? as i32;
    let ell_max = params.i64("ell_max", 8)? as i32;
    if ell_min >= ell_max {
        return Err(Error::Config("ell_min must be below ell_max".into()));
    }
    let quad = QuadConfig {
        radial_panels: params.u64("radial_panels", QuadConfig::default().radial_panels as u64)? as usize,
        ..QuadConfig::default()
    };
    let mut rows = Vec::new();
    for ell in ell_min..=ell_max {
        let row = restriction_scan(spec, &mp, &[ell], &quad).map_err(|e| e.context(format!("ell = {ell}")))?.remove(0);
        sink.push(vec![row.ell.to_string(), fmt_f64(row.kernel_l2_norm), fmt_f64(row.predicted_scale), fmt_f64(row.ratio)])?;
        rows.push(row);
    }
    let slope = log2_slope(&rows)?;
    let tol = params.f64("slope_tol", if spec.d2 == 1 { 0.1 } else { 0.15 })?;
    Ok(vec![Verdict::within("plancherel-scaling", slope, -(spec.d2 as f64), tol)])
}

fn run_report(params: &Params, output: &Path, sink: &mut RowSink) -> Result<Vec<Verdict>> {
    let dir = params.str("dir")?.map(PathBuf::from).unwrap_or_else(|| output.to_path_buf());
    let bundle = report_bundle(&dir)?;
    for (name, v) in &bundle.verdicts {
        sink.push(vec![name.clone(), v.criterion.clone(), v.passed.to_string(), fmt_f64(v.observed), v.expected.clone()])?;
    }
    Ok(vec![Verdict {
        criterion: "bundle-all-pass".into(),
        passed: bundle.passed == bundle.total,
        observed: bundle.passed as f64,
        expected: format!("{}", bundle.total),
    }])
}

#[derive(Debug, Clone, PartialEq)]
pub struct BundleSummary {
    pub passed: usize,
    pub total: usize,
    /// `(report name, verdict)` in name order.
    pub verdicts: Vec<(String, Verdict)>,
    pub warnings: Vec<String>,
    pub text: String,
    pub plots: Vec<PathBuf>,
}

/// Aggregates the summaries in `dir` into `report.txt` plus SVG plots.
///
/// Reports sharing a name are deduplicated: the one that finished last wins.
pub fn report_bundle(dir: &Path) -> Result<BundleSummary> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".summary.json"))
        .collect();
    files.sort();
    let mut chosen: BTreeMap<String, (ExperimentReport, PathBuf)> = BTreeMap::new();
    let mut warnings = Vec::new();
    for path in files {
        let report: ExperimentReport = serde_json::from_str(&std::fs::read_to_string(&path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if report.experiment == Experiment::Report || !dir.join(&report.csv).exists() {
            continue;
        }
        match chosen.get(&report.name) {
            Some((old, old_path)) => {
                let newer = report.provenance.finished_unix_ms >= old.provenance.finished_unix_ms;
                let (keep, drop) = if newer { (&path, old_path) } else { (old_path, &path) };
                let msg = format!("duplicate report '{}': keeping {}, ignoring {}", report.name, keep.display(), drop.display());
                log::warn!("{msg}");
                warnings.push(msg);
                if newer {
                    chosen.insert(report.name.clone(), (report, path));
                }
            }
            None => {
                chosen.insert(report.name.clone(), (report, path));
            }
        }
    }
    if chosen.is_empty() {
        return Err(Error::InvalidParameter(format!("{} holds no experiment results", dir.display())));
    }
    let verdicts: Vec<(String, Verdict)> =
        chosen.values().flat_map(|(r, _)| r.verdicts.iter().map(|v| (r.name.clone(), v.clone()))).collect();
    let total = verdicts.len();
    let passed = verdicts.iter().filter(|(_, v)| v.passed).count();
    let mut text = format!("{passed}/{total} criteria pass\n");
    for (name, v) in verdicts.iter().filter(|(_, v)| !v.passed) {
        text += &format!("FAIL {} ({name}): observed {}, expected {}\n", v.criterion, fmt_f64(v.observed), v.expected);
    }
    for w in &warnings {
        text += &format!("warning: {w}\n");
    }
    let mut plots = Vec::new();
    for (report, _) in chosen.values() {
        if let Some(p) = plot_report(dir, report)? {
            plots.push(p);
        }
    }
    std::fs::write(dir.join("report.txt"), &text)?;
    Ok(BundleSummary { passed, total, verdicts, warnings, text, plots })
}

fn read_columns(path: &Path, x: &str, y: &str) -> Result<Vec<(f64, f64)>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let ix = headers.iter().position(|h| h == x);
    let iy = headers.iter().position(|h| h == y);
    let (Some(ix), Some(iy)) = (ix, iy) else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        if let (Ok(a), Ok(b)) = (rec[ix].parse::<f64>(), rec[iy].parse::<f64>()) {
            out.push((a, b));
        }
    }
    Ok(out)
}

fn plotting_error(e: impl std::fmt::Display) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Log-log norm against `K + 1` for cluster scans, `log2 ||K_l||^2` against `l` for restriction scans.
fn plot_report(dir: &Path, report: &ExperimentReport) -> Result<Option<PathBuf>> {
    let csv = dir.join(&report.csv);
    let (points, caption, xlabel, ylabel): (Vec<(f64, f64)>, _, _, _) = match report.experiment {
        Experiment::ClusterScan => {
            let pts = read_columns(&csv, "K", "norm_lower_p")?;
            let pts = if pts.is_empty() { read_columns(&csv, "K", "norm_exact_1to2")? } else { pts };
            let pts = pts.into_iter().filter(|&(_, v)| v > 0.0).map(|(k, v)| ((k + 1.0).log10(), v.log10())).collect();
            (pts, "cluster norm", "log10(K + 1)", "log10 norm")
        }
        Experiment::RestrictionScan => {
            let pts = read_columns(&csv, "ell", "kernel_l2_norm")?;
            let pts = pts.into_iter().filter(|&(_, v)| v > 0.0).map(|(l, v)| (l, 2.0 * v.log2())).collect();
            (pts, "kernel norm", "ell", "log2 ||K||^2")
        }
        _ => return Ok(None),
    };
    if points.len() < 2 {
        return Ok(None);
    }
    let path = dir.join(format!("{}.svg", report.name));
    let (x0, x1) = bounds(points.iter().map(|p| p.0));
    let (y0, y1) = bounds(points.iter().map(|p| p.1));
    {
        let root = SVGBackend::new(&path, (640, 480)).into_drawing_area();
        root.fill(&WHITE).map_err(plotting_error)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(format!("{} ({caption})", report.name), ("sans-serif", 20))
            .margin(10)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(x0..x1, y0..y1)
            .map_err(plotting_error)?;
        chart.configure_mesh().x_desc(xlabel).y_desc(ylabel).draw().map_err(plotting_error)?;
        chart.draw_series(LineSeries::new(points.iter().copied(), &BLUE)).map_err(plotting_error)?;
        chart.draw_series(points.iter().map(|&p| Circle::new(p, 2, BLUE.filled()))).map_err(plotting_error)?;
        root.present().map_err(plotting_error)?;
    }
    Ok(Some(path))
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let pad = 0.05 * (hi - lo).max(1e-9);
    (lo - pad, hi + pad)
}
