//! Experiment runner: stream simulation, algorithm rosters over repeated
//! runs, per-batch CSV, summary JSON, checkpoints and comparison tables.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dpm::{InitStrategy, MixtureState, ModelConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate_batch, BatchMetrics};
use crate::expfam::ComponentPosterior;
use crate::forgetting::{fit_stream_with, AlgorithmSpec, SviParams, DEFAULT_GAMMA};
use crate::stream::{
    generate_stream, load_stream_csv, save_stream, truth_sidecar_path, GroundTruth, StreamBatch,
    StreamConfig,
};

/// Environment variable holding the default output directory.
pub const OUTPUT_DIR_ENV: &str = "DPM_STREAM_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "results";
/// Repetition `r` uses seed `base + r * REP_SEED_STRIDE`.
pub const REP_SEED_STRIDE: u64 = 10_007;

pub const RUNS_FILE: &str = "runs.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const STREAM_FILE: &str = "stream.csv";
pub const CSV_HEADER: &str =
    "rep,algo,t,loglik,silhouette,nmi,ari,purity,n_active,e_rho_mean,omega_min,omega_max,wall_ms";
/// Metrics summarized per algorithm, in table order.
pub const SUMMARY_METRICS: [&str; 6] = ["loglik", "silhouette", "nmi", "ari", "purity", "n_active"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum StreamSource {
    Synthetic(StreamConfig),
    Csv {
        /// File path or glob pattern.
        path: String,
        /// Ground-truth sidecar; defaults to the one next to `path` when present.
        #[serde(default)]
        truth: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub alpha: f64,
    pub trunc: usize,
    /// Base measure; `N(0, I)` x `Gamma(1, 1)` when absent.
    pub prior: Option<ComponentPosterior>,
    pub max_iters: usize,
    pub tol: f64,
    pub init: InitStrategy,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let m = ModelConfig::new(1);
        Self {
            alpha: m.alpha,
            trunc: m.trunc,
            prior: None,
            max_iters: m.max_iters,
            tol: m.tol,
            init: m.init,
        }
    }
}

impl ModelSettings {
    pub fn to_config(&self, dim: usize) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            alpha: self.alpha,
            trunc: self.trunc,
            dim,
            prior: self
                .prior
                .clone()
                .unwrap_or_else(|| ComponentPosterior::standard(dim)),
            max_iters: self.max_iters,
            tol: self.tol,
            init: self.init,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub stream: StreamSource,
    #[serde(default)]
    pub model: ModelSettings,
    pub algorithms: Vec<AlgorithmSpec>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_repetitions() -> usize {
    10
}

/// The six-algorithm roster of the synthetic study.
pub fn paper_roster() -> Vec<AlgorithmSpec> {
    vec![
        AlgorithmSpec::Svb,
        AlgorithmSpec::Pp { fixed_rho: 0.9 },
        AlgorithmSpec::Hpp {
            gamma: DEFAULT_GAMMA,
        },
        AlgorithmSpec::Mhpp {
            gamma: DEFAULT_GAMMA,
        },
        AlgorithmSpec::Svi(SviParams::default()),
        AlgorithmSpec::Privileged,
    ]
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            stream: StreamSource::Synthetic(StreamConfig::default()),
            model: ModelSettings::default(),
            algorithms: paper_roster(),
            repetitions: default_repetitions(),
            seed: 0,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::config("repetitions", "must be at least 1"));
        }
        if self.algorithms.is_empty() {
            return Err(Error::config(
                "algorithms",
                "at least one algorithm is required",
            ));
        }
        for (i, a) in self.algorithms.iter().enumerate() {
            a.validate().map_err(|e| match e {
                Error::Config { path, msg } => {
                    Error::config(format!("algorithms[{i}].{path}"), msg)
                }
                other => other,
            })?;
        }
        if let StreamSource::Synthetic(s) = &self.stream {
            s.validate()?;
            self.model.to_config(s.dim)?;
        }
        Ok(())
    }

    /// Parse a JSON config value, reporting the offending field path on failure.
    pub fn from_value(value: Value) -> Result<Self> {
        let cfg: Self = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load from an optional JSON file, then apply `path value` overrides.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut value = match file {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| {
                    Error::config("config", format!("cannot read {}: {e}", p.display()))
                })?;
                serde_json::from_str(&text).map_err(|e| Error::config("config", e.to_string()))?
            }
            None => serde_json::to_value(ExperimentConfig::default())?,
        };
        for (path, raw) in overrides {
            apply_override(&mut value, path, raw)?;
        }
        Self::from_value(value)
    }
}

/// Set the value at a dotted path (`model.alpha`, `algorithms.0.gamma`).
/// The raw text is read as JSON when possible, else as a string.
pub fn apply_override(root: &mut Value, path: &str, raw: &str) -> Result<()> {
    let parsed: Value =
        serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| Error::config(path, format!("`{part}` is not an array index")))?;
                let len = items.len();
                items.get_mut(idx).ok_or_else(|| {
                    Error::config(path, format!("index {idx} out of range ({len} items)"))
                })?
            }
            Value::Object(map) => map.entry(part.to_string()).or_insert_with(|| {
                if last {
                    Value::Null
                } else {
                    Value::Object(Default::default())
                }
            }),
            _ => {
                return Err(Error::config(
                    path,
                    format!("`{part}` is not inside an object"),
                ))
            }
        };
    }
    *cur = parsed;
    Ok(())
}

/// `(dotted path, raw value)` pairs taken from the command line.
pub type Overrides = Vec<(String, String)>;

/// Top-level config fields that may be set directly, e.g. `--seed 3`.
pub const CONFIG_KEYS: [&str; 6] = [
    "stream",
    "model",
    "algorithms",
    "repetitions",
    "seed",
    "output_dir",
];

fn is_override(flag: &str) -> bool {
    let key = flag.split(['.', '=']).next().unwrap_or_default();
    CONFIG_KEYS.contains(&key)
}

/// Split `--a.b value` / `--a.b=value` overrides of config fields out of an
/// argument list. Other flags are left for the regular parser.
pub fn extract_overrides(args: Vec<String>) -> Result<(Vec<String>, Overrides)> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        match arg.strip_prefix("--") {
            Some(flag) if is_override(flag) => {
                if let Some((k, v)) = flag.split_once('=') {
                    overrides.push((k.to_string(), v.to_string()));
                } else {
                    let v = it
                        .next()
                        .ok_or_else(|| Error::config(flag, "override flag needs a value"))?;
                    overrides.push((flag.to_string(), v));
                }
            }
            _ => rest.push(arg),
        }
    }
    Ok((rest, overrides))
}

/// Resolve the output directory: config field, then flag/env, then the default.
pub fn resolve_output_dir(cfg: &ExperimentConfig, flag: Option<PathBuf>) -> PathBuf {
    cfg.output_dir
        .clone()
        .or(flag)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", dir.display()),
        ))
    })
}

fn rep_seed(base: u64, rep: usize) -> u64 {
    base.wrapping_add(rep as u64 * REP_SEED_STRIDE)
}

/// Write the synthetic stream (and its ground truth) of every repetition.
///
/// Repetition 0 goes to `stream.csv`; further repetitions to `stream_rep{r}.csv`.
pub fn cmd_simulate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let StreamSource::Synthetic(stream_cfg) = &cfg.stream else {
        return Err(Error::config(
            "stream.source",
            "simulate needs a synthetic stream",
        ));
    };
    ensure_dir(out_dir)?;
    let mut written = Vec::new();
    for rep in 0..cfg.repetitions {
        let sc = StreamConfig {
            seed: rep_seed(stream_cfg.seed, rep),
            ..stream_cfg.clone()
        };
        let (stream, truth) = generate_stream(&sc)?;
        let path = if rep == 0 {
            out_dir.join(STREAM_FILE)
        } else {
            out_dir.join(format!("stream_rep{rep}.csv"))
        };
        save_stream(&stream, Some(&truth), &path)?;
        written.push(path);
    }
    Ok(written)
}

/// One per-batch CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub rep: usize,
    pub algo: String,
    pub t: usize,
    pub metrics: BatchMetrics,
    pub omega_min: Option<f64>,
    pub omega_max: Option<f64>,
    pub wall_ms: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:?}"))
}

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:?}")
    }
}

impl RunRow {
    pub fn to_csv(&self) -> String {
        let m = &self.metrics;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{:.3}",
            self.rep,
            self.algo,
            self.t,
            num(m.test_loglik_per_point),
            opt(m.silhouette),
            num(m.nmi),
            num(m.ari),
            num(m.purity),
            m.n_active_components,
            opt(m.e_rho_mean),
            opt(self.omega_min),
            opt(self.omega_max),
            self.wall_ms
        )
    }

    fn metric(&self, name: &str) -> Option<f64> {
        let m = &self.metrics;
        let v = match name {
            "loglik" => m.test_loglik_per_point,
            "silhouette" => m.silhouette?,
            "nmi" => m.nmi,
            "ari" => m.ari,
            "purity" => m.purity,
            "n_active" => m.n_active_components as f64,
            _ => return None,
        };
        v.is_finite().then_some(v)
    }
}

/// Mean and population standard deviation across repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub per_rep: Vec<f64>,
}

impl MetricSummary {
    pub fn from_values(per_rep: Vec<f64>) -> Self {
        let n = per_rep.len() as f64;
        let (mean, std) = if per_rep.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let mean = per_rep.iter().sum::<f64>() / n;
            let var = per_rep.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            (mean, var.sqrt())
        };
        Self { mean, std, per_rep }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algo: String,
    pub metrics: std::collections::BTreeMap<String, MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub repetitions: usize,
    pub algorithms: Vec<AlgorithmSummary>,
}

/// Everything produced by one `run` invocation.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<RunRow>,
    pub summary: Summary,
    pub checkpoints: Vec<(usize, String, MixtureState)>,
}

struct PreparedStream {
    batches: Vec<StreamBatch>,
    truth: Option<GroundTruth>,
}

fn prepare_streams(cfg: &ExperimentConfig) -> Result<Vec<PreparedStream>> {
    match &cfg.stream {
        StreamSource::Synthetic(sc) => (0..cfg.repetitions)
            .into_par_iter()
            .map(|rep| {
                let (batches, truth) = generate_stream(&StreamConfig {
                    seed: rep_seed(sc.seed, rep),
                    ..sc.clone()
                })?;
                Ok(PreparedStream {
                    batches,
                    truth: Some(truth),
                })
            })
            .collect(),
        StreamSource::Csv { path, truth } => {
            let batches = load_stream_csv(path)?;
            if batches.is_empty() {
                return Err(Error::Empty(format!("no rows in {path}")));
            }
            let truth_path = truth.clone().or_else(|| {
                let side = truth_sidecar_path(Path::new(path));
                side.exists().then_some(side)
            });
            let truth = truth_path.map(|p| GroundTruth::load(&p)).transpose()?;
            // same data every repetition; only inference seeds differ
            Ok((0..cfg.repetitions)
                .map(|_| PreparedStream {
                    batches: batches.clone(),
                    truth: truth.clone(),
                })
                .collect())
        }
    }
}

/// Run every algorithm on every repetition and collect rows and summaries.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let streams = prepare_streams(cfg)?;
    let dim = streams[0].batches[0].dim();
    let model = cfg.model.to_config(dim)?;
    if cfg.algorithms.contains(&AlgorithmSpec::Privileged)
        && streams.iter().any(|s| s.truth.is_none())
    {
        return Err(Error::config(
            "algorithms",
            "Privileged needs ground-truth drift flags",
        ));
    }

    let jobs: Vec<(usize, usize)> = (0..cfg.repetitions)
        .flat_map(|r| (0..cfg.algorithms.len()).map(move |a| (r, a)))
        .collect();
    let results: Vec<(Vec<RunRow>, MixtureState)> = jobs
        .par_iter()
        .map(|&(rep, ai)| {
            let algo = &cfg.algorithms[ai];
            let prepared = &streams[rep];
            let flags = prepared.truth.as_ref().map(|t| t.drift_flags());
            let mut rows = Vec::with_capacity(prepared.batches.len());
            let mut clock = Instant::now();
            let records = fit_stream_with(
                algo,
                &prepared.batches,
                flags.as_deref(),
                &model,
                rep_seed(cfg.seed, rep),
                |batch, record| {
                    let fit = &record.fit;
                    let metrics =
                        evaluate_batch(&fit.state, &fit.phi, batch, model.alpha, &fit.forgetting)?;
                    let omegas = &fit.forgetting.omegas;
                    rows.push(RunRow {
                        rep,
                        algo: algo.label(),
                        t: batch.t,
                        metrics,
                        omega_min: omegas.iter().cloned().reduce(f64::min),
                        omega_max: omegas.iter().cloned().reduce(f64::max),
                        wall_ms: clock.elapsed().as_secs_f64() * 1e3,
                    });
                    clock = Instant::now();
                    Ok(())
                },
            )?;
            let last = records.last().expect("non-empty stream").fit.state.clone();
            Ok((rows, last))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut checkpoints = Vec::new();
    for (&(rep, ai), (r, state)) in jobs.iter().zip(results) {
        rows.extend(r);
        checkpoints.push((rep, cfg.algorithms[ai].label(), state));
    }
    let summary = summarize(&rows, &cfg.algorithms, cfg.repetitions);
    Ok(RunOutput {
        rows,
        summary,
        checkpoints,
    })
}

/// Per-run means over batches, then mean and std across repetitions.
pub fn summarize(rows: &[RunRow], algorithms: &[AlgorithmSpec], repetitions: usize) -> Summary {
    let mut labels: Vec<String> = Vec::new();
    for a in algorithms {
        let l = a.label();
        if !labels.contains(&l) {
            labels.push(l);
        }
    }
    let algorithms = labels
        .into_iter()
        .map(|algo| {
            let metrics = SUMMARY_METRICS
                .iter()
                .map(|&name| {
                    let per_rep: Vec<f64> = (0..repetitions)
                        .filter_map(|rep| {
                            let vals: Vec<f64> = rows
                                .iter()
                                .filter(|r| r.rep == rep && r.algo == algo)
                                .filter_map(|r| r.metric(name))
                                .collect();
                            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
                        })
                        .collect();
                    (name.to_string(), MetricSummary::from_values(per_rep))
                })
                .collect();
            AlgorithmSummary { algo, metrics }
        })
        .collect();
    Summary {
        repetitions,
        algorithms,
    }
}

fn file_safe(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Run the experiment and write `runs.csv`, `summary.json`, `config.json`
/// and `checkpoints/rep{r}_{algo}.json` into `out_dir`.
pub fn cmd_run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutput> {
    let output = run_experiment(cfg)?;
    ensure_dir(out_dir)?;
    ensure_dir(&out_dir.join("checkpoints"))?;

    let mut w = BufWriter::new(File::create(out_dir.join(RUNS_FILE))?);
    writeln!(w, "{CSV_HEADER}")?;
    for row in &output.rows {
        writeln!(w, "{}", row.to_csv())?;
    }
    w.flush()?;

    fs::write(
        out_dir.join(SUMMARY_FILE),
        serde_json::to_string_pretty(&output.summary)?,
    )?;
    fs::write(
        out_dir.join("config.json"),
        serde_json::to_string_pretty(cfg)?,
    )?;
    for (rep, label, state) in &output.checkpoints {
        let path = out_dir
            .join("checkpoints")
            .join(format!("rep{rep}_{}.json", file_safe(label)));
        fs::write(path, serde_json::to_string(state)?)?;
    }
    Ok(output)
}

/// Pooled comparison of one or more summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub metrics: Vec<String>,
    pub algorithms: Vec<String>,
    /// `cells[m][a]` for metric `m` and algorithm `a`.
    pub cells: Vec<Vec<Option<MetricSummary>>>,
}

fn read_summary(path: &Path) -> Result<Summary> {
    let file = if path.is_dir() {
        path.join(SUMMARY_FILE)
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&file).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", file.display()),
        ))
    })?;
    Ok(serde_json::from_str(&text)?)
}

/// Pool per-repetition values of several summaries into one table.
pub fn compare_summaries(summaries: &[Summary]) -> Result<Comparison> {
    if summaries.is_empty() {
        return Err(Error::Empty("no summaries to compare".into()));
    }
    let metric_set = |s: &Summary| -> BTreeSet<String> {
        s.algorithms
            .iter()
            .flat_map(|a| a.metrics.keys().cloned())
            .collect()
    };
    let reference = metric_set(&summaries[0]);
    for (i, s) in summaries.iter().enumerate().skip(1) {
        if metric_set(s) != reference {
            return Err(Error::config(
                format!("inputs[{i}]"),
                "metric set differs from the first input",
            ));
        }
    }
    let mut metrics: Vec<String> = SUMMARY_METRICS
        .iter()
        .map(|m| m.to_string())
        .filter(|m| reference.contains(m))
        .collect();
    metrics.extend(
        reference
            .iter()
            .filter(|m| !metrics.contains(m))
            .cloned()
            .collect::<Vec<_>>(),
    );

    let mut algorithms: Vec<String> = Vec::new();
    for s in summaries {
        for a in &s.algorithms {
            if !algorithms.contains(&a.algo) {
                algorithms.push(a.algo.clone());
            }
        }
    }
    let cells = metrics
        .iter()
        .map(|m| {
            algorithms
                .iter()
                .map(|algo| {
                    let pooled: Vec<f64> = summaries
                        .iter()
                        .flat_map(|s| s.algorithms.iter().filter(|a| &a.algo == algo))
                        .filter_map(|a| a.metrics.get(m))
                        .flat_map(|ms| ms.per_rep.iter().cloned())
                        .collect();
                    (!pooled.is_empty()).then(|| MetricSummary::from_values(pooled))
                })
                .collect()
        })
        .collect();
    Ok(Comparison {
        metrics,
        algorithms,
        cells,
    })
}

impl Comparison {
    /// Column indices holding the best mean per metric, ignoring `Privileged`.
    pub fn best(&self, metric: usize) -> Vec<usize> {
        let candidates: Vec<(usize, f64)> = self.cells[metric]
            .iter()
            .enumerate()
            .filter(|(a, _)| self.algorithms[*a] != "Privileged")
            .filter_map(|(a, c)| {
                c.as_ref()
                    .filter(|c| c.mean.is_finite())
                    .map(|c| (a, c.mean))
            })
            .collect();
        let Some(top) = candidates.iter().map(|c| c.1).reduce(f64::max) else {
            return Vec::new();
        };
        candidates
            .iter()
            .filter(|c| c.1 == top)
            .map(|c| c.0)
            .collect()
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "| metric | {} |", self.algorithms.join(" | "));
        let _ = writeln!(out, "|---|{}", "---|".repeat(self.algorithms.len()));
        for (mi, m) in self.metrics.iter().enumerate() {
            let best = self.best(mi);
            let cells: Vec<String> = self.cells[mi]
                .iter()
                .enumerate()
                .map(|(a, c)| match c {
                    None => "-".to_string(),
                    Some(c) => {
                        let text = format!("{:.2} ± {:.2}", c.mean, c.std);
                        if best.contains(&a) {
                            format!("**{text}**")
                        } else {
                            text
                        }
                    }
                })
                .collect();
            let _ = writeln!(out, "| {m} | {} |", cells.join(" | "));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,algo,mean,std,n\n");
        for (mi, m) in self.metrics.iter().enumerate() {
            for (ai, a) in self.algorithms.iter().enumerate() {
                if let Some(c) = &self.cells[mi][ai] {
                    let _ = writeln!(out, "{m},{a},{:?},{:?},{}", c.mean, c.std, c.per_rep.len());
                }
            }
        }
        out
    }
}

pub fn cmd_compare(paths: &[PathBuf]) -> Result<Comparison> {
    let summaries = paths
        .iter()
        .map(|p| read_summary(p))
        .collect::<Result<Vec<_>>>()?;
    compare_summaries(&summaries)
}
