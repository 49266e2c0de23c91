//! Drifting Gaussian-mixture streams with ground truth, and CSV I/O.
//!
//! Generation uses `ChaCha8Rng` seeded from the config. Batch 0 draws every
//! mean uniformly from `[-mean_box, mean_box]^d` and every standard
//! deviation uniformly from `std_range`. On each drift batch (multiples of
//! `drift_period`, excluding 0) the means receive an additive
//! `N(0, drift_scale^2 I)` perturbation and the standard deviations are
//! redrawn. With `min_separation > 0`, initial means and each drift
//! perturbation are redrawn (up to `MAX_PLACEMENT_ATTEMPTS` times) until every
//! pair of means is at least that far apart. Points come i.i.d. from the
//! equal-weight mixture.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    pub n_batches: usize,
    pub train_per_batch: usize,
    pub test_per_batch: usize,
    pub k_true: usize,
    pub dim: usize,
    pub drift_period: usize,
    pub seed: u64,
    pub mean_box: f64,
    pub std_range: (f64, f64),
    pub drift_scale: f64,
    /// Minimum Euclidean distance between any two cluster means; 0 disables the check.
    pub min_separation: f64,
}

impl Default for StreamConfig {
    /// Four 2-D clusters, 20 batches of 1000 train / 500 test points, drift every 4 batches.
    fn default() -> Self {
        Self {
            n_batches: 20,
            train_per_batch: 1000,
            test_per_batch: 500,
            k_true: 4,
            dim: 2,
            drift_period: 4,
            seed: 0,
            mean_box: 10.0,
            std_range: (0.5, 1.5),
            drift_scale: 3.0,
            min_separation: 6.0,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("stream.n_batches", self.n_batches),
            ("stream.train_per_batch", self.train_per_batch),
            ("stream.test_per_batch", self.test_per_batch),
            ("stream.k_true", self.k_true),
            ("stream.dim", self.dim),
            ("stream.drift_period", self.drift_period),
        ];
        for (path, v) in positive {
            if v == 0 {
                return Err(Error::config(path, "must be positive"));
            }
        }
        let (lo, hi) = self.std_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::config("stream.std_range", "need 0 < low <= high"));
        }
        if !(self.mean_box >= 0.0 && self.mean_box.is_finite()) {
            return Err(Error::config("stream.mean_box", "must be non-negative"));
        }
        if !(self.drift_scale >= 0.0 && self.drift_scale.is_finite()) {
            return Err(Error::config("stream.drift_scale", "must be non-negative"));
        }
        if !(self.min_separation >= 0.0 && self.min_separation.is_finite()) {
            return Err(Error::config(
                "stream.min_separation",
                "must be non-negative",
            ));
        }
        Ok(())
    }

    /// Default stream with `min_separation` disabled.
    pub fn unconstrained() -> Self {
        Self {
            min_separation: 0.0,
            ..Self::default()
        }
    }

    pub fn is_drift_batch(&self, t: usize) -> bool {
        t > 0 && t.is_multiple_of(self.drift_period)
    }
}

/// One timestamped batch. Label `-1` marks an unknown class.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamBatch {
    pub t: usize,
    pub train: Array2<f64>,
    pub test: Array2<f64>,
    pub train_labels: Vec<i64>,
    pub test_labels: Vec<i64>,
}

impl StreamBatch {
    pub fn dim(&self) -> usize {
        self.train.ncols().max(self.test.ncols())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthBatch {
    pub t: usize,
    pub means: Vec<Vec<f64>>,
    pub stds: Vec<f64>,
    #[serde(default)]
    pub weights: Vec<f64>,
    pub drift: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub batches: Vec<TruthBatch>,
}

impl GroundTruth {
    pub fn drift_flags(&self) -> Vec<bool> {
        self.batches.iter().map(|b| b.drift).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

pub const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

fn well_separated(means: &[Vec<f64>], min_sep: f64) -> bool {
    means.iter().enumerate().all(|(i, a)| {
        means[..i].iter().all(|b| {
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() >= min_sep * min_sep
        })
    })
}

/// Draw candidate mean sets with `draw` until they are separated enough.
fn place_means<F>(rng: &mut ChaCha8Rng, min_sep: f64, mut draw: F) -> Vec<Vec<f64>>
where
    F: FnMut(&mut ChaCha8Rng) -> Vec<Vec<f64>>,
{
    let mut means = draw(rng);
    if min_sep > 0.0 {
        for _ in 1..MAX_PLACEMENT_ATTEMPTS {
            if well_separated(&means, min_sep) {
                break;
            }
            means = draw(rng);
        }
    }
    means
}

fn sample_points(
    rng: &mut ChaCha8Rng,
    n: usize,
    means: &[Vec<f64>],
    stds: &[f64],
) -> (Array2<f64>, Vec<i64>) {
    let d = means[0].len();
    let mut x = Array2::<f64>::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = rng.random_range(0..means.len());
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            x[[i, j]] = means[k][j] + stds[k] * z;
        }
        labels.push(k as i64);
    }
    (x, labels)
}

pub fn generate_stream(cfg: &StreamConfig) -> Result<(Vec<StreamBatch>, GroundTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (lo, hi) = cfg.std_range;
    let draw_std = |rng: &mut ChaCha8Rng| {
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        }
    };

    let mut means = place_means(&mut rng, cfg.min_separation, |rng| {
        (0..cfg.k_true)
            .map(|_| {
                (0..cfg.dim)
                    .map(|_| rng.random_range(-cfg.mean_box..=cfg.mean_box))
                    .collect()
            })
            .collect()
    });
    let mut stds: Vec<f64> = (0..cfg.k_true).map(|_| draw_std(&mut rng)).collect();
    let weights = vec![1.0 / cfg.k_true as f64; cfg.k_true];

    let mut batches = Vec::with_capacity(cfg.n_batches);
    let mut truth = Vec::with_capacity(cfg.n_batches);
    for t in 0..cfg.n_batches {
        let drift = cfg.is_drift_batch(t);
        if drift {
            let old = means;
            means = place_means(&mut rng, cfg.min_separation, |rng| {
                old.iter()
                    .map(|m| {
                        m.iter()
                            .map(|v| {
                                let z: f64 = rng.sample(StandardNormal);
                                v + cfg.drift_scale * z
                            })
                            .collect()
                    })
                    .collect()
            });
            for s in stds.iter_mut() {
                *s = draw_std(&mut rng);
            }
        }
        let (train, train_labels) = sample_points(&mut rng, cfg.train_per_batch, &means, &stds);
        let (test, test_labels) = sample_points(&mut rng, cfg.test_per_batch, &means, &stds);
        batches.push(StreamBatch {
            t,
            train,
            test,
            train_labels,
            test_labels,
        });
        truth.push(TruthBatch {
            t,
            means: means.clone(),
            stds: stds.clone(),
            weights: weights.clone(),
            drift,
        });
    }
    Ok((batches, GroundTruth { batches: truth }))
}

/// Sidecar path for the ground truth of `csv_path`: `name.csv` -> `name.truth.json`.
pub fn truth_sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("truth.json")
}

fn write_rows<W: Write>(
    w: &mut W,
    t: usize,
    split: &str,
    x: &Array2<f64>,
    labels: &[i64],
) -> std::io::Result<()> {
    for (row, label) in x.outer_iter().zip(labels) {
        write!(w, "{t},{split},{label}")?;
        for v in row {
            // shortest representation that round-trips exactly
            write!(w, ",{v:?}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Write the stream as CSV plus the ground-truth JSON sidecar (when given).
pub fn save_stream(
    stream: &[StreamBatch],
    truth: Option<&GroundTruth>,
    csv_path: &Path,
) -> Result<()> {
    let d = stream.first().map_or(0, |b| b.dim());
    let mut w = BufWriter::new(File::create(csv_path)?);
    write!(w, "t,split,label")?;
    for j in 0..d {
        write!(w, ",x{j}")?;
    }
    writeln!(w)?;
    for b in stream {
        write_rows(&mut w, b.t, "train", &b.train, &b.train_labels)?;
        write_rows(&mut w, b.t, "test", &b.test, &b.test_labels)?;
    }
    w.flush()?;
    if let Some(truth) = truth {
        let mut f = BufWriter::new(File::create(truth_sidecar_path(csv_path))?);
        serde_json::to_writer(&mut f, truth)?;
        f.flush()?;
    }
    Ok(())
}

#[derive(Default)]
struct BatchRows {
    train: Vec<f64>,
    test: Vec<f64>,
    train_labels: Vec<i64>,
    test_labels: Vec<i64>,
}

fn expand_pattern(pattern: &str) -> Result<Vec<PathBuf>> {
    if !pattern.contains(['*', '?', '[']) {
        return Ok(vec![PathBuf::from(pattern)]);
    }
    let mut paths: Vec<PathBuf> = glob::glob(pattern)
        .map_err(|e| Error::config("stream.csv", e.to_string()))?
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Io(e.into()))?;
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Empty(format!("no files match `{pattern}`")));
    }
    Ok(paths)
}

/// Read one or more CSV files (a path or glob pattern) into batches ordered by `t`.
pub fn load_stream_csv(path_pattern: &str) -> Result<Vec<StreamBatch>> {
    let mut grouped: BTreeMap<usize, BatchRows> = BTreeMap::new();
    let mut dim: Option<usize> = None;

    for path in expand_pattern(path_pattern)? {
        let name = path.display().to_string();
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(&path)?;
        let headers = reader.headers()?.clone();
        let find = |col: &str| {
            headers
                .iter()
                .position(|h| h == col)
                .ok_or_else(|| Error::Parse {
                    path: name.clone(),
                    line: 1,
                    msg: format!("missing column `{col}`"),
                })
        };
        let (t_col, split_col, label_col) = (find("t")?, find("split")?, find("label")?);
        let mut x_cols = Vec::new();
        while let Some(pos) = headers
            .iter()
            .position(|h| h == format!("x{}", x_cols.len()))
        {
            x_cols.push(pos);
        }
        if x_cols.is_empty() {
            find("x0")?;
        }
        match dim {
            None => dim = Some(x_cols.len()),
            Some(d) if d != x_cols.len() => {
                return Err(Error::Parse {
                    path: name,
                    line: 1,
                    msg: format!(
                        "inconsistent dimension: expected {d} feature columns, found {}",
                        x_cols.len()
                    ),
                })
            }
            _ => {}
        }

        for record in reader.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let err = |msg: String| Error::Parse {
                path: name.clone(),
                line,
                msg,
            };
            let field = |i: usize| {
                record
                    .get(i)
                    .ok_or_else(|| err(format!("missing field {}", i + 1)))
            };
            let t: usize = field(t_col)?
                .parse()
                .map_err(|e| err(format!("bad `t`: {e}")))?;
            let label: i64 = field(label_col)?
                .parse()
                .map_err(|e| err(format!("bad `label`: {e}")))?;
            if label < -1 {
                return Err(err(format!("label {label} below -1")));
            }
            let mut xs = Vec::with_capacity(x_cols.len());
            for (j, &c) in x_cols.iter().enumerate() {
                let v: f64 = field(c)?
                    .parse()
                    .map_err(|e| err(format!("bad `x{j}`: {e}")))?;
                if !v.is_finite() {
                    return Err(err(format!("non-finite `x{j}`")));
                }
                xs.push(v);
            }
            let rows = grouped.entry(t).or_default();
            match field(split_col)? {
                "train" => {
                    rows.train.extend(xs);
                    rows.train_labels.push(label);
                }
                "test" => {
                    rows.test.extend(xs);
                    rows.test_labels.push(label);
                }
                other => {
                    return Err(err(format!(
                        "split must be `train` or `test`, got `{other}`"
                    )))
                }
            }
        }
    }

    let d = dim.unwrap_or(0);
    grouped
        .into_iter()
        .map(|(t, rows)| {
            let shape = |v: Vec<f64>, n: usize| {
                Array2::from_shape_vec((n, d), v).map_err(|e| Error::Domain(e.to_string()))
            };
            Ok(StreamBatch {
                t,
                train: shape(rows.train, rows.train_labels.len())?,
                test: shape(rows.test, rows.test_labels.len())?,
                train_labels: rows.train_labels,
                test_labels: rows.test_labels,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> StreamConfig {
        StreamConfig {
            n_batches: 6,
            train_per_batch: 40,
            test_per_batch: 20,
            ..StreamConfig::default()
        }
    }

    #[test]
    fn default_drift_schedule() {
        let (_, truth) = generate_stream(&StreamConfig {
            train_per_batch: 5,
            test_per_batch: 5,
            ..StreamConfig::default()
        })
        .unwrap();
        let drifts: Vec<usize> = truth
            .batches
            .iter()
            .filter(|b| b.drift)
            .map(|b| b.t)
            .collect();
        assert_eq!(drifts, vec![4, 8, 12, 16]);
    }

    #[test]
    fn no_drift_when_period_exceeds_length() {
        let (_, truth) = generate_stream(&StreamConfig {
            drift_period: 100,
            ..small()
        })
        .unwrap();
        assert!(truth.batches.iter().all(|b| !b.drift));
        assert!(truth
            .batches
            .iter()
            .all(|b| b.means == truth.batches[0].means));
        assert!(truth
            .batches
            .iter()
            .all(|b| b.stds == truth.batches[0].stds));
    }

    #[test]
    fn shapes_and_labels() {
        let cfg = small();
        let (stream, truth) = generate_stream(&cfg).unwrap();
        assert_eq!(stream.len(), 6);
        for b in &stream {
            assert_eq!(b.train.dim(), (40, 2));
            assert_eq!(b.test.dim(), (20, 2));
            assert!(b.train_labels.iter().all(|&l| (0..4).contains(&l)));
        }
        for tb in &truth.batches {
            assert!(tb.stds.iter().all(|&s| (0.5..1.5).contains(&s)));
            assert!((tb.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        assert!(!truth.batches[0].drift);
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate_stream(&small()).unwrap();
        let b = generate_stream(&small()).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        let c = generate_stream(&StreamConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn means_respect_min_separation() {
        let (_, truth) = generate_stream(&StreamConfig {
            min_separation: 6.0,
            train_per_batch: 1,
            test_per_batch: 1,
            ..StreamConfig::default()
        })
        .unwrap();
        for tb in &truth.batches {
            assert!(well_separated(&tb.means, 6.0));
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(generate_stream(&StreamConfig {
            drift_period: 0,
            ..small()
        })
        .is_err());
        assert!(generate_stream(&StreamConfig {
            std_range: (0.0, 1.0),
            ..small()
        })
        .is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let (stream, truth) = generate_stream(&small()).unwrap();
        save_stream(&stream, Some(&truth), &path).unwrap();
        let back = load_stream_csv(path.to_str().unwrap()).unwrap();
        assert_eq!(back, stream);
        let t2 = GroundTruth::load(&truth_sidecar_path(&path)).unwrap();
        assert_eq!(t2, truth);
    }

    #[test]
    fn csv_single_rows_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.csv");
        std::fs::write(
            &p,
            "t,split,label,x0,x1,x2\n3,train,-1,1,2,3\n3,test,0,4,5,6\n",
        )
        .unwrap();
        let s = load_stream_csv(p.to_str().unwrap()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].t, 3);
        assert_eq!(s[0].train.dim(), (1, 3));
        assert_eq!(s[0].test.dim(), (1, 3));
        assert_eq!(s[0].train_labels, vec![-1]);

        std::fs::write(&p, "t,label,x0\n0,1,2\n").unwrap();
        let e = load_stream_csv(p.to_str().unwrap())
            .unwrap_err()
            .to_string();
        assert!(e.contains("split"), "{e}");

        std::fs::write(&p, "t,split,label,x0\n0,train,1,2\n0,train,1,oops\n").unwrap();
        let e = load_stream_csv(p.to_str().unwrap())
            .unwrap_err()
            .to_string();
        assert!(e.contains(":3:"), "{e}");

        std::fs::write(&p, "t,split,label,x0\n0,valid,1,2\n").unwrap();
        assert!(load_stream_csv(p.to_str().unwrap()).is_err());

        let q = dir.path().join("two.csv");
        std::fs::write(&q, "t,split,label,x0,x1\n1,train,0,1,2\n").unwrap();
        std::fs::write(&p, "t,split,label,x0\n0,train,0,1\n").unwrap();
        let pattern = dir.path().join("*.csv");
        let e = load_stream_csv(pattern.to_str().unwrap())
            .unwrap_err()
            .to_string();
        assert!(e.contains("inconsistent dimension"), "{e}");
    }
}
