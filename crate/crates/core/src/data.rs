//! Series ingestion, train-statistics normalization, window sampling,
//! forecast metrics, and a synthetic lag-coupled generator.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const STD_FLOOR: f64 = 1e-8;

/// A `timesteps x N` numeric matrix with its column names.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub values: Tensor,
    pub columns: Vec<String>,
    /// Header and values of the timestamp column, when one was flagged.
    pub timestamps: Option<(String, Vec<String>)>,
    /// Rows rejected because they contained NaN.
    pub dropped_rows: usize,
}

impl RawSeries {
    pub fn len(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_vars(&self) -> usize {
        self.values.shape()[1]
    }
}

pub fn load_csv(path: impl AsRef<Path>, has_timestamp: bool) -> Result<RawSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    read_csv(file, has_timestamp)
}

/// Parses a headed CSV. Line numbers in errors are 1-based and count the header.
pub fn read_csv<R: Read>(input: R, has_timestamp: bool) -> Result<RawSeries> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Data(format!("bad header: {e}")))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let skip = usize::from(has_timestamp);
    if header.len() <= skip {
        return Err(Error::Data("no feature columns".into()));
    }
    let columns = header[skip..].to_vec();
    let n = columns.len();

    let mut values = Vec::new();
    let mut stamps = Vec::new();
    let mut dropped = 0;
    for (r, record) in reader.records().enumerate() {
        let line = r + 2;
        let record = record.map_err(|e| Error::Data(format!("line {line}: {e}")))?;
        if record.len() != header.len() {
            return Err(Error::Data(format!(
                "line {line}: expected {} fields, found {}",
                header.len(),
                record.len()
            )));
        }
        let mut row = Vec::with_capacity(n);
        for (c, cell) in record.iter().enumerate().skip(skip) {
            let cell = cell.trim();
            let v: f64 = cell.parse().map_err(|_| {
                Error::Data(format!(
                    "line {line}, column {} ({}): cannot parse {cell:?} as a number",
                    c + 1,
                    header[c]
                ))
            })?;
            row.push(v);
        }
        if row.iter().any(|v| v.is_nan()) {
            dropped += 1;
            continue;
        }
        if has_timestamp {
            stamps.push(record[0].to_string());
        }
        values.extend(row);
    }
    let rows = values.len() / n;
    Ok(RawSeries {
        values: Tensor::new([rows, n], values)?,
        columns,
        timestamps: has_timestamp.then(|| (header[0].clone(), stamps)),
        dropped_rows: dropped,
    })
}

/// Writes a headed CSV, one row per leading index of `values`.
pub fn write_csv<W: Write>(out: W, columns: &[String], values: &Tensor) -> Result<()> {
    let (_, n) = values.dims2()?;
    if columns.len() != n {
        return Err(Error::Data(format!("{} column names for {n} columns", columns.len())));
    }
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Data(format!("csv write failed: {e}"));
    w.write_record(columns).map_err(io)?;
    for row in values.data().chunks(n) {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.6, val: 0.2, test: 0.2 }
    }
}

impl SplitRatios {
    /// Row counts for `len` timesteps: floor on cumulative ratios, the
    /// remainder goes to test.
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !(*r >= 0.0)) || ((parts.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios {}/{}/{} must be non-negative and sum to 1",
                self.train, self.val, self.test
            )));
        }
        Ok(())
    }

    pub fn sizes(&self, len: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        let cut1 = (len as f64 * self.train).floor() as usize;
        let cut2 = ((len as f64 * (self.train + self.val)).floor() as usize).max(cut1).min(len);
        let sizes = (cut1, cut2 - cut1, len - cut2);
        for (name, n) in [("train", sizes.0), ("val", sizes.1), ("test", sizes.2)] {
            if n == 0 {
                return Err(Error::Config(format!("{name} split of {len} rows is empty")));
            }
        }
        Ok(sizes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Tensor,
    pub val: Tensor,
    pub test: Tensor,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub ratios: SplitRatios,
}

/// Per-channel mean and population standard deviation (floored).
pub fn channel_stats(values: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let (rows, n) = values.dims2()?;
    let mut mean = vec![0.0; n];
    for row in values.data().chunks(n) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    let mut var = vec![0.0; n];
    for row in values.data().chunks(n) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.iter().map(|s| (s / rows as f64).sqrt().max(STD_FLOOR)).collect();
    Ok((mean, std))
}

pub fn normalize(values: &Tensor, mean: &[f64], std: &[f64]) -> Result<Tensor> {
    let (_, n) = values.dims2()?;
    if mean.len() != n || std.len() != n {
        return Err(Error::dim("normalize", values.shape(), &[mean.len()]));
    }
    let data = values
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| (v - mean[i % n]) / std[i % n])
        .collect();
    Tensor::new(values.shape().to_vec(), data)
}

pub fn denormalize(values: &Tensor, mean: &[f64], std: &[f64]) -> Result<Tensor> {
    let (_, n) = values.dims2()?;
    if mean.len() != n || std.len() != n {
        return Err(Error::dim("denormalize", values.shape(), &[mean.len()]));
    }
    let data = values
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| v * std[i % n] + mean[i % n])
        .collect();
    Tensor::new(values.shape().to_vec(), data)
}

/// Contiguous train/val/test split, every part z-scored with train statistics.
pub fn split_normalize(raw: &RawSeries, ratios: SplitRatios) -> Result<DatasetSplit> {
    let (n_train, n_val, _) = ratios.sizes(raw.len())?;
    let train_raw = raw.values.slice_first(0, n_train)?;
    let (mean, std) = channel_stats(&train_raw)?;
    let part = |a, b| -> Result<Tensor> { normalize(&raw.values.slice_first(a, b)?, &mean, &std) };
    Ok(DatasetSplit {
        train: part(0, n_train)?,
        val: part(n_train, n_train + n_val)?,
        test: part(n_train + n_val, raw.len())?,
        mean,
        std,
        ratios,
    })
}

/// Sliding `(input, target)` windows over a `timesteps x N` matrix:
/// input rows `[s, s+T)`, target rows `[s+T, s+T+H)`.
#[derive(Debug, Clone)]
pub struct WindowSampler {
    source: Tensor,
    seq_len: usize,
    pred_len: usize,
    starts: Vec<usize>,
}

impl WindowSampler {
    pub fn new(source: &Tensor, seq_len: usize, pred_len: usize, stride: usize) -> Result<Self> {
        let (rows, _) = source.dims2()?;
        if seq_len == 0 || pred_len == 0 || stride == 0 {
            return Err(Error::Config("window lengths and stride must be positive".into()));
        }
        let span = seq_len + pred_len;
        let starts = if rows >= span { (0..=rows - span).step_by(stride).collect() } else { Vec::new() };
        Ok(WindowSampler {
            source: source.clone(),
            seq_len,
            pred_len,
            starts,
        })
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    /// Window start rows in a seeded random order.
    pub fn shuffled_starts(&self, seed: u64) -> Vec<usize> {
        let mut order = self.starts.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        order
    }

    pub fn window(&self, start: usize) -> Result<(Tensor, Tensor)> {
        let mid = start + self.seq_len;
        Ok((
            self.source.slice_first(start, mid)?,
            self.source.slice_first(mid, mid + self.pred_len)?,
        ))
    }

    /// Windows in sequential order.
    pub fn iter(&self) -> impl Iterator<Item = (Tensor, Tensor)> + '_ {
        self.starts.iter().map(|&s| self.window(s).expect("start rows are in range"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
}

pub fn metrics(pred: &Tensor, target: &Tensor) -> Result<Metrics> {
    let mut acc = MetricAccumulator::default();
    acc.add(pred, target)?;
    acc.finish()
}

/// Means of squared and absolute error over every entry of every window added.
#[derive(Debug, Clone, Default)]
pub struct MetricAccumulator {
    sq: f64,
    abs: f64,
    count: usize,
}

impl MetricAccumulator {
    pub fn add(&mut self, pred: &Tensor, target: &Tensor) -> Result<()> {
        if pred.shape() != target.shape() {
            return Err(Error::dim("metrics", pred.shape(), target.shape()));
        }
        for (p, t) in pred.data().iter().zip(target.data()) {
            let d = p - t;
            self.sq += d * d;
            self.abs += d.abs();
        }
        self.count += pred.len();
        Ok(())
    }

    pub fn finish(&self) -> Result<Metrics> {
        if self.count == 0 {
            return Err(Error::Data("no entries to score".into()));
        }
        Ok(Metrics {
            mse: self.sq / self.count as f64,
            mae: self.abs / self.count as f64,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_vars: usize,
    pub len: usize,
    pub lag: usize,
    pub coupling: f64,
    pub noise: f64,
    pub seed: u64,
}

/// Ground truth recorded next to a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthMeta {
    #[serde(flatten)]
    pub spec: SynthSpec,
    /// Delay of each channel behind channel 0, in steps.
    pub channel_lags: Vec<usize>,
}

struct Sinusoids {
    terms: Vec<(f64, f64, f64)>,
}

impl Sinusoids {
    fn draw<R: Rng>(rng: &mut R) -> Self {
        let terms = (0..3)
            .map(|_| {
                let amp = rng.random_range(0.5..1.5);
                let period: f64 = rng.random_range(12.0..96.0);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                (amp, std::f64::consts::TAU / period, phase)
            })
            .collect();
        Sinusoids { terms }
    }

    fn at(&self, t: f64) -> f64 {
        self.terms.iter().map(|(a, w, p)| a * (w * t + p).sin()).sum()
    }
}

/// Channel 0 is a sum of three random-phase sinusoids plus Gaussian noise;
/// channel `j` repeats it, noise included, with delay `j * lag`, scaled by
/// `coupling`, plus an independent smooth component of weight
/// `sqrt(1 - coupling^2)` and its own Gaussian noise.
pub fn synth_lagged(spec: &SynthSpec) -> Result<(RawSeries, SynthMeta)> {
    let SynthSpec { n_vars, len, lag, coupling, noise, seed } = *spec;
    if n_vars == 0 || len == 0 {
        return Err(Error::Config("synthetic series needs n_vars and len > 0".into()));
    }
    if lag * (n_vars - 1) >= len {
        return Err(Error::Config(format!(
            "lag {lag} x {} shifted channels does not fit in {len} steps",
            n_vars - 1
        )));
    }
    if !(0.0..=1.0).contains(&coupling) || !(noise >= 0.0) {
        return Err(Error::Config("coupling must lie in [0, 1] and noise must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = Normal::new(0.0, noise).map_err(|e| Error::Config(e.to_string()))?;
    let driver = Sinusoids::draw(&mut rng);
    let own: Vec<Sinusoids> = (1..n_vars).map(|_| Sinusoids::draw(&mut rng)).collect();
    let rest = (1.0 - coupling * coupling).max(0.0).sqrt();

    let lead = lag * (n_vars - 1);
    let base: Vec<f64> = (0..len + lead)
        .map(|t| driver.at(t as f64 - lead as f64) + gauss.sample(&mut rng))
        .collect();

    let mut values = Vec::with_capacity(len * n_vars);
    for t in 0..len {
        values.push(base[t + lead]);
        for (j, ind) in own.iter().enumerate() {
            let shifted = base[t + lead - (j + 1) * lag];
            values.push(coupling * shifted + rest * ind.at(t as f64) + gauss.sample(&mut rng));
        }
    }
    let raw = RawSeries {
        values: Tensor::new([len, n_vars], values)?,
        columns: (0..n_vars).map(|j| format!("ch{j}")).collect(),
        timestamps: None,
        dropped_rows: 0,
    };
    let meta = SynthMeta {
        spec: *spec,
        channel_lags: (0..n_vars).map(|j| j * lag).collect(),
    };
    Ok((raw, meta))
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    let denom = sxx.sqrt() * syy.sqrt();
    (denom > 0.0).then(|| sxy / denom)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PearsonMap {
    /// `N x N`, entry `(i, j)` correlates columns `i` and `j`.
    pub map: Tensor,
    /// Columns with zero variance, whose entries are reported as 0.
    pub constant_columns: Vec<usize>,
}

/// Column-pair Pearson correlations of a `timesteps x N` matrix.
pub fn pearson_map(values: &Tensor) -> Result<PearsonMap> {
    let (_, n) = values.dims2()?;
    let t = values.transpose()?;
    let mut map = vec![0.0; n * n];
    let mut constant = BTreeSet::new();
    for i in 0..n {
        for j in i..n {
            match pearson(t.row(i), t.row(j)) {
                Some(r) => {
                    map[i * n + j] = r;
                    map[j * n + i] = r;
                }
                None => {
                    if pearson(t.row(i), t.row(i)).is_none() {
                        constant.insert(i);
                    }
                    if pearson(t.row(j), t.row(j)).is_none() {
                        constant.insert(j);
                    }
                }
            }
        }
    }
    Ok(PearsonMap {
        map: Tensor::new([n, n], map)?,
        constant_columns: constant.into_iter().collect(),
    })
}
