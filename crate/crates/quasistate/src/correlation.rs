//! Rolling correlation matrices, sector averaging and the `R^d` embedding.
//!
//! A `K x K` Pearson correlation matrix is compressed to an `S x S` sector
//! average and identified with a point in `R^d`, `d = S(S+1)/2`, by reading
//! off the upper triangle (diagonal included) in row-major order with unit
//! weights. All distances between states are plain Euclidean distances in
//! that embedded space.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{ReturnPanel, SectorMap};

#[derive(Debug, Error)]
pub enum CorrelationError {
    #[error("{0}")]
    Invalid(String),
    #[error("degenerate variance in window starting at {window_start} for ticker {ticker}")]
    DegenerateVariance { window_start: usize, ticker: String },
    #[error("sector configuration error: {0}")]
    Configuration(String),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("empty interval")]
    EmptyInterval,
}

/// Half-open index range `[start, end)` into a time series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: usize,
    pub end: usize,
}

impl TimeWindow {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Pearson correlation matrix of one rolling window.
#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    pub tickers: Arc<Vec<String>>,
    /// Row-major `K x K`, symmetric, unit diagonal.
    pub values: Vec<f64>,
    pub window: TimeWindow,
}

impl CorrelationMatrix {
    pub fn dim(&self) -> usize {
        self.tickers.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.dim() + j]
    }
}

/// Sector-averaged correlation matrix. Symmetric, but the diagonal is not
/// trivial: entry `(a, a)` is the mean correlation over distinct pairs
/// within sector `a`, so it is generally below one.
#[derive(Debug, Clone)]
pub struct SectorMatrix {
    pub sectors: Vec<String>,
    /// Row-major `S x S`.
    pub values: Vec<f64>,
    pub window: TimeWindow,
}

impl SectorMatrix {
    pub fn dim(&self) -> usize {
        self.sectors.len()
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.dim() + b]
    }
}

/// A sector matrix embedded as a point in `R^d`, `d = S(S+1)/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePoint {
    pub coords: Vec<f64>,
    pub window: Option<TimeWindow>,
}

impl StatePoint {
    pub fn new(coords: Vec<f64>) -> Self {
        Self {
            coords,
            window: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// Mean state over an interval of the state sequence.
#[derive(Debug, Clone)]
pub struct IntervalStats {
    pub interval: TimeWindow,
    pub len: usize,
    pub mean: StatePoint,
}

/// Rolling Pearson correlation matrices over windows of length `window`,
/// advanced by `step`.
///
/// Pearson coefficients use the population (`1/T`) normalization. Window
/// positions are independent, so they are evaluated in parallel; each window
/// is summed in a fixed order and the result is bitwise identical to the
/// sequential evaluation.
pub fn rolling_correlations(
    panel: &ReturnPanel,
    window: usize,
    step: usize,
) -> Result<Vec<CorrelationMatrix>, CorrelationError> {
    if panel.normalized.is_none() {
        return Err(CorrelationError::Invalid(
            "panel must be locally normalized before correlation".into(),
        ));
    }
    if window < 2 {
        return Err(CorrelationError::Invalid(format!(
            "correlation window must be at least 2, got {window}"
        )));
    }
    if step == 0 {
        return Err(CorrelationError::Invalid("step must be at least 1".into()));
    }
    if window > panel.len() {
        return Err(CorrelationError::Invalid(format!(
            "correlation window {window} exceeds panel length {}",
            panel.len()
        )));
    }
    let tickers = Arc::new(panel.tickers.clone());
    let starts: Vec<usize> = (0..=(panel.len() - window)).step_by(step).collect();
    starts
        .par_iter()
        .map(|&start| correlation_window(panel, start, window, &tickers))
        .collect()
}

fn correlation_window(
    panel: &ReturnPanel,
    start: usize,
    window: usize,
    tickers: &Arc<Vec<String>>,
) -> Result<CorrelationMatrix, CorrelationError> {
    let k = panel.n_tickers();
    let t = window as f64;
    // Per-column z-scores over the window (population std).
    let mut z = vec![0.0; window * k];
    for j in 0..k {
        let mut sum = 0.0;
        for i in 0..window {
            sum += panel.value(start + i, j);
        }
        let mean = sum / t;
        let mut ss = 0.0;
        let mut max_abs: f64 = 0.0;
        for i in 0..window {
            let v = panel.value(start + i, j);
            let d = v - mean;
            ss += d * d;
            max_abs = max_abs.max(v.abs());
        }
        let sd = (ss / t).sqrt();
        if sd <= 1e-12 * max_abs {
            return Err(CorrelationError::DegenerateVariance {
                window_start: start,
                ticker: panel.tickers[j].clone(),
            });
        }
        for i in 0..window {
            z[i * k + j] = (panel.value(start + i, j) - mean) / sd;
        }
    }
    let mut values = vec![0.0; k * k];
    for a in 0..k {
        values[a * k + a] = 1.0;
        for b in (a + 1)..k {
            let mut dot = 0.0;
            for i in 0..window {
                dot += z[i * k + a] * z[i * k + b];
            }
            let c = (dot / t).clamp(-1.0, 1.0);
            values[a * k + b] = c;
            values[b * k + a] = c;
        }
    }
    Ok(CorrelationMatrix {
        tickers: tickers.clone(),
        values,
        window: TimeWindow::new(start, start + window),
    })
}

/// Average stock correlations within and between sectors, producing an
/// `S x S` matrix. Diagonal entries average distinct pairs only; the trivial
/// self-correlations are excluded.
pub fn sector_average(
    matrix: &CorrelationMatrix,
    map: &SectorMap,
) -> Result<SectorMatrix, CorrelationError> {
    let k = matrix.dim();
    // Sector order: sorted distinct sectors of the tickers actually present.
    let mut sectors: Vec<String> = Vec::new();
    for t in matrix.tickers.iter() {
        let s = map.sector_of(t).ok_or_else(|| {
            CorrelationError::Configuration(format!("ticker {t} has no sector assignment"))
        })?;
        if !sectors.iter().any(|x| x == s) {
            sectors.push(s.to_string());
        }
    }
    sectors.sort();
    let mut ticker_sector = vec![0usize; k];
    for (i, t) in matrix.tickers.iter().enumerate() {
        let s = map.sector_of(t).unwrap();
        ticker_sector[i] = sectors.iter().position(|x| x == s).unwrap();
    }
    let s_count = sectors.len();
    let mut counts = vec![0usize; s_count];
    for &s in &ticker_sector {
        counts[s] += 1;
    }
    for (a, &c) in counts.iter().enumerate() {
        if c < 2 {
            return Err(CorrelationError::Configuration(format!(
                "sector {} has {} member(s); at least 2 are required for the diagonal average",
                sectors[a], c
            )));
        }
    }

    let mut sums = vec![0.0; s_count * s_count];
    let mut pair_counts = vec![0usize; s_count * s_count];
    for i in 0..k {
        for j in (i + 1)..k {
            let (a, b) = (ticker_sector[i], ticker_sector[j]);
            let v = matrix.get(i, j);
            sums[a * s_count + b] += v;
            pair_counts[a * s_count + b] += 1;
            if a != b {
                sums[b * s_count + a] += v;
                pair_counts[b * s_count + a] += 1;
            }
        }
    }
    let mut values = vec![0.0; s_count * s_count];
    for a in 0..s_count {
        for b in 0..s_count {
            values[a * s_count + b] = sums[a * s_count + b] / pair_counts[a * s_count + b] as f64;
        }
    }
    // Symmetrize exactly: the two off-diagonal accumulations used the same
    // additions in the same order, but make the invariant explicit.
    for a in 0..s_count {
        for b in (a + 1)..s_count {
            let v = values[a * s_count + b];
            values[b * s_count + a] = v;
        }
    }
    Ok(SectorMatrix {
        sectors,
        values,
        window: matrix.window,
    })
}

/// Embed a sector matrix as a point in `R^d` by reading the upper triangle
/// (diagonal included) in row-major order.
pub fn embed(matrix: &SectorMatrix) -> StatePoint {
    let s = matrix.dim();
    let mut coords = Vec::with_capacity(s * (s + 1) / 2);
    for a in 0..s {
        for b in a..s {
            coords.push(matrix.get(a, b));
        }
    }
    StatePoint {
        coords,
        window: Some(matrix.window),
    }
}

/// Invert [`embed`]: rebuild the symmetric `S x S` matrix from the packed
/// upper triangle. Returns the dimension and the row-major values.
pub fn unembed(point: &StatePoint) -> Result<(usize, Vec<f64>), CorrelationError> {
    let d = point.dim();
    // d = s(s+1)/2  =>  s = (sqrt(8d+1) - 1) / 2
    let s = ((((8 * d + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    if s * (s + 1) / 2 != d {
        return Err(CorrelationError::Invalid(format!(
            "coordinate count {d} is not a triangular number"
        )));
    }
    let mut values = vec![0.0; s * s];
    let mut idx = 0;
    for a in 0..s {
        for b in a..s {
            values[a * s + b] = point.coords[idx];
            values[b * s + a] = point.coords[idx];
            idx += 1;
        }
    }
    Ok((s, values))
}

/// Euclidean distance between two embedded states.
pub fn distance(a: &StatePoint, b: &StatePoint) -> Result<f64, CorrelationError> {
    if a.dim() != b.dim() {
        return Err(CorrelationError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(euclidean(&a.coords, &b.coords))
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        s += d * d;
    }
    s.sqrt()
}

/// Coordinate-wise arithmetic mean of the states in `interval`, which
/// minimizes the sum of squared distances over that interval.
pub fn interval_mean(
    points: &[StatePoint],
    interval: TimeWindow,
) -> Result<IntervalStats, CorrelationError> {
    if interval.is_empty() {
        return Err(CorrelationError::EmptyInterval);
    }
    if interval.end > points.len() {
        return Err(CorrelationError::Invalid(format!(
            "interval end {} exceeds sequence length {}",
            interval.end,
            points.len()
        )));
    }
    let d = points[interval.start].dim();
    let mut coords = vec![0.0; d];
    for p in &points[interval.start..interval.end] {
        if p.dim() != d {
            return Err(CorrelationError::DimensionMismatch {
                left: d,
                right: p.dim(),
            });
        }
        for (c, v) in coords.iter_mut().zip(&p.coords) {
            *c += v;
        }
    }
    let n = interval.len() as f64;
    for c in coords.iter_mut() {
        *c /= n;
    }
    Ok(IntervalStats {
        interval,
        len: interval.len(),
        mean: StatePoint {
            coords,
            window: None,
        },
    })
}
