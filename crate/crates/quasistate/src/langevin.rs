//! Nonparametric estimation of the deterministic dynamics of a scalar time
//! series.
//!
//! A series `X(t)` is treated as a realization of the stochastic dynamics
//! `dX = D1(X) dt + sqrt(D2(X)) G(t)` with Gaussian forcing normalized to
//! `<G(t) G(t')> = 2 delta(t - t')`. The drift `D1` and diffusion `D2` are
//! read off the conditional moments of the increments,
//!
//! ```text
//! M_n(tau, x) = < (X(t + tau) - X(t))^n | X(t) = x >,
//! D_n(x)      = M_n(tau, x) / (n! tau)   for small tau,
//! ```
//!
//! estimated with an Epanechnikov-kernel regression on a fixed grid. The
//! potential `Phi(x) = -Int D1(x) dx` makes the dynamics readable: local
//! minima of `Phi` are quasi-stable fixed points around which the series
//! oscillates, local maxima are unstable ones. Sliding-window sweeps track
//! how the potential landscape deforms over time.
//!
//! Conventions pinned here (the method itself leaves them open):
//!
//! * grid: evenly spaced points spanning the 1st..99th percentile of the
//!   window's data;
//! * bandwidth: `h = 1.06 sigma L^(-1/5)` unless fixed explicitly;
//! * the `tau -> 0` limit defaults to evaluation at `tau = 1`, with an
//!   optional origin-constrained least-squares extrapolation over
//!   `tau = 1, 2, 3`;
//! * grid points supported by fewer than `count_min` effective samples are
//!   masked rather than extrapolated, and failed windows are flagged rather
//!   than interpolated.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::correlation::TimeWindow;

#[derive(Debug, Error)]
pub enum LangevinError {
    #[error("{0}")]
    Invalid(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("estimation failed: {0}")]
    Estimation(String),
}

/// Conditional moments of one order on a grid, per lag.
#[derive(Debug, Clone)]
pub struct MomentGrid {
    pub order: u32,
    pub grid: Vec<f64>,
    pub taus: Vec<usize>,
    /// `moments[tau_index][grid_index]`; masked points are NaN.
    pub moments: Vec<Vec<f64>>,
    /// Effective sample weight per `(tau_index, grid_index)`.
    pub counts: Vec<Vec<f64>>,
}

/// Drift and diffusion estimates on a grid.
#[derive(Debug, Clone)]
pub struct DriftEstimate {
    pub grid: Vec<f64>,
    /// Drift, units 1/time step.
    pub d1: Vec<f64>,
    /// Diffusion, units 1/time step.
    pub d2: Vec<f64>,
    /// Effective sample weight per grid point (minimum over used lags).
    pub counts: Vec<f64>,
    /// Grid points with enough kernel support.
    pub valid: Vec<bool>,
    pub window: TimeWindow,
}

/// A detected potential minimum.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: f64,
    pub phi: f64,
    pub prominence: f64,
}

/// Integrated potential over the largest contiguous valid grid block.
#[derive(Debug, Clone)]
pub struct PotentialCurve {
    pub grid: Vec<f64>,
    /// `Phi(grid[0]) = 0` by convention.
    pub phi: Vec<f64>,
    pub minima: Vec<Minimum>,
    pub window: TimeWindow,
    /// Valid grid points outside the used block.
    pub discarded_points: usize,
}

/// Lag handling for the `tau -> 0` limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TauPolicy {
    /// Evaluate at `tau = 1` directly (finest available lag).
    #[default]
    Tau1,
    /// Weighted least-squares line through the origin over `tau = 1, 2, 3`.
    Extrapolate,
}

/// Bandwidth selection for the kernel regression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// `1.06 sigma L^(-1/5)` from the window's own sample.
    Silverman,
    Fixed(f64),
}

/// Knobs of the window-level estimation.
#[derive(Debug, Clone)]
pub struct EstimationConfig {
    pub grid_size: usize,
    pub bandwidth: Bandwidth,
    pub tau_policy: TauPolicy,
    /// Minimum effective sample weight per grid point.
    pub count_min: f64,
    /// Minima prominence threshold as a fraction of the curve's range.
    pub prominence_frac: f64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            grid_size: 101,
            bandwidth: Bandwidth::Silverman,
            tau_policy: TauPolicy::Tau1,
            count_min: 10.0,
            prominence_frac: 0.05,
        }
    }
}

/// Ornstein-Uhlenbeck parameters for the Euler-Maruyama oracle.
///
/// Increments use variance `2 D dt`, matching the `<G G'> = 2 delta`
/// normalization, so the estimated diffusion recovers `D` itself and the
/// stationary variance is `D / relaxation`.
#[derive(Debug, Clone)]
pub struct OuParams {
    /// Mean-reversion rate (1/time).
    pub relaxation: f64,
    /// Reversion level.
    pub level: f64,
    /// Noise amplitude `D`.
    pub noise: f64,
    pub initial: f64,
    pub dt: f64,
    /// Total number of samples produced (including the initial value).
    pub steps: usize,
    pub seed: u64,
}

/// Lowest quantile used for the automatic grid.
const GRID_Q_LO: f64 = 0.01;
const GRID_Q_HI: f64 = 0.99;

/// Linear-interpolation quantile of unsorted data.
pub fn quantile(data: &[f64], q: f64) -> f64 {
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn sample_std(data: &[f64]) -> f64 {
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let ss: f64 = data.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / n).sqrt()
}

/// `1.06 sigma L^(-1/5)` reference bandwidth.
pub fn silverman_bandwidth(data: &[f64]) -> f64 {
    1.06 * sample_std(data) * (data.len() as f64).powf(-0.2)
}

/// Evenly spaced grid spanning the 1st..99th percentile of the data.
pub fn quantile_grid(data: &[f64], size: usize) -> Result<Vec<f64>, LangevinError> {
    if size < 2 {
        return Err(LangevinError::Invalid("grid needs at least 2 points".into()));
    }
    let lo = quantile(data, GRID_Q_LO);
    let hi = quantile(data, GRID_Q_HI);
    if hi <= lo || hi.is_nan() || lo.is_nan() {
        return Err(LangevinError::Estimation(format!(
            "degenerate data range [{lo}, {hi}]"
        )));
    }
    let step = (hi - lo) / (size - 1) as f64;
    Ok((0..size).map(|i| lo + step * i as f64).collect())
}

/// Kernel-regressed conditional moments `M_n(tau, x)` of the increments,
/// with the Epanechnikov kernel `K_h(u) = (3 / 4h)(1 - (u/h)^2)` on
/// `|u| < h`. The effective weight reported per grid point is
/// `h * sum_t K_h(X(t) - x)`, so one sample exactly at `x` contributes 3/4.
///
/// Grid points with zero kernel mass are masked (NaN), not errors; the
/// call fails only if every point of every lag is masked.
pub fn conditional_moments(
    series: &[f64],
    order: u32,
    taus: &[usize],
    grid: &[f64],
    h: f64,
) -> Result<MomentGrid, LangevinError> {
    if !(order == 1 || order == 2) {
        return Err(LangevinError::Invalid(format!(
            "moment order must be 1 or 2, got {order}"
        )));
    }
    if !h.is_finite() || h <= 0.0 {
        return Err(LangevinError::Invalid(format!("bandwidth must be positive, got {h}")));
    }
    if taus.is_empty() || grid.is_empty() {
        return Err(LangevinError::Invalid("empty lag list or grid".into()));
    }
    let max_tau = *taus.iter().max().unwrap();
    if taus.contains(&0) {
        return Err(LangevinError::Invalid("lags must be positive".into()));
    }
    if series.len() <= max_tau {
        return Err(LangevinError::InsufficientData(format!(
            "series length {} does not exceed the largest lag {max_tau}",
            series.len()
        )));
    }

    let mut moments = Vec::with_capacity(taus.len());
    let mut counts = Vec::with_capacity(taus.len());
    let mut any_supported = false;
    for &tau in taus {
        // Pairs (X(t), increment), ordered by X with the time index as a
        // tiebreak so the summation order is deterministic.
        let mut pairs: Vec<(f64, f64)> = (0..series.len() - tau)
            .map(|t| (series[t], series[t + tau] - series[t]))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();

        let mut m_row = Vec::with_capacity(grid.len());
        let mut c_row = Vec::with_capacity(grid.len());
        for &x0 in grid {
            let lo = xs.partition_point(|&v| v <= x0 - h);
            let hi = xs.partition_point(|&v| v < x0 + h);
            let mut wsum = 0.0;
            let mut msum = 0.0;
            for &(x, dx) in &pairs[lo..hi] {
                let u = (x - x0) / h;
                let w = 0.75 / h * (1.0 - u * u);
                if w <= 0.0 {
                    continue;
                }
                wsum += w;
                let inc = if order == 1 { dx } else { dx * dx };
                msum += w * inc;
            }
            if wsum > 0.0 {
                m_row.push(msum / wsum);
                c_row.push(wsum * h);
                any_supported = true;
            } else {
                m_row.push(f64::NAN);
                c_row.push(0.0);
            }
        }
        moments.push(m_row);
        counts.push(c_row);
    }
    if !any_supported {
        return Err(LangevinError::Estimation(
            "no grid point has kernel support".into(),
        ));
    }
    Ok(MomentGrid {
        order,
        grid: grid.to_vec(),
        taus: taus.to_vec(),
        moments,
        counts,
    })
}

/// Estimate drift and diffusion on a grid.
///
/// With [`TauPolicy::Tau1`], `D_n(x) = M_n(1, x) / n!`. With
/// [`TauPolicy::Extrapolate`], a count-weighted least-squares line through
/// the origin is fitted to `M_n(tau, x)` over `tau = 1, 2, 3` and
/// `D_n = slope / n!`.
pub fn estimate_drift(
    series: &[f64],
    grid: &[f64],
    h: f64,
    policy: TauPolicy,
    count_min: f64,
    window: TimeWindow,
) -> Result<DriftEstimate, LangevinError> {
    if series.len() < 100 {
        return Err(LangevinError::InsufficientData(format!(
            "drift estimation needs at least 100 samples, got {}",
            series.len()
        )));
    }
    let (min, max) = series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if grid.iter().any(|&x| x < min || x > max) {
        return Err(LangevinError::Invalid(
            "grid extends beyond the observed data range".into(),
        ));
    }
    let taus: &[usize] = match policy {
        TauPolicy::Tau1 => &[1],
        TauPolicy::Extrapolate => &[1, 2, 3],
    };
    let m1 = conditional_moments(series, 1, taus, grid, h)?;
    let m2 = conditional_moments(series, 2, taus, grid, h)?;

    let n = grid.len();
    let mut d1 = vec![f64::NAN; n];
    let mut d2 = vec![f64::NAN; n];
    let mut counts = vec![0.0; n];
    let mut valid = vec![false; n];
    for i in 0..n {
        let c = (0..taus.len())
            .map(|k| m1.counts[k][i])
            .fold(f64::INFINITY, f64::min);
        counts[i] = c;
        if c < count_min {
            continue;
        }
        match policy {
            TauPolicy::Tau1 => {
                d1[i] = m1.moments[0][i];
                d2[i] = m2.moments[0][i] / 2.0;
            }
            TauPolicy::Extrapolate => {
                let slope = |m: &MomentGrid| {
                    let mut num = 0.0;
                    let mut den = 0.0;
                    for (k, &tau) in taus.iter().enumerate() {
                        let w = m.counts[k][i];
                        let v = m.moments[k][i];
                        if w > 0.0 && v.is_finite() {
                            num += w * tau as f64 * v;
                            den += w * (tau * tau) as f64;
                        }
                    }
                    num / den
                };
                d1[i] = slope(&m1);
                d2[i] = slope(&m2) / 2.0;
            }
        }
        valid[i] = d1[i].is_finite() && d2[i].is_finite();
    }
    if !valid.iter().any(|&v| v) {
        return Err(LangevinError::Estimation(
            "no grid point reaches the support threshold".into(),
        ));
    }
    Ok(DriftEstimate {
        grid: grid.to_vec(),
        d1,
        d2,
        counts,
        valid,
        window,
    })
}

/// Largest contiguous run of valid grid points; ties go to the earliest.
fn largest_valid_block(valid: &[bool]) -> (usize, usize) {
    let mut best = (0, 0);
    let mut i = 0;
    while i < valid.len() {
        if valid[i] {
            let start = i;
            while i < valid.len() && valid[i] {
                i += 1;
            }
            if i - start > best.1 - best.0 {
                best = (start, i);
            }
        } else {
            i += 1;
        }
    }
    best
}

/// Integrate the potential `Phi = -Int D1 dx` by the cumulative trapezoidal
/// rule over the largest contiguous valid block, anchored at
/// `Phi(block start) = 0`. Valid points outside that block are discarded and
/// counted in [`PotentialCurve::discarded_points`].
pub fn integrate_potential(drift: &DriftEstimate) -> Result<PotentialCurve, LangevinError> {
    let (start, end) = largest_valid_block(&drift.valid);
    if end - start < 5 {
        return Err(LangevinError::Estimation(format!(
            "largest valid block has {} grid points; at least 5 are required",
            end - start
        )));
    }
    let discarded = drift.valid.iter().filter(|&&v| v).count() - (end - start);
    let grid = drift.grid[start..end].to_vec();
    let d1 = &drift.d1[start..end];
    let mut phi = Vec::with_capacity(grid.len());
    phi.push(0.0);
    for i in 1..grid.len() {
        let dx = grid[i] - grid[i - 1];
        let step = -(d1[i - 1] + d1[i]) * 0.5 * dx;
        phi.push(phi[i - 1] + step);
    }
    Ok(PotentialCurve {
        grid,
        phi,
        minima: Vec::new(),
        window: drift.window,
        discarded_points: discarded,
    })
}

/// Detect interior local minima of a potential curve.
///
/// The curve is smoothed with a 3-point moving average (endpoints copied);
/// strict interior minima of the smoothed curve are kept when their
/// topographic prominence reaches `prominence_min`. Reported `phi` values
/// come from the unsmoothed curve; prominence is measured on the smoothed
/// one. Results are ordered by position.
pub fn find_minima(curve: &PotentialCurve, prominence_min: f64) -> Vec<Minimum> {
    let n = curve.phi.len();
    if n < 3 {
        return Vec::new();
    }
    let mut smooth = Vec::with_capacity(n);
    smooth.push(curve.phi[0]);
    for i in 1..n - 1 {
        smooth.push((curve.phi[i - 1] + curve.phi[i] + curve.phi[i + 1]) / 3.0);
    }
    smooth.push(curve.phi[n - 1]);

    let mut out = Vec::new();
    for i in 1..n - 1 {
        if !(smooth[i] < smooth[i - 1] && smooth[i] < smooth[i + 1]) {
            continue;
        }
        // Barrier on each side: highest smoothed value before reaching a
        // point lower than the minimum (or the curve edge).
        let mut left = f64::NEG_INFINITY;
        for j in (0..i).rev() {
            left = left.max(smooth[j]);
            if smooth[j] < smooth[i] {
                break;
            }
        }
        let mut right = f64::NEG_INFINITY;
        for item in smooth.iter().take(n).skip(i + 1) {
            right = right.max(*item);
            if *item < smooth[i] {
                break;
            }
        }
        let prominence = left.min(right) - smooth[i];
        if prominence >= prominence_min {
            out.push(Minimum {
                x: curve.grid[i],
                phi: curve.phi[i],
                prominence,
            });
        }
    }
    out
}

/// Outcome of one sliding-window position.
#[derive(Debug)]
pub struct WindowPotential {
    pub window: TimeWindow,
    pub result: Result<PotentialCurve, LangevinError>,
}

impl WindowPotential {
    pub fn curve(&self) -> Option<&PotentialCurve> {
        self.result.as_ref().ok()
    }
}

/// Sweep a window of `window` points shifted by `shift` across the series
/// and estimate one potential per position, giving
/// `floor((len - window) / shift) + 1` positions in total. Failed windows
/// are flagged and the sweep continues. Window positions are evaluated in
/// parallel; each position is pure and the output order is the sweep order.
pub fn sliding_potentials(
    series: &[f64],
    window: usize,
    shift: usize,
    config: &EstimationConfig,
) -> Result<Vec<WindowPotential>, LangevinError> {
    if window == 0 || shift == 0 {
        return Err(LangevinError::Invalid(
            "window and shift must be positive".into(),
        ));
    }
    if series.len() < window {
        return Err(LangevinError::InsufficientData(format!(
            "series length {} is below the window length {window}",
            series.len()
        )));
    }
    let count = (series.len() - window) / shift + 1;
    let starts: Vec<usize> = (0..count).map(|i| i * shift).collect();
    Ok(starts
        .par_iter()
        .map(|&start| {
            let tw = TimeWindow::new(start, start + window);
            WindowPotential {
                window: tw,
                result: window_potential(&series[start..start + window], tw, config),
            }
        })
        .collect())
}

/// Single-window estimation: automatic grid and bandwidth, drift, potential
/// and minima.
pub fn window_potential(
    slice: &[f64],
    window: TimeWindow,
    config: &EstimationConfig,
) -> Result<PotentialCurve, LangevinError> {
    let grid = quantile_grid(slice, config.grid_size)?;
    let h = match config.bandwidth {
        Bandwidth::Silverman => silverman_bandwidth(slice),
        Bandwidth::Fixed(h) => h,
    };
    if h.is_nan() || h <= 0.0 {
        return Err(LangevinError::Estimation(format!("bandwidth {h} is not positive")));
    }
    let drift = estimate_drift(slice, &grid, h, config.tau_policy, config.count_min, window)?;
    let mut curve = integrate_potential(&drift)?;
    let range = curve.phi.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
        - curve.phi.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let threshold = if range.is_finite() && range > 0.0 {
        config.prominence_frac * range
    } else {
        0.0
    };
    curve.minima = find_minima(&curve, threshold);
    Ok(curve)
}

/// Euler-Maruyama simulation of an Ornstein-Uhlenbeck process:
/// `X(t + dt) = X(t) - relaxation (X(t) - level) dt + sqrt(2 noise dt) xi`.
pub fn simulate_ou(params: &OuParams) -> Vec<f64> {
    assert!(params.relaxation > 0.0, "relaxation must be positive");
    assert!(params.noise >= 0.0, "noise amplitude must be nonnegative");
    assert!(params.dt > 0.0, "dt must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let amp = (2.0 * params.noise * params.dt).sqrt();
    let mut out = Vec::with_capacity(params.steps);
    let mut x = params.initial;
    out.push(x);
    for _ in 1..params.steps {
        let xi: f64 = rng.sample(StandardNormal);
        x = x - params.relaxation * (x - params.level) * params.dt + amp * xi;
        out.push(x);
    }
    out
}
