//! Seeded regime-switching generator for synthetic price panels.
//!
//! Each regime is an `S x S` sector-correlation template `G`: `G[a][b]` is
//! the target correlation between stocks of sectors `a` and `b`, and
//! `G[a][a]` the target correlation between two distinct stocks of sector
//! `a`. Returns follow a one-factor-per-sector construction,
//!
//! ```text
//! r_k(t) = f_{sector(k)}(t) + sqrt(1 - G[a][a]) eps_k(t),   Cov(f) = G,
//! ```
//!
//! which reproduces `G` exactly as the expected sector-averaged correlation
//! matrix (diagonal included, since the sector average excludes
//! self-pairs). Prices are exponentiated cumulative returns, so they stay
//! positive; the generator is deterministic given the seed.

use chrono::NaiveDate;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correlation::StatePoint;
use crate::ingest::{PricePanel, SectorMap};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("{0}")]
    Invalid(String),
    #[error("regime {0} has a non-positive-semidefinite sector template")]
    NonPsdTemplate(String),
}

/// One regime: a named sector-correlation template.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegimeSpec {
    pub name: String,
    /// Row-major `S x S` symmetric matrix; diagonal entries in `[0, 1)`.
    pub template: Vec<f64>,
}

/// Full scenario description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub sectors: Vec<String>,
    pub stocks_per_sector: usize,
    pub regimes: Vec<RegimeSpec>,
    /// `(regime index, number of return days)` segments.
    pub schedule: Vec<(usize, usize)>,
    /// Scale of daily log-returns.
    pub daily_vol: f64,
    /// ISO date of the first price row.
    pub start_date: String,
    pub seed: u64,
}

/// Generated scenario: a price panel, its sector map, and the ground-truth
/// regime of every return day.
#[derive(Debug)]
pub struct Scenario {
    pub prices: PricePanel,
    pub sectors: SectorMap,
    /// Regime index per return day (one fewer than price rows).
    pub truth: Vec<usize>,
}

/// Lower-triangular Cholesky factor of a small symmetric matrix.
fn cholesky(matrix: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = matrix[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 1e-12 {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Some(l)
}

fn validate_template(regime: &RegimeSpec, s: usize) -> Result<Vec<f64>, SynthError> {
    if regime.template.len() != s * s {
        return Err(SynthError::Invalid(format!(
            "regime {} template has {} entries, expected {}",
            regime.name,
            regime.template.len(),
            s * s
        )));
    }
    for a in 0..s {
        for b in 0..s {
            let v = regime.template[a * s + b];
            if (regime.template[b * s + a] - v).abs() > 1e-12 {
                return Err(SynthError::Invalid(format!(
                    "regime {} template is not symmetric",
                    regime.name
                )));
            }
            if a == b && !(0.0..1.0).contains(&v) {
                return Err(SynthError::Invalid(format!(
                    "regime {} within-sector correlation {v} must be in [0, 1)",
                    regime.name
                )));
            }
        }
    }
    cholesky(&regime.template, s).ok_or_else(|| SynthError::NonPsdTemplate(regime.name.clone()))
}

/// Expected embedded state point of a regime (the template itself read off
/// in embedding order). This is the scenario's ground-truth regime center.
pub fn template_center(spec: &ScenarioSpec, regime: usize) -> Result<StatePoint, SynthError> {
    let s = spec.sectors.len();
    let r = spec
        .regimes
        .get(regime)
        .ok_or_else(|| SynthError::Invalid(format!("no regime with index {regime}")))?;
    let mut coords = Vec::with_capacity(s * (s + 1) / 2);
    for a in 0..s {
        for b in a..s {
            coords.push(r.template[a * s + b]);
        }
    }
    Ok(StatePoint::new(coords))
}

/// Generate a scenario.
pub fn generate(spec: &ScenarioSpec) -> Result<Scenario, SynthError> {
    let s = spec.sectors.len();
    if s == 0 || spec.stocks_per_sector < 2 {
        return Err(SynthError::Invalid(
            "need at least one sector and two stocks per sector".into(),
        ));
    }
    if spec.regimes.is_empty() || spec.schedule.is_empty() {
        return Err(SynthError::Invalid("empty regime list or schedule".into()));
    }
    if spec.daily_vol.is_nan() || spec.daily_vol <= 0.0 {
        return Err(SynthError::Invalid("daily_vol must be positive".into()));
    }
    let start_date = NaiveDate::parse_from_str(&spec.start_date, "%Y-%m-%d")
        .map_err(|e| SynthError::Invalid(format!("bad start date {}: {e}", spec.start_date)))?;

    let mut factors = Vec::with_capacity(spec.regimes.len());
    for regime in &spec.regimes {
        factors.push(validate_template(regime, s)?);
    }
    let mut truth = Vec::new();
    for &(regime, days) in &spec.schedule {
        if regime >= spec.regimes.len() {
            return Err(SynthError::Invalid(format!(
                "schedule references regime {regime}, but only {} exist",
                spec.regimes.len()
            )));
        }
        truth.extend(std::iter::repeat_n(regime, days));
    }
    if truth.is_empty() {
        return Err(SynthError::Invalid("schedule has zero days".into()));
    }

    let k = s * spec.stocks_per_sector;
    // Per-regime idiosyncratic scale: total variance is normalized to 1.
    let idio_of = |regime: usize, a: usize| -> f64 {
        (1.0 - spec.regimes[regime].template[a * s + a]).sqrt()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_days = truth.len() + 1;
    let mut log_prices = vec![0.0f64; k];
    let mut values = Vec::with_capacity(n_days * k);
    values.extend(log_prices.iter().map(|&lp: &f64| 100.0 * lp.exp()));
    for &regime in &truth {
        let l = &factors[regime];
        let z: Vec<f64> = (0..s).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut f = vec![0.0; s];
        for a in 0..s {
            for b in 0..=a {
                f[a] += l[a * s + b] * z[b];
            }
        }
        for (idx, lp) in log_prices.iter_mut().enumerate() {
            let sector = idx / spec.stocks_per_sector;
            let eps: f64 = rng.sample(StandardNormal);
            let r = f[sector] + idio_of(regime, sector) * eps;
            *lp += spec.daily_vol * r;
        }
        values.extend(log_prices.iter().map(|&lp: &f64| 100.0 * lp.exp()));
    }

    let dates: Vec<NaiveDate> = (0..n_days)
        .map(|i| start_date + chrono::Days::new(i as u64))
        .collect();
    let tickers: Vec<String> = (0..k)
        .map(|idx| {
            format!(
                "{}{:02}",
                spec.sectors[idx / spec.stocks_per_sector],
                idx % spec.stocks_per_sector
            )
        })
        .collect();
    let mut assignments = std::collections::BTreeMap::new();
    for (idx, t) in tickers.iter().enumerate() {
        assignments.insert(
            t.clone(),
            spec.sectors[idx / spec.stocks_per_sector].clone(),
        );
    }
    let panel = PricePanel::new(dates, tickers, values)
        .map_err(|e| SynthError::Invalid(format!("generated panel is invalid: {e}")))?;
    let sectors = SectorMap::new(assignments)
        .map_err(|e| SynthError::Invalid(format!("generated sector map is invalid: {e}")))?;
    Ok(Scenario {
        prices: panel,
        sectors,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simple_spec() -> ScenarioSpec {
        ScenarioSpec {
            sectors: vec!["FIN".into(), "TEC".into()],
            stocks_per_sector: 5,
            regimes: vec![
                RegimeSpec {
                    name: "calm".into(),
                    template: vec![0.2, 0.05, 0.05, 0.2],
                },
                RegimeSpec {
                    name: "crisis".into(),
                    template: vec![0.7, 0.6, 0.6, 0.7],
                },
            ],
            schedule: vec![(0, 100), (1, 150), (0, 50)],
            daily_vol: 0.01,
            start_date: "1992-01-02".into(),
            seed: 7,
        }
    }

    #[test]
    fn truth_matches_schedule_exactly() {
        let spec = simple_spec();
        let scenario = generate(&spec).unwrap();
        assert_eq!(scenario.truth.len(), 300);
        assert!(scenario.truth[..100].iter().all(|&r| r == 0));
        assert!(scenario.truth[100..250].iter().all(|&r| r == 1));
        assert!(scenario.truth[250..].iter().all(|&r| r == 0));
        assert_eq!(scenario.prices.len(), 301);
        assert_eq!(scenario.prices.n_tickers(), 10);
        for t in 0..scenario.prices.len() {
            for k in 0..scenario.prices.n_tickers() {
                assert!(scenario.prices.value(t, k) > 0.0);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = simple_spec();
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        for t in 0..a.prices.len() {
            for k in 0..a.prices.n_tickers() {
                assert_eq!(
                    a.prices.value(t, k).to_bits(),
                    b.prices.value(t, k).to_bits()
                );
            }
        }
    }

    #[test]
    fn non_psd_template_is_rejected() {
        let mut spec = simple_spec();
        // Correlation 0.9 between sectors with only 0.2 within: not PSD.
        spec.regimes[0].template = vec![0.2, 0.9, 0.9, 0.2];
        match generate(&spec) {
            Err(SynthError::NonPsdTemplate(name)) => assert_eq!(name, "calm"),
            other => panic!("expected non-PSD error, got {other:?}"),
        }
    }

    #[test]
    fn realized_correlations_match_template() {
        // Long single-regime run: realized stock correlations approach the
        // template blocks.
        let spec = ScenarioSpec {
            sectors: vec!["A".into(), "B".into()],
            stocks_per_sector: 4,
            regimes: vec![RegimeSpec {
                name: "only".into(),
                template: vec![0.5, 0.2, 0.2, 0.35],
            }],
            schedule: vec![(0, 20_000)],
            daily_vol: 0.01,
            start_date: "1992-01-02".into(),
            seed: 3,
        };
        let scenario = generate(&spec).unwrap();
        let returns = crate::ingest::compute_returns(&scenario.prices, 1).unwrap();
        let k = returns.n_tickers();
        let cols: Vec<Vec<f64>> = (0..k).map(|j| returns.column(j)).collect();
        let corr = |a: &[f64], b: &[f64]| -> f64 {
            let n = a.len() as f64;
            let ma = a.iter().sum::<f64>() / n;
            let mb = b.iter().sum::<f64>() / n;
            let mut num = 0.0;
            let mut va = 0.0;
            let mut vb = 0.0;
            for i in 0..a.len() {
                let da = a[i] - ma;
                let db = b[i] - mb;
                num += da * db;
                va += da * da;
                vb += db * db;
            }
            num / (va.sqrt() * vb.sqrt())
        };
        // Within sector A (stocks 0..4): 0.5; within B (4..8): 0.35; cross 0.2.
        assert!((corr(&cols[0], &cols[1]) - 0.5).abs() < 0.03);
        assert!((corr(&cols[4], &cols[5]) - 0.35).abs() < 0.03);
        assert!((corr(&cols[0], &cols[5]) - 0.2).abs() < 0.03);
    }

    #[test]
    fn template_center_is_embedding_of_template() {
        let spec = simple_spec();
        let c = template_center(&spec, 1).unwrap();
        assert_eq!(c.coords, vec![0.7, 0.6, 0.7]);
    }
}
