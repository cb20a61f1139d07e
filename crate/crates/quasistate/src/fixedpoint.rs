//! High-dimensional fixed points as constrained minimizers of the distance
//! sum.
//!
//! The interval mean minimizes the sum of *squared* distances to a
//! trajectory. The fixed points recovered here minimize the plain sum of
//! distances instead, restricted to a hypersphere of radius `X0` around a
//! reference point -- the radius comes from a potential minimum seen from
//! that reference, so the two analyses share a single source of truth.
//!
//! The solver is a projected Weiszfeld iteration. Each Weiszfeld step
//! minimizes the standard quadratic majorizer of the distance sum, and
//! because that majorizer is an isotropic paraboloid, its constrained
//! minimizer over the sphere is exactly the radial projection of the
//! unconstrained step. The iteration is therefore monotone in the
//! objective, which the tests assert step by step. Stationarity of the
//! converged point (gradient parallel to the constraint normal) is checked
//! after the fact, and a seeded multistart flags non-unique solutions
//! instead of assuming uniqueness.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::correlation::{euclidean, StatePoint};

#[derive(Debug, Error)]
pub enum FixedPointError {
    #[error("{0}")]
    Invalid(String),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("degenerate problem: {0}")]
    Degenerate(String),
}

/// Constrained distance-sum minimization: find the point on the sphere of
/// radius `radius` around `reference` that is closest (in summed distance)
/// to the trajectory points.
#[derive(Debug, Clone)]
pub struct FixedPointProblem<'a> {
    pub points: &'a [StatePoint],
    pub reference: &'a StatePoint,
    pub radius: f64,
    /// Relative step-size tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Seed for the multistart uniqueness check.
    pub seed: u64,
}

impl<'a> FixedPointProblem<'a> {
    pub fn new(points: &'a [StatePoint], reference: &'a StatePoint, radius: f64) -> Self {
        Self {
            points,
            reference,
            radius,
            tol: 1e-10,
            max_iter: 10_000,
            seed: 0,
        }
    }
}

/// Converged solution of a [`FixedPointProblem`].
#[derive(Debug, Clone)]
pub struct FixedPointResult {
    pub point: StatePoint,
    /// Sum of distances at the solution.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `| ||reference - point|| - radius |`.
    pub constraint_residual: f64,
    /// Relative size of the gradient component tangent to the sphere.
    pub stationarity_residual: f64,
    /// Largest distance between the main solution and any multistart one.
    pub multistart_spread: f64,
    /// False when the multistart solutions disagree.
    pub unique: bool,
}

/// Unconstrained geometric median (Weiszfeld iteration).
#[derive(Debug, Clone)]
pub struct GeometricMedian {
    pub point: StatePoint,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Difference of distances to the fixed point and to the interval mean:
/// negative values mean the trajectory is nearer the fixed point.
#[derive(Debug, Clone)]
pub struct DeltaSeries {
    pub times: Vec<usize>,
    pub values: Vec<f64>,
    pub fixed_point: StatePoint,
    pub mean: StatePoint,
}

/// Consistency report for fixed points solved from several references.
#[derive(Debug)]
pub struct ConsistencyReport {
    pub results: Vec<Result<FixedPointResult, FixedPointError>>,
    /// `(i, j, distance)` over successfully solved pairs.
    pub pairwise: Vec<(usize, usize, f64)>,
    pub consistent: bool,
}

fn check_dims(points: &[StatePoint]) -> Result<usize, FixedPointError> {
    let Some(first) = points.first() else {
        return Err(FixedPointError::Invalid("no points".into()));
    };
    let d = first.dim();
    for p in points {
        if p.dim() != d {
            return Err(FixedPointError::DimensionMismatch {
                left: d,
                right: p.dim(),
            });
        }
    }
    Ok(d)
}

fn objective(points: &[StatePoint], y: &[f64]) -> f64 {
    points.iter().map(|p| euclidean(&p.coords, y)).sum()
}

/// Points closer than this (relative to the coordinate scale) count as
/// coincident with the iterate and get the subgradient treatment.
const SINGULARITY_EPS: f64 = 1e-12;

/// One Weiszfeld step with the standard correction when the iterate
/// coincides with data points: with `eta` coincident points and `r` the
/// norm of the remaining gradient, the iterate is already optimal when
/// `r <= eta`, and otherwise the step is damped toward the iterate.
/// Returns None when the iterate is optimal.
fn weiszfeld_step(points: &[StatePoint], y: &[f64], scale: f64) -> Option<Vec<f64>> {
    let d = y.len();
    let eps = SINGULARITY_EPS * scale.max(1.0);
    let mut wsum = 0.0;
    let mut t = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut eta = 0.0f64;
    for p in points {
        let dist = euclidean(&p.coords, y);
        if dist <= eps {
            eta += 1.0;
            continue;
        }
        let w = 1.0 / dist;
        wsum += w;
        for i in 0..d {
            t[i] += p.coords[i] * w;
            grad[i] += (p.coords[i] - y[i]) * w;
        }
    }
    if wsum == 0.0 {
        // Every point coincides with the iterate.
        return None;
    }
    for v in t.iter_mut() {
        *v /= wsum;
    }
    if eta == 0.0 {
        return Some(t);
    }
    let r = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if r <= eta {
        return None;
    }
    let damp = eta / r;
    Some(
        t.iter()
            .zip(y)
            .map(|(ti, yi)| (1.0 - damp) * ti + damp * yi)
            .collect(),
    )
}

fn coord_scale(points: &[StatePoint]) -> f64 {
    points
        .iter()
        .flat_map(|p| p.coords.iter())
        .fold(0.0f64, |a, &b| a.max(b.abs()))
}

/// Geometric median of a point set by Weiszfeld iteration, starting from
/// the coordinate mean. Hitting `max_iter` flags the result as unconverged
/// rather than failing.
pub fn geometric_median(
    points: &[StatePoint],
    tol: f64,
    max_iter: usize,
) -> Result<GeometricMedian, FixedPointError> {
    let d = check_dims(points)?;
    let scale = coord_scale(points);
    let mut y = vec![0.0; d];
    for p in points {
        for (acc, v) in y.iter_mut().zip(&p.coords) {
            *acc += v;
        }
    }
    for v in y.iter_mut() {
        *v /= points.len() as f64;
    }
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let Some(next) = weiszfeld_step(points, &y, scale) else {
            converged = true;
            break;
        };
        let step = euclidean(&next, &y);
        let done = step < tol * y.iter().fold(1.0f64, |a, &b| a.max(b.abs()));
        y = next;
        if done {
            converged = true;
            break;
        }
    }
    Ok(GeometricMedian {
        objective: objective(points, &y),
        point: StatePoint::new(y),
        iterations,
        converged,
    })
}

fn project_to_sphere(z: &[f64], center: &[f64], radius: f64) -> Option<Vec<f64>> {
    let dist = euclidean(z, center);
    if dist == 0.0 {
        return None;
    }
    let f = radius / dist;
    Some(
        z.iter()
            .zip(center)
            .map(|(zi, ci)| ci + (zi - ci) * f)
            .collect(),
    )
}

struct ConstrainedRun {
    y: Vec<f64>,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
}

fn solve_constrained_from(
    points: &[StatePoint],
    center: &[f64],
    radius: f64,
    start: Vec<f64>,
    tol: f64,
    max_iter: usize,
    scale: f64,
) -> ConstrainedRun {
    let mut y = start;
    let mut trace = vec![objective(points, &y)];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let step_target = match weiszfeld_step(points, &y, scale) {
            Some(t) => t,
            None => {
                converged = true;
                break;
            }
        };
        let next = match project_to_sphere(&step_target, center, radius) {
            Some(p) => p,
            // Weiszfeld target at the sphere center: direction undefined,
            // keep the current iterate.
            None => y.clone(),
        };
        let step = euclidean(&next, &y);
        trace.push(objective(points, &next));
        let done = step < tol * y.iter().fold(1.0f64, |a, &b| a.max(b.abs()));
        y = next;
        if done {
            converged = true;
            break;
        }
    }
    ConstrainedRun {
        y,
        iterations,
        converged,
        trace,
    }
}

/// Purely radial uniqueness threshold for the multistart check.
fn uniqueness_tol(radius: f64) -> f64 {
    1e-6 * radius.max(1.0)
}

/// Solve a [`FixedPointProblem`] by projected Weiszfeld iteration and run
/// the multistart uniqueness check.
pub fn constrained_fixed_point(
    problem: &FixedPointProblem<'_>,
) -> Result<FixedPointResult, FixedPointError> {
    let (result, _) = constrained_fixed_point_with_trace(problem)?;
    Ok(result)
}

/// Like [`constrained_fixed_point`], additionally returning the objective
/// value per iteration of the main run (monotone non-increasing).
pub fn constrained_fixed_point_with_trace(
    problem: &FixedPointProblem<'_>,
) -> Result<(FixedPointResult, Vec<f64>), FixedPointError> {
    let d = check_dims(problem.points)?;
    if problem.reference.dim() != d {
        return Err(FixedPointError::DimensionMismatch {
            left: d,
            right: problem.reference.dim(),
        });
    }
    if problem.radius.is_nan() || problem.radius <= 0.0 {
        return Err(FixedPointError::Invalid(format!(
            "radius must be positive, got {}",
            problem.radius
        )));
    }
    let center = &problem.reference.coords;
    let scale = coord_scale(problem.points)
        .max(center.iter().fold(0.0f64, |a, &b| a.max(b.abs())));
    let eps = SINGULARITY_EPS * scale.max(1.0);
    let farthest = problem
        .points
        .iter()
        .map(|p| euclidean(&p.coords, center))
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    if farthest.1 <= eps {
        return Err(FixedPointError::Degenerate(
            "every point coincides with the reference".into(),
        ));
    }

    // Start from the sphere projection of the coordinate mean; if the mean
    // sits on the reference, head toward the farthest point instead.
    let mut mean = vec![0.0; d];
    for p in problem.points {
        for (acc, v) in mean.iter_mut().zip(&p.coords) {
            *acc += v;
        }
    }
    for v in mean.iter_mut() {
        *v /= problem.points.len() as f64;
    }
    let start = match project_to_sphere(&mean, center, problem.radius) {
        Some(p) => p,
        None => {
            let dir = &problem.points[farthest.0].coords;
            project_to_sphere(dir, center, problem.radius).expect("farthest point is off-center")
        }
    };

    let main = solve_constrained_from(
        problem.points,
        center,
        problem.radius,
        start,
        problem.tol,
        problem.max_iter,
        scale,
    );

    // Multistart: random points on the sphere.
    let mut rng = ChaCha8Rng::seed_from_u64(problem.seed);
    let mut spread = 0.0f64;
    for _ in 0..5 {
        let dir: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let probe: Vec<f64> = center.iter().zip(&dir).map(|(c, v)| c + v).collect();
        let Some(start) = project_to_sphere(&probe, center, problem.radius) else {
            continue;
        };
        let run = solve_constrained_from(
            problem.points,
            center,
            problem.radius,
            start,
            problem.tol,
            problem.max_iter,
            scale,
        );
        if run.converged {
            spread = spread.max(euclidean(&run.y, &main.y));
        }
    }

    // Post-hoc stationarity: the distance-sum gradient at the solution must
    // be parallel to the sphere normal.
    let mut grad = vec![0.0; d];
    for p in problem.points {
        let dist = euclidean(&p.coords, &main.y);
        if dist <= eps {
            continue;
        }
        for (g, (yi, pi)) in grad.iter_mut().zip(main.y.iter().zip(&p.coords)) {
            *g += (yi - pi) / dist;
        }
    }
    let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let stationarity_residual = if gnorm > 0.0 {
        let normal: Vec<f64> = main
            .y
            .iter()
            .zip(center)
            .map(|(y, c)| (y - c) / problem.radius)
            .collect();
        let along: f64 = grad.iter().zip(&normal).map(|(g, n)| g * n).sum();
        let tangential: f64 = grad
            .iter()
            .zip(&normal)
            .map(|(g, n)| g - along * n)
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        tangential / gnorm
    } else {
        0.0
    };

    let constraint_residual = (euclidean(center, &main.y) - problem.radius).abs();
    let result = FixedPointResult {
        objective: objective(problem.points, &main.y),
        point: StatePoint::new(main.y),
        iterations: main.iterations,
        converged: main.converged,
        constraint_residual,
        stationarity_residual,
        multistart_spread: spread,
        unique: spread <= uniqueness_tol(problem.radius),
    };
    Ok((result, main.trace))
}

/// Solve the constrained problem from several `(reference, radius)` pairs
/// and compare the solutions; consistent when every solve converges and all
/// pairwise distances stay below `tol_match`.
pub fn reference_consistency(
    points: &[StatePoint],
    references: &[(StatePoint, f64)],
    tol_match: f64,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<ConsistencyReport, FixedPointError> {
    if references.len() < 2 {
        return Err(FixedPointError::Invalid(format!(
            "consistency check needs at least 2 references, got {}",
            references.len()
        )));
    }
    let results: Vec<Result<FixedPointResult, FixedPointError>> = references
        .iter()
        .map(|(reference, radius)| {
            let problem = FixedPointProblem {
                points,
                reference,
                radius: *radius,
                tol,
                max_iter,
                seed,
            };
            constrained_fixed_point(&problem)
        })
        .collect();
    let mut pairwise = Vec::new();
    let mut consistent = results.iter().all(|r| matches!(r, Ok(r) if r.converged));
    for i in 0..results.len() {
        for j in (i + 1)..results.len() {
            if let (Ok(a), Ok(b)) = (&results[i], &results[j]) {
                let dist = euclidean(&a.point.coords, &b.point.coords);
                if dist >= tol_match {
                    consistent = false;
                }
                pairwise.push((i, j, dist));
            }
        }
    }
    Ok(ConsistencyReport {
        results,
        pairwise,
        consistent,
    })
}

/// `Delta(t) = ||C(t) - C0|| - ||C(t) - mean||` per time point.
pub fn delta_series(
    points: &[StatePoint],
    fixed_point: &StatePoint,
    mean: &StatePoint,
) -> Result<DeltaSeries, FixedPointError> {
    let d = check_dims(points)?;
    for other in [fixed_point, mean] {
        if other.dim() != d {
            return Err(FixedPointError::DimensionMismatch {
                left: d,
                right: other.dim(),
            });
        }
    }
    let values = points
        .iter()
        .map(|p| euclidean(&p.coords, &fixed_point.coords) - euclidean(&p.coords, &mean.coords))
        .collect();
    Ok(DeltaSeries {
        times: (0..points.len()).collect(),
        values,
        fixed_point: fixed_point.clone(),
        mean: mean.clone(),
    })
}
