//! Expected fitness `J(mean) = E[f(mean + sigma * Z)]`, `Z ~ N(0, I)`, by
//! tensor Gauss–Hermite quadrature and by Monte Carlo.
//!
//! Quadrature is exact for polynomials of per-axis degree below `2n` but
//! loses accuracy at discontinuities (hole edges, path borders, gap walls),
//! where the Monte Carlo standard error is the honest yardstick.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::landscapes::ParamVector;
use crate::objective::{checked_value, Objective};
use crate::optimizers::{evaluate_batch, running_mean, standard_normal_vec, TrajectoryRecord};
use crate::text::fmt_real;

pub const DEFAULT_NODES_PER_DIM: usize = 41;

/// Bound on the 41-node error for the default Donut, per unit amplitude.
/// Other discontinuous landscapes can exceed it at large sigma.
pub const QUADRATURE_TOLERANCE: f64 = 1e-2;

/// Largest rule whose recurrence stays finite in f64.
pub const MAX_NODES_PER_DIM: usize = 181;

/// Upper bound on tensor-grid size.
const MAX_QUADRATURE_POINTS: usize = 1 << 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Quadrature,
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExpectedFitnessEstimate {
    pub value: f64,
    /// Zero exactly when `method` is quadrature.
    pub standard_error: f64,
    pub method: Method,
    /// Monte Carlo sample count, or total quadrature points (`nodes_per_dim^dim`).
    pub samples_or_nodes: usize,
}

/// Physicists' Gauss–Hermite rule: `∫ e^{-x²} g(x) dx ≈ Σ w_k g(x_k)`.
/// Nodes ascend and are exactly antisymmetric; an odd rule has a node at 0.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!((1..=MAX_NODES_PER_DIM).contains(&n));
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let half = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0f64;
    let mut pp = 0.0;
    // Newton on the orthonormal recurrence, largest root first.
    for i in 0..half {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        for _ in 0..100 {
            let mut p1 = std::f64::consts::PI.powf(-0.25);
            let mut p2 = 0.0;
            for j in 1..=n {
                let jf = j as f64;
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        w[i] = 2.0 / (pp * pp);
    }
    if n % 2 == 1 {
        x[half - 1] = 0.0;
    }
    for i in 0..n / 2 {
        x[n - 1 - i] = -x[i];
        w[n - 1 - i] = w[i];
    }
    x.reverse();
    w.reverse();
    (x, w)
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid("sigma", format!("must be positive, got {sigma}")))
    }
}

fn check_dim<O: Objective + ?Sized>(objective: &O, mean: &ParamVector) -> Result<()> {
    if mean.dim() != objective.dim() {
        return Err(Error::DimensionMismatch {
            expected: objective.dim(),
            got: mean.dim(),
        });
    }
    Ok(())
}

/// Tensor Gauss–Hermite estimate with nodes at `mean + sigma * sqrt(2) * x_k`.
///
/// Summed as `f(mean) + Σ W_k (f_k - f(mean))` over normalized weights, so a
/// constant landscape returns its value exactly.
pub fn expected_fitness_quadrature<O: Objective + ?Sized>(
    objective: &O,
    mean: &ParamVector,
    sigma: f64,
    nodes_per_dim: usize,
) -> Result<ExpectedFitnessEstimate> {
    check_sigma(sigma)?;
    check_dim(objective, mean)?;
    if nodes_per_dim < 3 || nodes_per_dim.is_multiple_of(2) || nodes_per_dim > MAX_NODES_PER_DIM {
        return Err(Error::invalid(
            "nodes_per_dim",
            format!("must be odd and in [3, {MAX_NODES_PER_DIM}], got {nodes_per_dim}"),
        ));
    }
    let dim = mean.dim();
    let total = u32::try_from(dim)
        .ok()
        .and_then(|d| nodes_per_dim.checked_pow(d))
        .filter(|&t| t <= MAX_QUADRATURE_POINTS)
        .ok_or_else(|| Error::invalid("nodes_per_dim", format!("{nodes_per_dim}^{dim} points is too many")))?;

    let (x, w) = gauss_hermite(nodes_per_dim);
    let norm = std::f64::consts::PI.sqrt();
    let offsets: Vec<f64> = x.iter().map(|h| sigma * std::f64::consts::SQRT_2 * h).collect();
    let weights: Vec<f64> = w.iter().map(|w| w / norm).collect();

    let m = mean.as_slice();
    let mut points = Vec::with_capacity(total);
    let mut point_weights = Vec::with_capacity(total);
    let mut idx = vec![0usize; dim];
    for _ in 0..total {
        points.push(m.iter().zip(&idx).map(|(c, &k)| c + offsets[k]).collect::<Vec<f64>>());
        point_weights.push(idx.iter().map(|&k| weights[k]).product::<f64>());
        for slot in idx.iter_mut().rev() {
            *slot += 1;
            if *slot < nodes_per_dim {
                break;
            }
            *slot = 0;
        }
    }
    let values = evaluate_batch(objective, &points)?;
    let center = checked_value(objective, m)?;
    let weight_sum: f64 = point_weights.iter().sum();
    let deviation: f64 = values
        .iter()
        .zip(&point_weights)
        .map(|(f, w)| w * (f - center))
        .sum();
    Ok(ExpectedFitnessEstimate {
        value: center + deviation / weight_sum,
        standard_error: 0.0,
        method: Method::Quadrature,
        samples_or_nodes: total,
    })
}

/// Sample mean of `f(mean + sigma * eps)` with standard error `sd / sqrt(samples)`.
pub fn expected_fitness_mc<O, R>(
    objective: &O,
    mean: &ParamVector,
    sigma: f64,
    samples: usize,
    rng: &mut R,
) -> Result<ExpectedFitnessEstimate>
where
    O: Objective + ?Sized,
    R: rand::Rng + ?Sized,
{
    check_sigma(sigma)?;
    check_dim(objective, mean)?;
    if samples < 2 {
        return Err(Error::invalid("samples", format!("must be at least 2, got {samples}")));
    }
    let m = mean.as_slice();
    let points: Vec<Vec<f64>> = (0..samples)
        .map(|_| {
            let eps = standard_normal_vec(rng, m.len());
            m.iter().zip(&eps).map(|(c, e)| c + sigma * e).collect()
        })
        .collect();
    let values = evaluate_batch(objective, &points)?;
    let value = running_mean(&values);
    let ss: f64 = values.iter().map(|v| (v - value) * (v - value)).sum();
    let sd = (ss / (samples - 1) as f64).sqrt();
    Ok(ExpectedFitnessEstimate {
        value,
        standard_error: sd / (samples as f64).sqrt(),
        method: Method::MonteCarlo,
        samples_or_nodes: samples,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DivergencePoint {
    pub iteration: u64,
    pub fitness_at_mean: f64,
    pub expected_fitness: f64,
}

/// Recompute `f(iterate)` and quadrature `J(iterate)` for every record.
pub fn divergence_curve<O: Objective + ?Sized>(
    trajectory: &[TrajectoryRecord],
    objective: &O,
    sigma: f64,
    nodes_per_dim: usize,
) -> Result<Vec<DivergencePoint>> {
    if trajectory.is_empty() {
        return Err(Error::invalid("trajectory", "must not be empty"));
    }
    trajectory
        .iter()
        .map(|r| {
            Ok(DivergencePoint {
                iteration: r.iteration,
                fitness_at_mean: checked_value(objective, r.iterate.as_slice())?,
                expected_fitness: expected_fitness_quadrature(objective, &r.iterate, sigma, nodes_per_dim)?.value,
            })
        })
        .collect()
}

/// CSV with header `iteration,fitness_at_mean,expected_fitness`.
pub fn divergence_to_csv(points: &[DivergencePoint]) -> String {
    let mut s = String::from("iteration,fitness_at_mean,expected_fitness\n");
    for p in points {
        let _ = writeln!(
            s,
            "{},{},{}",
            p.iteration,
            fmt_real(p.fitness_at_mean),
            fmt_real(p.expected_fitness)
        );
    }
    s
}
