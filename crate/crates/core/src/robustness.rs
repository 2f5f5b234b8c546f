//! Robustness to parameter perturbation: Gaussian clouds around a solution,
//! the median-over-base robustness score, and Mann–Whitney U comparisons.

use std::fmt::Write as _;

use rand::RngCore as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landscapes::ParamVector;
use crate::objective::Objective;
use crate::optimizers::{running_mean, standard_normal_vec};
use crate::seeding::{derive_seed, rng_from_seed, Rng};
use crate::text::fmt_real;

/// Largest per-sample size for which p-values are enumerated exactly.
pub const EXACT_LIMIT: usize = 8;

/// An objective whose evaluation may be noisy. Each trial draws from `rng`.
pub trait StochasticObjective: Sync {
    fn dim(&self) -> usize;

    fn sample(&self, z: &[f64], rng: &mut Rng) -> f64;

    /// Deterministic objectives are evaluated once per point regardless of trial counts.
    fn is_deterministic(&self) -> bool {
        false
    }
}

impl<O: Objective + ?Sized> StochasticObjective for O {
    fn dim(&self) -> usize {
        Objective::dim(self)
    }

    fn sample(&self, z: &[f64], _rng: &mut Rng) -> f64 {
        self.value(z)
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

/// Adds N(0, noise_sd²) observation noise to a deterministic objective.
#[derive(Clone, Debug)]
pub struct Noisy<O> {
    pub inner: O,
    pub noise_sd: f64,
}

impl<O: Objective> StochasticObjective for Noisy<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn sample(&self, z: &[f64], rng: &mut Rng) -> f64 {
        self.inner.value(z) + self.noise_sd * standard_normal_vec(rng, 1)[0]
    }
}

fn default_count() -> usize {
    1000
}

fn default_per_trials() -> usize {
    1
}

fn default_base_trials() -> usize {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudConfig {
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_per_trials")]
    pub per_trials: usize,
    #[serde(default = "default_base_trials")]
    pub base_trials: usize,
}

impl Default for CloudConfig {
    fn default() -> Self {
        Self {
            count: default_count(),
            per_trials: default_per_trials(),
            base_trials: default_base_trials(),
        }
    }
}

impl CloudConfig {
    /// 1,000 perturbations of 100 trials each against 1,000 base trials.
    pub fn paper_mode() -> Self {
        Self {
            count: 1000,
            per_trials: 100,
            base_trials: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("count", self.count),
            ("per_trials", self.per_trials),
            ("base_trials", self.base_trials),
        ] {
            if v == 0 {
                return Err(Error::invalid(field, "must be at least 1"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quartiles(values: &[f64]) -> Quartiles {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Quartiles {
        q1: quantile(&sorted, 0.25),
        median: quantile(&sorted, 0.5),
        q3: quantile(&sorted, 0.75),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RobustnessReport {
    /// Mean over `base_trials` unperturbed evaluations.
    pub base_performance: f64,
    pub perturbed_performances: Vec<f64>,
    pub perturbation_sigma: f64,
    /// `median / base_performance`; `None` when the base performance is zero.
    pub robustness_score: Option<f64>,
    pub quartiles: Quartiles,
    pub seed: u64,
}

impl RobustnessReport {
    pub fn score_undefined(&self) -> bool {
        self.robustness_score.is_none()
    }

    /// CSV with header `perturbation_index,performance`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("perturbation_index,performance\n");
        for (i, p) in self.perturbed_performances.iter().enumerate() {
            let _ = writeln!(s, "{i},{}", fmt_real(*p));
        }
        s
    }

    pub fn summary_json(&self, cfg: &CloudConfig) -> String {
        let value = serde_json::json!({
            "base_performance": self.base_performance,
            "base_statistic": "mean",
            "quartiles": self.quartiles,
            "robustness_score": self.robustness_score,
            "score_defined": !self.score_undefined(),
            "perturbation_sigma": self.perturbation_sigma,
            "count": cfg.count,
            "per_trials": cfg.per_trials,
            "base_trials": cfg.base_trials,
            "seed": self.seed,
        });
        serde_json::to_string_pretty(&value).expect("plain values serialize")
    }
}

fn average_trials<O: StochasticObjective + ?Sized>(objective: &O, z: &[f64], trials: usize, seed: u64) -> Result<f64> {
    let check = |v: f64| {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Evaluation {
                point: z.to_vec(),
                value: v,
            })
        }
    };
    let mut rng = rng_from_seed(seed);
    if objective.is_deterministic() {
        return check(objective.sample(z, &mut rng));
    }
    let values = (0..trials)
        .map(|_| check(objective.sample(z, &mut rng)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(running_mean(&values))
}

fn check_point<O: StochasticObjective + ?Sized>(objective: &O, solution: &ParamVector) -> Result<()> {
    if solution.dim() != objective.dim() {
        return Err(Error::DimensionMismatch {
            expected: objective.dim(),
            got: solution.dim(),
        });
    }
    Ok(())
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid("sigma", format!("must be positive, got {sigma}")))
    }
}

/// Cloud over precomputed standard-normal directions. Trial noise for perturbation `i`
/// is seeded by `(trial_seed, i)`; base trials use `(trial_seed, count)`.
fn cloud_from_directions<O: StochasticObjective + ?Sized>(
    objective: &O,
    solution: &ParamVector,
    sigma: f64,
    directions: &[Vec<f64>],
    cfg: &CloudConfig,
    trial_seed: u64,
    report_seed: u64,
) -> Result<RobustnessReport> {
    let s = solution.as_slice();
    let base_performance = average_trials(objective, s, cfg.base_trials, derive_seed(trial_seed, &[directions.len() as u64]))?;
    let perturbed: Vec<Result<f64>> = directions
        .par_iter()
        .enumerate()
        .map(|(i, eps)| {
            let z: Vec<f64> = s.iter().zip(eps).map(|(x, e)| x + sigma * e).collect();
            average_trials(objective, &z, cfg.per_trials, derive_seed(trial_seed, &[i as u64]))
        })
        .collect();
    let perturbed_performances = perturbed.into_iter().collect::<Result<Vec<f64>>>()?;
    let q = quartiles(&perturbed_performances);
    Ok(RobustnessReport {
        base_performance,
        robustness_score: (base_performance != 0.0).then(|| q.median / base_performance),
        quartiles: q,
        perturbed_performances,
        perturbation_sigma: sigma,
        seed: report_seed,
    })
}

fn draw_directions(dim: usize, count: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..count).map(|_| standard_normal_vec(rng, dim)).collect()
}

/// Evaluate `count` perturbations `solution + sigma * eps` and the unperturbed base.
pub fn perturbation_cloud<O: StochasticObjective + ?Sized>(
    objective: &O,
    solution: &ParamVector,
    sigma: f64,
    cfg: &CloudConfig,
    seed: u64,
) -> Result<RobustnessReport> {
    cfg.validate()?;
    check_sigma(sigma)?;
    check_point(objective, solution)?;
    let mut rng = rng_from_seed(seed);
    let directions = draw_directions(solution.dim(), cfg.count, &mut rng);
    let trial_seed = rng.next_u64();
    cloud_from_directions(objective, solution, sigma, &directions, cfg, trial_seed, seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    TwoSided,
    /// Sample a tends to exceed sample b.
    Greater,
    Less,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    /// Exact when both samples have at most [`EXACT_LIMIT`] values.
    Auto,
    Exact,
    Normal,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MannWhitneyResult {
    /// U for sample a: pairs with a > b, ties counting one half.
    pub u_statistic: f64,
    pub p_value: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub alternative: Alternative,
    pub method: PValueMethod,
    /// Every value identical across both samples.
    pub degenerate: bool,
}

impl MannWhitneyResult {
    /// U for sample b; `u_statistic + mirror_u() == n_a * n_b`.
    pub fn mirror_u(&self) -> f64 {
        (self.n_a * self.n_b) as f64 - self.u_statistic
    }
}

/// Pooled midranks, doubled so that they are integers.
fn doubled_midranks(pooled: &[f64]) -> Vec<u64> {
    let n = pooled.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && pooled[order[j]] == pooled[order[i]] {
            j += 1;
        }
        // Positions i..j hold ranks i+1..=j; their mean doubled is i + j + 1.
        for &k in &order[i..j] {
            ranks[k] = (i + j + 1) as u64;
        }
        i = j;
    }
    ranks
}

fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

/// Exact tail probabilities `(P(U >= u), P(U <= u))` over all equally likely
/// splits of the pooled ranks, conditional on the observed ties.
fn exact_tails(ranks2: &[u64], n_a: usize, observed2: u64) -> (f64, f64) {
    let n = ranks2.len();
    let (mut ge, mut le, mut total) = (0u64, 0u64, 0u64);
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize != n_a {
            continue;
        }
        let sum: u64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks2[i]).sum();
        total += 1;
        ge += u64::from(sum >= observed2);
        le += u64::from(sum <= observed2);
    }
    (ge as f64 / total as f64, le as f64 / total as f64)
}

/// Tails under the normal approximation with tie-corrected variance and a
/// continuity correction of one half.
fn normal_tails(u: f64, n_a: usize, n_b: usize, ranks2: &[u64]) -> (f64, f64) {
    let n = (n_a + n_b) as f64;
    let mut sorted = ranks2.to_vec();
    sorted.sort_unstable();
    let mut tie_term = 0.0;
    for group in sorted.chunk_by(|a, b| a == b) {
        let t = group.len() as f64;
        tie_term += t * t * t - t;
    }
    let (na, nb) = (n_a as f64, n_b as f64);
    let mean = na * nb / 2.0;
    let var = na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let sd = var.sqrt();
    (normal_sf((u - mean - 0.5) / sd), normal_sf((mean - u - 0.5) / sd))
}

pub fn mann_whitney_u(sample_a: &[f64], sample_b: &[f64], alternative: Alternative) -> Result<MannWhitneyResult> {
    mann_whitney_u_with(sample_a, sample_b, alternative, PValueMethod::Auto)
}

pub fn mann_whitney_u_with(
    sample_a: &[f64],
    sample_b: &[f64],
    alternative: Alternative,
    method: PValueMethod,
) -> Result<MannWhitneyResult> {
    if sample_a.is_empty() {
        return Err(Error::invalid("sample_a", "must not be empty"));
    }
    if sample_b.is_empty() {
        return Err(Error::invalid("sample_b", "must not be empty"));
    }
    if let Some(v) = sample_a.iter().chain(sample_b).find(|v| v.is_nan()) {
        return Err(Error::invalid("sample", format!("contains {v}")));
    }
    let (n_a, n_b) = (sample_a.len(), sample_b.len());
    let pooled: Vec<f64> = sample_a.iter().chain(sample_b).copied().collect();
    let ranks2 = doubled_midranks(&pooled);
    let rank_sum2: u64 = ranks2[..n_a].iter().sum();
    let u = rank_sum2 as f64 / 2.0 - (n_a * (n_a + 1)) as f64 / 2.0;

    let method = match method {
        PValueMethod::Auto if n_a <= EXACT_LIMIT && n_b <= EXACT_LIMIT => PValueMethod::Exact,
        PValueMethod::Auto => PValueMethod::Normal,
        m => m,
    };
    if method == PValueMethod::Exact && n_a + n_b > 24 {
        return Err(Error::invalid("method", "exact enumeration needs n_a + n_b <= 24"));
    }
    let degenerate = pooled.iter().all(|v| *v == pooled[0]);
    let p_value = if degenerate {
        1.0
    } else {
        let (greater, less) = match method {
            PValueMethod::Exact => exact_tails(&ranks2, n_a, rank_sum2),
            _ => normal_tails(u, n_a, n_b, &ranks2),
        };
        match alternative {
            Alternative::Greater => greater,
            Alternative::Less => less,
            Alternative::TwoSided => (2.0 * greater.min(less)).min(1.0),
        }
    };
    Ok(MannWhitneyResult {
        u_statistic: u,
        p_value,
        n_a,
        n_b,
        alternative,
        method,
        degenerate,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairwiseTest {
    pub a: String,
    pub b: String,
    pub sigma: f64,
    pub result: MannWhitneyResult,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub names: Vec<String>,
    pub sigmas: Vec<f64>,
    /// `reports[solution][sigma]`.
    pub reports: Vec<Vec<RobustnessReport>>,
    /// One test per sigma and ordered pair `i < j`, with `a` = solution i.
    pub pairwise: Vec<PairwiseTest>,
}

impl ComparisonTable {
    pub fn report(&self, name: &str, sigma_index: usize) -> Option<&RobustnessReport> {
        let i = self.names.iter().position(|n| n == name)?;
        self.reports.get(i)?.get(sigma_index)
    }

    pub fn test(&self, a: &str, b: &str, sigma_index: usize) -> Option<&MannWhitneyResult> {
        let sigma = *self.sigmas.get(sigma_index)?;
        self.pairwise
            .iter()
            .find(|t| t.a == a && t.b == b && t.sigma == sigma)
            .map(|t| &t.result)
    }
}

/// Clouds for every (solution, sigma) pair plus pairwise Mann–Whitney tests.
///
/// Perturbation directions depend only on `(seed, sigma index)`, so every
/// solution faces the same cloud shape (common random numbers). Trial noise
/// is seeded by `(seed, solution index, sigma index)`.
pub fn compare_solutions<O: StochasticObjective + ?Sized>(
    objective: &O,
    solutions: &[(String, ParamVector)],
    sigmas: &[f64],
    cfg: &CloudConfig,
    seed: u64,
    alternative: Alternative,
) -> Result<ComparisonTable> {
    if solutions.len() < 2 {
        return Err(Error::invalid("solutions", "need at least two"));
    }
    if sigmas.is_empty() {
        return Err(Error::invalid("sigmas", "need at least one"));
    }
    cfg.validate()?;
    for s in sigmas {
        check_sigma(*s)?;
    }
    for (_, p) in solutions {
        check_point(objective, p)?;
    }
    let dim = objective.dim();
    let mut reports = Vec::with_capacity(solutions.len());
    for (si, (_, solution)) in solutions.iter().enumerate() {
        let mut row = Vec::with_capacity(sigmas.len());
        for (ki, &sigma) in sigmas.iter().enumerate() {
            let mut rng = rng_from_seed(derive_seed(seed, &[ki as u64]));
            let directions = draw_directions(dim, cfg.count, &mut rng);
            let trial_seed = derive_seed(seed, &[si as u64, ki as u64]);
            row.push(cloud_from_directions(objective, solution, sigma, &directions, cfg, trial_seed, seed)?);
        }
        reports.push(row);
    }
    let mut pairwise = Vec::new();
    for (ki, &sigma) in sigmas.iter().enumerate() {
        for i in 0..solutions.len() {
            for j in i + 1..solutions.len() {
                pairwise.push(PairwiseTest {
                    a: solutions[i].0.clone(),
                    b: solutions[j].0.clone(),
                    sigma,
                    result: mann_whitney_u(
                        &reports[i][ki].perturbed_performances,
                        &reports[j][ki].perturbed_performances,
                        alternative,
                    )?,
                });
            }
        }
    }
    Ok(ComparisonTable {
        names: solutions.iter().map(|(n, _)| n.clone()).collect(),
        sigmas: sigmas.to_vec(),
        reports,
        pairwise,
    })
}
