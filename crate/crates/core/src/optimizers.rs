//! Search procedures: fixed-sigma ES, central-difference gradient ascent
//! (optionally with heavy-ball momentum) and a truncation-selection GA.
//!
//! All three maximize fitness and share the [`Optimizer`] stepping
//! interface. A run of `iterations` steps yields `iterations + 1` records:
//! one per step describing the state the step started from, plus a final
//! record for the state after the last update.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, RunError};
use crate::landscapes::ParamVector;
use crate::objective::{checked_value, Objective};
use crate::seeding::{rng_from_seed, Rng};

/// Batches at least this large are evaluated on the rayon pool.
const PARALLEL_BATCH: usize = 256;

/// Isotropic Gaussian with a fixed standard deviation. Only the mean moves.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchDistribution {
    mean: ParamVector,
    sigma: f64,
}

impl SearchDistribution {
    pub fn new(mean: ParamVector, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid("sigma", format!("must be positive, got {sigma}")));
        }
        Ok(Self { mean, sigma })
    }

    pub fn mean(&self) -> &ParamVector {
        &self.mean
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `mean += step * direction`. Rejects a step that would leave the mean non-finite.
    fn advance(&mut self, step: f64, direction: &[f64]) -> Result<()> {
        let next: Vec<f64> = self
            .mean
            .as_slice()
            .iter()
            .zip(direction)
            .map(|(m, g)| m + step * g)
            .collect();
        self.mean = ParamVector::new(next)?;
        Ok(())
    }
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EsConfig {
    pub sigma: f64,
    pub population: usize,
    pub learning_rate: f64,
    #[serde(default = "default_true")]
    pub mirrored: bool,
    #[serde(default)]
    pub rank_shaping: bool,
    pub iterations: usize,
    /// Filled from the experiment seed; not part of the optimizer table.
    #[serde(skip)]
    pub seed: u64,
}

impl EsConfig {
    pub fn validate(&self) -> Result<()> {
        positive("sigma", self.sigma)?;
        validate_population(self.population, self.mirrored)?;
        non_negative("learning_rate", self.learning_rate)?;
        if self.iterations == 0 {
            return Err(Error::invalid("iterations", "must be positive"));
        }
        Ok(())
    }
}

fn validate_population(population: usize, mirrored: bool) -> Result<()> {
    if population < 2 {
        return Err(Error::invalid("population", format!("must be at least 2, got {population}")));
    }
    if mirrored && !population.is_multiple_of(2) {
        return Err(Error::invalid(
            "population",
            format!("must be even with mirrored sampling, got {population}"),
        ));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdConfig {
    pub epsilon: f64,
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum_beta: f64,
    pub iterations: usize,
}

impl FdConfig {
    pub fn validate(&self) -> Result<()> {
        positive("epsilon", self.epsilon)?;
        non_negative("learning_rate", self.learning_rate)?;
        if !(0.0..1.0).contains(&self.momentum_beta) {
            return Err(Error::invalid(
                "momentum_beta",
                format!("must lie in [0, 1), got {}", self.momentum_beta),
            ));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations", "must be positive"));
        }
        Ok(())
    }
}

fn default_truncation() -> f64 {
    0.05
}

fn default_elitism() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaConfig {
    pub population: usize,
    #[serde(default = "default_truncation")]
    pub truncation_fraction: f64,
    pub mutation_sigma: f64,
    #[serde(default = "default_elitism")]
    pub elitism: usize,
    pub iterations: usize,
    #[serde(skip)]
    pub seed: u64,
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::invalid("population", "must be at least 2"));
        }
        if !(self.truncation_fraction > 0.0 && self.truncation_fraction <= 1.0) {
            return Err(Error::invalid(
                "truncation_fraction",
                format!("must lie in (0, 1], got {}", self.truncation_fraction),
            ));
        }
        positive("mutation_sigma", self.mutation_sigma)?;
        if self.elitism > self.population {
            return Err(Error::invalid("elitism", "cannot exceed population"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations", "must be positive"));
        }
        Ok(())
    }

    pub fn survivors(&self) -> usize {
        ((self.truncation_fraction * self.population as f64).ceil() as usize).clamp(1, self.population)
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must be positive, got {v}")))
    }
}

fn non_negative(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must be non-negative, got {v}")))
    }
}

/// Tagged union of the three optimizer configurations (`kind = "es" | "fd" | "ga"`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Es(EsConfig),
    Fd(FdConfig),
    Ga(GaConfig),
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            OptimizerConfig::Es(c) => c.validate(),
            OptimizerConfig::Fd(c) => c.validate(),
            OptimizerConfig::Ga(c) => c.validate(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            OptimizerConfig::Es(_) => "es",
            OptimizerConfig::Fd(_) => "fd",
            OptimizerConfig::Ga(_) => "ga",
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            OptimizerConfig::Es(c) => c.seed = seed,
            OptimizerConfig::Ga(c) => c.seed = seed,
            OptimizerConfig::Fd(_) => {}
        }
    }

    /// The search-distribution sigma for ES runs.
    pub fn es_sigma(&self) -> Option<f64> {
        match self {
            OptimizerConfig::Es(c) => Some(c.sigma),
            _ => None,
        }
    }
}

/// Snapshot of one optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub iteration: u64,
    /// ES: distribution mean. FD: current point. GA: generation best.
    pub iterate: ParamVector,
    pub fitness_at_iterate: f64,
    /// ES only: mean raw fitness of this step's population.
    pub expected_fitness: Option<f64>,
    pub grad_norm: Option<f64>,
    /// Cumulative objective evaluations, including this record's.
    pub evaluations_used: u64,
}

/// CSV with header `iteration,x0,..,fitness_at_iterate,expected_fitness,grad_norm,evaluations_used`.
pub fn trajectory_to_csv(records: &[TrajectoryRecord]) -> String {
    use crate::text::{fmt_opt, fmt_real};
    use std::fmt::Write as _;

    let dim = records.first().map_or(0, |r| r.iterate.dim());
    let mut s = String::from("iteration");
    for i in 0..dim {
        let _ = write!(s, ",x{i}");
    }
    s.push_str(",fitness_at_iterate,expected_fitness,grad_norm,evaluations_used\n");
    for r in records {
        let _ = write!(s, "{}", r.iteration);
        for c in r.iterate.as_slice() {
            let _ = write!(s, ",{}", fmt_real(*c));
        }
        let _ = writeln!(
            s,
            ",{},{},{},{}",
            fmt_real(r.fitness_at_iterate),
            fmt_opt(r.expected_fitness),
            fmt_opt(r.grad_norm),
            r.evaluations_used
        );
    }
    s
}

/// Evaluate a batch, reporting the lowest-index failure.
pub(crate) fn evaluate_batch<O: Objective + ?Sized>(objective: &O, points: &[Vec<f64>]) -> Result<Vec<f64>> {
    let results: Vec<Result<f64>> = if points.len() >= PARALLEL_BATCH {
        points.par_iter().map(|p| checked_value(objective, p)).collect()
    } else {
        points.iter().map(|p| checked_value(objective, p)).collect()
    };
    results.into_iter().collect()
}

pub(crate) fn standard_normal_vec<R: rand::Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Incremental mean; exact when all values are equal.
pub(crate) fn running_mean(values: &[f64]) -> f64 {
    values
        .iter()
        .enumerate()
        .fold(0.0, |m, (k, x)| m + (x - m) / (k + 1) as f64)
}

/// Centered rank weights in [-0.5, 0.5]. Tied fitnesses share their midrank.
pub fn centered_ranks(fitness: &[f64]) -> Vec<f64> {
    let n = fitness.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| fitness[a].total_cmp(&fitness[b]));
    let mut weights = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && fitness[order[j]] == fitness[order[i]] {
            j += 1;
        }
        let midrank = (i + j - 1) as f64 / 2.0;
        for &k in &order[i..j] {
            weights[k] = midrank / (n - 1) as f64 - 0.5;
        }
        i = j;
    }
    weights
}

#[derive(Clone, Debug, PartialEq)]
pub struct EsEstimate {
    pub gradient: ParamVector,
    /// Unweighted mean of the raw sample fitnesses (Monte Carlo estimate of J).
    pub mean_sample_fitness: f64,
}

/// Score-function estimate of the gradient of expected fitness,
/// `(1 / (n sigma)) * sum_i s_i eps_i`, with `s_i` raw fitness or centered ranks.
///
/// Mirrored sampling draws `n / 2` directions and evaluates both signs; the
/// pair contributes `(s_plus - s_minus) * eps`, so a constant landscape gives
/// an exactly zero gradient.
pub fn es_gradient_estimate<O, R>(
    objective: &O,
    dist: &SearchDistribution,
    population: usize,
    mirrored: bool,
    rank_shaping: bool,
    rng: &mut R,
) -> Result<EsEstimate>
where
    O: Objective + ?Sized,
    R: rand::Rng + ?Sized,
{
    validate_population(population, mirrored)?;
    let dim = dist.mean().dim();
    if dim != objective.dim() {
        return Err(Error::DimensionMismatch {
            expected: objective.dim(),
            got: dim,
        });
    }
    let sigma = dist.sigma();
    let mean = dist.mean().as_slice();

    let draws = if mirrored { population / 2 } else { population };
    let noise: Vec<Vec<f64>> = (0..draws).map(|_| standard_normal_vec(rng, dim)).collect();
    let sign = |i: usize| if mirrored && i >= draws { -1.0 } else { 1.0 };
    let points: Vec<Vec<f64>> = (0..population)
        .map(|i| {
            let eps = &noise[i % draws];
            let s = sign(i);
            mean.iter().zip(eps).map(|(m, e)| m + sigma * s * e).collect()
        })
        .collect();
    let fitness = evaluate_batch(objective, &points)?;
    let mean_sample_fitness = running_mean(&fitness);

    let scores = if rank_shaping { centered_ranks(&fitness) } else { fitness };
    let mut grad = vec![0.0; dim];
    if mirrored {
        for (k, eps) in noise.iter().enumerate() {
            let diff = scores[k] - scores[k + draws];
            for (g, e) in grad.iter_mut().zip(eps) {
                *g += diff * e;
            }
        }
    } else {
        for (s, eps) in scores.iter().zip(&noise) {
            for (g, e) in grad.iter_mut().zip(eps) {
                *g += s * e;
            }
        }
    }
    let scale = 1.0 / (population as f64 * sigma);
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok(EsEstimate {
        gradient: ParamVector::new(grad)?,
        mean_sample_fitness,
    })
}

/// Central-difference gradient, one coordinate at a time (2d evaluations).
pub fn fd_gradient<O: Objective + ?Sized>(objective: &O, p: &ParamVector, epsilon: f64) -> Result<ParamVector> {
    positive("epsilon", epsilon)?;
    if p.dim() != objective.dim() {
        return Err(Error::DimensionMismatch {
            expected: objective.dim(),
            got: p.dim(),
        });
    }
    let mut probe = p.as_slice().to_vec();
    let mut grad = Vec::with_capacity(p.dim());
    for j in 0..p.dim() {
        let x = probe[j];
        probe[j] = x + epsilon;
        let up = checked_value(objective, &probe)?;
        probe[j] = x - epsilon;
        let down = checked_value(objective, &probe)?;
        probe[j] = x;
        grad.push((up - down) / (2.0 * epsilon));
    }
    ParamVector::new(grad)
}

/// One-step-at-a-time optimizer.
pub trait Optimizer {
    /// Measure the current state, update it once, and return the record of
    /// the state the step started from.
    fn step<O: Objective + ?Sized>(&mut self, objective: &O) -> Result<TrajectoryRecord>;

    /// Record of the current state without updating.
    fn snapshot<O: Objective + ?Sized>(&mut self, objective: &O) -> Result<TrajectoryRecord>;
}

/// Drive `optimizer` for `iterations` steps plus a final snapshot.
pub fn run<Opt, O>(optimizer: &mut Opt, objective: &O, iterations: usize) -> std::result::Result<Vec<TrajectoryRecord>, RunError>
where
    Opt: Optimizer,
    O: Objective + ?Sized,
{
    let mut records = Vec::with_capacity(iterations + 1);
    for _ in 0..iterations {
        match optimizer.step(objective) {
            Ok(r) => records.push(r),
            Err(cause) => return Err(RunError { cause, partial: records }),
        }
    }
    match optimizer.snapshot(objective) {
        Ok(r) => records.push(r),
        Err(cause) => return Err(RunError { cause, partial: records }),
    }
    Ok(records)
}

fn check_start<O: Objective + ?Sized>(objective: &O, start: &ParamVector) -> Result<()> {
    if start.dim() != objective.dim() {
        return Err(Error::DimensionMismatch {
            expected: objective.dim(),
            got: start.dim(),
        });
    }
    Ok(())
}

pub struct EsState {
    dist: SearchDistribution,
    cfg: EsConfig,
    rng: Rng,
    iteration: u64,
    evaluations: u64,
}

impl EsState {
    pub fn new(start: ParamVector, cfg: EsConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            dist: SearchDistribution::new(start, cfg.sigma)?,
            rng: rng_from_seed(cfg.seed),
            cfg,
            iteration: 0,
            evaluations: 0,
        })
    }

    pub fn distribution(&self) -> &SearchDistribution {
        &self.dist
    }
}

impl Optimizer for EsState {
    fn step<O: Objective + ?Sized>(&mut self, objective: &O) -> Result<TrajectoryRecord> {
        let at_mean = checked_value(objective, self.dist.mean().as_slice())?;
        let est = es_gradient_estimate(
            objective,
            &self.dist,
            self.cfg.population,
            self.cfg.mirrored,
            self.cfg.rank_shaping,
            &mut self.rng,
        )?;
        self.evaluations += 1 + self.cfg.population as u64;
        let record = TrajectoryRecord {
            iteration: self.iteration,
            iterate: self.dist.mean().clone(),
            fitness_at_iterate: at_mean,
            expected_fitness: Some(est.mean_sample_fitness),
            grad_norm: Some(est.gradient.norm()),
            evaluations_used: self.evaluations,
        };
        self.dist.advance(self.cfg.learning_rate, est.gradient.as_slice())?;
        self.iteration += 1;
        Ok(record)
    }

    fn snapshot<O: Objective + ?Sized>(&mut self, objective: &O) -> Result<TrajectoryRecord> {
        let at_mean = checked_value(objective, self.dist.mean().as_slice())?;
        self.evaluations += 1;
        Ok(TrajectoryRecord {
            iteration: self.iteration,
            iterate: self.dist.mean().clone(),
            fitness_at_iterate: at_mean,
            expected_fitness: None,
            grad_norm: None,
            evaluations_used: self.evaluations,
        })
    }
}

pub fn es_run<O: Objective + ?Sized>(
    objective: &O,
    start: &ParamVector,
    cfg: &EsConfig,
) -> std::result::Result<Vec<TrajectoryRecord>, RunError> {
    let setup = check_start(objective, start).and_then(|_| EsState::new(start.clone(), cfg.clone()));
    let mut state = setup.map_err(|cause| RunError { cause, partial: Vec::new() })?;
    run(&mut state, objective, cfg.iterations)
}

pub struct FdState {
    point: ParamVector,
    velocity: Vec<f64>,
    cfg: FdConfig,
    iteration: u64,
    evaluations: u64,
}

impl FdState {
    pub fn new(start: ParamVector, cfg: FdConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            velocity: vec![0.0; start.dim()],
            point: start,
            cfg,
            iteration: 0,
            evaluations: 0,
        })
    }
}

impl Optimizer for FdState {
    fn step<O: Objective + ?Sized>(&mut self, objective: &O) -> Result<TrajectoryRecord> {
        let here = checked_value(objective, self.point.as_slice())?;
        let grad = fd_gradient(objective, &self.point, self.cfg.epsilon)?;
        self.evaluations += 1 + 2 * self.point.dim() as u64;
        let record = TrajectoryRecord {
            iteration: self.iteration,
            iterate: self.point.clone(),
            fitness_at_iterate: here,
            expected_fitness: None,
            grad_norm: Some(grad.norm()),
            evaluations_used: self.evaluations,
        };
        // Heavy ball: v <- beta v + g; p <- p + lr v.
        for (v, g) in self.velocity.iter_mut().zip(grad.as_slice()) {
            *v = self.cfg.momentum_beta * *v + g;
        }
        let next: Vec<f64> = self
            .point
            .as_slice()
            .iter()
            .zip(&self.velocity)
            .map(|(p, v)| p + self.cfg.learning_rate * v)
            .collect();
        self.point = ParamVector::new(next)?;
        self.iteration += 1;
        Ok(record)
    }

    fn snapshot<O: Objective + ?Sized>(&mut self, objective: &O) -> Result<TrajectoryRecord> {
        let here = checked_value(objective, self.point.as_slice())?;
        self.evaluations += 1;
        Ok(TrajectoryRecord {
            iteration: self.iteration,
            iterate: self.point.clone(),
            fitness_at_iterate: here,
            expected_fitness: None,
            grad_norm: None,
            evaluations_used: self.evaluations,
        })
    }
}

pub fn fd_run<O: Objective + ?Sized>(
    objective: &O,
    start: &ParamVector,
    cfg: &FdConfig,
) -> std::result::Result<Vec<TrajectoryRecord>, RunError> {
    let setup = check_start(objective, start).and_then(|_| FdState::new(start.clone(), cfg.clone()));
    let mut state = setup.map_err(|cause| RunError { cause, partial: Vec::new() })?;
    run(&mut state, objective, cfg.iterations)
}

pub struct GaState {
    individuals: Vec<Vec<f64>>,
    fitness: Option<Vec<f64>>,
    cfg: GaConfig,
    rng: Rng,
    generation: u64,
    evaluations: u64,
}

impl GaState {
    /// Generation 0: `start` plus `population - 1` mutated copies of it.
    pub fn new(start: ParamVector, cfg: GaConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_from_seed(cfg.seed);
        let base = start.into_inner();
        let mut individuals = Vec::with_capacity(cfg.population);
        individuals.push(base.clone());
        for _ in 1..cfg.population {
            individuals.push(mutate(&base, cfg.mutation_sigma, &mut rng));
        }
        Ok(Self {
            individuals,
            fitness: None,
            cfg,
            rng,
            generation: 0,
            evaluations: 0,
        })
    }

    pub fn individuals(&self) -> &[Vec<f64>] {
        &self.individuals
    }

    fn ensure_evaluated<O: Objective + ?Sized>(&mut self, objective: &O) -> Result<()> {
        if self.fitness.is_none() {
            let f = evaluate_batch(objective, &self.individuals)?;
            self.evaluations += f.len() as u64;
            self.fitness = Some(f);
        }
        Ok(())
    }

    /// Indices sorted best-first; ties keep index order.
    fn ranking(&self) -> Vec<usize> {
        let fit = self.fitness.as_ref().expect("evaluated");
        let mut order: Vec<usize> = (0..fit.len()).collect();
        order.sort_by(|&a, &b| fit[b].total_cmp(&fit[a]));
        order
    }

    fn best_record(&self, order: &[usize]) -> Result<TrajectoryRecord> {
        let fit = self.fitness.as_ref().expect("evaluated");
        let best = order[0];
        Ok(TrajectoryRecord {
            iteration: self.generation,
            iterate: ParamVector::new(self.individuals[best].clone())?,
            fitness_at_iterate: fit[best],
            expected_fitness: None,
            grad_norm: None,
            evaluations_used: self.evaluations,
        })
    }
}

fn mutate<R: rand::Rng + ?Sized>(parent: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    parent
        .iter()
        .map(|x| x + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

impl Optimizer for GaState {
    fn step<O: Objective + ?Sized>(&mut self, objective: &O) -> Result<TrajectoryRecord> {
        self.ensure_evaluated(objective)?;
        let order = self.ranking();
        let record = self.best_record(&order)?;

        let fit = self.fitness.take().expect("evaluated");
        let survivors = &order[..self.cfg.survivors()];
        let elites = &order[..self.cfg.elitism];
        let mut next = Vec::with_capacity(self.cfg.population);
        let mut next_fit = Vec::with_capacity(self.cfg.population);
        for &e in elites {
            next.push(self.individuals[e].clone());
            next_fit.push(fit[e]);
        }
        let mut children = Vec::with_capacity(self.cfg.population - elites.len());
        for _ in elites.len()..self.cfg.population {
            let parent = survivors[self.rng.random_range(0..survivors.len())];
            children.push(mutate(&self.individuals[parent], self.cfg.mutation_sigma, &mut self.rng));
        }
        let child_fit = evaluate_batch(objective, &children)?;
        self.evaluations += child_fit.len() as u64;
        next.extend(children);
        next_fit.extend(child_fit);
        self.individuals = next;
        self.fitness = Some(next_fit);
        self.generation += 1;
        Ok(record)
    }

    fn snapshot<O: Objective + ?Sized>(&mut self, objective: &O) -> Result<TrajectoryRecord> {
        self.ensure_evaluated(objective)?;
        let order = self.ranking();
        self.best_record(&order)
    }
}

pub fn ga_run<O: Objective + ?Sized>(
    objective: &O,
    start: &ParamVector,
    cfg: &GaConfig,
) -> std::result::Result<Vec<TrajectoryRecord>, RunError> {
    let setup = check_start(objective, start).and_then(|_| GaState::new(start.clone(), cfg.clone()));
    let mut state = setup.map_err(|cause| RunError { cause, partial: Vec::new() })?;
    run(&mut state, objective, cfg.iterations)
}

/// Dispatch on the configured optimizer.
pub fn run_optimizer<O: Objective + ?Sized>(
    objective: &O,
    start: &ParamVector,
    cfg: &OptimizerConfig,
) -> std::result::Result<Vec<TrajectoryRecord>, RunError> {
    match cfg {
        OptimizerConfig::Es(c) => es_run(objective, start, c),
        OptimizerConfig::Fd(c) => fd_run(objective, start, c),
        OptimizerConfig::Ga(c) => ga_run(objective, start, c),
    }
}
