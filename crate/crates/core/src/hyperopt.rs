//! Sequential Bayesian optimization of training hyperparameters.
//!
//! The search space covers both hidden-layer node counts, a log-uniform
//! learning rate and the activation kind. Costs (final training MSE) are
//! standardized and modeled per activation by a Gaussian process with a
//! squared-exponential kernel over `[log10(lr), h1/46, h2/46]`; per-dimension
//! length scales are fit by marginal-likelihood grid search. New proposals
//! maximize expected improvement over 1024 seeded random candidates.
//!
//! Diverged trials stay in the log as a sentinel and enter the surrogate at
//! ten times the worst finite cost observed so far.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::neuralnet::{Activation, ALL_ACTIVATIONS};
use crate::seeding::derive_seed;

/// Inclusive hyperparameter bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperSpace {
    pub h1_min: usize,
    pub h1_max: usize,
    pub h2_min: usize,
    pub h2_max: usize,
    pub lr_min: f64,
    pub lr_max: f64,
    pub activations: Vec<Activation>,
}

impl Default for HyperSpace {
    fn default() -> Self {
        Self {
            h1_min: 4,
            h1_max: 50,
            h2_min: 4,
            h2_max: 50,
            lr_min: 1e-3,
            lr_max: 1.0,
            activations: ALL_ACTIVATIONS.to_vec(),
        }
    }
}

impl HyperSpace {
    fn validate(&self) -> Result<()> {
        if self.h1_min < 1 || self.h1_min > self.h1_max || self.h2_min < 1 || self.h2_min > self.h2_max
        {
            return Err(Error::InvalidConfig("node-count bounds are inverted".into()));
        }
        if !(self.lr_min > 0.0) || self.lr_min > self.lr_max {
            return Err(Error::InvalidConfig(
                "learning-rate range must be positive and ordered".into(),
            ));
        }
        if self.activations.is_empty() {
            return Err(Error::InvalidConfig("need at least one activation".into()));
        }
        Ok(())
    }

    pub fn contains(&self, config: &HyperConfig) -> bool {
        (self.h1_min..=self.h1_max).contains(&config.h1)
            && (self.h2_min..=self.h2_max).contains(&config.h2)
            && config.learning_rate >= self.lr_min
            && config.learning_rate <= self.lr_max
            && self.activations.contains(&config.activation)
    }
}

/// One point in the search space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperConfig {
    pub h1: usize,
    pub h2: usize,
    pub learning_rate: f64,
    pub activation: Activation,
}

/// Observed cost of a trial; divergence is kept as a sentinel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrialCost {
    Finite(f64),
    Diverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub index: usize,
    pub config: HyperConfig,
    pub cost: TrialCost,
    /// Seed handed to the objective for this trial.
    pub seed: u64,
}

/// Expected improvement below `best` for a Gaussian belief `(mean, stddev)`.
/// With zero spread this degenerates to `max(best - mean, 0)`.
pub fn expected_improvement(mean: f64, stddev: f64, best: f64) -> f64 {
    if stddev <= 0.0 {
        return (best - mean).max(0.0);
    }
    let z = (best - mean) / stddev;
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let cdf = 0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2));
    ((best - mean) * cdf + stddev * pdf).max(0.0)
}

/// Minimize `objective` over `space` with `budget` evaluations: `n_init`
/// uniform seeded samples, then expected-improvement proposals. An erroring
/// objective marks its trial diverged and the search continues. Returns the
/// best trial and the full log; deterministic given `seed`.
pub fn optimize(
    space: &HyperSpace,
    mut objective: impl FnMut(&HyperConfig, u64) -> Result<f64>,
    budget: usize,
    n_init: usize,
    seed: u64,
) -> Result<(Trial, Vec<Trial>)> {
    space.validate()?;
    if n_init == 0 || budget < n_init {
        return Err(Error::InvalidConfig(format!(
            "need budget >= n_init >= 1, got budget {budget}, n_init {n_init}"
        )));
    }
    let mut propose_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "proposals"));
    let mut trials: Vec<Trial> = Vec::with_capacity(budget);
    for index in 0..budget {
        let config = if index < n_init {
            sample_config(space, &mut propose_rng)
        } else {
            propose(space, &trials, &mut propose_rng)
        };
        assert!(space.contains(&config), "proposal escaped the search space");
        let trial_seed = derive_seed(seed, &format!("trial-{index}"));
        let cost = match objective(&config, trial_seed) {
            Ok(c) if c.is_finite() => TrialCost::Finite(c),
            _ => TrialCost::Diverged,
        };
        trials.push(Trial {
            index,
            config,
            cost,
            seed: trial_seed,
        });
    }

    let best = trials
        .iter()
        .filter(|t| matches!(t.cost, TrialCost::Finite(_)))
        .min_by(|a, b| match (a.cost, b.cost) {
            (TrialCost::Finite(x), TrialCost::Finite(y)) => x.total_cmp(&y),
            _ => std::cmp::Ordering::Equal,
        })
        .unwrap_or(&trials[0])
        .clone();
    Ok((best, trials))
}

fn sample_config(space: &HyperSpace, rng: &mut ChaCha8Rng) -> HyperConfig {
    // Node counts are relaxed to continuous values and rounded here.
    let h1 = rng
        .gen_range(space.h1_min as f64..=space.h1_max as f64)
        .round() as usize;
    let h2 = rng
        .gen_range(space.h2_min as f64..=space.h2_max as f64)
        .round() as usize;
    let lr = 10f64.powf(rng.gen_range(space.lr_min.log10()..=space.lr_max.log10()));
    let activation = space.activations[rng.gen_range(0..space.activations.len())];
    HyperConfig {
        h1: h1.clamp(space.h1_min, space.h1_max),
        h2: h2.clamp(space.h2_min, space.h2_max),
        learning_rate: lr.clamp(space.lr_min, space.lr_max),
        activation,
    }
}

#[inline]
fn coords(config: &HyperConfig) -> [f64; 3] {
    [
        config.learning_rate.log10(),
        config.h1 as f64 / 46.0,
        config.h2 as f64 / 46.0,
    ]
}

/// Costs with the divergence sentinel replaced by 10x the worst finite cost
/// seen so far (1.0 when nothing finite has been observed yet).
fn effective_costs(trials: &[Trial]) -> Vec<f64> {
    let worst = trials
        .iter()
        .filter_map(|t| match t.cost {
            TrialCost::Finite(c) => Some(c),
            TrialCost::Diverged => None,
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let penalty = if worst.is_finite() { 10.0 * worst } else { 1.0 };
    trials
        .iter()
        .map(|t| match t.cost {
            TrialCost::Finite(c) => c,
            TrialCost::Diverged => penalty,
        })
        .collect()
}

fn propose(space: &HyperSpace, trials: &[Trial], rng: &mut ChaCha8Rng) -> HyperConfig {
    let costs = effective_costs(trials);
    let mean = costs.iter().sum::<f64>() / costs.len() as f64;
    let var = costs.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / costs.len() as f64;
    let std = if var.sqrt() > 0.0 { var.sqrt() } else { 1.0 };
    let standardized: Vec<f64> = costs.iter().map(|c| (c - mean) / std).collect();
    let best_std = standardized.iter().copied().fold(f64::INFINITY, f64::min);

    // One surrogate per activation kind.
    let mut gps: Vec<(Activation, Option<Gp>)> = Vec::with_capacity(space.activations.len());
    for &act in &space.activations {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (t, y) in trials.iter().zip(&standardized) {
            if t.config.activation == act {
                xs.push(coords(&t.config));
                ys.push(*y);
            }
        }
        gps.push((act, fit_gp(&xs, &ys)));
    }

    let mut best_candidate = None;
    let mut best_ei = f64::NEG_INFINITY;
    for _ in 0..1024 {
        let candidate = sample_config(space, rng);
        let (mu, sigma) = match gps
            .iter()
            .find(|(a, _)| *a == candidate.activation)
            .and_then(|(_, gp)| gp.as_ref())
        {
            Some(gp) => gp.predict(&coords(&candidate)),
            None => (0.0, 1.0), // unexplored activation: prior belief
        };
        let ei = expected_improvement(mu, sigma, best_std);
        if ei > best_ei {
            best_ei = ei;
            best_candidate = Some(candidate);
        }
    }
    best_candidate.expect("candidate sampling always yields at least one config")
}

// ---------------------------------------------------------------------------
// Gaussian process surrogate
// ---------------------------------------------------------------------------

const LENGTH_SCALE_GRID: [f64; 4] = [0.25, 0.5, 1.0, 2.0];
const BASE_JITTER: f64 = 1e-8;

struct Gp {
    xs: Vec<[f64; 3]>,
    length_scales: [f64; 3],
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
}

fn kernel(a: &[f64; 3], b: &[f64; 3], ls: &[f64; 3]) -> f64 {
    let mut acc = 0.0;
    for d in 0..3 {
        let diff = (a[d] - b[d]) / ls[d];
        acc += diff * diff;
    }
    (-0.5 * acc).exp()
}

/// Fit per-dimension length scales by maximizing the log marginal likelihood
/// over a small grid. Returns `None` for an empty observation set.
fn fit_gp(xs: &[[f64; 3]], ys: &[f64]) -> Option<Gp> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len();
    let y = DVector::from_column_slice(ys);
    let mut best: Option<(f64, Gp)> = None;
    for &l0 in &LENGTH_SCALE_GRID {
        for &l1 in &LENGTH_SCALE_GRID {
            for &l2 in &LENGTH_SCALE_GRID {
                let ls = [l0, l1, l2];
                let Some((chol, jitter)) = cholesky_with_jitter(xs, &ls) else {
                    continue;
                };
                let alpha = chol.solve(&y);
                let log_det: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum();
                let logml = -0.5 * y.dot(&alpha)
                    - log_det
                    - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
                if best.as_ref().map_or(true, |(b, _)| logml > *b) {
                    best = Some((
                        logml,
                        Gp {
                            xs: xs.to_vec(),
                            length_scales: ls,
                            chol,
                            alpha,
                            jitter,
                        },
                    ));
                }
            }
        }
    }
    best.map(|(_, gp)| gp)
}

fn cholesky_with_jitter(xs: &[[f64; 3]], ls: &[f64; 3]) -> Option<(Cholesky<f64, Dyn>, f64)> {
    let n = xs.len();
    let mut jitter = BASE_JITTER;
    // Duplicate observations can make the kernel matrix singular; escalate
    // the diagonal jitter a few times before giving up on this length scale.
    for _ in 0..4 {
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                k[(i, j)] = kernel(&xs[i], &xs[j], ls);
            }
            k[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(k) {
            return Some((chol, jitter));
        }
        jitter *= 100.0;
    }
    None
}

impl Gp {
    /// Posterior mean and standard deviation at `x` (standardized units).
    fn predict(&self, x: &[f64; 3]) -> (f64, f64) {
        let kstar =
            DVector::from_iterator(self.xs.len(), self.xs.iter().map(|xi| kernel(xi, x, &self.length_scales)));
        let mean = kstar.dot(&self.alpha);
        let solved = self.chol.solve(&kstar);
        let var = 1.0 + self.jitter - kstar.dot(&solved);
        (mean, var.max(0.0).sqrt())
    }
}

// ---------------------------------------------------------------------------
// Trial log CSV
// ---------------------------------------------------------------------------

/// Persist the trial log. Diverged trials write the literal `diverged` in
/// the cost column.
pub fn write_trial_log(path: &std::path::Path, trials: &[Trial]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["trial", "h1", "h2", "learning_rate", "activation", "cost", "seed"])?;
    for t in trials {
        let cost = match t.cost {
            TrialCost::Finite(c) => c.to_string(),
            TrialCost::Diverged => "diverged".to_string(),
        };
        writer.write_record([
            t.index.to_string(),
            t.config.h1.to_string(),
            t.config.h2.to_string(),
            t.config.learning_rate.to_string(),
            t.config.activation.as_str().to_string(),
            cost,
            t.seed.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}
