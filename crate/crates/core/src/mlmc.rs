//! Adaptive multilevel Monte Carlo estimator on the geometric grid
//! `h_l = T / 2^l`.
//!
//! Level `l_min` averages single paths; every finer level averages
//! fine-minus-coarse payoff differences from coupled pairs. Samples are
//! keyed by `(seed, level, sample_index)`, so extending a level only adds
//! new indices and never changes the existing ones.

use std::ops::Range;

use crate::model::{validate_params, ModelParams, Payoff};
use crate::par::map_chunks;
use crate::randomness::{StreamKey, StreamRole};
use crate::scheme::{simulate_coupled_pair, simulate_path, Scheme};
use crate::stats::Moments;
use crate::{Error, Result};

/// Stream level reserved for plain (single-level) Monte Carlo.
pub const PLAIN_MC_LEVEL: u32 = u32::MAX;

/// Upper bound on the finest level (2^30 steps per path).
pub const MAX_LEVEL: u32 = 30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlmcConfig {
    /// Target root-mean-square error, in (0, 1/e).
    pub epsilon: f64,
    pub l_min: u32,
    pub l_max: u32,
    /// Warm-up samples on each newly opened level.
    pub initial_samples: u64,
    /// Weak-rate exponent used in the bias extrapolation.
    pub chi: f64,
    pub seed: u64,
}

impl MlmcConfig {
    pub fn new(epsilon: f64, seed: u64) -> Self {
        Self {
            epsilon,
            l_min: 0,
            l_max: 14,
            initial_samples: 100,
            chi: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let e_inv = (-1.0f64).exp();
        if !(self.epsilon > 0.0 && self.epsilon < e_inv) {
            return Err(Error::InvalidParameter {
                name: "epsilon",
                value: self.epsilon,
                reason: "must lie in (0, 1/e)",
            });
        }
        if self.l_max <= self.l_min || self.l_max > MAX_LEVEL {
            return Err(Error::InvalidParameter {
                name: "l_max",
                value: self.l_max as f64,
                reason: "must exceed l_min (bias needs two levels) and be at most 30",
            });
        }
        if self.initial_samples < 2 {
            return Err(Error::InvalidParameter {
                name: "initial_samples",
                value: self.initial_samples as f64,
                reason: "must be at least 2",
            });
        }
        if !(self.chi > 0.0 && self.chi.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "chi",
                value: self.chi,
                reason: "must be finite and strictly positive",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelStats {
    pub level: u32,
    pub n_samples: u64,
    /// Mean of phi(fine) - phi(coarse), or of phi(path) on the base level.
    pub mean_diff: f64,
    pub var_diff: f64,
    /// Mean and variance of phi(fine) alone.
    pub mean_fine: f64,
    pub var_fine: f64,
    /// Scheme steps per sample.
    pub cost_per_sample: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlmcResult {
    pub estimate: f64,
    pub levels: Vec<LevelStats>,
    /// Scheme steps executed over all levels.
    pub total_cost: u64,
    pub bias_estimate: f64,
    pub statistical_error_estimate: f64,
}

impl MlmcResult {
    pub fn finest_level(&self) -> u32 {
        self.levels.last().map(|l| l.level).unwrap_or_default()
    }
}

/// Running sums for one level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelAccumulator {
    level: u32,
    base: bool,
    diff: Moments,
    fine: Moments,
    cost: u64,
}

#[derive(Default)]
struct Partial {
    diff: Moments,
    fine: Moments,
    cost: u64,
}

impl LevelAccumulator {
    pub fn new(level: u32, base: bool) -> Self {
        Self {
            level,
            base,
            diff: Moments::new(),
            fine: Moments::new(),
            cost: 0,
        }
    }

    pub fn n_samples(&self) -> u64 {
        self.diff.count()
    }

    pub fn cost_per_sample(&self) -> u64 {
        if self.base {
            1 << self.level
        } else {
            (1 << self.level) + (1 << (self.level - 1))
        }
    }

    /// Add samples `n_samples()..target`.
    pub fn extend_to(
        &mut self,
        p: &ModelParams,
        phi: &Payoff,
        seed: u64,
        target: u64,
    ) -> Result<()> {
        let start = self.n_samples();
        if target <= start {
            return Ok(());
        }
        let parts = map_chunks(start..target, |range| self.run_chunk(p, phi, seed, range));
        for part in parts {
            let part = part?;
            self.diff.merge(&part.diff);
            self.fine.merge(&part.fine);
            self.cost += part.cost;
        }
        Ok(())
    }

    fn run_chunk(
        &self,
        p: &ModelParams,
        phi: &Payoff,
        seed: u64,
        range: Range<u64>,
    ) -> Result<Partial> {
        let mut out = Partial::default();
        for i in range {
            if self.base {
                let key = StreamKey::new(seed, self.level, i, StreamRole::Single);
                let path = simulate_path(p, 1 << self.level, key, Scheme::Milstein)?;
                let v = phi.eval(path.terminal);
                out.diff.push(v);
                out.fine.push(v);
                out.cost += path.cost;
            } else {
                let key = StreamKey::new(seed, self.level, i, StreamRole::Fine);
                let pair = simulate_coupled_pair(p, self.level, key)?;
                let fine = phi.eval(pair.fine_terminal);
                out.diff.push(fine - phi.eval(pair.coarse_terminal));
                out.fine.push(fine);
                out.cost += pair.cost;
            }
        }
        Ok(out)
    }

    pub fn stats(&self, t_end: f64) -> LevelStats {
        LevelStats {
            level: self.level,
            n_samples: self.n_samples(),
            mean_diff: self.diff.mean(),
            var_diff: self.diff.variance(),
            mean_fine: self.fine.mean(),
            var_fine: self.fine.variance(),
            cost_per_sample: self.cost_per_sample() as f64,
            h: t_end / (1u64 << self.level) as f64,
        }
    }

    pub fn total_cost(&self) -> u64 {
        self.cost
    }
}

/// Level estimator with `n` samples: single paths at level 0, coupled
/// fine/coarse differences above.
pub fn estimate_level(
    p: &ModelParams,
    phi: &Payoff,
    level: u32,
    n: u64,
    seed: u64,
) -> Result<LevelStats> {
    estimate_level_with_base(p, phi, level, level == 0, n, seed)
}

/// As [`estimate_level`], with the base/difference role chosen explicitly
/// (the base level is `l_min`, which need not be 0).
pub fn estimate_level_with_base(
    p: &ModelParams,
    phi: &Payoff,
    level: u32,
    base: bool,
    n: u64,
    seed: u64,
) -> Result<LevelStats> {
    if n < 2 {
        return Err(Error::domain("a level estimate needs at least 2 samples"));
    }
    if level > MAX_LEVEL || (!base && level == 0) {
        return Err(Error::domain(format!("invalid level {level}")));
    }
    let mut acc = LevelAccumulator::new(level, base);
    acc.extend_to(p, phi, seed, n)?;
    Ok(acc.stats(p.t_end()))
}

/// Cost-optimal sample counts for `sum V_l / N_l <= epsilon^2 / 2`.
///
/// Levels with zero estimated variance get `floor` samples.
pub fn allocate_samples(levels: &[LevelStats], epsilon: f64, floor: u64) -> Vec<u64> {
    let s: f64 = levels
        .iter()
        .map(|l| (l.var_diff * l.cost_per_sample).sqrt())
        .sum();
    levels
        .iter()
        .map(|l| {
            if l.var_diff <= 0.0 {
                floor
            } else {
                (2.0 / (epsilon * epsilon) * (l.var_diff / l.cost_per_sample).sqrt() * s).ceil()
                    as u64
            }
        })
        .collect()
}

fn summarize(levels: &[LevelAccumulator], p: &ModelParams, cfg: &MlmcConfig) -> MlmcResult {
    let stats: Vec<LevelStats> = levels.iter().map(|a| a.stats(p.t_end())).collect();
    let estimate = stats.iter().fold(0.0, |acc, l| acc + l.mean_diff);
    let stat_var: f64 = stats.iter().map(|l| l.var_diff / l.n_samples as f64).sum();
    let finest = stats.last().expect("at least one level");
    let bias = finest.mean_diff.abs() / (2f64.powf(cfg.chi) - 1.0);
    MlmcResult {
        estimate,
        total_cost: levels.iter().map(LevelAccumulator::total_cost).sum(),
        levels: stats,
        bias_estimate: bias,
        statistical_error_estimate: stat_var.sqrt(),
    }
}

/// Adaptive MLMC driver targeting mean-square error below `epsilon^2`,
/// split evenly between squared bias and estimator variance.
pub fn run_mlmc(p: &ModelParams, phi: &Payoff, cfg: &MlmcConfig) -> Result<MlmcResult> {
    cfg.validate()?;
    validate_params(p)?;
    let eps = cfg.epsilon;
    let bias_tol = eps / 2f64.sqrt();
    let var_tol = 0.5 * eps * eps;

    let warm_top = (cfg.l_min + 2).min(cfg.l_max);
    let mut levels: Vec<LevelAccumulator> = (cfg.l_min..=warm_top)
        .map(|l| LevelAccumulator::new(l, l == cfg.l_min))
        .collect();

    loop {
        for acc in levels.iter_mut() {
            let target = acc.n_samples().max(cfg.initial_samples);
            acc.extend_to(p, phi, cfg.seed, target)?;
        }
        let stats: Vec<LevelStats> = levels.iter().map(|a| a.stats(p.t_end())).collect();
        let targets = allocate_samples(&stats, eps, cfg.initial_samples);
        let mut extended = false;
        for (acc, &target) in levels.iter_mut().zip(&targets) {
            if target > acc.n_samples() {
                acc.extend_to(p, phi, cfg.seed, target)?;
                extended = true;
            }
        }
        if extended {
            continue;
        }

        let result = summarize(&levels, p, cfg);
        let stat_ok = result.statistical_error_estimate.powi(2) <= var_tol;
        if result.bias_estimate <= bias_tol && stat_ok {
            return Ok(result);
        }
        if result.bias_estimate > bias_tol {
            let top = result.finest_level();
            if top >= cfg.l_max {
                return Err(Error::NonConvergence(Box::new(result)));
            }
            levels.push(LevelAccumulator::new(top + 1, false));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleMcResult {
    pub mean: f64,
    pub std_error: f64,
    pub cost: u64,
}

/// Plain Monte Carlo mean of `phi(Y_N)` over independent Milstein paths.
pub fn run_single_mc(
    p: &ModelParams,
    phi: &Payoff,
    n_steps: usize,
    n_samples: u64,
    seed: u64,
) -> Result<SingleMcResult> {
    if n_samples < 2 {
        return Err(Error::domain("plain Monte Carlo needs at least 2 samples"));
    }
    if n_steps == 0 {
        return Err(Error::domain("n_steps must be at least 1"));
    }
    let parts = map_chunks(0..n_samples, |range| -> Result<(Moments, u64)> {
        let mut m = Moments::new();
        let mut cost = 0;
        for i in range {
            let key = StreamKey::new(seed, PLAIN_MC_LEVEL, i, StreamRole::Single);
            let path = simulate_path(p, n_steps, key, Scheme::Milstein)?;
            m.push(phi.eval(path.terminal));
            cost += path.cost;
        }
        Ok((m, cost))
    });
    let mut total = Moments::new();
    let mut cost = 0;
    for part in parts {
        let (m, c) = part?;
        total.merge(&m);
        cost += c;
    }
    Ok(SingleMcResult {
        mean: total.mean(),
        std_error: total.std_error(),
        cost,
    })
}
