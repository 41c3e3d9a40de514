//! Experiment harnesses: strong convergence against a fine reference on the
//! same Brownian path, level-variance decay, cost versus accuracy, and a
//! numerical check of the one-sided Lipschitz conditions.

use std::ops::RangeInclusive;

use crate::mlmc::{estimate_level_with_base, run_mlmc, LevelStats, MlmcConfig};
use crate::model::{
    diffusion_correction_unchecked, diffusion_unchecked, drift_unchecked, validate_params,
    ModelParams, Payoff,
};
use crate::par::map_chunks;
use crate::randomness::{coarsen, sample_increments, IncrementBlock, StreamKey, StreamRole};
use crate::scheme::{simulate_with_increments, Scheme, RATE_STEP_FACTOR};
use crate::stats::Moments;
use crate::{Error, Result};

/// Stream levels reserved for the studies, apart from the MLMC levels.
const REFERENCE_STREAM_LEVEL: u32 = u32::MAX - 1;
const GRID_STREAM_LEVEL: u32 = u32::MAX - 2;
const MOMENT_STREAM_LEVEL: u32 = u32::MAX - 3;

/// Absolute-plus-relative slack on the monotonicity inequalities.
pub const MONOTONICITY_TOLERANCE: f64 = 1e-9;

/// Ordinary least squares `y = slope * x + intercept`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::DegenerateFit);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx.is_nan() || sxx <= 0.0 {
        return Err(Error::DegenerateFit);
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    /// Strictly decreasing.
    pub step_sizes: Vec<f64>,
    pub rms_errors: Vec<f64>,
    /// Slope and intercept of log2(rms_error) against log2(h); NaN when fewer
    /// than two positive errors are available.
    pub fitted_slope: f64,
    pub intercept: f64,
}

/// `fine` aggregated into `factor`-step groups: repeated [`coarsen`] for
/// powers of two, grouped sums otherwise.
fn aggregate(fine: &IncrementBlock, factor: usize) -> Result<IncrementBlock> {
    if factor.is_power_of_two() {
        let mut block = fine.clone();
        for _ in 0..factor.trailing_zeros() {
            block = coarsen(&block)?;
        }
        Ok(block)
    } else {
        let values = fine
            .values()
            .chunks_exact(factor)
            .map(|c| c.iter().sum())
            .collect();
        IncrementBlock::new(fine.step_size() * factor as f64, values)
    }
}

/// RMS terminal error of the scheme at each coarse step count against the
/// scheme at `ref_steps`, all driven by the same Brownian path.
pub fn mse_vs_reference(
    p: &ModelParams,
    phi: &Payoff,
    sample_count: u64,
    coarse_steps_list: &[usize],
    ref_steps: usize,
    seed: u64,
) -> Result<ConvergenceReport> {
    if sample_count == 0 || ref_steps == 0 || coarse_steps_list.is_empty() {
        return Err(Error::domain("empty convergence study"));
    }
    let mut steps: Vec<usize> = coarse_steps_list.to_vec();
    steps.sort_unstable();
    steps.dedup();
    for &n in &steps {
        if n == 0 || !ref_steps.is_multiple_of(n) {
            return Err(Error::Divisibility {
                reference: ref_steps,
                coarse: n,
            });
        }
    }
    let h_ref = p.t_end() / ref_steps as f64;
    let parts = map_chunks(0..sample_count, |range| -> Result<Vec<f64>> {
        let mut sums = vec![0.0; steps.len()];
        for i in range {
            let key = StreamKey::new(seed, REFERENCE_STREAM_LEVEL, i, StreamRole::Single);
            let fine = sample_increments(key, ref_steps, h_ref)?;
            let reference =
                phi.eval(simulate_with_increments(p, &fine, Scheme::Milstein)?.terminal);
            for (sum, &n) in sums.iter_mut().zip(&steps) {
                let block = aggregate(&fine, ref_steps / n)?;
                let y = phi.eval(simulate_with_increments(p, &block, Scheme::Milstein)?.terminal);
                *sum += (y - reference) * (y - reference);
            }
        }
        Ok(sums)
    });
    let mut totals = vec![0.0; steps.len()];
    for part in parts {
        for (t, s) in totals.iter_mut().zip(part?) {
            *t += s;
        }
    }
    let step_sizes: Vec<f64> = steps.iter().map(|&n| p.t_end() / n as f64).collect();
    let rms_errors: Vec<f64> = totals
        .iter()
        .map(|s| (s / sample_count as f64).sqrt())
        .collect();

    let (xs, ys): (Vec<f64>, Vec<f64>) = step_sizes
        .iter()
        .zip(&rms_errors)
        .filter(|(_, &e)| e > 0.0)
        .map(|(h, e)| (h.log2(), e.log2()))
        .unzip();
    let (fitted_slope, intercept) = fit_slope(&xs, &ys).unwrap_or((f64::NAN, f64::NAN));
    Ok(ConvergenceReport {
        step_sizes,
        rms_errors,
        fitted_slope,
        intercept,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceStudy {
    pub levels: Vec<LevelStats>,
    /// Slope of log2 Var[phi(fine) - phi(coarse)] against level.
    pub diff_slope: f64,
    /// Slope of log2 Var[phi(fine)] against level.
    pub fine_slope: f64,
}

/// Level-difference and single-level variances of coupled pairs on each
/// level (a level-0 entry, if requested, uses single paths).
pub fn variance_decay_study(
    p: &ModelParams,
    phi: &Payoff,
    levels: RangeInclusive<u32>,
    n_samples: u64,
    seed: u64,
) -> Result<VarianceStudy> {
    if n_samples < 2 {
        return Err(Error::domain(
            "variance study needs at least 2 samples per level",
        ));
    }
    let stats = levels
        .map(|l| estimate_level_with_base(p, phi, l, l == 0, n_samples, seed))
        .collect::<Result<Vec<_>>>()?;
    let slope_of = |pick: fn(&LevelStats) -> f64| -> f64 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = stats
            .iter()
            .filter(|s| pick(s) > 0.0)
            .map(|s| (s.level as f64, pick(s).log2()))
            .unzip();
        fit_slope(&xs, &ys).map(|(s, _)| s).unwrap_or(f64::NAN)
    };
    let diff_slope = slope_of(|s| s.var_diff);
    let fine_slope = slope_of(|s| s.var_fine);
    Ok(VarianceStudy {
        levels: stats,
        diff_slope,
        fine_slope,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexityRow {
    pub epsilon: f64,
    pub total_cost: u64,
    pub levels_used: usize,
    pub estimate: f64,
    pub bias_estimate: f64,
    pub statistical_error_estimate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityStudy {
    pub rows: Vec<ComplexityRow>,
    /// Slope of log(total_cost) against log(epsilon).
    pub slope: f64,
}

impl ComplexityStudy {
    /// max / min of cost * epsilon^2 over the grid.
    pub fn normalized_cost_spread(&self) -> f64 {
        let scaled: Vec<f64> = self
            .rows
            .iter()
            .map(|r| r.total_cost as f64 * r.epsilon * r.epsilon)
            .collect();
        let max = scaled.iter().cloned().fold(f64::MIN, f64::max);
        let min = scaled.iter().cloned().fold(f64::MAX, f64::min);
        max / min
    }
}

/// One adaptive MLMC run per accuracy target; `base.epsilon` is replaced.
pub fn complexity_study(
    p: &ModelParams,
    phi: &Payoff,
    epsilons: &[f64],
    base: &MlmcConfig,
) -> Result<ComplexityStudy> {
    let mut rows = Vec::with_capacity(epsilons.len());
    for &epsilon in epsilons {
        let cfg = MlmcConfig { epsilon, ..*base };
        let r = run_mlmc(p, phi, &cfg)?;
        rows.push(ComplexityRow {
            epsilon,
            total_cost: r.total_cost,
            levels_used: r.levels.len(),
            estimate: r.estimate,
            bias_estimate: r.bias_estimate,
            statistical_error_estimate: r.statistical_error_estimate,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.epsilon.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| (r.total_cost as f64).ln()).collect();
    let slope = fit_slope(&xs, &ys).map(|(s, _)| s).unwrap_or(f64::NAN);
    Ok(ComplexityStudy { rows, slope })
}

/// Constants of the one-sided Lipschitz conditions on `f` and `g'g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotonicityConstants {
    /// In (2, 1 + 8 alpha / (9 beta^2)).
    pub q: f64,
    /// In (1, rho_max) with rho_max the root of `a_coef(rho) = 0`.
    pub rho: f64,
    /// Step-size factor: h <= theta_restrict / mu.
    pub theta_restrict: f64,
    pub l0: f64,
    pub l1: f64,
    /// Supremum over s = x + y > 0 of `a_coef s^2 + b_coef s - mu^2`, floored at 0.
    pub c_tilde: f64,
    /// (9/8) rho beta^4 - (3/2) beta^2 alpha - alpha^2, negative.
    pub a_coef: f64,
    /// (3/2) beta^2 mu + 2 mu alpha.
    pub b_coef: f64,
    pub t_end: f64,
}

impl MonotonicityConstants {
    pub fn q_upper(p: &ModelParams) -> f64 {
        1.0 + 8.0 * p.alpha() / (9.0 * p.beta().powi(2))
    }

    pub fn rho_upper(p: &ModelParams) -> f64 {
        let b2 = p.beta().powi(2);
        (1.5 * b2 * p.alpha() + p.alpha().powi(2)) / (1.125 * b2 * b2)
    }

    /// Location of the maximum defining `c_tilde`.
    pub fn vertex(&self) -> f64 {
        self.b_coef / (2.0 * self.a_coef.abs())
    }
}

/// Constants with `q` and `rho` at the midpoints of their admissible ranges.
pub fn derive_monotonicity_constants(p: &ModelParams, t_end: f64) -> Result<MonotonicityConstants> {
    let rho = 0.5 * (1.0 + MonotonicityConstants::rho_upper(p));
    derive_monotonicity_constants_with_rho(p, t_end, rho)
}

pub fn derive_monotonicity_constants_with_rho(
    p: &ModelParams,
    t_end: f64,
    rho: f64,
) -> Result<MonotonicityConstants> {
    if !validate_params(p)?.monotone_ok {
        return Err(Error::domain(
            "monotonicity constants need alpha > 1.5 beta^2",
        ));
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "t_end",
            value: t_end,
            reason: "must be finite and strictly positive",
        });
    }
    let rho_max = MonotonicityConstants::rho_upper(p);
    if !(rho > 1.0 && rho < rho_max) {
        return Err(Error::InvalidParameter {
            name: "rho",
            value: rho,
            reason: "must lie in (1, rho_max)",
        });
    }
    let (mu, alpha, b2) = (p.mu(), p.alpha(), p.beta().powi(2));
    let q = 0.5 * (2.0 + MonotonicityConstants::q_upper(p));
    let a_coef = 1.125 * rho * b2 * b2 - 1.5 * b2 * alpha - alpha * alpha;
    let b_coef = 1.5 * b2 * mu + 2.0 * mu * alpha;
    let c_tilde = (b_coef * b_coef / (4.0 * a_coef.abs()) - mu * mu).max(0.0);
    Ok(MonotonicityConstants {
        q,
        rho,
        theta_restrict: RATE_STEP_FACTOR,
        l0: mu,
        l1: 2.0 * mu + c_tilde * t_end,
        c_tilde,
        a_coef,
        b_coef,
        t_end,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotonicityViolation {
    pub x: f64,
    pub y: f64,
    pub h: f64,
    /// 1 for the `f - g'g/2` condition, 2 for the five-term condition.
    pub inequality: u8,
    pub lhs: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityReport {
    pub checked: usize,
    pub violations: Vec<MonotonicityViolation>,
    /// Largest `lhs - bound` seen per inequality.
    pub worst_margin: [f64; 2],
}

/// Left-hand sides of both inequalities at `(x, y, h)`, as written.
pub fn monotonicity_lhs(
    p: &ModelParams,
    c: &MonotonicityConstants,
    x: f64,
    y: f64,
    h: f64,
) -> [f64; 2] {
    let dx = x - y;
    let df = drift_unchecked(p, x) - drift_unchecked(p, y);
    let dg = diffusion_unchecked(p, x) - diffusion_unchecked(p, y);
    let dgg = diffusion_correction_unchecked(p, x) - diffusion_correction_unchecked(p, y);
    let first = dx * (df - 0.5 * dgg);
    let second = 2.0 * dx * df + (c.q - 1.0) * dg * dg + 0.5 * c.rho * h * dgg * dgg + h * dgg * df
        - h * df * df;
    [first, second]
}

pub fn check_monotonicity(
    p: &ModelParams,
    consts: &MonotonicityConstants,
    grid: &[(f64, f64, f64)],
) -> MonotonicityReport {
    let mut violations = Vec::new();
    let mut worst = [f64::NEG_INFINITY; 2];
    for &(x, y, h) in grid {
        let d2 = (x - y) * (x - y);
        let lhs = monotonicity_lhs(p, consts, x, y, h);
        for (k, (&lhs, l)) in lhs.iter().zip([consts.l0, consts.l1]).enumerate() {
            let bound = l * d2;
            worst[k] = worst[k].max(lhs - bound);
            if lhs > bound + MONOTONICITY_TOLERANCE * (1.0 + d2) {
                violations.push(MonotonicityViolation {
                    x,
                    y,
                    h,
                    inequality: k as u8 + 1,
                    lhs,
                    bound,
                });
            }
        }
    }
    MonotonicityReport {
        checked: grid.len(),
        violations,
        worst_margin: worst,
    }
}

/// `n` triples with x, y log-uniform on [1e-3, 1e2] and h log-uniform on [1e-4, t_end].
pub fn monotonicity_grid(n: usize, t_end: f64, seed: u64) -> Vec<(f64, f64, f64)> {
    let log_uniform = |u: f64, lo: f64, hi: f64| (lo.ln() + u * (hi.ln() - lo.ln())).exp();
    let h_lo = 1e-4f64.min(t_end);
    let mut u = StreamKey::new(seed, GRID_STREAM_LEVEL, 0, StreamRole::Single).uniforms();
    (0..n)
        .map(|_| {
            let x = log_uniform(u.next_open01(), 1e-3, 1e2);
            let y = log_uniform(u.next_open01(), 1e-3, 1e2);
            let h = log_uniform(u.next_open01(), h_lo, t_end);
            (x, y, h)
        })
        .collect()
}

/// Sample means of `Y_N^order` for each step count in `steps_list`, all
/// step counts driven by the same Brownian paths.
pub fn terminal_moments(
    p: &ModelParams,
    steps_list: &[usize],
    n_paths: u64,
    order: i32,
    seed: u64,
) -> Result<Vec<f64>> {
    let finest = steps_list.iter().copied().max().unwrap_or(0);
    if finest == 0 || n_paths == 0 {
        return Err(Error::domain("empty moment study"));
    }
    for &n in steps_list {
        if n == 0 || finest % n != 0 {
            return Err(Error::Divisibility {
                reference: finest,
                coarse: n,
            });
        }
    }
    let h = p.t_end() / finest as f64;
    let parts = map_chunks(0..n_paths, |range| -> Result<Vec<Moments>> {
        let mut m = vec![Moments::new(); steps_list.len()];
        for i in range {
            let key = StreamKey::new(seed, MOMENT_STREAM_LEVEL, i, StreamRole::Single);
            let fine = sample_increments(key, finest, h)?;
            for (acc, &n) in m.iter_mut().zip(steps_list) {
                let block = aggregate(&fine, finest / n)?;
                let y = simulate_with_increments(p, &block, Scheme::Milstein)?.terminal;
                acc.push(y.powi(order));
            }
        }
        Ok(m)
    });
    let mut total = vec![Moments::new(); steps_list.len()];
    for part in parts {
        for (t, m) in total.iter_mut().zip(part?) {
            t.merge(&m);
        }
    }
    Ok(total.iter().map(Moments::mean).collect())
}
