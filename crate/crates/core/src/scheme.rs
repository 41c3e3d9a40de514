//! Split-step implicit Milstein stepper and an Euler–Maruyama baseline.
//!
//! One Milstein step is
//!
//! ```text
//! Z_n     = Y_n + h f(Z_n) - (h/2) g'g(Z_n)
//! Y_{n+1} = Z_n + g(Z_n) dW_n + (1/2) g'g(Z_n) dW_n^2
//! ```
//!
//! For the 3/2-model the stage is the quadratic
//! `h(alpha + 3/4 beta^2) Z^2 + (1 - h mu) Z - Y_n = 0`, whose root product
//! `-Y_n / (h(alpha + 3/4 beta^2))` is negative, so there is exactly one
//! positive root. The update equals `(2/3) Z + ((sqrt3/2) beta Z dW + sqrt(Z/3))^2`
//! and is therefore at least `(2/3) Z > 0` for every increment.

use crate::model::{diffusion_correction_unchecked, diffusion_unchecked, ModelParams};
use crate::randomness::{coarsen, sample_increments, IncrementBlock, StreamKey};
use crate::{Error, Result};

/// Step-size factor below which the rate analysis applies (h <= 0.9 / mu).
pub const RATE_STEP_FACTOR: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeState {
    pub y: f64,
    pub z: f64,
    pub step_index: u64,
}

impl SchemeState {
    pub fn initial(p: &ModelParams) -> Self {
        Self {
            y: p.x0(),
            z: p.x0(),
            step_index: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Milstein,
    EulerMaruyama,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathResult {
    pub terminal: f64,
    pub n_steps: usize,
    pub positivity_violations: usize,
    /// Scheme steps executed.
    pub cost: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupledPair {
    pub fine_terminal: f64,
    pub coarse_terminal: f64,
    pub cost: u64,
    pub fine_brownian_sum: f64,
    pub coarse_brownian_sum: f64,
}

fn check_step(h: f64) -> Result<()> {
    if h.is_finite() && h > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "step size must be positive, got {h}"
        )))
    }
}

/// Warning text when `h` exceeds the step restriction of the rate analysis.
pub fn rate_step_warning(p: &ModelParams, h: f64) -> Option<String> {
    let limit = RATE_STEP_FACTOR / p.mu();
    (h > limit).then(|| {
        format!("step size {h} exceeds {limit} (0.9/mu); positivity still holds, the order-one rate is not guaranteed")
    })
}

/// Unique positive root of the implicit stage equation.
pub fn implicit_stage(p: &ModelParams, y: f64, h: f64) -> Result<f64> {
    if !(y > 0.0 && y.is_finite()) {
        return Err(Error::domain(format!(
            "stage input must be positive, got {y}"
        )));
    }
    check_step(h)?;
    Ok(stage_unchecked(p, y, h))
}

#[inline]
pub(crate) fn stage_unchecked(p: &ModelParams, y: f64, h: f64) -> f64 {
    let beta = p.beta();
    let a = h * (p.alpha() + 0.75 * beta * beta);
    let b = 1.0 - h * p.mu();
    let root = (b * b + 4.0 * a * y).sqrt();
    if b >= 0.0 {
        // conjugate form, no cancellation between -b and the root
        2.0 * y / (b + root)
    } else {
        (root - b) / (2.0 * a)
    }
}

/// `Z + beta Z^{3/2} dW + (3/4) beta^2 Z^2 dW^2`
pub fn milstein_update(p: &ModelParams, z: f64, dw: f64, h: f64) -> Result<f64> {
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::domain(format!(
            "stage value must be positive, got {z}"
        )));
    }
    check_step(h)?;
    Ok(update_unchecked(p, z, dw))
}

#[inline]
pub(crate) fn update_unchecked(p: &ModelParams, z: f64, dw: f64) -> f64 {
    z + diffusion_unchecked(p, z) * dw + 0.5 * diffusion_correction_unchecked(p, z) * dw * dw
}

/// Completed-square form of [`milstein_update`].
pub fn milstein_update_square_form(p: &ModelParams, z: f64, dw: f64) -> f64 {
    let s = 0.5 * 3f64.sqrt() * p.beta() * z * dw + (z / 3.0).sqrt();
    2.0 / 3.0 * z + s * s
}

pub fn milstein_step(p: &ModelParams, state: SchemeState, dw: f64, h: f64) -> Result<SchemeState> {
    let z = implicit_stage(p, state.y, h)?;
    Ok(SchemeState {
        y: milstein_update(p, z, dw, h)?,
        z,
        step_index: state.step_index + 1,
    })
}

/// Explicit Euler–Maruyama step. Uses `|y|^{3/2}` in the diffusion so the
/// iteration stays defined after the path crosses zero.
pub fn em_step(p: &ModelParams, y: f64, dw: f64, h: f64) -> f64 {
    let a = y.abs();
    y + h * y * (p.mu() - p.alpha() * y) + p.beta() * a * a.sqrt() * dw
}

/// Run a path over a given increment block, starting from `x0`.
pub fn simulate_with_increments(
    p: &ModelParams,
    increments: &IncrementBlock,
    scheme: Scheme,
) -> Result<PathResult> {
    let h = increments.step_size();
    let mut y = p.x0();
    let mut violations = 0;
    match scheme {
        Scheme::Milstein => {
            for &dw in increments.values() {
                y = update_unchecked(p, stage_unchecked(p, y, h), dw);
                if y.is_nan() || y <= 0.0 {
                    return Err(Error::domain(format!(
                        "Milstein iterate left (0, inf): {y} (h = {h})"
                    )));
                }
            }
        }
        Scheme::EulerMaruyama => {
            for &dw in increments.values() {
                y = em_step(p, y, dw, h);
                if y <= 0.0 {
                    violations += 1;
                }
            }
        }
    }
    Ok(PathResult {
        terminal: y,
        n_steps: increments.len(),
        positivity_violations: violations,
        cost: increments.len() as u64,
    })
}

/// Terminal value of a path with `n_steps` uniform steps on `[0, T]`.
pub fn simulate_path(
    p: &ModelParams,
    n_steps: usize,
    key: StreamKey,
    scheme: Scheme,
) -> Result<PathResult> {
    let h = p.t_end() / n_steps as f64;
    let dw = sample_increments(key, n_steps, h)?;
    simulate_with_increments(p, &dw, scheme)
}

/// Fine path with `2^level` steps and coarse path with `2^(level-1)` steps,
/// the coarse one driven by pairwise sums of the fine increments.
pub fn simulate_coupled_pair(p: &ModelParams, level: u32, key: StreamKey) -> Result<CoupledPair> {
    if level == 0 {
        return Err(Error::domain("coupled pairs need level >= 1"));
    }
    let n_fine = 1usize << level;
    let fine_dw = sample_increments(key, n_fine, p.t_end() / n_fine as f64)?;
    let coarse_dw = coarsen(&fine_dw)?;
    let fine = simulate_with_increments(p, &fine_dw, Scheme::Milstein)?;
    let coarse = simulate_with_increments(p, &coarse_dw, Scheme::Milstein)?;
    Ok(CoupledPair {
        fine_terminal: fine.terminal,
        coarse_terminal: coarse.terminal,
        cost: fine.cost + coarse.cost,
        fine_brownian_sum: fine_dw.brownian_sum(),
        coarse_brownian_sum: coarse_dw.brownian_sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randomness::StreamRole;
    use crate::stats::Moments;
    use proptest::prelude::*;

    fn reference() -> ModelParams {
        ModelParams::reference()
    }

    fn stage_residual(p: &ModelParams, y: f64, h: f64, z: f64) -> f64 {
        y + h * z * (p.mu() - p.alpha() * z) - 0.75 * p.beta() * p.beta() * h * z * z - z
    }

    /// Bisection on the stage residual, independent of the closed form.
    fn bisect_stage(p: &ModelParams, y: f64, h: f64) -> f64 {
        let mut lo = 0.0;
        let mut hi = 1.0;
        while stage_residual(p, y, h, hi) > 0.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if stage_residual(p, y, h, mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn stage_examples_against_bisection() {
        let p = reference();
        for (h, expected) in [
            (0.5, 0.6455619),
            (1.0 / 16.0, 0.8936388),
            (1.0, 13f64.sqrt() / 6.5),
        ] {
            let z = implicit_stage(&p, 1.0, h).unwrap();
            let oracle = bisect_stage(&p, 1.0, h);
            assert!((z - oracle).abs() < 1e-10, "h={h}: {z} vs {oracle}");
            assert!((z - expected).abs() < 1e-7, "h={h}: {z} vs {expected}");
        }
        assert!((implicit_stage(&p, 1.0, 1.0).unwrap() - 13f64.sqrt() / 6.5).abs() < 1e-15);
    }

    #[test]
    fn stage_rejects_bad_inputs() {
        let p = reference();
        assert!(implicit_stage(&p, 0.0, 0.1).is_err());
        assert!(implicit_stage(&p, -1.0, 0.1).is_err());
        assert!(implicit_stage(&p, 1.0, 0.0).is_err());
        assert!(milstein_update(&p, 0.0, 0.1, 0.1).is_err());
    }

    #[test]
    fn update_examples() {
        let p = reference();
        assert_eq!(milstein_update(&p, 0.37, 0.0, 0.1).unwrap(), 0.37);
        let up = milstein_update(&p, 0.6455619, 0.1, 0.5).unwrap();
        assert!((up - 0.7005564).abs() < 1e-7, "{up}");
        let down = milstein_update(&p, 0.6455619, -2.0, 0.5).unwrap();
        assert!((down - 0.8584349).abs() < 1e-7, "{down}");
        // minimum over dW is (2/3) z, attained at dW = -2 / (3 beta sqrt z)
        let z: f64 = 0.6455619;
        let at_min = milstein_update(&p, z, -2.0 / (3.0 * z.sqrt()), 0.5).unwrap();
        assert!((at_min - 2.0 / 3.0 * z).abs() < 1e-15);
    }

    #[test]
    fn step_examples() {
        let p = reference();
        let s = SchemeState {
            y: 1.0,
            z: 1.0,
            step_index: 3,
        };
        let still = milstein_step(&p, s, 0.0, 0.5).unwrap();
        assert_eq!(still.y, implicit_stage(&p, 1.0, 0.5).unwrap());
        assert_eq!(still.step_index, 4);
        let moved = milstein_step(&p, s, 0.1, 0.5).unwrap();
        assert!((moved.y - 0.7005564).abs() < 1e-7);
        assert!((moved.z - 0.6455619).abs() < 1e-7);
    }

    #[test]
    fn em_examples() {
        let p = reference();
        assert_eq!(em_step(&p, 1.0, 0.0, 0.5), 0.25);
        assert_eq!(em_step(&p, 1.0, -3.0, 0.5), -2.75);
        assert_eq!(em_step(&p, 0.0, 1.7, 0.5), 0.0);
    }

    #[test]
    fn em_goes_negative_where_milstein_does_not() {
        let p = reference();
        let mut em_bad = 0;
        for i in 0..2000 {
            let key = StreamKey::new(5, 0, i, StreamRole::Single);
            em_bad += simulate_path(&p, 4, key, Scheme::EulerMaruyama)
                .unwrap()
                .positivity_violations;
            let m = simulate_path(&p, 4, key, Scheme::Milstein).unwrap();
            assert_eq!(m.positivity_violations, 0);
            assert!(m.terminal > 0.0);
        }
        assert!(em_bad > 0);
    }

    #[test]
    fn path_single_deterministic_step() {
        let p = reference();
        let dw = IncrementBlock::new(p.t_end(), vec![0.0]).unwrap();
        let r = simulate_with_increments(&p, &dw, Scheme::Milstein).unwrap();
        assert_eq!(r.terminal, implicit_stage(&p, p.x0(), p.t_end()).unwrap());
        assert_eq!(r.cost, 1);
        assert_eq!(r.n_steps, 1);
    }

    #[test]
    fn path_is_reproducible_and_costed() {
        let p = reference();
        let key = StreamKey::new(1, 6, 42, StreamRole::Single);
        let a = simulate_path(&p, 64, key, Scheme::Milstein).unwrap();
        let b = simulate_path(&p, 64, key, Scheme::Milstein).unwrap();
        assert_eq!(a.terminal.to_bits(), b.terminal.to_bits());
        assert_eq!(a.cost, 64);
        assert_eq!(a.positivity_violations, 0);
    }

    #[test]
    fn coupled_pair_counts() {
        let p = reference();
        let pair = simulate_coupled_pair(&p, 1, StreamKey::new(0, 1, 0, StreamRole::Fine)).unwrap();
        assert_eq!(pair.cost, 3);
        assert_eq!(
            pair.fine_brownian_sum.to_bits(),
            pair.coarse_brownian_sum.to_bits()
        );
        let pair = simulate_coupled_pair(&p, 7, StreamKey::new(0, 7, 3, StreamRole::Fine)).unwrap();
        assert_eq!(pair.cost, 128 + 64);
        assert_eq!(
            pair.fine_brownian_sum.to_bits(),
            pair.coarse_brownian_sum.to_bits()
        );
        assert!(simulate_coupled_pair(&p, 0, StreamKey::new(0, 0, 0, StreamRole::Fine)).is_err());
    }

    #[test]
    fn coupled_difference_variance_shrinks() {
        let p = reference();
        let var_at = |level: u32| -> f64 {
            (0..4000u64)
                .map(|i| {
                    let key = StreamKey::new(11, level, i, StreamRole::Fine);
                    let pair = simulate_coupled_pair(&p, level, key).unwrap();
                    pair.fine_terminal - pair.coarse_terminal
                })
                .collect::<Moments>()
                .variance()
        };
        let ratio = var_at(4) / var_at(6);
        // two levels of h^2 decay: about 16
        assert!(ratio > 8.0 && ratio < 32.0, "ratio {ratio}");
    }

    #[test]
    fn rate_warning_threshold() {
        let p = reference();
        assert!(rate_step_warning(&p, 0.5).is_none());
        assert!(rate_step_warning(&p, 0.9).is_none());
        assert!(rate_step_warning(&p, 1.0).is_some());
    }

    proptest! {
        #[test]
        fn step_positive_and_stage_consistent(
            log_y in (1e-6f64).ln()..(1e3f64).ln(),
            log_h in (1e-4f64).ln()..(10f64).ln(),
            u in -1.0f64..1.0,
        ) {
            let p = reference();
            let (y, h) = (log_y.exp(), log_h.exp());
            let dw = 10.0 * h.sqrt() * u;
            let z = implicit_stage(&p, y, h).unwrap();
            prop_assert!(z > 0.0);
            prop_assert!(stage_residual(&p, y, h, z).abs() / y.max(1.0) <= 1e-12);
            // Vieta: root product negative, so the other root is negative
            let a = h * (p.alpha() + 0.75);
            prop_assert!(-y / a < 0.0);
            let other = -(1.0 - h * p.mu()) / a - z;
            prop_assert!(other < 0.0);
            let direct = milstein_update(&p, z, dw, h).unwrap();
            let square = milstein_update_square_form(&p, z, dw);
            prop_assert!(direct > 0.0);
            prop_assert!((direct - square).abs() <= 1e-12 * direct.abs());
        }
    }
}
