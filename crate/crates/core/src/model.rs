//! Heston 3/2-model coefficients, payoffs and parameter checks.

use crate::{Error, Result};

/// Coefficients of `dX = X (mu - alpha X) dt + beta X^{3/2} dW` on `[0, t_end]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    mu: f64,
    alpha: f64,
    beta: f64,
    x0: f64,
    t_end: f64,
}

fn positive(name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason: "must be finite and strictly positive",
        })
    }
}

impl ModelParams {
    pub fn new(mu: f64, alpha: f64, beta: f64, x0: f64, t_end: f64) -> Result<Self> {
        Ok(Self {
            mu: positive("mu", mu)?,
            alpha: positive("alpha", alpha)?,
            beta: positive("beta", beta)?,
            x0: positive("x0", x0)?,
            t_end: positive("t_end", t_end)?,
        })
    }

    /// mu = 1, alpha = 5/2, beta = 1, X(0) = 1, T = 1.
    pub fn reference() -> Self {
        Self {
            mu: 1.0,
            alpha: 2.5,
            beta: 1.0,
            x0: 1.0,
            t_end: 1.0,
        }
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn with_alpha(self, alpha: f64) -> Result<Self> {
        Self::new(self.mu, alpha, self.beta, self.x0, self.t_end)
    }

    pub fn with_t_end(self, t_end: f64) -> Result<Self> {
        Self::new(self.mu, self.alpha, self.beta, self.x0, t_end)
    }
}

fn require_positive_state(x: f64) -> Result<()> {
    if x > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("state must be positive, got {x}")))
    }
}

/// f(x) = x (mu - alpha x)
pub fn drift(p: &ModelParams, x: f64) -> Result<f64> {
    require_positive_state(x)?;
    Ok(drift_unchecked(p, x))
}

/// g(x) = beta x^{3/2}
pub fn diffusion(p: &ModelParams, x: f64) -> Result<f64> {
    require_positive_state(x)?;
    Ok(diffusion_unchecked(p, x))
}

/// Milstein correction coefficient g'(x) g(x) = (3/2) beta^2 x^2.
pub fn diffusion_correction(p: &ModelParams, x: f64) -> Result<f64> {
    require_positive_state(x)?;
    Ok(diffusion_correction_unchecked(p, x))
}

#[inline]
pub(crate) fn drift_unchecked(p: &ModelParams, x: f64) -> f64 {
    x * (p.mu - p.alpha * x)
}

#[inline]
pub(crate) fn diffusion_unchecked(p: &ModelParams, x: f64) -> f64 {
    p.beta * x * x.sqrt()
}

#[inline]
pub(crate) fn diffusion_correction_unchecked(p: &ModelParams, x: f64) -> f64 {
    1.5 * p.beta * p.beta * x * x
}

/// Payoffs with a known Lipschitz constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Payoff {
    Call { strike: f64 },
    Identity,
}

impl Payoff {
    pub fn call(strike: f64) -> Result<Self> {
        if strike.is_finite() && strike >= 0.0 {
            Ok(Payoff::Call { strike })
        } else {
            Err(Error::InvalidParameter {
                name: "strike",
                value: strike,
                reason: "must be finite and non-negative",
            })
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Payoff::Call { strike } => (x - strike).max(0.0),
            Payoff::Identity => x,
        }
    }

    pub fn lipschitz_bound(&self) -> f64 {
        1.0
    }
}

pub fn payoff_eval(phi: &Payoff, x: f64) -> f64 {
    phi.eval(x)
}

/// Which analytical hypotheses a parameter set satisfies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationReport {
    /// Always true for valid parameters: the scheme needs no coefficient condition.
    pub positivity_ok: bool,
    /// alpha > (3/2) beta^2
    pub monotone_ok: bool,
    /// alpha >= (5/2) beta^2
    pub rate_theorem_ok: bool,
    /// 1 + 2 alpha / beta^2
    pub max_moment_order: f64,
}

impl ValidationReport {
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.monotone_ok {
            out.push(
                "alpha <= 1.5 beta^2: one-sided Lipschitz conditions fail; no convergence guarantee"
                    .to_string(),
            );
        }
        if !self.rate_theorem_ok {
            out.push(
                "alpha < 2.5 beta^2: order-one mean-square rate and level-variance bound not guaranteed"
                    .to_string(),
            );
        }
        out
    }
}

pub fn validate_params(p: &ModelParams) -> Result<ValidationReport> {
    let p = ModelParams::new(p.mu, p.alpha, p.beta, p.x0, p.t_end)?;
    let b2 = p.beta * p.beta;
    Ok(ValidationReport {
        positivity_ok: true,
        monotone_ok: p.alpha > 1.5 * b2,
        rate_theorem_ok: p.alpha >= 2.5 * b2,
        max_moment_order: 1.0 + 2.0 * p.alpha / b2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(mu: f64, alpha: f64, beta: f64) -> ModelParams {
        ModelParams::new(mu, alpha, beta, 1.0, 1.0).unwrap()
    }

    #[test]
    fn drift_examples() {
        let p = params(1.0, 2.5, 1.0);
        assert!(drift(&p, 1e-300).unwrap().abs() < 1e-299);
        assert_eq!(drift(&p, 1.0).unwrap(), -1.5);
        assert_eq!(drift(&p, 0.4).unwrap(), 0.0);
        assert!(matches!(drift(&p, 0.0), Err(Error::Domain(_))));
        assert!(drift(&p, -1.0).is_err());
    }

    #[test]
    fn diffusion_examples() {
        assert_eq!(diffusion(&params(1.0, 2.5, 1.0), 1.0).unwrap(), 1.0);
        assert_eq!(diffusion(&params(1.0, 2.5, 1.0), 4.0).unwrap(), 8.0);
        assert_eq!(diffusion(&params(1.0, 2.5, 0.5), 1.0).unwrap(), 0.5);
        assert!(diffusion(&params(1.0, 2.5, 1.0), 0.0).is_err());
    }

    #[test]
    fn correction_examples() {
        assert_eq!(
            diffusion_correction(&params(1.0, 2.5, 1.0), 1.0).unwrap(),
            1.5
        );
        assert_eq!(
            diffusion_correction(&params(1.0, 2.5, 1.0), 2.0).unwrap(),
            6.0
        );
        assert_eq!(
            diffusion_correction(&params(1.0, 2.5, 2.0), 1.0).unwrap(),
            6.0
        );
        assert!(diffusion_correction(&params(1.0, 2.5, 1.0), -3.0).is_err());
    }

    #[test]
    fn correction_matches_finite_difference() {
        let p = params(1.0, 2.5, 0.7);
        let mut x: f64 = 0.01;
        while x <= 100.0 {
            let eps = 1e-5 * x;
            let dg =
                (diffusion(&p, x + eps).unwrap() - diffusion(&p, x - eps).unwrap()) / (2.0 * eps);
            let fd = diffusion(&p, x).unwrap() * dg;
            let exact = diffusion_correction(&p, x).unwrap();
            assert!((fd - exact).abs() <= 1e-8 * exact, "x={x}: {fd} vs {exact}");
            x *= 1.37;
        }
    }

    #[test]
    fn coercivity_at_max_moment_order() {
        for &(alpha, beta) in &[(2.5, 1.0), (1.0, 1.0), (4.0, 0.3)] {
            let p = params(1.0, alpha, beta);
            let order = validate_params(&p).unwrap().max_moment_order;
            let mut x: f64 = 1e-4;
            while x <= 100.0 {
                let g = diffusion(&p, x).unwrap();
                let lhs = x * drift(&p, x).unwrap() + 0.5 * (order - 1.0) * g * g;
                let rhs = p.mu() * x * x;
                assert!(
                    lhs <= rhs + 1e-12 * (rhs + (p.alpha() * x * x * x)),
                    "x={x}"
                );
                x *= 1.21;
            }
        }
    }

    #[test]
    fn payoff_examples() {
        let call = Payoff::call(0.05).unwrap();
        assert!((call.eval(1.0) - 0.95).abs() < 1e-15);
        assert_eq!(call.eval(0.05), 0.0);
        assert_eq!(call.eval(0.0), 0.0);
        assert_eq!(payoff_eval(&Payoff::Identity, 3.7), 3.7);
        assert_eq!(call.lipschitz_bound(), 1.0);
        assert_eq!(Payoff::Identity.lipschitz_bound(), 1.0);
        assert!(Payoff::call(-0.1).is_err());
    }

    #[test]
    fn validation_flags() {
        let r = validate_params(&params(1.0, 2.5, 1.0)).unwrap();
        assert!(r.positivity_ok && r.monotone_ok && r.rate_theorem_ok);
        assert_eq!(r.max_moment_order, 6.0);
        assert!(r.warnings().is_empty());

        let r = validate_params(&params(1.0, 1.0, 1.0)).unwrap();
        assert!(r.positivity_ok && !r.monotone_ok && !r.rate_theorem_ok);
        assert_eq!(r.warnings().len(), 2);

        let r = validate_params(&params(1.0, 2.4, 1.0)).unwrap();
        assert!(r.monotone_ok && !r.rate_theorem_ok);
        assert_eq!(r, validate_params(&params(1.0, 2.4, 1.0)).unwrap());
    }

    #[test]
    fn rejects_nonpositive_fields() {
        assert!(ModelParams::new(0.0, 2.5, 1.0, 1.0, 1.0).is_err());
        assert!(ModelParams::new(1.0, -2.5, 1.0, 1.0, 1.0).is_err());
        assert!(ModelParams::new(1.0, 2.5, 0.0, 1.0, 1.0).is_err());
        assert!(ModelParams::new(1.0, 2.5, 1.0, -1.0, 1.0).is_err());
        assert!(ModelParams::new(1.0, 2.5, 1.0, 1.0, f64::NAN).is_err());
    }
}
