//! Run configuration, experiment dispatch and CSV output.
//!
//! Config files are line-oriented `key = value` text with `#` comments.
//! Lists are comma separated. Missing keys keep their defaults, unknown keys
//! are rejected.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::analysis::{
    check_monotonicity, complexity_study, derive_monotonicity_constants,
    derive_monotonicity_constants_with_rho, monotonicity_grid, mse_vs_reference,
    variance_decay_study,
};
use crate::mlmc::{run_mlmc, MlmcConfig, MlmcResult};
use crate::model::{validate_params, ModelParams, Payoff};
use crate::scheme::rate_step_warning;
use crate::{with_workers, Error, Result};

/// Overrides the default output directory when neither the file nor the
/// command line sets one.
pub const OUT_DIR_ENV: &str = "HESTON32_OUT_DIR";

const DEFAULT_OUT_DIR: &str = "results";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayoffKind {
    Call,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mu: f64,
    pub alpha: f64,
    pub beta: f64,
    pub x0: f64,
    pub t_end: f64,
    pub payoff: PayoffKind,
    pub strike: f64,
    /// Accuracy target of `price`.
    pub epsilon: f64,
    /// Accuracy grid of `complexity`.
    pub epsilons: Vec<f64>,
    pub l_min: u32,
    pub l_max: u32,
    pub initial_samples: u64,
    pub chi: f64,
    pub convergence_samples: u64,
    pub convergence_steps: Vec<usize>,
    pub reference_steps: usize,
    pub variance_samples: u64,
    pub variance_levels: u32,
    pub monotone_samples: usize,
    /// `None` picks the midpoint of the admissible range.
    pub monotone_rho: Option<f64>,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// 0 = one worker per core.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mu: 1.0,
            alpha: 2.5,
            beta: 1.0,
            x0: 1.0,
            t_end: 1.0,
            payoff: PayoffKind::Call,
            strike: 0.05,
            epsilon: 0.02,
            epsilons: vec![0.05, 0.02, 0.01, 0.005],
            l_min: 0,
            l_max: 14,
            initial_samples: 100,
            chi: 1.0,
            convergence_samples: 5000,
            convergence_steps: (4..=9).map(|i| 1usize << i).collect(),
            reference_steps: 1 << 12,
            variance_samples: 100_000,
            variance_levels: 10,
            monotone_samples: 100_000,
            monotone_rho: None,
            seed: 20_240_601,
            out_dir: PathBuf::from(DEFAULT_OUT_DIR),
            workers: 0,
        }
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

impl RunConfig {
    pub fn model(&self) -> Result<ModelParams> {
        ModelParams::new(self.mu, self.alpha, self.beta, self.x0, self.t_end)
    }

    pub fn payoff(&self) -> Result<Payoff> {
        match self.payoff {
            PayoffKind::Call => Payoff::call(self.strike),
            PayoffKind::Identity => Ok(Payoff::Identity),
        }
    }

    pub fn mlmc(&self, epsilon: f64) -> MlmcConfig {
        MlmcConfig {
            epsilon,
            l_min: self.l_min,
            l_max: self.l_max,
            initial_samples: self.initial_samples,
            chi: self.chi,
            seed: self.seed,
        }
    }

    /// Range checks that do not depend on the command.
    pub fn validate(&self) -> Result<()> {
        self.model()?;
        self.payoff()?;
        self.mlmc(self.epsilon).validate()?;
        for &e in &self.epsilons {
            self.mlmc(e).validate()?;
        }
        let count = |name: &'static str, v: u64, min: u64| -> Result<()> {
            if v < min {
                Err(Error::InvalidParameter {
                    name,
                    value: v as f64,
                    reason: "too small",
                })
            } else {
                Ok(())
            }
        };
        count("convergence_samples", self.convergence_samples, 1)?;
        count("reference_steps", self.reference_steps as u64, 1)?;
        count("variance_samples", self.variance_samples, 2)?;
        count("variance_levels", self.variance_levels as u64, 1)?;
        count("monotone_samples", self.monotone_samples as u64, 1)?;
        if self.variance_levels > crate::mlmc::MAX_LEVEL {
            return Err(Error::InvalidParameter {
                name: "variance_levels",
                value: self.variance_levels as f64,
                reason: "must be at most 30",
            });
        }
        if self.convergence_steps.is_empty() || self.convergence_steps.contains(&0) {
            return Err(Error::InvalidParameter {
                name: "convergence_steps",
                value: 0.0,
                reason: "must be a non-empty list of positive step counts",
            });
        }
        for &n in &self.convergence_steps {
            if !self.reference_steps.is_multiple_of(n) {
                return Err(Error::Divisibility {
                    reference: self.reference_steps,
                    coarse: n,
                });
            }
        }
        if let Some(rho) = self.monotone_rho {
            if !(rho > 1.0 && rho.is_finite()) {
                return Err(Error::InvalidParameter {
                    name: "monotone_rho",
                    value: rho,
                    reason: "must exceed 1",
                });
            }
        }
        Ok(())
    }

    /// Hypothesis warnings for the model parameters.
    pub fn warnings(&self) -> Vec<String> {
        let Ok(p) = self.model() else {
            return Vec::new();
        };
        let mut out = validate_params(&p)
            .map(|r| r.warnings())
            .unwrap_or_default();
        if let Some(&n) = self.convergence_steps.iter().min() {
            out.extend(rate_step_warning(&p, p.t_end() / n as f64));
        }
        out
    }

    /// Config-file text that parses back to `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("mu", format!("{:?}", self.mu));
        kv("alpha", format!("{:?}", self.alpha));
        kv("beta", format!("{:?}", self.beta));
        kv("x0", format!("{:?}", self.x0));
        kv("t_end", format!("{:?}", self.t_end));
        kv(
            "payoff",
            match self.payoff {
                PayoffKind::Call => "call".into(),
                PayoffKind::Identity => "identity".into(),
            },
        );
        kv("strike", format!("{:?}", self.strike));
        kv("epsilon", format!("{:?}", self.epsilon));
        kv(
            "epsilons",
            self.epsilons
                .iter()
                .map(|e| format!("{e:?}"))
                .collect::<Vec<_>>()
                .join(", "),
        );
        kv("l_min", self.l_min.to_string());
        kv("l_max", self.l_max.to_string());
        kv("initial_samples", self.initial_samples.to_string());
        kv("chi", format!("{:?}", self.chi));
        kv("convergence_samples", self.convergence_samples.to_string());
        kv("convergence_steps", join(&self.convergence_steps));
        kv("reference_steps", self.reference_steps.to_string());
        kv("variance_samples", self.variance_samples.to_string());
        kv("variance_levels", self.variance_levels.to_string());
        kv("monotone_samples", self.monotone_samples.to_string());
        kv(
            "monotone_rho",
            self.monotone_rho
                .map_or_else(|| "auto".into(), |r| format!("{r:?}")),
        );
        kv("seed", self.seed.to_string());
        kv("out_dir", self.out_dir.display().to_string());
        kv("workers", self.workers.to_string());
        s
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config {
        line,
        message: format!("cannot parse `{v}` for `{key}`"),
    })
}

fn parse_list<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(line, key, s))
        .collect()
}

fn range_error(line: usize, key: &str, v: &str, what: &str) -> Error {
    Error::Config {
        line,
        message: format!("`{key} = {v}` out of range: {what}"),
    }
}

/// Parse config text; missing keys keep the defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
        if !dir.is_empty() {
            cfg.out_dir = PathBuf::from(dir);
        }
    }
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(Error::Config {
                line,
                message: format!("expected `key = value`, got `{content}`"),
            });
        };
        let (key, v) = (key.trim(), value.trim());
        let positive = |x: f64| -> Result<f64> {
            if x.is_finite() && x > 0.0 {
                Ok(x)
            } else {
                Err(range_error(line, key, v, "must be strictly positive"))
            }
        };
        match key {
            "mu" => cfg.mu = positive(parse_num(line, key, v)?)?,
            "alpha" => cfg.alpha = positive(parse_num(line, key, v)?)?,
            "beta" => cfg.beta = positive(parse_num(line, key, v)?)?,
            "x0" => cfg.x0 = positive(parse_num(line, key, v)?)?,
            "t_end" => cfg.t_end = positive(parse_num(line, key, v)?)?,
            "payoff" => {
                cfg.payoff = match v {
                    "call" => PayoffKind::Call,
                    "identity" => PayoffKind::Identity,
                    _ => return Err(range_error(line, key, v, "expected `call` or `identity`")),
                }
            }
            "strike" => {
                let s: f64 = parse_num(line, key, v)?;
                if !(s.is_finite() && s >= 0.0) {
                    return Err(range_error(line, key, v, "must be non-negative"));
                }
                cfg.strike = s;
            }
            "epsilon" => cfg.epsilon = positive(parse_num(line, key, v)?)?,
            "epsilons" => {
                cfg.epsilons = parse_list::<f64>(line, key, v)?
                    .into_iter()
                    .map(&positive)
                    .collect::<Result<_>>()?
            }
            "l_min" => cfg.l_min = parse_num(line, key, v)?,
            "l_max" => cfg.l_max = parse_num(line, key, v)?,
            "initial_samples" => cfg.initial_samples = parse_num(line, key, v)?,
            "chi" => cfg.chi = positive(parse_num(line, key, v)?)?,
            "convergence_samples" => cfg.convergence_samples = parse_num(line, key, v)?,
            "convergence_steps" => cfg.convergence_steps = parse_list(line, key, v)?,
            "reference_steps" => cfg.reference_steps = parse_num(line, key, v)?,
            "variance_samples" => cfg.variance_samples = parse_num(line, key, v)?,
            "variance_levels" => cfg.variance_levels = parse_num(line, key, v)?,
            "monotone_samples" => cfg.monotone_samples = parse_num(line, key, v)?,
            "monotone_rho" => {
                cfg.monotone_rho = match v {
                    "auto" => None,
                    _ => Some(parse_num(line, key, v)?),
                }
            }
            "seed" => cfg.seed = parse_num(line, key, v)?,
            "out_dir" => cfg.out_dir = PathBuf::from(v),
            "workers" => cfg.workers = parse_num(line, key, v)?,
            _ => {
                return Err(Error::Config {
                    line,
                    message: format!("unknown key `{key}`"),
                })
            }
        }
    }
    Ok(cfg)
}

/// 17 significant digits, round-trips binary64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Price,
    Converge,
    Variance,
    Complexity,
    Monotone,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Price => "price",
            Command::Converge => "converge",
            Command::Variance => "variance",
            Command::Complexity => "complexity",
            Command::Monotone => "monotone",
        }
    }

    pub fn csv_name(&self) -> &'static str {
        match self {
            Command::Price => "price.csv",
            Command::Converge => "convergence.csv",
            Command::Variance => "variance.csv",
            Command::Complexity => "complexity.csv",
            Command::Monotone => "monotonicity.csv",
        }
    }
}

/// What a command produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub csv_path: PathBuf,
    /// Human-readable result lines.
    pub summary: Vec<String>,
    /// Scheme steps spent.
    pub total_cost: u64,
    /// False when MLMC stopped at `l_max` with the bias test failing.
    pub converged: bool,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.converged {
            0
        } else {
            2
        }
    }
}

/// Map an error to the process exit status.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::NonConvergence(_) => 2,
        _ => 1,
    }
}

fn price_csv(r: &MlmcResult) -> String {
    let mut s = String::from("estimate,bias_estimate,stat_error,total_cost\n");
    let _ = writeln!(
        s,
        "{},{},{},{}",
        fmt_f64(r.estimate),
        fmt_f64(r.bias_estimate),
        fmt_f64(r.statistical_error_estimate),
        r.total_cost
    );
    s.push_str("level,n_samples,mean_diff,var_diff,cost\n");
    for l in &r.levels {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            l.level,
            l.n_samples,
            fmt_f64(l.mean_diff),
            fmt_f64(l.var_diff),
            l.n_samples * l.cost_per_sample as u64
        );
    }
    s
}

/// Run one command, writing its CSV and `meta.txt` into `cfg.out_dir`.
pub fn run_command(cmd: Command, cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let started = Instant::now();
    let p = cfg.model()?;
    let phi = cfg.payoff()?;
    fs::create_dir_all(&cfg.out_dir)?;

    let (csv, summary, total_cost, converged) =
        with_workers(cfg.workers, || execute(cmd, cfg, &p, &phi))?;

    let csv_path = cfg.out_dir.join(cmd.csv_name());
    fs::write(&csv_path, csv)?;
    write_meta(&cfg.out_dir, cmd, cfg, &summary, total_cost, started)?;
    Ok(Outcome {
        csv_path,
        summary,
        total_cost,
        converged,
    })
}

type Executed = (String, Vec<String>, u64, bool);

fn execute(cmd: Command, cfg: &RunConfig, p: &ModelParams, phi: &Payoff) -> Result<Executed> {
    match cmd {
        Command::Price => {
            let (r, converged) = match run_mlmc(p, phi, &cfg.mlmc(cfg.epsilon)) {
                Ok(r) => (r, true),
                Err(Error::NonConvergence(partial)) => (*partial, false),
                Err(e) => return Err(e),
            };
            let mut summary = vec![
                format!("estimate = {}", fmt_f64(r.estimate)),
                format!("bias_estimate = {}", fmt_f64(r.bias_estimate)),
                format!("stat_error = {}", fmt_f64(r.statistical_error_estimate)),
                format!("levels = {}..={}", cfg.l_min, r.finest_level()),
                format!("total_cost = {}", r.total_cost),
            ];
            if !converged {
                summary.push(format!(
                    "NOT CONVERGED: bias test failing at l_max = {}",
                    cfg.l_max
                ));
            }
            Ok((price_csv(&r), summary, r.total_cost, converged))
        }
        Command::Converge => {
            let report = mse_vs_reference(
                p,
                &Payoff::Identity,
                cfg.convergence_samples,
                &cfg.convergence_steps,
                cfg.reference_steps,
                cfg.seed,
            )?;
            let mut csv = String::from("h,rms_error\n");
            for (h, e) in report.step_sizes.iter().zip(&report.rms_errors) {
                let _ = writeln!(csv, "{},{}", fmt_f64(*h), fmt_f64(*e));
            }
            let cost = cfg.convergence_samples
                * (cfg.reference_steps + cfg.convergence_steps.iter().sum::<usize>()) as u64;
            let summary = vec![
                format!("fitted_slope = {}", fmt_f64(report.fitted_slope)),
                format!("intercept = {}", fmt_f64(report.intercept)),
            ];
            Ok((csv, summary, cost, true))
        }
        Command::Variance => {
            let study = variance_decay_study(
                p,
                phi,
                1..=cfg.variance_levels,
                cfg.variance_samples,
                cfg.seed,
            )?;
            let mut csv = String::from("level,h,var_diff,var_fine,mean_diff\n");
            let mut cost = 0;
            for l in &study.levels {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{}",
                    l.level,
                    fmt_f64(l.h),
                    fmt_f64(l.var_diff),
                    fmt_f64(l.var_fine),
                    fmt_f64(l.mean_diff)
                );
                cost += l.n_samples * l.cost_per_sample as u64;
            }
            let summary = vec![
                format!("diff_variance_slope = {}", fmt_f64(study.diff_slope)),
                format!("fine_variance_slope = {}", fmt_f64(study.fine_slope)),
            ];
            Ok((csv, summary, cost, true))
        }
        Command::Complexity => {
            let study = complexity_study(p, phi, &cfg.epsilons, &cfg.mlmc(cfg.epsilon))?;
            let mut csv = String::from("epsilon,total_cost,levels_used,estimate\n");
            for r in &study.rows {
                let _ = writeln!(
                    csv,
                    "{},{},{},{}",
                    fmt_f64(r.epsilon),
                    r.total_cost,
                    r.levels_used,
                    fmt_f64(r.estimate)
                );
            }
            let cost = study.rows.iter().map(|r| r.total_cost).sum();
            let summary = vec![
                format!("cost_slope = {}", fmt_f64(study.slope)),
                format!(
                    "cost_eps2_spread = {}",
                    fmt_f64(study.normalized_cost_spread())
                ),
            ];
            Ok((csv, summary, cost, true))
        }
        Command::Monotone => {
            let consts = match cfg.monotone_rho {
                Some(rho) => derive_monotonicity_constants_with_rho(p, p.t_end(), rho)?,
                None => derive_monotonicity_constants(p, p.t_end())?,
            };
            let grid = monotonicity_grid(cfg.monotone_samples, p.t_end(), cfg.seed);
            let report = check_monotonicity(p, &consts, &grid);
            let mut csv = String::from("inequality,constant,checked,violations,worst_margin\n");
            for (k, l) in [consts.l0, consts.l1].into_iter().enumerate() {
                let count = report
                    .violations
                    .iter()
                    .filter(|v| v.inequality as usize == k + 1)
                    .count();
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{}",
                    k + 1,
                    fmt_f64(l),
                    report.checked,
                    count,
                    fmt_f64(report.worst_margin[k])
                );
            }
            let summary = vec![
                format!("q = {}", fmt_f64(consts.q)),
                format!("rho = {}", fmt_f64(consts.rho)),
                format!("c_tilde = {}", fmt_f64(consts.c_tilde)),
                format!("L0 = {}", fmt_f64(consts.l0)),
                format!("L1 = {}", fmt_f64(consts.l1)),
                format!("violations = {}", report.violations.len()),
            ];
            Ok((csv, summary, 0, true))
        }
    }
}

fn write_meta(
    dir: &Path,
    cmd: Command,
    cfg: &RunConfig,
    summary: &[String],
    total_cost: u64,
    started: Instant,
) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "command = {}", cmd.name());
    let _ = writeln!(s, "version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "seed = {}", cfg.seed);
    let _ = writeln!(s, "wall_time_s = {:.3}", started.elapsed().as_secs_f64());
    let _ = writeln!(s, "total_cost = {total_cost}");
    for w in cfg.warnings() {
        let _ = writeln!(s, "warning = {w}");
    }
    s.push_str("\n# results\n");
    for line in summary {
        let _ = writeln!(s, "{line}");
    }
    s.push_str("\n# config\n");
    s.push_str(&cfg.to_text());
    fs::write(dir.join("meta.txt"), s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = parse_config("").unwrap();
        let expected = RunConfig {
            out_dir: cfg.out_dir.clone(),
            ..RunConfig::default()
        };
        assert_eq!(cfg, expected);
        assert_eq!(
            (cfg.mu, cfg.alpha, cfg.beta, cfg.x0, cfg.t_end),
            (1.0, 2.5, 1.0, 1.0, 1.0)
        );
        assert_eq!(cfg.strike, 0.05);
        assert_eq!(cfg.convergence_samples, 5000);
        assert_eq!(cfg.variance_samples, 100_000);
        assert_eq!(cfg.reference_steps, 4096);
        assert_eq!(cfg.convergence_steps, vec![16, 32, 64, 128, 256, 512]);
    }

    #[test]
    fn comments_and_whitespace() {
        let cfg = parse_config("# header\n\n  alpha=3.0   # inline\nconvergence_steps = 8, 16\n")
            .unwrap();
        assert_eq!(cfg.alpha, 3.0);
        assert_eq!(cfg.convergence_steps, vec![8, 16]);
    }

    #[test]
    fn weak_alpha_warns() {
        let cfg = parse_config("alpha = 1.0").unwrap();
        assert!(cfg.validate().is_ok());
        let w = cfg.warnings();
        assert!(w.iter().any(|m| m.contains("1.5 beta^2")), "{w:?}");
        assert!(parse_config("").unwrap().warnings().is_empty());
    }

    #[test]
    fn errors_carry_line_numbers() {
        match parse_config("mu = 1\nalpha = -1\n") {
            Err(Error::Config { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match parse_config("\n\nnot a pair\n") {
            Err(Error::Config { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match parse_config("gamma = 2") {
            Err(Error::Config { line, message }) => {
                assert_eq!(line, 1);
                assert!(message.contains("unknown key"));
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_config("seed = 1.5").is_err());
        assert!(parse_config("payoff = put").is_err());
    }

    #[test]
    fn epsilon_out_of_theorem_range() {
        let cfg = parse_config("epsilon = 10").unwrap();
        let err = cfg.validate().unwrap_err();
        assert_eq!(exit_code_for(&err), 1);
        let cfg = parse_config("epsilons = 0.05, 0.5").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, 2.3629032258064515, 1e-300, 12345.678] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits());
            let digits = s.split('e').next().unwrap().replace(['.', '-'], "");
            assert_eq!(digits.len(), 17);
        }
    }
}
