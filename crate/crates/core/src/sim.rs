//! Out-of-sample experiment: anchor -> true covariance -> noisy estimate ->
//! gamma sweep, with variances normalized by each trial's gamma-zero value.

use std::fmt::Write as _;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::allocator::{allocate, AllocationConfig, TerminalMethod};
use crate::covmat::{empirical_covariance, rand_symm_cov, sample_gaussian};
use crate::error::{Error, Result};
use crate::par;
use crate::portfolio::{portfolio_variance, FitnessKind};
use crate::schur::GammaPair;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Asset count.
    pub p: usize,
    /// Anchor correlation.
    pub rho: f64,
    /// Samples drawn from the anchor to build the true covariance.
    #[serde(default = "default_anchor_samples")]
    pub a: usize,
    /// Samples drawn from the true covariance to build the estimate.
    pub o: usize,
    pub gamma_grid: Vec<f64>,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Lognormal scale of the anchor variances; `None` keeps them at one.
    #[serde(default)]
    pub variance_jitter: Option<f64>,
    /// Template; its gammas are replaced by each grid value.
    #[serde(default = "default_template")]
    pub allocation: AllocationConfig,
}

fn default_anchor_samples() -> usize {
    150
}

fn default_template() -> AllocationConfig {
    AllocationConfig {
        fitness: FitnessKind::WeakMinvarVariance,
        terminal: TerminalMethod::WeakMinvar,
        terminal_size: 5,
        ..AllocationConfig::default()
    }
}

/// Named parameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// 500 assets, 3 trials. Slow.
    Full,
    /// 40 assets, 20 trials.
    Desk,
}

impl std::str::FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "desk" => Ok(Self::Desk),
            other => Err(Error::InvalidConfig(format!("unknown profile '{other}'"))),
        }
    }
}

impl ExperimentConfig {
    pub fn profile(profile: Profile) -> Self {
        match profile {
            Profile::Full => ExperimentConfig {
                p: 500,
                rho: 0.35,
                a: 150,
                o: 60,
                gamma_grid: (0..=10).map(|i| i as f64 / 10.0).collect(),
                trials: 3,
                seed: 0,
                variance_jitter: None,
                allocation: default_template(),
            },
            Profile::Desk => ExperimentConfig {
                p: 40,
                rho: 0.35,
                a: 60,
                o: 30,
                gamma_grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
                trials: 20,
                seed: 0,
                variance_jitter: None,
                allocation: default_template(),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.allocation.validate()?;
        let m = self.allocation.terminal_size;
        if self.p < 2 * m {
            return Err(Error::InvalidConfig(format!(
                "p = {} is below twice the terminal size {m}",
                self.p
            )));
        }
        if self.a < 2 {
            return Err(Error::TooFewSamples(self.a));
        }
        if self.o < 2 {
            return Err(Error::TooFewSamples(self.o));
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("at least one trial is required".into()));
        }
        for &g in &self.gamma_grid {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::GammaOutOfRange(g));
            }
        }
        if !self.gamma_grid.contains(&0.0) {
            return Err(Error::InvalidConfig("gamma grid must contain 0".into()));
        }
        if let Some(s) = self.variance_jitter {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "variance jitter must be non-negative, got {s}"
                )));
            }
        }
        let lower = -1.0 / (self.p as f64 - 1.0);
        if !(self.rho > lower && self.rho < 1.0) {
            return Err(Error::InvalidRho {
                rho: self.rho,
                dim: self.p,
            });
        }
        Ok(())
    }

    /// Grid sorted ascending with duplicates removed.
    fn grid(&self) -> Vec<f64> {
        let mut g = self.gamma_grid.clone();
        g.sort_by(f64::total_cmp);
        g.dedup();
        g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub trial: usize,
    pub gamma: f64,
    /// `w' Sigma_true w`; NaN when the trial failed at this gamma.
    pub oos_variance: f64,
    pub normalized: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    /// Ordered by trial, then gamma.
    pub rows: Vec<ResultRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub gamma: f64,
    pub mean: f64,
    pub median: f64,
    pub q10: f64,
    pub q90: f64,
    /// Trials with a finite normalized value at this gamma.
    pub count: usize,
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

fn run_trial(cfg: &ExperimentConfig, grid: &[f64], trial: usize) -> Vec<ResultRow> {
    let failed = |e: &Error| {
        grid.iter()
            .map(|&gamma| ResultRow {
                trial,
                gamma,
                oos_variance: f64::NAN,
                normalized: f64::NAN,
                error: Some(e.to_string()),
            })
            .collect::<Vec<_>>()
    };
    let mut rng = trial_rng(cfg.seed, trial);
    let setup = (|| {
        let anchor = rand_symm_cov(cfg.p, cfg.rho, cfg.variance_jitter, &mut rng)?;
        let truth = empirical_covariance(&sample_gaussian(&anchor, cfg.a, &mut rng)?)?;
        let estimate = empirical_covariance(&sample_gaussian(&truth, cfg.o, &mut rng)?)?;
        Ok::<_, Error>((truth, estimate))
    })();
    let (truth, estimate) = match setup {
        Ok(pair) => pair,
        Err(e) => {
            log::warn!("trial {trial}: {e}");
            return failed(&e);
        }
    };

    let mut rows: Vec<ResultRow> = grid
        .iter()
        .map(|&gamma| {
            let mut alloc = cfg.allocation.clone();
            alloc.gammas = GammaPair {
                gamma_c: gamma,
                gamma_b: gamma,
            };
            let outcome = allocate(&estimate, &alloc).and_then(|r| portfolio_variance(&truth, &r.weights));
            match outcome {
                Ok(v) => ResultRow {
                    trial,
                    gamma,
                    oos_variance: v,
                    normalized: f64::NAN,
                    error: None,
                },
                Err(e) => {
                    log::warn!("trial {trial}, gamma {gamma}: {e}");
                    ResultRow {
                        trial,
                        gamma,
                        oos_variance: f64::NAN,
                        normalized: f64::NAN,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    let base = rows
        .iter()
        .find(|r| r.gamma == 0.0)
        .map_or(f64::NAN, |r| r.oos_variance);
    for r in &mut rows {
        r.normalized = if r.gamma == 0.0 && r.error.is_none() {
            1.0
        } else {
            r.oos_variance / base
        };
    }
    rows
}

/// Run the trials with ids in `trials`. Each trial draws from its own
/// stream `(seed, id)`, so any partition of ids gives the same rows.
pub fn run_trials(cfg: &ExperimentConfig, trials: &[usize]) -> Result<ExperimentResult> {
    cfg.validate()?;
    let grid = cfg.grid();
    let per_trial = par::map_collect(trials, |&t| run_trial(cfg, &grid, t));
    Ok(ExperimentResult {
        rows: per_trial.into_iter().flatten().collect(),
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let ids: Vec<usize> = (0..cfg.trials).collect();
    run_trials(cfg, &ids)
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-gamma statistics of the normalized variance, ascending in gamma.
/// Failed rows are excluded; a gamma with no finite value reports NaN.
pub fn summarize(result: &ExperimentResult) -> Result<Vec<SummaryRow>> {
    if result.rows.is_empty() {
        return Err(Error::EmptyResult);
    }
    let mut gammas: Vec<f64> = result.rows.iter().map(|r| r.gamma).collect();
    gammas.sort_by(f64::total_cmp);
    gammas.dedup();
    Ok(gammas
        .into_iter()
        .map(|gamma| {
            let mut vals: Vec<f64> = result
                .rows
                .iter()
                .filter(|r| r.gamma == gamma && r.normalized.is_finite())
                .map(|r| r.normalized)
                .collect();
            vals.sort_by(f64::total_cmp);
            if vals.is_empty() {
                let nan = f64::NAN;
                return SummaryRow {
                    gamma,
                    mean: nan,
                    median: nan,
                    q10: nan,
                    q90: nan,
                    count: 0,
                };
            }
            SummaryRow {
                gamma,
                mean: vals.iter().sum::<f64>() / vals.len() as f64,
                median: quantile(&vals, 0.5),
                q10: quantile(&vals, 0.1),
                q90: quantile(&vals, 0.9),
                count: vals.len(),
            }
        })
        .collect())
}

pub fn write_results_csv<W: Write>(result: &ExperimentResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["trial", "gamma", "oos_variance", "normalized"])?;
    for r in &result.rows {
        w.write_record([
            r.trial.to_string(),
            r.gamma.to_string(),
            r.oos_variance.to_string(),
            r.normalized.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(summary: &[SummaryRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["gamma", "mean", "median", "q10", "q90"])?;
    for s in summary {
        w.write_record([s.gamma, s.mean, s.median, s.q10, s.q90].map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Line chart of mean normalized variance against gamma, with the 10-90%
/// band shaded.
pub fn summary_svg(summary: &[SummaryRow]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const PAD: f64 = 48.0;
    let pts: Vec<&SummaryRow> = summary.iter().filter(|s| s.mean.is_finite()).collect();
    let (mut lo, mut hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
        (lo.min(s.q10), hi.max(s.q90))
    });
    if !(lo.is_finite() && hi.is_finite()) {
        lo = 0.9;
        hi = 1.1;
    }
    if hi - lo < 1e-9 {
        lo -= 0.05;
        hi += 0.05;
    }
    let x = |g: f64| PAD + g * (W - 2.0 * PAD);
    let y = |v: f64| H - PAD - (v - lo) / (hi - lo) * (H - 2.0 * PAD);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{PAD},{b} H{r} M{PAD},{b} V{PAD}" stroke="black" fill="none"/>"#,
        b = H - PAD,
        r = W - PAD
    );
    if !pts.is_empty() {
        let upper: Vec<String> = pts
            .iter()
            .map(|s| format!("{:.2},{:.2}", x(s.gamma), y(s.q90)))
            .collect();
        let lower: Vec<String> = pts
            .iter()
            .rev()
            .map(|s| format!("{:.2},{:.2}", x(s.gamma), y(s.q10)))
            .collect();
        let _ = writeln!(
            svg,
            r##"<polygon points="{} {}" fill="#cfe0f3" stroke="none"/>"##,
            upper.join(" "),
            lower.join(" ")
        );
        let line: Vec<String> = pts
            .iter()
            .map(|s| format!("{:.2},{:.2}", x(s.gamma), y(s.mean)))
            .collect();
        let _ = writeln!(
            svg,
            r##"<polyline points="{}" fill="none" stroke="#1f5fa8" stroke-width="2"/>"##,
            line.join(" ")
        );
        for s in &pts {
            let _ = writeln!(
                svg,
                r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#1f5fa8"/>"##,
                x(s.gamma),
                y(s.mean)
            );
        }
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">gamma</text>"#,
        W / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{PAD}" y="{}" font-size="11" text-anchor="middle">0</text>"#,
        H - PAD + 16.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">1</text>"#,
        W - PAD,
        H - PAD + 16.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{lo:.4}</text>"#,
        PAD - 4.0,
        H - PAD
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{hi:.4}</text>"#,
        PAD - 4.0,
        PAD + 4.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">normalized variance</text>"#,
        H / 2.0,
        H / 2.0
    );
    svg.push_str("</svg>\n");
    svg
}
