//! Monte Carlo estimation of the conditional exact p-value: uniform
//! composition sampling via the stars-and-bars bijection plus two
//! estimators over the draws.

use num::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::exact::{composition_count, Composition, ConditionalLaw};
use crate::math::log_le_with_tie;
use crate::model::nb_log_pmf;

/// Which estimator turns the uniform draws into a p-value estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Plain proportion of draws landing in the rejection region: estimates
    /// the uniform measure of the region, not the probability-weighted
    /// ratio. Kept for reproducing the literal resampling procedure.
    Indicator,
    /// Self-normalized importance sampling with the uniform proposal and
    /// the joint null probability as weight; consistent for the exact
    /// conditional p-value.
    SelfNormalized,
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EstimatorKind::Indicator => write!(f, "indicator"),
            EstimatorKind::SelfNormalized => write!(f, "self_normalized"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct McConfig {
    pub n_samples: u32,
    pub seed: u64,
    pub estimator: EstimatorKind,
    pub ci_level: f64,
}

impl McConfig {
    pub fn new(n_samples: u32, seed: u64) -> Self {
        McConfig {
            n_samples,
            seed,
            estimator: EstimatorKind::SelfNormalized,
            ci_level: 0.95,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidInput("n_samples must be >= 1".into()));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::InvalidInput(format!(
                "ci_level must lie in (0, 1), got {}",
                self.ci_level
            )));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_estimator(mut self, estimator: EstimatorKind) -> Self {
        self.estimator = estimator;
        self
    }
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig::new(1000, 0)
    }
}

/// Monte Carlo p-value estimate with uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McEstimate {
    pub p_hat: f64,
    pub std_err: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_samples: u32,
    pub estimator: EstimatorKind,
    /// True when the raw estimate fell below 1/(N+1) and was floored there.
    pub floored: bool,
}

/// splitmix64 finalizer; decorrelates consecutive stream indices.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Derive an independent substream seed from a base seed and a task index
/// (gene index, replicate index). Reproducible under any parallel schedule.
pub fn derive_stream_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0xA076_1D64_78BD_642F)))
}

/// Seeded counter-based generator for one task stream.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_stream_seed(seed, index))
}

/// Draw a composition uniformly over all nonnegative integer m-vectors
/// summing to `total`.
///
/// Stars and bars: draw a uniform (m-1)-subset b_1 < ... < b_{m-1} of
/// {1, ..., total + m - 1}, put b_0 = 0 and b_m = total + m, and take
/// a_i = b_i - b_{i-1} - 1.
pub fn sample_composition<R: Rng + ?Sized>(total: u64, m: usize, rng: &mut R) -> Composition {
    assert!(m >= 2, "need at least 2 parts");
    let mut bars = sample_subset(total + m as u64 - 1, m - 1, rng);
    bars.sort_unstable();
    Composition::new(composition_from_bars(&bars, total, m))
}

/// Floyd's algorithm: uniform k-subset of {1, ..., n} with O(k) draws and
/// O(k) memory. n can be ~10^7, so no O(n) structures.
fn sample_subset<R: Rng + ?Sized>(n: u64, k: usize, rng: &mut R) -> Vec<u64> {
    debug_assert!(k as u64 <= n);
    let mut chosen: Vec<u64> = Vec::with_capacity(k);
    for j in (n - k as u64 + 1)..=n {
        let t = rng.gen_range(1..=j);
        if chosen.contains(&t) {
            chosen.push(j);
        } else {
            chosen.push(t);
        }
    }
    chosen
}

/// Bijection from sorted bar positions to composition parts.
fn composition_from_bars(bars: &[u64], total: u64, m: usize) -> Vec<u64> {
    let mut parts = Vec::with_capacity(m);
    let mut prev = 0u64;
    for &b in bars {
        parts.push(b - prev - 1);
        prev = b;
    }
    parts.push(total + m as u64 - prev - 1); // b_m = total + m
    parts
}

/// Method selector: exact enumeration when the composition count fits under
/// the cap, Monte Carlo otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    MonteCarlo,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Exact => write!(f, "exact"),
            Method::MonteCarlo => write!(f, "monte_carlo"),
        }
    }
}

pub fn choose_method(total: u64, m: usize, cap: u64) -> Method {
    if composition_count(total, m) <= BigUint::from(cap) {
        Method::Exact
    } else {
        Method::MonteCarlo
    }
}

/// Monte Carlo estimate of the exact conditional p-value from N uniform
/// composition draws.
pub fn mc_pvalue(
    law: &ConditionalLaw,
    observed: &Composition,
    cfg: &McConfig,
) -> Result<McEstimate> {
    cfg.validate()?;
    if observed.sum() != law.total() {
        return Err(Error::SumMismatch {
            expected: law.total(),
            actual: observed.sum(),
        });
    }
    let m = law.n_conditions();
    if observed.len() != m {
        return Err(Error::DimensionMismatch {
            what: "observed composition",
            expected: m,
            actual: observed.len(),
        });
    }
    let total = law.total();
    let n = cfg.n_samples;

    let log_w = |parts: &[u64]| -> Result<f64> {
        let mut lp = 0.0;
        for (&a, &(mu, var)) in parts.iter().zip(law.moments()) {
            lp += nb_log_pmf(a, mu, var)?;
        }
        Ok(lp)
    };
    let lp_obs = log_w(observed.parts())?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log_weights = Vec::with_capacity(n as usize);
    let mut hits = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let comp = sample_composition(total, m, &mut rng);
        let lw = log_w(comp.parts())?;
        hits.push(log_le_with_tie(lw, lp_obs));
        log_weights.push(lw);
    }

    let estimate = match cfg.estimator {
        EstimatorKind::Indicator => indicator_estimate(&hits, n),
        EstimatorKind::SelfNormalized => self_normalized_estimate(&log_weights, &hits, n)?,
    };

    Ok(apply_floor(estimate, n, cfg.estimator, cfg.ci_level))
}

fn normal_quantile(q: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(q)
}

fn indicator_estimate(hits: &[bool], n: u32) -> (f64, f64) {
    let k = hits.iter().filter(|&&h| h).count() as f64;
    let nf = n as f64;
    let p_hat = k / nf;
    let std_err = (p_hat * (1.0 - p_hat) / nf).sqrt();
    (p_hat, std_err)
}

fn self_normalized_estimate(
    log_weights: &[f64],
    hits: &[bool],
    n: u32,
) -> Result<(f64, f64)> {
    let max_lw = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max_lw == f64::NEG_INFINITY {
        return Err(Error::NumericalDegeneracy(
            "all sampled composition weights underflowed; increase n_samples or use the exact path"
                .into(),
        ));
    }
    let nf = n as f64;
    // normalized weights in [0, 1]; the ratio estimator is scale-invariant
    let w: Vec<f64> = log_weights.iter().map(|&lw| (lw - max_lw).exp()).collect();
    let sum_w: f64 = w.iter().sum();
    let sum_y: f64 = w
        .iter()
        .zip(hits)
        .map(|(&wi, &h)| if h { wi } else { 0.0 })
        .sum();
    let p_hat = (sum_y / sum_w).clamp(0.0, 1.0);

    // delta-method variance of the ratio estimator y_bar / x_bar
    let x_bar = sum_w / nf;
    let y_bar = sum_y / nf;
    let mut s_xx = 0.0;
    let mut s_yy = 0.0;
    let mut s_xy = 0.0;
    for (&wi, &h) in w.iter().zip(hits) {
        let yi = if h { wi } else { 0.0 };
        let dx = wi - x_bar;
        let dy = yi - y_bar;
        s_xx += dx * dx;
        s_yy += dy * dy;
        s_xy += dx * dy;
    }
    let denom = if n > 1 { (nf - 1.0) * nf } else { nf };
    let var = ((s_yy - 2.0 * p_hat * s_xy + p_hat * p_hat * s_xx) / denom / (x_bar * x_bar))
        .max(0.0);
    Ok((p_hat, var.sqrt()))
}

/// Assemble the final estimate: confidence interval, `1/(N+1)` floor and
/// its flag.
fn apply_floor(raw: (f64, f64), n: u32, estimator: EstimatorKind, ci_level: f64) -> McEstimate {
    let (p_raw, std_err) = raw;
    let z = normal_quantile(0.5 + ci_level / 2.0);
    let (ci_low, ci_high) = match estimator {
        EstimatorKind::Indicator => wilson_interval(p_raw, n, z),
        EstimatorKind::SelfNormalized => (
            (p_raw - z * std_err).max(0.0),
            (p_raw + z * std_err).min(1.0),
        ),
    };
    let floor = 1.0 / (n as f64 + 1.0);
    let floored = p_raw < floor;
    let p_hat = p_raw.max(floor);
    McEstimate {
        p_hat,
        std_err,
        ci_low: ci_low.min(p_hat),
        ci_high: ci_high.max(p_hat),
        n_samples: n,
        estimator,
        floored,
    }
}

fn wilson_interval(p_hat: f64, n: u32, z: f64) -> (f64, f64) {
    let nf = n as f64;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p_hat + z2 / (2.0 * nf)) / denom;
    let half = z * (p_hat * (1.0 - p_hat) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}
