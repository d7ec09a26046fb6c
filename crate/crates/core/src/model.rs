//! Negative-binomial count model: count matrix, sample metadata, size
//! factors, the pooled expression estimate and per-condition moments.

use std::collections::HashSet;

use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Integer read counts, rows = genes, columns = samples.
#[derive(Debug, Clone)]
pub struct CountMatrix {
    genes: Vec<String>,
    samples: Vec<String>,
    counts: Vec<u64>, // row-major, genes x samples
}

impl CountMatrix {
    pub fn new(genes: Vec<String>, samples: Vec<String>, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != genes.len() * samples.len() {
            return Err(Error::DimensionMismatch {
                what: "count matrix",
                expected: genes.len() * samples.len(),
                actual: counts.len(),
            });
        }
        let mut seen = HashSet::new();
        for g in &genes {
            if !seen.insert(g.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate gene id: {g}")));
            }
        }
        let mut seen = HashSet::new();
        for s in &samples {
            if !seen.insert(s.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate sample id: {s}")));
            }
        }
        Ok(CountMatrix {
            genes,
            samples,
            counts,
        })
    }

    pub fn n_genes(&self) -> usize {
        self.genes.len()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn gene_ids(&self) -> &[String] {
        &self.genes
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.samples
    }

    /// Counts for gene `i` across all samples.
    pub fn row(&self, i: usize) -> &[u64] {
        let n = self.samples.len();
        &self.counts[i * n..(i + 1) * n]
    }

    /// Total count of sample `j` over all genes (library size).
    pub fn library_size(&self, j: usize) -> u64 {
        (0..self.genes.len()).map(|i| self.row(i)[j]).sum()
    }

    /// Per-gene totals k_iS.
    pub fn gene_totals(&self) -> Vec<u64> {
        (0..self.genes.len())
            .map(|i| self.row(i).iter().sum())
            .collect()
    }
}

/// Per-sample size factors and condition assignment.
#[derive(Debug, Clone)]
pub struct SampleMeta {
    size_factors: Vec<f64>,
    condition_idx: Vec<usize>, // per sample, index into `conditions`
    conditions: Vec<String>,
}

impl SampleMeta {
    /// Build from parallel per-sample vectors. Condition order is the order
    /// of first appearance.
    pub fn new(size_factors: Vec<f64>, condition_labels: &[String]) -> Result<Self> {
        if size_factors.len() != condition_labels.len() {
            return Err(Error::DimensionMismatch {
                what: "sample metadata",
                expected: condition_labels.len(),
                actual: size_factors.len(),
            });
        }
        for (j, &s) in size_factors.iter().enumerate() {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "size factor for sample {j} must be positive and finite, got {s}"
                )));
            }
        }
        let mut conditions: Vec<String> = Vec::new();
        let mut condition_idx = Vec::with_capacity(condition_labels.len());
        for label in condition_labels {
            let idx = match conditions.iter().position(|c| c == label) {
                Some(idx) => idx,
                None => {
                    conditions.push(label.clone());
                    conditions.len() - 1
                }
            };
            condition_idx.push(idx);
        }
        if conditions.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 conditions, got {}",
                conditions.len()
            )));
        }
        Ok(SampleMeta {
            size_factors,
            condition_idx,
            conditions,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.size_factors.len()
    }

    pub fn n_conditions(&self) -> usize {
        self.conditions.len()
    }

    pub fn size_factors(&self) -> &[f64] {
        &self.size_factors
    }

    pub fn conditions(&self) -> &[String] {
        &self.conditions
    }

    pub fn condition_of(&self, sample: usize) -> usize {
        self.condition_idx[sample]
    }

    pub fn condition_index(&self, label: &str) -> Result<usize> {
        self.conditions
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::UnknownCondition(label.to_string()))
    }

    /// Sample indices belonging to condition `c`.
    pub fn samples_in(&self, c: usize) -> Vec<usize> {
        (0..self.n_samples())
            .filter(|&j| self.condition_idx[j] == c)
            .collect()
    }

    /// Restrict to the samples of two conditions, preserving sample order
    /// and size factors. Used by the pairwise baseline.
    pub fn restrict_to_pair(&self, a: usize, b: usize) -> Result<(SampleMeta, Vec<usize>)> {
        if a >= self.n_conditions() || b >= self.n_conditions() || a == b {
            return Err(Error::InvalidInput(format!(
                "invalid condition pair ({a}, {b})"
            )));
        }
        let keep: Vec<usize> = (0..self.n_samples())
            .filter(|&j| self.condition_idx[j] == a || self.condition_idx[j] == b)
            .collect();
        let sf = keep.iter().map(|&j| self.size_factors[j]).collect();
        let labels: Vec<String> = keep
            .iter()
            .map(|&j| self.conditions[self.condition_idx[j]].clone())
            .collect();
        Ok((SampleMeta::new(sf, &labels)?, keep))
    }
}

/// Raw variance function nu(q): extra-Poisson variance as a function of
/// expression strength.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DispersionModel {
    /// nu(q) = alpha * q^2 (constant squared coefficient of variation).
    ConstantCv2 { alpha: f64 },
    /// nu(q) = alpha * q^beta.
    Power { alpha: f64, beta: f64 },
    /// Piecewise-linear interpolation through (q, nu) points; clamped at the
    /// ends.
    Table { points: Vec<(f64, f64)> },
}

impl DispersionModel {
    pub const DEFAULT_CV2_ALPHA: f64 = 0.1;

    pub fn validate(&self) -> Result<()> {
        match self {
            DispersionModel::ConstantCv2 { alpha } => {
                if *alpha < 0.0 || !alpha.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "dispersion alpha must be nonnegative, got {alpha}"
                    )));
                }
            }
            DispersionModel::Power { alpha, beta } => {
                if *alpha < 0.0 || !alpha.is_finite() || !beta.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "power dispersion parameters out of range: alpha={alpha}, beta={beta}"
                    )));
                }
            }
            DispersionModel::Table { points } => {
                if points.is_empty() {
                    return Err(Error::InvalidInput(
                        "dispersion table must contain at least one point".into(),
                    ));
                }
                for w in points.windows(2) {
                    if w[1].0 <= w[0].0 {
                        return Err(Error::InvalidInput(
                            "dispersion table q values must be strictly increasing".into(),
                        ));
                    }
                }
                if points.iter().any(|&(q, v)| q < 0.0 || v < 0.0 || !v.is_finite()) {
                    return Err(Error::InvalidInput(
                        "dispersion table entries must be nonnegative and finite".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// nu(q) >= 0 for q >= 0.
    pub fn raw_variance(&self, q: f64) -> f64 {
        match self {
            DispersionModel::ConstantCv2 { alpha } => alpha * q * q,
            DispersionModel::Power { alpha, beta } => {
                if q == 0.0 {
                    0.0
                } else {
                    alpha * q.powf(*beta)
                }
            }
            DispersionModel::Table { points } => {
                if points.len() == 1 {
                    return points[0].1;
                }
                if q <= points[0].0 {
                    return points[0].1;
                }
                if q >= points[points.len() - 1].0 {
                    return points[points.len() - 1].1;
                }
                let hi = points.partition_point(|&(x, _)| x < q);
                let (x0, y0) = points[hi - 1];
                let (x1, y1) = points[hi];
                y0 + (q - x0) / (x1 - x0) * (y1 - y0)
            }
        }
    }
}

impl Default for DispersionModel {
    fn default() -> Self {
        DispersionModel::ConstantCv2 {
            alpha: Self::DEFAULT_CV2_ALPHA,
        }
    }
}

/// Per-condition fitted moments under the null.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionMoments {
    pub total: u64,
    pub mu_hat: f64,
    pub var_hat: f64,
}

/// Per-gene fitted quantities: pooled expression estimate, per-condition
/// totals and moments, and the grand total.
#[derive(Debug, Clone)]
pub struct GeneModel {
    pub q0_hat: f64,
    pub per_condition: Vec<ConditionMoments>,
    pub total: u64,
}

impl GeneModel {
    /// Fit from one gene's counts. Moments use a single pooled q0 across all
    /// conditions (the null hypothesis of equal expression).
    pub fn fit(
        counts_row: &[u64],
        meta: &SampleMeta,
        disp: &DispersionModel,
        normalize: bool,
    ) -> Result<GeneModel> {
        let q0 = pooled_q0(counts_row, meta, normalize)?;
        let m = meta.n_conditions();
        let mut per_condition = Vec::with_capacity(m);
        for c in 0..m {
            let (mu, var) = condition_moments(q0, meta, disp, c)?;
            let total = meta
                .samples_in(c)
                .iter()
                .map(|&j| counts_row[j])
                .sum::<u64>();
            per_condition.push(ConditionMoments {
                total,
                mu_hat: mu,
                var_hat: var,
            });
        }
        let total = per_condition.iter().map(|cm| cm.total).sum();
        Ok(GeneModel {
            q0_hat: q0,
            per_condition,
            total,
        })
    }

    pub fn condition_totals(&self) -> Vec<u64> {
        self.per_condition.iter().map(|cm| cm.total).collect()
    }
}

/// Pooled expression estimate from size-factor-normalized counts.
///
/// With `normalize` off this is the plain sum over samples of k_ij / s_j;
/// with `normalize` on (the default everywhere downstream) the sum is
/// divided by the number of samples, so per-condition moment estimates do
/// not scale with sample count.
pub fn pooled_q0(counts_row: &[u64], meta: &SampleMeta, normalize: bool) -> Result<f64> {
    if counts_row.len() != meta.n_samples() {
        return Err(Error::DimensionMismatch {
            what: "counts row",
            expected: meta.n_samples(),
            actual: counts_row.len(),
        });
    }
    let sum: f64 = counts_row
        .iter()
        .zip(meta.size_factors())
        .map(|(&k, &s)| k as f64 / s)
        .sum();
    if normalize {
        Ok(sum / counts_row.len() as f64)
    } else {
        Ok(sum)
    }
}

/// Mean and variance of the condition total K_A under expression strength
/// `q0_hat`:
///   mu  = sum_{j in A} s_j q0
///   var = sum_{j in A} [ s_j q0 + s_j^2 nu(q0) ]
pub fn condition_moments(
    q0_hat: f64,
    meta: &SampleMeta,
    disp: &DispersionModel,
    condition: usize,
) -> Result<(f64, f64)> {
    if condition >= meta.n_conditions() {
        return Err(Error::UnknownCondition(format!(
            "condition index {condition} out of range"
        )));
    }
    if q0_hat < 0.0 {
        return Err(Error::InvalidInput(format!(
            "q0_hat must be nonnegative, got {q0_hat}"
        )));
    }
    let nu = disp.raw_variance(q0_hat);
    let mut mu = 0.0;
    let mut var = 0.0;
    for j in meta.samples_in(condition) {
        let s = meta.size_factors()[j];
        mu += s * q0_hat;
        var += s * q0_hat + s * s * nu;
    }
    Ok((mu, var))
}

/// Relative slack below which (mean, variance) is dispatched to the Poisson
/// pmf instead of the negative binomial moment conversion.
const POISSON_REL_EPS: f64 = 1e-12;

/// Log pmf of the count distribution with the given mean and variance.
///
/// variance > mean: negative binomial with r = mean^2/(variance - mean) and
/// success probability mean/variance. variance == mean (within relative
/// 1e-12): Poisson. mean <= 0: point mass at zero.
pub fn nb_log_pmf(k: u64, mean: f64, variance: f64) -> Result<f64> {
    if mean <= 0.0 {
        return Ok(if k == 0 { 0.0 } else { f64::NEG_INFINITY });
    }
    if variance < mean {
        return Err(Error::InvalidDispersion { mean, variance });
    }
    let kf = k as f64;
    if variance <= mean * (1.0 + POISSON_REL_EPS) {
        // Poisson limit
        return Ok(kf * mean.ln() - mean - ln_gamma(kf + 1.0));
    }
    let r = mean * mean / (variance - mean);
    let p = mean / variance; // in (0, 1)
    Ok(ln_gamma(kf + r) - ln_gamma(r) - ln_gamma(kf + 1.0) + r * p.ln() + kf * (1.0 - p).ln())
}

/// pmf on the probability scale; see [`nb_log_pmf`].
pub fn nb_pmf(k: u64, mean: f64, variance: f64) -> Result<f64> {
    Ok(nb_log_pmf(k, mean, variance)?.exp())
}

/// Log-pmf table for k = 0..=max_k, built by the forward recurrence
/// pmf(k+1)/pmf(k). One log per entry instead of three lgammas; drift over
/// 10^5 entries stays below 1e-13 relative.
pub fn nb_log_pmf_table(max_k: u64, mean: f64, variance: f64) -> Result<Vec<f64>> {
    let n = (max_k + 1) as usize;
    let mut table = vec![f64::NEG_INFINITY; n];
    if mean <= 0.0 {
        table[0] = 0.0;
        return Ok(table);
    }
    if variance < mean {
        return Err(Error::InvalidDispersion { mean, variance });
    }
    if variance <= mean * (1.0 + POISSON_REL_EPS) {
        table[0] = -mean;
        for k in 0..max_k {
            let kf = k as f64;
            table[(k + 1) as usize] = table[k as usize] + (mean / (kf + 1.0)).ln();
        }
        return Ok(table);
    }
    let r = mean * mean / (variance - mean);
    let p = mean / variance;
    let one_minus_p = 1.0 - p;
    table[0] = r * p.ln();
    for k in 0..max_k {
        let kf = k as f64;
        table[(k + 1) as usize] =
            table[k as usize] + ((kf + r) * one_minus_p / (kf + 1.0)).ln();
    }
    Ok(table)
}

/// How per-sample size factors are obtained.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SizeFactorMode {
    /// Raw library size scaled so the geometric mean over samples is 1.
    LibrarySize,
    /// Median of per-gene ratios to the geometric-mean reference row.
    MedianRatios,
    /// Caller-provided values.
    Explicit { values: Vec<f64> },
}

pub fn size_factors(counts: &CountMatrix, mode: &SizeFactorMode) -> Result<Vec<f64>> {
    match mode {
        SizeFactorMode::LibrarySize => {
            let libs: Vec<f64> = (0..counts.n_samples())
                .map(|j| counts.library_size(j) as f64)
                .collect();
            if let Some(j) = libs.iter().position(|&l| l <= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "sample {} has zero total count; cannot derive a size factor",
                    counts.sample_ids()[j]
                )));
            }
            let log_mean = libs.iter().map(|l| l.ln()).sum::<f64>() / libs.len() as f64;
            let gm = log_mean.exp();
            Ok(libs.iter().map(|l| l / gm).collect())
        }
        SizeFactorMode::MedianRatios => {
            let n = counts.n_samples();
            // geometric-mean reference over rows with no zero entries
            let mut ratios: Vec<Vec<f64>> = vec![Vec::new(); n];
            for i in 0..counts.n_genes() {
                let row = counts.row(i);
                if row.iter().any(|&k| k == 0) {
                    continue;
                }
                let log_ref = row.iter().map(|&k| (k as f64).ln()).sum::<f64>() / n as f64;
                for j in 0..n {
                    ratios[j].push((row[j] as f64).ln() - log_ref);
                }
            }
            if ratios[0].is_empty() {
                return Err(Error::InvalidInput(
                    "median-of-ratios size factors need at least one gene with all counts > 0"
                        .into(),
                ));
            }
            let mut out = Vec::with_capacity(n);
            for r in ratios.iter_mut() {
                r.sort_by(|a, b| a.total_cmp(b));
                let mid = r.len() / 2;
                let med = if r.len() % 2 == 1 {
                    r[mid]
                } else {
                    0.5 * (r[mid - 1] + r[mid])
                };
                out.push(med.exp());
            }
            Ok(out)
        }
        SizeFactorMode::Explicit { values } => {
            if values.len() != counts.n_samples() {
                return Err(Error::DimensionMismatch {
                    what: "explicit size factors",
                    expected: counts.n_samples(),
                    actual: values.len(),
                });
            }
            if values.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
                return Err(Error::InvalidInput(
                    "explicit size factors must all be positive".into(),
                ));
            }
            Ok(values.clone())
        }
    }
}
