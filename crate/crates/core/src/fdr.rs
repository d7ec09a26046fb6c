//! False discovery rate control: Benjamini-Hochberg step-up adjustment,
//! one-step pooled adjustment for pairwise p-value sets, the pairwise
//! two-condition baseline, and the significance rule.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::{exact_pvalue, Composition, ConditionalLaw};
use crate::model::{CountMatrix, DispersionModel, GeneModel, SampleMeta};

/// Which test a p-value belongs to: the single m-way omnibus test or one
/// unordered condition pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Comparison {
    Omnibus,
    /// Condition indices with a < b.
    Pair(usize, usize),
}

impl Comparison {
    pub fn pair(a: usize, b: usize) -> Comparison {
        if a < b {
            Comparison::Pair(a, b)
        } else {
            Comparison::Pair(b, a)
        }
    }

    pub fn label(&self, conditions: &[String]) -> String {
        match self {
            Comparison::Omnibus => "omnibus".to_string(),
            Comparison::Pair(a, b) => format!("{}|{}", conditions[*a], conditions[*b]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PvalueEntry {
    pub gene: usize,
    pub comparison: Comparison,
    pub p: f64,
    pub adj_p: Option<f64>,
}

/// A set of raw (and later adjusted) p-values across genes and comparisons.
#[derive(Debug, Clone, Default)]
pub struct PvalueSet {
    pub entries: Vec<PvalueEntry>,
}

impl PvalueSet {
    pub fn new(entries: Vec<PvalueEntry>) -> Self {
        PvalueSet { entries }
    }

    /// Minimum adjusted p per gene (the pairwise decision statistic).
    pub fn min_adjusted_by_gene(&self, n_genes: usize) -> Vec<Option<f64>> {
        let mut out = vec![None; n_genes];
        for e in &self.entries {
            if let Some(adj) = e.adj_p {
                let slot = &mut out[e.gene];
                *slot = Some(match *slot {
                    Some(cur) => adj.min(cur),
                    None => adj,
                });
            }
        }
        out
    }
}

/// Benjamini-Hochberg step-up adjustment. Returns adjusted p-values in the
/// original input order: adj_(i) = min_{j >= i} p_(j) * n / j, capped at 1.
pub fn bh_adjust(pvalues: &[f64]) -> Result<Vec<f64>> {
    for &p in pvalues {
        if !(0.0..=1.0).contains(&p) || p.is_nan() {
            return Err(Error::InvalidInput(format!(
                "p-value out of [0, 1]: {p}"
            )));
        }
    }
    let n = pvalues.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]));

    let mut adjusted = vec![0.0; n];
    let mut running_min = 1.0f64;
    for rank in (0..n).rev() {
        let idx = order[rank];
        let candidate = pvalues[idx] * n as f64 / (rank + 1) as f64;
        running_min = running_min.min(candidate);
        adjusted[idx] = running_min;
    }
    Ok(adjusted)
}

/// One-step pooled adjustment: concatenate every pairwise p-value, apply
/// Benjamini-Hochberg to the pooled vector, and allocate each adjusted value
/// back to its (gene, pair) origin.
pub fn pooled_pairwise_adjust(set: &PvalueSet) -> Result<PvalueSet> {
    let n_comparisons = {
        let mut seen: Vec<Comparison> = Vec::new();
        for e in &set.entries {
            if !seen.contains(&e.comparison) {
                seen.push(e.comparison);
            }
        }
        seen.len()
    };
    if n_comparisons < 2 {
        return Err(Error::InvalidInput(format!(
            "pooled adjustment needs >= 2 comparisons, got {n_comparisons}"
        )));
    }
    let raw: Vec<f64> = set.entries.iter().map(|e| e.p).collect();
    let adj = bh_adjust(&raw)?;
    let entries = set
        .entries
        .iter()
        .zip(adj)
        .map(|(e, a)| PvalueEntry {
            gene: e.gene,
            comparison: e.comparison,
            p: e.p,
            adj_p: Some(a),
        })
        .collect();
    Ok(PvalueSet::new(entries))
}

/// Run the two-condition exact test for every unordered condition pair,
/// refitting the pooled expression estimate on the restricted sample pair.
/// Yields C(m, 2) * n_genes entries in (pair, gene) order.
pub fn run_pairwise_baseline(
    counts: &CountMatrix,
    meta: &SampleMeta,
    disp: &DispersionModel,
    normalize: bool,
    cap: u64,
) -> Result<PvalueSet> {
    let m = meta.n_conditions();
    let mut entries = Vec::with_capacity(m * (m - 1) / 2 * counts.n_genes());
    for a in 0..m {
        for b in (a + 1)..m {
            let (pair_meta, keep) = meta.restrict_to_pair(a, b)?;
            for gene in 0..counts.n_genes() {
                let row = counts.row(gene);
                let pair_row: Vec<u64> = keep.iter().map(|&j| row[j]).collect();
                let p = pairwise_gene_pvalue(&pair_row, &pair_meta, disp, normalize, cap)?;
                entries.push(PvalueEntry {
                    gene,
                    comparison: Comparison::pair(a, b),
                    p,
                    adj_p: None,
                });
            }
        }
    }
    Ok(PvalueSet::new(entries))
}

fn pairwise_gene_pvalue(
    pair_row: &[u64],
    pair_meta: &SampleMeta,
    disp: &DispersionModel,
    normalize: bool,
    cap: u64,
) -> Result<f64> {
    let model = GeneModel::fit(pair_row, pair_meta, disp, normalize)?;
    if model.total == 0 {
        return Ok(1.0); // all-zero gene: single composition
    }
    let law = ConditionalLaw::from_gene_model(&model)?;
    let observed = Composition::new(model.condition_totals());
    exact_pvalue(&law, &observed, cap)
}

/// Size-factor-normalized mean count per condition.
pub fn condition_means(counts_row: &[u64], meta: &SampleMeta) -> Vec<f64> {
    (0..meta.n_conditions())
        .map(|c| {
            let samples = meta.samples_in(c);
            let sum: f64 = samples
                .iter()
                .map(|&j| counts_row[j] as f64 / meta.size_factors()[j])
                .sum();
            sum / samples.len() as f64
        })
        .collect()
}

/// Largest ratio of normalized condition means (larger over smaller) across
/// all unordered pairs. A pseudocount of 0.5 normalized units enters both
/// sides whenever either mean is zero, keeping the ratio finite.
pub fn max_fold_change(condition_means: &[f64]) -> f64 {
    let mut best = 1.0f64;
    for i in 0..condition_means.len() {
        for j in (i + 1)..condition_means.len() {
            let (hi, lo) = if condition_means[i] >= condition_means[j] {
                (condition_means[i], condition_means[j])
            } else {
                (condition_means[j], condition_means[i])
            };
            let fc = if lo == 0.0 {
                (hi + 0.5) / (lo + 0.5)
            } else {
                hi / lo
            };
            best = best.max(fc);
        }
    }
    best
}

/// Decision rule: adjusted p below alpha, optionally gated on a minimum
/// fold change.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SignificanceRule {
    pub alpha: f64,
    /// `None` disables the fold-change gate (the simulation-study rule);
    /// `Some(t)` requires max fold change >= t (the data-analysis rule).
    pub min_fold_change: Option<f64>,
}

impl SignificanceRule {
    pub fn data_analysis() -> Self {
        SignificanceRule {
            alpha: 0.05,
            min_fold_change: Some(4.0),
        }
    }

    pub fn simulation_study() -> Self {
        SignificanceRule {
            alpha: 0.05,
            min_fold_change: None,
        }
    }

    pub fn is_significant(&self, adj_p: f64, max_fold_change: f64) -> bool {
        let p_ok = adj_p < self.alpha;
        let fc_ok = match self.min_fold_change {
            Some(t) => max_fold_change >= t,
            None => true,
        };
        p_ok && fc_ok
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SignificanceCall {
    pub gene: usize,
    pub max_fold_change: f64,
    pub adj_p: f64,
    pub significant: bool,
}

/// Apply the rule to per-gene adjusted p-values (omnibus) or min adjusted
/// pairwise p-values, paired with per-gene max fold changes.
pub fn call_significance(
    adj_p: &[f64],
    fold_changes: &[f64],
    rule: &SignificanceRule,
) -> Result<Vec<SignificanceCall>> {
    if adj_p.len() != fold_changes.len() {
        return Err(Error::DimensionMismatch {
            what: "significance inputs",
            expected: adj_p.len(),
            actual: fold_changes.len(),
        });
    }
    Ok(adj_p
        .iter()
        .zip(fold_changes)
        .enumerate()
        .map(|(gene, (&p, &fc))| SignificanceCall {
            gene,
            max_fold_change: fc,
            adj_p: p,
            significant: rule.is_significant(p, fc),
        })
        .collect())
}
