//! Conditional exact test: enumerate integer compositions of the observed
//! total and sum null probabilities of outcomes at most as probable as the
//! observed one.

use std::time::Instant;

use num::BigUint;

use crate::error::{Error, Result};
use crate::math::{log_le_with_tie, LogSumExp};
use crate::model::{nb_log_pmf, nb_log_pmf_table, GeneModel};

/// Nonnegative integer vector with a fixed sum.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Composition {
    parts: Vec<u64>,
    sum: u64,
}

impl Composition {
    pub fn new(parts: Vec<u64>) -> Self {
        let sum = parts.iter().sum();
        Composition { parts, sum }
    }

    pub fn parts(&self) -> &[u64] {
        &self.parts
    }

    pub fn sum(&self) -> u64 {
        self.sum
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }
}

/// Per-condition null moments for the counts (K_{A_1}, ..., K_{A_m}),
/// conditioned on their sum being `total`. All moments derive from a single
/// pooled expression estimate.
#[derive(Debug, Clone)]
pub struct ConditionalLaw {
    moments: Vec<(f64, f64)>, // (mu_hat, var_hat) per condition
    total: u64,
}

impl ConditionalLaw {
    pub fn new(moments: Vec<(f64, f64)>, total: u64) -> Result<Self> {
        if moments.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "conditional law needs at least 2 conditions, got {}",
                moments.len()
            )));
        }
        for &(mu, var) in &moments {
            if !(mu > 0.0) || !mu.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "condition mean must be positive, got {mu}"
                )));
            }
            if var < mu {
                return Err(Error::InvalidDispersion {
                    mean: mu,
                    variance: var,
                });
            }
        }
        Ok(ConditionalLaw { moments, total })
    }

    pub fn from_gene_model(model: &GeneModel) -> Result<Self> {
        let moments = model
            .per_condition
            .iter()
            .map(|cm| (cm.mu_hat, cm.var_hat))
            .collect();
        Self::new(moments, model.total)
    }

    pub fn n_conditions(&self) -> usize {
        self.moments.len()
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn moments(&self) -> &[(f64, f64)] {
        &self.moments
    }

    /// Log-pmf lookup tables for k = 0..=total, one per condition.
    fn log_pmf_tables(&self) -> Result<Vec<Vec<f64>>> {
        self.moments
            .iter()
            .map(|&(mu, var)| nb_log_pmf_table(self.total, mu, var))
            .collect()
    }
}

/// Number of nonnegative integer m-vectors summing to `total`:
/// C(total + m - 1, m - 1), in exact big-integer arithmetic.
pub fn composition_count(total: u64, m: usize) -> BigUint {
    binomial_biguint(total + m as u64 - 1, m as u64 - 1)
}

/// Exact binomial coefficient via the multiplicative formula; every partial
/// product is divisible by its step index.
fn binomial_biguint(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::from(0u32);
    }
    let k = k.min(n - k);
    let mut acc = BigUint::from(1u32);
    for i in 1..=k {
        acc = acc * BigUint::from(n - k + i) / BigUint::from(i);
    }
    acc
}

/// Iterator over every composition of `total` into `m` parts, in
/// colexicographic order. Successive items differ in at most three
/// coordinates.
#[derive(Debug)]
pub struct CompositionIter {
    parts: Vec<u64>,
    total: u64,
    started: bool,
    done: bool,
}

impl CompositionIter {
    fn new(total: u64, m: usize) -> Self {
        let mut parts = vec![0u64; m];
        parts[0] = total;
        CompositionIter {
            parts,
            total,
            started: false,
            done: false,
        }
    }

    /// Advance in place; returns false once the sequence is exhausted.
    /// Exposed so hot loops can reuse one buffer instead of allocating.
    pub fn advance(&mut self) -> bool {
        if self.done {
            return false;
        }
        if !self.started {
            self.started = true;
            return true;
        }
        let m = self.parts.len();
        if self.parts[m - 1] == self.total {
            self.done = true;
            return false;
        }
        let h = self.parts.iter().position(|&a| a > 0).expect("sum > 0");
        let v = self.parts[h];
        self.parts[h] = 0;
        self.parts[0] = v - 1;
        self.parts[h + 1] += 1;
        true
    }

    pub fn current(&self) -> &[u64] {
        &self.parts
    }
}

impl Iterator for CompositionIter {
    type Item = Composition;

    fn next(&mut self) -> Option<Composition> {
        if self.advance() {
            Some(Composition::new(self.parts.clone()))
        } else {
            None
        }
    }
}

/// Enumerate all compositions of `total` into `m` parts, colexicographic
/// order, provided the count does not exceed `cap`.
pub fn enumerate_compositions(total: u64, m: usize, cap: u64) -> Result<CompositionIter> {
    let count = composition_count(total, m);
    if count > BigUint::from(cap) {
        return Err(Error::InfeasibleEnumeration { count, cap });
    }
    Ok(CompositionIter::new(total, m))
}

/// Unconditional joint log-probability of a composition under the law:
/// sum over conditions of the per-condition log pmf. Conditioning on the
/// total happens in the p-value ratio.
pub fn log_joint_prob(law: &ConditionalLaw, comp: &Composition) -> Result<f64> {
    if comp.sum() != law.total() {
        return Err(Error::SumMismatch {
            expected: law.total(),
            actual: comp.sum(),
        });
    }
    if comp.len() != law.n_conditions() {
        return Err(Error::DimensionMismatch {
            what: "composition parts",
            expected: law.n_conditions(),
            actual: comp.len(),
        });
    }
    let mut lp = 0.0;
    for (&a, &(mu, var)) in comp.parts().iter().zip(law.moments()) {
        lp += nb_log_pmf(a, mu, var)?;
    }
    Ok(lp)
}

/// Optional bounds on the exact enumeration.
#[derive(Debug, Clone, Copy)]
pub struct ExactLimits {
    /// Maximum number of compositions; `None` disables the check.
    pub cap: Option<u64>,
    /// Wall-clock deadline checked periodically inside the loop.
    pub deadline: Option<Instant>,
}

pub const DEFAULT_ENUMERATION_CAP: u64 = 20_000_000;

impl Default for ExactLimits {
    fn default() -> Self {
        ExactLimits {
            cap: Some(DEFAULT_ENUMERATION_CAP),
            deadline: None,
        }
    }
}

/// Exact conditional p-value: the probability-weighted fraction of
/// compositions at most as probable as the observed one,
///   p = sum_{a : p(a) <= p(obs)} p(a) / sum_a p(a),
/// accumulated in log space over every composition of the total.
pub fn exact_pvalue(law: &ConditionalLaw, observed: &Composition, cap: u64) -> Result<f64> {
    exact_pvalue_with_limits(
        law,
        observed,
        ExactLimits {
            cap: Some(cap),
            deadline: None,
        },
    )
}

pub fn exact_pvalue_with_limits(
    law: &ConditionalLaw,
    observed: &Composition,
    limits: ExactLimits,
) -> Result<f64> {
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
    if let Some(cap) = limits.cap {
        let count = composition_count(law.total(), m);
        if count > BigUint::from(cap) {
            return Err(Error::InfeasibleEnumeration { count, cap });
        }
    }

    let tables = law.log_pmf_tables()?;
    let lp_obs: f64 = observed
        .parts()
        .iter()
        .zip(&tables)
        .map(|(&a, t)| t[a as usize])
        .sum();

    let mut numerator = LogSumExp::new();
    let mut denominator = LogSumExp::new();
    let mut iter = CompositionIter::new(law.total(), m);
    let mut steps: u64 = 0;
    let start = Instant::now();
    while iter.advance() {
        steps += 1;
        if let Some(deadline) = limits.deadline {
            if steps & 0xFFFFF == 0 && Instant::now() >= deadline {
                return Err(Error::Timeout {
                    seconds: start.elapsed().as_secs_f64(),
                });
            }
        }
        let mut lp = 0.0;
        for (c, &a) in iter.current().iter().enumerate() {
            lp += tables[c][a as usize];
        }
        denominator.add(lp);
        if log_le_with_tie(lp, lp_obs) {
            numerator.add(lp);
        }
    }

    let log_den = denominator.log_sum();
    if !log_den.is_finite() {
        return Err(Error::NumericalDegeneracy(
            "conditional law carries no probability mass on the observed total".into(),
        ));
    }
    Ok((numerator.log_sum() - log_den).exp().min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn law(moments: &[(f64, f64)], total: u64) -> ConditionalLaw {
        ConditionalLaw::new(moments.to_vec(), total).unwrap()
    }

    #[test]
    fn count_small_cases() {
        assert_eq!(composition_count(2, 3), BigUint::from(6u32));
        assert_eq!(composition_count(0, 5), BigUint::from(1u32));
        assert_eq!(composition_count(5, 4), BigUint::from(56u32));
        assert_eq!(composition_count(10, 2), BigUint::from(11u32));
    }

    #[test]
    fn count_paper_scale_total() {
        // C(53532, 2) = 53532 * 53531 / 2, cross-checked against the
        // multiplicative binomial oracle in exact integer arithmetic.
        assert_eq!(
            composition_count(53530, 3),
            BigUint::from(1_432_810_746u64)
        );
    }

    #[test]
    fn enumeration_yields_each_composition_once() {
        let all: Vec<Composition> = enumerate_compositions(5, 4, 1000).unwrap().collect();
        assert_eq!(all.len(), 56);
        let mut seen = std::collections::HashSet::new();
        for c in &all {
            assert_eq!(c.sum(), 5);
            assert_eq!(c.parts().iter().sum::<u64>(), 5);
            assert!(seen.insert(c.parts().to_vec()));
        }
    }

    #[test]
    fn enumeration_is_colexicographic() {
        let all: Vec<Composition> = enumerate_compositions(3, 3, 100).unwrap().collect();
        // colex: compare reversed part vectors lexicographically
        for w in all.windows(2) {
            let a: Vec<u64> = w[0].parts().iter().rev().cloned().collect();
            let b: Vec<u64> = w[1].parts().iter().rev().cloned().collect();
            assert!(a < b, "{a:?} !< {b:?}");
        }
    }

    #[test]
    fn enumeration_total_zero() {
        let all: Vec<Composition> = enumerate_compositions(0, 3, 10).unwrap().collect();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].parts(), &[0, 0, 0]);
    }

    #[test]
    fn enumeration_cap_exceeded() {
        match enumerate_compositions(100, 3, 10) {
            Err(Error::InfeasibleEnumeration { count, cap }) => {
                assert_eq!(count, BigUint::from(5151u32));
                assert_eq!(cap, 10);
            }
            other => panic!("expected infeasible enumeration, got {other:?}"),
        }
    }

    #[test]
    fn log_joint_symmetric_law_exchangeable() {
        let l = law(&[(5.0, 8.0), (5.0, 8.0)], 7);
        let ab = log_joint_prob(&l, &Composition::new(vec![2, 5])).unwrap();
        let ba = log_joint_prob(&l, &Composition::new(vec![5, 2])).unwrap();
        assert_relative_eq!(ab, ba, max_relative = 1e-14);
    }

    #[test]
    fn log_joint_zero_total() {
        let l = law(&[(1.0, 2.0), (3.0, 4.0)], 0);
        let lp = log_joint_prob(&l, &Composition::new(vec![0, 0])).unwrap();
        let expected =
            nb_log_pmf(0, 1.0, 2.0).unwrap() + nb_log_pmf(0, 3.0, 4.0).unwrap();
        assert_relative_eq!(lp, expected, max_relative = 1e-14);
    }

    #[test]
    fn log_joint_frozen_value() {
        // law mu = 2, var = 3 per condition; composition (1, 2, 3);
        // value frozen from a high-precision pmf-product oracle.
        let l = law(&[(2.0, 3.0); 3], 6);
        let lp = log_joint_prob(&l, &Composition::new(vec![1, 2, 3])).unwrap();
        assert_relative_eq!(lp, -4.772643301638703, max_relative = 1e-12);
    }

    #[test]
    fn log_joint_sum_mismatch() {
        let l = law(&[(2.0, 3.0); 3], 6);
        assert!(matches!(
            log_joint_prob(&l, &Composition::new(vec![1, 2, 4])),
            Err(Error::SumMismatch { .. })
        ));
    }

    #[test]
    fn pvalue_zero_total_is_one() {
        let l = law(&[(1.0, 1.5), (2.0, 2.5)], 0);
        let p = exact_pvalue(&l, &Composition::new(vec![0, 0]), 100).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn pvalue_at_argmax_is_one() {
        // symmetric law, observed at the (unique according to scan) modal
        // composition: every composition satisfies p(a) <= p(obs)
        let l = law(&[(5.0, 7.0), (5.0, 7.0)], 10);
        let tables = l.log_pmf_tables().unwrap();
        let mut best = (0u64, f64::NEG_INFINITY);
        for a in 0..=10u64 {
            let lp = tables[0][a as usize] + tables[1][(10 - a) as usize];
            if lp > best.1 {
                best = (a, lp);
            }
        }
        let obs = Composition::new(vec![best.0, 10 - best.0]);
        let p = exact_pvalue(&l, &obs, 100).unwrap();
        assert_relative_eq!(p, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn pvalue_extreme_observation_frozen() {
        // m = 3, total 30, symmetric law (10, 15); observed (30, 0, 0).
        // Frozen from an independent brute-force summation in 60-digit
        // arithmetic.
        let l = law(&[(10.0, 15.0); 3], 30);
        let p = exact_pvalue(&l, &Composition::new(vec![30, 0, 0]), 1_000_000).unwrap();
        assert_relative_eq!(p, 1.26026483996437652e-10, max_relative = 1e-8);
    }

    #[test]
    fn pvalue_two_condition_frozen() {
        // m = 2, law (4, 6), (8, 16), total 12, observed (2, 10); value from
        // the same brute-force oracle.
        let l = law(&[(4.0, 6.0), (8.0, 16.0)], 12);
        let p = exact_pvalue(&l, &Composition::new(vec![2, 10]), 1000).unwrap();
        assert_relative_eq!(p, 0.4776717533438358, max_relative = 1e-10);
    }

    #[test]
    fn pvalue_sum_mismatch() {
        let l = law(&[(4.0, 6.0), (8.0, 16.0)], 12);
        assert!(matches!(
            exact_pvalue(&l, &Composition::new(vec![2, 9]), 1000),
            Err(Error::SumMismatch { .. })
        ));
    }

    #[test]
    fn pvalue_infeasible_propagates() {
        let l = law(&[(10.0, 15.0); 3], 30);
        assert!(matches!(
            exact_pvalue(&l, &Composition::new(vec![30, 0, 0]), 5),
            Err(Error::InfeasibleEnumeration { .. })
        ));
    }

    #[test]
    fn pvalue_label_permutation_invariant_symmetric_law() {
        let l = law(&[(6.0, 9.0); 3], 18);
        let p1 = exact_pvalue(&l, &Composition::new(vec![12, 4, 2]), 100_000).unwrap();
        let p2 = exact_pvalue(&l, &Composition::new(vec![2, 12, 4]), 100_000).unwrap();
        assert_relative_eq!(p1, p2, max_relative = 1e-10);
    }

    proptest! {
        // denominator equals P(sum = total) by direct pmf convolution
        #[test]
        fn denominator_matches_convolution(
            total in 0u64..40,
            mu1 in 1.0f64..8.0,
            mu2 in 1.0f64..8.0,
            extra1 in 0.0f64..2.0,
            extra2 in 0.0f64..2.0,
        ) {
            let l = law(
                &[(mu1, mu1 * (1.0 + extra1)), (mu2, mu2 * (1.0 + extra2))],
                total,
            );
            let mut den = LogSumExp::new();
            for c in CompositionIter::new(total, 2) {
                den.add(log_joint_prob(&l, &c).unwrap());
            }
            let conv: f64 = (0..=total)
                .map(|a| {
                    crate::model::nb_pmf(a, mu1, mu1 * (1.0 + extra1)).unwrap()
                        * crate::model::nb_pmf(total - a, mu2, mu2 * (1.0 + extra2)).unwrap()
                })
                .sum();
            prop_assert!(
                (den.log_sum().exp() - conv).abs() <= 1e-8 * conv.abs().max(1e-300),
                "lse = {}, conv = {}",
                den.log_sum().exp(),
                conv
            );
        }

        // inflating every probability by a common factor leaves the p-value
        // unchanged (tie semantics are scale-free)
        #[test]
        fn pvalue_invariant_under_log_offset(obs_first in 0u64..=15) {
            let total = 15u64;
            let l = law(&[(4.0, 6.0), (9.0, 14.0)], total);
            let obs = Composition::new(vec![obs_first, total - obs_first]);
            let p = exact_pvalue(&l, &obs, 1000).unwrap();

            // recompute with all log-probabilities shifted by a constant
            let tables = l.log_pmf_tables().unwrap();
            let offset = 7.25f64;
            let lp_obs = tables[0][obs_first as usize]
                + tables[1][(total - obs_first) as usize]
                + offset;
            let mut num = LogSumExp::new();
            let mut den = LogSumExp::new();
            for a in 0..=total {
                let lp = tables[0][a as usize] + tables[1][(total - a) as usize] + offset;
                den.add(lp);
                if log_le_with_tie(lp, lp_obs) {
                    num.add(lp);
                }
            }
            let p_shifted = (num.log_sum() - den.log_sum()).exp().min(1.0);
            prop_assert!((p - p_shifted).abs() <= 1e-10 * p.max(1e-300));
        }

        #[test]
        fn count_matches_enumeration(total in 0u64..25, m in 2usize..5) {
            let n: u64 = CompositionIter::new(total, m).count() as u64;
            prop_assert_eq!(composition_count(total, m), BigUint::from(n));
        }
    }
}
