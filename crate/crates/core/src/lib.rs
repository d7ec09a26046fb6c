//! Differential expression testing for count data across two or more
//! biological conditions under a negative-binomial model.
//!
//! The omnibus test conditions on each gene's total read count and asks how
//! probable it is to see a split across conditions at most as likely as the
//! observed one. For small totals the p-value is computed exactly by
//! enumerating every integer composition of the total; for large totals a
//! Monte Carlo estimator over uniformly sampled compositions takes over.
//! Supporting machinery covers size factors, Benjamini-Hochberg FDR control,
//! a pooled pairwise-testing baseline, a power/FDR simulation harness and a
//! runtime scaling benchmark.

pub mod bench;
pub mod error;
pub mod exact;
pub mod fdr;
pub mod io;
pub mod math;
pub mod mc;
pub mod model;
pub mod pipeline;
pub mod simulate;

pub use error::{Error, Result};
pub use exact::{
    composition_count, enumerate_compositions, exact_pvalue, log_joint_prob, Composition,
    ConditionalLaw, DEFAULT_ENUMERATION_CAP,
};
pub use fdr::{
    bh_adjust, call_significance, max_fold_change, pooled_pairwise_adjust, run_pairwise_baseline,
    Comparison, PvalueEntry, PvalueSet, SignificanceCall, SignificanceRule,
};
pub use mc::{
    choose_method, derive_stream_seed, mc_pvalue, sample_composition, stream_rng, EstimatorKind,
    McConfig, McEstimate, Method,
};
pub use model::{
    condition_moments, nb_log_pmf, nb_pmf, pooled_q0, size_factors, CountMatrix, DispersionModel,
    GeneModel, SampleMeta, SizeFactorMode,
};
