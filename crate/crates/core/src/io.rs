//! Delimited-file ingestion and result serialization: count tables,
//! condition maps, per-gene totals summaries and the results TSV.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::CountMatrix;
use crate::pipeline::ResultRow;

fn delimiter_for(path: &Path) -> u8 {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => b',',
        _ => b'\t',
    }
}

fn parse_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

/// Parse a counts table: first column gene ids, header row sample ids,
/// remaining cells nonnegative integers. TSV by default, CSV when the file
/// extension is `.csv`.
pub fn load_counts(path: &Path) -> Result<CountMatrix> {
    let text = fs::read_to_string(path)?;
    let delim = delimiter_for(path) as char;
    let mut lines = text.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, "empty file: expected a header row"))?;
    let header_fields: Vec<&str> = header.split(delim).collect();
    if header_fields.len() < 2 {
        return Err(parse_err(
            path,
            "header must contain a gene-id column plus at least one sample column",
        ));
    }
    let samples: Vec<String> = header_fields[1..]
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if samples.iter().any(|s| s.is_empty()) {
        return Err(parse_err(path, "empty sample id in header"));
    }

    let mut genes = Vec::new();
    let mut counts: Vec<u64> = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(delim).collect();
        if fields.len() != samples.len() + 1 {
            return Err(parse_err(
                path,
                format!(
                    "line {}: expected {} columns, found {}",
                    lineno + 1,
                    samples.len() + 1,
                    fields.len()
                ),
            ));
        }
        let gene = fields[0].trim().to_string();
        if gene.is_empty() {
            return Err(parse_err(path, format!("line {}: empty gene id", lineno + 1)));
        }
        for (j, cell) in fields[1..].iter().enumerate() {
            let cell = cell.trim();
            let value: u64 = cell.parse().map_err(|_| {
                parse_err(
                    path,
                    format!(
                        "gene {gene}, sample {}: expected a nonnegative integer count, got {cell:?}",
                        samples[j]
                    ),
                )
            })?;
            counts.push(value);
        }
        genes.push(gene);
    }
    CountMatrix::new(genes, samples, counts)
}

/// Parse a two-column sample -> condition table and return condition labels
/// in the order of `samples`. Every sample must be covered exactly once;
/// unknown samples in the file are rejected.
pub fn load_conditions(path: &Path, samples: &[String]) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    let delim = delimiter_for(path) as char;
    let mut map = std::collections::HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(delim).map(|f| f.trim()).collect();
        if fields.len() != 2 {
            return Err(parse_err(
                path,
                format!("line {}: expected 2 columns (sample, condition)", lineno + 1),
            ));
        }
        // allow an optional header row named "sample"
        if lineno == 0 && fields[0].eq_ignore_ascii_case("sample") {
            continue;
        }
        if !samples.iter().any(|s| s == fields[0]) {
            return Err(parse_err(
                path,
                format!("line {}: unknown sample id {:?}", lineno + 1, fields[0]),
            ));
        }
        if map.insert(fields[0].to_string(), fields[1].to_string()).is_some() {
            return Err(parse_err(
                path,
                format!("line {}: duplicate sample id {:?}", lineno + 1, fields[0]),
            ));
        }
    }
    samples
        .iter()
        .map(|s| {
            map.get(s).cloned().ok_or_else(|| {
                parse_err(path, format!("sample {s:?} has no condition assignment"))
            })
        })
        .collect()
}

/// Parse a two-column sample -> size factor table, ordered like `samples`.
pub fn load_size_factors(path: &Path, samples: &[String]) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    let delim = delimiter_for(path) as char;
    let mut map = std::collections::HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(delim).map(|f| f.trim()).collect();
        if fields.len() != 2 {
            return Err(parse_err(
                path,
                format!("line {}: expected 2 columns (sample, size factor)", lineno + 1),
            ));
        }
        if lineno == 0 && fields[0].eq_ignore_ascii_case("sample") {
            continue;
        }
        let value: f64 = fields[1].parse().map_err(|_| {
            parse_err(
                path,
                format!("line {}: bad size factor {:?}", lineno + 1, fields[1]),
            )
        })?;
        map.insert(fields[0].to_string(), value);
    }
    samples
        .iter()
        .map(|s| {
            map.get(s).copied().ok_or_else(|| {
                parse_err(path, format!("sample {s:?} has no size factor"))
            })
        })
        .collect()
}

/// Six-number summary: min, first quartile, median, mean, third quartile,
/// max. Quartiles use type-7 linear interpolation on the sorted values:
/// h = (n - 1) q, x[floor(h)] + (h - floor(h)) * (x[floor(h)+1] - x[floor(h)]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SixNumberSummary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
}

pub fn summarize_totals(totals: &[u64]) -> Result<SixNumberSummary> {
    if totals.is_empty() {
        return Err(Error::InvalidInput(
            "cannot summarize an empty totals vector".into(),
        ));
    }
    let mut sorted: Vec<f64> = totals.iter().map(|&t| t as f64).collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let quantile = |q: f64| -> f64 {
        let h = (sorted.len() - 1) as f64 * q;
        let lo = h.floor() as usize;
        if lo + 1 >= sorted.len() {
            sorted[sorted.len() - 1]
        } else {
            sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
        }
    };
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    Ok(SixNumberSummary {
        min: sorted[0],
        q1: quantile(0.25),
        median: quantile(0.5),
        mean,
        q3: quantile(0.75),
        max: sorted[sorted.len() - 1],
    })
}

/// Format a float with enough digits to reconstruct the exact double
/// (17 significant digits).
pub fn fmt_full(x: f64) -> String {
    format!("{x:.16e}")
}

/// Write result rows as TSV. Per-condition total columns are emitted in
/// condition order; MC-only fields stay blank on exact rows.
pub fn write_results(path: &Path, conditions: &[String], rows: &[ResultRow]) -> Result<()> {
    let mut out = String::new();
    out.push_str("gene");
    for c in conditions {
        out.push_str(&format!("\tk_{c}"));
    }
    out.push_str(
        "\tk_total\tq0_hat\tmethod\tp_raw\tmc_std_err\tmc_ci_low\tmc_ci_high\tp_adj\tmax_fold_change\tsignificant\tp_floored\terror\n",
    );
    for row in rows {
        out.push_str(&row.to_tsv_line());
        out.push('\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Re-read a results TSV into (gene, p_raw, p_adj) triples; used for
/// round-trip checks and by downstream tooling.
pub fn read_results_pvalues(path: &Path) -> Result<Vec<(String, Option<f64>, Option<f64>)>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_err(path, "empty results file"))?;
    let cols: Vec<&str> = header.split('\t').collect();
    let p_idx = cols
        .iter()
        .position(|&c| c == "p_raw")
        .ok_or_else(|| parse_err(path, "missing p_raw column"))?;
    let adj_idx = cols
        .iter()
        .position(|&c| c == "p_adj")
        .ok_or_else(|| parse_err(path, "missing p_adj column"))?;
    let mut out = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let parse_opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<f64>()
                    .map(Some)
                    .map_err(|_| parse_err(path, format!("bad float {s:?}")))
            }
        };
        out.push((
            fields[0].to_string(),
            parse_opt(fields[p_idx])?,
            parse_opt(fields[adj_idx])?,
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_tmp(content: &str, ext: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(ext).tempfile().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_counts_tsv() {
        let f = write_tmp("gene\ts1\ts2\ng1\t3\t4\ng2\t0\t7\n", ".tsv");
        let m = load_counts(f.path()).unwrap();
        assert_eq!(m.n_genes(), 2);
        assert_eq!(m.n_samples(), 2);
        assert_eq!(m.row(0), &[3, 4]);
        assert_eq!(m.row(1), &[0, 7]);
        assert_eq!(m.sample_ids(), &["s1".to_string(), "s2".to_string()]);
    }

    #[test]
    fn load_counts_csv_by_extension() {
        let f = write_tmp("gene,s1,s2\ng1,1,2\n", ".csv");
        let m = load_counts(f.path()).unwrap();
        assert_eq!(m.row(0), &[1, 2]);
    }

    #[test]
    fn load_counts_empty_file_errors() {
        let f = write_tmp("", ".tsv");
        assert!(matches!(load_counts(f.path()), Err(Error::Parse { .. })));
    }

    #[test]
    fn load_counts_header_only_is_valid() {
        let f = write_tmp("gene\ts1\ts2\n", ".tsv");
        let m = load_counts(f.path()).unwrap();
        assert_eq!(m.n_genes(), 0);
        assert_eq!(m.n_samples(), 2);
    }

    #[test]
    fn load_counts_rejects_fractional_with_diagnostics() {
        let f = write_tmp("gene\ts1\ng1\t3.5\n", ".tsv");
        match load_counts(f.path()) {
            Err(Error::Parse { detail, .. }) => {
                assert!(detail.contains("g1") && detail.contains("s1"), "{detail}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_counts_rejects_negative() {
        let f = write_tmp("gene\ts1\ng1\t-2\n", ".tsv");
        assert!(load_counts(f.path()).is_err());
    }

    #[test]
    fn load_counts_rejects_duplicate_gene() {
        let f = write_tmp("gene\ts1\ng1\t1\ng1\t2\n", ".tsv");
        assert!(matches!(load_counts(f.path()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn load_conditions_orders_by_samples() {
        let f = write_tmp("s2\tb\ns1\ta\n", ".tsv");
        let samples = vec!["s1".to_string(), "s2".to_string()];
        let labels = load_conditions(f.path(), &samples).unwrap();
        assert_eq!(labels, vec!["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn load_conditions_missing_sample_errors() {
        let f = write_tmp("s1\ta\n", ".tsv");
        let samples = vec!["s1".to_string(), "s2".to_string()];
        assert!(load_conditions(f.path(), &samples).is_err());
    }

    #[test]
    fn load_conditions_unknown_sample_errors() {
        let f = write_tmp("s1\ta\nsX\tb\n", ".tsv");
        let samples = vec!["s1".to_string()];
        assert!(load_conditions(f.path(), &samples).is_err());
    }

    #[test]
    fn summary_single_gene() {
        let s = summarize_totals(&[42]).unwrap();
        assert_eq!(
            (s.min, s.q1, s.median, s.mean, s.q3, s.max),
            (42.0, 42.0, 42.0, 42.0, 42.0, 42.0)
        );
    }

    #[test]
    fn summary_known_quartiles() {
        // six values: h_q1 = 1.25, h_med = 2.5, h_q3 = 3.75
        let s = summarize_totals(&[0, 10, 20, 30, 40, 50]).unwrap();
        assert_eq!(s.min, 0.0);
        assert_eq!(s.q1, 12.5);
        assert_eq!(s.median, 25.0);
        assert_eq!(s.mean, 25.0);
        assert_eq!(s.q3, 37.5);
        assert_eq!(s.max, 50.0);
    }

    #[test]
    fn summary_unsorted_input() {
        let s = summarize_totals(&[50, 0, 30, 10, 40, 20]).unwrap();
        assert_eq!(s.q1, 12.5);
        assert_eq!(s.q3, 37.5);
    }

    #[test]
    fn full_precision_round_trips() {
        for &x in &[0.1, 1.0 / 3.0, 7.213e-87, 0.9999999999999999] {
            let s = fmt_full(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s}");
        }
    }
}
