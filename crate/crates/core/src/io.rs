//! TSV ingestion and report writing.
//!
//! Counts on disk are genes x samples: first column gene id, header row of
//! sample ids, integer cells. Metadata has columns `sample_id`, `condition`,
//! then covariate columns. Everything is UTF-8, tab-delimited, `.` decimal.

use crate::data::{CountMatrix, DesignInfo};
use crate::error::{Error, Result};
use crate::filter::FdpCurve;
use crate::pipeline::GeneReportRow;
use crate::sim::{MetricsRow, NullCheckResult};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

fn parse_error(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Read a genes-as-rows count TSV into the internal samples x genes layout.
pub fn read_counts_tsv(path: impl AsRef<Path>) -> Result<CountMatrix> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_error(path, 1, "empty file"))?;
    let header = header?;
    let sample_ids: Vec<String> = header.split('\t').skip(1).map(str::to_string).collect();
    if sample_ids.is_empty() {
        return Err(parse_error(path, 1, "header has no sample columns"));
    }
    let n = sample_ids.len();

    let mut gene_ids = Vec::new();
    let mut by_gene: Vec<Vec<u64>> = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let gene_id = fields
            .next()
            .ok_or_else(|| parse_error(path, line_no, "missing gene id"))?;
        let mut row = Vec::with_capacity(n);
        for (col, field) in fields.enumerate() {
            let value: f64 = field.trim().parse().map_err(|_| {
                parse_error(
                    path,
                    line_no,
                    format!("count for gene `{gene_id}` column {} is not numeric: `{field}`", col + 2),
                )
            })?;
            if value < 0.0 {
                return Err(parse_error(
                    path,
                    line_no,
                    format!("NEGATIVE_COUNT for gene `{gene_id}` in sample `{}`", sample_ids[col.min(n - 1)]),
                ));
            }
            if !value.is_finite() || value.fract() != 0.0 {
                return Err(parse_error(
                    path,
                    line_no,
                    format!("NON_INTEGER_COUNT for gene `{gene_id}` in sample `{}`", sample_ids[col.min(n - 1)]),
                ));
            }
            row.push(value as u64);
        }
        if row.len() != n {
            return Err(parse_error(
                path,
                line_no,
                format!("expected {n} counts, found {}", row.len()),
            ));
        }
        gene_ids.push(gene_id.to_string());
        by_gene.push(row);
    }
    if gene_ids.is_empty() {
        return Err(parse_error(path, 1, "no gene rows"));
    }

    let m = gene_ids.len();
    let mut counts = vec![0u64; n * m];
    for (j, row) in by_gene.iter().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            counts[i * m + j] = v;
        }
    }
    CountMatrix::new(counts, sample_ids, gene_ids)
}

/// Write counts back out in the genes-as-rows format.
pub fn write_counts_tsv(path: impl AsRef<Path>, counts: &CountMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "gene_id")?;
    for id in counts.sample_ids() {
        write!(w, "\t{id}")?;
    }
    writeln!(w)?;
    for j in 0..counts.n_genes() {
        write!(w, "{}", counts.gene_ids()[j])?;
        for i in 0..counts.n_samples() {
            write!(w, "\t{}", counts.count(i, j))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Read sample metadata and align it to the count matrix sample order.
pub fn read_metadata_tsv(
    path: impl AsRef<Path>,
    sample_order: &[String],
) -> Result<DesignInfo> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_error(path, 1, "empty file"))?;
    let header = header?;
    let cols: Vec<&str> = header.split('\t').collect();
    if cols.len() < 2 || cols[0] != "sample_id" || cols[1] != "condition" {
        return Err(parse_error(
            path,
            1,
            "header must start with `sample_id\tcondition`",
        ));
    }
    let p = cols.len() - 2;

    let mut rows: std::collections::HashMap<String, (String, Vec<f64>)> =
        std::collections::HashMap::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != cols.len() {
            return Err(parse_error(
                path,
                line_no,
                format!("expected {} fields, found {}", cols.len(), fields.len()),
            ));
        }
        let mut covs = Vec::with_capacity(p);
        for (c, field) in fields[2..].iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                parse_error(
                    path,
                    line_no,
                    format!("covariate `{}` is not numeric: `{field}`", cols[2 + c]),
                )
            })?;
            covs.push(v);
        }
        if rows
            .insert(fields[0].to_string(), (fields[1].to_string(), covs))
            .is_some()
        {
            return Err(parse_error(
                path,
                line_no,
                format!("duplicate sample id `{}`", fields[0]),
            ));
        }
    }

    let mut labels = Vec::with_capacity(sample_order.len());
    let mut covariates = Vec::with_capacity(sample_order.len() * p);
    for id in sample_order {
        let (condition, covs) = rows.remove(id).ok_or_else(|| {
            parse_error(path, 0, format!("sample `{id}` from the count matrix is missing"))
        })?;
        labels.push(condition);
        covariates.extend(covs);
    }
    if let Some(extra) = rows.keys().next() {
        return Err(parse_error(
            path,
            0,
            format!("metadata sample `{extra}` does not appear in the count matrix"),
        ));
    }
    DesignInfo::from_labels(&labels, covariates, p)
}

/// Two-column (base_mean, dispersion) table; a non-numeric first row is
/// treated as a header.
pub fn read_params_tsv(path: impl AsRef<Path>) -> Result<Vec<(f64, f64)>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 {
            return Err(parse_error(path, line_no, "expected two columns"));
        }
        let parsed: std::result::Result<(f64, f64), _> = fields[0]
            .trim()
            .parse()
            .and_then(|a| fields[1].trim().parse().map(|b| (a, b)));
        match parsed {
            Ok((mean, phi)) => {
                if !(mean > 0.0 && phi > 0.0) {
                    return Err(parse_error(
                        path,
                        line_no,
                        "base mean and dispersion must be positive",
                    ));
                }
                out.push((mean, phi));
            }
            Err(_) if line_no == 1 => continue, // header
            Err(_) => {
                return Err(parse_error(path, line_no, "non-numeric parameter row"));
            }
        }
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => "NA".to_string(),
    }
}

fn opt_sci(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6e}"),
        None => "NA".to_string(),
    }
}

/// Per-gene report produced by the end-to-end analysis.
pub fn write_report_tsv(path: impl AsRef<Path>, rows: &[GeneReportRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "gene_id\tbaseMean\tlog2FoldChange\tse\tstat_observed\tp_value\tnullstrap_discovery\tstatus\tlog_fold_change"
    )?;
    for r in rows {
        writeln!(
            w,
            "{}\t{:.6}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.gene_id,
            r.base_mean,
            opt(r.log2_fold_change),
            opt(r.se),
            opt(r.stat_observed),
            opt_sci(r.p_value),
            u8::from(r.discovery),
            r.status.as_str(),
            opt(r.log_fold_change),
        )?;
    }
    Ok(())
}

/// Threshold/FDP pairs for plotting.
pub fn write_fdp_tsv(path: impl AsRef<Path>, curve: &FdpCurve) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "threshold\tfdp")?;
    for (t, f) in curve.thresholds.iter().zip(&curve.fdp) {
        writeln!(w, "{t:.6}\t{f:.6}")?;
    }
    Ok(())
}

/// Benchmark metrics table; skipped methods carry SKIPPED in the rate columns.
pub fn write_metrics_tsv(path: impl AsRef<Path>, rows: &[MetricsRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "setting\tn\tm\tpi_de\tfc\tq\tcovariates\tmethod\tfdr\tfdr_se\tpower\tpower_se\treplicates"
    )?;
    for r in rows {
        let rate = |v: f64| {
            if r.skipped {
                "SKIPPED".to_string()
            } else {
                format!("{v:.6}")
            }
        };
        writeln!(
            w,
            "{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.setting,
            r.n,
            r.m,
            r.pi_de,
            r.fc,
            r.q,
            u8::from(r.covariates),
            r.method,
            rate(r.fdr),
            rate(r.fdr_se),
            rate(r.power),
            rate(r.power_se),
            r.replicates,
        )?;
    }
    Ok(())
}

/// Permutation negative-control summary.
pub fn write_null_check_tsv(path: impl AsRef<Path>, results: &[NullCheckResult]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "method\tmean_discoveries\tp50\tp95\tmax")?;
    for r in results {
        writeln!(
            w,
            "{}\t{:.6}\t{}\t{}\t{}",
            r.method,
            r.mean(),
            r.percentile(0.5),
            r.percentile(0.95),
            r.max(),
        )?;
    }
    Ok(())
}
