//! `nullstrap` command-line tool.
//!
//! Subcommands:
//!   analyze     run the discovery pipeline on a count matrix + metadata
//!   simulate    run the benchmark grid and write metrics.tsv
//!   null-check  label-permutation negative control
//!
//! Every run writes `run.json` (resolved configuration, seed, input
//! checksums) next to its outputs. Exit codes: 0 success, 2 input error,
//! 3 internal pipeline error.

mod config_file;
mod run_record;

use clap::{Args, Parser, Subcommand};
use nullstrap_core::prelude::*;
use nullstrap_core::sim::expand_grid;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "nullstrap", version, about = "FDR-calibrated differential expression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze a count matrix against sample metadata
    Analyze(AnalyzeArgs),
    /// Run the simulation benchmark grid
    Simulate(SimulateArgs),
    /// Permutation negative control on a two-condition dataset
    NullCheck(NullCheckArgs),
}

#[derive(Args, Clone)]
struct SharedArgs {
    /// RNG seed; fixes every downstream draw
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Worker threads (0 = auto)
    #[arg(long, env = "NULLSTRAP_THREADS", default_value_t = 0)]
    threads: usize,

    /// Disable the small-sample adjustment of q
    #[arg(long)]
    no_adjust: bool,

    /// Statistic mode: scaled_wald | neg_log_p | wald_quad (default: by K)
    #[arg(long, value_parser = parse_stat)]
    stat: Option<StatMode>,

    /// Output directory
    #[arg(long, default_value = "nullstrap_out")]
    out: PathBuf,

    /// Flat key=value file whose keys mirror flag names; command-line
    /// flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Count matrix TSV (genes as rows, first column gene id)
    counts: PathBuf,
    /// Sample metadata TSV (sample_id, condition, covariates...)
    metadata: PathBuf,

    /// Target FDR level
    #[arg(long, default_value_t = 0.05)]
    q: f64,

    /// Write the synthetic null matrix to this path
    #[arg(long)]
    dump_null: Option<PathBuf>,

    /// Write the threshold/FDP curve to this path
    #[arg(long)]
    dump_fdp: Option<PathBuf>,

    /// Disable dispersion shrinkage toward the mean-dispersion trend
    #[arg(long)]
    no_shrink_dispersion: bool,

    #[arg(long, hide = true)]
    per_gene_sf_resample: bool,

    #[command(flatten)]
    shared: SharedArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// Grid preset: 1 (plain two-group) or 2 (confounded covariate)
    #[arg(long)]
    setting: Option<u8>,

    /// Sample sizes (comma-separated)
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,

    /// Fold changes (comma-separated)
    #[arg(long, value_delimiter = ',')]
    fc: Option<Vec<f64>>,

    /// DE gene proportions (comma-separated)
    #[arg(long, value_delimiter = ',')]
    pi: Option<Vec<f64>>,

    /// Target FDR levels (comma-separated)
    #[arg(long, value_delimiter = ',')]
    q: Option<Vec<f64>>,

    /// Genes per dataset
    #[arg(long, default_value_t = 1000)]
    m: usize,

    /// Replicates per grid cell
    #[arg(long, default_value_t = 50)]
    reps: usize,

    /// Methods to run (comma-separated)
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    methods: Option<Vec<Method>>,

    /// Gene parameter table (base_mean, dispersion) sampled with replacement
    #[arg(long)]
    params: Option<PathBuf>,

    /// Force all DE effects positive instead of random signs
    #[arg(long)]
    all_up: bool,

    /// Add the correlated binary covariate regime (implied by --setting 2)
    #[arg(long)]
    covariates: bool,

    #[command(flatten)]
    shared: SharedArgs,
}

#[derive(Args)]
struct NullCheckArgs {
    /// Count matrix TSV
    counts: PathBuf,
    /// Sample metadata TSV
    metadata: PathBuf,

    /// Target FDR level
    #[arg(long, default_value_t = 0.05)]
    q: f64,

    /// Number of label permutations
    #[arg(long, default_value_t = 100)]
    permutations: usize,

    /// Methods to run (comma-separated)
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    methods: Option<Vec<Method>>,

    #[command(flatten)]
    shared: SharedArgs,
}

fn parse_stat(s: &str) -> std::result::Result<StatMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn main() -> ExitCode {
    let argv = config_file::argv_with_config();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints its own message; usage problems are input errors
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };

    let result = match cli.command {
        Command::Analyze(args) => cmd_analyze(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::NullCheck(args) => cmd_null_check(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

fn init_threads(threads: usize) {
    if threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    init_threads(args.shared.threads);
    let counts = read_counts_tsv(&args.counts)?;
    let design = read_metadata_tsv(&args.metadata, counts.sample_ids())?;

    let opts = NullstrapOptions {
        q: args.q,
        seed: args.shared.seed,
        adjust: !args.shared.no_adjust,
        stat_mode: args.shared.stat,
        shrink_dispersion: !args.no_shrink_dispersion,
        per_gene_sf_resample: args.per_gene_sf_resample,
        size_factors: None,
    };
    let outcome = run_nullstrap(&counts, &design, &opts)?;

    std::fs::create_dir_all(&args.shared.out)?;
    write_report_tsv(args.shared.out.join("report.tsv"), &outcome.rows)?;
    if let Some(path) = &args.dump_null {
        write_counts_tsv(path, &outcome.null_matrix)?;
    }
    if let Some(path) = &args.dump_fdp {
        write_fdp_tsv(path, &outcome.filter.curve)?;
    }

    run_record::write(
        &args.shared.out,
        serde_json::json!({
            "subcommand": "analyze",
            "q": args.q,
            "seed": args.shared.seed,
            "threads": args.shared.threads,
            "adjust": !args.shared.no_adjust,
            "stat": outcome.mode.as_str(),
            "shrink_dispersion": !args.no_shrink_dispersion,
            "per_gene_sf_resample": args.per_gene_sf_resample,
            "dump_null": args.dump_null,
            "dump_fdp": args.dump_fdp,
            "tau": outcome.filter.tau,
            "effective_q": outcome.filter.effective_q,
            "discoveries": outcome.filter.discoveries.len(),
            "inputs": [
                run_record::input_entry(&args.counts)?,
                run_record::input_entry(&args.metadata)?,
            ],
        }),
    )?;

    eprintln!(
        "{} discoveries among {} genes at tau = {:.4} (effective q = {:.4})",
        outcome.filter.discoveries.len(),
        counts.n_genes(),
        outcome.filter.tau,
        outcome.filter.effective_q
    );
    Ok(())
}

/// Benchmark-grid presets; explicit axis flags override single dimensions.
fn grid_axes(args: &SimulateArgs) -> (Vec<usize>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let (mut ns, mut fcs, mut pis, mut qs) = match args.setting {
        Some(1) => (
            (6..=24).step_by(2).collect::<Vec<_>>(),
            vec![2.0, 2.5, 3.0],
            vec![0.1, 0.15, 0.2],
            vec![0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4],
        ),
        Some(2) => (
            (6..=24).step_by(2).collect::<Vec<_>>(),
            vec![2.5, 3.0, 3.5],
            vec![0.1, 0.15, 0.2],
            vec![0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4],
        ),
        _ => (vec![16], vec![2.0], vec![0.1], vec![0.05]),
    };
    if let Some(n) = &args.n {
        ns = n.clone();
    }
    if let Some(fc) = &args.fc {
        fcs = fc.clone();
    }
    if let Some(pi) = &args.pi {
        pis = pi.clone();
    }
    if let Some(q) = &args.q {
        qs = q.clone();
    }
    (ns, fcs, pis, qs)
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    init_threads(args.shared.threads);
    if let Some(setting) = args.setting {
        if setting != 1 && setting != 2 {
            return Err(Error::InvalidConfig {
                msg: format!("--setting must be 1 or 2, got {setting}"),
            });
        }
    }
    let covariates = args.covariates || args.setting == Some(2);
    let base = SimulationConfig {
        setting: args.setting.unwrap_or(0),
        m: args.m,
        replicates: args.reps,
        covariate_setting: covariates,
        seed: args.shared.seed,
        param_source: match &args.params {
            Some(p) => ParamSource::File(p.clone()),
            None => ParamSource::Builtin,
        },
        all_up: args.all_up,
        adjust: !args.shared.no_adjust,
        stat_mode: args.shared.stat,
        ..Default::default()
    };
    let (ns, fcs, pis, qs) = grid_axes(&args);
    let cells = expand_grid(&base, &ns, &fcs, &pis, &qs);
    for cell in &cells {
        cell.validate()?;
    }
    let methods = args.methods.clone().unwrap_or_else(|| Method::ALL.to_vec());

    eprintln!(
        "running {} grid cells x {} replicates with {} methods",
        cells.len(),
        args.reps,
        methods.len()
    );
    let output = run_grid(&cells, &methods);
    for failure in &output.failures {
        eprintln!(
            "warning: cell {} replicate {} failed: {}",
            failure.cell, failure.rep, failure.message
        );
    }

    std::fs::create_dir_all(&args.shared.out)?;
    write_metrics_tsv(args.shared.out.join("metrics.tsv"), &output.rows)?;

    run_record::write(
        &args.shared.out,
        serde_json::json!({
            "subcommand": "simulate",
            "setting": args.setting,
            "n": ns,
            "fc": fcs,
            "pi": pis,
            "q": qs,
            "m": args.m,
            "replicates": args.reps,
            "covariates": covariates,
            "all_up": args.all_up,
            "methods": methods.iter().map(|m| m.to_string()).collect::<Vec<_>>(),
            "params": args.params,
            "seed": args.shared.seed,
            "threads": args.shared.threads,
            "adjust": !args.shared.no_adjust,
            "stat": args.shared.stat.map(|s| s.as_str()),
            "cells": cells.len(),
            "failures": output.failures.len(),
        }),
    )?;
    Ok(())
}

fn cmd_null_check(args: NullCheckArgs) -> Result<()> {
    init_threads(args.shared.threads);
    let counts = read_counts_tsv(&args.counts)?;
    let design = read_metadata_tsv(&args.metadata, counts.sample_ids())?;
    let methods = args.methods.clone().unwrap_or_else(|| Method::ALL.to_vec());

    let results = permutation_null_check(
        &counts,
        &design,
        args.permutations,
        args.q,
        &methods,
        args.shared.seed,
    )?;

    std::fs::create_dir_all(&args.shared.out)?;
    write_null_check_tsv(args.shared.out.join("null_check.tsv"), &results)?;

    run_record::write(
        &args.shared.out,
        serde_json::json!({
            "subcommand": "null-check",
            "q": args.q,
            "permutations": args.permutations,
            "methods": methods.iter().map(|m| m.to_string()).collect::<Vec<_>>(),
            "seed": args.shared.seed,
            "threads": args.shared.threads,
            "inputs": [
                run_record::input_entry(&args.counts)?,
                run_record::input_entry(&args.metadata)?,
            ],
        }),
    )?;

    for r in &results {
        eprintln!(
            "{}: mean {:.3} discoveries, p95 {}, max {}",
            r.method,
            r.mean(),
            r.percentile(0.95),
            r.max()
        );
    }
    Ok(())
}
