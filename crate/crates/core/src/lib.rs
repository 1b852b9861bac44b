//! Differential-expression analysis with synthetic-null FDR calibration.
//!
//! The pipeline fits per-gene negative-binomial GLMs to an RNA-seq count
//! matrix, regenerates the dataset from the fitted models with the treatment
//! effect removed, fits the regenerated data the same way, and declares
//! discoveries at the smallest statistic threshold whose estimated false
//! discovery proportion (null exceedances over observed exceedances) meets
//! the target level. Baseline methods (NB-GLM Wald + BH, Wilcoxon rank-sum
//! on raw or normalized counts) and a seeded simulation harness are included
//! for benchmarking.
//!
//! ```no_run
//! use nullstrap_core::prelude::*;
//!
//! let counts = read_counts_tsv("counts.tsv")?;
//! let design = read_metadata_tsv("metadata.tsv", counts.sample_ids())?;
//! let outcome = run_nullstrap(&counts, &design, &NullstrapOptions {
//!     q: 0.05,
//!     seed: 1,
//!     ..Default::default()
//! })?;
//! println!("{} discoveries at tau = {}", outcome.filter.discoveries.len(), outcome.filter.tau);
//! # Ok::<(), nullstrap_core::Error>(())
//! ```

pub mod baselines;
pub mod data;
pub mod error;
pub mod filter;
pub mod glm;
pub mod io;
pub mod pipeline;
pub mod rng;
pub mod sim;
pub mod synthetic;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::baselines::{bh_discoveries, run_baseline, wilcoxon_rank_sum, Method, MethodResult};
    pub use crate::data::{
        base_means, estimate_size_factors, normalize_counts, validate_inputs, CountMatrix,
        DesignInfo, GeneFlag, SizeFactors, ValidatedDataset,
    };
    pub use crate::error::{Error, Result};
    pub use crate::filter::{
        adjust_q, declare_discoveries, fdp_curve, nullstrap_filter, select_threshold, FdpCurve,
        NullstrapResult,
    };
    pub use crate::glm::{
        estimate_dispersion, fit_all_genes, fit_nb_glm, statistic_pair, wald_p_value,
        wald_statistic, FitStatus, GeneFit, StatMode, StatisticPair,
    };
    pub use crate::io::{
        read_counts_tsv, read_metadata_tsv, read_params_tsv, write_counts_tsv, write_fdp_tsv,
        write_metrics_tsv, write_null_check_tsv, write_report_tsv,
    };
    pub use crate::pipeline::{run_nullstrap, GeneReportRow, NullstrapOptions, NullstrapOutcome};
    pub use crate::sim::{
        expand_grid, generate_dataset, load_gene_params, permutation_null_check, run_grid,
        GridOutput, MetricsRow, NullCheckResult, ParamSource, SimulationConfig, TruthLabels,
    };
    pub use crate::synthetic::{
        build_null_spec, generate_null_matrix, sample_nb, SyntheticNullSpec,
    };
}
