//! Python bindings: a thin, file-oriented surface over the pipeline.
//!
//! Structured results cross the boundary as JSON strings or plain dicts;
//! heavy numerics stay in Rust.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use gpt_tomo::pipeline::{
    load_counts, monte_carlo_errorbars, report_to_json, run_analysis, CountsData, InputSpec,
    PipelineConfig, SynthSpec,
};
use gpt_tomo::wlra::{fit_rank_k, FitOptions};
use gpt_tomo::Error;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Invalid(_) => PyValueError::new_err(e.to_string()),
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        Error::Numerical { .. } => PyRuntimeError::new_err(e.to_string()),
    }
}

#[pyfunction]
fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// Synthesizes a counts CSV for a depolarized qubit (or planar rebit)
/// experiment; returns the number of measured cells written.
#[pyfunction]
#[pyo3(signature = (m, n, w, w_prime, counts_per_cell, seed, out_path, fiducial=None, planar=false))]
#[allow(clippy::too_many_arguments)]
fn synthesize(
    m: usize,
    n: usize,
    w: f64,
    w_prime: f64,
    counts_per_cell: f64,
    seed: u64,
    out_path: PathBuf,
    fiducial: Option<usize>,
    planar: bool,
) -> PyResult<usize> {
    let mut config = PipelineConfig::new(InputSpec::Synth(SynthSpec {
        m,
        n,
        w,
        w_prime,
        counts_per_cell,
        fiducial,
        planar,
    }));
    config.seed = seed;
    let (counts, _) = load_counts(&config).map_err(to_py_err)?;
    counts.write_csv(&out_path).map_err(to_py_err)?;
    Ok(counts.cells.len())
}

/// Runs the full analysis chain on a counts CSV and returns the report
/// as a JSON string; `out_dir` additionally persists the artifacts.
#[pyfunction]
#[pyo3(signature = (counts_path, ranks, seed=0, resamples=100, restarts=5, out_dir=None))]
fn analyze(
    counts_path: PathBuf,
    ranks: Vec<usize>,
    seed: u64,
    resamples: usize,
    restarts: usize,
    out_dir: Option<PathBuf>,
) -> PyResult<String> {
    let mut config = PipelineConfig::new(InputSpec::CountsFile(counts_path));
    config.ranks = ranks;
    config.seed = seed;
    config.resamples = resamples;
    config.fit.restarts = restarts;
    config.out_dir = out_dir;
    let report = run_analysis(&config).map_err(to_py_err)?;
    report_to_json(&report).map_err(to_py_err)
}

/// Fits a single rank; returns (chi2, iterations, converged).
#[pyfunction]
#[pyo3(signature = (counts_path, rank, restarts=5, seed=0))]
fn fit(
    counts_path: PathBuf,
    rank: usize,
    restarts: usize,
    seed: u64,
) -> PyResult<(f64, usize, bool)> {
    let counts = CountsData::read_csv(Path::new(&counts_path)).map_err(to_py_err)?;
    let freq = counts.to_frequencies().map_err(to_py_err)?;
    let mut opts = FitOptions::for_rank(rank);
    opts.restarts = restarts;
    opts.seed = seed;
    let result = fit_rank_k(&freq, &opts).map_err(to_py_err)?;
    Ok((result.chi2, result.iterations, result.converged))
}

/// Monte Carlo error bars for the bound quantities at a fixed rank;
/// returns a dict of standard deviations.
#[pyfunction]
#[pyo3(signature = (counts_path, rank, resamples=100, seed=0, restarts=5))]
fn monte_carlo(
    counts_path: PathBuf,
    rank: usize,
    resamples: usize,
    seed: u64,
    restarts: usize,
) -> PyResult<HashMap<String, f64>> {
    let counts = CountsData::read_csv(Path::new(&counts_path)).map_err(to_py_err)?;
    let mut config = PipelineConfig::new(InputSpec::CountsFile(counts_path));
    config.resamples = resamples;
    config.seed = seed;
    config.fit.restarts = restarts;
    let std = monte_carlo_errorbars(&counts, rank, &config).map_err(to_py_err)?;
    Ok(HashMap::from([
        ("w1".into(), std.w1),
        ("w1p".into(), std.w1p),
        ("w2".into(), std.w2),
        ("w2p".into(), std.w2p),
        ("lb_cmin".into(), std.lb_cmin),
        ("ub_cmax".into(), std.ub_cmax),
        ("ub_bmax".into(), std.ub_bmax),
        ("volume_ratio".into(), std.volume_ratio),
        ("epsilon_bound".into(), std.epsilon_bound),
    ]))
}

#[pymodule]
fn _gpt_tomo(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(version, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo, m)?)?;
    Ok(())
}
