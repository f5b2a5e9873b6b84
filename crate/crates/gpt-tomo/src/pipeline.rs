//! End-to-end orchestration: counts I/O, the analysis chain, Monte Carlo
//! error bars, and report/plot-table emission.
//!
//! The chain is load/synthesize → rank selection → extended decomposition
//! → polytope duals → deviation bounds → quantum shrink test → report.
//! Every artifact write is atomic (temp file + rename) and every float in
//! the report is serialized with 17 significant digits, so a rerun under
//! the same seed reproduces the report byte for byte apart from the
//! timestamp field.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::bounds::{analyze_bounds, BoundsReport, BoundsStd};
use crate::core::{FrequencyMatrix, ProbabilityMatrix};
use crate::decompose::extended_decompose;
use crate::modelselect::{select_rank, RankCandidate};
use crate::polytope::{dual_effects, dual_states, EffectSpacePoly, StateSpacePoly};
use crate::qfit::{quantum_shrink_factor, ShrinkResult};
use crate::synth::{
    build_ground_truth, build_planar_ground_truth, sample_counts, splitmix64, CountModel,
    ExperimentDesign,
};
use crate::wlra::{fit_rank_k, FitOptions};
use crate::{Error, Result};

use nalgebra::DMatrix;
use std::collections::BTreeSet;

/// Slack for the realized-inside-consistent inclusion assertions.
const INCLUSION_TOL: f64 = 1e-7;
/// Allowed deviation of the duality reciprocity products from 1.
const RECIPROCITY_TOL: f64 = 1e-6;

/// Raw counts of one measured cell; the unit column `j = 0` is implicit
/// in every experiment and never stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountCell {
    pub i: usize,
    pub j: usize,
    pub n0: u64,
    pub n1: u64,
}

/// Counts for the measured, non-unit cells of an m×n experiment, kept in
/// row-major order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountsData {
    pub m: usize,
    pub n: usize,
    pub cells: Vec<CountCell>,
}

impl CountsData {
    pub fn new(m: usize, n: usize, cells: Vec<(usize, usize, u64, u64)>) -> Result<Self> {
        if m < 1 || n < 2 {
            return Err(Error::Invalid(format!(
                "counts dimensions m={m}, n={n} too small"
            )));
        }
        if cells.is_empty() {
            return Err(Error::Invalid("counts contain no measured cells".into()));
        }
        let mut out: Vec<CountCell> = Vec::with_capacity(cells.len());
        for (i, j, n0, n1) in cells {
            if j == 0 {
                return Err(Error::Invalid(format!(
                    "cell ({i},0) targets the unit column, which is implicit \
                     and must not appear"
                )));
            }
            if i >= m || j >= n {
                return Err(Error::Invalid(format!(
                    "cell ({i},{j}) outside the {m}x{n} grid"
                )));
            }
            if n0 + n1 == 0 {
                return Err(Error::Invalid(format!("cell ({i},{j}) has zero counts")));
            }
            out.push(CountCell { i, j, n0, n1 });
        }
        out.sort_by_key(|c| (c.i, c.j));
        if out.windows(2).any(|w| (w[0].i, w[0].j) == (w[1].i, w[1].j)) {
            return Err(Error::Invalid("duplicate cell in counts".into()));
        }
        Ok(Self { m, n, cells: out })
    }

    /// Parses the counts format: a `m,n` header line, then one
    /// `i,j,n0,n1` line per measured cell.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Invalid("counts file is empty".into()))?;
        let dims: Vec<&str> = header.split(',').collect();
        if dims.len() != 2 {
            return Err(Error::Invalid(format!(
                "counts header must be 'm,n', got '{header}'"
            )));
        }
        let m = parse_field::<usize>(dims[0], "m")?;
        let n = parse_field::<usize>(dims[1], "n")?;
        let mut cells = Vec::new();
        for line in lines {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::Invalid(format!(
                    "counts row must be 'i,j,n0,n1', got '{line}'"
                )));
            }
            cells.push((
                parse_field::<usize>(fields[0], "i")?,
                parse_field::<usize>(fields[1], "j")?,
                parse_field::<u64>(fields[2], "n0")?,
                parse_field::<u64>(fields[3], "n1")?,
            ));
        }
        Self::new(m, n, cells)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = format!("{},{}\n", self.m, self.n);
        for c in &self.cells {
            let _ = writeln!(out, "{},{},{},{}", c.i, c.j, c.n0, c.n1);
        }
        write_atomic(path, out.as_bytes())
    }

    /// Frequencies and binomial uncertainties, with the exact unit column
    /// prepended and the mask marking measured cells.
    pub fn to_frequencies(&self) -> Result<FrequencyMatrix> {
        let mut values = DMatrix::zeros(self.m, self.n);
        let mut sigmas = DMatrix::zeros(self.m, self.n);
        let mut mask = DMatrix::from_element(self.m, self.n, false);
        for i in 0..self.m {
            values[(i, 0)] = 1.0;
            mask[(i, 0)] = true;
        }
        for c in &self.cells {
            let (f, sigma) = crate::synth::frequency_from_counts(c.n0, c.n1)?;
            values[(c.i, c.j)] = f;
            sigmas[(c.i, c.j)] = sigma;
            mask[(c.i, c.j)] = true;
        }
        FrequencyMatrix::new(values, sigmas, mask, BTreeSet::from([0]))
    }

    /// Poisson resample of each recorded count, for Monte Carlo error
    /// bars. Deterministic in `(seed, index)` and independent of cell
    /// order; errors when a resampled cell loses all its counts.
    pub fn resample(&self, seed: u64, index: usize) -> Result<CountsData> {
        let mut cells = Vec::with_capacity(self.cells.len());
        for c in &self.cells {
            let h = splitmix64(
                splitmix64(splitmix64(seed ^ 0x6d63_7265) ^ index as u64)
                    ^ ((c.i as u64) << 32 | c.j as u64),
            );
            let mut rng = ChaCha8Rng::seed_from_u64(h);
            let n0 = poisson_count(&mut rng, c.n0);
            let n1 = poisson_count(&mut rng, c.n1);
            if n0 + n1 == 0 {
                return Err(Error::Numerical {
                    stage: "mc",
                    detail: format!("resampled cell ({},{}) lost all counts", c.i, c.j),
                });
            }
            cells.push((c.i, c.j, n0, n1));
        }
        CountsData::new(self.m, self.n, cells)
    }
}

fn parse_field<T: std::str::FromStr>(s: &str, name: &str) -> Result<T> {
    s.trim()
        .parse::<T>()
        .map_err(|_| Error::Invalid(format!("cannot parse {name} from '{s}'")))
}

fn poisson_count(rng: &mut ChaCha8Rng, observed: u64) -> u64 {
    if observed == 0 {
        return 0;
    }
    Poisson::new(observed as f64)
        .expect("positive lambda")
        .sample(rng) as u64
}

/// Synthetic-experiment request: spiral (or planar circle) qubit states
/// and effects depolarized by `w`, `w_prime`, sampled at
/// `counts_per_cell` expected counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub m: usize,
    pub n: usize,
    pub w: f64,
    pub w_prime: f64,
    pub counts_per_cell: f64,
    /// `Some(f)`: fiducial design with f fiducial rows/columns.
    pub fiducial: Option<usize>,
    /// Planar rebit ground truth instead of the full qubit.
    pub planar: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InputSpec {
    CountsFile(PathBuf),
    Synth(SynthSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub input: InputSpec,
    /// Candidate ranks for model selection.
    pub ranks: Vec<usize>,
    /// Monte Carlo resamples used by [`monte_carlo_errorbars`].
    pub resamples: usize,
    pub seed: u64,
    /// Artifact directory; `None` keeps the run in memory.
    pub out_dir: Option<PathBuf>,
    pub fit: FitOptions,
}

impl PipelineConfig {
    pub fn new(input: InputSpec) -> Self {
        Self {
            input,
            ranks: (2..=10).collect(),
            resamples: 100,
            seed: 0,
            out_dir: None,
            fit: FitOptions::for_rank(4),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.ranks.is_empty() {
            return Err(Error::Invalid("candidate rank set is empty".into()));
        }
        Ok(())
    }

    /// FNV-1a hash of the full configuration, stamped into reports so an
    /// artifact can be traced to the exact settings that produced it.
    pub fn hash(&self) -> String {
        let repr = format!("{self:?}");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in repr.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub package_version: String,
    pub report_format: u32,
    pub timestamp_unix_s: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSummary {
    pub source: String,
    pub m: usize,
    pub n: usize,
    pub measured_cells: usize,
}

/// Serializable mirror of a rank-selection candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub rank: usize,
    pub chi2: f64,
    pub dof: i64,
    pub interval99: Option<(f64, f64)>,
    pub r_k: usize,
    pub aic: f64,
    pub delta: f64,
    pub weight: f64,
    pub log_weight: f64,
    pub inside_interval99: bool,
    pub overparameterized: bool,
    pub converged: bool,
}

impl From<&RankCandidate> for RankRow {
    fn from(c: &RankCandidate) -> Self {
        Self {
            rank: c.rank,
            chi2: c.chi2,
            dof: c.dof,
            interval99: c.interval99,
            r_k: c.r_k,
            aic: c.aic,
            delta: c.delta,
            weight: c.weight,
            log_weight: c.log_weight,
            inside_interval99: c.inside_interval99,
            overparameterized: c.overparameterized,
            converged: c.converged,
        }
    }
}

/// Vertex lists of the four spaces, in canonical coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolytopeVertices {
    pub states_realized: Vec<Vec<f64>>,
    pub states_consistent: Vec<Vec<f64>>,
    pub effects_realized: Vec<Vec<f64>>,
    pub effects_consistent: Vec<Vec<f64>>,
}

/// Full analysis artifact; serialized as a single JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub provenance: Provenance,
    pub input: InputSummary,
    pub selected_rank: usize,
    pub rank_table: Vec<RankRow>,
    pub rejected_ranks: Vec<usize>,
    /// Canonical state rows `(1, s̄)` of the selected model.
    pub states: Vec<Vec<f64>>,
    /// Canonical effect columns of the selected model.
    pub effects: Vec<Vec<f64>>,
    pub polytopes: PolytopeVertices,
    pub bounds: BoundsReport,
    pub shrink: ShrinkResult,
}

fn at_stage(stage: &'static str, e: Error) -> Error {
    match e {
        Error::Numerical { detail, .. } => Error::Numerical { stage, detail },
        Error::Invalid(m) => Error::Invalid(format!("stage {stage}: {m}")),
        Error::Io(m) => Error::Io(format!("stage {stage}: {m}")),
    }
}

/// Materializes the counts for a config: read the file, or synthesize
/// the requested experiment under the config seed.
pub fn load_counts(config: &PipelineConfig) -> Result<(CountsData, String)> {
    match &config.input {
        InputSpec::CountsFile(path) => {
            let counts = CountsData::read_csv(path)?;
            Ok((counts, path.display().to_string()))
        }
        InputSpec::Synth(spec) => {
            let design = match spec.fiducial {
                Some(f) => ExperimentDesign::fiducial(spec.m, spec.n, f)?,
                None => ExperimentDesign::full_grid(spec.m, spec.n)?,
            };
            let (_, d) = if spec.planar {
                build_planar_ground_truth(
                    spec.m,
                    spec.n,
                    spec.w,
                    spec.w_prime,
                    spec.counts_per_cell,
                    &design,
                )?
            } else {
                build_ground_truth(
                    spec.m,
                    spec.n,
                    spec.w,
                    spec.w_prime,
                    spec.counts_per_cell,
                    &design,
                )?
            };
            let cells = sample_counts(
                &d,
                &design,
                spec.counts_per_cell,
                config.seed,
                CountModel::TwoPoisson,
            )?;
            let counts = CountsData::new(spec.m, spec.n, cells)?;
            let source = format!(
                "synth(m={}, n={}, w={}, w'={}, N={}, fiducial={:?}, planar={})",
                spec.m, spec.n, spec.w, spec.w_prime, spec.counts_per_cell, spec.fiducial,
                spec.planar
            );
            Ok((counts, source))
        }
    }
}

/// Runs the full chain and, when an output directory is configured,
/// persists `counts.csv` and `report.json`. Stage failures carry the
/// stage name; the CLI maps error kinds to exit codes.
pub fn run_analysis(config: &PipelineConfig) -> Result<Report> {
    config.validate()?;
    let (counts, source) = load_counts(config).map_err(|e| at_stage("load", e))?;
    let freq = counts.to_frequencies().map_err(|e| at_stage("load", e))?;

    let mut opts = config.fit.clone();
    opts.seed = config.seed;
    let rank_report =
        select_rank(&freq, &config.ranks, &opts).map_err(|e| at_stage("select_rank", e))?;
    let k = rank_report.selected_rank;
    let (_, fit) = rank_report.selected();

    let fitted =
        ProbabilityMatrix::new(fit.fitted(), k).map_err(|e| at_stage("decompose", e))?;
    let dec = extended_decompose(&fitted, k).map_err(|e| at_stage("decompose", e))?;
    let model = &dec.model;

    let s_real = StateSpacePoly::realized(model).map_err(|e| at_stage("polytopes", e))?;
    let e_real = EffectSpacePoly::realized(model).map_err(|e| at_stage("polytopes", e))?;
    let s_cons = dual_states(&e_real).map_err(|e| at_stage("polytopes", e))?;
    let e_cons = dual_effects(&s_real).map_err(|e| at_stage("polytopes", e))?;

    // Realized spaces are subsets of their consistent counterparts by
    // construction; a violation is an internal inconsistency.
    for v in &s_real.poly.vertices {
        if !s_cons.poly.contains(v, INCLUSION_TOL) {
            return Err(Error::Numerical {
                stage: "inclusion",
                detail: format!("realized state vertex {v:?} escapes the consistent space"),
            });
        }
    }
    for v in &e_real.poly.vertices {
        if !e_cons.poly.contains(v, INCLUSION_TOL) {
            return Err(Error::Numerical {
                stage: "inclusion",
                detail: format!("realized effect vertex {v:?} escapes the consistent space"),
            });
        }
    }

    let bounds =
        analyze_bounds(&s_real, &e_real, &s_cons, &e_cons).map_err(|e| at_stage("bounds", e))?;
    for (name, product) in [
        ("w2' * w1", bounds.w2p * bounds.w1),
        ("w2 * w1'", bounds.w2 * bounds.w1p),
    ] {
        if (product - 1.0).abs() > RECIPROCITY_TOL {
            return Err(Error::Numerical {
                stage: "bounds",
                detail: format!("duality reciprocity violated: {name} = {product}"),
            });
        }
    }

    let shrink =
        quantum_shrink_factor(&s_real, &e_real).map_err(|e| at_stage("shrink", e))?;

    let report = Report {
        provenance: Provenance {
            config_hash: config.hash(),
            seed: config.seed,
            package_version: env!("CARGO_PKG_VERSION").to_string(),
            report_format: 1,
            timestamp_unix_s: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        },
        input: InputSummary {
            source,
            m: counts.m,
            n: counts.n,
            measured_cells: counts.cells.len() + counts.m,
        },
        selected_rank: k,
        rank_table: rank_report.candidates.iter().map(RankRow::from).collect(),
        rejected_ranks: rank_report.rejected_ranks.clone(),
        states: matrix_rows(&model.states),
        effects: matrix_cols(&model.effects),
        polytopes: PolytopeVertices {
            states_realized: s_real.poly.vertices.clone(),
            states_consistent: s_cons.poly.vertices.clone(),
            effects_realized: e_real.poly.vertices.clone(),
            effects_consistent: e_cons.poly.vertices.clone(),
        },
        bounds,
        shrink,
    };
    assert_report_finite(&report).map_err(|e| at_stage("report", e))?;

    if let Some(dir) = &config.out_dir {
        fs::create_dir_all(dir)?;
        counts.write_csv(&dir.join("counts.csv"))?;
        write_atomic(&dir.join("report.json"), report_to_json(&report)?.as_bytes())?;
    }
    Ok(report)
}

/// Standard deviations of the bound quantities over Poisson resamples of
/// the observed counts, refit at the already-selected rank. Failed
/// resamples are dropped; more than 10% failing is an error.
pub fn monte_carlo_errorbars(
    counts: &CountsData,
    selected_rank: usize,
    config: &PipelineConfig,
) -> Result<BoundsStd> {
    if config.resamples < 2 {
        return Err(Error::Invalid(format!(
            "need at least 2 Monte Carlo resamples, got {}",
            config.resamples
        )));
    }
    let samples: Vec<Option<[f64; 9]>> = (0..config.resamples)
        .into_par_iter()
        .map(|r| mc_single(counts, selected_rank, config, r).ok())
        .collect();
    let dropped = samples.iter().filter(|s| s.is_none()).count();
    if dropped * 10 > config.resamples {
        return Err(Error::Numerical {
            stage: "mc",
            detail: format!(
                "{dropped} of {} Monte Carlo resamples failed",
                config.resamples
            ),
        });
    }
    let kept: Vec<[f64; 9]> = samples.into_iter().flatten().collect();
    if kept.len() < 2 {
        return Err(Error::Numerical {
            stage: "mc",
            detail: "fewer than 2 Monte Carlo resamples survived".into(),
        });
    }
    let std = |idx: usize| -> f64 {
        let n = kept.len() as f64;
        let mean = kept.iter().map(|s| s[idx]).sum::<f64>() / n;
        let var = kept.iter().map(|s| (s[idx] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        var.sqrt()
    };
    Ok(BoundsStd {
        w1: std(0),
        w1p: std(1),
        w2: std(2),
        w2p: std(3),
        lb_cmin: std(4),
        ub_cmax: std(5),
        ub_bmax: std(6),
        volume_ratio: std(7),
        epsilon_bound: std(8),
    })
}

/// One Monte Carlo replica: resample, refit at the selected rank, redo
/// the geometry, and return the bound quantities.
fn mc_single(
    counts: &CountsData,
    rank: usize,
    config: &PipelineConfig,
    index: usize,
) -> Result<[f64; 9]> {
    let resampled = counts.resample(config.seed, index)?;
    let freq = resampled.to_frequencies()?;
    let mut opts = config.fit.clone();
    opts.rank = rank;
    opts.seed = splitmix64(config.seed ^ index as u64);
    let fit = fit_rank_k(&freq, &opts)?;
    let fitted = ProbabilityMatrix::new(fit.fitted(), rank)?;
    let dec = extended_decompose(&fitted, rank)?;
    let s_real = StateSpacePoly::realized(&dec.model)?;
    let e_real = EffectSpacePoly::realized(&dec.model)?;
    let s_cons = dual_states(&e_real)?;
    let e_cons = dual_effects(&s_real)?;
    let b = analyze_bounds(&s_real, &e_real, &s_cons, &e_cons)?;
    Ok([
        b.w1,
        b.w1p,
        b.w2,
        b.w2p,
        b.lb_cmin,
        b.ub_cmax,
        b.ub_bmax,
        b.volume_ratio,
        b.epsilon_bound,
    ])
}

/// Writes the plot tables for a report: the per-rank selection table,
/// vertex lists of all four spaces, axis-dropping 3-D projections of the
/// 4-D effect spaces, and the measured-frequency heatmap.
pub fn emit_plot_data(report: &Report, freq: &FrequencyMatrix, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;

    let mut rank_table = String::from("k,chi2,interval_lo,interval_hi,aic,weight\n");
    for row in &report.rank_table {
        let (lo, hi) = row.interval99.unwrap_or((f64::NAN, f64::NAN));
        let _ = writeln!(
            rank_table,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            row.rank, row.chi2, lo, hi, row.aic, row.weight
        );
    }
    write_atomic(&dir.join("rank_table.csv"), rank_table.as_bytes())?;

    for (name, vertices) in [
        ("states_realized", &report.polytopes.states_realized),
        ("states_consistent", &report.polytopes.states_consistent),
        ("effects_realized", &report.polytopes.effects_realized),
        ("effects_consistent", &report.polytopes.effects_consistent),
    ] {
        write_atomic(
            &dir.join(format!("{name}.csv")),
            vertex_csv(vertices).as_bytes(),
        )?;
    }

    // Axis-dropping projections exist only for 4-D effect spaces.
    let dim = report
        .polytopes
        .effects_realized
        .first()
        .map_or(0, |v| v.len());
    if dim == 4 {
        for drop in 0..4 {
            let mut out = String::from("space,x,y,z\n");
            for (label, vertices) in [
                ("realized", &report.polytopes.effects_realized),
                ("consistent", &report.polytopes.effects_consistent),
            ] {
                for v in vertices.iter() {
                    let kept: Vec<String> = (0..4)
                        .filter(|&a| a != drop)
                        .map(|a| format!("{:.16e}", v[a]))
                        .collect();
                    let _ = writeln!(out, "{label},{}", kept.join(","));
                }
            }
            write_atomic(&dir.join(format!("effects_proj_drop{drop}.csv")), out.as_bytes())?;
        }
    }

    let (m, n) = (freq.nrows(), freq.ncols());
    let mut heat = String::new();
    for i in 0..m {
        let row: Vec<String> = (0..n)
            .map(|j| {
                if freq.is_measured(i, j) {
                    format!("{:.16e}", freq.values()[(i, j)])
                } else {
                    "nan".to_string()
                }
            })
            .collect();
        let _ = writeln!(heat, "{}", row.join(","));
    }
    write_atomic(&dir.join("heatmap.csv"), heat.as_bytes())?;
    Ok(())
}

fn vertex_csv(vertices: &[Vec<f64>]) -> String {
    let dim = vertices.first().map_or(0, |v| v.len());
    let header: Vec<String> = (0..dim).map(|c| format!("c{c}")).collect();
    let mut out = header.join(",");
    out.push('\n');
    for v in vertices {
        let row: Vec<String> = v.iter().map(|x| format!("{x:.16e}")).collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn matrix_cols(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.ncols())
        .map(|j| (0..m.nrows()).map(|i| m[(i, j)]).collect())
        .collect()
}

/// Every numeric field of the report must be finite before it is written.
fn assert_report_finite(report: &Report) -> Result<()> {
    let check = |value: f64, what: &str| -> Result<()> {
        if value.is_finite() {
            Ok(())
        } else {
            Err(Error::Numerical {
                stage: "report",
                detail: format!("non-finite {what}: {value}"),
            })
        }
    };
    for row in &report.rank_table {
        check(row.chi2, "chi2")?;
        check(row.aic, "aic")?;
        check(row.delta, "aic delta")?;
        check(row.weight, "weight")?;
        check(row.log_weight, "log weight")?;
        if let Some((lo, hi)) = row.interval99 {
            check(lo, "interval")?;
            check(hi, "interval")?;
        }
    }
    for group in [&report.states, &report.effects] {
        for row in group {
            for &v in row {
                check(v, "model coefficient")?;
            }
        }
    }
    for group in [
        &report.polytopes.states_realized,
        &report.polytopes.states_consistent,
        &report.polytopes.effects_realized,
        &report.polytopes.effects_consistent,
    ] {
        for v in group {
            for &x in v {
                check(x, "polytope vertex")?;
            }
        }
    }
    let b = &report.bounds;
    for (v, what) in [
        (b.w1, "w1"),
        (b.w1p, "w1'"),
        (b.w2, "w2"),
        (b.w2p, "w2'"),
        (b.lb_cmin, "lb_cmin"),
        (b.ub_cmax, "ub_cmax"),
        (b.ub_bmax, "ub_bmax"),
        (b.volume_ratio, "volume ratio"),
        (b.epsilon_bound, "epsilon bound"),
    ] {
        check(v, what)?;
    }
    check(report.shrink.epsilon_star, "epsilon_star")?;
    for row in &report.shrink.feasible_ellipsoid {
        for &v in row {
            check(v, "ellipsoid entry")?;
        }
    }
    Ok(())
}

/// Serializes a report as pretty JSON with every float carrying 17
/// significant digits, newline-terminated.
pub fn report_to_json(report: &Report) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Digits17::new());
    report
        .serialize(&mut ser)
        .map_err(|e| Error::Io(format!("report serialization failed: {e}")))?;
    let mut text = String::from_utf8(out)
        .map_err(|e| Error::Io(format!("report serialization produced bad utf-8: {e}")))?;
    text.push('\n');
    Ok(text)
}

pub fn report_from_json(text: &str) -> Result<Report> {
    serde_json::from_str(text).map_err(|e| Error::Invalid(format!("bad report JSON: {e}")))
}

/// Drops the timestamp line, leaving the deterministic remainder of a
/// serialized report for byte comparisons.
pub fn strip_timestamp(json: &str) -> String {
    json.lines()
        .filter(|l| !l.contains("\"timestamp_unix_s\""))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Atomic write: temp file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Pretty formatter printing every f64 with 17 significant digits.
struct Digits17<'a> {
    inner: PrettyFormatter<'a>,
}

impl Digits17<'_> {
    fn new() -> Self {
        Self {
            inner: PrettyFormatter::new(),
        }
    }
}

impl Formatter for Digits17<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_array(writer)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + io::Write>(
        &mut self,
        writer: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.inner.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_object(writer)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + io::Write>(
        &mut self,
        writer: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.inner.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_object_value(writer)
    }
}
