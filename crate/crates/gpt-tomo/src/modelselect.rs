//! Rank selection: χ² goodness-of-fit intervals, AIC scores, and Akaike
//! weights over a candidate rank set.
//!
//! A rank-k m×n factorization has r_k = k(m+n−k) free parameters (k² of the
//! m·k + k·n factor entries are gauge). The unit column contributes m
//! measured-but-exact cells and pins m of those parameters, so degrees of
//! freedom are counted as (#measured cells, exact ones included) − r_k,
//! which reduces to (m−k)(n−k) on a full grid.

use crate::core::FrequencyMatrix;
use crate::wlra::{fit_rank_k, FitOptions, FitResult};
use crate::{Error, Result};
use rayon::prelude::*;

/// Regularized lower incomplete gamma P(a, x) to ~1e-14 relative.
fn reg_lower_gamma(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        // Series: P = x^a e^{-x} / Γ(a) · Σ_n x^n / (a(a+1)…(a+n)).
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut denom = a;
        for _ in 0..10_000 {
            denom += 1.0;
            term *= x / denom;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        sum * (a * x.ln() - x - ln_gamma(a)).exp()
    } else {
        // Continued fraction for Q (modified Lentz), P = 1 − Q.
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        1.0 - (a * x.ln() - x - ln_gamma(a)).exp() * h
    }
}

/// Lanczos approximation (g = 7, 9 terms), valid for positive arguments.
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    let z = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, c) in COEFFS.iter().enumerate() {
        acc += c / (z + i as f64 + 1.0);
    }
    let t = z + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + acc.ln()
}

/// Quantile of the χ² distribution: the x with P(dof/2, x/2) = q, found by
/// bracketed Newton iteration with bisection fallback.
pub fn chi2_quantile(dof: usize, q: f64) -> Result<f64> {
    if dof < 1 {
        return Err(Error::Invalid(format!("dof {dof} must be >= 1")));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Invalid(format!("quantile {q} outside (0,1)")));
    }
    let a = dof as f64 / 2.0;
    let cdf = |x: f64| reg_lower_gamma(a, x / 2.0);

    let mut lo = 0.0f64;
    let mut hi = (dof as f64).max(1.0);
    let mut doublings = 0;
    while cdf(hi) < q {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > 1100 {
            return Err(Error::Numerical {
                stage: "chi2_quantile",
                detail: "bracket expansion failed".into(),
            });
        }
    }
    let mut x = (dof as f64).clamp(lo.max(f64::MIN_POSITIVE), hi);
    for _ in 0..200 {
        let err = cdf(x) - q;
        if err.abs() <= 1e-13 {
            break;
        }
        if err > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        if hi - lo <= 1e-13 * x.max(f64::MIN_POSITIVE) {
            x = 0.5 * (lo + hi);
            break;
        }
        // ln pdf of χ²_dof at x, for the Newton step.
        let ln_pdf = (a - 1.0) * (x / 2.0).ln() - x / 2.0 - ln_gamma(a) - 2.0f64.ln();
        let pdf = ln_pdf.exp();
        let candidate = if pdf > 0.0 && pdf.is_finite() {
            x - err / pdf
        } else {
            f64::NAN
        };
        x = if candidate.is_finite() && candidate > lo && candidate < hi {
            candidate
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok(x)
}

/// Central 99% interval: quantiles 0.005 and 0.995.
pub fn chi2_interval99(dof: usize) -> Result<(f64, f64)> {
    Ok((chi2_quantile(dof, 0.005)?, chi2_quantile(dof, 0.995)?))
}

/// Number of free parameters of a rank-k m×n factorization.
pub fn rank_parameters(k: usize, m: usize, n: usize) -> usize {
    k * (m + n - k)
}

/// AIC score: χ²ₖ + 2rₖ.
pub fn aic_score(chi2_k: f64, k: usize, m: usize, n: usize) -> f64 {
    chi2_k + 2.0 * rank_parameters(k, m, n) as f64
}

/// Log-space Akaike weights: log wₖ = −Δₖ/2 − logΣexp(−Δⱼ/2).
pub fn aic_log_weights(scores: &[f64]) -> Vec<f64> {
    assert!(!scores.is_empty(), "aic weights need at least one score");
    let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let halves: Vec<f64> = scores.iter().map(|s| -(s - min) / 2.0).collect();
    let log_norm = halves.iter().map(|h| h.exp()).sum::<f64>().ln();
    halves.iter().map(|h| h - log_norm).collect()
}

/// Akaike weights wₖ = exp(−Δₖ/2)/Σexp(−Δⱼ/2); extreme Δ underflow to 0.
pub fn aic_weights(scores: &[f64]) -> Vec<f64> {
    aic_log_weights(scores).iter().map(|lw| lw.exp()).collect()
}

/// Degrees of freedom for rank k against this data set: measured cells
/// (exact ones included) minus rₖ. Negative means k is unidentifiable.
pub fn dof_for_rank(f: &FrequencyMatrix, k: usize) -> i64 {
    f.measured_count() as i64 - rank_parameters(k, f.nrows(), f.ncols()) as i64
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankCandidate {
    pub rank: usize,
    pub chi2: f64,
    pub dof: i64,
    /// Central 99% χ² interval; absent when dof < 1.
    pub interval99: Option<(f64, f64)>,
    pub r_k: usize,
    pub aic: f64,
    pub delta: f64,
    pub weight: f64,
    pub log_weight: f64,
    /// χ²ₖ inside the 99% interval (false flags underfitting).
    pub inside_interval99: bool,
    /// rₖ > 0.4 × measured cells: AIC's small-sample caveat applies.
    pub overparameterized: bool,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct RankReport {
    pub candidates: Vec<RankCandidate>,
    /// Fits parallel to `candidates`.
    pub fits: Vec<FitResult>,
    /// Candidate ranks dropped because dof < 0.
    pub rejected_ranks: Vec<usize>,
    pub selected_rank: usize,
    pub measured_cells: usize,
}

impl RankReport {
    pub fn selected(&self) -> (&RankCandidate, &FitResult) {
        let idx = self
            .candidates
            .iter()
            .position(|c| c.rank == self.selected_rank)
            .expect("selected rank is a candidate");
        (&self.candidates[idx], &self.fits[idx])
    }
}

/// Fits every candidate rank, scores them with AIC, and picks the weight
/// maximizer. Ranks whose parameter count exceeds the measured cell count
/// are rejected up front.
pub fn select_rank(
    f: &FrequencyMatrix,
    k_range: &[usize],
    opts: &FitOptions,
) -> Result<RankReport> {
    if k_range.is_empty() {
        return Err(Error::Invalid("empty candidate rank set".into()));
    }
    let measured = f.measured_count();
    let mut rejected_ranks = Vec::new();
    let mut usable = Vec::new();
    for &k in k_range {
        if dof_for_rank(f, k) < 0 {
            rejected_ranks.push(k);
        } else {
            usable.push(k);
        }
    }
    if usable.is_empty() {
        return Err(Error::Invalid(
            "every candidate rank has more parameters than measured cells".into(),
        ));
    }
    let fits: Vec<FitResult> = usable
        .par_iter()
        .map(|&k| {
            let mut o = opts.clone();
            o.rank = k;
            fit_rank_k(f, &o)
        })
        .collect::<Result<_>>()?;

    let (m, n) = (f.nrows(), f.ncols());
    let scores: Vec<f64> = usable
        .iter()
        .zip(&fits)
        .map(|(&k, fit)| aic_score(fit.chi2, k, m, n))
        .collect();
    let min_score = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let weights = aic_weights(&scores);
    let log_weights = aic_log_weights(&scores);

    let mut candidates = Vec::with_capacity(usable.len());
    for (i, &k) in usable.iter().enumerate() {
        let dof = dof_for_rank(f, k);
        let interval99 = if dof >= 1 {
            Some(chi2_interval99(dof as usize)?)
        } else {
            None
        };
        let inside = interval99
            .map(|(lo, hi)| fits[i].chi2 >= lo && fits[i].chi2 <= hi)
            .unwrap_or(false);
        candidates.push(RankCandidate {
            rank: k,
            chi2: fits[i].chi2,
            dof,
            interval99,
            r_k: rank_parameters(k, m, n),
            aic: scores[i],
            delta: scores[i] - min_score,
            weight: weights[i],
            log_weight: log_weights[i],
            inside_interval99: inside,
            overparameterized: rank_parameters(k, m, n) as f64 > 0.4 * measured as f64,
            converged: fits[i].converged,
        });
    }
    let selected_rank = candidates
        .iter()
        .max_by(|a, b| a.weight.total_cmp(&b.weight))
        .expect("non-empty candidates")
        .rank;
    Ok(RankReport {
        candidates,
        fits,
        rejected_ranks,
        selected_rank,
        measured_cells: measured,
    })
}
