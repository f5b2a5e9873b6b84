//! Weighted low-rank approximation with box constraints.
//!
//! Finds the rank-k matrix D̃ = S·E minimizing the weighted residual
//! χ² = Σ ((F − D̃)/σ)² over measured cells, subject to every entry of S·E
//! lying in [0,1] and the unit column being reproduced exactly. The joint
//! problem is non-convex (and NP-hard in general); we alternate exact
//! convex QP solves over the rows of S and the columns of E, which never
//! increases χ², and keep the best of several randomized restarts.
//!
//! With E fixed the constraints couple only within a row of S, so the
//! global S-step splits into m independent k-dimensional QPs; likewise the
//! E-step splits into n per-column QPs. Each QP is solved with a dense
//! primal active-set method (k ≤ 10, constraints mostly inactive).

use crate::core::FrequencyMatrix;
use crate::synth::splitmix64;
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitStrategy {
    /// Centered rank-(k−1) SVD of the masked frequency matrix with
    /// unmeasured cells imputed at 1/2.
    Svd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub rank: usize,
    pub max_iterations: usize,
    pub delta_chi2_tol: f64,
    pub restarts: usize,
    pub qp_tolerance: f64,
    pub init_strategy: InitStrategy,
    /// Seed for restart perturbations only; restart 0 is deterministic SVD.
    pub seed: u64,
}

impl FitOptions {
    pub fn for_rank(rank: usize) -> Self {
        Self {
            rank,
            max_iterations: 5000,
            delta_chi2_tol: 1e-6,
            restarts: 5,
            qp_tolerance: 1e-10,
            init_strategy: InitStrategy::Svd,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.rank < 1 {
            return Err(Error::Invalid("rank must be >= 1".into()));
        }
        if self.restarts < 1 {
            return Err(Error::Invalid("need at least one restart".into()));
        }
        if !(self.delta_chi2_tol > 0.0) || !(self.qp_tolerance > 0.0) {
            return Err(Error::Invalid("tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub s: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub chi2: f64,
    pub iterations: usize,
    pub converged: bool,
    pub per_restart_chi2: Vec<f64>,
    /// Some row/column subproblem was rank-deficient and took a 1e-12 ridge.
    pub ridge_applied: bool,
}

impl FitResult {
    pub fn fitted(&self) -> DMatrix<f64> {
        &self.s * &self.e
    }
}

/// Weighted χ² of a candidate matrix against the data: sum over measured,
/// non-exact cells of ((F−D)/σ)². Exact columns must be matched exactly,
/// otherwise the statistic is undefined.
pub fn chi2(f: &FrequencyMatrix, d: &DMatrix<f64>) -> Result<f64> {
    if d.shape() != (f.nrows(), f.ncols()) {
        return Err(Error::Invalid(format!(
            "chi2 shape mismatch: data {}x{}, candidate {}x{}",
            f.nrows(),
            f.ncols(),
            d.nrows(),
            d.ncols()
        )));
    }
    for &j in f.exact_cols() {
        for i in 0..f.nrows() {
            if f.is_measured(i, j) && d[(i, j)] != f.values()[(i, j)] {
                return Err(Error::Invalid(format!(
                    "exact column {j} not reproduced at row {i}: {} vs {}",
                    d[(i, j)],
                    f.values()[(i, j)]
                )));
            }
        }
    }
    let mut total = 0.0;
    for j in 0..f.ncols() {
        if f.exact_cols().contains(&j) {
            continue;
        }
        for i in 0..f.nrows() {
            if !f.is_measured(i, j) {
                continue;
            }
            let r = (f.values()[(i, j)] - d[(i, j)]) / f.sigmas()[(i, j)];
            total += r * r;
        }
    }
    Ok(total)
}

/// One two-sided linear constraint l ≤ c·x ≤ u with ‖c‖ = 1.
struct Slab {
    c: DVector<f64>,
    l: f64,
    u: f64,
}

/// One least-squares term w·(c·x − r)².
struct Term {
    c: DVector<f64>,
    r: f64,
    w: f64,
}

/// Normalizes constraint rows and merges parallel ones by intersecting
/// their slabs; constant (zero-normal) rows are checked and dropped.
fn dedup_slabs(raw: Vec<(DVector<f64>, f64, f64)>) -> Result<Vec<Slab>> {
    let mut slabs: Vec<Slab> = Vec::with_capacity(raw.len());
    for (c, mut l, mut u) in raw {
        let norm = c.norm();
        if norm < 1e-14 {
            if l > 1e-9 || u < -1e-9 {
                return Err(Error::Numerical {
                    stage: "qp",
                    detail: format!("constant constraint infeasible: {l} <= 0 <= {u}"),
                });
            }
            continue;
        }
        let mut c = c / norm;
        l /= norm;
        u /= norm;
        // Canonical sign: first significant component positive.
        if let Some(lead) = c.iter().find(|v| v.abs() > 1e-12) {
            if *lead < 0.0 {
                c = -c;
                let (nl, nu) = (-u, -l);
                l = nl;
                u = nu;
            }
        }
        match slabs
            .iter_mut()
            .find(|s| (&s.c - &c).amax() < 1e-12)
        {
            Some(s) => {
                s.l = s.l.max(l);
                s.u = s.u.min(u);
            }
            None => slabs.push(Slab { c, l, u }),
        }
    }
    for s in &slabs {
        if s.l > s.u + 1e-9 {
            return Err(Error::Numerical {
                stage: "qp",
                detail: format!("empty slab [{}, {}]", s.l, s.u),
            });
        }
    }
    Ok(slabs)
}

/// Nudges x into the slab system; violations are expected to be float dust
/// from a previous solve, anything past `limit` is an error.
fn repair_feasibility(x: &mut DVector<f64>, slabs: &[Slab], limit: f64) -> Result<()> {
    for _ in 0..20 {
        let mut worst = 0.0f64;
        for s in slabs {
            let v = s.c.dot(x);
            let excess = if v > s.u {
                v - s.u
            } else if v < s.l {
                v - s.l
            } else {
                continue;
            };
            worst = worst.max(excess.abs());
            x.axpy(-excess, &s.c, 1.0);
        }
        if worst == 0.0 {
            return Ok(());
        }
        if worst > limit {
            return Err(Error::Numerical {
                stage: "qp",
                detail: format!("warm start violates constraints by {worst}"),
            });
        }
    }
    Ok(())
}

/// An active one-sided constraint: slab `idx`, upper or lower face.
#[derive(Clone, Copy, PartialEq, Eq)]
struct Face {
    idx: usize,
    upper: bool,
}

/// Primal active-set solver for min ½xᵀGx + gᵀx over a slab system, from a
/// feasible start. Working-set faces always have independent normals: a
/// face can only block when its normal has a component outside the current
/// working span, so the KKT systems stay nonsingular.
fn solve_box_qp(
    g_mat: &DMatrix<f64>,
    g_vec: &DVector<f64>,
    slabs: &[Slab],
    mut x: DVector<f64>,
    qp_tol: f64,
) -> Result<(DVector<f64>, bool)> {
    let dim = x.len();
    if dim == 0 {
        return Ok((x, false));
    }
    repair_feasibility(&mut x, slabs, 1e-7)?;

    // Ridge only when the Hessian is not positive definite (fewer
    // independent terms than unknowns).
    let mut g_work = g_mat.clone();
    let mut ridge = false;
    if g_work.clone().cholesky().is_none() {
        let scale = g_work.diagonal().amax().max(1.0);
        for i in 0..dim {
            g_work[(i, i)] += 1e-12 * scale;
        }
        ridge = true;
    }

    let mut working: Vec<Face> = Vec::new();
    let max_iter = 100 * (slabs.len() + dim) + 50;
    for _ in 0..max_iter {
        // Equality-constrained step in the null space of the working set.
        let grad = &g_work * &x + g_vec;
        let p = if working.is_empty() {
            g_work
                .clone()
                .cholesky()
                .map(|ch| ch.solve(&(-&grad)))
                .ok_or_else(|| Error::Numerical {
                    stage: "qp",
                    detail: "hessian factorization failed".into(),
                })?
        } else if working.len() >= dim {
            DVector::zeros(dim)
        } else {
            let mut nt = DMatrix::zeros(dim, working.len());
            for (r, f) in working.iter().enumerate() {
                nt.column_mut(r).copy_from(&slabs[f.idx].c);
            }
            let qr = nt.qr();
            let q_full = full_q(&qr.q(), dim);
            let z = q_full.columns(working.len(), dim - working.len()).into_owned();
            let zgz = z.transpose() * &g_work * &z;
            let rhs = -(z.transpose() * &grad);
            let pz = zgz
                .cholesky()
                .map(|ch| ch.solve(&rhs))
                .ok_or_else(|| Error::Numerical {
                    stage: "qp",
                    detail: "reduced hessian factorization failed".into(),
                })?;
            &z * pz
        };

        let scale = 1.0 + grad.amax();
        if p.amax() <= qp_tol * scale {
            // Stationary on the working set; check multipliers.
            if working.is_empty() {
                return Ok((x, ridge));
            }
            let mut nt = DMatrix::zeros(dim, working.len());
            for (r, f) in working.iter().enumerate() {
                // Outward normal: +c for an upper face, −c for a lower face.
                let sign = if f.upper { 1.0 } else { -1.0 };
                nt.column_mut(r).copy_from(&(sign * &slabs[f.idx].c));
            }
            // Stationarity: grad = −Σ μᵣ nᵣ with μ ≥ 0 at an optimum.
            let mu = nt
                .clone()
                .svd(true, true)
                .solve(&(-&grad), 1e-13)
                .map_err(|e| Error::Numerical {
                    stage: "qp",
                    detail: format!("multiplier solve failed: {e}"),
                })?;
            let (worst_r, worst_mu) = mu
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(r, v)| (r, *v))
                .expect("working set non-empty");
            if worst_mu >= -qp_tol * scale {
                return Ok((x, ridge));
            }
            working.remove(worst_r);
            continue;
        }

        // Step length: largest α ≤ 1 keeping every inactive face satisfied.
        let mut alpha = 1.0f64;
        let mut blocker: Option<Face> = None;
        for (idx, s) in slabs.iter().enumerate() {
            let cp = s.c.dot(&p);
            let cx = s.c.dot(&x);
            if cp > 1e-13 && !working.contains(&Face { idx, upper: true }) {
                let a = (s.u - cx) / cp;
                if a < alpha {
                    alpha = a.max(0.0);
                    blocker = Some(Face { idx, upper: true });
                }
            } else if cp < -1e-13 && !working.contains(&Face { idx, upper: false }) {
                let a = (s.l - cx) / cp;
                if a < alpha {
                    alpha = a.max(0.0);
                    blocker = Some(Face { idx, upper: false });
                }
            }
        }
        x.axpy(alpha, &p, 1.0);
        if let Some(f) = blocker {
            working.push(f);
        }
    }
    Err(Error::Numerical {
        stage: "qp",
        detail: "active-set iteration limit".into(),
    })
}

/// nalgebra's thin QR gives Q with as many columns as the input; extend to
/// a full orthonormal basis by Gram–Schmidt against the identity.
fn full_q(q_thin: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    let mut cols: Vec<DVector<f64>> = q_thin.column_iter().map(|c| c.into_owned()).collect();
    let mut basis = DMatrix::zeros(dim, dim);
    for (j, c) in cols.iter().enumerate() {
        basis.column_mut(j).copy_from(c);
    }
    let mut filled = cols.len();
    for i in 0..dim {
        if filled == dim {
            break;
        }
        let mut v = DVector::zeros(dim);
        v[i] = 1.0;
        for c in &cols {
            let d = c.dot(&v);
            v.axpy(-d, c, 1.0);
        }
        let norm = v.norm();
        if norm > 1e-8 {
            v /= norm;
            basis.column_mut(filled).copy_from(&v);
            cols.push(v);
            filled += 1;
        }
    }
    basis
}

fn weighted_qp(
    terms: &[Term],
    slabs: &[Slab],
    dim: usize,
    warm: DVector<f64>,
    qp_tol: f64,
) -> Result<(DVector<f64>, bool)> {
    let mut g_mat = DMatrix::zeros(dim, dim);
    let mut g_vec = DVector::zeros(dim);
    for t in terms {
        g_mat.syger(2.0 * t.w, &t.c, &t.c, 1.0);
        g_vec.axpy(-2.0 * t.w * t.r, &t.c, 1.0);
    }
    // syger fills the lower triangle; mirror it.
    for i in 0..dim {
        for j in (i + 1)..dim {
            g_mat[(i, j)] = g_mat[(j, i)];
        }
    }
    solve_box_qp(&g_mat, &g_vec, slabs, warm, qp_tol)
}

/// Solves one row of the S-step: s = (1, x) minimizing the row's weighted
/// residual with 0 ≤ s·eⱼ ≤ 1 for every column j. Exact columns must carry
/// the canonical unit pattern in `effects` and pin s's leading entry to 1.
pub fn solve_row_qp(
    effects: &DMatrix<f64>,
    f_row: &[f64],
    sigma_row: &[f64],
    mask_row: &[bool],
    exact_cols: &BTreeSet<usize>,
    warm: Option<&DVector<f64>>,
    qp_tol: f64,
) -> Result<DVector<f64>> {
    solve_row_qp_flagged(effects, f_row, sigma_row, mask_row, exact_cols, warm, qp_tol)
        .map(|(s, _)| s)
}

fn solve_row_qp_flagged(
    effects: &DMatrix<f64>,
    f_row: &[f64],
    sigma_row: &[f64],
    mask_row: &[bool],
    exact_cols: &BTreeSet<usize>,
    warm: Option<&DVector<f64>>,
    qp_tol: f64,
) -> Result<(DVector<f64>, bool)> {
    let (k, n) = effects.shape();
    if f_row.len() != n || sigma_row.len() != n || mask_row.len() != n {
        return Err(Error::Invalid("row length mismatch".into()));
    }
    for &j in exact_cols {
        let col = effects.column(j);
        let canonical =
            (col[0] - 1.0).abs() < 1e-12 && col.iter().skip(1).all(|&v| v.abs() < 1e-12);
        if !canonical {
            return Err(Error::Invalid(format!(
                "exact column {j} does not carry the unit pattern"
            )));
        }
        if mask_row[j] && (f_row[j] - 1.0).abs() > 1e-12 {
            return Err(Error::Invalid(format!(
                "exact column {j} has frequency {} != 1",
                f_row[j]
            )));
        }
    }
    let dim = k - 1;
    let mut terms = Vec::new();
    let mut raw_slabs = Vec::new();
    for j in 0..n {
        let e0 = effects[(0, j)];
        let ebar = effects.column(j).rows(1, dim).into_owned();
        if !exact_cols.contains(&j) {
            // s·e = e0 + x·ē must stay within [0,1] even when unmeasured.
            raw_slabs.push((ebar.clone(), -e0, 1.0 - e0));
            if mask_row[j] {
                let w = 1.0 / (sigma_row[j] * sigma_row[j]);
                terms.push(Term {
                    c: ebar,
                    r: f_row[j] - e0,
                    w,
                });
            }
        }
    }
    let slabs = dedup_slabs(raw_slabs)?;
    let warm = match warm {
        Some(s) => {
            if s.len() != k || (s[0] - 1.0).abs() > 1e-12 {
                return Err(Error::Invalid("warm start is not a state vector".into()));
            }
            s.rows(1, dim).into_owned()
        }
        None => DVector::zeros(dim),
    };
    let (x, ridge) = weighted_qp(&terms, &slabs, dim, warm, qp_tol)?;
    let mut s = DVector::zeros(k);
    s[0] = 1.0;
    s.rows_mut(1, dim).copy_from(&x);
    Ok((s, ridge))
}

/// Solves one column of the E-step: e minimizing the column's weighted
/// residual with 0 ≤ sᵢ·e ≤ 1 for every row i.
pub fn solve_col_qp(
    states: &DMatrix<f64>,
    f_col: &[f64],
    sigma_col: &[f64],
    mask_col: &[bool],
    warm: Option<&DVector<f64>>,
    qp_tol: f64,
) -> Result<DVector<f64>> {
    solve_col_qp_flagged(states, f_col, sigma_col, mask_col, warm, qp_tol).map(|(e, _)| e)
}

fn solve_col_qp_flagged(
    states: &DMatrix<f64>,
    f_col: &[f64],
    sigma_col: &[f64],
    mask_col: &[bool],
    warm: Option<&DVector<f64>>,
    qp_tol: f64,
) -> Result<(DVector<f64>, bool)> {
    let (m, k) = states.shape();
    if f_col.len() != m || sigma_col.len() != m || mask_col.len() != m {
        return Err(Error::Invalid("column length mismatch".into()));
    }
    let mut terms = Vec::new();
    let mut raw_slabs = Vec::new();
    for i in 0..m {
        let s = states.row(i).transpose();
        raw_slabs.push((s.clone(), 0.0, 1.0));
        if mask_col[i] {
            let w = 1.0 / (sigma_col[i] * sigma_col[i]);
            terms.push(Term {
                c: s,
                r: f_col[i],
                w,
            });
        }
    }
    let slabs = dedup_slabs(raw_slabs)?;
    let warm = warm.cloned().unwrap_or_else(|| {
        let mut e = DVector::zeros(k);
        e[0] = 0.5;
        e
    });
    weighted_qp(&terms, &slabs, k, warm, qp_tol)
}

/// Imputed data matrix: measured values, 1 on the unit column, 1/2 in
/// unfilled cells.
fn imputed(f: &FrequencyMatrix) -> DMatrix<f64> {
    let (m, n) = (f.nrows(), f.ncols());
    DMatrix::from_fn(m, n, |i, j| {
        if f.exact_cols().contains(&j) {
            1.0
        } else if f.is_measured(i, j) {
            f.values()[(i, j)]
        } else {
            0.5
        }
    })
}

/// Initial E: row 0 holds column means, lower rows the leading right
/// singular directions of the centered imputation; unit column pinned.
/// Every column mean lies in [0,1], so the mixed state (1, 0, …, 0) is
/// feasible for every first-sweep row QP.
fn initial_effects(d_hat: &DMatrix<f64>, k: usize, exact_cols: &BTreeSet<usize>) -> DMatrix<f64> {
    let (m, n) = d_hat.shape();
    let means = d_hat.row_mean();
    let mut centered = d_hat.clone();
    for j in 0..n {
        centered.column_mut(j).add_scalar_mut(-means[j]);
    }
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("svd requested v_t");
    let mut e = DMatrix::zeros(k, n);
    for j in 0..n {
        e[(0, j)] = means[j];
    }
    let avail = (k - 1).min(svd.singular_values.len()).min(m).min(n);
    for r in 0..avail {
        let scale = svd.singular_values[r].sqrt() / (m as f64).sqrt();
        for j in 0..n {
            e[(r + 1, j)] = scale * v_t[(r, j)];
        }
    }
    for &j in exact_cols {
        e.column_mut(j).fill(0.0);
        e[(0, j)] = 1.0;
    }
    e
}

struct RestartOutcome {
    s: DMatrix<f64>,
    e: DMatrix<f64>,
    chi2: f64,
    iterations: usize,
    converged: bool,
    ridge: bool,
}

fn run_restart(
    f: &FrequencyMatrix,
    opts: &FitOptions,
    mut e: DMatrix<f64>,
) -> Result<RestartOutcome> {
    let (m, n) = (f.nrows(), f.ncols());
    let k = opts.rank;
    let mut s = DMatrix::zeros(m, k);
    for i in 0..m {
        s[(i, 0)] = 1.0;
    }
    let values = f.values();
    let sigmas = f.sigmas();
    let mask = f.mask();
    let row_data: Vec<(Vec<f64>, Vec<f64>, Vec<bool>)> = (0..m)
        .map(|i| {
            (
                (0..n).map(|j| values[(i, j)]).collect(),
                (0..n).map(|j| sigmas[(i, j)]).collect(),
                (0..n).map(|j| mask[(i, j)]).collect(),
            )
        })
        .collect();
    let col_data: Vec<(Vec<f64>, Vec<f64>, Vec<bool>)> = (0..n)
        .map(|j| {
            (
                (0..m).map(|i| values[(i, j)]).collect(),
                (0..m).map(|i| sigmas[(i, j)]).collect(),
                (0..m).map(|i| mask[(i, j)]).collect(),
            )
        })
        .collect();

    let mut prev_chi2 = f64::INFINITY;
    let mut warm_rows: Vec<Option<DVector<f64>>> = vec![None; m];
    let mut converged = false;
    let mut iterations = 0;
    let mut ridge = false;
    for sweep in 1..=opts.max_iterations {
        iterations = sweep;
        let new_rows: Vec<(DVector<f64>, bool)> = (0..m)
            .into_par_iter()
            .map(|i| {
                let (fv, sv, mv) = &row_data[i];
                solve_row_qp_flagged(
                    &e,
                    fv,
                    sv,
                    mv,
                    f.exact_cols(),
                    warm_rows[i].as_ref(),
                    opts.qp_tolerance,
                )
            })
            .collect::<Result<_>>()?;
        for (i, (row, r)) in new_rows.iter().enumerate() {
            s.row_mut(i).copy_from(&row.transpose());
            ridge |= *r;
        }
        warm_rows = new_rows.into_iter().map(|(row, _)| Some(row)).collect();

        let new_cols: Vec<(usize, DVector<f64>, bool)> = (0..n)
            .filter(|j| !f.exact_cols().contains(j))
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|j| {
                let (fv, sv, mv) = &col_data[j];
                let warm = e.column(j).into_owned();
                solve_col_qp_flagged(&s, fv, sv, mv, Some(&warm), opts.qp_tolerance)
                    .map(|(col, r)| (j, col, r))
            })
            .collect::<Result<_>>()?;
        for (j, col, r) in new_cols {
            e.column_mut(j).copy_from(&col);
            ridge |= r;
        }

        let current = chi2(f, &(&s * &e))?;
        if current > prev_chi2 + (1e-8 + 1e-10 * prev_chi2) {
            return Err(Error::Numerical {
                stage: "wlra",
                detail: format!("chi2 increased: {prev_chi2} -> {current}"),
            });
        }
        if prev_chi2 - current < opts.delta_chi2_tol {
            prev_chi2 = current;
            converged = true;
            break;
        }
        prev_chi2 = current;
    }
    Ok(RestartOutcome {
        s,
        e,
        chi2: prev_chi2,
        iterations,
        converged,
        ridge,
    })
}

/// Best rank-k fit over restarts. Restart 0 starts from the plain SVD
/// initialization; later restarts perturb the imputed matrix with uniform
/// ±0.1 noise before re-deriving the start. Ties within 1e-9 go to the
/// earliest restart so results are reproducible.
pub fn fit_rank_k(f: &FrequencyMatrix, opts: &FitOptions) -> Result<FitResult> {
    opts.validate()?;
    let (m, n) = (f.nrows(), f.ncols());
    if opts.rank > m.min(n) {
        return Err(Error::Invalid(format!(
            "rank {} exceeds min({m},{n})",
            opts.rank
        )));
    }
    if f.exact_cols().is_empty() {
        return Err(Error::Invalid("frequency matrix has no exact unit column".into()));
    }
    let d_hat = imputed(f);
    let outcomes: Vec<RestartOutcome> = (0..opts.restarts)
        .map(|r| {
            let start = if r == 0 {
                d_hat.clone()
            } else {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(splitmix64(splitmix64(opts.seed) ^ r as u64));
                let mut perturbed = d_hat.clone();
                for v in perturbed.iter_mut() {
                    *v = (*v + rng.gen_range(-0.1..0.1)).clamp(0.0, 1.0);
                }
                perturbed
            };
            let e0 = initial_effects(&start, opts.rank, f.exact_cols());
            run_restart(f, opts, e0)
        })
        .collect::<Result<_>>()?;
    let per_restart_chi2: Vec<f64> = outcomes.iter().map(|o| o.chi2).collect();
    let best_chi2 = per_restart_chi2.iter().cloned().fold(f64::INFINITY, f64::min);
    let winner_idx = per_restart_chi2
        .iter()
        .position(|&c| c <= best_chi2 + 1e-9)
        .expect("at least one restart");
    let winner = &outcomes[winner_idx];
    Ok(FitResult {
        s: winner.s.clone(),
        e: winner.e.clone(),
        chi2: winner.chi2,
        iterations: winner.iterations,
        converged: winner.converged,
        per_restart_chi2,
        ridge_applied: winner.ridge,
    })
}
