//! Quantum-consistency shrink test: the smallest fraction by which the
//! realized GPT vectors must be shrunk before some origin-centered
//! ellipsoid fits between the realized state points and the consistent
//! state space recomputed from the shrunk effects.
//!
//! The fitted body `{x : xᵀQx ≤ 1}` is centered at the projected origin,
//! so the linear transformation of the qubit ball it represents fixes the
//! maximally mixed state. The centered restriction keeps both containment
//! conditions jointly convex in `Q` (linear point constraints plus one
//! linear matrix inequality per facet) and makes the reported shrink a
//! conservative upper estimate: a general affine fit could only be
//! smaller.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::core::GptModel;
use crate::polytope::{dual_states, EffectSpacePoly, Halfspace, Polytope, SpaceRole, StateSpacePoly};
use crate::{Error, Result};

/// Residual allowed when a returned ellipsoid is re-verified against both
/// condition sets.
const FIT_TOL: f64 = 1e-7;
/// Absolute tolerance on the bisected shrink fraction.
const EPS_TOL: f64 = 1e-4;
/// Largest shrink fraction tried before the data is declared inconsistent.
const EPS_MAX: f64 = 0.2;

/// One probe of the bisection: the shrink fraction tested and whether an
/// ellipsoid fit exists there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShrinkStep {
    pub epsilon: f64,
    pub feasible: bool,
}

/// Outcome of [`quantum_shrink_factor`]. Unless `epsilon_star` is exactly
/// zero, the trace brackets it: feasibility holds at `epsilon_star` and
/// fails at some probe within `1e-4` below it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkResult {
    /// Infimum feasible shrink fraction, to absolute tolerance 1e-4.
    pub epsilon_star: f64,
    /// Row-major symmetric positive-definite matrix of the fitted body
    /// `{x : xᵀQx ≤ 1}` at the smallest feasible probe.
    pub feasible_ellipsoid: Vec<Vec<f64>>,
    /// Every probed shrink fraction in test order.
    pub trace: Vec<ShrinkStep>,
}

/// Scales the non-leading components of every state row and the Bloch
/// components of every effect column by `factor`; leading components are
/// untouched, so normalization and the unit effect survive.
pub fn shrink_model(model: &GptModel, factor: f64) -> Result<GptModel> {
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(Error::Invalid(format!(
            "shrink factor must lie in (0, 1], got {factor}"
        )));
    }
    let mut states = model.states.clone();
    for c in 1..states.ncols() {
        for i in 0..states.nrows() {
            states[(i, c)] *= factor;
        }
    }
    let mut effects = model.effects.clone();
    for r in 1..effects.nrows() {
        for j in 0..effects.ncols() {
            effects[(r, j)] *= factor;
        }
    }
    GptModel::new(states, effects)
}

/// Decides whether a symmetric positive-definite `Q` exists with
/// `vᵀQv ≤ 1` for every point (the points lie in the ellipsoid) and, per
/// facet `a·x ≤ b`, the block `[[Q, a], [aᵀ, b²]]` positive-semidefinite
/// (the ellipsoid lies in the polytope).
///
/// Returns `Ok(Some(q))` with a verified witness, `Ok(None)` when the
/// constraint system is infeasible, and `Err(Error::Numerical)` only when
/// the solver fails to converge, so infeasibility is never conflated with
/// a solver breakdown. Facet offsets must be positive: the body is
/// centered, so the origin must be interior to the polytope.
pub fn ellipsoid_between(
    points: &[Vec<f64>],
    halfspaces: &[Halfspace],
) -> Result<Option<DMatrix<f64>>> {
    if points.is_empty() {
        return Err(Error::Invalid("ellipsoid fit needs at least one point".into()));
    }
    if halfspaces.is_empty() {
        return Err(Error::Invalid(
            "ellipsoid fit needs at least one halfspace".into(),
        ));
    }
    let d = points[0].len();
    if d == 0 || points.iter().any(|v| v.len() != d) {
        return Err(Error::Invalid("points must share a positive dimension".into()));
    }
    for h in halfspaces {
        if h.normal.len() != d {
            return Err(Error::Invalid(format!(
                "halfspace dimension {} does not match points ({d})",
                h.normal.len()
            )));
        }
        if h.offset <= 0.0 {
            return Err(Error::Invalid(format!(
                "facet offset {} is not positive: the origin must be interior",
                h.offset
            )));
        }
    }
    // A point outside the polytope contradicts the two containments
    // outright; certify infeasibility without touching the solver.
    for v in points {
        for h in halfspaces {
            let val: f64 = h.normal.iter().zip(v).map(|(a, x)| a * x).sum();
            if val > h.offset + 1e-9 {
                return Ok(None);
            }
        }
    }
    solve_min_containment(points, halfspaces, d)
}

/// Bisects the shrink fraction `ε` over `[0, 0.2]`: at each probe the
/// realized state vertices and the Bloch parts of the realized effect
/// vertices are scaled by `1 − ε`, the consistent state space is
/// recomputed from the shrunk effects, and [`ellipsoid_between`] is asked
/// whether a centered ellipsoid separates the two. Feasibility is
/// monotone in `ε` (shrinking states relaxes point containment while the
/// consistent space grows as effects shrink), which the trace asserts.
pub fn quantum_shrink_factor(
    s_real: &StateSpacePoly,
    e_real: &EffectSpacePoly,
) -> Result<ShrinkResult> {
    if s_real.role != SpaceRole::Realized {
        return Err(Error::Invalid(format!(
            "quantum_shrink_factor expects realized polytopes, state space has role {:?}",
            s_real.role
        )));
    }
    if e_real.role != SpaceRole::Realized {
        return Err(Error::Invalid(format!(
            "quantum_shrink_factor expects realized polytopes, effect space has role {:?}",
            e_real.role
        )));
    }
    if e_real.poly.dim != s_real.poly.dim + 1 {
        return Err(Error::Invalid(format!(
            "effect dimension {} does not extend state dimension {}",
            e_real.poly.dim, s_real.poly.dim
        )));
    }

    let mut trace = Vec::new();
    let mut probe = |eps: f64| -> Result<Option<DMatrix<f64>>> {
        let outcome = shrunk_fit(s_real, e_real, eps)?;
        trace.push(ShrinkStep { epsilon: eps, feasible: outcome.is_some() });
        Ok(outcome)
    };

    if let Some(q) = probe(0.0)? {
        return Ok(ShrinkResult {
            epsilon_star: 0.0,
            feasible_ellipsoid: matrix_rows(&q),
            trace,
        });
    }
    let mut best = match probe(EPS_MAX)? {
        Some(q) => q,
        None => {
            return Err(Error::Invalid(format!(
                "no ellipsoid fits even at shrink fraction {EPS_MAX}: \
                 data grossly inconsistent with a qubit"
            )));
        }
    };
    let (mut lo, mut hi) = (0.0f64, EPS_MAX);
    while hi - lo > EPS_TOL {
        let mid = 0.5 * (lo + hi);
        match probe(mid)? {
            Some(q) => {
                best = q;
                hi = mid;
            }
            None => lo = mid,
        }
    }

    let worst_feasible = trace
        .iter()
        .filter(|s| s.feasible)
        .map(|s| s.epsilon)
        .fold(f64::INFINITY, f64::min);
    let best_infeasible = trace
        .iter()
        .filter(|s| !s.feasible)
        .map(|s| s.epsilon)
        .fold(f64::NEG_INFINITY, f64::max);
    if best_infeasible >= worst_feasible {
        return Err(Error::Numerical {
            stage: "qfit",
            detail: format!(
                "feasibility is not monotone along the bisection trace: \
                 infeasible at {best_infeasible}, feasible at {worst_feasible}"
            ),
        });
    }

    Ok(ShrinkResult {
        epsilon_star: hi,
        feasible_ellipsoid: matrix_rows(&best),
        trace,
    })
}

/// One shrink probe: scale, redualize, and test the ellipsoid fit.
fn shrunk_fit(
    s_real: &StateSpacePoly,
    e_real: &EffectSpacePoly,
    eps: f64,
) -> Result<Option<DMatrix<f64>>> {
    let f = 1.0 - eps;
    let shrunk_states: Vec<Vec<f64>> = s_real
        .poly
        .vertices
        .iter()
        .map(|v| v.iter().map(|x| x * f).collect())
        .collect();
    let shrunk_effects: Vec<Vec<f64>> = e_real
        .poly
        .vertices
        .iter()
        .map(|e| {
            let mut out = e.clone();
            for x in &mut out[1..] {
                *x *= f;
            }
            out
        })
        .collect();
    let shrunk = EffectSpacePoly {
        poly: Polytope::from_vertices(&shrunk_effects)?,
        role: SpaceRole::Realized,
    };
    let consistent = dual_states(&shrunk)?;
    // A centered body has the origin interior; a consistent space that
    // does not cannot host one, which is an infeasibility of the data,
    // not an input error.
    if consistent.poly.halfspaces.iter().any(|h| h.offset <= 1e-12) {
        return Ok(None);
    }
    ellipsoid_between(&shrunk_states, &consistent.poly.halfspaces)
}

fn matrix_rows(q: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..q.nrows())
        .map(|i| (0..q.ncols()).map(|j| q[(i, j)]).collect())
        .collect()
}

/// Barrier path-following for `min s` subject to `vᵀQv ≤ s` per point and
/// `Q ⪰ aaᵀ/b²` per facet, the Schur form of the facet block LMI (valid
/// because `b > 0`). The feasible set of the relaxation is never empty,
/// so the path always exists; the original system is feasible exactly
/// when the minimal `s` is at most 1.
fn solve_min_containment(
    points: &[Vec<f64>],
    halfspaces: &[Halfspace],
    d: usize,
) -> Result<Option<DMatrix<f64>>> {
    let basis = sym_basis(d);
    let m = basis.len();
    // Point weights: vᵀQv = Σ_k q_k (vᵀ E_k v).
    let weights: Vec<DVector<f64>> = points
        .iter()
        .map(|v| {
            DVector::from_iterator(m, basis.iter().map(|e| quad_form(e, v)))
        })
        .collect();
    let rank1: Vec<DMatrix<f64>> = halfspaces
        .iter()
        .map(|h| {
            let c = DVector::from_iterator(d, h.normal.iter().map(|a| a / h.offset));
            &c * c.transpose()
        })
        .collect();

    // Start strictly inside the relaxed set: Σ_f C_f + I dominates every
    // C_f by at least I, and s sits above every point value.
    let mut q0 = DMatrix::<f64>::identity(d, d);
    for c in &rank1 {
        q0 += c;
    }
    let mut x = DVector::zeros(m + 1);
    set_params(&mut x, &q0, d);
    let s0 = weights
        .iter()
        .map(|w| w.dot(&x.rows(0, m)))
        .fold(f64::NEG_INFINITY, f64::max);
    x[m] = s0 + 1.0;

    // Self-concordance parameter of the full barrier; at a centered
    // iterate the minimal s lies within nu / tau below the current one.
    let nu = (d * rank1.len() + weights.len()) as f64;
    let tau_final = (nu / 1e-9).max(1e10);
    let mut tau = 1.0;
    loop {
        newton_stage(&mut x, tau, &basis, &rank1, &weights, d)?;
        let q = q_from_params(&x, &basis, d);
        let worst = weights
            .iter()
            .map(|w| w.dot(&x.rows(0, m)))
            .fold(f64::NEG_INFINITY, f64::max);
        // Any in-domain iterate already satisfies the facet LMIs
        // strictly; point containment makes it a witness outright.
        if worst <= 1.0 {
            return Ok(Some(verify_witness(q, points, halfspaces)?));
        }
        // The gap bound certifies infeasibility long before tau_final
        // whenever the minimal s sits clearly above 1.
        if x[m] - nu / tau > 1.0 + FIT_TOL {
            return Ok(None);
        }
        if tau >= tau_final {
            if x[m] <= 1.0 + FIT_TOL {
                return Ok(Some(verify_witness(q, points, halfspaces)?));
            }
            return Ok(None);
        }
        tau *= 8.0;
    }
}

/// Damped Newton on the barrier at fixed `tau`.
fn newton_stage(
    x: &mut DVector<f64>,
    tau: f64,
    basis: &[DMatrix<f64>],
    rank1: &[DMatrix<f64>],
    weights: &[DVector<f64>],
    d: usize,
) -> Result<()> {
    let m = basis.len();
    let mut lambda2 = f64::INFINITY;
    for _ in 0..120 {
        let q = q_from_params(x, basis, d);
        let mut grad = DVector::<f64>::zeros(m + 1);
        let mut hess = DMatrix::<f64>::zeros(m + 1, m + 1);
        grad[m] += tau;
        for c in rank1 {
            let a = &q - c;
            let inv = match a.clone().cholesky() {
                Some(ch) => ch.inverse(),
                None => {
                    return Err(Error::Numerical {
                        stage: "qfit",
                        detail: "barrier iterate left the positive-definite cone".into(),
                    })
                }
            };
            let prods: Vec<DMatrix<f64>> = basis.iter().map(|e| &inv * e).collect();
            for k in 0..m {
                grad[k] -= prods[k].trace();
                for l in k..m {
                    let t = trace_product(&prods[k], &prods[l]);
                    hess[(k, l)] += t;
                    if l != k {
                        hess[(l, k)] += t;
                    }
                }
            }
        }
        for w in weights {
            let r = x[m] - w.dot(&x.rows(0, m));
            if r <= 0.0 {
                return Err(Error::Numerical {
                    stage: "qfit",
                    detail: "barrier iterate left the point-containment region".into(),
                });
            }
            let mut u = DVector::<f64>::zeros(m + 1);
            for k in 0..m {
                u[k] = -w[k];
            }
            u[m] = 1.0;
            grad.axpy(-1.0 / r, &u, 1.0);
            hess.ger(1.0 / (r * r), &u, &u, 1.0);
        }

        let delta = precond_solve(&hess, &grad).ok_or(Error::Numerical {
            stage: "qfit",
            detail: "singular Newton system in the ellipsoid barrier".into(),
        })?;
        lambda2 = -grad.dot(&delta);
        if lambda2 <= 1e-11 {
            return Ok(());
        }
        let base = barrier_value(x, tau, rank1, weights, basis, d).ok_or(Error::Numerical {
            stage: "qfit",
            detail: "barrier value undefined at the current iterate".into(),
        })?;
        let mut t = 1.0;
        let mut stepped = false;
        loop {
            let cand = &*x + t * &delta;
            if let Some(val) = barrier_value(&cand, tau, rank1, weights, basis, d) {
                if val <= base - 0.01 * t * lambda2 {
                    *x = cand;
                    stepped = true;
                    break;
                }
            }
            t *= 0.5;
            if t < 1e-14 {
                break;
            }
        }
        if !stepped {
            break;
        }
    }
    // A decrement of lambda2 leaves the stage value within lambda2 of its
    // minimum, an s error of order lambda2 / tau: harmless slop at the
    // tolerances decided here. Anything larger is a real breakdown.
    if lambda2 <= 1e-4 {
        Ok(())
    } else {
        Err(Error::Numerical {
            stage: "qfit",
            detail: "Newton failed to converge in the ellipsoid barrier".into(),
        })
    }
}

/// Solves `H d = -g` with Jacobi preconditioning: constraint residuals
/// spanning many decades put the raw Hessian far beyond f64 Cholesky
/// range near the central path's end.
fn precond_solve(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let n = hess.nrows();
    let scale = DVector::from_iterator(
        n,
        (0..n).map(|i| 1.0 / hess[(i, i)].abs().max(1e-300).sqrt()),
    );
    let scaled = DMatrix::from_fn(n, n, |i, j| hess[(i, j)] * scale[i] * scale[j]);
    let rhs = DVector::from_iterator(n, (0..n).map(|i| -grad[i] * scale[i]));
    let mut ridge = 0.0;
    loop {
        let mut m = scaled.clone();
        for i in 0..n {
            m[(i, i)] += ridge;
        }
        if let Some(ch) = m.cholesky() {
            let y = ch.solve(&rhs);
            return Some(DVector::from_iterator(n, (0..n).map(|i| y[i] * scale[i])));
        }
        ridge = if ridge == 0.0 { 1e-12 } else { ridge * 100.0 };
        if ridge > 1e-3 {
            return None;
        }
    }
}

/// Barrier value at `x`, or None when `x` is outside the domain.
fn barrier_value(
    x: &DVector<f64>,
    tau: f64,
    rank1: &[DMatrix<f64>],
    weights: &[DVector<f64>],
    basis: &[DMatrix<f64>],
    d: usize,
) -> Option<f64> {
    let m = basis.len();
    let q = q_from_params(x, basis, d);
    // Objective tau*(s - 1): same minimizers as tau*s, but the value
    // stays small near the s = 1 decision boundary, where the line
    // search must resolve tiny decrements.
    let mut val = tau * (x[m] - 1.0);
    for c in rank1 {
        let ch = (&q - c).cholesky()?;
        let mut logdet = 0.0;
        for i in 0..d {
            let l = ch.l_dirty()[(i, i)];
            if l <= 0.0 {
                return None;
            }
            logdet += l.ln();
        }
        val -= 2.0 * logdet;
    }
    for w in weights {
        let r = x[m] - w.dot(&x.rows(0, m));
        if r <= 0.0 {
            return None;
        }
        val -= r.ln();
    }
    Some(val)
}

/// Re-verifies a candidate witness against both condition sets, using the
/// block form of the facet constraint, before handing it out.
fn verify_witness(
    q: DMatrix<f64>,
    points: &[Vec<f64>],
    halfspaces: &[Halfspace],
) -> Result<DMatrix<f64>> {
    if fit_residual(&q, points, halfspaces) > FIT_TOL {
        return Err(Error::Numerical {
            stage: "qfit",
            detail: "solver produced an ellipsoid that fails re-verification".into(),
        });
    }
    Ok(q)
}

/// Worst constraint violation of `q`: positive parts of `vᵀQv − 1` and of
/// the negated smallest eigenvalue of each facet block `[[Q, a], [aᵀ, b²]]`.
pub fn fit_residual(q: &DMatrix<f64>, points: &[Vec<f64>], halfspaces: &[Halfspace]) -> f64 {
    let d = q.nrows();
    let mut worst = 0.0f64;
    for v in points {
        worst = worst.max(quad_form(q, v) - 1.0);
    }
    for h in halfspaces {
        let mut block = DMatrix::<f64>::zeros(d + 1, d + 1);
        block.view_mut((0, 0), (d, d)).copy_from(q);
        for i in 0..d {
            block[(i, d)] = h.normal[i];
            block[(d, i)] = h.normal[i];
        }
        block[(d, d)] = h.offset * h.offset;
        let eigs = block.symmetric_eigen().eigenvalues;
        worst = worst.max(-eigs.min());
    }
    worst
}

/// Basis of symmetric d×d matrices: diagonal units, then symmetrized
/// off-diagonal units in row-major pair order.
fn sym_basis(d: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        let mut e = DMatrix::zeros(d, d);
        e[(i, i)] = 1.0;
        out.push(e);
    }
    for i in 0..d {
        for j in i + 1..d {
            let mut e = DMatrix::zeros(d, d);
            e[(i, j)] = 1.0;
            e[(j, i)] = 1.0;
            out.push(e);
        }
    }
    out
}

fn q_from_params(x: &DVector<f64>, basis: &[DMatrix<f64>], d: usize) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(d, d);
    for (k, e) in basis.iter().enumerate() {
        q += e * x[k];
    }
    q
}

fn set_params(x: &mut DVector<f64>, q: &DMatrix<f64>, d: usize) {
    let mut idx = 0;
    for i in 0..d {
        x[idx] = q[(i, i)];
        idx += 1;
    }
    for i in 0..d {
        for j in i + 1..d {
            x[idx] = q[(i, j)];
            idx += 1;
        }
    }
}

fn quad_form(q: &DMatrix<f64>, v: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..v.len() {
        for j in 0..v.len() {
            total += v[i] * q[(i, j)] * v[j];
        }
    }
    total
}

fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            total += a[(i, j)] * b[(j, i)];
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn cube_halfspaces(side: f64) -> Vec<Halfspace> {
        let mut out = Vec::new();
        for i in 0..3 {
            for sign in [1.0, -1.0] {
                let mut n = vec![0.0; 3];
                n[i] = sign;
                out.push(Halfspace::new(n, side).unwrap());
            }
        }
        out
    }

    fn octahedron(scale: f64) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for i in 0..3 {
            for sign in [scale, -scale] {
                let mut v = vec![0.0; 3];
                v[i] = sign;
                out.push(v);
            }
        }
        out
    }

    /// Zero, unit, and six axis effects (1 ± x_i)/2 in GPT coordinates.
    fn axis_diamond() -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; 4], vec![1.0, 0.0, 0.0, 0.0]];
        for i in 1..4 {
            for sign in [0.5, -0.5] {
                let mut e = vec![0.5, 0.0, 0.0, 0.0];
                e[i] = sign;
                out.push(e);
            }
        }
        out
    }

    fn state_poly(points: &[Vec<f64>]) -> StateSpacePoly {
        StateSpacePoly {
            poly: Polytope::from_vertices(points).unwrap(),
            role: SpaceRole::Realized,
            contains_origin: true,
        }
    }

    fn effect_poly(points: &[Vec<f64>]) -> EffectSpacePoly {
        EffectSpacePoly {
            poly: Polytope::from_vertices(points).unwrap(),
            role: SpaceRole::Realized,
        }
    }

    /// Independent check of both condition sets at a given q.
    fn direct_residual(q: &DMatrix<f64>, points: &[Vec<f64>], halfspaces: &[Halfspace]) -> f64 {
        let d = q.nrows();
        let mut worst = 0.0f64;
        for v in points {
            let x = DVector::from_column_slice(v);
            worst = worst.max((x.transpose() * q * &x)[(0, 0)] - 1.0);
        }
        let inv = q.clone().try_inverse().unwrap();
        for h in halfspaces {
            let a = DVector::from_column_slice(&h.normal);
            let support = (a.transpose() * &inv * &a)[(0, 0)];
            worst = worst.max(support - h.offset * h.offset);
        }
        worst
    }

    #[test]
    fn shrink_is_identity_at_factor_one() {
        let model = GptModel::new(
            dmatrix![1.0, 0.3, -0.2; 1.0, -0.5, 0.1],
            dmatrix![1.0, 0.5, 0.0; 0.0, 0.25, 0.1; 0.0, -0.1, 0.4],
        )
        .unwrap();
        let shrunk = shrink_model(&model, 1.0).unwrap();
        assert_eq!(shrunk, model);
        assert!(shrink_model(&model, 0.0).is_err());
        assert!(shrink_model(&model, 1.5).is_err());
    }

    #[test]
    fn shrink_scales_bloch_components_exactly() {
        let model = GptModel::new(
            dmatrix![1.0, 0.3, -0.2; 1.0, -0.5, 0.1; 1.0, 0.2, 0.7],
            dmatrix![1.0, 0.5, 0.3; 0.0, 0.25, 0.1; 0.0, -0.1, 0.4],
        )
        .unwrap();
        let f = 0.99;
        let shrunk = shrink_model(&model, f).unwrap();
        for i in 0..3 {
            assert_eq!(shrunk.states[(i, 0)], 1.0);
            for c in 1..3 {
                assert_eq!(shrunk.states[(i, c)], model.states[(i, c)] * f);
            }
        }
        for j in 0..3 {
            assert_eq!(shrunk.effects[(0, j)], model.effects[(0, j)]);
            for r in 1..3 {
                assert_eq!(shrunk.effects[(r, j)], model.effects[(r, j)] * f);
            }
        }

        // Bilinearity: with B the leading-component table, the shrunk
        // table is B + f²(D − B).
        let d = model.probabilities();
        let ds = shrunk.probabilities();
        for i in 0..3 {
            for j in 0..3 {
                let b = model.states[(i, 0)] * model.effects[(0, j)];
                let expect = b + f * f * (d[(i, j)] - b);
                assert!((ds[(i, j)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ellipsoid_fits_ball_points_in_a_wide_cube() {
        let mut points = octahedron(1.0);
        let r = 1.0 / 3.0f64.sqrt();
        points.push(vec![r, r, r]);
        points.push(vec![-r, r, -r]);
        let cube = cube_halfspaces(2.0);
        // The identity is feasible by direct verification: unit ball
        // inside the side-2 cube.
        assert!(direct_residual(&DMatrix::identity(3, 3), &points, &cube) <= 1e-12);
        let q = ellipsoid_between(&points, &cube).unwrap().expect("feasible");
        assert!(direct_residual(&q, &points, &cube) <= 1e-7);
        assert!(fit_residual(&q, &points, &cube) <= 1e-7);
        assert!(q.clone().symmetric_eigen().eigenvalues.min() > 0.0);
    }

    #[test]
    fn ellipsoid_rejects_points_outside_the_outer_polytope() {
        let points = vec![vec![3.0, 0.0, 0.0]];
        let cube = cube_halfspaces(2.0);
        assert_eq!(ellipsoid_between(&points, &cube).unwrap(), None);
    }

    #[test]
    fn ellipsoid_touches_both_sides_on_the_octahedron_in_the_unit_cube() {
        let points = octahedron(1.0);
        let cube = cube_halfspaces(1.0);
        // The identity works exactly: vertices on the unit sphere, sphere
        // inscribed in the cube. Both condition sets are tight, so the
        // fit is rigid and the solver must land next to the identity.
        assert!(direct_residual(&DMatrix::identity(3, 3), &points, &cube) <= 1e-12);
        let q = ellipsoid_between(&points, &cube).unwrap().expect("feasible");
        assert!(fit_residual(&q, &points, &cube) <= 1e-7);
        assert!((&q - DMatrix::<f64>::identity(3, 3)).norm() < 1e-2);
    }

    #[test]
    fn ellipsoid_certifies_infeasible_interior_points() {
        // Cube corners sit inside the side-1.25 cube, but any centered
        // ellipsoid through them needs tr Q ≤ 1/0.64 while the facets
        // force every diagonal entry above 0.64.
        let corners: Vec<Vec<f64>> = (0..8)
            .map(|k| {
                (0..3)
                    .map(|i| if k >> i & 1 == 0 { 0.8 } else { -0.8 })
                    .collect()
            })
            .collect();
        let cube = cube_halfspaces(1.25);
        assert_eq!(ellipsoid_between(&corners, &cube).unwrap(), None);
    }

    #[test]
    fn ellipsoid_validates_inputs() {
        let cube = cube_halfspaces(1.0);
        assert!(ellipsoid_between(&[], &cube).is_err());
        assert!(ellipsoid_between(&[vec![0.1, 0.0, 0.0]], &[]).is_err());
        let shifted = vec![Halfspace::new(vec![1.0, 0.0, 0.0], -0.5).unwrap()];
        assert!(ellipsoid_between(&[vec![0.0, 0.0, 0.0]], &shifted).is_err());
        assert!(ellipsoid_between(&[vec![0.1, 0.0]], &cube).is_err());
    }

    #[test]
    fn shrink_factor_is_zero_on_an_ideal_fixture() {
        let states = state_poly(&octahedron(1.0));
        let effects = effect_poly(&axis_diamond());
        let res = quantum_shrink_factor(&states, &effects).unwrap();
        assert_eq!(res.epsilon_star, 0.0);
        assert_eq!(res.trace, vec![ShrinkStep { epsilon: 0.0, feasible: true }]);
        let q = DMatrix::from_fn(3, 3, |i, j| res.feasible_ellipsoid[i][j]);
        assert!(q.clone().symmetric_eigen().eigenvalues.min() > 0.0);
    }

    #[test]
    fn shrink_factor_matches_the_closed_form_on_inflated_states() {
        // States at radius 1.02 against axis effects: feasible exactly
        // when 1.02(1−ε)² ≤ 1, so ε* = 1 − 1/√1.02.
        let states = state_poly(&octahedron(1.02));
        let effects = effect_poly(&axis_diamond());
        let res = quantum_shrink_factor(&states, &effects).unwrap();
        let closed = 1.0 - (1.0f64 / 1.02).sqrt();
        assert!(
            (res.epsilon_star - closed).abs() < 2e-4,
            "epsilon_star {} vs closed form {closed}",
            res.epsilon_star
        );

        // Bisection bracket: the first probe is an infeasible ε = 0, the
        // smallest feasible probe is epsilon_star, and an infeasible
        // probe sits within the tolerance below it.
        assert_eq!(res.trace[0], ShrinkStep { epsilon: 0.0, feasible: false });
        let min_feasible = res
            .trace
            .iter()
            .filter(|s| s.feasible)
            .map(|s| s.epsilon)
            .fold(f64::INFINITY, f64::min);
        let max_infeasible = res
            .trace
            .iter()
            .filter(|s| !s.feasible)
            .map(|s| s.epsilon)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(min_feasible, res.epsilon_star);
        assert!(max_infeasible < min_feasible);
        assert!(min_feasible - max_infeasible <= 1.0001e-4);
    }

    #[test]
    fn shrink_factor_rejects_grossly_nonquantum_states() {
        let corners: Vec<Vec<f64>> = (0..8)
            .map(|k| {
                (0..3)
                    .map(|i| if k >> i & 1 == 0 { 1.0 } else { -1.0 })
                    .collect()
            })
            .collect();
        let states = state_poly(&corners);
        let effects = effect_poly(&axis_diamond());
        let err = quantum_shrink_factor(&states, &effects).unwrap_err();
        assert!(err.to_string().contains("inconsistent with a qubit"));
    }

    #[test]
    fn shrink_factor_checks_roles_and_dimensions() {
        let states = state_poly(&octahedron(1.0));
        let effects = effect_poly(&axis_diamond());
        let consistent_states = StateSpacePoly {
            role: SpaceRole::Consistent,
            ..states.clone()
        };
        assert!(quantum_shrink_factor(&consistent_states, &effects).is_err());
        let consistent_effects = EffectSpacePoly {
            role: SpaceRole::Consistent,
            ..effects.clone()
        };
        assert!(quantum_shrink_factor(&states, &consistent_effects).is_err());
    }
}
