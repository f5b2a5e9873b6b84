//! Domain types and elementary GPT algebra shared by all other modules.
//!
//! A state is a row vector `s` whose first component is 1; an effect is a
//! column vector `e` of the same length. The probability of outcome 0 when
//! the effect is measured on the state is the inner product `s·e`. The unit
//! effect is `(1, 0, …, 0)`, so `s·u = 1` for every state.
//!
//! Convention note: projective qubit effects are represented as
//! `(1/2, n̂/2)`, i.e. the Bloch part carries a factor 1/2 relative to the
//! common quantum-information normalization.

use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::collections::BTreeSet;

/// Entry tolerance for fitted quantities: a fitted probability may sit
/// outside [0,1] by at most this much before it is flagged.
pub const ENTRY_TOL: f64 = 1e-9;

/// A GPT state vector; `components[0] == 1` exactly and length ≥ 1.
#[derive(Debug, Clone, PartialEq)]
pub struct GptStateVector {
    components: DVector<f64>,
}

impl GptStateVector {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Invalid("state vector must not be empty".into()));
        }
        if components[0] != 1.0 {
            return Err(Error::Invalid(format!(
                "state vector must start with 1, got {}",
                components[0]
            )));
        }
        if !components.iter().all(|c| c.is_finite()) {
            return Err(Error::Invalid("state vector has non-finite entry".into()));
        }
        Ok(Self {
            components: DVector::from_vec(components),
        })
    }

    /// Builds the state `(1, bloch…)` from its non-constant part.
    pub fn from_bloch(bloch: &[f64]) -> Result<Self> {
        let mut c = Vec::with_capacity(bloch.len() + 1);
        c.push(1.0);
        c.extend_from_slice(bloch);
        Self::new(c)
    }

    pub fn components(&self) -> &DVector<f64> {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    /// The non-constant part of the vector (everything after the leading 1).
    pub fn bloch(&self) -> &[f64] {
        &self.components.as_slice()[1..]
    }
}

/// A GPT effect vector. Validity (inner products with model states in
/// [0,1]) is a property of a model, checked by [`validate_model`], not of
/// the vector itself.
#[derive(Debug, Clone, PartialEq)]
pub struct GptEffectVector {
    components: DVector<f64>,
}

impl GptEffectVector {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Invalid("effect vector must not be empty".into()));
        }
        if !components.iter().all(|c| c.is_finite()) {
            return Err(Error::Invalid("effect vector has non-finite entry".into()));
        }
        Ok(Self {
            components: DVector::from_vec(components),
        })
    }

    /// The unit effect `(1, 0, …, 0)` in dimension `k`.
    pub fn unit(k: usize) -> Self {
        let mut c = DVector::zeros(k);
        c[0] = 1.0;
        Self { components: c }
    }

    pub fn components(&self) -> &DVector<f64> {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }
}

/// Probability of outcome 0 for effect `e` measured on state `s`: the inner
/// product `s·e`, returned without clamping.
pub fn probability(s: &GptStateVector, e: &GptEffectVector) -> Result<f64> {
    if s.dim() != e.dim() {
        return Err(Error::Invalid(format!(
            "state/effect length mismatch: {} vs {}",
            s.dim(),
            e.dim()
        )));
    }
    Ok(s.components().dot(e.components()))
}

/// The complement `u − e`; measuring it on any state gives one minus the
/// probability of `e`.
pub fn complement_effect(e: &GptEffectVector) -> GptEffectVector {
    let mut c = -e.components.clone();
    c[0] += 1.0;
    GptEffectVector { components: c }
}

/// An m×n matrix of outcome-0 probabilities together with the rank it is
/// certified against. First column is the unit column (identically 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix {
    entries: DMatrix<f64>,
    rank_bound: usize,
}

impl ProbabilityMatrix {
    /// Checks entries lie in `[-ENTRY_TOL, 1+ENTRY_TOL]`, the first column
    /// is 1, and the numerical rank does not exceed `rank_bound` (singular
    /// values past it below 1e-8 of the largest).
    pub fn new(entries: DMatrix<f64>, rank_bound: usize) -> Result<Self> {
        if rank_bound == 0 || rank_bound > entries.nrows().min(entries.ncols()) {
            return Err(Error::Invalid(format!(
                "rank bound {} out of range for {}x{} matrix",
                rank_bound,
                entries.nrows(),
                entries.ncols()
            )));
        }
        for (idx, v) in entries.iter().enumerate() {
            if !v.is_finite() || *v < -ENTRY_TOL || *v > 1.0 + ENTRY_TOL {
                let (i, j) = (idx % entries.nrows(), idx / entries.nrows());
                return Err(Error::Invalid(format!(
                    "entry ({i},{j}) = {v} outside [0,1]"
                )));
            }
        }
        for i in 0..entries.nrows() {
            if (entries[(i, 0)] - 1.0).abs() > ENTRY_TOL {
                return Err(Error::Invalid(format!(
                    "unit column entry ({i},0) = {} is not 1",
                    entries[(i, 0)]
                )));
            }
        }
        let sv = entries.clone().singular_values();
        let cutoff = 1e-8 * sv[0];
        if sv.iter().skip(rank_bound).any(|&s| s > cutoff) {
            return Err(Error::Invalid(format!(
                "numerical rank exceeds bound {rank_bound}"
            )));
        }
        let mut entries = entries;
        entries.column_mut(0).fill(1.0);
        Ok(Self {
            entries,
            rank_bound,
        })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn rank_bound(&self) -> usize {
        self.rank_bound
    }

    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }
}

/// Measured outcome-0 relative frequencies with per-cell uncertainties and
/// a mask of which cells were measured at all. Columns listed in
/// `exact_cols` (the unit column) are known exactly and carry no χ² weight;
/// unmeasured cells carry zero weight in every fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyMatrix {
    values: DMatrix<f64>,
    sigmas: DMatrix<f64>,
    mask: DMatrix<bool>,
    exact_cols: BTreeSet<usize>,
}

impl FrequencyMatrix {
    pub fn new(
        values: DMatrix<f64>,
        sigmas: DMatrix<f64>,
        mask: DMatrix<bool>,
        exact_cols: BTreeSet<usize>,
    ) -> Result<Self> {
        let (m, n) = values.shape();
        if sigmas.shape() != (m, n) || mask.shape() != (m, n) {
            return Err(Error::Invalid("frequency matrix shape mismatch".into()));
        }
        if let Some(&c) = exact_cols.iter().find(|&&c| c >= n) {
            return Err(Error::Invalid(format!("exact column {c} out of range")));
        }
        for j in 0..n {
            let exact = exact_cols.contains(&j);
            for i in 0..m {
                if !mask[(i, j)] {
                    continue;
                }
                let v = values[(i, j)];
                if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                    return Err(Error::Invalid(format!(
                        "measured frequency ({i},{j}) = {v} outside [0,1]"
                    )));
                }
                let s = sigmas[(i, j)];
                if !exact && (!s.is_finite() || s <= 0.0) {
                    return Err(Error::Invalid(format!(
                        "sigma ({i},{j}) = {s} must be positive for measured cells"
                    )));
                }
            }
        }
        Ok(Self {
            values,
            sigmas,
            mask,
            exact_cols,
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn sigmas(&self) -> &DMatrix<f64> {
        &self.sigmas
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn exact_cols(&self) -> &BTreeSet<usize> {
        &self.exact_cols
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// True when the cell was measured (or is exact) and participates in
    /// the fit constraints.
    pub fn is_measured(&self, i: usize, j: usize) -> bool {
        self.mask[(i, j)]
    }

    /// χ² weight 1/σ² for measured, inexact cells; zero otherwise.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        if self.mask[(i, j)] && !self.exact_cols.contains(&j) {
            let s = self.sigmas[(i, j)];
            1.0 / (s * s)
        } else {
            0.0
        }
    }

    /// Number of measured cells, exact ones included; model-selection dof
    /// bookkeeping subtracts parameter counts from this.
    pub fn measured_count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }
}

/// A factorized model: rows of `states` are GPT state vectors, columns of
/// `effects` are GPT effect vectors, and `states * effects` reproduces the
/// probability matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GptModel {
    pub states: DMatrix<f64>,
    pub effects: DMatrix<f64>,
}

impl GptModel {
    pub fn new(states: DMatrix<f64>, effects: DMatrix<f64>) -> Result<Self> {
        if states.ncols() != effects.nrows() {
            return Err(Error::Invalid(format!(
                "inner dimension mismatch: states {}x{}, effects {}x{}",
                states.nrows(),
                states.ncols(),
                effects.nrows(),
                effects.ncols()
            )));
        }
        Ok(Self { states, effects })
    }

    pub fn rank(&self) -> usize {
        self.states.ncols()
    }

    pub fn state(&self, i: usize) -> GptStateVector {
        GptStateVector {
            components: self.states.row(i).transpose(),
        }
    }

    pub fn effect(&self, j: usize) -> GptEffectVector {
        GptEffectVector {
            components: self.effects.column(j).into_owned(),
        }
    }

    pub fn probabilities(&self) -> DMatrix<f64> {
        &self.states * &self.effects
    }
}

/// Outcome of [`validate_model`]: which product entries escape [0,1] and
/// whether the canonical unit patterns hold.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    /// Cells (i, j, value) with `(S·E)[i,j]` outside `[-ENTRY_TOL, 1+ENTRY_TOL]`.
    pub violations: Vec<(usize, usize, f64)>,
    /// First column of S is all ones.
    pub states_normalized: bool,
    /// First column of E is the unit effect `(1, 0, …, 0)`.
    pub unit_effect_canonical: bool,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty() && self.states_normalized && self.unit_effect_canonical
    }
}

/// Report-only check of a factorized model: every probability in [0,1] up
/// to `ENTRY_TOL`, states carry a leading 1, first effect is the unit.
pub fn validate_model(model: &GptModel) -> ValidationReport {
    let d = model.probabilities();
    let mut violations = Vec::new();
    for i in 0..d.nrows() {
        for j in 0..d.ncols() {
            let v = d[(i, j)];
            if !v.is_finite() || v < -ENTRY_TOL || v > 1.0 + ENTRY_TOL {
                violations.push((i, j, v));
            }
        }
    }
    let states_normalized = model
        .states
        .column(0)
        .iter()
        .all(|&c| (c - 1.0).abs() <= ENTRY_TOL);
    let unit_effect_canonical = model.effects.ncols() > 0 && {
        let col = model.effects.column(0);
        (col[0] - 1.0).abs() <= ENTRY_TOL
            && col.iter().skip(1).all(|&c| c.abs() <= ENTRY_TOL)
    };
    ValidationReport {
        violations,
        states_normalized,
        unit_effect_canonical,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn state(v: &[f64]) -> GptStateVector {
        GptStateVector::new(v.to_vec()).unwrap()
    }

    fn effect(v: &[f64]) -> GptEffectVector {
        GptEffectVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn probability_examples() {
        let u = effect(&[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(probability(&state(&[1.0, 0.0, 0.0, 0.0]), &u).unwrap(), 1.0);
        // Z eigenstate on its own projector, paper Pauli convention.
        assert_eq!(
            probability(
                &state(&[1.0, 0.0, 0.0, 1.0]),
                &effect(&[0.5, 0.0, 0.0, 0.5])
            )
            .unwrap(),
            1.0
        );
        // Maximally mixed state on a projective effect.
        assert_eq!(
            probability(
                &state(&[1.0, 0.0, 0.0, 0.0]),
                &effect(&[0.5, 0.0, 0.0, 0.5])
            )
            .unwrap(),
            0.5
        );
    }

    #[test]
    fn probability_rejects_length_mismatch() {
        let s = state(&[1.0, 0.0, 0.0]);
        let e = effect(&[1.0, 0.0, 0.0, 0.0]);
        assert!(probability(&s, &e).is_err());
    }

    #[test]
    fn complement_examples() {
        let u = GptEffectVector::unit(4);
        let zero = complement_effect(&u);
        assert_eq!(zero.components().as_slice(), &[0.0, 0.0, 0.0, 0.0]);
        let e = effect(&[0.5, 0.0, 0.0, 0.5]);
        assert_eq!(
            complement_effect(&e).components().as_slice(),
            &[0.5, 0.0, 0.0, -0.5]
        );
    }

    #[test]
    fn state_vector_invariants() {
        assert!(GptStateVector::new(vec![]).is_err());
        assert!(GptStateVector::new(vec![1.0]).is_ok());
        assert!(GptStateVector::new(vec![0.9, 0.0]).is_err());
        assert!(GptStateVector::new(vec![1.0, f64::NAN]).is_err());
        assert_eq!(state(&[1.0, 0.25, -0.5]).bloch(), &[0.25, -0.5]);
    }

    #[test]
    fn probability_matrix_checks() {
        let d = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 1.0, 0.5]);
        let pm = ProbabilityMatrix::new(d, 1).unwrap();
        assert_eq!(pm.rank_bound(), 1);

        let bad_unit = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.9, 0.5]);
        assert!(ProbabilityMatrix::new(bad_unit, 2).is_err());

        let out_of_range = DMatrix::from_row_slice(2, 2, &[1.0, 1.2, 1.0, 0.5]);
        assert!(ProbabilityMatrix::new(out_of_range, 2).is_err());

        // Rank-2 matrix declared rank 1 must be rejected.
        let rank2 = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 1.0, 0.8]);
        assert!(ProbabilityMatrix::new(rank2, 1).is_err());
    }

    #[test]
    fn frequency_matrix_weights() {
        let values = DMatrix::from_row_slice(2, 3, &[1.0, 0.5, 0.25, 1.0, 0.5, 0.125]);
        let sigmas = DMatrix::from_row_slice(2, 3, &[0.0, 0.1, 0.2, 0.0, 0.1, 0.2]);
        let mut mask = DMatrix::from_element(2, 3, true);
        mask[(1, 2)] = false;
        let f = FrequencyMatrix::new(values, sigmas, mask, BTreeSet::from([0])).unwrap();
        assert_eq!(f.weight(0, 0), 0.0); // exact column
        assert_abs_diff_eq!(f.weight(0, 1), 100.0, epsilon = 1e-12);
        assert_eq!(f.weight(1, 2), 0.0); // unmeasured
        assert_eq!(f.measured_count(), 5);
    }

    #[test]
    fn validate_qubit_fixture() {
        // Octahedron states against +/- Pauli-axis effects.
        let states = DMatrix::from_row_slice(
            6,
            4,
            &[
                1.0, 1.0, 0.0, 0.0, //
                1.0, -1.0, 0.0, 0.0, //
                1.0, 0.0, 1.0, 0.0, //
                1.0, 0.0, -1.0, 0.0, //
                1.0, 0.0, 0.0, 1.0, //
                1.0, 0.0, 0.0, -1.0,
            ],
        );
        let effects = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 0.5, 0.5, 0.5, //
                0.0, 0.5, 0.0, 0.0, //
                0.0, 0.0, 0.5, 0.0, //
                0.0, 0.0, 0.0, 0.5,
            ],
        );
        let model = GptModel::new(states, effects).unwrap();
        let report = validate_model(&model);
        assert!(report.is_valid(), "violations: {:?}", report.violations);
    }

    #[test]
    fn validate_flags_bad_rows_and_cells() {
        let states = DMatrix::from_row_slice(1, 2, &[0.9, 0.0]);
        let effects = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let report = validate_model(&GptModel::new(states, effects).unwrap());
        assert!(!report.states_normalized);

        // Inner product 1.2 flagged at its cell.
        let states = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let effects = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.0, 0.6]);
        let report = validate_model(&GptModel::new(states, effects).unwrap());
        assert_eq!(report.violations.len(), 1);
        let (i, j, v) = report.violations[0];
        assert_eq!((i, j), (0, 1));
        assert_abs_diff_eq!(v, 1.2, epsilon = 1e-12);
    }

    proptest! {
        // probability is bilinear in the state argument.
        #[test]
        fn probability_affine_in_state(
            a in proptest::collection::vec(-1.0f64..1.0, 3),
            b in proptest::collection::vec(-1.0f64..1.0, 3),
            e in proptest::collection::vec(-1.0f64..1.0, 4),
            alpha in 0.0f64..1.0,
        ) {
            let s1 = GptStateVector::from_bloch(&a).unwrap();
            let s2 = GptStateVector::from_bloch(&b).unwrap();
            let mix: Vec<f64> = a.iter().zip(&b)
                .map(|(x, y)| alpha * x + (1.0 - alpha) * y)
                .collect();
            let sm = GptStateVector::from_bloch(&mix).unwrap();
            let ev = GptEffectVector::new(e).unwrap();
            let lhs = probability(&sm, &ev).unwrap();
            let rhs = alpha * probability(&s1, &ev).unwrap()
                + (1.0 - alpha) * probability(&s2, &ev).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        // complement_effect is an involution, exactly. Components are drawn
        // from a dyadic grid so that 1 - x is representable; on that set the
        // identity must hold bit-for-bit.
        #[test]
        fn complement_involution(q in proptest::collection::vec(-2048i32..2048, 2..8)) {
            let e: Vec<f64> = q.iter().map(|&i| i as f64 / 1024.0).collect();
            let ev = GptEffectVector::new(e.clone()).unwrap();
            let back = complement_effect(&complement_effect(&ev));
            prop_assert_eq!(back.components().as_slice(), ev.components().as_slice());
        }

        // A state paired with the unit effect always gives 1.
        #[test]
        fn unit_effect_normalization(bloch in proptest::collection::vec(-1.0f64..1.0, 1..7)) {
            let s = GptStateVector::from_bloch(&bloch).unwrap();
            let u = GptEffectVector::unit(s.dim());
            prop_assert_eq!(probability(&s, &u).unwrap(), 1.0);
        }
    }
}
