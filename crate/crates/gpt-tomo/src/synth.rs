//! Synthetic ground truth: noisy-qubit GPT models, experiment designs, and
//! Poisson-sampled count data.
//!
//! States come from near-uniform spiral points on the Bloch sphere,
//! depolarized toward the maximally mixed state by `w`; effects are
//! projective directions depolarized by `w'`. Counts are drawn per cell as
//! two independent Poisson variates (transmitted/reflected arm).

use crate::core::{
    FrequencyMatrix, GptEffectVector, GptModel, GptStateVector, ProbabilityMatrix,
};
use crate::{Error, Result};
use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use std::collections::BTreeSet;
use std::f64::consts::PI;

/// Which cells of the m×n probability matrix get measured.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DesignMode {
    /// Every preparation is paired with every measurement.
    FullGrid,
    /// Only the first `f` rows and first `f+1` columns (unit column plus
    /// `f` fiducial measurements) are measured.
    Fiducial { f: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentDesign {
    m: usize,
    n: usize,
    mask: DMatrix<bool>,
    mode: DesignMode,
}

impl ExperimentDesign {
    pub fn full_grid(m: usize, n: usize) -> Result<Self> {
        if m < 1 || n < 2 {
            return Err(Error::Invalid(format!("design too small: m={m}, n={n}")));
        }
        Ok(Self {
            m,
            n,
            mask: DMatrix::from_element(m, n, true),
            mode: DesignMode::FullGrid,
        })
    }

    /// Fiducial design: rows 0..f are measured against everything, all rows
    /// are measured against the unit column and the first `f` measurement
    /// columns; the remaining (m−f)×(n−1−f) block is unfilled.
    pub fn fiducial(m: usize, n: usize, f: usize) -> Result<Self> {
        if f < 1 || f > m || f + 1 > n {
            return Err(Error::Invalid(format!(
                "fiducial size f={f} inconsistent with m={m}, n={n}"
            )));
        }
        let mask = DMatrix::from_fn(m, n, |i, j| i < f || j <= f);
        Ok(Self {
            m,
            n,
            mask,
            mode: DesignMode::Fiducial { f },
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn mode(&self) -> &DesignMode {
        &self.mode
    }

    pub fn measured_count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }
}

/// A synthetic model together with the noise knobs that produced it.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub model: GptModel,
    pub w: f64,
    pub w_prime: f64,
    pub counts_per_cell: f64,
}

impl GroundTruth {
    pub fn new(model: GptModel, w: f64, w_prime: f64, counts_per_cell: f64) -> Result<Self> {
        for (name, v) in [("w", w), ("w'", w_prime)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Invalid(format!("{name} = {v} outside [0,1]")));
            }
        }
        if !(counts_per_cell >= 1.0) {
            return Err(Error::Invalid(format!(
                "counts per cell {counts_per_cell} must be >= 1"
            )));
        }
        Ok(Self {
            model,
            w,
            w_prime,
            counts_per_cell,
        })
    }
}

/// `N` near-uniform points on the unit sphere along a generalized spiral:
/// latitudes step evenly in height, longitude advances by 3.6/√(N(1−h²)).
/// First point is the south pole, last the north pole.
pub fn spiral_points(n_points: usize) -> Result<Vec<[f64; 3]>> {
    if n_points < 2 {
        return Err(Error::Invalid(format!(
            "spiral needs at least 2 points, got {n_points}"
        )));
    }
    let n = n_points as f64;
    let mut points = Vec::with_capacity(n_points);
    let mut phi = 0.0f64;
    for k in 1..=n_points {
        if k == 1 {
            points.push([0.0, 0.0, -1.0]);
            continue;
        }
        if k == n_points {
            points.push([0.0, 0.0, 1.0]);
            continue;
        }
        let h = -1.0 + 2.0 * (k as f64 - 1.0) / (n - 1.0);
        phi = (phi + 3.6 / (n * (1.0 - h * h)).sqrt()) % (2.0 * PI);
        let sin_theta = (1.0 - h * h).sqrt();
        points.push([sin_theta * phi.cos(), sin_theta * phi.sin(), h]);
    }
    Ok(points)
}

/// The state `(1, n)` for a Bloch vector `n` (not necessarily unit).
pub fn bloch_state(n: [f64; 3]) -> GptStateVector {
    GptStateVector::from_bloch(&n).expect("finite bloch vector")
}

/// The projective effect `(1/2, n̂/2)` for a unit direction `n̂`. The Bloch
/// part carries the 1/2 so that an aligned pure state gives probability 1.
pub fn projective_effect(n_hat: [f64; 3]) -> Result<GptEffectVector> {
    let norm = (n_hat[0] * n_hat[0] + n_hat[1] * n_hat[1] + n_hat[2] * n_hat[2]).sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!(
            "projective direction has norm {norm}, expected 1"
        )));
    }
    GptEffectVector::new(vec![0.5, n_hat[0] / 2.0, n_hat[1] / 2.0, n_hat[2] / 2.0])
}

/// Shrinks the Bloch part of a state toward the maximally mixed state:
/// `(1, s…) ↦ (1, w·s…)`.
pub fn depolarize_state(s: &GptStateVector, w: f64) -> Result<GptStateVector> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::Invalid(format!("w = {w} outside [0,1]")));
    }
    let scaled: Vec<f64> = s.bloch().iter().map(|&c| w * c).collect();
    GptStateVector::from_bloch(&scaled)
}

/// Shrinks the Bloch part of an effect, preserving its trace component:
/// `(e₀, e…) ↦ (e₀, w'·e…)`. Fixes the unit effect for every `w'`.
pub fn depolarize_effect(e: &GptEffectVector, w_prime: f64) -> Result<GptEffectVector> {
    if !(0.0..=1.0).contains(&w_prime) {
        return Err(Error::Invalid(format!("w' = {w_prime} outside [0,1]")));
    }
    let c = e.components();
    let mut out = Vec::with_capacity(c.len());
    out.push(c[0]);
    out.extend(c.iter().skip(1).map(|&x| w_prime * x));
    GptEffectVector::new(out)
}

/// Assembles a depolarized-qubit model from explicit state and effect
/// directions: states `(1, w·ŝ)`, effects `(1/2, w'·n̂/2)` behind the unit
/// column. Directions must be unit vectors.
pub fn model_from_directions(
    state_dirs: &[[f64; 3]],
    effect_dirs: &[[f64; 3]],
    w: f64,
    w_prime: f64,
) -> Result<GptModel> {
    let m = state_dirs.len();
    let n = effect_dirs.len() + 1;
    let mut states = DMatrix::zeros(m, 4);
    for (i, dir) in state_dirs.iter().enumerate() {
        let s = depolarize_state(&bloch_state(*dir), w)?;
        states.row_mut(i).copy_from_slice(s.components().as_slice());
    }
    let mut effects = DMatrix::zeros(4, n);
    effects[(0, 0)] = 1.0;
    for (j, dir) in effect_dirs.iter().enumerate() {
        let e = depolarize_effect(&projective_effect(*dir)?, w_prime)?;
        effects
            .column_mut(j + 1)
            .copy_from_slice(e.components().as_slice());
    }
    GptModel::new(states, effects)
}

/// Ground truth for an m-preparation, n-measurement experiment: spiral
/// states depolarized by `w`, spiral effects depolarized by `w'`, and the
/// exact probability matrix they generate.
pub fn build_ground_truth(
    m: usize,
    n: usize,
    w: f64,
    w_prime: f64,
    counts_per_cell: f64,
    design: &ExperimentDesign,
) -> Result<(GroundTruth, ProbabilityMatrix)> {
    if design.m() != m || design.n() != n {
        return Err(Error::Invalid(format!(
            "design is {}x{} but ground truth is {m}x{n}",
            design.m(),
            design.n()
        )));
    }
    if m < 4 || n < 5 {
        return Err(Error::Invalid(format!(
            "need m >= 4 and n >= 5 for a rank-4 ground truth, got m={m}, n={n}"
        )));
    }
    let state_dirs = spiral_points(m)?;
    let effect_dirs = spiral_points(n - 1)?;
    let model = model_from_directions(&state_dirs, &effect_dirs, w, w_prime)?;
    let rank = if w * w_prime > 0.0 { 4 } else { 1 };
    let d = ProbabilityMatrix::new(model.probabilities(), rank)?;
    let truth = GroundTruth::new(model, w, w_prime, counts_per_cell)?;
    Ok((truth, d))
}

/// `N` evenly spaced directions on the equator of the Bloch sphere.
pub fn circle_points(n_points: usize) -> Result<Vec<[f64; 3]>> {
    if n_points < 2 {
        return Err(Error::Invalid(format!(
            "need at least 2 circle points, got {n_points}"
        )));
    }
    Ok((0..n_points)
        .map(|t| {
            let phi = 2.0 * std::f64::consts::PI * t as f64 / n_points as f64;
            [phi.cos(), phi.sin(), 0.0]
        })
        .collect())
}

/// Rebit ground truth: planar circle states and effects, giving a
/// probability matrix of rank 3 (constant plus two Bloch dimensions).
pub fn build_planar_ground_truth(
    m: usize,
    n: usize,
    w: f64,
    w_prime: f64,
    counts_per_cell: f64,
    design: &ExperimentDesign,
) -> Result<(GroundTruth, ProbabilityMatrix)> {
    if design.m() != m || design.n() != n {
        return Err(Error::Invalid(format!(
            "design is {}x{} but ground truth is {m}x{n}",
            design.m(),
            design.n()
        )));
    }
    if m < 3 || n < 4 {
        return Err(Error::Invalid(format!(
            "need m >= 3 and n >= 4 for a rank-3 ground truth, got m={m}, n={n}"
        )));
    }
    let state_dirs = circle_points(m)?;
    let effect_dirs = circle_points(n - 1)?;
    let model = model_from_directions(&state_dirs, &effect_dirs, w, w_prime)?;
    let rank = if w * w_prime > 0.0 { 3 } else { 1 };
    let d = ProbabilityMatrix::new(model.probabilities(), rank)?;
    let truth = GroundTruth::new(model, w, w_prime, counts_per_cell)?;
    Ok((truth, d))
}

/// The six Pauli eigenstates `(1, ±x̂)`, `(1, ±ŷ)`, `(1, ±ẑ)`.
pub fn fiducial_states() -> Vec<GptStateVector> {
    [
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
    ]
    .iter()
    .map(|&d| bloch_state(d))
    .collect()
}

/// Six projective effects along icosahedron vertices, one per antipodal
/// pair; all pairwise direction dot products have magnitude 1/√5.
pub fn fiducial_effects() -> Vec<GptEffectVector> {
    let g = (1.0 + 5.0f64.sqrt()) / 2.0;
    let r = (1.0 + g * g).sqrt();
    [
        [0.0, 1.0, g],
        [0.0, -1.0, g],
        [1.0, g, 0.0],
        [-1.0, g, 0.0],
        [g, 0.0, 1.0],
        [-g, 0.0, 1.0],
    ]
    .iter()
    .map(|&[x, y, z]| {
        projective_effect([x / r, y / r, z / r]).expect("icosahedron directions are unit")
    })
    .collect()
}

/// How raw counts per cell are simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountModel {
    /// Independent n₀ ~ Poisson(N·p), n₁ ~ Poisson(N·(1−p)).
    TwoPoisson,
    /// Fixed total: n₀ ~ Binomial(N, p), n₁ = N − n₀.
    Binomial,
}

/// Draws one cell's counts; deterministic given the rng state.
fn draw_counts<R: Rng>(rng: &mut R, p: f64, n_expected: f64, model: CountModel) -> (u64, u64) {
    match model {
        CountModel::TwoPoisson => {
            let n0 = poisson_draw(rng, n_expected * p);
            let n1 = poisson_draw(rng, n_expected * (1.0 - p));
            (n0, n1)
        }
        CountModel::Binomial => {
            let total = n_expected.round() as u64;
            let n0 = Binomial::new(total, p.clamp(0.0, 1.0))
                .expect("valid binomial")
                .sample(rng);
            (n0, total - n0)
        }
    }
}

fn poisson_draw<R: Rng>(rng: &mut R, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("positive lambda").sample(rng) as u64
}

/// Frequency and uncertainty from raw counts: f = n₀/(n₀+n₁) with
/// σ² = n₀n₁/(n₀+n₁)³, floored at 1/(n₀+n₁+2) when either count is zero so
/// measured cells never get infinite weight.
pub fn frequency_from_counts(n0: u64, n1: u64) -> Result<(f64, f64)> {
    let total = n0 + n1;
    if total == 0 {
        return Err(Error::Invalid("cell has zero total counts".into()));
    }
    let t = total as f64;
    let f = n0 as f64 / t;
    let sigma = if n0 == 0 || n1 == 0 {
        1.0 / (t + 2.0)
    } else {
        ((n0 as f64) * (n1 as f64) / (t * t * t)).sqrt()
    };
    Ok((f, sigma))
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Per-cell RNG derived from (seed, i, j); sampling order is therefore
/// schedule-independent.
fn cell_rng(seed: u64, i: usize, j: usize) -> ChaCha8Rng {
    let h = splitmix64(splitmix64(splitmix64(seed) ^ i as u64) ^ j as u64);
    ChaCha8Rng::seed_from_u64(h)
}

/// Simulates an experiment: every measured, non-unit cell of `d` gets
/// counts drawn around `n_expected`, converted to a frequency and a σ. The
/// unit column is exact (f = 1, σ = 0). A cell drawing zero total counts is
/// redrawn; a cell that stays empty is an error.
pub fn sample_frequency_matrix(
    d: &ProbabilityMatrix,
    design: &ExperimentDesign,
    n_expected: f64,
    seed: u64,
) -> Result<FrequencyMatrix> {
    sample_frequency_matrix_with(d, design, n_expected, seed, CountModel::TwoPoisson)
}

pub fn sample_frequency_matrix_with(
    d: &ProbabilityMatrix,
    design: &ExperimentDesign,
    n_expected: f64,
    seed: u64,
    model: CountModel,
) -> Result<FrequencyMatrix> {
    let cells = sample_counts(d, design, n_expected, seed, model)?;
    let (m, n) = (d.nrows(), d.ncols());
    let mut values = DMatrix::zeros(m, n);
    let mut sigmas = DMatrix::zeros(m, n);
    for i in 0..m {
        values[(i, 0)] = 1.0;
    }
    for &(i, j, n0, n1) in &cells {
        let (f, sigma) = frequency_from_counts(n0, n1)?;
        values[(i, j)] = f;
        sigmas[(i, j)] = sigma;
    }
    FrequencyMatrix::new(values, sigmas, design.mask().clone(), BTreeSet::from([0]))
}

/// Raw counts `(i, j, n0, n1)` for every measured, non-unit cell. The
/// per-cell RNG makes the draw independent of iteration order; a cell
/// drawing zero total counts is redrawn, one that stays empty errors.
pub fn sample_counts(
    d: &ProbabilityMatrix,
    design: &ExperimentDesign,
    n_expected: f64,
    seed: u64,
    model: CountModel,
) -> Result<Vec<(usize, usize, u64, u64)>> {
    if !(n_expected >= 1.0) {
        return Err(Error::Invalid(format!(
            "expected counts {n_expected} must be >= 1"
        )));
    }
    let (m, n) = (d.nrows(), d.ncols());
    if design.m() != m || design.n() != n {
        return Err(Error::Invalid(format!(
            "design is {}x{} but probability matrix is {m}x{n}",
            design.m(),
            design.n()
        )));
    }
    let mut cells = Vec::with_capacity(design.measured_count());
    for j in 1..n {
        for i in 0..m {
            if !design.mask()[(i, j)] {
                continue;
            }
            let p = d.entries()[(i, j)];
            let mut rng = cell_rng(seed, i, j);
            let mut drawn = None;
            for _ in 0..100 {
                let (n0, n1) = draw_counts(&mut rng, p, n_expected, model);
                if n0 + n1 > 0 {
                    drawn = Some((n0, n1));
                    break;
                }
            }
            let (n0, n1) = drawn.ok_or_else(|| Error::Numerical {
                stage: "sample",
                detail: format!("cell ({i},{j}) drew zero counts in 100 attempts"),
            })?;
            cells.push((i, j, n0, n1));
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::probability;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn angular_separation(a: [f64; 3], b: [f64; 3]) -> f64 {
        let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        dot.clamp(-1.0, 1.0).acos()
    }

    #[test]
    fn spiral_endpoints_are_poles() {
        let pts = spiral_points(2).unwrap();
        assert_eq!(pts, vec![[0.0, 0.0, -1.0], [0.0, 0.0, 1.0]]);
        let pts = spiral_points(57).unwrap();
        assert_eq!(pts[0], [0.0, 0.0, -1.0]);
        assert_eq!(pts[56], [0.0, 0.0, 1.0]);
        assert!(spiral_points(1).is_err());
    }

    #[test]
    fn spiral_points_are_unit_and_spread() {
        let n = 100;
        let pts = spiral_points(n).unwrap();
        for p in &pts {
            let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-12);
        }
        let mut min_sep = f64::INFINITY;
        let mut min_sep_interior = f64::INFINITY;
        for i in 0..pts.len() {
            for j in (i + 1)..pts.len() {
                let sep = angular_separation(pts[i], pts[j]);
                min_sep = min_sep.min(sep);
                if i != 0 && j != pts.len() - 1 {
                    min_sep_interior = min_sep_interior.min(sep);
                }
            }
        }
        // The tightest gap is pole to first ring, at arccos(1 - 2/(N-1)).
        let pole_gap = (4.0 / (n as f64 - 1.0)).sqrt();
        assert!(
            min_sep >= 0.95 * pole_gap,
            "min separation {min_sep} below 0.95 x pole gap {pole_gap}"
        );
        // Away from the poles the packing is near-uniform.
        let uniform_spacing = (4.0 * PI / n as f64).sqrt();
        assert!(
            min_sep_interior >= 0.8 * uniform_spacing,
            "interior separation {min_sep_interior} below 0.8 x {uniform_spacing}"
        );
    }

    /// Spherical-cap discrepancy by Monte Carlo: max over random caps of
    /// |empirical fraction − cap area fraction|.
    fn cap_discrepancy(pts: &[[f64; 3]], n_caps: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for _ in 0..n_caps {
            let c = loop {
                let v = [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ];
                let n2: f64 = v.iter().map(|x| x * x).sum();
                if n2 > 1e-6 && n2 <= 1.0 {
                    let n = n2.sqrt();
                    break [v[0] / n, v[1] / n, v[2] / n];
                }
            };
            let t: f64 = rng.gen_range(-1.0..1.0);
            let inside = pts
                .iter()
                .filter(|p| p[0] * c[0] + p[1] * c[1] + p[2] * c[2] >= t)
                .count();
            let expected = (1.0 - t) / 2.0;
            worst = worst.max((inside as f64 / pts.len() as f64 - expected).abs());
        }
        worst
    }

    #[test]
    fn spiral_discrepancy_improves_with_density() {
        let d100 = cap_discrepancy(&spiral_points(100).unwrap(), 2000, 11);
        let d1000 = cap_discrepancy(&spiral_points(1000).unwrap(), 2000, 11);
        assert!(
            d1000 < 2.0 * d100,
            "discrepancy did not improve: {d1000} vs {d100}"
        );
    }

    #[test]
    fn projective_effect_examples() {
        let e = projective_effect([0.0, 0.0, 1.0]).unwrap();
        assert_eq!(e.components().as_slice(), &[0.5, 0.0, 0.0, 0.5]);
        assert!(projective_effect([0.0, 0.0, 0.9]).is_err());

        let n_hat = [0.6, 0.0, 0.8];
        let e = projective_effect(n_hat).unwrap();
        let aligned = bloch_state(n_hat);
        let opposite = bloch_state([-0.6, 0.0, -0.8]);
        assert_abs_diff_eq!(probability(&aligned, &e).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(probability(&opposite, &e).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn depolarize_examples() {
        let s = bloch_state([0.0, 0.0, 1.0]);
        assert_eq!(depolarize_state(&s, 1.0).unwrap(), s);
        assert_eq!(
            depolarize_state(&s, 0.0).unwrap().components().as_slice(),
            &[1.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(
            depolarize_state(&s, 0.5).unwrap().components().as_slice(),
            &[1.0, 0.0, 0.0, 0.5]
        );
        assert!(depolarize_state(&s, 1.5).is_err());

        let u = GptEffectVector::unit(4);
        assert_eq!(depolarize_effect(&u, 0.3).unwrap(), u);
        let e = projective_effect([0.0, 0.0, 1.0]).unwrap();
        assert_eq!(
            depolarize_effect(&e, 0.9).unwrap().components().as_slice(),
            &[0.5, 0.0, 0.0, 0.45]
        );
    }

    #[test]
    fn octahedron_fixture_hits_exact_probabilities() {
        let axes = [
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
        ];
        let model = model_from_directions(&axes, &axes, 1.0, 1.0).unwrap();
        let d = model.probabilities();
        for i in 0..d.nrows() {
            for j in 0..d.ncols() {
                let v = d[(i, j)];
                assert!(
                    v == 0.0 || v == 0.5 || v == 1.0,
                    "unexpected probability {v} at ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn ground_truth_rank_and_range() {
        let design = ExperimentDesign::full_grid(100, 101).unwrap();
        let (truth, d) = build_ground_truth(100, 101, 0.98, 0.98, 100.0, &design).unwrap();
        assert_eq!(truth.model.rank(), 4);
        let sv = d.entries().clone().singular_values();
        assert!(sv[3] > 1e-8 * sv[0], "rank collapsed below 4");
        assert!(sv[4] < 1e-8 * sv[0], "rank above 4");
        for v in d.entries().iter() {
            assert!((0.0..=1.0).contains(v));
        }

        // Fully depolarized: every non-unit column is flat 1/2.
        let design = ExperimentDesign::full_grid(10, 11).unwrap();
        let (_, d) = build_ground_truth(10, 11, 0.0, 0.0, 100.0, &design).unwrap();
        for j in 1..11 {
            for i in 0..10 {
                assert_eq!(d.entries()[(i, j)], 0.5);
            }
        }
    }

    #[test]
    fn fiducial_sets_match_convention() {
        let states = fiducial_states();
        assert_eq!(states.len(), 6);
        let has = |target: &[f64; 4]| {
            states
                .iter()
                .any(|s| s.components().as_slice() == target.as_slice())
        };
        assert!(has(&[1.0, 0.0, 0.0, 1.0]));
        assert!(has(&[1.0, 0.0, 0.0, -1.0]));

        let effects = fiducial_effects();
        assert_eq!(effects.len(), 6);
        let inv_sqrt5 = 1.0 / 5.0f64.sqrt();
        for (a, e) in effects.iter().enumerate() {
            let ea = &e.components().as_slice()[1..];
            let norm = (ea[0] * ea[0] + ea[1] * ea[1] + ea[2] * ea[2]).sqrt();
            assert_abs_diff_eq!(norm, 0.5, epsilon = 1e-12);
            for eb in effects.iter().skip(a + 1) {
                let eb = &eb.components().as_slice()[1..];
                let dot = 4.0 * (ea[0] * eb[0] + ea[1] * eb[1] + ea[2] * eb[2]);
                assert_abs_diff_eq!(dot.abs(), inv_sqrt5, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn fiducial_design_bookkeeping() {
        let design = ExperimentDesign::fiducial(200, 201, 6).unwrap();
        // f(m+n−f) + (n−1−f) configurations when m = n−1.
        let expected = 6 * (200 + 201 - 6) + (201 - 1 - 6);
        assert_eq!(design.measured_count(), expected);
        assert!(design.mask()[(5, 200)]);
        assert!(design.mask()[(199, 6)]);
        assert!(!design.mask()[(6, 7)]);

        let full = ExperimentDesign::full_grid(50, 51).unwrap();
        assert_eq!(full.measured_count(), 50 * 51);
        assert!(ExperimentDesign::fiducial(5, 201, 6).is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_exact_for_certain_cells() {
        let axes = [[0.0, 0.0, 1.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0], [
            0.0, 1.0, 0.0,
        ]];
        let model = model_from_directions(&axes, &axes[..4], 1.0, 1.0).unwrap();
        let d = ProbabilityMatrix::new(model.probabilities(), 4).unwrap();
        let design = ExperimentDesign::full_grid(4, 5).unwrap();
        let f1 = sample_frequency_matrix(&d, &design, 500.0, 42).unwrap();
        let f2 = sample_frequency_matrix(&d, &design, 500.0, 42).unwrap();
        assert_eq!(f1, f2);

        // p = 1 cells give f = 1 (the complementary Poisson rate is zero).
        assert_eq!(d.entries()[(0, 1)], 1.0);
        assert_eq!(f1.values()[(0, 1)], 1.0);
        // Unit column exact.
        assert_eq!(f1.values()[(2, 0)], 1.0);
        assert_eq!(f1.sigmas()[(2, 0)], 0.0);
        assert_eq!(f1.exact_cols().iter().copied().collect::<Vec<_>>(), [0]);

        let f3 = sample_frequency_matrix(&d, &design, 500.0, 43).unwrap();
        assert_ne!(f1, f3);
    }

    #[test]
    fn sample_mean_tracks_probability() {
        // 1000 cells at p = 1/2, N = 20000.
        let entries =
            DMatrix::from_fn(1000, 2, |_, j| if j == 0 { 1.0 } else { 0.5 });
        let d = ProbabilityMatrix::new(entries, 1).unwrap();
        let design = ExperimentDesign::full_grid(1000, 2).unwrap();
        let f = sample_frequency_matrix(&d, &design, 20000.0, 7).unwrap();
        let mean = f.values().column(1).sum() / 1000.0;
        let sigma = 0.5 / (20000.0f64 * 1000.0).sqrt();
        assert!(
            (mean - 0.5).abs() < 3.0 * sigma,
            "mean {mean} drifted from 0.5"
        );
    }

    #[test]
    fn frequency_estimator_is_nearly_unbiased() {
        // 10^4 draws at N = 10^5: |mean − p| < 5/sqrt(draws·N).
        let p = 0.3;
        let n = 1.0e5;
        let draws = 10_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut sum = 0.0;
        for _ in 0..draws {
            let (n0, n1) = draw_counts(&mut rng, p, n, CountModel::TwoPoisson);
            let (f, _) = frequency_from_counts(n0, n1).unwrap();
            sum += f;
        }
        let mean = sum / draws as f64;
        let bound = 5.0 / (draws as f64 * n).sqrt();
        assert!((mean - p).abs() < bound, "bias {} > {bound}", mean - p);
    }

    #[test]
    fn sigma_floor_applies_at_extremes() {
        let (f, s) = frequency_from_counts(100, 0).unwrap();
        assert_eq!(f, 1.0);
        assert_abs_diff_eq!(s, 1.0 / 102.0, epsilon = 1e-15);
        let (f, s) = frequency_from_counts(0, 50).unwrap();
        assert_eq!(f, 0.0);
        assert_abs_diff_eq!(s, 1.0 / 52.0, epsilon = 1e-15);
        assert!(frequency_from_counts(0, 0).is_err());

        let (f, s) = frequency_from_counts(75, 25).unwrap();
        assert_abs_diff_eq!(f, 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(s, (75.0 * 25.0f64 / 100.0_f64.powi(3)).sqrt(), epsilon = 1e-15);
    }

    proptest! {
        // Composing depolarizations multiplies the strengths.
        #[test]
        fn depolarize_composes(
            bloch in proptest::collection::vec(-1.0f64..1.0, 3),
            w1 in 0.0f64..1.0,
            w2 in 0.0f64..1.0,
        ) {
            let s = GptStateVector::from_bloch(&bloch).unwrap();
            let twice = depolarize_state(&depolarize_state(&s, w1).unwrap(), w2).unwrap();
            let once = depolarize_state(&s, w1 * w2).unwrap();
            for (a, b) in twice.components().iter().zip(once.components().iter()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        // Moving the depolarization from the state to the effect leaves
        // every pairing probability unchanged.
        #[test]
        fn depolarization_transfers_between_state_and_effect(
            sb in proptest::collection::vec(-1.0f64..1.0, 3),
            eb in proptest::collection::vec(-0.5f64..0.5, 3),
            e0 in 0.0f64..1.0,
            w in 0.0f64..1.0,
        ) {
            let s = GptStateVector::from_bloch(&sb).unwrap();
            let e = GptEffectVector::new(vec![e0, eb[0], eb[1], eb[2]]).unwrap();
            let lhs = probability(&depolarize_state(&s, w).unwrap(), &e).unwrap();
            let rhs = probability(&s, &depolarize_effect(&e, w).unwrap()).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
