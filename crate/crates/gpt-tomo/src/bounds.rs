//! Closed-form depolarized-qubit fits and the physics bounds built on them.
//!
//! The inner fits find the largest scaled qubit state ball (radius `w1`)
//! and effect diamond (scale `w1p`) inside the realized spaces; the outer
//! fits find the smallest such bodies (`w2`, `w2p`) containing the
//! consistent spaces. The fitted scales translate into a two-sided
//! interval for the maximal parity-oblivious-multiplexing success
//! probability, an upper bound on the maximal CHSH value, and an upper
//! bound on the depolarization deviation from quantum theory.

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::polytope::{volume, EffectSpacePoly, StateSpacePoly};
use crate::{Error, Result};

/// Noncontextual bound on the POM success probability.
pub const C_NC: f64 = 0.75;
/// Local bound on the CHSH quantity.
pub const B_LOC: f64 = 0.75;

/// Quantum bound 1/2 + 1/(2√2) on both the POM success probability and
/// the CHSH quantity.
pub fn quantum_bound() -> f64 {
    0.5 + 1.0 / (2.0 * SQRT_2)
}

/// Fitted radii and the deviation bounds derived from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    /// Largest state ball inside the realized state space.
    pub w1: f64,
    /// Largest effect diamond scale inside the realized effect space.
    pub w1p: f64,
    /// Smallest state ball containing the consistent state space.
    pub w2: f64,
    /// Smallest effect diamond scale containing the consistent effect space.
    pub w2p: f64,
    /// Lower bound on the minimal POM success over candidate GPTs.
    pub lb_cmin: f64,
    /// Upper bound on the maximal POM success over candidate GPTs.
    pub ub_cmax: f64,
    /// Upper bound on the maximal CHSH value; equals `ub_cmax` because a
    /// CHSH experiment at value B implies a parity-oblivious experiment at
    /// success probability B.
    pub ub_bmax: f64,
    pub c_nc: f64,
    pub c_q: f64,
    pub b_loc: f64,
    /// Realized state-space volume over consistent state-space volume.
    pub volume_ratio: f64,
    /// Upper bound 1 − w1·w1p on the depolarization deviation.
    pub epsilon_bound: f64,
    /// Set when the realized state centroid sits far from the origin, in
    /// which case the origin-centered fits are loose.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub origin_offset_warning: Option<String>,
    /// Monte Carlo standard deviations, filled by the resampling stage.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std: Option<BoundsStd>,
}

/// Standard deviations of the non-constant report fields across Monte
/// Carlo resamples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsStd {
    pub w1: f64,
    pub w1p: f64,
    pub w2: f64,
    pub w2p: f64,
    pub lb_cmin: f64,
    pub ub_cmax: f64,
    pub ub_bmax: f64,
    pub volume_ratio: f64,
    pub epsilon_bound: f64,
}

/// Radius of the largest origin-centered ball inside the state polytope:
/// the minimal facet offset (normals are unit).
pub fn inner_ball_radius(s: &StateSpacePoly) -> Result<f64> {
    let mut best = f64::INFINITY;
    for h in &s.poly.halfspaces {
        if h.offset <= 0.0 {
            return Err(Error::Invalid(format!(
                "origin is not interior to the state space: facet {:?} has offset {}",
                h.normal, h.offset
            )));
        }
        best = best.min(h.offset);
    }
    if !best.is_finite() {
        return Err(Error::Invalid("state space has no facets".into()));
    }
    Ok(best)
}

/// Radius of the smallest origin-centered ball containing the state
/// polytope: the maximal vertex norm.
pub fn outer_ball_radius(s: &StateSpacePoly) -> Result<f64> {
    if s.poly.vertices.is_empty() {
        return Err(Error::Invalid("state space has no vertices".into()));
    }
    Ok(s.poly
        .vertices
        .iter()
        .map(|v| dot(v, v).sqrt())
        .fold(0.0, f64::max))
}

/// Largest scale w′ such that the qubit effect body, shrunk by w′ in the
/// Bloch directions, fits inside the effect polytope. The scaled body is
/// the hull of the zero effect, the unit effect, and the Bloch sphere of
/// radius w′/2 centered at e₀ = 1/2, so containment reduces per facet
/// (a·e ≤ b) to a₀/2 + (w′/2)|ā| ≤ b.
pub fn inner_effect_w(e: &EffectSpacePoly) -> Result<f64> {
    let dim = e.poly.dim;
    let zero = vec![0.0; dim];
    let mut unit = vec![0.0; dim];
    unit[0] = 1.0;
    for (name, point) in [("zero", &zero), ("unit", &unit)] {
        if !e.poly.contains(point, 1e-9) {
            return Err(Error::Invalid(format!(
                "the {name} effect lies outside the effect space, no inner qubit body exists"
            )));
        }
    }
    let mut best = f64::INFINITY;
    for h in &e.poly.halfspaces {
        let bloch = dot(&h.normal[1..], &h.normal[1..]).sqrt();
        if bloch <= 1e-12 {
            // Facets constraining only e₀ are satisfied by the hull of the
            // zero and unit effects, already checked above.
            continue;
        }
        // Both endpoint checks passed, so the sphere center (their
        // midpoint) satisfies every facet and the margin is nonnegative.
        let margin = (h.offset - h.normal[0] / 2.0).max(0.0);
        best = best.min(2.0 * margin / bloch);
    }
    if !best.is_finite() {
        return Err(Error::Invalid(
            "effect space has no facets with Bloch components".into(),
        ));
    }
    Ok(best)
}

/// Smallest scale w′ such that the effect polytope sits inside the scaled
/// qubit effect body, whose membership test is |ē| ≤ w′·min(e₀, 1−e₀).
pub fn outer_effect_w(e: &EffectSpacePoly) -> Result<f64> {
    if e.poly.vertices.is_empty() {
        return Err(Error::Invalid("effect space has no vertices".into()));
    }
    let mut best = 0.0f64;
    for v in &e.poly.vertices {
        let e0 = v[0];
        let bloch = dot(&v[1..], &v[1..]).sqrt();
        if !(-1e-9..=1.0 + 1e-9).contains(&e0) {
            return Err(Error::Invalid(format!(
                "effect vertex has e0 = {e0} outside [0, 1], no outer qubit body exists"
            )));
        }
        let cap = e0.min(1.0 - e0);
        if cap <= 1e-9 {
            if bloch > 1e-9 {
                return Err(Error::Invalid(format!(
                    "effect vertex at e0 = {e0} has Bloch norm {bloch}, no finite outer scale exists"
                )));
            }
            continue;
        }
        best = best.max(bloch / cap);
    }
    Ok(best)
}

/// Maximal POM success probability 1/2 + w·w′/(2√2) of the scaled qubit
/// pair; scales above 1 describe supernormalized outer approximations.
pub fn pom_success(w: f64, wp: f64) -> f64 {
    debug_assert!(w * wp >= 0.0);
    0.5 + w * wp / (2.0 * SQRT_2)
}

/// Fits all four radii and assembles the deviation bounds.
pub fn analyze_bounds(
    s_real: &StateSpacePoly,
    e_real: &EffectSpacePoly,
    s_cons: &StateSpacePoly,
    e_cons: &EffectSpacePoly,
) -> Result<BoundsReport> {
    use crate::polytope::SpaceRole;
    for (role, want, side) in [
        (s_real.role, SpaceRole::Realized, "state"),
        (s_cons.role, SpaceRole::Consistent, "state"),
    ] {
        if role != want {
            return Err(Error::Invalid(format!(
                "{side} polytope passed with role {role:?}, expected {want:?}"
            )));
        }
    }
    for (role, want) in [
        (e_real.role, SpaceRole::Realized),
        (e_cons.role, SpaceRole::Consistent),
    ] {
        if role != want {
            return Err(Error::Invalid(format!(
                "effect polytope passed with role {role:?}, expected {want:?}"
            )));
        }
    }
    let w1 = inner_ball_radius(s_real)?;
    let w1p = inner_effect_w(e_real)?;
    let w2 = outer_ball_radius(s_cons)?;
    let w2p = outer_effect_w(e_cons)?;
    let ub_cmax = pom_success(w2, w2p);
    let volume_ratio = volume(&s_real.poly)? / volume(&s_cons.poly)?;
    let centroid_norm = {
        let n = s_real.poly.vertices.len() as f64;
        let c: Vec<f64> = (0..s_real.poly.dim)
            .map(|j| s_real.poly.vertices.iter().map(|v| v[j]).sum::<f64>() / n)
            .collect();
        dot(&c, &c).sqrt()
    };
    let origin_offset_warning = (centroid_norm > 0.1).then(|| {
        format!(
            "realized state centroid sits {centroid_norm:.3} from the origin; \
             origin-centered qubit fits are loose"
        )
    });
    Ok(BoundsReport {
        w1,
        w1p,
        w2,
        w2p,
        lb_cmin: pom_success(w1, w1p),
        ub_cmax,
        ub_bmax: ub_cmax,
        c_nc: C_NC,
        c_q: quantum_bound(),
        b_loc: B_LOC,
        volume_ratio,
        epsilon_bound: 1.0 - w1 * w1p,
        origin_offset_warning,
        std: None,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
