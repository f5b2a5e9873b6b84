//! Convex-geometry kernel: representation conversion, dual spaces, volumes.
//!
//! Both conversions run the same incremental halfspace-clipping loop (a
//! double description pass over the homogenized constraints, started from a
//! large bounding box). Facet enumeration is clipping applied to the polar
//! polytope about the vertex centroid. Dual spaces follow the GPT rules: a
//! consistent state obeys `0 ≤ s·e ≤ 1` against every realized effect
//! vertex, and a consistent effect obeys the mirror constraints against
//! every realized state vertex.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::core::GptModel;
use crate::decompose::jacobi_svd;
use crate::{Error, Result};

/// Vertices closer than this (Euclidean) are merged into one. Sits well
/// above the worst interpolation error (~1e-7, from edges with one endpoint
/// at box scale) so duplicate copies of one geometric vertex always merge
/// instead of surviving with split active sets, and well below any genuine
/// vertex separation this pipeline produces.
const DEDUP_TOL: f64 = 1e-6;
/// Per-step classification tolerance for the clipping loop. Sits above
/// the residue a polished vertex can carry against a plane of its own
/// near-degenerate cluster (a few 1e-9 when facet offsets come from an
/// earlier polar pass) so such vertices classify as on-plane instead of
/// flapping between inside and outside, and below the distances at which
/// unrelated intermediate vertices coincidentally graze later planes
/// (above 3e-8 for the finest meshes this pipeline sees).
const STEP_TOL: f64 = 1e-8;
/// Half-width of the starting box; vertices still touching it after all
/// cuts mean the intersection is unbounded.
const BOX_RADIUS: f64 = 1e6;

/// Closed halfspace `normal · x ≤ offset` with a unit normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl Halfspace {
    /// Normalizes `a · x ≤ b` to unit `|a|`. Zero normals are rejected.
    pub fn new(a: Vec<f64>, b: f64) -> Result<Self> {
        let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() || !b.is_finite() {
            return Err(Error::Invalid("halfspace has non-finite entries".into()));
        }
        if norm <= 1e-12 {
            return Err(Error::Invalid("halfspace normal is numerically zero".into()));
        }
        Ok(Self {
            normal: a.into_iter().map(|x| x / norm).collect(),
            offset: b / norm,
        })
    }

    fn eval(&self, x: &[f64]) -> f64 {
        dot(&self.normal, x) - self.offset
    }
}

/// Bounded full-dimensional polytope carrying both representations. The
/// vertex list is minimal (extreme points only) and the halfspace list is
/// minimal (facets only); constructors establish this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polytope {
    pub dim: usize,
    pub vertices: Vec<Vec<f64>>,
    pub halfspaces: Vec<Halfspace>,
}

impl Polytope {
    /// Hull of a point set: facets via the polar about the vertex centroid,
    /// then the minimal vertex list by re-enumerating those facets.
    pub fn from_vertices(points: &[Vec<f64>]) -> Result<Self> {
        let halfspaces = facet_enumeration(points)?;
        let vertices = vertex_enumeration(&halfspaces)?;
        let dim = points[0].len();
        Ok(Self { dim, vertices, halfspaces })
    }

    /// Intersection of halfspaces: vertices via clipping, then the facets
    /// as the subset of inputs supporting a (dim−1)-dimensional face.
    pub fn from_halfspaces(halfspaces: &[Halfspace]) -> Result<Self> {
        let dim = check_halfspace_dims(halfspaces)?;
        let vertices = vertex_enumeration(halfspaces)?;
        let minimal = supporting_facets(halfspaces, &vertices, dim);
        Ok(Self { dim, vertices, halfspaces: minimal })
    }

    /// Membership test with additive slack on every facet.
    pub fn contains(&self, x: &[f64], slack: f64) -> bool {
        self.halfspaces.iter().all(|h| h.eval(x) <= slack)
    }

    /// Largest value of `dir · x` over the polytope.
    pub fn support(&self, dir: &[f64]) -> f64 {
        self.vertices
            .iter()
            .map(|v| dot(dir, v))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Which side of the tomography a space belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpaceRole {
    Realized,
    Consistent,
}

/// State polytope in the projected coordinates (leading 1 dropped).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpacePoly {
    pub poly: Polytope,
    pub role: SpaceRole,
    /// Whether the projected origin (the maximally mixed direction) lies
    /// inside; false signals a model without a mixed-state analogue.
    pub contains_origin: bool,
}

impl StateSpacePoly {
    /// Hull of the model's state rows with the leading component dropped.
    pub fn realized(model: &GptModel) -> Result<Self> {
        let k = model.rank();
        if k < 2 {
            return Err(Error::Invalid(
                "state polytope needs rank at least 2".into(),
            ));
        }
        let points: Vec<Vec<f64>> = (0..model.states.nrows())
            .map(|i| (1..k).map(|c| model.states[(i, c)]).collect())
            .collect();
        Self::with_role(points, SpaceRole::Realized)
    }

    fn with_role(points: Vec<Vec<f64>>, role: SpaceRole) -> Result<Self> {
        let poly = Polytope::from_vertices(&points)?;
        let origin = vec![0.0; poly.dim];
        let contains_origin = poly.contains(&origin, STEP_TOL);
        Ok(Self { poly, role, contains_origin })
    }
}

/// Effect polytope in the full k-dimensional coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSpacePoly {
    pub poly: Polytope,
    pub role: SpaceRole,
}

impl EffectSpacePoly {
    /// Hull of the model's effect columns. Built from an extended
    /// decomposition this contains the zero effect and the unit as
    /// vertices; a canonical model need not.
    pub fn realized(model: &GptModel) -> Result<Self> {
        let points: Vec<Vec<f64>> = (0..model.effects.ncols())
            .map(|j| model.effects.column(j).iter().copied().collect())
            .collect();
        let poly = Polytope::from_vertices(&points)?;
        Ok(Self { poly, role: SpaceRole::Realized })
    }
}

/// Consistent state space: all `s = (1, s̄)` with `0 ≤ s·e ≤ 1` for every
/// realized effect vertex, projected to the trailing coordinates.
pub fn dual_states(effects: &EffectSpacePoly) -> Result<StateSpacePoly> {
    let k = effects.poly.dim;
    if k < 2 {
        return Err(Error::Invalid("effect polytope dimension must be ≥ 2".into()));
    }
    if effects.poly.vertices.is_empty() {
        return Err(Error::Invalid("effect polytope has no vertices".into()));
    }
    let mut halfspaces = Vec::new();
    for e in &effects.poly.vertices {
        let e0 = e[0];
        let ebar = &e[1..];
        let len = ebar.iter().map(|x| x * x).sum::<f64>().sqrt();
        if len <= 1e-12 {
            // Unit and zero effects constrain nothing; anything else with a
            // vanishing Bloch part has an infeasible constant constraint.
            if !(-STEP_TOL..=1.0 + STEP_TOL).contains(&e0) {
                return Err(Error::Invalid(format!(
                    "effect vertex with constant value {e0} admits no states"
                )));
            }
            continue;
        }
        halfspaces.push(Halfspace::new(ebar.to_vec(), 1.0 - e0)?);
        halfspaces.push(Halfspace::new(ebar.iter().map(|x| -x).collect(), e0)?);
    }
    if halfspaces.is_empty() {
        return Err(Error::Invalid(
            "no effect vertex constrains the state space (unbounded dual)".into(),
        ));
    }
    let vertices = vertex_enumeration(&halfspaces).map_err(name_unbounded_dual)?;
    let minimal = supporting_facets(&halfspaces, &vertices, k - 1);
    let poly = Polytope { dim: k - 1, vertices, halfspaces: minimal };
    let origin = vec![0.0; poly.dim];
    let contains_origin = poly.contains(&origin, STEP_TOL);
    Ok(StateSpacePoly { poly, role: SpaceRole::Consistent, contains_origin })
}

/// Consistent effect space: all `e` with `0 ≤ s·e ≤ 1` for every realized
/// state vertex `s = (1, s̄)`; equivalently the dual of the subnormalized
/// state cone hull(S ∪ {0}).
pub fn dual_effects(states: &StateSpacePoly) -> Result<EffectSpacePoly> {
    if states.poly.vertices.is_empty() {
        return Err(Error::Invalid("state polytope has no vertices".into()));
    }
    let mut halfspaces = Vec::new();
    for sbar in &states.poly.vertices {
        let mut lifted = Vec::with_capacity(sbar.len() + 1);
        lifted.push(1.0);
        lifted.extend_from_slice(sbar);
        halfspaces.push(Halfspace::new(lifted.clone(), 1.0)?);
        halfspaces.push(Halfspace::new(lifted.into_iter().map(|x| -x).collect(), 0.0)?);
    }
    let vertices = vertex_enumeration(&halfspaces).map_err(name_unbounded_dual)?;
    let dim = states.poly.dim + 1;
    let minimal = supporting_facets(&halfspaces, &vertices, dim);
    let poly = Polytope { dim, vertices, halfspaces: minimal };
    Ok(EffectSpacePoly { poly, role: SpaceRole::Consistent })
}

fn name_unbounded_dual(e: Error) -> Error {
    match e {
        Error::Numerical { stage, detail } => Error::Invalid(format!(
            "dual is unbounded (input space too degenerate): {detail} [{stage}]"
        )),
        other => other,
    }
}

/// Minimal facet list of the hull of `points`: vertices of the polar
/// polytope about the vertex centroid, mapped back to primal halfspaces.
pub fn facet_enumeration(points: &[Vec<f64>]) -> Result<Vec<Halfspace>> {
    if points.is_empty() {
        return Err(Error::Invalid("facet enumeration needs at least one point".into()));
    }
    let dim = points[0].len();
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(Error::Invalid("points must share a nonzero dimension".into()));
    }
    if points.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Invalid("points contain non-finite entries".into()));
    }
    let centroid: Vec<f64> = (0..dim)
        .map(|c| points.iter().map(|p| p[c]).sum::<f64>() / points.len() as f64)
        .collect();
    check_affine_rank(points, &centroid, dim)?;
    // Polar about the centroid: each input point becomes a constraint.
    let polar: Vec<Halfspace> = points
        .iter()
        .map(|p| {
            let shifted: Vec<f64> = p.iter().zip(&centroid).map(|(a, b)| a - b).collect();
            Halfspace::new(shifted, 1.0)
        })
        .collect::<Result<_>>()?;
    let polar_vertices = vertex_enumeration(&polar)?;
    let mut facets = Vec::with_capacity(polar_vertices.len());
    for y in polar_vertices {
        let offset = 1.0 + dot(&y, &centroid);
        facets.push(Halfspace::new(y, offset)?);
    }
    Ok(facets)
}

/// Vertices of a bounded intersection of halfspaces, via incremental
/// clipping from a bounding box. Unbounded or empty inputs error.
pub fn vertex_enumeration(halfspaces: &[Halfspace]) -> Result<Vec<Vec<f64>>> {
    let dim = check_halfspace_dims(halfspaces)?;
    let clip = clip_polytope(dim, halfspaces)?;
    let box_words = bitset_words(2 * dim + halfspaces.len());
    let mut box_mask = vec![0u64; box_words];
    for slot in 0..2 * dim {
        box_mask[slot / 64] |= 1 << (slot % 64);
    }
    for v in &clip {
        if v.active.iter().zip(&box_mask).any(|(a, m)| a & m != 0) {
            let len = v.x.iter().map(|x| x * x).sum::<f64>().sqrt();
            let dir: Vec<f64> = v.x.iter().map(|x| x / len.max(1.0)).collect();
            return Err(Error::Numerical {
                stage: "polytope",
                detail: format!(
                    "intersection is unbounded toward approximately {:?}",
                    dir.iter().map(|x| (x * 1e3).round() / 1e3).collect::<Vec<_>>()
                ),
            });
        }
    }
    let vertices: Vec<Vec<f64>> = clip.into_iter().map(|v| v.x).collect();
    let centroid: Vec<f64> = (0..dim)
        .map(|c| vertices.iter().map(|p| p[c]).sum::<f64>() / vertices.len() as f64)
        .collect();
    check_affine_rank(&vertices, &centroid, dim)?;
    Ok(vertices)
}

/// Euclidean volume by recursive facet-cone triangulation from the vertex
/// centroid; one-dimensional polytopes are plain intervals.
pub fn volume(p: &Polytope) -> Result<f64> {
    if p.vertices.is_empty() || p.halfspaces.is_empty() {
        return Err(Error::Invalid("volume needs both representations populated".into()));
    }
    if p.dim == 1 {
        let lo = p.vertices.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min);
        let hi = p.vertices.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max);
        return Ok(hi - lo);
    }
    let centroid: Vec<f64> = (0..p.dim)
        .map(|c| p.vertices.iter().map(|v| v[c]).sum::<f64>() / p.vertices.len() as f64)
        .collect();
    let scale = p
        .vertices
        .iter()
        .flatten()
        .fold(1.0f64, |acc, x| acc.max(x.abs()));
    let mut total = 0.0;
    for h in &p.halfspaces {
        // Incidence band above DEDUP_TOL: a merged vertex can sit that far
        // off a facet it belongs to.
        let on: Vec<Vec<f64>> = p
            .vertices
            .iter()
            .filter(|v| h.eval(v).abs() <= DEDUP_TOL * scale * 10.0)
            .cloned()
            .collect();
        if on.len() < p.dim {
            return Err(Error::Numerical {
                stage: "polytope",
                detail: format!("facet with only {} incident vertices", on.len()),
            });
        }
        let basis = hyperplane_basis(&h.normal);
        let anchor = &on[0];
        let projected: Vec<Vec<f64>> = on
            .iter()
            .map(|v| {
                let shifted: Vec<f64> = v.iter().zip(anchor).map(|(a, b)| a - b).collect();
                basis.iter().map(|b| dot(b, &shifted)).collect()
            })
            .collect();
        let facet = Polytope::from_vertices(&projected)?;
        let height = h.offset - dot(&h.normal, &centroid);
        total += height * volume(&facet)? / p.dim as f64;
    }
    Ok(total)
}

/// Orthonormal basis of the hyperplane orthogonal to the unit vector `n`.
fn hyperplane_basis(n: &[f64]) -> Vec<Vec<f64>> {
    let dim = n.len();
    let mut basis: Vec<Vec<f64>> = vec![n.to_vec()];
    // Seed with the standard basis, skipping the axis most parallel to n.
    let skip = (0..dim)
        .max_by(|&a, &b| n[a].abs().total_cmp(&n[b].abs()))
        .unwrap();
    for i in (0..dim).filter(|&i| i != skip) {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        for b in &basis {
            let c = dot(b, &v);
            for (vj, bj) in v.iter_mut().zip(b) {
                *vj -= c * bj;
            }
        }
        let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut v {
            *x /= len;
        }
        basis.push(v);
    }
    basis.remove(0);
    basis
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_halfspace_dims(halfspaces: &[Halfspace]) -> Result<usize> {
    let dim = halfspaces
        .first()
        .map(|h| h.normal.len())
        .ok_or_else(|| Error::Invalid("vertex enumeration needs halfspaces".into()))?;
    if dim == 0 || dim > 6 {
        return Err(Error::Invalid(format!(
            "polytope dimension {dim} outside the supported range 1..=6"
        )));
    }
    if halfspaces.iter().any(|h| h.normal.len() != dim) {
        return Err(Error::Invalid("halfspace dimensions disagree".into()));
    }
    Ok(dim)
}

/// Errors when the point set spans an affine hull of dimension below `dim`.
fn check_affine_rank(points: &[Vec<f64>], centroid: &[f64], dim: usize) -> Result<()> {
    let m = DMatrix::from_fn(points.len(), dim, |i, j| points[i][j] - centroid[j]);
    let (_, sv, _) = jacobi_svd(&m);
    let cutoff = 1e-9 * sv.first().copied().unwrap_or(0.0).max(1.0);
    let rank = sv.iter().take_while(|&&s| s > cutoff).count();
    if rank < dim {
        return Err(Error::Invalid(format!(
            "degenerate input: affine hull has dimension {rank}, expected {dim}"
        )));
    }
    Ok(())
}

/// Keeps the halfspaces that support a facet: at least `dim` incident
/// vertices spanning a (dim−1)-dimensional affine hull.
fn supporting_facets(
    halfspaces: &[Halfspace],
    vertices: &[Vec<f64>],
    dim: usize,
) -> Vec<Halfspace> {
    let scale = vertices
        .iter()
        .flatten()
        .fold(1.0f64, |acc, x| acc.max(x.abs()));
    let mut kept: Vec<Halfspace> = Vec::new();
    'outer: for h in halfspaces {
        let on: Vec<&Vec<f64>> = vertices
            .iter()
            .filter(|v| h.eval(v).abs() <= DEDUP_TOL * scale * 10.0)
            .collect();
        if on.len() < dim {
            continue;
        }
        if dim >= 2 {
            let c: Vec<f64> = (0..dim)
                .map(|j| on.iter().map(|v| v[j]).sum::<f64>() / on.len() as f64)
                .collect();
            let m = DMatrix::from_fn(on.len(), dim, |i, j| on[i][j] - c[j]);
            let (_, sv, _) = jacobi_svd(&m);
            let cutoff = 1e-9 * sv.first().copied().unwrap_or(0.0).max(1.0);
            let rank = sv.iter().take_while(|&&s| s > cutoff).count();
            if rank < dim - 1 {
                continue;
            }
        }
        for k in &kept {
            let close = k
                .normal
                .iter()
                .zip(&h.normal)
                .all(|(a, b)| (a - b).abs() <= DEDUP_TOL)
                && (k.offset - h.offset).abs() <= DEDUP_TOL * scale;
            if close {
                continue 'outer;
            }
        }
        kept.push(h.clone());
    }
    kept
}

struct ClipVertex {
    x: Vec<f64>,
    active: Vec<u64>,
}

/// Least-squares solution of a vertex's active constraint system (box
/// facets included), removing the precision lost to interpolation between
/// box-scale endpoints. Returns the input when the system is deficient.
fn polish_vertex(x: Vec<f64>, active: &[u64], dim: usize, halfspaces: &[Halfspace]) -> Vec<f64> {
    let mut rows: Vec<(&[f64], f64)> = Vec::new();
    let mut box_rows: Vec<Vec<f64>> = Vec::new();
    for i in 0..dim {
        for (slot, sign) in [(2 * i, 1.0), (2 * i + 1, -1.0)] {
            if active[slot / 64] >> (slot % 64) & 1 == 1 {
                let mut r = vec![0.0; dim];
                r[i] = sign;
                box_rows.push(r);
            }
        }
    }
    for (i, h) in halfspaces.iter().enumerate() {
        let slot = 2 * dim + i;
        if active[slot / 64] >> (slot % 64) & 1 == 1 {
            rows.push((&h.normal, h.offset));
        }
    }
    let all: Vec<(&[f64], f64)> = box_rows
        .iter()
        .map(|r| (r.as_slice(), BOX_RADIUS))
        .chain(rows)
        .collect();
    if all.len() < dim {
        return x;
    }
    let a = DMatrix::from_fn(all.len(), dim, |r, c| all[r].0[c]);
    let (u, sv, vt) = jacobi_svd(&a);
    if sv[dim - 1] <= 1e-6 * sv[0] {
        return x;
    }
    let mut p = vec![0.0; dim];
    for j in 0..dim {
        let utb: f64 = (0..all.len()).map(|r| u[(r, j)] * all[r].1).sum();
        for c in 0..dim {
            p[c] += vt[(c, j)] * utb / sv[j];
        }
    }
    let moved: f64 = p
        .iter()
        .zip(&x)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    if moved <= 1e-3 { p } else { x }
}

fn bitset_words(bits: usize) -> usize {
    bits.div_ceil(64)
}

fn bit_subset(sub: &[u64], sup: &[u64]) -> bool {
    sub.iter().zip(sup).all(|(a, b)| a & !b == 0)
}

/// Incremental clipping: start from the bounding box, cut one halfspace at
/// a time, and keep each vertex's set of active constraints so edges can be
/// recognized combinatorially (two vertices are adjacent when no third
/// vertex's active set contains the intersection of theirs).
fn clip_polytope(dim: usize, halfspaces: &[Halfspace]) -> Result<Vec<ClipVertex>> {
    let words = bitset_words(2 * dim + halfspaces.len());
    let mut verts: Vec<ClipVertex> = Vec::with_capacity(1 << dim);
    for corner in 0u32..(1 << dim) {
        let mut x = vec![0.0; dim];
        let mut active = vec![0u64; words];
        for i in 0..dim {
            let positive = corner >> i & 1 == 0;
            x[i] = if positive { BOX_RADIUS } else { -BOX_RADIUS };
            let slot = 2 * i + usize::from(!positive);
            active[slot / 64] |= 1 << (slot % 64);
        }
        verts.push(ClipVertex { x, active });
    }

    for (idx, h) in halfspaces.iter().enumerate() {
        let slot = 2 * dim + idx;
        let vals: Vec<f64> = verts.iter().map(|v| h.eval(&v.x)).collect();
        let eps = |i: usize| STEP_TOL * vals[i].abs().max(h.offset.abs()).max(1.0);
        let outside: Vec<usize> = (0..verts.len()).filter(|&i| vals[i] > eps(i)).collect();
        if outside.is_empty() {
            // Redundant against the current (outer) polytope, hence against
            // the final intersection as well.
            continue;
        }
        let mut fresh: Vec<ClipVertex> = Vec::new();
        for &o in &outside {
            for i in (0..verts.len()).filter(|&i| vals[i] < -eps(i)) {
                let common: Vec<u64> = verts[i]
                    .active
                    .iter()
                    .zip(&verts[o].active)
                    .map(|(a, b)| a & b)
                    .collect();
                let shared: u32 = common.iter().map(|w| w.count_ones()).sum();
                if (shared as usize) < dim - 1 {
                    continue;
                }
                let dominated = (0..verts.len())
                    .filter(|&z| z != i && z != o)
                    .any(|z| bit_subset(&common, &verts[z].active));
                if dominated {
                    continue;
                }
                let t = vals[i] / (vals[i] - vals[o]);
                let x: Vec<f64> = verts[i]
                    .x
                    .iter()
                    .zip(&verts[o].x)
                    .map(|(a, b)| a + t * (b - a))
                    .collect();
                let mut active = common;
                active[slot / 64] |= 1 << (slot % 64);
                let x = polish_vertex(x, &active, dim, &halfspaces[..=idx]);
                fresh.push(ClipVertex { x, active });
            }
        }
        let mut next: Vec<ClipVertex> = Vec::with_capacity(verts.len());
        for (i, mut v) in verts.drain(..).enumerate() {
            if vals[i] > eps(i) {
                continue;
            }
            if vals[i] >= -eps(i) {
                v.active[slot / 64] |= 1 << (slot % 64);
            }
            next.push(v);
        }
        // Deduplicate the newly created vertices against each other and
        // against survivors on the cutting plane, merging active sets.
        'fresh: for f in fresh {
            for v in next.iter_mut() {
                let near = v
                    .x
                    .iter()
                    .zip(&f.x)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
                    <= DEDUP_TOL;
                if near {
                    for (a, b) in v.active.iter_mut().zip(&f.active) {
                        *a |= b;
                    }
                    continue 'fresh;
                }
            }
            next.push(f);
        }
        verts = next;
        if verts.is_empty() {
            return Err(Error::Invalid(
                "halfspaces have an empty intersection".into(),
            ));
        }
    }
    Ok(verts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn poly_from_points(points: &[Vec<f64>]) -> Polytope {
        Polytope::from_vertices(points).unwrap()
    }

    fn assert_vertex_sets_match(actual: &Polytope, expected: &[Vec<f64>], tol: f64) {
        assert_eq!(actual.vertices.len(), expected.len());
        for e in expected {
            let hit = actual
                .vertices
                .iter()
                .any(|v| v.iter().zip(e).all(|(a, b)| (a - b).abs() <= tol));
            assert!(hit, "missing vertex {e:?}");
        }
    }

    fn cube_vertices(dim: usize, r: f64) -> Vec<Vec<f64>> {
        (0..1u32 << dim)
            .map(|mask| {
                (0..dim)
                    .map(|i| if mask >> i & 1 == 0 { r } else { -r })
                    .collect()
            })
            .collect()
    }

    fn cross_polytope_vertices(dim: usize, r: f64) -> Vec<Vec<f64>> {
        let mut v = Vec::with_capacity(2 * dim);
        for i in 0..dim {
            for sign in [r, -r] {
                let mut x = vec![0.0; dim];
                x[i] = sign;
                v.push(x);
            }
        }
        v
    }

    /// Polar dual about the origin: {y : v·y ≤ 1 for every vertex v}.
    fn polar_dual(p: &Polytope) -> Polytope {
        let hs: Vec<Halfspace> = p
            .vertices
            .iter()
            .map(|v| Halfspace::new(v.clone(), 1.0).unwrap())
            .collect();
        Polytope::from_halfspaces(&hs).unwrap()
    }

    #[test]
    fn unit_square_has_four_axis_facets() {
        let square = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
        ];
        let facets = facet_enumeration(&square).unwrap();
        assert_eq!(facets.len(), 4);
        for h in &facets {
            let axis: Vec<f64> = h.normal.iter().map(|x| x.abs()).collect();
            let is_axis = (axis[0] - 1.0).abs() < 1e-9 && axis[1].abs() < 1e-9
                || axis[0].abs() < 1e-9 && (axis[1] - 1.0).abs() < 1e-9;
            assert!(is_axis, "normal {:?}", h.normal);
            let expected = if h.normal.iter().sum::<f64>() > 0.0 { 1.0 } else { 0.0 };
            assert_abs_diff_eq!(h.offset, expected, epsilon = 1e-9);
        }
    }

    #[test]
    fn cross_polytope_facets_are_the_cube_duals() {
        let facets = facet_enumeration(&cross_polytope_vertices(3, 1.0)).unwrap();
        assert_eq!(facets.len(), 8);
        let r = 1.0 / 3.0f64.sqrt();
        for h in &facets {
            for c in &h.normal {
                assert_abs_diff_eq!(c.abs(), r, epsilon = 1e-9);
            }
            assert_abs_diff_eq!(h.offset, r, epsilon = 1e-9);
        }
        // Dual statement: the cube's facets are the cross-polytope vertices.
        let cube_facets = facet_enumeration(&cube_vertices(3, 1.0)).unwrap();
        assert_eq!(cube_facets.len(), 6);
    }

    #[test]
    fn vertex_enumeration_recovers_cube_corners() {
        let mut hs = Vec::new();
        for i in 0..3 {
            for sign in [1.0, -1.0] {
                let mut a = vec![0.0; 3];
                a[i] = sign;
                hs.push(Halfspace::new(a, 1.0).unwrap());
            }
        }
        let p = Polytope::from_halfspaces(&hs).unwrap();
        assert_vertex_sets_match(&p, &cube_vertices(3, 1.0), 1e-9);
        assert_eq!(p.halfspaces.len(), 6);
    }

    #[test]
    fn roundtrip_is_idempotent_on_the_octahedron() {
        let first = poly_from_points(&cross_polytope_vertices(3, 1.0));
        let second = poly_from_points(&first.vertices);
        assert_vertex_sets_match(&second, &first.vertices, 1e-9);
        assert_eq!(first.halfspaces.len(), second.halfspaces.len());
    }

    /// Feasibility oracle: is `target` a convex combination of `points`?
    /// Phase-one simplex on the combination constraints, independent of the
    /// clipping code under test.
    fn in_convex_hull(points: &[Vec<f64>], target: &[f64]) -> bool {
        let dim = target.len();
        let rows = dim + 1;
        let cols = points.len();
        // Tableau columns: lambda variables, artificial variables, rhs.
        let mut t = vec![vec![0.0; cols + rows + 1]; rows + 1];
        for (j, p) in points.iter().enumerate() {
            for i in 0..dim {
                t[i][j] = p[i];
            }
            t[dim][j] = 1.0;
        }
        let mut rhs: Vec<f64> = target.to_vec();
        rhs.push(1.0);
        for i in 0..rows {
            if rhs[i] < 0.0 {
                for j in 0..cols {
                    t[i][j] = -t[i][j];
                }
                rhs[i] = -rhs[i];
            }
            t[i][cols + i] = 1.0;
            t[i][cols + rows] = rhs[i];
        }
        // Objective: minimize the sum of artificials.
        for j in 0..cols + rows + 1 {
            let s: f64 = (0..rows).map(|i| t[i][j]).sum();
            t[rows][j] = -s;
        }
        for i in 0..rows {
            t[rows][cols + i] = 0.0;
        }
        let mut basis: Vec<usize> = (cols..cols + rows).collect();
        for _ in 0..10_000 {
            let enter = (0..cols + rows)
                .filter(|&j| t[rows][j] < -1e-10)
                .min_by(|&a, &b| t[rows][a].total_cmp(&t[rows][b]));
            let Some(enter) = enter else { break };
            let mut leave = None;
            let mut best = f64::INFINITY;
            for i in 0..rows {
                if t[i][enter] > 1e-10 {
                    let ratio = t[i][cols + rows] / t[i][enter];
                    if ratio < best - 1e-12 {
                        best = ratio;
                        leave = Some(i);
                    }
                }
            }
            let Some(leave) = leave else { break };
            let pivot = t[leave][enter];
            for x in t[leave].iter_mut() {
                *x /= pivot;
            }
            for i in 0..rows + 1 {
                if i != leave && t[i][enter].abs() > 0.0 {
                    let f = t[i][enter];
                    let src = t[leave].clone();
                    for (x, s) in t[i].iter_mut().zip(&src) {
                        *x -= f * s;
                    }
                }
            }
            basis[leave] = enter;
        }
        -t[rows][cols + rows] < 1e-8
    }

    #[test]
    fn roundtrip_matches_hull_oracle_on_random_4d_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let points: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let p = poly_from_points(&points);
        for (i, cand) in points.iter().enumerate() {
            let others: Vec<Vec<f64>> = points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, v)| v.clone())
                .collect();
            let extreme = !in_convex_hull(&others, cand);
            let returned = p
                .vertices
                .iter()
                .any(|v| v.iter().zip(cand).all(|(a, b)| (a - b).abs() <= 1e-7));
            assert_eq!(extreme, returned, "point {i} disagreement");
        }
    }

    #[test]
    fn degenerate_inputs_report_the_affine_dimension() {
        let coplanar = vec![
            vec![0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![1.0, 1.0, 0.0],
        ];
        let err = Polytope::from_vertices(&coplanar).unwrap_err();
        match err {
            Error::Invalid(msg) => {
                assert!(msg.contains("dimension 2"), "{msg}");
                assert!(msg.contains("expected 3"), "{msg}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    fn effect_poly(vertices: Vec<Vec<f64>>) -> EffectSpacePoly {
        EffectSpacePoly {
            poly: poly_from_points(&vertices),
            role: SpaceRole::Realized,
        }
    }

    fn state_poly(vertices: Vec<Vec<f64>>) -> StateSpacePoly {
        let poly = poly_from_points(&vertices);
        let origin = vec![0.0; poly.dim];
        let contains_origin = poly.contains(&origin, STEP_TOL);
        StateSpacePoly { poly, role: SpaceRole::Realized, contains_origin }
    }

    /// Two-outcome classical bit: states (1, ±1); effect square spans the
    /// deterministic outcome assignments.
    #[test]
    fn classical_bit_duals_close_the_loop() {
        let states = state_poly(vec![vec![1.0], vec![-1.0]]);
        let effects = dual_effects(&states).unwrap();
        assert_eq!(effects.poly.vertices.len(), 4);
        // In outcome-probability coordinates (e on each deterministic
        // state) the square is the unit square.
        let mut mapped: Vec<(f64, f64)> = effects
            .poly
            .vertices
            .iter()
            .map(|e| (e[0] + e[1], e[0] - e[1]))
            .collect();
        mapped.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expected = [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)];
        for ((x, y), (ex, ey)) in mapped.iter().zip(expected) {
            assert_abs_diff_eq!(*x, ex, epsilon = 1e-9);
            assert_abs_diff_eq!(*y, ey, epsilon = 1e-9);
        }
        let back = dual_states(&effects).unwrap();
        assert_vertex_sets_match(&back.poly, &[vec![1.0], vec![-1.0]], 1e-9);
        assert!(back.contains_origin);
    }

    fn pauli_effect_vertices() -> Vec<Vec<f64>> {
        let mut v = vec![vec![0.0; 4], vec![1.0, 0.0, 0.0, 0.0]];
        for i in 0..3 {
            for sign in [0.5, -0.5] {
                let mut e = vec![0.5, 0.0, 0.0, 0.0];
                e[i + 1] = sign;
                v.push(e);
            }
        }
        v
    }

    #[test]
    fn pauli_effect_diamond_dualizes_to_the_state_cube() {
        let effects = effect_poly(pauli_effect_vertices());
        assert_eq!(effects.poly.vertices.len(), 8);
        let states = dual_states(&effects).unwrap();
        assert_eq!(states.role, SpaceRole::Consistent);
        assert!(states.contains_origin);
        assert_vertex_sets_match(&states.poly, &cube_vertices(3, 1.0), 1e-9);
    }

    #[test]
    fn octahedron_states_dualize_to_a_diamond_with_cubic_base() {
        let states = state_poly(cross_polytope_vertices(3, 1.0));
        let effects = dual_effects(&states).unwrap();
        let mut expected = vec![vec![0.0; 4], vec![1.0, 0.0, 0.0, 0.0]];
        for corner in cube_vertices(3, 0.5) {
            let mut e = vec![0.5];
            e.extend(corner);
            expected.push(e);
        }
        assert_vertex_sets_match(&effects.poly, &expected, 1e-9);
    }

    #[test]
    fn double_dual_contains_and_fixes_dual_stable_spaces() {
        // States → consistent effects → consistent states always contains
        // the original hull, with equality for dual-stable spaces; both
        // members of the cube/octahedron pair are dual-stable here.
        let cube = state_poly(cube_vertices(3, 1.0));
        let back = dual_states(&dual_effects(&cube).unwrap()).unwrap();
        for v in &cube.poly.vertices {
            assert!(back.poly.contains(v, 1e-9));
        }
        assert_vertex_sets_match(&back.poly, &cube_vertices(3, 1.0), 1e-9);

        let oct = state_poly(cross_polytope_vertices(3, 1.0));
        let grown = dual_states(&dual_effects(&oct).unwrap()).unwrap();
        for v in &oct.poly.vertices {
            assert!(grown.poly.contains(v, 1e-9));
        }
        assert_vertex_sets_match(&grown.poly, &cross_polytope_vertices(3, 1.0), 1e-9);
    }

    /// Geodesic sphere mesh: icosahedron with `bisections` rounds of edge
    /// midpoint subdivision, vertices pushed to the unit sphere.
    fn icosphere(bisections: usize) -> Vec<[f64; 3]> {
        let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
        let mut verts: Vec<[f64; 3]> = vec![
            [-1.0, phi, 0.0],
            [1.0, phi, 0.0],
            [-1.0, -phi, 0.0],
            [1.0, -phi, 0.0],
            [0.0, -1.0, phi],
            [0.0, 1.0, phi],
            [0.0, -1.0, -phi],
            [0.0, 1.0, -phi],
            [phi, 0.0, -1.0],
            [phi, 0.0, 1.0],
            [-phi, 0.0, -1.0],
            [-phi, 0.0, 1.0],
        ];
        for v in &mut verts {
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            *v = [v[0] / n, v[1] / n, v[2] / n];
        }
        let mut faces: Vec<[usize; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..bisections {
            let mut midpoint = std::collections::HashMap::new();
            let mut next_faces = Vec::with_capacity(faces.len() * 4);
            for f in &faces {
                let mut mid = [0usize; 3];
                for e in 0..3 {
                    let (a, b) = (f[e], f[(e + 1) % 3]);
                    let key = (a.min(b), a.max(b));
                    mid[e] = *midpoint.entry(key).or_insert_with(|| {
                        let p = [
                            verts[a][0] + verts[b][0],
                            verts[a][1] + verts[b][1],
                            verts[a][2] + verts[b][2],
                        ];
                        let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                        verts.push([p[0] / n, p[1] / n, p[2] / n]);
                        verts.len() - 1
                    });
                }
                next_faces.push([f[0], mid[0], mid[2]]);
                next_faces.push([f[1], mid[1], mid[0]]);
                next_faces.push([f[2], mid[2], mid[1]]);
                next_faces.push([mid[0], mid[1], mid[2]]);
            }
            faces = next_faces;
        }
        verts
    }

    #[test]
    fn fine_effect_mesh_dualizes_to_nearly_the_unit_ball() {
        let dirs = icosphere(3);
        assert_eq!(dirs.len(), 642);
        let mut vertices = vec![vec![0.0; 4], vec![1.0, 0.0, 0.0, 0.0]];
        for d in &dirs {
            vertices.push(vec![0.5, 0.5 * d[0], 0.5 * d[1], 0.5 * d[2]]);
        }
        let states = dual_states(&effect_poly(vertices)).unwrap();
        // Hausdorff distance to the unit ball: vertices bound the outer
        // excess, the inradius bounds the inner deficit.
        let max_norm = states
            .poly
            .vertices
            .iter()
            .map(|v| dot(v, v).sqrt())
            .fold(0.0f64, f64::max);
        let inradius = states
            .poly
            .halfspaces
            .iter()
            .map(|h| h.offset)
            .fold(f64::INFINITY, f64::min);
        assert!(max_norm - 1.0 <= 0.01, "outer excess {}", max_norm - 1.0);
        assert!(1.0 - inradius <= 0.01, "inner deficit {}", 1.0 - inradius);
    }

    #[test]
    fn degenerate_effect_sets_error_as_unbounded() {
        // Unit and zero effects alone leave every Bloch direction free.
        let effects = EffectSpacePoly {
            poly: Polytope {
                dim: 3,
                vertices: vec![vec![0.0; 3], vec![1.0, 0.0, 0.0]],
                halfspaces: Vec::new(),
            },
            role: SpaceRole::Realized,
        };
        assert!(matches!(dual_states(&effects), Err(Error::Invalid(_))));

        // Effects missing one Bloch axis leave that direction unbounded.
        let mut vertices = pauli_effect_vertices();
        vertices.retain(|v| v[3].abs() < 0.25);
        let effects = EffectSpacePoly {
            poly: Polytope { dim: 4, vertices, halfspaces: Vec::new() },
            role: SpaceRole::Realized,
        };
        let err = dual_states(&effects).unwrap_err();
        match err {
            Error::Invalid(msg) => assert!(msg.contains("unbounded"), "{msg}"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn volumes_match_closed_forms() {
        let cube = poly_from_points(&cube_vertices(3, 1.0));
        assert_abs_diff_eq!(volume(&cube).unwrap(), 8.0, epsilon = 1e-9);
        let oct = poly_from_points(&cross_polytope_vertices(3, 1.0));
        assert_abs_diff_eq!(volume(&oct).unwrap(), 4.0 / 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(
            volume(&oct).unwrap() / volume(&cube).unwrap(),
            1.0 / 6.0,
            epsilon = 1e-12
        );
        let square = poly_from_points(&cube_vertices(2, 0.5));
        assert_abs_diff_eq!(volume(&square).unwrap(), 1.0, epsilon = 1e-9);
        // 4-dimensional cross-polytope: 2^d / d!.
        let hexadecachoron = poly_from_points(&cross_polytope_vertices(4, 1.0));
        assert_abs_diff_eq!(volume(&hexadecachoron).unwrap(), 2.0 / 3.0, epsilon = 1e-9);
    }

    #[test]
    fn triangulated_volume_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let points: Vec<Vec<f64>> = (0..14)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let p = poly_from_points(&points);
        let exact = volume(&p).unwrap();

        let n = 1_000_000usize;
        let mut hits = 0usize;
        for _ in 0..n {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if p.contains(&x, 1e-12) {
                hits += 1;
            }
        }
        let rate = hits as f64 / n as f64;
        let box_vol = 8.0;
        let mc = rate * box_vol;
        let se = (rate * (1.0 - rate) / n as f64).sqrt() * box_vol;
        assert!(
            (exact - mc).abs() <= 3.0 * se,
            "triangulated {exact}, monte carlo {mc} ± {se}"
        );
    }

    #[test]
    fn polar_dual_scales_reciprocally() {
        for lambda in [0.5, 2.0] {
            let scaled = poly_from_points(&cube_vertices(3, lambda));
            let dual = polar_dual(&scaled);
            assert_vertex_sets_match(
                &dual,
                &cross_polytope_vertices(3, 1.0 / lambda),
                1e-9,
            );
        }
        let oct = poly_from_points(&cross_polytope_vertices(3, 2.0));
        let dual = polar_dual(&oct);
        assert_vertex_sets_match(&dual, &cube_vertices(3, 0.5), 1e-9);
    }

    #[test]
    fn adding_effect_vertices_shrinks_the_dual_volume() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut vertices = pauli_effect_vertices();
        let mut last = volume(&dual_states(&effect_poly(vertices.clone())).unwrap().poly)
            .unwrap();
        for _ in 0..6 {
            let d: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0f64..1.0)).collect();
            let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            vertices.push(vec![
                0.5,
                0.45 * d[0] / n,
                0.45 * d[1] / n,
                0.45 * d[2] / n,
            ]);
            let vol = volume(&dual_states(&effect_poly(vertices.clone())).unwrap().poly)
                .unwrap();
            assert!(vol <= last + 1e-9, "volume grew from {last} to {vol}");
            last = vol;
        }
    }

    #[test]
    fn realized_spaces_sit_inside_their_double_duals() {
        use crate::decompose::extended_decompose;
        use crate::synth::{build_ground_truth, ExperimentDesign};

        let design = ExperimentDesign::full_grid(10, 11).unwrap();
        let (_, d) = build_ground_truth(10, 11, 0.9, 0.9, 100.0, &design).unwrap();
        let dec = extended_decompose(&d, 4).unwrap();
        let model = &dec.model;

        let s_real = StateSpacePoly::realized(model).unwrap();
        assert_eq!(s_real.role, SpaceRole::Realized);
        assert!(s_real.contains_origin);
        let e_real = EffectSpacePoly::realized(model).unwrap();

        // Extended decompositions carry the zero and unit effects.
        let zero = vec![0.0; 4];
        let unit = vec![1.0, 0.0, 0.0, 0.0];
        for target in [&zero, &unit] {
            let found = e_real
                .poly
                .vertices
                .iter()
                .any(|v| v.iter().zip(target).all(|(a, b)| (a - b).abs() <= 1e-9));
            assert!(found, "missing required effect vertex {target:?}");
        }

        let s_cons = dual_states(&e_real).unwrap();
        let e_cons = dual_effects(&s_real).unwrap();
        for v in &s_real.poly.vertices {
            assert!(s_cons.poly.contains(v, 1e-7));
        }
        for v in &e_real.poly.vertices {
            assert!(e_cons.poly.contains(v, 1e-7));
        }
    }

    #[test]
    fn support_function_matches_vertices() {
        let p = poly_from_points(&cube_vertices(3, 1.0));
        assert_abs_diff_eq!(p.support(&[1.0, 0.0, 0.0]), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.support(&[1.0, 1.0, 1.0]), 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.support(&[-1.0, -1.0, 1.0]), 3.0, epsilon = 1e-12);
    }
}
