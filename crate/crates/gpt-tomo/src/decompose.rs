//! Canonical factorization of a probability matrix into states and effects.
//!
//! The factorization runs QR on the matrix, rescales so the leading column of
//! `Q` becomes the all-ones column, then takes an SVD of the remainder. The
//! result is the unique rank-`k` model (under the fixed sign convention) with
//! states `(1, …)` and a leading unit effect. The extended variant decomposes
//! `[D | 1−D]` so the effect list is closed under complements.

use nalgebra::DMatrix;

use crate::core::{GptModel, ProbabilityMatrix};
use crate::{Error, Result};

/// Relative threshold below which trailing singular values are dropped.
const TRUNCATION_TOL: f64 = 1e-10;

/// One-sided Jacobi SVD: `a = u · diag(sigma) · vᵀ` with `sigma` descending.
/// Chosen over the Golub-Kahan route because the factorization here must
/// reproduce the input to 1e-9 and clustered spectra need accurate vectors.
pub(crate) fn jacobi_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let (m, n) = (a.nrows(), a.ncols());
    if m < n {
        let (u, sigma, v) = jacobi_svd(&a.transpose());
        return (v, sigma, u);
    }
    let mut b = a.clone();
    let mut v = DMatrix::identity(n, n);
    let tol = 1e-14;
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let bp = b.column(p);
                let bq = b.column(q);
                let alpha = bp.dot(&bp);
                let beta = bq.dot(&bq);
                let gamma = bp.dot(&bq);
                if gamma.abs() <= tol * (alpha * beta).sqrt() || alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let bip = b[(i, p)];
                    let biq = b[(i, q)];
                    b[(i, p)] = c * bip - s * biq;
                    b[(i, q)] = s * bip + c * biq;
                }
                for i in 0..n {
                    let vip = v[(i, p)];
                    let viq = v[(i, q)];
                    v[(i, p)] = c * vip - s * viq;
                    v[(i, q)] = s * vip + c * viq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n).map(|j| b.column(j).norm()).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let mut u = DMatrix::zeros(m, n);
    let mut v_sorted = DMatrix::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        let s = norms[src];
        sigma.push(s);
        if s > 0.0 {
            for i in 0..m {
                u[(i, dst)] = b[(i, src)] / s;
            }
        }
        for i in 0..n {
            v_sorted[(i, dst)] = v[(i, src)];
        }
    }
    (u, sigma, v_sorted)
}

/// A canonical factorization together with its rank bookkeeping.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub model: GptModel,
    /// Rank the caller asked for.
    pub requested_rank: usize,
    /// Rank actually realized after dropping negligible singular values.
    pub effective_rank: usize,
}

impl Decomposition {
    /// True when the input had numerical rank below the requested one.
    pub fn truncated(&self) -> bool {
        self.effective_rank < self.requested_rank
    }
}

/// Factors `D = S·E` with `S` of the form `[1 | U√Σ]` and `E = [R₀ ; √ΣVᵀ]`.
pub fn canonical_decompose(d: &ProbabilityMatrix, k: usize) -> Result<Decomposition> {
    factor(d.entries(), k)
}

/// Factors the extended matrix `[D | 1−D]`, closing effects under complement.
pub fn extended_decompose(d: &ProbabilityMatrix, k: usize) -> Result<Decomposition> {
    let base = d.entries();
    let (m, n) = (base.nrows(), base.ncols());
    let extended = DMatrix::from_fn(m, 2 * n, |i, j| {
        if j < n {
            base[(i, j)]
        } else {
            1.0 - base[(i, j - n)]
        }
    });
    factor(&extended, k)
}

fn factor(d: &DMatrix<f64>, k: usize) -> Result<Decomposition> {
    let (m, n) = (d.nrows(), d.ncols());
    if k == 0 || k > m.min(n) {
        return Err(Error::Invalid(format!(
            "rank {k} out of range for a {m}x{n} matrix"
        )));
    }

    let qr = d.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let c = q[(0, 0)];
    if c.abs() < 1e-12 {
        return Err(Error::Numerical {
            stage: "decompose",
            detail: format!("leading QR column is degenerate (c = {c:.3e})"),
        });
    }
    for i in 1..m {
        if (q[(i, 0)] - c).abs() > 1e-9 {
            return Err(Error::Invalid(
                "first column of the input is not constant".into(),
            ));
        }
    }
    // R₀ = c·(first row of R); with a ones column this is the column means.
    let r0 = r.row(0) * c;

    // Q₁R₁ = D − 1·R₀, the part orthogonal to the ones column.
    let mut remainder = d.clone();
    for i in 0..m {
        for j in 0..n {
            remainder[(i, j)] -= r0[j];
        }
    }

    let (u, sv, v) = jacobi_svd(&remainder);

    let cutoff = TRUNCATION_TOL * sv[0];
    let mut kept = 0;
    while kept < k - 1 && kept < sv.len() && sv[kept] > cutoff && sv[kept] > 0.0 {
        kept += 1;
    }
    let k_eff = kept + 1;

    // Sign convention: first nonzero component of each right singular vector
    // is made positive, so the factorization is deterministic.
    let mut signs = vec![1.0f64; kept];
    for (j, sign) in signs.iter_mut().enumerate() {
        for i in 0..n {
            let val = v[(i, j)];
            if val.abs() > 1e-14 {
                if val < 0.0 {
                    *sign = -1.0;
                }
                break;
            }
        }
    }

    let mut s = DMatrix::zeros(m, k_eff);
    let mut e = DMatrix::zeros(k_eff, n);
    for i in 0..m {
        s[(i, 0)] = 1.0;
    }
    e.row_mut(0).copy_from(&r0);
    for j in 0..kept {
        let scale = sv[j].sqrt();
        for i in 0..m {
            s[(i, j + 1)] = signs[j] * u[(i, j)] * scale;
        }
        for i in 0..n {
            e[(j + 1, i)] = signs[j] * v[(i, j)] * scale;
        }
    }
    // The unit column factors exactly: snap away the SVD's float dust.
    debug_assert!((e[(0, 0)] - 1.0).abs() < 1e-9);
    e[(0, 0)] = 1.0;
    for j in 1..k_eff {
        debug_assert!(e[(j, 0)].abs() < 1e-9);
        e[(j, 0)] = 0.0;
    }

    if s.iter().any(|v| !v.is_finite()) || e.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical {
            stage: "decompose",
            detail: "factorization produced non-finite entries".into(),
        });
    }

    Ok(Decomposition {
        model: GptModel::new(s, e)?,
        requested_rank: k,
        effective_rank: k_eff,
    })
}
