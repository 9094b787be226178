//! Extreme eigenvalues of symmetric (Gram) matrices.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Extreme {
    Min,
    Max,
}

/// Relative size below which a negative eigenvalue is treated as round-off.
const CLAMP_RELATIVE: f64 = 1e-10;

/// Smallest or largest eigenvalue of a symmetric matrix via a dense
/// tridiagonal QR eigensolve. Round-off negatives are clamped to zero.
pub fn extreme_eigenvalue(g: &DMatrix<f64>, which: Extreme) -> Result<f64> {
    let (lo, hi) = eigen_range(g)?;
    Ok(match which {
        Extreme::Min => lo,
        Extreme::Max => hi,
    })
}

/// Both extreme eigenvalues from a single eigensolve.
pub fn eigen_range(g: &DMatrix<f64>) -> Result<(f64, f64)> {
    if !g.is_square() || g.nrows() == 0 {
        return Err(Error::invalid(format!(
            "expected a non-empty square matrix, got {:?}",
            g.shape()
        )));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix entry".into()));
    }
    let (lo, hi) = match g.nrows() {
        1 => (g[(0, 0)], g[(0, 0)]),
        2 => {
            let (a, b, d) = (g[(0, 0)], g[(1, 0)], g[(1, 1)]);
            let mid = 0.5 * (a + d);
            let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
            (mid - rad, mid + rad)
        }
        _ => {
            let ev = g.clone().symmetric_eigenvalues();
            (ev.min(), ev.max())
        }
    };
    let scale = hi.abs().max(lo.abs()).max(1.0);
    Ok((clamp_roundoff(lo, scale), clamp_roundoff(hi, scale)))
}

fn clamp_roundoff(v: f64, scale: f64) -> f64 {
    if v < 0.0 && v > -CLAMP_RELATIVE * scale {
        0.0
    } else {
        v
    }
}

/// Extreme eigenpair by Lanczos iteration with full reorthogonalization.
///
/// `start` warm-starts the Krylov space (typically the previous extreme
/// eigenvector after a rank-2 update of the matrix). Returns the Ritz value
/// and unit Ritz vector once the residual norm drops below `tol * ||g||`.
pub fn lanczos_extreme(
    g: &DMatrix<f64>,
    which: Extreme,
    start: Option<&DVector<f64>>,
    tol: f64,
) -> Result<(f64, DVector<f64>)> {
    let n = g.nrows();
    if !g.is_square() || n == 0 {
        return Err(Error::invalid("lanczos needs a non-empty square matrix"));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix entry".into()));
    }
    let norm = g.norm().max(f64::MIN_POSITIVE);

    let mut v = match start {
        Some(s) if s.len() == n && s.norm() > 0.0 => s.clone(),
        _ => DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_034).fract()),
    };
    v /= v.norm();

    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(n.min(64));
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut best = (0.0, v.clone());

    for k in 0..n {
        basis.push(v.clone());
        let mut w = g * &v;
        let a = w.dot(&v);
        alphas.push(a);
        // full reorthogonalization, applied twice
        for _ in 0..2 {
            for b in &basis {
                let c = w.dot(b);
                w.axpy(-c, b, 1.0);
            }
        }
        let beta = w.norm();

        let m = alphas.len();
        let t = DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                alphas[i]
            } else if i + 1 == j {
                betas[i]
            } else if j + 1 == i {
                betas[j]
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(t);
        let idx = match which {
            Extreme::Min => eig.eigenvalues.imin(),
            Extreme::Max => eig.eigenvalues.imax(),
        };
        let theta = eig.eigenvalues[idx];
        let y = eig.eigenvectors.column(idx);
        let mut ritz = DVector::zeros(n);
        for (b, &c) in basis.iter().zip(y.iter()) {
            ritz.axpy(c, b, 1.0);
        }
        best = (theta, ritz);
        let residual = (beta * y[m - 1]).abs();
        if residual <= tol * norm || beta <= f64::EPSILON * norm || k + 1 == n {
            break;
        }
        betas.push(beta);
        v = w / beta;
    }
    let (theta, mut vec) = best;
    vec /= vec.norm();
    Ok((clamp_roundoff(theta, norm), vec))
}
