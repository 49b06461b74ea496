//! Small dense linear-algebra helpers shared by the modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Largest eigenvalue of `MᵀM` (the squared spectral norm of `M`) by power iteration.
///
/// Stops when the relative change of the Rayleigh quotient drops below `tol`
/// or after `max_iter` iterations.
pub fn spectral_norm_sq(m: &DMatrix<f64>, tol: f64, max_iter: usize) -> f64 {
    let n = m.ncols();
    if n == 0 || m.nrows() == 0 {
        return 0.0;
    }
    // deterministic start with all components nonzero
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * ((i * 7919) % 13) as f64);
    v /= v.norm();
    let mut lam = 0.0;
    for _ in 0..max_iter {
        let mv = m * &v;
        let w = m.tr_mul(&mv);
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / nw;
        if (next - lam).abs() <= tol * next.abs().max(f64::MIN_POSITIVE) {
            lam = next;
            break;
        }
        lam = next;
    }
    // power iteration converges from below; the final Rayleigh quotient is the estimate
    let mv = m * &v;
    lam.max(mv.norm_squared())
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eig(s: &DMatrix<f64>) -> f64 {
    if s.nrows() == 0 {
        return 0.0;
    }
    let sym = symmetrize(s);
    SymmetricEigen::new(sym).eigenvalues.min()
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eig(s: &DMatrix<f64>) -> f64 {
    if s.nrows() == 0 {
        return 0.0;
    }
    let sym = symmetrize(s);
    SymmetricEigen::new(sym).eigenvalues.max()
}

pub fn symmetrize(s: &DMatrix<f64>) -> DMatrix<f64> {
    (s + s.transpose()) * 0.5
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// `y += alpha * M x` for a dense matrix and slices.
pub fn gemv_add(y: &mut [f64], alpha: f64, m: &DMatrix<f64>, x: &[f64]) {
    debug_assert_eq!(m.ncols(), x.len());
    debug_assert_eq!(m.nrows(), y.len());
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        let s = alpha * xj;
        for (yi, mij) in y.iter_mut().zip(m.column(j).iter()) {
            *yi += s * mij;
        }
    }
}

/// `out = Mᵀ r` for a dense matrix and slices.
pub fn gemv_tr(out: &mut [f64], m: &DMatrix<f64>, r: &[f64]) {
    debug_assert_eq!(m.nrows(), r.len());
    debug_assert_eq!(m.ncols(), out.len());
    for (j, o) in out.iter_mut().enumerate() {
        *o = dot(m.column(j).as_slice(), r);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_norm_of_column_of_ones() {
        let m = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert!((spectral_norm_sq(&m, 1e-12, 10_000) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_norm_matches_eigensolver() {
        let m = DMatrix::from_fn(6, 4, |i, j| ((i * 3 + j * 5) % 7) as f64 - 3.0);
        let mtm = m.transpose() * &m;
        let want = max_eig(&mtm);
        let got = spectral_norm_sq(&m, 1e-13, 10_000);
        assert!((got - want).abs() <= 1e-8 * want, "{got} vs {want}");
    }

    #[test]
    fn extreme_eigs_of_diagonal() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -1.0, 2.0]));
        assert_eq!(min_eig(&d), -1.0);
        assert_eq!(max_eig(&d), 3.0);
    }
}
