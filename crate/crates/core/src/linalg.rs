//! Dense linear algebra on small row-major square matrices.

use alloc::vec;
use alloc::vec::Vec;

/// LU factorisation with partial pivoting. Returns the packed factors, the
/// row permutation and its sign, or `None` for a singular matrix.
fn lu(a: &[f64], n: usize) -> Option<(Vec<f64>, Vec<usize>, f64)> {
    let mut m = a.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut sign = 1.0;
    for col in 0..n {
        let mut piv = col;
        let mut best = libm::fabs(m[col * n + col]);
        for r in col + 1..n {
            let v = libm::fabs(m[r * n + col]);
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best == 0.0 {
            return None;
        }
        if piv != col {
            for c in 0..n {
                m.swap(col * n + c, piv * n + c);
            }
            perm.swap(col, piv);
            sign = -sign;
        }
        let d = m[col * n + col];
        for r in col + 1..n {
            let f = m[r * n + col] / d;
            m[r * n + col] = f;
            for c in col + 1..n {
                m[r * n + c] -= f * m[col * n + c];
            }
        }
    }
    Some((m, perm, sign))
}

/// `log |det A|`; `-inf` for a singular matrix.
pub fn log_abs_det(a: &[f64], n: usize) -> f64 {
    match lu(a, n) {
        Some((m, _, _)) => (0..n).map(|i| libm::log(libm::fabs(m[i * n + i]))).sum(),
        None => f64::NEG_INFINITY,
    }
}

pub fn det(a: &[f64], n: usize) -> f64 {
    match lu(a, n) {
        Some((m, _, sign)) => sign * (0..n).map(|i| m[i * n + i]).product::<f64>(),
        None => 0.0,
    }
}

pub fn inverse(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let (m, perm, _) = lu(a, n)?;
    let mut inv = vec![0.0; n * n];
    for col in 0..n {
        // solve A x = e_col, with P A = L U
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = if perm[i] == col { 1.0 } else { 0.0 };
            for j in 0..i {
                s -= m[i * n + j] * y[j];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in i + 1..n {
                s -= m[i * n + j] * inv[j * n + col];
            }
            inv[i * n + col] = s / m[i * n + i];
        }
    }
    Some(inv)
}

pub fn transpose(a: &[f64], n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = a[i * n + j];
        }
    }
    t
}

pub fn matvec(a: &[f64], n: usize, x: &[f64]) -> Vec<f64> {
    (0..n)
        .map(|i| (0..n).map(|j| a[i * n + j] * x[j]).sum())
        .collect()
}

/// Orthonormalises the rows of `a` in place (modified Gram-Schmidt).
pub fn orthonormalize_rows(a: &mut [f64], n: usize) {
    for i in 0..n {
        for j in 0..i {
            let dot: f64 = (0..n).map(|c| a[i * n + c] * a[j * n + c]).sum();
            for c in 0..n {
                a[i * n + c] -= dot * a[j * n + c];
            }
        }
        let norm = libm::sqrt((0..n).map(|c| a[i * n + c] * a[i * n + c]).sum());
        for c in 0..n {
            a[i * n + c] /= norm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_known_matrix() {
        let a = [4.0, 7.0, 2.0, 6.0];
        let inv = inverse(&a, 2).unwrap();
        let expect = [0.6, -0.7, -0.2, 0.4];
        for (x, y) in inv.iter().zip(expect) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((det(&a, 2) - 10.0).abs() < 1e-12);
        assert!((log_abs_det(&a, 2) - libm::log(10.0)).abs() < 1e-12);
    }

    #[test]
    fn singular_matrix() {
        let a = [1.0, 2.0, 2.0, 4.0];
        assert!(inverse(&a, 2).is_none());
        assert_eq!(log_abs_det(&a, 2), f64::NEG_INFINITY);
    }

    #[test]
    fn orthonormal_rows_have_unit_det() {
        let mut a = [0.3, -1.2, 0.5, 2.0, 0.1, 0.7, -0.4, 0.9, 1.1];
        orthonormalize_rows(&mut a, 3);
        assert!((libm::fabs(det(&a, 3)) - 1.0).abs() < 1e-12);
    }
}
