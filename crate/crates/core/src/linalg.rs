//! Small dense eigenvalue and factorization kernels.
//!
//! Hermitian eigenvalues go through the real symmetric embedding
//! `[[Re A, -Im A], [Im A, Re A]]`, whose spectrum is that of `A` with every
//! eigenvalue doubled, followed by Householder tridiagonalization and
//! implicit QL.

use crate::error::{Error, Result};
use crate::scalar::{Real, C};

/// Eigenvalues of the Hermitian part of a row-major `n x n` complex matrix,
/// sorted ascending.
pub fn hermitian_eigenvalues<T: Real>(n: usize, data: &[C<T>]) -> Result<Vec<T>> {
    assert_eq!(data.len(), n * n);
    if n == 0 {
        return Ok(Vec::new());
    }
    let m = 2 * n;
    let half = T::lit(0.5);
    let mut z = vec![T::zero(); m * m];
    for i in 0..n {
        for j in 0..n {
            let h = (data[i * n + j] + data[j * n + i].conj()) * half;
            z[i * m + j] = h.re;
            z[(i + n) * m + (j + n)] = h.re;
            z[i * m + (j + n)] = -h.im;
            z[(i + n) * m + j] = h.im;
        }
    }
    let mut d = vec![T::zero(); m];
    let mut e = vec![T::zero(); m];
    tridiagonalize(m, &mut z, &mut d, &mut e);
    tql_eigenvalues(&mut d, &mut e)?;
    d.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    Ok(d.into_iter().step_by(2).collect())
}

/// Householder reduction of a real symmetric matrix to tridiagonal form
/// (diagonal in `d`, sub-diagonal in `e[1..]`). `z` is destroyed.
fn tridiagonalize<T: Real>(n: usize, z: &mut [T], d: &mut [T], e: &mut [T]) {
    let two = T::lit(2.0);
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = T::zero();
        if l > 0 {
            let scale: T = (0..i).map(|k| z[i * n + k].abs()).sum();
            if scale == T::zero() {
                e[i] = z[i * n + l];
            } else {
                for k in 0..i {
                    z[i * n + k] /= scale;
                    h += z[i * n + k] * z[i * n + k];
                }
                let f = z[i * n + l];
                let g = if f >= T::zero() { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                z[i * n + l] = f - g;
                let mut f = T::zero();
                for j in 0..i {
                    let mut g = T::zero();
                    for k in 0..=j {
                        g += z[j * n + k] * z[i * n + k];
                    }
                    for k in (j + 1)..i {
                        g += z[k * n + j] * z[i * n + k];
                    }
                    e[j] = g / h;
                    f += e[j] * z[i * n + j];
                }
                let hh = f / (h * two);
                for j in 0..i {
                    let f = z[i * n + j];
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        z[j * n + k] -= f * e[k] + g * z[i * n + k];
                    }
                }
            }
        } else {
            e[i] = z[i * n + l];
        }
        d[i] = h;
    }
    e[0] = T::zero();
    for i in 0..n {
        d[i] = z[i * n + i];
    }
}

/// Implicit QL with Wilkinson shifts on a symmetric tridiagonal matrix.
fn tql_eigenvalues<T: Real>(d: &mut [T], e: &mut [T]) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = T::zero();
    let eps = T::epsilon();
    let two = T::lit(2.0);
    let anorm = (0..n).map(|i| d[i].abs() + e[i].abs()).fold(T::zero(), T::max);
    let floor = eps * anorm;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= eps * dd || e[m].abs() <= floor {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::invalid("tridiagonal QL iteration did not converge"));
            }
            let mut g = (d[l + 1] - d[l]) / (two * e[l]);
            let mut r = g.hypot(T::one());
            g = d[m] - d[l] + e[l] / (g + if g >= T::zero() { r.abs() } else { -r.abs() });
            let (mut s, mut c, mut p) = (T::one(), T::one(), T::zero());
            let mut deflated = false;
            let mut i = m as isize - 1;
            while i >= l as isize {
                let iu = i as usize;
                let f = s * e[iu];
                let b = c * e[iu];
                r = f.hypot(g);
                e[iu + 1] = r;
                if r == T::zero() {
                    d[iu + 1] -= p;
                    e[m] = T::zero();
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[iu + 1] - p;
                r = (d[iu] - g) * s + two * c * b;
                p = s * r;
                d[iu + 1] = g + p;
                g = c * r - b;
                i -= 1;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = T::zero();
        }
    }
    Ok(())
}

/// True when the Hermitian part of `A + shift * I` admits a Cholesky
/// factorization, i.e. every eigenvalue of `A` exceeds `-shift`.
pub fn is_positive_definite_shifted<T: Real>(n: usize, data: &[C<T>], shift: T) -> bool {
    let mut l = vec![C::new(T::zero(), T::zero()); n * n];
    for j in 0..n {
        let mut s = data[j * n + j].re + shift;
        for k in 0..j {
            s -= l[j * n + k].norm_sqr();
        }
        if !(s > T::zero()) {
            return false;
        }
        let djj = s.sqrt();
        l[j * n + j] = C::new(djj, T::zero());
        for i in (j + 1)..n {
            let mut z = (data[i * n + j] + data[j * n + i].conj()) * T::lit(0.5);
            for k in 0..j {
                z -= l[i * n + k] * l[j * n + k].conj();
            }
            l[i * n + j] = z / djj;
        }
    }
    true
}

/// Solves `A x = b` for a real symmetric positive-definite `A` (row-major).
/// Returns `None` if the factorization breaks down.
pub fn solve_spd<T: Real>(n: usize, a: &[T], b: &[T]) -> Option<Vec<T>> {
    let mut l = vec![T::zero(); n * n];
    for j in 0..n {
        let mut s = a[j * n + j];
        for k in 0..j {
            s -= l[j * n + k] * l[j * n + k];
        }
        if !(s > T::zero()) {
            return None;
        }
        let djj = s.sqrt();
        l[j * n + j] = djj;
        for i in (j + 1)..n {
            let mut z = a[i * n + j];
            for k in 0..j {
                z -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = z / djj;
        }
    }
    let mut y = vec![T::zero(); n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn diagonal_spectrum() {
        let z = Complex64::new(0.0, 0.0);
        let data = vec![
            Complex64::new(3.0, 0.0),
            z,
            z,
            z,
            Complex64::new(-1.0, 0.0),
            z,
            z,
            z,
            Complex64::new(0.5, 0.0),
        ];
        let ev = hermitian_eigenvalues(3, &data).unwrap();
        assert!((ev[0] + 1.0).abs() < 1e-14);
        assert!((ev[1] - 0.5).abs() < 1e-14);
        assert!((ev[2] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn pauli_y_spectrum() {
        let z = Complex64::new(0.0, 0.0);
        let data = vec![z, Complex64::new(0.0, -1.0), Complex64::new(0.0, 1.0), z];
        let ev = hermitian_eigenvalues(2, &data).unwrap();
        assert!((ev[0] + 1.0).abs() < 1e-14 && (ev[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cholesky_gate() {
        let data = vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(-1e-3, 0.0)];
        assert!(!is_positive_definite_shifted(2, &data, 1e-4));
        assert!(is_positive_definite_shifted(2, &data, 1e-2));
    }

    #[test]
    fn spd_solve() {
        let a = [4.0, 1.0, 1.0, 3.0];
        let x: Vec<f64> = solve_spd(2, &a, &[1.0, 2.0]).unwrap();
        assert!((4.0 * x[0] + x[1] - 1.0).abs() < 1e-14);
        assert!((x[0] + 3.0 * x[1] - 2.0).abs() < 1e-14);
        assert!(solve_spd(2, &[1.0, 2.0, 2.0, 1.0], &[1.0, 1.0]).is_none());
    }
}
