//! Dense Hermitian eigenvalues: Householder reduction to a real symmetric
//! tridiagonal matrix followed by implicit-shift QL, with inverse iteration
//! for spot-check eigenvectors.

use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;

/// Scalars the reduction works over.
pub trait Field:
    Copy + Send + Sync + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self>
{
    fn zero() -> Self;
    fn from_f64(x: f64) -> Self;
    fn conj(self) -> Self;
    fn abs2(self) -> f64;
    fn re(self) -> f64;
    fn scale(self, x: f64) -> Self;
    fn to_c64(self) -> Complex64;

    /// `self / |self|`, or one at zero.
    fn phase(self) -> Self {
        let a = self.abs2().sqrt();
        if a == 0.0 {
            Self::from_f64(1.0)
        } else {
            self.scale(1.0 / a)
        }
    }
}

impl Field for f64 {
    fn zero() -> Self {
        0.0
    }
    fn from_f64(x: f64) -> Self {
        x
    }
    fn conj(self) -> Self {
        self
    }
    fn abs2(self) -> f64 {
        self * self
    }
    fn re(self) -> f64 {
        self
    }
    fn scale(self, x: f64) -> Self {
        self * x
    }
    fn to_c64(self) -> Complex64 {
        Complex64::new(self, 0.0)
    }
}

impl Field for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn from_f64(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    fn abs2(self) -> f64 {
        self.norm_sqr()
    }
    fn re(self) -> f64 {
        self.re
    }
    fn scale(self, x: f64) -> Self {
        self * x
    }
    fn to_c64(self) -> Complex64 {
        self
    }
}

/// `Q* A Q = D T D*` with `T` real symmetric tridiagonal, `Q` a product of
/// Householder reflectors and `D` a diagonal of unit phases.
#[derive(Debug, Clone)]
pub struct Tridiagonal<T> {
    pub diag: Vec<f64>,
    /// `off[k] = T[k+1][k]`, nonnegative.
    pub off: Vec<f64>,
    reflectors: Vec<Option<(Vec<T>, f64)>>,
    phases: Vec<T>,
}

/// Reduces a Hermitian matrix given in row-major order. Only the lower
/// triangle is read.
pub fn tridiagonalize<T: Field>(mut a: Vec<T>, n: usize) -> Tridiagonal<T> {
    assert_eq!(a.len(), n * n, "matrix must be n x n");
    // mirror the lower triangle so the reduction sees an exactly Hermitian input
    for i in 0..n {
        for j in 0..i {
            a[j * n + i] = a[i * n + j].conj();
        }
        a[i * n + i] = T::from_f64(a[i * n + i].re());
    }
    let mut reflectors = Vec::with_capacity(n.saturating_sub(2));
    let mut sub: Vec<T> = vec![T::zero(); n.saturating_sub(1)];
    for k in 0..n.saturating_sub(2) {
        let m = n - k - 1;
        let x: Vec<T> = (0..m).map(|i| a[(k + 1 + i) * n + k]).collect();
        let tail: f64 = x[1..].iter().map(|z| z.abs2()).sum();
        if tail == 0.0 {
            sub[k] = x[0];
            reflectors.push(None);
            continue;
        }
        let norm = (x[0].abs2() + tail).sqrt();
        let alpha = -(x[0].phase().scale(norm));
        let mut v = x;
        v[0] = v[0] - alpha;
        let vnorm2: f64 = v.iter().map(|z| z.abs2()).sum();
        let tau = 2.0 / vnorm2;
        // p = τ B v on the trailing block
        let mut p = vec![T::zero(); m];
        for i in 0..m {
            let row = (k + 1 + i) * n + k + 1;
            let mut acc = T::zero();
            for j in 0..m {
                acc = acc + a[row + j] * v[j];
            }
            p[i] = acc.scale(tau);
        }
        // K = (τ/2) v* p, w = p − K v
        let mut kk = T::zero();
        for i in 0..m {
            kk = kk + v[i].conj() * p[i];
        }
        kk = kk.scale(tau / 2.0);
        let w: Vec<T> = (0..m).map(|i| p[i] - kk * v[i]).collect();
        for i in 0..m {
            let row = (k + 1 + i) * n + k + 1;
            for j in 0..m {
                a[row + j] = a[row + j] - v[i] * w[j].conj() - w[i] * v[j].conj();
            }
        }
        for i in 0..m {
            a[(k + 1 + i) * n + k] = T::zero();
            a[k * n + k + 1 + i] = T::zero();
        }
        a[(k + 1) * n + k] = alpha;
        a[k * n + k + 1] = alpha.conj();
        sub[k] = alpha;
        reflectors.push(Some((v, tau)));
    }
    if n >= 2 {
        sub[n - 2] = a[(n - 1) * n + n - 2];
    }
    let diag: Vec<f64> = (0..n).map(|i| a[i * n + i].re()).collect();
    let mut phases = vec![T::from_f64(1.0); n];
    let mut off = vec![0.0; n.saturating_sub(1)];
    for k in 0..n.saturating_sub(1) {
        off[k] = sub[k].abs2().sqrt();
        phases[k + 1] = sub[k].phase() * phases[k];
    }
    Tridiagonal {
        diag,
        off,
        reflectors,
        phases,
    }
}

/// Eigenvalues of a real symmetric tridiagonal matrix by implicit QL with
/// Wilkinson-type shifts, unsorted. `None` if some eigenvalue needs more than
/// `max_iter` sweeps.
pub fn tridiagonal_eigenvalues(diag: &[f64], off: &[f64], max_iter: usize) -> Option<Vec<f64>> {
    let n = diag.len();
    let mut d = diag.to_vec();
    let mut e = vec![0.0; n];
    e[..n.saturating_sub(1)].copy_from_slice(off);
    let tnorm = (0..n).fold(0.0f64, |m, i| {
        let left = if i > 0 { e[i - 1].abs() } else { 0.0 };
        m.max(d[i].abs() + e[i].abs() + left)
    });
    // relative test, plus an absolute floor for blocks whose diagonal is ~0
    let negligible = |e: f64, dd: f64| e.abs() <= f64::EPSILON * dd || e.abs() <= f64::EPSILON * tnorm;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                if negligible(e[m], d[m].abs() + d[m + 1].abs()) {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > max_iter {
                return None;
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut deflated = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Some(d)
}

impl<T: Field> Tridiagonal<T> {
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    /// Sorted eigenvalues.
    pub fn eigenvalues(&self, max_iter: usize) -> Option<Vec<f64>> {
        let mut ev = tridiagonal_eigenvalues(&self.diag, &self.off, max_iter)?;
        ev.sort_by(f64::total_cmp);
        Some(ev)
    }

    /// Approximate unit eigenvector of the original matrix for eigenvalue
    /// `lambda`, by inverse iteration on `T` and back-transformation.
    pub fn eigenvector(&self, lambda: f64) -> Vec<Complex64> {
        let n = self.n();
        let scale = self
            .diag
            .iter()
            .chain(&self.off)
            .fold(0.0f64, |m, x| m.max(x.abs()))
            .max(1.0);
        let mut y: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919) % 13) as f64 * 1e-3).collect();
        for _ in 0..3 {
            y = solve_shifted(&self.diag, &self.off, lambda, &y, scale);
            let norm = y.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                break;
            }
            y.iter_mut().for_each(|x| *x /= norm);
        }
        let mut z: Vec<T> = (0..n).map(|i| self.phases[i].scale(y[i])).collect();
        for (k, r) in self.reflectors.iter().enumerate().rev() {
            if let Some((v, tau)) = r {
                let tail = &mut z[k + 1..];
                let mut dot = T::zero();
                for (vi, zi) in v.iter().zip(tail.iter()) {
                    dot = dot + vi.conj() * *zi;
                }
                let dot = dot.scale(*tau);
                for (vi, zi) in v.iter().zip(tail.iter_mut()) {
                    *zi = *zi - *vi * dot;
                }
            }
        }
        z.into_iter().map(Field::to_c64).collect()
    }
}

/// Solves `(T − μ I) x = b` by Gaussian elimination with partial pivoting.
fn solve_shifted(diag: &[f64], off: &[f64], mu: f64, rhs: &[f64], scale: f64) -> Vec<f64> {
    let n = diag.len();
    let tiny = f64::EPSILON * scale;
    let mut b: Vec<f64> = diag.iter().map(|d| d - mu).collect();
    let mut a = off.to_vec();
    let mut c = off.to_vec();
    let mut d2 = vec![0.0; n];
    let mut r = rhs.to_vec();
    for i in 0..n.saturating_sub(1) {
        if b[i].abs() >= a[i].abs() {
            if b[i] == 0.0 {
                b[i] = tiny;
            }
            let f = a[i] / b[i];
            b[i + 1] -= f * c[i];
            r[i + 1] -= f * r[i];
            a[i] = 0.0;
        } else {
            let f = b[i] / a[i];
            b[i] = a[i];
            let tmp = b[i + 1];
            b[i + 1] = c[i] - f * tmp;
            if i + 2 < n {
                d2[i] = c[i + 1];
                c[i + 1] = -f * d2[i];
            }
            c[i] = tmp;
            r.swap(i, i + 1);
            r[i + 1] -= f * r[i];
        }
    }
    if n > 0 && b[n - 1] == 0.0 {
        b[n - 1] = tiny;
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = r[i];
        if i + 1 < n {
            s -= c[i] * x[i + 1];
        }
        if i + 2 < n {
            s -= d2[i] * x[i + 2];
        }
        x[i] = s / b[i];
    }
    x
}

/// Sorted eigenvalues of a real symmetric matrix (row-major).
pub fn symmetric_eigenvalues(a: Vec<f64>, n: usize) -> Option<Vec<f64>> {
    tridiagonalize(a, n).eigenvalues(60)
}

/// Sorted eigenvalues of a complex Hermitian matrix (row-major).
pub fn hermitian_eigenvalues(a: Vec<Complex64>, n: usize) -> Option<Vec<f64>> {
    tridiagonalize(a, n).eigenvalues(60)
}
