//! Perron eigenpairs of positive operators, dense spectra and dense solves.

use std::ops::{Index, IndexMut};

use nalgebra::DMatrix;
use num_complex::Complex;

use crate::discretize::SpatialProfile;
use crate::error::{Error, Result};
use crate::scalar::{dot, max_norm, Real};

/// Row-major dense square or rectangular matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Self {
            rows: r,
            cols: c,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    /// Builds a matrix from its columns.
    pub fn from_columns(cols: &[Vec<T>]) -> Self {
        let c = cols.len();
        let r = cols.first().map_or(0, Vec::len);
        let mut m = Self::zeros(r, c);
        for (j, col) in cols.iter().enumerate() {
            assert_eq!(col.len(), r, "ragged columns");
            for (i, v) in col.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> T) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scaled(&self, c: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| *x * c).collect(),
        }
    }

    /// `shift * I + scale * self`.
    pub fn affine(&self, shift: T, scale: T) -> Self {
        assert_eq!(self.rows, self.cols);
        let mut m = self.scaled(scale);
        for i in 0..self.rows {
            m[(i, i)] = m[(i, i)] + shift;
        }
        m
    }

    pub fn max_abs(&self) -> T {
        max_norm(&self.data)
    }

    pub fn max_diff(&self, other: &Self) -> T {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        crate::scalar::max_diff(&self.data, &other.data)
    }

    pub fn min_entry(&self) -> T {
        crate::scalar::min_value(&self.data)
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] = out[(i, j)] + a * other[(k, j)];
                }
            }
        }
        out
    }
}

impl<T> Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for DenseMatrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerronPair<T> {
    pub radius: T,
    /// Max-norm one, entrywise positive.
    pub vector: SpatialProfile<T>,
    /// `1 - |lambda_2| / radius`.
    pub gap: T,
    pub iterations: usize,
    /// `||K v - radius v||_inf`.
    pub residual: T,
}

/// Power iteration from the all-ones vector with max-norm normalization and
/// Rayleigh-quotient radius.
///
/// Converges once successive radius estimates and the eigen-residual are
/// both within `tol` relative to the radius. The second eigenvalue modulus
/// comes from one power run on the Brauer deflation `K - r v vᵀ / vᵀv`,
/// whose spectrum is that of `K` with the Perron root replaced by zero.
pub fn perron<T, F>(apply: F, dim: usize, tol: T, max_iter: usize) -> Result<PerronPair<T>>
where
    T: Real,
    F: Fn(&[T]) -> Vec<T>,
{
    let mut v = vec![T::one(); dim];
    let mut w = apply(&v);
    if w.iter().any(|x| !(*x > T::zero())) {
        return Err(Error::NotStronglyPositive(
            "image of the all-ones vector is not strictly positive".into(),
        ));
    }
    let mut radius = T::zero();
    let mut residual = T::infinity();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let m = max_norm(&w);
        v = w.iter().map(|x| *x / m).collect();
        w = apply(&v);
        if w.iter().any(|x| !(*x > T::zero())) {
            return Err(Error::NotStronglyPositive(format!(
                "non-positive iterate at step {iterations}"
            )));
        }
        let r = dot(&v, &w) / dot(&v, &v);
        residual = w
            .iter()
            .zip(&v)
            .fold(T::zero(), |acc, (a, b)| acc.max((*a - r * *b).abs()));
        let settled = (r - radius).abs() <= tol * r && residual <= tol * r;
        radius = r;
        if settled {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            what: "Perron power iteration",
            iterations,
            residual: residual.to_f64_lossy(),
        });
    }
    // a reducible operator drives some Perron entries to round-off level
    let floor = T::epsilon().sqrt();
    if let Some(j) = v.iter().position(|x| !(*x > floor)) {
        return Err(Error::NotStronglyPositive(format!(
            "Perron vector vanishes at index {j}"
        )));
    }
    let second = deflated_modulus(&apply, &v, radius, max_iter.clamp(50, 400));
    Ok(PerronPair {
        radius,
        vector: SpatialProfile(v),
        gap: T::one() - second / radius,
        iterations,
        residual,
    })
}

fn deflated_modulus<T, F>(apply: &F, v: &[T], radius: T, iters: usize) -> T
where
    T: Real,
    F: Fn(&[T]) -> Vec<T>,
{
    let dim = v.len();
    if dim < 2 {
        return T::zero();
    }
    let vv = dot(v, v);
    let deflate = |x: &[T]| -> Vec<T> {
        let c = radius * dot(v, x) / vv;
        apply(x).iter().zip(v).map(|(a, b)| *a - c * *b).collect()
    };
    // deterministic start with generic overlap
    let mut x: Vec<T> = (0..dim)
        .map(|j| T::lit(((j as f64 + 1.0) * 0.754_877_666).sin() + 1.5))
        .collect();
    let n0 = max_norm(&x);
    x.iter_mut().for_each(|e| *e = *e / n0);
    let window = (iters / 4).max(1);
    let mut log_growth = T::zero();
    for k in 0..iters {
        let y = deflate(&x);
        let n = max_norm(&y);
        if !(n > T::zero()) {
            return T::zero();
        }
        if k >= iters - window {
            log_growth = log_growth + n.ln();
        }
        x = y.iter().map(|e| *e / n).collect();
    }
    (log_growth / T::from_count(window)).exp()
}

/// Perron pair of a dense matrix.
pub fn perron_dense<T: Real>(k: &DenseMatrix<T>, tol: T, max_iter: usize) -> Result<PerronPair<T>> {
    assert_eq!(k.rows(), k.cols());
    perron(|x| k.matvec(x), k.rows(), tol, max_iter)
}

/// All eigenvalues via a real Schur decomposition (computed in `f64`).
/// Intended for oracles and diagnostics on small matrices.
pub fn dense_spectrum<T: Real>(k: &DenseMatrix<T>) -> Result<Vec<Complex<T>>> {
    let n = k.rows();
    if n != k.cols() || n > 512 {
        return Err(Error::Shape(format!("dense_spectrum expects a square matrix of size <= 512, got {}x{}", n, k.cols())));
    }
    let m = DMatrix::<f64>::from_fn(n, n, |i, j| k[(i, j)].to_f64_lossy());
    let schur = nalgebra::linalg::Schur::try_new(m, f64::EPSILON, 100 * n.max(10)).ok_or(Error::NoConvergence {
        what: "Schur decomposition",
        iterations: 100 * n.max(10),
        residual: f64::NAN,
    })?;
    let mut eig: Vec<Complex<T>> = schur
        .complex_eigenvalues()
        .iter()
        .map(|z| Complex::new(T::lit(z.re), T::lit(z.im)))
        .collect();
    eig.sort_by(|a, b| {
        b.norm()
            .partial_cmp(&a.norm())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(b.re.partial_cmp(&a.re).unwrap_or(std::cmp::Ordering::Equal))
    });
    Ok(eig)
}

/// Largest eigenvalue modulus from [`dense_spectrum`].
pub fn dense_spectral_radius<T: Real>(k: &DenseMatrix<T>) -> Result<T> {
    Ok(dense_spectrum(k)?.iter().map(|z| z.norm()).fold(T::zero(), T::max))
}

/// Gaussian elimination with partial pivoting.
pub fn solve_dense<T: Real>(m: &DenseMatrix<T>, rhs: &[T]) -> Result<Vec<T>> {
    let n = m.rows();
    if n != m.cols() || rhs.len() != n {
        return Err(Error::Shape(format!("solve_dense: {}x{} matrix with rhs {}", n, m.cols(), rhs.len())));
    }
    let mut a = m.clone();
    let mut b = rhs.to_vec();
    let tiny = m.max_abs() * T::epsilon() * T::from_count(n.max(1)) * T::lit(4.0);
    for col in 0..n {
        let (piv, best) = (col..n)
            .map(|i| (i, a[(i, col)].abs()))
            .fold((col, -T::one()), |acc, x| if x.1 > acc.1 { x } else { acc });
        if !(best > tiny) {
            return Err(Error::Singular { row: col });
        }
        if piv != col {
            for j in 0..n {
                a.data.swap(col * n + j, piv * n + j);
            }
            b.swap(col, piv);
        }
        let p = a[(col, col)];
        for i in col + 1..n {
            let f = a[(i, col)] / p;
            if f == T::zero() {
                continue;
            }
            for j in col..n {
                a[(i, j)] = a[(i, j)] - f * a[(col, j)];
            }
            b[i] = b[i] - f * b[col];
        }
    }
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        let s = (i + 1..n).fold(b[i], |s, j| s - a[(i, j)] * x[j]);
        x[i] = s / a[(i, i)];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn symmetric_two_by_two() {
        let k = DenseMatrix::<f64>::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let p = perron_dense(&k, 1e-13, 1000).unwrap();
        assert!((p.radius - 3.0).abs() < 1e-12);
        assert!(crate::scalar::max_diff(&p.vector, &[1.0, 1.0]) < 1e-12);
        assert!((p.gap - 2.0 / 3.0).abs() < 1e-6);
        let eig = dense_spectrum(&k).unwrap();
        assert!((eig[0].re - 3.0).abs() < 1e-12 && (eig[1].re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reducible_matrix_is_reported() {
        let k = DenseMatrix::<f64>::from_rows(&[vec![5.0, 0.0], vec![0.0, 1.0]]);
        assert!(matches!(perron_dense(&k, 1e-12, 10_000), Err(Error::NotStronglyPositive(_))));
        let z = DenseMatrix::<f64>::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        assert!(matches!(perron_dense(&z, 1e-12, 100), Err(Error::NotStronglyPositive(_))));
    }

    #[test]
    fn stencil_spectrum() {
        let k = DenseMatrix::<f64>::from_rows(&[vec![32.0, -16.0, 0.0], vec![-16.0, 32.0, -16.0], vec![0.0, -16.0, 32.0]]);
        let mut eig: Vec<f64> = dense_spectrum(&k).unwrap().iter().map(|z| z.re).collect();
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (kk, e) in eig.iter().enumerate() {
            let expected = 32.0 * (1.0 - ((kk + 1) as f64 * std::f64::consts::PI / 4.0).cos());
            assert!((e - expected).abs() < 1e-12);
        }
        assert!((eig[0] - 9.3726).abs() < 1e-4 && (eig[2] - 54.6274).abs() < 1e-4);
    }

    #[test]
    fn trace_identity_random_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut k = DenseMatrix::<f64>::zeros(10, 10);
        for i in 0..10 {
            for j in 0..=i {
                let v: f64 = rng.gen_range(-1.0..1.0);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        let trace: f64 = (0..10).map(|i| k[(i, i)]).sum();
        let sum: f64 = dense_spectrum(&k).unwrap().iter().map(|z| z.re).sum();
        assert!((trace - sum).abs() <= 1e-10 * trace.abs().max(1.0));
    }

    #[test]
    fn solve_dense_cases() {
        let id = DenseMatrix::<f64>::identity(4);
        assert_eq!(solve_dense(&id, &[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        let s = DenseMatrix::<f64>::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert!(matches!(solve_dense(&s, &[1.0, 2.0]), Err(Error::Singular { .. })));

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut m = DenseMatrix::<f64>::zeros(12, 12);
        for i in 0..12 {
            for j in 0..12 {
                m[(i, j)] = if i == j { 5.0 } else { rng.gen_range(-1.0..1.0) };
            }
        }
        let rhs: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = solve_dense(&m, &rhs).unwrap();
        let r = m.matvec(&x);
        assert!(crate::scalar::max_diff(&r, &rhs) <= 1e-12 * max_norm(&rhs));
    }

    #[test]
    fn left_right_and_scaling_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut k = DenseMatrix::<f64>::zeros(8, 8);
        for i in 0..8 {
            for j in 0..8 {
                k[(i, j)] = rng.gen_range(0.1..1.0);
            }
        }
        let right = perron_dense(&k, 1e-13, 1000).unwrap();
        let left = perron_dense(&k.transpose(), 1e-13, 1000).unwrap();
        assert!((right.radius - left.radius).abs() <= 1e-8 * right.radius);
        let scaled = perron_dense(&k.scaled(3.5), 1e-13, 1000).unwrap();
        assert!((scaled.radius - 3.5 * right.radius).abs() <= 1e-10 * scaled.radius);
        assert!(right.vector.iter().all(|x| *x > 0.0));
        let dense = dense_spectral_radius(&k).unwrap();
        assert!((dense - right.radius).abs() <= 1e-10 * dense);
    }
}
