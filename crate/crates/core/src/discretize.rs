//! Uniform age × space grids, divergence-form tridiagonal operators with
//! homogeneous Dirichlet conditions, and trapezoid age quadrature.
//!
//! Space nodes are numbered `0..=n_x+1`; nodes `0` and `n_x+1` carry the
//! boundary value zero and are never stored in a [`SpatialProfile`].

use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};
use crate::model::AgeProfile;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    pub length: T,
    pub n_x: usize,
    pub h: T,
    pub a_max: T,
    pub n_a: usize,
    pub da: T,
    weights: Vec<T>,
}

impl<T: Real> Grid<T> {
    pub fn new(length: T, n_x: usize, a_max: T, n_a: usize) -> Result<Self> {
        if n_x < 3 {
            return Err(Error::InvalidGrid(format!("n_x = {n_x} < 3")));
        }
        if n_a < 2 {
            return Err(Error::InvalidGrid(format!("n_a = {n_a} < 2")));
        }
        if !(length > T::zero() && length.is_finite()) {
            return Err(Error::InvalidGrid(format!("length = {length} must be positive")));
        }
        if !(a_max > T::zero() && a_max.is_finite()) {
            return Err(Error::InvalidGrid(format!("a_max = {a_max} must be positive")));
        }
        let h = length / T::from_count(n_x + 1);
        let da = a_max / T::from_count(n_a);
        let half = da / T::lit(2.0);
        let weights = (0..=n_a)
            .map(|i| if i == 0 || i == n_a { half } else { da })
            .collect();
        Ok(Self {
            length,
            n_x,
            h,
            a_max,
            n_a,
            da,
            weights,
        })
    }

    /// Same domain with both resolutions multiplied by `factor`
    /// (`n_x + 1` and `n_a` scale, so coarse nodes stay nodes).
    pub fn refined(&self, factor: usize) -> Result<Self> {
        Self::new(
            self.length,
            (self.n_x + 1) * factor - 1,
            self.a_max,
            self.n_a * factor,
        )
    }

    /// Trapezoid weights `w_0..w_{n_a}`.
    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn age(&self, i: usize) -> T {
        T::from_count(i) * self.da
    }

    /// Interior node coordinate `x_j`, `j = 1..=n_x`.
    pub fn x(&self, j: usize) -> T {
        T::from_count(j) * self.h
    }

    /// Interior node coordinates in storage order.
    pub fn interior_nodes(&self) -> Vec<T> {
        (1..=self.n_x).map(|j| self.x(j)).collect()
    }

    /// All node coordinates including both boundary nodes.
    pub fn all_nodes(&self) -> Vec<T> {
        (0..=self.n_x + 1).map(|j| self.x(j)).collect()
    }

    /// Euclidean inner product on interior nodes scaled by `h`.
    pub fn space_dot(&self, a: &[T], b: &[T]) -> T {
        crate::scalar::dot(a, b) * self.h
    }

    /// Profile values sampled at the age nodes.
    pub fn sample(&self, profile: &AgeProfile<T>) -> Vec<T> {
        (0..=self.n_a).map(|i| profile.eval(self.age(i))).collect()
    }
}

/// Values at the interior space nodes; boundary values are zero.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpatialProfile<T>(pub Vec<T>);

impl<T: Real> SpatialProfile<T> {
    pub fn zeros(n: usize) -> Self {
        Self(vec![T::zero(); n])
    }

    pub fn from_fn(grid: &Grid<T>, f: impl Fn(T) -> T) -> Self {
        Self((1..=grid.n_x).map(|j| f(grid.x(j))).collect())
    }

    pub fn unit(n: usize, j: usize) -> Self {
        let mut v = vec![T::zero(); n];
        v[j] = T::one();
        Self(v)
    }

    /// Values at all nodes with the Dirichlet zeros attached.
    pub fn with_boundary(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.0.len() + 2);
        out.push(T::zero());
        out.extend_from_slice(&self.0);
        out.push(T::zero());
        out
    }

    pub fn norm_max(&self) -> T {
        crate::scalar::max_norm(&self.0)
    }

    pub fn scaled(&self, c: T) -> Self {
        Self(self.0.iter().map(|x| *x * c).collect())
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }
}

impl<T> Deref for SpatialProfile<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.0
    }
}

impl<T> DerefMut for SpatialProfile<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        &mut self.0
    }
}

impl<T> From<Vec<T>> for SpatialProfile<T> {
    fn from(v: Vec<T>) -> Self {
        Self(v)
    }
}

/// Age-major field: row `i` is the spatial profile at age `a_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgeSpaceField<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> AgeSpaceField<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn for_grid(grid: &Grid<T>) -> Self {
        Self::zeros(grid.n_a + 1, grid.n_x)
    }

    pub fn from_fn(grid: &Grid<T>, f: impl Fn(T, T) -> T) -> Self {
        let mut out = Self::for_grid(grid);
        for i in 0..=grid.n_a {
            let a = grid.age(i);
            for j in 0..grid.n_x {
                out.data[i * grid.n_x + j] = f(a, grid.x(j + 1));
            }
        }
        out
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        let n = rows.len();
        Ok(Self {
            rows: n,
            cols,
            data: rows.into_iter().flatten().collect(),
        })
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

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn norm_max(&self) -> T {
        crate::scalar::max_norm(&self.data)
    }

    pub fn min(&self) -> T {
        crate::scalar::min_value(&self.data)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.data.iter().all(|x| *x >= T::zero())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| f(*x)).collect(),
        }
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: T, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| *a + c * *b)
                .collect(),
        }
    }

    /// Trapezoid-in-age, `h`-weighted-in-space inner product.
    pub fn inner(&self, other: &Self, grid: &Grid<T>) -> T {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        grid.weights()
            .iter()
            .enumerate()
            .map(|(i, w)| *w * grid.space_dot(self.row(i), other.row(i)))
            .sum()
    }
}

/// Tridiagonal operator on the interior nodes. `sub[0]` and `sup[n-1]` are
/// stored as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TriDiagOp<T> {
    pub sub: Vec<T>,
    pub diag: Vec<T>,
    pub sup: Vec<T>,
}

impl<T: Real> TriDiagOp<T> {
    pub fn identity(n: usize) -> Self {
        Self {
            sub: vec![T::zero(); n],
            diag: vec![T::one(); n],
            sup: vec![T::zero(); n],
        }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        let n = self.dim();
        assert_eq!(x.len(), n);
        (0..n)
            .map(|j| {
                let mut y = self.diag[j] * x[j];
                if j > 0 {
                    y = y + self.sub[j] * x[j - 1];
                }
                if j + 1 < n {
                    y = y + self.sup[j] * x[j + 1];
                }
                y
            })
            .collect()
    }

    /// `shift * I + scale * self`.
    pub fn affine(&self, shift: T, scale: T) -> Self {
        Self {
            sub: self.sub.iter().map(|x| scale * *x).collect(),
            diag: self.diag.iter().map(|x| shift + scale * *x).collect(),
            sup: self.sup.iter().map(|x| scale * *x).collect(),
        }
    }

    /// `self + diag(extra)`.
    pub fn plus_diagonal(&self, extra: &[T]) -> Self {
        assert_eq!(extra.len(), self.dim());
        let mut out = self.clone();
        for (d, e) in out.diag.iter_mut().zip(extra) {
            *d = *d + *e;
        }
        out
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let n = self.dim();
        let mut m = vec![vec![T::zero(); n]; n];
        for j in 0..n {
            m[j][j] = self.diag[j];
            if j > 0 {
                m[j][j - 1] = self.sub[j];
            }
            if j + 1 < n {
                m[j][j + 1] = self.sup[j];
            }
        }
        m
    }

    pub fn is_symmetric(&self) -> bool {
        (1..self.dim()).all(|j| self.sub[j] == self.sup[j - 1])
    }

    /// Positive diagonal, non-positive off-diagonals and non-negative
    /// column sums.
    pub fn is_m_matrix(&self) -> bool {
        let n = self.dim();
        let offdiag_ok = (0..n).all(|j| {
            (j == 0 || self.sub[j] <= T::zero()) && (j + 1 == n || self.sup[j] <= T::zero())
        });
        let tol = T::lit(64.0) * T::epsilon();
        let colsum_ok = (0..n).all(|j| {
            let mut s = self.diag[j];
            let mut scale = self.diag[j].abs();
            if j > 0 {
                s = s + self.sup[j - 1];
                scale = scale + self.sup[j - 1].abs();
            }
            if j + 1 < n {
                s = s + self.sub[j + 1];
                scale = scale + self.sub[j + 1].abs();
            }
            s >= -tol * scale
        });
        self.diag.iter().all(|d| *d > T::zero()) && offdiag_ok && colsum_ok
    }
}

/// Flux-form operator `L phi = -d/dx (p phi' + phi q') + r phi` on the
/// interior nodes, without any sign requirement on `p`.
///
/// `p` and `q` hold values at all `n_x + 2` nodes, `r` at the interior nodes.
pub(crate) fn flux_operator<T: Real>(h: T, p: &[T], q: &[T], r: &[T]) -> TriDiagOp<T> {
    let n = r.len();
    assert_eq!(p.len(), n + 2);
    assert_eq!(q.len(), n + 2);
    let two = T::lit(2.0);
    let mut sub = vec![T::zero(); n];
    let mut diag = vec![T::zero(); n];
    let mut sup = vec![T::zero(); n];
    for k in 0..n {
        // extended index of the interior node
        let j = k + 1;
        let p_plus = (p[j] + p[j + 1]) / two;
        let p_minus = (p[j - 1] + p[j]) / two;
        let q_plus = (q[j + 1] - q[j]) / h;
        let q_minus = (q[j] - q[j - 1]) / h;
        sup[k] = -(p_plus / h + q_plus / two) / h;
        sub[k] = (-p_minus / h + q_minus / two) / h;
        diag[k] = (p_plus / h - q_plus / two + p_minus / h + q_minus / two) / h + r[k];
    }
    sub[0] = T::zero();
    sup[n - 1] = T::zero();
    TriDiagOp { sub, diag, sup }
}

/// Assembles `L phi = -d/dx (p phi' + phi q') + r phi` with interface values
/// `p_{j+1/2} = (p_j + p_{j+1}) / 2` and centered drift.
///
/// Rejects non-positive `p`. Logs a warning when the mesh Péclet number
/// `|q_{j+1} - q_j| / (2 p_{j+1/2})` reaches one, since the result then
/// loses the M-matrix sign pattern.
pub fn assemble_elliptic<T: Real>(grid: &Grid<T>, p: &[T], q: &[T], r: &[T]) -> Result<TriDiagOp<T>> {
    let n = grid.n_x;
    if p.len() != n + 2 || q.len() != n + 2 || r.len() != n {
        return Err(Error::Shape(format!(
            "assemble_elliptic expects p,q of length {} and r of length {n}, got {}, {}, {}",
            n + 2,
            p.len(),
            q.len(),
            r.len()
        )));
    }
    if let Some((node, value)) = p
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v > T::zero()) || !v.is_finite())
    {
        return Err(Error::NonPositiveDiffusion {
            node,
            value: value.to_f64_lossy(),
        });
    }
    let peclet = (0..=n)
        .map(|j| (q[j + 1] - q[j]).abs() / (p[j] + p[j + 1]))
        .fold(T::zero(), |m, x| m.max(x));
    if peclet >= T::one() {
        log::warn!("mesh Péclet number {peclet} >= 1: operator is not an M-matrix");
    }
    Ok(flux_operator(grid.h, p, q, r))
}

/// Trapezoid age integral `sum_i w_i profile(a_i) field[i][j]`.
pub fn age_integral<T: Real>(field: &AgeSpaceField<T>, profile: &AgeProfile<T>, grid: &Grid<T>) -> SpatialProfile<T> {
    age_integral_sampled(field, &grid.sample(profile), grid)
}

/// [`age_integral`] with the profile already sampled at the age nodes.
pub fn age_integral_sampled<T: Real>(field: &AgeSpaceField<T>, samples: &[T], grid: &Grid<T>) -> SpatialProfile<T> {
    assert_eq!(field.rows(), grid.n_a + 1, "field rows vs age nodes");
    assert_eq!(samples.len(), grid.n_a + 1, "profile samples vs age nodes");
    let mut out = vec![T::zero(); field.cols()];
    for (i, (w, s)) in grid.weights().iter().zip(samples).enumerate() {
        let c = *w * *s;
        if c == T::zero() {
            continue;
        }
        for (o, x) in out.iter_mut().zip(field.row(i)) {
            *o = *o + c * *x;
        }
    }
    SpatialProfile(out)
}

/// Thomas algorithm. A pivot that vanishes relative to the operator's scale
/// is reported as [`Error::Singular`].
pub fn solve_tridiag<T: Real>(op: &TriDiagOp<T>, rhs: &[T]) -> Result<Vec<T>> {
    let n = op.dim();
    if rhs.len() != n {
        return Err(Error::Shape(format!("rhs length {} vs operator {n}", rhs.len())));
    }
    let scale = op
        .diag
        .iter()
        .chain(&op.sub)
        .chain(&op.sup)
        .fold(T::zero(), |m, x| m.max(x.abs()));
    let tiny = scale * T::epsilon() * T::from_count(n);
    let mut c = vec![T::zero(); n];
    let mut d = vec![T::zero(); n];
    let mut pivot = op.diag[0];
    if !(pivot.abs() > tiny) {
        return Err(Error::Singular { row: 0 });
    }
    c[0] = op.sup[0] / pivot;
    d[0] = rhs[0] / pivot;
    for j in 1..n {
        pivot = op.diag[j] - op.sub[j] * c[j - 1];
        if !(pivot.abs() > tiny) {
            return Err(Error::Singular { row: j });
        }
        c[j] = if j + 1 < n { op.sup[j] / pivot } else { T::zero() };
        d[j] = (rhs[j] - op.sub[j] * d[j - 1]) / pivot;
    }
    for j in (0..n - 1).rev() {
        d[j] = d[j] - c[j] * d[j + 1];
    }
    Ok(d)
}
