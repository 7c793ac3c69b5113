//! Age marching for linear autonomous, linear nonautonomous, inhomogeneous
//! and semilinear parabolic problems `d_a u + A(a) u = g - c u²`.

use rayon::prelude::*;

use crate::discretize::{age_integral_sampled, solve_tridiag, AgeSpaceField, Grid, SpatialProfile, TriDiagOp};
use crate::error::{Error, Result};
use crate::scalar::{max_norm, Real};
use crate::spectral::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepScheme {
    #[default]
    ImplicitEuler,
    CrankNicolson,
}

impl StepScheme {
    pub fn name(self) -> &'static str {
        match self {
            Self::ImplicitEuler => "implicit_euler",
            Self::CrankNicolson => "crank_nicolson",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "implicit_euler" => Some(Self::ImplicitEuler),
            "crank_nicolson" => Some(Self::CrankNicolson),
            _ => None,
        }
    }

    /// One-step amplification of the scalar problem `u' = -rate u`.
    pub fn scalar_factor<T: Real>(self, da: T, rate: T) -> T {
        match self {
            Self::ImplicitEuler => T::one() / (T::one() + da * rate),
            Self::CrankNicolson => {
                let half = da * rate / T::lit(2.0);
                (T::one() - half) / (T::one() + half)
            }
        }
    }
}

/// Operator family indexed by age node.
#[derive(Debug, Clone, Copy)]
pub enum AgeOps<'a, T> {
    Constant(&'a TriDiagOp<T>),
    /// One operator per age node, `n_a + 1` entries.
    PerAge(&'a [TriDiagOp<T>]),
}

impl<'a, T> AgeOps<'a, T> {
    pub fn at(&self, i: usize) -> &'a TriDiagOp<T> {
        match *self {
            Self::Constant(op) => op,
            Self::PerAge(ops) => &ops[i],
        }
    }

    fn len_ok(&self, n_a: usize) -> bool {
        match self {
            Self::Constant(_) => true,
            Self::PerAge(ops) => ops.len() == n_a + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarchResult<T> {
    pub field: AgeSpaceField<T>,
    pub min_value: T,
    pub steps: usize,
}

fn check_inputs<T: Real>(ops: &AgeOps<'_, T>, phi0: &[T], grid: &Grid<T>) -> Result<()> {
    if phi0.len() != grid.n_x {
        return Err(Error::Shape(format!("initial profile length {} vs n_x {}", phi0.len(), grid.n_x)));
    }
    if !ops.len_ok(grid.n_a) {
        return Err(Error::Shape("operator family must have one entry per age node".into()));
    }
    if ops.at(0).dim() != grid.n_x {
        return Err(Error::Shape("operator dimension vs n_x".into()));
    }
    Ok(())
}

fn finish<T: Real>(field: AgeSpaceField<T>, steps: usize) -> MarchResult<T> {
    let min_value = field.min();
    MarchResult { field, min_value, steps }
}

/// `psi(a_i) ≈ exp(-a_i A) psi0`.
pub fn semigroup_march<T: Real>(a: &TriDiagOp<T>, psi0: &[T], grid: &Grid<T>, scheme: StepScheme) -> Result<MarchResult<T>> {
    evolution_march(AgeOps::Constant(a), psi0, None, grid, scheme)
}

/// `phi(a_i) ≈ U(a_i, 0) phi0 + ∫_0^{a_i} U(a_i, s) g(s) ds`.
///
/// Implicit Euler samples the source at the new level; Crank-Nicolson
/// averages both levels.
pub fn evolution_march<T: Real>(
    ops: AgeOps<'_, T>,
    phi0: &[T],
    source: Option<&AgeSpaceField<T>>,
    grid: &Grid<T>,
    scheme: StepScheme,
) -> Result<MarchResult<T>> {
    semilinear_march(ops, T::zero(), phi0, source, grid, scheme)
}

/// March of `d_a u + A(a) u + c u² = g` with the quadratic term taken
/// implicitly; each step is closed by Newton's method on the tridiagonal
/// system. For `c >= 0`, `u0 >= 0`, `g >= 0` and M-matrix steps the
/// iterates stay non-negative.
pub fn semilinear_march<T: Real>(
    ops: AgeOps<'_, T>,
    quad_coeff: T,
    phi0: &[T],
    source: Option<&AgeSpaceField<T>>,
    grid: &Grid<T>,
    scheme: StepScheme,
) -> Result<MarchResult<T>> {
    check_inputs(&ops, phi0, grid)?;
    if let Some(g) = source {
        if g.rows() != grid.n_a + 1 || g.cols() != grid.n_x {
            return Err(Error::Shape("source field shape vs grid".into()));
        }
    }
    let n = grid.n_x;
    let da = grid.da;
    let half = da / T::lit(2.0);
    let mut field = AgeSpaceField::for_grid(grid);
    field.row_mut(0).copy_from_slice(phi0);

    // reuse the step matrix while the operator is age-independent
    let mut cached: Option<TriDiagOp<T>> = None;
    for i in 0..grid.n_a {
        let prev = field.row(i).to_vec();
        let (lhs, rhs, c_new) = match scheme {
            StepScheme::ImplicitEuler => {
                let lhs = match (&ops, &cached) {
                    (AgeOps::Constant(_), Some(m)) => m.clone(),
                    _ => ops.at(i + 1).affine(T::one(), da),
                };
                let mut rhs = prev;
                if let Some(g) = source {
                    for (r, s) in rhs.iter_mut().zip(g.row(i + 1)) {
                        *r = *r + da * *s;
                    }
                }
                (lhs, rhs, da * quad_coeff)
            }
            StepScheme::CrankNicolson => {
                let lhs = match (&ops, &cached) {
                    (AgeOps::Constant(_), Some(m)) => m.clone(),
                    _ => ops.at(i + 1).affine(T::one(), half),
                };
                let explicit = ops.at(i).affine(T::one(), -half);
                let mut rhs = explicit.apply(&prev);
                if quad_coeff != T::zero() {
                    for (r, p) in rhs.iter_mut().zip(&prev) {
                        *r = *r - half * quad_coeff * *p * *p;
                    }
                }
                if let Some(g) = source {
                    for ((r, s0), s1) in rhs.iter_mut().zip(g.row(i)).zip(g.row(i + 1)) {
                        *r = *r + half * (*s0 + *s1);
                    }
                }
                (lhs, rhs, half * quad_coeff)
            }
        };
        let next = if c_new == T::zero() {
            solve_tridiag(&lhs, &rhs)?
        } else {
            implicit_quadratic_step(&lhs, c_new, &rhs)?
        };
        if matches!(ops, AgeOps::Constant(_)) && cached.is_none() {
            cached = Some(lhs);
        }
        debug_assert_eq!(next.len(), n);
        field.row_mut(i + 1).copy_from_slice(&next);
    }
    Ok(finish(field, grid.n_a))
}

/// Dense renewal matrix `K = sum_i w_i s_i U(a_i, 0)`: column `j` is the
/// weighted age integral of the homogeneous march started from `e_j`.
/// Columns are marched in parallel and stored in fixed order.
pub fn renewal_matrix<T: Real>(
    ops: AgeOps<'_, T>,
    samples: &[T],
    grid: &Grid<T>,
    scheme: StepScheme,
) -> Result<DenseMatrix<T>> {
    let n = grid.n_x;
    let cols = (0..n)
        .into_par_iter()
        .map(|j| {
            let e = SpatialProfile::<T>::unit(n, j);
            let run = evolution_march(ops, &e, None, grid, scheme)?;
            Ok(age_integral_sampled(&run.field, samples, grid).into_inner())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DenseMatrix::from_columns(&cols))
}

/// Largest defect of the discrete step equations over all age steps, e.g.
/// `||(I + Δa A_{i+1}) u_{i+1} + Δa c u_{i+1}² - u_i - Δa g_{i+1}||_inf`
/// for implicit Euler. Zero up to round-off for any field produced by
/// [`semilinear_march`] with the same arguments.
pub fn march_defect<T: Real>(
    ops: AgeOps<'_, T>,
    quad_coeff: T,
    field: &AgeSpaceField<T>,
    source: Option<&AgeSpaceField<T>>,
    grid: &Grid<T>,
    scheme: StepScheme,
) -> Result<T> {
    check_inputs(&ops, field.row(0), grid)?;
    if field.rows() != grid.n_a + 1 {
        return Err(Error::Shape("field rows vs age nodes".into()));
    }
    let da = grid.da;
    let half = da / T::lit(2.0);
    let mut worst = T::zero();
    for i in 0..grid.n_a {
        let prev = field.row(i);
        let next = field.row(i + 1);
        let defect: Vec<T> = match scheme {
            StepScheme::ImplicitEuler => {
                let lhs = ops.at(i + 1).affine(T::one(), da).apply(next);
                (0..grid.n_x)
                    .map(|j| {
                        let g = source.map_or(T::zero(), |s| s.row(i + 1)[j]);
                        lhs[j] + da * quad_coeff * next[j] * next[j] - prev[j] - da * g
                    })
                    .collect()
            }
            StepScheme::CrankNicolson => {
                let lhs = ops.at(i + 1).affine(T::one(), half).apply(next);
                let rhs = ops.at(i).affine(T::one(), -half).apply(prev);
                (0..grid.n_x)
                    .map(|j| {
                        let g = source.map_or(T::zero(), |s| s.row(i)[j] + s.row(i + 1)[j]);
                        lhs[j] + half * quad_coeff * (next[j] * next[j] + prev[j] * prev[j]) - rhs[j] - half * g
                    })
                    .collect()
            }
        };
        worst = worst.max(max_norm(&defect));
    }
    Ok(worst)
}

/// Solves `M w + c w∘w = rhs` by Newton's method started from `M^{-1} rhs`.
fn implicit_quadratic_step<T: Real>(m: &TriDiagOp<T>, c: T, rhs: &[T]) -> Result<Vec<T>> {
    const MAX_ITER: usize = 60;
    let mut w = solve_tridiag(m, rhs)?;
    let two = T::lit(2.0);
    let tol = T::lit(4.0) * T::epsilon();
    let mut last = T::infinity();
    for _ in 0..MAX_ITER {
        let mw = m.apply(&w);
        let residual: Vec<T> = mw
            .iter()
            .zip(&w)
            .zip(rhs)
            .map(|((a, x), r)| *a + c * *x * *x - *r)
            .collect();
        let jac = m.plus_diagonal(&w.iter().map(|x| two * c * *x).collect::<Vec<_>>());
        let delta = solve_tridiag(&jac, &residual)?;
        for (x, d) in w.iter_mut().zip(&delta) {
            *x = *x - *d;
        }
        let size = max_norm(&delta);
        let scale = max_norm(&w).max(T::min_positive_value());
        if size <= tol * scale || (size >= last && size <= T::lit(1e3) * tol * scale) {
            return Ok(w);
        }
        last = size;
    }
    Err(Error::NoConvergence {
        what: "implicit quadratic step",
        iterations: MAX_ITER,
        residual: last.to_f64_lossy(),
    })
}
