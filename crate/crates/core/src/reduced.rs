//! Single-species problem with `v ≡ 0`:
//! `d_a u - Δu = -α u²`, `u(0) = η ∫ b u da`, Dirichlet in space.
//!
//! Solved by shooting in age: Newton on the initial trace `u0`, with the
//! Jacobian `I - η G₁` assembled from marches of the linearized operator
//! `-Δ + 2α u(a)`.

use crate::discretize::{age_integral_sampled, AgeSpaceField, Grid, SpatialProfile, TriDiagOp};
use crate::error::{Error, Result};
use crate::evolve::{renewal_matrix, semilinear_march, AgeOps, StepScheme};
use crate::model::{coefficient_operator, ModelSpec};
use crate::scalar::{max_norm, min_value, Real};
use crate::spectral::{perron_dense, solve_dense, DenseMatrix};

#[derive(Debug, Clone, Copy)]
pub struct ReducedOptions<T> {
    /// Bound on `||u0 - η ∫ b u da||_inf`.
    pub tol: T,
    pub max_iter: usize,
    pub scheme: StepScheme,
    /// Damping of the Picard fallback.
    pub picard_theta: T,
}

impl<T: Real> Default for ReducedOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-11),
            max_iter: 100,
            scheme: StepScheme::ImplicitEuler,
            picard_theta: T::lit(0.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSolution<T> {
    pub eta: T,
    pub field: AgeSpaceField<T>,
    pub trace0: SpatialProfile<T>,
    pub residual: T,
    pub newton_iters: usize,
}

impl<T: Real> ReducedSolution<T> {
    pub fn is_trivial(&self) -> bool {
        self.trace0.iter().all(|x| *x == T::zero())
    }
}

/// Spatial operator of the first species at `V̂ = 0`.
pub fn base_operator<T: Real>(spec: &ModelSpec<T>, grid: &Grid<T>) -> Result<TriDiagOp<T>> {
    coefficient_operator(grid, &spec.d1, &spec.d2, &spec.mu1, &vec![T::zero(); grid.n_x])
}

/// Marching problem behind the residual, kept together so that every
/// evaluation uses identical arithmetic.
pub(crate) struct Renewal<'a, T> {
    pub op: &'a TriDiagOp<T>,
    pub quad: T,
    pub fertility: T,
    pub birth: &'a [T],
    pub grid: &'a Grid<T>,
    pub scheme: StepScheme,
}

impl<T: Real> Renewal<'_, T> {
    /// `(field, u0 - fertility ∫ b u da)`.
    pub fn eval(&self, u0: &[T]) -> Result<(AgeSpaceField<T>, Vec<T>)> {
        let run = semilinear_march(AgeOps::Constant(self.op), self.quad, u0, None, self.grid, self.scheme)?;
        let integral = age_integral_sampled(&run.field, self.birth, self.grid);
        let r = u0
            .iter()
            .zip(integral.iter())
            .map(|(u, b)| *u - self.fertility * *b)
            .collect();
        Ok((run.field, r))
    }

    /// Operators `op + k·quad·diag(u(a_i))` per age node.
    pub fn linear_family(&self, field: &AgeSpaceField<T>, k: T) -> Vec<TriDiagOp<T>> {
        (0..field.rows())
            .map(|i| {
                let shift: Vec<T> = field.row(i).iter().map(|u| k * self.quad * *u).collect();
                self.op.plus_diagonal(&shift)
            })
            .collect()
    }

    fn picard(&self, u0: &[T], theta: T) -> Result<Vec<T>> {
        let (_, r) = self.eval(u0)?;
        Ok(u0.iter().zip(&r).map(|(u, ri)| (*u - theta * *ri).max(T::zero())).collect())
    }
}

/// `G₁ = ∫ b U₁(a, 0) da` for the generator `L + 2α u(a)`.
pub fn g1_matrix<T: Real>(spec: &ModelSpec<T>, grid: &Grid<T>, sol: &ReducedSolution<T>, scheme: StepScheme) -> Result<DenseMatrix<T>> {
    linearized_renewal(spec, grid, &sol.field, T::lit(2.0), scheme)
}

/// `G₂ = ∫ b U₂(a, 0) da` for the generator `L + α u(a)`; a solution of the
/// reduced problem satisfies `u(0) = η G₂ u(0)`.
pub fn g2_matrix<T: Real>(spec: &ModelSpec<T>, grid: &Grid<T>, sol: &ReducedSolution<T>, scheme: StepScheme) -> Result<DenseMatrix<T>> {
    linearized_renewal(spec, grid, &sol.field, T::one(), scheme)
}

fn linearized_renewal<T: Real>(
    spec: &ModelSpec<T>,
    grid: &Grid<T>,
    field: &AgeSpaceField<T>,
    k: T,
    scheme: StepScheme,
) -> Result<DenseMatrix<T>> {
    let op = base_operator(spec, grid)?;
    let birth = grid.sample(&spec.birth);
    let problem = Renewal {
        op: &op,
        quad: spec.alpha,
        fertility: T::one(),
        birth: &birth,
        grid,
        scheme,
    };
    let family = problem.linear_family(field, k);
    renewal_matrix(AgeOps::PerAge(&family), &birth, grid, scheme)
}

/// Initial guess `0.5 (η - 1) sin(π x / L)`, clipped at zero.
pub fn cold_start<T: Real>(grid: &Grid<T>, eta: T) -> SpatialProfile<T> {
    let amp = (T::lit(0.5) * (eta - T::one())).max(T::zero());
    SpatialProfile::from_fn(grid, |x| amp * (T::PI() * x / grid.length).sin())
}

/// Newton shooting for the reduced problem.
///
/// Below the threshold `η r(G(0)) <= 1` negative Newton iterates are
/// clipped to zero, and two consecutive clipped steps insert a short run of
/// damped Picard iterations. Above it a step that leaves the cone is
/// replaced by that Picard run straight away, so the iteration cannot land
/// on the trivial root. With
/// `α = 0` the problem is linear and only the zero solution exists unless
/// `η r(G) = 1`, which is reported as [`Error::Degenerate`].
pub fn solve_reduced<T: Real>(
    spec: &ModelSpec<T>,
    grid: &Grid<T>,
    eta: T,
    init: Option<&[T]>,
    opts: &ReducedOptions<T>,
) -> Result<ReducedSolution<T>> {
    if !(eta >= T::zero()) {
        return Err(Error::Model(format!("fertility eta = {eta} must be non-negative")));
    }
    let op = base_operator(spec, grid)?;
    let birth = grid.sample(&spec.birth);
    let problem = Renewal {
        op: &op,
        quad: spec.alpha,
        fertility: eta,
        birth: &birth,
        grid,
        scheme: opts.scheme,
    };

    if spec.alpha == T::zero() {
        let g = renewal_matrix(AgeOps::Constant(&op), &birth, grid, opts.scheme)?;
        let r = perron_dense(&g, T::lit(1e-13), 10_000)?.radius;
        let dist = (eta * r - T::one()).abs();
        if dist <= opts.tol.sqrt() {
            return Err(Error::Degenerate(format!(
                "linear renewal operator has eta*r(G) = {} (distance {dist:e} from 1): Jacobian is singular",
                eta * r
            )));
        }
        let zero = vec![T::zero(); grid.n_x];
        let (field, _) = problem.eval(&zero)?;
        return Ok(ReducedSolution {
            eta,
            field,
            trace0: SpatialProfile(zero),
            residual: T::zero(),
            newton_iters: 0,
        });
    }

    // effective threshold: the trivial trace is the only non-negative
    // solution iff eta * r(G(0)) <= 1
    let g0 = renewal_matrix(AgeOps::Constant(&op), &birth, grid, opts.scheme)?;
    let effective = eta * perron_dense(&g0, T::lit(1e-13), 10_000)?.radius;
    let supercritical = effective > T::one();

    let mut u0: Vec<T> = match init {
        Some(v) => {
            if v.len() != grid.n_x {
                return Err(Error::Shape(format!("initial trace length {} vs n_x {}", v.len(), grid.n_x)));
            }
            v.iter().map(|x| x.max(T::zero())).collect()
        }
        None => cold_start(grid, effective).into_inner(),
    };
    if supercritical && u0.iter().all(|x| *x == T::zero()) {
        u0 = cold_start(grid, effective).into_inner();
    }
    let n = grid.n_x;
    let mut clipped_in_row = 0;
    let mut last_residual = T::infinity();
    for iter in 0..=opts.max_iter {
        let (field, r) = problem.eval(&u0)?;
        let res = max_norm(&r);
        last_residual = res;
        if !res.is_finite() {
            break;
        }
        if res <= opts.tol {
            return Ok(ReducedSolution {
                eta,
                field,
                trace0: SpatialProfile(u0),
                residual: res,
                newton_iters: iter,
            });
        }
        if iter == opts.max_iter {
            break;
        }
        let family = problem.linear_family(&field, T::lit(2.0));
        let g1 = renewal_matrix(AgeOps::PerAge(&family), &birth, grid, opts.scheme)?;
        let jac = DenseMatrix::from_fn(n, n, |i, j| {
            let id = if i == j { T::one() } else { T::zero() };
            id - eta * g1[(i, j)]
        });
        let delta = solve_dense(&jac, &r)?;
        let mut next: Vec<T> = u0.iter().zip(&delta).map(|(u, d)| *u - *d).collect();
        if min_value(&next) < T::zero() {
            clipped_in_row += 1;
            if supercritical {
                // below the positive root the Newton direction points at the
                // trivial root; grow the iterate by damped Picard instead
                next = u0.clone();
                clipped_in_row = 2;
            } else {
                next.iter_mut().for_each(|x| *x = x.max(T::zero()));
            }
        } else {
            clipped_in_row = 0;
        }
        if clipped_in_row >= 2 {
            log::debug!("reduced Newton left the cone; damped Picard fallback");
            for _ in 0..20 {
                next = problem.picard(&next, opts.picard_theta)?;
            }
            clipped_in_row = 0;
        }
        u0 = next;
    }
    Err(Error::NoConvergence {
        what: "reduced Newton",
        iterations: opts.max_iter,
        residual: last_residual.to_f64_lossy(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtaScanRow<T> {
    pub eta: T,
    pub sup_norm: T,
    pub min_trace0: T,
    pub newton_iters: usize,
    pub residual: T,
}

/// Continuation in `η`: each converged nontrivial solution seeds the next.
pub fn eta_scan<T: Real>(
    spec: &ModelSpec<T>,
    grid: &Grid<T>,
    etas: &[T],
    opts: &ReducedOptions<T>,
) -> Result<Vec<(EtaScanRow<T>, ReducedSolution<T>)>> {
    if etas.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Model("eta scan values must be strictly increasing".into()));
    }
    let mut out: Vec<(EtaScanRow<T>, ReducedSolution<T>)> = Vec::with_capacity(etas.len());
    for &eta in etas {
        let seed = out
            .last()
            .filter(|(_, s)| !s.is_trivial())
            .map(|(_, s)| s.trace0.0.clone());
        let sol = solve_reduced(spec, grid, eta, seed.as_deref(), opts)?;
        let row = EtaScanRow {
            eta,
            sup_norm: sol.field.norm_max(),
            min_trace0: min_value(&sol.trace0),
            newton_iters: sol.newton_iters,
            residual: sol.residual,
        };
        out.push((row, sol));
    }
    Ok(out)
}
