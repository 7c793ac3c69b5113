//! Full steady-state system in the reduced unknown `Z = (u0, v0, Û, V̂)`.
//!
//! Fixing the hats decouples the two species: `u` is the semilinear march of
//! `u0` under the coefficients `d₁(V̂), d₂(V̂), μ₁(V̂)` with rate `α`, and `v`
//! the march of `v0` under `d₃(Û), d₄(Û), μ₂(Û)` with rate `β`. The residual
//! closes the renewal conditions and the hat definitions.

use rayon::prelude::*;

use crate::bifurcate::Analysis;
use crate::discretize::{age_integral_sampled, AgeSpaceField, Grid, SpatialProfile};
use crate::error::{Error, Result};
use crate::evolve::{semilinear_march, AgeOps, StepScheme};
use crate::model::{coefficient_operator, ModelSpec};
use crate::scalar::{max_norm, Real};
use crate::spectral::{solve_dense, DenseMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct CoexistenceState<T> {
    pub u0: SpatialProfile<T>,
    pub v0: SpatialProfile<T>,
    pub u_hat: SpatialProfile<T>,
    pub v_hat: SpatialProfile<T>,
    pub u_field: AgeSpaceField<T>,
    pub v_field: AgeSpaceField<T>,
    pub xi: T,
}

impl<T: Real> CoexistenceState<T> {
    /// `(u0, v0, Û, V̂)` concatenated.
    pub fn z(&self) -> Vec<T> {
        [&self.u0, &self.v0, &self.u_hat, &self.v_hat]
            .iter()
            .flat_map(|p| p.iter().copied())
            .collect()
    }

    /// The state of the role-swapped problem.
    pub fn swapped(&self) -> Self {
        Self {
            u0: self.v0.clone(),
            v0: self.u0.clone(),
            u_hat: self.v_hat.clone(),
            v_hat: self.u_hat.clone(),
            u_field: self.v_field.clone(),
            v_field: self.u_field.clone(),
            xi: self.xi,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchPoint<T> {
    pub state: CoexistenceState<T>,
    /// `<v, ψ*> / <ψ*, ψ*>` in the age-space inner product.
    pub eps: T,
    pub residual: T,
    pub newton_iters: usize,
    pub min_u: T,
    pub min_v: T,
}

impl<T: Real> BranchPoint<T> {
    pub fn is_coexistence(&self) -> bool {
        self.min_u > T::zero() && self.min_v > T::zero()
    }
}

#[derive(Debug, Clone)]
pub struct Branch<T> {
    pub eta: T,
    pub xi0: T,
    pub points: Vec<BranchPoint<T>>,
    pub stop_reason: String,
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions<T> {
    pub tol: T,
    pub max_iter: usize,
    pub scheme: StepScheme,
}

impl<T: Real> Default for NewtonOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-10),
            max_iter: 25,
            scheme: StepScheme::ImplicitEuler,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BranchOptions<T> {
    pub eps0: T,
    /// Initial (and maximal) arclength step.
    pub ds: T,
    /// Number of points to accept, the first one included.
    pub n_steps: usize,
    pub newton: NewtonOptions<T>,
}

impl<T: Real> Default for BranchOptions<T> {
    fn default() -> Self {
        Self {
            eps0: T::lit(0.02),
            ds: T::lit(0.05),
            n_steps: 8,
            newton: NewtonOptions::default(),
        }
    }
}

fn split<T>(z: &[T], n: usize) -> (&[T], &[T], &[T], &[T]) {
    (&z[..n], &z[n..2 * n], &z[2 * n..3 * n], &z[3 * n..4 * n])
}

/// Species fields marched from `Z`.
pub fn march_state<T: Real>(spec: &ModelSpec<T>, grid: &Grid<T>, z: &[T], scheme: StepScheme) -> Result<(AgeSpaceField<T>, AgeSpaceField<T>)> {
    let n = grid.n_x;
    if z.len() != 4 * n {
        return Err(Error::Shape(format!("state length {} vs 4 n_x = {}", z.len(), 4 * n)));
    }
    if z.iter().any(|x| !x.is_finite()) {
        return Err(Error::Model("state has non-finite entries".into()));
    }
    let (u0, v0, u_hat, v_hat) = split(z, n);
    let a_u = coefficient_operator(grid, &spec.d1, &spec.d2, &spec.mu1, v_hat)?;
    let a_v = coefficient_operator(grid, &spec.d3, &spec.d4, &spec.mu2, u_hat)?;
    let u = semilinear_march(AgeOps::Constant(&a_u), spec.alpha, u0, None, grid, scheme)?;
    let v = semilinear_march(AgeOps::Constant(&a_v), spec.beta, v0, None, grid, scheme)?;
    Ok((u.field, v.field))
}

fn residual_from_fields<T: Real>(
    spec: &ModelSpec<T>,
    grid: &Grid<T>,
    eta: T,
    xi: T,
    z: &[T],
    u: &AgeSpaceField<T>,
    v: &AgeSpaceField<T>,
) -> Vec<T> {
    let n = grid.n_x;
    let (u0, v0, u_hat, v_hat) = split(z, n);
    let birth = grid.sample(&spec.birth);
    let omega = grid.sample(&spec.omega);
    let bu = age_integral_sampled(u, &birth, grid);
    let bv = age_integral_sampled(v, &birth, grid);
    let wu = age_integral_sampled(u, &omega, grid);
    let wv = age_integral_sampled(v, &omega, grid);
    let mut r = Vec::with_capacity(4 * n);
    r.extend(u0.iter().zip(bu.iter()).map(|(a, b)| *a - eta * *b));
    r.extend(v0.iter().zip(bv.iter()).map(|(a, b)| *a - xi * *b));
    r.extend(u_hat.iter().zip(wu.iter()).map(|(a, b)| *a - *b));
    r.extend(v_hat.iter().zip(wv.iter()).map(|(a, b)| *a - *b));
    r
}

/// `(u0 - η∫bu, v0 - ξ∫bv, Û - ∫ωu, V̂ - ∫ωv)`.
pub fn residual_full<T: Real>(spec: &ModelSpec<T>, grid: &Grid<T>, eta: T, xi: T, z: &[T], scheme: StepScheme) -> Result<Vec<T>> {
    let (u, v) = march_state(spec, grid, z, scheme)?;
    Ok(residual_from_fields(spec, grid, eta, xi, z, &u, &v))
}

pub fn state_from_z<T: Real>(spec: &ModelSpec<T>, grid: &Grid<T>, xi: T, z: &[T], scheme: StepScheme) -> Result<CoexistenceState<T>> {
    let (u_field, v_field) = march_state(spec, grid, z, scheme)?;
    let n = grid.n_x;
    let (u0, v0, u_hat, v_hat) = split(z, n);
    Ok(CoexistenceState {
        u0: SpatialProfile(u0.to_vec()),
        v0: SpatialProfile(v0.to_vec()),
        u_hat: SpatialProfile(u_hat.to_vec()),
        v_hat: SpatialProfile(v_hat.to_vec()),
        u_field,
        v_field,
        xi,
    })
}

/// Forward-difference Jacobian with step `sqrt(eps) (1 + ||x||_inf)`.
/// Columns are evaluated in parallel and assembled in index order.
pub fn fd_jacobian<T, F>(f: &F, x: &[T], fx: &[T]) -> Result<DenseMatrix<T>>
where
    T: Real,
    F: Fn(&[T]) -> Result<Vec<T>> + Sync,
{
    let step = T::epsilon().sqrt() * (T::one() + max_norm(x));
    let cols = (0..x.len())
        .into_par_iter()
        .map(|k| {
            let mut xp = x.to_vec();
            xp[k] = xp[k] + step;
            let actual = xp[k] - x[k];
            let fp = f(&xp)?;
            Ok(fp.iter().zip(fx).map(|(a, b)| (*a - *b) / actual).collect())
        })
        .collect::<Result<Vec<Vec<T>>>>()?;
    Ok(DenseMatrix::from_columns(&cols))
}

/// Newton's method with a finite-difference Jacobian; returns the iterate
/// and the iteration count once `||f||_inf <= tol`.
fn newton<T, F>(f: &F, x0: &[T], tol: T, max_iter: usize, what: &'static str) -> Result<(Vec<T>, T, usize)>
where
    T: Real,
    F: Fn(&[T]) -> Result<Vec<T>> + Sync,
{
    let mut x = x0.to_vec();
    let mut fx = f(&x)?;
    let mut res = max_norm(&fx);
    let first = res;
    for iter in 0..=max_iter {
        if !res.is_finite() || res > T::lit(1e6) * first.max(T::one()) {
            break;
        }
        if res <= tol {
            return Ok((x, res, iter));
        }
        if iter == max_iter {
            break;
        }
        let jac = fd_jacobian(f, &x, &fx)?;
        let delta = solve_dense(&jac, &fx)?;
        for (xi, d) in x.iter_mut().zip(&delta) {
            *xi = *xi - *d;
        }
        fx = f(&x)?;
        res = max_norm(&fx);
    }
    Err(Error::NoConvergence {
        what,
        iterations: max_iter,
        residual: res.to_f64_lossy(),
    })
}

/// `<v, ψ*> / <ψ*, ψ*>`.
pub fn projection_eps<T: Real>(v: &AgeSpaceField<T>, psi_star: &AgeSpaceField<T>, grid: &Grid<T>) -> T {
    v.inner(psi_star, grid) / psi_star.inner(psi_star, grid)
}

fn finish_point<T: Real>(
    spec: &ModelSpec<T>,
    grid: &Grid<T>,
    xi: T,
    z: &[T],
    residual: T,
    newton_iters: usize,
    reference: Option<&AgeSpaceField<T>>,
    scheme: StepScheme,
) -> Result<BranchPoint<T>> {
    let state = state_from_z(spec, grid, xi, z, scheme)?;
    let eps = reference.map_or(T::zero(), |psi| projection_eps(&state.v_field, psi, grid));
    let min_u = state.u_field.min();
    let min_v = state.v_field.min();
    Ok(BranchPoint {
        state,
        eps,
        residual,
        newton_iters,
        min_u,
        min_v,
    })
}

/// Newton on `Z` at fixed `ξ`. `reference` (normally `ψ*`) only sets the
/// reported `eps`; a limit without coexistence is returned, not rejected.
pub fn solve_coexistence<T: Real>(
    spec: &ModelSpec<T>,
    grid: &Grid<T>,
    eta: T,
    xi: T,
    z_init: &[T],
    reference: Option<&AgeSpaceField<T>>,
    opts: &NewtonOptions<T>,
) -> Result<BranchPoint<T>> {
    let f = |z: &[T]| residual_full(spec, grid, eta, xi, z, opts.scheme);
    let (z, res, iters) = newton(&f, z_init, opts.tol, opts.max_iter, "coexistence Newton")?;
    let point = finish_point(spec, grid, xi, &z, res, iters, reference, opts.scheme)?;
    if !point.is_coexistence() {
        log::info!("Newton limit at xi = {xi} is not a coexistence state (min_v = {})", point.min_v);
    }
    Ok(point)
}

/// Inner product on `(Z, ξ)`: `h`-scaled on each spatial block, plain on `ξ`.
fn arc_dot<T: Real>(grid: &Grid<T>, a: &[T], b: &[T]) -> T {
    let n = a.len() - 1;
    grid.h * a[..n].iter().zip(&b[..n]).fold(T::zero(), |s, (x, y)| s + *x * *y) + a[n] * b[n]
}

fn arc_normalize<T: Real>(grid: &Grid<T>, t: &mut [T]) -> Result<()> {
    let norm = arc_dot(grid, t, t).sqrt();
    if !(norm > T::zero()) {
        return Err(Error::Continuation("zero continuation tangent".into()));
    }
    t.iter_mut().for_each(|x| *x = *x / norm);
    Ok(())
}

/// One corrected pseudo-arclength step from `base` along `tangent`.
fn arclength_step<T: Real>(
    spec: &ModelSpec<T>,
    grid: &Grid<T>,
    eta: T,
    base: &[T],
    tangent: &[T],
    ds: T,
    opts: &NewtonOptions<T>,
) -> Result<(Vec<T>, T, usize)> {
    let m = base.len() - 1;
    let f = |x: &[T]| -> Result<Vec<T>> {
        let mut r = residual_full(spec, grid, eta, x[m], &x[..m], opts.scheme)?;
        let diff: Vec<T> = x.iter().zip(base).map(|(a, b)| *a - *b).collect();
        r.push(arc_dot(grid, &diff, tangent) - ds);
        Ok(r)
    };
    let guess: Vec<T> = base.iter().zip(tangent).map(|(b, t)| *b + ds * *t).collect();
    newton(&f, &guess, opts.tol, opts.max_iter, "pseudo-arclength Newton")
}

/// Traces the coexistence branch emanating from `(ξ₀, u_η, 0)`.
///
/// The first point is the predictor `u = u_η - ε₀ φ*`, `v = ε₀ ψ*` at
/// `ξ = ξ₀`, corrected on the hyperplane orthogonal to the kernel direction
/// with `ξ` free. Later points use the secant through the two previous
/// points (the semi-trivial state counts as the zeroth). A failed step is
/// retried with half the step, at most five times; three consecutive quick
/// steps double it again up to `ds`. Continuation stops after `n_steps`
/// points, when the halvings run out, or when a corrected point loses
/// positivity.
pub fn continue_branch<T: Real>(spec: &ModelSpec<T>, grid: &Grid<T>, analysis: &Analysis<T>, opts: &BranchOptions<T>) -> Result<Branch<T>> {
    if !(opts.eps0 > T::zero()) || !(opts.ds > T::zero()) || opts.n_steps == 0 {
        return Err(Error::Continuation("eps0 and ds must be positive and n_steps at least one".into()));
    }
    let n = grid.n_x;
    let eta = analysis.lin.eta;
    let point0 = &analysis.point;
    let omega = grid.sample(&spec.omega);
    let psi_star = &point0.psi_star;

    let mut semi: Vec<T> = Vec::with_capacity(4 * n + 1);
    semi.extend(analysis.lin.u_eta.trace0.iter().copied());
    semi.extend(std::iter::repeat(T::zero()).take(n));
    semi.extend(analysis.lin.u_hat_eta.iter().copied());
    semi.extend(std::iter::repeat(T::zero()).take(n));
    semi.push(point0.xi0);

    let mut kernel: Vec<T> = Vec::with_capacity(4 * n + 1);
    kernel.extend(point0.phi0.iter().map(|x| -*x));
    kernel.extend(point0.psi0.iter().copied());
    kernel.extend(age_integral_sampled(&point0.phi_star, &omega, grid).iter().map(|x| -*x));
    kernel.extend(age_integral_sampled(psi_star, &omega, grid).iter().copied());
    kernel.push(T::zero());
    let ds0 = opts.eps0 * arc_dot(grid, &kernel, &kernel).sqrt();
    let mut tangent = kernel;
    arc_normalize(grid, &mut tangent)?;

    let (x1, res1, it1) = arclength_step(spec, grid, eta, &semi, &tangent, ds0, &opts.newton).map_err(|e| {
        Error::Continuation(format!(
            "predictor correction failed ({e}); kernel residual {:e}, gap {:e}, r(eta G1) {}",
            point0.diagnostics.kernel_residual, point0.diagnostics.gap, point0.diagnostics.r_eta_g1
        ))
    })?;
    let first = finish_point(spec, grid, x1[4 * n], &x1[..4 * n], res1, it1, Some(psi_star), opts.newton.scheme)?;
    if !first.is_coexistence() {
        return Err(Error::Continuation(format!(
            "corrected predictor is not a coexistence state (min_u {}, min_v {})",
            first.min_u, first.min_v
        )));
    }
    let mut points = vec![first];
    let mut prev = semi;
    let mut current = x1;
    let mut ds = opts.ds;
    let mut quick = 0;
    let mut stop_reason = format!("reached {} points", opts.n_steps);

    'outer: while points.len() < opts.n_steps {
        tangent = current.iter().zip(&prev).map(|(a, b)| *a - *b).collect();
        arc_normalize(grid, &mut tangent)?;
        let mut halvings = 0;
        let (x, res, iters) = loop {
            match arclength_step(spec, grid, eta, &current, &tangent, ds, &opts.newton) {
                Ok(ok) => break ok,
                Err(e) => {
                    if halvings == 5 {
                        stop_reason = format!("step failed after 5 halvings: {e}");
                        break 'outer;
                    }
                    halvings += 1;
                    quick = 0;
                    ds = ds / T::lit(2.0);
                    log::debug!("continuation step failed ({e}); ds -> {ds}");
                }
            }
        };
        let point = finish_point(spec, grid, x[4 * n], &x[..4 * n], res, iters, Some(psi_star), opts.newton.scheme)?;
        if !point.is_coexistence() {
            stop_reason = format!("positivity lost at xi = {} (min_u {}, min_v {})", point.state.xi, point.min_u, point.min_v);
            break;
        }
        points.push(point);
        if iters <= 3 {
            quick += 1;
            if quick == 3 {
                ds = (ds * T::lit(2.0)).min(opts.ds);
                quick = 0;
            }
        } else {
            quick = 0;
        }
        prev = std::mem::replace(&mut current, x);
    }
    Ok(Branch {
        eta,
        xi0: point0.xi0,
        points,
        stop_reason,
    })
}
