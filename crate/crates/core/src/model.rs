//! Model data: density-dependent coefficient functions, age profiles, the
//! standing-assumption checks and the birth-profile normalization.

use std::fmt;

use crate::discretize::{solve_tridiag, Grid, SpatialProfile, TriDiagOp};
use crate::error::{Error, Result};
use crate::evolve::StepScheme;
use crate::scalar::Real;

/// Closed family of C² coefficient functions `z ↦ f(z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoefficientFn<T> {
    /// `c0 + c1 z`
    Affine { c0: T, c1: T },
    /// `c0 + c1 z / (1 + k z)`, `k > 0`
    Saturating { c0: T, c1: T, k: T },
    /// `c0 + c1 (1 - exp(-k z))`, `k > 0`
    ExpSat { c0: T, c1: T, k: T },
}

impl<T: Real> CoefficientFn<T> {
    pub fn constant(c: T) -> Self {
        Self::Affine { c0: c, c1: T::zero() }
    }

    pub fn affine(c0: T, c1: T) -> Self {
        Self::Affine { c0, c1 }
    }

    pub fn family(&self) -> &'static str {
        match self {
            Self::Affine { .. } => "affine",
            Self::Saturating { .. } => "saturating",
            Self::ExpSat { .. } => "expsat",
        }
    }

    pub fn params(&self) -> Vec<T> {
        match *self {
            Self::Affine { c0, c1 } => vec![c0, c1],
            Self::Saturating { c0, c1, k } | Self::ExpSat { c0, c1, k } => vec![c0, c1, k],
        }
    }

    pub fn eval(&self, z: T) -> T {
        match *self {
            Self::Affine { c0, c1 } => c0 + c1 * z,
            Self::Saturating { c0, c1, k } => c0 + c1 * z / (T::one() + k * z),
            Self::ExpSat { c0, c1, k } => c0 + c1 * (-(-k * z).exp_m1()),
        }
    }

    pub fn deriv(&self, z: T) -> T {
        match *self {
            Self::Affine { c1, .. } => c1,
            Self::Saturating { c1, k, .. } => {
                let s = T::one() + k * z;
                c1 / (s * s)
            }
            Self::ExpSat { c1, k, .. } => c1 * k * (-k * z).exp(),
        }
    }

    pub fn deriv2(&self, z: T) -> T {
        match *self {
            Self::Affine { .. } => T::zero(),
            Self::Saturating { c1, k, .. } => {
                let s = T::one() + k * z;
                -T::lit(2.0) * c1 * k / (s * s * s)
            }
            Self::ExpSat { c1, k, .. } => -c1 * k * k * (-k * z).exp(),
        }
    }

    /// Minimum over `[0, z_max]`. Every family is monotone on `z >= 0`, so
    /// the minimum sits at an endpoint.
    pub fn min_on(&self, z_max: T) -> T {
        self.eval(T::zero()).min(self.eval(z_max))
    }

    /// Finite parameters and `k > 0` where present.
    pub fn check_params(&self) -> std::result::Result<(), String> {
        let p = self.params();
        if p.iter().any(|x| !x.is_finite()) {
            return Err(format!("non-finite parameter in {self}"));
        }
        match *self {
            Self::Saturating { k, .. } | Self::ExpSat { k, .. } if !(k > T::zero()) => {
                Err(format!("rate k must be positive in {self}"))
            }
            _ => Ok(()),
        }
    }

    /// Applies the function at every entry.
    pub fn map(&self, z: &[T]) -> Vec<T> {
        z.iter().map(|x| self.eval(*x)).collect()
    }
}

impl<T: Real> fmt::Display for CoefficientFn<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let params: Vec<String> = self.params().iter().map(|p| p.to_string()).collect();
        write!(f, "{}({})", self.family(), params.join(", "))
    }
}

/// Piecewise-linear profile on `[0, a_max]`, constant beyond the first and
/// last breakpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct AgeProfile<T> {
    points: Vec<(T, T)>,
}

impl<T: Real> AgeProfile<T> {
    pub fn new(points: Vec<(T, T)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Model("age profile needs at least one breakpoint".into()));
        }
        if points.iter().any(|(a, v)| !a.is_finite() || !v.is_finite()) {
            return Err(Error::Model("non-finite age profile breakpoint".into()));
        }
        if points.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(Error::Model("age profile breakpoints must be strictly increasing".into()));
        }
        Ok(Self { points })
    }

    pub fn constant(value: T, a_max: T) -> Self {
        Self {
            points: vec![(T::zero(), value), (a_max, value)],
        }
    }

    pub fn points(&self) -> &[(T, T)] {
        &self.points
    }

    pub fn eval(&self, a: T) -> T {
        let pts = &self.points;
        if a <= pts[0].0 {
            return pts[0].1;
        }
        let last = pts[pts.len() - 1];
        if a >= last.0 {
            return last.1;
        }
        let k = pts.partition_point(|(x, _)| *x <= a);
        let (a0, v0) = pts[k - 1];
        let (a1, v1) = pts[k];
        let t = (a - a0) / (a1 - a0);
        v0 + t * (v1 - v0)
    }

    pub fn scaled(&self, c: T) -> Self {
        Self {
            points: self.points.iter().map(|(a, v)| (*a, *v * c)).collect(),
        }
    }

    /// Exact minimum over `[lo, hi]`: attained at an endpoint or a
    /// breakpoint.
    pub fn min_on(&self, lo: T, hi: T) -> T {
        self.points
            .iter()
            .filter(|(a, _)| *a > lo && *a < hi)
            .map(|(_, v)| *v)
            .fold(self.eval(lo).min(self.eval(hi)), |m, v| m.min(v))
    }

    pub fn is_identically_zero(&self) -> bool {
        self.points.iter().all(|(_, v)| *v == T::zero())
    }
}

impl<T: Real> fmt::Display for AgeProfile<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pts: Vec<String> = self.points.iter().map(|(a, v)| format!("{a}:{v}")).collect();
        write!(f, "pwlinear({})", pts.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec<T> {
    pub d1: CoefficientFn<T>,
    pub d2: CoefficientFn<T>,
    pub d3: CoefficientFn<T>,
    pub d4: CoefficientFn<T>,
    pub mu1: CoefficientFn<T>,
    pub mu2: CoefficientFn<T>,
    pub alpha: T,
    pub beta: T,
    pub a_max: T,
    pub length: T,
    pub omega: AgeProfile<T>,
    pub birth: AgeProfile<T>,
}

impl<T: Real> ModelSpec<T> {
    /// Exchanges the roles of the two species:
    /// `(d1, d2, mu1, alpha) <-> (d3, d4, mu2, beta)`.
    pub fn swapped(&self) -> Self {
        Self {
            d1: self.d3,
            d2: self.d4,
            d3: self.d1,
            d4: self.d2,
            mu1: self.mu2,
            mu2: self.mu1,
            alpha: self.beta,
            beta: self.alpha,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport<T> {
    pub checks: Vec<Check>,
    /// `min(d1, d3)` over `[0, z_max]`.
    pub delta: T,
}

impl<T: Real> ValidationReport<T> {
    pub fn is_ok(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl<T: Real> fmt::Display for ValidationReport<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let tag = if c.passed { "pass" } else { "FAIL" };
            writeln!(f, "{tag:4} {:<24} {}", c.name, c.detail)?;
        }
        write!(f, "delta = {}", self.delta)
    }
}

/// Checks the standing assumptions on the coefficients and profiles.
///
/// `z_max` bounds the density range on which ellipticity of `d1`, `d3` is
/// certified; `rho` is the width of the window `[a_max - rho, a_max]` on
/// which the birth profile must be strictly positive.
pub fn validate<T: Real>(spec: &ModelSpec<T>, z_max: T, rho: T) -> ValidationReport<T> {
    let mut checks = Vec::new();
    let mut push = |name: &'static str, passed: bool, detail: String| {
        checks.push(Check { name, passed, detail });
    };

    let positive = [
        ("alpha", spec.alpha),
        ("beta", spec.beta),
        ("a_max", spec.a_max),
        ("length", spec.length),
    ];
    let bad: Vec<String> = positive
        .iter()
        .filter(|(_, v)| !(*v > T::zero() && v.is_finite()))
        .map(|(n, v)| format!("{n}={v}"))
        .collect();
    push(
        "positive constants",
        bad.is_empty(),
        if bad.is_empty() {
            "alpha, beta, a_max, length > 0".into()
        } else {
            format!("must be positive: {}", bad.join(", "))
        },
    );

    let fns = [
        ("d1", &spec.d1),
        ("d2", &spec.d2),
        ("d3", &spec.d3),
        ("d4", &spec.d4),
        ("mu1", &spec.mu1),
        ("mu2", &spec.mu2),
    ];
    let param_errors: Vec<String> = fns
        .iter()
        .filter_map(|(n, f)| f.check_params().err().map(|e| format!("{n}: {e}")))
        .collect();
    push(
        "coefficient parameters",
        param_errors.is_empty(),
        if param_errors.is_empty() {
            "finite, k > 0".into()
        } else {
            param_errors.join("; ")
        },
    );

    let tol = T::lit(1e-12);
    let d2_0 = spec.d2.eval(T::zero());
    push(
        "d2(0)=0",
        d2_0.abs() <= tol,
        if d2_0.abs() <= tol {
            "d2(0) = 0".into()
        } else {
            format!("d2(0)=0 violated: d2(0) = {d2_0}")
        },
    );
    let mu1_0 = spec.mu1.eval(T::zero());
    push(
        "mu1(0)=0",
        mu1_0.abs() <= tol,
        if mu1_0.abs() <= tol {
            "mu1(0) = 0".into()
        } else {
            format!("mu1(0)=0 violated: mu1(0) = {mu1_0}")
        },
    );
    let d1_0 = spec.d1.eval(T::zero());
    push(
        "d1(0)=1",
        (d1_0 - T::one()).abs() <= tol,
        if (d1_0 - T::one()).abs() <= tol {
            "d1(0) = 1".into()
        } else {
            format!("d1(0)=1 violated: d1(0) = {d1_0}")
        },
    );

    let delta = spec.d1.min_on(z_max).min(spec.d3.min_on(z_max));
    let z_ok = z_max > T::zero() && z_max.is_finite();
    push(
        "ellipticity",
        z_ok && delta > T::zero(),
        if !z_ok {
            format!("z_max = {z_max} must be positive")
        } else if delta > T::zero() {
            format!("min(d1, d3) on [0, {z_max}] = {delta} > 0")
        } else {
            format!("min(d1, d3) on [0, {z_max}] = {delta} <= 0")
        },
    );

    let omega_min = spec.omega.min_on(T::zero(), spec.a_max);
    push(
        "omega >= 0",
        omega_min >= T::zero(),
        format!("min omega = {omega_min}"),
    );
    let birth_min = spec.birth.min_on(T::zero(), spec.a_max);
    push(
        "birth >= 0",
        birth_min >= T::zero(),
        format!("min b = {birth_min}"),
    );
    let window_ok = rho > T::zero() && rho <= spec.a_max;
    let near = spec.birth.min_on(spec.a_max - rho, spec.a_max);
    push(
        "birth > 0 near a_max",
        window_ok && near > T::zero(),
        if window_ok {
            format!("min b on [{}, {}] = {near}", spec.a_max - rho, spec.a_max)
        } else {
            format!("rho = {rho} must lie in (0, a_max]")
        },
    );

    ValidationReport { checks, delta }
}

/// Principal eigenpair of the three-point Dirichlet Laplacian on `(0, L)`:
/// `lambda = (4/h²) sin²(pi h / 2L)` with eigenvector `sin(pi x / L)`,
/// max-norm one.
pub fn principal_eigenvalue<T: Real>(grid: &Grid<T>) -> (T, SpatialProfile<T>) {
    let pi = T::PI();
    let s = (pi * grid.h / (T::lit(2.0) * grid.length)).sin();
    let lambda = T::lit(4.0) / (grid.h * grid.h) * s * s;
    let v = SpatialProfile::from_fn(grid, |x| (pi * x / grid.length).sin());
    let m = v.norm_max();
    (lambda, v.scaled(T::one() / m))
}

/// Species operator `-d/dx (diff(z) phi' + phi drift(z)') + mort(z) phi`
/// with the density `z` given at the interior nodes and zero on the boundary.
pub fn coefficient_operator<T: Real>(
    grid: &Grid<T>,
    diff: &CoefficientFn<T>,
    drift: &CoefficientFn<T>,
    mort: &CoefficientFn<T>,
    density: &[T],
) -> Result<TriDiagOp<T>> {
    let ext = SpatialProfile(density.to_vec()).with_boundary();
    let p = diff.map(&ext);
    let q = drift.map(&ext);
    let r = mort.map(density);
    crate::discretize::assemble_elliptic(grid, &p, &q, &r).map_err(|e| match e {
        Error::NonPositiveDiffusion { node, value } => Error::Ellipticity(format!(
            "diffusion coefficient {diff} = {value} <= 0 at node {node}"
        )),
        other => other,
    })
}

/// Dirichlet Laplacian stencil on the grid.
pub fn dirichlet_laplacian<T: Real>(grid: &Grid<T>) -> TriDiagOp<T> {
    let n = grid.n_x;
    crate::discretize::flux_operator(grid.h, &vec![T::one(); n + 2], &vec![T::zero(); n + 2], &vec![T::zero(); n])
}

/// Inverse power iteration for the smallest Dirichlet Laplacian eigenpair.
pub fn principal_eigenvalue_inverse_iteration<T: Real>(
    grid: &Grid<T>,
    tol: T,
    max_iter: usize,
) -> Result<(T, SpatialProfile<T>)> {
    let lap = dirichlet_laplacian(grid);
    let mut v = vec![T::one(); grid.n_x];
    let mut lambda = T::zero();
    let op_scale = lap.diag.iter().fold(T::zero(), |m, d| m.max(d.abs())) * T::lit(2.0);
    for it in 0..max_iter {
        let w = solve_tridiag(&lap, &v)?;
        let m = crate::scalar::max_norm(&w);
        let next: Vec<T> = w.iter().map(|x| *x / m).collect();
        let av = lap.apply(&next);
        let new_lambda = crate::scalar::dot(&next, &av) / crate::scalar::dot(&next, &next);
        let residual = crate::scalar::max_diff(&av, &next.iter().map(|x| *x * new_lambda).collect::<Vec<_>>());
        let done = it > 0 && (new_lambda - lambda).abs() <= tol * new_lambda && residual <= tol * op_scale;
        lambda = new_lambda;
        v = next;
        if done {
            return Ok((lambda, SpatialProfile(v)));
        }
    }
    Err(Error::NoConvergence {
        what: "inverse power iteration",
        iterations: max_iter,
        residual: f64::NAN,
    })
}

/// `sum_i w_i b(a_i) rho_i` with `rho_i` the scheme's discrete propagator of
/// the scalar decay rate `rate`.
pub fn discrete_birth_moment<T: Real>(birth: &AgeProfile<T>, grid: &Grid<T>, scheme: StepScheme, rate: T) -> T {
    let factor = scheme.scalar_factor(grid.da, rate);
    let mut rho = T::one();
    let mut total = T::zero();
    for (i, w) in grid.weights().iter().enumerate() {
        if i > 0 {
            rho = rho * factor;
        }
        total = total + *w * birth.eval(grid.age(i)) * rho;
    }
    total
}

/// Rescales the birth profile so that its discrete moment against the
/// propagator of the discrete principal eigenvalue equals one.
pub fn normalize_birth<T: Real>(spec: &ModelSpec<T>, grid: &Grid<T>, scheme: StepScheme) -> Result<ModelSpec<T>> {
    let (lambda, _) = principal_eigenvalue(grid);
    let moment = discrete_birth_moment(&spec.birth, grid, scheme, lambda);
    if !(moment > T::zero()) || !moment.is_finite() {
        return Err(Error::Model(format!(
            "birth profile has non-positive discrete moment {moment}; cannot normalize"
        )));
    }
    Ok(ModelSpec {
        birth: spec.birth.scaled(T::one() / moment),
        ..spec.clone()
    })
}
