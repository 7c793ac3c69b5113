//! Linearization at the semi-trivial state `(ξ, u_η, 0)`, the bifurcation
//! point `ξ₀ = 1 / r(H)` and the kernel pair `(φ*, ψ*)`.
//!
//! With `Ψ̂ = ∫ ω ψ* da` the kernel equations read
//!
//! ```text
//! ∂_a ψ + A₃ ψ = 0,                  ψ(0) = ξ₀ ∫ b ψ da
//! ∂_a φ + A₁(a) φ = -A₂ψ,            φ(0) = η ∫ b φ da
//! ```
//!
//! where `-A₂ψ` is the flux-form operator with `p = d₁'(0) Ψ̂`,
//! `q = d₂'(0) Ψ̂`, `r = μ₁'(0) Ψ̂` applied to `u_η(a)`.

use rayon::prelude::*;

use crate::discretize::{age_integral, age_integral_sampled, flux_operator, AgeSpaceField, Grid, SpatialProfile, TriDiagOp};
use crate::error::{Error, Result};
use crate::evolve::{evolution_march, march_defect, renewal_matrix, semigroup_march, AgeOps, StepScheme};
use crate::model::{coefficient_operator, ModelSpec};
use crate::reduced::{base_operator, ReducedSolution};
use crate::scalar::{dot, Real};
use crate::spectral::{perron_dense, solve_dense, DenseMatrix, PerronPair};

const PERRON_MAX_ITER: usize = 20_000;

#[derive(Debug, Clone)]
pub struct LinearizedSystem<T> {
    pub eta: T,
    pub a3: TriDiagOp<T>,
    /// `-Δ + 2α u_η(a_i)` (with the species' base coefficients at `V̂ = 0`).
    pub a1_of_age: Vec<TriDiagOp<T>>,
    pub u_hat_eta: SpatialProfile<T>,
    pub u_eta: ReducedSolution<T>,
    pub d1p0: T,
    pub d2p0: T,
    pub mu1p0: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics<T> {
    pub gap: T,
    pub r_eta_g1: T,
    pub kernel_residual: T,
    pub overlap: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BifurcationPoint<T> {
    pub xi0: T,
    pub psi0: SpatialProfile<T>,
    pub psi_star: AgeSpaceField<T>,
    pub phi0: SpatialProfile<T>,
    pub phi_star: AgeSpaceField<T>,
    pub diagnostics: Diagnostics<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelPair<T> {
    pub psi_star: AgeSpaceField<T>,
    pub phi0: SpatialProfile<T>,
    pub phi_star: AgeSpaceField<T>,
    /// `-A₂ψ*` at every age node.
    pub source: AgeSpaceField<T>,
    pub g1: DenseMatrix<T>,
    pub r_eta_g1: T,
}

impl<T: Real> KernelPair<T> {
    pub fn scaled(&self, c: T) -> Self {
        Self {
            psi_star: self.psi_star.map(|x| c * x),
            phi0: self.phi0.scaled(c),
            phi_star: self.phi_star.map(|x| c * x),
            source: self.source.map(|x| c * x),
            g1: self.g1.clone(),
            r_eta_g1: self.r_eta_g1,
        }
    }
}

pub fn build_linearization<T: Real>(spec: &ModelSpec<T>, grid: &Grid<T>, u_eta: &ReducedSolution<T>) -> Result<LinearizedSystem<T>> {
    if u_eta.field.rows() != grid.n_a + 1 || u_eta.field.cols() != grid.n_x {
        return Err(Error::Shape("reduced solution does not match the grid".into()));
    }
    let u_hat = age_integral(&u_eta.field, &spec.omega, grid);
    let a3 = coefficient_operator(grid, &spec.d3, &spec.d4, &spec.mu2, &u_hat)?;
    let base = base_operator(spec, grid)?;
    let two_alpha = T::lit(2.0) * spec.alpha;
    let a1_of_age = (0..=grid.n_a)
        .map(|i| {
            let shift: Vec<T> = u_eta.field.row(i).iter().map(|u| two_alpha * *u).collect();
            base.plus_diagonal(&shift)
        })
        .collect();
    Ok(LinearizedSystem {
        eta: u_eta.eta,
        a3,
        a1_of_age,
        u_hat_eta: u_hat,
        u_eta: u_eta.clone(),
        d1p0: spec.d1.deriv(T::zero()),
        d2p0: spec.d2.deriv(T::zero()),
        mu1p0: spec.mu1.deriv(T::zero()),
    })
}

/// `H = ∫ b e^{-a A₃} da`, column by column.
pub fn build_h<T: Real>(lin: &LinearizedSystem<T>, spec: &ModelSpec<T>, grid: &Grid<T>, scheme: StepScheme) -> Result<DenseMatrix<T>> {
    renewal_matrix(AgeOps::Constant(&lin.a3), &grid.sample(&spec.birth), grid, scheme)
}

/// `(ξ₀, Ψ₀, Perron data of H)`.
pub fn bifurcation_point<T: Real>(h: &DenseMatrix<T>, tol: T) -> Result<(T, SpatialProfile<T>, PerronPair<T>)> {
    let pair = perron_dense(h, tol, PERRON_MAX_ITER)?;
    if !(pair.radius > T::zero()) {
        return Err(Error::Degenerate("r(H) = 0".into()));
    }
    Ok((T::one() / pair.radius, pair.vector.clone(), pair))
}

/// `-A₂ψ` evaluated on `u_η(a_i)` for every age node.
pub fn coupling_source<T: Real>(lin: &LinearizedSystem<T>, psi: &AgeSpaceField<T>, spec: &ModelSpec<T>, grid: &Grid<T>) -> AgeSpaceField<T> {
    let psi_hat = age_integral(psi, &spec.omega, grid);
    let ext = psi_hat.with_boundary();
    let p: Vec<T> = ext.iter().map(|x| lin.d1p0 * *x).collect();
    let q: Vec<T> = ext.iter().map(|x| lin.d2p0 * *x).collect();
    let r: Vec<T> = psi_hat.iter().map(|x| lin.mu1p0 * *x).collect();
    let op = flux_operator(grid.h, &p, &q, &r);
    let rows = (0..=grid.n_a).map(|i| op.apply(lin.u_eta.field.row(i))).collect();
    AgeSpaceField::from_rows(rows).expect("rows share the grid width")
}

pub fn kernel_pair<T: Real>(
    lin: &LinearizedSystem<T>,
    spec: &ModelSpec<T>,
    grid: &Grid<T>,
    psi0: &[T],
    scheme: StepScheme,
    tol: T,
) -> Result<KernelPair<T>> {
    let psi_star = semigroup_march(&lin.a3, psi0, grid, scheme)?.field;
    let source = coupling_source(lin, &psi_star, spec, grid);
    let birth = grid.sample(&spec.birth);
    let ops = AgeOps::PerAge(&lin.a1_of_age);
    let g1 = renewal_matrix(ops, &birth, grid, scheme)?;
    let eta = lin.eta;
    let r_eta_g1 = perron_dense(&g1.scaled(eta), tol, PERRON_MAX_ITER)?.radius;
    let zero = vec![T::zero(); grid.n_x];
    let chi = evolution_march(ops, &zero, Some(&source), grid, scheme)?.field;
    let rhs: Vec<T> = age_integral_sampled(&chi, &birth, grid).iter().map(|x| eta * *x).collect();
    let m = g1.affine(T::one(), -eta);
    let phi0 = solve_dense(&m, &rhs).map_err(|e| match e {
        Error::Singular { .. } => Error::Degenerate(format!("1 - eta G1 is singular, r(eta G1) = {r_eta_g1}")),
        other => other,
    })?;
    let phi_star = evolution_march(ops, &phi0, Some(&source), grid, scheme)?.field;
    Ok(KernelPair {
        psi_star,
        phi0: SpatialProfile(phi0),
        phi_star,
        source,
        g1,
        r_eta_g1,
    })
}

/// Largest of the four kernel-equation defects, relative to
/// `max(||φ*||, ||ψ*||)`.
pub fn kernel_residual<T: Real>(
    lin: &LinearizedSystem<T>,
    spec: &ModelSpec<T>,
    grid: &Grid<T>,
    xi0: T,
    pair: &KernelPair<T>,
    scheme: StepScheme,
) -> Result<T> {
    let scale = pair.psi_star.norm_max().max(pair.phi_star.norm_max());
    if !(scale > T::zero()) {
        return Ok(T::zero());
    }
    let birth = grid.sample(&spec.birth);
    // the source is recomputed from ψ* so the check covers its construction
    let source = coupling_source(lin, &pair.psi_star, spec, grid);
    let a = march_defect(AgeOps::Constant(&lin.a3), T::zero(), &pair.psi_star, None, grid, scheme)?;
    let psi_int = age_integral_sampled(&pair.psi_star, &birth, grid);
    let b = pair
        .psi_star
        .row(0)
        .iter()
        .zip(psi_int.iter())
        .fold(T::zero(), |m, (p, i)| m.max((*p - xi0 * *i).abs()));
    let c = march_defect(AgeOps::PerAge(&lin.a1_of_age), T::zero(), &pair.phi_star, Some(&source), grid, scheme)?;
    let phi_int = age_integral_sampled(&pair.phi_star, &birth, grid);
    let d = pair
        .phi_star
        .row(0)
        .iter()
        .zip(phi_int.iter())
        .fold(T::zero(), |m, (p, i)| m.max((*p - lin.eta * *i).abs()));
    Ok(a.max(b).max(c).max(d) / scale)
}

/// `(gap, overlap)` where the overlap is the cosine between `Ψ₀` and the
/// Perron vector of `Hᵀ`. Both positive certify transversality.
pub fn transversality_diag<T: Real>(h: &DenseMatrix<T>, pair: &PerronPair<T>, tol: T) -> Result<(T, T)> {
    let left = perron_dense(&h.transpose(), tol, PERRON_MAX_ITER)?.vector;
    let v = &pair.vector;
    let overlap = dot(&left, v) / (dot(&left, &left).sqrt() * dot(v, v).sqrt());
    Ok((pair.gap, overlap))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanRow<T> {
    pub xi: T,
    pub radius: T,
}

/// `r(ξ H)` for each `ξ`, each from its own Perron run.
pub fn uniqueness_scan<T: Real>(h: &DenseMatrix<T>, xis: &[T], tol: T) -> Result<Vec<ScanRow<T>>> {
    if xis.iter().any(|x| !(*x > T::zero())) {
        return Err(Error::Model("scan values of xi must be positive".into()));
    }
    xis.par_iter()
        .map(|&xi| {
            let radius = perron_dense(&h.scaled(xi), tol, PERRON_MAX_ITER)?.radius;
            Ok(ScanRow { xi, radius })
        })
        .collect()
}

/// Index of the unique sign change of `r(ξH) - 1` in a sorted scan, if any.
pub fn unit_crossings<T: Real>(rows: &[ScanRow<T>]) -> Vec<usize> {
    rows.windows(2)
        .enumerate()
        .filter(|(_, w)| (w[0].radius - T::one()) * (w[1].radius - T::one()) <= T::zero() && w[0].radius != w[1].radius)
        .map(|(i, _)| i)
        .collect()
}

/// Everything the bifurcation analysis produces for one `u_η`.
#[derive(Debug, Clone)]
pub struct Analysis<T> {
    pub lin: LinearizedSystem<T>,
    pub h: DenseMatrix<T>,
    pub perron: PerronPair<T>,
    pub kernel: KernelPair<T>,
    pub point: BifurcationPoint<T>,
}

pub fn analyze<T: Real>(spec: &ModelSpec<T>, grid: &Grid<T>, u_eta: &ReducedSolution<T>, scheme: StepScheme, tol: T) -> Result<Analysis<T>> {
    let lin = build_linearization(spec, grid, u_eta)?;
    let h = build_h(&lin, spec, grid, scheme)?;
    let (xi0, psi0, perron) = bifurcation_point(&h, tol)?;
    let kernel = kernel_pair(&lin, spec, grid, &psi0, scheme, tol)?;
    let kernel_residual = kernel_residual(&lin, spec, grid, xi0, &kernel, scheme)?;
    let (gap, overlap) = transversality_diag(&h, &perron, tol)?;
    let point = BifurcationPoint {
        xi0,
        psi0,
        psi_star: kernel.psi_star.clone(),
        phi0: kernel.phi0.clone(),
        phi_star: kernel.phi_star.clone(),
        diagnostics: Diagnostics {
            gap,
            r_eta_g1: kernel.r_eta_g1,
            kernel_residual,
            overlap,
        },
    };
    Ok(Analysis {
        lin,
        h,
        perron,
        kernel,
        point,
    })
}

/// Relative deviation of a scan from exact linearity `r(ξH) = ξ r(H)`.
pub fn scan_linearity<T: Real>(rows: &[ScanRow<T>], radius: T) -> T {
    rows.iter()
        .map(|r| (r.radius - r.xi * radius).abs() / (r.xi * radius))
        .fold(T::zero(), |m, x| m.max(x))
}
