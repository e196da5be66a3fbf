//! Conjugate-gradient solves: Poisson, Helmholtz (implicit diffusion), and
//! the discrete pressure projection.
//!
//! The projection is built on the wall-aware adjoint pair, so the composed
//! operator `q -> -div(grad q)` is symmetric positive semidefinite and the
//! post-projection divergence equals the CG residual.

use super::ops::{lap_ends, laplacian_boundary_term, laplacian_homogeneous};
use super::{
    div_wall_aware, domain_mean, grad_wall_aware, BcSpec, ScalarBc, ScalarField, Trace,
    VectorField2D,
};
use crate::error::{CdaError, Result};
use std::sync::Arc;

/// Iteration knobs shared by all CG-based solves.
#[derive(Debug, Clone, Copy)]
pub struct SolveParams {
    pub tol_rel: f64,
    pub tol_abs: f64,
    pub max_iter: usize,
}

impl Default for SolveParams {
    fn default() -> Self {
        SolveParams {
            tol_rel: 1e-10,
            tol_abs: 1e-14,
            max_iter: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CgOutcome {
    pub iterations: usize,
    pub residual: f64,
}

/// Plain conjugate gradient on a symmetric positive (semi)definite
/// operator. `x` holds the initial guess on entry and the solution on
/// exit. Convergence is declared at
/// `||r||_2 <= max(tol_abs, tol_rel * ||b||_2)`.
pub fn conjugate_gradient(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    params: &SolveParams,
) -> Result<CgOutcome> {
    let n = b.len();
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let target = params.tol_abs.max(params.tol_rel * bnorm);
    if bnorm <= params.tol_abs {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgOutcome {
            iterations: 0,
            residual: bnorm,
        });
    }

    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, axi)| bi - axi).collect();
    let mut p = r.clone();
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    let mut ap = vec![0.0; n];

    for it in 0..params.max_iter {
        if rr.sqrt() <= target {
            return Ok(CgOutcome {
                iterations: it,
                residual: rr.sqrt(),
            });
        }
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 || !pap.is_finite() {
            return Err(CdaError::NonConvergence(format!(
                "CG curvature breakdown (p.Ap = {pap:e}) at iteration {it}"
            )));
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    if rr.sqrt() <= target {
        return Ok(CgOutcome {
            iterations: params.max_iter,
            residual: rr.sqrt(),
        });
    }
    Err(CdaError::NonConvergence(format!(
        "CG exceeded {} iterations, residual {:e} > target {:e}",
        params.max_iter,
        rr.sqrt(),
        target
    )))
}

/// Boundary condition of a Poisson solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PoissonBc {
    Periodic,
    HomogeneousNeumann,
    Dirichlet(Trace),
}

impl PoissonBc {
    fn bc_spec(&self) -> BcSpec {
        match self {
            PoissonBc::Periodic => BcSpec::periodic(),
            PoissonBc::HomogeneousNeumann => BcSpec::neumann(),
            PoissonBc::Dirichlet(t) => BcSpec::dirichlet(*t),
        }
    }

    fn is_gauge_free(&self) -> bool {
        matches!(self, PoissonBc::Periodic | PoissonBc::HomogeneousNeumann)
    }
}

#[derive(Debug, Clone)]
pub struct PoissonSolution {
    pub field: ScalarField,
    /// Mean removed from the right-hand side for gauge-free conditions.
    pub rhs_mean_removed: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Solve `laplacian(f) = rhs` with the compact stencil.
///
/// For periodic / Neumann conditions the right-hand side is projected onto
/// mean-free data (the removed offset is reported) and the solution is
/// gauge-fixed to zero mean.
pub fn poisson_solve(
    rhs: &ScalarField,
    bc: PoissonBc,
    params: &SolveParams,
) -> Result<PoissonSolution> {
    let grid = &rhs.grid;
    let spec = bc.bc_spec();
    let (hor, ver) = lap_ends(grid, &spec);
    if grid.horizontal_bc == super::HorizontalBc::Walls && bc == PoissonBc::Periodic {
        return Err(CdaError::InvalidInput(
            "periodic Poisson solve on a walled grid".into(),
        ));
    }

    let mut b: Vec<f64>;
    let mut rhs_mean_removed = 0.0;
    if bc.is_gauge_free() {
        rhs_mean_removed = domain_mean(rhs);
        b = rhs.data.iter().map(|v| -(v - rhs_mean_removed)).collect();
    } else {
        let bterm = laplacian_boundary_term(grid, &spec);
        b = rhs.data.clone();
        for (bi, ti) in b.iter_mut().zip(&bterm.data) {
            *bi = -(*bi - ti);
        }
    }
    // Scale convergence against the raw rhs so tiny gauge corrections do
    // not force needless iterations.
    let mut x = vec![0.0; grid.len()];
    let mut scratch = ScalarField::zeros(grid);
    let outcome = conjugate_gradient(
        |p, out| {
            scratch.data.copy_from_slice(p);
            let l = laplacian_homogeneous(&scratch, hor, ver);
            for (o, v) in out.iter_mut().zip(&l.data) {
                *o = -v;
            }
        },
        &b,
        &mut x,
        params,
    )?;
    let mut field = ScalarField {
        grid: Arc::clone(grid),
        data: x,
    };
    if bc.is_gauge_free() {
        let m = domain_mean(&field);
        field.add_constant(-m);
    }
    std::mem::drop(b);
    Ok(PoissonSolution {
        field,
        rhs_mean_removed,
        iterations: outcome.iterations,
        residual: outcome.residual,
    })
}

/// Solve `(I - c * laplacian) f = rhs` (implicit diffusion step).
pub fn helmholtz_solve(
    c: f64,
    rhs: &ScalarField,
    bc: &BcSpec,
    boundary_term: Option<&ScalarField>,
    params: &SolveParams,
) -> Result<ScalarField> {
    debug_assert!(c >= 0.0);
    let grid = &rhs.grid;
    let (hor, ver) = lap_ends(grid, bc);
    let mut b = rhs.data.clone();
    match boundary_term {
        Some(t) => {
            for (bi, ti) in b.iter_mut().zip(&t.data) {
                *bi += c * ti;
            }
        }
        None => {
            let needs = matches!(bc.horizontal, ScalarBc::Dirichlet(t) if t != Trace::Zero)
                || (grid.nz > 1
                    && matches!(bc.vertical, ScalarBc::Dirichlet(t) if t != Trace::Zero));
            if needs {
                let t = laplacian_boundary_term(grid, bc);
                for (bi, ti) in b.iter_mut().zip(&t.data) {
                    *bi += c * ti;
                }
            }
        }
    }
    let mut x = rhs.data.clone();
    let mut scratch = ScalarField::zeros(grid);
    conjugate_gradient(
        |p, out| {
            scratch.data.copy_from_slice(p);
            let l = laplacian_homogeneous(&scratch, hor, ver);
            for ((o, pv), lv) in out.iter_mut().zip(p).zip(&l.data) {
                *o = pv - c * lv;
            }
        },
        &b,
        &mut x,
        params,
    )?;
    Ok(ScalarField {
        grid: Arc::clone(grid),
        data: x,
    })
}

/// Pressure projection onto the discretely divergence-free space.
///
/// Solves `-div(grad q) = -div v` with the wall-aware adjoint pair and
/// subtracts `grad q`, so the remaining divergence equals the CG residual.
#[derive(Debug, Clone)]
pub struct Projector {
    pub params: SolveParams,
}

impl Projector {
    pub fn new(params: SolveParams) -> Self {
        Projector { params }
    }

    /// Project `v` in place; returns the zero-mean potential `q` and the
    /// solve statistics. `warm` seeds the CG iteration (the previous
    /// step's potential is an excellent guess).
    pub fn project(
        &self,
        v: &mut VectorField2D,
        warm: Option<&ScalarField>,
    ) -> Result<(ScalarField, CgOutcome)> {
        let grid = Arc::clone(&v.grid);
        let div = div_wall_aware(v);
        let b: Vec<f64> = div.data.iter().map(|d| -d).collect();
        let mut x = match warm {
            Some(w) => w.data.clone(),
            None => vec![0.0; grid.len()],
        };
        let mut scratch = ScalarField::zeros(&grid);
        let outcome = conjugate_gradient(
            |p, out| {
                scratch.data.copy_from_slice(p);
                let g = grad_wall_aware(&scratch);
                let d = div_wall_aware(&g);
                for (o, v) in out.iter_mut().zip(&d.data) {
                    *o = -v;
                }
            },
            &b,
            &mut x,
            &self.params,
        )?;
        let mut q = ScalarField { grid, data: x };
        let m = domain_mean(&q);
        q.add_constant(-m);
        let gq = grad_wall_aware(&q);
        v.axpy(-1.0, &gq);
        Ok((q, outcome))
    }
}
