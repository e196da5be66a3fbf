//! Discrete differential operators on cell-centered fields.
//!
//! Two families of first-order stencils coexist:
//!
//! * the diagnostic operators `grad_h` / `div_h`, second-order central in
//!   the interior with second-order one-sided rows at solid walls (exact
//!   for linear fields everywhere), and
//! * the wall-aware pair `grad_wall_aware` / `div_wall_aware` built from
//!   ghost reflections, which are exact negative transposes of each other
//!   and drive the pressure projection.
//!
//! The Laplacian is the compact 5-point (2-D) / 7-point (3-D) stencil with
//! ghost-cell boundary closures.

use super::{BcSpec, Grid, ScalarBc, ScalarField, Trace, VectorField2D};
use crate::error::Result;
use std::sync::Arc;

/// End-row treatment for a first-derivative line stencil.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DiffEnds {
    Periodic,
    OneSided,
    /// Ghost mirrors the first interior cell (zero normal derivative).
    GhostCopy,
    /// Ghost negates the first interior cell (zero wall value).
    GhostNegate,
}

/// First derivative along one line of samples.
fn diff_line(src: &[f64], dst: &mut [f64], h: f64, ends: DiffEnds) {
    let n = src.len();
    let c = 1.0 / (2.0 * h);
    for i in 1..n - 1 {
        dst[i] = (src[i + 1] - src[i - 1]) * c;
    }
    match ends {
        DiffEnds::Periodic => {
            dst[0] = (src[1] - src[n - 1]) * c;
            dst[n - 1] = (src[0] - src[n - 2]) * c;
        }
        DiffEnds::OneSided => {
            dst[0] = (-3.0 * src[0] + 4.0 * src[1] - src[2]) * c;
            dst[n - 1] = (3.0 * src[n - 1] - 4.0 * src[n - 2] + src[n - 3]) * c;
        }
        DiffEnds::GhostCopy => {
            dst[0] = (src[1] - src[0]) * c;
            dst[n - 1] = (src[n - 1] - src[n - 2]) * c;
        }
        DiffEnds::GhostNegate => {
            dst[0] = (src[1] + src[0]) * c;
            dst[n - 1] = -(src[n - 1] + src[n - 2]) * c;
        }
    }
}

fn ends_for(grid: &Grid, walls: DiffEnds) -> DiffEnds {
    match grid.horizontal_bc {
        super::HorizontalBc::Periodic => DiffEnds::Periodic,
        super::HorizontalBc::Walls => walls,
    }
}

/// Apply `diff_line` along the x axis of every horizontal slice.
fn d_dx(f: &ScalarField, ends: DiffEnds) -> ScalarField {
    let g = &f.grid;
    let mut out = ScalarField::zeros(g);
    let mut line = vec![0.0; g.nx];
    for k in 0..g.nz {
        for j in 0..g.ny {
            let base = g.idx(0, j, k);
            diff_line(&f.data[base..base + g.nx], &mut line, g.hx(), ends);
            out.data[base..base + g.nx].copy_from_slice(&line);
        }
    }
    out
}

/// Apply `diff_line` along the y axis of every horizontal slice.
fn d_dy(f: &ScalarField, ends: DiffEnds) -> ScalarField {
    let g = &f.grid;
    let mut out = ScalarField::zeros(g);
    let mut src = vec![0.0; g.ny];
    let mut dst = vec![0.0; g.ny];
    for k in 0..g.nz {
        for i in 0..g.nx {
            for j in 0..g.ny {
                src[j] = f.at(i, j, k);
            }
            diff_line(&src, &mut dst, g.hy(), ends);
            for j in 0..g.ny {
                *out.at_mut(i, j, k) = dst[j];
            }
        }
    }
    out
}

/// Horizontal gradient components with the diagnostic stencil (central in
/// the interior, second-order one-sided at walls). Works slice-wise on 3-D
/// fields.
pub fn grad_h_components(f: &ScalarField) -> (ScalarField, ScalarField) {
    let ends = ends_for(&f.grid, DiffEnds::OneSided);
    (d_dx(f, ends), d_dy(f, ends))
}

/// Horizontal gradient of a purely horizontal scalar field.
pub fn grad_h(f: &ScalarField) -> VectorField2D {
    debug_assert_eq!(f.grid.nz, 1, "grad_h expects an nz = 1 field");
    let (gx, gy) = grad_h_components(f);
    VectorField2D {
        grid: Arc::clone(&f.grid),
        x: gx.data,
        y: gy.data,
    }
}

/// Horizontal divergence mirroring `grad_h` component-wise.
pub fn div_h(v: &VectorField2D) -> ScalarField {
    let ends = ends_for(&v.grid, DiffEnds::OneSided);
    let fx = ScalarField {
        grid: Arc::clone(&v.grid),
        data: v.x.clone(),
    };
    let fy = ScalarField {
        grid: Arc::clone(&v.grid),
        data: v.y.clone(),
    };
    let mut out = d_dx(&fx, ends);
    let dy = d_dy(&fy, ends);
    out.axpy(1.0, &dy);
    out
}

/// Pressure-gradient half of the adjoint pair: copy ghosts at walls.
pub fn grad_wall_aware(q: &ScalarField) -> VectorField2D {
    debug_assert_eq!(q.grid.nz, 1);
    let ends = ends_for(&q.grid, DiffEnds::GhostCopy);
    let gx = d_dx(q, ends);
    let gy = d_dy(q, ends);
    VectorField2D {
        grid: Arc::clone(&q.grid),
        x: gx.data,
        y: gy.data,
    }
}

/// Velocity-divergence half of the adjoint pair: negate ghosts at walls
/// (the no-slip wall value). Satisfies `<div v, q> = -<v, grad q>` exactly
/// against `grad_wall_aware`, which is what the projection annihilates.
pub fn div_wall_aware(v: &VectorField2D) -> ScalarField {
    let ends = ends_for(&v.grid, DiffEnds::GhostNegate);
    let fx = ScalarField {
        grid: Arc::clone(&v.grid),
        data: v.x.clone(),
    };
    let fy = ScalarField {
        grid: Arc::clone(&v.grid),
        data: v.y.clone(),
    };
    let mut out = d_dx(&fx, ends);
    let dy = d_dy(&fy, ends);
    out.axpy(1.0, &dy);
    out
}

/// Horizontal gradient with boundary-condition-consistent ghosts: periodic
/// wrap or Dirichlet reflection `ghost = 2 g - f`. Used for advection of
/// fields that carry a boundary trace.
pub fn grad_h_with_trace(f: &ScalarField, trace: &Trace) -> (ScalarField, ScalarField) {
    let g = &f.grid;
    match g.horizontal_bc {
        super::HorizontalBc::Periodic => grad_h_components(f),
        super::HorizontalBc::Walls => {
            let mut gx = d_dx(f, DiffEnds::GhostNegate);
            let mut gy = d_dy(f, DiffEnds::GhostNegate);
            // GhostNegate realizes ghost = -f; correct the wall rows by the
            // trace contribution: ghost = 2g - f adds 2g to the negate form.
            let (cx, cy) = (1.0 / (2.0 * g.hx()), 1.0 / (2.0 * g.hy()));
            for k in 0..g.nz {
                let z = (k as f64 + 0.5) * g.hz();
                for j in 0..g.ny {
                    let y = (j as f64 + 0.5) * g.hy();
                    let gl = trace.eval(0.0, y, z);
                    let gr = trace.eval(g.lx, y, z);
                    *gx.at_mut(0, j, k) -= 2.0 * gl * cx;
                    *gx.at_mut(g.nx - 1, j, k) += 2.0 * gr * cx;
                }
                for i in 0..g.nx {
                    let x = (i as f64 + 0.5) * g.hx();
                    let gl = trace.eval(x, 0.0, z);
                    let gr = trace.eval(x, g.ly, z);
                    *gy.at_mut(i, 0, k) -= 2.0 * gl * cy;
                    *gy.at_mut(i, g.ny - 1, k) += 2.0 * gr * cy;
                }
            }
            (gx, gy)
        }
    }
}

/// x-derivative with even-reflection ghosts at walls. Quadratic products
/// of no-slip fields reflect evenly, so this is the stencil for the
/// conservative advection divergence.
pub(crate) fn d_dx_even(f: &ScalarField) -> ScalarField {
    d_dx(f, ends_for(&f.grid, DiffEnds::GhostCopy))
}

/// y-derivative counterpart of [`d_dx_even`].
pub(crate) fn d_dy_even(f: &ScalarField) -> ScalarField {
    d_dy(f, ends_for(&f.grid, DiffEnds::GhostCopy))
}

/// Vertical first derivative, one-sided at the plates.
pub fn vertical_derivative(f: &ScalarField) -> ScalarField {
    let g = &f.grid;
    debug_assert!(g.nz > 1);
    let mut out = ScalarField::zeros(g);
    let mut src = vec![0.0; g.nz];
    let mut dst = vec![0.0; g.nz];
    for j in 0..g.ny {
        for i in 0..g.nx {
            for k in 0..g.nz {
                src[k] = f.at(i, j, k);
            }
            diff_line(&src, &mut dst, g.hz(), DiffEnds::OneSided);
            for k in 0..g.nz {
                *out.at_mut(i, j, k) = dst[k];
            }
        }
    }
    out
}

/// Homogeneous end treatment of the second-derivative stencil.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LapEnds {
    Periodic,
    DirichletZero,
    NeumannZero,
}

impl LapEnds {
    fn from_bc(bc: &ScalarBc) -> LapEnds {
        match bc {
            ScalarBc::Periodic => LapEnds::Periodic,
            ScalarBc::Dirichlet(_) => LapEnds::DirichletZero,
            ScalarBc::Neumann => LapEnds::NeumannZero,
        }
    }
}

fn lap_line(src: &[f64], dst: &mut [f64], h: f64, ends: LapEnds) {
    let n = src.len();
    let c = 1.0 / (h * h);
    for i in 1..n - 1 {
        dst[i] += (src[i + 1] - 2.0 * src[i] + src[i - 1]) * c;
    }
    match ends {
        LapEnds::Periodic => {
            dst[0] += (src[1] - 2.0 * src[0] + src[n - 1]) * c;
            dst[n - 1] += (src[0] - 2.0 * src[n - 1] + src[n - 2]) * c;
        }
        LapEnds::DirichletZero => {
            dst[0] += (src[1] - 3.0 * src[0]) * c;
            dst[n - 1] += (src[n - 2] - 3.0 * src[n - 1]) * c;
        }
        LapEnds::NeumannZero => {
            dst[0] += (src[1] - src[0]) * c;
            dst[n - 1] += (src[n - 2] - src[n - 1]) * c;
        }
    }
}

/// Compact Laplacian with homogeneous boundary closures. The inhomogeneous
/// trace contribution lives in `laplacian_boundary_term`.
pub(crate) fn laplacian_homogeneous(f: &ScalarField, hor: LapEnds, ver: LapEnds) -> ScalarField {
    let g = &f.grid;
    let mut out = ScalarField::zeros(g);
    // x sweep
    let mut line = vec![0.0; g.nx];
    for k in 0..g.nz {
        for j in 0..g.ny {
            let base = g.idx(0, j, k);
            line.iter_mut().for_each(|v| *v = 0.0);
            lap_line(&f.data[base..base + g.nx], &mut line, g.hx(), hor);
            for i in 0..g.nx {
                out.data[base + i] += line[i];
            }
        }
    }
    // y sweep
    let mut src = vec![0.0; g.ny];
    let mut dst = vec![0.0; g.ny];
    for k in 0..g.nz {
        for i in 0..g.nx {
            for j in 0..g.ny {
                src[j] = f.at(i, j, k);
            }
            dst.iter_mut().for_each(|v| *v = 0.0);
            lap_line(&src, &mut dst, g.hy(), hor);
            for j in 0..g.ny {
                *out.at_mut(i, j, k) += dst[j];
            }
        }
    }
    // z sweep
    if g.nz > 1 {
        let mut src = vec![0.0; g.nz];
        let mut dst = vec![0.0; g.nz];
        for j in 0..g.ny {
            for i in 0..g.nx {
                for k in 0..g.nz {
                    src[k] = f.at(i, j, k);
                }
                dst.iter_mut().for_each(|v| *v = 0.0);
                lap_line(&src, &mut dst, g.hz(), ver);
                for k in 0..g.nz {
                    *out.at_mut(i, j, k) += dst[k];
                }
            }
        }
    }
    out
}

/// Boundary trace contribution of the compact Laplacian: the value the
/// stencil adds at wall-adjacent cells, `2 g / h^2` per Dirichlet face.
pub(crate) fn laplacian_boundary_term(grid: &Arc<Grid>, bc: &BcSpec) -> ScalarField {
    let g = grid;
    let mut out = ScalarField::zeros(g);
    if let ScalarBc::Dirichlet(trace) = bc.horizontal {
        if g.horizontal_bc == super::HorizontalBc::Walls {
            let cx = 2.0 / (g.hx() * g.hx());
            let cy = 2.0 / (g.hy() * g.hy());
            for k in 0..g.nz {
                let z = (k as f64 + 0.5) * g.hz();
                for j in 0..g.ny {
                    let y = (j as f64 + 0.5) * g.hy();
                    *out.at_mut(0, j, k) += cx * trace.eval(0.0, y, z);
                    *out.at_mut(g.nx - 1, j, k) += cx * trace.eval(g.lx, y, z);
                }
                for i in 0..g.nx {
                    let x = (i as f64 + 0.5) * g.hx();
                    *out.at_mut(i, 0, k) += cy * trace.eval(x, 0.0, z);
                    *out.at_mut(i, g.ny - 1, k) += cy * trace.eval(x, g.ly, z);
                }
            }
        }
    }
    if g.nz > 1 {
        if let ScalarBc::Dirichlet(trace) = bc.vertical {
            let cz = 2.0 / (g.hz() * g.hz());
            for j in 0..g.ny {
                let y = (j as f64 + 0.5) * g.hy();
                for i in 0..g.nx {
                    let x = (i as f64 + 0.5) * g.hx();
                    *out.at_mut(i, j, 0) += cz * trace.eval(x, y, 0.0);
                    *out.at_mut(i, j, g.nz - 1) += cz * trace.eval(x, y, 1.0);
                }
            }
        }
    }
    out
}

pub(crate) fn lap_ends(grid: &Grid, bc: &BcSpec) -> (LapEnds, LapEnds) {
    let hor = match grid.horizontal_bc {
        super::HorizontalBc::Periodic => LapEnds::Periodic,
        super::HorizontalBc::Walls => LapEnds::from_bc(&bc.horizontal),
    };
    let ver = LapEnds::from_bc(&bc.vertical);
    (hor, ver)
}

/// Compact 5-point (2-D) / 7-point (3-D) Laplacian with the supplied
/// boundary conditions, trace contributions included.
pub fn laplacian(f: &ScalarField, bc: &BcSpec) -> Result<ScalarField> {
    let (hor, ver) = lap_ends(&f.grid, bc);
    let mut out = laplacian_homogeneous(f, hor, ver);
    let b = laplacian_boundary_term(&f.grid, bc);
    out.axpy(1.0, &b);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::{domain_mean, HorizontalBc, NormKind};
    use super::*;
    use crate::fields::norm;

    fn wgrid(n: usize) -> Arc<Grid> {
        Grid::new(n, n, 1, 1.0, 1.0, HorizontalBc::Walls).unwrap()
    }

    fn pgrid(n: usize) -> Arc<Grid> {
        Grid::new(n, n, 1, 1.0, 1.0, HorizontalBc::Periodic).unwrap()
    }

    #[test]
    fn grad_of_linear_is_exact_everywhere() {
        let g = wgrid(8);
        let f = ScalarField::from_fn(&g, |x, _, _| 3.0 * x);
        let v = grad_h(&f);
        for (a, b) in v.x.iter().zip(&v.y) {
            assert!((a - 3.0).abs() < 1e-12);
            assert!(b.abs() < 1e-12);
        }
    }

    #[test]
    fn grad_of_constant_vanishes() {
        let g = wgrid(8);
        let f = ScalarField::constant(&g, 4.2);
        let v = grad_h(&f);
        assert!(v.max_abs() < 1e-13);
    }

    #[test]
    fn grad_second_order_on_periodic_sine() {
        let pi = std::f64::consts::PI;
        let mut prev: Option<f64> = None;
        for n in [16usize, 32, 64] {
            let g = pgrid(n);
            let f = ScalarField::from_fn(&g, |x, _, _| (2.0 * pi * x).sin());
            let v = grad_h(&f);
            let mut err = 0.0f64;
            for j in 0..n {
                for i in 0..n {
                    let (x, _, _) = g.center(i, j, 0);
                    let exact = 2.0 * pi * (2.0 * pi * x).cos();
                    err = err.max((v.x[j * n + i] - exact).abs());
                }
            }
            if let Some(p) = prev {
                assert!(p / err > 3.5, "not second order: {p} vs {err}");
            }
            prev = Some(err);
        }
    }

    #[test]
    fn div_of_rotation_field_vanishes() {
        let g = wgrid(8);
        let v = VectorField2D::from_fn(&g, |x, y| (y, -x));
        let d = div_h(&v);
        for val in &d.data {
            assert!(val.abs() < 1e-12);
        }
    }

    #[test]
    fn div_of_radial_field_is_two() {
        let g = wgrid(8);
        let v = VectorField2D::from_fn(&g, |x, y| (x, y));
        let d = div_h(&v);
        for val in &d.data {
            assert!((val - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn div_grad_composition_matches_wide_stencil() {
        // On a periodic grid the composition div_h(grad_h f) telescopes to
        // the wide 2h Laplacian; check the index bookkeeping exactly.
        let pi = std::f64::consts::PI;
        let n = 16;
        let g = pgrid(n);
        let f = ScalarField::from_fn(&g, |x, y, _| (2.0 * pi * x).sin() * (2.0 * pi * y).sin());
        let comp = div_h(&grad_h(&f));
        let h = g.hx();
        for j in 0..n {
            for i in 0..n {
                let ip2 = f.at((i + 2) % n, j, 0);
                let im2 = f.at((i + n - 2) % n, j, 0);
                let jp2 = f.at(i, (j + 2) % n, 0);
                let jm2 = f.at(i, (j + n - 2) % n, 0);
                let wide = (ip2 - 2.0 * f.at(i, j, 0) + im2) / (4.0 * h * h)
                    + (jp2 - 2.0 * f.at(i, j, 0) + jm2) / (4.0 * h * h);
                assert!((comp.at(i, j, 0) - wide).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn adjointness_for_compactly_supported_fields() {
        // <div v, f> = -<v, grad f> when both vanish near the walls.
        let g = wgrid(16);
        let bump = |x: f64, y: f64| {
            let s = (x - 0.5).powi(2) + (y - 0.5).powi(2);
            if s < 0.09 {
                (1.0 - s / 0.09).powi(3)
            } else {
                0.0
            }
        };
        let f = ScalarField::from_fn(&g, |x, y, _| bump(x, y) * (3.0 * x + y));
        let v = VectorField2D::from_fn(&g, |x, y| (bump(x, y) * y, bump(x, y) * (x * x)));
        let dv = div_h(&v);
        let gf = grad_h(&f);
        let lhs: f64 = dv.data.iter().zip(&f.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = v
            .x
            .iter()
            .zip(&gf.x)
            .chain(v.y.iter().zip(&gf.y))
            .map(|(a, b)| a * b)
            .sum();
        assert!(
            (lhs + rhs).abs() < 1e-12 * (lhs.abs() + rhs.abs()).max(1.0),
            "adjointness defect: {lhs} vs {rhs}"
        );
    }

    #[test]
    fn wall_aware_pair_is_exactly_adjoint() {
        for bc in [HorizontalBc::Walls, HorizontalBc::Periodic] {
            let g = Grid::new(12, 10, 1, 1.3, 0.9, bc).unwrap();
            let q = ScalarField::from_fn(&g, |x, y, _| (7.1 * x).sin() + (3.0 * y).cos() * x);
            let v = VectorField2D::from_fn(&g, |x, y| ((5.0 * y).sin() + x, (4.0 * x).cos() - y));
            let dv = div_wall_aware(&v);
            let gq = grad_wall_aware(&q);
            let lhs: f64 = dv.data.iter().zip(&q.data).map(|(a, b)| a * b).sum();
            let rhs: f64 = v
                .x
                .iter()
                .zip(&gq.x)
                .chain(v.y.iter().zip(&gq.y))
                .map(|(a, b)| a * b)
                .sum();
            assert!(
                (lhs + rhs).abs() < 1e-11 * (lhs.abs() + rhs.abs()).max(1.0),
                "{bc:?}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn laplacian_of_linear_vanishes_in_interior() {
        let g = wgrid(10);
        let f = ScalarField::from_fn(&g, |x, y, _| 2.0 * x - y);
        let l = laplacian(&f, &BcSpec::neumann()).unwrap();
        for j in 1..9 {
            for i in 1..9 {
                assert!(l.at(i, j, 0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn laplacian_eigenfunction_second_order() {
        let pi = std::f64::consts::PI;
        let mut prev: Option<f64> = None;
        for n in [16usize, 32, 64] {
            let g = pgrid(n);
            let f = ScalarField::from_fn(&g, |x, y, _| (2.0 * pi * x).sin() * (2.0 * pi * y).sin());
            let l = laplacian(&f, &BcSpec::periodic()).unwrap();
            let mut diff = l.clone();
            diff.axpy(8.0 * pi * pi, &f);
            let err = norm(&diff, NormKind::L2);
            if let Some(p) = prev {
                assert!(p / err > 3.5);
            }
            prev = Some(err);
        }
    }

    #[test]
    fn laplacian_constant_with_matching_dirichlet_data() {
        let g = wgrid(8);
        let f = ScalarField::constant(&g, 2.5);
        let l = laplacian(&f, &BcSpec::dirichlet(Trace::Const(2.5))).unwrap();
        for v in &l.data {
            assert!(v.abs() < 1e-10);
        }
    }

    #[test]
    fn vertical_average_commutes_with_grad_h() {
        let g = Grid::new(8, 8, 6, 1.0, 1.0, HorizontalBc::Walls).unwrap();
        let f = ScalarField::from_fn(&g, |x, y, z| (3.0 * x).sin() * y + z * x);
        let (gx, _) = grad_h_components(&f);
        let a = super::super::vertical_average(&gx);
        let (bx, _) = grad_h_components(&super::super::vertical_average(&f));
        for (p, q) in a.data.iter().zip(&bx.data) {
            assert!((p - q).abs() < 1e-13);
        }
    }

    #[test]
    fn grad_with_trace_respects_dirichlet_data() {
        // For f matching a constant trace, the wall rows see the reflected
        // ghost and the gradient of a constant field vanishes.
        let g = wgrid(8);
        let f = ScalarField::constant(&g, 1.7);
        let (gx, gy) = grad_h_with_trace(&f, &Trace::Const(1.7));
        for v in gx.data.iter().chain(gy.data.iter()) {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn mean_is_preserved_by_periodic_laplacian() {
        let g = pgrid(12);
        let f = ScalarField::from_fn(&g, |x, y, _| (13.0 * x).sin() * (5.0 * y).cos() + 0.3);
        let l = laplacian(&f, &BcSpec::periodic()).unwrap();
        assert!(domain_mean(&l).abs() < 1e-10);
    }
}
