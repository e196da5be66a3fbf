//! Structured cell-centered grids, scalar/vector fields, quadrature norms
//! and averages.
//!
//! The domain is a box `[0,lx] x [0,ly] x (0,1)`; the vertical extent is
//! fixed to one. Horizontal boundaries are either periodic or solid walls.
//! Fields are sampled at cell centers and carry a shared grid handle, so
//! they are cheap to clone structurally and safe to move across threads.

mod ops;
mod poisson;
mod snapshot;

pub use ops::{
    div_h, div_wall_aware, grad_h, grad_h_components, grad_h_with_trace, grad_wall_aware,
    laplacian, vertical_derivative,
};
pub(crate) use ops::{
    d_dx_even as ops_d_dx_even, d_dy_even as ops_d_dy_even, lap_ends as ops_lap_ends,
    laplacian_boundary_term as ops_boundary_term, laplacian_homogeneous as ops_laplacian_homogeneous,
};
pub use poisson::{
    conjugate_gradient, helmholtz_solve, poisson_solve, CgOutcome, PoissonBc, PoissonSolution,
    Projector, SolveParams,
};
pub use snapshot::{read_snapshot, write_snapshot};

use crate::error::{CdaError, Result};
use std::sync::Arc;

/// Lateral boundary treatment of the box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HorizontalBc {
    Periodic,
    Walls,
}

/// Uniform cell-centered grid. `nz = 1` describes purely horizontal fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub lx: f64,
    pub ly: f64,
    pub horizontal_bc: HorizontalBc,
}

impl Grid {
    pub fn new(
        nx: usize,
        ny: usize,
        nz: usize,
        lx: f64,
        ly: f64,
        horizontal_bc: HorizontalBc,
    ) -> Result<Arc<Grid>> {
        if nx < 4 || ny < 4 {
            return Err(CdaError::Grid(format!(
                "horizontal cell counts must be >= 4 for the differential stencils, got {nx}x{ny}"
            )));
        }
        if nz != 1 && nz < 4 {
            return Err(CdaError::Grid(format!(
                "vertical cell count must be 1 or >= 4, got {nz}"
            )));
        }
        if !(lx > 0.0 && ly > 0.0) || !lx.is_finite() || !ly.is_finite() {
            return Err(CdaError::Grid(format!(
                "extents must be positive finite, got lx={lx} ly={ly}"
            )));
        }
        Ok(Arc::new(Grid {
            nx,
            ny,
            nz,
            lx,
            ly,
            horizontal_bc,
        }))
    }

    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    /// Vertical spacing; the vertical extent is fixed to 1.
    pub fn hz(&self) -> f64 {
        1.0 / self.nz as f64
    }

    /// Cell volume (a horizontal slice of thickness `hz`).
    pub fn cell_volume(&self) -> f64 {
        self.hx() * self.hy() * self.hz()
    }

    /// Total domain volume `lx * ly * 1`.
    pub fn volume(&self) -> f64 {
        self.lx * self.ly
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Cell-center coordinates of cell `(i, j, k)`.
    pub fn center(&self, i: usize, j: usize, k: usize) -> (f64, f64, f64) {
        (
            (i as f64 + 0.5) * self.hx(),
            (j as f64 + 0.5) * self.hy(),
            (k as f64 + 0.5) * self.hz(),
        )
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.ny + j) * self.nx + i
    }

    /// The matching horizontal (`nz = 1`) grid.
    pub fn horizontal(self: &Arc<Grid>) -> Arc<Grid> {
        if self.nz == 1 {
            Arc::clone(self)
        } else {
            Arc::new(Grid {
                nz: 1,
                ..(**self).clone()
            })
        }
    }

    /// True when both grids share the horizontal layout.
    pub fn horizontally_compatible(&self, other: &Grid) -> bool {
        self.nx == other.nx
            && self.ny == other.ny
            && self.lx == other.lx
            && self.ly == other.ly
            && self.horizontal_bc == other.horizontal_bc
    }
}

/// Boundary trace data on the walls of the box.
///
/// `VerticalLinear` interpolates between the bottom and top plate values
/// along `x3`, which is the Rayleigh-Benard heating profile and is
/// continuous along the lateral edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Trace {
    Zero,
    Const(f64),
    VerticalLinear { bottom: f64, top: f64 },
}

impl Trace {
    pub fn eval(&self, _x: f64, _y: f64, z: f64) -> f64 {
        match *self {
            Trace::Zero => 0.0,
            Trace::Const(c) => c,
            Trace::VerticalLinear { bottom, top } => bottom + (top - bottom) * z,
        }
    }
}

/// Scalar boundary condition along one direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarBc {
    Periodic,
    Dirichlet(Trace),
    Neumann,
}

/// Per-direction boundary conditions for scalar operators. The vertical
/// part is ignored on `nz = 1` grids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BcSpec {
    pub horizontal: ScalarBc,
    pub vertical: ScalarBc,
}

impl BcSpec {
    pub fn periodic() -> Self {
        BcSpec {
            horizontal: ScalarBc::Periodic,
            vertical: ScalarBc::Neumann,
        }
    }

    pub fn dirichlet(trace: Trace) -> Self {
        BcSpec {
            horizontal: ScalarBc::Dirichlet(trace),
            vertical: ScalarBc::Dirichlet(trace),
        }
    }

    pub fn neumann() -> Self {
        BcSpec {
            horizontal: ScalarBc::Neumann,
            vertical: ScalarBc::Neumann,
        }
    }
}

/// Scalar samples at cell centers.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Arc<Grid>,
    pub data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        ScalarField {
            grid: Arc::clone(grid),
            data: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: &Arc<Grid>, c: f64) -> Self {
        ScalarField {
            grid: Arc::clone(grid),
            data: vec![c; grid.len()],
        }
    }

    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(f64, f64, f64) -> f64) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for k in 0..grid.nz {
            for j in 0..grid.ny {
                for i in 0..grid.nx {
                    let (x, y, z) = grid.center(i, j, k);
                    data.push(f(x, y, z));
                }
            }
        }
        ScalarField {
            grid: Arc::clone(grid),
            data,
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.grid.idx(i, j, k)]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize, k: usize) -> &mut f64 {
        let idx = self.grid.idx(i, j, k);
        &mut self.data[idx]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self += scale * other`, element-wise.
    pub fn axpy(&mut self, scale: f64, other: &ScalarField) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn add_constant(&mut self, c: f64) {
        for a in &mut self.data {
            *a += c;
        }
    }
}

/// Horizontal vector field (velocity-like), defined on an `nz = 1` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField2D {
    pub grid: Arc<Grid>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl VectorField2D {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        let g = grid.horizontal();
        let n = g.len();
        VectorField2D {
            grid: g,
            x: vec![0.0; n],
            y: vec![0.0; n],
        }
    }

    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        let g = grid.horizontal();
        let mut x = Vec::with_capacity(g.len());
        let mut y = Vec::with_capacity(g.len());
        for j in 0..g.ny {
            for i in 0..g.nx {
                let (cx, cy, _) = g.center(i, j, 0);
                let (vx, vy) = f(cx, cy);
                x.push(vx);
                y.push(vy);
            }
        }
        VectorField2D { grid: g, x, y }
    }

    pub fn component(&self, c: usize) -> ScalarField {
        ScalarField {
            grid: Arc::clone(&self.grid),
            data: if c == 0 { self.x.clone() } else { self.y.clone() },
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.y.iter()).all(|v| v.is_finite())
    }

    pub fn axpy(&mut self, scale: f64, other: &VectorField2D) {
        for (a, b) in self.x.iter_mut().zip(&other.x) {
            *a += scale * b;
        }
        for (a, b) in self.y.iter_mut().zip(&other.y) {
            *a += scale * b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.x
            .iter()
            .chain(self.y.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Norm kinds used by the diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    L2,
    L4,
    H1Seminorm,
}

/// Midpoint quadrature over the vertical coordinate: `f -> <f>`.
pub fn vertical_average(f: &ScalarField) -> ScalarField {
    let g = &f.grid;
    let out_grid = g.horizontal();
    let mut data = vec![0.0; g.nx * g.ny];
    let inv = 1.0 / g.nz as f64;
    for k in 0..g.nz {
        for j in 0..g.ny {
            for i in 0..g.nx {
                data[j * g.nx + i] += f.at(i, j, k);
            }
        }
    }
    for v in &mut data {
        *v *= inv;
    }
    ScalarField {
        grid: out_grid,
        data,
    }
}

/// Volume-weighted domain mean.
pub fn domain_mean(f: &ScalarField) -> f64 {
    let sum: f64 = f.data.iter().sum();
    sum / f.data.len() as f64
}

/// Discrete L^p quadrature norms and the H1 seminorm of a scalar field.
///
/// The H1 seminorm uses the same one-sided-at-walls stencils as `grad_h`,
/// plus one-sided vertical differences on 3-D grids.
pub fn norm(f: &ScalarField, kind: NormKind) -> f64 {
    let dv = f.grid.cell_volume();
    match kind {
        NormKind::L2 => {
            let s: f64 = f.data.iter().map(|v| v * v).sum();
            (s * dv).sqrt()
        }
        NormKind::L4 => {
            let s: f64 = f.data.iter().map(|v| v * v * v * v).sum();
            (s * dv).powf(0.25)
        }
        NormKind::H1Seminorm => {
            let (gx, gy) = grad_h_components(f);
            let mut s: f64 = gx
                .data
                .iter()
                .zip(&gy.data)
                .map(|(a, b)| a * a + b * b)
                .sum();
            if f.grid.nz > 1 {
                let gz = vertical_derivative(f);
                s += gz.data.iter().map(|v| v * v).sum::<f64>();
            }
            (s * dv).sqrt()
        }
    }
}

/// L2 / L4 / H1 norms of a horizontal vector field (component-wise sum).
pub fn vector_norm(v: &VectorField2D, kind: NormKind) -> f64 {
    let dv = v.grid.cell_volume();
    match kind {
        NormKind::L2 => {
            let s: f64 = v.x.iter().zip(&v.y).map(|(a, b)| a * a + b * b).sum();
            (s * dv).sqrt()
        }
        NormKind::L4 => {
            let s: f64 = v
                .x
                .iter()
                .zip(&v.y)
                .map(|(a, b)| {
                    let m = a * a + b * b;
                    m * m
                })
                .sum();
            (s * dv).powf(0.25)
        }
        NormKind::H1Seminorm => {
            let nx = norm(&v.component(0), NormKind::H1Seminorm);
            let ny = norm(&v.component(1), NormKind::H1Seminorm);
            (nx * nx + ny * ny).sqrt()
        }
    }
}

/// Discrete L1 norm of a scalar field.
pub fn l1_norm(f: &ScalarField) -> f64 {
    let dv = f.grid.cell_volume();
    f.data.iter().map(|v| v.abs()).sum::<f64>() * dv
}

/// Discrete L1 norm of a vector field, `int |v| dx` with the Euclidean
/// magnitude.
pub fn vector_l1_norm(v: &VectorField2D) -> f64 {
    let dv = v.grid.cell_volume();
    v.x.iter()
        .zip(&v.y)
        .map(|(a, b)| (a * a + b * b).sqrt())
        .sum::<f64>()
        * dv
}

/// Functional inequality diagnostics for estimating the constants that
/// feed the nudging-threshold reasoning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InequalityKind {
    Ladyzhenskaya,
    Poincare,
}

/// Ratio `||f||_{L4}^2 / (||f||_{L2} ||grad f||_{L2})` (Ladyzhenskaya) or
/// `||f||_{L2} / ||grad f||_{L2}` (Poincare). The field is expected to
/// vanish on walls or be mean-free on periodic grids.
pub fn inequality_ratio(f: &ScalarField, kind: InequalityKind) -> Result<f64> {
    let h1 = norm(f, NormKind::H1Seminorm);
    if h1 == 0.0 {
        return Err(CdaError::InvalidInput(
            "inequality ratio undefined for a gradient-free field".into(),
        ));
    }
    let l2 = norm(f, NormKind::L2);
    Ok(match kind {
        InequalityKind::Poincare => l2 / h1,
        InequalityKind::Ladyzhenskaya => {
            let l4 = norm(f, NormKind::L4);
            l4 * l4 / (l2 * h1)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(nx: usize, ny: usize, nz: usize, bc: HorizontalBc) -> Arc<Grid> {
        Grid::new(nx, ny, nz, 1.0, 1.0, bc).unwrap()
    }

    #[test]
    fn grid_rejects_small_counts() {
        assert!(Grid::new(3, 8, 1, 1.0, 1.0, HorizontalBc::Walls).is_err());
        assert!(Grid::new(8, 8, 2, 1.0, 1.0, HorizontalBc::Walls).is_err());
        assert!(Grid::new(8, 8, 1, 0.0, 1.0, HorizontalBc::Walls).is_err());
    }

    #[test]
    fn vertical_average_of_constant_is_identity() {
        let g = grid(6, 6, 8, HorizontalBc::Walls);
        let f = ScalarField::from_fn(&g, |x, y, _| x + 2.0 * y);
        let a = vertical_average(&f);
        for j in 0..6 {
            for i in 0..6 {
                assert!((a.at(i, j, 0) - f.at(i, j, 0)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn vertical_average_linear_exact() {
        let g = grid(4, 4, 16, HorizontalBc::Walls);
        let f = ScalarField::from_fn(&g, |_, _, z| z);
        let a = vertical_average(&f);
        for v in &a.data {
            assert!((v - 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn vertical_average_sine_quadrature() {
        let errs: Vec<f64> = [8usize, 16, 32]
            .iter()
            .map(|&nz| {
                let g = grid(4, 4, nz, HorizontalBc::Walls);
                let f = ScalarField::from_fn(&g, |_, _, z| (std::f64::consts::PI * z).sin());
                let a = vertical_average(&f);
                (a.at(0, 0, 0) - 2.0 / std::f64::consts::PI).abs()
            })
            .collect();
        assert!(errs[0] < 1e-2);
        // second-order quadrature
        assert!(errs[0] / errs[1] > 3.5);
        assert!(errs[1] / errs[2] > 3.5);
    }

    #[test]
    fn domain_mean_matches_brute_force() {
        let g = grid(8, 6, 4, HorizontalBc::Walls);
        let f = ScalarField::from_fn(&g, |x, y, z| (31.0 * x).sin() + y * z);
        let mut acc = 0.0;
        for v in &f.data {
            acc += v;
        }
        assert_eq!(domain_mean(&f), acc / f.data.len() as f64);
    }

    #[test]
    fn domain_mean_symmetry() {
        let g = grid(16, 16, 1, HorizontalBc::Walls);
        let f = ScalarField::from_fn(&g, |x, _, _| x - 0.5);
        assert!(domain_mean(&f).abs() < 1e-14);
    }

    #[test]
    fn l2_norm_of_unit_constant() {
        let g = grid(8, 8, 4, HorizontalBc::Walls);
        let f = ScalarField::constant(&g, 1.0);
        assert!((norm(&f, NormKind::L2) - 1.0).abs() < 1e-14);
        let z = ScalarField::zeros(&g);
        assert_eq!(norm(&z, NormKind::L2), 0.0);
        assert_eq!(norm(&z, NormKind::L4), 0.0);
        assert_eq!(norm(&z, NormKind::H1Seminorm), 0.0);
    }

    #[test]
    fn l2_norm_of_sine() {
        let g = grid(64, 4, 1, HorizontalBc::Periodic);
        let f = ScalarField::from_fn(&g, |x, _, _| (2.0 * std::f64::consts::PI * x).sin());
        assert!((norm(&f, NormKind::L2) - 0.5f64.sqrt()).abs() < 1e-3);
    }

    #[test]
    fn poincare_ratio_on_lowest_mode() {
        let pi = std::f64::consts::PI;
        let lx = 1.0;
        let ly = 2.0;
        let mut prev: Option<f64> = None;
        for n in [32usize, 64] {
            let g = Grid::new(n, n, 1, lx, ly, HorizontalBc::Walls).unwrap();
            let f = ScalarField::from_fn(&g, |x, y, _| (pi * x / lx).sin() * (pi * y / ly).sin());
            let ratio = inequality_ratio(&f, InequalityKind::Poincare).unwrap();
            let exact = 1.0 / (pi * (lx.powi(-2) + ly.powi(-2)).sqrt());
            let err = (ratio - exact).abs();
            if let Some(p) = prev {
                assert!(p / err > 3.0, "poincare ratio not second order: {p} {err}");
            }
            assert!(err < 2e-3);
            prev = Some(err);
        }
    }

    #[test]
    fn inequality_ratios_are_scale_invariant() {
        let g = grid(24, 24, 1, HorizontalBc::Walls);
        let pi = std::f64::consts::PI;
        let f = ScalarField::from_fn(&g, |x, y, _| (pi * x).sin() * (2.0 * pi * y).sin());
        let mut f2 = f.clone();
        f2.scale(2.0);
        for kind in [InequalityKind::Poincare, InequalityKind::Ladyzhenskaya] {
            let a = inequality_ratio(&f, kind).unwrap();
            let b = inequality_ratio(&f2, kind).unwrap();
            assert!((a - b).abs() < 1e-12 * a.abs());
        }
    }

    #[test]
    fn poincare_sharpness_over_samples() {
        let pi = std::f64::consts::PI;
        let g = grid(48, 48, 1, HorizontalBc::Walls);
        let eigen = ScalarField::from_fn(&g, |x, y, _| (pi * x).sin() * (pi * y).sin());
        let bound = inequality_ratio(&eigen, InequalityKind::Poincare).unwrap();
        for (m, n) in [(2.0, 1.0), (1.0, 3.0), (2.0, 2.0), (3.0, 3.0)] {
            let f = ScalarField::from_fn(&g, |x, y, _| (m * pi * x).sin() * (n * pi * y).sin());
            let r = inequality_ratio(&f, InequalityKind::Poincare).unwrap();
            assert!(r <= bound * (1.0 + 1e-10));
        }
    }

    #[test]
    fn zero_denominator_is_an_error() {
        let g = grid(8, 8, 1, HorizontalBc::Walls);
        let f = ScalarField::constant(&g, 3.0);
        assert!(inequality_ratio(&f, InequalityKind::Poincare).is_err());
    }
}
