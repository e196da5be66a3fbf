//! Finite-rank observation operators: L2-orthogonal projections at
//! resolution `delta`, plus diagnostics that measure the projection axioms
//! numerically.
//!
//! Two kinds are provided. `CellAverage` projects onto functions that are
//! constant on `delta`-blocks (horizontal blocks times a vertical
//! partition, full vertical extent by default). `SpectralCutoff` projects
//! onto low horizontal Fourier modes and requires a periodic grid. Both
//! are idempotent and self-adjoint by construction; blocks that do not
//! divide the grid evenly are absorbed into the last block, which keeps
//! the block family a partition and therefore keeps the operator an
//! orthogonal projection.

use crate::error::{CdaError, Result};
use crate::fields::{Grid, HorizontalBc, NormKind, ScalarField, VectorField2D};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterpolantKind {
    CellAverage,
    SpectralCutoff,
}

/// Vertical structure of the observation blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerticalExtent {
    /// One block spanning the entire vertical coordinate.
    Full,
    /// `n` blocks of equal height (the last absorbs any remainder).
    Blocks(usize),
}

#[derive(Debug, Clone)]
pub struct Interpolant {
    pub kind: InterpolantKind,
    pub delta: f64,
    pub vertical: VerticalExtent,
    pub grid: Arc<Grid>,
    /// Retained degrees of freedom.
    pub rank: usize,
    blocks_x: Vec<(usize, usize)>,
    blocks_y: Vec<(usize, usize)>,
    blocks_z: Vec<(usize, usize)>,
    proj_x: Option<Vec<f64>>,
    proj_y: Option<Vec<f64>>,
}

fn partition(n: usize, block: usize) -> Vec<(usize, usize)> {
    let count = (n / block).max(1);
    (0..count)
        .map(|b| {
            let start = b * block;
            let end = if b + 1 == count { n } else { start + block };
            (start, end)
        })
        .collect()
}

/// Dense symmetric projection matrix onto periodic modes `|k| <= m_cut`.
fn fourier_projection_matrix(n: usize, m_cut: usize) -> Vec<f64> {
    let mut p = vec![0.0; n * n];
    let m_interior = m_cut.min(n.div_ceil(2).saturating_sub(1));
    let nyquist = n % 2 == 0 && m_cut >= n / 2;
    for i in 0..n {
        for j in 0..n {
            let d = i as f64 - j as f64;
            let mut v = 1.0;
            for k in 1..=m_interior {
                v += 2.0 * (2.0 * std::f64::consts::PI * k as f64 * d / n as f64).cos();
            }
            if nyquist {
                v += (std::f64::consts::PI * d).cos();
            }
            p[i * n + j] = v / n as f64;
        }
    }
    p
}

fn spectral_rank_1d(n: usize, m_cut: usize) -> usize {
    let m_interior = m_cut.min(n.div_ceil(2).saturating_sub(1));
    let nyquist = n % 2 == 0 && m_cut >= n / 2;
    1 + 2 * m_interior + usize::from(nyquist)
}

impl Interpolant {
    pub fn new(
        kind: InterpolantKind,
        delta: f64,
        vertical: VerticalExtent,
        grid: &Arc<Grid>,
    ) -> Result<Self> {
        let h = grid.hx().max(grid.hy());
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(CdaError::Interpolant(format!(
                "resolution must be positive, got {delta}"
            )));
        }
        if delta < 2.0 * h - 1e-12 {
            return Err(CdaError::Interpolant(format!(
                "resolution {delta} is below two grid spacings ({}); the operator would be the identity",
                2.0 * h
            )));
        }
        let blocks_z = match vertical {
            VerticalExtent::Full => vec![(0, grid.nz)],
            VerticalExtent::Blocks(n) => {
                if n == 0 || grid.nz / n.max(1) < 2 {
                    return Err(CdaError::Interpolant(format!(
                        "vertical partition into {n} blocks needs at least 2 cells per block on nz={}",
                        grid.nz
                    )));
                }
                partition(grid.nz, grid.nz / n)
            }
        };

        match kind {
            InterpolantKind::CellAverage => {
                let bx = (delta / grid.hx()).floor().max(2.0) as usize;
                let by = (delta / grid.hy()).floor().max(2.0) as usize;
                let blocks_x = partition(grid.nx, bx.min(grid.nx));
                let blocks_y = partition(grid.ny, by.min(grid.ny));
                let rank = blocks_x.len() * blocks_y.len() * blocks_z.len();
                Ok(Interpolant {
                    kind,
                    delta,
                    vertical,
                    grid: Arc::clone(grid),
                    rank,
                    blocks_x,
                    blocks_y,
                    blocks_z,
                    proj_x: None,
                    proj_y: None,
                })
            }
            InterpolantKind::SpectralCutoff => {
                if grid.horizontal_bc != HorizontalBc::Periodic {
                    return Err(CdaError::Interpolant(
                        "spectral cutoff requires a periodic grid".into(),
                    ));
                }
                let mx = (grid.lx / delta).floor() as usize;
                let my = (grid.ly / delta).floor() as usize;
                let rank = spectral_rank_1d(grid.nx, mx)
                    * spectral_rank_1d(grid.ny, my)
                    * blocks_z.len();
                Ok(Interpolant {
                    kind,
                    delta,
                    vertical,
                    grid: Arc::clone(grid),
                    rank,
                    blocks_x: Vec::new(),
                    blocks_y: Vec::new(),
                    blocks_z,
                    proj_x: Some(fourier_projection_matrix(grid.nx, mx)),
                    proj_y: Some(fourier_projection_matrix(grid.ny, my)),
                })
            }
        }
    }

    /// Apply the observation operator to a scalar field on its grid.
    pub fn apply(&self, f: &ScalarField) -> Result<ScalarField> {
        if *f.grid != *self.grid {
            return Err(CdaError::Interpolant(
                "field grid does not match the interpolant grid".into(),
            ));
        }
        let mut out = self.vertical_project(f);
        match self.kind {
            InterpolantKind::CellAverage => {
                self.horizontal_block_average(&mut out);
            }
            InterpolantKind::SpectralCutoff => {
                self.horizontal_spectral(&mut out);
            }
        }
        Ok(out)
    }

    /// Component-wise application to a horizontal vector field.
    pub fn apply_vector(&self, v: &VectorField2D) -> Result<VectorField2D> {
        let fx = self.apply(&v.component(0))?;
        let fy = self.apply(&v.component(1))?;
        Ok(VectorField2D {
            grid: Arc::clone(&v.grid),
            x: fx.data,
            y: fy.data,
        })
    }

    fn vertical_project(&self, f: &ScalarField) -> ScalarField {
        let g = &self.grid;
        if g.nz == 1 || (self.blocks_z.len() == 1 && self.blocks_z[0] == (0, 1)) {
            return f.clone();
        }
        let mut out = f.clone();
        for &(z0, z1) in &self.blocks_z {
            let inv = 1.0 / (z1 - z0) as f64;
            for j in 0..g.ny {
                for i in 0..g.nx {
                    let mut acc = 0.0;
                    for k in z0..z1 {
                        acc += f.at(i, j, k);
                    }
                    let mean = acc * inv;
                    for k in z0..z1 {
                        *out.at_mut(i, j, k) = mean;
                    }
                }
            }
        }
        out
    }

    fn horizontal_block_average(&self, f: &mut ScalarField) {
        let g = &self.grid;
        for k in 0..g.nz {
            for &(y0, y1) in &self.blocks_y {
                for &(x0, x1) in &self.blocks_x {
                    let mut acc = 0.0;
                    for j in y0..y1 {
                        for i in x0..x1 {
                            acc += f.at(i, j, k);
                        }
                    }
                    let mean = acc / ((y1 - y0) * (x1 - x0)) as f64;
                    for j in y0..y1 {
                        for i in x0..x1 {
                            *f.at_mut(i, j, k) = mean;
                        }
                    }
                }
            }
        }
    }

    fn horizontal_spectral(&self, f: &mut ScalarField) {
        let g = &self.grid;
        let px = self.proj_x.as_ref().unwrap();
        let py = self.proj_y.as_ref().unwrap();
        let mut line = vec![0.0; g.nx.max(g.ny)];
        for k in 0..g.nz {
            // x direction
            for j in 0..g.ny {
                let base = g.idx(0, j, k);
                for (i, l) in line.iter_mut().take(g.nx).enumerate() {
                    let row = &px[i * g.nx..(i + 1) * g.nx];
                    *l = row
                        .iter()
                        .zip(&f.data[base..base + g.nx])
                        .map(|(a, b)| a * b)
                        .sum();
                }
                f.data[base..base + g.nx].copy_from_slice(&line[..g.nx]);
            }
            // y direction
            for i in 0..g.nx {
                for (j, l) in line.iter_mut().take(g.ny).enumerate() {
                    let row = &py[j * g.ny..(j + 1) * g.ny];
                    let mut acc = 0.0;
                    for (jj, a) in row.iter().enumerate() {
                        acc += a * f.at(i, jj, k);
                    }
                    *l = acc;
                }
                for j in 0..g.ny {
                    *f.at_mut(i, j, k) = line[j];
                }
            }
        }
    }
}

/// Numerical verification of the projection axioms over a sample family.
#[derive(Debug, Clone)]
pub struct DiagnosticsReport {
    /// max over samples of `||I(I f) - I f|| / ||f||`.
    pub idempotence_defect: f64,
    /// max over sample pairs of `|<I f, g> - <f, I g>| / (||f|| ||g||)`.
    pub self_adjointness_defect: f64,
    /// max over samples of `||I f - f|| / (delta ||f||_{W^{1,2}})`.
    pub approximation_constant: f64,
    /// Per-sample L2 approximation errors `||I f - f||`.
    pub sample_errors: Vec<f64>,
}

fn inner(a: &ScalarField, b: &ScalarField) -> f64 {
    let dv = a.grid.cell_volume();
    a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum::<f64>() * dv
}

/// Measure idempotence, self-adjointness and the approximation constant of
/// an interpolant over at least one sample field.
pub fn projection_diagnostics(
    interp: &Interpolant,
    samples: &[ScalarField],
) -> Result<DiagnosticsReport> {
    if samples.is_empty() {
        return Err(CdaError::InvalidInput(
            "projection diagnostics need at least one sample".into(),
        ));
    }
    let mut idem = 0.0f64;
    let mut approx = 0.0f64;
    let mut errors = Vec::with_capacity(samples.len());
    let mut applied = Vec::with_capacity(samples.len());
    for f in samples {
        let pf = interp.apply(f)?;
        let ppf = interp.apply(&pf)?;
        let nf = crate::fields::norm(f, NormKind::L2).max(1e-300);
        let mut d = ppf.clone();
        d.axpy(-1.0, &pf);
        idem = idem.max(crate::fields::norm(&d, NormKind::L2) / nf);
        let mut e = pf.clone();
        e.axpy(-1.0, f);
        let err = crate::fields::norm(&e, NormKind::L2);
        errors.push(err);
        let l2 = crate::fields::norm(f, NormKind::L2);
        let h1 = crate::fields::norm(f, NormKind::H1Seminorm);
        let w12 = (l2 * l2 + h1 * h1).sqrt().max(1e-300);
        approx = approx.max(err / (interp.delta * w12));
        applied.push(pf);
    }
    let mut adj = 0.0f64;
    for (i, f) in samples.iter().enumerate() {
        for (j, g) in samples.iter().enumerate().skip(i + 1) {
            let nf = crate::fields::norm(f, NormKind::L2).max(1e-300);
            let ng = crate::fields::norm(g, NormKind::L2).max(1e-300);
            let d = (inner(&applied[i], g) - inner(f, &applied[j])).abs();
            adj = adj.max(d / (nf * ng));
        }
    }
    Ok(DiagnosticsReport {
        idempotence_defect: idem,
        self_adjointness_defect: adj,
        approximation_constant: approx,
        sample_errors: errors,
    })
}
