//! Cell-centered grids, fields, and the discrete calculus used everywhere
//! else: zero-flux Laplacian, face gradients, conservative divergence,
//! means/integrals, and the inverse Neumann Laplacian with its dual norm.
//!
//! Conventions, fixed once here:
//!
//! ```text
//! cells:    x_i = (i + 1/2) hx, i = 0..nx, row-major index j*nx + i
//! x-faces:  between cells (i-1,j) and (i,j), index j*(nx+1) + i
//! y-faces:  between cells (i,j-1) and (i,j), index j*nx + i, j = 0..=ny
//! ghosts:   mirror (even) reflection, so every boundary face carries zero
//!           flux and discrete Gauss-Green holds exactly by telescoping
//! ```
//!
//! One dimension is the `ny = 1` special case with unit transverse extent, so
//! integrals over the line carry measure `hx` and all formulas below apply
//! unchanged.

use crate::dct::Spectral;
use crate::error::{Error, Result};

/// Uniform cell-centered grid on `[0, lx] x [0, ly]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub dim: usize,
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub hx: f64,
    pub hy: f64,
}

impl Grid {
    /// One-dimensional grid on `[0, lx]`.
    pub fn line(nx: usize, lx: f64) -> Result<Grid> {
        if nx < 4 {
            return Err(Error::InvalidGrid { context: format!("nx = {nx} < 4") });
        }
        if !(lx > 0.0 && lx.is_finite()) {
            return Err(Error::InvalidGrid { context: format!("lx = {lx} not positive") });
        }
        Ok(Grid { dim: 1, nx, ny: 1, lx, ly: 1.0, hx: lx / nx as f64, hy: 1.0 })
    }

    /// Two-dimensional grid on `[0, lx] x [0, ly]`.
    pub fn rect(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Grid> {
        if nx < 4 || ny < 4 {
            return Err(Error::InvalidGrid { context: format!("nx = {nx}, ny = {ny}; need >= 4 in each direction") });
        }
        if !(lx > 0.0 && lx.is_finite() && ly > 0.0 && ly.is_finite()) {
            return Err(Error::InvalidGrid { context: format!("extents lx = {lx}, ly = {ly} not positive") });
        }
        Ok(Grid { dim: 2, nx, ny, lx, ly, hx: lx / nx as f64, hy: ly / ny as f64 })
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// Volume (area / length) of one cell.
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.hx * self.hy
    }

    /// Measure of the whole domain.
    #[inline]
    pub fn volume(&self) -> f64 {
        self.lx * self.ly
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.hx
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.hy
    }
}

/// A scalar field sampled at cell centers.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl Field {
    pub fn constant(grid: Grid, c: f64) -> Field {
        Field { grid, values: vec![c; grid.n_cells()] }
    }

    /// Sample `f(x, y)` at cell centers (`y = 0.5` on 1D grids), row-major.
    pub fn from_fn(grid: Grid, mut f: impl FnMut(f64, f64) -> f64) -> Field {
        let mut values = Vec::with_capacity(grid.n_cells());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                values.push(f(grid.x(i), grid.y(j)));
            }
        }
        Field { grid, values }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn norm_linf(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, &v| a.max(v.abs()))
    }

    pub fn assert_same_grid(&self, other: &Field, context: &'static str) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch { context });
        }
        Ok(())
    }
}

/// Face-centered flux data: `x` holds the x-face components, `y` the y-face
/// components, boundary faces included (a conservative scheme keeps them 0).
#[derive(Clone, Debug)]
pub struct FaceField {
    pub grid: Grid,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl FaceField {
    pub fn zeros(grid: Grid) -> FaceField {
        FaceField {
            grid,
            x: vec![0.0; (grid.nx + 1) * grid.ny],
            y: vec![0.0; grid.nx * (grid.ny + 1)],
        }
    }

    #[inline]
    pub fn xi(&self, i: usize, j: usize) -> usize {
        j * (self.grid.nx + 1) + i
    }

    #[inline]
    pub fn yi(&self, i: usize, j: usize) -> usize {
        j * self.grid.nx + i
    }
}

/// Compensated (Kahan) sum: integrals feed tolerance checks at the 1e-12
/// level, where naive accumulation over 10^4+ cells already loses ground.
pub(crate) fn kahan_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Arithmetic mean over cells (uniform grid, so this is the domain average).
pub fn mean(v: &Field) -> f64 {
    kahan_sum(v.values.iter().copied()) / v.grid.n_cells() as f64
}

/// Integral over the domain.
pub fn integral(v: &Field) -> f64 {
    kahan_sum(v.values.iter().copied()) * v.grid.cell_volume()
}

/// L2 inner product of two fields.
pub fn inner(u: &Field, v: &Field) -> f64 {
    debug_assert_eq!(u.grid, v.grid);
    kahan_sum(u.values.iter().zip(&v.values).map(|(a, b)| a * b)) * u.grid.cell_volume()
}

pub fn norm_l2(v: &Field) -> f64 {
    inner(v, v).sqrt()
}

/// Zero-flux five-point Laplacian (three-point in 1D). Mirror ghosts make
/// boundary faces flux-free, so this is `div_flux(grad_faces(v))` fused into
/// one pass.
pub fn laplacian(v: &Field) -> Field {
    let g = v.grid;
    let (nx, ny) = (g.nx, g.ny);
    let ix2 = 1.0 / (g.hx * g.hx);
    let iy2 = 1.0 / (g.hy * g.hy);
    let mut out = vec![0.0; g.n_cells()];
    for j in 0..ny {
        for i in 0..nx {
            let c = v.values[g.idx(i, j)];
            let mut acc = 0.0;
            if i > 0 {
                acc += (v.values[g.idx(i - 1, j)] - c) * ix2;
            }
            if i + 1 < nx {
                acc += (v.values[g.idx(i + 1, j)] - c) * ix2;
            }
            if j > 0 {
                acc += (v.values[g.idx(i, j - 1)] - c) * iy2;
            }
            if j + 1 < ny {
                acc += (v.values[g.idx(i, j + 1)] - c) * iy2;
            }
            out[g.idx(i, j)] = acc;
        }
    }
    Field { grid: g, values: out }
}

/// Difference quotients at faces; boundary faces are zero (mirror ghosts).
pub fn grad_faces(v: &Field) -> FaceField {
    let g = v.grid;
    let mut f = FaceField::zeros(g);
    for j in 0..g.ny {
        for i in 1..g.nx {
            f.x[j * (g.nx + 1) + i] = (v.values[g.idx(i, j)] - v.values[g.idx(i - 1, j)]) / g.hx;
        }
    }
    for j in 1..g.ny {
        for i in 0..g.nx {
            f.y[j * g.nx + i] = (v.values[g.idx(i, j)] - v.values[g.idx(i, j - 1)]) / g.hy;
        }
    }
    f
}

/// Conservative divergence of face fluxes. Cell sums telescope to the
/// boundary faces exactly, so a zero-boundary flux field conserves mass to
/// rounding.
pub fn div_flux(f: &FaceField) -> Field {
    let g = f.grid;
    let (nx, ny) = (g.nx, g.ny);
    let mut out = vec![0.0; g.n_cells()];
    for j in 0..ny {
        for i in 0..nx {
            let dx = (f.x[j * (nx + 1) + i + 1] - f.x[j * (nx + 1) + i]) / g.hx;
            let dy = (f.y[(j + 1) * nx + i] - f.y[j * nx + i]) / g.hy;
            out[g.idx(i, j)] = dx + dy;
        }
    }
    Field { grid: g, values: out }
}

/// `integral(|grad v|^2)` evaluated on faces — the discrete Dirichlet energy
/// that satisfies summation by parts against `laplacian` exactly.
pub fn dirichlet_energy(v: &Field) -> f64 {
    let f = grad_faces(v);
    let vol = v.grid.cell_volume();
    let sx = kahan_sum(f.x.iter().map(|&a| a * a));
    let sy = kahan_sum(f.y.iter().map(|&a| a * a));
    (sx + sy) * vol
}

/// Square of the H1 norm: `integral(|grad v|^2 + v^2)`.
pub fn norm_v_sq(v: &Field) -> f64 {
    dirichlet_energy(v) + inner(v, v)
}

/// Relative-residual tolerance shared by the iterative solves in this module.
pub const NEUMANN_SOLVE_TOL: f64 = 1e-10;

/// Solve `-lap(u) = v - mean(v)` with zero-flux boundaries and `mean(u) = 0`.
///
/// Conjugate gradients on the symmetric positive semidefinite operator,
/// preconditioned by the cosine-basis inverse (exact for this constant-
/// coefficient operator, so the iteration is really a verified direct solve).
pub fn inv_neumann_laplacian(v: &Field) -> Result<Field> {
    let g = v.grid;
    let vbar = mean(v);
    let rhs: Vec<f64> = v.values.iter().map(|&a| a - vbar).collect();
    let spectral = Spectral::for_grid(g);
    let apply = |x: &[f64], out: &mut [f64]| {
        let lap = laplacian(&Field { grid: g, values: x.to_vec() });
        for (o, l) in out.iter_mut().zip(&lap.values) {
            *o = -l;
        }
    };
    let precond = |r: &[f64], out: &mut [f64]| {
        spectral.solve(r, out, |lam| lam);
    };
    let (mut u, stats) = crate::linalg::pcg(
        apply,
        precond,
        &rhs,
        NEUMANN_SOLVE_TOL,
        10 * g.n_cells(),
    )?;
    let _ = stats;
    // Pin the mean exactly; CG preserves it only up to rounding drift.
    let ubar = kahan_sum(u.iter().copied()) / g.n_cells() as f64;
    for x in &mut u {
        *x -= ubar;
    }
    Ok(Field { grid: g, values: u })
}

/// Dual (H^-1-type) norm of the fluctuation of `v`:
/// `sqrt(integral((v - mean v) * invlap(v - mean v)))`.
pub fn dual_norm(v: &Field) -> Result<f64> {
    let u = inv_neumann_laplacian(v)?;
    let vbar = mean(v);
    let fluct = Field { grid: v.grid, values: v.values.iter().map(|&a| a - vbar).collect() };
    let sq = inner(&fluct, &u);
    // The quadratic form is nonnegative; tiny negative values are rounding.
    Ok(sq.max(0.0).sqrt())
}
