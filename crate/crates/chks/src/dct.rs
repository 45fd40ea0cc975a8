//! Fast cosine transforms and spectral solves for the zero-flux Laplacian.
//!
//! The cell-centered Laplacian with mirror ghosts is diagonalized exactly by
//! the type-II discrete cosine transform: the mode `cos(pi k (2j+1) / (2n))`
//! is an eigenvector with eigenvalue `-(4/h^2) sin^2(pi k / (2n))`, boundary
//! rows included, because the even extension of a cosine about the domain
//! edge coincides with the mirror ghost. That makes constant-coefficient
//! implicit operators directly invertible in coefficient space, which this
//! module exposes as `Spectral::solve`. Variable-coefficient solves use these
//! constant-coefficient inverses as preconditioners.
//!
//! The DCT-II is computed through a single complex FFT of the same length
//! (even/odd reordering plus a quarter-sample twiddle), and the inverse
//! (DCT-III) reverses those steps exactly, so `inverse(forward(x)) == x` up
//! to rounding with no separate normalization convention to track.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::grid::Grid;

/// One-dimensional DCT-II / DCT-III pair of length `n`.
struct Dct1d {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// e^{-i pi k / (2n)} for k = 0..n.
    twiddle: Vec<Complex<f64>>,
}

impl Dct1d {
    fn new(n: usize, planner: &mut FftPlanner<f64>) -> Self {
        let twiddle = (0..n)
            .map(|k| Complex::from_polar(1.0, -std::f64::consts::PI * k as f64 / (2.0 * n as f64)))
            .collect();
        Dct1d {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
            twiddle,
        }
    }

    /// Forward DCT-II: out[k] = sum_j x[j] cos(pi k (2j+1) / (2n)).
    fn dct2(&self, x: &[f64], out: &mut [f64], scratch: &mut Vec<Complex<f64>>) {
        let n = self.n;
        if n == 1 {
            out[0] = x[0];
            return;
        }
        scratch.clear();
        scratch.resize(n, Complex::new(0.0, 0.0));
        // Even entries forward, odd entries reversed at the back.
        for j in 0..n.div_ceil(2) {
            scratch[j] = Complex::new(x[2 * j], 0.0);
        }
        for j in 0..n / 2 {
            scratch[n - 1 - j] = Complex::new(x[2 * j + 1], 0.0);
        }
        self.fwd.process(scratch);
        for k in 0..n {
            out[k] = (self.twiddle[k] * scratch[k]).re;
        }
    }

    /// Inverse of `dct2` (an appropriately scaled DCT-III).
    fn dct3(&self, coeff: &[f64], out: &mut [f64], scratch: &mut Vec<Complex<f64>>) {
        let n = self.n;
        if n == 1 {
            out[0] = coeff[0];
            return;
        }
        scratch.clear();
        scratch.resize(n, Complex::new(0.0, 0.0));
        // For real input the FFT spectrum satisfies
        //   e^{-i pi k/2n} V_k = X_k - i X_{n-k}   (X_n := 0),
        // so the spectrum is reconstructible from the cosine coefficients.
        scratch[0] = Complex::new(coeff[0], 0.0);
        for k in 1..n {
            let g = Complex::new(coeff[k], -coeff[n - k]);
            scratch[k] = g * self.twiddle[k].conj();
        }
        self.inv.process(scratch);
        let scale = 1.0 / n as f64;
        for j in 0..n.div_ceil(2) {
            out[2 * j] = scratch[j].re * scale;
        }
        for j in 0..n / 2 {
            out[2 * j + 1] = scratch[n - 1 - j].re * scale;
        }
    }
}

/// Cosine-basis machinery for one grid: transforms plus the Laplacian
/// eigenvalues `eig_x[i] + eig_y[j]` of mode `(i, j)`.
pub struct Spectral {
    nx: usize,
    ny: usize,
    dct_x: Dct1d,
    dct_y: Dct1d,
    /// Eigenvalues of -d^2/dx^2 (nonnegative), index = mode number.
    pub eig_x: Vec<f64>,
    pub eig_y: Vec<f64>,
}

fn laplacian_eigenvalues(n: usize, h: f64) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let s = (std::f64::consts::PI * k as f64 / (2.0 * n as f64)).sin();
            4.0 / (h * h) * s * s
        })
        .collect()
}

impl Spectral {
    pub fn new(grid: Grid) -> Self {
        let mut planner = FftPlanner::new();
        Spectral {
            nx: grid.nx,
            ny: grid.ny,
            dct_x: Dct1d::new(grid.nx, &mut planner),
            dct_y: Dct1d::new(grid.ny, &mut planner),
            eig_x: laplacian_eigenvalues(grid.nx, grid.hx),
            eig_y: laplacian_eigenvalues(grid.ny, grid.hy),
        }
    }

    /// Shared per-grid-shape instance (plans are reused across solves).
    pub fn for_grid(grid: Grid) -> Arc<Spectral> {
        type GridKey = (usize, usize, u64, u64);
        static CACHE: OnceLock<Mutex<HashMap<GridKey, Arc<Spectral>>>> = OnceLock::new();
        let key = (grid.nx, grid.ny, grid.hx.to_bits(), grid.hy.to_bits());
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut map = cache.lock().unwrap();
        map.entry(key).or_insert_with(|| Arc::new(Spectral::new(grid))).clone()
    }

    /// Forward 2D DCT-II of a cell field (row-major, j*nx + i).
    pub fn forward(&self, values: &[f64], coeff: &mut [f64]) {
        let (nx, ny) = (self.nx, self.ny);
        let mut scratch = Vec::new();
        let mut line_in = vec![0.0; nx.max(ny)];
        let mut line_out = vec![0.0; nx.max(ny)];
        for j in 0..ny {
            self.dct_x.dct2(&values[j * nx..(j + 1) * nx], &mut coeff[j * nx..(j + 1) * nx], &mut scratch);
        }
        if ny > 1 {
            for i in 0..nx {
                for j in 0..ny {
                    line_in[j] = coeff[j * nx + i];
                }
                self.dct_y.dct2(&line_in[..ny], &mut line_out[..ny], &mut scratch);
                for j in 0..ny {
                    coeff[j * nx + i] = line_out[j];
                }
            }
        }
    }

    /// Inverse of `forward`.
    pub fn inverse(&self, coeff: &[f64], values: &mut [f64]) {
        let (nx, ny) = (self.nx, self.ny);
        let mut scratch = Vec::new();
        let mut line_in = vec![0.0; nx.max(ny)];
        let mut line_out = vec![0.0; nx.max(ny)];
        let mut work = coeff.to_vec();
        if ny > 1 {
            for i in 0..nx {
                for j in 0..ny {
                    line_in[j] = work[j * nx + i];
                }
                self.dct_y.dct3(&line_in[..ny], &mut line_out[..ny], &mut scratch);
                for j in 0..ny {
                    work[j * nx + i] = line_out[j];
                }
            }
        }
        for j in 0..ny {
            self.dct_x.dct3(&work[j * nx..(j + 1) * nx], &mut values[j * nx..(j + 1) * nx], &mut scratch);
        }
    }

    /// Solve a constant-coefficient problem that is diagonal in the cosine
    /// basis: `out` receives the field whose mode `(i, j)` coefficient is the
    /// input's divided by `g(lambda_ij)`, where `lambda_ij` is the Laplacian
    /// eigenvalue. A zero divisor (the constant mode of a pure Laplacian)
    /// annihilates that mode, which is the zero-mean convention used by the
    /// inverse Neumann Laplacian.
    pub fn solve(&self, rhs: &[f64], out: &mut [f64], g: impl Fn(f64) -> f64) {
        let (nx, ny) = (self.nx, self.ny);
        let mut coeff = vec![0.0; nx * ny];
        self.forward(rhs, &mut coeff);
        for j in 0..ny {
            for i in 0..nx {
                let d = g(self.eig_x[i] + self.eig_y[j]);
                let c = &mut coeff[j * nx + i];
                if d != 0.0 {
                    *c /= d;
                } else {
                    *c = 0.0;
                }
            }
        }
        self.inverse(&coeff, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Field, Grid};

    fn naive_dct2(x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                (0..n)
                    .map(|j| {
                        x[j] * (std::f64::consts::PI * k as f64 * (2 * j + 1) as f64
                            / (2.0 * n as f64))
                            .cos()
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn matches_naive_transform() {
        let mut planner = FftPlanner::new();
        for n in [1usize, 2, 3, 8, 12, 96, 97] {
            let dct = Dct1d::new(n, &mut planner);
            let x: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 11) as f64 - 5.0).collect();
            let mut out = vec![0.0; n];
            let mut scratch = Vec::new();
            dct.dct2(&x, &mut out, &mut scratch);
            let want = naive_dct2(&x);
            for (a, b) in out.iter().zip(&want) {
                assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()), "n={n}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn roundtrip_is_identity() {
        let mut planner = FftPlanner::new();
        for n in [2usize, 5, 64, 96] {
            let dct = Dct1d::new(n, &mut planner);
            let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
            let mut coeff = vec![0.0; n];
            let mut back = vec![0.0; n];
            let mut scratch = Vec::new();
            dct.dct2(&x, &mut coeff, &mut scratch);
            dct.dct3(&coeff, &mut back, &mut scratch);
            for (a, b) in back.iter().zip(&x) {
                assert!((a - b).abs() < 1e-12, "n={n}");
            }
        }
    }

    #[test]
    fn cosine_modes_are_laplacian_eigenvectors() {
        let grid = Grid::rect(24, 16, 1.0, 2.0).unwrap();
        let sp = Spectral::new(grid);
        for (ki, kj) in [(0usize, 0usize), (1, 0), (0, 3), (5, 7), (23, 15)] {
            let mode = Field::from_fn(grid, |x, y| {
                (std::f64::consts::PI * ki as f64 * x / grid.lx).cos()
                    * (std::f64::consts::PI * kj as f64 * y / grid.ly).cos()
            });
            let lap = crate::grid::laplacian(&mode);
            let lam = sp.eig_x[ki] + sp.eig_y[kj];
            for (l, m) in lap.values.iter().zip(&mode.values) {
                assert!(
                    (l + lam * m).abs() < 1e-9 * (1.0 + lam),
                    "mode ({ki},{kj}): {l} vs {}",
                    -lam * m
                );
            }
        }
    }

    #[test]
    fn spectral_solve_inverts_shifted_laplacian() {
        // (I - Lap) u = f solved spectrally, then verified by applying the
        // operator in physical space.
        let grid = Grid::rect(32, 20, 1.0, 1.5).unwrap();
        let sp = Spectral::new(grid);
        let f = Field::from_fn(grid, |x, y| (3.0 * x).sin() + (2.0 * y).cos());
        let mut u = Field::constant(grid, 0.0);
        sp.solve(&f.values, &mut u.values, |lam| 1.0 + lam);
        let lap = crate::grid::laplacian(&u);
        for idx in 0..grid.n_cells() {
            let r = u.values[idx] - lap.values[idx] - f.values[idx];
            assert!(r.abs() < 1e-10, "residual {r}");
        }
    }
}
