//! Fourier-based Poisson solvers on the periodic box.
//!
//! Two inverse symbols are provided: the exact spectral Laplacian −|k|²
//! (the public solver), and the symbol of the 4th-order centered div∘grad
//! stencil pair (used by the incompressible projection so that the projected
//! velocity is divergence-free *in the discrete stencil sense*, not merely
//! spectrally).

use crate::error::{QcError, Result};
use crate::fields::ScalarField;
use crate::grid::Grid;
use crate::C64;
use num_traits::Zero;
use rustfft::FftPlanner;

/// Relative solvability tolerance on the rhs mean.
pub const SOLVABILITY_TOL: f64 = 1e-8;

/// In-place 1D FFTs along one axis of a 3D cell array.
fn fft_axis(grid: &Grid, data: &mut [C64], axis: usize, inverse: bool) {
    let n = grid.n(axis);
    if n == 1 {
        return;
    }
    let mut planner = FftPlanner::new();
    let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    let (nx, ny, nz) = (grid.nx, grid.ny, grid.nz);
    match axis {
        0 => {
            for row in 0..ny * nz {
                fft.process(&mut data[row * nx..(row + 1) * nx]);
            }
        }
        1 => {
            let mut line = vec![C64::zero(); n];
            for k in 0..nz {
                for i in 0..nx {
                    let base = k * ny * nx + i;
                    for j in 0..ny {
                        line[j] = data[base + j * nx];
                    }
                    fft.process(&mut line);
                    for j in 0..ny {
                        data[base + j * nx] = line[j];
                    }
                }
            }
        }
        _ => {
            let plane = nx * ny;
            let mut line = vec![C64::zero(); n];
            for r in 0..plane {
                for k in 0..nz {
                    line[k] = data[r + k * plane];
                }
                fft.process(&mut line);
                for k in 0..nz {
                    data[r + k * plane] = line[k];
                }
            }
        }
    }
}

fn fft3(grid: &Grid, data: &mut [C64], inverse: bool) {
    for axis in 0..3 {
        fft_axis(grid, data, axis, inverse);
    }
    if inverse {
        let s = 1.0 / grid.len() as f64;
        for z in data.iter_mut() {
            *z *= s;
        }
    }
}

/// True wavenumber 2π·m̃/L per mode index, with m̃ folded to (−n/2, n/2].
fn wavenumbers(grid: &Grid, axis: usize) -> Vec<f64> {
    let n = grid.n(axis);
    let l = grid.extent(axis);
    (0..n)
        .map(|m| {
            let mm = if m <= n / 2 { m as f64 } else { m as f64 - n as f64 };
            std::f64::consts::TAU * mm / l
        })
        .collect()
}

/// Symbol of the centered 4th-order first derivative: k̃ = (8sin(kh) − sin(2kh))/(6h).
fn fd4_symbol(grid: &Grid, axis: usize) -> Vec<f64> {
    let h = grid.spacing(axis);
    let n = grid.n(axis);
    wavenumbers(grid, axis)
        .into_iter()
        .enumerate()
        .map(|(m, k)| {
            // the symbol's zeros at k = 0 and Nyquist must be exact zeros,
            // not sin(π) roundoff, or the solve divides by ~1e−29
            if m == 0 || (n % 2 == 0 && m == n / 2) {
                0.0
            } else {
                (8.0 * (k * h).sin() - (2.0 * k * h).sin()) / (6.0 * h)
            }
        })
        .collect()
}

/// Divide by the Laplacian symbol −Σ sym², zeroing null modes.
fn solve_with_symbol(rhs: &ScalarField, sym: [&[f64]; 3]) -> ScalarField {
    let g = rhs.grid;
    let mut hat: Vec<C64> = rhs.data.iter().map(|&v| C64::new(v, 0.0)).collect();
    fft3(&g, &mut hat, false);
    let mut c = 0;
    for k in 0..g.nz {
        for j in 0..g.ny {
            for i in 0..g.nx {
                let lam = -(sym[0][i] * sym[0][i] + sym[1][j] * sym[1][j] + sym[2][k] * sym[2][k]);
                if lam == 0.0 {
                    hat[c] = C64::zero(); // zero mode (and fd4 null modes): project out
                } else {
                    hat[c] /= lam;
                }
                c += 1;
            }
        }
    }
    fft3(&g, &mut hat, true);
    ScalarField { grid: g, data: hat.into_iter().map(|z| z.re).collect() }
}

/// Solve ∇²φ = rhs with the exact spectral symbol; φ has zero mean.
pub fn poisson_solve(rhs: &ScalarField) -> Result<ScalarField> {
    let g = rhs.grid;
    let vol = g.cell_volume() * g.len() as f64;
    let mean = rhs.integrate() / vol;
    let scale = rhs.data.iter().map(|v| v.abs()).sum::<f64>() * g.cell_volume() / vol;
    if mean.abs() > SOLVABILITY_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(QcError::IncompatibleRhs { mean, tol: SOLVABILITY_TOL, scale });
    }
    let kx = wavenumbers(&g, 0);
    let ky = wavenumbers(&g, 1);
    let kz = if g.is_planar() { vec![0.0] } else { wavenumbers(&g, 2) };
    Ok(solve_with_symbol(rhs, [&kx, &ky, &kz]))
}

/// Spectral Laplacian, the exact inverse operation of [`poisson_solve`].
pub fn spectral_laplacian(f: &ScalarField) -> ScalarField {
    let g = f.grid;
    let mut hat: Vec<C64> = f.data.iter().map(|&v| C64::new(v, 0.0)).collect();
    fft3(&g, &mut hat, false);
    let kx = wavenumbers(&g, 0);
    let ky = wavenumbers(&g, 1);
    let kz = if g.is_planar() { vec![0.0] } else { wavenumbers(&g, 2) };
    let mut c = 0;
    for k in 0..g.nz {
        for j in 0..g.ny {
            for i in 0..g.nx {
                hat[c] *= -(kx[i] * kx[i] + ky[j] * ky[j] + kz[k] * kz[k]);
                c += 1;
            }
        }
    }
    fft3(&g, &mut hat, true);
    ScalarField { grid: g, data: hat.into_iter().map(|z| z.re).collect() }
}

/// Solve div₄(grad₄ φ) = rhs with the stencil symbol; modes in the stencil
/// null space (k = 0 and pure Nyquist) carry no div₄ content and are dropped.
pub fn poisson_solve_fd4(rhs: &ScalarField) -> ScalarField {
    let g = rhs.grid;
    let sx = fd4_symbol(&g, 0);
    let sy = fd4_symbol(&g, 1);
    let sz = if g.is_planar() { vec![0.0] } else { fd4_symbol(&g, 2) };
    solve_with_symbol(rhs, [&sx, &sy, &sz])
}
