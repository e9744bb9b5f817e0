//! Field containers on periodic grids and the 4th-order stencil library.
//!
//! All derivatives share one centered 5-point kernel applied per axis with
//! periodic wraparound; scalar, vector, matrix and spinor fields differ only
//! in the number of interleaved components per cell. Quadrature is the
//! midpoint cell sum, and interpolation is multilinear on cell centers.

use crate::error::{QcError, Result};
use crate::grid::Grid;
use crate::C64;
use num_traits::Zero;
use std::ops::{Add, Mul, Sub};

/// 4th-order centered first derivative of `ncomp`-component cell data along
/// `axis`. The z-derivative on a planar grid is exactly zero.
pub(crate) fn deriv_flat<T>(grid: &Grid, data: &[T], ncomp: usize, axis: usize) -> Vec<T>
where
    T: Copy + Zero + Add<Output = T> + Sub<Output = T> + Mul<f64, Output = T>,
{
    debug_assert_eq!(data.len(), grid.len() * ncomp);
    let mut out = vec![T::zero(); data.len()];
    if axis == 2 && grid.is_planar() {
        return out; // single periodic cell in z: f(k+s) = f(k) for every shift
    }
    let n_ax = grid.n(axis);
    let h = grid.spacing(axis);
    let c1 = 8.0 / (12.0 * h);
    let c2 = 1.0 / (12.0 * h);
    // wrapped-coordinate tables keep modulo arithmetic out of the cell loop
    let tab = |s: usize| -> Vec<usize> { (0..n_ax).map(|v| (v + s) % n_ax).collect() };
    let (p1, p2, m1, m2) = (tab(1), tab(2), tab(n_ax - 1), tab(n_ax - 2));
    let (nx, ny, nz) = (grid.nx, grid.ny, grid.nz);
    let stencil = |out: &mut [T], data: &[T], c0: usize, a1: usize, b1: usize, a2: usize, b2: usize| {
        for c in 0..ncomp {
            out[c0 + c] =
                (data[a1 + c] - data[b1 + c]) * c1 - (data[a2 + c] - data[b2 + c]) * c2;
        }
    };
    match axis {
        0 => {
            for k in 0..nz {
                for j in 0..ny {
                    let base = (k * ny + j) * nx;
                    for i in 0..nx {
                        stencil(
                            &mut out,
                            data,
                            (base + i) * ncomp,
                            (base + p1[i]) * ncomp,
                            (base + m1[i]) * ncomp,
                            (base + p2[i]) * ncomp,
                            (base + m2[i]) * ncomp,
                        );
                    }
                }
            }
        }
        1 => {
            for k in 0..nz {
                let pk = k * ny * nx;
                for j in 0..ny {
                    let b0 = pk + j * nx;
                    let (b1p, b1m) = (pk + p1[j] * nx, pk + m1[j] * nx);
                    let (b2p, b2m) = (pk + p2[j] * nx, pk + m2[j] * nx);
                    for i in 0..nx {
                        stencil(
                            &mut out,
                            data,
                            (b0 + i) * ncomp,
                            (b1p + i) * ncomp,
                            (b1m + i) * ncomp,
                            (b2p + i) * ncomp,
                            (b2m + i) * ncomp,
                        );
                    }
                }
            }
        }
        2 => {
            let plane = ny * nx;
            for k in 0..nz {
                let b0 = k * plane;
                let (b1p, b1m) = (p1[k] * plane, m1[k] * plane);
                let (b2p, b2m) = (p2[k] * plane, m2[k] * plane);
                for r in 0..plane {
                    stencil(
                        &mut out,
                        data,
                        (b0 + r) * ncomp,
                        (b1p + r) * ncomp,
                        (b1m + r) * ncomp,
                        (b2p + r) * ncomp,
                        (b2m + r) * ncomp,
                    );
                }
            }
        }
        _ => unreachable!("axis must be 0, 1 or 2"),
    }
    out
}

/// Shift cell data by whole cells (periodic), used by covariance checks.
pub(crate) fn shift_flat<T: Copy>(
    grid: &Grid,
    data: &[T],
    ncomp: usize,
    di: usize,
    dj: usize,
    dk: usize,
) -> Vec<T> {
    let mut out = Vec::with_capacity(data.len());
    for k in 0..grid.nz {
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                // output cell (i,j,k) takes the value from (i-di, j-dj, k-dk)
                let si = (i + grid.nx - di % grid.nx) % grid.nx;
                let sj = (j + grid.ny - dj % grid.ny) % grid.ny;
                let sk = (k + grid.nz - dk % grid.nz) % grid.nz;
                let s = grid.idx(si, sj, sk) * ncomp;
                out.extend_from_slice(&data[s..s + ncomp]);
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// ScalarField

/// One real value per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> ScalarField {
        ScalarField { grid, data: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: Grid, v: f64) -> ScalarField {
        ScalarField { grid, data: vec![v; grid.len()] }
    }

    /// Sample `f` at every cell center.
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 3]) -> f64) -> ScalarField {
        let mut data = Vec::with_capacity(grid.len());
        for k in 0..grid.nz {
            for j in 0..grid.ny {
                for i in 0..grid.nx {
                    data.push(f(grid.cell_center(i, j, k)));
                }
            }
        }
        ScalarField { grid, data }
    }

    /// 4th-order centered derivative along one axis.
    pub fn deriv(&self, axis: usize) -> ScalarField {
        ScalarField { grid: self.grid, data: deriv_flat(&self.grid, &self.data, 1, axis) }
    }

    pub fn grad(&self) -> VectorField {
        VectorField {
            grid: self.grid,
            data: [
                deriv_flat(&self.grid, &self.data, 1, 0),
                deriv_flat(&self.grid, &self.data, 1, 1),
                deriv_flat(&self.grid, &self.data, 1, 2),
            ],
        }
    }

    /// Midpoint cell-sum quadrature; fixed summation order.
    pub fn integrate(&self) -> f64 {
        self.data.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_norm(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Multilinear interpolation; `x` is wrapped into the box.
    pub fn interpolate(&self, x: [f64; 3]) -> f64 {
        let (cells, w) = interp_weights(&self.grid, x);
        let mut v = 0.0;
        for c in 0..8 {
            v += w[c] * self.data[cells[c]];
        }
        v
    }

    pub fn shifted(&self, di: usize, dj: usize, dk: usize) -> ScalarField {
        ScalarField { grid: self.grid, data: shift_flat(&self.grid, &self.data, 1, di, dj, dk) }
    }
}

// ---------------------------------------------------------------------------
// VectorField

/// Three real components per cell; planar fields keep a zero z-component.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub grid: Grid,
    pub data: [Vec<f64>; 3],
}

impl VectorField {
    pub fn zeros(grid: Grid) -> VectorField {
        VectorField { grid, data: [vec![0.0; grid.len()], vec![0.0; grid.len()], vec![0.0; grid.len()]] }
    }

    pub fn from_fn(grid: Grid, f: impl Fn([f64; 3]) -> [f64; 3]) -> VectorField {
        let mut v = VectorField::zeros(grid);
        let mut c = 0;
        for k in 0..grid.nz {
            for j in 0..grid.ny {
                for i in 0..grid.nx {
                    let val = f(grid.cell_center(i, j, k));
                    for ax in 0..3 {
                        v.data[ax][c] = val[ax];
                    }
                    c += 1;
                }
            }
        }
        v
    }

    pub fn div(&self) -> ScalarField {
        let mut out = deriv_flat(&self.grid, &self.data[0], 1, 0);
        let dy = deriv_flat(&self.grid, &self.data[1], 1, 1);
        let dz = deriv_flat(&self.grid, &self.data[2], 1, 2);
        for c in 0..out.len() {
            out[c] += dy[c] + dz[c];
        }
        ScalarField { grid: self.grid, data: out }
    }

    /// Full 3D curl; planar grids expose only [`VectorField::curl_z`].
    pub fn curl(&self) -> Result<VectorField> {
        if self.grid.is_planar() {
            return Err(QcError::UnsupportedOperation(
                "curl on a planar grid; only the e3 component curl_z is defined".into(),
            ));
        }
        let d = |ax: usize, along: usize| deriv_flat(&self.grid, &self.data[ax], 1, along);
        let (dzy, dyz) = (d(2, 1), d(1, 2));
        let (dxz, dzx) = (d(0, 2), d(2, 0));
        let (dyx, dxy) = (d(1, 0), d(0, 1));
        let mut out = VectorField::zeros(self.grid);
        for c in 0..self.grid.len() {
            out.data[0][c] = dzy[c] - dyz[c];
            out.data[1][c] = dxz[c] - dzx[c];
            out.data[2][c] = dyx[c] - dxy[c];
        }
        Ok(out)
    }

    /// e3 component of the curl, defined on planar and 3D grids alike.
    pub fn curl_z(&self) -> ScalarField {
        let dyx = deriv_flat(&self.grid, &self.data[1], 1, 0);
        let dxy = deriv_flat(&self.grid, &self.data[0], 1, 1);
        let mut out = dyx;
        for c in 0..out.len() {
            out[c] -= dxy[c];
        }
        ScalarField { grid: self.grid, data: out }
    }

    pub fn max_norm(&self) -> f64 {
        let mut m = 0.0f64;
        for c in 0..self.grid.len() {
            let v = self.data[0][c] * self.data[0][c]
                + self.data[1][c] * self.data[1][c]
                + self.data[2][c] * self.data[2][c];
            m = m.max(v);
        }
        m.sqrt()
    }

    pub fn interpolate(&self, x: [f64; 3]) -> [f64; 3] {
        let (cells, w) = interp_weights(&self.grid, x);
        let mut v = [0.0; 3];
        for c in 0..8 {
            for ax in 0..3 {
                v[ax] += w[c] * self.data[ax][cells[c]];
            }
        }
        v
    }

    pub fn shifted(&self, di: usize, dj: usize, dk: usize) -> VectorField {
        VectorField {
            grid: self.grid,
            data: [
                shift_flat(&self.grid, &self.data[0], 1, di, dj, dk),
                shift_flat(&self.grid, &self.data[1], 1, di, dj, dk),
                shift_flat(&self.grid, &self.data[2], 1, di, dj, dk),
            ],
        }
    }
}

// ---------------------------------------------------------------------------
// MatrixField / HermitianField

/// One n×n complex matrix per cell, stored cell-major and row-major within
/// the cell: `data[(cell·n + r)·n + c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixField {
    pub grid: Grid,
    pub n: usize,
    pub data: Vec<C64>,
}

/// Matrix fields whose entries are Hermitian by contract (ρ̂, Ĥ, 𝒟̂, Γ̂…).
pub type HermitianField = MatrixField;

impl MatrixField {
    pub fn zeros(grid: Grid, n: usize) -> MatrixField {
        MatrixField { grid, n, data: vec![C64::zero(); grid.len() * n * n] }
    }

    /// Sample a matrix-valued function; the closure fills the n×n slice.
    pub fn from_fn(grid: Grid, n: usize, f: impl Fn([f64; 3], &mut [C64])) -> MatrixField {
        let mut m = MatrixField::zeros(grid, n);
        let nn = n * n;
        let mut c = 0;
        for k in 0..grid.nz {
            for j in 0..grid.ny {
                for i in 0..grid.nx {
                    f(grid.cell_center(i, j, k), &mut m.data[c * nn..(c + 1) * nn]);
                    c += 1;
                }
            }
        }
        m
    }

    /// The n×n block at one cell.
    #[inline(always)]
    pub fn mat(&self, cell: usize) -> &[C64] {
        let nn = self.n * self.n;
        &self.data[cell * nn..(cell + 1) * nn]
    }

    #[inline(always)]
    pub fn mat_mut(&mut self, cell: usize) -> &mut [C64] {
        let nn = self.n * self.n;
        &mut self.data[cell * nn..(cell + 1) * nn]
    }

    /// Entrywise 4th-order derivative along one axis.
    pub fn deriv(&self, axis: usize) -> MatrixField {
        MatrixField {
            grid: self.grid,
            n: self.n,
            data: deriv_flat(&self.grid, &self.data, self.n * self.n, axis),
        }
    }

    /// Per-axis entrywise gradient `[∂x Â, ∂y Â, ∂z Â]`.
    pub fn grad_h(&self) -> [MatrixField; 3] {
        [self.deriv(0), self.deriv(1), self.deriv(2)]
    }

    pub fn max_norm(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, z| m.max(z.norm_sqr())).sqrt()
    }

    pub fn shifted(&self, di: usize, dj: usize, dk: usize) -> MatrixField {
        MatrixField {
            grid: self.grid,
            n: self.n,
            data: shift_flat(&self.grid, &self.data, self.n * self.n, di, dj, dk),
        }
    }
}

/// Divergence of a per-axis matrix triple: `Σ_i ∂_i V̂_i`.
pub fn div_h(v: &[MatrixField; 3]) -> MatrixField {
    assert!(v[0].grid == v[1].grid && v[1].grid == v[2].grid, "div_h: mixed grids");
    assert!(v[0].n == v[1].n && v[1].n == v[2].n, "div_h: mixed Hilbert dims");
    let nn = v[0].n * v[0].n;
    let mut out = deriv_flat(&v[0].grid, &v[0].data, nn, 0);
    let dy = deriv_flat(&v[1].grid, &v[1].data, nn, 1);
    let dz = deriv_flat(&v[2].grid, &v[2].data, nn, 2);
    for c in 0..out.len() {
        out[c] += dy[c] + dz[c];
    }
    MatrixField { grid: v[0].grid, n: v[0].n, data: out }
}

// ---------------------------------------------------------------------------
// SpinorField

/// One ℂⁿ vector per cell: `data[cell·n + a]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpinorField {
    pub grid: Grid,
    pub n: usize,
    pub data: Vec<C64>,
}

impl SpinorField {
    pub fn zeros(grid: Grid, n: usize) -> SpinorField {
        SpinorField { grid, n, data: vec![C64::zero(); grid.len() * n] }
    }

    pub fn from_fn(grid: Grid, n: usize, f: impl Fn([f64; 3], &mut [C64])) -> SpinorField {
        let mut s = SpinorField::zeros(grid, n);
        let mut c = 0;
        for k in 0..grid.nz {
            for j in 0..grid.ny {
                for i in 0..grid.nx {
                    f(grid.cell_center(i, j, k), &mut s.data[c * n..(c + 1) * n]);
                    c += 1;
                }
            }
        }
        s
    }

    #[inline(always)]
    pub fn sp(&self, cell: usize) -> &[C64] {
        &self.data[cell * self.n..(cell + 1) * self.n]
    }

    #[inline(always)]
    pub fn sp_mut(&mut self, cell: usize) -> &mut [C64] {
        &mut self.data[cell * self.n..(cell + 1) * self.n]
    }

    /// Componentwise 4th-order derivative along one axis.
    pub fn deriv(&self, axis: usize) -> SpinorField {
        SpinorField {
            grid: self.grid,
            n: self.n,
            data: deriv_flat(&self.grid, &self.data, self.n, axis),
        }
    }

    pub fn grad(&self) -> [SpinorField; 3] {
        [self.deriv(0), self.deriv(1), self.deriv(2)]
    }

    pub fn shifted(&self, di: usize, dj: usize, dk: usize) -> SpinorField {
        SpinorField {
            grid: self.grid,
            n: self.n,
            data: shift_flat(&self.grid, &self.data, self.n, di, dj, dk),
        }
    }
}

// ---------------------------------------------------------------------------
// interpolation helper

/// Corner cells and weights for multilinear interpolation at `x`.
fn interp_weights(grid: &Grid, x: [f64; 3]) -> ([usize; 8], [f64; 8]) {
    let p = grid.wrap_point(x);
    let mut i0 = [0usize; 3];
    let mut i1 = [0usize; 3];
    let mut t = [0.0f64; 3];
    for ax in 0..3 {
        let n = grid.n(ax) as isize;
        let s = p[ax] / grid.spacing(ax) - 0.5;
        let f = s.floor();
        t[ax] = s - f;
        let a = (f as isize).rem_euclid(n);
        i0[ax] = a as usize;
        i1[ax] = ((a + 1) % n) as usize;
    }
    let mut cells = [0usize; 8];
    let mut w = [0.0f64; 8];
    for c in 0..8 {
        let (bi, bj, bk) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
        let i = if bi == 0 { i0[0] } else { i1[0] };
        let j = if bj == 0 { i0[1] } else { i1[1] };
        let k = if bk == 0 { i0[2] } else { i1[2] };
        cells[c] = grid.idx(i, j, k);
        w[c] = (if bi == 0 { 1.0 - t[0] } else { t[0] })
            * (if bj == 0 { 1.0 - t[1] } else { t[1] })
            * (if bk == 0 { 1.0 - t[2] } else { t[2] });
    }
    (cells, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn g2(n: usize) -> Grid {
        Grid::new_2d(n, n, 1.0, 1.0).unwrap()
    }

    fn g3(n: usize) -> Grid {
        Grid::new_3d(n, n, n, 1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn grad_of_constant_is_zero() {
        let f = ScalarField::constant(g3(8), 3.25);
        let gf = f.grad();
        for ax in 0..3 {
            assert!(gf.data[ax].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn grad_converges_at_4th_order() {
        // sin(2πx) on refining grids: error ratio between N and 2N ≈ 16
        let err = |n: usize| {
            let g = g3(n);
            let f = ScalarField::from_fn(g, |x| (TAU * x[0]).sin());
            let gf = f.grad();
            let exact = ScalarField::from_fn(g, |x| TAU * (TAU * x[0]).cos());
            let mut m = 0.0f64;
            for c in 0..g.len() {
                m = m.max((gf.data[0][c] - exact.data[c]).abs());
            }
            m
        };
        let (e1, e2) = (err(16), err(32));
        let ratio = e1 / e2;
        assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio} outside 4th-order band");
    }

    #[test]
    fn laplacian_via_grad_div_converges() {
        let err = |n: usize| {
            let g = g2(n);
            let f = ScalarField::from_fn(g, |x| (TAU * x[0]).sin() * (TAU * x[1]).sin());
            let lap = f.grad().div();
            let mut m = 0.0f64;
            for c in 0..g.len() {
                m = m.max((lap.data[c] + 2.0 * TAU * TAU * f.data[c]).abs());
            }
            m
        };
        let ratio = err(16) / err(32);
        assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio} outside 4th-order band");
    }

    #[test]
    fn curl_of_gradient_vanishes_to_roundoff() {
        let g = g3(16);
        let f = ScalarField::from_fn(g, |x| {
            (TAU * x[0]).sin() * (TAU * 2.0 * x[1]).cos() + (TAU * x[2]).sin()
        });
        let gf = f.grad();
        let c = gf.curl().unwrap();
        let scale = gf.max_norm();
        for ax in 0..3 {
            for v in &c.data[ax] {
                assert!(v.abs() <= 1e-11 * scale);
            }
        }
    }

    #[test]
    fn curl_rejected_on_planar_grid() {
        let v = VectorField::zeros(g2(8));
        let e = v.curl().unwrap_err();
        assert!(e.to_string().starts_with("unsupported-operation"));
        // the planar scalar component is still available
        let _ = v.curl_z();
    }

    #[test]
    fn grad_h_of_constant_matrix_is_zero() {
        let m = MatrixField::from_fn(g2(8), 2, |_, a| {
            a[0] = C64::new(1.0, 0.0);
            a[3] = C64::new(-1.0, 0.0);
            a[1] = C64::new(0.25, 0.5);
            a[2] = C64::new(0.25, -0.5);
        });
        for d in m.grad_h() {
            assert!(d.data.iter().all(|z| z.norm() == 0.0));
        }
    }

    #[test]
    fn integrate_constant_and_sine() {
        let g = Grid::new_3d(8, 16, 8, 2.0, 1.0, 3.0).unwrap();
        let vol = 6.0;
        assert!((ScalarField::constant(g, 1.0).integrate() - vol).abs() <= 1e-12 * vol);
        let s = ScalarField::from_fn(g, |x| (TAU * x[0] / 2.0).sin());
        assert!(s.integrate().abs() <= 1e-12 * vol);
    }

    #[test]
    fn interpolation_exactness_and_order() {
        let g = g2(32);
        let f = ScalarField::from_fn(g, |x| 0.5 + 0.25 * x[0] - 0.125 * x[1]);
        // cell center reproduces the stored value exactly
        let c = g.cell_center(5, 9, 0);
        assert_eq!(f.interpolate(c), f.data[g.idx(5, 9, 0)]);
        // multilinear reproduces a linear field away from the wrap seam
        let exact = 0.5 + 0.25 * 0.4117 - 0.125 * 0.523;
        assert!((f.interpolate([0.4117, 0.523, 0.0]) - exact).abs() < 1e-14);
        // smooth field: 2nd-order convergence of the max error over a fixed
        // point cloud (a single point's in-cell offset varies with N)
        let err = |n: usize| {
            let f = ScalarField::from_fn(g2(n), |x| (TAU * x[0]).sin() * (TAU * x[1]).cos());
            let mut m = 0.0f64;
            for s in 0..400 {
                let p = [(s as f64 * 0.618_033_988_749).fract(), (s as f64 * 0.414_213_562_37).fract(), 0.0];
                m = m.max((f.interpolate(p) - (TAU * p[0]).sin() * (TAU * p[1]).cos()).abs());
            }
            m
        };
        let ratio = err(32) / err(64);
        assert!(ratio > 3.0 && ratio < 5.0, "ratio {ratio} outside 2nd-order band");
    }

    #[test]
    fn integration_by_parts_is_exact() {
        let g = g3(12);
        let f = ScalarField::from_fn(g, |x| (TAU * x[0]).sin() + 0.3 * (TAU * 2.0 * x[1]).cos());
        let v = VectorField::from_fn(g, |x| {
            [
                (TAU * x[1]).cos(),
                (TAU * x[2]).sin() * (TAU * x[0]).cos(),
                0.7 * (TAU * x[1]).sin(),
            ]
        });
        let gf = f.grad();
        let dv = v.div();
        let mut a = ScalarField::zeros(g);
        let mut b = ScalarField::zeros(g);
        let mut scale = 0.0;
        for c in 0..g.len() {
            a.data[c] = f.data[c] * dv.data[c];
            for ax in 0..3 {
                b.data[c] += gf.data[ax][c] * v.data[ax][c];
            }
            scale += a.data[c].abs() + b.data[c].abs();
        }
        scale *= g.cell_volume();
        let resid = (a.integrate() + b.integrate()).abs();
        assert!(resid <= 1e-11 * scale, "IBP residual {resid:.3e} vs scale {scale:.3e}");
    }

    #[test]
    fn translation_covariance_is_bitwise() {
        let g = g3(8);
        let f = ScalarField::from_fn(g, |x| {
            (TAU * x[0]).sin() * (TAU * 2.0 * x[1]).cos() + 0.1 * (TAU * x[2]).sin()
        });
        let shifted_then_grad = f.shifted(1, 2, 3).grad();
        let grad_then_shifted = f.grad().shifted(1, 2, 3);
        for ax in 0..3 {
            for c in 0..g.len() {
                assert_eq!(
                    shifted_then_grad.data[ax][c].to_bits(),
                    grad_then_shifted.data[ax][c].to_bits()
                );
            }
        }
    }

    #[test]
    fn planar_z_derivative_is_exactly_zero() {
        let f = ScalarField::from_fn(g2(8), |x| (TAU * x[0]).sin());
        assert!(f.deriv(2).data.iter().all(|&v| v == 0.0));
    }
}
