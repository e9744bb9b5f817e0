//! Uniform periodic structured grids.
//!
//! A planar (2D) grid is represented as `nz = 1` with unit z-spacing: the
//! periodic wraparound then makes every z-stencil exactly zero and the cell
//! volume reduces to `dx·dy`, so 2D and 3D share one code path throughout.

use crate::error::{QcError, Result};

/// Minimum cells per active axis, set by the 5-point stencil width.
pub const MIN_CELLS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
}

impl Grid {
    /// Planar grid over a periodic `lx × ly` box.
    pub fn new_2d(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Grid> {
        Self::validate(nx, ny, 1, lx, ly, 1.0)?;
        Ok(Grid { nx, ny, nz: 1, dx: lx / nx as f64, dy: ly / ny as f64, dz: 1.0 })
    }

    /// 3D grid over a periodic `lx × ly × lz` box.
    pub fn new_3d(nx: usize, ny: usize, nz: usize, lx: f64, ly: f64, lz: f64) -> Result<Grid> {
        Self::validate(nx, ny, nz, lx, ly, lz)?;
        Ok(Grid { nx, ny, nz, dx: lx / nx as f64, dy: ly / ny as f64, dz: lz / nz as f64 })
    }

    fn validate(nx: usize, ny: usize, nz: usize, lx: f64, ly: f64, lz: f64) -> Result<()> {
        if nx < MIN_CELLS || ny < MIN_CELLS || (nz != 1 && nz < MIN_CELLS) {
            return Err(QcError::InvalidGrid(format!(
                "each active axis needs at least {MIN_CELLS} cells, got {nx}×{ny}×{nz}"
            )));
        }
        if !(lx > 0.0 && ly > 0.0 && lz > 0.0) {
            return Err(QcError::InvalidGrid(format!(
                "box extents must be positive, got {lx}×{ly}×{lz}"
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        if self.nz == 1 { 2 } else { 3 }
    }

    pub fn is_planar(&self) -> bool {
        self.nz == 1
    }

    /// Total cell count.
    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        false // validation guarantees at least 8×8 cells
    }

    /// Flat index; x runs fastest.
    #[inline(always)]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.ny + j) * self.nx + i
    }

    /// Inverse of [`Grid::idx`].
    #[inline]
    pub fn cell_of(&self, idx: usize) -> (usize, usize, usize) {
        let i = idx % self.nx;
        let j = (idx / self.nx) % self.ny;
        let k = idx / (self.nx * self.ny);
        (i, j, k)
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx * self.dy * if self.is_planar() { 1.0 } else { self.dz }
    }

    pub fn n(&self, axis: usize) -> usize {
        [self.nx, self.ny, self.nz][axis]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        [self.dx, self.dy, self.dz][axis]
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.n(axis) as f64 * self.spacing(axis)
    }

    /// Smallest spacing over the active axes (CFL denominator).
    pub fn min_spacing(&self) -> f64 {
        let m = self.dx.min(self.dy);
        if self.is_planar() { m } else { m.min(self.dz) }
    }

    /// Cell centers sit at `(i + 1/2)·h` in each axis.
    pub fn cell_center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            (i as f64 + 0.5) * self.dx,
            (j as f64 + 0.5) * self.dy,
            (k as f64 + 0.5) * self.dz,
        ]
    }

    /// Wrap a point into the periodic box `[0, L)` per axis.
    pub fn wrap_point(&self, p: [f64; 3]) -> [f64; 3] {
        let mut q = p;
        for ax in 0..3 {
            let l = self.extent(ax);
            q[ax] = q[ax].rem_euclid(l);
            if q[ax] >= l {
                q[ax] = 0.0; // rem_euclid may return l itself for tiny negatives
            }
        }
        q
    }

    /// Displacement `b − a` wrapped to the nearest periodic image.
    pub fn min_image(&self, a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
        let mut d = [0.0; 3];
        for ax in 0..3 {
            let l = self.extent(ax);
            let mut v = b[ax] - a[ax];
            v -= (v / l).round() * l;
            d[ax] = v;
        }
        d
    }
}
