//! Seeded synthetic fields, states and matrices for tests and verification
//! suites, plus the least-squares order fit used by every convergence study.
//!
//! All randomness flows through a counter-seeded ChaCha stream so any field
//! is reproducible from its seed alone.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

use crate::fields::{HermitianField, MatrixField, ScalarField, SpinorField, VectorField};
use crate::grid::Grid;
use crate::hermitian::{matmul, Matrix, MAX_N};
use crate::poisson::poisson_solve_fd4;
use crate::C64;

/// One periodic Fourier mode with integer wavevector.
#[derive(Clone, Copy, Debug)]
pub struct Mode {
    pub k: [i32; 3],
    pub amp: f64,
    pub phase: f64,
}

impl Mode {
    /// Evaluate amp·cos(2π k·(x/L) + phase) at a point.
    pub fn eval(&self, grid: &Grid, x: [f64; 3]) -> f64 {
        let mut arg = self.phase;
        for ax in 0..3 {
            arg += TAU * self.k[ax] as f64 * x[ax] / grid.extent(ax);
        }
        self.amp * arg.cos()
    }
}

/// A band-limited trigonometric scalar with analytically known gradient.
#[derive(Clone, Debug)]
pub struct TrigScalar {
    pub offset: f64,
    pub modes: Vec<Mode>,
}

impl TrigScalar {
    pub fn eval(&self, grid: &Grid, x: [f64; 3]) -> f64 {
        self.offset + self.modes.iter().map(|m| m.eval(grid, x)).sum::<f64>()
    }

    /// Exact gradient at a point, for injection into pointwise kernels.
    pub fn grad(&self, grid: &Grid, x: [f64; 3]) -> [f64; 3] {
        let mut g = [0.0; 3];
        for m in &self.modes {
            let mut arg = m.phase;
            let mut kv = [0.0; 3];
            for ax in 0..3 {
                kv[ax] = TAU * m.k[ax] as f64 / grid.extent(ax);
                arg += kv[ax] * x[ax];
            }
            let s = -m.amp * arg.sin();
            for ax in 0..3 {
                g[ax] += s * kv[ax];
            }
        }
        g
    }

    /// Sample onto the grid.
    pub fn field(&self, grid: Grid) -> ScalarField {
        ScalarField::from_fn(grid, |x| self.eval(&grid, x))
    }
}

/// Deterministic source of smooth random fields and matrices.
pub struct FieldSampler {
    rng: ChaCha8Rng,
}

impl FieldSampler {
    pub fn new(seed: u64) -> FieldSampler {
        FieldSampler { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// One uniform draw from [lo, hi), for scalar coefficients.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.gen_range(lo..hi)
    }

    /// A band-limited profile with `nmodes` modes, |k_i| ≤ kmax, total
    /// amplitude bounded by `amp` around `offset`.
    pub fn trig(&mut self, grid: Grid, nmodes: usize, kmax: i32, amp: f64, offset: f64) -> TrigScalar {
        let mut modes = Vec::with_capacity(nmodes);
        let per = amp / nmodes.max(1) as f64;
        for _ in 0..nmodes {
            let mut k = [0i32; 3];
            // resample until the mode is nonconstant
            loop {
                for (ax, kk) in k.iter_mut().enumerate() {
                    *kk = if ax == 2 && grid.is_planar() {
                        0
                    } else {
                        self.rng.gen_range(-kmax..=kmax)
                    };
                }
                if k != [0, 0, 0] {
                    break;
                }
            }
            modes.push(Mode {
                k,
                amp: per * self.rng.gen_range(0.4..1.0),
                phase: self.rng.gen_range(0.0..TAU),
            });
        }
        TrigScalar { offset, modes }
    }

    /// Smooth zero-offset scalar field with amplitude ≤ amp.
    pub fn scalar(&mut self, grid: Grid, nmodes: usize, kmax: i32, amp: f64) -> ScalarField {
        self.trig(grid, nmodes, kmax, amp, 0.0).field(grid)
    }

    /// Smooth strictly positive scalar: level·(1 + bounded ripple).
    pub fn positive_scalar(
        &mut self,
        grid: Grid,
        nmodes: usize,
        kmax: i32,
        rel_amp: f64,
        level: f64,
    ) -> ScalarField {
        assert!(rel_amp < 1.0, "relative ripple must stay below 1");
        self.trig(grid, nmodes, kmax, rel_amp * level, level).field(grid)
    }

    /// Smooth vector field; the z component is dropped on planar grids.
    pub fn vector(&mut self, grid: Grid, nmodes: usize, kmax: i32, amp: f64) -> VectorField {
        let mut v = VectorField::zeros(grid);
        let naxes = if grid.is_planar() { 2 } else { 3 };
        for ax in 0..naxes {
            v.data[ax] = self.scalar(grid, nmodes, kmax, amp).data;
        }
        v
    }

    /// Smooth vector field projected to zero FD4 divergence.
    pub fn div_free_vector(&mut self, grid: Grid, nmodes: usize, kmax: i32, amp: f64) -> VectorField {
        let mut v = self.vector(grid, nmodes, kmax, amp);
        let phi = poisson_solve_fd4(&v.div());
        let g = phi.grad();
        for ax in 0..3 {
            for (o, s) in v.data[ax].iter_mut().zip(&g.data[ax]) {
                *o -= s;
            }
        }
        v
    }

    /// Random Hermitian matrix with entries of magnitude ~scale.
    pub fn hermitian_matrix(&mut self, n: usize, scale: f64) -> Matrix {
        assert!(n >= 1 && n <= MAX_N);
        let mut m = Matrix::zeros(n);
        for r in 0..n {
            let d = self.rng.gen_range(-scale..scale);
            m.data[r * n + r] = C64::new(d, 0.0);
            for c in r + 1..n {
                let z = C64::new(self.rng.gen_range(-scale..scale), self.rng.gen_range(-scale..scale));
                m.data[r * n + c] = z;
                m.data[c * n + r] = z.conj();
            }
        }
        m
    }

    /// Random unitary as a product of complex Givens rotations (exactly
    /// unitary up to roundoff, no decomposition needed).
    pub fn unitary(&mut self, n: usize) -> Matrix {
        assert!(n >= 1 && n <= MAX_N);
        let mut u = Matrix::identity(n);
        let mut tmp = Matrix::zeros(n);
        for p in 0..n {
            for q in p + 1..n {
                let th = self.rng.gen_range(0.0..TAU);
                let al = self.rng.gen_range(0.0..TAU);
                let be = self.rng.gen_range(0.0..TAU);
                let mut g = Matrix::identity(n);
                let (c, s) = (th.cos(), th.sin());
                g.data[p * n + p] = C64::from_polar(c, al);
                g.data[p * n + q] = C64::from_polar(s, be);
                g.data[q * n + p] = C64::from_polar(-s, -be);
                g.data[q * n + q] = C64::from_polar(c, -al);
                matmul(n, &g.data, &u.data, &mut tmp.data);
                std::mem::swap(&mut u.data, &mut tmp.data);
            }
        }
        u
    }

    /// Smooth mixed density field ρ̂ = 𝟙/n + Σ_k f_k(x)·B̂_k with amplitudes
    /// budgeted so every cell stays positive definite with unit trace.
    pub fn density_field(&mut self, grid: Grid, n: usize, nmodes: usize, kmax: i32) -> HermitianField {
        let nb = n * n - 1;
        // traceless Hermitian directions with unit Frobenius norm
        let mut dirs = Vec::with_capacity(nb);
        for _ in 0..nb {
            let mut m = self.hermitian_matrix(n, 1.0);
            let tr = m.trace().re / n as f64;
            for r in 0..n {
                m.data[r * n + r] -= C64::new(tr, 0.0);
            }
            let norm = m.fro_norm().max(1e-12);
            for z in m.data.iter_mut() {
                *z /= norm;
            }
            dirs.push(m);
        }
        let budget = 0.7 / (n as f64 * nb as f64);
        let profiles: Vec<ScalarField> = (0..nb)
            .map(|_| self.trig(grid, nmodes, kmax, budget, 0.0).field(grid))
            .collect();
        let mut rho = MatrixField::zeros(grid, n);
        let inv = 1.0 / n as f64;
        for cell in 0..grid.len() {
            let m = rho.mat_mut(cell);
            for r in 0..n {
                m[r * n + r] = C64::new(inv, 0.0);
            }
            for (dir, f) in dirs.iter().zip(&profiles) {
                let w = f.data[cell];
                for (o, z) in m.iter_mut().zip(&dir.data) {
                    *o += z * w;
                }
            }
        }
        rho
    }

    /// Smooth normalized spinor field with a dominant first component.
    pub fn spinor_field(&mut self, grid: Grid, n: usize, nmodes: usize, kmax: i32) -> SpinorField {
        let amp = 0.35 / n as f64;
        let parts: Vec<(ScalarField, ScalarField)> = (0..n)
            .map(|_| {
                (
                    self.trig(grid, nmodes, kmax, amp, 0.0).field(grid),
                    self.trig(grid, nmodes, kmax, amp, 0.0).field(grid),
                )
            })
            .collect();
        let mut psi = SpinorField::zeros(grid, n);
        for cell in 0..grid.len() {
            let s = psi.sp_mut(cell);
            for (a, (re, im)) in s.iter_mut().zip(&parts) {
                *a = C64::new(re.data[cell], im.data[cell]);
            }
            s[0] += C64::new(1.0, 0.0);
            let norm = s.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            for z in s.iter_mut() {
                *z /= norm;
            }
        }
        psi
    }
}

/// Bloch spinor ψ = (cos θ/2, e^{iφ} sin θ/2) from angle fields.
pub fn bloch_spinor(theta: &ScalarField, phi: &ScalarField) -> SpinorField {
    let grid = theta.grid;
    let mut psi = SpinorField::zeros(grid, 2);
    for cell in 0..grid.len() {
        let (th, ph) = (theta.data[cell], phi.data[cell]);
        let s = psi.sp_mut(cell);
        s[0] = C64::new((0.5 * th).cos(), 0.0);
        s[1] = C64::from_polar((0.5 * th).sin(), ph);
    }
    psi
}

/// Pure Bloch density ρ̂ = ψψ† from angle fields.
pub fn bloch_density(theta: &ScalarField, phi: &ScalarField) -> HermitianField {
    density_of(&bloch_spinor(theta, phi))
}

/// ψψ† per cell.
pub fn density_of(psi: &SpinorField) -> HermitianField {
    let n = psi.n;
    let mut rho = MatrixField::zeros(psi.grid, n);
    for cell in 0..psi.grid.len() {
        let s = psi.sp(cell);
        let m = rho.mat_mut(cell);
        for r in 0..n {
            for c in 0..n {
                m[r * n + c] = s[r] * s[c].conj();
            }
        }
    }
    rho
}

/// Closed-form U = exp(−i(a0·𝟙 + a·σ̂)) for n = 2, exactly unitary.
pub fn exp_pauli(a0: f64, a: [f64; 3]) -> Matrix {
    let r = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    let (cr, sr) = (r.cos(), if r > 0.0 { r.sin() / r } else { 1.0 });
    let phase = C64::from_polar(1.0, -a0);
    // cos r·𝟙 − i sin r·n̂·σ̂, then the global phase
    let mut m = Matrix::zeros(2);
    m.data[0] = C64::new(cr, -sr * a[2]);
    m.data[1] = C64::new(-sr * a[1], -sr * a[0]);
    m.data[2] = C64::new(sr * a[1], -sr * a[0]);
    m.data[3] = C64::new(cr, sr * a[2]);
    for z in m.data.iter_mut() {
        *z *= phase;
    }
    m
}

/// Least-squares exponent p of err ≈ C·N^(−p) over a refinement ladder.
pub fn fit_order(ns: &[usize], errs: &[f64]) -> f64 {
    assert_eq!(ns.len(), errs.len());
    assert!(ns.len() >= 2);
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|&e| e.max(1e-300).ln()).collect();
    let m = xs.len() as f64;
    let (sx, sy): (f64, f64) = (xs.iter().sum(), ys.iter().sum());
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    -slope
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermitian::{fro_norm, matmul};

    #[test]
    fn trig_gradient_matches_fd4_to_fourth_order() {
        let mut smp = FieldSampler::new(7);
        let mut errs = Vec::new();
        let ns = [16usize, 32];
        // one profile shared across the ladder (modes only depend on extents)
        let prof = smp.trig(Grid::new_2d(16, 16, 1.0, 1.0).unwrap(), 3, 2, 1.0, 0.5);
        for &n in &ns {
            let grid = Grid::new_2d(n, n, 1.0, 1.0).unwrap();
            let f = prof.field(grid);
            let g = f.grad();
            let mut err = 0.0f64;
            for cell in 0..grid.len() {
                let (i, j, k) = grid.cell_of(cell);
                let exact = prof.grad(&grid, grid.cell_center(i, j, k));
                for ax in 0..2 {
                    err = err.max((g.data[ax][cell] - exact[ax]).abs());
                }
            }
            errs.push(err);
        }
        let p = fit_order(&ns, &errs);
        println!("trig gradient convergence: errs {errs:?} order {p:.2}");
        assert!(p > 3.5, "expected 4th order, got {p}");
    }

    #[test]
    fn sampler_is_deterministic_and_bounded() {
        let grid = Grid::new_2d(16, 16, 1.0, 1.0).unwrap();
        let a = FieldSampler::new(42).positive_scalar(grid, 4, 2, 0.5, 2.0);
        let b = FieldSampler::new(42).positive_scalar(grid, 4, 2, 0.5, 2.0);
        assert_eq!(a.data, b.data);
        assert!(a.min() > 1.0 && a.max_norm() < 3.0);
    }

    #[test]
    fn unitary_is_unitary_and_density_is_valid() {
        let mut smp = FieldSampler::new(3);
        for n in [2usize, 3, 5] {
            let u = smp.unitary(n);
            let uh = u.dagger();
            let mut prod = vec![C64::new(0.0, 0.0); n * n];
            matmul(n, &uh.data, &u.data, &mut prod);
            for r in 0..n {
                for c in 0..n {
                    let want = if r == c { 1.0 } else { 0.0 };
                    assert!((prod[r * n + c] - C64::new(want, 0.0)).norm() < 1e-13);
                }
            }
        }
        let grid = Grid::new_2d(8, 8, 1.0, 1.0).unwrap();
        let rho = smp.density_field(grid, 3, 2, 1);
        for cell in 0..grid.len() {
            let m = rho.mat(cell);
            let tr: f64 = (0..3).map(|r| m[r * 3 + r].re).sum();
            assert!((tr - 1.0).abs() < 1e-12);
            let mat = Matrix::new(3, m.to_vec());
            assert!(mat.min_eigenvalue().unwrap() > 0.0, "density not positive");
        }
    }

    #[test]
    fn exp_pauli_matches_series_and_is_unitary() {
        let a = [0.3, -0.2, 0.5];
        let u = exp_pauli(0.7, a);
        // series expansion of exp(−iX) for X = a0 + a·σ̂
        let x = Matrix::from_re_im(
            2,
            &[
                (0.7 + a[2], 0.0),
                (a[0], -a[1]),
                (a[0], a[1]),
                (0.7 - a[2], 0.0),
            ],
        );
        let mut term = Matrix::identity(2);
        let mut sum = Matrix::identity(2);
        for k in 1..40 {
            let mut next = vec![C64::new(0.0, 0.0); 4];
            matmul(2, &term.data, &x.data, &mut next);
            let s = C64::new(0.0, -1.0 / k as f64);
            for z in next.iter_mut() {
                *z *= s;
            }
            term = Matrix::new(2, next);
            sum = sum.add(&term).unwrap();
        }
        let mut diff = u.data.clone();
        for (d, s) in diff.iter_mut().zip(&sum.data) {
            *d -= s;
        }
        assert!(fro_norm(&diff) < 1e-12, "closed form vs series: {}", fro_norm(&diff));
    }

    #[test]
    fn div_free_vector_has_tiny_divergence() {
        let grid = Grid::new_2d(32, 32, 1.0, 1.0).unwrap();
        let v = FieldSampler::new(11).div_free_vector(grid, 4, 3, 1.0);
        assert!(v.div().max_norm() < 1e-11, "div = {}", v.div().max_norm());
    }

    #[test]
    fn fit_order_recovers_known_slope() {
        let ns = [16usize, 32, 64];
        let errs: Vec<f64> = ns.iter().map(|&n| 3.0 * (n as f64).powi(-4)).collect();
        assert!((fit_order(&ns, &errs) - 4.0).abs() < 1e-10);
    }
}
