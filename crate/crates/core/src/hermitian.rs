//! Dense complex n×n matrix algebra applied pointwise across the grid:
//! commutators, Frobenius pairings, Hermitization, eigenvalue bounds and the
//! Pauli basis. Slice kernels avoid allocation so the model assembly can run
//! them per cell; the [`Matrix`] value type wraps them with shape checking.

use crate::error::{QcError, Result};
use crate::C64;

/// Largest supported Hilbert dimension (stack scratch buffers are n²·MAX_N²).
pub const MAX_N: usize = 8;

/// Stack scratch buffer holding one n×n matrix for n ≤ MAX_N.
pub type MatBuf = [C64; MAX_N * MAX_N];

/// A zeroed scratch buffer.
#[inline(always)]
pub fn matbuf() -> MatBuf {
    [C64 { re: 0.0, im: 0.0 }; MAX_N * MAX_N]
}

// ---------------------------------------------------------------------------
// slice kernels (row-major n×n, length n²)

/// out = a·b.
#[inline]
pub fn matmul(n: usize, a: &[C64], b: &[C64], out: &mut [C64]) {
    debug_assert!(a.len() == n * n && b.len() == n * n && out.len() >= n * n);
    for r in 0..n {
        for c in 0..n {
            let mut acc = C64 { re: 0.0, im: 0.0 };
            for m in 0..n {
                acc += a[r * n + m] * b[m * n + c];
            }
            out[r * n + c] = acc;
        }
    }
}

/// out += s·(a·b).
#[inline]
pub fn matmul_acc(n: usize, a: &[C64], b: &[C64], s: f64, out: &mut [C64]) {
    debug_assert!(a.len() == n * n && b.len() == n * n && out.len() >= n * n);
    for r in 0..n {
        for c in 0..n {
            let mut acc = C64 { re: 0.0, im: 0.0 };
            for m in 0..n {
                acc += a[r * n + m] * b[m * n + c];
            }
            out[r * n + c] += acc * s;
        }
    }
}

/// out = a·x for an n×n matrix acting on an n-spinor.
#[inline(always)]
pub fn matvec(n: usize, a: &[C64], x: &[C64], out: &mut [C64]) {
    for r in 0..n {
        let mut s = C64 { re: 0.0, im: 0.0 };
        for c in 0..n {
            s += a[r * n + c] * x[c];
        }
        out[r] = s;
    }
}

/// out = a·b − b·a.
#[inline]
pub fn commutator_into(n: usize, a: &[C64], b: &[C64], out: &mut [C64]) {
    debug_assert!(out.len() >= n * n);
    for r in 0..n {
        for c in 0..n {
            let mut acc = C64 { re: 0.0, im: 0.0 };
            for m in 0..n {
                acc += a[r * n + m] * b[m * n + c] - b[r * n + m] * a[m * n + c];
            }
            out[r * n + c] = acc;
        }
    }
}

/// Re Tr(a†b) = Σ (Re a·Re b + Im a·Im b), the real Frobenius pairing ⟨a, b⟩.
#[inline(always)]
pub fn inner_re(a: &[C64], b: &[C64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x.re * y.re + x.im * y.im;
    }
    s
}

/// Im Tr(a†b); for Hermitian a this gives ⟨a, ib⟩ = −inner_im(a, b).
#[inline(always)]
pub fn inner_im(a: &[C64], b: &[C64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x.re * y.im - x.im * y.re;
    }
    s
}

/// Tr(a†b), the full complex Frobenius product ⟨a|b⟩.
#[inline(always)]
pub fn inner_full(a: &[C64], b: &[C64]) -> C64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = C64 { re: 0.0, im: 0.0 };
    for (x, y) in a.iter().zip(b) {
        s += x.conj() * y;
    }
    s
}

#[inline(always)]
pub fn trace(n: usize, a: &[C64]) -> C64 {
    let mut s = C64 { re: 0.0, im: 0.0 };
    for r in 0..n {
        s += a[r * n + r];
    }
    s
}

#[inline(always)]
pub fn fro_norm(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// out = a†.
#[inline]
pub fn dagger(n: usize, a: &[C64], out: &mut [C64]) {
    for r in 0..n {
        for c in 0..n {
            out[r * n + c] = a[c * n + r].conj();
        }
    }
}

/// a ← (a + a†)/2; returns ‖a − a†‖_F measured before symmetrizing.
#[inline]
pub fn hermitize_in_place(n: usize, a: &mut [C64]) -> f64 {
    let mut drift2 = 0.0;
    for r in 0..n {
        let d = a[r * n + r].im;
        drift2 += 4.0 * d * d; // diagonal contributes (2 Im a_rr)² per entry
        a[r * n + r].im = 0.0;
        for c in r + 1..n {
            let x = a[r * n + c];
            let y = a[c * n + r];
            let diff = x - y.conj();
            drift2 += 2.0 * diff.norm_sqr();
            let m = (x + y.conj()) * 0.5;
            a[r * n + c] = m;
            a[c * n + r] = m.conj();
        }
    }
    drift2.sqrt()
}

// ---------------------------------------------------------------------------
// eigenvalues

/// Smallest eigenvalue of a Hermitian matrix: closed form for n ≤ 2, cyclic
/// Jacobi otherwise.
pub fn min_eigenvalue(n: usize, a: &[C64]) -> Result<f64> {
    min_eigenvalue_with_budget(n, a, JACOBI_MAX_SWEEPS)
}

/// Jacobi sweep budget before reporting non-convergence.
pub const JACOBI_MAX_SWEEPS: usize = 100;

/// As [`min_eigenvalue`] with an explicit sweep budget (exercised by tests).
pub fn min_eigenvalue_with_budget(n: usize, a: &[C64], budget: usize) -> Result<f64> {
    match n {
        1 => Ok(a[0].re),
        2 => {
            let (lo, _) = eig2(a);
            Ok(lo)
        }
        _ => Ok(jacobi_eigenvalues(n, a, budget)?.into_iter().fold(f64::INFINITY, f64::min)),
    }
}

/// Closed-form 2×2 Hermitian eigenvalues (low, high).
pub fn eig2(a: &[C64]) -> (f64, f64) {
    let mean = 0.5 * (a[0].re + a[3].re);
    let half_gap = 0.5 * (a[0].re - a[3].re);
    let disc = (half_gap * half_gap + a[1].norm_sqr()).sqrt();
    (mean - disc, mean + disc)
}

/// All eigenvalues of a Hermitian matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(n: usize, a: &[C64], budget: usize) -> Result<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    let scale = fro_norm(&m);
    let off = |m: &[C64]| -> f64 {
        let mut s = 0.0;
        for r in 0..n {
            for c in 0..n {
                if r != c {
                    s += m[r * n + c].norm_sqr();
                }
            }
        }
        s.sqrt()
    };
    let mut sweeps = 0;
    loop {
        let o = off(&m);
        if o <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return Ok((0..n).map(|r| m[r * n + r].re).collect());
        }
        if sweeps >= budget {
            return Err(QcError::EigenFailure { sweeps, off: o });
        }
        for p in 0..n {
            for q in p + 1..n {
                let beta = m[p * n + q];
                let ab = beta.norm();
                if ab <= 1e-300 {
                    continue;
                }
                // complex Jacobi rotation J = [[c, s], [−s̄, c]] on the (p,q)
                // plane with s = σ·e^{i arg β}, chosen to zero m[p,q]
                let alpha = m[p * n + p].re;
                let gamma = m[q * n + q].re;
                let tau = (gamma - alpha) / (2.0 * ab);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = beta / ab * (t * c);
                // columns p, q of m ← m·J
                for r in 0..n {
                    let mp = m[r * n + p];
                    let mq = m[r * n + q];
                    m[r * n + p] = mp * c - mq * s.conj();
                    m[r * n + q] = mp * s + mq * c;
                }
                // rows p, q of m ← J†·m
                for cc in 0..n {
                    let mp = m[p * n + cc];
                    let mq = m[q * n + cc];
                    m[p * n + cc] = mp * c - mq * s;
                    m[q * n + cc] = mp * s.conj() + mq * c;
                }
            }
        }
        sweeps += 1;
    }
}

// ---------------------------------------------------------------------------
// value type

/// Owned n×n complex matrix with shape-checked operations.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub n: usize,
    pub data: Vec<C64>,
}

impl Matrix {
    pub fn new(n: usize, data: Vec<C64>) -> Matrix {
        assert_eq!(data.len(), n * n, "matrix data length must be n²");
        Matrix { n, data }
    }

    pub fn zeros(n: usize) -> Matrix {
        Matrix { n, data: vec![C64 { re: 0.0, im: 0.0 }; n * n] }
    }

    pub fn identity(n: usize) -> Matrix {
        let mut m = Matrix::zeros(n);
        for r in 0..n {
            m.data[r * n + r] = C64 { re: 1.0, im: 0.0 };
        }
        m
    }

    /// Convenience constructor from (re, im) pairs in row-major order.
    pub fn from_re_im(n: usize, entries: &[(f64, f64)]) -> Matrix {
        Matrix::new(n, entries.iter().map(|&(re, im)| C64 { re, im }).collect())
    }

    fn check(&self, other: &Matrix, what: &str) -> Result<()> {
        if self.n != other.n {
            return Err(QcError::ShapeError(format!(
                "{what} of a {0}×{0} with a {1}×{1} matrix",
                self.n, other.n
            )));
        }
        Ok(())
    }

    pub fn commutator(&self, other: &Matrix) -> Result<Matrix> {
        self.check(other, "commutator")?;
        let mut out = Matrix::zeros(self.n);
        commutator_into(self.n, &self.data, &other.data, &mut out.data);
        Ok(out)
    }

    pub fn inner_re(&self, other: &Matrix) -> Result<f64> {
        self.check(other, "inner_re")?;
        Ok(inner_re(&self.data, &other.data))
    }

    pub fn inner_full(&self, other: &Matrix) -> Result<C64> {
        self.check(other, "inner_full")?;
        Ok(inner_full(&self.data, &other.data))
    }

    /// (A + A†)/2 together with the Hermiticity drift ‖A − A†‖_F.
    pub fn hermitize(&self) -> (Matrix, f64) {
        let mut out = self.clone();
        let drift = hermitize_in_place(self.n, &mut out.data);
        (out, drift)
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        min_eigenvalue(self.n, &self.data)
    }

    /// ⟨Â⟩ = ⟨ρ̂, Â⟩ for a density matrix ρ̂ = self.
    pub fn expect(&self, observable: &Matrix) -> Result<f64> {
        self.check(observable, "expect")?;
        Ok(inner_re(&self.data, &observable.data))
    }

    pub fn trace(&self) -> C64 {
        trace(self.n, &self.data)
    }

    pub fn fro_norm(&self) -> f64 {
        fro_norm(&self.data)
    }

    pub fn dagger(&self) -> Matrix {
        let mut out = Matrix::zeros(self.n);
        dagger(self.n, &self.data, &mut out.data);
        out
    }

    pub fn mul(&self, other: &Matrix) -> Result<Matrix> {
        self.check(other, "matmul")?;
        let mut out = Matrix::zeros(self.n);
        matmul(self.n, &self.data, &other.data, &mut out.data);
        Ok(out)
    }

    pub fn scaled(&self, s: C64) -> Matrix {
        Matrix { n: self.n, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.check(other, "add")?;
        Ok(Matrix {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }
}

// ---------------------------------------------------------------------------
// Pauli basis

/// The 2×2 identity and the three Pauli matrices; the algebra
/// σ̂_jσ̂_k = δ_jk𝟙 + iε_jkl σ̂_l is verified at construction.
pub struct PauliBasis {
    pub id: Matrix,
    pub sigma: [Matrix; 3],
}

impl PauliBasis {
    pub fn new() -> PauliBasis {
        let id = Matrix::identity(2);
        let s1 = Matrix::from_re_im(2, &[(0.0, 0.0), (1.0, 0.0), (1.0, 0.0), (0.0, 0.0)]);
        let s2 = Matrix::from_re_im(2, &[(0.0, 0.0), (0.0, -1.0), (0.0, 1.0), (0.0, 0.0)]);
        let s3 = Matrix::from_re_im(2, &[(1.0, 0.0), (0.0, 0.0), (0.0, 0.0), (-1.0, 0.0)]);
        let basis = PauliBasis { id, sigma: [s1, s2, s3] };
        basis.verify();
        basis
    }

    fn verify(&self) {
        let eps = |j: usize, k: usize, l: usize| -> f64 {
            ((j as f64 - k as f64) * (k as f64 - l as f64) * (l as f64 - j as f64)) / 2.0
        };
        for j in 0..3 {
            for k in 0..3 {
                let prod = self.sigma[j].mul(&self.sigma[k]).unwrap();
                let mut expect = if j == k { self.id.clone() } else { Matrix::zeros(2) };
                for l in 0..3 {
                    let e = eps(j, k, l);
                    if e != 0.0 {
                        expect = expect
                            .add(&self.sigma[l].scaled(C64 { re: 0.0, im: e }))
                            .unwrap();
                    }
                }
                let mut diff = 0.0;
                for c in 0..4 {
                    diff += (prod.data[c] - expect.data[c]).norm();
                }
                assert!(diff == 0.0, "Pauli algebra violated at ({j}, {k})");
            }
        }
    }
}

impl Default for PauliBasis {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_matrix(rng: &mut impl Rng, n: usize) -> Matrix {
        Matrix {
            n,
            data: (0..n * n)
                .map(|_| C64 { re: rng.gen_range(-1.0..1.0), im: rng.gen_range(-1.0..1.0) })
                .collect(),
        }
    }

    fn random_hermitian(rng: &mut impl Rng, n: usize) -> Matrix {
        random_matrix(rng, n).hermitize().0
    }

    #[test]
    fn pauli_commutator_and_pairings() {
        let p = PauliBasis::new();
        let c = p.sigma[0].commutator(&p.sigma[1]).unwrap();
        let expect = p.sigma[2].scaled(C64 { re: 0.0, im: 2.0 });
        assert_eq!(c, expect, "[σ1, σ2] must be 2iσ3");
        assert_eq!(p.sigma[0].inner_re(&p.sigma[1]).unwrap(), 0.0);
        assert_eq!(p.sigma[0].inner_re(&p.sigma[0]).unwrap(), 2.0);
    }

    #[test]
    fn self_commutator_vanishes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for n in [2, 3, 5] {
            let a = random_hermitian(&mut rng, n);
            let c = a.commutator(&a).unwrap();
            assert!(c.fro_norm() == 0.0);
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let a = Matrix::identity(2);
        let b = Matrix::identity(3);
        let e = a.commutator(&b).unwrap_err();
        assert!(e.to_string().starts_with("shape-error"), "{e}");
        assert!(a.inner_re(&b).is_err() && a.inner_full(&b).is_err());
    }

    #[test]
    fn hermitize_cases() {
        let p = PauliBasis::new();
        // Hermitian input: unchanged, zero drift
        let (h, d) = p.sigma[0].hermitize();
        assert_eq!(h, p.sigma[0]);
        assert_eq!(d, 0.0);
        // skew-Hermitian input iσ1: annihilated, drift = ‖2iσ1‖_F
        let skew = p.sigma[0].scaled(C64 { re: 0.0, im: 1.0 });
        let (z, d) = skew.hermitize();
        assert!(z.fro_norm() == 0.0);
        assert!((d - 2.0 * 2.0f64.sqrt()).abs() < 1e-15);
        // random input: output equals its own dagger exactly
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let (h, _) = random_matrix(&mut rng, 4).hermitize();
        assert_eq!(h, h.dagger());
    }

    #[test]
    fn min_eigenvalue_examples() {
        let p = PauliBasis::new();
        let half = p.id.scaled(C64 { re: 0.5, im: 0.0 });
        assert!((half.min_eigenvalue().unwrap() - 0.5).abs() < 1e-15);
        assert!((half.expect(&p.sigma[2]).unwrap()).abs() < 1e-15);
        let up = Matrix::from_re_im(2, &[(1.0, 0.0), (0.0, 0.0), (0.0, 0.0), (0.0, 0.0)]);
        assert!(up.min_eigenvalue().unwrap().abs() < 1e-15);
        assert!((up.expect(&p.sigma[2]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn jacobi_matches_quadratic_oracle_on_2x2() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let a = random_hermitian(&mut rng, 2);
            let (lo, hi) = eig2(&a.data);
            let mut eigs = jacobi_eigenvalues(2, &a.data, JACOBI_MAX_SWEEPS).unwrap();
            eigs.sort_by(f64::total_cmp);
            assert!((eigs[0] - lo).abs() <= 1e-13 && (eigs[1] - hi).abs() <= 1e-13);
        }
    }

    #[test]
    fn jacobi_handles_larger_matrices() {
        // unitary conjugation of a known diagonal: spectrum is preserved
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let n = 5;
        let diag: Vec<f64> = (0..n).map(|r| r as f64 - 1.7).collect();
        // build a unitary from Jacobi-like rotations applied to the identity
        let mut u = Matrix::identity(n);
        for p in 0..n {
            for q in p + 1..n {
                let th: f64 = rng.gen_range(0.0..1.5);
                let ph: f64 = rng.gen_range(0.0..6.28);
                let (c, s) = (th.cos(), th.sin());
                let e = C64 { re: ph.cos(), im: ph.sin() };
                for r in 0..n {
                    let a = u.data[r * n + p];
                    let b = u.data[r * n + q];
                    u.data[r * n + p] = a * c - b * (e * s).conj();
                    u.data[r * n + q] = a * (e * s) + b * c;
                }
            }
        }
        let mut a = Matrix::zeros(n);
        for r in 0..n {
            for c in 0..n {
                let mut acc = C64 { re: 0.0, im: 0.0 };
                for m in 0..n {
                    acc += u.data[r * n + m] * diag[m] * u.data[c * n + m].conj();
                }
                a.data[r * n + c] = acc;
            }
        }
        let min = a.min_eigenvalue().unwrap();
        assert!((min - (-1.7)).abs() < 1e-11, "min {min}");
        let mut eigs = jacobi_eigenvalues(n, &a.data, JACOBI_MAX_SWEEPS).unwrap();
        eigs.sort_by(f64::total_cmp);
        for (e, d) in eigs.iter().zip(&diag) {
            assert!((e - d).abs() < 1e-11);
        }
    }

    #[test]
    fn exhausted_sweep_budget_reports_eigen_failure() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let a = random_hermitian(&mut rng, 3);
        let e = min_eigenvalue_with_budget(3, &a.data, 0).unwrap_err();
        assert!(e.to_string().starts_with("eigen-failure"), "{e}");
    }

    #[test]
    fn adjoint_identity_on_random_triples() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let (a, b, c) =
                (random_matrix(&mut rng, 3), random_matrix(&mut rng, 3), random_matrix(&mut rng, 3));
            let lhs = a.inner_re(&b.commutator(&c).unwrap()).unwrap();
            let rhs = b.dagger().commutator(&a).unwrap().inner_re(&c).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12, "adjoint identity broke: {lhs} vs {rhs}");
        }
    }

    proptest::proptest! {
        #[test]
        fn pauli_expectations_stay_in_unit_interval(
            seed in 0u64..1000,
            k in 0usize..3,
        ) {
            // random 2×2 density matrix via A†A / Tr(A†A)
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, 2);
            let rho = a.dagger().mul(&a).unwrap();
            let tr = rho.trace().re;
            proptest::prop_assume!(tr > 1e-12);
            let rho = rho.scaled(C64 { re: 1.0 / tr, im: 0.0 });
            let p = PauliBasis::new();
            let v = rho.expect(&p.sigma[k]).unwrap();
            proptest::prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&v));
        }
    }
}
