//! Geometric kernels of the hybrid theory: the Nambu bracket in scalar and
//! noncommutative matrix form, the planar bracket, the Mead connection, the
//! hybrid von Neumann operator, the stress tensor, the Berry connection and
//! the fluctuation force.
//!
//! Every operation exists in two layers: a pointwise kernel taking injected
//! gradients (used by the algebraic verification suite and the model
//! assembly) and a field-level wrapper that supplies the discrete gradients.

use crate::error::{QcError, Result};
use crate::fields::{div_h, HermitianField, MatrixField, ScalarField, SpinorField, VectorField};
use crate::hermitian::{commutator_into, inner_re, matmul_acc};
use crate::C64;

/// (a × b)_i = ε_ijk a_j b_k.
#[inline(always)]
pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

// ---------------------------------------------------------------------------
// Nambu bracket

/// {F,G}_b = ∇b·∇F×∇G on injected gradients.
#[inline(always)]
pub fn nambu_scalar(gb: [f64; 3], gf: [f64; 3], gg: [f64; 3]) -> f64 {
    let c = cross(gf, gg);
    gb[0] * c[0] + gb[1] * c[1] + gb[2] * c[2]
}

/// Field-level {F,G}_b with discrete gradients.
pub fn nambu_scalar_field(b: &ScalarField, f: &ScalarField, g: &ScalarField) -> ScalarField {
    let (gb, gf, gg) = (b.grad(), f.grad(), g.grad());
    let mut out = ScalarField::zeros(b.grid);
    for c in 0..b.grid.len() {
        out.data[c] = nambu_scalar(
            [gb.data[0][c], gb.data[1][c], gb.data[2][c]],
            [gf.data[0][c], gf.data[1][c], gf.data[2][c]],
            [gg.data[0][c], gg.data[1][c], gg.data[2][c]],
        );
    }
    out
}

/// {F̂,Ĝ}_b = Σ ε_ijk (∂_i b)(∂_j F̂)(∂_k Ĝ) with matrix products in written
/// order; the ordering convention is load-bearing ({F̂,Ĝ}_b ≠ −{Ĝ,F̂}_b).
#[inline]
pub fn nambu_matrix_into(n: usize, gb: [f64; 3], gf: [&[C64]; 3], gg: [&[C64]; 3], out: &mut [C64]) {
    for z in out[..n * n].iter_mut() {
        *z = C64 { re: 0.0, im: 0.0 };
    }
    // Σ_i gb_i (F_j G_k − F_k G_j) over cyclic (i,j,k)
    for (i, j, k) in [(0, 1, 2), (1, 2, 0), (2, 0, 1)] {
        if gb[i] != 0.0 {
            matmul_acc(n, gf[j], gg[k], gb[i], out);
            matmul_acc(n, gf[k], gg[j], -gb[i], out);
        }
    }
}

/// Field-level matrix Nambu bracket {F̂,Ĝ}_b.
pub fn nambu_matrix_field(b: &ScalarField, f: &MatrixField, g: &MatrixField) -> Result<MatrixField> {
    if f.n != g.n {
        return Err(QcError::ShapeError(format!(
            "nambu_matrix of a {0}×{0} with a {1}×{1} field",
            f.n, g.n
        )));
    }
    let gb = b.grad();
    let gf = f.grad_h();
    let gg = g.grad_h();
    let mut out = MatrixField::zeros(f.grid, f.n);
    for c in 0..f.grid.len() {
        nambu_matrix_into(
            f.n,
            [gb.data[0][c], gb.data[1][c], gb.data[2][c]],
            [gf[0].mat(c), gf[1].mat(c), gf[2].mat(c)],
            [gg[0].mat(c), gg[1].mat(c), gg[2].mat(c)],
            out.mat_mut(c),
        );
    }
    Ok(out)
}

/// Mixed bracket {c,Ĝ}_b with a scalar first slot: (∇b×∇c)·∇Ĝ.
#[inline]
pub fn nambu_sm_into(n: usize, gb: [f64; 3], gc: [f64; 3], gg: [&[C64]; 3], out: &mut [C64]) {
    let v = cross(gb, gc);
    for e in 0..n * n {
        out[e] = gg[0][e] * v[0] + gg[1][e] * v[1] + gg[2][e] * v[2];
    }
}

/// Commutator form Σ ε_ijk (∂_i b)[∂_j F̂, ∂_k Ĝ], the bracket combination
/// appearing in pairings of the form ⟨ρ̂, iħ{ρ̂,Ĥ}_b⟩.
#[inline]
pub fn bracket_commutator_into(
    n: usize,
    gb: [f64; 3],
    gf: [&[C64]; 3],
    gg: [&[C64]; 3],
    out: &mut [C64],
) {
    for z in out[..n * n].iter_mut() {
        *z = C64 { re: 0.0, im: 0.0 };
    }
    for (i, j, k) in [(0, 1, 2), (1, 2, 0), (2, 0, 1)] {
        if gb[i] != 0.0 {
            // ε_ijk [F_j, G_k] + ε_ikj [F_k, G_j]
            matmul_acc(n, gf[j], gg[k], gb[i], out);
            matmul_acc(n, gg[k], gf[j], -gb[i], out);
            matmul_acc(n, gf[k], gg[j], -gb[i], out);
            matmul_acc(n, gg[j], gf[k], gb[i], out);
        }
    }
}

// ---------------------------------------------------------------------------
// planar bracket

fn require_planar(grid: &crate::grid::Grid, what: &str) -> Result<()> {
    if !grid.is_planar() {
        return Err(QcError::UnsupportedOperation(format!("{what} on a 3D grid")));
    }
    Ok(())
}

/// {A,B} = ∂_x A ∂_y B − ∂_y A ∂_x B on a planar grid.
pub fn planar_bracket(a: &ScalarField, b: &ScalarField) -> Result<ScalarField> {
    require_planar(&a.grid, "planar_bracket")?;
    let (ax, ay) = (a.deriv(0), a.deriv(1));
    let (bx, by) = (b.deriv(0), b.deriv(1));
    let mut out = ScalarField::zeros(a.grid);
    for c in 0..a.grid.len() {
        out.data[c] = ax.data[c] * by.data[c] - ay.data[c] * bx.data[c];
    }
    Ok(out)
}

/// Matrix planar bracket kernel on injected x/y derivatives: fx·gy − fy·gx.
#[inline]
pub fn planar_matrix_into(n: usize, fx: &[C64], fy: &[C64], gx: &[C64], gy: &[C64], out: &mut [C64]) {
    for z in out[..n * n].iter_mut() {
        *z = C64 { re: 0.0, im: 0.0 };
    }
    matmul_acc(n, fx, gy, 1.0, out);
    matmul_acc(n, fy, gx, -1.0, out);
}

/// Field-level matrix planar bracket {Â,B̂} with written-order products.
pub fn planar_bracket_matrix(a: &MatrixField, b: &MatrixField) -> Result<MatrixField> {
    require_planar(&a.grid, "planar_bracket")?;
    if a.n != b.n {
        return Err(QcError::ShapeError(format!(
            "planar_bracket of a {0}×{0} with a {1}×{1} field",
            a.n, b.n
        )));
    }
    let (ax, ay) = (a.deriv(0), a.deriv(1));
    let (bx, by) = (b.deriv(0), b.deriv(1));
    let mut out = MatrixField::zeros(a.grid, a.n);
    for c in 0..a.grid.len() {
        planar_matrix_into(a.n, ax.mat(c), ay.mat(c), bx.mat(c), by.mat(c), out.mat_mut(c));
    }
    Ok(out)
}

/// Mixed planar bracket {c,B̂} = ∂_x c ∂_y B̂ − ∂_y c ∂_x B̂.
pub fn planar_bracket_sm(c: &ScalarField, b: &MatrixField) -> Result<MatrixField> {
    require_planar(&c.grid, "planar_bracket")?;
    let (cx, cy) = (c.deriv(0), c.deriv(1));
    let (bx, by) = (b.deriv(0), b.deriv(1));
    let mut out = MatrixField::zeros(b.grid, b.n);
    let nn = b.n * b.n;
    for cell in 0..c.grid.len() {
        let (vx, vy) = (cx.data[cell], cy.data[cell]);
        let o = out.mat_mut(cell);
        let (mx, my) = (&bx.data[cell * nn..(cell + 1) * nn], &by.data[cell * nn..(cell + 1) * nn]);
        for e in 0..nn {
            o[e] = my[e] * vx - mx[e] * vy;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Mead connection and von Neumann operator

/// Per-axis components Γ̂_i of the Mead connection.
pub struct MeadConnectionField {
    pub comp: [HermitianField; 3],
}

/// Pointwise Mead kernel on an injected gradient: Γ̂_i = (iħ/2)[ρ̂, ∂_i ρ̂].
#[inline]
pub fn mead_kernel(n: usize, hbar: f64, rho: &[C64], drho: &[C64], out: &mut [C64]) {
    commutator_into(n, rho, drho, out);
    let s = C64 { re: 0.0, im: 0.5 * hbar };
    for z in out[..n * n].iter_mut() {
        *z *= s;
    }
}

/// Γ̂ = (iħ/2)[ρ̂, ∇ρ̂], Hermitian and traceless by construction.
pub fn mead_connection(rho: &HermitianField, hbar: f64) -> MeadConnectionField {
    mead_connection_with_grad(rho, &rho.grad_h(), hbar)
}

/// `mead_connection` on a precomputed ∇ρ̂, so callers can reuse the gradient.
pub fn mead_connection_with_grad(
    rho: &HermitianField,
    grho: &[MatrixField; 3],
    hbar: f64,
) -> MeadConnectionField {
    let mut comp = [
        MatrixField::zeros(rho.grid, rho.n),
        MatrixField::zeros(rho.grid, rho.n),
        MatrixField::zeros(rho.grid, rho.n),
    ];
    for ax in 0..3 {
        for c in 0..rho.grid.len() {
            mead_kernel(rho.n, hbar, rho.mat(c), grho[ax].mat(c), comp[ax].mat_mut(c));
        }
    }
    MeadConnectionField { comp }
}

/// One n×n Hermitian matrix per cell: the hybrid von Neumann operator.
pub type VonNeumannField = HermitianField;

/// 𝒟̂ = Dρ̂ + div(cΓ̂×∇b), with (Γ̂×∇b)_i = ε_ijk Γ̂_j ∂_k b.
pub fn von_neumann(
    d: &ScalarField,
    rho: &HermitianField,
    b: &ScalarField,
    c: &ScalarField,
    hbar: f64,
) -> VonNeumannField {
    von_neumann_with_grad(d, rho, &mead_connection(rho, hbar), &b.grad(), c)
}

/// `von_neumann` on a precomputed Mead connection and ∇b.
pub fn von_neumann_with_grad(
    d: &ScalarField,
    rho: &HermitianField,
    gamma: &MeadConnectionField,
    gb: &VectorField,
    c: &ScalarField,
) -> VonNeumannField {
    let n = rho.n;
    let nn = n * n;
    let mut flux = [
        MatrixField::zeros(rho.grid, n),
        MatrixField::zeros(rho.grid, n),
        MatrixField::zeros(rho.grid, n),
    ];
    for cell in 0..rho.grid.len() {
        let gbv = [gb.data[0][cell], gb.data[1][cell], gb.data[2][cell]];
        let cv = c.data[cell];
        for (i, j, k) in [(0, 1, 2), (1, 2, 0), (2, 0, 1)] {
            let (gj, gk) = (gamma.comp[j].mat(cell), gamma.comp[k].mat(cell));
            let o = &mut flux[i].data[cell * nn..(cell + 1) * nn];
            for e in 0..nn {
                o[e] = (gj[e] * gbv[k] - gk[e] * gbv[j]) * cv;
            }
        }
    }
    let mut out = div_h(&flux);
    for cell in 0..rho.grid.len() {
        let dv = d.data[cell];
        let r = rho.mat(cell);
        let o = out.mat_mut(cell);
        for e in 0..nn {
            o[e] += r[e] * dv;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// stress tensor

/// One 3×3 real tensor per cell, row-major: `comp[j*3+k]` holds T_jk.
pub struct StressField {
    pub grid: crate::grid::Grid,
    pub comp: [Vec<f64>; 9],
}

impl StressField {
    pub fn at(&self, cell: usize, j: usize, k: usize) -> f64 {
        self.comp[j * 3 + k][cell]
    }
}

/// Pointwise stress kernel on injected gradients; `r[m*3+k]` receives the
/// pairing table R_mk = ⟨Γ̂_m, ∂_k Ĥ⟩ as a side product.
#[inline]
pub fn stress_kernel(
    p: f64,
    cv: f64,
    gb: [f64; 3],
    gamma: [&[C64]; 3],
    gh: [&[C64]; 3],
) -> [f64; 9] {
    // pairing table R_mk = ⟨Γ̂_m, ∂_k Ĥ⟩ (all real via inner_re)
    let mut rr = [0.0f64; 9];
    for m in 0..3 {
        for k in 0..3 {
            rr[m * 3 + k] = inner_re(gamma[m], gh[k]);
        }
    }
    // W_i = ⟨Γ̂, ×∇Ĥ⟩_i = ε_ijk R_jk
    let w = [
        rr[1 * 3 + 2] - rr[2 * 3 + 1],
        rr[2 * 3 + 0] - rr[0 * 3 + 2],
        rr[0 * 3 + 1] - rr[1 * 3 + 0],
    ];
    let diag = p - cv * (gb[0] * w[0] + gb[1] * w[1] + gb[2] * w[2]);
    let eps = |i: usize, j: usize, k: usize| -> f64 {
        ((i as f64 - j as f64) * (j as f64 - k as f64) * (k as f64 - i as f64)) / 2.0
    };
    let mut t = [0.0f64; 9];
    for j in 0..3 {
        for k in 0..3 {
            let mut v = if j == k { diag } else { 0.0 };
            v += cv * w[j] * gb[k];
            for l in 0..3 {
                for m in 0..3 {
                    let e = eps(j, l, m);
                    if e != 0.0 {
                        // c⟨(∇b×Γ̂)_j, ∂_kĤ⟩ + c⟨(∇Ĥ×∇b)_j, Γ̂_k⟩
                        v += cv * e * (gb[l] * rr[m * 3 + k] + gb[m] * rr[k * 3 + l]);
                    }
                }
            }
            t[j * 3 + k] = v;
        }
    }
    t
}

/// T_jk = (p − c∇b·⟨Γ̂,×∇Ĥ⟩)δ_jk + c⟨Γ̂,×∇Ĥ⟩_j ∂_k b
///        + c⟨(∇b×Γ̂)_j, ∂_kĤ⟩ + c⟨(∇Ĥ×∇b)_j, Γ̂_k⟩.
pub fn stress_tensor(
    p: &ScalarField,
    c: &ScalarField,
    b: &ScalarField,
    gamma: &MeadConnectionField,
    h: &HermitianField,
) -> StressField {
    stress_tensor_with_grad(p, c, &b.grad(), gamma, &h.grad_h())
}

/// `stress_tensor` on precomputed ∇b and ∇Ĥ.
pub fn stress_tensor_with_grad(
    p: &ScalarField,
    c: &ScalarField,
    gb: &VectorField,
    gamma: &MeadConnectionField,
    gh: &[HermitianField; 3],
) -> StressField {
    let grid = p.grid;
    let mut comp: [Vec<f64>; 9] = Default::default();
    for v in comp.iter_mut() {
        *v = vec![0.0; grid.len()];
    }
    for cell in 0..grid.len() {
        let t = stress_kernel(
            p.data[cell],
            c.data[cell],
            [gb.data[0][cell], gb.data[1][cell], gb.data[2][cell]],
            [gamma.comp[0].mat(cell), gamma.comp[1].mat(cell), gamma.comp[2].mat(cell)],
            [gh[0].mat(cell), gh[1].mat(cell), gh[2].mat(cell)],
        );
        for e in 0..9 {
            comp[e][cell] = t[e];
        }
    }
    StressField { grid, comp }
}

// ---------------------------------------------------------------------------
// Berry connection and fluctuation force

fn check_unit_norm(psi: &SpinorField, what: &str) -> Result<()> {
    let mut drift = 0.0f64;
    for cell in 0..psi.grid.len() {
        let norm2: f64 = psi.sp(cell).iter().map(|z| z.norm_sqr()).sum();
        drift = drift.max((norm2.sqrt() - 1.0).abs());
    }
    if drift > 1e-8 {
        let _ = what;
        return Err(QcError::UnnormalizedState { drift, tol: 1e-8 });
    }
    Ok(())
}

/// Berry kernel on an injected derivative: A_k = ħ·Im⟨ψ, ∂_k ψ⟩.
#[inline(always)]
pub fn berry_kernel(hbar: f64, psi: &[C64], dpsi: &[C64]) -> f64 {
    let mut s = 0.0;
    for (a, b) in psi.iter().zip(dpsi) {
        s += a.re * b.im - a.im * b.re; // Im(conj(a)·b)
    }
    hbar * s
}

/// 𝐀 = ⟨ψ, −iħ∇ψ⟩ (real part), the Berry connection of a unit-norm spinor.
pub fn berry_connection(psi: &SpinorField, hbar: f64) -> Result<VectorField> {
    check_unit_norm(psi, "berry_connection")?;
    let gpsi = psi.grad();
    let mut a = VectorField::zeros(psi.grid);
    for ax in 0..3 {
        for cell in 0..psi.grid.len() {
            a.data[ax][cell] = berry_kernel(hbar, psi.sp(cell), gpsi[ax].sp(cell));
        }
    }
    Ok(a)
}

/// Fluctuation kernel: F̃ = −(∂Ĥ − ⟨ψ, ∂Ĥ ψ⟩𝟙) for one axis.
#[inline]
pub fn fluctuation_kernel(n: usize, psi: &[C64], gh: &[C64], out: &mut [C64]) {
    // ⟨ψ, ∂Ĥ ψ⟩ = ψ†(∂Ĥ)ψ, real for Hermitian ∂Ĥ
    let mut expect = 0.0;
    for r in 0..n {
        let mut row = C64 { re: 0.0, im: 0.0 };
        for c in 0..n {
            row += gh[r * n + c] * psi[c];
        }
        let p = psi[r].conj() * row;
        expect += p.re;
    }
    for r in 0..n {
        for c in 0..n {
            let mut v = -gh[r * n + c];
            if r == c {
                v += expect;
            }
            out[r * n + c] = v;
        }
    }
}

/// F̃_i = −(∂_iĤ − ⟨ψ, ∂_iĤ ψ⟩), the zero-expectation fluctuation force.
pub fn fluctuation_force(psi: &SpinorField, h: &HermitianField) -> Result<[HermitianField; 3]> {
    check_unit_norm(psi, "fluctuation_force")?;
    if psi.n != h.n {
        return Err(QcError::ShapeError(format!(
            "fluctuation_force of an n={} spinor with an n={} Hamiltonian",
            psi.n, h.n
        )));
    }
    let gh = h.grad_h();
    let mut out = [
        MatrixField::zeros(h.grid, h.n),
        MatrixField::zeros(h.grid, h.n),
        MatrixField::zeros(h.grid, h.n),
    ];
    for ax in 0..3 {
        for cell in 0..h.grid.len() {
            fluctuation_kernel(h.n, psi.sp(cell), gh[ax].mat(cell), out[ax].mat_mut(cell));
        }
    }
    Ok(out)
}
