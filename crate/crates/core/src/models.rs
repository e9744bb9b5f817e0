//! Hybrid quantum–classical fluid models: the shared Hamiltonian, state
//! containers, and right-hand-side assembly for the 3D equations, their
//! stress-tensor form, the planar variants and the Ehrenfest baseline.
//!
//! All spatial structure enters through first-order gradient stencils;
//! composite objects (stress divergence, Poisson projection) reuse those
//! first-derivative building blocks, never a second-derivative stencil.

use std::cell::OnceCell;

use serde::{Deserialize, Serialize};

use crate::brackets::{
    berry_kernel, fluctuation_kernel, mead_connection_with_grad, nambu_matrix_into, nambu_scalar,
    nambu_sm_into, planar_matrix_into, stress_tensor_with_grad, von_neumann_with_grad,
};
use crate::error::{QcError, Result};
use crate::fields::{deriv_flat, div_h, HermitianField, MatrixField, ScalarField, SpinorField, VectorField};
use crate::grid::Grid;
use crate::hermitian::{
    commutator_into, fro_norm, inner_im, inner_re, matbuf, matmul, matmul_acc, matvec, Matrix,
    MAX_N,
};
use crate::poisson::poisson_solve_fd4;
use crate::C64;

// ---------------------------------------------------------------------------
// equation of state

/// Barotropic closure of the classical sector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum EquationOfState {
    /// Pressureless fluid.
    None,
    /// p = κ Dᵞ with internal energy ℰ(D) = κ D^(γ−1)/(γ−1).
    Polytropic { kappa: f64, gamma: f64 },
}

impl EquationOfState {
    pub fn validate(&self) -> Result<()> {
        if let EquationOfState::Polytropic { kappa, gamma } = *self {
            if !kappa.is_finite() || kappa < 0.0 {
                return Err(QcError::UnsupportedModel(format!(
                    "polytropic eos needs kappa >= 0, got {kappa}"
                )));
            }
            if !gamma.is_finite() || gamma <= 1.0 {
                return Err(QcError::UnsupportedModel(format!(
                    "polytropic eos needs gamma > 1, got {gamma}"
                )));
            }
        }
        Ok(())
    }

    pub fn is_none(&self) -> bool {
        matches!(self, EquationOfState::None)
    }

    /// p(D) at one point.
    pub fn pressure_val(&self, d: f64) -> f64 {
        match *self {
            EquationOfState::None => 0.0,
            EquationOfState::Polytropic { kappa, gamma } => {
                // γ = 2 is the common preset; skip the powf there
                if gamma == 2.0 {
                    kappa * d * d
                } else {
                    kappa * d.powf(gamma)
                }
            }
        }
    }

    /// Specific internal energy ℰ(D); the energy functional integrates D·ℰ(D).
    pub fn internal_energy(&self, d: f64) -> f64 {
        match *self {
            EquationOfState::None => 0.0,
            EquationOfState::Polytropic { kappa, gamma } => {
                kappa * d.powf(gamma - 1.0) / (gamma - 1.0)
            }
        }
    }

    /// Squared sound speed c_s² = κ γ D^(γ−1), for CFL control.
    pub fn sound_speed_sq(&self, d: f64) -> f64 {
        match *self {
            EquationOfState::None => 0.0,
            EquationOfState::Polytropic { kappa, gamma } => {
                kappa * gamma * d.powf(gamma - 1.0)
            }
        }
    }
}

/// Pressure field p = κ Dᵞ; the pressureless closure yields the zero field.
pub fn pressure(d: &ScalarField, eos: &EquationOfState) -> Result<ScalarField> {
    if eos.is_none() {
        return Ok(ScalarField::zeros(d.grid));
    }
    check_positive(d)?;
    let mut p = ScalarField::zeros(d.grid);
    for (o, &v) in p.data.iter_mut().zip(&d.data) {
        *o = eos.pressure_val(v);
    }
    Ok(p)
}

// ---------------------------------------------------------------------------
// Hamiltonian

/// One interaction channel V_a(x)·B̂_a.
#[derive(Clone, Debug)]
pub struct Coupling {
    pub v: ScalarField,
    pub b: Matrix,
}

/// Ĥ(x) = V₀(x)𝟙 + Σ_a V_a(x)B̂_a plus the fluid constants M, ħ and the
/// equation of state. The assembled field and its gradient are cached.
#[derive(Clone, Debug)]
pub struct HybridHamiltonian {
    pub mass: f64,
    pub hbar: f64,
    pub v0: ScalarField,
    pub couplings: Vec<Coupling>,
    pub eos: EquationOfState,
    n: usize,
    h_cache: OnceCell<HermitianField>,
    gh_cache: OnceCell<[HermitianField; 3]>,
}

impl HybridHamiltonian {
    pub fn new(
        mass: f64,
        hbar: f64,
        v0: ScalarField,
        n: usize,
        couplings: Vec<Coupling>,
        eos: EquationOfState,
    ) -> Result<HybridHamiltonian> {
        if !(mass > 0.0) || !(hbar > 0.0) {
            return Err(QcError::UnsupportedModel(format!(
                "mass and hbar must be positive, got M = {mass}, hbar = {hbar}"
            )));
        }
        if n == 0 || n > MAX_N {
            return Err(QcError::ShapeError(format!(
                "quantum dimension n = {n} outside 1..={MAX_N}"
            )));
        }
        eos.validate()?;
        for (a, cp) in couplings.iter().enumerate() {
            if cp.b.n != n {
                return Err(QcError::ShapeError(format!(
                    "coupling {a} has a {}x{} matrix, expected {n}x{n}",
                    cp.b.n, cp.b.n
                )));
            }
            if cp.v.grid != v0.grid {
                return Err(QcError::ShapeError(format!(
                    "coupling {a} potential lives on a different grid"
                )));
            }
            let (_, drift) = cp.b.hermitize();
            if drift > 1e-12 * cp.b.fro_norm().max(1.0) {
                return Err(QcError::ShapeError(format!(
                    "coupling {a} matrix is not Hermitian (drift {drift:.3e})"
                )));
            }
        }
        Ok(HybridHamiltonian {
            mass,
            hbar,
            v0,
            couplings,
            eos,
            n,
            h_cache: OnceCell::new(),
            gh_cache: OnceCell::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn grid(&self) -> Grid {
        self.v0.grid
    }

    /// The assembled Ĥ(x) field (cached after the first call).
    pub fn h_field(&self) -> &HermitianField {
        self.h_cache.get_or_init(|| {
            let grid = self.grid();
            let n = self.n;
            let mut h = MatrixField::zeros(grid, n);
            for cell in 0..grid.len() {
                let m = h.mat_mut(cell);
                let v0 = self.v0.data[cell];
                for r in 0..n {
                    m[r * n + r] = C64::new(v0, 0.0);
                }
                for cp in &self.couplings {
                    let w = cp.v.data[cell];
                    for (o, z) in m.iter_mut().zip(&cp.b.data) {
                        *o += z * w;
                    }
                }
            }
            h
        })
    }

    /// Cached per-axis gradient of Ĥ.
    pub fn grad_h(&self) -> &[HermitianField; 3] {
        self.gh_cache.get_or_init(|| self.h_field().grad_h())
    }

    /// The single two-level coupling when it is a pure-dephasing channel
    /// (traceless, B̂² = 𝟙); None otherwise.
    pub fn dephasing_coupling(&self) -> Option<&Coupling> {
        if self.n != 2 || self.couplings.len() != 1 {
            return None;
        }
        let b = &self.couplings[0].b;
        let scale = b.fro_norm().max(1.0);
        if b.trace().norm() > 1e-12 * scale {
            return None;
        }
        let mut sq = matbuf();
        matmul(2, &b.data, &b.data, &mut sq);
        sq[0] -= C64::new(1.0, 0.0);
        sq[3] -= C64::new(1.0, 0.0);
        if fro_norm(&sq[..4]) > 1e-12 * scale * scale {
            return None;
        }
        Some(&self.couplings[0])
    }
}

// ---------------------------------------------------------------------------
// state

/// Quantum sector: a density-matrix field or a pure spinor field.
#[derive(Clone, Debug)]
pub enum QuantumState {
    Density(HermitianField),
    Pure(SpinorField),
}

impl QuantumState {
    pub fn n(&self) -> usize {
        match self {
            QuantumState::Density(r) => r.n,
            QuantumState::Pure(p) => p.n,
        }
    }

    pub fn grid(&self) -> Grid {
        match self {
            QuantumState::Density(r) => r.grid,
            QuantumState::Pure(p) => p.grid,
        }
    }

    pub fn is_pure(&self) -> bool {
        matches!(self, QuantumState::Pure(_))
    }
}

/// The advected bracket scalar b: a stored field, or the exact vertical
/// profile b = βz kept analytically (βz is not periodic, so it cannot live
/// on the grid; the slope form is only consistent for flows with u_z = 0).
#[derive(Clone, Debug)]
pub enum BScalar {
    Field(ScalarField),
    Slope(f64),
}

impl BScalar {
    /// ∇b as a field; the slope form has the constant gradient (0, 0, β).
    pub fn grad(&self, grid: Grid) -> VectorField {
        match self {
            BScalar::Field(b) => b.grad(),
            BScalar::Slope(beta) => {
                let mut g = VectorField::zeros(grid);
                g.data[2].fill(*beta);
                g
            }
        }
    }

    pub fn is_slope(&self) -> bool {
        matches!(self, BScalar::Slope(_))
    }
}

/// Full hybrid state (D, u, quantum sector, b, c).
#[derive(Clone, Debug)]
pub struct HybridState {
    pub d: ScalarField,
    pub u: VectorField,
    pub q: QuantumState,
    pub b: BScalar,
    /// The backreaction scalar; planar models read it as c̃.
    pub c: ScalarField,
}

impl HybridState {
    pub fn grid(&self) -> Grid {
        self.d.grid
    }

    pub fn n(&self) -> usize {
        self.q.n()
    }

    /// Total classical mass ∫D.
    pub fn mass(&self) -> f64 {
        self.d.integrate()
    }

    fn density(&self, what: &str) -> Result<&HermitianField> {
        match &self.q {
            QuantumState::Density(r) => Ok(r),
            QuantumState::Pure(_) => Err(QcError::UnsupportedModel(format!(
                "{what} needs a density-matrix quantum sector"
            ))),
        }
    }

    fn pure(&self, what: &str) -> Result<&SpinorField> {
        match &self.q {
            QuantumState::Pure(p) => Ok(p),
            QuantumState::Density(_) => Err(QcError::RequiresPureState(format!(
                "{what} evolves a spinor; density-matrix states are not supported"
            ))),
        }
    }
}

/// Time derivative of the quantum sector, matching the state representation.
#[derive(Clone, Debug)]
pub enum RhsQ {
    Density(MatrixField),
    Pure(SpinorField),
}

impl RhsQ {
    pub fn density(&self) -> &MatrixField {
        match self {
            RhsQ::Density(m) => m,
            RhsQ::Pure(_) => panic!("rhs holds a spinor derivative"),
        }
    }

    pub fn pure(&self) -> &SpinorField {
        match self {
            RhsQ::Pure(p) => p,
            RhsQ::Density(_) => panic!("rhs holds a density derivative"),
        }
    }
}

/// Assembled right-hand side of one model at a given state.
#[derive(Clone, Debug)]
pub struct Rhs {
    pub dd: ScalarField,
    pub du: VectorField,
    pub dq: RhsQ,
    /// None when b is carried analytically and does not evolve.
    pub db: Option<ScalarField>,
    pub dc: ScalarField,
    /// Number of cells whose D⁻¹ factors were clamped at the vacuum floor.
    pub floor_hits: usize,
}

// ---------------------------------------------------------------------------
// model selection

/// Which equation set `Model::rhs` assembles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Ehrenfest,
    Qc3d,
    Qc3dStressForm,
    QcPlanar,
    QcPlanarIncompressible,
    PureStatePlanar,
}

/// Default relative vacuum floor: D⁻¹ factors clamp D below rel·mean(D).
pub const DEFAULT_D_FLOOR_REL: f64 = 1e-8;

/// A model choice together with its vacuum-floor policy.
#[derive(Clone, Copy, Debug)]
pub struct Model {
    pub kind: ModelKind,
    pub d_floor_rel: f64,
}

impl Model {
    pub fn new(kind: ModelKind) -> Model {
        Model { kind, d_floor_rel: DEFAULT_D_FLOOR_REL }
    }

    /// Assemble the right-hand side of the selected model.
    pub fn rhs(&self, state: &HybridState, ham: &HybridHamiltonian) -> Result<Rhs> {
        check_state_ham(state, ham)?;
        match self.kind {
            ModelKind::Ehrenfest => rhs_ehrenfest_impl(state, ham, self.d_floor_rel),
            ModelKind::Qc3d => rhs_qc3d_impl(state, ham, self.d_floor_rel),
            ModelKind::Qc3dStressForm => rhs_qc3d_stress_impl(state, ham, self.d_floor_rel),
            ModelKind::QcPlanar => rhs_qc_planar_impl(state, ham, self.d_floor_rel),
            ModelKind::QcPlanarIncompressible => {
                rhs_qc_planar_incompressible_impl(state, ham, self.d_floor_rel)
            }
            ModelKind::PureStatePlanar => rhs_pure_state_planar_impl(state, ham, self.d_floor_rel),
        }
    }
}

/// Ehrenfest baseline with the default floor policy.
pub fn rhs_ehrenfest(state: &HybridState, ham: &HybridHamiltonian) -> Result<Rhs> {
    Model::new(ModelKind::Ehrenfest).rhs(state, ham)
}

/// Full 3D hybrid system with the default floor policy.
pub fn rhs_qc3d(state: &HybridState, ham: &HybridHamiltonian) -> Result<Rhs> {
    Model::new(ModelKind::Qc3d).rhs(state, ham)
}

/// Stress-tensor form of the 3D system (same dynamics, independent assembly).
pub fn rhs_qc3d_stress_form(state: &HybridState, ham: &HybridHamiltonian) -> Result<Rhs> {
    Model::new(ModelKind::Qc3dStressForm).rhs(state, ham)
}

/// Planar compressible hybrid system in the c̃ variables.
pub fn rhs_qc_planar(state: &HybridState, ham: &HybridHamiltonian) -> Result<Rhs> {
    Model::new(ModelKind::QcPlanar).rhs(state, ham)
}

/// Planar incompressible pure-state system with spectral projection.
pub fn rhs_qc_planar_incompressible(state: &HybridState, ham: &HybridHamiltonian) -> Result<Rhs> {
    Model::new(ModelKind::QcPlanarIncompressible).rhs(state, ham)
}

/// Planar pure-state system with Berry electromagnetic forces.
pub fn rhs_pure_state_planar(state: &HybridState, ham: &HybridHamiltonian) -> Result<Rhs> {
    Model::new(ModelKind::PureStatePlanar).rhs(state, ham)
}

// ---------------------------------------------------------------------------
// shared assembly pieces

fn check_positive(d: &ScalarField) -> Result<()> {
    for (cell, &v) in d.data.iter().enumerate() {
        if !(v > 0.0) {
            let (i, j, k) = d.grid.cell_of(cell);
            return Err(QcError::VacuumError { value: v, i, j, k });
        }
    }
    Ok(())
}

fn check_state_ham(state: &HybridState, ham: &HybridHamiltonian) -> Result<()> {
    if state.n() != ham.n() {
        return Err(QcError::ShapeError(format!(
            "state has n = {} but Hamiltonian has n = {}",
            state.n(),
            ham.n()
        )));
    }
    let g = state.grid();
    if g != ham.grid() {
        return Err(QcError::ShapeError("state and Hamiltonian grids differ".into()));
    }
    if state.q.grid() != g || state.c.grid != g || state.u.grid != g {
        return Err(QcError::ShapeError("state component grids differ".into()));
    }
    if let BScalar::Field(b) = &state.b {
        if b.grid != g {
            return Err(QcError::ShapeError("b lives on a different grid".into()));
        }
    }
    Ok(())
}

/// Precomputed floored 1/D with activation count.
struct FlooredInverse {
    inv: Vec<f64>,
    hits: usize,
}

fn floored_inverse(d: &ScalarField, rel: f64) -> Result<FlooredInverse> {
    check_positive(d)?;
    let mean = d.data.iter().sum::<f64>() / d.data.len() as f64;
    let d_min = rel * mean;
    let mut hits = 0usize;
    let inv = d
        .data
        .iter()
        .map(|&v| {
            if v < d_min {
                hits += 1;
                1.0 / d_min
            } else {
                1.0 / v
            }
        })
        .collect();
    Ok(FlooredInverse { inv, hits })
}

fn active_axes(grid: Grid) -> &'static [usize] {
    if grid.is_planar() {
        &[0, 1]
    } else {
        &[0, 1, 2]
    }
}

/// u·∇f.
fn advect_scalar(u: &VectorField, f: &ScalarField) -> ScalarField {
    let mut out = ScalarField::zeros(f.grid);
    for &ax in active_axes(f.grid) {
        let df = f.deriv(ax);
        for ((o, &uv), &dv) in out.data.iter_mut().zip(&u.data[ax]).zip(&df.data) {
            *o += uv * dv;
        }
    }
    out
}

/// u·∇v, component-wise.
fn advect_vector(u: &VectorField, v: &VectorField) -> VectorField {
    let mut out = VectorField::zeros(v.grid);
    for comp in 0..3 {
        for &ax in active_axes(v.grid) {
            let d = deriv_flat(&v.grid, &v.data[comp], 1, ax);
            for ((o, &uv), &dv) in out.data[comp].iter_mut().zip(&u.data[ax]).zip(&d) {
                *o += uv * dv;
            }
        }
    }
    out
}

/// u·∇Â entrywise.
fn advect_matrix(u: &VectorField, m: &MatrixField) -> MatrixField {
    let nn = m.n * m.n;
    let mut out = MatrixField::zeros(m.grid, m.n);
    for &ax in active_axes(m.grid) {
        let d = deriv_flat(&m.grid, &m.data, nn, ax);
        for cell in 0..m.grid.len() {
            let uv = u.data[ax][cell];
            let dst = &mut out.data[cell * nn..(cell + 1) * nn];
            let src = &d[cell * nn..(cell + 1) * nn];
            for e in 0..nn {
                dst[e] += src[e] * uv;
            }
        }
    }
    out
}

/// u·∇ψ componentwise.
fn advect_spinor(u: &VectorField, s: &SpinorField) -> SpinorField {
    let n = s.n;
    let mut out = SpinorField::zeros(s.grid, n);
    for &ax in active_axes(s.grid) {
        let d = deriv_flat(&s.grid, &s.data, n, ax);
        for cell in 0..s.grid.len() {
            let uv = u.data[ax][cell];
            let dst = &mut out.data[cell * n..(cell + 1) * n];
            let src = &d[cell * n..(cell + 1) * n];
            for e in 0..n {
                dst[e] += src[e] * uv;
            }
        }
    }
    out
}

/// div(D·u).
fn div_product(d: &ScalarField, u: &VectorField) -> ScalarField {
    let mut f = VectorField::zeros(d.grid);
    for ax in 0..3 {
        for ((o, &dv), &uv) in f.data[ax].iter_mut().zip(&d.data).zip(&u.data[ax]) {
            *o = dv * uv;
        }
    }
    f.div()
}

/// c(x)·Â(x) entrywise.
fn scale_matrix(m: &MatrixField, s: &ScalarField) -> MatrixField {
    let nn = m.n * m.n;
    let mut out = MatrixField::zeros(m.grid, m.n);
    for cell in 0..m.grid.len() {
        let w = s.data[cell];
        let src = &m.data[cell * nn..(cell + 1) * nn];
        let dst = &mut out.data[cell * nn..(cell + 1) * nn];
        for e in 0..nn {
            dst[e] = src[e] * w;
        }
    }
    out
}

/// ⟨ρ̂, ∂_kĤ⟩ per cell and axis.
fn expect_grad_density(rho: &HermitianField, gh: &[HermitianField; 3]) -> VectorField {
    let mut out = VectorField::zeros(rho.grid);
    for &ax in active_axes(rho.grid) {
        for cell in 0..rho.grid.len() {
            out.data[ax][cell] = inner_re(rho.mat(cell), gh[ax].mat(cell));
        }
    }
    out
}

/// ⟨ψ, ∂_kĤ ψ⟩ per cell and axis.
fn expect_grad_pure(psi: &SpinorField, gh: &[HermitianField; 3]) -> VectorField {
    let n = psi.n;
    let mut out = VectorField::zeros(psi.grid);
    let mut tmp = matbuf();
    for &ax in active_axes(psi.grid) {
        for cell in 0..psi.grid.len() {
            let s = psi.sp(cell);
            matvec(n, gh[ax].mat(cell), s, &mut tmp);
            let mut v = 0.0;
            for r in 0..n {
                v += s[r].conj().re * tmp[r].re + s[r].conj().im * tmp[r].im;
            }
            out.data[ax][cell] = v;
        }
    }
    out
}

fn check_unit_norm_model(psi: &SpinorField, tol: f64) -> Result<()> {
    let mut drift = 0.0f64;
    for cell in 0..psi.grid.len() {
        let norm2: f64 = psi.sp(cell).iter().map(|z| z.norm_sqr()).sum();
        drift = drift.max((norm2.sqrt() - 1.0).abs());
    }
    if drift > tol {
        return Err(QcError::UnnormalizedState { drift, tol });
    }
    Ok(())
}

fn require_planar_grid(grid: Grid, what: &str) -> Result<()> {
    if !grid.is_planar() {
        return Err(QcError::UnsupportedOperation(format!("{what} on a 3D grid")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Ehrenfest baseline

fn rhs_ehrenfest_impl(state: &HybridState, ham: &HybridHamiltonian, floor_rel: f64) -> Result<Rhs> {
    let grid = state.grid();
    let fi = floored_inverse(&state.d, floor_rel)?;
    let gh = ham.grad_h();
    let h = ham.h_field();
    let hbar = ham.hbar;
    let inv_m = 1.0 / ham.mass;

    let force = match &state.q {
        QuantumState::Density(rho) => expect_grad_density(rho, gh),
        QuantumState::Pure(psi) => expect_grad_pure(psi, gh),
    };
    let gp = if ham.eos.is_none() {
        None
    } else {
        Some(pressure(&state.d, &ham.eos)?.grad())
    };
    let adv_u = advect_vector(&state.u, &state.u);
    let mut du = VectorField::zeros(grid);
    for ax in 0..3 {
        for cell in 0..grid.len() {
            let mut f = -force.data[ax][cell];
            if let Some(gp) = &gp {
                f -= gp.data[ax][cell] * fi.inv[cell];
            }
            du.data[ax][cell] = f * inv_m - adv_u.data[ax][cell];
        }
    }

    let dq = match &state.q {
        QuantumState::Density(rho) => {
            let mut drho = advect_matrix(&state.u, rho);
            let n = rho.n;
            let nn = n * n;
            let mut comm = matbuf();
            let scale = C64::new(0.0, -1.0 / hbar);
            for cell in 0..grid.len() {
                commutator_into(n, h.mat(cell), rho.mat(cell), &mut comm);
                let dst = &mut drho.data[cell * nn..(cell + 1) * nn];
                for e in 0..nn {
                    dst[e] = comm[e] * scale - dst[e];
                }
            }
            RhsQ::Density(drho)
        }
        QuantumState::Pure(psi) => {
            let mut dpsi = advect_spinor(&state.u, psi);
            let n = psi.n;
            let mut hp = matbuf();
            let scale = C64::new(0.0, -1.0 / hbar);
            for cell in 0..grid.len() {
                matvec(n, h.mat(cell), psi.sp(cell), &mut hp);
                let dst = &mut dpsi.data[cell * n..(cell + 1) * n];
                for e in 0..n {
                    dst[e] = hp[e] * scale - dst[e];
                }
            }
            RhsQ::Pure(dpsi)
        }
    };

    let db = match &state.b {
        BScalar::Field(b) => {
            let mut a = advect_scalar(&state.u, b);
            for v in a.data.iter_mut() {
                *v = -*v;
            }
            Some(a)
        }
        BScalar::Slope(_) => None,
    };
    let mut dc = advect_scalar(&state.u, &state.c);
    for v in dc.data.iter_mut() {
        *v = -*v;
    }
    let mut dd = div_product(&state.d, &state.u);
    for v in dd.data.iter_mut() {
        *v = -*v;
    }
    Ok(Rhs { dd, du, dq, db, dc, floor_hits: fi.hits })
}

// ---------------------------------------------------------------------------
// full 3D hybrid system

fn rhs_qc3d_impl(state: &HybridState, ham: &HybridHamiltonian, floor_rel: f64) -> Result<Rhs> {
    let rho = state.density("rhs_qc3d")?;
    let grid = state.grid();
    let n = rho.n;
    let nn = n * n;
    let len = grid.len();
    let fi = floored_inverse(&state.d, floor_rel)?;
    let h = ham.h_field();
    let gh = ham.grad_h();
    let hbar = ham.hbar;
    let slope_b = state.b.is_slope();

    let grho = rho.grad_h();
    let gb = state.b.grad(grid);
    let gc = state.c.grad();
    let crho = scale_matrix(rho, &state.c);
    let gcrho = crho.grad_h();
    drop(crho);

    let mut drho = MatrixField::zeros(grid, n);
    // ħ·(⟨∇(cρ̂), i{ρ̂,Ĥ}_b⟩ + ⟨∇ρ̂, i{cρ̂,Ĥ}_b⟩) accumulated per axis
    let mut f23 = VectorField::zeros(grid);
    // ⟨cρ̂, i∇ρ̂×∇Ĥ⟩ whose divergence feeds the −ħ div(…)∇b force
    let mut vflux = VectorField::zeros(grid);

    let mut q = matbuf();
    let mut qc = matbuf();
    let mut sc = matbuf();
    let mut g = matbuf();
    let mut tmp = matbuf();
    let mut w = matbuf();
    let scale_h = C64::new(0.0, -1.0 / hbar);

    for cell in 0..len {
        let gbv = [gb.data[0][cell], gb.data[1][cell], gb.data[2][cell]];
        let gcv = [gc.data[0][cell], gc.data[1][cell], gc.data[2][cell]];
        let rm = rho.mat(cell);
        let grf = [grho[0].mat(cell), grho[1].mat(cell), grho[2].mat(cell)];
        let gcf = [gcrho[0].mat(cell), gcrho[1].mat(cell), gcrho[2].mat(cell)];
        let ghf = [gh[0].mat(cell), gh[1].mat(cell), gh[2].mat(cell)];
        let cv = state.c.data[cell];

        nambu_matrix_into(n, gbv, grf, ghf, &mut q); // {ρ̂,Ĥ}_b
        nambu_matrix_into(n, gbv, gcf, ghf, &mut qc); // {cρ̂,Ĥ}_b
        nambu_sm_into(n, gbv, gcv, ghf, &mut sc); // {c,Ĥ}_b

        // G = c(Q − Q†) − ½[{c,Ĥ}_b, ρ̂]; {Ĥ,ρ̂}_b = −Q† by the dagger identity
        commutator_into(n, &sc[..nn], rm, &mut tmp);
        for r in 0..n {
            for cidx in 0..n {
                let e = r * n + cidx;
                let qd = q[cidx * n + r].conj();
                g[e] = (q[e] - qd) * cv - tmp[e] * 0.5;
            }
        }

        // dρ̂ = [Ĥ,ρ̂]/(iħ) + [G,ρ̂]/D − u·∇ρ̂
        commutator_into(n, h.mat(cell), rm, &mut tmp);
        commutator_into(n, &g[..nn], rm, &mut w);
        let inv_d = fi.inv[cell];
        let uv = [state.u.data[0][cell], state.u.data[1][cell], state.u.data[2][cell]];
        let dst = &mut drho.data[cell * nn..(cell + 1) * nn];
        for e in 0..nn {
            let adv = grf[0][e] * uv[0] + grf[1][e] * uv[1] + grf[2][e] * uv[2];
            dst[e] = tmp[e] * scale_h + w[e] * inv_d - adv;
        }

        // momentum pairings: +ħ⟨∂_k(cρ̂), iQ⟩ + ħ⟨∂_kρ̂, iQc⟩ = −ħ(Im Tr(…))
        for ax in 0..3 {
            f23.data[ax][cell] =
                -hbar * (inner_im(gcf[ax], &q[..nn]) + inner_im(grf[ax], &qc[..nn]));
        }

        // V_i = ⟨cρ̂, i(∇ρ̂×∇Ĥ)_i⟩; skipped for slope b, where the resulting
        // −ħ div(V)∇b force is purely vertical and is the dropped one
        if !slope_b {
            for (i, j, k) in [(0usize, 1usize, 2usize), (1, 2, 0), (2, 0, 1)] {
                for z in w[..nn].iter_mut() {
                    *z = C64::new(0.0, 0.0);
                }
                matmul_acc(n, grf[j], ghf[k], 1.0, &mut w);
                matmul_acc(n, grf[k], ghf[j], -1.0, &mut w);
                vflux.data[i][cell] = -cv * inner_im(rm, &w[..nn]);
            }
        }
    }
    drop(gcrho);

    // momentum: MD(∂ₜ+u·∇)u = −∇p − D⟨ρ̂,∇Ĥ⟩ + f23 − ħ div(V)∇b
    let exg = expect_grad_density(rho, gh);
    let gp = if ham.eos.is_none() {
        None
    } else {
        Some(pressure(&state.d, &ham.eos)?.grad())
    };
    let divv = if slope_b { None } else { Some(vflux.div()) };
    let adv_u = advect_vector(&state.u, &state.u);
    let inv_m = 1.0 / ham.mass;
    let mut du = VectorField::zeros(grid);
    for ax in 0..3 {
        for cell in 0..len {
            let mut f = f23.data[ax][cell] - state.d.data[cell] * exg.data[ax][cell];
            if let Some(gp) = &gp {
                f -= gp.data[ax][cell];
            }
            if let Some(divv) = &divv {
                f -= hbar * divv.data[cell] * gb.data[ax][cell];
            }
            du.data[ax][cell] = f * fi.inv[cell] * inv_m - adv_u.data[ax][cell];
        }
    }

    let db = match &state.b {
        BScalar::Field(b) => {
            let mut a = advect_scalar(&state.u, b);
            for v in a.data.iter_mut() {
                *v = -*v;
            }
            Some(a)
        }
        BScalar::Slope(_) => None,
    };
    let mut dc = advect_scalar(&state.u, &state.c);
    for v in dc.data.iter_mut() {
        *v = -*v;
    }
    let mut dd = div_product(&state.d, &state.u);
    for v in dd.data.iter_mut() {
        *v = -*v;
    }
    Ok(Rhs { dd, du, dq: RhsQ::Density(drho), db, dc, floor_hits: fi.hits })
}

// ---------------------------------------------------------------------------
// stress-tensor form of the 3D system

fn rhs_qc3d_stress_impl(state: &HybridState, ham: &HybridHamiltonian, floor_rel: f64) -> Result<Rhs> {
    let rho = state.density("rhs_qc3d_stress_form")?;
    let grid = state.grid();
    let n = rho.n;
    let nn = n * n;
    let len = grid.len();
    let fi = floored_inverse(&state.d, floor_rel)?;
    let h = ham.h_field();
    let gh = ham.grad_h();
    let hbar = ham.hbar;
    let slope_b = state.b.is_slope();

    let grho = rho.grad_h();
    let gb = state.b.grad(grid);
    let gamma = mead_connection_with_grad(rho, &grho, hbar);
    let dhat = von_neumann_with_grad(&state.d, rho, &gamma, &gb, &state.c);

    // quantum flux X_i = c(∇b×M̂)_i with M̂_k = [Ĥ,Γ̂_k] + (iħ/2)[ρ̂,[ρ̂,∂_kĤ]]
    let mut xflux = [
        MatrixField::zeros(grid, n),
        MatrixField::zeros(grid, n),
        MatrixField::zeros(grid, n),
    ];
    {
        let mut m = [matbuf(), matbuf(), matbuf()];
        let mut tmp = matbuf();
        let ihalf = C64::new(0.0, 0.5 * hbar);
        for cell in 0..len {
            let rm = rho.mat(cell);
            let cv = state.c.data[cell];
            let gbv = [gb.data[0][cell], gb.data[1][cell], gb.data[2][cell]];
            for k in 0..3 {
                commutator_into(n, h.mat(cell), gamma.comp[k].mat(cell), &mut m[k]);
                commutator_into(n, rm, gh[k].mat(cell), &mut tmp);
                let mut tmp2 = matbuf();
                commutator_into(n, rm, &tmp[..nn], &mut tmp2);
                for e in 0..nn {
                    m[k][e] += tmp2[e] * ihalf;
                }
            }
            for (i, j, k) in [(0usize, 1usize, 2usize), (1, 2, 0), (2, 0, 1)] {
                let dst = &mut xflux[i].data[cell * nn..(cell + 1) * nn];
                for e in 0..nn {
                    dst[e] = (m[k][e] * gbv[j] - m[j][e] * gbv[k]) * cv;
                }
            }
        }
    }
    let divx = div_h(&xflux);
    drop(xflux);

    // dρ̂ = ([Ĥ,𝒟̂] + div X)/(iħD) − u·∇ρ̂
    let mut drho = MatrixField::zeros(grid, n);
    {
        let mut comm = matbuf();
        for cell in 0..len {
            commutator_into(n, h.mat(cell), dhat.mat(cell), &mut comm);
            let scale = C64::new(0.0, -fi.inv[cell] / hbar);
            let uv = [state.u.data[0][cell], state.u.data[1][cell], state.u.data[2][cell]];
            let grf = [grho[0].mat(cell), grho[1].mat(cell), grho[2].mat(cell)];
            let dx = divx.mat(cell);
            let dst = &mut drho.data[cell * nn..(cell + 1) * nn];
            for e in 0..nn {
                let adv = grf[0][e] * uv[0] + grf[1][e] * uv[1] + grf[2][e] * uv[2];
                dst[e] = (comm[e] + dx[e]) * scale - adv;
            }
        }
    }
    drop(divx);
    drop(grho);

    // momentum: MD(∂ₜ+u·∇)u = −⟨𝒟̂,∇Ĥ⟩ − div T (pressure sits inside T)
    let p = pressure(&state.d, &ham.eos)?;
    let t = stress_tensor_with_grad(&p, &state.c, &gb, &gamma, gh);
    drop(gamma);
    let mut divt = VectorField::zeros(grid);
    {
        let mut comp_iter = t.comp.into_iter();
        for j in 0..3 {
            let row = VectorField {
                grid,
                data: [
                    comp_iter.next().unwrap(),
                    comp_iter.next().unwrap(),
                    comp_iter.next().unwrap(),
                ],
            };
            divt.data[j] = row.div().data;
        }
    }
    let adv_u = advect_vector(&state.u, &state.u);
    let inv_m = 1.0 / ham.mass;
    let mut du = VectorField::zeros(grid);
    for ax in 0..3 {
        for cell in 0..len {
            let mut f = -inner_re(dhat.mat(cell), gh[ax].mat(cell)) - divt.data[ax][cell];
            f *= fi.inv[cell] * inv_m;
            du.data[ax][cell] = f - adv_u.data[ax][cell];
        }
        if slope_b && ax == 2 {
            // the vertical force is the one dropped in the slope embedding
            du.data[2].fill(0.0);
        }
    }

    let db = match &state.b {
        BScalar::Field(b) => {
            let mut a = advect_scalar(&state.u, b);
            for v in a.data.iter_mut() {
                *v = -*v;
            }
            Some(a)
        }
        BScalar::Slope(_) => None,
    };
    let mut dc = advect_scalar(&state.u, &state.c);
    for v in dc.data.iter_mut() {
        *v = -*v;
    }
    let mut dd = div_product(&state.d, &state.u);
    for v in dd.data.iter_mut() {
        *v = -*v;
    }
    Ok(Rhs { dd, du, dq: RhsQ::Density(drho), db, dc, floor_hits: fi.hits })
}

// ---------------------------------------------------------------------------
// planar compressible hybrid system

fn rhs_qc_planar_impl(state: &HybridState, ham: &HybridHamiltonian, floor_rel: f64) -> Result<Rhs> {
    require_planar_grid(state.grid(), "rhs_qc_planar")?;
    let rho = state.density("rhs_qc_planar")?;
    let grid = state.grid();
    let n = rho.n;
    let nn = n * n;
    let len = grid.len();
    let fi = floored_inverse(&state.d, floor_rel)?;
    let h = ham.h_field();
    let gh = ham.grad_h();
    let hbar = ham.hbar;
    let ct = &state.c; // read as c̃ on planar grids

    let grx = rho.deriv(0);
    let gry = rho.deriv(1);
    let gct = ct.grad();
    let ctrho = scale_matrix(rho, ct);
    let gcx = ctrho.deriv(0);
    let gcy = ctrho.deriv(1);
    drop(ctrho);

    let mut drho = MatrixField::zeros(grid, n);
    let mut f23 = VectorField::zeros(grid);

    let mut q = matbuf();
    let mut qc = matbuf();
    let mut g = matbuf();
    let mut tmp = matbuf();
    let mut w = matbuf();
    let scale_h = C64::new(0.0, -1.0 / hbar);

    for cell in 0..len {
        let rm = rho.mat(cell);
        let (hx, hy) = (gh[0].mat(cell), gh[1].mat(cell));
        let (rx, ry) = (grx.mat(cell), gry.mat(cell));
        planar_matrix_into(n, rx, ry, hx, hy, &mut q); // {ρ̂,Ĥ}
        planar_matrix_into(n, gcx.mat(cell), gcy.mat(cell), hx, hy, &mut qc); // {c̃ρ̂,Ĥ}

        // {c̃,Ĥ} = ∂ₓc̃·∂_yĤ − ∂_yc̃·∂ₓĤ (scalar–matrix, no products)
        let (cx, cy) = (gct.data[0][cell], gct.data[1][cell]);
        for e in 0..nn {
            w[e] = hy[e] * cx - hx[e] * cy;
        }
        commutator_into(n, &w[..nn], rm, &mut tmp);
        let cv = ct.data[cell];
        for r in 0..n {
            for cidx in 0..n {
                let e = r * n + cidx;
                let qd = q[cidx * n + r].conj();
                g[e] = (q[e] - qd) * cv - tmp[e] * 0.5;
            }
        }

        commutator_into(n, h.mat(cell), rm, &mut tmp);
        commutator_into(n, &g[..nn], rm, &mut w);
        let inv_d = fi.inv[cell];
        let (ux, uy) = (state.u.data[0][cell], state.u.data[1][cell]);
        let dst = &mut drho.data[cell * nn..(cell + 1) * nn];
        for e in 0..nn {
            let adv = rx[e] * ux + ry[e] * uy;
            dst[e] = tmp[e] * scale_h + w[e] * inv_d - adv;
        }

        f23.data[0][cell] = -hbar * (inner_im(gcx.mat(cell), &q[..nn]) + inner_im(rx, &qc[..nn]));
        f23.data[1][cell] = -hbar * (inner_im(gcy.mat(cell), &q[..nn]) + inner_im(ry, &qc[..nn]));
    }

    let exg = expect_grad_density(rho, gh);
    let gp = if ham.eos.is_none() {
        None
    } else {
        Some(pressure(&state.d, &ham.eos)?.grad())
    };
    let adv_u = advect_vector(&state.u, &state.u);
    let inv_m = 1.0 / ham.mass;
    let mut du = VectorField::zeros(grid);
    for ax in 0..2 {
        for cell in 0..len {
            let mut f = f23.data[ax][cell] - state.d.data[cell] * exg.data[ax][cell];
            if let Some(gp) = &gp {
                f -= gp.data[ax][cell];
            }
            du.data[ax][cell] = f * fi.inv[cell] * inv_m - adv_u.data[ax][cell];
        }
    }

    let db = match &state.b {
        BScalar::Field(b) => {
            let mut a = advect_scalar(&state.u, b);
            for v in a.data.iter_mut() {
                *v = -*v;
            }
            Some(a)
        }
        BScalar::Slope(_) => None,
    };
    let mut dc = advect_scalar(&state.u, ct);
    for v in dc.data.iter_mut() {
        *v = -*v;
    }
    let mut dd = div_product(&state.d, &state.u);
    for v in dd.data.iter_mut() {
        *v = -*v;
    }
    Ok(Rhs { dd, du, dq: RhsQ::Density(drho), db, dc, floor_hits: fi.hits })
}

// ---------------------------------------------------------------------------
// planar pure-state systems

/// Shared planar pure-state quantum step: given the weight field λ(x) and the
/// log-field ℓ(x), assemble dψ = −u·∇ψ − (i/ħ)Ĥψ + λ({R,Ĥ}+{Ĥ,R}−½[{ℓ,Ĥ},R])ψ
/// together with the Berry data (E, B) and the fluctuation pairing S.
struct PurePlanarParts {
    dpsi: SpinorField,
    e_field: VectorField,
    b_field: ScalarField,
    s_field: ScalarField,
}

fn pure_planar_parts(
    state: &HybridState,
    ham: &HybridHamiltonian,
    lambda: &[f64],
    ell: &ScalarField,
) -> PurePlanarParts {
    let psi = match &state.q {
        QuantumState::Pure(p) => p,
        QuantumState::Density(_) => unreachable!("callers check purity"),
    };
    let grid = state.grid();
    let n = psi.n;
    let nn = n * n;
    let len = grid.len();
    let h = ham.h_field();
    let gh = ham.grad_h();
    let hbar = ham.hbar;

    let gpx = psi.deriv(0);
    let gpy = psi.deriv(1);
    let gell = ell.grad();

    // R = ψψ† and its gradients feed the matrix brackets
    let rfield = crate::synth::density_of(psi);
    let grx = rfield.deriv(0);
    let gry = rfield.deriv(1);

    let mut dpsi = SpinorField::zeros(grid, n);
    let mut s_field = ScalarField::zeros(grid);
    let mut b_field = ScalarField::zeros(grid);

    let mut q = matbuf();
    let mut g = matbuf();
    let mut tmp = matbuf();
    let mut w = matbuf();
    let mut hp = matbuf();
    let mut gp2 = matbuf();
    let scale_h = C64::new(0.0, -1.0 / hbar);

    for cell in 0..len {
        let s = psi.sp(cell);
        let rm = rfield.mat(cell);
        let (hx, hy) = (gh[0].mat(cell), gh[1].mat(cell));
        let (px, py) = (gpx.sp(cell), gpy.sp(cell));

        planar_matrix_into(n, grx.mat(cell), gry.mat(cell), hx, hy, &mut q); // {R,Ĥ}
        let (lx, ly) = (gell.data[0][cell], gell.data[1][cell]);
        for e in 0..nn {
            w[e] = hy[e] * lx - hx[e] * ly; // {ℓ,Ĥ}
        }
        commutator_into(n, &w[..nn], rm, &mut tmp);
        for r in 0..n {
            for cidx in 0..n {
                let e = r * n + cidx;
                let qd = q[cidx * n + r].conj();
                g[e] = (q[e] - qd) - tmp[e] * 0.5; // {R,Ĥ}+{Ĥ,R} − ½[{ℓ,Ĥ},R]
            }
        }

        matvec(n, h.mat(cell), s, &mut hp);
        matvec(n, &g[..nn], s, &mut gp2);
        let lam = lambda[cell];
        let (ux, uy) = (state.u.data[0][cell], state.u.data[1][cell]);
        let dst = &mut dpsi.data[cell * n..(cell + 1) * n];
        for e in 0..n {
            dst[e] = hp[e] * scale_h + gp2[e] * lam - (px[e] * ux + py[e] * uy);
        }

        // B = ħ Im{ψ†,ψ} = 2ħ Σ_a Im(conj(∂ₓψ_a)·∂_yψ_a)
        let mut bim = 0.0;
        for a in 0..n {
            bim += px[a].conj().re * py[a].im + px[a].conj().im * py[a].re;
        }
        b_field.data[cell] = 2.0 * hbar * bim;

        // S = ⟨ψ, iħ e₃·(F̃×∇ψ)⟩ = −ħ Im(ψ†(F̃ₓ∂_yψ − F̃_y∂ₓψ))
        fluctuation_kernel(n, s, hx, &mut w);
        matvec(n, &w[..nn], py, &mut hp);
        fluctuation_kernel(n, s, hy, &mut w);
        matvec(n, &w[..nn], px, &mut gp2);
        let mut sim = 0.0;
        for a in 0..n {
            let z = hp[a] - gp2[a];
            sim += s[a].re * z.im - s[a].im * z.re;
        }
        s_field.data[cell] = -hbar * sim;
    }

    // E = −∂ₜA − ∇⟨ψ, iħ∂ₜψ⟩, built from dψ
    let gdx = dpsi.deriv(0);
    let gdy = dpsi.deriv(1);
    let mut adot = VectorField::zeros(grid);
    let mut phidot = ScalarField::zeros(grid);
    for cell in 0..len {
        let s = psi.sp(cell);
        let ds = dpsi.sp(cell);
        adot.data[0][cell] =
            berry_kernel(hbar, ds, gpx.sp(cell)) + berry_kernel(hbar, s, gdx.sp(cell));
        adot.data[1][cell] =
            berry_kernel(hbar, ds, gpy.sp(cell)) + berry_kernel(hbar, s, gdy.sp(cell));
        let mut im = 0.0;
        for a in 0..psi.n {
            im += s[a].re * ds[a].im - s[a].im * ds[a].re;
        }
        phidot.data[cell] = -hbar * im;
    }
    let gphi = phidot.grad();
    let mut e_field = VectorField::zeros(grid);
    for ax in 0..2 {
        for cell in 0..len {
            e_field.data[ax][cell] = -adot.data[ax][cell] - gphi.data[ax][cell];
        }
    }
    PurePlanarParts { dpsi, e_field, b_field, s_field }
}

fn rhs_pure_state_planar_impl(
    state: &HybridState,
    ham: &HybridHamiltonian,
    floor_rel: f64,
) -> Result<Rhs> {
    require_planar_grid(state.grid(), "rhs_pure_state_planar")?;
    let psi = state.pure("rhs_pure_state_planar")?;
    check_unit_norm_model(psi, 1e-6)?;
    let grid = state.grid();
    let len = grid.len();
    let fi = floored_inverse(&state.d, floor_rel)?;
    let ct = &state.c; // c̃

    // ℓ = ln c̃ demands positivity
    let mut lnc = ScalarField::zeros(grid);
    for (cell, &v) in ct.data.iter().enumerate() {
        if !(v > 0.0) {
            let (i, j, k) = grid.cell_of(cell);
            return Err(QcError::LogDomainError { value: v, i, j, k });
        }
        lnc.data[cell] = v.ln();
    }
    let lambda: Vec<f64> = (0..len).map(|cell| ct.data[cell] * fi.inv[cell]).collect();
    let parts = pure_planar_parts(state, ham, &lambda, &lnc);

    // momentum: M(∂ₜ+v·∇)v = −E − B v×e₃ − ∇p/D − ∇⟨Ĥ⟩ + S∇c̃/D
    let eh = expect_field_pure(psi, ham);
    let geh = eh.grad();
    let gct = ct.grad();
    let gp = if ham.eos.is_none() {
        None
    } else {
        Some(pressure(&state.d, &ham.eos)?.grad())
    };
    let adv_u = advect_vector(&state.u, &state.u);
    let inv_m = 1.0 / ham.mass;
    let mut du = VectorField::zeros(grid);
    for cell in 0..len {
        let (ux, uy) = (state.u.data[0][cell], state.u.data[1][cell]);
        let bv = parts.b_field.data[cell];
        let sv = parts.s_field.data[cell];
        let inv_d = fi.inv[cell];
        // −B v×e₃ = (−B u_y, B u_x, 0)
        let lorentz = [-bv * uy, bv * ux];
        for ax in 0..2 {
            let mut f = -parts.e_field.data[ax][cell] + lorentz[ax]
                - geh.data[ax][cell]
                + sv * gct.data[ax][cell] * inv_d;
            if let Some(gp) = &gp {
                f -= gp.data[ax][cell] * inv_d;
            }
            du.data[ax][cell] = f * inv_m - adv_u.data[ax][cell];
        }
    }

    let db = match &state.b {
        BScalar::Field(b) => {
            let mut a = advect_scalar(&state.u, b);
            for v in a.data.iter_mut() {
                *v = -*v;
            }
            Some(a)
        }
        BScalar::Slope(_) => None,
    };
    let mut dc = advect_scalar(&state.u, ct);
    for v in dc.data.iter_mut() {
        *v = -*v;
    }
    let mut dd = div_product(&state.d, &state.u);
    for v in dd.data.iter_mut() {
        *v = -*v;
    }
    Ok(Rhs { dd, du, dq: RhsQ::Pure(parts.dpsi), db, dc, floor_hits: fi.hits })
}

fn rhs_qc_planar_incompressible_impl(
    state: &HybridState,
    ham: &HybridHamiltonian,
    floor_rel: f64,
) -> Result<Rhs> {
    require_planar_grid(state.grid(), "rhs_qc_planar_incompressible")?;
    let psi = state.pure("rhs_qc_planar_incompressible")?;
    check_unit_norm_model(psi, 1e-6)?;
    let grid = state.grid();
    let len = grid.len();
    let beta = match &state.b {
        BScalar::Slope(beta) => *beta,
        BScalar::Field(_) => {
            return Err(QcError::UnsupportedModel(
                "the incompressible planar model reads β from the analytic slope slot".into(),
            ))
        }
    };
    // incoming velocity must already be solenoidal
    let divu = state.u.div().max_norm();
    let utol = 1e-8 * (1.0 + state.u.max_norm());
    if divu > utol {
        return Err(QcError::UnsupportedOperation(format!(
            "rhs_qc_planar_incompressible needs div u = 0 on entry (measured {divu:.3e})"
        )));
    }
    check_positive(&state.d)?;
    let _ = floor_rel; // no D⁻¹ factors here: β replaces c̃/D and p is a multiplier

    // ℓ = ln D
    let mut lnd = ScalarField::zeros(grid);
    for (cell, &v) in state.d.data.iter().enumerate() {
        lnd.data[cell] = v.ln();
    }
    let glnd = lnd.grad();
    let lambda = vec![beta; len];
    let parts = pure_planar_parts(state, ham, &lambda, &lnd);

    // unconstrained acceleration, then the exact discrete projection
    let adv_u = advect_vector(&state.u, &state.u);
    let inv_m = 1.0 / ham.mass;
    let mut acc = VectorField::zeros(grid);
    for cell in 0..len {
        let (ux, uy) = (state.u.data[0][cell], state.u.data[1][cell]);
        let bv = parts.b_field.data[cell];
        let sv = parts.s_field.data[cell];
        let lorentz = [-bv * uy, bv * ux];
        for ax in 0..2 {
            let f = -parts.e_field.data[ax][cell] + lorentz[ax]
                + beta * sv * glnd.data[ax][cell];
            acc.data[ax][cell] = f * inv_m - adv_u.data[ax][cell];
        }
    }
    let phi = poisson_solve_fd4(&acc.div());
    let gphi = phi.grad();
    let mut du = VectorField::zeros(grid);
    for ax in 0..2 {
        for cell in 0..len {
            du.data[ax][cell] = acc.data[ax][cell] - gphi.data[ax][cell];
        }
    }

    // D is advected as a scalar; c̃ = βD is derived, not stored
    let mut dd = advect_scalar(&state.u, &state.d);
    for v in dd.data.iter_mut() {
        *v = -*v;
    }
    Ok(Rhs {
        dd,
        du,
        dq: RhsQ::Pure(parts.dpsi),
        db: None,
        dc: ScalarField::zeros(grid),
        floor_hits: 0,
    })
}

/// ⟨ψ, Ĥψ⟩ as a scalar field.
fn expect_field_pure(psi: &SpinorField, ham: &HybridHamiltonian) -> ScalarField {
    let h = ham.h_field();
    let n = psi.n;
    let mut out = ScalarField::zeros(psi.grid);
    let mut tmp = matbuf();
    for cell in 0..psi.grid.len() {
        let s = psi.sp(cell);
        matvec(n, h.mat(cell), s, &mut tmp);
        let mut v = 0.0;
        for r in 0..n {
            v += s[r].re * tmp[r].re + s[r].im * tmp[r].im;
        }
        out.data[cell] = v;
    }
    out
}

// ---------------------------------------------------------------------------
// pure-dephasing local law

/// Residual of the local dephasing transport law
/// D(∂ₜ+u·∇)⟨σ̂⟩ = {V_I, c(1−⟨σ̂⟩²)}_b (planar states use the c̃ bracket).
/// The law holds for pointwise-pure states under the hybrid dynamics, so the
/// residual must shrink at the stencil order on refinement.
pub fn dephasing_local_law_residual(
    state: &HybridState,
    ham: &HybridHamiltonian,
) -> Result<ScalarField> {
    check_state_ham(state, ham)?;
    let cp = ham
        .dephasing_coupling()
        .ok_or_else(|| {
            QcError::UnsupportedModel(
                "the dephasing law needs a single traceless two-level coupling with B̂² = 𝟙".into(),
            )
        })?;
    let rho = state.density("dephasing_local_law_residual")?;
    // the law is derived for pointwise-pure density matrices
    let n = rho.n;
    let mut purity = 0.0f64;
    let mut sq = matbuf();
    for cell in 0..rho.grid.len() {
        let m = rho.mat(cell);
        matmul(n, m, m, &mut sq);
        for e in 0..n * n {
            sq[e] -= m[e];
        }
        purity = purity.max(fro_norm(&sq[..n * n]));
    }
    if purity > 1e-6 {
        return Err(QcError::RequiresPureState(format!(
            "dephasing law needs pointwise-pure states, found purity drift {purity:.3e}"
        )));
    }

    let grid = state.grid();
    let rhs = if grid.is_planar() {
        rhs_qc_planar(state, ham)?
    } else {
        rhs_qc3d(state, ham)?
    };
    let drho = rhs.dq.density();

    // ⟨σ̂⟩ and its material derivative scaled by D
    let mut sigma = ScalarField::zeros(grid);
    for cell in 0..grid.len() {
        sigma.data[cell] = inner_re(&cp.b.data, rho.mat(cell));
    }
    let adv_sigma = advect_scalar(&state.u, &sigma);
    let mut lhs = ScalarField::zeros(grid);
    for cell in 0..grid.len() {
        lhs.data[cell] = state.d.data[cell]
            * (inner_re(&cp.b.data, drho.mat(cell)) + adv_sigma.data[cell]);
    }

    // bracket side {V_I, c(1−⟨σ̂⟩²)}
    let mut x = ScalarField::zeros(grid);
    for cell in 0..grid.len() {
        let s = sigma.data[cell];
        x.data[cell] = state.c.data[cell] * (1.0 - s * s);
    }
    let gv = cp.v.grad();
    let gx = x.grad();
    let mut out = ScalarField::zeros(grid);
    if grid.is_planar() {
        for cell in 0..grid.len() {
            out.data[cell] = lhs.data[cell]
                - (gv.data[0][cell] * gx.data[1][cell] - gv.data[1][cell] * gx.data[0][cell]);
        }
    } else {
        let gb = state.b.grad(grid);
        for cell in 0..grid.len() {
            let bb = [gb.data[0][cell], gb.data[1][cell], gb.data[2][cell]];
            let vv = [gv.data[0][cell], gv.data[1][cell], gv.data[2][cell]];
            let xx = [gx.data[0][cell], gx.data[1][cell], gx.data[2][cell]];
            out.data[cell] = lhs.data[cell] - nambu_scalar(bb, vv, xx);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermitian::{hermitize_in_place, PauliBasis};
    use crate::synth::{bloch_density, density_of, exp_pauli, FieldSampler};

    fn grid2(n: usize) -> Grid {
        Grid::new_2d(n, n, 1.0, 1.0).unwrap()
    }

    fn pauli() -> PauliBasis {
        PauliBasis::new()
    }

    /// A generic planar density-matrix state plus Hamiltonian for reuse.
    fn planar_setup(seed: u64, n_cells: usize) -> (HybridState, HybridHamiltonian) {
        let grid = grid2(n_cells);
        let mut smp = FieldSampler::new(seed);
        let d = smp.positive_scalar(grid, 4, 2, 0.3, 1.0);
        let u = smp.vector(grid, 3, 2, 0.2);
        let rho = smp.density_field(grid, 2, 3, 2);
        let c = smp.scalar(grid, 3, 2, 0.4);
        let state = HybridState {
            d,
            u,
            q: QuantumState::Density(rho),
            b: BScalar::Slope(0.0),
            c,
        };
        let pb = pauli();
        let ham = HybridHamiltonian::new(
            1.0,
            0.8,
            smp.scalar(grid, 3, 2, 0.5),
            2,
            vec![
                Coupling { v: smp.scalar(grid, 3, 2, 0.6), b: pb.sigma[0].clone() },
                Coupling { v: smp.scalar(grid, 3, 2, 0.4), b: pb.sigma[2].clone() },
            ],
            EquationOfState::Polytropic { kappa: 0.5, gamma: 2.0 },
        )
        .unwrap();
        (state, ham)
    }

    fn max_matrix_diff(a: &MatrixField, b: &MatrixField) -> f64 {
        a.data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0f64, f64::max)
    }

    fn max_vec_diff(a: &VectorField, b: &VectorField) -> f64 {
        let mut m = 0.0f64;
        for ax in 0..3 {
            for (x, y) in a.data[ax].iter().zip(&b.data[ax]) {
                m = m.max((x - y).abs());
            }
        }
        m
    }

    #[test]
    fn pressure_matches_polytropic_closures() {
        let grid = grid2(8);
        let d = ScalarField::constant(grid, 2.0);
        let p = pressure(&d, &EquationOfState::Polytropic { kappa: 1.0, gamma: 2.0 }).unwrap();
        assert!((p.data[0] - 4.0).abs() < 1e-14);
        let d1 = ScalarField::constant(grid, 1.0);
        let p1 =
            pressure(&d1, &EquationOfState::Polytropic { kappa: 1.0, gamma: 5.0 / 3.0 }).unwrap();
        assert!((p1.data[0] - 1.0).abs() < 1e-14);
        let p0 = pressure(&d, &EquationOfState::None).unwrap();
        assert_eq!(p0.max_norm(), 0.0);

        let mut bad = d.clone();
        bad.data[5] = -0.25;
        let err = pressure(&bad, &EquationOfState::Polytropic { kappa: 1.0, gamma: 2.0 })
            .unwrap_err()
            .to_string();
        assert!(err.starts_with("vacuum-error"), "got {err}");
    }

    #[test]
    fn ehrenfest_matches_two_level_propagator() {
        // u = 0, uniform D: dρ̂ must equal the derivative of Uρ̂U†
        let grid = grid2(16);
        let mut smp = FieldSampler::new(5);
        let vi = smp.scalar(grid, 3, 2, 0.7);
        let pb = pauli();
        let hbar = 0.6;
        let ham = HybridHamiltonian::new(
            1.0,
            hbar,
            ScalarField::zeros(grid),
            2,
            vec![Coupling { v: vi.clone(), b: pb.sigma[0].clone() }],
            EquationOfState::None,
        )
        .unwrap();
        let theta = smp.scalar(grid, 3, 2, 0.9);
        let phi = smp.scalar(grid, 2, 2, 0.8);
        let rho = bloch_density(&theta, &phi);
        let state = HybridState {
            d: ScalarField::constant(grid, 1.0),
            u: VectorField::zeros(grid),
            q: QuantumState::Density(rho.clone()),
            b: BScalar::Slope(0.0),
            c: ScalarField::zeros(grid),
        };
        let rhs = rhs_ehrenfest(&state, &ham).unwrap();
        let drho = rhs.dq.density();

        let eps = 1e-6;
        let mut worst = 0.0f64;
        for cell in (0..grid.len()).step_by(17) {
            // exact conjugation by U(±ε) with Ĥ = V_I σ̂₁
            let a = vi.data[cell] * eps / hbar;
            let up = exp_pauli(0.0, [a, 0.0, 0.0]);
            let um = exp_pauli(0.0, [-a, 0.0, 0.0]);
            let r = Matrix::new(2, rho.mat(cell).to_vec());
            let fwd = up.mul(&r).unwrap().mul(&up.dagger()).unwrap();
            let bwd = um.mul(&r).unwrap().mul(&um.dagger()).unwrap();
            for e in 0..4 {
                let fd = (fwd.data[e] - bwd.data[e]) / (2.0 * eps);
                worst = worst.max((fd - drho.mat(cell)[e]).norm());
            }
        }
        assert!(worst < 1e-8, "propagator mismatch {worst}");

        // advection enters linearly: rhs(u) − rhs(0) = −u·∇ρ̂
        let mut state_u = state.clone();
        state_u.u = smp.vector(grid, 3, 2, 0.3);
        let rhs_u = rhs_ehrenfest(&state_u, &ham).unwrap();
        let adv = advect_matrix(&state_u.u, &rho);
        let mut worst_adv = 0.0f64;
        for (i, (a, b)) in rhs_u.dq.density().data.iter().zip(&rhs.dq.density().data).enumerate() {
            let want = b - adv.data[i];
            worst_adv = worst_adv.max((a - want).norm());
        }
        assert!(worst_adv < 1e-12, "advection mismatch {worst_adv}");
    }

    #[test]
    fn ehrenfest_preserves_zero_dephasing_expectation() {
        let grid = grid2(16);
        let mut smp = FieldSampler::new(9);
        let pb = pauli();
        let ham = HybridHamiltonian::new(
            1.0,
            0.5,
            smp.scalar(grid, 3, 2, 0.5),
            2,
            vec![Coupling { v: smp.scalar(grid, 3, 2, 0.8), b: pb.sigma[2].clone() }],
            EquationOfState::Polytropic { kappa: 1.0, gamma: 2.0 },
        )
        .unwrap();
        // ⟨σ̂₃⟩ = 0: equal populations, arbitrary smooth coherences
        let re = smp.scalar(grid, 3, 2, 0.3);
        let im = smp.scalar(grid, 3, 2, 0.3);
        let mut rho = MatrixField::zeros(grid, 2);
        for cell in 0..grid.len() {
            let m = rho.mat_mut(cell);
            m[0] = C64::new(0.5, 0.0);
            m[3] = C64::new(0.5, 0.0);
            m[1] = C64::new(re.data[cell], im.data[cell]);
            m[2] = m[1].conj();
        }
        let state = HybridState {
            d: smp.positive_scalar(grid, 3, 2, 0.2, 1.0),
            u: smp.vector(grid, 3, 2, 0.4),
            q: QuantumState::Density(rho),
            b: BScalar::Slope(0.0),
            c: ScalarField::zeros(grid),
        };
        let rhs = rhs_ehrenfest(&state, &ham).unwrap();
        let drho = rhs.dq.density();
        let mut worst = 0.0f64;
        for cell in 0..grid.len() {
            worst = worst.max(inner_re(&pb.sigma[2].data, drho.mat(cell)).abs());
        }
        assert!(worst < 1e-12, "d⟨σ̂₃⟩/dt = {worst}");
    }

    #[test]
    fn qc3d_reduces_to_ehrenfest_for_constant_b() {
        let grid = Grid::new_3d(12, 12, 12, 1.0, 1.0, 1.0).unwrap();
        let mut smp = FieldSampler::new(21);
        let pb = pauli();
        let ham = HybridHamiltonian::new(
            1.3,
            0.7,
            smp.scalar(grid, 3, 2, 0.4),
            2,
            vec![Coupling { v: smp.scalar(grid, 3, 2, 0.5), b: pb.sigma[1].clone() }],
            EquationOfState::None,
        )
        .unwrap();
        let state = HybridState {
            d: smp.positive_scalar(grid, 3, 2, 0.3, 1.0),
            u: smp.vector(grid, 3, 2, 0.3),
            q: QuantumState::Density(smp.density_field(grid, 2, 3, 2)),
            b: BScalar::Field(ScalarField::constant(grid, 0.7)),
            c: smp.scalar(grid, 3, 2, 0.5),
        };
        let full = rhs_qc3d(&state, &ham).unwrap();
        let base = rhs_ehrenfest(&state, &ham).unwrap();
        let du_scale = base.du.max_norm().max(1.0);
        let dq_scale = base.dq.density().max_norm().max(1.0);
        assert!(max_vec_diff(&full.du, &base.du) < 1e-12 * du_scale);
        assert!(max_matrix_diff(full.dq.density(), base.dq.density()) < 1e-12 * dq_scale);
        assert!(
            full.dd
                .data
                .iter()
                .zip(&base.dd.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max)
                == 0.0
        );
    }

    #[test]
    fn qc3d_decouples_for_scalar_hamiltonian() {
        let grid = Grid::new_3d(12, 12, 12, 1.0, 1.0, 1.0).unwrap();
        let mut smp = FieldSampler::new(31);
        let eos = EquationOfState::Polytropic { kappa: 0.8, gamma: 2.0 };
        let ham = HybridHamiltonian::new(
            1.1,
            0.9,
            smp.scalar(grid, 3, 2, 0.5),
            2,
            Vec::new(),
            eos,
        )
        .unwrap();
        let rho = smp.density_field(grid, 2, 3, 2);
        let state = HybridState {
            d: smp.positive_scalar(grid, 3, 2, 0.3, 1.2),
            u: smp.vector(grid, 3, 2, 0.3),
            q: QuantumState::Density(rho.clone()),
            b: BScalar::Field(smp.scalar(grid, 3, 2, 0.6)),
            c: smp.scalar(grid, 3, 2, 0.5),
        };
        let rhs = rhs_qc3d(&state, &ham).unwrap();

        // quantum sector: pure advection
        let adv = advect_matrix(&state.u, &rho);
        let mut worst = 0.0f64;
        for (a, b) in rhs.dq.density().data.iter().zip(&adv.data) {
            worst = worst.max((a + b).norm());
        }
        assert!(worst < 1e-12, "dρ̂ is not pure advection: {worst}");

        // classical sector: barotropic flow in the external potential V₀
        let p = pressure(&state.d, &eos).unwrap();
        let gp = p.grad();
        let gv0 = ham.v0.grad();
        let adv_u = advect_vector(&state.u, &state.u);
        let mut want = VectorField::zeros(grid);
        for ax in 0..3 {
            for cell in 0..grid.len() {
                want.data[ax][cell] = (-gp.data[ax][cell] / state.d.data[cell]
                    - gv0.data[ax][cell])
                    / ham.mass
                    - adv_u.data[ax][cell];
            }
        }
        let scale = want.max_norm().max(1.0);
        assert!(max_vec_diff(&rhs.du, &want) < 1e-12 * scale);
    }

    #[test]
    fn qc3d_rhs_is_traceless_and_hermitian() {
        let grid = Grid::new_3d(10, 10, 10, 1.0, 1.0, 1.0).unwrap();
        let mut smp = FieldSampler::new(41);
        let pb = pauli();
        let ham = HybridHamiltonian::new(
            1.0,
            0.5,
            smp.scalar(grid, 3, 2, 0.4),
            2,
            vec![
                Coupling { v: smp.scalar(grid, 3, 2, 0.6), b: pb.sigma[0].clone() },
                Coupling { v: smp.scalar(grid, 3, 2, 0.5), b: pb.sigma[2].clone() },
            ],
            EquationOfState::Polytropic { kappa: 0.4, gamma: 2.0 },
        )
        .unwrap();
        let state = HybridState {
            d: smp.positive_scalar(grid, 3, 2, 0.3, 1.0),
            u: smp.vector(grid, 3, 2, 0.3),
            q: QuantumState::Density(smp.density_field(grid, 2, 3, 2)),
            b: BScalar::Field(smp.scalar(grid, 3, 2, 0.7)),
            c: smp.scalar(grid, 3, 2, 0.5),
        };
        let rhs = rhs_qc3d(&state, &ham).unwrap();
        let drho = rhs.dq.density();
        let scale = drho.max_norm().max(1.0);
        let mut worst_tr = 0.0f64;
        let mut worst_herm = 0.0f64;
        for cell in 0..grid.len() {
            let m = drho.mat(cell);
            worst_tr = worst_tr.max((m[0] + m[3]).norm());
            let mut copy = [m[0], m[1], m[2], m[3]];
            worst_herm = worst_herm.max(hermitize_in_place(2, &mut copy));
        }
        assert!(worst_tr < 1e-11 * scale, "trace {worst_tr}");
        assert!(worst_herm < 1e-11 * scale, "hermiticity {worst_herm}");
    }

    #[test]
    fn qc3d_slope_b_embeds_the_planar_system() {
        // z-uniform 3D state with b = βz against the planar c̃ = βc system
        let n2 = 16;
        let grid3 = Grid::new_3d(n2, n2, 8, 1.0, 1.0, 1.0).unwrap();
        let grid = grid2(n2);
        let beta = 0.6;
        let mut smp = FieldSampler::new(55);
        let d2 = smp.positive_scalar(grid, 3, 2, 0.3, 1.0);
        let u2 = smp.vector(grid, 3, 2, 0.25);
        let rho2 = smp.density_field(grid, 2, 3, 2);
        let c2 = smp.positive_scalar(grid, 3, 2, 0.4, 0.8);
        let v0 = smp.scalar(grid, 3, 2, 0.5);
        let vi = smp.scalar(grid, 3, 2, 0.6);

        let lift = |f: &ScalarField| {
            ScalarField::from_fn(grid3, |x| f.interpolate([x[0], x[1], 0.0]))
        };
        // z-uniform copies: same planar profile at every k (interpolate hits
        // cell centers exactly, so values match bitwise)
        let d3 = lift(&d2);
        let c3 = lift(&c2);
        let v03 = lift(&v0);
        let vi3 = lift(&vi);
        let mut u3 = VectorField::zeros(grid3);
        let mut rho3 = MatrixField::zeros(grid3, 2);
        for k in 0..8 {
            for j in 0..n2 {
                for i in 0..n2 {
                    let c3i = grid3.idx(i, j, k);
                    let c2i = grid.idx(i, j, 0);
                    u3.data[0][c3i] = u2.data[0][c2i];
                    u3.data[1][c3i] = u2.data[1][c2i];
                    for e in 0..4 {
                        rho3.data[c3i * 4 + e] = rho2.data[c2i * 4 + e];
                    }
                }
            }
        }
        let pb = pauli();
        let eos = EquationOfState::Polytropic { kappa: 0.5, gamma: 2.0 };
        let ham3 = HybridHamiltonian::new(
            1.0,
            0.7,
            v03,
            2,
            vec![Coupling { v: vi3, b: pb.sigma[0].clone() }],
            eos,
        )
        .unwrap();
        let ham2 = HybridHamiltonian::new(
            1.0,
            0.7,
            v0,
            2,
            vec![Coupling { v: vi, b: pb.sigma[0].clone() }],
            eos,
        )
        .unwrap();
        let state3 = HybridState {
            d: d3,
            u: u3,
            q: QuantumState::Density(rho3),
            b: BScalar::Slope(beta),
            c: c3,
        };
        let mut ct = c2.clone();
        for v in ct.data.iter_mut() {
            *v *= beta;
        }
        let state2 = HybridState {
            d: d2,
            u: u2,
            q: QuantumState::Density(rho2),
            b: BScalar::Slope(beta),
            c: ct,
        };
        let r3 = rhs_qc3d(&state3, &ham3).unwrap();
        let r2 = rhs_qc_planar(&state2, &ham2).unwrap();

        // compare the restriction to the k = 0 plane
        let mut worst = 0.0f64;
        for j in 0..n2 {
            for i in 0..n2 {
                let c3i = grid3.idx(i, j, 0);
                let c2i = grid.idx(i, j, 0);
                for ax in 0..2 {
                    worst = worst.max((r3.du.data[ax][c3i] - r2.du.data[ax][c2i]).abs());
                }
                worst = worst.max((r3.dd.data[c3i] - r2.dd.data[c2i]).abs());
                // planar dc̃ = β · 3D dc
                worst = worst.max((beta * r3.dc.data[c3i] - r2.dc.data[c2i]).abs());
                for e in 0..4 {
                    worst = worst.max(
                        (r3.dq.density().data[c3i * 4 + e] - r2.dq.density().data[c2i * 4 + e])
                            .norm(),
                    );
                }
            }
        }
        assert!(worst < 1e-10, "embedding mismatch {worst}");
        // the slope embedding keeps the flow planar
        assert_eq!(r3.du.data[2].iter().fold(0.0f64, |m, v| m.max(v.abs())), 0.0);
    }

    #[test]
    fn stress_form_reduces_to_ehrenfest_for_constant_b() {
        // constant b kills every bracket flux: 𝒟̂ = Dρ̂, X = 0, T = pδ
        let grid = Grid::new_3d(12, 12, 12, 1.0, 1.0, 1.0).unwrap();
        let mut smp = FieldSampler::new(61);
        let pb = pauli();
        let ham = HybridHamiltonian::new(
            1.2,
            0.8,
            smp.scalar(grid, 3, 2, 0.4),
            2,
            vec![Coupling { v: smp.scalar(grid, 3, 2, 0.5), b: pb.sigma[0].clone() }],
            EquationOfState::Polytropic { kappa: 0.6, gamma: 2.0 },
        )
        .unwrap();
        let state = HybridState {
            d: smp.positive_scalar(grid, 3, 2, 0.3, 1.0),
            u: smp.vector(grid, 3, 2, 0.3),
            q: QuantumState::Density(smp.density_field(grid, 2, 3, 2)),
            b: BScalar::Field(ScalarField::constant(grid, 0.4)),
            c: smp.scalar(grid, 3, 2, 0.5),
        };
        let stress = rhs_qc3d_stress_form(&state, &ham).unwrap();
        let base = rhs_ehrenfest(&state, &ham).unwrap();
        let du_scale = base.du.max_norm().max(1.0);
        let dq_scale = base.dq.density().max_norm().max(1.0);
        assert!(max_vec_diff(&stress.du, &base.du) < 1e-12 * du_scale);
        assert!(max_matrix_diff(stress.dq.density(), base.dq.density()) < 1e-12 * dq_scale);
    }

    #[test]
    fn qc_planar_with_zero_ct_reduces_to_ehrenfest() {
        let (mut state, ham) = planar_setup(71, 16);
        state.c = ScalarField::zeros(state.grid());
        let full = rhs_qc_planar(&state, &ham).unwrap();
        let base = rhs_ehrenfest(&state, &ham).unwrap();
        assert!(max_vec_diff(&full.du, &base.du) < 1e-14);
        assert!(max_matrix_diff(full.dq.density(), base.dq.density()) < 1e-14);
    }

    #[test]
    fn qc_planar_rejects_3d_grids_and_pure_states() {
        let grid3 = Grid::new_3d(8, 8, 8, 1.0, 1.0, 1.0).unwrap();
        let mut smp = FieldSampler::new(3);
        let pb = pauli();
        let ham = HybridHamiltonian::new(
            1.0,
            1.0,
            ScalarField::zeros(grid3),
            2,
            vec![Coupling { v: smp.scalar(grid3, 2, 1, 0.3), b: pb.sigma[0].clone() }],
            EquationOfState::None,
        )
        .unwrap();
        let state = HybridState {
            d: ScalarField::constant(grid3, 1.0),
            u: VectorField::zeros(grid3),
            q: QuantumState::Density(smp.density_field(grid3, 2, 2, 1)),
            b: BScalar::Slope(0.0),
            c: ScalarField::zeros(grid3),
        };
        let err = rhs_qc_planar(&state, &ham).unwrap_err().to_string();
        assert!(err.starts_with("unsupported-operation"), "got {err}");

        let grid = grid2(8);
        let mut smp = FieldSampler::new(4);
        let psi = smp.spinor_field(grid, 2, 2, 1);
        let ham2 = HybridHamiltonian::new(
            1.0,
            1.0,
            ScalarField::zeros(grid),
            2,
            vec![],
            EquationOfState::None,
        )
        .unwrap();
        let state2 = HybridState {
            d: ScalarField::constant(grid, 1.0),
            u: VectorField::zeros(grid),
            q: QuantumState::Pure(psi),
            b: BScalar::Slope(0.0),
            c: ScalarField::constant(grid, 1.0),
        };
        let err2 = rhs_qc_planar(&state2, &ham2).unwrap_err().to_string();
        assert!(err2.starts_with("unsupported-model"), "got {err2}");
    }

    #[test]
    fn pure_planar_time_derivative_is_orthogonal_at_rest() {
        let grid = grid2(24);
        let mut smp = FieldSampler::new(81);
        let pb = pauli();
        let ham = HybridHamiltonian::new(
            1.0,
            0.6,
            smp.scalar(grid, 3, 2, 0.4),
            2,
            vec![Coupling { v: smp.scalar(grid, 3, 2, 0.5), b: pb.sigma[0].clone() }],
            EquationOfState::Polytropic { kappa: 0.3, gamma: 2.0 },
        )
        .unwrap();
        let psi = smp.spinor_field(grid, 2, 3, 2);
        let state = HybridState {
            d: smp.positive_scalar(grid, 3, 2, 0.3, 1.0),
            u: VectorField::zeros(grid),
            q: QuantumState::Pure(psi.clone()),
            b: BScalar::Slope(0.0),
            c: smp.positive_scalar(grid, 3, 2, 0.4, 0.9),
        };
        let rhs = rhs_pure_state_planar(&state, &ham).unwrap();
        let dpsi = rhs.dq.pure();
        let scale = (0..grid.len())
            .map(|c| dpsi.sp(c).iter().map(|z| z.norm()).fold(0.0f64, f64::max))
            .fold(1.0f64, f64::max);
        let mut worst = 0.0f64;
        for cell in 0..grid.len() {
            let s = psi.sp(cell);
            let ds = dpsi.sp(cell);
            let re: f64 = s.iter().zip(ds).map(|(a, b)| a.re * b.re + a.im * b.im).sum();
            worst = worst.max(re.abs());
        }
        assert!(worst < 1e-11 * scale, "⟨ψ,dψ⟩ real part {worst}");
    }

    #[test]
    fn pure_planar_rejects_invalid_states() {
        let grid = grid2(8);
        let mut smp = FieldSampler::new(91);
        let ham = HybridHamiltonian::new(
            1.0,
            1.0,
            ScalarField::zeros(grid),
            2,
            vec![],
            EquationOfState::None,
        )
        .unwrap();
        let psi = smp.spinor_field(grid, 2, 2, 1);
        let good_c = ScalarField::constant(grid, 1.0);

        // unnormalized spinor
        let mut bad_psi = psi.clone();
        for z in bad_psi.data.iter_mut() {
            *z *= 1.001;
        }
        let state = HybridState {
            d: ScalarField::constant(grid, 1.0),
            u: VectorField::zeros(grid),
            q: QuantumState::Pure(bad_psi),
            b: BScalar::Slope(0.0),
            c: good_c.clone(),
        };
        let err = rhs_pure_state_planar(&state, &ham).unwrap_err().to_string();
        assert!(err.starts_with("unnormalized-state"), "got {err}");

        // nonpositive c̃
        let mut bad_c = good_c.clone();
        bad_c.data[3] = -0.5;
        let state2 = HybridState {
            d: ScalarField::constant(grid, 1.0),
            u: VectorField::zeros(grid),
            q: QuantumState::Pure(psi.clone()),
            b: BScalar::Slope(0.0),
            c: bad_c,
        };
        let err2 = rhs_pure_state_planar(&state2, &ham).unwrap_err().to_string();
        assert!(err2.starts_with("log-domain-error"), "got {err2}");

        // density matrix handed to a pure-state model
        let state3 = HybridState {
            d: ScalarField::constant(grid, 1.0),
            u: VectorField::zeros(grid),
            q: QuantumState::Density(density_of(&psi)),
            b: BScalar::Slope(0.0),
            c: good_c,
        };
        let err3 = rhs_pure_state_planar(&state3, &ham).unwrap_err().to_string();
        assert!(err3.starts_with("requires-pure-state"), "got {err3}");
    }

    #[test]
    fn incompressible_projection_is_divergence_free() {
        let grid = grid2(24);
        let mut smp = FieldSampler::new(101);
        let pb = pauli();
        let ham = HybridHamiltonian::new(
            1.0,
            0.7,
            smp.scalar(grid, 3, 2, 0.4),
            2,
            vec![Coupling { v: smp.scalar(grid, 3, 2, 0.5), b: pb.sigma[2].clone() }],
            EquationOfState::None,
        )
        .unwrap();
        let state = HybridState {
            d: smp.positive_scalar(grid, 3, 2, 0.3, 1.0),
            u: smp.div_free_vector(grid, 3, 2, 0.4),
            q: QuantumState::Pure(smp.spinor_field(grid, 2, 3, 2)),
            b: BScalar::Slope(0.8),
            c: ScalarField::zeros(grid),
        };
        let rhs = rhs_qc_planar_incompressible(&state, &ham).unwrap();
        let div = rhs.du.div().max_norm();
        assert!(div < 1e-10, "div du = {div}");
        assert_eq!(rhs.dc.max_norm(), 0.0);

        // a compressible velocity must be rejected
        let mut bad = state.clone();
        bad.u = smp.vector(grid, 3, 2, 0.4);
        let err = rhs_qc_planar_incompressible(&bad, &ham).unwrap_err().to_string();
        assert!(err.starts_with("unsupported-operation"), "got {err}");
    }

    #[test]
    fn incompressible_classical_sector_ignores_beta_for_uniform_d() {
        // uniform D, real ψ, real-symmetric Ĥ: (dd, du) must not see β
        let grid = grid2(16);
        let mut smp = FieldSampler::new(111);
        let pb = pauli();
        let ham = HybridHamiltonian::new(
            1.0,
            0.9,
            smp.scalar(grid, 3, 2, 0.4),
            2,
            vec![Coupling { v: smp.scalar(grid, 3, 2, 0.5), b: pb.sigma[0].clone() }],
            EquationOfState::None,
        )
        .unwrap();
        let theta = smp.scalar(grid, 3, 2, 0.8);
        let psi = crate::synth::bloch_spinor(&theta, &ScalarField::zeros(grid));
        let u = smp.div_free_vector(grid, 3, 2, 0.3);
        let mk = |beta: f64| HybridState {
            d: ScalarField::constant(grid, 1.3),
            u: u.clone(),
            q: QuantumState::Pure(psi.clone()),
            b: BScalar::Slope(beta),
            c: ScalarField::zeros(grid),
        };
        let r0 = rhs_qc_planar_incompressible(&mk(0.0), &ham).unwrap();
        let r1 = rhs_qc_planar_incompressible(&mk(0.9), &ham).unwrap();
        assert!(max_vec_diff(&r0.du, &r1.du) < 1e-12, "du sees β");
        assert!(
            r0.dd.data.iter().zip(&r1.dd.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
                < 1e-14
        );
        // and the quantum sector does see it
        let mut dq_diff = 0.0f64;
        for (a, b) in r0.dq.pure().data.iter().zip(&r1.dq.pure().data) {
            dq_diff = dq_diff.max((a - b).norm());
        }
        assert!(dq_diff > 1e-6, "β should act on ψ");
    }

    #[test]
    fn dephasing_law_requires_a_dephasing_channel() {
        let (state, ham) = planar_setup(121, 16);
        // two couplings: not a dephasing Hamiltonian
        let err = dephasing_local_law_residual(&state, &ham).unwrap_err().to_string();
        assert!(err.starts_with("unsupported-model"), "got {err}");

        // single coupling but mixed state: purity rejection
        let grid = state.grid();
        let mut smp = FieldSampler::new(5);
        let pb = pauli();
        let ham1 = HybridHamiltonian::new(
            1.0,
            0.8,
            smp.scalar(grid, 2, 1, 0.4),
            2,
            vec![Coupling { v: smp.scalar(grid, 2, 1, 0.5), b: pb.sigma[2].clone() }],
            EquationOfState::None,
        )
        .unwrap();
        let err2 = dephasing_local_law_residual(&state, &ham1).unwrap_err().to_string();
        assert!(err2.starts_with("requires-pure-state"), "got {err2}");
    }

    #[test]
    fn dephasing_law_residual_vanishes_on_refinement() {
        // the law is an identity of the continuum system; its discrete
        // residual must fall at close to the stencil order
        let mut smp = FieldSampler::new(131);
        let base = grid2(16);
        let theta = smp.trig(base, 3, 2, 0.9, 0.2);
        let phi = smp.trig(base, 3, 2, 0.8, 0.0);
        let dprof = smp.trig(base, 3, 2, 0.25, 1.0);
        let uprof = [smp.trig(base, 3, 2, 0.3, 0.0), smp.trig(base, 3, 2, 0.3, 0.0)];
        let cprof = smp.trig(base, 3, 2, 0.4, 0.9);
        let v0prof = smp.trig(base, 3, 2, 0.5, 0.0);
        let viprof = smp.trig(base, 3, 2, 0.6, 0.0);
        let pb = pauli();

        let ns = [16usize, 32, 64];
        let mut errs = Vec::new();
        for &nc in &ns {
            let grid = grid2(nc);
            let rho = bloch_density(&theta.field(grid), &phi.field(grid));
            let mut u = VectorField::zeros(grid);
            u.data[0] = uprof[0].field(grid).data;
            u.data[1] = uprof[1].field(grid).data;
            let state = HybridState {
                d: dprof.field(grid),
                u,
                q: QuantumState::Density(rho),
                b: BScalar::Slope(0.0),
                c: cprof.field(grid),
            };
            let ham = HybridHamiltonian::new(
                1.0,
                0.8,
                v0prof.field(grid),
                2,
                vec![Coupling { v: viprof.field(grid), b: pb.sigma[2].clone() }],
                EquationOfState::Polytropic { kappa: 0.4, gamma: 2.0 },
            )
            .unwrap();
            errs.push(dephasing_local_law_residual(&state, &ham).unwrap().max_norm());
        }
        let order = crate::synth::fit_order(&ns, &errs);
        println!("dephasing law residual: errs {errs:?} order {order:.2}");
        assert!(order > 3.5, "law residual converges at order {order}");
    }

    #[test]
    fn hamiltonian_validation_rejects_bad_input() {
        let grid = grid2(8);
        let mut nh = Matrix::zeros(2);
        nh.data[1] = C64::new(0.3, 0.1);
        nh.data[2] = C64::new(0.3, 0.4); // ≠ conj
        let err = HybridHamiltonian::new(
            1.0,
            1.0,
            ScalarField::zeros(grid),
            2,
            vec![Coupling { v: ScalarField::zeros(grid), b: nh }],
            EquationOfState::None,
        )
        .unwrap_err()
        .to_string();
        assert!(err.starts_with("shape-error"), "got {err}");

        let err2 = EquationOfState::Polytropic { kappa: 1.0, gamma: 1.0 }
            .validate()
            .unwrap_err()
            .to_string();
        assert!(err2.starts_with("unsupported-model"), "got {err2}");
    }

    #[test]
    fn vacuum_floor_counts_activations() {
        let (mut state, ham) = planar_setup(141, 16);
        state.d.data[7] = 1e-12; // positive but far below the floor
        let rhs = rhs_qc_planar(&state, &ham).unwrap();
        assert!(rhs.floor_hits >= 1);
        assert!(rhs.du.max_norm().is_finite());

        state.d.data[7] = -1.0;
        let err = rhs_qc_planar(&state, &ham).unwrap_err().to_string();
        assert!(err.starts_with("vacuum-error"), "got {err}");
    }

    #[test]
    fn qc3d_is_equivariant_under_constant_unitaries() {
        let grid = Grid::new_3d(10, 10, 10, 1.0, 1.0, 1.0).unwrap();
        let mut smp = FieldSampler::new(151);
        let pb = pauli();
        let v = smp.scalar(grid, 3, 2, 0.5);
        let v2 = smp.scalar(grid, 3, 2, 0.4);
        let mk_ham = |b1: Matrix, b2: Matrix| {
            HybridHamiltonian::new(
                1.0,
                0.7,
                v2.clone(),
                2,
                vec![
                    Coupling { v: v.clone(), b: b1 },
                    Coupling { v: v2.clone(), b: b2 },
                ],
                EquationOfState::Polytropic { kappa: 0.3, gamma: 2.0 },
            )
            .unwrap()
        };
        let rho = smp.density_field(grid, 2, 2, 1);
        let ustate = HybridState {
            d: smp.positive_scalar(grid, 2, 1, 0.3, 1.0),
            u: smp.vector(grid, 2, 1, 0.3),
            q: QuantumState::Density(rho.clone()),
            b: BScalar::Field(smp.scalar(grid, 2, 1, 0.6)),
            c: smp.scalar(grid, 2, 1, 0.5),
        };
        let uu = smp.unitary(2);

        let ham = mk_ham(pb.sigma[0].clone(), pb.sigma[2].clone());
        let r = rhs_qc3d(&ustate, &ham).unwrap();

        // conjugate ρ̂ and the coupling matrices by the same unitary
        let conj = |m: &Matrix| uu.mul(m).unwrap().mul(&uu.dagger()).unwrap();
        let mut rho_u = rho.clone();
        for cell in 0..grid.len() {
            let m = Matrix::new(2, rho.mat(cell).to_vec());
            let c = conj(&m);
            rho_u.mat_mut(cell).copy_from_slice(&c.data);
        }
        let mut state_u = ustate.clone();
        state_u.q = QuantumState::Density(rho_u);
        let ham_u = mk_ham(conj(&pb.sigma[0]).hermitize().0, conj(&pb.sigma[2]).hermitize().0);
        let r_u = rhs_qc3d(&state_u, &ham_u).unwrap();

        // classical sector unchanged, quantum sector conjugated
        assert!(max_vec_diff(&r.du, &r_u.du) < 1e-12);
        let mut worst = 0.0f64;
        for cell in 0..grid.len() {
            let m = Matrix::new(2, r.dq.density().mat(cell).to_vec());
            let want = conj(&m);
            for (a, b) in want.data.iter().zip(r_u.dq.density().mat(cell)) {
                worst = worst.max((a - b).norm());
            }
        }
        assert!(worst < 1e-12, "quantum sector equivariance {worst}");
    }
}
