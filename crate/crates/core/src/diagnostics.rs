//! Conserved and monitored functionals: energy, the Casimir families C1/C2
//! and their Λ_n kernels, cross helicity, planar vorticity Casimirs, totals
//! and purity, positivity/Hermiticity monitors, and circulation along
//! advected tracer loops. Everything here is a pure reduction over one
//! state; drifts of these numbers are the artifact's main verification axis.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::brackets::{berry_connection, cross, nambu_matrix_into};
use crate::error::{QcError, Result};
use crate::fields::{HermitianField, MatrixField, ScalarField, VectorField};
use crate::hermitian::{
    fro_norm, hermitize_in_place, inner_im, inner_re, matbuf, matvec, min_eigenvalue, Matrix,
    PauliBasis,
};
use crate::integrator::StepReport;
use crate::models::{
    BScalar, HybridHamiltonian, HybridState, Model, ModelKind, QuantumState,
};
use crate::synth::density_of;

// ---------------------------------------------------------------------------
// presets

/// Matrix analytic functions F for the Casimir C1 = Tr∫D F(ρ̂).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum C1Preset {
    /// F(x) = x, so Tr F(ρ̂) = 1 and C1 is the total mass.
    Identity,
    /// F(x) = x², so Tr F(ρ̂) = ‖ρ̂‖²_F (local purity weight).
    Square,
}

/// Scalar functions Φ(b, c, Λ₁, Λ₂) for the Casimir C2 = ∫D Φ.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum C2Preset {
    /// Φ = b·c.
    BC,
    /// Φ = b².
    BSquared,
    /// Φ = c·Λ₁.
    CLambda1,
}

/// Weight functions Θ(c̃) for the planar vorticity Casimir ∫Ω Θ(c̃).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaPreset {
    /// Θ = 1: total canonical vorticity.
    One,
    /// Θ(c̃) = c̃.
    Identity,
}

// ---------------------------------------------------------------------------
// shared reductions

/// ρ̂ as a matrix field for either quantum representation.
fn rho_of(state: &HybridState) -> Cow<'_, HermitianField> {
    match &state.q {
        QuantumState::Density(r) => Cow::Borrowed(r),
        QuantumState::Pure(p) => Cow::Owned(density_of(p)),
    }
}

fn check_positive(d: &ScalarField) -> Result<()> {
    for (cell, &v) in d.data.iter().enumerate() {
        if !(v > 0.0) {
            let (i, j, k) = d.grid.cell_of(cell);
            return Err(QcError::VacuumError { value: v, i, j, k });
        }
    }
    Ok(())
}

/// b sampled at cell centers; the slope form uses its analytic profile βz,
/// which is meaningful as a diagnostic weight even though βz is aperiodic.
fn b_values(state: &HybridState) -> Vec<f64> {
    match &state.b {
        BScalar::Field(b) => b.data.clone(),
        BScalar::Slope(beta) => {
            let grid = state.grid();
            (0..grid.len())
                .map(|cell| {
                    let (i, j, k) = grid.cell_of(cell);
                    beta * grid.cell_center(i, j, k)[2]
                })
                .collect()
        }
    }
}

/// Hamiltonian functional of the selected model. The hybrid models carry the
/// backreaction term ⟨ρ̃, (iħ/D²)c{ρ̃,Ĥ}_b⟩ with ρ̃ = Dρ̂ (planar variants use
/// c̃ and the planar bracket; the incompressible model reads c̃ = βD);
/// Ehrenfest is the bare fluid-plus-mean-field energy.
pub fn energy(state: &HybridState, ham: &HybridHamiltonian, model: &Model) -> Result<f64> {
    check_positive(&state.d)?;
    let grid = state.grid();
    let rho = rho_of(state);
    let h = ham.h_field();
    let eos_active = !matches!(model.kind, ModelKind::QcPlanarIncompressible);

    let mut total = 0.0;
    for cell in 0..grid.len() {
        let d = state.d.data[cell];
        let u2 = (0..3).map(|ax| state.u.data[ax][cell].powi(2)).sum::<f64>();
        let mut e = 0.5 * ham.mass * d * u2 + d * inner_re(rho.mat(cell), h.mat(cell));
        if eos_active {
            e += d * ham.eos.internal_energy(d);
        }
        total += e;
    }

    // backreaction term, absent from the Ehrenfest baseline
    if !matches!(model.kind, ModelKind::Ehrenfest) {
        let weight: Vec<f64> = match model.kind {
            ModelKind::QcPlanarIncompressible => {
                let beta = match &state.b {
                    BScalar::Slope(beta) => *beta,
                    BScalar::Field(_) => {
                        return Err(QcError::UnsupportedModel(
                            "the incompressible planar energy reads β from the slope slot".into(),
                        ))
                    }
                };
                state.d.data.iter().map(|&dv| beta * dv).collect()
            }
            _ => state.c.data.clone(),
        };
        let planar = matches!(
            model.kind,
            ModelKind::QcPlanar | ModelKind::QcPlanarIncompressible | ModelKind::PureStatePlanar
        );
        let n = rho.n;
        let nn = n * n;
        let mut rho_t = MatrixField::zeros(grid, n);
        for cell in 0..grid.len() {
            let dv = state.d.data[cell];
            let src = &rho.data[cell * nn..(cell + 1) * nn];
            let dst = &mut rho_t.data[cell * nn..(cell + 1) * nn];
            for e in 0..nn {
                dst[e] = src[e] * dv;
            }
        }
        let gt = rho_t.grad_h();
        let gh = ham.grad_h();
        let gb = state.b.grad(grid);
        let mut q = matbuf();
        for cell in 0..grid.len() {
            let d = state.d.data[cell];
            if planar {
                // {ρ̃,Ĥ}pl = ∂ₓρ̃ ∂_yĤ − ∂_yρ̃ ∂ₓĤ
                crate::brackets::planar_matrix_into(
                    n,
                    gt[0].mat(cell),
                    gt[1].mat(cell),
                    gh[0].mat(cell),
                    gh[1].mat(cell),
                    &mut q,
                );
            } else {
                let gbv = [gb.data[0][cell], gb.data[1][cell], gb.data[2][cell]];
                nambu_matrix_into(
                    n,
                    gbv,
                    [gt[0].mat(cell), gt[1].mat(cell), gt[2].mat(cell)],
                    [gh[0].mat(cell), gh[1].mat(cell), gh[2].mat(cell)],
                    &mut q,
                );
            }
            // ⟨ρ̃, i{ρ̃,Ĥ}⟩ = −Im Tr(ρ̃{ρ̃,Ĥ}) for Hermitian ρ̃
            total +=
                ham.hbar * weight[cell] / (d * d) * (-inner_im(rho_t.mat(cell), &q[..nn]));
        }
    }
    Ok(total * grid.cell_volume())
}

/// C1 = Tr∫D F(ρ̂) d³q.
pub fn casimir_c1(state: &HybridState, f: C1Preset) -> Result<f64> {
    check_positive(&state.d)?;
    let rho = rho_of(state);
    let n = rho.n;
    let mut total = 0.0;
    for cell in 0..state.grid().len() {
        let m = rho.mat(cell);
        let trf = match f {
            C1Preset::Identity => (0..n).map(|r| m[r * n + r].re).sum::<f64>(),
            // Tr ρ̂² = Σ|ρ̂_ij|² for Hermitian ρ̂
            C1Preset::Square => m.iter().map(|z| z.norm_sqr()).sum::<f64>(),
        };
        total += state.d.data[cell] * trf;
    }
    Ok(total * state.grid().cell_volume())
}

/// One application of the transport kernel D⁻¹(∇c×∇b)·∇ to a scalar field;
/// planar states carry c̃ in the c slot and the kernel collapses to the
/// planar bracket D⁻¹{f, c̃}.
fn lambda_kernel(state: &HybridState, f: &ScalarField) -> ScalarField {
    let grid = state.grid();
    let gf = f.grad();
    let gc = state.c.grad();
    let mut out = ScalarField::zeros(grid);
    if grid.is_planar() {
        for cell in 0..grid.len() {
            let br = gf.data[0][cell] * gc.data[1][cell] - gf.data[1][cell] * gc.data[0][cell];
            out.data[cell] = br / state.d.data[cell];
        }
    } else {
        let gb = state.b.grad(grid);
        for cell in 0..grid.len() {
            let w = cross(
                [gc.data[0][cell], gc.data[1][cell], gc.data[2][cell]],
                [gb.data[0][cell], gb.data[1][cell], gb.data[2][cell]],
            );
            out.data[cell] = (w[0] * gf.data[0][cell]
                + w[1] * gf.data[1][cell]
                + w[2] * gf.data[2][cell])
                / state.d.data[cell];
        }
    }
    out
}

/// Λ_n = (D⁻¹∇c×∇b·∇)ⁿ ‖ρ̂‖_F for n ∈ {1, 2}; an advected scalar of the
/// hybrid flow, identically zero for pure states.
pub fn lambda_n(state: &HybridState, n: usize) -> Result<ScalarField> {
    if n == 0 || n > 2 {
        return Err(QcError::UnsupportedOperation(format!(
            "lambda_n supports n in {{1, 2}}, got {n}"
        )));
    }
    check_positive(&state.d)?;
    let rho = rho_of(state);
    let mut f = ScalarField::zeros(state.grid());
    for cell in 0..state.grid().len() {
        f.data[cell] = fro_norm(rho.mat(cell));
    }
    for _ in 0..n {
        f = lambda_kernel(state, &f);
    }
    Ok(f)
}

/// C2 = ∫D Φ(b, c, Λ₁) d³q over the fixed Φ catalogue.
pub fn casimir_c2(state: &HybridState, phi: C2Preset) -> Result<f64> {
    check_positive(&state.d)?;
    let grid = state.grid();
    let integrand: Vec<f64> = match phi {
        C2Preset::BC => {
            let b = b_values(state);
            (0..grid.len()).map(|cell| b[cell] * state.c.data[cell]).collect()
        }
        C2Preset::BSquared => b_values(state).iter().map(|&b| b * b).collect(),
        C2Preset::CLambda1 => {
            let l1 = lambda_n(state, 1)?;
            (0..grid.len()).map(|cell| state.c.data[cell] * l1.data[cell]).collect()
        }
    };
    let mut total = 0.0;
    for cell in 0..grid.len() {
        total += state.d.data[cell] * integrand[cell];
    }
    Ok(total * grid.cell_volume())
}

/// Cross helicity C3 = ∫(Mu − 𝐀)·(∇c×∇b) d³q; pure-state 3D states only,
/// since the Berry connection 𝐀 needs a phase.
pub fn cross_helicity(state: &HybridState, ham: &HybridHamiltonian) -> Result<f64> {
    let grid = state.grid();
    if grid.is_planar() {
        return Err(QcError::UnsupportedOperation(
            "cross helicity is the 3D invariant; planar runs use the vorticity Casimir".into(),
        ));
    }
    let psi = match &state.q {
        QuantumState::Pure(p) => p,
        QuantumState::Density(_) => {
            return Err(QcError::RequiresPureState(
                "cross helicity needs the Berry connection of a spinor state".into(),
            ))
        }
    };
    let a = berry_connection(psi, ham.hbar)?;
    let gc = state.c.grad();
    let gb = state.b.grad(grid);
    let mut total = 0.0;
    for cell in 0..grid.len() {
        let w = cross(
            [gc.data[0][cell], gc.data[1][cell], gc.data[2][cell]],
            [gb.data[0][cell], gb.data[1][cell], gb.data[2][cell]],
        );
        for ax in 0..3 {
            total += (ham.mass * state.u.data[ax][cell] - a.data[ax][cell]) * w[ax];
        }
    }
    Ok(total * grid.cell_volume())
}

// ---------------------------------------------------------------------------
// tracer loops and circulation

/// A closed polyline of K ≥ 32 tracer particles, advected with the flow.
#[derive(Clone, Debug)]
pub struct TracerLoop {
    pub points: Vec<[f64; 3]>,
}

/// Minimum number of nodes a tracer loop must carry.
pub const MIN_LOOP_NODES: usize = 32;

impl TracerLoop {
    /// Validate and wrap a closed polyline (the last node connects to the
    /// first implicitly; do not repeat it).
    pub fn new(grid: crate::grid::Grid, points: Vec<[f64; 3]>) -> Result<TracerLoop> {
        if points.len() < MIN_LOOP_NODES {
            return Err(QcError::UnsupportedOperation(format!(
                "tracer loops need at least {MIN_LOOP_NODES} nodes, got {}",
                points.len()
            )));
        }
        let lp = TracerLoop { points: points.into_iter().map(|p| grid.wrap_point(p)).collect() };
        lp.check_degenerate(grid)?;
        Ok(lp)
    }

    /// A circle of `k` nodes in the xy-plane.
    pub fn circle(
        grid: crate::grid::Grid,
        center: [f64; 3],
        radius: f64,
        k: usize,
    ) -> Result<TracerLoop> {
        let pts = (0..k)
            .map(|i| {
                let th = 2.0 * std::f64::consts::PI * i as f64 / k as f64;
                [center[0] + radius * th.cos(), center[1] + radius * th.sin(), center[2]]
            })
            .collect();
        TracerLoop::new(grid, pts)
    }

    fn check_degenerate(&self, grid: crate::grid::Grid) -> Result<()> {
        let tol = 1e-10 * grid.min_spacing();
        for a in 0..self.points.len() {
            for b in a + 1..self.points.len() {
                let d = grid.min_image(self.points[a], self.points[b]);
                if (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() < tol {
                    return Err(QcError::DegenerateLoop { a, b });
                }
            }
        }
        Ok(())
    }
}

/// Advance every loop node by one RK4 step on the interpolated velocity.
pub fn advect_loop(lp: &TracerLoop, u: &VectorField, dt: f64) -> TracerLoop {
    let grid = u.grid;
    let points = lp
        .points
        .iter()
        .map(|&p| {
            let k1 = u.interpolate(p);
            let k2 = u.interpolate(offset(p, k1, 0.5 * dt));
            let k3 = u.interpolate(offset(p, k2, 0.5 * dt));
            let k4 = u.interpolate(offset(p, k3, dt));
            let mut q = p;
            for ax in 0..3 {
                q[ax] += dt / 6.0 * (k1[ax] + 2.0 * k2[ax] + 2.0 * k3[ax] + k4[ax]);
            }
            grid.wrap_point(q)
        })
        .collect();
    TracerLoop { points }
}

fn offset(p: [f64; 3], v: [f64; 3], s: f64) -> [f64; 3] {
    [p[0] + s * v[0], p[1] + s * v[1], p[2] + s * v[2]]
}

/// Circulation ∮(Mu − 𝐀)·dq along the loop, by trapezoid quadrature of the
/// interpolated canonical momentum over each (minimum-image) segment.
pub fn circulation(
    state: &HybridState,
    ham: &HybridHamiltonian,
    lp: &TracerLoop,
) -> Result<f64> {
    let psi = match &state.q {
        QuantumState::Pure(p) => p,
        QuantumState::Density(_) => {
            return Err(QcError::RequiresPureState(
                "circulation needs the Berry connection of a spinor state".into(),
            ))
        }
    };
    let grid = state.grid();
    lp.check_degenerate(grid)?;
    let a = berry_connection(psi, ham.hbar)?;
    let w_at = |p: [f64; 3]| -> [f64; 3] {
        let uv = state.u.interpolate(p);
        let av = a.interpolate(p);
        [
            ham.mass * uv[0] - av[0],
            ham.mass * uv[1] - av[1],
            ham.mass * uv[2] - av[2],
        ]
    };
    let k = lp.points.len();
    let mut total = 0.0;
    let mut w_prev = w_at(lp.points[0]);
    for i in 0..k {
        let p0 = lp.points[i];
        let p1 = lp.points[(i + 1) % k];
        let w1 = w_at(p1);
        let seg = grid.min_image(p0, p1);
        for ax in 0..3 {
            total += 0.5 * (w_prev[ax] + w1[ax]) * seg[ax];
        }
        w_prev = w1;
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// totals, planar Casimirs, monitors

/// Box-integrated quantum and classical totals.
#[derive(Clone, Debug)]
pub struct Totals {
    /// ρ̂_tot = ∫Dρ̂ d³q / ∫D d³q.
    pub rho_tot: Matrix,
    /// ‖ρ̂_tot‖²_F, the purity of the mass-weighted mixture.
    pub purity: f64,
    /// ∫MDu d³q.
    pub momentum: [f64; 3],
    /// ∫D d³q.
    pub mass: f64,
}

/// Mass, momentum, the mass-weighted total density matrix and its purity.
pub fn totals(state: &HybridState, particle_mass: f64) -> Totals {
    let grid = state.grid();
    let rho = rho_of(state);
    let n = rho.n;
    let nn = n * n;
    let mut acc = Matrix::zeros(n);
    let mut mass = 0.0;
    let mut momentum = [0.0; 3];
    for cell in 0..grid.len() {
        let d = state.d.data[cell];
        mass += d;
        for ax in 0..3 {
            momentum[ax] += particle_mass * d * state.u.data[ax][cell];
        }
        let src = &rho.data[cell * nn..(cell + 1) * nn];
        for e in 0..nn {
            acc.data[e] += src[e] * d;
        }
    }
    let dv = grid.cell_volume();
    mass *= dv;
    for m in momentum.iter_mut() {
        *m *= dv;
    }
    let scale = if mass != 0.0 { dv / mass } else { 0.0 };
    for e in acc.data.iter_mut() {
        *e *= scale;
    }
    let purity = acc.data.iter().map(|z| z.norm_sqr()).sum();
    Totals { rho_tot: acc, purity, momentum, mass }
}

/// The expectation field ⟨σ̂_k⟩(x) for k ∈ {1, 2, 3} on two-level states.
pub fn sigma_expectation(state: &HybridState, k: usize) -> Result<ScalarField> {
    if state.n() != 2 {
        return Err(QcError::ShapeError(format!(
            "sigma_expectation needs n = 2, state has n = {}",
            state.n()
        )));
    }
    if !(1..=3).contains(&k) {
        return Err(QcError::UnsupportedOperation(format!(
            "sigma_expectation index must be 1, 2 or 3, got {k}"
        )));
    }
    let pb = PauliBasis::new();
    let sigma = &pb.sigma[k - 1];
    let grid = state.grid();
    let mut out = ScalarField::zeros(grid);
    match &state.q {
        QuantumState::Density(rho) => {
            for cell in 0..grid.len() {
                out.data[cell] = inner_re(&sigma.data, rho.mat(cell));
            }
        }
        QuantumState::Pure(psi) => {
            let mut tmp = matbuf();
            for cell in 0..grid.len() {
                let s = psi.sp(cell);
                matvec(2, &sigma.data, s, &mut tmp);
                out.data[cell] = (0..2)
                    .map(|r| s[r].re * tmp[r].re + s[r].im * tmp[r].im)
                    .sum();
            }
        }
    }
    Ok(out)
}

/// Planar Casimir ∫Ω Θ(c̃) d²q with the canonical vorticity
/// Ω = e₃·∇×(Mu − 𝐀); pure-state planar states only.
pub fn planar_casimir(
    state: &HybridState,
    ham: &HybridHamiltonian,
    theta: ThetaPreset,
) -> Result<f64> {
    let grid = state.grid();
    if !grid.is_planar() {
        return Err(QcError::UnsupportedOperation(
            "the vorticity Casimir is planar; 3D runs use cross helicity".into(),
        ));
    }
    let psi = match &state.q {
        QuantumState::Pure(p) => p,
        QuantumState::Density(_) => {
            return Err(QcError::RequiresPureState(
                "the vorticity Casimir needs the Berry connection of a spinor state".into(),
            ))
        }
    };
    let a = berry_connection(psi, ham.hbar)?;
    let mut w = VectorField::zeros(grid);
    for ax in 0..3 {
        for cell in 0..grid.len() {
            w.data[ax][cell] = ham.mass * state.u.data[ax][cell] - a.data[ax][cell];
        }
    }
    let omega = w.curl_z();
    let mut total = 0.0;
    for cell in 0..grid.len() {
        let th = match theta {
            ThetaPreset::One => 1.0,
            ThetaPreset::Identity => state.c.data[cell],
        };
        total += omega.data[cell] * th;
    }
    Ok(total * grid.cell_volume())
}

/// The classical density Casimir sample ∫D Φ(D) d³q with Φ(D) = D.
pub fn density_casimir(state: &HybridState) -> f64 {
    state.d.data.iter().map(|&d| d * d).sum::<f64>() * state.grid().cell_volume()
}

/// Worst pointwise defect of the quantum sector: Frobenius distance of ρ̂
/// from its Hermitian part, or |‖ψ‖ − 1| for spinor states.
pub fn hermiticity_error(state: &HybridState) -> f64 {
    match &state.q {
        QuantumState::Density(rho) => {
            let n = rho.n;
            let mut buf = matbuf();
            let mut worst = 0.0f64;
            for cell in 0..rho.grid.len() {
                buf[..n * n].copy_from_slice(rho.mat(cell));
                worst = worst.max(hermitize_in_place(n, &mut buf[..n * n]));
            }
            worst
        }
        QuantumState::Pure(psi) => {
            let n = psi.n;
            let mut worst = 0.0f64;
            for cell in 0..psi.grid.len() {
                let norm2: f64 =
                    psi.data[cell * n..(cell + 1) * n].iter().map(|z| z.norm_sqr()).sum();
                worst = worst.max((norm2.sqrt() - 1.0).abs());
            }
            worst
        }
    }
}

/// Smallest eigenvalue of the quantum sector over the whole grid. A spinor
/// state ψψ† is rank one, so the result is 0 for n ≥ 2 and min|ψ|² for n = 1.
pub fn min_quantum_eigenvalue(q: &QuantumState) -> Result<f64> {
    match q {
        QuantumState::Density(rho) => {
            let mut m = f64::INFINITY;
            for cell in 0..rho.grid.len() {
                m = m.min(min_eigenvalue(rho.n, rho.mat(cell))?);
            }
            Ok(m)
        }
        QuantumState::Pure(psi) => {
            if psi.n == 1 {
                let mut m = f64::INFINITY;
                for z in &psi.data {
                    m = m.min(z.norm_sqr());
                }
                Ok(m)
            } else {
                Ok(0.0)
            }
        }
    }
}

/// Total-momentum balance of the 3D hybrid models: returns (d/dt ∫MDu,
/// −∫⟨𝒟̂,∇Ĥ⟩) per axis; the two must agree under refinement, and to
/// roundoff for the stress-tensor form whose fluxes telescope exactly.
pub fn momentum_balance(
    state: &HybridState,
    ham: &HybridHamiltonian,
    model: &Model,
) -> Result<([f64; 3], [f64; 3])> {
    if !matches!(model.kind, ModelKind::Qc3d | ModelKind::Qc3dStressForm) {
        return Err(QcError::UnsupportedModel(
            "the momentum balance law is stated for the 3D hybrid models".into(),
        ));
    }
    let rho = match &state.q {
        QuantumState::Density(r) => r,
        QuantumState::Pure(_) => {
            return Err(QcError::UnsupportedModel(
                "the momentum balance law needs a density-matrix state".into(),
            ))
        }
    };
    let grid = state.grid();
    let rhs = model.rhs(state, ham)?;
    let du = &rhs.du;
    let dv = grid.cell_volume();
    let mut ddt = [0.0; 3];
    for ax in 0..3 {
        for cell in 0..grid.len() {
            // d(Du)/dt = Ḋu + Du̇ from the assembled right-hand side
            ddt[ax] += ham.mass
                * (rhs.dd.data[cell] * state.u.data[ax][cell]
                    + state.d.data[cell] * du.data[ax][cell]);
        }
        ddt[ax] *= dv;
    }
    let gb = state.b.grad(grid);
    let gamma = crate::brackets::mead_connection(rho, ham.hbar);
    let dhat = crate::brackets::von_neumann_with_grad(&state.d, rho, &gamma, &gb, &state.c);
    let gh = ham.grad_h();
    let mut force = [0.0; 3];
    for ax in 0..3 {
        for cell in 0..grid.len() {
            force[ax] -= inner_re(dhat.mat(cell), gh[ax].mat(cell));
        }
        force[ax] *= dv;
    }
    Ok((ddt, force))
}

// ---------------------------------------------------------------------------
// the per-tick record

/// One diagnostics sample; quantities that do not apply to the current mode
/// (cross helicity without a spinor, planar Casimirs on 3D grids, …) are NaN
/// and serialize as the literal `nan`.
#[derive(Clone, Debug)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub energy: f64,
    pub mass: f64,
    pub momentum: [f64; 3],
    pub c1_trace: f64,
    pub c1_square: f64,
    pub lambda1_max: f64,
    pub lambda2_max: f64,
    pub c2_bc: f64,
    pub c2_b_squared: f64,
    pub c2_c_lambda1: f64,
    pub cross_helicity: f64,
    pub planar_omega: f64,
    pub planar_omega_ct: f64,
    pub d_casimir: f64,
    pub rho_tot: Matrix,
    pub rho_tot_trace: f64,
    pub purity: f64,
    pub min_d: f64,
    pub min_eig_rho: f64,
    pub hermiticity_error: f64,
    pub norm_drift: f64,
    pub vacuum_floor_activations: usize,
    pub circulations: Vec<f64>,
}

/// Map a mode mismatch to NaN ("not applicable"); propagate real failures.
fn applicable(r: Result<f64>) -> Result<f64> {
    match r {
        Ok(v) => Ok(v),
        Err(QcError::RequiresPureState(_)) | Err(QcError::UnsupportedOperation(_)) => {
            Ok(f64::NAN)
        }
        Err(e) => Err(e),
    }
}

impl DiagnosticsRecord {
    /// Evaluate every functional on one state. `report` carries the step
    /// monitors when sampling mid-run; pass None for the initial state.
    pub fn compute(
        state: &HybridState,
        ham: &HybridHamiltonian,
        model: &Model,
        t: f64,
        loops: &[TracerLoop],
        report: Option<&StepReport>,
    ) -> Result<DiagnosticsRecord> {
        let tot = totals(state, ham.mass);
        let l1 = lambda_n(state, 1)?;
        let l2 = lambda_n(state, 2)?;
        let circulations = loops
            .iter()
            .map(|lp| applicable(circulation(state, ham, lp)))
            .collect::<Result<Vec<f64>>>()?;
        Ok(DiagnosticsRecord {
            t,
            energy: energy(state, ham, model)?,
            mass: tot.mass,
            momentum: tot.momentum,
            c1_trace: casimir_c1(state, C1Preset::Identity)?,
            c1_square: casimir_c1(state, C1Preset::Square)?,
            lambda1_max: l1.max_norm(),
            lambda2_max: l2.max_norm(),
            c2_bc: casimir_c2(state, C2Preset::BC)?,
            c2_b_squared: casimir_c2(state, C2Preset::BSquared)?,
            c2_c_lambda1: casimir_c2(state, C2Preset::CLambda1)?,
            cross_helicity: applicable(cross_helicity(state, ham))?,
            planar_omega: applicable(planar_casimir(state, ham, ThetaPreset::One))?,
            planar_omega_ct: applicable(planar_casimir(state, ham, ThetaPreset::Identity))?,
            d_casimir: density_casimir(state),
            rho_tot_trace: tot.rho_tot.trace().re,
            purity: tot.purity,
            rho_tot: tot.rho_tot,
            min_d: state.d.min(),
            min_eig_rho: min_quantum_eigenvalue(&state.q)?,
            hermiticity_error: hermiticity_error(state),
            norm_drift: report.map_or(0.0, |r| r.norm_drift),
            vacuum_floor_activations: report.map_or(0, |r| r.vacuum_floor_activations),
            circulations,
        })
    }
}
