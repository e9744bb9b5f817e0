//! Explicit RK4 time stepping over the full hybrid field bundle, with CFL
//! control, stage-wise Hermitization/renormalization, blow-up detection and
//! a per-step monitor report. The integrator is unconditionally
//! deterministic; the `deterministic` flag is echoed into run manifests so
//! output byte-stability can be asserted, it changes nothing here.

use serde::{Deserialize, Serialize};

use crate::error::{QcError, Result};
use crate::fields::ScalarField;
use crate::hermitian::{hermitize_in_place, matbuf};
use crate::models::{BScalar, HybridHamiltonian, HybridState, Model, QuantumState, Rhs, RhsQ};

/// Time-stepping parameters; `dt` is the requested step, an optional CFL cap
/// shrinks it when advection or acoustics demand.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_end: f64,
    pub cfl_cap: Option<f64>,
    pub hermitize_each_stage: bool,
    pub renormalize_psi: bool,
    pub deterministic: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            dt: 1e-3,
            t_end: 1.0,
            cfl_cap: None,
            hermitize_each_stage: true,
            renormalize_psi: true,
            deterministic: true,
        }
    }
}

impl IntegratorConfig {
    pub fn new(dt: f64, t_end: f64) -> IntegratorConfig {
        IntegratorConfig { dt, t_end, ..IntegratorConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(QcError::UnsupportedOperation(format!(
                "integrator config needs dt > 0, got {}",
                self.dt
            )));
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(QcError::UnsupportedOperation(format!(
                "integrator config needs t_end >= 0, got {}",
                self.t_end
            )));
        }
        if let Some(cap) = self.cfl_cap {
            if !(cap > 0.0 && cap <= 1.0) {
                return Err(QcError::UnsupportedOperation(format!(
                    "integrator config needs 0 < cfl_cap <= 1, got {cap}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-step monitor data; drifts are measured before any projection.
#[derive(Clone, Copy, Debug)]
pub struct StepReport {
    /// Time after the step.
    pub t: f64,
    pub dt_used: f64,
    /// Worst Frobenius distance of ρ̂ from its Hermitian part over the step.
    pub hermiticity_drift: f64,
    /// Worst |‖ψ‖ − 1| over the step (pure-state mode).
    pub norm_drift: f64,
    pub vacuum_floor_activations: usize,
    pub min_d: f64,
    pub min_eig_rho: f64,
}

/// Largest stable step: cfl_cap · Δx_min / max(|u| + c_s), clipped at the
/// configured dt; the configured dt when no cap is set or the state is quiet.
pub fn cfl_dt(state: &HybridState, ham: &HybridHamiltonian, cfg: &IntegratorConfig) -> f64 {
    let cap = match cfg.cfl_cap {
        Some(c) => c,
        None => return cfg.dt,
    };
    let mut vmax = 0.0f64;
    for cell in 0..state.grid().len() {
        let ux = state.u.data[0][cell];
        let uy = state.u.data[1][cell];
        let uz = state.u.data[2][cell];
        let cs2 = ham.eos.sound_speed_sq(state.d.data[cell]).max(0.0);
        vmax = vmax.max((ux * ux + uy * uy + uz * uz).sqrt() + cs2.sqrt());
    }
    if vmax <= 0.0 {
        return cfg.dt;
    }
    cfg.dt.min(cap * state.grid().min_spacing() / vmax)
}

/// One classical four-stage Runge–Kutta step of size `dt` from time `t`.
/// Stage states are hermitized/renormalized per the config flags; the
/// returned report carries the worst drift seen before those projections.
pub fn rk4_step(
    state: &HybridState,
    ham: &HybridHamiltonian,
    model: &Model,
    dt: f64,
    cfg: &IntegratorConfig,
    t: f64,
) -> Result<(HybridState, StepReport)> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(QcError::UnsupportedOperation(format!("rk4_step needs dt > 0, got {dt}")));
    }
    let mut hdrift = 0.0f64;
    let mut ndrift = 0.0f64;
    let mut floor_hits = 0usize;
    let mut track = |d: (f64, f64)| {
        hdrift = hdrift.max(d.0);
        ndrift = ndrift.max(d.1);
    };

    // accumulate y + dt/6(k1 + 2k2 + 2k3 + k4) so only one slope is alive
    let k1 = model.rhs(state, ham)?;
    floor_hits += k1.floor_hits;
    let mut acc = state_axpy(state, dt / 6.0, &k1);
    let mut s = state_axpy(state, 0.5 * dt, &k1);
    drop(k1);
    track(sanitize(&mut s, cfg));
    check_finite(&s, t + 0.5 * dt)?;

    let k2 = model.rhs(&s, ham)?;
    floor_hits += k2.floor_hits;
    acc_add(&mut acc, dt / 3.0, &k2);
    s = state_axpy(state, 0.5 * dt, &k2);
    drop(k2);
    track(sanitize(&mut s, cfg));
    check_finite(&s, t + 0.5 * dt)?;

    let k3 = model.rhs(&s, ham)?;
    floor_hits += k3.floor_hits;
    acc_add(&mut acc, dt / 3.0, &k3);
    s = state_axpy(state, dt, &k3);
    drop(k3);
    track(sanitize(&mut s, cfg));
    check_finite(&s, t + dt)?;

    let k4 = model.rhs(&s, ham)?;
    floor_hits += k4.floor_hits;
    drop(s);
    acc_add(&mut acc, dt / 6.0, &k4);
    drop(k4);

    track(sanitize(&mut acc, cfg));
    check_finite(&acc, t + dt)?;
    let min_d = acc.d.min();
    let min_eig_rho = crate::diagnostics::min_quantum_eigenvalue(&acc.q)?;
    let report = StepReport {
        t: t + dt,
        dt_used: dt,
        hermiticity_drift: hdrift,
        norm_drift: ndrift,
        vacuum_floor_activations: floor_hits,
        min_d,
        min_eig_rho,
    };
    Ok((acc, report))
}

/// Advance from t = 0 to t_end, invoking `on_step` after every step with the
/// 1-based step index. The caller samples the initial state itself, so a run
/// with t_end = 0 performs no work.
pub fn run(
    model: &Model,
    ham: &HybridHamiltonian,
    mut state: HybridState,
    cfg: &IntegratorConfig,
    mut on_step: impl FnMut(usize, &HybridState, &StepReport) -> Result<()>,
) -> Result<HybridState> {
    cfg.validate()?;
    let eps = 1e-12 * cfg.t_end.abs().max(cfg.dt);
    let mut t = 0.0;
    let mut istep = 0usize;
    while t + eps < cfg.t_end {
        let dt = cfl_dt(&state, ham, cfg).min(cfg.t_end - t);
        let (next, report) = rk4_step(&state, ham, model, dt, cfg, t)?;
        state = next;
        t = report.t;
        istep += 1;
        on_step(istep, &state, &report)?;
    }
    Ok(state)
}

// ---------------------------------------------------------------------------
// state algebra

fn axpy_scalar(base: &ScalarField, a: f64, k: &ScalarField) -> ScalarField {
    let mut out = base.clone();
    for (o, &kv) in out.data.iter_mut().zip(&k.data) {
        *o += a * kv;
    }
    out
}

/// base + a·k over every evolving component of the bundle.
fn state_axpy(base: &HybridState, a: f64, k: &Rhs) -> HybridState {
    let d = axpy_scalar(&base.d, a, &k.dd);
    let mut u = base.u.clone();
    for ax in 0..3 {
        for (o, &kv) in u.data[ax].iter_mut().zip(&k.du.data[ax]) {
            *o += a * kv;
        }
    }
    let q = match (&base.q, &k.dq) {
        (QuantumState::Density(r), RhsQ::Density(dr)) => {
            let mut out = r.clone();
            for (o, &kv) in out.data.iter_mut().zip(&dr.data) {
                *o += kv * a;
            }
            QuantumState::Density(out)
        }
        (QuantumState::Pure(p), RhsQ::Pure(dp)) => {
            let mut out = p.clone();
            for (o, &kv) in out.data.iter_mut().zip(&dp.data) {
                *o += kv * a;
            }
            QuantumState::Pure(out)
        }
        _ => unreachable!("model rhs matches the state representation"),
    };
    let b = match (&base.b, &k.db) {
        (BScalar::Field(bf), Some(db)) => BScalar::Field(axpy_scalar(bf, a, db)),
        (other, _) => other.clone(),
    };
    let c = axpy_scalar(&base.c, a, &k.dc);
    HybridState { d, u, q, b, c }
}

/// acc += a·k in place.
fn acc_add(acc: &mut HybridState, a: f64, k: &Rhs) {
    for (o, &kv) in acc.d.data.iter_mut().zip(&k.dd.data) {
        *o += a * kv;
    }
    for ax in 0..3 {
        for (o, &kv) in acc.u.data[ax].iter_mut().zip(&k.du.data[ax]) {
            *o += a * kv;
        }
    }
    match (&mut acc.q, &k.dq) {
        (QuantumState::Density(r), RhsQ::Density(dr)) => {
            for (o, &kv) in r.data.iter_mut().zip(&dr.data) {
                *o += kv * a;
            }
        }
        (QuantumState::Pure(p), RhsQ::Pure(dp)) => {
            for (o, &kv) in p.data.iter_mut().zip(&dp.data) {
                *o += kv * a;
            }
        }
        _ => unreachable!("model rhs matches the state representation"),
    }
    if let (BScalar::Field(bf), Some(db)) = (&mut acc.b, &k.db) {
        for (o, &kv) in bf.data.iter_mut().zip(&db.data) {
            *o += a * kv;
        }
    }
    for (o, &kv) in acc.c.data.iter_mut().zip(&k.dc.data) {
        *o += a * kv;
    }
}

/// Measure (and, per the flags, repair) Hermiticity / norm drift.
fn sanitize(state: &mut HybridState, cfg: &IntegratorConfig) -> (f64, f64) {
    let mut hdrift = 0.0f64;
    let mut ndrift = 0.0f64;
    match &mut state.q {
        QuantumState::Density(rho) => {
            let n = rho.n;
            if cfg.hermitize_each_stage {
                for cell in 0..rho.grid.len() {
                    hdrift = hdrift.max(hermitize_in_place(n, rho.mat_mut(cell)));
                }
            } else {
                let mut buf = matbuf();
                for cell in 0..rho.grid.len() {
                    buf[..n * n].copy_from_slice(rho.mat(cell));
                    hdrift = hdrift.max(hermitize_in_place(n, &mut buf[..n * n]));
                }
            }
        }
        QuantumState::Pure(psi) => {
            let n = psi.n;
            for cell in 0..psi.grid.len() {
                let s = &mut psi.data[cell * n..(cell + 1) * n];
                let norm = s.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                ndrift = ndrift.max((norm - 1.0).abs());
                // degenerate norms are left for the blow-up check to report
                if cfg.renormalize_psi && norm.is_finite() && norm > 0.0 {
                    let inv = 1.0 / norm;
                    for z in s.iter_mut() {
                        *z *= inv;
                    }
                }
            }
        }
    }
    (hdrift, ndrift)
}

fn check_finite(state: &HybridState, t: f64) -> Result<()> {
    let grid = state.grid();
    let bad = |cell: usize, what: &'static str| {
        let (i, j, k) = grid.cell_of(cell);
        Err(QcError::BlowUp { what, t, i, j, k })
    };
    for (cell, v) in state.d.data.iter().enumerate() {
        if !v.is_finite() {
            return bad(cell, "D");
        }
    }
    for ax in 0..3 {
        for (cell, v) in state.u.data[ax].iter().enumerate() {
            if !v.is_finite() {
                return bad(cell, "u");
            }
        }
    }
    match &state.q {
        QuantumState::Density(rho) => {
            let nn = rho.n * rho.n;
            for (e, z) in rho.data.iter().enumerate() {
                if !z.re.is_finite() || !z.im.is_finite() {
                    return bad(e / nn, "rho");
                }
            }
        }
        QuantumState::Pure(psi) => {
            for (e, z) in psi.data.iter().enumerate() {
                if !z.re.is_finite() || !z.im.is_finite() {
                    return bad(e / psi.n, "psi");
                }
            }
        }
    }
    if let BScalar::Field(bf) = &state.b {
        for (cell, v) in bf.data.iter().enumerate() {
            if !v.is_finite() {
                return bad(cell, "b");
            }
        }
    }
    for (cell, v) in state.c.data.iter().enumerate() {
        if !v.is_finite() {
            return bad(cell, "c");
        }
    }
    Ok(())
}
