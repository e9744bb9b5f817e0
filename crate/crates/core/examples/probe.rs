//! Scratch probe: uniform-D β-independence of the incompressible classical sector.

use qcfluid::fields::ScalarField;
use qcfluid::grid::Grid;
use qcfluid::models::{
    rhs_qc_planar_incompressible, BScalar, Coupling, EquationOfState, HybridHamiltonian,
    HybridState, QuantumState, RhsQ,
};
use qcfluid::synth::{FieldSampler, TrigScalar};

fn main() {
    for &n in &[24usize, 32, 48] {
        let grid = Grid::new_2d(n, n, [1.0, 1.0]);
        let mut smp = FieldSampler::new(7);
        let u = smp.div_free_vector(grid, 3, 2, 0.3);
        let psi = smp.spinor_field(grid, 2, 3, 1);
        let c = smp.positive_scalar(grid, 3, 1, 0.2, 1.0);
        let d = ScalarField::from_fn(grid, |_, _, _| 1.0);
        let vi = TrigScalar::constant(0.0).offset_like(0.3, grid); // placeholder
        let _ = vi;
        let v0 = smp.trig(grid, 2, 1, 0.25, 0.0);
        let vi = smp.trig(grid, 2, 1, 0.35, 0.0);
        let bm = smp.hermitian_matrix(2, 0.8);
        let ham = HybridHamiltonian::new(
            grid,
            1.0,
            1.0,
            v0,
            2,
            vec![Coupling { profile: vi, matrix: bm }],
            EquationOfState::None,
        )
        .unwrap();

        let mk = |beta: f64| HybridState {
            d: d.clone(),
            u: u.clone(),
            q: QuantumState::Pure(psi.clone()),
            b: BScalar::Slope(beta),
            c: c.clone(),
        };
        let r0 = rhs_qc_planar_incompressible(&mk(0.0), &ham).unwrap();
        let r1 = rhs_qc_planar_incompressible(&mk(0.9), &ham).unwrap();
        let mut mdu = 0.0f64;
        for ax in 0..2 {
            for cell in 0..grid.len() {
                mdu = mdu.max((r1.du.data[ax][cell] - r0.du.data[ax][cell]).abs());
            }
        }
        let mut mdd = 0.0f64;
        for cell in 0..grid.len() {
            mdd = mdd.max((r1.dd.data[cell] - r0.dd.data[cell]).abs());
        }
        let (dq0, dq1) = match (&r0.dq, &r1.dq) {
            (RhsQ::Pure(a), RhsQ::Pure(b)) => (a, b),
            _ => unreachable!(),
        };
        let mut mdq = 0.0f64;
        for (a, b) in dq0.data.iter().zip(dq1.data.iter()) {
            mdq = mdq.max((a - b).norm());
        }
        println!("N={n:3}  max|d du|={mdu:.3e}  max|d dd|={mdd:.3e}  max|d dpsi|={mdq:.3e}");
    }
}
