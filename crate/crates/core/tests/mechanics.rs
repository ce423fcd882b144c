use std::f64::consts::PI;

use nalgebra::DVector;
use proptest::prelude::*;

use softrigid::control::{equilibrium_solve, estimate_tip_force, force_setpoint};
use softrigid::coupling::{assemble_total_elastic, coupling_stiffness, CouplingFamily, CouplingSpec};
use softrigid::dynamics::{energies, gravity_vector, mass_matrix, Simulation, State};
use softrigid::model::{presets, select, SegmentRef};

fn angles(n: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-PI..PI, n).prop_map(DVector::from_vec)
}

fn family() -> impl Strategy<Value = CouplingFamily> {
    prop::sample::select(CouplingFamily::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mass_matrix_is_symmetric_positive_definite(q in angles(4)) {
        let model = presets::flipper(4);
        let m = mass_matrix(&model, &q).unwrap();
        prop_assert!((&m - m.transpose()).amax() < 1e-14);
        prop_assert!(m.symmetric_eigenvalues().min() > 0.0);
    }

    #[test]
    fn coupling_stiffness_is_symmetric(f in family(), q in angles(3)) {
        let model = presets::finger();
        let spec = CouplingSpec::segments(f, 1.7, SegmentRef::new(0, 0), SegmentRef::new(0, 2));
        let k = coupling_stiffness(&spec, &model, &q).unwrap();
        prop_assert!((&k - k.transpose()).amax() <= 1e-9 * k.amax().max(1.0));
    }

    #[test]
    fn damped_energy_never_grows(q in angles(3), qd in prop::collection::vec(-1.0..1.0f64, 3)) {
        let model = presets::finger();
        let s0 = State::new(q, DVector::from_vec(qd));
        let log = Simulation::new(&model, 1e-3)
            .run(&s0, &mut |_: &State| DVector::zeros(2), 500)
            .unwrap();
        for w in log.rows.windows(2) {
            prop_assert!(w[1].total_energy() <= w[0].total_energy() + 1e-9);
        }
    }

    #[test]
    fn equilibrium_balances_passive_forces(qa in prop::collection::vec(-1.5..1.5f64, 2)) {
        let model = presets::finger();
        let qa = DVector::from_vec(qa);
        let qu = equilibrium_solve(&model, &qa, &DVector::zeros(1)).unwrap();
        let q = DVector::from_vec(vec![qa[0], qa[1], qu[0]]);
        let elastic = assemble_total_elastic(&model, &q).unwrap().force;
        let net = select(&(gravity_vector(&model, &q).unwrap() + elastic), &model.unactuated());
        prop_assert!(net.amax() < 1e-8);
    }
}

#[test]
fn force_setpoint_reproduces_desired_estimate() {
    let model = presets::parallel_pair(CouplingFamily::Linear, 10.0, 1.5, 0.1).with_gravity([0.0, 0.0]);
    for f_d in [0.5, 1.5, 2.7] {
        let q_bar = force_setpoint(&model, -0.035, f_d).unwrap();
        let f_hat = estimate_tip_force(&model, &q_bar).unwrap();
        assert!((f_hat - f_d).abs() < 1e-9 * f_d, "{f_hat} vs {f_d}");
    }
}

#[test]
fn kinetic_energy_scales_quadratically() {
    let model = presets::finger();
    let q = DVector::from_vec(vec![0.3, -0.2, 0.9]);
    let qd = DVector::from_vec(vec![0.4, 0.1, -0.7]);
    let e1 = energies(&model, &q, &qd).unwrap();
    let e2 = energies(&model, &q, &(&qd * 3.0)).unwrap();
    approx::assert_relative_eq!(e2.kinetic, 9.0 * e1.kinetic, max_relative = 1e-12);
    assert_eq!(e1.elastic, e2.elastic);
}
