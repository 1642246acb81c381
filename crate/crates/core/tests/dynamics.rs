use std::f64::consts::PI;

use num_complex::Complex64;
use pilotwave::grid::{Boundary, ComplexField, Grid3};
use pilotwave::kleingordon::{PilotWaveSetup, PilotWaveSimulation};
use pilotwave::params::PhysicalParams;
use pilotwave::schrodinger::{integrate_bohmian, BohmianState, SchrodingerSolver};
use pilotwave::spectral::LaplacianKind;

fn two_mode(g: &Grid3) -> ComplexField {
    let l = g.extent()[0];
    ComplexField::from_fn(g, |x| {
        let s = |k: f64, v: f64| (k * PI * v / l).sin();
        Complex64::new(s(1.0, x[0]) * s(1.0, x[1]) * s(1.0, x[2]), s(2.0, x[0]) * s(1.0, x[1]) * s(1.0, x[2]))
    })
}

#[test]
fn bohmian_trajectory_ignores_global_phase() {
    let g = Grid3::cube(2.0 * PI, 16, Boundary::DirichletZero).unwrap();
    let p = PhysicalParams::natural(10.0).unwrap();
    let solver = SchrodingerSolver::new(&g, &p, LaplacianKind::SevenPoint, None);
    let psi = two_mode(&g);
    let rot = Complex64::from_polar(1.0, 1.234);
    let q0 = [2.2, 3.1, 3.0];
    let (a, _) = integrate_bohmian(&solver, BohmianState::new(psi.clone(), q0).unwrap(), 0.5, 1e-3, &p).unwrap();
    let (b, _) = integrate_bohmian(&solver, BohmianState::new(psi.map(|v| v * rot), q0).unwrap(), 0.5, 1e-3, &p).unwrap();
    for (qa, qb) in a.positions.iter().zip(&b.positions) {
        for k in 0..3 {
            assert!((qa[k] - qb[k]).abs() < 1e-10, "{qa:?} vs {qb:?}");
        }
    }
}

#[test]
fn pilot_wave_phase_shift_moves_theta_but_not_its_gradient() {
    let g = Grid3::cube(2.0 * PI, 16, Boundary::DirichletZero).unwrap();
    let p = PhysicalParams::natural(10.0).unwrap();
    let psi = two_mode(&g);
    let beta = 0.8;
    let q0 = [2.2, 3.1, 3.0];
    let a = PilotWaveSimulation::new(PilotWaveSetup::new(p.clone(), psi.clone(), q0)).unwrap();
    let shifted = psi.map(|v| v * Complex64::from_polar(1.0, beta));
    let b = PilotWaveSimulation::new(PilotWaveSetup::new(p, shifted, q0)).unwrap();
    let ga = a.grad_theta();
    let gb = b.grad_theta();
    for k in 0..3 {
        assert!((ga[k] - gb[k]).abs() < 1e-9 * (1.0 + ga[k].abs()), "{ga:?} vs {gb:?}");
    }
    let dtheta = pilotwave::params::wrap_phase(b.theta() - a.theta());
    assert!((dtheta - beta).abs() < 1e-9, "{dtheta}");
}
