use crate::error::{Error, Result};
use crate::params::{lorentz_gamma, sigma, sigma_slope, ParticleState, PhysicalParams};

/// Advance `u - (sigma/(b omega_c)) du/dt = (hbar/m) grad_theta` by `dt` with coefficients frozen over
/// the step. The velocity update is the exact exponential relaxation toward the guidance velocity;
/// the position moves with the mean of the old and new velocities.
pub fn step_particle(
    particle: &ParticleState,
    grad_theta: [f64; 3],
    theta: f64,
    params: &PhysicalParams,
    dt: f64,
) -> Result<ParticleState> {
    let s = params.scales();
    let limit = 0.1 / s.omega_c;
    if dt > limit * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt, limit });
    }
    let k = params.hbar / params.mass;
    let target = [k * grad_theta[0], k * grad_theta[1], k * grad_theta[2]];
    let slope = sigma_slope(params);
    let decay = if slope == 0.0 {
        // decoupled particle: no relaxation, the velocity is conserved
        1.0
    } else {
        (slope / sigma(theta, params) * s.omega_c * dt).exp()
    };
    let mut u = [0.0; 3];
    let mut q = particle.position;
    for a in 0..3 {
        u[a] = target[a] + (particle.velocity[a] - target[a]) * decay;
        q[a] += 0.5 * dt * (particle.velocity[a] + u[a]);
    }
    let gamma = lorentz_gamma(u, params.light_speed)?;
    Ok(ParticleState { position: q, velocity: u, gamma })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{norm3, CouplingKind};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn frozen_decay_rate() {
        let p = PhysicalParams::natural(1.0).unwrap();
        let dt = 0.05;
        let mut st = ParticleState::new([1.0; 3], [0.1, 0.0, 0.0], 1.0).unwrap();
        for _ in 0..200 {
            st = step_particle(&st, [0.0; 3], PI, &p, dt).unwrap();
        }
        // |b / sigma(pi)| omega_c = 1 / (3 pi)
        let expected = 0.1 * (-10.0 / (3.0 * PI)).exp();
        assert_relative_eq!(st.velocity[0], expected, max_relative = 1e-12);
        let travelled = st.position[0] - 1.0;
        let exact = 0.1 * 3.0 * PI * (1.0 - (-10.0 / (3.0 * PI)).exp());
        assert_relative_eq!(travelled, exact, max_relative = 1e-3);
    }

    #[test]
    fn guidance_velocity_is_a_stable_fixed_point() {
        let p = PhysicalParams::natural(2.0).unwrap();
        let k = [0.4, -0.2, 0.1];
        let mut st = ParticleState::new([1.0; 3], [0.0; 3], 2.0).unwrap();
        for n in 0..4000 {
            st = step_particle(&st, k, 0.3 + 0.01 * n as f64, &p, 0.02).unwrap();
        }
        for a in 0..3 {
            assert_relative_eq!(st.velocity[a], k[a], epsilon = 1e-12);
        }
        let at = ParticleState::new([1.0; 3], k, 2.0).unwrap();
        let next = step_particle(&at, k, 1.0, &p, 0.02).unwrap();
        assert_eq!(next.velocity, k);
    }

    #[test]
    fn rejects_coarse_steps() {
        let p = PhysicalParams::natural(10.0).unwrap();
        let st = ParticleState::at_rest([1.0; 3]);
        assert!(matches!(step_particle(&st, [0.0; 3], 1.0, &p, 2e-3), Err(Error::Cfl { .. })));
    }

    #[test]
    fn piecewise_coupling_grows_on_positive_branch() {
        let p = PhysicalParams::natural(1.0).unwrap().with_kind(CouplingKind::Piecewise);
        let st = ParticleState::new([1.0; 3], [0.1, 0.0, 0.0], 1.0).unwrap();
        assert!(step_particle(&st, [0.0; 3], 1.5 * PI, &p, 0.05).unwrap().speed() > 0.1);
        assert!(step_particle(&st, [0.0; 3], 0.5 * PI, &p, 0.05).unwrap().speed() < 0.1);
    }

    proptest::proptest! {
        #[test]
        fn speed_never_grows_without_force(theta in -20.0f64..20.0, ux in -0.5f64..0.5, uy in -0.5f64..0.5, dt in 1e-4f64..0.1) {
            let p = PhysicalParams::natural(1.0).unwrap();
            let st = ParticleState::new([1.0; 3], [ux, uy, 0.0], 1.0).unwrap();
            let next = step_particle(&st, [0.0; 3], theta, &p, dt).unwrap();
            proptest::prop_assert!(norm3(next.velocity) <= norm3(st.velocity));
        }
    }
}
