//! Forced Klein-Gordon field, point source, continuous-component extraction and the relativistic particle.

mod extract;
mod lattice;
mod particle;
mod run;
mod source;

pub use extract::{continuous_component, particle_force, Analytic, PointSampler, SphericalRule};
pub use lattice::{lattice_green, LatticeGreen};
pub use particle::step_particle;
pub use run::{
    run_pilotwave, PilotWaveOutput, PilotWaveSetup, PilotWaveSimulation, PilotWaveState, ProbeSeries, Wavepacket,
};
pub use source::{delta_source, Mollifier, SourceKernel};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{ComplexField, Grid3, NodeAccess, RealField};
use crate::params::{ParticleState, PhysicalParams};
use crate::spectral::{LaplacianKind, SpectralBasis};

#[derive(Debug, Clone)]
pub struct RawFieldState {
    pub phi: ComplexField,
    pub phi_dot: ComplexField,
    pub particle: ParticleState,
    pub time: f64,
}

/// Velocity-Verlet stepper for `phi_tt = c^2 (beta lap_h phi - M^2 phi - W phi + S)`.
///
/// With `matched` set, `M^2 = (2/(c dt))^2 sin^2(omega_c dt/2)` and `beta = sin(x)/x` with `x = omega_c dt`,
/// so the uniform mode oscillates at exactly `omega_c` and slow envelopes follow the free
/// Schrodinger dispersion to first order in the Laplacian eigenvalue. Otherwise `M = k_c`, `beta = 1`.
#[derive(Debug, Clone)]
pub struct KleinGordonStepper {
    grid: Grid3,
    c: f64,
    dt: f64,
    beta: f64,
    mass2: f64,
    /// `(k_c + V/(hbar c))^2 - k_c^2` per node, absent for V = 0.
    shift: Option<Vec<f64>>,
}

/// Classic bound `h_min / (c sqrt 3)`.
pub fn cfl_limit(grid: &Grid3, c: f64) -> f64 {
    grid.min_spacing() / (c * 3f64.sqrt())
}

impl KleinGordonStepper {
    pub fn new(grid: &Grid3, params: &PhysicalParams, dt: f64, matched: bool, potential: Option<&RealField>) -> Result<Self> {
        let s = params.scales();
        let c = params.light_speed;
        if !(dt > 0.0) {
            return Err(Error::InvalidParams(format!("dt must be positive, got {dt}")));
        }
        let limit = cfl_limit(grid, c);
        if dt > limit {
            return Err(Error::Cfl { dt, limit });
        }
        let (beta, mass2) = if matched {
            let x = s.omega_c * dt;
            if x >= std::f64::consts::PI {
                return Err(Error::Cfl { dt, limit: std::f64::consts::PI / s.omega_c });
            }
            let m = 2.0 / (c * dt) * (0.5 * x).sin();
            (x.sin() / x, m * m)
        } else {
            (1.0, s.k_c * s.k_c)
        };
        let shift = potential.filter(|v| !v.is_zero()).map(|v| {
            v.values()
                .iter()
                .map(|vi| {
                    let k = s.k_c + vi / (params.hbar * c);
                    k * k - s.k_c * s.k_c
                })
                .collect::<Vec<f64>>()
        });
        let stepper = KleinGordonStepper { grid: grid.clone(), c, dt, beta, mass2, shift };
        let vn = stepper.stability_limit();
        if dt >= vn {
            return Err(Error::Cfl { dt, limit: vn });
        }
        Ok(stepper)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn mass2(&self) -> f64 {
        self.mass2
    }
    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }
    pub fn light_speed(&self) -> f64 {
        self.c
    }

    /// Exact leapfrog bound `2 / omega_max` for the discrete operator.
    pub fn stability_limit(&self) -> f64 {
        let h = self.grid.spacing();
        let lap_max: f64 = h.iter().map(|hi| 4.0 / (hi * hi)).sum();
        let shift_max = self.shift.as_ref().map_or(0.0, |s| s.iter().copied().fold(0.0, f64::max));
        2.0 / (self.c * (self.beta * lap_max + self.mass2 + shift_max).sqrt())
    }

    /// `phi_tt` for the given field and source.
    pub fn acceleration(&self, phi: &ComplexField, source: Option<&SourceKernel>) -> ComplexField {
        let g = &self.grid;
        let h = g.spacing();
        let inv = [1.0 / (h[0] * h[0]), 1.0 / (h[1] * h[1]), 1.0 / (h[2] * h[2])];
        let c2 = self.c * self.c;
        let vals: Vec<Complex64> = (0..g.len())
            .into_par_iter()
            .map(|idx| {
                let ci = g.coords(idx);
                if g.is_boundary_node(ci) {
                    return Complex64::new(0.0, 0.0);
                }
                let p = [ci[0] as isize, ci[1] as isize, ci[2] as isize];
                let v = phi.values()[idx];
                let mut lap = Complex64::new(0.0, 0.0);
                for a in 0..3 {
                    let mut lo = p;
                    let mut hi = p;
                    lo[a] -= 1;
                    hi[a] += 1;
                    lap += (phi.node(lo) + phi.node(hi) - 2.0 * v) * inv[a];
                }
                let mut m2 = self.mass2;
                if let Some(s) = &self.shift {
                    m2 += s[idx];
                }
                c2 * (self.beta * lap - m2 * v)
            })
            .collect();
        let mut acc = ComplexField::from_values(g, vals).expect("size");
        if let Some(src) = source {
            src.add_to(&mut acc, c2);
        }
        acc
    }

    /// `phi_dot += (dt/2) phi_tt`.
    pub fn half_kick(&self, state: &mut RawFieldState, source: Option<&SourceKernel>) {
        let a = self.acceleration(&state.phi, source);
        let hdt = 0.5 * self.dt;
        state
            .phi_dot
            .values_mut()
            .par_iter_mut()
            .zip(a.values().par_iter())
            .for_each(|(v, ai)| *v += hdt * ai);
    }

    /// `phi += dt phi_dot`, advancing the clock.
    pub fn drift(&self, state: &mut RawFieldState) {
        let dt = self.dt;
        let pd = state.phi_dot.values();
        state.phi.values_mut().par_iter_mut().zip(pd.par_iter()).for_each(|(p, v)| *p += dt * v);
        state.phi.enforce_boundary();
        state.time += dt;
    }

    /// Discrete field energy `m k_c sum (|phi_dot|^2 + c^2 beta |grad_h phi|^2 + c^2 (M^2 + W) |phi|^2) dV`
    /// using forward differences for the gradient.
    pub fn energy(&self, state: &RawFieldState, params: &PhysicalParams) -> f64 {
        let g = &self.grid;
        let h = g.spacing();
        let c2 = self.c * self.c;
        let phi = &state.phi;
        let sum: f64 = (0..g.len())
            .into_par_iter()
            .map(|idx| {
                let ci = g.coords(idx);
                let p = [ci[0] as isize, ci[1] as isize, ci[2] as isize];
                let v = phi.values()[idx];
                let mut grad2 = 0.0;
                for a in 0..3 {
                    let mut hi = p;
                    hi[a] += 1;
                    grad2 += ((phi.node(hi) - v) / h[a]).norm_sqr();
                }
                let mut m2 = self.mass2;
                if let Some(s) = &self.shift {
                    m2 += s[idx];
                }
                state.phi_dot.values()[idx].norm_sqr() + c2 * self.beta * grad2 + c2 * m2 * v.norm_sqr()
            })
            .sum();
        params.mass * params.scales().k_c * sum * g.cell_volume()
    }

    /// Positive-frequency velocity for `phi` in the source-free, potential-free discrete dynamics.
    pub fn positive_frequency_velocity(&self, phi: &ComplexField) -> ComplexField {
        let basis = SpectralBasis::new(&self.grid, LaplacianKind::SevenPoint);
        let mut coeffs = basis.forward(phi);
        let dt = self.dt;
        coeffs.par_iter_mut().enumerate().for_each(|(i, v)| {
            let w = self.c * (self.beta * basis.eigenvalue(i) + self.mass2).sqrt();
            let omega = 2.0 / dt * (0.5 * dt * w).min(1.0).asin();
            *v *= Complex64::new(0.0, -(omega * dt).sin() / dt);
        });
        basis.inverse(&coeffs)
    }
}

/// One kick-drift-kick step with a source held fixed over the step.
pub fn step_klein_gordon(
    stepper: &KleinGordonStepper,
    state: &RawFieldState,
    source: Option<&SourceKernel>,
) -> RawFieldState {
    let mut next = state.clone();
    stepper.half_kick(&mut next, source);
    stepper.drift(&mut next);
    stepper.half_kick(&mut next, source);
    next
}
