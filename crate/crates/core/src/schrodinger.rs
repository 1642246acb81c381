//! Schrodinger evolution, Bohmian guidance and Born sampling.

use num_complex::Complex64;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{
    interpolate, interpolate_gradient, phase_gradient, Boundary, ComplexField, Grid3, NodeAccess, RealField,
    NODE_TOLERANCE,
};
use crate::params::{step_count, ParticleState, PhysicalParams};
use crate::spectral::{LaplacianKind, SpectralBasis};
use crate::trajectory::TrajectoryRecord;

#[derive(Debug, Clone)]
pub struct BohmianState {
    pub psi: ComplexField,
    pub particle: ParticleState,
    pub time: f64,
}

impl BohmianState {
    pub fn new(psi: ComplexField, position: [f64; 3]) -> Result<Self> {
        if !psi.grid().contains(position) {
            return Err(Error::OutsideDomain(position));
        }
        Ok(BohmianState { psi, particle: ParticleState::at_rest(position), time: 0.0 })
    }
}

/// Crank-Nicolson propagator diagonalised in the Laplacian eigenbasis; Strang-split when a potential is present.
#[derive(Debug)]
pub struct SchrodingerSolver {
    basis: SpectralBasis,
    hbar: f64,
    mass: f64,
    potential: Option<RealField>,
}

impl SchrodingerSolver {
    pub fn new(grid: &Grid3, params: &PhysicalParams, kind: LaplacianKind, potential: Option<RealField>) -> Self {
        let potential = potential.filter(|v| !v.is_zero());
        SchrodingerSolver { basis: SpectralBasis::new(grid, kind), hbar: params.hbar, mass: params.mass, potential }
    }

    pub fn grid(&self) -> &Grid3 {
        self.basis.grid()
    }

    pub fn basis(&self) -> &SpectralBasis {
        &self.basis
    }

    /// Energy of each Laplacian eigenmode, `hbar^2 lambda / 2m`.
    pub fn mode_energy(&self, idx: usize) -> f64 {
        self.hbar * self.hbar * self.basis.eigenvalue(idx) / (2.0 * self.mass)
    }

    fn multipliers(&self, dt: f64) -> Vec<Complex64> {
        let c = self.hbar * dt / (4.0 * self.mass);
        (0..self.basis.len())
            .into_par_iter()
            .map(|i| {
                let z = Complex64::new(0.0, c * self.basis.eigenvalue(i));
                (1.0 - z) / (1.0 + z)
            })
            .collect()
    }

    pub fn step(&self, psi: &ComplexField, dt: f64) -> ComplexField {
        let mut p = self.propagator(psi.clone(), dt);
        p.advance();
        p.into_psi()
    }

    pub fn propagator(&self, psi: ComplexField, dt: f64) -> Propagator<'_> {
        let half_phase = self.potential.as_ref().map(|v| {
            v.values()
                .par_iter()
                .map(|&vi| Complex64::from_polar(1.0, -vi * dt / (2.0 * self.hbar)))
                .collect()
        });
        let coeffs = if half_phase.is_none() { Some(self.basis.forward(&psi)) } else { None };
        Propagator { solver: self, mult: self.multipliers(dt), half_phase, coeffs, psi }
    }
}

/// Stateful stepper; keeps mode coefficients between steps when the potential vanishes.
pub struct Propagator<'a> {
    solver: &'a SchrodingerSolver,
    mult: Vec<Complex64>,
    half_phase: Option<Vec<Complex64>>,
    coeffs: Option<Vec<Complex64>>,
    psi: ComplexField,
}

impl Propagator<'_> {
    pub fn psi(&self) -> &ComplexField {
        &self.psi
    }

    pub fn into_psi(self) -> ComplexField {
        self.psi
    }

    pub fn advance(&mut self) {
        let basis = &self.solver.basis;
        match (&mut self.coeffs, &self.half_phase) {
            (Some(c), _) => {
                c.par_iter_mut().zip(self.mult.par_iter()).for_each(|(v, m)| *v *= m);
                self.psi = basis.inverse(c);
            }
            (None, Some(ph)) => {
                let apply = |f: &mut ComplexField| {
                    f.values_mut().par_iter_mut().zip(ph.par_iter()).for_each(|(v, p)| *v *= p)
                };
                apply(&mut self.psi);
                let mut c = basis.forward(&self.psi);
                c.par_iter_mut().zip(self.mult.par_iter()).for_each(|(v, m)| *v *= m);
                self.psi = basis.inverse(&c);
                apply(&mut self.psi);
            }
            (None, None) => unreachable!("propagator without coefficients or potential"),
        }
    }
}

/// One step with a fresh solver; prefer [`SchrodingerSolver`] for repeated use.
pub fn step_schrodinger(
    psi: &ComplexField,
    dt: f64,
    potential: Option<&RealField>,
    params: &PhysicalParams,
) -> ComplexField {
    SchrodingerSolver::new(psi.grid(), params, LaplacianKind::Spectral, potential.cloned()).step(psi, dt)
}

pub fn bohm_velocity(psi: &ComplexField, q: [f64; 3], params: &PhysicalParams) -> Result<[f64; 3]> {
    let tol = NODE_TOLERANCE * psi.max_abs();
    velocity_with_tolerance(psi, q, params, tol)
}

fn velocity_with_tolerance<F: NodeAccess + ?Sized>(
    f: &F,
    q: [f64; 3],
    params: &PhysicalParams,
    tol: f64,
) -> Result<[f64; 3]> {
    let g = phase_gradient(f, q, tol)?;
    let s = params.hbar / params.mass;
    Ok([s * g[0], s * g[1], s * g[2]])
}

/// Average of two fields evaluated lazily at nodes.
struct Midpoint<'a>(&'a ComplexField, &'a ComplexField);

impl NodeAccess for Midpoint<'_> {
    fn grid(&self) -> &Grid3 {
        self.0.grid()
    }
    fn node(&self, ijk: [isize; 3]) -> Complex64 {
        0.5 * (self.0.node(ijk) + self.1.node(ijk))
    }
}

fn abs_gradient<F: NodeAccess + ?Sized>(f: &F, q: [f64; 3]) -> f64 {
    let g = interpolate_gradient(f, q);
    (g[0].norm_sqr() + g[1].norm_sqr() + g[2].norm_sqr()).sqrt()
}

fn advance_position(grid: &Grid3, q: [f64; 3], u: [f64; 3], dt: f64) -> Result<[f64; 3]> {
    let next = grid.wrap([q[0] + dt * u[0], q[1] + dt * u[1], q[2] + dt * u[2]]);
    if !grid.contains(next) {
        return Err(Error::OutsideDomain(next));
    }
    Ok(next)
}

/// Co-evolve psi and the guided particle for `t_end` with about `dt` per step.
pub fn integrate_bohmian(
    solver: &SchrodingerSolver,
    state: BohmianState,
    t_end: f64,
    dt: f64,
    params: &PhysicalParams,
) -> Result<(TrajectoryRecord, BohmianState)> {
    integrate_bohmian_observed(solver, state, t_end, dt, params, 0, &mut |_| Ok(()))
}

/// As [`integrate_bohmian`], calling `observer` on the state every `every` steps (0 disables it).
pub fn integrate_bohmian_observed(
    solver: &SchrodingerSolver,
    state: BohmianState,
    t_end: f64,
    dt: f64,
    params: &PhysicalParams,
    every: usize,
    observer: &mut dyn FnMut(&BohmianState) -> Result<()>,
) -> Result<(TrajectoryRecord, BohmianState)> {
    if !(dt > 0.0 && t_end >= 0.0) {
        return Err(Error::InvalidParams(format!("need dt > 0 and T >= 0 (dt = {dt}, T = {t_end})")));
    }
    let steps = step_count(t_end, dt);
    let dt = if steps > 0 { t_end / steps as f64 } else { dt };
    let grid = solver.grid().clone();
    let t0 = state.time;
    let mut q = state.particle.position;
    let tol = NODE_TOLERANCE * state.psi.max_abs();

    let mut rec = TrajectoryRecord::default();
    let mut u = velocity_with_tolerance(&state.psi, q, params, tol).map_err(|e| e.at_time(t0))?;
    rec.push(t0, q, u, interpolate(&state.psi, q).norm(), abs_gradient(&state.psi, q));
    let current = BohmianState { particle: ParticleState { position: q, velocity: u, gamma: 1.0 }, ..state };
    if every > 0 {
        observer(&current)?;
    }
    let mut prop = solver.propagator(current.psi.clone(), dt);
    let mut prev = current.psi;
    for n in 1..=steps {
        let t = t0 + n as f64 * dt;
        prop.advance();
        let next = prop.psi();
        let tol = NODE_TOLERANCE * prev.max_abs();
        let half = advance_position(&grid, q, u, 0.5 * dt).map_err(|e| e.at_time(t))?;
        let mid = Midpoint(&prev, next);
        let u_mid = velocity_with_tolerance(&mid, half, params, tol).map_err(|e| e.at_time(t))?;
        q = advance_position(&grid, q, u_mid, dt).map_err(|e| e.at_time(t))?;
        u = velocity_with_tolerance(next, q, params, tol).map_err(|e| e.at_time(t))?;
        rec.push(t, q, u, interpolate(next, q).norm(), abs_gradient(next, q));
        prev = next.clone();
        if every > 0 && n % every == 0 {
            let snap = BohmianState { psi: prev.clone(), particle: ParticleState::at_rest(q), time: t };
            observer(&snap)?;
        }
    }
    let particle = ParticleState { position: q, velocity: u, gamma: 1.0 };
    Ok((rec, BohmianState { psi: prev, particle, time: t0 + steps as f64 * dt }))
}

/// Advect an ensemble of guided particles alongside one evolution of `psi`. Particles that come
/// within the node tolerance or leave the domain are dropped (`None`).
pub fn advect_ensemble(
    solver: &SchrodingerSolver,
    psi: ComplexField,
    positions: &[[f64; 3]],
    t_end: f64,
    dt: f64,
    params: &PhysicalParams,
) -> Result<(ComplexField, Vec<Option<[f64; 3]>>)> {
    if !(dt > 0.0 && t_end >= 0.0) {
        return Err(Error::InvalidParams(format!("need dt > 0 and T >= 0 (dt = {dt}, T = {t_end})")));
    }
    let steps = step_count(t_end, dt);
    let dt = if steps > 0 { t_end / steps as f64 } else { dt };
    let grid = solver.grid().clone();
    let tol = NODE_TOLERANCE * psi.max_abs();
    let mut qs: Vec<Option<([f64; 3], [f64; 3])>> = positions
        .par_iter()
        .map(|&q| velocity_with_tolerance(&psi, q, params, tol).ok().map(|u| (q, u)))
        .collect();
    let mut prop = solver.propagator(psi.clone(), dt);
    let mut prev = psi;
    for _ in 0..steps {
        prop.advance();
        let next = prop.psi();
        let tol = NODE_TOLERANCE * prev.max_abs();
        let mid = Midpoint(&prev, next);
        qs = qs
            .into_par_iter()
            .map(|slot| {
                let (q, u) = slot?;
                let half = advance_position(&grid, q, u, 0.5 * dt).ok()?;
                let u_mid = velocity_with_tolerance(&mid, half, params, tol).ok()?;
                let q = advance_position(&grid, q, u_mid, dt).ok()?;
                let u = velocity_with_tolerance(next, q, params, tol).ok()?;
                Some((q, u))
            })
            .collect();
        prev = next.clone();
    }
    Ok((prev, qs.into_iter().map(|s| s.map(|(q, _)| q)).collect()))
}

/// Per-cell upper bound of `|psi|^2` on the trilinear interpolant and the cell's lower corner.
fn density_envelope(psi: &ComplexField) -> (Vec<[usize; 3]>, Vec<f64>) {
    let g = psi.grid();
    let n = g.points();
    let cells_per_axis = |a: usize| match g.boundary() {
        Boundary::DirichletZero => n[a] - 1,
        Boundary::Periodic => n[a],
    };
    let (cx, cy, cz) = (cells_per_axis(0), cells_per_axis(1), cells_per_axis(2));
    let corners: Vec<[usize; 3]> = (0..cx * cy * cz).map(|i| [i % cx, (i / cx) % cy, i / (cx * cy)]).collect();
    let env = corners
        .par_iter()
        .map(|c| {
            let mut m: f64 = 0.0;
            for d in 0..8 {
                let ijk = [
                    (c[0] + (d & 1)) as isize,
                    (c[1] + ((d >> 1) & 1)) as isize,
                    (c[2] + ((d >> 2) & 1)) as isize,
                ];
                m = m.max(psi.node(ijk).norm_sqr());
            }
            m
        })
        .collect();
    (corners, env)
}

/// `n` positions distributed as `|psi|^2` (trilinear interpolant), reproducible for a given seed.
pub fn sample_born(psi: &ComplexField, n: usize, seed: u64) -> Result<Vec<[f64; 3]>> {
    let (corners, env) = density_envelope(psi);
    if !env.iter().any(|w| *w > 0.0) {
        return Err(Error::DegenerateDensity);
    }
    let pick = WeightedIndex::new(&env).map_err(|_| Error::DegenerateDensity)?;
    let g = psi.grid();
    let h = g.spacing();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let c = pick.sample(&mut rng);
        let corner = corners[c];
        let q = [
            (corner[0] as f64 + rng.random::<f64>()) * h[0],
            (corner[1] as f64 + rng.random::<f64>()) * h[1],
            (corner[2] as f64 + rng.random::<f64>()) * h[2],
        ];
        let p = interpolate(psi, q).norm_sqr();
        if rng.random::<f64>() * env[c] < p && g.contains(q) {
            out.push(g.wrap(q));
        }
    }
    Ok(out)
}

/// Exact integral of `|psi|^2` of the trilinear interpolant over the node box `[lo, hi)` of grid cells.
pub fn interpolant_mass(psi: &ComplexField, lo: [usize; 3], hi: [usize; 3]) -> f64 {
    // 1-D mass matrix of linear hat functions on a unit cell
    const M: [[f64; 2]; 2] = [[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]];
    let g = psi.grid();
    let mut total = 0.0;
    for k in lo[2]..hi[2] {
        for j in lo[1]..hi[1] {
            for i in lo[0]..hi[0] {
                let mut v = [Complex64::new(0.0, 0.0); 8];
                for (d, slot) in v.iter_mut().enumerate() {
                    *slot = psi.node([
                        (i + (d & 1)) as isize,
                        (j + ((d >> 1) & 1)) as isize,
                        (k + ((d >> 2) & 1)) as isize,
                    ]);
                }
                let mut s = 0.0;
                for a in 0..8 {
                    for b in 0..8 {
                        let w = M[a & 1][b & 1] * M[(a >> 1) & 1][(b >> 1) & 1] * M[(a >> 2) & 1][(b >> 2) & 1];
                        s += w * (v[a].conj() * v[b]).re;
                    }
                }
                total += s;
            }
        }
    }
    total * g.cell_volume()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn params() -> PhysicalParams {
        PhysicalParams::natural(10.0).unwrap()
    }

    #[test]
    fn plane_wave_is_eigenmode() {
        let l = 2.0 * PI;
        let g = Grid3::cube(l, 16, Boundary::Periodic).unwrap();
        let k = [2.0, -1.0, 1.0];
        let psi = ComplexField::from_fn(&g, |x| Complex64::from_polar(1.0, k[0] * x[0] + k[1] * x[1] + k[2] * x[2]));
        let dt = 1e-3;
        let out = step_schrodinger(&psi, dt, None, &params());
        let e = 0.5 * (4.0 + 1.0 + 1.0);
        let z = e * dt / 2.0;
        let expected = Complex64::new(1.0, -z) / Complex64::new(1.0, z);
        for (a, b) in psi.values().iter().zip(out.values()) {
            assert_relative_eq!((b / a).re, expected.re, epsilon = 1e-12);
            assert_relative_eq!((b / a).im, expected.im, epsilon = 1e-12);
        }
        assert_relative_eq!(out.norm_sqr(), psi.norm_sqr(), max_relative = 1e-12);
    }

    #[test]
    fn gaussian_spreading() {
        let l = 24.0;
        let n = 64;
        let g = Grid3::cube(l, n, Boundary::Periodic).unwrap();
        let s0 = 1.0;
        let c = l / 2.0;
        let psi = ComplexField::from_fn(&g, |x| {
            let r2 = (x[0] - c).powi(2) + (x[1] - c).powi(2) + (x[2] - c).powi(2);
            Complex64::new((-r2 / (4.0 * s0 * s0)).exp(), 0.0)
        });
        let p = params();
        let solver = SchrodingerSolver::new(&g, &p, LaplacianKind::Spectral, None);
        let dt = 2e-3;
        let steps = 500;
        let mut prop = solver.propagator(psi, dt);
        for _ in 0..steps {
            prop.advance();
        }
        let out = prop.into_psi();
        let t = dt * steps as f64;
        let norm = out.norm_sqr();
        let mut var = 0.0;
        for (idx, v) in out.values().iter().enumerate() {
            let [i, _, _] = g.coords(idx);
            let x = i as f64 * g.spacing()[0] - c;
            var += x * x * v.norm_sqr();
        }
        var *= g.cell_volume() / norm;
        let expected = s0 * s0 * (1.0 + (t / (2.0 * s0 * s0)).powi(2));
        assert_relative_eq!(var, expected, max_relative = 1e-3);
    }

    #[test]
    fn real_state_gives_zero_velocity() {
        let g = Grid3::cube(PI, 12, Boundary::DirichletZero).unwrap();
        let psi = ComplexField::from_fn(&g, |x| Complex64::new(x[0].sin() * x[1].sin() * x[2].sin(), 0.0));
        assert_eq!(bohm_velocity(&psi, [1.0, 1.2, 2.0], &params()).unwrap(), [0.0; 3]);
    }

    #[test]
    fn two_wave_superposition_velocity() {
        let l = 2.0 * PI;
        let n = 64;
        let g = Grid3::cube(l, n, Boundary::Periodic).unwrap();
        let (k1, k2) = (1.0, 3.0);
        let psi = ComplexField::from_fn(&g, |x| Complex64::from_polar(1.0, k1 * x[0]) + Complex64::from_polar(0.5, k2 * x[0]));
        // node point: interpolation is exact there, only the centered difference is approximate
        let q = [10.0 * l / n as f64, 1.0, 1.0];
        let u = bohm_velocity(&psi, q, &params()).unwrap();
        let x = q[0];
        let v = Complex64::from_polar(1.0, k1 * x) + Complex64::from_polar(0.5, k2 * x);
        let h = l / n as f64;
        let dv = Complex64::new(0.0, (k1 * h).sin() / h) * Complex64::from_polar(1.0, k1 * x)
            + Complex64::new(0.0, (k2 * h).sin() / h) * Complex64::from_polar(0.5, k2 * x);
        assert_relative_eq!(u[0], (dv / v).im, max_relative = 1e-12);
        let exact = (Complex64::new(0.0, k1) * Complex64::from_polar(1.0, k1 * x)
            + Complex64::new(0.0, k2) * Complex64::from_polar(0.5, k2 * x))
            / v;
        assert_relative_eq!(u[0], exact.im, max_relative = 1e-2);
    }

    #[test]
    fn degenerate_density() {
        let g = Grid3::cube(1.0, 8, Boundary::Periodic).unwrap();
        assert!(matches!(sample_born(&ComplexField::zeros(&g), 10, 1), Err(Error::DegenerateDensity)));
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = Grid3::cube(1.0, 10, Boundary::DirichletZero).unwrap();
        let psi = ComplexField::from_fn(&g, |x| Complex64::new((PI * x[0]).sin() * (PI * x[1]).sin() * (PI * x[2]).sin(), 0.0));
        let a = sample_born(&psi, 200, 42).unwrap();
        let b = sample_born(&psi, 200, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|q| g.contains(*q)));
    }

    #[test]
    fn interpolant_mass_of_constant() {
        let g = Grid3::cube(1.0, 10, Boundary::Periodic).unwrap();
        let psi = ComplexField::from_fn(&g, |_| Complex64::new(0.0, 2.0));
        assert_relative_eq!(interpolant_mass(&psi, [0; 3], [10; 3]), 4.0, max_relative = 1e-12);
    }
}
