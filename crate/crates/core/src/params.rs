//! Physical constants, derived scales, the phase coupling and the particle state.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TWO_PI: f64 = 2.0 * PI;

/// Shape of the phase coupling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingKind {
    /// `sigma = a + b theta` on `(0, 2 pi]`.
    #[default]
    Linear,
    /// `theta - 2 pi` on `(0, pi]`, `theta + 2 pi` on `(pi, 2 pi]`. Changes sign; exploratory.
    Piecewise,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalParams {
    pub mass: f64,
    pub light_speed: f64,
    pub hbar: f64,
    pub coupling_a: f64,
    pub coupling_b: f64,
    pub kappa: f64,
    pub singular_density: f64,
    pub coupling_kind: CouplingKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedScales {
    pub omega_c: f64,
    pub k_c: f64,
    pub omega_s: f64,
}

impl PhysicalParams {
    /// Validating constructor. `singular_density = None` selects the preset with `omega_s = omega_c`.
    pub fn new(
        mass: f64,
        light_speed: f64,
        hbar: f64,
        coupling_a: f64,
        coupling_b: f64,
        kappa: f64,
        singular_density: Option<f64>,
    ) -> Result<Self> {
        let rho = singular_density.unwrap_or_else(|| preset_singular_density(mass, light_speed, hbar));
        let p = PhysicalParams {
            mass,
            light_speed,
            hbar,
            coupling_a,
            coupling_b,
            kappa,
            singular_density: rho,
            coupling_kind: CouplingKind::Linear,
        };
        p.validate()?;
        Ok(p)
    }

    /// Units with hbar = m = 1, default coupling a = -4 pi, b = 1, kappa = 1 and the omega_s = omega_c preset.
    pub fn natural(light_speed: f64) -> Result<Self> {
        Self::new(1.0, light_speed, 1.0, -4.0 * PI, 1.0, 1.0, None)
    }

    pub fn with_coupling(mut self, a: f64, b: f64) -> Result<Self> {
        self.coupling_a = a;
        self.coupling_b = b;
        self.validate()?;
        Ok(self)
    }

    pub fn with_kind(mut self, kind: CouplingKind) -> Self {
        self.coupling_kind = kind;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("mass", self.mass), ("light_speed", self.light_speed), ("hbar", self.hbar)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return Err(Error::InvalidParams(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        if !(self.singular_density.is_finite() && self.singular_density > 0.0) {
            return Err(Error::InvalidParams(format!(
                "singular_density must be positive, got {}",
                self.singular_density
            )));
        }
        let (a, b) = (self.coupling_a, self.coupling_b);
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidParams("coupling constants must be finite".into()));
        }
        // b = 0 is the decoupled wave; otherwise sigma/b < 0 must hold on the whole circle.
        if b != 0.0 && !(a * b < 0.0 && a.abs() > TWO_PI * b.abs()) {
            return Err(Error::InvalidParams(format!(
                "coupling needs opposite signs and |a| > 2 pi |b| (a = {a}, b = {b})"
            )));
        }
        Ok(())
    }

    pub fn scales(&self) -> DerivedScales {
        derive_scales(self)
    }
}

/// `rho_s` for which `omega_s = omega_c`, i.e. `4 m^3 c^5 / hbar^3`.
pub fn preset_singular_density(mass: f64, c: f64, hbar: f64) -> f64 {
    let k_c = mass * c / hbar;
    let omega_c = mass * c * c / hbar;
    4.0 * mass * mass * c * c * k_c * omega_c / hbar
}

pub fn derive_scales(p: &PhysicalParams) -> DerivedScales {
    let (m, c, hbar) = (p.mass, p.light_speed, p.hbar);
    let k_c = m * c / hbar;
    DerivedScales {
        omega_c: m * c * c / hbar,
        k_c,
        omega_s: p.singular_density * hbar / (4.0 * m * m * c * c * k_c),
    }
}

/// Number of equal steps of at most about `dt` covering `t` (tolerant of round-off in `t / dt`).
pub fn step_count(t: f64, dt: f64) -> usize {
    if t <= 0.0 {
        return 0;
    }
    ((t / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

pub fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub fn lorentz_gamma(u: [f64; 3], c: f64) -> Result<f64> {
    let speed = norm3(u);
    let beta2 = (speed / c) * (speed / c);
    if !(beta2 < 1.0) {
        return Err(Error::Superluminal { speed, c });
    }
    Ok(1.0 / (1.0 - beta2).sqrt())
}

/// Wrap an angle into `(0, 2 pi]`.
pub fn wrap_phase(theta: f64) -> f64 {
    let w = theta - TWO_PI * (theta / TWO_PI - 1.0).ceil();
    // guard the round-off cases that land just outside the interval
    if w <= 0.0 {
        w + TWO_PI
    } else if w > TWO_PI {
        w - TWO_PI
    } else {
        w
    }
}

pub fn sigma(theta: f64, p: &PhysicalParams) -> f64 {
    let t = wrap_phase(theta);
    match p.coupling_kind {
        CouplingKind::Linear => p.coupling_a + p.coupling_b * t,
        CouplingKind::Piecewise => {
            if t <= PI {
                t - TWO_PI
            } else {
                t + TWO_PI
            }
        }
    }
}

/// Slope of sigma away from the wrap.
pub fn sigma_slope(p: &PhysicalParams) -> f64 {
    match p.coupling_kind {
        CouplingKind::Linear => p.coupling_b,
        CouplingKind::Piecewise => 1.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticleState {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub gamma: f64,
}

impl ParticleState {
    pub fn new(position: [f64; 3], velocity: [f64; 3], c: f64) -> Result<Self> {
        let gamma = lorentz_gamma(velocity, c)?;
        Ok(ParticleState { position, velocity, gamma })
    }

    pub fn at_rest(position: [f64; 3]) -> Self {
        ParticleState { position, velocity: [0.0; 3], gamma: 1.0 }
    }

    pub fn speed(&self) -> f64 {
        norm3(self.velocity)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn unit_scales() {
        let p = PhysicalParams::new(1.0, 1.0, 1.0, -4.0 * PI, 1.0, 1.0, Some(4.0)).unwrap();
        let s = p.scales();
        assert_eq!((s.omega_c, s.k_c, s.omega_s), (1.0, 1.0, 1.0));
    }

    #[test]
    fn c_ten_scales() {
        let s = PhysicalParams::natural(10.0).unwrap().scales();
        assert_relative_eq!(s.omega_c, 100.0);
        assert_relative_eq!(s.k_c, 10.0);
    }

    #[test]
    fn preset_matches_compton_frequency() {
        for c in [1.0, 3.0, 10.0, 20.0] {
            let s = PhysicalParams::natural(c).unwrap().scales();
            assert_relative_eq!(s.omega_s, s.omega_c, max_relative = 1e-14);
        }
        let p = PhysicalParams::new(2.0, 3.0, 0.5, -4.0 * PI, 1.0, 1.0, None).unwrap();
        let s = p.scales();
        assert_relative_eq!(s.omega_s, s.omega_c, max_relative = 1e-14);
    }

    #[test]
    fn mass_scaling() {
        let p = PhysicalParams::new(1.0, 2.0, 1.0, -4.0 * PI, 1.0, 1.0, Some(1.0)).unwrap();
        let q = PhysicalParams { mass: 3.0, ..p };
        assert_relative_eq!(q.scales().omega_c, 3.0 * p.scales().omega_c);
        assert_relative_eq!(q.scales().k_c, 3.0 * p.scales().k_c);
    }

    #[test]
    fn gamma_values() {
        assert_eq!(lorentz_gamma([0.0; 3], 1.0).unwrap(), 1.0);
        assert_relative_eq!(lorentz_gamma([0.6, 0.0, 0.0], 1.0).unwrap(), 1.25, max_relative = 1e-14);
        let g = lorentz_gamma([0.0, 0.99999 * 3.0, 0.0], 3.0).unwrap();
        assert!(g.is_finite() && g > 200.0);
        assert!(matches!(lorentz_gamma([3.0, 0.0, 0.0], 3.0), Err(Error::Superluminal { .. })));
    }

    #[test]
    fn sigma_at_pi() {
        let p = PhysicalParams::natural(1.0).unwrap();
        assert_relative_eq!(sigma(PI, &p), -3.0 * PI, max_relative = 1e-15);
    }

    #[test]
    fn rejects_bad_coupling() {
        assert!(PhysicalParams::new(1.0, 1.0, 1.0, 4.0 * PI, 1.0, 1.0, None).is_err());
        assert!(PhysicalParams::new(1.0, 1.0, 1.0, -PI, 1.0, 1.0, None).is_err());
        assert!(PhysicalParams::new(1.0, 1.0, 1.0, -PI, 0.0, 1.0, None).is_ok());
        assert!(PhysicalParams::new(1.0, -1.0, 1.0, -4.0 * PI, 1.0, 1.0, None).is_err());
    }

    #[test]
    fn wrap_endpoints() {
        assert_relative_eq!(wrap_phase(2.0 * PI), 2.0 * PI);
        assert_relative_eq!(wrap_phase(0.0), 2.0 * PI);
        assert_relative_eq!(wrap_phase(-0.5), 2.0 * PI - 0.5, max_relative = 1e-15);
    }

    #[test]
    fn particle_rejects_superluminal() {
        assert!(ParticleState::new([0.5; 3], [1.0, 0.0, 0.0], 1.0).is_err());
        let s = ParticleState::new([0.5; 3], [0.3, 0.4, 0.0], 1.0).unwrap();
        assert_relative_eq!(s.gamma, 1.0 / (1.0f64 - 0.25).sqrt(), max_relative = 1e-15);
    }

    proptest::proptest! {
        #[test]
        fn sigma_is_periodic_and_signed(theta in -10.0 * PI..10.0 * PI, b in 0.1f64..3.0, extra in 0.01f64..5.0) {
            let a = -(2.0 * PI * b + extra);
            let p = PhysicalParams::new(1.0, 1.0, 1.0, a, b, 1.0, None).unwrap();
            let s = sigma(theta, &p);
            proptest::prop_assert!(s / b < 0.0);
            proptest::prop_assert!((sigma(theta + 2.0 * PI, &p) - s).abs() < 1e-9);
            let q = PhysicalParams::new(1.0, 1.0, 1.0, -a, -b, 1.0, None).unwrap();
            proptest::prop_assert!(sigma(theta, &q) / -b < 0.0);
        }

        #[test]
        fn gamma_at_least_one(ux in -0.57f64..0.57, uy in -0.57f64..0.57, uz in -0.57f64..0.57) {
            proptest::prop_assert!(lorentz_gamma([ux, uy, uz], 1.0).unwrap() >= 1.0);
        }
    }
}
