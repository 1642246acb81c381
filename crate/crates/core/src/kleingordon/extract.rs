use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{interpolate, phase_gradient, NodeAccess};
use crate::numerics::{fit_line_intercept, gauss_legendre};

/// Point evaluation of a field, with the grid spacing when the field lives on a grid.
pub trait PointSampler {
    fn sample(&self, q: [f64; 3]) -> Complex64;
    fn resolution(&self) -> Option<f64>;
}

impl<F: NodeAccess> PointSampler for F {
    fn sample(&self, q: [f64; 3]) -> Complex64 {
        interpolate(self, q)
    }
    fn resolution(&self) -> Option<f64> {
        Some(self.grid().min_spacing())
    }
}

/// Closed-form field.
pub struct Analytic<F>(pub F);

impl<F: Fn([f64; 3]) -> Complex64> PointSampler for Analytic<F> {
    fn sample(&self, q: [f64; 3]) -> Complex64 {
        (self.0)(q)
    }
    fn resolution(&self) -> Option<f64> {
        None
    }
}

/// Product rule on the unit sphere: Gauss-Legendre in `cos(theta)` times uniform azimuth.
#[derive(Debug, Clone)]
pub struct SphericalRule {
    pub directions: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl SphericalRule {
    pub fn product(n_polar: usize, n_azimuth: usize) -> Self {
        let (mu, w) = gauss_legendre(n_polar);
        let mut directions = Vec::with_capacity(n_polar * n_azimuth);
        let mut weights = Vec::with_capacity(n_polar * n_azimuth);
        for (m, wm) in mu.iter().zip(&w) {
            let s = (1.0 - m * m).sqrt();
            for j in 0..n_azimuth {
                // half-step offset keeps the axes off the nodes
                let ph = 2.0 * PI * (j as f64 + 0.5) / n_azimuth as f64;
                directions.push([s * ph.cos(), s * ph.sin(), *m]);
                weights.push(wm / (2.0 * n_azimuth as f64));
            }
        }
        SphericalRule { directions, weights }
    }

    pub fn average<S: PointSampler + ?Sized>(&self, f: &S, center: [f64; 3], r: f64) -> Complex64 {
        self.directions
            .iter()
            .zip(&self.weights)
            .map(|(d, w)| *w * f.sample([center[0] + r * d[0], center[1] + r * d[1], center[2] + r * d[2]]))
            .sum()
    }
}

impl Default for SphericalRule {
    fn default() -> Self {
        SphericalRule::product(8, 16)
    }
}

/// Non-singular part of the field at `q_p`: the spherical mean of `d/dr (r phi)` on each radius,
/// extrapolated to `r = 0` by a least-squares line in `r`.
pub fn continuous_component<S: PointSampler + ?Sized>(f: &S, q_p: [f64; 3], radii: &[f64]) -> Result<Complex64> {
    continuous_component_with(f, q_p, radii, &SphericalRule::default())
}

pub fn continuous_component_with<S: PointSampler + ?Sized>(
    f: &S,
    q_p: [f64; 3],
    radii: &[f64],
    rule: &SphericalRule,
) -> Result<Complex64> {
    if radii.len() < 2 {
        return Err(Error::InvalidParams("continuous component needs at least two radii".into()));
    }
    if let Some(h) = f.resolution() {
        let minimum = 2.0 * h * (1.0 - 1e-12);
        if let Some(r) = radii.iter().find(|r| **r < minimum) {
            return Err(Error::Resolution { radius: *r, minimum: 2.0 * h });
        }
    }
    let values: Vec<Complex64> = radii
        .iter()
        .map(|&r| {
            let d = 1e-3 * r;
            let up = rule.average(f, q_p, r + d) * (r + d);
            let dn = rule.average(f, q_p, r - d) * (r - d);
            (up - dn) / (2.0 * d)
        })
        .collect();
    Ok(fit_line_intercept(radii, &values))
}

/// `Im(grad psi / psi)` of the continuous field at the particle.
pub fn particle_force<F: NodeAccess + ?Sized>(psi: &F, q_p: [f64; 3], tolerance: f64) -> Result<[f64; 3]> {
    phase_gradient(psi, q_p, tolerance)
}
