use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{ComplexField, Grid3};
use crate::params::PhysicalParams;

/// Tensor-product cubic B-spline of half-width `width` (support `|x - q| < width` per axis).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mollifier {
    pub width: f64,
}

fn cubic_bspline(t: f64) -> f64 {
    let a = t.abs();
    if a < 1.0 {
        2.0 / 3.0 - a * a + 0.5 * a * a * a
    } else if a < 2.0 {
        let b = 2.0 - a;
        b * b * b / 6.0
    } else {
        0.0
    }
}

impl Mollifier {
    pub fn new(width: f64) -> Self {
        Mollifier { width }
    }

    /// Two grid spacings.
    pub fn default_for(grid: &Grid3) -> Self {
        Mollifier { width: 2.0 * grid.min_spacing() }
    }

    fn profile(&self, d: f64) -> f64 {
        let s = 0.5 * self.width;
        cubic_bspline(d / s) / s
    }

    /// Node weights with `sum w dV = 1` exactly on the grid.
    pub fn weights(&self, grid: &Grid3, q: [f64; 3]) -> Result<Vec<(usize, f64)>> {
        let h = grid.spacing();
        let mut axis: [Vec<(isize, f64)>; 3] = Default::default();
        for a in 0..3 {
            let lo = ((q[a] - self.width) / h[a]).floor() as isize;
            let hi = ((q[a] + self.width) / h[a]).ceil() as isize;
            for i in lo..=hi {
                let w = self.profile(i as f64 * h[a] - q[a]);
                if w > 0.0 {
                    axis[a].push((i, w));
                }
            }
        }
        let mut out = Vec::with_capacity(axis[0].len() * axis[1].len() * axis[2].len());
        for &(k, wz) in &axis[2] {
            for &(j, wy) in &axis[1] {
                for &(i, wx) in &axis[0] {
                    if let Some(idx) = grid.resolve([i, j, k]) {
                        if !grid.is_boundary_node(grid.coords(idx)) {
                            out.push((idx, wx * wy * wz));
                        }
                    }
                }
            }
        }
        let total: f64 = out.iter().map(|(_, w)| w).sum::<f64>() * grid.cell_volume();
        if !(total > 0.0) {
            return Err(Error::Resolution { radius: self.width, minimum: grid.min_spacing() });
        }
        for (_, w) in out.iter_mut() {
            *w /= total;
        }
        Ok(out)
    }
}

/// Sparse source `amplitude * K(q - q_p)` with a normalised mollifier `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceKernel {
    pub center: [f64; 3],
    pub amplitude: Complex64,
    pub weights: Vec<(usize, f64)>,
}

impl SourceKernel {
    pub fn add_to(&self, field: &mut ComplexField, scale: f64) {
        let a = self.amplitude * scale;
        let vals = field.values_mut();
        for &(idx, w) in &self.weights {
            vals[idx] += a * w;
        }
    }

    pub fn to_field(&self, grid: &Grid3) -> ComplexField {
        let mut f = ComplexField::zeros(grid);
        self.add_to(&mut f, 1.0);
        f
    }

    pub fn kernel_sum(&self, grid: &Grid3) -> f64 {
        self.weights.iter().map(|(_, w)| w).sum::<f64>() * grid.cell_volume()
    }
}

/// Smallest `|phi_bar|` accepted as a source denominator.
pub const COUPLING_TOLERANCE: f64 = 1e-12;

/// `-b / (2 i k_c gamma conj(phi_bar))`.
pub fn source_prefactor(phi_bar: Complex64, params: &PhysicalParams, gamma: f64) -> Result<Complex64> {
    if !(phi_bar.norm() > COUPLING_TOLERANCE) {
        return Err(Error::CouplingSingularity(phi_bar.norm()));
    }
    let k_c = params.scales().k_c;
    Ok(-params.coupling_b / (gamma * Complex64::new(0.0, 2.0 * k_c) * phi_bar.conj()))
}

/// Mollified `-delta(q - q_p) b / (2 i k_c gamma conj(phi_bar))`.
pub fn delta_source(
    phi_bar: Complex64,
    q_p: [f64; 3],
    params: &PhysicalParams,
    gamma: f64,
    grid: &Grid3,
    mollifier: &Mollifier,
) -> Result<SourceKernel> {
    let amplitude = source_prefactor(phi_bar, params, gamma)?;
    Ok(SourceKernel { center: q_p, amplitude, weights: mollifier.weights(grid, q_p)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Boundary;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn bspline_partition_of_unity() {
        for x in [0.0, 0.13, 0.5, 0.77] {
            let s: f64 = (-3..=3).map(|i| cubic_bspline(x - i as f64)).sum();
            assert_relative_eq!(s, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn kernel_is_normalised() {
        let g = Grid3::cube(2.0 * PI, 24, Boundary::DirichletZero).unwrap();
        let p = PhysicalParams::natural(1.0).unwrap();
        let k = delta_source(Complex64::new(0.3, 0.2), [3.01, 2.5, 3.7], &p, 1.0, &g, &Mollifier::default_for(&g)).unwrap();
        assert_relative_eq!(k.kernel_sum(&g), 1.0, epsilon = 1e-12);
        assert_relative_eq!(k.to_field(&g).values().iter().sum::<Complex64>().re * g.cell_volume() / k.amplitude.re, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn prefactor_for_imaginary_phi_bar() {
        let p = PhysicalParams::natural(1.0).unwrap();
        let a = source_prefactor(Complex64::new(0.0, 1.0), &p, 1.0).unwrap();
        assert_relative_eq!(a.re, -0.5, epsilon = 1e-15);
        assert_eq!(a.im, 0.0);
    }

    #[test]
    fn vanishing_phi_bar_is_singular() {
        let p = PhysicalParams::natural(1.0).unwrap();
        assert!(matches!(source_prefactor(Complex64::new(0.0, 0.0), &p, 1.0), Err(Error::CouplingSingularity(_))));
    }

    #[test]
    fn kernel_has_no_dipole_moment() {
        let g = Grid3::cube(1.0, 20, Boundary::Periodic).unwrap();
        let q = [0.512, 0.47, 0.333];
        let w = Mollifier::default_for(&g).weights(&g, q).unwrap();
        for a in 0..3 {
            let m: f64 = w
                .iter()
                .map(|(idx, wi)| {
                    let c = g.coords(*idx);
                    let x = c[a] as f64 * g.spacing()[a];
                    wi * g.displacement([x; 3], [q[a]; 3])[0]
                })
                .sum::<f64>()
                * g.cell_volume();
            assert!(m.abs() < 1e-14, "axis {a}: {m}");
        }
    }

    proptest::proptest! {
        #[test]
        fn normalised_everywhere(x in 0.2f64..0.8, y in 0.2f64..0.8, z in 0.2f64..0.8) {
            let g = Grid3::cube(1.0, 17, Boundary::DirichletZero).unwrap();
            let w = Mollifier::default_for(&g).weights(&g, [x, y, z]).unwrap();
            let s: f64 = w.iter().map(|(_, wi)| wi).sum::<f64>() * g.cell_volume();
            proptest::prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
