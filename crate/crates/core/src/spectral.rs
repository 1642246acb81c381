//! Diagonalising transforms of the grid Laplacian: DST-I on Dirichlet boxes, FFT on periodic boxes.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::grid::{Boundary, ComplexField, Grid3};

/// Symbol used for `-laplacian` in mode space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianKind {
    /// Continuum eigenvalues `(pi k / L)^2` or `k^2`.
    #[default]
    Spectral,
    /// Seven-point stencil eigenvalues `(4/h^2) sin^2(...)`.
    SevenPoint,
}

enum AxisTransform {
    Sine { m: usize, fft: Arc<dyn Fft<f64>> },
    Fourier { fwd: Arc<dyn Fft<f64>>, inv: Arc<dyn Fft<f64>> },
}

impl AxisTransform {
    fn len(&self) -> usize {
        match self {
            AxisTransform::Sine { m, .. } => *m,
            AxisTransform::Fourier { fwd, .. } => fwd.len(),
        }
    }

    /// Unnormalised forward transform of one line in place.
    fn forward(&self, line: &mut [Complex64], work: &mut Vec<Complex64>) {
        match self {
            AxisTransform::Sine { m, fft } => sine_transform(*m, fft.as_ref(), line, work),
            AxisTransform::Fourier { fwd, .. } => fwd.process(line),
        }
    }

    fn inverse(&self, line: &mut [Complex64], work: &mut Vec<Complex64>) {
        match self {
            AxisTransform::Sine { m, fft } => {
                sine_transform(*m, fft.as_ref(), line, work);
                let s = 2.0 / (*m as f64 + 1.0);
                line.iter_mut().for_each(|v| *v *= s);
            }
            AxisTransform::Fourier { inv, .. } => {
                inv.process(line);
                let s = 1.0 / line.len() as f64;
                line.iter_mut().for_each(|v| *v *= s);
            }
        }
    }
}

/// `X_k = sum_j x_j sin(pi j k / (m+1))` through the odd extension of length `2(m+1)`.
fn sine_transform(m: usize, fft: &dyn Fft<f64>, line: &mut [Complex64], work: &mut Vec<Complex64>) {
    let n = 2 * (m + 1);
    work.clear();
    work.resize(n, Complex64::new(0.0, 0.0));
    for j in 0..m {
        work[j + 1] = line[j];
        work[n - j - 1] = -line[j];
    }
    fft.process(work);
    let half_i = Complex64::new(0.0, 0.5);
    for k in 0..m {
        line[k] = half_i * work[k + 1];
    }
}

pub struct SpectralBasis {
    grid: Grid3,
    kind: LaplacianKind,
    axes: [AxisTransform; 3],
    dims: [usize; 3],
    eig: [Vec<f64>; 3],
}

impl std::fmt::Debug for SpectralBasis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralBasis").field("dims", &self.dims).field("kind", &self.kind).finish()
    }
}

impl SpectralBasis {
    pub fn new(grid: &Grid3, kind: LaplacianKind) -> Self {
        let mut planner = FftPlanner::<f64>::new();
        let n = grid.points();
        let l = grid.extent();
        let h = grid.spacing();
        let mut dims = [0; 3];
        let mut eig: [Vec<f64>; 3] = Default::default();
        let axes = [0, 1, 2].map(|a| match grid.boundary() {
            Boundary::DirichletZero => {
                let m = n[a] - 2;
                dims[a] = m;
                eig[a] = (1..=m)
                    .map(|k| match kind {
                        LaplacianKind::Spectral => (PI * k as f64 / l[a]).powi(2),
                        LaplacianKind::SevenPoint => {
                            let s = (PI * k as f64 / (2.0 * (m as f64 + 1.0))).sin();
                            4.0 * s * s / (h[a] * h[a])
                        }
                    })
                    .collect();
                AxisTransform::Sine { m, fft: planner.plan_fft_forward(2 * (m + 1)) }
            }
            Boundary::Periodic => {
                dims[a] = n[a];
                eig[a] = (0..n[a])
                    .map(|q| {
                        let k = wavenumber(q, n[a], l[a]);
                        match kind {
                            LaplacianKind::Spectral => k * k,
                            LaplacianKind::SevenPoint => {
                                let s = (0.5 * k * h[a]).sin();
                                4.0 * s * s / (h[a] * h[a])
                            }
                        }
                    })
                    .collect();
                AxisTransform::Fourier {
                    fwd: planner.plan_fft_forward(n[a]),
                    inv: planner.plan_fft_inverse(n[a]),
                }
            }
        });
        SpectralBasis { grid: grid.clone(), kind, axes, dims, eig }
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }
    pub fn kind(&self) -> LaplacianKind {
        self.kind
    }
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mode_index(&self, idx: usize) -> [usize; 3] {
        let [d0, d1, _] = self.dims;
        [idx % d0, (idx / d0) % d1, idx / (d0 * d1)]
    }

    /// Eigenvalue of `-laplacian` for a flat mode index.
    pub fn eigenvalue(&self, idx: usize) -> f64 {
        let [a, b, c] = self.mode_index(idx);
        self.eig[0][a] + self.eig[1][b] + self.eig[2][c]
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        (0..self.len()).into_par_iter().map(|i| self.eigenvalue(i)).collect()
    }

    /// Wavevector of a mode: `pi k / L` on Dirichlet grids, signed `2 pi q / L` on periodic ones.
    pub fn wavevector(&self, idx: usize) -> [f64; 3] {
        let m = self.mode_index(idx);
        let l = self.grid.extent();
        let n = self.grid.points();
        [0, 1, 2].map(|a| match self.grid.boundary() {
            Boundary::DirichletZero => PI * (m[a] + 1) as f64 / l[a],
            Boundary::Periodic => wavenumber(m[a], n[a], l[a]),
        })
    }

    pub fn forward(&self, f: &ComplexField) -> Vec<Complex64> {
        let mut data = self.gather(f);
        for a in 0..3 {
            self.apply_axis(&mut data, a, false);
        }
        data
    }

    pub fn inverse(&self, coeffs: &[Complex64]) -> ComplexField {
        let mut data = coeffs.to_vec();
        for a in 0..3 {
            self.apply_axis(&mut data, a, true);
        }
        self.scatter(&data)
    }

    fn gather(&self, f: &ComplexField) -> Vec<Complex64> {
        match self.grid.boundary() {
            Boundary::Periodic => f.values().to_vec(),
            Boundary::DirichletZero => {
                let [d0, d1, d2] = self.dims;
                let mut out = Vec::with_capacity(d0 * d1 * d2);
                for k in 0..d2 {
                    for j in 0..d1 {
                        for i in 0..d0 {
                            out.push(f.get(i + 1, j + 1, k + 1));
                        }
                    }
                }
                out
            }
        }
    }

    fn scatter(&self, data: &[Complex64]) -> ComplexField {
        match self.grid.boundary() {
            Boundary::Periodic => ComplexField::from_values(&self.grid, data.to_vec()).expect("size"),
            Boundary::DirichletZero => {
                let mut f = ComplexField::zeros(&self.grid);
                let [d0, d1, d2] = self.dims;
                let g = self.grid.clone();
                let vals = f.values_mut();
                for k in 0..d2 {
                    for j in 0..d1 {
                        let src = d0 * (j + d1 * k);
                        let dst = g.index(1, j + 1, k + 1);
                        vals[dst..dst + d0].copy_from_slice(&data[src..src + d0]);
                    }
                }
                f
            }
        }
    }

    fn apply_axis(&self, data: &mut [Complex64], axis: usize, inverse: bool) {
        let [d0, d1, d2] = self.dims;
        let t = &self.axes[axis];
        debug_assert_eq!(t.len(), self.dims[axis]);
        if axis == 0 {
            data.par_chunks_mut(d0).for_each_init(Vec::new, |work, line| {
                if inverse {
                    t.inverse(line, work)
                } else {
                    t.forward(line, work)
                }
            });
            return;
        }
        let (len, stride, count) = if axis == 1 { (d1, d0, d0 * d2) } else { (d2, d0 * d1, d0 * d1) };
        let base_of = |line: usize| -> usize {
            if axis == 1 {
                let i = line % d0;
                let k = line / d0;
                i + d0 * d1 * k
            } else {
                line
            }
        };
        let snapshot: &[Complex64] = data;
        let lines: Vec<Vec<Complex64>> = (0..count)
            .into_par_iter()
            .map_init(Vec::new, |work, line| {
                let b = base_of(line);
                let mut buf: Vec<Complex64> = (0..len).map(|s| snapshot[b + s * stride]).collect();
                if inverse {
                    t.inverse(&mut buf, work)
                } else {
                    t.forward(&mut buf, work)
                }
                buf
            })
            .collect();
        for (line, buf) in lines.into_iter().enumerate() {
            let b = base_of(line);
            for (s, v) in buf.into_iter().enumerate() {
                data[b + s * stride] = v;
            }
        }
    }

    /// Apply `-laplacian` through the mode symbol.
    pub fn neg_laplacian(&self, f: &ComplexField) -> ComplexField {
        let mut c = self.forward(f);
        c.par_iter_mut().enumerate().for_each(|(i, v)| *v *= self.eigenvalue(i));
        self.inverse(&c)
    }
}

/// Signed wavenumber of FFT bin `q` on `n` points of length `l`.
pub fn wavenumber(q: usize, n: usize, l: f64) -> f64 {
    let s = if q <= n / 2 { q as f64 } else { q as f64 - n as f64 };
    2.0 * PI * s / l
}

/// Seven-point `-laplacian` applied directly on the nodes.
pub fn neg_laplacian_7pt(f: &ComplexField) -> ComplexField {
    use crate::grid::NodeAccess;
    let g = f.grid().clone();
    let h = g.spacing();
    let inv = [1.0 / (h[0] * h[0]), 1.0 / (h[1] * h[1]), 1.0 / (h[2] * h[2])];
    let vals: Vec<Complex64> = (0..g.len())
        .into_par_iter()
        .map(|idx| {
            let c = g.coords(idx);
            if g.is_boundary_node(c) {
                return Complex64::new(0.0, 0.0);
            }
            let ci = [c[0] as isize, c[1] as isize, c[2] as isize];
            let v = f.values()[idx];
            let mut acc = Complex64::new(0.0, 0.0);
            for a in 0..3 {
                let mut lo = ci;
                let mut hi = ci;
                lo[a] -= 1;
                hi[a] += 1;
                acc += (2.0 * v - f.node(lo) - f.node(hi)) * inv[a];
            }
            acc
        })
        .collect();
    ComplexField::from_values(&g, vals).expect("size")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sample(g: &Grid3) -> ComplexField {
        ComplexField::from_fn(g, |x| {
            Complex64::new((x[0] * 1.3).sin() + x[1] * x[2], (x[2] * 0.7).cos() - x[0])
        })
    }

    #[test]
    fn round_trip_dirichlet() {
        let g = Grid3::new([1.0, 2.0, 1.5], [9, 12, 10], Boundary::DirichletZero).unwrap();
        let b = SpectralBasis::new(&g, LaplacianKind::Spectral);
        let f = sample(&g);
        let back = b.inverse(&b.forward(&f));
        assert!(back.max_diff(&f) < 1e-12);
    }

    #[test]
    fn round_trip_periodic() {
        let g = Grid3::new([1.0, 2.0, 1.5], [8, 12, 10], Boundary::Periodic).unwrap();
        let b = SpectralBasis::new(&g, LaplacianKind::Spectral);
        let f = sample(&g);
        let back = b.inverse(&b.forward(&f));
        assert!(back.max_diff(&f) < 1e-12);
    }

    #[test]
    fn box_mode_is_single_coefficient() {
        let g = Grid3::cube(2.0, 11, Boundary::DirichletZero).unwrap();
        let b = SpectralBasis::new(&g, LaplacianKind::Spectral);
        let l = 2.0;
        let f = ComplexField::from_fn(&g, |x| {
            Complex64::new((2.0 * PI * x[0] / l).sin() * (PI * x[1] / l).sin() * (3.0 * PI * x[2] / l).sin(), 0.0)
        });
        let c = b.forward(&f);
        let (imax, _) = c.iter().enumerate().max_by(|a, b| a.1.norm().total_cmp(&b.1.norm())).unwrap();
        assert_eq!(b.mode_index(imax), [1, 0, 2]);
        let total: f64 = c.iter().map(|v| v.norm()).sum();
        assert_relative_eq!(total, c[imax].norm(), max_relative = 1e-12);
        assert_relative_eq!(b.eigenvalue(imax), (PI / l).powi(2) * 14.0, max_relative = 1e-14);
    }

    #[test]
    fn seven_point_symbol_matches_stencil() {
        for bc in [Boundary::DirichletZero, Boundary::Periodic] {
            let g = Grid3::new([1.0, 1.3, 0.9], [10, 9, 11], bc).unwrap();
            let b = SpectralBasis::new(&g, LaplacianKind::SevenPoint);
            let f = sample(&g);
            let direct = neg_laplacian_7pt(&f);
            let via = b.neg_laplacian(&f);
            let scale = direct.max_abs();
            assert!(direct.max_diff(&via) < 1e-10 * scale, "{bc:?}");
        }
    }
}
