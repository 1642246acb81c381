//! Uniform box grids, complex node fields and trilinear sampling.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[serde(alias = "dirichlet")]
    DirichletZero,
    Periodic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid3 {
    extent: [f64; 3],
    points: [usize; 3],
    spacing: [f64; 3],
    boundary: Boundary,
}

pub const MIN_POINTS: usize = 8;

impl Grid3 {
    pub fn new(extent: [f64; 3], points: [usize; 3], boundary: Boundary) -> Result<Self> {
        let mut spacing = [0.0; 3];
        for a in 0..3 {
            if points[a] < MIN_POINTS {
                return Err(Error::InvalidGrid(format!(
                    "axis {a} has {} points, need at least {MIN_POINTS}",
                    points[a]
                )));
            }
            if !(extent[a].is_finite() && extent[a] > 0.0) {
                return Err(Error::InvalidGrid(format!("axis {a} extent {} must be positive", extent[a])));
            }
            spacing[a] = match boundary {
                Boundary::DirichletZero => extent[a] / (points[a] - 1) as f64,
                Boundary::Periodic => extent[a] / points[a] as f64,
            };
        }
        Ok(Grid3 { extent, points, spacing, boundary })
    }

    pub fn cube(extent: f64, points: usize, boundary: Boundary) -> Result<Self> {
        Self::new([extent; 3], [points; 3], boundary)
    }

    pub fn extent(&self) -> [f64; 3] {
        self.extent
    }
    pub fn points(&self) -> [usize; 3] {
        self.points
    }
    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }
    pub fn boundary(&self) -> Boundary {
        self.boundary
    }
    pub fn len(&self) -> usize {
        self.points[0] * self.points[1] * self.points[2]
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn cell_volume(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }
    pub fn min_spacing(&self) -> f64 {
        self.spacing[0].min(self.spacing[1]).min(self.spacing[2])
    }
    pub fn is_isotropic(&self) -> bool {
        let h = self.spacing[0];
        self.spacing.iter().all(|s| ((s - h) / h).abs() < 1e-12)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.points[0] * (j + self.points[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let nx = self.points[0];
        let ny = self.points[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    pub fn position(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            i as f64 * self.spacing[0],
            j as f64 * self.spacing[1],
            k as f64 * self.spacing[2],
        ]
    }

    pub fn is_boundary_node(&self, ijk: [usize; 3]) -> bool {
        self.boundary == Boundary::DirichletZero
            && (0..3).any(|a| ijk[a] == 0 || ijk[a] == self.points[a] - 1)
    }

    /// Index range of nodes that carry unknowns along an axis.
    pub fn interior_range(&self, axis: usize) -> std::ops::Range<usize> {
        match self.boundary {
            Boundary::DirichletZero => 1..self.points[axis] - 1,
            Boundary::Periodic => 0..self.points[axis],
        }
    }

    pub fn interior_count(&self) -> usize {
        (0..3).map(|a| self.interior_range(a).len()).product()
    }

    /// Open-domain membership (periodic grids accept everything).
    pub fn contains(&self, q: [f64; 3]) -> bool {
        match self.boundary {
            Boundary::Periodic => q.iter().all(|x| x.is_finite()),
            Boundary::DirichletZero => (0..3).all(|a| q[a] > 0.0 && q[a] < self.extent[a]),
        }
    }

    /// Wrap periodic coordinates into `[0, L)`; identity for Dirichlet grids.
    pub fn wrap(&self, mut q: [f64; 3]) -> [f64; 3] {
        if self.boundary == Boundary::Periodic {
            for a in 0..3 {
                q[a] = q[a].rem_euclid(self.extent[a]);
            }
        }
        q
    }

    /// Minimum-image displacement `q - p`.
    pub fn displacement(&self, q: [f64; 3], p: [f64; 3]) -> [f64; 3] {
        let mut d = [q[0] - p[0], q[1] - p[1], q[2] - p[2]];
        if self.boundary == Boundary::Periodic {
            for a in 0..3 {
                let l = self.extent[a];
                d[a] -= l * (d[a] / l).round();
            }
        }
        d
    }

    /// Map a possibly out-of-range node index to storage; `None` means a Dirichlet ghost (value zero).
    #[inline]
    pub fn resolve(&self, ijk: [isize; 3]) -> Option<usize> {
        let mut r = [0usize; 3];
        for a in 0..3 {
            let n = self.points[a] as isize;
            let v = ijk[a];
            r[a] = match self.boundary {
                Boundary::Periodic => v.rem_euclid(n) as usize,
                Boundary::DirichletZero => {
                    if v < 0 || v >= n {
                        return None;
                    }
                    v as usize
                }
            };
        }
        Some(self.index(r[0], r[1], r[2]))
    }
}

/// Anything that exposes node values on a grid.
pub trait NodeAccess {
    fn grid(&self) -> &Grid3;
    fn node(&self, ijk: [isize; 3]) -> Complex64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    grid: Grid3,
    values: Vec<Complex64>,
}

impl ComplexField {
    pub fn zeros(grid: &Grid3) -> Self {
        ComplexField { grid: grid.clone(), values: vec![Complex64::new(0.0, 0.0); grid.len()] }
    }

    /// Wrap raw values, zeroing Dirichlet boundary nodes.
    pub fn from_values(grid: &Grid3, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        let mut f = ComplexField { grid: grid.clone(), values };
        f.enforce_boundary();
        Ok(f)
    }

    pub fn from_fn(grid: &Grid3, f: impl Fn([f64; 3]) -> Complex64 + Sync) -> Self {
        let values = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                let [i, j, k] = grid.coords(idx);
                if grid.is_boundary_node([i, j, k]) {
                    Complex64::new(0.0, 0.0)
                } else {
                    f(grid.position(i, j, k))
                }
            })
            .collect();
        ComplexField { grid: grid.clone(), values }
    }

    pub fn enforce_boundary(&mut self) {
        if self.grid.boundary() != Boundary::DirichletZero {
            return;
        }
        let g = &self.grid;
        for (idx, v) in self.values.iter_mut().enumerate() {
            if g.is_boundary_node(g.coords(idx)) {
                *v = Complex64::new(0.0, 0.0);
            }
        }
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }
    pub fn get(&self, i: usize, j: usize, k: usize) -> Complex64 {
        self.values[self.grid.index(i, j, k)]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.values.par_iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.cell_volume()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.par_iter().map(|v| v.norm()).reduce(|| 0.0, f64::max)
    }

    pub fn scale(&mut self, s: Complex64) {
        self.values.par_iter_mut().for_each(|v| *v *= s);
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64 + Sync) -> Self {
        ComplexField {
            grid: self.grid.clone(),
            values: self.values.par_iter().map(|v| f(*v)).collect(),
        }
    }

    /// Inner product `sum conj(self) other dV`.
    pub fn inner(&self, other: &ComplexField) -> Complex64 {
        self.values
            .par_iter()
            .zip(other.values.par_iter())
            .map(|(a, b)| a.conj() * b)
            .sum::<Complex64>()
            * self.grid.cell_volume()
    }

    pub fn max_diff(&self, other: &ComplexField) -> f64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

impl NodeAccess for ComplexField {
    fn grid(&self) -> &Grid3 {
        &self.grid
    }
    #[inline]
    fn node(&self, ijk: [isize; 3]) -> Complex64 {
        match self.grid.resolve(ijk) {
            Some(i) => self.values[i],
            None => Complex64::new(0.0, 0.0),
        }
    }
}

/// Lower cell corner and fractional offsets of `q`.
fn locate(grid: &Grid3, q: [f64; 3]) -> ([isize; 3], [f64; 3]) {
    let h = grid.spacing();
    let n = grid.points();
    let mut base = [0isize; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let s = q[a] / h[a];
        let mut i = s.floor();
        if grid.boundary() == Boundary::DirichletZero {
            i = i.clamp(0.0, (n[a] - 2) as f64);
        }
        base[a] = i as isize;
        frac[a] = s - i;
    }
    (base, frac)
}

fn trilinear<T>(base: [isize; 3], w: [f64; 3], mut f: impl FnMut([isize; 3]) -> T) -> T
where
    T: std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T> + Default,
{
    let mut acc = T::default();
    for dz in 0..2 {
        let wz = if dz == 0 { 1.0 - w[2] } else { w[2] };
        for dy in 0..2 {
            let wy = if dy == 0 { 1.0 - w[1] } else { w[1] };
            for dx in 0..2 {
                let wx = if dx == 0 { 1.0 - w[0] } else { w[0] };
                let c = [base[0] + dx, base[1] + dy, base[2] + dz];
                acc = acc + f(c) * (wx * wy * wz);
            }
        }
    }
    acc
}

pub fn interpolate<F: NodeAccess + ?Sized>(f: &F, q: [f64; 3]) -> Complex64 {
    let (base, w) = locate(f.grid(), q);
    trilinear(base, w, |c| f.node(c))
}

/// Centered-difference gradient at a node; one-sided at Dirichlet walls.
pub fn node_gradient<F: NodeAccess + ?Sized>(f: &F, c: [isize; 3]) -> [Complex64; 3] {
    let g = f.grid();
    let h = g.spacing();
    let n = g.points();
    let mut out = [Complex64::new(0.0, 0.0); 3];
    for a in 0..3 {
        let mut lo = c;
        let mut hi = c;
        let mut width = 2.0;
        if g.boundary() == Boundary::DirichletZero && c[a] <= 0 {
            width = 1.0;
        } else {
            lo[a] -= 1;
        }
        if g.boundary() == Boundary::DirichletZero && c[a] >= n[a] as isize - 1 {
            width -= 1.0;
        } else {
            hi[a] += 1;
        }
        out[a] = (f.node(hi) - f.node(lo)) / (width * h[a]);
    }
    out
}

#[derive(Default, Clone, Copy)]
struct CVec3([Complex64; 3]);

impl std::ops::Add for CVec3 {
    type Output = CVec3;
    fn add(self, o: CVec3) -> CVec3 {
        CVec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl std::ops::Mul<f64> for CVec3 {
    type Output = CVec3;
    fn mul(self, s: f64) -> CVec3 {
        CVec3([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }
}

/// Trilinear interpolation of node-centered gradients.
pub fn interpolate_gradient<F: NodeAccess + ?Sized>(f: &F, q: [f64; 3]) -> [Complex64; 3] {
    let (base, w) = locate(f.grid(), q);
    trilinear(base, w, |c| CVec3(node_gradient(f, c))).0
}

/// `Im(grad psi / psi)` at `q`, failing when `|psi(q)| < tolerance`.
pub fn phase_gradient<F: NodeAccess + ?Sized>(f: &F, q: [f64; 3], tolerance: f64) -> Result<[f64; 3]> {
    let v = interpolate(f, q);
    let a = v.norm();
    if !(a >= tolerance) || a == 0.0 {
        return Err(Error::NearNode { time: f64::NAN, value: a, tolerance });
    }
    let g = interpolate_gradient(f, q);
    Ok([(g[0] / v).im, (g[1] / v).im, (g[2] / v).im])
}

/// Relative near-node threshold applied to `max |psi|`.
pub const NODE_TOLERANCE: f64 = 1e-8;

/// Real-valued tabulated potential on the nodes of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RealField {
    grid: Grid3,
    values: Vec<f64>,
}

impl RealField {
    pub fn from_fn(grid: &Grid3, f: impl Fn([f64; 3]) -> f64 + Sync) -> Self {
        let values = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                let [i, j, k] = grid.coords(idx);
                f(grid.position(i, j, k))
            })
            .collect();
        RealField { grid: grid.clone(), values }
    }

    pub fn from_values(grid: &Grid3, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid("potential size does not match grid".into()));
        }
        Ok(RealField { grid: grid.clone(), values })
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}
