use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::grid::{Boundary, Grid3};

/// Value of the infinite simple-cubic lattice Green's function at the origin.
const WATSON: f64 = 0.252731009858663;
/// Offsets with `max |n_a| <= TABLE` are tabulated; beyond that the asymptotic expansion is used.
const TABLE: usize = 12;
/// Periodic box used to build the table.
const BOX: usize = 256;

/// Green's function of the unit-spacing 7-point `-Laplacian` on the infinite lattice,
/// `sum_nbr (G(n) - G(n + e)) = delta_{n0}`.
#[derive(Debug)]
pub struct LatticeGreen {
    table: Vec<f64>,
}

pub fn lattice_green() -> &'static LatticeGreen {
    static CELL: OnceLock<LatticeGreen> = OnceLock::new();
    CELL.get_or_init(LatticeGreen::build)
}

impl LatticeGreen {
    fn build() -> Self {
        let n = BOX;
        let m = TABLE + 1;
        let cosines: Vec<f64> = (0..n * m)
            .map(|i| (2.0 * PI * ((i / m) * (i % m)) as f64 / n as f64).cos())
            .collect();
        let cs = |j: usize, r: usize| cosines[j * m + r];
        let lam1: Vec<f64> = (0..n).map(|j| 2.0 - 2.0 * cs(j, 1)).collect();

        // partial cosine sums axis by axis, keeping only the tabulated outputs
        let mut a = vec![0.0; m * n * n];
        for jz in 0..n {
            for jy in 0..n {
                let base = lam1[jy] + lam1[jz];
                for jx in 0..n {
                    if jx == 0 && jy == 0 && jz == 0 {
                        continue;
                    }
                    let inv = 1.0 / (base + lam1[jx]);
                    for rx in 0..m {
                        a[(rx * n + jy) * n + jz] += cs(jx, rx) * inv;
                    }
                }
            }
        }
        let mut b = vec![0.0; m * m * n];
        for rx in 0..m {
            for jy in 0..n {
                for jz in 0..n {
                    let v = a[(rx * n + jy) * n + jz];
                    for ry in 0..m {
                        b[(rx * m + ry) * n + jz] += cs(jy, ry) * v;
                    }
                }
            }
        }
        let mut table = vec![0.0; m * m * m];
        let vol = (n * n * n) as f64;
        for rx in 0..m {
            for ry in 0..m {
                for jz in 0..n {
                    let v = b[(rx * m + ry) * n + jz];
                    for rz in 0..m {
                        table[(rx * m + ry) * m + rz] += cs(jz, rz) * v;
                    }
                }
            }
        }
        // remove the neutralising background and fix the additive constant
        let g0 = table[0] / vol;
        for rx in 0..m {
            for ry in 0..m {
                for rz in 0..m {
                    let r2 = (rx * rx + ry * ry + rz * rz) as f64;
                    let t = &mut table[(rx * m + ry) * m + rz];
                    *t = *t / vol - r2 / (6.0 * vol) + (WATSON - g0);
                }
            }
        }
        LatticeGreen { table }
    }

    /// `G(n)` on the unit lattice.
    pub fn value(&self, n: [isize; 3]) -> f64 {
        let a = [n[0].unsigned_abs(), n[1].unsigned_abs(), n[2].unsigned_abs()];
        if a.iter().all(|&x| x <= TABLE) {
            let m = TABLE + 1;
            self.table[(a[0] * m + a[1]) * m + a[2]]
        } else {
            asymptotic([a[0] as f64, a[1] as f64, a[2] as f64])
        }
    }

    /// `sum_j G_h(p - j) w_j dV` with `G_h = G / h`: the response of the lattice `-Laplacian`
    /// (spacing `h`, no boundaries) to the node weights `w`. The grid must be isotropic.
    pub fn smoothed(&self, grid: &Grid3, weights: &[(usize, f64)], p: [isize; 3]) -> f64 {
        let h = grid.spacing()[0];
        let n = grid.points();
        let periodic = grid.boundary() == Boundary::Periodic;
        let mut acc = 0.0;
        for &(idx, w) in weights {
            let c = grid.coords(idx);
            let mut d = [0isize; 3];
            for a in 0..3 {
                let mut v = p[a] - c[a] as isize;
                if periodic {
                    let len = n[a] as isize;
                    v = v.rem_euclid(len);
                    if 2 * v > len {
                        v -= len;
                    }
                }
                d[a] = v;
            }
            acc += self.value(d) * w;
        }
        acc * h * h
    }
}

/// Continuum Coulomb form plus the leading cubic-anisotropy correction.
fn asymptotic(x: [f64; 3]) -> f64 {
    let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
    let r = r2.sqrt();
    let s4 = (x[0].powi(4) + x[1].powi(4) + x[2].powi(4)) / (r2 * r2);
    1.0 / (4.0 * PI * r) + (15.0 * s4 - 9.0) / (96.0 * PI * r * r2)
}
