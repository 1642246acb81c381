//! Position measurement: cell partition, per-cell energy and its gradient, and the per-cell flow
//! that empties particle-free cells.

use std::collections::HashMap;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Boundary, ComplexField, Grid3, NodeAccess};
use crate::kleingordon::PilotWaveState;
use crate::params::PhysicalParams;
use crate::schrodinger::{sample_born, BohmianState};

/// Rectangular block of interior nodes. Edges leaving the block are dropped (zero flux), except
/// edges to Dirichlet wall nodes, which act as zero neighbours.
#[derive(Debug, Clone)]
pub struct Cell {
    /// Inclusive node-index bounds per axis.
    pub lo: [usize; 3],
    pub hi: [usize; 3],
    pub nodes: Vec<usize>,
    pub volume: f64,
    /// In-cell neighbours `(local index, 1/h^2)` of each node.
    links: Vec<Vec<(usize, f64)>>,
    /// Sum of `1/h^2` over edges to wall nodes.
    wall: Vec<f64>,
}

impl Cell {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains_node(&self, ijk: [usize; 3]) -> bool {
        (0..3).all(|a| ijk[a] >= self.lo[a] && ijk[a] <= self.hi[a])
    }

    fn gather(&self, psi: &ComplexField) -> Vec<Complex64> {
        self.nodes.iter().map(|&i| psi.values()[i]).collect()
    }

    /// `-lap` restricted to the cell.
    fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        (0..v.len())
            .map(|i| {
                let mut acc = v[i] * self.wall[i];
                for &(j, w) in &self.links[i] {
                    acc += (v[i] - v[j]) * w;
                }
                acc
            })
            .collect()
    }

    /// `sum |grad psi|^2 dV` over in-cell and wall edges.
    fn gradient_energy(&self, v: &[Complex64], dv: f64) -> f64 {
        let mut s = 0.0;
        for i in 0..v.len() {
            s += self.wall[i] * v[i].norm_sqr();
            for &(j, w) in &self.links[i] {
                if j > i {
                    s += w * (v[i] - v[j]).norm_sqr();
                }
            }
        }
        s * dv
    }
}

#[derive(Debug, Clone)]
pub struct CellPartition {
    pub grid: Grid3,
    pub cells: Vec<Cell>,
    /// Cell of each interior node along each axis, by block.
    cuts: [Vec<usize>; 3],
}

/// Split the interior nodes into `cuts[a]` nearly equal blocks per axis.
pub fn make_partition(grid: &Grid3, cuts: [usize; 3]) -> Result<CellPartition> {
    let mut edges: [Vec<usize>; 3] = Default::default();
    for a in 0..3 {
        let r = grid.interior_range(a);
        let n = r.len();
        if cuts[a] == 0 || cuts[a] > n {
            return Err(Error::Config(format!("axis {a}: {} cuts for {n} interior nodes", cuts[a])));
        }
        edges[a] = (0..=cuts[a]).map(|k| r.start + k * n / cuts[a]).collect();
    }
    let h = grid.spacing();
    let dv = grid.cell_volume();
    let pts = grid.points();
    let periodic = grid.boundary() == Boundary::Periodic;
    let mut cells = Vec::new();
    for cz in 0..cuts[2] {
        for cy in 0..cuts[1] {
            for cx in 0..cuts[0] {
                let lo = [edges[0][cx], edges[1][cy], edges[2][cz]];
                let hi = [edges[0][cx + 1] - 1, edges[1][cy + 1] - 1, edges[2][cz + 1] - 1];
                let mut nodes = Vec::new();
                let mut local = HashMap::new();
                for k in lo[2]..=hi[2] {
                    for j in lo[1]..=hi[1] {
                        for i in lo[0]..=hi[0] {
                            let idx = grid.index(i, j, k);
                            local.insert(idx, nodes.len());
                            nodes.push(idx);
                        }
                    }
                }
                let mut links = vec![Vec::new(); nodes.len()];
                let mut wall = vec![0.0; nodes.len()];
                for (li, &idx) in nodes.iter().enumerate() {
                    let c = grid.coords(idx);
                    for a in 0..3 {
                        let w = 1.0 / (h[a] * h[a]);
                        for d in [-1isize, 1] {
                            let mut nb = [c[0] as isize, c[1] as isize, c[2] as isize];
                            nb[a] += d;
                            match grid.resolve(nb) {
                                None => wall[li] += w,
                                Some(j) => {
                                    if !periodic && grid.is_boundary_node(grid.coords(j)) {
                                        wall[li] += w;
                                    } else if let Some(&lj) = local.get(&j) {
                                        // a two-node periodic axis would link a pair twice
                                        if lj != li || pts[a] > 2 {
                                            links[li].push((lj, w));
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                let volume = nodes.len() as f64 * dv;
                cells.push(Cell { lo, hi, nodes, volume, links, wall });
            }
        }
    }
    let mut owner: [Vec<usize>; 3] = Default::default();
    for a in 0..3 {
        owner[a] = vec![usize::MAX; pts[a]];
        for b in 0..cuts[a] {
            for i in edges[a][b]..edges[a][b + 1] {
                owner[a][i] = b;
            }
        }
    }
    Ok(CellPartition { grid: grid.clone(), cells, cuts: owner })
}

impl CellPartition {
    pub fn len(&self) -> usize {
        self.cells.len()
    }
    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    fn counts(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.cuts[a].iter().filter(|&&b| b != usize::MAX).max().map_or(0, |m| m + 1))
    }

    /// Cell holding the point, judged by its nearest interior node.
    pub fn cell_of(&self, q: [f64; 3]) -> Option<usize> {
        let g = &self.grid;
        if !g.contains(q) {
            return None;
        }
        let q = g.wrap(q);
        let h = g.spacing();
        let n = g.points();
        let counts = self.counts();
        let mut block = [0usize; 3];
        for a in 0..3 {
            let r = g.interior_range(a);
            let mut i = (q[a] / h[a]).round() as usize;
            if g.boundary() == Boundary::Periodic {
                i %= n[a];
            }
            i = i.clamp(r.start, r.end - 1);
            block[a] = self.cuts[a][i];
        }
        Some(block[0] + counts[0] * (block[1] + counts[1] * block[2]))
    }
}

/// `int_cell |psi|^2 dV`.
pub fn cell_norm_sqr(psi: &ComplexField, cell: &Cell) -> f64 {
    cell.nodes.iter().map(|&i| psi.values()[i].norm_sqr()).sum::<f64>() * psi.grid().cell_volume()
}

fn energy_of(v: &[Complex64], cell: &Cell, holds_particle: bool, params: &PhysicalParams, dv: f64, index: usize) -> Result<f64> {
    let k_c = params.scales().k_c;
    let pre = 2.0 * params.mass * params.light_speed.powi(2) * k_c;
    let mass: f64 = v.iter().map(|x| x.norm_sqr()).sum::<f64>() * dv;
    let mut e = pre * (k_c * k_c * mass + cell.gradient_energy(v, dv));
    if holds_particle {
        if !(mass > 0.0) {
            return Err(Error::SingularEnergy { cell: index });
        }
        e += params.singular_density * cell.volume * cell.volume / mass;
    }
    Ok(e)
}

/// `2 m c^2 k_c int_cell (k_c^2 |psi|^2 + |grad psi|^2) dV`, plus `rho_s V^2 / int_cell |psi|^2` when
/// the particle is in the cell.
pub fn cell_energy(psi: &ComplexField, partition: &CellPartition, cell: usize, q_p: [f64; 3], params: &PhysicalParams) -> Result<f64> {
    let c = &partition.cells[cell];
    let holds = partition.cell_of(q_p) == Some(cell);
    energy_of(&c.gather(psi), c, holds, params, psi.grid().cell_volume(), cell)
}

/// `(2 m c^2 k_c^3 - [q_p in cell] rho_s V^2 / N^2) psi - 2 m c^2 k_c lap psi` on the cell nodes, zero elsewhere.
pub fn energy_gradient(
    psi: &ComplexField,
    partition: &CellPartition,
    cell: usize,
    q_p: [f64; 3],
    params: &PhysicalParams,
) -> Result<ComplexField> {
    let c = &partition.cells[cell];
    let v = c.gather(psi);
    let k_c = params.scales().k_c;
    let pre = 2.0 * params.mass * params.light_speed.powi(2) * k_c;
    let mut diag = pre * k_c * k_c;
    if partition.cell_of(q_p) == Some(cell) {
        let mass = cell_norm_sqr(psi, c);
        if !(mass > 0.0) {
            return Err(Error::SingularEnergy { cell });
        }
        diag -= params.singular_density * c.volume * c.volume / (mass * mass);
    }
    let lap = c.apply(&v);
    let mut out = ComplexField::zeros(psi.grid());
    for (li, &idx) in c.nodes.iter().enumerate() {
        out.values_mut()[idx] = diag * v[li] + pre * lap[li];
    }
    Ok(out)
}

/// Conjugate gradients for `(alpha I + beta (-lap_cell)) x = b`.
fn solve_shifted(cell: &Cell, alpha: f64, beta: f64, b: &[Complex64], x0: &[Complex64]) -> Vec<Complex64> {
    let op = |v: &[Complex64]| -> Vec<Complex64> {
        let l = cell.apply(v);
        v.iter().zip(&l).map(|(vi, li)| alpha * vi + beta * li).collect()
    };
    let dot = |a: &[Complex64], b: &[Complex64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x.conj() * y).re).sum() };
    let mut x = x0.to_vec();
    let ax = op(&x);
    let mut r: Vec<Complex64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let bnorm = dot(b, b).max(f64::MIN_POSITIVE);
    for _ in 0..10 * b.len().max(10) {
        if rr <= 1e-30 * bnorm {
            break;
        }
        let ap = op(&p);
        let alpha_k = rr / dot(&p, &ap);
        for i in 0..x.len() {
            x[i] += alpha_k * p[i];
            r[i] -= alpha_k * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta_k = rr_new / rr;
        for i in 0..p.len() {
            p[i] = r[i] + beta_k * p[i];
        }
        rr = rr_new;
    }
    x
}

#[derive(Debug, Clone)]
pub struct MeasurementOutcome {
    pub cell_index: usize,
    pub psi: ComplexField,
    pub times: Vec<f64>,
    /// `norms[n][alpha]`: `sqrt(int_cell |psi|^2)` after step `n`.
    pub norms: Vec<Vec<f64>>,
    pub energies: Vec<Vec<f64>>,
    pub duration: f64,
}

impl MeasurementOutcome {
    /// `V^{-1} int |psi|^2` of the particle cell at the end.
    pub fn plateau(&self, partition: &CellPartition) -> f64 {
        let n = self.norms.last().expect("non-empty")[self.cell_index];
        n * n / partition.cells[self.cell_index].volume
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        let cells = self.norms.first().map_or(0, |v| v.len());
        let mut header = String::from("t");
        for a in 0..cells {
            header.push_str(&format!(",norm_{a}"));
        }
        for a in 0..cells {
            header.push_str(&format!(",energy_{a}"));
        }
        writeln!(w, "{header}")?;
        for (n, t) in self.times.iter().enumerate() {
            let mut line = format!("{t:.17e}");
            for v in self.norms[n].iter().chain(&self.energies[n]) {
                line.push_str(&format!(",{v:.17e}"));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Flow `d_t psi = -kappa (omega_c/2 - [q_p in cell] (omega_s/2) (V/N)^2) psi + kappa (hbar/2m) lap psi`
/// in each cell independently, with `q_p` frozen. Each step is implicit in the linear terms and
/// explicit in the norm-dependent coefficient.
pub fn measurement_flow(
    psi: &ComplexField,
    partition: &CellPartition,
    q_p: [f64; 3],
    params: &PhysicalParams,
    t_meas: f64,
    dt: f64,
) -> Result<MeasurementOutcome> {
    let kappa = params.kappa;
    if !(kappa > 0.0) {
        return Err(Error::InvalidParams(format!("measurement needs kappa > 0, got {kappa}")));
    }
    if !(dt > 0.0 && t_meas > 0.0) {
        return Err(Error::InvalidParams(format!("need dt > 0 and T > 0 (dt = {dt}, T = {t_meas})")));
    }
    let home = partition.cell_of(q_p).ok_or(Error::OutsideDomain(q_p))?;
    let s = params.scales();
    let dv = psi.grid().cell_volume();
    let steps = crate::params::step_count(t_meas, dt);
    let dt = t_meas / steps as f64;
    let alpha = 1.0 + dt * kappa * 0.5 * s.omega_c;
    let beta = dt * kappa * params.hbar / (2.0 * params.mass);
    let fixed_point = (s.omega_s / s.omega_c).sqrt();

    let mut fields: Vec<Vec<Complex64>> = partition.cells.iter().map(|c| c.gather(psi)).collect();
    let ceilings: Vec<f64> = fields
        .iter()
        .zip(&partition.cells)
        .map(|(v, c)| {
            let m = v.iter().map(|x| x.norm_sqr()).sum::<f64>() * dv / c.volume;
            10.0 * m.max(fixed_point)
        })
        .collect();
    let observe = |fields: &[Vec<Complex64>]| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut norms = Vec::with_capacity(fields.len());
        let mut energies = Vec::with_capacity(fields.len());
        for (a, (v, c)) in fields.iter().zip(&partition.cells).enumerate() {
            let m = v.iter().map(|x| x.norm_sqr()).sum::<f64>() * dv;
            norms.push(m.sqrt());
            energies.push(energy_of(v, c, a == home, params, dv, a)?);
        }
        Ok((norms, energies))
    };
    let (n0, e0) = observe(&fields)?;
    let mut times = vec![0.0];
    let mut norms = vec![n0];
    let mut energies = vec![e0];
    for n in 1..=steps {
        let t = n as f64 * dt;
        fields = fields
            .into_par_iter()
            .zip(partition.cells.par_iter())
            .enumerate()
            .map(|(a, (v, c))| {
                let mut gain = 1.0;
                if a == home {
                    let m = v.iter().map(|x| x.norm_sqr()).sum::<f64>() * dv;
                    if !(m > 0.0) {
                        return Err(Error::SingularEnergy { cell: a });
                    }
                    gain += dt * kappa * 0.5 * s.omega_s * (c.volume / m).powi(2);
                }
                let rhs: Vec<Complex64> = v.iter().map(|x| x * gain).collect();
                let next = solve_shifted(c, alpha, beta, &rhs, &v);
                let m = next.iter().map(|x| x.norm_sqr()).sum::<f64>() * dv / c.volume;
                if !m.is_finite() || m > ceilings[a] {
                    return Err(Error::FlowFailure { time: t, reason: format!("cell {a} density {m:e} left the bounded range") });
                }
                Ok(next)
            })
            .collect::<Result<Vec<_>>>()?;
        let (nn, ee) = observe(&fields)?;
        times.push(t);
        norms.push(nn);
        energies.push(ee);
    }
    let mut out = ComplexField::zeros(psi.grid());
    for (v, c) in fields.iter().zip(&partition.cells) {
        for (x, &idx) in v.iter().zip(&c.nodes) {
            out.values_mut()[idx] = *x;
        }
    }
    Ok(MeasurementOutcome { cell_index: home, psi: out, times, norms, energies, duration: t_meas })
}

/// States that can undergo a position measurement.
pub trait Measurable {
    fn continuous_field(&self) -> &ComplexField;
    fn particle_position(&self) -> [f64; 3];
    /// Replace the continuous field with the collapsed one.
    fn collapse_to(&mut self, psi: ComplexField);
}

impl Measurable for BohmianState {
    fn continuous_field(&self) -> &ComplexField {
        &self.psi
    }
    fn particle_position(&self) -> [f64; 3] {
        self.particle.position
    }
    fn collapse_to(&mut self, psi: ComplexField) {
        self.psi = psi;
    }
}

impl Measurable for PilotWaveState {
    fn continuous_field(&self) -> &ComplexField {
        &self.psi
    }
    fn particle_position(&self) -> [f64; 3] {
        self.particle.position
    }
    fn collapse_to(&mut self, psi: ComplexField) {
        self.psi = psi;
    }
}

/// Run the flow on the state's field, install the collapsed field, and report the outcome.
pub fn measure_position<S: Measurable>(
    state: &mut S,
    partition: &CellPartition,
    params: &PhysicalParams,
    t_meas: f64,
    dt: f64,
) -> Result<MeasurementOutcome> {
    let out = measurement_flow(state.continuous_field(), partition, state.particle_position(), params, t_meas, dt)?;
    state.collapse_to(out.psi.clone());
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeStatistics {
    pub counts: Vec<usize>,
    /// `int_cell |psi|^2 / int |psi|^2` of the trilinear interpolant.
    pub expected: Vec<f64>,
    pub trials: usize,
}

impl OutcomeStatistics {
    /// Largest `|count - n p| / sqrt(n p (1 - p))` over cells.
    pub fn max_z(&self) -> f64 {
        let n = self.trials as f64;
        self.counts
            .iter()
            .zip(&self.expected)
            .map(|(&k, &p)| {
                let var = n * p * (1.0 - p);
                if var > 0.0 {
                    (k as f64 - n * p).abs() / var.sqrt()
                } else if (k as f64 - n * p).abs() < 0.5 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Measure `trials` copies of `psi` with Born-sampled particles. The flow depends on the particle
/// only through its cell, so one flow per occupied cell is run and reused.
pub fn measurement_ensemble(
    psi: &ComplexField,
    partition: &CellPartition,
    params: &PhysicalParams,
    t_meas: f64,
    dt: f64,
    trials: usize,
    seed: u64,
) -> Result<OutcomeStatistics> {
    let positions = sample_born(psi, trials, seed)?;
    let mut counts = vec![0; partition.len()];
    let mut done: HashMap<usize, usize> = HashMap::new();
    for q in positions {
        let cell = partition.cell_of(q).ok_or(Error::OutsideDomain(q))?;
        let outcome = match done.get(&cell) {
            Some(&o) => o,
            None => {
                let mut st = BohmianState::new(psi.clone(), q)?;
                let o = measure_position(&mut st, partition, params, t_meas, dt)?.cell_index;
                done.insert(cell, o);
                o
            }
        };
        counts[outcome] += 1;
    }
    let expected = cell_probabilities(psi, partition);
    Ok(OutcomeStatistics { counts, expected, trials })
}

/// Probability of each cell under `|psi|^2` of the trilinear interpolant, with cells owning the
/// half-spacing slabs around their nodes.
pub fn cell_probabilities(psi: &ComplexField, partition: &CellPartition) -> Vec<f64> {
    use crate::grid::interpolate;
    let g = psi.grid();
    let h = g.spacing();
    // midpoint rule on a 4x refined lattice, assigning each sample to its cell
    let fine = 4usize;
    let n = g.points();
    let span = |a: usize| match g.boundary() {
        Boundary::Periodic => n[a] * fine,
        Boundary::DirichletZero => (n[a] - 1) * fine,
    };
    let (sx, sy, sz) = (span(0), span(1), span(2));
    let mut mass = vec![0.0; partition.len()];
    let partial: Vec<Vec<f64>> = (0..sz)
        .into_par_iter()
        .map(|k| {
            let mut m = vec![0.0; partition.len()];
            for j in 0..sy {
                for i in 0..sx {
                    let q = [
                        (i as f64 + 0.5) * h[0] / fine as f64,
                        (j as f64 + 0.5) * h[1] / fine as f64,
                        (k as f64 + 0.5) * h[2] / fine as f64,
                    ];
                    if let Some(c) = partition.cell_of(q) {
                        m[c] += interpolate(psi, q).norm_sqr();
                    }
                }
            }
            m
        })
        .collect();
    for m in partial {
        for (a, v) in m.into_iter().enumerate() {
            mass[a] += v;
        }
    }
    let total: f64 = mass.iter().sum();
    mass.iter().map(|m| m / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn dirichlet(n: usize) -> Grid3 {
        Grid3::cube(PI, n, Boundary::DirichletZero).unwrap()
    }

    #[test]
    fn partition_covers_interior_once() {
        let g = dirichlet(11);
        let p = make_partition(&g, [2, 3, 1]).unwrap();
        let mut seen = vec![0; g.len()];
        for c in &p.cells {
            for &i in &c.nodes {
                seen[i] += 1;
            }
        }
        for idx in 0..g.len() {
            let expect = if g.is_boundary_node(g.coords(idx)) { 0 } else { 1 };
            assert_eq!(seen[idx], expect);
        }
        let v: f64 = p.cells.iter().map(|c| c.volume).sum();
        assert_relative_eq!(v, g.interior_count() as f64 * g.cell_volume(), max_relative = 1e-12);
    }

    #[test]
    fn single_and_split_cells() {
        let g = dirichlet(10);
        assert_eq!(make_partition(&g, [1, 1, 1]).unwrap().cells[0].len(), g.interior_count());
        let two = make_partition(&g, [2, 1, 1]).unwrap();
        assert_relative_eq!(two.cells[0].volume, two.cells[1].volume);
        assert!(make_partition(&g, [0, 1, 1]).is_err());
        assert!(make_partition(&g, [9, 1, 1]).is_err());
    }

    #[test]
    fn uniform_periodic_energy() {
        let g = Grid3::cube(2.0, 8, Boundary::Periodic).unwrap();
        let p = PhysicalParams::natural(2.0).unwrap();
        let part = make_partition(&g, [1, 1, 1]).unwrap();
        let a = 0.3;
        let psi = ComplexField::from_fn(&g, |_| Complex64::new(0.0, a));
        let far = [f64::NAN; 3];
        let e = cell_energy(&psi, &part, 0, far, &p).unwrap();
        let k = p.scales().k_c;
        assert_relative_eq!(e, 2.0 * 4.0 * k.powi(3) * a * a * 8.0, max_relative = 1e-12);
        let with = cell_energy(&psi, &part, 0, [1.0; 3], &p).unwrap();
        assert_relative_eq!(with - e, p.singular_density * 8.0 / (a * a), max_relative = 1e-12);
        let grad = energy_gradient(&psi, &part, 0, far, &p).unwrap();
        assert_relative_eq!(grad.values()[5].im, 2.0 * 4.0 * k.powi(3) * a, max_relative = 1e-12);
        assert_eq!(cell_energy(&ComplexField::zeros(&g), &part, 0, far, &p).unwrap(), 0.0);
    }

    fn fd_check(seed: u64) -> f64 {
        let g = dirichlet(9);
        let p = PhysicalParams::natural(1.5).unwrap();
        let part = make_partition(&g, [2, 1, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut psi = ComplexField::from_fn(&g, |_| Complex64::new(0.0, 0.0));
        for v in psi.values_mut() {
            *v = Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        }
        psi.enforce_boundary();
        let q = [1.0, 1.2, 0.9];
        let cell = part.cell_of(q).unwrap();
        let grad = energy_gradient(&psi, &part, cell, q, &p).unwrap();
        let dv = g.cell_volume();
        let mut worst: f64 = 0.0;
        for &idx in part.cells[cell].nodes.iter().step_by(7) {
            let mut comp = [0.0; 2];
            for (k, dir) in [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)].iter().enumerate() {
                let eps = 1e-5;
                let mut up = psi.clone();
                up.values_mut()[idx] += dir * eps;
                let mut dn = psi.clone();
                dn.values_mut()[idx] -= dir * eps;
                comp[k] = (cell_energy(&up, &part, cell, q, &p).unwrap() - cell_energy(&dn, &part, cell, q, &p).unwrap()) / (2.0 * eps);
            }
            let fd = Complex64::new(comp[0], comp[1]) / (2.0 * dv);
            let an = grad.values()[idx];
            worst = worst.max((fd - an).norm() / an.norm());
        }
        worst
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..3 {
            let e = fd_check(seed);
            assert!(e < 1e-6, "seed {seed}: {e:e}");
        }
    }

    #[test]
    fn empty_cell_decays_at_half_compton_rate() {
        let g = Grid3::cube(2.0, 8, Boundary::Periodic).unwrap();
        let p = PhysicalParams::natural(2.0).unwrap();
        let psi = ComplexField::from_fn(&g, |_| Complex64::new(0.2, 0.0));
        let part2 = make_partition(&g, [2, 1, 1]).unwrap();
        let q = [0.2, 1.0, 1.0];
        let out = measurement_flow(&psi, &part2, q, &p, 0.1, 1e-4).unwrap();
        let other = 1 - out.cell_index;
        let w = p.scales().omega_c;
        let ratio = out.norms.last().unwrap()[other] / out.norms[0][other];
        assert_relative_eq!(ratio, (-w * 0.1 / 2.0).exp(), max_relative = 1e-3);
    }

    #[test]
    fn flow_needs_positive_kappa() {
        let g = dirichlet(8);
        let p = PhysicalParams { kappa: 0.0, ..PhysicalParams::natural(1.0).unwrap() };
        let part = make_partition(&g, [1, 1, 1]).unwrap();
        let psi = ComplexField::from_fn(&g, |_| Complex64::new(1.0, 0.0));
        assert!(measurement_flow(&psi, &part, [1.5; 3], &p, 1.0, 0.1).is_err());
    }
}
