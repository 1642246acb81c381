//! Cross-solver metrics: trajectory and field deviation, convergence-order fits, ensemble statistics.

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::grid::{interpolate, Boundary, ComplexField, Grid3, NodeAccess};
use crate::kleingordon::{run_pilotwave, PilotWaveSetup};
use crate::numerics::fit_line;
use crate::params::PhysicalParams;
use crate::schrodinger::{
    advect_ensemble, integrate_bohmian_observed, interpolant_mass, sample_born, BohmianState, SchrodingerSolver,
};
use crate::spectral::LaplacianKind;
use crate::trajectory::TrajectoryRecord;

/// Start index and weights of the local cubic (or lower, near short records) through the samples
/// bracketing `t`.
fn lagrange_weights(times: &[f64], t: f64) -> (usize, Vec<f64>) {
    let n = times.len();
    let m = n.min(4);
    let right = times.partition_point(|&s| s < t);
    let start = (right as isize - (m as isize) / 2).clamp(0, (n - m) as isize) as usize;
    let nodes = &times[start..start + m];
    let w = (0..m)
        .map(|i| {
            (0..m)
                .filter(|&j| j != i)
                .map(|j| (t - nodes[j]) / (nodes[i] - nodes[j]))
                .product()
        })
        .collect();
    (start, w)
}

fn resample_position(rec: &TrajectoryRecord, t: f64) -> [f64; 3] {
    let (s, w) = lagrange_weights(&rec.times, t);
    let mut q = [0.0; 3];
    for (k, wk) in w.iter().enumerate() {
        for a in 0..3 {
            q[a] += wk * rec.positions[s + k][a];
        }
    }
    q
}

fn resample_complex(times: &[f64], values: &[Complex64], t: f64) -> Complex64 {
    let (s, w) = lagrange_weights(times, t);
    w.iter().enumerate().map(|(k, wk)| *wk * values[s + k]).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Deviation {
    pub sup: f64,
    /// `sqrt` of the time average of `|q_a - q_b|^2`.
    pub l2: f64,
}

/// Compare `a` with `b` resampled to `a`'s times inside the overlap of the two ranges.
pub fn trajectory_deviation(a: &TrajectoryRecord, b: &TrajectoryRecord) -> Result<Deviation> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::DisjointTimes);
    }
    let lo = a.times[0].max(b.times[0]);
    let hi = a.times[a.len() - 1].min(b.times[b.len() - 1]);
    let slack = 1e-9 * (1.0 + hi.abs());
    if hi < lo - slack {
        return Err(Error::DisjointTimes);
    }
    let mut ts = Vec::new();
    let mut d2 = Vec::new();
    for (i, &t) in a.times.iter().enumerate() {
        if t < lo - slack || t > hi + slack {
            continue;
        }
        let qb = resample_position(b, t);
        let qa = a.positions[i];
        ts.push(t);
        d2.push((0..3).map(|k| (qa[k] - qb[k]).powi(2)).sum::<f64>());
    }
    if ts.is_empty() {
        return Err(Error::DisjointTimes);
    }
    let sup = d2.iter().copied().fold(0.0, f64::max).sqrt();
    let span = ts[ts.len() - 1] - ts[0];
    let l2 = if span > 0.0 {
        let area: f64 = (1..ts.len()).map(|i| 0.5 * (d2[i] + d2[i - 1]) * (ts[i] - ts[i - 1])).sum();
        (area / span).sqrt()
    } else {
        d2[0].sqrt()
    };
    Ok(Deviation { sup, l2 })
}

/// Shared nondimensional initial data and numerics of a light-speed sweep.
#[derive(Debug, Clone)]
pub struct ConvergenceSetup {
    pub psi0: ComplexField,
    pub position: [f64; 3],
    pub t_end: f64,
    pub lights: Vec<f64>,
    pub coupling_a: f64,
    pub coupling_b: f64,
    /// Field comparison points, away from the particle.
    pub probes: Vec<[f64; 3]>,
    pub reference_dt: f64,
    pub reference_kind: LaplacianKind,
    /// Multiplies the default pilot-wave step.
    pub dt_factor: f64,
}

impl ConvergenceSetup {
    pub fn new(psi0: ComplexField, position: [f64; 3], t_end: f64, lights: Vec<f64>) -> Self {
        ConvergenceSetup {
            psi0,
            position,
            t_end,
            lights,
            coupling_a: -4.0 * std::f64::consts::PI,
            coupling_b: 1.0,
            probes: Vec::new(),
            reference_dt: 1e-3,
            reference_kind: LaplacianKind::SevenPoint,
            dt_factor: 1.0,
        }
    }

    fn params(&self, c: f64) -> Result<PhysicalParams> {
        PhysicalParams::natural(c)?.with_coupling(self.coupling_a, self.coupling_b)
    }
}

#[derive(Debug, Clone)]
pub struct MemberResult {
    pub c: f64,
    pub dt: f64,
    pub deviation: Deviation,
    /// Largest `|psi_KG - psi_S|` over probes and recorded times.
    pub field_deviation: f64,
    pub record: TrajectoryRecord,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub lights: Vec<f64>,
    /// `U = max |u|` of the Bohmian reference.
    pub velocity_scale: f64,
    pub reference: TrajectoryRecord,
    pub members: Vec<MemberResult>,
    /// Runs stopped by the node tolerance; excluded from the fit.
    pub excluded: Vec<(f64, String)>,
    /// Runs that failed for any other reason.
    pub failed: Vec<(f64, String)>,
    /// Slope of `log(sup deviation)` against `log(U/c)`.
    pub order: f64,
    pub fit_residual: f64,
    pub notes: Vec<String>,
}

impl ConvergenceReport {
    fn member(&self, c: f64) -> Option<&MemberResult> {
        self.members.iter().find(|m| m.c == c)
    }

    /// The first failure as an error, if any.
    pub fn check(&self) -> Result<()> {
        match self.failed.first() {
            Some((c, msg)) => Err(Error::Member { c: *c, source: Box::new(Error::Config(msg.clone())) }),
            None => Ok(()),
        }
    }

    /// Sup and field deviations both strictly decrease with `c`.
    pub fn strictly_decreasing(&self) -> bool {
        let ms: Vec<&MemberResult> = self.lights.iter().filter_map(|&c| self.member(c)).collect();
        ms.len() == self.lights.len()
            && ms.windows(2).all(|w| {
                w[1].deviation.sup < w[0].deviation.sup && w[1].field_deviation < w[0].field_deviation
            })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "c,U,sup_dev,l2_dev,field_dev")?;
        for m in &self.members {
            writeln!(
                w,
                "{},{:.17e},{:.17e},{:.17e},{:.17e}",
                m.c, self.velocity_scale, m.deviation.sup, m.deviation.l2, m.field_deviation
            )?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = format!("U = {:.6e}\n", self.velocity_scale);
        for m in &self.members {
            s.push_str(&format!(
                "c = {}: dt = {:.3e}, sup = {:.6e}, l2 = {:.6e}, field = {:.6e}\n",
                m.c, m.dt, m.deviation.sup, m.deviation.l2, m.field_deviation
            ));
        }
        s.push_str(&format!("order = {:.4}, residual = {:.3e}\n", self.order, self.fit_residual));
        for (c, e) in self.excluded.iter().chain(&self.failed) {
            s.push_str(&format!("c = {c}: {e}\n"));
        }
        for n in &self.notes {
            s.push_str(n);
            s.push('\n');
        }
        s
    }
}

/// Bohmian reference once, then one pilot-wave run per `c`, all from the same initial data.
/// Member failures are recorded in the report rather than returned.
pub fn convergence_study(setup: &ConvergenceSetup) -> Result<ConvergenceReport> {
    if setup.lights.len() < 3 {
        return Err(Error::Config(format!("need at least 3 light speeds, got {}", setup.lights.len())));
    }
    let grid = setup.psi0.grid().clone();
    let ref_params = setup.params(setup.lights[0])?;
    let solver = SchrodingerSolver::new(&grid, &ref_params, setup.reference_kind, None);
    let mut probe_times = Vec::new();
    let mut probe_vals: Vec<Vec<Complex64>> = Vec::new();
    let probes = setup.probes.clone();
    let (reference, _) = integrate_bohmian_observed(
        &solver,
        BohmianState::new(setup.psi0.clone(), setup.position)?,
        setup.t_end,
        setup.reference_dt,
        &ref_params,
        1,
        &mut |st| {
            probe_times.push(st.time);
            probe_vals.push(probes.iter().map(|p| interpolate(&st.psi, *p)).collect());
            Ok(())
        },
    )?;
    let velocity_scale = reference.velocity_scale();

    let runs: Vec<(f64, Result<MemberResult>)> = setup
        .lights
        .par_iter()
        .map(|&c| {
            let r = (|| {
                let params = setup.params(c)?;
                let mut pw = PilotWaveSetup::new(params, setup.psi0.clone(), setup.position);
                pw.dt = Some(PilotWaveSetup::default_dt(&grid, &params) * setup.dt_factor);
                pw.probes = setup.probes.clone();
                let out = run_pilotwave(pw, setup.t_end, 0, &mut |_| Ok(()))?;
                let deviation = trajectory_deviation(&out.record, &reference)?;
                let mut field_deviation: f64 = 0.0;
                for (n, &t) in out.probes.times.iter().enumerate() {
                    for j in 0..setup.probes.len() {
                        let series: Vec<Complex64> = probe_vals.iter().map(|v| v[j]).collect();
                        let r = resample_complex(&probe_times, &series, t);
                        field_deviation = field_deviation.max((out.probes.values[n][j] - r).norm());
                    }
                }
                Ok(MemberResult { c, dt: out.dt, deviation, field_deviation, record: out.record })
            })();
            (c, r)
        })
        .collect();

    let mut members = Vec::new();
    let mut excluded = Vec::new();
    let mut failed = Vec::new();
    for (c, r) in runs {
        match r {
            Ok(m) => members.push(m),
            Err(e @ Error::NearNode { .. }) => excluded.push((c, e.to_string())),
            Err(e) => failed.push((c, e.to_string())),
        }
    }
    let mut notes = Vec::new();
    let (order, fit_residual) = if members.len() >= 2 && velocity_scale > 0.0 {
        let x: Vec<f64> = members.iter().map(|m| (velocity_scale / m.c).ln()).collect();
        let y: Vec<f64> = members.iter().map(|m| m.deviation.sup.max(f64::MIN_POSITIVE).ln()).collect();
        let (_, slope, res) = fit_line(&x, &y);
        (slope, res)
    } else {
        notes.push("fewer than two usable runs or U = 0: no order fitted".to_string());
        (f64::NAN, f64::NAN)
    };
    if setup.coupling_b == 0.0 {
        notes.push("coupling off (b = 0): deviations are discretisation only and the fitted order is meaningless".to_string());
    }
    Ok(ConvergenceReport {
        lights: setup.lights.clone(),
        velocity_scale,
        reference,
        members,
        excluded,
        failed,
        order,
        fit_residual,
        notes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChiSquareReport {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub samples: usize,
    /// Particles lost to the node tolerance or the boundary.
    pub excluded: usize,
}

/// Pearson test of `positions` against the trilinear `|psi|^2`, on `bins` blocks of grid cells per
/// axis. Bins expecting fewer than 5 counts are pooled.
pub fn chi_square_test(psi: &ComplexField, positions: &[[f64; 3]], bins: usize) -> Result<ChiSquareReport> {
    let g = psi.grid();
    let n = g.points();
    let h = g.spacing();
    let cells: [usize; 3] = [0, 1, 2].map(|a| match g.boundary() {
        Boundary::Periodic => n[a],
        Boundary::DirichletZero => n[a] - 1,
    });
    let b = [0, 1, 2].map(|a| bins.clamp(1, cells[a]));
    let edge = |a: usize, k: usize| k * cells[a] / b[a];
    let mut prob = Vec::with_capacity(b[0] * b[1] * b[2]);
    for bz in 0..b[2] {
        for by in 0..b[1] {
            for bx in 0..b[0] {
                prob.push(interpolant_mass(
                    psi,
                    [edge(0, bx), edge(1, by), edge(2, bz)],
                    [edge(0, bx + 1), edge(1, by + 1), edge(2, bz + 1)],
                ));
            }
        }
    }
    let total: f64 = prob.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateDensity);
    }
    let block = |a: usize, x: f64| -> usize {
        let cell = ((x / h[a]).floor().max(0.0) as usize).min(cells[a] - 1);
        (0..b[a]).rev().find(|&k| edge(a, k) <= cell).unwrap_or(0)
    };
    let mut counts = vec![0usize; prob.len()];
    for q in positions {
        let q = g.wrap(*q);
        counts[block(0, q[0]) + b[0] * (block(1, q[1]) + b[1] * block(2, q[2]))] += 1;
    }
    let samples = positions.len();
    let ns = samples as f64;
    let mut stat = 0.0;
    let mut bins_used = 0;
    let (mut pool_e, mut pool_o) = (0.0, 0.0);
    for (p, &o) in prob.iter().zip(&counts) {
        let e = ns * p / total;
        if e >= 5.0 {
            stat += (o as f64 - e).powi(2) / e;
            bins_used += 1;
        } else {
            pool_e += e;
            pool_o += o as f64;
        }
    }
    if pool_e > 0.0 {
        stat += (pool_o - pool_e).powi(2) / pool_e;
        bins_used += 1;
    }
    if bins_used < 2 {
        return Err(Error::Config("too few populated bins for a chi-square test".into()));
    }
    let dof = bins_used - 1;
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::Config(e.to_string()))?;
    Ok(ChiSquareReport { statistic: stat, dof, p_value: dist.sf(stat), samples, excluded: 0 })
}

/// Born-sample `n` particles, advect them with `psi` to `t_end`, and test against `|psi(t_end)|^2`.
pub fn born_equivariance(
    psi0: &ComplexField,
    params: &PhysicalParams,
    kind: LaplacianKind,
    n: usize,
    t_end: f64,
    dt: f64,
    bins: usize,
    seed: u64,
) -> Result<ChiSquareReport> {
    if n < 1000 {
        return Err(Error::Config(format!("ensemble of {n} is below the minimum of 1000")));
    }
    let start = sample_born(psi0, n, seed)?;
    let solver = SchrodingerSolver::new(psi0.grid(), params, kind, None);
    let (psi_t, ends) = advect_ensemble(&solver, psi0.clone(), &start, t_end, dt, params)?;
    let kept: Vec<[f64; 3]> = ends.iter().flatten().copied().collect();
    let mut report = chi_square_test(&psi_t, &kept, bins)?;
    report.excluded = n - kept.len();
    Ok(report)
}

/// `n` points drawn uniformly over the domain; a negative control for the Born tests.
pub fn uniform_positions(grid: &Grid3, n: usize, seed: u64) -> Vec<[f64; 3]> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let l = grid.extent();
    (0..n).map(|_| [0, 1, 2].map(|a| rng.random::<f64>() * l[a])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn record(times: &[f64], f: impl Fn(f64) -> [f64; 3]) -> TrajectoryRecord {
        let mut r = TrajectoryRecord::default();
        for &t in times {
            r.push(t, f(t), [0.0; 3], 1.0, 0.0);
        }
        r
    }

    fn sine(t: f64) -> [f64; 3] {
        [1.0 + 0.3 * t.sin(), 0.5 * (2.0 * t).cos(), t]
    }

    #[test]
    fn identical_records_have_zero_deviation() {
        let ts: Vec<f64> = (0..50).map(|i| 0.1 * i as f64).collect();
        let a = record(&ts, sine);
        let d = trajectory_deviation(&a, &a).unwrap();
        assert_eq!((d.sup, d.l2), (0.0, 0.0));
    }

    #[test]
    fn constant_offset() {
        let ts: Vec<f64> = (0..50).map(|i| 0.1 * i as f64).collect();
        let a = record(&ts, sine);
        let b = record(&ts, |t| {
            let q = sine(t);
            [q[0] + 0.3, q[1] - 0.4, q[2]]
        });
        let d = trajectory_deviation(&a, &b).unwrap();
        assert_relative_eq!(d.sup, 0.5, max_relative = 1e-12);
        assert_relative_eq!(d.l2, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn cubic_resampling_of_sine_paths() {
        let dt = 0.01;
        let fine: Vec<f64> = (0..=400).map(|i| 0.5 * dt * i as f64).collect();
        let coarse: Vec<f64> = (0..=200).map(|i| dt * i as f64).collect();
        let d = trajectory_deviation(&record(&fine, sine), &record(&coarse, sine)).unwrap();
        assert!(d.sup < 1e-8, "{}", d.sup);
    }

    #[test]
    fn disjoint_ranges_are_rejected() {
        let a = record(&[0.0, 1.0], sine);
        let b = record(&[2.0, 3.0], sine);
        assert!(matches!(trajectory_deviation(&a, &b), Err(Error::DisjointTimes)));
    }

    proptest::proptest! {
        #[test]
        fn deviation_is_symmetric_and_subadditive(o1 in -1.0f64..1.0, o2 in -1.0f64..1.0, w in 0.5f64..3.0) {
            let ts: Vec<f64> = (0..30).map(|i| 0.1 * i as f64).collect();
            let a = record(&ts, sine);
            let b = record(&ts, |t| { let q = sine(t); [q[0] + o1 * (w * t).sin(), q[1], q[2]] });
            let c = record(&ts, |t| { let q = sine(t); [q[0], q[1] + o2 * t, q[2]] });
            let ab = trajectory_deviation(&a, &b).unwrap();
            let ba = trajectory_deviation(&b, &a).unwrap();
            let bc = trajectory_deviation(&b, &c).unwrap();
            let ac = trajectory_deviation(&a, &c).unwrap();
            proptest::prop_assert!((ab.sup - ba.sup).abs() < 1e-12 && (ab.l2 - ba.l2).abs() < 1e-12);
            proptest::prop_assert!(ac.sup <= ab.sup + bc.sup + 1e-12);
            proptest::prop_assert!(ac.l2 <= ab.l2 + bc.l2 + 1e-12);
        }
    }

    fn ground(n: usize) -> ComplexField {
        let l = PI;
        let g = Grid3::cube(l, n, Boundary::DirichletZero).unwrap();
        ComplexField::from_fn(&g, |x| Complex64::new(x[0].sin() * x[1].sin() * x[2].sin(), 0.0))
    }

    #[test]
    fn chi_square_accepts_born_and_rejects_uniform() {
        let psi = ground(17);
        let born = sample_born(&psi, 4000, 3).unwrap();
        assert!(chi_square_test(&psi, &born, 4).unwrap().p_value > 1e-3);
        let flat = uniform_positions(psi.grid(), 4000, 3);
        assert!(chi_square_test(&psi, &flat, 4).unwrap().p_value < 1e-3);
    }

    #[test]
    fn stationary_state_keeps_its_ensemble() {
        let psi = ground(13);
        let p = PhysicalParams::natural(10.0).unwrap();
        let r = born_equivariance(&psi, &p, LaplacianKind::Spectral, 1000, 0.5, 0.05, 3, 1).unwrap();
        assert_eq!(r.excluded, 0);
        assert!(r.p_value > 1e-3);
    }

    #[test]
    fn sweeps_need_three_speeds() {
        let s = ConvergenceSetup::new(ground(9), [1.0; 3], 0.1, vec![5.0, 10.0]);
        assert!(matches!(convergence_study(&s), Err(Error::Config(_))));
    }
}
