//! Sampled particle trajectories and their CSV form.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub positions: Vec<[f64; 3]>,
    pub velocities: Vec<[f64; 3]>,
    /// `|psi(q_p)|` of the guiding (continuous) field.
    pub abs_psi: Vec<f64>,
    /// `|grad psi(q_p)|`, used for the M diagnostic.
    pub abs_grad_psi: Vec<f64>,
    pub flags: Vec<String>,
}

pub const CSV_HEADER: &str = "t,qx,qy,qz,ux,uy,uz,abs_psi_at_p";

impl TrajectoryRecord {
    pub fn push(&mut self, t: f64, q: [f64; 3], u: [f64; 3], abs_psi: f64, abs_grad: f64) {
        debug_assert!(self.times.last().is_none_or(|last| t > *last));
        self.times.push(t);
        self.positions.push(q);
        self.velocities.push(u);
        self.abs_psi.push(abs_psi);
        self.abs_grad_psi.push(abs_grad);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn flag(&mut self, msg: impl Into<String>) {
        self.flags.push(msg.into());
    }

    /// `alpha = min |psi(q_p)|`.
    pub fn alpha(&self) -> f64 {
        self.abs_psi.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `U = max |u|`.
    pub fn velocity_scale(&self) -> f64 {
        self.velocities.iter().map(|u| crate::params::norm3(*u)).fold(0.0, f64::max)
    }

    /// `M = sup (1/|psi| + |grad psi| + |u|)` along the path.
    pub fn m_diagnostic(&self) -> f64 {
        (0..self.len())
            .map(|i| 1.0 / self.abs_psi[i] + self.abs_grad_psi[i] + crate::params::norm3(self.velocities[i]))
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for i in 0..self.len() {
            let q = self.positions[i];
            let u = self.velocities[i];
            writeln!(
                w,
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                self.times[i], q[0], q[1], q[2], u[0], u[1], u[2], self.abs_psi[i]
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut rec = TrajectoryRecord::default();
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Config("empty trajectory file".into()))??;
        if header.trim() != CSV_HEADER {
            return Err(Error::Config(format!("unexpected trajectory header `{header}`")));
        }
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let v: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 2)))?;
            if v.len() != 8 {
                return Err(Error::Config(format!("line {}: expected 8 columns", n + 2)));
            }
            rec.push(v[0], [v[1], v[2], v[3]], [v[4], v[5], v[6]], v[7], f64::NAN);
        }
        Ok(rec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut r = TrajectoryRecord::default();
        r.push(0.0, [1.0, 2.0, 3.0], [0.1, 0.2, 0.3], 0.5, 0.0);
        r.push(0.25, [1.1, 2.0, 3.0], [0.1, -0.2, 1e-300], 0.4, 0.0);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let back = TrajectoryRecord::read_csv(&buf[..]).unwrap();
        assert_eq!(back.times, r.times);
        assert_eq!(back.positions, r.positions);
        assert_eq!(back.velocities, r.velocities);
        assert_eq!(back.abs_psi, r.abs_psi);
    }

    #[test]
    fn diagnostics() {
        let mut r = TrajectoryRecord::default();
        r.push(0.0, [0.0; 3], [3.0, 4.0, 0.0], 0.5, 1.0);
        r.push(1.0, [0.0; 3], [1.0, 0.0, 0.0], 0.25, 0.0);
        assert_eq!(r.alpha(), 0.25);
        assert_eq!(r.velocity_scale(), 5.0);
        assert_eq!(r.m_diagnostic(), 8.0);
    }
}
