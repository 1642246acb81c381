//! Snapshot binaries, run manifests and the plain CSV outputs.
//!
//! Snapshot layout (`.fld`): 32-byte header with the magic `PWFLD1\0\0`, the three grid dimensions
//! as little-endian `u32`, four reserved zero bytes and the time as little-endian `f64`; then one
//! `(re, im)` pair of little-endian `f64` per node, x fastest.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::greens::{GreenReport, KernelSample};
use crate::kleingordon::ProbeSeries;
use crate::params::PhysicalParams;

pub const FLD_MAGIC: [u8; 8] = *b"PWFLD1\0\0";
pub const FLD_HEADER_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub dims: [u32; 3],
    pub time: f64,
    pub values: Vec<Complex64>,
}

pub fn write_fld<W: Write>(mut w: W, dims: [usize; 3], time: f64, values: &[Complex64]) -> Result<()> {
    if dims.iter().product::<usize>() != values.len() {
        return Err(Error::InvalidGrid(format!("{} values for dims {dims:?}", values.len())));
    }
    let mut buf = Vec::with_capacity(FLD_HEADER_LEN + 16 * values.len());
    buf.extend_from_slice(&FLD_MAGIC);
    for d in dims {
        let d = u32::try_from(d).map_err(|_| Error::InvalidGrid(format!("dimension {d} exceeds u32")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    buf.extend_from_slice(&[0u8; 4]);
    buf.extend_from_slice(&time.to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.re.to_le_bytes());
        buf.extend_from_slice(&v.im.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_fld<R: Read>(mut r: R) -> Result<Snapshot> {
    let mut head = [0u8; FLD_HEADER_LEN];
    r.read_exact(&mut head)?;
    if head[..8] != FLD_MAGIC {
        return Err(Error::Config("not a field snapshot (bad magic)".into()));
    }
    let word = |i: usize| u32::from_le_bytes(head[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes"));
    let dims = [word(0), word(1), word(2)];
    let time = f64::from_le_bytes(head[24..32].try_into().expect("8 bytes"));
    let n = dims.iter().map(|&d| d as usize).product::<usize>();
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != 16 * n {
        return Err(Error::Config(format!("snapshot body has {} bytes, expected {}", body.len(), 16 * n)));
    }
    let f = |i: usize| f64::from_le_bytes(body[8 * i..8 * i + 8].try_into().expect("8 bytes"));
    let values = (0..n).map(|k| Complex64::new(f(2 * k), f(2 * k + 1))).collect();
    Ok(Snapshot { dims, time, values })
}

pub fn save_fld(path: &Path, dims: [usize; 3], time: f64, values: &[Complex64]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_fld(std::io::BufWriter::new(file), dims, time, values)
}

pub fn load_fld(path: &Path) -> Result<Snapshot> {
    read_fld(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// `snapshots/NNNNNN.fld` name for a step index.
pub fn snapshot_name(step: usize) -> String {
    format!("{step:06}.fld")
}

/// Text manifest, one `key = value` per line. The wall time is written last so that every other
/// line is reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub version: String,
    pub entries: Vec<(String, String)>,
    pub wall_time: f64,
}

impl RunManifest {
    pub fn new(command: &str, config_hash: &str) -> Self {
        RunManifest {
            command: command.into(),
            config_hash: config_hash.into(),
            version: format!("pilotwave {}", env!("CARGO_PKG_VERSION")),
            entries: Vec::new(),
            wall_time: 0.0,
        }
    }

    pub fn push(&mut self, key: &str, value: impl std::fmt::Display) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn push_params(&mut self, p: &PhysicalParams) {
        let s = p.scales();
        self.push("mass", p.mass);
        self.push("c", p.light_speed);
        self.push("hbar", p.hbar);
        self.push("a", p.coupling_a);
        self.push("b", p.coupling_b);
        self.push("kappa", p.kappa);
        self.push("rho_s", p.singular_density);
        self.push("coupling", format!("{:?}", p.coupling_kind).to_lowercase());
        self.push("omega_c", s.omega_c);
        self.push("k_c", s.k_c);
        self.push("omega_s", s.omega_s);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command = {}", self.command);
        let _ = writeln!(s, "config_hash = {}", self.config_hash);
        let _ = writeln!(s, "version = {}", self.version);
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        let _ = writeln!(s, "wall_time = {:.3}", self.wall_time);
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }
}

/// `t` followed by `re_j, im_j` for each probe.
pub fn write_probes_csv<W: Write>(mut w: W, probes: &ProbeSeries) -> Result<()> {
    let mut header = String::from("t");
    for j in 0..probes.points.len() {
        let _ = write!(header, ",re_{j},im_{j}");
    }
    writeln!(w, "{header}")?;
    for (t, row) in probes.times.iter().zip(&probes.values) {
        let mut line = format!("{t:.17e}");
        for v in row {
            let _ = write!(line, ",{:.17e},{:.17e}", v.re, v.im);
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn write_kernel_csv<W: Write>(mut w: W, samples: &[KernelSample]) -> Result<()> {
    writeln!(w, "r_prime,truncation,re,im,abs,abs_error_estimate")?;
    for s in samples {
        writeln!(
            w,
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            s.r_prime,
            s.truncation,
            s.value.re,
            s.value.im,
            s.value.norm(),
            s.abs_error_estimate
        )?;
    }
    Ok(())
}

pub fn write_residual_csv<W: Write>(mut w: W, report: &GreenReport) -> Result<()> {
    writeln!(w, "r,t,step,residual,order")?;
    for p in &report.points {
        for (d, res) in p.steps.iter().zip(&p.residuals) {
            writeln!(w, "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}", p.r, p.t, d, res, p.order)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        let vals = vec![Complex64::new(1.5, -2.0); 6];
        write_fld(&mut buf, [1, 2, 3], 0.25, &vals).unwrap();
        assert_eq!(buf.len(), 32 + 6 * 16);
        assert_eq!(&buf[..6], b"PWFLD1");
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 2);
        assert_eq!(&buf[20..24], &[0; 4]);
        assert_eq!(f64::from_le_bytes(buf[24..32].try_into().unwrap()), 0.25);
        assert_eq!(f64::from_le_bytes(buf[40..48].try_into().unwrap()), -2.0);
    }

    #[test]
    fn snapshot_round_trip() {
        let vals: Vec<Complex64> = (0..24).map(|i| Complex64::new(i as f64, -(i as f64) / 3.0)).collect();
        let mut buf = Vec::new();
        write_fld(&mut buf, [2, 3, 4], 1.0 / 3.0, &vals).unwrap();
        let snap = read_fld(&buf[..]).unwrap();
        assert_eq!(snap, Snapshot { dims: [2, 3, 4], time: 1.0 / 3.0, values: vals });
    }

    #[test]
    fn rejects_truncated_or_foreign_files() {
        let mut buf = Vec::new();
        write_fld(&mut buf, [2, 2, 2], 0.0, &[Complex64::new(0.0, 0.0); 8]).unwrap();
        assert!(read_fld(&buf[..buf.len() - 1]).is_err());
        buf[0] = b'X';
        assert!(read_fld(&buf[..]).is_err());
        assert!(write_fld(Vec::new(), [2, 2, 2], 0.0, &[Complex64::new(0.0, 0.0); 7]).is_err());
    }

    #[test]
    fn manifest_puts_wall_time_last() {
        let mut m = RunManifest::new("run-bohmian", "abc");
        m.push("omega_c", 100.0);
        m.wall_time = 1.5;
        let text = m.render();
        assert!(text.starts_with("command = run-bohmian\n"));
        assert!(text.ends_with("wall_time = 1.500\n"));
        assert_eq!(m.get("omega_c"), Some("100"));
    }
}
