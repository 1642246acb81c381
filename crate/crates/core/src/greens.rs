//! Retarded Klein-Gordon Green's function: Bessel tail, the first error kernel, and a residual check
//! of the retarded convolution against the discrete operator.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::{fit_line, integrate, wynn_epsilon};
use crate::params::PhysicalParams;

const SERIES_LIMIT: f64 = 12.0;

fn bessel_series(n: u32, x: f64) -> f64 {
    let h = 0.5 * x;
    let mut term = h.powi(n as i32) / (1..=n).map(f64::from).product::<f64>();
    let mut sum = term;
    let h2 = h * h;
    for k in 1..200 {
        term *= -h2 / (k as f64 * (k + n) as f64);
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

fn bessel_hankel(n: u32, x: f64) -> f64 {
    let mu = 4.0 * (n * n) as f64;
    let (mut p, mut q) = (0.0, 0.0);
    let mut a = 1.0;
    let mut last = f64::INFINITY;
    for k in 0..60 {
        if k > 0 {
            let odd = (2 * k - 1) as f64;
            a *= (mu - odd * odd) / (k as f64 * 8.0 * x);
        }
        if a.abs() > last || a == 0.0 {
            break;
        }
        last = a.abs();
        let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
        if k % 2 == 0 {
            p += sign * a;
        } else {
            q += sign * a;
        }
        if a.abs() < 1e-17 {
            break;
        }
    }
    let chi = x - (0.5 * n as f64 + 0.25) * PI;
    (2.0 / (PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
}

pub fn bessel_j0(x: f64) -> f64 {
    let x = x.abs();
    if x < SERIES_LIMIT {
        bessel_series(0, x)
    } else {
        bessel_hankel(0, x)
    }
}

pub fn bessel_j1(x: f64) -> f64 {
    let s = x.signum();
    let x = x.abs();
    s * if x < SERIES_LIMIT { bessel_series(1, x) } else { bessel_hankel(1, x) }
}

/// `J1(x)/x`, regular at zero.
pub fn j1_over_x(x: f64) -> f64 {
    let x = x.abs();
    if x < 1e-3 {
        let h2 = 0.25 * x * x;
        0.5 * (1.0 - 0.5 * h2 + h2 * h2 / 12.0)
    } else {
        bessel_j1(x) / x
    }
}

/// Regular part of the retarded Green's function of `(1/c^2) d_t^2 - lap + k_c^2`:
/// `-(k_c omega_c / 4 pi) J1(omega_c s)/(omega_c s)` with `s = sqrt(t^2 - r^2/c^2)` inside the light cone.
/// The shell part `delta(t - r/c)/(4 pi r)` is left to callers.
pub fn greens_tail(r: f64, t: f64, params: &PhysicalParams) -> f64 {
    let c = params.light_speed;
    if c * t <= r {
        return 0.0;
    }
    let sc = params.scales();
    let s = (t * t - r * r / (c * c)).max(0.0).sqrt();
    -(sc.k_c * sc.omega_c / (4.0 * PI)) * j1_over_x(sc.omega_c * s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSample {
    pub r_prime: f64,
    pub value: Complex64,
    pub truncation: f64,
    /// `|K(truncation) - K(2 truncation)|`.
    pub abs_error_estimate: f64,
}

/// Half-period partial sums of `int_{r'}^{S} J1(sqrt(s^2 - r'^2))/sqrt(s^2 - r'^2) e^{-i s} s/(4 pi i) ds`.
fn kernel_partial_sums(r_prime: f64, upper: f64) -> Result<Vec<Complex64>> {
    let pref = 1.0 / Complex64::new(0.0, 4.0 * PI);
    let mut sums = Vec::new();
    let mut acc = Complex64::new(0.0, 0.0);
    let mut lo = r_prime;
    let tol = 1e-13;
    if r_prime > 0.0 {
        // s = r' cosh v removes the square-root endpoint
        let hi = (r_prime + PI).min(upper);
        let vmax = (hi / r_prime).acosh();
        let (v, _) = integrate(
            |v| {
                let s = r_prime * v.cosh();
                Complex64::from_polar(r_prime * v.cosh() * bessel_j1(r_prime * v.sinh()), -s)
            },
            0.0,
            vmax,
            tol,
            tol,
            2000,
        )?;
        acc += v * pref;
        sums.push(acc);
        lo = hi;
    }
    while lo < upper - 1e-12 {
        let hi = (lo + PI).min(upper);
        let (v, _) = integrate(
            |s| {
                let w = (s * s - r_prime * r_prime).max(0.0).sqrt();
                Complex64::from_polar(s * j1_over_x(w), -s)
            },
            lo,
            hi,
            tol,
            tol,
            2000,
        )?;
        acc += v * pref;
        sums.push(acc);
        lo = hi;
    }
    Ok(sums)
}

/// Number of trailing partial sums handed to the epsilon algorithm.
const WYNN_WINDOW: usize = 40;

fn accelerated(sums: &[Complex64]) -> Complex64 {
    let start = sums.len().saturating_sub(WYNN_WINDOW);
    wynn_epsilon(&sums[start..]).0
}

/// The first error kernel `K(r')` at the given truncation, accelerated over half-period partial
/// sums, with the change under cutoff doubling as error estimate.
pub fn epsilon1_kernel(r_prime: f64, truncation: f64) -> Result<KernelSample> {
    if !(r_prime >= 0.0 && truncation > r_prime) {
        return Err(Error::InvalidParams(format!(
            "kernel needs 0 <= r' < truncation (r' = {r_prime}, truncation = {truncation})"
        )));
    }
    let sums = kernel_partial_sums(r_prime, 2.0 * truncation)?;
    // partial sums end on the grid r' + k pi (plus the endpoint panel), so locate the cutoff index
    let first = kernel_partial_sums(r_prime, truncation)?.len();
    let value = accelerated(&sums[..first]);
    let doubled = accelerated(&sums);
    Ok(KernelSample { r_prime, value, truncation, abs_error_estimate: (value - doubled).norm() })
}

/// Compactly supported test source `amplitude g(t) h(rho)` with quartic bumps
/// `g = (1 - ((t - t_center)/t_width)^2)^4`, `h = (1 - (rho/radius)^2)^4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestSource {
    pub amplitude: f64,
    pub t_center: f64,
    pub t_width: f64,
    pub radius: f64,
}

fn bump(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - x * x).powi(4)
    }
}

impl TestSource {
    pub fn time_profile(&self, t: f64) -> f64 {
        bump((t - self.t_center) / self.t_width)
    }
    pub fn radial_profile(&self, rho: f64) -> f64 {
        bump(rho / self.radius)
    }
    pub fn value(&self, r: f64, t: f64) -> f64 {
        self.amplitude * self.time_profile(t) * self.radial_profile(r)
    }
}

/// Shell-averaged Green's function: `int dOmega_y G(|x - y|, tau) R dR` reduced to closed form
/// for `|x| = r`, `|y| = rho`, times `1/(2 pi)`.
fn shell_kernel(r: f64, rho: f64, tau: f64, params: &PhysicalParams) -> f64 {
    let c = params.light_speed;
    let w = params.scales().omega_c;
    let ct = c * tau;
    let r1 = (r - rho).abs();
    let r2 = r + rho;
    if ct <= r1 {
        return 0.0;
    }
    let s_of = |big_r: f64| (tau * tau - big_r * big_r / (c * c)).max(0.0).sqrt();
    let j1 = bessel_j0(w * s_of(r1));
    let pref = c / (4.0 * PI);
    if ct < r2 {
        pref * j1
    } else {
        -pref * (bessel_j0(w * s_of(r2)) - j1)
    }
}

/// Retarded solution `u(r, t)` of `((1/c^2) d_t^2 - lap + k_c^2) u = f` for a radial test source.
pub fn retarded_solution(source: &TestSource, r: f64, t: f64, params: &PhysicalParams) -> Result<f64> {
    if source.amplitude == 0.0 {
        return Ok(0.0);
    }
    let c = params.light_speed;
    let a = source.radius;
    let t_lo = source.t_center - source.t_width;
    let t_hi = (source.t_center + source.t_width).min(t);
    if t_hi <= t_lo {
        return Ok(0.0);
    }
    let tol = 1e-13;
    let inner = |tp: f64| -> Result<f64> {
        let tau = t - tp;
        let ct = c * tau;
        let mut cuts = vec![0.0, a];
        for b in [r - ct, r + ct, ct - r] {
            if b > 0.0 && b < a {
                cuts.push(b);
            }
        }
        cuts.sort_by(f64::total_cmp);
        let mut sum = 0.0;
        for pair in cuts.windows(2) {
            let (v, _) = integrate(
                |rho| Complex64::new(rho * source.radial_profile(rho) * shell_kernel(r, rho, tau, params), 0.0),
                pair[0],
                pair[1],
                tol,
                tol,
                4000,
            )?;
            sum += v.re;
        }
        Ok(sum)
    };
    let mut cuts = vec![t_lo, t_hi];
    for d in [r, (r - a).abs(), r + a] {
        let tp = t - d / c;
        if tp > t_lo && tp < t_hi {
            cuts.push(tp);
        }
    }
    cuts.sort_by(f64::total_cmp);
    let mut total = 0.0;
    for pair in cuts.windows(2) {
        let mut failure = None;
        let (v, _) = integrate(
            |tp| match inner(tp) {
                Ok(x) => Complex64::new(source.time_profile(tp) * x, 0.0),
                Err(e) => {
                    failure.get_or_insert(e);
                    Complex64::new(0.0, 0.0)
                }
            },
            pair[0],
            pair[1],
            tol,
            tol,
            4000,
        )?;
        if let Some(e) = failure {
            return Err(e);
        }
        total += v.re;
    }
    Ok(source.amplitude * 2.0 * PI / r * total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreenResidual {
    pub r: f64,
    pub t: f64,
    pub steps: Vec<f64>,
    /// `|L_h u - f|` for each step.
    pub residuals: Vec<f64>,
    /// Least-squares slope of `log residual` against `log step`.
    pub order: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreenReport {
    pub points: Vec<GreenResidual>,
}

impl GreenReport {
    pub fn min_order(&self) -> f64 {
        self.points.iter().map(|p| p.order).fold(f64::INFINITY, f64::min)
    }
}

/// Apply `(1/c^2) D_t^2 - (1/r) D_r^2 (r .) + k_c^2` with step `delta` to the retarded convolution
/// of `source` and compare with the source at each sample point.
pub fn verify_green(
    source: &TestSource,
    points: &[(f64, f64)],
    steps: &[f64],
    params: &PhysicalParams,
) -> Result<GreenReport> {
    let c = params.light_speed;
    let k2 = params.scales().k_c.powi(2);
    let mut out = Vec::with_capacity(points.len());
    for &(r, t) in points {
        if !(r > 0.0) {
            return Err(Error::InvalidParams(format!("sample radius must be positive, got {r}")));
        }
        let mut residuals = Vec::with_capacity(steps.len());
        for &d in steps {
            if !(d > 0.0 && d < r) {
                return Err(Error::InvalidParams(format!("step {d} must lie in (0, r = {r})")));
            }
            let u = |rr: f64, tt: f64| retarded_solution(source, rr, tt, params);
            let u0 = u(r, t)?;
            let utt = (u(r, t + d)? - 2.0 * u0 + u(r, t - d)?) / (d * d);
            let rurr = ((r + d) * u(r + d, t)? - 2.0 * r * u0 + (r - d) * u(r - d, t)?) / (d * d);
            let lhs = utt / (c * c) - rurr / r + k2 * u0;
            residuals.push((lhs - source.value(r, t)).abs());
        }
        let order = if steps.len() >= 2 && residuals.iter().all(|x| *x > 0.0) {
            let lx: Vec<f64> = steps.iter().map(|s| s.ln()).collect();
            let ly: Vec<f64> = residuals.iter().map(|s| s.ln()).collect();
            fit_line(&lx, &ly).1
        } else {
            f64::NAN
        };
        out.push(GreenResidual { r, t, steps: steps.to_vec(), residuals, order });
    }
    Ok(GreenReport { points: out })
}

/// Response at distance `r` to a point source `e^{-i w t}` switched on adiabatically, `w = omega_c + i eps`,
/// by quadrature of the retarded Green's function. Returns the time-independent envelope.
pub fn monochromatic_response(r: f64, eps: f64, params: &PhysicalParams) -> Result<Complex64> {
    if !(r > 0.0 && eps > 0.0) {
        return Err(Error::InvalidParams("need r > 0 and eps > 0".into()));
    }
    let c = params.light_speed;
    let w = Complex64::new(params.scales().omega_c, eps);
    let shell = (Complex64::i() * w * r / c).exp() / (4.0 * PI * r);
    let t_end = r / c + 40.0 / eps;
    let period = 2.0 * PI / params.scales().omega_c;
    let mut total = Complex64::new(0.0, 0.0);
    let mut lo = r / c;
    while lo < t_end {
        let hi = (lo + period).min(t_end);
        let (v, _) = integrate(
            |tau| (Complex64::i() * w * tau).exp() * greens_tail(r, tau, params),
            lo,
            hi,
            1e-15,
            1e-12,
            2000,
        )?;
        total += v;
        lo = hi;
    }
    Ok(shell + total)
}

/// Closed form of [`monochromatic_response`]: `e^{i kappa r}/(4 pi r)` with `kappa = sqrt(w^2/c^2 - k_c^2)`, `Im kappa > 0`.
pub fn monochromatic_closed_form(r: f64, eps: f64, params: &PhysicalParams) -> Complex64 {
    let c = params.light_speed;
    let w = Complex64::new(params.scales().omega_c, eps);
    let mut kappa = (w * w / (c * c) - params.scales().k_c.powi(2)).sqrt();
    if kappa.im < 0.0 {
        kappa = -kappa;
    }
    (Complex64::i() * kappa * r).exp() / (4.0 * PI * r)
}
