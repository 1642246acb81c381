//! C ABI over the simulator. Simulations are opaque handles built from a TOML configuration;
//! every call returns a [`PwStatus`] and the message of the last failure on the calling thread is
//! available from [`pw_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pilotwave::config::parse_config;
use pilotwave::error::Error;
use pilotwave::grid::{ComplexField, NodeAccess};
use pilotwave::kleingordon::{PilotWaveSetup, PilotWaveSimulation};
use pilotwave::params::PhysicalParams;
use pilotwave::schrodinger::{integrate_bohmian, BohmianState, SchrodingerSolver};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidConfig = 2,
    Cfl = 3,
    NearNode = 4,
    OutsideDomain = 5,
    BufferTooSmall = 6,
    Numerical = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PwKind {
    Bohmian = 0,
    PilotWave = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PwScales {
    pub omega_c: f64,
    pub k_c: f64,
    pub omega_s: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PwStatus {
    match e {
        Error::Config(_) | Error::MissingKey(_) | Error::InvalidParams(_) | Error::InvalidGrid(_) => {
            PwStatus::InvalidConfig
        }
        Error::Cfl { .. } => PwStatus::Cfl,
        Error::NearNode { .. } => PwStatus::NearNode,
        Error::OutsideDomain(_) => PwStatus::OutsideDomain,
        _ => PwStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (PwStatus, String)>) -> PwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PwStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            PwStatus::Panic
        }
    }
}

fn lift<T>(r: pilotwave::error::Result<T>) -> Result<T, (PwStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (PwStatus, String) {
    (PwStatus::NullPointer, format!("{what} is null"))
}

enum Engine {
    Bohmian { solver: SchrodingerSolver, state: BohmianState, params: PhysicalParams, dt: f64 },
    PilotWave(Box<PilotWaveSimulation>),
}

/// Opaque simulation handle.
pub struct PwSimulation {
    engine: Engine,
}

impl PwSimulation {
    fn field(&self) -> Result<ComplexField, (PwStatus, String)> {
        match &self.engine {
            Engine::Bohmian { state, .. } => Ok(state.psi.clone()),
            Engine::PilotWave(sim) => lift(sim.state()).map(|s| s.psi),
        }
    }
}

/// Message of the last failure on this thread, or null. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn pw_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn pw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Derived scales for `hbar = m = 1` and the preset singular density.
///
/// # Safety
/// `out` must be null or point to writable memory for one `PwScales`.
#[no_mangle]
pub unsafe extern "C" fn pw_scales(light_speed: f64, out: *mut PwScales) -> PwStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let s = lift(PhysicalParams::natural(light_speed))?.scales();
        // SAFETY: checked non-null; the caller guarantees it is writable
        unsafe { *out = PwScales { omega_c: s.omega_c, k_c: s.k_c, omega_s: s.omega_s } };
        Ok(())
    })
}

/// Build a simulation from TOML text (same keys as the command-line configs).
///
/// # Safety
/// `config` must be a valid nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pw_simulation_new(config: *const c_char, kind: PwKind, out: *mut *mut PwSimulation) -> PwStatus {
    guard(|| {
        if config.is_null() {
            return Err(null("config"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: the caller passes a nul-terminated string
        let text = unsafe { CStr::from_ptr(config) }
            .to_str()
            .map_err(|e| (PwStatus::InvalidConfig, format!("config is not UTF-8: {e}")))?;
        let cfg = lift(parse_config(text))?;
        let params = lift(cfg.params())?;
        let grid = lift(cfg.grid())?;
        let init = lift(cfg.initial())?;
        let run = lift(cfg.run())?;
        let psi0 = lift(cfg.initial_field(&grid))?;
        let engine = match kind {
            PwKind::Bohmian => Engine::Bohmian {
                solver: SchrodingerSolver::new(&grid, &params, run.laplacian, None),
                state: lift(BohmianState::new(psi0, init.position))?,
                params,
                dt: run.dt.unwrap_or(1e-3),
            },
            PwKind::PilotWave => {
                let mut setup = PilotWaveSetup::new(params, psi0, init.position);
                setup.velocity = init.velocity;
                setup.dt = run.dt;
                Engine::PilotWave(Box::new(lift(PilotWaveSimulation::new(setup))?))
            }
        };
        let handle = Box::new(PwSimulation { engine });
        // SAFETY: checked non-null
        unsafe { *out = Box::into_raw(handle) };
        Ok(())
    })
}

/// # Safety
/// `sim` must come from [`pw_simulation_new`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn pw_simulation_free(sim: *mut PwSimulation) {
    if !sim.is_null() {
        // SAFETY: ownership returns from the caller
        drop(unsafe { Box::from_raw(sim) });
    }
}

unsafe fn handle<'a>(sim: *mut PwSimulation) -> Result<&'a mut PwSimulation, (PwStatus, String)> {
    // SAFETY: the caller guarantees a live handle when non-null
    unsafe { sim.as_mut() }.ok_or_else(|| null("simulation"))
}

/// Advance by `steps` time steps.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pw_simulation_step(sim: *mut PwSimulation, steps: usize) -> PwStatus {
    guard(|| {
        let sim = unsafe { handle(sim) }?;
        for _ in 0..steps {
            match &mut sim.engine {
                Engine::Bohmian { solver, state, params, dt } => {
                    let (_, next) = lift(integrate_bohmian(solver, state.clone(), *dt, *dt, params))?;
                    *state = next;
                }
                Engine::PilotWave(p) => lift(p.step())?,
            }
        }
        Ok(())
    })
}

/// Current time, position and velocity. Any output pointer may be null.
///
/// # Safety
/// `sim` must be a live handle; non-null outputs must be writable (`position`, `velocity` for 3 doubles).
#[no_mangle]
pub unsafe extern "C" fn pw_simulation_particle(
    sim: *mut PwSimulation,
    time: *mut f64,
    position: *mut f64,
    velocity: *mut f64,
) -> PwStatus {
    guard(|| {
        let sim = unsafe { handle(sim) }?;
        let (t, q, u) = match &sim.engine {
            Engine::Bohmian { state, .. } => (state.time, state.particle.position, state.particle.velocity),
            Engine::PilotWave(p) => (p.time(), p.particle().position, p.particle().velocity),
        };
        // SAFETY: the caller guarantees non-null outputs are writable
        unsafe {
            if !time.is_null() {
                *time = t;
            }
            if !position.is_null() {
                ptr::copy_nonoverlapping(q.as_ptr(), position, 3);
            }
            if !velocity.is_null() {
                ptr::copy_nonoverlapping(u.as_ptr(), velocity, 3);
            }
        }
        Ok(())
    })
}

/// Grid dimensions of the simulation.
///
/// # Safety
/// `sim` must be a live handle and `dims` writable for 3 values.
#[no_mangle]
pub unsafe extern "C" fn pw_simulation_dims(sim: *mut PwSimulation, dims: *mut usize) -> PwStatus {
    guard(|| {
        let sim = unsafe { handle(sim) }?;
        if dims.is_null() {
            return Err(null("dims"));
        }
        let n = match &sim.engine {
            Engine::Bohmian { state, .. } => state.psi.grid().points(),
            Engine::PilotWave(p) => p.raw().phi.grid().points(),
        };
        // SAFETY: checked non-null, writable per contract
        unsafe { ptr::copy_nonoverlapping(n.as_ptr(), dims, 3) };
        Ok(())
    })
}

/// Copy the guiding field as interleaved `(re, im)` pairs, x fastest. `len` counts doubles and
/// must be at least twice the node count.
///
/// # Safety
/// `sim` must be a live handle and `out` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pw_simulation_field(sim: *mut PwSimulation, out: *mut f64, len: usize) -> PwStatus {
    guard(|| {
        let sim = unsafe { handle(sim) }?;
        if out.is_null() {
            return Err(null("out"));
        }
        let psi = sim.field()?;
        let need = 2 * psi.values().len();
        if len < need {
            return Err((PwStatus::BufferTooSmall, format!("buffer holds {len} doubles, need {need}")));
        }
        // SAFETY: `out` holds at least `need` doubles per the check above and the contract
        let dst = unsafe { std::slice::from_raw_parts_mut(out, need) };
        for (pair, v) in dst.chunks_exact_mut(2).zip(psi.values()) {
            pair[0] = v.re;
            pair[1] = v.im;
        }
        Ok(())
    })
}
