//! Strang split-step Fourier integrator for
//! `i eps d_t psi = -1/2 psi'' + V psi + lambda eps^alpha |psi|^(2 sigma) psi`.
//!
//! Each substep is an exact unimodular flow: the kinetic part is a Fourier
//! multiplier, the potential plus nonlinear part is a pointwise phase because
//! `|psi|` is invariant under it. Kinetic half steps of consecutive steps are
//! fused.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::adiabatic::Coupling;
use crate::error::{Error, Result};
use crate::grid::{write_dump, Field, Grid1D, C64};
use crate::potential::PotentialSpec;

/// Absolute tolerance on `| |psi(t)| - |psi(t0)| |`.
pub const MASS_TOLERANCE: f64 = 1e-11;

/// A time-dependent potential sampled on a grid.
pub trait TimePotential: Sync {
    fn sample_at(&self, t: f64, grid: &Grid1D) -> Result<Vec<f64>>;
}

impl TimePotential for PotentialSpec {
    fn sample_at(&self, t: f64, grid: &Grid1D) -> Result<Vec<f64>> {
        self.values(t, grid)
    }
}

/// `V = 0` for all times.
#[derive(Clone, Copy, Debug, Default)]
pub struct FreeSpace;

impl TimePotential for FreeSpace {
    fn sample_at(&self, _t: f64, grid: &Grid1D) -> Result<Vec<f64>> {
        Ok(vec![0.0; grid.num_points()])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverParams {
    pub eps: f64,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "one_u32")]
    pub sigma: u32,
    #[serde(default = "one_f64")]
    pub alpha: f64,
    /// `dt <= c_dt eps`.
    #[serde(default = "default_c_dt")]
    pub c_dt: f64,
    /// Number of uniform output intervals for [`propagate`].
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

fn one_u32() -> u32 {
    1
}

fn one_f64() -> f64 {
    1.0
}

fn default_c_dt() -> f64 {
    0.01
}

fn default_samples() -> usize {
    200
}

fn default_max_steps() -> usize {
    50_000_000
}

impl SolverParams {
    pub fn new(eps: f64, coupling: Coupling) -> Self {
        SolverParams {
            eps,
            lambda: coupling.lambda,
            sigma: coupling.sigma,
            alpha: coupling.alpha,
            c_dt: default_c_dt(),
            samples: default_samples(),
            max_steps: default_max_steps(),
        }
    }

    pub fn linear(eps: f64) -> Self {
        Self::new(eps, Coupling::linear())
    }

    pub fn coupling(&self) -> Coupling {
        Coupling {
            lambda: self.lambda,
            sigma: self.sigma,
            alpha: self.alpha,
        }
    }

    pub fn dt(&self) -> f64 {
        self.c_dt * self.eps
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return bad(format!("eps must lie in (0, 1], got {}", self.eps));
        }
        Coupling::new(self.lambda, self.sigma, self.alpha)?;
        if !(self.c_dt > 0.0 && self.c_dt <= 0.05) {
            return bad(format!("c_dt must lie in (0, 0.05], got {}", self.c_dt));
        }
        if self.samples == 0 {
            return bad("at least one output interval is required".into());
        }
        Ok(())
    }

    /// `lambda eps^alpha`.
    fn nonlinear_strength(&self) -> f64 {
        self.lambda * self.eps.powf(self.alpha)
    }
}

/// Precomputed multipliers for a fixed step `dt`.
struct Stepper {
    grid: Grid1D,
    half: Vec<C64>,
    full: Vec<C64>,
    dt: f64,
    eps: f64,
    strength: f64,
    sigma: i32,
}

impl Stepper {
    fn new(grid: &Grid1D, dt: f64, params: &SolverParams) -> Self {
        let mult = |tau: f64| -> Vec<C64> {
            grid.wavenumbers()
                .iter()
                .map(|k| {
                    Complex64::from_polar(
                        1.0 / grid.num_points() as f64,
                        -tau * k * k / (2.0 * params.eps),
                    )
                })
                .collect()
        };
        Stepper {
            grid: grid.clone(),
            half: mult(0.5 * dt),
            full: mult(dt),
            dt,
            eps: params.eps,
            strength: params.nonlinear_strength(),
            sigma: params.sigma as i32,
        }
    }

    /// Kinetic flow; the multipliers carry the inverse transform's `1/N`.
    fn kinetic(&self, psi: &mut [C64], full: bool) {
        let mult = if full { &self.full } else { &self.half };
        self.grid.forward(psi);
        for (z, m) in psi.iter_mut().zip(mult) {
            *z *= m;
        }
        self.grid.inverse_unscaled(psi);
    }

    fn potential(&self, psi: &mut [C64], v: &[f64]) {
        let c = -self.dt / self.eps;
        for (z, &vj) in psi.iter_mut().zip(v) {
            let mut e = vj;
            if self.strength != 0.0 {
                e += self.strength * z.norm_sqr().powi(self.sigma);
            }
            *z *= Complex64::from_polar(1.0, c * e);
        }
    }
}

/// One Strang step from `t` to `t + dt`; `dt < 0` steps backwards.
pub fn strang_step(
    psi: &Field,
    t: f64,
    dt: f64,
    pot: &impl TimePotential,
    params: &SolverParams,
) -> Result<Field> {
    if !(dt != 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "step {dt} must be finite and nonzero"
        )));
    }
    let grid = psi.grid();
    let stepper = Stepper::new(grid, dt, params);
    let v = pot.sample_at(t + 0.5 * dt, grid)?;
    let mut data = psi.values().to_vec();
    stepper.kinetic(&mut data, false);
    stepper.potential(&mut data, &v);
    stepper.kinetic(&mut data, false);
    if data.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite(format!("Strang step at t = {t}")));
    }
    Field::new(grid.clone(), data)
}

/// Solution samples with mass and tail-mass records.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub fields: Vec<Field>,
    pub mass: Vec<f64>,
    pub tail_mass: Vec<f64>,
    /// Step size used on each sample interval.
    pub steps: Vec<(usize, f64)>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &Field {
        self.fields
            .last()
            .expect("trajectory has at least one sample")
    }

    pub fn max_mass_drift(&self) -> f64 {
        self.mass
            .iter()
            .map(|m| (m - self.mass[0]).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_tail_mass(&self) -> f64 {
        self.tail_mass.iter().copied().fold(0.0, f64::max)
    }

    pub fn total_steps(&self) -> usize {
        self.steps.iter().map(|s| s.0).sum()
    }

    /// Writes `t, mass, tail_mass` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "t,mass,tail_mass")?;
        for i in 0..self.len() {
            writeln!(
                w,
                "{:.12e},{:.17e},{:.6e}",
                self.times[i], self.mass[i], self.tail_mass[i]
            )?;
        }
        Ok(())
    }

    /// One binary dump per sample, `psi_00000.bin`, ...
    pub fn write_dumps(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (i, f) in self.fields.iter().enumerate() {
            write_dump(f, &dir.join(format!("psi_{i:05}.bin")))?;
        }
        Ok(())
    }
}

/// Propagates from `t0` to `t1` with `params.samples` uniform output intervals.
pub fn propagate(
    psi_in: &Field,
    pot: &impl TimePotential,
    params: &SolverParams,
    t0: f64,
    t1: f64,
) -> Result<Trajectory> {
    let m = params.samples;
    let times: Vec<f64> = (0..=m)
        .map(|i| {
            if i == m {
                t1
            } else {
                t0 + (t1 - t0) * i as f64 / m as f64
            }
        })
        .collect();
    propagate_to(psi_in, pot, params, &times)
}

/// Propagates through the given sample times (monotone in either direction).
/// Each interval is split into the fewest uniform steps with `|dt| <= c_dt eps`.
pub fn propagate_to(
    psi_in: &Field,
    pot: &impl TimePotential,
    params: &SolverParams,
    times: &[f64],
) -> Result<Trajectory> {
    params.validate()?;
    if times.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two sample times".into(),
        ));
    }
    let dir = (times[1] - times[0]).signum();
    if dir == 0.0 || times.windows(2).any(|w| (w[1] - w[0]) * dir <= 0.0) {
        return Err(Error::InvalidArgument(
            "sample times must be strictly monotone".into(),
        ));
    }
    let dt_max = params.dt();
    let counts: Vec<usize> = times
        .windows(2)
        .map(|w| {
            ((w[1] - w[0]).abs() / dt_max * (1.0 - 1e-12))
                .ceil()
                .max(1.0) as usize
        })
        .collect();
    let total: usize = counts.iter().sum();
    if total > params.max_steps {
        return Err(Error::StepGuard {
            steps: total,
            limit: params.max_steps,
        });
    }
    let grid = psi_in.grid().clone();
    let mut data = psi_in.values().to_vec();
    let mass0 = psi_in.norm();
    let mut traj = Trajectory {
        times: vec![times[0]],
        fields: vec![psi_in.clone()],
        mass: vec![mass0],
        tail_mass: vec![psi_in.tail_mass()],
        steps: Vec::with_capacity(counts.len()),
    };
    let mut stepper: Option<Stepper> = None;
    let mut step_index = 0usize;
    for (k, w) in times.windows(2).enumerate() {
        let n = counts[k];
        let dt = (w[1] - w[0]) / n as f64;
        if stepper.as_ref().map_or(true, |s| s.dt != dt) {
            stepper = Some(Stepper::new(&grid, dt, params));
        }
        let st = stepper.as_ref().unwrap();
        st.kinetic(&mut data, false);
        for s in 0..n {
            let t = w[0] + s as f64 * dt;
            let v = pot.sample_at(t + 0.5 * dt, &grid)?;
            st.potential(&mut data, &v);
            st.kinetic(&mut data, s + 1 < n);
        }
        step_index += n;
        if data.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFinite(format!(
                "solution after step {step_index} (t = {})",
                w[1]
            )));
        }
        let field = Field::from_parts(grid.clone(), data.clone());
        let mass = field.norm();
        if (mass - mass0).abs() > MASS_TOLERANCE {
            return Err(Error::MassDrift {
                t: w[1],
                drift: mass - mass0,
            });
        }
        traj.times.push(w[1]);
        traj.mass.push(mass);
        traj.tail_mass.push(field.tail_mass());
        traj.fields.push(field);
        traj.steps.push((n, dt));
    }
    Ok(traj)
}
