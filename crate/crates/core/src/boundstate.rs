//! Real stationary states `-1/2 Phi'' + V Phi + lambda |Phi|^(2 sigma) Phi = E* Phi`
//! at prescribed mass `|Phi| = M`, bifurcating from a linear bound state.
//!
//! Newton acts on `(Phi, E*)` with the bordered Jacobian
//! `[[H - E* + (2 sigma + 1) lambda Phi^(2 sigma), -Phi], [-Phi^T, 0]]`,
//! applied matrix-free and solved by preconditioned MINRES.

use std::io::Write;
use std::path::Path;

use crate::eigen::{lowest_eigenpairs, EigenBranch, EigenPair, Hamiltonian};
use crate::error::{Error, Result};
use crate::grid::{dot, inner_product, norm_lp, Field, C64};
use crate::linalg::minres;
use crate::potential::PotentialSpec;

pub const RESIDUAL_TOLERANCE: f64 = 1e-9;
pub const MASS_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_MAX_MASS: f64 = 0.5;
/// Largest change of `Phi` between mesh points, relative to the mass.
const MAX_FAMILY_JUMP: f64 = 0.5;
const NEWTON_MAX_ITER: usize = 40;
const GRADIENT_FLOW_STEPS: usize = 50;
const GRADIENT_FLOW_TAU: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct BoundState {
    pub t: f64,
    pub phi: Field,
    pub e_star: f64,
    /// Linear eigenvalue the state bifurcates from.
    pub energy: f64,
    pub mass: f64,
    pub residual: f64,
}

/// Nonlinearity and mass of a stationary problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StationaryOptions {
    pub lambda: f64,
    pub sigma: u32,
    pub mass: f64,
    pub max_mass: f64,
}

impl StationaryOptions {
    pub fn new(lambda: f64, sigma: u32, mass: f64) -> Self {
        StationaryOptions {
            lambda,
            sigma,
            mass,
            max_mass: DEFAULT_MAX_MASS,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.sigma == 0 || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument(
                "need sigma >= 1 and finite lambda".into(),
            ));
        }
        if !(self.mass > 0.0 && self.mass <= self.max_mass) {
            return Err(Error::InvalidArgument(format!(
                "mass {} outside (0, {}]",
                self.mass, self.max_mass
            )));
        }
        Ok(())
    }
}

/// `mu = lambda |chi|_{2 sigma + 2}^{2 sigma + 2}`.
pub fn bifurcation_slope(chi: &Field, lambda: f64, sigma: u32) -> Result<f64> {
    let p = 2.0 * sigma as f64 + 2.0;
    Ok(lambda * norm_lp(chi, p)?.powf(p))
}

/// `((E* - E) / mu)^(1 / (2 sigma)) chi`.
pub fn bifurcation_predictor(
    pair: &EigenPair,
    lambda: f64,
    sigma: u32,
    e_star: f64,
) -> Result<Field> {
    let d = e_star - pair.energy;
    if d == 0.0 {
        return Ok(Field::zeros(pair.chi.grid()));
    }
    if lambda == 0.0 || d / lambda <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "E* - E = {d} must have the sign of lambda = {lambda}"
        )));
    }
    let mu = bifurcation_slope(&pair.chi, lambda, sigma)?;
    let m = (d / mu).powf(1.0 / (2.0 * sigma as f64));
    Ok(pair.chi.scale(C64::new(m, 0.0)))
}

fn stationary_residual(
    h: &Hamiltonian,
    phi: &Field,
    e_star: f64,
    lambda: f64,
    sigma: u32,
) -> Result<Field> {
    let mut r = h.apply(phi)?;
    r.axpy(C64::new(-e_star, 0.0), phi);
    if lambda != 0.0 {
        let s = sigma as i32;
        r.axpy(
            C64::new(lambda, 0.0),
            &phi.map(|z| z * z.norm_sqr().powi(s)),
        );
    }
    Ok(r)
}

fn real_field(f: &Field) -> Field {
    f.map(|z| C64::new(z.re, 0.0))
}

/// Normalized semi-implicit imaginary-time flow.
fn gradient_flow(h: &Hamiltonian, seed: &Field, opts: &StationaryOptions) -> Result<Field> {
    let grid = h.grid();
    let kin: Vec<f64> = grid
        .wavenumbers()
        .iter()
        .map(|k| 1.0 / (1.0 + GRADIENT_FLOW_TAU * 0.5 * k * k))
        .collect();
    let s = opts.sigma as i32;
    let mut phi = seed.clone();
    for _ in 0..GRADIENT_FLOW_STEPS {
        let mut data: Vec<C64> = phi
            .values()
            .iter()
            .zip(h.potential())
            .map(|(&z, &v)| {
                z * (1.0 - GRADIENT_FLOW_TAU * (v + opts.lambda * z.norm_sqr().powi(s)))
            })
            .collect();
        grid.apply_multiplier(&mut data, &kin);
        let f = real_field(&Field::new(grid.clone(), data)?);
        phi = f.scale(C64::new(opts.mass / f.norm(), 0.0));
    }
    Ok(phi)
}

fn rayleigh(h: &Hamiltonian, phi: &Field, opts: &StationaryOptions) -> Result<f64> {
    let r = stationary_residual(h, phi, 0.0, opts.lambda, opts.sigma)?;
    Ok(inner_product(phi, &r)?.re / phi.norm().powi(2))
}

/// Bordered Newton from `(phi, e_star)`; `chi` fixes the sign.
fn newton(
    h: &Hamiltonian,
    t: f64,
    mut phi: Field,
    mut e_star: f64,
    chi: &Field,
    energy: f64,
    opts: &StationaryOptions,
) -> Result<BoundState> {
    let grid = h.grid().clone();
    let n = grid.num_points();
    let hs = grid.spacing();
    let s = opts.sigma as i32;
    let lam = opts.lambda;
    let m2 = opts.mass * opts.mass;
    let mut res = stationary_residual(h, &phi, e_star, lam, opts.sigma)?;
    let merit = |r: &Field, p: &Field| r.norm() + (p.norm().powi(2) - m2).abs();
    let mut last = merit(&res, &phi);
    for _ in 0..NEWTON_MAX_ITER {
        if res.norm() < 0.01 * RESIDUAL_TOLERANCE
            && (phi.norm() - opts.mass).abs() < 0.01 * MASS_TOLERANCE
        {
            break;
        }
        let pv: Vec<f64> = phi.values().iter().map(|z| z.re).collect();
        let diag: Vec<f64> = h
            .potential()
            .iter()
            .zip(&pv)
            .map(|(&v, &p)| v - e_star + (2 * s + 1) as f64 * lam * (p * p).powi(s))
            .collect();
        let kin = h.preconditioner(e_star.abs().max(0.1));
        let op = |x: &[C64], out: &mut [C64]| {
            h.apply_slice(&x[..n], &mut out[..n]);
            let eta = x[n];
            for j in 0..n {
                out[j] += (diag[j] - h.potential()[j]) * x[j] - pv[j] * hs * eta;
            }
            out[n] = -dot(&phi.values()[..], &x[..n]) * hs;
        };
        let prec = |r: &[C64], out: &mut [C64]| {
            out[..n].copy_from_slice(&r[..n]);
            grid.apply_multiplier(&mut out[..n], &kin);
            out[n] = r[n];
        };
        let mut rhs: Vec<C64> = res.values().iter().map(|z| -z).collect();
        rhs.push(C64::new(0.5 * (phi.norm().powi(2) - m2), 0.0));
        let sol = minres(&op, &prec, &rhs, 1e-10, 4000)
            .map_err(|e| e.context(format!("Newton step at t = {t}")))?;
        let dphi = real_field(&Field::new(grid.clone(), sol.x[..n].to_vec())?);
        let de = hs * sol.x[n].re;
        let mut step = 1.0;
        loop {
            let mut trial = phi.clone();
            trial.axpy(C64::new(step, 0.0), &dphi);
            let te = e_star + step * de;
            let tr = stationary_residual(h, &trial, te, lam, opts.sigma)?;
            let m = merit(&tr, &trial);
            if m < last || step < 1e-3 {
                phi = trial;
                e_star = te;
                res = tr;
                last = m;
                break;
            }
            step *= 0.5;
        }
    }
    if inner_product(&phi, chi)?.re < 0.0 {
        phi = phi.scale(C64::new(-1.0, 0.0));
    }
    let residual = res.norm();
    if !(residual < RESIDUAL_TOLERANCE) {
        return Err(Error::NoConvergence {
            what: "stationary Newton",
            iterations: NEWTON_MAX_ITER,
            residual,
        });
    }
    let mass = phi.norm();
    if (mass - opts.mass).abs() > MASS_TOLERANCE {
        return Err(Error::InvalidArgument(format!(
            "mass constraint violated: {mass} vs {}",
            opts.mass
        )));
    }
    let d = e_star - energy;
    if (lam > 0.0 && d < -1e-12) || (lam < 0.0 && d > 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "E* - E = {d} has the wrong sign for lambda = {lam}"
        )));
    }
    Ok(BoundState {
        t,
        phi,
        e_star,
        energy,
        mass,
        residual,
    })
}

fn seed_from_pair(
    h: &Hamiltonian,
    pair: &EigenPair,
    opts: &StationaryOptions,
) -> Result<(Field, f64)> {
    let mu = bifurcation_slope(&pair.chi, opts.lambda, opts.sigma)?;
    let e0 = pair.energy + mu * opts.mass.powi(2 * opts.sigma as i32);
    let mut phi = pair.chi.scale(C64::new(opts.mass, 0.0));
    let mut e = e0;
    if stationary_residual(h, &phi, e, opts.lambda, opts.sigma)?.norm() > 1e-2 {
        phi = gradient_flow(h, &phi, opts)?;
        e = rayleigh(h, &phi, opts)?;
    }
    Ok((real_field(&phi), e))
}

/// Ground-state stationary solution of mass `M` at time `t`.
pub fn solve_stationary(
    spec: &PotentialSpec,
    t: f64,
    grid: &crate::grid::Grid1D,
    opts: &StationaryOptions,
) -> Result<BoundState> {
    opts.validate()?;
    let pair = lowest_eigenpairs(spec, t, grid, 1)?
        .into_iter()
        .next()
        .ok_or(Error::MissingBoundState { t, which: 0 })?;
    let h = Hamiltonian::from_spec(spec, t, grid)?;
    let (phi, e) = seed_from_pair(&h, &pair, opts)?;
    newton(&h, t, phi, e, &pair.chi, pair.energy, opts)
}

/// Continues the fixed-mass family along the branch mesh, seeding each Newton
/// solve with the previous state.
pub fn track_family(branch: &EigenBranch, opts: &StationaryOptions) -> Result<Vec<BoundState>> {
    opts.validate()?;
    let mut out: Vec<BoundState> = Vec::with_capacity(branch.len());
    for (i, pair) in branch.pairs().iter().enumerate() {
        let h = branch.hamiltonian(i)?;
        let (seed, e) = match out.last() {
            Some(prev) => (prev.phi.clone(), prev.e_star),
            None => seed_from_pair(&h, pair, opts)?,
        };
        let state = newton(&h, pair.t, seed, e, &pair.chi, pair.energy, opts)
            .map_err(|err| err.context(format!("bound-state continuation at t = {}", pair.t)))?;
        // Continuation surrogate for uniqueness: the family keeps its bifurcation side,
        // its phase convention and moves continuously along the mesh.
        let overlap = inner_product(&state.phi, &pair.chi)?.re;
        let jump = out
            .last()
            .map_or(0.0, |prev| (&state.phi - &prev.phi).norm());
        let wrong_side = opts.lambda != 0.0 && (state.e_star - state.energy) * opts.lambda <= 0.0;
        if wrong_side || overlap <= 0.0 || jump > MAX_FAMILY_JUMP * opts.mass {
            return Err(Error::FamilyBreak {
                t: pair.t,
                detail: format!(
                    "E* - E = {:.3e}, <Phi, chi> = {overlap:.3e}, step {jump:.3e}",
                    state.e_star - state.energy
                ),
            });
        }
        out.push(state);
    }
    Ok(out)
}

/// Writes `t, E*, E, E* - E, residual` rows.
pub fn write_family_csv(states: &[BoundState], path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "t,e_star,e,e_star_minus_e,residual")?;
    for s in states {
        writeln!(
            w,
            "{:.12e},{:.15e},{:.15e},{:.15e},{:.3e}",
            s.t,
            s.e_star,
            s.energy,
            s.e_star - s.energy,
            s.residual
        )?;
    }
    Ok(())
}
