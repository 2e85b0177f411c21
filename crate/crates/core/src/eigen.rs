//! Discrete Hamiltonian `H = -1/2 d^2/dx^2 + V`, its lowest eigenpairs,
//! continuation of one eigenbranch in time, and the partial resolvent.
//!
//! Eigenvectors are computed in real arithmetic, so every `chi` is real up to
//! the phase applied by a twist. For such branches parallel transport reduces
//! to a sign choice and coincides with the real-aligned gauge.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{dot, inner_product, Field, Grid1D, C64};
use crate::linalg::{lobpcg, minres, sorted_symmetric_eigen};
use crate::potential::PotentialSpec;

/// Smallest admissible spectral gap along a branch.
pub const DELTA_MIN: f64 = 0.05;
/// Eigenvalues above `-BOUND_TOLERANCE` count as continuum.
pub const BOUND_TOLERANCE: f64 = 1e-8;
/// Residual target for eigenpairs.
pub const EIGEN_TOLERANCE: f64 = 1e-10;
/// Relative residual target for resolvent solves.
pub const RESOLVENT_TOLERANCE: f64 = 1e-12;

const LOBPCG_MAX_ITER: usize = 2000;
const MINRES_MAX_ITER: usize = 4000;
const GUARD_VECTORS: usize = 2;
const DENSE_LIMIT: usize = 128;

#[derive(Clone, Debug)]
pub struct EigenPair {
    pub t: f64,
    pub energy: f64,
    pub chi: Field,
    pub residual: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaugeMode {
    #[default]
    ParallelTransport,
    RealAligned,
}

/// Matrix-free `H` on a grid, with a stored potential.
#[derive(Clone, Debug)]
pub struct Hamiltonian {
    grid: Grid1D,
    potential: Vec<f64>,
    kinetic: Vec<f64>,
}

impl Hamiltonian {
    pub fn new(grid: &Grid1D, potential: Vec<f64>) -> Result<Self> {
        if potential.len() != grid.num_points() {
            return Err(Error::InvalidArgument(
                "potential length does not match grid".into(),
            ));
        }
        let kinetic = grid.wavenumbers().iter().map(|k| 0.5 * k * k).collect();
        Ok(Hamiltonian {
            grid: grid.clone(),
            potential,
            kinetic,
        })
    }

    pub fn from_spec(spec: &PotentialSpec, t: f64, grid: &Grid1D) -> Result<Self> {
        Hamiltonian::new(grid, spec.values(t, grid)?)
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn apply_slice(&self, f: &[C64], out: &mut [C64]) {
        out.copy_from_slice(f);
        self.grid.apply_multiplier(out, &self.kinetic);
        for ((o, v), x) in out.iter_mut().zip(&self.potential).zip(f) {
            *o += v * x;
        }
    }

    fn apply_real(&self, f: &[f64], out: &mut [f64]) {
        let mut buf: Vec<C64> = f.iter().map(|&r| C64::new(r, 0.0)).collect();
        self.grid.apply_multiplier(&mut buf, &self.kinetic);
        for (j, o) in out.iter_mut().enumerate() {
            *o = buf[j].re + self.potential[j] * f[j];
        }
    }

    pub fn apply(&self, f: &Field) -> Result<Field> {
        self.grid.check_same(f.grid())?;
        let mut out = vec![C64::new(0.0, 0.0); f.values().len()];
        self.apply_slice(f.values(), &mut out);
        Ok(Field::from_parts(self.grid.clone(), out))
    }

    /// Dense real symmetric matrix, built column by column from basis vectors.
    pub fn dense_matrix(&self) -> DMatrix<f64> {
        let n = self.grid.num_points();
        let mut m = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            self.apply_real(&e, &mut col);
            e[j] = 0.0;
            for i in 0..n {
                m[(i, j)] = col[i];
            }
        }
        m
    }

    /// Fourier preconditioner `(k^2/2 + c)^{-1}` with `c > 0`.
    pub(crate) fn preconditioner(&self, c: f64) -> Vec<f64> {
        self.kinetic.iter().map(|k| 1.0 / (k + c)).collect()
    }
}

/// `H f` with `V_t` the (real part of the) potential field.
pub fn apply_hamiltonian(v_t: &Field, f: &Field) -> Result<Field> {
    v_t.grid().check_same(f.grid())?;
    Hamiltonian::new(v_t.grid(), v_t.real_parts())?.apply(f)
}

/// Eigenvectors (Euclidean unit) and values of the `m` lowest states.
struct RawEigen {
    values: Vec<f64>,
    vectors: Vec<Vec<f64>>,
}

fn default_guess(h: &Hamiltonian, nb: usize) -> Vec<Vec<f64>> {
    let g = h.grid();
    let (jmin, _) = h
        .potential
        .iter()
        .enumerate()
        .fold(
            (0, f64::INFINITY),
            |acc, (j, &v)| if v < acc.1 { (j, v) } else { acc },
        );
    let xc = g.node(jmin);
    (0..nb)
        .map(|p| {
            (0..g.num_points())
                .map(|j| {
                    let y = g.node(j) - xc;
                    y.powi(p as i32) * (-0.25 * y * y).exp()
                })
                .collect()
        })
        .collect()
}

fn dense_lowest(h: &Hamiltonian, m: usize) -> RawEigen {
    let n = h.grid.num_points();
    let (values, vecs) = sorted_symmetric_eigen(h.dense_matrix());
    let m = m.min(n);
    RawEigen {
        values: values[..m].to_vec(),
        vectors: (0..m)
            .map(|c| vecs.column(c).iter().cloned().collect())
            .collect(),
    }
}

fn solve_lowest(h: &Hamiltonian, m: usize, warm: Option<&[Vec<f64>]>) -> Result<RawEigen> {
    let n = h.grid.num_points();
    let nb = m + GUARD_VECTORS;
    if 3 * nb > n {
        return Ok(dense_lowest(h, m));
    }
    let guess = match warm {
        Some(w) if w.len() == nb => w.to_vec(),
        _ => default_guess(h, nb),
    };
    let vmin = h.potential.iter().cloned().fold(0.0f64, f64::min);
    let pre = h.preconditioner(1.0 + vmin.abs());
    let op = |f: &[f64], out: &mut [f64]| h.apply_real(f, out);
    let prec = |r: &[f64], out: &mut [f64]| {
        let mut buf: Vec<C64> = r.iter().map(|&x| C64::new(x, 0.0)).collect();
        h.grid.apply_multiplier(&mut buf, &pre);
        out.iter_mut().zip(&buf).for_each(|(o, b)| *o = b.re);
    };
    match lobpcg(&op, &prec, guess, nb, EIGEN_TOLERANCE, LOBPCG_MAX_ITER) {
        Ok(res) => Ok(RawEigen {
            values: res.values,
            vectors: res.vectors,
        }),
        Err(_) if n <= DENSE_LIMIT => Ok(dense_lowest(h, nb)),
        Err(e) => Err(e),
    }
}

/// Sign convention: the entry of largest magnitude is positive.
fn normalize_sign(v: &mut [f64]) {
    let big = v
        .iter()
        .cloned()
        .fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
    if big < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn to_pairs(h: &Hamiltonian, t: f64, raw: &RawEigen, m: usize) -> Result<Vec<EigenPair>> {
    let g = h.grid();
    let scale = 1.0 / g.spacing().sqrt();
    let mut pairs = Vec::new();
    for (&e, v) in raw.values.iter().zip(&raw.vectors).take(m) {
        if e >= -BOUND_TOLERANCE {
            break;
        }
        let mut v = v.clone();
        normalize_sign(&mut v);
        let chi = Field::from_real(g, &v.iter().map(|x| x * scale).collect::<Vec<_>>())?;
        let norm = chi.norm();
        let chi = chi.scale(C64::new(1.0 / norm, 0.0));
        let hchi = h.apply(&chi)?;
        let residual = (&hchi - &chi.scale(C64::new(e, 0.0))).norm();
        if residual >= 1e-9 {
            return Err(Error::NoConvergence {
                what: "eigenpair residual",
                iterations: 0,
                residual,
            });
        }
        pairs.push(EigenPair {
            t,
            energy: e,
            chi,
            residual,
        });
    }
    Ok(pairs)
}

/// Up to `m` lowest bound states of `H(t)`, energies ascending.
pub fn lowest_eigenpairs(
    spec: &PotentialSpec,
    t: f64,
    grid: &Grid1D,
    m: usize,
) -> Result<Vec<EigenPair>> {
    if m == 0 {
        return Err(Error::InvalidArgument("m must be at least 1".into()));
    }
    let h = Hamiltonian::from_spec(spec, t, grid)?;
    let raw = solve_lowest(&h, m, None)?;
    to_pairs(&h, t, &raw, m)
}

/// Same as [`lowest_eigenpairs`] through a dense symmetric solve.
pub fn lowest_eigenpairs_dense(
    spec: &PotentialSpec,
    t: f64,
    grid: &Grid1D,
    m: usize,
) -> Result<Vec<EigenPair>> {
    let h = Hamiltonian::from_spec(spec, t, grid)?;
    let raw = dense_lowest(&h, m);
    to_pairs(&h, t, &raw, m)
}

/// Distance from `E_which` to the other listed eigenvalues and to the continuum edge 0.
pub fn gap(pairs: &[EigenPair], which: usize) -> f64 {
    let e = pairs[which].energy;
    pairs
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != which)
        .map(|(_, p)| (p.energy - e).abs())
        .fold(e.abs(), f64::min)
}

/// `m + 1` equally spaced times covering `[t0, t1]`.
pub fn uniform_times(t0: f64, t1: f64, m: usize) -> Vec<f64> {
    (0..=m)
        .map(|i| {
            if i == m {
                t1
            } else {
                t0 + (t1 - t0) * i as f64 / m as f64
            }
        })
        .collect()
}

/// Eigenpairs of one isolated level on a uniform time mesh, phase aligned.
#[derive(Clone, Debug)]
pub struct EigenBranch {
    spec: PotentialSpec,
    grid: Grid1D,
    times: Vec<f64>,
    pairs: Vec<EigenPair>,
    gaps: Vec<f64>,
    gauge: GaugeMode,
    which: usize,
    /// `<chi, d_t chi>` at each mesh time: zero for computed branches,
    /// `i S'(t)` after a twist by `exp(i S)`.
    connection: Vec<C64>,
}

fn check_mesh(times: &[f64]) -> Result<f64> {
    if times.len() < 3 {
        return Err(Error::InvalidArgument(
            "a branch needs at least 3 times".into(),
        ));
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument("branch times must increase".into()));
    }
    for (i, t) in times.iter().enumerate() {
        if (t - (times[0] + i as f64 * dt)).abs() > 1e-9 * dt {
            return Err(Error::InvalidArgument(
                "branch times must be uniform".into(),
            ));
        }
    }
    Ok(dt)
}

/// Follows eigenvalue number `which` along `times`.
pub fn track_branch(
    spec: &PotentialSpec,
    grid: &Grid1D,
    times: &[f64],
    which: usize,
    gauge: GaugeMode,
) -> Result<EigenBranch> {
    check_mesh(times)?;
    let m = which + 2;
    let mut warm: Option<Vec<Vec<f64>>> = None;
    let mut pairs: Vec<EigenPair> = Vec::with_capacity(times.len());
    let mut gaps = Vec::with_capacity(times.len());
    for &t in times {
        let h = Hamiltonian::from_spec(spec, t, grid)?;
        let raw = solve_lowest(&h, m, warm.as_deref())
            .map_err(|e| e.context(format!("eigensolve at t = {t}")))?;
        let bound =
            to_pairs(&h, t, &raw, m).map_err(|e| e.context(format!("eigensolve at t = {t}")))?;
        warm = Some(raw.vectors);
        if bound.len() <= which {
            return Err(Error::MissingBoundState { t, which });
        }
        let g = gap(&bound, which);
        if g < DELTA_MIN {
            return Err(Error::GapViolation {
                t,
                gap: g,
                min: DELTA_MIN,
            });
        }
        let mut pair = bound.into_iter().nth(which).unwrap();
        if let Some(prev) = pairs.last() {
            let o = inner_product(&prev.chi, &pair.chi)?;
            if o.norm() < 0.5 {
                return Err(Error::BranchFlip {
                    t,
                    overlap: o.norm(),
                });
            }
            let rot = match gauge {
                GaugeMode::ParallelTransport => o.conj() / o.norm(),
                GaugeMode::RealAligned => C64::new(o.re.signum(), 0.0),
            };
            pair.chi = pair.chi.scale(rot);
        }
        pairs.push(pair);
        gaps.push(g);
    }
    let connection = vec![C64::new(0.0, 0.0); times.len()];
    Ok(EigenBranch {
        spec: spec.clone(),
        grid: grid.clone(),
        times: times.to_vec(),
        pairs,
        gaps,
        gauge,
        which,
        connection,
    })
}

impl EigenBranch {
    pub fn spec(&self) -> &PotentialSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dt(&self) -> f64 {
        (self.times[self.len() - 1] - self.times[0]) / (self.len() - 1) as f64
    }

    pub fn pairs(&self) -> &[EigenPair] {
        &self.pairs
    }

    pub fn chi(&self, i: usize) -> &Field {
        &self.pairs[i].chi
    }

    pub fn energy(&self, i: usize) -> f64 {
        self.pairs[i].energy
    }

    pub fn energies(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.energy).collect()
    }

    pub fn gaps(&self) -> &[f64] {
        &self.gaps
    }

    pub fn min_gap(&self) -> f64 {
        self.gaps.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn gauge(&self) -> GaugeMode {
        self.gauge
    }

    pub fn which(&self) -> usize {
        self.which
    }

    pub fn connection(&self, i: usize) -> C64 {
        self.connection[i]
    }

    /// Mesh index of `t`, if `t` is a mesh point up to roundoff.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let u = (t - self.times[0]) / self.dt();
        let i = u.round();
        if (u - i).abs() < 1e-9 && i >= 0.0 && (i as usize) < self.len() {
            Some(i as usize)
        } else {
            None
        }
    }

    /// Regauges `chi -> chi exp(i S(t))`; `phase` returns `(S, S')`.
    pub fn twisted(&self, phase: impl Fn(f64) -> (f64, f64)) -> EigenBranch {
        let mut out = self.clone();
        for (i, &t) in self.times.iter().enumerate() {
            let (s, ds) = phase(t);
            out.pairs[i].chi = self.pairs[i].chi.scale(C64::from_polar(1.0, s));
            out.connection[i] = self.connection[i] + C64::new(0.0, ds);
        }
        out
    }

    pub fn hamiltonian(&self, i: usize) -> Result<Hamiltonian> {
        Hamiltonian::from_spec(&self.spec, self.times[i], &self.grid)
    }

    pub fn resolvent(&self, i: usize) -> Result<PartialResolvent> {
        PartialResolvent::new(self.hamiltonian(i)?, self.energy(i), self.chi(i).clone())
    }

    /// Writes `t, E, gap` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "t,E,gap")?;
        for i in 0..self.len() {
            writeln!(
                w,
                "{:.12e},{:.15e},{:.15e}",
                self.times[i],
                self.energy(i),
                self.gaps[i]
            )?;
        }
        Ok(())
    }
}

/// `L_E^{-1} = (1 - P)(H - E)^{-1}(1 - P)` through the deflated solve
/// `(H - E + P) v = (1 - P) r`.
pub struct PartialResolvent {
    h: Hamiltonian,
    energy: f64,
    chi: Field,
    precond: Vec<f64>,
}

impl PartialResolvent {
    pub fn new(h: Hamiltonian, energy: f64, chi: Field) -> Result<Self> {
        h.grid().check_same(chi.grid())?;
        let precond = h.preconditioner(energy.abs().max(0.1));
        Ok(PartialResolvent {
            h,
            energy,
            chi,
            precond,
        })
    }

    pub fn chi(&self) -> &Field {
        &self.chi
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn hamiltonian(&self) -> &Hamiltonian {
        &self.h
    }

    /// `(1 - P) f`.
    pub fn project_out(&self, f: &Field) -> Field {
        let c = inner_product(&self.chi, f).expect("grid checked at construction");
        let mut out = f.clone();
        out.axpy(-c, &self.chi);
        out
    }

    pub fn solve(&self, r: &Field) -> Result<Field> {
        self.h.grid().check_same(r.grid())?;
        let grid = self.h.grid();
        let hsp = grid.spacing();
        let rhs = self.project_out(r);
        let chi = self.chi.values();
        let op = |x: &[C64], out: &mut [C64]| {
            self.h.apply_slice(x, out);
            let c = dot(chi, x) * hsp;
            for ((o, xi), ci) in out.iter_mut().zip(x).zip(chi) {
                *o += ci * c - xi * self.energy;
            }
        };
        let prec = |r: &[C64], out: &mut [C64]| {
            out.copy_from_slice(r);
            grid.apply_multiplier(out, &self.precond);
        };
        let sol = minres(
            &op,
            &prec,
            rhs.values(),
            RESOLVENT_TOLERANCE,
            MINRES_MAX_ITER,
        )
        .map_err(|e| e.context("partial resolvent"))?;
        let v = self.project_out(&Field::new(grid.clone(), sol.x)?);
        Ok(v)
    }

    /// `(H - E) f`.
    pub fn apply_shifted(&self, f: &Field) -> Result<Field> {
        let hf = self.h.apply(f)?;
        Ok(&hf - &f.scale(C64::new(self.energy, 0.0)))
    }
}

/// Solves `(H - E + P) v = (1 - P) r` for `H = -1/2 d^2 + V_t`.
pub fn partial_resolvent_solve(v_t: &Field, energy: f64, chi: &Field, r: &Field) -> Result<Field> {
    let h = Hamiltonian::new(v_t.grid(), v_t.real_parts())?;
    PartialResolvent::new(h, energy, chi.clone())?.solve(r)
}

/// `d chi / dt` at mesh index `i`: the orthogonal part from the resolvent,
/// the `chi` component from the branch connection.
pub fn dchi_dt(branch: &EigenBranch, i: usize) -> Result<Field> {
    let res = branch.resolvent(i)?;
    dchi_dt_with(branch, i, &res)
}

pub(crate) fn dchi_dt_with(
    branch: &EigenBranch,
    i: usize,
    res: &PartialResolvent,
) -> Result<Field> {
    let t = branch.times[i];
    let dv = branch.spec.dt_values(t, &branch.grid)?;
    let chi = branch.chi(i);
    let source = chi.mul_real(&dv).scale(C64::new(-1.0, 0.0));
    let mut out = res
        .solve(&source)
        .map_err(|e| e.context(format!("d chi/dt at t = {t}")))?;
    out.axpy(branch.connection[i], chi);
    Ok(out)
}

/// `dE/dt = <chi, dV/dt chi>`.
pub fn hellmann_feynman_edot(branch: &EigenBranch, i: usize) -> Result<f64> {
    let dv = branch.spec.dt_values(branch.times[i], &branch.grid)?;
    let chi = branch.chi(i);
    Ok(inner_product(chi, &chi.mul_real(&dv))?.re)
}
