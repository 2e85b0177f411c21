//! The adiabatic approximant `psi_N = exp(-i phi / eps) sum_n eps^n U_n` along
//! an eigenbranch, for `N <= 2`.
//!
//! Writing `psi = exp(-i phi / eps) W` turns the equation into
//! `(H - E) W = i eps d_t W - eps lambda_e F(W)` with `F(z) = |z|^(2 sigma) z` and
//! the effective coupling `lambda_e = lambda eps^(alpha - 1)`. Matching powers of
//! `eps` gives, with `U_n = u_n chi + v_n`,
//!
//! ```text
//! U_0 = chi exp(-beta - i lambda_e int |chi|_{2s+2}^{2s+2})
//! v_n = L_E^{-1} (1 - P) (i d_t U_{n-1} - lambda_e c_{n-1})
//! u_n' + beta' u_n + <chi, d_t v_n> = -i lambda_e <chi, c_n>
//! ```
//!
//! where `c_n` is the `s^n` Taylor coefficient of `F(U_0 + s U_1 + s^2 U_2)` and
//! `beta' = <chi, d_t chi>`. The `u_n` equations are real-linear (they contain
//! `conj(u_n)`) and are integrated with RK4 on the branch mesh.

use std::io::Write;
use std::ops::{Add, Mul, Sub};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::eigen::{dchi_dt_with, EigenBranch};
use crate::error::{Error, Result};
use crate::grid::{inner_product, norm_lp, Field, C64};

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Nonlinearity `lambda eps^alpha |psi|^(2 sigma) psi`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coupling {
    pub lambda: f64,
    pub sigma: u32,
    pub alpha: f64,
}

impl Coupling {
    pub fn linear() -> Self {
        Coupling {
            lambda: 0.0,
            sigma: 1,
            alpha: 1.0,
        }
    }

    pub fn new(lambda: f64, sigma: u32, alpha: f64) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "coupling {lambda} not finite"
            )));
        }
        if sigma == 0 {
            return Err(Error::InvalidArgument(
                "sigma must be a positive integer".into(),
            ));
        }
        if !(alpha.is_finite() && alpha >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must be >= 1, got {alpha}"
            )));
        }
        Ok(Coupling {
            lambda,
            sigma,
            alpha,
        })
    }

    /// `lambda eps^(alpha - 1)`.
    pub fn effective(&self, eps: f64) -> f64 {
        if self.alpha == 1.0 {
            self.lambda
        } else {
            self.lambda * eps.powf(self.alpha - 1.0)
        }
    }
}

/// Cumulative composite Simpson integral on a uniform mesh; odd indices close
/// with the three-point rule over the last panel.
pub fn cumulative_simpson<T>(f: &[T], dt: f64) -> Vec<T>
where
    T: Copy + Default + Add<Output = T> + Sub<Output = T> + Mul<f64, Output = T>,
{
    let n = f.len();
    let mut out = vec![T::default(); n];
    if n < 3 {
        if n == 2 {
            out[1] = (f[0] + f[1]) * (0.5 * dt);
        }
        return out;
    }
    if n == 3 {
        out[1] = (f[0] * 5.0 + f[1] * 8.0 - f[2]) * (dt / 12.0);
        out[2] = (f[0] + f[1] * 4.0 + f[2]) * (dt / 3.0);
        return out;
    }
    // Odd nodes add one interval with four-point cubic weights.
    out[1] = (f[0] * 9.0 + f[1] * 19.0 - f[2] * 5.0 + f[3]) * (dt / 24.0);
    for i in 2..n {
        out[i] = if i % 2 == 0 {
            out[i - 2] + (f[i - 2] + f[i - 1] * 4.0 + f[i]) * (dt / 3.0)
        } else if i + 1 < n {
            out[i - 1] + ((f[i - 1] + f[i]) * 13.0 - f[i - 2] - f[i + 1]) * (dt / 24.0)
        } else {
            out[i - 1] + (f[i - 3] - f[i - 2] * 5.0 + f[i - 1] * 19.0 + f[i] * 9.0) * (dt / 24.0)
        };
    }
    out
}

/// Four-point Lagrange window and weights at fractional mesh index `u`.
pub(crate) fn cubic_weights(u: f64, len: usize) -> (usize, [f64; 4]) {
    let start = (u.floor() as isize - 1).clamp(0, len as isize - 4) as usize;
    let x = u - start as f64;
    let mut w = [0.0; 4];
    for (k, wk) in w.iter_mut().enumerate() {
        let mut p = 1.0;
        for m in 0..4 {
            if m != k {
                p *= (x - m as f64) / (k as f64 - m as f64);
            }
        }
        *wk = p;
    }
    (start, w)
}

fn interp_scalar<T>(table: &[T], u: f64) -> T
where
    T: Copy + Default + Add<Output = T> + Mul<f64, Output = T>,
{
    let (s, w) = cubic_weights(u, table.len());
    (0..4).fold(T::default(), |acc, k| acc + table[s + k] * w[k])
}

/// Centered first differences, second-order one-sided at the ends.
fn mesh_derivative(table: &[Field], dt: f64) -> Vec<Field> {
    let n = table.len();
    (0..n)
        .map(|i| {
            let (terms, scale): (Vec<(usize, f64)>, f64) = if i == 0 {
                (vec![(0, -3.0), (1, 4.0), (2, -1.0)], 0.5 / dt)
            } else if i == n - 1 {
                (vec![(n - 1, 3.0), (n - 2, -4.0), (n - 3, 1.0)], 0.5 / dt)
            } else {
                (vec![(i + 1, 1.0), (i - 1, -1.0)], 0.5 / dt)
            };
            let mut out = Field::zeros(table[i].grid());
            for (j, c) in terms {
                out.axpy(C64::new(c * scale, 0.0), &table[j]);
            }
            out
        })
        .collect()
}

fn series_mul(a: &[C64], b: &[C64]) -> Vec<C64> {
    (0..a.len())
        .map(|n| (0..=n).map(|k| a[k] * b[n - k]).sum())
        .collect()
}

fn series_pow(a: &[C64], p: u32) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); a.len()];
    out[0] = C64::new(1.0, 0.0);
    for _ in 0..p {
        out = series_mul(&out, a);
    }
    out
}

/// Taylor coefficients in `s` of `F(sum_k s^k a_k) = z^(sigma+1) conj(z)^sigma`,
/// truncated at the length of `a`.
pub fn nonlinearity_taylor(a: &[C64], sigma: u32) -> Vec<C64> {
    let conj: Vec<C64> = a.iter().map(|z| z.conj()).collect();
    series_mul(&series_pow(a, sigma + 1), &series_pow(&conj, sigma))
}

/// `F(z) = |z|^(2 sigma) z`.
pub fn nonlinearity(z: C64, sigma: u32) -> C64 {
    z * z.norm_sqr().powi(sigma as i32)
}

/// Field-wise Taylor coefficient `c_n` of `F(sum_k s^k fields_k)`.
fn taylor_field(fields: &[&Field], sigma: u32, n: usize) -> Field {
    let grid = fields[0].grid();
    let values = (0..grid.num_points())
        .map(|j| {
            let a: Vec<C64> = fields.iter().take(n + 1).map(|f| f.values()[j]).collect();
            nonlinearity_taylor(&a, sigma)[n]
        })
        .collect();
    Field::from_parts(grid.clone(), values)
}

/// Phases tabulated on the branch mesh.
#[derive(Clone, Debug)]
pub struct PhaseSet {
    pub times: Vec<f64>,
    /// `int E`.
    pub dynamic: Vec<f64>,
    /// `int <chi, d_t chi>`, purely imaginary.
    pub berry: Vec<C64>,
    /// `lambda int |chi|_{2 sigma + 2}^{2 sigma + 2}`.
    pub nonlinear: Vec<f64>,
    pub alpha: f64,
    /// Integrands of the three phases.
    pub energy: Vec<f64>,
    pub berry_rate: Vec<C64>,
    pub nonlinear_rate: Vec<f64>,
}

impl PhaseSet {
    fn at<T>(&self, table: &[T], t: f64) -> Result<T>
    where
        T: Copy + Default + Add<Output = T> + Mul<f64, Output = T>,
    {
        let u = mesh_position(&self.times, t)?;
        let i = u.round();
        if (u - i).abs() < 1e-9 {
            Ok(table[i as usize])
        } else {
            Ok(interp_scalar(table, u))
        }
    }

    pub fn dynamic_at(&self, t: f64) -> Result<f64> {
        self.at(&self.dynamic, t)
    }

    pub fn berry_at(&self, t: f64) -> Result<C64> {
        self.at(&self.berry, t)
    }

    pub fn nonlinear_at(&self, t: f64) -> Result<f64> {
        self.at(&self.nonlinear, t)
    }
}

fn mesh_position(times: &[f64], t: f64) -> Result<f64> {
    let (t0, t1) = (times[0], times[times.len() - 1]);
    let dt = (t1 - t0) / (times.len() - 1) as f64;
    let slack = 1e-12 * (1.0 + t0.abs().max(t1.abs()));
    if !(t >= t0 - slack && t <= t1 + slack) {
        return Err(Error::OutOfInterval { t, t0, t1 });
    }
    Ok(((t - t0) / dt).clamp(0.0, (times.len() - 1) as f64))
}

/// Branch quantities shared by every approximant on the same branch.
struct BranchTables {
    dchi: Vec<Field>,
    energy: Vec<f64>,
    berry_rate: Vec<C64>,
    /// `|chi|_{2 sigma + 2}^{2 sigma + 2}`.
    lp_power: Vec<f64>,
}

fn branch_tables(branch: &EigenBranch, sigma: u32) -> Result<BranchTables> {
    let p = 2.0 * sigma as f64 + 2.0;
    let rows: Vec<(Field, C64, f64)> = (0..branch.len())
        .into_par_iter()
        .map(|i| {
            let res = branch.resolvent(i)?;
            let d = dchi_dt_with(branch, i, &res)?;
            let c = inner_product(branch.chi(i), &d)?;
            let lp = norm_lp(branch.chi(i), p)?.powf(p);
            Ok((d, c, lp))
        })
        .collect::<Result<_>>()?;
    let mut dchi = Vec::with_capacity(rows.len());
    let mut berry_rate = Vec::with_capacity(rows.len());
    let mut lp_power = Vec::with_capacity(rows.len());
    for (d, c, lp) in rows {
        dchi.push(d);
        berry_rate.push(c);
        lp_power.push(lp);
    }
    Ok(BranchTables {
        dchi,
        energy: branch.energies(),
        berry_rate,
        lp_power,
    })
}

/// Computes the phase set for coupling `lambda`, exponent `alpha`.
pub fn compute_phases(
    branch: &EigenBranch,
    lambda: f64,
    sigma: u32,
    alpha: f64,
) -> Result<PhaseSet> {
    let tables = branch_tables(branch, sigma)?;
    Ok(phases_from(branch, &tables, lambda, alpha))
}

fn phases_from(branch: &EigenBranch, tables: &BranchTables, lambda: f64, alpha: f64) -> PhaseSet {
    let dt = branch.dt();
    let nonlinear_rate: Vec<f64> = tables.lp_power.iter().map(|p| lambda * p).collect();
    PhaseSet {
        times: branch.times().to_vec(),
        dynamic: cumulative_simpson(&tables.energy, dt),
        berry: cumulative_simpson(&tables.berry_rate, dt),
        nonlinear: cumulative_simpson(&nonlinear_rate, dt),
        alpha,
        energy: tables.energy.clone(),
        berry_rate: tables.berry_rate.clone(),
        nonlinear_rate,
    }
}

/// `phi(t) = int_{t0}^t E`.
pub fn dynamic_phase(branch: &EigenBranch, t: f64) -> Result<f64> {
    let phi = cumulative_simpson(&branch.energies(), branch.dt());
    PhaseSet::at_table(&phi, branch.times(), t)
}

/// `beta(t) = int_{t0}^t <chi, d_t chi>`.
pub fn berry_phase(branch: &EigenBranch, t: f64) -> Result<C64> {
    compute_phases(branch, 0.0, 1, 1.0)?.berry_at(t)
}

/// `theta(t) = lambda int_{t0}^t |chi|_{2 sigma + 2}^{2 sigma + 2}`.
pub fn nonlinear_phase(branch: &EigenBranch, lambda: f64, sigma: u32, t: f64) -> Result<f64> {
    let p = 2.0 * sigma as f64 + 2.0;
    let rate: Vec<f64> = branch
        .pairs()
        .iter()
        .map(|pair| Ok(lambda * norm_lp(&pair.chi, p)?.powf(p)))
        .collect::<Result<_>>()?;
    PhaseSet::at_table(&cumulative_simpson(&rate, branch.dt()), branch.times(), t)
}

impl PhaseSet {
    fn at_table(table: &[f64], times: &[f64], t: f64) -> Result<f64> {
        let u = mesh_position(times, t)?;
        let i = u.round();
        if (u - i).abs() < 1e-9 {
            Ok(table[i as usize])
        } else {
            Ok(interp_scalar(table, u))
        }
    }
}

/// Options for [`Approximant::build`].
#[derive(Clone, Copy, Debug)]
pub struct ApproximantOptions {
    pub order: usize,
    pub coupling: Coupling,
    /// Required when `alpha != 1`: the approximant is then specific to one `eps`.
    pub eps: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Approximant {
    branch: Arc<EigenBranch>,
    order: usize,
    coupling: Coupling,
    eps: Option<f64>,
    lambda_eff: f64,
    phases: PhaseSet,
    dchi: Vec<Field>,
    /// `u_0, u_1, u_2` up to `order`.
    u: Vec<Vec<C64>>,
    /// `v_1, v_2` up to `order` (index `n - 1`).
    v: Vec<Vec<Field>>,
}

/// Coefficients of the real-linear ODE `u' = -b u - s - i l (A u + B conj(u))`.
struct ScalarOde {
    berry_rate: Vec<C64>,
    source: Vec<C64>,
    a: Vec<C64>,
    b: Vec<C64>,
    lambda_eff: f64,
}

impl ScalarOde {
    fn rhs(&self, u: C64, at: impl Fn(&[C64]) -> C64) -> C64 {
        -at(&self.berry_rate) * u
            - at(&self.source)
            - I * self.lambda_eff * (at(&self.a) * u + at(&self.b) * u.conj())
    }

    /// Classical RK4 from `u(t0) = 0`; midpoint coefficients by cubic interpolation.
    fn integrate(&self, dt: f64) -> Vec<C64> {
        let n = self.source.len();
        let mut u = vec![C64::new(0.0, 0.0); n];
        for i in 0..n - 1 {
            let at_node = |k: usize| move |tab: &[C64]| tab[k];
            let mid = |tab: &[C64]| interp_scalar(tab, i as f64 + 0.5);
            let k1 = self.rhs(u[i], at_node(i));
            let k2 = self.rhs(u[i] + k1 * (0.5 * dt), mid);
            let k3 = self.rhs(u[i] + k2 * (0.5 * dt), mid);
            let k4 = self.rhs(u[i] + k3 * dt, at_node(i + 1));
            u[i + 1] = u[i] + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        }
        u
    }
}

impl Approximant {
    pub fn build(branch: Arc<EigenBranch>, opts: ApproximantOptions) -> Result<Self> {
        let ApproximantOptions {
            order,
            coupling,
            eps,
        } = opts;
        if order > 2 {
            return Err(Error::InvalidArgument(format!(
                "approximant order {order} > 2"
            )));
        }
        if branch.len() < 5 {
            return Err(Error::InvalidArgument(
                "approximant needs at least 5 mesh times".into(),
            ));
        }
        let lambda_eff = match (coupling.alpha == 1.0, eps) {
            (true, _) => coupling.lambda,
            (false, Some(e)) if e > 0.0 => coupling.effective(e),
            (false, _) => {
                return Err(Error::InvalidArgument(
                    "alpha != 1 requires a fixed eps".into(),
                ));
            }
        };
        let tables = branch_tables(&branch, coupling.sigma)?;
        let phases = phases_from(&branch, &tables, coupling.lambda, coupling.alpha);
        let scaled_theta: Vec<f64> = tables.lp_power.iter().map(|p| lambda_eff * p).collect();
        let theta_eff = cumulative_simpson(&scaled_theta, branch.dt());
        let u0: Vec<C64> = (0..branch.len())
            .map(|i| (-phases.berry[i] - I * theta_eff[i]).exp())
            .collect();
        let mut approx = Approximant {
            branch,
            order,
            coupling,
            eps,
            lambda_eff,
            phases,
            dchi: tables.dchi,
            u: vec![u0],
            v: Vec::new(),
        };
        for n in 1..=order {
            approx.add_order(n, &tables.lp_power)?;
        }
        Ok(approx)
    }

    fn u_field(&self, n: usize, i: usize) -> Field {
        let chi = self.branch.chi(i);
        let mut f = chi.scale(self.u[n][i]);
        if n >= 1 {
            f.axpy(C64::new(1.0, 0.0), &self.v[n - 1][i]);
        }
        f
    }

    /// `d_t U_n` at every mesh time; `U_0` analytically, higher orders by differences.
    fn u_rate(&self, n: usize, lp_power: &[f64]) -> Vec<Field> {
        if n == 0 {
            return (0..self.branch.len())
                .map(|i| {
                    let chi = self.branch.chi(i);
                    let mut d = self.dchi[i].clone();
                    let rate = self.phases.berry_rate[i] + I * self.lambda_eff * lp_power[i];
                    d.axpy(-rate, chi);
                    d.scale(self.u[0][i])
                })
                .collect();
        }
        let table: Vec<Field> = (0..self.branch.len()).map(|i| self.u_field(n, i)).collect();
        mesh_derivative(&table, self.branch.dt())
    }

    fn add_order(&mut self, n: usize, lp_power: &[f64]) -> Result<()> {
        let sigma = self.coupling.sigma;
        let le = self.lambda_eff;
        let rate = self.u_rate(n - 1, lp_power);
        let lower: Vec<Vec<Field>> = (0..self.branch.len())
            .map(|i| (0..n).map(|k| self.u_field(k, i)).collect())
            .collect();
        let v: Vec<Field> = (0..self.branch.len())
            .into_par_iter()
            .map(|i| {
                let refs: Vec<&Field> = lower[i].iter().collect();
                let mut rhs = rate[i].scale(I);
                if le != 0.0 {
                    rhs.axpy(C64::new(-le, 0.0), &taylor_field(&refs, sigma, n - 1));
                }
                self.branch.resolvent(i)?.solve(&rhs)
            })
            .collect::<Result<_>>()?;
        let dv = mesh_derivative(&v, self.branch.dt());

        // Solvability coefficients for u_n.
        let m = self.branch.len();
        let mut ode = ScalarOde {
            berry_rate: self.phases.berry_rate.clone(),
            source: vec![C64::new(0.0, 0.0); m],
            a: vec![C64::new(0.0, 0.0); m],
            b: vec![C64::new(0.0, 0.0); m],
            lambda_eff: le,
        };
        for i in 0..m {
            let chi = self.branch.chi(i);
            let mut s = inner_product(chi, &dv[i])?;
            if le != 0.0 {
                let u0f = &lower[i][0];
                let mut refs: Vec<&Field> = lower[i].iter().collect();
                refs.push(&v[i]);
                let c = taylor_field(&refs, sigma, n);
                s += I * le * inner_product(chi, &c)?;
                let (af, bf) = linearization(u0f, chi, sigma);
                ode.a[i] = inner_product(chi, &af)?;
                ode.b[i] = inner_product(chi, &bf)?;
            }
            ode.source[i] = s;
        }
        let un = ode.integrate(self.branch.dt());
        self.v.push(v);
        self.u.push(un);
        Ok(())
    }

    pub fn branch(&self) -> &EigenBranch {
        &self.branch
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn coupling(&self) -> Coupling {
        self.coupling
    }

    pub fn lambda_eff(&self) -> f64 {
        self.lambda_eff
    }

    pub fn phases(&self) -> &PhaseSet {
        &self.phases
    }

    pub fn dchi(&self, i: usize) -> &Field {
        &self.dchi[i]
    }

    /// Mesh table of `u_n`.
    pub fn coefficient(&self, n: usize) -> &[C64] {
        &self.u[n]
    }

    /// Mesh table of `v_n`, `n >= 1`.
    pub fn corrector(&self, n: usize) -> &[Field] {
        &self.v[n - 1]
    }

    fn check_eps(&self, eps: f64) -> Result<()> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "eps must be positive, got {eps}"
            )));
        }
        if let Some(e) = self.eps {
            if self.coupling.alpha != 1.0 && (e - eps).abs() > 1e-15 * e {
                return Err(Error::InvalidArgument(format!(
                    "approximant built for eps = {e}, evaluated at {eps}"
                )));
            }
        }
        Ok(())
    }

    /// `W = sum_{n <= order} eps^n U_n` at mesh index `i`.
    fn slow_part(&self, eps: f64, i: usize, order: usize) -> Field {
        let mut w = self.u_field(0, i);
        let mut pow = 1.0;
        for n in 1..=order {
            pow *= eps;
            w.axpy(C64::new(pow, 0.0), &self.u_field(n, i));
        }
        w
    }

    /// `psi_n(t)` for `n <= order`, cubic in `t` between mesh points.
    pub fn assemble_order(&self, eps: f64, t: f64, order: usize) -> Result<Field> {
        self.check_eps(eps)?;
        if order > self.order {
            return Err(Error::InvalidArgument(format!(
                "order {order} exceeds built order {}",
                self.order
            )));
        }
        let u = mesh_position(&self.phases.times, t)?;
        let r = u.round();
        let (w, phi) = if (u - r).abs() < 1e-9 {
            let i = r as usize;
            (self.slow_part(eps, i, order), self.phases.dynamic[i])
        } else {
            let (s, wts) = cubic_weights(u, self.branch.len());
            let mut w = Field::zeros(self.branch.grid());
            for k in 0..4 {
                w.axpy(C64::new(wts[k], 0.0), &self.slow_part(eps, s + k, order));
            }
            (w, interp_scalar(&self.phases.dynamic, u))
        };
        Ok(w.scale(C64::from_polar(1.0, -phi / eps)))
    }

    pub fn assemble(&self, eps: f64, t: f64) -> Result<Field> {
        self.assemble_order(eps, t, self.order)
    }

    /// `chi(t0) + sum_{n=1}^{order} eps^n v_n(t0)`.
    pub fn initial_data_order(&self, eps: f64, order: usize) -> Result<Field> {
        self.check_eps(eps)?;
        if order > self.order {
            return Err(Error::InvalidArgument(format!(
                "order {order} exceeds built order {}",
                self.order
            )));
        }
        let mut psi = self.branch.chi(0).clone();
        let mut pow = 1.0;
        for n in 1..=order {
            pow *= eps;
            psi.axpy(C64::new(pow, 0.0), &self.v[n - 1][0]);
        }
        Ok(psi)
    }

    /// Residual of `psi_order` in the equation at mesh time `t`.
    pub fn residual(&self, eps: f64, t: f64) -> Result<Residual> {
        self.residual_order(eps, t, self.order)
    }

    /// Residual of the truncation `psi_n`, `n <= order`.
    pub fn residual_order(&self, eps: f64, t: f64, order: usize) -> Result<Residual> {
        self.check_eps(eps)?;
        if order > self.order {
            return Err(Error::InvalidArgument(format!(
                "order {order} exceeds built order {}",
                self.order
            )));
        }
        let m = self.branch.len();
        let i = self.branch.index_of(t).ok_or_else(|| {
            Error::InvalidArgument(format!("residual time {t} is not a mesh time"))
        })?;
        let dt = self.branch.dt();
        let w = |k: usize| self.slow_part(eps, k, order);
        let deriv = |step: usize| -> Field {
            let h = step as f64 * dt;
            let mut d = Field::zeros(self.branch.grid());
            let terms: Vec<(usize, f64)> = if i >= step && i + step < m {
                vec![(i + step, 0.5), (i - step, -0.5)]
            } else if i + 2 * step < m {
                vec![(i, -1.5), (i + step, 2.0), (i + 2 * step, -0.5)]
            } else {
                vec![(i, 1.5), (i - step, -2.0), (i - 2 * step, 0.5)]
            };
            for (k, c) in terms {
                d.axpy(C64::new(c / h, 0.0), &w(k));
            }
            d
        };
        let wi = w(i);
        let h = self.branch.hamiltonian(i)?;
        let energy = self.branch.energy(i);
        let le = self.lambda_eff;
        let sigma = self.coupling.sigma;
        let base = {
            let hw = h.apply(&wi)?;
            let mut r = wi.scale(C64::new(energy, 0.0));
            r.axpy(C64::new(-1.0, 0.0), &hw);
            if le != 0.0 {
                r.axpy(
                    C64::new(-eps * le, 0.0),
                    &wi.map(|z| nonlinearity(z, sigma)),
                );
            }
            r
        };
        let with = |d: Field| {
            let mut r = base.clone();
            r.axpy(I * eps, &d);
            r
        };
        let fine = with(deriv(1));
        let coarse = with(deriv(2));
        let norm = fine.norm();
        let differencing_error = (&coarse - &fine).norm() / 3.0;
        let phase = C64::from_polar(1.0, -self.phases.dynamic[i] / eps);
        Ok(Residual {
            field: fine.scale(phase),
            norm,
            differencing_error,
            differencing_dominated: differencing_error > 0.1 * norm,
        })
    }

    /// Writes `t, phi, Im beta, theta, |u1|, |v1|` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "t,phi,im_beta,theta,abs_u1,norm_v1")?;
        for i in 0..self.branch.len() {
            let (u1, v1) = if self.order >= 1 {
                (self.u[1][i].norm(), self.v[0][i].norm())
            } else {
                (0.0, 0.0)
            };
            writeln!(
                w,
                "{:.12e},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e}",
                self.phases.times[i],
                self.phases.dynamic[i],
                self.phases.berry[i].im,
                self.phases.nonlinear[i],
                u1,
                v1
            )?;
        }
        Ok(())
    }
}

/// Pointwise pieces of `DF(U_0)[u chi] = u a + conj(u) b`.
fn linearization(u0: &Field, chi: &Field, sigma: u32) -> (Field, Field) {
    let s = sigma as i32;
    let grid = chi.grid().clone();
    let (a, b): (Vec<C64>, Vec<C64>) = u0
        .values()
        .iter()
        .zip(chi.values())
        .map(|(&z, &c)| {
            let r2 = z.norm_sqr();
            let a = c * ((s + 1) as f64 * r2.powi(s));
            let b = c.conj() * z * z * (s as f64 * r2.powi(s - 1));
            (a, b)
        })
        .unzip();
    (
        Field::from_parts(grid.clone(), a),
        Field::from_parts(grid, b),
    )
}

/// Residual of the approximant at one mesh time.
#[derive(Clone, Debug)]
pub struct Residual {
    pub field: Field,
    pub norm: f64,
    /// Richardson estimate of the time-differencing error in `norm`.
    pub differencing_error: f64,
    pub differencing_dominated: bool,
}

/// `U_0(t) = chi exp(-beta - i eps^(alpha-1) theta)`.
pub fn leading_amplitude(approx: &Approximant, t: f64) -> Result<Field> {
    let i = approx
        .branch
        .index_of(t)
        .ok_or_else(|| Error::InvalidArgument(format!("{t} is not a mesh time")))?;
    Ok(approx.u_field(0, i))
}

/// `v_1` at mesh time `t`.
pub fn corrector_v1(approx: &Approximant, t: f64) -> Result<Field> {
    if approx.order < 1 {
        return Err(Error::InvalidArgument(
            "approximant built without correctors".into(),
        ));
    }
    let i = approx
        .branch
        .index_of(t)
        .ok_or_else(|| Error::InvalidArgument(format!("{t} is not a mesh time")))?;
    Ok(approx.v[0][i].clone())
}

/// Mesh table of `u_1`.
pub fn coefficient_u1(approx: &Approximant) -> Result<Vec<C64>> {
    if approx.order < 1 {
        return Err(Error::InvalidArgument(
            "approximant built without correctors".into(),
        ));
    }
    Ok(approx.u[1].clone())
}

/// `chi(t0) + eps gamma` with `gamma = sum_n eps^(n-1) v_n(t0)`.
pub fn well_prepared_initial_data(approx: &Approximant, eps: f64) -> Result<Field> {
    approx.initial_data_order(eps, approx.order)
}

pub fn assemble(approx: &Approximant, eps: f64, t: f64) -> Result<Field> {
    approx.assemble(eps, t)
}

pub fn pde_residual(approx: &Approximant, eps: f64, t: f64) -> Result<Residual> {
    approx.residual(eps, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_integrates_cubics_exactly() {
        let n = 11;
        let dt = 0.1;
        let f: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 * dt;
                1.0 + t - 2.0 * t * t + t * t * t
            })
            .collect();
        let out = cumulative_simpson(&f, dt);
        for (i, v) in out.iter().enumerate() {
            let t = i as f64 * dt;
            let exact = t + t * t / 2.0 - 2.0 * t.powi(3) / 3.0 + t.powi(4) / 4.0;
            assert!((v - exact).abs() < 1e-14, "{i}");
        }
    }

    #[test]
    fn cubic_weights_reproduce_cubics() {
        let tab: Vec<f64> = (0..8)
            .map(|i| {
                let x = i as f64;
                x * x * x - 2.0 * x
            })
            .collect();
        for &u in &[0.25, 0.5, 3.3, 6.5, 6.9, 7.0] {
            let exact = u * u * u - 2.0 * u;
            assert!((interp_scalar(&tab, u) - exact).abs() < 1e-11);
        }
    }

    #[test]
    fn taylor_coefficients_match_direct_expansion() {
        let a = [
            C64::new(0.7, -0.2),
            C64::new(0.3, 0.4),
            C64::new(-0.1, 0.25),
        ];
        for sigma in 1..=3 {
            let c = nonlinearity_taylor(&a, sigma);
            // Oracle: finite-difference Taylor coefficients of F(z(s)) at s = 0.
            let z = |s: f64| a[0] + a[1] * s + a[2] * s * s;
            let f = |s: f64| nonlinearity(z(s), sigma);
            let h = 1e-3;
            let d1 = (f(h) - f(-h)) / (2.0 * h);
            let d2 = (f(h) - f(0.0) * 2.0 + f(-h)) / (h * h);
            assert!((c[0] - f(0.0)).norm() < 1e-14);
            assert!((c[1] - d1).norm() < 1e-5);
            assert!((c[2] - d2 * 0.5).norm() < 1e-5);
        }
    }
}
