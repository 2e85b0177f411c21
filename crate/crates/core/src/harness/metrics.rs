use serde::{Deserialize, Serialize};

use crate::adiabatic::Approximant;
use crate::error::{Error, Result};
use crate::grid::{inner_product, sobolev_norm, Field};
use crate::propagator::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    L2,
    H1,
}

pub fn norm_of(f: &Field, kind: NormKind) -> f64 {
    match kind {
        NormKind::L2 => f.norm(),
        NormKind::H1 => sobolev_norm(f, 1),
    }
}

/// `max_k |psi(t_k) - psi_N(t_k)|` over the trajectory samples, comparing with
/// the approximant of order `order`.
pub fn sup_error(
    traj: &Trajectory,
    approx: &Approximant,
    eps: f64,
    kind: NormKind,
    order: usize,
) -> Result<f64> {
    let times = approx.branch().times();
    let (t0, t1) = (times[0], times[times.len() - 1]);
    if traj.times.len() != traj.fields.len() {
        return Err(Error::InvalidArgument(format!(
            "trajectory has {} times but {} fields",
            traj.times.len(),
            traj.fields.len()
        )));
    }
    let mut sup: f64 = 0.0;
    for (t, psi) in traj.times.iter().zip(&traj.fields) {
        if *t < t0 - 1e-12 || *t > t1 + 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "sample {t} outside the approximant mesh [{t0}, {t1}]"
            )));
        }
        let a = approx.assemble_order(eps, *t, order)?;
        sup = sup.max(norm_of(&(psi - &a), kind));
    }
    Ok(sup)
}

/// Operator norm of `|a><a| - |b><b|`.
///
/// On `span{a, b}` the operator has trace `|a|^2 - |b|^2` and determinant
/// `-|a|^2 |b_perp|^2`, where `b_perp` is the part of `b` orthogonal to `a`.
pub fn projector_distance(a: &Field, b: &Field) -> f64 {
    // Orthogonalize the shorter vector against the longer one.
    let (a, b) = if a.norm() >= b.norm() { (a, b) } else { (b, a) };
    let na2 = a.norm().powi(2);
    let nb2 = b.norm().powi(2);
    if na2 == 0.0 {
        return nb2;
    }
    let c = inner_product(a, b).expect("projector_distance requires matching grids");
    let mut perp = b.clone();
    perp.axpy(-c / na2, a);
    let tr = na2 - nb2;
    let off = na2 * perp.norm().powi(2);
    0.5 * tr.abs() + (0.25 * tr * tr + off).sqrt()
}

/// Least-squares fit of `log err = slope log eps + intercept`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Largest absolute residual of the fit in log space.
    pub max_deviation: f64,
    /// Entries dropped because they were not positive.
    pub excluded: usize,
}

pub fn fit_slope(eps: &[f64], err: &[f64]) -> Result<SlopeFit> {
    if eps.len() != err.len() {
        return Err(Error::InvalidArgument(
            "eps and error lists differ in length".into(),
        ));
    }
    let pts: Vec<(f64, f64)> = eps
        .iter()
        .zip(err)
        .filter(|(e, r)| **e > 0.0 && **r > 0.0 && r.is_finite())
        .map(|(e, r)| (e.ln(), r.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "slope fit needs three positive entries, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument(
            "slope fit needs distinct eps values".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let max_deviation = pts
        .iter()
        .map(|p| (p.1 - slope * p.0 - intercept).abs())
        .fold(0.0, f64::max);
    Ok(SlopeFit {
        slope,
        intercept,
        max_deviation,
        excluded: eps.len() - pts.len(),
    })
}
