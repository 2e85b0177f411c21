//! Iterative kernels: block LOBPCG for the lowest eigenpairs of a real
//! symmetric operator, and preconditioned MINRES for Hermitian (possibly
//! indefinite) systems. Both work with plain slices and closures so the same
//! code serves the Hamiltonian, the deflated resolvent and the bordered
//! Newton system.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::grid::C64;

fn rdot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cdot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn cnorm(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Symmetric eigendecomposition with eigenvalues sorted ascending.
pub fn sorted_symmetric_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let sym = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Orthonormalizes `cands` against `basis` and each other (two Gram-Schmidt
/// passes), dropping nearly dependent vectors, and appends them to `basis`.
fn extend_orthonormal(basis: &mut Vec<Vec<f64>>, cands: Vec<Vec<f64>>) {
    for mut v in cands {
        let before = rdot(&v, &v).sqrt();
        if !(before > 0.0) || !before.is_finite() {
            continue;
        }
        for _ in 0..2 {
            for b in basis.iter() {
                let c = rdot(b, &v);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let after = rdot(&v, &v).sqrt();
        if after > 1e-10 * before {
            v.iter_mut().for_each(|x| *x /= after);
            basis.push(v);
        }
    }
}

pub struct EigenResult {
    pub values: Vec<f64>,
    /// Euclidean-normalized eigenvectors.
    pub vectors: Vec<Vec<f64>>,
    /// Euclidean residual norms `|A x - lambda x|`.
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

/// Block LOBPCG for the `nwant` smallest eigenpairs of the symmetric operator
/// `op`. `guess` supplies the starting block (its size is the block size and
/// must be at least `nwant`); `precond` approximates a positive definite inverse.
pub fn lobpcg(
    op: &dyn Fn(&[f64], &mut [f64]),
    precond: &dyn Fn(&[f64], &mut [f64]),
    guess: Vec<Vec<f64>>,
    nwant: usize,
    tol: f64,
    max_iter: usize,
) -> Result<EigenResult> {
    let n = guess.first().map_or(0, |g| g.len());
    let nb = guess.len();
    if nb < nwant || nb == 0 || 3 * nb > n {
        return Err(Error::InvalidArgument(format!(
            "LOBPCG block of {nb} vectors for {nwant} wanted on dimension {n}"
        )));
    }
    let apply = |v: &[f64]| {
        let mut out = vec![0.0; n];
        op(v, &mut out);
        out
    };

    let mut x = Vec::with_capacity(nb);
    extend_orthonormal(&mut x, guess);
    if x.len() < nb {
        return Err(Error::InvalidArgument(
            "LOBPCG starting block is rank deficient".into(),
        ));
    }
    let mut p: Vec<Vec<f64>> = Vec::new();
    let mut residual_norms = vec![f64::INFINITY; nb];

    for iter in 0..=max_iter {
        // Rayleigh-Ritz on S = [X, W, P] with W the preconditioned residuals.
        let mut s = x.clone();
        if iter > 0 {
            let ax: Vec<Vec<f64>> = x.iter().map(|v| apply(v)).collect();
            let theta: Vec<f64> = x.iter().zip(&ax).map(|(v, av)| rdot(v, av)).collect();
            let mut w = Vec::with_capacity(nb);
            for j in 0..nb {
                let r: Vec<f64> = ax[j]
                    .iter()
                    .zip(&x[j])
                    .map(|(a, b)| a - theta[j] * b)
                    .collect();
                residual_norms[j] = rdot(&r, &r).sqrt();
                let mut t = vec![0.0; n];
                precond(&r, &mut t);
                w.push(t);
            }
            if residual_norms[..nwant].iter().all(|&r| r < tol) {
                let residuals = residual_norms[..nwant].to_vec();
                return Ok(EigenResult {
                    values: theta[..nwant].to_vec(),
                    vectors: x[..nwant].to_vec(),
                    residuals,
                    iterations: iter,
                });
            }
            if iter == max_iter {
                break;
            }
            extend_orthonormal(&mut s, w);
            extend_orthonormal(&mut s, std::mem::take(&mut p));
        }
        let as_: Vec<Vec<f64>> = s.iter().map(|v| apply(v)).collect();
        let k = s.len();
        let gram = DMatrix::from_fn(k, k, |r, c| rdot(&s[r], &as_[c]));
        let (_, y) = sorted_symmetric_eigen(gram);
        let combine = |from: usize, col: usize| {
            let mut out = vec![0.0; n];
            for r in from..k {
                let c = y[(r, col)];
                out.iter_mut().zip(&s[r]).for_each(|(o, v)| *o += c * v);
            }
            out
        };
        let new_x: Vec<Vec<f64>> = (0..nb).map(|c| combine(0, c)).collect();
        p = if k > nb {
            (0..nb).map(|c| combine(nb, c)).collect()
        } else {
            Vec::new()
        };
        x = Vec::with_capacity(nb);
        extend_orthonormal(&mut x, new_x);
        if x.len() < nb {
            return Err(Error::NoConvergence {
                what: "LOBPCG (basis collapse)",
                iterations: iter,
                residual: f64::NAN,
            });
        }
    }
    Err(Error::NoConvergence {
        what: "LOBPCG",
        iterations: max_iter,
        residual: residual_norms[..nwant].iter().cloned().fold(0.0, f64::max),
    })
}

pub struct MinresOutcome {
    pub x: Vec<C64>,
    pub iterations: usize,
    /// True relative residual `|b - A x| / |b|`.
    pub relative_residual: f64,
}

/// One MINRES cycle from a zero start on `A x = b`. Returns the iterate and
/// the number of iterations.
fn minres_cycle(
    op: &dyn Fn(&[C64], &mut [C64]),
    precond: &dyn Fn(&[C64], &mut [C64]),
    b: &[C64],
    rtol: f64,
    max_iter: usize,
) -> Result<(Vec<C64>, usize)> {
    let n = b.len();
    let zero = C64::new(0.0, 0.0);
    let mut x = vec![zero; n];
    let mut r1 = b.to_vec();
    let mut y = vec![zero; n];
    precond(&r1, &mut y);
    let beta1 = cdot(&r1, &y).re;
    if beta1 < 0.0 {
        return Err(Error::InvalidArgument(
            "MINRES preconditioner is not positive definite".into(),
        ));
    }
    if beta1 == 0.0 {
        return Ok((x, 0));
    }
    let beta1 = beta1.sqrt();
    let mut r2 = r1.clone();
    let (mut oldb, mut beta, mut dbar, mut epsln, mut phibar) = (0.0, beta1, 0.0, 0.0, beta1);
    let (mut cs, mut sn) = (-1.0f64, 0.0f64);
    let mut w = vec![zero; n];
    let mut w2 = vec![zero; n];
    let mut v = vec![zero; n];
    let mut av = vec![zero; n];
    for itn in 1..=max_iter {
        let s = 1.0 / beta;
        v.iter_mut().zip(&y).for_each(|(vi, yi)| *vi = yi * s);
        op(&v, &mut av);
        if itn >= 2 {
            let f = beta / oldb;
            av.iter_mut().zip(&r1).for_each(|(a, r)| *a -= r * f);
        }
        let alfa = cdot(&v, &av).re;
        let f = alfa / beta;
        av.iter_mut().zip(&r2).for_each(|(a, r)| *a -= r * f);
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from_slice(&av);
        precond(&r2, &mut y);
        oldb = beta;
        let bb = cdot(&r2, &y).re;
        if bb < 0.0 {
            return Err(Error::InvalidArgument(
                "MINRES operator is not Hermitian".into(),
            ));
        }
        beta = bb.sqrt();
        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;
        let denom = 1.0 / gamma;
        for i in 0..n {
            let w1 = w2[i];
            w2[i] = w[i];
            w[i] = (v[i] - w1 * oldeps - w2[i] * delta) * denom;
            x[i] += w[i] * phi;
        }
        if phibar <= rtol * beta1 || beta == 0.0 {
            return Ok((x, itn));
        }
    }
    Ok((x, max_iter))
}

/// Preconditioned MINRES with residual-checked restarts. `precond` must be
/// Hermitian positive definite; `op` Hermitian.
pub fn minres(
    op: &dyn Fn(&[C64], &mut [C64]),
    precond: &dyn Fn(&[C64], &mut [C64]),
    b: &[C64],
    rtol: f64,
    max_iter: usize,
) -> Result<MinresOutcome> {
    let n = b.len();
    let bnorm = cnorm(b);
    let mut x = vec![C64::new(0.0, 0.0); n];
    if bnorm == 0.0 {
        return Ok(MinresOutcome {
            x,
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = b.to_vec();
    let mut ax = vec![C64::new(0.0, 0.0); n];
    let mut total = 0;
    let mut rel = 1.0;
    for _restart in 0..6 {
        let (dx, its) = minres_cycle(op, precond, &r, 0.1 * rtol * bnorm / cnorm(&r), max_iter)?;
        total += its;
        x.iter_mut().zip(&dx).for_each(|(a, d)| *a += d);
        op(&x, &mut ax);
        r.iter_mut()
            .zip(b.iter().zip(&ax))
            .for_each(|(ri, (bi, ai))| *ri = bi - ai);
        rel = cnorm(&r) / bnorm;
        if !rel.is_finite() {
            return Err(Error::NonFinite("MINRES iterate".into()));
        }
        if rel <= rtol {
            return Ok(MinresOutcome {
                x,
                iterations: total,
                relative_residual: rel,
            });
        }
    }
    Err(Error::NoConvergence {
        what: "MINRES",
        iterations: total,
        residual: rel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // Tridiagonal second-difference matrix with a diagonal shift; eigenvalues known.
    fn laplacian_1d(n: usize, shift: f64) -> impl Fn(&[f64], &mut [f64]) {
        move |v: &[f64], out: &mut [f64]| {
            for i in 0..n {
                let l = if i > 0 { v[i - 1] } else { 0.0 };
                let r = if i + 1 < n { v[i + 1] } else { 0.0 };
                out[i] = 2.0 * v[i] - l - r + shift * v[i];
            }
        }
    }

    #[test]
    fn lobpcg_finds_lowest_dirichlet_modes() {
        let n = 60;
        let op = laplacian_1d(n, 0.0);
        let id = |r: &[f64], o: &mut [f64]| o.copy_from_slice(r);
        let guess: Vec<Vec<f64>> = (0..5)
            .map(|j| {
                (0..n)
                    .map(|i| ((i * (j + 1)) as f64 * 0.37).sin() + 0.1 * j as f64)
                    .collect()
            })
            .collect();
        let res = lobpcg(&op, &id, guess, 3, 1e-10, 2000).unwrap();
        for (j, &lam) in res.values.iter().enumerate() {
            let exact = 2.0 - 2.0 * (std::f64::consts::PI * (j + 1) as f64 / (n + 1) as f64).cos();
            assert!((lam - exact).abs() < 1e-12, "{j}: {lam} vs {exact}");
        }
    }

    #[test]
    fn minres_solves_indefinite_system() {
        let n = 80;
        // Shifted Laplacian with a shift inside the spectrum: indefinite.
        let shift = -0.5;
        let real_op = laplacian_1d(n, shift);
        let op = |v: &[C64], out: &mut [C64]| {
            let re: Vec<f64> = v.iter().map(|z| z.re).collect();
            let im: Vec<f64> = v.iter().map(|z| z.im).collect();
            let mut a = vec![0.0; n];
            let mut b = vec![0.0; n];
            real_op(&re, &mut a);
            real_op(&im, &mut b);
            for i in 0..n {
                out[i] = C64::new(a[i], b[i]);
            }
        };
        let id = |r: &[C64], o: &mut [C64]| o.copy_from_slice(r);
        let x_true: Vec<C64> = (0..n)
            .map(|i| C64::new((i as f64).sin(), (i as f64 * 0.3).cos()))
            .collect();
        let mut b = vec![C64::new(0.0, 0.0); n];
        op(&x_true, &mut b);
        let out = minres(&op, &id, &b, 1e-12, 1000).unwrap();
        let err: f64 = out
            .x
            .iter()
            .zip(&x_true)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(out.relative_residual <= 1e-12);
        assert!(err < 1e-8, "error {err}");
    }
}
