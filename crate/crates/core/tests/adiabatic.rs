use std::sync::Arc;

use adiab_core::adiabatic::{
    assemble, coefficient_u1, compute_phases, corrector_v1, dynamic_phase, leading_amplitude,
    nonlinear_phase, pde_residual, well_prepared_initial_data, Approximant, ApproximantOptions,
    Coupling,
};
use adiab_core::eigen::{track_branch, uniform_times, EigenBranch, GaugeMode};
use adiab_core::potential::{Path, PotentialSpec, Ramp, WellShape};
use adiab_core::{Error, Field, Grid1D, C64};

fn grid() -> Grid1D {
    Grid1D::new(20.0, 512).unwrap()
}

fn sech(x: f64) -> f64 {
    1.0 / x.cosh()
}

fn static_branch(m: usize) -> Arc<EigenBranch> {
    let spec = PotentialSpec::static_well(WellShape::Sech2, 1.0, [0.0, 1.0]);
    Arc::new(
        track_branch(
            &spec,
            &grid(),
            &uniform_times(0.0, 1.0, m),
            0,
            GaugeMode::ParallelTransport,
        )
        .unwrap(),
    )
}

fn moving_branch(m: usize) -> Arc<EigenBranch> {
    let spec = PotentialSpec::translating(
        WellShape::Sech2,
        1.0,
        Path::ramped(0.0, 1.0, Ramp::Smoothstep),
        [0.0, 1.0],
    );
    Arc::new(
        track_branch(
            &spec,
            &grid(),
            &uniform_times(0.0, 1.0, m),
            0,
            GaugeMode::ParallelTransport,
        )
        .unwrap(),
    )
}

fn build(branch: &Arc<EigenBranch>, order: usize, coupling: Coupling) -> Approximant {
    Approximant::build(
        branch.clone(),
        ApproximantOptions {
            order,
            coupling,
            eps: None,
        },
    )
    .unwrap()
}

// a(t) = 3t^2 - 2t^3
fn center(t: f64) -> (f64, f64) {
    (3.0 * t * t - 2.0 * t.powi(3), 6.0 * t - 6.0 * t * t)
}

#[test]
fn static_well_phases() {
    let b = static_branch(40);
    let lambda = 0.7;
    let ph = compute_phases(&b, lambda, 1, 1.0).unwrap();
    for (i, &t) in b.times().iter().enumerate() {
        assert!((ph.dynamic[i] + 0.5 * t).abs() < 1e-9);
        assert!(ph.berry[i].norm() < 1e-12);
        // |sech / sqrt 2|_4^4 = 1/3
        assert!(
            (ph.nonlinear[i] - lambda * t / 3.0).abs() < 1e-9,
            "{}",
            ph.nonlinear[i]
        );
    }
    assert!((dynamic_phase(&b, 0.3).unwrap() + 0.15).abs() < 1e-9);
    assert!((nonlinear_phase(&b, lambda, 1, 0.55).unwrap() - lambda * 0.55 / 3.0).abs() < 1e-9);
    assert!(matches!(
        dynamic_phase(&b, 1.5),
        Err(Error::OutOfInterval { .. })
    ));
}

#[test]
fn static_linear_approximant_is_exact() {
    let b = static_branch(20);
    let a = build(&b, 1, Coupling::linear());
    assert!(coefficient_u1(&a).unwrap().iter().all(|u| u.norm() < 1e-12));
    let eps = 0.05;
    let psi = assemble(&a, eps, 0.4).unwrap();
    let exact = b.chi(0).scale(C64::from_polar(1.0, 0.5 * 0.4 / eps));
    assert!((&psi - &exact).norm() < 1e-10);
    let r = pde_residual(&a, eps, 0.5).unwrap();
    assert!(r.norm < 1e-9, "{}", r.norm);
}

#[test]
fn translating_well_correctors_match_closed_forms() {
    let b = moving_branch(200);
    let a = build(&b, 1, Coupling::linear());
    let ph = a.phases();
    assert!(ph
        .berry
        .iter()
        .all(|z| z.re.abs() < 1e-8 && z.im.abs() < 1e-8));
    let g = grid();
    for &t in &[0.0, 0.25, 0.5, 0.8] {
        let (c, rate) = center(t);
        // (H - E)(x chi) = -chi' gives v1 = i a' (x - a) chi0(x - a).
        let oracle = Field::from_fn(&g, |x| {
            C64::new(0.0, rate * (x - c) * sech(x - c) / 2f64.sqrt())
        })
        .unwrap();
        let v1 = corrector_v1(&a, t).unwrap();
        // (x - a) sech(x - a) ~ 1e-7 at the periodic seam bounds the agreement.
        let err = (&v1 - &oracle).norm();
        assert!(err < 1e-6, "t = {t}: {err}");
        let u0 = leading_amplitude(&a, t).unwrap();
        assert!((&u0 - b.chi(b.index_of(t).unwrap())).norm() < 1e-8);
    }
    // u1' = i a'^2 / 2, so u1(1) = 0.6 i for the smoothstep ramp.
    let u1 = coefficient_u1(&a).unwrap();
    let err = (u1[u1.len() - 1] - C64::new(0.0, 0.6)).norm();
    assert!(err < 1e-4, "{err}");
    let exact_mid = 18.0 * (0.5f64.powi(3) / 3.0 - 0.5f64.powi(4) / 2.0 + 0.5f64.powi(5) / 5.0);
    assert!((u1[100] - C64::new(0.0, exact_mid)).norm() < 1e-4);
}

#[test]
fn u1_converges_at_second_order() {
    let ends: Vec<C64> = [50, 100, 200]
        .iter()
        .map(|&m| {
            let a = build(&moving_branch(m), 1, Coupling::new(-1.0, 1, 1.0).unwrap());
            let u = coefficient_u1(&a).unwrap();
            u[u.len() - 1]
        })
        .collect();
    let d1 = (ends[1] - ends[0]).norm();
    let d2 = (ends[2] - ends[1]).norm();
    let ratio = d1 / d2;
    assert!((3.0..5.0).contains(&ratio), "ratio {ratio}, {d1}, {d2}");
}

#[test]
fn u1_matches_independent_quadrature() {
    // With lambda = 0 in parallel transport, u1 = -int <chi, d_t v1>.
    let b = moving_branch(200);
    let a = build(&b, 1, Coupling::linear());
    let dt = b.dt();
    let v = a.corrector(1);
    let m = v.len();
    let g: Vec<C64> = (0..m)
        .map(|i| {
            let terms: Vec<(usize, f64)> = if i == 0 {
                vec![(0, -3.0), (1, 4.0), (2, -1.0)]
            } else if i == m - 1 {
                vec![(m - 1, 3.0), (m - 2, -4.0), (m - 3, 1.0)]
            } else {
                vec![(i + 1, 1.0), (i - 1, -1.0)]
            };
            let mut d = Field::zeros(b.grid());
            for (k, c) in terms {
                d.axpy(C64::new(c, 0.0), &v[k]);
            }
            adiab_core::grid::inner_product(b.chi(i), &d).unwrap() / (2.0 * dt)
        })
        .collect();
    let u1 = coefficient_u1(&a).unwrap();
    // Composite Boole rule over groups of four panels.
    let mut acc = C64::new(0.0, 0.0);
    for k in (0..m - 1).step_by(4) {
        acc += (g[k] * 7.0 + g[k + 1] * 32.0 + g[k + 2] * 12.0 + g[k + 3] * 32.0 + g[k + 4] * 7.0)
            * (2.0 * dt / 45.0);
        let err = (u1[k + 4] + acc).norm();
        assert!(err < 1e-6, "k = {k}: {err}");
    }
}

#[test]
fn assembled_approximant_is_gauge_invariant() {
    let b = moving_branch(100);
    let twist = |t: f64| (0.3 * t + 0.5 * (2.0 * t).sin(), 0.3 + (2.0 * t).cos());
    let tb = Arc::new(b.twisted(twist));
    let coupling = Coupling::new(-1.0, 1, 1.0).unwrap();
    let a = build(&b, 2, coupling);
    let at = build(&tb, 2, coupling);
    let eps = 0.05;
    for &t in &[0.0, 0.37, 0.5, 1.0] {
        let d = (&assemble(&a, eps, t).unwrap() - &assemble(&at, eps, t).unwrap()).norm();
        assert!(d < 1e-8, "t = {t}: {d}");
    }
    let d0 = (&well_prepared_initial_data(&a, eps).unwrap()
        - &well_prepared_initial_data(&at, eps).unwrap())
        .norm();
    assert!(d0 < 1e-10);
    let berry = at.phases().berry_at(1.0).unwrap();
    assert!((berry - C64::new(0.0, twist(1.0).0)).norm() < 1e-8);
}

#[test]
fn residual_orders() {
    let b = moving_branch(200);
    let coupling = Coupling::new(-1.0, 1, 1.0).unwrap();
    let a = build(&b, 2, coupling);
    let r = |eps: f64, n: usize| -> f64 {
        let mut total: f64 = 0.0;
        for &t in &[0.25, 0.5, 0.75] {
            let res = match n {
                2 => pde_residual(&a, eps, t).unwrap(),
                _ => {
                    let lower = Approximant::build(
                        Arc::clone(&b),
                        ApproximantOptions {
                            order: n,
                            coupling,
                            eps: None,
                        },
                    )
                    .unwrap();
                    pde_residual(&lower, eps, t).unwrap()
                }
            };
            assert!(!res.differencing_dominated);
            total = total.max(res.norm);
        }
        total
    };
    for n in 0..=1 {
        let ratio = r(0.05, n) / r(0.025, n);
        let expected = 2f64.powi(n as i32 + 1);
        assert!((ratio / expected - 1.0).abs() < 0.2, "n = {n}: {ratio}");
    }
}

#[test]
fn intermediate_alpha_uses_scaled_nonlinear_phase() {
    let b = static_branch(40);
    let eps = 0.05;
    for &alpha in &[1.0, 1.3, 1.7, 2.0] {
        let coupling = Coupling::new(0.8, 1, alpha).unwrap();
        let a = Approximant::build(
            b.clone(),
            ApproximantOptions {
                order: 0,
                coupling,
                eps: Some(eps),
            },
        )
        .unwrap();
        let t = 0.6;
        let psi = assemble(&a, eps, t).unwrap();
        let phase = 0.5 * t / eps - eps.powf(alpha - 1.0) * 0.8 * t / 3.0;
        let exact = b.chi(0).scale(C64::from_polar(1.0, phase));
        assert!((&psi - &exact).norm() < 1e-10, "alpha = {alpha}");
        if alpha != 1.0 {
            assert!(assemble(&a, 0.04, t).is_err());
        }
    }
    let c = Coupling::new(0.8, 1, 1.5).unwrap();
    assert!(Approximant::build(
        b,
        ApproximantOptions {
            order: 0,
            coupling: c,
            eps: None
        }
    )
    .is_err());
}
