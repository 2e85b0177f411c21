use adiab_core::adiabatic::Coupling;
use adiab_core::eigen::lowest_eigenpairs;
use adiab_core::potential::{Path, PotentialSpec, Ramp, WellShape};
use adiab_core::propagator::{propagate, propagate_to, strang_step, FreeSpace, SolverParams};
use adiab_core::{Error, Field, Grid1D, C64};

fn grid() -> Grid1D {
    Grid1D::new(20.0, 512).unwrap()
}

fn moving(depth: f64) -> PotentialSpec {
    PotentialSpec::translating(
        WellShape::Sech2,
        depth,
        Path::ramped(0.0, 1.0, Ramp::Smoothstep),
        [0.0, 1.0],
    )
}

fn ground(spec: &PotentialSpec, g: &Grid1D) -> Field {
    lowest_eigenpairs(spec, 0.0, g, 1).unwrap().remove(0).chi
}

#[test]
fn free_plane_wave_is_exact() {
    let g = grid();
    let k = g.wavenumbers()[7];
    let wave = Field::from_fn(&g, |x| C64::from_polar(1.0, k * x)).unwrap();
    let p = SolverParams::linear(0.1);
    let dt = 0.003;
    let out = strang_step(&wave, 0.0, dt, &FreeSpace, &p).unwrap();
    let exact = wave.scale(C64::from_polar(1.0, -k * k * dt / (2.0 * 0.1)));
    assert!((&out - &exact).norm() < 1e-12);
    assert!(strang_step(&wave, 0.0, 0.0, &FreeSpace, &p).is_err());
}

#[test]
fn constant_state_nonlinear_phase() {
    let g = grid();
    let rho = C64::new(0.3, 0.4);
    let psi = Field::from_fn(&g, |_| rho).unwrap();
    for &alpha in &[1.0, 1.5, 2.0] {
        let mut p = SolverParams::new(0.1, Coupling::new(1.3, 2, alpha).unwrap());
        p.samples = 4;
        let traj = propagate(&psi, &FreeSpace, &p, 0.0, 0.5).unwrap();
        let w = 1.3 * 0.1f64.powf(alpha - 1.0) * rho.norm_sqr().powi(2);
        let exact = psi.scale(C64::from_polar(1.0, -w * 0.5));
        assert!((traj.last() - &exact).norm() < 1e-11, "alpha = {alpha}");
    }
}

#[test]
fn zero_data_stays_zero() {
    let g = grid();
    let mut p = SolverParams::new(0.1, Coupling::new(1.0, 1, 1.0).unwrap());
    p.samples = 5;
    let traj = propagate(&Field::zeros(&g), &moving(1.0), &p, 0.0, 1.0).unwrap();
    assert_eq!(traj.len(), 6);
    assert!(traj.fields.iter().all(|f| f.norm() == 0.0));
}

#[test]
fn stationary_state_second_order() {
    let g = grid();
    let spec = PotentialSpec::static_well(WellShape::Sech2, 1.0, [0.0, 1.0]);
    let pair = lowest_eigenpairs(&spec, 0.0, &g, 1).unwrap().remove(0);
    let eps = 0.1;
    let errs: Vec<f64> = [0.04, 0.02, 0.01]
        .iter()
        .map(|&c| {
            let mut p = SolverParams::linear(eps);
            p.c_dt = c;
            p.samples = 1;
            let traj = propagate(&pair.chi, &spec, &p, 0.0, 1.0).unwrap();
            let exact = pair.chi.scale(C64::from_polar(1.0, -pair.energy / eps));
            (traj.last() - &exact).norm()
        })
        .collect();
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((3.5..=4.5).contains(&ratio), "{errs:?}");
    }
}

#[test]
fn richardson_ratio_nonlinear_moving_well() {
    let g = grid();
    let spec = moving(1.0);
    let psi0 = ground(&spec, &g);
    let finals: Vec<Field> = [0.02, 0.01, 0.005]
        .iter()
        .map(|&c| {
            let mut p = SolverParams::new(0.05, Coupling::new(1.0, 1, 1.0).unwrap());
            p.c_dt = c;
            p.samples = 1;
            propagate(&psi0, &spec, &p, 0.0, 1.0)
                .unwrap()
                .last()
                .clone()
        })
        .collect();
    let ratio = (&finals[0] - &finals[1]).norm() / (&finals[1] - &finals[2]).norm();
    assert!((3.5..=4.5).contains(&ratio), "{ratio}");
}

#[test]
fn mass_conserved_over_ten_thousand_steps() {
    let g = grid();
    let spec = moving(3.0);
    let psi0 = ground(&spec, &g);
    let mut p = SolverParams::new(0.05, Coupling::new(-1.0, 2, 1.0).unwrap());
    p.c_dt = 0.002;
    let traj = propagate(&psi0, &spec, &p, 0.0, 1.0).unwrap();
    assert_eq!(traj.total_steps(), 10_000);
    assert!(traj.max_mass_drift() < 1e-11, "{}", traj.max_mass_drift());
}

#[test]
fn forward_then_backward_returns_initial_data() {
    let g = grid();
    let spec = moving(1.0);
    let psi0 = ground(&spec, &g);
    let mut p = SolverParams::linear(0.1);
    p.c_dt = 0.01;
    let fwd = propagate(&psi0, &spec, &p, 0.0, 1.0).unwrap();
    assert_eq!(fwd.total_steps(), 1000);
    let back_times: Vec<f64> = fwd.times.iter().rev().copied().collect();
    let back = propagate_to(fwd.last(), &spec, &p, &back_times).unwrap();
    let err = (back.last() - &psi0).norm();
    assert!(err < 1e-9, "{err}");
}

#[test]
fn guards() {
    let g = grid();
    let spec = moving(1.0);
    let psi0 = ground(&spec, &g);
    let mut p = SolverParams::linear(0.01);
    p.max_steps = 100;
    assert!(matches!(
        propagate(&psi0, &spec, &p, 0.0, 1.0),
        Err(Error::StepGuard { .. })
    ));
    let mut q = SolverParams::linear(0.1);
    q.c_dt = 0.1;
    assert!(propagate(&psi0, &spec, &q, 0.0, 1.0).is_err());
    assert!(propagate(&psi0, &spec, &SolverParams::linear(0.1), 0.0, 1.5).is_err());
}
