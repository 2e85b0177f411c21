use adiab_core::boundstate::{
    bifurcation_predictor, solve_stationary, track_family, StationaryOptions, MASS_TOLERANCE,
    RESIDUAL_TOLERANCE,
};
use adiab_core::eigen::{lowest_eigenpairs, track_branch, uniform_times, GaugeMode};
use adiab_core::grid::inner_product;
use adiab_core::potential::{Path, PotentialSpec, Ramp, WellShape};
use adiab_core::{Grid1D, C64};

fn grid() -> Grid1D {
    Grid1D::new(20.0, 512).unwrap()
}

fn well() -> PotentialSpec {
    PotentialSpec::static_well(WellShape::Sech2, 1.0, [0.0, 1.0])
}

#[test]
fn predictor_examples() {
    let g = grid();
    let pair = lowest_eigenpairs(&well(), 0.0, &g, 1).unwrap().remove(0);
    assert_eq!(
        bifurcation_predictor(&pair, 1.0, 1, pair.energy)
            .unwrap()
            .norm(),
        0.0
    );
    let eps: f64 = 0.01;
    // mu = |sech / sqrt 2|_4^4 = 1/3
    let p = bifurcation_predictor(&pair, 1.0, 1, pair.energy + eps / 3.0).unwrap();
    assert!((p.norm() - eps.sqrt()).abs() < 1e-8, "{}", p.norm());
    let q = bifurcation_predictor(&pair, 2.0, 1, pair.energy + 2.0 * eps / 3.0).unwrap();
    assert!((&p - &q).norm() < 1e-14);
    assert!(bifurcation_predictor(&pair, 1.0, 1, pair.energy - 0.01).is_err());
    assert!(bifurcation_predictor(&pair, -1.0, 1, pair.energy + 0.01).is_err());
}

#[test]
fn linear_limit() {
    let g = grid();
    let pair = lowest_eigenpairs(&well(), 0.0, &g, 1).unwrap().remove(0);
    let s = solve_stationary(&well(), 0.0, &g, &StationaryOptions::new(0.0, 1, 0.3)).unwrap();
    assert!((s.e_star - pair.energy).abs() < 1e-9);
    assert!((&s.phi - &pair.chi.scale(C64::new(0.3, 0.0))).norm() < 1e-9);
}

#[test]
fn invariants_and_energy_shift() {
    let g = grid();
    let eps: f64 = 0.01;
    for &lambda in &[1.0, -1.0] {
        let s = solve_stationary(
            &well(),
            0.0,
            &g,
            &StationaryOptions::new(lambda, 1, eps.sqrt()),
        )
        .unwrap();
        assert!(s.residual < RESIDUAL_TOLERANCE);
        assert!((s.mass - eps.sqrt()).abs() < MASS_TOLERANCE);
        assert!(s.phi.values().iter().all(|z| z.im == 0.0));
        let pair = lowest_eigenpairs(&well(), 0.0, &g, 1).unwrap().remove(0);
        assert!(inner_product(&s.phi, &pair.chi).unwrap().re > 0.0);
        let d = s.e_star - s.energy;
        assert!(
            (d / (lambda * eps / 3.0) - 1.0).abs() < 0.3,
            "lambda = {lambda}: {d}"
        );
    }
    let too_big = StationaryOptions::new(1.0, 1, 0.6);
    assert!(solve_stationary(&well(), 0.0, &g, &too_big).is_err());
}

#[test]
fn predictor_error_is_first_order_in_energy_shift() {
    let g = grid();
    let pair = lowest_eigenpairs(&well(), 0.0, &g, 1).unwrap().remove(0);
    let ratios: Vec<f64> = [0.4, 0.2, 0.1, 0.05]
        .iter()
        .map(|&m| {
            let s = solve_stationary(&well(), 0.0, &g, &StationaryOptions::new(1.0, 1, m)).unwrap();
            let p = bifurcation_predictor(&pair, 1.0, 1, s.e_star).unwrap();
            (&s.phi - &p).norm() / (s.e_star - s.energy)
        })
        .collect();
    // Bounded under refinement: no ratio grows past the coarsest one.
    assert!(
        ratios
            .iter()
            .all(|&r| r.is_finite() && r <= 1.1 * ratios[0]),
        "{ratios:?}"
    );
}

#[test]
fn energy_shift_scales_like_eps_to_sigma() {
    let g = grid();
    let spec = PotentialSpec::static_well(WellShape::Sech2, 3.0, [0.0, 1.0]);
    for sigma in 1..=2u32 {
        let shift = |eps: f64| {
            let s = solve_stationary(
                &spec,
                0.0,
                &g,
                &StationaryOptions::new(1.0, sigma, eps.sqrt()),
            )
            .unwrap();
            s.e_star - s.energy
        };
        let slope = (shift(0.025) / shift(0.0125)).log2();
        assert!(
            (slope - sigma as f64).abs() < 0.3,
            "sigma = {sigma}: {slope}"
        );
    }
}

#[test]
fn families() {
    let g = grid();
    let opts = StationaryOptions::new(1.0, 1, 0.3);
    let times = uniform_times(0.0, 1.0, 10);
    let b = track_branch(&well(), &g, &times, 0, GaugeMode::ParallelTransport).unwrap();
    let fam = track_family(&b, &opts).unwrap();
    for s in &fam {
        assert!((&s.phi - &fam[0].phi).norm() < 1e-9);
        assert!((s.e_star - fam[0].e_star).abs() < 1e-9);
    }
    let moving = PotentialSpec::translating(
        WellShape::Sech2,
        1.0,
        Path::ramped(0.0, 1.0, Ramp::Smoothstep),
        [0.0, 1.0],
    );
    let b = track_branch(&moving, &g, &times, 0, GaugeMode::ParallelTransport).unwrap();
    let fam = track_family(&b, &opts).unwrap();
    for (s, &t) in fam.iter().zip(&times) {
        let a = 3.0 * t * t - 2.0 * t.powi(3);
        let err = (&s.phi - &fam[0].phi.shifted(a)).norm();
        assert!(err < 1e-6, "t = {t}: {err}");
        assert!((s.mass - 0.3).abs() < MASS_TOLERANCE);
    }
    let fam0 = track_family(&b, &StationaryOptions::new(0.0, 1, 0.3)).unwrap();
    for (s, i) in fam0.iter().zip(0..) {
        assert!((&s.phi - &b.chi(i).scale(C64::new(0.3, 0.0))).norm() < 1e-9);
    }
}
