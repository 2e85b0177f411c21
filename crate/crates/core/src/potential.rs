//! Analytic time-dependent wells `V(t, x) = -V0 g((x - a(t)) / w(t))` with exact
//! time derivatives.
//!
//! `g` is `sech^2` or a Gaussian. Depending on the kind, either the center
//! `a(t)` or the width `w(t)` follows a [`Path`]; the other stays at its base value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid1D};

/// Tail bound for `|V(t, +-L)|`.
pub const TAIL_TOLERANCE: f64 = 1e-10;

const TIME_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    Static,
    TranslatingWell,
    BreathingWell,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WellShape {
    Sech2,
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ramp {
    /// `s = u` with `u = (t - t0) / (t1 - t0)`.
    Linear,
    /// `s = 3u^2 - 2u^3`, so `s'` vanishes at both ends.
    Smoothstep,
    /// `s = sin(omega (t - t0))`.
    Sine,
}

/// `base + amplitude * s(t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Path {
    pub base: f64,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default = "default_ramp")]
    pub ramp: Ramp,
    #[serde(default = "default_omega")]
    pub omega: f64,
}

fn default_ramp() -> Ramp {
    Ramp::Smoothstep
}

fn default_omega() -> f64 {
    1.0
}

impl Path {
    pub fn constant(base: f64) -> Self {
        Path {
            base,
            amplitude: 0.0,
            ramp: Ramp::Linear,
            omega: 1.0,
        }
    }

    pub fn ramped(base: f64, amplitude: f64, ramp: Ramp) -> Self {
        Path {
            base,
            amplitude,
            ramp,
            omega: 1.0,
        }
    }

    fn profile(&self, t: f64, t0: f64, t1: f64) -> (f64, f64) {
        let span = t1 - t0;
        match self.ramp {
            Ramp::Linear => ((t - t0) / span, 1.0 / span),
            Ramp::Smoothstep => {
                let u = ((t - t0) / span).clamp(0.0, 1.0);
                (u * u * (3.0 - 2.0 * u), 6.0 * u * (1.0 - u) / span)
            }
            Ramp::Sine => {
                let p = self.omega * (t - t0);
                (p.sin(), self.omega * p.cos())
            }
        }
    }

    /// Value and time derivative at `t`.
    pub fn eval(&self, t: f64, t0: f64, t1: f64) -> (f64, f64) {
        let (s, ds) = self.profile(t, t0, t1);
        (self.base + self.amplitude * s, self.amplitude * ds)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    pub shape: WellShape,
    pub depth: f64,
    #[serde(default = "default_center")]
    pub center: Path,
    #[serde(default = "default_width")]
    pub width: Path,
    pub interval: [f64; 2],
}

fn default_center() -> Path {
    Path::constant(0.0)
}

fn default_width() -> Path {
    Path::constant(1.0)
}

impl PotentialSpec {
    pub fn static_well(shape: WellShape, depth: f64, interval: [f64; 2]) -> Self {
        PotentialSpec {
            kind: PotentialKind::Static,
            shape,
            depth,
            center: default_center(),
            width: default_width(),
            interval,
        }
    }

    pub fn translating(shape: WellShape, depth: f64, center: Path, interval: [f64; 2]) -> Self {
        PotentialSpec {
            kind: PotentialKind::TranslatingWell,
            shape,
            depth,
            center,
            width: default_width(),
            interval,
        }
    }

    pub fn breathing(shape: WellShape, depth: f64, width: Path, interval: [f64; 2]) -> Self {
        PotentialSpec {
            kind: PotentialKind::BreathingWell,
            shape,
            depth,
            center: default_center(),
            width,
            interval,
        }
    }

    pub fn t0(&self) -> f64 {
        self.interval[0]
    }

    pub fn t1(&self) -> f64 {
        self.interval[1]
    }

    pub fn contains(&self, t: f64) -> bool {
        let slack = TIME_SLACK * (1.0 + self.t0().abs().max(self.t1().abs()));
        t >= self.t0() - slack && t <= self.t1() + slack
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if self.contains(t) {
            Ok(())
        } else {
            Err(Error::OutOfInterval {
                t,
                t0: self.t0(),
                t1: self.t1(),
            })
        }
    }

    /// Center and its rate at `t`.
    pub fn center_at(&self, t: f64) -> (f64, f64) {
        match self.kind {
            PotentialKind::TranslatingWell => self.center.eval(t, self.t0(), self.t1()),
            _ => (self.center.base, 0.0),
        }
    }

    /// Width and its rate at `t`.
    pub fn width_at(&self, t: f64) -> (f64, f64) {
        match self.kind {
            PotentialKind::BreathingWell => self.width.eval(t, self.t0(), self.t1()),
            _ => (self.width.base, 0.0),
        }
    }

    fn profile(&self, xi: f64) -> (f64, f64) {
        match self.shape {
            WellShape::Sech2 => {
                let s = 1.0 / xi.cosh();
                let s2 = s * s;
                (s2, -2.0 * s2 * xi.tanh())
            }
            WellShape::Gaussian => {
                let g = (-xi * xi).exp();
                (g, -2.0 * xi * g)
            }
        }
    }

    fn value_at(&self, t: f64, x: f64) -> f64 {
        let (a, _) = self.center_at(t);
        let (w, _) = self.width_at(t);
        -self.depth * self.profile((x - a) / w).0
    }

    /// `V(t, x_j)` without the interval check.
    pub(crate) fn sample(&self, t: f64, grid: &Grid1D) -> Vec<f64> {
        let (a, _) = self.center_at(t);
        let (w, _) = self.width_at(t);
        (0..grid.num_points())
            .map(|j| -self.depth * self.profile((grid.node(j) - a) / w).0)
            .collect()
    }

    /// `dV/dt(t, x_j)` without the interval check.
    pub(crate) fn sample_dt(&self, t: f64, grid: &Grid1D) -> Vec<f64> {
        let (a, da) = self.center_at(t);
        let (w, dw) = self.width_at(t);
        (0..grid.num_points())
            .map(|j| {
                let xi = (grid.node(j) - a) / w;
                let dxi = -da / w - xi * dw / w;
                -self.depth * self.profile(xi).1 * dxi
            })
            .collect()
    }

    pub fn values(&self, t: f64, grid: &Grid1D) -> Result<Vec<f64>> {
        self.check_time(t)?;
        Ok(self.sample(t, grid))
    }

    pub fn dt_values(&self, t: f64, grid: &Grid1D) -> Result<Vec<f64>> {
        self.check_time(t)?;
        Ok(self.sample_dt(t, grid))
    }

    /// Structural checks plus sampled width, tail and boundedness checks on `J`.
    pub fn validate(&self, grid: &Grid1D) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.depth.is_finite() && self.depth > 0.0) {
            return bad(format!("depth must be positive, got {}", self.depth));
        }
        let [t0, t1] = self.interval;
        if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
            return bad(format!("interval must satisfy t0 < t1, got [{t0}, {t1}]"));
        }
        let fields = [
            self.center.base,
            self.center.amplitude,
            self.center.omega,
            self.width.base,
            self.width.amplitude,
            self.width.omega,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return bad("path coefficients must be finite".into());
        }
        match self.kind {
            PotentialKind::Static
                if self.center.amplitude != 0.0 || self.width.amplitude != 0.0 =>
            {
                return bad("static potential with a moving path".into());
            }
            PotentialKind::TranslatingWell if self.width.amplitude != 0.0 => {
                return bad("translating well with a width path".into());
            }
            PotentialKind::BreathingWell if self.center.amplitude != 0.0 => {
                return bad("breathing well with a center path".into());
            }
            _ => {}
        }
        let l = grid.half_width();
        for i in 0..=200 {
            let t = t0 + (t1 - t0) * i as f64 / 200.0;
            let (w, _) = self.width_at(t);
            if !(w > 0.0) {
                return bad(format!("well width {w} not positive at t = {t}"));
            }
            let tail = self.value_at(t, -l).abs().max(self.value_at(t, l).abs());
            if tail >= TAIL_TOLERANCE {
                return bad(format!(
                    "potential tail {tail:e} at t = {t} exceeds {TAIL_TOLERANCE:e}"
                ));
            }
            let sup = self
                .sample(t, grid)
                .iter()
                .chain(&self.sample_dt(t, grid))
                .fold(0.0f64, |m, v| m.max(v.abs()));
            if !sup.is_finite() {
                return Err(Error::NonFinite(format!("potential at t = {t}")));
            }
        }
        Ok(())
    }
}

/// `V(t, .)` as a real-valued field.
pub fn evaluate(spec: &PotentialSpec, t: f64, grid: &Grid1D) -> Result<Field> {
    Field::from_real(grid, &spec.values(t, grid)?)
}

/// Analytic `dV/dt(t, .)` as a real-valued field.
pub fn evaluate_dt(spec: &PotentialSpec, t: f64, grid: &Grid1D) -> Result<Field> {
    Field::from_real(grid, &spec.dt_values(t, grid)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid() -> Grid1D {
        Grid1D::new(20.0, 512).unwrap()
    }

    fn at(f: &Field, grid: &Grid1D, x: f64) -> f64 {
        let j = ((x + grid.half_width()) / grid.spacing()).round() as usize;
        assert_abs_diff_eq!(grid.node(j), x, epsilon = 1e-12);
        f.values()[j].re
    }

    fn linear_translation() -> PotentialSpec {
        PotentialSpec::translating(
            WellShape::Sech2,
            1.0,
            Path::ramped(0.0, 1.0, Ramp::Linear),
            [0.0, 1.0],
        )
    }

    // h = 1/16, so x = 0 and x = 1 are nodes.
    fn fine_grid() -> Grid1D {
        Grid1D::new(16.0, 512).unwrap()
    }

    #[test]
    fn closed_form_values() {
        let g = fine_grid();
        let s = PotentialSpec::static_well(WellShape::Sech2, 1.0, [0.0, 1.0]);
        assert_abs_diff_eq!(at(&evaluate(&s, 0.5, &g).unwrap(), &g, 0.0), -1.0);
        let tr = linear_translation();
        assert_abs_diff_eq!(at(&evaluate(&tr, 1.0, &g).unwrap(), &g, 1.0), -1.0);
        let br = PotentialSpec::breathing(
            WellShape::Gaussian,
            2.5,
            Path {
                base: 1.0,
                amplitude: 0.2,
                ramp: Ramp::Sine,
                omega: 1.0,
            },
            [0.0, 3.0],
        );
        assert_abs_diff_eq!(at(&evaluate(&br, 0.0, &g).unwrap(), &g, 0.0), -2.5);
    }

    #[test]
    fn time_derivative_examples() {
        let g = fine_grid();
        let s = PotentialSpec::static_well(WellShape::Gaussian, 1.0, [0.0, 1.0]);
        assert_eq!(evaluate_dt(&s, 0.3, &g).unwrap().norm(), 0.0);
        let tr = linear_translation();
        let d = evaluate_dt(&tr, 0.0, &g).unwrap();
        assert_abs_diff_eq!(at(&d, &g, 0.0), 0.0, epsilon = 1e-15);
        let sech1 = 1.0 / 1.0f64.cosh();
        let oracle = -2.0 * sech1 * sech1 * 1.0f64.tanh();
        assert_abs_diff_eq!(oracle, -0.6397, epsilon = 1e-4);
        assert_abs_diff_eq!(at(&d, &g, 1.0), oracle, epsilon = 1e-14);
    }

    #[test]
    fn time_derivative_matches_finite_difference() {
        let g = grid();
        let specs = [
            linear_translation(),
            PotentialSpec::translating(
                WellShape::Gaussian,
                2.0,
                Path::ramped(-0.5, 1.0, Ramp::Smoothstep),
                [0.0, 1.0],
            ),
            PotentialSpec::breathing(
                WellShape::Sech2,
                3.0,
                Path {
                    base: 1.0,
                    amplitude: 0.2,
                    ramp: Ramp::Sine,
                    omega: 1.0,
                },
                [0.0, 2.0],
            ),
            PotentialSpec::breathing(
                WellShape::Gaussian,
                1.5,
                Path::ramped(1.0, -0.3, Ramp::Smoothstep),
                [0.0, 1.0],
            ),
        ];
        let step = 1e-5;
        for spec in &specs {
            for i in 0..20 {
                // Deterministic interior times spread over J.
                let u = (0.5 + i as f64 * 0.618_033_988_75) % 1.0;
                let t = spec.t0() + step + u * (spec.t1() - spec.t0() - 2.0 * step);
                let plus = spec.values(t + step, &g).unwrap();
                let minus = spec.values(t - step, &g).unwrap();
                let exact = spec.dt_values(t, &g).unwrap();
                for j in 0..g.num_points() {
                    let fd = (plus[j] - minus[j]) / (2.0 * step);
                    assert!((fd - exact[j]).abs() < 1e-6, "{:?} t={t} j={j}", spec.kind);
                }
            }
        }
    }

    #[test]
    fn translation_by_whole_cells() {
        let g = grid();
        let tr = PotentialSpec::translating(
            WellShape::Sech2,
            1.0,
            Path::ramped(0.0, 1.0, Ramp::Smoothstep),
            [0.0, 1.0],
        );
        let v0 = evaluate(&tr, 0.0, &g).unwrap();
        // Choose t with a(t) an integer number of cells: solve s(t) = 8h by bisection.
        let target = 8.0 * g.spacing();
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if tr.center_at(mid).0 < target {
                lo = mid
            } else {
                hi = mid
            }
        }
        let t = 0.5 * (lo + hi);
        let vt = evaluate(&tr, t, &g).unwrap();
        let n = g.num_points();
        for j in 0..n {
            let shifted = v0.values()[(j + n - 8) % n].re;
            assert!((vt.values()[j].re - shifted).abs() < 1e-8);
        }
    }

    #[test]
    fn outside_interval_is_rejected() {
        let g = grid();
        let tr = linear_translation();
        assert!(matches!(
            evaluate(&tr, 1.5, &g),
            Err(Error::OutOfInterval { .. })
        ));
        assert!(evaluate_dt(&tr, -0.1, &g).is_err());
    }

    #[test]
    fn validation() {
        let g = grid();
        assert!(linear_translation().validate(&g).is_ok());
        let mut wide = PotentialSpec::static_well(WellShape::Sech2, 1.0, [0.0, 1.0]);
        wide.width = Path::constant(3.0);
        assert!(wide.validate(&g).is_err(), "tail too heavy");
        let mut moving_static = PotentialSpec::static_well(WellShape::Sech2, 1.0, [0.0, 1.0]);
        moving_static.center.amplitude = 1.0;
        assert!(moving_static.validate(&g).is_err());
        let neg = PotentialSpec::static_well(WellShape::Sech2, -1.0, [0.0, 1.0]);
        assert!(neg.validate(&g).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
            kind = "translating_well"
            shape = "sech2"
            depth = 3.0
            center = { base = 0.0, amplitude = 1.0, ramp = "smoothstep" }
            interval = [0.0, 1.0]
        "#;
        let spec: PotentialSpec = toml::from_str(text).unwrap();
        assert_eq!(spec.kind, PotentialKind::TranslatingWell);
        assert_eq!(spec.center.ramp, Ramp::Smoothstep);
        assert_eq!(spec.width, Path::constant(1.0));
        let back: PotentialSpec = toml::from_str(&toml::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
    }
}
