use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::eigen::GaugeMode;
use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::potential::PotentialSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// `lambda = 0`: sup-in-time error against the leading approximant.
    LinearAdiabatic,
    /// `lambda != 0`, `alpha = 1`, nonlinear phase included.
    WeaklyNonlinear,
    /// Nonlinear dynamics compared with the approximant lacking `theta`.
    PhaseFalsification,
    /// Projector distance between solution and approximant.
    Projector,
    /// Residual norms of the truncated approximants.
    ResidualOrder,
    /// Nonlinear bound-state family of mass `sqrt(eps)` against the rescaled solution.
    BoundstateTracking,
    /// `alpha = 2`: nonlinearity below the critical size, linear approximant.
    Subcritical,
    /// `1 < alpha < 2`: approximant with `eps^(alpha - 1) theta`.
    Intermediate,
    /// Predictor accuracy and the `E* - E ~ eps^sigma` law.
    Bifurcation,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::LinearAdiabatic => "linear_adiabatic",
            ExperimentKind::WeaklyNonlinear => "weakly_nonlinear",
            ExperimentKind::PhaseFalsification => "phase_falsification",
            ExperimentKind::Projector => "projector",
            ExperimentKind::ResidualOrder => "residual_order",
            ExperimentKind::BoundstateTracking => "boundstate_tracking",
            ExperimentKind::Subcritical => "subcritical",
            ExperimentKind::Intermediate => "intermediate",
            ExperimentKind::Bifurcation => "bifurcation",
        }
    }

    /// Kinds that fit a slope and therefore need three or more `eps` values.
    fn needs_sweep(&self) -> bool {
        !matches!(self, ExperimentKind::PhaseFalsification)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub half_width: f64,
    pub num_points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            half_width: 20.0,
            num_points: 512,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshConfig {
    /// Branch mesh intervals.
    pub intervals: usize,
    /// Output samples per branch interval.
    pub sample_refine: usize,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig {
            intervals: 200,
            sample_refine: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub c_dt: f64,
    /// Maximum number of `dt` halvings.
    pub max_refinements: usize,
    /// Accept `dt` once halving changes the metric by less than this fraction.
    pub refine_tolerance: f64,
    pub max_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            c_dt: 0.01,
            max_refinements: 4,
            refine_tolerance: 0.05,
            max_steps: 50_000_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundStateConfig {
    pub max_mass: f64,
    /// Largest mass of the predictor-accuracy ladder.
    pub initial_mass: f64,
    /// Dyadic refinements of `E* - E` in that ladder.
    pub refinements: usize,
}

impl Default for BoundStateConfig {
    fn default() -> Self {
        BoundStateConfig {
            max_mass: 0.5,
            initial_mass: 0.4,
            refinements: 3,
        }
    }
}

fn default_epsilons() -> Vec<f64> {
    vec![0.1, 0.05, 0.025, 0.0125]
}

fn default_sigma() -> u32 {
    1
}

fn default_alpha() -> f64 {
    1.0
}

fn default_initial_order() -> usize {
    1
}

fn default_true() -> bool {
    true
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub kind: ExperimentKind,
    #[serde(default)]
    pub grid: GridConfig,
    pub potential: PotentialSpec,
    /// Defaults to the potential's interval.
    #[serde(default)]
    pub interval: Option<[f64; 2]>,
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "default_sigma")]
    pub sigma: u32,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Order of the approximant the solution is compared with.
    #[serde(default)]
    pub order: usize,
    /// Order of the well-prepared initial data.
    #[serde(default = "default_initial_order")]
    pub initial_order: usize,
    /// Include the (scaled) nonlinear phase in the comparison approximant.
    #[serde(default = "default_true")]
    pub nonlinear_phase: bool,
    #[serde(default)]
    pub which: usize,
    #[serde(default)]
    pub gauge: GaugeMode,
    #[serde(default)]
    pub mesh: MeshConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub boundstate: BoundStateConfig,
    /// Slope windows overriding the per-kind defaults, keyed by metric.
    #[serde(default)]
    pub windows: BTreeMap<String, [f64; 2]>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn name(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| self.kind.name().to_string())
    }

    pub fn grid(&self) -> Result<Grid1D> {
        Grid1D::new(self.grid.half_width, self.grid.num_points)
    }

    pub fn interval(&self) -> [f64; 2] {
        self.interval.unwrap_or(self.potential.interval)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let grid = self.grid()?;
        self.potential.validate(&grid)?;
        let [t0, t1] = self.interval();
        if !(t0 < t1 && self.potential.contains(t0) && self.potential.contains(t1)) {
            return bad(format!(
                "interval [{t0}, {t1}] must lie inside the potential's interval"
            ));
        }
        if self.epsilons.is_empty() || self.epsilons.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
            return bad("epsilons must lie in (0, 1]".into());
        }
        if self.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return bad("epsilons must be strictly decreasing".into());
        }
        if self.kind.needs_sweep() && self.epsilons.len() < 3 {
            return bad(format!(
                "{} needs at least three epsilons",
                self.kind.name()
            ));
        }
        crate::adiabatic::Coupling::new(self.lambda, self.sigma, self.alpha)?;
        if self.order > 2 || self.initial_order > 2 {
            return bad("approximant orders are limited to 2".into());
        }
        if self.mesh.intervals < 4 || self.mesh.sample_refine == 0 {
            return bad("mesh needs >= 4 intervals and sample_refine >= 1".into());
        }
        if !(self.solver.c_dt > 0.0 && self.solver.c_dt <= 0.05) {
            return bad(format!(
                "c_dt must lie in (0, 0.05], got {}",
                self.solver.c_dt
            ));
        }
        if !(self.solver.refine_tolerance > 0.0) {
            return bad("refine_tolerance must be positive".into());
        }
        use ExperimentKind::*;
        match self.kind {
            LinearAdiabatic if self.lambda != 0.0 => {
                bad("linear_adiabatic requires lambda = 0".into())
            }
            WeaklyNonlinear | PhaseFalsification | BoundstateTracking | Bifurcation
                if self.lambda == 0.0 =>
            {
                bad(format!("{} requires lambda != 0", self.kind.name()))
            }
            WeaklyNonlinear | PhaseFalsification | BoundstateTracking if self.alpha != 1.0 => {
                bad(format!("{} requires alpha = 1", self.kind.name()))
            }
            Subcritical if self.alpha != 2.0 => bad("subcritical requires alpha = 2".into()),
            Intermediate if !(self.alpha > 1.0 && self.alpha < 2.0) => {
                bad("intermediate requires 1 < alpha < 2".into())
            }
            BoundstateTracking | Bifurcation
                if self.epsilons[0].sqrt() > self.boundstate.max_mass
                    || self.boundstate.initial_mass > self.boundstate.max_mass =>
            {
                bad("bound-state masses exceed max_mass".into())
            }
            _ => Ok(()),
        }
    }
}
