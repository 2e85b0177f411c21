use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ExperimentKind};
use super::metrics::{fit_slope, norm_of, projector_distance, NormKind, SlopeFit};
use crate::adiabatic::{cumulative_simpson, Approximant, ApproximantOptions, Coupling};
use crate::boundstate::{
    bifurcation_predictor, solve_stationary, track_family, BoundState, StationaryOptions,
};
use crate::eigen::{track_branch, uniform_times, EigenBranch};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid1D, C64};
use crate::propagator::{propagate_to, SolverParams, Trajectory};

/// Largest eigenfunction tail mass accepted before a run is aborted.
pub const EIGEN_TAIL_TOLERANCE: f64 = 1e-10;

/// Tail mass above which reflections at the periodic boundary count as polluting.
pub const REFLECTION_TOLERANCE: f64 = 1e-8;
/// Allowed relative change of a sup under doubling of the sampling density.
pub const SAMPLING_TOLERANCE: f64 = 0.02;
/// Largest accepted ratio of time-differencing error to residual norm.
pub const RESIDUAL_GUARD: f64 = 0.1;
/// Floor for the error of the approximant without nonlinear phase.
pub const FALSIFICATION_FLOOR: f64 = 0.3;

/// Results for one `eps`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpsRow {
    pub eps: f64,
    pub metrics: BTreeMap<String, f64>,
    /// Accepted `c_dt` and the number of halvings it took.
    pub c_dt: Option<f64>,
    pub refinements: usize,
    pub dt_converged: bool,
    /// Relative change of the primary sup when every other sample is dropped.
    pub sampling_change: Option<f64>,
    pub max_mass_drift: Option<f64>,
    pub max_tail_mass: Option<f64>,
    pub residual_guard_ok: bool,
    pub invariants_ok: bool,
    pub warnings: Vec<String>,
    /// Wall time; kept out of `report.json` so reports stay reproducible.
    #[serde(skip)]
    pub runtime_s: f64,
}

impl EpsRow {
    fn new(eps: f64) -> Self {
        EpsRow {
            eps,
            metrics: BTreeMap::new(),
            c_dt: None,
            refinements: 0,
            dt_converged: true,
            sampling_change: None,
            max_mass_drift: None,
            max_tail_mass: None,
            residual_guard_ok: true,
            invariants_ok: true,
            warnings: Vec::new(),
            runtime_s: 0.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricFit {
    pub metric: String,
    #[serde(flatten)]
    pub fit: SlopeFit,
    pub window: Option<[f64; 2]>,
    pub min_slope: Option<f64>,
    pub informational: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepReport {
    pub name: String,
    pub kind: ExperimentKind,
    pub rows: Vec<EpsRow>,
    pub fits: Vec<MetricFit>,
    pub checks: Vec<Check>,
    /// Largest `eps` whose row satisfies every invariant.
    pub eps0: Option<f64>,
    pub pass: bool,
    pub warnings: Vec<String>,
}

impl SweepReport {
    pub fn fit(&self, metric: &str) -> Option<&MetricFit> {
        self.fits.iter().find(|f| f.metric == metric)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn column(&self, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.metrics.get(metric).copied().unwrap_or(f64::NAN))
            .collect()
    }
}

enum Rule {
    Window(f64, f64),
    AtLeast(f64),
    Info,
}

fn slope_rules(cfg: &ExperimentConfig) -> Vec<(&'static str, Rule)> {
    use ExperimentKind::*;
    use Rule::*;
    let s = cfg.sigma as f64;
    match cfg.kind {
        LinearAdiabatic | Subcritical | Intermediate => vec![
            ("sup_err_l2", Window(0.75, 1.25)),
            ("sup_err_h1", Info),
            ("proj_dist", Info),
        ],
        WeaklyNonlinear => vec![
            ("sup_err_l2", Window(0.75, 1.25)),
            ("proj_dist", AtLeast(0.75)),
            ("sup_err_h1", Info),
        ],
        Projector => vec![("proj_dist", AtLeast(0.75)), ("sup_err_l2", Info)],
        PhaseFalsification => vec![],
        ResidualOrder => vec![
            ("residual_n0", Window(0.7, 1.3)),
            ("residual_n1", Window(1.7, 2.3)),
        ],
        Bifurcation => vec![("energy_shift", Window(s - 0.3, s + 0.3))],
        BoundstateTracking => {
            let w = s.min(1.5);
            let p = (s + 0.5).min(2.0);
            let mut v = vec![
                ("wave_dist", Window(w - 0.3, w + 0.3)),
                ("proj_dist", Window(p - 0.3, p + 0.3)),
            ];
            if cfg.sigma >= 2 {
                v.push(("phase_star_dist", Window(s - 1.3, s - 0.7)));
            } else {
                v.push(("phase_star_dist", Info));
            }
            v.push(("wave_dist_unit", Info));
            v.push(("proj_dist_unit", Info));
            v.push(("energy_shift", Info));
            v
        }
    }
}

/// Branch, approximants and sample times shared by all `eps`.
struct Context<'a> {
    cfg: &'a ExperimentConfig,
    grid: Grid1D,
    branch: Arc<EigenBranch>,
    /// Approximant providing the initial data, when it does not depend on `eps`.
    data: Option<Arc<Approximant>>,
    /// Linear comparison approximant when the nonlinear phase is left out.
    linear: Option<Arc<Approximant>>,
    samples: Vec<f64>,
}

impl Context<'_> {
    fn data_order(&self) -> usize {
        let c = self.cfg;
        if c.nonlinear_phase {
            c.initial_order.max(c.order)
        } else {
            c.initial_order
        }
    }

    fn coupling(&self) -> Coupling {
        Coupling {
            lambda: self.cfg.lambda,
            sigma: self.cfg.sigma,
            alpha: self.cfg.alpha,
        }
    }

    fn data_approximant(&self, eps: f64) -> Result<Arc<Approximant>> {
        if let Some(a) = &self.data {
            return Ok(a.clone());
        }
        let opts = ApproximantOptions {
            order: self.data_order(),
            coupling: self.coupling(),
            eps: Some(eps),
        };
        Ok(Arc::new(Approximant::build(self.branch.clone(), opts)?))
    }

    fn comparison(&self, data: &Arc<Approximant>) -> Arc<Approximant> {
        self.linear.clone().unwrap_or_else(|| data.clone())
    }

    fn params(&self, eps: f64, c_dt: f64) -> SolverParams {
        let mut p = SolverParams::new(eps, self.coupling());
        p.c_dt = c_dt;
        p.max_steps = self.cfg.solver.max_steps;
        p
    }
}

fn build_context(cfg: &ExperimentConfig) -> Result<Context<'_>> {
    let grid = cfg.grid()?;
    let [t0, t1] = cfg.interval();
    let m = cfg.mesh.intervals;
    let times = uniform_times(t0, t1, m);
    let branch = Arc::new(track_branch(
        &cfg.potential,
        &grid,
        &times,
        cfg.which,
        cfg.gauge,
    )?);
    let tail = branch
        .pairs()
        .iter()
        .map(|p| p.chi.tail_mass())
        .fold(0.0, f64::max);
    if tail > EIGEN_TAIL_TOLERANCE {
        return Err(Error::Config(format!(
            "eigenfunction tail mass {tail:.2e} exceeds {EIGEN_TAIL_TOLERANCE:e}; enlarge the domain"
        )));
    }
    let r = cfg.mesh.sample_refine;
    let samples = uniform_times(t0, t1, m * r);
    let mut ctx = Context {
        cfg,
        grid,
        branch,
        data: None,
        linear: None,
        samples,
    };
    let needs_approx = !matches!(cfg.kind, ExperimentKind::Bifurcation);
    if needs_approx && cfg.alpha == 1.0 {
        let opts = ApproximantOptions {
            order: ctx.data_order(),
            coupling: ctx.coupling(),
            eps: None,
        };
        ctx.data = Some(Arc::new(Approximant::build(ctx.branch.clone(), opts)?));
    }
    if needs_approx && !cfg.nonlinear_phase {
        let opts = ApproximantOptions {
            order: cfg.order,
            coupling: Coupling::linear(),
            eps: None,
        };
        ctx.linear = Some(Arc::new(Approximant::build(ctx.branch.clone(), opts)?));
    }
    Ok(ctx)
}

/// Per-sample metric columns of one trajectory.
struct Series {
    names: Vec<&'static str>,
    /// `values[c][k]` for evaluated sample `indices[k]`.
    values: Vec<Vec<f64>>,
    indices: Vec<usize>,
    primary: usize,
}

impl Series {
    fn sup(&self, c: usize) -> f64 {
        self.values[c].iter().copied().fold(0.0, f64::max)
    }

    fn sampling_change(&self) -> f64 {
        let all = self.sup(self.primary);
        let half = self.values[self.primary]
            .iter()
            .step_by(2)
            .copied()
            .fold(0.0, f64::max);
        if all == 0.0 {
            0.0
        } else {
            (all - half) / all
        }
    }
}

struct Simulation {
    traj: Trajectory,
    series: Series,
    c_dt: f64,
    refinements: usize,
    converged: bool,
}

/// Propagates with `c_dt`, halving it until the primary sup changes by less
/// than the configured fraction.
fn simulate(
    ctx: &Context,
    eps: f64,
    psi0: &Field,
    eval: &(dyn Fn(&Trajectory) -> Result<Series> + Sync),
) -> Result<Simulation> {
    let sc = &ctx.cfg.solver;
    let mut c_dt = sc.c_dt;
    let mut prev: Option<f64> = None;
    let mut refinements = 0;
    loop {
        let traj = propagate_to(
            psi0,
            &ctx.cfg.potential,
            &ctx.params(eps, c_dt),
            &ctx.samples,
        )?;
        let series = eval(&traj)?;
        let value = series.sup(series.primary);
        if sc.max_refinements == 0 {
            return Ok(Simulation {
                traj,
                series,
                c_dt,
                refinements,
                converged: true,
            });
        }
        if let Some(p) = prev {
            let converged = (value - p).abs() <= sc.refine_tolerance * value.abs();
            if converged || refinements >= sc.max_refinements {
                return Ok(Simulation {
                    traj,
                    series,
                    c_dt,
                    refinements,
                    converged,
                });
            }
        }
        prev = Some(value);
        c_dt *= 0.5;
        refinements += 1;
    }
}

fn comparison_series<'a>(
    ctx: &'a Context,
    approx: &'a Approximant,
    eps: f64,
    primary: &'static str,
) -> impl Fn(&Trajectory) -> Result<Series> + Sync + 'a {
    let order = ctx.cfg.order;
    move |traj: &Trajectory| {
        let rows: Vec<[f64; 3]> = traj
            .times
            .par_iter()
            .zip(&traj.fields)
            .map(|(&t, psi)| {
                let a = approx.assemble_order(eps, t, order)?;
                let d = psi - &a;
                Ok([
                    norm_of(&d, NormKind::L2),
                    norm_of(&d, NormKind::H1),
                    projector_distance(psi, &a),
                ])
            })
            .collect::<Result<_>>()?;
        let names = vec!["sup_err_l2", "sup_err_h1", "proj_dist"];
        let values = (0..3)
            .map(|c| rows.iter().map(|r| r[c]).collect())
            .collect();
        let primary = names.iter().position(|n| *n == primary).unwrap_or(0);
        Ok(Series {
            names,
            values,
            indices: (0..traj.len()).collect(),
            primary,
        })
    }
}

fn record_simulation(row: &mut EpsRow, sim: &Simulation) {
    for (c, name) in sim.series.names.iter().enumerate() {
        row.metrics.insert(name.to_string(), sim.series.sup(c));
    }
    row.c_dt = Some(sim.c_dt);
    row.refinements = sim.refinements;
    row.dt_converged = sim.converged;
    row.sampling_change = Some(sim.series.sampling_change());
    row.max_mass_drift = Some(sim.traj.max_mass_drift());
    row.max_tail_mass = Some(sim.traj.max_tail_mass());
    if !sim.converged {
        row.warnings.push(format!(
            "dt refinement did not settle after {} halvings",
            sim.refinements
        ));
    }
    if sim.traj.max_tail_mass() > REFLECTION_TOLERANCE {
        row.warnings.push(format!(
            "tail mass {:.2e} exceeds {REFLECTION_TOLERANCE:e}",
            sim.traj.max_tail_mass()
        ));
    }
}

fn write_trajectory(path: &Path, sim: &Simulation) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(w, "t,mass,tail_mass")?;
    for n in &sim.series.names {
        write!(w, ",{n}")?;
    }
    writeln!(w)?;
    let mut col = vec![None; sim.traj.len()];
    for (k, &i) in sim.series.indices.iter().enumerate() {
        col[i] = Some(k);
    }
    for i in 0..sim.traj.len() {
        write!(
            w,
            "{:.10e},{:.15e},{:.6e}",
            sim.traj.times[i], sim.traj.mass[i], sim.traj.tail_mass[i]
        )?;
        for c in 0..sim.series.names.len() {
            match col[i] {
                Some(k) => write!(w, ",{:.10e}", sim.series.values[c][k])?,
                None => write!(w, ",nan")?,
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

fn eps_tag(eps: f64) -> String {
    format!("{eps}").replace('.', "p")
}

fn run_comparison(ctx: &Context, eps: f64, out: &Path) -> Result<EpsRow> {
    let mut row = EpsRow::new(eps);
    let data = ctx.data_approximant(eps)?;
    let cmp = ctx.comparison(&data);
    let psi0 = data.initial_data_order(eps, ctx.cfg.initial_order)?;
    let primary = match ctx.cfg.kind {
        ExperimentKind::Projector => "proj_dist",
        _ => "sup_err_l2",
    };
    let eval = comparison_series(ctx, &cmp, eps, primary);
    let sim = simulate(ctx, eps, &psi0, &eval)?;
    record_simulation(&mut row, &sim);
    if ctx.cfg.kind == ExperimentKind::PhaseFalsification {
        let last = *sim.series.values[0].last().unwrap();
        row.metrics.insert("final_err".into(), last);
        let theta = *data.phases().nonlinear.last().unwrap();
        row.metrics
            .insert("theta_floor".into(), 2.0 * (0.5 * theta).sin().abs());
    }
    write_trajectory(&out.join(format!("traj_eps_{}.csv", eps_tag(eps))), &sim)?;
    Ok(row)
}

fn run_residual(ctx: &Context, eps: f64) -> Result<EpsRow> {
    let mut row = EpsRow::new(eps);
    let a = ctx.data_approximant(eps)?;
    let max_order = a.order().min(1);
    for n in 0..=max_order {
        // The guard compares sups: pointwise it is meaningless where the
        // residual itself vanishes, e.g. at rest points of the potential.
        let (mut sup, mut diff): (f64, f64) = (0.0, 0.0);
        for &t in ctx.branch.times() {
            let r = a.residual_order(eps, t, n)?;
            sup = sup.max(r.norm);
            diff = diff.max(r.differencing_error);
        }
        if diff > RESIDUAL_GUARD * sup {
            row.residual_guard_ok = false;
            row.warnings.push(format!(
                "order {n} residual dominated by time differencing ({diff:.2e} vs {sup:.2e})"
            ));
        }
        row.metrics.insert(format!("residual_n{n}"), sup);
        row.metrics.insert(format!("differencing_n{n}"), diff);
    }
    Ok(row)
}

fn stationary(ctx: &Context, mass: f64) -> StationaryOptions {
    let mut o = StationaryOptions::new(ctx.cfg.lambda, ctx.cfg.sigma, mass);
    o.max_mass = ctx.cfg.boundstate.max_mass;
    o
}

fn mean_shift(family: &[BoundState]) -> f64 {
    family.iter().map(|s| s.e_star - s.energy).sum::<f64>() / family.len() as f64
}

fn run_bifurcation(ctx: &Context, eps: f64, out: &Path) -> Result<EpsRow> {
    let mut row = EpsRow::new(eps);
    let family = track_family(&ctx.branch, &stationary(ctx, eps.sqrt()))?;
    row.metrics
        .insert("energy_shift".into(), mean_shift(&family));
    row.metrics.insert(
        "max_residual".into(),
        family.iter().map(|s| s.residual).fold(0.0, f64::max),
    );
    crate::boundstate::write_family_csv(
        &family,
        &out.join(format!("family_eps_{}.csv", eps_tag(eps))),
    )?;
    Ok(row)
}

/// `Psi = sqrt(eps) psi` against the bound-state family of mass `sqrt(eps)`.
fn run_boundstate(ctx: &Context, eps: f64, out: &Path) -> Result<EpsRow> {
    let mut row = EpsRow::new(eps);
    let data = ctx.data_approximant(eps)?;
    let family = track_family(&ctx.branch, &stationary(ctx, eps.sqrt()))?;
    crate::boundstate::write_family_csv(
        &family,
        &out.join(format!("family_eps_{}.csv", eps_tag(eps))),
    )?;
    let ph = data.phases();
    let e_star: Vec<f64> = family.iter().map(|s| s.e_star).collect();
    let phi_star = cumulative_simpson(&e_star, ctx.branch.dt());
    let r = ctx.cfg.mesh.sample_refine;
    let root = eps.sqrt();
    let psi0 = data.initial_data_order(eps, ctx.cfg.initial_order)?;
    let eval = |traj: &Trajectory| -> Result<Series> {
        let indices: Vec<usize> = (0..ctx.branch.len()).map(|i| i * r).collect();
        let rows: Vec<[f64; 5]> = (0..ctx.branch.len())
            .into_par_iter()
            .map(|i| {
                let big = traj.fields[i * r].scale(C64::new(root, 0.0));
                let phi = &family[i].phi;
                let slow = -ph.berry[i] - C64::new(0.0, ph.nonlinear[i]);
                let lin = phi.scale((slow - C64::new(0.0, ph.dynamic[i] / eps)).exp());
                let star = phi.scale((slow - C64::new(0.0, phi_star[i] / eps)).exp());
                let wave = (&big - &lin).norm();
                let proj = projector_distance(&big, phi);
                let star_d = (&big - &star).norm();
                Ok([wave, proj, star_d, wave / root, proj / eps])
            })
            .collect::<Result<_>>()?;
        let names = vec![
            "wave_dist",
            "proj_dist",
            "phase_star_dist",
            "wave_dist_unit",
            "proj_dist_unit",
        ];
        let values = (0..5)
            .map(|c| rows.iter().map(|r| r[c]).collect())
            .collect();
        Ok(Series {
            names,
            values,
            indices,
            primary: 0,
        })
    };
    let sim = simulate(ctx, eps, &psi0, &eval)?;
    record_simulation(&mut row, &sim);
    row.metrics
        .insert("energy_shift".into(), mean_shift(&family));
    write_trajectory(&out.join(format!("traj_eps_{}.csv", eps_tag(eps))), &sim)?;
    Ok(row)
}

/// `|Phi - predictor| / (E* - E)` over dyadic refinements of `E* - E` at `t0`.
fn predictor_ratios(ctx: &Context) -> Result<Vec<(f64, f64)>> {
    let b = ctx.cfg.boundstate;
    let t0 = ctx.branch.times()[0];
    let pair = &ctx.branch.pairs()[0];
    (0..=b.refinements)
        .map(|k| {
            let mass = b.initial_mass * 0.5f64.powf(k as f64 / (2.0 * ctx.cfg.sigma as f64));
            let s = solve_stationary(&ctx.cfg.potential, t0, &ctx.grid, &stationary(ctx, mass))?;
            let p = bifurcation_predictor(pair, ctx.cfg.lambda, ctx.cfg.sigma, s.e_star)?;
            let d = s.e_star - s.energy;
            Ok((d, (&s.phi - &p).norm() / d.abs()))
        })
        .collect()
}

fn fit_rules(cfg: &ExperimentConfig, rows: &[EpsRow]) -> Result<Vec<MetricFit>> {
    let eps: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let mut fits = Vec::new();
    for (metric, rule) in slope_rules(cfg) {
        let vals: Vec<f64> = rows
            .iter()
            .map(|r| r.metrics.get(metric).copied().unwrap_or(f64::NAN))
            .collect();
        if vals.iter().all(|v| v.is_nan()) {
            continue;
        }
        let fit = fit_slope(&eps, &vals.iter().map(|v| v.abs()).collect::<Vec<_>>())
            .map_err(|e| e.context(format!("slope of {metric}")))?;
        let (window, min_slope, informational) = match (cfg.windows.get(metric), rule) {
            (Some(w), _) => (Some(*w), None, false),
            (None, Rule::Window(lo, hi)) => (Some([lo, hi]), None, false),
            (None, Rule::AtLeast(m)) => (None, Some(m), false),
            (None, Rule::Info) => (None, None, true),
        };
        let pass = match (window, min_slope) {
            (Some([lo, hi]), _) => fit.slope >= lo && fit.slope <= hi,
            (None, Some(m)) => fit.slope >= m,
            _ => true,
        };
        fits.push(MetricFit {
            metric: metric.to_string(),
            fit,
            window,
            min_slope,
            informational,
            pass,
        });
    }
    Ok(fits)
}

fn write_outputs(out: &Path, report: &SweepReport, ctx: &Context) -> Result<()> {
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(out.join("report.json"), json + "\n")?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(out.join("sweep.csv"))?);
    writeln!(
        w,
        "epsilon,sup_err_l2,sup_err_h1,proj_dist,residual_n0,residual_n1,runtime_s"
    )?;
    for r in &report.rows {
        let g = |k: &str| {
            r.metrics
                .get(k)
                .map_or("nan".to_string(), |v| format!("{v:.10e}"))
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{:.3}",
            r.eps,
            g("sup_err_l2"),
            g("sup_err_h1"),
            g("proj_dist"),
            g("residual_n0"),
            g("residual_n1"),
            r.runtime_s
        )?;
    }
    let metrics: std::collections::BTreeSet<&String> =
        report.rows.iter().flat_map(|r| r.metrics.keys()).collect();
    for m in metrics {
        let mut f = std::io::BufWriter::new(std::fs::File::create(out.join(format!("{m}.dat")))?);
        writeln!(f, "# epsilon {m}")?;
        for r in &report.rows {
            if let Some(v) = r.metrics.get(m) {
                writeln!(f, "{} {:.10e}", r.eps, v)?;
            }
        }
    }
    ctx.branch.write_csv(&out.join("branch.csv"))?;
    Ok(())
}

/// Runs the experiment and writes `report.json`, `sweep.csv`, one `.dat` file
/// per metric and per-`eps` trajectory summaries into `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<SweepReport> {
    let kind = cfg.kind.name();
    cfg.validate().map_err(|e| e.context(kind))?;
    let out = cfg.output_dir.as_path();
    std::fs::create_dir_all(out)?;
    let ctx = build_context(cfg).map_err(|e| e.context(format!("{kind} setup")))?;
    let mut rows: Vec<EpsRow> = cfg
        .epsilons
        .par_iter()
        .map(|&eps| {
            let start = Instant::now();
            let row = match cfg.kind {
                ExperimentKind::ResidualOrder => run_residual(&ctx, eps),
                ExperimentKind::Bifurcation => run_bifurcation(&ctx, eps, out),
                ExperimentKind::BoundstateTracking => run_boundstate(&ctx, eps, out),
                _ => run_comparison(&ctx, eps, out),
            };
            let mut row = row.map_err(|e| e.context(format!("{kind} at eps = {eps}")))?;
            row.runtime_s = start.elapsed().as_secs_f64();
            Ok(row)
        })
        .collect::<Result<_>>()?;
    for row in rows.iter_mut() {
        row.invariants_ok = row.dt_converged
            && row.residual_guard_ok
            && row.sampling_change.map_or(true, |c| c < SAMPLING_TOLERANCE)
            && row
                .max_tail_mass
                .map_or(true, |m| m <= REFLECTION_TOLERANCE);
    }
    let fits = if cfg.epsilons.len() >= 3 {
        fit_rules(cfg, &rows)?
    } else {
        Vec::new()
    };

    let mut checks = Vec::new();
    if rows.iter().any(|r| r.sampling_change.is_some()) {
        let worst = rows
            .iter()
            .filter_map(|r| r.sampling_change)
            .fold(0.0, f64::max);
        checks.push(Check {
            name: "sampling_density".into(),
            value: worst,
            threshold: SAMPLING_TOLERANCE,
            pass: worst < SAMPLING_TOLERANCE,
        });
        let unsettled = rows.iter().filter(|r| !r.dt_converged).count();
        checks.push(Check {
            name: "dt_refinement".into(),
            value: unsettled as f64,
            threshold: 0.0,
            pass: unsettled == 0,
        });
    }
    match cfg.kind {
        ExperimentKind::PhaseFalsification => {
            let worst = rows
                .iter()
                .map(|r| r.metrics["final_err"])
                .fold(f64::INFINITY, f64::min);
            checks.push(Check {
                name: "falsification_floor".into(),
                value: worst,
                threshold: FALSIFICATION_FLOOR,
                pass: worst >= FALSIFICATION_FLOOR,
            });
        }
        ExperimentKind::ResidualOrder => {
            let bad = rows.iter().filter(|r| !r.residual_guard_ok).count();
            checks.push(Check {
                name: "differencing_guard".into(),
                value: bad as f64,
                threshold: 0.0,
                pass: bad == 0,
            });
        }
        ExperimentKind::Bifurcation => {
            let ratios =
                predictor_ratios(&ctx).map_err(|e| e.context("bifurcation predictor ladder"))?;
            let first = ratios[0].1;
            let worst = ratios.iter().map(|r| r.1 / first).fold(0.0, f64::max);
            checks.push(Check {
                name: "predictor_ratio_growth".into(),
                value: worst,
                threshold: 1.1,
                pass: ratios.iter().all(|r| r.1.is_finite()) && worst <= 1.1,
            });
            let mut f =
                std::io::BufWriter::new(std::fs::File::create(out.join("predictor_ratio.dat"))?);
            writeln!(f, "# e_star_minus_e ratio")?;
            for (d, r) in &ratios {
                writeln!(f, "{d:.10e} {r:.10e}")?;
            }
        }
        _ => {}
    }

    let mut warnings = Vec::new();
    for r in &rows {
        for w in &r.warnings {
            warnings.push(format!("eps = {}: {w}", r.eps));
        }
    }
    let eps0 = rows
        .iter()
        .filter(|r| r.invariants_ok)
        .map(|r| r.eps)
        .fold(None, |a: Option<f64>, e| Some(a.map_or(e, |x| x.max(e))));
    let pass = fits.iter().all(|f| f.informational || f.pass) && checks.iter().all(|c| c.pass);
    let report = SweepReport {
        name: cfg.name(),
        kind: cfg.kind,
        rows,
        fits,
        checks,
        eps0,
        pass,
        warnings,
    };
    write_outputs(out, &report, &ctx)?;
    Ok(report)
}
