//! Executes a [`RunConfig`] and writes its artifacts.

use std::path::{Path, PathBuf};

use kgorbit_core::experiments::{
    default_loop_budget, energy_deviation, period_scaling_sweep, Distribution, FirstReturn, StabilityReport,
};
use kgorbit_core::stationary::{default_band, delta_band};
use kgorbit_core::{
    evolve, floquet, linear_fit, perturb_near_k, power_law_fit, run_first_return, run_many_loops, sample_orbit,
    DeltaBand, FloquetConfig, LinearFit, LoopOptions, Model, Monodromy, PerturbationSpec, PlanarState, State,
    StepperConfig,
};
use rayon::prelude::*;
use rayon::ThreadPool;
use serde::Serialize;
use serde_json::json;

use crate::config::{Experiment, PerturbationSettings, RunConfig, StabilitySettings};
use crate::error::{CliError, Result};
use crate::output::{write_csv, write_json, Cell, CsvTable, SCHEMA_VERSION};

/// Window in which a fitted return-distance exponent is considered regular.
pub const EXPONENT_WINDOW: (f64, f64) = (1.8, 2.6);

#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
    /// Verdicts that ran to completion but flagged a property.
    pub anomalies: Vec<String>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.anomalies.is_empty() {
            0
        } else {
            2
        }
    }
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    model: Model,
    pool: ThreadPool,
    outcome: RunOutcome,
}

impl Ctx<'_> {
    fn dir(&self) -> &Path {
        &self.cfg.output.dir
    }

    fn csv(&mut self, name: &str, table: &CsvTable) -> Result<()> {
        if self.cfg.output.formats.csv {
            let path = write_csv(&self.dir().join(name), table)?;
            self.outcome.files.push(path);
        }
        Ok(())
    }

    fn json(&mut self, name: &str, value: &serde_json::Value) -> Result<()> {
        if self.cfg.output.formats.json {
            let path = write_json(&self.dir().join(name), value)?;
            self.outcome.files.push(path);
        }
        Ok(())
    }

    fn stepper(&self) -> StepperConfig {
        let s = &self.cfg.stepper;
        StepperConfig {
            dt: s.dt,
            scheme: s.scheme,
            max_time: s.max_time,
            sample_stride: s.sample_stride,
            section: None,
        }
    }

    fn band(&self, delta: Option<f64>) -> Result<DeltaBand> {
        Ok(match delta {
            Some(d) => delta_band(d, self.model.params())?,
            None => default_band(self.model.params()),
        })
    }

    /// Runs `f` over `tasks` on the worker pool, keeping task order.
    fn parallel<T, R, F>(&self, tasks: &[T], f: F) -> Result<Vec<R>>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> Result<R> + Sync + Send,
    {
        self.pool.install(|| tasks.par_iter().map(&f).collect())
    }

    fn flag(&mut self, msg: String) {
        self.outcome.anomalies.push(msg);
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
struct Member {
    index: usize,
    eta: f64,
    seed: u64,
}

fn members(etas: &[f64], seeds: &[u64], p: &PerturbationSettings) -> Vec<Member> {
    let seeds: Vec<u64> = if seeds.is_empty() && p.distribution == Distribution::SingleMode {
        vec![0]
    } else {
        seeds.to_vec()
    };
    etas.iter()
        .flat_map(|eta| seeds.iter().map(move |seed| (*eta, *seed)))
        .enumerate()
        .map(|(index, (eta, seed))| Member { index, eta, seed })
        .collect()
}

fn perturbation(p: &PerturbationSettings, eta: f64, seed: u64) -> PerturbationSpec {
    PerturbationSpec {
        amplitude: eta.powf(p.amplitude_power),
        mode_set: p.modes.clone(),
        distribution: p.distribution,
        seed,
    }
}

fn initial_state(model: &Model, p: &PerturbationSettings, m: &Member) -> Result<State> {
    Ok(perturb_near_k(model, m.eta, PlanarState::new(m.eta, 0.0), &perturbation(p, m.eta, m.seed))?)
}

/// Writes a per-member report to `runs/`.
fn write_member<T: Serialize>(dir: &Path, json_on: bool, kind: &str, m: &Member, value: &T) -> Result<()> {
    if json_on {
        let rec = json!({
            "schema_version": SCHEMA_VERSION,
            "experiment": kind,
            "member": m,
            "result": value,
        });
        write_json(&dir.join("runs").join(format!("{kind}-{:04}.json", m.index)), &rec)?;
    }
    Ok(())
}

fn fit_json(f: &LinearFit) -> serde_json::Value {
    json!({"slope": f.slope, "intercept": f.intercept, "r_squared": f.r_squared})
}

/// Executes the configured experiment with `workers` threads.
pub fn run(cfg: &RunConfig, workers: usize) -> Result<RunOutcome> {
    let model = Model::new(cfg.model.clone())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::validation("workers", e.to_string()))?;
    let mut ctx = Ctx {
        cfg,
        model,
        pool,
        outcome: RunOutcome::default(),
    };
    crate::output::ensure_dir(ctx.dir())?;
    match &cfg.experiment {
        Experiment::Simulate { eta, perturbation, seed } => simulate(&mut ctx, *eta, perturbation.as_ref(), *seed)?,
        Experiment::PeriodSweep { etas } => period_sweep(&mut ctx, etas)?,
        Experiment::FirstReturn {
            etas,
            seeds,
            perturbation,
            delta,
        } => first_return(&mut ctx, etas, seeds, perturbation, *delta)?,
        Experiment::Stability {
            etas,
            seeds,
            perturbation,
            delta,
            settings,
        } => stability(&mut ctx, etas, seeds, perturbation, *delta, settings)?,
        Experiment::Floquet {
            etas,
            lambdas,
            dt,
            with_potential,
        } => floquet_sweep(&mut ctx, etas, lambdas, *dt, *with_potential)?,
        Experiment::EnergyCheck {
            etas,
            seeds,
            perturbation,
        } => energy_check(&mut ctx, etas, seeds, perturbation)?,
    }
    Ok(ctx.outcome)
}

fn simulate(ctx: &mut Ctx<'_>, eta: f64, pert: Option<&PerturbationSettings>, seed: Option<u64>) -> Result<()> {
    let s0 = match pert {
        Some(p) => initial_state(
            &ctx.model,
            p,
            &Member {
                index: 0,
                eta,
                seed: seed.unwrap_or(0),
            },
        )?,
        None => State::planar(ctx.model.mode_count(), eta, 0.0),
    };
    let traj = evolve(&ctx.model, &s0, &ctx.stepper())?;
    let mut table = CsvTable::new(&["t", "a0", "b0", "H", "J", "I", "r"]);
    for (s, e) in traj.states.iter().zip(&traj.energy_series) {
        table.push(vec![s.t.into(), s.a[0].into(), s.b[0].into(), e.h.into(), e.j.into(), e.i.into(), e.r.into()]);
    }
    let h0 = traj.energy_series[0].h;
    let dev: Vec<f64> = traj.energy_series.iter().map(|e| e.h - h0).collect();
    let h_drift = dev.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let slope = linear_fit(&traj.times, &dev).map(|f| f.slope);
    let max_j = traj.energy_series.iter().map(|e| e.j).fold(0.0, f64::max);
    let max_off = traj.states.iter().map(|s| s.off_plane_norm_sq()).fold(0.0, f64::max);
    ctx.csv("simulate.csv", &table)?;
    ctx.json(
        "summary.json",
        &json!({
            "schema_version": SCHEMA_VERSION,
            "experiment": "simulate",
            "eta": eta,
            "samples": traj.times.len(),
            "H0": h0,
            "H_drift": h_drift,
            "H_drift_slope": slope,
            "max_J": max_j,
            "max_off_plane": max_off,
            "anomalies": [],
        }),
    )
}

fn period_sweep(ctx: &mut Ctx<'_>, etas: &[f64]) -> Result<()> {
    let params = ctx.model.params().clone();
    let sweep = period_scaling_sweep(etas, &params)?;
    let mut table = CsvTable::new(&["eta", "T"]);
    for (e, t) in sweep.etas.iter().zip(&sweep.periods) {
        table.push(vec![(*e).into(), (*t).into()]);
    }
    let expected = 2.0 / params.m;
    if sweep.fit.r_squared < 0.999 {
        ctx.flag(format!("log-law fit R² = {} below 0.999", sweep.fit.r_squared));
    }
    if sweep.fit.slope <= 0.0 {
        ctx.flag(format!("non-positive period slope A = {}", sweep.fit.slope));
    }
    ctx.csv("periods.csv", &table)?;
    let anomalies = ctx.outcome.anomalies.clone();
    ctx.json(
        "summary.json",
        &json!({
            "schema_version": SCHEMA_VERSION,
            "experiment": "period-sweep",
            "A": sweep.fit.slope,
            "B": sweep.fit.intercept,
            "R2": sweep.fit.r_squared,
            "saddle_rate_A": expected,
            "A_relative_to_saddle_rate": (sweep.fit.slope - expected) / expected,
            "anomalies": anomalies,
        }),
    )
}

fn first_return(
    ctx: &mut Ctx<'_>,
    etas: &[f64],
    seeds: &[u64],
    pert: &PerturbationSettings,
    delta: Option<f64>,
) -> Result<()> {
    let band = ctx.band(delta)?;
    let cfg = ctx.stepper();
    let tasks = members(etas, seeds, pert);
    let dir = ctx.dir().to_path_buf();
    let json_on = ctx.cfg.output.formats.json;
    let model = &ctx.model;
    let results: Vec<FirstReturn> = ctx.parallel(&tasks, |m| {
        let s0 = initial_state(model, pert, m)?;
        let fr = run_first_return(model, &s0, m.eta, &band, &cfg)?;
        write_member(&dir, json_on, "first-return", m, &fr)?;
        Ok(fr)
    })?;

    let mut table = CsvTable::new(&[
        "eta",
        "seed",
        "return_time",
        "reference_period",
        "return_distance",
        "planar_return_distance",
        "j_initial",
        "j_at_return",
        "within_log_bounds",
    ]);
    for (m, r) in tasks.iter().zip(&results) {
        table.push(vec![
            m.eta.into(),
            m.seed.into(),
            r.return_time.into(),
            r.reference_period.into(),
            r.return_distance.into(),
            r.planar_return_distance.into(),
            r.j_initial.into(),
            r.j_at_return.into(),
            r.within_log_bounds.into(),
        ]);
    }
    let x: Vec<f64> = results.iter().map(|r| r.eta).collect();
    let y: Vec<f64> = results.iter().map(|r| r.return_distance).collect();
    let fit = power_law_fit(&x, &y);
    if let Some(f) = &fit {
        if !(EXPONENT_WINDOW.0..=EXPONENT_WINDOW.1).contains(&f.slope) {
            ctx.flag(format!(
                "return-distance exponent {:.4} outside [{}, {}]",
                f.slope, EXPONENT_WINDOW.0, EXPONENT_WINDOW.1
            ));
        }
    }
    if let Some(r) = results.iter().find(|r| !r.within_log_bounds) {
        ctx.flag(format!("return time {} outside the logarithmic bounds at η = {}", r.return_time, r.eta));
    }
    let c = results.iter().map(|r| r.return_distance / (r.eta * r.eta)).fold(0.0, f64::max);
    let two_k = results
        .iter()
        .filter(|r| r.j_initial > 0.0)
        .map(|r| r.j_at_return / r.j_initial)
        .fold(0.0, f64::max);
    ctx.csv("first_return.csv", &table)?;
    let anomalies = ctx.outcome.anomalies.clone();
    ctx.json(
        "summary.json",
        &json!({
            "schema_version": SCHEMA_VERSION,
            "experiment": "first-return",
            "members": tasks,
            "returns": results,
            "exponent_fit": fit.as_ref().map(fit_json),
            "fitted_distance_constant": c,
            "max_j_growth": two_k,
            "anomalies": anomalies,
        }),
    )
}

fn stability(
    ctx: &mut Ctx<'_>,
    etas: &[f64],
    seeds: &[u64],
    pert: &PerturbationSettings,
    delta: Option<f64>,
    settings: &StabilitySettings,
) -> Result<()> {
    let band = ctx.band(delta)?;
    let cfg = ctx.stepper();
    let tasks = members(etas, seeds, pert);
    let dir = ctx.dir().to_path_buf();
    let json_on = ctx.cfg.output.formats.json;
    let model = &ctx.model;
    let opts = LoopOptions {
        rebaseline: settings.rebaseline,
        distance_constant: settings.distance_constant,
        monitor_stride: settings.monitor_stride,
    };
    let reports: Vec<StabilityReport> = ctx.parallel(&tasks, |m| {
        let s0 = initial_state(model, pert, m)?;
        let budget = settings
            .loops
            .unwrap_or_else(|| default_loop_budget(m.eta, settings.loop_constant));
        let rep = run_many_loops(model, &s0, m.eta, &band, budget, &cfg, &opts)?;
        write_member(&dir, json_on, "stability", m, &rep)?;
        Ok(rep)
    })?;

    let mut table = CsvTable::new(&[
        "eta",
        "seed",
        "loop_index",
        "return_time",
        "loop_time",
        "return_distance",
        "j_at_start",
        "j_at_return",
        "eta_baseline",
        "max_dist_to_k",
        "max_j",
    ]);
    for (m, rep) in tasks.iter().zip(&reports) {
        for r in &rep.loop_records {
            table.push(vec![
                m.eta.into(),
                m.seed.into(),
                r.loop_index.into(),
                r.return_time.into(),
                r.loop_time.into(),
                r.return_distance.into(),
                r.j_at_start.into(),
                r.j_at_return.into(),
                r.eta_baseline.into(),
                r.max_dist_to_k.into(),
                r.max_j.into(),
            ]);
        }
        if !rep.j_within_regime {
            ctx.flag(format!("J exceeded η⁵ (η = {}, seed {})", m.eta, m.seed));
        }
        if rep.distance_within_bound == Some(false) {
            ctx.flag(format!("distance bound violated (η = {}, seed {})", m.eta, m.seed));
        }
        if !rep.confinement_held {
            ctx.flag(format!("a₀ dropped below η/2 (η = {}, seed {})", m.eta, m.seed));
        }
    }
    let per_eta: Vec<serde_json::Value> = etas
        .iter()
        .map(|eta| {
            let cs: Vec<f64> = tasks
                .iter()
                .zip(&reports)
                .filter(|(m, _)| m.eta == *eta)
                .map(|(_, r)| r.empirical_c)
                .collect();
            let lo = cs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = cs.iter().copied().fold(0.0, f64::max);
            json!({"eta": eta, "empirical_c": cs, "seed_spread": hi / lo})
        })
        .collect();
    ctx.csv("loops.csv", &table)?;
    let anomalies = ctx.outcome.anomalies.clone();
    ctx.json(
        "summary.json",
        &json!({
            "schema_version": SCHEMA_VERSION,
            "experiment": "stability",
            "members": tasks,
            "reports": reports,
            "constants": per_eta,
            "anomalies": anomalies,
        }),
    )
}

fn floquet_sweep(ctx: &mut Ctx<'_>, etas: &[f64], lambdas: &[f64], dt: Option<f64>, with_potential: bool) -> Result<()> {
    let params = ctx.model.params().clone();
    let fcfg = FloquetConfig {
        dt: dt.unwrap_or(ctx.cfg.stepper.dt),
        with_potential,
    };
    let tasks: Vec<(f64, f64)> = etas
        .iter()
        .flat_map(|e| lambdas.iter().map(move |l| (*e, *l)))
        .collect();
    let results: Vec<Monodromy> = ctx.parallel(&tasks, |(eta, lambda)| {
        let orbit = sample_orbit(*eta, 64, &params)?;
        Ok(floquet(&orbit, *lambda, &params, &fcfg)?)
    })?;
    let mut table = CsvTable::new(&["eta", "lambda", "trace", "det", "class", "mu1_re", "mu1_im", "mu2_re", "mu2_im"]);
    let mut records = Vec::new();
    for ((eta, lambda), mono) in tasks.iter().zip(&results) {
        let class = serde_json::to_value(mono.class).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        table.push(vec![
            (*eta).into(),
            (*lambda).into(),
            mono.trace.into(),
            mono.det.into(),
            Cell::Text(class),
            mono.multipliers[0].re.into(),
            mono.multipliers[0].im.into(),
            mono.multipliers[1].re.into(),
            mono.multipliers[1].im.into(),
        ]);
        if (mono.det - 1.0).abs() > 1e-8 {
            ctx.flag(format!("|det - 1| = {:.3e} at η = {eta}, λ = {lambda}", (mono.det - 1.0).abs()));
        }
        records.push(json!({"eta": eta, "lambda": lambda, "monodromy": mono}));
    }
    ctx.csv("floquet.csv", &table)?;
    let anomalies = ctx.outcome.anomalies.clone();
    ctx.json(
        "summary.json",
        &json!({
            "schema_version": SCHEMA_VERSION,
            "experiment": "floquet",
            "dt": fcfg.dt,
            "with_potential": with_potential,
            "results": records,
            "anomalies": anomalies,
        }),
    )
}

fn energy_check(ctx: &mut Ctx<'_>, etas: &[f64], seeds: &[u64], pert: &PerturbationSettings) -> Result<()> {
    let tasks = members(etas, seeds, pert);
    let model = &ctx.model;
    let devs: Vec<f64> = ctx.parallel(&tasks, |m| Ok(energy_deviation(model, &initial_state(model, pert, m)?, m.eta)?))?;
    let mut table = CsvTable::new(&["eta", "seed", "deviation"]);
    for (m, d) in tasks.iter().zip(&devs) {
        table.push(vec![m.eta.into(), m.seed.into(), (*d).into()]);
    }
    let x: Vec<f64> = tasks.iter().map(|m| m.eta).collect();
    let fit = power_law_fit(&x, &devs);
    if let Some(f) = &fit {
        if f.slope < 3.0 {
            ctx.flag(format!("energy deviation exponent {:.4} below 3", f.slope));
        }
    }
    ctx.csv("energy.csv", &table)?;
    let anomalies = ctx.outcome.anomalies.clone();
    ctx.json(
        "summary.json",
        &json!({
            "schema_version": SCHEMA_VERSION,
            "experiment": "energy-check",
            "members": tasks,
            "deviations": devs,
            "exponent_fit": fit.as_ref().map(fit_json),
            "anomalies": anomalies,
        }),
    )
}
