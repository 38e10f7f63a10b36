//! Line-oriented run configuration.
//!
//! ```text
//! # comment
//! [model]
//! m = 0.5
//! p = 1
//! dim = 1
//! cutoff = 32
//!
//! [stepper]
//! dt = 1e-3
//! max_time = 10
//!
//! [experiment]
//! kind = simulate
//! eta = 0.1
//! ```
//!
//! Sections are `model`, `stepper`, `experiment` and `output`. Lists are
//! comma-separated. Every key not listed below is rejected.
//!
//! | section | key | default |
//! |---|---|---|
//! | model | `m`, `p`, `dim`, `cutoff` | required |
//! | model | `periods` | `1` per axis |
//! | stepper | `dt` | required |
//! | stepper | `scheme` (`split2`, `rk4`) | `split2` |
//! | stepper | `max_time` | `10` |
//! | stepper | `sample_stride` | `10` |
//! | experiment | `kind` | required |
//! | output | `dir` | `out` |
//! | output | `formats` (`csv`, `json`) | `csv,json` |
//!
//! Experiment keys depend on `kind`:
//!
//! - `simulate`: `eta` (required), optional perturbation keys and `seed`.
//! - `period-sweep`: `etas`.
//! - `first-return`, `energy-check`: `etas`, `seeds`, perturbation keys, and `delta` for first-return.
//! - `stability`: as first-return plus `loops`, `loop_constant`, `rebaseline`,
//!   `distance_constant`, `monitor_stride`.
//! - `floquet`: `etas`, `lambdas`, `floquet_dt`, `with_potential`.
//!
//! Perturbation keys are `amplitude_power` (amplitude `η^power`, default 3),
//! `modes` (default `1,…,8`) and `distribution` (`equipartition`,
//! `single_mode`, `random_direction`). Seeds are required whenever the
//! distribution is random.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use kgorbit_core::experiments::Distribution;
use kgorbit_core::spectra::build_spectrum;
use kgorbit_core::{KgError, ModelParams, Scheme};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StepperSettings {
    pub dt: f64,
    pub scheme: Scheme,
    pub max_time: f64,
    pub sample_stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSettings {
    pub amplitude_power: f64,
    pub modes: Vec<usize>,
    pub distribution: Distribution,
}

impl Default for PerturbationSettings {
    fn default() -> Self {
        Self {
            amplitude_power: 3.0,
            modes: (1..=8).collect(),
            distribution: Distribution::Equipartition,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilitySettings {
    /// Fixed loop count; otherwise `⌈loop_constant·ln(1/η)⌉`.
    pub loops: Option<usize>,
    pub loop_constant: f64,
    pub rebaseline: bool,
    pub distance_constant: Option<f64>,
    pub monitor_stride: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Experiment {
    Simulate {
        eta: f64,
        perturbation: Option<PerturbationSettings>,
        seed: Option<u64>,
    },
    PeriodSweep {
        etas: Vec<f64>,
    },
    FirstReturn {
        etas: Vec<f64>,
        seeds: Vec<u64>,
        perturbation: PerturbationSettings,
        delta: Option<f64>,
    },
    Stability {
        etas: Vec<f64>,
        seeds: Vec<u64>,
        perturbation: PerturbationSettings,
        delta: Option<f64>,
        settings: StabilitySettings,
    },
    Floquet {
        etas: Vec<f64>,
        lambdas: Vec<f64>,
        dt: Option<f64>,
        with_potential: bool,
    },
    EnergyCheck {
        etas: Vec<f64>,
        seeds: Vec<u64>,
        perturbation: PerturbationSettings,
    },
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Simulate { .. } => "simulate",
            Experiment::PeriodSweep { .. } => "period-sweep",
            Experiment::FirstReturn { .. } => "first-return",
            Experiment::Stability { .. } => "stability",
            Experiment::Floquet { .. } => "floquet",
            Experiment::EnergyCheck { .. } => "energy-check",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Formats {
    pub csv: bool,
    pub json: bool,
}

impl Formats {
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut f = Formats { csv: false, json: false };
        for item in split_list(text) {
            match item {
                "csv" => f.csv = true,
                "json" => f.json = true,
                other => return Err(format!("unknown format `{other}`")),
            }
        }
        if !f.csv && !f.json {
            return Err("at least one format is required".into());
        }
        Ok(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSettings {
    pub dir: PathBuf,
    pub formats: Formats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelParams,
    pub stepper: StepperSettings,
    pub experiment: Experiment,
    pub output: OutputSettings,
}

const SECTIONS: [&str; 4] = ["model", "stepper", "experiment", "output"];

#[derive(Debug)]
struct Entry {
    line: usize,
    value: String,
    used: bool,
}

/// Key/value pairs of one section, tracking which keys were consumed.
#[derive(Debug, Default)]
struct Section {
    header_line: usize,
    entries: BTreeMap<String, Entry>,
}

impl Section {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.get_mut(key).map(|e| {
            e.used = true;
            (e.line, e.value.clone())
        })
    }

    fn required(&mut self, key: &str) -> Result<(usize, String)> {
        self.take(key)
            .ok_or_else(|| CliError::parse(self.header_line, key, "missing required key"))
    }

    fn number<T: std::str::FromStr>(&mut self, key: &str, what: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::parse(line, key, format!("expected {what}, got `{v}`"))),
        }
    }

    fn f64(&mut self, key: &str) -> Result<Option<f64>> {
        self.number(key, "a number")
    }

    fn req_f64(&mut self, key: &str) -> Result<f64> {
        let (line, v) = self.required(key)?;
        v.parse()
            .map_err(|_| CliError::parse(line, key, format!("expected a number, got `{v}`")))
    }

    fn req_usize(&mut self, key: &str) -> Result<usize> {
        let (line, v) = self.required(key)?;
        v.parse()
            .map_err(|_| CliError::parse(line, key, format!("expected a non-negative integer, got `{v}`")))
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str, what: &str) -> Result<Option<Vec<T>>> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => split_list(&v)
                .map(|item| {
                    item.parse()
                        .map_err(|_| CliError::parse(line, key, format!("expected a list of {what}, got `{item}`")))
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    fn bool(&mut self, key: &str) -> Result<Option<bool>> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => match v.as_str() {
                "true" => Ok(Some(true)),
                "false" => Ok(Some(false)),
                _ => Err(CliError::parse(line, key, format!("expected true or false, got `{v}`"))),
            },
        }
    }

    fn reject_unused(&self, context: &str) -> Result<()> {
        match self.entries.iter().find(|(_, e)| !e.used) {
            Some((key, e)) => Err(CliError::parse(e.line, key, format!("unknown key {context}"))),
            None => Ok(()),
        }
    }
}

fn split_list(text: &str) -> impl Iterator<Item = &str> {
    text.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn lex(text: &str) -> Result<BTreeMap<&'static str, Section>> {
    let mut sections: BTreeMap<&'static str, Section> = BTreeMap::new();
    let mut current: Option<&'static str> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let name = name.trim();
            let Some(known) = SECTIONS.iter().find(|s| **s == name) else {
                return Err(CliError::parse(line, name, "unknown section"));
            };
            if sections.contains_key(known) {
                return Err(CliError::parse(line, name, "duplicate section"));
            }
            sections.insert(
                known,
                Section {
                    header_line: line,
                    entries: BTreeMap::new(),
                },
            );
            current = Some(known);
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(CliError::parse(line, content, "expected `key = value`"));
        };
        let key = key.trim();
        let Some(section) = current else {
            return Err(CliError::parse(line, key, "key outside of any section"));
        };
        let entries = &mut sections.get_mut(section).expect("section exists").entries;
        if entries.contains_key(key) {
            return Err(CliError::parse(line, key, "duplicate key"));
        }
        entries.insert(
            key.to_string(),
            Entry {
                line,
                value: value.trim().to_string(),
                used: false,
            },
        );
    }
    Ok(sections)
}

fn section(sections: &mut BTreeMap<&'static str, Section>, name: &'static str, required: bool) -> Result<Section> {
    match sections.remove(name) {
        Some(s) => Ok(s),
        None if required => Err(CliError::parse(0, name, "missing section")),
        None => Ok(Section::default()),
    }
}

fn parse_distribution(line: usize, value: &str) -> Result<Distribution> {
    match value {
        "equipartition" => Ok(Distribution::Equipartition),
        "single_mode" => Ok(Distribution::SingleMode),
        "random_direction" => Ok(Distribution::RandomDirection),
        other => Err(CliError::parse(line, "distribution", format!("unknown distribution `{other}`"))),
    }
}

fn distribution_name(d: Distribution) -> &'static str {
    match d {
        Distribution::Equipartition => "equipartition",
        Distribution::SingleMode => "single_mode",
        Distribution::RandomDirection => "random_direction",
    }
}

fn read_perturbation(sec: &mut Section) -> Result<(PerturbationSettings, bool)> {
    let mut p = PerturbationSettings::default();
    let mut any = false;
    if let Some(v) = sec.f64("amplitude_power")? {
        p.amplitude_power = v;
        any = true;
    }
    if let Some(v) = sec.list("modes", "mode indices")? {
        p.modes = v;
        any = true;
    }
    if let Some((line, v)) = sec.take("distribution") {
        p.distribution = parse_distribution(line, &v)?;
        any = true;
    }
    Ok((p, any))
}

fn req_list<T: std::str::FromStr>(sec: &mut Section, key: &str, what: &str) -> Result<Vec<T>> {
    match sec.list(key, what)? {
        Some(v) if !v.is_empty() => Ok(v),
        _ => Err(CliError::parse(sec.header_line, key, "a non-empty list is required")),
    }
}

fn read_experiment(sec: &mut Section) -> Result<Experiment> {
    let (kind_line, kind) = sec.required("kind")?;
    let exp = match kind.as_str() {
        "simulate" => {
            let eta = sec.req_f64("eta")?;
            let (pert, any) = read_perturbation(sec)?;
            let seed = sec.number("seed", "an unsigned integer")?;
            Experiment::Simulate {
                eta,
                perturbation: any.then_some(pert),
                seed,
            }
        }
        "period-sweep" => Experiment::PeriodSweep {
            etas: req_list(sec, "etas", "numbers")?,
        },
        "first-return" => Experiment::FirstReturn {
            etas: req_list(sec, "etas", "numbers")?,
            seeds: sec.list("seeds", "unsigned integers")?.unwrap_or_default(),
            perturbation: read_perturbation(sec)?.0,
            delta: sec.f64("delta")?,
        },
        "stability" => Experiment::Stability {
            etas: req_list(sec, "etas", "numbers")?,
            seeds: sec.list("seeds", "unsigned integers")?.unwrap_or_default(),
            perturbation: read_perturbation(sec)?.0,
            delta: sec.f64("delta")?,
            settings: StabilitySettings {
                loops: sec.number("loops", "a positive integer")?,
                loop_constant: sec.f64("loop_constant")?.unwrap_or(1.0),
                rebaseline: sec.bool("rebaseline")?.unwrap_or(true),
                distance_constant: sec.f64("distance_constant")?,
                monitor_stride: sec.number("monitor_stride", "a positive integer")?.unwrap_or(20),
            },
        },
        "floquet" => Experiment::Floquet {
            etas: req_list(sec, "etas", "numbers")?,
            lambdas: req_list(sec, "lambdas", "numbers")?,
            dt: sec.f64("floquet_dt")?,
            with_potential: sec.bool("with_potential")?.unwrap_or(true),
        },
        "energy-check" => Experiment::EnergyCheck {
            etas: req_list(sec, "etas", "numbers")?,
            seeds: sec.list("seeds", "unsigned integers")?.unwrap_or_default(),
            perturbation: read_perturbation(sec)?.0,
        },
        other => return Err(CliError::parse(kind_line, "kind", format!("unknown experiment `{other}`"))),
    };
    sec.reject_unused(&format!("for experiment `{kind}`"))?;
    Ok(exp)
}

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut sections = lex(text)?;
    let mut model = section(&mut sections, "model", true)?;
    let mut stepper = section(&mut sections, "stepper", true)?;
    let mut experiment = section(&mut sections, "experiment", true)?;
    let mut output = section(&mut sections, "output", false)?;

    let dim = model.req_usize("dim")?;
    let (p_line, p_text) = model.required("p")?;
    let p: u32 = p_text
        .parse()
        .map_err(|_| CliError::parse(p_line, "p", format!("expected a positive integer, got `{p_text}`")))?;
    let params = ModelParams {
        m: model.req_f64("m")?,
        p,
        cutoff: model.req_usize("cutoff")?,
        periods: model.list("periods", "numbers")?.unwrap_or_else(|| vec![1.0; dim]),
        dim,
    };
    model.reject_unused("in [model]")?;

    let scheme = match stepper.take("scheme") {
        None => Scheme::Split2,
        Some((_, v)) if v == "split2" => Scheme::Split2,
        Some((_, v)) if v == "rk4" => Scheme::Rk4,
        Some((line, v)) => return Err(CliError::parse(line, "scheme", format!("unknown scheme `{v}`"))),
    };
    let stepper_settings = StepperSettings {
        dt: stepper.req_f64("dt")?,
        scheme,
        max_time: stepper.f64("max_time")?.unwrap_or(10.0),
        sample_stride: stepper.number("sample_stride", "a positive integer")?.unwrap_or(10),
    };
    stepper.reject_unused("in [stepper]")?;

    let exp = read_experiment(&mut experiment)?;

    let dir = output.take("dir").map(|(_, v)| PathBuf::from(v)).unwrap_or_else(|| PathBuf::from("out"));
    let formats = match output.take("formats") {
        None => Formats { csv: true, json: true },
        Some((line, v)) => Formats::parse(&v).map_err(|e| CliError::parse(line, "formats", e))?,
    };
    output.reject_unused("in [output]")?;

    let cfg = RunConfig {
        model: params,
        stepper: stepper_settings,
        experiment: exp,
        output: OutputSettings { dir, formats },
    };
    validate(&cfg)?;
    Ok(cfg)
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(CliError::validation(key, format!("must be positive, got {v}")))
    }
}

/// Semantic checks: model assumptions, parameter ranges and seed requirements.
pub fn validate(cfg: &RunConfig) -> Result<()> {
    let table = build_spectrum(&cfg.model).map_err(|e| match e {
        KgError::AssumptionViolated(msg) => CliError::validation("model", format!("assumption violated: {msg}")),
        KgError::InvalidParameter(msg) => CliError::validation("model", msg),
        other => CliError::Core(other),
    })?;
    let st = &cfg.stepper;
    positive("dt", st.dt)?;
    positive("max_time", st.max_time)?;
    if st.sample_stride == 0 {
        return Err(CliError::validation("sample_stride", "must be at least 1"));
    }
    let center = cfg.model.center();
    let check_etas = |etas: &[f64]| -> Result<()> {
        for &eta in etas {
            if !(eta > 0.0 && eta < center) {
                return Err(CliError::validation("etas", format!("η must lie in (0, {center}), got {eta}")));
            }
        }
        Ok(())
    };
    let check_perturbation = |p: &PerturbationSettings, seeds: &[u64]| -> Result<()> {
        if p.modes.is_empty() {
            return Err(CliError::validation("modes", "at least one mode is required"));
        }
        if let Some(bad) = p.modes.iter().find(|k| **k >= table.mode_count()) {
            return Err(CliError::validation(
                "modes",
                format!("mode {bad} exceeds the {} available modes", table.mode_count()),
            ));
        }
        if !p.amplitude_power.is_finite() {
            return Err(CliError::validation("amplitude_power", "must be finite"));
        }
        if p.distribution != Distribution::SingleMode && seeds.is_empty() {
            return Err(CliError::validation(
                "seeds",
                "random perturbations need explicit seeds",
            ));
        }
        Ok(())
    };
    match &cfg.experiment {
        Experiment::Simulate { eta, perturbation, seed } => {
            check_etas(&[*eta])?;
            if let Some(p) = perturbation {
                let seeds: Vec<u64> = seed.iter().copied().collect();
                check_perturbation(p, &seeds).map_err(|e| match e {
                    CliError::Validation { key, reason } if key == "seeds" => CliError::Validation {
                        key: "seed".into(),
                        reason,
                    },
                    e => e,
                })?;
            }
        }
        Experiment::PeriodSweep { etas } => check_etas(etas)?,
        Experiment::FirstReturn {
            etas,
            seeds,
            perturbation,
            delta,
        }
        | Experiment::Stability {
            etas,
            seeds,
            perturbation,
            delta,
            ..
        } => {
            check_etas(etas)?;
            check_perturbation(perturbation, seeds)?;
            if let Some(d) = delta {
                if !(*d > 0.0 && *d < center) {
                    return Err(CliError::validation("delta", format!("δ must lie in (0, {center}), got {d}")));
                }
            }
            if let Experiment::Stability { settings, .. } = &cfg.experiment {
                positive("loop_constant", settings.loop_constant)?;
                if settings.loops == Some(0) {
                    return Err(CliError::validation("loops", "must be at least 1"));
                }
                if settings.monitor_stride == 0 {
                    return Err(CliError::validation("monitor_stride", "must be at least 1"));
                }
                if let Some(c) = settings.distance_constant {
                    positive("distance_constant", c)?;
                }
            }
        }
        Experiment::Floquet { etas, lambdas, dt, .. } => {
            check_etas(etas)?;
            for &l in lambdas {
                if l.is_nan() || l <= cfg.model.m {
                    return Err(CliError::validation("lambdas", format!("λ must exceed m, got {l}")));
                }
            }
            if let Some(dt) = dt {
                positive("floquet_dt", *dt)?;
            }
        }
        Experiment::EnergyCheck {
            etas,
            seeds,
            perturbation,
        } => {
            check_etas(etas)?;
            check_perturbation(perturbation, seeds)?;
        }
    }
    Ok(())
}

/// Replaces the configured seeds with a single seed.
pub fn override_seed(cfg: &mut RunConfig, seed: u64) {
    match &mut cfg.experiment {
        Experiment::Simulate { seed: s, .. } => *s = Some(seed),
        Experiment::FirstReturn { seeds, .. }
        | Experiment::Stability { seeds, .. }
        | Experiment::EnergyCheck { seeds, .. } => *seeds = vec![seed],
        Experiment::PeriodSweep { .. } | Experiment::Floquet { .. } => {}
    }
}

fn join<T: std::fmt::Debug>(items: &[T]) -> String {
    items.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")
}

fn write_perturbation(out: &mut String, p: &PerturbationSettings) {
    let _ = writeln!(out, "amplitude_power = {:?}", p.amplitude_power);
    let _ = writeln!(out, "modes = {}", join(&p.modes));
    let _ = writeln!(out, "distribution = {}", distribution_name(p.distribution));
}

/// Canonical text form with every default spelled out.
pub fn serialize_config(cfg: &RunConfig) -> String {
    let mut out = String::new();
    let m = &cfg.model;
    let _ = writeln!(out, "[model]");
    let _ = writeln!(out, "m = {:?}", m.m);
    let _ = writeln!(out, "p = {}", m.p);
    let _ = writeln!(out, "dim = {}", m.dim);
    let _ = writeln!(out, "cutoff = {}", m.cutoff);
    let _ = writeln!(out, "periods = {}", join(&m.periods));

    let s = &cfg.stepper;
    let _ = writeln!(out, "\n[stepper]");
    let _ = writeln!(out, "dt = {:?}", s.dt);
    let _ = writeln!(
        out,
        "scheme = {}",
        match s.scheme {
            Scheme::Split2 => "split2",
            Scheme::Rk4 => "rk4",
        }
    );
    let _ = writeln!(out, "max_time = {:?}", s.max_time);
    let _ = writeln!(out, "sample_stride = {}", s.sample_stride);

    let _ = writeln!(out, "\n[experiment]");
    let _ = writeln!(out, "kind = {}", cfg.experiment.kind());
    match &cfg.experiment {
        Experiment::Simulate { eta, perturbation, seed } => {
            let _ = writeln!(out, "eta = {eta:?}");
            if let Some(p) = perturbation {
                write_perturbation(&mut out, p);
            }
            if let Some(seed) = seed {
                let _ = writeln!(out, "seed = {seed}");
            }
        }
        Experiment::PeriodSweep { etas } => {
            let _ = writeln!(out, "etas = {}", join(etas));
        }
        Experiment::FirstReturn {
            etas,
            seeds,
            perturbation,
            delta,
        } => {
            let _ = writeln!(out, "etas = {}", join(etas));
            if !seeds.is_empty() {
                let _ = writeln!(out, "seeds = {}", join(seeds));
            }
            write_perturbation(&mut out, perturbation);
            if let Some(d) = delta {
                let _ = writeln!(out, "delta = {d:?}");
            }
        }
        Experiment::Stability {
            etas,
            seeds,
            perturbation,
            delta,
            settings,
        } => {
            let _ = writeln!(out, "etas = {}", join(etas));
            if !seeds.is_empty() {
                let _ = writeln!(out, "seeds = {}", join(seeds));
            }
            write_perturbation(&mut out, perturbation);
            if let Some(d) = delta {
                let _ = writeln!(out, "delta = {d:?}");
            }
            if let Some(n) = settings.loops {
                let _ = writeln!(out, "loops = {n}");
            }
            let _ = writeln!(out, "loop_constant = {:?}", settings.loop_constant);
            let _ = writeln!(out, "rebaseline = {}", settings.rebaseline);
            if let Some(c) = settings.distance_constant {
                let _ = writeln!(out, "distance_constant = {c:?}");
            }
            let _ = writeln!(out, "monitor_stride = {}", settings.monitor_stride);
        }
        Experiment::Floquet {
            etas,
            lambdas,
            dt,
            with_potential,
        } => {
            let _ = writeln!(out, "etas = {}", join(etas));
            let _ = writeln!(out, "lambdas = {}", join(lambdas));
            if let Some(dt) = dt {
                let _ = writeln!(out, "floquet_dt = {dt:?}");
            }
            let _ = writeln!(out, "with_potential = {with_potential}");
        }
        Experiment::EnergyCheck {
            etas,
            seeds,
            perturbation,
        } => {
            let _ = writeln!(out, "etas = {}", join(etas));
            if !seeds.is_empty() {
                let _ = writeln!(out, "seeds = {}", join(seeds));
            }
            write_perturbation(&mut out, perturbation);
        }
    }

    let o = &cfg.output;
    let _ = writeln!(out, "\n[output]");
    let _ = writeln!(out, "dir = {}", o.dir.display());
    let formats: Vec<&str> = [(o.formats.csv, "csv"), (o.formats.json, "json")]
        .iter()
        .filter_map(|(on, name)| on.then_some(*name))
        .collect();
    let _ = writeln!(out, "formats = {}", formats.join(","));
    out
}
