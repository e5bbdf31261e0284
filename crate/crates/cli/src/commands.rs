//! Subcommand implementations. Each returns the text to write; nothing here
//! touches stdout or the filesystem except reading fit data.

use std::fmt::Write as _;
use std::path::Path;

use magnon_cavity::dynamics::{
    extract_lifetime, rabi_analysis, rabi_period, simulate, Drive, DrivePulse, PulseShape, TimeGrid,
};
use magnon_cavity::estimation::{
    derived_quantities, fit, init_guess, init_guess_decay, init_guess_field_map, init_guess_lorentzian,
    problem_with_defaults, FitData, FitResult, Model, Param, ParamValues,
};
use magnon_cavity::physics::{coupling_strength, effective_frequency, spin_count, CoupledSystem};
use magnon_cavity::regimes::{classify_rates, classify_with_threshold, LITERATURE_USC_THRESHOLD};
use magnon_cavity::spectra::{
    field_map, group_delay, normal_modes_full, normal_modes_rwa, spectrum, FrequencyGrid,
};
use magnon_cavity::TWO_PI;

use crate::config::{
    linspace, param_unit, DesignSweep, DriveChoice, ExperimentConfig, FitModelChoice, FreqSpec, GSource,
    PulseShapeChoice, TaskConfig,
};
use crate::error::{CliError, Result};
use crate::table::{parse_table, Table};

const MHZ: f64 = TWO_PI * 1e6;
const GHZ: f64 = TWO_PI * 1e9;
const NS: f64 = 1e-9;
const MT: f64 = 1e-3;

/// Text destined for the output file, plus a failure to report after writing.
#[derive(Debug)]
pub struct Output {
    pub text: String,
    pub status: Option<CliError>,
}

impl From<String> for Output {
    fn from(text: String) -> Self {
        Self { text, status: None }
    }
}

/// `key = value` report with leading `#` notes, readable by the config parser.
struct Report {
    section: &'static str,
    notes: Vec<String>,
    lines: Vec<String>,
}

impl Report {
    fn new(section: &'static str) -> Self {
        Self {
            section,
            notes: Vec::new(),
            lines: Vec::new(),
        }
    }

    fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    fn value(&mut self, key: &str, v: f64, unit: &str) {
        if unit == "1" {
            self.lines.push(format!("{key} = {v:.12e}"));
        } else {
            self.lines.push(format!("{key} = {v:.12e} {unit}"));
        }
    }

    fn text(&mut self, key: &str, v: impl std::fmt::Display) {
        self.lines.push(format!("{key} = {v}"));
    }

    fn render(&self) -> String {
        let mut out = String::new();
        for n in &self.notes {
            let _ = writeln!(out, "# {n}");
        }
        let _ = writeln!(out, "[{}]", self.section);
        for l in &self.lines {
            let _ = writeln!(out, "{l}");
        }
        out
    }
}

fn log(verbose: bool, msg: impl FnOnce() -> String) {
    if verbose {
        eprintln!("magcav: {}", msg());
    }
}

fn frequency_grid(cfg: &ExperimentConfig, system: &CoupledSystem) -> Result<FrequencyGrid> {
    let points = cfg.sweep.points;
    let grid = match cfg.sweep.freq {
        Some(FreqSpec::Range { start, stop }) => FrequencyGrid::new(TWO_PI * start, TWO_PI * stop, points)?,
        Some(FreqSpec::Centered { center, span }) => FrequencyGrid::centered(TWO_PI * center, 0.5 * TWO_PI * span, points)?,
        None => {
            let p = system.mode_parameters();
            let half = 2.0 * p.g + 10.0 * p.kappa_a.max(p.kappa_m);
            FrequencyGrid::centered(p.omega_a, half, points)?
        }
    };
    Ok(grid)
}

pub fn design(cfg: &ExperimentConfig, verbose: bool) -> Result<Output> {
    let sys_cfg = cfg.system()?;
    if matches!(sys_cfg.g_source, GSource::Direct(_)) {
        return Err(CliError::Parse(
            "design needs g_source = geometry with cavity_dims and sphere_radius".into(),
        ));
    }
    let system = sys_cfg.build()?;
    let cavity = *system.cavity();
    let magnon = *system.magnon();
    let eta = sys_cfg.eta(&cavity)?.unwrap_or(1.0);
    let report = classify_with_threshold(&system, cfg.task.usc_threshold);
    let (f_eff, spins, radius) = if sys_cfg.sphere_radius == Some(0.0) {
        (0.0, 0.0, 0.0)
    } else {
        (effective_frequency(&cavity, &magnon), spin_count(&magnon), magnon.radius())
    };
    log(verbose, || format!("design: g/2pi = {:.4} MHz", system.g() / MHZ));

    let mut summary = vec![
        format!("g: {:.6} MHz", system.g() / MHZ),
        format!("g/omega: {:.6}", report.g_over_omega),
        format!("f_eff: {f_eff:.6e} Hz"),
        format!("spins: {spins:.6e}"),
        format!("eta: {eta:.6}"),
        format!("cooperativity: {:.6}", report.cooperativity),
        format!("regime: {}", report.regime),
        format!("usc: {} at threshold {}", report.usc, report.usc_threshold),
    ];

    let (values, dims_sweep) = match cfg.task.design_sweep {
        DesignSweep::None => {
            let mut r = Report::new("design");
            r.note("forward design from geometry and spin count");
            r.value("g", system.g() / MHZ, "MHz");
            r.value("g_over_omega", report.g_over_omega, "1");
            r.value("f_eff", f_eff / 1e9, "GHz");
            r.value("spins", spins, "1");
            r.value("eta", eta, "1");
            r.value("mode_volume", cavity.mode_volume() * 1e9, "mm3");
            r.value("sphere_radius", radius / 1e-3, "mm");
            r.value("cooperativity", report.cooperativity, "1");
            r.text("regime", report.regime);
            r.text("usc", report.usc);
            r.value("usc_threshold", report.usc_threshold, "1");
            return Ok(r.render().into());
        }
        DesignSweep::Radius { start, stop, points } => (linspace(start, stop, points), false),
        DesignSweep::Dims { start, stop, points } => (linspace(start, stop, points), true),
    };

    let mut table = if dims_sweep {
        Table::new(&[("scale", "1"), ("freq", "GHz"), ("f_eff", "GHz"), ("g", "MHz"), ("g_over_omega", "1")])
    } else {
        Table::new(&[("radius", "mm"), ("f_eff", "GHz"), ("spins", "1"), ("g", "MHz"), ("g_over_omega", "1")])
    };
    table.comments.append(&mut summary);
    for v in values {
        if dims_sweep {
            let dims = cavity.dims().map(|d| d * v);
            let mut c = magnon_cavity::CavityMode::new(cavity.omega_a() / v, cavity.kappa_a(), cavity.kappa_a1(), dims)?;
            if sys_cfg.mode_volume.is_some() {
                c = c.with_mode_volume(cavity.mode_volume() * v.powi(3))?;
            }
            let g = coupling_strength(&c, &magnon, eta)?;
            table.push(vec![v, c.frequency() / 1e9, effective_frequency(&c, &magnon) / 1e9, g / MHZ, g / c.omega_a()]);
        } else {
            let m = magnon.with_radius(v)?;
            let g = coupling_strength(&cavity, &m, eta)?;
            table.push(vec![
                v / 1e-3,
                effective_frequency(&cavity, &m) / 1e9,
                spin_count(&m),
                g / MHZ,
                g / cavity.omega_a(),
            ]);
        }
    }
    Ok(table.render().into())
}

pub fn spectrum_cmd(cfg: &ExperimentConfig, verbose: bool) -> Result<Output> {
    let system = cfg.system()?.build()?;
    let grid = frequency_grid(cfg, &system)?;
    log(verbose, || format!("spectrum: {} points", grid.len()));
    let spec = spectrum(&system, grid);
    let delay = group_delay(&spec)?;
    let mut table = Table::new(&[("freq", "GHz"), ("r2", "1"), ("phase", "rad"), ("delay", "ns")]);
    table.comment(format!("bias field: {:.9} mT", system.bias_field() / MT));
    for (i, (r, d)) in spec.values.iter().zip(&delay).enumerate() {
        table.push(vec![grid.at(i) / GHZ, r.norm_sqr(), r.arg(), d / NS]);
    }
    Ok(table.render().into())
}

fn fields_or_bias(cfg: &ExperimentConfig, system: &CoupledSystem) -> Vec<f64> {
    cfg.sweep.fields.clone().unwrap_or_else(|| vec![system.bias_field()])
}

pub fn map_cmd(cfg: &ExperimentConfig, verbose: bool) -> Result<Output> {
    let system = cfg.system()?.build()?;
    let fields = cfg
        .sweep
        .fields
        .clone()
        .ok_or_else(|| CliError::Parse("map needs [sweep] fields or field_start/field_stop/field_points".into()))?;
    let grid = frequency_grid(cfg, &system)?;
    log(verbose, || format!("map: {} fields x {} frequencies", fields.len(), grid.len()));
    let map = field_map(&system, &fields, grid)?;
    let mut table = Table::new(&[("B", "mT"), ("freq", "GHz"), ("r2", "1")]);
    for (b, row) in map.fields.iter().zip(&map.power) {
        for (i, p) in row.iter().enumerate() {
            table.push(vec![b / MT, grid.at(i) / GHZ, *p]);
        }
    }
    Ok(table.render().into())
}

fn drive_of(cfg: &ExperimentConfig, system: &CoupledSystem) -> Result<Drive> {
    Ok(match cfg.sweep.drive {
        DriveChoice::Impulse => Drive::Impulse,
        DriveChoice::Pulse { carrier, amplitude, start, stop, shape } => {
            let carrier = carrier.map(|f| TWO_PI * f).unwrap_or(system.cavity().omega_a());
            let shape = match shape {
                PulseShapeChoice::Rectangular => PulseShape::Rectangular,
                PulseShapeChoice::RaisedCosine { edge } => PulseShape::RaisedCosine { edge },
            };
            Drive::Pulse(DrivePulse::new(carrier, amplitude, start, stop, shape)?)
        }
    })
}

fn time_grid(cfg: &ExperimentConfig, command: &str) -> Result<TimeGrid> {
    match (cfg.sweep.t_max, cfg.sweep.dt) {
        (Some(t_max), Some(dt)) => Ok(TimeGrid::decimated(t_max, dt, cfg.output.decimation)?),
        _ => Err(CliError::Parse(format!("{command} needs [sweep] t_max and dt"))),
    }
}

pub fn rabi_cmd(cfg: &ExperimentConfig, verbose: bool) -> Result<Output> {
    let system = cfg.system()?.build()?;
    let grid = time_grid(cfg, "rabi")?;
    let drive = drive_of(cfg, &system)?;
    log(verbose, || format!("rabi: t_max {:.3} ns, dt {:.4} ns", grid.t_max / NS, grid.dt / NS));
    let trace = simulate(&system, &drive, &grid)?;
    let mut table = Table::new(&[("t", "ns"), ("energy", "1"), ("out_power", "1/s")]);
    table.comment(format!("bias field: {:.9} mT", system.bias_field() / MT));
    if let Ok(half) = rabi_period(system.g()) {
        table.comment(format!("pi/g: {:.6} ns", half / NS));
    }
    match rabi_analysis(&trace.t, &trace.energy, cfg.task.analysis_start) {
        Ok(rabi) => {
            table.comment(format!("node period: {:.6} ns", rabi.period / NS));
            table.comment(format!("first node extinction: {:.3} dB", rabi.extinction_db));
        }
        Err(e) => table.comment(format!("node analysis: {e}")),
    }
    let power = trace.output_power();
    for i in 0..trace.len() {
        table.push(vec![trace.t[i] / NS, trace.energy[i], power[i]]);
    }
    Ok(table.render().into())
}

pub fn ringdown_cmd(cfg: &ExperimentConfig, verbose: bool) -> Result<Output> {
    let system = cfg.system()?.build()?;
    let grid = time_grid(cfg, "ringdown")?;
    let drive = drive_of(cfg, &system)?;
    let fields = fields_or_bias(cfg, &system);
    let mut table = Table::new(&[("B", "mT"), ("t", "ns"), ("energy", "1"), ("out_power", "1/s")]);
    let mut rows = Vec::new();
    for &b in &fields {
        log(verbose, || format!("ringdown: B = {:.4} mT", b / MT));
        let trace = simulate(&system.with_bias_field(b)?, &drive, &grid)?;
        if let Some(window) = cfg.task.lifetime_window {
            match extract_lifetime(&trace, window) {
                Ok(fit) => table.comment(format!(
                    "lifetime at {:.6} mT: {:.6} ns +- {:.6} ns{}",
                    b / MT,
                    fit.tau / NS,
                    fit.stderr / NS,
                    if fit.poor_fit { ", poor fit" } else { "" }
                )),
                Err(e) => table.comment(format!("lifetime at {:.6} mT: {e}", b / MT)),
            }
        }
        let power = trace.output_power();
        for i in 0..trace.len() {
            rows.push(vec![b / MT, trace.t[i] / NS, trace.energy[i], power[i]]);
        }
    }
    for r in rows {
        table.push(r);
    }
    Ok(table.render().into())
}

pub fn classify_cmd(cfg: &ExperimentConfig, verbose: bool) -> Result<Output> {
    let system = cfg.system()?.build()?;
    let report = classify_with_threshold(&system, cfg.task.usc_threshold);
    log(verbose, || format!("classify: {}", report.regime));
    let p = system.mode_parameters();
    let mut r = Report::new("classify");
    for n in &report.notes {
        r.note(n.clone());
    }
    r.text("regime", report.regime);
    r.text("usc", report.usc);
    r.value("usc_threshold", report.usc_threshold, "1");
    r.text("usc_literature", report.g_over_omega >= LITERATURE_USC_THRESHOLD);
    r.value("g_over_omega", report.g_over_omega, "1");
    r.value("cooperativity", report.cooperativity, "1");
    r.text("coherent", report.coherent);
    r.value("purcell_factor", report.purcell_factor, "1");
    r.value("g", p.g / MHZ, "MHz");
    r.value("kappa_a", p.kappa_a / MHZ, "MHz");
    r.value("kappa_m", p.kappa_m / MHZ, "MHz");
    let rwa = normal_modes_rwa(&system);
    r.value("omega_plus_rwa", rwa.omega_plus.re / GHZ, "GHz");
    r.value("omega_minus_rwa", rwa.omega_minus.re / GHZ, "GHz");
    match normal_modes_full(&system) {
        Ok(full) => {
            r.note("counter-rotating polariton frequencies are model-dependent: full dipole coupling, no diamagnetic term");
            r.value("omega_plus_full", full.omega_plus.re / GHZ, "GHz");
            r.value("omega_minus_full", full.omega_minus.re / GHZ, "GHz");
        }
        Err(e) => r.note(format!("counter-rotating polaritons unavailable: {e}")),
    }
    Ok(r.render().into())
}

/// Reads the data file and picks model and columns.
fn load_fit_data(cfg: &ExperimentConfig, data_path: Option<&Path>) -> Result<(Model, FitData)> {
    let path = data_path
        .map(Path::to_path_buf)
        .or_else(|| cfg.task.data.clone())
        .ok_or_else(|| CliError::Usage("fit needs a data file: --data PATH or [task] data".into()))?;
    let source = path.display().to_string();
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Parse(format!("{source}: cannot read: {e}")))?;
    let table = parse_table(&text, &source).map_err(CliError::Parse)?;

    let freq_col = table.find(&["freq", "f", "frequency"]);
    let field_col = table.find(&["B", "field"]);
    let time_col = table.find(&["t", "time"]);
    let model = match cfg.task.model {
        FitModelChoice::Spectrum => Model::Spectrum,
        FitModelChoice::Map => Model::FieldMap,
        FitModelChoice::Decay => Model::Decay,
        FitModelChoice::Lorentzian => Model::Lorentzian,
        FitModelChoice::Auto if field_col.is_some() && freq_col.is_some() => Model::FieldMap,
        FitModelChoice::Auto if time_col.is_some() => Model::Decay,
        FitModelChoice::Auto => Model::Spectrum,
    };

    let scaled = |idx: usize, allowed: &[(&str, f64)]| -> Result<Vec<f64>> {
        let col = &table.columns[idx];
        let factor = allowed
            .iter()
            .find(|(u, _)| *u == col.unit)
            .map(|(_, f)| *f)
            .ok_or_else(|| {
                let units: Vec<&str> = allowed.iter().map(|(u, _)| *u).collect();
                CliError::Parse(format!(
                    "{source}: column `{}` has unit `{}`, expected one of {}",
                    col.name,
                    col.unit,
                    units.join(", ")
                ))
            })?;
        Ok(table.column(idx).into_iter().map(|v| v * factor).collect())
    };
    let freq_units = [("GHz", GHZ), ("MHz", MHZ), ("kHz", TWO_PI * 1e3), ("Hz", TWO_PI)];
    let missing = |what: &str| CliError::Parse(format!("{source}: no {what} column"));
    let positional = |k: usize| if table.columns.len() > k { Some(k) } else { None };

    let data = match model {
        Model::Decay => {
            let t = time_col.or(positional(0)).ok_or_else(|| missing("time"))?;
            let e = table.find(&["energy", "E"]).or(positional(1)).ok_or_else(|| missing("energy"))?;
            let mut times = scaled(t, &[("ns", NS), ("us", 1e-6), ("s", 1.0)])?;
            let mut energy = table.column(e);
            if let Some((t0, t1)) = cfg.task.window {
                let keep: Vec<bool> = times.iter().map(|&x| x >= t0 && x <= t1).collect();
                times = times.iter().zip(&keep).filter(|(_, &k)| k).map(|(v, _)| *v).collect();
                energy = energy.iter().zip(&keep).filter(|(_, &k)| k).map(|(v, _)| *v).collect();
            }
            FitData::decay(times, energy)?
        }
        Model::FieldMap => {
            let b = field_col.ok_or_else(|| missing("B"))?;
            let f = freq_col.ok_or_else(|| missing("freq"))?;
            let y = table.find(&["r2", "power"]).or(positional(2)).ok_or_else(|| missing("r2"))?;
            FitData::map(scaled(b, &[("mT", MT), ("T", 1.0)])?, scaled(f, &freq_units)?, table.column(y))?
        }
        Model::Spectrum | Model::Lorentzian => {
            let f = freq_col.or(positional(0)).ok_or_else(|| missing("freq"))?;
            let y = table.find(&["r2", "power"]).or(positional(1)).ok_or_else(|| missing("r2"))?;
            FitData::power(scaled(f, &freq_units)?, table.column(y))?
        }
    };
    Ok((model, data))
}

fn run_fit(model: Model, data: &FitData, init: &ParamValues, task: &TaskConfig) -> Result<FitResult> {
    let problem = problem_with_defaults(model, data.clone(), init, &task.fix)?.with_max_iterations(task.max_iterations);
    Ok(fit(&problem, init)?)
}

pub fn fit_cmd(cfg: &ExperimentConfig, data_path: Option<&Path>, verbose: bool) -> Result<Output> {
    let (model, data) = load_fit_data(cfg, data_path)?;
    log(verbose, || format!("fit: {} points, model {:?}", data.len(), model));
    let mut init = match model {
        Model::Spectrum => init_guess(&data)?,
        Model::FieldMap => init_guess_field_map(&data)?,
        Model::Decay => init_guess_decay(&data)?,
        Model::Lorentzian => init_guess_lorentzian(&data)?,
    };
    for (p, v) in &cfg.task.init {
        if !model.params().contains(p) {
            return Err(CliError::Parse(format!("init_{p} is not a parameter of this model")));
        }
        init.insert(*p, *v);
    }
    for p in &cfg.task.fix {
        if !model.params().contains(p) {
            return Err(CliError::Parse(format!("fix: `{p}` is not a parameter of this model")));
        }
    }

    // A single resolved dip seeds g = 0, which a log-scaled coupling cannot
    // start from; try a few couplings instead and keep the best.
    let needs_starts = model.params().contains(&Param::G)
        && init.get(&Param::G).is_some_and(|g| *g <= 0.0)
        && !cfg.task.fix.contains(&Param::G);
    let result = if needs_starts {
        let ka = init[&Param::KappaA];
        let mut best: Option<FitResult> = None;
        for factor in [0.1, 0.3, 1.0, 3.0] {
            let mut start = init.clone();
            start.insert(Param::G, factor * ka);
            log(verbose, || format!("fit: start with g/2pi = {:.4} MHz", factor * ka / MHZ));
            if let Ok(r) = run_fit(model, &data, &start, &cfg.task) {
                let better = best.as_ref().is_none_or(|b| {
                    (r.converged, -r.residual_norm) > (b.converged, -b.residual_norm)
                });
                if better {
                    best = Some(r);
                }
            }
        }
        best.ok_or_else(|| CliError::Numeric("every start point failed".into()))?
    } else {
        run_fit(model, &data, &init, &cfg.task)?
    };
    log(verbose, || format!("fit: {} iterations, {:?}", result.iterations, result.termination));

    let mut r = Report::new("fit");
    let model_name = match model {
        Model::Spectrum => "spectrum",
        Model::FieldMap => "map",
        Model::Decay => "decay",
        Model::Lorentzian => "lorentzian",
    };
    r.note(format!("least-squares fit of {} points", data.len()));
    if !cfg.task.fix.is_empty() {
        let names: Vec<&str> = cfg.task.fix.iter().map(|p| p.name()).collect();
        r.note(format!("fixed: {}", names.join(", ")));
    }
    if result.singular_jacobian {
        r.note("some parameter combinations are not constrained by the data; their errors are infinite");
    }
    r.text("model", model_name);
    r.text("converged", result.converged);
    r.text("termination", format!("{:?}", result.termination).to_lowercase());
    r.text("iterations", result.iterations);
    r.value("residual_norm", result.residual_norm, "1");
    for &p in model.params() {
        let (unit, _, factor) = param_unit(p);
        let v = result.get(p).unwrap_or(f64::NAN);
        r.value(p.name(), v / factor, unit);
        match result.error(p) {
            Some(e) => r.value(&format!("{}_stderr", p.name()), e / factor, unit),
            None => r.text(&format!("{}_stderr", p.name()), "fixed"),
        }
    }
    if matches!(model, Model::Spectrum | Model::FieldMap) {
        let d = derived_quantities(&result)?;
        let (g, ka, km) = (result.params[&Param::G], result.params[&Param::KappaA], result.params[&Param::KappaM]);
        r.value("cooperativity", d.cooperativity, "1");
        r.value("purcell_factor", d.purcell_factor, "1");
        r.value("splitting", d.splitting / MHZ, "MHz");
        match d.rabi_period {
            Some(t) => r.value("rabi_period", t / NS, "ns"),
            None => r.text("rabi_period", "none"),
        }
        r.text("regime", classify_rates(g, ka, km).0);
    }

    let status = (!result.converged).then(|| {
        CliError::NotConverged(format!(
            "stopped by {:?} after {} iterations",
            result.termination, result.iterations
        ))
    });
    Ok(Output {
        text: r.render(),
        status,
    })
}
