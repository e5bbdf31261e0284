//! Typed experiment configuration.
//!
//! Four sections: `[system]`, `[sweep]`, `[task]`, `[output]`. Values carry
//! interface units (GHz, MHz, mT, mm, ns, ...). Rates are given as ordinary
//! frequencies, `kappa/2π`, and converted to angular units on use. Unknown
//! sections and keys are rejected with their line number.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use magnon_cavity::estimation::{Param, ParamValues, MAX_ITERATIONS};
use magnon_cavity::physics::{
    coupling_strength, overlap_eta, CavityMode, CoupledSystem, MagnonMode, SpherePosition,
};
use magnon_cavity::regimes::DEFAULT_USC_THRESHOLD;
use magnon_cavity::TWO_PI;

use crate::error::{CliError, Result};
use crate::ini::{self, Section};
use crate::units::{parse_list, parse_quantity, Dimension};

const SYSTEM_KEYS: &[&str] = &[
    "cavity_frequency",
    "kappa_a",
    "kappa_a1",
    "kappa_m",
    "g_source",
    "g",
    "cavity_dims",
    "mode_volume",
    "sphere_radius",
    "sphere_position",
    "eta",
    "gamma",
    "magnon_offset",
    "spin_density",
    "spin",
    "bias_field",
];
const SWEEP_KEYS: &[&str] = &[
    "freq_start",
    "freq_stop",
    "freq_center",
    "freq_span",
    "points",
    "fields",
    "field_start",
    "field_stop",
    "field_points",
    "t_max",
    "dt",
    "drive",
    "carrier",
    "amplitude",
    "pulse_start",
    "pulse_stop",
    "pulse_shape",
    "pulse_edge",
];
const TASK_KEYS: &[&str] = &[
    "design_sweep",
    "sweep_start",
    "sweep_stop",
    "sweep_points",
    "data",
    "model",
    "fix",
    "window_start",
    "window_stop",
    "lifetime_start",
    "lifetime_stop",
    "analysis_start",
    "usc_threshold",
    "max_iterations",
];
const OUTPUT_KEYS: &[&str] = &["path", "decimation"];

/// Interface unit of each fit parameter and its factor to internal SI.
pub fn param_unit(param: Param) -> (&'static str, Dimension, f64) {
    match param {
        Param::G | Param::KappaA | Param::KappaA1 | Param::KappaM | Param::Width | Param::OmegaM0 => {
            ("MHz", Dimension::Frequency, TWO_PI * 1e6)
        }
        Param::OmegaA | Param::OmegaM | Param::Center => ("GHz", Dimension::Frequency, TWO_PI * 1e9),
        Param::Gamma => ("GHz/T", Dimension::Gyromagnetic, TWO_PI * 1e9),
        Param::Tau => ("ns", Dimension::Time, 1e-9),
        Param::Amplitude | Param::Baseline | Param::Depth => ("1", Dimension::Dimensionless, 1.0),
    }
}

/// How the coupling strength is obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum GSource {
    /// `g/2π` in Hz.
    Direct(f64),
    Geometry(Overlap),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Overlap {
    Eta(f64),
    /// Sphere displacement from the field maximum, metres.
    Position(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BiasField {
    Resonance,
    Tesla(f64),
}

/// `[system]`; frequencies and rates in Hz (not yet multiplied by 2π).
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub cavity_frequency: f64,
    pub kappa_a: f64,
    pub kappa_a1: f64,
    pub kappa_m: f64,
    pub g_source: GSource,
    pub cavity_dims: Option<[f64; 3]>,
    pub mode_volume: Option<f64>,
    pub sphere_radius: Option<f64>,
    /// Hz per tesla.
    pub gamma: f64,
    pub magnon_offset: f64,
    pub spin_density: Option<f64>,
    pub spin: Option<f64>,
    pub bias_field: BiasField,
}

/// Box used when the coupling is given directly and no geometry is needed.
const PLACEHOLDER_DIMS: [f64; 3] = [1e-2, 1e-2, 1e-2];
const PLACEHOLDER_RADIUS: f64 = 0.5e-3;

impl SystemConfig {
    pub fn cavity(&self) -> Result<CavityMode> {
        let dims = self.cavity_dims.unwrap_or(PLACEHOLDER_DIMS);
        let cavity = CavityMode::new(
            TWO_PI * self.cavity_frequency,
            TWO_PI * self.kappa_a,
            TWO_PI * self.kappa_a1,
            dims,
        )?;
        Ok(match self.mode_volume {
            Some(v) => cavity.with_mode_volume(v)?,
            None => cavity,
        })
    }

    pub fn magnon(&self) -> Result<MagnonMode> {
        // a zero-size sphere keeps its line shape but carries no spins
        let radius = self.sphere_radius.filter(|r| *r > 0.0).unwrap_or(PLACEHOLDER_RADIUS);
        let mut magnon = MagnonMode::yig(radius, TWO_PI * self.kappa_m)?
            .with_gamma(TWO_PI * self.gamma)?
            .with_offset(TWO_PI * self.magnon_offset)?;
        if let Some(rho) = self.spin_density {
            magnon = magnon.with_spin_density(rho)?;
        }
        if let Some(s) = self.spin {
            magnon = magnon.with_spin(s)?;
        }
        Ok(magnon)
    }

    /// Overlap coefficient for geometry-sourced configs.
    pub fn eta(&self, cavity: &CavityMode) -> Result<Option<f64>> {
        match self.g_source {
            GSource::Direct(_) => Ok(None),
            GSource::Geometry(Overlap::Eta(eta)) => Ok(Some(eta)),
            GSource::Geometry(Overlap::Position(x)) => {
                Ok(Some(overlap_eta(SpherePosition::new(x, cavity)?, cavity)?))
            }
        }
    }

    /// Angular coupling strength `g`.
    pub fn coupling(&self) -> Result<f64> {
        match self.g_source {
            GSource::Direct(g) => Ok(TWO_PI * g),
            GSource::Geometry(_) if self.sphere_radius == Some(0.0) => Ok(0.0),
            GSource::Geometry(_) => {
                let cavity = self.cavity()?;
                let eta = self.eta(&cavity)?.unwrap_or(1.0);
                Ok(coupling_strength(&cavity, &self.magnon()?, eta)?)
            }
        }
    }

    pub fn build(&self) -> Result<CoupledSystem> {
        let cavity = self.cavity()?;
        let magnon = self.magnon()?;
        let g = self.coupling()?;
        Ok(match self.bias_field {
            BiasField::Resonance => CoupledSystem::on_resonance(cavity, magnon, g)?,
            BiasField::Tesla(b) => CoupledSystem::new(cavity, magnon, g, b)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FreqSpec {
    Range { start: f64, stop: f64 },
    Centered { center: f64, span: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PulseShapeChoice {
    RaisedCosine { edge: f64 },
    Rectangular,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriveChoice {
    Impulse,
    Pulse {
        /// Carrier in Hz; `None` means the cavity frequency.
        carrier: Option<f64>,
        amplitude: f64,
        start: f64,
        stop: f64,
        shape: PulseShapeChoice,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub freq: Option<FreqSpec>,
    pub points: usize,
    /// Bias fields in tesla.
    pub fields: Option<Vec<f64>>,
    pub t_max: Option<f64>,
    pub dt: Option<f64>,
    pub drive: DriveChoice,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DesignSweep {
    None,
    /// Sphere radius in metres.
    Radius { start: f64, stop: f64, points: usize },
    /// Common scale factor on the cavity box; the mode frequency scales as `1/s`.
    Dims { start: f64, stop: f64, points: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitModelChoice {
    Auto,
    Spectrum,
    Map,
    Decay,
    Lorentzian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskConfig {
    pub design_sweep: DesignSweep,
    pub data: Option<PathBuf>,
    pub model: FitModelChoice,
    pub fix: Vec<Param>,
    /// Initial values, internal SI units.
    pub init: ParamValues,
    pub window: Option<(f64, f64)>,
    pub lifetime_window: Option<(f64, f64)>,
    pub analysis_start: f64,
    pub usc_threshold: f64,
    pub max_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub path: Option<PathBuf>,
    pub decimation: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub system: Option<SystemConfig>,
    pub sweep: SweepConfig,
    pub task: TaskConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            system: None,
            sweep: SweepConfig {
                freq: None,
                points: 2001,
                fields: None,
                t_max: None,
                dt: None,
                drive: DriveChoice::Impulse,
            },
            task: TaskConfig {
                design_sweep: DesignSweep::None,
                data: None,
                model: FitModelChoice::Auto,
                fix: Vec::new(),
                init: ParamValues::new(),
                window: None,
                lifetime_window: None,
                analysis_start: 0.0,
                usc_threshold: DEFAULT_USC_THRESHOLD,
                max_iterations: MAX_ITERATIONS,
            },
            output: OutputConfig {
                path: None,
                decimation: 1,
            },
        }
    }
}

impl ExperimentConfig {
    pub fn system(&self) -> Result<&SystemConfig> {
        self.system
            .as_ref()
            .ok_or_else(|| CliError::Parse("config has no [system] section".into()))
    }
}

/// Typed access to one section that remembers which keys were read.
struct Reader<'a> {
    source: &'a str,
    section: &'a Section,
    allowed: &'a [&'a str],
}

impl<'a> Reader<'a> {
    fn new(source: &'a str, section: &'a Section, allowed: &'a [&'a str]) -> Result<Self> {
        for (key, entry) in &section.entries {
            let known = allowed.contains(&key.as_str())
                || (section.name == "task" && key.strip_prefix("init_").is_some_and(|p| Param::from_name(p).is_some()));
            if !known {
                return Err(CliError::Parse(format!(
                    "{source}:{}: unknown key `{key}` in [{}]",
                    entry.line, section.name
                )));
            }
        }
        Ok(Self { source, section, allowed })
    }

    fn err(&self, key: &str, msg: impl std::fmt::Display) -> CliError {
        let line = self.section.entries.get(key).map(|e| e.line).unwrap_or(self.section.line);
        CliError::Parse(format!("{}:{line}: [{}] {key}: {msg}", self.source, self.section.name))
    }

    fn raw(&self, key: &str) -> Option<&'a str> {
        debug_assert!(self.allowed.contains(&key) || key.starts_with("init_"));
        self.section.entries.get(key).map(|e| e.value.as_str())
    }

    fn has(&self, key: &str) -> bool {
        self.raw(key).is_some()
    }

    fn quantity(&self, key: &str, dim: Dimension) -> Result<Option<f64>> {
        self.raw(key)
            .map(|v| parse_quantity(v, dim).map_err(|e| self.err(key, e)))
            .transpose()
    }

    fn required(&self, key: &str, dim: Dimension) -> Result<f64> {
        self.quantity(key, dim)?
            .ok_or_else(|| self.err(key, "required key is missing"))
    }

    fn positive(&self, key: &str, dim: Dimension) -> Result<Option<f64>> {
        match self.quantity(key, dim)? {
            Some(v) if v <= 0.0 => Err(self.err(key, "must be > 0")),
            other => Ok(other),
        }
    }

    fn non_negative(&self, key: &str, dim: Dimension) -> Result<Option<f64>> {
        match self.quantity(key, dim)? {
            Some(v) if v < 0.0 => Err(self.err(key, "must be >= 0")),
            other => Ok(other),
        }
    }

    fn list(&self, key: &str, dim: Dimension) -> Result<Option<Vec<f64>>> {
        self.raw(key)
            .map(|v| parse_list(v, dim).map_err(|e| self.err(key, e)))
            .transpose()
    }

    fn count(&self, key: &str) -> Result<Option<usize>> {
        self.raw(key)
            .map(|v| {
                v.parse::<usize>()
                    .map_err(|_| self.err(key, format!("`{v}` is not a non-negative integer")))
            })
            .transpose()
    }

    fn word(&self, key: &str, choices: &[&str]) -> Result<Option<&'a str>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) if choices.contains(&v) => Ok(Some(v)),
            Some(v) => Err(self.err(key, format!("`{v}` is not one of {}", choices.join(", ")))),
        }
    }

    fn forbid(&self, key: &str, why: &str) -> Result<()> {
        if self.has(key) {
            Err(self.err(key, why))
        } else {
            Ok(())
        }
    }
}

fn system_config(r: &Reader) -> Result<SystemConfig> {
    let cavity_frequency = r
        .positive("cavity_frequency", Dimension::Frequency)?
        .ok_or_else(|| r.err("cavity_frequency", "required key is missing"))?;
    let kappa_a = r
        .positive("kappa_a", Dimension::Frequency)?
        .ok_or_else(|| r.err("kappa_a", "required key is missing"))?;
    let kappa_a1 = r.positive("kappa_a1", Dimension::Frequency)?.unwrap_or(0.5 * kappa_a);
    if kappa_a1 > kappa_a {
        return Err(r.err("kappa_a1", "external rate exceeds kappa_a"));
    }
    let kappa_m = r
        .positive("kappa_m", Dimension::Frequency)?
        .ok_or_else(|| r.err("kappa_m", "required key is missing"))?;

    let cavity_dims = match r.list("cavity_dims", Dimension::Length)? {
        None => None,
        Some(v) if v.len() == 3 && v.iter().all(|d| *d > 0.0) => Some([v[0], v[1], v[2]]),
        Some(_) => return Err(r.err("cavity_dims", "expected three positive lengths L_x, L_y, L_z")),
    };
    let sphere_radius = r.non_negative("sphere_radius", Dimension::Length)?;

    let source = r
        .word("g_source", &["direct", "geometry"])?
        .ok_or_else(|| r.err("g_source", "required key is missing (direct or geometry)"))?;
    let g_source = if source == "direct" {
        r.forbid("eta", "only used with g_source = geometry")?;
        r.forbid("sphere_position", "only used with g_source = geometry")?;
        let g = r
            .non_negative("g", Dimension::Frequency)?
            .ok_or_else(|| r.err("g", "g_source = direct needs g"))?;
        GSource::Direct(g)
    } else {
        r.forbid("g", "g_source = geometry computes g; remove g or switch to g_source = direct")?;
        if cavity_dims.is_none() {
            return Err(r.err("cavity_dims", "g_source = geometry needs cavity_dims"));
        }
        if sphere_radius.is_none() {
            return Err(r.err("sphere_radius", "g_source = geometry needs sphere_radius"));
        }
        let overlap = match (r.quantity("eta", Dimension::Dimensionless)?, r.quantity("sphere_position", Dimension::Length)?) {
            (Some(_), Some(_)) => return Err(r.err("eta", "give either eta or sphere_position, not both")),
            (Some(eta), None) if !(0.0..=1.0).contains(&eta) => return Err(r.err("eta", "must lie in [0, 1]")),
            (Some(eta), None) => Overlap::Eta(eta),
            (None, Some(x)) => Overlap::Position(x),
            (None, None) => Overlap::Eta(1.0),
        };
        GSource::Geometry(overlap)
    };

    let bias_field = match r.raw("bias_field") {
        None | Some("resonance") => BiasField::Resonance,
        Some(_) => BiasField::Tesla(r.non_negative("bias_field", Dimension::Field)?.unwrap_or(0.0)),
    };

    Ok(SystemConfig {
        cavity_frequency,
        kappa_a,
        kappa_a1,
        kappa_m,
        g_source,
        cavity_dims,
        mode_volume: r.positive("mode_volume", Dimension::Volume)?,
        sphere_radius,
        gamma: r.positive("gamma", Dimension::Gyromagnetic)?.unwrap_or(28e9),
        magnon_offset: r.quantity("magnon_offset", Dimension::Frequency)?.unwrap_or(0.0),
        spin_density: r.positive("spin_density", Dimension::Density)?,
        spin: r.positive("spin", Dimension::Dimensionless)?,
        bias_field,
    })
}

fn linspace_keys(r: &Reader, start: &str, stop: &str, points: &str, dim: Dimension) -> Result<Option<Vec<f64>>> {
    match (r.quantity(start, dim)?, r.quantity(stop, dim)?) {
        (None, None) => {
            if r.has(points) {
                return Err(r.err(points, format!("needs {start} and {stop}")));
            }
            Ok(None)
        }
        (Some(a), Some(b)) => {
            let n = r.count(points)?.ok_or_else(|| r.err(points, "required with a range"))?;
            if n < 1 {
                return Err(r.err(points, "must be >= 1"));
            }
            if n > 1 && !(b > a) {
                return Err(r.err(stop, format!("must exceed {start}")));
            }
            Ok(Some(linspace(a, b, n)))
        }
        (Some(_), None) => Err(r.err(stop, format!("needed together with {start}"))),
        (None, Some(_)) => Err(r.err(start, format!("needed together with {stop}"))),
    }
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn sweep_config(r: &Reader) -> Result<SweepConfig> {
    let range = (r.quantity("freq_start", Dimension::Frequency)?, r.quantity("freq_stop", Dimension::Frequency)?);
    let centered = (r.positive("freq_center", Dimension::Frequency)?, r.positive("freq_span", Dimension::Frequency)?);
    let freq = match (range, centered) {
        ((None, None), (None, None)) => None,
        ((Some(start), Some(stop)), (None, None)) => {
            if !(stop > start) {
                return Err(r.err("freq_stop", "must exceed freq_start"));
            }
            Some(FreqSpec::Range { start, stop })
        }
        ((None, None), (Some(center), Some(span))) => Some(FreqSpec::Centered { center, span }),
        ((None, None), _) => return Err(r.err("freq_center", "freq_center and freq_span go together")),
        ((Some(_), Some(_)), _) => return Err(r.err("freq_center", "give freq_start/freq_stop or freq_center/freq_span, not both")),
        _ => return Err(r.err("freq_start", "freq_start and freq_stop go together")),
    };
    let points = r.count("points")?.unwrap_or(2001);
    if points < 3 {
        return Err(r.err("points", "need at least 3 points"));
    }

    let listed = r.list("fields", Dimension::Field)?;
    let ranged = linspace_keys(r, "field_start", "field_stop", "field_points", Dimension::Field)?;
    let fields = match (listed, ranged) {
        (Some(_), Some(_)) => return Err(r.err("fields", "give either fields or field_start/field_stop, not both")),
        (Some(f), None) => {
            if f.windows(2).any(|w| w[1] <= w[0]) || f.iter().any(|b| *b < 0.0) {
                return Err(r.err("fields", "must be non-negative and strictly ascending"));
            }
            Some(f)
        }
        (None, f) => f,
    };

    let drive = match r.word("drive", &["impulse", "pulse"])? {
        None | Some("impulse") => {
            for key in ["carrier", "amplitude", "pulse_start", "pulse_stop", "pulse_shape", "pulse_edge"] {
                r.forbid(key, "only used with drive = pulse")?;
            }
            DriveChoice::Impulse
        }
        Some(_) => {
            let start = r.non_negative("pulse_start", Dimension::Time)?.unwrap_or(0.0);
            let stop = r.required("pulse_stop", Dimension::Time)?;
            if !(stop > start) {
                return Err(r.err("pulse_stop", "must exceed pulse_start"));
            }
            let shape = match r.word("pulse_shape", &["raised_cosine", "rectangular"])? {
                None | Some("raised_cosine") => PulseShapeChoice::RaisedCosine {
                    edge: r.positive("pulse_edge", Dimension::Time)?.unwrap_or(1e-9).min(0.5 * (stop - start)),
                },
                Some(_) => {
                    r.forbid("pulse_edge", "only used with pulse_shape = raised_cosine")?;
                    PulseShapeChoice::Rectangular
                }
            };
            DriveChoice::Pulse {
                carrier: r.positive("carrier", Dimension::Frequency)?,
                amplitude: r.non_negative("amplitude", Dimension::Dimensionless)?.unwrap_or(1.0),
                start,
                stop,
                shape,
            }
        }
    };

    Ok(SweepConfig {
        freq,
        points,
        fields,
        t_max: r.positive("t_max", Dimension::Time)?,
        dt: r.positive("dt", Dimension::Time)?,
        drive,
    })
}

fn task_config(r: &Reader, base_dir: &Path) -> Result<TaskConfig> {
    let design_sweep = match r.word("design_sweep", &["none", "radius", "dims"])? {
        None | Some("none") => {
            for key in ["sweep_start", "sweep_stop", "sweep_points"] {
                r.forbid(key, "only used with design_sweep = radius or dims")?;
            }
            DesignSweep::None
        }
        Some(kind) => {
            let dim = if kind == "radius" { Dimension::Length } else { Dimension::Dimensionless };
            let values = linspace_keys(r, "sweep_start", "sweep_stop", "sweep_points", dim)?
                .ok_or_else(|| r.err("sweep_start", "design_sweep needs sweep_start, sweep_stop, sweep_points"))?;
            let (start, stop, points) = (values[0], *values.last().unwrap(), values.len());
            if !(start > 0.0) {
                return Err(r.err("sweep_start", "must be > 0"));
            }
            if kind == "radius" {
                DesignSweep::Radius { start, stop, points }
            } else {
                DesignSweep::Dims { start, stop, points }
            }
        }
    };

    let model = match r.word("model", &["auto", "spectrum", "map", "decay", "lorentzian"])? {
        None | Some("auto") => FitModelChoice::Auto,
        Some("spectrum") => FitModelChoice::Spectrum,
        Some("map") => FitModelChoice::Map,
        Some("decay") => FitModelChoice::Decay,
        Some(_) => FitModelChoice::Lorentzian,
    };

    let mut fix = Vec::new();
    if let Some(list) = r.raw("fix") {
        let mut seen = BTreeSet::new();
        for name in list.split(',').map(str::trim) {
            let p = Param::from_name(name).ok_or_else(|| r.err("fix", format!("unknown parameter `{name}`")))?;
            if seen.insert(p) {
                fix.push(p);
            }
        }
    }

    let mut init = ParamValues::new();
    for p in Param::ALL {
        let key = format!("init_{}", p.name());
        let (_, dim, _) = param_unit(p);
        if let Some(v) = r.quantity(&key, dim)? {
            // frequencies are entered as f and stored as ω = 2πf
            let si = match dim {
                Dimension::Frequency | Dimension::Gyromagnetic => TWO_PI * v,
                _ => v,
            };
            init.insert(p, si);
        }
    }

    let pair = |a: &str, b: &str| -> Result<Option<(f64, f64)>> {
        match (r.non_negative(a, Dimension::Time)?, r.positive(b, Dimension::Time)?) {
            (None, None) => Ok(None),
            (Some(t0), Some(t1)) if t1 > t0 => Ok(Some((t0, t1))),
            (Some(_), Some(_)) => Err(r.err(b, format!("must exceed {a}"))),
            _ => Err(r.err(a, format!("{a} and {b} go together"))),
        }
    };

    let usc_threshold = r.positive("usc_threshold", Dimension::Dimensionless)?.unwrap_or(DEFAULT_USC_THRESHOLD);
    let max_iterations = r.count("max_iterations")?.unwrap_or(MAX_ITERATIONS);
    Ok(TaskConfig {
        design_sweep,
        data: r.raw("data").map(|p| base_dir.join(p)),
        model,
        fix,
        init,
        window: pair("window_start", "window_stop")?,
        lifetime_window: pair("lifetime_start", "lifetime_stop")?,
        analysis_start: r.non_negative("analysis_start", Dimension::Time)?.unwrap_or(0.0),
        usc_threshold,
        max_iterations,
    })
}

fn output_config(r: &Reader, base_dir: &Path) -> Result<OutputConfig> {
    let decimation = r.count("decimation")?.unwrap_or(1);
    if decimation == 0 {
        return Err(r.err("decimation", "must be >= 1"));
    }
    Ok(OutputConfig {
        path: r.raw("path").map(|p| base_dir.join(p)),
        decimation,
    })
}

/// Parses config text. Relative paths inside it resolve against `base_dir`.
pub fn parse_config(text: &str, source: &str, base_dir: &Path) -> Result<ExperimentConfig> {
    let ini = ini::parse(text, source).map_err(CliError::Parse)?;
    for s in &ini.sections {
        if !["system", "sweep", "task", "output"].contains(&s.name.as_str()) {
            return Err(CliError::Parse(format!("{source}:{}: unknown section [{}]", s.line, s.name)));
        }
    }
    let mut cfg = ExperimentConfig::default();
    if let Some(s) = ini.section("system") {
        cfg.system = Some(system_config(&Reader::new(source, s, SYSTEM_KEYS)?)?);
    }
    if let Some(s) = ini.section("sweep") {
        cfg.sweep = sweep_config(&Reader::new(source, s, SWEEP_KEYS)?)?;
    }
    if let Some(s) = ini.section("task") {
        cfg.task = task_config(&Reader::new(source, s, TASK_KEYS)?, base_dir)?;
    }
    if let Some(s) = ini.section("output") {
        cfg.output = output_config(&Reader::new(source, s, OUTPUT_KEYS)?, base_dir)?;
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Parse(format!("{}: cannot read config: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_config(&text, &path.display().to_string(), base)
}
