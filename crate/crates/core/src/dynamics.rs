//! Time-domain dynamics of the driven, damped coupled modes.
//!
//! In the frame rotating at `ω_f` (the drive carrier, or `ω_a` for an
//! impulse) the amplitudes obey
//!
//! ```text
//! ȧ = -(i(ω_a - ω_f) + κ_a) a - i g m + sqrt(2κ_a1) s_in
//! ṁ = -(i(ω_m - ω_f) + κ_m) m - i g a
//! s_out = -s_in + sqrt(2κ_a1) a
//! ```
//!
//! integrated with classical fixed-step RK4.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::physics::{CoupledSystem, ModeParameters};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Fraction of the fastest rotating-frame period a step may span.
pub const MAX_STEP_FRACTION: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PulseShape {
    Rectangular,
    /// Rectangular with raised-cosine rise and fall of the given duration (s).
    RaisedCosine { edge: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrivePulse {
    /// Carrier angular frequency; also the frame of the simulation.
    pub carrier: f64,
    /// Input field amplitude, in units of sqrt(power).
    pub amplitude: f64,
    pub t_on: f64,
    pub t_off: f64,
    pub shape: PulseShape,
}

impl DrivePulse {
    pub fn new(carrier: f64, amplitude: f64, t_on: f64, t_off: f64, shape: PulseShape) -> Result<Self> {
        if !(t_on >= 0.0 && t_off > t_on) {
            return Err(Error::invalid("pulse", format!("need t_off > t_on >= 0, got [{t_on}, {t_off}]")));
        }
        if !(amplitude >= 0.0 && amplitude.is_finite()) {
            return Err(Error::invalid("pulse", "amplitude must be >= 0"));
        }
        if !carrier.is_finite() {
            return Err(Error::invalid("pulse", "carrier must be finite"));
        }
        if let PulseShape::RaisedCosine { edge } = shape {
            if !(edge > 0.0 && 2.0 * edge <= t_off - t_on) {
                return Err(Error::invalid(
                    "pulse",
                    format!("edge time {edge} must be > 0 and fit twice into the pulse"),
                ));
            }
        }
        Ok(Self { carrier, amplitude, t_on, t_off, shape })
    }

    /// Default shape: rectangular with 1 ns raised-cosine edges.
    pub fn with_default_edges(carrier: f64, amplitude: f64, t_on: f64, t_off: f64) -> Result<Self> {
        let edge = 1e-9_f64.min(0.5 * (t_off - t_on));
        Self::new(carrier, amplitude, t_on, t_off, PulseShape::RaisedCosine { edge })
    }

    /// Input amplitude envelope at time `t`.
    pub fn envelope(&self, t: f64) -> f64 {
        if t < self.t_on || t > self.t_off {
            return 0.0;
        }
        let shape = match self.shape {
            PulseShape::Rectangular => 1.0,
            PulseShape::RaisedCosine { edge } => {
                let rise = t - self.t_on;
                let fall = self.t_off - t;
                let ramp = |s: f64| 0.5 * (1.0 - (std::f64::consts::PI * s / edge).cos());
                if rise < edge {
                    ramp(rise)
                } else if fall < edge {
                    ramp(fall)
                } else {
                    1.0
                }
            }
        };
        self.amplitude * shape
    }
}

/// How the modes are excited.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Drive {
    /// `a(0) = 1`, `m(0) = 0`, no input field; frame rotates at `ω_a`.
    Impulse,
    /// Starts from `a = m = 0` and drives the port with the pulse.
    Pulse(DrivePulse),
}

impl Drive {
    fn frame(&self, p: &ModeParameters) -> f64 {
        match self {
            Drive::Impulse => p.omega_a,
            Drive::Pulse(pulse) => pulse.carrier,
        }
    }

    fn input(&self, t: f64) -> f64 {
        match self {
            Drive::Impulse => 0.0,
            Drive::Pulse(pulse) => pulse.envelope(t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_max: f64,
    pub dt: f64,
    /// Store every `decimation`-th step.
    pub decimation: usize,
}

impl TimeGrid {
    pub fn new(t_max: f64, dt: f64) -> Result<Self> {
        Self::decimated(t_max, dt, 1)
    }

    pub fn decimated(t_max: f64, dt: f64, decimation: usize) -> Result<Self> {
        if !(dt > 0.0 && t_max > dt && t_max.is_finite()) {
            return Err(Error::invalid("time grid", format!("need t_max > dt > 0, got {t_max}, {dt}")));
        }
        if decimation == 0 {
            return Err(Error::invalid("time grid", "decimation must be >= 1"));
        }
        Ok(Self { t_max, dt, decimation })
    }

    fn steps(&self) -> usize {
        (self.t_max / self.dt).round() as usize
    }
}

/// Sampled amplitudes in the rotating frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeTrace {
    pub t: Vec<f64>,
    /// Cavity amplitude.
    pub a: Vec<Complex64>,
    /// Magnon amplitude.
    pub m: Vec<Complex64>,
    /// Output field at the port.
    pub out: Vec<Complex64>,
    /// Cavity energy `|a|²`.
    pub energy: Vec<f64>,
}

impl TimeTrace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// `|a|² + |m|²`.
    pub fn total_excitation(&self) -> Vec<f64> {
        self.a
            .iter()
            .zip(&self.m)
            .map(|(a, m)| a.norm_sqr() + m.norm_sqr())
            .collect()
    }

    pub fn output_power(&self) -> Vec<f64> {
        self.out.iter().map(|o| o.norm_sqr()).collect()
    }
}

/// Largest step the integrator accepts for these parameters in the frame
/// rotating at `frame`.
pub fn step_limit(p: &ModeParameters, frame: f64) -> f64 {
    let fastest = [
        p.g,
        p.kappa_a,
        p.kappa_m,
        (p.omega_a - p.omega_m).abs(),
        (p.omega_a - frame).abs(),
        (p.omega_m - frame).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    if fastest == 0.0 {
        f64::INFINITY
    } else {
        MAX_STEP_FRACTION * std::f64::consts::TAU / fastest
    }
}

type State = [Complex64; 2];

struct Equations {
    det_a: f64,
    det_m: f64,
    kappa_a: f64,
    kappa_m: f64,
    g: f64,
    port: f64,
}

impl Equations {
    fn rhs(&self, s: &State, input: f64) -> State {
        let [a, m] = *s;
        [
            -(I * self.det_a + self.kappa_a) * a - I * self.g * m + self.port * input,
            -(I * self.det_m + self.kappa_m) * m - I * self.g * a,
        ]
    }
}

fn axpy(s: &State, h: f64, k: &State) -> State {
    [s[0] + k[0] * h, s[1] + k[1] * h]
}

pub fn simulate_params(p: &ModeParameters, drive: &Drive, grid: &TimeGrid) -> Result<TimeTrace> {
    p.validate()?;
    let frame = drive.frame(p);
    let limit = step_limit(p, frame);
    if grid.dt > limit {
        return Err(Error::StepTooLarge { dt: grid.dt, limit });
    }
    let eq = Equations {
        det_a: p.omega_a - frame,
        det_m: p.omega_m - frame,
        kappa_a: p.kappa_a,
        kappa_m: p.kappa_m,
        g: p.g,
        port: (2.0 * p.kappa_a1).sqrt(),
    };

    let steps = grid.steps();
    let stored = steps / grid.decimation + 1;
    let mut trace = TimeTrace {
        t: Vec::with_capacity(stored),
        a: Vec::with_capacity(stored),
        m: Vec::with_capacity(stored),
        out: Vec::with_capacity(stored),
        energy: Vec::with_capacity(stored),
    };
    let mut state: State = match drive {
        Drive::Impulse => [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)],
        Drive::Pulse(_) => [Complex64::new(0.0, 0.0); 2],
    };
    let h = grid.dt;
    let record = |k: usize, s: &State, trace: &mut TimeTrace| {
        let t = k as f64 * h;
        let s_in = drive.input(t);
        trace.t.push(t);
        trace.a.push(s[0]);
        trace.m.push(s[1]);
        trace.out.push(-s_in + eq.port * s[0]);
        trace.energy.push(s[0].norm_sqr());
    };
    record(0, &state, &mut trace);
    for k in 0..steps {
        let t = k as f64 * h;
        let (u0, u_mid, u1) = (drive.input(t), drive.input(t + 0.5 * h), drive.input(t + h));
        let k1 = eq.rhs(&state, u0);
        let k2 = eq.rhs(&axpy(&state, 0.5 * h, &k1), u_mid);
        let k3 = eq.rhs(&axpy(&state, 0.5 * h, &k2), u_mid);
        let k4 = eq.rhs(&axpy(&state, h, &k3), u1);
        for j in 0..2 {
            state[j] += (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]) * (h / 6.0);
        }
        if (k + 1) % grid.decimation == 0 {
            record(k + 1, &state, &mut trace);
        }
    }
    Ok(trace)
}

pub fn simulate(system: &CoupledSystem, drive: &Drive, grid: &TimeGrid) -> Result<TimeTrace> {
    simulate_params(&system.mode_parameters(), drive, grid)
}

/// Half period of the vacuum Rabi beat, `π/g`.
pub fn rabi_period(g: f64) -> Result<f64> {
    if !(g > 0.0 && g.is_finite()) {
        return Err(Error::Domain(format!("Rabi period needs g > 0, got {g}")));
    }
    Ok(std::f64::consts::PI / g)
}

/// Cavity energy versus time for each bias field.
#[derive(Debug, Clone, PartialEq)]
pub struct RingdownMap {
    pub fields: Vec<f64>,
    pub t: Vec<f64>,
    pub energy: Vec<Vec<f64>>,
}

pub fn ringdown_map(
    system: &CoupledSystem,
    drive: &Drive,
    fields: &[f64],
    grid: &TimeGrid,
) -> Result<RingdownMap> {
    if fields.is_empty() {
        return Err(Error::invalid("fields", "empty bias-field list"));
    }
    let systems = fields
        .iter()
        .map(|&b| system.with_bias_field(b))
        .collect::<Result<Vec<_>>>()?;
    let traces = systems
        .par_iter()
        .map(|s| simulate(s, drive, grid))
        .collect::<Result<Vec<_>>>()?;
    let t = traces[0].t.clone();
    Ok(RingdownMap {
        fields: fields.to_vec(),
        t,
        energy: traces.into_iter().map(|tr| tr.energy).collect(),
    })
}

/// Node structure of an oscillating energy trace.
#[derive(Debug, Clone, PartialEq)]
pub struct RabiAnalysis {
    /// Interpolated times of successive energy minima.
    pub node_times: Vec<f64>,
    /// Mean spacing of the nodes.
    pub period: f64,
    /// `10·log10(E_peak / E_node)` for the first node after `t_start`.
    pub extinction_db: f64,
}

/// Locates energy nodes after `t_start` and measures their spacing and depth.
pub fn rabi_analysis(t: &[f64], energy: &[f64], t_start: f64) -> Result<RabiAnalysis> {
    let start = t.iter().position(|&x| x >= t_start).unwrap_or(t.len());
    if t.len() < start + 3 {
        return Err(Error::Domain("trace too short after t_start".into()));
    }
    let mut nodes = Vec::new();
    let mut first: Option<(usize, f64)> = None;
    for i in start + 1..t.len() - 1 {
        let (l, c, r) = (energy[i - 1], energy[i], energy[i + 1]);
        if c < l && c <= r {
            // vertex of the parabola through the three samples
            let denom = l - 2.0 * c + r;
            let shift = if denom > 0.0 { 0.5 * (l - r) / denom } else { 0.0 };
            let h = t[i + 1] - t[i];
            nodes.push(t[i] + shift * h);
            if first.is_none() {
                first = Some((i, c));
            }
        }
    }
    let (idx, node_energy) =
        first.ok_or_else(|| Error::Domain("no energy node found: trace does not oscillate".into()))?;
    if nodes.len() < 2 {
        return Err(Error::Domain("need at least two nodes to measure a period".into()));
    }
    let peak = energy[start..idx].iter().cloned().fold(0.0, f64::max);
    let period = (nodes[nodes.len() - 1] - nodes[0]) / (nodes.len() - 1) as f64;
    let floor = f64::MIN_POSITIVE;
    Ok(RabiAnalysis {
        node_times: nodes,
        period,
        extinction_db: 10.0 * (peak.max(floor) / node_energy.max(floor)).log10(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifetimeFit {
    /// Energy 1/e time (s).
    pub tau: f64,
    /// Standard error of `tau` from the regression residuals.
    pub stderr: f64,
    /// Set when the window is not a clean monotone decay.
    pub poor_fit: bool,
}

/// Least-squares line through `ln(energy)` versus time.
pub fn fit_exponential_decay(t: &[f64], energy: &[f64]) -> Result<LifetimeFit> {
    if t.len() != energy.len() {
        return Err(Error::Domain("time and energy lengths differ".into()));
    }
    let n = t.len();
    if n < 3 {
        return Err(Error::Domain(format!("lifetime fit needs >= 3 samples, got {n}")));
    }
    if let Some(e) = energy.iter().find(|&&e| !(e > 0.0)) {
        return Err(Error::Domain(format!("non-positive energy {e} in fit window")));
    }
    let y: Vec<f64> = energy.iter().map(|e| e.ln()).collect();
    let nf = n as f64;
    let t_mean = t.iter().sum::<f64>() / nf;
    let y_mean = y.iter().sum::<f64>() / nf;
    let sxx: f64 = t.iter().map(|x| (x - t_mean).powi(2)).sum();
    let sxy: f64 = t.iter().zip(&y).map(|(x, v)| (x - t_mean) * (v - y_mean)).sum();
    let syy: f64 = y.iter().map(|v| (v - y_mean).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("fit window has zero time extent".into()));
    }
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return Err(Error::Domain(format!("energy is not decaying (log slope {slope:e})")));
    }
    let intercept = y_mean - slope * t_mean;
    let ssr: f64 = t
        .iter()
        .zip(&y)
        .map(|(x, v)| (v - intercept - slope * x).powi(2))
        .sum();
    let slope_se = (ssr / (nf - 2.0) / sxx).sqrt();
    let r_squared = if syy > 0.0 { 1.0 - ssr / syy } else { 0.0 };
    let monotone = energy.windows(2).all(|w| w[1] <= w[0]);
    let tau = -1.0 / slope;
    Ok(LifetimeFit {
        tau,
        stderr: slope_se / (slope * slope),
        poor_fit: !monotone || r_squared < 0.99,
    })
}

/// Energy lifetime of `trace` over the window `[t0, t1]`.
pub fn extract_lifetime(trace: &TimeTrace, window: (f64, f64)) -> Result<LifetimeFit> {
    let (t0, t1) = window;
    if !(t1 > t0) {
        return Err(Error::Domain(format!("empty window [{t0}, {t1}]")));
    }
    let (first, last) = match (trace.t.first(), trace.t.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(Error::Domain("empty trace".into())),
    };
    if t0 < first || t1 > last {
        return Err(Error::Domain(format!(
            "window [{t0:e}, {t1:e}] outside trace [{first:e}, {last:e}]"
        )));
    }
    let (ts, es): (Vec<f64>, Vec<f64>) = trace
        .t
        .iter()
        .zip(&trace.energy)
        .filter(|(t, _)| **t >= t0 && **t <= t1)
        .map(|(t, e)| (*t, *e))
        .unzip();
    fit_exponential_decay(&ts, &es)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::normal_modes_of;
    use crate::TWO_PI;
    use approx::assert_relative_eq;

    const MHZ: f64 = TWO_PI * 1e6;
    const NS: f64 = 1e-9;

    fn params(g: f64, ka: f64, km: f64) -> ModeParameters {
        ModeParameters {
            omega_a: TWO_PI * 7.875e9,
            omega_m: TWO_PI * 7.875e9,
            kappa_a: ka * MHZ,
            kappa_a1: 0.5 * ka * MHZ,
            kappa_m: km * MHZ,
            g: g * MHZ,
        }
    }

    #[test]
    fn bare_cavity_decays_exponentially() {
        let p = params(0.0, 2.0, 1.0);
        let grid = TimeGrid::new(200.0 * NS, 0.05 * NS).unwrap();
        let tr = simulate_params(&p, &Drive::Impulse, &grid).unwrap();
        for (t, e) in tr.t.iter().zip(&tr.energy).step_by(100) {
            assert_relative_eq!(*e, (-2.0 * p.kappa_a * t).exp(), max_relative = 1e-9);
        }
    }

    #[test]
    fn short_pulse_then_free_decay() {
        let p = params(0.0, 2.0, 1.0);
        let pulse = DrivePulse::new(p.omega_a, 1.0, 0.0, 2.0 * NS, PulseShape::Rectangular).unwrap();
        let grid = TimeGrid::new(150.0 * NS, 0.05 * NS).unwrap();
        let tr = simulate_params(&p, &Drive::Pulse(pulse), &grid).unwrap();
        let fit = extract_lifetime(&tr, (10.0 * NS, 140.0 * NS)).unwrap();
        assert_relative_eq!(fit.tau, 1.0 / (2.0 * p.kappa_a), max_relative = 1e-6);
        assert!(!fit.poor_fit);
    }

    #[test]
    fn rabi_oscillation_period_and_extinction() {
        let p = params(10.8, 2.67, 2.13);
        let grid = TimeGrid::new(300.0 * NS, 0.02 * NS).unwrap();
        let tr = simulate_params(&p, &Drive::Impulse, &grid).unwrap();
        let rabi = rabi_analysis(&tr.t, &tr.energy, 0.0).unwrap();
        assert_relative_eq!(rabi.period, 46.3 * NS, max_relative = 0.01);
        assert!(rabi.extinction_db > 20.0, "{} dB", rabi.extinction_db);
    }

    #[test]
    fn purcell_decay_is_monotone() {
        let p = params(3.1, 1.07, 19.0);
        let grid = TimeGrid::new(300.0 * NS, 0.05 * NS).unwrap();
        let tr = simulate_params(&p, &Drive::Impulse, &grid).unwrap();
        assert!(tr.energy.windows(2).all(|w| w[1] <= w[0]));
        let fit = extract_lifetime(&tr, (30.0 * NS, 250.0 * NS)).unwrap();
        // first-order Purcell estimate 1/(2κ_a(1+C)) with C = 0.47 for these rates
        let c = p.cooperativity();
        let estimate = 1.0 / (2.0 * p.kappa_a * (1.0 + c));
        assert_relative_eq!(fit.tau, estimate, max_relative = 0.05);
        let slow = normal_modes_of(&p).omega_plus.im.abs().min(normal_modes_of(&p).omega_minus.im.abs());
        assert_relative_eq!(fit.tau, 1.0 / (2.0 * slow), max_relative = 0.02);
    }

    #[test]
    fn step_size_guard() {
        let p = params(10.8, 2.67, 2.13);
        let limit = step_limit(&p, p.omega_a);
        assert_relative_eq!(limit, 0.02 * TWO_PI / p.g, max_relative = 1e-15);
        let grid = TimeGrid::new(100.0 * NS, 1.1 * limit).unwrap();
        assert!(matches!(
            simulate_params(&p, &Drive::Impulse, &grid),
            Err(Error::StepTooLarge { .. })
        ));
        // an off-carrier drive tightens the limit
        let pulse = DrivePulse::new(p.omega_a + 200.0 * MHZ, 1.0, 0.0, 5.0 * NS, PulseShape::Rectangular).unwrap();
        let grid = TimeGrid::new(100.0 * NS, 0.9 * limit).unwrap();
        assert!(simulate_params(&p, &Drive::Pulse(pulse), &grid).is_err());
    }

    #[test]
    fn rabi_period_values() {
        assert_relative_eq!(rabi_period(10.8 * MHZ).unwrap(), 46.296e-9, max_relative = 1e-4);
        assert_relative_eq!(rabi_period(TWO_PI).unwrap(), 0.5, max_relative = 1e-15);
        assert_relative_eq!(rabi_period(5.4 * MHZ).unwrap(), 92.593e-9, max_relative = 1e-4);
        assert!(rabi_period(0.0).is_err());
    }

    #[test]
    fn lifetime_of_synthetic_decay() {
        let kappa = 1.14 * MHZ;
        let t: Vec<f64> = (0..500).map(|i| i as f64 * 0.5 * NS).collect();
        let e: Vec<f64> = t.iter().map(|t| (-2.0 * kappa * t).exp()).collect();
        let fit = fit_exponential_decay(&t, &e).unwrap();
        assert_relative_eq!(fit.tau, 69.8 * NS, max_relative = 0.01);
        assert!(fit.stderr < 1e-6 * fit.tau);
    }

    #[test]
    fn lifetime_rejects_constant_and_nonpositive() {
        let t: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert!(fit_exponential_decay(&t, &[1.0; 10]).is_err());
        let mut e = vec![1.0; 10];
        e[3] = 0.0;
        assert!(fit_exponential_decay(&t, &e).is_err());
    }

    #[test]
    fn lifetime_early_window_picks_fast_rate() {
        // fast 10 ns plus a 1% slow 100 ns tail
        let t: Vec<f64> = (0..=100).map(|i| i as f64 * 0.1 * NS).collect();
        let e: Vec<f64> = t.iter().map(|t| (-t / (10.0 * NS)).exp() + 0.01 * (-t / (100.0 * NS)).exp()).collect();
        let fit = fit_exponential_decay(&t, &e).unwrap();
        assert_relative_eq!(fit.tau, 10.0 * NS, max_relative = 0.05);
    }

    #[test]
    fn oscillating_window_is_flagged() {
        let p = params(10.8, 2.67, 2.13);
        let grid = TimeGrid::new(300.0 * NS, 0.05 * NS).unwrap();
        let tr = simulate_params(&p, &Drive::Impulse, &grid).unwrap();
        // nodes approach zero but stay positive
        let fit = extract_lifetime(&tr, (5.0 * NS, 290.0 * NS)).unwrap();
        assert!(fit.poor_fit);
        assert!(extract_lifetime(&tr, (0.0, 400.0 * NS)).is_err());
    }

    #[test]
    fn pulse_envelope_shapes() {
        let p = DrivePulse::new(0.0, 2.0, 1.0, 5.0, PulseShape::RaisedCosine { edge: 1.0 }).unwrap();
        assert_eq!(p.envelope(0.5), 0.0);
        assert_relative_eq!(p.envelope(1.5), 1.0, epsilon = 1e-12);
        assert_eq!(p.envelope(3.0), 2.0);
        assert_relative_eq!(p.envelope(4.5), 1.0, epsilon = 1e-12);
        assert_eq!(p.envelope(5.5), 0.0);
        assert!(DrivePulse::new(0.0, 1.0, 2.0, 1.0, PulseShape::Rectangular).is_err());
        assert!(DrivePulse::new(0.0, 1.0, 0.0, 1.0, PulseShape::RaisedCosine { edge: 0.6 }).is_err());
        assert!(DrivePulse::new(0.0, -1.0, 0.0, 1.0, PulseShape::Rectangular).is_err());
    }

    #[test]
    fn decimation_keeps_uniform_grid() {
        let p = params(1.0, 1.0, 1.0);
        let grid = TimeGrid::decimated(10.0 * NS, 0.1 * NS, 10).unwrap();
        let tr = simulate_params(&p, &Drive::Impulse, &grid).unwrap();
        assert_eq!(tr.len(), 11);
        for w in tr.t.windows(2) {
            assert_relative_eq!(w[1] - w[0], 1.0 * NS, max_relative = 1e-9);
        }
    }
}
