//! Frequency-domain forward models.
//!
//! The single-port reflection coefficient of the coupled modes is
//!
//! ```text
//! r(ω) = -1 + 2κ_a1 / ( i(ω_a - ω) + κ_a + g² / (i(ω_m - ω) + κ_m) )
//! ```
//!
//! with time dependence `exp(-iωt)`, so decaying eigenfrequencies carry
//! negative imaginary parts.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::physics::{CoupledSystem, ModeParameters};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Uniform grid of angular frequencies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyGrid {
    start: f64,
    stop: f64,
    points: usize,
}

impl FrequencyGrid {
    pub fn new(start: f64, stop: f64, points: usize) -> Result<Self> {
        if !(start.is_finite() && stop.is_finite() && stop > start) {
            return Err(Error::invalid("grid", format!("need stop > start, got [{start}, {stop}]")));
        }
        if points < 2 {
            return Err(Error::invalid("grid", format!("need at least 2 points, got {points}")));
        }
        Ok(Self { start, stop, points })
    }

    /// Grid of `points` samples spanning `center ± half_span`.
    pub fn centered(center: f64, half_span: f64, points: usize) -> Result<Self> {
        Self::new(center - half_span, center + half_span, points)
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn stop(&self) -> f64 {
        self.stop
    }

    pub fn len(&self) -> usize {
        self.points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        (self.stop - self.start) / (self.points - 1) as f64
    }

    pub fn at(&self, i: usize) -> f64 {
        if i + 1 == self.points {
            self.stop
        } else {
            self.start + i as f64 * self.step()
        }
    }

    pub fn omegas(&self) -> Vec<f64> {
        (0..self.points).map(|i| self.at(i)).collect()
    }
}

/// Complex reflection sampled on a [`FrequencyGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionSpectrum {
    pub grid: FrequencyGrid,
    pub values: Vec<Complex64>,
}

impl ReflectionSpectrum {
    /// `|r|²` per grid point.
    pub fn power(&self) -> Vec<f64> {
        self.values.iter().map(|r| r.norm_sqr()).collect()
    }

    /// `arg r` per grid point, wrapped to `(-π, π]`.
    pub fn phase(&self) -> Vec<f64> {
        self.values.iter().map(|r| r.arg()).collect()
    }
}

/// Reflection coefficient for raw mode parameters.
pub fn reflection_coefficient(p: &ModeParameters, omega: f64) -> Complex64 {
    let magnon = I * (p.omega_m - omega) + p.kappa_m;
    let denom = I * (p.omega_a - omega) + p.kappa_a + p.g * p.g / magnon;
    -1.0 + 2.0 * p.kappa_a1 / denom
}

/// Reflection coefficient and its partial derivatives with respect to
/// `[ω_a, ω_m, κ_a, κ_a1, κ_m, g]`, in that order.
pub fn reflection_gradient(p: &ModeParameters, omega: f64) -> (Complex64, [Complex64; 6]) {
    let magnon = I * (p.omega_m - omega) + p.kappa_m;
    let g2 = p.g * p.g;
    let denom = I * (p.omega_a - omega) + p.kappa_a + g2 / magnon;
    let r = -1.0 + 2.0 * p.kappa_a1 / denom;
    let dr_dd = -2.0 * p.kappa_a1 / (denom * denom);
    let dd_dmagnon = -g2 / (magnon * magnon);
    (
        r,
        [
            dr_dd * I,
            dr_dd * dd_dmagnon * I,
            dr_dd,
            2.0 / denom,
            dr_dd * dd_dmagnon,
            dr_dd * (2.0 * p.g / magnon),
        ],
    )
}

pub fn reflection(system: &CoupledSystem, omega: f64) -> Complex64 {
    reflection_coefficient(&system.mode_parameters(), omega)
}

pub fn spectrum_of(p: &ModeParameters, grid: FrequencyGrid) -> ReflectionSpectrum {
    let values = (0..grid.len())
        .map(|i| reflection_coefficient(p, grid.at(i)))
        .collect();
    ReflectionSpectrum { grid, values }
}

pub fn spectrum(system: &CoupledSystem, grid: FrequencyGrid) -> ReflectionSpectrum {
    spectrum_of(&system.mode_parameters(), grid)
}

/// `|r|²` over a (bias field, frequency) raster.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldMap {
    pub fields: Vec<f64>,
    pub grid: FrequencyGrid,
    /// One row per bias field, one column per grid frequency.
    pub power: Vec<Vec<f64>>,
}

pub fn field_map(system: &CoupledSystem, fields: &[f64], grid: FrequencyGrid) -> Result<FieldMap> {
    if fields.is_empty() {
        return Err(Error::invalid("fields", "empty bias-field list"));
    }
    if fields.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("fields", "bias fields must be strictly ascending"));
    }
    let systems = fields
        .iter()
        .map(|&b| system.with_bias_field(b))
        .collect::<Result<Vec<_>>>()?;
    let power = systems
        .par_iter()
        .map(|s| spectrum(s, grid).power())
        .collect();
    Ok(FieldMap {
        fields: fields.to_vec(),
        grid,
        power,
    })
}

/// Complex polariton frequencies, `Re` = frequency and `-Im` = amplitude decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalModes {
    pub omega_plus: Complex64,
    pub omega_minus: Complex64,
}

impl NormalModes {
    pub fn splitting(&self) -> f64 {
        self.omega_plus.re - self.omega_minus.re
    }
}

/// Eigenvalues of `[[ω_a - iκ_a, g], [g, ω_m - iκ_m]]`, the upper branch
/// being the one with larger real part.
pub fn normal_modes_of(p: &ModeParameters) -> NormalModes {
    let a = Complex64::new(p.omega_a, -p.kappa_a);
    let m = Complex64::new(p.omega_m, -p.kappa_m);
    let mean = 0.5 * (a + m);
    let half_diff = 0.5 * (a - m);
    let root = (half_diff * half_diff + p.g * p.g).sqrt();
    let (u, l) = (mean + root, mean - root);
    if u.re >= l.re {
        NormalModes { omega_plus: u, omega_minus: l }
    } else {
        NormalModes { omega_plus: l, omega_minus: u }
    }
}

pub fn normal_modes_rwa(system: &CoupledSystem) -> NormalModes {
    normal_modes_of(&system.mode_parameters())
}

/// Polariton frequencies including counter-rotating coupling.
///
/// Real parts are the positive roots of the lossless equation
/// `(ω² - ω_a²)(ω² - ω_m²) = 4g²ω_aω_m`; the imaginary parts are taken from
/// the matching rotating-wave branch, a first-order attachment of loss that is
/// a modelling choice rather than an exact result.
pub fn normal_modes_full_of(p: &ModeParameters) -> Result<NormalModes> {
    if !(p.omega_a > 0.0 && p.omega_m > 0.0) {
        return Err(Error::Numeric(
            "counter-rotating model needs positive bare frequencies".into(),
        ));
    }
    let (wa2, wm2) = (p.omega_a * p.omega_a, p.omega_m * p.omega_m);
    let coupling = 4.0 * p.g * p.g * p.omega_a * p.omega_m;
    let half_sum = 0.5 * (wa2 + wm2);
    let half_diff = 0.5 * (wa2 - wm2);
    let disc = (half_diff * half_diff + coupling).sqrt();
    let (upper, lower) = (half_sum + disc, half_sum - disc);
    // `lower` stays positive only while 4g² < ω_aω_m.
    if !(lower > 0.0) {
        return Err(Error::Numeric(format!(
            "no positive lower polariton: g = {:e} rad/s is beyond sqrt(ω_aω_m)/2",
            p.g
        )));
    }
    let rwa = normal_modes_of(p);
    Ok(NormalModes {
        omega_plus: Complex64::new(upper.sqrt(), rwa.omega_plus.im),
        omega_minus: Complex64::new(lower.sqrt(), rwa.omega_minus.im),
    })
}

pub fn normal_modes_full(system: &CoupledSystem) -> Result<NormalModes> {
    normal_modes_full_of(&system.mode_parameters())
}

/// Closed-form transparency window observables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MitObservables {
    /// `(C/(1+C))²`, the on-resonance `|r|²`.
    pub height: f64,
    /// `2(1+C)κ_m`, full width of the window.
    pub linewidth: f64,
    pub cooperativity: f64,
    /// `κ_a1 = κ_a/2`; the closed form assumes it.
    pub impedance_matched: bool,
    /// `ω_a = ω_m`; the closed form assumes it.
    pub on_resonance: bool,
}

impl MitObservables {
    /// Whether both preconditions of the closed form hold.
    pub fn applies(&self) -> bool {
        self.impedance_matched && self.on_resonance
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

pub fn mit_observables(system: &CoupledSystem) -> MitObservables {
    let p = system.mode_parameters();
    let c = system.cooperativity();
    let ratio = c / (1.0 + c);
    MitObservables {
        height: ratio * ratio,
        linewidth: 2.0 * (1.0 + c) * p.kappa_m,
        cooperativity: c,
        impedance_matched: close(p.kappa_a1, 0.5 * p.kappa_a),
        on_resonance: close(p.omega_a, p.omega_m),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PurcellEnhancement {
    /// `κ_a(1+C)`.
    pub kappa_eff: f64,
    /// `F_P = 1 + C`.
    pub purcell_factor: f64,
}

pub fn purcell_kappa(system: &CoupledSystem) -> PurcellEnhancement {
    let f = 1.0 + system.cooperativity();
    PurcellEnhancement {
        kappa_eff: system.cavity().kappa_a() * f,
        purcell_factor: f,
    }
}

/// Removes `2π` jumps larger than `π` between consecutive samples.
pub fn unwrap_phase(phase: &[f64]) -> Vec<f64> {
    use std::f64::consts::PI;
    let mut out = Vec::with_capacity(phase.len());
    let mut offset = 0.0;
    for (i, &p) in phase.iter().enumerate() {
        if i > 0 {
            let jump = p - phase[i - 1];
            if jump > PI {
                offset -= 2.0 * PI;
            } else if jump < -PI {
                offset += 2.0 * PI;
            }
        }
        out.push(p + offset);
    }
    out
}

/// Group delay `τ_g(ω) = d(arg r)/dω` in seconds.
///
/// Under the `exp(-iωt)` convention a positive phase slope is a positive
/// envelope delay. Interior points use central differences, the two end
/// points one-sided differences.
pub fn group_delay(spectrum: &ReflectionSpectrum) -> Result<Vec<f64>> {
    let n = spectrum.values.len();
    if n < 3 {
        return Err(Error::Domain(format!("group delay needs >= 3 points, got {n}")));
    }
    let phase = unwrap_phase(&spectrum.phase());
    let h = spectrum.grid.step();
    let mut delay = Vec::with_capacity(n);
    delay.push((phase[1] - phase[0]) / h);
    for i in 1..n - 1 {
        delay.push((phase[i + 1] - phase[i - 1]) / (2.0 * h));
    }
    delay.push((phase[n - 1] - phase[n - 2]) / h);
    Ok(delay)
}
