//! Coupling-regime classification.

use std::fmt;

use crate::error::{Error, Result};
use crate::physics::CoupledSystem;

/// Default `g/ω` above which a system is reported as ultrastrongly coupled.
pub const DEFAULT_USC_THRESHOLD: f64 = 0.05;
/// The more conservative `g/ω` convention common in the literature.
pub const LITERATURE_USC_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    /// `g` exceeds both decay rates; splitting resolved.
    Strong,
    /// `κ_m < g < κ_a`: narrow transparency window in a broad cavity dip.
    MagneticallyInducedTransparency,
    /// `κ_a < g < κ_m`: cavity decay accelerated by the lossy magnon.
    Purcell,
    /// `g` below both decay rates.
    Weak,
}

impl Regime {
    pub fn label(&self) -> &'static str {
        match self {
            Regime::Strong => "strong",
            Regime::MagneticallyInducedTransparency => "MIT",
            Regime::Purcell => "Purcell",
            Regime::Weak => "weak",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeReport {
    pub regime: Regime,
    pub usc: bool,
    pub usc_threshold: f64,
    pub cooperativity: f64,
    /// `C ≥ 1`.
    pub coherent: bool,
    pub g_over_omega: f64,
    pub purcell_factor: f64,
    pub notes: Vec<String>,
}

/// `C = g² / (κ_a κ_m)`.
pub fn cooperativity(g: f64, kappa_a: f64, kappa_m: f64) -> Result<f64> {
    if !(kappa_a > 0.0 && kappa_m > 0.0) {
        return Err(Error::Domain(format!(
            "cooperativity needs positive decay rates, got kappa_a = {kappa_a}, kappa_m = {kappa_m}"
        )));
    }
    if !(g >= 0.0 && g.is_finite()) {
        return Err(Error::Domain(format!("coupling g = {g} must be finite and >= 0")));
    }
    Ok(g * g / (kappa_a * kappa_m))
}

/// Four-way label from the ordering of `g`, `κ_a` and `κ_m`.
///
/// Exact ties go to the stronger-coupling label.
pub fn classify_rates(g: f64, kappa_a: f64, kappa_m: f64) -> (Regime, Vec<String>) {
    let mut notes = Vec::new();
    let cmp = |rate: f64, name: &str, notes: &mut Vec<String>| {
        let rel = if g > rate {
            ">"
        } else if g < rate {
            "<"
        } else {
            notes.push(format!("tie: g == {name}, resolved toward stronger coupling"));
            "="
        };
        notes.push(format!("g {rel} {name} ({g:.6e} vs {rate:.6e} rad/s)"));
    };
    cmp(kappa_a, "kappa_a", &mut notes);
    cmp(kappa_m, "kappa_m", &mut notes);

    let above_a = g >= kappa_a;
    let above_m = g >= kappa_m;
    let regime = match (above_a, above_m) {
        (true, true) => Regime::Strong,
        (false, true) => Regime::MagneticallyInducedTransparency,
        (true, false) => Regime::Purcell,
        (false, false) => Regime::Weak,
    };
    (regime, notes)
}

pub fn classify(system: &CoupledSystem) -> RegimeReport {
    classify_with_threshold(system, DEFAULT_USC_THRESHOLD)
}

pub fn classify_with_threshold(system: &CoupledSystem, usc_threshold: f64) -> RegimeReport {
    let p = system.mode_parameters();
    let (regime, mut notes) = classify_rates(p.g, p.kappa_a, p.kappa_m);
    let c = system.cooperativity();

    // A non-positive magnon frequency (zero bias, no offset) is not a mode
    // frequency the ratio should be taken against.
    let omega_ref = if p.omega_m > 0.0 {
        p.omega_a.min(p.omega_m)
    } else {
        notes.push("omega_m <= 0; g/omega uses omega_a".to_string());
        p.omega_a
    };
    let g_over_omega = p.g / omega_ref;
    let usc = g_over_omega >= usc_threshold;
    notes.push(format!(
        "g/omega = {g_over_omega:.4}: usc threshold {usc_threshold} -> {}, literature convention {} -> {}",
        usc,
        LITERATURE_USC_THRESHOLD,
        g_over_omega >= LITERATURE_USC_THRESHOLD
    ));
    notes.push(format!("C = {c:.6}: coherent (C >= 1) -> {}", c >= 1.0));

    RegimeReport {
        regime,
        usc,
        usc_threshold,
        cooperativity: c,
        coherent: c >= 1.0,
        g_over_omega,
        purcell_factor: 1.0 + c,
        notes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{CavityMode, MagnonMode};
    use crate::TWO_PI;

    fn system(g: f64, ka: f64, km: f64, fa: f64) -> CoupledSystem {
        let mhz = TWO_PI * 1e6;
        let cavity = CavityMode::new(TWO_PI * fa, ka * mhz, 0.5 * ka * mhz, [0.01; 3]).unwrap();
        let magnon = MagnonMode::yig(1e-4, km * mhz).unwrap();
        CoupledSystem::on_resonance(cavity, magnon, g * mhz).unwrap()
    }

    #[test]
    fn reference_parameter_sets() {
        assert_eq!(classify(&system(10.8, 2.67, 2.13, 7.875e9)).regime, Regime::Strong);
        assert_eq!(
            classify(&system(5.4, 34.9, 0.24, 7.0e9)).regime,
            Regime::MagneticallyInducedTransparency
        );
        assert_eq!(classify(&system(3.1, 1.07, 19.0, 7.0e9)).regime, Regime::Purcell);
        let weak = classify(&system(0.0, 1.0, 1.0, 7.0e9));
        assert_eq!(weak.regime, Regime::Weak);
        assert_eq!(weak.cooperativity, 0.0);
        assert_eq!(weak.purcell_factor, 1.0);
    }

    #[test]
    fn ultrastrong_device() {
        let r = classify(&system(2500.0, 33.0, 15.0, 37.5e9));
        assert_eq!(r.regime, Regime::Strong);
        assert!(r.usc);
        assert!((r.g_over_omega - 0.0667).abs() < 1e-3);
        // below the 0.1 literature convention
        assert!(!classify_with_threshold(&system(2500.0, 33.0, 15.0, 37.5e9), 0.1).usc);
        assert!(r.coherent);
    }

    #[test]
    fn ties_go_to_stronger_label() {
        let (regime, notes) = classify_rates(2.0, 2.0, 1.0);
        assert_eq!(regime, Regime::Strong);
        assert!(notes.iter().any(|n| n.starts_with("tie")));
        let (regime, _) = classify_rates(1.0, 2.0, 1.0);
        assert_eq!(regime, Regime::MagneticallyInducedTransparency);
        let (regime, _) = classify_rates(1.0, 1.0, 2.0);
        assert_eq!(regime, Regime::Purcell);
    }

    #[test]
    fn cooperativity_values() {
        let c = cooperativity(10.8, 2.67, 2.13).unwrap();
        assert!((c - 20.509).abs() < 1e-3);
        let c = cooperativity(2500.0, 33.0, 15.0).unwrap();
        assert!((c - 12626.26).abs() < 0.01);
        assert_eq!(cooperativity(0.0, 1.0, 1.0).unwrap(), 0.0);
        assert!(cooperativity(1.0, 0.0, 1.0).is_err());
        assert!(cooperativity(1.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn coherent_threshold_is_exactly_one() {
        let r = classify(&system(1.0, 1.0, 1.0, 7e9));
        assert!(r.coherent);
        let r = classify(&system(0.999, 1.0, 1.0, 7e9));
        assert!(!r.coherent);
    }
}
