//! Physical types, constants and forward-design formulas.
//!
//! Conventions: angular frequencies and amplitude decay rates in rad/s,
//! magnetic fields in tesla, lengths in metres, volumes in m³.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::TWO_PI;

/// Reduced Planck constant (J·s).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Vacuum permeability (N/A²).
pub const MU0: f64 = 1.256_637_06e-6;
/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Gyromagnetic ratio of YIG, 2π × 28 GHz/T.
pub const YIG_GYROMAGNETIC_RATIO: f64 = TWO_PI * 28.0e9;
/// Spin density of YIG (m⁻³).
pub const YIG_SPIN_DENSITY: f64 = 4.22e27;
/// Ground-state spin of the Fe³⁺ ion.
pub const FE3_SPIN: f64 = 2.5;

fn require_positive(name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(Error::invalid(name, format!("must be finite and > 0, got {value}")))
    }
}

fn require_non_negative(name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(Error::invalid(name, format!("must be finite and >= 0, got {value}")))
    }
}

/// Volume of a sphere of radius `radius`.
pub fn sphere_volume(radius: f64) -> f64 {
    4.0 / 3.0 * PI * radius.powi(3)
}

/// Microwave cavity mode probed through one port.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityMode {
    omega_a: f64,
    kappa_a: f64,
    kappa_a1: f64,
    dims: [f64; 3],
    mode_volume: f64,
}

impl CavityMode {
    /// Builds a cavity whose mode volume is the geometric box volume
    /// `L_x·L_y·L_z`. `kappa_a` is the total decay rate and `kappa_a1` the
    /// part of it leaking through the probe port.
    pub fn new(omega_a: f64, kappa_a: f64, kappa_a1: f64, dims: [f64; 3]) -> Result<Self> {
        require_positive("omega_a", omega_a)?;
        require_positive("kappa_a", kappa_a)?;
        require_positive("kappa_a1", kappa_a1)?;
        if kappa_a1 > kappa_a {
            return Err(Error::invalid(
                "kappa_a1",
                format!("external rate {kappa_a1} exceeds total rate {kappa_a}"),
            ));
        }
        for (name, d) in ["L_x", "L_y", "L_z"].iter().zip(dims) {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::invalid("dims", format!("{name} must be > 0, got {d}")));
            }
        }
        Ok(Self {
            omega_a,
            kappa_a,
            kappa_a1,
            dims,
            mode_volume: dims.iter().product(),
        })
    }

    /// Replaces the default box-volume convention with an explicit mode volume.
    pub fn with_mode_volume(mut self, mode_volume: f64) -> Result<Self> {
        self.mode_volume = require_positive("mode_volume", mode_volume)?;
        Ok(self)
    }

    pub fn with_rates(self, kappa_a: f64, kappa_a1: f64) -> Result<Self> {
        let cavity = Self::new(self.omega_a, kappa_a, kappa_a1, self.dims)?;
        Ok(Self {
            mode_volume: self.mode_volume,
            ..cavity
        })
    }

    pub fn with_frequency(mut self, omega_a: f64) -> Result<Self> {
        self.omega_a = require_positive("omega_a", omega_a)?;
        Ok(self)
    }

    pub fn omega_a(&self) -> f64 {
        self.omega_a
    }

    pub fn kappa_a(&self) -> f64 {
        self.kappa_a
    }

    pub fn kappa_a1(&self) -> f64 {
        self.kappa_a1
    }

    /// Inner box dimensions `[L_x, L_y, L_z]`.
    pub fn dims(&self) -> [f64; 3] {
        self.dims
    }

    pub fn mode_volume(&self) -> f64 {
        self.mode_volume
    }

    pub fn box_volume(&self) -> f64 {
        self.dims.iter().product()
    }

    /// Resonance frequency `f = ω_a / 2π` in Hz.
    pub fn frequency(&self) -> f64 {
        self.omega_a / TWO_PI
    }
}

/// Uniform magnon mode of a ferrimagnetic sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagnonMode {
    omega_m0: f64,
    gamma: f64,
    kappa_m: f64,
    radius: f64,
    spin_density: f64,
    spin: f64,
}

impl MagnonMode {
    /// YIG sphere of radius `radius` with the standard gyromagnetic ratio,
    /// spin density and Fe³⁺ spin, and zero anisotropy offset.
    pub fn yig(radius: f64, kappa_m: f64) -> Result<Self> {
        Self::new(
            0.0,
            YIG_GYROMAGNETIC_RATIO,
            kappa_m,
            radius,
            YIG_SPIN_DENSITY,
            FE3_SPIN,
        )
    }

    pub fn new(
        omega_m0: f64,
        gamma: f64,
        kappa_m: f64,
        radius: f64,
        spin_density: f64,
        spin: f64,
    ) -> Result<Self> {
        if !omega_m0.is_finite() {
            return Err(Error::invalid("omega_m0", "must be finite"));
        }
        Ok(Self {
            omega_m0,
            gamma: require_positive("gamma", gamma)?,
            kappa_m: require_positive("kappa_m", kappa_m)?,
            radius: require_positive("radius", radius)?,
            spin_density: require_positive("spin_density", spin_density)?,
            spin: require_positive("spin", spin)?,
        })
    }

    pub fn with_offset(mut self, omega_m0: f64) -> Result<Self> {
        if !omega_m0.is_finite() {
            return Err(Error::invalid("omega_m0", "must be finite"));
        }
        self.omega_m0 = omega_m0;
        Ok(self)
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        self.gamma = require_positive("gamma", gamma)?;
        Ok(self)
    }

    pub fn with_kappa(mut self, kappa_m: f64) -> Result<Self> {
        self.kappa_m = require_positive("kappa_m", kappa_m)?;
        Ok(self)
    }

    pub fn with_radius(mut self, radius: f64) -> Result<Self> {
        self.radius = require_positive("radius", radius)?;
        Ok(self)
    }

    pub fn with_spin_density(mut self, spin_density: f64) -> Result<Self> {
        self.spin_density = require_positive("spin_density", spin_density)?;
        Ok(self)
    }

    pub fn with_spin(mut self, spin: f64) -> Result<Self> {
        self.spin = require_positive("spin", spin)?;
        Ok(self)
    }

    pub fn omega_m0(&self) -> f64 {
        self.omega_m0
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn kappa_m(&self) -> f64 {
        self.kappa_m
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn spin_density(&self) -> f64 {
        self.spin_density
    }

    pub fn spin(&self) -> f64 {
        self.spin
    }

    pub fn volume(&self) -> f64 {
        sphere_volume(self.radius)
    }
}

/// Cavity and magnon modes with their coupling and the static bias field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupledSystem {
    cavity: CavityMode,
    magnon: MagnonMode,
    g: f64,
    bias_field: f64,
}

impl CoupledSystem {
    pub fn new(cavity: CavityMode, magnon: MagnonMode, g: f64, bias_field: f64) -> Result<Self> {
        Ok(Self {
            cavity,
            magnon,
            g: require_non_negative("g", g)?,
            bias_field: require_non_negative("bias_field", bias_field)?,
        })
    }

    /// Same system with the bias field chosen so that `ω_m = ω_a`.
    ///
    /// Fails when the zero-field offset already exceeds the cavity frequency.
    pub fn on_resonance(cavity: CavityMode, magnon: MagnonMode, g: f64) -> Result<Self> {
        let field = resonance_field(&magnon, cavity.omega_a())?;
        Self::new(cavity, magnon, g, field)
    }

    pub fn with_bias_field(self, bias_field: f64) -> Result<Self> {
        Self::new(self.cavity, self.magnon, self.g, bias_field)
    }

    pub fn with_coupling(self, g: f64) -> Result<Self> {
        Self::new(self.cavity, self.magnon, g, self.bias_field)
    }

    pub fn cavity(&self) -> &CavityMode {
        &self.cavity
    }

    pub fn magnon(&self) -> &MagnonMode {
        &self.magnon
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    pub fn bias_field(&self) -> f64 {
        self.bias_field
    }

    /// Magnon angular frequency at the current bias field.
    pub fn omega_m(&self) -> f64 {
        magnon_frequency(&self.magnon, self.bias_field)
    }

    /// `C = g² / (κ_a κ_m)`; both rates are positive by construction.
    pub fn cooperativity(&self) -> f64 {
        self.g * self.g / (self.cavity.kappa_a() * self.magnon.kappa_m())
    }

    /// Flattened rate/frequency view used by the spectral and time-domain models.
    pub fn mode_parameters(&self) -> ModeParameters {
        ModeParameters {
            omega_a: self.cavity.omega_a(),
            omega_m: self.omega_m(),
            kappa_a: self.cavity.kappa_a(),
            kappa_a1: self.cavity.kappa_a1(),
            kappa_m: self.magnon.kappa_m(),
            g: self.g,
        }
    }
}

/// The six numbers that fully determine the two-mode response.
///
/// Unlike [`CoupledSystem`] this allows zero decay rates, which the lossless
/// limits of the dynamics and eigenmode models need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeParameters {
    pub omega_a: f64,
    pub omega_m: f64,
    pub kappa_a: f64,
    pub kappa_a1: f64,
    pub kappa_m: f64,
    pub g: f64,
}

impl ModeParameters {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("omega_a", self.omega_a),
            ("omega_m", self.omega_m),
        ] {
            if !v.is_finite() {
                return Err(Error::invalid(name, "must be finite"));
            }
        }
        require_non_negative("kappa_a", self.kappa_a)?;
        require_non_negative("kappa_a1", self.kappa_a1)?;
        require_non_negative("kappa_m", self.kappa_m)?;
        require_non_negative("g", self.g)?;
        Ok(())
    }

    pub fn cooperativity(&self) -> f64 {
        self.g * self.g / (self.kappa_a * self.kappa_m)
    }
}

/// Displacement of the sphere along the long cavity axis, measured from the
/// magnetic-field maximum at the centre of the wall it is mounted on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpherePosition {
    pub x: f64,
}

impl SpherePosition {
    /// Position checked against the cavity half-length.
    pub fn new(x: f64, cavity: &CavityMode) -> Result<Self> {
        let pos = Self { x };
        pos.check(cavity)?;
        Ok(pos)
    }

    fn check(&self, cavity: &CavityMode) -> Result<()> {
        let half = 0.5 * cavity.dims()[0];
        if !self.x.is_finite() || self.x.abs() > half {
            return Err(Error::Domain(format!(
                "sphere position x = {} m lies outside the cavity (|x| <= {half} m)",
                self.x
            )));
        }
        Ok(())
    }
}

/// Number of spins `N = ρ_s · (4/3)πR³` in the sphere.
pub fn spin_count(magnon: &MagnonMode) -> f64 {
    magnon.spin_density() * magnon.volume()
}

/// `ω_m = γ B₀ + ω_{m,0}`.
pub fn magnon_frequency(magnon: &MagnonMode, bias_field: f64) -> f64 {
    magnon.gamma() * bias_field + magnon.omega_m0()
}

/// Bias field at which the magnon frequency equals `omega`.
pub fn resonance_field(magnon: &MagnonMode, omega: f64) -> Result<f64> {
    let field = (omega - magnon.omega_m0()) / magnon.gamma();
    if field < 0.0 {
        return Err(Error::Domain(format!(
            "resonance at {omega:e} rad/s needs a negative bias field"
        )));
    }
    Ok(field)
}

/// Analytic TE101 standing-wave magnetic field of a rectangular box.
///
/// The electric field points along the short `z` edge,
/// `E_z ∝ sin(πx'/L_x) sin(πy'/L_y)`, with `x'`, `y'` measured from a corner.
/// The returned `(h_x, h_y)` components share an arbitrary overall scale;
/// `h_z` vanishes identically for this mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Te101Field {
    lx: f64,
    ly: f64,
}

impl Te101Field {
    pub fn new(cavity: &CavityMode) -> Self {
        let [lx, ly, _] = cavity.dims();
        Self { lx, ly }
    }

    /// Field at corner coordinates `(x', y')`.
    pub fn h(&self, xp: f64, yp: f64) -> (f64, f64) {
        let (kx, ky) = (PI / self.lx, PI / self.ly);
        (
            ky * (kx * xp).sin() * (ky * yp).cos(),
            -kx * (kx * xp).cos() * (ky * yp).sin(),
        )
    }

    /// Largest value of `h_x` anywhere in the box.
    pub fn max_hx(&self) -> f64 {
        PI / self.ly
    }
}

/// Resonance frequency (Hz) of the TE101 mode of a box with dimensions
/// `[L_x, L_y, L_z]`, `L_z` being the short edge.
pub fn te101_frequency(dims: [f64; 3]) -> f64 {
    0.5 * SPEED_OF_LIGHT * (dims[0].powi(-2) + dims[1].powi(-2)).sqrt()
}

/// Overlap coefficient η for a sphere mounted on the `y' = 0` wall.
///
/// Near the wall the TE101 field is polarised along `x`, so η is `h_x` at the
/// sphere normalised by its maximum, which reduces to `cos(πx/L_x)`.
pub fn overlap_eta(pos: SpherePosition, cavity: &CavityMode) -> Result<f64> {
    pos.check(cavity)?;
    let field = Te101Field::new(cavity);
    let (hx, _) = field.h(pos.x + 0.5 * cavity.dims()[0], 0.0);
    Ok((hx.abs() / field.max_hx()).clamp(0.0, 1.0))
}

/// Coupling strength `g = (η/2)·γ·sqrt(ħωμ₀/V_a)·sqrt(2Ns)` from explicit
/// spin count. Accepts `spins = 0`, the empty-cavity limit.
pub fn coupling_from_spins(
    omega: f64,
    mode_volume: f64,
    gamma: f64,
    spins: f64,
    spin: f64,
    eta: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Domain(format!("overlap eta = {eta} outside [0, 1]")));
    }
    require_positive("omega", omega)?;
    require_positive("mode_volume", mode_volume)?;
    require_non_negative("spins", spins)?;
    let vacuum_field = (HBAR * omega * MU0 / mode_volume).sqrt();
    Ok(0.5 * eta * gamma * vacuum_field * (2.0 * spins * spin).sqrt())
}

/// Coupling strength of the given cavity and sphere at overlap `eta`.
pub fn coupling_strength(cavity: &CavityMode, magnon: &MagnonMode, eta: f64) -> Result<f64> {
    coupling_from_spins(
        cavity.omega_a(),
        cavity.mode_volume(),
        magnon.gamma(),
        spin_count(magnon),
        magnon.spin(),
        eta,
    )
}

/// Reporting variable `f_eff = f · V_m / V_a` in Hz.
pub fn effective_frequency(cavity: &CavityMode, magnon: &MagnonMode) -> f64 {
    cavity.frequency() * magnon.volume() / cavity.mode_volume()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const MM: f64 = 1e-3;

    fn xband_cavity() -> CavityMode {
        CavityMode::new(TWO_PI * 7.875e9, TWO_PI * 2.67e6, TWO_PI * 1.335e6, [43.0 * MM, 21.0 * MM, 9.0 * MM])
            .unwrap()
    }

    fn ka_cavity() -> CavityMode {
        CavityMode::new(TWO_PI * 37.5e9, TWO_PI * 33e6, TWO_PI * 16.5e6, [7.0 * MM, 5.0 * MM, 3.2 * MM])
            .unwrap()
    }

    #[test]
    fn spin_count_of_large_sphere() {
        let yig = MagnonMode::yig(1.25 * MM, TWO_PI * 15e6).unwrap();
        assert_relative_eq!(spin_count(&yig), 3.452_479_426_601_283e19, max_relative = 1e-12);
    }

    #[test]
    fn spin_count_of_small_sphere() {
        let yig = MagnonMode::yig(0.18 * MM, TWO_PI * 2.13e6).unwrap();
        assert_relative_eq!(spin_count(&yig), 1.030_904_832_816_060_6e17, max_relative = 1e-12);
    }

    #[test]
    fn spin_count_vanishes_with_radius() {
        let tiny = MagnonMode::yig(1e-12, 1.0).unwrap();
        assert!(spin_count(&tiny) < 1e-7);
        assert!(MagnonMode::yig(0.0, 1.0).is_err());
    }

    #[test]
    fn magnon_dispersion() {
        let yig = MagnonMode::yig(0.18 * MM, 1.0).unwrap().with_offset(TWO_PI * 3e6).unwrap();
        assert_eq!(magnon_frequency(&yig, 0.0), TWO_PI * 3e6);

        let yig = yig.with_offset(0.0).unwrap();
        let f = magnon_frequency(&yig, 0.281) / TWO_PI;
        assert_relative_eq!(f, 7.868e9, max_relative = 1e-12);
        assert!((f - 7.875e9).abs() < 10e6);
        assert_relative_eq!(magnon_frequency(&yig, 0.1974) / TWO_PI, 5.5272e9, max_relative = 1e-12);
    }

    #[test]
    fn resonance_field_inverts_dispersion() {
        let yig = MagnonMode::yig(0.18 * MM, 1.0).unwrap().with_offset(TWO_PI * 7e6).unwrap();
        let b = resonance_field(&yig, TWO_PI * 7.875e9).unwrap();
        assert_relative_eq!(b, 0.281, max_relative = 1e-12);
        let hot = yig.with_offset(TWO_PI * 9e9).unwrap();
        assert!(resonance_field(&hot, TWO_PI * 7.875e9).is_err());
    }

    #[test]
    fn overlap_at_centre_wall_and_quarter() {
        let cavity = xband_cavity();
        let eta = |x: f64| overlap_eta(SpherePosition { x }, &cavity).unwrap();
        assert_relative_eq!(eta(0.0), 1.0, epsilon = 1e-15);
        assert!(eta(21.5 * MM).abs() < 1e-15);
        assert_relative_eq!(eta(43.0 * MM / 4.0), std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-15);
        assert_relative_eq!(eta(-43.0 * MM / 4.0), std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-15);
    }

    #[test]
    fn overlap_outside_cavity_is_domain_error() {
        let cavity = xband_cavity();
        assert!(matches!(
            overlap_eta(SpherePosition { x: 22.0 * MM }, &cavity),
            Err(Error::Domain(_))
        ));
        assert!(SpherePosition::new(-30.0 * MM, &cavity).is_err());
    }

    #[test]
    fn te101_field_is_x_polarised_at_wall() {
        let field = Te101Field::new(&xband_cavity());
        for xp in [1e-3, 10e-3, 30e-3] {
            let (_, hy) = field.h(xp, 0.0);
            assert!(hy.abs() < 1e-12);
        }
        // 43 x 21 mm footprint resonates near 7.9 GHz
        assert_relative_eq!(te101_frequency(xband_cavity().dims()), 7.943_660_926_6e9, max_relative = 1e-10);
    }

    #[test]
    fn coupling_zero_overlap() {
        let yig = MagnonMode::yig(0.18 * MM, 1.0).unwrap();
        assert_eq!(coupling_strength(&xband_cavity(), &yig, 0.0).unwrap(), 0.0);
        assert!(coupling_strength(&xband_cavity(), &yig, 1.2).is_err());
    }

    #[test]
    fn coupling_xband_device() {
        let yig = MagnonMode::yig(0.18 * MM, 1.0).unwrap();
        let g = coupling_strength(&xband_cavity(), &yig, 1.0).unwrap() / TWO_PI;
        assert_relative_eq!(g, 9.028_496_277_8e6, max_relative = 1e-9);
        assert!((g - 10.8e6).abs() / 10.8e6 < 0.25);
    }

    #[test]
    fn coupling_ka_band_device() {
        let yig = MagnonMode::yig(1.25 * MM, 1.0).unwrap();
        let g = coupling_strength(&ka_cavity(), &yig, 1.0).unwrap() / TWO_PI;
        assert_relative_eq!(g, 3.071_271_122_7e9, max_relative = 1e-9);
        assert!(g > 2.0e9 && g < 4.0e9);
    }

    #[test]
    fn effective_frequency_examples() {
        let cavity = CavityMode::new(TWO_PI * 10e9, 1.0, 0.5, [1.0, 1.0, 1.0])
            .unwrap()
            .with_mode_volume(sphere_volume(0.3))
            .unwrap();
        let yig = MagnonMode::yig(0.3, 1.0).unwrap();
        assert_relative_eq!(effective_frequency(&cavity, &yig), 10e9, max_relative = 1e-12);

        let yig = MagnonMode::yig(1.25 * MM, 1.0).unwrap();
        assert_relative_eq!(effective_frequency(&ka_cavity(), &yig), 2.739_251_406_9e9, max_relative = 1e-9);

        let yig = MagnonMode::yig(0.18 * MM, 1.0).unwrap();
        assert_relative_eq!(effective_frequency(&xband_cavity(), &yig), 23_671.535_343, max_relative = 1e-9);
    }

    #[test]
    fn invariants_rejected() {
        assert!(CavityMode::new(1.0, 1.0, 2.0, [1.0; 3]).is_err());
        assert!(CavityMode::new(1.0, 1.0, 0.0, [1.0; 3]).is_err());
        assert!(CavityMode::new(-1.0, 1.0, 0.5, [1.0; 3]).is_err());
        assert!(CavityMode::new(1.0, 1.0, 0.5, [1.0, 0.0, 1.0]).is_err());
        assert!(CavityMode::new(1.0, 1.0, 0.5, [1.0; 3]).unwrap().with_mode_volume(0.0).is_err());
        assert!(MagnonMode::yig(1.0, 0.0).is_err());
        let c = CavityMode::new(1.0, 1.0, 0.5, [1.0; 3]).unwrap();
        let m = MagnonMode::yig(1.0, 1.0).unwrap();
        assert!(CoupledSystem::new(c, m, -1.0, 0.0).is_err());
        assert!(CoupledSystem::new(c, m, 1.0, -0.1).is_err());
    }

    #[test]
    fn yig_defaults() {
        let m = MagnonMode::yig(1e-3, 1.0).unwrap();
        assert_eq!(m.gamma(), TWO_PI * 28e9);
        assert_eq!(m.spin_density(), 4.22e27);
        assert_eq!(m.spin(), 2.5);
        assert_eq!(m.omega_m0(), 0.0);
    }
}
