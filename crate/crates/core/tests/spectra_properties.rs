use magnon_cavity::estimation::{fit, init_guess_lorentzian, problem_with_defaults, FitData, Model, Param};
use magnon_cavity::physics::{CavityMode, CoupledSystem, MagnonMode, ModeParameters};
use magnon_cavity::regimes::{classify, classify_rates, Regime};
use magnon_cavity::spectra::{
    mit_observables, normal_modes_of, purcell_kappa, reflection, reflection_coefficient, spectrum_of, FrequencyGrid,
};
use magnon_cavity::TWO_PI;
use proptest::prelude::*;

const MHZ: f64 = TWO_PI * 1e6;
const F0: f64 = TWO_PI * 7.0e9;

fn params(g: f64, ka: f64, ka1_frac: f64, km: f64, detuning: f64) -> ModeParameters {
    ModeParameters {
        omega_a: F0,
        omega_m: F0 + detuning * MHZ,
        kappa_a: ka * MHZ,
        kappa_a1: ka1_frac * ka * MHZ,
        kappa_m: km * MHZ,
        g: g * MHZ,
    }
}

fn system(g: f64, ka: f64, ka1: f64, km: f64) -> CoupledSystem {
    let cavity = CavityMode::new(F0, ka * MHZ, ka1 * MHZ, [0.02, 0.01, 0.005]).unwrap();
    let magnon = MagnonMode::yig(1e-4, km * MHZ).unwrap();
    CoupledSystem::on_resonance(cavity, magnon, g * MHZ).unwrap()
}

fn local_minima(y: &[f64]) -> Vec<usize> {
    (1..y.len() - 1).filter(|&i| y[i] < y[i - 1] && y[i] <= y[i + 1]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn passive_when_external_rate_bounded(
        g in 0.0f64..500.0,
        ka in 0.01f64..100.0,
        frac in 0.0f64..=1.0,
        km in 0.01f64..100.0,
        det in -200.0f64..200.0,
        w in -1000.0f64..1000.0,
    ) {
        let p = params(g, ka, frac, km, det);
        let r = reflection_coefficient(&p, F0 + w * MHZ);
        prop_assert!(r.norm() <= 1.0 + 1e-9);
    }

    #[test]
    fn symmetric_on_resonance(
        g in 0.0f64..50.0,
        ka in 0.1f64..20.0,
        frac in 0.0f64..=1.0,
        km in 0.1f64..20.0,
        delta in 0.0f64..100.0,
    ) {
        let p = params(g, ka, frac, km, 0.0);
        let up = reflection_coefficient(&p, F0 + delta * MHZ).norm();
        let down = reflection_coefficient(&p, F0 - delta * MHZ).norm();
        prop_assert!((up - down).abs() <= 1e-12);
    }

    #[test]
    fn dips_follow_eigenvalues_when_resolved(
        ka in 0.5f64..5.0,
        km in 0.5f64..5.0,
        g_ratio in 15.0f64..40.0,
        frac in 0.2f64..0.8,
        det_frac in -0.3f64..0.3,
    ) {
        let g = g_ratio * ka.max(km);
        let p = params(g, ka, frac, km, det_frac * g);
        let modes = normal_modes_of(&p);
        let centre = 0.5 * (p.omega_a + p.omega_m);
        let grid = FrequencyGrid::centered(centre, 3.0 * p.g, 2001).unwrap();
        let power = spectrum_of(&p, grid).power();
        let mut minima = local_minima(&power);
        minima.sort_by(|&a, &b| power[a].total_cmp(&power[b]));
        prop_assert!(minima.len() >= 2);
        let mut dips = [grid.at(minima[0]), grid.at(minima[1])];
        dips.sort_by(f64::total_cmp);
        prop_assert!((dips[0] - modes.omega_minus.re).abs() <= grid.step());
        prop_assert!((dips[1] - modes.omega_plus.re).abs() <= grid.step());
    }

    #[test]
    fn strong_label_implies_two_minima(
        ka in 0.1f64..10.0,
        km in 0.1f64..10.0,
        g_ratio in 1.0f64..3.0,
        frac in 0.05f64..=1.0,
    ) {
        let g = g_ratio * ka.max(km);
        prop_assume!(g > 0.5 * (ka + km));
        let sys = system(g, ka, frac * ka, km);
        prop_assert_eq!(classify(&sys).regime, Regime::Strong);
        let p = sys.mode_parameters();
        let half_span = p.g + 5.0 * p.kappa_a.max(p.kappa_m);
        let grid = FrequencyGrid::centered(F0, half_span, 8001).unwrap();
        let minima = local_minima(&spectrum_of(&p, grid).power());
        prop_assert_eq!(minima.len(), 2);
        prop_assert!(grid.at(minima[0]) < F0 && grid.at(minima[1]) > F0);
    }

    #[test]
    fn mit_height_matches_reflection(c in 0.01f64..100.0, km in 0.01f64..1.0, ratio in 2.0f64..200.0) {
        let ka = ratio * km;
        let g = (c * ka * km).sqrt();
        let sys = system(g, ka, 0.5 * ka, km);
        let obs = mit_observables(&sys);
        prop_assert!(obs.applies());
        let r2 = reflection(&sys, F0).norm_sqr();
        prop_assert!((obs.height - r2).abs() <= 1e-12);
    }

    #[test]
    fn exactly_one_label(g in 1e-3f64..1e3, ka in 1e-3f64..1e3, km in 1e-3f64..1e3) {
        prop_assume!(g != ka && g != km);
        let (regime, _) = classify_rates(g, ka, km);
        let fired = [
            g > ka && g > km,
            g < ka && g > km,
            g > ka && g < km,
            g < ka && g < km,
        ];
        prop_assert_eq!(fired.iter().filter(|&&f| f).count(), 1);
        let expected = [
            Regime::Strong,
            Regime::MagneticallyInducedTransparency,
            Regime::Purcell,
            Regime::Weak,
        ][fired.iter().position(|&f| f).unwrap()];
        prop_assert_eq!(regime, expected);
    }

    #[test]
    fn label_invariant_under_rescaling(
        g in 1e-3f64..1e3,
        ka in 1e-3f64..1e3,
        km in 1e-3f64..1e3,
        scale in 1e-3f64..1e3,
    ) {
        let (a, _) = classify_rates(g, ka, km);
        let (b, _) = classify_rates(g * scale, ka * scale, km * scale);
        prop_assert_eq!(a, b);
    }
}

#[test]
fn usc_flag_depends_on_g_over_omega_only() {
    let base = classify(&system(300.0, 30.0, 15.0, 15.0));
    assert!(!base.usc);
    let usc = classify(&system(400.0, 40.0, 20.0, 20.0));
    assert_eq!(usc.regime, base.regime);
    assert!(usc.usc);
}

#[test]
fn purcell_lorentzian_linewidth() {
    // kappa_m >= 10 g, where the adiabatic closed form holds
    for &(ka, km, c) in &[(1.0f64, 200.0f64, 1.0f64), (0.5, 50.0, 1.0), (2.0, 400.0, 0.5), (1.0, 500.0, 3.0)] {
        let g = (c * ka * km).sqrt();
        let sys = system(g, ka, 0.5 * ka, km);
        let expected = purcell_kappa(&sys).kappa_eff;
        let p = sys.mode_parameters();
        let grid = FrequencyGrid::centered(F0, 5.0 * expected, 1001).unwrap();
        let data = FitData::power(grid.omegas(), spectrum_of(&p, grid).power()).unwrap();
        let init = init_guess_lorentzian(&data).unwrap();
        let problem = problem_with_defaults(Model::Lorentzian, data, &init, &[]).unwrap();
        let result = fit(&problem, &init).unwrap();
        assert!(result.converged);
        let width = result.get(Param::Width).unwrap();
        let rel = width / expected - 1.0;
        assert!(rel.abs() < 0.02, "ka={ka} km={km} C={c}: width/kappa_eff - 1 = {rel:.4}");
    }
}

#[test]
fn purcell_width_tracks_slow_eigenvalue_outside_adiabatic_limit() {
    // kappa_m / g ~ 4: the closed form is ~6% low but the slow eigenmode is exact
    let (ka, km, c) = (1.07f64, 19.0f64, 0.95f64);
    let g = (c * ka * km).sqrt();
    let sys = system(g, ka, 0.5 * ka, km);
    let p = sys.mode_parameters();
    let modes = normal_modes_of(&p);
    let slow = -modes.omega_minus.im.max(modes.omega_plus.im);
    let grid = FrequencyGrid::centered(F0, 5.0 * slow, 1001).unwrap();
    let data = FitData::power(grid.omegas(), spectrum_of(&p, grid).power()).unwrap();
    let init = init_guess_lorentzian(&data).unwrap();
    let problem = problem_with_defaults(Model::Lorentzian, data, &init, &[]).unwrap();
    let width = fit(&problem, &init).unwrap().get(Param::Width).unwrap();
    assert!((width / slow - 1.0).abs() < 0.02, "width/slow - 1 = {}", width / slow - 1.0);
    assert!(width / purcell_kappa(&sys).kappa_eff - 1.0 > 0.04);
}
