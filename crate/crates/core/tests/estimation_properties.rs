use magnon_cavity::dynamics::{extract_lifetime, simulate_params, Drive, TimeGrid};
use magnon_cavity::estimation::{
    default_bounds, derived_quantities, fit, fit_field_map, init_guess, init_guess_decay, init_guess_field_map,
    problem_with_defaults, FitData, FitProblem, Model, Param, ParamValues,
};
use magnon_cavity::physics::{CavityMode, CoupledSystem, MagnonMode, ModeParameters};
use magnon_cavity::spectra::{field_map, spectrum_of, FrequencyGrid};
use magnon_cavity::TWO_PI;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const MHZ: f64 = TWO_PI * 1e6;
const MT: f64 = 1e-3;
const NS: f64 = 1e-9;
const FA: f64 = TWO_PI * 7.875e9;

fn noisy(values: &mut [f64], sigma: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).unwrap();
    for v in values {
        *v += normal.sample(&mut rng);
    }
}

fn map_system(g: f64) -> CoupledSystem {
    let cavity = CavityMode::new(FA, 2.67 * MHZ, 0.35 * 2.67 * MHZ, [0.043, 0.021, 0.009]).unwrap();
    let magnon = MagnonMode::yig(0.18e-3, 2.13 * MHZ).unwrap().with_offset(7.0 * MHZ).unwrap();
    CoupledSystem::new(cavity, magnon, g * MHZ, 0.281).unwrap()
}

fn map_data(g: f64, seed: u64) -> FitData {
    let sys = map_system(g);
    let fields: Vec<f64> = (0..31).map(|i| (279.5 + 0.1 * i as f64) * MT).collect();
    let grid = FrequencyGrid::centered(FA, 60.0 * MHZ, 601).unwrap();
    let map = field_map(&sys, &fields, grid).unwrap();
    let (mut b, mut w, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for (row, &field) in map.power.iter().zip(&fields) {
        for (i, &p) in row.iter().enumerate() {
            b.push(field);
            w.push(grid.at(i));
            y.push(p);
        }
    }
    noisy(&mut y, 0.01, seed);
    FitData::map(b, w, y).unwrap()
}

#[test]
fn field_map_recovers_gyromagnetic_ratio_and_resonance_field() {
    let data = map_data(10.8, 5);
    let init = init_guess_field_map(&data).unwrap();
    let result = fit_field_map(&data, &init).unwrap();
    assert!(result.converged, "{:?}", result.termination);
    let gamma = result.get(Param::Gamma).unwrap();
    let truth = TWO_PI * 28e9;
    assert!((gamma / truth - 1.0).abs() < 0.01, "gamma/2pi = {} MHz/T", gamma / TWO_PI / 1e6);
    let b_res = (result.get(Param::OmegaA).unwrap() - result.get(Param::OmegaM0).unwrap()) / gamma;
    assert!((b_res / MT - 281.0).abs() < 0.5, "B_res = {} mT", b_res / MT);
    assert!((result.get(Param::G).unwrap() / MHZ / 10.8 - 1.0).abs() < 0.02);
}

#[test]
fn uncoupled_map_gives_coupling_consistent_with_zero() {
    let data = map_data(0.0, 5);
    let sys = map_system(0.0);
    let mut init = ParamValues::new();
    init.insert(Param::OmegaA, FA);
    init.insert(Param::Gamma, sys.magnon().gamma());
    init.insert(Param::OmegaM0, sys.magnon().omega_m0());
    init.insert(Param::KappaA, 2.67 * MHZ);
    init.insert(Param::KappaA1, 0.35 * 2.67 * MHZ);
    init.insert(Param::KappaM, 2.13 * MHZ);
    init.insert(Param::G, 1.0 * MHZ);
    let problem =
        problem_with_defaults(Model::FieldMap, data, &init, &[Param::Gamma, Param::OmegaM0, Param::KappaM]).unwrap();
    let result = fit(&problem, &init).unwrap();
    assert!(result.converged);
    // the model depends on g only through g², so judge g² against its own error
    let g = result.get(Param::G).unwrap();
    let sigma_g = result.error(Param::G).unwrap();
    let g2 = g * g;
    let sigma_g2 = 2.0 * g * sigma_g;
    assert!(g2 <= 2.0 * sigma_g2, "g = {} +- {} MHz", g / MHZ, sigma_g / MHZ);
    assert!(g < 0.5 * MHZ);
}

fn strong_params(scale: f64) -> ModeParameters {
    ModeParameters {
        omega_a: scale * 7.0e9 * TWO_PI,
        omega_m: scale * (7.0e9 * TWO_PI + 1.0 * MHZ),
        kappa_a: scale * 2.67 * MHZ,
        kappa_a1: scale * 1.2 * MHZ,
        kappa_m: scale * 2.13 * MHZ,
        g: scale * 10.8 * MHZ,
    }
}

fn spectrum_data(p: &ModeParameters, half_span: f64, seed: u64) -> FitData {
    let grid = FrequencyGrid::centered(p.omega_a, half_span, 801).unwrap();
    let mut y = spectrum_of(p, grid).power();
    noisy(&mut y, 0.01, seed);
    FitData::power(grid.omegas(), y).unwrap()
}

#[test]
fn fit_is_scale_equivariant() {
    let mut outcomes = Vec::new();
    for scale in [1.0, 4.0] {
        let p = strong_params(scale);
        let data = spectrum_data(&p, 5.0 * p.g, 17);
        let init = init_guess(&data).unwrap();
        let problem = problem_with_defaults(Model::Spectrum, data, &init, &[]).unwrap();
        let result = fit(&problem, &init).unwrap();
        assert!(result.converged);
        let c = derived_quantities(&result).unwrap().cooperativity;
        outcomes.push((c, result.residual_norm, result.get(Param::G).unwrap() / scale));
    }
    let (c1, r1, g1) = outcomes[0];
    let (c2, r2, g2) = outcomes[1];
    assert!((c1 / c2 - 1.0).abs() < 1e-6, "C {c1} vs {c2}");
    assert!((r1 / r2 - 1.0).abs() < 1e-6, "residual {r1} vs {r2}");
    assert!((g1 / g2 - 1.0).abs() < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn accepted_steps_never_raise_cost_and_stay_in_bounds(
        seed in 0u64..1000,
        perturb in prop::collection::vec(-0.4f64..0.4, 6),
    ) {
        let p = strong_params(1.0);
        let data = spectrum_data(&p, 5.0 * p.g, seed);
        let truth = [
            (Param::OmegaA, p.omega_a, false),
            (Param::OmegaM, p.omega_m, false),
            (Param::KappaA, p.kappa_a, true),
            (Param::KappaA1, p.kappa_a1, true),
            (Param::KappaM, p.kappa_m, true),
            (Param::G, p.g, true),
        ];
        let mut init = ParamValues::new();
        let mut problem = FitProblem::new(Model::Spectrum, data.clone());
        for ((param, v, log), d) in truth.into_iter().zip(&perturb) {
            let start = if log { v * (1.0 + d) } else { v + d * p.g };
            init.insert(param, start);
            let b = default_bounds(param, v, &data).unwrap();
            let (lo, hi) = if log { (0.5 * v, 2.0 * v) } else { (b.lower, b.upper) };
            problem = problem.free(param, lo, hi);
        }
        let result = fit(&problem, &init).unwrap();
        for w in result.cost_history.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        for param in problem.free_params() {
            let b = problem.bounds(param).unwrap();
            let v = result.get(param).unwrap();
            prop_assert!(v >= b.lower && v <= b.upper, "{param} = {v} outside [{}, {}]", b.lower, b.upper);
        }
    }
}

#[test]
fn decay_fit_agrees_with_log_linear_lifetime() {
    let p = ModeParameters {
        omega_a: FA,
        omega_m: FA,
        kappa_a: 1.14 * MHZ,
        kappa_a1: 0.5 * MHZ,
        kappa_m: 20.0 * MHZ,
        g: 0.0,
    };
    let grid = TimeGrid::new(300.0 * NS, 0.05 * NS).unwrap();
    let trace = simulate_params(&p, &Drive::Impulse, &grid).unwrap();
    let lifetime = extract_lifetime(&trace, (10.0 * NS, 250.0 * NS)).unwrap();

    let keep: Vec<usize> = (0..trace.len()).filter(|&i| trace.t[i] >= 10.0 * NS && trace.t[i] <= 250.0 * NS).collect();
    let data = FitData::decay(
        keep.iter().map(|&i| trace.t[i]).collect(),
        keep.iter().map(|&i| trace.energy[i]).collect(),
    )
    .unwrap();
    let init = init_guess_decay(&data).unwrap();
    let problem = problem_with_defaults(Model::Decay, data, &init, &[]).unwrap();
    let result = fit(&problem, &init).unwrap();
    let tau = result.get(Param::Tau).unwrap();
    let expected = 1.0 / (2.0 * p.kappa_a);
    assert!((tau / expected - 1.0).abs() < 1e-6);
    assert!((lifetime.tau / expected - 1.0).abs() < 1e-6);
    assert!((tau / NS - 69.8).abs() < 0.7);
}
