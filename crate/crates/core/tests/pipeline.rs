use std::sync::Arc;

use proptest::prelude::*;
use randhyp::asymptotics::sample_matrix;
use randhyp::characteristics::{arclength_characteristics, determinacy_domain, ArcLength};
use randhyp::fields::{sample_brownian, Grid1D, SampledProcess};
use randhyp::hypsolve::{domain_grid, solve_system, HyperbolicProblem, SolveOptions};
use randhyp::mollify::{embed_path, Analytic, Axis, Mollifier, MollifierSpec, Profile, SmoothField};
use randhyp::scenarios::{self, cone_overlap, AdditiveNoiseSpec, ScenarioSpec};

#[test]
fn embedded_brownian_derivative_is_consistent() {
    let moll = Mollifier::new(MollifierSpec::default()).unwrap();
    let eps = 0.05;
    let grid = Grid1D::with_max_step(-1.0, 2.0, eps / 8.0).unwrap();
    let w = Arc::new(sample_brownian(grid, 5).unwrap());
    let emb = embed_path(w, &moll, eps, Axis::X).unwrap();
    let d = emb.clone().derivative(1);
    // central difference of the embedding against its exact derivative
    for x in [0.0, 0.3, 0.9] {
        let h = 1e-4;
        let fd = (emb.value(x + h, 0.0).unwrap() - emb.value(x - h, 0.0).unwrap()) / (2.0 * h);
        assert!((fd - d.value(x, 0.0).unwrap()).abs() < 1e-4 * (1.0 + fd.abs()));
    }
}

#[test]
fn slope_one_curve_characteristics() {
    let moll = Mollifier::new(MollifierSpec::default()).unwrap();
    let eps = 0.02;
    let grid = Grid1D::with_max_step(-2.0, 2.0, eps / 8.0).unwrap();
    let line = Arc::new(SampledProcess::deterministic(grid, |x| x));
    let cp = embed_path(line, &moll, eps, Axis::X).unwrap().derivative(1);
    let arc = ArcLength::tabulate(&cp, -1.5, 1.5, eps / 16.0).unwrap();
    for x in [-0.5, 0.0, 0.4] {
        let (back, fwd) = arclength_characteristics(&arc, x, 0.3).unwrap();
        assert!((back - (x - 0.3 / 2f64.sqrt())).abs() < 1e-8);
        assert!((fwd - (x + 0.3 / 2f64.sqrt())).abs() < 1e-8);
    }
}

#[test]
fn adding_samples_keeps_existing_ones() {
    let sampler = |s: u64| -> randhyp::error::Result<Vec<f64>> {
        let g = Grid1D::new(0.0, 1.0, 33)?;
        Ok(sample_brownian(g, s)?.values)
    };
    let small = sample_matrix(&sampler, 40, 99).unwrap();
    let large = sample_matrix(&sampler, 130, 99).unwrap();
    assert_eq!(&large[..40], &small[..]);
}

#[test]
fn scenario_reruns_are_identical() {
    let spec = ScenarioSpec::AdditiveNoiseWave(AdditiveNoiseSpec {
        eps: 0.05,
        samples: 200,
        cauchy_eps: vec![0.2, 0.1, 0.05],
        cauchy_samples: 100,
        max_seconds: None,
        ..AdditiveNoiseSpec::default()
    });
    let a = scenarios::run(&spec, 8).unwrap();
    let b = scenarios::run(&spec, 8).unwrap();
    assert_eq!(a.tables, b.tables);
    assert_eq!(a.interchange, b.interchange);
    let c = scenarios::run(&spec, 9).unwrap();
    assert_ne!(a.tables, c.tables);
}

#[test]
fn every_default_spec_validates() {
    use randhyp::scenarios::*;
    let specs = [
        ScenarioSpec::Calibration(Default::default()),
        ScenarioSpec::Gronwall(Default::default()),
        ScenarioSpec::Ogawa(Default::default()),
        ScenarioSpec::AdditiveNoiseWave(Default::default()),
        ScenarioSpec::GeometricWave(Default::default()),
        ScenarioSpec::RandomSpeedWave(Default::default()),
        ScenarioSpec::Classifier(Default::default()),
        ScenarioSpec::Mollifier(Default::default()),
        ScenarioSpec::Custom(Default::default()),
    ];
    assert_eq!(specs.len(), SCENARIOS.len());
    for (s, (name, _)) in specs.iter().zip(SCENARIOS) {
        assert_eq!(s.name(), *name);
        s.validate().unwrap();
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn transport_shifts_data(amp in 0.2f64..2.0, centre in -0.5f64..0.5, width in 0.3f64..1.5, speed in -1.5f64..1.5) {
        let u0 = Profile::Gaussian { amplitude: amp, centre, width };
        let problem = HyperbolicProblem::transport(vec![Analytic::constant(speed)], vec![Analytic::of_x(u0.clone())]).unwrap();
        let dom = determinacy_domain(&problem.lambda, 2.0, 0.5).unwrap();
        let err = |nx: usize, nt: usize| {
            let sol = solve_system(&problem, &dom, domain_grid(&dom, nx, nt).unwrap(), &SolveOptions::default()).unwrap();
            sol.nodes()
                .map(|(j, n)| {
                    let (x, t) = (sol.grid.x.node(j), sol.grid.t.node(n));
                    (sol.node(0, j, n).unwrap() - u0.eval(x - speed * t, 0)).abs()
                })
                .fold(0.0, f64::max)
        };
        let (coarse, fine) = (err(81, 21), err(161, 41));
        // third order in the grid step
        prop_assert!(coarse < 1e-2 * amp, "{}", coarse);
        prop_assert!(fine * 6.0 < coarse || fine < 1e-10, "{} {}", coarse, fine);
    }

    #[test]
    fn cone_overlap_is_symmetric_and_bounded(x1 in -2.0f64..2.0, t1 in 0.1f64..2.0, x2 in -2.0f64..2.0, t2 in 0.1f64..2.0) {
        let ab = cone_overlap([x1, t1], [x2, t2]);
        let ba = cone_overlap([x2, t2], [x1, t1]);
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab >= 0.0);
        prop_assert!(ab <= t1.min(t2).powi(2) + 1e-12);
    }

    #[test]
    fn constant_paths_embed_exactly(c in -3.0f64..3.0, order in prop::sample::select(vec![0u32, 2, 4, 6])) {
        let moll = Mollifier::new(MollifierSpec { order, ..MollifierSpec::default() }).unwrap();
        let grid = Grid1D::with_max_step(-2.0, 2.0, 0.1 / 8.0).unwrap();
        let p = Arc::new(SampledProcess::deterministic(grid, move |_| c));
        let emb = embed_path(p, &moll, 0.1, Axis::X).unwrap();
        let d = emb.clone().derivative(1);
        for x in [-0.2, 0.0, 0.25] {
            prop_assert!((emb.value(x, 0.0).unwrap() - c).abs() < 1e-8);
            prop_assert!(d.value(x, 0.0).unwrap().abs() < 1e-8);
        }
    }
}
