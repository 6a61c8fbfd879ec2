use std::f64::consts::PI;

use belllab_core::engine::{run_experiment_with, Geometry, RunConfig};
use belllab_core::models::{PearleModel, Threshold};
use belllab_core::oracle::{
    pearle_quadrature, solve_threshold, uniform_grid, verify_threshold, SolverOptions, UniformDensity,
};
use belllab_core::stats::{correlation_full, correlation_postselected};
use belllab_core::Error;

#[test]
fn solved_threshold_meets_tolerance_everywhere() {
    let grid = uniform_grid(31);
    let solved = solve_threshold(&grid, 1e-4, &SolverOptions::default()).unwrap();
    assert_eq!(solved.residuals.len(), grid.len());
    assert!(solved.residuals.iter().all(|r| r.abs() <= 1e-4));
    assert!(solved.max_residual <= 1e-4);

    let cdf = &solved.threshold.cdf;
    assert_eq!(cdf[0], 0.0);
    assert_eq!(*cdf.last().unwrap(), 1.0);
    assert!(cdf.windows(2).all(|w| w[1] >= w[0]));
    assert!(solved.weights.iter().all(|w| *w >= 0.0));
    assert!((solved.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn solved_threshold_is_certified_independently() {
    let solved = solve_threshold(&uniform_grid(31), 1e-4, &SolverOptions::default()).unwrap();
    let verdict = verify_threshold(&solved.as_threshold(), &UniformDensity, &uniform_grid(31), 1e-4).unwrap();
    assert!(verdict.is_certified(), "{verdict:?}");
}

#[test]
fn solved_threshold_monte_carlo_at_sixty_degrees() {
    let solved = solve_threshold(&uniform_grid(31), 1e-4, &SolverOptions::default()).unwrap();
    let model = PearleModel::new(solved.as_threshold());
    let mut config = RunConfig::new("pearle", Geometry::Grid { angles: vec![PI / 3.0] }, 9);
    config.slots = 400_000;
    let out = run_experiment_with(&model, &config).unwrap();
    let c = correlation_postselected(&out.tally, 0).unwrap();
    assert!((c.value + 0.5).abs() <= 3.0 * c.se, "{c:?}");
}

#[test]
fn solver_reports_non_convergence() {
    let err = solve_threshold(
        &uniform_grid(31),
        1e-12,
        &SolverOptions {
            bins: 4,
            ..SolverOptions::default()
        },
    )
    .unwrap_err();
    match err {
        Error::Solver {
            max_residual,
            residuals,
            ..
        } => {
            assert!(max_residual > 1e-12);
            assert_eq!(residuals.len(), 31);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn quadrature_matches_monte_carlo_on_thirteen_angles() {
    let angles = uniform_grid(13);
    let mut config = RunConfig::new("pearle", Geometry::Grid { angles: angles.clone() }, 2024);
    config.slots = 200_000;
    let model = PearleModel::new(Threshold::ClosedForm);
    let out = run_experiment_with(&model, &config).unwrap();
    for (cell, &theta) in angles.iter().enumerate() {
        let q = pearle_quadrature(theta, &Threshold::ClosedForm, &UniformDensity).unwrap();
        let counts = out.tally.cell(cell).unwrap();
        let n = counts.n_slots as f64;
        let p_mc = counts.n_detected_pairs as f64 / n;
        let p = q.detection_probability;
        let p_se = (p * (1.0 - p) / n).sqrt();
        assert!((p_mc - p).abs() <= 4.0 * p_se, "p at {theta}: {p_mc} vs {p}");
        let c_mc = correlation_postselected(&out.tally, cell).unwrap();
        let c = q.correlation.unwrap();
        assert!((c_mc.value - c).abs() <= 4.0 * c_mc.se, "c at {theta}: {c_mc:?} vs {c}");
        // The full-ensemble correlation is the post-selected one scaled by p.
        let full = correlation_full(&out.tally, cell).unwrap();
        assert!((full.value - p * c).abs() <= 4.0 * full.se + 1e-12);
    }
}

#[test]
fn antipodal_antisymmetry_of_quadrature() {
    for theta in [0.1, 0.5, 1.0, 1.3] {
        let a = pearle_quadrature(theta, &Threshold::ClosedForm, &UniformDensity).unwrap();
        let b = pearle_quadrature(PI - theta, &Threshold::ClosedForm, &UniformDensity).unwrap();
        assert!((a.correlation.unwrap() + b.correlation.unwrap()).abs() < 1e-8);
        assert!((a.detection_probability - b.detection_probability).abs() < 1e-8);
    }
}
