use angio_core::grid::integrate;
use angio_core::harness::{check_c_bounds, check_comparison, check_positivity};
use angio_core::{
    picard_coupled, picard_pure, GridSpec, LatticeField, ModelParams, PhaseField, PicardOptions, Role, Schedule,
    SourceTrack, SpatialField,
};
use proptest::prelude::*;

const L: f64 = 4.0;

fn grid() -> GridSpec {
    GridSpec::new(1, 1, 32, 32, L, L).unwrap()
}

// Band-limited bump of unit mass, so the strict clamp never has ringing to remove.
fn bump(shift: f64, z: f64) -> f64 {
    (1.0 + (std::f64::consts::PI * (z - shift) / L).cos()).powi(4) / (2.0 * L * 35.0 / 8.0)
}

fn datum(cx: f64, cv: f64) -> PhaseField {
    PhaseField::from_fn(grid(), 0.0, |x, v| bump(cx, x[0]) * bump(cv, v[0]))
}

fn params(sigma: f64, gamma: f64, alpha1: f64, eta: f64) -> ModelParams {
    ModelParams {
        sigma,
        gamma,
        alpha1,
        eta,
        epsilon: 1.0,
        ..ModelParams::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pure_runs_stay_between_zero_and_the_heat_flow(
        sigma in 0.05..0.3f64,
        gamma in 0.0..2.0f64,
        cx in -1.0..1.0f64,
        cv in -1.0..1.0f64,
    ) {
        let p0 = datum(cx, cv);
        let schedule = Schedule::new(0.2, 0.02, 5).unwrap();
        let sol = picard_pure(&p0, &SourceTrack::None, &params(sigma, gamma, 0.0, 0.0), &schedule, &PicardOptions::default())
            .unwrap();
        prop_assert!(sol.diagnostics.converged());
        prop_assert!(check_positivity("positivity_p", &sol.p, 1e-12).unwrap().passed());
        prop_assert!(check_comparison("comparison_upper", &sol.p, &sol.upper, 1e-10).unwrap().passed());
        let m0 = integrate(&p0).unwrap();
        for f in sol.p.iter() {
            prop_assert!(integrate(f).unwrap() <= m0 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn coupled_runs_keep_c_in_range_and_p_under_the_majorant(
        gamma in 0.0..2.0f64,
        alpha1 in 0.0..2.0f64,
        eta in 0.0..2.0f64,
        cv in -1.0..1.0f64,
    ) {
        let g = grid();
        let p0 = datum(0.0, cv);
        let c0 = SpatialField::from_fn(g, 0.0, Role::C, |x| 0.5 + 0.25 * bump(1.0, x[0]));
        let schedule = Schedule::new(0.2, 0.02, 5).unwrap();
        let sol = picard_coupled(&p0, &c0, &params(0.1, gamma, alpha1, eta), &schedule, &PicardOptions::default())
            .unwrap();
        prop_assert!(sol.diagnostics.converged());
        prop_assert!(check_positivity("positivity_p", &sol.p, 1e-12).unwrap().passed());
        prop_assert!(check_comparison("comparison_majorant", &sol.p, &sol.majorant, 1e-10).unwrap().passed());
        let c_sup = c0.max_abs();
        prop_assert!(check_c_bounds(&sol.c, &sol.c_hat, c_sup, 1e-12).unwrap().passed());
    }
}
