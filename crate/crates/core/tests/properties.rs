use std::path::Path;

use proptest::prelude::*;

use singular_renewal::characteristics::build_singular_support;
use singular_renewal::function::SmoothFunction;
use singular_renewal::jet::Jet;
use singular_renewal::model::{DataAtom, ModelConfig};
use singular_renewal::oracle::solve_regularized;
use singular_renewal::singular::{delta_product_coeffs, leibniz_multiply};
use singular_renewal::smooth_solver::{solve, SolveOptions};
use singular_renewal::parse_config;

const RATES: [&str; 4] = ["0", "-0.3 - 0.1*cos(x + t)", "flat(x - 0.2)*flat(1 - x)", "flat(t)*(1 + t)"];

fn atom(max_order: u32) -> impl Strategy<Value = DataAtom> {
    (-2.0..2.0f64, 0..=max_order, 0.05..0.95f64).prop_map(|(c, o, x)| DataAtom::new(c, o, x))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trips_through_toml(
        horizon in 0.5..3.0f64,
        p in 0..2usize,
        initial in prop::collection::vec(atom(3), 0..3),
        fertility in prop::collection::vec(atom(2), 0..2),
        tol in 1e-12..1e-6f64,
    ) {
        let mut cfg = ModelConfig::empty(1.0, horizon);
        cfg.p = SmoothFunction::expression(RATES[p]).unwrap();
        cfg.b_r = SmoothFunction::expression(RATES[2]).unwrap();
        cfg.c_r = SmoothFunction::expression(RATES[3]).unwrap();
        cfg.initial_atoms = initial;
        cfg.fertility_atoms = fertility;
        cfg.numerics.tolerance = tol;
        let text = cfg.to_toml().unwrap();
        let back = parse_config(&text, Path::new(".")).unwrap();
        let again = parse_config(&back.to_toml().unwrap(), Path::new(".")).unwrap();
        prop_assert_eq!(&again, &back);
        prop_assert_eq!(&back.numerics, &cfg.numerics);
        prop_assert_eq!(&back.p, &cfg.p);
        let kept = |atoms: &[DataAtom]| atoms.iter().filter(|a| a.coefficient != 0.0).count();
        prop_assert_eq!(back.initial_atoms.len(), kept(&cfg.initial_atoms));
        prop_assert_eq!(back.fertility_atoms.len(), kept(&cfg.fertility_atoms));
        prop_assert!(back.initial_atoms.windows(2).all(|w| w[0].location <= w[1].location));
    }

    #[test]
    fn event_times_do_not_depend_on_atom_order(
        xs in prop::collection::vec(0.05..0.5f64, 1..3),
        ys in prop::collection::vec(0.3..0.95f64, 1..3),
    ) {
        let mut cfg = ModelConfig::empty(1.0, 2.0);
        cfg.initial_atoms = xs.iter().map(|&x| DataAtom::new(1.0, 0, x)).collect();
        cfg.fertility_atoms = ys.iter().map(|&y| DataAtom::new(1.0, 0, y)).collect();
        let forward = build_singular_support(&cfg);
        cfg.initial_atoms.reverse();
        cfg.fertility_atoms.reverse();
        let backward = build_singular_support(&cfg);
        match (forward, backward) {
            (Ok(a), Ok(b)) => {
                let tol = cfg.event_tolerance();
                let (ta, tb) = (a.distinct_times(tol), b.distinct_times(tol));
                prop_assert_eq!(ta.len(), tb.len());
                for (x, y) in ta.iter().zip(&tb) {
                    prop_assert!((x - y).abs() <= tol);
                }
                prop_assert!(ta.windows(2).all(|w| w[0] < w[1]));
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "gate depends on atom order"),
        }
    }

    #[test]
    fn unit_envelope_product_is_a_single_derivative(n in 0..4u32, m in 0..4u32) {
        let unit = Jet::constant(4, 4, 1.0);
        let f = delta_product_coeffs(n, m, &unit);
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        for (k, c) in f.iter().enumerate() {
            let expected = if k as u32 == n + m { sign } else { 0.0 };
            prop_assert!((c - expected).abs() < 1e-12, "k = {} c = {}", k, c);
        }
    }

    #[test]
    fn leibniz_with_constant_factor_scales(atoms in prop::collection::vec(-3.0..3.0f64, 1..5), c in -2.0..2.0f64) {
        let mut derivs = vec![0.0; atoms.len()];
        derivs[0] = c;
        let out = leibniz_multiply(&atoms, &derivs);
        for (a, b) in atoms.iter().zip(&out) {
            prop_assert!((c * a - b).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn singular_constants_are_linear_in_initial_coefficient(
        lambda in -3.0..3.0f64,
        x_star in 0.1..0.4f64,
        order in 0..2u32,
    ) {
        let mut cfg = ModelConfig::empty(1.0, 1.2);
        cfg.p = SmoothFunction::expression(RATES[1]).unwrap();
        cfg.b_r = SmoothFunction::expression(RATES[2]).unwrap();
        cfg.c_r = SmoothFunction::expression(RATES[3]).unwrap();
        cfg.initial_atoms = vec![DataAtom::new(1.0, order, x_star)];
        cfg.fertility_atoms = vec![DataAtom::new(0.5, 0, 0.6)];
        let opts = SolveOptions { grid_step: Some(0.01), skip_residual: true };
        let base = solve(&cfg, &opts).unwrap();
        cfg.initial_atoms[0].coefficient = lambda;
        let scaled = solve(&cfg, &opts).unwrap();
        for (a, b) in base.terms.iter().zip(&scaled.terms) {
            for (ca, cb) in a.constants.iter().zip(&b.constants) {
                prop_assert!((lambda * ca - cb).abs() <= 1e-12 * ca.abs().max(1e-300) + 1e-300);
            }
        }
    }

    #[test]
    fn oracle_keeps_nonnegative_data_nonnegative(
        mass in 0.1..2.0f64,
        x_star in 0.2..0.5f64,
        e in 0.0..2.0f64,
        mortality in 0.0..1.0f64,
    ) {
        let mut cfg = ModelConfig::empty(1.0, 0.8);
        cfg.p = SmoothFunction::expression(&format!("-{mortality}*(1 + sin(x*t)^2)")).unwrap();
        cfg.b_r = SmoothFunction::expression(RATES[2]).unwrap();
        cfg.c_r = SmoothFunction::expression(RATES[3]).unwrap();
        cfg.initial_atoms = vec![DataAtom::new(mass, 0, x_star)];
        cfg.fertility_atoms = vec![DataAtom::new(e, 0, 0.7)];
        let sol = solve_regularized(&cfg, 0.02, 0.005).unwrap();
        prop_assert!(sol.min_value >= 0.0);
        prop_assert!(sol.v.iter().all(|v| *v >= 0.0));
    }
}
