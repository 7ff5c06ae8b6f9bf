mod common;

use common::{rule_spec, symbols};
use proptest::prelude::*;
use sofic_spectra::group::GroupElement;
use sofic_spectra::measure::{Configuration, MeasureModel};
use sofic_spectra::operator::{
    assemble_induced, coefficient_at, expected_moment, power_diagonal_check, MomentMode,
};
use sofic_spectra::sofic::{
    edge_graph, good_vertices, random_permutation_approximation, torus_approximation, SoficApproximation,
};

fn approximation(lattice: bool, n: usize, size: usize, seed: u64) -> SoficApproximation {
    if lattice {
        let side = if n == 1 { size.max(3) } else { (size as f64).sqrt() as usize + 3 };
        torus_approximation(n, side).unwrap()
    } else {
        random_permutation_approximation(n, size.max(2), seed).unwrap()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn assembly_respects_zero_pattern(spec in rule_spec(), size in 4usize..150, seed in any::<u64>()) {
        let rule = spec.rule();
        let sigma = approximation(spec.lattice, spec.n, size, seed);
        let n = sigma.n_vertices();
        let rho = Configuration::new(symbols(n, spec.potential.len(), seed));
        let good = good_vertices(&sigma, 2).unwrap();
        let h = assemble_induced(&rule, &sigma, &rho, &good).unwrap();
        h.check_hermitian().unwrap();
        let (f1, f2) = rule.value_sets();
        let graph = edge_graph(&sigma);
        for v in 0..n {
            if !good.is_good(v) {
                prop_assert!(h.row(v).is_empty());
            }
            let near = graph.distances_from(v, 1);
            for (w, x) in h.row(v) {
                let w = *w as usize;
                prop_assert!(!x.is_zero());
                prop_assert!(good.is_good(v) && good.is_good(w));
                prop_assert!(near.get(&w).is_some_and(|&d| d <= 1));
                let pool = if w == v { &f1 } else { &f2 };
                prop_assert!(pool.contains(x), "{} not in value set", x);
            }
        }
    }

    #[test]
    fn entries_are_coefficients_of_pulled_back_windows(spec in rule_spec(), size in 4usize..150, seed in any::<u64>()) {
        let rule = spec.rule();
        let sigma = approximation(spec.lattice, spec.n, size, seed);
        let n = sigma.n_vertices();
        let rho = Configuration::new(symbols(n, spec.potential.len(), seed));
        let h = assemble_induced(&rule, &sigma, &rho, &good_vertices(&sigma, 2).unwrap()).unwrap();
        let four = good_vertices(&sigma, 4).unwrap();
        let ball = rule.ball();
        for v in (0..n).filter(|&v| four.is_good(v)) {
            for g in 0..ball.len() {
                let w = sigma.element_image(ball.element(g), v);
                let c = coefficient_at(&rule, &sigma, &rho, v, g).unwrap();
                match h.entry(v, w) {
                    Some(x) => prop_assert_eq!(x, &c),
                    None => prop_assert!(c.is_zero()),
                }
            }
        }
    }

    #[test]
    fn torus_assembly_commutes_with_translation(
        spec in rule_spec(),
        side in 5usize..12,
        shift in prop::collection::vec(-3i64..=3, 2),
        seed in any::<u64>(),
    ) {
        prop_assume!(spec.lattice);
        let rule = spec.rule();
        let sigma = torus_approximation(spec.n, side).unwrap();
        let n = sigma.n_vertices();
        let rho = Configuration::new(symbols(n, spec.potential.len(), seed));
        let t = GroupElement::Lattice(shift[..spec.n].to_vec());
        let moved: Vec<usize> = (0..n).map(|v| sigma.element_image(&t, v)).collect();
        let shifted = Configuration::new(moved.iter().map(|&u| rho.at(u)).collect());
        let good = good_vertices(&sigma, 2).unwrap();
        let h = assemble_induced(&rule, &sigma, &rho, &good).unwrap();
        let hs = assemble_induced(&rule, &sigma, &shifted, &good).unwrap();
        for v in 0..n {
            for (w, x) in hs.row(v) {
                prop_assert_eq!(h.entry(moved[v], moved[*w as usize]), Some(x));
            }
            prop_assert_eq!(hs.row(v).len(), h.row(moved[v]).len());
        }
    }

    #[test]
    fn power_diagonals_agree_exactly(spec in rule_spec(), k in 1usize..=4, size in 4usize..120, seed in any::<u64>()) {
        prop_assume!(spec.n == 1 || k <= 2);
        let rule = spec.rule();
        let sigma = approximation(spec.lattice, spec.n, size, seed);
        let rho = Configuration::new(symbols(sigma.n_vertices(), spec.potential.len(), seed));
        let report = power_diagonal_check(&rule, &sigma, &rho, k).unwrap();
        prop_assert!(report.exact);
        prop_assert!(report.exact_agreement);
        prop_assert_eq!(report.max_discrepancy, 0.0);
        if spec.lattice && sigma.n_vertices() >= (8 * k + 2).pow(spec.n as u32) {
            prop_assert_eq!(report.tested_fraction, 1.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn exact_and_sampled_moments_agree(spec in rule_spec(), k in 1usize..=4, p in 1u32..10, seed in any::<u64>()) {
        prop_assume!(spec.n == 1 || k <= 3);
        let rule = spec.rule();
        let w = f64::from(p) / 10.0;
        let mut weights = vec![w];
        weights.extend(std::iter::repeat_n((1.0 - w) / (spec.potential.len() - 1).max(1) as f64, spec.potential.len() - 1));
        if spec.potential.len() == 1 {
            weights = vec![1.0];
        }
        let model = MeasureModel::iid(weights).unwrap();
        let exact = expected_moment(&rule, &model, k, MomentMode::default()).unwrap();
        let mc = expected_moment(&rule, &model, k, MomentMode::MonteCarlo { samples: 2000, seed }).unwrap();
        prop_assert!(
            (exact.value - mc.value).abs() <= 5.0 * mc.std_error + 1e-9 * exact.value.abs().max(1.0),
            "exact {} sampled {} se {}", exact.value, mc.value, mc.std_error
        );
    }
}
