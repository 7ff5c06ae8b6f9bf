use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sofic_spectra::group::GroupSpec;
use sofic_spectra::measure::{
    empirical_window_distribution, finite_pushforward, lift_configuration, sample_configuration, target_marginal,
    MeasureModel,
};
use sofic_spectra::sofic::{good_vertices, random_permutation_approximation, torus_approximation};

fn weights() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1u32..20, 2..=3).prop_map(|w| {
        let t: u32 = w.iter().sum();
        w.into_iter().map(|x| f64::from(x) / f64::from(t)).collect()
    })
}

fn model() -> impl Strategy<Value = MeasureModel> {
    prop_oneof![
        weights().prop_map(|w| MeasureModel::iid(w).unwrap()),
        (1usize..=3, any::<u64>()).prop_map(|(m, bits)| {
            let pattern = (0..m).map(|i| ((bits >> i) & 1) as u8).collect();
            lift_configuration(&[m], pattern).unwrap()
        }),
        (weights(), 0u8..2).prop_map(|(w, s)| {
            let c = MeasureModel::constant(2, s).unwrap();
            MeasureModel::mixture(vec![(0.3, c), (0.7, MeasureModel::iid(vec![w[0], 1.0 - w[0]]).unwrap())]).unwrap()
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn empirical_distribution_is_a_count(rank in 1usize..=2, n in 1usize..200, radius in 0usize..=2, seed in any::<u64>()) {
        let sigma = random_permutation_approximation(rank, n, seed).unwrap();
        let model = MeasureModel::iid(vec![0.25, 0.5, 0.25]).unwrap();
        let rho = sample_configuration(&model, &sigma, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let dist = empirical_window_distribution(&rho, &sigma, radius).unwrap();
        let mut count = 0.0;
        for (_, p) in dist.support() {
            let c = p * n as f64;
            prop_assert!((c - c.round()).abs() < 1e-9);
            count += c.round();
        }
        prop_assert_eq!(count as usize, n);
        prop_assert!((dist.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn marginals_are_coherent(model in model(), radius in 1usize..=2) {
        let group = GroupSpec::lattice(1).unwrap();
        let outer = target_marginal(&model, &group, radius).unwrap();
        let inner = target_marginal(&model, &group, radius - 1).unwrap();
        let big = group.ball(radius).unwrap();
        let small = group.ball(radius - 1).unwrap();
        let pos: Vec<usize> = small.elements().iter().map(|g| big.position(g).unwrap()).collect();
        let mut summed: BTreeMap<Vec<u8>, f64> = BTreeMap::new();
        for (pat, p) in outer.support() {
            *summed.entry(pos.iter().map(|&i| pat[i]).collect()).or_default() += p;
        }
        for (pat, p) in inner.support() {
            prop_assert!((summed.get(pat).copied().unwrap_or(0.0) - p).abs() < 1e-12);
        }
        prop_assert!((summed.values().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn free_group_marginals_are_coherent(rank in 1usize..=2, w in weights()) {
        let group = GroupSpec::free(rank).unwrap();
        let model = MeasureModel::iid(w).unwrap();
        let outer = target_marginal(&model, &group, 1).unwrap();
        let inner = target_marginal(&model, &group, 0).unwrap();
        let e = group.ball(1).unwrap().identity_index();
        let mut summed: BTreeMap<u8, f64> = BTreeMap::new();
        for (pat, p) in outer.support() {
            *summed.entry(pat[e]).or_default() += p;
        }
        for (pat, p) in inner.support() {
            prop_assert!((summed[&pat[0]] - p).abs() < 1e-12);
        }
    }

    #[test]
    fn pushforward_matches_target_at_good_vertices(
        dim in 1usize..=2,
        radius in 1usize..=2,
        w in weights(),
        v in any::<prop::sample::Index>(),
    ) {
        let side = 2 * radius + 2;
        let sigma = torus_approximation(dim, side).unwrap();
        let good = good_vertices(&sigma, radius).unwrap();
        let model = MeasureModel::iid(w).unwrap();
        let target = target_marginal(&model, sigma.group(), radius).unwrap();
        let ball = sigma.group().ball(radius).unwrap();
        let words = sigma.ball_words(&ball);
        let v = v.index(sigma.n_vertices());
        prop_assert!(good.is_good(v));
        let push = finite_pushforward(&model, &sigma, &words, v, radius, 1 << 24).unwrap();
        prop_assert!(push.total_variation(&target) < 1e-12);
    }
}
