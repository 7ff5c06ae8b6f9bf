#![allow(dead_code)]

use num_rational::BigRational;
use proptest::prelude::*;
use sofic_spectra::group::GroupSpec;
use sofic_spectra::operator::LocalRule;
use sofic_spectra::scalar::Value;

/// Parameters of a site rule with hopping range one: a potential per symbol
/// and one Gaussian rational per generator pair.
#[derive(Debug, Clone)]
pub struct RuleSpec {
    pub lattice: bool,
    pub n: usize,
    pub potential: Vec<(i64, i64)>,
    pub hops: Vec<(i64, i64)>,
}

impl RuleSpec {
    pub fn group(&self) -> GroupSpec {
        if self.lattice {
            GroupSpec::lattice(self.n).unwrap()
        } else {
            GroupSpec::free(self.n).unwrap()
        }
    }

    pub fn rule(&self) -> LocalRule {
        let group = self.group();
        let ball = group.ball(1).unwrap();
        let mut values = vec![Vec::new(); ball.len()];
        values[ball.identity_index()] = self.potential.iter().map(|&(p, q)| Value::ratio(p, q)).collect();
        for s in 0..group.num_generators() {
            let (re, im) = self.hops[s / 2];
            let h = Value::exact(quarter(re), quarter(im));
            let h = if s % 2 == 0 { h } else { h.conj() };
            let k = ball.position(group.generator(s)).unwrap();
            values[k] = vec![h; self.potential.len()];
        }
        LocalRule::site("random", group, 1, self.potential.len(), values).unwrap()
    }
}

fn quarter(p: i64) -> BigRational {
    BigRational::new(p.into(), 4.into())
}

pub fn rule_spec() -> impl Strategy<Value = RuleSpec> {
    (any::<bool>(), 1usize..=2, 1usize..=3).prop_flat_map(|(lattice, n, k)| {
        (
            prop::collection::vec((-8i64..=8, 1i64..=4), k),
            prop::collection::vec((-6i64..=6, -6i64..=6), n),
        )
            .prop_map(move |(potential, hops)| RuleSpec { lattice, n, potential, hops })
    })
}

pub fn symbols(n: usize, k: usize, seed: u64) -> Vec<u8> {
    let mut x = seed | 1;
    (0..n)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            (x % k as u64) as u8
        })
        .collect()
}
