//! Invariant measures on `𝒜^G` over a finite alphabet, their finite-volume
//! counterparts, pullback windows, empirical window distributions and the
//! local weak-* / local empirical convergence diagnostics.

use std::collections::{BTreeMap, HashSet, VecDeque};

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{CayleyBall, GroupElement, GroupSpec};
use crate::par::{self, Execution};
use crate::rng::rng_for;
use crate::sofic::{Provenance, QuotientAction, SoficApproximation};

/// Default cap on the number of patterns enumerated for exact marginals.
pub const DEFAULT_ENUMERATION_BUDGET: u128 = 1 << 22;

const WEIGHT_TOL: f64 = 1e-12;

/// Finite symbol set `𝒜`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    symbols: Vec<String>,
}

impl Alphabet {
    pub fn new(symbols: Vec<String>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::Measure("alphabet is empty".into()));
        }
        if symbols.len() > 256 {
            return Err(Error::Measure("alphabets are limited to 256 symbols".into()));
        }
        let distinct: HashSet<&String> = symbols.iter().collect();
        if distinct.len() != symbols.len() {
            return Err(Error::Measure("alphabet symbols must be distinct".into()));
        }
        Ok(Self { symbols })
    }

    /// The alphabet `{"0", ..., "k-1"}`.
    pub fn numeric(k: usize) -> Result<Self> {
        Self::new((0..k).map(|i| i.to_string()).collect())
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn index_of(&self, symbol: &str) -> Option<u8> {
        self.symbols.iter().position(|s| s == symbol).map(|i| i as u8)
    }
}

/// A finite configuration `ρ ∈ 𝒜^{V_n}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    symbols: Vec<u8>,
}

impl Configuration {
    pub fn new(symbols: Vec<u8>) -> Self {
        Self { symbols }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[u8] {
        &self.symbols
    }

    #[inline]
    pub fn at(&self, v: usize) -> u8 {
        self.symbols[v]
    }

    /// Short stable hash used for provenance records.
    pub fn digest(&self) -> u64 {
        use sha2::{Digest, Sha256};
        let h = Sha256::digest(&self.symbols);
        u64::from_le_bytes(h[..8].try_into().expect("sha256 is 32 bytes"))
    }
}

/// A pattern on `B_S(e, R)` stored in canonical ball order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PatternWindow {
    radius: usize,
    symbols: Vec<u8>,
}

impl PatternWindow {
    pub fn new(radius: usize, symbols: Vec<u8>) -> Self {
        Self { radius, symbols }
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn symbols(&self) -> &[u8] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// A finite-index sublattice of ℤ^d in row Hermite normal form.
///
/// Rows are upper triangular with positive pivots and entries above each
/// pivot reduced modulo the pivot, so the coset representatives are the box
/// `∏ [0, pivot_i)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sublattice {
    rows: Vec<Vec<i64>>,
}

impl Sublattice {
    pub fn from_basis(basis: Vec<Vec<i64>>) -> Result<Self> {
        let d = basis.len();
        if d == 0 || basis.iter().any(|r| r.len() != d) {
            return Err(Error::Measure("sublattice basis must be d vectors in ℤ^d".into()));
        }
        let mut b = basis;
        for col in 0..d {
            // Euclid on column `col` over rows col..d
            loop {
                let pivot = (col..d)
                    .filter(|&r| b[r][col] != 0)
                    .min_by_key(|&r| b[r][col].abs());
                let Some(p) = pivot else {
                    return Err(Error::Measure("sublattice basis is not of full rank".into()));
                };
                b.swap(col, p);
                let mut done = true;
                for r in col + 1..d {
                    if b[r][col] != 0 {
                        let q = b[r][col].div_euclid(b[col][col]);
                        for c in 0..d {
                            b[r][c] -= q * b[col][c];
                        }
                        if b[r][col] != 0 {
                            done = false;
                        }
                    }
                }
                if done {
                    break;
                }
            }
            if b[col][col] < 0 {
                for c in 0..d {
                    b[col][c] = -b[col][c];
                }
            }
        }
        for col in 0..d {
            for r in 0..col {
                let q = b[r][col].div_euclid(b[col][col]);
                for c in 0..d {
                    b[r][c] -= q * b[col][c];
                }
            }
        }
        Ok(Self { rows: b })
    }

    /// `m_1 ℤ × ⋯ × m_d ℤ`.
    pub fn diagonal(moduli: &[usize]) -> Result<Self> {
        let d = moduli.len();
        Self::from_basis(
            (0..d)
                .map(|i| (0..d).map(|j| if i == j { moduli[i] as i64 } else { 0 }).collect())
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<i64>] {
        &self.rows
    }

    /// Index `|ℤ^d / N|`.
    pub fn index(&self) -> usize {
        (0..self.dim()).map(|i| self.rows[i][i] as usize).product()
    }

    /// Coset index of `x`, mixed radix with the first coordinate fastest.
    pub fn coset(&self, x: &[i64]) -> usize {
        let mut x = x.to_vec();
        for i in 0..self.dim() {
            let q = x[i].div_euclid(self.rows[i][i]);
            if q != 0 {
                for c in i..self.dim() {
                    x[c] -= q * self.rows[i][c];
                }
            }
        }
        let mut idx = 0usize;
        for i in (0..self.dim()).rev() {
            idx = idx * self.rows[i][i] as usize + x[i] as usize;
        }
        idx
    }

    /// The box representative of coset `idx`.
    pub fn representative(&self, mut idx: usize) -> Vec<i64> {
        (0..self.dim())
            .map(|i| {
                let m = self.rows[i][i] as usize;
                let c = idx % m;
                idx /= m;
                c as i64
            })
            .collect()
    }

    pub fn contains(&self, x: &[i64]) -> bool {
        self.coset(x) == 0
    }
}

/// How the period of a periodic configuration is specified.
#[derive(Debug, Clone)]
pub enum Period {
    /// A finite-index sublattice `N ⊂ ℤ^d`; the pattern is indexed by cosets.
    Lattice(Sublattice),
    /// An explicit action of `G` on `G/N`; coset 0 is `N` itself.
    Quotient { group: GroupSpec, action: QuotientAction },
}

/// A configuration constant on `N`-cosets and the uniform measure on its
/// orbit.
#[derive(Debug, Clone)]
pub struct PeriodicPattern {
    period: Period,
    pattern: Vec<u8>,
}

impl PeriodicPattern {
    pub fn new(period: Period, pattern: Vec<u8>) -> Result<Self> {
        let q = match &period {
            Period::Lattice(l) => l.index(),
            Period::Quotient { action, .. } => action.size(),
        };
        if pattern.len() != q {
            return Err(Error::Measure(format!(
                "pattern has {} entries but the quotient has {q} cosets",
                pattern.len()
            )));
        }
        Ok(Self { period, pattern })
    }

    pub fn period(&self) -> &Period {
        &self.period
    }

    pub fn pattern(&self) -> &[u8] {
        &self.pattern
    }

    /// Number of translates indexed by cosets (counted with multiplicity).
    pub fn num_translates(&self) -> usize {
        self.pattern.len()
    }

    /// `ω_t(g)`: translate `t` evaluated at `g`.
    pub fn translate_value(&self, t: usize, g: &GroupElement) -> u8 {
        match (&self.period, g) {
            (Period::Lattice(l), GroupElement::Lattice(x)) => {
                let rep = l.representative(t);
                let y: Vec<i64> = x.iter().zip(&rep).map(|(a, b)| a + b).collect();
                self.pattern[l.coset(&y)]
            }
            (Period::Quotient { group, action }, g) => {
                self.pattern[action.element_image(group, g, t)]
            }
            _ => panic!("group element does not match the period"),
        }
    }

    /// Number of distinct configurations in the orbit.
    pub fn orbit_size(&self) -> usize {
        let q = self.pattern.len();
        let mut classes: Vec<usize> = Vec::new();
        for t in 0..q {
            if !classes.iter().any(|&r| self.translates_equal(r, t)) {
                classes.push(t);
            }
        }
        classes.len()
    }

    fn translates_equal(&self, a: usize, b: usize) -> bool {
        match &self.period {
            Period::Lattice(l) => (0..l.index()).all(|x| {
                let xv: Vec<i64> = l.representative(x);
                let g = GroupElement::Lattice(xv);
                self.translate_value(a, &g) == self.translate_value(b, &g)
            }),
            Period::Quotient { action, .. } => {
                let mut seen = HashSet::from([(a, b)]);
                let mut queue = VecDeque::from([(a, b)]);
                while let Some((c, d)) = queue.pop_front() {
                    if self.pattern[c] != self.pattern[d] {
                        return false;
                    }
                    for s in 0..action.num_generators() {
                        let next = (action.act(s, c), action.act(s, d));
                        if seen.insert(next) {
                            queue.push_back(next);
                        }
                    }
                }
                true
            }
        }
    }
}

/// An invariant probability measure on `𝒜^G`.
#[derive(Debug, Clone)]
pub enum MeasureModel {
    /// Product measure with the given one-site weights.
    Iid { weights: Vec<f64> },
    /// Uniform measure on the orbit of a periodic configuration.
    Periodic(PeriodicPattern),
    /// Convex combination of models.
    Mixture(Vec<(f64, MeasureModel)>),
}

impl MeasureModel {
    pub fn iid(weights: Vec<f64>) -> Result<Self> {
        check_weights(&weights, "IID weights")?;
        Ok(Self::Iid { weights })
    }

    /// Point mass on the constant configuration `symbol` over an alphabet of
    /// the given size.
    pub fn constant(alphabet_size: usize, symbol: u8) -> Result<Self> {
        let mut w = vec![0.0; alphabet_size];
        *w.get_mut(symbol as usize)
            .ok_or_else(|| Error::Measure("symbol outside alphabet".into()))? = 1.0;
        Self::iid(w)
    }

    pub fn periodic(pattern: PeriodicPattern) -> Self {
        Self::Periodic(pattern)
    }

    pub fn mixture(components: Vec<(f64, MeasureModel)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Measure("mixture has no components".into()));
        }
        if components.iter().any(|(a, _)| *a <= 0.0) {
            return Err(Error::Measure("mixture weights must be positive".into()));
        }
        let w: Vec<f64> = components.iter().map(|(a, _)| *a).collect();
        check_weights(&w, "mixture weights")?;
        Ok(Self::Mixture(components))
    }

    /// Largest symbol index that can occur, plus one.
    pub fn alphabet_size(&self) -> usize {
        match self {
            Self::Iid { weights } => weights.len(),
            Self::Periodic(p) => p.pattern.iter().copied().max().map_or(1, |m| m as usize + 1),
            Self::Mixture(c) => c.iter().map(|(_, m)| m.alphabet_size()).max().unwrap_or(1),
        }
    }

    /// Exact law of `(ω(g))_{g ∈ sites}` as weighted outcomes.
    pub fn marginal_on_sites(
        &self,
        sites: &[GroupElement],
        budget: u128,
    ) -> Result<Vec<(f64, Vec<u8>)>> {
        match self {
            Self::Iid { weights } => {
                // sites are distinct group elements, so coordinates are independent
                enumerate_product(weights, sites.len(), budget)
            }
            Self::Periodic(p) => {
                let q = p.num_translates();
                Ok((0..q)
                    .map(|t| {
                        (
                            1.0 / q as f64,
                            sites.iter().map(|g| p.translate_value(t, g)).collect(),
                        )
                    })
                    .collect())
            }
            Self::Mixture(components) => {
                let mut out = Vec::new();
                for (a, m) in components {
                    for (p, pat) in m.marginal_on_sites(sites, budget)? {
                        out.push((a * p, pat));
                    }
                }
                Ok(out)
            }
        }
    }

    /// Draws `(ω(g))_{g ∈ sites}` for `ω ~ μ`.
    pub fn sample_on_sites<R: Rng>(&self, sites: &[GroupElement], rng: &mut R) -> Vec<u8> {
        match self {
            Self::Iid { weights } => {
                let dist = WeightedIndex::new(weights).expect("weights validated");
                sites.iter().map(|_| dist.sample(rng) as u8).collect()
            }
            Self::Periodic(p) => {
                let t = rng.gen_range(0..p.num_translates());
                sites.iter().map(|g| p.translate_value(t, g)).collect()
            }
            Self::Mixture(components) => {
                let dist = WeightedIndex::new(components.iter().map(|(a, _)| *a))
                    .expect("weights validated");
                components[dist.sample(rng)].1.sample_on_sites(sites, rng)
            }
        }
    }
}

fn check_weights(w: &[f64], what: &str) -> Result<()> {
    if w.is_empty() || w.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Measure(format!("{what} must be nonnegative and finite")));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > WEIGHT_TOL {
        return Err(Error::Measure(format!("{what} sum to {total}, not 1")));
    }
    Ok(())
}

fn enumerate_product(weights: &[f64], k: usize, budget: u128) -> Result<Vec<(f64, Vec<u8>)>> {
    let support: Vec<(u8, f64)> = weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(i, &w)| (i as u8, w))
        .collect();
    let count = (support.len() as u128).checked_pow(k as u32).unwrap_or(u128::MAX);
    if count > budget {
        return Err(Error::Budget {
            requested: count,
            budget,
            hint: "use the Monte Carlo mode",
        });
    }
    let mut out = vec![(1.0, Vec::with_capacity(k))];
    for _ in 0..k {
        let mut next = Vec::with_capacity(out.len() * support.len());
        for (p, pat) in &out {
            for &(s, w) in &support {
                let mut q = pat.clone();
                q.push(s);
                next.push((p * w, q));
            }
        }
        out = next;
    }
    Ok(out)
}

/// Probability distribution over radius-`R` window patterns.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowDistribution {
    radius: usize,
    probs: BTreeMap<Vec<u8>, f64>,
}

impl WindowDistribution {
    pub fn from_weighted(radius: usize, outcomes: impl IntoIterator<Item = (f64, Vec<u8>)>) -> Self {
        let mut probs = BTreeMap::new();
        for (p, pat) in outcomes {
            if p > 0.0 {
                *probs.entry(pat).or_insert(0.0) += p;
            }
        }
        Self { radius, probs }
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn probability(&self, pattern: &[u8]) -> f64 {
        self.probs.get(pattern).copied().unwrap_or(0.0)
    }

    pub fn support(&self) -> impl Iterator<Item = (&Vec<u8>, &f64)> {
        self.probs.iter()
    }

    pub fn total(&self) -> f64 {
        self.probs.values().sum()
    }

    /// Total variation distance `½ Σ |p − q|`.
    pub fn total_variation(&self, other: &WindowDistribution) -> f64 {
        let mut acc = 0.0;
        for (k, p) in &self.probs {
            acc += (p - other.probability(k)).abs();
        }
        for (k, q) in &other.probs {
            if !self.probs.contains_key(k) {
                acc += q;
            }
        }
        0.5 * acc
    }
}

/// `Π_v^σ(ρ)` restricted to `B_S(e, R)`: the window value at `g` is
/// `ρ(σ^g(v))`, defined at every vertex whether or not it is good.
pub fn pullback_window(
    rho: &Configuration,
    sigma: &SoficApproximation,
    v: usize,
    radius: usize,
) -> Result<PatternWindow> {
    let ball = sigma.group().ball(radius)?;
    let words = sigma.ball_words(&ball);
    Ok(pullback_with_words(rho, sigma, &words, v, radius))
}

pub(crate) fn pullback_with_words(
    rho: &Configuration,
    sigma: &SoficApproximation,
    words: &[Vec<usize>],
    v: usize,
    radius: usize,
) -> PatternWindow {
    PatternWindow::new(
        radius,
        words.iter().map(|w| rho.at(sigma.apply_word(w, v))).collect(),
    )
}

/// Frequencies of the pullback windows over all vertices.
pub fn empirical_window_distribution(
    rho: &Configuration,
    sigma: &SoficApproximation,
    radius: usize,
) -> Result<WindowDistribution> {
    empirical_window_distribution_with(rho, sigma, radius, Execution::Parallel)
}

pub fn empirical_window_distribution_with(
    rho: &Configuration,
    sigma: &SoficApproximation,
    radius: usize,
    exec: Execution,
) -> Result<WindowDistribution> {
    let ball = sigma.group().ball(radius)?;
    let words = sigma.ball_words(&ball);
    let n = sigma.n_vertices();
    let windows = par::map_range(exec, n, |v| pullback_with_words(rho, sigma, &words, v, radius));
    let mut counts: BTreeMap<Vec<u8>, usize> = BTreeMap::new();
    for w in windows {
        *counts.entry(w.symbols).or_insert(0) += 1;
    }
    Ok(WindowDistribution {
        radius,
        probs: counts
            .into_iter()
            .map(|(k, c)| (k, c as f64 / n as f64))
            .collect(),
    })
}

/// Exact radius-`R` cylinder marginal of `μ`.
pub fn target_marginal(
    model: &MeasureModel,
    group: &GroupSpec,
    radius: usize,
) -> Result<WindowDistribution> {
    target_marginal_with_budget(model, group, radius, DEFAULT_ENUMERATION_BUDGET)
}

pub fn target_marginal_with_budget(
    model: &MeasureModel,
    group: &GroupSpec,
    radius: usize,
    budget: u128,
) -> Result<WindowDistribution> {
    let ball = group.ball(radius)?;
    Ok(WindowDistribution::from_weighted(
        radius,
        model.marginal_on_sites(ball.elements(), budget)?,
    ))
}

/// Draws `ρ ~ μ_n`, the finite-volume counterpart of `μ` on `σ`.
///
/// IID models sample every vertex independently. Periodic models build the
/// configuration read off the coset of each vertex and apply a uniformly
/// random orbit translate; this needs a torus whose side is a multiple of the
/// period or a product approximation carrying the same regular quotient
/// action. Mixtures pick a component first.
pub fn sample_configuration<R: Rng>(
    model: &MeasureModel,
    sigma: &SoficApproximation,
    rng: &mut R,
) -> Result<Configuration> {
    let n = sigma.n_vertices();
    match model {
        MeasureModel::Iid { weights } => {
            let dist = WeightedIndex::new(weights).map_err(|e| Error::Measure(e.to_string()))?;
            Ok(Configuration::new((0..n).map(|_| dist.sample(rng) as u8).collect()))
        }
        MeasureModel::Periodic(p) => {
            let reader = PeriodicReader::new(p, sigma)?;
            let t = rng.gen_range(0..p.num_translates());
            Ok(Configuration::new((0..n).map(|v| reader.value(t, v)).collect()))
        }
        MeasureModel::Mixture(components) => {
            let dist = WeightedIndex::new(components.iter().map(|(a, _)| *a))
                .map_err(|e| Error::Measure(e.to_string()))?;
            let k = dist.sample(rng);
            sample_configuration(&components[k].1, sigma, rng)
        }
    }
}

/// Reads the translate-`t` periodic configuration at a vertex of a
/// compatible approximation.
struct PeriodicReader<'a> {
    pattern: &'a PeriodicPattern,
    kind: ReaderKind<'a>,
}

enum ReaderKind<'a> {
    Torus { sigma: &'a SoficApproximation, lattice: &'a Sublattice },
    Product { q: usize, psi: Vec<Vec<usize>> },
}

impl<'a> PeriodicReader<'a> {
    fn new(pattern: &'a PeriodicPattern, sigma: &'a SoficApproximation) -> Result<Self> {
        match (&pattern.period, sigma.provenance()) {
            (Period::Lattice(l), Provenance::Torus { dim, side }) => {
                if *dim != l.dim() {
                    return Err(Error::Incompatible("torus dimension differs from period".into()));
                }
                for i in 0..*dim {
                    let mut e = vec![0i64; *dim];
                    e[i] = *side as i64;
                    if !l.contains(&e) {
                        return Err(Error::Incompatible(format!(
                            "torus side {side} is not a period in coordinate {i}"
                        )));
                    }
                }
                Ok(Self {
                    pattern,
                    kind: ReaderKind::Torus { sigma, lattice: l },
                })
            }
            (
                Period::Quotient { action, .. },
                Provenance::ProductWithQuotient { quotient_size, .. },
            ) => {
                let q = action.size();
                if *quotient_size != q {
                    return Err(Error::Incompatible("quotient sizes differ".into()));
                }
                for s in 0..sigma.group().num_generators() {
                    for c in 0..q {
                        if sigma.act(s, c) % q != action.act(s, c) {
                            return Err(Error::Incompatible(
                                "approximation carries a different quotient action".into(),
                            ));
                        }
                    }
                }
                let psi = action.regular_translations().ok_or_else(|| {
                    Error::Incompatible("random translates need a regular quotient action".into())
                })?;
                Ok(Self {
                    pattern,
                    kind: ReaderKind::Product { q, psi },
                })
            }
            (_, prov) => Err(Error::Incompatible(format!(
                "periodic model cannot be realised on a {prov:?} approximation"
            ))),
        }
    }

    fn value(&self, t: usize, v: usize) -> u8 {
        match &self.kind {
            ReaderKind::Torus { sigma, lattice } => {
                let coords = sigma.torus_coordinates(v).expect("torus provenance");
                let rep = lattice.representative(t);
                let x: Vec<i64> = coords.iter().zip(&rep).map(|(&c, r)| c as i64 + r).collect();
                self.pattern.pattern[lattice.coset(&x)]
            }
            ReaderKind::Product { q, psi } => self.pattern.pattern[psi[t][v % q]],
        }
    }
}

/// Exact law of `Π_v(ρ)|_R` for `ρ ~ μ_n`.
///
/// Coordinates with `σ^g(v) = σ^h(v)` are identified before enumerating, so
/// collisions at bad vertices are accounted for.
pub fn finite_pushforward(
    model: &MeasureModel,
    sigma: &SoficApproximation,
    ball_words: &[Vec<usize>],
    v: usize,
    radius: usize,
    budget: u128,
) -> Result<WindowDistribution> {
    let images = sigma.ball_images(ball_words, v);
    let outcomes = pushforward_outcomes(model, sigma, &images, budget)?;
    Ok(WindowDistribution::from_weighted(radius, outcomes))
}

fn pushforward_outcomes(
    model: &MeasureModel,
    sigma: &SoficApproximation,
    images: &[usize],
    budget: u128,
) -> Result<Vec<(f64, Vec<u8>)>> {
    match model {
        MeasureModel::Iid { weights } => {
            let mut distinct: Vec<usize> = images.to_vec();
            distinct.sort_unstable();
            distinct.dedup();
            let slot: Vec<usize> = images
                .iter()
                .map(|w| distinct.binary_search(w).expect("present"))
                .collect();
            Ok(enumerate_product(weights, distinct.len(), budget)?
                .into_iter()
                .map(|(p, pat)| (p, slot.iter().map(|&i| pat[i]).collect()))
                .collect())
        }
        MeasureModel::Periodic(p) => {
            let reader = PeriodicReader::new(p, sigma)?;
            let q = p.num_translates();
            Ok((0..q)
                .map(|t| (1.0 / q as f64, images.iter().map(|&w| reader.value(t, w)).collect()))
                .collect())
        }
        MeasureModel::Mixture(components) => {
            let mut out = Vec::new();
            for (a, m) in components {
                for (p, pat) in pushforward_outcomes(m, sigma, images, budget)? {
                    out.push((a * p, pat));
                }
            }
            Ok(out)
        }
    }
}

/// One row of the convergence report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeRow {
    pub n: usize,
    #[serde(rename = "R")]
    pub radius: usize,
    pub eps: f64,
    pub lw_fraction: f64,
    pub le_fraction: f64,
    pub le_halfwidth: f64,
}

/// Parameters of [`le_diagnostic`].
#[derive(Debug, Clone, Copy)]
pub struct LeParams {
    pub radius: usize,
    pub eps: f64,
    pub samples: usize,
    pub seed: u64,
    pub budget: u128,
}

impl Default for LeParams {
    fn default() -> Self {
        Self {
            radius: 1,
            eps: 0.05,
            samples: 200,
            seed: 0,
            budget: DEFAULT_ENUMERATION_BUDGET,
        }
    }
}

/// Local weak-* and local empirical statistics for each approximation.
///
/// The lw* statistic is the exact fraction of vertices whose pushforward
/// window law is within `eps` in total variation of the target marginal. The
/// le statistic is a Monte Carlo estimate of the probability that a sampled
/// configuration has its empirical window distribution within `eps`, with a
/// 95% normal-approximation half-width.
pub fn le_diagnostic(
    model: &MeasureModel,
    sigmas: &[SoficApproximation],
    params: LeParams,
) -> Result<Vec<LeRow>> {
    le_diagnostic_with(model, sigmas, params, Execution::Parallel)
}

pub fn le_diagnostic_with(
    model: &MeasureModel,
    sigmas: &[SoficApproximation],
    params: LeParams,
    exec: Execution,
) -> Result<Vec<LeRow>> {
    if !(params.eps > 0.0) || params.samples == 0 {
        return Err(Error::Measure("le diagnostic needs eps > 0 and samples >= 1".into()));
    }
    let mut rows = Vec::with_capacity(sigmas.len());
    for (size_index, sigma) in sigmas.iter().enumerate() {
        let group = sigma.group();
        let target = target_marginal_with_budget(model, group, params.radius, params.budget)?;
        let ball: CayleyBall = group.ball(params.radius)?;
        let words = sigma.ball_words(&ball);
        let n = sigma.n_vertices();
        let lw = par::map_range(exec, n, |v| {
            finite_pushforward(model, sigma, &words, v, params.radius, params.budget)
                .map(|d| d.total_variation(&target) < params.eps)
        })
        .into_iter()
        .collect::<Result<Vec<bool>>>()?;
        let lw_fraction = lw.iter().filter(|&&b| b).count() as f64 / n as f64;

        let le = par::map_range(exec, params.samples, |s| -> Result<bool> {
            let mut rng = rng_for(params.seed, size_index as u64, s as u64);
            let rho = sample_configuration(model, sigma, &mut rng)?;
            let emp = empirical_window_distribution_with(&rho, sigma, params.radius, Execution::Sequential)?;
            Ok(emp.total_variation(&target) < params.eps)
        })
        .into_iter()
        .collect::<Result<Vec<bool>>>()?;
        let p = le.iter().filter(|&&b| b).count() as f64 / params.samples as f64;
        rows.push(LeRow {
            n,
            radius: params.radius,
            eps: params.eps,
            lw_fraction,
            le_fraction: p,
            le_halfwidth: 1.96 * (p * (1.0 - p) / params.samples as f64).sqrt(),
        });
    }
    Ok(rows)
}

/// The periodic model `ω_Q ∘ π` for the quotient `π: ℤ^d → ∏ ℤ/m_i`, with
/// `ω_Q` listed in mixed radix order (first coordinate fastest).
pub fn lift_configuration(moduli: &[usize], pattern: Vec<u8>) -> Result<MeasureModel> {
    if moduli.is_empty() || moduli.iter().any(|&m| m == 0) {
        return Err(Error::Measure("moduli must be positive".into()));
    }
    let lattice = Sublattice::diagonal(moduli)?;
    Ok(MeasureModel::Periodic(PeriodicPattern::new(
        Period::Lattice(lattice),
        pattern,
    )?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sofic::{product_with_quotient, random_permutation_approximation, torus_approximation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn period2() -> MeasureModel {
        lift_configuration(&[2], vec![0, 1]).unwrap()
    }

    #[test]
    fn alphabet_rules() {
        assert!(Alphabet::new(vec![]).is_err());
        assert!(Alphabet::new(vec!["a".into(), "a".into()]).is_err());
        let a = Alphabet::numeric(3).unwrap();
        assert_eq!(a.index_of("2"), Some(2));
    }

    #[test]
    fn weights_must_sum_to_one() {
        assert!(MeasureModel::iid(vec![0.5, 0.4]).is_err());
        assert!(MeasureModel::iid(vec![0.5, 0.5]).is_ok());
        assert!(MeasureModel::mixture(vec![(0.0, period2()), (1.0, period2())]).is_err());
    }

    #[test]
    fn hermite_normal_form() {
        let l = Sublattice::from_basis(vec![vec![2, 1], vec![0, 3]]).unwrap();
        assert_eq!(l.index(), 6);
        let l2 = Sublattice::from_basis(vec![vec![0, 3], vec![2, 4]]).unwrap();
        assert_eq!(l2.index(), 6);
        for x in -5..5 {
            for y in -5..5 {
                // same lattice, same cosets up to relabelling: membership agrees
                assert_eq!(l2.contains(&[x, y]), l2.contains(&[x + 2, y + 4]));
                assert!(l2.contains(&[0, 3]) && l2.contains(&[2, 4]));
            }
        }
        // 2ℤ × 2ℤ plus the checkerboard diagonal
        let even = Sublattice::from_basis(vec![vec![1, 1], vec![1, -1]]).unwrap();
        assert_eq!(even.index(), 2);
        assert!(even.contains(&[1, 1]) && even.contains(&[2, 0]) && !even.contains(&[1, 0]));
        assert!(Sublattice::from_basis(vec![vec![1, 1], vec![2, 2]]).is_err());
    }

    #[test]
    fn iid_point_mass_sample() {
        let t = torus_approximation(1, 10).unwrap();
        let m = MeasureModel::iid(vec![1.0, 0.0]).unwrap();
        let rho = sample_configuration(&m, &t, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(rho.symbols().iter().all(|&s| s == 0));
    }

    #[test]
    fn periodic_sampler_hits_both_translates() {
        let t = torus_approximation(1, 6).unwrap();
        let m = period2();
        let a = [0u8, 1, 0, 1, 0, 1];
        let b = [1u8, 0, 1, 0, 1, 0];
        let mut counts = [0usize; 2];
        let trials = 2000;
        for s in 0..trials {
            let rho = sample_configuration(&m, &t, &mut rng_for(3, 0, s)).unwrap();
            if rho.symbols() == a {
                counts[0] += 1;
            } else if rho.symbols() == b {
                counts[1] += 1;
            } else {
                panic!("not a translate: {:?}", rho.symbols());
            }
        }
        // orbit uniformity within 5 binomial standard deviations
        let sd = (trials as f64 * 0.25).sqrt();
        for c in counts {
            assert!((c as f64 - trials as f64 / 2.0).abs() < 5.0 * sd);
        }
    }

    #[test]
    fn incompatible_torus_rejected() {
        let t = torus_approximation(1, 5).unwrap();
        let r = sample_configuration(&period2(), &t, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(r, Err(Error::Incompatible(_))));
        let f = random_permutation_approximation(2, 10, 0).unwrap();
        let r = sample_configuration(&period2(), &f, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(r, Err(Error::Incompatible(_))));
    }

    #[test]
    fn mixture_of_constants() {
        let t = torus_approximation(1, 8).unwrap();
        let m = MeasureModel::mixture(vec![
            (0.5, MeasureModel::constant(2, 0).unwrap()),
            (0.5, MeasureModel::constant(2, 1).unwrap()),
        ])
        .unwrap();
        let mut ones = 0;
        for s in 0..400 {
            let rho = sample_configuration(&m, &t, &mut rng_for(5, 0, s)).unwrap();
            let first = rho.at(0);
            assert!(rho.symbols().iter().all(|&x| x == first));
            ones += first as usize;
        }
        assert!((ones as f64 - 200.0).abs() < 5.0 * 10.0);
    }

    #[test]
    fn pullback_examples() {
        let t = torus_approximation(1, 8).unwrap();
        let rho = Configuration::new((0..8).map(|i| (i % 2) as u8).collect());
        let w = pullback_window(&rho, &t, 0, 2).unwrap();
        assert_eq!(w.symbols(), &[0, 1, 0, 1, 0]);
        let w0 = pullback_window(&rho, &t, 3, 0).unwrap();
        assert_eq!(w0.symbols(), &[1]);
        let c = Configuration::new(vec![4; 8]);
        assert!(pullback_window(&c, &t, 5, 3).unwrap().symbols().iter().all(|&x| x == 4));
    }

    #[test]
    fn empirical_examples() {
        let t = torus_approximation(1, 4).unwrap();
        let rho = Configuration::new(vec![0, 1, 0, 1]);
        let d = empirical_window_distribution(&rho, &t, 1).unwrap();
        assert_eq!(d.probability(&[1, 0, 1]), 0.5);
        assert_eq!(d.probability(&[0, 1, 0]), 0.5);
        assert_eq!(d.total(), 1.0);
        let c = Configuration::new(vec![1; 4]);
        let d = empirical_window_distribution(&c, &t, 1).unwrap();
        assert_eq!(d.probability(&[1, 1, 1]), 1.0);
    }

    #[test]
    fn target_marginal_examples() {
        let z = GroupSpec::lattice(1).unwrap();
        let fair = MeasureModel::iid(vec![0.5, 0.5]).unwrap();
        let d = target_marginal(&fair, &z, 1).unwrap();
        assert_eq!(d.support().count(), 8);
        assert!(d.support().all(|(_, &p)| p == 0.125));
        let d = target_marginal(&period2(), &z, 1).unwrap();
        assert_eq!(d.probability(&[0, 1, 0]), 0.5);
        assert_eq!(d.probability(&[1, 0, 1]), 0.5);
        let point = MeasureModel::constant(3, 2).unwrap();
        assert_eq!(target_marginal(&point, &z, 2).unwrap().probability(&[2; 5]), 1.0);
        let small = target_marginal_with_budget(&fair, &z, 3, 16);
        assert!(matches!(small, Err(Error::Budget { .. })));
    }

    #[test]
    fn marginal_coherence() {
        let z2 = GroupSpec::lattice(2).unwrap();
        let models = [
            MeasureModel::iid(vec![0.2, 0.3, 0.5]).unwrap(),
            lift_configuration(&[2, 3], vec![0, 1, 1, 0, 2, 2]).unwrap(),
        ];
        for m in &models {
            let outer = target_marginal(m, &z2, 2).unwrap();
            let inner = target_marginal(m, &z2, 1).unwrap();
            let big = z2.ball(2).unwrap();
            let small = z2.ball(1).unwrap();
            let pos: Vec<usize> = small.elements().iter().map(|g| big.position(g).unwrap()).collect();
            let projected = WindowDistribution::from_weighted(
                1,
                outer.support().map(|(k, &p)| (p, pos.iter().map(|&i| k[i]).collect())),
            );
            assert!(projected.total_variation(&inner) < 1e-12);
        }
    }

    #[test]
    fn orbit_sizes() {
        assert_eq!(lift_configuration(&[1], vec![0]).unwrap().unwrap_periodic().orbit_size(), 1);
        assert_eq!(period2().unwrap_periodic().orbit_size(), 2);
        let checker = lift_configuration(&[2, 2], vec![0, 1, 1, 0]).unwrap();
        assert_eq!(checker.unwrap_periodic().orbit_size(), 2);
        let stripes = lift_configuration(&[2, 2], vec![0, 1, 0, 1]).unwrap();
        assert_eq!(stripes.unwrap_periodic().orbit_size(), 2);
        let generic = lift_configuration(&[2, 2], vec![0, 1, 2, 3]).unwrap();
        assert_eq!(generic.unwrap_periodic().orbit_size(), 4);
    }

    impl MeasureModel {
        fn unwrap_periodic(&self) -> &PeriodicPattern {
            match self {
                MeasureModel::Periodic(p) => p,
                _ => panic!("not periodic"),
            }
        }
    }

    #[test]
    fn pushforward_equals_target_at_good_vertices() {
        let t = torus_approximation(2, 6).unwrap();
        let m = MeasureModel::iid(vec![0.6, 0.4]).unwrap();
        let target = target_marginal(&m, t.group(), 2).unwrap();
        let ball = t.group().ball(2).unwrap();
        let words = t.ball_words(&ball);
        for v in [0, 7, 35] {
            let d = finite_pushforward(&m, &t, &words, v, 2, DEFAULT_ENUMERATION_BUDGET).unwrap();
            assert!(d.total_variation(&target) < 1e-12);
        }
        // on a too-small torus coordinates collide and the law differs
        let small = torus_approximation(1, 3).unwrap();
        let target = target_marginal(&m, small.group(), 2).unwrap();
        let ball = small.group().ball(2).unwrap();
        let words = small.ball_words(&ball);
        let d = finite_pushforward(&m, &small, &words, 0, 2, DEFAULT_ENUMERATION_BUDGET).unwrap();
        assert!((d.total() - 1.0).abs() < 1e-12);
        assert!(d.total_variation(&target) > 0.1);
    }

    #[test]
    fn le_examples() {
        let sigmas: Vec<_> = [4, 8, 16].iter().map(|&n| torus_approximation(1, n).unwrap()).collect();
        let params = LeParams {
            radius: 1,
            eps: 0.01,
            samples: 50,
            seed: 1,
            ..LeParams::default()
        };
        for row in le_diagnostic(&period2(), &sigmas, params).unwrap() {
            assert_eq!(row.lw_fraction, 1.0);
            assert_eq!(row.le_fraction, 1.0);
        }
        let point = MeasureModel::constant(2, 1).unwrap();
        for eps in [1e-9, 0.5] {
            let rows = le_diagnostic(&point, &sigmas, LeParams { eps, ..params }).unwrap();
            assert!(rows.iter().all(|r| r.lw_fraction == 1.0 && r.le_fraction == 1.0));
        }
        let iid = MeasureModel::iid(vec![0.3, 0.7]).unwrap();
        let rows = le_diagnostic(&iid, &sigmas[1..], params).unwrap();
        assert!(rows.iter().all(|r| r.lw_fraction == 1.0));
    }

    #[test]
    fn quotient_periodic_on_product_model() {
        let base = torus_approximation(1, 3).unwrap();
        let group = base.group().clone();
        let action = QuotientAction::lattice_box(&group, &[2]).unwrap();
        let prod = product_with_quotient(&base, &action).unwrap();
        let p = PeriodicPattern::new(Period::Quotient { group: group.clone(), action }, vec![0, 1]).unwrap();
        let m = MeasureModel::Periodic(p);
        let target = target_marginal(&m, &group, 1).unwrap();
        assert_eq!(target.probability(&[0, 1, 0]), 0.5);
        // pushforward at every vertex equals the target (orbit-uniform sampler)
        let ball = group.ball(1).unwrap();
        let words = prod.ball_words(&ball);
        for v in 0..prod.n_vertices() {
            let d = finite_pushforward(&m, &prod, &words, v, 1, DEFAULT_ENUMERATION_BUDGET).unwrap();
            assert!(d.total_variation(&target) < 1e-12);
        }
        let rho = sample_configuration(&m, &prod, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let emp = empirical_window_distribution(&rho, &prod, 1).unwrap();
        assert!(emp.total_variation(&target) < 1e-12);
    }

    #[test]
    fn sample_on_sites_matches_marginal() {
        let z = GroupSpec::lattice(1).unwrap();
        let m = MeasureModel::iid(vec![0.25, 0.75]).unwrap();
        let sites = vec![GroupElement::Lattice(vec![0])];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ones: usize = (0..4000).map(|_| m.sample_on_sites(&sites, &mut rng)[0] as usize).sum();
        let sd = (4000.0f64 * 0.75 * 0.25).sqrt();
        assert!((ones as f64 - 3000.0).abs() < 5.0 * sd);
        let _ = z;
    }
}
