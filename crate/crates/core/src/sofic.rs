//! Sofic approximations: finite permutation models of a group, their labeled
//! graphs, R-good vertices and defect statistics.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{CayleyBall, GroupElement, GroupSpec};
use crate::par::{self, Execution};

/// Default upper bound on the number of vertices of an approximation.
pub const DEFAULT_VERTEX_BUDGET: usize = 1 << 22;

/// How an approximation was built.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Provenance {
    Torus { dim: usize, side: usize },
    RandomPermutation { seed: u64 },
    ExplicitQuotient,
    ProductWithQuotient { base: Box<Provenance>, quotient_size: usize },
    Custom,
}

/// A permutation action of the generators of `G` on `0..n`, standing in for
/// the finite model `(V_n, σ_n)`.
///
/// `perm(s⁻¹) = perm(s)⁻¹` holds exactly. The action of an arbitrary group
/// element is defined through its canonical word, see
/// [`GroupSpec::canonical_word`].
#[derive(Debug, Clone)]
pub struct SoficApproximation {
    group: GroupSpec,
    perms: Vec<Vec<u32>>,
    provenance: Provenance,
}

impl SoficApproximation {
    /// Builds an approximation from one permutation per generator.
    pub fn from_permutations(
        group: GroupSpec,
        perms: Vec<Vec<u32>>,
        provenance: Provenance,
    ) -> Result<Self> {
        if perms.len() != group.num_generators() {
            return Err(Error::Sofic(format!(
                "expected {} permutations, got {}",
                group.num_generators(),
                perms.len()
            )));
        }
        let n = perms.first().map_or(0, Vec::len);
        if n == 0 {
            return Err(Error::Sofic("vertex set is empty".into()));
        }
        if n > u32::MAX as usize {
            return Err(Error::Capacity {
                what: "vertex set",
                requested: n,
                budget: u32::MAX as usize,
            });
        }
        for (s, p) in perms.iter().enumerate() {
            if p.len() != n {
                return Err(Error::Sofic(format!("permutation {s} has wrong length")));
            }
            let mut hit = vec![false; n];
            for &x in p {
                let x = x as usize;
                if x >= n || hit[x] {
                    return Err(Error::Sofic(format!("permutation {s} is not a bijection")));
                }
                hit[x] = true;
            }
        }
        for s in 0..perms.len() {
            let t = group.generator_inverse(s);
            if (0..n).any(|v| perms[t][perms[s][v] as usize] as usize != v) {
                return Err(Error::Sofic(format!(
                    "perm of generator {t} is not the inverse of perm of generator {s}"
                )));
            }
        }
        Ok(Self {
            group,
            perms,
            provenance,
        })
    }

    pub fn group(&self) -> &GroupSpec {
        &self.group
    }

    pub fn n_vertices(&self) -> usize {
        self.perms[0].len()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// The permutation of generator `s`.
    pub fn perm(&self, s: usize) -> &[u32] {
        &self.perms[s]
    }

    /// `σ^s(v)` for the generator with index `s`.
    #[inline]
    pub fn act(&self, s: usize, v: usize) -> usize {
        self.perms[s][v] as usize
    }

    /// Applies generators in the given order.
    pub fn apply_word(&self, word: &[usize], v: usize) -> usize {
        word.iter().fold(v, |x, &s| self.act(s, x))
    }

    /// `σ^g(v)` through the canonical word of `g`.
    pub fn element_image(&self, g: &GroupElement, v: usize) -> usize {
        self.apply_word(&self.group.canonical_word(g), v)
    }

    /// `σ^g` as a full vertex map.
    pub fn element_map(&self, g: &GroupElement) -> Vec<u32> {
        let word = self.group.canonical_word(g);
        (0..self.n_vertices())
            .map(|v| self.apply_word(&word, v) as u32)
            .collect()
    }

    /// Canonical words of every element of `ball`, in ball order.
    pub fn ball_words(&self, ball: &CayleyBall) -> Vec<Vec<usize>> {
        ball.elements()
            .iter()
            .map(|g| self.group.canonical_word(g))
            .collect()
    }

    /// `(σ^g(v))_{g ∈ ball}` using precomputed canonical words.
    pub fn ball_images(&self, words: &[Vec<usize>], v: usize) -> Vec<usize> {
        words.iter().map(|w| self.apply_word(w, v)).collect()
    }

    /// Lattice coordinates of a vertex of a torus approximation.
    pub fn torus_coordinates(&self, v: usize) -> Option<Vec<usize>> {
        match self.provenance {
            Provenance::Torus { dim, side } => {
                let mut x = v;
                Some(
                    (0..dim)
                        .map(|_| {
                            let c = x % side;
                            x /= side;
                            c
                        })
                        .collect(),
                )
            }
            _ => None,
        }
    }
}

/// The quotient `ℤ^d → (ℤ/n)^d` acting on the discrete torus by coordinate
/// shifts. Vertex `x` is encoded as `Σ x_i n^i`.
pub fn torus_approximation(dim: usize, side: usize) -> Result<SoficApproximation> {
    torus_approximation_with_budget(dim, side, DEFAULT_VERTEX_BUDGET)
}

pub fn torus_approximation_with_budget(
    dim: usize,
    side: usize,
    budget: usize,
) -> Result<SoficApproximation> {
    if side < 2 {
        return Err(Error::Sofic("torus side must be at least 2".into()));
    }
    let group = GroupSpec::lattice(dim)?;
    let n = (0..dim).try_fold(1usize, |acc, _| acc.checked_mul(side));
    let n = match n {
        Some(n) if n <= budget => n,
        other => {
            return Err(Error::Capacity {
                what: "torus vertex set",
                requested: other.unwrap_or(usize::MAX),
                budget,
            })
        }
    };
    let mut perms = Vec::with_capacity(2 * dim);
    let mut stride = 1usize;
    for _ in 0..dim {
        for delta in [1, side - 1] {
            perms.push(
                (0..n)
                    .map(|v| {
                        let c = (v / stride) % side;
                        let c2 = (c + delta) % side;
                        (v - c * stride + c2 * stride) as u32
                    })
                    .collect(),
            );
        }
        stride *= side;
    }
    SoficApproximation::from_permutations(group, perms, Provenance::Torus { dim, side })
}

/// Independent uniform permutations for the free generators, seeded.
pub fn random_permutation_approximation(
    rank: usize,
    n: usize,
    seed: u64,
) -> Result<SoficApproximation> {
    if n == 0 {
        return Err(Error::Sofic("vertex set is empty".into()));
    }
    let group = GroupSpec::free(rank)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perms = Vec::with_capacity(2 * rank);
    for _ in 0..rank {
        let mut p: Vec<u32> = (0..n as u32).collect();
        p.shuffle(&mut rng);
        let mut inv = vec![0u32; n];
        for (v, &w) in p.iter().enumerate() {
            inv[w as usize] = v as u32;
        }
        perms.push(p);
        perms.push(inv);
    }
    SoficApproximation::from_permutations(group, perms, Provenance::RandomPermutation { seed })
}

/// A finite group acting on itself by left multiplication.
pub fn regular_action(group: &GroupSpec) -> Result<SoficApproximation> {
    let order = group
        .finite_order()
        .ok_or_else(|| Error::Sofic("regular action needs an explicit finite group".into()))?;
    let perms = (0..group.num_generators())
        .map(|s| {
            (0..order)
                .map(|v| match group.multiply(group.generator(s), &GroupElement::Finite(v)) {
                    GroupElement::Finite(w) => w as u32,
                    _ => unreachable!(),
                })
                .collect()
        })
        .collect();
    SoficApproximation::from_permutations(group.clone(), perms, Provenance::ExplicitQuotient)
}

/// An action of `G` on the cosets `G/N`, one permutation per generator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuotientAction {
    perms: Vec<Vec<u32>>,
}

impl QuotientAction {
    /// Validates that the generator permutations define an action of `G`.
    ///
    /// Inverse generators must act inversely, and for groups with relations
    /// the action must respect every product `s·g` for `g` in a ball large
    /// enough to contain the defining relations (radius 2 for ℤ^d, the whole
    /// group for finite groups).
    pub fn new(group: &GroupSpec, perms: Vec<Vec<u32>>) -> Result<Self> {
        let action = SoficApproximation::from_permutations(group.clone(), perms, Provenance::Custom)
            .map_err(|e| Error::Sofic(format!("quotient action: {e}")))?;
        let radius = if group.is_abelian_lattice() {
            2
        } else if let Some(order) = group.finite_order() {
            order
        } else {
            0
        };
        if radius > 0 {
            let ball = group.ball(radius)?;
            for g in ball.elements() {
                let g_map = action.element_map(g);
                for s in 0..group.num_generators() {
                    let sg = group.multiply(group.generator(s), g);
                    for c in 0..action.n_vertices() {
                        if action.act(s, g_map[c] as usize) != action.element_image(&sg, c) {
                            return Err(Error::Sofic(format!(
                                "quotient action is not a homomorphism at s={s}, g={g:?}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(Self {
            perms: action.perms,
        })
    }

    /// `ℤ^d → ∏ ℤ/m_i`, coset `x` encoded in mixed radix with `m_1` fastest.
    pub fn lattice_box(group: &GroupSpec, moduli: &[usize]) -> Result<Self> {
        let dim = group
            .lattice_dim()
            .ok_or_else(|| Error::Sofic("lattice quotient needs a lattice group".into()))?;
        if moduli.len() != dim || moduli.iter().any(|&m| m == 0) {
            return Err(Error::Sofic("one positive modulus per coordinate required".into()));
        }
        let q: usize = moduli.iter().product();
        let mut perms = Vec::new();
        let mut stride = 1usize;
        for &m in moduli {
            for delta in [1, m - 1] {
                perms.push(
                    (0..q)
                        .map(|v| {
                            let c = (v / stride) % m;
                            (v - c * stride + ((c + delta) % m) * stride) as u32
                        })
                        .collect(),
                );
            }
            stride *= m;
        }
        Self::new(group, perms)
    }

    pub fn size(&self) -> usize {
        self.perms[0].len()
    }

    pub fn num_generators(&self) -> usize {
        self.perms.len()
    }

    pub fn perm(&self, s: usize) -> &[u32] {
        &self.perms[s]
    }

    pub fn act(&self, s: usize, c: usize) -> usize {
        self.perms[s][c] as usize
    }

    /// Coset reached from `c` by the canonical word of `g`.
    pub fn element_image(&self, group: &GroupSpec, g: &GroupElement, c: usize) -> usize {
        group
            .canonical_word(g)
            .iter()
            .fold(c, |x, &s| self.act(s, x))
    }

    /// Whether the permutation group generated by the action is regular, i.e.
    /// acts freely and transitively on the cosets (N is normal).
    pub fn is_regular(&self) -> bool {
        self.regular_translations().is_some()
    }

    /// For a regular action: the equivariant bijections `ψ_t` with
    /// `ψ_t(0) = t`, as tables `psi[t][c]`.
    pub fn regular_translations(&self) -> Option<Vec<Vec<usize>>> {
        let q = self.size();
        // word (in application order) reaching each coset from coset 0
        let mut words: Vec<Option<Vec<usize>>> = vec![None; q];
        words[0] = Some(Vec::new());
        let mut queue = std::collections::VecDeque::from([0usize]);
        while let Some(c) = queue.pop_front() {
            for s in 0..self.perms.len() {
                let d = self.act(s, c);
                if words[d].is_none() {
                    let mut w = words[c].clone().unwrap_or_default();
                    w.push(s);
                    words[d] = Some(w);
                    queue.push_back(d);
                }
            }
        }
        let words: Vec<Vec<usize>> = words.into_iter().collect::<Option<_>>()?;
        let mut psis = Vec::with_capacity(q);
        for t in 0..q {
            let psi: Vec<usize> = words
                .iter()
                .map(|w| w.iter().fold(t, |x, &s| self.act(s, x)))
                .collect();
            // equivariance: psi(s·c) = s·psi(c) for all generators
            for c in 0..q {
                for s in 0..self.perms.len() {
                    if psi[self.act(s, c)] != self.act(s, psi[c]) {
                        return None;
                    }
                }
            }
            psis.push(psi);
        }
        Some(psis)
    }
}

/// The product model `σ^g(v, hN) = (σ̂^g(v), g·hN)` on `V̂ × G/N`.
///
/// Vertex `(v, c)` is encoded as `v·|G/N| + c`.
pub fn product_with_quotient(
    base: &SoficApproximation,
    quotient: &QuotientAction,
) -> Result<SoficApproximation> {
    let q = quotient.size();
    let nb = base.n_vertices();
    let n = nb
        .checked_mul(q)
        .filter(|&n| n <= DEFAULT_VERTEX_BUDGET)
        .ok_or(Error::Capacity {
            what: "product vertex set",
            requested: nb.saturating_mul(q),
            budget: DEFAULT_VERTEX_BUDGET,
        })?;
    if quotient.perms.len() != base.group().num_generators() {
        return Err(Error::Sofic("quotient action has the wrong number of generators".into()));
    }
    let perms = (0..base.group().num_generators())
        .map(|s| {
            (0..n)
                .map(|x| {
                    let (v, c) = (x / q, x % q);
                    (base.act(s, v) * q + quotient.act(s, c)) as u32
                })
                .collect()
        })
        .collect();
    SoficApproximation::from_permutations(
        base.group().clone(),
        perms,
        Provenance::ProductWithQuotient {
            base: Box::new(base.provenance().clone()),
            quotient_size: q,
        },
    )
}

/// Symmetric labeled graph `E_n` of an approximation, loops removed.
#[derive(Debug, Clone)]
pub struct LabeledFiniteGraph {
    adjacency: Vec<Vec<(u32, u16)>>,
}

impl LabeledFiniteGraph {
    pub fn n_vertices(&self) -> usize {
        self.adjacency.len()
    }

    /// Labeled neighbours `(w, s)` of `v` with `w = σ^s(v)`.
    pub fn neighbors(&self, v: usize) -> &[(u32, u16)] {
        &self.adjacency[v]
    }

    /// Number of distinct neighbours.
    pub fn degree(&self, v: usize) -> usize {
        let mut ws: Vec<u32> = self.adjacency[v].iter().map(|&(w, _)| w).collect();
        ws.sort_unstable();
        ws.dedup();
        ws.len()
    }

    /// Undirected edges `{v, w}` with `v < w` and their labels seen from `v`.
    pub fn edges(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for (v, adj) in self.adjacency.iter().enumerate() {
            for &(w, s) in adj {
                if v < w as usize {
                    out.push((v, w as usize, s as usize));
                }
            }
        }
        out
    }

    pub fn is_symmetric(&self, group: &GroupSpec) -> bool {
        self.adjacency.iter().enumerate().all(|(v, adj)| {
            adj.iter().all(|&(w, s)| {
                let t = group.generator_inverse(s as usize) as u16;
                self.adjacency[w as usize].contains(&(v as u32, t))
            })
        })
    }

    /// Graph distances from `v`, up to `max` steps.
    pub fn distances_from(&self, v: usize, max: usize) -> HashMap<usize, usize> {
        let mut dist = HashMap::from([(v, 0usize)]);
        let mut frontier = vec![v];
        for d in 1..=max {
            let mut next = Vec::new();
            for &x in &frontier {
                for &(w, _) in &self.adjacency[x] {
                    let w = w as usize;
                    if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(w) {
                        e.insert(d);
                        next.push(w);
                    }
                }
            }
            frontier = next;
        }
        dist
    }
}

/// Edges `{(v, σ^s(v))}` over all generators, loops dropped.
pub fn edge_graph(sigma: &SoficApproximation) -> LabeledFiniteGraph {
    let n = sigma.n_vertices();
    let adjacency = (0..n)
        .map(|v| {
            (0..sigma.group().num_generators())
                .filter_map(|s| {
                    let w = sigma.act(s, v);
                    (w != v).then_some((w as u32, s as u16))
                })
                .collect()
        })
        .collect();
    LabeledFiniteGraph { adjacency }
}

/// The set of R-good vertices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoodnessReport {
    pub radius: usize,
    #[serde(skip)]
    pub good: Vec<bool>,
    pub good_count: usize,
    pub fraction: f64,
}

impl GoodnessReport {
    pub fn is_good(&self, v: usize) -> bool {
        self.good[v]
    }

    /// Every vertex marked good, regardless of structure.
    pub fn all(n: usize, radius: usize) -> Self {
        Self {
            radius,
            good: vec![true; n],
            good_count: n,
            fraction: 1.0,
        }
    }
}

/// Marks `v` good iff the radius-`R` ball of `E_n` around `v` is isomorphic
/// to `B_S(e, R)` as a labeled graph, with `v ↦ e`.
///
/// The candidate isomorphism `φ(s·p) = σ^s(φ(p))` is grown along a BFS tree
/// of the Cayley ball. `v` is good iff `φ` is injective, every Cayley edge
/// `(x, s·x)` maps to `(φ(x), σ^s(φ(x)))`, and every graph edge leaving a
/// boundary element either lands outside the image or is a loop.
pub fn good_vertices(sigma: &SoficApproximation, radius: usize) -> Result<GoodnessReport> {
    good_vertices_with(sigma, radius, Execution::Parallel)
}

pub fn good_vertices_with(
    sigma: &SoficApproximation,
    radius: usize,
    exec: Execution,
) -> Result<GoodnessReport> {
    let ball = sigma.group().ball(radius)?;
    let plan = GoodnessPlan::new(&ball);
    let n = sigma.n_vertices();
    let good = par::map_range(exec, n, |v| plan.is_good(sigma, &ball, v));
    let good_count = good.iter().filter(|&&g| g).count();
    Ok(GoodnessReport {
        radius,
        fraction: good_count as f64 / n as f64,
        good,
        good_count,
    })
}

struct GoodnessPlan {
    /// `(x, parent, generator)` in nondecreasing word length, identity excluded.
    tree: Vec<(usize, usize, usize)>,
}

impl GoodnessPlan {
    fn new(ball: &CayleyBall) -> Self {
        let mut order: Vec<usize> = (0..ball.len()).collect();
        order.sort_by_key(|&i| (ball.length(i), i));
        let mut parent = vec![None; ball.len()];
        for &p in &order {
            for s in 0..ball.step_width() {
                if let Some(x) = ball.step(p, s) {
                    if ball.length(x) == ball.length(p) + 1 && parent[x].is_none() {
                        parent[x] = Some((p, s));
                    }
                }
            }
        }
        let tree = order
            .into_iter()
            .filter(|&x| x != ball.identity_index())
            .map(|x| {
                let (p, s) = parent[x].expect("every non-identity ball element has a parent");
                (x, p, s)
            })
            .collect();
        Self { tree }
    }

    fn is_good(&self, sigma: &SoficApproximation, ball: &CayleyBall, v: usize) -> bool {
        let mut phi = vec![0usize; ball.len()];
        phi[ball.identity_index()] = v;
        for &(x, p, s) in &self.tree {
            phi[x] = sigma.act(s, phi[p]);
        }
        let mut sorted: Vec<(usize, usize)> = phi.iter().enumerate().map(|(i, &w)| (w, i)).collect();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
            return false;
        }
        let in_image = |w: usize| sorted.binary_search_by_key(&w, |&(u, _)| u).is_ok();
        for x in 0..ball.len() {
            for s in 0..sigma.group().num_generators() {
                let target = sigma.act(s, phi[x]);
                match ball.step(x, s) {
                    Some(y) if target != phi[y] => return false,
                    // loops are not edges, so a boundary fixed point is invisible
                    None if target != phi[x] && in_image(target) => return false,
                    _ => {}
                }
            }
        }
        true
    }
}

/// Per-pair homomorphism defect.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairDefect {
    pub g: GroupElement,
    pub h: GroupElement,
    pub fraction: f64,
}

/// Per-element freeness defect.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixedPointDefect {
    pub g: GroupElement,
    pub fraction: f64,
}

/// Soficity defects over `B_S(e, K)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefectReport {
    pub radius: usize,
    pub homomorphism: Vec<PairDefect>,
    pub freeness: Vec<FixedPointDefect>,
    pub max_homomorphism: f64,
    pub max_freeness: f64,
    /// Fraction of vertices fixed by at least one `g ≠ e` in the ball.
    pub fixed_union: f64,
}

/// Fraction of vertices with `σ^g(σ^h(v)) ≠ σ^{gh}(v)` for all `g, h` in
/// `B_S(e, K)`, and with `σ^g(v) = v` for `g ≠ e` in the ball.
pub fn sofic_defect(sigma: &SoficApproximation, radius: usize) -> Result<DefectReport> {
    sofic_defect_with(sigma, radius, Execution::Parallel)
}

pub fn sofic_defect_with(
    sigma: &SoficApproximation,
    radius: usize,
    exec: Execution,
) -> Result<DefectReport> {
    let group = sigma.group();
    let ball = group.ball(radius)?;
    let n = sigma.n_vertices();
    let maps: Vec<Vec<u32>> = par::map_slice(exec, ball.elements(), |g| sigma.element_map(g));
    let pairs: Vec<(usize, usize)> = (0..ball.len())
        .flat_map(|i| (0..ball.len()).map(move |j| (i, j)))
        .collect();
    let homomorphism = par::map_slice(exec, &pairs, |&(i, j)| {
        let gh = group.multiply(ball.element(i), ball.element(j));
        let gh_map = match ball.position(&gh) {
            Some(k) => maps[k].clone(),
            None => sigma.element_map(&gh),
        };
        let bad = (0..n)
            .filter(|&v| maps[i][maps[j][v] as usize] != gh_map[v])
            .count();
        PairDefect {
            g: ball.element(i).clone(),
            h: ball.element(j).clone(),
            fraction: bad as f64 / n as f64,
        }
    });
    let e = ball.identity_index();
    let mut fixed_any = vec![false; n];
    let mut freeness = Vec::new();
    for (i, map) in maps.iter().enumerate() {
        if i == e {
            continue;
        }
        let mut count = 0;
        for v in 0..n {
            if map[v] as usize == v {
                count += 1;
                fixed_any[v] = true;
            }
        }
        freeness.push(FixedPointDefect {
            g: ball.element(i).clone(),
            fraction: count as f64 / n as f64,
        });
    }
    let max_homomorphism = homomorphism.iter().map(|p| p.fraction).fold(0.0, f64::max);
    let max_freeness = freeness.iter().map(|p| p.fraction).fold(0.0, f64::max);
    Ok(DefectReport {
        radius,
        homomorphism,
        freeness,
        max_homomorphism,
        max_freeness,
        fixed_union: fixed_any.iter().filter(|&&b| b).count() as f64 / n as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn torus_perm_is_cycle() {
        let t = torus_approximation(1, 4).unwrap();
        assert_eq!(t.perm(0), &[1, 2, 3, 0]);
        assert_eq!(t.perm(1), &[3, 0, 1, 2]);
    }

    #[test]
    fn torus_goodness_thresholds() {
        let t8 = torus_approximation(1, 8).unwrap();
        assert_eq!(good_vertices(&t8, 3).unwrap().good_count, 8);
        let t7 = torus_approximation(1, 7).unwrap();
        assert_eq!(good_vertices(&t7, 3).unwrap().good_count, 0);
        for r in 1..6 {
            let t = torus_approximation(1, 2 * r + 2).unwrap();
            assert_eq!(good_vertices(&t, r).unwrap().fraction, 1.0);
            let t = torus_approximation(1, 2 * r + 1).unwrap();
            assert_eq!(good_vertices(&t, r).unwrap().fraction, 0.0);
        }
        let t2 = torus_approximation(2, 6).unwrap();
        assert_eq!(good_vertices(&t2, 2).unwrap().fraction, 1.0);
        let t2 = torus_approximation(2, 5).unwrap();
        assert_eq!(good_vertices(&t2, 2).unwrap().fraction, 0.0);
    }

    #[test]
    fn single_point_model() {
        let s = random_permutation_approximation(2, 1, 3).unwrap();
        assert!((0..4).all(|i| s.perm(i) == [0]));
        let d = sofic_defect(&s, 1).unwrap();
        assert_eq!(d.max_freeness, 1.0);
        assert_eq!(good_vertices(&s, 1).unwrap().good_count, 0);
    }

    #[test]
    fn random_perm_is_deterministic() {
        let a = random_permutation_approximation(2, 500, 42).unwrap();
        let b = random_permutation_approximation(2, 500, 42).unwrap();
        let c = random_permutation_approximation(2, 500, 43).unwrap();
        for s in 0..4 {
            assert_eq!(a.perm(s), b.perm(s));
        }
        assert_ne!(a.perm(0), c.perm(0));
    }

    #[test]
    fn random_perm_mostly_good() {
        let s = random_permutation_approximation(2, 2000, 7).unwrap();
        let rep = good_vertices(&s, 2).unwrap();
        // short cycles of length <= 5 spoil about 12% of the 2-balls
        assert_eq!(rep.good_count, 1779);
        let graph = edge_graph(&s);
        for v in 0..s.n_vertices() {
            assert_eq!(rep.is_good(v), tree_ball(&graph, v, 2, 4), "vertex {v}");
        }
    }

    // For a free group the R-ball is a 2r-regular tree: good iff the graph ball
    // has the tree's vertex count and no extra edges.
    fn tree_ball(graph: &LabeledFiniteGraph, v: usize, radius: usize, degree: usize) -> bool {
        let dist = graph.distances_from(v, radius);
        let expected = 1 + degree * ((degree - 1).pow(radius as u32) - 1) / (degree - 2);
        if dist.len() != expected {
            return false;
        }
        let mut edges = 0;
        for &x in dist.keys() {
            if graph.degree(x) != degree && dist[&x] < radius {
                return false;
            }
            edges += graph
                .neighbors(x)
                .iter()
                .filter(|(y, _)| dist.contains_key(&(*y as usize)))
                .count();
        }
        edges / 2 == expected - 1
    }

    #[test]
    fn edge_graph_examples() {
        let g = edge_graph(&torus_approximation(1, 4).unwrap());
        assert_eq!(g.edges().len(), 4);
        assert!((0..4).all(|v| g.degree(v) == 2));
        let t23 = torus_approximation(2, 3).unwrap();
        let g = edge_graph(&t23);
        assert_eq!(g.n_vertices(), 9);
        assert!((0..9).all(|v| g.degree(v) == 4));
        assert!(g.is_symmetric(t23.group()));

        let group = GroupSpec::lattice(1).unwrap();
        let id = SoficApproximation::from_permutations(
            group,
            vec![vec![0, 1, 2], vec![0, 1, 2]],
            Provenance::Custom,
        )
        .unwrap();
        assert!(edge_graph(&id).edges().is_empty());
    }

    #[test]
    fn degree_mismatch_means_not_good() {
        // a fixed point of the generator gives degree < |S|
        let group = GroupSpec::lattice(1).unwrap();
        let s = SoficApproximation::from_permutations(
            group,
            vec![vec![0, 2, 3, 4, 5, 1], vec![0, 5, 1, 2, 3, 4]],
            Provenance::Custom,
        )
        .unwrap();
        let g = edge_graph(&s);
        assert_eq!(g.degree(0), 0);
        let rep = good_vertices(&s, 1).unwrap();
        assert!(!rep.is_good(0));
        assert!((1..6).all(|v| rep.is_good(v)));
    }

    #[test]
    fn inverse_mismatch_rejected() {
        let group = GroupSpec::lattice(1).unwrap();
        let r = SoficApproximation::from_permutations(
            group,
            vec![vec![1, 2, 0], vec![1, 2, 0]],
            Provenance::Custom,
        );
        assert!(r.is_err());
    }

    #[test]
    fn torus_defects_vanish() {
        let t = torus_approximation(2, 5).unwrap();
        let d = sofic_defect(&t, 2).unwrap();
        assert_eq!(d.max_homomorphism, 0.0);
        assert_eq!(d.max_freeness, 0.0);
        let t4 = torus_approximation(1, 4).unwrap();
        let d = sofic_defect(&t4, 2).unwrap();
        let plus2 = d
            .freeness
            .iter()
            .find(|f| f.g == GroupElement::Lattice(vec![2]))
            .unwrap();
        assert_eq!(plus2.fraction, 0.0);
        assert_eq!(d.max_homomorphism, 0.0);
        // +4 wraps around the 4-cycle
        let d = sofic_defect(&t4, 4).unwrap();
        assert_eq!(d.max_freeness, 1.0);
    }

    #[test]
    fn regular_action_goodness_matches_local_structure() {
        // ℤ/12 with generators ±1: the Cayley graph is a 12-cycle, so balls
        // of radius R are trees iff 2R + 1 < 12
        let g = GroupSpec::cyclic(12).unwrap();
        let s = regular_action(&g).unwrap();
        for r in 1..=6 {
            let rep = good_vertices(&s, r).unwrap();
            // ball radius r of the Cayley graph of ℤ/12 is the group's own
            // ball, so the finite model is locally exact at every radius
            assert_eq!(rep.fraction, 1.0, "radius {r}");
        }
        let d = sofic_defect(&s, 3).unwrap();
        assert_eq!(d.max_homomorphism, 0.0);
    }

    #[test]
    fn product_with_quotient_formula() {
        let base = torus_approximation(1, 4).unwrap();
        let q = QuotientAction::lattice_box(base.group(), &[2]).unwrap();
        let p = product_with_quotient(&base, &q).unwrap();
        assert_eq!(p.n_vertices(), 8);
        for v in 0..4 {
            for c in 0..2 {
                assert_eq!(p.act(0, v * 2 + c), ((v + 1) % 4) * 2 + (c + 1) % 2);
            }
        }
        let trivial = QuotientAction::lattice_box(base.group(), &[1]).unwrap();
        let same = product_with_quotient(&base, &trivial).unwrap();
        assert_eq!(same.perm(0), base.perm(0));
        for k in [2, 4] {
            let db = sofic_defect(&base, k).unwrap();
            let dp = sofic_defect(&p, k).unwrap();
            assert_eq!(db.max_homomorphism, dp.max_homomorphism);
            assert_eq!(db.max_freeness, dp.max_freeness);
        }
    }

    #[test]
    fn quotient_homomorphism_check() {
        let z2 = GroupSpec::lattice(2).unwrap();
        // generators that do not commute on 3 points
        let a = vec![1, 0, 2];
        let ai = a.clone();
        let b = vec![0, 2, 1];
        let bi = b.clone();
        assert!(QuotientAction::new(&z2, vec![a, ai, b, bi]).is_err());
        assert!(QuotientAction::lattice_box(&z2, &[2, 3]).unwrap().is_regular());
    }

    #[test]
    fn goodness_monotone_in_radius() {
        let s = random_permutation_approximation(2, 300, 11).unwrap();
        let mut prev = good_vertices(&s, 1).unwrap();
        for r in 2..=4 {
            let cur = good_vertices(&s, r).unwrap();
            assert!((0..300).all(|v| !cur.is_good(v) || prev.is_good(v)));
            prev = cur;
        }
    }

    #[test]
    fn bad_vertices_are_fixed_by_short_relations() {
        // for homomorphisms a vertex that is not R-good is fixed by some
        // g ≠ e with |g| ≤ 2R + 1
        for seed in 0..5 {
            let s = random_permutation_approximation(2, 60, seed).unwrap();
            for r in 1..=2 {
                let good = good_vertices(&s, r).unwrap();
                let d = sofic_defect(&s, 2 * r + 1).unwrap();
                assert_eq!(d.max_homomorphism, 0.0);
                assert!(1.0 - good.fraction <= d.fixed_union + 1e-12);
            }
        }
        let t = torus_approximation(2, 5).unwrap();
        let good = good_vertices(&t, 2).unwrap();
        let d = sofic_defect(&t, 5).unwrap();
        assert!(1.0 - good.fraction <= d.fixed_union + 1e-12);
    }

    #[test]
    fn one_good_vertices_have_full_degree() {
        let s = random_permutation_approximation(2, 200, 5).unwrap();
        let g = edge_graph(&s);
        let rep = good_vertices(&s, 1).unwrap();
        for v in 0..200 {
            assert!(g.degree(v) <= 4);
            if rep.is_good(v) {
                assert_eq!(g.degree(v), 4);
            }
        }
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let s = random_permutation_approximation(2, 400, 9).unwrap();
        let a = good_vertices_with(&s, 2, Execution::Sequential).unwrap();
        let b = good_vertices_with(&s, 2, Execution::Parallel).unwrap();
        assert_eq!(a.good, b.good);
    }
}
