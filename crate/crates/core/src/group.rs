//! Finitely generated groups with a fixed symmetric generating set, their word
//! metric and labeled Cayley balls.
//!
//! Three families are supported: the integer lattice ℤ^d with generators ±e_i,
//! the free group F_r with generators a_i^{±1}, and explicit finite groups
//! given by a multiplication table together with a symmetric generating
//! subset. Generators are indexed `0..|S|` and the involution `s ↦ s⁻¹` is
//! available through [`GroupSpec::generator_inverse`]. For ℤ^d and F_r the
//! generator `2i` is `+e_i` / `a_i` and `2i + 1` is its inverse.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::PatternWindow;

/// Default upper bound on the number of elements in a Cayley ball.
pub const DEFAULT_BALL_BUDGET: usize = 1_000_000;

/// Canonical form of a group element.
///
/// The derived ordering is lexicographic on the canonical form and fixes the
/// element order inside every [`CayleyBall`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GroupElement {
    /// Lattice vector.
    Lattice(Vec<i64>),
    /// Reduced word, letters are generator indices written left to right.
    Free(Vec<u16>),
    /// Row index into the multiplication table.
    Finite(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct FiniteGroup {
    table: Vec<Vec<usize>>,
    identity: usize,
    inverse: Vec<usize>,
    /// Generator indices of a shortest word, in application order.
    words: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum GroupKind {
    Lattice { dim: usize },
    Free { rank: usize },
    Finite(Box<FiniteGroup>),
}

/// A group `G` together with its symmetric generating set `S`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupSpec {
    kind: GroupKind,
    generators: Vec<GroupElement>,
    inverse_gen: Vec<usize>,
    ball_budget: usize,
}

impl GroupSpec {
    /// ℤ^d with generators `+e_1, -e_1, ..., +e_d, -e_d`.
    pub fn lattice(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidGroup("lattice dimension must be positive".into()));
        }
        let mut generators = Vec::with_capacity(2 * dim);
        for i in 0..dim {
            for sign in [1, -1] {
                let mut v = vec![0; dim];
                v[i] = sign;
                generators.push(GroupElement::Lattice(v));
            }
        }
        Ok(Self {
            kind: GroupKind::Lattice { dim },
            inverse_gen: (0..2 * dim).map(|i| i ^ 1).collect(),
            generators,
            ball_budget: DEFAULT_BALL_BUDGET,
        })
    }

    /// The free group of rank `r` with generators `a_1, a_1⁻¹, ..., a_r, a_r⁻¹`.
    pub fn free(rank: usize) -> Result<Self> {
        if rank == 0 {
            return Err(Error::InvalidGroup("free group rank must be positive".into()));
        }
        if 2 * rank > u16::MAX as usize {
            return Err(Error::InvalidGroup("free group rank too large".into()));
        }
        Ok(Self {
            kind: GroupKind::Free { rank },
            generators: (0..2 * rank)
                .map(|i| GroupElement::Free(vec![i as u16]))
                .collect(),
            inverse_gen: (0..2 * rank).map(|i| i ^ 1).collect(),
            ball_budget: DEFAULT_BALL_BUDGET,
        })
    }

    /// A finite group from its multiplication table `table[a][b] = a·b` and a
    /// symmetric generating subset given by element indices.
    pub fn finite(table: Vec<Vec<usize>>, generators: &[usize]) -> Result<Self> {
        let order = table.len();
        if order == 0 {
            return Err(Error::InvalidGroup("empty multiplication table".into()));
        }
        for row in &table {
            if row.len() != order || row.iter().any(|&x| x >= order) {
                return Err(Error::InvalidGroup("table must be square over 0..order".into()));
            }
        }
        let identity = (0..order)
            .find(|&e| (0..order).all(|x| table[e][x] == x && table[x][e] == x))
            .ok_or_else(|| Error::InvalidGroup("no identity element".into()))?;
        let mut inverse = vec![usize::MAX; order];
        for a in 0..order {
            inverse[a] = (0..order)
                .find(|&b| table[a][b] == identity && table[b][a] == identity)
                .ok_or_else(|| Error::InvalidGroup(format!("element {a} has no inverse")))?;
        }
        for a in 0..order {
            for b in 0..order {
                let ab = table[a][b];
                for c in 0..order {
                    if table[ab][c] != table[a][table[b][c]] {
                        return Err(Error::InvalidGroup(format!(
                            "associativity fails on ({a}, {b}, {c})"
                        )));
                    }
                }
            }
        }
        if generators.is_empty() {
            return Err(Error::InvalidGroup("generating set is empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for &s in generators {
            if s >= order {
                return Err(Error::InvalidGroup(format!("generator {s} out of range")));
            }
            if s == identity {
                return Err(Error::InvalidGroup("generating set contains the identity".into()));
            }
            if !seen.insert(s) {
                return Err(Error::InvalidGroup(format!("generator {s} repeated")));
            }
        }
        let inverse_gen = generators
            .iter()
            .map(|&s| {
                generators
                    .iter()
                    .position(|&t| t == inverse[s])
                    .ok_or_else(|| Error::InvalidGroup(format!("generator {s} lacks its inverse")))
            })
            .collect::<Result<Vec<_>>>()?;

        // shortest words by BFS; element s·p is reached from p via generator s
        let mut words: Vec<Option<Vec<usize>>> = vec![None; order];
        words[identity] = Some(Vec::new());
        let mut queue = VecDeque::from([identity]);
        while let Some(p) = queue.pop_front() {
            for (i, &s) in generators.iter().enumerate() {
                let q = table[s][p];
                if words[q].is_none() {
                    let mut w = words[p].clone().unwrap_or_default();
                    w.push(i);
                    words[q] = Some(w);
                    queue.push_back(q);
                }
            }
        }
        let words = words
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::InvalidGroup("generators do not generate the group".into()))?;

        Ok(Self {
            kind: GroupKind::Finite(Box::new(FiniteGroup {
                table,
                identity,
                inverse,
                words,
            })),
            generators: generators.iter().map(|&s| GroupElement::Finite(s)).collect(),
            inverse_gen,
            ball_budget: DEFAULT_BALL_BUDGET,
        })
    }

    /// Cyclic group ℤ/m with generators `{1, m-1}` (or `{1}` when m = 2).
    pub fn cyclic(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidGroup("cyclic group needs order >= 2".into()));
        }
        let table = (0..m).map(|a| (0..m).map(|b| (a + b) % m).collect()).collect();
        let gens: Vec<usize> = if m == 2 { vec![1] } else { vec![1, m - 1] };
        Self::finite(table, &gens)
    }

    pub fn with_ball_budget(mut self, budget: usize) -> Self {
        self.ball_budget = budget;
        self
    }

    pub fn ball_budget(&self) -> usize {
        self.ball_budget
    }

    pub fn num_generators(&self) -> usize {
        self.generators.len()
    }

    pub fn generator(&self, i: usize) -> &GroupElement {
        &self.generators[i]
    }

    pub fn generators(&self) -> &[GroupElement] {
        &self.generators
    }

    /// Index of `s⁻¹` for the generator with index `i`.
    pub fn generator_inverse(&self, i: usize) -> usize {
        self.inverse_gen[i]
    }

    pub fn lattice_dim(&self) -> Option<usize> {
        match self.kind {
            GroupKind::Lattice { dim } => Some(dim),
            _ => None,
        }
    }

    pub fn free_rank(&self) -> Option<usize> {
        match self.kind {
            GroupKind::Free { rank } => Some(rank),
            _ => None,
        }
    }

    pub fn finite_order(&self) -> Option<usize> {
        match &self.kind {
            GroupKind::Finite(f) => Some(f.table.len()),
            _ => None,
        }
    }

    pub fn is_abelian_lattice(&self) -> bool {
        matches!(self.kind, GroupKind::Lattice { .. })
    }

    pub fn identity(&self) -> GroupElement {
        match &self.kind {
            GroupKind::Lattice { dim } => GroupElement::Lattice(vec![0; *dim]),
            GroupKind::Free { .. } => GroupElement::Free(Vec::new()),
            GroupKind::Finite(f) => GroupElement::Finite(f.identity),
        }
    }

    /// Checks that `g` is a canonical element of this group.
    pub fn check_element(&self, g: &GroupElement) -> Result<()> {
        let ok = match (&self.kind, g) {
            (GroupKind::Lattice { dim }, GroupElement::Lattice(v)) => v.len() == *dim,
            (GroupKind::Free { rank }, GroupElement::Free(w)) => {
                w.iter().all(|&l| (l as usize) < 2 * rank)
                    && w.windows(2).all(|p| p[0] != p[1] ^ 1)
            }
            (GroupKind::Finite(f), GroupElement::Finite(i)) => *i < f.table.len(),
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("{g:?} is not a canonical element of this group")))
        }
    }

    pub fn multiply(&self, g: &GroupElement, h: &GroupElement) -> GroupElement {
        match (&self.kind, g, h) {
            (GroupKind::Lattice { .. }, GroupElement::Lattice(a), GroupElement::Lattice(b)) => {
                GroupElement::Lattice(a.iter().zip(b).map(|(x, y)| x + y).collect())
            }
            (GroupKind::Free { .. }, GroupElement::Free(a), GroupElement::Free(b)) => {
                let mut out = a.clone();
                let mut rest = b.as_slice();
                while let (Some(&last), Some(&first)) = (out.last(), rest.first()) {
                    if last == first ^ 1 {
                        out.pop();
                        rest = &rest[1..];
                    } else {
                        break;
                    }
                }
                out.extend_from_slice(rest);
                GroupElement::Free(out)
            }
            (GroupKind::Finite(f), GroupElement::Finite(a), GroupElement::Finite(b)) => {
                GroupElement::Finite(f.table[*a][*b])
            }
            _ => panic!("element kind does not match group kind"),
        }
    }

    pub fn inverse(&self, g: &GroupElement) -> GroupElement {
        match (&self.kind, g) {
            (_, GroupElement::Lattice(a)) => GroupElement::Lattice(a.iter().map(|x| -x).collect()),
            (_, GroupElement::Free(w)) => GroupElement::Free(w.iter().rev().map(|l| l ^ 1).collect()),
            (GroupKind::Finite(f), GroupElement::Finite(a)) => GroupElement::Finite(f.inverse[*a]),
            _ => panic!("element kind does not match group kind"),
        }
    }

    /// Word length `|g|_S`.
    pub fn word_length(&self, g: &GroupElement) -> usize {
        match (&self.kind, g) {
            (_, GroupElement::Lattice(v)) => v.iter().map(|x| x.unsigned_abs() as usize).sum(),
            (_, GroupElement::Free(w)) => w.len(),
            (GroupKind::Finite(f), GroupElement::Finite(a)) => f.words[*a].len(),
            _ => panic!("element kind does not match group kind"),
        }
    }

    /// Word metric `d_S(g, h) = |g·h⁻¹|_S`.
    pub fn distance(&self, g: &GroupElement, h: &GroupElement) -> usize {
        self.word_length(&self.multiply(g, &self.inverse(h)))
    }

    /// Generator indices of the canonical word of `g`, in the order they are
    /// applied: for `g = s_k ⋯ s_1` the result is `[s_1, ..., s_k]`.
    ///
    /// Lattice words move along coordinate 1 first, then coordinate 2, and so
    /// on; free-group words are the reduced word; finite-group words are the
    /// first shortest word found by breadth-first search.
    pub fn canonical_word(&self, g: &GroupElement) -> Vec<usize> {
        match (&self.kind, g) {
            (_, GroupElement::Lattice(v)) => {
                let mut word = Vec::new();
                for (i, &x) in v.iter().enumerate() {
                    let gen = if x >= 0 { 2 * i } else { 2 * i + 1 };
                    word.extend(std::iter::repeat(gen).take(x.unsigned_abs() as usize));
                }
                word
            }
            (_, GroupElement::Free(w)) => w.iter().rev().map(|&l| l as usize).collect(),
            (GroupKind::Finite(f), GroupElement::Finite(a)) => f.words[*a].clone(),
            _ => panic!("element kind does not match group kind"),
        }
    }

    /// Exact number of elements of word length at most `radius`, when a
    /// closed form is known (ℤ^d and F_r).
    pub fn ball_size_formula(&self, radius: usize) -> Option<u128> {
        match self.kind {
            GroupKind::Lattice { dim } => {
                // Σ_k 2^k C(d,k) C(R,k)
                let mut total = 0u128;
                for k in 0..=dim.min(radius) {
                    total += (1u128 << k) * binomial(dim, k) * binomial(radius, k);
                }
                Some(total)
            }
            GroupKind::Free { rank } => {
                if radius == 0 {
                    return Some(1);
                }
                let r = rank as u128;
                if r == 1 {
                    return Some(2 * radius as u128 + 1);
                }
                let q = 2 * r - 1;
                let mut pow = 1u128;
                for _ in 0..radius {
                    pow = pow.checked_mul(q)?;
                }
                Some(1 + 2 * r * (pow - 1) / (2 * r - 2))
            }
            GroupKind::Finite(_) => None,
        }
    }

    /// The closed ball `B_S(e, radius)` with its labeled internal edges.
    pub fn ball(&self, radius: usize) -> Result<CayleyBall> {
        if let Some(size) = self.ball_size_formula(radius) {
            if size > self.ball_budget as u128 {
                return Err(Error::Capacity {
                    what: "Cayley ball",
                    requested: size.min(usize::MAX as u128) as usize,
                    budget: self.ball_budget,
                });
            }
        }
        let e = self.identity();
        let mut seen: HashMap<GroupElement, usize> = HashMap::new();
        seen.insert(e.clone(), 0);
        let mut frontier = vec![e];
        let mut all = frontier.clone();
        for layer in 1..=radius {
            let mut next = Vec::new();
            for x in &frontier {
                for s in &self.generators {
                    let y = self.multiply(s, x);
                    if !seen.contains_key(&y) {
                        seen.insert(y.clone(), layer);
                        next.push(y);
                    }
                }
            }
            if all.len() + next.len() > self.ball_budget {
                return Err(Error::Capacity {
                    what: "Cayley ball",
                    requested: all.len() + next.len(),
                    budget: self.ball_budget,
                });
            }
            if next.is_empty() {
                break;
            }
            all.extend(next.iter().cloned());
            frontier = next;
        }
        all.sort();
        let index: HashMap<GroupElement, usize> =
            all.iter().enumerate().map(|(i, g)| (g.clone(), i)).collect();
        let lengths = all.iter().map(|g| seen[g]).collect();
        let step = all
            .iter()
            .map(|x| {
                self.generators
                    .iter()
                    .map(|s| index.get(&self.multiply(s, x)).copied())
                    .collect()
            })
            .collect();
        let identity_index = index[&self.identity()];
        Ok(CayleyBall {
            radius,
            elements: all,
            index,
            lengths,
            step,
            identity_index,
        })
    }

    /// For every `h` in `small`, the position of `h·g` in `big`.
    pub fn translation_map(
        &self,
        small: &CayleyBall,
        big: &CayleyBall,
        g: &GroupElement,
    ) -> Result<Vec<usize>> {
        small
            .elements()
            .iter()
            .map(|h| {
                let hg = self.multiply(h, g);
                big.position(&hg).ok_or_else(|| {
                    Error::Domain(format!(
                        "window of radius {} does not cover {hg:?}",
                        big.radius()
                    ))
                })
            })
            .collect()
    }

    /// `(g.ω)` restricted to `B_S(e, radius)`: the value at `h` is the window
    /// value at `h·g`.
    pub fn translate_window(
        &self,
        g: &GroupElement,
        window: &PatternWindow,
        radius: usize,
    ) -> Result<PatternWindow> {
        let need = radius + self.word_length(g);
        if window.radius() < need {
            return Err(Error::Domain(format!(
                "window radius {} < {need} needed to translate by {g:?}",
                window.radius()
            )));
        }
        let big = self.ball(window.radius())?;
        if big.len() != window.len() {
            return Err(Error::Domain("window size does not match its ball".into()));
        }
        let small = self.ball(radius)?;
        let map = self.translation_map(&small, &big, g)?;
        Ok(PatternWindow::new(
            radius,
            map.iter().map(|&i| window.symbols()[i]).collect(),
        ))
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let mut acc = 1u128;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// The ball `B_S(e, R)` in canonical element order, with left-multiplication
/// steps `x ↦ s·x` recorded for every generator. The edge `(x, s·x)` carries
/// the label `s = (s·x)·x⁻¹`.
#[derive(Debug, Clone)]
pub struct CayleyBall {
    radius: usize,
    elements: Vec<GroupElement>,
    index: HashMap<GroupElement, usize>,
    lengths: Vec<usize>,
    step: Vec<Vec<Option<usize>>>,
    identity_index: usize,
}

impl CayleyBall {
    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[GroupElement] {
        &self.elements
    }

    pub fn element(&self, i: usize) -> &GroupElement {
        &self.elements[i]
    }

    pub fn position(&self, g: &GroupElement) -> Option<usize> {
        self.index.get(g).copied()
    }

    pub fn identity_index(&self) -> usize {
        self.identity_index
    }

    /// Word length of the element at position `i`.
    pub fn length(&self, i: usize) -> usize {
        self.lengths[i]
    }

    /// Position of `s·x` for `x` at position `i`, if it lies in the ball.
    pub fn step(&self, i: usize, generator: usize) -> Option<usize> {
        self.step[i][generator]
    }

    /// Number of generators, i.e. step slots per element.
    pub fn step_width(&self) -> usize {
        self.step.first().map_or(0, Vec::len)
    }

    /// All internal labeled edges `(x, y, s)` with `y = s·x`.
    pub fn labeled_edges(&self) -> Vec<(usize, usize, usize)> {
        let mut edges = Vec::new();
        for (x, row) in self.step.iter().enumerate() {
            for (s, y) in row.iter().enumerate() {
                if let Some(y) = y {
                    edges.push((x, *y, s));
                }
            }
        }
        edges
    }

    /// Graph distances from the identity computed by BFS on the ball edges.
    pub fn bfs_distances(&self, from: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.len()];
        dist[from] = Some(0);
        let mut queue = VecDeque::from([from]);
        while let Some(x) = queue.pop_front() {
            let d = dist[x].unwrap_or(0);
            for y in self.step[x].iter().flatten() {
                if dist[*y].is_none() {
                    dist[*y] = Some(d + 1);
                    queue.push_back(*y);
                }
            }
        }
        dist
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lat(v: &[i64]) -> GroupElement {
        GroupElement::Lattice(v.to_vec())
    }

    fn symmetric_group_3() -> GroupSpec {
        // S_3 as permutations of {0,1,2}
        let perms: Vec<[usize; 3]> = vec![
            [0, 1, 2],
            [1, 0, 2],
            [0, 2, 1],
            [2, 1, 0],
            [1, 2, 0],
            [2, 0, 1],
        ];
        let idx = |p: [usize; 3]| perms.iter().position(|q| *q == p).unwrap();
        let table = perms
            .iter()
            .map(|a| {
                perms
                    .iter()
                    .map(|b| idx([a[b[0]], a[b[1]], a[b[2]]]))
                    .collect()
            })
            .collect();
        GroupSpec::finite(table, &[1, 2]).unwrap()
    }

    #[test]
    fn ball_sizes() {
        let z1 = GroupSpec::lattice(1).unwrap();
        let b = z1.ball(3).unwrap();
        assert_eq!(b.len(), 7);
        assert_eq!(
            b.elements().to_vec(),
            (-3..=3).map(|x| lat(&[x])).collect::<Vec<_>>()
        );
        let f2 = GroupSpec::free(2).unwrap();
        assert_eq!(f2.ball(2).unwrap().len(), 17);
        assert_eq!(GroupSpec::lattice(2).unwrap().ball(1).unwrap().len(), 5);
    }

    #[test]
    fn ball_sizes_match_closed_forms() {
        for d in 1..=3 {
            let g = GroupSpec::lattice(d).unwrap();
            for r in 0..=4 {
                assert_eq!(g.ball(r).unwrap().len() as u128, g.ball_size_formula(r).unwrap());
            }
        }
        for rank in 1..=3 {
            let g = GroupSpec::free(rank).unwrap();
            for r in 0..=4 {
                let n = g.ball(r).unwrap().len() as u128;
                assert_eq!(n, g.ball_size_formula(r).unwrap());
            }
        }
        // sphere sizes 4·3^{k-1}
        let f2 = GroupSpec::free(2).unwrap();
        let b = f2.ball(4).unwrap();
        for k in 1..=4 {
            let count = (0..b.len()).filter(|&i| b.length(i) == k).count();
            assert_eq!(count, 4 * 3usize.pow(k as u32 - 1));
        }
    }

    #[test]
    fn capacity_error() {
        let g = GroupSpec::free(2).unwrap().with_ball_budget(100);
        assert!(matches!(g.ball(5), Err(Error::Capacity { .. })));
        let z = GroupSpec::lattice(2).unwrap().with_ball_budget(10);
        assert!(matches!(z.ball(3), Err(Error::Capacity { .. })));
    }

    #[test]
    fn multiplication_examples() {
        let z2 = GroupSpec::lattice(2).unwrap();
        assert_eq!(z2.multiply(&lat(&[1, 0]), &lat(&[0, 1])), lat(&[1, 1]));
        let f2 = GroupSpec::free(2).unwrap();
        let (a, ai, b, bi) = (0u16, 1u16, 2u16, 3u16);
        let w = |v: &[u16]| GroupElement::Free(v.to_vec());
        assert_eq!(f2.multiply(&w(&[a]), &w(&[ai])), f2.identity());
        assert_eq!(f2.multiply(&w(&[a, b]), &w(&[bi, a])), w(&[a, a]));
        assert_eq!(f2.word_length(&f2.identity()), 0);
    }

    #[test]
    fn finite_group_validation() {
        let s3 = symmetric_group_3();
        assert_eq!(s3.finite_order(), Some(6));
        assert_eq!(s3.ball(3).unwrap().len(), 6);
        // not associative: a Latin square that is not a group
        let bad = vec![
            vec![0, 1, 2, 3, 4],
            vec![1, 0, 3, 4, 2],
            vec![2, 4, 0, 1, 3],
            vec![3, 2, 4, 0, 1],
            vec![4, 3, 1, 2, 0],
        ];
        assert!(GroupSpec::finite(bad, &[1]).is_err());
        // identity in generating set
        let z3 = GroupSpec::cyclic(3).unwrap();
        assert_eq!(z3.num_generators(), 2);
        let table = (0..3).map(|a| (0..3).map(|b| (a + b) % 3).collect()).collect();
        assert!(GroupSpec::finite(table, &[0, 1, 2]).is_err());
        // asymmetric generating set
        let table: Vec<Vec<usize>> = (0..3).map(|a| (0..3).map(|b| (a + b) % 3).collect()).collect();
        assert!(GroupSpec::finite(table, &[1]).is_err());
    }

    #[test]
    fn edge_labels_are_inverse_pairs() {
        for g in [GroupSpec::lattice(2).unwrap(), GroupSpec::free(2).unwrap(), symmetric_group_3()] {
            let b = g.ball(2).unwrap();
            let edges = b.labeled_edges();
            for &(x, y, s) in &edges {
                assert!(edges.contains(&(y, x, g.generator_inverse(s))));
                let label = g.multiply(b.element(y), &g.inverse(b.element(x)));
                assert_eq!(&label, g.generator(s));
            }
        }
    }

    #[test]
    fn bfs_distance_matches_word_metric() {
        for g in [GroupSpec::lattice(2).unwrap(), GroupSpec::free(2).unwrap(), symmetric_group_3()] {
            let b = g.ball(4).unwrap();
            // every pair inside B(e,2) has its geodesic inside B(e,4)
            let inner: Vec<usize> = (0..b.len()).filter(|&i| b.length(i) <= 2).collect();
            for &x in &inner {
                let dist = b.bfs_distances(x);
                for &y in &inner {
                    let expected = g.distance(b.element(y), b.element(x));
                    assert_eq!(dist[y], Some(expected), "{:?} {:?}", b.element(x), b.element(y));
                }
            }
        }
    }

    #[test]
    fn canonical_words_evaluate_to_element() {
        for g in [GroupSpec::lattice(3).unwrap(), GroupSpec::free(2).unwrap(), symmetric_group_3()] {
            let b = g.ball(3).unwrap();
            for x in b.elements() {
                let mut acc = g.identity();
                for s in g.canonical_word(x) {
                    acc = g.multiply(g.generator(s), &acc);
                }
                assert_eq!(&acc, x);
                assert_eq!(g.canonical_word(x).len(), g.word_length(x));
            }
        }
    }

    #[test]
    fn translate_window_examples() {
        let z1 = GroupSpec::lattice(1).unwrap();
        let w = PatternWindow::new(2, vec![10, 11, 12, 13, 14]); // positions -2..2
        let same = z1.translate_window(&lat(&[0]), &w, 2).unwrap();
        assert_eq!(same, w);
        let shifted = z1.translate_window(&lat(&[1]), &w, 1).unwrap();
        assert_eq!(shifted.symbols(), &[12, 13, 14]);
        assert!(z1.translate_window(&lat(&[2]), &w, 1).is_err());

        let f2 = GroupSpec::free(2).unwrap();
        let n = f2.ball(2).unwrap().len();
        let c = PatternWindow::new(2, vec![3; n]);
        let t = f2.translate_window(&GroupElement::Free(vec![0]), &c, 1).unwrap();
        assert!(t.symbols().iter().all(|&x| x == 3));
    }

    #[test]
    fn translation_composes_as_shift_action() {
        let f2 = GroupSpec::free(2).unwrap();
        let n = f2.ball(4).unwrap().len();
        let w = PatternWindow::new(4, (0..n).map(|i| (i * 7 % 5) as u8).collect());
        let g = GroupElement::Free(vec![0]);
        let h = GroupElement::Free(vec![3]);
        // g.(h.w) = (g·h).w: the value at x is w(x·g·h)
        let hw = f2.translate_window(&h, &w, 3).unwrap();
        let ghw = f2.translate_window(&g, &hw, 2).unwrap();
        let gh = f2.multiply(&g, &h);
        let direct = f2.translate_window(&gh, &w, 2).unwrap();
        assert_eq!(ghw, direct);
    }
}
