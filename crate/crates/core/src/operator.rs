//! Local rules for equivariant operators, their validation, the induced
//! finite-volume matrices and exact moment oracles.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use num_complex::Complex64;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::group::{CayleyBall, GroupElement, GroupSpec};
use crate::measure::{pullback_window, Configuration, MeasureModel, DEFAULT_ENUMERATION_BUDGET};
use crate::par::{self, Execution};
use crate::rng::rng_for;
use crate::scalar::Value;
use crate::sofic::{edge_graph, good_vertices_with, GoodnessReport, SoficApproximation};

/// Coefficient table `c(g, w)` for `g ∈ B_S(e, M)`, indexed by ball position.
#[derive(Debug, Clone, PartialEq)]
pub enum Coefficients {
    /// `c(g, w) = values[g][w(e)]`: each coefficient reads only the symbol at
    /// the base point.
    Site(Vec<Vec<Value>>),
    /// `c(g, w) = overrides[g][w]` when present, `default[g]` otherwise; `w` is
    /// the whole window on `B_S(e, M)`.
    Window {
        default: Vec<Value>,
        overrides: Vec<BTreeMap<Vec<u8>, Value>>,
    },
}

/// An equivariant operator family `H^ω` given by `H^ω(e, g) = c(g, ω|_{B(e,M)})`.
#[derive(Debug, Clone)]
pub struct LocalRule {
    name: String,
    group: GroupSpec,
    hopping: usize,
    ball: CayleyBall,
    alphabet_size: usize,
    coefficients: Coefficients,
}

impl LocalRule {
    /// A rule whose coefficients depend on the symbol at the base point only.
    pub fn site(
        name: &str,
        group: GroupSpec,
        hopping: usize,
        alphabet_size: usize,
        values: Vec<Vec<Value>>,
    ) -> Result<Self> {
        let ball = group.ball(hopping)?;
        if values.len() != ball.len() || values.iter().any(|v| v.len() != alphabet_size) {
            return Err(Error::Domain(format!(
                "site rule needs {} x {alphabet_size} coefficients",
                ball.len()
            )));
        }
        Self::finish(name, group, hopping, ball, alphabet_size, Coefficients::Site(values))
    }

    /// A rule with default coefficients per ball element and per-window
    /// overrides.
    pub fn window(
        name: &str,
        group: GroupSpec,
        hopping: usize,
        alphabet_size: usize,
        default: Vec<Value>,
        overrides: Vec<BTreeMap<Vec<u8>, Value>>,
    ) -> Result<Self> {
        let ball = group.ball(hopping)?;
        if default.len() != ball.len() || overrides.len() != ball.len() {
            return Err(Error::Domain(format!("window rule needs {} entries", ball.len())));
        }
        for table in &overrides {
            for w in table.keys() {
                if w.len() != ball.len() || w.iter().any(|&a| a as usize >= alphabet_size) {
                    return Err(Error::Domain(format!("override window {w:?} is malformed")));
                }
            }
        }
        Self::finish(
            name,
            group,
            hopping,
            ball,
            alphabet_size,
            Coefficients::Window { default, overrides },
        )
    }

    fn finish(
        name: &str,
        group: GroupSpec,
        hopping: usize,
        ball: CayleyBall,
        alphabet_size: usize,
        coefficients: Coefficients,
    ) -> Result<Self> {
        if alphabet_size == 0 || alphabet_size > 256 {
            return Err(Error::Domain("alphabet size must be in 1..=256".into()));
        }
        let rule = Self {
            name: name.to_string(),
            group,
            hopping,
            ball,
            alphabet_size,
            coefficients,
        };
        let e = rule.ball.identity_index();
        if rule.values_at(e).any(|v| !v.is_real()) {
            return Err(Error::Domain("diagonal coefficients must be real".into()));
        }
        Ok(rule)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn group(&self) -> &GroupSpec {
        &self.group
    }

    /// Hopping range `M`.
    pub fn hopping(&self) -> usize {
        self.hopping
    }

    pub fn ball(&self) -> &CayleyBall {
        &self.ball
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn coefficients(&self) -> &Coefficients {
        &self.coefficients
    }

    /// `c(g, w)` with `g` given by its ball position and `w` a window on
    /// `B_S(e, M)` in ball order.
    #[inline]
    pub fn coefficient(&self, g: usize, window: &[u8]) -> &Value {
        match &self.coefficients {
            Coefficients::Site(values) => &values[g][window[self.ball.identity_index()] as usize],
            Coefficients::Window { default, overrides } => {
                overrides[g].get(window).unwrap_or(&default[g])
            }
        }
    }

    /// Every value the coefficient of ball element `g` can take.
    fn values_at(&self, g: usize) -> Box<dyn Iterator<Item = &Value> + '_> {
        match &self.coefficients {
            Coefficients::Site(values) => Box::new(values[g].iter()),
            Coefficients::Window { default, overrides } => {
                let full = (self.alphabet_size as u128)
                    .checked_pow(self.ball.len() as u32)
                    .is_some_and(|c| c == overrides[g].len() as u128);
                let d = (!full).then_some(&default[g]);
                Box::new(d.into_iter().chain(overrides[g].values()))
            }
        }
    }

    /// Whether `c(g, ·)` is identically zero.
    pub fn vanishes_at(&self, g: usize) -> bool {
        self.values_at(g).all(Value::is_zero)
    }

    /// Whether `c(g, ·)` does not depend on the window.
    fn is_constant_at(&self, g: usize) -> bool {
        let mut it = self.values_at(g);
        match it.next() {
            Some(first) => it.all(|v| v == first),
            None => true,
        }
    }

    pub fn is_exact(&self) -> bool {
        (0..self.ball.len()).all(|g| self.values_at(g).all(Value::is_exact))
    }

    /// Realized nonzero diagonal and off-diagonal value sets `(F₁, F₂)`.
    pub fn value_sets(&self) -> (Vec<Value>, Vec<Value>) {
        let e = self.ball.identity_index();
        let mut f1 = Vec::new();
        let mut f2 = Vec::new();
        for g in 0..self.ball.len() {
            let target = if g == e { &mut f1 } else { &mut f2 };
            for v in self.values_at(g) {
                if !v.is_zero() && !target.contains(v) {
                    target.push(v.clone());
                }
            }
        }
        (f1, f2)
    }

    /// `Σ_g max_w |c(g, w)|`, an upper bound on `sup_ω ‖H^ω‖`.
    pub fn row_sum_bound(&self) -> f64 {
        (0..self.ball.len())
            .map(|g| self.values_at(g).map(Value::abs_f64).fold(0.0, f64::max))
            .sum()
    }

    /// Same rule with every coefficient mapped through `f(is_diagonal, value)`.
    pub fn map_values(&self, name: &str, f: impl Fn(bool, &Value) -> Value) -> Result<LocalRule> {
        let e = self.ball.identity_index();
        let coefficients = match &self.coefficients {
            Coefficients::Site(values) => Coefficients::Site(
                values
                    .iter()
                    .enumerate()
                    .map(|(g, row)| row.iter().map(|v| f(g == e, v)).collect())
                    .collect(),
            ),
            Coefficients::Window { default, overrides } => Coefficients::Window {
                default: default.iter().enumerate().map(|(g, v)| f(g == e, v)).collect(),
                overrides: overrides
                    .iter()
                    .enumerate()
                    .map(|(g, t)| t.iter().map(|(w, v)| (w.clone(), f(g == e, v))).collect())
                    .collect(),
            },
        };
        Self::finish(
            name,
            self.group.clone(),
            self.hopping,
            self.ball.clone(),
            self.alphabet_size,
            coefficients,
        )
    }

    /// Stable digest of the rule's group, range and coefficient data.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{:?}|{}|{}|", self.group.generators(), self.hopping, self.alphabet_size));
        match &self.coefficients {
            Coefficients::Site(values) => {
                for row in values {
                    for v in row {
                        h.update(format!("{v};"));
                    }
                    h.update("|");
                }
            }
            Coefficients::Window { default, overrides } => {
                for (d, t) in default.iter().zip(overrides) {
                    h.update(format!("{d};"));
                    for (w, v) in t {
                        h.update(format!("{w:?}={v};"));
                    }
                    h.update("|");
                }
            }
        }
        hex(&h.finalize()[..16])
    }

    /// Ball elements whose coefficient is not identically zero.
    fn support(&self) -> Vec<usize> {
        (0..self.ball.len()).filter(|&g| !self.vanishes_at(g)).collect()
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// `H_F^ω u(x) = Δu(x) + F(ω(x)) u(x)` with `Δu(x) = Σ_{s∈S} (u(s·x) − u(x))`.
pub fn schrodinger_rule(group: &GroupSpec, potential: &[Value]) -> Result<LocalRule> {
    let ball = group.ball(1)?;
    let degree = Value::int(group.num_generators() as i64);
    let values = (0..ball.len())
        .map(|g| {
            if g == ball.identity_index() {
                potential.iter().map(|f| f.sub(&degree)).collect()
            } else {
                vec![Value::one(); potential.len()]
            }
        })
        .collect();
    LocalRule::site("schrodinger", group.clone(), 1, potential.len(), values)
}

/// The lattice or tree Laplacian `Δ`.
pub fn laplacian_rule(group: &GroupSpec) -> Result<LocalRule> {
    schrodinger_rule(group, &[Value::zero()])
}

/// `H^ω = diag(F(ω(x)))`, hopping range 0.
pub fn diagonal_rule(group: &GroupSpec, potential: &[Value]) -> Result<LocalRule> {
    LocalRule::site("diagonal", group.clone(), 0, potential.len(), vec![potential.to_vec()])
}

/// The rule with every coefficient zero.
pub fn zero_rule(group: &GroupSpec, hopping: usize, alphabet_size: usize) -> Result<LocalRule> {
    let ball = group.ball(hopping)?;
    LocalRule::site(
        "zero",
        group.clone(),
        hopping,
        alphabet_size,
        vec![vec![Value::zero(); alphabet_size]; ball.len()],
    )
}

/// Outcome of [`validate_local_rule`].
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub diagonal_values: Vec<Value>,
    pub offdiagonal_values: Vec<Value>,
    pub row_sum_bound: f64,
    pub windows_checked: u128,
}

const FLOAT_TOL: f64 = 1e-12;

fn same_value(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Exact(x), Value::Exact(y)) => x == y,
        _ => (a.to_c64() - b.to_c64()).norm() <= FLOAT_TOL * (1.0 + a.abs_f64()),
    }
}

/// Checks `c(g, w|_{B(M)}) = conj(c(g⁻¹, (g.w)|_{B(M)}))` for every `g ∈ B(M)`
/// and every window `w` on `B(2M)`, which makes every `H^ω` self-adjoint.
pub fn validate_local_rule(rule: &LocalRule) -> Result<ValidationReport> {
    validate_local_rule_with_budget(rule, DEFAULT_ENUMERATION_BUDGET)
}

pub fn validate_local_rule_with_budget(rule: &LocalRule, budget: u128) -> Result<ValidationReport> {
    let group = &rule.group;
    let ball = &rule.ball;
    let e = ball.identity_index();
    let a = rule.alphabet_size;
    let inverse_pos = |g: usize| -> usize {
        ball.position(&group.inverse(ball.element(g)))
            .expect("balls are closed under inversion")
    };
    let mut checked: u128 = 0;
    match &rule.coefficients {
        Coefficients::Site(values) => {
            // (g.w)(e) = w(g), so only the pair (w(e), w(g)) matters
            for g in 0..ball.len() {
                let gi = inverse_pos(g);
                let mut bad: Vec<Vec<u8>> = Vec::new();
                for x in 0..a {
                    for y in 0..a {
                        let (x_at_g, y_at_g) = if g == e { (x, x) } else { (x, y) };
                        checked += 1;
                        if !same_value(&values[g][x_at_g], &values[gi][y_at_g].conj()) {
                            bad.push(vec![x as u8, y as u8]);
                        }
                    }
                }
                if !bad.is_empty() {
                    return Err(Error::SelfAdjointness {
                        generator: format!("{:?}", ball.element(g)),
                        window: bad[0].clone(),
                        count: bad.len(),
                    });
                }
            }
        }
        Coefficients::Window { .. } => {
            let big = group.ball(2 * rule.hopping)?;
            let count = (a as u128).checked_pow(big.len() as u32).unwrap_or(u128::MAX);
            if count > budget {
                return Err(Error::Budget {
                    requested: count,
                    budget,
                    hint: "reduce the alphabet or hopping range",
                });
            }
            let restrict = group.translation_map(ball, &big, &group.identity())?;
            let shifts: Vec<Vec<usize>> = (0..ball.len())
                .map(|g| group.translation_map(ball, &big, ball.element(g)))
                .collect::<Result<_>>()?;
            for g in 0..ball.len() {
                let gi = inverse_pos(g);
                let mut first = None;
                let mut bad = 0usize;
                for_each_pattern(a, big.len(), |w| {
                    checked += 1;
                    let here: Vec<u8> = restrict.iter().map(|&i| w[i]).collect();
                    let there: Vec<u8> = shifts[g].iter().map(|&i| w[i]).collect();
                    if !same_value(rule.coefficient(g, &here), &rule.coefficient(gi, &there).conj()) {
                        bad += 1;
                        first.get_or_insert_with(|| w.to_vec());
                    }
                });
                if let Some(window) = first {
                    return Err(Error::SelfAdjointness {
                        generator: format!("{:?}", ball.element(g)),
                        window,
                        count: bad,
                    });
                }
            }
        }
    }
    let (diagonal_values, offdiagonal_values) = rule.value_sets();
    Ok(ValidationReport {
        diagonal_values,
        offdiagonal_values,
        row_sum_bound: rule.row_sum_bound(),
        windows_checked: checked,
    })
}

/// Calls `f` on every word of length `len` over `0..alphabet`, first
/// position fastest.
fn for_each_pattern(alphabet: usize, len: usize, mut f: impl FnMut(&[u8])) {
    let mut w = vec![0u8; len];
    loop {
        f(&w);
        let mut i = 0;
        loop {
            if i == len {
                return;
            }
            w[i] += 1;
            if (w[i] as usize) < alphabet {
                break;
            }
            w[i] = 0;
            i += 1;
        }
    }
}

/// A sparse Hermitian matrix with exact or floating coefficients.
#[derive(Debug, Clone)]
pub struct InducedOperator {
    n: usize,
    rows: Vec<Vec<(u32, Value)>>,
    goodness_radius: usize,
    rule: String,
    rho_digest: u64,
}

impl InducedOperator {
    /// Builds a matrix from explicit rows; zero entries are dropped and
    /// columns sorted. Fails if the result is not Hermitian.
    pub fn from_rows(rows: Vec<Vec<(usize, Value)>>) -> Result<Self> {
        let n = rows.len();
        let mut out = Vec::with_capacity(n);
        for row in rows {
            let mut r: Vec<(u32, Value)> = Vec::with_capacity(row.len());
            for (c, v) in row {
                if c >= n {
                    return Err(Error::Domain(format!("column {c} out of range")));
                }
                if !v.is_zero() {
                    r.push((c as u32, v));
                }
            }
            r.sort_by_key(|(c, _)| *c);
            if r.windows(2).any(|p| p[0].0 == p[1].0) {
                return Err(Error::Domain("duplicate column in a row".into()));
            }
            out.push(r);
        }
        let op = Self {
            n,
            rows: out,
            goodness_radius: 0,
            rule: "explicit".into(),
            rho_digest: 0,
        };
        op.check_hermitian()?;
        Ok(op)
    }

    /// Dense row-major construction, for small examples.
    pub fn from_dense(entries: Vec<Vec<Value>>) -> Result<Self> {
        Self::from_rows(
            entries
                .into_iter()
                .map(|row| row.into_iter().enumerate().collect())
                .collect(),
        )
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[(u32, Value)] {
        &self.rows[i]
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn goodness_radius(&self) -> usize {
        self.goodness_radius
    }

    pub fn rule_name(&self) -> &str {
        &self.rule
    }

    pub fn rho_digest(&self) -> u64 {
        self.rho_digest
    }

    pub fn entry(&self, i: usize, j: usize) -> Option<&Value> {
        let row = &self.rows[i];
        row.binary_search_by_key(&(j as u32), |(c, _)| *c)
            .ok()
            .map(|k| &row[k].1)
    }

    pub fn is_exact(&self) -> bool {
        self.rows.iter().flatten().all(|(_, v)| v.is_exact())
    }

    pub fn is_real(&self) -> bool {
        self.rows.iter().flatten().all(|(_, v)| v.is_real())
    }

    /// Whether every entry is a Gaussian integer.
    pub fn is_integer(&self) -> bool {
        self.rows.iter().flatten().all(|(_, v)| v.is_gaussian_integer())
    }

    /// Whether the matrix has no off-diagonal entries.
    pub fn is_diagonal(&self) -> bool {
        self.rows
            .iter()
            .enumerate()
            .all(|(i, r)| r.iter().all(|(c, _)| *c as usize == i))
    }

    pub fn diagonal(&self) -> Vec<Value> {
        (0..self.n)
            .map(|i| self.entry(i, i).cloned().unwrap_or_else(Value::zero))
            .collect()
    }

    pub fn check_hermitian(&self) -> Result<()> {
        for (i, row) in self.rows.iter().enumerate() {
            for (j, v) in row {
                let j = *j as usize;
                let ok = match self.entry(j, i) {
                    Some(w) => same_value(v, &w.conj()),
                    None => false,
                };
                if !ok {
                    return Err(Error::NonHermitian { row: i, col: j });
                }
            }
        }
        Ok(())
    }

    /// Maximum absolute row sum, an upper bound on the operator norm.
    pub fn row_sum_bound(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.iter().map(|(_, v)| v.abs_f64()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Dense row-major complex copy.
    pub fn to_dense(&self) -> Vec<Complex64> {
        let mut a = vec![Complex64::new(0.0, 0.0); self.n * self.n];
        for (i, row) in self.rows.iter().enumerate() {
            for (j, v) in row {
                a[i * self.n + *j as usize] = v.to_c64();
            }
        }
        a
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|(j, v)| v.to_c64() * x[*j as usize]).sum())
            .collect()
    }

    /// `self − other`, entrywise.
    pub fn difference(&self, other: &InducedOperator) -> Result<InducedOperator> {
        if self.n != other.n {
            return Err(Error::Domain("dimension mismatch".into()));
        }
        let rows = (0..self.n)
            .map(|i| {
                let mut acc: BTreeMap<u32, Value> = BTreeMap::new();
                for (j, v) in &self.rows[i] {
                    acc.insert(*j, v.clone());
                }
                for (j, v) in &other.rows[i] {
                    let cur = acc.remove(j).unwrap_or_else(Value::zero);
                    acc.insert(*j, cur.sub(v));
                }
                acc.into_iter().map(|(j, v)| (j as usize, v)).collect()
            })
            .collect();
        Self::from_rows(rows)
    }

    /// `(H^k)(v, v)` by sparse propagation of `δ_v`, exact when the entries are.
    pub fn power_diagonal(&self, v: usize, k: usize) -> Value {
        let mut vec: BTreeMap<u32, Value> = BTreeMap::from([(v as u32, Value::one())]);
        for _ in 0..k {
            let mut next: BTreeMap<u32, Value> = BTreeMap::new();
            for (x, a) in &vec {
                // (H u)(y) = Σ_x H(y, x) u(x) = Σ_x conj(H(x, y)) u(x)
                for (y, h) in &self.rows[*x as usize] {
                    let add = h.conj().mul(a);
                    match next.get_mut(y) {
                        Some(cur) => *cur = cur.add(&add),
                        None => {
                            next.insert(*y, add);
                        }
                    }
                }
            }
            vec = next;
        }
        vec.remove(&(v as u32)).unwrap_or_else(Value::zero)
    }

    /// `(1/n) Tr H^k` in floating point.
    pub fn normalized_trace_power(&self, k: usize, exec: Execution) -> f64 {
        let diag = par::map_range(exec, self.n, |v| {
            let mut vec: HashMap<u32, Complex64> = HashMap::from([(v as u32, Complex64::new(1.0, 0.0))]);
            for _ in 0..k {
                let mut next: HashMap<u32, Complex64> = HashMap::with_capacity(vec.len() * 4);
                for (x, a) in &vec {
                    for (y, h) in &self.rows[*x as usize] {
                        *next.entry(*y).or_default() += h.to_c64().conj() * a;
                    }
                }
                vec = next;
            }
            vec.get(&(v as u32)).map_or(0.0, |z| z.re)
        });
        // fixed summation order keeps the result independent of scheduling
        diag.iter().sum::<f64>() / self.n as f64
    }

    /// Writes the lower triangle in Matrix Market coordinate format.
    pub fn write_matrix_market<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let real = self.is_real();
        let field = if real { "real symmetric" } else { "complex hermitian" };
        writeln!(out, "%%MatrixMarket matrix coordinate {field}")?;
        let lower: Vec<(usize, usize, Complex64)> = self
            .rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| {
                r.iter()
                    .filter(move |(j, _)| *j as usize <= i)
                    .map(move |(j, v)| (i, *j as usize, v.to_c64()))
            })
            .collect();
        writeln!(out, "{} {} {}", self.n, self.n, lower.len())?;
        for (i, j, z) in lower {
            if real {
                writeln!(out, "{} {} {:.16e}", i + 1, j + 1, z.re)?;
            } else {
                writeln!(out, "{} {} {:.16e} {:.16e}", i + 1, j + 1, z.re, z.im)?;
            }
        }
        Ok(())
    }
}

/// `H_n^ρ(w, v) = c(g, Π_w(ρ)|_{B(M)})` when both `w` and `v = σ^g(w)` are
/// `2M`-good, and zero otherwise.
pub fn assemble_induced(
    rule: &LocalRule,
    sigma: &SoficApproximation,
    rho: &Configuration,
    goodness: &GoodnessReport,
) -> Result<InducedOperator> {
    assemble_induced_with(rule, sigma, rho, goodness, Execution::Parallel)
}

pub fn assemble_induced_with(
    rule: &LocalRule,
    sigma: &SoficApproximation,
    rho: &Configuration,
    goodness: &GoodnessReport,
    exec: Execution,
) -> Result<InducedOperator> {
    let n = sigma.n_vertices();
    if rho.len() != n || goodness.good.len() != n {
        return Err(Error::Domain("configuration or goodness report has the wrong length".into()));
    }
    if goodness.radius < 2 * rule.hopping {
        return Err(Error::Domain(format!(
            "assembly needs {}-goodness, report has radius {}",
            2 * rule.hopping,
            goodness.radius
        )));
    }
    if rho.symbols().iter().any(|&a| a as usize >= rule.alphabet_size) {
        return Err(Error::Domain("configuration uses symbols outside the rule's alphabet".into()));
    }
    let words = sigma.ball_words(&rule.ball);
    let support = rule.support();
    let rows = par::map_range(exec, n, |w| {
        if !goodness.is_good(w) {
            return Vec::new();
        }
        let images = sigma.ball_images(&words, w);
        let window: Vec<u8> = images.iter().map(|&x| rho.at(x)).collect();
        let mut row: Vec<(u32, Value)> = support
            .iter()
            .filter_map(|&g| {
                let v = images[g];
                if !goodness.is_good(v) {
                    return None;
                }
                let c = rule.coefficient(g, &window);
                (!c.is_zero()).then(|| (v as u32, c.clone()))
            })
            .collect();
        row.sort_by_key(|(c, _)| *c);
        row
    });
    let op = InducedOperator {
        n,
        rows,
        goodness_radius: goodness.radius,
        rule: rule.name.clone(),
        rho_digest: rho.digest(),
    };
    op.check_hermitian()?;
    Ok(op)
}

/// Adjacency matrix of the simple graph `E_n` (loops dropped, parallel
/// edges merged). Its entries lie in `{0, 1}` and its rows agree with the
/// Cayley adjacency at every 2-good vertex, so it approximates `Δ + |S|·I`
/// without zeroing the rows of bad vertices.
pub fn graph_adjacency(sigma: &SoficApproximation) -> Result<InducedOperator> {
    let graph = edge_graph(sigma);
    let rows = (0..graph.n_vertices())
        .map(|v| {
            let mut ws: Vec<u32> = graph.neighbors(v).iter().map(|&(w, _)| w).collect();
            ws.sort_unstable();
            ws.dedup();
            ws.into_iter().map(|w| (w as usize, Value::one())).collect()
        })
        .collect();
    let mut op = InducedOperator::from_rows(rows)?;
    op.rule = "graph-adjacency".into();
    Ok(op)
}

/// `⟨δ_e, (H^ω)^k δ_e⟩` where `window` is `ω` on `big`, a ball of radius at
/// least `(k+1)M`.
pub fn local_moment(
    rule: &LocalRule,
    big: &CayleyBall,
    window: &[u8],
    k: usize,
) -> Result<Value> {
    let group = &rule.group;
    let m = rule.hopping;
    if big.radius() < (k + 1) * m {
        return Err(Error::Domain("window too small for the requested power".into()));
    }
    let support = rule.support();
    let identity = group.identity();
    // windows (x.ω)|_{B(M)} for each x reached, cached by position in `big`
    let mut cache: HashMap<usize, Vec<u8>> = HashMap::new();
    let mut window_at = |x: usize| -> Vec<u8> {
        cache
            .entry(x)
            .or_insert_with(|| {
                rule.ball
                    .elements()
                    .iter()
                    .map(|h| {
                        let hx = group.multiply(h, big.element(x));
                        window[big.position(&hx).expect("inside the big ball")]
                    })
                    .collect()
            })
            .clone()
    };
    // u_j = H^j δ_e restricted to elements that can still return to e
    let mut u: BTreeMap<usize, Value> = BTreeMap::from([(big.position(&identity).expect("e"), Value::one())]);
    for j in 0..k {
        let remaining = k - j - 1;
        let mut next: BTreeMap<usize, Value> = BTreeMap::new();
        // (H u)(x) = Σ_g c(g, x.ω) u(g·x): push from y = g·x back to x = g⁻¹·y
        for (&y, uy) in &u {
            let y_el = big.element(y).clone();
            for &g in &support {
                let x_el = group.multiply(&group.inverse(rule.ball.element(g)), &y_el);
                if group.word_length(&x_el) > remaining * m {
                    continue;
                }
                let x = big.position(&x_el).expect("inside the big ball");
                let c = rule.coefficient(g, &window_at(x)).clone();
                if c.is_zero() {
                    continue;
                }
                let add = c.mul(uy);
                match next.get_mut(&x) {
                    Some(cur) => *cur = cur.add(&add),
                    None => {
                        next.insert(x, add);
                    }
                }
            }
        }
        u = next;
    }
    Ok(u.remove(&big.position(&identity).expect("e")).unwrap_or_else(Value::zero))
}

/// Outcome of [`power_diagonal_check`].
#[derive(Debug, Clone, Serialize)]
pub struct PowerCheckReport {
    pub k: usize,
    pub goodness_radius: usize,
    pub tested: usize,
    pub tested_fraction: f64,
    pub max_discrepancy: f64,
    pub exact: bool,
    pub exact_agreement: bool,
}

/// Compares `(H_n^ρ)^k(v, v)` with the closed-path value of
/// `(H^{Π_v ρ})^k(e, e)` at every `4kM`-good vertex.
pub fn power_diagonal_check(
    rule: &LocalRule,
    sigma: &SoficApproximation,
    rho: &Configuration,
    k: usize,
) -> Result<PowerCheckReport> {
    power_diagonal_check_with(rule, sigma, rho, k, Execution::Parallel)
}

pub fn power_diagonal_check_with(
    rule: &LocalRule,
    sigma: &SoficApproximation,
    rho: &Configuration,
    k: usize,
    exec: Execution,
) -> Result<PowerCheckReport> {
    let m = rule.hopping;
    let assembly_goodness = good_vertices_with(sigma, 2 * m, exec)?;
    let op = assemble_induced_with(rule, sigma, rho, &assembly_goodness, exec)?;
    let radius = (4 * k.max(1) * m).max(2 * m);
    let test_goodness = good_vertices_with(sigma, radius, exec)?;
    let big = rule.group.ball((k + 1) * m)?;
    let words = sigma.ball_words(&big);
    let n = sigma.n_vertices();
    let results = par::map_range(exec, n, |v| -> Result<Option<(Value, Value)>> {
        if !test_goodness.is_good(v) {
            return Ok(None);
        }
        let window: Vec<u8> = words.iter().map(|w| rho.at(sigma.apply_word(w, v))).collect();
        let local = local_moment(rule, &big, &window, k)?;
        Ok(Some((op.power_diagonal(v, k), local)))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut tested = 0;
    let mut max_discrepancy: f64 = 0.0;
    let mut exact_agreement = true;
    for (a, b) in results.into_iter().flatten() {
        tested += 1;
        max_discrepancy = max_discrepancy.max((a.to_c64() - b.to_c64()).norm());
        exact_agreement &= a.is_exact() && b.is_exact() && a == b;
    }
    Ok(PowerCheckReport {
        k,
        goodness_radius: radius,
        tested,
        tested_fraction: tested as f64 / n as f64,
        max_discrepancy,
        exact: rule.is_exact(),
        exact_agreement: exact_agreement && rule.is_exact(),
    })
}

/// How [`expected_moment`] evaluates the average over `μ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MomentMode {
    /// Enumerate closed walks and average each exactly over its dependent
    /// sites, subject to an enumeration budget per walk.
    Exact { budget: u128 },
    /// Average the closed-walk value over sampled windows.
    MonteCarlo { samples: usize, seed: u64 },
}

impl Default for MomentMode {
    fn default() -> Self {
        MomentMode::Exact {
            budget: DEFAULT_ENUMERATION_BUDGET,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub k: usize,
    pub value: f64,
    /// Standard error for Monte Carlo estimates, zero for exact ones.
    pub std_error: f64,
    pub exact: bool,
}

/// `∫ ⟨δ_e, (H^ω)^k δ_e⟩ dμ(ω)`.
pub fn expected_moment(
    rule: &LocalRule,
    model: &MeasureModel,
    k: usize,
    mode: MomentMode,
) -> Result<MomentEstimate> {
    match mode {
        MomentMode::Exact { budget } => expected_moment_exact(rule, model, k, budget),
        MomentMode::MonteCarlo { samples, seed } => {
            if samples < 2 {
                return Err(Error::Domain("Monte Carlo mode needs at least 2 samples".into()));
            }
            let big = rule.group.ball((k + 1) * rule.hopping)?;
            let vals = par::map_range(Execution::Parallel, samples, |s| -> Result<f64> {
                let mut rng = rng_for(seed, u64::MAX, s as u64);
                let w = model.sample_on_sites(big.elements(), &mut rng);
                Ok(local_moment(rule, &big, &w, k)?.re_f64())
            })
            .into_iter()
            .collect::<Result<Vec<f64>>>()?;
            let mean = vals.iter().sum::<f64>() / samples as f64;
            let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (samples - 1) as f64;
            Ok(MomentEstimate {
                k,
                value: mean,
                std_error: (var / samples as f64).sqrt(),
                exact: false,
            })
        }
    }
}

/// Steps `(g, x)` of a closed walk: the factor `H(x, g·x) = c(g, x.ω)`.
type Walk = Vec<(usize, GroupElement)>;

fn closed_walks(rule: &LocalRule, k: usize) -> Vec<Walk> {
    let group = &rule.group;
    let support = rule.support();
    let m = rule.hopping;
    let mut out = Vec::new();
    let mut stack: Vec<(GroupElement, Walk)> = vec![(group.identity(), Vec::new())];
    while let Some((x, walk)) = stack.pop() {
        if walk.len() == k {
            if group.word_length(&x) == 0 {
                out.push(walk);
            }
            continue;
        }
        let remaining = k - walk.len() - 1;
        for &g in &support {
            let y = group.multiply(rule.ball.element(g), &x);
            if group.word_length(&y) <= remaining * m {
                let mut w = walk.clone();
                w.push((g, x.clone()));
                stack.push((y, w));
            }
        }
    }
    out
}

fn expected_moment_exact(
    rule: &LocalRule,
    model: &MeasureModel,
    k: usize,
    budget: u128,
) -> Result<MomentEstimate> {
    let group = &rule.group;
    let walks = closed_walks(rule, k);
    // walks sharing the same dependent sites share one marginal
    let mut by_sites: BTreeMap<Vec<GroupElement>, Vec<Walk>> = BTreeMap::new();
    for walk in walks {
        let mut sites: BTreeSet<GroupElement> = BTreeSet::new();
        for (g, x) in &walk {
            if rule.is_constant_at(*g) {
                continue;
            }
            match rule.coefficients {
                Coefficients::Site(_) => {
                    sites.insert(x.clone());
                }
                Coefficients::Window { .. } => {
                    for h in rule.ball.elements() {
                        sites.insert(group.multiply(h, x));
                    }
                }
            }
        }
        by_sites.entry(sites.into_iter().collect()).or_default().push(walk);
    }
    let mut total = 0.0;
    for (sites, walks) in &by_sites {
        let outcomes = model.marginal_on_sites(sites, budget)?;
        let index: HashMap<&GroupElement, usize> = sites.iter().enumerate().map(|(i, g)| (g, i)).collect();
        // per walk step, the window positions read from the outcome
        let plans: Vec<Vec<(usize, Vec<Option<usize>>)>> = walks
            .iter()
            .map(|walk| {
                walk.iter()
                    .map(|(g, x)| {
                        let pos = rule
                            .ball
                            .elements()
                            .iter()
                            .map(|h| index.get(&group.multiply(h, x)).copied())
                            .collect();
                        (*g, pos)
                    })
                    .collect()
            })
            .collect();
        for (p, pattern) in &outcomes {
            let mut sum = Value::zero();
            let mut window = vec![0u8; rule.ball.len()];
            for plan in &plans {
                let mut prod = Value::one();
                for (g, pos) in plan {
                    for (slot, src) in window.iter_mut().zip(pos) {
                        *slot = src.map_or(0, |i| pattern[i]);
                    }
                    prod = prod.mul(rule.coefficient(*g, &window));
                    if prod.is_zero() {
                        break;
                    }
                }
                sum = sum.add(&prod);
            }
            total += p * sum.re_f64();
        }
    }
    Ok(MomentEstimate {
        k,
        value: total,
        std_error: 0.0,
        exact: true,
    })
}

/// Number of closed walks of length `k` from `e` in the Cayley graph,
/// counted by direct enumeration.
pub fn closed_walk_count(group: &GroupSpec, k: usize) -> Result<u128> {
    let rule = schrodinger_rule(group, &[Value::int(group.num_generators() as i64)])?;
    Ok(closed_walks(&rule, k).len() as u128)
}

/// Evaluates `c(g, Π_v(ρ)|_{B(M)})` directly, bypassing assembly.
pub fn coefficient_at(
    rule: &LocalRule,
    sigma: &SoficApproximation,
    rho: &Configuration,
    v: usize,
    g: usize,
) -> Result<Value> {
    let w = pullback_window(rho, sigma, v, rule.hopping)?;
    Ok(rule.coefficient(g, w.symbols()).clone())
}
