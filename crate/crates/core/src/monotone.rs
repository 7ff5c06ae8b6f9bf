//! Adapted dyadic schedules that approximate an operator from below in the
//! positive semi-definite order, the Gershgorin certificate, and monotone
//! IDS reports.

use num_bigint::{BigInt, BigUint, Sign};
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::operator::{assemble_induced_with, InducedOperator, LocalRule};
use crate::par::{self, Execution};
use crate::scalar::{f64_to_rat, rat_to_f64, ExactComplex, Value};
use crate::sofic::{GoodnessReport, SoficApproximation};
use crate::spectral::{counting_function, eigen_spectrum, EigenOptions, Spectrum};
use crate::measure::Configuration;

/// Nonzero diagonal values `F₁`, nonzero off-diagonal values `F₂` (closed
/// under conjugation) and the maximal number `D` of off-diagonal entries in a
/// row.
#[derive(Debug, Clone)]
pub struct ValueSets {
    f1: Vec<Value>,
    f2: Vec<Value>,
    d: usize,
}

impl ValueSets {
    pub fn new(f1: Vec<Value>, f2: Vec<Value>, d: usize) -> Result<Self> {
        if f1.iter().chain(&f2).any(Value::is_zero) {
            return Err(Error::ValueSetMismatch("value sets must exclude 0".into()));
        }
        if f1.iter().any(|v| !v.is_real()) {
            return Err(Error::ValueSetMismatch("diagonal values must be real".into()));
        }
        for h in &f2 {
            if !f2.iter().any(|x| *x == h.conj()) {
                return Err(Error::ValueSetMismatch(format!("{h} has no conjugate in F2")));
            }
        }
        Ok(Self { f1, f2, d })
    }

    /// The realized value sets of a rule, with `D = |B_S(e, M)| − 1`.
    pub fn of_rule(rule: &LocalRule) -> Result<Self> {
        let (f1, f2) = rule.value_sets();
        Self::new(f1, f2, rule.ball().len() - 1)
    }

    pub fn f1(&self) -> &[Value] {
        &self.f1
    }

    pub fn f2(&self) -> &[Value] {
        &self.f2
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Representatives of `F₂` with nonnegative imaginary part.
    pub fn f2_plus(&self) -> Vec<Value> {
        self.f2
            .iter()
            .filter(|h| to_exact(h).im >= BigRational::zero())
            .cloned()
            .collect()
    }
}

fn to_exact(v: &Value) -> ExactComplex {
    match v {
        Value::Exact(z) => z.clone(),
        Value::Float(z) => ExactComplex::new(
            f64_to_rat(z.re).expect("finite coefficient"),
            f64_to_rat(z.im).expect("finite coefficient"),
        ),
    }
}

fn pow4(m: usize) -> BigInt {
    BigInt::one() << (2 * m)
}

fn dyadic(num: BigInt, m: usize) -> BigRational {
    BigRational::new(num, pow4(m))
}

/// Dyadic approximants `a(m, f) ↑ f` and `b(m, h) → h`, `1 ≤ m ≤ m_max`.
#[derive(Debug, Clone)]
pub struct RationalSchedule {
    m_max: usize,
    c: BigRational,
    d: usize,
    f1: Vec<Value>,
    f2_plus: Vec<Value>,
    a: Vec<Vec<BigRational>>,
    b: Vec<Vec<ExactComplex>>,
}

/// Builds the schedule
///
/// * `b(m, h) = (⌈Re h·4^m⌉ + 1)/4^m + i(⌈Im h·4^m⌉ + 1)/4^m` for `Im h > 0`,
///   `b(m, h̄) = conj b(m, h)`,
/// * `b(m, h) = (⌈h·4^m⌉ + 1)/4^m` for real `h`, bumped to `1/4^m` when that
///   is zero,
/// * `a(m, f) = ⌊f·4^m⌋/4^m − 2c·4^{−m}` with `c = 1 + 6·D·|F₂⁺|`, lowered by
///   `4^{−m−1}` when that is zero.
pub fn build_schedule(values: &ValueSets, m_max: usize) -> Result<RationalSchedule> {
    if m_max == 0 {
        return Err(Error::Domain("schedule depth must be at least 1".into()));
    }
    let f2_plus = values.f2_plus();
    let c = BigRational::from_integer(BigInt::from(1 + 6 * values.d * f2_plus.len()));
    let mut a = Vec::with_capacity(m_max);
    let mut b = Vec::with_capacity(m_max);
    for m in 1..=m_max {
        let scale = BigRational::from_integer(pow4(m));
        let gap = dyadic(BigInt::from(2), m) * c.clone();
        a.push(
            values
                .f1
                .iter()
                .map(|f| {
                    let f = to_exact(f).re;
                    let mut v = dyadic((f * scale.clone()).floor().to_integer(), m) - gap.clone();
                    if v.is_zero() {
                        v -= dyadic(BigInt::one(), m + 1);
                    }
                    v
                })
                .collect(),
        );
        b.push(
            f2_plus
                .iter()
                .map(|h| {
                    let h = to_exact(h);
                    let up = |x: &BigRational| (x * scale.clone()).ceil().to_integer() + 1;
                    let mut re = dyadic(up(&h.re), m);
                    let im = if h.im.is_zero() {
                        BigRational::zero()
                    } else {
                        dyadic(up(&h.im), m)
                    };
                    if re.is_zero() && im.is_zero() {
                        re = dyadic(BigInt::one(), m);
                    }
                    ExactComplex::new(re, im)
                })
                .collect(),
        );
    }
    let s = RationalSchedule {
        m_max,
        c,
        d: values.d,
        f1: values.f1.clone(),
        f2_plus,
        a,
        b,
    };
    s.verify()?;
    Ok(s)
}

impl RationalSchedule {
    pub fn m_max(&self) -> usize {
        self.m_max
    }

    pub fn c(&self) -> &BigRational {
        &self.c
    }

    pub fn a(&self, m: usize, f: &Value) -> Option<&BigRational> {
        let i = self.f1.iter().position(|x| x == f)?;
        self.a.get(m.checked_sub(1)?).map(|row| &row[i])
    }

    pub fn b(&self, m: usize, h: &Value) -> Option<ExactComplex> {
        let row = self.b.get(m.checked_sub(1)?)?;
        if let Some(i) = self.f2_plus.iter().position(|x| x == h) {
            return Some(row[i].clone());
        }
        let hc = h.conj();
        let i = self.f2_plus.iter().position(|x| *x == hc)?;
        Some(row[i].conj())
    }

    /// Upper bound `(2c + 5/4 + 3D)·4^{−m}` on the row-sum norm of
    /// `H_m − H` for any operator adapted to this schedule.
    pub fn norm_gap_bound(&self, m: usize) -> f64 {
        let c = rat_to_f64(&self.c);
        (2.0 * c + 1.25 + 3.0 * self.d as f64) / 4f64.powi(m as i32)
    }

    /// Re-checks every schedule invariant in exact arithmetic.
    pub fn verify(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::ValueSetMismatch(msg));
        for (i, f) in self.f1.iter().enumerate() {
            let f = to_exact(f).re;
            for m in 1..=self.m_max {
                let am = &self.a[m - 1][i];
                if am.is_zero() || *am >= f {
                    return fail(format!("a({m}) = {am} is not a nonzero value below {f}"));
                }
                if m < self.m_max {
                    let diff = self.a[m][i].clone() - am.clone();
                    if diff <= self.two_d_sum(m) {
                        return fail(format!("gap inequality fails at m={m}"));
                    }
                }
            }
        }
        let three = dyadic(BigInt::from(3), 0);
        for (j, h) in self.f2_plus.iter().enumerate() {
            let h = to_exact(h);
            for m in 1..=self.m_max {
                let bm = &self.b[m - 1][j];
                if bm.is_zero() {
                    return fail(format!("b({m}) vanishes"));
                }
                if abs2(&(bm - &h)) >= (three.clone() / BigRational::from_integer(pow4(m))).pow(2) {
                    return fail(format!("b({m}) is not within 3/4^m of {h}"));
                }
                if m < self.m_max {
                    let next = &self.b[m][j];
                    if next.re > bm.re || next.im > bm.im {
                        return fail(format!("b is not componentwise nonincreasing at m={m}"));
                    }
                }
            }
        }
        Ok(())
    }

    /// `2·D·Σ_{h ∈ F₂⁺} |b(m, h) − h|`, as an exact upper bound.
    fn two_d_sum(&self, m: usize) -> BigRational {
        let mut s = BigRational::zero();
        for (j, h) in self.f2_plus.iter().enumerate() {
            let diff = &self.b[m - 1][j] - to_exact(h);
            s += sqrt_bounds(&abs2(&diff), 128).1;
        }
        s * BigRational::from_integer(BigInt::from(2 * self.d))
    }
}

fn abs2(z: &ExactComplex) -> BigRational {
    z.re.clone() * z.re.clone() + z.im.clone() * z.im.clone()
}

/// Rational bounds `lo ≤ √q ≤ hi` with `hi − lo ≤ 2^{−bits}` (relative to
/// the denominator scale).
fn sqrt_bounds(q: &BigRational, bits: usize) -> (BigRational, BigRational) {
    if q.is_zero() {
        return (BigRational::zero(), BigRational::zero());
    }
    let num = q.numer().to_biguint().expect("nonnegative");
    let den = q.denom().to_biguint().expect("positive");
    // √(n/d) = √(n·d·4^p) / (d·2^p)
    let scaled: BigUint = num * &den << (2 * bits);
    let root = scaled.sqrt();
    let exact = &root * &root == scaled;
    let denom = BigInt::from_biguint(Sign::Plus, den << bits);
    let lo = BigRational::new(BigInt::from_biguint(Sign::Plus, root.clone()), denom.clone());
    let hi = if exact {
        lo.clone()
    } else {
        BigRational::new(BigInt::from_biguint(Sign::Plus, root + 1u32), denom)
    };
    (lo, hi)
}

/// Exact modulus when it is rational.
fn exact_abs(z: &ExactComplex) -> Option<BigRational> {
    if z.im.is_zero() {
        return Some(z.re.abs());
    }
    if z.re.is_zero() {
        return Some(z.im.abs());
    }
    let q = abs2(z);
    let (n, d) = (q.numer().clone(), q.denom().clone());
    let (rn, rd) = (n.sqrt(), d.sqrt());
    (&rn * &rn == n && &rd * &rd == d).then(|| BigRational::new(rn, rd))
}

/// Outcome of [`gershgorin_psd`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Certificate {
    Certified,
    Inconclusive { row: usize },
}

impl Certificate {
    pub fn is_certified(&self) -> bool {
        matches!(self, Certificate::Certified)
    }
}

#[derive(PartialEq)]
enum RowVerdict {
    Holds,
    Fails,
}

/// Decides `t ≥ Σ|z_j|` (or `>` when strict) exactly.
fn dominates(t: &BigRational, zs: &[ExactComplex], strict: bool) -> RowVerdict {
    let ok = |lhs: &BigRational, rhs: &BigRational| if strict { lhs > rhs } else { lhs >= rhs };
    let mut exact_sum = BigRational::zero();
    let mut rest: Vec<BigRational> = Vec::new();
    for z in zs {
        match exact_abs(z) {
            Some(a) => exact_sum += a,
            None => rest.push(abs2(z)),
        }
    }
    if rest.is_empty() {
        return if ok(t, &exact_sum) { RowVerdict::Holds } else { RowVerdict::Fails };
    }
    let slack = t - &exact_sum;
    if slack.is_negative() {
        return RowVerdict::Fails;
    }
    if rest.len() == 1 {
        // slack against a single irrational modulus: compare squares, never equal
        let sq = slack.clone() * slack;
        return if sq > rest[0] { RowVerdict::Holds } else { RowVerdict::Fails };
    }
    let mut bits = 64;
    while bits <= 4096 {
        let (mut lo, mut hi) = (BigRational::zero(), BigRational::zero());
        for q in &rest {
            let (l, h) = sqrt_bounds(q, bits);
            lo += l;
            hi += h;
        }
        if ok(&slack, &hi) {
            return RowVerdict::Holds;
        }
        if slack < lo || (strict && slack == lo) {
            return RowVerdict::Fails;
        }
        bits *= 2;
    }
    RowVerdict::Fails
}

fn certify(h: &InducedOperator, strict: bool, skip_zero_rows: bool) -> Result<Certificate> {
    h.check_hermitian()?;
    for i in 0..h.n() {
        let row = h.row(i);
        if skip_zero_rows && row.is_empty() {
            continue;
        }
        let mut diag = BigRational::zero();
        let mut off = Vec::with_capacity(row.len());
        for (j, v) in row {
            let z = to_exact(v);
            if *j as usize == i {
                diag = z.re;
            } else {
                off.push(z);
            }
        }
        if dominates(&diag, &off, strict) == RowVerdict::Fails {
            return Ok(Certificate::Inconclusive { row: i });
        }
    }
    Ok(Certificate::Certified)
}

/// Certifies `H ⪰ 0` (`H ≻ 0` if `strict`) by diagonal dominance
/// `a_ii ≥ Σ_{j≠i} |a_ij|`, decided exactly. Float entries are treated as the
/// rationals they represent.
pub fn gershgorin_psd(h: &InducedOperator, strict: bool) -> Result<Certificate> {
    certify(h, strict, false)
}

/// Strict dominance on every row that is not identically zero, which
/// certifies `H ⪰ 0` with kernel exactly the span of the zero rows.
pub fn gershgorin_psd_on_support(h: &InducedOperator) -> Result<Certificate> {
    certify(h, true, true)
}

/// Rewrites a rule with every diagonal value `f` replaced by `a(m, f)` and
/// every off-diagonal value `h` by `b(m, h)`; zeros stay zero.
pub fn apply_schedule(rule: &LocalRule, schedule: &RationalSchedule, m: usize) -> Result<LocalRule> {
    if m == 0 || m > schedule.m_max {
        return Err(Error::Domain(format!("step {m} outside 1..={}", schedule.m_max)));
    }
    let (f1, f2) = rule.value_sets();
    for f in &f1 {
        if schedule.a(m, f).is_none() {
            return Err(Error::ValueSetMismatch(format!("diagonal value {f} not scheduled")));
        }
    }
    for h in &f2 {
        if schedule.b(m, h).is_none() {
            return Err(Error::ValueSetMismatch(format!("off-diagonal value {h} not scheduled")));
        }
    }
    rule.map_values(&format!("{}@{m}", rule.name()), |diag, v| {
        if v.is_zero() {
            Value::zero()
        } else if diag {
            Value::rational(schedule.a(m, v).expect("checked").clone())
        } else {
            Value::Exact(schedule.b(m, v).expect("checked"))
        }
    })
}

/// Outcome of [`schedule_step_psd_check`].
#[derive(Debug, Clone, Serialize)]
pub struct StepReport {
    pub m: usize,
    pub certified: bool,
    pub zero_rows: usize,
    pub min_eigenvalue: f64,
}

/// Certifies `H_{m+1} − H_m ⪰ 0` for the induced operators of one
/// configuration.
pub fn schedule_step_psd_check(
    rule: &LocalRule,
    schedule: &RationalSchedule,
    m: usize,
    sigma: &SoficApproximation,
    rho: &Configuration,
    goodness: &GoodnessReport,
) -> Result<StepReport> {
    if m + 1 > schedule.m_max {
        return Err(Error::Domain("no step beyond the schedule depth".into()));
    }
    let lo = assemble_induced_with(&apply_schedule(rule, schedule, m)?, sigma, rho, goodness, Execution::Sequential)?;
    let hi = assemble_induced_with(&apply_schedule(rule, schedule, m + 1)?, sigma, rho, goodness, Execution::Sequential)?;
    step_report(m, &lo, &hi)
}

fn step_report(m: usize, lo: &InducedOperator, hi: &InducedOperator) -> Result<StepReport> {
    let diff = hi.difference(lo)?;
    let cert = gershgorin_psd_on_support(&diff)?;
    if let Certificate::Inconclusive { row } = cert {
        return Err(Error::ScheduleCertification { step: m, row });
    }
    let spec = eigen_spectrum(&diff, EigenOptions::default())?;
    Ok(StepReport {
        m,
        certified: true,
        zero_rows: (0..diff.n()).filter(|&i| diff.row(i).is_empty()).count(),
        min_eigenvalue: spec.min().unwrap_or(0.0),
    })
}

/// One grid row of the monotone report.
#[derive(Debug, Clone, Serialize)]
pub struct MonotoneRow {
    pub m: usize,
    pub beta: f64,
    #[serde(rename = "N_m")]
    pub n_m: f64,
    #[serde(rename = "N_target")]
    pub n_target: f64,
    pub psd_certified: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotoneReport {
    pub rows: Vec<MonotoneRow>,
    pub steps: Vec<StepReport>,
    /// `max_β (N_m(β) − N_target(β))` for each `m`.
    pub max_excess: Vec<(usize, f64)>,
    /// Row-sum norm of `H_m − H_target` with the a priori bound, per `m`.
    pub norm_gaps: Vec<(usize, f64, f64)>,
    pub monotone_violations: usize,
}

/// The operators `H_1, …, H_{m_max}` and the target on one configuration.
pub struct MonotoneFamily {
    pub target: InducedOperator,
    pub scheduled: Vec<InducedOperator>,
}

pub fn assemble_family(
    rule: &LocalRule,
    schedule: &RationalSchedule,
    sigma: &SoficApproximation,
    rho: &Configuration,
    goodness: &GoodnessReport,
    exec: Execution,
) -> Result<MonotoneFamily> {
    let target = assemble_induced_with(rule, sigma, rho, goodness, exec)?;
    let scheduled = (1..=schedule.m_max)
        .map(|m| assemble_induced_with(&apply_schedule(rule, schedule, m)?, sigma, rho, goodness, exec))
        .collect::<Result<Vec<_>>>()?;
    Ok(MonotoneFamily { target, scheduled })
}

/// Counting functions of the scheduled operators against the target on a
/// grid, with certified steps and the monotonicity check.
pub fn monotone_ids_report(
    rule: &LocalRule,
    schedule: &RationalSchedule,
    sigma: &SoficApproximation,
    rho: &Configuration,
    goodness: &GoodnessReport,
    grid: &[f64],
    exec: Execution,
) -> Result<MonotoneReport> {
    let family = assemble_family(rule, schedule, sigma, rho, goodness, exec)?;
    monotone_report_for(&family, schedule, grid, exec)
}

pub fn monotone_report_for(
    family: &MonotoneFamily,
    schedule: &RationalSchedule,
    grid: &[f64],
    exec: Execution,
) -> Result<MonotoneReport> {
    let m_max = family.scheduled.len();
    let steps = par::map_range(exec, m_max.saturating_sub(1), |k| {
        step_report(k + 1, &family.scheduled[k], &family.scheduled[k + 1])
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut all: Vec<&InducedOperator> = family.scheduled.iter().collect();
    all.push(&family.target);
    let spectra: Vec<Spectrum> = par::map_slice(exec, &all, |h| eigen_spectrum(h, EigenOptions::default()))
        .into_iter()
        .collect::<Result<_>>()?;
    let n = family.target.n() as f64;
    let counts: Vec<Vec<usize>> = spectra
        .iter()
        .map(|s| grid.iter().map(|&b| counting_function(s, b)).collect())
        .collect();
    let mut violations = 0;
    let mut first_violation = None;
    for m in 1..m_max {
        for (k, &beta) in grid.iter().enumerate() {
            if counts[m][k] > counts[m - 1][k] {
                violations += 1;
                first_violation.get_or_insert((m, beta));
            }
        }
    }
    if let Some((m, beta)) = first_violation {
        return Err(Error::MonotonicityViolation { m, next: m + 1, beta });
    }
    let mut rows = Vec::with_capacity(m_max * grid.len());
    let mut max_excess = Vec::with_capacity(m_max);
    for m in 1..=m_max {
        let mut excess = f64::NEG_INFINITY;
        for (k, &beta) in grid.iter().enumerate() {
            let n_m = counts[m - 1][k] as f64 / n;
            let n_t = counts[m_max][k] as f64 / n;
            excess = excess.max(n_m - n_t);
            rows.push(MonotoneRow {
                m,
                beta,
                n_m,
                n_target: n_t,
                psd_certified: m == m_max || steps.get(m - 1).is_some_and(|s| s.certified),
            });
        }
        max_excess.push((m, excess));
    }
    let norm_gaps = family
        .scheduled
        .iter()
        .enumerate()
        .map(|(k, h)| -> Result<(usize, f64, f64)> {
            let d = family.target.difference(h)?;
            Ok((k + 1, d.row_sum_bound(), schedule.norm_gap_bound(k + 1)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MonotoneReport {
        rows,
        steps,
        max_excess,
        norm_gaps,
        monotone_violations: violations,
    })
}
