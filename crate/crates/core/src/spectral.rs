//! Spectra of induced operators, counting functions, atoms, punctured
//! intervals, distances between distribution functions and analytic
//! reference curves.

use std::f64::consts::PI;

use num_rational::BigRational;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::eigen::tridiagonalize;
use crate::error::{Error, Result};
use crate::operator::InducedOperator;
use crate::par::{self, Execution};
use crate::scalar::{f64_to_rat, rat_to_f64};

/// Largest dimension handled by the dense eigensolver by default.
pub const DEFAULT_DENSE_BUDGET: usize = 4096;

#[derive(Debug, Clone, Copy)]
pub struct EigenOptions {
    /// Bound on `‖Hx − λx‖ / ‖H‖` for the spot-checked pairs.
    pub tol: f64,
    pub dense_budget: usize,
    pub max_sweeps: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            dense_budget: DEFAULT_DENSE_BUDGET,
            max_sweeps: 60,
        }
    }
}

/// Sorted eigenvalues of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    exact: Option<Vec<BigRational>>,
    residual: f64,
    scale: f64,
}

impl Spectrum {
    /// Wraps eigenvalues computed elsewhere.
    pub fn from_values(mut eigenvalues: Vec<f64>) -> Self {
        eigenvalues.sort_by(f64::total_cmp);
        let scale = eigenvalues.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        Self {
            eigenvalues,
            exact: None,
            residual: 0.0,
            scale,
        }
    }

    /// An exactly known spectrum.
    pub fn from_rationals(mut values: Vec<BigRational>) -> Self {
        values.sort();
        let eigenvalues: Vec<f64> = values.iter().map(rat_to_f64).collect();
        let scale = eigenvalues.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        Self {
            eigenvalues,
            exact: Some(values),
            residual: 0.0,
            scale,
        }
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn exact_eigenvalues(&self) -> Option<&[BigRational]> {
        self.exact.as_deref()
    }

    pub fn is_exact(&self) -> bool {
        self.exact.is_some()
    }

    /// Largest relative residual over the spot-checked eigenpairs.
    pub fn max_residual(&self) -> f64 {
        self.residual
    }

    /// Spectral radius.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn min(&self) -> Option<f64> {
        self.eigenvalues.first().copied()
    }

    pub fn max(&self) -> Option<f64> {
        self.eigenvalues.last().copied()
    }

    /// Tolerance used to decide `λ ≤ β` at ties: zero for exact spectra.
    pub fn tie_tol(&self) -> f64 {
        if self.is_exact() {
            0.0
        } else {
            1e-9 * self.scale.max(1.0)
        }
    }

    /// `θ(x^k) = (1/n) Σ λ_i^k`.
    pub fn moment(&self, k: usize) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.eigenvalues.iter().map(|x| x.powi(k as i32)).sum::<f64>() / self.len() as f64
    }

    /// Fraction of eigenvalues in `[a, b]`.
    pub fn mass_in(&self, a: f64, b: f64) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.eigenvalues.iter().filter(|&&x| a <= x && x <= b).count() as f64 / self.len() as f64
    }

    /// The normalized counting function as a step distribution function.
    pub fn ids(&self) -> EmpiricalIds {
        EmpiricalIds {
            values: self.eigenvalues.clone(),
        }
    }
}

fn matrix_hash(h: &InducedOperator) -> u64 {
    let mut s = Sha256::new();
    for i in 0..h.n() {
        for (j, v) in h.row(i) {
            s.update(format!("{i},{j},{v};"));
        }
    }
    u64::from_le_bytes(s.finalize()[..8].try_into().expect("digest length"))
}

/// Full spectrum of an induced operator.
///
/// Diagonal matrices are read off directly (exactly when their entries are
/// rational). Otherwise the matrix is reduced densely and the eigenvalues
/// found by implicit QL; a sample of eigenpairs is then checked by inverse
/// iteration against the sparse matrix.
pub fn eigen_spectrum(h: &InducedOperator, opts: EigenOptions) -> Result<Spectrum> {
    let n = h.n();
    if h.is_diagonal() {
        let diag = h.diagonal();
        if h.is_exact() {
            let exact: Vec<BigRational> = diag
                .iter()
                .map(|v| v.as_exact().expect("exact entries").re.clone())
                .collect();
            return Ok(Spectrum::from_rationals(exact));
        }
        return Ok(Spectrum::from_values(diag.iter().map(|v| v.re_f64()).collect()));
    }
    if n > opts.dense_budget {
        return Err(Error::Capacity {
            what: "dense eigensolve",
            requested: n,
            budget: opts.dense_budget,
        });
    }
    let hash = matrix_hash(h);
    let (eigenvalues, vectors): (Vec<f64>, Box<dyn Fn(f64) -> Vec<num_complex::Complex64>>) =
        if h.is_real() {
            let dense: Vec<f64> = h.to_dense().iter().map(|z| z.re).collect();
            let tri = tridiagonalize(dense, n);
            let ev = tri
                .eigenvalues(opts.max_sweeps)
                .ok_or(Error::NoConvergence { hash })?;
            (ev, Box::new(move |l| tri.eigenvector(l)))
        } else {
            let tri = tridiagonalize(h.to_dense(), n);
            let ev = tri
                .eigenvalues(opts.max_sweeps)
                .ok_or(Error::NoConvergence { hash })?;
            (ev, Box::new(move |l| tri.eigenvector(l)))
        };
    let scale = eigenvalues.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let norm = scale.max(f64::MIN_POSITIVE);
    let sample: Vec<usize> = if n <= 64 {
        (0..n).collect()
    } else {
        let mut s: Vec<usize> = (0..32).map(|k| k * (n - 1) / 31).collect();
        s.dedup();
        s
    };
    let mut residual: f64 = 0.0;
    for &i in &sample {
        let lambda = eigenvalues[i];
        let x = vectors(lambda);
        let hx = h.matvec(&x);
        let r: f64 = hx
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b * lambda).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let xn: f64 = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        residual = residual.max(if scale == 0.0 { r } else { r / (xn * norm) });
    }
    if !(residual <= opts.tol) {
        return Err(Error::NoConvergence { hash });
    }
    Ok(Spectrum {
        eigenvalues,
        exact: None,
        residual,
        scale,
    })
}

/// Spectra of several matrices, each solved on one thread.
pub fn eigen_spectra(
    hs: &[InducedOperator],
    opts: EigenOptions,
    exec: Execution,
) -> Result<Vec<Spectrum>> {
    par::map_slice(exec, hs, |h| eigen_spectrum(h, opts))
        .into_iter()
        .collect()
}

/// `#{i : λ_i ≤ β}`, with ties decided up to [`Spectrum::tie_tol`].
pub fn counting_function(spec: &Spectrum, beta: f64) -> usize {
    if let Some(exact) = &spec.exact {
        return match f64_to_rat(beta) {
            Some(b) => exact.partition_point(|x| *x <= b),
            None if beta > 0.0 => exact.len(),
            None => 0,
        };
    }
    let t = beta + spec.tie_tol();
    spec.eigenvalues.partition_point(|&x| x <= t)
}

/// Fraction of eigenvalues within `cluster_tol` of `alpha`.
pub fn atom_mass(spec: &Spectrum, alpha: f64, cluster_tol: f64) -> f64 {
    if spec.is_empty() {
        return 0.0;
    }
    let c = spec
        .eigenvalues
        .iter()
        .filter(|&&x| (x - alpha).abs() <= cluster_tol)
        .count();
    c as f64 / spec.len() as f64
}

/// Atom mass at a rational point: exact counting for exact spectra, the
/// clustered float count otherwise.
pub fn atom_mass_rational(spec: &Spectrum, alpha: &BigRational, cluster_tol: f64) -> f64 {
    match &spec.exact {
        Some(exact) if !exact.is_empty() => {
            exact.iter().filter(|x| *x == alpha).count() as f64 / exact.len() as f64
        }
        _ => atom_mass(spec, rat_to_f64(alpha), cluster_tol),
    }
}

/// Default atom tolerance `1e−8 · max(1, scale)`.
pub fn default_cluster_tol(spec: &Spectrum) -> f64 {
    1e-8 * spec.scale().max(1.0)
}

/// Fraction of eigenvalues with `cluster_tol < |λ − α| < ε`.
pub fn punctured_mass(spec: &Spectrum, alpha: f64, eps: f64, cluster_tol: f64) -> Result<f64> {
    if !(0.0 < cluster_tol && cluster_tol < eps) {
        return Err(Error::Domain("need 0 < cluster_tol < eps".into()));
    }
    if spec.is_empty() {
        return Ok(0.0);
    }
    let c = spec
        .eigenvalues
        .iter()
        .filter(|&&x| {
            let d = (x - alpha).abs();
            cluster_tol < d && d < eps
        })
        .count();
    Ok(c as f64 / spec.len() as f64)
}

/// `log(max(R, 1)) / log(1/ε)`.
///
/// For a Hermitian matrix with Gaussian-integer entries the product of the
/// nonzero eigenvalues is a nonzero integer, so it has modulus at least one.
/// If `m` of the `n` eigenvalues lie in `(0, ε)` in modulus and the rest are
/// at most `R`, then `ε^m R^{n−m} ≥ 1`, giving `m/n ≤ log R / log(1/ε)`.
pub fn punctured_mass_bound(norm_bound: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) || norm_bound.is_nan() {
        return Err(Error::Domain("need eps in (0, 1)".into()));
    }
    Ok(norm_bound.max(1.0).ln() / (1.0 / eps).ln())
}

/// A distribution function on the real line.
pub trait DistributionFunction {
    fn value(&self, beta: f64) -> f64;
    fn left_limit(&self, beta: f64) -> f64;
    /// Points outside of which the function is affine or constant between
    /// consecutive entries, sorted.
    fn breakpoints(&self) -> Vec<f64>;
}

/// Normalized eigenvalue counting function.
#[derive(Debug, Clone)]
pub struct EmpiricalIds {
    values: Vec<f64>,
}

impl EmpiricalIds {
    pub fn new(mut values: Vec<f64>) -> Self {
        values.sort_by(f64::total_cmp);
        Self { values }
    }
}

impl DistributionFunction for EmpiricalIds {
    fn value(&self, beta: f64) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.partition_point(|&x| x <= beta) as f64 / self.values.len() as f64
    }

    fn left_limit(&self, beta: f64) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.partition_point(|&x| x < beta) as f64 / self.values.len() as f64
    }

    fn breakpoints(&self) -> Vec<f64> {
        let mut b = self.values.clone();
        b.dedup();
        b
    }
}

/// Piecewise-linear interpolation of `(β, N)` samples, constant beyond the
/// ends.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TabulatedIds {
    points: Vec<(f64, f64)>,
}

impl TabulatedIds {
    pub fn new(mut points: Vec<(f64, f64)>) -> Result<Self> {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        if points.is_empty() || points.iter().any(|(b, v)| !b.is_finite() || !v.is_finite()) {
            return Err(Error::Domain("tabulated curve needs finite points".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }
}

impl DistributionFunction for TabulatedIds {
    fn value(&self, beta: f64) -> f64 {
        let p = &self.points;
        let k = p.partition_point(|&(b, _)| b <= beta);
        if k == 0 {
            return p[0].1;
        }
        if k == p.len() {
            return p[k - 1].1;
        }
        let (b0, v0) = p[k - 1];
        let (b1, v1) = p[k];
        if b1 == b0 {
            return v1;
        }
        v0 + (v1 - v0) * (beta - b0) / (b1 - b0)
    }

    fn left_limit(&self, beta: f64) -> f64 {
        let p = &self.points;
        let k = p.partition_point(|&(b, _)| b < beta);
        if k == 0 {
            return p[0].1;
        }
        if k == p.len() {
            return p[k - 1].1;
        }
        let (b0, v0) = p[k - 1];
        let (b1, v1) = p[k];
        v0 + (v1 - v0) * (beta - b0) / (b1 - b0)
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.0).collect()
    }
}

/// Analytic IDS of the lattice Laplacian `Δ` on `ℤ^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReferenceIds {
    /// `N(β) = 1 − arccos(1 + β/2)/π` on `[−4, 0]`.
    Lattice1,
    /// `N₂(β) = ∫₀¹ N₁(β − (2cos πt − 2)) dt`, midpoint rule with 10⁵ nodes.
    Lattice2,
}

const LATTICE2_NODES: usize = 100_000;

fn lattice1(beta: f64) -> f64 {
    if beta <= -4.0 {
        0.0
    } else if beta >= 0.0 {
        1.0
    } else {
        1.0 - (1.0 + beta / 2.0).acos() / PI
    }
}

impl ReferenceIds {
    pub fn for_dim(d: usize) -> Result<Self> {
        match d {
            1 => Ok(Self::Lattice1),
            2 => Ok(Self::Lattice2),
            _ => Err(Error::Domain(format!("no reference IDS for dimension {d}"))),
        }
    }
}

impl DistributionFunction for ReferenceIds {
    fn value(&self, beta: f64) -> f64 {
        match self {
            Self::Lattice1 => lattice1(beta),
            Self::Lattice2 => {
                if beta <= -8.0 {
                    return 0.0;
                }
                if beta >= 0.0 {
                    return 1.0;
                }
                let h = 1.0 / LATTICE2_NODES as f64;
                let sum: f64 = (0..LATTICE2_NODES)
                    .map(|k| {
                        let t = (k as f64 + 0.5) * h;
                        lattice1(beta - (2.0 * (PI * t).cos() - 2.0))
                    })
                    .sum();
                sum * h
            }
        }
    }

    fn left_limit(&self, beta: f64) -> f64 {
        self.value(beta)
    }

    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// `sup_β |a(β) − b(β)|`, evaluated at every breakpoint of either function
/// from both sides. Exact for step and piecewise-linear functions, and for
/// one step function against a continuous monotone one.
pub fn kolmogorov_distance(a: &dyn DistributionFunction, b: &dyn DistributionFunction) -> f64 {
    let mut pts = a.breakpoints();
    pts.extend(b.breakpoints());
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts.iter()
        .map(|&x| {
            let d1 = (a.value(x) - b.value(x)).abs();
            let d2 = (a.left_limit(x) - b.left_limit(x)).abs();
            d1.max(d2)
        })
        .fold(0.0, f64::max)
}

/// Same as [`kolmogorov_distance`], with the evaluations spread over threads.
pub fn kolmogorov_distance_with<A, B>(a: &A, b: &B, exec: Execution) -> f64
where
    A: DistributionFunction + Sync,
    B: DistributionFunction + Sync,
{
    let mut pts = a.breakpoints();
    pts.extend(b.breakpoints());
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    par::map_slice(exec, &pts, |&x| {
        let d1 = (a.value(x) - b.value(x)).abs();
        let d2 = (a.left_limit(x) - b.left_limit(x)).abs();
        d1.max(d2)
    })
    .into_iter()
    .fold(0.0, f64::max)
}

/// An IDS sampled on a grid together with every breakpoint inside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdsCurve {
    pub points: Vec<(f64, f64)>,
}

impl IdsCurve {
    /// Samples `f` on `grid` plus the breakpoints of `f` between the grid's
    /// ends.
    pub fn sample(f: &(dyn DistributionFunction + Sync), grid: &[f64], exec: Execution) -> Self {
        let mut xs = grid.to_vec();
        if let (Some(&lo), Some(&hi)) = (grid.first(), grid.last()) {
            xs.extend(f.breakpoints().into_iter().filter(|&b| lo <= b && b <= hi));
        }
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let vals = par::map_slice(exec, &xs, |&x| f.value(x));
        Self {
            points: xs.into_iter().zip(vals).collect(),
        }
    }

    pub fn is_nondecreasing(&self) -> bool {
        self.points.windows(2).all(|w| w[0].1 <= w[1].1)
    }

    /// `beta,value` rows with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("beta,value\n");
        for (b, v) in &self.points {
            s.push_str(&format!("{},{}\n", fmt17(*b), fmt17(*v)));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        for (k, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let parse = |s: Option<&str>| -> Result<f64> {
                s.and_then(|x| x.trim().parse().ok())
                    .ok_or_else(|| Error::Config(format!("bad IDS row {}", k + 1)))
            };
            let mut it = line.split(',');
            points.push((parse(it.next())?, parse(it.next())?));
        }
        Ok(Self { points })
    }

    pub fn as_tabulated(&self) -> Result<TabulatedIds> {
        TabulatedIds::new(self.points.clone())
    }
}

/// Fixed 17-significant-digit rendering.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Uniform grid of `count` points on `[lo, hi]`.
pub fn uniform_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// A gnuplot script drawing each `(label, csv file)` as a step curve.
pub fn gnuplot_script(title: &str, curves: &[(String, String)]) -> String {
    let mut s = format!(
        "set datafile separator ','\nset key left top\nset title '{title}'\nset xlabel 'beta'\nset ylabel 'N(beta)'\n"
    );
    if curves.is_empty() {
        return s;
    }
    s.push_str("plot ");
    let parts: Vec<String> = curves
        .iter()
        .map(|(label, file)| format!("'{file}' using 1:2 every ::1 with steps title '{label}'"))
        .collect();
    s.push_str(&parts.join(", \\\n     "));
    s.push('\n');
    s
}
