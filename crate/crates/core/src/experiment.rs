//! Config-driven experiment pipelines with deterministic seeding and
//! machine-readable outputs.
//!
//! A run builds one sofic approximation per entry of the size schedule, samples
//! configurations, assembles and diagonalizes the induced operators, and
//! writes CSV/JSON tables, IDS curves and a gnuplot script next to a
//! `manifest.json`. Everything except the wall-clock timings in the manifest
//! is a deterministic function of the config.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_rational::BigRational;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::group::GroupSpec;
use crate::measure::{
    le_diagnostic_with, lift_configuration, sample_configuration, Configuration, LeParams, MeasureModel,
    DEFAULT_ENUMERATION_BUDGET,
};
use crate::monotone::{build_schedule, monotone_ids_report, MonotoneReport, ValueSets};
use crate::operator::{
    assemble_induced_with, diagonal_rule, expected_moment, graph_adjacency, power_diagonal_check_with, schrodinger_rule,
    InducedOperator, LocalRule, MomentMode,
};
use crate::par::{self, Execution};
use crate::rng::{derive_seed, rng_for};
use crate::scalar::Value;
use crate::sofic::{
    good_vertices_with, random_permutation_approximation, sofic_defect_with, torus_approximation,
    GoodnessReport, SoficApproximation,
};
use crate::spectral::{
    atom_mass, atom_mass_rational, default_cluster_tol, eigen_spectrum, fmt17, gnuplot_script,
    kolmogorov_distance, punctured_mass, punctured_mass_bound, uniform_grid, DistributionFunction, EigenOptions,
    EmpiricalIds, IdsCurve, ReferenceIds, Spectrum,
};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    SoficDiagnostics,
    WeakConvergence,
    LuckAtoms,
    Monotone,
}

impl Pipeline {
    pub fn as_str(self) -> &'static str {
        match self {
            Pipeline::SoficDiagnostics => "sofic-diagnostics",
            Pipeline::WeakConvergence => "weak-convergence",
            Pipeline::LuckAtoms => "luck-atoms",
            Pipeline::Monotone => "monotone",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GroupConfig {
    Lattice { dim: usize },
    Free { rank: usize },
}

/// `sizes` are torus side lengths for `torus` and vertex counts for
/// `random-permutation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SoficConfig {
    Torus { sizes: Vec<usize> },
    RandomPermutation { sizes: Vec<usize> },
}

impl SoficConfig {
    pub fn sizes(&self) -> &[usize] {
        match self {
            SoficConfig::Torus { sizes } | SoficConfig::RandomPermutation { sizes } => sizes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MeasureConfig {
    Iid { weights: Vec<f64> },
    Constant { alphabet: usize, symbol: u8 },
    /// Periodic with period `∏ m_i ℤ`, pattern listed first coordinate fastest.
    Periodic { moduli: Vec<usize>, pattern: Vec<u8> },
    Mixture { components: Vec<MixtureComponent> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub model: MeasureConfig,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        MeasureConfig::Constant { alphabet: 1, symbol: 0 }
    }
}

impl MeasureConfig {
    pub fn build(&self) -> Result<MeasureModel> {
        match self {
            MeasureConfig::Iid { weights } => MeasureModel::iid(weights.clone()),
            MeasureConfig::Constant { alphabet, symbol } => MeasureModel::constant(*alphabet, *symbol),
            MeasureConfig::Periodic { moduli, pattern } => lift_configuration(moduli, pattern.clone()),
            MeasureConfig::Mixture { components } => MeasureModel::mixture(
                components
                    .iter()
                    .map(|c| Ok((c.weight, c.model.build()?)))
                    .collect::<Result<_>>()?,
            ),
        }
    }
}

/// Potentials are strings so that `5/3`, `0.25` and `1+2i` stay exact and
/// `sqrt(2)` is allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OperatorConfig {
    Laplacian,
    /// `Δ + |S|·I`, the adjacency operator of the Cayley graph.
    Adjacency,
    /// The same operator approximated by the adjacency matrix of the finite
    /// graph itself rather than by the induced assembly.
    GraphAdjacency,
    Schrodinger { potential: Vec<String> },
    Diagonal { potential: Vec<String> },
}

impl Default for OperatorConfig {
    fn default() -> Self {
        OperatorConfig::Laplacian
    }
}

fn parse_values(potential: &[String]) -> Result<Vec<Value>> {
    potential.iter().map(|s| s.parse()).collect()
}

impl OperatorConfig {
    pub fn build(&self, group: &GroupSpec, alphabet: usize) -> Result<LocalRule> {
        let constant = |v: Value| vec![v; alphabet];
        let (rule, len) = match self {
            OperatorConfig::Laplacian => (schrodinger_rule(group, &constant(Value::zero()))?, alphabet),
            OperatorConfig::Adjacency | OperatorConfig::GraphAdjacency => {
                let s = Value::int(group.num_generators() as i64);
                (schrodinger_rule(group, &constant(s))?, alphabet)
            }
            OperatorConfig::Schrodinger { potential } => {
                (schrodinger_rule(group, &parse_values(potential)?)?, potential.len())
            }
            OperatorConfig::Diagonal { potential } => {
                (diagonal_rule(group, &parse_values(potential)?)?, potential.len())
            }
        };
        if len < alphabet {
            return Err(Error::Config(format!(
                "operator defines {len} potential values but the measure uses {alphabet} symbols"
            )));
        }
        Ok(rule)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Radii {
    /// Cylinder radius `R` for window statistics and defects.
    pub cylinder: usize,
    /// Goodness radius for assembly; defaults to `2M`.
    pub goodness: Option<usize>,
}

impl Default for Radii {
    fn default() -> Self {
        Self { cylinder: 1, goodness: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceChoice {
    /// Analytic lattice Laplacian IDS.
    Lattice,
    /// The pooled IDS of the largest size.
    Largest,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentOracle {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeakConvergenceConfig {
    pub k_max: usize,
    pub oracle: MomentOracle,
    pub oracle_samples: usize,
    pub reference: ReferenceChoice,
    /// Compare diagonal entries of `H^k` with closed-walk values on sample 0.
    pub power_check: bool,
    /// Moment agreement is asserted within this many standard errors.
    pub sigma_tolerance: f64,
}

impl Default for WeakConvergenceConfig {
    fn default() -> Self {
        Self {
            k_max: 4,
            oracle: MomentOracle::Exact,
            oracle_samples: 10_000,
            reference: ReferenceChoice::None,
            power_check: false,
            sigma_tolerance: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AtomsConfig {
    pub alphas: Vec<String>,
    pub eps: Vec<f64>,
    pub cluster_tol: Option<f64>,
}

impl Default for AtomsConfig {
    fn default() -> Self {
        Self {
            alphas: vec!["0".into()],
            eps: vec![1e-2, 1e-4],
            cluster_tol: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonotoneConfig {
    pub m_max: usize,
}

impl Default for MonotoneConfig {
    fn default() -> Self {
        Self { m_max: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub le_eps: f64,
    /// Number of sampled configurations for the le statistic; 0 skips it.
    pub le_samples: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            le_eps: 0.05,
            le_samples: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budgets {
    pub enumeration: u128,
    pub dense: usize,
    pub eigen_tol: f64,
}

impl Default for Budgets {
    fn default() -> Self {
        let e = EigenOptions::default();
        Self {
            enumeration: DEFAULT_ENUMERATION_BUDGET,
            dense: e.dense_budget,
            eigen_tol: e.tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub pipeline: Pipeline,
    pub group: GroupConfig,
    pub sofic: SoficConfig,
    #[serde(default)]
    pub measure: MeasureConfig,
    #[serde(default)]
    pub operator: OperatorConfig,
    #[serde(default)]
    pub beta_grid: Option<GridConfig>,
    #[serde(default)]
    pub radii: Radii,
    #[serde(default = "one")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub weak_convergence: WeakConvergenceConfig,
    #[serde(default)]
    pub luck_atoms: AtomsConfig,
    #[serde(default)]
    pub monotone: MonotoneConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub budgets: Budgets,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    /// Parses a config, or the config embedded in a run manifest.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Json = serde_json::from_str(text)?;
        let raw = match raw.get("config") {
            Some(inner) if raw.get("config_hash").is_some() => inner.clone(),
            _ => raw,
        };
        let cfg: Self = serde_json::from_value(raw).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let sizes = self.sofic.sizes();
        if sizes.is_empty() {
            return bad("size schedule is empty".into());
        }
        if sizes.windows(2).any(|w| w[0] >= w[1]) {
            return bad("size schedule must be strictly increasing".into());
        }
        if sizes[0] == 0 {
            return bad("sizes must be positive".into());
        }
        match (&self.group, &self.sofic) {
            (GroupConfig::Lattice { .. }, SoficConfig::Torus { .. }) => {}
            (GroupConfig::Free { .. }, SoficConfig::RandomPermutation { .. }) => {}
            _ => return bad("torus approximations need a lattice group, random permutations a free group".into()),
        }
        if self.samples == 0 {
            return bad("samples must be at least 1".into());
        }
        if let Some(g) = &self.beta_grid {
            if !(g.lo < g.hi) || g.points < 2 || !g.lo.is_finite() || !g.hi.is_finite() {
                return bad("beta grid needs lo < hi and at least 2 points".into());
            }
        }
        if let MeasureConfig::Periodic { moduli, .. } = &self.measure {
            if let SoficConfig::Torus { sizes } = &self.sofic {
                if let Some(s) = sizes.iter().find(|&&s| moduli.iter().any(|&m| m == 0 || s % m != 0)) {
                    return bad(format!("torus side {s} is not a multiple of the period"));
                }
            }
        }
        match self.pipeline {
            Pipeline::WeakConvergence => {
                let w = &self.weak_convergence;
                if w.k_max == 0 {
                    return bad("k_max must be at least 1".into());
                }
                if w.reference == ReferenceChoice::Lattice && !matches!(self.group, GroupConfig::Lattice { dim: 1 | 2 }) {
                    return bad("the lattice reference IDS exists for dimensions 1 and 2".into());
                }
                if w.oracle == MomentOracle::MonteCarlo && w.oracle_samples < 2 {
                    return bad("Monte Carlo oracle needs at least 2 samples".into());
                }
            }
            Pipeline::LuckAtoms => {
                for a in &self.luck_atoms.alphas {
                    let v: Value = a.parse()?;
                    if !v.is_real() {
                        return bad(format!("atom location {a} is not real"));
                    }
                }
                if self.luck_atoms.eps.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
                    return bad("eps values must lie in (0, 1)".into());
                }
            }
            Pipeline::Monotone => {
                if self.operator == OperatorConfig::GraphAdjacency {
                    return bad("monotone schedules need an induced assembly".into());
                }
                if self.monotone.m_max == 0 {
                    return bad("m_max must be at least 1".into());
                }
            }
            Pipeline::SoficDiagnostics => {
                if self.diagnostics.le_samples > 0 && !(self.diagnostics.le_eps > 0.0) {
                    return bad("le_eps must be positive".into());
                }
            }
        }
        let group = self.group_spec()?;
        let model = self.measure.build()?;
        let rule = self.operator.build(&group, model.alphabet_size())?;
        if self.pipeline == Pipeline::Monotone && rule.hopping() > 0 {
            let e = rule.ball().identity_index();
            let len = rule.ball().len();
            for a in 0..rule.alphabet_size() {
                let mut window = vec![0u8; len];
                window[e] = a as u8;
                if rule.coefficient(e, &window).is_zero() {
                    return bad(format!(
                        "monotone schedules cannot be certified: the diagonal vanishes at symbol {a} while the operator hops"
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn group_spec(&self) -> Result<GroupSpec> {
        match self.group {
            GroupConfig::Lattice { dim } => GroupSpec::lattice(dim),
            GroupConfig::Free { rank } => GroupSpec::free(rank),
        }
    }

    /// sha256 of the canonical serialization without the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }

    /// sha256 of group, measure and operator, shared by runs that may be
    /// compared.
    pub fn model_hash(&self) -> String {
        let key = serde_json::json!({
            "group": self.group,
            "measure": self.measure,
            "operator": self.operator,
        });
        sha256_hex(key.to_string().as_bytes())
    }

    fn eigen_options(&self) -> EigenOptions {
        EigenOptions {
            tol: self.budgets.eigen_tol,
            dense_budget: self.budgets.dense,
            ..EigenOptions::default()
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSeeds {
    pub size_index: usize,
    pub size: usize,
    pub n: usize,
    pub sofic_seed: Option<u64>,
    pub sample_seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Per-size summary used by [`compare`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SizeSummary {
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub good_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub le_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kolmogorov_distance: Option<f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub atom_masses: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub monotone_max_excess: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ids_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub pipeline: Pipeline,
    pub config_hash: String,
    pub model_hash: String,
    pub version: String,
    pub master_seed: u64,
    pub seeds: Vec<SizeSeeds>,
    pub timings: Vec<StageTiming>,
    pub outputs: Vec<OutputFile>,
    pub invariants: Vec<InvariantCheck>,
    pub invariants_passed: bool,
    pub summary: Vec<SizeSummary>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    pub config: ExperimentConfig,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    out: PathBuf,
    exec: Execution,
    manifest: RunManifest,
}

impl<'a> Run<'a> {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let r = f(self);
        self.manifest.timings.push(StageTiming {
            stage: name.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        r.map_err(|e| Error::Stage {
            stage: name.to_string(),
            cause: Box::new(e),
        })
    }

    fn write(&mut self, file: &str, contents: &str) -> Result<()> {
        fs::write(self.out.join(file), contents)?;
        self.manifest.outputs.push(OutputFile {
            file: file.to_string(),
            sha256: sha256_hex(contents.as_bytes()),
        });
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, file: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(file, &s)
    }

    fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.manifest.invariants.push(InvariantCheck {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    fn save_manifest(&mut self) -> Result<()> {
        self.manifest.invariants_passed =
            self.manifest.error.is_none() && self.manifest.invariants.iter().all(|c| c.passed);
        let mut s = serde_json::to_string_pretty(&self.manifest)?;
        s.push('\n');
        fs::write(self.out.join(MANIFEST_FILE), s)?;
        Ok(())
    }
}

/// Runs the configured pipeline, writing outputs and `manifest.json` into
/// `out` (or the config's output directory). On failure a partial manifest
/// carrying the error is written before the error is returned.
pub fn run(cfg: &ExperimentConfig, out: Option<&Path>, exec: Execution) -> Result<RunManifest> {
    cfg.validate()?;
    let out = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
    fs::create_dir_all(&out)?;
    let mut run = Run {
        cfg,
        out,
        exec,
        manifest: RunManifest {
            name: cfg.name.clone(),
            pipeline: cfg.pipeline,
            config_hash: cfg.hash(),
            model_hash: cfg.model_hash(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed: cfg.seed,
            seeds: Vec::new(),
            timings: Vec::new(),
            outputs: Vec::new(),
            invariants: Vec::new(),
            invariants_passed: false,
            summary: Vec::new(),
            error: None,
            config: cfg.clone(),
        },
    };
    let result = execute(&mut run);
    if let Err(e) = &result {
        run.manifest.error = Some(e.to_string());
    }
    run.save_manifest()?;
    result.map(|_| run.manifest)
}

struct Context {
    model: MeasureModel,
    rule: LocalRule,
    sigmas: Vec<SoficApproximation>,
    goodness: Vec<GoodnessReport>,
}

fn execute(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let ctx = run.stage("build", |r| {
        let group = cfg.group_spec()?;
        let model = cfg.measure.build()?;
        let rule = cfg.operator.build(&group, model.alphabet_size())?;
        let sizes = cfg.sofic.sizes();
        let sigmas = par::map_range(r.exec, sizes.len(), |i| match &cfg.sofic {
            SoficConfig::Torus { .. } => {
                let GroupConfig::Lattice { dim } = cfg.group else { unreachable!() };
                torus_approximation(dim, sizes[i])
            }
            SoficConfig::RandomPermutation { .. } => {
                let GroupConfig::Free { rank } = cfg.group else { unreachable!() };
                random_permutation_approximation(rank, sizes[i], sofic_seed(cfg.seed, i))
            }
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let radius = cfg.radii.goodness.unwrap_or(2 * rule.hopping());
        let goodness = sigmas
            .iter()
            .map(|s| good_vertices_with(s, radius, r.exec))
            .collect::<Result<Vec<_>>>()?;
        for (i, s) in sigmas.iter().enumerate() {
            r.manifest.seeds.push(SizeSeeds {
                size_index: i,
                size: sizes[i],
                n: s.n_vertices(),
                sofic_seed: matches!(cfg.sofic, SoficConfig::RandomPermutation { .. })
                    .then(|| sofic_seed(cfg.seed, i)),
                sample_seeds: (0..cfg.samples).map(|k| derive_seed(cfg.seed, i as u64, k as u64)).collect(),
            });
            r.manifest.summary.push(SizeSummary {
                n: s.n_vertices(),
                good_fraction: Some(goodness[i].fraction),
                ..SizeSummary::default()
            });
        }
        Ok(Context {
            model,
            rule,
            sigmas,
            goodness,
        })
    })?;
    match cfg.pipeline {
        Pipeline::SoficDiagnostics => sofic_diagnostics(run, &ctx),
        Pipeline::WeakConvergence => weak_convergence(run, &ctx),
        Pipeline::LuckAtoms => luck_atoms(run, &ctx),
        Pipeline::Monotone => monotone(run, &ctx),
    }
}

fn sofic_seed(master: u64, size_index: usize) -> u64 {
    derive_seed(master, size_index as u64, u64::MAX)
}

fn in_unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

#[derive(Serialize)]
struct DiagnosticsRow {
    n: usize,
    #[serde(rename = "R")]
    radius: usize,
    good_fraction: f64,
    max_homomorphism_defect: f64,
    max_freeness_defect: f64,
    fixed_union: f64,
    lw_fraction: Option<f64>,
    le_fraction: Option<f64>,
    le_halfwidth: Option<f64>,
}

fn sofic_diagnostics(run: &mut Run, ctx: &Context) -> Result<()> {
    let cfg = run.cfg;
    let r_cyl = cfg.radii.cylinder;
    let defects = run.stage("defects", |r| {
        ctx.sigmas
            .iter()
            .map(|s| sofic_defect_with(s, r_cyl, r.exec))
            .collect::<Result<Vec<_>>>()
    })?;
    let goodness = run.stage("goodness", |r| {
        ctx.sigmas
            .iter()
            .map(|s| good_vertices_with(s, r_cyl, r.exec))
            .collect::<Result<Vec<_>>>()
    })?;
    let le = if cfg.diagnostics.le_samples > 0 {
        Some(run.stage("le-diagnostic", |r| {
            le_diagnostic_with(
                &ctx.model,
                &ctx.sigmas,
                LeParams {
                    radius: r_cyl,
                    eps: cfg.diagnostics.le_eps,
                    samples: cfg.diagnostics.le_samples,
                    seed: cfg.seed,
                    budget: cfg.budgets.enumeration,
                },
                r.exec,
            )
        })?)
    } else {
        None
    };
    let rows: Vec<DiagnosticsRow> = (0..ctx.sigmas.len())
        .map(|i| DiagnosticsRow {
            n: ctx.sigmas[i].n_vertices(),
            radius: r_cyl,
            good_fraction: goodness[i].fraction,
            max_homomorphism_defect: defects[i].max_homomorphism,
            max_freeness_defect: defects[i].max_freeness,
            fixed_union: defects[i].fixed_union,
            lw_fraction: le.as_ref().map(|l| l[i].lw_fraction),
            le_fraction: le.as_ref().map(|l| l[i].le_fraction),
            le_halfwidth: le.as_ref().map(|l| l[i].le_halfwidth),
        })
        .collect();
    run.stage("write", |r| {
        let mut csv = String::from(
            "n,R,good_fraction,max_homomorphism_defect,max_freeness_defect,fixed_union,lw_fraction,le_fraction,le_halfwidth\n",
        );
        let opt = |x: Option<f64>| x.map(fmt17).unwrap_or_default();
        for row in &rows {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                row.n,
                row.radius,
                fmt17(row.good_fraction),
                fmt17(row.max_homomorphism_defect),
                fmt17(row.max_freeness_defect),
                fmt17(row.fixed_union),
                opt(row.lw_fraction),
                opt(row.le_fraction),
                opt(row.le_halfwidth),
            ));
        }
        r.write("diagnostics.csv", &csv)?;
        r.write_json("diagnostics.json", &rows)?;
        for (i, row) in rows.iter().enumerate() {
            r.manifest.summary[i].good_fraction = Some(row.good_fraction);
            r.manifest.summary[i].le_fraction = row.le_fraction;
        }
        let fractions = rows.iter().flat_map(|row| {
            [
                Some(row.good_fraction),
                Some(row.max_homomorphism_defect),
                Some(row.max_freeness_defect),
                Some(row.fixed_union),
                row.lw_fraction,
                row.le_fraction,
            ]
            .into_iter()
            .flatten()
        });
        let ok = fractions.clone().all(in_unit);
        r.check("fractions in [0,1]", ok, format!("{} values", fractions.count()));
        Ok(())
    })
}

/// Eigenvalues of one induced operator per `(size, sample)`, with the
/// operators kept for further statistics.
struct SampleSet {
    spectra: Vec<Vec<Spectrum>>,
    operators: Vec<Vec<InducedOperator>>,
}

fn sample_and_solve(run: &mut Run, ctx: &Context, keep: bool) -> Result<SampleSet> {
    let cfg = run.cfg;
    let pairs: Vec<(usize, usize)> = (0..ctx.sigmas.len())
        .flat_map(|i| (0..cfg.samples).map(move |s| (i, s)))
        .collect();
    let opts = cfg.eigen_options();
    let solved = run.stage("assemble-and-solve", |r| {
        par::map_slice(r.exec, &pairs, |&(i, s)| -> Result<(InducedOperator, Spectrum)> {
            let rho = sample_rho(cfg, ctx, i, s)?;
            let h = if cfg.operator == OperatorConfig::GraphAdjacency {
                graph_adjacency(&ctx.sigmas[i])?
            } else {
                assemble_induced_with(&ctx.rule, &ctx.sigmas[i], &rho, &ctx.goodness[i], Execution::Sequential)?
            };
            let spec = eigen_spectrum(&h, opts)?;
            Ok((h, spec))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()
    })?;
    let mut set = SampleSet {
        spectra: vec![Vec::new(); ctx.sigmas.len()],
        operators: vec![Vec::new(); ctx.sigmas.len()],
    };
    for (&(i, _), (h, spec)) in pairs.iter().zip(solved) {
        set.spectra[i].push(spec);
        if keep {
            set.operators[i].push(h);
        }
    }
    Ok(set)
}

fn sample_rho(cfg: &ExperimentConfig, ctx: &Context, i: usize, s: usize) -> Result<Configuration> {
    let mut rng = rng_for(cfg.seed, i as u64, s as u64);
    sample_configuration(&ctx.model, &ctx.sigmas[i], &mut rng)
}

fn beta_grid(cfg: &ExperimentConfig, rule: &LocalRule) -> Vec<f64> {
    match &cfg.beta_grid {
        Some(g) => uniform_grid(g.lo, g.hi, g.points),
        None => {
            let b = rule.row_sum_bound() + 0.5;
            uniform_grid(-b, b, 401)
        }
    }
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Serialize)]
struct MomentRow {
    n: usize,
    k: usize,
    empirical: f64,
    empirical_se: f64,
    oracle: f64,
    oracle_se: f64,
    asserted: bool,
    passed: bool,
}

#[derive(Serialize)]
struct DistanceRow {
    n: usize,
    reference: ReferenceChoice,
    distance: f64,
}

fn weak_convergence(run: &mut Run, ctx: &Context) -> Result<()> {
    let cfg = run.cfg;
    let w = &cfg.weak_convergence;
    let set = sample_and_solve(run, ctx, true)?;
    let oracle = run.stage("moment-oracle", |_| {
        (1..=w.k_max)
            .map(|k| {
                let mode = match w.oracle {
                    MomentOracle::Exact => MomentMode::Exact {
                        budget: cfg.budgets.enumeration,
                    },
                    MomentOracle::MonteCarlo => MomentMode::MonteCarlo {
                        samples: w.oracle_samples,
                        seed: cfg.seed,
                    },
                };
                expected_moment(&ctx.rule, &ctx.model, k, mode)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let moments = run.stage("moments", |r| {
        let exec = r.exec;
        Ok(set
            .operators
            .iter()
            .map(|ops| {
                par::map_slice(exec, ops, |h| {
                    (1..=w.k_max)
                        .map(|k| h.normalized_trace_power(k, Execution::Sequential))
                        .collect::<Vec<f64>>()
                })
            })
            .collect::<Vec<_>>())
    })?;
    let walk_goodness = run.stage("walk-goodness", |r| {
        let radius = (4 * w.k_max * ctx.rule.hopping()).max(2 * ctx.rule.hopping());
        ctx.sigmas
            .iter()
            .zip(&ctx.goodness)
            .map(|(s, g)| {
                if cfg.operator == OperatorConfig::GraphAdjacency || g.good_count < s.n_vertices() {
                    return Ok(false);
                }
                good_vertices_with(s, radius, r.exec).map(|g| g.good_count == s.n_vertices())
            })
            .collect::<Result<Vec<bool>>>()
    })?;
    let mut rows = Vec::new();
    for (i, per_sample) in moments.iter().enumerate() {
        for k in 1..=w.k_max {
            let xs: Vec<f64> = per_sample.iter().map(|m| m[k - 1]).collect();
            let (mean, se) = mean_and_se(&xs);
            let o = &oracle[k - 1];
            let tol = w.sigma_tolerance * (se * se + o.std_error * o.std_error).sqrt() + 1e-9 * (1.0 + o.value.abs());
            rows.push(MomentRow {
                n: ctx.sigmas[i].n_vertices(),
                k,
                empirical: mean,
                empirical_se: se,
                oracle: o.value,
                oracle_se: o.std_error,
                asserted: walk_goodness[i],
                passed: (mean - o.value).abs() <= tol,
            });
        }
    }
    if w.power_check {
        let checks = run.stage("power-check", |r| {
            let mut out = Vec::new();
            for i in 0..ctx.sigmas.len() {
                let rho = sample_rho(cfg, ctx, i, 0)?;
                for k in 1..=w.k_max {
                    out.push(power_diagonal_check_with(&ctx.rule, &ctx.sigmas[i], &rho, k, r.exec)?);
                }
            }
            Ok(out)
        })?;
        for c in &checks {
            let ok = if c.exact { c.exact_agreement } else { c.max_discrepancy <= 1e-9 };
            run.check(
                format!("power diagonal k={} (R={})", c.k, c.goodness_radius),
                ok,
                format!("{} good vertices, max discrepancy {:e}", c.tested, c.max_discrepancy),
            );
        }
        run.write_json("power_check.json", &checks)?;
    }
    let grid = beta_grid(cfg, &ctx.rule);
    let pooled: Vec<EmpiricalIds> = set
        .spectra
        .iter()
        .map(|specs| EmpiricalIds::new(specs.iter().flat_map(|s| s.eigenvalues().iter().copied()).collect()))
        .collect();
    let (distances, reference_curve) = run.stage("kolmogorov", |r| {
        let reference: Option<Box<dyn DistributionFunction + Sync>> = match w.reference {
            ReferenceChoice::Lattice => {
                let GroupConfig::Lattice { dim } = cfg.group else { unreachable!() };
                Some(Box::new(ReferenceIds::for_dim(dim)?))
            }
            ReferenceChoice::Largest => Some(Box::new(pooled.last().expect("nonempty").clone())),
            ReferenceChoice::None => None,
        };
        let Some(reference) = reference else {
            return Ok((Vec::new(), None));
        };
        let d = par::map_slice(r.exec, &pooled, |ids| kolmogorov_distance(ids, reference.as_ref()));
        let curve = (w.reference == ReferenceChoice::Lattice).then(|| IdsCurve::sample(reference.as_ref(), &grid, r.exec));
        Ok((d, curve))
    })?;
    run.stage("write", |r| {
        let mut csv = String::from("n,k,empirical,empirical_se,oracle,oracle_se,asserted,passed\n");
        for row in &rows {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                row.n,
                row.k,
                fmt17(row.empirical),
                fmt17(row.empirical_se),
                fmt17(row.oracle),
                fmt17(row.oracle_se),
                row.asserted,
                row.passed
            ));
        }
        r.write("moments.csv", &csv)?;
        r.write_json("moments.json", &rows)?;
        for row in rows.iter().filter(|row| row.asserted) {
            r.check(
                format!("moment n={} k={}", row.n, row.k),
                row.passed,
                format!("empirical {} vs oracle {}", row.empirical, row.oracle),
            );
        }
        let mut plots = Vec::new();
        for (i, ids) in pooled.iter().enumerate() {
            let n = ctx.sigmas[i].n_vertices();
            let curve = IdsCurve::sample(ids, &grid, r.exec);
            let file = format!("ids_n{n}.csv");
            r.check(format!("IDS n={n} nondecreasing in [0,1]"), curve_ok(&curve), "");
            r.write(&file, &curve.to_csv())?;
            r.manifest.summary[i].ids_file = Some(file.clone());
            plots.push((format!("n={n}"), file));
        }
        if let Some(curve) = &reference_curve {
            r.write("ids_reference.csv", &curve.to_csv())?;
            plots.push(("reference".to_string(), "ids_reference.csv".to_string()));
        }
        if !distances.is_empty() {
            let table: Vec<DistanceRow> = distances
                .iter()
                .enumerate()
                .map(|(i, &d)| DistanceRow {
                    n: ctx.sigmas[i].n_vertices(),
                    reference: w.reference,
                    distance: d,
                })
                .collect();
            let mut csv = String::from("n,distance\n");
            for (i, row) in table.iter().enumerate() {
                csv.push_str(&format!("{},{}\n", row.n, fmt17(row.distance)));
                r.manifest.summary[i].kolmogorov_distance = Some(row.distance);
            }
            r.write("kolmogorov.csv", &csv)?;
            r.write_json("kolmogorov.json", &table)?;
            r.check("distances in [0,1]", distances.iter().copied().all(in_unit), "");
        }
        r.write("plot.gp", &gnuplot_script(&cfg.name, &plots))
    })
}

fn curve_ok(c: &IdsCurve) -> bool {
    c.is_nondecreasing() && c.points.iter().all(|p| in_unit(p.1))
}

#[derive(Serialize)]
struct AtomRow {
    n: usize,
    alpha: String,
    mean_mass: f64,
    std_error: f64,
    samples: usize,
}

#[derive(Serialize)]
struct PuncturedRow {
    n: usize,
    alpha: String,
    eps: f64,
    max_mass: f64,
    min_bound: f64,
    asserted: bool,
    violations: usize,
}

fn luck_atoms(run: &mut Run, ctx: &Context) -> Result<()> {
    let cfg = run.cfg;
    let a = &cfg.luck_atoms;
    let set = sample_and_solve(run, ctx, true)?;
    let alphas: Vec<(String, Value)> = a
        .alphas
        .iter()
        .map(|s| Ok((s.clone(), s.parse::<Value>()?)))
        .collect::<Result<_>>()?;
    let integer = set.operators.iter().flatten().all(InducedOperator::is_integer);
    let (atom_rows, punct_rows) = run.stage("atoms", |_| {
        let mut atoms = Vec::new();
        let mut punct = Vec::new();
        for (i, specs) in set.spectra.iter().enumerate() {
            let n = ctx.sigmas[i].n_vertices();
            for (label, alpha) in &alphas {
                let masses: Vec<f64> = specs
                    .iter()
                    .map(|s| {
                        let tol = a.cluster_tol.unwrap_or_else(|| default_cluster_tol(s));
                        match alpha.as_exact() {
                            Some(z) => atom_mass_rational(s, &z.re, tol),
                            None => atom_mass(s, alpha.re_f64(), tol),
                        }
                    })
                    .collect();
                let (mean, se) = mean_and_se(&masses);
                atoms.push(AtomRow {
                    n,
                    alpha: label.clone(),
                    mean_mass: mean,
                    std_error: se,
                    samples: masses.len(),
                });
                let alpha_f = alpha.re_f64();
                let asserted = integer && alpha.is_gaussian_integer();
                for &eps in &a.eps {
                    let mut max_mass: f64 = 0.0;
                    let mut min_bound = f64::INFINITY;
                    let mut violations = 0;
                    for s in specs {
                        let tol = a.cluster_tol.unwrap_or_else(|| default_cluster_tol(s)).min(eps / 2.0);
                        let m = punctured_mass(s, alpha_f, eps, tol)?;
                        let radius = s.eigenvalues().iter().fold(0.0f64, |r, x| r.max((x - alpha_f).abs()));
                        let bound = punctured_mass_bound(radius, eps)?;
                        if m > bound {
                            violations += 1;
                        }
                        max_mass = max_mass.max(m);
                        min_bound = min_bound.min(bound);
                    }
                    punct.push(PuncturedRow {
                        n,
                        alpha: label.clone(),
                        eps,
                        max_mass,
                        min_bound,
                        asserted,
                        violations,
                    });
                }
            }
        }
        Ok((atoms, punct))
    })?;
    let grid = beta_grid(cfg, &ctx.rule);
    run.stage("write", |r| {
        let mut csv = String::from("n,alpha,mean_mass,std_error,samples\n");
        for row in &atom_rows {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                row.n,
                row.alpha,
                fmt17(row.mean_mass),
                fmt17(row.std_error),
                row.samples
            ));
            let idx = ctx.sigmas.iter().position(|s| s.n_vertices() == row.n).expect("size");
            r.manifest.summary[idx].atom_masses.insert(row.alpha.clone(), row.mean_mass);
        }
        r.write("atoms.csv", &csv)?;
        r.write_json("atoms.json", &atom_rows)?;
        r.check(
            "atom masses in [0,1]",
            atom_rows.iter().all(|row| in_unit(row.mean_mass)),
            format!("{} rows", atom_rows.len()),
        );
        let mut csv = String::from("n,alpha,eps,max_mass,min_bound,asserted,violations\n");
        for row in &punct_rows {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                row.n,
                row.alpha,
                fmt17(row.eps),
                fmt17(row.max_mass),
                fmt17(row.min_bound),
                row.asserted,
                row.violations
            ));
            if row.asserted {
                r.check(
                    format!("punctured mass n={} alpha={} eps={}", row.n, row.alpha, row.eps),
                    row.violations == 0,
                    format!("{} violations", row.violations),
                );
            }
        }
        r.write("punctured.csv", &csv)?;
        r.write_json("punctured.json", &punct_rows)?;
        let mut plots = Vec::new();
        for (i, specs) in set.spectra.iter().enumerate() {
            let n = ctx.sigmas[i].n_vertices();
            let ids = EmpiricalIds::new(specs.iter().flat_map(|s| s.eigenvalues().iter().copied()).collect());
            let curve = IdsCurve::sample(&ids, &grid, r.exec);
            r.check(format!("IDS n={n} nondecreasing in [0,1]"), curve_ok(&curve), "");
            let file = format!("ids_n{n}.csv");
            r.write(&file, &curve.to_csv())?;
            r.manifest.summary[i].ids_file = Some(file.clone());
            plots.push((format!("n={n}"), file));
        }
        r.write("plot.gp", &gnuplot_script(&cfg.name, &plots))
    })
}

#[derive(Serialize)]
struct MonotoneSizeReport<'a> {
    n: usize,
    sample: usize,
    report: &'a MonotoneReport,
}

fn monotone(run: &mut Run, ctx: &Context) -> Result<()> {
    let cfg = run.cfg;
    let m_max = cfg.monotone.m_max;
    let schedule = run.stage("schedule", |_| build_schedule(&ValueSets::of_rule(&ctx.rule)?, m_max))?;
    let grid = beta_grid(cfg, &ctx.rule);
    let pairs: Vec<(usize, usize)> = (0..ctx.sigmas.len())
        .flat_map(|i| (0..cfg.samples).map(move |s| (i, s)))
        .collect();
    let reports = run.stage("monotone-report", |r| {
        par::map_slice(r.exec, &pairs, |&(i, s)| {
            let rho = sample_rho(cfg, ctx, i, s)?;
            monotone_ids_report(
                &ctx.rule,
                &schedule,
                &ctx.sigmas[i],
                &rho,
                &ctx.goodness[i],
                &grid,
                Execution::Sequential,
            )
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()
    })?;
    run.stage("write", |r| {
        let mut csv = String::from("n,sample,m,beta,N_m,N_target,psd_certified\n");
        let mut json = Vec::new();
        for (&(i, s), rep) in pairs.iter().zip(&reports) {
            let n = ctx.sigmas[i].n_vertices();
            for row in &rep.rows {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    n,
                    s,
                    row.m,
                    fmt17(row.beta),
                    fmt17(row.n_m),
                    fmt17(row.n_target),
                    row.psd_certified
                ));
            }
            json.push(MonotoneSizeReport { n, sample: s, report: rep });
            r.check(
                format!("schedule steps certified n={n} sample={s}"),
                rep.steps.iter().all(|st| st.certified && st.min_eigenvalue >= -1e-10),
                format!("{} steps", rep.steps.len()),
            );
            r.check(
                format!("counting functions nonincreasing n={n} sample={s}"),
                rep.monotone_violations == 0,
                format!("{} violations", rep.monotone_violations),
            );
            let gaps_ok = rep.norm_gaps.iter().all(|(_, a, b)| a <= b);
            r.check(format!("norm gap bound n={n} sample={s}"), gaps_ok, "");
            let excess = rep.max_excess.last().map_or(0.0, |e| e.1);
            let cur = r.manifest.summary[i].monotone_max_excess.unwrap_or(f64::NEG_INFINITY);
            r.manifest.summary[i].monotone_max_excess = Some(cur.max(excess));
        }
        r.write("monotone.csv", &csv)?;
        r.write_json("monotone.json", &json)?;
        let schedule_table: Vec<Json> = (1..=m_max)
            .map(|m| {
                serde_json::json!({
                    "m": m,
                    "a": schedule_values(ctx, &schedule, m),
                    "norm_gap_bound": schedule.norm_gap_bound(m),
                })
            })
            .collect();
        r.write_json("schedule.json", &schedule_table)?;
        let mut plots = Vec::new();
        if let (Some(&(i0, _)), Some(rep)) = (pairs.first(), reports.first()) {
            let n = ctx.sigmas[i0].n_vertices();
            for m in 1..=m_max {
                let points: Vec<(f64, f64)> = rep.rows.iter().filter(|row| row.m == m).map(|row| (row.beta, row.n_m)).collect();
                let file = format!("ids_n{n}_m{m}.csv");
                r.write(&file, &IdsCurve { points }.to_csv())?;
                plots.push((format!("m={m}"), file));
            }
            let points: Vec<(f64, f64)> = rep.rows.iter().filter(|row| row.m == m_max).map(|row| (row.beta, row.n_target)).collect();
            r.write("ids_target.csv", &IdsCurve { points }.to_csv())?;
            plots.push(("target".to_string(), "ids_target.csv".to_string()));
        }
        r.write("plot.gp", &gnuplot_script(&cfg.name, &plots))
    })
}

fn schedule_values(ctx: &Context, schedule: &crate::monotone::RationalSchedule, m: usize) -> Vec<String> {
    let (f1, _) = ctx.rule.value_sets();
    f1.iter()
        .filter_map(|f| schedule.a(m, f).map(|a| format!("{f} -> {a}")))
        .collect()
}

/// One row of the cross-run table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub run: String,
    pub n: usize,
    #[serde(flatten)]
    pub summary: SizeSummary,
}

/// Pairwise Kolmogorov distance between the IDS curves of two runs at the
/// same size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDistance {
    pub n: usize,
    pub a: String,
    pub b: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendFlags {
    pub run: String,
    /// Distances to the reference strictly decrease in `n`.
    pub distance_decreasing: Option<bool>,
    /// `lw`/`le` fractions are nondecreasing in `n`.
    pub le_nondecreasing: Option<bool>,
    pub monotone_excess_nonincreasing: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub model_hash: String,
    pub rows: Vec<CompareRow>,
    pub pair_distances: Vec<PairDistance>,
    pub trends: Vec<TrendFlags>,
}

fn trend(xs: &[f64], strict: bool, increasing: bool) -> Option<bool> {
    if xs.len() < 2 {
        return None;
    }
    Some(xs.windows(2).all(|w| match (strict, increasing) {
        (true, false) => w[1] < w[0],
        (false, false) => w[1] <= w[0],
        (true, true) => w[1] > w[0],
        (false, true) => w[1] >= w[0],
    }))
}

/// Builds the cross-run convergence table. `paths` point at manifest files;
/// IDS curves are read relative to each manifest's directory.
pub fn compare(paths: &[PathBuf]) -> Result<CompareReport> {
    if paths.is_empty() {
        return Err(Error::Config("no manifests given".into()));
    }
    let manifests = paths
        .iter()
        .map(|p| RunManifest::load(p))
        .collect::<Result<Vec<_>>>()?;
    let hash = manifests[0].model_hash.clone();
    if let Some((p, m)) = paths.iter().zip(&manifests).find(|(_, m)| m.model_hash != hash) {
        return Err(Error::Config(format!(
            "model hash mismatch: {} has {}, expected {hash}",
            p.display(),
            m.model_hash
        )));
    }
    let label = |k: usize| format!("{}#{k}", manifests[k].name);
    let mut rows = Vec::new();
    let mut trends = Vec::new();
    let mut curves: BTreeMap<usize, Vec<(String, IdsCurve)>> = BTreeMap::new();
    for (k, (m, p)) in manifests.iter().zip(paths).enumerate() {
        let dir = p.parent().unwrap_or(Path::new("."));
        let mut summary = m.summary.clone();
        summary.sort_by_key(|s| s.n);
        for s in &summary {
            rows.push(CompareRow {
                run: label(k),
                n: s.n,
                summary: s.clone(),
            });
            if let Some(f) = &s.ids_file {
                let curve = IdsCurve::from_csv(&fs::read_to_string(dir.join(f))?)?;
                curves.entry(s.n).or_default().push((label(k), curve));
            }
        }
        let series = |f: fn(&SizeSummary) -> Option<f64>| -> Vec<f64> { summary.iter().filter_map(f).collect() };
        trends.push(TrendFlags {
            run: label(k),
            distance_decreasing: trend(&series(|s| s.kolmogorov_distance), true, false),
            le_nondecreasing: trend(&series(|s| s.le_fraction), false, true),
            monotone_excess_nonincreasing: trend(&series(|s| s.monotone_max_excess), false, false),
        });
    }
    let mut pair_distances = Vec::new();
    for (n, list) in &curves {
        for x in 0..list.len() {
            for y in x + 1..list.len() {
                let a = list[x].1.as_tabulated()?;
                let b = list[y].1.as_tabulated()?;
                pair_distances.push(PairDistance {
                    n: *n,
                    a: list[x].0.clone(),
                    b: list[y].0.clone(),
                    distance: kolmogorov_distance(&a, &b),
                });
            }
        }
    }
    Ok(CompareReport {
        model_hash: hash,
        rows,
        pair_distances,
        trends,
    })
}

impl CompareReport {
    /// Plain-text rendering of the table.
    pub fn to_table(&self) -> String {
        let opt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
        let mut s = format!(
            "{:<24} {:>8} {:>10} {:>10} {:>12} {:>12}  atoms\n",
            "run", "n", "good", "le", "kolmogorov", "mono_excess"
        );
        for r in &self.rows {
            let atoms: Vec<String> = r
                .summary
                .atom_masses
                .iter()
                .map(|(a, m)| format!("{a}:{m:.6}"))
                .collect();
            s.push_str(&format!(
                "{:<24} {:>8} {:>10} {:>10} {:>12} {:>12}  {}\n",
                r.run,
                r.n,
                opt(r.summary.good_fraction),
                opt(r.summary.le_fraction),
                opt(r.summary.kolmogorov_distance),
                opt(r.summary.monotone_max_excess),
                atoms.join(" ")
            ));
        }
        for p in &self.pair_distances {
            s.push_str(&format!("n={} {} vs {}: distance {:.6e}\n", p.n, p.a, p.b, p.distance));
        }
        for t in &self.trends {
            let flag = |b: Option<bool>| b.map_or("-", |v| if v { "yes" } else { "no" });
            s.push_str(&format!(
                "{}: distance decreasing {}, le nondecreasing {}, excess nonincreasing {}\n",
                t.run,
                flag(t.distance_decreasing),
                flag(t.le_nondecreasing),
                flag(t.monotone_excess_nonincreasing)
            ));
        }
        s
    }
}

/// Exact atom location parsed from a config string.
pub fn parse_alpha(s: &str) -> Result<BigRational> {
    let v: Value = s.parse()?;
    match v.as_exact() {
        Some(z) if z.im == num_traits::Zero::zero() => Ok(z.re.clone()),
        _ => Err(Error::Config(format!("{s} is not an exact real number"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_json(text)
    }

    #[test]
    fn validation() {
        let base = r#"{"name":"t","pipeline":"sofic-diagnostics","group":{"kind":"lattice","dim":1},
            "sofic":{"family":"torus","sizes":SIZES}}"#;
        assert!(cfg(&base.replace("SIZES", "[8,16]")).is_ok());
        assert!(matches!(cfg(&base.replace("SIZES", "[]")), Err(Error::Config(_))));
        assert!(cfg(&base.replace("SIZES", "[16,8]")).is_err());
        let mismatch = base.replace("SIZES", "[8]").replace("\"torus\"", "\"random-permutation\"");
        assert!(cfg(&mismatch).is_err());
        assert!(cfg(r#"{"name":"t","pipeline":"nope"}"#).is_err());
        let unknown = base.replace("SIZES", "[8]").replace("\"name\"", "\"bogus\":1,\"name\"");
        assert!(cfg(&unknown).is_err());
    }

    #[test]
    fn operator_alphabet_must_cover_measure() {
        let text = r#"{"name":"t","pipeline":"luck-atoms","group":{"kind":"lattice","dim":1},
            "sofic":{"family":"torus","sizes":[8]},
            "measure":{"kind":"iid","weights":[0.5,0.5]},
            "operator":{"kind":"diagonal","potential":["1"]}}"#;
        assert!(cfg(text).is_err());
    }

    #[test]
    fn hashes_ignore_output_dir() {
        let text = r#"{"name":"t","pipeline":"sofic-diagnostics","group":{"kind":"lattice","dim":1},
            "sofic":{"family":"torus","sizes":[8]}}"#;
        let a = cfg(text).unwrap();
        let mut b = a.clone();
        b.output_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.seed = 9;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.model_hash(), b.model_hash());
    }

    #[test]
    fn parse_alpha_forms() {
        assert_eq!(parse_alpha("1/2").unwrap(), BigRational::new(1.into(), 2.into()));
        assert!(parse_alpha("sqrt(2)").is_err());
        assert!(parse_alpha("i").is_err());
    }
}
