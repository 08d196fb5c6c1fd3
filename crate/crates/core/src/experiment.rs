//! Experiment sweeps: reference solve, LOD solves over a set of coarse grids
//! and patch sizes, error tables and run manifests.
//!
//! Configuration is a flat `key = value` text file. Recognized keys:
//!
//! | key | meaning | default |
//! |---|---|---|
//! | `problem` | `mp1`, `mp1-homogeneous`, `mp2`, `mp3` | `mp1` |
//! | `problem.<name>` | geometry parameter of mp2/mp3 | |
//! | `H` | comma separated coarse mesh sizes (`2^-4`, `1/16`, `0.0625`) | `2^-4` |
//! | `h` | fine mesh size | `2^-8` |
//! | `policy` | `fine_layers`, `coarse_layers`, `coarse_equivalent`, `global` | `fine_layers` |
//! | `layers` | comma separated layer counts | `32` |
//! | `tol_r`, `tol_c` | corrector solver tolerances | `1e-10` |
//! | `reference` | `direct` or `cg` | `direct` |
//! | `reference_tol`, `reference_max_iter` | CG settings | `1e-12`, `100000` |
//! | `threads` | worker threads, 0 for all cores | `0` |
//! | `output_dir` | where CSV and manifest go | `out` |
//! | `cache` | reuse correctors across runs | `false` |
//!
//! `coarse_equivalent` reads each layer count as `k` and grows `k H / h`
//! fine layers, which is how the tables count coarse layers.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::Serialize;

use crate::corrector::{
    compute_all_correctors, CacheKey, CorrectorContext, CorrectorSet, CorrectorTolerances, NeumannLoads, PatchPolicy,
};
use crate::error::{Error, Result};
use crate::fem::{
    assemble_load, assemble_neumann, assemble_stiffness, build_dirichlet_extension, neumann_edge_loads,
    sample_coefficient, solve_reference, CoefField, ErrorReport, FeFunction, NormMatrices, ReferenceSolver,
};
use crate::interp::assemble_clement;
use crate::linsolve::SparseMat;
use crate::lod::{assemble_ms_basis, solve_lod};
use crate::mesh::{CoarseFineMap, LayerRule, PatchStats, TriMesh};
use crate::problems::{by_name, ProblemSpec};

/// Finest level accepted by the runner.
pub const MAX_LEVEL: u32 = 11;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    FineLayers,
    CoarseLayers,
    CoarseEquivalent,
    Global,
}

impl PolicyKind {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "fine_layers" => PolicyKind::FineLayers,
            "coarse_layers" => PolicyKind::CoarseLayers,
            "coarse_equivalent" => PolicyKind::CoarseEquivalent,
            "global" => PolicyKind::Global,
            _ => return Err(Error::Config(format!("unknown policy '{s}'"))),
        })
    }

    fn name(self) -> &'static str {
        match self {
            PolicyKind::FineLayers => "fine_layers",
            PolicyKind::CoarseLayers => "coarse_layers",
            PolicyKind::CoarseEquivalent => "coarse_equivalent",
            PolicyKind::Global => "global",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub problem: String,
    pub problem_overrides: Vec<(String, f64)>,
    /// `H = 2^-level`.
    pub coarse_levels: Vec<u32>,
    pub fine_level: u32,
    pub policy: PolicyKind,
    pub layers: Vec<usize>,
    pub tolerances: CorrectorTolerances,
    pub reference: ReferenceSolver,
    pub threads: usize,
    pub output_dir: PathBuf,
    pub cache: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            problem: "mp1".into(),
            problem_overrides: Vec::new(),
            coarse_levels: vec![4],
            fine_level: 8,
            policy: PolicyKind::FineLayers,
            layers: vec![32],
            tolerances: CorrectorTolerances::default(),
            reference: ReferenceSolver::Direct,
            threads: 0,
            output_dir: PathBuf::from("out"),
            cache: false,
        }
    }
}

/// Parses `2^-4`, `1/16` or `0.0625` into the level 4.
pub fn parse_mesh_size(s: &str) -> Result<u32> {
    let s = s.trim();
    let bad = || Error::Config(format!("mesh size '{s}' is not a negative power of two"));
    if let Some(e) = s.strip_prefix("2^-") {
        return e.trim().parse::<u32>().map_err(|_| bad());
    }
    let v = if let Some(d) = s.strip_prefix("1/") {
        let d: f64 = d.trim().parse().map_err(|_| bad())?;
        1.0 / d
    } else {
        s.parse::<f64>().map_err(|_| bad())?
    };
    if !(v > 0.0 && v <= 1.0) {
        return Err(bad());
    }
    let level = (-v.log2()).round();
    if (level.exp2() * v - 1.0).abs() > 1e-12 {
        return Err(bad());
    }
    Ok(level as u32)
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.trim().parse::<f64>().map_err(|_| Error::Config(format!("{key}: '{v}' is not a number")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.trim().parse::<usize>().map_err(|_| Error::Config(format!("{key}: '{v}' is not a nonnegative integer")))
}

fn list<T>(v: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| f(s.trim())).collect()
}

impl ExperimentConfig {
    /// Parses a config file body. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if let Some(p) = key.strip_prefix("problem.") {
            let v = parse_f64(key, value)?;
            self.problem_overrides.retain(|(k, _)| k != p);
            self.problem_overrides.push((p.to_string(), v));
            return Ok(());
        }
        match key {
            "problem" => self.problem = value.to_string(),
            "H" => self.coarse_levels = list(value, parse_mesh_size)?,
            "h" => self.fine_level = parse_mesh_size(value)?,
            "policy" => self.policy = PolicyKind::parse(value)?,
            "layers" => self.layers = list(value, |s| parse_usize(key, s))?,
            "tol_r" => self.tolerances.tol_r = parse_f64(key, value)?,
            "tol_c" => self.tolerances.tol_c = parse_f64(key, value)?,
            "reference" => {
                self.reference = match value {
                    "direct" => ReferenceSolver::Direct,
                    "cg" => ReferenceSolver::Cg { tol: 1e-12, max_iter: 100_000 },
                    _ => return Err(Error::Config(format!("unknown reference solver '{value}'"))),
                }
            }
            "reference_tol" | "reference_max_iter" => {
                let ReferenceSolver::Cg { tol, max_iter } = &mut self.reference else {
                    return Err(Error::Config(format!("{key} needs reference = cg first")));
                };
                if key == "reference_tol" {
                    *tol = parse_f64(key, value)?;
                } else {
                    *max_iter = parse_usize(key, value)?;
                }
            }
            "threads" => self.threads = parse_usize(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "cache" => {
                self.cache = match value {
                    "true" | "1" | "yes" | "on" => true,
                    "false" | "0" | "no" | "off" => false,
                    _ => return Err(Error::Config(format!("cache: '{value}' is not a boolean"))),
                }
            }
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.coarse_levels.is_empty() {
            return Err(Error::Config("H: at least one coarse mesh size is required".into()));
        }
        if self.fine_level > MAX_LEVEL {
            return Err(Error::Config(format!("h = 2^-{} is finer than the supported 2^-{MAX_LEVEL}", self.fine_level)));
        }
        for &l in &self.coarse_levels {
            if l == 0 {
                return Err(Error::Config("H must be at most 1/2".into()));
            }
            if l >= self.fine_level {
                return Err(Error::Config(format!("h = 2^-{} must satisfy h <= H/2 for H = 2^-{l}", self.fine_level)));
            }
        }
        if self.policy != PolicyKind::Global && self.layers.is_empty() {
            return Err(Error::Config("layers: at least one layer count is required".into()));
        }
        let t = self.tolerances;
        if !(t.tol_r > 0.0 && t.tol_r.is_finite() && t.tol_c > 0.0 && t.tol_c.is_finite()) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if let ReferenceSolver::Cg { tol, max_iter } = self.reference {
            if !(tol > 0.0 && tol.is_finite()) || max_iter == 0 {
                return Err(Error::Config("reference_tol must be positive and reference_max_iter nonzero".into()));
            }
        }
        by_name(&self.problem, &self.problem_overrides)?;
        Ok(())
    }

    /// All `(coarse level, policy)` pairs in sweep order.
    pub fn jobs(&self) -> Vec<(u32, PatchPolicy)> {
        let mut out = Vec::new();
        for &cl in &self.coarse_levels {
            if self.policy == PolicyKind::Global {
                out.push((cl, PatchPolicy::Global));
                continue;
            }
            for &l in &self.layers {
                let p = match self.policy {
                    PolicyKind::FineLayers => PatchPolicy::fine_layers(l),
                    PolicyKind::CoarseLayers => PatchPolicy::coarse_layers(l),
                    PolicyKind::CoarseEquivalent => PatchPolicy::fine_layers(l << (self.fine_level - cl)),
                    PolicyKind::Global => unreachable!(),
                };
                out.push((cl, p));
            }
        }
        out
    }

    /// Canonical `key = value` echo; parsing it gives back the same config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let join = |v: Vec<String>| v.join(",");
        let _ = writeln!(s, "problem = {}", self.problem);
        for (k, v) in &self.problem_overrides {
            let _ = writeln!(s, "problem.{k} = {v:?}");
        }
        let _ = writeln!(s, "H = {}", join(self.coarse_levels.iter().map(|l| format!("2^-{l}")).collect()));
        let _ = writeln!(s, "h = 2^-{}", self.fine_level);
        let _ = writeln!(s, "policy = {}", self.policy.name());
        let _ = writeln!(s, "layers = {}", join(self.layers.iter().map(|l| l.to_string()).collect()));
        let _ = writeln!(s, "tol_r = {:e}", self.tolerances.tol_r);
        let _ = writeln!(s, "tol_c = {:e}", self.tolerances.tol_c);
        match self.reference {
            ReferenceSolver::Direct => {
                let _ = writeln!(s, "reference = direct");
            }
            ReferenceSolver::Cg { tol, max_iter } => {
                let _ = writeln!(s, "reference = cg\nreference_tol = {tol:e}\nreference_max_iter = {max_iter}");
            }
        }
        let _ = writeln!(s, "threads = {}", self.threads);
        let _ = writeln!(s, "output_dir = {}", self.output_dir.display());
        let _ = writeln!(s, "cache = {}", self.cache);
        s
    }
}

/// Fine-grid data shared by every row of a sweep.
pub struct FineProblem {
    pub problem: ProblemSpec,
    pub fine_level: u32,
    pub mesh: TriMesh,
    pub coef: CoefField,
    pub stiffness: SparseMat,
    pub load: Vec<f64>,
    pub neumann: Vec<f64>,
    pub edge_loads: Vec<(usize, [f64; 2])>,
    pub norms: NormMatrices,
}

impl FineProblem {
    pub fn new(problem: ProblemSpec, fine_level: u32) -> Result<Self> {
        let mesh = crate::mesh::build_structured_mesh(1 << fine_level, &problem.boundary_spec())?;
        let coef = sample_coefficient(&mesh, |x| problem.a(x))?;
        let stiffness = assemble_stiffness(&mesh, &coef)?;
        let load = assemble_load(&mesh, |x| problem.f(x));
        let (neumann, edge_loads) = if problem.gamma_n.is_empty() {
            (vec![0.0; mesh.n_nodes()], Vec::new())
        } else {
            (assemble_neumann(&mesh, |x| problem.q(x)), neumann_edge_loads(&mesh, |x| problem.q(x)))
        };
        let norms = NormMatrices::new(&mesh);
        Ok(FineProblem { problem, fine_level, mesh, coef, stiffness, load, neumann, edge_loads, norms })
    }

    pub fn cfmap(&self, coarse_level: u32) -> Result<CoarseFineMap> {
        CoarseFineMap::unit_square(coarse_level, self.fine_level, &self.problem.boundary_spec())
    }

    /// Fine-grid reference solution.
    pub fn reference(&self, solver: ReferenceSolver) -> Result<ReferenceRun> {
        let start = Instant::now();
        // boundary values of the extension do not depend on the coarse grid
        let cfmap = self.cfmap(self.fine_level - 1)?;
        let (_, g_h) = build_dirichlet_extension(&cfmap, |x| self.problem.g(x));
        let sol = solve_reference(&self.mesh, &self.stiffness, &self.load, &self.neumann, &g_h, solver)?;
        Ok(ReferenceRun {
            u: sol.u,
            iterations: sol.iterations,
            relative_residual: sol.relative_residual,
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct ReferenceRun {
    pub u: FeFunction,
    pub iterations: usize,
    pub relative_residual: f64,
    pub seconds: f64,
}

/// Everything recorded about one LOD solve.
#[derive(Clone, Debug, Serialize)]
pub struct LodRunInfo {
    pub coarse_level: u32,
    pub policy: PatchPolicy,
    pub fine_layers: Option<usize>,
    /// Patch size in coarse layers, `fine_layers h / H`.
    pub k: Option<f64>,
    pub errors: ErrorReport,
    pub stats: PatchStats,
    pub coarse_dofs: usize,
    pub min_eigenvalue: f64,
    pub n_dirichlet_correctors: usize,
    pub n_neumann_correctors: usize,
    pub max_sum_defect: f64,
    pub dropped_constraints: usize,
    pub from_cache: bool,
    pub corrector_seconds: f64,
    pub solve_seconds: f64,
}

pub struct LodRun {
    pub info: LodRunInfo,
    pub u_lod: FeFunction,
    /// Coarse part `v_H`.
    pub v_coarse: FeFunction,
    /// Discrete Dirichlet extension used by the run.
    pub g_h: FeFunction,
    pub correctors: CorrectorSet,
}

#[derive(Clone, Debug, Default)]
pub struct LodOptions {
    pub tolerances: CorrectorTolerances,
    pub threads: usize,
    /// Directory for the corrector cache, if enabled.
    pub cache_dir: Option<PathBuf>,
}

/// Cache identity of a corrector set.
pub fn cache_key(fine: &FineProblem, coarse_level: u32, policy: PatchPolicy, tol: CorrectorTolerances) -> CacheKey {
    let desc = format!(
        "lodfem-correctors v{} | {} | H=2^-{} h=2^-{} | {} | tol_r={:e} tol_c={:e}",
        env!("CARGO_PKG_VERSION"),
        fine.problem.description,
        coarse_level,
        fine.fine_level,
        serde_json::to_string(&policy).expect("plain enum"),
        tol.tol_r,
        tol.tol_c
    );
    CacheKey::new(&desc)
}

/// Correctors, coarse solve and errors against `reference` for one row.
pub fn run_lod(
    fine: &FineProblem,
    reference: &FeFunction,
    coarse_level: u32,
    policy: PatchPolicy,
    opts: &LodOptions,
) -> Result<LodRun> {
    let cfmap = fine.cfmap(coarse_level)?;
    let clement = assemble_clement(&cfmap);
    let (_, g_h) = build_dirichlet_extension(&cfmap, |x| fine.problem.g(x));
    let loads = NeumannLoads::new(&cfmap, &fine.edge_loads);
    let ctx = CorrectorContext {
        cfmap: &cfmap,
        coef: &fine.coef,
        stiffness: &fine.stiffness,
        clement: &clement,
        tol: opts.tolerances,
    };

    let start = Instant::now();
    let key = cache_key(fine, coarse_level, policy, opts.tolerances);
    let cache_path = opts.cache_dir.as_ref().map(|d| d.join(format!("{}.lodc", key.hex())));
    let mut from_cache = false;
    let cached = match &cache_path {
        Some(p) => CorrectorSet::load(p, &key).unwrap_or_else(|e| {
            warn!("ignoring unreadable corrector cache {}: {e}", p.display());
            None
        }),
        None => None,
    };
    let correctors = match cached {
        Some(c) => {
            from_cache = true;
            c
        }
        None => {
            let c = compute_all_correctors(&ctx, Some(&g_h), &loads, policy, opts.threads)?;
            if let Some(p) = &cache_path {
                if let Some(dir) = p.parent() {
                    fs::create_dir_all(dir)?;
                }
                c.save(p, &key)?;
            }
            c
        }
    };
    let corrector_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let basis = assemble_ms_basis(&correctors, &cfmap, &clement)?;
    let sol = solve_lod(&basis, &correctors, &fine.stiffness, &fine.load, &fine.neumann, &g_h)?;
    let errors = fine.norms.errors(&FeFunction::fine(reference.values.clone()), &sol.u)?;
    let solve_seconds = start.elapsed().as_secs_f64();

    let fine_layers = policy.fine_layer_count(&cfmap);
    let info = LodRunInfo {
        coarse_level,
        policy,
        fine_layers,
        k: fine_layers.map(|l| l as f64 / cfmap.ratio() as f64),
        errors,
        stats: correctors.patch_stats()?,
        coarse_dofs: sol.size,
        min_eigenvalue: sol.min_eigenvalue,
        n_dirichlet_correctors: correctors.n_dirichlet(),
        n_neumann_correctors: correctors.n_neumann(),
        max_sum_defect: correctors.max_sum_defect(),
        dropped_constraints: correctors.entries.iter().map(|e| e.patch.n_dropped).sum(),
        from_cache,
        corrector_seconds,
        solve_seconds,
    };
    info!(
        "H=2^-{coarse_level} {:?}: rel L2 {:.5e}, rel H1 {:.5e}",
        policy, info.errors.rel_l2, info.errors.rel_h1
    );
    Ok(LodRun { info, u_lod: sol.u, v_coarse: sol.v_coarse, g_h, correctors })
}

/// `v` with five significant digits in plain decimal notation.
pub fn sig5(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let mag = v.abs().log10().floor() as i32;
    let decimals = (4 - mag).max(0) as usize;
    let s = format!("{v:.decimals$}");
    // rounding may have carried into a new digit
    let digits = s.chars().filter(|c| c.is_ascii_digit()).collect::<String>();
    if digits.trim_start_matches('0').len() > 5 && decimals > 0 {
        let d = decimals - 1;
        return format!("{v:.d$}");
    }
    s
}

pub const CSV_HEADER: &str = "H,fine_layers,k,rel_l2,rel_h1,avg_patch_elems,avg_patch_nodes";

/// One CSV line of a finished row.
pub fn csv_row(info: &LodRunInfo) -> String {
    let (layers, k) = match (info.fine_layers, info.k) {
        (Some(l), Some(k)) => (l.to_string(), format!("{k}")),
        _ => ("global".to_string(), "global".to_string()),
    };
    format!(
        "{},{},{},{},{},{},{}",
        (-(info.coarse_level as f64)).exp2(),
        layers,
        k,
        sig5(info.errors.rel_l2),
        sig5(info.errors.rel_h1),
        sig5(info.stats.avg_fine_elems),
        sig5(info.stats.avg_fine_nodes)
    )
}

fn csv_failed_row(coarse_level: u32, policy: PatchPolicy, fine_level: u32) -> String {
    let layers = match policy {
        PatchPolicy::FineLayers { layers, .. } => Some(layers),
        PatchPolicy::CoarseLayers { k, .. } => Some(k << (fine_level - coarse_level)),
        PatchPolicy::Global => None,
    };
    let (l, k) = match layers {
        Some(l) => (l.to_string(), format!("{}", l as f64 / (1u64 << (fine_level - coarse_level)) as f64)),
        None => ("global".into(), "global".into()),
    };
    format!("{},{l},{k},FAILED,FAILED,FAILED,FAILED", (-(coarse_level as f64)).exp2())
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'a str,
    config: String,
    problem: &'a str,
    fine_nodes: usize,
    fine_elements: usize,
    coefficient_range: [f64; 2],
    reference_solver: ReferenceSolver,
    reference_iterations: usize,
    reference_relative_residual: f64,
    reference_seconds: f64,
    rows: &'a [LodRunInfo],
    failure: Option<String>,
    layer_rule_fine: LayerRule,
    total_seconds: f64,
}

/// Summary of a finished sweep.
pub struct ExperimentOutcome {
    pub rows: Vec<LodRunInfo>,
    pub csv_path: PathBuf,
    pub manifest_path: PathBuf,
}

/// Runs the sweep described by `config`, writing `results.csv` and
/// `manifest.json` into the output directory. A failing row is written as a
/// `FAILED` line, the manifest records the error, and the error is returned.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let total = Instant::now();
    let problem = by_name(&config.problem, &config.problem_overrides)?;
    fs::create_dir_all(&config.output_dir)?;
    let csv_path = config.output_dir.join("results.csv");
    let manifest_path = config.output_dir.join("manifest.json");
    fs::write(config.output_dir.join("config.txt"), config.to_text())?;

    let mut csv = fs::File::create(&csv_path)?;
    writeln!(csv, "{CSV_HEADER}")?;

    info!("assembling {} on h = 2^-{}", problem.name, config.fine_level);
    let fine = FineProblem::new(problem, config.fine_level)?;
    let reference = fine.reference(config.reference)?;
    info!("reference solved in {:.1}s", reference.seconds);

    let opts = LodOptions {
        tolerances: config.tolerances,
        threads: config.threads,
        cache_dir: config.cache.then(|| config.output_dir.join("cache")),
    };
    let mut rows = Vec::new();
    let mut failure = None;
    for (cl, policy) in config.jobs() {
        match run_lod(&fine, &reference.u, cl, policy, &opts) {
            Ok(run) => {
                writeln!(csv, "{}", csv_row(&run.info))?;
                csv.flush()?;
                rows.push(run.info);
            }
            Err(e) => {
                writeln!(csv, "{}", csv_failed_row(cl, policy, config.fine_level))?;
                csv.flush()?;
                failure = Some(e);
                break;
            }
        }
    }

    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        config: config.to_text(),
        problem: &fine.problem.description,
        fine_nodes: fine.mesh.n_nodes(),
        fine_elements: fine.mesh.n_elements(),
        coefficient_range: [fine.coef.alpha(), fine.coef.beta()],
        reference_solver: config.reference,
        reference_iterations: reference.iterations,
        reference_relative_residual: reference.relative_residual,
        reference_seconds: reference.seconds,
        rows: &rows,
        failure: failure.as_ref().map(|e| e.to_string()),
        layer_rule_fine: LayerRule::CellVertex,
        total_seconds: total.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Cache(e.to_string()))?;
    fs::write(&manifest_path, json)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(ExperimentOutcome { rows, csv_path, manifest_path }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mesh_sizes() {
        assert_eq!(parse_mesh_size("2^-4").unwrap(), 4);
        assert_eq!(parse_mesh_size("1/16").unwrap(), 4);
        assert_eq!(parse_mesh_size("0.0625").unwrap(), 4);
        assert_eq!(parse_mesh_size("1").unwrap(), 0);
        assert!(parse_mesh_size("0.1").is_err());
        assert!(parse_mesh_size("1/12").is_err());
        assert!(parse_mesh_size("-0.5").is_err());
        assert!(parse_mesh_size("abc").is_err());
    }

    #[test]
    fn parse_and_echo() {
        let text = "# sweep\nproblem = mp3\nproblem.isolator_y = 0.4\nH = 2^-3, 1/16\nh = 2^-6\n\
                    policy = coarse_equivalent\nlayers = 1,2\ntol_r = 1e-9\nthreads = 2\ncache = yes\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.coarse_levels, vec![3, 4]);
        assert_eq!(cfg.fine_level, 6);
        assert_eq!(cfg.problem_overrides, vec![("isolator_y".to_string(), 0.4)]);
        assert!(cfg.cache);
        cfg.validate().unwrap();
        let again = ExperimentConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(again, cfg);
        let jobs = cfg.jobs();
        assert_eq!(jobs.len(), 4);
        assert_eq!(jobs[0], (3, PatchPolicy::fine_layers(8)));
        assert_eq!(jobs[3], (4, PatchPolicy::fine_layers(8)));
    }

    #[test]
    fn cg_echo_roundtrip() {
        let cfg = ExperimentConfig::parse("reference = cg\nreference_tol = 1e-11\nreference_max_iter = 500").unwrap();
        assert_eq!(cfg.reference, ReferenceSolver::Cg { tol: 1e-11, max_iter: 500 });
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert!(ExperimentConfig::parse("reference_tol = 1e-11").is_err());
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            "H = 2^-6\nh = 2^-6",
            "H = 2^-7\nh = 2^-6",
            "H = 1",
            "tol_r = 0",
            "tol_c = -1",
            "problem = mp9",
            "problem = mp2\nproblem.nonsense = 1",
            "h = 2^-14",
            "H = \n",
            "layers = \n",
        ];
        for text in bad {
            let r = ExperimentConfig::parse(text).and_then(|c| c.validate());
            assert!(matches!(r, Err(Error::Config(_))), "{text}");
        }
        for text in ["bogus = 1", "policy = whatever", "layers = -1", "nokeyvalue", "cache = maybe"] {
            assert!(ExperimentConfig::parse(text).is_err(), "{text}");
        }
        assert!(ExperimentConfig::parse("policy = global\nlayers =").unwrap().validate().is_ok());
    }

    #[test]
    fn five_significant_digits() {
        assert_eq!(sig5(0.016641234), "0.016641");
        assert_eq!(sig5(0.24344), "0.24344");
        assert_eq!(sig5(10743.75), "10744");
        assert_eq!(sig5(847.0), "847.00");
        assert_eq!(sig5(0.000174), "0.00017400");
        assert_eq!(sig5(9.99996), "10.000");
        assert_eq!(sig5(0.0), "0");
    }

    #[test]
    fn small_sweep_writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::parse("problem = mp1\nH = 2^-2,2^-3\nh = 2^-5\nlayers = 2,4").unwrap();
        cfg.output_dir = dir.path().to_path_buf();
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.rows.len(), 4);
        let csv = fs::read_to_string(&out.csv_path).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("0.25,2,0.25,"));
        for r in &out.rows {
            assert!(r.errors.rel_h1 > 0.0 && r.errors.rel_h1 < 1.0);
        }
        let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out.manifest_path).unwrap()).unwrap();
        assert_eq!(manifest["rows"].as_array().unwrap().len(), 4);
        assert_eq!(manifest["fine_nodes"], 33 * 33);

        // same config, same bytes; second run also exercises the cache
        cfg.cache = true;
        let dir2 = tempfile::tempdir().unwrap();
        cfg.output_dir = dir2.path().to_path_buf();
        run_experiment(&cfg).unwrap();
        let again = run_experiment(&cfg).unwrap();
        assert!(again.rows.iter().all(|r| r.from_cache));
        assert_eq!(fs::read_to_string(&again.csv_path).unwrap(), csv);
    }
}
