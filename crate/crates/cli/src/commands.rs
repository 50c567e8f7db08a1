//! Subcommand drivers. Every ensemble goes through the shard store, and statistics are
//! always computed from the reloaded shards so that resumed runs match uninterrupted ones.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use magclt_core::disorder::{alloy_potential, sample_configuration};
use magclt_core::experiments::{
    bc_difference, combes_thomas_probe, decomposition_residual, ids_estimate, interior_trace_gap, moment_scan,
    normality_test, positivity_check, run_samples, variance_formula, variance_scaling, EnsembleResult,
    ExperimentError,
};
use magclt_core::geometry::{annuli_plan, build_box, BoundaryCondition, GeometryError, Region};
use magclt_core::magnetic::assemble;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::check::run_checks;
use crate::config::{field, ConfigError, FunctionConfig, LoadedConfig};
use crate::export::{self, ExportError};
use crate::manifest::RunManifest;
use crate::plot;
use crate::store::{Shard, ShardStore, StoreError};

/// Samples per shard file.
pub const CHUNK: usize = 250;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("sample budget exhausted after {computed} new samples, {remaining} still missing; rerun with --resume")]
    Incomplete { computed: usize, remaining: usize },
    #[error("{0} invariant check(s) failed")]
    ChecksFailed(usize),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Incomplete { .. } => 3,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            RunError::Config(_) => "config",
            RunError::Store(_) => "store",
            RunError::Export(_) => "export",
            RunError::Experiment(_) | RunError::Geometry(_) => "compute",
            RunError::Incomplete { .. } => "incomplete",
            RunError::ChecksFailed(_) => "check",
        }
    }

    pub fn messages(&self) -> Vec<String> {
        match self {
            RunError::Config(c) => c.messages(),
            other => vec![other.to_string()],
        }
    }

    /// Machine-readable failure summary for stderr.
    pub fn summary(&self, subcommand: &str) -> Value {
        json!({
            "status": "error",
            "subcommand": subcommand,
            "kind": self.kind(),
            "exit_code": self.exit_code(),
            "messages": self.messages(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Check,
    Ensemble,
    Clt,
    BcCompare,
    VarianceFormula,
    Decay,
    Decompose,
    Lln,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Check => "check",
            Command::Ensemble => "ensemble",
            Command::Clt => "clt",
            Command::BcCompare => "bc-compare",
            Command::VarianceFormula => "variance-formula",
            Command::Decay => "decay",
            Command::Decompose => "decompose",
            Command::Lln => "lln",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Options {
    pub out: PathBuf,
    pub resume: bool,
    /// Maximum number of new ensemble samples to compute in this invocation.
    pub budget: Option<usize>,
}

fn bc_name(bc: BoundaryCondition) -> &'static str {
    match bc {
        BoundaryCondition::Dirichlet => "dirichlet",
        BoundaryCondition::Neumann => "neumann",
    }
}

fn other_bc(bc: BoundaryCondition) -> BoundaryCondition {
    match bc {
        BoundaryCondition::Dirichlet => BoundaryCondition::Neumann,
        BoundaryCondition::Neumann => BoundaryCondition::Dirichlet,
    }
}

struct Runner<'a> {
    loaded: &'a LoadedConfig,
    opts: &'a Options,
    dir: PathBuf,
    log: PathBuf,
    manifest: RunManifest,
}

impl<'a> Runner<'a> {
    fn new(cmd: Command, loaded: &'a LoadedConfig, opts: &'a Options) -> Result<Self, RunError> {
        let dir = opts.out.join(cmd.name());
        fs::create_dir_all(&dir).map_err(|source| ExportError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let log = dir.join("run.log");
        let runner = Runner {
            loaded,
            opts,
            log,
            manifest: RunManifest::new(cmd.name(), loaded),
            dir,
        };
        runner.note(&format!("start {} config_hash={}", cmd.name(), runner.manifest.config_hash));
        Ok(runner)
    }

    /// Timestamped line in `run.log`; the only non-reproducible output.
    fn note(&self, line: &str) {
        let t = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        if let Ok(mut f) = OpenOptions::new().create(true).append(true).open(&self.log) {
            let _ = writeln!(f, "{t:.3} {line}");
        }
    }

    fn write(&self, name: &str, text: &str) -> Result<(), RunError> {
        Ok(export::write(&self.dir.join(name), text)?)
    }

    /// Fetches every requested ensemble, computing only missing samples.
    fn ensembles(&self, keys: &[(u32, BoundaryCondition)], samples: usize) -> Result<Vec<EnsembleResult>, RunError> {
        let c = &self.loaded.config;
        let store = ShardStore::open(&self.opts.out.join("shards"), &c.physics_hash())?;
        if !self.opts.resume {
            for &(side, bc) in keys {
                if store.has_shards(side, bc)? {
                    return Err(StoreError::ExistingShards {
                        dir: store.dir().to_path_buf(),
                    }
                    .into());
                }
            }
        }
        let mut budget = self.opts.budget;
        let mut computed = 0;
        let mut remaining = 0;
        for &(side, bc) in keys {
            let spec = c.ensemble_spec(side, bc, samples);
            for (start, end) in store.missing(side, bc, samples)? {
                let mut a = start;
                while a < end {
                    let b = (a + CHUNK).min(end);
                    let b = match budget {
                        Some(0) => {
                            remaining += end - a;
                            break;
                        }
                        Some(left) => b.min(a + left),
                        None => b,
                    };
                    let records = run_samples(&spec, a..b)?;
                    store.write(&Shard {
                        config_hash: c.physics_hash(),
                        dim: c.dim,
                        side,
                        bc,
                        start: a,
                        end: b,
                        samples: records,
                    })?;
                    self.note(&format!("L={side} bc={} samples {a}..{b} computed", bc_name(bc)));
                    if let Some(left) = budget.as_mut() {
                        *left -= b - a;
                    }
                    computed += b - a;
                    a = b;
                }
            }
        }
        if remaining > 0 {
            self.note(&format!("budget exhausted, {remaining} samples missing"));
            return Err(RunError::Incomplete { computed, remaining });
        }
        let mut out = Vec::with_capacity(keys.len());
        for &(side, bc) in keys {
            let r = store
                .load(c.dim, side, bc, samples)?
                .expect("all samples were just computed");
            let stem = format!("ensemble-L{side}-{}", bc_name(bc));
            self.write(&format!("{stem}.csv"), &export::ensemble_csv(&r)?)?;
            self.write(&format!("{stem}.json"), &export::to_json(&r))?;
            out.push(r);
        }
        Ok(out)
    }

    fn finish<T: Serialize>(self, stats: &T) -> Result<Value, RunError> {
        self.write("stats.json", &export::to_json(stats))?;
        self.write("manifest.json", &export::to_json(&self.manifest))?;
        self.note("done");
        Ok(serde_json::to_value(stats).expect("stats serialize"))
    }
}

#[derive(Serialize)]
struct EnsembleSummary {
    side: u32,
    bc: BoundaryCondition,
    samples: usize,
    mean: f64,
    variance: f64,
}

fn summaries(results: &[EnsembleResult]) -> Vec<EnsembleSummary> {
    results
        .iter()
        .map(|r| EnsembleSummary {
            side: r.side,
            bc: r.bc,
            samples: r.len(),
            mean: r.mean,
            variance: r.variance,
        })
        .collect()
}

fn keys(sides: &[u32], bc: BoundaryCondition) -> Vec<(u32, BoundaryCondition)> {
    sides.iter().map(|&s| (s, bc)).collect()
}

/// Runs a subcommand and returns the JSON written to `stats.json`.
pub fn run(cmd: Command, loaded: &LoadedConfig, opts: &Options) -> Result<Value, RunError> {
    let c = &loaded.config;
    let runner = Runner::new(cmd, loaded, opts)?;
    match cmd {
        Command::Check => {
            let outcomes = run_checks();
            let failed = outcomes.iter().filter(|o| !o.passed).count();
            let value = runner.finish(&json!({ "checks": outcomes, "failed": failed }))?;
            if failed > 0 {
                return Err(RunError::ChecksFailed(failed));
            }
            Ok(value)
        }
        Command::Ensemble => {
            let results = runner.ensembles(&keys(&c.sides, c.bc), c.samples)?;
            let variance = variance_scaling(&results, c.bootstrap, c.seed);
            runner.write("scaling.svg", &plot::scaling(&variance))?;
            runner.finish(&json!({ "ensembles": summaries(&results), "variance": variance }))
        }
        Command::Clt => {
            let results = runner.ensembles(&keys(&c.sides, c.bc), c.samples)?;
            let variance = variance_scaling(&results, c.bootstrap, c.seed);
            let normality: Vec<Value> = results
                .iter()
                .map(|r| {
                    json!({
                        "side": r.side,
                        "report": normality_test(&r.traces(), c.normality_bootstrap, c.seed ^ r.side as u64),
                    })
                })
                .collect();
            let moments = moment_scan(&results)?;
            let largest = results.last().expect("sides are nonempty");
            runner.write("qq.svg", &plot::qq(&largest.traces()))?;
            runner.write("scaling.svg", &plot::scaling(&variance))?;
            runner.finish(&json!({
                "ensembles": summaries(&results),
                "variance": variance,
                "normality": normality,
                "moments": moments,
            }))
        }
        Command::BcCompare => {
            let (a, b) = (c.bc, other_bc(c.bc));
            let mut ks = keys(&c.sides, a);
            ks.extend(keys(&c.sides, b));
            let results = runner.ensembles(&ks, c.samples)?;
            let (ra, rb) = results.split_at(c.sides.len());
            let mut differences = Vec::new();
            for (x, y) in ra.iter().zip(rb) {
                differences.push(json!({ "side": x.side, "difference": bc_difference(x, y)? }));
            }
            let va = variance_scaling(ra, c.bootstrap, c.seed);
            let vb = variance_scaling(rb, c.bootstrap, c.seed);
            let comparison: Vec<Value> = va
                .iter()
                .zip(&vb)
                .map(|(x, y)| {
                    json!({
                        "side": x.side,
                        "difference": y.estimate - x.estimate,
                        "combined_se": x.se.hypot(y.se),
                    })
                })
                .collect();
            runner.finish(&json!({
                "ensembles": summaries(&results),
                "coupled_difference": differences,
                "variance": { bc_name(a): va, bc_name(b): vb },
                "variance_comparison": comparison,
                "ids": { bc_name(a): ids_estimate(ra), bc_name(b): ids_estimate(rb) },
            }))
        }
        Command::Lln => {
            let mut ks = keys(&c.sides, BoundaryCondition::Dirichlet);
            ks.extend(keys(&c.sides, BoundaryCondition::Neumann));
            let results = runner.ensembles(&ks, c.samples)?;
            let (rd, rn) = results.split_at(c.sides.len());
            let (id, inn) = (ids_estimate(rd), ids_estimate(rn));
            let agreement: Vec<Value> = id
                .iter()
                .zip(&inn)
                .map(|(d, n)| json!({ "side": d.side, "relative_difference": ((n.value - d.value) / d.value).abs() }))
                .collect();
            runner.finish(&json!({
                "dirichlet": id,
                "neumann": inn,
                "bc_agreement": agreement,
            }))
        }
        Command::VarianceFormula => {
            let (estimate, diag) = variance_formula(&c.formula_spec())?;
            let mut csv = String::from("outer_index,product\n");
            for (i, p) in diag.products.iter().enumerate() {
                csv.push_str(&format!("{i},{p:e}\n"));
            }
            runner.write("products.csv", &csv)?;
            let verdict = positivity_check(std::slice::from_ref(&estimate), 3.0);
            runner.finish(&json!({
                "estimate": estimate,
                "proxy_depth": diag.depth,
                "positivity": verdict,
            }))
        }
        Command::Decay => decay(runner),
        Command::Decompose => decompose(runner),
    }
}

fn decay(mut runner: Runner<'_>) -> Result<Value, RunError> {
    let c = &runner.loaded.config;
    let k = &c.decay;
    let spec = c.ensemble_spec(k.side, BoundaryCondition::Dirichlet, k.sample + 1);
    let sites = build_box(&spec.box_spec)?;
    let cfg = sample_configuration(&spec.dist, spec.index_set(), spec.sample_key(k.sample));
    let pot = alloy_potential(&cfg, &spec.single_site, &sites).map_err(ExperimentError::from)?;
    let sub = Region::cube(c.dim, k.sub_side as f64);
    let gaps = interior_trace_gap(&spec.box_spec, &sub, &field(c), &pot, &spec.f, &k.ells)?;
    let h = assemble(&spec.box_spec, &field(c), &pot).map_err(ExperimentError::from)?;
    let (pole, m) = match &c.function {
        FunctionConfig::ResolventPower { pole, m } => (*pole, *m),
        other => (other.pole(), other.order()),
    };
    let probe = combes_thomas_probe(&h, pole, m as u32, k.core, &k.distances)?;
    let series = |rows: &[magclt_core::experiments::GapRow]| -> Vec<(f64, f64)> {
        rows.iter().filter_map(|r| r.gap.map(|g| (r.ell, g))).collect()
    };
    let svg = plot::decay(&[
        ("box in box", series(&gaps.box_in_box), gaps.box_in_box_fit.clone()),
        ("neumann vs dirichlet", series(&gaps.neumann_dirichlet), gaps.neumann_dirichlet_fit.clone()),
        (
            "resolvent block norm",
            probe.distances.iter().copied().zip(probe.norms.iter().copied()).collect(),
            probe.fit.clone(),
        ),
    ]);
    runner.write("decay.svg", &svg)?;
    runner
        .manifest
        .extra
        .insert("sub_box".into(), serde_json::to_value(sub).expect("region serializes"));
    runner.finish(&json!({
        "sample_seed": spec.sample_key(k.sample).seed,
        "interior_gap": gaps,
        "combes_thomas": probe,
    }))
}

fn decompose(mut runner: Runner<'_>) -> Result<Value, RunError> {
    let c = &runner.loaded.config;
    let d = &c.decomposition;
    let mut rows = Vec::new();
    let mut plans = BTreeMap::new();
    for &side in &d.sides {
        let plan = annuli_plan(c.dim, side, c.exponents(), d.support_radius)?;
        let spec = c.ensemble_spec(side, BoundaryCondition::Dirichlet, d.samples);
        let r = decomposition_residual(&spec, &plan)?;
        runner.note(&format!("decomposition L={side} done"));
        plans.insert(side.to_string(), serde_json::to_value(&plan).expect("plan serializes"));
        rows.push(r);
    }
    let residuals: Vec<f64> = rows.iter().map(|r| r.residual.value).collect();
    let decreasing = residuals.windows(2).all(|w| w[1] < w[0]);
    runner
        .manifest
        .extra
        .insert("plans".into(), Value::Object(plans.into_iter().collect()));
    runner.finish(&json!({
        "rows": rows,
        "residual_strictly_decreasing": decreasing,
        "largest_cross_z": rows
            .iter()
            .flat_map(|r| r.bulk_cross.iter())
            .filter(|x| x.se > 0.0)
            .map(|x| (x.covariance / x.se).abs())
            .fold(0.0, f64::max),
    }))
}

pub fn out_dir(cli_out: Option<&Path>, loaded: &LoadedConfig) -> PathBuf {
    cli_out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&loaded.config.output))
}
