//! Monte Carlo ensembles and the statistical checks built on them.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::disorder::{
    alloy_potential, conditional_resample, derive_seed, sample_configuration, sup_bound,
    ConditioningMask, Configuration, DisorderError, SingleSite, SiteDistribution, StreamKey,
};
use crate::geometry::{
    build_box, index_set, interior, BoundaryCondition, BoxSpec, DecompositionPlan, GeometryError,
    IndexSet, LatticePoint, Region, RegionLabel,
};
use crate::magnetic::{assemble_sites, DiscreteHamiltonian, MagneticField, OperatorError, Potential};
use crate::spectral::{
    eigendecompose, offdiag_block_norm, region_weights, trace_auto, weighted_laurent_trace,
    weighted_trace, BlockNorm, SpectralError,
};
use crate::stats::{self, gauss_legendre_unit, ks_normal_statistic, linear_fit, CompensatedSum};
use crate::testfun::TestFunction;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Disorder(#[from] DisorderError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<ExperimentError>,
    },
    #[error("quadrature needs at least 2 nodes, got {0}")]
    Quadrature(usize),
}

/// Everything that determines an ensemble.
#[derive(Clone, Debug)]
pub struct EnsembleSpec {
    pub box_spec: BoxSpec,
    pub field: MagneticField,
    pub dist: SiteDistribution,
    pub single_site: SingleSite,
    pub f: TestFunction,
    pub samples: usize,
    pub seed: u64,
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.dist.validate()?;
        if self.samples < 2 {
            return Err(ExperimentError::Invalid(format!(
                "need at least 2 samples, got {}",
                self.samples
            )));
        }
        if self.single_site.dim != self.box_spec.dim || self.field.dim != self.box_spec.dim {
            return Err(ExperimentError::Invalid("dimensions of box, field and u differ".into()));
        }
        if self.single_site.refinement != self.box_spec.refinement {
            return Err(ExperimentError::Invalid("u and box use different refinements".into()));
        }
        if let Some(p) = self.f.laurent() {
            let bound = sup_bound(&self.dist, &self.single_site);
            if !(p.pole < -bound) {
                return Err(ExperimentError::Invalid(format!(
                    "E must be < {}, got {}",
                    -bound, p.pole
                )));
            }
        }
        Ok(())
    }

    pub fn index_set(&self) -> Arc<IndexSet> {
        Arc::new(index_set(&self.box_spec.region(), self.single_site.radius))
    }

    /// Per-sample key. Sample `j` sees the same couplings at every side length.
    pub fn sample_key(&self, j: usize) -> StreamKey {
        StreamKey::new(derive_seed(self.seed, j as u64), 0)
    }

    pub fn with_side(&self, side: u32) -> Self {
        let mut s = self.clone();
        s.box_spec = s.box_spec.with_side(side);
        s
    }

    pub fn with_bc(&self, bc: BoundaryCondition) -> Self {
        let mut s = self.clone();
        s.box_spec = s.box_spec.with_bc(bc);
        s
    }
}

/// Assembled operator for one configuration.
pub fn sample_operator(
    spec: &EnsembleSpec,
    cfg: &Configuration,
    bc: BoundaryCondition,
) -> Result<DiscreteHamiltonian, ExperimentError> {
    let sites = build_box(&spec.box_spec)?;
    let pot = alloy_potential(cfg, &spec.single_site, &sites)?;
    Ok(assemble_sites(
        sites,
        spec.box_spec.dim,
        spec.box_spec.refinement,
        bc,
        &spec.field,
        &pot,
    )?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub seed: u64,
    pub trace: f64,
}

/// Traces for samples `range` of the ensemble, in index order.
pub fn run_samples(
    spec: &EnsembleSpec,
    range: std::ops::Range<usize>,
) -> Result<Vec<SampleRecord>, ExperimentError> {
    spec.validate()?;
    let index = spec.index_set();
    let sites = build_box(&spec.box_spec)?;
    range
        .into_par_iter()
        .map(|j| {
            let key = spec.sample_key(j);
            let wrap = |e: ExperimentError| ExperimentError::Sample {
                index: j,
                source: Box::new(e),
            };
            let cfg = sample_configuration(&spec.dist, Arc::clone(&index), key);
            let pot = alloy_potential(&cfg, &spec.single_site, &sites).map_err(|e| wrap(e.into()))?;
            let h = assemble_sites(
                sites.clone(),
                spec.box_spec.dim,
                spec.box_spec.refinement,
                spec.box_spec.bc,
                &spec.field,
                &pot,
            )
            .map_err(|e| wrap(e.into()))?;
            let trace = trace_auto(&h, &spec.f).map_err(|e| wrap(e.into()))?;
            Ok(SampleRecord {
                index: j,
                seed: key.seed,
                trace,
            })
        })
        .collect()
}

/// Per-sample traces with derived statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub dim: usize,
    pub side: u32,
    pub bc: BoundaryCondition,
    pub volume: f64,
    pub samples: Vec<SampleRecord>,
    pub mean: f64,
    pub variance: f64,
    /// `(T_j - mean) / √volume`
    pub z: Vec<f64>,
    #[serde(skip)]
    pub elapsed_seconds: f64,
}

impl EnsembleResult {
    pub fn from_samples(dim: usize, side: u32, bc: BoundaryCondition, mut samples: Vec<SampleRecord>) -> Self {
        samples.sort_by_key(|s| s.index);
        let traces: Vec<f64> = samples.iter().map(|s| s.trace).collect();
        let volume = (side as f64).powi(dim as i32);
        let mean = stats::mean(&traces);
        let variance = stats::variance(&traces);
        let z = traces.iter().map(|t| (t - mean) / volume.sqrt()).collect();
        EnsembleResult {
            dim,
            side,
            bc,
            volume,
            samples,
            mean,
            variance,
            z,
            elapsed_seconds: 0.0,
        }
    }

    pub fn traces(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.trace).collect()
    }

    /// Centered traces `Y_j = T_j - mean`.
    pub fn centered(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.trace - self.mean).collect()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

pub fn run_ensemble(spec: &EnsembleSpec, bc: BoundaryCondition) -> Result<EnsembleResult, ExperimentError> {
    let spec = spec.with_bc(bc);
    let start = Instant::now();
    let samples = run_samples(&spec, 0..spec.samples)?;
    let mut out = EnsembleResult::from_samples(spec.box_spec.dim, spec.box_spec.side, bc, samples);
    out.elapsed_seconds = start.elapsed().as_secs_f64();
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateMethod {
    DirectScaling,
    Formula,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub estimate: f64,
    pub se: f64,
    pub method: EstimateMethod,
    pub side: Option<u32>,
    /// Number of samples (direct) or outer samples (formula).
    pub samples: usize,
}

/// A mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarEstimate {
    pub value: f64,
    pub se: f64,
    pub samples: usize,
}

impl ScalarEstimate {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        let value = stats::mean(values);
        let se = if n > 1 { (stats::variance(values) / n as f64).sqrt() } else { f64::NAN };
        ScalarEstimate { value, se, samples: n }
    }
}

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Bootstrap standard error of `stat` over resamples of `values`.
pub fn bootstrap_se(values: &[f64], stat: &dyn Fn(&[f64]) -> f64, resamples: usize, seed: u64) -> f64 {
    let n = values.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = vec![0.0; n];
    let draws: Vec<f64> = (0..resamples)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = values[rng.random_range(0..n)];
            }
            stat(&buf)
        })
        .collect();
    stats::variance(&draws).sqrt()
}

/// `σ̂²(L) = Var(T) / L^d` per result, with bootstrap standard errors.
pub fn variance_scaling(results: &[EnsembleResult], resamples: usize, seed: u64) -> Vec<VarianceEstimate> {
    results
        .iter()
        .map(|r| {
            let traces = r.traces();
            let vol = r.volume;
            let stat = |xs: &[f64]| stats::variance(xs) / vol;
            VarianceEstimate {
                estimate: stat(&traces),
                se: bootstrap_se(&traces, &stat, resamples, derive_seed(seed, r.side as u64)),
                method: EstimateMethod::DirectScaling,
                side: Some(r.side),
                samples: r.len(),
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    pub ks: f64,
    /// `None` when the sample is degenerate.
    pub p_value: Option<f64>,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub degenerate: bool,
    pub samples: usize,
}

fn studentize(xs: &[f64]) -> Option<Vec<f64>> {
    let m = stats::mean(xs);
    let sd = stats::variance(xs).sqrt();
    if !(sd > 0.0) {
        return None;
    }
    Some(xs.iter().map(|x| (x - m) / sd).collect())
}

/// KS distance of the studentized values from `N(0,1)` with a parametric-bootstrap p-value
/// that accounts for the estimated mean and variance.
pub fn normality_test(values: &[f64], n_boot: usize, seed: u64) -> NormalityReport {
    let n = values.len();
    let Some(z) = studentize(values) else {
        return NormalityReport {
            ks: f64::NAN,
            p_value: None,
            skewness: f64::NAN,
            excess_kurtosis: f64::NAN,
            degenerate: true,
            samples: n,
        };
    };
    let ks = ks_normal_statistic(&z);
    let (skewness, excess_kurtosis) = stats::shape_moments(values);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut exceed = 0_usize;
    let mut draw = vec![0.0; n];
    for _ in 0..n_boot {
        for d in draw.iter_mut() {
            *d = rng.sample(StandardNormal);
        }
        let zs = studentize(&draw).expect("normal draws are not constant");
        if ks_normal_statistic(&zs) >= ks {
            exceed += 1;
        }
    }
    NormalityReport {
        ks,
        p_value: Some((1 + exceed) as f64 / (n_boot + 1) as f64),
        skewness,
        excess_kurtosis,
        degenerate: false,
        samples: n,
    }
}

/// `E[(Y_a - Y_b)²] / L^d` over coupled samples of two ensembles.
pub fn bc_difference(a: &EnsembleResult, b: &EnsembleResult) -> Result<ScalarEstimate, ExperimentError> {
    if a.len() != b.len() || a.samples.iter().zip(&b.samples).any(|(x, y)| x.seed != y.seed) {
        return Err(ExperimentError::Invalid(
            "boundary-condition comparison needs the same samples on both arms".into(),
        ));
    }
    let vals: Vec<f64> = a
        .centered()
        .iter()
        .zip(b.centered())
        .map(|(x, y)| (x - y).powi(2) / a.volume)
        .collect();
    Ok(ScalarEstimate::from_values(&vals))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossCovariance {
    pub first: u32,
    pub second: u32,
    pub covariance: f64,
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionResult {
    pub side: u32,
    /// `E[G²] / L^d`
    pub residual: ScalarEstimate,
    pub labels: Vec<RegionLabel>,
    pub region_means: Vec<f64>,
    pub bulk_cross: Vec<CrossCovariance>,
}

/// Residual `G = T_L - Σ_regions T_region` of the annuli decomposition, all sub-box
/// operators being Dirichlet restrictions with the big-box couplings.
pub fn decomposition_residual(
    spec: &EnsembleSpec,
    plan: &DecompositionPlan,
) -> Result<DecompositionResult, ExperimentError> {
    spec.validate()?;
    if plan.side != spec.box_spec.side || plan.dim != spec.box_spec.dim {
        return Err(ExperimentError::Invalid("plan does not match the ensemble box".into()));
    }
    let index = spec.index_set();
    let sites = build_box(&spec.box_spec)?;
    let q = spec.box_spec.refinement;
    let parts: Vec<Vec<usize>> = plan
        .regions
        .iter()
        .map(|r| {
            (0..sites.len())
                .filter(|&i| r.region.contains_mesh(&sites[i], q))
                .collect()
        })
        .collect();
    let rows: Vec<(f64, Vec<f64>)> = (0..spec.samples)
        .into_par_iter()
        .map(|j| {
            let wrap = |e: ExperimentError| ExperimentError::Sample {
                index: j,
                source: Box::new(e),
            };
            let cfg = sample_configuration(&spec.dist, Arc::clone(&index), spec.sample_key(j));
            let pot = alloy_potential(&cfg, &spec.single_site, &sites).map_err(|e| wrap(e.into()))?;
            let op = |sub: Vec<_>, bc| {
                assemble_sites(sub, spec.box_spec.dim, q, bc, &spec.field, &pot)
                    .map_err(|e| wrap(e.into()))
                    .and_then(|h| trace_auto(&h, &spec.f).map_err(|e| wrap(e.into())))
            };
            let total = op(sites.clone(), spec.box_spec.bc)?;
            let pieces = parts
                .iter()
                .map(|idx| {
                    if idx.is_empty() {
                        Ok(0.0)
                    } else {
                        op(idx.iter().map(|&i| sites[i]).collect(), BoundaryCondition::Dirichlet)
                    }
                })
                .collect::<Result<Vec<f64>, _>>()?;
            Ok((total, pieces))
        })
        .collect::<Result<_, ExperimentError>>()?;

    let k = plan.regions.len();
    let total: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let cols: Vec<Vec<f64>> = (0..k).map(|c| rows.iter().map(|r| r.1[c]).collect()).collect();
    let center = |xs: &[f64]| {
        let m = stats::mean(xs);
        xs.iter().map(|x| x - m).collect::<Vec<f64>>()
    };
    let total_c = center(&total);
    let cols_c: Vec<Vec<f64>> = cols.iter().map(|c| center(c)).collect();
    let volume = spec.box_spec.volume();
    let g2: Vec<f64> = (0..rows.len())
        .map(|j| {
            let mut g = CompensatedSum::new();
            g.add(total_c[j]);
            for c in &cols_c {
                g.add(-c[j]);
            }
            g.value().powi(2) / volume
        })
        .collect();
    let bulk: Vec<(u32, usize)> = plan
        .regions
        .iter()
        .enumerate()
        .filter_map(|(i, r)| match r.label {
            RegionLabel::Bulk(b) => Some((b, i)),
            _ => None,
        })
        .collect();
    let mut bulk_cross = Vec::new();
    for (a, &(ka, ia)) in bulk.iter().enumerate() {
        for &(kb, ib) in &bulk[a + 1..] {
            let prod: Vec<f64> = cols_c[ia].iter().zip(&cols_c[ib]).map(|(x, y)| x * y).collect();
            let est = ScalarEstimate::from_values(&prod);
            bulk_cross.push(CrossCovariance {
                first: ka,
                second: kb,
                covariance: est.value,
                se: est.se,
            });
        }
    }
    Ok(DecompositionResult {
        side: plan.side,
        residual: ScalarEstimate::from_values(&g2),
        labels: plan.regions.iter().map(|r| r.label).collect(),
        region_means: cols.iter().map(|c| stats::mean(c)).collect(),
        bulk_cross,
    })
}

/// Least-squares line through `(x, ln y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn log_fit(xs: &[f64], ys: &[f64]) -> Option<LogFit> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(_, y)| **y > 0.0 && y.is_finite())
        .map(|(x, y)| (*x, y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let (a, b, _) = linear_fit(&x, &y);
    let r = stats::correlation(&x, &y);
    Some(LogFit {
        slope: b,
        intercept: a,
        r2: r * r,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub ell: f64,
    pub sites: usize,
    /// `None` when the interior is empty.
    pub gap: Option<f64>,
    pub local_trace: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub box_in_box: Vec<GapRow>,
    pub neumann_dirichlet: Vec<GapRow>,
    pub box_in_box_fit: Option<LogFit>,
    pub neumann_dirichlet_fit: Option<LogFit>,
}

fn local_trace_auto(h: &DiscreteHamiltonian, f: &TestFunction, weights: &[f64]) -> Result<f64, ExperimentError> {
    Ok(match f.laurent() {
        Some(p) => weighted_laurent_trace(h, p, Some(weights))?,
        None => weighted_trace(&eigendecompose(h)?, f, weights)?,
    })
}

/// Interior traces of `f` on `interior(sub, ℓ)`: big box (bc of `big`) against the
/// Dirichlet sub-box, and Neumann against Dirichlet on the sub-box.
pub fn interior_trace_gap(
    big: &BoxSpec,
    sub: &Region,
    field: &MagneticField,
    potential: &Potential,
    f: &TestFunction,
    ells: &[f64],
) -> Result<GapReport, ExperimentError> {
    let sites = build_box(big)?;
    let sub_sites: Vec<_> = sites
        .iter()
        .copied()
        .filter(|k| sub.contains_mesh(k, big.refinement))
        .collect();
    let asm = |s: Vec<_>, bc| assemble_sites(s, big.dim, big.refinement, bc, field, potential);
    let h_big = asm(sites, big.bc)?;
    let h_dir = asm(sub_sites.clone(), BoundaryCondition::Dirichlet)?;
    let h_neu = asm(sub_sites, BoundaryCondition::Neumann)?;
    let compare = |a: &DiscreteHamiltonian, b: &DiscreteHamiltonian| -> Result<Vec<GapRow>, ExperimentError> {
        ells.iter()
            .map(|&ell| {
                let inner = interior(sub, ell);
                let wa = region_weights(a, &inner);
                let wb = region_weights(b, &inner);
                let count = wb.iter().filter(|w| **w != 0.0).count();
                if inner.is_empty() || count == 0 {
                    return Ok(GapRow {
                        ell,
                        sites: 0,
                        gap: None,
                        local_trace: None,
                    });
                }
                let ta = local_trace_auto(a, f, &wa)?;
                let tb = local_trace_auto(b, f, &wb)?;
                Ok(GapRow {
                    ell,
                    sites: count,
                    gap: Some((ta - tb).abs()),
                    local_trace: Some(tb),
                })
            })
            .collect()
    };
    let box_in_box = compare(&h_big, &h_dir)?;
    let neumann_dirichlet = compare(&h_neu, &h_dir)?;
    let fit = |rows: &[GapRow]| {
        let (x, y): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .filter_map(|r| r.gap.map(|g| (r.ell, g)))
            .unzip();
        log_fit(&x, &y)
    };
    Ok(GapReport {
        box_in_box_fit: fit(&box_in_box),
        neumann_dirichlet_fit: fit(&neumann_dirichlet),
        box_in_box,
        neumann_dirichlet,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayProbe {
    pub distances: Vec<f64>,
    pub norms: Vec<f64>,
    pub fit: Option<LogFit>,
}

/// Operator norms of `χ_F (H - E)^{-m} χ_{G_r}` for the centred cube `F` of half-side
/// `core` and unit-width shells `G_r` at sup-distance `r` from `F`.
pub fn combes_thomas_probe(
    h: &DiscreteHamiltonian,
    pole: f64,
    m: u32,
    core: f64,
    distances: &[f64],
) -> Result<DecayProbe, ExperimentError> {
    let spectrum = eigendecompose(h)?;
    let f_region = Region {
        dim: h.dim,
        shape: crate::geometry::Shape::Cube { half_side: core },
    };
    let mut norms = Vec::with_capacity(distances.len());
    for &r in distances {
        let inner = core + r - 0.5;
        let g_region = Region::shell(h.dim, inner, inner + 1.0)?;
        norms.push(offdiag_block_norm(
            h,
            &spectrum,
            pole,
            m,
            &f_region,
            &g_region,
            BlockNorm::Operator,
        )?);
    }
    Ok(DecayProbe {
        fit: log_fit(distances, &norms),
        distances: distances.to_vec(),
        norms,
    })
}

/// Parameters of the nested Monte Carlo estimate of the limiting variance.
#[derive(Clone, Debug)]
pub struct FormulaSpec {
    pub dim: usize,
    pub refinement: u32,
    pub field: MagneticField,
    pub dist: SiteDistribution,
    pub single_site: SingleSite,
    pub f: TestFunction,
    pub proxy_side: u32,
    pub n_out: usize,
    pub n_in: usize,
    pub quadrature: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormulaDiagnostics {
    /// Per-outer-sample cross products `D₀ D₁`.
    pub products: Vec<f64>,
    /// Distance from the site `1_d` to the proxy boundary.
    pub depth: f64,
}

/// Inner-stream tag: outer sample, replica, term, inner index.
fn inner_key(seed: u64, outer: usize, replica: usize, term: usize, inner: usize) -> StreamKey {
    let tag = (((outer as u64) << 24) | ((replica as u64) << 20) | ((term as u64) << 16)) ^ inner as u64;
    StreamKey::new(derive_seed(seed, outer as u64), 1 + tag)
}

/// Estimate of `σ²_f = E[(term₁ - term₂)²]` with two inner replicas per term; the product
/// of replica-wise differences is unbiased for the square.
pub fn variance_formula(spec: &FormulaSpec) -> Result<(VarianceEstimate, FormulaDiagnostics), ExperimentError> {
    if spec.quadrature < 2 {
        return Err(ExperimentError::Quadrature(spec.quadrature));
    }
    spec.dist.validate()?;
    if spec.n_out < 2 || spec.n_in < 1 {
        return Err(ExperimentError::Invalid("need n_out >= 2 and n_in >= 1".into()));
    }
    let d = spec.dim;
    let proxy = BoxSpec::new(d, spec.proxy_side, spec.refinement, BoundaryCondition::Dirichlet)?;
    let one = LatticePoint::ones(d);
    let depth = spec.proxy_side as f64 / 2.0 - 1.0;
    if depth < spec.proxy_side as f64 / 4.0 {
        return Err(ExperimentError::Geometry(GeometryError::Invalid(format!(
            "site 1_d lies {depth} from the boundary of the proxy box of side {}, need at least {}",
            spec.proxy_side,
            spec.proxy_side as f64 / 4.0
        ))));
    }
    let sites = build_box(&proxy)?;
    let index = Arc::new(index_set(&proxy.region(), spec.single_site.radius));
    if !index.contains(&one) {
        return Err(ExperimentError::Invalid("site 1_d is not a coupling of the proxy box".into()));
    }
    let weights = spec.single_site.weights_on(&one, &sites);
    let df = spec.f.derivative();
    let rule = gauss_legendre_unit(spec.quadrature);
    let masks = [ConditioningMask::through_ones(d), ConditioningMask::before_ones(d)];

    // X(ω) = ω_1 ∫₀¹ Tr(u_1 f'(H^ω with ω_1 → tω_1)) dt
    let integrand = |cfg: &Configuration| -> Result<f64, ExperimentError> {
        let w1 = cfg.get(&one).expect("1_d is in the index set");
        if w1 == 0.0 || weights.iter().all(|w| *w == 0.0) {
            return Ok(0.0);
        }
        let pot = alloy_potential(cfg, &spec.single_site, &sites)?;
        let h = assemble_sites(sites.clone(), d, spec.refinement, BoundaryCondition::Dirichlet, &spec.field, &pot)?;
        let mut acc = CompensatedSum::new();
        for (t, wq) in &rule {
            let ht = h.with_diagonal_shift(&weights, (t - 1.0) * w1);
            acc.add(wq * local_trace_auto(&ht, &df, &weights)?);
        }
        Ok(w1 * acc.value())
    };

    let products = (0..spec.n_out)
        .into_par_iter()
        .map(|o| {
            let wrap = |e: ExperimentError| ExperimentError::Sample {
                index: o,
                source: Box::new(e),
            };
            let base = sample_configuration(&spec.dist, Arc::clone(&index), StreamKey::new(derive_seed(spec.seed, o as u64), 0));
            let mut diffs = [0.0_f64; 2];
            for (r, diff) in diffs.iter_mut().enumerate() {
                let mut terms = [0.0_f64; 2];
                for (t, mask) in masks.iter().enumerate() {
                    let mut acc = CompensatedSum::new();
                    for i in 0..spec.n_in {
                        let cfg = conditional_resample(&base, mask, inner_key(spec.seed, o, r, t, i));
                        acc.add(integrand(&cfg).map_err(wrap)?);
                    }
                    terms[t] = acc.value() / spec.n_in as f64;
                }
                *diff = terms[0] - terms[1];
            }
            Ok(diffs[0] * diffs[1])
        })
        .collect::<Result<Vec<f64>, ExperimentError>>()?;
    let est = ScalarEstimate::from_values(&products);
    Ok((
        VarianceEstimate {
            estimate: est.value,
            se: est.se,
            method: EstimateMethod::Formula,
            side: Some(spec.proxy_side),
            samples: spec.n_out,
        },
        FormulaDiagnostics { products, depth },
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub side: u32,
    /// `E|Y|² / L^d`
    pub second: f64,
    /// `E|Y|⁴ / L^{2d}`
    pub fourth: f64,
    /// `fourth / second²`, undefined for degenerate ensembles.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentScan {
    pub rows: Vec<MomentRow>,
    /// max/min over L of each normalized moment; `None` when a moment vanishes.
    pub second_spread: Option<f64>,
    pub fourth_spread: Option<f64>,
}

pub fn moment_scan(results: &[EnsembleResult]) -> Result<MomentScan, ExperimentError> {
    if results.len() < 2 {
        return Err(ExperimentError::Invalid("moment scan needs at least two side lengths".into()));
    }
    let rows: Vec<MomentRow> = results
        .iter()
        .map(|r| {
            let y = r.centered();
            let second = stats::mean(&y.iter().map(|v| v * v).collect::<Vec<_>>()) / r.volume;
            let fourth = stats::mean(&y.iter().map(|v| v.powi(4)).collect::<Vec<_>>()) / (r.volume * r.volume);
            MomentRow {
                side: r.side,
                second,
                fourth,
                ratio: (second > 0.0).then(|| fourth / (second * second)),
            }
        })
        .collect();
    let spread = |vals: Vec<f64>| {
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(0.0, f64::max);
        (lo > 0.0).then(|| hi / lo)
    };
    Ok(MomentScan {
        second_spread: spread(rows.iter().map(|r| r.second).collect()),
        fourth_spread: spread(rows.iter().map(|r| r.fourth).collect()),
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdsRow {
    pub side: u32,
    pub bc: BoundaryCondition,
    pub value: f64,
    pub se: f64,
    /// Relative change from the previous row.
    pub change: Option<f64>,
}

/// `L^{-d} mean(T)` per result.
pub fn ids_estimate(results: &[EnsembleResult]) -> Vec<IdsRow> {
    let mut rows: Vec<IdsRow> = Vec::with_capacity(results.len());
    for r in results {
        let value = r.mean / r.volume;
        let se = (r.variance / r.len() as f64).sqrt() / r.volume;
        let change = rows.last().map(|p| ((value - p.value) / p.value).abs());
        rows.push(IdsRow {
            side: r.side,
            bc: r.bc,
            value,
            se,
            change,
        });
    }
    rows
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositivityVerdict {
    pub estimates: Vec<VarianceEstimate>,
    pub threshold_se: f64,
    /// Per-estimate `estimate > k · se`.
    pub passes: Vec<bool>,
    pub positive: bool,
}

/// Positive iff every supplied estimate exceeds `k_se` standard errors. Estimates that are
/// exactly zero never pass, even with zero standard error.
pub fn positivity_check(estimates: &[VarianceEstimate], k_se: f64) -> PositivityVerdict {
    let passes: Vec<bool> = estimates
        .iter()
        .map(|e| e.estimate > 0.0 && e.estimate > k_se * e.se)
        .collect();
    PositivityVerdict {
        estimates: estimates.to_vec(),
        threshold_se: k_se,
        positive: !passes.is_empty() && passes.iter().all(|p| *p),
        passes,
    }
}
