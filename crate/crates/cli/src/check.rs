//! Fast invariant suite behind `magclt check`.

use std::f64::consts::PI;
use std::sync::Arc;

use magclt_core::disorder::{
    alloy_potential, sample_configuration, ConditioningMask, SingleSite, SiteDistribution, StreamKey,
};
use magclt_core::geometry::{build_box, index_set, BoundaryCondition, BoxSpec, LatticePoint, Region};
use magclt_core::magnetic::{assemble, MagneticField, Potential};
use magclt_core::spectral::{
    eigendecompose, hellmann_feynman_check, local_trace, trace_function, trace_resolvent_power,
};
use magclt_core::testfun::{antiderivative_lift, laurent_fit, LaurentPoly, TestFunction};
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { name, passed, detail }
}

type Check = fn() -> Result<CheckOutcome, String>;

fn random_instance(dim: usize, side: u32, b: f64, seed: u64) -> Result<(BoxSpec, MagneticField, Potential), String> {
    let spec = BoxSpec::new(dim, side, 1, BoundaryCondition::Dirichlet).map_err(|e| e.to_string())?;
    let field = if dim == 2 { MagneticField::planar(b) } else { MagneticField::zero(dim) };
    let sites = build_box(&spec).map_err(|e| e.to_string())?;
    let idx = Arc::new(index_set(&spec.region(), 0.5));
    let cfg = sample_configuration(&SiteDistribution::Uniform { lo: -0.5, hi: 1.0 }, idx, StreamKey::new(seed, 0));
    let pot = alloy_potential(&cfg, &SingleSite::indicator(dim, 1), &sites).map_err(|e| e.to_string())?;
    Ok((spec, field, pot))
}

fn free_chain() -> Result<CheckOutcome, String> {
    let mut worst = 0.0_f64;
    for side in [6_u32, 17, 32] {
        let spec = BoxSpec::new(1, side, 1, BoundaryCondition::Dirichlet).map_err(|e| e.to_string())?;
        let sites = build_box(&spec).map_err(|e| e.to_string())?;
        let h = assemble(&spec, &MagneticField::zero(1), &Potential::constant(&sites, 0.0)).map_err(|e| e.to_string())?;
        let s = eigendecompose(&h).map_err(|e| e.to_string())?;
        let n = s.len() as f64;
        for (k, l) in s.eigenvalues().iter().enumerate() {
            worst = worst.max((l - (2.0 - 2.0 * ((k + 1) as f64 * PI / (n + 1.0)).cos())).abs());
        }
    }
    Ok(outcome("free-chain-spectrum", worst <= 1e-10, format!("max deviation {worst:.2e}")))
}

fn structure() -> Result<CheckOutcome, String> {
    let (spec, field, pot) = random_instance(2, 7, 0.6, 3)?;
    let h = assemble(&spec, &field, &pot).map_err(|e| e.to_string())?;
    let herm = h.hermiticity_residual();
    let mut flux = 0.0_f64;
    for c in 0..h.len() {
        if let Some(phi) = h.plaquette_flux(c, 0, 1) {
            flux = flux.max((phi - 0.6).abs());
        }
    }
    let s = eigendecompose(&h).map_err(|e| e.to_string())?;
    let floor = s.min() + pot.sup_norm() + 1e-9;
    Ok(outcome(
        "hermiticity-flux-lower-bound",
        herm == 0.0 && flux <= 1e-12 && floor >= 0.0,
        format!("hermiticity {herm:.1e}, flux deviation {flux:.1e}, lambda_min + |V| = {:.3e}", floor - 1e-9),
    ))
}

fn covariance() -> Result<CheckOutcome, String> {
    let spec = BoxSpec::new(2, 6, 1, BoundaryCondition::Dirichlet).map_err(|e| e.to_string())?;
    let field = MagneticField::planar(0.9);
    let u = SingleSite::indicator(2, 1);
    let idx = Arc::new(index_set(&Region::cube(2, 6.0), 0.5));
    let cfg = sample_configuration(&SiteDistribution::Uniform { lo: 0.0, hi: 1.0 }, idx, StreamKey::new(5, 0));
    let m = LatticePoint([3, -2, 0]);
    let shifted = spec.translated(m);
    let pot = alloy_potential(&cfg, &u, &build_box(&spec).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let pot_m = alloy_potential(&cfg.translate(&m), &u, &build_box(&shifted).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let a = eigendecompose(&assemble(&spec, &field, &pot).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let b = eigendecompose(&assemble(&shifted, &field, &pot_m).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let dev = a
        .eigenvalues()
        .iter()
        .zip(b.eigenvalues())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    Ok(outcome("magnetic-covariance", dev <= 1e-9, format!("max spectral deviation {dev:.2e}")))
}

fn hellmann_feynman() -> Result<CheckOutcome, String> {
    let (spec, field, pot) = random_instance(1, 32, 0.0, 9)?;
    let h = assemble(&spec, &field, &pot).map_err(|e| e.to_string())?;
    let w: Vec<f64> = (0..h.len()).map(|i| if i % 5 == 0 { 1.0 } else { 0.0 }).collect();
    let r = hellmann_feynman_check(&h, &w, &TestFunction::resolvent_power(-2.0, 3), 0.0, 1e-4).map_err(|e| e.to_string())?;
    let rel = r.relative_error();
    Ok(outcome("hellmann-feynman", rel <= 1e-6, format!("relative error {rel:.2e}")))
}

fn backends() -> Result<CheckOutcome, String> {
    let mut worst = 0.0_f64;
    for seed in 0..10_u64 {
        let dim = 1 + (seed % 2) as usize;
        let (spec, field, pot) = random_instance(dim, if dim == 1 { 24 } else { 7 }, 0.4, seed)?;
        let h = assemble(&spec, &field, &pot).map_err(|e| e.to_string())?;
        let s = eigendecompose(&h).map_err(|e| e.to_string())?;
        for m in 1..=4_u32 {
            let a = trace_function(&s, &TestFunction::resolvent_power(-1.0, m as i32)).map_err(|e| e.to_string())?;
            let b = trace_resolvent_power(&h, -1.0, m).map_err(|e| e.to_string())?;
            worst = worst.max(((a - b) / a).abs());
        }
    }
    Ok(outcome("backend-concordance", worst <= 1e-8, format!("max relative difference {worst:.2e}")))
}

fn partition() -> Result<CheckOutcome, String> {
    let (spec, field, pot) = random_instance(2, 9, 0.3, 4)?;
    let h = assemble(&spec, &field, &pot).map_err(|e| e.to_string())?;
    let s = eigendecompose(&h).map_err(|e| e.to_string())?;
    let f = TestFunction::resolvent_power(-1.0, 3);
    let total = trace_function(&s, &f).map_err(|e| e.to_string())?;
    let parts = [
        Region::cube(2, 3.0),
        Region::shell(2, 1.5, 2.5).map_err(|e| e.to_string())?,
        Region::shell(2, 2.5, 9.0).map_err(|e| e.to_string())?,
    ];
    let mut sum = 0.0;
    for r in &parts {
        sum += local_trace(&h, &s, &f, r).map_err(|e| e.to_string())?;
    }
    let dev = (sum - total).abs();
    Ok(outcome("local-trace-partition", dev <= 1e-9, format!("deviation {dev:.2e}")))
}

fn laurent() -> Result<CheckOutcome, String> {
    let p = LaurentPoly::new(-2.0, 3, vec![1.0, -0.5, 0.25]);
    let fit = laurent_fit(&|x| p.eval_unchecked(x), -2.0, 3, 2, 0.0, None).map_err(|e| e.to_string())?;
    let q = antiderivative_lift(&p, 1);
    let dq = q.derivative();
    let mut lift = 0.0_f64;
    for i in 0..100 {
        let x = 0.1 * i as f64;
        let lhs = dq.eval_unchecked(x);
        let rhs = p.eval_unchecked(x) / (x + 2.0);
        lift = lift.max(((lhs - rhs) / rhs).abs());
    }
    Ok(outcome(
        "laurent-machinery",
        fit.sup_error <= 1e-10 && lift <= 1e-10,
        format!("round-trip error {:.2e}, lift identity {lift:.2e}", fit.sup_error),
    ))
}

fn masks() -> Result<CheckOutcome, String> {
    let mut ok = true;
    for d in 1..=3_usize {
        let (hi, lo) = (ConditioningMask::through_ones(d), ConditioningMask::before_ones(d));
        let span = 7_i64;
        for idx in 0..span.pow(d as u32) {
            let mut n = [0_i64; 3];
            let mut rest = idx;
            for c in n.iter_mut().take(d) {
                *c = rest % span - 3;
                rest /= span;
            }
            let n = LatticePoint(n);
            ok &= (hi.contains(&n) != lo.contains(&n)) == (n == LatticePoint::ones(d));
        }
    }
    Ok(outcome("conditioning-masks", ok, "masks differ exactly at 1_d".into()))
}

pub const CHECKS: [(&str, Check); 8] = [
    ("free-chain-spectrum", free_chain),
    ("hermiticity-flux-lower-bound", structure),
    ("magnetic-covariance", covariance),
    ("hellmann-feynman", hellmann_feynman),
    ("backend-concordance", backends),
    ("local-trace-partition", partition),
    ("laurent-machinery", laurent),
    ("conditioning-masks", masks),
];

pub fn run_checks() -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .map(|(name, check)| check().unwrap_or_else(|e| outcome(name, false, format!("error: {e}"))))
        .collect()
}
