//! Run configuration: TOML schema, defaults with provenance, and validation that reports
//! every violation at once.

use std::collections::BTreeMap;

use magclt_core::disorder::{sup_bound, SingleSite, SiteDistribution};
use magclt_core::experiments::{EnsembleSpec, FormulaSpec};
use magclt_core::geometry::{BoundaryCondition, BoxSpec, Exponents, MeshPoint, MAX_DIM};
use magclt_core::magnetic::MagneticField;
use magclt_core::testfun::{smooth_target, LaurentPoly, TestFunction};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("{} violation(s): {}", .0.len(), .0.join("; "))]
    Invalid(Vec<String>),
}

impl ConfigError {
    pub fn messages(&self) -> Vec<String> {
        match self {
            ConfigError::Invalid(v) => v.clone(),
            other => vec![other.to_string()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileEntry {
    pub offset: Vec<i64>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SingleSiteConfig {
    /// Indicator of the unit cell.
    Indicator,
    Zero,
    Profile { radius: f64, entries: Vec<ProfileEntry> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FunctionConfig {
    ResolventPower {
        #[serde(rename = "E")]
        pole: f64,
        m: i32,
    },
    Laurent {
        #[serde(rename = "E")]
        pole: f64,
        m: i32,
        coefficients: Vec<f64>,
    },
    /// `y³ e^{-y}` with `y = 1/(x - E)`.
    Smooth {
        #[serde(rename = "E")]
        pole: f64,
    },
}

impl FunctionConfig {
    pub fn pole(&self) -> f64 {
        match *self {
            FunctionConfig::ResolventPower { pole, .. }
            | FunctionConfig::Laurent { pole, .. }
            | FunctionConfig::Smooth { pole } => pole,
        }
    }

    pub fn order(&self) -> i32 {
        match *self {
            FunctionConfig::ResolventPower { m, .. } | FunctionConfig::Laurent { m, .. } => m,
            FunctionConfig::Smooth { .. } => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecompositionConfig {
    pub sides: Vec<u32>,
    pub eps: f64,
    pub delta: f64,
    pub gamma: f64,
    pub alpha: f64,
    /// Support radius `R` of the single-site bump used to size the annuli.
    pub support_radius: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormulaConfig {
    pub proxy_side: u32,
    pub n_out: usize,
    pub n_in: usize,
    pub quadrature: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayConfig {
    pub side: u32,
    pub sub_side: u32,
    pub ells: Vec<f64>,
    /// Half-side of the cube `F` in the off-diagonal probe.
    pub core: f64,
    pub distances: Vec<f64>,
    /// Which ensemble sample supplies the fixed couplings.
    pub sample: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: String,
    pub dim: usize,
    pub refinement: u32,
    /// Rows of the skew-symmetric field; zero when absent.
    pub field: Option<Vec<Vec<f64>>>,
    pub bc: BoundaryCondition,
    pub samples: usize,
    pub seed: u64,
    pub output: String,
    pub distribution: SiteDistribution,
    pub single_site: SingleSiteConfig,
    pub function: FunctionConfig,
    pub sides: Vec<u32>,
    pub bootstrap: usize,
    pub normality_bootstrap: usize,
    pub decomposition: DecompositionConfig,
    pub formula: FormulaConfig,
    pub decay: DecayConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: "d1-resolvent".into(),
            dim: 1,
            refinement: 1,
            field: None,
            bc: BoundaryCondition::Dirichlet,
            samples: 2000,
            seed: 20240601,
            output: "out".into(),
            distribution: SiteDistribution::Uniform { lo: 0.0, hi: 1.0 },
            single_site: SingleSiteConfig::Indicator,
            function: FunctionConfig::ResolventPower { pole: -2.0, m: 3 },
            sides: vec![32, 64, 128, 256],
            bootstrap: 1000,
            normality_bootstrap: 1000,
            decomposition: DecompositionConfig {
                sides: vec![100, 256, 400],
                eps: 0.75,
                delta: 0.25,
                gamma: 0.5,
                alpha: 0.5,
                support_radius: 1.0,
                samples: 1000,
            },
            formula: FormulaConfig {
                proxy_side: 64,
                n_out: 400,
                n_in: 32,
                quadrature: 8,
            },
            decay: DecayConfig {
                side: 128,
                sub_side: 40,
                ells: vec![2.0, 4.0, 8.0, 16.0],
                core: 2.0,
                distances: (1..=12).map(|k| 2.0 * k as f64).collect(),
                sample: 0,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    User,
    Default,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub value: Value,
    pub provenance: Provenance,
}

/// A validated configuration together with where every parameter came from.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub parameters: BTreeMap<String, Parameter>,
}

/// Tables whose `kind` selects the remaining keys; user tables replace defaults whole.
const TAGGED: [&str; 3] = ["distribution", "single_site", "function"];

fn merge(default: &mut Value, user: &Value, path: &str) {
    match (default, user) {
        (Value::Object(d), Value::Object(u)) => {
            for (k, v) in u {
                let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match d.get_mut(k) {
                    Some(slot) if !TAGGED.contains(&sub.as_str()) => merge(slot, v, &sub),
                    _ => {
                        d.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (d, u) => *d = u.clone(),
    }
}

fn leaves(v: &Value, path: String, user: Option<&Value>, out: &mut BTreeMap<String, Parameter>) {
    match v {
        Value::Object(map) if !map.is_empty() => {
            for (k, sub) in map {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                leaves(sub, p, user.and_then(|u| u.get(k)), out);
            }
        }
        _ => {
            out.insert(
                path,
                Parameter {
                    value: v.clone(),
                    provenance: if user.is_some() { Provenance::User } else { Provenance::Default },
                },
            );
        }
    }
}

/// Removes keys absent from the defaults (outside tagged tables), reporting each.
fn strip_unknown(user: &mut Value, default: &Value, path: &str, out: &mut Vec<String>) {
    if let (Value::Object(u), Value::Object(d)) = (user, default) {
        let mut unknown = Vec::new();
        for (k, v) in u.iter_mut() {
            let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
            match d.get(k) {
                None => unknown.push((k.clone(), sub)),
                Some(dv) if !TAGGED.contains(&sub.as_str()) => strip_unknown(v, dv, &sub, out),
                _ => {}
            }
        }
        for (k, sub) in unknown {
            u.remove(&k);
            out.push(format!("{sub}: unknown key `{k}`"));
        }
    }
}

/// Parses and validates configuration text; an empty document yields the defaults.
pub fn parse_config(text: &str) -> Result<LoadedConfig, ConfigError> {
    let user_toml: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string().trim().to_string()))?;
    let mut user = serde_json::to_value(&user_toml).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    let mut merged = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
    let mut violations = Vec::new();
    strip_unknown(&mut user, &merged, "", &mut violations);
    merge(&mut merged, &user, "");
    let config: RunConfig = match serde_json::from_value(merged.clone()) {
        Ok(c) => c,
        Err(e) if violations.is_empty() => return Err(ConfigError::Schema(e.to_string())),
        Err(e) => {
            violations.push(format!("schema: {e}"));
            return Err(ConfigError::Invalid(violations));
        }
    };
    violations.extend(validate(&config));
    if !violations.is_empty() {
        return Err(ConfigError::Invalid(violations));
    }
    let mut parameters = BTreeMap::new();
    leaves(&merged, String::new(), Some(&user), &mut parameters);
    Ok(LoadedConfig { config, parameters })
}

impl LoadedConfig {
    pub fn defaults() -> Self {
        parse_config("").expect("defaults are valid")
    }

    /// Applies a command-line override and re-validates.
    pub fn override_seed(&mut self, seed: u64) {
        self.config.seed = seed;
        self.parameters.insert(
            "seed".into(),
            Parameter {
                value: Value::from(seed),
                provenance: Provenance::User,
            },
        );
    }

    pub fn override_samples(&mut self, samples: usize) -> Result<(), ConfigError> {
        if samples < 2 {
            return Err(ConfigError::Invalid(vec![format!("samples: need at least 2, got {samples}")]));
        }
        self.config.samples = samples;
        self.parameters.insert(
            "samples".into(),
            Parameter {
                value: Value::from(samples),
                provenance: Provenance::User,
            },
        );
        Ok(())
    }
}

/// All semantic violations, each prefixed by its field path.
pub fn validate(c: &RunConfig) -> Vec<String> {
    let mut v = Vec::new();
    let dim_ok = (1..=MAX_DIM).contains(&c.dim);
    if !dim_ok {
        v.push(format!("dim: must be 1, 2 or 3, got {}", c.dim));
    }
    if c.refinement == 0 {
        v.push("refinement: must be at least 1".into());
    }
    if let (true, Some(rows)) = (dim_ok, &c.field) {
        if let Err(e) = MagneticField::new(c.dim, rows) {
            v.push(format!("field: {e}"));
        }
    }
    if c.samples < 2 {
        v.push(format!("samples: need at least 2, got {}", c.samples));
    }
    if let Err(e) = c.distribution.validate() {
        v.push(format!("distribution: {e}"));
    }
    let single = if dim_ok && c.refinement > 0 {
        match single_site(c) {
            Ok(u) => Some(u),
            Err(e) => {
                v.push(format!("single_site: {e}"));
                None
            }
        }
    } else {
        None
    };
    let m = c.function.order();
    if m <= c.dim as i32 + 1 {
        v.push(format!("function.m: leading order must exceed d + 1 = {}, got {m}", c.dim + 1));
    }
    if let FunctionConfig::Laurent { coefficients, .. } = &c.function {
        if coefficients.is_empty() || coefficients.iter().any(|a| !a.is_finite()) {
            v.push("function.coefficients: need at least one finite coefficient".into());
        }
    }
    if let (Some(u), Ok(())) = (&single, c.distribution.validate()) {
        let bound = sup_bound(&c.distribution, u);
        if !(c.function.pole() < -bound) {
            v.push(format!("function.E: E must be < {}", -bound));
        }
    }
    if c.sides.is_empty() || c.sides.iter().any(|s| *s < 2) {
        v.push("sides: need a nonempty list of side lengths >= 2".into());
    }
    if c.bootstrap < 2 {
        v.push("bootstrap: need at least 2 resamples".into());
    }
    if c.normality_bootstrap < 1 {
        v.push("normality_bootstrap: need at least 1 resample".into());
    }
    let d = &c.decomposition;
    if (d.eps + d.delta - 1.0).abs() > 1e-12 {
        v.push(format!("decomposition: eps + delta must equal 1, got {}", d.eps + d.delta));
    }
    let ex = Exponents {
        eps: d.eps,
        delta: d.delta,
        gamma: d.gamma,
        alpha: d.alpha,
    };
    if let Err(e) = ex.validate() {
        v.push(format!("decomposition: {e}"));
    }
    if !(d.support_radius > 0.0) {
        v.push("decomposition.support_radius: must be positive".into());
    }
    if d.samples < 2 {
        v.push("decomposition.samples: need at least 2".into());
    }
    let f = &c.formula;
    if f.quadrature < 2 {
        v.push(format!("formula.quadrature: need at least 2 nodes, got {}", f.quadrature));
    }
    if f.n_out < 2 || f.n_in < 1 {
        v.push("formula: need n_out >= 2 and n_in >= 1".into());
    }
    if f.proxy_side < 4 {
        v.push("formula.proxy_side: site 1_d must lie at least proxy_side/4 inside, need proxy_side >= 4".into());
    }
    let k = &c.decay;
    if k.sub_side >= k.side || k.sub_side < 2 {
        v.push("decay.sub_side: must satisfy 2 <= sub_side < side".into());
    }
    if k.ells.len() < 2 || k.ells.iter().any(|l| !(*l > 0.0)) {
        v.push("decay.ells: need at least two positive depths".into());
    }
    if k.distances.len() < 2 || k.distances.iter().any(|l| !(*l > 0.0)) {
        v.push("decay.distances: need at least two positive distances".into());
    }
    if !(k.core > 0.0) {
        v.push("decay.core: must be positive".into());
    }
    v
}

pub fn single_site(c: &RunConfig) -> Result<SingleSite, String> {
    match &c.single_site {
        SingleSiteConfig::Indicator => Ok(SingleSite::indicator(c.dim, c.refinement)),
        SingleSiteConfig::Zero => Ok(SingleSite::zero(c.dim, c.refinement)),
        SingleSiteConfig::Profile { radius, entries } => {
            let mut profile = Vec::with_capacity(entries.len());
            for e in entries {
                if e.offset.len() != c.dim {
                    return Err(format!("offset {:?} must have {} entries", e.offset, c.dim));
                }
                let mut k = [0_i64; MAX_DIM];
                k[..c.dim].copy_from_slice(&e.offset);
                profile.push((MeshPoint(k), e.value));
            }
            SingleSite::from_profile(c.dim, c.refinement, *radius, profile).map_err(|e| e.to_string())
        }
    }
}

pub fn field(c: &RunConfig) -> MagneticField {
    match &c.field {
        Some(rows) => MagneticField::new(c.dim, rows).expect("validated"),
        None => MagneticField::zero(c.dim),
    }
}

pub fn test_function(c: &RunConfig) -> TestFunction {
    match &c.function {
        FunctionConfig::ResolventPower { pole, m } => TestFunction::resolvent_power(*pole, *m),
        FunctionConfig::Laurent { pole, m, coefficients } => {
            TestFunction::from_laurent(LaurentPoly::new(*pole, *m, coefficients.clone()))
        }
        FunctionConfig::Smooth { pole } => smooth_target(*pole),
    }
}

impl RunConfig {
    pub fn ensemble_spec(&self, side: u32, bc: BoundaryCondition, samples: usize) -> EnsembleSpec {
        EnsembleSpec {
            box_spec: BoxSpec::new(self.dim, side, self.refinement, bc).expect("validated"),
            field: field(self),
            dist: self.distribution,
            single_site: single_site(self).expect("validated"),
            f: test_function(self),
            samples,
            seed: self.seed,
        }
    }

    pub fn formula_spec(&self) -> FormulaSpec {
        FormulaSpec {
            dim: self.dim,
            refinement: self.refinement,
            field: field(self),
            dist: self.distribution,
            single_site: single_site(self).expect("validated"),
            f: test_function(self),
            proxy_side: self.formula.proxy_side,
            n_out: self.formula.n_out,
            n_in: self.formula.n_in,
            quadrature: self.formula.quadrature,
            seed: self.seed,
        }
    }

    pub fn exponents(&self) -> Exponents {
        Exponents {
            eps: self.decomposition.eps,
            delta: self.decomposition.delta,
            gamma: self.decomposition.gamma,
            alpha: self.decomposition.alpha,
        }
    }

    /// Hash of everything that determines a per-sample trace. Sample counts and report
    /// settings are excluded so that enlarging a run reuses its shards.
    pub fn physics_hash(&self) -> String {
        let key = serde_json::json!({
            "dim": self.dim,
            "refinement": self.refinement,
            "field": self.field,
            "seed": self.seed,
            "distribution": self.distribution,
            "single_site": self.single_site,
            "function": self.function,
        });
        let digest = Sha256::digest(key.to_string().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_keeps_tagged_tables_whole() {
        let loaded = parse_config("[distribution]\nkind = \"point_mass\"\nvalue = 0.5\n").unwrap();
        assert_eq!(loaded.config.distribution, SiteDistribution::PointMass { value: 0.5 });
        assert_eq!(loaded.parameters["distribution.value"].provenance, Provenance::User);
        assert_eq!(loaded.parameters["sides"].provenance, Provenance::Default);
    }

    #[test]
    fn nested_defaults_survive_partial_tables() {
        let loaded = parse_config("[formula]\nn_out = 10\n").unwrap();
        assert_eq!(loaded.config.formula.n_out, 10);
        assert_eq!(loaded.config.formula.quadrature, 8);
        assert_eq!(loaded.parameters["formula.n_out"].provenance, Provenance::User);
        assert_eq!(loaded.parameters["formula.n_in"].provenance, Provenance::Default);
    }

    #[test]
    fn unknown_keys_are_reported_with_other_violations() {
        let err = parse_config("colour = 1\n[formula]\nshade = 2\nquadrature = 1\n").unwrap_err();
        let m = err.messages();
        assert!(m.iter().any(|s| s.contains("`colour`")), "{m:?}");
        assert!(m.iter().any(|s| s.starts_with("formula.shade")), "{m:?}");
        assert!(m.iter().any(|s| s.starts_with("formula.quadrature")), "{m:?}");
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse_config("dim = = 1").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax(_)));
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn hash_ignores_sample_count() {
        let a = LoadedConfig::defaults();
        let mut b = a.clone();
        b.override_samples(10).unwrap();
        assert_eq!(a.config.physics_hash(), b.config.physics_hash());
        b.override_seed(1);
        assert_ne!(a.config.physics_hash(), b.config.physics_hash());
    }
}
