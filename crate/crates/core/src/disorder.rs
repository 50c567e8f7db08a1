//! Alloy-type disorder: single-site distributions and bumps, counter-based coupling
//! fields, coordinate surgery and conditional resampling.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{IndexSet, LatticePoint, MeshPoint, MAX_DIM};
use crate::magnetic::Potential;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DisorderError {
    #[error("invalid single-site distribution: {0}")]
    Distribution(String),
    #[error("invalid single-site potential: {0}")]
    SingleSite(String),
    #[error("configuration does not cover lattice point {0:?} (needed at site {1:?})")]
    Coverage(LatticePoint, MeshPoint),
    #[error("lattice point {0:?} is not in the configuration")]
    MissingCoordinate(LatticePoint),
}

/// Compactly supported law of the couplings `ω_n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SiteDistribution {
    Uniform { lo: f64, hi: f64 },
    /// `a` with probability `prob`, otherwise `b`.
    TwoPoint { a: f64, b: f64, prob: f64 },
    PointMass { value: f64 },
}

impl SiteDistribution {
    pub fn validate(&self) -> Result<(), DisorderError> {
        let finite = |v: f64| v.is_finite();
        match *self {
            SiteDistribution::Uniform { lo, hi } => {
                if !(finite(lo) && finite(hi) && lo <= hi) {
                    return Err(DisorderError::Distribution(format!(
                        "uniform({lo}, {hi}) needs finite lo <= hi"
                    )));
                }
            }
            SiteDistribution::TwoPoint { a, b, prob } => {
                if !(finite(a) && finite(b) && (0.0..=1.0).contains(&prob)) {
                    return Err(DisorderError::Distribution(format!(
                        "two-point({a}, {b}, {prob}) needs finite atoms and prob in [0, 1]"
                    )));
                }
            }
            SiteDistribution::PointMass { value } => {
                if !finite(value) {
                    return Err(DisorderError::Distribution("point mass must be finite".into()));
                }
            }
        }
        Ok(())
    }

    /// `[lo, hi]` containing the support.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            SiteDistribution::Uniform { lo, hi } => (lo, hi),
            SiteDistribution::TwoPoint { a, b, .. } => (a.min(b), a.max(b)),
            SiteDistribution::PointMass { value } => (value, value),
        }
    }

    /// Inverse-CDF map from a uniform draw in `[0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            SiteDistribution::Uniform { lo, hi } => lo + (hi - lo) * u,
            SiteDistribution::TwoPoint { a, b, prob } => {
                if u < prob {
                    a
                } else {
                    b
                }
            }
            SiteDistribution::PointMass { value } => value,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            SiteDistribution::Uniform { lo, hi } => 0.5 * (lo + hi),
            SiteDistribution::TwoPoint { a, b, prob } => prob * a + (1.0 - prob) * b,
            SiteDistribution::PointMass { value } => value,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        match *self {
            SiteDistribution::Uniform { lo, hi } => lo == hi,
            SiteDistribution::TwoPoint { a, b, prob } => a == b || prob == 0.0 || prob == 1.0,
            SiteDistribution::PointMass { .. } => true,
        }
    }

    fn magnitude(&self) -> f64 {
        let (lo, hi) = self.support();
        lo.abs().max(hi.abs())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignTag {
    Nonnegative,
    Nonpositive,
    Mixed,
}

/// The bump `u`, sampled on mesh offsets within sup-norm radius `radius`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleSite {
    pub dim: usize,
    pub refinement: u32,
    pub radius: f64,
    profile: Vec<(MeshPoint, f64)>,
}

impl SingleSite {
    pub fn from_profile(
        dim: usize,
        refinement: u32,
        radius: f64,
        mut profile: Vec<(MeshPoint, f64)>,
    ) -> Result<Self, DisorderError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(DisorderError::SingleSite(format!("radius {radius} must be positive")));
        }
        let q = refinement as f64;
        for (o, v) in &profile {
            if !v.is_finite() {
                return Err(DisorderError::SingleSite(format!("value at {o:?} not finite")));
            }
            let r = (0..MAX_DIM)
                .map(|i| (o.0[i] as f64 / q).abs())
                .fold(0.0_f64, f64::max);
            if r > radius || o.0[dim..].iter().any(|&c| c != 0) {
                return Err(DisorderError::SingleSite(format!(
                    "offset {o:?} lies outside the support radius {radius}"
                )));
            }
        }
        profile.sort_unstable_by_key(|e| e.0);
        profile.dedup_by_key(|e| e.0);
        Ok(SingleSite {
            dim,
            refinement,
            radius,
            profile,
        })
    }

    /// Indicator of the half-open unit cell `[-½, ½)^d`; its translates tile the mesh.
    pub fn indicator(dim: usize, refinement: u32) -> Self {
        let q = refinement as i64;
        // offsets k with -q <= 2k < q
        let lo = (-q).div_euclid(2) + if (-q).rem_euclid(2) == 0 { 0 } else { 1 };
        let hi = (q - 1).div_euclid(2);
        let mut profile = vec![(MeshPoint([0; MAX_DIM]), 1.0)];
        for axis in 0..dim {
            let mut next = Vec::new();
            for (o, v) in &profile {
                for k in lo..=hi {
                    let mut kk = o.0;
                    kk[axis] = k;
                    next.push((MeshPoint(kk), *v));
                }
            }
            profile = next;
        }
        SingleSite::from_profile(dim, refinement, 0.5, profile).expect("indicator is valid")
    }

    /// `u ≡ 0`.
    pub fn zero(dim: usize, refinement: u32) -> Self {
        SingleSite {
            dim,
            refinement,
            radius: 0.5,
            profile: Vec::new(),
        }
    }

    pub fn profile(&self) -> &[(MeshPoint, f64)] {
        &self.profile
    }

    pub fn value_at(&self, offset: &MeshPoint) -> f64 {
        self.profile
            .binary_search_by_key(offset, |e| e.0)
            .map(|i| self.profile[i].1)
            .unwrap_or(0.0)
    }

    pub fn sign(&self) -> SignTag {
        let pos = self.profile.iter().any(|e| e.1 > 0.0);
        let neg = self.profile.iter().any(|e| e.1 < 0.0);
        match (pos, neg) {
            (_, false) => SignTag::Nonnegative,
            (false, true) => SignTag::Nonpositive,
            (true, true) => SignTag::Mixed,
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.profile.iter().fold(0.0_f64, |a, e| a.max(e.1.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.profile.iter().all(|e| e.1 == 0.0)
    }

    /// Values of `u_n = u(· - n)` on the given sites.
    pub fn weights_on(&self, n: &LatticePoint, sites: &[MeshPoint]) -> Vec<f64> {
        let base = n.to_mesh(self.refinement);
        sites
            .iter()
            .map(|k| {
                let off = MeshPoint([k.0[0] - base.0[0], k.0[1] - base.0[1], k.0[2] - base.0[2]]);
                self.value_at(&off)
            })
            .collect()
    }
}

/// Master seed plus stream identifier. Concurrent workers use distinct streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub seed: u64,
    pub stream: u64,
}

impl StreamKey {
    pub fn new(seed: u64, stream: u64) -> Self {
        StreamKey { seed, stream }
    }
}

/// SplitMix64 finaliser of `(master, index)`; used to derive per-sample seeds.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED69));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn zigzag(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

/// Keystream block reserved for coordinate `n`: 20 zigzag bits per axis.
fn coordinate_block(n: &LatticePoint) -> u128 {
    let mut block = 0_u128;
    for (i, c) in n.0.iter().enumerate() {
        let z = zigzag(*c);
        assert!(z < (1 << 20), "lattice coordinate {c} out of range");
        block |= (z as u128) << (20 * i);
    }
    block
}

/// Draws coordinate values; each coordinate reads its own ChaCha block, so values do not
/// depend on the order in which coordinates are visited.
struct CoordinateSampler {
    rng: ChaCha8Rng,
}

impl CoordinateSampler {
    fn new(key: StreamKey) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(key.seed);
        rng.set_stream(key.stream);
        CoordinateSampler { rng }
    }

    fn uniform(&mut self, n: &LatticePoint) -> f64 {
        self.rng.set_word_pos(coordinate_block(n) * 16);
        self.rng.random::<f64>()
    }
}

/// A realisation of the couplings on a finite index set.
#[derive(Clone, Debug, PartialEq)]
pub struct Configuration {
    pub dist: SiteDistribution,
    pub key: StreamKey,
    index: Arc<IndexSet>,
    values: Vec<f64>,
}

impl Configuration {
    pub fn index(&self) -> &IndexSet {
        &self.index
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, n: &LatticePoint) -> Option<f64> {
        self.index.position(n).map(|i| self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&LatticePoint, f64)> {
        self.index.points().iter().zip(self.values.iter().copied())
    }

    /// `(T_m ω)_n = ω_{n-m}`.
    pub fn translate(&self, m: &LatticePoint) -> Configuration {
        Configuration {
            dist: self.dist,
            key: self.key,
            index: Arc::new(self.index.translated(m)),
            values: self.values.clone(),
        }
    }

    pub fn with_values(&self, values: Vec<f64>) -> Configuration {
        assert_eq!(values.len(), self.values.len());
        Configuration {
            dist: self.dist,
            key: self.key,
            index: Arc::clone(&self.index),
            values,
        }
    }
}

pub fn sample_configuration(
    dist: &SiteDistribution,
    index: Arc<IndexSet>,
    key: StreamKey,
) -> Configuration {
    let mut sampler = CoordinateSampler::new(key);
    let values = index
        .points()
        .iter()
        .map(|n| dist.quantile(sampler.uniform(n)))
        .collect();
    Configuration {
        dist: *dist,
        key,
        index,
        values,
    }
}

/// `V(x) = Σ_n ω_n u(x - n)` on each site.
pub fn alloy_potential(
    cfg: &Configuration,
    u: &SingleSite,
    sites: &[MeshPoint],
) -> Result<Potential, DisorderError> {
    let q = u.refinement as i64;
    let d = u.dim;
    let mut out = Potential::new();
    for k in sites {
        let mut v = 0.0;
        for (o, w) in u.profile() {
            if *w == 0.0 {
                continue;
            }
            let mut n = [0_i64; MAX_DIM];
            let mut on_lattice = true;
            for i in 0..d {
                let diff = k.0[i] - o.0[i];
                if diff.rem_euclid(q) != 0 {
                    on_lattice = false;
                    break;
                }
                n[i] = diff.div_euclid(q);
            }
            if !on_lattice {
                continue;
            }
            let n = LatticePoint(n);
            let omega = cfg.get(&n).ok_or(DisorderError::Coverage(n, *k))?;
            v += omega * w;
        }
        out.insert(*k, v);
    }
    Ok(out)
}

/// Deterministic bound on `‖V^ω‖_∞` valid for every realisation.
pub fn sup_bound(dist: &SiteDistribution, u: &SingleSite) -> f64 {
    let q = u.refinement as i64;
    let d = u.dim;
    let cells = (q as usize).pow(d as u32);
    let mut best = 0.0_f64;
    for idx in 0..cells {
        let mut k = [0_i64; MAX_DIM];
        let mut rest = idx;
        for c in k.iter_mut().take(d) {
            *c = (rest % q as usize) as i64;
            rest /= q as usize;
        }
        let s: f64 = u
            .profile()
            .iter()
            .filter(|(o, _)| (0..d).all(|i| (k[i] - o.0[i]).rem_euclid(q) == 0))
            .map(|(_, w)| w.abs())
            .sum();
        best = best.max(s);
    }
    best * dist.magnitude()
}

/// `ω_k → t ω_k`.
pub fn scale_coordinate(
    cfg: &Configuration,
    k: &LatticePoint,
    t: f64,
) -> Result<Configuration, DisorderError> {
    let pos = cfg
        .index
        .position(k)
        .ok_or(DisorderError::MissingCoordinate(*k))?;
    let mut values = cfg.values.clone();
    values[pos] *= t;
    Ok(cfg.with_values(values))
}

/// Selects the coordinates that are held fixed when conditioning.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConditioningMask {
    Everything,
    Nothing,
    /// `{ n : n_axis <= max }`
    HalfSpace { axis: usize, max: i64 },
    /// The lexicographic staircase `A^d_{1,…,1,last}`: `n` belongs if for some axis `j`
    /// the coordinates before `j` are `<= 1` and `n_j <= 0`, or if all coordinates but
    /// the last are `<= 1` and the last is `<= last`.
    Staircase { dim: usize, last: i64 },
}

impl ConditioningMask {
    /// The index set generating `F^d_{1_d}`.
    pub fn through_ones(dim: usize) -> Self {
        ConditioningMask::Staircase { dim, last: 1 }
    }

    /// The index set generating `F^d_{1_{d-1},0}`.
    pub fn before_ones(dim: usize) -> Self {
        ConditioningMask::Staircase { dim, last: 0 }
    }

    pub fn contains(&self, n: &LatticePoint) -> bool {
        match *self {
            ConditioningMask::Everything => true,
            ConditioningMask::Nothing => false,
            ConditioningMask::HalfSpace { axis, max } => n.0[axis] <= max,
            ConditioningMask::Staircase { dim, last } => {
                for j in 0..dim - 1 {
                    if n.0[j] <= 0 {
                        return true;
                    }
                    if n.0[j] > 1 {
                        return false;
                    }
                }
                n.0[dim - 1] <= last
            }
        }
    }
}

/// Keeps the masked coordinates and redraws the rest i.i.d. from `key`.
pub fn conditional_resample(
    cfg: &Configuration,
    mask: &ConditioningMask,
    key: StreamKey,
) -> Configuration {
    let mut sampler = CoordinateSampler::new(key);
    let values = cfg
        .iter()
        .map(|(n, v)| {
            if mask.contains(n) {
                v
            } else {
                cfg.dist.quantile(sampler.uniform(n))
            }
        })
        .collect();
    cfg.with_values(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_box, index_set, BoundaryCondition, BoxSpec, Region};
    use crate::stats::two_sample_ks;

    fn line_index(lo: i64, hi: i64) -> Arc<IndexSet> {
        let pts = (lo..=hi).map(|n| LatticePoint([n, 0, 0])).collect();
        Arc::new(IndexSet::from_points(
            1,
            pts,
            crate::geometry::IndexProvenance {
                region: None,
                support_radius: 0.5,
                interior: None,
            },
        ))
    }

    #[test]
    fn distributions_validate() {
        assert!(SiteDistribution::Uniform { lo: 1.0, hi: 0.0 }.validate().is_err());
        assert!(SiteDistribution::Uniform { lo: 0.0, hi: f64::INFINITY }.validate().is_err());
        assert!(SiteDistribution::TwoPoint { a: 0.0, b: 1.0, prob: 1.5 }.validate().is_err());
        assert!(SiteDistribution::PointMass { value: f64::NAN }.validate().is_err());
        assert_eq!(
            SiteDistribution::TwoPoint { a: 2.0, b: -1.0, prob: 0.3 }.support(),
            (-1.0, 2.0)
        );
    }

    #[test]
    fn point_mass_samples_constant() {
        let cfg = sample_configuration(
            &SiteDistribution::PointMass { value: 0.25 },
            line_index(-5, 5),
            StreamKey::new(1, 0),
        );
        assert!(cfg.values().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn uniform_mean_over_many_draws() {
        let cfg = sample_configuration(
            &SiteDistribution::Uniform { lo: 0.0, hi: 1.0 },
            line_index(0, 99_999),
            StreamKey::new(42, 7),
        );
        let mean = cfg.values().iter().sum::<f64>() / cfg.values().len() as f64;
        assert!((mean - 0.5).abs() < 0.005, "{mean}");
        assert!(cfg.values().iter().all(|v| (0.0..1.0).contains(v)));
    }

    #[test]
    fn sampling_is_deterministic_and_order_free() {
        let dist = SiteDistribution::Uniform { lo: -1.0, hi: 2.0 };
        let a = sample_configuration(&dist, line_index(-20, 20), StreamKey::new(9, 3));
        let b = sample_configuration(&dist, line_index(-20, 20), StreamKey::new(9, 3));
        assert_eq!(a, b);
        // a sub-index set sees the same values at shared coordinates
        let c = sample_configuration(&dist, line_index(0, 5), StreamKey::new(9, 3));
        for (n, v) in c.iter() {
            assert_eq!(a.get(n), Some(v));
        }
        let other = sample_configuration(&dist, line_index(-20, 20), StreamKey::new(9, 4));
        assert_ne!(a.values(), other.values());
    }

    #[test]
    fn coordinates_are_uncorrelated() {
        let dist = SiteDistribution::Uniform { lo: 0.0, hi: 1.0 };
        let idx = line_index(0, 1);
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for s in 0..10_000 {
            let c = sample_configuration(&dist, Arc::clone(&idx), StreamKey::new(5, s));
            xs.push(c.values()[0]);
            ys.push(c.values()[1]);
        }
        let r = crate::stats::correlation(&xs, &ys);
        assert!(r.abs() < 4.0 / 100.0, "{r}");
    }

    #[test]
    fn indicator_profiles() {
        assert_eq!(SingleSite::indicator(1, 1).profile().len(), 1);
        let u2 = SingleSite::indicator(1, 2);
        let offs: Vec<i64> = u2.profile().iter().map(|e| e.0 .0[0]).collect();
        assert_eq!(offs, vec![-1, 0]);
        assert_eq!(SingleSite::indicator(2, 3).profile().len(), 9);
        assert_eq!(SingleSite::indicator(2, 3).sign(), SignTag::Nonnegative);
        assert!(SingleSite::from_profile(1, 1, 0.5, vec![(MeshPoint([1, 0, 0]), 1.0)]).is_err());
    }

    #[test]
    fn single_active_coupling() {
        let idx = line_index(-3, 3);
        let mut values = vec![0.0; 7];
        values[4] = 0.8; // n = 1
        let cfg = sample_configuration(&SiteDistribution::PointMass { value: 0.0 }, idx, StreamKey::new(0, 0))
            .with_values(values);
        let spec = BoxSpec::new(1, 6, 1, BoundaryCondition::Dirichlet).unwrap();
        let sites = build_box(&spec).unwrap();
        let v = alloy_potential(&cfg, &SingleSite::indicator(1, 1), &sites).unwrap();
        for (k, val) in v.iter() {
            assert_eq!(*val, if k.0[0] == 1 { 0.8 } else { 0.0 });
        }
    }

    #[test]
    fn overlapping_translates_sum_pointwise() {
        let u = SingleSite::from_profile(
            1,
            2,
            1.0,
            vec![
                (MeshPoint([-2, 0, 0]), 0.5),
                (MeshPoint([-1, 0, 0]), 1.0),
                (MeshPoint([0, 0, 0]), 2.0),
                (MeshPoint([1, 0, 0]), -0.75),
                (MeshPoint([2, 0, 0]), 0.25),
            ],
        )
        .unwrap();
        let spec = BoxSpec::new(1, 6, 2, BoundaryCondition::Dirichlet).unwrap();
        let sites = build_box(&spec).unwrap();
        let idx = Arc::new(index_set(&spec.region(), u.radius));
        let cfg = sample_configuration(&SiteDistribution::Uniform { lo: -1.0, hi: 1.0 }, idx, StreamKey::new(3, 1));
        let v = alloy_potential(&cfg, &u, &sites).unwrap();
        // brute force: loop over every coupling and every site
        for k in &sites {
            let x = k.0[0] as f64 / 2.0;
            let mut s = 0.0;
            for (n, w) in cfg.iter() {
                let off = ((x - n.0[0] as f64) * 2.0).round() as i64;
                s += w * u.value_at(&MeshPoint([off, 0, 0]));
            }
            assert!((v.get(k).unwrap() - s).abs() < 1e-14);
        }
    }

    #[test]
    fn full_cover_gives_constant_potential() {
        let spec = BoxSpec::new(2, 5, 2, BoundaryCondition::Dirichlet).unwrap();
        let sites = build_box(&spec).unwrap();
        let u = SingleSite::indicator(2, 2);
        let idx = Arc::new(index_set(&spec.region(), u.radius));
        let cfg = sample_configuration(&SiteDistribution::PointMass { value: 1.5 }, idx, StreamKey::new(0, 0));
        let v = alloy_potential(&cfg, &u, &sites).unwrap();
        assert!(v.iter().all(|(_, x)| *x == 1.5));
    }

    #[test]
    fn coverage_error_names_point() {
        let spec = BoxSpec::new(1, 6, 1, BoundaryCondition::Dirichlet).unwrap();
        let sites = build_box(&spec).unwrap();
        let cfg = sample_configuration(&SiteDistribution::PointMass { value: 1.0 }, line_index(-1, 1), StreamKey::new(0, 0));
        let err = alloy_potential(&cfg, &SingleSite::indicator(1, 1), &sites).unwrap_err();
        assert!(matches!(err, DisorderError::Coverage(LatticePoint([-2, 0, 0]), _)));
    }

    #[test]
    fn sup_bound_examples() {
        let ind = SingleSite::indicator(1, 1);
        assert_eq!(sup_bound(&SiteDistribution::PointMass { value: 0.0 }, &ind), 0.0);
        assert_eq!(sup_bound(&SiteDistribution::Uniform { lo: 0.0, hi: 1.0 }, &ind), 1.0);
        let two = SingleSite::from_profile(
            1,
            1,
            1.0,
            vec![(MeshPoint([0, 0, 0]), 1.0), (MeshPoint([1, 0, 0]), 1.0)],
        )
        .unwrap();
        assert_eq!(sup_bound(&SiteDistribution::Uniform { lo: 0.0, hi: 1.0 }, &two), 2.0);
        assert_eq!(sup_bound(&SiteDistribution::Uniform { lo: -3.0, hi: 1.0 }, &ind), 3.0);
    }

    #[test]
    fn scale_coordinate_cases() {
        let cfg = sample_configuration(
            &SiteDistribution::Uniform { lo: 0.5, hi: 1.0 },
            line_index(-3, 3),
            StreamKey::new(8, 8),
        );
        let k = LatticePoint([2, 0, 0]);
        assert_eq!(scale_coordinate(&cfg, &k, 1.0).unwrap(), cfg);
        let z = scale_coordinate(&cfg, &k, 0.0).unwrap();
        assert_eq!(z.get(&k), Some(0.0));
        assert!(scale_coordinate(&cfg, &LatticePoint([9, 0, 0]), 0.5).is_err());

        let spec = BoxSpec::new(1, 6, 1, BoundaryCondition::Dirichlet).unwrap();
        let sites = build_box(&spec).unwrap();
        let u = SingleSite::indicator(1, 1);
        let pot = |t| alloy_potential(&scale_coordinate(&cfg, &k, t).unwrap(), &u, &sites).unwrap();
        let (p0, ph, p1) = (pot(0.0), pot(0.5), pot(1.0));
        for k in &sites {
            let mid = 0.5 * (p0.get(k).unwrap() + p1.get(k).unwrap());
            assert!((ph.get(k).unwrap() - mid).abs() < 1e-15);
        }
    }

    #[test]
    fn resample_respects_mask() {
        let dist = SiteDistribution::Uniform { lo: 0.0, hi: 1.0 };
        let cfg = sample_configuration(&dist, line_index(-5, 5), StreamKey::new(1, 1));
        let same = conditional_resample(&cfg, &ConditioningMask::Everything, StreamKey::new(2, 2));
        assert_eq!(same, cfg);
        let half = conditional_resample(
            &cfg,
            &ConditioningMask::HalfSpace { axis: 0, max: 0 },
            StreamKey::new(2, 2),
        );
        let m3 = LatticePoint([-3, 0, 0]);
        let p2 = LatticePoint([2, 0, 0]);
        assert_eq!(half.get(&m3), cfg.get(&m3));
        assert_ne!(half.get(&p2), cfg.get(&p2));
    }

    #[test]
    fn unmasked_resample_matches_direct_sampling() {
        let dist = SiteDistribution::Uniform { lo: -1.0, hi: 3.0 };
        let idx = line_index(0, 1999);
        let base = sample_configuration(&dist, Arc::clone(&idx), StreamKey::new(10, 0));
        let fresh = conditional_resample(&base, &ConditioningMask::Nothing, StreamKey::new(11, 5));
        let direct = sample_configuration(&dist, idx, StreamKey::new(12, 0));
        let (_, p) = two_sample_ks(fresh.values(), direct.values());
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn staircase_masks_differ_only_at_ones() {
        for d in 1..=3_usize {
            let hi = ConditioningMask::through_ones(d);
            let lo = ConditioningMask::before_ones(d);
            let reach = 4_i64;
            let span = (2 * reach + 1) as usize;
            for idx in 0..span.pow(d as u32) {
                let mut n = [0_i64; MAX_DIM];
                let mut rest = idx;
                for c in n.iter_mut().take(d) {
                    *c = (rest % span) as i64 - reach;
                    rest /= span;
                }
                let n = LatticePoint(n);
                let differs = hi.contains(&n) != lo.contains(&n);
                assert_eq!(differs, n == LatticePoint::ones(d), "d = {d}, n = {n:?}");
                if lo.contains(&n) {
                    assert!(hi.contains(&n));
                }
            }
        }
        // the d = 1 masks are the half-lines n <= 1 and n <= 0
        assert!(ConditioningMask::before_ones(1).contains(&LatticePoint([0, 0, 0])));
        assert!(!ConditioningMask::before_ones(1).contains(&LatticePoint([1, 0, 0])));
    }

    #[test]
    fn translation_moves_couplings() {
        let dist = SiteDistribution::Uniform { lo: 0.0, hi: 1.0 };
        let idx = Arc::new(index_set(&Region::cube(1, 6.0), 0.5));
        let cfg = sample_configuration(&dist, idx, StreamKey::new(4, 4));
        let m = LatticePoint([3, 0, 0]);
        let t = cfg.translate(&m);
        for (n, v) in cfg.iter() {
            assert_eq!(t.get(&n.add(&m)), Some(v));
        }
    }
}
