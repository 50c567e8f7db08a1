//! Boxes, sup-norm shells, the box-annuli decomposition and disorder index sets.
//!
//! Physical positions live on a mesh of spacing `h = 1/q`; a [`MeshPoint`] holds the
//! integer coordinates `k` of the position `k/q`. Lattice points `n ∈ ℤ^d` (the labels of
//! the disorder couplings) are [`LatticePoint`]s. Unused trailing coordinates are zero.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAX_DIM: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid geometry: {0}")]
    Invalid(String),
    #[error("invalid geometry: region {region} at k = {k}: {reason}")]
    Shell {
        region: &'static str,
        k: u32,
        reason: String,
    },
}

/// Integer mesh coordinates; the physical position is `k / q`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MeshPoint(pub [i64; MAX_DIM]);

/// A point of the integer lattice `ℤ^d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LatticePoint(pub [i64; MAX_DIM]);

impl MeshPoint {
    pub fn position(&self, dim: usize, refinement: u32) -> [f64; MAX_DIM] {
        let q = refinement as f64;
        let mut x = [0.0; MAX_DIM];
        for i in 0..dim {
            x[i] = self.0[i] as f64 / q;
        }
        x
    }

    pub fn offset(&self, axis: usize, step: i64) -> MeshPoint {
        let mut k = self.0;
        k[axis] += step;
        MeshPoint(k)
    }
}

impl LatticePoint {
    pub fn ones(dim: usize) -> LatticePoint {
        let mut n = [0; MAX_DIM];
        n[..dim].fill(1);
        LatticePoint(n)
    }

    pub fn to_mesh(&self, refinement: u32) -> MeshPoint {
        let q = refinement as i64;
        MeshPoint([self.0[0] * q, self.0[1] * q, self.0[2] * q])
    }

    pub fn add(&self, other: &LatticePoint) -> LatticePoint {
        LatticePoint([
            self.0[0] + other.0[0],
            self.0[1] + other.0[1],
            self.0[2] + other.0[2],
        ])
    }

    pub fn sub(&self, other: &LatticePoint) -> LatticePoint {
        LatticePoint([
            self.0[0] - other.0[0],
            self.0[1] - other.0[1],
            self.0[2] - other.0[2],
        ])
    }
}

pub fn sup_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryCondition {
    Dirichlet,
    Neumann,
}

/// The open cube `{ |x_i - c_i| < L/2 }` sampled on the mesh `(1/q) ℤ^d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub dim: usize,
    pub side: u32,
    pub refinement: u32,
    pub bc: BoundaryCondition,
    /// Integer lattice translation of the box centre; zero for the boxes `Λ_L`.
    #[serde(default = "zero_center")]
    pub center: LatticePoint,
}

fn zero_center() -> LatticePoint {
    LatticePoint([0; MAX_DIM])
}

impl BoxSpec {
    pub fn new(
        dim: usize,
        side: u32,
        refinement: u32,
        bc: BoundaryCondition,
    ) -> Result<Self, GeometryError> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(GeometryError::Invalid(format!(
                "dimension {dim} outside 1..=3"
            )));
        }
        if side < 2 {
            return Err(GeometryError::Invalid(format!("side length {side} < 2")));
        }
        if refinement < 1 {
            return Err(GeometryError::Invalid("mesh refinement q must be >= 1".into()));
        }
        Ok(BoxSpec {
            dim,
            side,
            refinement,
            bc,
            center: zero_center(),
        })
    }

    pub fn with_bc(mut self, bc: BoundaryCondition) -> Self {
        self.bc = bc;
        self
    }

    pub fn with_side(mut self, side: u32) -> Self {
        self.side = side;
        self
    }

    /// The same box shifted by the lattice vector `m`.
    pub fn translated(&self, m: LatticePoint) -> Self {
        let mut out = *self;
        out.center = self.center.add(&m);
        out
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.refinement as f64
    }

    /// Lebesgue volume `L^d`.
    pub fn volume(&self) -> f64 {
        (self.side as f64).powi(self.dim as i32)
    }

    /// The box as an origin-centred [`Region`] (ignores `center`).
    pub fn region(&self) -> Region {
        Region::cube(self.dim, self.side as f64)
    }

    pub fn contains(&self, k: &MeshPoint) -> bool {
        let q = self.refinement as i64;
        let ql = q * self.side as i64;
        (0..self.dim).all(|i| 2 * (k.0[i] - q * self.center.0[i]).abs() < ql)
    }
}

/// Enumerates the mesh sites of the box in lexicographic order of their integer
/// coordinates (axis 0 most significant).
pub fn build_box(spec: &BoxSpec) -> Result<Vec<MeshPoint>, GeometryError> {
    let q = spec.refinement as i64;
    let ql = q * spec.side as i64;
    // largest k with 2|k| < qL
    let reach = (ql - 1) / 2;
    if reach < 0 {
        return Err(GeometryError::Invalid(format!(
            "box of side {} has no sites at refinement {}",
            spec.side, spec.refinement
        )));
    }
    let mut ranges = [(0_i64, 0_i64); MAX_DIM];
    for (i, r) in ranges.iter_mut().enumerate().take(spec.dim) {
        let c = q * spec.center.0[i];
        *r = (c - reach, c + reach);
    }
    let mut sites = Vec::new();
    let mut k = [ranges[0].0, ranges[1].0, ranges[2].0];
    loop {
        sites.push(MeshPoint(k));
        // odometer increment, last axis fastest
        let mut axis = spec.dim;
        loop {
            if axis == 0 {
                return Ok(sites);
            }
            axis -= 1;
            if k[axis] < ranges[axis].1 {
                k[axis] += 1;
                break;
            }
            k[axis] = ranges[axis].0;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    /// `‖x‖_∞ < half_side`
    Cube { half_side: f64 },
    /// `inner < ‖x‖_∞ < outer`
    Shell { inner: f64, outer: f64 },
}

/// An origin-centred sup-norm region: a full cube or a shell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub dim: usize,
    #[serde(flatten)]
    pub shape: Shape,
}

impl Region {
    pub fn cube(dim: usize, side: f64) -> Region {
        Region {
            dim,
            shape: Shape::Cube {
                half_side: side / 2.0,
            },
        }
    }

    pub fn shell(dim: usize, inner: f64, outer: f64) -> Result<Region, GeometryError> {
        if !(inner >= 0.0 && outer > inner && outer.is_finite()) {
            return Err(GeometryError::Invalid(format!(
                "shell radii ({inner}, {outer}) must satisfy 0 <= inner < outer"
            )));
        }
        Ok(Region {
            dim,
            shape: Shape::Shell { inner, outer },
        })
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let r = sup_norm(&x[..self.dim]);
        match self.shape {
            Shape::Cube { half_side } => r < half_side,
            Shape::Shell { inner, outer } => inner < r && r < outer,
        }
    }

    pub fn contains_mesh(&self, k: &MeshPoint, refinement: u32) -> bool {
        self.contains(&k.position(self.dim, refinement))
    }

    pub fn is_empty(&self) -> bool {
        match self.shape {
            Shape::Cube { half_side } => half_side <= 0.0,
            Shape::Shell { inner, outer } => outer <= inner,
        }
    }

    pub fn volume(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let d = self.dim as i32;
        match self.shape {
            Shape::Cube { half_side } => (2.0 * half_side).powi(d),
            Shape::Shell { inner, outer } => (2.0 * outer).powi(d) - (2.0 * inner).powi(d),
        }
    }

    pub fn inner_radius(&self) -> f64 {
        match self.shape {
            Shape::Cube { .. } => 0.0,
            Shape::Shell { inner, .. } => inner,
        }
    }

    pub fn outer_radius(&self) -> f64 {
        match self.shape {
            Shape::Cube { half_side } => half_side,
            Shape::Shell { outer, .. } => outer,
        }
    }

    /// Range `[min, max]` of `‖x‖_∞` over the closed cube of sup-radius `radius` around `n`.
    fn norm_range(n: &LatticePoint, dim: usize, radius: f64) -> (f64, f64) {
        let mut lo = 0.0_f64;
        let mut hi = 0.0_f64;
        for i in 0..dim {
            let c = (n.0[i] as f64).abs();
            lo = lo.max((c - radius).max(0.0));
            hi = hi.max(c + radius);
        }
        (lo, hi)
    }

    fn meets_cube(&self, n: &LatticePoint, radius: f64) -> bool {
        if self.is_empty() {
            return false;
        }
        let (lo, hi) = Self::norm_range(n, self.dim, radius);
        match self.shape {
            Shape::Cube { half_side } => lo < half_side,
            Shape::Shell { inner, outer } => lo < outer && hi > inner,
        }
    }

    fn holds_cube(&self, n: &LatticePoint, radius: f64) -> bool {
        if self.is_empty() {
            return false;
        }
        let (lo, hi) = Self::norm_range(n, self.dim, radius);
        match self.shape {
            Shape::Cube { half_side } => hi < half_side,
            Shape::Shell { inner, outer } => hi < outer && lo > inner,
        }
    }
}

/// The `ℓ`-interior: shells shrink by `ℓ` on both sides, cubes lose `ℓ` from each face.
/// The result may be empty; check [`Region::is_empty`].
pub fn interior(region: &Region, ell: f64) -> Region {
    let shape = match region.shape {
        Shape::Cube { half_side } => Shape::Cube {
            half_side: half_side - ell,
        },
        Shape::Shell { inner, outer } => Shape::Shell {
            inner: inner + ell,
            outer: outer - ell,
        },
    };
    Region {
        dim: region.dim,
        shape,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exponents {
    pub eps: f64,
    pub delta: f64,
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for Exponents {
    fn default() -> Self {
        Exponents {
            eps: 0.75,
            delta: 0.25,
            gamma: 0.5,
            alpha: 0.5,
        }
    }
}

impl Exponents {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let Exponents {
            eps,
            delta,
            gamma,
            alpha,
        } = *self;
        if !(eps > delta && delta > 0.0) {
            return Err(GeometryError::Invalid(format!(
                "exponents need eps > delta > 0, got eps = {eps}, delta = {delta}"
            )));
        }
        if (eps + delta - 1.0).abs() > 1e-12 {
            return Err(GeometryError::Invalid(format!(
                "exponents need eps + delta = 1, got {}",
                eps + delta
            )));
        }
        for (name, v) in [("gamma", gamma), ("alpha", alpha)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(GeometryError::Invalid(format!("{name} = {v} not in (0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "k", rename_all = "lowercase")]
pub enum RegionLabel {
    Core,
    Bulk(u32),
    Separator(u32),
    Outer,
    /// Shell between the last separator and the outer remainder; present when
    /// `r_L M_L < L/2`.
    Gap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelledRegion {
    pub label: RegionLabel,
    pub region: Region,
}

/// The box-annuli decomposition of `Λ_L`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionPlan {
    pub dim: usize,
    pub side: u32,
    pub exponents: Exponents,
    pub support_radius: f64,
    pub m_l: f64,
    pub r_l: u32,
    pub ell_l: f64,
    pub ell_tilde: f64,
    pub regions: Vec<LabelledRegion>,
}

/// `⌊x⌋` tolerant to `powf` landing a hair below an exact integer.
fn robust_floor(x: f64) -> f64 {
    (x * (1.0 + 1e-12) + 1e-12).floor()
}

pub fn annuli_plan(
    dim: usize,
    side: u32,
    exponents: Exponents,
    support_radius: f64,
) -> Result<DecompositionPlan, GeometryError> {
    exponents.validate()?;
    if !(support_radius > 0.0) {
        return Err(GeometryError::Invalid(format!(
            "support radius {support_radius} must be positive"
        )));
    }
    if !(1..=MAX_DIM).contains(&dim) {
        return Err(GeometryError::Invalid(format!("dimension {dim} outside 1..=3")));
    }
    let l = side as f64;
    let m_l = 0.5 * robust_floor(l.powf(exponents.eps));
    let r_l = robust_floor(l.powf(exponents.delta)) as u32;
    let r3 = 3.0 * support_radius;
    if r_l < 2 {
        return Err(GeometryError::Invalid(format!(
            "r_L = {r_l} < 2 at L = {side}; the decomposition needs at least one bulk annulus"
        )));
    }

    let mut regions = vec![LabelledRegion {
        label: RegionLabel::Core,
        region: Region::cube(dim, 2.0 * r3),
    }];
    let mut last_outer = r3;
    for k in 1..r_l {
        let kf = k as f64;
        let b_in = (kf - 1.0) * m_l + kf * r3;
        let b_out = kf * m_l + (kf - 1.0) * r3;
        let s_out = kf * m_l + (kf + 1.0) * r3;
        if !(b_out > b_in) {
            return Err(GeometryError::Shell {
                region: "bulk",
                k,
                reason: format!("radii ({b_in}, {b_out}) not increasing (M_L = {m_l}, 3R = {r3})"),
            });
        }
        if b_in < last_outer {
            return Err(GeometryError::Shell {
                region: "bulk",
                k,
                reason: format!("inner radius {b_in} overlaps previous radius {last_outer}"),
            });
        }
        regions.push(LabelledRegion {
            label: RegionLabel::Bulk(k),
            region: Region::shell(dim, b_in, b_out)?,
        });
        regions.push(LabelledRegion {
            label: RegionLabel::Separator(k),
            region: Region::shell(dim, b_out, s_out)?,
        });
        last_outer = s_out;
    }
    let half = l / 2.0;
    let o_in = half - (m_l - r_l as f64 * r3);
    if !(o_in < half) {
        return Err(GeometryError::Shell {
            region: "outer",
            k: r_l,
            reason: format!("M_L - 3 r_L R = {} is not positive", m_l - r_l as f64 * r3),
        });
    }
    if o_in < last_outer {
        return Err(GeometryError::Shell {
            region: "outer",
            k: r_l,
            reason: format!("inner radius {o_in} overlaps separator radius {last_outer}"),
        });
    }
    if o_in > last_outer {
        regions.push(LabelledRegion {
            label: RegionLabel::Gap,
            region: Region::shell(dim, last_outer, o_in)?,
        });
    }
    regions.push(LabelledRegion {
        label: RegionLabel::Outer,
        region: Region::shell(dim, o_in, half)?,
    });

    Ok(DecompositionPlan {
        dim,
        side,
        exponents,
        support_radius,
        m_l,
        r_l,
        ell_l: m_l.powf(exponents.gamma),
        ell_tilde: l.powf(exponents.alpha),
        regions,
    })
}

impl DecompositionPlan {
    pub fn region(&self, label: RegionLabel) -> Option<&Region> {
        self.regions
            .iter()
            .find(|r| r.label == label)
            .map(|r| &r.region)
    }

    pub fn bulk(&self) -> impl Iterator<Item = (u32, &Region)> {
        self.regions.iter().filter_map(|r| match r.label {
            RegionLabel::Bulk(k) => Some((k, &r.region)),
            _ => None,
        })
    }

    /// All shell boundaries in increasing order, ending at `L/2`.
    pub fn radii(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::with_capacity(self.regions.len() + 1);
        for r in &self.regions {
            if out.last().is_none_or(|&v| v != r.region.inner_radius()) {
                out.push(r.region.inner_radius());
            }
            out.push(r.region.outer_radius());
        }
        out
    }

    /// The `ℓ_L`-interiors of the bulk, separator and outer regions.
    pub fn interiors(&self) -> Vec<LabelledRegion> {
        self.regions
            .iter()
            .filter(|r| {
                matches!(
                    r.label,
                    RegionLabel::Bulk(_) | RegionLabel::Separator(_) | RegionLabel::Outer
                )
            })
            .map(|r| LabelledRegion {
                label: r.label,
                region: interior(&r.region, self.ell_l),
            })
            .collect()
    }

    /// Index of the region that contains `x`, or `None` for points on a shared boundary
    /// (or outside `Λ_L`).
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let mut found = None;
        for (i, r) in self.regions.iter().enumerate() {
            if r.region.contains(x) {
                debug_assert!(found.is_none(), "regions overlap at {x:?}");
                found = Some(i);
            }
        }
        found
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexProvenance {
    pub region: Option<Region>,
    pub support_radius: f64,
    /// Set for the interior variant: the `ℓ` used.
    pub interior: Option<f64>,
}

/// A finite set of lattice points, sorted lexicographically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexSet {
    pub dim: usize,
    points: Vec<LatticePoint>,
    pub provenance: IndexProvenance,
}

impl IndexSet {
    pub fn from_points(dim: usize, mut points: Vec<LatticePoint>, provenance: IndexProvenance) -> Self {
        points.sort_unstable();
        points.dedup();
        IndexSet {
            dim,
            points,
            provenance,
        }
    }

    pub fn points(&self) -> &[LatticePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn position(&self, n: &LatticePoint) -> Option<usize> {
        self.points.binary_search(n).ok()
    }

    pub fn contains(&self, n: &LatticePoint) -> bool {
        self.position(n).is_some()
    }

    pub fn union(&self, other: &IndexSet) -> IndexSet {
        let mut pts = self.points.clone();
        pts.extend_from_slice(&other.points);
        IndexSet::from_points(self.dim, pts, self.provenance.clone())
    }

    pub fn translated(&self, m: &LatticePoint) -> IndexSet {
        let pts = self.points.iter().map(|n| n.add(m)).collect();
        IndexSet::from_points(self.dim, pts, self.provenance.clone())
    }

    /// Short stable hash of the point list.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.dim as u64).to_le_bytes());
        for n in &self.points {
            for c in &n.0[..self.dim] {
                hasher.update(c.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn lattice_candidates(dim: usize, reach: i64) -> impl Iterator<Item = LatticePoint> {
    let span = (2 * reach + 1) as usize;
    let total = span.pow(dim as u32);
    (0..total).map(move |mut idx| {
        let mut n = [0_i64; MAX_DIM];
        for axis in (0..dim).rev() {
            n[axis] = (idx % span) as i64 - reach;
            idx /= span;
        }
        LatticePoint(n)
    })
}

/// All `n ∈ ℤ^d` whose closed sup-norm ball of radius `support_radius` meets `region`.
pub fn index_set(region: &Region, support_radius: f64) -> IndexSet {
    let provenance = IndexProvenance {
        region: Some(*region),
        support_radius,
        interior: None,
    };
    if region.is_empty() {
        return IndexSet::from_points(region.dim, Vec::new(), provenance);
    }
    let reach = (region.outer_radius() + support_radius).floor() as i64 + 1;
    let pts = lattice_candidates(region.dim, reach)
        .filter(|n| region.meets_cube(n, support_radius))
        .collect();
    IndexSet::from_points(region.dim, pts, provenance)
}

/// All `n` whose support ball lies inside the `ℓ`-interior of `region`.
pub fn interior_index_set(region: &Region, support_radius: f64, ell: f64) -> IndexSet {
    let inner = interior(region, ell);
    let provenance = IndexProvenance {
        region: Some(*region),
        support_radius,
        interior: Some(ell),
    };
    if inner.is_empty() {
        return IndexSet::from_points(region.dim, Vec::new(), provenance);
    }
    let reach = inner.outer_radius().floor() as i64 + 1;
    let pts = lattice_candidates(region.dim, reach)
        .filter(|n| inner.holds_cube(n, support_radius))
        .collect();
    IndexSet::from_points(region.dim, pts, provenance)
}
