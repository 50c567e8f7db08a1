//! Discrete magnetic Schrödinger operators with Peierls phases in the symmetric gauge.
//!
//! Hopping convention: for nearest neighbours `x, y` the matrix entry is
//! `H[x][y] = -h^{-2} exp(-i θ(x, y))` with `θ(x, y) = A((x + y)/2) · (y - x)`. With this
//! sign the magnetic translations `(U_m φ)(x) = e^{iΨ_m(x)} φ(x - m)` intertwine the
//! operator on a box with the operator on the translated box and translated couplings.

use std::collections::BTreeMap;
use std::io::{self, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{build_box, BoundaryCondition, BoxSpec, GeometryError, MeshPoint, Region, MAX_DIM};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("magnetic field: {0}")]
    Field(String),
    #[error("sites {0:?} and {1:?} are not nearest neighbours")]
    NotNeighbours(MeshPoint, MeshPoint),
    #[error("potential has no value at site {0:?}")]
    MissingPotential(MeshPoint),
    #[error("translation {0:?} is not an integer lattice vector")]
    NonIntegerShift(Vec<f64>),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// A constant magnetic field, stored as the skew-symmetric matrix `B`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MagneticField {
    pub dim: usize,
    b: [[f64; MAX_DIM]; MAX_DIM],
}

impl MagneticField {
    pub fn new(dim: usize, rows: &[Vec<f64>]) -> Result<Self, OperatorError> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(OperatorError::Field(format!("dimension {dim} outside 1..=3")));
        }
        if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
            return Err(OperatorError::Field(format!("B must be {dim}x{dim}")));
        }
        let mut b = [[0.0; MAX_DIM]; MAX_DIM];
        for i in 0..dim {
            for j in 0..dim {
                let v = rows[i][j];
                if !v.is_finite() {
                    return Err(OperatorError::Field(format!("B[{i}][{j}] is not finite")));
                }
                b[i][j] = v;
            }
        }
        for i in 0..dim {
            for j in 0..dim {
                if b[i][j] != -b[j][i] {
                    return Err(OperatorError::Field(format!(
                        "B is not skew-symmetric: B[{i}][{j}] = {}, B[{j}][{i}] = {}",
                        b[i][j], b[j][i]
                    )));
                }
            }
        }
        Ok(MagneticField { dim, b })
    }

    pub fn zero(dim: usize) -> Self {
        MagneticField {
            dim,
            b: [[0.0; MAX_DIM]; MAX_DIM],
        }
    }

    /// Two-dimensional field with `B[0][1] = b`.
    pub fn planar(b: f64) -> Self {
        let mut m = [[0.0; MAX_DIM]; MAX_DIM];
        m[0][1] = b;
        m[1][0] = -b;
        MagneticField { dim: 2, b: m }
    }

    pub fn strength(&self, i: usize, j: usize) -> f64 {
        self.b[i][j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|i| self.b[i][..self.dim].to_vec()).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.b.iter().flatten().all(|&v| v == 0.0)
    }
}

/// `A(x) = ½ B x`.
pub fn vector_potential(x: &[f64], field: &MagneticField) -> [f64; MAX_DIM] {
    let mut a = [0.0; MAX_DIM];
    for (k, ak) in a.iter_mut().enumerate().take(field.dim) {
        *ak = 0.5 * (0..field.dim).map(|j| field.b[k][j] * x[j]).sum::<f64>();
    }
    a
}

/// Midpoint-rule line integral of `A` along the bond `x → y`.
pub fn peierls_phase(
    x: &MeshPoint,
    y: &MeshPoint,
    refinement: u32,
    field: &MagneticField,
) -> Result<f64, OperatorError> {
    let d = field.dim;
    let diff: Vec<i64> = (0..MAX_DIM).map(|i| y.0[i] - x.0[i]).collect();
    let l1: i64 = diff.iter().map(|v| v.abs()).sum();
    if l1 != 1 || diff[d..].iter().any(|&v| v != 0) {
        return Err(OperatorError::NotNeighbours(*x, *y));
    }
    Ok(bond_phase(x, y, refinement, field))
}

fn bond_phase(x: &MeshPoint, y: &MeshPoint, refinement: u32, field: &MagneticField) -> f64 {
    let d = field.dim;
    let q = refinement as f64;
    let mut mid = [0.0; MAX_DIM];
    for i in 0..d {
        mid[i] = 0.5 * (x.0[i] + y.0[i]) as f64 / q;
    }
    let a = vector_potential(&mid, field);
    (0..d).map(|i| a[i] * (y.0[i] - x.0[i]) as f64 / q).sum()
}

/// `Ψ_m(x) = ½ Σ_{j,k} (m_j - x_j) B_{k,j} m_k`.
pub fn translation_phase(m: &[f64], x: &[f64], field: &MagneticField) -> f64 {
    let d = field.dim;
    let mut s = 0.0;
    for j in 0..d {
        for k in 0..d {
            s += (m[j] - x[j]) * field.b[k][j] * m[k];
        }
    }
    0.5 * s
}

/// Applies `U_m`: the output lives on the sites shifted by `m` and carries the phase
/// `e^{iΨ_m(x)}` at each shifted site `x`.
pub fn magnetic_translate(
    v: &[Complex64],
    sites: &[MeshPoint],
    m: &[f64],
    refinement: u32,
    field: &MagneticField,
) -> Result<(Vec<MeshPoint>, Vec<Complex64>), OperatorError> {
    let d = field.dim;
    if m.len() != d {
        return Err(OperatorError::Dimension {
            expected: d,
            got: m.len(),
        });
    }
    if m.iter().any(|c| c.fract() != 0.0 || !c.is_finite()) {
        return Err(OperatorError::NonIntegerShift(m.to_vec()));
    }
    if v.len() != sites.len() {
        return Err(OperatorError::Dimension {
            expected: sites.len(),
            got: v.len(),
        });
    }
    let q = refinement as i64;
    let mut shifted = Vec::with_capacity(sites.len());
    let mut out = Vec::with_capacity(sites.len());
    for (k, amp) in sites.iter().zip(v) {
        let mut kk = k.0;
        for i in 0..d {
            kk[i] += q * m[i] as i64;
        }
        let xk = MeshPoint(kk);
        let phase = translation_phase(m, &xk.position(d, refinement), field);
        shifted.push(xk);
        out.push(amp * Complex64::from_polar(1.0, phase));
    }
    Ok((shifted, out))
}

/// Real values attached to mesh sites.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Potential {
    values: BTreeMap<MeshPoint, f64>,
}

impl Potential {
    pub fn new() -> Self {
        Potential::default()
    }

    pub fn constant(sites: &[MeshPoint], value: f64) -> Self {
        sites.iter().map(|k| (*k, value)).collect()
    }

    pub fn get(&self, k: &MeshPoint) -> Option<f64> {
        self.values.get(k).copied()
    }

    pub fn insert(&mut self, k: MeshPoint, v: f64) {
        self.values.insert(k, v);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MeshPoint, &f64)> {
        self.values.iter()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.values().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.values {
            for c in k.0 {
                h.update(c.to_le_bytes());
            }
            h.update(v.to_bits().to_le_bytes());
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl FromIterator<(MeshPoint, f64)> for Potential {
    fn from_iter<I: IntoIterator<Item = (MeshPoint, f64)>>(iter: I) -> Self {
        Potential {
            values: iter.into_iter().collect(),
        }
    }
}

/// An upper-triangular off-diagonal entry (`row < col`); the lower entry is its conjugate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hopping {
    pub row: usize,
    pub col: usize,
    pub value: Complex64,
}

/// Sparse Hermitian matrix of `H_{A,O}^X + V` on a finite set of mesh sites.
#[derive(Clone, Debug)]
pub struct DiscreteHamiltonian {
    pub dim: usize,
    pub refinement: u32,
    pub bc: BoundaryCondition,
    pub field: MagneticField,
    pub potential_id: String,
    sites: Vec<MeshPoint>,
    diagonal: Vec<f64>,
    hoppings: Vec<Hopping>,
}

/// Assembles the operator on every site of the box.
pub fn assemble(
    spec: &BoxSpec,
    field: &MagneticField,
    potential: &Potential,
) -> Result<DiscreteHamiltonian, OperatorError> {
    let sites = build_box(spec)?;
    assemble_sites(sites, spec.dim, spec.refinement, spec.bc, field, potential)
}

/// Assembles the restriction to the box sites that lie in `region`.
pub fn assemble_region(
    spec: &BoxSpec,
    region: &Region,
    bc: BoundaryCondition,
    field: &MagneticField,
    potential: &Potential,
) -> Result<DiscreteHamiltonian, OperatorError> {
    let sites: Vec<MeshPoint> = build_box(spec)?
        .into_iter()
        .filter(|k| region.contains_mesh(k, spec.refinement))
        .collect();
    assemble_sites(sites, spec.dim, spec.refinement, bc, field, potential)
}

/// Assembles on an arbitrary site set. Sites are sorted lexicographically first.
pub fn assemble_sites(
    mut sites: Vec<MeshPoint>,
    dim: usize,
    refinement: u32,
    bc: BoundaryCondition,
    field: &MagneticField,
    potential: &Potential,
) -> Result<DiscreteHamiltonian, OperatorError> {
    if field.dim != dim {
        return Err(OperatorError::Dimension {
            expected: dim,
            got: field.dim,
        });
    }
    sites.sort_unstable();
    sites.dedup();
    let h2inv = (refinement as f64).powi(2);
    let n = sites.len();
    let mut diagonal = Vec::with_capacity(n);
    let mut hoppings = Vec::new();
    let mut degree = vec![0_u32; n];
    for (i, k) in sites.iter().enumerate() {
        for axis in 0..dim {
            let y = k.offset(axis, 1);
            if let Ok(j) = sites.binary_search(&y) {
                let theta = bond_phase(k, &y, refinement, field);
                hoppings.push(Hopping {
                    row: i,
                    col: j,
                    value: Complex64::from_polar(h2inv, -theta) * -1.0,
                });
                degree[i] += 1;
                degree[j] += 1;
            }
        }
    }
    for (i, k) in sites.iter().enumerate() {
        let v = potential
            .get(k)
            .ok_or(OperatorError::MissingPotential(*k))?;
        let kinetic = match bc {
            BoundaryCondition::Dirichlet => 2.0 * dim as f64 * h2inv,
            BoundaryCondition::Neumann => degree[i] as f64 * h2inv,
        };
        diagonal.push(kinetic + v);
    }
    hoppings.sort_unstable_by_key(|h| (h.row, h.col));
    let potential_id = potential.fingerprint();
    Ok(DiscreteHamiltonian {
        dim,
        refinement,
        bc,
        field: *field,
        potential_id,
        sites,
        diagonal,
        hoppings,
    })
}

impl DiscreteHamiltonian {
    /// Diagonal matrix with the given sites and entries, no hopping. Mostly for tests.
    pub fn from_diagonal(dim: usize, sites: Vec<MeshPoint>, diagonal: Vec<f64>) -> Self {
        assert_eq!(sites.len(), diagonal.len());
        DiscreteHamiltonian {
            dim,
            refinement: 1,
            bc: BoundaryCondition::Dirichlet,
            field: MagneticField::zero(dim),
            potential_id: String::new(),
            sites,
            diagonal,
            hoppings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[MeshPoint] {
        &self.sites
    }

    pub fn site_index(&self, k: &MeshPoint) -> Option<usize> {
        self.sites.binary_search(k).ok()
    }

    pub fn position(&self, i: usize) -> [f64; MAX_DIM] {
        self.sites[i].position(self.dim, self.refinement)
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    pub fn hoppings(&self) -> &[Hopping] {
        &self.hoppings
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.refinement as f64
    }

    /// Largest `|i - j|` over nonzero entries.
    pub fn bandwidth(&self) -> usize {
        self.hoppings
            .iter()
            .map(|h| h.col - h.row)
            .max()
            .unwrap_or(0)
    }

    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        if i == j {
            return Complex64::new(self.diagonal[i], 0.0);
        }
        let (r, c, conj) = if i < j { (i, j, false) } else { (j, i, true) };
        match self
            .hoppings
            .binary_search_by_key(&(r, c), |h| (h.row, h.col))
        {
            Ok(pos) => {
                let v = self.hoppings[pos].value;
                if conj {
                    v.conj()
                } else {
                    v
                }
            }
            Err(_) => Complex64::new(0.0, 0.0),
        }
    }

    /// All nonzero entries `(row, col, value)` in row-major order.
    pub fn triplets(&self) -> Vec<(usize, usize, Complex64)> {
        let mut out: Vec<(usize, usize, Complex64)> = Vec::with_capacity(self.len() + 2 * self.hoppings.len());
        for (i, d) in self.diagonal.iter().enumerate() {
            out.push((i, i, Complex64::new(*d, 0.0)));
        }
        for h in &self.hoppings {
            out.push((h.row, h.col, h.value));
            out.push((h.col, h.row, h.value.conj()));
        }
        out.sort_unstable_by_key(|t| (t.0, t.1));
        out
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<Complex64> {
        let n = self.len();
        let mut m = nalgebra::DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
        for (r, c, v) in self.triplets() {
            m[(r, c)] = v;
        }
        m
    }

    /// `max |H_xy - conj(H_yx)|` over the stored pattern.
    pub fn hermiticity_residual(&self) -> f64 {
        let mut worst = 0.0_f64;
        for (r, c, v) in self.triplets() {
            worst = worst.max((v - self.entry(c, r).conj()).norm());
        }
        worst
    }

    /// `H + λ W` for a multiplication operator `W` given per site.
    pub fn with_diagonal_shift(&self, weights: &[f64], lambda: f64) -> DiscreteHamiltonian {
        assert_eq!(weights.len(), self.len());
        let mut out = self.clone();
        for (d, w) in out.diagonal.iter_mut().zip(weights) {
            *d += lambda * w;
        }
        out
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut y: Vec<Complex64> = self
            .diagonal
            .iter()
            .zip(x)
            .map(|(d, v)| v * *d)
            .collect();
        for h in &self.hoppings {
            y[h.row] += h.value * x[h.col];
            y[h.col] += h.value.conj() * x[h.row];
        }
        y
    }

    /// Gershgorin-style bound `max_i Σ_j |H_ij|`; an upper bound on the operator norm.
    pub fn norm_bound(&self) -> f64 {
        let mut rows: Vec<f64> = self.diagonal.iter().map(|d| d.abs()).collect();
        for h in &self.hoppings {
            rows[h.row] += h.value.norm();
            rows[h.col] += h.value.norm();
        }
        rows.into_iter().fold(0.0, f64::max)
    }

    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (r, c, v) in self.triplets() {
            h.update((r as u64).to_le_bytes());
            h.update((c as u64).to_le_bytes());
            h.update(v.re.to_bits().to_le_bytes());
            h.update(v.im.to_bits().to_le_bytes());
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Plaquette phase `Σ θ` around `x → x+h e_j → x+h e_i+h e_j → x+h e_i → x`, read back
    /// from the assembled entries. Equals `B_ij h²` for the symmetric gauge.
    pub fn plaquette_flux(&self, corner: usize, i: usize, j: usize) -> Option<f64> {
        let x = self.sites[corner];
        let loop_pts = [
            x,
            x.offset(j, 1),
            x.offset(j, 1).offset(i, 1),
            x.offset(i, 1),
            x,
        ];
        let idx: Option<Vec<usize>> = loop_pts.iter().map(|k| self.site_index(k)).collect();
        let idx = idx?;
        let h2 = self.spacing().powi(2);
        let mut prod = Complex64::new(1.0, 0.0);
        for w in idx.windows(2) {
            // H_ab = -h^{-2} e^{-iθ(a,b)}  =>  e^{iθ(a,b)} = conj(-h² H_ab)
            prod *= (self.entry(w[0], w[1]) * -h2).conj();
        }
        Some(prod.arg())
    }

    /// Writes the documented triplet format: one `row col re im` line per nonzero entry,
    /// zero-based indices, row-major order.
    pub fn write_triplets<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "# n = {}", self.len())?;
        for (r, c, v) in self.triplets() {
            writeln!(out, "{r} {c} {:e} {:e}", v.re, v.im)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundaryCondition::{Dirichlet, Neumann};

    fn flat(spec: &BoxSpec) -> Potential {
        Potential::constant(&build_box(spec).unwrap(), 0.0)
    }

    #[test]
    fn field_must_be_skew() {
        assert!(MagneticField::new(2, &[vec![0.0, 1.0], vec![-1.0, 0.0]]).is_ok());
        assert!(MagneticField::new(2, &[vec![0.0, 1.0], vec![-0.5, 0.0]]).is_err());
        assert!(MagneticField::new(2, &[vec![0.1, 0.0], vec![0.0, 0.0]]).is_err());
    }

    #[test]
    fn vector_potential_examples() {
        let z = MagneticField::zero(3);
        assert_eq!(vector_potential(&[1.0, 2.0, 3.0], &z), [0.0; 3]);
        let f = MagneticField::planar(0.7);
        let a = vector_potential(&[1.0, 0.0], &f);
        assert_eq!(a[0], 0.0);
        assert_eq!(a[1], -0.35);
        let x = [0.3, -1.2];
        let ap = vector_potential(&x, &f);
        let am = vector_potential(&[-0.3, 1.2], &f);
        assert_eq!(ap[0], -am[0]);
        assert_eq!(ap[1], -am[1]);
    }

    #[test]
    fn peierls_phase_properties() {
        let f = MagneticField::planar(1.3);
        let x = MeshPoint([2, -1, 0]);
        let y = MeshPoint([2, 0, 0]);
        let t = peierls_phase(&x, &y, 2, &f).unwrap();
        let back = peierls_phase(&y, &x, 2, &f).unwrap();
        assert_eq!(t + back, 0.0);
        assert_eq!(peierls_phase(&x, &y, 2, &MagneticField::zero(2)).unwrap(), 0.0);
        assert!(peierls_phase(&x, &MeshPoint([3, 0, 0]), 2, &f).is_err());
        assert!(peierls_phase(&x, &x, 2, &f).is_err());
    }

    #[test]
    fn plaquette_sum_of_phases() {
        let b = 0.9;
        let f = MagneticField::planar(b);
        for q in [1_u32, 3] {
            let h = 1.0 / q as f64;
            let x = MeshPoint([4, -7, 0]);
            let pts = [x, x.offset(1, 1), x.offset(1, 1).offset(0, 1), x.offset(0, 1), x];
            let s: f64 = pts
                .windows(2)
                .map(|w| peierls_phase(&w[0], &w[1], q, &f).unwrap())
                .sum();
            assert!((s - b * h * h).abs() < 1e-14, "{s}");
        }
    }

    #[test]
    fn free_dirichlet_and_neumann_stencils() {
        let spec = BoxSpec::new(1, 5, 1, Dirichlet).unwrap();
        let h = assemble(&spec, &MagneticField::zero(1), &flat(&spec)).unwrap();
        assert_eq!(h.len(), 5);
        assert_eq!(h.diagonal(), &[2.0; 5]);
        assert_eq!(h.hoppings().len(), 4);
        assert!(h.hoppings().iter().all(|e| e.value == Complex64::new(-1.0, 0.0) && e.col == e.row + 1));
        let hn = assemble(&spec.with_bc(Neumann), &MagneticField::zero(1), &flat(&spec)).unwrap();
        assert_eq!(hn.diagonal(), &[1.0, 2.0, 2.0, 2.0, 1.0]);
    }

    #[test]
    fn mesh_scaling_of_entries() {
        let spec = BoxSpec::new(2, 3, 2, Neumann).unwrap();
        let f = MagneticField::planar(0.4);
        let h = assemble(&spec, &f, &flat(&spec)).unwrap();
        assert!(h.hoppings().iter().all(|e| (e.value.norm() - 4.0).abs() < 1e-14));
        let corner = h.site_index(&MeshPoint([-2, -2, 0])).unwrap();
        assert_eq!(h.diagonal()[corner], 8.0);
        assert_eq!(h.hermiticity_residual(), 0.0);
        let flux = h.plaquette_flux(corner, 0, 1).unwrap();
        assert!((flux - 0.4 * 0.25).abs() < 1e-12);
    }

    #[test]
    fn missing_potential_names_site() {
        let spec = BoxSpec::new(1, 4, 1, Dirichlet).unwrap();
        let mut pot = flat(&spec);
        pot = pot
            .iter()
            .filter(|(k, _)| k.0[0] != 1)
            .map(|(k, v)| (*k, *v))
            .collect();
        let err = assemble(&spec, &MagneticField::zero(1), &pot).unwrap_err();
        assert_eq!(err, OperatorError::MissingPotential(MeshPoint([1, 0, 0])));
    }

    #[test]
    fn translation_phase_matches_vector_potential() {
        let f = MagneticField::new(
            3,
            &[vec![0.0, 0.3, -1.1], vec![-0.3, 0.0, 0.5], vec![1.1, -0.5, 0.0]],
        )
        .unwrap();
        for (m, x) in [
            ([1.0, -2.0, 3.0], [0.25, 0.5, -4.0]),
            ([0.0, 0.0, 0.0], [1.0, 1.0, 1.0]),
            ([-3.0, 1.0, 0.0], [2.0, -0.75, 1.5]),
        ] {
            let psi = translation_phase(&m, &x, &f);
            let a = vector_potential(&m, &f);
            let dot: f64 = (0..3).map(|i| a[i] * x[i]).sum();
            assert!((psi - dot).abs() < 1e-13);
        }
        assert_eq!(translation_phase(&[0.0; 3], &[1.0, 2.0, 3.0], &f), 0.0);
        assert_eq!(
            translation_phase(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &MagneticField::zero(3)),
            0.0
        );
    }

    #[test]
    fn magnetic_translate_contracts() {
        let f = MagneticField::planar(0.8);
        let spec = BoxSpec::new(2, 4, 1, Dirichlet).unwrap();
        let sites = build_box(&spec).unwrap();
        let v: Vec<Complex64> = (0..sites.len())
            .map(|i| Complex64::new(i as f64 * 0.1, 1.0 - i as f64 * 0.05))
            .collect();
        let (s0, v0) = magnetic_translate(&v, &sites, &[0.0, 0.0], 1, &f).unwrap();
        assert_eq!(s0, sites);
        assert_eq!(v0, v);
        let (_, v1) = magnetic_translate(&v, &sites, &[2.0, -1.0], 1, &f).unwrap();
        let n0: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        let n1: f64 = v1.iter().map(|z| z.norm_sqr()).sum();
        assert!((n0 - n1).abs() < 1e-12);
        assert!(matches!(
            magnetic_translate(&v, &sites, &[0.5, 0.0], 1, &f),
            Err(OperatorError::NonIntegerShift(_))
        ));
    }

    #[test]
    fn translation_intertwines_operators() {
        // U_m H U_m^* equals the operator assembled on the shifted box with the
        // potential moved along.
        let f = MagneticField::planar(0.37);
        let spec = BoxSpec::new(2, 5, 1, Dirichlet).unwrap();
        let sites = build_box(&spec).unwrap();
        let pot: Potential = sites
            .iter()
            .enumerate()
            .map(|(i, k)| (*k, (i as f64 * 0.37).sin()))
            .collect();
        let h = assemble(&spec, &f, &pot).unwrap();
        let m = crate::geometry::LatticePoint([3, -2, 0]);
        let shifted = spec.translated(m);
        let pot_m: Potential = pot
            .iter()
            .map(|(k, v)| (MeshPoint([k.0[0] + 3, k.0[1] - 2, 0]), *v))
            .collect();
        let hm = assemble(&shifted, &f, &pot_m).unwrap();
        for j in 0..h.len() {
            let mut e = vec![Complex64::new(0.0, 0.0); h.len()];
            e[j] = Complex64::new(1.0, 0.0);
            // U H e_j  vs  H_m U e_j
            let (_, lhs) = magnetic_translate(&h.matvec(&e), &sites, &[3.0, -2.0], 1, &f).unwrap();
            let (_, ue) = magnetic_translate(&e, &sites, &[3.0, -2.0], 1, &f).unwrap();
            let rhs = hm.matvec(&ue);
            for (a, b) in lhs.iter().zip(&rhs) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn triplet_dump_format() {
        let spec = BoxSpec::new(1, 3, 1, Dirichlet).unwrap();
        let h = assemble(&spec, &MagneticField::zero(1), &flat(&spec)).unwrap();
        let mut buf = Vec::new();
        h.write_triplets(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# n = 3");
        assert_eq!(lines[1], "0 0 2e0 0e0");
        assert_eq!(lines.len(), 1 + 3 + 4);
    }
}
