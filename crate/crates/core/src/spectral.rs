//! Spectral backends: dense Hermitian eigendecomposition and a banded Cholesky
//! factorization for resolvent-power traces, plus localized traces, off-diagonal block
//! norms and the Hellmann–Feynman check.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Region;
use crate::magnetic::DiscreteHamiltonian;
use crate::stats::CompensatedSum;
use crate::testfun::{LaurentPoly, TestFunction, TestFunctionError};

pub const DEFAULT_DENSE_CAP: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("matrix of size {n} exceeds the dense cap {cap}; use the factorization backend")]
    Capacity { n: usize, cap: usize },
    #[error("H - E is not positive definite (pivot {pivot} = {value}); E must lie below the spectrum")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error(transparent)]
    Function(#[from] TestFunctionError),
    #[error("{0} has no Laurent form; the factorization path needs one")]
    NotLaurent(String),
    #[error("weights have length {got}, expected {expected}")]
    Weights { expected: usize, got: usize },
}

/// Eigenvalues (ascending) and orthonormal eigenvectors, one column per eigenvalue.
#[derive(Clone, Debug)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    vectors: DMatrix<Complex64>,
    pub source: String,
}

impl Spectrum {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn vectors(&self) -> &DMatrix<Complex64> {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(f64::NAN)
    }

    /// `|v_i(x)|²`.
    pub fn weight(&self, i: usize, site: usize) -> f64 {
        self.vectors[(site, i)].norm_sqr()
    }

    /// `max_i ‖H v_i - λ_i v_i‖`.
    pub fn residual(&self, h: &DiscreteHamiltonian) -> f64 {
        let mut worst = 0.0_f64;
        for (i, lambda) in self.eigenvalues.iter().enumerate() {
            let v: Vec<Complex64> = self.vectors.column(i).iter().copied().collect();
            let hv = h.matvec(&v);
            let r = hv
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b * *lambda).norm_sqr())
                .sum::<f64>()
                .sqrt();
            worst = worst.max(r);
        }
        worst
    }

    /// `max |VᴴV - I|`.
    pub fn orthonormality_residual(&self) -> f64 {
        let g = self.vectors.adjoint() * &self.vectors;
        let mut worst = 0.0_f64;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - Complex64::new(target, 0.0)).norm());
            }
        }
        worst
    }

    /// `f(λ_i)` for every eigenvalue.
    pub fn map(&self, f: &dyn Fn(f64) -> Result<f64, TestFunctionError>) -> Result<Vec<f64>, SpectralError> {
        self.eigenvalues.iter().map(|l| f(*l).map_err(Into::into)).collect()
    }

    /// `Σ_x w(x) Σ_i g_i |v_i(x)|²`.
    pub fn weighted_sum(&self, g: &[f64], weights: &[f64]) -> f64 {
        let mut acc = CompensatedSum::new();
        for (x, w) in weights.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            let mut row = CompensatedSum::new();
            for (i, gi) in g.iter().enumerate() {
                row.add(gi * self.weight(i, x));
            }
            acc.add(w * row.value());
        }
        acc.value()
    }
}

pub fn eigendecompose(h: &DiscreteHamiltonian) -> Result<Spectrum, SpectralError> {
    eigendecompose_capped(h, DEFAULT_DENSE_CAP)
}

pub fn eigendecompose_capped(h: &DiscreteHamiltonian, cap: usize) -> Result<Spectrum, SpectralError> {
    let n = h.len();
    if n > cap {
        return Err(SpectralError::Capacity { n, cap });
    }
    let eig = SymmetricEigen::new(h.to_dense());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(Spectrum {
        eigenvalues,
        vectors,
        source: h.fingerprint(),
    })
}

/// `Tr f(H) = Σ_i f(λ_i)`.
pub fn trace_function(spectrum: &Spectrum, f: &TestFunction) -> Result<f64, SpectralError> {
    let mut acc = CompensatedSum::new();
    for l in spectrum.eigenvalues() {
        acc.add(f.eval(*l)?);
    }
    Ok(acc.value())
}

/// `Tr (H - E)^{-m}` from the eigenvalues.
pub fn trace_resolvent_power_spectral(spectrum: &Spectrum, pole: f64, m: u32) -> Result<f64, SpectralError> {
    trace_function(spectrum, &TestFunction::resolvent_power(pole, m as i32))
}

/// Hermitian positive-definite band Cholesky factor `L` with `LLᴴ = H - E`.
#[derive(Clone, Debug)]
pub struct BandCholesky {
    n: usize,
    band: usize,
    /// Row `i` holds `L[i][i - band ..= i]`.
    data: Vec<Complex64>,
}

impl BandCholesky {
    pub fn factor(h: &DiscreteHamiltonian, pole: f64) -> Result<Self, SpectralError> {
        let n = h.len();
        let b = h.bandwidth();
        let w = b + 1;
        let mut data = vec![Complex64::new(0.0, 0.0); n * w];
        for (i, d) in h.diagonal().iter().enumerate() {
            data[i * w + b] = Complex64::new(d - pole, 0.0);
        }
        for hop in h.hoppings() {
            // lower entry (col, row) = conj(upper)
            let (i, j) = (hop.col, hop.row);
            data[i * w + (j + b - i)] = hop.value.conj();
        }
        for i in 0..n {
            let lo = i.saturating_sub(b);
            for j in lo..=i {
                let mut s = data[i * w + (j + b - i)];
                let klo = lo.max(j.saturating_sub(b));
                for k in klo..j {
                    s -= data[i * w + (k + b - i)] * data[j * w + (k + b - j)].conj();
                }
                if i == j {
                    if !(s.re > 0.0) || !s.re.is_finite() {
                        return Err(SpectralError::NotPositiveDefinite { pivot: i, value: s.re });
                    }
                    data[i * w + b] = Complex64::new(s.re.sqrt(), 0.0);
                } else {
                    data[i * w + (j + b - i)] = s / data[j * w + b].re;
                }
            }
        }
        Ok(BandCholesky { n, band: b, data })
    }

    fn at(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * (self.band + 1) + (j + self.band - i)]
    }

    /// In place `x ← L^{-1} x`; entries below `start` are assumed zero.
    fn forward(&self, x: &mut [Complex64], start: usize) {
        let b = self.band;
        for i in start..self.n {
            let mut s = x[i];
            for k in i.saturating_sub(b).max(start)..i {
                s -= self.at(i, k) * x[k];
            }
            x[i] = s / self.at(i, i).re;
        }
    }

    /// In place `x ← L^{-H} x`.
    fn backward(&self, x: &mut [Complex64]) {
        let b = self.band;
        for i in (0..self.n).rev() {
            let mut s = x[i];
            for k in (i + 1)..(i + b + 1).min(self.n) {
                s -= self.at(k, i).conj() * x[k];
            }
            x[i] = s / self.at(i, i).re;
        }
    }

    /// `e_jᵀ (H - E)^{-k} e_j` for `k = 1..=max_power`, from alternating half solves:
    /// `‖L^{-1} e‖² = eᵀM^{-1}e`, `‖L^{-H}L^{-1} e‖² = eᵀM^{-2}e`, and so on.
    pub fn diagonal_powers(&self, j: usize, max_power: usize) -> Vec<f64> {
        let mut x = vec![Complex64::new(0.0, 0.0); self.n];
        x[j] = Complex64::new(1.0, 0.0);
        let mut out = Vec::with_capacity(max_power);
        for k in 0..max_power {
            if k % 2 == 0 {
                self.forward(&mut x, if k == 0 { j } else { 0 });
            } else {
                self.backward(&mut x);
            }
            let mut acc = CompensatedSum::new();
            for v in &x {
                acc.add(v.norm_sqr());
            }
            out.push(acc.value());
        }
        out
    }

    /// `Σ_x w(x) [P(H)]_{xx}` for a Laurent polynomial with this factor's pole.
    pub fn weighted_laurent_trace(&self, p: &LaurentPoly, weights: Option<&[f64]>) -> f64 {
        let top = p.max_power().max(0) as usize;
        let mut acc = CompensatedSum::new();
        for j in 0..self.n {
            let w = weights.map_or(1.0, |w| w[j]);
            if w == 0.0 {
                continue;
            }
            let powers = if top > 0 { self.diagonal_powers(j, top) } else { Vec::new() };
            let mut col = CompensatedSum::new();
            for (power, a) in p.terms() {
                let v = match power {
                    0 => 1.0,
                    k if k > 0 => powers[k as usize - 1],
                    _ => panic!("nonpositive Laurent powers are not traceable here"),
                };
                col.add(a * v);
            }
            acc.add(w * col.value());
        }
        acc.value()
    }
}

/// `Tr (H - E)^{-m}` through the factorization backend.
pub fn trace_resolvent_power(h: &DiscreteHamiltonian, pole: f64, m: u32) -> Result<f64, SpectralError> {
    if m == 0 {
        return Ok(h.len() as f64);
    }
    let chol = BandCholesky::factor(h, pole)?;
    Ok(chol.weighted_laurent_trace(&LaurentPoly::monomial(pole, m as i32), None))
}

/// `Tr P(H)` through the factorization backend.
pub fn laurent_trace(h: &DiscreteHamiltonian, p: &LaurentPoly) -> Result<f64, SpectralError> {
    weighted_laurent_trace(h, p, None)
}

/// `Σ_x w(x) [P(H)]_{xx}` through the factorization backend.
pub fn weighted_laurent_trace(
    h: &DiscreteHamiltonian,
    p: &LaurentPoly,
    weights: Option<&[f64]>,
) -> Result<f64, SpectralError> {
    if let Some(w) = weights {
        if w.len() != h.len() {
            return Err(SpectralError::Weights {
                expected: h.len(),
                got: w.len(),
            });
        }
    }
    let chol = BandCholesky::factor(h, p.pole)?;
    Ok(chol.weighted_laurent_trace(p, weights))
}

/// Indicator of the sites of `h` lying in `region`.
pub fn region_weights(h: &DiscreteHamiltonian, region: &Region) -> Vec<f64> {
    h.sites()
        .iter()
        .map(|k| if region.contains_mesh(k, h.refinement) { 1.0 } else { 0.0 })
        .collect()
}

/// `Σ_{x ∈ F} [f(H)]_{xx}` from the spectrum.
pub fn local_trace(
    h: &DiscreteHamiltonian,
    spectrum: &Spectrum,
    f: &TestFunction,
    region: &Region,
) -> Result<f64, SpectralError> {
    weighted_trace(spectrum, f, &region_weights(h, region))
}

/// `Tr(W f(H))` for a multiplication operator `W` given per site.
pub fn weighted_trace(spectrum: &Spectrum, f: &TestFunction, weights: &[f64]) -> Result<f64, SpectralError> {
    if weights.len() != spectrum.len() {
        return Err(SpectralError::Weights {
            expected: spectrum.len(),
            got: weights.len(),
        });
    }
    let g = spectrum.map(&|l| f.eval(l))?;
    Ok(spectrum.weighted_sum(&g, weights))
}

/// Trace with `f` on the factorization path when it has a Laurent form, otherwise through
/// the eigendecomposition.
pub fn trace_auto(h: &DiscreteHamiltonian, f: &TestFunction) -> Result<f64, SpectralError> {
    match f.laurent() {
        Some(p) => laurent_trace(h, p),
        None => trace_function(&eigendecompose(h)?, f),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockNorm {
    Operator,
    Trace,
}

/// Norm of `χ_F (H - E)^{-m} χ_G*` built from the spectrum.
pub fn offdiag_block_norm(
    h: &DiscreteHamiltonian,
    spectrum: &Spectrum,
    pole: f64,
    m: u32,
    f_region: &Region,
    g_region: &Region,
    norm: BlockNorm,
) -> Result<f64, SpectralError> {
    if spectrum.min() <= pole {
        return Err(SpectralError::NotPositiveDefinite {
            pivot: 0,
            value: spectrum.min() - pole,
        });
    }
    let rows: Vec<usize> = (0..h.len())
        .filter(|&i| f_region.contains_mesh(&h.sites()[i], h.refinement))
        .collect();
    let cols: Vec<usize> = (0..h.len())
        .filter(|&i| g_region.contains_mesh(&h.sites()[i], h.refinement))
        .collect();
    if rows.is_empty() || cols.is_empty() {
        return Ok(0.0);
    }
    let g: Vec<f64> = spectrum
        .eigenvalues()
        .iter()
        .map(|l| (l - pole).powi(-(m as i32)))
        .collect();
    let v = spectrum.vectors();
    let block = DMatrix::from_fn(rows.len(), cols.len(), |r, c| {
        let (x, y) = (rows[r], cols[c]);
        let mut acc = Complex64::new(0.0, 0.0);
        for (i, gi) in g.iter().enumerate() {
            acc += v[(x, i)] * v[(y, i)].conj() * *gi;
        }
        acc
    });
    let sv = block.singular_values();
    Ok(match norm {
        BlockNorm::Operator => sv.max(),
        BlockNorm::Trace => sv.sum(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HellmannFeynman {
    pub analytic: f64,
    pub numeric: f64,
}

impl HellmannFeynman {
    pub fn relative_error(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.analytic - self.numeric).abs() / scale
        }
    }
}

/// `Tr(W f'(H + λW))` against the central difference of `λ' ↦ Tr f(H + λ'W)`.
pub fn hellmann_feynman_check(
    h: &DiscreteHamiltonian,
    weights: &[f64],
    f: &TestFunction,
    lambda: f64,
    step: f64,
) -> Result<HellmannFeynman, SpectralError> {
    let at = |l: f64| eigendecompose(&h.with_diagonal_shift(weights, l));
    let centre = at(lambda)?;
    let g = centre.map(&|l| f.derivative_at(l))?;
    let analytic = centre.weighted_sum(&g, weights);
    let plus = trace_function(&at(lambda + step)?, f)?;
    let minus = trace_function(&at(lambda - step)?, f)?;
    Ok(HellmannFeynman {
        analytic,
        numeric: (plus - minus) / (2.0 * step),
    })
}
