//! Test functions: Laurent polynomials in `(x - E)^{-1}`, decay-class functions with
//! analytic derivatives, the tilde transform, least-squares Laurent fitting and the
//! antiderivative lift.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TestFunctionError {
    #[error("pole: x = {x} coincides with E = {pole}")]
    Pole { x: f64, pole: f64 },
    #[error("{x} lies outside the domain of {label}")]
    Domain { x: f64, label: String },
    #[error("invalid Laurent polynomial: {0}")]
    Invalid(String),
    #[error("fit domain invalid: E = {pole} must be below the domain start {lower}")]
    FitDomain { pole: f64, lower: f64 },
    #[error("least-squares fit of degree p = {p} is rank deficient (rank {rank} of {cols})")]
    Conditioning { p: usize, rank: usize, cols: usize },
}

/// `P(x) = (x - E)^{-m} Σ_k a_k (x - E)^{-k}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaurentPoly {
    #[serde(rename = "E")]
    pub pole: f64,
    #[serde(rename = "m")]
    pub order: i32,
    pub coefficients: Vec<f64>,
}

impl LaurentPoly {
    pub fn new(pole: f64, order: i32, coefficients: Vec<f64>) -> Self {
        LaurentPoly {
            pole,
            order,
            coefficients,
        }
    }

    /// `(x - E)^{-m}`.
    pub fn monomial(pole: f64, order: i32) -> Self {
        LaurentPoly::new(pole, order, vec![1.0])
    }

    pub fn zero(pole: f64, order: i32) -> Self {
        LaurentPoly::new(pole, order, Vec::new())
    }

    pub fn is_zero(&self) -> bool {
        self.coefficients.iter().all(|a| *a == 0.0)
    }

    /// Checks `m > d + 1` and `E < lower`.
    pub fn validate(&self, dim: usize, lower: f64) -> Result<(), TestFunctionError> {
        if self.order <= dim as i32 + 1 {
            return Err(TestFunctionError::Invalid(format!(
                "leading order m = {} must exceed d + 1 = {}",
                self.order,
                dim + 1
            )));
        }
        if !(self.pole < lower) {
            return Err(TestFunctionError::Invalid(format!(
                "E must be < {lower}, got {}",
                self.pole
            )));
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> Result<f64, TestFunctionError> {
        if x == self.pole {
            return Err(TestFunctionError::Pole { x, pole: self.pole });
        }
        Ok(self.eval_unchecked(x))
    }

    pub fn eval_unchecked(&self, x: f64) -> f64 {
        let y = 1.0 / (x - self.pole);
        let mut acc = 0.0;
        for a in self.coefficients.iter().rev() {
            acc = acc * y + a;
        }
        acc * y.powi(self.order)
    }

    /// Term-wise derivative; leading order becomes `m + 1`.
    pub fn derivative(&self) -> LaurentPoly {
        let coefficients = self
            .coefficients
            .iter()
            .enumerate()
            .map(|(k, a)| -(self.order + k as i32) as f64 * a)
            .collect();
        LaurentPoly::new(self.pole, self.order + 1, coefficients)
    }

    /// Powers `(m + k, a_k)` with nonzero coefficient.
    pub fn terms(&self) -> impl Iterator<Item = (i32, f64)> + '_ {
        self.coefficients
            .iter()
            .enumerate()
            .filter(|(_, a)| **a != 0.0)
            .map(|(k, a)| (self.order + k as i32, *a))
    }

    pub fn max_power(&self) -> i32 {
        self.order + self.coefficients.len().saturating_sub(1) as i32
    }
}

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FunctionKind {
    Laurent,
    ResolventPower,
    UserComposed,
}

/// A function with its analytic derivative, decay metadata and (when it has one) its
/// Laurent representation, which unlocks the factorization trace path.
#[derive(Clone)]
pub struct TestFunction {
    pub label: String,
    pub kind: FunctionKind,
    /// Decay exponents of `f` and `f'`.
    pub m1: f64,
    pub m2: f64,
    f: ScalarFn,
    df: ScalarFn,
    /// `f` is defined for `x > lower` (or `x >= lower` when `closed`).
    lower: f64,
    closed: bool,
    laurent: Option<LaurentPoly>,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("label", &self.label)
            .field("kind", &self.kind)
            .field("m1", &self.m1)
            .field("m2", &self.m2)
            .field("laurent", &self.laurent)
            .finish()
    }
}

impl TestFunction {
    pub fn from_laurent(p: LaurentPoly) -> Self {
        let (q, dq) = (p.clone(), p.derivative());
        let kind = if p.coefficients == [1.0] {
            FunctionKind::ResolventPower
        } else {
            FunctionKind::Laurent
        };
        TestFunction {
            label: if kind == FunctionKind::ResolventPower {
                format!("(x - {})^-{}", p.pole, p.order)
            } else {
                format!("laurent(E = {}, m = {}, p = {})", p.pole, p.order, p.coefficients.len().saturating_sub(1))
            },
            kind,
            m1: p.order as f64,
            m2: (p.order + 1) as f64,
            f: Arc::new(move |x| q.eval_unchecked(x)),
            df: Arc::new(move |x| dq.eval_unchecked(x)),
            lower: p.pole,
            closed: false,
            laurent: Some(p),
        }
    }

    /// `(x - E)^{-m}`.
    pub fn resolvent_power(pole: f64, order: i32) -> Self {
        TestFunction::from_laurent(LaurentPoly::monomial(pole, order))
    }

    /// A user-supplied pair `(f, f')` on `[lower, ∞)`.
    pub fn composed(
        label: impl Into<String>,
        f: ScalarFn,
        df: ScalarFn,
        m1: f64,
        m2: f64,
        lower: f64,
    ) -> Self {
        TestFunction {
            label: label.into(),
            kind: FunctionKind::UserComposed,
            m1,
            m2,
            f,
            df,
            lower,
            closed: true,
            laurent: None,
        }
    }

    /// `f(x) = x`; not a decay-class member, used for trace identities.
    pub fn identity() -> Self {
        TestFunction::composed("x", Arc::new(|x| x), Arc::new(|_| 1.0), -1.0, 0.0, f64::NEG_INFINITY)
    }

    /// `f ≡ c`.
    pub fn constant(c: f64) -> Self {
        TestFunction::composed(format!("{c}"), Arc::new(move |_| c), Arc::new(|_| 0.0), 0.0, 0.0, f64::NEG_INFINITY)
    }

    pub fn laurent(&self) -> Option<&LaurentPoly> {
        self.laurent.as_ref()
    }

    pub fn in_domain(&self, x: f64) -> bool {
        if self.closed {
            x >= self.lower
        } else {
            x > self.lower
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64, TestFunctionError> {
        if !self.in_domain(x) {
            return Err(TestFunctionError::Domain {
                x,
                label: self.label.clone(),
            });
        }
        Ok((self.f)(x))
    }

    pub fn derivative_at(&self, x: f64) -> Result<f64, TestFunctionError> {
        if !self.in_domain(x) {
            return Err(TestFunctionError::Domain {
                x,
                label: self.label.clone(),
            });
        }
        Ok((self.df)(x))
    }

    /// The derivative as a test function in its own right.
    pub fn derivative(&self) -> TestFunction {
        if let Some(p) = &self.laurent {
            let mut d = TestFunction::from_laurent(p.derivative());
            d.label = format!("d/dx {}", self.label);
            return d;
        }
        let df = Arc::clone(&self.df);
        let h = 1e-5;
        // second derivative is only needed for diagnostics, a central difference suffices
        let ddf: ScalarFn = Arc::new(move |x| (df(x + h) - df(x - h)) / (2.0 * h));
        TestFunction {
            label: format!("d/dx {}", self.label),
            kind: FunctionKind::UserComposed,
            m1: self.m2,
            m2: self.m2 + 1.0,
            f: Arc::clone(&self.df),
            df: ddf,
            lower: self.lower,
            closed: self.closed,
            laurent: None,
        }
    }

    /// Heuristic certificate for the declared decay: on a geometric grid from `start` to
    /// `10^6`, the scaled values `|f(x)| x^{m₁}` and `|f'(x)| x^{m₂}` on the upper half of
    /// the grid stay within a factor 10 of their maximum on the lower half.
    pub fn decay_check(&self, start: f64) -> DecayReport {
        let x0 = start.max(1.0).max(if self.lower.is_finite() { self.lower + 1.0 } else { 1.0 });
        let mut grid = Vec::new();
        let mut x = x0;
        while x <= 1e6 {
            grid.push(x);
            x *= 2.0;
        }
        let half = grid.len() / 2;
        let scan = |g: &dyn Fn(f64) -> f64, m: f64| {
            let vals: Vec<f64> = grid.iter().map(|&x| g(x).abs() * x.powf(m)).collect();
            let head = vals[..half.max(1)].iter().cloned().fold(0.0, f64::max);
            let tail = vals[half..].iter().cloned().fold(0.0, f64::max);
            if tail == 0.0 {
                0.0
            } else {
                tail / head
            }
        };
        let f_ratio = scan(&*self.f, self.m1);
        let df_ratio = scan(&*self.df, self.m2);
        DecayReport {
            f_ratio,
            df_ratio,
            passed: f_ratio.is_finite() && df_ratio.is_finite() && f_ratio <= 10.0 && df_ratio <= 10.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub f_ratio: f64,
    pub df_ratio: f64,
    pub passed: bool,
}

fn half_dim(dim: usize) -> i32 {
    (dim / 2) as i32
}

/// `x ↦ (x - E)^{1 + ⌊d/2⌋} f'(x)`.
pub fn tilde_transform(f: &TestFunction, pole: f64, dim: usize) -> ScalarFn {
    let df = Arc::clone(&f.df);
    let k = 1 + half_dim(dim);
    Arc::new(move |x| (x - pole).powi(k) * df(x))
}

/// The tilde transform of a Laurent polynomial, itself a Laurent polynomial.
pub fn tilde_laurent(p: &LaurentPoly, dim: usize) -> LaurentPoly {
    let d = p.derivative();
    LaurentPoly::new(d.pole, d.order - 1 - half_dim(dim), d.coefficients)
}

/// `Q` with `Q'(x) = (x - E)^{-(1 + ⌊d/2⌋)} P(x)`.
pub fn antiderivative_lift(p: &LaurentPoly, dim: usize) -> LaurentPoly {
    let s = half_dim(dim);
    let coefficients = p
        .coefficients
        .iter()
        .enumerate()
        .map(|(k, a)| -a / (p.order + k as i32 + s) as f64)
        .collect();
    LaurentPoly::new(p.pole, p.order + s, coefficients)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaurentFit {
    pub poly: LaurentPoly,
    /// Max error on the validation grid plus the truncation envelope.
    pub sup_error: f64,
    pub grid_error: f64,
    pub envelope: f64,
    pub x_max: f64,
    pub nodes: usize,
}

/// Number of fitting nodes; fixed so that errors at different degrees are comparable.
pub const FIT_NODES: usize = 64;

fn chebyshev_points(n: usize, a: f64, b: f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let t = (std::f64::consts::PI * (2 * i + 1) as f64 / (2 * n) as f64).cos();
            0.5 * (a + b) + 0.5 * (b - a) * t
        })
        .collect()
}

/// Least-squares fit of `g` by a Laurent polynomial of order `(m, p)` on `[lower, x_max]`,
/// done in the reciprocal variable `y = 1/(x - E)`. `x_max` defaults to
/// `10³ (lower - E)`.
pub fn laurent_fit(
    g: &dyn Fn(f64) -> f64,
    pole: f64,
    order: i32,
    p: usize,
    lower: f64,
    x_max: Option<f64>,
) -> Result<LaurentFit, TestFunctionError> {
    if !(pole < lower) {
        return Err(TestFunctionError::FitDomain { pole, lower });
    }
    let x_max = x_max.unwrap_or(1e3 * (lower - pole)).max(lower + (lower - pole));
    let y_max = 1.0 / (lower - pole);
    let y_min = 1.0 / (x_max - pole);
    let nodes = FIT_NODES.max(4 * (p + 1));
    let cols = p + 1;
    // basis t^{m+k} with t = y / y_max keeps the columns O(1)
    let ts = chebyshev_points(nodes, y_min / y_max, 1.0);
    let basis = |t: f64, k: usize| t.powi(order + k as i32);
    let a = DMatrix::from_fn(nodes, cols, |i, k| basis(ts[i], k));
    let rhs = DVector::from_iterator(nodes, ts.iter().map(|t| g(pole + 1.0 / (t * y_max))));
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * nodes as f64 * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|s| **s > tol).count();
    if rank < cols {
        return Err(TestFunctionError::Conditioning { p, rank, cols });
    }
    let b = svd
        .solve(&rhs, tol)
        .map_err(|e| TestFunctionError::Invalid(e.to_string()))?;
    let coefficients: Vec<f64> = (0..cols)
        .map(|k| b[k] / y_max.powi(order + k as i32))
        .collect();
    let poly = LaurentPoly::new(pole, order, coefficients);

    let grid = chebyshev_points(10 * nodes, y_min / y_max, 1.0)
        .into_iter()
        .chain([y_min / y_max, 1.0]);
    let grid_error = grid
        .map(|t| {
            let x = pole + 1.0 / (t * y_max);
            (g(x) - poly.eval_unchecked(x)).abs()
        })
        .fold(0.0, f64::max);
    // tail: the difference on a geometric grid past x_max, plus both magnitudes at its end
    let mut envelope = 0.0_f64;
    let mut x = x_max;
    while x < 1e3 * x_max {
        envelope = envelope.max((g(x) - poly.eval_unchecked(x)).abs());
        x *= 1.25;
    }
    envelope += g(x).abs() + poly.eval_unchecked(x).abs();
    Ok(LaurentFit {
        poly,
        sup_error: grid_error + envelope,
        grid_error,
        envelope,
        x_max,
        nodes,
    })
}

/// The bundled smooth class member `f(x) = y³ e^{-y}` with `y = 1/(x - E)`.
pub fn smooth_target(pole: f64) -> TestFunction {
    TestFunction::composed(
        format!("y^3 exp(-y), y = 1/(x - {pole})"),
        Arc::new(move |x| {
            let y = 1.0 / (x - pole);
            y.powi(3) * (-y).exp()
        }),
        Arc::new(move |x| {
            let y = 1.0 / (x - pole);
            -(3.0 - y) * y.powi(4) * (-y).exp()
        }),
        3.0,
        4.0,
        pole,
    )
}
