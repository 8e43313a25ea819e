//! Objective-function oracles and the benchmark problem generators.
//!
//! Every objective is immutable after construction and can be shared across
//! threads. Besides `f` and `∇f`, an [`Objective`] carries the optimum data
//! needed by the Lyapunov audits and the flatness metadata `(p, L, M)`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;

/// Lower bound on the class-mean magnitude of generated data.
pub const MEAN_SCALE: f64 = 1.0;
/// Margin the mean direction must achieve on every generated point.
pub const CERT_MARGIN: f64 = 0.5;
/// Tolerance of the power iteration used for Lipschitz constants.
pub const POWER_ITER_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SeparableDataset {
    /// One row per data point.
    pub features: DMatrix<f64>,
    /// Binary labels in {0, 1}.
    pub labels: Vec<u8>,
    pub seed: u64,
    /// Unit vector `u` with `(2bᵢ−1)·rowᵢ·u ≥ CERT_MARGIN` for every row.
    pub certificate: DVector<f64>,
}

impl SeparableDataset {
    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Labels as a float vector, the regression target of the quadratic benchmark.
    pub fn targets(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.labels.iter().map(|&l| l as f64))
    }

    /// Rows multiplied by their ±1 label sign.
    pub fn signed_features(&self) -> DMatrix<f64> {
        let mut w = self.features.clone();
        for (i, &l) in self.labels.iter().enumerate() {
            if l == 0 {
                w.row_mut(i).neg_mut();
            }
        }
        w
    }

    /// Smallest signed margin `minᵢ (2bᵢ−1)·rowᵢ·x`.
    pub fn margin(&self, x: &DVector<f64>) -> f64 {
        let z = self.signed_features() * x;
        z.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Class-conditional Gaussian data: the first `⌊n/2⌋` labels are 0, the rest 1;
/// each row is `±μ + g` with `g ~ N(0, I)`, the sign following the label.
/// `μ = m·u` for a seeded random unit direction `u`, with `m` raised above
/// [`MEAN_SCALE`] whenever needed for `u` to separate the sample with margin
/// [`CERT_MARGIN`].
pub fn generate_separable_data(n: usize, dim: usize, seed: u64) -> Result<SeparableDataset> {
    if n < 2 || dim < 1 {
        return Err(Error::InvalidInput(format!(
            "need n >= 2 and dim >= 1, got n={n}, dim={dim}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };

    let mut u = DVector::from_fn(dim, |_, _| draw());
    let un = u.norm();
    if un == 0.0 {
        u[0] = 1.0;
    } else {
        u /= un;
    }
    let noise = DMatrix::from_fn(n, dim, |_, _| draw());
    let labels: Vec<u8> = (0..n).map(|i| if i < n / 2 { 0 } else { 1 }).collect();
    let sign = |i: usize| if labels[i] == 0 { -1.0 } else { 1.0 };

    // s_i (m u + s_i g_i)·u = m + s_i g_i·u ≥ margin
    let worst = (0..n)
        .map(|i| -sign(i) * noise.row(i).transpose().dot(&u))
        .fold(f64::NEG_INFINITY, f64::max);
    let m = MEAN_SCALE.max(worst + CERT_MARGIN);

    let features = DMatrix::from_fn(n, dim, |i, j| sign(i) * m * u[j] + noise[(i, j)]);
    Ok(SeparableDataset {
        features,
        labels,
        seed,
        certificate: u,
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Quadratic {
        a: DMatrix<f64>,
        b: DVector<f64>,
        hess_norm: f64,
    },
    LpRegression {
        a: DMatrix<f64>,
        b: DVector<f64>,
        power: u32,
    },
    Logistic {
        w: DMatrix<f64>,
    },
    Composite {
        quad: Box<Objective>,
        lp: Box<Objective>,
    },
}

/// Oracle for `f`, `∇f`, optimum data and flatness metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    kind: Kind,
    name: String,
    dim: usize,
    optimum_value: Option<f64>,
    optimum_point: Option<DVector<f64>>,
    flatness_p: u32,
    lipschitz_l: Option<f64>,
    deriv_bound_m: Option<f64>,
}

impl Objective {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn optimum_value(&self) -> Option<f64> {
        self.optimum_value
    }

    pub fn optimum_point(&self) -> Option<&DVector<f64>> {
        self.optimum_point.as_ref()
    }

    pub fn flatness_p(&self) -> u32 {
        self.flatness_p
    }

    pub fn lipschitz_l(&self) -> Option<f64> {
        self.lipschitz_l
    }

    pub fn deriv_bound_m(&self) -> Option<f64> {
        self.deriv_bound_m
    }

    pub fn is_logistic(&self) -> bool {
        matches!(self.kind, Kind::Logistic { .. })
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        match &self.kind {
            Kind::Quadratic { a, b, .. } => (a * x - b).norm_squared(),
            Kind::LpRegression { a, b, power } => {
                (a * x - b).iter().map(|r| r.powi(*power as i32)).sum()
            }
            Kind::Logistic { w } => (w * x).iter().map(|&z| softplus(-z)).sum(),
            Kind::Composite { quad, lp } => {
                let (x1, x2) = split(x, quad.dim);
                quad.eval(&x1) + lp.eval(&x2)
            }
        }
    }

    pub fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            Kind::Quadratic { a, b, .. } => a.tr_mul(&(a * x - b)) * 2.0,
            Kind::LpRegression { a, b, power } => {
                let p = *power as i32;
                let r = (a * x - b).map(|r| r.powi(p - 1));
                a.tr_mul(&r) * (*power as f64)
            }
            Kind::Logistic { w } => {
                let z = w * x;
                w.tr_mul(&z.map(|z| -sigmoid(-z)))
            }
            Kind::Composite { quad, lp } => {
                let (x1, x2) = split(x, quad.dim);
                let g1 = quad.grad(&x1);
                let g2 = lp.grad(&x2);
                DVector::from_iterator(self.dim, g1.iter().chain(g2.iter()).cloned())
            }
        }
    }

    /// Suboptimality `f(x) − f*`, when `f*` is known.
    pub fn gap(&self, x: &DVector<f64>) -> Option<f64> {
        self.optimum_value.map(|fs| self.eval(x) - fs)
    }

    /// Operator norm of the `order`-th derivative tensor at `x`.
    ///
    /// Exact for orders 1 and 2 and for vanishing higher derivatives of
    /// polynomials; for orders ≥ 3 of ℓp and logistic losses the value is the
    /// symmetric power-method estimate of [`linalg::sym_tensor_norm`].
    pub fn derivative_norm(&self, order: u32, x: &DVector<f64>) -> Result<f64> {
        if order == 0 {
            return Err(Error::Unsupported("derivative order 0".into()));
        }
        if order == 1 {
            return Ok(self.grad(x).norm());
        }
        match &self.kind {
            Kind::Quadratic { hess_norm, .. } => Ok(if order == 2 { *hess_norm } else { 0.0 }),
            Kind::LpRegression { a, b, power } => {
                if order > *power {
                    return Ok(0.0);
                }
                let falling: f64 = ((*power - order + 1)..=*power).map(|k| k as f64).product();
                let r = a * x - b;
                let c: Vec<f64> = r
                    .iter()
                    .map(|ri| falling * ri.powi((*power - order) as i32))
                    .collect();
                Ok(rank_one_sum_norm(a, &c, order))
            }
            Kind::Logistic { w } => {
                let poly = logistic_derivative_poly(order);
                let c: Vec<f64> = (w * x)
                    .iter()
                    .map(|&z| eval_poly(&poly, sigmoid(-z)))
                    .collect();
                Ok(rank_one_sum_norm(w, &c, order))
            }
            Kind::Composite { quad, lp } => {
                let (x1, x2) = split(x, quad.dim);
                Ok(quad
                    .derivative_norm(order, &x1)?
                    .max(lp.derivative_norm(order, &x2)?))
            }
        }
    }

    /// Returns a copy with the optimum value and point replaced.
    pub fn with_optimum(mut self, value: f64, point: Option<DVector<f64>>) -> Self {
        self.optimum_value = Some(value);
        self.optimum_point = point;
        self
    }
}

fn rank_one_sum_norm(rows: &DMatrix<f64>, c: &[f64], order: u32) -> f64 {
    if order == 2 {
        let scaled = DMatrix::from_fn(rows.nrows(), rows.ncols(), |i, j| c[i] * rows[(i, j)]);
        linalg::sym_abs_max_eig(rows.tr_mul(&scaled))
    } else {
        linalg::sym_tensor_norm(rows, c, order)
    }
}

fn split(x: &DVector<f64>, n1: usize) -> (DVector<f64>, DVector<f64>) {
    (
        x.rows(0, n1).into_owned(),
        x.rows(n1, x.len() - n1).into_owned(),
    )
}

/// `log(1 + eᶻ)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Coefficients (in powers of `u = σ(−z)`) of the `k`-th derivative of
/// `φ(z) = log(1 + e^{−z})`, using `du/dz = −u(1−u)`.
fn logistic_derivative_poly(k: u32) -> Vec<f64> {
    // φ' = −u
    let mut poly = vec![0.0, -1.0];
    for _ in 1..k {
        // d/dz P(u) = P'(u)·(−u + u²)
        let deriv: Vec<f64> = (1..poly.len()).map(|i| i as f64 * poly[i]).collect();
        let mut next = vec![0.0; deriv.len() + 2];
        for (i, &c) in deriv.iter().enumerate() {
            next[i + 1] -= c;
            next[i + 2] += c;
        }
        poly = next;
    }
    poly
}

fn eval_poly(poly: &[f64], u: f64) -> f64 {
    poly.iter().rev().fold(0.0, |acc, &c| acc * u + c)
}

fn check_finite_mat(a: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} has non-finite entries")))
    }
}

fn check_finite_vec(b: &DVector<f64>, what: &str) -> Result<()> {
    if b.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} has non-finite entries")))
    }
}

/// `f(x) = ‖Ax − b‖²`.
pub fn make_quadratic(a: DMatrix<f64>, b: DVector<f64>) -> Result<Objective> {
    if a.nrows() != b.len() || a.ncols() == 0 {
        return Err(Error::InvalidInput(format!(
            "quadratic: A is {}x{}, b has length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    check_finite_mat(&a, "A")?;
    check_finite_vec(&b, "b")?;
    // The gradient is 2λmax(AᵀA)-Lipschitz. The flatness constant is twice
    // that: ‖∇f‖² / (f − f*) reaches 4λmax along the top eigenvector.
    let hess_norm = 2.0 * linalg::lambda_max_gram(&a, POWER_ITER_TOL);
    let xs = linalg::min_norm_lstsq(&a, &b);
    let fs = (&a * &xs - &b).norm_squared();
    Ok(Objective {
        name: "quadratic".into(),
        dim: a.ncols(),
        optimum_value: Some(fs),
        optimum_point: Some(xs),
        flatness_p: 2,
        lipschitz_l: Some(2.0 * hess_norm),
        deriv_bound_m: Some(hess_norm),
        kind: Kind::Quadratic { a, b, hess_norm },
    })
}

/// `f(x) = Σᵢ (Aᵢx − bᵢ)^power` for even `power ≥ 2`.
///
/// The optimum is recorded only when `Ax = b` is solvable, in which case
/// `f* = 0`. The declared flatness constant for `i = 1` is
/// `(power·‖A‖₂)^{power/(power−1)}`, from `‖r^{∘(p−1)}‖₂ ≤ ‖r‖_p^{p−1}`.
pub fn make_lp_regression(a: DMatrix<f64>, b: DVector<f64>, power: u32) -> Result<Objective> {
    if power < 2 || power % 2 != 0 {
        return Err(Error::InvalidInput(format!(
            "lp regression power must be even and >= 2, got {power}"
        )));
    }
    if a.nrows() != b.len() || a.ncols() == 0 {
        return Err(Error::InvalidInput(format!(
            "lp regression: A is {}x{}, b has length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    check_finite_mat(&a, "A")?;
    check_finite_vec(&b, "b")?;
    let norm_a = linalg::spectral_norm(&a);
    let p = power as f64;
    let factorial: f64 = (1..=power).map(|k| k as f64).product();
    let xs = linalg::min_norm_lstsq(&a, &b);
    let resid = (&a * &xs - &b).amax();
    let scale = b.amax().max(1.0);
    let consistent = resid <= 1e-9 * scale;
    Ok(Objective {
        name: format!("l{power}"),
        dim: a.ncols(),
        optimum_value: consistent.then_some(0.0),
        optimum_point: consistent.then_some(xs),
        flatness_p: power,
        lipschitz_l: Some((p * norm_a).powf(p / (p - 1.0))),
        deriv_bound_m: Some(factorial * norm_a.powi(power as i32)),
        kind: Kind::LpRegression { a, b, power },
    })
}

/// `f(x) = Σᵢ log(1 + exp(−wᵢᵀx))` with `wᵢ = (2bᵢ−1)·rowᵢ`.
///
/// The infimum 0 stands in for `f*`; there is no optimum point.
pub fn make_logistic(data: &SeparableDataset) -> Result<Objective> {
    if data.labels.len() != data.features.nrows() {
        return Err(Error::InvalidInput(format!(
            "logistic: {} labels for {} rows",
            data.labels.len(),
            data.features.nrows()
        )));
    }
    check_finite_mat(&data.features, "features")?;
    let w = data.signed_features();
    Ok(Objective {
        name: "logistic".into(),
        dim: w.ncols(),
        optimum_value: Some(0.0),
        optimum_point: None,
        flatness_p: 2,
        lipschitz_l: None,
        deriv_bound_m: None,
        kind: Kind::Logistic { w },
    })
}

/// `f([x₁, x₂]) = ‖Ax₁ − b‖² + ‖Cx₂ − d‖₄⁴`.
pub fn make_composite(
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: DMatrix<f64>,
    d: DVector<f64>,
) -> Result<Objective> {
    let quad = make_quadratic(a, b)?;
    let lp = make_lp_regression(c, d, 4)?;
    let dim = quad.dim + lp.dim;
    let (optimum_value, optimum_point) = match (
        quad.optimum_value,
        lp.optimum_value,
        &quad.optimum_point,
        &lp.optimum_point,
    ) {
        (Some(f1), Some(f2), Some(x1), Some(x2)) => (
            Some(f1 + f2),
            Some(DVector::from_iterator(
                dim,
                x1.iter().chain(x2.iter()).cloned(),
            )),
        ),
        _ => (None, None),
    };
    let m = match (quad.deriv_bound_m, lp.deriv_bound_m) {
        (Some(m1), Some(m2)) => Some(m1.max(m2)),
        _ => None,
    };
    Ok(Objective {
        name: "composite".into(),
        dim,
        optimum_value,
        optimum_point,
        flatness_p: 2,
        lipschitz_l: None,
        deriv_bound_m: m,
        kind: Kind::Composite {
            quad: Box::new(quad),
            lp: Box::new(lp),
        },
    })
}

/// Benchmark objectives selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveName {
    Quadratic,
    L4,
    Logistic,
    Composite,
}

impl std::str::FromStr for ObjectiveName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(Self::Quadratic),
            "l4" => Ok(Self::L4),
            "logistic" => Ok(Self::Logistic),
            "composite" => Ok(Self::Composite),
            other => Err(Error::InvalidInput(format!("unknown objective '{other}'"))),
        }
    }
}

impl std::fmt::Display for ObjectiveName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Quadratic => "quadratic",
            Self::L4 => "l4",
            Self::Logistic => "logistic",
            Self::Composite => "composite",
        })
    }
}

/// Builds a named benchmark objective on a `dim × dim` seeded dataset.
///
/// The composite draws its second block from `seed + 1`.
pub fn builtin(name: ObjectiveName, dim: usize, seed: u64) -> Result<Objective> {
    let data = generate_separable_data(dim.max(2), dim, seed)?;
    match name {
        ObjectiveName::Quadratic => make_quadratic(data.features.clone(), data.targets()),
        ObjectiveName::L4 => make_lp_regression(data.features.clone(), data.targets(), 4),
        ObjectiveName::Logistic => make_logistic(&data),
        ObjectiveName::Composite => {
            let other = generate_separable_data(dim.max(2), dim, seed.wrapping_add(1))?;
            make_composite(
                data.features.clone(),
                data.targets(),
                other.features.clone(),
                other.targets(),
            )
        }
    }
}
