//! Linear MMSE and structured (linear map + shared polynomial) estimators
//! with their Bayesian MSE in closed form.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{condition_number, solve_spd};
use crate::moments::{CharacteristicVector, MomentTable, MultiIndex};
use crate::par;

/// Dimensionality-reducing measurement map `y = A x`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingMatrix(DMatrix<f64>);

impl SensingMatrix {
    /// Rank tolerance relative to the largest singular value.
    pub const RANK_TOLERANCE: f64 = 1e-10;

    /// Validates shape and full row rank.
    ///
    /// `M = N` is accepted so that exact-inversion configurations can be
    /// exercised; everything else requires `M < N`.
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        let (m, n) = a.shape();
        if m == 0 || m > n {
            return Err(Error::InvalidArgument(format!(
                "sensing matrix must satisfy 0 < M ≤ N, got {m}×{n}"
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "sensing matrix has non-finite entries".into(),
            ));
        }
        let sv = a.singular_values();
        let max = sv.iter().copied().fold(0.0, f64::max);
        let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
        if !(min > Self::RANK_TOLERANCE * max) {
            return Err(Error::InvalidArgument(format!(
                "sensing matrix is rank deficient (σ_min/σ_max = {:.3e})",
                min / max
            )));
        }
        Ok(Self(a))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn measure(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.0 * x
    }
}

/// Second-moment matrix `C_x = E[x xᵀ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorCovariance(DMatrix<f64>);

impl PriorCovariance {
    pub fn new(c: DMatrix<f64>) -> Result<Self> {
        if c.nrows() != c.ncols() {
            return Err(Error::InvalidArgument("covariance must be square".into()));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "covariance has non-finite entries".into(),
            ));
        }
        let asym = (&c - c.transpose()).abs().max();
        if asym > 1e-14 * c.abs().max().max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "covariance is not symmetric (max deviation {asym:.3e})"
            )));
        }
        Ok(Self(c))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }
}

/// `[C]_{ij} = E[x^{e_i + e_j}]`; diagonal because odd cross-moments vanish.
pub fn prior_covariance(table: &MomentTable) -> PriorCovariance {
    let n = table.dim();
    let c = DMatrix::from_fn(n, n, |i, j| {
        table
            .monomial_moment(&MultiIndex::pair(n, i, j))
            .expect("index built with table dimension")
    });
    PriorCovariance(c)
}

/// `W = C Aᵀ (A C Aᵀ)⁻¹`, an `N × M` matrix.
pub fn lmmse_operator(a: &SensingMatrix, c: &PriorCovariance) -> Result<DMatrix<f64>> {
    check_cov(a, c)?;
    let am = a.matrix();
    let ac = am * c.matrix();
    let gram = &ac * am.transpose();
    let condition = condition_number(&gram);
    if !(condition < 1e12) {
        return Err(Error::Singular { condition });
    }
    let x = solve_spd(&gram, &ac)?;
    let residual = (&gram * &x - &ac).norm();
    if residual > 1e-10 * ac.norm().max(f64::MIN_POSITIVE) {
        log::warn!("lmmse solve residual {residual:.3e} above 1e-10 relative");
    }
    Ok(x.transpose())
}

/// `ε(W) = tr C − 2 tr(W A C) + tr(Aᵀ Wᵀ W A C)`.
pub fn lmse(w: &DMatrix<f64>, a: &SensingMatrix, c: &PriorCovariance) -> Result<f64> {
    check_cov(a, c)?;
    check_w(w, a)?;
    let u = w * a.matrix();
    let uc = &u * c.matrix();
    let value = c.trace() - 2.0 * uc.trace() + (u.transpose() * &uc).trace();
    Ok(clamp_variance(value))
}

fn check_cov(a: &SensingMatrix, c: &PriorCovariance) -> Result<()> {
    if c.dim() != a.cols() {
        return Err(Error::Dimension {
            context: "covariance vs sensing matrix",
            expected: a.cols(),
            found: c.dim(),
        });
    }
    Ok(())
}

fn check_w(w: &DMatrix<f64>, a: &SensingMatrix) -> Result<()> {
    if w.nrows() != a.cols() {
        return Err(Error::Dimension {
            context: "operator rows",
            expected: a.cols(),
            found: w.nrows(),
        });
    }
    if w.ncols() != a.rows() {
        return Err(Error::Dimension {
            context: "operator columns",
            expected: a.rows(),
            found: w.ncols(),
        });
    }
    Ok(())
}

pub(crate) fn clamp_variance(value: f64) -> f64 {
    if value < 0.0 && value > -1e-12 {
        0.0
    } else {
        value
    }
}

/// `x̂ = T(W y)` with one polynomial `T(t) = Σ a_d t^d` shared by every
/// coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct SmmseEstimator {
    w: DMatrix<f64>,
    a: DVector<f64>,
}

impl SmmseEstimator {
    pub fn new(w: DMatrix<f64>, a: DVector<f64>) -> Result<Self> {
        if a.is_empty() {
            return Err(Error::InvalidArgument("coefficient vector is empty".into()));
        }
        if w.iter().chain(a.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "estimator has non-finite entries".into(),
            ));
        }
        Ok(Self { w, a })
    }

    /// Linear estimator `W y`, i.e. `a = e_2`.
    pub fn linear(w: DMatrix<f64>, degree: usize) -> Result<Self> {
        let mut a = DVector::zeros(degree + 1);
        if degree == 0 {
            return Err(Error::InvalidArgument(
                "linear estimator needs degree ≥ 1".into(),
            ));
        }
        a[1] = 1.0;
        Self::new(w, a)
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.a
    }

    pub fn degree(&self) -> usize {
        self.a.len() - 1
    }

    pub fn with_w(&self, w: DMatrix<f64>) -> Self {
        Self {
            w,
            a: self.a.clone(),
        }
    }

    pub fn with_coefficients(&self, a: DVector<f64>) -> Self {
        Self {
            w: self.w.clone(),
            a,
        }
    }

    /// Polynomial `T` at a scalar argument.
    pub fn nonlinearity(&self, t: f64) -> f64 {
        horner(self.a.as_slice(), t)
    }

    /// `T(W y)` applied coordinatewise.
    pub fn apply(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.w.ncols() {
            return Err(Error::Dimension {
                context: "apply",
                expected: self.w.ncols(),
                found: y.len(),
            });
        }
        Ok((&self.w * y).map(|t| self.nonlinearity(t)))
    }

    /// Versioned JSON document carrying the prior it was trained for.
    pub fn to_document(&self, p: &CharacteristicVector) -> EstimatorDocument {
        let (n, m) = self.w.shape();
        EstimatorDocument {
            version: EstimatorDocument::VERSION,
            m,
            n,
            d: self.degree(),
            p: p.as_slice().to_vec(),
            w: self.w.transpose().as_slice().to_vec(),
            a: self.a.as_slice().to_vec(),
        }
    }

    pub fn from_document(doc: &EstimatorDocument) -> Result<(Self, CharacteristicVector)> {
        if doc.version != EstimatorDocument::VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported estimator document version {}",
                doc.version
            )));
        }
        if doc.w.len() != doc.n * doc.m {
            return Err(Error::Dimension {
                context: "estimator document W",
                expected: doc.n * doc.m,
                found: doc.w.len(),
            });
        }
        if doc.a.len() != doc.d + 1 {
            return Err(Error::Dimension {
                context: "estimator document a",
                expected: doc.d + 1,
                found: doc.a.len(),
            });
        }
        let p = CharacteristicVector::new(doc.p.clone())?;
        if p.dim() != doc.n {
            return Err(Error::Dimension {
                context: "estimator document p",
                expected: doc.n,
                found: p.dim(),
            });
        }
        let w = DMatrix::from_row_slice(doc.n, doc.m, &doc.w);
        Ok((Self::new(w, DVector::from_vec(doc.a.clone()))?, p))
    }
}

/// On-disk form of an [`SmmseEstimator`]; `W` is stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorDocument {
    pub version: u32,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "D")]
    pub d: usize,
    pub p: Vec<f64>,
    #[serde(rename = "W")]
    pub w: Vec<f64>,
    pub a: Vec<f64>,
}

impl EstimatorDocument {
    pub const VERSION: u32 = 1;
}

pub(crate) fn horner(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

/// `E[xᵀV]` and `E[VᵀV]` for `U = W A`.
#[derive(Debug, Clone)]
pub struct VandermondeMoments {
    /// `N × (D+1)`, entry `(i, j) = E[x_i ⟨u_i, x⟩^j]`.
    pub x_v: DMatrix<f64>,
    /// `(D+1) × (D+1)`, entry `(i, j) = Σ_n E[⟨u_n, x⟩^{i+j}]`.
    pub vtv: DMatrix<f64>,
}

impl VandermondeMoments {
    pub fn compute(table: &MomentTable, u: &DMatrix<f64>, degree: usize) -> Result<Self> {
        check_u(table, u)?;
        let n = u.nrows();
        let rows: Vec<Result<(Vec<f64>, Vec<f64>)>> = par::map_range(n, |i| {
            let ui: Vec<f64> = u.row(i).iter().copied().collect();
            let cross = table.inner_product_series(&ui, degree as u32, &MultiIndex::unit(n, i))?;
            let power =
                table.inner_product_series(&ui, 2 * degree as u32, &MultiIndex::zeros(n))?;
            Ok((cross, power))
        });
        let mut x_v = DMatrix::zeros(n, degree + 1);
        let mut sums = vec![0.0; 2 * degree + 1];
        for (i, row) in rows.into_iter().enumerate() {
            let (cross, power) = row?;
            for j in 0..=degree {
                x_v[(i, j)] = cross[j];
            }
            for (s, v) in sums.iter_mut().zip(&power) {
                *s += v;
            }
        }
        let vtv = hankel(&sums, degree);
        Ok(Self { x_v, vtv })
    }

    /// `E[Vᵀx]`: column sums of `E[xᵀV]`.
    pub fn cross_vector(&self) -> DVector<f64> {
        DVector::from_iterator(self.x_v.ncols(), self.x_v.column_iter().map(|c| c.sum()))
    }

    /// `tr C − 2·1ᵀ(E[xᵀV] a) + aᵀ E[VᵀV] a`.
    pub fn objective(&self, trace_c: f64, a: &DVector<f64>) -> f64 {
        let cross = self.cross_vector().dot(a);
        let quad = a.dot(&(&self.vtv * a));
        clamp_variance(trace_c - 2.0 * cross + quad)
    }
}

fn hankel(sums: &[f64], degree: usize) -> DMatrix<f64> {
    DMatrix::from_fn(degree + 1, degree + 1, |i, j| sums[i + j])
}

fn check_u(table: &MomentTable, u: &DMatrix<f64>) -> Result<()> {
    if u.nrows() != table.dim() || u.ncols() != table.dim() {
        return Err(Error::Dimension {
            context: "U = W A must be N × N",
            expected: table.dim(),
            found: if u.nrows() != table.dim() {
                u.nrows()
            } else {
                u.ncols()
            },
        });
    }
    Ok(())
}

/// `E[xᵀV]` for `U = W A`.
pub fn expected_xv(table: &MomentTable, u: &DMatrix<f64>, degree: usize) -> Result<DMatrix<f64>> {
    check_u(table, u)?;
    let n = u.nrows();
    let mut out = DMatrix::zeros(n, degree + 1);
    let rows = par::map_range(n, |i| {
        let ui: Vec<f64> = u.row(i).iter().copied().collect();
        table.inner_product_series(&ui, degree as u32, &MultiIndex::unit(n, i))
    });
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row?.into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    Ok(out)
}

/// `E[VᵀV]` for `U = W A`.
pub fn expected_vtv(table: &MomentTable, u: &DMatrix<f64>, degree: usize) -> Result<DMatrix<f64>> {
    check_u(table, u)?;
    let n = u.nrows();
    let rows = par::map_range(n, |i| {
        let ui: Vec<f64> = u.row(i).iter().copied().collect();
        table.inner_product_series(&ui, 2 * degree as u32, &MultiIndex::zeros(n))
    });
    let mut sums = vec![0.0; 2 * degree + 1];
    for row in rows {
        for (s, v) in sums.iter_mut().zip(row?) {
            *s += v;
        }
    }
    Ok(hankel(&sums, degree))
}

/// Bayesian MSE `E‖x − T(W A x)‖²` of a structured estimator.
pub fn smse(table: &MomentTable, a: &SensingMatrix, est: &SmmseEstimator) -> Result<f64> {
    if table.dim() != a.cols() {
        return Err(Error::Dimension {
            context: "moment table vs sensing matrix",
            expected: a.cols(),
            found: table.dim(),
        });
    }
    check_w(est.w(), a)?;
    let u = est.w() * a.matrix();
    let moments = VandermondeMoments::compute(table, &u, est.degree())?;
    Ok(moments.objective(trace_second_moment(table), est.coefficients()))
}

/// `tr C_x = Σ_n E[x_n²]`.
pub fn trace_second_moment(table: &MomentTable) -> f64 {
    let n = table.dim();
    (0..n)
        .map(|i| {
            table
                .monomial_moment(&MultiIndex::pair(n, i, i))
                .expect("index built with table dimension")
        })
        .sum()
}

/// Tabulated nonlinearity on a uniform grid over `[-R, R]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lut {
    pub range: f64,
    pub points: Vec<(f64, f64)>,
}

impl Lut {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,T\n");
        for (t, v) in &self.points {
            s.push_str(&format!("{t},{v}\n"));
        }
        s
    }
}

/// Upper bound on `sup_{x ∈ B_p} ‖U x‖_∞`.
///
/// For `p ≤ 1` the supremum of a linear functional over `B_p` equals its
/// supremum over the cross-polytope, attained at `±e_n`, giving
/// `max_i ‖u_i‖_∞`. For isotropic `p > 1` Hölder gives `max_i ‖u_i‖_q`
/// with `1/p + 1/q = 1`, which is tight. Anisotropic `p` uses the
/// enclosing isotropic ball `B_p ⊆ B_{p_max·1}`.
pub fn lut_range(u: &DMatrix<f64>, p: &CharacteristicVector) -> f64 {
    let bound = if p.is_isotropic() {
        p.as_slice()[0]
    } else {
        p.max()
    };
    u.row_iter()
        .map(|row| {
            if bound <= 1.0 {
                row.iter().fold(0.0f64, |m, v| m.max(v.abs()))
            } else {
                let q = bound / (bound - 1.0);
                row.iter()
                    .map(|v| v.abs().powf(q))
                    .sum::<f64>()
                    .powf(1.0 / q)
            }
        })
        .fold(0.0, f64::max)
}

pub fn export_lut(
    est: &SmmseEstimator,
    a: &SensingMatrix,
    p: &CharacteristicVector,
    num_entries: usize,
) -> Result<Lut> {
    if num_entries < 2 {
        return Err(Error::InvalidArgument(
            "a LUT needs at least two entries".into(),
        ));
    }
    check_w(est.w(), a)?;
    if p.dim() != a.cols() {
        return Err(Error::Dimension {
            context: "export_lut p",
            expected: a.cols(),
            found: p.dim(),
        });
    }
    let u = est.w() * a.matrix();
    let range = lut_range(&u, p);
    let steps = (num_entries - 1) as f64;
    let points = (0..num_entries)
        .map(|k| {
            let t = if k == num_entries - 1 {
                range
            } else {
                -range + 2.0 * range * k as f64 / steps
            };
            (t, est.nonlinearity(t))
        })
        .collect();
    Ok(Lut { range, points })
}
