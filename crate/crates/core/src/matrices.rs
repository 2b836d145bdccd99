//! Sensing-matrix families: equiangular tight frames, subsampled orthogonal
//! matrices and row-normalized Gaussian matrices.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::SensingMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixFamily {
    #[serde(alias = "etf")]
    EquiangularTightFrame,
    #[serde(alias = "orthogonal")]
    SubsampledOrthogonal,
    #[serde(alias = "gaussian")]
    NormalizedGaussian,
}

impl MatrixFamily {
    /// Short label used in file names and CSV rows.
    pub fn tag(self) -> &'static str {
        match self {
            MatrixFamily::EquiangularTightFrame => "etf",
            MatrixFamily::SubsampledOrthogonal => "orthogonal",
            MatrixFamily::NormalizedGaussian => "gaussian",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "etf" | "equiangular_tight_frame" => Some(MatrixFamily::EquiangularTightFrame),
            "orthogonal" | "subsampled_orthogonal" => Some(MatrixFamily::SubsampledOrthogonal),
            "gaussian" | "normalized_gaussian" => Some(MatrixFamily::NormalizedGaussian),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSpec {
    pub family: MatrixFamily,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    /// Accept a numerically optimized frame when no exact ETF construction
    /// is known for `(M, N)`.
    #[serde(default)]
    pub allow_approximate: bool,
}

impl MatrixSpec {
    pub fn new(family: MatrixFamily, m: usize, n: usize, seed: u64) -> Self {
        Self {
            family,
            m,
            n,
            seed,
            allow_approximate: false,
        }
    }
}

/// A constructed matrix together with how it was obtained.
#[derive(Debug, Clone)]
pub struct BuiltMatrix {
    pub spec: MatrixSpec,
    pub matrix: SensingMatrix,
    /// True when the ETF came out of the numerical approximation.
    pub approximate: bool,
}

/// Welch bound `√(N−M) / √(M(N−1))`.
pub fn welch_bound(m: usize, n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    ((n - m) as f64 / (m as f64 * (n - 1) as f64)).sqrt()
}

/// Largest `|⟨a_i, a_j⟩|` over distinct normalized columns.
pub fn coherence(a: &DMatrix<f64>) -> f64 {
    let n = a.ncols();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let ci = a.column(i);
            let cj = a.column(j);
            worst = worst.max((ci.dot(&cj) / (ci.norm() * cj.norm())).abs());
        }
    }
    worst
}

pub fn build(spec: &MatrixSpec) -> Result<BuiltMatrix> {
    let (m, n) = (spec.m, spec.n);
    if m == 0 || m > n {
        return Err(Error::Construction(format!(
            "matrix families need 0 < M ≤ N, got {m}×{n}"
        )));
    }
    let (raw, approximate) = match spec.family {
        MatrixFamily::EquiangularTightFrame => match exact_etf(m, n) {
            Some(a) => (a, false),
            None if spec.allow_approximate => (approximate_etf(m, n, spec.seed), true),
            None => {
                return Err(Error::Construction(format!(
                    "no exact real ETF construction for ({m}, {n}); set allow_approximate"
                )))
            }
        },
        MatrixFamily::SubsampledOrthogonal => (subsampled_orthogonal(m, n, spec.seed), false),
        MatrixFamily::NormalizedGaussian => (normalized_gaussian(m, n, spec.seed), false),
    };
    verify(spec.family, &raw, approximate)?;
    Ok(BuiltMatrix {
        spec: spec.clone(),
        matrix: SensingMatrix::new(raw)?,
        approximate,
    })
}

/// Re-checks the structural property each family promises.
fn verify(family: MatrixFamily, a: &DMatrix<f64>, approximate: bool) -> Result<()> {
    let (m, n) = a.shape();
    let fail = |what: String| Err(Error::Construction(what));
    match family {
        MatrixFamily::EquiangularTightFrame => {
            for (j, col) in a.column_iter().enumerate() {
                if (col.norm() - 1.0).abs() > 1e-12 {
                    return fail(format!("ETF column {j} has norm {}", col.norm()));
                }
            }
            if approximate {
                return Ok(());
            }
            let mu = welch_bound(m, n);
            let gram = a.transpose() * a;
            for i in 0..n {
                for j in (i + 1)..n {
                    if (gram[(i, j)].abs() - mu).abs() > 1e-8 {
                        return fail(format!(
                            "ETF columns {i},{j}: |⟨a_i,a_j⟩| = {} ≠ {mu}",
                            gram[(i, j)].abs()
                        ));
                    }
                }
            }
            let frame = a * a.transpose() - DMatrix::identity(m, m) * (n as f64 / m as f64);
            if frame.abs().max() > 1e-8 {
                return fail("ETF is not tight".into());
            }
        }
        MatrixFamily::SubsampledOrthogonal => {
            let dev = (a * a.transpose() - DMatrix::identity(m, m)).abs().max();
            if dev > 1e-12 {
                return fail(format!("A Aᵀ deviates from I by {dev:.3e}"));
            }
        }
        MatrixFamily::NormalizedGaussian => {
            for (i, row) in a.row_iter().enumerate() {
                if (row.norm() - 1.0).abs() > 1e-14 {
                    return fail(format!("row {i} has norm {}", row.norm()));
                }
            }
        }
    }
    Ok(())
}

fn exact_etf(m: usize, n: usize) -> Option<DMatrix<f64>> {
    if m == n {
        return Some(DMatrix::identity(m, n));
    }
    if m == 1 {
        return Some(DMatrix::from_element(1, n, 1.0));
    }
    if m + 1 == n {
        return Some(simplex_frame(n));
    }
    if (m, n) == (3, 6) {
        return Some(icosahedral_frame());
    }
    None
}

/// The six diagonals of the icosahedron, normalized.
fn icosahedral_frame() -> DMatrix<f64> {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let norm = (1.0 + phi * phi).sqrt();
    #[rustfmt::skip]
    let cols = [
        [0.0, 1.0, phi],
        [0.0, 1.0, -phi],
        [1.0, phi, 0.0],
        [1.0, -phi, 0.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, 1.0],
    ];
    DMatrix::from_fn(3, 6, |i, j| cols[j][i] / norm)
}

/// `N` unit vectors in `R^{N−1}` with pairwise inner product `−1/(N−1)`,
/// from the Helmert basis of `1^⊥`.
fn simplex_frame(n: usize) -> DMatrix<f64> {
    let scale = (n as f64 / (n - 1) as f64).sqrt();
    DMatrix::from_fn(n - 1, n, |r, c| {
        let k = (r + 1) as f64;
        let h = if c <= r {
            1.0
        } else if c == r + 1 {
            -k
        } else {
            0.0
        };
        scale * h / (k * (k + 1.0)).sqrt()
    })
}

/// Alternating projection between Gram matrices with bounded off-diagonal
/// entries and Gram matrices of unit-norm tight frames.
fn approximate_etf(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
    let mu = welch_bound(m, n);
    let mut a = normalized_columns(gaussian(m, n, seed));
    for _ in 0..5000 {
        let mut g = a.transpose() * &a;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    g[(i, j)] = 1.0;
                } else {
                    g[(i, j)] = g[(i, j)].clamp(-mu, mu);
                }
            }
        }
        let eig = SymmetricEigen::new(g);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
        let scale = (n as f64 / m as f64).sqrt();
        let frame = DMatrix::from_fn(m, n, |r, c| scale * eig.eigenvectors[(c, order[r])]);
        a = normalized_columns(frame);
    }
    a
}

fn normalized_columns(mut a: DMatrix<f64>) -> DMatrix<f64> {
    for mut col in a.column_iter_mut() {
        let norm = col.norm();
        col /= norm;
    }
    a
}

fn gaussian(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // fill row by row so the draw order is the reading order
    let data: Vec<f64> = (0..m * n)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    DMatrix::from_row_slice(m, n, &data)
}

fn subsampled_orthogonal(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
    let q = gaussian(n, n, seed).qr().q();
    q.rows(0, m).into_owned()
}

fn normalized_gaussian(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
    let mut a = gaussian(m, n, seed);
    for mut row in a.row_iter_mut() {
        let norm = row.norm();
        row /= norm;
    }
    a
}

/// JSON form of a sensing matrix; `data` is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<MatrixFamily>,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub approximate: bool,
    pub data: Vec<f64>,
}

impl MatrixDocument {
    pub fn from_matrix(a: &SensingMatrix) -> Self {
        Self {
            family: None,
            m: a.rows(),
            n: a.cols(),
            seed: None,
            approximate: false,
            data: a.matrix().transpose().as_slice().to_vec(),
        }
    }

    pub fn from_built(b: &BuiltMatrix) -> Self {
        Self {
            family: Some(b.spec.family),
            seed: Some(b.spec.seed),
            approximate: b.approximate,
            ..Self::from_matrix(&b.matrix)
        }
    }

    pub fn to_matrix(&self) -> Result<SensingMatrix> {
        if self.data.len() != self.m * self.n {
            return Err(Error::Dimension {
                context: "matrix document data",
                expected: self.m * self.n,
                found: self.data.len(),
            });
        }
        SensingMatrix::new(DMatrix::from_row_slice(self.m, self.n, &self.data))
    }
}
