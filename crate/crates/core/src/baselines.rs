//! Basis pursuit `min ‖x‖₁ s.t. A x = y`, the ℓ1 reference decoder.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::SensingMatrix;

/// Largest `N` for which the exhaustive vertex solver is used as a fallback.
pub const EXACT_FALLBACK_MAX_N: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisPursuitConfig {
    pub max_iterations: usize,
    pub rho: f64,
    pub primal_tolerance: f64,
    pub dual_tolerance: f64,
    /// Fall back to vertex enumeration (for `N ≤ 12`) when ADMM stalls.
    pub exact_fallback: bool,
}

impl Default for BasisPursuitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100_000,
            rho: 1.0,
            primal_tolerance: 1e-10,
            dual_tolerance: 1e-10,
            exact_fallback: true,
        }
    }
}

impl BasisPursuitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0
            || !(self.rho > 0.0)
            || !(self.primal_tolerance > 0.0)
            || !(self.dual_tolerance > 0.0)
        {
            return Err(Error::Config(
                "basis pursuit parameters must all be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum L1Method {
    Admm,
    /// ADMM followed by an exact solve on the detected support.
    AdmmPolished,
    VertexEnumeration,
}

#[derive(Debug, Clone)]
pub struct L1Solution {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub method: L1Method,
}

fn soft_threshold(v: f64, kappa: f64) -> f64 {
    if v > kappa {
        v - kappa
    } else if v < -kappa {
        v + kappa
    } else {
        0.0
    }
}

fn l1(x: &DVector<f64>) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

/// Feasibility bound `1e-8 · (1 + ‖y‖₂)`.
pub fn feasibility_tolerance(y: &DVector<f64>) -> f64 {
    1e-8 * (1.0 + y.norm())
}

/// Solves basis pursuit by ADMM on the splitting `x = z`, with `x` kept on
/// the affine set `{A x = y}` and `z` absorbing the ℓ1 term.
pub fn l1_minimize(
    a: &SensingMatrix,
    y: &DVector<f64>,
    config: &BasisPursuitConfig,
) -> Result<L1Solution> {
    config.validate()?;
    let am = a.matrix();
    let (m, n) = am.shape();
    if y.len() != m {
        return Err(Error::Dimension {
            context: "l1_minimize y",
            expected: m,
            found: y.len(),
        });
    }
    if y.iter().all(|v| *v == 0.0) {
        return Ok(L1Solution {
            x: DVector::zeros(n),
            iterations: 0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            method: L1Method::Admm,
        });
    }

    let gram = am * am.transpose();
    let gram_lu = gram.clone().lu();
    let project = |v: &DVector<f64>| -> DVector<f64> {
        let r = am * v - y;
        let s = gram_lu.solve(&r).expect("A has full row rank");
        v - am.transpose() * s
    };

    let kappa = 1.0 / config.rho;
    let mut x = project(&DVector::zeros(n));
    let mut z = x.clone();
    let mut u = DVector::zeros(n);
    let mut primal = f64::INFINITY;
    let mut dual = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < config.max_iterations {
        iterations += 1;
        x = project(&(&z - &u));
        let z_prev = z.clone();
        z = (&x + &u).map(|v| soft_threshold(v, kappa));
        u += &x - &z;
        primal = (&x - &z).norm();
        dual = config.rho * (&z - &z_prev).norm();
        let scale = 1.0 + x.norm().max(z.norm());
        if primal <= config.primal_tolerance * scale
            && dual <= config.dual_tolerance * (1.0 + config.rho * u.norm())
        {
            converged = true;
            break;
        }
    }

    if !converged {
        if config.exact_fallback && n <= EXACT_FALLBACK_MAX_N {
            log::debug!("ADMM stalled after {iterations} iterations, using vertex enumeration");
            let x = l1_vertex_enumeration(a, y)?;
            return finish(
                a,
                y,
                x,
                iterations,
                primal,
                dual,
                L1Method::VertexEnumeration,
            );
        }
        return Err(Error::IterationLimit {
            iterations,
            primal,
            dual,
        });
    }

    let mut method = L1Method::Admm;
    if let Some(polished) = polish(am, y, &z) {
        if l1(&polished) <= l1(&x) {
            x = polished;
            method = L1Method::AdmmPolished;
        }
    }
    finish(a, y, x, iterations, primal, dual, method)
}

fn finish(
    a: &SensingMatrix,
    y: &DVector<f64>,
    x: DVector<f64>,
    iterations: usize,
    primal: f64,
    dual: f64,
    method: L1Method,
) -> Result<L1Solution> {
    let residual = (a.matrix() * &x - y).norm();
    if !(residual <= feasibility_tolerance(y)) {
        return Err(Error::Infeasible { residual });
    }
    Ok(L1Solution {
        x,
        iterations,
        primal_residual: primal,
        dual_residual: dual,
        method,
    })
}

/// Exact solve on the `M` largest entries of the ADMM estimate.
fn polish(a: &DMatrix<f64>, y: &DVector<f64>, z: &DVector<f64>) -> Option<DVector<f64>> {
    let (m, n) = a.shape();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| z[j].abs().total_cmp(&z[i].abs()).then(i.cmp(&j)));
    let mut support = order[..m].to_vec();
    support.sort_unstable();
    solve_on_support(a, y, &support)
}

fn solve_on_support(a: &DMatrix<f64>, y: &DVector<f64>, support: &[usize]) -> Option<DVector<f64>> {
    let n = a.ncols();
    let sub = a.select_columns(support);
    let sv = sub.singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 1e-10 * max) {
        return None;
    }
    let xs = sub.lu().solve(y)?;
    let mut x = DVector::zeros(n);
    for (k, &idx) in support.iter().enumerate() {
        x[idx] = xs[k];
    }
    Some(x)
}

/// Exact basis pursuit by enumerating every `M`-column basis.
///
/// An optimum of the LP lies at a vertex with at most `M` nonzeros, so the
/// best basic solution is optimal.
pub fn l1_vertex_enumeration(a: &SensingMatrix, y: &DVector<f64>) -> Result<DVector<f64>> {
    let am = a.matrix();
    let (m, n) = am.shape();
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut support: Vec<usize> = (0..m).collect();
    loop {
        if let Some(x) = solve_on_support(am, y, &support) {
            let obj = l1(&x);
            if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                best = Some((obj, x));
            }
        }
        // next combination in lexicographic order
        let mut k = m;
        loop {
            if k == 0 {
                return best
                    .map(|(_, x)| x)
                    .ok_or(Error::Infeasible { residual: y.norm() });
            }
            k -= 1;
            if support[k] < n - m + k {
                support[k] += 1;
                for j in (k + 1)..m {
                    support[j] = support[j - 1] + 1;
                }
                break;
            }
        }
    }
}
