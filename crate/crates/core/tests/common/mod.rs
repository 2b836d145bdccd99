//! Independent reference implementations shared by the integration tests.
//! None of these call into the closed forms they are used to check.
#![allow(dead_code)]

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use smmse::estimators::smse;
use smmse::{MomentTable, SensingMatrix, SmmseEstimator};

/// Tanh-sinh nodes on `[0, 1]` as `(t, 1 - t, weight)` at step `h`.
fn tanh_sinh_nodes(h: f64) -> Vec<(f64, f64, f64)> {
    let mut nodes = Vec::new();
    let kmax = (4.0 / h).ceil() as i64;
    for k in -kmax..=kmax {
        let tau = k as f64 * h;
        let u = FRAC_PI_2 * tau.sinh();
        let t = 1.0 / (1.0 + (-2.0 * u).exp());
        let c = 1.0 / (1.0 + (2.0 * u).exp());
        let w = h * FRAC_PI_2 * tau.cosh() / (2.0 * u.cosh().powi(2));
        if w > 0.0 && t > 0.0 && c > 0.0 {
            nodes.push((t, c, w));
        }
    }
    nodes
}

/// `∫_0^1 f(t, 1 - t) dt`, halving the step until two levels agree to
/// `rel`.
pub fn tanh_sinh<F: Fn(f64, f64) -> f64>(f: F, rel: f64) -> f64 {
    let mut previous = f64::NAN;
    let mut h = 0.5;
    for _ in 0..8 {
        let value: f64 = tanh_sinh_nodes(h)
            .iter()
            .map(|&(t, c, w)| w * f(t, c))
            .sum();
        if (value - previous).abs() <= rel * value.abs() {
            return value;
        }
        previous = value;
        h /= 2.0;
    }
    previous
}

/// `∫ x^α` over the positive orthant part of `{Σ x_n^{p_n} ≤ s}`, with
/// coordinates from `k` on, integrated coordinate by coordinate. The last
/// coordinate is done in closed form.
fn orthant_integral(p: &[f64], alpha: &[u32], k: usize, s: f64) -> f64 {
    let r = s.powf(1.0 / p[k]);
    let scale = r.powi(alpha[k] as i32 + 1);
    if k + 1 == p.len() {
        return scale / (alpha[k] as f64 + 1.0);
    }
    let pk = p[k];
    let ak = alpha[k] as i32;
    scale
        * tanh_sinh(
            |t, c| {
                // 1 - t^p evaluated from the complement for accuracy near t = 1
                let rest = -(pk * (-c).ln_1p()).exp_m1();
                t.powi(ak) * orthant_integral(p, alpha, k + 1, s * rest)
            },
            1e-13,
        )
}

/// `E[x^α]` for even `α` by nested quadrature.
pub fn quadrature_moment(p: &[f64], alpha: &[u32]) -> f64 {
    assert!(alpha.iter().all(|a| a % 2 == 0));
    let zero = vec![0; p.len()];
    orthant_integral(p, alpha, 0, 1.0) / orthant_integral(p, &zero, 0, 1.0)
}

/// Expands `⟨u, x⟩^d` by repeated polynomial multiplication and integrates
/// each monomial of `x^extra ⟨u, x⟩^d`.
pub fn expanded_inner_moment(table: &MomentTable, u: &[f64], d: u32, extra: &[u32]) -> f64 {
    let n = u.len();
    let mut poly: HashMap<Vec<u32>, f64> = HashMap::from([(vec![0; n], 1.0)]);
    for _ in 0..d {
        let mut next: HashMap<Vec<u32>, f64> = HashMap::new();
        for (mono, coeff) in &poly {
            for (i, &ui) in u.iter().enumerate() {
                let mut m = mono.clone();
                m[i] += 1;
                *next.entry(m).or_default() += coeff * ui;
            }
        }
        poly = next;
    }
    poly.iter()
        .map(|(mono, coeff)| {
            let shifted: Vec<u32> = mono.iter().zip(extra).map(|(a, e)| a + e).collect();
            coeff * table.monomial_moment(&shifted.into()).unwrap()
        })
        .sum()
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Minimum ℓ1 norm over `{x : A x = y}` by enumerating every basic solution
/// supported on `M` columns.
pub fn l1_oracle(a: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let (m, n) = a.shape();
    let mut best = f64::INFINITY;
    for support in combinations(n, m) {
        let sub = a.select_columns(&support);
        let lu = sub.clone().full_piv_lu();
        if (lu.determinant()).abs() < 1e-12 {
            continue;
        }
        if let Some(z) = lu.solve(y) {
            if (&sub * &z - y).norm() <= 1e-9 * (1.0 + y.norm()) {
                best = best.min(z.iter().map(|v| v.abs()).sum());
            }
        }
    }
    best
}

/// Central differences of `smse` in every entry of `W`.
pub fn finite_difference_gradient(
    table: &MomentTable,
    a: &SensingMatrix,
    est: &SmmseEstimator,
    h: f64,
) -> DMatrix<f64> {
    let w = est.w();
    DMatrix::from_fn(w.nrows(), w.ncols(), |i, j| {
        let mut plus = w.clone();
        plus[(i, j)] += h;
        let mut minus = w.clone();
        minus[(i, j)] -= h;
        let fp = smse(table, a, &est.with_w(plus)).unwrap();
        let fm = smse(table, a, &est.with_w(minus)).unwrap();
        (fp - fm) / (2.0 * h)
    })
}

/// Well-conditioned random `M × N` matrix with entries uniform in `[-1, 1]`.
pub fn random_sensing_matrix<R: Rng>(rng: &mut R, m: usize, n: usize) -> SensingMatrix {
    loop {
        let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let sv = a.singular_values();
        if sv.min() > 0.1 * sv.max() {
            return SensingMatrix::new(a).unwrap();
        }
    }
}
