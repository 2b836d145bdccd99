//! Closed-form statistics of the uniform distribution on
//! `B_p = { x : Σ |x_n|^{p_n} ≤ 1 }`.
//!
//! Every Gamma ratio is assembled from [`log_gamma`](crate::special::log_gamma)
//! terms and exponentiated once at the end.
//!
//! Order bookkeeping for a degree-`D` polynomial estimator: the Vandermonde
//! Gram matrix needs `⟨u, x⟩^{2D}`, the cross term `x_i ⟨u, x⟩^D` (order
//! `D + 1`), the coefficient part of the gradient `x_i x_j ⟨u, x⟩^{D-1}`
//! (order `D + 1`) and the quadratic part `x_j ⟨u, x⟩^{2D-1}` (order `2D`).
//! No statistic of order above `2D` is ever requested, which is why the
//! table fills itself on demand instead of being sized up front.

use std::collections::HashMap;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{ln_factorial, ln_gamma_positive, multinomial};

/// Per-coordinate exponents `p_n > 0` of a generalized unit ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CharacteristicVector(Vec<f64>);

impl CharacteristicVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidArgument(
                "characteristic vector must have at least one entry".into(),
            ));
        }
        if let Some(bad) = entries.iter().find(|p| !(**p > 0.0) || !p.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "characteristic vector entries must be finite and positive, got {bad}"
            )));
        }
        Ok(Self(entries))
    }

    /// `p · 1` in dimension `n`.
    pub fn isotropic(p: f64, n: usize) -> Result<Self> {
        Self::new(vec![p; n])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_isotropic(&self) -> bool {
        self.0.iter().all(|&p| p == self.0[0])
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::MIN, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::MAX, f64::min)
    }

    /// `Σ |x_n|^{p_n}`; a point lies in the ball iff this is at most one.
    pub fn gauge(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.0)
            .map(|(&xn, &pn)| xn.abs().powf(pn))
            .sum()
    }
}

impl TryFrom<Vec<f64>> for CharacteristicVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<CharacteristicVector> for Vec<f64> {
    fn from(p: CharacteristicVector) -> Self {
        p.0
    }
}

/// Exponent tuple `α ∈ N₀^N` of the monomial `x^α`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        Self(exponents)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0; n])
    }

    /// Standard basis index `e_i`.
    pub fn unit(n: usize, i: usize) -> Self {
        let mut v = vec![0; n];
        v[i] = 1;
        Self(v)
    }

    /// `e_i + e_j` (equal to `2 e_i` when `i == j`).
    pub fn pair(n: usize, i: usize, j: usize) -> Self {
        let mut v = vec![0; n];
        v[i] += 1;
        v[j] += 1;
        Self(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn order(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn has_odd(&self) -> bool {
        self.0.iter().any(|a| a % 2 == 1)
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    fn plus(&self, other: &MultiIndex) -> MultiIndex {
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }
}

impl From<Vec<u32>> for MultiIndex {
    fn from(v: Vec<u32>) -> Self {
        Self(v)
    }
}

/// `ln vol(B_p)`.
pub fn log_ball_volume(p: &CharacteristicVector) -> f64 {
    let n = p.dim() as f64;
    let inv_sum: f64 = p.as_slice().iter().map(|&pn| 1.0 / pn).sum();
    n * std::f64::consts::LN_2 - p.as_slice().iter().map(|pn| pn.ln()).sum::<f64>()
        + p.as_slice()
            .iter()
            .map(|&pn| ln_gamma_positive(1.0 / pn))
            .sum::<f64>()
        - ln_gamma_positive(1.0 + inv_sum)
}

/// All `α ∈ N₀^n` with `Σ α = d`, in reverse-lexicographic order.
///
/// The first component runs from `d` down to `0`, and recursively for the
/// remaining ones, so `(n = 2, d = 2)` yields `(2,0), (1,1), (0,2)`.
pub fn enumerate_multi_indices(n: usize, d: u32) -> Vec<MultiIndex> {
    assert!(n >= 1, "multi-index dimension must be positive");
    let mut out = Vec::new();
    let mut current = vec![0u32; n];
    fill_reverse_lex(&mut current, 0, d, &mut out);
    out
}

fn fill_reverse_lex(current: &mut [u32], pos: usize, remaining: u32, out: &mut Vec<MultiIndex>) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        out.push(MultiIndex(current.to_vec()));
        return;
    }
    for k in (0..=remaining).rev() {
        current[pos] = k;
        fill_reverse_lex(current, pos + 1, remaining - k, out);
    }
    current[pos] = 0;
}

/// Coordinates sharing the same exponent `p`. The uniform law couples
/// coordinates only through `Σ (β_n + 1) / p_n`, so within a group the
/// coupling depends on the group's total order alone.
#[derive(Debug, Clone)]
struct PGroup {
    p: f64,
    members: Vec<usize>,
}

/// Memoizing evaluator of normalized moments `E[x^α]` for `x ~ U(B_p)`.
///
/// Lookups take a read lock; misses compute outside the lock and insert
/// under a short write lock, so the table can be shared across threads.
#[derive(Debug)]
pub struct MomentTable {
    p: CharacteristicVector,
    log_volume: f64,
    /// `Σ ln Γ(1/p_n) − ln Γ(1 + Σ 1/p_n)`, the α = 0 value of the ratio.
    log_normalizer: f64,
    groups: Vec<PGroup>,
    cache: RwLock<HashMap<MultiIndex, f64>>,
}

impl MomentTable {
    pub fn new(p: CharacteristicVector) -> Self {
        let inv_sum: f64 = p.as_slice().iter().map(|&pn| 1.0 / pn).sum();
        let log_normalizer = p
            .as_slice()
            .iter()
            .map(|&pn| ln_gamma_positive(1.0 / pn))
            .sum::<f64>()
            - ln_gamma_positive(1.0 + inv_sum);

        let mut groups: Vec<PGroup> = Vec::new();
        for (n, &pn) in p.as_slice().iter().enumerate() {
            match groups.iter_mut().find(|g| g.p == pn) {
                Some(g) => g.members.push(n),
                None => groups.push(PGroup {
                    p: pn,
                    members: vec![n],
                }),
            }
        }

        Self {
            log_volume: log_ball_volume(&p),
            p,
            log_normalizer,
            groups,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn dim(&self) -> usize {
        self.p.dim()
    }

    pub fn p(&self) -> &CharacteristicVector {
        &self.p
    }

    pub fn log_volume(&self) -> f64 {
        self.log_volume
    }

    /// Number of memoized entries.
    pub fn cached_len(&self) -> usize {
        self.cache.read().expect("moment cache poisoned").len()
    }

    fn check_dim(&self, context: &'static str, found: usize) -> Result<()> {
        if found != self.dim() {
            return Err(Error::Dimension {
                context,
                expected: self.dim(),
                found,
            });
        }
        Ok(())
    }

    /// `E[x^α]`. Zero whenever some `α_n` is odd.
    pub fn monomial_moment(&self, alpha: &MultiIndex) -> Result<f64> {
        self.check_dim("monomial_moment", alpha.dim())?;
        Ok(self.moment_unchecked(alpha))
    }

    fn moment_unchecked(&self, alpha: &MultiIndex) -> f64 {
        if alpha.has_odd() {
            return 0.0;
        }
        if alpha.order() == 0 {
            return 1.0;
        }
        if let Some(&v) = self.cache.read().expect("moment cache poisoned").get(alpha) {
            return v;
        }
        let value = self.log_moment_even(alpha.as_slice()).exp();
        self.cache
            .write()
            .expect("moment cache poisoned")
            .insert(alpha.clone(), value);
        value
    }

    /// `ln E[x^α]` for an all-even α.
    fn log_moment_even(&self, alpha: &[u32]) -> f64 {
        let p = self.p.as_slice();
        let mut num = 0.0;
        let mut shifted = 1.0;
        for (&a, &pn) in alpha.iter().zip(p) {
            let arg = (a as f64 + 1.0) / pn;
            num += ln_gamma_positive(arg);
            shifted += arg;
        }
        num - ln_gamma_positive(shifted) - self.log_normalizer
    }

    /// `E[x^extra · ⟨u, x⟩^d]` by direct multinomial expansion over all
    /// `‖α‖₁ = d`.
    pub fn inner_product_moment(&self, u: &[f64], d: u32, extra: &MultiIndex) -> Result<f64> {
        self.check_dim("inner_product_moment (u)", u.len())?;
        self.check_dim("inner_product_moment (extra)", extra.dim())?;
        let mut total = 0.0;
        for alpha in enumerate_multi_indices(self.dim(), d) {
            let shifted = alpha.plus(extra);
            if shifted.has_odd() {
                continue;
            }
            let mut monomial = 1.0;
            for (&un, &an) in u.iter().zip(alpha.as_slice()) {
                monomial *= un.powi(an as i32);
            }
            if monomial == 0.0 {
                continue;
            }
            total += multinomial(alpha.as_slice()) * monomial * self.moment_unchecked(&shifted);
        }
        Ok(total)
    }

    /// `E[x^extra · ⟨u, x⟩^d]` for every `d = 0..=max_degree` at once.
    ///
    /// Same quantity as [`inner_product_moment`](Self::inner_product_moment)
    /// evaluated through a different route: per-coordinate generating
    /// sequences are convolved inside each group of equal `p_n`, and the
    /// coupling Gamma term is applied per composition of the total order
    /// across groups. Everything runs on signed logarithms, so no
    /// intermediate Gamma value is ever formed. Cost is `O(N · max_degree²)`
    /// for isotropic `p`.
    pub fn inner_product_series(
        &self,
        u: &[f64],
        max_degree: u32,
        extra: &MultiIndex,
    ) -> Result<Vec<f64>> {
        self.check_dim("inner_product_series (u)", u.len())?;
        self.check_dim("inner_product_series (extra)", extra.dim())?;
        let dmax = max_degree as usize;
        let extra = extra.as_slice();

        // Per group: P_g(m) = Σ_{Σ k_n = m} Π c_n(k_n),
        // c_n(k) = u_n^k Γ((k + e_n + 1)/p) / k!  when k + e_n is even.
        let group_series: Vec<Vec<SignedLog>> = self
            .groups
            .iter()
            .map(|g| {
                let mut acc: Option<Vec<SignedLog>> = None;
                for &n in &g.members {
                    let seq = coordinate_sequence(u[n], extra[n], g.p, dmax);
                    acc = Some(match acc {
                        None => seq,
                        Some(prev) => convolve(&prev, &seq, dmax),
                    });
                }
                acc.expect("group has members")
            })
            .collect();

        // Σ over members of (e_n + 1) / p, the order-independent part of the
        // coupling argument.
        let base_shift: f64 = self
            .groups
            .iter()
            .map(|g| {
                g.members
                    .iter()
                    .map(|&n| (extra[n] as f64 + 1.0) / g.p)
                    .sum::<f64>()
            })
            .sum();

        let mut out = Vec::with_capacity(dmax + 1);
        for d in 0..=max_degree {
            let mut terms = Vec::new();
            if self.groups.len() == 1 {
                let g = &self.groups[0];
                let t = group_series[0][d as usize];
                if !t.is_zero() {
                    let coupling = ln_gamma_positive(1.0 + base_shift + d as f64 / g.p);
                    terms.push(t.scale_ln(-coupling));
                }
            } else {
                for split in enumerate_multi_indices(self.groups.len(), d) {
                    let mut prod = SignedLog::ONE;
                    let mut arg = 1.0 + base_shift;
                    for (gi, &m) in split.as_slice().iter().enumerate() {
                        prod = prod.mul(group_series[gi][m as usize]);
                        if prod.is_zero() {
                            break;
                        }
                        arg += m as f64 / self.groups[gi].p;
                    }
                    if !prod.is_zero() {
                        terms.push(prod.scale_ln(-ln_gamma_positive(arg)));
                    }
                }
            }
            let sum = SignedLog::sum(&terms);
            out.push(sum.scale_ln(ln_factorial(d) - self.log_normalizer).to_f64());
        }
        Ok(out)
    }
}

fn coordinate_sequence(u: f64, extra: u32, p: f64, dmax: usize) -> Vec<SignedLog> {
    let ln_u = u.abs().ln();
    (0..=dmax)
        .map(|k| {
            if (k as u32 + extra) % 2 == 1 {
                return SignedLog::ZERO;
            }
            let ln_gamma = ln_gamma_positive((k as f64 + extra as f64 + 1.0) / p);
            if k == 0 {
                return SignedLog {
                    sign: 1.0,
                    ln: ln_gamma,
                };
            }
            if u == 0.0 {
                return SignedLog::ZERO;
            }
            let sign = if u < 0.0 && k % 2 == 1 { -1.0 } else { 1.0 };
            SignedLog {
                sign,
                ln: k as f64 * ln_u + ln_gamma - ln_factorial(k as u32),
            }
        })
        .collect()
}

fn convolve(a: &[SignedLog], b: &[SignedLog], dmax: usize) -> Vec<SignedLog> {
    let mut terms = Vec::with_capacity(dmax + 1);
    (0..=dmax)
        .map(|m| {
            terms.clear();
            for j in 0..=m {
                let t = a[j].mul(b[m - j]);
                if !t.is_zero() {
                    terms.push(t);
                }
            }
            SignedLog::sum(&terms)
        })
        .collect()
}

/// A real number stored as `sign · exp(ln)`.
#[derive(Debug, Clone, Copy)]
struct SignedLog {
    sign: f64,
    ln: f64,
}

impl SignedLog {
    const ZERO: SignedLog = SignedLog {
        sign: 0.0,
        ln: f64::NEG_INFINITY,
    };
    const ONE: SignedLog = SignedLog { sign: 1.0, ln: 0.0 };

    fn is_zero(self) -> bool {
        self.sign == 0.0
    }

    fn mul(self, other: SignedLog) -> SignedLog {
        if self.is_zero() || other.is_zero() {
            return SignedLog::ZERO;
        }
        SignedLog {
            sign: self.sign * other.sign,
            ln: self.ln + other.ln,
        }
    }

    fn scale_ln(self, delta: f64) -> SignedLog {
        if self.is_zero() {
            return self;
        }
        SignedLog {
            sign: self.sign,
            ln: self.ln + delta,
        }
    }

    /// Sum in a fixed order with a max shift.
    fn sum(terms: &[SignedLog]) -> SignedLog {
        let peak = terms
            .iter()
            .filter(|t| !t.is_zero())
            .map(|t| t.ln)
            .fold(f64::NEG_INFINITY, f64::max);
        if peak == f64::NEG_INFINITY {
            return SignedLog::ZERO;
        }
        let s: f64 = terms
            .iter()
            .filter(|t| !t.is_zero())
            .map(|t| t.sign * (t.ln - peak).exp())
            .sum();
        if s == 0.0 {
            return SignedLog::ZERO;
        }
        SignedLog {
            sign: s.signum(),
            ln: peak + s.abs().ln(),
        }
    }

    fn to_f64(self) -> f64 {
        if self.is_zero() {
            0.0
        } else {
            self.sign * self.ln.exp()
        }
    }
}
