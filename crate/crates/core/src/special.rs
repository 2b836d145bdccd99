//! Log-gamma and factorial helpers.

use crate::error::{Error, Result};

// Godfrey's coefficients for g = 607/128 with 15 terms.
const LANCZOS_G: f64 = 607.0 / 128.0;
const LANCZOS_COEFFS: [f64; 15] = [
    0.999_999_999_999_997_1,
    57.156_235_665_862_92,
    -59.597_960_355_475_49,
    14.136_097_974_741_746,
    -0.491_913_816_097_620_2,
    0.339_946_499_848_118_9e-4,
    0.465_236_289_270_485_8e-4,
    -0.983_744_753_048_795_6e-4,
    0.158_088_703_224_912_5e-3,
    -0.210_264_441_724_104_9e-3,
    0.217_439_618_115_212_6e-3,
    -0.164_318_106_536_763_9e-3,
    0.844_182_239_838_527_4e-4,
    -0.261_908_384_015_814_1e-4,
    0.368_991_826_595_316_2e-5,
];
const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_8;

/// Natural logarithm of the Gamma function for `z > 0`.
pub fn log_gamma(z: f64) -> Result<f64> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::Domain(format!("log_gamma requires z > 0, got {z}")));
    }
    Ok(ln_gamma_positive(z))
}

/// [`log_gamma`] without the domain check. `z` must be positive and finite.
pub(crate) fn ln_gamma_positive(z: f64) -> f64 {
    if z == 1.0 || z == 2.0 {
        return 0.0;
    }
    if z < 0.5 {
        // Shift up instead of reflecting: ln Γ(z) = ln Γ(z + 1) − ln z.
        return lanczos(z + 1.0) - z.ln();
    }
    lanczos(z)
}

fn lanczos(z: f64) -> f64 {
    let z = z - 1.0;
    let mut series = LANCZOS_COEFFS[0];
    for (i, &c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        series += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    HALF_LN_TWO_PI + (z + 0.5) * t.ln() - t + series.ln()
}

/// `ln(n!)`, exact summation for small `n`.
pub fn ln_factorial(n: u32) -> f64 {
    if n < 2 {
        return 0.0;
    }
    if n <= 20 {
        return (factorial(n) as f64).ln();
    }
    ln_gamma_positive(n as f64 + 1.0)
}

/// `n!` for `n ≤ 20`; larger values overflow `u64`.
pub fn factorial(n: u32) -> u64 {
    assert!(n <= 20, "factorial({n}) overflows u64");
    (1..=n as u64).product()
}

/// Multinomial coefficient `d! / Π αₙ!` with `d = Σ αₙ`.
///
/// Exact integer arithmetic for `d ≤ 20`, log-factorials beyond.
pub fn multinomial(alpha: &[u32]) -> f64 {
    let d: u32 = alpha.iter().sum();
    if d <= 20 {
        let mut acc: u64 = 1;
        let mut partial = 0u32;
        for &k in alpha {
            partial += k;
            acc *= binomial(partial, k);
        }
        acc as f64
    } else {
        let ln = ln_factorial(d) - alpha.iter().map(|&k| ln_factorial(k)).sum::<f64>();
        ln.exp()
    }
}

/// Binomial coefficient for small arguments (`n ≤ 62` keeps it exact).
pub fn binomial(n: u32, k: u32) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k) as u64;
    let n = n as u64;
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}
