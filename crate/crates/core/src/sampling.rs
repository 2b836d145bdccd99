//! Exact uniform sampling on `B_p` and Monte-Carlo estimates.
//!
//! With `G_n ~ Gamma(1/p_n, 1)`, `E ~ Exp(1)` and `s = Σ G_n + E`, the
//! vector `(G_1/s, .., G_N/s)` follows the Dirichlet law of
//! `(|x_1|^{p_1}, .., |x_N|^{p_N})` for `x ~ U(B_p)`. Attaching independent
//! random signs to `x_n = ±(G_n/s)^{1/p_n}` gives an exact sample, also for
//! anisotropic `p`.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma};

use crate::error::{Error, Result};
use crate::estimators::{SensingMatrix, SmmseEstimator};
use crate::moments::CharacteristicVector;
use crate::par;

/// Number of independent sub-streams a Monte-Carlo run is split into.
/// Fixed so results do not depend on the thread count.
pub const MC_SHARDS: u64 = 64;

const MAGNITUDE_STREAM: u64 = 0;
const SIGN_STREAM: u64 = 1;

/// Seeded sampler for `U(B_p)`.
///
/// Magnitudes and signs come from separate ChaCha streams, so a sampler
/// with flipped signs produces exactly the negated stream.
#[derive(Debug, Clone)]
pub struct BallSampler {
    p: CharacteristicVector,
    gammas: Vec<Gamma<f64>>,
    magnitudes: ChaCha8Rng,
    signs: ChaCha8Rng,
    flip_signs: bool,
}

impl BallSampler {
    pub fn new(p: CharacteristicVector, seed: u64) -> Self {
        Self::with_substream(p, seed, 0)
    }

    /// Independent sampler number `index` for the same seed.
    pub fn with_substream(p: CharacteristicVector, seed: u64, index: u64) -> Self {
        let gammas = p
            .as_slice()
            .iter()
            .map(|&pn| Gamma::new(1.0 / pn, 1.0).expect("positive shape"))
            .collect();
        let mut magnitudes = ChaCha8Rng::seed_from_u64(seed);
        magnitudes.set_stream(2 * index + MAGNITUDE_STREAM);
        let mut signs = ChaCha8Rng::seed_from_u64(seed);
        signs.set_stream(2 * index + SIGN_STREAM);
        Self {
            p,
            gammas,
            magnitudes,
            signs,
            flip_signs: false,
        }
    }

    /// Same stream with every sign bit inverted.
    pub fn flipped(mut self) -> Self {
        self.flip_signs = !self.flip_signs;
        self
    }

    pub fn p(&self) -> &CharacteristicVector {
        &self.p
    }

    pub fn sample(&mut self) -> DVector<f64> {
        let mut g: Vec<f64> = self
            .gammas
            .iter()
            .map(|d| d.sample(&mut self.magnitudes))
            .collect();
        let e: f64 = Exp1.sample(&mut self.magnitudes);
        let s = g.iter().sum::<f64>() + e;
        for (gn, &pn) in g.iter_mut().zip(self.p.as_slice()) {
            let negative = self.signs.random::<bool>() != self.flip_signs;
            let magnitude = (*gn / s).powf(1.0 / pn);
            *gn = if negative { -magnitude } else { magnitude };
        }
        DVector::from_vec(g)
    }

    /// CSV dump of `count` samples, one per row, header `x1,..,xN`.
    pub fn dump_csv(&mut self, count: usize) -> String {
        let n = self.p.dim();
        let header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        let mut out = header.join(",");
        out.push('\n');
        for _ in 0..count {
            let x = self.sample();
            let row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl McEstimate {
    /// Whether `value` lies within `k` standard errors of the mean.
    pub fn contains(&self, value: f64, k: f64) -> bool {
        (value - self.mean).abs() <= k * self.std_error
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            mean: self.mean * factor,
            std_error: self.std_error * factor.abs(),
            samples: self.samples,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Welford {
    count: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, v: f64) {
        self.count += 1;
        let delta = v - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (v - self.mean);
    }

    fn merge(self, other: Welford) -> Welford {
        if other.count == 0 {
            return self;
        }
        if self.count == 0 {
            return other;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.count as f64 / count as f64;
        let m2 = self.m2
            + other.m2
            + delta * delta * self.count as f64 * other.count as f64 / count as f64;
        Welford { count, mean, m2 }
    }
}

/// Monte-Carlo estimate of `E[f(x)]` for `x ~ U(B_p)`.
///
/// Samples are split over [`MC_SHARDS`] fixed sub-streams which may run in
/// parallel; shard statistics are merged in shard order.
pub fn monte_carlo<F>(
    p: &CharacteristicVector,
    seed: u64,
    num_samples: usize,
    f: F,
) -> Result<McEstimate>
where
    F: Fn(&DVector<f64>) -> Result<f64> + Sync + Send,
{
    if num_samples < 2 {
        return Err(Error::InvalidArgument(
            "Monte-Carlo estimate needs at least two samples".into(),
        ));
    }
    let shards = MC_SHARDS as usize;
    let base = num_samples / shards;
    let extra = num_samples % shards;
    let parts: Vec<Result<Welford>> = par::map_range(shards, |k| {
        let count = base + usize::from(k < extra);
        let mut sampler = BallSampler::with_substream(p.clone(), seed, k as u64);
        let mut acc = Welford::default();
        for _ in 0..count {
            let x = sampler.sample();
            acc.push(f(&x)?);
        }
        Ok(acc)
    });
    let mut total = Welford::default();
    for part in parts {
        total = total.merge(part?);
    }
    let variance = total.m2 / (total.count - 1) as f64;
    Ok(McEstimate {
        mean: total.mean,
        std_error: (variance / total.count as f64).sqrt(),
        samples: total.count,
    })
}

/// Sample mean and standard error of `‖x − T(W A x)‖²`.
pub fn monte_carlo_mse(
    p: &CharacteristicVector,
    seed: u64,
    a: &SensingMatrix,
    est: &SmmseEstimator,
    num_samples: usize,
) -> Result<McEstimate> {
    if p.dim() != a.cols() {
        return Err(Error::Dimension {
            context: "monte_carlo_mse p",
            expected: a.cols(),
            found: p.dim(),
        });
    }
    monte_carlo(p, seed, num_samples, |x| {
        let xhat = est.apply(&a.measure(x))?;
        Ok((x - xhat).norm_squared())
    })
}
