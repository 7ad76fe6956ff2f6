//! Synthetic sources and mixtures with known ground truth, for separation
//! benchmarks.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Unit-variance, zero-mean source distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFamily {
    Laplace,
    Uniform,
    /// Equal mixture of `N(±0.9, 0.19)`.
    Bimodal,
    Gaussian,
}

impl SourceFamily {
    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            SourceFamily::Laplace => {
                let u: f64 = rng.random_range(-0.5..0.5);
                -(0.5f64).sqrt() * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            SourceFamily::Uniform => rng.random_range(-(3f64.sqrt())..3f64.sqrt()),
            SourceFamily::Bimodal => {
                let mu = 0.9;
                let sd = (1.0f64 - mu * mu).sqrt();
                let centre = if rng.random_bool(0.5) { mu } else { -mu };
                let z: f64 = StandardNormal.sample(rng);
                centre + sd * z
            }
            SourceFamily::Gaussian => StandardNormal.sample(rng),
        }
    }
}

impl FromStr for SourceFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "laplace" => Ok(SourceFamily::Laplace),
            "uniform" => Ok(SourceFamily::Uniform),
            "bimodal" => Ok(SourceFamily::Bimodal),
            "gaussian" => Ok(SourceFamily::Gaussian),
            other => Err(format!("unknown source family `{other}`")),
        }
    }
}

impl fmt::Display for SourceFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            SourceFamily::Laplace => "laplace",
            SourceFamily::Uniform => "uniform",
            SourceFamily::Bimodal => "bimodal",
            SourceFamily::Gaussian => "gaussian",
        };
        f.write_str(name)
    }
}

/// The mix used by the separation benchmark: 4 Laplace, 2 uniform, 2 bimodal.
pub fn standard_mix() -> Vec<SourceFamily> {
    use SourceFamily::*;
    vec![Laplace, Laplace, Laplace, Laplace, Uniform, Uniform, Bimodal, Bimodal]
}

/// Draws `families.len() x samples` sources, each row centered.
pub fn sample_sources<R: Rng + ?Sized>(families: &[SourceFamily], samples: usize, rng: &mut R) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(families.len(), samples);
    for (i, fam) in families.iter().enumerate() {
        for j in 0..samples {
            s[(i, j)] = fam.sample(rng);
        }
        let mean = s.row(i).sum() / samples as f64;
        s.row_mut(i).add_scalar_mut(-mean);
    }
    s
}

/// Gaussian random square matrix with 2-norm condition number below `max_cond`.
pub fn random_mixing<R: Rng + ?Sized>(n: usize, max_cond: f64, rng: &mut R) -> DMatrix<f64> {
    loop {
        let a = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(rng));
        if condition_number(&a) < max_cond {
            return a;
        }
    }
}

pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// A synthetic instance `observed = mixing * sources`.
#[derive(Debug, Clone)]
pub struct Mixture {
    pub sources: DMatrix<f64>,
    pub mixing: DMatrix<f64>,
    pub observed: DMatrix<f64>,
}

/// Mixture of the given families with a random mixing matrix of condition
/// number below 10.
pub fn mixture(families: &[SourceFamily], samples: usize, seed: u64) -> Mixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sources = sample_sources(families, samples, &mut rng);
    let mixing = random_mixing(families.len(), 10.0, &mut rng);
    let observed = &mixing * &sources;
    Mixture {
        sources,
        mixing,
        observed,
    }
}
