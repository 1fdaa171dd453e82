//! Monte Carlo approximation of the pixel sum in the total intensity.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::intensity::{intensity, residual, IntensityHyper};
use crate::error::{Error, Result};
use crate::scene::SensorGeometry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResamplePolicy {
    /// One sample per window, shared by every replay step of that window.
    #[default]
    FixedPerWindow,
    /// A new sample for every objective evaluation.
    FreshPerEvaluation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub samples: usize,
    pub seed: u64,
    pub policy: ResamplePolicy,
    /// Replace sampling by the exact sum over all pixels.
    #[serde(default)]
    pub full_enumeration: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            samples: 512,
            seed: 0,
            policy: ResamplePolicy::FixedPerWindow,
            full_enumeration: false,
        }
    }
}

impl McConfig {
    pub fn validate(&self, geometry: SensorGeometry) -> Result<()> {
        if self.samples == 0 || self.samples > geometry.num_pixels() {
            return Err(Error::InvalidConfig(format!(
                "MC sample count must lie in [1, {}], got {}",
                geometry.num_pixels(),
                self.samples
            )));
        }
        Ok(())
    }

    /// Sample for window `m`; `evaluation` only matters under
    /// [`ResamplePolicy::FreshPerEvaluation`].
    pub fn sample_for(
        &self,
        geometry: SensorGeometry,
        window: u64,
        evaluation: u64,
    ) -> PixelSample {
        if self.full_enumeration {
            return PixelSample::enumerate(geometry);
        }
        let stream = match self.policy {
            ResamplePolicy::FixedPerWindow => window << 32,
            ResamplePolicy::FreshPerEvaluation => (window << 32) | (evaluation & 0xffff_ffff),
        };
        let mut rng = rand::SeedableRng::seed_from_u64(self.seed);
        ChaCha8Rng::set_stream(&mut rng, stream);
        PixelSample::draw(geometry, self.samples, &mut rng)
    }
}

/// Pixels drawn uniformly with replacement, stored as distinct pixel indices
/// with multiplicities. Every summand carries the factor `weight = |Ω| / S`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelSample {
    pub entries: Vec<(u32, u32)>,
    pub weight: f64,
}

impl PixelSample {
    pub fn draw<R: Rng>(geometry: SensorGeometry, samples: usize, rng: &mut R) -> Self {
        let n = geometry.num_pixels();
        let mut counts = vec![0u32; n];
        for _ in 0..samples {
            counts[rng.gen_range(0..n)] += 1;
        }
        Self {
            entries: counts
                .into_iter()
                .enumerate()
                .filter(|&(_, c)| c > 0)
                .map(|(i, c)| (i as u32, c))
                .collect(),
            weight: n as f64 / samples as f64,
        }
    }

    /// Every pixel exactly once with unit weight.
    pub fn enumerate(geometry: SensorGeometry) -> Self {
        Self {
            entries: (0..geometry.num_pixels() as u32).map(|i| (i, 1)).collect(),
            weight: 1.0,
        }
    }

    pub fn total_draws(&self) -> usize {
        self.entries.iter().map(|&(_, c)| c as usize).sum()
    }
}

/// Estimate of `Λ(t) = Σ_u Σ_p λ(φ(u, p, t))` from a pixel sample.
///
/// `l_hat[i]`, `l_last[i]` and `threshold[i]` are the current prediction, the
/// memory value and the threshold of pixel `i`.
pub fn total_intensity_mc(
    l_hat: &[f64],
    l_last: &[f64],
    threshold: &[f64],
    h: &IntensityHyper,
    sample: &PixelSample,
) -> f64 {
    let mut acc = 0.0;
    for &(i, c) in &sample.entries {
        let i = i as usize;
        let pair = intensity(residual(l_hat[i], l_last[i], 1.0, threshold[i]), h)
            + intensity(residual(l_hat[i], l_last[i], -1.0, threshold[i]), h);
        acc += c as f64 * pair;
    }
    sample.weight * acc
}
