use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Rng;

/// Binary spike raster stored as the active indices of every step.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    steps: Vec<Vec<usize>>,
}

impl Raster {
    pub fn new(width: usize, steps: Vec<Vec<usize>>) -> Result<Self> {
        for s in &steps {
            if s.iter().any(|&i| i >= width) {
                return Err(Error::Shape {
                    context: "raster index",
                    expected: width,
                    actual: s.iter().copied().max().unwrap_or(0) + 1,
                });
            }
        }
        Ok(Self { width, steps })
    }

    /// From dense `steps × width` 0/1 rows.
    pub fn from_dense(rows: &[Vec<bool>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        let steps = rows
            .iter()
            .map(|r| r.iter().enumerate().filter(|(_, &s)| s).map(|(i, _)| i).collect())
            .collect();
        Self::new(width, steps)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Active inputs at step `t` (0-based).
    pub fn active(&self, t: usize) -> &[usize] {
        &self.steps[t]
    }

    /// Inputs that spike at least once, ascending.
    pub fn support(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.steps.iter().flatten().copied().collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn spike_count(&self, i: usize) -> usize {
        self.steps.iter().filter(|s| s.contains(&i)).count()
    }
}

/// Population of Gaussian tuning curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoissonEncoder {
    pub neurons: usize,
    pub variance: f64,
    pub steps: usize,
}

impl Default for PoissonEncoder {
    fn default() -> Self {
        Self {
            neurons: 100,
            variance: 0.0002,
            steps: 20,
        }
    }
}

impl PoissonEncoder {
    /// Evenly spaced centers on `[0, 1]`.
    pub fn centers(&self) -> Vec<f64> {
        match self.neurons {
            0 => vec![],
            1 => vec![0.5],
            n => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
        }
    }

    /// Per-step firing probability of every neuron for input `z ∈ [0, 1]`.
    pub fn probabilities(&self, z: f64) -> Vec<f64> {
        self.centers()
            .iter()
            .map(|m| (-(m - z) * (m - z) / (2.0 * self.variance)).exp())
            .collect()
    }
}

/// Affine map of `x ∈ [lo, hi]` onto `[0, 1]`.
pub fn standardize_input(x: f64, range: (f64, f64)) -> f64 {
    (x - range.0) / (range.1 - range.0)
}

/// Bernoulli spikes for `steps` steps at the tuning-curve probabilities.
pub fn encode_poisson(enc: &PoissonEncoder, z: f64, rng: &mut Rng) -> Result<Raster> {
    if !(0.0..=1.0).contains(&z) {
        return Err(Error::contract(format!("encoder input must lie in [0, 1], got {z}")));
    }
    let p = enc.probabilities(z);
    let steps = (0..enc.steps)
        .map(|_| (0..enc.neurons).filter(|&i| p[i] > 0.0 && rng.bernoulli(p[i])).collect())
        .collect();
    Raster::new(enc.neurons, steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centered_neuron_always_fires() {
        let enc = PoissonEncoder::default();
        let c = enc.centers()[37];
        let r = encode_poisson(&enc, c, &mut Rng::new(1)).unwrap();
        assert_eq!(r.len(), 20);
        assert_eq!(r.spike_count(37), 20);
    }

    #[test]
    fn tuning_curve_value() {
        let enc = PoissonEncoder {
            neurons: 2,
            ..Default::default()
        };
        // centers 0 and 1; input 0.02 sits 0.02 from the first
        let p = enc.probabilities(0.02);
        assert!((p[0] - (-1.0f64).exp()).abs() < 1e-15);
        let centers = PoissonEncoder::default().centers();
        assert!(centers.windows(2).all(|w| w[1] > w[0]));
        assert_eq!((centers[0], centers[99]), (0.0, 1.0));
    }

    #[test]
    fn empirical_rate_matches_probability() {
        let enc = PoissonEncoder {
            neurons: 2,
            steps: 100_000,
            ..Default::default()
        };
        let z = 0.015;
        let p = enc.probabilities(z)[0];
        let r = encode_poisson(&enc, z, &mut Rng::new(3)).unwrap();
        let rate = r.spike_count(0) as f64 / 100_000.0;
        assert!((rate - p).abs() < 0.01, "{rate} vs {p}");
    }

    #[test]
    fn out_of_range_rejected() {
        let enc = PoissonEncoder::default();
        assert!(encode_poisson(&enc, 1.01, &mut Rng::new(0)).is_err());
        assert!(encode_poisson(&enc, -0.1, &mut Rng::new(0)).is_err());
        assert_eq!(standardize_input(-5.0, (-5.0, 5.0)), 0.0);
        assert_eq!(standardize_input(5.0, (-5.0, 5.0)), 1.0);
    }
}
