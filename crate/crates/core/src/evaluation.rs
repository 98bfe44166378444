//! Sample quality (maximum mean discrepancy) and per-round metrics.

use alloc::vec::Vec;

use crate::gan::{gen_forward, sample_noise, BatchKind, GanNetworks};
use crate::nn::ModelParams;
use crate::tensor::{dot, sq_dist, Matrix};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Bandwidth {
    Fixed {
        sigma: f64,
    },
    /// Median pairwise distance of the pooled sample.
    MedianHeuristic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "family", rename_all = "snake_case"))]
pub enum KernelSpec {
    /// `exp(-|x - y|^2 / (2 sigma^2))`
    RadialBasis { bandwidth: Bandwidth },
    /// `x · y`
    Linear,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::RadialBasis {
            bandwidth: Bandwidth::MedianHeuristic,
        }
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        if let KernelSpec::RadialBasis {
            bandwidth: Bandwidth::Fixed { sigma },
        } = *self
        {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(Error::InvalidConfig {
                    key: "bandwidth",
                    reason: "must be a positive finite number".into(),
                });
            }
        }
        Ok(())
    }
}

/// Median of all pairwise Euclidean distances between rows. Falls back to 1
/// when every row coincides.
pub fn median_distance(rows: &[&[f64]]) -> f64 {
    let mut d: Vec<f64> = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(libm::sqrt(sq_dist(rows[i], rows[j])));
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let m = if n % 2 == 1 {
        d[n / 2]
    } else {
        0.5 * (d[n / 2 - 1] + d[n / 2])
    };
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

fn mean_kernel(a: &Matrix, b: &Matrix, k: &dyn Fn(&[f64], &[f64]) -> f64) -> f64 {
    let mut total = 0.0;
    for x in a.iter_rows() {
        for y in b.iter_rows() {
            total += k(x, y);
        }
    }
    total / (a.rows() * b.rows()) as f64
}

/// Biased (V-statistic) estimate of squared MMD, diagonal terms included.
pub fn mmd2(real: &Matrix, synthetic: &Matrix, kernel: KernelSpec) -> Result<f64> {
    if real.rows() == 0 || synthetic.rows() == 0 {
        return Err(Error::Empty("mmd sample set"));
    }
    if real.cols() != synthetic.cols() {
        return Err(Error::DimensionMismatch {
            context: "mmd sample width",
            expected: real.cols(),
            actual: synthetic.cols(),
        });
    }
    kernel.validate()?;
    let value = match kernel {
        KernelSpec::Linear => {
            let k = |x: &[f64], y: &[f64]| dot(x, y);
            mean_kernel(real, real, &k) - 2.0 * mean_kernel(real, synthetic, &k) + mean_kernel(synthetic, synthetic, &k)
        }
        KernelSpec::RadialBasis { bandwidth } => {
            let sigma = match bandwidth {
                Bandwidth::Fixed { sigma } => sigma,
                Bandwidth::MedianHeuristic => {
                    let pooled: Vec<&[f64]> = real.iter_rows().chain(synthetic.iter_rows()).collect();
                    median_distance(&pooled)
                }
            };
            let gamma = 1.0 / (2.0 * sigma * sigma);
            let k = |x: &[f64], y: &[f64]| libm::exp(-gamma * sq_dist(x, y));
            mean_kernel(real, real, &k) - 2.0 * mean_kernel(real, synthetic, &k) + mean_kernel(synthetic, synthetic, &k)
        }
    };
    // Rounding can push an exact zero slightly negative; the V-statistic itself is >= 0.
    Ok(value.max(0.0))
}

/// One record per global round.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoundMetrics {
    pub round: u32,
    /// Aggregated generator loss.
    pub gen_loss: f64,
    /// Mean of the nodes' last discriminator losses.
    pub disc_loss: f64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub wall_ms: f64,
    pub mmd: Option<f64>,
}

/// Offline sample-quality probe. It owns a held-out real sample and its own
/// noise streams, so probing never changes a training trajectory.
#[derive(Debug, Clone)]
pub struct MmdProbe {
    reference: Matrix,
    kernel: KernelSpec,
    every: u32,
    samples: usize,
    seed: u64,
}

impl MmdProbe {
    /// A median-heuristic bandwidth is resolved once on `reference` so the
    /// trace stays comparable across rounds.
    pub fn new(reference: Matrix, kernel: KernelSpec, every: u32, samples: usize, seed: u64) -> Result<Self> {
        if reference.rows() < 2 || samples == 0 || every == 0 {
            return Err(Error::InvalidConfig {
                key: "mmd_probe",
                reason: "needs two reference rows, a positive sample count and interval".into(),
            });
        }
        let kernel = match kernel {
            KernelSpec::RadialBasis {
                bandwidth: Bandwidth::MedianHeuristic,
            } => {
                let rows: Vec<&[f64]> = reference.iter_rows().collect();
                KernelSpec::RadialBasis {
                    bandwidth: Bandwidth::Fixed {
                        sigma: median_distance(&rows),
                    },
                }
            }
            k => k,
        };
        Ok(Self {
            reference,
            kernel,
            every,
            samples,
            seed,
        })
    }

    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }

    /// Probes after rounds `every - 1, 2 * every - 1, ...` (0-based).
    pub fn due(&self, round: u32) -> bool {
        (round + 1).is_multiple_of(self.every)
    }

    pub fn measure(&self, nets: &GanNetworks, generator: &ModelParams, round: u32) -> Result<f64> {
        let mut rng = rng::stream(self.seed, rng::Purpose::Probe, u64::from(round));
        let z = sample_noise(self.samples, nets.noise, &mut rng)?;
        let x = gen_forward(&nets.generator, generator, &z, BatchKind::FakeForGenerator)?;
        mmd2(&self.reference, &x.samples, self.kernel)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows.iter().copied()).unwrap()
    }

    #[test]
    fn identical_sets_have_zero_mmd() {
        let a = m(&[&[0.1, 0.2], &[0.9, 0.4], &[0.3, 0.3]]);
        assert!(mmd2(&a, &a, KernelSpec::default()).unwrap() <= 1e-9);
        assert!(mmd2(&a, &a, KernelSpec::Linear).unwrap() <= 1e-9);
    }

    #[test]
    fn linear_kernel_scalar_example() {
        let zero = m(&[&[0.0]]);
        let one = m(&[&[1.0]]);
        assert!((mmd2(&zero, &one, KernelSpec::Linear).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn symmetric_and_translation_invariant() {
        let a = m(&[&[0.1, 0.2], &[0.5, 0.4]]);
        let b = m(&[&[0.7, 0.9], &[0.2, 0.6], &[0.4, 0.4]]);
        let k = KernelSpec::default();
        let ab = mmd2(&a, &b, k).unwrap();
        assert!((ab - mmd2(&b, &a, k).unwrap()).abs() < 1e-14);
        let mut a2 = a.clone();
        let mut b2 = b.clone();
        a2.map_inplace(|v| v + 3.0);
        b2.map_inplace(|v| v + 3.0);
        assert!((ab - mmd2(&a2, &b2, k).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn rejects_empty_sets_and_bad_bandwidth() {
        let a = m(&[&[0.1]]);
        assert!(mmd2(&Matrix::zeros(0, 1), &a, KernelSpec::Linear).is_err());
        let bad = KernelSpec::RadialBasis {
            bandwidth: Bandwidth::Fixed { sigma: 0.0 },
        };
        assert!(mmd2(&a, &a, bad).is_err());
    }

    #[test]
    fn median_distance_examples() {
        let rows: Vec<&[f64]> = vec![&[0.0], &[1.0], &[3.0]];
        // distances 1, 3, 2
        assert_eq!(median_distance(&rows), 2.0);
        let same: Vec<&[f64]> = vec![&[1.0], &[1.0]];
        assert_eq!(median_distance(&same), 1.0);
    }
}
