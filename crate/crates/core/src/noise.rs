//! White and colored noise synthesis at prescribed signal-to-noise ratios.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, CoreResult};
use crate::seeding::{derive_seed, rng_from_seed, tag};
use crate::trajectory::Trajectory;

/// Additive noise description: spectral exponent (PSD proportional to
/// f^exponent; 0 white, +1 violet, -1 pink), target SNR as an RMS ratio,
/// and the master seed for the realization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub exponent: f64,
    pub target_snr: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(exponent: f64, target_snr: f64, seed: u64) -> CoreResult<Self> {
        let spec = Self {
            exponent,
            target_snr,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Noise level given as a percentage of the signal RMS; 10% is SNR 10.
    pub fn percent_of_rms(exponent: f64, percent: f64, seed: u64) -> CoreResult<Self> {
        if percent <= 0.0 || !percent.is_finite() {
            return Err(CoreError::invalid("noise percent must be > 0"));
        }
        Self::new(exponent, 100.0 / percent, seed)
    }

    pub fn validate(&self) -> CoreResult<()> {
        if !self.exponent.is_finite() {
            return Err(CoreError::invalid("noise exponent must be finite"));
        }
        if self.target_snr <= 0.0 || !self.target_snr.is_finite() {
            return Err(CoreError::invalid("target SNR must be > 0"));
        }
        Ok(())
    }

    /// SNR on the decibel scale (amplitude convention, 20 log10).
    pub fn snr_db(&self) -> f64 {
        20.0 * self.target_snr.log10()
    }
}

/// I.i.d. zero-mean Gaussian samples with standard deviation `sigma`.
pub fn gaussian_white(n: usize, sigma: f64, seed: u64) -> CoreResult<Vec<f64>> {
    if n == 0 {
        return Err(CoreError::invalid("need at least one sample"));
    }
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(CoreError::invalid("sigma must be >= 0"));
    }
    let mut rng = rng_from_seed(seed);
    Ok((0..n)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect())
}

/// Unit-RMS noise whose PSD follows f^exponent.
///
/// A white Gaussian sequence is shaped in the frequency domain: bin k is
/// scaled by (k/n)^(exponent/2), the DC bin is zeroed to keep the output
/// zero-mean, and the inverse transform is normalized to RMS 1.
pub fn colored_noise(n: usize, exponent: f64, seed: u64) -> CoreResult<Vec<f64>> {
    if n < 8 {
        return Err(CoreError::invalid(format!(
            "colored noise needs n >= 8, got {n}"
        )));
    }
    if !exponent.is_finite() {
        return Err(CoreError::invalid("exponent must be finite"));
    }
    let white = gaussian_white(n, 1.0, seed)?;
    let mut spectrum: Vec<Complex64> = white.iter().map(|&x| Complex64::new(x, 0.0)).collect();

    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut spectrum);

    spectrum[0] = Complex64::new(0.0, 0.0);
    let half = n / 2;
    for k in 1..=half {
        let f = k as f64 / n as f64;
        let gain = f.powf(exponent / 2.0);
        spectrum[k] *= gain;
        if k != n - k {
            spectrum[n - k] *= gain;
        }
    }

    planner.plan_fft_inverse(n).process(&mut spectrum);
    let mut out: Vec<f64> = spectrum.iter().map(|c| c.re / n as f64).collect();

    let rms = (out.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
    if rms == 0.0 {
        return Err(CoreError::DegenerateSignal(
            "colored noise collapsed to zero".into(),
        ));
    }
    for x in &mut out {
        *x /= rms;
    }
    Ok(out)
}

/// A noisy copy of a trajectory together with the injected realization.
#[derive(Debug, Clone)]
pub struct NoisyTrajectory {
    pub noisy: Trajectory,
    /// Exactly `noisy - clean`, stored for residual analysis.
    pub noise: Trajectory,
}

/// Adds per-channel noise scaled so that RMS(noise) = RMS(channel) / SNR.
///
/// Channels draw independent streams derived from `spec.seed`. The returned
/// realization is recomputed as `noisy - clean` after rounding, so the pair
/// is exactly consistent.
pub fn add_noise(clean: &Trajectory, spec: &NoiseSpec) -> CoreResult<NoisyTrajectory> {
    spec.validate()?;
    if clean.is_empty() {
        return Err(CoreError::invalid(
            "cannot add noise to an empty trajectory",
        ));
    }
    let rows = clean.len();
    let cols = clean.num_channels();
    let mut noisy = clean.values().clone();
    for ch in 0..cols {
        let channel_rms = clean.channel_rms(ch);
        if channel_rms == 0.0 {
            return Err(CoreError::DegenerateSignal(format!(
                "channel '{}' has zero RMS",
                clean.channel_names()[ch]
            )));
        }
        let channel_seed = derive_seed(spec.seed, &[tag("noise-channel"), ch as u64]);
        let raw = if spec.exponent == 0.0 {
            gaussian_white(rows, 1.0, channel_seed)?
        } else {
            colored_noise(rows, spec.exponent, channel_seed)?
        };
        let raw_rms = (raw.iter().map(|x| x * x).sum::<f64>() / rows as f64).sqrt();
        if raw_rms == 0.0 {
            return Err(CoreError::DegenerateSignal("noise stream is zero".into()));
        }
        let scale = channel_rms / spec.target_snr / raw_rms;
        for (i, value) in raw.iter().enumerate() {
            noisy[(i, ch)] += scale * value;
        }
    }
    let noise_values = DMatrix::from_fn(rows, cols, |i, j| noisy[(i, j)] - clean.values()[(i, j)]);
    let noisy = Trajectory::new(
        clean.t0(),
        clean.dt(),
        noisy,
        clean.channel_names().to_vec(),
    )?;
    let noise = Trajectory::new(
        clean.t0(),
        clean.dt(),
        noise_values,
        clean.channel_names().to_vec(),
    )?;
    Ok(NoisyTrajectory { noisy, noise })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    #[test]
    fn zero_sigma_gives_zero_sequence() {
        let xs = gaussian_white(100, 0.0, 3).unwrap();
        assert!(xs.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn sample_std_concentrates() {
        let n = 100_000;
        let xs = gaussian_white(n, 1.0, 42).unwrap();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        assert!((0.99..=1.01).contains(&std), "sample std {std}");
    }

    #[test]
    fn white_noise_is_deterministic_per_seed() {
        let a = gaussian_white(64, 1.0, 9).unwrap();
        let b = gaussian_white(64, 1.0, 9).unwrap();
        assert_eq!(a, b);
        let c = gaussian_white(64, 1.0, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn colored_noise_is_zero_mean_unit_rms() {
        for exponent in [-1.0, 0.0, 1.0] {
            let xs = colored_noise(4096, exponent, 11).unwrap();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let rms = (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64).sqrt();
            assert!(mean.abs() < 1e-10, "mean {mean} for exponent {exponent}");
            assert!(
                (rms - 1.0).abs() < 1e-12,
                "rms {rms} for exponent {exponent}"
            );
        }
    }

    #[test]
    fn colored_noise_rejects_tiny_n() {
        assert!(matches!(
            colored_noise(4, 1.0, 1),
            Err(CoreError::InvalidArgument(_))
        ));
    }

    fn ramp_trajectory(rows: usize) -> Trajectory {
        let values = DMatrix::from_fn(rows, 2, |i, j| {
            let t = i as f64 / rows as f64;
            if j == 0 {
                2.0 * (2.0 * std::f64::consts::PI * 5.0 * t).sin()
            } else {
                1.0 + (2.0 * std::f64::consts::PI * 3.0 * t).cos()
            }
        });
        Trajectory::new(0.0, 0.01, values, vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn injected_rms_follows_target_snr() {
        let clean = ramp_trajectory(2000);
        let spec = NoiseSpec::new(0.0, 4.0, 5).unwrap();
        let out = add_noise(&clean, &spec).unwrap();
        for ch in 0..2 {
            let target = clean.channel_rms(ch) / 4.0;
            let got = out.noise.channel_rms(ch);
            assert_relative_eq!(got, target, max_relative = 1e-9);
        }
    }

    #[test]
    fn snr_db_examples() {
        let spec = NoiseSpec::percent_of_rms(0.0, 0.25, 1).unwrap();
        assert_relative_eq!(spec.target_snr, 400.0);
        assert_relative_eq!(spec.snr_db(), 52.04, epsilon = 0.01);
        let spec = NoiseSpec::percent_of_rms(0.0, 10.0, 1).unwrap();
        assert_relative_eq!(spec.snr_db(), 20.0);
        let spec = NoiseSpec::percent_of_rms(0.0, 100.0, 1).unwrap();
        assert_relative_eq!(spec.snr_db(), 0.0);
    }

    #[test]
    fn zero_rms_channel_is_rejected() {
        let values = DMatrix::zeros(32, 1);
        let clean = Trajectory::new(0.0, 0.1, values, vec!["flat".into()]).unwrap();
        let spec = NoiseSpec::new(0.0, 4.0, 1).unwrap();
        assert!(matches!(
            add_noise(&clean, &spec),
            Err(CoreError::DegenerateSignal(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn prop_noisy_minus_clean_is_the_realization(seed in 0u64..1000, snr in 0.5f64..100.0) {
            let clean = ramp_trajectory(256);
            let spec = NoiseSpec::new(0.0, snr, seed).unwrap();
            let out = add_noise(&clean, &spec).unwrap();
            prop_assert_eq!(out.noisy.channel_names(), clean.channel_names());
            prop_assert_eq!(out.noisy.dt(), clean.dt());
            for i in 0..clean.len() {
                for j in 0..clean.num_channels() {
                    let diff = out.noisy.values()[(i, j)] - clean.values()[(i, j)];
                    prop_assert_eq!(diff, out.noise.values()[(i, j)]);
                }
            }
        }
    }
}
