//! Signal quality metrics: SNR, denoising gain, and Welch spectral analysis.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, CoreResult};
use crate::trajectory::Trajectory;

/// One labelled PSD curve on a shared frequency grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PsdCurve {
    pub label: String,
    pub freq_hz: Vec<f64>,
    pub psd_db_per_hz: Vec<f64>,
}

impl PsdCurve {
    pub fn from_linear(label: impl Into<String>, freq: Vec<f64>, psd: &[f64]) -> Self {
        Self {
            label: label.into(),
            freq_hz: freq,
            psd_db_per_hz: psd.iter().map(|&p| to_db(p)).collect(),
        }
    }

    /// Writes `f_hz,psd_db_per_hz` rows.
    pub fn write_csv(&self, path: &Path) -> CoreResult<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "f_hz,psd_db_per_hz")?;
        for (f, p) in self.freq_hz.iter().zip(&self.psd_db_per_hz) {
            writeln!(w, "{f:.16e},{p:.16e}")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Power density on the decibel scale, floored to keep zero bins plottable.
pub fn to_db(power: f64) -> f64 {
    10.0 * power.max(1e-300).log10()
}

/// Denoising outcome for one reconstruction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenoisingReport {
    pub nmse: f64,
    pub snr_test: f64,
    pub snr_reconstructed: f64,
    pub denoising_gain: f64,
    pub residual_rms_per_channel: Vec<(String, f64)>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub psd_curves: Vec<PsdCurve>,
}

fn pooled_rms_diff(a: &Trajectory, b: &Trajectory) -> f64 {
    let n = (a.len() * a.num_channels()) as f64;
    let ss: f64 = a
        .values()
        .iter()
        .zip(b.values().iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    (ss / n).sqrt()
}

/// Signal-to-noise ratio of a candidate against the clean reference:
/// pooled RMS(clean) / RMS(candidate - clean). A perfect candidate yields
/// `+inf`, which is a valid marker rather than an error.
pub fn snr(clean: &Trajectory, candidate: &Trajectory) -> CoreResult<f64> {
    clean.require_aligned(candidate, "snr")?;
    let signal = clean.pooled_rms();
    if signal == 0.0 {
        return Err(CoreError::DegenerateSignal(
            "clean signal has zero RMS".into(),
        ));
    }
    let residual = pooled_rms_diff(candidate, clean);
    if residual == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(signal / residual)
}

/// Per-channel SNR values in channel order.
pub fn snr_per_channel(clean: &Trajectory, candidate: &Trajectory) -> CoreResult<Vec<f64>> {
    clean.require_aligned(candidate, "snr_per_channel")?;
    let mut out = Vec::with_capacity(clean.num_channels());
    for ch in 0..clean.num_channels() {
        let signal = clean.channel_rms(ch);
        if signal == 0.0 {
            return Err(CoreError::DegenerateSignal(format!(
                "channel '{}' has zero RMS",
                clean.channel_names()[ch]
            )));
        }
        let n = clean.len() as f64;
        let ss: f64 = (0..clean.len())
            .map(|i| {
                let d = candidate.values()[(i, ch)] - clean.values()[(i, ch)];
                d * d
            })
            .sum();
        let residual = (ss / n).sqrt();
        out.push(if residual == 0.0 {
            f64::INFINITY
        } else {
            signal / residual
        });
    }
    Ok(out)
}

/// Gain of a reconstruction over the noisy test input (ratio of SNRs
/// against the same ground truth). Values above 1 mean noise was removed.
pub fn denoising_gain(
    clean: &Trajectory,
    test_input: &Trajectory,
    reconstruction: &Trajectory,
) -> CoreResult<DenoisingReport> {
    clean.require_aligned(test_input, "denoising_gain")?;
    clean.require_aligned(reconstruction, "denoising_gain")?;
    let snr_test = snr(clean, test_input)?;
    let snr_reconstructed = snr(clean, reconstruction)?;
    let truth_ss: f64 = clean.values().iter().map(|v| v * v).sum();
    if truth_ss == 0.0 {
        return Err(CoreError::DegenerateSignal(
            "clean signal has zero norm".into(),
        ));
    }
    let err_ss: f64 = reconstruction
        .values()
        .iter()
        .zip(clean.values().iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let mut residual_rms = Vec::with_capacity(clean.num_channels());
    for ch in 0..clean.num_channels() {
        let ss: f64 = (0..clean.len())
            .map(|i| {
                let d = reconstruction.values()[(i, ch)] - clean.values()[(i, ch)];
                d * d
            })
            .sum();
        residual_rms.push((
            clean.channel_names()[ch].clone(),
            (ss / clean.len() as f64).sqrt(),
        ));
    }
    Ok(DenoisingReport {
        nmse: err_ss / truth_ss,
        snr_test,
        snr_reconstructed,
        denoising_gain: snr_reconstructed / snr_test,
        residual_rms_per_channel: residual_rms,
        psd_curves: Vec::new(),
    })
}

/// Per-channel denoising gains: channel-wise SNR of the reconstruction
/// over channel-wise SNR of the test input. The pooled gain in
/// `DenoisingReport` is the headline number; this is the alternative
/// aggregation.
pub fn per_channel_gains(
    clean: &Trajectory,
    test_input: &Trajectory,
    reconstruction: &Trajectory,
) -> CoreResult<Vec<f64>> {
    let test = snr_per_channel(clean, test_input)?;
    let recon = snr_per_channel(clean, reconstruction)?;
    Ok(recon.iter().zip(&test).map(|(r, t)| r / t).collect())
}

/// Averaged periodogram with a periodic Hann window.
///
/// One-sided, density-scaled so that the integral of the PSD over frequency
/// approximates the signal's mean square (Parseval). `segment_length` must
/// be a power of two no longer than the signal; `overlap_fraction` is the
/// fraction of each segment shared with the next (0.5 is the usual choice).
pub fn welch_psd(
    signal: &[f64],
    sample_rate: f64,
    segment_length: usize,
    overlap_fraction: f64,
) -> CoreResult<(Vec<f64>, Vec<f64>)> {
    if segment_length == 0 || !segment_length.is_power_of_two() {
        return Err(CoreError::invalid(format!(
            "segment length must be a power of two, got {segment_length}"
        )));
    }
    if signal.len() < segment_length {
        return Err(CoreError::invalid(format!(
            "signal of {} samples is shorter than segment {segment_length}",
            signal.len()
        )));
    }
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(CoreError::invalid("overlap fraction must be in [0, 1)"));
    }
    if sample_rate <= 0.0 || !sample_rate.is_finite() {
        return Err(CoreError::invalid("sample rate must be > 0"));
    }

    let window: Vec<f64> = (0..segment_length)
        .map(|j| {
            0.5 * (1.0 - (2.0 * std::f64::consts::PI * j as f64 / segment_length as f64).cos())
        })
        .collect();
    let window_power: f64 = window.iter().map(|w| w * w).sum();

    let step = ((segment_length as f64) * (1.0 - overlap_fraction)).round() as usize;
    let step = step.max(1);
    let half = segment_length / 2;
    let mut psd = vec![0.0; half + 1];
    let mut segments = 0usize;
    let fft = FftPlanner::new().plan_fft_forward(segment_length);
    let mut buf = vec![Complex64::new(0.0, 0.0); segment_length];

    let mut start = 0;
    while start + segment_length <= signal.len() {
        for (j, slot) in buf.iter_mut().enumerate() {
            *slot = Complex64::new(signal[start + j] * window[j], 0.0);
        }
        fft.process(&mut buf);
        for (k, slot) in psd.iter_mut().enumerate() {
            let mut p = buf[k].norm_sqr() / (sample_rate * window_power);
            if k != 0 && k != half {
                p *= 2.0;
            }
            *slot += p;
        }
        segments += 1;
        start += step;
    }
    for p in &mut psd {
        *p /= segments as f64;
    }
    let freq: Vec<f64> = (0..=half)
        .map(|k| k as f64 * sample_rate / segment_length as f64)
        .collect();
    Ok((freq, psd))
}

/// Least-squares slope of log10(PSD) against log10(f) on `[f_lo, f_hi]`.
pub fn psd_slope(freq: &[f64], psd: &[f64], f_lo: f64, f_hi: f64) -> CoreResult<f64> {
    if freq.len() != psd.len() {
        return Err(CoreError::invalid(
            "frequency and PSD grids differ in length",
        ));
    }
    if f_lo <= 0.0 || f_hi <= f_lo {
        return Err(CoreError::invalid("need 0 < f_lo < f_hi"));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&f, &p) in freq.iter().zip(psd) {
        if f >= f_lo && f <= f_hi {
            if p <= 0.0 {
                return Err(CoreError::invalid(format!(
                    "PSD must be positive on the fit band (violated at f = {f})"
                )));
            }
            xs.push(f.log10());
            ys.push(p.log10());
        }
    }
    if xs.len() < 4 {
        return Err(CoreError::invalid(format!(
            "need at least 4 points in the band, found {}",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::colored_noise;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn traj(values: Vec<f64>, channels: usize) -> Trajectory {
        let rows = values.len() / channels;
        let names = (0..channels).map(|i| format!("c{i}")).collect();
        Trajectory::new(
            0.0,
            0.1,
            DMatrix::from_row_iterator(rows, channels, values),
            names,
        )
        .unwrap()
    }

    #[test]
    fn snr_definition_examples() {
        // Clean RMS 2, residual RMS 0.5 -> 4.
        let clean = traj(vec![2.0; 16], 1);
        let noisy = traj(vec![2.5; 16], 1);
        assert_relative_eq!(snr(&clean, &noisy).unwrap(), 4.0);
        // Residual equal to the clean RMS -> 1 (0 dB).
        let bad = traj(vec![4.0; 16], 1);
        assert_relative_eq!(snr(&clean, &bad).unwrap(), 1.0);
        // Residual at 0.25% of clean RMS -> about 400 (52 dB).
        let close = traj(vec![2.0 + 0.005; 16], 1);
        let value = snr(&clean, &close).unwrap();
        assert_relative_eq!(value, 400.0, max_relative = 1e-9);
        assert_relative_eq!(20.0 * value.log10(), 52.04, epsilon = 0.01);
    }

    #[test]
    fn snr_zero_residual_is_infinite_marker() {
        let clean = traj(vec![1.0, -1.0, 1.0, -1.0], 1);
        assert_eq!(snr(&clean, &clean).unwrap(), f64::INFINITY);
    }

    #[test]
    fn gain_examples() {
        let clean = traj(vec![2.0; 32], 1);
        let input = traj(vec![2.5; 32], 1);
        // Reconstruction identical to the input -> gain exactly 1.
        let report = denoising_gain(&clean, &input, &input).unwrap();
        assert_eq!(report.denoising_gain, 1.0);
        // SNR 8 vs SNR 4 -> gain 2.
        let recon = traj(vec![2.25; 32], 1);
        let report = denoising_gain(&clean, &input, &recon).unwrap();
        assert_relative_eq!(report.denoising_gain, 2.0, max_relative = 1e-12);
        assert_relative_eq!(report.nmse, (0.25f64 / 2.0).powi(2), max_relative = 1e-12);
    }

    #[test]
    fn welch_zero_signal_is_zero() {
        let (_, psd) = welch_psd(&vec![0.0; 4096], 1.0, 256, 0.5).unwrap();
        assert!(psd.iter().all(|p| *p == 0.0));
    }

    #[test]
    fn welch_parseval_white_noise() {
        let xs = colored_noise(1 << 15, 0.0, 3).unwrap();
        let (freq, psd) = welch_psd(&xs, 2.0, 1024, 0.5).unwrap();
        let df = freq[1] - freq[0];
        let integral: f64 = psd.iter().sum::<f64>() * df;
        assert!(
            (integral - 1.0).abs() < 0.05,
            "integrated PSD {integral} vs variance 1"
        );
    }

    #[test]
    fn welch_parseval_sine() {
        let amp = 3.0;
        let fs = 100.0;
        let xs: Vec<f64> = (0..1 << 14)
            .map(|i| amp * (2.0 * std::f64::consts::PI * 12.5 * i as f64 / fs).sin())
            .collect();
        let (freq, psd) = welch_psd(&xs, fs, 1024, 0.5).unwrap();
        let df = freq[1] - freq[0];
        let integral: f64 = psd.iter().sum::<f64>() * df;
        let expected = amp * amp / 2.0;
        assert!(
            ((integral - expected) / expected).abs() < 0.05,
            "integral {integral} vs {expected}"
        );
    }

    #[test]
    fn welch_rejects_bad_segments() {
        let xs = vec![0.0; 100];
        assert!(welch_psd(&xs, 1.0, 300, 0.5).is_err());
        assert!(welch_psd(&xs, 1.0, 100, 0.5).is_err());
        assert!(welch_psd(&xs, 1.0, 0, 0.5).is_err());
    }

    #[test]
    fn slope_of_flat_psd_is_zero() {
        let freq: Vec<f64> = (1..100).map(|k| k as f64).collect();
        let psd = vec![2.0; 99];
        assert_relative_eq!(psd_slope(&freq, &psd, 1.0, 99.0).unwrap(), 0.0);
    }

    #[test]
    fn slope_of_linear_psd_is_one() {
        let freq: Vec<f64> = (1..100).map(|k| k as f64).collect();
        let psd = freq.clone();
        assert_relative_eq!(
            psd_slope(&freq, &psd, 1.0, 99.0).unwrap(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn slope_needs_points_and_positive_psd() {
        let freq = vec![1.0, 2.0, 3.0, 4.0];
        let psd = vec![1.0, 1.0, 1.0, 1.0];
        assert!(psd_slope(&freq, &psd, 1.0, 2.5).is_err());
        let with_zero = vec![1.0, 0.0, 1.0, 1.0];
        assert!(psd_slope(&freq, &with_zero, 1.0, 4.0).is_err());
    }

    #[test]
    fn generator_slopes_match_their_exponents() {
        for (exponent, want) in [(-1.0, -1.0), (0.0, 0.0), (1.0, 1.0)] {
            let xs = colored_noise(1 << 16, exponent, 17).unwrap();
            let (freq, psd) = welch_psd(&xs, 1.0, 2048, 0.5).unwrap();
            let slope = psd_slope(&freq, &psd, 0.02, 0.2).unwrap();
            assert!(
                (slope - want).abs() < 0.15,
                "exponent {exponent}: slope {slope}"
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn prop_snr_is_scale_equivariant(c in 0.01f64..100.0) {
            let clean = traj(vec![1.0, 2.0, -1.5, 0.5, 2.5, -2.0, 1.0, 0.25], 1);
            let cand = traj(vec![1.1, 1.9, -1.4, 0.6, 2.4, -2.1, 0.9, 0.3], 1);
            let base = snr(&clean, &cand).unwrap();
            let scale = |t: &Trajectory| {
                Trajectory::new(
                    t.t0(),
                    t.dt(),
                    t.values() * c,
                    t.channel_names().to_vec(),
                )
                .unwrap()
            };
            let scaled = snr(&scale(&clean), &scale(&cand)).unwrap();
            prop_assert!((scaled - base).abs() <= 1e-9 * base);
        }

        #[test]
        fn prop_gain_of_identity_is_one(seed in 0u64..500) {
            let clean = traj(vec![1.0, 2.0, -1.5, 0.5, 2.5, -2.0, 1.0, 0.25], 1);
            let noise = crate::noise::gaussian_white(8, 0.3, seed).unwrap();
            let vals: Vec<f64> = clean.values().iter().zip(&noise).map(|(c, n)| c + n).collect();
            let cand = traj(vals, 1);
            if cand.values() != clean.values() {
                let report = denoising_gain(&clean, &cand, &cand).unwrap();
                prop_assert_eq!(report.denoising_gain, 1.0);
            }
        }
    }
}
