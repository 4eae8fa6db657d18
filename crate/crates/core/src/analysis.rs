//! Measurements on rendered drive signals: beat period and carrier frequency.

use rustfft::{num_complex::Complex, FftPlanner};

/// Minimum spacing between two detected beat onsets, seconds.
const REFRACTORY_S: f64 = 0.1;

/// Sample indices where the signal first rises above `threshold_fraction` of
/// its peak magnitude, at most one per refractory window.
///
/// With the default waveform constants only the first heart sound crosses
/// 0.6 of the peak, so that threshold yields one onset per beat.
pub fn beat_onsets(samples: &[f64], sample_rate: u32, threshold_fraction: f64) -> Vec<usize> {
    let peak = samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak == 0.0 {
        return Vec::new();
    }
    let threshold = threshold_fraction * peak;
    let gap = (REFRACTORY_S * f64::from(sample_rate)) as usize;
    let mut onsets: Vec<usize> = Vec::new();
    for (i, x) in samples.iter().enumerate() {
        if x.abs() >= threshold && onsets.last().is_none_or(|&last| i - last >= gap) {
            onsets.push(i);
        }
    }
    onsets
}

/// Mean interval between beat onsets in seconds, if at least two were found.
pub fn beat_period(samples: &[f64], sample_rate: u32) -> Option<f64> {
    let onsets = beat_onsets(samples, sample_rate, 0.6);
    if onsets.len() < 2 {
        return None;
    }
    let span = (onsets[onsets.len() - 1] - onsets[0]) as f64;
    Some(span / (onsets.len() - 1) as f64 / f64::from(sample_rate))
}

/// Frequency of the largest non-DC magnitude bin of the spectrum.
pub fn dominant_frequency(samples: &[f64], sample_rate: u32) -> Option<f64> {
    let n = samples.len();
    if n < 4 {
        return None;
    }
    let mut spectrum: Vec<Complex<f64>> = samples.iter().map(|&x| Complex::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut spectrum);
    let (bin, _) = spectrum[1..n / 2]
        .iter()
        .enumerate()
        .map(|(i, c)| (i + 1, c.norm_sqr()))
        .max_by(|a, b| a.1.total_cmp(&b.1))?;
    Some(bin as f64 * f64::from(sample_rate) / n as f64)
}

/// Carrier estimate from the sign-change rate over the whole buffer.
pub fn zero_crossing_frequency(samples: &[f64], sample_rate: u32) -> Option<f64> {
    let mut crossings = 0usize;
    let mut prev_sign = 0i8;
    for &x in samples {
        let sign = if x > 0.0 {
            1
        } else if x < 0.0 {
            -1
        } else {
            continue;
        };
        if prev_sign != 0 && sign != prev_sign {
            crossings += 1;
        }
        prev_sign = sign;
    }
    if crossings == 0 {
        return None;
    }
    let duration = samples.len() as f64 / f64::from(sample_rate);
    Some(crossings as f64 / 2.0 / duration)
}
