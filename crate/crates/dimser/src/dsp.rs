//! Frame-level signal processing primitives.
//!
//! Everything here is a pure function of its inputs: framing, RMS energy,
//! Hann-windowed magnitude spectra, MFCCs, autocorrelation pitch, spectral
//! slope and flux. These are the low-level descriptors summarized per
//! utterance by the `features` module.

use crate::error::{Error, Result};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Default voicing threshold on the normalized autocorrelation peak.
pub const VOICING_THRESHOLD: f64 = 0.3;

/// Floor applied before any log/dB computation.
pub const LOG_FLOOR: f64 = 1e-10;

/// A mono audio signal with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample_rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument("samples must be finite".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Fixed-length overlapping windows cut from a signal.
///
/// Frame `k` starts at sample `k * hop_len`; trailing samples that do not
/// fill a whole window are dropped.
#[derive(Debug, Clone)]
pub struct FrameSeries {
    pub frames: Vec<Vec<f64>>,
    pub win_len: usize,
    pub hop_len: usize,
    pub sample_rate: u32,
}

impl FrameSeries {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// One-sided magnitude spectrum of a frame.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub magnitudes: Vec<f64>,
    /// Frequency resolution in Hz: sample_rate / transform_size.
    pub bin_hz: f64,
}

impl Spectrum {
    /// Frequency of bin `i` in Hz.
    pub fn bin_freq(&self, i: usize) -> f64 {
        i as f64 * self.bin_hz
    }

    pub fn nyquist(&self) -> f64 {
        (self.magnitudes.len() - 1) as f64 * self.bin_hz
    }
}

/// Cut a signal into fixed-length frames with the given window and hop in
/// milliseconds. A signal shorter than one window yields zero frames.
pub fn frame_signal(audio: &AudioBuffer, win_ms: f64, hop_ms: f64) -> Result<FrameSeries> {
    if !(hop_ms > 0.0) || !(win_ms >= hop_ms) {
        return Err(Error::InvalidArgument(format!(
            "window/hop must satisfy win_ms >= hop_ms > 0 (got win {win_ms}, hop {hop_ms})"
        )));
    }
    let sr = audio.sample_rate as f64;
    let win_len = (win_ms * sr / 1000.0).round() as usize;
    let hop_len = (hop_ms * sr / 1000.0).round() as usize;
    if win_len == 0 || hop_len == 0 {
        return Err(Error::InvalidArgument(
            "window/hop shorter than one sample".into(),
        ));
    }
    let n = audio.samples.len();
    let n_frames = if n >= win_len { (n - win_len) / hop_len + 1 } else { 0 };
    let frames = (0..n_frames)
        .map(|k| audio.samples[k * hop_len..k * hop_len + win_len].to_vec())
        .collect();
    Ok(FrameSeries {
        frames,
        win_len,
        hop_len,
        sample_rate: audio.sample_rate,
    })
}

/// Root-mean-square energy of one frame.
pub fn rms(frame: &[f64]) -> Result<f64> {
    if frame.is_empty() {
        return Err(Error::InvalidArgument("rms of an empty frame".into()));
    }
    let sum_sq: f64 = frame.iter().map(|x| x * x).sum();
    Ok((sum_sq / frame.len() as f64).sqrt())
}

fn hann_window(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let nm1 = (n - 1) as f64;
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / nm1).cos())
        .collect()
}

/// Hann-windowed one-sided magnitude spectrum. The transform size is the
/// next power of two at or above the frame length.
pub fn magnitude_spectrum(frame: &[f64], sample_rate: u32) -> Result<Spectrum> {
    if frame.is_empty() {
        return Err(Error::InvalidArgument("spectrum of an empty frame".into()));
    }
    let nfft = frame.len().next_power_of_two();
    let window = hann_window(frame.len());
    let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); nfft];
    for (i, (&x, &w)) in frame.iter().zip(window.iter()).enumerate() {
        buf[i] = Complex::new(x * w, 0.0);
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(nfft).process(&mut buf);
    let magnitudes = buf[..nfft / 2 + 1].iter().map(|c| c.norm()).collect();
    Ok(Spectrum {
        magnitudes,
        bin_hz: sample_rate as f64 / nfft as f64,
    })
}

/// Hz to mel, HTK-style.
fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Log-energies of `n_mels` triangular mel filters spanning 20 Hz to
/// Nyquist, computed over the power spectrum with a floor of `LOG_FLOOR`.
pub fn mel_log_energies(spectrum: &Spectrum, n_mels: usize) -> Vec<f64> {
    let n_bins = spectrum.magnitudes.len();
    let f_lo = 20.0;
    let f_hi = spectrum.nyquist();
    let mel_lo = hz_to_mel(f_lo);
    let mel_hi = hz_to_mel(f_hi);

    // Filter edge frequencies, evenly spaced on the mel scale.
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();

    let mut energies = vec![0.0; n_mels];
    for (m, energy) in energies.iter_mut().enumerate() {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let mut acc = 0.0;
        for bin in 0..n_bins {
            let f = spectrum.bin_freq(bin);
            let weight = if f >= left && f <= center {
                if center > left { (f - left) / (center - left) } else { 0.0 }
            } else if f > center && f <= right {
                if right > center { (right - f) / (right - center) } else { 0.0 }
            } else {
                0.0
            };
            let mag = spectrum.magnitudes[bin];
            acc += weight * mag * mag;
        }
        *energy = acc.max(LOG_FLOOR).ln();
    }
    energies
}

/// Mel-frequency cepstral coefficients 1..=n_coeffs of a spectrum.
///
/// Orthonormal DCT-II of the mel filterbank log-energies; coefficient 0
/// is excluded.
pub fn mfcc(spectrum: &Spectrum, n_mels: usize, n_coeffs: usize) -> Result<Vec<f64>> {
    if n_coeffs > n_mels {
        return Err(Error::InvalidArgument(format!(
            "n_coeffs ({n_coeffs}) must not exceed n_mels ({n_mels})"
        )));
    }
    let energies = mel_log_energies(spectrum, n_mels);

    // Orthonormal DCT-II, coefficients 1..=n_coeffs.
    let m_total = n_mels as f64;
    let scale = (2.0 / m_total).sqrt();
    let mut coeffs = Vec::with_capacity(n_coeffs);
    for k in 1..=n_coeffs {
        let mut c = 0.0;
        for (m, &e) in energies.iter().enumerate() {
            c += e * (std::f64::consts::PI * k as f64 * (m as f64 + 0.5) / m_total).cos();
        }
        coeffs.push(scale * c);
    }
    Ok(coeffs)
}

/// Fundamental frequency by normalized autocorrelation peak search.
///
/// Returns 0 for unvoiced frames (peak below the voicing threshold) and
/// for frames too short to cover the longest candidate lag.
pub fn f0_autocorrelation(frame: &[f64], sample_rate: u32, fmin: f64, fmax: f64) -> Result<f64> {
    f0_autocorrelation_with_threshold(frame, sample_rate, fmin, fmax, VOICING_THRESHOLD)
}

/// As [`f0_autocorrelation`] with an explicit voicing threshold.
pub fn f0_autocorrelation_with_threshold(
    frame: &[f64],
    sample_rate: u32,
    fmin: f64,
    fmax: f64,
    threshold: f64,
) -> Result<f64> {
    let sr = sample_rate as f64;
    if !(fmin < fmax && fmax < sr / 2.0 && fmin > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < fmin < fmax < sample_rate/2 (got fmin {fmin}, fmax {fmax})"
        )));
    }
    let min_lag = (sr / fmax).ceil() as usize;
    let max_lag = (sr / fmin).floor() as usize;
    let n = frame.len();
    // Not enough overlap to evaluate all candidate lags: unvoiced, not an error.
    if n < max_lag + 2 || min_lag < 1 {
        return Ok(0.0);
    }

    let norm_corr = |lag: usize| -> f64 {
        let overlap = n - lag;
        let mut dot = 0.0;
        let mut e0 = 0.0;
        let mut e1 = 0.0;
        for i in 0..overlap {
            dot += frame[i] * frame[i + lag];
            e0 += frame[i] * frame[i];
            e1 += frame[i + lag] * frame[i + lag];
        }
        let denom = (e0 * e1).sqrt();
        if denom > 0.0 { dot / denom } else { 0.0 }
    };

    let r: Vec<f64> = (min_lag..=max_lag).map(norm_corr).collect();
    let (mut best_idx, mut best_val) = (0usize, f64::NEG_INFINITY);
    for (i, &v) in r.iter().enumerate() {
        if v > best_val {
            best_val = v;
            best_idx = i;
        }
    }
    if best_val < threshold {
        return Ok(0.0);
    }
    // A multiple of the true period correlates almost as strongly as the
    // period itself, so a plain argmax is prone to octave-down errors.
    // Prefer the shortest-lag local maximum that comes close to the peak.
    for (i, &v) in r.iter().enumerate() {
        let left_ok = i == 0 || r[i - 1] <= v;
        let right_ok = i + 1 == r.len() || r[i + 1] <= v;
        if left_ok && right_ok && v >= threshold && v >= 0.85 * best_val {
            best_idx = i;
            best_val = v;
            break;
        }
    }
    let best_lag = min_lag + best_idx;

    // Parabolic interpolation around the peak lag.
    let mut lag_est = best_lag as f64;
    if best_lag > min_lag && best_lag < max_lag {
        let rl = norm_corr(best_lag - 1);
        let rc = best_val;
        let rr = norm_corr(best_lag + 1);
        let denom = rl - 2.0 * rc + rr;
        if denom.abs() > 1e-30 {
            let delta = 0.5 * (rl - rr) / denom;
            if delta.abs() <= 1.0 {
                lag_est += delta;
            }
        }
    }
    Ok(sr / lag_est)
}

/// Least-squares slope of the dB magnitude against frequency over a band.
pub fn spectral_slope(spectrum: &Spectrum, band_lo: f64, band_hi: f64) -> Result<f64> {
    if !(band_lo < band_hi) || band_hi > spectrum.nyquist() + 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "band must satisfy lo < hi <= Nyquist (got {band_lo}..{band_hi})"
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, &mag) in spectrum.magnitudes.iter().enumerate() {
        let f = spectrum.bin_freq(i);
        if f >= band_lo && f <= band_hi {
            xs.push(f);
            ys.push(20.0 * (mag + LOG_FLOOR).log10());
        }
    }
    if xs.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "band {band_lo}..{band_hi} Hz contains fewer than 2 bins"
        )));
    }
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    for (&x, &y) in xs.iter().zip(ys.iter()) {
        cov += (x - mean_x) * (y - mean_y);
        var_x += (x - mean_x) * (x - mean_x);
    }
    Ok(cov / var_x)
}

/// Euclidean distance between L2-normalized magnitude vectors.
///
/// A zero spectrum normalizes to the zero vector. Always in [0, 2].
pub fn spectral_flux(current: &Spectrum, previous: &Spectrum) -> Result<f64> {
    if current.magnitudes.len() != previous.magnitudes.len() {
        return Err(Error::ShapeMismatch(format!(
            "spectral_flux bin counts differ: {} vs {}",
            current.magnitudes.len(),
            previous.magnitudes.len()
        )));
    }
    let norm = |m: &[f64]| -> Vec<f64> {
        let n = m.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            m.iter().map(|x| x / n).collect()
        } else {
            m.to_vec()
        }
    };
    let a = norm(&current.magnitudes);
    let b = norm(&previous.magnitudes);
    Ok(a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn sine(freq: f64, sr: u32, n: usize, amp: f64) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin())
            .collect()
    }

    #[test]
    fn frame_count_boundary_cases() {
        let exact = AudioBuffer::new(vec![0.0; 400], 16000).unwrap();
        assert_eq!(frame_signal(&exact, 25.0, 10.0).unwrap().len(), 1);

        let one_sec = AudioBuffer::new(vec![0.0; 16000], 16000).unwrap();
        assert_eq!(frame_signal(&one_sec, 25.0, 10.0).unwrap().len(), 98);

        let short = AudioBuffer::new(vec![0.0; 399], 16000).unwrap();
        assert_eq!(frame_signal(&short, 25.0, 10.0).unwrap().len(), 0);

        let empty = AudioBuffer::new(vec![], 16000).unwrap();
        assert_eq!(frame_signal(&empty, 25.0, 10.0).unwrap().len(), 0);
    }

    #[test]
    fn frame_count_matches_enumeration() {
        // Independent oracle: enumerate valid frame start offsets.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let n = rng.gen_range(0..5000);
            let win = rng.gen_range(1..400usize);
            let hop = rng.gen_range(1..=win);
            let audio = AudioBuffer::new(vec![0.0; n], 1000).unwrap();
            let win_ms = win as f64; // 1 kHz: 1 ms = 1 sample
            let hop_ms = hop as f64;
            let fs = frame_signal(&audio, win_ms, hop_ms).unwrap();
            let expected = (0..).take_while(|k| k * hop + win <= n).count();
            assert_eq!(fs.len(), expected, "n={n} win={win} hop={hop}");
            for (k, frame) in fs.frames.iter().enumerate() {
                assert_eq!(frame.len(), win);
                assert_eq!(frame.as_slice(), &audio.samples[k * hop..k * hop + win]);
            }
        }
    }

    #[test]
    fn frame_signal_rejects_bad_args() {
        let audio = AudioBuffer::new(vec![0.0; 100], 16000).unwrap();
        assert!(frame_signal(&audio, 0.0, 0.0).is_err());
        assert!(frame_signal(&audio, 5.0, 10.0).is_err());
    }

    #[test]
    fn rms_cases() {
        assert_eq!(rms(&[0.0; 10]).unwrap(), 0.0);
        assert_abs_diff_eq!(rms(&[-0.5; 7]).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(rms(&[3.0, 4.0]).unwrap(), (25.0f64 / 2.0).sqrt(), epsilon = 1e-12);
        assert!(rms(&[]).is_err());
    }

    #[test]
    fn rms_homogeneity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let frame: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c = -2.5;
        let scaled: Vec<f64> = frame.iter().map(|x| c * x).collect();
        assert_abs_diff_eq!(rms(&scaled).unwrap(), c.abs() * rms(&frame).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn spectrum_of_zero_frame_is_zero() {
        let s = magnitude_spectrum(&[0.0; 400], 16000).unwrap();
        assert_eq!(s.magnitudes.len(), 257);
        assert!(s.magnitudes.iter().all(|&m| m == 0.0));
        assert_abs_diff_eq!(s.bin_hz, 16000.0 / 512.0, epsilon = 1e-12);
    }

    #[test]
    fn spectrum_peak_at_bin_frequency() {
        // 512-sample frame: nfft 512, bin width sr/512. Put a sine exactly on bin 32.
        let sr = 16000;
        let freq = 32.0 * sr as f64 / 512.0;
        let frame = sine(freq, sr, 512, 0.8);
        let s = magnitude_spectrum(&frame, sr).unwrap();
        let argmax = s
            .magnitudes
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, 32);
    }

    #[test]
    fn spectrum_parseval() {
        // Oracle: sum of squared windowed samples equals sum of squared
        // magnitudes / nfft over the full (two-sided) transform.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let frame: Vec<f64> = (0..400).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = magnitude_spectrum(&frame, 16000).unwrap();
        let nfft = 512usize;
        let window = hann_window(frame.len());
        let time_energy: f64 = frame
            .iter()
            .zip(window.iter())
            .map(|(x, w)| (x * w) * (x * w))
            .sum();
        // Reconstruct the two-sided energy from the one-sided magnitudes.
        let mut freq_energy = s.magnitudes[0] * s.magnitudes[0]
            + s.magnitudes[nfft / 2] * s.magnitudes[nfft / 2];
        for m in &s.magnitudes[1..nfft / 2] {
            freq_energy += 2.0 * m * m;
        }
        freq_energy /= nfft as f64;
        assert!((time_energy - freq_energy).abs() / time_energy < 1e-6);
    }

    #[test]
    fn mfcc_of_zero_spectrum_is_zero() {
        let s = magnitude_spectrum(&[0.0; 400], 16000).unwrap();
        let c = mfcc(&s, 26, 4).unwrap();
        assert_eq!(c.len(), 4);
        for v in c {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn mfcc_rejects_too_many_coeffs() {
        let s = magnitude_spectrum(&[0.1; 400], 16000).unwrap();
        assert!(mfcc(&s, 4, 5).is_err());
    }

    #[test]
    fn mfcc_deterministic_and_matches_matrix_dct_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frame: Vec<f64> = (0..400).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = magnitude_spectrum(&frame, 16000).unwrap();
        let a = mfcc(&s, 26, 4).unwrap();
        let b = mfcc(&s, 26, 4).unwrap();
        assert_eq!(a, b, "bit-exact reproducibility");

        // Oracle: explicit orthonormal DCT-II matrix applied to the
        // filterbank log-energies.
        let n_mels = 26usize;
        let energies = mel_log_energies(&s, n_mels);
        let m = n_mels as f64;
        for (k, &c) in a.iter().enumerate() {
            let kk = (k + 1) as f64;
            let mut dot = 0.0;
            for (j, &e) in energies.iter().enumerate() {
                dot += e * (std::f64::consts::PI * kk * (j as f64 + 0.5) / m).cos();
            }
            dot *= (2.0 / m).sqrt();
            assert_abs_diff_eq!(c, dot, epsilon = 1e-9);
        }
    }

    #[test]
    fn f0_pure_sine() {
        let frame = sine(200.0, 16000, 400, 0.9);
        let f0 = f0_autocorrelation(&frame, 16000, 50.0, 500.0).unwrap();
        assert!((f0 - 200.0).abs() <= 2.0, "got {f0}");
    }

    #[test]
    fn f0_zero_frame_unvoiced() {
        assert_eq!(f0_autocorrelation(&[0.0; 400], 16000, 50.0, 500.0).unwrap(), 0.0);
    }

    #[test]
    fn f0_white_noise_mostly_unvoiced() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut unvoiced = 0;
        for _ in 0..100 {
            let frame: Vec<f64> = (0..400).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if f0_autocorrelation(&frame, 16000, 80.0, 400.0).unwrap() == 0.0 {
                unvoiced += 1;
            }
        }
        assert!(unvoiced >= 90, "only {unvoiced}/100 frames rejected");
    }

    #[test]
    fn f0_accuracy_over_range() {
        // Synthetic sines across the speech F0 range.
        let mut total = 0;
        let mut good = 0;
        for f in (60..=450).step_by(10) {
            let frame = sine(f as f64, 16000, 400, 0.7);
            let est = f0_autocorrelation(&frame, 16000, 50.0, 500.0).unwrap();
            total += 1;
            if (est - f as f64).abs() <= 2.0 {
                good += 1;
            }
        }
        assert!(good as f64 / total as f64 >= 0.95, "{good}/{total} within 2 Hz");
    }

    #[test]
    fn f0_short_frame_returns_zero() {
        let frame = sine(200.0, 16000, 100, 0.9);
        assert_eq!(f0_autocorrelation(&frame, 16000, 50.0, 500.0).unwrap(), 0.0);
    }

    #[test]
    fn slope_flat_spectrum_is_zero() {
        let s = Spectrum { magnitudes: vec![0.5; 257], bin_hz: 31.25 };
        assert_abs_diff_eq!(spectral_slope(&s, 0.0, 500.0).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn slope_recovers_exact_line() {
        // Magnitudes forming an exact line in dB: 20 log10(m) = a f + b.
        let a = -0.01;
        let b = -3.0;
        let bin_hz = 31.25;
        let magnitudes: Vec<f64> = (0..257)
            .map(|i| 10f64.powf((a * i as f64 * bin_hz + b) / 20.0) - LOG_FLOOR)
            .collect();
        let s = Spectrum { magnitudes, bin_hz };
        assert_abs_diff_eq!(spectral_slope(&s, 0.0, 4000.0).unwrap(), a, epsilon = 1e-9);
    }

    #[test]
    fn slope_matches_normal_equations_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bin_hz = 31.25;
        let magnitudes: Vec<f64> = (0..257).map(|_| rng.gen_range(0.01..1.0)).collect();
        let s = Spectrum { magnitudes: magnitudes.clone(), bin_hz };
        let got = spectral_slope(&s, 0.0, 1500.0).unwrap();
        // Normal equations: slope = (n Σxy − Σx Σy) / (n Σx² − (Σx)²).
        let pts: Vec<(f64, f64)> = magnitudes
            .iter()
            .enumerate()
            .map(|(i, &m)| (i as f64 * bin_hz, 20.0 * (m + LOG_FLOOR).log10()))
            .filter(|&(f, _)| f <= 1500.0)
            .collect();
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let oracle = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert_abs_diff_eq!(got, oracle, epsilon = 1e-9);
    }

    #[test]
    fn slope_scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let magnitudes: Vec<f64> = (0..257).map(|_| rng.gen_range(0.01..1.0)).collect();
        let scaled: Vec<f64> = magnitudes.iter().map(|m| 7.5 * m).collect();
        let s1 = Spectrum { magnitudes, bin_hz: 31.25 };
        let s2 = Spectrum { magnitudes: scaled, bin_hz: 31.25 };
        let a = spectral_slope(&s1, 0.0, 500.0).unwrap();
        let b = spectral_slope(&s2, 0.0, 500.0).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-9);
    }

    #[test]
    fn slope_band_too_narrow() {
        let s = Spectrum { magnitudes: vec![0.5; 257], bin_hz: 31.25 };
        assert!(spectral_slope(&s, 10.0, 20.0).is_err());
    }

    #[test]
    fn flux_cases() {
        let a = Spectrum { magnitudes: vec![1.0, 2.0, 3.0], bin_hz: 1.0 };
        assert_abs_diff_eq!(spectral_flux(&a, &a).unwrap(), 0.0, epsilon = 1e-15);

        let e1 = Spectrum { magnitudes: vec![1.0, 0.0], bin_hz: 1.0 };
        let e2 = Spectrum { magnitudes: vec![0.0, 1.0], bin_hz: 1.0 };
        assert_abs_diff_eq!(spectral_flux(&e1, &e2).unwrap(), 2f64.sqrt(), epsilon = 1e-12);

        let bad = Spectrum { magnitudes: vec![1.0; 4], bin_hz: 1.0 };
        assert!(spectral_flux(&a, &bad).is_err());
    }

    #[test]
    fn flux_matches_direct_formula_and_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let m1: Vec<f64> = (0..32).map(|_| rng.gen_range(0.0..1.0)).collect();
            let m2: Vec<f64> = (0..32).map(|_| rng.gen_range(0.0..1.0)).collect();
            let s1 = Spectrum { magnitudes: m1.clone(), bin_hz: 1.0 };
            let s2 = Spectrum { magnitudes: m2.clone(), bin_hz: 1.0 };
            let got = spectral_flux(&s1, &s2).unwrap();
            let n1 = m1.iter().map(|x| x * x).sum::<f64>().sqrt();
            let n2 = m2.iter().map(|x| x * x).sum::<f64>().sqrt();
            let oracle = m1
                .iter()
                .zip(m2.iter())
                .map(|(a, b)| (a / n1 - b / n2).powi(2))
                .sum::<f64>()
                .sqrt();
            assert_abs_diff_eq!(got, oracle, epsilon = 1e-12);
            assert!((0.0..=2.0).contains(&got));
        }
    }
}
