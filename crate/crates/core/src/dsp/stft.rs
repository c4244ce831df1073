//! Band-limited log-magnitude STFT of multi-lead records.
//!
//! Per lead: frame, Hann-window, zero-pad to `n_fft`, transform, take
//! magnitudes, compress with `ln(|X| + ε)`, keep bins inside the ECG band,
//! then z-normalize each lead over all of its retained values.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::fft::FftPlan;
use crate::data::EcgRecord;
use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowFn {
    Hann,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StftConfig {
    pub window_size: usize,
    pub hop: usize,
    pub n_fft: usize,
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    pub window_fn: WindowFn,
    pub log_epsilon: f64,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_size: 64,
            hop: 16,
            n_fft: 480,
            band_low_hz: 0.5,
            band_high_hz: 40.0,
            window_fn: WindowFn::Hann,
            log_epsilon: 1e-6,
        }
    }
}

impl StftConfig {
    pub fn validate(&self, sample_rate: f64) -> Result<()> {
        if self.hop == 0 || self.hop > self.window_size || self.window_size > self.n_fft {
            return Err(Error::config(format!(
                "need 0 < hop ≤ window_size ≤ n_fft, got hop={} window={} n_fft={}",
                self.hop, self.window_size, self.n_fft
            )));
        }
        if !(0.0 <= self.band_low_hz && self.band_low_hz < self.band_high_hz)
            || self.band_high_hz > sample_rate / 2.0
        {
            return Err(Error::config(format!(
                "band [{}, {}] Hz invalid for fs={sample_rate}",
                self.band_low_hz, self.band_high_hz
            )));
        }
        if !(self.log_epsilon > 0.0) {
            return Err(Error::config("log_epsilon must be positive"));
        }
        Ok(())
    }

    /// `floor((T − window)/hop) + 1`, or 0 when the record is too short.
    pub fn frame_count(&self, n_samples: usize) -> usize {
        if n_samples < self.window_size {
            0
        } else {
            (n_samples - self.window_size) / self.hop + 1
        }
    }

    /// Frequencies of bins `0..=n_fft/2`.
    pub fn bin_freqs(&self, sample_rate: f64) -> Vec<f64> {
        (0..=self.n_fft / 2)
            .map(|k| k as f64 * sample_rate / self.n_fft as f64)
            .collect()
    }

    /// Number of bins kept by the band filter.
    pub fn retained_bins(&self, sample_rate: f64) -> usize {
        self.bin_freqs(sample_rate)
            .iter()
            .filter(|&&f| f >= self.band_low_hz && f <= self.band_high_hz)
            .count()
    }

    /// Canonical text form; identical configs give identical keys.
    pub fn cache_key(&self) -> String {
        format!(
            "window={};hop={};n_fft={};band={}-{};window_fn=hann;eps={:e}",
            self.window_size, self.hop, self.n_fft, self.band_low_hz, self.band_high_hz, self.log_epsilon
        )
    }

    pub fn window(&self) -> Vec<f64> {
        match self.window_fn {
            WindowFn::Hann => hann(self.window_size),
        }
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * math::cos(2.0 * core::f64::consts::PI * i as f64 / n as f64))
        .collect()
}

/// A `frames × leads × bins` time-frequency tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    frames: usize,
    leads: usize,
    bins: usize,
    values: Vec<f64>,
    /// Centre time of each frame, seconds.
    pub frame_times: Vec<f64>,
    pub bin_freqs: Vec<f64>,
}

impl Spectrogram {
    pub fn new(
        frames: usize,
        leads: usize,
        bin_freqs: Vec<f64>,
        frame_times: Vec<f64>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let bins = bin_freqs.len();
        if frames == 0 || leads == 0 || bins == 0 || values.len() != frames * leads * bins || frame_times.len() != frames {
            return Err(Error::InvalidShape {
                shape: vec![frames, leads, bins],
                reason: "spectrogram values do not match its axes",
            });
        }
        Ok(Self {
            frames,
            leads,
            bins,
            values,
            frame_times,
            bin_freqs,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn leads(&self) -> usize {
        self.leads
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, frame: usize, lead: usize, bin: usize) -> f64 {
        self.values[(frame * self.leads + lead) * self.bins + bin]
    }

    /// `frames × (leads·bins)`, each row one frame flattened lead-major.
    pub fn feature_tensor(&self) -> Tensor {
        Tensor::new([self.frames, self.leads * self.bins], self.values.clone())
            .expect("spectrogram axes are non-empty")
    }

    /// `frames × bins` for a single lead.
    pub fn lead_tensor(&self, lead: usize) -> Tensor {
        let mut data = Vec::with_capacity(self.frames * self.bins);
        for f in 0..self.frames {
            let start = (f * self.leads + lead) * self.bins;
            data.extend_from_slice(&self.values[start..start + self.bins]);
        }
        Tensor::new([self.frames, self.bins], data).expect("spectrogram axes are non-empty")
    }

    pub fn as_tensor(&self) -> Tensor {
        Tensor::new([self.frames, self.leads, self.bins], self.values.clone())
            .expect("spectrogram axes are non-empty")
    }
}

/// Linear STFT magnitudes over all `n_fft/2 + 1` bins, before any
/// compression, filtering or normalization.
pub fn magnitude_spectrogram(record: &EcgRecord, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate(record.sample_rate)?;
    let t = record.n_samples();
    if t < cfg.window_size {
        return Err(Error::config(format!(
            "record {} has {t} samples, fewer than the window size {}",
            record.record_id, cfg.window_size
        )));
    }
    let frames = cfg.frame_count(t);
    let leads = record.n_leads();
    let n_bins = cfg.n_fft / 2 + 1;
    let plan = FftPlan::new(cfg.n_fft);
    let window = cfg.window();
    let mut values = vec![0.0; frames * leads * n_bins];
    let mut frame_a = vec![0.0; cfg.window_size];
    let mut frame_b = vec![0.0; cfg.window_size];
    // two leads per complex transform
    for lead in (0..leads).step_by(2) {
        let paired = lead + 1 < leads;
        for f in 0..frames {
            let start = f * cfg.hop;
            for (i, w) in window.iter().enumerate() {
                frame_a[i] = record.sample(start + i, lead) * w;
                if paired {
                    frame_b[i] = record.sample(start + i, lead + 1) * w;
                }
            }
            let (ma, mb) = plan.real_magnitudes_pair(&frame_a, if paired { &frame_b } else { &[] });
            let dst = (f * leads + lead) * n_bins;
            values[dst..dst + n_bins].copy_from_slice(&ma);
            if paired {
                values[dst + n_bins..dst + 2 * n_bins].copy_from_slice(&mb);
            }
        }
    }
    let frame_times = (0..frames)
        .map(|f| (f * cfg.hop) as f64 / record.sample_rate + cfg.window_size as f64 / (2.0 * record.sample_rate))
        .collect();
    Spectrogram::new(frames, leads, cfg.bin_freqs(record.sample_rate), frame_times, values)
}

/// The model input: band-filtered, log-compressed, lead-normalized STFT.
pub fn stft_spectrogram(record: &EcgRecord, cfg: &StftConfig) -> Result<Spectrogram> {
    let mut spec = magnitude_spectrogram(record, cfg)?;
    let eps = cfg.log_epsilon;
    spec.values.iter_mut().for_each(|v| *v = math::ln(*v + eps));
    let mut spec = band_filter(&spec, cfg.band_low_hz, cfg.band_high_hz)?;
    normalize_leads(&mut spec);
    Ok(spec)
}

/// Keeps bins whose frequency lies in `[lo_hz, hi_hz]`.
pub fn band_filter(spec: &Spectrogram, lo_hz: f64, hi_hz: f64) -> Result<Spectrogram> {
    if !(lo_hz < hi_hz) {
        return Err(Error::config(format!("band low {lo_hz} must be below high {hi_hz}")));
    }
    let keep: Vec<usize> = spec
        .bin_freqs
        .iter()
        .enumerate()
        .filter(|(_, &f)| f >= lo_hz && f <= hi_hz)
        .map(|(k, _)| k)
        .collect();
    if keep.is_empty() {
        return Err(Error::config(format!("no bins inside [{lo_hz}, {hi_hz}] Hz")));
    }
    let mut values = Vec::with_capacity(spec.frames * spec.leads * keep.len());
    for f in 0..spec.frames {
        for l in 0..spec.leads {
            let base = (f * spec.leads + l) * spec.bins;
            values.extend(keep.iter().map(|&k| spec.values[base + k]));
        }
    }
    let freqs = keep.iter().map(|&k| spec.bin_freqs[k]).collect();
    Spectrogram::new(spec.frames, spec.leads, freqs, spec.frame_times.clone(), values)
}

/// Per-lead z-normalization over frames × bins. A constant lead maps to
/// zeros.
fn normalize_leads(spec: &mut Spectrogram) {
    let (frames, leads, bins) = (spec.frames, spec.leads, spec.bins);
    let count = (frames * bins) as f64;
    for l in 0..leads {
        let idx = |f: usize, k: usize| (f * leads + l) * bins + k;
        let mut mean = 0.0;
        for f in 0..frames {
            for k in 0..bins {
                mean += spec.values[idx(f, k)];
            }
        }
        mean /= count;
        let mut var = 0.0;
        for f in 0..frames {
            for k in 0..bins {
                let d = spec.values[idx(f, k)] - mean;
                var += d * d;
            }
        }
        let std = math::sqrt(var / count);
        let scale = if std > 1e-12 { 1.0 / std } else { 0.0 };
        for f in 0..frames {
            for k in 0..bins {
                let v = &mut spec.values[idx(f, k)];
                *v = (*v - mean) * scale;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(samples: Vec<f64>, leads: usize) -> EcgRecord {
        EcgRecord::new("r", samples, leads, 100.0, vec![1], 0).unwrap()
    }

    #[test]
    fn zero_record_normalizes_to_zero() {
        let rec = record(vec![0.0; 1000 * 12], 12);
        let cfg = StftConfig::default();
        let mags = magnitude_spectrogram(&rec, &cfg).unwrap();
        assert!(mags.values().iter().all(|&v| v == 0.0));
        let spec = stft_spectrogram(&rec, &cfg).unwrap();
        assert_eq!(spec.frames(), 59);
        assert_eq!(spec.bins(), 190);
        assert!(spec.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frame_count_examples() {
        let cfg = StftConfig::default();
        assert_eq!(cfg.frame_count(1000), 59);
        assert_eq!(cfg.frame_count(64), 1);
        assert_eq!(cfg.frame_count(63), 0);
    }

    #[test]
    fn short_record_is_rejected() {
        let rec = record(vec![0.0; 50], 1);
        assert!(stft_spectrogram(&rec, &StftConfig::default()).is_err());
    }

    #[test]
    fn band_bin_counts() {
        let cfg = StftConfig::default();
        let freqs = cfg.bin_freqs(100.0);
        assert_eq!(freqs.len(), 241);
        assert_eq!(cfg.retained_bins(100.0), 190);
        let kept: Vec<usize> = (0..241).filter(|&k| freqs[k] >= 0.5 && freqs[k] <= 40.0).collect();
        assert_eq!((kept[0], *kept.last().unwrap()), (3, 192));

        let rec = record((0..200).map(|i| (i as f64).sin()).collect(), 1);
        let spec = magnitude_spectrogram(&rec, &cfg).unwrap();
        let full = band_filter(&spec, 0.0, 50.0).unwrap();
        assert_eq!(full.bins(), 241);
        assert_eq!(full.values(), spec.values());
        assert!(band_filter(&spec, 40.0, 0.5).is_err());
        assert!(band_filter(&spec, 40.01, 40.1).is_err());
    }

    #[test]
    fn invalid_configs() {
        let cfg = StftConfig { hop: 128, ..StftConfig::default() };
        assert!(cfg.validate(100.0).is_err());
        let cfg = StftConfig { band_high_hz: 60.0, ..StftConfig::default() };
        assert!(cfg.validate(100.0).is_err());
    }
}
