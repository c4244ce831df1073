//! Seeded synthetic 12-lead recordings whose classes differ in spectral
//! content, for desk-scale training and tests.
//!
//! Class `k` of `C` owns the frequency `f_k = 4 + (k + ½)·32/C` Hz. A record
//! carrying class `k` contains sinusoid bursts at `f_k`; every record also
//! has baseline wander near 1.2 and 2.4 Hz and Gaussian noise. Each lead
//! sees the same sources through its own random gain.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{DatasetSplit, EcgRecord};
use crate::error::{Error, Result};
use crate::math;

pub const SAMPLE_RATE: f64 = 100.0;
pub const N_LEADS: usize = 12;
pub const NOISE_STD: f64 = 0.1;
/// Probability that a record also carries the class after its primary one.
pub const CO_OCCURRENCE_PROB: f64 = 0.3;
const BURSTS: usize = 3;
/// Fraction of the record covered by each burst.
const BURST_FRACTION: f64 = 0.3;

/// Centre frequency in Hz of class `k` out of `n_classes`.
pub fn class_frequency(k: usize, n_classes: usize) -> f64 {
    4.0 + (k as f64 + 0.5) * 32.0 / n_classes as f64
}

/// Generates one record with the given label vector from `rng`.
pub fn synth_record<R: Rng + ?Sized>(
    record_id: &str,
    labels: Vec<u8>,
    n_samples: usize,
    fold: u32,
    rng: &mut R,
) -> Result<EcgRecord> {
    let n_classes = labels.len();
    let noise = Normal::new(0.0, NOISE_STD).expect("valid noise deviation");
    let fs = SAMPLE_RATE;

    // Sources shared by all leads.
    let mut source = vec![0.0; n_samples];
    let phase1 = rng.random_range(0.0..2.0 * PI);
    let phase2 = rng.random_range(0.0..2.0 * PI);
    for (t, s) in source.iter_mut().enumerate() {
        let time = t as f64 / fs;
        *s = 0.3 * math::sin(2.0 * PI * 1.2 * time + phase1) + 0.15 * math::sin(2.0 * PI * 2.4 * time + phase2);
    }
    let burst_len = ((n_samples as f64 * BURST_FRACTION) as usize).max(1);
    for k in (0..n_classes).filter(|&k| labels[k] == 1) {
        let f = class_frequency(k, n_classes);
        let amplitude = rng.random_range(0.8..1.2);
        let phase = rng.random_range(0.0..2.0 * PI);
        let mut envelope = vec![0.0f64; n_samples];
        for _ in 0..BURSTS {
            let start = rng.random_range(0..=n_samples - burst_len);
            for e in &mut envelope[start..start + burst_len] {
                *e = 1.0;
            }
        }
        for (t, (s, e)) in source.iter_mut().zip(&envelope).enumerate() {
            *s += amplitude * e * math::sin(2.0 * PI * f * t as f64 / fs + phase);
        }
    }

    let gains: Vec<f64> = (0..N_LEADS).map(|_| rng.random_range(0.5..1.5)).collect();
    let mut samples = Vec::with_capacity(n_samples * N_LEADS);
    for &s in &source {
        for &gain in &gains {
            samples.push(gain * s + noise.sample(rng));
        }
    }
    EcgRecord::new(record_id, samples, N_LEADS, fs, labels, fold)
}

/// `n_records` seeded records split 80/10/10: the first `n − 2⌊n/10⌋` go
/// to training folds 1–8, then `⌊n/10⌋` to fold 9 and `⌊n/10⌋` to fold 10.
pub fn generate_synthetic(n_records: usize, n_samples: usize, n_classes: usize, seed: u64) -> Result<DatasetSplit> {
    if n_records < 10 {
        return Err(Error::config(format!("synthetic set needs at least 10 records, got {n_records}")));
    }
    if n_samples < 128 {
        return Err(Error::config(format!("synthetic records need at least 128 samples, got {n_samples}")));
    }
    if n_classes == 0 {
        return Err(Error::config("synthetic set needs at least one class"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let held_out = n_records / 10;
    let n_train = n_records - 2 * held_out;
    let mut records = Vec::with_capacity(n_records);
    for i in 0..n_records {
        let fold = if i < n_train {
            (i % 8) as u32 + 1
        } else if i < n_train + held_out {
            9
        } else {
            10
        };
        let mut labels = vec![0u8; n_classes];
        let primary = rng.random_range(0..n_classes);
        labels[primary] = 1;
        if n_classes > 1 && rng.random_bool(CO_OCCURRENCE_PROB) {
            labels[(primary + 1) % n_classes] = 1;
        }
        records.push(synth_record(&format!("synth_{i:05}"), labels, n_samples, fold, &mut rng)?);
    }
    DatasetSplit::from_folds(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::fft::dft_naive;
    use num_complex::Complex64;

    #[test]
    fn split_sizes_and_determinism() {
        let a = generate_synthetic(100, 200, 5, 7).unwrap();
        assert_eq!((a.train.len(), a.validation.len(), a.test.len()), (80, 10, 10));
        let b = generate_synthetic(100, 200, 5, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(100, 200, 5, 8).unwrap();
        assert_ne!(a.train[0].samples(), c.train[0].samples());
        for r in a.all() {
            assert!(r.positive_count() >= 1);
            assert_eq!(r.n_leads(), 12);
        }
    }

    #[test]
    fn preconditions() {
        assert!(generate_synthetic(9, 200, 3, 0).is_err());
        assert!(generate_synthetic(10, 127, 3, 0).is_err());
        assert!(generate_synthetic(10, 128, 0, 0).is_err());
    }

    #[test]
    fn class_energy_concentrates_at_class_frequency() {
        let n = 1000;
        let c = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in 0..c {
            let mut labels = vec![0u8; c];
            labels[k] = 1;
            let r = synth_record("x", labels, n, 1, &mut rng).unwrap();
            let lead: Vec<Complex64> = r.lead(0).map(|v| Complex64::new(v, 0.0)).collect();
            let spec = dft_naive(&lead);
            let band_energy = |f: f64| -> f64 {
                let centre = (f * n as f64 / SAMPLE_RATE).round() as usize;
                (centre - 5..=centre + 5).map(|b| spec[b].norm_sqr()).sum()
            };
            let own = band_energy(class_frequency(k, c));
            for j in (0..c).filter(|&j| j != k) {
                let other = band_energy(class_frequency(j, c));
                assert!(own > 5.0 * other, "class {k} vs {j}: {own} vs {other}");
            }
        }
    }
}
