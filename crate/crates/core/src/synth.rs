//! Seeded multi-sine corpus for training and tests without recorded audio.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::signal::AudioBuffer;

pub const SINES_PER_CLIP: usize = 3;
pub const MIN_FREQ_HZ: f64 = 100.0;
pub const MAX_FREQ_HZ: f64 = 4000.0;
/// Upper bound (exclusive) on the summed amplitudes, so clips never clip.
pub const MAX_TOTAL_AMPLITUDE: f64 = 0.9;

/// One clip: three sinusoids with frequencies uniform in [100, 4000) Hz,
/// random phases, and amplitudes whose sum is uniform in [0.5, 0.9).
pub fn multi_sine_clip(len: usize, sample_rate: u32, seed: u64) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = rng.gen_range(0.5..MAX_TOTAL_AMPLITUDE);
    let shares: Vec<f64> = (0..SINES_PER_CLIP).map(|_| rng.gen_range(0.1..1.0)).collect();
    let norm: f64 = shares.iter().sum();
    let sines: Vec<(f64, f64, f64)> = shares
        .iter()
        .map(|s| {
            let f = rng.gen_range(MIN_FREQ_HZ..MAX_FREQ_HZ);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            (total * s / norm, f, phase)
        })
        .collect();
    let sr = f64::from(sample_rate);
    let samples = (0..len)
        .map(|n| {
            let t = n as f64 / sr;
            sines.iter().map(|(a, f, p)| a * (std::f64::consts::TAU * f * t + p).sin()).sum()
        })
        .collect();
    AudioBuffer::new(samples, sample_rate).expect("finite samples")
}

/// `count` clips of `len` samples; clip `i` uses a seed derived from `seed` and `i`.
pub fn synthetic_corpus(count: usize, len: usize, sample_rate: u32, seed: u64) -> Vec<AudioBuffer> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| multi_sine_clip(len, sample_rate, rng.gen())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clips_are_bounded_and_seeded() {
        let a = synthetic_corpus(8, 4000, 16000, 9);
        assert_eq!(a, synthetic_corpus(8, 4000, 16000, 9));
        assert_ne!(a, synthetic_corpus(8, 4000, 16000, 10));
        for clip in &a {
            assert_eq!(clip.len(), 4000);
            assert!(clip.samples().iter().all(|v| v.abs() < MAX_TOTAL_AMPLITUDE));
            assert!(clip.samples().iter().any(|v| v.abs() > 0.05));
        }
    }
}
