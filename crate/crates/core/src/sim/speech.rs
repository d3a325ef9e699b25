//! Seeded speech-like test signal: drifting voiced partials under a syllabic
//! envelope, with short noise bursts standing in for fricatives.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::watermark::{VoiceWindow, FRAME_SAMPLES, WINDOW_FRAMES, WINDOW_SAMPLES};

const RATE: f64 = 8000.0;

#[derive(Debug, Clone)]
struct Partial {
    centre: f64,
    drift: f64,
    drift_rate: f64,
    phase: f64,
    gain: f64,
}

/// Deterministic generator; any window can be produced independently.
#[derive(Debug, Clone)]
pub struct SyntheticSpeech {
    seed: u64,
    partials: Vec<Partial>,
    syllable_rate: f64,
    syllable_phase: f64,
    peak: f64,
}

impl SyntheticSpeech {
    pub fn new(seed: u64) -> SyntheticSpeech {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f0 = rng.random_range(100.0..180.0);
        let partials = [1.0, 2.0, 3.0, 5.0, 8.0, 13.0]
            .iter()
            .map(|&h| Partial {
                centre: f0 * h * rng.random_range(0.97..1.03),
                drift: f0 * h * rng.random_range(0.05..0.15),
                drift_rate: rng.random_range(0.1..0.6),
                phase: rng.random_range(0.0..TAU),
                gain: 1.0 / h.sqrt(),
            })
            .collect();
        SyntheticSpeech {
            seed,
            partials,
            syllable_rate: rng.random_range(3.0..5.0),
            syllable_phase: rng.random_range(0.0..TAU),
            peak: 22_000.0,
        }
    }

    fn envelope(&self, t: f64) -> f64 {
        let syllable = (TAU * self.syllable_rate * t + self.syllable_phase).sin().max(0.0).powf(0.6);
        // 2.4 s phrases separated by 0.6 s of near silence.
        let phrase = if (t % 3.0) < 2.4 { 1.0 } else { 0.02 };
        syllable * phrase
    }

    fn voiced(&self, t: f64) -> f64 {
        let norm: f64 = self.partials.iter().map(|p| p.gain).sum();
        self.partials
            .iter()
            .map(|p| {
                // Phase of a sinusoid whose frequency swings sinusoidally.
                let phase = TAU * p.centre * t - p.drift / p.drift_rate * (TAU * p.drift_rate * t).cos() + p.phase;
                p.gain * phase.sin()
            })
            .sum::<f64>()
            / norm
    }

    pub fn window(&self, index: u32) -> VoiceWindow {
        let mut samples = Vec::with_capacity(WINDOW_SAMPLES);
        for frame in 0..WINDOW_FRAMES {
            let global_frame = index as u64 * WINDOW_FRAMES as u64 + frame as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ global_frame.wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let burst = rng.random_bool(0.15);
            for n in 0..FRAME_SAMPLES {
                let t = (global_frame as f64 * FRAME_SAMPLES as f64 + n as f64) / RATE;
                let env = self.envelope(t);
                let mut v = 0.8 * self.voiced(t) * env;
                let noise: f64 = rng.random_range(-1.0..1.0);
                v += if burst { 0.35 * noise * env.max(0.2) } else { 0.01 * noise };
                samples.push((v * self.peak).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16);
            }
        }
        VoiceWindow::new(index, samples).unwrap()
    }

    /// Windows `first..first + count`.
    pub fn windows(&self, first: u32, count: u32) -> Vec<VoiceWindow> {
        (first..first + count).map(|i| self.window(i)).collect()
    }
}
