//! Dual-layer QIM watermarking of 8 kHz PCM voice.
//!
//! A [`VoiceWindow`] is one second of audio: 50 frames of 160 samples. Sample
//! indices within a window are split by residue:
//!
//! | index mod 4 | role                                   |
//! |-------------|----------------------------------------|
//! | 1, 3        | voice-feature region, never modified   |
//! | 0           | layer 1 carrier (PSTN endpoint mark)   |
//! | 2           | layer 2 carrier (media gateway mark)   |
//!
//! Because the three sets are disjoint, marking one layer can neither damage
//! the other layer nor change the voice features the token is bound to.
//!
//! Each carrier sample holds one bit by quantization index modulation: bit
//! `b` moves the sample to the nearest point of the lattice
//! `{(2k + b)·Δ}`, and the decoder picks whichever lattice is nearer.

pub mod g711;
pub mod io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::token::{hash, Digest};

pub const FRAME_SAMPLES: usize = 160;
pub const WINDOW_FRAMES: usize = 50;
pub const WINDOW_SAMPLES: usize = FRAME_SAMPLES * WINDOW_FRAMES;
/// Carrier positions per layer per window.
pub const LAYER_CAPACITY: usize = WINDOW_SAMPLES / 4;

/// QIM step chosen by [`calibrate_delta`] on the built-in synthetic speech:
/// the smallest power of two with zero bit errors through μ-law companding.
pub const DEFAULT_DELTA: u16 = 1024;

/// Steps accepted by scenario configuration. 1024 is error-free for signals
/// that stay out of the top μ-law segment; 2048 is error-free over the whole
/// 16-bit range.
pub const CALIBRATED_DELTAS: &[u16] = &[1024, 2048];

const MAX_DELTA: u16 = 16384;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WatermarkError {
    #[error("frame must hold {FRAME_SAMPLES} samples, got {0}")]
    FrameLength(usize),
    #[error("window must hold {WINDOW_SAMPLES} samples, got {0}")]
    WindowLength(usize),
    #[error("{requested} bits exceed layer capacity of {capacity}")]
    Capacity { requested: usize, capacity: usize },
    #[error("QIM step must be in 1..={MAX_DELTA}, got {0}")]
    BadDelta(u16),
}

/// 20 ms of 8 kHz audio.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PcmFrame([i16; FRAME_SAMPLES]);

impl PcmFrame {
    pub fn new(samples: &[i16]) -> Result<PcmFrame, WatermarkError> {
        let arr: [i16; FRAME_SAMPLES] =
            samples.try_into().map_err(|_| WatermarkError::FrameLength(samples.len()))?;
        Ok(PcmFrame(arr))
    }

    pub fn samples(&self) -> &[i16] {
        &self.0
    }
}

/// One second of audio, the unit that carries one token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoiceWindow {
    pub index: u32,
    samples: Vec<i16>,
}

impl VoiceWindow {
    pub fn new(index: u32, samples: Vec<i16>) -> Result<VoiceWindow, WatermarkError> {
        if samples.len() != WINDOW_SAMPLES {
            return Err(WatermarkError::WindowLength(samples.len()));
        }
        Ok(VoiceWindow { index, samples })
    }

    pub fn silent(index: u32) -> VoiceWindow {
        VoiceWindow { index, samples: vec![0; WINDOW_SAMPLES] }
    }

    pub fn from_frames(index: u32, frames: &[PcmFrame]) -> Result<VoiceWindow, WatermarkError> {
        let samples: Vec<i16> = frames.iter().flat_map(|f| f.0.iter().copied()).collect();
        VoiceWindow::new(index, samples)
    }

    pub fn samples(&self) -> &[i16] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [i16] {
        &mut self.samples
    }

    pub fn frames(&self) -> impl Iterator<Item = &[i16]> + '_ {
        self.samples.chunks_exact(FRAME_SAMPLES)
    }

    pub fn frame(&self, i: usize) -> PcmFrame {
        PcmFrame::new(&self.samples[i * FRAME_SAMPLES..(i + 1) * FRAME_SAMPLES]).unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layer {
    /// Layer 1, embedded by the PSTN endpoint.
    Endpoint,
    /// Layer 2, embedded by the media gateway on the IP leg.
    Gateway,
}

impl Layer {
    fn residue(self) -> usize {
        match self {
            Layer::Endpoint => 0,
            Layer::Gateway => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WatermarkLayer {
    pub layer: Layer,
    delta: u16,
}

impl WatermarkLayer {
    pub fn new(layer: Layer, delta: u16) -> Result<WatermarkLayer, WatermarkError> {
        if delta == 0 || delta > MAX_DELTA {
            return Err(WatermarkError::BadDelta(delta));
        }
        Ok(WatermarkLayer { layer, delta })
    }

    pub fn delta(&self) -> u16 {
        self.delta
    }

    /// Carrier sample indices in ascending order.
    pub fn positions(&self) -> impl Iterator<Item = usize> + Clone {
        (self.layer.residue()..WINDOW_SAMPLES).step_by(4)
    }
}

pub fn layer_positions(layer: &WatermarkLayer, _window: &VoiceWindow) -> Vec<usize> {
    layer.positions().collect()
}

/// True for samples that belong to the voice-feature region.
pub fn is_feature_index(i: usize) -> bool {
    i % 2 == 1
}

/// Index of the nearest multiple of `delta` (ties round up).
fn nearest_cell(sample: i32, delta: i32) -> i32 {
    (sample + delta / 2).div_euclid(delta)
}

/// Decodes one carrier sample: the parity of its nearest lattice cell.
pub fn qim_decode(sample: i16, delta: u16) -> bool {
    nearest_cell(sample as i32, delta as i32).rem_euclid(2) == 1
}

/// Moves `sample` to the nearest representable point of the lattice for
/// `bit`. A target just above `i16::MAX` is clamped, which still decodes to
/// the same bit; a target below `i16::MIN` is replaced by the next point
/// inward.
pub fn qim_embed(sample: i16, bit: bool, delta: u16) -> i16 {
    let s = sample as i32;
    let d = delta as i32;
    let b = bit as i32;
    let k = (s - b * d + d).div_euclid(2 * d);
    let mut best: Option<(i32, i16)> = None;
    for kk in [k - 1, k, k + 1] {
        let t = (2 * kk + b) * d;
        let clamped = t.clamp(i16::MIN as i32, i16::MAX as i32) as i16;
        if qim_decode(clamped, delta) != bit {
            continue;
        }
        let dist = (clamped as i32 - s).abs();
        if best.is_none_or(|(bd, _)| dist < bd) {
            best = Some((dist, clamped));
        }
    }
    best.map(|(_, v)| v).unwrap_or(sample)
}

fn pad_bit(list_index: usize) -> bool {
    list_index % 2 == 1
}

/// Embeds `bits` at the first carrier positions of `layer` and fills the
/// rest of the layer with the alternating pad pattern.
pub fn embed_bits(window: &VoiceWindow, layer: &WatermarkLayer, bits: &[bool]) -> Result<VoiceWindow, WatermarkError> {
    if bits.len() > LAYER_CAPACITY {
        return Err(WatermarkError::Capacity { requested: bits.len(), capacity: LAYER_CAPACITY });
    }
    let mut out = window.clone();
    for (j, pos) in layer.positions().enumerate() {
        let bit = bits.get(j).copied().unwrap_or_else(|| pad_bit(j));
        out.samples[pos] = qim_embed(out.samples[pos], bit, layer.delta);
    }
    Ok(out)
}

pub fn extract_bits(window: &VoiceWindow, layer: &WatermarkLayer, nbits: usize) -> Result<Vec<bool>, WatermarkError> {
    if nbits > LAYER_CAPACITY {
        return Err(WatermarkError::Capacity { requested: nbits, capacity: LAYER_CAPACITY });
    }
    Ok(layer
        .positions()
        .take(nbits)
        .map(|pos| qim_decode(window.samples[pos], layer.delta))
        .collect())
}

/// Digest over per-frame energy and zero-crossing statistics of the feature
/// region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoiceFeature {
    pub digest: Digest,
}

/// `8·log2(x)` with three fractional bits, integer-only so every platform
/// agrees on bucket boundaries.
fn log2_bucket(x: u64) -> u8 {
    debug_assert!(x > 0);
    let e = 63 - x.leading_zeros() as u64;
    let frac = ((x << (63 - e)) >> 60) & 0x7;
    (e * 8 + frac).min(255) as u8
}

/// The two feature bytes of one frame: log-energy bucket and zero-crossing
/// count over its odd-indexed samples.
pub fn frame_features(frame: &[i16]) -> [u8; 2] {
    let odd: Vec<i32> = frame.iter().skip(1).step_by(2).map(|&s| s as i32).collect();
    let energy: u64 = odd.iter().map(|&s| (s * s) as u64).sum::<u64>() / odd.len() as u64;
    let crossings = odd.windows(2).filter(|w| (w[0] >= 0) != (w[1] >= 0)).count();
    [log2_bucket(1 + energy), crossings as u8]
}

pub fn voice_feature(window: &VoiceWindow) -> VoiceFeature {
    let bytes: Vec<u8> = window.frames().flat_map(frame_features).collect();
    VoiceFeature { digest: hash(&bytes) }
}

/// One μ-law encode/decode pass over every sample.
pub fn adda_roundtrip(window: &VoiceWindow) -> VoiceWindow {
    VoiceWindow {
        index: window.index,
        samples: window.samples.iter().map(|&s| g711::requantize(s)).collect(),
    }
}

/// Bit errors observed for one candidate step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeltaTrial {
    pub delta: u16,
    pub bit_errors: usize,
    pub bits: usize,
}

/// Sweeps Δ over powers of two, smallest first, through the full mark path:
/// digitize, endpoint mark, companding, gateway mark, companding. Returns
/// every trial up to and including the first error-free one.
pub fn calibrate_delta(windows: &[VoiceWindow], seed: u64) -> Vec<DeltaTrial> {
    let mut trials = Vec::new();
    for exp in 4..=14u32 {
        let delta = 1u16 << exp;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l1 = WatermarkLayer::new(Layer::Endpoint, delta).unwrap();
        let l2 = WatermarkLayer::new(Layer::Gateway, delta).unwrap();
        let mut errors = 0;
        let mut total = 0;
        for w in windows {
            let p1: Vec<bool> = (0..LAYER_CAPACITY).map(|_| rng.random()).collect();
            let p2: Vec<bool> = (0..LAYER_CAPACITY).map(|_| rng.random()).collect();
            let marked = adda_roundtrip(&embed_bits(&adda_roundtrip(w), &l1, &p1).unwrap());
            let marked = adda_roundtrip(&embed_bits(&marked, &l2, &p2).unwrap());
            for (layer, payload) in [(&l1, &p1), (&l2, &p2)] {
                let got = extract_bits(&marked, layer, LAYER_CAPACITY).unwrap();
                errors += got.iter().zip(payload).filter(|(a, b)| a != b).count();
                total += LAYER_CAPACITY;
            }
        }
        trials.push(DeltaTrial { delta, bit_errors: errors, bits: total });
        if errors == 0 {
            break;
        }
    }
    trials
}
