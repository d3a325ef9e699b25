//! Mono 16-bit 8 kHz PCM files: WAV, or headerless little-endian dumps.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use super::{VoiceWindow, WINDOW_SAMPLES};

pub const SAMPLE_RATE: u32 = 8000;

#[derive(Debug, Error)]
pub enum AudioIoError {
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("expected mono 16-bit {SAMPLE_RATE} Hz PCM, got {channels} ch / {bits} bit / {rate} Hz")]
    Format { channels: u16, bits: u16, rate: u32 },
    #[error("raw sample dump has odd length {0}")]
    OddLength(usize),
}

pub fn read_wav(path: &Path) -> Result<Vec<i16>, AudioIoError> {
    let reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1
        || spec.bits_per_sample != 16
        || spec.sample_rate != SAMPLE_RATE
        || spec.sample_format != hound::SampleFormat::Int
    {
        return Err(AudioIoError::Format {
            channels: spec.channels,
            bits: spec.bits_per_sample,
            rate: spec.sample_rate,
        });
    }
    Ok(reader.into_samples::<i16>().collect::<Result<_, _>>()?)
}

pub fn write_wav(path: &Path, samples: &[i16]) -> Result<(), AudioIoError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        writer.write_sample(s)?;
    }
    writer.finalize()?;
    Ok(())
}

pub fn read_raw(path: &Path) -> Result<Vec<i16>, AudioIoError> {
    let bytes = fs::read(path)?;
    if bytes.len() % 2 != 0 {
        return Err(AudioIoError::OddLength(bytes.len()));
    }
    Ok(bytes.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect())
}

pub fn write_raw(path: &Path, samples: &[i16]) -> Result<(), AudioIoError> {
    let bytes: Vec<u8> = samples.iter().flat_map(|s| s.to_le_bytes()).collect();
    Ok(fs::write(path, bytes)?)
}

pub fn read_pcm(path: &Path, raw: bool) -> Result<Vec<i16>, AudioIoError> {
    if raw {
        read_raw(path)
    } else {
        read_wav(path)
    }
}

pub fn write_pcm(path: &Path, samples: &[i16], raw: bool) -> Result<(), AudioIoError> {
    if raw {
        write_raw(path, samples)
    } else {
        write_wav(path, samples)
    }
}

/// Splits samples into windows numbered from `first_index`; a trailing
/// partial window is zero-padded.
pub fn split_windows(samples: &[i16], first_index: u32) -> Vec<VoiceWindow> {
    samples
        .chunks(WINDOW_SAMPLES)
        .enumerate()
        .map(|(i, chunk)| {
            let mut s = chunk.to_vec();
            s.resize(WINDOW_SAMPLES, 0);
            VoiceWindow::new(first_index + i as u32, s).unwrap()
        })
        .collect()
}

pub fn join_windows(windows: &[VoiceWindow]) -> Vec<i16> {
    windows.iter().flat_map(|w| w.samples().iter().copied()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_window_is_padded() {
        let w = split_windows(&vec![5; WINDOW_SAMPLES + 10], 1);
        assert_eq!(w.len(), 2);
        assert_eq!(w[1].index, 2);
        assert_eq!(&w[1].samples()[..10], &[5; 10]);
        assert!(w[1].samples()[10..].iter().all(|&s| s == 0));
    }
}
