//! WAV input.

use std::path::Path;

use speechsplit_core::featureio::Waveform;

use crate::error::{AppError, AppResult};

/// Read a PCM or float WAV file, mix it down to mono and resample to 16 kHz.
pub fn read_wav(path: &Path) -> AppResult<Waveform> {
    let bad = |e: hound::Error| AppError::data(format!("{}: {e}", path.display()));
    let mut reader = hound::WavReader::open(path).map_err(bad)?;
    let spec = reader.spec();
    let channels = usize::from(spec.channels.max(1));
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader.samples::<f32>().collect::<Result<_, _>>().map_err(bad)?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader.samples::<i32>().map(|s| s.map(|v| v as f32 * scale)).collect::<Result<_, _>>().map_err(bad)?
        }
    };
    let mono: Vec<f32> = interleaved.chunks(channels).map(|c| c.iter().sum::<f32>() / c.len() as f32).collect();
    Ok(Waveform::from_pcm(mono, spec.sample_rate)?)
}

/// Write mono float samples as a 32-bit float WAV (used by tests and fixtures).
pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32) -> AppResult<()> {
    let spec = hound::WavSpec { channels: 1, sample_rate, bits_per_sample: 32, sample_format: hound::SampleFormat::Float };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| AppError::data(format!("{}: {e}", path.display())))?;
    for &s in samples {
        w.write_sample(s).map_err(|e| AppError::data(format!("{}: {e}", path.display())))?;
    }
    w.finalize().map_err(|e| AppError::data(format!("{}: {e}", path.display())))
}
