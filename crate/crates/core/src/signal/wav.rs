use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{AudioBuffer, Result, SignalError};

const PCM_SCALE: f64 = 32768.0;

/// Reads a 16-bit PCM mono RIFF/WAVE file, scaling samples by 1/32768.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(SignalError::NotFound(path.to_path_buf()));
    }
    let reader = WavReader::open(path).map_err(|e| map_read_error(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(SignalError::UnsupportedFormat(format!("{} channels, expected mono", spec.channels)));
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(SignalError::UnsupportedFormat(format!(
            "{:?} {}-bit samples, expected 16-bit PCM",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / PCM_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| map_read_error(path, e))?;
    AudioBuffer::new(samples, spec.sample_rate)
}

/// Writes 16-bit PCM mono. Values are clamped to [-1, 1]; +1.0 saturates to 32767.
pub fn save_wav(audio: &AudioBuffer, path: impl AsRef<Path>) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path.as_ref(), spec).map_err(map_write_error)?;
    for &s in audio.samples() {
        writer.write_sample(quantize_sample(s)).map_err(map_write_error)?;
    }
    writer.finalize().map_err(map_write_error)
}

fn quantize_sample(s: f64) -> i16 {
    (s.clamp(-1.0, 1.0) * PCM_SCALE).round().clamp(-32768.0, 32767.0) as i16
}

fn map_read_error(path: &Path, e: hound::Error) -> SignalError {
    match e {
        hound::Error::IoError(io) if io.kind() == std::io::ErrorKind::NotFound => {
            SignalError::NotFound(path.to_path_buf())
        }
        hound::Error::IoError(io)
            if matches!(io.kind(), std::io::ErrorKind::UnexpectedEof | std::io::ErrorKind::Other) =>
        {
            SignalError::CorruptHeader(format!("truncated file: {io}"))
        }
        hound::Error::IoError(io) => SignalError::Io(io),
        hound::Error::Unsupported => SignalError::UnsupportedFormat("compressed or extensible format".into()),
        hound::Error::TooWide | hound::Error::InvalidSampleFormat => {
            SignalError::UnsupportedFormat("sample format".into())
        }
        other => SignalError::CorruptHeader(other.to_string()),
    }
}

fn map_write_error(e: hound::Error) -> SignalError {
    match e {
        hound::Error::IoError(io) => SignalError::Io(io),
        other => SignalError::Io(std::io::Error::other(other.to_string())),
    }
}
