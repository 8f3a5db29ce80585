//! RIFF WAV in and out. Output is always 32-bit float.

use std::io::Cursor;
use std::path::Path;

use hound::{SampleFormat, WavSpec};

use crate::error::{Error, Result};

fn float_spec(fs: f64, channels: usize) -> Result<WavSpec> {
    if channels == 0 || channels > u16::MAX as usize {
        return Err(Error::Invalid(format!("cannot write {channels} channels")));
    }
    if fs.fract() != 0.0 || !(1.0..=u32::MAX as f64).contains(&fs) {
        return Err(Error::Invalid(format!("WAV needs an integer sample rate, got {fs}")));
    }
    Ok(WavSpec {
        channels: channels as u16,
        sample_rate: fs as u32,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    })
}

fn write_frames<W: std::io::Write + std::io::Seek>(w: W, fs: f64, channels: &[Vec<f64>]) -> Result<()> {
    let spec = float_spec(fs, channels.len())?;
    let len = channels.iter().map(Vec::len).max().unwrap_or(0);
    let to_invalid = |e: hound::Error| Error::Invalid(format!("WAV encoding failed: {e}"));
    let mut wr = hound::WavWriter::new(w, spec).map_err(to_invalid)?;
    for i in 0..len {
        for c in channels {
            wr.write_sample(c.get(i).copied().unwrap_or(0.0) as f32).map_err(to_invalid)?;
        }
    }
    wr.finalize().map_err(to_invalid)
}

/// Interleaved 32-bit float WAV bytes; shorter channels are zero-padded.
pub fn wav_bytes(fs: f64, channels: &[Vec<f64>]) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    write_frames(&mut buf, fs, channels)?;
    Ok(buf.into_inner())
}

pub fn write_wav(path: &Path, fs: f64, channels: &[Vec<f64>]) -> Result<()> {
    let bytes = wav_bytes(fs, channels)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Read any PCM or float WAV into per-channel samples in [-1, 1].
pub fn read_wav(path: &Path) -> Result<(f64, Vec<Vec<f64>>)> {
    let rd = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::parse(path, other),
    })?;
    let spec = rd.spec();
    let n_ch = spec.channels as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => rd
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>(),
        SampleFormat::Int => {
            let scale = 2f64.powi(spec.bits_per_sample as i32 - 1);
            rd.into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
        }
    }
    .map_err(|e| Error::parse(path, e))?;
    let mut channels = vec![Vec::with_capacity(interleaved.len() / n_ch.max(1)); n_ch];
    for frame in interleaved.chunks(n_ch) {
        for (c, v) in channels.iter_mut().zip(frame) {
            c.push(*v);
        }
    }
    Ok((spec.sample_rate as f64, channels))
}
