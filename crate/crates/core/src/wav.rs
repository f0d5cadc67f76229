//! Minimal WAV I/O for the one format the toolkit speaks: PCM 16-bit signed
//! little-endian, mono, 16 kHz. Anything else is rejected outright — no
//! silent resampling or channel mixing.

use crate::dsp::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use std::fs;
use std::io::Write;
use std::path::Path;

const I16_SCALE: f64 = 32768.0;

fn rd_u32(b: &[u8], off: usize) -> Result<u32> {
    b.get(off..off + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| Error::Wav("truncated file".into()))
}

fn rd_u16(b: &[u8], off: usize) -> Result<u16> {
    b.get(off..off + 2)
        .map(|s| u16::from_le_bytes([s[0], s[1]]))
        .ok_or_else(|| Error::Wav("truncated file".into()))
}

/// Reads a mono 16-bit 16 kHz PCM WAV file.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Wav(format!("{}: not a RIFF/WAVE file", path.display())));
    }
    let mut off = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (format, channels, rate, bits)
    let mut data: Option<&[u8]> = None;
    while off + 8 <= bytes.len() {
        let id = &bytes[off..off + 4];
        let size = rd_u32(&bytes, off + 4)? as usize;
        let body = off + 8;
        if body + size > bytes.len() {
            return Err(Error::Wav(format!("{}: chunk overruns file", path.display())));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::Wav("fmt chunk too small".into()));
                }
                fmt = Some((
                    rd_u16(&bytes, body)?,
                    rd_u16(&bytes, body + 2)?,
                    rd_u32(&bytes, body + 4)?,
                    rd_u16(&bytes, body + 14)?,
                ));
            }
            b"data" => data = Some(&bytes[body..body + size]),
            _ => {}
        }
        // Chunks are word-aligned.
        off = body + size + (size & 1);
    }
    let (format, channels, rate, bits) =
        fmt.ok_or_else(|| Error::Wav("missing fmt chunk".into()))?;
    if format != 1 {
        return Err(Error::Wav(format!("unsupported WAV format tag {format}, need PCM (1)")));
    }
    if channels != 1 {
        return Err(Error::Wav(format!("{channels} channels, need mono")));
    }
    if bits != 16 {
        return Err(Error::Wav(format!("{bits}-bit samples, need 16-bit")));
    }
    if rate != SAMPLE_RATE {
        return Err(Error::SampleRate { expected: SAMPLE_RATE, got: rate });
    }
    let data = data.ok_or_else(|| Error::Wav("missing data chunk".into()))?;
    let samples = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / I16_SCALE)
        .collect();
    Ok(Waveform::new(samples, SAMPLE_RATE))
}

/// Writes a mono 16-bit 16 kHz PCM WAV file atomically (temp file + rename).
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    if wave.sample_rate != SAMPLE_RATE {
        return Err(Error::SampleRate { expected: SAMPLE_RATE, got: wave.sample_rate });
    }
    let n = wave.samples.len();
    let data_len = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&SAMPLE_RATE.to_le_bytes());
    out.extend_from_slice(&(SAMPLE_RATE * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &wave.samples {
        let v = (s * I16_SCALE).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &out)
}

/// Writes `bytes` to `path` via a sibling temp file and rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = match dir {
        Some(d) => d.join(format!(
            ".{}.tmp",
            path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default()
        )),
        None => Path::new(&format!(
            ".{}.tmp",
            path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default()
        ))
        .to_path_buf(),
    };
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
