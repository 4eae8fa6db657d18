//! RIFF/WAVE and headerless PCM output, mono 16-bit little-endian.

use std::fs::File;
use std::io::{self, BufWriter, Seek, SeekFrom, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use crate::synth::AudioBuffer;

const HEADER_LEN: u32 = 44;

/// Clips to [-1, 1] and scales to a signed 16-bit sample.
#[inline]
pub fn encode_sample(x: f64) -> i16 {
    let x = if x.is_nan() { 0.0 } else { x.clamp(-1.0, 1.0) };
    (x * f64::from(i16::MAX)).round() as i16
}

#[inline]
pub fn decode_sample(s: i16) -> f64 {
    f64::from(s) / f64::from(i16::MAX)
}

/// Something that accepts rendered audio as it is produced.
pub trait PcmSink: Send {
    fn write_samples(&mut self, samples: &[f64]) -> io::Result<()>;

    /// Flushes and, for formats with a header, fixes up lengths.
    fn finish(&mut self) -> io::Result<()>;
}

fn header(sample_rate: u32, data_len: u32) -> [u8; HEADER_LEN as usize] {
    let mut h = [0u8; HEADER_LEN as usize];
    h[0..4].copy_from_slice(b"RIFF");
    h[4..8].copy_from_slice(&(36 + data_len).to_le_bytes());
    h[8..12].copy_from_slice(b"WAVE");
    h[12..16].copy_from_slice(b"fmt ");
    h[16..20].copy_from_slice(&16u32.to_le_bytes());
    h[20..22].copy_from_slice(&1u16.to_le_bytes()); // PCM
    h[22..24].copy_from_slice(&1u16.to_le_bytes()); // mono
    h[24..28].copy_from_slice(&sample_rate.to_le_bytes());
    h[28..32].copy_from_slice(&(sample_rate * 2).to_le_bytes());
    h[32..34].copy_from_slice(&2u16.to_le_bytes());
    h[34..36].copy_from_slice(&16u16.to_le_bytes());
    h[36..40].copy_from_slice(b"data");
    h[40..44].copy_from_slice(&data_len.to_le_bytes());
    h
}

fn write_pcm<W: Write>(w: &mut W, samples: &[f64]) -> io::Result<u64> {
    let mut bytes = Vec::with_capacity(samples.len() * 2);
    for &x in samples {
        bytes.extend_from_slice(&encode_sample(x).to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(bytes.len() as u64)
}

/// Streaming WAV writer. The header sizes are patched in [`PcmSink::finish`].
pub struct WavWriter<W: Write + Seek> {
    inner: W,
    data_len: u64,
}

impl<W: Write + Seek> WavWriter<W> {
    pub fn new(mut inner: W, sample_rate: u32) -> io::Result<Self> {
        inner.write_all(&header(sample_rate, 0))?;
        Ok(Self { inner, data_len: 0 })
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

impl WavWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, sample_rate: u32) -> io::Result<Self> {
        Self::new(BufWriter::new(File::create(path)?), sample_rate)
    }
}

impl<W: Write + Seek + Send> PcmSink for WavWriter<W> {
    fn write_samples(&mut self, samples: &[f64]) -> io::Result<()> {
        self.data_len += write_pcm(&mut self.inner, samples)?;
        if self.data_len > u64::from(u32::MAX - 36) {
            return Err(io::Error::other("WAV data exceeds 4 GiB"));
        }
        Ok(())
    }

    fn finish(&mut self) -> io::Result<()> {
        let len = self.data_len as u32;
        self.inner.seek(SeekFrom::Start(4))?;
        self.inner.write_all(&(36 + len).to_le_bytes())?;
        self.inner.seek(SeekFrom::Start(40))?;
        self.inner.write_all(&len.to_le_bytes())?;
        self.inner.seek(SeekFrom::End(0))?;
        self.inner.flush()
    }
}

/// Headerless 16-bit LE stream, e.g. stdout piped to an audio player.
pub struct RawPcmWriter<W: Write> {
    inner: W,
}

impl<W: Write> RawPcmWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }
}

impl<W: Write + Send> PcmSink for RawPcmWriter<W> {
    fn write_samples(&mut self, samples: &[f64]) -> io::Result<()> {
        write_pcm(&mut self.inner, samples)?;
        Ok(())
    }

    fn finish(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

/// Discards everything.
#[derive(Debug, Default)]
pub struct NullSink;

impl PcmSink for NullSink {
    fn write_samples(&mut self, _: &[f64]) -> io::Result<()> {
        Ok(())
    }

    fn finish(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl<T: PcmSink + ?Sized> PcmSink for Box<T> {
    fn write_samples(&mut self, samples: &[f64]) -> io::Result<()> {
        (**self).write_samples(samples)
    }

    fn finish(&mut self) -> io::Result<()> {
        (**self).finish()
    }
}

/// Collects samples in memory; clones share the same buffer.
#[derive(Debug, Clone, Default)]
pub struct MemorySink(Arc<Mutex<Vec<f64>>>);

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn samples(&self) -> Vec<f64> {
        self.0.lock().unwrap().clone()
    }
}

impl PcmSink for MemorySink {
    fn write_samples(&mut self, samples: &[f64]) -> io::Result<()> {
        self.0.lock().unwrap().extend_from_slice(samples);
        Ok(())
    }

    fn finish(&mut self) -> io::Result<()> {
        Ok(())
    }
}

pub fn encode_wav(buf: &AudioBuffer) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN as usize + buf.len() * 2);
    out.extend_from_slice(&header(buf.sample_rate, (buf.len() * 2) as u32));
    write_pcm(&mut out, &buf.samples).expect("writing to a Vec cannot fail");
    out
}

pub fn write_wav(path: impl AsRef<Path>, buf: &AudioBuffer) -> io::Result<()> {
    std::fs::write(path, encode_wav(buf))
}

/// Parses a mono 16-bit PCM WAV produced by this module.
pub fn decode_wav(bytes: &[u8]) -> io::Result<AudioBuffer> {
    let bad = |msg: &str| io::Error::new(io::ErrorKind::InvalidData, msg.to_string());
    if bytes.len() < HEADER_LEN as usize || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("not a RIFF/WAVE file"));
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    if &bytes[12..16] != b"fmt " || u16_at(20) != 1 || u16_at(22) != 1 || u16_at(34) != 16 {
        return Err(bad("expected mono 16-bit PCM"));
    }
    if &bytes[36..40] != b"data" {
        return Err(bad("missing data chunk"));
    }
    let sample_rate = u32_at(24);
    let len = u32_at(40) as usize;
    let data = bytes.get(44..44 + len).ok_or_else(|| bad("truncated data chunk"))?;
    let samples = data
        .chunks_exact(2)
        .map(|c| decode_sample(i16::from_le_bytes([c[0], c[1]])))
        .collect();
    Ok(AudioBuffer { sample_rate, samples })
}

#[cfg(test)]
mod tests {
    use std::io::Cursor;

    use super::*;

    #[test]
    fn sample_encoding_clips() {
        assert_eq!(encode_sample(0.0), 0);
        assert_eq!(encode_sample(1.0), i16::MAX);
        assert_eq!(encode_sample(1.7), i16::MAX);
        assert_eq!(encode_sample(-1.0), -i16::MAX);
        assert_eq!(encode_sample(-3.0), -i16::MAX);
        assert_eq!(encode_sample(f64::NAN), 0);
    }

    #[test]
    fn header_layout() {
        let buf = AudioBuffer {
            sample_rate: 44_100,
            samples: vec![0.0, 0.5, -0.5],
        };
        let bytes = encode_wav(&buf);
        assert_eq!(bytes.len(), 44 + 6);
        assert_eq!(&bytes[0..4], b"RIFF");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 42);
        assert_eq!(u32::from_le_bytes(bytes[24..28].try_into().unwrap()), 44_100);
        assert_eq!(u32::from_le_bytes(bytes[28..32].try_into().unwrap()), 88_200);
        assert_eq!(u32::from_le_bytes(bytes[40..44].try_into().unwrap()), 6);
        assert_eq!(i16::from_le_bytes([bytes[46], bytes[47]]), 16_384);
    }

    #[test]
    fn streaming_writer_matches_oneshot() {
        let samples: Vec<f64> = (0..1000).map(|i| (f64::from(i) * 0.01).sin()).collect();
        let mut w = WavWriter::new(Cursor::new(Vec::new()), 8_000).unwrap();
        for chunk in samples.chunks(77) {
            w.write_samples(chunk).unwrap();
        }
        w.finish().unwrap();
        let streamed = w.into_inner().into_inner();
        let oneshot = encode_wav(&AudioBuffer {
            sample_rate: 8_000,
            samples,
        });
        assert_eq!(streamed, oneshot);
    }

    #[test]
    fn empty_wav_is_valid() {
        let mut w = WavWriter::new(Cursor::new(Vec::new()), 44_100).unwrap();
        w.finish().unwrap();
        let bytes = w.into_inner().into_inner();
        let buf = decode_wav(&bytes).unwrap();
        assert!(buf.is_empty());
        assert_eq!(buf.sample_rate, 44_100);
    }

    #[test]
    fn raw_is_data_chunk_only() {
        let buf = AudioBuffer {
            sample_rate: 44_100,
            samples: vec![0.25, -0.25, 1.0],
        };
        let mut raw = RawPcmWriter::new(Vec::new());
        raw.write_samples(&buf.samples).unwrap();
        raw.finish().unwrap();
        assert_eq!(raw.inner, encode_wav(&buf)[44..]);
    }

    #[test]
    fn decode_rejects_garbage() {
        assert!(decode_wav(b"nope").is_err());
        let mut bytes = encode_wav(&AudioBuffer {
            sample_rate: 8_000,
            samples: vec![0.0; 4],
        });
        bytes.truncate(46);
        assert!(decode_wav(&bytes).is_err());
    }
}
