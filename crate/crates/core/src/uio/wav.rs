//! RIFF/PCM16 encode and decode.

use std::io::Cursor;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

/// Encodes mono PCM16 samples as a complete RIFF WAV byte buffer.
pub fn encode_pcm16(pcm: &[i16], sample_rate: u32) -> Result<Vec<u8>> {
    let spec = WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut cursor = Cursor::new(Vec::with_capacity(44 + pcm.len() * 2));
    {
        let mut w = WavWriter::new(&mut cursor, spec).map_err(hound_err)?;
        let mut w16 = w.get_i16_writer(pcm.len() as u32);
        for &s in pcm {
            w16.write_sample(s);
        }
        w16.flush().map_err(hound_err)?;
        w.finalize().map_err(hound_err)?;
    }
    Ok(cursor.into_inner())
}

/// Decoded mono audio plus the channel count found in the source.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedWav {
    pub pcm: Vec<i16>,
    pub sample_rate: u32,
    pub channels: u16,
}

/// Decodes a RIFF WAV buffer. Only 16-bit integer PCM is accepted; for
/// multi-channel input the first channel is kept.
pub fn decode_pcm16(bytes: &[u8]) -> std::result::Result<DecodedWav, String> {
    let mut reader = WavReader::new(Cursor::new(bytes)).map_err(|e| e.to_string())?;
    let spec = reader.spec();
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(format!(
            "unsupported encoding: {:?} {} bit (only PCM16 is accepted)",
            spec.sample_format, spec.bits_per_sample
        ));
    }
    if spec.channels == 0 {
        return Err("zero channels".into());
    }
    let ch = spec.channels as usize;
    let mut pcm = Vec::with_capacity(reader.len() as usize / ch);
    for (i, s) in reader.samples::<i16>().enumerate() {
        let s = s.map_err(|e| e.to_string())?;
        if i % ch == 0 {
            pcm.push(s);
        }
    }
    Ok(DecodedWav {
        pcm,
        sample_rate: spec.sample_rate,
        channels: spec.channels,
    })
}

fn hound_err(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::Wav {
            key: String::new(),
            reason: other.to_string(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_first_channel() {
        let bytes = encode_pcm16(&[1, -2, i16::MAX, i16::MIN], 8000).unwrap();
        assert_eq!(&bytes[..4], b"RIFF");
        let d = decode_pcm16(&bytes).unwrap();
        assert_eq!(d.pcm, vec![1, -2, i16::MAX, i16::MIN]);
        assert_eq!(d.sample_rate, 8000);

        let spec = WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut c = Cursor::new(Vec::new());
        {
            let mut w = WavWriter::new(&mut c, spec).unwrap();
            for s in [10i16, 20, 11, 21, 12, 22] {
                w.write_sample(s).unwrap();
            }
            w.finalize().unwrap();
        }
        let d = decode_pcm16(c.get_ref()).unwrap();
        assert_eq!(d.pcm, vec![10, 11, 12]);
        assert_eq!(d.channels, 2);
    }

    #[test]
    fn rejects_float_wav() {
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let mut c = Cursor::new(Vec::new());
        {
            let mut w = WavWriter::new(&mut c, spec).unwrap();
            w.write_sample(0.5f32).unwrap();
            w.finalize().unwrap();
        }
        assert!(decode_pcm16(c.get_ref()).unwrap_err().contains("PCM16"));
        assert!(decode_pcm16(b"garbage").is_err());
    }
}
