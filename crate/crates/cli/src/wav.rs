//! WAV ingestion and emission. The toolkit works on one fixed format:
//! RIFF PCM16, mono, 16 kHz. Anything else is rejected with a message
//! naming the offending property.

use std::path::Path;

use anyhow::{bail, Context, Result};
use gse_core::dsp::{Waveform, SAMPLE_RATE};

/// Reads a PCM16 mono 16 kHz WAV, scaling samples to [-1, 1] by 1/32768.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let reader = hound::WavReader::open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        bail!(
            "unsupported format in {}: {} channels (need mono)",
            path.display(),
            spec.channels
        );
    }
    if spec.sample_rate != SAMPLE_RATE {
        bail!(
            "unsupported format in {}: {} Hz (need {} Hz)",
            path.display(),
            spec.sample_rate,
            SAMPLE_RATE
        );
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        bail!(
            "unsupported format in {}: {:?} {} bit (need 16-bit PCM)",
            path.display(),
            spec.sample_format,
            spec.bits_per_sample
        );
    }
    let samples: std::result::Result<Vec<i16>, _> = reader.into_samples().collect();
    let samples = samples.with_context(|| format!("decoding {}", path.display()))?;
    Ok(Waveform::new(
        samples.iter().map(|&s| s as f64 / 32768.0).collect(),
    ))
}

/// Writes a waveform as PCM16 mono 16 kHz, clamping to the sample range.
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .with_context(|| format!("creating {}", path.display()))?;
    for &s in &w.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v)?;
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaling_and_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        // 16384 -> 0.5 per the scaling rule
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for v in [0i16, 16384, -16384, 32767] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        let wav = read_wav(&path).unwrap();
        assert_eq!(wav.samples[0], 0.0);
        assert_eq!(wav.samples[1], 0.5);
        assert_eq!(wav.samples[2], -0.5);
        assert_eq!(wav.sample_rate, 16000);

        // zeros stay zeros through a write/read cycle
        let z = Waveform::new(vec![0.0; 16000]);
        let zp = dir.path().join("z.wav");
        write_wav(&zp, &z).unwrap();
        let back = read_wav(&zp).unwrap();
        assert_eq!(back.samples.len(), 16000);
        assert!(back.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn rejects_wrong_rate_and_channels() {
        let dir = tempfile::tempdir().unwrap();
        let p44 = dir.path().join("r44.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 44100,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p44, spec).unwrap();
        for _ in 0..100 {
            w.write_sample(0i16).unwrap();
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        let err = read_wav(&p44).unwrap_err().to_string();
        assert!(err.contains("unsupported format"), "{err}");
    }
}
