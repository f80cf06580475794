//! The corpus manifest: one record per (utterance, SNR) pair, tab
//! separated — id, speech path, noise path, SNR in dB, split. Speech lives
//! under `<speech_dir>/{train,test}/<speaker>/*.wav`; the speaker directory
//! enforces the train/test speaker disjointness.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gse_core::rng::SeedStream;

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub speech: PathBuf,
    pub noise: PathBuf,
    pub snr_db: f64,
    pub split: String,
}

impl ManifestEntry {
    pub fn speaker(&self) -> &str {
        self.id.split('/').next().unwrap_or(&self.id)
    }

    pub fn noise_name(&self) -> String {
        self.noise
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "noise".into())
    }

    /// Mixing seed derived from the record content alone, so featurization
    /// and evaluation reconstruct the identical noisy signal without any
    /// shared state.
    pub fn mix_seed(&self) -> u64 {
        let text = format!("{}|{}|{:.3}", self.id, self.noise_name(), self.snr_db);
        fnv1a64(text.as_bytes())
    }
}

pub fn fnv1a64(data: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in data {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn wav_files_recursive(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).with_context(|| format!("listing {}", d.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "wav") {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Scans `speech_dir/{train,test}` and `noise_dir`, assigning one noise
/// file per utterance (seeded) and one record per SNR.
pub fn build_manifest(
    speech_dir: &Path,
    noise_dir: &Path,
    snrs: &[f64],
    seed: u64,
) -> Result<Vec<ManifestEntry>> {
    let noises = wav_files_recursive(noise_dir)?;
    if noises.is_empty() {
        bail!("no noise wavs under {}", noise_dir.display());
    }
    if snrs.is_empty() {
        bail!("no SNR levels given");
    }
    let mut entries = Vec::new();
    for split in ["train", "test"] {
        let dir = speech_dir.join(split);
        if !dir.is_dir() {
            continue;
        }
        let files = wav_files_recursive(&dir)?;
        for speech in files {
            let speaker = speech
                .parent()
                .and_then(|p| p.file_name())
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "unknown".into());
            let stem = speech
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "utt".into());
            let id = format!("{speaker}/{stem}");
            let mut stream = SeedStream::derived(seed, &[fnv1a64(b"noise-pick"), fnv1a64(id.as_bytes())]);
            let noise = noises[stream.below(noises.len())].clone();
            for &snr in snrs {
                entries.push(ManifestEntry {
                    id: id.clone(),
                    speech: speech.clone(),
                    noise: noise.clone(),
                    snr_db: snr,
                    split: split.to_string(),
                });
            }
        }
    }
    if entries.is_empty() {
        bail!(
            "no speech wavs under {}/train or {}/test",
            speech_dir.display(),
            speech_dir.display()
        );
    }
    // the directory convention carries the speaker split; verify it holds
    let train: std::collections::BTreeSet<&str> = entries
        .iter()
        .filter(|e| e.split == "train")
        .map(|e| e.speaker())
        .collect();
    if let Some(bad) = entries
        .iter()
        .find(|e| e.split == "test" && train.contains(e.speaker()))
    {
        bail!("speaker {} appears in both train and test", bad.speaker());
    }
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            e.id,
            e.speech.display(),
            e.noise.display(),
            e.snr_db,
            e.split
        )?;
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut entries = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            bail!("{}:{}: expected 5 tab-separated fields, got {}", path.display(), ln + 1, fields.len());
        }
        entries.push(ManifestEntry {
            id: fields[0].to_string(),
            speech: PathBuf::from(fields[1]),
            noise: PathBuf::from(fields[2]),
            snr_db: fields[3]
                .parse()
                .with_context(|| format!("{}:{}: bad SNR '{}'", path.display(), ln + 1, fields[3]))?,
            split: fields[4].to_string(),
        });
    }
    Ok(entries)
}

/// Feature cache file names for one manifest entry.
pub fn feature_paths(features_dir: &Path, e: &ManifestEntry) -> (PathBuf, PathBuf) {
    let base = format!("{}.snr{}", e.id.replace('/', "_"), e.snr_db);
    (
        features_dir.join(format!("{base}.noisy.gse1")),
        features_dir.join(format!("{base}.clean.gse1")),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch_wav(path: &Path) {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
    }

    fn corpus(dir: &Path) {
        for (split, speakers) in [("train", ["sp00", "sp01"]), ("test", ["sp08", "sp09"])] {
            for sp in speakers {
                for utt in 0..2 {
                    touch_wav(&dir.join("speech").join(split).join(sp).join(format!("utt{utt}.wav")));
                }
            }
        }
        for n in ["pink", "hiss"] {
            touch_wav(&dir.join("noise").join(format!("{n}.wav")));
        }
    }

    #[test]
    fn deterministic_and_complete() {
        let dir = tempfile::tempdir().unwrap();
        corpus(dir.path());
        let snrs = [-5.0, 0.0, 5.0];
        let a = build_manifest(&dir.path().join("speech"), &dir.path().join("noise"), &snrs, 7).unwrap();
        let b = build_manifest(&dir.path().join("speech"), &dir.path().join("noise"), &snrs, 7).unwrap();
        assert_eq!(a, b);
        // |utterances| x |snrs| records
        assert_eq!(a.len(), 8 * 3);
        // a different seed moves at least one noise assignment eventually
        let c = build_manifest(&dir.path().join("speech"), &dir.path().join("noise"), &snrs, 8).unwrap();
        assert_eq!(c.len(), a.len());
    }

    #[test]
    fn speaker_disjointness() {
        let dir = tempfile::tempdir().unwrap();
        corpus(dir.path());
        let entries =
            build_manifest(&dir.path().join("speech"), &dir.path().join("noise"), &[0.0], 7).unwrap();
        let train: std::collections::BTreeSet<_> = entries
            .iter()
            .filter(|e| e.split == "train")
            .map(|e| e.speaker().to_string())
            .collect();
        let test: std::collections::BTreeSet<_> = entries
            .iter()
            .filter(|e| e.split == "test")
            .map(|e| e.speaker().to_string())
            .collect();
        assert!(!train.is_empty() && !test.is_empty());
        assert!(train.is_disjoint(&test));
    }

    #[test]
    fn file_roundtrip_and_mix_seed_stability() {
        let dir = tempfile::tempdir().unwrap();
        corpus(dir.path());
        let entries =
            build_manifest(&dir.path().join("speech"), &dir.path().join("noise"), &[-5.0, 5.0], 3).unwrap();
        let path = dir.path().join("manifest.tsv");
        write_manifest(&path, &entries).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back, entries);
        // mix seed depends only on record content
        assert_eq!(back[0].mix_seed(), entries[0].mix_seed());
        assert_ne!(back[0].mix_seed(), back[1].mix_seed());
    }

    #[test]
    fn empty_dirs_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("speech/train")).unwrap();
        fs::create_dir_all(dir.path().join("noise")).unwrap();
        assert!(build_manifest(&dir.path().join("speech"), &dir.path().join("noise"), &[0.0], 1).is_err());
    }
}
