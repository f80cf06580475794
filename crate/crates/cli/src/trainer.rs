//! Feature extraction, statistics, the training loop and waveform
//! enhancement. The math lives in gse-core; this module moves data between
//! files and the core, and keeps the run reproducible from its seed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use gse_core::data::{self, NormStats, SliceConfig, TrainingSample};
use gse_core::dsp::{self, LpsMatrix, Waveform, LPS_FLOOR};
use gse_core::metrics;
use gse_core::model::{self, ModelParams};
use gse_core::rng::SeedStream;
use gse_core::train::{train_step, AdamState};
use num_complex::Complex;

use crate::config::Settings;
use crate::formats;
use crate::manifest::{feature_paths, fnv1a64, ManifestEntry};
use crate::wav;

/// Extracts and caches LPS features (unnormalized) for every manifest
/// entry: the noisy mixture and the matching peak-scaled clean target.
pub fn featurize(entries: &[ManifestEntry], features_dir: &Path) -> Result<usize> {
    std::fs::create_dir_all(features_dir)?;
    let mut written = 0;
    for e in entries {
        let speech = wav::read_wav(&e.speech)?;
        let noise = wav::read_wav(&e.noise)?;
        let mix = data::mix_at_snr(&speech, &noise, e.snr_db, e.mix_seed())
            .with_context(|| format!("mixing {}", e.id))?;
        let noisy_lps = dsp::lps(&dsp::stft(&mix.noisy)?, LPS_FLOOR)?;
        let clean_lps = dsp::lps(&dsp::stft(&mix.clean)?, LPS_FLOOR)?;
        let (noisy_path, clean_path) = feature_paths(features_dir, e);
        formats::write_features(&noisy_path, &noisy_lps)?;
        formats::write_features(&clean_path, &clean_lps)?;
        written += 2;
    }
    Ok(written)
}

/// Normalization statistics over the clean features of the train split.
pub fn compute_stats(entries: &[ManifestEntry], features_dir: &Path) -> Result<NormStats> {
    let mut matrices = Vec::new();
    for e in entries.iter().filter(|e| e.split == "train") {
        let (_, clean_path) = feature_paths(features_dir, e);
        matrices.push(formats::read_features(&clean_path)?);
    }
    if matrices.is_empty() {
        bail!("no train-split features found");
    }
    Ok(data::compute_norm_stats(matrices.iter())?)
}

/// Loads, normalizes and slices every train-split utterance into
/// fixed-length samples.
pub fn load_samples(
    entries: &[ManifestEntry],
    features_dir: &Path,
    stats: &NormStats,
    settings: &Settings,
) -> Result<Vec<TrainingSample>> {
    let slice = SliceConfig {
        len: settings.sample_len,
        overlap: settings.overlap,
    };
    let loss = settings.loss();
    let mut samples = Vec::new();
    for e in entries.iter().filter(|e| e.split == "train") {
        let (noisy_path, clean_path) = feature_paths(features_dir, e);
        let noisy = dsp::normalize_lps(&formats::read_features(&noisy_path)?, stats)?;
        let clean = dsp::normalize_lps(&formats::read_features(&clean_path)?, stats)?;
        let source = format!("{}@{}", e.id, e.snr_db);
        samples.extend(data::slice_samples(&noisy, &clean, stats, &slice, &loss, &source)?);
    }
    Ok(samples)
}

/// One row per optimizer step plus one row per epoch; written as two CSVs.
#[derive(Default)]
pub struct TrainLog {
    pub steps: Vec<(u64, f64, f64, f64, u128)>,
    pub epochs: Vec<(usize, f64, String)>,
}

impl TrainLog {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::from("step,total,d_e2stoi,mse,wall_ms\n");
        for (s, t, d, m, w) in &self.steps {
            writeln!(out, "{s},{t},{d},{m},{w}")?;
        }
        std::fs::write(path, out)?;
        let mut out = String::from("epoch,val_estoi,checkpoint\n");
        for (e, v, c) in &self.epochs {
            writeln!(out, "{e},{v},{c}")?;
        }
        std::fs::write(epochs_log_path(path), out)?;
        Ok(())
    }
}

pub fn epochs_log_path(log: &Path) -> PathBuf {
    log.with_extension("epochs.csv")
}

pub struct TrainOutcome {
    pub log: TrainLog,
    pub best_checkpoint: PathBuf,
}

/// The full training run: seeded shuffling, one checkpoint per epoch, the
/// best-validation checkpoint marked in `best.txt`. With `epochs = 0` only
/// the initial checkpoint is written.
pub fn train(settings: &Settings, resume: Option<&Path>) -> Result<TrainOutcome> {
    let manifest_path = settings.manifest.as_ref().context("manifest not set")?;
    let stats_path = settings.stats.as_ref().context("stats not set")?;
    let features_dir = settings.features_dir.as_ref().context("features_dir not set")?;
    let ckpt_dir = settings
        .checkpoint_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("checkpoints"));
    std::fs::create_dir_all(&ckpt_dir)?;

    let entries = crate::manifest::read_manifest(manifest_path)?;
    let stats = formats::read_stats(stats_path)?;
    let samples = load_samples(&entries, features_dir, &stats, settings)?;
    if samples.is_empty() {
        bail!("no training samples survive slicing/rejection");
    }
    let val_entries: Vec<&ManifestEntry> = entries.iter().filter(|e| e.split == "test").collect();

    let (mut params, mut adam_state, start_epoch) = match resume {
        Some(path) => {
            let ckpt = formats::read_checkpoint(path)?;
            if ckpt.params.config != settings.architecture() {
                bail!("resume checkpoint architecture differs from configured one");
            }
            let adam = ckpt.adam.with_context(|| {
                format!("{} carries no optimizer state; cannot resume", path.display())
            })?;
            (ckpt.params, adam, ckpt.epoch as usize)
        }
        None => {
            let params = model::build(&settings.architecture(), settings.seed);
            let adam = AdamState::new(&params);
            (params, adam, 0)
        }
    };

    let loss_cfg = settings.loss();
    let adam_cfg = settings.adam();
    let mut log = TrainLog::default();
    let mut global_step = adam_state.step;
    let mut best: Option<(f64, PathBuf)> = None;

    if settings.epochs == 0 || start_epoch >= settings.epochs {
        let path = ckpt_dir.join("epoch_000.gsec");
        formats::write_checkpoint(
            &path,
            &formats::Checkpoint {
                params: params.clone(),
                adam: Some(adam_state.clone()),
                epoch: start_epoch as u32,
            },
        )?;
        return Ok(TrainOutcome {
            log,
            best_checkpoint: path,
        });
    }

    for epoch in start_epoch..settings.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut shuffle = SeedStream::derived(settings.seed, &[fnv1a64(b"shuffle"), epoch as u64]);
        shuffle.shuffle(&mut order);

        for chunk in order.chunks(settings.batch_size.max(1)) {
            let batch: Vec<TrainingSample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let t0 = Instant::now();
            let breakdown = train_step(&mut params, &batch, &stats, &loss_cfg, &adam_cfg, &mut adam_state)?;
            global_step += 1;
            log.steps.push((
                global_step,
                breakdown.total,
                breakdown.d_e2stoi,
                breakdown.mse,
                t0.elapsed().as_millis(),
            ));
        }

        let ckpt_path = ckpt_dir.join(format!("epoch_{:03}.gsec", epoch + 1));
        formats::write_checkpoint(
            &ckpt_path,
            &formats::Checkpoint {
                params: params.clone(),
                adam: Some(adam_state.clone()),
                epoch: (epoch + 1) as u32,
            },
        )?;

        let val = if settings.validate && !val_entries.is_empty() {
            validation_estoi(&params, &stats, &val_entries)?
        } else {
            f64::NAN
        };
        log.epochs.push((epoch + 1, val, ckpt_path.display().to_string()));
        if val.is_finite() && best.as_ref().map(|(b, _)| val > *b).unwrap_or(true) {
            best = Some((val, ckpt_path.clone()));
            std::fs::write(ckpt_dir.join("best.txt"), format!("{}\n", ckpt_path.display()))?;
        }

        if let Some(log_path) = &settings.log {
            log.write(log_path)?;
        }
    }

    let best_checkpoint = best
        .map(|(_, p)| p)
        .unwrap_or_else(|| ckpt_dir.join(format!("epoch_{:03}.gsec", settings.epochs)));
    Ok(TrainOutcome {
        log,
        best_checkpoint,
    })
}

/// Mean ESTOI of enhanced test utterances against their clean references.
fn validation_estoi(
    params: &ModelParams,
    stats: &NormStats,
    entries: &[&ManifestEntry],
) -> Result<f64> {
    let mut acc = 0.0;
    let mut n = 0usize;
    for e in entries {
        let speech = wav::read_wav(&e.speech)?;
        let noise = wav::read_wav(&e.noise)?;
        let mix = data::mix_at_snr(&speech, &noise, e.snr_db, e.mix_seed())?;
        let enhanced = enhance_waveform(params, stats, &mix.noisy)?;
        acc += metrics::estoi(&mix.clean, &enhanced)?;
        n += 1;
    }
    Ok(acc / n as f64)
}

/// Enhances one waveform: normalized noisy LPS in, enhanced LPS out
/// (inference-mode batch norm), magnitudes recombined with the noisy phase,
/// overlap-add back to samples, padded to the input duration, peak-limited.
pub fn enhance_waveform(params: &ModelParams, stats: &NormStats, noisy: &Waveform) -> Result<Waveform> {
    let spec = dsp::stft(noisy)?;
    let frames = spec.frames;
    let lps = dsp::lps(&spec, LPS_FLOOR)?;
    let normalized = dsp::normalize_lps(&lps, stats)?;

    let mut g = gse_core::autodiff::Graph::new();
    let nodes = model::bind(&mut g, params, false);
    let x = g.constant(normalized.values.reshaped(&[1, dsp::F_BINS, frames])?);
    let y = model::forward(
        &mut g,
        &nodes,
        &params.config,
        x,
        model::Mode::Eval {
            running: &params.running,
        },
    )?;
    let enhanced_norm = LpsMatrix {
        values: g.value(y).reshaped(&[dsp::F_BINS, frames])?,
    };
    drop(g);

    let enhanced_lps = dsp::denormalize_lps(&enhanced_norm, stats)?;
    let magnitudes = dsp::lps_to_abs(&enhanced_lps);

    // rebuild complex bins: enhanced magnitude, noisy phase
    let mut out_spec = spec.clone();
    for k in 0..out_spec.f_bins {
        for m in 0..frames {
            let noisy_bin = spec.at(k, m);
            let mag = magnitudes.at2(k, m);
            let r = gse_core::math::sqrt(noisy_bin.norm_sqr());
            let phase = if r > 0.0 {
                noisy_bin / r
            } else {
                Complex::new(1.0, 0.0)
            };
            out_spec.set(k, m, phase * mag);
        }
    }
    let mut out = dsp::istft(&out_spec)?;
    out.samples.resize(noisy.len(), 0.0);
    let peak = out.peak();
    if peak > 0.999 {
        let s = 0.999 / peak;
        for v in &mut out.samples {
            *v *= s;
        }
    }
    Ok(out)
}
