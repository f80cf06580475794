//! Test-set evaluation: remix each test utterance deterministically,
//! enhance it, and score noisy and enhanced against the clean reference.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use gse_core::data::{mix_at_snr, NormStats};
use gse_core::metrics::estoi;
use gse_core::model::ModelParams;

use crate::manifest::ManifestEntry;
use crate::trainer::enhance_waveform;
use crate::wav;

#[derive(Clone, Debug)]
pub struct UtteranceScore {
    pub id: String,
    pub noise: String,
    pub snr_db: f64,
    pub estoi_noisy: f64,
    pub estoi_enhanced: f64,
}

pub struct Evaluation {
    pub rows: Vec<UtteranceScore>,
    /// (noise, snr) -> (mean noisy, mean enhanced), sorted by key.
    pub summary: Vec<(String, f64, f64, f64)>,
    pub failures: Vec<String>,
}

pub fn evaluate(
    params: &ModelParams,
    stats: &NormStats,
    entries: &[ManifestEntry],
) -> Result<Evaluation> {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for e in entries.iter().filter(|e| e.split == "test") {
        match score_one(params, stats, e) {
            Ok(row) => rows.push(row),
            Err(err) => failures.push(format!("{}: {err:#}", e.id)),
        }
    }
    if rows.is_empty() {
        bail!(
            "no test utterances evaluated ({} failures{})",
            failures.len(),
            if failures.is_empty() { "" } else { ", see stderr" }
        );
    }

    let mut keys: Vec<(String, f64)> = rows
        .iter()
        .map(|r| (r.noise.clone(), r.snr_db))
        .collect();
    keys.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.partial_cmp(&b.1).unwrap()));
    keys.dedup();
    let summary = keys
        .into_iter()
        .map(|(noise, snr)| {
            let group: Vec<&UtteranceScore> = rows
                .iter()
                .filter(|r| r.noise == noise && r.snr_db == snr)
                .collect();
            let n = group.len() as f64;
            let mean_noisy = group.iter().map(|r| r.estoi_noisy).sum::<f64>() / n;
            let mean_enh = group.iter().map(|r| r.estoi_enhanced).sum::<f64>() / n;
            (noise, snr, mean_noisy, mean_enh)
        })
        .collect();
    Ok(Evaluation {
        rows,
        summary,
        failures,
    })
}

fn score_one(params: &ModelParams, stats: &NormStats, e: &ManifestEntry) -> Result<UtteranceScore> {
    let speech = wav::read_wav(&e.speech)?;
    let noise = wav::read_wav(&e.noise)?;
    let mix = mix_at_snr(&speech, &noise, e.snr_db, e.mix_seed()).context("mixing")?;
    let enhanced = enhance_waveform(params, stats, &mix.noisy)?;
    Ok(UtteranceScore {
        id: e.id.clone(),
        noise: e.noise_name(),
        snr_db: e.snr_db,
        estoi_noisy: estoi(&mix.clean, &mix.noisy)?,
        estoi_enhanced: estoi(&mix.clean, &enhanced)?,
    })
}

/// Per-utterance rows: id, noise condition, SNR, ESTOI(noisy), ESTOI(enhanced).
pub fn write_detail_csv(path: &Path, rows: &[UtteranceScore]) -> Result<()> {
    let mut out = String::from("id,noise,snr_db,estoi_noisy,estoi_enhanced\n");
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.id, r.noise, r.snr_db, r.estoi_noisy, r.estoi_enhanced)?;
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// One row per (noise, SNR) with mean scores.
pub fn write_summary_csv(path: &Path, summary: &[(String, f64, f64, f64)]) -> Result<()> {
    let mut out = String::from("noise,snr_db,mean_estoi_noisy,mean_estoi_enhanced\n");
    for (noise, snr, mn, me) in summary {
        writeln!(out, "{noise},{snr},{mn},{me}")?;
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}
