//! Gate-weight inspection: per-kernel traces as CSV (raw and per-kernel
//! mean-centered) plus an 8-bit PGM heatmap of the centered matrix.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gse_core::data::NormStats;
use gse_core::dsp::{self, LPS_FLOOR};
use gse_core::model::{gate_matrix, GateDump, ModelParams};
use gse_core::tensor::Tensor;

use crate::wav;

pub struct GateDumpFiles {
    pub raw_csv: PathBuf,
    pub centered_csv: PathBuf,
    pub pgm: PathBuf,
}

/// Computes the gate weights the model would apply to `noisy_wav` and
/// writes them next to `out_prefix`.
pub fn dump_gates(
    params: &ModelParams,
    stats: &NormStats,
    noisy_wav: &Path,
    out_prefix: &Path,
) -> Result<(GateDump, GateDumpFiles)> {
    let noisy = wav::read_wav(noisy_wav)?;
    let spec = dsp::stft(&noisy)?;
    let frames = spec.frames;
    let lps = dsp::lps(&spec, LPS_FLOOR)?;
    let normalized = dsp::normalize_lps(&lps, stats)?;
    let input = normalized.values.reshaped(&[1, dsp::F_BINS, frames])?;
    let dump = gate_matrix(params, &input)?;
    let files = write_gate_files(&dump, out_prefix)?;
    Ok((dump, files))
}

pub fn write_gate_files(dump: &GateDump, out_prefix: &Path) -> Result<GateDumpFiles> {
    let centered = center_rows(&dump.weights);
    let files = GateDumpFiles {
        raw_csv: with_suffix(out_prefix, "csv"),
        centered_csv: with_suffix(out_prefix, "centered.csv"),
        pgm: with_suffix(out_prefix, "pgm"),
    };
    write_matrix_csv(&files.raw_csv, &dump.weights, dump.axis)?;
    write_matrix_csv(&files.centered_csv, &centered, dump.axis)?;
    write_pgm(&files.pgm, &centered)?;
    Ok(files)
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    name.push('.');
    name.push_str(suffix);
    prefix.with_file_name(name)
}

/// Subtracts each kernel's mean from its row.
pub fn center_rows(weights: &Tensor) -> Tensor {
    let (rows, cols) = (weights.shape()[0], weights.shape()[1]);
    let mut out = weights.clone();
    for r in 0..rows {
        let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
        let mean: f64 = row.iter().sum::<f64>() / cols as f64;
        for v in row.iter_mut() {
            *v -= mean;
        }
    }
    out
}

/// One CSV row per gated kernel: kernel index, then the weight trace.
fn write_matrix_csv(path: &Path, m: &Tensor, axis: &str) -> Result<()> {
    let (rows, cols) = (m.shape()[0], m.shape()[1]);
    let mut out = String::new();
    write!(out, "kernel")?;
    for c in 0..cols {
        write!(out, ",{axis}{c}")?;
    }
    writeln!(out)?;
    for r in 0..rows {
        write!(out, "{r}")?;
        for c in 0..cols {
            write!(out, ",{}", m.at2(r, c))?;
        }
        writeln!(out)?;
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// Binary P5 PGM, one pixel per (kernel, position), centered values mapped
/// symmetrically onto 0..=255 with 128 at zero.
fn write_pgm(path: &Path, m: &Tensor) -> Result<()> {
    let (rows, cols) = (m.shape()[0], m.shape()[1]);
    let scale = m
        .data()
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(1e-12);
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    for r in 0..rows {
        for c in 0..cols {
            let v = (m.at2(r, c) / scale + 1.0) / 2.0;
            out.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}
