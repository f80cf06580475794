//! Reference ESTOI intelligibility metric (non-differentiable, evaluation
//! only). The trainable loss in [`crate::loss`] is a separate code path on
//! purpose: this module is the independent check of what training claims.

use alloc::format;
use alloc::vec::Vec;

use crate::dsp::{self, Spectrogram, Waveform};
use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Segment length in frames (384 ms at the 512/256 front end).
pub const SEGMENT_LEN: usize = 30;
/// Frames more than this far below the loudest frame are dropped.
pub const SILENCE_THRESHOLD_DB: f64 = 40.0;
/// Lower bound on normalization denominators in lenient mode, so exact
/// zeros stay finite without perturbing healthy columns.
pub const NORM_GUARD: f64 = 1e-10;

/// How to treat rows/columns that are exactly zero after mean removal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Guard {
    /// Fail with the offending index.
    Strict,
    /// Add 1e-10 to the norm and continue (metric evaluation default).
    Eps,
}

/// Drops frames whose clean-signal energy is more than `threshold_db` below
/// the loudest frame, removing the same frames from both spectrograms.
pub fn remove_silent_frames(
    clean: &Spectrogram,
    other: &Spectrogram,
    threshold_db: f64,
) -> Result<(Spectrogram, Spectrogram)> {
    if clean.frames != other.frames {
        return Err(Error::shape(
            "remove_silent_frames",
            format!("{} vs {} frames", clean.frames, other.frames),
        ));
    }
    let energies: Vec<f64> = (0..clean.frames).map(|m| clean.frame_energy(m)).collect();
    let max = energies.iter().cloned().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return Err(Error::AllFramesSilent);
    }
    let cutoff = max * math::db_to_power(-threshold_db);
    let keep: Vec<usize> = (0..clean.frames).filter(|&m| energies[m] > cutoff).collect();
    if keep.is_empty() {
        return Err(Error::AllFramesSilent);
    }
    Ok((clean.select_frames(&keep), other.select_frames(&keep)))
}

/// Eq.-3 style normalization of one `[J, N]` segment: every row is mean
/// centered and scaled to unit L2 norm, then every column likewise.
pub fn row_col_normalize(seg: &Tensor, guard: Guard) -> Result<Tensor> {
    if seg.rank() != 2 {
        return Err(Error::shape(
            "row_col_normalize",
            format!("expected rank 2, got {:?}", seg.shape()),
        ));
    }
    let (j, n) = (seg.shape()[0], seg.shape()[1]);
    let mut out = seg.clone();

    for r in 0..j {
        let row = &mut out.data_mut()[r * n..(r + 1) * n];
        let mean: f64 = row.iter().sum::<f64>() / n as f64;
        for v in row.iter_mut() {
            *v -= mean;
        }
        let norm = math::sqrt(row.iter().map(|v| v * v).sum());
        if norm == 0.0 && guard == Guard::Strict {
            return Err(Error::DegenerateRow { index: r });
        }
        let denom = norm.max(NORM_GUARD);
        for v in row.iter_mut() {
            *v /= denom;
        }
    }

    for c in 0..n {
        let mut mean = 0.0;
        for r in 0..j {
            mean += out.data()[r * n + c];
        }
        mean /= j as f64;
        let mut ss = 0.0;
        for r in 0..j {
            let v = out.data()[r * n + c] - mean;
            out.data_mut()[r * n + c] = v;
            ss += v * v;
        }
        let norm = math::sqrt(ss);
        if norm == 0.0 && guard == Guard::Strict {
            return Err(Error::DegenerateColumn { index: c });
        }
        let denom = norm.max(NORM_GUARD);
        for r in 0..j {
            out.data_mut()[r * n + c] /= denom;
        }
    }
    Ok(out)
}

/// ESTOI between a clean and a processed waveform of equal length.
///
/// Pipeline: STFT both, drop frames that are silent in the clean signal,
/// pool into one-third octave bands, slide a length-`SEGMENT_LEN` window,
/// normalize each segment rows-then-columns, and average the column
/// correlations. Perfect enhancement scores 1; the value is bounded by
/// [-1, 1].
pub fn estoi(clean: &Waveform, processed: &Waveform) -> Result<f64> {
    estoi_with(clean, processed, SEGMENT_LEN, SILENCE_THRESHOLD_DB)
}

pub fn estoi_with(
    clean: &Waveform,
    processed: &Waveform,
    seg_len: usize,
    silence_db: f64,
) -> Result<f64> {
    if clean.len() != processed.len() {
        return Err(Error::shape(
            "estoi",
            format!("{} vs {} samples", clean.len(), processed.len()),
        ));
    }
    if seg_len < 2 {
        return Err(Error::invalid("estoi", "segment length must be at least 2"));
    }
    let clean_spec = dsp::stft(clean)?;
    let proc_spec = dsp::stft(processed)?;
    let (clean_spec, proc_spec) = remove_silent_frames(&clean_spec, &proc_spec, silence_db)?;

    let clean_bands = dsp::octave_bands(&clean_spec.magnitudes())?;
    let proc_bands = dsp::octave_bands(&proc_spec.magnitudes())?;
    estoi_from_bands(&clean_bands.values, &proc_bands.values, seg_len)
}

/// The segment/correlation stage on already-pooled `[J, M]` band matrices.
pub fn estoi_from_bands(clean: &Tensor, processed: &Tensor, seg_len: usize) -> Result<f64> {
    if clean.shape() != processed.shape() {
        return Err(Error::shape(
            "estoi",
            format!("{:?} vs {:?}", clean.shape(), processed.shape()),
        ));
    }
    let (j, m) = (clean.shape()[0], clean.shape()[1]);
    if m < seg_len {
        return Err(Error::TooFewFrames {
            got: m,
            needed: seg_len,
        });
    }
    let n_segments = m - seg_len + 1;
    let mut total = 0.0;
    let mut seg_c = Tensor::zeros(&[j, seg_len]);
    let mut seg_p = Tensor::zeros(&[j, seg_len]);
    for start in 0..n_segments {
        for r in 0..j {
            for c in 0..seg_len {
                seg_c.set2(r, c, clean.at2(r, start + c));
                seg_p.set2(r, c, processed.at2(r, start + c));
            }
        }
        let nc = row_col_normalize(&seg_c, Guard::Eps)?;
        let np = row_col_normalize(&seg_p, Guard::Eps)?;
        total += nc
            .data()
            .iter()
            .zip(np.data())
            .map(|(a, b)| a * b)
            .sum::<f64>();
    }
    Ok(total / (seg_len as f64 * n_segments as f64))
}
