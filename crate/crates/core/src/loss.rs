//! The differentiable intelligibility loss used for training.
//!
//! Pipeline per sample, all on the graph so it backpropagates into the
//! network output: denormalize the predicted log-power spectrum, map to
//! magnitudes via `exp(x/2)`, clip into `[0, 1]`, mask frames that are
//! silent in the clean reference, pool the surviving frames into one-third
//! octave bands, normalize rows then columns over the whole masked extent
//! (no segmentation), and correlate clean against enhanced. The total loss
//! is `-d + lambda * mse` with the MSE taken over all frames of the
//! normalized features, which restores sensitivity to absolute scale and to
//! the masked frames.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{Graph, NodeId};
use crate::data::NormStats;
use crate::dsp;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Inner epsilon of the band-energy square root (Eq.-1 style pooling),
/// keeping it differentiable on silent bands.
pub const BAND_EPS: f64 = 1e-12;
/// Inner epsilon of the normalization denominators: `sqrt(ss + 1e-20)`
/// bottoms out at the 1e-10 guard used by the reference metric.
pub const NORM_EPS: f64 = 1e-20;

/// Frames retained by the energy condition, in increasing order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameMask {
    pub kept: Vec<usize>,
}

impl FrameMask {
    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }
}

/// Loss hyperparameters. Defaults follow the training setup: MSE weight
/// 1/3, energy threshold 0.01 with a 1e-3 per-bin activity floor, and at
/// least 10 active frames per 40-frame sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub theta: f64,
    pub bin_floor: f64,
    pub min_active: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 1.0 / 3.0,
            theta: 0.01,
            bin_floor: 1e-3,
            min_active: 10,
        }
    }
}

/// Node handles of one loss evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub total: NodeId,
    pub d: NodeId,
    pub mse: NodeId,
}

/// Scalar readout of a loss evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub d_e2stoi: f64,
    pub mse: f64,
    pub lambda: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn from_nodes(g: &Graph, nodes: &LossNodes, lambda: f64) -> Self {
        LossBreakdown {
            d_e2stoi: g.value(nodes.d).item(),
            mse: g.value(nodes.mse).item(),
            lambda,
            total: g.value(nodes.total).item(),
        }
    }
}

/// Upper clip of the magnitude spectrum into `[0, 1]`; gradient flows only
/// below the clip point.
pub fn clip01(g: &mut Graph, x: NodeId) -> NodeId {
    g.clamp(x, 0.0, 1.0)
}

/// The energy condition on a clipped clean magnitude matrix `[F, M]`: frame
/// `m` is kept when more than `theta` bins are active, a bin counting as
/// active when it exceeds `bin_floor`. (The step function of the energy
/// condition is read as a per-bin activity test, since floating point audio
/// has no exact zeros; both knobs are configurable.)
pub fn silence_mask(clean_clipped: &Tensor, theta: f64, bin_floor: f64) -> FrameMask {
    let (f, m) = (clean_clipped.shape()[0], clean_clipped.shape()[1]);
    let data = clean_clipped.data();
    let mut kept = Vec::new();
    for mi in 0..m {
        let mut count = 0usize;
        for k in 0..f {
            if data[k * m + mi] > bin_floor {
                count += 1;
            }
        }
        if count as f64 > theta {
            kept.push(mi);
        }
    }
    FrameMask { kept }
}

/// Band pooling restricted to the masked frames: squares, sums each band's
/// bins, takes the guarded square root, then keeps the mask columns.
pub fn masked_octave(
    g: &mut Graph,
    abs_clipped: NodeId,
    mask: &FrameMask,
    edges: &[(usize, usize)],
) -> Result<NodeId> {
    if mask.is_empty() {
        return Err(Error::invalid("masked_octave", "empty frame mask"));
    }
    let sq = g.mul(abs_clipped, abs_clipped)?;
    let pooled = g.band_pool(sq, edges)?;
    let bands = g.sqrt_eps(pooled, BAND_EPS);
    g.select_cols(bands, &mask.kept)
}

/// Row-then-column normalization of a `[J, L]` band matrix over the single
/// masked segment. Means and norms run over the kept frames only.
pub fn masked_normalize(g: &mut Graph, bands: NodeId) -> Result<NodeId> {
    let shape = g.shape(bands);
    if shape.len() != 2 {
        return Err(Error::shape(
            "masked_normalize",
            format!("expected rank 2, got {shape:?}"),
        ));
    }
    let l = shape[1];
    if l < 2 {
        return Err(Error::TooFewFrames { got: l, needed: 2 });
    }
    let rows = normalize_axis(g, bands, 1)?;
    normalize_axis(g, rows, 0)
}

fn normalize_axis(g: &mut Graph, x: NodeId, axis: usize) -> Result<NodeId> {
    let n = g.shape(x)[axis] as f64;
    let sums = g.sum_axis(x, axis)?;
    let mean = g.scale(sums, 1.0 / n);
    let centered = g.sub(x, mean)?;
    let sq = g.mul(centered, centered)?;
    let ss = g.sum_axis(sq, axis)?;
    let norm = g.sqrt_eps(ss, NORM_EPS);
    g.div(centered, norm)
}

/// Mean column correlation of two normalized `[J, L]` matrices; the
/// single-segment trace formula, bounded by [-1, 1].
pub fn d_e2stoi(g: &mut Graph, clean_norm: NodeId, enh_norm: NodeId) -> Result<NodeId> {
    let (cs, es) = (g.shape(clean_norm).to_vec(), g.shape(enh_norm).to_vec());
    if cs != es {
        return Err(Error::shape("d_e2stoi", format!("{cs:?} vs {es:?}")));
    }
    let l = cs[1] as f64;
    let prod = g.mul(clean_norm, enh_norm)?;
    let s = g.sum_all(prod);
    Ok(g.scale(s, 1.0 / l))
}

/// Full loss over a pair of normalized log-power-spectrum samples
/// (`[257, T]`, or `[1, 257, T]` from the network). Gradients flow through
/// the enhanced input; the clean input is the reference.
///
/// Fails with [`Error::SampleRejected`] when fewer than `min_active` frames
/// survive the clean-side energy condition — callers discard such samples.
pub fn e2stoi_loss(
    g: &mut Graph,
    enh_norm: NodeId,
    clean_norm: NodeId,
    stats: &NormStats,
    cfg: &LossConfig,
) -> Result<LossNodes> {
    let enh = squeeze_to_matrix(g, enh_norm)?;
    let clean = squeeze_to_matrix(g, clean_norm)?;
    let (es, cs) = (g.shape(enh).to_vec(), g.shape(clean).to_vec());
    if es != cs {
        return Err(Error::shape("e2stoi_loss", format!("{es:?} vs {cs:?}")));
    }
    if es[0] != dsp::F_BINS {
        return Err(Error::shape(
            "e2stoi_loss",
            format!("expected {} bins, got {}", dsp::F_BINS, es[0]),
        ));
    }

    let edges = dsp::one_third_octave_bands();
    let enh_clip = abs_clip_path(g, enh, stats)?;
    let clean_clip = abs_clip_path(g, clean, stats)?;

    let mask = silence_mask(g.value(clean_clip), cfg.theta, cfg.bin_floor);
    if mask.len() < cfg.min_active {
        return Err(Error::SampleRejected {
            kept: mask.len(),
            min_active: cfg.min_active,
        });
    }

    let enh_bands = masked_octave(g, enh_clip, &mask, &edges)?;
    let clean_bands = masked_octave(g, clean_clip, &mask, &edges)?;
    let enh_n = masked_normalize(g, enh_bands)?;
    let clean_n = masked_normalize(g, clean_bands)?;
    let d = d_e2stoi(g, clean_n, enh_n)?;

    let mse = g.mse(enh, clean)?;
    let neg_d = g.neg(d);
    let weighted = g.scale(mse, cfg.lambda);
    let total = g.add(neg_d, weighted)?;
    Ok(LossNodes { total, d, mse })
}

/// Denormalize, go to magnitudes, clip: the shared head of both branches.
fn abs_clip_path(g: &mut Graph, x: NodeId, stats: &NormStats) -> Result<NodeId> {
    let f = g.shape(x)[0];
    let std_col = g.constant(Tensor::new(&[f, 1], stats.std.clone())?);
    let mean_col = g.constant(Tensor::new(&[f, 1], stats.mean.clone())?);
    let scaled = g.mul(x, std_col)?;
    let denorm = g.add(scaled, mean_col)?;
    let half = g.scale(denorm, 0.5);
    let abs = g.exp(half);
    Ok(clip01(g, abs))
}

fn squeeze_to_matrix(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    let shape = g.shape(x).to_vec();
    match shape.len() {
        2 => Ok(x),
        3 if shape[0] == 1 => g.reshape(x, &[shape[1], shape[2]]),
        _ => Err(Error::shape(
            "e2stoi_loss",
            format!("expected [F, T] or [1, F, T], got {shape:?}"),
        )),
    }
}

/// Plain-value twin of the denormalize/magnitude/clip head, for computing
/// masks outside a graph (sample slicing, rejection tests).
pub fn clipped_magnitudes(norm_lps: &Tensor, stats: &NormStats) -> Tensor {
    let (f, m) = (norm_lps.shape()[0], norm_lps.shape()[1]);
    let mut out = Tensor::zeros(&[f, m]);
    for k in 0..f {
        for t in 0..m {
            let lps = norm_lps.at2(k, t) * stats.std[k] + stats.mean[k];
            out.set2(k, t, crate::math::exp(lps / 2.0).min(1.0));
        }
    }
    out
}

/// Convenience evaluation on plain tensors (fresh graph, values only).
pub fn e2stoi_loss_value(
    enh_norm: &Tensor,
    clean_norm: &Tensor,
    stats: &NormStats,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let enh = g.leaf(enh_norm.clone());
    let clean = g.constant(clean_norm.clone());
    let nodes = e2stoi_loss(&mut g, enh, clean, stats, cfg)?;
    Ok(LossBreakdown::from_nodes(&g, &nodes, cfg.lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;

    fn unit_stats() -> NormStats {
        NormStats {
            mean: alloc::vec![0.0; dsp::F_BINS],
            std: alloc::vec![1.0; dsp::F_BINS],
            n_frames: 1,
        }
    }

    /// Normalized LPS whose implied magnitudes have `active` frames with
    /// energy and the rest essentially silent.
    fn sample_with_active_frames(total: usize, active: usize, seed: u64) -> Tensor {
        let mut rng = SeedStream::new(seed);
        // exp(x/2) = 1e-6 -> x ~ -27.6: far below the bin floor
        let mut t = Tensor::full(&[dsp::F_BINS, total], -27.6);
        for m in 0..active {
            for k in 0..dsp::F_BINS {
                // magnitudes around 0.01..0.6, mostly above the 1e-3 floor
                let mag = rng.uniform(0.01, 0.6);
                t.set2(k, m, 2.0 * crate::math::ln(mag));
            }
        }
        t
    }

    #[test]
    fn clip_and_mask_basics() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(&[3], alloc::vec![0.5, 3.0, 0.0]).unwrap());
        let c = clip01(&mut g, x);
        assert_eq!(g.value(c).data(), &[0.5, 1.0, 0.0]);
        let s = g.sum_all(c);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 0.0, 0.0]);

        // all-zero frame excluded; single active bin included
        let mut m = Tensor::zeros(&[dsp::F_BINS, 2]);
        m.set2(10, 1, 0.5);
        let mask = silence_mask(&m, 0.01, 1e-3);
        assert_eq!(mask.kept, alloc::vec![1]);
    }

    #[test]
    fn mask_matches_brute_force_count() {
        let t = sample_with_active_frames(40, 17, 7);
        let mut g = Graph::new();
        let x = g.constant(t.clone());
        let clipped = abs_clip_path(&mut g, x, &unit_stats()).unwrap();
        let mask = silence_mask(g.value(clipped), 0.01, 1e-3);

        // oracle: direct per-frame count over the same clipped values
        let v = g.value(clipped);
        let mut expected = Vec::new();
        for m in 0..40 {
            let c = (0..dsp::F_BINS).filter(|&k| v.at2(k, m) > 1e-3).count();
            if c as f64 > 0.01 {
                expected.push(m);
            }
        }
        assert_eq!(mask.kept, expected);
        assert_eq!(mask.len(), 17);
    }

    #[test]
    fn masked_octave_full_mask_equals_octave_bands() {
        let mut rng = SeedStream::new(11);
        let abs = Tensor::rand_uniform(&[dsp::F_BINS, 5], 0.0, 0.9, &mut rng);
        let edges = dsp::one_third_octave_bands();
        let mut g = Graph::new();
        let x = g.constant(abs.clone());
        let full = FrameMask { kept: (0..5).collect() };
        let bands = masked_octave(&mut g, x, &full, &edges).unwrap();
        let reference = dsp::octave_bands(&abs).unwrap();
        for (a, b) in g.value(bands).data().iter().zip(reference.values.data()) {
            // BAND_EPS inside the sqrt perturbs at the 1e-12 scale
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }

        // single-frame mask keeps one column
        let one = FrameMask { kept: alloc::vec![0] };
        let b1 = masked_octave(&mut g, x, &one, &edges).unwrap();
        assert_eq!(g.shape(b1), &[dsp::N_BANDS, 1]);
    }

    #[test]
    fn masked_normalize_matches_reference_rowcol() {
        let mut rng = SeedStream::new(13);
        let bands = Tensor::rand_uniform(&[6, 9], 0.1, 2.0, &mut rng);
        let mut g = Graph::new();
        let x = g.constant(bands.clone());
        let n = masked_normalize(&mut g, x).unwrap();
        let reference =
            crate::metrics::row_col_normalize(&bands, crate::metrics::Guard::Strict).unwrap();
        for (a, b) in g.value(n).data().iter().zip(reference.data()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }

        // scale invariance
        let xs = g.constant(bands.map(|v| v * 10.0));
        let ns = masked_normalize(&mut g, xs).unwrap();
        for (a, b) in g.value(ns).data().iter().zip(g.value(n).data()) {
            assert!((a - b).abs() < 1e-9);
        }

        // L < 2 is an error
        let thin = g.constant(Tensor::zeros(&[6, 1]));
        assert!(masked_normalize(&mut g, thin).is_err());
    }

    #[test]
    fn d_matches_dense_trace_oracle() {
        let mut rng = SeedStream::new(17);
        let a = Tensor::rand_uniform(&[5, 7], 0.1, 2.0, &mut rng);
        let b = Tensor::rand_uniform(&[5, 7], 0.1, 2.0, &mut rng);
        let mut g = Graph::new();
        let an = {
            let n = g.constant(a.clone());
            masked_normalize(&mut g, n).unwrap()
        };
        let bn = {
            let n = g.constant(b.clone());
            masked_normalize(&mut g, n).unwrap()
        };
        let d = d_e2stoi(&mut g, an, bn).unwrap();

        // oracle: trace(A^T B)/L via an explicit dense product
        let (av, bv) = (g.value(an).clone(), g.value(bn).clone());
        let (j, l) = (5, 7);
        let mut trace = 0.0;
        for c in 0..l {
            for r in 0..j {
                trace += av.at2(r, c) * bv.at2(r, c);
            }
        }
        assert!((g.value(d).item() - trace / l as f64).abs() < 1e-12);

        // identical inputs give 1; negated give -1
        let d_same = d_e2stoi(&mut g, an, an).unwrap();
        assert!((g.value(d_same).item() - 1.0).abs() < 1e-9);
        let neg = g.neg(bn);
        let d_neg = d_e2stoi(&mut g, bn, neg).unwrap();
        assert!((g.value(d_neg).item() + 1.0).abs() < 1e-9);
    }

    #[test]
    fn perfect_enhancement_scores_minus_one() {
        let clean = sample_with_active_frames(40, 25, 23);
        let out = e2stoi_loss_value(&clean, &clean, &unit_stats(), &LossConfig::default()).unwrap();
        assert!((out.total + 1.0).abs() < 1e-9, "total {}", out.total);
        assert_eq!(out.mse, 0.0);
        assert!((out.d_e2stoi - 1.0).abs() < 1e-9);
        assert!((out.lambda - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejection_boundary_at_min_active() {
        let cfg = LossConfig::default();
        let nine = sample_with_active_frames(40, 9, 31);
        let err = e2stoi_loss_value(&nine, &nine, &unit_stats(), &cfg);
        assert!(
            matches!(err, Err(Error::SampleRejected { kept: 9, min_active: 10 })),
            "{err:?}"
        );
        let ten = sample_with_active_frames(40, 10, 31);
        assert!(e2stoi_loss_value(&ten, &ten, &unit_stats(), &cfg).is_ok());
    }

    #[test]
    fn silent_frames_get_no_correlation_gradient() {
        // gradient w.r.t. the enhanced input on masked-out frames comes only
        // from the MSE term: with lambda = 0 it must be exactly zero there.
        let clean = sample_with_active_frames(20, 12, 41);
        let mut rng = SeedStream::new(42);
        let enh = Tensor::rand_uniform(&[dsp::F_BINS, 20], -1.0, 1.0, &mut rng);
        let cfg = LossConfig {
            lambda: 0.0,
            ..LossConfig::default()
        };
        let mut g = Graph::new();
        let e = g.leaf(enh);
        let c = g.constant(clean.clone());
        let nodes = e2stoi_loss(&mut g, e, c, &unit_stats(), &cfg).unwrap();
        let grads = g.backward(nodes.total).unwrap();
        let ge = grads.get(e).unwrap();

        let mask = {
            let mut g2 = Graph::new();
            let cc = g2.constant(clean);
            let clip = abs_clip_path(&mut g2, cc, &unit_stats()).unwrap();
            silence_mask(g2.value(clip), cfg.theta, cfg.bin_floor)
        };
        for m in 0..20 {
            if !mask.kept.contains(&m) {
                for k in 0..dsp::F_BINS {
                    assert_eq!(ge.at2(k, m), 0.0, "silent frame {m} bin {k} leaked gradient");
                }
            }
        }
    }

    #[test]
    fn d_term_scale_invariant_without_clipping() {
        // scaling the enhanced LPS by adding a constant in log domain scales
        // the magnitudes; while nothing clips, d is unchanged and MSE moves.
        let clean = sample_with_active_frames(30, 18, 51);
        let enh = clean.map(|v| v * 0.98 - 0.3);
        let stats = unit_stats();
        let cfg = LossConfig::default();
        let base = e2stoi_loss_value(&enh, &clean, &stats, &cfg).unwrap();
        // add ln(0.25) to the LPS = scale magnitudes by 0.5 (still < 1)
        let scaled = enh.map(|v| v + 2.0 * crate::math::ln(0.5));
        let moved = e2stoi_loss_value(&scaled, &clean, &stats, &cfg).unwrap();
        assert!((base.d_e2stoi - moved.d_e2stoi).abs() < 1e-9, "d must ignore rescaling");
        assert!((base.mse - moved.mse).abs() > 1e-3, "mse must notice rescaling");
    }
}
