//! Binary file formats: feature caches ("GSE1"), normalization stats
//! ("GSEN") and checkpoints ("GSEC"). All integers and floats are
//! little-endian; matrices are frequency-major (all frames of bin 0, then
//! bin 1, ...).

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use gse_core::autodiff::RunningStats;
use gse_core::data::NormStats;
use gse_core::dsp::{LpsMatrix, F_BINS};
use gse_core::model::{ArchitectureConfig, FreqPadding, Gating, ModelParams};
use gse_core::tensor::Tensor;
use gse_core::train::AdamState;

const FEATURE_MAGIC: &[u8; 4] = b"GSE1";
const STATS_MAGIC: &[u8; 4] = b"GSEN";
const CHECKPOINT_MAGIC: &[u8; 4] = b"GSEC";
const CHECKPOINT_VERSION: u32 = 1;

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Cursor<'a> {
    fn new(data: &'a [u8], what: &'static str) -> Self {
        Cursor { data, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            bail!("truncated {} file", self.what);
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(8 * n)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        Ok(String::from_utf8(self.take(len)?.to_vec())?)
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.data.len() {
            bail!("{} file has {} trailing bytes", self.what, self.data.len() - self.pos);
        }
        Ok(())
    }
}

fn push_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn push_string(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

// ---- feature cache ----

pub fn write_features(path: &Path, lps: &LpsMatrix) -> Result<()> {
    let mut out = Vec::with_capacity(12 + 8 * lps.values.numel());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(lps.f_bins() as u32).to_le_bytes());
    out.extend_from_slice(&(lps.frames() as u32).to_le_bytes());
    push_f64s(&mut out, lps.values.data());
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn read_features(path: &Path) -> Result<LpsMatrix> {
    let data = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mut c = Cursor::new(&data, "feature");
    if c.take(4)? != FEATURE_MAGIC {
        bail!("{} is not a feature cache (bad magic)", path.display());
    }
    let f = c.u32()? as usize;
    let m = c.u32()? as usize;
    let values = c.f64_vec(f * m)?;
    c.done()?;
    Ok(LpsMatrix {
        values: Tensor::new(&[f, m], values)?,
    })
}

// ---- normalization stats ----

pub fn write_stats(path: &Path, stats: &NormStats) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(STATS_MAGIC);
    out.extend_from_slice(&(stats.mean.len() as u32).to_le_bytes());
    out.extend_from_slice(&stats.n_frames.to_le_bytes());
    push_f64s(&mut out, &stats.mean);
    push_f64s(&mut out, &stats.std);
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn read_stats(path: &Path) -> Result<NormStats> {
    let data = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mut c = Cursor::new(&data, "stats");
    if c.take(4)? != STATS_MAGIC {
        bail!("{} is not a stats file (bad magic)", path.display());
    }
    let bins = c.u32()? as usize;
    if bins != F_BINS {
        bail!("stats file covers {bins} bins, expected {F_BINS}");
    }
    let n_frames = c.u64()?;
    let mean = c.f64_vec(bins)?;
    let std = c.f64_vec(bins)?;
    c.done()?;
    Ok(NormStats {
        mean,
        std,
        n_frames,
    })
}

// ---- checkpoints ----

/// Everything needed to resume or run a model: architecture, parameter
/// blobs (by name, with shapes), batch-norm running stats, and optionally
/// the optimizer state and epoch counter.
pub struct Checkpoint {
    pub params: ModelParams,
    pub adam: Option<AdamState>,
    pub epoch: u32,
}

fn gating_code(g: Gating) -> u32 {
    match g {
        Gating::None => 0,
        Gating::FreqWise => 1,
        Gating::Local => 2,
        Gating::Temporal => 3,
    }
}

fn gating_from(code: u32) -> Result<Gating> {
    Ok(match code {
        0 => Gating::None,
        1 => Gating::FreqWise,
        2 => Gating::Local,
        3 => Gating::Temporal,
        other => bail!("corrupt checkpoint: unknown gating code {other}"),
    })
}

fn push_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    push_string(out, name);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    push_f64s(out, t.data());
}

fn read_tensor(c: &mut Cursor) -> Result<(String, Tensor)> {
    let name = c.string()?;
    let rank = c.u32()? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(c.u32()? as usize);
    }
    let numel: usize = shape.iter().product();
    let data = c.f64_vec(numel)?;
    Ok((name, Tensor::new(&shape, data)?))
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let p = &ckpt.params;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(p.config.rho as u32).to_le_bytes());
    out.extend_from_slice(&gating_code(p.config.gating).to_le_bytes());
    out.extend_from_slice(&(p.config.temporal_hidden as u32).to_le_bytes());
    out.extend_from_slice(&(p.config.temporal_sigmoid as u32).to_le_bytes());
    let pad = match p.config.freq_padding {
        FreqPadding::Valid => 0u32,
        FreqPadding::Same => 1,
    };
    out.extend_from_slice(&pad.to_le_bytes());
    out.extend_from_slice(&ckpt.epoch.to_le_bytes());

    let named = gse_core::model::named_tensors(p);
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in &named {
        push_tensor(&mut out, name, t);
    }

    out.extend_from_slice(&(p.running.len() as u32).to_le_bytes());
    for (i, r) in p.running.iter().enumerate() {
        push_tensor(&mut out, &format!("bn{i}.mean"), &Tensor::new(&[r.mean.len()], r.mean.clone())?);
        push_tensor(&mut out, &format!("bn{i}.var"), &Tensor::new(&[r.var.len()], r.var.clone())?);
    }

    match &ckpt.adam {
        None => out.extend_from_slice(&0u32.to_le_bytes()),
        Some(state) => {
            out.extend_from_slice(&1u32.to_le_bytes());
            out.extend_from_slice(&state.step.to_le_bytes());
            for (i, (m, v)) in state.m.iter().zip(&state.v).enumerate() {
                push_tensor(&mut out, &format!("m{i}"), m);
                push_tensor(&mut out, &format!("v{i}"), v);
            }
        }
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let data = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mut c = Cursor::new(&data, "checkpoint");
    if c.take(4)? != CHECKPOINT_MAGIC {
        bail!("{} is not a checkpoint (bad magic)", path.display());
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        bail!("checkpoint version {version} unsupported");
    }
    let rho = c.u32()? as usize;
    let gating = gating_from(c.u32()?)?;
    let temporal_hidden = c.u32()? as usize;
    let temporal_sigmoid = c.u32()? != 0;
    let freq_padding = match c.u32()? {
        0 => FreqPadding::Valid,
        1 => FreqPadding::Same,
        other => bail!("corrupt checkpoint: unknown padding code {other}"),
    };
    let epoch = c.u32()?;

    let config = ArchitectureConfig {
        rho,
        gating,
        temporal_hidden,
        temporal_sigmoid,
        freq_padding,
    };
    // rebuild the skeleton, then overwrite every named tensor
    let mut params = gse_core::model::build(&config, 0);

    let n_named = c.u32()? as usize;
    let expected = gse_core::model::named_tensors(&params).len();
    if n_named != expected {
        bail!("checkpoint has {n_named} tensors, architecture wants {expected}");
    }
    for _ in 0..n_named {
        let (name, tensor) = read_tensor(&mut c)?;
        let mut slots = gse_core::model::named_tensors_mut(&mut params);
        let slot = slots
            .iter_mut()
            .find(|(n, _)| *n == name)
            .with_context(|| format!("checkpoint tensor {name} not in architecture"))?;
        if slot.1.shape() != tensor.shape() {
            bail!(
                "checkpoint tensor {name} has shape {:?}, architecture wants {:?}",
                tensor.shape(),
                slot.1.shape()
            );
        }
        *slot.1 = tensor;
    }

    let n_running = c.u32()? as usize;
    if n_running != params.running.len() {
        bail!("checkpoint has {n_running} running-stat entries, architecture wants {}", params.running.len());
    }
    for i in 0..n_running {
        let (_, mean) = read_tensor(&mut c)?;
        let (_, var) = read_tensor(&mut c)?;
        params.running[i] = RunningStats {
            mean: mean.into_data(),
            var: var.into_data(),
        };
    }

    let adam = match c.u32()? {
        0 => None,
        1 => {
            let step = c.u64()?;
            let mut m = Vec::with_capacity(n_named);
            let mut v = Vec::with_capacity(n_named);
            for _ in 0..n_named {
                m.push(read_tensor(&mut c)?.1);
                v.push(read_tensor(&mut c)?.1);
            }
            Some(AdamState { step, m, v })
        }
        other => bail!("corrupt checkpoint: unknown optimizer flag {other}"),
    };
    c.done()?;
    Ok(Checkpoint {
        params,
        adam,
        epoch,
    })
}
